//! Per-event-order-class machinery: smooth class cutoffs, the per-component
//! divergence weights for v(t) and x(t), their iterated versions, and
//! class-restricted density estimation.

use crate::calculus::{flow_derivative, z_weight, Direction, PathData};
use crate::config::ModelConfig;
use crate::error::CalculusError;
use crate::kernels::Kernels;
use crate::linalg::basis;
use crate::reduced::{class_coordinates, EventOrderClass, ReducedTrajectory};
use crate::simulator::{EventId, Trajectory};
use crate::smooth::PlateauBump;
use std::collections::BTreeMap;

/// Smooth compactly supported cutoff inside one class region.
///
/// Two layers: a box of one-dimensional plateau bumps over the class
/// coordinates (built from empirical in-class ranges), and an order-margin
/// factor - a smooth product of steps in the event-order margins (realized
/// gaps, horizon gaps, the would-be next event after the horizon, and pair
/// closest-approach margins) that vanishes on every face of the class
/// boundary. The margin factor is what makes the cutoff genuinely compactly
/// supported inside the open class region, so the per-class integration by
/// parts has no boundary flux.
#[derive(Debug, Clone)]
pub struct ClassCutoff {
    pub class: EventOrderClass,
    pub bumps: Vec<PlateauBump>,
    /// normalized margin below which the cutoff rolls off to zero
    pub margin_width: f64,
}

impl ClassCutoff {
    /// Plateau covers the central `plateau_frac` of each observed coordinate
    /// range, widened slightly so realized values sit strictly inside.
    pub fn from_ensemble<const D: usize>(
        class: &EventOrderClass,
        members: &[&ReducedTrajectory<D>],
        plateau_frac: f64,
    ) -> Result<Self, CalculusError> {
        if members.is_empty() {
            return Err(CalculusError::InsufficientPaths {
                key: class.key(),
                got: 0,
                need: 1,
            });
        }
        let dim = class_coordinates(members[0], class).len();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for rt in members {
            let flat = class_coordinates(rt, class);
            for (k, &x) in flat.iter().enumerate() {
                lo[k] = lo[k].min(x);
                hi[k] = hi[k].max(x);
            }
        }
        let bumps = lo
            .iter()
            .zip(hi.iter())
            .map(|(&a, &b)| {
                let pad = 0.05 * (b - a).max(1e-6);
                PlateauBump::with_plateau_fraction(a - pad, b + pad, plateau_frac)
            })
            .collect();
        Ok(ClassCutoff {
            class: class.clone(),
            bumps,
            margin_width: 0.03,
        })
    }

    fn box_eval<const D: usize>(&self, rt: &ReducedTrajectory<D>) -> f64 {
        let flat = class_coordinates(rt, &self.class);
        debug_assert_eq!(flat.len(), self.bumps.len());
        flat.iter()
            .zip(self.bumps.iter())
            .map(|(&x, b)| b.eval(x))
            .product()
    }

    pub fn eval<const D: usize>(&self, kernels: &Kernels<D>, path: &PathData<D>) -> f64 {
        let bx = self.box_eval(&path.rt);
        if bx == 0.0 {
            return 0.0;
        }
        bx * margin_factor(kernels, &path.traj, self.margin_width)
    }

    /// Strict interior of the joint plateau: the cutoff equals one on a
    /// neighborhood (box plateaus plus margins strictly above the roll-off).
    pub fn on_plateau<const D: usize>(&self, kernels: &Kernels<D>, path: &PathData<D>) -> bool {
        let flat = class_coordinates(&path.rt, &self.class);
        flat.iter()
            .zip(self.bumps.iter())
            .all(|(&x, b)| b.on_plateau(x))
            && order_margins(kernels, &path.traj)
                .into_iter()
                .all(|m| m > self.margin_width + 0.01)
    }

    /// Directional derivative: analytic through the box factors (each flat
    /// coordinate moves at the rate of the matching direction entry), and by
    /// Richardson flow finite differences through the order-margin factor
    /// (skipped when every margin sits on the factor's plateau, where the
    /// derivative vanishes identically).
    pub fn directional_derivative<const D: usize>(
        &self,
        cfg: &ModelConfig,
        kernels: &Kernels<D>,
        path: &PathData<D>,
        dir: &Direction<D>,
    ) -> Result<f64, CalculusError> {
        let rt = &path.rt;
        let flat = class_coordinates(rt, &self.class);
        let rates = flat_direction::<D>(&self.class, rt.coords.x0.len(), dir);
        let vals: Vec<f64> = flat
            .iter()
            .zip(self.bumps.iter())
            .map(|(&x, b)| b.eval(x))
            .collect();
        let bx: f64 = vals.iter().product();
        let mut dbx = 0.0;
        for k in 0..flat.len() {
            if rates[k] == 0.0 {
                continue;
            }
            let mut term = self.bumps[k].deriv(flat[k]) * rates[k];
            for (j, v) in vals.iter().enumerate() {
                if j != k {
                    term *= v;
                }
            }
            dbx += term;
        }
        let min_margin = order_margins(kernels, &path.traj).into_iter().fold(f64::INFINITY, f64::min);
        if min_margin > self.margin_width + 0.005 {
            // margin factor is identically one in a neighborhood
            return Ok(dbx);
        }
        let mf = margin_factor(kernels, &path.traj, self.margin_width);
        if bx == 0.0 && dbx == 0.0 {
            return Ok(0.0);
        }
        let dmf = flow_derivative(
            cfg,
            kernels,
            rt,
            dir,
            cfg.flow.fd_step,
            cfg.flow.max_shrinks,
            |_, traj_new| Ok(margin_factor(kernels, traj_new, self.margin_width)),
        )?;
        Ok(dbx * mf + bx * dmf)
    }
}

/// Event-order margins of a path, each normalized to O(1):
/// - gaps between consecutive happenings and between the last happening and
///   the horizon (over t_max),
/// - the gap from the horizon to the earliest would-be next event (over
///   t_max),
/// - per pair and per inter-event segment, the closest-approach margin above
///   the interaction distance beta (over beta), for pairs separated on the
///   segment.
pub fn order_margins<const D: usize>(kernels: &Kernels<D>, traj: &Trajectory<D>) -> Vec<f64> {
    let t_max = traj.t_max;
    let mut out = Vec::new();
    let times: Vec<f64> = traj.events.iter().map(|e| e.t).collect();
    for w in times.windows(2) {
        if w[1] > w[0] {
            out.push((w[1] - w[0]) / t_max);
        }
    }
    if let Some(&last) = times.last() {
        out.push((t_max - last) / t_max);
    }
    out.push(next_event_gap(kernels, traj) / t_max);
    // pair closest-approach margins per segment; segments bounded by one of
    // the pair's own channel events touch beta there by construction (the
    // realized crossing), so they carry no face of their own
    let n = traj.n_particles();
    let mut seg_bounds = vec![0.0];
    seg_bounds.extend(times.iter().copied());
    seg_bounds.push(t_max);
    seg_bounds.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let beta = kernels.beta;
    let pair_event_at = |time: f64, i: usize, j: usize| -> bool {
        traj.events.iter().any(|e| {
            (e.t - time).abs() < 1e-15
                && match &e.kind {
                    crate::simulator::EventKind::WindowOpen { i: a, j: b, .. }
                    | crate::simulator::EventKind::Collision { i: a, j: b, .. }
                    | crate::simulator::EventKind::WindowCancel { i: a, j: b, .. }
                    | crate::simulator::EventKind::Passthrough { i: a, j: b } => {
                        *a == i && *b == j
                    }
                    _ => false,
                }
        })
    };
    for i in 0..n {
        for j in (i + 1)..n {
            for w in seg_bounds.windows(2) {
                let (ta, tb) = (w[0], w[1]);
                if tb - ta < 1e-13 {
                    continue;
                }
                if pair_event_at(ta, i, j) || pair_event_at(tb, i, j) {
                    continue;
                }
                let xa = crate::linalg::sub(&traj.position_at(i, ta), &traj.position_at(j, ta));
                let va = crate::linalg::sub(
                    &traj.velocity_at(i, (ta + tb) / 2.0),
                    &traj.velocity_at(j, (ta + tb) / 2.0),
                );
                let da = crate::linalg::norm(&xa);
                if da <= beta {
                    continue; // overlapping segment: exits are realized events
                }
                // min distance of xa + u va over u in [0, tb - ta]
                let vv = crate::linalg::dot(&va, &va);
                let u_star = if vv > 0.0 {
                    (-crate::linalg::dot(&xa, &va) / vv).clamp(0.0, tb - ta)
                } else {
                    0.0
                };
                let dmin = crate::linalg::norm(&crate::linalg::axpy(&xa, u_star, &va));
                out.push((dmin - beta) / beta);
            }
        }
    }
    out
}

/// Time from the horizon to the earliest would-be event after it.
pub fn next_event_gap<const D: usize>(kernels: &Kernels<D>, traj: &Trajectory<D>) -> f64 {
    let t = traj.t_max;
    let n = traj.n_particles();
    let x: Vec<_> = (0..n).map(|i| traj.position_at(i, t)).collect();
    let v: Vec<_> = (0..n).map(|i| traj.velocity_at(i, t)).collect();
    let mut gap = f64::INFINITY;
    for i in 0..n {
        if let Some(dt) = crate::geometry::boundary_hit_time(&x[i], &v[i], kernels.domain.radius)
        {
            gap = gap.min(dt);
        }
    }
    // pending sigmas scheduled beyond the horizon
    for ev in &traj.events {
        if let crate::simulator::EventKind::WindowOpen { i, j, k, sigma, .. } = &ev.kind {
            if *sigma > t {
                // still pending unless the window was canceled or fired
                let resolved = traj.events.iter().any(|e2| match &e2.kind {
                    crate::simulator::EventKind::Collision { i: a, j: b, k: kk, .. }
                    | crate::simulator::EventKind::WindowCancel { i: a, j: b, k: kk } => {
                        a == i && b == j && kk == k
                    }
                    _ => false,
                });
                if !resolved {
                    gap = gap.min(sigma - t);
                }
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = crate::linalg::sub(&x[i], &x[j]);
            let dv = crate::linalg::sub(&v[i], &v[j]);
            let dist = crate::linalg::norm(&dx);
            if dist > kernels.beta {
                if let Some((s, _)) = crate::geometry::pair_overlap_window(&dx, &dv, kernels.beta)
                {
                    gap = gap.min(s);
                }
            } else if let Some(dt) =
                crate::geometry::pair_separation_time(&dx, &dv, kernels.beta)
            {
                gap = gap.min(dt);
            }
        }
    }
    gap
}

/// The smooth order-margin factor: 1 when every margin clears `width`,
/// rolling off to 0 as any margin approaches the class boundary.
pub fn margin_factor<const D: usize>(
    kernels: &Kernels<D>,
    traj: &Trajectory<D>,
    width: f64,
) -> f64 {
    let step = crate::smooth::SmoothStep::new(0.0, width);
    order_margins(kernels, traj)
        .into_iter()
        .map(|m| step.eval(m))
        .product()
}

/// The flat coordinate-rate vector of a direction in a class's layout
/// (mirrors `class_coordinates`).
pub fn flat_direction<const D: usize>(
    class: &EventOrderClass,
    n_particles: usize,
    dir: &Direction<D>,
) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..n_particles {
        let a = dir.a0_x.get(i).copied().unwrap_or([0.0; D]);
        out.extend_from_slice(&a);
    }
    for i in 0..n_particles {
        let a = dir.a0_v.get(i).copied().unwrap_or([0.0; D]);
        out.extend_from_slice(&a);
    }
    for id in &class.ids {
        match id {
            EventId::Window(i, j, k) => {
                out.push(dir.c.get(&(*i, *j, *k)).copied().unwrap_or(0.0));
            }
            EventId::Collision(i, j, k) => {
                let a = dir.alpha_c.get(&(*i, *j, *k)).copied().unwrap_or([0.0; D]);
                out.extend_from_slice(&a);
            }
            EventId::Reflection(i, l) => {
                let a = dir.alpha_r.get(&(*i, *l)).copied().unwrap_or([0.0; D]);
                out.extend_from_slice(&a);
            }
            _ => {}
        }
    }
    out
}

/// The perturbable slot for component (i, r): the last event before t that
/// set particle i's velocity. A collision where i is the higher index uses
/// the slot of the pair with the sign flipped, so the component rate is +1
/// either way. With no event, the initial-velocity slot serves as fallback.
pub struct ComponentDirection<const D: usize> {
    pub dir: Direction<D>,
    /// time of the perturbed slot's event (0 for the initial slot)
    pub slot_time: f64,
    /// particle whose matching component moves at rate -1, when it has no
    /// later re-pinning event (collision coupling)
    pub partner: Option<usize>,
    pub from_initial_slot: bool,
}

pub fn last_event_direction<const D: usize>(
    rt: &ReducedTrajectory<D>,
    class: &EventOrderClass,
    i: usize,
    r: usize,
) -> Result<ComponentDirection<D>, CalculusError> {
    let time_of = |target: &EventId| -> f64 {
        rt.order
            .iter()
            .find(|(id, _)| id == target)
            .map(|(_, t)| *t)
            .unwrap_or(0.0)
    };
    let mut has_later_event = std::collections::BTreeSet::new();
    for id in class.ids.iter().rev() {
        match id {
            EventId::Reflection(p, l) => {
                if *p == i {
                    let mut dir = Direction::zero();
                    dir.alpha_r.insert((*p, *l), basis::<D>(r));
                    return Ok(ComponentDirection {
                        dir,
                        slot_time: time_of(id),
                        partner: None,
                        from_initial_slot: false,
                    });
                }
                has_later_event.insert(*p);
            }
            EventId::Collision(a, b, k) => {
                if *a == i || *b == i {
                    let sign = if *a == i { 1.0 } else { -1.0 };
                    let other = if *a == i { *b } else { *a };
                    let mut dir = Direction::zero();
                    dir.alpha_c
                        .insert((*a, *b, *k), crate::linalg::scale(&basis::<D>(r), sign));
                    let partner = if has_later_event.contains(&other) {
                        None
                    } else {
                        Some(other)
                    };
                    return Ok(ComponentDirection {
                        dir,
                        slot_time: time_of(id),
                        partner,
                        from_initial_slot: false,
                    });
                }
                has_later_event.insert(*a);
                has_later_event.insert(*b);
            }
            _ => {}
        }
    }
    // no event set v_i before t: fall back to the initial-velocity slot
    let n = rt.coords.x0.len();
    let mut dir = Direction::with_initial(n);
    dir.a0_v[i] = basis::<D>(r);
    Ok(ComponentDirection {
        dir,
        slot_time: 0.0,
        partner: None,
        from_initial_slot: true,
    })
}

/// The divergence weight H_{(i,r)}(v(t), G) = delta(G grad v_{(i,r)}(t)),
/// evaluated pathwise as -(d_h G + z^h G) with h the component direction.
pub fn h_v<const D: usize>(
    cfg: &ModelConfig,
    kernels: &Kernels<D>,
    path: &PathData<D>,
    cutoff: &ClassCutoff,
    i: usize,
    r: usize,
) -> Result<f64, CalculusError> {
    let comp = last_event_direction(&path.rt, &cutoff.class, i, r)?;
    let g = cutoff.eval(kernels, path);
    let dg = cutoff.directional_derivative(cfg, kernels, path, &comp.dir)?;
    if g == 0.0 && dg == 0.0 {
        return Ok(0.0);
    }
    let z = z_weight(kernels, path, &comp.dir)?;
    Ok(-(dg + z * g))
}

/// H_{(i,r)}(x(t), G): the position-target weight, scaled by 1/(t - rho)
/// with rho the time of the perturbed slot; the flow derivative of rho
/// enters through the quotient rule and is measured by finite differences.
#[allow(clippy::too_many_arguments)]
pub fn h_x<const D: usize>(
    cfg: &ModelConfig,
    kernels: &Kernels<D>,
    path: &PathData<D>,
    cutoff: &ClassCutoff,
    i: usize,
    r: usize,
    t: f64,
    time_margin: f64,
) -> Result<f64, CalculusError> {
    let comp = last_event_direction(&path.rt, &cutoff.class, i, r)?;
    let gap = t - comp.slot_time;
    if gap < time_margin {
        return Err(CalculusError::HorizonTooClose { gap });
    }
    let g = cutoff.eval(kernels, path);
    let dg = cutoff.directional_derivative(cfg, kernels, path, &comp.dir)?;
    if g == 0.0 && dg == 0.0 {
        return Ok(0.0);
    }
    let z = z_weight(kernels, path, &comp.dir)?;
    // d/ds of the slot time along the flow; identically zero for single-slot
    // directions (a slot's own coordinate never moves its event time), but
    // measured here rather than assumed
    let d_rho = if comp.from_initial_slot {
        0.0
    } else {
        let slot_id = slot_identity(&comp.dir);
        flow_derivative(
            cfg,
            kernels,
            &path.rt,
            &comp.dir,
            cfg.flow.fd_step,
            cfg.flow.max_shrinks,
            |rt_new, _| {
                rt_new
                    .order
                    .iter()
                    .find(|(id, _)| *id == slot_id)
                    .map(|(_, time)| *time)
                    .ok_or(CalculusError::OrderChanged)
            },
        )?
    };
    // d_h [G / (t - rho)] = dG/(t - rho) + G d_rho/(t - rho)^2
    Ok(-(dg / gap + g * d_rho / (gap * gap) + z * g / gap))
}

fn slot_identity<const D: usize>(dir: &Direction<D>) -> EventId {
    if let Some(slot) = dir.alpha_c.keys().next() {
        EventId::Collision(slot.0, slot.1, slot.2)
    } else if let Some(slot) = dir.alpha_r.keys().next() {
        EventId::Reflection(slot.0, slot.1)
    } else {
        unreachable!("component direction has a slot")
    }
}

/// Iterated weight H_alpha for v(t): the previous level's weight becomes the
/// wrapped factor of the next application. Derivatives of computed weights
/// use Richardson flow finite differences.
pub fn h_alpha<const D: usize>(
    cfg: &ModelConfig,
    kernels: &Kernels<D>,
    path: &PathData<D>,
    cutoff: &ClassCutoff,
    comps: &[(usize, usize)],
    max_depth: usize,
) -> Result<f64, CalculusError> {
    if comps.len() > max_depth {
        return Err(CalculusError::DepthExceeded { depth: comps.len() });
    }
    match comps {
        [] => Ok(cutoff.eval(kernels, path)),
        [(i, r)] => h_v(cfg, kernels, path, cutoff, *i, *r),
        [(i, r), rest @ ..] => {
            let w = h_alpha(cfg, kernels, path, cutoff, rest, max_depth)?;
            let g = cutoff.eval(kernels, path);
            if g == 0.0 && w == 0.0 {
                // off the cutoff support every level vanishes on a neighborhood
                return Ok(0.0);
            }
            let comp = last_event_direction(&path.rt, &cutoff.class, *i, *r)?;
            let z = z_weight(kernels, path, &comp.dir)?;
            let dw = flow_derivative(
                cfg,
                kernels,
                &path.rt,
                &comp.dir,
                cfg.flow.fd_step,
                cfg.flow.max_shrinks,
                |_, traj_new| {
                    let pd = PathData::new(traj_new.clone(), kernels.domain.radius)?;
                    h_alpha(cfg, kernels, &pd, cutoff, rest, max_depth)
                },
            )?;
            Ok(-(dw + z * w))
        }
    }
}

/// Class histogram over an ensemble of reduced trajectories.
pub fn class_histogram<const D: usize>(
    rts: &[Option<ReducedTrajectory<D>>],
    t: f64,
    tie_tol: f64,
) -> BTreeMap<String, usize> {
    let mut hist = BTreeMap::new();
    for rt in rts.iter().flatten() {
        if let Ok(class) = crate::reduced::classify(rt, t, tie_tol) {
            *hist.entry(class.key()).or_insert(0) += 1;
        }
    }
    hist
}

/// One row of a class-restricted density table for a single component.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DensityRow {
    pub grid: f64,
    pub kde: f64,
    pub kde_stderr: f64,
    pub ibp_derivative: f64,
    pub ibp_stderr: f64,
}

/// Cutoff-weighted density table of one component of v(t) or x(t) on a
/// class: Gaussian KDE with Silverman bandwidth, plus the IBP-smoothed
/// derivative estimate from a family of shifted normalized bumps.
#[allow(clippy::too_many_arguments)]
pub fn class_density_table<const D: usize>(
    cfg: &ModelConfig,
    kernels: &Kernels<D>,
    members: &[&PathData<D>],
    cutoff: &ClassCutoff,
    target_x: bool,
    i: usize,
    r: usize,
    grid: &[f64],
    n_min: usize,
) -> Result<Vec<DensityRow>, CalculusError> {
    let t = cfg.simulation.t_max;
    if members.len() < n_min {
        return Err(CalculusError::InsufficientPaths {
            key: cutoff.class.key(),
            got: members.len(),
            need: n_min,
        });
    }
    let mut ys = Vec::with_capacity(members.len());
    let mut weights = Vec::with_capacity(members.len());
    let mut h_weights = Vec::with_capacity(members.len());
    for p in members {
        let y = if target_x {
            p.traj.position_at(i, t)[r]
        } else {
            p.traj.velocity_at(i, t)[r]
        };
        ys.push(vec![y]);
        weights.push(cutoff.eval(kernels, p));
        let h = if target_x {
            h_x(cfg, kernels, p, cutoff, i, r, t, 1e-3)?
        } else {
            h_v(cfg, kernels, p, cutoff, i, r)?
        };
        h_weights.push(h);
    }
    let kde = crate::stats::Kde::with_weights(ys.clone(), weights.clone());
    let bw = kde.bandwidth[0];
    let mut rows = Vec::with_capacity(grid.len());
    for &y0 in grid {
        let (kde_val, kde_err) = kde.eval_with_err(&[y0]);
        // IBP derivative: E[phi_y'(Y) G] = E[phi_y(Y) H]  =>
        // d/dy p_G(y) ~ -E[phi_y(Y) H] / mass(phi_y)
        let bump = crate::smooth::Bump::new(y0 - 2.0 * bw, y0 + 2.0 * bw);
        let mass = bump.integral(48);
        let samples: Vec<f64> = members
            .iter()
            .enumerate()
            .map(|(idx, _)| -bump.eval(ys[idx][0]) * h_weights[idx] / mass)
            .collect();
        let est = crate::stats::estimate(&samples);
        rows.push(DensityRow {
            grid: y0,
            kde: kde_val,
            kde_stderr: kde_err,
            ibp_derivative: est.mean,
            ibp_stderr: est.std_err,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::reduced::classify;
    use crate::simulator::simulate_path;

    fn collect_paths(cfg: &ModelConfig, k: &Kernels<2>, n: usize, seed: u64) -> Vec<PathData<2>> {
        let mut out = Vec::new();
        for p in 0..n as u64 {
            let mut rng = crate::rng::path_rng(seed, p);
            if let Ok(traj) = simulate_path(cfg, k, &mut rng) {
                if let Ok(pd) = PathData::new(traj, k.domain.radius) {
                    out.push(pd);
                }
            }
        }
        out
    }

    #[test]
    fn cutoff_is_one_on_plateau_and_in_unit_range() {
        let cfg = ModelConfig::default_desk();
        let k = Kernels::<2>::new(&cfg);
        let paths = collect_paths(&cfg, &k, 400, 210);
        let t = cfg.simulation.t_max;
        let mut hist: BTreeMap<String, usize> = BTreeMap::new();
        for p in &paths {
            if let Ok(c) = classify(&p.rt, t, 1e-12) {
                *hist.entry(c.key()).or_insert(0) += 1;
            }
        }
        let (top_key, _) = hist.iter().max_by_key(|(_, c)| **c).unwrap();
        let class = EventOrderClass::parse(top_key).unwrap();
        let members: Vec<&ReducedTrajectory<2>> = paths
            .iter()
            .filter(|p| classify(&p.rt, t, 1e-12).map(|c| c == class).unwrap_or(false))
            .map(|p| &p.rt)
            .collect();
        let member_paths: Vec<&PathData<2>> = paths
            .iter()
            .filter(|p| classify(&p.rt, t, 1e-12).map(|c| c == class).unwrap_or(false))
            .collect();
        let cutoff = ClassCutoff::from_ensemble(&class, &members, 0.85).unwrap();
        let mut on_plateau = 0;
        for p in &member_paths {
            let v = cutoff.eval(&k, p);
            assert!((0.0..=1.0).contains(&v));
            if cutoff.on_plateau(&k, p) {
                assert_eq!(v, 1.0);
                on_plateau += 1;
            }
        }
        assert!(on_plateau > 0, "no member on the joint plateau");
    }

    #[test]
    fn component_direction_prefers_last_event() {
        let cfg = ModelConfig::default_desk();
        let k = Kernels::<2>::new(&cfg);
        let paths = collect_paths(&cfg, &k, 300, 211);
        let t = cfg.simulation.t_max;
        let mut saw_refl = false;
        let mut saw_fallback = false;
        for p in &paths {
            let class = classify(&p.rt, t, 1e-12).unwrap();
            for i in 0..3 {
                let comp = last_event_direction(&p.rt, &class, i, 0).unwrap();
                let has_jump = class.ids.iter().any(|id| match id {
                    EventId::Reflection(a, _) => *a == i,
                    EventId::Collision(a, b, _) => *a == i || *b == i,
                    _ => false,
                });
                assert_eq!(comp.from_initial_slot, !has_jump);
                if comp.from_initial_slot {
                    saw_fallback = true;
                    assert_eq!(comp.slot_time, 0.0);
                } else if !comp.dir.alpha_r.is_empty() {
                    saw_refl = true;
                    assert!(comp.slot_time > 0.0);
                }
            }
        }
        assert!(saw_refl && saw_fallback);
    }

    #[test]
    fn flat_direction_matches_layout() {
        let class = EventOrderClass::parse("W(0,1,1);C(0,1,1);R(2,1)|m=2").unwrap();
        let mut dir = Direction::<2>::zero();
        dir.c.insert((0, 1, 1), 2.5);
        dir.alpha_c.insert((0, 1, 1), [1.0, -1.0]);
        dir.alpha_r.insert((2, 1), [0.5, 0.25]);
        let flat = flat_direction::<2>(&class, 3, &dir);
        assert_eq!(flat.len(), 12 + 1 + 2 + 2);
        assert_eq!(&flat[12..], &[2.5, 1.0, -1.0, 0.5, 0.25]);
    }

    #[test]
    fn pathwise_velocity_derivative_matches_flow() {
        // d/ds v_{(i,r)}(t) along the component direction is +1 on the class
        let cfg = ModelConfig::default_desk();
        let k = Kernels::<2>::new(&cfg);
        let paths = collect_paths(&cfg, &k, 150, 212);
        let t = cfg.simulation.t_max;
        let mut checked = 0;
        for p in &paths {
            let class = classify(&p.rt, t, 1e-12).unwrap();
            if class.m == 0 {
                continue;
            }
            for (i, r) in [(0usize, 0usize), (1, 1), (2, 0)] {
                let comp = last_event_direction(&p.rt, &class, i, r).unwrap();
                let got = flow_derivative(
                    &cfg,
                    &k,
                    &p.rt,
                    &comp.dir,
                    cfg.flow.fd_step,
                    cfg.flow.max_shrinks,
                    |_, traj_new| Ok(traj_new.velocity_at(i, t)[r]),
                );
                if let Ok(d) = got {
                    assert!((d - 1.0).abs() < 1e-6, "rate {d}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 100, "only {checked}");
    }
}
