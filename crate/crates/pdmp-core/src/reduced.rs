//! Reduced trajectories, the reconstruction bijection, and event-order
//! classification.
//!
//! A reduced trajectory keeps exactly the free coordinates of a path: the
//! initial state, the per-window timing controls, the post-collision
//! velocities of the lower-indexed particle, and the post-reflection
//! velocities as sign classes. Reconstruction replays them through the same
//! event engine that produced the original path, with injected rather than
//! sampled outcomes.

use crate::config::ModelConfig;
use crate::error::{CalculusError, PathError};
use crate::kernels::Kernels;
use crate::linalg::{dot, norm, scale, sub, Vector};
use crate::simulator::{
    run_path, CollisionOutcome, EventId, EventKind, OutcomeSource, Trajectory,
};
use std::collections::BTreeMap;

/// (i, j, k): the k-th overlap window of pair i < j.
pub type PairSlot = (usize, usize, usize);
/// (i, l): the l-th reflection of particle i.
pub type ReflSlot = (usize, usize);

/// The free coordinates (y(0); gammas; eta) of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates<const D: usize> {
    pub x0: Vec<Vector<D>>,
    pub v0: Vec<Vector<D>>,
    pub gammas: BTreeMap<PairSlot, f64>,
    /// a_{i,j;k} = v_i(sigma_k(i,j)), stored for the lower index i only.
    pub collision_vs: BTreeMap<PairSlot, Vector<D>>,
    /// One representative of the sign class {b, -b}; the realized inward
    /// velocity is recovered against the boundary normal at replay time.
    pub reflection_vs: BTreeMap<ReflSlot, Vector<D>>,
}

impl<const D: usize> Coordinates<D> {
    /// Flip a stored reflection representative; reconstruction must not care.
    pub fn flip_reflection_representative(&mut self, slot: ReflSlot) {
        if let Some(b) = self.reflection_vs.get_mut(&slot) {
            *b = scale(b, -1.0);
        }
    }
}

/// Reduced trajectory: coordinates plus the realized event order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTrajectory<const D: usize> {
    pub coords: Coordinates<D>,
    /// Every channel happening in time order (windows, collisions, cancels,
    /// pass-throughs, reflections).
    pub order: Vec<(EventId, f64)>,
}

impl<const D: usize> ReducedTrajectory<D> {
    pub fn identity_sequence(&self) -> Vec<EventId> {
        self.order.iter().map(|(id, _)| *id).collect()
    }
}

/// Extract the reduced trajectory of a simulated path.
///
/// Errors on suppressed collisions: those paths leave the collision-kernel
/// support and are excluded from the calculus.
pub fn reduce<const D: usize>(traj: &Trajectory<D>) -> Result<ReducedTrajectory<D>, CalculusError> {
    let mut coords = Coordinates {
        x0: traj.x0.clone(),
        v0: traj.v0.clone(),
        gammas: BTreeMap::new(),
        collision_vs: BTreeMap::new(),
        reflection_vs: BTreeMap::new(),
    };
    let mut order = Vec::with_capacity(traj.events.len());
    for ev in &traj.events {
        match &ev.kind {
            EventKind::WindowOpen { i, j, k, gamma, .. } => {
                coords.gammas.insert((*i, *j, *k), *gamma);
            }
            EventKind::Collision {
                i,
                j,
                k,
                v_post,
                suppressed,
                ..
            } => {
                if *suppressed {
                    return Err(CalculusError::ContainsSuppressedCollision);
                }
                coords.collision_vs.insert((*i, *j, *k), v_post.0);
            }
            EventKind::Reflection { i, l, v_post, .. } => {
                coords.reflection_vs.insert((*i, *l), *v_post);
            }
            EventKind::WindowCancel { .. } | EventKind::Passthrough { .. } => {}
        }
        order.push((ev.kind.identity(), ev.t));
    }
    Ok(ReducedTrajectory { coords, order })
}

/// Replay source: every outcome comes from stored coordinates.
pub struct ReplaySource<'a, const D: usize> {
    pub kernels: &'a Kernels<D>,
    pub coords: &'a Coordinates<D>,
}

impl<'a, const D: usize> OutcomeSource<D> for ReplaySource<'a, D> {
    fn gamma(&mut self, i: usize, j: usize, k: usize) -> Result<f64, PathError> {
        self.coords
            .gammas
            .get(&(i, j, k))
            .copied()
            .ok_or_else(|| PathError::CoordinateExhausted {
                slot: format!("gamma({i},{j},{k})"),
            })
    }

    fn collision(
        &mut self,
        i: usize,
        j: usize,
        k: usize,
        v_i: &Vector<D>,
        v_j: &Vector<D>,
    ) -> Result<CollisionOutcome<D>, PathError> {
        let w = sub(v_i, v_j);
        if self.kernels.rel.eval(norm(&w)) == 0.0 {
            return Ok(CollisionOutcome::Suppressed);
        }
        let slot = format!("a({i},{j},{k})");
        let a = self
            .coords
            .collision_vs
            .get(&(i, j, k))
            .copied()
            .ok_or_else(|| PathError::CoordinateExhausted { slot: slot.clone() })?;
        // partner velocity from momentum exchange: a_{j,i;k} = v_i- + v_j- - a
        let partner = sub(&crate::linalg::add(v_i, v_j), &a);
        if !self.kernels.vset.contains(&a) || !self.kernels.vset.contains(&partner) {
            return Err(PathError::InvalidCoordinate { slot });
        }
        let transfer = sub(v_i, &a);
        let tn = norm(&transfer);
        if tn < 1e-14 {
            return Err(PathError::InvalidCoordinate { slot });
        }
        Ok(CollisionOutcome::Jump {
            e: scale(&transfer, 1.0 / tn),
            v_post: (a, partner),
        })
    }

    fn reflection(
        &mut self,
        i: usize,
        l: usize,
        n_out: &Vector<D>,
        _v_pre: &Vector<D>,
    ) -> Result<Vector<D>, PathError> {
        let slot = format!("b({i},{l})");
        let b = self
            .coords
            .reflection_vs
            .get(&(i, l))
            .copied()
            .ok_or_else(|| PathError::CoordinateExhausted { slot: slot.clone() })?;
        let s = dot(&b, n_out);
        if s == 0.0 || !self.kernels.vset.contains(&b) {
            return Err(PathError::InvalidCoordinate { slot });
        }
        // realized representative: the inward one
        Ok(scale(&b, -s.signum()))
    }
}

/// Deterministic forward replay of stored coordinates.
pub fn reconstruct<const D: usize>(
    cfg: &ModelConfig,
    kernels: &Kernels<D>,
    coords: &Coordinates<D>,
) -> Result<Trajectory<D>, PathError> {
    let mut source = ReplaySource { kernels, coords };
    run_path(
        cfg,
        kernels,
        coords.x0.clone(),
        coords.v0.clone(),
        &mut source,
    )
}

/// Event-order class: the realized identity prefix before the horizon plus
/// the index of the last velocity jump.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventOrderClass {
    pub ids: Vec<EventId>,
    /// number of velocity jumps strictly before the horizon
    pub m: usize,
}

impl EventOrderClass {
    /// Canonical string key, e.g. "W(0,1,1);C(0,1,1);R(2,1)|m=2".
    pub fn key(&self) -> String {
        let body: Vec<String> = self.ids.iter().map(|id| id.to_string()).collect();
        format!("{}|m={}", body.join(";"), self.m)
    }

    pub fn parse(key: &str) -> Option<EventOrderClass> {
        let (body, m_part) = key.rsplit_once("|m=")?;
        let m = m_part.parse().ok()?;
        let mut ids = Vec::new();
        if !body.is_empty() {
            for tok in body.split(';') {
                ids.push(parse_event_id(tok)?);
            }
        }
        Some(EventOrderClass { ids, m })
    }

    /// Identity of the last velocity jump, if any.
    pub fn last_jump(&self) -> Option<EventId> {
        self.ids
            .iter()
            .rev()
            .find(|id| matches!(id, EventId::Collision(..) | EventId::Reflection(..)))
            .copied()
    }
}

fn parse_event_id(tok: &str) -> Option<EventId> {
    let (tag, rest) = tok.split_at(1);
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    let nums: Vec<usize> = inner.split(',').map(|s| s.parse().ok()).collect::<Option<_>>()?;
    match (tag, nums.as_slice()) {
        ("W", [i, j, k]) => Some(EventId::Window(*i, *j, *k)),
        ("C", [i, j, k]) => Some(EventId::Collision(*i, *j, *k)),
        ("S", [i, j, k]) => Some(EventId::SuppressedCollision(*i, *j, *k)),
        ("X", [i, j, k]) => Some(EventId::Cancel(*i, *j, *k)),
        ("P", [i, j]) => Some(EventId::Passthrough(*i, *j)),
        ("R", [i, l]) => Some(EventId::Reflection(*i, *l)),
        _ => None,
    }
}

/// Classify a reduced trajectory at horizon t.
pub fn classify<const D: usize>(
    rt: &ReducedTrajectory<D>,
    t: f64,
    tie_tol: f64,
) -> Result<EventOrderClass, CalculusError> {
    let mut ids = Vec::new();
    let mut m = 0;
    for (id, time) in &rt.order {
        if (time - t).abs() < tie_tol {
            return Err(CalculusError::HorizonOnEvent { t });
        }
        if *time > t {
            break;
        }
        ids.push(*id);
        if matches!(id, EventId::Collision(..) | EventId::Reflection(..)) {
            m += 1;
        }
    }
    Ok(EventOrderClass { ids, m })
}

/// The labeled coordinate point of a classified path: initial state, then the
/// realized gammas, post-collision velocities, and reflection representatives
/// in event order.
pub fn class_coordinates<const D: usize>(
    rt: &ReducedTrajectory<D>,
    class: &EventOrderClass,
) -> Vec<f64> {
    let c = &rt.coords;
    let mut out = Vec::new();
    for x in &c.x0 {
        out.extend_from_slice(x);
    }
    for v in &c.v0 {
        out.extend_from_slice(v);
    }
    for id in &class.ids {
        match id {
            EventId::Window(i, j, k) => out.push(c.gammas[&(*i, *j, *k)]),
            EventId::Collision(i, j, k) => out.extend_from_slice(&c.collision_vs[&(*i, *j, *k)]),
            EventId::Reflection(i, l) => out.extend_from_slice(&c.reflection_vs[&(*i, *l)]),
            _ => {}
        }
    }
    out
}

/// Rebuild a coordinate bundle from a flat class-coordinate vector (the
/// inverse of `class_coordinates` given the class layout).
pub fn coordinates_from_flat<const D: usize>(
    class: &EventOrderClass,
    n_particles: usize,
    flat: &[f64],
) -> Coordinates<D> {
    let mut pos = 0;
    let mut take = |k: usize| {
        let s = &flat[pos..pos + k];
        pos += k;
        s.to_vec()
    };
    let mut x0 = Vec::with_capacity(n_particles);
    let mut v0 = Vec::with_capacity(n_particles);
    for _ in 0..n_particles {
        let s = take(D);
        x0.push(std::array::from_fn(|r| s[r]));
    }
    for _ in 0..n_particles {
        let s = take(D);
        v0.push(std::array::from_fn(|r| s[r]));
    }
    let mut coords = Coordinates {
        x0,
        v0,
        gammas: BTreeMap::new(),
        collision_vs: BTreeMap::new(),
        reflection_vs: BTreeMap::new(),
    };
    for id in &class.ids {
        match id {
            EventId::Window(i, j, k) => {
                let s = take(1);
                coords.gammas.insert((*i, *j, *k), s[0]);
            }
            EventId::Collision(i, j, k) => {
                let s = take(D);
                coords
                    .collision_vs
                    .insert((*i, *j, *k), std::array::from_fn(|r| s[r]));
            }
            EventId::Reflection(i, l) => {
                let s = take(D);
                coords
                    .reflection_vs
                    .insert((*i, *l), std::array::from_fn(|r| s[r]));
            }
            _ => {}
        }
    }
    debug_assert_eq!(pos, flat.len());
    coords
}

/// Transversality margin of a path: the smallest of the gaps between
/// consecutive candidate-relevant times and the horizon. Classification is
/// stable under coordinate perturbations well below this margin.
pub fn transversality_margin<const D: usize>(rt: &ReducedTrajectory<D>, t: f64) -> f64 {
    let mut margin = f64::INFINITY;
    let mut prev = 0.0;
    for (_, time) in &rt.order {
        margin = margin.min(time - prev);
        margin = margin.min((t - time).abs());
        prev = *time;
    }
    margin
}

/// Roundtrip check: does the reconstruction reproduce the source event-for-event?
pub fn roundtrip_matches<const D: usize>(
    a: &Trajectory<D>,
    b: &Trajectory<D>,
    time_tol: f64,
) -> bool {
    if a.identity_sequence() != b.identity_sequence() {
        return false;
    }
    for (ea, eb) in a.events.iter().zip(b.events.iter()) {
        if (ea.t - eb.t).abs() > time_tol {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::simulator::simulate_path;

    fn setup() -> (ModelConfig, Kernels<2>) {
        let cfg = ModelConfig::default_desk();
        let k = Kernels::<2>::new(&cfg);
        (cfg, k)
    }

    #[test]
    fn roundtrip_is_exact_on_sampled_paths() {
        let (cfg, k) = setup();
        let mut checked = 0;
        for p in 0..400u64 {
            let mut rng = crate::rng::path_rng(100, p);
            let Ok(traj) = simulate_path(&cfg, &k, &mut rng) else {
                continue;
            };
            let Ok(rt) = reduce(&traj) else { continue };
            let back = reconstruct(&cfg, &k, &rt.coords).unwrap();
            assert!(roundtrip_matches(&traj, &back, 1e-10));
            // velocities bitwise
            for (ea, eb) in traj.events.iter().zip(back.events.iter()) {
                match (&ea.kind, &eb.kind) {
                    (
                        EventKind::Collision { v_post: va, .. },
                        EventKind::Collision { v_post: vb, .. },
                    ) => {
                        assert_eq!(va, vb);
                    }
                    (
                        EventKind::Reflection { v_post: va, .. },
                        EventKind::Reflection { v_post: vb, .. },
                    ) => assert_eq!(va, vb),
                    _ => {}
                }
            }
            checked += 1;
        }
        assert!(checked > 300, "only {checked} paths checked");
    }

    #[test]
    fn reflection_representative_sign_is_immaterial() {
        let (cfg, k) = setup();
        let mut found = 0;
        for p in 0..100u64 {
            let mut rng = crate::rng::path_rng(101, p);
            let Ok(traj) = simulate_path(&cfg, &k, &mut rng) else {
                continue;
            };
            let Ok(rt) = reduce(&traj) else { continue };
            let Some(&slot) = rt.coords.reflection_vs.keys().next() else {
                continue;
            };
            let mut flipped = rt.coords.clone();
            flipped.flip_reflection_representative(slot);
            let a = reconstruct(&cfg, &k, &rt.coords).unwrap();
            let b = reconstruct(&cfg, &k, &flipped).unwrap();
            assert_eq!(a, b);
            found += 1;
        }
        assert!(found > 50);
    }

    #[test]
    fn zero_event_trajectory_reduces_to_empty_maps() {
        let (mut cfg, _) = setup();
        cfg.simulation.t_max = 1e-6;
        let k = Kernels::<2>::new(&cfg);
        let mut rng = crate::rng::path_rng(102, 0);
        let traj = simulate_path(&cfg, &k, &mut rng).unwrap();
        let rt = reduce(&traj).unwrap();
        assert!(rt.coords.gammas.is_empty());
        assert!(rt.coords.collision_vs.is_empty());
        assert!(rt.coords.reflection_vs.is_empty());
        let class = classify(&rt, cfg.simulation.t_max / 2.0, 1e-12).unwrap();
        assert_eq!(class.m, 0);
        assert!(class.ids.is_empty());
        assert_eq!(class.key(), "|m=0");
    }

    #[test]
    fn replay_without_coordinates_exhausts() {
        let (cfg, k) = setup();
        // free flight reaches the boundary but no reflection entry is stored
        let coords = Coordinates::<2> {
            x0: vec![[0.0, 0.0], [0.3, 0.4], [-0.3, 0.4]],
            v0: vec![[1.0, 0.0], [0.9, 0.3], [-0.8, 0.2]],
            gammas: BTreeMap::new(),
            collision_vs: BTreeMap::new(),
            reflection_vs: BTreeMap::new(),
        };
        let err = reconstruct(&cfg, &k, &coords).unwrap_err();
        assert!(matches!(err, PathError::CoordinateExhausted { .. }));
    }

    #[test]
    fn class_key_roundtrips_through_parse() {
        let class = EventOrderClass {
            ids: vec![
                EventId::Window(0, 1, 1),
                EventId::Collision(0, 1, 1),
                EventId::Reflection(2, 1),
            ],
            m: 2,
        };
        let key = class.key();
        assert_eq!(key, "W(0,1,1);C(0,1,1);R(2,1)|m=2");
        assert_eq!(EventOrderClass::parse(&key).unwrap(), class);
        assert_eq!(
            EventOrderClass::parse("|m=0").unwrap(),
            EventOrderClass { ids: vec![], m: 0 }
        );
    }

    #[test]
    fn class_coordinate_layout_roundtrips() {
        let (cfg, k) = setup();
        for p in 0..50u64 {
            let mut rng = crate::rng::path_rng(103, p);
            let Ok(traj) = simulate_path(&cfg, &k, &mut rng) else {
                continue;
            };
            let Ok(rt) = reduce(&traj) else { continue };
            let class = classify(&rt, cfg.simulation.t_max, 1e-12).unwrap();
            let flat = class_coordinates(&rt, &class);
            let n_w = class
                .ids
                .iter()
                .filter(|i| matches!(i, EventId::Window(..)))
                .count();
            let n_c = class
                .ids
                .iter()
                .filter(|i| matches!(i, EventId::Collision(..)))
                .count();
            let n_r = class
                .ids
                .iter()
                .filter(|i| matches!(i, EventId::Reflection(..)))
                .count();
            assert_eq!(flat.len(), 4 * 3 + n_w + 2 * n_c + 2 * n_r);
            let back = coordinates_from_flat::<2>(&class, 3, &flat);
            assert_eq!(back, rt.coords);
        }
    }

    #[test]
    fn window_chronology_constraints_hold() {
        let (cfg, k) = setup();
        for p in 0..300u64 {
            let mut rng = crate::rng::path_rng(104, p);
            let Ok(traj) = simulate_path(&cfg, &k, &mut rng) else {
                continue;
            };
            let Ok(rt) = reduce(&traj) else { continue };
            // if window k of a pair appears, window k-1 appeared earlier;
            // same for reflections of one particle
            let mut seen_w: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            let mut seen_r: BTreeMap<usize, usize> = BTreeMap::new();
            for (id, _) in &rt.order {
                match id {
                    EventId::Window(i, j, k) => {
                        let prev = seen_w.insert((*i, *j), *k);
                        assert_eq!(prev.unwrap_or(0) + 1, *k);
                    }
                    EventId::Reflection(i, l) => {
                        let prev = seen_r.insert(*i, *l);
                        assert_eq!(prev.unwrap_or(0) + 1, *l);
                    }
                    _ => {}
                }
            }
        }
    }
}
