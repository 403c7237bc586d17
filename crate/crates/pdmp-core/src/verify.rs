//! Verification suites: each driver runs one family of identities at pinned
//! tolerances and returns a structured report. The acceptance tests and the
//! `verify` subcommand both go through these.

use crate::calculus::{
    d_weight, divergence_inverse_jacobian, flow, flow_derivative, jacobian_vstar,
    jacobian_vstar_inverse, z_weight, BumpField, Direction, InitialFactor, PathData, ScalarFactor,
    SlotFactor, TestFunctional, VecFactor,
};
use crate::config::RunConfig;
use crate::density::{h_alpha, h_v, h_x, ClassCutoff};
use crate::error::CalculusError;
use crate::kernels::Kernels;
use crate::linalg::{axpy, dot, mat_mul, norm, scale, sub, unit, Vector};
use crate::reduced::{classify, reconstruct, roundtrip_matches, EventOrderClass};
use crate::simulator::{run_ensemble, EventId, EventKind};
use crate::smooth::Bump;
use crate::stats::{estimate, mc_check, quad_check, Check, SuiteReport};
use rand::Rng;
use std::collections::BTreeMap;

/// A simulated ensemble with its per-path calculus caches.
pub struct Ensemble<const D: usize> {
    pub cfg: RunConfig,
    pub kernels: Kernels<D>,
    pub paths: Vec<PathData<D>>,
    pub n_error: usize,
    pub n_suppressed: usize,
    pub n_total: usize,
}

impl<const D: usize> Ensemble<D> {
    pub fn generate(cfg: &RunConfig, n_paths: usize, seed: u64) -> Self {
        let kernels = Kernels::<D>::new(&cfg.model);
        let results = run_ensemble(&cfg.model, &kernels, n_paths, seed, cfg.run.workers);
        let mut paths = Vec::with_capacity(n_paths);
        let mut n_error = 0;
        let mut n_suppressed = 0;
        for res in results {
            match res {
                Err(_) => n_error += 1,
                Ok(traj) => match PathData::new(traj, kernels.domain.radius) {
                    Ok(pd) => paths.push(pd),
                    Err(CalculusError::ContainsSuppressedCollision) => n_suppressed += 1,
                    Err(_) => n_error += 1,
                },
            }
        }
        Ensemble {
            cfg: cfg.clone(),
            kernels,
            paths,
            n_error,
            n_suppressed,
            n_total: n_paths,
        }
    }

    pub fn t(&self) -> f64 {
        self.cfg.model.simulation.t_max
    }

    pub fn class_of(&self, p: &PathData<D>) -> Option<EventOrderClass> {
        classify(&p.rt, self.t(), self.cfg.model.simulation.tie_tol).ok()
    }

    pub fn histogram(&self) -> BTreeMap<String, usize> {
        let mut hist = BTreeMap::new();
        for p in &self.paths {
            if let Some(c) = self.class_of(p) {
                *hist.entry(c.key()).or_insert(0) += 1;
            }
        }
        hist
    }

    pub fn members_of(&self, class: &EventOrderClass) -> Vec<&PathData<D>> {
        self.paths
            .iter()
            .filter(|p| self.class_of(p).map(|c| &c == class).unwrap_or(false))
            .collect()
    }
}

fn random_admissible_triple<const D: usize, R: Rng>(
    kernels: &Kernels<D>,
    rng: &mut R,
) -> (Vector<D>, Vector<D>, Vector<D>) {
    loop {
        let v = scale(
            &crate::kernels::uniform_direction::<D, _>(rng),
            rng.gen_range(0.7..1.6),
        );
        let vp = scale(
            &crate::kernels::uniform_direction::<D, _>(rng),
            rng.gen_range(0.7..1.6),
        );
        if kernels.rel.eval(norm(&sub(&v, &vp))) == 0.0 {
            continue;
        }
        if let Ok(e) = kernels.sample_impact(&v, &vp, rng) {
            return (v, vp, e);
        }
    }
}

// ---------------------------------------------------------------------------
// suite: exercise (criterion 1)
// ---------------------------------------------------------------------------

pub fn suite_exercise<const D: usize>(cfg: &RunConfig) -> SuiteReport {
    let kernels = Kernels::<D>::new(&cfg.model);
    let mut rng = crate::rng::path_rng(cfg.run.seed ^ 0xe0e0, 0);
    let mut worst_inverse: f64 = 0.0;
    let mut worst_div: f64 = 0.0;
    let mut worst_product: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..1000 {
        let (v, vp, e) = random_admissible_triple(&kernels, &mut rng);
        // (a) * (b) = identity
        let j = jacobian_vstar(&v, &vp, &e);
        let inv = jacobian_vstar_inverse(&v, &vp, &e, 1e-9).unwrap();
        let prod = mat_mul(&j, &inv);
        for r in 0..D {
            for s in 0..D {
                let want = if r == s { 1.0 } else { 0.0 };
                worst_inverse = worst_inverse.max((prod[r][s] - want).abs());
            }
        }
        // (c) column divergence vs central finite differences
        let div = divergence_inverse_jacobian(&v, &vp, &e, 1e-9).unwrap();
        for s in 0..D {
            let mut fd = 0.0;
            for r in 0..D {
                let mut ep = e;
                let mut em = e;
                ep[r] += h;
                em[r] -= h;
                fd += (jacobian_vstar_inverse(&v, &vp, &ep, 1e-12).unwrap()[r][s]
                    - jacobian_vstar_inverse(&v, &vp, &em, 1e-12).unwrap()[r][s])
                    / (2.0 * h);
            }
            worst_div = worst_div.max((div[s] - fd).abs() / (1.0 + fd.abs()));
        }
        // (d) product rule: div_e[(dv*/de)^{-1} psi(v*) B] = (div psi + <psi, d>) B
        let psi = |x: &Vector<D>| -> Vector<D> {
            let mut out = [0.0; D];
            out[0] = x[0].sin() + 0.3 * x[D - 1] * x[D - 1];
            out[D - 1] += x[D - 1].cos() - 0.2 * x[0];
            out
        };
        let div_psi = |x: &Vector<D>| -> f64 {
            if D == 2 {
                x[0].cos() - x[1].sin()
            } else {
                x[0].cos() + 0.0 - x[D - 1].sin()
            }
        };
        let b0 = kernels.b_raw(&v, &vp, &e);
        if b0 < 1e-3 {
            continue; // too close to the support edge for stable differences
        }
        let field = |ee: &Vector<D>| -> Vector<D> {
            let inv = jacobian_vstar_inverse(&v, &vp, ee, 1e-12).unwrap();
            let vs = kernels.post_impact(&v, &vp, ee).0;
            scale(
                &crate::linalg::mat_vec(&inv, &psi(&vs)),
                kernels.b_raw(&v, &vp, ee),
            )
        };
        let mut fd = 0.0;
        for r in 0..D {
            let mut ep = e;
            let mut em = e;
            ep[r] += h;
            em[r] -= h;
            fd += (field(&ep)[r] - field(&em)[r]) / (2.0 * h);
        }
        let vs = kernels.post_impact(&v, &vp, &e).0;
        let dwt = d_weight(&kernels, &v, &vp, &e).unwrap();
        let analytic = (div_psi(&vs) + dot(&psi(&vs), &dwt)) * b0;
        worst_product = worst_product.max((fd - analytic).abs() / (1.0 + analytic.abs()));
    }
    let checks = vec![
        quad_check(
            "exercise(a)(b): jacobian * inverse = identity",
            worst_inverse,
            0.0,
            1000,
            1e-12,
        ),
        quad_check(
            "exercise(c): divergence of inverse jacobian vs finite differences",
            worst_div,
            0.0,
            1000,
            1e-6,
        ),
        quad_check(
            "exercise(d): divergence product rule pointwise",
            worst_product,
            0.0,
            1000,
            1e-5,
        ),
    ];
    SuiteReport::new("exercise", cfg.hash(), checks)
}

// ---------------------------------------------------------------------------
// suite: ibp2 (criterion 2): the two finite-dimensional IBP identities
// ---------------------------------------------------------------------------

pub fn suite_ibp2<const D: usize>(cfg: &RunConfig) -> SuiteReport {
    let kernels = Kernels::<D>::new(&cfg.model);
    let mut rng = crate::rng::path_rng(cfg.run.seed ^ 0x1b92, 0);
    let mut checks = Vec::new();
    let order = cfg.model.quadrature.hemisphere_order.max(192);

    // hemisphere identity, 20 random bump pairs; moderate speeds keep every
    // outcome inside V so the outcome indicator never truncates the kernel.
    // Pairs whose supports miss the collision sphere prove nothing, so draws
    // are repeated until both moments carry signal.
    let mut pair_idx = 0;
    while pair_idx < 20 {
        let v = scale(
            &crate::kernels::uniform_direction::<D, _>(&mut rng),
            rng.gen_range(0.9..1.1),
        );
        let vp = scale(&unit(&sub(&[0.0; D], &v)), rng.gen_range(0.9..1.1));
        let vbar = scale(&crate::linalg::add(&v, &vp), 0.5);
        let radius_sphere = norm(&sub(&v, &vp)) / 2.0;
        // test functions supported around the collision sphere
        let mut center = vbar;
        let offset = scale(
            &crate::kernels::uniform_direction::<D, _>(&mut rng),
            rng.gen_range(0.5..1.0) * radius_sphere,
        );
        for k in 0..D {
            center[k] += offset[k];
        }
        let phi = SlotFactor(vec![VecFactor::RadialBump {
            center,
            radius: rng.gen_range(0.8..1.4) * radius_sphere,
        }]);
        let mut center2 = vbar;
        let offset2 = scale(
            &crate::kernels::uniform_direction::<D, _>(&mut rng),
            rng.gen_range(0.5..1.0) * radius_sphere,
        );
        for k in 0..D {
            center2[k] += offset2[k];
        }
        let psi = BumpField {
            profile: SlotFactor(vec![VecFactor::RadialBump {
                center: center2,
                radius: rng.gen_range(0.8..1.4) * radius_sphere,
            }]),
            dir: crate::kernels::uniform_direction::<D, _>(&mut rng),
        };
        let (lhs, rhs) = crate::calculus::hemisphere_ibp_check(
            &kernels, &v, &vp, &phi, &psi, order,
        )
        .unwrap();
        if lhs.abs() + rhs.abs() < 1e-3 {
            continue; // vacuous pair, redraw
        }
        // quadrature-convergence control at a higher order
        let (lhs2, rhs2) = crate::calculus::hemisphere_ibp_check(
            &kernels,
            &v,
            &vp,
            &phi,
            &psi,
            2 * order,
        )
        .unwrap();
        let mut check = quad_check(
            &format!("eq(2.3) inner hemisphere ibp, pair {pair_idx}"),
            lhs,
            rhs,
            order,
            1e-6,
        );
        check.detail = Some(format!(
            "converged: residual at order {} is {:+.3e}, at order {} it is {:+.3e}",
            order,
            lhs - rhs,
            2 * order,
            lhs2 - rhs2
        ));
        checks.push(check);
        pair_idx += 1;
    }

    // boundary identity, 20 random bump pairs at random boundary normals
    let (n_radial, n_angular) = (
        cfg.model.quadrature.radial_order.max(160),
        cfg.model.quadrature.angular_order.max(640),
    );
    for pair_idx in 0..20 {
        let n_out = crate::kernels::uniform_direction::<D, _>(&mut rng);
        let spd_mid = (kernels.refl_speed.a + kernels.refl_speed.b) / 2.0;
        let mk_center = |rng: &mut rand_chacha::ChaCha12Rng, n_out: &Vector<D>| {
            let mut c = scale(n_out, -spd_mid);
            let off = scale(
                &crate::kernels::uniform_direction::<D, _>(rng),
                rng.gen_range(0.0..0.4),
            );
            for k in 0..D {
                c[k] += off[k];
            }
            c
        };
        let phi = SlotFactor(vec![VecFactor::RadialBump {
            center: mk_center(&mut rng, &n_out),
            radius: rng.gen_range(0.4..0.7),
        }]);
        let psi = BumpField {
            profile: SlotFactor(vec![VecFactor::RadialBump {
                center: mk_center(&mut rng, &n_out),
                radius: rng.gen_range(0.4..0.7),
            }]),
            dir: crate::kernels::uniform_direction::<D, _>(&mut rng),
        };
        let res = crate::calculus::boundary_ibp_check(&kernels, &n_out, &phi, &psi, n_radial, n_angular);
        checks.push(quad_check(
            &format!("eq(2.4) boundary ibp, pair {pair_idx}"),
            res,
            0.0,
            n_radial * n_angular,
            1e-6,
        ));
    }
    SuiteReport::new("ibp2", cfg.hash(), checks)
}

// ---------------------------------------------------------------------------
// suite: flow (criteria 3 and 4)
// ---------------------------------------------------------------------------

/// A direction supported on a handful of the path's realized slots, plus the
/// matching product-form functional with factors wide enough to be nonzero.
fn path_adapted_pair<const D: usize, R: Rng>(
    path: &PathData<D>,
    rng: &mut R,
    use_initial: bool,
) -> (TestFunctional<D>, Direction<D>) {
    let coords = &path.rt.coords;
    let n = coords.x0.len();
    let mut f = TestFunctional::default();
    let mut dir = Direction::zero();
    if use_initial {
        let mut init = InitialFactor::default();
        for i in 0..n {
            init.position.insert(
                i,
                VecFactor::RadialBump {
                    center: coords.x0[i],
                    radius: 0.35,
                },
            );
            init.velocity.insert(
                i,
                VecFactor::RadialBump {
                    center: coords.v0[i],
                    radius: 0.3,
                },
            );
        }
        f.f0 = Some(init);
        dir.a0_x = (0..n)
            .map(|_| scale(&crate::kernels::uniform_direction::<D, _>(rng), 0.7))
            .collect();
        dir.a0_v = (0..n)
            .map(|_| scale(&crate::kernels::uniform_direction::<D, _>(rng), 0.7))
            .collect();
    }
    for (&slot, &g) in &coords.gammas {
        let half = 0.8 * g.min(1.0 - g);
        f.gamma_factors
            .insert(slot, ScalarFactor::Bump(Bump::new(g - half, g + half)));
        dir.c.insert(slot, rng.gen_range(-1.0..1.0));
    }
    for (&slot, a) in &coords.collision_vs {
        f.collision_factors.insert(
            slot,
            SlotFactor(vec![VecFactor::RadialBump {
                center: *a,
                radius: 0.3,
            }]),
        );
        dir.alpha_c.insert(
            slot,
            scale(&crate::kernels::uniform_direction::<D, _>(rng), 0.7),
        );
    }
    for (&slot, b) in &coords.reflection_vs {
        let sp = norm(b);
        f.reflection_factors.insert(
            slot,
            SlotFactor(vec![
                VecFactor::SpeedBump(Bump::new(sp - 0.25, sp + 0.25)),
                VecFactor::AxisSquareBump {
                    axis: unit(b),
                    window: Bump::new(sp * sp * 0.25, sp * sp * 1.5),
                },
            ]),
        );
        dir.alpha_r.insert(
            slot,
            scale(&crate::kernels::uniform_direction::<D, _>(rng), 0.7),
        );
    }
    (f, dir)
}

pub fn suite_flow<const D: usize>(cfg: &RunConfig) -> SuiteReport {
    let kernels = Kernels::<D>::new(&cfg.model);
    let model = &cfg.model;
    let mut checks = Vec::new();

    // criterion 3: reduce -> reconstruct roundtrip on 10^4 paths
    let mut n_checked = 0usize;
    let mut n_exact = 0usize;
    let mut worst_time = 0.0f64;
    let mut velocities_bitwise = true;
    let mut sign_invariance = true;
    for p in 0..10_000u64 {
        let mut rng = crate::rng::path_rng(cfg.run.seed ^ 0x0f17, p);
        let Ok(traj) = crate::simulator::simulate_path(model, &kernels, &mut rng) else {
            continue;
        };
        let Ok(rt) = crate::reduced::reduce(&traj) else {
            continue;
        };
        let Ok(back) = reconstruct(model, &kernels, &rt.coords) else {
            velocities_bitwise = false;
            continue;
        };
        n_checked += 1;
        if roundtrip_matches(&traj, &back, 1e-10) {
            n_exact += 1;
        }
        for (ea, eb) in traj.events.iter().zip(back.events.iter()) {
            worst_time = worst_time.max((ea.t - eb.t).abs());
            match (&ea.kind, &eb.kind) {
                (
                    EventKind::Collision { v_post: a, .. },
                    EventKind::Collision { v_post: b, .. },
                ) => {
                    if a != b {
                        velocities_bitwise = false;
                    }
                }
                (
                    EventKind::Reflection { v_post: a, .. },
                    EventKind::Reflection { v_post: b, .. },
                ) => {
                    if a != b {
                        velocities_bitwise = false;
                    }
                }
                _ => {}
            }
        }
        // reflection sign-representative invariance on the first path with a
        // reflection out of every 100
        if p % 100 == 0 {
            if let Some(&slot) = rt.coords.reflection_vs.keys().next() {
                let mut flipped = rt.coords.clone();
                flipped.flip_reflection_representative(slot);
                match reconstruct(model, &kernels, &flipped) {
                    Ok(b2) => {
                        if b2 != back {
                            sign_invariance = false;
                        }
                    }
                    Err(_) => sign_invariance = false,
                }
            }
        }
    }
    let mut c = quad_check(
        "lemma 3.4 bijection: reconstruct(reduce(path)) event-for-event",
        n_exact as f64,
        n_checked as f64,
        n_checked,
        0.5,
    );
    c.detail = Some(format!(
        "paths checked {n_checked}, exact {n_exact}, worst event-time deviation {worst_time:.3e}, velocities bitwise: {velocities_bitwise}, sign-representative invariant: {sign_invariance}"
    ));
    c.pass = n_checked > 9_000
        && n_exact == n_checked
        && worst_time <= 1e-10
        && velocities_bitwise
        && sign_invariance;
    checks.push(c);

    // criterion 4: flow roundtrip and the analytic directional derivative
    let mut worst_roundtrip = 0.0f64;
    let mut worst_rel = 0.0f64;
    let mut n_deriv = 0usize;
    let mut rng = crate::rng::path_rng(cfg.run.seed ^ 0x4a11, 0);
    let mut p = 0u64;
    while n_deriv < 1000 && p < 20_000 {
        let mut prng = crate::rng::path_rng(cfg.run.seed ^ 0x0f18, p);
        p += 1;
        let Ok(traj) = crate::simulator::simulate_path(model, &kernels, &mut prng) else {
            continue;
        };
        let Ok(path) = PathData::new(traj, kernels.domain.radius) else {
            continue;
        };
        // five (F, H) pairs per path, spanning slot types as available
        for variant in 0..5 {
            let (f, dir) = path_adapted_pair(&path, &mut rng, variant % 2 == 0);
            if f.validate().is_err() || dir.norm_h() == 0.0 {
                continue;
            }
            // flow roundtrip at a fixed step
            let s0 = 1e-3 / dir.norm_h().max(1e-9);
            if let Ok((fwd, _)) = flow(model, &kernels, &path.rt, &dir, s0) {
                if let Ok((back, _)) = flow(model, &kernels, &fwd, &dir, -s0) {
                    let a = crate::reduced::class_coordinates(
                        &path.rt,
                        &EventOrderClass {
                            ids: path.rt.identity_sequence(),
                            m: 0,
                        },
                    );
                    let b = crate::reduced::class_coordinates(
                        &back,
                        &EventOrderClass {
                            ids: back.identity_sequence(),
                            m: 0,
                        },
                    );
                    for (x, y) in a.iter().zip(b.iter()) {
                        worst_roundtrip = worst_roundtrip.max((x - y).abs());
                    }
                }
            }
            // analytic derivative vs Richardson flow differences
            let analytic = match f.directional_derivative(&path.rt, &dir) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let numeric = flow_derivative(
                model,
                &kernels,
                &path.rt,
                &dir,
                model.flow.fd_step,
                model.flow.max_shrinks,
                |rt_new, _| Ok(f.eval(rt_new)),
            );
            if let Ok(numeric) = numeric {
                let scale_ref = analytic.abs().max(numeric.abs()).max(1e-8);
                worst_rel = worst_rel.max((analytic - numeric).abs() / scale_ref);
                n_deriv += 1;
            }
        }
    }
    let mut c = quad_check(
        "flow roundtrip: coordinates of flow(-s) . flow(s)",
        worst_roundtrip,
        0.0,
        n_deriv,
        1e-12,
    );
    c.detail = Some(format!("{n_deriv} derivative comparisons collected"));
    checks.push(c);
    checks.push(quad_check(
        "prop 3.10: analytic directional derivative vs Richardson flow differences (relative)",
        worst_rel,
        0.0,
        n_deriv,
        1e-4,
    ));

    // linearity of the derivative and the weight in H (pathwise, exact)
    let mut worst_lin = 0.0f64;
    for p in 0..200u64 {
        let mut prng = crate::rng::path_rng(cfg.run.seed ^ 0x11ea, p);
        let Ok(traj) = crate::simulator::simulate_path(model, &kernels, &mut prng) else {
            continue;
        };
        let Ok(path) = PathData::new(traj, kernels.domain.radius) else {
            continue;
        };
        let (f, d1) = path_adapted_pair(&path, &mut rng, true);
        let (_, d2) = path_adapted_pair(&path, &mut rng, true);
        let mut d12 = d1.clone();
        // d12 = d1 + 2 d2 on the joint support
        for (x, y) in d12.a0_x.iter_mut().zip(d2.a0_x.iter()) {
            *x = axpy(x, 2.0, y);
        }
        for (x, y) in d12.a0_v.iter_mut().zip(d2.a0_v.iter()) {
            *x = axpy(x, 2.0, y);
        }
        for (slot, val) in &d2.c {
            *d12.c.entry(*slot).or_insert(0.0) += 2.0 * val;
        }
        for (slot, val) in &d2.alpha_c {
            let e = d12.alpha_c.entry(*slot).or_insert([0.0; D]);
            *e = axpy(e, 2.0, val);
        }
        for (slot, val) in &d2.alpha_r {
            let e = d12.alpha_r.entry(*slot).or_insert([0.0; D]);
            *e = axpy(e, 2.0, val);
        }
        let da = f.directional_derivative(&path.rt, &d1);
        let db = f.directional_derivative(&path.rt, &d2);
        let dc = f.directional_derivative(&path.rt, &d12);
        if let (Ok(a), Ok(b), Ok(c3)) = (da, db, dc) {
            worst_lin = worst_lin.max((c3 - (a + 2.0 * b)).abs() / (1.0 + c3.abs()));
        }
        let za = z_weight(&kernels, &path, &d1);
        let zb = z_weight(&kernels, &path, &d2);
        let zc = z_weight(&kernels, &path, &d12);
        if let (Ok(a), Ok(b), Ok(c3)) = (za, zb, zc) {
            worst_lin = worst_lin.max((c3 - (a + 2.0 * b)).abs() / (1.0 + c3.abs()));
        }
    }
    checks.push(quad_check(
        "linearity of the directional derivative and z in H",
        worst_lin,
        0.0,
        200,
        1e-12,
    ));

    SuiteReport::new("flow", cfg.hash(), checks)
}

// ---------------------------------------------------------------------------
// suite: duality (criterion 5)
// ---------------------------------------------------------------------------

/// Pick the most populated class satisfying a predicate, from a pilot
/// histogram.
fn select_class<F: Fn(&EventOrderClass) -> bool>(
    hist: &BTreeMap<String, usize>,
    pred: F,
) -> Option<EventOrderClass> {
    hist.iter()
        .filter_map(|(key, count)| EventOrderClass::parse(key).map(|c| (c, *count)))
        .filter(|(c, _)| pred(c))
        .max_by_key(|(_, count)| *count)
        .map(|(c, _)| c)
}

struct DualityTriple<const D: usize> {
    name: String,
    class: EventOrderClass,
    cutoff: ClassCutoff,
    f: TestFunctional<D>,
    dir: Direction<D>,
}

/// Build the five duality triples from a pilot ensemble. Every direction is
/// supported on a terminal slot of its class (the last event before the
/// horizon, or the initial slot on the event-free class), where the
/// coordinate has no downstream conditional law.
fn build_triples<const D: usize>(pilot: &Ensemble<D>) -> Vec<DualityTriple<D>> {
    let hist = pilot.histogram();
    let mut out = Vec::new();
    let n = pilot.cfg.model.particles.n;

    let mean_coord = |members: &[&PathData<D>], get: &dyn Fn(&PathData<D>) -> Vector<D>| {
        let mut acc = [0.0; D];
        for p in members {
            acc = crate::linalg::add(&acc, &get(p));
        }
        scale(&acc, 1.0 / members.len().max(1) as f64)
    };

    // T1: initial slot on the event-free class
    if let Some(class) = select_class(&hist, |c| c.ids.is_empty()) {
        let members = pilot.members_of(&class);
        if members.len() >= 25 {
            let rts: Vec<_> = members.iter().map(|p| &p.rt).collect();
            let cutoff = ClassCutoff::from_ensemble(&class, &rts, 0.85).unwrap();
            let mut f = TestFunctional::default();
            let mut init = InitialFactor::default();
            let vbar = mean_coord(&members, &|p| p.rt.coords.v0[0]);
            init.position.insert(
                0,
                VecFactor::RadialBump {
                    center: [0.0; D],
                    radius: 0.8 * pilot.kernels.domain.radius,
                },
            );
            init.velocity.insert(
                0,
                VecFactor::RadialBump {
                    center: vbar,
                    radius: 0.8,
                },
            );
            f.f0 = Some(init);
            let mut dir = Direction::with_initial(n);
            dir.a0_x[0] = [0.4; D];
            dir.a0_v[0] = {
                let mut v = [0.0; D];
                v[0] = 0.5;
                v[D - 1] = -0.3;
                v
            };
            out.push(DualityTriple {
                name: "initial slot on the event-free class".into(),
                class,
                cutoff,
                f,
                dir,
            });
        }
    }

    // reflection-last classes: the two most populated
    let mut refl_count = 0;
    let mut taken: Vec<String> = Vec::new();
    while refl_count < 2 {
        let pick = select_class(&hist, |c| {
            !taken.contains(&c.key())
                && matches!(c.last_jump(), Some(EventId::Reflection(..)))
                && c.ids.last().map(|id| matches!(id, EventId::Reflection(..))).unwrap_or(false)
        });
        let Some(class) = pick else { break };
        taken.push(class.key());
        let members = pilot.members_of(&class);
        if members.len() < 25 {
            refl_count += 1;
            continue;
        }
        let Some(EventId::Reflection(i, l)) = class.last_jump() else {
            break;
        };
        let rts: Vec<_> = members.iter().map(|p| &p.rt).collect();
        let cutoff = ClassCutoff::from_ensemble(&class, &rts, 0.85).unwrap();
        let mut f = TestFunctional::default();
        let speeds: Vec<f64> = members
            .iter()
            .map(|p| norm(&p.rt.coords.reflection_vs[&(i, l)]))
            .collect();
        let sp = estimate(&speeds).mean;
        f.reflection_factors.insert(
            (i, l),
            SlotFactor(vec![VecFactor::SpeedBump(Bump::new(sp - 0.5, sp + 0.5))]),
        );
        let mut dir = Direction::zero();
        let mut u = [0.0; D];
        u[0] = 0.45;
        u[D - 1] += 0.3;
        dir.alpha_r.insert((i, l), u);
        out.push(DualityTriple {
            name: format!("reflection slot ({i},{l}) terminal on {}", class.key()),
            class,
            cutoff,
            f,
            dir,
        });
        refl_count += 1;
    }

    // collision-last class: both the timing-control slot and the velocity slot
    if let Some(class) = select_class(&hist, |c| {
        matches!(c.last_jump(), Some(EventId::Collision(..)))
            && c
                .ids
                .last()
                .map(|id| matches!(id, EventId::Collision(..)))
                .unwrap_or(false)
    }) {
        let members = pilot.members_of(&class);
        if members.len() >= 25 {
            let Some(EventId::Collision(i, j, k)) = class.last_jump() else {
                unreachable!()
            };
            let rts: Vec<_> = members.iter().map(|p| &p.rt).collect();
            let cutoff = ClassCutoff::from_ensemble(&class, &rts, 0.85).unwrap();
            // gamma slot triple
            let gammas: Vec<f64> = members
                .iter()
                .map(|p| p.rt.coords.gammas[&(i, j, k)])
                .collect();
            let gm = estimate(&gammas).mean;
            let half = 0.9 * gm.min(1.0 - gm);
            let mut f_gamma = TestFunctional::default();
            f_gamma.gamma_factors.insert(
                (i, j, k),
                ScalarFactor::Bump(Bump::new(gm - half, gm + half)),
            );
            let mut dir_gamma = Direction::zero();
            dir_gamma.c.insert((i, j, k), 1.0);
            out.push(DualityTriple {
                name: format!("timing-control slot ({i},{j},{k}) on {}", class.key()),
                class: class.clone(),
                cutoff: cutoff.clone(),
                f: f_gamma,
                dir: dir_gamma,
            });
            // collision velocity slot triple
            let abar = mean_coord(&members, &|p| p.rt.coords.collision_vs[&(i, j, k)]);
            let mut f_coll = TestFunctional::default();
            f_coll.collision_factors.insert(
                (i, j, k),
                SlotFactor(vec![VecFactor::RadialBump {
                    center: abar,
                    radius: 0.6,
                }]),
            );
            let mut dir_coll = Direction::zero();
            let mut u = [0.0; D];
            u[0] = 0.4;
            u[D - 1] -= 0.25;
            dir_coll.alpha_c.insert((i, j, k), u);
            out.push(DualityTriple {
                name: format!("collision velocity slot ({i},{j},{k}) on {}", class.key()),
                class,
                cutoff,
                f: f_coll,
                dir: dir_coll,
            });
        }
    }
    out
}

fn duality_samples<const D: usize>(
    ens: &Ensemble<D>,
    triple: &DualityTriple<D>,
) -> Result<(Vec<f64>, Vec<f64>), CalculusError> {
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let cfg = &ens.cfg.model;
    for p in &ens.paths {
        let in_class = ens
            .class_of(p)
            .map(|c| c == triple.class)
            .unwrap_or(false);
        if !in_class {
            // off the class the cutoff support gives zero on both sides
            lhs.push(0.0);
            rhs.push(0.0);
            continue;
        }
        let g = triple.cutoff.eval(&ens.kernels, p);
        let df = triple.f.directional_derivative(&p.rt, &triple.dir)?;
        lhs.push(df * g);
        if g == 0.0 {
            let dg = triple
                .cutoff
                .directional_derivative(cfg, &ens.kernels, p, &triple.dir)?;
            if dg == 0.0 {
                rhs.push(0.0);
                continue;
            }
            rhs.push(-(triple.f.eval(&p.rt)) * dg);
            continue;
        }
        let dg = triple
            .cutoff
            .directional_derivative(cfg, &ens.kernels, p, &triple.dir)?;
        let z = z_weight(&ens.kernels, p, &triple.dir)?;
        rhs.push(-(triple.f.eval(&p.rt)) * (dg + z * g));
    }
    Ok((lhs, rhs))
}

pub fn suite_duality<const D: usize>(cfg: &RunConfig) -> SuiteReport {
    let pilot_cfg = cfg.clone();
    let pilot = Ensemble::<D>::generate(&pilot_cfg, (cfg.run.n_paths / 2).max(10_000), cfg.run.seed + 1);
    let ens = Ensemble::<D>::generate(cfg, cfg.run.n_paths, cfg.run.seed);
    let triples = build_triples(&pilot);
    let mut checks = Vec::new();
    for triple in &triples {
        match duality_samples(&ens, triple) {
            Ok((lhs, rhs)) => {
                let mut check = mc_check(
                    &format!("prop 3.12 duality: {}", triple.name),
                    &lhs,
                    &rhs,
                    3.0,
                );
                // 1/sqrt(n) consistency: the first quarter of the ensemble
                let q = lhs.len() / 4;
                let small = mc_check("quarter", &lhs[..q], &rhs[..q], 3.0);
                check.detail = Some(format!(
                    "quarter-ensemble residual {:+.3e} (stderr {:.3e}); full residual {:+.3e} (stderr {:.3e})",
                    small.residual, small.std_err, check.residual, check.std_err
                ));
                check.pass = check.pass && small.pass;
                checks.push(check);
            }
            Err(err) => {
                checks.push(Check {
                    identity: format!("prop 3.12 duality: {}", triple.name),
                    n_paths: Some(ens.paths.len()),
                    n_quadrature_nodes: None,
                    lhs: f64::NAN,
                    rhs: f64::NAN,
                    std_err: f64::NAN,
                    residual: f64::NAN,
                    pass: false,
                    detail: Some(format!("evaluation error: {err}")),
                    gating: None,
                });
            }
        }
    }

    // pathwise product rule for the divergence (prop 3.19(b)) and the
    // plateau identity delta = -z^h
    let mut worst_product = 0.0f64;
    let mut worst_plateau = 0.0f64;
    let mut n_plateau = 0;
    if let Some(triple) = triples.first() {
        for p in ens.members_of(&triple.class).iter().take(2000) {
            let g = triple.cutoff.eval(&ens.kernels, p);
            if g == 0.0 {
                continue;
            }
            let dgf = triple
                .cutoff
                .directional_derivative(&ens.cfg.model, &ens.kernels, p, &triple.dir);
            let (Ok(dg), Ok(z)) = (dgf, z_weight(&ens.kernels, p, &triple.dir)) else {
                continue;
            };
            let f_val = triple.f.eval(&p.rt);
            let df = triple.f.directional_derivative(&p.rt, &triple.dir).unwrap();
            // delta((G F) h) = F delta(G h) - <grad F, G h>
            let delta_gf = -((dg * f_val + g * df) + z * g * f_val);
            let rhs = f_val * (-(dg + z * g)) - df * g;
            worst_product = worst_product.max((delta_gf - rhs).abs() / (1.0 + delta_gf.abs()));
            if triple.cutoff.on_plateau(&ens.kernels, p) {
                // G = 1 and dG = 0 there: delta(G h) = -z^h
                let delta_g = -(dg + z * g);
                worst_plateau = worst_plateau.max((delta_g + z).abs() / (1.0 + z.abs()));
                n_plateau += 1;
            }
        }
    }
    checks.push(quad_check(
        "prop 3.19(b) product rule for the divergence (pathwise)",
        worst_product,
        0.0,
        2000,
        1e-10,
    ));
    let mut c = quad_check(
        "cor 3.18: delta(G h) = -z^h on the cutoff plateau",
        worst_plateau,
        0.0,
        n_plateau,
        1e-12,
    );
    c.pass = c.pass && n_plateau > 0;
    checks.push(c);

    let mut report = SuiteReport::new("duality", cfg.hash(), checks);
    if triples.len() < 5 {
        report.pass = false;
    }
    report
}

// ---------------------------------------------------------------------------
// suite: density-ibp (criterion 6) and class structure (criterion 7)
// ---------------------------------------------------------------------------

fn density_identity_check<const D: usize>(
    ens: &Ensemble<D>,
    cutoff: &ClassCutoff,
    i: usize,
    r: usize,
    target_x: bool,
    restricted: bool,
    label: &str,
) -> Check {
    let cfg = &ens.cfg.model;
    let t = ens.t();
    // empirical range of the target component on the class
    let members: Vec<&PathData<D>> = ens.members_of(&cutoff.class);
    let values: Vec<f64> = members
        .iter()
        .map(|p| {
            if target_x {
                p.traj.position_at(i, t)[r]
            } else {
                p.traj.velocity_at(i, t)[r]
            }
        })
        .collect();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let phi = Bump::new(lo - 0.05, hi + 0.05);
    // the unrestricted variant multiplies in a factor on the partner-prone
    // second component of another particle
    let other = (i + 1) % cfg.particles.n;
    let partner_values: Vec<f64> = members
        .iter()
        .map(|p| {
            if target_x {
                p.traj.position_at(other, t)[r]
            } else {
                p.traj.velocity_at(other, t)[r]
            }
        })
        .collect();
    let (plo, phi2) = partner_values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let partner_bump = Bump::new(plo - 0.05, phi2 + 0.05);

    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for (idx, p) in members.iter().enumerate() {
        let y = values[idx];
        let extra = if restricted {
            1.0
        } else {
            partner_bump.eval(partner_values[idx])
        };
        let g = cutoff.eval(&ens.kernels, p);
        let h = if target_x {
            h_x(cfg, &ens.kernels, p, cutoff, i, r, t, 1e-3)
        } else {
            h_v(cfg, &ens.kernels, p, cutoff, i, r)
        };
        let Ok(h) = h else {
            continue;
        };
        lhs.push(phi.deriv(y) * extra * g);
        rhs.push(phi.eval(y) * extra * h);
    }
    mc_check(label, &lhs, &rhs, 3.0)
}

pub fn suite_density_ibp<const D: usize>(cfg: &RunConfig) -> SuiteReport {
    let pilot = Ensemble::<D>::generate(cfg, (cfg.run.n_paths / 2).max(10_000), cfg.run.seed + 1);
    let ens = Ensemble::<D>::generate(cfg, cfg.run.n_paths, cfg.run.seed);
    let hist = pilot.histogram();
    let mut ordered: Vec<(String, usize)> = hist.iter().map(|(k, v)| (k.clone(), *v)).collect();
    ordered.sort_by_key(|(_, c)| std::cmp::Reverse(*c));

    let mut checks = Vec::new();
    // the two most populated classes carry the gating first-order checks
    for (key, _) in ordered.iter().take(2) {
        let class = EventOrderClass::parse(key).unwrap();
        let members = pilot.members_of(&class);
        let rts: Vec<_> = members.iter().map(|p| &p.rt).collect();
        let Ok(cutoff) = ClassCutoff::from_ensemble(&class, &rts, 0.85) else {
            continue;
        };
        // component (i, r): a particle that is perturbable in this class
        let (i, r) = (0usize, 0usize);
        checks.push(density_identity_check(
            &ens,
            &cutoff,
            i,
            r,
            false,
            true,
            &format!("prop 4.2(a) v(t) restricted phi, class {key}, component ({i},{r})"),
        ));
        checks.push(density_identity_check(
            &ens,
            &cutoff,
            i,
            r,
            true,
            true,
            &format!("prop 4.2(b) x(t) restricted phi, class {key}, component ({i},{r})"),
        ));
        // unrestricted residuals are reported but do not gate on the
        // collision-coupled classes; on reflection classes they must pass
        let mut unres = density_identity_check(
            &ens,
            &cutoff,
            i,
            r,
            false,
            false,
            &format!("prop 4.2(a) v(t) unrestricted phi, class {key}, component ({i},{r})"),
        );
        // gating only when the class has no collision coupling; on coupled
        // classes the residual is surfaced without deciding the intent of the
        // coordinate-wise derivative claim
        let coupled = class.ids.iter().any(|id| matches!(id, EventId::Collision(..)));
        if coupled {
            unres.gating = Some(false);
        }
        checks.push(unres);
    }

    // the most populated collision-last class: restricted identity reported
    // (the collision-slot weight is exercised), with the residual surfaced
    if let Some(class) = select_class(&hist, |c| {
        matches!(c.last_jump(), Some(EventId::Collision(..)))
            && c.ids
                .last()
                .map(|id| matches!(id, EventId::Collision(..)))
                .unwrap_or(false)
    }) {
        let members = pilot.members_of(&class);
        if members.len() >= 25 {
            let rts: Vec<_> = members.iter().map(|p| &p.rt).collect();
            if let Ok(cutoff) = ClassCutoff::from_ensemble(&class, &rts, 0.85) {
                if let Some(EventId::Collision(i, _, _)) = class.last_jump() {
                    let mut c = density_identity_check(
                        &ens,
                        &cutoff,
                        i,
                        0,
                        false,
                        true,
                        &format!(
                            "prop 4.2(a) v(t) restricted phi, collision-last class {} (reported)",
                            class.key()
                        ),
                    );
                    c.gating = Some(false);
                    checks.push(c);
                }
            }
        }
    }

    // second order (|alpha| = 2) on the most populated class, n = 4x paths
    let big = Ensemble::<D>::generate(cfg, 4 * cfg.run.n_paths, cfg.run.seed + 2);
    if let Some((key, _)) = ordered.first() {
        let class = EventOrderClass::parse(key).unwrap();
        let members = pilot.members_of(&class);
        let rts: Vec<_> = members.iter().map(|p| &p.rt).collect();
        if let Ok(cutoff) = ClassCutoff::from_ensemble(&class, &rts, 0.85) {
            let (i, r) = (0usize, 0usize);
            let t = big.t();
            let mem: Vec<&PathData<D>> = big.members_of(&class);
            let values: Vec<f64> = mem.iter().map(|p| p.traj.velocity_at(i, t)[r]).collect();
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x), b.max(x))
                });
            let phi = Bump::new(lo - 0.05, hi + 0.05);
            // mixed-partials test function: product of bumps in the two
            // components of particle i
            let values1: Vec<f64> = mem.iter().map(|p| p.traj.velocity_at(i, t)[D - 1]).collect();
            let (lo1, hi1) = values1
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x), b.max(x))
                });
            let phi1 = Bump::new(lo1 - 0.05, hi1 + 0.05);
            let mut lhs = Vec::new();
            let mut rhs = Vec::new();
            let mut mixed_a = Vec::new();
            let mut mixed_b = Vec::new();
            for (idx, p) in mem.iter().enumerate() {
                let y = values[idx];
                let y1 = values1[idx];
                let comps = [(i, r), (i, r)];
                let Ok(h2) = h_alpha(&big.cfg.model, &big.kernels, p, &cutoff, &comps, 3) else {
                    continue;
                };
                lhs.push(phi.deriv2(y) * cutoff.eval(&big.kernels, p));
                rhs.push(phi.eval(y) * h2);
                if D > 1 {
                    let phi_mixed = phi.eval(y) * phi1.eval(y1);
                    let ca = [(i, r), (i, D - 1)];
                    let cb = [(i, D - 1), (i, r)];
                    if let (Ok(ha), Ok(hb)) = (
                        h_alpha(&big.cfg.model, &big.kernels, p, &cutoff, &ca, 3),
                        h_alpha(&big.cfg.model, &big.kernels, p, &cutoff, &cb, 3),
                    ) {
                        mixed_a.push(phi_mixed * ha);
                        mixed_b.push(phi_mixed * hb);
                    }
                }
            }
            let mut check = mc_check(
                &format!("cor 4.3 second derivative |alpha|=2, class {key}"),
                &lhs,
                &rhs,
                3.0,
            );
            check.detail = Some(format!("n = {} in-class paths of {}", lhs.len(), big.paths.len()));
            checks.push(check);
            if D > 1 {
                checks.push(mc_check(
                    &format!("cor 4.3 mixed partials commute, class {key}"),
                    &mixed_a,
                    &mixed_b,
                    3.0,
                ));
            }
        }
    }

    SuiteReport::new("density-ibp", cfg.hash(), checks)
}

// ---------------------------------------------------------------------------
// class structure (criterion 7)
// ---------------------------------------------------------------------------

pub fn suite_classes<const D: usize>(cfg: &RunConfig) -> SuiteReport {
    let ens = Ensemble::<D>::generate(cfg, cfg.run.n_paths, cfg.run.seed);
    let mut checks = Vec::new();
    let t = ens.t();
    let tie = cfg.model.simulation.tie_tol;

    // each path classifies into exactly one key; fractions account for the
    // error paths
    let hist = ens.histogram();
    let classified: usize = hist.values().sum();
    let unclassifiable = ens.paths.len() - classified;
    let frac_err = (ens.n_error + ens.n_suppressed + unclassifiable) as f64 / ens.n_total as f64;
    let total_fraction: f64 = classified as f64 / ens.n_total as f64;
    let mut c = quad_check(
        "lemma 4.4: class fractions sum to 1 - error fraction",
        total_fraction + frac_err,
        1.0,
        ens.n_total,
        1e-12,
    );
    c.detail = Some(format!(
        "classes {}, classified {}, error paths {}, suppressed {}, error fraction {:.2e} (gate 1e-3)",
        hist.len(),
        classified,
        ens.n_error,
        ens.n_suppressed,
        frac_err
    ));
    c.pass = c.pass && frac_err <= 1e-3;
    checks.push(c);

    // openness probe: coordinate balls of radius 1e-6 around in-class points
    // with transversality margin reconstruct into the same class
    let mut rng = crate::rng::path_rng(cfg.run.seed ^ 0x09e7, 0);
    let mut probed = 0;
    let mut escapes = 0;
    let mut margins = Vec::new();
    for p in &ens.paths {
        if probed >= 1000 {
            break;
        }
        let margin = crate::reduced::transversality_margin(&p.rt, t);
        margins.push(margin);
        if margin < 1e-3 {
            continue; // probe only away from class boundaries
        }
        let Some(class) = ens.class_of(p) else { continue };
        let flat = crate::reduced::class_coordinates(&p.rt, &class);
        let mut perturbed = flat.clone();
        for x in perturbed.iter_mut() {
            *x += rng.gen_range(-1e-6..1e-6);
        }
        let coords =
            crate::reduced::coordinates_from_flat::<D>(&class, cfg.model.particles.n, &perturbed);
        match reconstruct(&cfg.model, &ens.kernels, &coords) {
            Ok(traj2) => match crate::reduced::reduce(&traj2) {
                Ok(rt2) => match classify(&rt2, t, tie) {
                    Ok(c2) if c2 == class => {}
                    _ => escapes += 1,
                },
                Err(_) => escapes += 1,
            },
            Err(_) => escapes += 1,
        }
        probed += 1;
    }
    let med = {
        let mut m = margins.clone();
        m.sort_by(|a, b| a.partial_cmp(b).unwrap());
        m.get(m.len() / 2).copied().unwrap_or(0.0)
    };
    let mut c = quad_check(
        "lemma 4.4/4.5 openness probe at radius 1e-6",
        escapes as f64,
        0.0,
        probed,
        0.5,
    );
    c.detail = Some(format!(
        "{probed} in-class perturbations, {escapes} escapes, median transversality margin {med:.3e}"
    ));
    c.pass = c.pass && probed >= 1000;
    checks.push(c);

    SuiteReport::new("classes", cfg.hash(), checks)
}

// ---------------------------------------------------------------------------
// criterion 8: the event-free single-particle oracle
// ---------------------------------------------------------------------------

/// Sub-density oracle for the event-free single-particle class: the law of
/// v(t) restricted to {no event before t} has density
/// p0_v(v) * P(first boundary hit > t | v), the survival factor computed by
/// ball quadrature over the initial position.
pub fn suite_m0_oracle<const D: usize>(cfg: &RunConfig) -> SuiteReport {
    let mut one = cfg.clone();
    one.model.particles.n = 1;
    let kernels = Kernels::<D>::new(&one.model);
    let t = one.model.simulation.t_max;
    let ens = Ensemble::<D>::generate(&one, one.run.n_paths, one.run.seed);
    // in-class paths are those with no events
    let samples: Vec<Vec<f64>> = ens
        .paths
        .iter()
        .filter(|p| p.traj.events.is_empty())
        .map(|p| p.traj.v0[0].to_vec())
        .collect();
    let class_fraction = samples.len() as f64 / ens.n_total as f64;
    let kde = crate::stats::Kde::new(samples.clone());

    // Survival factor: by convexity the free-flight segment stays inside the
    // ball iff its endpoint does, so P(first hit > t | v) is the truncated-
    // gaussian mass of the lens {|x| < R} cap {|x + t v| < R}. Integrated in
    // polar form with exact per-direction radial limits, so no indicator
    // discontinuity ever meets the quadrature.
    let radius = one.model.domain.radius;
    let sx = one.model.initial.s_x;
    let directions: Vec<Vector<D>> = match D {
        2 => (0..1024)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / 1024.0;
                let mut w = [0.0; D];
                w[0] = phi.cos();
                w[1] = phi.sin();
                w
            })
            .collect(),
        _ => crate::quadrature::annulus_rule::<D>(0.5, 1.5, 1, 48)
            .into_iter()
            .map(|(v, _)| unit(&v))
            .collect(),
    };
    let radial_mass = |rmax: f64| -> f64 {
        // int_0^rmax gauss(r) r^{d-1} dr by Gauss-Legendre (smooth integrand)
        crate::quadrature::gauss_legendre(24, 0.0, rmax)
            .iter()
            .map(|&(r, w)| w * (-r * r / (2.0 * sx * sx)).exp() * r.powi(D as i32 - 1))
            .sum()
    };
    let z_pos: f64 = directions.iter().map(|_| radial_mass(radius)).sum();
    let survival = |v: &Vector<D>| -> f64 {
        let shift = scale(v, t);
        directions
            .iter()
            .map(|w| {
                // largest r with |r w + t v| <= R (and r <= R)
                let b = 2.0 * dot(w, &shift);
                let c = dot(&shift, &shift) - radius * radius;
                let disc = b * b - 4.0 * c;
                let rmax = if disc <= 0.0 {
                    0.0
                } else {
                    ((-b + disc.sqrt()) / 2.0).clamp(0.0, radius)
                };
                if rmax <= 0.0 {
                    0.0
                } else {
                    radial_mass(rmax)
                }
            })
            .sum::<f64>()
            / z_pos
    };

    // oracle values cached on a velocity quadrature rule, used both for the
    // exact kernel-smoothed oracle (the expectation of the KDE) and for the
    // realized smoothing-bias report
    let vel_rule = crate::quadrature::annulus_rule::<D>(
        kernels.init_speed.a,
        kernels.init_speed.b,
        48,
        96,
    );
    let oracle_cache: Vec<f64> = vel_rule
        .iter()
        .map(|&(v, _)| kernels.p0_velocity_density(&v) * survival(&v))
        .collect();
    let bw = &kde.bandwidth;
    let kernel_norm: f64 = bw
        .iter()
        .map(|h| 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt()))
        .product();
    let smoothed = |y: &Vector<D>| -> f64 {
        vel_rule
            .iter()
            .zip(oracle_cache.iter())
            .map(|(&(v, w), &f)| {
                let mut q = 0.0;
                for r in 0..D {
                    let z = (y[r] - v[r]) / bw[r];
                    q += z * z;
                }
                w * f * kernel_norm * (-q / 2.0).exp()
            })
            .sum()
    };

    // sup-norm comparison over an interior grid of V: the KDE is matched
    // against its exact expectation (smoothed oracle) within 3 sigma; the
    // smoothing bias |smoothed - oracle| is the realized KDE bias bound
    let mut worst = 0.0f64;
    let mut worst_tol = 0.0f64;
    let mut sup_dev_raw = 0.0f64;
    let mut sup_bias = 0.0f64;
    let grid = crate::quadrature::annulus_rule::<D>(
        kernels.init_speed.a + 0.1,
        kernels.init_speed.b - 0.1,
        8,
        16,
    );
    for &(v, _) in &grid {
        let oracle = kernels.p0_velocity_density(&v) * survival(&v);
        // sub-density estimator over the full ensemble (off-class paths
        // contribute exact zeros, which carry variance)
        let mut sum1 = 0.0;
        let mut sum2 = 0.0;
        for pt in &samples {
            let mut q = 0.0;
            for r in 0..D {
                let z = (v[r] - pt[r]) / kde.bandwidth[r];
                q += z * z;
            }
            let term = kernel_norm * (-q / 2.0).exp();
            sum1 += term;
            sum2 += term * term;
        }
        let n_tot = ens.n_total as f64;
        let est = sum1 / n_tot;
        let kde_err = ((sum2 / n_tot - est * est).max(0.0) / n_tot).sqrt();
        let sm = smoothed(&v);
        let bias = (sm - oracle).abs();
        let tol = bias + 3.0 * kde_err;
        let dev = (est - oracle).abs();
        sup_dev_raw = sup_dev_raw.max(dev);
        sup_bias = sup_bias.max(bias);
        if dev - tol > worst - worst_tol {
            worst = dev;
            worst_tol = tol;
        }
    }
    let mut c = quad_check(
        "theorem 4.5 oracle: event-free single-particle v(t) density vs quadrature",
        worst,
        0.0,
        grid.len(),
        worst_tol.max(1e-12),
    );
    c.detail = Some(format!(
        "class fraction {:.4}, sup |kde - oracle| = {:.3e}, realized kde bias bound {:.3e}, worst margin case {:.3e} vs {:.3e}",
        class_fraction, sup_dev_raw, sup_bias, worst, worst_tol
    ));
    c.pass = worst <= worst_tol;
    SuiteReport::new("m0-oracle", cfg.hash(), vec![c])
}

// ---------------------------------------------------------------------------
// criterion 9: determinism across worker counts
// ---------------------------------------------------------------------------

pub fn suite_determinism<const D: usize>(cfg: &RunConfig) -> SuiteReport {
    let kernels = Kernels::<D>::new(&cfg.model);
    let n = cfg.run.n_paths.min(20_000);
    let a = run_ensemble(&cfg.model, &kernels, n, cfg.run.seed, 1);
    let b = run_ensemble(&cfg.model, &kernels, n, cfg.run.seed, 8);
    let da = crate::store::digest_store(cfg.hash(), cfg.model.particles.n, &a);
    let db = crate::store::digest_store(cfg.hash(), cfg.model.particles.n, &b);
    let mut c = quad_check(
        "store digest identical for 1 vs 8 workers",
        da as f64,
        db as f64,
        n,
        0.5,
    );
    c.pass = da == db;
    c.detail = Some(format!("digest {da:016x} vs {db:016x}, {n} paths"));
    SuiteReport::new("determinism", cfg.hash(), vec![c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn exercise_suite_passes_at_desk_scale() {
        let cfg = RunConfig::default_desk();
        let report = suite_exercise::<2>(&cfg);
        assert!(report.pass, "{}", serde_json::to_string_pretty(&report).unwrap());
    }

    #[test]
    fn determinism_suite_small() {
        let mut cfg = RunConfig::default_desk();
        cfg.run.n_paths = 200;
        let report = suite_determinism::<2>(&cfg);
        assert!(report.pass);
    }
}
