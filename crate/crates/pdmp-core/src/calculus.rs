//! Pathwise stochastic-calculus toolkit: impact Jacobians and their
//! divergence weight, test functionals of product form, perturbation
//! directions and flows on reduced trajectories, directional derivatives,
//! the scalar duality weight z^h, and the divergence of simple vector fields.

use crate::config::ModelConfig;
use crate::error::{CalculusError, KernelError};
use crate::kernels::Kernels;
use crate::linalg::{
    add, axpy, dot, identity, mat_add_scaled, norm, outer, scale, sub, unit, Matrix,
    Vector,
};
use crate::reduced::{
    reconstruct, reduce, Coordinates, PairSlot, ReducedTrajectory, ReflSlot,
};
use crate::simulator::{EventKind, Trajectory};
use crate::smooth::{Bump, PlateauBump};
use std::collections::BTreeMap;

// ---------------------------------------------------------------------------
// Impact Jacobian algebra
// ---------------------------------------------------------------------------

/// d v*/d e = -[e (v - v')^T] - <e, v - v'> I.
pub fn jacobian_vstar<const D: usize>(
    v: &Vector<D>,
    vp: &Vector<D>,
    e: &Vector<D>,
) -> Matrix<D> {
    let w = sub(v, vp);
    let c = dot(e, &w);
    let m = outer(e, &w);
    mat_add_scaled(&scale_mat(&m, -1.0), -c, &identity())
}

fn scale_mat<const D: usize>(m: &Matrix<D>, s: f64) -> Matrix<D> {
    let mut out = *m;
    for row in out.iter_mut() {
        for x in row.iter_mut() {
            *x *= s;
        }
    }
    out
}

/// (d v*/d e)^{-1} = [e (v - v')^T] / (2 <e, v-v'>^2) - I / <e, v-v'>.
pub fn jacobian_vstar_inverse<const D: usize>(
    v: &Vector<D>,
    vp: &Vector<D>,
    e: &Vector<D>,
    singular_threshold: f64,
) -> Result<Matrix<D>, KernelError> {
    let w = sub(v, vp);
    let c = dot(e, &w);
    if c.abs() < singular_threshold {
        return Err(KernelError::NearSingular {
            value: c.abs(),
            threshold: singular_threshold,
        });
    }
    let m = outer(e, &w);
    Ok(mat_add_scaled(
        &scale_mat(&m, 1.0 / (2.0 * c * c)),
        -1.0 / c,
        &identity(),
    ))
}

/// Column-wise ambient divergence of the inverse Jacobian:
/// (d/2) (v - v')^T / <e, v - v'>^2.
pub fn divergence_inverse_jacobian<const D: usize>(
    v: &Vector<D>,
    vp: &Vector<D>,
    e: &Vector<D>,
    singular_threshold: f64,
) -> Result<Vector<D>, KernelError> {
    let w = sub(v, vp);
    let c = dot(e, &w);
    if c.abs() < singular_threshold {
        return Err(KernelError::NearSingular {
            value: c.abs(),
            threshold: singular_threshold,
        });
    }
    Ok(scale(&w, D as f64 / (2.0 * c * c)))
}

/// The divergence weight with an explicit log-gradient of the kernel
/// (test hook: pass zero for an artificially constant kernel).
pub fn d_weight_with_gradient<const D: usize>(
    v: &Vector<D>,
    vp: &Vector<D>,
    e: &Vector<D>,
    grad_log_b: &Vector<D>,
) -> Vector<D> {
    let w = sub(v, vp);
    let c = dot(e, &w);
    let num = axpy(
        &scale(&w, D as f64 + dot(e, grad_log_b)),
        -2.0 * c,
        grad_log_b,
    );
    scale(&num, 1.0 / (2.0 * c * c))
}

/// The divergence weight of the model kernel at an interior point of its
/// angular support.
pub fn d_weight<const D: usize>(
    kernels: &Kernels<D>,
    v: &Vector<D>,
    vp: &Vector<D>,
    e: &Vector<D>,
) -> Result<Vector<D>, KernelError> {
    let g = kernels.grad_e_ln_b(v, vp, e)?;
    Ok(d_weight_with_gradient(v, vp, e, &g))
}

// ---------------------------------------------------------------------------
// Smooth factors
// ---------------------------------------------------------------------------

/// Scalar C-infinity factor of a d-vector argument, with analytic gradient.
#[derive(Debug, Clone)]
pub enum VecFactor<const D: usize> {
    /// bump of |v - center| on (0, radius); even iff center = 0
    RadialBump { center: Vector<D>, radius: f64 },
    /// bump in the speed |v| (even)
    SpeedBump(Bump),
    /// bump in <v, axis>^2 (even)
    AxisSquareBump { axis: Vector<D>, window: Bump },
    One,
}

impl<const D: usize> VecFactor<D> {
    pub fn eval(&self, v: &Vector<D>) -> f64 {
        match self {
            VecFactor::RadialBump { center, radius } => {
                let u = norm(&sub(v, center));
                Bump::new(-radius, *radius).eval(u)
            }
            VecFactor::SpeedBump(b) => b.eval(norm(v)),
            VecFactor::AxisSquareBump { axis, window } => window.eval(dot(v, axis).powi(2)),
            VecFactor::One => 1.0,
        }
    }

    pub fn grad(&self, v: &Vector<D>) -> Vector<D> {
        match self {
            VecFactor::RadialBump { center, radius } => {
                let d = sub(v, center);
                let u = norm(&d);
                let b = Bump::new(-radius, *radius);
                if u >= *radius || u < 1e-300 {
                    return [0.0; D];
                }
                scale(&d, b.deriv(u) / u)
            }
            VecFactor::SpeedBump(b) => {
                let u = norm(v);
                if !b.contains(u) {
                    return [0.0; D];
                }
                scale(v, b.deriv(u) / u)
            }
            VecFactor::AxisSquareBump { axis, window } => {
                let t = dot(v, axis);
                let q = t * t;
                if !window.contains(q) {
                    return [0.0; D];
                }
                scale(axis, window.deriv(q) * 2.0 * t)
            }
            VecFactor::One => [0.0; D],
        }
    }

    /// Even factors satisfy f(v) = f(-v); required for reflection slots.
    pub fn is_even(&self) -> bool {
        match self {
            VecFactor::RadialBump { center, .. } => center.iter().all(|&c| c == 0.0),
            VecFactor::SpeedBump(_) | VecFactor::AxisSquareBump { .. } | VecFactor::One => true,
        }
    }
}

/// Product of vector factors, used per velocity slot.
#[derive(Debug, Clone)]
pub struct SlotFactor<const D: usize>(pub Vec<VecFactor<D>>);

impl<const D: usize> SlotFactor<D> {
    pub fn eval(&self, v: &Vector<D>) -> f64 {
        self.0.iter().map(|f| f.eval(v)).product()
    }

    pub fn grad(&self, v: &Vector<D>) -> Vector<D> {
        let vals: Vec<f64> = self.0.iter().map(|f| f.eval(v)).collect();
        let mut g = [0.0; D];
        for (idx, f) in self.0.iter().enumerate() {
            let rest: f64 = vals
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != idx)
                .map(|(_, &x)| x)
                .product();
            g = axpy(&g, rest, &f.grad(v));
        }
        g
    }

    pub fn is_even(&self) -> bool {
        self.0.iter().all(|f| f.is_even())
    }
}

/// Scalar factor of a one-dimensional argument (gamma slots).
#[derive(Debug, Clone)]
pub enum ScalarFactor {
    Bump(Bump),
    Plateau(PlateauBump),
    One,
}

impl ScalarFactor {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            ScalarFactor::Bump(b) => b.eval(u),
            ScalarFactor::Plateau(p) => p.eval(u),
            ScalarFactor::One => 1.0,
        }
    }

    pub fn deriv(&self, u: f64) -> f64 {
        match self {
            ScalarFactor::Bump(b) => b.deriv(u),
            ScalarFactor::Plateau(p) => p.deriv(u),
            ScalarFactor::One => 0.0,
        }
    }
}

/// Per-particle initial-state factor: optional position and velocity parts.
#[derive(Debug, Clone, Default)]
pub struct InitialFactor<const D: usize> {
    pub position: BTreeMap<usize, VecFactor<D>>,
    pub velocity: BTreeMap<usize, VecFactor<D>>,
}

impl<const D: usize> InitialFactor<D> {
    pub fn eval(&self, x0: &[Vector<D>], v0: &[Vector<D>]) -> f64 {
        let mut out = 1.0;
        for (&i, f) in &self.position {
            out *= f.eval(&x0[i]);
        }
        for (&i, f) in &self.velocity {
            out *= f.eval(&v0[i]);
        }
        out
    }

    /// Directional derivative along (a0_x, a0_v), as derivative-of-factor
    /// times the product of the others.
    fn directional(&self, x0: &[Vector<D>], v0: &[Vector<D>], dir: &Direction<D>) -> f64 {
        let full = self.eval(x0, v0);
        let mut out = 0.0;
        for (&i, f) in &self.position {
            let fi = f.eval(&x0[i]);
            let rest = if fi != 0.0 {
                full / fi
            } else {
                self.eval_excluding(x0, v0, Some(i), None)
            };
            if let Some(ax) = dir.a0_x.get(i) {
                out += rest * dot(&f.grad(&x0[i]), ax);
            }
        }
        for (&i, f) in &self.velocity {
            let fi = f.eval(&v0[i]);
            let rest = if fi != 0.0 {
                full / fi
            } else {
                self.eval_excluding(x0, v0, None, Some(i))
            };
            if let Some(av) = dir.a0_v.get(i) {
                out += rest * dot(&f.grad(&v0[i]), av);
            }
        }
        out
    }

    fn eval_excluding(
        &self,
        x0: &[Vector<D>],
        v0: &[Vector<D>],
        skip_pos: Option<usize>,
        skip_vel: Option<usize>,
    ) -> f64 {
        let mut out = 1.0;
        for (&i, f) in &self.position {
            if Some(i) != skip_pos {
                out *= f.eval(&x0[i]);
            }
        }
        for (&i, f) in &self.velocity {
            if Some(i) != skip_vel {
                out *= f.eval(&v0[i]);
            }
        }
        out
    }
}

/// Product-form test functional: an initial factor, per-window gamma
/// factors, per-collision factors in v_i(sigma_k), and even per-reflection
/// factors in v_i(tau_l).
///
/// Convention: on a path missing one of the referenced slots the functional
/// evaluates to zero (it is only ever paired with cutoffs supported where
/// all slots are realized).
#[derive(Debug, Clone, Default)]
pub struct TestFunctional<const D: usize> {
    pub f0: Option<InitialFactor<D>>,
    pub gamma_factors: BTreeMap<PairSlot, ScalarFactor>,
    pub collision_factors: BTreeMap<PairSlot, SlotFactor<D>>,
    pub reflection_factors: BTreeMap<ReflSlot, SlotFactor<D>>,
}

impl<const D: usize> TestFunctional<D> {
    pub fn validate(&self) -> Result<(), CalculusError> {
        for f in self.reflection_factors.values() {
            if !f.is_even() {
                return Err(CalculusError::UnsupportedDirection);
            }
        }
        Ok(())
    }

    pub fn eval(&self, rt: &ReducedTrajectory<D>) -> f64 {
        let c = &rt.coords;
        let mut out = match &self.f0 {
            Some(f) => f.eval(&c.x0, &c.v0),
            None => 1.0,
        };
        for (slot, f) in &self.gamma_factors {
            match c.gammas.get(slot) {
                Some(&g) => out *= f.eval(g),
                None => return 0.0,
            }
        }
        for (slot, f) in &self.collision_factors {
            match c.collision_vs.get(slot) {
                Some(a) => out *= f.eval(a),
                None => return 0.0,
            }
        }
        for (slot, f) in &self.reflection_factors {
            match c.reflection_vs.get(slot) {
                Some(b) => out *= f.eval(b),
                None => return 0.0,
            }
        }
        out
    }

    /// Analytic directional derivative (the flow shifts each referenced
    /// coordinate at unit rate along the matching direction entry).
    pub fn directional_derivative(
        &self,
        rt: &ReducedTrajectory<D>,
        dir: &Direction<D>,
    ) -> Result<f64, CalculusError> {
        if !dir.supported_by(self) {
            return Err(CalculusError::UnsupportedDirection);
        }
        let c = &rt.coords;
        // factor values with zero-sensitivity handled by product rule
        let mut parts: Vec<(f64, f64)> = Vec::new(); // (value, d/ds value)
        if let Some(f) = &self.f0 {
            parts.push((f.eval(&c.x0, &c.v0), f.directional(&c.x0, &c.v0, dir)));
        }
        for (slot, f) in &self.gamma_factors {
            let Some(&g) = c.gammas.get(slot) else {
                return Ok(0.0);
            };
            let rate = dir.c.get(slot).copied().unwrap_or(0.0);
            parts.push((f.eval(g), f.deriv(g) * rate));
        }
        for (slot, f) in &self.collision_factors {
            let Some(a) = c.collision_vs.get(slot) else {
                return Ok(0.0);
            };
            let rate = dir.alpha_c.get(slot).copied().unwrap_or([0.0; D]);
            parts.push((f.eval(a), dot(&f.grad(a), &rate)));
        }
        for (slot, f) in &self.reflection_factors {
            let Some(b) = c.reflection_vs.get(slot) else {
                return Ok(0.0);
            };
            let rate = dir.alpha_r.get(slot).copied().unwrap_or([0.0; D]);
            parts.push((f.eval(b), dot(&f.grad(b), &rate)));
        }
        // product rule
        let mut out = 0.0;
        for idx in 0..parts.len() {
            let mut term = parts[idx].1;
            for (j, &(val, _)) in parts.iter().enumerate() {
                if j != idx {
                    term *= val;
                }
            }
            out += term;
        }
        Ok(out)
    }

    /// Slots this functional depends on (used for direction membership).
    fn has_gamma(&self, slot: &PairSlot) -> bool {
        self.gamma_factors.contains_key(slot)
    }
    fn has_collision(&self, slot: &PairSlot) -> bool {
        self.collision_factors.contains_key(slot)
    }
    fn has_reflection(&self, slot: &ReflSlot) -> bool {
        self.reflection_factors.contains_key(slot)
    }
}

// ---------------------------------------------------------------------------
// Directions and flows
// ---------------------------------------------------------------------------

/// A finitely supported perturbation direction H = (a(0); c; alpha).
#[derive(Debug, Clone, Default)]
pub struct Direction<const D: usize> {
    /// perturbation of initial positions (empty = zero)
    pub a0_x: Vec<Vector<D>>,
    /// perturbation of initial velocities (empty = zero)
    pub a0_v: Vec<Vector<D>>,
    /// per-window timing-control rates c_k(i,j)
    pub c: BTreeMap<PairSlot, f64>,
    /// per-collision velocity rates a*_{i,j;k}
    pub alpha_c: BTreeMap<PairSlot, Vector<D>>,
    /// per-reflection velocity rates b*_{i;l}
    pub alpha_r: BTreeMap<ReflSlot, Vector<D>>,
}

impl<const D: usize> Direction<D> {
    pub fn zero() -> Self {
        Direction::default()
    }

    pub fn with_initial(n: usize) -> Self {
        Direction {
            a0_x: vec![[0.0; D]; n],
            a0_v: vec![[0.0; D]; n],
            ..Direction::default()
        }
    }

    pub fn norm_h(&self) -> f64 {
        let mut s = 0.0;
        for x in self.a0_x.iter().chain(self.a0_v.iter()) {
            s += dot(x, x);
        }
        for v in self.c.values() {
            s += v * v;
        }
        for v in self.alpha_c.values().chain(self.alpha_r.values()) {
            s += dot(v, v);
        }
        s.sqrt()
    }

    pub fn has_initial(&self) -> bool {
        self.a0_x.iter().chain(self.a0_v.iter()).any(|v| norm(v) != 0.0)
    }

    /// H is in the subspace attached to F: every nonzero component pairs
    /// with a coordinate F depends on.
    pub fn supported_by(&self, f: &TestFunctional<D>) -> bool {
        if self.has_initial() && f.f0.is_none() {
            return false;
        }
        self.c.iter().all(|(s, v)| *v == 0.0 || f.has_gamma(s))
            && self
                .alpha_c
                .iter()
                .all(|(s, v)| norm(v) == 0.0 || f.has_collision(s))
            && self
                .alpha_r
                .iter()
                .all(|(s, v)| norm(v) == 0.0 || f.has_reflection(s))
    }

    /// All slots referenced by the direction must be realized on the path.
    pub fn realized_on(&self, rt: &ReducedTrajectory<D>) -> bool {
        self.c.keys().all(|s| rt.coords.gammas.contains_key(s))
            && self
                .alpha_c
                .keys()
                .all(|s| rt.coords.collision_vs.contains_key(s))
            && self
                .alpha_r
                .keys()
                .all(|s| rt.coords.reflection_vs.contains_key(s))
    }
}

/// Coordinates shifted by s H (the perturbation side of the flow).
pub fn perturb_coordinates<const D: usize>(
    coords: &Coordinates<D>,
    dir: &Direction<D>,
    s: f64,
) -> Result<Coordinates<D>, CalculusError> {
    let mut out = coords.clone();
    if !dir.a0_x.is_empty() {
        for (x, a) in out.x0.iter_mut().zip(dir.a0_x.iter()) {
            *x = axpy(x, s, a);
        }
    }
    if !dir.a0_v.is_empty() {
        for (v, a) in out.v0.iter_mut().zip(dir.a0_v.iter()) {
            *v = axpy(v, s, a);
        }
    }
    for (slot, rate) in &dir.c {
        let g = out
            .gammas
            .get_mut(slot)
            .ok_or(CalculusError::UnsupportedDirection)?;
        *g += s * rate;
        if *g <= 0.0 || *g >= 1.0 {
            return Err(CalculusError::Path(
                crate::error::PathError::InvalidCoordinate {
                    slot: format!("gamma{slot:?}"),
                },
            ));
        }
    }
    for (slot, rate) in &dir.alpha_c {
        let a = out
            .collision_vs
            .get_mut(slot)
            .ok_or(CalculusError::UnsupportedDirection)?;
        *a = axpy(a, s, rate);
    }
    for (slot, rate) in &dir.alpha_r {
        let b = out
            .reflection_vs
            .get_mut(slot)
            .ok_or(CalculusError::UnsupportedDirection)?;
        *b = axpy(b, s, rate);
    }
    Ok(out)
}

/// The flow: perturb the coordinates by s H and rebuild the trajectory.
/// Errors with OrderChanged when the realized event order differs from the
/// base path (the caller shrinks s), and propagates invalid coordinates.
pub fn flow<const D: usize>(
    cfg: &ModelConfig,
    kernels: &Kernels<D>,
    rt: &ReducedTrajectory<D>,
    dir: &Direction<D>,
    s: f64,
) -> Result<(ReducedTrajectory<D>, Trajectory<D>), CalculusError> {
    let coords = perturb_coordinates(&rt.coords, dir, s)?;
    let traj = reconstruct(cfg, kernels, &coords)?;
    let new_rt = reduce(&traj)?;
    if new_rt.identity_sequence() != rt.identity_sequence() {
        return Err(CalculusError::OrderChanged);
    }
    Ok((new_rt, traj))
}

/// Two-level Richardson extrapolation of d/ds F(flow(rt, H, s)) at s = 0,
/// with automatic step shrinking while the event order changes.
pub fn flow_derivative<const D: usize, F>(
    cfg: &ModelConfig,
    kernels: &Kernels<D>,
    rt: &ReducedTrajectory<D>,
    dir: &Direction<D>,
    base_step: f64,
    max_shrinks: usize,
    eval: F,
) -> Result<f64, CalculusError>
where
    F: Fn(&ReducedTrajectory<D>, &Trajectory<D>) -> Result<f64, CalculusError>,
{
    let scale_h = dir.norm_h().max(1e-12);
    let mut h = base_step / scale_h;
    let mut last_err = CalculusError::OrderChanged;
    for _ in 0..=max_shrinks {
        let attempt = (|| -> Result<f64, CalculusError> {
            let mut d = [0.0; 2];
            for (idx, step) in [h, h / 2.0].into_iter().enumerate() {
                let (rp, tp) = flow(cfg, kernels, rt, dir, step)?;
                let (rm, tm) = flow(cfg, kernels, rt, dir, -step)?;
                d[idx] = (eval(&rp, &tp)? - eval(&rm, &tm)?) / (2.0 * step);
            }
            Ok((4.0 * d[1] - d[0]) / 3.0)
        })();
        match attempt {
            Ok(v) => return Ok(v),
            // an order change can also surface as replay running out of (or
            // off) coordinates when the perturbed path grows or loses events
            Err(e @ CalculusError::OrderChanged)
            | Err(e @ CalculusError::Path(crate::error::PathError::InvalidCoordinate { .. }))
            | Err(e @ CalculusError::Path(crate::error::PathError::CoordinateExhausted { .. })) => {
                last_err = e;
                h /= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

// ---------------------------------------------------------------------------
// Perturbation process h(alpha, Y)
// ---------------------------------------------------------------------------

/// Piecewise-constant pathwise velocity derivative: the process h(alpha, Y)
/// with the collision coupling a_{j,i;k} = h_i- + h_j- - a_{i,j;k} and the
/// reflection replacement b_{i;l}.
#[derive(Debug, Clone)]
pub struct PerturbationProcess<const D: usize> {
    /// segment start times; times[0] = 0
    pub times: Vec<f64>,
    /// per-segment values, one d-vector per particle
    pub values: Vec<Vec<Vector<D>>>,
}

impl<const D: usize> PerturbationProcess<D> {
    /// Right-continuous evaluation.
    pub fn value_at(&self, t: f64) -> &Vec<Vector<D>> {
        let mut idx = 0;
        for (k, &tk) in self.times.iter().enumerate() {
            if tk <= t {
                idx = k;
            } else {
                break;
            }
        }
        &self.values[idx]
    }
}

/// Build h(alpha, Y) for the realized path: h(0) is the velocity part of
/// a(0); at each realized collision the pair components are replaced via the
/// coupling, at each reflection the particle component is replaced.
pub fn build_h<const D: usize>(
    dir: &Direction<D>,
    traj: &Trajectory<D>,
) -> PerturbationProcess<D> {
    let n = traj.n_particles();
    let mut current: Vec<Vector<D>> = if dir.a0_v.is_empty() {
        vec![[0.0; D]; n]
    } else {
        dir.a0_v.clone()
    };
    let mut times = vec![0.0];
    let mut values = vec![current.clone()];
    for ev in &traj.events {
        match &ev.kind {
            EventKind::Collision {
                i,
                j,
                k,
                suppressed: false,
                ..
            } => {
                let a = dir.alpha_c.get(&(*i, *j, *k)).copied().unwrap_or([0.0; D]);
                let coupled = sub(&add(&current[*i], &current[*j]), &a);
                current[*i] = a;
                current[*j] = coupled;
            }
            EventKind::Reflection { i, l, .. } => {
                current[*i] = dir.alpha_r.get(&(*i, *l)).copied().unwrap_or([0.0; D]);
            }
            _ => continue,
        }
        times.push(ev.t);
        values.push(current.clone());
    }
    PerturbationProcess { times, values }
}

// ---------------------------------------------------------------------------
// z weight and divergence
// ---------------------------------------------------------------------------

/// Per-path cache: the trajectory, its reduced coordinates, and the lookup
/// tables the calculus needs (pre-collision pair states, recovered impact
/// directions, reflection normals).
#[derive(Debug, Clone)]
pub struct PathData<const D: usize> {
    pub traj: Trajectory<D>,
    pub rt: ReducedTrajectory<D>,
    pub collision_info: BTreeMap<PairSlot, CollisionInfo<D>>,
    pub reflection_info: BTreeMap<ReflSlot, ReflectionInfo<D>>,
}

#[derive(Debug, Clone)]
pub struct CollisionInfo<const D: usize> {
    pub v_pre: (Vector<D>, Vector<D>),
    /// impact direction recovered from the velocity transfer
    pub e: Vector<D>,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct ReflectionInfo<const D: usize> {
    pub n_out: Vector<D>,
    pub v_post: Vector<D>,
    pub tau: f64,
}

impl<const D: usize> PathData<D> {
    pub fn new(traj: Trajectory<D>, radius: f64) -> Result<Self, CalculusError> {
        let rt = reduce(&traj)?;
        let mut collision_info = BTreeMap::new();
        let mut reflection_info = BTreeMap::new();
        for ev in &traj.events {
            match &ev.kind {
                EventKind::Collision {
                    i,
                    j,
                    k,
                    v_pre,
                    v_post,
                    suppressed: false,
                    ..
                } => {
                    let transfer = sub(&v_pre.0, &v_post.0);
                    collision_info.insert(
                        (*i, *j, *k),
                        CollisionInfo {
                            v_pre: *v_pre,
                            e: unit(&transfer),
                            sigma: ev.t,
                        },
                    );
                }
                EventKind::Reflection {
                    i, l, x_hit, v_post, ..
                } => {
                    reflection_info.insert(
                        (*i, *l),
                        ReflectionInfo {
                            n_out: scale(x_hit, 1.0 / radius),
                            v_post: *v_post,
                            tau: ev.t,
                        },
                    );
                }
                _ => {}
            }
        }
        Ok(PathData {
            traj,
            rt,
            collision_info,
            reflection_info,
        })
    }
}

/// The scalar weight z^h: initial score, timing-control scores, collision
/// divergence weights, and reflection scores, paired with the direction's
/// entries slot by slot.
pub fn z_weight<const D: usize>(
    kernels: &Kernels<D>,
    path: &PathData<D>,
    dir: &Direction<D>,
) -> Result<f64, CalculusError> {
    let mut z = 0.0;
    let coords = &path.rt.coords;
    if !dir.a0_x.is_empty() || !dir.a0_v.is_empty() {
        for i in 0..coords.x0.len() {
            if let Some(ax) = dir.a0_x.get(i) {
                z += dot(ax, &kernels.grad_x_ln_p0(&coords.x0[i]));
            }
            if let Some(av) = dir.a0_v.get(i) {
                if norm(av) > 0.0 {
                    z += dot(av, &kernels.grad_v_ln_p0(&coords.v0[i])?);
                }
            }
        }
    }
    for (slot, rate) in &dir.c {
        if *rate == 0.0 {
            continue;
        }
        let g = coords
            .gammas
            .get(slot)
            .ok_or(CalculusError::UnsupportedDirection)?;
        z += rate * kernels.dlog_gamma(*g)?;
    }
    for (slot, rate) in &dir.alpha_c {
        if norm(rate) == 0.0 {
            continue;
        }
        let info = path
            .collision_info
            .get(slot)
            .ok_or(CalculusError::UnsupportedDirection)?;
        let dwt = d_weight(kernels, &info.v_pre.0, &info.v_pre.1, &info.e)?;
        z += dot(rate, &dwt);
    }
    for (slot, rate) in &dir.alpha_r {
        if norm(rate) == 0.0 {
            continue;
        }
        let info = path
            .reflection_info
            .get(slot)
            .ok_or(CalculusError::UnsupportedDirection)?;
        z += dot(rate, &kernels.grad_v_ln_m(&info.n_out, &info.v_post)?);
    }
    Ok(z)
}

/// delta(Phi) = -sum_j (d_{h_j} G_j + z^{h_j} G_j) for Phi = sum_j G_j h_j.
pub fn delta<const D: usize>(
    kernels: &Kernels<D>,
    path: &PathData<D>,
    terms: &[(&TestFunctional<D>, &Direction<D>)],
) -> Result<f64, CalculusError> {
    let mut out = 0.0;
    for (g, h) in terms {
        let dh = g.directional_derivative(&path.rt, h)?;
        let gval = g.eval(&path.rt);
        let zh = if gval != 0.0 || dh != 0.0 {
            z_weight(kernels, path, h)?
        } else {
            0.0
        };
        out -= dh + zh * gval;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Finite-dimensional IBP checks
// ---------------------------------------------------------------------------

/// Vector test field psi(v) = profile(v) * dir, with analytic divergence.
#[derive(Debug, Clone)]
pub struct BumpField<const D: usize> {
    pub profile: SlotFactor<D>,
    pub dir: Vector<D>,
}

impl<const D: usize> BumpField<D> {
    pub fn eval(&self, v: &Vector<D>) -> Vector<D> {
        scale(&self.dir, self.profile.eval(v))
    }

    pub fn divergence(&self, v: &Vector<D>) -> f64 {
        dot(&self.profile.grad(v), &self.dir)
    }
}

/// Hemisphere IBP residual for the inner identity of the collision-slot
/// integration by parts: quadrature of
///   <grad phi(v*), psi(v*)> B  +  phi(v*) [div psi(v*) + <psi(v*), d>] B
/// over the hemisphere. The first moment is returned as lhs, the negated
/// second as rhs (the identity asserts lhs = rhs).
pub fn hemisphere_ibp_check<const D: usize>(
    kernels: &Kernels<D>,
    v: &Vector<D>,
    vp: &Vector<D>,
    phi: &SlotFactor<D>,
    psi: &BumpField<D>,
    order: usize,
) -> Result<(f64, f64), CalculusError> {
    let w = sub(v, vp);
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (e, wt) in crate::geometry::hemisphere_quadrature(&w, order) {
        let b = kernels.b_raw(v, vp, &e);
        if b == 0.0 {
            continue;
        }
        let (vs, _) = kernels.post_impact(v, vp, &e);
        let dwt = d_weight(kernels, v, vp, &e)?;
        lhs += wt * dot(&phi.grad(&vs), &psi.eval(&vs)) * b;
        rhs -= wt * phi.eval(&vs) * (psi.divergence(&vs) + dot(&psi.eval(&vs), &dwt)) * b;
    }
    Ok((lhs, rhs))
}

/// Boundary IBP residual (the reflection-slot identity): quadrature over V of
///   <grad phi, psi> m + phi div psi m + phi <psi, grad m>
/// which vanishes for the model redistribution density.
pub fn boundary_ibp_check<const D: usize>(
    kernels: &Kernels<D>,
    n_out: &Vector<D>,
    phi: &SlotFactor<D>,
    psi: &BumpField<D>,
    n_radial: usize,
    n_angular: usize,
) -> f64 {
    // every term carries a factor of m or grad m, so only the speed support
    // of the redistribution kernel contributes
    let rule = crate::quadrature::annulus_rule::<D>(
        kernels.refl_speed.a,
        kernels.refl_speed.b,
        n_radial,
        n_angular,
    );
    let mut acc = 0.0;
    for (v, wt) in rule {
        let m = kernels.m_density(n_out, &v);
        if m == 0.0 {
            continue;
        }
        let grad_m = match kernels.grad_v_ln_m(n_out, &v) {
            Ok(g) => scale(&g, m),
            Err(_) => [0.0; D],
        };
        let term = dot(&phi.grad(&v), &psi.eval(&v)) * m
            + phi.eval(&v) * psi.divergence(&v) * m
            + phi.eval(&v) * dot(&psi.eval(&v), &grad_m);
        acc += wt * term;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::linalg::mat_vec;

    fn kernels2() -> Kernels<2> {
        Kernels::<2>::new(&ModelConfig::default_desk())
    }

    #[test]
    fn jacobian_example_head_on() {
        let j = jacobian_vstar(&[1.0, 0.0], &[-1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(j, [[-4.0, 0.0], [0.0, -2.0]]);
        let inv = jacobian_vstar_inverse(&[1.0, 0.0], &[-1.0, 0.0], &[1.0, 0.0], 1e-6).unwrap();
        assert_eq!(inv, [[-0.25, 0.0], [0.0, -0.5]]);
        let div = divergence_inverse_jacobian(&[1.0, 0.0], &[-1.0, 0.0], &[1.0, 0.0], 1e-6)
            .unwrap();
        assert_eq!(div, [0.5, 0.0]);
    }

    #[test]
    fn jacobian_product_is_identity_and_det_consistent() {
        let mut rng = crate::rng::path_rng(20, 0);
        use rand::Rng;
        for _ in 0..1000 {
            let v = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let vp = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let e = crate::kernels::uniform_direction::<2, _>(&mut rng);
            let c = dot(&e, &sub(&v, &vp));
            if c.abs() < 0.05 {
                continue;
            }
            let j = jacobian_vstar(&v, &vp, &e);
            let inv = jacobian_vstar_inverse(&v, &vp, &e, 1e-9).unwrap();
            let prod = crate::linalg::mat_mul(&j, &inv);
            for r in 0..2 {
                for s in 0..2 {
                    let want = if r == s { 1.0 } else { 0.0 };
                    assert!((prod[r][s] - want).abs() < 1e-12);
                }
            }
            let dd = crate::linalg::det(&j) * crate::linalg::det(&inv);
            assert!((dd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let v = [1.2, 0.3];
        let vp = [-0.7, 0.9];
        let e = unit(&[0.8, 0.3]);
        let j = jacobian_vstar(&v, &vp, &e);
        let h = 1e-6;
        for r in 0..2 {
            for s in 0..2 {
                let mut ep = e;
                let mut em = e;
                ep[s] += h;
                em[s] -= h;
                let k = kernels2();
                let fp = k.post_impact(&v, &vp, &ep).0[r];
                let fm = k.post_impact(&v, &vp, &em).0[r];
                let fd = (fp - fm) / (2.0 * h);
                assert!((j[r][s] - fd).abs() < 1e-6, "({r},{s})");
            }
        }
    }

    #[test]
    fn divergence_matches_finite_differences_and_scales() {
        let v = [1.2, 0.3];
        let vp = [-0.7, 0.9];
        let e = unit(&[0.8, 0.3]);
        let div = divergence_inverse_jacobian(&v, &vp, &e, 1e-9).unwrap();
        let h = 1e-5;
        for s in 0..2 {
            let mut fd = 0.0;
            for r in 0..2 {
                let mut ep = e;
                let mut em = e;
                ep[r] += h;
                em[r] -= h;
                fd += (jacobian_vstar_inverse(&v, &vp, &ep, 1e-9).unwrap()[r][s]
                    - jacobian_vstar_inverse(&v, &vp, &em, 1e-9).unwrap()[r][s])
                    / (2.0 * h);
            }
            assert!((div[s] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "col {s}");
        }
        // homogeneity: w -> lambda w scales the divergence by 1/lambda
        let lam = 2.5;
        let vmid = scale(&add(&v, &vp), 0.5);
        let v2 = axpy(&vmid, lam, &sub(&v, &vmid));
        let vp2 = axpy(&vmid, lam, &sub(&vp, &vmid));
        let div2 = divergence_inverse_jacobian(&v2, &vp2, &e, 1e-9).unwrap();
        for s in 0..2 {
            assert!((div2[s] - div[s] / lam).abs() < 1e-12);
        }
    }

    #[test]
    fn d_weight_constant_kernel_reduces_to_leading_term() {
        let v = [1.2, 0.3];
        let vp = [-0.7, 0.9];
        let e = unit(&[0.8, 0.3]);
        let w = sub(&v, &vp);
        let c = dot(&e, &w);
        let d = d_weight_with_gradient(&v, &vp, &e, &[0.0, 0.0]);
        let want = scale(&w, 2.0 / (2.0 * c * c));
        assert!((d[0] - want[0]).abs() < 1e-14 && (d[1] - want[1]).abs() < 1e-14);
    }

    #[test]
    fn exercise_d_product_rule_pointwise() {
        // div_e[(dv*/de)^{-1} psi(v*) B] = [div psi (v*) + <psi(v*), d>] B,
        // by central finite differences in ambient coordinates
        let k = kernels2();
        let v = [1.2, 0.3];
        let vp = [-0.7, 0.9];
        let w = sub(&v, &vp);
        let frame = crate::linalg::orthonormal_complement(&w);
        let nw = unit(&w);
        let psi = |x: &Vector<2>| [x[0].sin() + 0.3 * x[1] * x[1], x[1].cos() - 0.2 * x[0]];
        let div_psi = |x: &Vector<2>| x[0].cos() - x[1].sin();
        let field = |e: &Vector<2>| -> Vector<2> {
            let inv = jacobian_vstar_inverse(&v, &vp, e, 1e-12).unwrap();
            let vs = k.post_impact(&v, &vp, e).0;
            scale(&mat_vec(&inv, &psi(&vs)), k.b_raw(&v, &vp, &e2(e)))
        };
        fn e2(e: &Vector<2>) -> Vector<2> {
            *e
        }
        let h = 1e-6;
        let mut checked = 0;
        for idx in 0..100 {
            let theta = -1.4 + 2.8 * (idx as f64 + 0.5) / 100.0;
            let e = axpy(&scale(&nw, theta.cos()), theta.sin(), &frame[0]);
            if k.b_raw(&v, &vp, &e) < 1e-4 {
                continue;
            }
            let mut fd = 0.0;
            for r in 0..2 {
                let mut ep = e;
                let mut em = e;
                ep[r] += h;
                em[r] -= h;
                fd += (field(&ep)[r] - field(&em)[r]) / (2.0 * h);
            }
            let vs = k.post_impact(&v, &vp, &e).0;
            let dwt = d_weight(&k, &v, &vp, &e).unwrap();
            let analytic =
                (div_psi(&vs) + dot(&psi(&vs), &dwt)) * k.b_raw(&v, &vp, &e);
            assert!(
                (fd - analytic).abs() < 1e-5 * (1.0 + analytic.abs()),
                "theta {theta}: fd {fd} vs {analytic}"
            );
            checked += 1;
        }
        assert!(checked > 40);
    }

    #[test]
    fn boundary_ibp_residual_small() {
        let k = kernels2();
        let n_out = [0.0, 1.0];
        let phi = SlotFactor(vec![VecFactor::RadialBump {
            center: [0.2, -1.0],
            radius: 0.5,
        }]);
        let psi = BumpField {
            profile: SlotFactor(vec![VecFactor::RadialBump {
                center: [-0.1, -0.9],
                radius: 0.6,
            }]),
            dir: [0.7, -0.4],
        };
        let res = boundary_ibp_check(&k, &n_out, &phi, &psi, 96, 384);
        assert!(res.abs() < 1e-7, "residual {res}");
        // psi = 0 gives exactly zero
        let zero = BumpField {
            profile: SlotFactor(vec![VecFactor::One]),
            dir: [0.0, 0.0],
        };
        assert_eq!(boundary_ibp_check(&k, &n_out, &phi, &zero, 16, 32), 0.0);
    }

    #[test]
    fn build_h_examples() {
        // hand-built trajectory log: one collision then one reflection
        let traj = Trajectory::<2> {
            x0: vec![[0.0, 0.0], [0.5, 0.0]],
            v0: vec![[1.0, 0.0], [-1.0, 0.0]],
            t_max: 1.0,
            events: vec![
                crate::simulator::Event {
                    t: 0.3,
                    kind: EventKind::Collision {
                        i: 0,
                        j: 1,
                        k: 1,
                        s_entry: 0.2,
                        t_exit_pred: 0.5,
                        gamma: 0.4,
                        e: [1.0, 0.0],
                        v_pre: ([1.0, 0.0], [-1.0, 0.0]),
                        v_post: ([-1.0, 0.0], [1.0, 0.0]),
                        suppressed: false,
                    },
                },
                crate::simulator::Event {
                    t: 0.7,
                    kind: EventKind::Reflection {
                        i: 0,
                        l: 1,
                        x_hit: [-1.0, 0.0],
                        v_pre: [-1.0, 0.0],
                        v_post: [0.9, 0.1],
                    },
                },
            ],
            stats: Default::default(),
        };
        // zero direction: identically zero process
        let h0 = build_h(&Direction::<2>::zero(), &traj);
        for seg in &h0.values {
            for v in seg {
                assert_eq!(*v, [0.0, 0.0]);
            }
        }
        // single collision slot: after sigma, h_i = u and h_j = -u
        let mut dir = Direction::<2>::zero();
        dir.alpha_c.insert((0, 1, 1), [0.3, -0.2]);
        let h = build_h(&dir, &traj);
        let mid = h.value_at(0.5);
        assert_eq!(mid[0], [0.3, -0.2]);
        assert_eq!(mid[1], [-0.3, 0.2]);
        // after the reflection of particle 0 its component is replaced by b (here zero)
        let late = h.value_at(0.9);
        assert_eq!(late[0], [0.0, 0.0]);
        assert_eq!(late[1], [-0.3, 0.2]);
        // single reflection slot
        let mut dir_r = Direction::<2>::zero();
        dir_r.alpha_r.insert((0, 1), [0.5, 0.5]);
        let hr = build_h(&dir_r, &traj);
        assert_eq!(hr.value_at(0.9)[0], [0.5, 0.5]);
        assert_eq!(hr.value_at(0.5)[0], [0.0, 0.0]);
    }
}
