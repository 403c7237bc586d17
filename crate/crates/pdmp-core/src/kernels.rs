//! Concrete model functions: collision kernel B with its normalized impact
//! density, boundary redistribution kernel M, collision-timing density
//! g_gamma, and the initial density p_0 — each with analytic log-gradients
//! and rejection samplers.
//!
//! B is built from the pair invariants |v + v'|, |v - v'|, |<e, v - v'>|,
//! which gives symmetry in (v, v') and invariance under the specular exchange
//! by construction. All profiles are C-infinity bumps or smooth steps, so the
//! log-gradient integrability assumptions hold with room to spare.

use crate::config::ModelConfig;
use crate::error::KernelError;
use crate::geometry::{Domain, VelocitySet};
use crate::linalg::{axpy, dot, norm, scale, unit, Vector};
use crate::smooth::{Bump, SmoothStep};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Kernels<const D: usize> {
    pub domain: Domain,
    pub vset: VelocitySet,
    pub beta: f64,
    // collision kernel
    pub ang: Bump,
    pub rel: SmoothStep,
    pub sum_amp: f64,
    pub sum_bump: Bump,
    pub r0: f64,
    // redistribution kernel
    pub cone: SmoothStep,
    pub refl_speed: Bump,
    pub eps_cone: f64,
    m_norm: f64,
    // gamma control density
    pub gamma_bump: Bump,
    gamma_norm: f64,
    // initial density
    pub s_x: f64,
    pub init_speed: Bump,
    v0_norm: f64,
    rejection_budget: usize,
}

impl<const D: usize> Kernels<D> {
    pub fn new(cfg: &ModelConfig) -> Self {
        assert_eq!(cfg.domain.d, D, "config dimension mismatch");
        let vset = VelocitySet {
            v_min: cfg.particles.v_min,
            v_max: cfg.particles.v_max,
        };
        let ck = &cfg.collision_kernel;
        let rd = &cfg.redistribution;
        let ang = Bump::new(ck.delta_angle, 1.0 - ck.delta_angle);
        let cone = SmoothStep::new(rd.eps_cone, rd.eps_cone + rd.cone_width);
        let refl_speed = Bump::new(rd.speed_lo, rd.speed_hi);
        let gamma_bump = Bump::new(cfg.gamma.eps_gamma, 1.0 - cfg.gamma.eps_gamma);
        let init_speed = Bump::new(cfg.initial.speed_lo, cfg.initial.speed_hi);

        let nq = (4 * cfg.quadrature.interval_order).max(256);
        let gamma_norm = gamma_bump.integral(nq);

        // m normalization: angular part times the radial moment of the speed bump
        let radial: f64 = crate::quadrature::gauss_legendre(nq, rd.speed_lo, rd.speed_hi)
            .iter()
            .map(|&(r, w)| w * refl_speed.eval(r) * r.powi(D as i32 - 1))
            .sum();
        let angular = match D {
            2 => {
                // int over alpha in (-pi/2, pi/2) of cone(cos alpha)
                crate::quadrature::gauss_legendre(
                    2 * nq,
                    -std::f64::consts::FRAC_PI_2,
                    std::f64::consts::FRAC_PI_2,
                )
                .iter()
                .map(|&(a, w)| w * cone.eval(a.cos()))
                .sum::<f64>()
            }
            3 => {
                // 2 pi int over mu in (0, 1) of cone(mu)
                2.0 * std::f64::consts::PI
                    * crate::quadrature::gauss_legendre(2 * nq, 0.0, 1.0)
                        .iter()
                        .map(|&(mu, w)| w * cone.eval(mu))
                        .sum::<f64>()
            }
            _ => unreachable!(),
        };
        let m_norm = 1.0 / (radial * angular);

        // velocity marginal of p_0: density on V is init_speed(|v|) / v0_norm
        let surface = match D {
            2 => 2.0 * std::f64::consts::PI,
            3 => 4.0 * std::f64::consts::PI,
            _ => unreachable!(),
        };
        let v0_norm: f64 = surface
            * crate::quadrature::gauss_legendre(nq, cfg.initial.speed_lo, cfg.initial.speed_hi)
                .iter()
                .map(|&(r, w)| w * init_speed.eval(r) * r.powi(D as i32 - 1))
                .sum::<f64>();

        Kernels {
            domain: Domain {
                radius: cfg.domain.radius,
            },
            vset,
            beta: cfg.particles.beta,
            ang,
            rel: SmoothStep::new(ck.r0, ck.r0 + ck.rel_width),
            sum_amp: ck.sum_amp,
            sum_bump: Bump::new(0.0, 2.0 * cfg.particles.v_max),
            r0: ck.r0,
            cone,
            refl_speed,
            eps_cone: rd.eps_cone,
            m_norm,
            gamma_bump,
            gamma_norm,
            s_x: cfg.initial.s_x,
            init_speed,
            v0_norm,
            rejection_budget: cfg.simulation.rejection_budget,
        }
    }

    // ---------------- collision kernel ----------------

    /// Unnormalized collision kernel B(v, v', e), defined for any unit e.
    pub fn b_raw(&self, v: &Vector<D>, vp: &Vector<D>, e: &Vector<D>) -> f64 {
        let w = crate::linalg::sub(v, vp);
        let r = norm(&w);
        if r == 0.0 {
            return 0.0;
        }
        let u = (dot(e, &w) / r).abs();
        let s = norm(&crate::linalg::add(v, vp));
        self.ang.eval(u) * self.rel.eval(r) * (1.0 + self.sum_amp * self.sum_bump.eval(s))
    }

    /// Post-impact velocities: specular exchange along e.
    pub fn post_impact(
        &self,
        v: &Vector<D>,
        vp: &Vector<D>,
        e: &Vector<D>,
    ) -> (Vector<D>, Vector<D>) {
        let w = crate::linalg::sub(v, vp);
        let c = dot(e, &w);
        (axpy(v, -c, e), axpy(vp, c, e))
    }

    /// Normalizer of the conditional impact density: the hemisphere integral
    /// of B restricted to outcomes staying in V x V.
    pub fn b_normalizer(&self, v: &Vector<D>, vp: &Vector<D>, order: usize) -> f64 {
        let w = crate::linalg::sub(v, vp);
        crate::geometry::hemisphere_quadrature(&w, order)
            .iter()
            .map(|&(e, wt)| {
                let (vs, vps) = self.post_impact(v, vp, &e);
                if self.vset.contains(&vs) && self.vset.contains(&vps) {
                    wt * self.b_raw(v, vp, &e)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Normalized impact density B_{v,v'}(e) with the V x V outcome indicator.
    pub fn b_density(
        &self,
        v: &Vector<D>,
        vp: &Vector<D>,
        e: &Vector<D>,
        order: usize,
    ) -> Result<f64, KernelError> {
        let w = crate::linalg::sub(v, vp);
        let r = norm(&w);
        if self.rel.eval(r) == 0.0 {
            return Err(KernelError::DegeneratePair {
                rel_speed: r,
                r0: self.r0,
            });
        }
        let (vs, vps) = self.post_impact(v, vp, e);
        if !(self.vset.contains(&vs) && self.vset.contains(&vps)) {
            return Ok(0.0);
        }
        Ok(self.b_raw(v, vp, e) / self.b_normalizer(v, vp, order))
    }

    /// Ambient gradient of ln B_{v,v'} in e (the normalizer does not depend
    /// on e, so this is the log-gradient of the angular factor alone).
    pub fn grad_e_ln_b(
        &self,
        v: &Vector<D>,
        vp: &Vector<D>,
        e: &Vector<D>,
    ) -> Result<Vector<D>, KernelError> {
        let w = crate::linalg::sub(v, vp);
        let r = norm(&w);
        let what = scale(&w, 1.0 / r);
        let u = dot(e, &what);
        if !self.ang.contains(u.abs()) || self.rel.eval(r) == 0.0 {
            return Err(KernelError::OutsideSupport { which: "B" });
        }
        Ok(scale(&what, self.ang.dlog(u.abs()) * u.signum()))
    }

    /// Draw an impact direction from B_{v,v'} restricted to admissible
    /// outcomes, by rejection from the uniform hemisphere.
    pub fn sample_impact<R: Rng>(
        &self,
        v: &Vector<D>,
        vp: &Vector<D>,
        rng: &mut R,
    ) -> Result<Vector<D>, KernelError> {
        let w = crate::linalg::sub(v, vp);
        let r = norm(&w);
        if self.rel.eval(r) == 0.0 {
            return Err(KernelError::DegeneratePair {
                rel_speed: r,
                r0: self.r0,
            });
        }
        let frame = crate::linalg::orthonormal_complement(&w);
        let n = unit(&w);
        let env = self.ang.max_value();
        for _ in 0..self.rejection_budget {
            let e = match D {
                2 => {
                    let alpha = rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
                    axpy(&scale(&n, alpha.cos()), alpha.sin(), &frame[0])
                }
                3 => {
                    let mu: f64 = rng.gen_range(0.0..1.0);
                    let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                    let s = (1.0 - mu * mu).sqrt();
                    let mut e = scale(&n, mu);
                    e = axpy(&e, s * phi.cos(), &frame[0]);
                    axpy(&e, s * phi.sin(), &frame[1])
                }
                _ => unreachable!(),
            };
            let u = dot(&e, &n);
            if rng.gen_range(0.0..1.0) < self.ang.eval(u.abs()) / env {
                let (vs, vps) = self.post_impact(v, vp, &e);
                if self.vset.contains(&vs) && self.vset.contains(&vps) {
                    return Ok(e);
                }
            }
        }
        Err(KernelError::RejectionBudgetExceeded {
            budget: self.rejection_budget,
        })
    }

    // ---------------- redistribution kernel ----------------

    /// Inward cosine mu = <v/|v|, -n>.
    #[inline]
    pub fn inward_cosine(&self, n_out: &Vector<D>, v: &Vector<D>) -> f64 {
        -dot(v, n_out) / norm(v)
    }

    /// Density of the reflected velocity: m(x, v) = M(x; v) |<v, n>|,
    /// normalized so the integral over V equals one.
    pub fn m_density(&self, n_out: &Vector<D>, v: &Vector<D>) -> f64 {
        let sp = norm(v);
        let mu = self.inward_cosine(n_out, v);
        if mu <= self.eps_cone {
            return 0.0;
        }
        self.m_norm * self.cone.eval(mu) * self.refl_speed.eval(sp)
    }

    /// The kernel M itself (reported only; the dynamics use m_density).
    pub fn m_kernel(&self, n_out: &Vector<D>, v: &Vector<D>) -> f64 {
        let q = self.m_density(n_out, v);
        if q == 0.0 {
            return 0.0;
        }
        q / dot(v, n_out).abs()
    }

    /// Analytic gradient of ln[M(x; v) <v, n>] in v, valid on the open support.
    pub fn grad_v_ln_m(
        &self,
        n_out: &Vector<D>,
        v: &Vector<D>,
    ) -> Result<Vector<D>, KernelError> {
        let sp = norm(v);
        let mu = self.inward_cosine(n_out, v);
        if mu <= self.eps_cone || !self.refl_speed.contains(sp) {
            return Err(KernelError::OutsideSupport { which: "M" });
        }
        let vhat = scale(v, 1.0 / sp);
        // grad mu = (-n - mu vhat) / |v|
        let gmu = scale(&axpy(&scale(n_out, -1.0), -mu, &vhat), 1.0 / sp);
        let mut g = scale(&gmu, self.cone.dlog(mu));
        g = axpy(&g, self.refl_speed.dlog(sp), &vhat);
        Ok(g)
    }

    /// Draw a reflected velocity at a boundary point with outward normal n.
    pub fn sample_reflected<R: Rng>(
        &self,
        n_out: &Vector<D>,
        rng: &mut R,
    ) -> Result<Vector<D>, KernelError> {
        let inward = scale(n_out, -1.0);
        let frame = crate::linalg::orthonormal_complement(n_out);
        let alpha_max = self.eps_cone.acos();
        let (lo, hi) = (self.refl_speed.a, self.refl_speed.b);
        let env = self.refl_speed.max_value() * hi.powi(D as i32 - 1);
        for _ in 0..self.rejection_budget {
            let (dir, mu) = match D {
                2 => {
                    let alpha = rng.gen_range(-alpha_max..alpha_max);
                    (
                        axpy(&scale(&inward, alpha.cos()), alpha.sin(), &frame[0]),
                        alpha.cos(),
                    )
                }
                3 => {
                    let mu: f64 = rng.gen_range(self.eps_cone..1.0);
                    let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                    let s = (1.0 - mu * mu).sqrt();
                    let mut d = scale(&inward, mu);
                    d = axpy(&d, s * phi.cos(), &frame[0]);
                    (axpy(&d, s * phi.sin(), &frame[1]), mu)
                }
                _ => unreachable!(),
            };
            let sp = rng.gen_range(lo..hi);
            let accept =
                self.cone.eval(mu) * self.refl_speed.eval(sp) * sp.powi(D as i32 - 1) / env;
            if rng.gen_range(0.0..1.0) < accept {
                return Ok(scale(&dir, sp));
            }
        }
        Err(KernelError::RejectionBudgetExceeded {
            budget: self.rejection_budget,
        })
    }

    // ---------------- gamma control density ----------------

    pub fn gamma_density(&self, g: f64) -> f64 {
        self.gamma_bump.eval(g) / self.gamma_norm
    }

    pub fn dlog_gamma(&self, g: f64) -> Result<f64, KernelError> {
        if !self.gamma_bump.contains(g) {
            return Err(KernelError::OutsideSupport { which: "g_gamma" });
        }
        Ok(self.gamma_bump.dlog(g))
    }

    pub fn sample_gamma<R: Rng>(&self, rng: &mut R) -> Result<f64, KernelError> {
        let (a, b) = (self.gamma_bump.a, self.gamma_bump.b);
        let env = self.gamma_bump.max_value();
        for _ in 0..self.rejection_budget {
            let g = rng.gen_range(a..b);
            if rng.gen_range(0.0..1.0) < self.gamma_bump.eval(g) / env {
                return Ok(g);
            }
        }
        Err(KernelError::RejectionBudgetExceeded {
            budget: self.rejection_budget,
        })
    }

    // ---------------- initial density ----------------

    /// Velocity marginal density of p_0 on V (per particle).
    pub fn p0_velocity_density(&self, v: &Vector<D>) -> f64 {
        self.init_speed.eval(norm(v)) / self.v0_norm
    }

    /// Gradient of ln p_0 in one particle's position.
    pub fn grad_x_ln_p0(&self, x: &Vector<D>) -> Vector<D> {
        scale(x, -1.0 / (self.s_x * self.s_x))
    }

    /// Gradient of ln p_0 in one particle's velocity, on the open support.
    pub fn grad_v_ln_p0(&self, v: &Vector<D>) -> Result<Vector<D>, KernelError> {
        let sp = norm(v);
        if !self.init_speed.contains(sp) {
            return Err(KernelError::OutsideSupport { which: "p_0" });
        }
        Ok(scale(v, self.init_speed.dlog(sp) / sp))
    }

    /// Sample an initial configuration satisfying hypothesis p(i):
    /// all pair separations strictly above beta.
    pub fn sample_initial<R: Rng>(
        &self,
        n_particles: usize,
        rng: &mut R,
    ) -> Result<(Vec<Vector<D>>, Vec<Vector<D>>), KernelError> {
        'outer: for _ in 0..self.rejection_budget {
            let mut xs = Vec::with_capacity(n_particles);
            for _ in 0..n_particles {
                xs.push(self.sample_position(rng)?);
            }
            for i in 0..n_particles {
                for j in (i + 1)..n_particles {
                    if norm(&crate::linalg::sub(&xs[i], &xs[j])) <= self.beta {
                        continue 'outer;
                    }
                }
            }
            let mut vs = Vec::with_capacity(n_particles);
            for _ in 0..n_particles {
                vs.push(self.sample_velocity(rng)?);
            }
            return Ok((xs, vs));
        }
        Err(KernelError::RejectionBudgetExceeded {
            budget: self.rejection_budget,
        })
    }

    fn sample_position<R: Rng>(&self, rng: &mut R) -> Result<Vector<D>, KernelError> {
        for _ in 0..self.rejection_budget {
            let mut x = [0.0; D];
            for k in 0..D {
                x[k] = self.s_x * sample_standard_normal(rng);
            }
            if self.domain.contains(&x) {
                return Ok(x);
            }
        }
        Err(KernelError::RejectionBudgetExceeded {
            budget: self.rejection_budget,
        })
    }

    fn sample_velocity<R: Rng>(&self, rng: &mut R) -> Result<Vector<D>, KernelError> {
        let (lo, hi) = (self.init_speed.a, self.init_speed.b);
        let env = self.init_speed.max_value() * hi.powi(D as i32 - 1);
        for _ in 0..self.rejection_budget {
            let sp = rng.gen_range(lo..hi);
            if rng.gen_range(0.0..1.0) < self.init_speed.eval(sp) * sp.powi(D as i32 - 1) / env {
                return Ok(scale(&uniform_direction(rng), sp));
            }
        }
        Err(KernelError::RejectionBudgetExceeded {
            budget: self.rejection_budget,
        })
    }

    /// Def. 2.1(vi) diagnostic: sup over a (v, v') grid of the hemisphere
    /// integral of |grad_e ln B|^2 against B_{v,v'} de.
    pub fn b_log_gradient_bound(&self, grid: usize, order: usize) -> f64 {
        let mut worst: f64 = 0.0;
        let (lo, hi) = (self.vset.v_min + 0.05, self.vset.v_max - 0.05);
        for i in 0..grid {
            for j in 0..grid {
                let si = lo + (hi - lo) * (i as f64 + 0.5) / grid as f64;
                let sj = lo + (hi - lo) * (j as f64 + 0.5) / grid as f64;
                let mut v = [0.0; D];
                let mut vp = [0.0; D];
                v[0] = si;
                vp[1] = sj;
                let w = crate::linalg::sub(&v, &vp);
                if self.rel.eval(norm(&w)) == 0.0 {
                    continue;
                }
                let z = self.b_normalizer(&v, &vp, order);
                if z <= 0.0 {
                    continue;
                }
                let total: f64 = crate::geometry::hemisphere_quadrature(&w, order)
                    .iter()
                    .map(|&(e, wt)| match self.grad_e_ln_b(&v, &vp, &e) {
                        Ok(g) => {
                            let (vs, vps) = self.post_impact(&v, &vp, &e);
                            if self.vset.contains(&vs) && self.vset.contains(&vps) {
                                wt * dot(&g, &g) * self.b_raw(&v, &vp, &e) / z
                            } else {
                                0.0
                            }
                        }
                        Err(_) => 0.0,
                    })
                    .sum();
                worst = worst.max(total);
            }
        }
        worst
    }
}

pub fn sample_standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller, single draw
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn uniform_direction<const D: usize, R: Rng>(rng: &mut R) -> Vector<D> {
    loop {
        let mut v = [0.0; D];
        for k in 0..D {
            v[k] = sample_standard_normal(rng);
        }
        let n = norm(&v);
        if n > 1e-8 {
            return scale(&v, 1.0 / n);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn kernels2() -> Kernels<2> {
        Kernels::<2>::new(&ModelConfig::default_desk())
    }

    #[test]
    fn post_impact_examples_and_conservation() {
        let k = kernels2();
        // head-on exchange
        let (vs, vps) = k.post_impact(&[1.0, 0.0], &[-1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(vs, [-1.0, 0.0]);
        assert_eq!(vps, [1.0, 0.0]);
        // oblique hand-computed outcome
        let s = 0.5f64.sqrt();
        let (vs, vps) = k.post_impact(&[1.0, 0.0], &[-1.0, 0.0], &[s, s]);
        assert!((vs[0] - 0.0).abs() < 1e-15 && (vs[1] + 1.0) < 1e-15);
        assert!((vps[0] - 0.0).abs() < 1e-15 && (vps[1] - 1.0).abs() < 1e-15);
        // momentum conservation to rounding error
        let mut rng = crate::rng::path_rng(3, 0);
        for _ in 0..200 {
            let v = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let vp = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let e = uniform_direction::<2, _>(&mut rng);
            let (a, b) = k.post_impact(&v, &vp, &e);
            assert!((a[0] + b[0] - (v[0] + vp[0])).abs() < 1e-14);
            assert!((a[1] + b[1] - (v[1] + vp[1])).abs() < 1e-14);
        }
    }

    #[test]
    fn post_impact_is_an_involution() {
        let k = kernels2();
        let mut rng = crate::rng::path_rng(4, 0);
        for _ in 0..200 {
            let v = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let vp = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let e = uniform_direction::<2, _>(&mut rng);
            let (a, b) = k.post_impact(&v, &vp, &e);
            let (v2, vp2) = k.post_impact(&a, &b, &e);
            assert!((v2[0] - v[0]).abs() < 1e-14 && (v2[1] - v[1]).abs() < 1e-14);
            assert!((vp2[0] - vp[0]).abs() < 1e-14 && (vp2[1] - vp[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn b_density_zero_outside_angular_support_and_normalized() {
        let k = kernels2();
        let v = [1.0, 0.1];
        let vp = [-0.9, -0.2];
        let w = crate::linalg::sub(&v, &vp);
        // nearly aligned with w: |u| close to 1, outside the bump
        let e = unit(&w);
        assert_eq!(k.b_density(&v, &vp, &e, 64).unwrap(), 0.0);
        // normalization: quadrature of the density with indicator is 1
        let total: f64 = crate::geometry::hemisphere_quadrature(&w, 96)
            .iter()
            .map(|&(e, wt)| wt * k.b_density(&v, &vp, &e, 96).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-10, "total {total}");
    }

    #[test]
    fn b_density_symmetric_in_v_vp() {
        let k = kernels2();
        let v = [1.0, 0.3];
        let vp = [-0.8, -0.1];
        let w = crate::linalg::sub(&v, &vp);
        for &(e, _) in crate::geometry::hemisphere_quadrature(&w, 16).iter() {
            let a = k.b_raw(&v, &vp, &e);
            let b = k.b_raw(&vp, &v, &e);
            assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn b_invariant_under_specular_exchange() {
        let k = kernels2();
        let mut rng = crate::rng::path_rng(5, 0);
        for _ in 0..100 {
            let v = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
            let vp = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
            let e = uniform_direction::<2, _>(&mut rng);
            let (vs, vps) = k.post_impact(&v, &vp, &e);
            let a = k.b_raw(&v, &vp, &e);
            let b = k.b_raw(&vs, &vps, &e);
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn sampled_impacts_stay_in_support_and_in_v() {
        let k = kernels2();
        let mut rng = crate::rng::path_rng(6, 0);
        let v = [1.1, 0.2];
        let vp = [-0.7, 0.4];
        let w = crate::linalg::sub(&v, &vp);
        let r = norm(&w);
        for _ in 0..500 {
            let e = k.sample_impact(&v, &vp, &mut rng).unwrap();
            assert!(dot(&e, &w) > 0.0);
            // support invariant <w, e> >= delta_angle * r0
            assert!(dot(&w, &e) >= k.ang.a * k.r0);
            assert!(dot(&e, &w) / r > k.ang.a && dot(&e, &w) / r < k.ang.b);
            let (vs, vps) = k.post_impact(&v, &vp, &e);
            assert!(k.vset.contains(&vs) && k.vset.contains(&vps));
        }
    }

    #[test]
    fn slow_pair_is_degenerate() {
        let k = kernels2();
        let mut rng = crate::rng::path_rng(7, 0);
        let err = k.sample_impact(&[1.0, 0.0], &[1.0, 0.02], &mut rng);
        assert!(matches!(err, Err(KernelError::DegeneratePair { .. })));
    }

    #[test]
    fn m_density_support_and_normalization() {
        let k = kernels2();
        let n = [1.0, 0.0];
        // outward or shallow directions get zero
        assert_eq!(k.m_density(&n, &[1.0, 0.0]), 0.0);
        assert_eq!(k.m_density(&n, &[-0.05, 1.0]), 0.0);
        // integral over V equals 1 (the density vanishes off its speed
        // support, so the radial rule targets that interval)
        let total: f64 =
            crate::quadrature::annulus_rule::<2>(k.refl_speed.a, k.refl_speed.b, 128, 512)
                .iter()
                .map(|&(v, wt)| wt * k.m_density(&n, &v))
                .sum();
        assert!((total - 1.0).abs() < 1e-8, "total {total}");
    }

    #[test]
    fn m_density_rotation_equivariant() {
        let k = kernels2();
        let th: f64 = 0.7;
        let (c, s) = (th.cos(), th.sin());
        let rot = |v: &[f64; 2]| [c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let n = [0.6, 0.8];
        let v = [-0.9, 0.3];
        assert!((k.m_density(&rot(&n), &rot(&v)) - k.m_density(&n, &v)).abs() < 1e-14);
    }

    #[test]
    fn reflected_samples_are_inward_and_admissible() {
        let k = kernels2();
        let mut rng = crate::rng::path_rng(8, 0);
        let n = [0.0, 1.0];
        for _ in 0..500 {
            let v = k.sample_reflected(&n, &mut rng).unwrap();
            assert!(k.inward_cosine(&n, &v) > k.eps_cone);
            assert!(k.vset.contains(&v));
            assert!(k.m_density(&n, &v) > 0.0);
        }
    }

    #[test]
    fn gamma_density_normalized_and_symmetric() {
        let k = kernels2();
        let total: f64 = crate::quadrature::gauss_legendre(96, 0.0, 1.0)
            .iter()
            .map(|&(g, w)| w * k.gamma_density(g))
            .sum();
        assert!((total - 1.0).abs() < 1e-8, "total {total}");
        assert!(k.dlog_gamma(0.5).unwrap().abs() < 1e-13);
    }

    #[test]
    fn log_gradients_match_finite_differences() {
        let k = kernels2();
        let h = 1e-6;
        // grad_v ln m
        let n = [0.8, 0.6];
        let v = [-0.9, -0.35];
        let g = k.grad_v_ln_m(&n, &v).unwrap();
        for r in 0..2 {
            let mut vp = v;
            let mut vm = v;
            vp[r] += h;
            vm[r] -= h;
            let fd = (k.m_density(&n, &vp).ln() - k.m_density(&n, &vm).ln()) / (2.0 * h);
            assert!((g[r] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "r={r}");
        }
        // grad_e ln B at interior points
        let v1 = [1.2, 0.3];
        let v2 = [-0.7, 0.5];
        let w = crate::linalg::sub(&v1, &v2);
        let frame = crate::linalg::orthonormal_complement(&w);
        let nw = unit(&w);
        let e = axpy(&scale(&nw, 1.0f64.cos()), 1.0f64.sin(), &frame[0]);
        let g = k.grad_e_ln_b(&v1, &v2, &e).unwrap();
        for r in 0..2 {
            let mut ep = e;
            let mut em = e;
            ep[r] += h;
            em[r] -= h;
            let fd = (k.b_raw(&v1, &v2, &ep).ln() - k.b_raw(&v1, &v2, &em).ln()) / (2.0 * h);
            assert!((g[r] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "r={r}");
        }
        // grad ln p0 in x is exactly -x/s^2
        let gx = k.grad_x_ln_p0(&[0.2, -0.1]);
        assert!((gx[0] + 0.2 / (k.s_x * k.s_x)).abs() < 1e-15);
        // grad ln p0 in v
        let vv = [0.9, 0.5];
        let gv = k.grad_v_ln_p0(&vv).unwrap();
        for r in 0..2 {
            let mut vp = vv;
            let mut vm = vv;
            vp[r] += h;
            vm[r] -= h;
            let fd = (k.p0_velocity_density(&vp).ln() - k.p0_velocity_density(&vm).ln())
                / (2.0 * h);
            assert!((gv[r] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn initial_sampler_respects_separation() {
        let k = kernels2();
        let mut rng = crate::rng::path_rng(9, 0);
        for _ in 0..100 {
            let (xs, vs) = k.sample_initial(3, &mut rng).unwrap();
            for i in 0..3 {
                assert!(k.domain.contains(&xs[i]));
                assert!(k.init_speed.contains(norm(&vs[i])));
                for j in (i + 1)..3 {
                    assert!(norm(&crate::linalg::sub(&xs[i], &xs[j])) > k.beta);
                }
            }
        }
    }

    #[test]
    fn b_log_gradient_bound_is_finite() {
        let k = kernels2();
        let bound = k.b_log_gradient_bound(6, 48);
        assert!(bound.is_finite() && bound > 0.0);
    }
}
