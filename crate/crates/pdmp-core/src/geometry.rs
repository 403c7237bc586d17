//! Exact geometry of the state space: ball domain, velocity annulus,
//! hemispheres, and closed-form hit times for linear motion.

use crate::error::KernelError;
use crate::linalg::{dot, norm, scale, Vector};

/// Open ball domain of radius `radius` in dimension D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub radius: f64,
}

impl Domain {
    pub fn contains<const D: usize>(&self, x: &Vector<D>) -> bool {
        norm(x) < self.radius
    }

    /// Outward unit normal at a boundary point.
    pub fn outward_normal<const D: usize>(
        &self,
        x: &Vector<D>,
        tol_boundary: f64,
    ) -> Result<Vector<D>, KernelError> {
        let r = norm(x);
        if (r - self.radius).abs() > tol_boundary {
            return Err(KernelError::NotOnBoundary {
                radius: r,
                expected: self.radius,
            });
        }
        Ok(scale(x, 1.0 / r))
    }
}

/// Velocity annulus {v : v_min < |v| < v_max}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocitySet {
    pub v_min: f64,
    pub v_max: f64,
}

impl VelocitySet {
    pub fn contains<const D: usize>(&self, v: &Vector<D>) -> bool {
        let s = norm(v);
        s > self.v_min && s < self.v_max
    }
}

/// Membership test for the hemisphere S^{d-1}_+(w).
pub fn in_hemisphere<const D: usize>(e: &Vector<D>, w: &Vector<D>) -> bool {
    dot(e, w) > 0.0
}

/// Stable quadratic roots of a t^2 + b t + c = 0 via the citardauq form.
/// Returns (smaller, larger) when real roots exist.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 || a == 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = (q / a, c / q);
    Some(if r1 < r2 { (r1, r2) } else { (r2, r1) })
}

/// Smallest t > 0 with |x + t v| = radius, for x strictly inside the ball.
pub fn boundary_hit_time<const D: usize>(
    x: &Vector<D>,
    v: &Vector<D>,
    radius: f64,
) -> Option<f64> {
    let a = dot(v, v);
    if a == 0.0 {
        return None;
    }
    let b = 2.0 * dot(x, v);
    let mut c = dot(x, x) - radius * radius;
    // a particle sitting on the sphere to rounding error is inside by model
    // invariant; clamp so the spurious root at t ~ 1e-16 cannot fire
    if c > 0.0 && c < 1e-12 * radius * radius {
        c = 0.0;
    }
    // c <= 0 inside, so the roots straddle zero
    let (r1, r2) = quadratic_roots(a, b, c)?;
    if r2 > 0.0 {
        Some(r2)
    } else {
        Some(r1)
    }
    .filter(|t| *t > 0.0)
}

/// Entrance and exit times of the straight-line overlap window for a pair
/// currently separated by more than `beta`: smallest s > 0 with
/// |dx + s dv| = beta, and the matching exit time.
///
/// Returns None when the pair never closes to distance beta (negative
/// discriminant or receding motion).
pub fn pair_overlap_window<const D: usize>(
    dx: &Vector<D>,
    dv: &Vector<D>,
    beta: f64,
) -> Option<(f64, f64)> {
    let a = dot(dv, dv);
    if a == 0.0 {
        return None;
    }
    let b = 2.0 * dot(dx, dv);
    if b >= 0.0 {
        return None; // receding or tangent at t = 0
    }
    let c = dot(dx, dx) - beta * beta;
    if c <= 0.0 {
        return None; // already inside to rounding error; not an entrance
    }
    let (s, t) = quadratic_roots(a, b, c)?;
    if s <= 0.0 {
        return None;
    }
    Some((s, t))
}

/// Future time at which an overlapping pair (|dx| < beta) returns to
/// distance beta. Exactly one such time exists for nonzero relative motion.
pub fn pair_separation_time<const D: usize>(
    dx: &Vector<D>,
    dv: &Vector<D>,
    beta: f64,
) -> Option<f64> {
    let a = dot(dv, dv);
    if a == 0.0 {
        return None;
    }
    let b = 2.0 * dot(dx, dv);
    let c = dot(dx, dx) - beta * beta;
    // tolerant of |dx| sitting on the shell to rounding error: the largest
    // positive root is the exit either way
    let (r1, r2) = quadratic_roots(a, b, c)?;
    if r2 > 0.0 {
        Some(r2)
    } else {
        Some(r1)
    }
    .filter(|t| *t > 0.0)
}

/// |d/dt dist^2| at either crossing of the level beta: equals sqrt(disc).
/// Used as the transversality margin for the p(iii) check.
pub fn crossing_slope<const D: usize>(dx: &Vector<D>, dv: &Vector<D>, beta: f64) -> f64 {
    let a = dot(dv, dv);
    let b = 2.0 * dot(dx, dv);
    let c = dot(dx, dx) - beta * beta;
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        0.0
    } else {
        disc.sqrt()
    }
}

/// Quadrature nodes and weights for the hemisphere {<e, w> > 0}; see
/// `quadrature::hemisphere_rule` for the construction.
pub fn hemisphere_quadrature<const D: usize>(
    w: &Vector<D>,
    order: usize,
) -> Vec<(Vector<D>, f64)> {
    crate::quadrature::hemisphere_rule::<D>(w, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn boundary_hit_examples() {
        // radial exit
        assert!((boundary_hit_time(&[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((boundary_hit_time(&[0.5, 0.0], &[1.0, 0.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
        // off-center chord: solve t^2 + 0.25 = 1
        let t = boundary_hit_time(&[0.0, 0.5], &[1.0, 0.0], 1.0).unwrap();
        assert!((t - 0.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn boundary_hit_lands_on_sphere() {
        let mut rng = crate::rng::path_rng(11, 0);
        for _ in 0..2000 {
            let x = [
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.4..0.4),
            ];
            let v = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            if norm(&v) < 1e-3 || norm(&x) >= 1.0 {
                continue;
            }
            let t = boundary_hit_time(&x, &v, 1.0).unwrap();
            let hit = crate::linalg::axpy(&x, t, &v);
            assert!((norm(&hit) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn head_on_window_example() {
        // x_i = (-1,0), x_j = (1,0), v_i = (1,0), v_j = (-1,0), beta = 0.5
        let dx = [-2.0, 0.0];
        let dv = [2.0, 0.0];
        let (s, t) = pair_overlap_window(&dx, &dv, 0.5).unwrap();
        assert!((s - 0.75).abs() < 1e-15);
        assert!((t - 1.25).abs() < 1e-15);
    }

    #[test]
    fn parallel_motion_never_collides() {
        assert!(pair_overlap_window(&[-2.0, 0.3], &[0.0, 0.0], 0.5).is_none());
    }

    #[test]
    fn grazing_miss_vs_dense_stepping() {
        // passing distance slightly above / below beta
        let beta = 0.5;
        for offset in [0.501, 0.499] {
            let dx = [-3.0, offset];
            let dv = [1.0, 0.0];
            let window = pair_overlap_window(&dx, &dv, beta);
            // dense time-stepping oracle
            let mut min_dist = f64::INFINITY;
            for k in 0..100_000 {
                let t = 6.0 * k as f64 / 100_000.0;
                let p = crate::linalg::axpy(&dx, t, &dv);
                min_dist = min_dist.min(norm(&p));
            }
            assert_eq!(window.is_some(), min_dist < beta, "offset {offset}");
        }
    }

    #[test]
    fn window_roots_sit_on_the_beta_sphere() {
        let mut rng = crate::rng::path_rng(12, 0);
        let beta = 0.1;
        let mut found = 0;
        for _ in 0..5000 {
            let dx = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let dv = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            if norm(&dx) <= beta {
                continue;
            }
            if let Some((s, t)) = pair_overlap_window(&dx, &dv, beta) {
                found += 1;
                let ps = crate::linalg::axpy(&dx, s, &dv);
                let pt = crate::linalg::axpy(&dx, t, &dv);
                assert!((norm(&ps) - beta).abs() < 1e-10 * beta);
                assert!((norm(&pt) - beta).abs() < 1e-10 * beta);
                let mid = crate::linalg::axpy(&dx, (s + t) / 2.0, &dv);
                assert!(norm(&mid) < beta);
            }
        }
        assert!(found > 50);
    }

    #[test]
    fn outward_normal_examples() {
        let dom = Domain { radius: 1.0 };
        assert_eq!(dom.outward_normal(&[1.0, 0.0], 1e-9).unwrap(), [1.0, 0.0]);
        assert_eq!(dom.outward_normal(&[0.0, -1.0], 1e-9).unwrap(), [0.0, -1.0]);
        let n = dom.outward_normal(&[0.6, 0.8], 1e-9).unwrap();
        assert!((n[0] - 0.6).abs() < 1e-12 && (n[1] - 0.8).abs() < 1e-12);
        assert!(dom.outward_normal(&[0.5, 0.0], 1e-9).is_err());
    }
}
