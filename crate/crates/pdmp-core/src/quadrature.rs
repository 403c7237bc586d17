//! Gauss-Legendre rules and the composite product rules used for the
//! hemisphere, annulus, ball, and interval integrals.

use crate::linalg::{axpy, scale, Vector};

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial (standard Golub-free construction, fine up to several
/// hundred nodes).
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess, refined by Newton iteration
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        if n % 2 == 1 && i == m - 1 {
            x = 0.0;
            dp = legendre(n, 0.0).1;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    nodes.into_iter().zip(weights).collect()
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let half = (b - a) / 2.0;
    let mid = (a + b) / 2.0;
    gauss_legendre_unit(n)
        .into_iter()
        .map(|(x, w)| (mid + half * x, half * w))
        .collect()
}

/// Nodes and weights on the hemisphere {e in S^{d-1} : <e, w> > 0}.
///
/// d = 2: Gauss-Legendre in the polar angle around w.
/// d = 3: Gauss-Legendre in mu = <e, w-hat> on (0,1) times a periodic
/// equal-weight rule in the azimuth.
///
/// Weights sum to the hemisphere surface measure (pi for d = 2, 2 pi for d = 3).
pub fn hemisphere_rule<const D: usize>(w: &Vector<D>, order: usize) -> Vec<(Vector<D>, f64)> {
    assert!(order >= 2);
    let frame = crate::linalg::orthonormal_complement(w);
    let n = crate::linalg::unit(w);
    match D {
        2 => {
            let t = &frame[0];
            gauss_legendre(
                order,
                -std::f64::consts::FRAC_PI_2,
                std::f64::consts::FRAC_PI_2,
            )
            .into_iter()
            .map(|(theta, wt)| {
                let e = axpy(&scale(&n, theta.cos()), theta.sin(), t);
                (e, wt)
            })
            .collect()
        }
        3 => {
            let (t1, t2) = (&frame[0], &frame[1]);
            let n_az = 2 * order;
            let w_az = 2.0 * std::f64::consts::PI / n_az as f64;
            let mut out = Vec::with_capacity(order * n_az);
            for (mu, wt) in gauss_legendre(order, 0.0, 1.0) {
                let s = (1.0 - mu * mu).sqrt();
                for k in 0..n_az {
                    let phi = w_az * (k as f64 + 0.5);
                    let mut e = scale(&n, mu);
                    e = axpy(&e, s * phi.cos(), t1);
                    e = axpy(&e, s * phi.sin(), t2);
                    out.push((e, wt * w_az));
                }
            }
            out
        }
        _ => unreachable!("only d in {{2,3}} supported"),
    }
}

/// Nodes and weights over the velocity annulus {v_min < |v| < v_max} with the
/// Lebesgue measure dv (the |v|^{d-1} polar Jacobian is folded into the weights).
pub fn annulus_rule<const D: usize>(
    v_min: f64,
    v_max: f64,
    n_radial: usize,
    n_angular: usize,
) -> Vec<(Vector<D>, f64)> {
    let radial = gauss_legendre(n_radial, v_min, v_max);
    match D {
        2 => {
            let w_az = 2.0 * std::f64::consts::PI / n_angular as f64;
            let mut out = Vec::with_capacity(n_radial * n_angular);
            for &(r, wr) in &radial {
                for k in 0..n_angular {
                    let phi = w_az * (k as f64 + 0.5);
                    let mut v = [0.0; D];
                    v[0] = r * phi.cos();
                    v[1] = r * phi.sin();
                    out.push((v, wr * w_az * r));
                }
            }
            out
        }
        3 => {
            let polar = gauss_legendre(n_angular, -1.0, 1.0);
            let n_az = 2 * n_angular;
            let w_az = 2.0 * std::f64::consts::PI / n_az as f64;
            let mut out = Vec::with_capacity(n_radial * n_angular * n_az);
            for &(r, wr) in &radial {
                for &(mu, wmu) in &polar {
                    let s = (1.0 - mu * mu).sqrt();
                    for k in 0..n_az {
                        let phi = w_az * (k as f64 + 0.5);
                        let mut v = [0.0; D];
                        v[0] = r * s * phi.cos();
                        v[1] = r * s * phi.sin();
                        v[2] = r * mu;
                        out.push((v, wr * wmu * w_az * r * r));
                    }
                }
            }
            out
        }
        _ => unreachable!(),
    }
}

/// Nodes and weights over the open ball {|x| < radius} with Lebesgue measure.
pub fn ball_rule<const D: usize>(
    radius: f64,
    n_radial: usize,
    n_angular: usize,
) -> Vec<(Vector<D>, f64)> {
    // reuse the annulus rule with a tiny inner hole-free limit
    annulus_rule::<D>(0.0, radius, n_radial, n_angular)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        // order n is exact through degree 2n-1
        let rule = gauss_legendre(8, -1.5, 2.0);
        for deg in 0..=15usize {
            let got: f64 = rule.iter().map(|&(x, w)| w * x.powi(deg as i32)).sum();
            let want = (2.0f64.powi(deg as i32 + 1) - (-1.5f64).powi(deg as i32 + 1))
                / (deg as f64 + 1.0);
            assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "deg {deg}");
        }
    }

    #[test]
    fn hemisphere_measure_d2() {
        let rule = hemisphere_rule::<2>(&[0.3, -0.8], 32);
        let total: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert!((total - std::f64::consts::PI).abs() < 1e-12);
        // every node on the correct side
        for &(e, _) in &rule {
            assert!(dot(&e, &[0.3, -0.8]) > 0.0);
            assert!((dot(&e, &e) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hemisphere_measure_d3() {
        let rule = hemisphere_rule::<3>(&[0.1, 0.2, -0.5], 24);
        let total: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert!((total - 2.0 * std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn hemisphere_cosine_moment() {
        // int <e, w-hat> de = 2 for d = 2, pi for d = 3
        let w2 = [1.0, 0.0];
        let got2: f64 = hemisphere_rule::<2>(&w2, 48)
            .iter()
            .map(|&(e, wt)| wt * dot(&e, &w2))
            .sum();
        assert!((got2 - 2.0).abs() < 1e-12);

        let w3 = [0.0, 0.0, 2.0];
        let got3: f64 = hemisphere_rule::<3>(&w3, 32)
            .iter()
            .map(|&(e, wt)| wt * dot(&e, &[0.0, 0.0, 1.0]))
            .sum();
        assert!((got3 - std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn annulus_measure_d2() {
        let rule = annulus_rule::<2>(0.5, 2.0, 24, 64);
        let total: f64 = rule.iter().map(|&(_, w)| w).sum();
        let want = std::f64::consts::PI * (4.0 - 0.25);
        assert!((total - want).abs() < 1e-10);
    }

    #[test]
    fn annulus_measure_d3() {
        let rule = annulus_rule::<3>(0.5, 2.0, 16, 24);
        let total: f64 = rule.iter().map(|&(_, w)| w).sum();
        let want = 4.0 / 3.0 * std::f64::consts::PI * (8.0 - 0.125);
        assert!((total - want).abs() < 1e-9 * want);
    }
}
