//! C-infinity building blocks: compactly supported bumps, plateau bumps, and
//! smooth steps, each with analytic logarithmic derivatives.

use serde::{Deserialize, Serialize};

/// Compactly supported bump on (a, b): exp(-c / ((u-a)(b-u))), with
/// c = ((b-a)/2)^2 so the midpoint value is e^{-1}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub a: f64,
    pub b: f64,
}

impl Bump {
    pub fn new(a: f64, b: f64) -> Self {
        assert!(b > a, "bump needs a < b");
        Bump { a, b }
    }

    #[inline]
    fn c(&self) -> f64 {
        let h = (self.b - self.a) / 2.0;
        h * h
    }

    #[inline]
    pub fn contains(&self, u: f64) -> bool {
        u > self.a && u < self.b
    }

    pub fn eval(&self, u: f64) -> f64 {
        if !self.contains(u) {
            return 0.0;
        }
        let q = (u - self.a) * (self.b - u);
        (-self.c() / q).exp()
    }

    /// d/du ln eval; only valid strictly inside the support.
    pub fn dlog(&self, u: f64) -> f64 {
        debug_assert!(self.contains(u));
        let q = (u - self.a) * (self.b - u);
        self.c() * (self.a + self.b - 2.0 * u) / (q * q)
    }

    /// Derivative of the bump itself (zero off support).
    pub fn deriv(&self, u: f64) -> f64 {
        if !self.contains(u) {
            return 0.0;
        }
        let v = self.eval(u);
        if v == 0.0 {
            return 0.0;
        }
        v * self.dlog(u)
    }

    /// d/du of dlog (valid strictly inside the support).
    pub fn dlog_deriv(&self, u: f64) -> f64 {
        debug_assert!(self.contains(u));
        let q = (u - self.a) * (self.b - u);
        let qp = self.a + self.b - 2.0 * u;
        // d/du [c q'/q^2] = c (q'' q - 2 q'^2) / q^3 with q'' = -2
        self.c() * (-2.0 * q - 2.0 * qp * qp) / (q * q * q)
    }

    /// Second derivative of the bump (zero off support).
    pub fn deriv2(&self, u: f64) -> f64 {
        if !self.contains(u) {
            return 0.0;
        }
        let dl = self.dlog(u);
        self.eval(u) * (dl * dl + self.dlog_deriv(u))
    }

    pub fn max_value(&self) -> f64 {
        (-1.0f64).exp()
    }

    /// Mass by midpoint-free Gauss-Legendre (used for normalizations in tests).
    pub fn integral(&self, order: usize) -> f64 {
        let gl = crate::quadrature::gauss_legendre(order, self.a, self.b);
        gl.iter().map(|&(x, w)| w * self.eval(x)).sum()
    }
}

/// Smooth monotone step: 0 for u <= a, 1 for u >= b, strictly increasing between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothStep {
    pub a: f64,
    pub b: f64,
}

impl SmoothStep {
    pub fn new(a: f64, b: f64) -> Self {
        assert!(b > a);
        SmoothStep { a, b }
    }

    #[inline]
    fn edge(x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            (-1.0 / x).exp()
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        let x = (u - self.a) / (self.b - self.a);
        let p = Self::edge(x);
        let q = Self::edge(1.0 - x);
        p / (p + q)
    }

    /// d/du ln eval; valid where eval > 0.
    pub fn dlog(&self, u: f64) -> f64 {
        let x = (u - self.a) / (self.b - self.a);
        if x >= 1.0 {
            return 0.0;
        }
        debug_assert!(x > 0.0);
        let p = Self::edge(x);
        let q = Self::edge(1.0 - x);
        // d/dx ln(p/(p+q)) = p'/p - (p'+q')/(p+q)
        let dp = p / (x * x);
        let dq = -q / ((1.0 - x) * (1.0 - x));
        (dp / p - (dp + dq) / (p + q)) / (self.b - self.a)
    }
}

/// Plateau bump: 1 on [lo+w, hi-w], smooth to 0 at lo and hi.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauBump {
    pub lo: f64,
    pub hi: f64,
    pub edge: f64,
}

impl PlateauBump {
    pub fn new(lo: f64, hi: f64, edge: f64) -> Self {
        assert!(hi > lo && edge > 0.0 && 2.0 * edge < hi - lo);
        PlateauBump { lo, hi, edge }
    }

    /// Plateau covering the central `frac` of (lo, hi).
    pub fn with_plateau_fraction(lo: f64, hi: f64, frac: f64) -> Self {
        assert!(frac > 0.0 && frac < 1.0);
        let edge = (hi - lo) * (1.0 - frac) / 2.0;
        Self::new(lo, hi, edge)
    }

    pub fn contains(&self, u: f64) -> bool {
        u > self.lo && u < self.hi
    }

    pub fn on_plateau(&self, u: f64) -> bool {
        u >= self.lo + self.edge && u <= self.hi - self.edge
    }

    pub fn eval(&self, u: f64) -> f64 {
        let up = SmoothStep::new(self.lo, self.lo + self.edge).eval(u);
        let down = 1.0 - SmoothStep::new(self.hi - self.edge, self.hi).eval(u);
        up * down
    }

    pub fn dlog(&self, u: f64) -> f64 {
        debug_assert!(self.contains(u));
        let rise = SmoothStep::new(self.lo, self.lo + self.edge);
        let fall = SmoothStep::new(self.hi - self.edge, self.hi);
        let mut d = 0.0;
        if u < self.lo + self.edge {
            d += rise.dlog(u);
        }
        if u > self.hi - self.edge {
            // d/du ln(1 - s(u))
            let s = fall.eval(u);
            let ds = s * fall.dlog(u);
            d += -ds / (1.0 - s);
        }
        d
    }

    pub fn deriv(&self, u: f64) -> f64 {
        if !self.contains(u) {
            return 0.0;
        }
        let v = self.eval(u);
        if v == 0.0 {
            // underflowed at the support edge; the derivative is zero there
            // to double precision as well
            return 0.0;
        }
        v * self.dlog(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_dlog(f: impl Fn(f64) -> f64, u: f64) -> f64 {
        let h = 1e-6;
        (f(u + h).ln() - f(u - h).ln()) / (2.0 * h)
    }

    #[test]
    fn bump_dlog_matches_finite_differences() {
        let b = Bump::new(0.2, 0.9);
        for u in [0.3, 0.45, 0.55, 0.8] {
            let fd = fd_dlog(|x| b.eval(x), u);
            assert!((b.dlog(u) - fd).abs() < 1e-5 * (1.0 + fd.abs()), "u={u}");
        }
    }

    #[test]
    fn bump_second_derivative_matches_finite_differences() {
        let b = Bump::new(0.2, 0.9);
        for u in [0.35, 0.5, 0.72] {
            let h = 1e-4;
            let fd = (b.eval(u + h) - 2.0 * b.eval(u) + b.eval(u - h)) / (h * h);
            assert!((b.deriv2(u) - fd).abs() < 1e-4 * (1.0 + fd.abs()), "u={u}");
        }
    }

    #[test]
    fn bump_midpoint_symmetric_dlog_zero() {
        let b = Bump::new(0.1, 0.9);
        assert!(b.dlog(0.5).abs() < 1e-14);
    }

    #[test]
    fn smoothstep_limits_and_monotone() {
        let s = SmoothStep::new(0.0, 1.0);
        assert_eq!(s.eval(-0.1), 0.0);
        assert_eq!(s.eval(1.1), 1.0);
        assert!((s.eval(0.5) - 0.5).abs() < 1e-14);
        let mut prev = 0.0;
        for k in 0..=100 {
            let v = s.eval(k as f64 / 100.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn plateau_dlog_matches_finite_differences() {
        let p = PlateauBump::new(0.0, 1.0, 0.25);
        for u in [0.05, 0.12, 0.2, 0.5, 0.8, 0.9, 0.97] {
            if !p.contains(u) {
                continue;
            }
            let fd = fd_dlog(|x| p.eval(x), u);
            assert!(
                (p.dlog(u) - fd).abs() < 2e-4 * (1.0 + fd.abs()),
                "u={u} got {} want {}",
                p.dlog(u),
                fd
            );
        }
        assert_eq!(p.dlog(0.5), 0.0);
    }
}
