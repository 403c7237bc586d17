//! Small fixed-dimension vector and matrix helpers used throughout.
//!
//! The physical dimension is a const generic `D` (2 or 3 in practice); the
//! particle count stays a runtime quantity.

pub type Vector<const D: usize> = [f64; D];
pub type Matrix<const D: usize> = [[f64; D]; D];

#[inline]
pub fn dot<const D: usize>(a: &Vector<D>, b: &Vector<D>) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub fn norm<const D: usize>(a: &Vector<D>) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn add<const D: usize>(a: &Vector<D>, b: &Vector<D>) -> Vector<D> {
    let mut out = [0.0; D];
    for k in 0..D {
        out[k] = a[k] + b[k];
    }
    out
}

#[inline]
pub fn sub<const D: usize>(a: &Vector<D>, b: &Vector<D>) -> Vector<D> {
    let mut out = [0.0; D];
    for k in 0..D {
        out[k] = a[k] - b[k];
    }
    out
}

#[inline]
pub fn scale<const D: usize>(a: &Vector<D>, s: f64) -> Vector<D> {
    let mut out = [0.0; D];
    for k in 0..D {
        out[k] = a[k] * s;
    }
    out
}

#[inline]
pub fn axpy<const D: usize>(y: &Vector<D>, s: f64, x: &Vector<D>) -> Vector<D> {
    let mut out = *y;
    for k in 0..D {
        out[k] += s * x[k];
    }
    out
}

#[inline]
pub fn neg<const D: usize>(a: &Vector<D>) -> Vector<D> {
    scale(a, -1.0)
}

#[inline]
pub fn unit<const D: usize>(a: &Vector<D>) -> Vector<D> {
    scale(a, 1.0 / norm(a))
}

#[inline]
pub fn basis<const D: usize>(r: usize) -> Vector<D> {
    let mut out = [0.0; D];
    out[r] = 1.0;
    out
}

/// Outer product a b^T.
#[inline]
pub fn outer<const D: usize>(a: &Vector<D>, b: &Vector<D>) -> Matrix<D> {
    let mut m = [[0.0; D]; D];
    for i in 0..D {
        for j in 0..D {
            m[i][j] = a[i] * b[j];
        }
    }
    m
}

#[inline]
pub fn mat_vec<const D: usize>(m: &Matrix<D>, v: &Vector<D>) -> Vector<D> {
    let mut out = [0.0; D];
    for i in 0..D {
        out[i] = dot(&m[i], v);
    }
    out
}

#[inline]
pub fn mat_mul<const D: usize>(a: &Matrix<D>, b: &Matrix<D>) -> Matrix<D> {
    let mut out = [[0.0; D]; D];
    for i in 0..D {
        for j in 0..D {
            let mut s = 0.0;
            for k in 0..D {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

#[inline]
pub fn mat_add_scaled<const D: usize>(a: &Matrix<D>, s: f64, b: &Matrix<D>) -> Matrix<D> {
    let mut out = *a;
    for i in 0..D {
        for j in 0..D {
            out[i][j] += s * b[i][j];
        }
    }
    out
}

#[inline]
pub fn identity<const D: usize>() -> Matrix<D> {
    let mut m = [[0.0; D]; D];
    for k in 0..D {
        m[k][k] = 1.0;
    }
    m
}

pub fn det<const D: usize>(m: &Matrix<D>) -> f64 {
    match D {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => unreachable!("only d in {{1,2,3}} supported"),
    }
}

/// An orthonormal basis of the hyperplane orthogonal to `w` (unit or not).
/// Deterministic: Gram-Schmidt against the least-aligned coordinate axes.
pub fn orthonormal_complement<const D: usize>(w: &Vector<D>) -> Vec<Vector<D>> {
    let n = unit(w);
    let mut frame: Vec<Vector<D>> = vec![n];
    // pick axes in order of increasing |n_k| so the projections stay well conditioned
    let mut order: Vec<usize> = (0..D).collect();
    order.sort_by(|&a, &b| n[a].abs().partial_cmp(&n[b].abs()).unwrap());
    for &ax in &order {
        if frame.len() == D {
            break;
        }
        let mut v = basis::<D>(ax);
        for f in &frame {
            v = axpy(&v, -dot(&v, f), f);
        }
        let len = norm(&v);
        if len > 1e-12 {
            frame.push(scale(&v, 1.0 / len));
        }
    }
    debug_assert_eq!(frame.len(), D);
    frame.remove(0);
    frame
}

/// Pairwise (cascade) summation: deterministic and accurate regardless of how
/// the slice was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal() {
        let w = [0.3, -1.2, 0.7];
        let frame = orthonormal_complement(&w);
        assert_eq!(frame.len(), 2);
        for f in &frame {
            assert!((norm(f) - 1.0).abs() < 1e-12);
            assert!(dot(f, &unit(&w)).abs() < 1e-12);
        }
        assert!(dot(&frame[0], &frame[1]).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }
}
