//! Small shared numeric helpers: norms, in-place vector arithmetic, and
//! finiteness checks used by the steppers and the analysis engine.

/// Euclidean norm of a vector.
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `true` iff every entry is finite (no NaN, no ±∞).
pub(crate) fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// `out[i] += a * b[i]`.
pub(crate) fn axpy(a: f64, b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(b.len(), out.len());
    for (o, v) in out.iter_mut().zip(b) {
        *o += a * v;
    }
}

/// `out += mat * v` where `mat` is row-major `rows × cols`.
pub(crate) fn matvec_acc(mat: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(mat.len(), rows * cols);
    debug_assert_eq!(v.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for r in 0..rows {
        let row = &mat[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (m, x) in row.iter().zip(v) {
            acc += m * x;
        }
        out[r] += acc;
    }
}

/// Round `num / den` to the nearest integer and report whether the quotient
/// was within `rel_tol` (relative to the rounded integer, or absolute when the
/// integer is 0) of being exact. Used for grid-alignment checks.
pub(crate) fn integer_ratio(num: f64, den: f64, rel_tol: f64) -> Option<i64> {
    if !(num.is_finite() && den.is_finite()) || den == 0.0 {
        return None;
    }
    let q = num / den;
    let k = q.round();
    if k.abs() > i64::MAX as f64 {
        return None;
    }
    let tol = rel_tol * k.abs().max(1.0);
    if (q - k).abs() <= tol {
        Some(k as i64)
    } else {
        None
    }
}
