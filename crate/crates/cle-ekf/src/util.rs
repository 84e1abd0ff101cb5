//! Small shared helpers.

/// Format with 17 significant digits, enough to round-trip any f64.
pub(crate) fn full_precision(v: f64) -> String {
    format!("{v:.16e}")
}

/// In-place symmetrization `M <- (M + M^T) / 2`.
pub(crate) fn symmetrize(m: &mut nalgebra::DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}
