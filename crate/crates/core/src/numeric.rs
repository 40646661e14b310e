use nalgebra::DMatrix;

/// Relative step used for every central difference in the crate.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference Jacobian of `f` at `x`, step `h * max(1, |x_j|)`.
pub fn central_jacobian<F>(f: F, x: &[f64], m: usize, h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    for j in 0..n {
        let step = h * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        f(&xp, &mut fp);
        xp[j] = x[j] - step;
        f(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    jac
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| if x.is_nan() { f64::NAN } else { acc.max(x.abs()) })
}
