//! Small-signal state and input matrices, spectra and stability margins.

use std::io::Write;

use nalgebra::{Complex, DMatrix, Schur};
use serde::{Deserialize, Serialize};

use crate::equilibrium::{solve_equilibrium, EquilibriumResult, NewtonOptions};
use crate::error::{Error, Result};
use crate::model::{Mode, Plant, SubsystemState};
use crate::numeric::{central_jacobian, FD_STEP};

/// Width of the marginal band below the imaginary axis.
pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub mode: Mode,
    pub equilibrium: SubsystemState,
    /// n x n state matrix, 1/s.
    pub a: DMatrix<f64>,
    /// n x m input matrix over the setpoint inputs of the mode.
    pub b: DMatrix<f64>,
}

pub fn linearize(plant: &Plant, eq: &EquilibriumResult) -> Result<LinearModel> {
    let tol = NewtonOptions::default().tol;
    if !eq.converged || !(eq.residual_norm < tol) {
        return Err(Error::NotConverged { residual: eq.residual_norm, tol });
    }
    let mode = eq.mode();
    let n = mode.order();
    let x0 = eq.state.to_vec();
    let a = central_jacobian(|x, out| plant.derivatives_into(mode, x, out), &x0, n, FD_STEP);
    let u0 = plant.inputs(mode);
    let b = central_jacobian(
        |u, out| {
            let mut shifted = *plant;
            shifted.set_inputs(mode, u).expect("input length fixed by mode");
            shifted.derivatives_into(mode, &x0, out);
        },
        &u0,
        n,
        FD_STEP,
    );
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite entry in linearized matrices".into()));
    }
    Ok(LinearModel { mode, equilibrium: eq.state, a, b })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Stable,
    Marginal,
    Unstable,
}

impl Classification {
    pub fn from_rightmost(re: f64, epsilon: f64) -> Self {
        if re < -epsilon {
            Classification::Stable
        } else if re <= 0.0 {
            Classification::Marginal
        } else {
            Classification::Unstable
        }
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::Stable => "stable",
            Classification::Marginal => "marginal",
            Classification::Unstable => "unstable",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    /// Sorted by descending real part.
    pub eigenvalues: Vec<Complex<f64>>,
    pub rightmost: Complex<f64>,
    /// Distance of the rightmost eigenvalue to the imaginary axis.
    pub margin_mu: f64,
    pub classification: Classification,
}

impl StabilityReport {
    /// Positive when stable, negative when the rightmost eigenvalue is in
    /// the right half plane.
    pub fn signed_margin(&self) -> f64 {
        -self.rightmost.re
    }
}

/// Diagonal similarity scaling by powers of two so that row and column
/// norms are comparable. Eigenvalues are unchanged.
fn balance(a: &mut DMatrix<f64>) {
    const RADIX: f64 = 2.0;
    let n = a.nrows();
    for _ in 0..100 {
        let mut done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            while c < r / RADIX {
                f *= RADIX;
                c *= RADIX * RADIX;
            }
            while c > r * RADIX {
                f /= RADIX;
                c /= RADIX * RADIX;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Full spectrum of a real square matrix, sorted by descending real part.
pub fn spectrum(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension { expected: a.nrows(), got: a.ncols() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenSolver);
    }
    let mut m = a.clone();
    balance(&mut m);
    let schur = Schur::try_new(m, f64::EPSILON, 10_000).ok_or(Error::EigenSolver)?;
    let mut eig: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    if eig.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigenSolver);
    }
    eig.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    Ok(eig)
}

pub fn stability_report(model: &LinearModel, epsilon: f64) -> Result<StabilityReport> {
    report_for_matrix(&model.a, epsilon)
}

pub fn report_for_matrix(a: &DMatrix<f64>, epsilon: f64) -> Result<StabilityReport> {
    let eigenvalues = spectrum(a)?;
    let rightmost = *eigenvalues.first().ok_or(Error::EigenSolver)?;
    Ok(StabilityReport {
        margin_mu: rightmost.re.abs(),
        classification: Classification::from_rightmost(rightmost.re, epsilon),
        rightmost,
        eigenvalues,
    })
}

/// Equilibrium, linearization and spectrum in one call.
pub fn analyze(plant: &Plant, mode: Mode) -> Result<(EquilibriumResult, LinearModel, StabilityReport)> {
    let eq = solve_equilibrium(mode, plant, None)?;
    let lin = linearize(plant, &eq)?;
    let report = stability_report(&lin, DEFAULT_EPSILON)?;
    Ok((eq, lin, report))
}

/// Signed stability margin (positive = stable).
pub fn margin(plant: &Plant, mode: Mode) -> Result<f64> {
    Ok(analyze(plant, mode)?.2.signed_margin())
}

/// Row-major comma-separated dump with 17 significant digits.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut w: W) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{t}: {e}"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
