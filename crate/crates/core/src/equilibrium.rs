//! Steady-state operating points by damped Newton iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Mode, Plant, SubsystemState};
use crate::numeric::{central_jacobian, max_norm, FD_STEP};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, max_halvings: 30 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumResult {
    pub state: SubsystemState,
    /// Max-norm of the derivative vector at `state`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl EquilibriumResult {
    pub fn mode(&self) -> Mode {
        self.state.mode()
    }
}

/// Initial guess: unit voltage on the d axis, currents carrying the
/// setpoint, zero angle, integrators chosen so every PI stage has zero
/// error at the guess.
pub fn flat_start(mode: Mode, plant: &Plant) -> Result<Vec<f64>> {
    let p = &plant.params;
    let sp = &plant.setpoint;
    let (v_d, v_q) = (1.0, 0.0);
    let (i_d, i_q) = (sp.p_ref, -sp.q_ref);
    let (i_ld, i_lq) = (i_d, i_q);
    let w0 = p.omega0;
    let need = |name: &str, gain: f64| {
        if gain == 0.0 {
            Err(Error::Domain(format!("{name} is zero; the flat start needs a nonzero integral gain")))
        } else {
            Ok(gain)
        }
    };
    match mode {
        Mode::Gfl => {
            let g = &plant.gfl;
            let ki_pll = need("ki_pll", g.ki_pll)?;
            let ki_o = need("ki_o1", g.ki_o1)?;
            let ki_i = need("ki_i1", g.ki_i1)?;
            let zeta = w0 / ki_pll;
            let gamma_d = i_ld / ki_o;
            let gamma_q = i_lq / ki_o;
            let xi_d = p.r_f * i_ld / ki_i;
            let xi_q = p.r_f * i_lq / ki_i;
            Ok(vec![zeta, 0.0, gamma_d, gamma_q, xi_d, xi_q, i_d, i_q, i_ld, i_lq, v_d, v_q])
        }
        Mode::Gfm => {
            let g = &plant.gfm;
            let ki_q = need("ki_q", g.ki_q)?;
            let ki_o = need("ki_o2", g.ki_o2)?;
            let ki_i = need("ki_i2", g.ki_i2)?;
            let (_, q) = crate::model::power_outputs(v_d, v_q, i_d, i_q);
            let err = g.k_u * (sp.vd_ref - v_d) + g.k_q * (sp.q_ref - q);
            let e_int = (v_d - sp.vd_ref - g.kp_q * err) / ki_q;
            let gamma_d = (i_ld - i_d + w0 * p.c_f * v_q) / ki_o;
            let gamma_q = (i_lq - i_q - w0 * p.c_f * v_d) / ki_o;
            let xi_d = p.r_f * i_ld / ki_i;
            let xi_q = p.r_f * i_lq / ki_i;
            Ok(vec![0.0, w0, e_int, gamma_d, gamma_q, xi_d, xi_q, i_d, i_q, i_ld, i_lq, v_d, v_q])
        }
    }
}

/// Damped Newton on `f(x) = 0` with a central-difference Jacobian.
/// Returns the root, its residual max-norm and the iteration count.
pub fn damped_newton<F>(f: F, x0: &[f64], opts: &NewtonOptions) -> Result<(Vec<f64>, f64, usize)>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = vec![0.0; n];
    f(&x, &mut fx);
    let mut res = max_norm(&fx);
    if !res.is_finite() {
        return Err(Error::NonConvergence { iterations: 0, residual: res });
    }
    let mut trial = vec![0.0; n];
    let mut ft = vec![0.0; n];
    for iter in 0..opts.max_iter {
        if res < opts.tol {
            return Ok((x, res, iter));
        }
        let jac: DMatrix<f64> = central_jacobian(&f, &x, n, FD_STEP);
        let rhs = DVector::from_column_slice(&fx);
        let step = jac
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularJacobian { iteration: iter, residual: res })?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            for i in 0..n {
                trial[i] = x[i] - lambda * step[i];
            }
            f(&trial, &mut ft);
            let r = max_norm(&ft);
            if r.is_finite() && r < res {
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence { iterations: iter + 1, residual: res });
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut fx, &mut ft);
        res = max_norm(&fx);
    }
    if res < opts.tol {
        Ok((x, res, opts.max_iter))
    } else {
        Err(Error::NonConvergence { iterations: opts.max_iter, residual: res })
    }
}

pub fn solve_equilibrium(mode: Mode, plant: &Plant, guess: Option<&[f64]>) -> Result<EquilibriumResult> {
    solve_equilibrium_with(mode, plant, guess, &NewtonOptions::default())
}

pub fn solve_equilibrium_with(
    mode: Mode,
    plant: &Plant,
    guess: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<EquilibriumResult> {
    plant.validate()?;
    let x0 = match guess {
        Some(g) if g.len() != mode.order() => return Err(Error::Dimension { expected: mode.order(), got: g.len() }),
        Some(g) => g.to_vec(),
        None => flat_start(mode, plant)?,
    };
    let (x, residual_norm, iterations) =
        damped_newton(|x, out| plant.derivatives_into(mode, x, out), &x0, opts)?;
    Ok(EquilibriumResult {
        state: SubsystemState::from_slice(mode, &x)?,
        residual_norm,
        iterations,
        converged: true,
    })
}
