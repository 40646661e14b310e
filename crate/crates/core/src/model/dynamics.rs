//! Averaged nonlinear dynamics in the rotating frame.
//!
//! Electrical equations and the frame angle run on `omega_base` (time in
//! seconds, reactances in per unit). Controller integrators and the
//! virtual rotor are integrated directly in seconds.

use crate::model::params::{GflGains, GfmGains, Mode, Plant, Setpoint, SystemParams};
use crate::model::state::{GflState, GfmState, Physical};

/// Active and reactive power at the connection point.
#[inline]
pub fn power_outputs(v_d: f64, v_q: f64, i_d: f64, i_q: f64) -> (f64, f64) {
    (v_d * i_d + v_q * i_q, v_q * i_d - v_d * i_q)
}

#[inline]
fn line_impedance(p: &SystemParams) -> (f64, f64) {
    let z = p.v_g * p.v_g / p.scr;
    let r_g = z / 1.0f64.hypot(p.x_over_r);
    (r_g, r_g * p.x_over_r)
}

/// Filter, capacitor and line derivatives, ordered
/// `[i_d, i_q, i_ld, i_lq, v_d, v_q]`.
pub fn network_derivatives(p: &SystemParams, omega: f64, e_d: f64, e_q: f64, x: &Physical) -> [f64; 6] {
    let (r_g, l_g) = line_impedance(p);
    let wb = p.omega_base;
    let (sin_d, cos_d) = x.delta.sin_cos();
    let vg_d = p.v_g * cos_d;
    let vg_q = -p.v_g * sin_d;
    let di_ld = wb / p.l_f * (e_d - x.v_d + omega * p.l_f * x.i_lq - p.r_f * x.i_ld);
    let di_lq = wb / p.l_f * (e_q - x.v_q - omega * p.l_f * x.i_ld - p.r_f * x.i_lq);
    let dv_d = wb / p.c_f * (x.i_ld - x.i_d + omega * p.c_f * x.v_q);
    let dv_q = wb / p.c_f * (x.i_lq - x.i_q - omega * p.c_f * x.v_d);
    let di_d = wb / l_g * (x.v_d - vg_d + omega * l_g * x.i_q - r_g * x.i_d);
    let di_q = wb / l_g * (x.v_q - vg_q - omega * l_g * x.i_d - r_g * x.i_q);
    [di_d, di_q, di_ld, di_lq, dv_d, dv_q]
}

/// Algebraic controller signals of the GFL subsystem at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GflSignals {
    pub omega: f64,
    pub p: f64,
    pub q: f64,
    pub i_ld_ref: f64,
    pub i_lq_ref: f64,
    pub e_d_ref: f64,
    pub e_q_ref: f64,
}

pub fn gfl_signals(x: &GflState, p: &SystemParams, g: &GflGains, sp: &Setpoint) -> GflSignals {
    let omega = g.kp_pll * x.v_q + g.ki_pll * x.zeta;
    let (pw, q) = power_outputs(x.v_d, x.v_q, x.i_d, x.i_q);
    let i_ld_ref = g.kp_o1 * (sp.p_ref - pw) + g.ki_o1 * x.gamma_d;
    let i_lq_ref = g.kp_o1 * (q - sp.q_ref) + g.ki_o1 * x.gamma_q;
    let e_d_ref = x.v_d - omega * p.l_f * x.i_lq + g.kp_i1 * (i_ld_ref - x.i_ld) + g.ki_i1 * x.xi_d;
    let e_q_ref = x.v_q + omega * p.l_f * x.i_ld + g.kp_i1 * (i_lq_ref - x.i_lq) + g.ki_i1 * x.xi_q;
    GflSignals { omega, p: pw, q, i_ld_ref, i_lq_ref, e_d_ref, e_q_ref }
}

pub fn gfl_derivatives(x: &GflState, p: &SystemParams, g: &GflGains, sp: &Setpoint) -> [f64; 12] {
    let s = gfl_signals(x, p, g, sp);
    let [di_d, di_q, di_ld, di_lq, dv_d, dv_q] = network_derivatives(p, s.omega, s.e_d_ref, s.e_q_ref, &x.physical());
    [
        x.v_q,
        p.omega_base * (s.omega - p.omega0),
        sp.p_ref - s.p,
        s.q - sp.q_ref,
        s.i_ld_ref - x.i_ld,
        s.i_lq_ref - x.i_lq,
        di_d,
        di_q,
        di_ld,
        di_lq,
        dv_d,
        dv_q,
    ]
}

/// Algebraic controller signals of the GFM subsystem at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GfmSignals {
    pub omega: f64,
    pub p: f64,
    pub q: f64,
    /// Input of the reactive/voltage integrator.
    pub rvl_error: f64,
    /// Voltage magnitude reference produced by the reactive/voltage loop.
    pub e_ref: f64,
    pub i_ld_ref: f64,
    pub i_lq_ref: f64,
    pub e_d_ref: f64,
    pub e_q_ref: f64,
}

pub fn gfm_signals(x: &GfmState, p: &SystemParams, g: &GfmGains, sp: &Setpoint) -> GfmSignals {
    let omega = x.omega;
    let (pw, q) = power_outputs(x.v_d, x.v_q, x.i_d, x.i_q);
    let rvl_error = g.k_u * (sp.vd_ref - x.v_d) + g.k_q * (sp.q_ref - q);
    let e_ref = sp.vd_ref + g.kp_q * rvl_error + g.ki_q * x.e_int;
    let i_ld_ref = x.i_d - omega * p.c_f * x.v_q + g.kp_o2 * (e_ref - x.v_d) + g.ki_o2 * x.gamma_d;
    let i_lq_ref = x.i_q + omega * p.c_f * x.v_d + g.kp_o2 * (sp.vq_ref - x.v_q) + g.ki_o2 * x.gamma_q;
    let e_d_ref = x.v_d - omega * p.l_f * x.i_lq + g.kp_i2 * (i_ld_ref - x.i_ld) + g.ki_i2 * x.xi_d;
    let e_q_ref = x.v_q + omega * p.l_f * x.i_ld + g.kp_i2 * (i_lq_ref - x.i_lq) + g.ki_i2 * x.xi_q;
    GfmSignals { omega, p: pw, q, rvl_error, e_ref, i_ld_ref, i_lq_ref, e_d_ref, e_q_ref }
}

pub fn gfm_derivatives(x: &GfmState, p: &SystemParams, g: &GfmGains, sp: &Setpoint) -> [f64; 13] {
    let s = gfm_signals(x, p, g, sp);
    let [di_d, di_q, di_ld, di_lq, dv_d, dv_q] = network_derivatives(p, s.omega, s.e_d_ref, s.e_q_ref, &x.physical());
    let w0 = p.omega0;
    let domega = ((sp.p_ref - s.p) / w0 - (g.k_d + g.k_omega / w0) * (x.omega - w0)) / g.j_virt;
    [
        p.omega_base * (x.omega - w0),
        domega,
        s.rvl_error,
        s.e_ref - x.v_d,
        sp.vq_ref - x.v_q,
        s.i_ld_ref - x.i_ld,
        s.i_lq_ref - x.i_lq,
        di_d,
        di_q,
        di_ld,
        di_lq,
        dv_d,
        dv_q,
    ]
}

/// Mode-agnostic signals used by the switching logic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlSignals {
    pub omega: f64,
    pub p: f64,
    pub q: f64,
    pub i_ld_ref: f64,
    pub i_lq_ref: f64,
    pub e_d_ref: f64,
    pub e_q_ref: f64,
}

impl Plant {
    /// Right-hand side for a flat state vector. Panics if `x` has the wrong
    /// length for `mode`.
    pub fn derivatives_into(&self, mode: Mode, x: &[f64], out: &mut [f64]) {
        match mode {
            Mode::Gfl => {
                let s = GflState::from_array(x.try_into().expect("GFL state has 12 entries"));
                out.copy_from_slice(&gfl_derivatives(&s, &self.params, &self.gfl, &self.setpoint));
            }
            Mode::Gfm => {
                let s = GfmState::from_array(x.try_into().expect("GFM state has 13 entries"));
                out.copy_from_slice(&gfm_derivatives(&s, &self.params, &self.gfm, &self.setpoint));
            }
        }
    }

    pub fn derivatives(&self, mode: Mode, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; mode.order()];
        self.derivatives_into(mode, x, &mut out);
        out
    }

    pub fn signals(&self, mode: Mode, x: &[f64]) -> ControlSignals {
        match mode {
            Mode::Gfl => {
                let st = GflState::from_array(x.try_into().expect("GFL state has 12 entries"));
                let s = gfl_signals(&st, &self.params, &self.gfl, &self.setpoint);
                ControlSignals {
                    omega: s.omega,
                    p: s.p,
                    q: s.q,
                    i_ld_ref: s.i_ld_ref,
                    i_lq_ref: s.i_lq_ref,
                    e_d_ref: s.e_d_ref,
                    e_q_ref: s.e_q_ref,
                }
            }
            Mode::Gfm => {
                let st = GfmState::from_array(x.try_into().expect("GFM state has 13 entries"));
                let s = gfm_signals(&st, &self.params, &self.gfm, &self.setpoint);
                ControlSignals {
                    omega: s.omega,
                    p: s.p,
                    q: s.q,
                    i_ld_ref: s.i_ld_ref,
                    i_lq_ref: s.i_lq_ref,
                    e_d_ref: s.e_d_ref,
                    e_q_ref: s.e_q_ref,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_examples() {
        assert_eq!(power_outputs(1.0, 0.0, 1.0, 0.0), (1.0, 0.0));
        assert_eq!(power_outputs(0.0, 1.0, 1.0, 0.0), (0.0, 1.0));
        let (p, q) = power_outputs(0.98, 0.02, 0.95, -0.1);
        assert!((p - 0.929).abs() < 1e-12);
        assert!((q - 0.117).abs() < 1e-12);
    }

    #[test]
    fn pll_integrator_tracks_vq() {
        let plant = Plant::default();
        let x = GflState { v_q: 0.0123, v_d: 1.0, zeta: 3.0, ..Default::default() };
        let d = gfl_derivatives(&x, &plant.params, &plant.gfl, &plant.setpoint);
        assert_eq!(d[0], 0.0123);
    }

    #[test]
    fn swing_terms_vanish_at_nominal() {
        let plant = Plant::default();
        // P = v_d * i_d = 1 = p_ref and omega = omega0.
        let x = GfmState { omega: 1.0, v_d: 1.0, i_d: 1.0, i_ld: 1.0, ..Default::default() };
        let d = gfm_derivatives(&x, &plant.params, &plant.gfm, &plant.setpoint);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn decoupling_cancels_cross_terms() {
        // With zero PI errors the filter equation sees e - v + w L i_l cross
        // terms cancel, leaving only the resistive drop.
        let plant = Plant::default();
        let p = plant.params;
        let x = GflState {
            zeta: 1.1 / plant.gfl.ki_pll,
            v_d: 0.97,
            v_q: 0.0,
            i_ld: 0.8,
            i_lq: -0.3,
            i_d: 0.8,
            i_q: -0.3,
            ..Default::default()
        };
        // Zero PI errors: references equal actual currents and integrators zero.
        let mut x = x;
        let s0 = gfl_signals(&x, &p, &plant.gfl, &plant.setpoint);
        x.gamma_d += (x.i_ld - s0.i_ld_ref) / plant.gfl.ki_o1;
        x.gamma_q += (x.i_lq - s0.i_lq_ref) / plant.gfl.ki_o1;
        let s = gfl_signals(&x, &p, &plant.gfl, &plant.setpoint);
        assert!((s.i_ld_ref - x.i_ld).abs() < 1e-14);
        let d = gfl_derivatives(&x, &p, &plant.gfl, &plant.setpoint);
        let expect_d = -p.omega_base / p.l_f * p.r_f * x.i_ld;
        let expect_q = -p.omega_base / p.l_f * p.r_f * x.i_lq;
        assert!((d[8] - expect_d).abs() < 1e-12, "{} vs {}", d[8], expect_d);
        assert!((d[9] - expect_q).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_bit_identical() {
        let plant = Plant::default();
        let x: Vec<f64> = (0..13).map(|i| 0.1 * i as f64 - 0.4).collect();
        let a = plant.derivatives(Mode::Gfm, &x);
        let b = plant.derivatives(Mode::Gfm, &x);
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
