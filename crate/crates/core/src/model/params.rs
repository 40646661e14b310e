use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Circuit, grid and base quantities in per unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub r_f: f64,
    pub l_f: f64,
    pub c_f: f64,
    pub scr: f64,
    pub x_over_r: f64,
    pub v_g: f64,
    pub omega0: f64,
    /// rad/s
    pub omega_base: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            r_f: 6.89e-4,
            l_f: 0.54,
            c_f: 0.067,
            scr: 5.0,
            x_over_r: 5.0,
            v_g: 1.0,
            omega0: 1.0,
            omega_base: 100.0 * PI,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l_f", self.l_f),
            ("c_f", self.c_f),
            ("scr", self.scr),
            ("x_over_r", self.x_over_r),
            ("v_g", self.v_g),
            ("omega_base", self.omega_base),
            ("omega0", self.omega0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.r_f >= 0.0 && self.r_f.is_finite()) {
            return Err(Error::Domain(format!("r_f must be non-negative, got {}", self.r_f)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridImpedance> {
        let (r_g, l_g) = grid_impedance(self.scr, self.x_over_r, self.v_g)?;
        Ok(GridImpedance { r_g, l_g })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridImpedance {
    pub r_g: f64,
    pub l_g: f64,
}

/// Series resistance and inductance of the grid connection for a given
/// short-circuit ratio and X/R ratio.
pub fn grid_impedance(scr: f64, x_over_r: f64, v_g: f64) -> Result<(f64, f64)> {
    if !(scr > 0.0) || !(x_over_r > 0.0) || !(v_g > 0.0) {
        return Err(Error::Domain(format!(
            "grid impedance needs positive scr, x_over_r and v_g (got {scr}, {x_over_r}, {v_g})"
        )));
    }
    let z = v_g * v_g / scr;
    let r_g = z / 1.0f64.hypot(x_over_r);
    let l_g = r_g * x_over_r;
    Ok((r_g, l_g))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GflGains {
    pub kp_pll: f64,
    pub ki_pll: f64,
    pub kp_o1: f64,
    pub ki_o1: f64,
    pub kp_i1: f64,
    pub ki_i1: f64,
}

impl Default for GflGains {
    fn default() -> Self {
        Self {
            kp_pll: 0.5,
            ki_pll: 1.0 / PI,
            kp_o1: 0.01,
            ki_o1: 1.0 / PI,
            kp_i1: 1.0,
            ki_i1: 10.0 / PI,
        }
    }
}

impl GflGains {
    pub fn validate(&self) -> Result<()> {
        non_negative(&[
            ("kp_pll", self.kp_pll),
            ("ki_pll", self.ki_pll),
            ("kp_o1", self.kp_o1),
            ("ki_o1", self.ki_o1),
            ("kp_i1", self.kp_i1),
            ("ki_i1", self.ki_i1),
        ])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GfmGains {
    pub j_virt: f64,
    pub k_d: f64,
    pub k_omega: f64,
    pub k_u: f64,
    pub k_q: f64,
    pub kp_q: f64,
    pub ki_q: f64,
    pub kp_o2: f64,
    pub ki_o2: f64,
    pub kp_i2: f64,
    pub ki_i2: f64,
}

impl Default for GfmGains {
    /// `kp_q` is calibrated so that the inner-current-loop boundary at
    /// `ki_i2 = 500`, SCR 4 sits at `kp_i2 = 6.73`.
    fn default() -> Self {
        Self {
            j_virt: 1.0 / (100.0 * PI),
            k_d: 20.0,
            k_omega: 0.0,
            k_u: 1.0,
            k_q: 1.0,
            kp_q: 0.137,
            ki_q: 10.0 / PI,
            kp_o2: 1.0,
            ki_o2: 1.0 / PI,
            kp_i2: 10.0,
            ki_i2: 1.0 / PI,
        }
    }
}

impl GfmGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.j_virt > 0.0) {
            return Err(Error::Domain(format!("j_virt must be positive, got {}", self.j_virt)));
        }
        non_negative(&[
            ("k_d", self.k_d),
            ("k_omega", self.k_omega),
            ("k_u", self.k_u),
            ("k_q", self.k_q),
            ("kp_q", self.kp_q),
            ("ki_q", self.ki_q),
            ("kp_o2", self.kp_o2),
            ("ki_o2", self.ki_o2),
            ("kp_i2", self.kp_i2),
            ("ki_i2", self.ki_i2),
        ])
    }
}

fn non_negative(items: &[(&str, f64)]) -> Result<()> {
    for &(name, v) in items {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be non-negative and finite, got {v}")));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub p_ref: f64,
    pub q_ref: f64,
    pub vd_ref: f64,
    pub vq_ref: f64,
}

impl Default for Setpoint {
    fn default() -> Self {
        Self { p_ref: 1.0, q_ref: 0.0, vd_ref: 1.0, vq_ref: 0.0 }
    }
}

impl Setpoint {
    pub const DEFAULT_LIMIT: f64 = 2.0;

    /// Names of the fields whose magnitude exceeds `limit`.
    pub fn out_of_range(&self, limit: f64) -> Vec<&'static str> {
        [("p_ref", self.p_ref), ("q_ref", self.q_ref), ("vd_ref", self.vd_ref), ("vq_ref", self.vq_ref)]
            .into_iter()
            .filter(|(_, v)| v.abs() > limit)
            .map(|(n, _)| n)
            .collect()
    }
}

/// Control mode of the inverter. `Gfl` is switching signal 1, `Gfm` is 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gfl,
    Gfm,
}

impl Mode {
    pub fn order(self) -> usize {
        match self {
            Mode::Gfl => 12,
            Mode::Gfm => 13,
        }
    }

    pub fn input_count(self) -> usize {
        match self {
            Mode::Gfl => 2,
            Mode::Gfm => 4,
        }
    }

    pub fn sigma(self) -> u8 {
        match self {
            Mode::Gfl => 1,
            Mode::Gfm => 2,
        }
    }

    pub fn other(self) -> Mode {
        match self {
            Mode::Gfl => Mode::Gfm,
            Mode::Gfm => Mode::Gfl,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Gfl => "gfl",
            Mode::Gfm => "gfm",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gfl" | "1" => Ok(Mode::Gfl),
            "gfm" | "2" => Ok(Mode::Gfm),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected gfl or gfm)"))),
        }
    }
}

/// Everything needed to evaluate either subsystem: circuit, both gain
/// sets and the operating setpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub params: SystemParams,
    pub gfl: GflGains,
    pub gfm: GfmGains,
    pub setpoint: Setpoint,
}

/// Names accepted by [`Plant::get`] and [`Plant::set`], in config order.
pub const PARAM_NAMES: &[&str] = &[
    "r_f", "l_f", "c_f", "scr", "x_over_r", "v_g", "omega0", "omega_base", "kp_pll", "ki_pll", "kp_o1",
    "ki_o1", "kp_i1", "ki_i1", "j_virt", "k_d", "k_omega", "k_u", "k_q", "kp_q", "ki_q", "kp_o2", "ki_o2",
    "kp_i2", "ki_i2", "p_ref", "q_ref", "vd_ref", "vq_ref",
];

impl Plant {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.gfl.validate()?;
        self.gfm.validate()?;
        for (name, v) in [
            ("p_ref", self.setpoint.p_ref),
            ("q_ref", self.setpoint.q_ref),
            ("vd_ref", self.setpoint.vd_ref),
            ("vq_ref", self.setpoint.vq_ref),
        ] {
            if !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        let p = &mut self.params;
        let g = &mut self.gfl;
        let m = &mut self.gfm;
        let s = &mut self.setpoint;
        Some(match name {
            "r_f" => &mut p.r_f,
            "l_f" => &mut p.l_f,
            "c_f" => &mut p.c_f,
            "scr" => &mut p.scr,
            "x_over_r" => &mut p.x_over_r,
            "v_g" => &mut p.v_g,
            "omega0" => &mut p.omega0,
            "omega_base" => &mut p.omega_base,
            "kp_pll" => &mut g.kp_pll,
            "ki_pll" => &mut g.ki_pll,
            "kp_o1" => &mut g.kp_o1,
            "ki_o1" => &mut g.ki_o1,
            "kp_i1" => &mut g.kp_i1,
            "ki_i1" => &mut g.ki_i1,
            "j_virt" => &mut m.j_virt,
            "k_d" => &mut m.k_d,
            "k_omega" => &mut m.k_omega,
            "k_u" => &mut m.k_u,
            "k_q" => &mut m.k_q,
            "kp_q" => &mut m.kp_q,
            "ki_q" => &mut m.ki_q,
            "kp_o2" => &mut m.kp_o2,
            "ki_o2" => &mut m.ki_o2,
            "kp_i2" => &mut m.kp_i2,
            "ki_i2" => &mut m.ki_i2,
            "p_ref" => &mut s.p_ref,
            "q_ref" => &mut s.q_ref,
            "vd_ref" => &mut s.vd_ref,
            "vq_ref" => &mut s.vq_ref,
            _ => return None,
        })
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        let mut copy = *self;
        copy.slot(name).map(|v| *v).ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = self.slot(name).ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        *slot = value;
        Ok(())
    }

    pub fn with(mut self, name: &str, value: f64) -> Result<Self> {
        self.set(name, value)?;
        Ok(self)
    }

    /// Input vector of the linearized model: `[p_ref, q_ref]` for GFL,
    /// `[p_ref, q_ref, vd_ref, vq_ref]` for GFM.
    pub fn inputs(&self, mode: Mode) -> Vec<f64> {
        let s = &self.setpoint;
        match mode {
            Mode::Gfl => vec![s.p_ref, s.q_ref],
            Mode::Gfm => vec![s.p_ref, s.q_ref, s.vd_ref, s.vq_ref],
        }
    }

    pub fn set_inputs(&mut self, mode: Mode, u: &[f64]) -> Result<()> {
        if u.len() != mode.input_count() {
            return Err(Error::Dimension { expected: mode.input_count(), got: u.len() });
        }
        self.setpoint.p_ref = u[0];
        self.setpoint.q_ref = u[1];
        if mode == Mode::Gfm {
            self.setpoint.vd_ref = u[2];
            self.setpoint.vq_ref = u[3];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impedance_at_defaults() {
        // |Z| = 0.2 split by X/R = 5: r = 0.2/sqrt(26), l = r*5.
        let (r, l) = grid_impedance(5.0, 5.0, 1.0).unwrap();
        assert!((r - 0.039_223_227_027_636_8).abs() < 1e-15);
        assert!((l - 0.196_116_135_138_184).abs() < 1e-15);
    }

    #[test]
    fn impedance_symmetric_at_unit_ratio() {
        let (r, l) = grid_impedance(2.0, 1.0, 1.0).unwrap();
        assert_eq!(r, l);
        assert!((r - 0.353_553_390_593_273_8).abs() < 1e-15);
    }

    #[test]
    fn impedance_inductive_limit() {
        let (r, l) = grid_impedance(1.0, 1e12, 1.0).unwrap();
        assert!(r < 1e-11);
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impedance_rejects_non_positive() {
        assert!(grid_impedance(0.0, 5.0, 1.0).is_err());
        assert!(grid_impedance(5.0, -1.0, 1.0).is_err());
        assert!(grid_impedance(5.0, 5.0, 0.0).is_err());
    }

    #[test]
    fn get_set_round_trip_every_name() {
        let mut plant = Plant::default();
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            plant.set(name, i as f64 + 0.5).unwrap();
        }
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            assert_eq!(plant.get(name).unwrap(), i as f64 + 0.5, "{name}");
        }
        assert!(plant.get("kp_i3").is_err());
    }

    #[test]
    fn validation() {
        assert!(Plant::default().validate().is_ok());
        let bad = Plant::default().with("l_f", 0.0).unwrap();
        assert!(bad.validate().is_err());
        let bad = Plant::default().with("kp_i1", -1.0).unwrap();
        assert!(bad.validate().is_err());
        let bad = Plant::default().with("j_virt", 0.0).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn setpoint_range() {
        let sp = Setpoint { p_ref: 50.0, ..Setpoint::default() };
        assert_eq!(sp.out_of_range(Setpoint::DEFAULT_LIMIT), vec!["p_ref"]);
        assert!(Setpoint::default().out_of_range(2.0).is_empty());
    }
}
