use crate::error::{Error, Result};
use crate::model::Mode;

/// Grid-following state, ordered as stored in flat vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GflState {
    /// PLL integrator.
    pub zeta: f64,
    pub delta: f64,
    pub gamma_d: f64,
    pub gamma_q: f64,
    pub xi_d: f64,
    pub xi_q: f64,
    pub i_d: f64,
    pub i_q: f64,
    pub i_ld: f64,
    pub i_lq: f64,
    pub v_d: f64,
    pub v_q: f64,
}

impl GflState {
    pub const LEN: usize = 12;
    pub const NAMES: [&'static str; 12] =
        ["zeta", "delta", "gamma_d", "gamma_q", "xi_d", "xi_q", "i_d", "i_q", "i_ld", "i_lq", "v_d", "v_q"];

    pub fn to_array(&self) -> [f64; 12] {
        [
            self.zeta, self.delta, self.gamma_d, self.gamma_q, self.xi_d, self.xi_q, self.i_d, self.i_q,
            self.i_ld, self.i_lq, self.v_d, self.v_q,
        ]
    }

    pub fn from_array(x: [f64; 12]) -> Self {
        let [zeta, delta, gamma_d, gamma_q, xi_d, xi_q, i_d, i_q, i_ld, i_lq, v_d, v_q] = x;
        Self { zeta, delta, gamma_d, gamma_q, xi_d, xi_q, i_d, i_q, i_ld, i_lq, v_d, v_q }
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        let arr: [f64; 12] = x.try_into().map_err(|_| Error::Dimension { expected: 12, got: x.len() })?;
        Ok(Self::from_array(arr))
    }

    pub fn physical(&self) -> Physical {
        Physical {
            delta: self.delta,
            i_d: self.i_d,
            i_q: self.i_q,
            i_ld: self.i_ld,
            i_lq: self.i_lq,
            v_d: self.v_d,
            v_q: self.v_q,
        }
    }
}

/// Grid-forming state, ordered as stored in flat vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GfmState {
    pub delta: f64,
    pub omega: f64,
    /// Reactive/voltage loop integrator.
    pub e_int: f64,
    pub gamma_d: f64,
    pub gamma_q: f64,
    pub xi_d: f64,
    pub xi_q: f64,
    pub i_d: f64,
    pub i_q: f64,
    pub i_ld: f64,
    pub i_lq: f64,
    pub v_d: f64,
    pub v_q: f64,
}

impl GfmState {
    pub const LEN: usize = 13;
    pub const NAMES: [&'static str; 13] = [
        "delta", "omega", "e_int", "gamma_d", "gamma_q", "xi_d", "xi_q", "i_d", "i_q", "i_ld", "i_lq", "v_d",
        "v_q",
    ];

    pub fn to_array(&self) -> [f64; 13] {
        [
            self.delta, self.omega, self.e_int, self.gamma_d, self.gamma_q, self.xi_d, self.xi_q, self.i_d,
            self.i_q, self.i_ld, self.i_lq, self.v_d, self.v_q,
        ]
    }

    pub fn from_array(x: [f64; 13]) -> Self {
        let [delta, omega, e_int, gamma_d, gamma_q, xi_d, xi_q, i_d, i_q, i_ld, i_lq, v_d, v_q] = x;
        Self { delta, omega, e_int, gamma_d, gamma_q, xi_d, xi_q, i_d, i_q, i_ld, i_lq, v_d, v_q }
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        let arr: [f64; 13] = x.try_into().map_err(|_| Error::Dimension { expected: 13, got: x.len() })?;
        Ok(Self::from_array(arr))
    }

    pub fn physical(&self) -> Physical {
        Physical {
            delta: self.delta,
            i_d: self.i_d,
            i_q: self.i_q,
            i_ld: self.i_ld,
            i_lq: self.i_lq,
            v_d: self.v_d,
            v_q: self.v_q,
        }
    }
}

/// Electrical states and the frame angle, shared by both modes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Physical {
    pub delta: f64,
    pub i_d: f64,
    pub i_q: f64,
    pub i_ld: f64,
    pub i_lq: f64,
    pub v_d: f64,
    pub v_q: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SubsystemState {
    Gfl(GflState),
    Gfm(GfmState),
}

impl SubsystemState {
    pub fn from_slice(mode: Mode, x: &[f64]) -> Result<Self> {
        Ok(match mode {
            Mode::Gfl => SubsystemState::Gfl(GflState::from_slice(x)?),
            Mode::Gfm => SubsystemState::Gfm(GfmState::from_slice(x)?),
        })
    }

    pub fn mode(&self) -> Mode {
        match self {
            SubsystemState::Gfl(_) => Mode::Gfl,
            SubsystemState::Gfm(_) => Mode::Gfm,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            SubsystemState::Gfl(s) => s.to_array().to_vec(),
            SubsystemState::Gfm(s) => s.to_array().to_vec(),
        }
    }

    pub fn names(&self) -> &'static [&'static str] {
        state_names(self.mode())
    }

    pub fn physical(&self) -> Physical {
        match self {
            SubsystemState::Gfl(s) => s.physical(),
            SubsystemState::Gfm(s) => s.physical(),
        }
    }
}

pub fn state_names(mode: Mode) -> &'static [&'static str] {
    match mode {
        Mode::Gfl => &GflState::NAMES,
        Mode::Gfm => &GfmState::NAMES,
    }
}
