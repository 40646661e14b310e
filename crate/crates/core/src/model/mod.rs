//! Parameter sets, state vectors and the nonlinear subsystem dynamics.

mod dynamics;
mod params;
mod state;

pub use dynamics::{
    gfl_derivatives, gfl_signals, gfm_derivatives, gfm_signals, network_derivatives, power_outputs,
    ControlSignals, GflSignals, GfmSignals,
};
pub use params::{grid_impedance, GflGains, GfmGains, GridImpedance, Mode, Plant, Setpoint, SystemParams, PARAM_NAMES};
pub use state::{state_names, GflState, GfmState, Physical, SubsystemState};
