//! Small-signal stability toolkit for a grid-connected inverter that can
//! run grid-following (GFL) or grid-forming (GFM) control.

pub mod config;
pub mod csi;
pub mod equilibrium;
pub mod error;
pub mod gmm;
pub mod linearization;
pub mod model;
pub mod numeric;
pub mod presets;
pub mod sssr;
pub mod switching;

pub use error::{Error, Result};
pub use model::{Mode, Plant};
