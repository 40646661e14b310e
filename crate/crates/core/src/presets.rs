//! Named parameter planes with their default search boxes and origins.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{Mode, Plant};
use crate::sssr::{Axis, ParamSpace};

/// A two-parameter plane of one subsystem, with the other parameters
/// pinned by `fixed` on top of a base plant.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanePreset {
    pub name: String,
    pub mode: Mode,
    pub axes: Vec<Axis>,
    pub origin: Vec<f64>,
    pub fixed: Vec<(String, f64)>,
}

impl PlanePreset {
    pub fn plant(&self, base: &Plant) -> Result<Plant> {
        let mut p = *base;
        for (k, v) in &self.fixed {
            p.set(k, *v)?;
        }
        Ok(p)
    }

    pub fn space(&self, base: &Plant) -> Result<ParamSpace> {
        ParamSpace::for_plant(self.plant(base)?, self.mode, self.axes.clone())
    }
}

fn plane(name: String, mode: Mode, axes: Vec<Axis>, origin: Vec<f64>, fixed: Vec<(&str, f64)>) -> PlanePreset {
    PlanePreset { name, mode, axes, origin, fixed: fixed.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
}

/// GFL inner current loop gains.
pub fn gfl_icl(scr: f64) -> PlanePreset {
    plane(
        format!("gfl-icl-scr{scr}"),
        Mode::Gfl,
        vec![Axis::new("kp_i1", 0.0, 10.0), Axis::new("ki_i1", 0.0, 5000.0)],
        vec![0.8, 500.0],
        vec![("scr", scr)],
    )
}

/// GFL outer power loop gains.
pub fn gfl_opl(scr: f64) -> PlanePreset {
    plane(
        format!("gfl-opl-scr{scr}"),
        Mode::Gfl,
        vec![Axis::new("kp_o1", 0.001, 0.1), Axis::new("ki_o1", 0.01, 5.0)],
        vec![0.01, 1.0 / PI],
        vec![("scr", scr)],
    )
}

/// GFM outer voltage loop gains.
pub fn gfm_ovl(scr: f64) -> PlanePreset {
    plane(
        format!("gfm-ovl-scr{scr}"),
        Mode::Gfm,
        vec![Axis::new("kp_o2", 0.0, 10.0), Axis::new("ki_o2", 0.0, 2000.0)],
        vec![5.0, 200.0],
        vec![("scr", scr)],
    )
}

/// GFM inner current loop gains.
pub fn gfm_icl(scr: f64) -> PlanePreset {
    plane(
        format!("gfm-icl-scr{scr}"),
        Mode::Gfm,
        vec![Axis::new("kp_i2", 0.0, 20.0), Axis::new("ki_i2", 0.0, 1000.0)],
        vec![10.0, 20.0],
        vec![("scr", scr)],
    )
}

/// Grid-strength plane (SCR against X/R) at the base plant's own gains.
pub fn grid_plane(mode: Mode) -> PlanePreset {
    let origin = match mode {
        Mode::Gfl => vec![10.0, 2.0],
        Mode::Gfm => vec![3.0, 2.0],
    };
    plane(
        format!("{}-grid", mode.name()),
        mode,
        vec![Axis::new("scr", 2.0, 18.0), Axis::new("x_over_r", 0.1, 20.0)],
        origin,
        vec![],
    )
}

/// GFL grid-strength plane at a given current-loop gain.
pub fn gfl_grid(kp_i1: f64) -> PlanePreset {
    let mut p = grid_plane(Mode::Gfl);
    p.name = format!("gfl-grid-kpi{kp_i1}");
    p.fixed.push(("kp_i1".into(), kp_i1));
    p
}

/// GFM grid-strength plane at a given current-loop gain.
pub fn gfm_grid(kp_i2: f64) -> PlanePreset {
    let mut p = grid_plane(Mode::Gfm);
    p.name = format!("gfm-grid-kpi{kp_i2}");
    p.fixed.push(("kp_i2".into(), kp_i2));
    p
}

pub const PLANE_NAMES: [&str; 9] =
    ["gfl-icl", "gfl-opl", "gfm-ovl", "gfm-icl", "gfl-grid", "gfm-grid", "fig9-gfl", "fig9-gfm", "fig10"];

/// Looks a plane up by name, e.g. `gfl-icl` with `scr = 2`.
pub fn plane_by_name(name: &str, value: Option<f64>) -> Result<PlanePreset> {
    Ok(match name {
        "gfl-icl" => gfl_icl(value.unwrap_or(2.0)),
        "gfl-opl" => gfl_opl(value.unwrap_or(2.0)),
        "gfm-ovl" => gfm_ovl(value.unwrap_or(2.0)),
        "gfm-icl" => gfm_icl(value.unwrap_or(2.0)),
        "gfl-grid" => gfl_grid(value.unwrap_or(1.0)),
        "gfm-grid" => gfm_grid(value.unwrap_or(10.0)),
        "fig9-gfl" => grid_plane(Mode::Gfl),
        "fig9-gfm" => grid_plane(Mode::Gfm),
        "fig10" => gfm_icl(2.0),
        other => {
            return Err(Error::Config(format!(
                "unknown plane `{other}` (one of {})",
                PLANE_NAMES.join(", ")
            )))
        }
    })
}

/// Operating points probed by the time-domain check of the current-loop
/// boundary, ordered from deep inside the region to outside it.
pub fn icl_test_points(mode: Mode) -> [(f64, f64); 4] {
    match mode {
        Mode::Gfl => [(1.0, 2500.0), (2.5, 2500.0), (3.17, 2500.0), (4.0, 2500.0)],
        Mode::Gfm => [(10.0, 500.0), (7.0, 500.0), (6.73, 500.0), (6.0, 500.0)],
    }
}

/// Plant at one of the [`icl_test_points`].
pub fn icl_test_plant(base: &Plant, mode: Mode, point: (f64, f64)) -> Result<Plant> {
    let (kp, ki, scr) = match mode {
        Mode::Gfl => ("kp_i1", "ki_i1", 2.0),
        Mode::Gfm => ("kp_i2", "ki_i2", 4.0),
    };
    base.with("scr", scr)?.with(kp, point.0)?.with(ki, point.1)
}
