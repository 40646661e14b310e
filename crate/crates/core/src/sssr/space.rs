use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearization::margin;
use crate::model::{Mode, Plant, PARAM_NAMES};

/// One parameter axis with its search bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl Axis {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self { name: name.into(), lower, upper }
    }

    pub fn span(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn to_unit(&self, x: f64) -> f64 {
        (x - self.lower) / self.span()
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.lower + u * self.span()
    }
}

/// Signed margin at a physical point; `None` marks an infeasible point
/// (no equilibrium or a failed eigen-solve).
pub type MarginFn = Arc<dyn Fn(&[f64]) -> Option<f64> + Send + Sync>;

/// A box in parameter space plus the margin evaluated over it. Ray
/// geometry runs in coordinates normalized to `[0, 1]` per axis.
#[derive(Clone)]
pub struct ParamSpace {
    axes: Vec<Axis>,
    margin: MarginFn,
}

impl fmt::Debug for ParamSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamSpace").field("axes", &self.axes).finish_non_exhaustive()
    }
}

impl ParamSpace {
    pub fn new(axes: Vec<Axis>, margin: MarginFn) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Config("parameter space needs at least one axis".into()));
        }
        for a in &axes {
            if !(a.lower < a.upper) || !a.lower.is_finite() || !a.upper.is_finite() {
                return Err(Error::Config(format!(
                    "axis {} needs finite lower < upper (got {}, {})",
                    a.name, a.lower, a.upper
                )));
            }
        }
        Ok(Self { axes, margin })
    }

    /// Space over named plant parameters; the remaining parameters stay at
    /// the values in `plant`.
    pub fn for_plant(plant: Plant, mode: Mode, axes: Vec<Axis>) -> Result<Self> {
        for a in &axes {
            if !PARAM_NAMES.contains(&a.name.as_str()) {
                return Err(Error::Config(format!("unknown parameter axis `{}`", a.name)));
            }
        }
        let names: Vec<String> = axes.iter().map(|a| a.name.clone()).collect();
        let f = move |x: &[f64]| {
            let mut p = plant;
            for (name, &v) in names.iter().zip(x) {
                p.set(name, v).ok()?;
            }
            margin(&p, mode).ok().filter(|m| m.is_finite())
        };
        Self::new(axes, Arc::new(f))
    }

    /// Analytic ellipse margin `1 - |(x - c) / s|`, positive inside.
    pub fn synthetic_ellipse(center: &[f64], semi_axes: &[f64], axes: Vec<Axis>) -> Result<Self> {
        if center.len() != axes.len() || semi_axes.len() != axes.len() {
            return Err(Error::Dimension { expected: axes.len(), got: center.len().min(semi_axes.len()) });
        }
        let c = center.to_vec();
        let s = semi_axes.to_vec();
        let f = move |x: &[f64]| {
            let r2: f64 = x.iter().zip(&c).zip(&s).map(|((xi, ci), si)| ((xi - ci) / si).powi(2)).sum();
            Some(1.0 - r2.sqrt())
        };
        Self::new(axes, Arc::new(f))
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.axes.iter().zip(x).map(|(a, &v)| a.to_unit(v)).collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.axes.iter().zip(u).map(|(a, &v)| a.from_unit(v)).collect()
    }

    pub fn margin_at(&self, x: &[f64]) -> Option<f64> {
        (self.margin)(x)
    }

    pub fn margin_at_unit(&self, u: &[f64]) -> Option<f64> {
        (self.margin)(&self.from_unit(u))
    }

    /// Product of axis spans; converts normalized volumes to physical ones.
    pub fn volume_scale(&self) -> f64 {
        self.axes.iter().map(Axis::span).product()
    }
}
