//! Comprehensive stability index: weighted mix of normalized margin,
//! sensitivity and distance to the region surface.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::sssr::{Axis, Region};

pub const DEFAULT_RESOLUTION: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsiWeights {
    pub w_m: f64,
    pub w_s: f64,
    pub w_d: f64,
}

impl CsiWeights {
    pub fn new(w_m: f64, w_s: f64, w_d: f64) -> Result<Self> {
        let w = Self { w_m, w_s, w_d };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_m, self.w_s, self.w_d];
        let in_range = all.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range || (all.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights { w_m: self.w_m, w_s: self.w_s, w_d: self.w_d });
        }
        Ok(())
    }

    /// Highest attainable index.
    pub fn max_j(&self) -> f64 {
        self.w_m + self.w_d
    }

    /// Value reported for operating points outside the region; below any
    /// attainable index.
    pub fn sentinel(&self) -> f64 {
        -self.w_s - 1.0
    }

    pub fn combine(&self, m: f64, s: f64, d: f64) -> f64 {
        self.w_m * m - self.w_s * s + self.w_d * d
    }
}

impl Default for CsiWeights {
    fn default() -> Self {
        Self { w_m: 0.4, w_s: 0.3, w_d: 0.3 }
    }
}

/// Distance from a physical point to the region surface, in normalized
/// axis units.
pub fn boundary_distance(x: &[f64], region: &Region) -> Result<f64> {
    if x.len() != region.dim() {
        return Err(Error::Dimension { expected: region.dim(), got: x.len() });
    }
    if !region.contains(x) {
        return Err(Error::OutsideRegion);
    }
    Ok(region.surface_distance_unit(&region.to_unit(x)))
}

/// Max-min scaling to [0, 1]. Returns the scaled values and the span.
pub fn normalize_indicator(values: &[f64]) -> (Vec<f64>, Span) {
    let span = Span::of(values);
    (values.iter().map(|v| span.apply(*v)).collect(), span)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub min: f64,
    pub max: f64,
}

impl Span {
    pub fn of(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() || max <= min {
            log::warn!("indicator span is degenerate; values map to 0.5");
        }
        Self { min, max }
    }

    /// Scaled value clamped to [0, 1]; 0.5 for a degenerate span.
    pub fn apply(&self, v: f64) -> f64 {
        let w = self.max - self.min;
        if !(w > 0.0) || !w.is_finite() {
            return 0.5;
        }
        ((v - self.min) / w).clamp(0.0, 1.0)
    }
}

/// Sensitivity is the gradient norm measured per normalized axis, so axes
/// whose physical ranges differ by orders of magnitude count alike.
fn sensitivity(model: &GmmModel, axes: &[Axis], x: &[f64]) -> f64 {
    let g = model.margin_gradient(x);
    g.iter().zip(axes).map(|(gi, a)| (gi * a.span()).powi(2)).sum::<f64>().sqrt()
}

/// Frozen normalization used to score operating points after the map was
/// built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsiContext {
    pub axes: Vec<String>,
    pub weights: CsiWeights,
    pub margin: Span,
    pub sensitivity: Span,
    pub distance: Span,
}

impl CsiContext {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("context serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsiPoint {
    pub coords: Vec<f64>,
    pub margin: f64,
    pub sensitivity: f64,
    pub distance: f64,
    pub m_bar: f64,
    pub s_bar: f64,
    pub d_bar: f64,
    pub j: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsiMap {
    pub axes: Vec<Axis>,
    pub points: Vec<CsiPoint>,
    pub argmax_j: usize,
    pub argmax_margin: usize,
    pub context: CsiContext,
}

impl CsiMap {
    /// Builds the map from raw indicators at the given points.
    pub fn from_raw(
        axes: Vec<Axis>,
        coords: Vec<Vec<f64>>,
        margin: &[f64],
        sens: &[f64],
        dist: &[f64],
        weights: CsiWeights,
    ) -> Result<Self> {
        weights.validate()?;
        let n = coords.len();
        if n == 0 {
            return Err(Error::DegenerateData("no grid point lies inside the region".into()));
        }
        if margin.len() != n || sens.len() != n || dist.len() != n {
            return Err(Error::LengthMismatch(n, margin.len().min(sens.len()).min(dist.len())));
        }
        let (mb, ms) = normalize_indicator(margin);
        let (sb, ss) = normalize_indicator(sens);
        let (db, ds) = normalize_indicator(dist);
        let points: Vec<CsiPoint> = coords
            .into_iter()
            .enumerate()
            .map(|(i, c)| CsiPoint {
                coords: c,
                margin: margin[i],
                sensitivity: sens[i],
                distance: dist[i],
                m_bar: mb[i],
                s_bar: sb[i],
                d_bar: db[i],
                j: weights.combine(mb[i], sb[i], db[i]),
            })
            .collect();
        let argmax = |f: &dyn Fn(&CsiPoint) -> f64| {
            (0..n).fold(0, |best, i| if f(&points[i]) > f(&points[best]) { i } else { best })
        };
        let argmax_j = argmax(&|p| p.j);
        let argmax_margin = argmax(&|p| p.margin);
        let context = CsiContext {
            axes: axes.iter().map(|a| a.name.clone()).collect(),
            weights,
            margin: ms,
            sensitivity: ss,
            distance: ds,
        };
        Ok(Self { axes, points, argmax_j, argmax_margin, context })
    }

    pub fn best_j(&self) -> &CsiPoint {
        &self.points[self.argmax_j]
    }

    pub fn best_margin(&self) -> &CsiPoint {
        &self.points[self.argmax_margin]
    }

    /// Comma-separated rows: coordinates, raw and normalized indicators, J.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let names: Vec<&str> = self.axes.iter().map(|a| a.name.as_str()).collect();
        writeln!(w, "{},margin,sensitivity,distance,m_bar,s_bar,d_bar,j", names.join(","))?;
        for p in &self.points {
            let vals: Vec<String> = p
                .coords
                .iter()
                .chain([p.margin, p.sensitivity, p.distance, p.m_bar, p.s_bar, p.d_bar, p.j].iter())
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(w, "{}", vals.join(","))?;
        }
        Ok(())
    }

    pub fn summary(&self) -> CsiSummary {
        let b = self.best_j();
        let m = self.best_margin();
        CsiSummary {
            points: self.points.len(),
            argmax_j: b.coords.clone(),
            max_j: b.j,
            argmax_margin: m.coords.clone(),
            max_margin: m.margin,
            j_at_argmax_margin: m.j,
            context: self.context.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsiSummary {
    pub points: usize,
    pub argmax_j: Vec<f64>,
    pub max_j: f64,
    pub argmax_margin: Vec<f64>,
    pub max_margin: f64,
    pub j_at_argmax_margin: f64,
    pub context: CsiContext,
}

/// Evenly spaced grid over the full axis box, `resolution` points per axis,
/// keeping the points inside the region.
pub fn grid_points(region: &Region, resolution: usize) -> Vec<Vec<f64>> {
    let l = region.dim();
    let r = resolution.max(2);
    let total = r.checked_pow(l as u32).unwrap_or(usize::MAX);
    (0..total)
        .into_par_iter()
        .filter_map(|mut idx| {
            let mut u = vec![0.0; l];
            for ui in u.iter_mut() {
                *ui = (idx % r) as f64 / (r - 1) as f64;
                idx /= r;
            }
            region.contains_unit(&u).then(|| region.from_unit(&u))
        })
        .collect()
}

pub fn csi_map(region: &Region, model: &GmmModel, resolution: usize, weights: CsiWeights) -> Result<CsiMap> {
    weights.validate()?;
    if model.dim() != region.dim() {
        return Err(Error::SpaceMismatch);
    }
    let coords = grid_points(region, resolution);
    let raw: Vec<(f64, f64, f64)> = coords
        .par_iter()
        .map(|x| {
            let d = region.surface_distance_unit(&region.to_unit(x));
            (model.predict_margin(x), sensitivity(model, &region.axes, x), d)
        })
        .collect();
    let margin: Vec<f64> = raw.iter().map(|r| r.0).collect();
    let sens: Vec<f64> = raw.iter().map(|r| r.1).collect();
    let dist: Vec<f64> = raw.iter().map(|r| r.2).collect();
    CsiMap::from_raw(region.axes.clone(), coords, &margin, &sens, &dist, weights)
}

/// Index at one operating point with frozen spans. Points outside the
/// region get [`CsiWeights::sentinel`].
pub fn csi_at_operating_point(
    x: &[f64],
    region: &Region,
    model: &GmmModel,
    ctx: &CsiContext,
    weights: CsiWeights,
) -> Result<f64> {
    weights.validate()?;
    if x.len() != region.dim() || model.dim() != region.dim() {
        return Err(Error::Dimension { expected: region.dim(), got: x.len() });
    }
    if ctx.axes.len() != region.dim() || ctx.axes.iter().zip(&region.axes).any(|(a, b)| *a != b.name) {
        return Err(Error::SpaceMismatch);
    }
    let d = match boundary_distance(x, region) {
        Ok(d) => d,
        Err(Error::OutsideRegion) => return Ok(weights.sentinel()),
        Err(e) => return Err(e),
    };
    let m = ctx.margin.apply(model.predict_margin(x));
    let s = ctx.sensitivity.apply(sensitivity(model, &region.axes, x));
    Ok(weights.combine(m, s, ctx.distance.apply(d)))
}
