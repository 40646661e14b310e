//! Stability region fitting and interior margin sampling.

mod fit;
pub mod geometry;
mod ismd;
mod search;
mod space;

use std::io::Write;

pub use fit::{fit_sssr, fit_sssr_with, polytope_volume, Facet, FitOptions, Region, MAX_DIM};
pub use ismd::{sample_ismd, Ismd, IsmdSample};
pub use search::{ray_boundary_search, ray_search_with, BoundaryPoint, PointKind, RayOptions, RayOutcome};
pub use space::{Axis, MarginFn, ParamSpace};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Membership {
    /// Indices of the regions containing the point.
    InsideSome(Vec<usize>),
    InsideNone,
}

pub fn region_union_probe(regions: &[&Region], point: &[f64]) -> Result<Membership> {
    let Some(first) = regions.first() else {
        return Ok(Membership::InsideNone);
    };
    if regions.iter().any(|r| !r.same_space(first)) {
        return Err(Error::SpaceMismatch);
    }
    if point.len() != first.dim() {
        return Err(Error::Dimension { expected: first.dim(), got: point.len() });
    }
    let hits: Vec<usize> = regions.iter().enumerate().filter(|(_, r)| r.contains(point)).map(|(i, _)| i).collect();
    Ok(if hits.is_empty() { Membership::InsideNone } else { Membership::InsideSome(hits) })
}

/// Boundary points as CSV: axis columns, then kind, generation and the
/// rightmost real part.
pub fn write_boundary_csv<W: Write>(region: &Region, mut w: W) -> std::io::Result<()> {
    let names: Vec<&str> = region.axes.iter().map(|a| a.name.as_str()).collect();
    writeln!(w, "{},kind,generation,rightmost_re", names.join(","))?;
    for p in &region.points {
        let coords: Vec<String> = p.coords.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{},{},{},{:.16e}", coords.join(","), p.kind.as_str(), p.generation, p.rightmost_re)?;
    }
    Ok(())
}

/// Facets as rows of zero-based point indices followed by the outward
/// normal in normalized coordinates.
pub fn write_facets<W: Write>(region: &Region, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# dimension {}", region.dim())?;
    writeln!(w, "# origin {}", fmt_row(&region.origin))?;
    writeln!(w, "# volume {:.16e}", region.volume())?;
    for f in &region.facets {
        let idx: Vec<String> = f.vertices.iter().map(|i| i.to_string()).collect();
        writeln!(w, "{};{}", idx.join(","), fmt_row(&f.normal))?;
    }
    Ok(())
}

/// Rows `param_1, ..., param_l, margin`.
pub fn write_ismd_csv<W: Write>(axes: &[Axis], samples: &[IsmdSample], mut w: W) -> std::io::Result<()> {
    let names: Vec<&str> = axes.iter().map(|a| a.name.as_str()).collect();
    writeln!(w, "{},margin", names.join(","))?;
    for s in samples {
        writeln!(w, "{},{:.16e}", fmt_row(&s.coords), s.margin)?;
    }
    Ok(())
}

/// Reads the CSV written by [`write_ismd_csv`]; returns axis names and
/// samples.
pub fn read_ismd_csv(text: &str) -> Result<(Vec<String>, Vec<IsmdSample>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty ISMD file".into()))?;
    let cols: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if cols.len() < 2 || cols.last().map(String::as_str) != Some("margin") {
        return Err(Error::Parse("ISMD header must end with `margin`".into()));
    }
    let l = cols.len() - 1;
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", n + 2))))
            .collect::<Result<_>>()?;
        if vals.len() != l + 1 {
            return Err(Error::Parse(format!("row {} has {} columns, expected {}", n + 2, vals.len(), l + 1)));
        }
        samples.push(IsmdSample { coords: vals[..l].to_vec(), margin: vals[l] });
    }
    Ok((cols[..l].to_vec(), samples))
}

pub(crate) fn fmt_row(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",")
}
