//! Hyperplane approximation of a stability region boundary.

use log::{debug, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sssr::geometry::{centroid, cone_coefficients, facet_normal, point_simplex_distance, simplex_volume};
use crate::sssr::search::{exit_distance, search_from, unit_direction, BoundaryPoint, PointKind, RayOptions};
use crate::sssr::space::{Axis, ParamSpace};

pub const MAX_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub ray: RayOptions,
    /// Minimum local-to-global volume ratio for keeping a refinement point.
    pub epsilon_r: f64,
    pub max_passes: usize,
    pub max_facets: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { ray: RayOptions::default(), epsilon_r: 1e-3, max_passes: 60, max_facets: 200_000 }
    }
}

/// An `(l-1)`-simplex of boundary point indices with its outward normal
/// (normalized coordinates).
#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    pub vertices: Vec<usize>,
    pub normal: Vec<f64>,
}

/// Fitted region: a closed facet surface, star-shaped about `origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub axes: Vec<Axis>,
    pub origin: Vec<f64>,
    pub origin_unit: Vec<f64>,
    pub points: Vec<BoundaryPoint>,
    pub facets: Vec<Facet>,
    /// Enclosed volume in normalized units.
    pub volume_unit: f64,
    /// Normalized volume after each refinement pass.
    pub history: Vec<f64>,
    pub epsilon: f64,
    pub epsilon_r: f64,
    pub evaluations: usize,
}

impl Region {
    /// Assembles a region from explicit parts (physical coordinates).
    /// Facet normals are recomputed.
    pub fn from_parts(axes: Vec<Axis>, origin: Vec<f64>, vertices: Vec<Vec<f64>>, facets: Vec<Vec<usize>>) -> Result<Self> {
        let l = axes.len();
        if l == 0 || l > MAX_DIM {
            return Err(Error::DimensionGuard(l));
        }
        let to_unit = |x: &[f64]| -> Vec<f64> { axes.iter().zip(x).map(|(a, &v)| a.to_unit(v)).collect() };
        let origin_unit = to_unit(&origin);
        let points: Vec<BoundaryPoint> = vertices
            .iter()
            .map(|v| BoundaryPoint {
                coords: v.clone(),
                unit: to_unit(v),
                rightmost_re: 0.0,
                generation: 0,
                kind: PointKind::Crossing,
            })
            .collect();
        for f in &facets {
            if f.len() != l || f.iter().any(|&i| i >= points.len()) {
                return Err(Error::Domain("facet must list l valid point indices".into()));
            }
        }
        let facets = facets
            .into_iter()
            .map(|vertices| {
                let vs: Vec<&[f64]> = vertices.iter().map(|&i| points[i].unit.as_slice()).collect();
                let normal = facet_normal(&vs, &origin_unit);
                Facet { vertices, normal }
            })
            .collect();
        let mut region = Region {
            axes,
            origin,
            origin_unit,
            points,
            facets,
            volume_unit: 0.0,
            history: Vec::new(),
            epsilon: crate::linearization::DEFAULT_EPSILON,
            epsilon_r: 0.0,
            evaluations: 0,
        };
        region.volume_unit = region.unit_volume();
        Ok(region)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    fn verts(&self, f: &Facet) -> Vec<&[f64]> {
        f.vertices.iter().map(|&i| self.points[i].unit.as_slice()).collect()
    }

    /// Sum of origin-coned simplex volumes, normalized units.
    pub fn unit_volume(&self) -> f64 {
        self.facets.iter().map(|f| simplex_volume(&self.origin_unit, &self.verts(f))).sum()
    }

    /// Enclosed volume in physical units.
    pub fn volume(&self) -> f64 {
        self.volume_unit * self.axes.iter().map(Axis::span).product::<f64>()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.axes.iter().zip(x).map(|(a, &v)| a.to_unit(v)).collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.axes.iter().zip(u).map(|(a, &v)| a.from_unit(v)).collect()
    }

    /// Ray-from-origin containment in normalized coordinates: find the facet
    /// whose cone holds `u` and compare against its hyperplane.
    pub fn contains_unit(&self, u: &[f64]) -> bool {
        const TOL: f64 = 1e-9;
        if u.iter().zip(&self.origin_unit).all(|(a, b)| (a - b).abs() < 1e-15) {
            return true;
        }
        let mut best: Option<f64> = None;
        for f in &self.facets {
            let vs = self.verts(f);
            if let Some(mu) = cone_coefficients(&self.origin_unit, &vs, u) {
                if mu.iter().all(|&m| m >= -TOL) {
                    let s: f64 = mu.iter().sum();
                    if s > 0.0 {
                        best = Some(best.map_or(s, |b: f64| b.max(s)));
                    }
                }
            }
        }
        best.is_some_and(|s| s <= 1.0 + TOL)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.contains_unit(&self.to_unit(x))
    }

    /// Minimum distance to the facet surface, normalized units.
    pub fn surface_distance_unit(&self, u: &[f64]) -> f64 {
        self.facets
            .iter()
            .map(|f| point_simplex_distance(u, &self.verts(f)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Bounding box of the boundary points, normalized units.
    pub fn bounding_box_unit(&self) -> (Vec<f64>, Vec<f64>) {
        let l = self.dim();
        let mut lo = self.origin_unit.clone();
        let mut hi = self.origin_unit.clone();
        for p in &self.points {
            for i in 0..l {
                lo[i] = lo[i].min(p.unit[i]);
                hi[i] = hi[i].max(p.unit[i]);
            }
        }
        (lo, hi)
    }

    pub fn same_space(&self, other: &Region) -> bool {
        self.axes == other.axes
    }
}

/// Enclosed volume in physical units, summed over origin-coned facets.
pub fn polytope_volume(region: &Region) -> f64 {
    region.unit_volume() * region.axes.iter().map(Axis::span).product::<f64>()
}

struct Candidate {
    point: BoundaryPoint,
    evals: usize,
}

/// Refinement point for one facet: search from the centroid along the
/// outward normal (inward towards the origin when the centroid is already
/// unstable). A normal-ray point outside the facet's cone is replaced by a
/// point on the radial ray through the centroid so the surface stays
/// star-shaped.
fn refine_facet(
    space: &ParamSpace,
    origin_unit: &[f64],
    verts: &[&[f64]],
    normal: &[f64],
    opts: &RayOptions,
    generation: usize,
) -> Option<Candidate> {
    if normal.iter().all(|&v| v == 0.0) {
        return None;
    }
    let c = centroid(verts);
    let mc = space.margin_at_unit(&c);
    let mut evals = 1;
    let stable = matches!(mc, Some(m) if m >= 0.0);
    let (dir, t_max) = if stable {
        (normal.to_vec(), exit_distance(&c, normal))
    } else {
        let back: Vec<f64> = origin_unit.iter().zip(&c).map(|(o, ci)| o - ci).collect();
        let len = back.iter().map(|v| v * v).sum::<f64>().sqrt();
        (unit_direction(&back)?, len)
    };
    let (mut p, e) = search_from(space, &c, mc, &dir, t_max, opts, generation);
    evals += e;
    if stable {
        let in_cone = cone_coefficients(origin_unit, verts, &p.unit).is_some_and(|mu| mu.iter().all(|&m| m >= -1e-12));
        if !in_cone {
            let radial: Vec<f64> = c.iter().zip(origin_unit).map(|(ci, o)| ci - o).collect();
            let radial = unit_direction(&radial)?;
            let t_max = exit_distance(&c, &radial);
            let (q, e) = search_from(space, &c, mc, &radial, t_max, opts, generation);
            evals += e;
            p = q;
        }
    }
    Some(Candidate { point: p, evals })
}

/// Fits the region boundary around `origin` (physical coordinates).
pub fn fit_sssr(space: &ParamSpace, origin: &[f64], epsilon: f64, epsilon_r: f64) -> Result<Region> {
    let opts = FitOptions { ray: RayOptions { epsilon, ..RayOptions::default() }, epsilon_r, ..FitOptions::default() };
    fit_sssr_with(space, origin, &opts)
}

pub fn fit_sssr_with(space: &ParamSpace, origin: &[f64], opts: &FitOptions) -> Result<Region> {
    let l = space.dim();
    if l == 0 || l > MAX_DIM {
        return Err(Error::DimensionGuard(l));
    }
    if origin.len() != l {
        return Err(Error::Dimension { expected: l, got: origin.len() });
    }
    let eps = opts.ray.epsilon;
    let m0 = space.margin_at(origin);
    if !matches!(m0, Some(m) if m > eps) {
        return Err(Error::UnstableOrigin { margin: m0 });
    }
    let o = space.to_unit(origin);
    let mut evaluations = 1usize;

    // Axis-aligned searches, backward then forward per axis.
    let axis_hits: Vec<(BoundaryPoint, usize)> = (0..2 * l)
        .into_par_iter()
        .map(|k| {
            let mut dir = vec![0.0; l];
            dir[k / 2] = if k % 2 == 0 { -1.0 } else { 1.0 };
            let t_max = exit_distance(&o, &dir);
            search_from(space, &o, m0, &dir, t_max, &opts.ray, 0)
        })
        .collect();
    let mut points = Vec::with_capacity(2 * l);
    for (p, e) in axis_hits {
        evaluations += e;
        points.push(p);
    }

    // One facet per orthant: pick the backward or forward point on each axis.
    let mut facets: Vec<(Facet, bool)> = (0..1usize << l)
        .map(|mask| {
            let vertices: Vec<usize> = (0..l).map(|i| 2 * i + ((mask >> i) & 1)).collect();
            let vs: Vec<&[f64]> = vertices.iter().map(|&i| points[i].unit.as_slice()).collect();
            let normal = facet_normal(&vs, &o);
            (Facet { vertices, normal }, false)
        })
        .collect();

    let cone_volume = |points: &[BoundaryPoint], f: &Facet| {
        let vs: Vec<&[f64]> = f.vertices.iter().map(|&i| points[i].unit.as_slice()).collect();
        simplex_volume(&o, &vs)
    };
    let mut volume: f64 = facets.iter().map(|(f, _)| cone_volume(&points, f)).sum();
    let mut history = vec![volume];
    if !(volume > 0.0) {
        warn!("initial facet set encloses zero volume");
    }

    for pass in 1..=opts.max_passes {
        let open: Vec<usize> = (0..facets.len()).filter(|&i| !facets[i].1).collect();
        if open.is_empty() {
            break;
        }
        let candidates: Vec<Option<Candidate>> = open
            .par_iter()
            .map(|&fi| {
                let f = &facets[fi].0;
                let vs: Vec<&[f64]> = f.vertices.iter().map(|&i| points[i].unit.as_slice()).collect();
                refine_facet(space, &o, &vs, &f.normal, &opts.ray, pass)
            })
            .collect();

        let mut next: Vec<(Facet, bool)> = Vec::with_capacity(facets.len() + open.len() * l);
        let mut is_open = vec![false; facets.len()];
        for &fi in &open {
            is_open[fi] = true;
        }
        for (fi, (f, settled)) in facets.iter().enumerate() {
            if !is_open[fi] {
                next.push((f.clone(), *settled));
            }
        }
        let mut retained = 0usize;
        for (&fi, cand) in open.iter().zip(candidates) {
            let f = &facets[fi].0;
            let Some(cand) = cand else {
                next.push((f.clone(), true));
                continue;
            };
            evaluations += cand.evals;
            let vs: Vec<&[f64]> = f.vertices.iter().map(|&i| points[i].unit.as_slice()).collect();
            let local = simplex_volume(&cand.point.unit, &vs);
            if volume > 0.0 && local / volume > opts.epsilon_r {
                let new_index = points.len();
                points.push(cand.point);
                for k in 0..l {
                    let mut vertices = f.vertices.clone();
                    vertices[k] = new_index;
                    let vs: Vec<&[f64]> = vertices.iter().map(|&i| points[i].unit.as_slice()).collect();
                    let normal = facet_normal(&vs, &o);
                    next.push((Facet { vertices, normal }, false));
                }
                retained += 1;
            } else {
                next.push((f.clone(), true));
            }
        }
        facets = next;
        volume = facets.iter().map(|(f, _)| cone_volume(&points, f)).sum();
        history.push(volume);
        debug!("pass {pass}: {retained} new points, {} facets, volume {volume:.6}", facets.len());
        if retained == 0 {
            break;
        }
        if facets.len() > opts.max_facets {
            warn!("facet limit {} reached; stopping refinement", opts.max_facets);
            break;
        }
        if pass == opts.max_passes {
            warn!("refinement pass limit {} reached", opts.max_passes);
        }
    }

    Ok(Region {
        axes: space.axes().to_vec(),
        origin: origin.to_vec(),
        origin_unit: o,
        points,
        facets: facets.into_iter().map(|(f, _)| f).collect(),
        volume_unit: volume,
        history,
        epsilon: eps,
        epsilon_r: opts.epsilon_r,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn diamond() -> Region {
        let axes = vec![Axis::new("x", -2.0, 2.0), Axis::new("y", -2.0, 2.0)];
        let verts = vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![0.0, -1.0], vec![0.0, 1.0]];
        let facets = vec![vec![0, 2], vec![1, 2], vec![0, 3], vec![1, 3]];
        Region::from_parts(axes, vec![0.0, 0.0], verts, facets).unwrap()
    }

    #[test]
    fn square_corners_volume() {
        assert!((polytope_volume(&diamond()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hexagon_volume() {
        let axes = vec![Axis::new("x", -1.0, 1.0), Axis::new("y", -1.0, 1.0)];
        let verts: Vec<Vec<f64>> =
            (0..6).map(|k| (k as f64 * PI / 3.0).sin_cos()).map(|(s, c)| vec![c, s]).collect();
        let facets = (0..6).map(|k| vec![k, (k + 1) % 6]).collect();
        let r = Region::from_parts(axes, vec![0.0, 0.0], verts, facets).unwrap();
        assert!((polytope_volume(&r) - 1.5 * 3.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn containment_of_diamond() {
        let r = diamond();
        assert!(r.contains(&[0.0, 0.0]));
        assert!(r.contains(&[0.4, 0.4]));
        assert!(r.contains(&[0.5, 0.5]));
        assert!(!r.contains(&[0.6, 0.5]));
        assert!(!r.contains(&[-1.5, 0.0]));
    }

    #[test]
    fn disk_area_recovered() {
        let axes = vec![Axis::new("x", -2.0, 2.0), Axis::new("y", -2.0, 2.0)];
        let s = ParamSpace::synthetic_ellipse(&[0.0, 0.0], &[1.0, 1.0], axes).unwrap();
        let r = fit_sssr(&s, &[0.0, 0.0], 0.01, 1e-3).unwrap();
        let area = polytope_volume(&r);
        assert!((area / PI - 1.0).abs() < 0.02, "area {area}");
        for p in &r.points {
            let m = s.margin_at(&p.coords).unwrap();
            assert!((0.0..=0.01).contains(&m), "margin {m}");
        }
        let n = r.history.len();
        assert!((r.history[n - 1] - r.history[n - 2]).abs() <= 1e-3 * r.volume_unit);
    }

    #[test]
    fn ball_volume_in_three_dimensions() {
        let axes = vec![Axis::new("x", -2.0, 2.0), Axis::new("y", -2.0, 2.0), Axis::new("z", -2.0, 2.0)];
        let s = ParamSpace::synthetic_ellipse(&[0.0; 3], &[1.0; 3], axes).unwrap();
        let r = fit_sssr(&s, &[0.0; 3], 0.01, 1e-3).unwrap();
        let v = polytope_volume(&r);
        // Centroid splits keep the initial octahedron edges, so the fit
        // approaches the ball from below more slowly than in the plane.
        let ball = 4.0 / 3.0 * PI;
        assert!(v > 0.8 * ball && v < ball, "volume {v}");
        assert!(r.history.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(r.history[0] < 0.5 * ball);
    }

    #[test]
    fn one_dimensional_interval() {
        let s = ParamSpace::synthetic_ellipse(&[0.5], &[2.0], vec![Axis::new("x", -5.0, 5.0)]).unwrap();
        let r = fit_sssr(&s, &[0.0], 0.01, 1e-3).unwrap();
        assert_eq!(r.facets.len(), 2);
        assert!((polytope_volume(&r) - 4.0).abs() < 0.05);
    }

    #[test]
    fn dimension_guard() {
        let axes: Vec<Axis> = (0..7).map(|i| Axis::new(format!("a{i}"), -1.0, 1.0)).collect();
        let s = ParamSpace::synthetic_ellipse(&[0.0; 7], &[1.0; 7], axes).unwrap();
        assert!(matches!(fit_sssr(&s, &[0.0; 7], 0.01, 1e-3), Err(Error::DimensionGuard(7))));
    }
}
