use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearization::DEFAULT_EPSILON;
use crate::sssr::space::ParamSpace;

/// How a stored boundary point was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    /// Rightmost real part inside the marginal band.
    Crossing,
    /// Search box edge reached while still stable.
    BoxEdge,
    /// Equilibrium lost before stability was.
    FeasibilityEdge,
    /// Margin jumps across the band faster than the bisection resolves.
    Unresolved,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Crossing => "crossing",
            PointKind::BoxEdge => "box_edge",
            PointKind::FeasibilityEdge => "feasibility_edge",
            PointKind::Unresolved => "unresolved",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "crossing" => PointKind::Crossing,
            "box_edge" => PointKind::BoxEdge,
            "feasibility_edge" => PointKind::FeasibilityEdge,
            "unresolved" => PointKind::Unresolved,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPoint {
    /// Physical coordinates.
    pub coords: Vec<f64>,
    /// Normalized coordinates.
    pub unit: Vec<f64>,
    /// Real part of the rightmost eigenvalue (minus the margin); NaN when
    /// the point itself is infeasible.
    pub rightmost_re: f64,
    /// Refinement pass that produced the point (0 for the axis searches).
    pub generation: usize,
    pub kind: PointKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayOptions {
    pub epsilon: f64,
    pub growth: f64,
    /// First step of the geometric expansion, normalized units.
    pub initial_step: f64,
    /// Bracket width at which a feasibility edge is accepted.
    pub axis_tol: f64,
    pub max_bisections: usize,
}

impl Default for RayOptions {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, growth: 1.6, initial_step: 0.02, axis_tol: 1e-4, max_bisections: 60 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RayOutcome {
    Found(BoundaryPoint),
    /// Box edge reached while stable; the edge point is returned flagged.
    NotFound(BoundaryPoint),
}

impl RayOutcome {
    pub fn point(&self) -> &BoundaryPoint {
        match self {
            RayOutcome::Found(p) | RayOutcome::NotFound(p) => p,
        }
    }

    pub fn into_point(self) -> BoundaryPoint {
        match self {
            RayOutcome::Found(p) | RayOutcome::NotFound(p) => p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Inside,
    Band,
    Outside,
}

fn side(m: Option<f64>, eps: f64) -> Side {
    match m {
        Some(v) if v > eps => Side::Inside,
        Some(v) if v >= 0.0 => Side::Band,
        _ => Side::Outside,
    }
}

/// Largest `t >= 0` keeping `u + t d` inside the unit box.
pub(crate) fn exit_distance(u: &[f64], d: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for (&ui, &di) in u.iter().zip(d) {
        if di > 0.0 {
            t = t.min((1.0 - ui) / di);
        } else if di < 0.0 {
            t = t.min(-ui / di);
        }
    }
    t.max(0.0)
}

pub(crate) fn unit_direction(d: &[f64]) -> Option<Vec<f64>> {
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| d.iter().map(|v| v / n).collect())
}

/// Walks from `start` along the unit vector `dir` for at most `t_max` and
/// returns a band crossing. Works from either side: a stable start walks
/// out, an unstable start walks in. The bracket is then bisected down to
/// `axis_tol`, keeping the stable end, so the returned point sits on the
/// stable side of the crossing. Also returns the number of margin
/// evaluations.
pub(crate) fn search_from(
    space: &ParamSpace,
    start: &[f64],
    start_margin: Option<f64>,
    dir: &[f64],
    t_max: f64,
    opts: &RayOptions,
    generation: usize,
) -> (BoundaryPoint, usize) {
    let eps = opts.epsilon;
    let at = |t: f64| -> Vec<f64> {
        start.iter().zip(dir).map(|(s, d)| (s + t * d).clamp(0.0, 1.0)).collect()
    };
    let point = |u: Vec<f64>, m: Option<f64>, kind: PointKind| BoundaryPoint {
        coords: space.from_unit(&u),
        unit: u,
        rightmost_re: m.map_or(f64::NAN, |v| -v),
        generation,
        kind,
    };
    let mut evals = 0usize;
    let mut eval = |t: f64| {
        evals += 1;
        let u = at(t);
        let m = space.margin_at_unit(&u);
        (u, m)
    };
    let stable = |m: Option<f64>| side(m, eps) != Side::Outside;
    let walking_out = stable(start_margin);

    // Geometric expansion until the stable/unstable side changes.
    let mut t_prev = 0.0;
    let mut m_prev = start_margin;
    let mut t = opts.initial_step.min(t_max);
    let (mut lo, mut hi, mut m_lo, mut m_hi);
    loop {
        let (u, m) = eval(t);
        if stable(m) != walking_out {
            if walking_out {
                (lo, m_lo, hi, m_hi) = (t_prev, m_prev, t, m);
            } else {
                (lo, m_lo, hi, m_hi) = (t, m, t_prev, m_prev);
            }
            break;
        }
        if t >= t_max {
            let kind = match (walking_out, side(m, eps)) {
                (true, Side::Band) => PointKind::Crossing,
                (true, _) => PointKind::BoxEdge,
                _ => PointKind::Unresolved,
            };
            return (point(u, m, kind), evals);
        }
        t_prev = t;
        m_prev = m;
        t = (t * opts.growth).min(t_max);
    }

    // lo is stable, hi is unstable or infeasible.
    for _ in 0..opts.max_bisections {
        if (hi - lo).abs() < opts.axis_tol && side(m_lo, eps) == Side::Band {
            break;
        }
        if (hi - lo).abs() < opts.axis_tol && m_hi.is_none() {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (_, m) = eval(mid);
        if stable(m) {
            lo = mid;
            m_lo = m;
        } else {
            hi = mid;
            m_hi = m;
        }
    }
    let kind = match side(m_lo, eps) {
        Side::Band => PointKind::Crossing,
        _ if m_hi.is_none() => PointKind::FeasibilityEdge,
        _ => PointKind::Unresolved,
    };
    (point(at(lo), m_lo, kind), evals)
}

/// Geometric expansion along `direction` (normalized axis units) from a
/// strictly stable `origin` (physical units), then bisection into the
/// marginal band.
pub fn ray_boundary_search(
    space: &ParamSpace,
    origin: &[f64],
    direction: &[f64],
    epsilon: f64,
) -> Result<RayOutcome> {
    let opts = RayOptions { epsilon, ..RayOptions::default() };
    ray_search_with(space, origin, direction, &opts)
}

pub fn ray_search_with(space: &ParamSpace, origin: &[f64], direction: &[f64], opts: &RayOptions) -> Result<RayOutcome> {
    if origin.len() != space.dim() || direction.len() != space.dim() {
        return Err(Error::Dimension { expected: space.dim(), got: origin.len().min(direction.len()) });
    }
    let dir = unit_direction(direction).ok_or_else(|| Error::Domain("search direction is zero".into()))?;
    let m0 = space.margin_at(origin);
    if !matches!(m0, Some(m) if m > opts.epsilon) {
        return Err(Error::UnstableOrigin { margin: m0 });
    }
    let u0 = space.to_unit(origin);
    let t_max = exit_distance(&u0, &dir);
    let (p, _) = search_from(space, &u0, m0, &dir, t_max, opts, 0);
    Ok(if p.kind == PointKind::BoxEdge { RayOutcome::NotFound(p) } else { RayOutcome::Found(p) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sssr::space::Axis;

    fn disk() -> ParamSpace {
        ParamSpace::synthetic_ellipse(&[0.0, 0.0], &[1.0, 1.0], vec![Axis::new("x", -2.0, 2.0), Axis::new("y", -2.0, 2.0)])
            .unwrap()
    }

    #[test]
    fn disk_radius_found_along_any_direction() {
        let s = disk();
        for k in 0..12 {
            let a = k as f64 * 0.5236;
            let out = ray_boundary_search(&s, &[0.0, 0.0], &[a.cos(), a.sin()], 0.01).unwrap();
            let RayOutcome::Found(p) = out else { panic!("not found") };
            let r = (p.coords[0].powi(2) + p.coords[1].powi(2)).sqrt();
            assert!((0.99..=1.0).contains(&r), "radius {r}");
            assert!((-0.01..=0.0).contains(&p.rightmost_re));
            assert_eq!(p.kind, PointKind::Crossing);
        }
    }

    #[test]
    fn reversed_direction_same_radius() {
        let s = disk();
        let a = ray_boundary_search(&s, &[0.0, 0.0], &[0.3, 0.7], 0.01).unwrap().into_point();
        let b = ray_boundary_search(&s, &[0.0, 0.0], &[-0.3, -0.7], 0.01).unwrap().into_point();
        let ra = a.coords.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rb = b.coords.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((ra - rb).abs() < 0.01);
    }

    #[test]
    fn box_edge_reported() {
        let s = ParamSpace::synthetic_ellipse(&[0.0], &[5.0], vec![Axis::new("x", -1.0, 1.0)]).unwrap();
        let out = ray_boundary_search(&s, &[0.0], &[1.0], 0.01).unwrap();
        match out {
            RayOutcome::NotFound(p) => {
                assert_eq!(p.kind, PointKind::BoxEdge);
                assert_eq!(p.coords, vec![1.0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unstable_origin_rejected() {
        let s = disk();
        assert!(matches!(
            ray_boundary_search(&s, &[1.5, 0.0], &[1.0, 0.0], 0.01),
            Err(Error::UnstableOrigin { .. })
        ));
        assert!(ray_boundary_search(&s, &[0.0, 0.0], &[0.0, 0.0], 0.01).is_err());
    }

    #[test]
    fn walking_in_from_outside() {
        let s = disk();
        let start = s.to_unit(&[1.8, 0.0]);
        let m = s.margin_at(&[1.8, 0.0]);
        let (p, _) = search_from(&s, &start, m, &[-1.0, 0.0], 0.45, &RayOptions::default(), 3);
        assert_eq!(p.kind, PointKind::Crossing);
        assert!((p.coords[0] - 1.0).abs() < 0.011);
        assert_eq!(p.generation, 3);
    }
}
