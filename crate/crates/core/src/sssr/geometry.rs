//! Simplex geometry in normalized coordinates.

use nalgebra::{DMatrix, DVector};

fn factorial(l: usize) -> f64 {
    (1..=l).map(|k| k as f64).product()
}

/// Volume of the simplex with `apex` and the `l` vertices of an
/// `(l-1)`-simplex, `|det[v_i - apex]| / l!`.
pub fn simplex_volume(apex: &[f64], verts: &[&[f64]]) -> f64 {
    let l = apex.len();
    debug_assert_eq!(verts.len(), l);
    let m = DMatrix::from_fn(l, l, |i, j| verts[j][i] - apex[i]);
    m.determinant().abs() / factorial(l)
}

/// Outward unit normal of the hyperplane through `verts`, oriented away
/// from `interior`. Zero vector when the vertices are degenerate.
pub fn facet_normal(verts: &[&[f64]], interior: &[f64]) -> Vec<f64> {
    let l = interior.len();
    let mut n = vec![0.0; l];
    if l == 1 {
        n[0] = 1.0;
    } else {
        // Generalized cross product of the l-1 edge vectors.
        let edges: Vec<Vec<f64>> =
            (1..l).map(|k| (0..l).map(|i| verts[k][i] - verts[0][i]).collect()).collect();
        for (c, nc) in n.iter_mut().enumerate() {
            let minor = DMatrix::from_fn(l - 1, l - 1, |r, j| {
                let col = if j < c { j } else { j + 1 };
                edges[r][col]
            });
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            *nc = sign * minor.determinant();
        }
    }
    let norm = n.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return vec![0.0; l];
    }
    let centroid = centroid(verts);
    let outward: f64 = (0..l).map(|i| n[i] * (centroid[i] - interior[i])).sum();
    let s = if outward < 0.0 { -1.0 } else { 1.0 } / norm;
    n.iter().map(|v| v * s).collect()
}

pub fn centroid(verts: &[&[f64]]) -> Vec<f64> {
    let l = verts[0].len();
    let k = verts.len() as f64;
    (0..l).map(|i| verts.iter().map(|v| v[i]).sum::<f64>() / k).collect()
}

/// Coefficients `mu` with `x - o = sum mu_i (v_i - o)`. `None` when the
/// cone is degenerate.
pub fn cone_coefficients(o: &[f64], verts: &[&[f64]], x: &[f64]) -> Option<Vec<f64>> {
    let l = o.len();
    let m = DMatrix::from_fn(l, l, |i, j| verts[j][i] - o[i]);
    let rhs = DVector::from_fn(l, |i, _| x[i] - o[i]);
    let sol = m.lu().solve(&rhs)?;
    sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
}

/// Euclidean distance from `x` to the closed simplex spanned by `verts`
/// (any number of vertices up to dimension + 1).
pub fn point_simplex_distance(x: &[f64], verts: &[&[f64]]) -> f64 {
    let dim = x.len();
    let k = verts.len();
    if k == 1 {
        return dist(x, verts[0]);
    }
    // Project onto the affine hull: minimize |x - v0 - E c|.
    let e = DMatrix::from_fn(dim, k - 1, |i, j| verts[j + 1][i] - verts[0][i]);
    let rhs = DVector::from_fn(dim, |i, _| x[i] - verts[0][i]);
    let gram = e.transpose() * &e;
    if let Some(c) = gram.clone().cholesky().map(|ch| ch.solve(&(e.transpose() * &rhs))) {
        let lambda0 = 1.0 - c.sum();
        if lambda0 >= 0.0 && c.iter().all(|&v| v >= 0.0) {
            let proj = &e * &c;
            let d2: f64 = (0..dim).map(|i| (rhs[i] - proj[i]).powi(2)).sum();
            return d2.sqrt();
        }
    }
    // Closest point lies on the relative boundary.
    (0..k)
        .map(|skip| {
            let face: Vec<&[f64]> = verts.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, v)| *v).collect();
            point_simplex_distance(x, &face)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_area() {
        let v = simplex_volume(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tetra_volume() {
        let v = simplex_volume(&[0.0; 3], &[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 3.0]]);
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn normals_point_away_from_interior() {
        let n = facet_normal(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]);
        let s = 0.5f64.sqrt();
        assert!((n[0] - s).abs() < 1e-15 && (n[1] - s).abs() < 1e-15);
        let n = facet_normal(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]], &[1.0, 1.0, 1.0]);
        let s = 1.0 / 3.0f64.sqrt();
        assert!(n.iter().all(|&v| (v + s).abs() < 1e-15));
        let n = facet_normal(&[&[-2.0]], &[0.0]);
        assert_eq!(n, vec![-1.0]);
    }

    #[test]
    fn degenerate_facet_has_zero_normal() {
        let n = facet_normal(&[&[1.0, 1.0], &[1.0, 1.0]], &[0.0, 0.0]);
        assert_eq!(n, vec![0.0, 0.0]);
    }

    #[test]
    fn segment_distance() {
        let a: &[f64] = &[0.0, 0.0];
        let b: &[f64] = &[2.0, 0.0];
        assert!((point_simplex_distance(&[1.0, 1.0], &[a, b]) - 1.0).abs() < 1e-15);
        assert!((point_simplex_distance(&[3.0, 0.0], &[a, b]) - 1.0).abs() < 1e-15);
        assert!((point_simplex_distance(&[-3.0, 4.0], &[a, b]) - 5.0).abs() < 1e-15);
        assert_eq!(point_simplex_distance(&[0.5, 0.0], &[a, b]), 0.0);
    }

    #[test]
    fn triangle_distance_in_3d() {
        let t: [&[f64]; 3] = [&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]];
        assert!((point_simplex_distance(&[0.2, 0.2, 0.7], &t) - 0.7).abs() < 1e-14);
        // nearest feature is the vertex (1, 0, 0)
        assert!((point_simplex_distance(&[2.0, -1.0, 0.0], &t) - 2.0f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn cone_coefficients_recover_combination() {
        let mu = cone_coefficients(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 2.0]], &[0.5, 0.5]).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-15 && (mu[1] - 0.25).abs() < 1e-15);
    }
}
