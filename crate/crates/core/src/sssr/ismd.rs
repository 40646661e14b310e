use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sssr::fit::Region;
use crate::sssr::space::ParamSpace;

/// A stable interior sample and its margin.
#[derive(Clone, Debug, PartialEq)]
pub struct IsmdSample {
    pub coords: Vec<f64>,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ismd {
    pub samples: Vec<IsmdSample>,
    /// Candidates drawn from the bounding box.
    pub draws: usize,
    /// Candidates inside the facet surface.
    pub inside: usize,
    /// Candidates inside the surface whose margin was not positive.
    pub rejected: usize,
}

impl Ismd {
    pub fn acceptance(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.samples.len() as f64 / self.draws as f64
        }
    }
}

const BATCH: usize = 256;
const MIN_ACCEPTANCE: f64 = 1e-3;

/// Uniform rejection sampling over the region's bounding box, keeping
/// points inside the facet surface with positive margin. Deterministic
/// for a given seed regardless of thread count.
pub fn sample_ismd(space: &ParamSpace, region: &Region, n_samples: usize, seed: u64) -> Result<Ismd> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    if space.axes() != region.axes.as_slice() {
        return Err(Error::SpaceMismatch);
    }
    let (lo, hi) = region.bounding_box_unit();
    let l = region.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Ismd { samples: Vec::with_capacity(n_samples), draws: 0, inside: 0, rejected: 0 };
    while out.samples.len() < n_samples {
        let batch: Vec<Vec<f64>> = (0..BATCH)
            .map(|_| (0..l).map(|i| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>()).collect())
            .collect();
        let evaluated: Vec<Option<Option<f64>>> = batch
            .par_iter()
            .map(|u| region.contains_unit(u).then(|| space.margin_at_unit(u)))
            .collect();
        for (u, res) in batch.into_iter().zip(evaluated) {
            if out.samples.len() == n_samples {
                break;
            }
            out.draws += 1;
            let Some(m) = res else { continue };
            out.inside += 1;
            match m {
                Some(m) if m > 0.0 => out.samples.push(IsmdSample { coords: space.from_unit(&u), margin: m }),
                _ => out.rejected += 1,
            }
        }
        if out.draws >= 10 * BATCH && out.acceptance() < MIN_ACCEPTANCE {
            return Err(Error::LowAcceptance { ratio: out.acceptance(), draws: out.draws });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sssr::fit::fit_sssr;
    use crate::sssr::space::Axis;
    use std::f64::consts::PI;

    fn disk() -> (ParamSpace, Region) {
        let axes = vec![Axis::new("x", -2.0, 2.0), Axis::new("y", -2.0, 2.0)];
        let s = ParamSpace::synthetic_ellipse(&[0.0, 0.0], &[1.0, 1.0], axes).unwrap();
        let r = fit_sssr(&s, &[0.0, 0.0], 0.01, 1e-3).unwrap();
        (s, r)
    }

    #[test]
    fn disk_inside_fraction() {
        let (s, r) = disk();
        let ismd = sample_ismd(&s, &r, 10_000, 7).unwrap();
        let frac = ismd.inside as f64 / ismd.draws as f64;
        assert!((frac - PI / 4.0).abs() < 0.02, "fraction {frac}");
        assert!(ismd.samples.iter().all(|p| p.margin > 0.0 && s.margin_at(&p.coords).unwrap() > 0.0));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (s, r) = disk();
        let a = sample_ismd(&s, &r, 500, 11).unwrap();
        let b = sample_ismd(&s, &r, 500, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_ismd(&s, &r, 500, 12).unwrap();
        assert_ne!(a.samples[0], c.samples[0]);
    }

    #[test]
    fn low_acceptance_is_an_error() {
        let (_, r) = disk();
        // same axes, but the margin is negative everywhere
        let s = ParamSpace::synthetic_ellipse(&[0.0, 0.0], &[1e-6, 1e-6], r.axes.clone()).unwrap();
        let s2 = ParamSpace::new(r.axes.clone(), std::sync::Arc::new(move |x: &[f64]| s.margin_at(x).map(|m| m.min(-1.0))))
            .unwrap();
        assert!(matches!(sample_ismd(&s2, &r, 10, 1), Err(Error::LowAcceptance { .. })));
    }
}
