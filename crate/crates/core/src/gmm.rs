//! Gaussian mixture over joint (parameters, margin) samples with the
//! conditional-mean margin surface and its gradient.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const REG_FLOOR: f64 = 1e-8;
pub const DEFAULT_K_MAX: usize = 10;
pub const RESTARTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the per-sample log-likelihood gain drops below this.
    pub tol: f64,
    pub reg: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-8, reg: REG_FLOOR }
    }
}

/// One component with its cached partition.
#[derive(Clone, Debug)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    mu_x: DVector<f64>,
    mu_y: f64,
    /// Σ_XX⁻¹
    sxx_inv: DMatrix<f64>,
    /// (Σ_YX Σ_XX⁻¹)ᵀ
    beta: DVector<f64>,
    /// log ω − ½ log det(2π Σ_XX)
    log_norm: f64,
}

impl PartialEq for Component {
    fn eq(&self, o: &Self) -> bool {
        self.weight == o.weight && self.mean == o.mean && self.cov == o.cov
    }
}

impl Component {
    fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        let d = n - 1;
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension { expected: n, got: cov.nrows() });
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::DegenerateData(format!("component weight {weight}")));
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::DegenerateData("covariance is not positive definite".into()));
        }
        let sxx = cov.view((0, 0), (d, d)).into_owned();
        let chol = Cholesky::new(sxx).ok_or_else(|| Error::DegenerateData("Σ_XX is not positive definite".into()))?;
        let sxx_inv = chol.inverse();
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let syx = cov.view((d, 0), (1, d)).transpose();
        let beta: DVector<f64> = (&sxx_inv * syx).column(0).into_owned();
        let log_norm = weight.ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet);
        Ok(Self {
            weight,
            mu_x: mean.rows(0, d).into_owned(),
            mu_y: mean[d],
            mean,
            cov,
            sxx_inv,
            beta,
            log_norm,
        })
    }

    fn log_weighted_density(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.mu_x;
        self.log_norm - 0.5 * r.dot(&(&self.sxx_inv * &r))
    }

    /// Conditional mean m_k(X).
    fn conditional(&self, x: &DVector<f64>) -> f64 {
        self.mu_y + self.beta.dot(&(x - &self.mu_x))
    }
}

/// Mixture over (d parameters, margin). Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    components: Vec<Component>,
    dim: usize,
}

impl GmmModel {
    /// Builds a model from weights, joint means and joint covariances, all
    /// in physical units with the margin last.
    pub fn new(weights: &[f64], means: &[Vec<f64>], covs: &[Vec<f64>]) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Domain("a mixture needs at least one component".into()));
        }
        if means.len() != k || covs.len() != k {
            return Err(Error::LengthMismatch(k, means.len().min(covs.len())));
        }
        let n = means[0].len();
        if n < 2 {
            return Err(Error::Domain("joint dimension must be at least 2".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateData(format!("weights sum to {total}")));
        }
        let mut components = Vec::with_capacity(k);
        for i in 0..k {
            if means[i].len() != n || covs[i].len() != n * n {
                return Err(Error::Dimension { expected: n, got: means[i].len() });
            }
            let mean = DVector::from_column_slice(&means[i]);
            let cov = DMatrix::from_row_slice(n, n, &covs[i]);
            components.push(Component::new(weights[i], mean, cov)?);
        }
        Ok(Self { components, dim: n - 1 })
    }

    /// Number of parameters (the margin is not counted).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    fn log_terms(&self, x: &DVector<f64>) -> Vec<f64> {
        self.components.iter().map(|c| c.log_weighted_density(x)).collect()
    }

    fn check(&self, x: &[f64]) {
        assert_eq!(x.len(), self.dim, "expected {} parameters", self.dim);
    }

    /// Posterior component probabilities given the parameters only.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        self.check(x);
        let xv = DVector::from_column_slice(x);
        normalize_log(&self.log_terms(&xv))
    }

    pub fn predict_margin(&self, x: &[f64]) -> f64 {
        self.check(x);
        let xv = DVector::from_column_slice(x);
        let g = normalize_log(&self.log_terms(&xv));
        self.components.iter().zip(&g).map(|(c, gk)| gk * c.conditional(&xv)).sum()
    }

    pub fn margin_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.check(x);
        let xv = DVector::from_column_slice(x);
        let g = normalize_log(&self.log_terms(&xv));
        // a_k = Σ_XX,k⁻¹ (X − μ_X,k)
        let a: Vec<DVector<f64>> = self.components.iter().map(|c| &c.sxx_inv * (&xv - &c.mu_x)).collect();
        let mut abar = DVector::zeros(self.dim);
        for (ak, gk) in a.iter().zip(&g) {
            abar.axpy(*gk, ak, 1.0);
        }
        let mut grad = DVector::zeros(self.dim);
        for ((c, ak), gk) in self.components.iter().zip(&a).zip(&g) {
            let m = c.conditional(&xv);
            grad += (&abar - ak) * (gk * m);
            grad.axpy(*gk, &c.beta, 1.0);
        }
        grad.iter().copied().collect()
    }

    /// Log-likelihood of joint rows under the full model.
    pub fn log_likelihood(&self, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch(x.len(), y.len()));
        }
        let chols: Vec<(Cholesky<f64, Dyn>, f64)> = self
            .components
            .iter()
            .map(|c| {
                let ch = Cholesky::new(c.cov.clone()).expect("validated at construction");
                let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                (ch, c.weight.ln() - 0.5 * logdet)
            })
            .collect();
        let n = self.dim + 1;
        let c0 = 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let mut ll = 0.0;
        for (xi, yi) in x.iter().zip(y) {
            let z = DVector::from_column_slice(xi).push(*yi);
            let terms: Vec<f64> = self
                .components
                .iter()
                .zip(&chols)
                .map(|(c, (ch, lw))| {
                    let s = ch.l().solve_lower_triangular(&(&z - &c.mean)).expect("triangular solve");
                    lw - c0 - 0.5 * s.norm_squared()
                })
                .collect();
            ll += log_sum_exp(&terms);
        }
        Ok(ll)
    }

    /// Free parameter count, used by the information criterion.
    pub fn parameter_count(&self) -> usize {
        let n = self.dim + 1;
        self.k() - 1 + self.k() * (n + n * (n + 1) / 2)
    }

    pub fn bic(&self, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
        let ll = self.log_likelihood(x, y)?;
        Ok(-2.0 * ll + self.parameter_count() as f64 * (x.len() as f64).ln())
    }

    /// Self-describing text: header, K, then per component the weight,
    /// mean and row-major covariance.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let n = self.dim + 1;
        writeln!(s, "gmm").unwrap();
        writeln!(s, "dimension {}", self.dim).unwrap();
        writeln!(s, "components {}", self.k()).unwrap();
        for c in &self.components {
            writeln!(s, "weight {:.16e}", c.weight).unwrap();
            writeln!(s, "mean {}", join(c.mean.iter())).unwrap();
            let mut row_major = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    row_major.push(c.cov[(i, j)]);
                }
            }
            writeln!(s, "covariance {}", join(row_major.iter())).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut next = |key: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{key}` line")))?;
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| Error::Parse(format!("expected `{key}`, found `{line}`")))?;
            rest.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("`{key}`: {e}"))))
                .collect()
        };
        next("gmm")?;
        let d = count(&next("dimension")?)?;
        let k = count(&next("components")?)?;
        let n = d + 1;
        let (mut w, mut means, mut covs) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..k {
            let wv = next("weight")?;
            let mv = next("mean")?;
            let cv = next("covariance")?;
            if wv.len() != 1 || mv.len() != n || cv.len() != n * n {
                return Err(Error::Parse("component block has the wrong number of values".into()));
            }
            w.push(wv[0]);
            means.push(mv);
            covs.push(cv);
        }
        Self::new(&w, &means, &covs)
    }
}

fn count(v: &[f64]) -> Result<usize> {
    match v {
        [c] if *c >= 0.0 && c.fract() == 0.0 => Ok(*c as usize),
        _ => Err(Error::Parse("expected a single non-negative integer".into())),
    }
}

fn join<'a>(v: impl Iterator<Item = &'a f64>) -> String {
    v.map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ")
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn normalize_log(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    if !lse.is_finite() {
        return vec![1.0 / v.len() as f64; v.len()];
    }
    let mut g: Vec<f64> = v.iter().map(|t| (t - lse).exp()).collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|x| *x /= s);
    g
}

/// Fitted model plus the per-iteration log-likelihood trace (standardized
/// coordinates).
#[derive(Clone, Debug)]
pub struct EmFit {
    pub model: GmmModel,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn joint_rows(x: &[Vec<f64>], y: &[f64]) -> Result<Vec<Vec<f64>>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let d = x.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::DegenerateData("no parameters in the dataset".into()));
    }
    let mut rows = Vec::with_capacity(x.len());
    for (xi, yi) in x.iter().zip(y) {
        if xi.len() != d {
            return Err(Error::Dimension { expected: d, got: xi.len() });
        }
        if !yi.is_finite() || xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite value in dataset".into()));
        }
        let mut r = xi.clone();
        r.push(*yi);
        rows.push(r);
    }
    Ok(rows)
}

/// Row-major standardized samples.
struct Rows {
    n: usize,
    data: Vec<f64>,
}

impl Rows {
    fn len(&self) -> usize {
        self.data.len() / self.n
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

fn standardize(rows: &[Vec<f64>]) -> Result<(Standardizer, Rows)> {
    let n = rows[0].len();
    let m = rows.len() as f64;
    let mut mean = vec![0.0; n];
    for r in rows {
        for j in 0..n {
            mean[j] += r[j] / m;
        }
    }
    let mut scale = vec![0.0; n];
    for r in rows {
        for j in 0..n {
            scale[j] += (r[j] - mean[j]).powi(2) / m;
        }
    }
    // variance at rounding level of the mean counts as zero
    let flat: Vec<bool> = scale.iter().zip(&mean).map(|(v, m)| v.sqrt() <= 1e-12 * m.abs().max(1.0)).collect();
    if flat.iter().all(|f| *f) {
        return Err(Error::DegenerateData("zero variance in every dimension".into()));
    }
    for (s, f) in scale.iter_mut().zip(&flat) {
        *s = if *f { 1.0 } else { s.sqrt() };
    }
    let data = rows.iter().flat_map(|r| (0..n).map(|j| (r[j] - mean[j]) / scale[j]).collect::<Vec<_>>()).collect();
    Ok((Standardizer { mean, scale }, Rows { n, data }))
}

struct Work {
    w: Vec<f64>,
    mu: Vec<Vec<f64>>,
    cov: Vec<DMatrix<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(z: &Rows, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let len = z.len();
    let mut centers = vec![z.row(rng.random_range(0..len)).to_vec()];
    let mut d2: Vec<f64> = (0..len).map(|i| sq_dist(z.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = len - 1;
            for (i, v) in d2.iter().enumerate() {
                t -= v;
                if t <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..len)
        };
        let c = z.row(idx).to_vec();
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(z.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

/// E-step: fills `resp` (row-major samples × k) and returns the
/// log-likelihood.
fn e_step(z: &Rows, wk: &Work, resp: &mut [f64]) -> Option<f64> {
    let k = wk.w.len();
    let n = z.n;
    let c0 = 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    // per component: row-major L⁻¹ and the log normalizer
    let mut linv = Vec::with_capacity(k);
    let mut lnorm = Vec::with_capacity(k);
    for (c, w) in wk.cov.iter().zip(&wk.w) {
        let ch = Cholesky::new(c.clone())?;
        let l = ch.l();
        let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
        linv.push(DMatrix::from(inv).transpose().as_slice().to_vec());
        lnorm.push(w.ln() - 0.5 * logdet - c0);
    }
    let mut ll = 0.0;
    let mut terms = vec![0.0; k];
    let mut r = vec![0.0; n];
    for i in 0..z.len() {
        let p = z.row(i);
        for j in 0..k {
            for (d, rd) in r.iter_mut().enumerate() {
                *rd = p[d] - wk.mu[j][d];
            }
            let li = &linv[j];
            let mut q = 0.0;
            for a in 0..n {
                let row = &li[a * n..a * n + a + 1];
                let s: f64 = row.iter().zip(&r).map(|(x, y)| x * y).sum();
                q += s * s;
            }
            terms[j] = lnorm[j] - 0.5 * q;
        }
        let lse = log_sum_exp(&terms);
        ll += lse;
        for j in 0..k {
            resp[i * k + j] = (terms[j] - lse).exp();
        }
    }
    Some(ll)
}

fn m_step(z: &Rows, resp: &[f64], wk: &mut Work, reg: f64, rng: &mut ChaCha8Rng) {
    let k = wk.w.len();
    let n = z.n;
    let len = z.len();
    let m = len as f64;
    let mut nk = vec![0.0; k];
    let mut sums = vec![vec![0.0; n]; k];
    for i in 0..len {
        let p = z.row(i);
        for j in 0..k {
            let g = resp[i * k + j];
            nk[j] += g;
            for d in 0..n {
                sums[j][d] += g * p[d];
            }
        }
    }
    let mu: Vec<Vec<f64>> = (0..k).map(|j| sums[j].iter().map(|s| s / nk[j].max(f64::MIN_POSITIVE)).collect()).collect();
    let mut scatter = vec![vec![0.0; n * n]; k];
    let mut r = vec![0.0; n];
    for i in 0..len {
        let p = z.row(i);
        for j in 0..k {
            let g = resp[i * k + j];
            for d in 0..n {
                r[d] = p[d] - mu[j][d];
            }
            let s = &mut scatter[j];
            for a in 0..n {
                let ga = g * r[a];
                for b in 0..=a {
                    s[a * n + b] += ga * r[b];
                }
            }
        }
    }
    for j in 0..k {
        if nk[j] < 1e-10 * m {
            // Collapsed component: restart it on a random sample.
            wk.mu[j] = z.row(rng.random_range(0..len)).to_vec();
            wk.cov[j] = DMatrix::identity(n, n);
            wk.w[j] = 1.0 / m;
            continue;
        }
        let s = &scatter[j];
        let mut cov = DMatrix::from_fn(n, n, |a, b| s[a.max(b) * n + a.min(b)] / nk[j]);
        for d in 0..n {
            cov[(d, d)] += reg;
        }
        wk.w[j] = nk[j] / m;
        wk.mu[j] = mu[j].clone();
        wk.cov[j] = cov;
    }
    let s: f64 = wk.w.iter().sum();
    wk.w.iter_mut().for_each(|w| *w /= s);
}

fn destandardize(st: &Standardizer, wk: &Work) -> Result<GmmModel> {
    let n = st.mean.len();
    let means: Vec<Vec<f64>> =
        wk.mu.iter().map(|mu| (0..n).map(|j| st.mean[j] + st.scale[j] * mu[j]).collect()).collect();
    let covs: Vec<Vec<f64>> = wk
        .cov
        .iter()
        .map(|c| {
            let mut out = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..=a {
                    let v = c[(a, b)] * st.scale[a] * st.scale[b];
                    out[a * n + b] = v;
                    out[b * n + a] = v;
                }
            }
            out
        })
        .collect();
    let s: f64 = wk.w.iter().sum();
    let w: Vec<f64> = wk.w.iter().map(|v| v / s).collect();
    GmmModel::new(&w, &means, &covs)
}

pub fn fit_em(x: &[Vec<f64>], y: &[f64], k: usize, seed: u64) -> Result<GmmModel> {
    fit_em_with(x, y, k, seed, &EmOptions::default()).map(|f| f.model)
}

pub fn fit_em_with(x: &[Vec<f64>], y: &[f64], k: usize, seed: u64, opts: &EmOptions) -> Result<EmFit> {
    if k < 1 {
        return Err(Error::Domain("component count must be at least 1".into()));
    }
    if x.len() < 10 * k {
        return Err(Error::DegenerateData(format!("{} samples is fewer than 10 per component for K = {k}", x.len())));
    }
    let rows = joint_rows(x, y)?;
    let (st, z) = standardize(&rows)?;
    let n = z.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wk = Work {
        w: vec![1.0 / k as f64; k],
        mu: kmeans_pp(&z, k, &mut rng),
        cov: vec![DMatrix::identity(n, n) * (1.0 + opts.reg); k],
    };
    let mut resp = vec![0.0; z.len() * k];
    let m = z.len() as f64;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut ll = e_step(&z, &wk, &mut resp).ok_or_else(|| Error::DegenerateData("initial covariance is singular".into()))?;
    history.push(ll);
    while iterations < opts.max_iter {
        iterations += 1;
        m_step(&z, &resp, &mut wk, opts.reg, &mut rng);
        let next = e_step(&z, &wk, &mut resp)
            .ok_or_else(|| Error::DegenerateData("covariance lost positive definiteness".into()))?;
        history.push(next);
        let gain = (next - ll) / m;
        ll = next;
        if gain.abs() < opts.tol {
            converged = true;
            break;
        }
    }
    log::debug!("EM K={k}: {iterations} iterations, log-likelihood {ll:.6}");
    Ok(EmFit { model: destandardize(&st, &wk)?, log_likelihood: history, iterations, converged })
}

fn restart_seed(seed: u64, k: usize, r: usize) -> u64 {
    // splitmix64 step over a combined key
    let mut z = seed ^ ((k as u64) << 32 | r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// BIC-selected model among K = 1..=k_max with several restarts per K.
#[derive(Clone, Debug)]
pub struct Selection {
    pub k: usize,
    pub model: GmmModel,
    /// (K, best BIC) for every K that could be fitted.
    pub bic: Vec<(usize, f64)>,
}

pub fn select_model(x: &[Vec<f64>], y: &[f64], k_max: usize, seed: u64) -> Result<Selection> {
    if k_max < 1 {
        return Err(Error::Domain("k_max must be at least 1".into()));
    }
    let k_top = k_max.min(x.len() / 10).max(1);
    let jobs: Vec<(usize, usize)> = (1..=k_top).flat_map(|k| (0..RESTARTS).map(move |r| (k, r))).collect();
    let fits: Vec<(usize, Result<(GmmModel, f64)>)> = jobs
        .par_iter()
        .map(|&(k, r)| {
            let res = fit_em(x, y, k, restart_seed(seed, k, r)).and_then(|m| {
                let b = m.bic(x, y)?;
                Ok((m, b))
            });
            (k, res)
        })
        .collect();
    let mut best_per_k: Vec<Option<(GmmModel, f64)>> = vec![None; k_top + 1];
    let mut first_err = None;
    for (k, res) in fits {
        match res {
            Ok((m, b)) if b.is_finite() => {
                if best_per_k[k].as_ref().is_none_or(|(_, bb)| b < *bb) {
                    best_per_k[k] = Some((m, b));
                }
            }
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let bic: Vec<(usize, f64)> =
        best_per_k.iter().enumerate().filter_map(|(k, v)| v.as_ref().map(|(_, b)| (k, *b))).collect();
    let Some(&(k, _)) = bic.iter().min_by(|a, b| a.1.total_cmp(&b.1)) else {
        return Err(first_err.unwrap_or_else(|| Error::DegenerateData("no component count could be fitted".into())));
    };
    let model = best_per_k[k].take().map(|(m, _)| m).expect("present");
    Ok(Selection { k, model, bic })
}

pub fn select_k(x: &[Vec<f64>], y: &[f64], k_max: usize, seed: u64) -> Result<usize> {
    select_model(x, y, k_max, seed).map(|s| s.k)
}

/// Coefficient of determination of `predict_margin` over a dataset.
pub fn r_squared(model: &GmmModel, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    r_squared_of(|p| model.predict_margin(p), x, y)
}

pub fn r_squared_of(f: impl Fn(&[f64]) -> f64, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if y.is_empty() {
        return Err(Error::DegenerateData("empty dataset".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::DegenerateData("margin has zero variance".into()));
    }
    let ss_res: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - f(xi)).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}
