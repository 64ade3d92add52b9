//! Exact O(N²) t-SNE into two dimensions.
//!
//! Inputs are calibrated per point by binary search on the Gaussian precision
//! until the row perplexity matches the target, symmetrized into a joint
//! distribution, and embedded by momentum gradient descent on the KL
//! divergence against a Student-t kernel. The optimizer follows the usual
//! reference schedule: early exaggeration, a momentum switch, and per-coordinate
//! adaptive gains.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::SampleId;

const MAX_BISECTION_STEPS: usize = 200;
const KL_RECORD_EVERY: usize = 50;
const INIT_STD: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.as_ref().len() != n {
                return Err(Error::InvalidArgument("matrix is not square".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

pub fn pairwise_sq_dists(x: &FeatureMatrix) -> SquareMatrix {
    let n = x.n_samples();
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        let a = x.row(i);
        for j in i + 1..n {
            let d: f64 = a.iter().zip(x.row(j)).map(|(u, v)| (u - v) * (u - v)).sum();
            m.data[i * n + j] = d;
            m.data[j * n + i] = d;
        }
    }
    m
}

/// A row whose bandwidth search did not reach the target perplexity.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationWarning {
    pub row: usize,
    pub achieved_perplexity: f64,
}

#[derive(Debug, Clone)]
pub struct ConditionalAffinities {
    /// Row-stochastic, zero diagonal.
    pub p: SquareMatrix,
    /// Achieved perplexity per row.
    pub perplexities: Vec<f64>,
    pub warnings: Vec<CalibrationWarning>,
}

/// Gaussian row with precision `beta`; returns the achieved perplexity.
fn gaussian_row(dists: &[f64], i: usize, min_d: f64, beta: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, o)) in dists.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let shifted = d - min_d;
        let v = (-beta * shifted).exp();
        *o = v;
        sum += v;
        weighted += v * shifted;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    // entropy in nats: ln(sum) + beta * E[d]
    let entropy = sum.ln() + beta * weighted / sum;
    entropy.exp()
}

pub fn conditional_affinities(d: &SquareMatrix, perplexity: f64, tol: f64) -> Result<ConditionalAffinities> {
    let n = d.n();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    if !(perplexity >= 1.0) || perplexity >= n as f64 {
        return Err(Error::InvalidArgument(format!("perplexity {perplexity} must lie in [1, {n})")));
    }
    let mut p = SquareMatrix::zeros(n);
    let mut perplexities = vec![0.0; n];
    let mut warnings = Vec::new();
    let mut scratch = vec![0.0; n];

    for i in 0..n {
        let row = d.row(i);
        let min_d = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        let mut best = (f64::INFINITY, beta);
        let mut converged = false;
        for _ in 0..MAX_BISECTION_STEPS {
            let perp = gaussian_row(row, i, min_d, beta, &mut scratch);
            let err = (perp - perplexity).abs();
            if err < best.0 {
                best = (err, beta);
            }
            if err <= tol {
                converged = true;
                break;
            }
            if perp > perplexity {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        let beta = if converged { beta } else { best.1 };
        let out = &mut p.data[i * n..(i + 1) * n];
        let achieved = gaussian_row(row, i, min_d, beta, out);
        perplexities[i] = achieved;
        if !converged {
            warnings.push(CalibrationWarning { row: i, achieved_perplexity: achieved });
        }
    }
    Ok(ConditionalAffinities { p, perplexities, warnings })
}

/// Joint affinities `p_ij = (p_j|i + p_i|j) / 2N`, symmetric and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    p: SquareMatrix,
    pub perplexity: f64,
    pub entropy_tol: f64,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.p.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p.get(i, j)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.p
    }
}

pub fn symmetrize(cond: &SquareMatrix, perplexity: f64, entropy_tol: f64) -> AffinityMatrix {
    let n = cond.n();
    let mut p = SquareMatrix::zeros(n);
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in i + 1..n {
            let v = (cond.get(i, j) + cond.get(j, i)) / denom;
            p.data[i * n + j] = v;
            p.data[j * n + i] = v;
        }
    }
    let total: f64 = p.data.iter().sum();
    if total > 0.0 {
        p.data.iter_mut().for_each(|v| *v /= total);
    }
    AffinityMatrix { p, perplexity, entropy_tol }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneParams {
    pub perplexity: f64,
    pub perplexity_tol: f64,
    pub max_iters: usize,
    pub learning_rate: f64,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub momentum_switch_iter: usize,
    pub early_exaggeration_factor: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 40.0,
            perplexity_tol: 1e-4,
            max_iters: 1000,
            learning_rate: 200.0,
            momentum_early: 0.5,
            momentum_late: 0.8,
            momentum_switch_iter: 250,
            early_exaggeration_factor: 12.0,
            exaggeration_iters: 250,
        }
    }
}

impl TsneParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.perplexity * 3.0 < n as f64) {
            return Err(Error::InvalidArgument(format!(
                "perplexity {} must be below N/3 = {:.2}",
                self.perplexity,
                n as f64 / 3.0
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    /// Sample id of each row.
    pub ids: Vec<SampleId>,
    /// `N x 2`, row-major.
    pub y: Vec<f64>,
    /// `(iterations completed, KL)` every 50 iterations and after the last one.
    pub kl_history: Vec<(usize, f64)>,
    /// KL once early exaggeration has ended, when the run got that far.
    pub kl_after_exaggeration: Option<f64>,
    pub seed: u64,
    pub params: TsneParams,
}

impl Projection2D {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn coords(&self, row: usize) -> [f64; 2] {
        [self.y[2 * row], self.y[2 * row + 1]]
    }

    pub fn points(&self) -> FeatureMatrix {
        FeatureMatrix::new(self.len(), 2, self.y.clone()).expect("projection coordinates are finite")
    }

    pub fn final_kl(&self) -> Option<f64> {
        self.kl_history.last().map(|(_, kl)| *kl)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "# salp-proj v1 seed={} perplexity={} iters={}\n",
            self.seed, self.params.perplexity, self.params.max_iters
        );
        for (row, id) in self.ids.iter().enumerate() {
            let [x, y] = self.coords(row);
            writeln!(out, "{id} {x} {y}").unwrap();
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::format(path, 1, "empty projection file"))?;
        let fields = header
            .strip_prefix("# salp-proj v1 ")
            .ok_or_else(|| Error::format(path, 1, "missing `# salp-proj v1` header"))?;
        let mut params = TsneParams::default();
        let mut seed = None;
        for kv in fields.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::format(path, 1, format!("bad header field `{kv}`")))?;
            let bad = || Error::format(path, 1, format!("bad header value `{kv}`"));
            match k {
                "seed" => seed = Some(v.parse().map_err(|_| bad())?),
                "perplexity" => params.perplexity = v.parse().map_err(|_| bad())?,
                "iters" => params.max_iters = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        let (mut ids, mut y) = (Vec::new(), Vec::new());
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::format(path, idx + 1, format!("expected `id x y`, got `{line}`"));
            let mut parts = line.split_whitespace();
            let id: SampleId = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let x: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let v: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if parts.next().is_some() || !x.is_finite() || !v.is_finite() {
                return Err(bad());
            }
            ids.push(id);
            y.extend([x, v]);
        }
        Ok(Self {
            ids,
            y,
            kl_history: Vec::new(),
            kl_after_exaggeration: None,
            seed: seed.ok_or_else(|| Error::format(path, 1, "header lacks seed"))?,
            params,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// Seeded Gaussian start, standard deviation 1e-4.
pub fn initial_embedding(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).unwrap();
    (0..2 * n).map(|_| normal.sample(&mut rng)).collect()
}

/// Scratch space for one gradient evaluation.
struct GradientBuffers {
    attract: Vec<f64>,
    repulse: Vec<f64>,
}

impl GradientBuffers {
    fn new(n: usize) -> Self {
        Self { attract: vec![0.0; 2 * n], repulse: vec![0.0; 2 * n] }
    }
}

/// Writes `dKL/dy` into `grad` for affinities scaled by `exaggeration`.
///
/// With `w_ij = 1 / (1 + |y_i - y_j|²)` and `Z = Σ w`, the gradient is
/// `4 Σ_j (e·p_ij - w_ij / Z) w_ij (y_i - y_j)`; attraction and repulsion are
/// accumulated in one pass over pairs and combined once `Z` is known.
fn gradient_into(p: &AffinityMatrix, exaggeration: f64, y: &[f64], grad: &mut [f64], buf: &mut GradientBuffers) {
    let n = p.n();
    buf.attract.iter_mut().for_each(|v| *v = 0.0);
    buf.repulse.iter_mut().for_each(|v| *v = 0.0);
    let mut z = 0.0;
    for i in 0..n {
        let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
        let prow = p.p.row(i);
        let (mut a0, mut a1, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0);
        for j in i + 1..n {
            let d0 = yi0 - y[2 * j];
            let d1 = yi1 - y[2 * j + 1];
            let w = 1.0 / (1.0 + d0 * d0 + d1 * d1);
            z += w;
            let pw = exaggeration * prow[j] * w;
            let ww = w * w;
            a0 += pw * d0;
            a1 += pw * d1;
            r0 += ww * d0;
            r1 += ww * d1;
            buf.attract[2 * j] -= pw * d0;
            buf.attract[2 * j + 1] -= pw * d1;
            buf.repulse[2 * j] -= ww * d0;
            buf.repulse[2 * j + 1] -= ww * d1;
        }
        buf.attract[2 * i] += a0;
        buf.attract[2 * i + 1] += a1;
        buf.repulse[2 * i] += r0;
        buf.repulse[2 * i + 1] += r1;
    }
    let z = 2.0 * z;
    for k in 0..2 * n {
        grad[k] = 4.0 * (buf.attract[k] - buf.repulse[k] / z);
    }
}

/// Analytic gradient of [`kl_divergence`] with respect to the embedding.
pub fn kl_gradient(p: &AffinityMatrix, y: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; y.len()];
    gradient_into(p, 1.0, y, &mut grad, &mut GradientBuffers::new(p.n()));
    grad
}

/// `Σ_{i≠j} p_ij ln(p_ij / q_ij)` with Student-t `q`; zero-affinity pairs contribute nothing.
pub fn kl_divergence(p: &AffinityMatrix, y: &[f64]) -> f64 {
    let n = p.n();
    let mut z = 0.0;
    let mut cross = 0.0;
    let mut mass = 0.0;
    for i in 0..n {
        let prow = p.p.row(i);
        for j in i + 1..n {
            let d0 = y[2 * i] - y[2 * j];
            let d1 = y[2 * i + 1] - y[2 * j + 1];
            let w = 1.0 / (1.0 + d0 * d0 + d1 * d1);
            z += w;
            let pij = prow[j];
            if pij > 0.0 {
                cross += pij * (pij.ln() - w.ln());
                mass += pij;
            }
        }
    }
    // Each unordered pair stands for both (i,j) and (j,i).
    let z = 2.0 * z;
    (2.0 * cross + 2.0 * mass * z.ln()).max(0.0)
}

pub fn tsne_optimize(p: &AffinityMatrix, params: &TsneParams, seed: u64) -> Result<Projection2D> {
    let n = p.n();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("t-SNE needs at least 3 points, got {n}")));
    }
    if params.max_iters == 0 || !(params.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("max_iters >= 1 and learning_rate > 0 required".into()));
    }
    let mut y = initial_embedding(n, seed);
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut buf = GradientBuffers::new(n);
    let mut kl_history = Vec::new();
    let mut kl_after_exaggeration = None;

    for iter in 0..params.max_iters {
        let exaggeration = if iter < params.exaggeration_iters { params.early_exaggeration_factor } else { 1.0 };
        let momentum = if iter < params.momentum_switch_iter { params.momentum_early } else { params.momentum_late };
        gradient_into(p, exaggeration, &y, &mut grad, &mut buf);

        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            velocity[k] = momentum * velocity[k] - params.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        let (mut m0, mut m1) = (0.0, 0.0);
        for row in y.chunks_exact(2) {
            m0 += row[0];
            m1 += row[1];
        }
        let (m0, m1) = (m0 / n as f64, m1 / n as f64);
        for row in y.chunks_exact_mut(2) {
            row[0] -= m0;
            row[1] -= m1;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: iter });
        }

        let done = iter + 1;
        let record = done % KL_RECORD_EVERY == 0 || done == params.max_iters;
        let post_exaggeration = done == params.exaggeration_iters;
        if record || post_exaggeration {
            let kl = kl_divergence(p, &y);
            if record {
                kl_history.push((done, kl));
            }
            if post_exaggeration {
                kl_after_exaggeration = Some(kl);
            }
        }
    }
    Ok(Projection2D {
        ids: (0..n).collect(),
        y,
        kl_history,
        kl_after_exaggeration,
        seed,
        params: params.clone(),
    })
}

/// Calibrates, symmetrizes and embeds the rows `ids` of `features`.
pub fn project(features: &FeatureMatrix, ids: &[SampleId], params: &TsneParams, seed: u64) -> Result<Projection2D> {
    params.validate(ids.len())?;
    let rows = features.select_rows(ids)?;
    let cond = conditional_affinities(&pairwise_sq_dists(&rows), params.perplexity, params.perplexity_tol)?;
    let p = symmetrize(&cond.p, params.perplexity, params.perplexity_tol);
    drop(cond);
    let mut proj = tsne_optimize(&p, params, seed)?;
    proj.ids = ids.to_vec();
    Ok(proj)
}
