//! Calibrated-by-construction simulators with a known true posterior `Q`,
//! and a Monte-Carlo oracle for their true grouping and calibration losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::binning::bin_index;
use crate::data::{Features, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::scoring::ScoringRule;

/// Rows drawn from one generator stream.
pub const BLOCK_SIZE: usize = 8192;
pub const DEFAULT_STRATA: usize = 1000;
pub const REFINED_STRATA: usize = 4000;
pub const BOOTSTRAP_RESAMPLES: usize = 20;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Odd perturbation with values in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psi {
    /// `2 / (1 + exp(-z)) - 1`
    Sigmoid,
    Sign,
    Zero,
}

impl Psi {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Psi::Sigmoid => 2.0 * sigmoid(z) - 1.0,
            Psi::Sign => {
                if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Psi::Zero => 0.0,
        }
    }
}

/// Monotone increasing map applied to the calibrated score, producing a
/// miscalibrated classifier with the same level sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    /// `sigmoid(factor * logit(s))`; factors above one are overconfident.
    LogitScale(f64),
    Power(f64),
}

impl Distortion {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Distortion::LogitScale(a) => sigmoid(a * (s / (1.0 - s)).ln()),
            Distortion::Power(a) => s.powf(a),
        }
    }

    fn validate(self) -> Result<()> {
        let v = match self {
            Distortion::LogitScale(a) | Distortion::Power(a) => a,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidSimulator(format!("distortion parameter must be positive, got {v}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealisticSimulator {
    pub d: usize,
    pub omega: Vec<f64>,
    pub omega_perp: Vec<f64>,
    pub psi: Psi,
    #[serde(default)]
    pub accuracy_preserving: bool,
    /// Diagonal covariance on the coordinate axes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_eigenvalues: Option<Vec<f64>>,
    /// Full covariance, row-major rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_distortion: Option<Distortion>,
}

impl Default for RealisticSimulator {
    fn default() -> Self {
        Self {
            d: 2,
            omega: vec![1.0, 0.0],
            omega_perp: vec![0.0, 1.0],
            psi: Psi::Sigmoid,
            accuracy_preserving: false,
            sigma_eigenvalues: None,
            sigma: None,
            score_distortion: None,
        }
    }
}

impl RealisticSimulator {
    fn covariance(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.d;
        match (&self.sigma_eigenvalues, &self.sigma) {
            (Some(_), Some(_)) => Err(Error::InvalidSimulator(
                "give either sigma_eigenvalues or sigma, not both".into(),
            )),
            (Some(eig), None) => {
                if eig.len() != d {
                    return Err(Error::InvalidSimulator(format!("sigma_eigenvalues has {} entries, d = {d}", eig.len())));
                }
                let mut m = vec![vec![0.0; d]; d];
                for (i, &e) in eig.iter().enumerate() {
                    m[i][i] = e;
                }
                Ok(m)
            }
            (None, Some(m)) => {
                if m.len() != d || m.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidSimulator(format!("sigma must be {d}x{d}")));
                }
                Ok(m.clone())
            }
            (None, None) => Ok((0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect()),
        }
    }

    /// Lower-triangular factor of the validated covariance.
    fn validate(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.d;
        if d < 2 {
            return Err(Error::InvalidSimulator(format!("d must be at least 2, got {d}")));
        }
        if self.omega.len() != d || self.omega_perp.len() != d {
            return Err(Error::InvalidSimulator(format!("omega and omega_perp must have length {d}")));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (nw, np) = (norm(&self.omega), norm(&self.omega_perp));
        if nw == 0.0 || np == 0.0 {
            return Err(Error::InvalidSimulator("omega and omega_perp must be nonzero".into()));
        }
        let dot: f64 = self.omega.iter().zip(&self.omega_perp).map(|(a, b)| a * b).sum();
        if dot.abs() > 1e-9 * nw * np {
            return Err(Error::InvalidSimulator(format!("omega and omega_perp are not orthogonal (dot = {dot})")));
        }
        if let Some(dist) = self.score_distortion {
            dist.validate()?;
        }
        let sigma = self.covariance()?;
        let asymmetric = (0..d).any(|i| (0..i).any(|j| (sigma[i][j] - sigma[j][i]).abs() > 1e-12 * (1.0 + sigma[i][j].abs())));
        if asymmetric {
            return Err(Error::InvalidSimulator("sigma is not symmetric".into()));
        }
        for v in [&self.omega, &self.omega_perp] {
            if !is_eigenvector(&sigma, v) {
                return Err(Error::InvalidSimulator(
                    "omega and omega_perp must be eigenvectors of sigma".into(),
                ));
            }
        }
        cholesky(&sigma)
    }

    pub fn q_of(&self, s: f64, z_perp: f64) -> f64 {
        let delta = if self.accuracy_preserving {
            s.min(1.0 - s).min((0.5 - s).abs())
        } else {
            s.min(1.0 - s)
        };
        let q = s + self.psi.eval(z_perp) * delta;
        if self.accuracy_preserving {
            // guard against rounding across the threshold
            if s < 0.5 {
                q.min(0.5)
            } else {
                q.max(0.5)
            }
        } else {
            q.clamp(0.0, 1.0)
        }
    }
}

fn is_eigenvector(m: &[Vec<f64>], v: &[f64]) -> bool {
    let mv: Vec<f64> = m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let lambda: f64 = mv.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / vv;
    let resid: f64 = mv.iter().zip(v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = m.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    resid <= 1e-9 * scale * vv.sqrt()
}

/// Cholesky factor tolerating zero pivots (positive semi-definite input).
fn cholesky(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = m.len();
    let mut l = vec![vec![0.0; d]; d];
    let tol = 1e-12 * m.iter().enumerate().map(|(i, r)| r[i].abs()).fold(1.0, f64::max);
    for j in 0..d {
        let pivot = m[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if pivot < -tol {
            return Err(Error::InvalidSimulator("sigma is not positive semi-definite".into()));
        }
        if pivot <= tol {
            for i in j + 1..d {
                let rest = m[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if rest.abs() > tol.sqrt() {
                    return Err(Error::InvalidSimulator("sigma is not positive semi-definite".into()));
                }
            }
            continue;
        }
        let root = pivot.sqrt();
        l[j][j] = root;
        for i in j + 1..d {
            l[i][j] = (m[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>()) / root;
        }
    }
    Ok(l)
}

/// Link `h` between the score and the posterior on the positive half-line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    /// `min(2s, 1)`
    Double,
    /// `-s^2 + 2s`
    Quadratic,
    /// `max(min(2s, 1/2), 2s - 1)`, which keeps accuracy optimal.
    Step,
    /// Linear interpolation through `(knots[i], values[i])`, knots spanning `[0, 1]`.
    Piecewise { knots: Vec<f64>, values: Vec<f64> },
}

impl Link {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Link::Identity => s,
            Link::Double => (2.0 * s).min(1.0),
            Link::Quadratic => -s * s + 2.0 * s,
            Link::Step => (2.0 * s).min(0.5).max(2.0 * s - 1.0),
            Link::Piecewise { knots, values } => {
                let j = knots.partition_point(|&k| k <= s).clamp(1, knots.len() - 1);
                let (x0, x1) = (knots[j - 1], knots[j]);
                let t = if x1 > x0 { (s - x0) / (x1 - x0) } else { 0.0 };
                values[j - 1] + t * (values[j] - values[j - 1])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSimulator1D {
    pub link: Link,
    /// Also require the link to keep posterior and score on the same side of
    /// one half.
    #[serde(default)]
    pub accuracy_preserving: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_distortion: Option<Distortion>,
}

const LINK_GRID: usize = 10_000;
const BAND_TOL: f64 = 1e-12;

impl LinkSimulator1D {
    pub fn new(link: Link) -> Self {
        Self {
            link,
            accuracy_preserving: false,
            score_distortion: None,
        }
    }

    /// Even classifier with a single zero at the origin; uniform on `[0, 1)`
    /// under standard normal features.
    pub fn score(x: f64) -> f64 {
        let n = Normal::standard();
        (2.0 * n.cdf(x.abs()) - 1.0).clamp(0.0, 1.0)
    }

    pub fn q_of(&self, x: f64, s: f64) -> f64 {
        let h = self.link.eval(s);
        if x > 0.0 {
            h
        } else if x < 0.0 {
            (2.0 * s - h).clamp(0.0, 1.0)
        } else {
            s
        }
    }

    fn validate(&self) -> Result<()> {
        if let Link::Piecewise { knots, values } = &self.link {
            if knots.len() < 2 || knots.len() != values.len() {
                return Err(Error::InvalidSimulator("piecewise link needs matching knots and values (>= 2)".into()));
            }
            if knots[0] != 0.0 || knots[knots.len() - 1] != 1.0 || knots.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidSimulator("piecewise knots must increase from 0 to 1".into()));
            }
        }
        if let Some(dist) = self.score_distortion {
            dist.validate()?;
        }
        // scores cover [0, 1)
        for i in 0..LINK_GRID {
            let s = i as f64 / LINK_GRID as f64;
            let h = self.link.eval(s);
            if !(h >= 2.0 * s - 1.0 - BAND_TOL && h <= 2.0 * s + BAND_TOL && (0.0..=1.0).contains(&h)) {
                return Err(Error::InvalidSimulator(format!("link leaves the band 2s-1 <= h(s) <= 2s at s = {s}: h = {h}")));
            }
            if self.accuracy_preserving {
                let g = 2.0 * s - h;
                let ok = |q: f64| if s < 0.5 { q <= 0.5 } else { q >= 0.5 };
                if !ok(h) || !ok(g) {
                    return Err(Error::InvalidSimulator(format!("link does not preserve accuracy at s = {s}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimulatorSpec {
    Realistic(RealisticSimulator),
    Link(LinkSimulator1D),
}

impl Default for SimulatorSpec {
    fn default() -> Self {
        SimulatorSpec::Realistic(RealisticSimulator::default())
    }
}

impl SimulatorSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::InvalidSimulator(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SimulatorSpec::Realistic(r) => r.validate().map(|_| ()),
            SimulatorSpec::Link(l) => l.validate(),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<SimulatedDataset> {
        match self {
            SimulatorSpec::Realistic(r) => sample_realistic(r, n, seed),
            SimulatorSpec::Link(l) => sample_link_1d(l, n, seed),
        }
    }
}

/// A simulated binary dataset with its oracle quantities.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub features: Features,
    /// Scores emitted by the classifier (distorted when configured).
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub q_true: Vec<f64>,
    /// `E[Q | S]` per row.
    pub calibrated: Vec<f64>,
    pub seed: u64,
}

impl SimulatedDataset {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        LabeledDataset::binary(self.features.clone(), &self.scores, &self.labels)
    }
}

struct Row {
    x: Vec<f64>,
    s: f64,
    q: f64,
    c: f64,
    y: u8,
}

fn sample_blocks<F>(n: usize, seed: u64, d: usize, draw: F) -> SimulatedDataset
where
    F: Fn(&mut ChaCha8Rng) -> Row + Sync,
{
    let n_blocks = n.div_ceil(BLOCK_SIZE);
    let blocks: Vec<Vec<Row>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            let len = BLOCK_SIZE.min(n - b * BLOCK_SIZE);
            (0..len).map(|_| draw(&mut rng)).collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n * d);
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut q_true = Vec::with_capacity(n);
    let mut calibrated = Vec::with_capacity(n);
    for row in blocks.into_iter().flatten() {
        data.extend_from_slice(&row.x);
        scores.push(row.s);
        labels.push(row.y);
        q_true.push(row.q);
        calibrated.push(row.c);
    }
    SimulatedDataset {
        features: Features::new(data, n, d).expect("row lengths match d"),
        scores,
        labels,
        q_true,
        calibrated,
        seed,
    }
}

pub fn sample_realistic(sim: &RealisticSimulator, n: usize, seed: u64) -> Result<SimulatedDataset> {
    let l = sim.validate()?;
    let d = sim.d;
    Ok(sample_blocks(n, seed, d, |rng| {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let x: Vec<f64> = l.iter().map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum()).collect();
        let proj = |w: &[f64]| w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        let c = sigmoid(proj(&sim.omega));
        let q = sim.q_of(c, proj(&sim.omega_perp));
        let y = u8::from(rng.random::<f64>() < q);
        let s = sim.score_distortion.map_or(c, |dist| dist.apply(c));
        Row { x, s, q, c, y }
    }))
}

pub fn sample_link_1d(sim: &LinkSimulator1D, n: usize, seed: u64) -> Result<SimulatedDataset> {
    sim.validate()?;
    Ok(sample_blocks(n, seed, 1, |rng| {
        let x: f64 = rng.sample(StandardNormal);
        let c = LinkSimulator1D::score(x);
        let q = sim.q_of(x, c);
        let y = u8::from(rng.random::<f64>() < q);
        let s = sim.score_distortion.map_or(c, |dist| dist.apply(c));
        Row { x: vec![x], s, q, c, y }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    #[serde(rename = "GL_true")]
    pub gl_true: f64,
    #[serde(rename = "GL_true_se")]
    pub gl_se: f64,
    /// Estimate with `REFINED_STRATA` strata, for the convergence check.
    #[serde(rename = "GL_true_refined")]
    pub gl_refined: f64,
    /// `None` when the divergence is infinite for some row.
    #[serde(rename = "CL_true")]
    pub cl_true: Option<f64>,
    #[serde(rename = "CL_true_se")]
    pub cl_se: Option<f64>,
    pub n_mc: usize,
    pub strata: usize,
    pub seed: u64,
}

/// `E[Var_h[Q | S]]` from stratifying `strata_of` into `n_strata` cells;
/// cells with fewer than two rows are dropped.
fn stratified_gl(strata_of: &[usize], q: &[f64], rows: &[usize], n_strata: usize, rule: ScoringRule) -> f64 {
    let mut count = vec![0usize; n_strata];
    let mut sum = vec![0.0; n_strata];
    let mut sum_h = vec![0.0; n_strata];
    for &i in rows {
        let b = strata_of[i];
        count[b] += 1;
        sum[b] += q[i];
        sum_h[b] += rule.binary_negative_entropy(q[i]);
    }
    let kept: usize = count.iter().filter(|&&c| c >= 2).sum();
    if kept == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for b in 0..n_strata {
        if count[b] < 2 {
            continue;
        }
        let k = count[b] as f64;
        total += k * (sum_h[b] / k - rule.binary_negative_entropy(sum[b] / k)).max(0.0);
    }
    total / kept as f64
}

/// Monte-Carlo true grouping loss (stratified on the score) and calibration
/// loss (against the known `E[Q | S]`) of a simulator.
pub fn true_gl_monte_carlo(spec: &SimulatorSpec, rule: ScoringRule, n_mc: usize, seed: u64) -> Result<OracleSummary> {
    if n_mc < 2 {
        return Err(Error::InvalidParameter("n_mc must be at least 2".into()));
    }
    let sim = spec.sample(n_mc, seed)?;
    Ok(oracle_from_sample(&sim, rule, seed))
}

pub fn oracle_from_sample(sim: &SimulatedDataset, rule: ScoringRule, seed: u64) -> OracleSummary {
    let n = sim.len();
    let all: Vec<usize> = (0..n).collect();
    let strata: Vec<usize> = sim.scores.iter().map(|&s| bin_index(s, DEFAULT_STRATA)).collect();
    let refined_strata: Vec<usize> = sim.scores.iter().map(|&s| bin_index(s, REFINED_STRATA)).collect();
    let gl_true = stratified_gl(&strata, &sim.q_true, &all, DEFAULT_STRATA, rule);
    let gl_refined = stratified_gl(&refined_strata, &sim.q_true, &all, REFINED_STRATA, rule);

    let boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0xB007, r as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            stratified_gl(&strata, &sim.q_true, &rows, DEFAULT_STRATA, rule)
        })
        .collect();
    let gl_se = sample_sd(&boot);

    let divs: Option<Vec<f64>> = sim
        .scores
        .iter()
        .zip(&sim.calibrated)
        .map(|(&s, &c)| rule.binary_divergence(s, c).ok())
        .collect();
    let (cl_true, cl_se) = match divs {
        Some(d) => {
            let mean = d.iter().sum::<f64>() / n as f64;
            (Some(mean), Some(sample_sd(&d) / (n as f64).sqrt()))
        }
        None => (None, None),
    };
    OracleSummary {
        gl_true,
        gl_se,
        gl_refined,
        cl_true,
        cl_se,
        n_mc: n,
        strata: DEFAULT_STRATA,
        seed: sim.seed,
    }
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Whether the posterior and score fall on the same side of one half (or the
/// posterior sits exactly on it).
pub fn same_side(s: f64, q: f64) -> bool {
    q == 0.5 || (s < 0.5) == (q < 0.5)
}

/// Per-bin `|mean(Q) - mean(S)|` maximised over non-empty bins.
pub fn max_binned_calibration_gap(scores: &[f64], q: &[f64], n_bins: usize) -> f64 {
    let mut count = vec![0usize; n_bins];
    let mut gap = vec![0.0; n_bins];
    for (&s, &qv) in scores.iter().zip(q) {
        let b = bin_index(s, n_bins);
        count[b] += 1;
        gap[b] += qv - s;
    }
    count
        .iter()
        .zip(&gap)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &g)| (g / c as f64).abs())
        .fold(0.0, f64::max)
}
