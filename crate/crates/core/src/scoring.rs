//! Proper scoring rules (Brier score and log-loss), their divergences and
//! negative entropies, and the h-variance (Jensen gap) built on them.
//!
//! For binary problems the Brier score has two common conventions. The
//! `Scalar` convention scores only the positive-class probability, so its
//! h-variance is the ordinary variance. The `Vector` convention scores the
//! full two-class vector and is exactly twice the scalar one.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Brier,
    LogLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryConvention {
    Scalar,
    Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringRule {
    pub kind: RuleKind,
    /// Only meaningful for the Brier score on two-class problems.
    pub binary_convention: BinaryConvention,
}

impl Default for ScoringRule {
    fn default() -> Self {
        Self::BRIER
    }
}

impl FromStr for ScoringRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brier" => Ok(Self::BRIER),
            "brier-vector" => Ok(Self::BRIER_VECTOR),
            "logloss" | "log-loss" => Ok(Self::LOG_LOSS),
            _ => Err(Error::InvalidParameter(format!("unknown rule '{s}' (brier|brier-vector|logloss)"))),
        }
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::NotOnSimplex("empty vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(*v)) {
            return Err(Error::NotOnSimplex(format!("component {v} outside [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotOnSimplex(format!("components sum to {sum}")));
        }
        Ok(Self(values))
    }

    /// Two-class vector `(1 - p, p)`.
    pub fn binary(p: f64) -> Result<Self> {
        Self::new(vec![1.0 - p, p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Weighted empirical distribution over points of the simplex.
#[derive(Debug, Clone)]
pub struct WeightedProbSample {
    points: Vec<ProbVector>,
    weights: Vec<f64>,
}

impl WeightedProbSample {
    pub fn new(points: Vec<ProbVector>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let dim = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<ProbVector>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub fn points(&self) -> &[ProbVector] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.points[0].len()];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (m, v) in mean.iter_mut().zip(p.as_slice()) {
                *m += w * v;
            }
        }
        mean
    }
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl ScoringRule {
    pub const BRIER: Self = Self {
        kind: RuleKind::Brier,
        binary_convention: BinaryConvention::Scalar,
    };
    pub const BRIER_VECTOR: Self = Self {
        kind: RuleKind::Brier,
        binary_convention: BinaryConvention::Vector,
    };
    pub const LOG_LOSS: Self = Self {
        kind: RuleKind::LogLoss,
        binary_convention: BinaryConvention::Scalar,
    };

    fn scalar_brier(&self, dim: usize) -> bool {
        self.kind == RuleKind::Brier
            && self.binary_convention == BinaryConvention::Scalar
            && dim == 2
    }

    pub fn is_brier(&self) -> bool {
        self.kind == RuleKind::Brier
    }

    /// `d(s, q) = s_phi(s, q) - s_phi(q, q)`.
    pub fn divergence(&self, s: &ProbVector, q: &ProbVector) -> Result<f64> {
        self.divergence_slices(s.as_slice(), q.as_slice())
    }

    pub(crate) fn divergence_slices(&self, s: &[f64], q: &[f64]) -> Result<f64> {
        if s.len() != q.len() {
            return Err(Error::DimensionMismatch {
                expected: s.len(),
                got: q.len(),
            });
        }
        match self.kind {
            RuleKind::Brier if self.scalar_brier(s.len()) => Ok((s[1] - q[1]).powi(2)),
            RuleKind::Brier => Ok(s.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum()),
            RuleKind::LogLoss => {
                let mut d = 0.0;
                for (index, (&sk, &qk)) in s.iter().zip(q).enumerate() {
                    if qk > 0.0 {
                        if sk <= 0.0 {
                            return Err(Error::InfiniteDivergence { index });
                        }
                        d += qk * (qk / sk).ln();
                    }
                }
                // Rounding can push an exact zero slightly negative.
                Ok(d.max(0.0))
            }
        }
    }

    /// `h(p) = -s_phi(p, p)`, with `0 log 0 = 0`.
    pub fn negative_entropy(&self, p: &ProbVector) -> f64 {
        self.negative_entropy_slice(p.as_slice())
    }

    pub(crate) fn negative_entropy_slice(&self, p: &[f64]) -> f64 {
        match self.kind {
            RuleKind::Brier if self.scalar_brier(p.len()) => -p[1] * (1.0 - p[1]),
            RuleKind::Brier => p.iter().map(|v| v * v).sum::<f64>() - 1.0,
            RuleKind::LogLoss => p.iter().map(|&v| xlogx(v)).sum(),
        }
    }

    /// Divergence between two binary problems given by their positive-class
    /// probabilities.
    pub fn binary_divergence(&self, s: f64, q: f64) -> Result<f64> {
        match self.kind {
            RuleKind::Brier => Ok(self.brier_scale() * (s - q).powi(2)),
            RuleKind::LogLoss => self.divergence_slices(&[1.0 - s, s], &[1.0 - q, q]),
        }
    }

    /// Negative entropy of the binary distribution with positive-class
    /// probability `p`.
    pub fn binary_negative_entropy(&self, p: f64) -> f64 {
        match self.kind {
            RuleKind::Brier => -self.brier_scale() * p * (1.0 - p),
            RuleKind::LogLoss => xlogx(p) + xlogx(1.0 - p),
        }
    }

    /// Factor between this rule's binary Brier divergence and the squared
    /// difference of positive-class probabilities.
    pub(crate) fn brier_scale(&self) -> f64 {
        match self.binary_convention {
            BinaryConvention::Scalar => 1.0,
            BinaryConvention::Vector => 2.0,
        }
    }

    pub fn h_variance(&self, sample: &WeightedProbSample) -> f64 {
        jensen_gap(sample, |p| self.negative_entropy_slice(p))
    }

    /// Weighted h-variance of scalar positive-class probabilities. Weights
    /// need not be normalised.
    pub fn binary_h_variance(&self, values: &[f64], weights: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), weights.len());
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let mut mean = 0.0;
        let mut mean_h = 0.0;
        for (&v, &w) in values.iter().zip(weights) {
            mean += w * v;
            mean_h += w * self.binary_negative_entropy(v);
        }
        mean /= total;
        mean_h /= total;
        // convexity makes the gap nonnegative; clip rounding noise
        (mean_h - self.binary_negative_entropy(mean)).max(0.0)
    }
}

/// `sum_i w_i f(p_i) - f(sum_i w_i p_i)` for an arbitrary function `f`.
pub fn jensen_gap<F>(sample: &WeightedProbSample, f: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mean = sample.mean();
    let mean_f: f64 = sample
        .points
        .iter()
        .zip(&sample.weights)
        .map(|(p, w)| w * f(p.as_slice()))
        .sum();
    mean_f - f(&mean)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn simplex(dim: usize) -> impl Strategy<Value = ProbVector> {
        proptest::collection::vec(0.01f64..1.0, dim).prop_map(|raw| {
            let total: f64 = raw.iter().sum();
            ProbVector::new(raw.iter().map(|v| v / total).collect()).unwrap()
        })
    }

    fn sample(dim: usize) -> impl Strategy<Value = WeightedProbSample> {
        proptest::collection::vec((simplex(dim), 0.01f64..1.0), 1..12).prop_map(|items| {
            let total: f64 = items.iter().map(|(_, w)| w).sum();
            let (points, weights): (Vec<_>, Vec<_>) =
                items.into_iter().map(|(p, w)| (p, w / total)).unzip();
            WeightedProbSample::new(points, renormalise(weights)).unwrap()
        })
    }

    fn renormalise(mut w: Vec<f64>) -> Vec<f64> {
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let residual = 1.0 - w.iter().sum::<f64>();
        w[0] += residual;
        w
    }

    proptest! {
        #[test]
        fn negative_entropy_is_convex(p in simplex(3), q in simplex(3), t in 0.0f64..=1.0) {
            let mix: Vec<f64> = p.as_slice().iter().zip(q.as_slice()).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            for rule in [ScoringRule::BRIER, ScoringRule::LOG_LOSS] {
                let lhs = rule.negative_entropy_slice(&mix);
                let rhs = t * rule.negative_entropy(&p) + (1.0 - t) * rule.negative_entropy(&q);
                prop_assert!(lhs <= rhs + 1e-12);
            }
        }

        #[test]
        fn divergence_is_nonnegative(s in simplex(4), q in simplex(4)) {
            for rule in [ScoringRule::BRIER, ScoringRule::LOG_LOSS] {
                prop_assert!(rule.divergence(&s, &q).unwrap() >= 0.0);
                prop_assert!(rule.divergence(&s, &s).unwrap().abs() < 1e-15);
            }
        }

        #[test]
        fn vector_brier_is_twice_scalar(s in 0.0f64..=1.0, q in 0.0f64..=1.0, smp in sample(2)) {
            let v = ScoringRule::BRIER_VECTOR.binary_divergence(s, q).unwrap();
            let c = ScoringRule::BRIER.binary_divergence(s, q).unwrap();
            prop_assert!((v - 2.0 * c).abs() < 1e-15);
            let hv = ScoringRule::BRIER_VECTOR.h_variance(&smp);
            let hc = ScoringRule::BRIER.h_variance(&smp);
            prop_assert!((hv - 2.0 * hc).abs() < 1e-12);
        }

        #[test]
        fn h_variance_is_nonnegative(smp in sample(3)) {
            for rule in [ScoringRule::BRIER, ScoringRule::LOG_LOSS] {
                prop_assert!(rule.h_variance(&smp) >= -1e-12);
            }
        }

        #[test]
        fn h_variance_ignores_affine_terms(
            smp in sample(3),
            a in -5.0f64..5.0,
            b in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            for rule in [ScoringRule::BRIER_VECTOR, ScoringRule::LOG_LOSS] {
                let base = rule.h_variance(&smp);
                let shifted = jensen_gap(&smp, |p| {
                    rule.negative_entropy_slice(p)
                        + a
                        + p.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
                });
                prop_assert!((base - shifted).abs() < 1e-12);
            }
        }
    }
}
