//! Calibration-curve estimation: a locally weighted linear smoother for the
//! continuous curve, pool-adjacent-violators isotonic recalibration, and the
//! calibration loss of a binned classifier.

use serde::Serialize;

use crate::binning::BinnedView;
use crate::error::{Error, Result};
use crate::scoring::ScoringRule;

pub const DEFAULT_BANDWIDTH_FRACTION: f64 = 0.3;

/// Maximum number of support points the smoother is evaluated at; the curve
/// is linearly interpolated between them.
const MAX_SUPPORT_POINTS: usize = 256;

/// Estimated calibration curve `s -> E[Y | S = s]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationCurve {
    support: Vec<f64>,
    values: Vec<f64>,
    bandwidth_fraction: f64,
}

impl CalibrationCurve {
    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bandwidth_fraction(&self) -> f64 {
        self.bandwidth_fraction
    }

    /// Evaluates the curve; constant beyond the fitted score range.
    pub fn eval(&self, s: f64) -> f64 {
        interpolate(&self.support, &self.values, s).clamp(0.0, 1.0)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    // first knot strictly greater than x
    let hi = xs.partition_point(|&k| k <= x);
    let lo = hi - 1;
    let span = xs[hi] - xs[lo];
    if span <= 0.0 {
        return ys[hi];
    }
    let t = (x - xs[lo]) / span;
    ys[lo] + t * (ys[hi] - ys[lo])
}

/// Tricube-weighted local linear regression of labels on scores over the
/// nearest `ceil(fraction * n)` neighbours, without robustness iterations.
pub fn fit_calibration_curve(scores: &[f64], labels: &[u8], bandwidth_fraction: f64) -> Result<CalibrationCurve> {
    let n = scores.len();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    if n < 10 {
        return Err(Error::InvalidParameter(format!(
            "calibration curve needs at least 10 samples, got {n}"
        )));
    }
    if !(bandwidth_fraction > 0.0 && bandwidth_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth fraction {bandwidth_fraction} outside (0, 1]"
        )));
    }
    let mut pairs: Vec<(f64, f64)> = scores.iter().zip(labels).map(|(&s, &y)| (s, f64::from(y))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();

    let (lo, hi) = (xs[0], xs[n - 1]);
    if hi - lo <= 0.0 {
        let mean = ys.iter().sum::<f64>() / n as f64;
        return Ok(CalibrationCurve {
            support: vec![lo],
            values: vec![mean],
            bandwidth_fraction,
        });
    }

    let mut support: Vec<f64> = xs.clone();
    support.dedup();
    if support.len() > MAX_SUPPORT_POINTS {
        let m = MAX_SUPPORT_POINTS - 1;
        support = (0..=m).map(|j| lo + (hi - lo) * j as f64 / m as f64).collect();
    }

    let k = ((bandwidth_fraction * n as f64).ceil() as usize).clamp(2, n);
    let mut start = 0usize;
    let values = support
        .iter()
        .map(|&x0| {
            // Slide the k-window rightwards while that brings it closer to x0.
            while start + k < n && x0 - xs[start] > xs[start + k] - x0 {
                start += 1;
            }
            local_linear(&xs[start..start + k], &ys[start..start + k], x0).clamp(0.0, 1.0)
        })
        .collect();
    Ok(CalibrationCurve {
        support,
        values,
        bandwidth_fraction,
    })
}

fn local_linear(xs: &[f64], ys: &[f64], x0: f64) -> f64 {
    let radius = (x0 - xs[0]).abs().max((xs[xs.len() - 1] - x0).abs());
    let weight = |x: f64| {
        if radius <= 0.0 {
            return 1.0;
        }
        let u = ((x - x0).abs() / radius).min(1.0);
        (1.0 - u * u * u).powi(3)
    };
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let w = weight(x);
        sw += w;
        sx += w * x;
        sy += w * y;
    }
    if sw <= 0.0 {
        // every neighbour sits on the window boundary
        return ys.iter().sum::<f64>() / ys.len() as f64;
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let w = weight(x);
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    if sxx <= 1e-12 * sw * radius.max(1e-300).powi(2) {
        return my;
    }
    my + sxy / sxx * (x0 - mx)
}

/// Nondecreasing recalibration map. Constant on each pooled block, linear
/// between blocks, constant beyond the fitted range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsotonicMap {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl IsotonicMap {
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn apply(&self, s: f64) -> f64 {
        interpolate(&self.breakpoints, &self.values, s).clamp(0.0, 1.0)
    }
}

/// Pool-adjacent-violators fit of labels on scores under a nondecreasing
/// constraint. Tied scores are pooled first.
pub fn isotonic_fit(scores: &[f64], labels: &[u8]) -> Result<IsotonicMap> {
    let n = scores.len();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "isotonic fit needs at least 2 samples, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    struct Block {
        lo: f64,
        hi: f64,
        sum: f64,
        weight: f64,
    }
    impl Block {
        fn mean(&self) -> f64 {
            self.sum / self.weight
        }
    }

    let mut blocks: Vec<Block> = Vec::new();
    for &i in &order {
        let (x, y) = (scores[i], f64::from(labels[i]));
        match blocks.last_mut() {
            Some(last) if last.hi == x => {
                last.sum += y;
                last.weight += 1.0;
            }
            _ => blocks.push(Block { lo: x, hi: x, sum: y, weight: 1.0 }),
        }
        while blocks.len() >= 2 && blocks[blocks.len() - 2].mean() > blocks[blocks.len() - 1].mean() {
            let top = blocks.pop().expect("len checked");
            let prev = blocks.last_mut().expect("len checked");
            prev.hi = top.hi;
            prev.sum += top.sum;
            prev.weight += top.weight;
        }
    }
    let mut breakpoints = Vec::with_capacity(2 * blocks.len());
    let mut values = Vec::with_capacity(2 * blocks.len());
    for b in &blocks {
        let v = b.mean().clamp(0.0, 1.0);
        breakpoints.push(b.lo);
        values.push(v);
        if b.hi > b.lo {
            breakpoints.push(b.hi);
            values.push(v);
        }
    }
    Ok(IsotonicMap { breakpoints, values })
}

pub fn isotonic_apply(map: &IsotonicMap, scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|&s| map.apply(s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinnedCalibrationLoss {
    /// `+inf` when `infinite` is set.
    pub value: f64,
    pub infinite: bool,
}

/// `sum_s (n_s / n) d(S_B(s), c_hat(s))` over non-empty bins.
pub fn calibration_loss_binned(bview: &BinnedView, rule: ScoringRule) -> BinnedCalibrationLoss {
    let mut value = 0.0;
    for (stats, w) in bview.stats().iter().zip(bview.weights()) {
        if stats.count == 0 {
            continue;
        }
        match rule.binary_divergence(stats.mean_score, stats.positive_fraction) {
            Ok(d) => value += w * d,
            Err(_) => {
                return BinnedCalibrationLoss {
                    value: f64::INFINITY,
                    infinite: true,
                }
            }
        }
    }
    BinnedCalibrationLoss { value, infinite: false }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        proptest::collection::vec((0.0f64..=1.0, 0u8..=1), 2..200).prop_map(|v| v.into_iter().unzip())
    }

    proptest! {
        #[test]
        fn isotonic_is_monotone((scores, labels) in instance()) {
            let map = isotonic_fit(&scores, &labels).unwrap();
            prop_assert!(map.breakpoints().windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(map.values().windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(map.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let mut grid: Vec<f64> = scores.clone();
            grid.sort_by(f64::total_cmp);
            let applied = isotonic_apply(&map, &grid);
            prop_assert!(applied.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        }

        #[test]
        fn isotonic_recalibration_never_increases_binned_loss((scores, labels) in instance(), n_bins in 1usize..20) {
            let before = calibration_loss_binned(&BinnedView::new(&scores, &labels, n_bins, None).unwrap(), ScoringRule::BRIER);
            let map = isotonic_fit(&scores, &labels).unwrap();
            let recal = isotonic_apply(&map, &scores);
            // the recalibrated scores are calibrated on their own level sets, so
            // binning them can only merge calibrated groups
            let after = calibration_loss_binned(&BinnedView::new(&recal, &labels, n_bins, None).unwrap(), ScoringRule::BRIER);
            prop_assert!(after.value <= before.value + 1e-12, "{} > {}", after.value, before.value);
        }

        #[test]
        fn smoother_is_bounded_and_deterministic((scores, labels) in instance(), frac in 0.05f64..=1.0) {
            prop_assume!(scores.len() >= 10);
            let a = fit_calibration_curve(&scores, &labels, frac).unwrap();
            let b = fit_calibration_curve(&scores, &labels, frac).unwrap();
            prop_assert_eq!(&a, &b);
            for j in 0..=20 {
                let v = a.eval(j as f64 / 20.0);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
