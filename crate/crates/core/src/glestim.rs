//! Grouping-loss estimators: plugin and debiased explained grouping loss over
//! region partitions, the binning-induced grouping loss, the resulting lower
//! bound, the Brier binning bounds and the grouping-diagram report.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::binning::BinnedView;
use crate::calibration::{BinnedCalibrationLoss, CalibrationCurve};
use crate::error::{Error, Result};
use crate::pipeline::RunConfig;
use crate::scoring::{RuleKind, ScoringRule};

/// Regions with fewer test rows than this make their bin low-confidence.
pub const LOW_CONFIDENCE_COUNT: usize = 10;
const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCount {
    pub region: usize,
    pub n: usize,
    pub positives: usize,
}

impl RegionCount {
    pub fn mean(&self) -> f64 {
        self.positives as f64 / self.n as f64
    }
}

/// Test-row counts of one bin, split by region. Regions without test rows are
/// not stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStats {
    pub bin: usize,
    pub n: usize,
    pub positives: usize,
    pub regions: Vec<RegionCount>,
}

impl CellStats {
    pub fn c_hat(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.positives as f64 / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionStats {
    /// Number of test rows across all bins.
    pub n_total: usize,
    pub cells: Vec<CellStats>,
}

/// Counts and positive fractions per (bin, region) over `test_rows`.
pub fn region_stats(regions: &[usize], bview: &BinnedView, labels: &[u8], test_rows: &[usize]) -> RegionStats {
    let n_bins = bview.n_bins();
    let mut per_bin: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_bins];
    for &i in test_rows {
        let b = bview.bin_of()[i];
        let r = regions[i];
        let slots = &mut per_bin[b];
        if slots.len() <= r {
            slots.resize(r + 1, (0, 0));
        }
        slots[r].0 += 1;
        slots[r].1 += usize::from(labels[i] == 1);
    }
    let cells = per_bin
        .into_iter()
        .enumerate()
        .map(|(bin, slots)| {
            let regions: Vec<RegionCount> = slots
                .into_iter()
                .enumerate()
                .filter(|(_, (n, _))| *n > 0)
                .map(|(region, (n, positives))| RegionCount { region, n, positives })
                .collect();
            CellStats {
                bin,
                n: regions.iter().map(|r| r.n).sum(),
                positives: regions.iter().map(|r| r.positives).sum(),
                regions,
            }
        })
        .collect();
    RegionStats {
        n_total: test_rows.len(),
        cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub bin: usize,
    pub n: usize,
    /// Rows left after dropping single-row regions.
    pub n_retained: usize,
    pub singleton_regions: usize,
    pub c_hat: f64,
    pub plugin: f64,
    pub bias: f64,
    pub explained: f64,
    pub estimable: bool,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedEstimate {
    pub cells: Vec<CellEstimate>,
    pub plugin: f64,
    pub bias: f64,
    pub explained: f64,
    /// False under log-loss, where only the plugin value is available.
    pub debiased: bool,
}

impl ExplainedEstimate {
    pub fn unestimable_bins(&self) -> Vec<usize> {
        self.cells.iter().filter(|c| c.n > 0 && !c.estimable).map(|c| c.bin).collect()
    }

    pub fn low_confidence_bins(&self) -> Vec<usize> {
        self.cells.iter().filter(|c| c.estimable && c.low_confidence).map(|c| c.bin).collect()
    }

    /// No bin with test rows could be estimated.
    pub fn all_unestimable(&self) -> bool {
        !self.cells.iter().any(|c| c.estimable)
    }
}

/// Explained grouping loss of the binned classifier over a partition.
///
/// Regions holding a single test row have no variance estimate; they are
/// dropped from their bin and the bin's statistics are recomputed over the
/// remaining rows. A bin with fewer than two remaining rows is unestimable
/// and contributes nothing. Bins are weighted by their share of test rows.
pub fn gl_explained_debiased(stats: &RegionStats, rule: ScoringRule) -> ExplainedEstimate {
    let debiased = rule.is_brier();
    let scale = rule.brier_scale();
    let n_total = stats.n_total.max(1) as f64;
    let mut out = ExplainedEstimate {
        cells: Vec::with_capacity(stats.cells.len()),
        plugin: 0.0,
        bias: 0.0,
        explained: 0.0,
        debiased,
    };
    for cell in &stats.cells {
        let retained: Vec<&RegionCount> = cell.regions.iter().filter(|r| r.n >= 2).collect();
        let m: usize = retained.iter().map(|r| r.n).sum();
        let mut est = CellEstimate {
            bin: cell.bin,
            n: cell.n,
            n_retained: m,
            singleton_regions: cell.regions.len() - retained.len(),
            c_hat: cell.c_hat(),
            plugin: 0.0,
            bias: 0.0,
            explained: 0.0,
            estimable: m >= 2,
            low_confidence: retained.iter().any(|r| r.n < LOW_CONFIDENCE_COUNT),
        };
        if est.estimable {
            let mf = m as f64;
            let c = retained.iter().map(|r| r.positives).sum::<usize>() as f64 / mf;
            if debiased {
                let mut plugin = 0.0;
                let mut within = 0.0;
                for r in &retained {
                    let w = r.n as f64 / mf;
                    let mu = r.mean();
                    plugin += w * (mu - c) * (mu - c);
                    within += w * mu * (1.0 - mu) / (r.n as f64 - 1.0);
                }
                est.plugin = scale * plugin;
                est.bias = scale * (within - c * (1.0 - c) / (mf - 1.0));
            } else {
                let values: Vec<f64> = retained.iter().map(|r| r.mean()).collect();
                let weights: Vec<f64> = retained.iter().map(|r| r.n as f64).collect();
                est.plugin = rule.binary_h_variance(&values, &weights);
            }
            est.explained = est.plugin - est.bias;
            let w = cell.n as f64 / n_total;
            out.plugin += w * est.plugin;
            out.bias += w * est.bias;
        }
        out.cells.push(est);
    }
    out.explained = out.plugin - out.bias;
    out
}

/// Induced grouping loss from per-row calibrated-score estimates:
/// `sum_s (n_s / n) [mean_i h(c_i) - h(mean_i c_i)]` over the rows of each bin.
pub fn gl_induced_from_values(values: &[f64], bin_of: &[usize], n_bins: usize, rule: ScoringRule) -> f64 {
    debug_assert_eq!(values.len(), bin_of.len());
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let clamp = |c: f64| match rule.kind {
        RuleKind::LogLoss => c.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP),
        RuleKind::Brier => c,
    };
    let mut count = vec![0usize; n_bins];
    let mut sum = vec![0.0; n_bins];
    let mut sum_h = vec![0.0; n_bins];
    for (&v, &b) in values.iter().zip(bin_of) {
        let c = clamp(v);
        count[b] += 1;
        sum[b] += c;
        sum_h[b] += rule.binary_negative_entropy(c);
    }
    let mut total = 0.0;
    for b in 0..n_bins {
        if count[b] == 0 {
            continue;
        }
        let k = count[b] as f64;
        let gap = sum_h[b] / k - rule.binary_negative_entropy(sum[b] / k);
        // Jensen: the gap is nonnegative up to rounding
        total += k / n as f64 * gap.max(0.0);
    }
    total
}

/// Induced grouping loss of binning `scores` with the bins of `bview`,
/// estimated through the calibration curve `curve` on every row.
pub fn gl_induced_estimate(curve: &CalibrationCurve, bview: &BinnedView, scores: &[f64], rule: ScoringRule) -> f64 {
    let values: Vec<f64> = scores.iter().map(|&s| curve.eval(s)).collect();
    gl_induced_from_values(&values, bview.bin_of(), bview.n_bins(), rule)
}

pub fn gl_lower_bound(gl_explained: f64, gl_induced: f64) -> f64 {
    gl_explained - gl_induced
}

/// Bounds on the sum of binning-induced calibration and grouping losses,
/// with empirical within-bin score variance and `c_hat` standing in for the
/// conditional variance and the binned calibrated score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningBounds {
    pub induced_lower: f64,
    pub induced_upper: f64,
    pub induced_lower_equal_width: f64,
    pub induced_upper_equal_width: f64,
    /// `1 / (4 N^2)`.
    pub quarter_term: f64,
}

/// Only defined for the Brier score.
pub fn binning_bounds(bview: &BinnedView, rule: ScoringRule) -> Option<BinningBounds> {
    if !rule.is_brier() {
        return None;
    }
    let scale = rule.brier_scale();
    let nb = bview.n_bins() as f64;
    let quarter_term = 1.0 / (4.0 * nb * nb);
    let (mut lower, mut upper, mut spread) = (0.0, 0.0, 0.0);
    for (st, w) in bview.stats().iter().zip(bview.weights()) {
        if st.count == 0 {
            continue;
        }
        let sd = st.score_variance.sqrt();
        let cs = (st.positive_fraction * (1.0 - st.positive_fraction)).sqrt();
        lower -= w * sd * (2.0 * cs + sd);
        upper += w * sd * (2.0 * cs - sd);
        spread += w * cs;
    }
    Some(BinningBounds {
        induced_lower: scale * lower,
        induced_upper: scale * upper,
        induced_lower_equal_width: scale * (-spread / nb - quarter_term),
        induced_upper_equal_width: scale * spread / nb,
        quarter_term: scale * quarter_term,
    })
}

/// Lower bounds on `MSE(S, Q) = CL + GL` from binned estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseLowerBound {
    pub general: f64,
    pub equal_width: f64,
}

pub fn mse_lower_bound(bounds: &BinningBounds, cl_binned: f64, gl_explained: f64) -> MseLowerBound {
    let base = cl_binned + gl_explained;
    MseLowerBound {
        general: base - bounds.induced_upper,
        equal_width: base - bounds.induced_upper_equal_width,
    }
}

/// Exact (Clopper-Pearson) two-sided binomial interval at level `1 - alpha`.
pub fn clopper_pearson(k: usize, n: usize, alpha: f64) -> Result<(f64, f64)> {
    if n == 0 || k > n {
        return Err(Error::InvalidParameter(format!("need 0 <= k <= n and n >= 1, got k={k}, n={n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 { 0.0 } else { beta_quantile(kf, nf - kf + 1.0, alpha / 2.0) };
    let hi = if k == n { 1.0 } else { beta_quantile(kf + 1.0, nf - kf, 1.0 - alpha / 2.0) };
    Ok((lo, hi))
}

/// Inverse of the regularised incomplete beta function by bisection.
fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramRegion {
    pub region_index: usize,
    pub mu_hat: f64,
    pub n_region: usize,
    pub cp_lo: f64,
    pub cp_hi: f64,
    /// The interval contains the bin's `c_hat`.
    pub grayed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramBin {
    pub bin_index: usize,
    pub s_lo: f64,
    pub s_hi: f64,
    #[serde(rename = "S_B")]
    pub s_b: f64,
    pub c_hat: f64,
    pub n_bin: usize,
    pub estimable: bool,
    pub low_confidence: bool,
    pub regions: Vec<DiagramRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFlags {
    pub all_unestimable: bool,
    pub unestimable_bins: Vec<usize>,
    pub low_confidence_bins: Vec<usize>,
    pub no_debiasing: bool,
    pub cl_infinite: bool,
    pub singleton_regions_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub n_rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Rows used for the induced grouping loss.
    pub n_induced: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingReport {
    pub config: RunConfig,
    pub rule: ScoringRule,
    pub n_bins: usize,
    pub region_ratio: usize,
    pub counts: ReportCounts,
    /// `None` when infinite (see `flags.cl_infinite`).
    #[serde(rename = "CL_binned")]
    pub cl_binned: Option<f64>,
    #[serde(rename = "GL_plugin")]
    pub gl_plugin: f64,
    #[serde(rename = "GL_bias")]
    pub gl_bias: f64,
    #[serde(rename = "GL_explained")]
    pub gl_explained: f64,
    #[serde(rename = "GL_induced")]
    pub gl_induced: f64,
    #[serde(rename = "GL_LB")]
    pub gl_lb: f64,
    #[serde(rename = "GL_explained_clipped")]
    pub gl_explained_clipped: f64,
    #[serde(rename = "GL_LB_clipped")]
    pub gl_lb_clipped: f64,
    pub bounds: Option<BinningBounds>,
    pub mse_lower_bound: Option<MseLowerBound>,
    pub flags: ReportFlags,
    pub diagram: Vec<DiagramBin>,
}

pub struct ReportInputs<'a> {
    pub config: &'a RunConfig,
    /// Bins with statistics over the test rows.
    pub bview: &'a BinnedView,
    pub stats: &'a RegionStats,
    pub explained: &'a ExplainedEstimate,
    pub gl_induced: f64,
    pub cl: BinnedCalibrationLoss,
    pub counts: ReportCounts,
}

pub const DIAGRAM_ALPHA: f64 = 0.05;

pub fn build_report(inputs: ReportInputs<'_>) -> Result<GroupingReport> {
    let ReportInputs {
        config,
        bview,
        stats,
        explained,
        gl_induced,
        cl,
        counts,
    } = inputs;
    let rule = config.rule;
    let gl_lb = gl_lower_bound(explained.explained, gl_induced);
    let bounds = binning_bounds(bview, rule);
    let cl_binned = (!cl.infinite).then_some(cl.value);
    let mse = match (bounds, cl_binned) {
        (Some(b), Some(c)) => Some(mse_lower_bound(&b, c, explained.explained)),
        _ => None,
    };

    let edges = bview.edges();
    let mut diagram = Vec::with_capacity(stats.cells.len());
    for (cell, est) in stats.cells.iter().zip(&explained.cells) {
        if cell.n == 0 {
            continue;
        }
        let c_hat = cell.c_hat();
        let regions = cell
            .regions
            .iter()
            .map(|r| {
                let (cp_lo, cp_hi) = clopper_pearson(r.positives, r.n, DIAGRAM_ALPHA)?;
                Ok(DiagramRegion {
                    region_index: r.region,
                    mu_hat: r.mean(),
                    n_region: r.n,
                    cp_lo,
                    cp_hi,
                    grayed: cp_lo <= c_hat && c_hat <= cp_hi,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        diagram.push(DiagramBin {
            bin_index: cell.bin,
            s_lo: edges[cell.bin],
            s_hi: edges[cell.bin + 1],
            s_b: bview.stats()[cell.bin].mean_score,
            c_hat,
            n_bin: cell.n,
            estimable: est.estimable,
            low_confidence: est.low_confidence,
            regions,
        });
    }

    Ok(GroupingReport {
        config: config.clone(),
        rule,
        n_bins: config.n_bins,
        region_ratio: config.region_ratio,
        counts,
        cl_binned,
        gl_plugin: explained.plugin,
        gl_bias: explained.bias,
        gl_explained: explained.explained,
        gl_induced,
        gl_lb,
        gl_explained_clipped: explained.explained.max(0.0),
        gl_lb_clipped: gl_lb.max(0.0),
        bounds,
        mse_lower_bound: mse,
        flags: ReportFlags {
            all_unestimable: explained.all_unestimable(),
            unestimable_bins: explained.unestimable_bins(),
            low_confidence_bins: explained.low_confidence_bins(),
            no_debiasing: !explained.debiased,
            cl_infinite: cl.infinite,
            singleton_regions_dropped: explained.cells.iter().map(|c| c.singleton_regions).sum(),
        },
        diagram,
    })
}
