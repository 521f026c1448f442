//! End-to-end estimation: reduction, split, optional recalibration, binning,
//! partitioning and the grouping report; plus simulator sweeps.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::BinnedView;
use crate::calibration::{calibration_loss_binned, fit_calibration_curve, isotonic_apply, isotonic_fit, DEFAULT_BANDWIDTH_FRACTION};
use crate::data::{stratified_split, BinaryView, LabeledDataset, SplitIndex};
use crate::error::{Error, Result};
use crate::glestim::{build_report, gl_explained_debiased, gl_induced_estimate, region_stats, GroupingReport, ReportCounts, ReportInputs};
use crate::partition::{assign_regions, fit_partition, PartitionStrategy};
use crate::rng::derive_seed;
use crate::scoring::ScoringRule;
use crate::simulate::{sample_sd, true_gl_monte_carlo, SimulatorSpec};

pub const DEFAULT_BINS: usize = 15;
pub const DEFAULT_REGION_RATIO: usize = 30;
/// Train share of every split; fixed so reports stay comparable.
pub const SPLIT_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recalibration {
    #[default]
    None,
    Isotonic,
}

impl FromStr for Recalibration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "isotonic" => Ok(Self::Isotonic),
            _ => Err(Error::InvalidParameter(format!("unknown recalibration '{s}' (none|isotonic)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Native view for two classes, top-label otherwise.
    #[default]
    Auto,
    TopLabel,
    Classwise(usize),
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "top-label" | "top_label" => Ok(Self::TopLabel),
            _ => s
                .strip_prefix("classwise:")
                .and_then(|k| k.parse().ok())
                .map(Self::Classwise)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown reduction '{s}' (auto|top-label|classwise:K)"))),
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::TopLabel => f.write_str("top-label"),
            Self::Classwise(k) => write!(f, "classwise:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub rule: ScoringRule,
    pub n_bins: usize,
    pub region_ratio: usize,
    pub partition: PartitionStrategy,
    pub recalibrate: Recalibration,
    pub split_fraction: f64,
    pub seed: u64,
    pub reduction: Reduction,
    pub bandwidth_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rule: ScoringRule::default(),
            n_bins: DEFAULT_BINS,
            region_ratio: DEFAULT_REGION_RATIO,
            partition: PartitionStrategy::Tree,
            recalibrate: Recalibration::None,
            split_fraction: SPLIT_FRACTION,
            seed: 0,
            reduction: Reduction::Auto,
            bandwidth_fraction: DEFAULT_BANDWIDTH_FRACTION,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_bins == 0 {
            return bad("bins must be at least 1".into());
        }
        if self.region_ratio == 0 {
            return bad("region ratio must be at least 1".into());
        }
        if self.partition == PartitionStrategy::Tree && self.region_ratio < 2 {
            return bad(format!("tree partitions need a region ratio of at least 2, got {}", self.region_ratio));
        }
        if let PartitionStrategy::KMeans { k } = self.partition {
            if k == 0 {
                return bad("k-means needs at least one cluster".into());
            }
        }
        if !(self.bandwidth_fraction > 0.0 && self.bandwidth_fraction <= 1.0) {
            return bad(format!("bandwidth must lie in (0, 1], got {}", self.bandwidth_fraction));
        }
        if self.split_fraction != SPLIT_FRACTION {
            return bad(format!("split fraction is fixed at {SPLIT_FRACTION}"));
        }
        Ok(())
    }
}

pub fn reduce<'a>(ds: &'a LabeledDataset, reduction: Reduction) -> Result<BinaryView<'a>> {
    match reduction {
        Reduction::Auto if ds.n_classes() == 2 => ds.native_view(),
        Reduction::Auto | Reduction::TopLabel => Ok(ds.top_label_reduce()),
        Reduction::Classwise(k) => ds.classwise_slice(k),
    }
}

/// Scores after the configured recalibration, fitted on the train rows and
/// applied to every row.
fn recalibrated_scores(bv: &BinaryView<'_>, split: &SplitIndex, recal: Recalibration) -> Result<Vec<f64>> {
    match recal {
        Recalibration::None => Ok(bv.scores().to_vec()),
        Recalibration::Isotonic => {
            let s: Vec<f64> = split.train_rows.iter().map(|&i| bv.scores()[i]).collect();
            let y: Vec<u8> = split.train_rows.iter().map(|&i| bv.labels()[i]).collect();
            let map = isotonic_fit(&s, &y)?;
            Ok(isotonic_apply(&map, bv.scores()))
        }
    }
}

/// Reduced view with recalibrated scores, and the split used.
pub fn recalibrate<'a>(ds: &'a LabeledDataset, config: &RunConfig) -> Result<(BinaryView<'a>, SplitIndex)> {
    config.validate()?;
    let bv = reduce(ds, config.reduction)?;
    let split = stratified_split(&bv, config.n_bins, config.seed)?;
    let scores = recalibrated_scores(&bv, &split, config.recalibrate)?;
    Ok((bv.with_scores(scores)?, split))
}

pub fn estimate(ds: &LabeledDataset, config: &RunConfig) -> Result<GroupingReport> {
    let (bv, split) = recalibrate(ds, config)?;
    estimate_view(&bv, &split, config)
}

/// Estimation on an already reduced (and recalibrated) view.
pub fn estimate_view(bv: &BinaryView<'_>, split: &SplitIndex, config: &RunConfig) -> Result<GroupingReport> {
    if bv.features().n_cols() == 0 {
        return Err(Error::NoFeatures);
    }
    let rule = config.rule;
    let bview = BinnedView::new(bv.scores(), bv.labels(), config.n_bins, Some(&split.test_rows))?;
    let cl = calibration_loss_binned(&bview, rule);
    let model = fit_partition(&bview, bv.features(), bv.labels(), split, config.partition, config.region_ratio, config.seed)?;
    let regions = assign_regions(&model, &bview, bv.features());
    let stats = region_stats(&regions, &bview, bv.labels(), &split.test_rows);
    let explained = gl_explained_debiased(&stats, rule);
    let curve = fit_calibration_curve(bv.scores(), bv.labels(), config.bandwidth_fraction)?;
    let gl_induced = gl_induced_estimate(&curve, &bview, bv.scores(), rule);
    build_report(ReportInputs {
        config,
        bview: &bview,
        stats: &stats,
        explained: &explained,
        gl_induced,
        cl,
        counts: ReportCounts {
            n_rows: bv.len(),
            n_train: split.train_rows.len(),
            n_test: split.test_rows.len(),
            n_induced: bv.len(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Bins,
    RegionRatio,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bins" => Ok(Self::Bins),
            "region_ratio" | "region-ratio" => Ok(Self::RegionRatio),
            _ => Err(Error::InvalidParameter(format!("unknown sweep axis '{s}' (bins|region_ratio)"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bins => "bins",
            Self::RegionRatio => "region_ratio",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
            sd: sample_sd(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    /// `None` when every repeat was unestimable.
    pub gl_lb: Option<MeanSd>,
    pub gl_plugin: Option<MeanSd>,
    pub gl_explained: Option<MeanSd>,
    pub gl_induced: Option<MeanSd>,
    pub unestimable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub n: usize,
    pub repeats: usize,
    pub gl_true: f64,
    pub gl_true_se: f64,
    pub rows: Vec<SweepRow>,
}

pub struct SweepParams<'a> {
    pub spec: &'a SimulatorSpec,
    pub base: &'a RunConfig,
    pub axis: SweepAxis,
    pub values: &'a [usize],
    /// Rows per simulated dataset.
    pub n: usize,
    pub repeats: usize,
    /// Rows for the true grouping-loss oracle.
    pub n_oracle: usize,
}

/// One estimate per (axis value, repeat); repeat `r` uses the same simulated
/// dataset for every axis value.
pub fn sweep(params: SweepParams<'_>) -> Result<SweepResult> {
    let SweepParams {
        spec,
        base,
        axis,
        values,
        n,
        repeats,
        n_oracle,
    } = params;
    if repeats == 0 || values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value and one repeat".into()));
    }
    spec.validate()?;
    let oracle = true_gl_monte_carlo(spec, base.rule, n_oracle, derive_seed(base.seed, u64::MAX))?;
    let seeds: Vec<u64> = (0..repeats).map(|r| derive_seed(base.seed, r as u64)).collect();
    let datasets = seeds
        .par_iter()
        .map(|&s| spec.sample(n, s)?.to_dataset())
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = base.clone();
        match axis {
            SweepAxis::Bins => config.n_bins = value,
            SweepAxis::RegionRatio => config.region_ratio = value,
        }
        let below_two = axis == SweepAxis::RegionRatio && value < 2;
        if below_two {
            rows.push(SweepRow {
                value,
                gl_lb: None,
                gl_plugin: None,
                gl_explained: None,
                gl_induced: None,
                unestimable: true,
            });
            continue;
        }
        let reports = datasets
            .par_iter()
            .zip(&seeds)
            .map(|(ds, &s)| {
                let cfg = RunConfig { seed: s, ..config.clone() };
                estimate(ds, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let usable: Vec<&GroupingReport> = reports.iter().filter(|r| !r.flags.all_unestimable).collect();
        let stat = |f: fn(&GroupingReport) -> f64| {
            (!usable.is_empty()).then(|| MeanSd::of(&usable.iter().map(|r| f(r)).collect::<Vec<_>>()))
        };
        rows.push(SweepRow {
            value,
            gl_lb: stat(|r| r.gl_lb),
            gl_plugin: stat(|r| r.gl_plugin),
            gl_explained: stat(|r| r.gl_explained),
            gl_induced: stat(|r| r.gl_induced),
            unestimable: usable.len() < reports.len(),
        });
    }
    Ok(SweepResult {
        axis,
        n,
        repeats,
        gl_true: oracle.gl_true,
        gl_true_se: oracle.gl_se,
        rows,
    })
}
