//! Equal-width binning of confidence scores and per-bin statistics of the
//! binned classifier.

use serde::Serialize;

use crate::data::BinaryView;
use crate::error::{Error, Result};

/// Bin of `score` among `n_bins` equal-width bins on `[0, 1]`; `1.0` falls in
/// the last bin.
#[inline]
pub fn bin_index(score: f64, n_bins: usize) -> usize {
    ((score * n_bins as f64) as usize).min(n_bins - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinStats {
    pub count: usize,
    /// Mean score in the bin (the binned classifier's output). Bin midpoint
    /// when the bin is empty.
    pub mean_score: f64,
    /// Fraction of positive labels. Zero when the bin is empty.
    pub positive_fraction: f64,
    /// Population variance of the scores in the bin.
    pub score_variance: f64,
}

#[derive(Debug, Clone)]
pub struct BinnedView {
    n_bins: usize,
    edges: Vec<f64>,
    bin_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    stats: Vec<BinStats>,
    n_selected: usize,
}

pub fn make_bins(bv: &BinaryView<'_>, n_bins: usize) -> Result<BinnedView> {
    BinnedView::new(bv.scores(), bv.labels(), n_bins, None)
}

impl BinnedView {
    /// Bins every row; statistics are computed over `rows` when given, else
    /// over all rows.
    pub fn new(scores: &[f64], labels: &[u8], n_bins: usize, rows: Option<&[usize]>) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidParameter("n_bins must be at least 1".into()));
        }
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                got: labels.len(),
            });
        }
        if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::ScoreOutOfRange(s));
        }
        let edges = (0..=n_bins).map(|j| j as f64 / n_bins as f64).collect::<Vec<_>>();
        let bin_of: Vec<usize> = scores.iter().map(|&s| bin_index(s, n_bins)).collect();

        let mut members = vec![Vec::new(); n_bins];
        match rows {
            Some(rows) => {
                for &i in rows {
                    members[bin_of[i]].push(i);
                }
            }
            None => {
                for (i, &b) in bin_of.iter().enumerate() {
                    members[b].push(i);
                }
            }
        }
        let stats = members
            .iter()
            .enumerate()
            .map(|(b, rows)| {
                let count = rows.len();
                if count == 0 {
                    return BinStats {
                        count,
                        mean_score: 0.5 * (edges[b] + edges[b + 1]),
                        positive_fraction: 0.0,
                        score_variance: 0.0,
                    };
                }
                let nf = count as f64;
                let mean_score = rows.iter().map(|&i| scores[i]).sum::<f64>() / nf;
                let positives = rows.iter().filter(|&&i| labels[i] == 1).count();
                let score_variance = rows.iter().map(|&i| (scores[i] - mean_score).powi(2)).sum::<f64>() / nf;
                BinStats {
                    count,
                    mean_score,
                    positive_fraction: positives as f64 / nf,
                    score_variance,
                }
            })
            .collect();
        let n_selected = members.iter().map(Vec::len).sum();
        Ok(Self {
            n_bins,
            edges,
            bin_of,
            members,
            stats,
            n_selected,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Bin of every row of the parent view, selected or not.
    pub fn bin_of(&self) -> &[usize] {
        &self.bin_of
    }

    /// Selected rows falling in bin `b`.
    pub fn members(&self, b: usize) -> &[usize] {
        &self.members[b]
    }

    pub fn stats(&self) -> &[BinStats] {
        &self.stats
    }

    /// Number of rows the statistics were computed over.
    pub fn n_selected(&self) -> usize {
        self.n_selected
    }

    /// Empirical mass of each bin among the selected rows.
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n_selected.max(1) as f64;
        self.stats.iter().map(move |s| s.count as f64 / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WithinBinVariance {
    pub per_bin: Vec<f64>,
    /// `E[Var[S | S_B]]` over non-empty bins.
    pub total: f64,
}

pub fn within_bin_score_variance(bview: &BinnedView) -> WithinBinVariance {
    let per_bin = bview.stats().iter().map(|s| s.score_variance).collect();
    let total = bview
        .stats()
        .iter()
        .zip(bview.weights())
        .map(|(s, w)| w * s.score_variance)
        .sum();
    WithinBinVariance { per_bin, total }
}
