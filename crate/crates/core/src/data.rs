//! Labeled datasets, their binary reductions, and score-stratified splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::bin_index;
use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-6;

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Features {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl Features {
    pub fn new(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                expected: n_rows * n_cols,
                got: data.len(),
            });
        }
        Ok(Self {
            data,
            n_rows,
            n_cols,
        })
    }

    /// A matrix with `n_rows` rows and no columns.
    pub fn empty(n_rows: usize) -> Self {
        Self {
            data: Vec::new(),
            n_rows,
            n_cols: 0,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, rows.len(), n_cols)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }
}

/// Rows of (features, score vector, class label).
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Features,
    scores: Vec<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledDataset {
    /// `scores` is row-major `n x n_classes`; `labels` are class indices.
    pub fn new(features: Features, scores: Vec<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        let n = labels.len();
        if scores.len() != n * n_classes {
            return Err(Error::DimensionMismatch {
                expected: n * n_classes,
                got: scores.len(),
            });
        }
        if features.n_rows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: features.n_rows(),
            });
        }
        for (i, row) in scores.chunks_exact(n_classes).enumerate() {
            if row.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(Error::NotOnSimplex(format!("row {i} has a score outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotOnSimplex(format!("row {i} scores sum to {sum}")));
            }
        }
        if let Some(&index) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::ClassOutOfRange { index, n_classes });
        }
        Ok(Self {
            features,
            scores,
            labels,
            n_classes,
        })
    }

    /// Binary dataset from positive-class scores and 0/1 labels.
    pub fn binary(features: Features, scores: &[f64], labels: &[u8]) -> Result<Self> {
        if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::ScoreOutOfRange(s));
        }
        if labels.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                got: labels.len(),
            });
        }
        let flat = scores.iter().flat_map(|&s| [1.0 - s, s]).collect();
        let labels = labels.iter().map(|&l| l as usize).collect();
        Self::new(features, flat, labels, 2)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.features.n_cols()
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn scores(&self, i: usize) -> &[f64] {
        &self.scores[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// One-hot expansion of the label of row `i`.
    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_classes];
        v[self.labels[i]] = 1.0;
        v
    }

    /// Binary view of a two-class dataset on its positive class (class 1).
    pub fn native_view(&self) -> Result<BinaryView<'_>> {
        if self.n_classes != 2 {
            return Err(Error::InvalidParameter(format!(
                "native binary view needs 2 classes, got {}",
                self.n_classes
            )));
        }
        let mut view = self.classwise_slice(1)?;
        view.provenance = Provenance::Native;
        Ok(view)
    }

    /// Is the predicted class correct, scored by the top confidence.
    /// Ties in the argmax go to the lowest class index.
    pub fn top_label_reduce(&self) -> BinaryView<'_> {
        let (score, label) = (0..self.len())
            .map(|i| {
                let row = self.scores(i);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = k;
                    }
                }
                (row[best], u8::from(self.labels[i] == best))
            })
            .unzip();
        BinaryView {
            features: &self.features,
            score,
            label,
            provenance: Provenance::TopLabel,
        }
    }

    pub fn classwise_slice(&self, k: usize) -> Result<BinaryView<'_>> {
        if k >= self.n_classes {
            return Err(Error::ClassOutOfRange {
                index: k,
                n_classes: self.n_classes,
            });
        }
        let (score, label) = (0..self.len())
            .map(|i| (self.scores(i)[k], u8::from(self.labels[i] == k)))
            .unzip();
        Ok(BinaryView {
            features: &self.features,
            score,
            label,
            provenance: Provenance::Classwise(k),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Native,
    TopLabel,
    Classwise(usize),
}

/// Binary problem over the rows of a parent dataset. Features are borrowed,
/// never copied.
#[derive(Debug, Clone)]
pub struct BinaryView<'a> {
    features: &'a Features,
    score: Vec<f64>,
    label: Vec<u8>,
    provenance: Provenance,
}

impl<'a> BinaryView<'a> {
    pub fn new(features: &'a Features, score: Vec<f64>, label: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if score.len() != label.len() || features.n_rows() != score.len() {
            return Err(Error::DimensionMismatch {
                expected: features.n_rows(),
                got: score.len(),
            });
        }
        if let Some(&s) = score.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::ScoreOutOfRange(s));
        }
        if label.iter().any(|&l| l > 1) {
            return Err(Error::InvalidParameter("binary labels must be 0 or 1".into()));
        }
        Ok(Self {
            features,
            score,
            label,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }

    pub fn features(&self) -> &'a Features {
        self.features
    }

    pub fn scores(&self) -> &[f64] {
        &self.score
    }

    pub fn labels(&self) -> &[u8] {
        &self.label
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Same rows and labels with replaced scores (e.g. after recalibration).
    pub fn with_scores(&self, score: Vec<f64>) -> Result<BinaryView<'a>> {
        BinaryView::new(self.features, score, self.label.clone(), self.provenance)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub bin_count_used_for_stratification: usize,
}

impl SplitIndex {
    /// `true` at the rows that belong to the training half.
    pub fn train_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.train_rows {
            mask[i] = true;
        }
        mask
    }
}

/// Halves the rows so that both halves share the same score distribution:
/// within each equal-width score bin, rows are shuffled and dealt
/// alternately to train and test.
pub fn stratified_split(bv: &BinaryView<'_>, n_bins: usize, seed: u64) -> Result<SplitIndex> {
    if bv.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 rows to split, got {}",
            bv.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be at least 1".into()));
    }
    let mut members = vec![Vec::new(); n_bins];
    for (i, &s) in bv.scores().iter().enumerate() {
        members[bin_index(s, n_bins)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_rows = Vec::with_capacity(bv.len() / 2 + n_bins);
    let mut test_rows = Vec::with_capacity(bv.len() / 2 + n_bins);
    // Odd-sized bins alternate which half gets the extra row.
    let mut train_first = true;
    for mut rows in members {
        rows.shuffle(&mut rng);
        for (pos, &i) in rows.iter().enumerate() {
            if (pos % 2 == 0) == train_first {
                train_rows.push(i);
            } else {
                test_rows.push(i);
            }
        }
        if rows.len() % 2 == 1 {
            train_first = !train_first;
        }
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(SplitIndex {
        train_rows,
        test_rows,
        bin_count_used_for_stratification: n_bins,
    })
}
