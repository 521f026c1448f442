//! Estimation of the grouping loss of probabilistic classifiers: how far
//! confidence scores are from true posteriors beyond what calibration
//! measures.
//!
//! The usual entry point is [`pipeline::estimate`], which turns a
//! [`LabeledDataset`] and a [`RunConfig`] into a [`GroupingReport`].

pub mod binning;
pub mod calibration;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod glestim;
pub mod io;
pub mod partition;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod simulate;

pub use binning::{make_bins, BinnedView};
pub use calibration::{CalibrationCurve, IsotonicMap};
pub use data::{BinaryView, Features, LabeledDataset, Provenance, SplitIndex};
pub use error::{Error, Result};
pub use glestim::{GroupingReport, RegionStats};
pub use partition::{PartitionModel, PartitionStrategy};
pub use pipeline::{estimate, Recalibration, Reduction, RunConfig};
pub use scoring::{BinaryConvention, ProbVector, RuleKind, ScoringRule, WeightedProbSample};
pub use simulate::{OracleSummary, SimulatorSpec};
