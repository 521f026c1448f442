//! CSV and JSON input/output.
//!
//! Input tables carry a `label` column, either one `score` column (binary
//! shortcut, positive-class probability) or `score_0..score_{K-1}`, and any
//! number of `feature_*` columns. A `q_true` column, as written by the
//! simulator, is read back but not used for estimation.

use std::io::{Read, Write};

use crate::data::{Features, LabeledDataset};
use crate::error::{Error, Result};
use crate::glestim::GroupingReport;
use crate::pipeline::SweepResult;
use crate::simulate::SimulatedDataset;

const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct InputTable {
    pub dataset: LabeledDataset,
    pub q_true: Option<Vec<f64>>,
}

enum ScoreLayout {
    Binary(usize),
    Classes(Vec<usize>),
}

fn indexed_columns(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        if let Some(rest) = name.strip_prefix(prefix) {
            let idx: usize = rest.parse().map_err(|_| Error::Parse {
                line: 1,
                msg: format!("bad column name '{name}'"),
            })?;
            found.push((idx, col));
        }
    }
    found.sort_unstable();
    for (expected, &(idx, _)) in found.iter().enumerate() {
        if idx != expected {
            return Err(Error::Parse {
                line: 1,
                msg: format!("columns {prefix}* must be numbered 0..{} without gaps", found.len()),
            });
        }
    }
    Ok(found.into_iter().map(|(_, col)| col).collect())
}

pub fn read_dataset<R: Read>(reader: R) -> Result<InputTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let label_col = position("label").ok_or(Error::Parse {
        line: 1,
        msg: "missing 'label' column".into(),
    })?;
    let q_col = position("q_true");
    let score_cols = indexed_columns(&headers, "score_")?;
    let layout = match (position("score"), score_cols.is_empty()) {
        (Some(c), true) => ScoreLayout::Binary(c),
        (None, false) if score_cols.len() >= 2 => ScoreLayout::Classes(score_cols),
        (None, false) => {
            return Err(Error::Parse {
                line: 1,
                msg: "need at least two score_k columns".into(),
            })
        }
        (Some(_), false) => {
            return Err(Error::Parse {
                line: 1,
                msg: "use either 'score' or 'score_k' columns, not both".into(),
            })
        }
        (None, true) => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing score columns".into(),
            })
        }
    };
    let feature_cols = indexed_columns(&headers, "feature_")?;
    for (col, name) in headers.iter().enumerate() {
        let known = col == label_col
            || Some(col) == q_col
            || name == "score"
            || name.starts_with("score_")
            || name.starts_with("feature_");
        if !known {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unknown column '{name}'"),
            });
        }
    }
    let n_classes = match &layout {
        ScoreLayout::Binary(_) => 2,
        ScoreLayout::Classes(cols) => cols.len(),
    };

    let mut features = Vec::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut q_true = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse { line, msg };
        let num = |col: usize| -> Result<f64> {
            let field = &record[col];
            let v: f64 = field.parse().map_err(|_| err(format!("column '{}': not a number: '{field}'", &headers[col])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("column '{}': non-finite value", &headers[col])))
            }
        };
        let label_field = &record[label_col];
        let label: usize = label_field.parse().map_err(|_| err(format!("label is not a class index: '{label_field}'")))?;
        if label >= n_classes {
            return Err(err(format!("label {label} out of range for {n_classes} classes")));
        }
        match &layout {
            ScoreLayout::Binary(c) => {
                let s = num(*c)?;
                if !(0.0..=1.0).contains(&s) {
                    return Err(err(format!("score {s} outside [0, 1]")));
                }
                scores.extend([1.0 - s, s]);
            }
            ScoreLayout::Classes(cols) => {
                let mut total = 0.0;
                for &c in cols {
                    let s = num(c)?;
                    if s < 0.0 {
                        return Err(err(format!("negative score {s}")));
                    }
                    total += s;
                    scores.push(s);
                }
                if (total - 1.0).abs() > ROW_SUM_TOL {
                    return Err(err(format!("scores sum to {total}, not 1")));
                }
            }
        }
        for &c in &feature_cols {
            features.push(num(c)?);
        }
        if let Some(c) = q_col {
            q_true.push(num(c)?);
        }
        labels.push(label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let features = Features::new(features, n, feature_cols.len())?;
    Ok(InputTable {
        dataset: LabeledDataset::new(features, scores, labels, n_classes)?,
        q_true: q_col.map(|_| q_true),
    })
}

/// Binary-shortcut CSV with the oracle posterior in a trailing `q_true`
/// column.
pub fn write_simulated<W: Write>(writer: W, sim: &SimulatedDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = sim.features.n_cols();
    let mut header = vec!["label".to_string(), "score".to_string()];
    header.extend((0..d).map(|j| format!("feature_{j}")));
    header.push("q_true".into());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(d + 3);
    for i in 0..sim.len() {
        row.clear();
        row.push(sim.labels[i].to_string());
        row.push(sim.scores[i].to_string());
        row.extend(sim.features.row(i).iter().map(f64::to_string));
        row.push(sim.q_true[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Binary-shortcut CSV of a reduced view's scores.
pub fn write_binary<W: Write>(writer: W, features: &Features, scores: &[f64], labels: &[u8]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = features.n_cols();
    let mut header = vec!["label".to_string(), "score".to_string()];
    header.extend((0..d).map(|j| format!("feature_{j}")));
    w.write_record(&header)?;
    for i in 0..scores.len() {
        let mut row = vec![labels[i].to_string(), scores[i].to_string()];
        row.extend(features.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub const DIAGRAM_COLUMNS: [&str; 12] = [
    "bin_index", "s_lo", "s_hi", "S_B", "c_hat", "n_bin", "region_index", "mu_hat", "n_region", "cp_lo", "cp_hi", "grayed",
];

/// One row per (bin, region) of the grouping diagram.
pub fn write_diagram<W: Write>(writer: W, report: &GroupingReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DIAGRAM_COLUMNS)?;
    for bin in &report.diagram {
        for region in &bin.regions {
            w.write_record([
                bin.bin_index.to_string(),
                bin.s_lo.to_string(),
                bin.s_hi.to_string(),
                bin.s_b.to_string(),
                bin.c_hat.to_string(),
                bin.n_bin.to_string(),
                region.region_index.to_string(),
                region.mu_hat.to_string(),
                region.n_region.to_string(),
                region.cp_lo.to_string(),
                region.cp_hi.to_string(),
                region.grayed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: serde::Serialize>(mut writer: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn write_sweep<W: Write>(writer: W, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        result.axis.to_string().as_str(),
        "GL_LB",
        "GL_LB_sd",
        "GL_plugin",
        "GL_plugin_sd",
        "GL_explained",
        "GL_explained_sd",
        "GL_induced",
        "GL_induced_sd",
        "GL_true",
        "GL_true_se",
        "repeats",
        "unestimable",
    ])?;
    let pair = |m: Option<crate::pipeline::MeanSd>| match m {
        Some(m) => [m.mean.to_string(), m.sd.to_string()],
        None => [String::new(), String::new()],
    };
    for row in &result.rows {
        let mut rec = vec![row.value.to_string()];
        for m in [row.gl_lb, row.gl_plugin, row.gl_explained, row.gl_induced] {
            rec.extend(pair(m));
        }
        rec.push(result.gl_true.to_string());
        rec.push(result.gl_true_se.to_string());
        rec.push(result.repeats.to_string());
        rec.push(row.unestimable.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
