//! Exact calibration / grouping / irreducible decompositions of finite
//! distributions where scores and true posteriors are known for every atom.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scoring::{ProbVector, RuleKind, ScoringRule};

/// A point mass of the joint law of `(S, Q)`, with a region label used for
/// the explained / residual split.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub score: Vec<f64>,
    pub posterior: Vec<f64>,
    pub region: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    /// `E[d(S, Y)]` with `Y ~ Q`.
    pub expected_divergence: f64,
    pub cl: f64,
    pub gl: f64,
    pub il: f64,
    /// `E[Var_h[E[Q | S, R] | S]]`
    pub gl_explained: f64,
    /// `E[Var_h[Q | S, R]]`
    pub gl_residual: f64,
}

fn key(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn validate(atoms: &[Atom]) -> Result<usize> {
    let first = atoms.first().ok_or(Error::EmptySample)?;
    let k = first.score.len();
    let total: f64 = atoms.iter().map(|a| a.weight).sum();
    if (total - 1.0).abs() > 1e-12 || atoms.iter().any(|a| a.weight < 0.0) {
        return Err(Error::InvalidParameter("atom weights must be nonnegative and sum to 1".into()));
    }
    for a in atoms {
        if a.score.len() != k || a.posterior.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: a.score.len().max(a.posterior.len()) });
        }
        ProbVector::new(a.score.clone())?;
        ProbVector::new(a.posterior.clone())?;
    }
    Ok(k)
}

fn weighted_mean(items: &[(f64, &[f64])]) -> Vec<f64> {
    let total: f64 = items.iter().map(|(w, _)| w).sum();
    let mut mean = vec![0.0; items[0].1.len()];
    for (w, v) in items {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += w * x / total;
        }
    }
    mean
}

/// Jensen gap of `h` over weighted points; weights need not be normalised.
fn h_var(rule: ScoringRule, items: &[(f64, Vec<f64>)]) -> f64 {
    let total: f64 = items.iter().map(|(w, _)| w).sum();
    if total == 0.0 {
        return 0.0;
    }
    let refs: Vec<(f64, &[f64])> = items.iter().map(|(w, p)| (*w, p.as_slice())).collect();
    let mean = weighted_mean(&refs);
    let mean_h: f64 = items.iter().map(|(w, p)| w / total * rule.negative_entropy_slice(p)).sum();
    mean_h - rule.negative_entropy_slice(&mean)
}

fn one_hot(k: usize, dim: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[k] = 1.0;
    e
}

/// Decomposition of the expected divergence between scores and labels, with
/// `C = E[Q | S]` computed by grouping atoms with identical scores.
pub fn decompose(rule: ScoringRule, atoms: &[Atom]) -> Result<Decomposition> {
    let dim = validate(atoms)?;
    let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for (i, a) in atoms.iter().enumerate() {
        groups.entry(key(&a.score)).or_default().push(i);
    }
    let mut out = Decomposition {
        expected_divergence: 0.0,
        cl: 0.0,
        gl: 0.0,
        il: 0.0,
        gl_explained: 0.0,
        gl_residual: 0.0,
    };
    for members in groups.values() {
        let mass: f64 = members.iter().map(|&i| atoms[i].weight).sum();
        if mass == 0.0 {
            continue;
        }
        let items: Vec<(f64, &[f64])> = members.iter().map(|&i| (atoms[i].weight, atoms[i].posterior.as_slice())).collect();
        let c = weighted_mean(&items);
        let s = &atoms[members[0]].score;
        out.cl += mass * rule.divergence_slices(s, &c)?;

        let mut regions: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in members {
            regions.entry(atoms[i].region).or_default().push(i);
            let a = &atoms[i];
            out.gl += a.weight * rule.divergence_slices(&c, &a.posterior)?;
            for k in 0..dim {
                let qk = a.posterior[k];
                if qk > 0.0 {
                    let e = one_hot(k, dim);
                    out.expected_divergence += a.weight * qk * rule.divergence_slices(s, &e)?;
                    out.il += a.weight * qk * rule.divergence_slices(&a.posterior, &e)?;
                }
            }
        }
        let mut region_means = Vec::with_capacity(regions.len());
        for idx in regions.values() {
            let rmass: f64 = idx.iter().map(|&i| atoms[i].weight).sum();
            if rmass == 0.0 {
                continue;
            }
            let ritems: Vec<(f64, &[f64])> = idx.iter().map(|&i| (atoms[i].weight, atoms[i].posterior.as_slice())).collect();
            region_means.push((rmass, weighted_mean(&ritems)));
            let within: Vec<(f64, Vec<f64>)> = idx.iter().map(|&i| (atoms[i].weight, atoms[i].posterior.clone())).collect();
            out.gl_residual += rmass * h_var(rule, &within);
        }
        out.gl_explained += mass * h_var(rule, &region_means);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClasswiseDecomposition {
    pub expected_divergence: f64,
    pub cl: f64,
    pub gl: f64,
    pub il: f64,
}

/// Per-class divergence term `d_k(p, q)`.
fn d_k(rule: ScoringRule, p: f64, q: f64) -> Result<f64> {
    match rule.kind {
        RuleKind::Brier => Ok((p - q) * (p - q)),
        RuleKind::LogLoss => {
            if q == 0.0 {
                Ok(0.0)
            } else if p <= 0.0 {
                Err(Error::InfiniteDivergence { index: 0 })
            } else {
                Ok(q * (q / p).ln())
            }
        }
    }
}

/// Decomposition with classwise-calibrated scores `C_k = E[Q_k | S_k]`,
/// summed over classes. The Brier terms use the vector convention.
pub fn decompose_classwise(rule: ScoringRule, atoms: &[Atom]) -> Result<ClasswiseDecomposition> {
    let dim = validate(atoms)?;
    let mut out = ClasswiseDecomposition {
        expected_divergence: 0.0,
        cl: 0.0,
        gl: 0.0,
        il: 0.0,
    };
    for k in 0..dim {
        let mut groups: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for a in atoms {
            let g = groups.entry(a.score[k].to_bits()).or_insert((0.0, 0.0));
            g.0 += a.weight;
            g.1 += a.weight * a.posterior[k];
        }
        for a in atoms {
            let (mass, wq) = groups[&a.score[k].to_bits()];
            if mass == 0.0 {
                continue;
            }
            let c = wq / mass;
            let (s, q, w) = (a.score[k], a.posterior[k], a.weight);
            out.expected_divergence += w * (q * d_k(rule, s, 1.0)? + (1.0 - q) * d_k(rule, s, 0.0)?);
            out.il += w * (q * d_k(rule, q, 1.0)? + (1.0 - q) * d_k(rule, q, 0.0)?);
            out.cl += w * d_k(rule, s, c)?;
            out.gl += w * d_k(rule, c, q)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(weight: f64, s: f64, q: f64, region: usize) -> Atom {
        Atom {
            weight,
            score: vec![1.0 - s, s],
            posterior: vec![1.0 - q, q],
            region,
        }
    }

    #[test]
    fn two_region_example() {
        // Q in {0.6, 0.8} at S = 0.7, split along the regions
        let atoms = [atom(0.5, 0.7, 0.6, 0), atom(0.5, 0.7, 0.8, 1)];
        let d = decompose(ScoringRule::BRIER, &atoms).unwrap();
        assert!(d.cl.abs() < 1e-15);
        assert!((d.gl - 0.01).abs() < 1e-15);
        assert!((d.gl_explained - 0.01).abs() < 1e-15);
        assert!(d.gl_residual.abs() < 1e-15);
        assert!((d.il - (0.5 * 0.24 + 0.5 * 0.16)).abs() < 1e-15);
        assert!((d.expected_divergence - (d.cl + d.gl + d.il)).abs() < 1e-15);
    }

    #[test]
    fn calibration_term() {
        let atoms = [atom(1.0, 0.7, 0.6, 0)];
        let d = decompose(ScoringRule::BRIER, &atoms).unwrap();
        assert!((d.cl - 0.01).abs() < 1e-15);
        assert_eq!(d.gl, 0.0);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(decompose(ScoringRule::BRIER, &[atom(0.5, 0.5, 0.5, 0)]).is_err());
        assert!(decompose(ScoringRule::BRIER, &[]).is_err());
    }

    #[test]
    fn binary_classwise_matches_joint_for_brier() {
        let atoms = [atom(0.25, 0.3, 0.1, 0), atom(0.25, 0.3, 0.5, 0), atom(0.5, 0.8, 0.9, 0)];
        let joint = decompose(ScoringRule::BRIER_VECTOR, &atoms).unwrap();
        let cw = decompose_classwise(ScoringRule::BRIER, &atoms).unwrap();
        for (a, b) in [(joint.cl, cw.cl), (joint.gl, cw.gl), (joint.il, cw.il)] {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
