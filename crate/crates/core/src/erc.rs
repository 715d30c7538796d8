//! Error-versus-reject characteristic.
//!
//! The decision threshold is fixed once from the full impostor distribution
//! and reused at every reject ratio. Rejection acts on images: at ratio `r`
//! the `floor(r * N)` lowest-quality images among the `N` images referenced
//! by the comparison set are discarded, and a pair survives only if neither
//! of its images was discarded. Similarity scores are "higher is more
//! likely genuine"; a pair matches when `score >= threshold`.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{quantile_count, rank_ascending};
use crate::tensor_io::{ComparisonSet, QualityTable};

/// Recorded in the curve sidecar so readers know the threshold did not drift.
pub const THRESHOLD_POLICY: &str = "fixed-from-unfiltered-impostors";
pub const REJECTION_UNIT: &str = "image";

/// Smallest threshold `t` from the candidate sweep such that the fraction of
/// impostor scores `>= t` is at most `target_fmr`.
///
/// Candidates are the distinct impostor scores in ascending order followed
/// by the next representable value above the maximum, which always admits
/// an FMR of zero.
pub fn threshold_at_fmr(impostor_scores: &[f64], target_fmr: f64) -> Result<f64> {
    if impostor_scores.is_empty() {
        return Err(Error::Empty("impostor score list"));
    }
    if !(target_fmr > 0.0 && target_fmr < 1.0) {
        return Err(Error::invalid(format!("target FMR {target_fmr} must lie in (0, 1)")));
    }
    if impostor_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("impostor scores must be finite"));
    }
    let mut sorted = impostor_scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let mut i = 0;
    while i < n {
        let candidate = sorted[i];
        // Everything from index i upward scores >= candidate.
        if fmr_fraction(n - i, n) <= target_fmr {
            return Ok(candidate);
        }
        while i < n && sorted[i] == candidate {
            i += 1;
        }
    }
    Ok(sorted[n - 1].next_up())
}

/// Fraction of `total` represented by `count`; shared by the sweep and by
/// callers that verify the achieved FMR.
pub fn fmr_fraction(count: usize, total: usize) -> f64 {
    count as f64 / total as f64
}

/// Fraction of impostor scores at or above `threshold`.
pub fn achieved_fmr(impostor_scores: &[f64], threshold: f64) -> f64 {
    let hits = impostor_scores.iter().filter(|&&s| s >= threshold).count();
    fmr_fraction(hits, impostor_scores.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FnmrPoint {
    pub fnmr: f64,
    pub surviving_genuine: usize,
}

/// FNMR over the genuine pairs whose images are both outside `rejected`.
pub fn fnmr_at(pairs: &ComparisonSet, threshold: f64, rejected: &HashSet<&str>) -> Result<FnmrPoint> {
    let mut surviving = 0usize;
    let mut misses = 0usize;
    for p in pairs.genuine() {
        if rejected.contains(p.id_a.as_str()) || rejected.contains(p.id_b.as_str()) {
            continue;
        }
        surviving += 1;
        if p.score < threshold {
            misses += 1;
        }
    }
    if surviving == 0 {
        return Err(Error::UndefinedCurvePoint {
            ratio: f64::NAN,
        });
    }
    Ok(FnmrPoint {
        fnmr: misses as f64 / surviving as f64,
        surviving_genuine: surviving,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErcPoint {
    pub reject_ratio: f64,
    pub fnmr: f64,
    pub surviving_genuine: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErcCurve {
    pub method: String,
    pub target_fmr: f64,
    pub threshold: f64,
    pub points: Vec<ErcPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErcSidecar {
    pub method: String,
    pub target_fmr: f64,
    pub threshold: f64,
    pub achieved_fmr: f64,
    pub threshold_policy: String,
    pub rejection_unit: String,
    pub images: usize,
    pub genuine_pairs: usize,
    pub impostor_pairs: usize,
}

impl ErcCurve {
    /// `reject_ratio,fnmr,surviving_genuine` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("reject_ratio,fnmr,surviving_genuine\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.reject_ratio, p.fnmr, p.surviving_genuine));
        }
        out
    }
}

/// Distinct image ids referenced by the comparison set.
pub fn paired_images(pairs: &ComparisonSet) -> BTreeSet<&str> {
    pairs
        .pairs
        .iter()
        .flat_map(|p| [p.id_a.as_str(), p.id_b.as_str()])
        .collect()
}

pub fn erc_sidecar(curve: &ErcCurve, pairs: &ComparisonSet) -> ErcSidecar {
    let impostors = pairs.impostor_scores();
    ErcSidecar {
        method: curve.method.clone(),
        target_fmr: curve.target_fmr,
        threshold: curve.threshold,
        achieved_fmr: achieved_fmr(&impostors, curve.threshold),
        threshold_policy: THRESHOLD_POLICY.into(),
        rejection_unit: REJECTION_UNIT.into(),
        images: paired_images(pairs).len(),
        genuine_pairs: pairs.genuine().count(),
        impostor_pairs: impostors.len(),
    }
}

fn validate_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.first() != Some(&0.0) {
        return Err(Error::invalid("reject ratios must start at 0.0"));
    }
    for w in ratios.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::invalid(format!("reject ratios must ascend strictly, got {} then {}", w[0], w[1])));
        }
    }
    if let Some(bad) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::invalid(format!("reject ratio {bad} outside [0, 1)")));
    }
    Ok(())
}

/// FNMR at a fixed-FMR threshold as the lowest-quality images are discarded.
pub fn erc_curve(pairs: &ComparisonSet, quality: &QualityTable, target_fmr: f64, ratios: &[f64]) -> Result<ErcCurve> {
    validate_ratios(ratios)?;
    if pairs.genuine().next().is_none() {
        return Err(Error::invalid("ERC needs at least one genuine pair"));
    }
    let impostors = pairs.impostor_scores();
    if impostors.is_empty() {
        return Err(Error::invalid("ERC needs at least one impostor pair"));
    }
    let images = paired_images(pairs);
    if let Some(missing) = images.iter().find(|id| quality.get(id).is_none()) {
        return Err(Error::MissingQuality(missing.to_string()));
    }
    let threshold = threshold_at_fmr(&impostors, target_fmr)?;

    let evaluated = quality.restricted(|id| images.contains(id));
    let worst_first: Vec<&str> = rank_ascending(&evaluated).into_iter().map(|(id, _)| id).collect();

    let mut points = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let k = quantile_count(ratio, worst_first.len());
        let rejected: HashSet<&str> = worst_first[..k].iter().copied().collect();
        let p = fnmr_at(pairs, threshold, &rejected).map_err(|e| match e {
            Error::UndefinedCurvePoint { .. } => Error::UndefinedCurvePoint { ratio },
            other => other,
        })?;
        points.push(ErcPoint {
            reject_ratio: ratio,
            fnmr: p.fnmr,
            surviving_genuine: p.surviving_genuine,
        });
    }
    Ok(ErcCurve {
        method: quality.method.clone(),
        target_fmr,
        threshold,
        points,
    })
}
