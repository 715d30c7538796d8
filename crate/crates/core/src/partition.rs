//! High/low quality quantile selection and cross-method overlap.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::QualityTable;

/// Which tail of the quality distribution a set was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SetKind {
    #[serde(rename = "H")]
    High,
    #[serde(rename = "L")]
    Low,
}

impl SetKind {
    pub fn tag(self) -> &'static str {
        match self {
            SetKind::High => "H",
            SetKind::Low => "L",
        }
    }
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSet {
    pub method: String,
    pub kind: SetKind,
    pub fraction: f64,
    pub image_ids: Vec<String>,
}

impl QuantileSet {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }
}

/// `floor(fraction * n)`. The tiny slack absorbs products such as
/// `0.29 * 100 = 28.999999999999996` that are integers in exact arithmetic.
pub fn quantile_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Ids ordered from worst to best quality: ascending score, ties by ascending id.
pub fn rank_ascending(table: &QualityTable) -> Vec<(&str, f64)> {
    let mut rows: Vec<_> = table.iter().collect();
    rows.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    rows
}

fn rank_descending(table: &QualityTable) -> Vec<(&str, f64)> {
    let mut rows: Vec<_> = table.iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    rows
}

/// Picks the `floor(fraction * N)` lowest (`Low`) or highest (`High`) scored
/// images. Score ties are broken by ascending image id in both directions.
pub fn select_quantile(table: &QualityTable, fraction: f64, kind: SetKind) -> Result<QuantileSet> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::invalid(format!("fraction {fraction} must lie in (0, 0.5]")));
    }
    let count = quantile_count(fraction, table.len());
    if count == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {} images selects nothing",
            table.len()
        )));
    }
    let ranked = match kind {
        SetKind::Low => rank_ascending(table),
        SetKind::High => rank_descending(table),
    };
    Ok(QuantileSet {
        method: table.method.clone(),
        kind,
        fraction,
        image_ids: ranked.into_iter().take(count).map(|(id, _)| id.to_string()).collect(),
    })
}

/// `|s1 ∩ s2| / |s1|`.
pub fn overlap_ratio(s1: &QuantileSet, s2: &QuantileSet) -> Result<f64> {
    if s1.kind != s2.kind {
        return Err(Error::KindMismatch(format!(
            "cannot overlap a {} set with a {} set",
            s1.kind, s2.kind
        )));
    }
    if s1.is_empty() {
        return Err(Error::Empty("quantile set"));
    }
    let other: HashSet<&str> = s2.image_ids.iter().map(String::as_str).collect();
    let shared = s1.image_ids.iter().filter(|id| other.contains(id.as_str())).count();
    Ok(shared as f64 / s1.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub methods: Vec<String>,
    pub kind: SetKind,
    /// Row-major, `methods.len()` squared.
    pub values: Vec<f64>,
}

impl OverlapMatrix {
    pub fn size(&self) -> usize {
        self.methods.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size() + col]
    }

    /// Header `method,<m1>,...,<mM>`, then one `<mi>,v1,...,vM` row per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for m in &self.methods {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for (i, m) in self.methods.iter().enumerate() {
            out.push_str(m);
            for j in 0..self.size() {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise overlap ratios. All sets must share kind and size.
pub fn overlap_matrix(sets: &[QuantileSet]) -> Result<OverlapMatrix> {
    if sets.len() < 2 {
        return Err(Error::invalid("an overlap matrix needs at least two sets"));
    }
    let kind = sets[0].kind;
    let size = sets[0].len();
    for s in sets {
        if s.kind != kind {
            return Err(Error::KindMismatch(format!("mixed {kind} and {} sets", s.kind)));
        }
        if s.len() != size {
            return Err(Error::invalid(format!(
                "set sizes differ: {} has {}, {} has {size}",
                s.method,
                s.len(),
                sets[0].method
            )));
        }
    }
    let m = sets.len();
    let mut values = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            values[i * m + j] = if i == j { 1.0 } else { overlap_ratio(&sets[i], &sets[j])? };
        }
    }
    Ok(OverlapMatrix {
        methods: sets.iter().map(|s| s.method.clone()).collect(),
        kind,
        values,
    })
}

/// Rows of a quantile set as `image_id,score` CSV, in selection order.
pub fn quantile_set_csv(set: &QuantileSet, table: &QualityTable) -> String {
    let mut out = String::from("image_id,score\n");
    for id in &set.image_ids {
        let score = table.get(id).unwrap_or(f64::NAN);
        out.push_str(&format!("{id},{score}\n"));
    }
    out
}
