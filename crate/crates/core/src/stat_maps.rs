//! Per-pixel statistics over activation stacks.
//!
//! For a stack of N maps `a^k` the module computes, per pixel `(i, j)`:
//!
//! - MAM: mean of `a^k_ij`
//! - MDAM: median of `a^k_ij` (mean of the two middle values for even N)
//! - AM-V: `sqrt(1/N * Σ (a^k_ij - MAM_ij)^2)`, population deviation
//! - AM-MV: `sqrt(1/N * Σ (a^k_ij - MDAM_ij)^2)`
//!
//! plus the H-vs-L differentials (D-AM-V, D-AM-MV), the cross-method
//! differential X-D-AM-V and the single-image deviation AD-MAM.
//!
//! Each pixel's N values are sorted before any reduction, so every output is
//! independent of stack order and bit-identical between runs and thread
//! counts. Accumulation is in `f64`; outputs are stored as `f32`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::SetKind;
use crate::tensor_io::{self, ActivationStack, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatKind {
    #[serde(rename = "MAM")]
    Mam,
    #[serde(rename = "MDAM")]
    Mdam,
    #[serde(rename = "AM-V")]
    AmV,
    #[serde(rename = "AM-MV")]
    AmMv,
    #[serde(rename = "D-AM-V")]
    DAmV,
    #[serde(rename = "D-AM-MV")]
    DAmMv,
    #[serde(rename = "X-D-AM-V")]
    XDAmV,
    #[serde(rename = "AD-MAM")]
    AdMam,
}

impl StatKind {
    pub fn name(self) -> &'static str {
        match self {
            StatKind::Mam => "MAM",
            StatKind::Mdam => "MDAM",
            StatKind::AmV => "AM-V",
            StatKind::AmMv => "AM-MV",
            StatKind::DAmV => "D-AM-V",
            StatKind::DAmMv => "D-AM-MV",
            StatKind::XDAmV => "X-D-AM-V",
            StatKind::AdMam => "AD-MAM",
        }
    }

    /// Kinds whose values are guaranteed to be `>= 0`.
    pub fn is_nonnegative(self) -> bool {
        !matches!(self, StatKind::Mam | StatKind::Mdam | StatKind::XDAmV)
    }
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which image set(s) a map was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetLabel {
    #[serde(rename = "H")]
    High,
    #[serde(rename = "L")]
    Low,
    #[serde(rename = "H-vs-L")]
    HighVsLow,
}

impl SetLabel {
    pub fn tag(self) -> &'static str {
        match self {
            SetLabel::High => "H",
            SetLabel::Low => "L",
            SetLabel::HighVsLow => "HL",
        }
    }
}

impl From<SetKind> for SetLabel {
    fn from(k: SetKind) -> Self {
        match k {
            SetKind::High => SetLabel::High,
            SetKind::Low => SetLabel::Low,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatMeta {
    pub methods: Vec<String>,
    pub set: Option<SetLabel>,
    /// Number of activation maps that contributed.
    pub n: usize,
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

/// A single H×W map tagged with what it is and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct StatMap {
    pub kind: StatKind,
    height: usize,
    width: usize,
    values: Vec<f32>,
    pub meta: StatMeta,
}

impl StatMap {
    pub fn new(kind: StatKind, height: usize, width: usize, values: Vec<f32>, meta: StatMeta) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width],
                found: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{kind} map has non-finite values")));
        }
        Ok(Self {
            kind,
            height,
            width,
            values,
            meta,
        })
    }

    pub fn from_tensor(kind: StatKind, t: &Tensor, meta: StatMeta) -> Result<Self> {
        let (h, w) = t.shape_2d()?;
        Self::new(kind, h, w, t.data().to_vec(), meta)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.height, self.width]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_2d(self.height, self.width, self.values.clone()).expect("shape checked at construction")
    }

    pub fn with_meta(mut self, methods: &[&str], set: SetLabel, fraction: Option<f64>) -> Self {
        self.meta.methods = methods.iter().map(|m| m.to_string()).collect();
        self.meta.set = Some(set);
        self.meta.fraction = fraction;
        self
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// The four single-set statistics, computed in one pass.
#[derive(Debug, Clone)]
pub struct StackStats {
    pub mam: StatMap,
    pub mdam: StatMap,
    pub am_v: StatMap,
    pub am_mv: StatMap,
}

impl StackStats {
    pub fn into_vec(self) -> Vec<StatMap> {
        vec![self.mam, self.mdam, self.am_v, self.am_mv]
    }
}

/// `[mean, median, std about mean, rms about median]` of the values, which
/// are sorted in place.
fn pixel_stats(values: &mut [f64]) -> [f64; 4] {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) * 0.5
    };
    let mut ss_mean = 0.0;
    let mut ss_median = 0.0;
    for &v in values.iter() {
        ss_mean += (v - mean) * (v - mean);
        ss_median += (v - median) * (v - median);
    }
    [mean, median, (ss_mean / n as f64).sqrt(), (ss_median / n as f64).sqrt()]
}

fn stats_row(stack: &ActivationStack, row: usize) -> Vec<[f32; 4]> {
    let w = stack.width();
    let mut buf = vec![0.0f64; stack.len()];
    (0..w)
        .map(|col| {
            let idx = row * w + col;
            for (slot, map) in buf.iter_mut().zip(stack.maps()) {
                *slot = map.data()[idx] as f64;
            }
            pixel_stats(&mut buf).map(|v| v as f32)
        })
        .collect()
}

fn all_rows(stack: &ActivationStack) -> Vec<Vec<[f32; 4]>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..stack.height()).into_par_iter().map(|r| stats_row(stack, r)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..stack.height()).map(|r| stats_row(stack, r)).collect()
    }
}

/// MAM, MDAM, AM-V and AM-MV of a stack.
pub fn stack_statistics(stack: &ActivationStack) -> Result<StackStats> {
    if stack.is_empty() {
        return Err(Error::Empty("activation stack"));
    }
    let (h, w) = (stack.height(), stack.width());
    let mut planes: [Vec<f32>; 4] = std::array::from_fn(|_| Vec::with_capacity(h * w));
    for row in all_rows(stack) {
        for px in row {
            for (plane, v) in planes.iter_mut().zip(px) {
                plane.push(v);
            }
        }
    }
    let meta = StatMeta {
        n: stack.len(),
        ..StatMeta::default()
    };
    let [mam, mdam, am_v, am_mv] = planes;
    let make = |kind, values| StatMap::new(kind, h, w, values, meta.clone());
    Ok(StackStats {
        mam: make(StatKind::Mam, mam)?,
        mdam: make(StatKind::Mdam, mdam)?,
        am_v: make(StatKind::AmV, am_v)?,
        am_mv: make(StatKind::AmMv, am_mv)?,
    })
}

/// Mean activation map.
pub fn mam(stack: &ActivationStack) -> Result<StatMap> {
    Ok(stack_statistics(stack)?.mam)
}

/// Population standard deviation about the MAM.
pub fn am_v(stack: &ActivationStack) -> Result<StatMap> {
    Ok(stack_statistics(stack)?.am_v)
}

/// Median activation map.
pub fn mdam(stack: &ActivationStack) -> Result<StatMap> {
    Ok(stack_statistics(stack)?.mdam)
}

/// Root-mean-square deviation about the MDAM.
pub fn am_mv(stack: &ActivationStack) -> Result<StatMap> {
    Ok(stack_statistics(stack)?.am_mv)
}

fn check_pair(a: &StatMap, b: &StatMap, want: StatKind) -> Result<()> {
    if a.kind != want || b.kind != want {
        return Err(Error::KindMismatch(format!(
            "expected two {want} maps, got {} and {}",
            a.kind, b.kind
        )));
    }
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            found: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map(a: &StatMap, b: &StatMap, f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    a.values.iter().zip(&b.values).map(|(&x, &y)| f(x, y)).collect()
}

fn merged_methods(a: &StatMap, b: &StatMap) -> Vec<String> {
    let mut out = a.meta.methods.clone();
    for m in &b.meta.methods {
        if !out.contains(m) {
            out.push(m.clone());
        }
    }
    out
}

fn high_low_diff(h: &StatMap, l: &StatMap, input: StatKind, output: StatKind) -> Result<StatMap> {
    check_pair(h, l, input)?;
    let meta = StatMeta {
        methods: merged_methods(h, l),
        set: Some(SetLabel::HighVsLow),
        n: h.meta.n + l.meta.n,
        fraction: h.meta.fraction.or(l.meta.fraction),
        ..StatMeta::default()
    };
    StatMap::new(output, h.height, h.width, zip_map(h, l, |x, y| (x - y).abs()), meta)
}

/// `|AM-V_H - AM-V_L|`, symmetric in its arguments.
pub fn d_am_v(h: &StatMap, l: &StatMap) -> Result<StatMap> {
    high_low_diff(h, l, StatKind::AmV, StatKind::DAmV)
}

/// `|AM-MV_H - AM-MV_L|`, symmetric in its arguments.
pub fn d_am_mv(h: &StatMap, l: &StatMap) -> Result<StatMap> {
    high_low_diff(h, l, StatKind::AmMv, StatKind::DAmMv)
}

/// AM-V difference between two quality methods over the same set kind:
/// `m1 - m2` when `signed`, else `|m1 - m2|`.
pub fn cross_method_d_am_v(m1: &StatMap, m2: &StatMap, signed: bool) -> Result<StatMap> {
    check_pair(m1, m2, StatKind::AmV)?;
    let set = match (m1.meta.set, m2.meta.set) {
        (Some(a), Some(b)) if a == b && a != SetLabel::HighVsLow => a,
        (a, b) => {
            return Err(Error::KindMismatch(format!(
                "cross-method differential needs two maps from the same H or L set, got {a:?} and {b:?}"
            )))
        }
    };
    let values = if signed {
        zip_map(m1, m2, |x, y| x - y)
    } else {
        zip_map(m1, m2, |x, y| (x - y).abs())
    };
    let meta = StatMeta {
        methods: merged_methods(m1, m2),
        set: Some(set),
        n: m1.meta.n + m2.meta.n,
        fraction: m1.meta.fraction.or(m2.meta.fraction),
        signed: Some(signed),
        image_id: None,
    };
    StatMap::new(StatKind::XDAmV, m1.height, m1.width, values, meta)
}

/// Absolute per-pixel deviation of one image's map from a reference MAM.
pub fn ad_mam(image_map: &Tensor, reference: &StatMap) -> Result<StatMap> {
    if reference.kind != StatKind::Mam {
        return Err(Error::KindMismatch(format!("AD-MAM reference must be a MAM, got {}", reference.kind)));
    }
    let (h, w) = image_map.shape_2d()?;
    if [h, w] != reference.shape() {
        return Err(Error::ShapeMismatch {
            expected: reference.shape().to_vec(),
            found: vec![h, w],
        });
    }
    let values = image_map
        .data()
        .iter()
        .zip(&reference.values)
        .map(|(&x, &m)| (x - m).abs())
        .collect();
    let meta = StatMeta {
        methods: reference.meta.methods.clone(),
        set: reference.meta.set,
        n: reference.meta.n,
        fraction: reference.meta.fraction,
        ..StatMeta::default()
    };
    StatMap::new(StatKind::AdMam, h, w, values, meta)
}

/// JSON sidecar written next to each persisted map as `<name>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSidecar {
    pub kind: StatKind,
    pub tensor: String,
    #[serde(flatten)]
    pub meta: StatMeta,
}

/// Writes `<dir>/<name>.amvt` and `<dir>/<name>.meta.json`.
pub fn write_stat_map(dir: &Path, name: &str, map: &StatMap) -> Result<()> {
    let tensor_file = format!("{name}.{}", tensor_io::TENSOR_EXTENSION);
    tensor_io::write_tensor(dir.join(&tensor_file), &map.to_tensor())?;
    let sidecar = StatSidecar {
        kind: map.kind,
        tensor: tensor_file,
        meta: map.meta.clone(),
    };
    let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    json.push('\n');
    tensor_io::write_text(&dir.join(format!("{name}.meta.json")), &json)
}

/// Reads a map written by [`write_stat_map`]; `tensor_path` is the `.amvt` file.
pub fn read_stat_map(tensor_path: &Path) -> Result<StatMap> {
    let tensor = tensor_io::read_tensor(tensor_path)?;
    let sidecar_path = tensor_path.with_extension("meta.json");
    let text = std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: StatSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: {e}", sidecar_path.display())))?;
    StatMap::from_tensor(sidecar.kind, &tensor, sidecar.meta)
}
