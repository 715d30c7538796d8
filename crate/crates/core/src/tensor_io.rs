//! Readers and writers for every on-disk artifact the pipeline consumes.
//!
//! AMVT tensor layout (little-endian, no padding, no footer):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "AMVT" (41 4D 56 54)
//! 4       1           version = 1
//! 5       1           dtype = 1 (float32)
//! 6       1           rank
//! 7       8 * rank    dims, u64 each
//! ...     4 * prod    payload, f32 row-major
//! ```
//!
//! Quality CSV: `image_id,score`. Pairs CSV: `id_a,id_b,score,label`.
//! Both require the header line, use `,` separators and `.` decimals, and do
//! not support quoting. Scores are "higher is better quality" and "higher is
//! more similar" respectively.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"AMVT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const TENSOR_EXTENSION: &str = "amvt";

const FIXED_HEADER_LEN: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("truncated")]
    Truncated,
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("invalid dims {0:?}")]
    InvalidDims(Vec<u64>),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel = checked_numel(&dims).ok_or_else(|| {
            Error::invalid(format!("dims {dims:?} must be non-empty and positive"))
        })?;
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                expected: dims,
                found: vec![data.len()],
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let numel = checked_numel(&dims)
            .ok_or_else(|| Error::invalid(format!("dims {dims:?} must be non-empty and positive")))?;
        Ok(Self {
            dims,
            data: vec![0.0; numel],
        })
    }

    pub fn from_2d(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![height, width], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(height, width)` for a rank-2 tensor.
    pub fn shape_2d(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::invalid(format!(
                "expected a rank-2 tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

fn checked_numel(dims: &[usize]) -> Option<usize> {
    if dims.is_empty() || dims.contains(&0) {
        return None;
    }
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Serializes a tensor into AMVT bytes.
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIXED_HEADER_LEN + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.push(t.rank() as u8);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a complete AMVT buffer. Trailing bytes are rejected.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let mut cursor = bytes;
    let t = read_tensor_body(&mut cursor, false)?.ok_or(FormatError::Truncated)?;
    if !cursor.is_empty() {
        return Err(FormatError::TrailingBytes);
    }
    Ok(t)
}

/// Reads one AMVT tensor from a stream. Returns `Ok(None)` on a clean end of
/// stream before the first byte, which is how the evaluator loop terminates.
pub fn read_tensor_from<R: Read>(reader: &mut R) -> Result<Option<Tensor>, FormatError> {
    read_tensor_body(reader, true)
}

fn read_tensor_body<R: Read>(reader: &mut R, allow_eof: bool) -> Result<Option<Tensor>, FormatError> {
    let mut header = [0u8; FIXED_HEADER_LEN];
    let got = read_fully(reader, &mut header)?;
    if got == 0 && allow_eof {
        return Ok(None);
    }
    if got >= 4 && header[..4] != MAGIC || got < 4 && header[..got] != MAGIC[..got] {
        return Err(FormatError::BadMagic);
    }
    if got < FIXED_HEADER_LEN {
        return Err(FormatError::Truncated);
    }
    if header[4] != VERSION {
        return Err(FormatError::UnsupportedVersion(header[4]));
    }
    if header[5] != DTYPE_F32 {
        return Err(FormatError::UnsupportedDtype(header[5]));
    }
    let rank = header[6] as usize;

    let mut raw_dims = Vec::with_capacity(rank);
    let mut buf8 = [0u8; 8];
    for _ in 0..rank {
        if read_fully(reader, &mut buf8)? < 8 {
            return Err(FormatError::Truncated);
        }
        raw_dims.push(u64::from_le_bytes(buf8));
    }
    let dims: Option<Vec<usize>> = raw_dims.iter().map(|&d| usize::try_from(d).ok()).collect();
    let dims = dims.ok_or_else(|| FormatError::InvalidDims(raw_dims.clone()))?;
    let numel = checked_numel(&dims)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| FormatError::InvalidDims(raw_dims.clone()))?;

    // Read in bounded chunks so a corrupt header cannot force a huge allocation.
    let mut data = Vec::with_capacity(numel.min(1 << 20));
    let mut chunk = vec![0u8; 4 * numel.min(1 << 16)];
    let mut remaining = numel;
    while remaining > 0 {
        let take = remaining.min(chunk.len() / 4);
        let buf = &mut chunk[..4 * take];
        if read_fully(reader, buf)? < buf.len() {
            return Err(FormatError::Truncated);
        }
        for c in buf.chunks_exact(4) {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(FormatError::NonFinite(data.len()));
            }
            data.push(v);
        }
        remaining -= take;
    }
    Ok(Some(Tensor { dims, data }))
}

/// Like `read_exact`, but reports how many bytes were read before EOF.
fn read_fully<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<usize, FormatError> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => return Err(FormatError::Truncated),
        }
    }
    Ok(filled)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if let Some(i) = t.first_non_finite() {
        return Err(Error::Format {
            path: path.display().to_string(),
            source: FormatError::NonFinite(i),
        });
    }
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|source| Error::Format {
        path: path.display().to_string(),
        source,
    })
}

/// Image ids may only contain `[A-Za-z0-9_./-]`.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'/' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidId(id.to_string()))
    }
}

/// N activation maps of identical H×W shape, keyed by unique image id.
#[derive(Debug, Clone)]
pub struct ActivationStack {
    height: usize,
    width: usize,
    ids: Vec<String>,
    maps: Vec<Tensor>,
}

impl ActivationStack {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let Some((_, first)) = entries.first() else {
            return Err(Error::Empty("activation stack"));
        };
        let (height, width) = first.shape_2d()?;
        let mut seen = HashSet::with_capacity(entries.len());
        let mut ids = Vec::with_capacity(entries.len());
        let mut maps = Vec::with_capacity(entries.len());
        for (id, map) in entries {
            if map.dims() != [height, width] {
                return Err(Error::ShapeMismatch {
                    expected: vec![height, width],
                    found: map.dims().to_vec(),
                });
            }
            if map.first_non_finite().is_some() {
                return Err(Error::invalid(format!("activation map {id:?} has non-finite values")));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId {
                    what: "activation",
                    id,
                });
            }
            ids.push(id);
            maps.push(map);
        }
        Ok(Self {
            height,
            width,
            ids,
            maps,
        })
    }

    /// Convenience constructor with generated ids `0..N`.
    pub fn from_maps(maps: Vec<Tensor>) -> Result<Self> {
        Self::new(maps.into_iter().enumerate().map(|(i, m)| (i.to_string(), m)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn maps(&self) -> &[Tensor] {
        &self.maps
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.ids.iter().map(String::as_str).zip(self.maps.iter())
    }
}

/// Per-image scalar quality scores for one quality estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityTable {
    pub method: String,
    rows: BTreeMap<String, f64>,
}

impl QualityTable {
    pub fn new(method: impl Into<String>, rows: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (id, score) in rows {
            validate_id(&id)?;
            if !score.is_finite() {
                return Err(Error::invalid(format!("non-finite quality score for {id:?}")));
            }
            if map.insert(id.clone(), score).is_some() {
                return Err(Error::DuplicateId { what: "quality", id });
            }
        }
        Ok(Self {
            method: method.into(),
            rows: map,
        })
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.rows.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.rows.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Keeps only ids accepted by `keep`.
    pub fn restricted(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        Self {
            method: self.method.clone(),
            rows: self
                .rows
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, &v)| (k.clone(), v))
                .collect(),
        }
    }

    /// Applies `f` to every score. Used to check rank invariance.
    pub fn map_scores(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            method: self.method.clone(),
            rows: self.rows.iter().map(|(k, &v)| (k.clone(), f(v))).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Impostor,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Impostor => "impostor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id_a: String,
    pub id_b: String,
    pub score: f64,
    pub label: Label,
}

/// Labeled similarity scores, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonSet {
    pub pairs: Vec<Pair>,
}

impl ComparisonSet {
    pub fn new(pairs: Vec<Pair>) -> Self {
        Self { pairs }
    }

    pub fn genuine(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(|p| p.label == Label::Genuine)
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .filter(|p| p.label == Label::Impostor)
            .map(|p| p.score)
            .collect()
    }
}

fn read_text(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(text)
}

/// Yields `(line_number, fields)` for the body of a header-checked CSV.
fn csv_body<'a>(
    path: &'a Path,
    text: &'a str,
    header: &str,
) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)> + 'a> {
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::EmptyFile(path.to_path_buf()))?;
    if first.trim() != header {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {header:?}, found {first:?}"),
        });
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect())))
}

fn parse_score(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Csv {
        path: path.to_path_buf(),
        line,
        message: format!("unparsable score {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line,
            message: format!("non-finite score {field:?}"),
        });
    }
    Ok(v)
}

fn csv_id(path: &Path, line: usize, field: &str) -> Result<String> {
    validate_id(field).map_err(|_| Error::Csv {
        path: path.to_path_buf(),
        line,
        message: format!("invalid id {field:?}"),
    })?;
    Ok(field.to_string())
}

fn field_count_error(path: &Path, line: usize, expected: usize, found: usize) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        message: format!("expected {expected} fields, found {found}"),
    }
}

pub fn read_quality_csv(path: impl AsRef<Path>, method: &str) -> Result<QualityTable> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut rows = BTreeMap::new();
    for (line, fields) in csv_body(path, &text, "image_id,score")? {
        let [id, score] = fields[..] else {
            return Err(field_count_error(path, line, 2, fields.len()));
        };
        let id = csv_id(path, line, id)?;
        let score = parse_score(path, line, score)?;
        if rows.insert(id.clone(), score).is_some() {
            return Err(Error::DuplicateId { what: "quality", id });
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(QualityTable {
        method: method.to_string(),
        rows,
    })
}

pub fn write_quality_csv(path: impl AsRef<Path>, table: &QualityTable) -> Result<()> {
    let mut out = String::from("image_id,score\n");
    for (id, score) in table.iter() {
        out.push_str(&format!("{id},{score}\n"));
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pairs_csv(path: impl AsRef<Path>) -> Result<ComparisonSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::NoPairs(path.to_path_buf()));
    }
    let mut pairs = Vec::new();
    for (line, fields) in csv_body(path, &text, "id_a,id_b,score,label")? {
        let [a, b, score, label] = fields[..] else {
            return Err(field_count_error(path, line, 4, fields.len()));
        };
        let label = match label {
            "genuine" => Label::Genuine,
            "impostor" => Label::Impostor,
            other => {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line,
                    message: format!("unknown label {other:?}"),
                })
            }
        };
        pairs.push(Pair {
            id_a: csv_id(path, line, a)?,
            id_b: csv_id(path, line, b)?,
            score: parse_score(path, line, score)?,
            label,
        });
    }
    if pairs.is_empty() {
        return Err(Error::NoPairs(path.to_path_buf()));
    }
    Ok(ComparisonSet { pairs })
}

pub fn write_pairs_csv(path: impl AsRef<Path>, set: &ComparisonSet) -> Result<()> {
    let mut out = String::from("id_a,id_b,score,label\n");
    for p in &set.pairs {
        out.push_str(&format!("{},{},{},{}\n", p.id_a, p.id_b, p.score, p.label.as_str()));
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestImage {
    pub id: String,
    pub path: PathBuf,
    pub subject: String,
}

/// Dataset descriptor. Relative paths are resolved against the manifest's
/// own directory by [`read_manifest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ManifestImage>,
    pub activation_dir: PathBuf,
    pub quality_files: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_file: Option<PathBuf>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for img in &self.images {
            validate_id(&img.id).map_err(|e| Error::Manifest(e.to_string()))?;
            if !seen.insert(img.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate image id {:?}", img.id)));
            }
            if img.path.as_os_str().is_empty() {
                return Err(Error::Manifest(format!("image {:?} has an empty path", img.id)));
            }
        }
        if self.activation_dir.as_os_str().is_empty() {
            return Err(Error::Manifest("empty activation_dir".into()));
        }
        for (method, path) in &self.quality_files {
            validate_id(method).map_err(|_| Error::Manifest(format!("invalid method name {method:?}")))?;
            if method.contains('/') {
                return Err(Error::Manifest(format!("method name {method:?} may not contain '/'")));
            }
            if path.as_os_str().is_empty() {
                return Err(Error::Manifest(format!("quality file for {method:?} is empty")));
            }
        }
        if matches!(&self.pairs_file, Some(p) if p.as_os_str().is_empty()) {
            return Err(Error::Manifest("empty pairs_file".into()));
        }
        Ok(())
    }

    /// Location of the activation tensor for `id`.
    pub fn activation_path(&self, id: &str) -> PathBuf {
        self.activation_dir.join(format!("{id}.{TENSOR_EXTENSION}"))
    }

    pub fn image(&self, id: &str) -> Option<&ManifestImage> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.image(id).is_some()
    }

    fn resolve_against(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.activation_dir);
        for img in &mut self.images {
            join(&mut img.path);
        }
        for p in self.quality_files.values_mut() {
            join(p);
        }
        if let Some(p) = &mut self.pairs_file {
            join(p);
        }
    }
}

/// Parses and validates a manifest. Referenced files are not opened.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    if let Some(base) = path.parent() {
        manifest.resolve_against(base);
    }
    Ok(manifest)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads `<activation_dir>/<id>.amvt` for each id, in the given order.
pub fn load_stack<'a>(manifest: &Manifest, ids: impl IntoIterator<Item = &'a str>) -> Result<ActivationStack> {
    let entries = ids
        .into_iter()
        .map(|id| Ok((id.to_string(), read_tensor(manifest.activation_path(id))?)))
        .collect::<Result<Vec<_>>>()?;
    ActivationStack::new(entries)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
