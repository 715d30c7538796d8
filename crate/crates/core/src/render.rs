//! Heatmaps, overlays, histograms, composite panels and line plots.
//!
//! Everything here is a pure function of its inputs; PNGs are 8-bit RGB,
//! non-interlaced, written with fixed encoder settings so identical inputs
//! give identical files.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::erc::ErcCurve;
use crate::error::{Error, Result};
use crate::partition::OverlapMatrix;
use crate::stat_maps::StatMap;
use crate::tensor_io::{self, Tensor};

pub type Rgb = [u8; 3];

/// Piecewise-linear color ramp over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Colormap {
    pub name: String,
    stops: Vec<(f64, Rgb)>,
}

impl Colormap {
    pub fn new(name: impl Into<String>, stops: Vec<(f64, Rgb)>) -> Result<Self> {
        let ok = stops.len() >= 2
            && stops.first().map(|s| s.0) == Some(0.0)
            && stops.last().map(|s| s.0) == Some(1.0)
            && stops.windows(2).all(|w| w[0].0 < w[1].0);
        if !ok {
            return Err(Error::invalid(
                "colormap stops must strictly increase from 0.0 to 1.0",
            ));
        }
        Ok(Self {
            name: name.into(),
            stops,
        })
    }

    /// Jet-style ramp used for all non-negative maps.
    pub fn jet() -> Self {
        Self::new(
            "jet",
            vec![
                (0.0, [0, 0, 131]),
                (0.125, [0, 60, 170]),
                (0.375, [5, 255, 255]),
                (0.625, [255, 255, 0]),
                (0.875, [250, 0, 0]),
                (1.0, [128, 0, 0]),
            ],
        )
        .expect("valid stops")
    }

    /// Blue-white-red ramp for signed maps.
    pub fn diverging() -> Self {
        Self::new(
            "diverging",
            vec![(0.0, [59, 76, 192]), (0.5, [221, 221, 221]), (1.0, [180, 4, 38])],
        )
        .expect("valid stops")
    }

    pub fn gray() -> Self {
        Self::new("gray", vec![(0.0, [0, 0, 0]), (1.0, [255, 255, 255])]).expect("valid stops")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "jet" => Ok(Self::jet()),
            "diverging" => Ok(Self::diverging()),
            "gray" => Ok(Self::gray()),
            other => Err(Error::invalid(format!(
                "unknown colormap {other:?} (expected jet, diverging or gray)"
            ))),
        }
    }

    pub fn stops(&self) -> &[(f64, Rgb)] {
        &self.stops
    }

    /// Color at `t`, clamped to `[0, 1]`. Channels round half away from zero.
    pub fn color(&self, t: f64) -> Rgb {
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        let i = self
            .stops
            .windows(2)
            .position(|w| t <= w[1].0)
            .unwrap_or(self.stops.len() - 2);
        let (p0, c0) = self.stops[i];
        let (p1, c1) = self.stops[i + 1];
        let f = (t - p0) / (p1 - p0);
        std::array::from_fn(|k| {
            let (a, b) = (c0[k] as f64, c1[k] as f64);
            (a + f * (b - a)).round().clamp(0.0, 255.0) as u8
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Map `[min, max]` of the data onto `[0, 1]`; a constant map goes to 0.
    MinMax,
    /// Map `[lo, hi]` onto `[0, 1]`, clamping outside values.
    Fixed { lo: f64, hi: f64 },
    /// Map `[-m, m]` onto `[0, 1]` with `m = max |v|`; all-zero maps go to 0.5.
    Symmetric,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Normalization::MinMax => f.write_str("minmax"),
            Normalization::Fixed { lo, hi } => write!(f, "fixed:{lo}:{hi}"),
            Normalization::Symmetric => f.write_str("symmetric"),
        }
    }
}

impl FromStr for Normalization {
    type Err = Error;

    /// `minmax`, `symmetric` or `fixed:<lo>:<hi>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(Normalization::MinMax),
            "symmetric" => Ok(Normalization::Symmetric),
            _ => {
                let parts: Vec<&str> = s.split(':').collect();
                match parts[..] {
                    ["fixed", lo, hi] => {
                        let parse = |v: &str| {
                            v.parse::<f64>()
                                .map_err(|_| Error::invalid(format!("bad bound {v:?} in {s:?}")))
                        };
                        Ok(Normalization::Fixed {
                            lo: parse(lo)?,
                            hi: parse(hi)?,
                        })
                    }
                    _ => Err(Error::invalid(format!(
                        "unknown normalization {s:?} (expected minmax, symmetric or fixed:lo:hi)"
                    ))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    pub normalization: Normalization,
    pub alpha: f64,
    pub colormap: Colormap,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            normalization: Normalization::MinMax,
            alpha: 0.5,
            colormap: Colormap::jet(),
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if let Normalization::Fixed { lo, hi } = self.normalization {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!("fixed bounds need lo < hi, got {lo} and {hi}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// The value range that was mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub lo: f64,
    pub hi: f64,
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Self {
            width,
            height,
            data: fill.repeat(width * height),
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width, 3],
                found: vec![data.len()],
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, c: Rgb) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.data[i..i + 3].copy_from_slice(&c);
        }
    }

    fn put_signed(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 {
            self.put(x as usize, y as usize, c);
        }
    }

    pub fn blit(&mut self, src: &RgbImage, x0: usize, y0: usize) {
        for y in 0..src.height {
            for x in 0..src.width {
                self.put(x0 + x, y0 + y, src.get(x, y));
            }
        }
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, c: Rgb) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.put(x, y, c);
            }
        }
    }

    /// RGBA bytes with opaque alpha, as a browser canvas expects.
    pub fn to_rgba(&self) -> Vec<u8> {
        self.data
            .chunks_exact(3)
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect()
    }

    /// H×W×3 tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| v as f32 / 255.0).collect();
        Tensor::new(vec![self.height, self.width, 3], data).expect("dims match")
    }

    /// From an H×W×C tensor (C = 1 or 3) with values in `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w, c) = match t.dims()[..] {
            [h, w] => (h, w, 1),
            [h, w, c] if c == 1 || c == 3 => (h, w, c),
            _ => return Err(Error::invalid(format!("cannot show a tensor of dims {:?} as an image", t.dims()))),
        };
        let to_u8 = |v: f32| (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8;
        let data = t
            .data()
            .chunks_exact(c)
            .flat_map(|px| if c == 1 { [to_u8(px[0]); 3] } else { [to_u8(px[0]), to_u8(px[1]), to_u8(px[2])] })
            .collect();
        Self::from_raw(w, h, data)
    }

    /// Nearest-neighbour integer upscale.
    pub fn scaled(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let mut out = Self::new(self.width * factor, self.height * factor, [0, 0, 0]);
        for y in 0..out.height {
            for x in 0..out.width {
                out.put(x, y, self.get(x / factor, y / factor));
            }
        }
        out
    }
}

/// Computes the bounds `spec` implies for `values` and maps each value to `[0, 1]`.
pub fn normalize_values(values: &[f32], normalization: Normalization) -> (Vec<f64>, NormBounds) {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    let (lo, hi) = match normalization {
        Normalization::MinMax => (min, max),
        Normalization::Fixed { lo, hi } => (lo, hi),
        Normalization::Symmetric => {
            let m = min.abs().max(max.abs());
            (-m, m)
        }
    };
    let degenerate = match normalization {
        Normalization::Symmetric => 0.5,
        _ => 0.0,
    };
    let t = values
        .iter()
        .map(|&v| {
            if hi > lo {
                ((v as f64 - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                degenerate
            }
        })
        .collect();
    (t, NormBounds { lo, hi })
}

/// Colors an H×W grid of values.
pub fn colorize(values: &[f32], height: usize, width: usize, spec: &RenderSpec) -> Result<(RgbImage, NormBounds)> {
    spec.validate()?;
    if values.len() != height * width {
        return Err(Error::ShapeMismatch {
            expected: vec![height, width],
            found: vec![values.len()],
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot color non-finite values"));
    }
    let (t, bounds) = normalize_values(values, spec.normalization);
    let data = t.into_iter().flat_map(|t| spec.colormap.color(t)).collect();
    Ok((RgbImage::from_raw(width, height, data)?, bounds))
}

/// Colors a statistic map according to `spec`.
pub fn apply_colormap(map: &StatMap, spec: &RenderSpec) -> Result<(RgbImage, NormBounds)> {
    colorize(map.values(), map.height(), map.width(), spec)
}

/// `round((1 - alpha) * base + alpha * heat)` per channel.
pub fn overlay(base: &RgbImage, heat: &RgbImage, alpha: f64) -> Result<RgbImage> {
    if (base.width, base.height) != (heat.width, heat.height) {
        return Err(Error::ShapeMismatch {
            expected: vec![base.height, base.width],
            found: vec![heat.height, heat.width],
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let data = base
        .data
        .iter()
        .zip(&heat.data)
        .map(|(&b, &h)| ((1.0 - alpha) * b as f64 + alpha * h as f64).round() as u8)
        .collect();
    RgbImage::from_raw(base.width, base.height, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `bin_lo,bin_hi,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Equal-width bins over `[min, max]`; bins are `[lo, hi)` except the last,
/// which includes `max`. A constant input spans `[v, v + 1]` and lands in
/// the first bin.
pub fn histogram_values(values: &[f32], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if values.is_empty() {
        return Err(Error::Empty("histogram input"));
    }
    let (lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);
    let mut counts = vec![0u64; bins];
    for &v in values {
        let v = v as f64;
        let mut i = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        // Settle on the bin whose edges actually bracket v.
        while i > 0 && v < edges[i] {
            i -= 1;
        }
        while i + 1 < bins && v >= edges[i + 1] {
            i += 1;
        }
        counts[i] += 1;
    }
    Ok(Histogram { edges, counts })
}

pub fn histogram(map: &StatMap, bins: usize) -> Result<Histogram> {
    histogram_values(map.values(), bins)
}

/// Writes an 8-bit RGB, non-interlaced PNG.
pub fn write_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img).map_err(|message| Error::Image {
        path: path.to_path_buf(),
        message,
    })?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_png(img: &RgbImage) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        writer.write_image_data(&img.data).map_err(|e| e.to_string())?;
        writer.finish().map_err(|e| e.to_string())?;
    }
    Ok(out)
}

/// Reads any 8/16-bit gray, gray-alpha, RGB, RGBA or palette PNG as RGB.
/// Alpha is discarded.
pub fn read_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|message| Error::Image {
        path: path.to_path_buf(),
        message,
    })
}

pub fn decode_png(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = &buf[..info.buffer_size()];
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err("palette not expanded".into()),
    };
    let data = px
        .chunks_exact(channels)
        .flat_map(|p| if channels < 3 { [p[0]; 3] } else { [p[0], p[1], p[2]] })
        .collect();
    RgbImage::from_raw(w, h, data).map_err(|e| e.to_string())
}

/// Sidecar `<name>.render.json` describing how a PNG was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSidecar {
    pub image: String,
    pub normalization: String,
    pub bounds: NormBounds,
    pub colormap: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

pub fn write_render_sidecar(dir: &Path, name: &str, sidecar: &RenderSidecar) -> Result<()> {
    let mut json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    json.push('\n');
    tensor_io::write_text(&dir.join(format!("{name}.render.json")), &json)
}

// 5x7 bitmap font; each row is the low 5 bits, MSB on the left.
const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const ADVANCE: usize = GLYPH_W + 1;

fn glyph(c: char) -> [u8; GLYPH_H] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '/' => [0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        ' ' => [0; GLYPH_H],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
    }
}

pub fn text_width(text: &str) -> usize {
    text.chars().count() * ADVANCE
}

/// Draws `text` with its top-left corner at `(x, y)`.
pub fn draw_text(img: &mut RgbImage, x: usize, y: usize, text: &str, color: Rgb) {
    for (i, c) in text.chars().enumerate() {
        let rows = glyph(c);
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - dx)) != 0 {
                    img.put(x + i * ADVANCE + dx, y + dy, color);
                }
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        img.put_signed(x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

pub const PANEL_MARGIN: usize = 4;
pub const PANEL_LINE_HEIGHT: usize = 10;
const WHITE: Rgb = [255, 255, 255];
const BLACK: Rgb = [0, 0, 0];

/// Pixel size of a panel, given tile size, tile grid and label lines.
///
/// Tiles sit on a grid with `PANEL_MARGIN` gaps and border; label lines of
/// `PANEL_LINE_HEIGHT` follow beneath. The width grows if the longest label
/// would not fit.
pub fn panel_size(tile_w: usize, tile_h: usize, cols: usize, rows: usize, labels: &[String]) -> (usize, usize) {
    let grid_w = PANEL_MARGIN + cols * (tile_w + PANEL_MARGIN);
    let text_w = labels.iter().map(|l| text_width(l)).max().unwrap_or(0) + 2 * PANEL_MARGIN;
    let height = PANEL_MARGIN + rows * (tile_h + PANEL_MARGIN) + labels.len() * PANEL_LINE_HEIGHT;
    (grid_w.max(text_w), height)
}

/// Tile grid `(cols, rows)` for a panel: the original, the optional
/// activation overlay, then the maps in two rows (one row for a single map).
pub fn panel_grid(has_activation: bool, maps: usize) -> (usize, usize) {
    let (map_cols, rows) = if maps <= 1 { (maps, 1) } else { (maps.div_ceil(2), 2) };
    (1 + has_activation as usize + map_cols, rows)
}

/// Composite figure: original image, optional activation overlay, one
/// overlay per map (row-major, top-left to bottom-right), score labels below.
///
/// Every map is colored with its own `spec.normalization` and blended onto
/// the image with `spec.alpha`.
pub fn panel(
    image: &RgbImage,
    scores: &[(String, f64)],
    activation: Option<&Tensor>,
    maps: &[StatMap],
    spec: &RenderSpec,
) -> Result<RgbImage> {
    spec.validate()?;
    if maps.is_empty() {
        return Err(Error::invalid("a panel needs at least one map"));
    }
    let (w, h) = (image.width, image.height);
    let check = |dims: [usize; 2]| {
        if dims != [h, w] {
            Err(Error::ShapeMismatch {
                expected: vec![h, w],
                found: dims.to_vec(),
            })
        } else {
            Ok(())
        }
    };
    let mut tiles = vec![image.clone()];
    if let Some(act) = activation {
        let (ah, aw) = act.shape_2d()?;
        check([ah, aw])?;
        let (heat, _) = colorize(act.data(), ah, aw, spec)?;
        tiles.push(overlay(image, &heat, spec.alpha)?);
    }
    let fixed_tiles = tiles.len();
    for m in maps {
        check(m.shape())?;
        let (heat, _) = apply_colormap(m, spec)?;
        tiles.push(overlay(image, &heat, spec.alpha)?);
    }

    let labels: Vec<String> = scores
        .iter()
        .map(|(method, score)| format!("{}: {score:.4}", method.to_ascii_uppercase()))
        .collect();
    let (cols, rows) = panel_grid(activation.is_some(), maps.len());
    let (pw, ph) = panel_size(w, h, cols, rows, &labels);
    let mut out = RgbImage::new(pw, ph, WHITE);
    let origin = |col: usize, row: usize| (PANEL_MARGIN + col * (w + PANEL_MARGIN), PANEL_MARGIN + row * (h + PANEL_MARGIN));
    for (i, tile) in tiles.iter().enumerate() {
        let (col, row) = if i < fixed_tiles {
            (i, 0)
        } else {
            let j = i - fixed_tiles;
            let map_cols = cols - fixed_tiles;
            (fixed_tiles + j % map_cols, j / map_cols)
        };
        let (x, y) = origin(col, row);
        out.blit(tile, x, y);
    }
    let text_top = PANEL_MARGIN + rows * (h + PANEL_MARGIN);
    for (i, label) in labels.iter().enumerate() {
        draw_text(&mut out, PANEL_MARGIN, text_top + i * PANEL_LINE_HEIGHT, label, BLACK);
    }
    Ok(out)
}

const PLOT_W: usize = 480;
const PLOT_H: usize = 360;
const PLOT_LEFT: usize = 56;
const PLOT_RIGHT: usize = 16;
const PLOT_TOP: usize = 16;
const PLOT_BOTTOM: usize = 40;

/// Distinct line colors for up to eight series; cycles beyond.
pub const PALETTE: [Rgb; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

/// FNMR-vs-reject-ratio line plot of one or more curves.
pub fn plot_erc(curves: &[ErcCurve]) -> Result<RgbImage> {
    if curves.is_empty() || curves.iter().any(|c| c.points.is_empty()) {
        return Err(Error::Empty("curve list"));
    }
    let x_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.reject_ratio))
        .fold(0.0, f64::max)
        .max(0.01);
    let y_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.fnmr))
        .fold(0.0, f64::max)
        .max(1e-3)
        * 1.05;
    let mut img = RgbImage::new(PLOT_W, PLOT_H, WHITE);
    let (x0, y0) = (PLOT_LEFT as i64, (PLOT_H - PLOT_BOTTOM) as i64);
    let (x1, y1) = ((PLOT_W - PLOT_RIGHT) as i64, PLOT_TOP as i64);
    let to_px = |rx: f64, fy: f64| {
        let px = x0 as f64 + rx / x_max * (x1 - x0) as f64;
        let py = y0 as f64 - fy / y_max * (y0 - y1) as f64;
        (px.round() as i64, py.round() as i64)
    };
    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<_> = curve.points.iter().map(|p| to_px(p.reject_ratio, p.fnmr)).collect();
        for w in pts.windows(2) {
            draw_line(&mut img, w[0], w[1], color);
        }
        for &(px, py) in &pts {
            for d in -1..=1 {
                img.put_signed(px + d, py, color);
                img.put_signed(px, py + d, color);
            }
        }
        let ly = PLOT_TOP + 6 + i * PANEL_LINE_HEIGHT;
        let lx = PLOT_W - PLOT_RIGHT - 8 - text_width(&curve.method) - 14;
        img.fill_rect(lx, ly + 2, 10, 3, color);
        draw_text(&mut img, lx + 14, ly, &curve.method, BLACK);
    }
    draw_line(&mut img, (x0, y0), (x1, y0), BLACK);
    draw_line(&mut img, (x0, y0), (x0, y1), BLACK);
    for k in 0..=4 {
        let fx = x_max * k as f64 / 4.0;
        let (px, _) = to_px(fx, 0.0);
        draw_line(&mut img, (px, y0), (px, y0 + 3), BLACK);
        let label = format!("{fx:.2}");
        draw_text(&mut img, (px as usize).saturating_sub(text_width(&label) / 2), (y0 + 6) as usize, &label, BLACK);
        let fy = y_max * k as f64 / 4.0;
        let (_, py) = to_px(0.0, fy);
        draw_line(&mut img, (x0 - 3, py), (x0, py), BLACK);
        let label = format!("{fy:.3}");
        draw_text(&mut img, PLOT_LEFT.saturating_sub(text_width(&label) + 5), (py as usize).saturating_sub(3), &label, BLACK);
    }
    draw_text(&mut img, PLOT_LEFT + 100, PLOT_H - 14, "REJECT RATIO", BLACK);
    draw_text(&mut img, 4, 4, "FNMR", BLACK);
    Ok(img)
}

const CELL: usize = 48;

/// Overlap matrix as a colored grid with per-cell values and a legend.
pub fn plot_overlap(matrix: &OverlapMatrix) -> Result<RgbImage> {
    let m = matrix.size();
    let legend: Vec<String> = matrix
        .methods
        .iter()
        .enumerate()
        .map(|(i, name)| format!("{i} {name}"))
        .collect();
    let header = format!("{} SET OVERLAP", matrix.kind);
    let grid_top = PANEL_MARGIN + PANEL_LINE_HEIGHT;
    let label_w = 10;
    let grid_w = PANEL_MARGIN + label_w + m * CELL + PANEL_MARGIN;
    let text_w = legend.iter().chain([&header]).map(|l| text_width(l)).max().unwrap_or(0) + 2 * PANEL_MARGIN;
    let width = grid_w.max(text_w);
    let height = grid_top + label_w + m * CELL + PANEL_MARGIN + legend.len() * PANEL_LINE_HEIGHT;
    let mut img = RgbImage::new(width, height, WHITE);
    draw_text(&mut img, PANEL_MARGIN, PANEL_MARGIN, &header, BLACK);
    let cmap = Colormap::jet();
    let gx = PANEL_MARGIN + label_w;
    let gy = grid_top + label_w;
    for i in 0..m {
        draw_text(&mut img, PANEL_MARGIN, gy + i * CELL + CELL / 2 - 3, &i.to_string(), BLACK);
        draw_text(&mut img, gx + i * CELL + CELL / 2 - 2, grid_top, &i.to_string(), BLACK);
        for j in 0..m {
            let v = matrix.get(i, j);
            let c = cmap.color(v);
            img.fill_rect(gx + j * CELL, gy + i * CELL, CELL - 1, CELL - 1, c);
            let luminance = 0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64;
            let ink = if luminance > 128.0 { BLACK } else { WHITE };
            let label = format!("{v:.2}");
            draw_text(&mut img, gx + j * CELL + (CELL - text_width(&label)) / 2, gy + i * CELL + CELL / 2 - 3, &label, ink);
        }
    }
    let legend_top = gy + m * CELL + PANEL_MARGIN;
    for (i, l) in legend.iter().enumerate() {
        draw_text(&mut img, PANEL_MARGIN, legend_top + i * PANEL_LINE_HEIGHT, l, BLACK);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stat_maps::{StatKind, StatMeta};

    fn map(h: usize, w: usize, v: Vec<f32>) -> StatMap {
        StatMap::new(StatKind::AmV, h, w, v, StatMeta::default()).unwrap()
    }

    fn spec(cmap: Colormap) -> RenderSpec {
        RenderSpec {
            colormap: cmap,
            ..RenderSpec::default()
        }
    }

    #[test]
    fn colormap_validation() {
        assert!(Colormap::new("x", vec![(0.0, [0; 3])]).is_err());
        assert!(Colormap::new("x", vec![(0.1, [0; 3]), (1.0, [0; 3])]).is_err());
        assert!(Colormap::new("x", vec![(0.0, [0; 3]), (0.5, [0; 3]), (0.5, [0; 3]), (1.0, [0; 3])]).is_err());
        assert!(Colormap::by_name("viridis").is_err());
    }

    #[test]
    fn constant_map_takes_first_stop() {
        let (img, bounds) = apply_colormap(&map(2, 2, vec![3.0; 4]), &RenderSpec::default()).unwrap();
        assert!(img.data().chunks(3).all(|p| p == [0, 0, 131]));
        assert_eq!(bounds, NormBounds { lo: 3.0, hi: 3.0 });
    }

    #[test]
    fn two_values_take_end_stops() {
        let (img, _) = apply_colormap(&map(1, 2, vec![0.0, 1.0]), &RenderSpec::default()).unwrap();
        assert_eq!(img.get(0, 0), [0, 0, 131]);
        assert_eq!(img.get(1, 0), [128, 0, 0]);
    }

    #[test]
    fn midpoint_of_gray_ramp() {
        let (img, _) = apply_colormap(&map(1, 3, vec![0.0, 0.5, 1.0]), &spec(Colormap::gray())).unwrap();
        // 0.5 * 255 = 127.5 rounds half away from zero.
        assert_eq!(img.get(1, 0), [128, 128, 128]);
    }

    #[test]
    fn fixed_bounds_must_be_ordered() {
        let s = RenderSpec {
            normalization: Normalization::Fixed { lo: 1.0, hi: 1.0 },
            ..RenderSpec::default()
        };
        assert!(apply_colormap(&map(1, 1, vec![0.0]), &s).is_err());
        let s = RenderSpec {
            normalization: Normalization::Fixed { lo: 0.0, hi: 2.0 },
            ..spec(Colormap::gray())
        };
        let (img, b) = apply_colormap(&map(1, 3, vec![-1.0, 1.0, 5.0]), &s).unwrap();
        assert_eq!(b, NormBounds { lo: 0.0, hi: 2.0 });
        assert_eq!([img.get(0, 0)[0], img.get(1, 0)[0], img.get(2, 0)[0]], [0, 128, 255]);
    }

    #[test]
    fn symmetric_centers_zero() {
        let s = RenderSpec {
            normalization: Normalization::Symmetric,
            ..spec(Colormap::diverging())
        };
        let (img, b) = apply_colormap(&map(1, 3, vec![-0.3, 0.0, 0.1]), &s).unwrap();
        assert!((b.lo + 0.3).abs() < 1e-7 && (b.hi - 0.3).abs() < 1e-7);
        assert_eq!(img.get(0, 0), [59, 76, 192]);
        assert_eq!(img.get(1, 0), [221, 221, 221]);
        let (img, _) = apply_colormap(&map(1, 1, vec![0.0]), &s).unwrap();
        assert_eq!(img.get(0, 0), [221, 221, 221]);
    }

    #[test]
    fn normalization_parsing() {
        assert_eq!("minmax".parse::<Normalization>().unwrap(), Normalization::MinMax);
        assert_eq!("symmetric".parse::<Normalization>().unwrap(), Normalization::Symmetric);
        assert_eq!(
            "fixed:0:0.5".parse::<Normalization>().unwrap(),
            Normalization::Fixed { lo: 0.0, hi: 0.5 }
        );
        assert!("fixed:a:1".parse::<Normalization>().is_err());
        assert!("log".parse::<Normalization>().is_err());
    }

    #[test]
    fn overlay_examples() {
        let base = RgbImage::new(2, 1, [100, 100, 100]);
        let heat = RgbImage::new(2, 1, [200, 200, 200]);
        assert_eq!(overlay(&base, &heat, 0.0).unwrap(), base);
        assert_eq!(overlay(&base, &heat, 1.0).unwrap(), heat);
        assert_eq!(overlay(&base, &heat, 0.5).unwrap().get(0, 0), [150, 150, 150]);
        assert!(overlay(&base, &RgbImage::new(1, 1, [0; 3]), 0.5).is_err());
        assert!(overlay(&base, &heat, 1.5).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&map(2, 2, vec![0.7; 4]), 10).unwrap();
        assert_eq!(h.counts[0], 4);
        assert_eq!(h.total(), 4);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));

        // 0.0, 0.1, ..., 1.0 into two bins: [0, 0.5) holds 0.0..0.4, [0.5, 1] holds 0.5..1.0.
        let grid: Vec<f32> = (0..=10).map(|i| i as f32 / 10.0).collect();
        let h = histogram_values(&grid, 2).unwrap();
        assert_eq!(h.counts, [5, 6]);
        assert_eq!(h.to_csv().lines().next(), Some("bin_lo,bin_hi,count"));
        assert!(histogram_values(&grid, 0).is_err());
    }

    #[test]
    fn png_round_trip() {
        let mut img = RgbImage::new(3, 2, [10, 20, 30]);
        img.put(2, 1, [255, 0, 7]);
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_png(&img).unwrap(), encode_png(&img).unwrap());
        assert!(decode_png(b"not a png").is_err());
    }

    #[test]
    fn unreadable_image_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"garbage").unwrap();
        assert!(matches!(read_png(&p), Err(Error::Image { .. })));
        assert!(matches!(read_png(dir.path().join("missing.png")), Err(Error::Io { .. })));
    }

    #[test]
    fn text_is_drawn() {
        let mut img = RgbImage::new(20, 10, WHITE);
        draw_text(&mut img, 0, 0, "1", BLACK);
        // Top row of '1' is 0x04: only the middle column is set.
        assert_eq!(img.get(2, 0), BLACK);
        assert_eq!(img.get(0, 0), WHITE);
    }

    #[test]
    fn panel_layouts() {
        let image = RgbImage::new(8, 6, [50, 50, 50]);
        let m = map(6, 8, (0..48).map(|i| i as f32).collect());
        let scores = vec![("magface".to_string(), 0.5)];

        let p = panel(&image, &scores, None, std::slice::from_ref(&m), &RenderSpec::default()).unwrap();
        assert_eq!(panel_grid(false, 1), (2, 1));
        // Label "MAGFACE: 0.5000" is 15 chars = 90 px + 8 margin, wider than the 2-tile grid (4 + 2 * 12 = 28).
        assert_eq!((p.width(), p.height()), (98, 4 + 10 + 10));
        assert_eq!(p.get(4, 4), [50, 50, 50]);

        let act = Tensor::from_2d(6, 8, vec![0.5; 48]).unwrap();
        let four = vec![m.clone(), m.clone(), m.clone(), m];
        assert_eq!(panel_grid(true, 4), (4, 2));
        let p = panel(&image, &[], Some(&act), &four, &RenderSpec::default()).unwrap();
        assert_eq!((p.width(), p.height()), (4 + 4 * 12, 4 + 2 * 10));
        // Bottom-right map tile starts at column 3, row 1.
        assert_ne!(p.get(4 + 3 * 12, 4 + 10), WHITE);
        // Below the original there is no tile in row 1.
        assert_eq!(p.get(4, 4 + 10), WHITE);

        let wrong = map(2, 2, vec![0.0; 4]);
        assert!(panel(&image, &[], None, &[wrong], &RenderSpec::default()).is_err());
        assert!(panel(&image, &[], None, &[], &RenderSpec::default()).is_err());
    }
}
