//! ScoreCAM activation maps over a pluggable scoring model.
//!
//! For channel activations `ch_1..ch_K` (K×h×w) of one source image
//! (H×W×C, values in `[0, 1]`):
//!
//! 1. `u_k = upsample(normalize(ch_k))` to H×W, min-max normalized and
//!    bilinearly upsampled with corner-aligned sampling;
//! 2. `c_k = eval(source ⊙ u_k)`, the mask broadcast over color channels;
//! 3. `w = softmax(c)`, with no baseline score subtracted;
//! 4. output `= ReLU(Σ_k w_k u_k)`.
//!
//! Before the K masked requests the evaluator receives the unmasked source
//! once, so a stateful evaluator can cache the original embedding; that
//! reference score is reported but does not enter the weights.
//!
//! The evaluator is the only model-dependent part. It can be an in-process
//! [`Evaluator`] or an external command speaking the line protocol handled
//! by [`SubprocessEvaluator`] and [`evaluator_loop`].

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{encode_tensor, read_tensor_from, Tensor};

/// Scores a (masked) H×W×C image. Higher means the masked image's embedding
/// agrees more with the unmasked original.
pub trait Evaluator {
    fn score(&mut self, image: &Tensor) -> Result<f64>;

    /// Short description recorded in output metadata.
    fn describe(&self) -> String;
}

/// Mean pixel value of the masked image.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanPixelEvaluator;

impl Evaluator for MeanPixelEvaluator {
    fn score(&mut self, image: &Tensor) -> Result<f64> {
        let sum: f64 = image.data().iter().map(|&v| v as f64).sum();
        Ok(sum / image.len() as f64)
    }

    fn describe(&self) -> String {
        "toy:mean".into()
    }
}

/// Dot product with a fixed pseudo-random projection, scaled by `1/len`.
/// Weights are drawn from U[-1, 1] with a ChaCha8 stream seeded by `seed`
/// and depend only on the seed and the input length.
#[derive(Debug, Clone)]
pub struct LinearProjectionEvaluator {
    seed: u64,
    weights: Vec<f32>,
}

impl LinearProjectionEvaluator {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            weights: Vec::new(),
        }
    }

    pub fn weights_for(seed: u64, len: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0f32..=1.0)).collect()
    }
}

impl Evaluator for LinearProjectionEvaluator {
    fn score(&mut self, image: &Tensor) -> Result<f64> {
        if self.weights.len() != image.len() {
            self.weights = Self::weights_for(self.seed, image.len());
        }
        let dot: f64 = image
            .data()
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| x as f64 * w as f64)
            .sum();
        Ok(dot / image.len() as f64)
    }

    fn describe(&self) -> String {
        format!("toy:linear:{}", self.seed)
    }
}

/// An external command scoring images over stdin/stdout.
///
/// Per request, one AMVT tensor is written to the child's stdin and one line
/// holding a decimal float is read back from its stdout. Closing stdin ends
/// the session. Requests are strictly serial.
pub struct SubprocessEvaluator {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessEvaluator {
    /// Launches `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(command, e))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout piped"));
        Ok(Self {
            command: command.to_string(),
            child,
            stdin: Some(stdin),
            stdout,
        })
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Evaluator {
            channel: None,
            message: format!("{}: {}", self.command, message.into()),
        }
    }
}

impl Evaluator for SubprocessEvaluator {
    fn score(&mut self, image: &Tensor) -> Result<f64> {
        let bytes = encode_tensor(image);
        let Some(stdin) = self.stdin.as_mut() else {
            return Err(self.fail("session closed"));
        };
        if let Err(e) = stdin.write_all(&bytes).and_then(|_| stdin.flush()) {
            return Err(self.fail(format!("write failed ({e}); evaluator exited early?")));
        }
        let mut line = String::new();
        match self.stdout.read_line(&mut line) {
            Ok(0) => Err(self.fail("evaluator exited early")),
            Ok(_) => line
                .trim()
                .parse::<f64>()
                .map_err(|_| self.fail(format!("non-numeric reply {:?}", line.trim()))),
            Err(e) => Err(self.fail(format!("read failed: {e}"))),
        }
    }

    fn describe(&self) -> String {
        format!("subprocess:{}", self.command)
    }
}

impl Drop for SubprocessEvaluator {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.wait();
    }
}

/// Serves `evaluator` over the subprocess protocol until `input` closes.
/// Returns the number of requests answered.
pub fn evaluator_loop<E, R, W>(evaluator: &mut E, input: &mut R, output: &mut W) -> Result<usize>
where
    E: Evaluator + ?Sized,
    R: Read,
    W: Write,
{
    let mut served = 0;
    while let Some(image) = read_tensor_from(input).map_err(|source| Error::Format {
        path: "<stdin>".into(),
        source,
    })? {
        let score = evaluator.score(&image)?;
        writeln!(output, "{score}")
            .and_then(|_| output.flush())
            .map_err(|e| Error::io("<stdout>", e))?;
        served += 1;
    }
    Ok(served)
}

/// Min-max rescales a map into `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_channel(ch: &Tensor) -> Tensor {
    let (lo, hi) = ch
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = ch.clone();
    if hi > lo {
        let (lo, span) = (lo as f64, hi as f64 - lo as f64);
        for v in out.data_mut() {
            *v = ((*v as f64 - lo) / span) as f32;
        }
    } else {
        out.data_mut().fill(0.0);
    }
    out
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Source coordinate and interpolation weight for each output index,
/// corner-aligned: output 0 maps to input 0 and output `dst-1` to `src-1`.
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst > 1 {
                (i * (src - 1)) as f64 / (dst - 1) as f64
            } else {
                0.0
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Corner-aligned bilinear resize of a rank-2 map.
pub fn upsample_bilinear(t: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (h, w) = t.shape_2d()?;
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("target size {height}x{width} is smaller than 1x1")));
    }
    let rows = sample_positions(h, height);
    let cols = sample_positions(w, width);
    let src = t.data();
    let at = |y: usize, x: usize| src[y * w + x] as f64;
    let mut out = Vec::with_capacity(height * width);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let top = lerp(at(y0, x0), at(y0, x1), fx);
            let bottom = lerp(at(y1, x0), at(y1, x1), fx);
            out.push(lerp(top, bottom, fy) as f32);
        }
    }
    Tensor::from_2d(height, width, out)
}

/// Deepest-layer channel activations of one image plus the image itself.
#[derive(Debug, Clone)]
pub struct ChannelActivations {
    channels: Tensor,
    source: Tensor,
}

impl ChannelActivations {
    /// `channels` is K×h×w, `source` is H×W×C with values in `[0, 1]`.
    pub fn new(channels: Tensor, source: Tensor) -> Result<Self> {
        let [_, h, w] = channels.dims()[..] else {
            return Err(Error::invalid(format!("channel activations must be K×h×w, got {:?}", channels.dims())));
        };
        let [big_h, big_w, _] = source.dims()[..] else {
            return Err(Error::invalid(format!("source image must be H×W×C, got {:?}", source.dims())));
        };
        if h > big_h || w > big_w {
            return Err(Error::invalid(format!(
                "channel size {h}x{w} exceeds image size {big_h}x{big_w}"
            )));
        }
        if let Some(i) = channels.first_non_finite() {
            return Err(Error::invalid(format!("non-finite channel activation at {i}")));
        }
        if source.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("source image values must lie in [0, 1]"));
        }
        Ok(Self { channels, source })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.dims()[0]
    }

    pub fn channel(&self, k: usize) -> Tensor {
        let [_, h, w] = self.channels.dims()[..] else { unreachable!() };
        let data = self.channels.data()[k * h * w..(k + 1) * h * w].to_vec();
        Tensor::from_2d(h, w, data).expect("slice matches dims")
    }

    pub fn source(&self) -> &Tensor {
        &self.source
    }

    /// `(H, W, C)` of the source image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let d = self.source.dims();
        (d[0], d[1], d[2])
    }
}

/// Multiplies every color channel of `source` (H×W×C) by `mask` (H×W).
pub fn apply_mask(source: &Tensor, mask: &Tensor) -> Tensor {
    let c = source.dims()[2];
    let data = source
        .data()
        .chunks_exact(c)
        .zip(mask.data())
        .flat_map(|(px, &m)| px.iter().map(move |&v| v * m))
        .collect();
    Tensor::new(source.dims().to_vec(), data).expect("shape preserved")
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Fixed pipeline choices, written next to every extracted map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCamSettings {
    pub normalization: String,
    pub upsampling: String,
    pub baseline_subtraction: bool,
    pub weighting: String,
    pub evaluator: String,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct ScoreCamOutput {
    pub map: Tensor,
    /// Score of the unmasked source.
    pub reference_score: f64,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub settings: ScoreCamSettings,
}

/// Full pipeline, returning the per-channel scores and weights as well.
pub fn scorecam_detailed<E: Evaluator + ?Sized>(ca: &ChannelActivations, eval: &mut E) -> Result<ScoreCamOutput> {
    let (height, width, _) = ca.image_shape();
    let k = ca.channel_count();
    let reference_score = eval.score(ca.source()).map_err(|e| Error::Evaluator {
        channel: None,
        message: format!("reference request: {e}"),
    })?;
    if !reference_score.is_finite() {
        return Err(Error::Evaluator {
            channel: None,
            message: format!("non-finite reference score {reference_score}"),
        });
    }
    let mut masks = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);
    for i in 0..k {
        let mask = upsample_bilinear(&normalize_channel(&ca.channel(i)), height, width)?;
        let score = eval.score(&apply_mask(ca.source(), &mask)).map_err(|e| match e {
            Error::Evaluator { message, .. } => Error::Evaluator {
                channel: Some(i),
                message,
            },
            other => Error::Evaluator {
                channel: Some(i),
                message: other.to_string(),
            },
        })?;
        if !score.is_finite() {
            return Err(Error::Evaluator {
                channel: Some(i),
                message: format!("non-finite score {score}"),
            });
        }
        masks.push(mask);
        scores.push(score);
    }
    let weights = softmax(&scores);
    let mut out = vec![0.0f32; height * width];
    for (p, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for (w, mask) in weights.iter().zip(&masks) {
            acc += w * mask.data()[p] as f64;
        }
        *slot = acc.max(0.0) as f32;
    }
    Ok(ScoreCamOutput {
        map: Tensor::from_2d(height, width, out)?,
        reference_score,
        scores,
        weights,
        settings: ScoreCamSettings {
            normalization: "minmax".into(),
            upsampling: "bilinear-align-corners".into(),
            baseline_subtraction: false,
            weighting: "softmax".into(),
            evaluator: eval.describe(),
            channels: k,
        },
    })
}

/// The H×W ScoreCAM map of one image.
pub fn scorecam_map<E: Evaluator + ?Sized>(ca: &ChannelActivations, eval: &mut E) -> Result<Tensor> {
    Ok(scorecam_detailed(ca, eval)?.map)
}
