//! Browser demo: three small interactive views over the `amva` core.
//!
//! Each view is a plain function returning a [`View`] so it can be tested
//! natively; the `wasm_bindgen` exports are thin wrappers.

use amva::erc::{self, ErcCurve};
use amva::render::{self, Colormap, Normalization, RenderSpec, RgbImage};
use amva::scorecam::{self, ChannelActivations, LinearProjectionEvaluator};
use amva::stat_maps::{self, SetLabel, StatMap};
use amva::synthetic::{self, SyntheticConfig};
use amva::{ActivationStack, QualityTable, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

const TILE_SCALE: usize = 4;
const LABEL_HEIGHT: usize = 12;
const BACKGROUND: render::Rgb = [255, 255, 255];
const INK: render::Rgb = [20, 20, 20];

/// An RGBA image plus a text summary.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct View {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    text: String,
}

#[wasm_bindgen]
impl View {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    pub fn text(&self) -> String {
        self.text.clone()
    }
}

impl View {
    fn new(img: &RgbImage, text: String) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            rgba: img.to_rgba(),
            text,
        }
    }
}

impl PartialEq for View {
    fn eq(&self, other: &Self) -> bool {
        (self.width, self.height, &self.rgba, &self.text) == (other.width, other.height, &other.rgba, &other.text)
    }
}

fn js_err(e: amva::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Labelled tiles laid out row by row.
fn grid(tiles: &[(String, RgbImage)], cols: usize) -> RgbImage {
    let tw = tiles.iter().map(|t| t.1.width()).max().unwrap_or(1);
    let th = tiles.iter().map(|t| t.1.height()).max().unwrap_or(1);
    let m = render::PANEL_MARGIN;
    let rows = tiles.len().div_ceil(cols);
    let cell_w = tw.max(tiles.iter().map(|t| render::text_width(&t.0)).max().unwrap_or(0));
    let mut img = RgbImage::new(m + cols * (cell_w + m), m + rows * (th + LABEL_HEIGHT + m), BACKGROUND);
    for (i, (label, tile)) in tiles.iter().enumerate() {
        let x = m + (i % cols) * (cell_w + m);
        let y = m + (i / cols) * (th + LABEL_HEIGHT + m);
        render::draw_text(&mut img, x, y, label, INK);
        img.blit(tile, x, y + LABEL_HEIGHT);
    }
    img
}

fn tile(map: &StatMap, spec: &RenderSpec) -> amva::Result<RgbImage> {
    Ok(render::apply_colormap(map, spec)?.0.scaled(TILE_SCALE))
}

fn utility_stack(rng: &mut ChaCha8Rng, n: usize, size: usize, utility: f64) -> amva::Result<ActivationStack> {
    let maps = (0..n)
        .map(|_| synthetic::blob_map(rng, size, utility.clamp(0.0, 1.0)))
        .collect();
    ActivationStack::from_maps(maps)
}

/// MAM, MDAM, AM-V and AM-MV of a high- and a low-utility stack, plus the
/// two within-method differentials.
pub fn stats_view(images: usize, size: usize, high_utility: f64, low_utility: f64, seed: u64) -> amva::Result<View> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = RenderSpec::default();
    let mut tiles = Vec::new();
    let mut summary = Vec::new();
    let mut spreads = Vec::new();
    for (label, utility) in [(SetLabel::High, high_utility), (SetLabel::Low, low_utility)] {
        let stats = stat_maps::stack_statistics(&utility_stack(&mut rng, images, size, utility)?)?;
        for map in [&stats.mam, &stats.mdam, &stats.am_v, &stats.am_mv] {
            let (lo, hi) = map.min_max();
            tiles.push((format!("{} {}", label.tag(), map.kind), tile(map, &spec)?));
            summary.push(format!("{} {}: {lo:.3}..{hi:.3}", label.tag(), map.kind));
        }
        spreads.push((
            stats.am_v.with_meta(&["demo"], label, None),
            stats.am_mv.with_meta(&["demo"], label, None),
        ));
    }
    let dv = stat_maps::d_am_v(&spreads[0].0, &spreads[1].0)?;
    let dmv = stat_maps::d_am_mv(&spreads[0].1, &spreads[1].1)?;
    for map in [&dv, &dmv] {
        let (lo, hi) = map.min_max();
        tiles.push((map.kind.to_string(), tile(map, &spec)?));
        summary.push(format!("{}: {lo:.3}..{hi:.3}", map.kind));
    }
    Ok(View::new(&grid(&tiles, 4), summary.join("\n")))
}

/// A shaded disc standing in for a face, H×W×3 in [0, 1].
fn source_image(size: usize) -> Tensor {
    let c = (size as f32 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let d = ((y as f32 - c).powi(2) + (x as f32 - c).powi(2)).sqrt() / (0.5 * size as f32);
            let v = (1.0 - d).clamp(0.1, 1.0);
            data.extend([v, 0.8 * v, 0.6 * v]);
        }
    }
    Tensor::new(vec![size, size, 3], data).expect("dims match")
}

/// ScoreCAM with `channels` random low-resolution channels and a seeded
/// linear toy evaluator: upsampled masks, softmax weights and the result.
pub fn scorecam_view(channels: usize, size: usize, seed: u64) -> amva::Result<View> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = (size / 4).max(2);
    let mut data = Vec::with_capacity(channels * low * low);
    for _ in 0..channels {
        let u: f64 = rng.gen();
        data.extend_from_slice(synthetic::blob_map(&mut rng, low, u).data());
    }
    let source = source_image(size);
    let ca = ChannelActivations::new(Tensor::new(vec![channels, low, low], data)?, source.clone())?;
    let out = scorecam::scorecam_detailed(&ca, &mut LinearProjectionEvaluator::new(seed))?;

    let spec = RenderSpec::default();
    let base = RgbImage::from_tensor(&source)?;
    let mut tiles = vec![("SOURCE".to_string(), base.scaled(TILE_SCALE))];
    for k in 0..channels {
        let u = scorecam::upsample_bilinear(&scorecam::normalize_channel(&ca.channel(k)), size, size)?;
        let (img, _) = render::colorize(u.data(), size, size, &spec)?;
        tiles.push((format!("W={:.2}", out.weights[k]), img.scaled(TILE_SCALE)));
    }
    let (heat, _) = render::colorize(out.map.data(), size, size, &spec)?;
    tiles.push(("SCORECAM".into(), render::overlay(&base, &heat, 0.6)?.scaled(TILE_SCALE)));
    let text = out
        .scores
        .iter()
        .zip(&out.weights)
        .enumerate()
        .map(|(k, (s, w))| format!("channel {k}: score {s:.5}, weight {w:.4}"))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(View::new(&grid(&tiles, 4), text))
}

/// ERC curves of an oracle quality (the hidden utility) and a noisy one.
pub fn erc_view(noise: f64, target_fmr: f64, seed: u64) -> amva::Result<View> {
    let cfg = SyntheticConfig {
        subjects: 40,
        images_per_subject: 5,
        size: 2,
        methods: vec!["unused".into()],
        impostor_pairs: 2000,
        with_pairs: true,
        seed,
    };
    let data = synthetic::generate(&cfg)?;
    let pairs = data.pairs.as_ref().expect("pairs requested");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let exact = QualityTable::new("utility", data.images.iter().map(|i| (i.id.clone(), i.utility)))?;
    let noisy = QualityTable::new(
        "noisy",
        data.images
            .iter()
            .map(|i| (i.id.clone(), i.utility + noise * rng.gen_range(-1.0..1.0))),
    )?;
    let ratios: Vec<f64> = (0..=20).map(|i| i as f64 * 0.02).collect();
    let curves: Vec<ErcCurve> = [exact, noisy]
        .iter()
        .map(|q| erc::erc_curve(pairs, q, target_fmr, &ratios))
        .collect::<amva::Result<_>>()?;
    let text = format!(
        "threshold {:.4} at target FMR {target_fmr}\n{}",
        curves[0].threshold,
        curves
            .iter()
            .map(|c| format!("{}:\n{}", c.method, c.to_csv()))
            .collect::<Vec<_>>()
            .join("\n")
    );
    Ok(View::new(&render::plot_erc(&curves)?, text))
}

/// A single colorbar, for the page legend.
pub fn colorbar(name: &str, width: usize) -> amva::Result<View> {
    let cmap = Colormap::by_name(name)?;
    let values: Vec<f32> = (0..width).map(|x| x as f32).collect();
    let spec = RenderSpec {
        normalization: Normalization::MinMax,
        alpha: 1.0,
        colormap: cmap,
    };
    let (row, _) = render::colorize(&values, 1, width, &spec)?;
    let mut img = RgbImage::new(width, 12, BACKGROUND);
    for y in 0..12 {
        img.blit(&row, 0, y);
    }
    Ok(View::new(&img, name.to_string()))
}

#[wasm_bindgen(js_name = statsView)]
pub fn stats_view_js(images: usize, size: usize, high_utility: f64, low_utility: f64, seed: u64) -> Result<View, JsError> {
    stats_view(images, size, high_utility, low_utility, seed).map_err(js_err)
}

#[wasm_bindgen(js_name = scorecamView)]
pub fn scorecam_view_js(channels: usize, size: usize, seed: u64) -> Result<View, JsError> {
    scorecam_view(channels, size, seed).map_err(js_err)
}

#[wasm_bindgen(js_name = ercView)]
pub fn erc_view_js(noise: f64, target_fmr: f64, seed: u64) -> Result<View, JsError> {
    erc_view(noise, target_fmr, seed).map_err(js_err)
}

#[wasm_bindgen(js_name = colorbar)]
pub fn colorbar_js(name: &str, width: usize) -> Result<View, JsError> {
    colorbar(name, width).map_err(js_err)
}
