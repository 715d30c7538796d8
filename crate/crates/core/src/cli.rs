//! The `amva` command line.
//!
//! Every subcommand reads a manifest, runs one pipeline stage and writes
//! artifacts named `<method>_<set>_<kind>.<ext>` under `--out`. `report`
//! runs every stage. Exit codes: 0 success, 1 configuration error, 2 data
//! error, 3 I/O error; with several stages the worst code wins.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::erc::{self, ErcCurve};
use crate::error::{Error, Result};
use crate::partition::{self, QuantileSet, SetKind};
use crate::render::{self, Colormap, Normalization, RenderSidecar, RenderSpec};
use crate::scorecam::{self, ChannelActivations, Evaluator, LinearProjectionEvaluator, MeanPixelEvaluator};
use crate::stat_maps::{self, SetLabel, StatKind, StatMap};
use crate::synthetic;
use crate::tensor_io::{self, ActivationStack, ComparisonSet, Manifest, QualityTable, Tensor};

pub const DEFAULT_FRACTION: f64 = 0.10;
pub const DEFAULT_FMR: f64 = 0.001;
pub const DEFAULT_RATIOS: &str = "0:0.32:0.02";

const CONVENTIONS: &str = "Quality scores are read as higher = better quality; comparison \
scores as higher = more similar (a pair matches when score >= threshold). The ERC threshold \
is fixed once from all impostor scores and reused at every reject ratio.";

#[derive(Debug, Parser)]
#[command(name = "amva", version, about = "Activation-map variation analytics for face image quality", long_about = CONVENTIONS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Quality method name, or `all`.
    #[arg(long, default_value = "all")]
    method: String,
    /// Output directory.
    #[arg(long, default_value = "amva-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct RenderArgs {
    /// Overlay opacity for heatmaps blended onto images.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Colormap for non-negative maps: jet, diverging or gray.
    #[arg(long, default_value = "jet")]
    colormap: String,
    /// Histogram bins per rendered map.
    #[arg(long, default_value_t = 32)]
    bins: usize,
}

#[derive(Debug, Clone, Copy, Args)]
struct SignArgs {
    /// Cross-method differentials as m1 - m2 (default).
    #[arg(long, conflicts_with = "absolute")]
    signed: bool,
    /// Cross-method differentials as |m1 - m2|.
    #[arg(long)]
    absolute: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ToyKind {
    Mean,
    Linear,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select the high and low quality sets of each method.
    Partition {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = DEFAULT_FRACTION)]
        fraction: f64,
    },
    /// MAM, MDAM, AM-V and AM-MV for the H and L sets.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = DEFAULT_FRACTION)]
        fraction: f64,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// D-AM-V / D-AM-MV per method and cross-method AM-V differentials.
    Diff {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = DEFAULT_FRACTION)]
        fraction: f64,
        #[command(flatten)]
        render: RenderArgs,
        #[command(flatten)]
        sign: SignArgs,
    },
    /// Error-versus-reject curves at a fixed FMR.
    Erc {
        #[command(flatten)]
        data: DataArgs,
        /// Target false match rate fixing the threshold.
        #[arg(long, default_value_t = DEFAULT_FMR)]
        fmr: f64,
        /// Reject ratios as `start:stop:step` (inclusive) or a comma list.
        #[arg(long, default_value = DEFAULT_RATIOS)]
        ratios: String,
    },
    /// Overlap ratio matrices between methods' H and L sets.
    Overlap {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = DEFAULT_FRACTION)]
        fraction: f64,
    },
    /// AD-MAM maps against each method's MAM_H, plus composite panels.
    Admam {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = DEFAULT_FRACTION)]
        fraction: f64,
        #[command(flatten)]
        render: RenderArgs,
        /// Image ids (comma separated). Defaults to the best and worst image of the first method.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
    },
    /// ScoreCAM maps from channel activations and an evaluator.
    Scorecam(ScorecamArgs),
    /// Render a tensor or stat map to PNG with histogram and sidecar.
    Render {
        /// Rank-2 AMVT tensor; a `.meta.json` sidecar is used when present.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "amva-out")]
        out: PathBuf,
        /// minmax, symmetric or fixed:<lo>:<hi>. Defaults by map kind.
        #[arg(long)]
        normalization: Option<String>,
        /// PNG to blend the heatmap onto.
        #[arg(long)]
        overlay_image: Option<PathBuf>,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// Every stage: partition, stats, diffs, ERC, overlap, AD-MAM panels.
    Report {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = DEFAULT_FRACTION)]
        fraction: f64,
        #[arg(long, default_value_t = DEFAULT_FMR)]
        fmr: f64,
        #[arg(long, default_value = DEFAULT_RATIOS)]
        ratios: String,
        #[command(flatten)]
        render: RenderArgs,
        #[command(flatten)]
        sign: SignArgs,
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
    },
    /// Write a seeded synthetic dataset (manifest, maps, images, CSVs).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        subjects: usize,
        #[arg(long, default_value_t = 4)]
        images_per_subject: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, value_delimiter = ',', default_value = "alpha,beta")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 200)]
        impostor_pairs: usize,
        #[arg(long)]
        no_pairs: bool,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Serve a built-in toy evaluator over stdin/stdout.
    #[command(hide = true)]
    ToyEvaluator {
        #[arg(long, value_enum, default_value = "mean")]
        kind: ToyKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct ScorecamArgs {
    /// K×h×w channel activations of one image.
    #[arg(long, conflicts_with_all = ["manifest", "channels_dir"])]
    channels: Option<PathBuf>,
    /// Source image (PNG, or H×W×C AMVT with values in [0, 1]).
    #[arg(long, requires = "channels")]
    image: Option<PathBuf>,
    /// Batch mode: images from this manifest ...
    #[arg(long, requires = "channels_dir")]
    manifest: Option<PathBuf>,
    /// ... with channel activations at `<dir>/<id>.amvt`.
    #[arg(long)]
    channels_dir: Option<PathBuf>,
    /// Evaluator command speaking the AMVT-in / float-line-out protocol.
    #[arg(long, conflicts_with = "toy_evaluator")]
    evaluator_cmd: Option<String>,
    /// Built-in evaluator instead of a command.
    #[arg(long, value_enum)]
    toy_evaluator: Option<ToyKind>,
    #[arg(long, default_value_t = 0)]
    toy_seed: u64,
    #[arg(long, default_value = "amva-out")]
    out: PathBuf,
    /// Output name in single-image mode.
    #[arg(long, default_value = "scorecam")]
    name: String,
}

/// Rendering options shared by all stages.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub alpha: f64,
    pub colormap: String,
    pub bins: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            colormap: "jet".into(),
            bins: 32,
        }
    }
}

impl From<&RenderArgs> for RenderOptions {
    fn from(a: &RenderArgs) -> Self {
        Self {
            alpha: a.alpha,
            colormap: a.colormap.clone(),
            bins: a.bins,
        }
    }
}

/// Everything `full_report` needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest_path: PathBuf,
    /// Empty means every method in the manifest.
    pub methods: Vec<String>,
    pub fraction: f64,
    pub target_fmr: f64,
    pub ratios: Vec<f64>,
    pub output_dir: PathBuf,
    pub render: RenderOptions,
    pub signed: bool,
    /// AD-MAM panel images; empty picks the extremes of the first method.
    pub panel_ids: Vec<String>,
}

impl RunConfig {
    pub fn new(manifest_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest_path: manifest_path.into(),
            methods: Vec::new(),
            fraction: DEFAULT_FRACTION,
            target_fmr: DEFAULT_FMR,
            ratios: parse_ratios(DEFAULT_RATIOS).expect("default ratios parse"),
            output_dir: output_dir.into(),
            render: RenderOptions::default(),
            signed: true,
            panel_ids: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 0.5) {
            return Err(Error::invalid(format!("--fraction {} must lie in (0, 0.5]", self.fraction)));
        }
        if !(self.target_fmr > 0.0 && self.target_fmr < 1.0) {
            return Err(Error::invalid(format!("--fmr {} must lie in (0, 1)", self.target_fmr)));
        }
        if !(0.0..=1.0).contains(&self.render.alpha) {
            return Err(Error::invalid(format!("--alpha {} must lie in [0, 1]", self.render.alpha)));
        }
        if self.render.bins == 0 {
            return Err(Error::invalid("--bins must be at least 1"));
        }
        Colormap::by_name(&self.render.colormap)?;
        Ok(())
    }
}

/// Parses `start:stop:step` (stop inclusive) or `r1,r2,...`.
pub fn parse_ratios(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::invalid(format!("cannot parse ratios {spec:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = spec.split(':').collect();
    match parts[..] {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start || !start.is_finite() || !stop.is_finite() {
                return Err(bad());
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize;
            // Rounding to 1e-9 keeps 0.06 from printing as 0.060000000000000005.
            Ok((0..=count)
                .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                .collect())
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

fn notice(msg: impl AsRef<str>) {
    eprintln!("amva: {}", msg.as_ref());
}

fn file_safe(id: &str) -> String {
    id.replace('/', "_")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value).expect("serializable");
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loaded manifest plus lazily loaded quality tables and activation maps.
struct Context {
    manifest: Manifest,
    methods: Vec<String>,
    out: PathBuf,
    quality: HashMap<String, QualityTable>,
    activations: HashMap<String, Tensor>,
}

impl Context {
    fn open(manifest_path: &Path, method: &[String], out: &Path) -> Result<Self> {
        let manifest = tensor_io::read_manifest(manifest_path)?;
        let methods = if method.is_empty() || method.iter().any(|m| m == "all") {
            manifest.quality_files.keys().cloned().collect()
        } else {
            for m in method {
                if !manifest.quality_files.contains_key(m) {
                    return Err(Error::invalid(format!("method {m:?} has no quality file in the manifest")));
                }
            }
            method.to_vec()
        };
        if methods.is_empty() {
            return Err(Error::Manifest("no quality methods".into()));
        }
        create_dir(out)?;
        Ok(Self {
            manifest,
            methods,
            out: out.to_path_buf(),
            quality: HashMap::new(),
            activations: HashMap::new(),
        })
    }

    fn quality(&mut self, method: &str) -> Result<&QualityTable> {
        if !self.quality.contains_key(method) {
            let path = &self.manifest.quality_files[method];
            let table = tensor_io::read_quality_csv(path, method)?;
            if let Some((id, _)) = table.iter().find(|(id, _)| !self.manifest.contains(id)) {
                return Err(Error::Csv {
                    path: path.clone(),
                    line: 0,
                    message: format!("image {id:?} is not in the manifest"),
                });
            }
            self.quality.insert(method.to_string(), table);
        }
        Ok(&self.quality[method])
    }

    fn activation(&mut self, id: &str) -> Result<Tensor> {
        if let Some(t) = self.activations.get(id) {
            return Ok(t.clone());
        }
        let t = tensor_io::read_tensor(self.manifest.activation_path(id))?;
        t.shape_2d()?;
        self.activations.insert(id.to_string(), t.clone());
        Ok(t)
    }

    fn stack(&mut self, ids: &[String]) -> Result<ActivationStack> {
        let entries = ids
            .iter()
            .map(|id| Ok((id.clone(), self.activation(id)?)))
            .collect::<Result<Vec<_>>>()?;
        ActivationStack::new(entries)
    }

    fn quantile(&mut self, method: &str, fraction: f64, kind: SetKind) -> Result<QuantileSet> {
        partition::select_quantile(self.quality(method)?, fraction, kind)
    }

    fn set_stats(&mut self, method: &str, fraction: f64, kind: SetKind) -> Result<stat_maps::StackStats> {
        let set = self.quantile(method, fraction, kind)?;
        let stack = self.stack(&set.image_ids)?;
        let mut stats = stat_maps::stack_statistics(&stack)?;
        for m in [&mut stats.mam, &mut stats.mdam, &mut stats.am_v, &mut stats.am_mv] {
            m.meta.methods = vec![method.to_string()];
            m.meta.set = Some(kind.into());
            m.meta.fraction = Some(fraction);
        }
        Ok(stats)
    }

    fn pairs(&self) -> Result<Option<ComparisonSet>> {
        self.manifest.pairs_file.as_ref().map(tensor_io::read_pairs_csv).transpose()
    }
}

fn map_name(method: &str, set: &str, kind: StatKind) -> String {
    format!("{method}_{set}_{}", kind.name())
}

fn spec_for(map: &StatMap, opts: &RenderOptions) -> Result<RenderSpec> {
    let signed = map.kind == StatKind::XDAmV && map.meta.signed == Some(true);
    Ok(if signed {
        RenderSpec {
            normalization: Normalization::Symmetric,
            alpha: opts.alpha,
            colormap: Colormap::diverging(),
        }
    } else {
        RenderSpec {
            normalization: Normalization::MinMax,
            alpha: opts.alpha,
            colormap: Colormap::by_name(&opts.colormap)?,
        }
    })
}

/// Writes `<name>.png`, `<name>.render.json` and `<name>.hist.csv`.
fn render_map(dir: &Path, name: &str, map: &StatMap, spec: &RenderSpec, bins: usize) -> Result<()> {
    let (img, bounds) = render::apply_colormap(map, spec)?;
    let png = format!("{name}.png");
    render::write_png(dir.join(&png), &img)?;
    render::write_render_sidecar(
        dir,
        name,
        &RenderSidecar {
            image: png,
            normalization: spec.normalization.to_string(),
            bounds,
            colormap: spec.colormap.name.clone(),
            alpha: None,
        },
    )?;
    let hist = render::histogram(map, bins)?;
    write_string(&dir.join(format!("{name}.hist.csv")), &hist.to_csv())
}

fn emit_map(ctx: &Context, name: &str, map: &StatMap, opts: &RenderOptions) -> Result<()> {
    stat_maps::write_stat_map(&ctx.out, name, map)?;
    render_map(&ctx.out, name, map, &spec_for(map, opts)?, opts.bins)
}

fn stage_partition(ctx: &mut Context, fraction: f64) -> Result<()> {
    for method in ctx.methods.clone() {
        for kind in [SetKind::High, SetKind::Low] {
            let set = ctx.quantile(&method, fraction, kind)?;
            let csv = partition::quantile_set_csv(&set, ctx.quality(&method)?);
            write_string(&ctx.out.join(format!("{method}_{kind}_quantile.csv")), &csv)?;
        }
    }
    Ok(())
}

fn stage_stats(ctx: &mut Context, fraction: f64, opts: &RenderOptions) -> Result<()> {
    for method in ctx.methods.clone() {
        for kind in [SetKind::High, SetKind::Low] {
            for map in ctx.set_stats(&method, fraction, kind)?.into_vec() {
                emit_map(ctx, &map_name(&method, kind.tag(), map.kind), &map, opts)?;
            }
        }
    }
    Ok(())
}

fn stage_diff(ctx: &mut Context, fraction: f64, opts: &RenderOptions, signed: bool) -> Result<()> {
    let mut am_v = Vec::new();
    for method in ctx.methods.clone() {
        let h = ctx.set_stats(&method, fraction, SetKind::High)?;
        let l = ctx.set_stats(&method, fraction, SetKind::Low)?;
        let dv = stat_maps::d_am_v(&h.am_v, &l.am_v)?;
        let dmv = stat_maps::d_am_mv(&h.am_mv, &l.am_mv)?;
        emit_map(ctx, &map_name(&method, "HL", dv.kind), &dv, opts)?;
        emit_map(ctx, &map_name(&method, "HL", dmv.kind), &dmv, opts)?;
        am_v.push((method, h.am_v, l.am_v));
    }
    if am_v.len() < 2 {
        notice("cross-method differentials skipped: only one method");
        return Ok(());
    }
    for i in 0..am_v.len() {
        for j in i + 1..am_v.len() {
            let (m1, h1, l1) = &am_v[i];
            let (m2, h2, l2) = &am_v[j];
            for (tag, a, b) in [("H", h1, h2), ("L", l1, l2)] {
                let x = stat_maps::cross_method_d_am_v(a, b, signed)?;
                emit_map(ctx, &map_name(&format!("{m1}-vs-{m2}"), tag, x.kind), &x, opts)?;
            }
        }
    }
    Ok(())
}

fn stage_erc(ctx: &mut Context, target_fmr: f64, ratios: &[f64]) -> Result<()> {
    let Some(pairs) = ctx.pairs()? else {
        notice("ERC skipped: manifest has no pairs_file");
        return Ok(());
    };
    let mut curves: Vec<ErcCurve> = Vec::new();
    for method in ctx.methods.clone() {
        let curve = erc::erc_curve(&pairs, ctx.quality(&method)?, target_fmr, ratios)?;
        let name = format!("{method}_all_ERC");
        write_string(&ctx.out.join(format!("{name}.csv")), &curve.to_csv())?;
        write_json(&ctx.out.join(format!("{name}.json")), &erc::erc_sidecar(&curve, &pairs))?;
        curves.push(curve);
    }
    render::write_png(ctx.out.join("erc.png"), &render::plot_erc(&curves)?)
}

fn stage_overlap(ctx: &mut Context, fraction: f64) -> Result<()> {
    if ctx.methods.len() < 2 {
        notice("overlap skipped: only one method");
        return Ok(());
    }
    for kind in [SetKind::High, SetKind::Low] {
        let sets = ctx
            .methods
            .clone()
            .iter()
            .map(|m| ctx.quantile(m, fraction, kind))
            .collect::<Result<Vec<_>>>()?;
        let matrix = partition::overlap_matrix(&sets)?;
        write_string(&ctx.out.join(format!("overlap_{kind}.csv")), &matrix.to_csv())?;
        render::write_png(ctx.out.join(format!("overlap_{kind}.png")), &render::plot_overlap(&matrix)?)?;
    }
    Ok(())
}

fn default_panel_ids(ctx: &mut Context, fraction: f64) -> Result<Vec<String>> {
    let first = ctx.methods[0].clone();
    let hi = ctx.quantile(&first, fraction, SetKind::High)?;
    let lo = ctx.quantile(&first, fraction, SetKind::Low)?;
    Ok(vec![hi.image_ids[0].clone(), lo.image_ids[0].clone()])
}

fn stage_admam(ctx: &mut Context, fraction: f64, opts: &RenderOptions, ids: &[String]) -> Result<()> {
    let ids = if ids.is_empty() { default_panel_ids(ctx, fraction)? } else { ids.to_vec() };
    let mut references = Vec::new();
    for method in ctx.methods.clone() {
        let mut mam = ctx.set_stats(&method, fraction, SetKind::High)?.mam;
        mam.meta.set = Some(SetLabel::High);
        references.push((method, mam));
    }
    let spec = RenderSpec {
        normalization: Normalization::MinMax,
        alpha: opts.alpha,
        colormap: Colormap::by_name(&opts.colormap)?,
    };
    for id in &ids {
        let image_meta = ctx
            .manifest
            .image(id)
            .ok_or_else(|| Error::invalid(format!("image {id:?} is not in the manifest")))?
            .clone();
        let activation = ctx.activation(id)?;
        let mut maps = Vec::new();
        let mut scores = Vec::new();
        for (method, mam) in &references {
            let mut d = stat_maps::ad_mam(&activation, mam)?;
            d.meta.image_id = Some(id.clone());
            emit_map(ctx, &format!("{method}_H_AD-MAM-{}", file_safe(id)), &d, opts)?;
            maps.push(d);
            if let Some(score) = ctx.quality(method)?.get(id) {
                scores.push((method.clone(), score));
            }
        }
        let image = render::read_png(&image_meta.path)?;
        let panel = render::panel(&image, &scores, Some(&activation), &maps, &spec)?;
        render::write_png(ctx.out.join(format!("panel_{}.png", file_safe(id))), &panel)?;
    }
    Ok(())
}

/// Runs one stage, reporting failure on stderr. Returns its exit code.
fn run_stage(name: &str, f: impl FnOnce() -> Result<()>) -> i32 {
    match f() {
        Ok(()) => 0,
        Err(e) => {
            notice(format!("{name} failed: {e}"));
            e.exit_code()
        }
    }
}

/// The whole analysis over one manifest. Independent stages keep going after
/// a failure; the return value is the worst stage exit code.
pub fn full_report(config: &RunConfig) -> i32 {
    if let Err(e) = config.validate() {
        notice(e.to_string());
        return e.exit_code();
    }
    let mut ctx = match Context::open(&config.manifest_path, &config.methods, &config.output_dir) {
        Ok(ctx) => ctx,
        Err(e) => {
            notice(e.to_string());
            return e.exit_code();
        }
    };
    let opts = &config.render;
    let f = config.fraction;
    [
        run_stage("partition", || stage_partition(&mut ctx, f)),
        run_stage("stats", || stage_stats(&mut ctx, f, opts)),
        run_stage("diff", || stage_diff(&mut ctx, f, opts, config.signed)),
        run_stage("erc", || stage_erc(&mut ctx, config.target_fmr, &config.ratios)),
        run_stage("overlap", || stage_overlap(&mut ctx, f)),
        run_stage("admam", || stage_admam(&mut ctx, f, opts, &config.panel_ids)),
    ]
    .into_iter()
    .max()
    .unwrap_or(0)
}

fn make_evaluator(cmd: Option<&str>, toy: Option<ToyKind>, seed: u64) -> Result<Box<dyn Evaluator>> {
    match (cmd, toy) {
        (Some(cmd), _) => Ok(Box::new(scorecam::SubprocessEvaluator::spawn(cmd)?)),
        (None, Some(ToyKind::Mean)) => Ok(Box::new(MeanPixelEvaluator)),
        (None, Some(ToyKind::Linear)) => Ok(Box::new(LinearProjectionEvaluator::new(seed))),
        (None, None) => Err(Error::invalid("scorecam needs --evaluator-cmd or --toy-evaluator")),
    }
}

fn load_source_image(path: &Path) -> Result<Tensor> {
    if path.extension().is_some_and(|e| e == tensor_io::TENSOR_EXTENSION) {
        tensor_io::read_tensor(path)
    } else {
        Ok(render::read_png(path)?.to_tensor())
    }
}

#[derive(Serialize)]
struct ScorecamSidecar<'a> {
    kind: &'static str,
    tensor: String,
    #[serde(flatten)]
    settings: &'a scorecam::ScoreCamSettings,
    reference_score: f64,
    scores: &'a [f64],
    weights: &'a [f64],
}

fn scorecam_one(channels: &Path, image: &Path, args: &ScorecamArgs, out: &Path, name: &str) -> Result<()> {
    let ca = ChannelActivations::new(tensor_io::read_tensor(channels)?, load_source_image(image)?)?;
    // A fresh evaluator per image: a subprocess session covers exactly one source image.
    let mut eval = make_evaluator(args.evaluator_cmd.as_deref(), args.toy_evaluator, args.toy_seed)?;
    let result = scorecam::scorecam_detailed(&ca, eval.as_mut())?;
    drop(eval);
    let tensor = format!("{name}.{}", tensor_io::TENSOR_EXTENSION);
    tensor_io::write_tensor(out.join(&tensor), &result.map)?;
    write_json(
        &out.join(format!("{name}.meta.json")),
        &ScorecamSidecar {
            kind: "ScoreCAM",
            tensor,
            settings: &result.settings,
            reference_score: result.reference_score,
            scores: &result.scores,
            weights: &result.weights,
        },
    )
}

fn cmd_scorecam(args: &ScorecamArgs) -> Result<()> {
    create_dir(&args.out)?;
    if let (Some(channels), Some(image)) = (&args.channels, &args.image) {
        return scorecam_one(channels, image, args, &args.out, &args.name);
    }
    if let (Some(manifest), Some(dir)) = (&args.manifest, &args.channels_dir) {
        let manifest = tensor_io::read_manifest(manifest)?;
        for img in &manifest.images {
            let channels = dir.join(format!("{}.{}", img.id, tensor_io::TENSOR_EXTENSION));
            scorecam_one(&channels, &img.path, args, &args.out, &img.id)?;
        }
        return Ok(());
    }
    Err(Error::invalid(
        "scorecam needs --channels with --image, or --manifest with --channels-dir",
    ))
}

fn cmd_render(
    input: &Path,
    out: &Path,
    normalization: Option<&str>,
    overlay_image: Option<&Path>,
    opts: &RenderOptions,
) -> Result<()> {
    create_dir(out)?;
    let sidecar = input.with_extension("meta.json");
    let map = if sidecar.exists() {
        stat_maps::read_stat_map(input)?
    } else {
        StatMap::from_tensor(StatKind::Mam, &tensor_io::read_tensor(input)?, Default::default())?
    };
    let mut spec = spec_for(&map, opts)?;
    if let Some(n) = normalization {
        spec.normalization = n.parse()?;
    }
    let name = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "map".into());
    render_map(out, &name, &map, &spec, opts.bins)?;
    if let Some(path) = overlay_image {
        let base = render::read_png(path)?;
        let (heat, bounds) = render::apply_colormap(&map, &spec)?;
        let blended = render::overlay(&base, &heat, opts.alpha)?;
        let png = format!("{name}.overlay.png");
        render::write_png(out.join(&png), &blended)?;
        render::write_render_sidecar(
            out,
            &format!("{name}.overlay"),
            &RenderSidecar {
                image: png,
                normalization: spec.normalization.to_string(),
                bounds,
                colormap: spec.colormap.name.clone(),
                alpha: Some(opts.alpha),
            },
        )?;
    }
    Ok(())
}

fn with_context(data: &DataArgs, f: impl FnOnce(&mut Context) -> Result<()>) -> Result<()> {
    let mut ctx = Context::open(&data.manifest, std::slice::from_ref(&data.method), &data.out)?;
    f(&mut ctx)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 0.5 {
        Ok(())
    } else {
        Err(Error::invalid(format!("--fraction {fraction} must lie in (0, 0.5]")))
    }
}

fn signed(sign: SignArgs) -> bool {
    !sign.absolute
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Partition { data, fraction } => {
            check_fraction(fraction)?;
            with_context(&data, |ctx| stage_partition(ctx, fraction))?;
        }
        Command::Stats { data, fraction, render } => {
            check_fraction(fraction)?;
            let opts = RenderOptions::from(&render);
            with_context(&data, |ctx| stage_stats(ctx, fraction, &opts))?;
        }
        Command::Diff {
            data,
            fraction,
            render,
            sign,
        } => {
            check_fraction(fraction)?;
            let opts = RenderOptions::from(&render);
            with_context(&data, |ctx| stage_diff(ctx, fraction, &opts, signed(sign)))?;
        }
        Command::Erc { data, fmr, ratios } => {
            let ratios = parse_ratios(&ratios)?;
            if !(fmr > 0.0 && fmr < 1.0) {
                return Err(Error::invalid(format!("--fmr {fmr} must lie in (0, 1)")));
            }
            with_context(&data, |ctx| stage_erc(ctx, fmr, &ratios))?;
        }
        Command::Overlap { data, fraction } => {
            check_fraction(fraction)?;
            with_context(&data, |ctx| stage_overlap(ctx, fraction))?;
        }
        Command::Admam {
            data,
            fraction,
            render,
            ids,
        } => {
            check_fraction(fraction)?;
            let opts = RenderOptions::from(&render);
            with_context(&data, |ctx| stage_admam(ctx, fraction, &opts, &ids))?;
        }
        Command::Scorecam(args) => cmd_scorecam(&args)?,
        Command::Render {
            input,
            out,
            normalization,
            overlay_image,
            render,
        } => cmd_render(
            &input,
            &out,
            normalization.as_deref(),
            overlay_image.as_deref(),
            &RenderOptions::from(&render),
        )?,
        Command::Report {
            data,
            fraction,
            fmr,
            ratios,
            render,
            sign,
            ids,
        } => {
            let config = RunConfig {
                manifest_path: data.manifest,
                methods: vec![data.method],
                fraction,
                target_fmr: fmr,
                ratios: parse_ratios(&ratios)?,
                output_dir: data.out,
                render: RenderOptions::from(&render),
                signed: signed(sign),
                panel_ids: ids,
            };
            return Ok(full_report(&config));
        }
        Command::Synth {
            out,
            subjects,
            images_per_subject,
            size,
            methods,
            impostor_pairs,
            no_pairs,
            seed,
        } => {
            let cfg = synthetic::SyntheticConfig {
                subjects,
                images_per_subject,
                size,
                methods,
                impostor_pairs,
                with_pairs: !no_pairs,
                seed,
            };
            for m in &cfg.methods {
                tensor_io::validate_id(m)?;
            }
            create_dir(&out)?;
            let path = synthetic::write_dataset(&out, &synthetic::generate(&cfg)?)?;
            println!("{}", path.display());
        }
        Command::ToyEvaluator { kind, seed } => {
            let mut eval = make_evaluator(None, Some(kind), seed)?;
            let stdin = io::stdin();
            let stdout = io::stdout();
            scorecam::evaluator_loop(eval.as_mut(), &mut stdin.lock(), &mut stdout.lock())?;
        }
    }
    Ok(0)
}

fn configure_threads() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("AMVA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails harmlessly if a pool already exists (e.g. repeated calls in tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run_subcommand<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            notice(e.to_string());
            e.exit_code()
        }
    }
}
