//! Seeded toy datasets with the same shape as real extractions.
//!
//! Each image has a hidden utility `u ∈ [0, 1]`. Its activation map is a
//! Gaussian blob whose center jitter, width and background noise all grow as
//! `u` drops, so low-utility sets show larger per-pixel variation. Quality
//! scores for each method are `u` plus method-specific noise, and genuine
//! comparison scores degrade with the lower utility of the pair.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::render::{self, RgbImage};
use crate::tensor_io::{
    self, ComparisonSet, Label, Manifest, ManifestImage, Pair, QualityTable, Tensor,
};

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub subjects: usize,
    pub images_per_subject: usize,
    /// Maps and images are `size`×`size`.
    pub size: usize,
    pub methods: Vec<String>,
    pub impostor_pairs: usize,
    pub with_pairs: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            subjects: 5,
            images_per_subject: 4,
            size: 16,
            methods: vec!["alpha".into(), "beta".into()],
            impostor_pairs: 60,
            with_pairs: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub id: String,
    pub subject: String,
    pub utility: f64,
    pub activation: Tensor,
    pub image: RgbImage,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub images: Vec<SyntheticImage>,
    pub quality: Vec<QualityTable>,
    pub pairs: Option<ComparisonSet>,
}

/// U[0, 1] maps, the stack used by the statistics oracles.
pub fn uniform_maps(rng: &mut impl Rng, n: usize, height: usize, width: usize) -> Vec<Tensor> {
    (0..n)
        .map(|_| {
            let data = (0..height * width).map(|_| rng.gen::<f32>()).collect();
            Tensor::from_2d(height, width, data).expect("dims match")
        })
        .collect()
}

/// Activation map of one image with utility `u`.
pub fn blob_map(rng: &mut impl Rng, size: usize, u: f64) -> Tensor {
    let s = size as f64;
    let jitter = Normal::new(0.0, (1.0 - u) * 0.2 * s + 1e-3).expect("positive sigma");
    let cy = (s - 1.0) / 2.0 + jitter.sample(rng);
    let cx = (s - 1.0) / 2.0 + jitter.sample(rng);
    let sigma = s * (0.15 + 0.15 * (1.0 - u));
    let noise = 0.3 * (1.0 - u);
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let v = (-d2 / (2.0 * sigma * sigma)).exp() + noise * rng.gen::<f64>();
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::from_2d(size, size, data).expect("dims match")
}

/// A gray oval "face" on a darker background; brightness tracks utility.
fn face_image(size: usize, u: f64) -> RgbImage {
    let mut img = RgbImage::new(size, size, [30, 30, 30]);
    let c = (size as f64 - 1.0) / 2.0;
    let level = (90.0 + 140.0 * u).round() as u8;
    for y in 0..size {
        for x in 0..size {
            let dy = (y as f64 - c) / (0.45 * size as f64);
            let dx = (x as f64 - c) / (0.35 * size as f64);
            if dx * dx + dy * dy <= 1.0 {
                img.put(x, y, [level, level.saturating_sub(20), level.saturating_sub(40)]);
            }
        }
    }
    img
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.subjects == 0 || cfg.images_per_subject == 0 || cfg.size == 0 {
        return Err(Error::invalid("synthetic dataset needs subjects, images and a size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut images = Vec::new();
    for s in 0..cfg.subjects {
        for i in 0..cfg.images_per_subject {
            let utility: f64 = rng.gen();
            images.push(SyntheticImage {
                id: format!("s{s:03}_{i:02}"),
                subject: format!("s{s:03}"),
                utility,
                activation: blob_map(&mut rng, cfg.size, utility),
                image: face_image(cfg.size, utility),
            });
        }
    }

    let mut quality = Vec::new();
    for (m, method) in cfg.methods.iter().enumerate() {
        let noise = Normal::new(0.0, 0.05 + 0.1 * m as f64).expect("positive sigma");
        let rows = images
            .iter()
            .map(|img| (img.id.clone(), img.utility + noise.sample(&mut rng)));
        quality.push(QualityTable::new(method.clone(), rows)?);
    }

    let pairs = cfg.with_pairs.then(|| {
        let mut pairs = Vec::new();
        let genuine_noise = Normal::new(0.0, 0.08).expect("positive sigma");
        for (a, ia) in images.iter().enumerate() {
            for ib in &images[a + 1..] {
                if ia.subject == ib.subject {
                    let u = ia.utility.min(ib.utility);
                    pairs.push(Pair {
                        id_a: ia.id.clone(),
                        id_b: ib.id.clone(),
                        score: 0.25 + 0.55 * u + genuine_noise.sample(&mut rng),
                        label: Label::Genuine,
                    });
                }
            }
        }
        let impostor_noise = Normal::new(0.1, 0.1).expect("positive sigma");
        let mut cross: Vec<(usize, usize)> = (0..images.len())
            .flat_map(|a| (a + 1..images.len()).map(move |b| (a, b)))
            .filter(|&(a, b)| images[a].subject != images[b].subject)
            .collect();
        cross.shuffle(&mut rng);
        for (a, b) in cross.into_iter().take(cfg.impostor_pairs) {
            pairs.push(Pair {
                id_a: images[a].id.clone(),
                id_b: images[b].id.clone(),
                score: impostor_noise.sample(&mut rng),
                label: Label::Impostor,
            });
        }
        ComparisonSet::new(pairs)
    });

    Ok(SyntheticData {
        images,
        quality,
        pairs,
    })
}

/// Writes the dataset under `dir` with relative paths and returns the
/// manifest location:
///
/// ```text
/// manifest.json  activations/<id>.amvt  images/<id>.png
/// quality_<method>.csv  pairs.csv
/// ```
pub fn write_dataset(dir: &Path, data: &SyntheticData) -> Result<PathBuf> {
    let mkdir = |p: PathBuf| std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e));
    mkdir(dir.join("activations"))?;
    mkdir(dir.join("images"))?;
    let mut manifest = Manifest {
        images: Vec::new(),
        activation_dir: PathBuf::from("activations"),
        quality_files: Default::default(),
        pairs_file: None,
    };
    for img in &data.images {
        tensor_io::write_tensor(dir.join("activations").join(format!("{}.amvt", img.id)), &img.activation)?;
        let rel = PathBuf::from("images").join(format!("{}.png", img.id));
        render::write_png(dir.join(&rel), &img.image)?;
        manifest.images.push(ManifestImage {
            id: img.id.clone(),
            path: rel,
            subject: img.subject.clone(),
        });
    }
    for q in &data.quality {
        let rel = PathBuf::from(format!("quality_{}.csv", q.method));
        tensor_io::write_quality_csv(dir.join(&rel), q)?;
        manifest.quality_files.insert(q.method.clone(), rel);
    }
    if let Some(pairs) = &data.pairs {
        tensor_io::write_pairs_csv(dir.join("pairs.csv"), pairs)?;
        manifest.pairs_file = Some(PathBuf::from("pairs.csv"));
    }
    let path = dir.join("manifest.json");
    tensor_io::write_manifest(&path, &manifest)?;
    Ok(path)
}
