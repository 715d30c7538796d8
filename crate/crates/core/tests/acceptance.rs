//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Expected values come from the naive oracles below,
//! written independently of the library code paths.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use amva::erc;
use amva::partition::{self, SetKind};
use amva::scorecam::{self, ChannelActivations, Evaluator, LinearProjectionEvaluator, MeanPixelEvaluator};
use amva::stat_maps::{self, StatKind};
use amva::tensor_io::{self, FormatError};
use amva::{ActivationStack, ComparisonSet, Error, Label, Pair, QualityTable, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STATS_TOL: f64 = 1e-6;
const STATS_BUDGET: Duration = Duration::from_secs(5);
const IDENTITY_TOL: f64 = 1e-5;
const SHIFT_TOL: f64 = 1e-6;
const SCALE_REL_TOL: f64 = 1e-6;
const SCORECAM_TOL: f64 = 1e-6;
const SOFTMAX_TOL: f64 = 1e-6;
const REPORT_BUDGET: Duration = Duration::from_secs(30);

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- statistics oracles ----

struct Oracle {
    mean: Vec<f64>,
    std: Vec<f64>,
    median: Vec<f64>,
    mstd: Vec<f64>,
}

fn oracle(maps: &[Tensor]) -> Oracle {
    let n = maps.len() as f64;
    let pixels = maps[0].len();
    let mut o = Oracle {
        mean: vec![],
        std: vec![],
        median: vec![],
        mstd: vec![],
    };
    for p in 0..pixels {
        let xs: Vec<f64> = maps.iter().map(|m| m.data()[p] as f64).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let mut s = xs.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = s.len();
        let median = if k % 2 == 1 { s[k / 2] } else { (s[k / 2 - 1] + s[k / 2]) / 2.0 };
        let mvar = xs.iter().map(|x| (x - median) * (x - median)).sum::<f64>() / n;
        o.mean.push(mean);
        o.std.push(var.sqrt());
        o.median.push(median);
        o.mstd.push(mvar.sqrt());
    }
    o
}

fn random_stacks(seed: u64) -> Vec<Vec<Tensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..50)
        .map(|i| {
            let n = [1, 2, 3, 100][i % 4];
            (0..n)
                .map(|_| Tensor::from_2d(8, 8, (0..64).map(|_| rng.gen::<f32>()).collect()).unwrap())
                .collect()
        })
        .collect()
}

fn stats_of(maps: &[Tensor]) -> stat_maps::StackStats {
    stat_maps::stack_statistics(&ActivationStack::from_maps(maps.to_vec()).unwrap()).unwrap()
}

fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

fn stats_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for maps in random_stacks(11) {
        let s = stats_of(&maps);
        let o = oracle(&maps);
        for (name, got, want) in [
            ("MAM", &s.mam, &o.mean),
            ("AM-V", &s.am_v, &o.std),
            ("MDAM", &s.mdam, &o.median),
            ("AM-MV", &s.am_mv, &o.mstd),
        ] {
            let d = max_abs_diff(got.values(), want);
            worst = worst.max(d);
            check(d <= STATS_TOL, || format!("{name} off by {d:e} for N={}", maps.len()))?;
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < STATS_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("max err {worst:.1e}, {elapsed:.2?}"))
}

fn identity() -> Outcome {
    let mut worst = 0.0f64;
    for maps in random_stacks(12) {
        let s = stats_of(&maps);
        for p in 0..64 {
            let (mv, v) = (s.am_mv.values()[p] as f64, s.am_v.values()[p] as f64);
            let (m, md) = (s.mam.values()[p] as f64, s.mdam.values()[p] as f64);
            let d = ((mv * mv - v * v) - (m - md) * (m - md)).abs();
            worst = worst.max(d);
            check(d <= IDENTITY_TOL, || format!("identity off by {d:e} at pixel {p}"))?;
            check(s.am_mv.values()[p] >= s.am_v.values()[p], || {
                format!("AM-MV {mv} < AM-V {v} at pixel {p}, N={}", maps.len())
            })?;
        }
    }
    Ok(format!("max err {worst:.1e}"))
}

fn transform(maps: &[Tensor], f: impl Fn(f32) -> f32) -> Vec<Tensor> {
    maps.iter()
        .map(|m| Tensor::from_2d(8, 8, m.data().iter().map(|&v| f(v)).collect()).unwrap())
        .collect()
}

fn shift_scale() -> Outcome {
    // Dyadic inputs make the shift exact in f32, so MDAM must move bit-exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let stacks: Vec<Vec<Tensor>> = random_stacks(13)
        .into_iter()
        .map(|maps| transform(&maps, |v| (v * 256.0).floor() / 256.0))
        .collect();
    for maps in &stacks {
        let base = stats_of(maps);
        let c = [0.5f32, 3.0, -1.25][rng.gen_range(0..3)];
        let shifted = stats_of(&transform(maps, |v| v + c));
        for (name, a, b) in [("AM-V", &shifted.am_v, &base.am_v), ("AM-MV", &shifted.am_mv, &base.am_mv)] {
            let d = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max);
            check(d <= SHIFT_TOL, || format!("{name} moved by {d:e} under shift {c}"))?;
        }
        for p in 0..64 {
            let dm = (shifted.mam.values()[p] as f64 - (base.mam.values()[p] as f64 + c as f64)).abs();
            check(dm <= SHIFT_TOL, || format!("MAM shift off by {dm:e}"))?;
            check(shifted.mdam.values()[p] == base.mdam.values()[p] + c, || "MDAM shift not exact".into())?;
        }

        // Factors that keep the scaled dyadic inputs exact, so any error is the library's.
        let s = [2.0f32, 3.0, 0.75, 5.0, 0.25][rng.gen_range(0..5)];
        let scaled = stats_of(&transform(maps, |v| v * s));
        for (name, a, b) in [
            ("MAM", &scaled.mam, &base.mam),
            ("MDAM", &scaled.mdam, &base.mdam),
            ("AM-V", &scaled.am_v, &base.am_v),
            ("AM-MV", &scaled.am_mv, &base.am_mv),
        ] {
            for (&x, &y) in a.values().iter().zip(b.values()) {
                let want = y as f64 * s as f64;
                let rel = (x as f64 - want).abs() / want.abs().max(f64::MIN_POSITIVE);
                check(x as f64 == want || rel <= SCALE_REL_TOL, || {
                    format!("{name} scale by {s}: {x} vs {want} (rel {rel:e})")
                })?;
            }
        }
    }
    Ok(format!("{} stacks", stacks.len()))
}

// ---- quantiles and overlap ----

fn tied_table(rng: &mut impl Rng, method: &str, ids: &[String]) -> QualityTable {
    let levels = rng.gen_range(2..8);
    QualityTable::new(
        method,
        ids.iter().map(|id| (id.clone(), rng.gen_range(0..levels) as f64 / 4.0)),
    )
    .unwrap()
}

fn sort_oracle(table: &QualityTable, fraction: f64, kind: SetKind) -> Vec<String> {
    let mut rows: Vec<(String, f64)> = table.iter().map(|(id, s)| (id.to_string(), s)).collect();
    rows.sort_by(|a, b| {
        let by_score = match kind {
            SetKind::High => b.1.partial_cmp(&a.1).unwrap(),
            SetKind::Low => a.1.partial_cmp(&b.1).unwrap(),
        };
        by_score.then_with(|| a.0.cmp(&b.0))
    });
    let count = (fraction * rows.len() as f64 + 1e-9).floor() as usize;
    rows.into_iter().take(count).map(|r| r.0).collect()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img{i:04}")).collect()
}

fn quantile_overlap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut matrices = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(2..80);
        let ids = ids(n);
        let fraction = rng.gen_range(1..=50) as f64 / 100.0;
        if partition::quantile_count(fraction, n) == 0 {
            continue;
        }
        let tables: Vec<QualityTable> = (0..4).map(|m| tied_table(&mut rng, &format!("m{m}"), &ids)).collect();
        for kind in [SetKind::High, SetKind::Low] {
            let mut sets = Vec::new();
            for t in &tables {
                let got = partition::select_quantile(t, fraction, kind).unwrap();
                let want = sort_oracle(t, fraction, kind);
                check(got.image_ids == want, || format!("trial {trial}: {kind:?} selection differs"))?;

                // Strictly increasing transforms keep ties and order.
                for f in [|x: f64| x.exp(), |x: f64| 3.0 * x - 7.0, |x: f64| x * x * x + x] {
                    let moved = partition::select_quantile(&t.map_scores(f), fraction, kind).unwrap();
                    check(moved.image_ids == got.image_ids, || format!("trial {trial}: not rank invariant"))?;
                }
                sets.push(got);
            }
            let m = partition::overlap_matrix(&sets).unwrap();
            matrices += 1;
            for i in 0..4 {
                check(m.get(i, i) == 1.0, || "diagonal not 1".into())?;
                for j in 0..4 {
                    check(m.get(i, j) == m.get(j, i), || "not symmetric".into())?;
                    let a: HashSet<&String> = sets[i].image_ids.iter().collect();
                    let both = sets[j].image_ids.iter().filter(|id| a.contains(id)).count();
                    let want = both as f64 / sets[i].image_ids.len() as f64;
                    check(m.get(i, j) == want, || format!("overlap {} vs {want}", m.get(i, j)))?;
                }
            }
        }
    }
    Ok(format!("{matrices} matrices"))
}

// ---- ERC ----

struct ErcData {
    pairs: ComparisonSet,
    quality: QualityTable,
    degraded: BTreeSet<String>,
    images: usize,
}

/// 60 subjects × 4 images. Degraded images make every genuine pair they
/// touch score low; quality ranks them strictly below all other images.
fn erc_data() -> ErcData {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let ids: Vec<(String, usize)> = (0..60).flat_map(|s| (0..4).map(move |i| (format!("s{s:02}_{i}"), s))).collect();
    let degraded: BTreeSet<String> = ids.iter().filter(|_| rng.gen_bool(0.12)).map(|(id, _)| id.clone()).collect();
    let mut pairs = Vec::new();
    for (a, (ia, sa)) in ids.iter().enumerate() {
        for (ib, sb) in &ids[a + 1..] {
            if sa == sb {
                let bad = degraded.contains(ia) || degraded.contains(ib);
                let score = if bad { rng.gen_range(0.0..0.3) } else { rng.gen_range(0.5..1.0) };
                pairs.push(Pair {
                    id_a: ia.clone(),
                    id_b: ib.clone(),
                    score,
                    label: Label::Genuine,
                });
            } else if rng.gen_bool(0.06) {
                pairs.push(Pair {
                    id_a: ia.clone(),
                    id_b: ib.clone(),
                    score: rng.gen_range(-0.2..0.45),
                    label: Label::Impostor,
                });
            }
        }
    }
    let quality = QualityTable::new(
        "q",
        ids.iter().map(|(id, _)| {
            let base = if degraded.contains(id) { 0.0 } else { 1.0 };
            (id.clone(), base + rng.gen::<f64>() * 0.5)
        }),
    )
    .unwrap();
    ErcData {
        pairs: ComparisonSet::new(pairs),
        quality,
        degraded,
        images: ids.len(),
    }
}

/// Smallest candidate threshold whose FMR does not exceed the target, by
/// trying every impostor score and one value above the maximum.
fn sweep_threshold(impostors: &[f64], target: f64) -> f64 {
    let max = impostors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut candidates: Vec<f64> = impostors.to_vec();
    candidates.push(f64::from_bits(max.to_bits() + if max >= 0.0 { 1 } else { u64::MAX }));
    candidates
        .into_iter()
        .filter(|&t| impostors.iter().filter(|&&s| s >= t).count() as f64 / impostors.len() as f64 <= target)
        .fold(f64::INFINITY, f64::min)
}

fn erc_criterion() -> Outcome {
    let d = erc_data();
    let impostors = d.pairs.impostor_scores();
    check(d.images >= 200 && d.pairs.pairs.len() >= 1000, || "synthetic set too small".into())?;
    for target in [0.001, 0.01, 0.05, 0.1, 0.3, 0.5] {
        let got = erc::threshold_at_fmr(&impostors, target).unwrap();
        let want = sweep_threshold(&impostors, target);
        check(got == want, || format!("threshold at {target}: {got} vs sweep {want}"))?;
    }

    let target = 0.01;
    let t = erc::threshold_at_fmr(&impostors, target).unwrap();
    let genuine: Vec<f64> = d.pairs.genuine().map(|p| p.score).collect();
    let direct = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
    let ratios: Vec<f64> = (0..50).map(|i| i as f64 / 100.0).collect();
    let curve = erc::erc_curve(&d.pairs, &d.quality, target, &ratios).unwrap();
    check(curve.points[0].fnmr == direct, || format!("FNMR(0) {} vs {direct}", curve.points[0].fnmr))?;
    check(direct > 0.0, || "no genuine failures at threshold".into())?;

    for w in curve.points.windows(2) {
        check(w[1].fnmr <= w[0].fnmr, || {
            format!("FNMR rose from {} to {} at r={}", w[0].fnmr, w[1].fnmr, w[1].reject_ratio)
        })?;
    }
    let zero_at = (d.degraded.len() as f64 / d.images as f64 * 100.0).ceil() / 100.0;
    let reached = curve.points.iter().find(|p| p.fnmr == 0.0).map(|p| p.reject_ratio);
    check(reached.is_some_and(|r| r <= zero_at + 1e-12), || format!("curve never reached 0 by r={zero_at}"))?;
    Ok(format!(
        "{} images, {} pairs, FNMR(0)={direct:.3}, zero at r={}",
        d.images,
        d.pairs.pairs.len(),
        reached.unwrap()
    ))
}

// ---- ScoreCAM ----

struct Constant;

impl Evaluator for Constant {
    fn score(&mut self, _: &Tensor) -> amva::Result<f64> {
        Ok(0.25)
    }
    fn describe(&self) -> String {
        "const".into()
    }
}

fn naive_normalize(ch: &[f32]) -> Vec<f64> {
    let lo = ch.iter().fold(f32::INFINITY, |a, &b| a.min(b)) as f64;
    let hi = ch.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    ch.iter().map(|&v| if hi > lo { (v as f64 - lo) / (hi - lo) } else { 0.0 }).collect()
}

/// Corner-aligned bilinear interpolation written straight from the definition.
fn naive_upsample(src: &[f64], h: usize, w: usize, big_h: usize, big_w: usize) -> Vec<f64> {
    let coord = |i: usize, n: usize, m: usize| if m > 1 { i as f64 * (n - 1) as f64 / (m - 1) as f64 } else { 0.0 };
    let mut out = Vec::new();
    for y in 0..big_h {
        for x in 0..big_w {
            let (sy, sx) = (coord(y, h, big_h), coord(x, w, big_w));
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let v = |yy: usize, xx: usize| src[yy * w + xx];
            out.push(
                v(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + v(y0, x1) * (1.0 - fy) * fx
                    + v(y1, x0) * fy * (1.0 - fx)
                    + v(y1, x1) * fy * fx,
            );
        }
    }
    out
}

fn random_tensor(rng: &mut impl Rng, dims: Vec<usize>) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

fn scorecam_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let source = random_tensor(&mut rng, vec![12, 10, 3]);

        // K = 1: the single weight is 1, the output is the upsampled channel.
        let ch = random_tensor(&mut rng, vec![1, 4, 5]);
        let ca = ChannelActivations::new(ch.clone(), source.clone()).unwrap();
        let out = scorecam::scorecam_detailed(&ca, &mut LinearProjectionEvaluator::new(1)).unwrap();
        let u = scorecam::upsample_bilinear(&scorecam::normalize_channel(&ca.channel(0)), 12, 10).unwrap();
        check(out.weights == [1.0], || format!("K=1 weight {:?}", out.weights))?;
        check(out.map == u, || "K=1 output differs from the upsampled channel".into())?;

        // Symmetric K = 2: equal scores give weights of exactly one half.
        let ch = random_tensor(&mut rng, vec![2, 3, 3]);
        let ca = ChannelActivations::new(ch, source.clone()).unwrap();
        let out = scorecam::scorecam_detailed(&ca, &mut Constant).unwrap();
        check(out.weights == [0.5, 0.5], || format!("K=2 weights {:?}", out.weights))?;
        let u0 = scorecam::upsample_bilinear(&scorecam::normalize_channel(&ca.channel(0)), 12, 10).unwrap();
        let u1 = scorecam::upsample_bilinear(&scorecam::normalize_channel(&ca.channel(1)), 12, 10).unwrap();
        for p in 0..120 {
            let want = (0.5 * u0.data()[p] as f64 + 0.5 * u1.data()[p] as f64) as f32;
            check(out.map.data()[p] == want, || "K=2 output not the exact average".into())?;
        }

        // K = 3 against a from-scratch reimplementation, for both toy evaluators.
        let seed = rng.gen::<u64>();
        let ch = random_tensor(&mut rng, vec![3, 4, 4]);
        let ca = ChannelActivations::new(ch.clone(), source.clone()).unwrap();
        let proj = LinearProjectionEvaluator::weights_for(seed, source.len());
        let masks: Vec<Vec<f64>> = (0..3)
            .map(|k| naive_upsample(&naive_normalize(&ch.data()[k * 16..(k + 1) * 16]), 4, 4, 12, 10))
            .collect();
        let upper = masks.iter().flatten().copied().fold(0.0, f64::max);
        for linear in [true, false] {
            let out = if linear {
                scorecam::scorecam_detailed(&ca, &mut LinearProjectionEvaluator::new(seed)).unwrap()
            } else {
                scorecam::scorecam_detailed(&ca, &mut MeanPixelEvaluator).unwrap()
            };
            let scores: Vec<f64> = masks
                .iter()
                .map(|m| {
                    let total: f64 = (0..source.len())
                        .map(|i| {
                            let masked = source.data()[i] as f64 * m[i / 3];
                            if linear { masked * proj[i] as f64 } else { masked }
                        })
                        .sum();
                    total / source.len() as f64
                })
                .collect();
            let exps: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let z: f64 = exps.iter().sum();
            let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
            let sum: f64 = out.weights.iter().sum();
            check((sum - 1.0).abs() <= SOFTMAX_TOL, || format!("weights sum to {sum}"))?;
            for (p, &got) in out.map.data().iter().enumerate() {
                let want = (0..3).map(|k| weights[k] * masks[k][p]).sum::<f64>().max(0.0);
                let got = got as f64;
                worst = worst.max((got - want).abs());
                check((got - want).abs() <= SCORECAM_TOL, || format!("K=3 pixel {p}: {got} vs {want}"))?;
                check(got >= 0.0 && got <= upper + SCORECAM_TOL, || format!("pixel {p} = {got} outside [0, {upper}]"))?;
            }
        }
    }
    Ok(format!("max K=3 err {worst:.1e}"))
}

// ---- AD-MAM ----

fn admam_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let maps: Vec<Tensor> = (0..rng.gen_range(1..20)).map(|_| random_tensor(&mut rng, vec![8, 8])).collect();
        let mam = stats_of(&maps).mam;
        let self_dev = stat_maps::ad_mam(&mam.to_tensor(), &mam).unwrap();
        check(self_dev.values().iter().all(|&v| v == 0.0), || "AD-MAM of MAM_H is not zero".into())?;
        let x = random_tensor(&mut rng, vec![8, 8]);
        let d = stat_maps::ad_mam(&x, &mam).unwrap();
        for p in 0..64 {
            check(d.values()[p] == (x.data()[p] - mam.values()[p]).abs(), || format!("pixel {p} differs"))?;
        }
        check(d.kind == StatKind::AdMam, || "wrong kind".into())?;
    }
    Ok("100 cases".into())
}

// ---- tensor I/O ----

fn io_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for i in 0..1000 {
        let rank = rng.gen_range(1..=4);
        let dims: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..6)).collect();
        let n: usize = dims.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v = f32::from_bits(rng.gen());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let t = Tensor::new(dims, data).unwrap();
        let path = dir.path().join(format!("t{}.amvt", i % 7));
        tensor_io::write_tensor(&path, &t).unwrap();
        let back = tensor_io::read_tensor(&path).map_err(|e| e.to_string())?;
        let same = back.dims() == t.dims()
            && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        check(same, || format!("tensor {i} did not round-trip"))?;
        check(std::fs::read(&path).unwrap() == tensor_io::encode_tensor(&t), || "file bytes differ".into())?;
    }

    let good = tensor_io::encode_tensor(&Tensor::from_2d(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let mut corpus: Vec<(String, Vec<u8>, fn(&FormatError) -> bool)> = Vec::new();
    for magic in [&b"AMVX"[..], b"\0\0\0\0", b"PNG\x89"] {
        let mut b = good.clone();
        b[..4].copy_from_slice(magic);
        corpus.push((format!("magic {magic:?}"), b, |e| matches!(e, FormatError::BadMagic)));
    }
    for len in 0..good.len() {
        corpus.push((format!("truncated to {len}"), good[..len].to_vec(), |e| matches!(e, FormatError::Truncated)));
    }
    for (idx, bits) in [(0usize, f32::NAN.to_bits()), (5, 0x7fc0_0001), (2, f32::INFINITY.to_bits())] {
        let mut b = good.clone();
        let at = good.len() - 24 + 4 * idx;
        b[at..at + 4].copy_from_slice(&bits.to_le_bytes());
        corpus.push((format!("non-finite at {idx}"), b, |e| matches!(e, FormatError::NonFinite(_))));
    }
    for (name, bytes, expected) in &corpus {
        let path = dir.path().join("bad.amvt");
        std::fs::write(&path, bytes).unwrap();
        match tensor_io::read_tensor(&path) {
            Err(e @ Error::Format { .. }) => {
                let Error::Format { source, .. } = &e else { unreachable!() };
                check(expected(source), || format!("{name}: wrong kind {source:?}"))?;
                check(e.exit_code() == 2, || format!("{name}: exit code {}", e.exit_code()))?;
            }
            other => return Err(format!("{name}: expected a format error, got {other:?}")),
        }
    }
    Ok(format!("1000 round-trips, {} malformed files rejected", corpus.len()))
}

// ---- determinism ----

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = amva::synthetic::SyntheticConfig::default();
    check(cfg.subjects * cfg.images_per_subject == 20 && cfg.methods.len() == 2, || "config drifted".into())?;
    let manifest = amva::synthetic::write_dataset(dir.path(), &amva::synthetic::generate(&cfg).unwrap()).unwrap();
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(format!("out_{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_amva"))
            .args(["report", "--manifest"])
            .arg(&manifest)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), || format!("report exited with {:?}", status.status.code()))?;
        trees.push(tree(&out));
    }
    let elapsed = start.elapsed();
    check(trees[0].len() > 50, || format!("only {} artifacts", trees[0].len()))?;
    check(trees[0] == trees[1], || "artifact trees differ".into())?;
    check(elapsed < REPORT_BUDGET, || format!("took {elapsed:?}"))?;
    let tensors = trees[0].keys().filter(|k| k.ends_with(".amvt")).count();
    let sidecars = trees[0].keys().filter(|k| k.ends_with(".meta.json")).count();
    check(tensors == sidecars, || format!("{tensors} tensors but {sidecars} sidecars"))?;
    Ok(format!("{} identical files, {elapsed:.2?}", trees[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("stats-oracle", stats_oracle),
        ("median-identity", identity),
        ("shift-scale", shift_scale),
        ("quantile-overlap", quantile_overlap),
        ("erc", erc_criterion),
        ("scorecam", scorecam_criterion),
        ("ad-mam", admam_criterion),
        ("tensor-io", io_criterion),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
