//! One function per subcommand. Each resolves its directories from the
//! configuration, does the work through the core crate, echoes the
//! effective configuration next to its outputs, and prints a short
//! plain-text summary on stdout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use viddepth_core::error::{Error, Result};
use viddepth_core::eval::{self, SequenceScores};
use viddepth_core::infer::{self, StitchVariant};
use viddepth_core::io::{load_tensor, save_tensor};
use viddepth_core::net::{self, DenoiserParams, NetConfig};
use viddepth_core::rng::derive_seed;
use viddepth_core::synth::{self, CorpusStyle};
use viddepth_core::train::{CorpusIndex, LatentCache};
use viddepth_core::video::{DepthSeq, VideoSeq};
use viddepth_core::Rng;

use crate::config::CliConfig;

/// Which part of the data tree `gen-data` should (re)build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DataStyle {
    All,
    Realistic,
    Synthetic,
    Eval,
}

impl DataStyle {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(DataStyle::All),
            "realistic" => Ok(DataStyle::Realistic),
            "synthetic" => Ok(DataStyle::Synthetic),
            "eval" => Ok(DataStyle::Eval),
            other => Err(Error::Config(format!(
                "unknown style {other:?}; expected all, realistic, synthetic, or eval"
            ))),
        }
    }

    fn covers(self, style: CorpusStyle) -> bool {
        match style {
            CorpusStyle::Realistic => matches!(self, DataStyle::All | DataStyle::Realistic),
            CorpusStyle::Synthetic => matches!(self, DataStyle::All | DataStyle::Synthetic),
        }
    }
}

/// Builds the training corpus and the held-out evaluation suite under the
/// data directory. Regenerating one style rewrites only that part and
/// merges the manifest; the same seed always reproduces the same bytes.
pub fn cmd_gen_data(cfg: &CliConfig, seed: u64, out: Option<&Path>, style: &str) -> Result<()> {
    let style = DataStyle::parse(style)?;
    let out = out.unwrap_or(&cfg.paths.data_dir);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let d = &cfg.data;

    let manifest_path = out.join("manifest.tsv");
    let mut entries = if manifest_path.exists() {
        synth::read_manifest(&manifest_path)?
            .into_iter()
            .filter(|e| !style.covers(e.style))
            .collect()
    } else {
        Vec::new()
    };
    let mut counts = BTreeMap::new();
    for (corpus_style, count) in [
        (CorpusStyle::Realistic, d.realistic_count),
        (CorpusStyle::Synthetic, d.synthetic_count),
    ] {
        if !style.covers(corpus_style) {
            continue;
        }
        let built =
            synth::build_corpus(out, corpus_style, count, d.len_lo, d.len_hi, d.height, d.width, seed)?;
        counts.insert(corpus_style.as_str(), built.len());
        entries.extend(built);
    }
    if !counts.is_empty() {
        entries.sort_by(|a, b| (a.style.as_str(), &a.id).cmp(&(b.style.as_str(), &b.id)));
        synth::write_manifest(&manifest_path, &entries)?;
        let parts: Vec<String> = counts.iter().map(|(s, n)| format!("{n} {s}")).collect();
        println!("generated {} sequences in {}", parts.join(" + "), out.display());
    }

    if matches!(style, DataStyle::All | DataStyle::Eval) {
        // Held-out suite: clean scenes with metric ground truth, never
        // listed in the training manifest.
        let eval_seed = derive_seed(seed, 2);
        for i in 0..d.eval_count {
            let sseed = derive_seed(eval_seed, 1 + i as u64);
            let seq =
                synth::generate_sequence(CorpusStyle::Synthetic, d.eval_len, d.height, d.width, sseed)?;
            let dir = out.join("eval").join(format!("{i:04}"));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            save_tensor(dir.join("video.dcrf"), seq.video.tensor())?;
            save_tensor(dir.join("depth_metric.dcrf"), seq.depth_metric.tensor())?;
        }
        println!(
            "generated {} eval sequences in {}",
            d.eval_count,
            out.join("eval").display()
        );
    }

    cfg.write_effective(out, seed)
}

fn parse_stage_range(s: &str) -> Result<(u8, u8)> {
    let bad = || Error::Config(format!("invalid stage range {s:?}; expected N or A-B within 1..=3"));
    let parse_one = |p: &str| p.trim().parse::<u8>().map_err(|_| bad());
    let (start, end) = match s.split_once('-') {
        Some((a, b)) => (parse_one(a)?, parse_one(b)?),
        None => {
            let n = parse_one(s)?;
            (n, n)
        }
    };
    if !(1..=3).contains(&start) || end < start || end > 3 {
        return Err(bad());
    }
    Ok((start, end))
}

/// Runs the requested training stages, resuming from the previous stage's
/// checkpoint when the range does not start at 1. Checkpoints and loss
/// traces land under `run_dir/train/stage{N}`.
pub fn cmd_train(cfg: &CliConfig, seed: u64, stages: &str) -> Result<()> {
    let (start, end) = parse_stage_range(stages)?;
    let train_dir = cfg.paths.run_dir.join("train");
    let realistic = CorpusIndex::open(&cfg.paths.data_dir, CorpusStyle::Realistic)?;
    let synthetic = CorpusIndex::open(&cfg.paths.data_dir, CorpusStyle::Synthetic)?;
    let cache = LatentCache::new(Some(cfg.paths.run_dir.join("cache")), cfg.codec);

    let mut params = if start == 1 {
        let mut rng = Rng::new(derive_seed(seed, 0));
        DenoiserParams::init(&cfg.net, cfg.codec.latent_channels(3), &mut rng)?
    } else {
        let prev = train_dir.join(format!("stage{}", start - 1));
        if !prev.join("manifest.txt").is_file() {
            return Err(Error::Config(format!(
                "cannot start at stage {start}: no checkpoint at {}",
                prev.display()
            )));
        }
        let (params, ckpt_net) = net::load_checkpoint(&prev)?;
        if ckpt_net != cfg.net {
            return Err(Error::Config(format!(
                "checkpoint at {} was trained with a different net configuration",
                prev.display()
            )));
        }
        params
    };

    let stage_cfgs = cfg.stages();
    let traces = viddepth_core::train::run_pipeline(
        &mut params,
        &cfg.net,
        &stage_cfgs,
        start,
        end,
        &realistic,
        &synthetic,
        &cache,
        &train_dir,
        seed,
    )?;
    for (stage, trace) in (start..=end).zip(&traces) {
        let last = trace.last().map(|r| r.loss).unwrap_or(f64::NAN);
        println!("stage {stage}: {} iterations, final loss {last:.4}", trace.len());
    }
    cfg.write_effective(&train_dir, seed)
}

fn load_checkpoint_at(path: &Path) -> Result<(DenoiserParams<f32>, NetConfig)> {
    if !path.join("manifest.txt").is_file() {
        return Err(Error::Data(format!(
            "no checkpoint at {}; train first or pass --checkpoint",
            path.display()
        )));
    }
    net::load_checkpoint(path)
}

/// Predicts depth for one video file and writes it as a single tensor.
#[allow(clippy::too_many_arguments)]
pub fn cmd_infer(
    cfg: &CliConfig,
    seed: u64,
    video_path: &Path,
    out: &Path,
    checkpoint: Option<&Path>,
    steps: Option<usize>,
    variant: &str,
) -> Result<()> {
    let variant = StitchVariant::parse(variant)?;
    let mut cfg = cfg.clone();
    if let Some(steps) = steps {
        cfg.edm.steps = steps;
    }
    let default_ckpt = cfg.paths.run_dir.join("train").join("stage3");
    let (params, net_cfg) = load_checkpoint_at(checkpoint.unwrap_or(&default_ckpt))?;
    let video = VideoSeq::new(load_tensor(video_path)?)?;
    let icfg = cfg.infer_config();
    let depth = infer::infer_long_variant(&params, &net_cfg, &video, &icfg, seed, variant)?;
    let out_dir = out.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_tensor(out, depth.tensor())?;
    println!(
        "inferred {} frames of {}x{} depth -> {}",
        depth.frames(),
        depth.height(),
        depth.width(),
        out.display()
    );
    cfg.write_effective(out_dir.unwrap_or(Path::new(".")), seed)
}

/// Ground-truth sequences found under a directory: either flat
/// `{id}.dcrf` files or `{id}/depth_metric.dcrf` subdirectories.
fn discover_gt(gt_dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut found = BTreeMap::new();
    let rd = std::fs::read_dir(gt_dir).map_err(|e| Error::io(gt_dir, e))?;
    let mut paths: Vec<PathBuf> = rd
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(gt_dir, e))?;
    paths.sort();
    for path in paths {
        if path.extension().is_some_and(|x| x == "dcrf") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                // A flat file wins over a same-named subdirectory.
                found.insert(stem.to_string(), path.clone());
            }
        } else if path.is_dir() {
            let nested = path.join("depth_metric.dcrf");
            if nested.is_file() {
                if let Some(name) = path.file_name().and_then(|s| s.to_str()) {
                    found.entry(name.to_string()).or_insert(nested);
                }
            }
        }
    }
    if found.is_empty() {
        return Err(Error::Data(format!(
            "no ground-truth depth found under {}",
            gt_dir.display()
        )));
    }
    Ok(found)
}

/// Scores predictions against ground truth and writes `report.tsv`.
/// With a profile row, also writes one space-time slice image per id.
pub fn cmd_eval(
    cfg: &CliConfig,
    seed: u64,
    pred_dir: &Path,
    gt_dir: &Path,
    out: Option<&Path>,
    profile_row: Option<usize>,
) -> Result<()> {
    let default_out = cfg.paths.run_dir.join("eval");
    let out = out.unwrap_or(&default_out);
    let gt = discover_gt(gt_dir)?;

    let missing: Vec<&str> = gt
        .keys()
        .filter(|id| !pred_dir.join(format!("{id}.dcrf")).is_file())
        .map(|s| s.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "missing predictions in {} for: {}",
            pred_dir.display(),
            missing.join(", ")
        )));
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows: Vec<(String, SequenceScores)> = Vec::new();
    for (id, gt_path) in &gt {
        let pred = DepthSeq::new(load_tensor(pred_dir.join(format!("{id}.dcrf")))?)?;
        let gt_depth = DepthSeq::new(load_tensor(gt_path)?)?;
        if let Some(y) = profile_row {
            if y >= pred.height() {
                return Err(Error::Config(format!(
                    "profile row {y} out of range for {id} with height {}",
                    pred.height()
                )));
            }
            let profile = eval::temporal_profile(&pred, y)?;
            eval::write_pgm(&out.join(format!("{id}.pgm")), &profile)?;
        }
        let scores = eval::evaluate_sequence(&pred, &gt_depth, &cfg.eval)?;
        rows.push((id.clone(), scores));
    }
    eval::write_report(&out.join("report.tsv"), &rows)?;
    let n = rows.len() as f64;
    let absrel = rows.iter().map(|(_, s)| s.absrel).sum::<f64>() / n;
    let delta1 = rows.iter().map(|(_, s)| s.delta1).sum::<f64>() / n;
    println!(
        "evaluated {} sequences: mean absrel {absrel:.4}, mean delta1 {delta1:.4}",
        rows.len()
    );
    cfg.write_effective(out, seed)
}

/// Sequences of an inference suite: subdirectories holding `video.dcrf`.
fn discover_suite(suite: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = std::fs::read_dir(suite).map_err(|e| Error::io(suite, e))?;
    let mut seqs = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(suite, e))?.path();
        let video = path.join("video.dcrf");
        if video.is_file() {
            if let Some(name) = path.file_name().and_then(|s| s.to_str()) {
                seqs.push((name.to_string(), video));
            }
        }
    }
    if seqs.is_empty() {
        return Err(Error::Data(format!(
            "no sequences with video.dcrf under {}",
            suite.display()
        )));
    }
    seqs.sort();
    Ok(seqs)
}

/// Compares segment-merge strategies on a suite of long videos. Every
/// variant of a sequence shares the same segment noise, so the columns
/// differ only by strategy. Writes `ablation.tsv`.
pub fn cmd_ablate_stitch(
    cfg: &CliConfig,
    seed: u64,
    suite: Option<&Path>,
    out: Option<&Path>,
    checkpoint: Option<&Path>,
    variant: Option<&str>,
) -> Result<()> {
    let default_suite = cfg.paths.data_dir.join("eval");
    let suite = suite.unwrap_or(&default_suite);
    let default_out = cfg.paths.run_dir.join("ablate");
    let out = out.unwrap_or(&default_out);
    let default_ckpt = cfg.paths.run_dir.join("train").join("stage3");
    let (params, net_cfg) = load_checkpoint_at(checkpoint.unwrap_or(&default_ckpt))?;
    let variants: Vec<StitchVariant> = match variant {
        Some(v) => vec![StitchVariant::parse(v)?],
        None => vec![
            StitchVariant::IndependentAverage,
            StitchVariant::AnchoredAverage,
            StitchVariant::Full,
        ],
    };
    let icfg = cfg.infer_config();
    let seqs = discover_suite(suite)?;

    let mut lines = String::from("variant\tboundary\tmedian_step\tsequences\n");
    let mut summary = Vec::new();
    for v in &variants {
        let mut boundary = 0.0;
        let mut median_step = 0.0;
        let mut used = 0usize;
        for (i, (_, video_path)) in seqs.iter().enumerate() {
            let video = VideoSeq::new(load_tensor(video_path)?)?;
            let sseed = derive_seed(seed, i as u64);
            let depth = infer::infer_long_variant(&params, &net_cfg, &video, &icfg, sseed, *v)?;
            let plan = infer::plan_segments(depth.frames(), icfg.window, icfg.overlap)?;
            if let Some(stats) = infer::seam_stats(&depth, &plan) {
                boundary += stats.max_boundary;
                median_step += stats.median_step;
                used += 1;
            }
        }
        if used == 0 {
            return Err(Error::Data(format!(
                "no sequence in {} spans multiple segments at window {}",
                suite.display(),
                icfg.window
            )));
        }
        let (b, m) = (boundary / used as f64, median_step / used as f64);
        lines.push_str(&format!("{}\t{b}\t{m}\t{used}\n", v.as_str()));
        summary.push(format!("{}: boundary {b:.4}, median step {m:.4}", v.as_str()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let table = out.join("ablation.tsv");
    std::fs::write(&table, lines).map_err(|e| Error::io(&table, e))?;
    for line in summary {
        println!("{line}");
    }
    cfg.write_effective(out, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_ranges_parse() {
        assert_eq!(parse_stage_range("2").unwrap(), (2, 2));
        assert_eq!(parse_stage_range("1-3").unwrap(), (1, 3));
        assert_eq!(parse_stage_range("2-2").unwrap(), (2, 2));
        for bad in ["0", "4", "3-1", "1-4", "x", "1-2-3", ""] {
            assert!(parse_stage_range(bad).is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn style_names_parse() {
        for good in ["all", "realistic", "synthetic", "eval"] {
            DataStyle::parse(good).unwrap();
        }
        let e = DataStyle::parse("bogus").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }
}
