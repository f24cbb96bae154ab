//! Three-stage training orchestration.
//!
//! Stage 1 trains everything on the realistic corpus with short variable
//! lengths; stage 2 trains only temporal groups with longer variable
//! lengths; stage 3 trains only spatial groups on the synthetic corpus at
//! a fixed length. Batch items are separate forward/backward passes with
//! gradient accumulation, and encoded latents can be cached on disk.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::codec::{self, CodecConfig};
use crate::edm::{self, NoiseLevel, NoiseLevelDistribution};
use crate::error::{Error, Result};
use crate::io::{load_tensor, save_tensor};
use crate::latent;
use crate::net::{
    self, AdamConfig, AdamState, ConditioningBundle, DenoiserParams, GroupTag, NetConfig,
    ParamGrads,
};
use crate::rng::{derive_seed, Rng};
use crate::synth::{CorpusStyle, ManifestEntry};
use crate::tensor::Tensor;
use crate::video::{DepthSeq, VideoSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthLaw {
    Uniform { lo: usize, hi: usize },
    Fixed(usize),
}

impl LengthLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LengthLaw::Uniform { lo, hi } if lo == 0 || lo > hi => Err(Error::Config(format!(
                "uniform length law needs 1 <= lo <= hi, got [{lo}, {hi}]"
            ))),
            LengthLaw::Fixed(0) => Err(Error::Config("fixed length law needs L >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn draw(&self, rng: &mut Rng) -> usize {
        match *self {
            LengthLaw::Uniform { lo, hi } => rng.uniform_int(lo, hi),
            LengthLaw::Fixed(len) => len,
        }
    }

    pub fn max_len(&self) -> usize {
        match *self {
            LengthLaw::Uniform { hi, .. } => hi,
            LengthLaw::Fixed(len) => len,
        }
    }
}

impl fmt::Display for LengthLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LengthLaw::Uniform { lo, hi } => write!(f, "uniform[{lo}, {hi}]"),
            LengthLaw::Fixed(len) => write!(f, "fixed {len}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage_id: u8,
    pub corpus_style: CorpusStyle,
    pub length_law: LengthLaw,
    pub trainable: Vec<GroupTag>,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl StageConfig {
    /// Checks the fixed per-stage pattern: what trains, on which corpus,
    /// under which length law.
    pub fn validate(&self) -> Result<()> {
        self.length_law.validate()?;
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "stage {} needs positive iterations and batch size",
                self.stage_id
            )));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "stage {} learning rate must be positive",
                self.stage_id
            )));
        }
        let mut tags = self.trainable.clone();
        tags.sort();
        tags.dedup();
        let expect: (&[GroupTag], CorpusStyle, bool) = match self.stage_id {
            1 => (
                &[GroupTag::Spatial, GroupTag::Temporal],
                CorpusStyle::Realistic,
                false,
            ),
            2 => (&[GroupTag::Temporal], CorpusStyle::Realistic, false),
            3 => (&[GroupTag::Spatial], CorpusStyle::Synthetic, true),
            other => {
                return Err(Error::Config(format!("unknown stage id {other}")));
            }
        };
        if tags != expect.0 {
            return Err(Error::Config(format!(
                "stage {} must train exactly {:?}, got {:?}",
                self.stage_id, expect.0, self.trainable
            )));
        }
        if self.corpus_style != expect.1 {
            return Err(Error::Config(format!(
                "stage {} must read the {} corpus",
                self.stage_id, expect.1
            )));
        }
        let fixed = matches!(self.length_law, LengthLaw::Fixed(_));
        if fixed != expect.2 {
            return Err(Error::Config(format!(
                "stage {} needs a {} length law, got {}",
                self.stage_id,
                if expect.2 { "fixed" } else { "ranged" },
                self.length_law
            )));
        }
        Ok(())
    }
}

/// Desk-scale defaults for the three stages, sharing one learning rate.
pub fn default_stages(lr: f64) -> [StageConfig; 3] {
    [
        StageConfig {
            stage_id: 1,
            corpus_style: CorpusStyle::Realistic,
            length_law: LengthLaw::Uniform { lo: 1, hi: 8 },
            trainable: vec![GroupTag::Spatial, GroupTag::Temporal],
            iterations: 300,
            batch_size: 4,
            lr,
        },
        StageConfig {
            stage_id: 2,
            corpus_style: CorpusStyle::Realistic,
            length_law: LengthLaw::Uniform { lo: 1, hi: 32 },
            trainable: vec![GroupTag::Temporal],
            iterations: 150,
            batch_size: 4,
            lr,
        },
        StageConfig {
            stage_id: 3,
            corpus_style: CorpusStyle::Synthetic,
            length_law: LengthLaw::Fixed(12),
            trainable: vec![GroupTag::Spatial],
            iterations: 60,
            batch_size: 4,
            lr,
        },
    ]
}

/// One style's sequences resolved against a corpus root directory.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    root: PathBuf,
    style: CorpusStyle,
    entries: Vec<ManifestEntry>,
}

impl CorpusIndex {
    pub fn open(root: &Path, style: CorpusStyle) -> Result<Self> {
        let all = crate::synth::read_manifest(&root.join("manifest.tsv"))?;
        let entries: Vec<ManifestEntry> = all.into_iter().filter(|e| e.style == style).collect();
        if entries.is_empty() {
            return Err(Error::Corpus(format!(
                "no {style} sequences listed in {}",
                root.join("manifest.tsv").display()
            )));
        }
        Ok(CorpusIndex {
            root: root.to_path_buf(),
            style,
            entries,
        })
    }

    pub fn style(&self) -> CorpusStyle {
        self.style
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn seq_dir(&self, index: usize) -> PathBuf {
        self.root.join(self.entries[index].rel_dir())
    }

    pub fn load_video(&self, index: usize) -> Result<VideoSeq> {
        VideoSeq::new(load_tensor(self.seq_dir(index).join("video.dcrf"))?)
    }

    pub fn load_depth(&self, index: usize) -> Result<DepthSeq> {
        DepthSeq::new(load_tensor(self.seq_dir(index).join("depth.dcrf"))?)
    }
}

static CACHE_TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Optional on-disk store of encoded latents. A hit returns bytes equal to
/// re-encoding, so enabling or clearing the cache never changes results.
#[derive(Debug, Clone)]
pub struct LatentCache {
    dir: Option<PathBuf>,
    codec: CodecConfig,
}

impl LatentCache {
    pub fn new(dir: Option<PathBuf>, codec: CodecConfig) -> Self {
        LatentCache { dir, codec }
    }

    pub fn disabled(codec: CodecConfig) -> Self {
        LatentCache { dir: None, codec }
    }

    pub fn codec(&self) -> &CodecConfig {
        &self.codec
    }

    fn fetch<F>(&self, corpus: &CorpusIndex, index: usize, kind: &str, encode: F) -> Result<Tensor<f32>>
    where
        F: FnOnce() -> Result<Tensor<f32>>,
    {
        let cached = self.dir.as_ref().map(|d| {
            d.join(corpus.entries[index].rel_dir())
                .join(format!("{kind}_latent.dcrf"))
        });
        if let Some(path) = &cached {
            if path.exists() {
                return load_tensor(path);
            }
        }
        let latent = encode()?;
        if let Some(path) = &cached {
            let dir = path.parent().expect("cache path has a parent");
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            // Unique temp name plus rename keeps concurrent writers safe.
            let n = CACHE_TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
            let tmp = path.with_extension(format!("tmp{n}"));
            save_tensor(&tmp, &latent)?;
            std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        }
        Ok(latent)
    }

    pub fn video_latent(&self, corpus: &CorpusIndex, index: usize) -> Result<Tensor<f32>> {
        self.fetch(corpus, index, "video", || {
            codec::encode_video(&corpus.load_video(index)?, &self.codec)
        })
    }

    pub fn depth_latent(&self, corpus: &CorpusIndex, index: usize) -> Result<Tensor<f32>> {
        self.fetch(corpus, index, "depth", || {
            codec::encode_depth(&corpus.load_depth(index)?, &self.codec)
        })
    }
}

/// One training item: a crop of one sequence plus its noise draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchItem {
    pub entry: usize,
    pub start: usize,
    pub len: usize,
    pub sigma: f64,
    pub noise_seed: u64,
}

/// Draws a batch of crops. All randomness is consumed here, sequentially,
/// so the batch is a pure function of the rng state.
pub fn sample_batch(
    corpus: &CorpusIndex,
    law: &LengthLaw,
    batch_size: usize,
    dist: &NoiseLevelDistribution,
    rng: &mut Rng,
) -> Result<Vec<BatchItem>> {
    law.validate()?;
    let mut items = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let len = law.draw(rng);
        let candidates: Vec<usize> = (0..corpus.len())
            .filter(|&i| corpus.entries[i].frames >= len)
            .collect();
        if candidates.is_empty() {
            return Err(Error::Corpus(format!(
                "no {} sequence has the {len} frames drawn from length law {law}",
                corpus.style
            )));
        }
        let entry = candidates[rng.uniform_usize(candidates.len())];
        let start = rng.uniform_int(0, corpus.entries[entry].frames - len);
        let sigma = edm::sample_sigma(dist, rng)?.value();
        let noise_seed = rng.next_u64();
        items.push(BatchItem {
            entry,
            start,
            len,
            sigma,
            noise_seed,
        });
    }
    Ok(items)
}

/// Loss and parameter gradients of the weighted denoising objective for
/// one clean latent at one noise level.
pub fn dsm_loss_and_grads<S: crate::Scalar>(
    params: &DenoiserParams<S>,
    cfg: &NetConfig,
    x0: &Tensor<S>,
    cond: &ConditioningBundle<S>,
    sigma: NoiseLevel,
    rng: &mut Rng,
) -> Result<(f64, ParamGrads<S>)> {
    let x_t = edm::add_noise(x0, sigma, rng)?;
    let pc = edm::precondition(sigma)?;
    let x_scaled = x_t.scale(S::from_f64(pc.c_in));
    let (f_out, cache) = net::forward_with_cache(params, cfg, &x_scaled, pc.c_noise, cond)?;
    let d = x_t
        .scale(S::from_f64(pc.c_skip))
        .add(&f_out.scale(S::from_f64(pc.c_out)))?;
    let weight = edm::loss_weight(sigma)?;
    let loss = weight * d.mse_f64(x0)?;
    // d(loss)/dF = weight * (2/n) * c_out * (D - x0)
    let coef = weight * 2.0 / d.numel() as f64 * pc.c_out;
    let upstream = d.sub(x0)?.scale(S::from_f64(coef));
    let (grads, _) = net::backward_from_cache(params, cfg, &cache, &upstream)?;
    Ok((loss, grads))
}

fn prepare_cond(
    video: &VideoSeq,
    video_latent: &Tensor<f32>,
    item: &BatchItem,
    embed_dim: usize,
) -> Result<ConditioningBundle<f32>> {
    let clip = video.slice_frames(item.start, item.start + item.len)?;
    let cond_latent =
        latent::standardize_video(&video_latent.slice0(item.start, item.start + item.len)?)?;
    let embed = net::frame_embedding(&clip, embed_dim)?;
    ConditioningBundle::new(cond_latent, embed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub sigma_mean: f64,
    pub loss: f64,
}

pub fn write_loss_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut text = String::from("iteration\tsigma_mean\tloss\n");
    for r in rows {
        text.push_str(&format!("{}\t{}\t{}\n", r.iteration, r.sigma_mean, r.loss));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_loss_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Data(format!("{}:{}: bad trace row", path.display(), ln + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        rows.push(TraceRow {
            iteration: fields[0].parse().map_err(|_| bad())?,
            sigma_mean: fields[1].parse().map_err(|_| bad())?,
            loss: fields[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Runs one stage of optimizer steps in place. Only groups whose tag is in
/// `stage.trainable` move; everything else stays bit-identical. Batch
/// items run in parallel and their gradients are reduced in item order, so
/// the trace is a pure function of the incoming rng.
pub fn run_stage(
    params: &mut DenoiserParams<f32>,
    cfg: &NetConfig,
    stage: &StageConfig,
    corpus: &CorpusIndex,
    cache: &LatentCache,
    rng: &mut Rng,
) -> Result<Vec<TraceRow>> {
    stage.validate()?;
    if corpus.style() != stage.corpus_style {
        return Err(Error::Config(format!(
            "stage {} expects the {} corpus, got {}",
            stage.stage_id, stage.corpus_style, corpus.style
        )));
    }
    params.set_trainable_tags(&stage.trainable);
    let adam_cfg = AdamConfig::new(stage.lr)?;
    let mut adam = AdamState::new(params);
    let dist = NoiseLevelDistribution::default();
    let mut trace = Vec::with_capacity(stage.iterations);

    for iteration in 0..stage.iterations {
        let items = sample_batch(corpus, &stage.length_law, stage.batch_size, &dist, rng)?;
        let results: Vec<(f64, ParamGrads<f32>)> = items
            .par_iter()
            .map(|item| -> Result<(f64, ParamGrads<f32>)> {
                let video = corpus.load_video(item.entry)?;
                let video_latent = cache.video_latent(corpus, item.entry)?;
                let depth_latent = cache.depth_latent(corpus, item.entry)?;
                let x0 =
                    latent::standardize_depth(&depth_latent.slice0(item.start, item.start + item.len)?)?;
                let cond = prepare_cond(&video, &video_latent, item, cfg.embed_dim)?;
                let mut noise_rng = Rng::new(item.noise_seed);
                dsm_loss_and_grads(
                    params,
                    cfg,
                    &x0,
                    &cond,
                    NoiseLevel::new(item.sigma)?,
                    &mut noise_rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let scale = 1.0 / stage.batch_size as f32;
        let mut loss = 0.0;
        let mut grads: ParamGrads<f32> = BTreeMap::new();
        for (item_loss, item_grads) in results {
            loss += item_loss;
            for (name, g) in item_grads {
                match grads.get_mut(&name) {
                    Some(acc) => *acc = acc.add(&g)?,
                    None => {
                        grads.insert(name, g);
                    }
                }
            }
        }
        loss /= stage.batch_size as f64;
        for g in grads.values_mut() {
            *g = g.scale(scale);
        }
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "stage {} hit a non-finite loss at iteration {iteration}",
                stage.stage_id
            )));
        }
        adam_step(params, &grads, &mut adam, &adam_cfg)?;
        let sigma_mean = items.iter().map(|i| i.sigma).sum::<f64>() / items.len() as f64;
        trace.push(TraceRow {
            iteration,
            sigma_mean,
            loss,
        });
    }
    Ok(trace)
}

use crate::net::adam_step;

/// Checks the three-stage pattern as a whole before any stage runs.
pub fn validate_pipeline(stages: &[StageConfig]) -> Result<()> {
    if stages.len() != 3 {
        return Err(Error::Config(format!(
            "pipeline needs exactly 3 stages, got {}",
            stages.len()
        )));
    }
    for (i, stage) in stages.iter().enumerate() {
        if stage.stage_id != i as u8 + 1 {
            return Err(Error::Config(format!(
                "stage {} out of order at position {i}",
                stage.stage_id
            )));
        }
        stage.validate()?;
    }
    let (hi1, hi2) = (stages[0].length_law.max_len(), stages[1].length_law.max_len());
    if hi2 <= hi1 {
        return Err(Error::Config(format!(
            "stage 2 must extend the length range: stage 1 max {hi1}, stage 2 max {hi2}"
        )));
    }
    Ok(())
}

/// Runs stages `start_stage..=end_stage` in order, checkpointing parameters
/// and a loss trace under `out_dir/stage<k>/` after each. Per-stage rngs
/// derive from the seed and stage id alone, so a resumed or truncated run
/// reproduces the exact traces of a straight-through run.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    params: &mut DenoiserParams<f32>,
    cfg: &NetConfig,
    stages: &[StageConfig],
    start_stage: u8,
    end_stage: u8,
    realistic: &CorpusIndex,
    synthetic: &CorpusIndex,
    cache: &LatentCache,
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<Vec<TraceRow>>> {
    validate_pipeline(stages)?;
    if !(1..=3).contains(&start_stage) || end_stage < start_stage || end_stage > 3 {
        return Err(Error::Config(format!(
            "stage range must satisfy 1 <= start <= end <= 3, got {start_stage}..={end_stage}"
        )));
    }
    let mut traces = Vec::new();
    for stage in stages
        .iter()
        .filter(|s| s.stage_id >= start_stage && s.stage_id <= end_stage)
    {
        let corpus = match stage.corpus_style {
            CorpusStyle::Realistic => realistic,
            CorpusStyle::Synthetic => synthetic,
        };
        let mut rng = Rng::new(derive_seed(seed, stage.stage_id as u64));
        let trace = run_stage(params, cfg, stage, corpus, cache, &mut rng)?;
        let stage_dir = out_dir.join(format!("stage{}", stage.stage_id));
        net::save_checkpoint(&stage_dir, params, cfg)?;
        write_loss_trace(&stage_dir.join("loss_trace.tsv"), &trace)?;
        traces.push(trace);
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::build_corpus;

    fn tiny_corpus(root: &Path) {
        let mut entries =
            build_corpus(root, CorpusStyle::Realistic, 4, 4, 9, 16, 16, 99).unwrap();
        entries.extend(build_corpus(root, CorpusStyle::Synthetic, 2, 6, 6, 16, 16, 99).unwrap());
        crate::synth::write_manifest(&root.join("manifest.tsv"), &entries).unwrap();
    }

    fn tiny_net() -> NetConfig {
        NetConfig {
            channels: 8,
            spatial_blocks: 1,
            temporal_blocks: 1,
            embed_dim: 8,
        }
    }

    fn tiny_stage(stage_id: u8, iterations: usize) -> StageConfig {
        let mut stage = default_stages(1e-3)[stage_id as usize - 1].clone();
        stage.iterations = iterations;
        stage.batch_size = 2;
        stage.length_law = match stage_id {
            1 => LengthLaw::Uniform { lo: 1, hi: 3 },
            2 => LengthLaw::Uniform { lo: 1, hi: 6 },
            _ => LengthLaw::Fixed(4),
        };
        stage
    }

    #[test]
    fn uniform_law_is_uniform_by_chi_squared() {
        let law = LengthLaw::Uniform { lo: 1, hi: 25 };
        let mut rng = Rng::new(31337);
        let mut counts = [0f64; 25];
        let draws = 10_000;
        for _ in 0..draws {
            counts[law.draw(&mut rng) - 1] += 1.0;
        }
        let expected = draws as f64 / 25.0;
        let chi2: f64 = counts.iter().map(|&o| (o - expected).powi(2) / expected).sum();
        // 0.99 quantile of chi-squared with 24 degrees of freedom.
        assert!(chi2 < 42.98, "chi-squared {chi2}");
    }

    #[test]
    fn batches_are_deterministic_and_in_support() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path());
        let corpus = CorpusIndex::open(dir.path(), CorpusStyle::Realistic).unwrap();
        let law = LengthLaw::Uniform { lo: 1, hi: 6 };
        let dist = NoiseLevelDistribution::default();
        let a = sample_batch(&corpus, &law, 16, &dist, &mut Rng::new(7)).unwrap();
        let b = sample_batch(&corpus, &law, 16, &dist, &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
        for item in &a {
            assert!((1..=6).contains(&item.len));
            let frames = corpus.entries()[item.entry].frames;
            assert!(item.start + item.len <= frames);
            assert!(item.sigma > 0.0);
        }
    }

    #[test]
    fn impossible_length_names_the_law() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path());
        let corpus = CorpusIndex::open(dir.path(), CorpusStyle::Synthetic).unwrap();
        let law = LengthLaw::Fixed(50);
        let dist = NoiseLevelDistribution::default();
        let err = sample_batch(&corpus, &law, 1, &dist, &mut Rng::new(0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fixed 50"), "{msg}");
    }

    #[test]
    fn fixed_law_of_one_yields_single_frames() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path());
        let corpus = CorpusIndex::open(dir.path(), CorpusStyle::Realistic).unwrap();
        let dist = NoiseLevelDistribution::default();
        let items =
            sample_batch(&corpus, &LengthLaw::Fixed(1), 8, &dist, &mut Rng::new(3)).unwrap();
        assert!(items.iter().all(|i| i.len == 1));
    }

    #[test]
    fn stage_freezing_keeps_other_groups_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path());
        let cfg = tiny_net();
        let codec = CodecConfig::default();
        let cache = LatentCache::disabled(codec);
        let latent_channels = codec.latent_channels(3);
        for (stage_id, frozen_tag) in [(2u8, GroupTag::Spatial), (3u8, GroupTag::Temporal)] {
            let corpus = CorpusIndex::open(
                dir.path(),
                if stage_id == 2 {
                    CorpusStyle::Realistic
                } else {
                    CorpusStyle::Synthetic
                },
            )
            .unwrap();
            let mut params =
                DenoiserParams::<f32>::init(&cfg, latent_channels, &mut Rng::new(11)).unwrap();
            let before: Vec<(String, Vec<f32>)> = params
                .iter()
                .filter(|(n, _)| params.tag(n).unwrap() == frozen_tag)
                .map(|(n, t)| (n.clone(), t.data().to_vec()))
                .collect();
            assert!(!before.is_empty());
            let stage = tiny_stage(stage_id, 3);
            run_stage(&mut params, &cfg, &stage, &corpus, &cache, &mut Rng::new(5)).unwrap();
            for (name, data) in before {
                assert_eq!(
                    params.get(&name).unwrap().data(),
                    &data[..],
                    "{name} moved in stage {stage_id}"
                );
            }
            // The trained tag must move.
            let moved = params
                .iter()
                .any(|(n, t)| {
                    params.tag(n).unwrap() != frozen_tag
                        && t.data().iter().any(|v| *v != 0.0)
                        && !params.is_frozen(n)
                });
            assert!(moved);
        }
    }

    #[test]
    fn cache_is_transparent_and_rebuildable() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path());
        let cfg = tiny_net();
        let codec = CodecConfig::default();
        let corpus = CorpusIndex::open(dir.path(), CorpusStyle::Realistic).unwrap();
        let latent_channels = codec.latent_channels(3);
        let stage = tiny_stage(1, 4);

        let run = |cache: &LatentCache| {
            let mut params =
                DenoiserParams::<f32>::init(&cfg, latent_channels, &mut Rng::new(21)).unwrap();
            run_stage(&mut params, &cfg, &stage, &corpus, cache, &mut Rng::new(8)).unwrap()
        };

        let cache_dir = dir.path().join("cache");
        let cached = LatentCache::new(Some(cache_dir.clone()), codec);
        let trace_cached = run(&cached);
        assert!(cache_dir.join("realistic/0000/video_latent.dcrf").exists());
        let trace_plain = run(&LatentCache::disabled(codec));
        assert_eq!(trace_cached, trace_plain);

        // Deleting the cache and re-running reproduces the same trace.
        std::fs::remove_dir_all(&cache_dir).unwrap();
        let trace_again = run(&cached);
        assert_eq!(trace_cached, trace_again);
    }

    #[test]
    fn loss_trace_roundtrips_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path());
        let cfg = tiny_net();
        let codec = CodecConfig::default();
        let cache = LatentCache::disabled(codec);
        let corpus = CorpusIndex::open(dir.path(), CorpusStyle::Realistic).unwrap();
        let stage = tiny_stage(1, 5);
        let run = || {
            let mut params =
                DenoiserParams::<f32>::init(&cfg, codec.latent_channels(3), &mut Rng::new(2))
                    .unwrap();
            run_stage(&mut params, &cfg, &stage, &corpus, &cache, &mut Rng::new(6)).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|r| r.loss.is_finite() && r.sigma_mean > 0.0));

        let path = dir.path().join("trace.tsv");
        write_loss_trace(&path, &a).unwrap();
        let read = read_loss_trace(&path).unwrap();
        assert_eq!(read, a);
    }

    #[test]
    fn pipeline_validates_before_running_and_resumes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path());
        let cfg = tiny_net();
        let codec = CodecConfig::default();
        let cache = LatentCache::disabled(codec);
        let realistic = CorpusIndex::open(dir.path(), CorpusStyle::Realistic).unwrap();
        let synthetic = CorpusIndex::open(dir.path(), CorpusStyle::Synthetic).unwrap();
        let stages = [tiny_stage(1, 3), tiny_stage(2, 3), tiny_stage(3, 3)];

        // A broken pattern is rejected before any training happens.
        let mut bad = stages.clone();
        bad[1].trainable = vec![GroupTag::Spatial];
        let mut params =
            DenoiserParams::<f32>::init(&cfg, codec.latent_channels(3), &mut Rng::new(4)).unwrap();
        assert!(matches!(
            run_pipeline(
                &mut params,
                &cfg,
                &bad,
                1,
                3,
                &realistic,
                &synthetic,
                &cache,
                dir.path(),
                17
            ),
            Err(Error::Config(_))
        ));

        let out_a = dir.path().join("run_a");
        let mut params_a =
            DenoiserParams::<f32>::init(&cfg, codec.latent_channels(3), &mut Rng::new(4)).unwrap();
        let traces_a = run_pipeline(
            &mut params_a,
            &cfg,
            &stages,
            1,
            3,
            &realistic,
            &synthetic,
            &cache,
            &out_a,
            17,
        )
        .unwrap();
        assert_eq!(traces_a.len(), 3);
        for k in 1..=3 {
            assert!(out_a.join(format!("stage{k}/manifest.txt")).exists());
            assert!(out_a.join(format!("stage{k}/loss_trace.tsv")).exists());
        }

        // Reload the stage-1 checkpoint and run stages 2..3; traces match
        // the straight-through run exactly.
        let (mut params_b, cfg_b) = net::load_checkpoint(out_a.join("stage1")).unwrap();
        assert_eq!(cfg_b, cfg);
        let out_b = dir.path().join("run_b");
        let traces_b = run_pipeline(
            &mut params_b,
            &cfg,
            &stages,
            2,
            3,
            &realistic,
            &synthetic,
            &cache,
            &out_b,
            17,
        )
        .unwrap();
        assert_eq!(traces_b.len(), 2);
        assert_eq!(traces_a[1], traces_b[0]);
        assert_eq!(traces_a[2], traces_b[1]);
        for (name, tensor) in params_a.iter() {
            assert_eq!(tensor.data(), params_b.get(name).unwrap().data(), "{name}");
        }
    }
}
