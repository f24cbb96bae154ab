//! The conditional denoiser network and its hand-written backward pass.
//!
//! Architecture, operating on latent sequences `[T, h, w, C_lat]`:
//!
//! 1. channel-concatenate the noisy latent with the conditioning latent,
//! 2. per-pixel input projection to `channels`,
//! 3. `spatial_blocks` of per-frame 3x3 convolution (zero padded) plus an
//!    additive per-frame modulation vector derived from the noise embedding
//!    and the frame embedding, then `tanh`, added back onto the block input,
//! 4. `temporal_blocks` of per-pixel 1-D temporal convolution (kernel 3,
//!    zero padded) then `tanh`, added back onto the block input,
//! 5. per-pixel output projection back to `C_lat`, zero-initialized so the
//!    raw network starts as the zero function.
//!
//! The residual wiring keeps an unbounded linear path from input to output,
//! which the preconditioned objective needs: its effective regression
//! target contains a `1/sigma`-scaled copy of the input that a stack of
//! saturating layers cannot carry on its own.
//!
//! Every parameter group is tagged `Spatial` or `Temporal`; the training
//! stages freeze groups by tag. Weights initialize with std `1/sqrt(fan_in)`.
//! The whole module is generic over the scalar so gradients can be verified
//! against central finite differences in `f64`.

use crate::error::{Error, Result};
use crate::io;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::VideoSeq;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

/// Seed of the fixed (non-learned) frame-embedding projection matrix. Part
/// of the architecture definition, not of any experiment seed.
pub const FRAME_EMBED_SEED: u64 = 0x00F0_E1D2_C3B4_A596;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub channels: usize,
    pub spatial_blocks: usize,
    pub temporal_blocks: usize,
    pub embed_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            channels: 24,
            spatial_blocks: 2,
            temporal_blocks: 2,
            embed_dim: 16,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.embed_dim == 0 {
            return Err(Error::Params(format!(
                "channels and embed_dim must be positive, got {} and {}",
                self.channels, self.embed_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroupTag {
    Spatial,
    Temporal,
}

impl GroupTag {
    pub fn name(self) -> &'static str {
        match self {
            GroupTag::Spatial => "spatial",
            GroupTag::Temporal => "temporal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(GroupTag::Spatial),
            "temporal" => Ok(GroupTag::Temporal),
            other => Err(Error::Params(format!("unknown group tag {other:?}"))),
        }
    }
}

/// Conditioning fed to the denoiser: the encoded video latent plus one
/// embedding vector per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle<S> {
    cond_latent: Tensor<S>,
    frame_embed: Tensor<S>,
}

impl<S: Scalar> ConditioningBundle<S> {
    pub fn new(cond_latent: Tensor<S>, frame_embed: Tensor<S>) -> Result<Self> {
        if cond_latent.rank() != 4 {
            return Err(Error::Conditioning(format!(
                "conditioning latent must be [T, h, w, C], got {:?}",
                cond_latent.shape()
            )));
        }
        if frame_embed.rank() != 2 {
            return Err(Error::Conditioning(format!(
                "frame embedding must be [T, E], got {:?}",
                frame_embed.shape()
            )));
        }
        if cond_latent.shape()[0] != frame_embed.shape()[0] {
            return Err(Error::Conditioning(format!(
                "latent frames {} != embedding frames {}",
                cond_latent.shape()[0],
                frame_embed.shape()[0]
            )));
        }
        Ok(ConditioningBundle {
            cond_latent,
            frame_embed,
        })
    }

    pub fn zeros(frames: usize, h: usize, w: usize, channels: usize, embed_dim: usize) -> Result<Self> {
        Ok(ConditioningBundle {
            cond_latent: Tensor::zeros(&[frames, h, w, channels])?,
            frame_embed: Tensor::zeros(&[frames, embed_dim])?,
        })
    }

    pub fn frames(&self) -> usize {
        self.cond_latent.shape()[0]
    }

    pub fn latent(&self) -> &Tensor<S> {
        &self.cond_latent
    }

    pub fn embed(&self) -> &Tensor<S> {
        &self.frame_embed
    }

    /// Same shapes, all zeros: the unconditional input for guidance.
    pub fn zeroed_like(&self) -> Self {
        ConditioningBundle {
            cond_latent: self.cond_latent.zeros_like(),
            frame_embed: self.frame_embed.zeros_like(),
        }
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        Ok(ConditioningBundle {
            cond_latent: self.cond_latent.slice0(start, end)?,
            frame_embed: self.frame_embed.slice0(start, end)?,
        })
    }

    pub fn cast<T: Scalar>(&self) -> ConditioningBundle<T> {
        ConditioningBundle {
            cond_latent: self.cond_latent.cast(),
            frame_embed: self.frame_embed.cast(),
        }
    }
}

/// Per-frame scalar statistics: overall mean, overall std, three channel
/// means, and the mean spatial gradient magnitude. A constant frame has zero
/// std and zero gradient components.
pub fn frame_features(video: &VideoSeq, t: usize) -> [f64; 6] {
    let (h, w) = (video.height(), video.width());
    let data = video.tensor().data();
    let base = t * h * w * 3;
    let n = (h * w) as f64;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut chan = [0.0f64; 3];
    for p in 0..h * w {
        for c in 0..3 {
            let v = data[base + p * 3 + c] as f64;
            sum += v;
            sumsq += v * v;
            chan[c] += v;
        }
    }
    let mean = sum / (3.0 * n);
    let var = (sumsq / (3.0 * n) - mean * mean).max(0.0);
    let mut grad = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let at = |yy: usize, xx: usize| data[base + (yy * w + xx) * 3 + c] as f64;
                let dx = if x + 1 < w { at(y, x + 1) - at(y, x) } else { 0.0 };
                let dy = if y + 1 < h { at(y + 1, x) - at(y, x) } else { 0.0 };
                grad += (dx * dx + dy * dy).sqrt();
            }
        }
    }
    [
        mean,
        var.sqrt(),
        chan[0] / n,
        chan[1] / n,
        chan[2] / n,
        grad / (3.0 * n),
    ]
}

/// Per-frame embedding: the six frame features pushed through a fixed,
/// seeded random projection (`FRAME_EMBED_SEED`; not a learned parameter).
pub fn frame_embedding<S: Scalar>(video: &VideoSeq, embed_dim: usize) -> Result<Tensor<S>> {
    if embed_dim == 0 {
        return Err(Error::Params("embed_dim must be positive".into()));
    }
    let mut proj_rng = Rng::new(FRAME_EMBED_SEED);
    let scale = 1.0 / 6f64.sqrt();
    let mut proj = vec![0.0f64; 6 * embed_dim];
    for v in proj.iter_mut() {
        *v = proj_rng.normal() * scale;
    }
    let t = video.frames();
    let mut out = Tensor::zeros(&[t, embed_dim])?;
    let od = out.data_mut();
    for f in 0..t {
        let feat = frame_features(video, f);
        for e in 0..embed_dim {
            let mut acc = 0.0;
            for (i, fv) in feat.iter().enumerate() {
                acc += fv * proj[i * embed_dim + e];
            }
            od[f * embed_dim + e] = S::from_f64(acc);
        }
    }
    Ok(out)
}

/// Noise-level embedding: log-spaced sin/cos features of `c_noise`, a fixed
/// closed formula with no parameters.
pub fn noise_embedding(c_noise: f64, dim: usize) -> Vec<f64> {
    let pairs = dim.div_ceil(2);
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        let k = j / 2;
        let frac = if pairs > 1 {
            k as f64 / (pairs - 1) as f64
        } else {
            0.0
        };
        let freq = 0.5 * 8f64.powf(frac);
        let arg = freq * c_noise;
        out.push(if j % 2 == 0 { arg.sin() } else { arg.cos() });
    }
    out
}

pub type ParamGrads<S> = BTreeMap<String, Tensor<S>>;

/// All learnable parameter groups, their spatial/temporal tags, and the set
/// of currently frozen group names.
#[derive(Debug, Clone)]
pub struct DenoiserParams<S> {
    groups: BTreeMap<String, Tensor<S>>,
    tags: BTreeMap<String, GroupTag>,
    frozen: BTreeSet<String>,
}

impl<S: Scalar> DenoiserParams<S> {
    /// Fresh parameters for latents with `latent_channels` channels. The
    /// network input is the noisy latent concatenated with an equally sized
    /// conditioning latent.
    pub fn init(cfg: &NetConfig, latent_channels: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if latent_channels == 0 {
            return Err(Error::Params("latent_channels must be positive".into()));
        }
        let c = cfg.channels;
        let e = cfg.embed_dim;
        let c_in = 2 * latent_channels;
        let mut groups = BTreeMap::new();
        let mut tags = BTreeMap::new();

        let mut add = |name: &str,
                       tag: GroupTag,
                       shape: &[usize],
                       std: f64,
                       rng: &mut Rng|
         -> Result<()> {
            let mut t = Tensor::zeros(shape)?;
            if std > 0.0 {
                for v in t.data_mut() {
                    *v = S::from_f64(rng.normal() * std);
                }
            }
            groups.insert(name.to_string(), t);
            tags.insert(name.to_string(), tag);
            Ok(())
        };

        add(
            "input_proj.weight",
            GroupTag::Spatial,
            &[c_in, c],
            1.0 / (c_in as f64).sqrt(),
            rng,
        )?;
        add("input_proj.bias", GroupTag::Spatial, &[c], 0.0, rng)?;
        for i in 0..cfg.spatial_blocks {
            add(
                &format!("spatial{i}.conv.weight"),
                GroupTag::Spatial,
                &[3, 3, c, c],
                1.0 / (9.0 * c as f64).sqrt(),
                rng,
            )?;
            add(&format!("spatial{i}.conv.bias"), GroupTag::Spatial, &[c], 0.0, rng)?;
            add(
                &format!("spatial{i}.mod.weight"),
                GroupTag::Spatial,
                &[e, c],
                1.0 / (e as f64).sqrt(),
                rng,
            )?;
        }
        for j in 0..cfg.temporal_blocks {
            add(
                &format!("temporal{j}.conv.weight"),
                GroupTag::Temporal,
                &[3, c, c],
                1.0 / (3.0 * c as f64).sqrt(),
                rng,
            )?;
            add(&format!("temporal{j}.conv.bias"), GroupTag::Temporal, &[c], 0.0, rng)?;
        }
        add(
            "output_proj.weight",
            GroupTag::Spatial,
            &[c, latent_channels],
            0.0,
            rng,
        )?;
        add(
            "output_proj.bias",
            GroupTag::Spatial,
            &[latent_channels],
            0.0,
            rng,
        )?;

        Ok(DenoiserParams {
            groups,
            tags,
            frozen: BTreeSet::new(),
        })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.groups
            .get(name)
            .ok_or_else(|| Error::Params(format!("unknown parameter group {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.groups
            .get_mut(name)
            .ok_or_else(|| Error::Params(format!("unknown parameter group {name:?}")))
    }

    pub fn tag(&self, name: &str) -> Result<GroupTag> {
        self.tags
            .get(name)
            .copied()
            .ok_or_else(|| Error::Params(format!("unknown parameter group {name:?}")))
    }

    pub fn group_names(&self) -> Vec<String> {
        self.groups.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.groups.iter()
    }

    /// Freeze every group whose tag is not in `trainable`.
    pub fn set_trainable_tags(&mut self, trainable: &[GroupTag]) {
        self.frozen = self
            .tags
            .iter()
            .filter(|(_, tag)| !trainable.contains(tag))
            .map(|(name, _)| name.clone())
            .collect();
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen_names(&self) -> Vec<String> {
        self.frozen.iter().cloned().collect()
    }

    pub fn total_params(&self) -> usize {
        self.groups.values().map(|t| t.numel()).sum()
    }

    pub fn count_by_tag(&self, tag: GroupTag) -> usize {
        self.groups
            .iter()
            .filter(|(name, _)| self.tags[*name] == tag)
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Latent channel count this network denoises, read off the output head.
    pub fn latent_channels(&self) -> usize {
        self.groups["output_proj.bias"].shape()[0]
    }

    pub fn cast<T: Scalar>(&self) -> DenoiserParams<T> {
        DenoiserParams {
            groups: self
                .groups
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            tags: self.tags.clone(),
            frozen: self.frozen.clone(),
        }
    }
}

/// Intermediate activations retained for the backward pass.
pub struct ForwardCache<S> {
    x_in: Tensor<S>,
    embed_sum: Tensor<S>,
    /// `acts[0]` is the input-projection output; then one post-activation
    /// tensor per spatial block, then one per temporal block.
    acts: Vec<Tensor<S>>,
}

fn check_forward_inputs<S: Scalar>(
    params: &DenoiserParams<S>,
    cfg: &NetConfig,
    noisy: &Tensor<S>,
    cond: &ConditioningBundle<S>,
) -> Result<()> {
    cfg.validate()?;
    if noisy.rank() != 4 {
        return Err(Error::Shape(format!(
            "noisy latent must be [T, h, w, C], got {:?}",
            noisy.shape()
        )));
    }
    if noisy.shape()[..3] != cond.latent().shape()[..3] {
        return Err(Error::Conditioning(format!(
            "conditioning latent {:?} does not match input {:?}",
            cond.latent().shape(),
            noisy.shape()
        )));
    }
    if cond.embed().shape()[1] != cfg.embed_dim {
        return Err(Error::Conditioning(format!(
            "frame embedding dim {} != configured embed_dim {}",
            cond.embed().shape()[1],
            cfg.embed_dim
        )));
    }
    let c_in_expected = noisy.shape()[3] + cond.latent().shape()[3];
    let w_in = params.get("input_proj.weight")?;
    if w_in.shape()[0] != c_in_expected {
        return Err(Error::Params(format!(
            "input projection expects {} input channels, inputs provide {}",
            w_in.shape()[0],
            c_in_expected
        )));
    }
    if params.latent_channels() != noisy.shape()[3] {
        return Err(Error::Params(format!(
            "network denoises {} latent channels, input has {}",
            params.latent_channels(),
            noisy.shape()[3]
        )));
    }
    Ok(())
}

/// Per-pixel linear layer: `y[r, co] = sum_ci w[ci, co] * x[r, ci] + b[co]`.
fn pixelwise_linear<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (ci, co) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / ci;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = co;
    let mut y = Tensor::zeros(&shape)?;
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let yd = y.data_mut();
    for r in 0..rows {
        let xrow = &xd[r * ci..(r + 1) * ci];
        let yrow = &mut yd[r * co..(r + 1) * co];
        yrow.copy_from_slice(bd);
        for (i, &xv) in xrow.iter().enumerate() {
            let wrow = &wd[i * co..(i + 1) * co];
            for (o, yv) in yrow.iter_mut().enumerate() {
                *yv = *yv + xv * wrow[o];
            }
        }
    }
    Ok(y)
}

fn pixelwise_linear_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (ci, co) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / ci;
    let mut dw = w.zeros_like();
    let mut db = Tensor::zeros(&[co])?;
    let mut dx = x.zeros_like();
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();
    {
        let dwd = dw.data_mut();
        for r in 0..rows {
            let xrow = &xd[r * ci..(r + 1) * ci];
            let dyrow = &dyd[r * co..(r + 1) * co];
            for (i, &xv) in xrow.iter().enumerate() {
                let dwrow = &mut dwd[i * co..(i + 1) * co];
                for (o, &g) in dyrow.iter().enumerate() {
                    dwrow[o] = dwrow[o] + xv * g;
                }
            }
        }
    }
    {
        let dbd = db.data_mut();
        for r in 0..rows {
            let dyrow = &dyd[r * co..(r + 1) * co];
            for (o, &g) in dyrow.iter().enumerate() {
                dbd[o] = dbd[o] + g;
            }
        }
    }
    {
        let dxd = dx.data_mut();
        for r in 0..rows {
            let dyrow = &dyd[r * co..(r + 1) * co];
            let dxrow = &mut dxd[r * ci..(r + 1) * ci];
            for (i, dxv) in dxrow.iter_mut().enumerate() {
                let wrow = &wd[i * co..(i + 1) * co];
                let mut acc = S::zero();
                for (o, &g) in dyrow.iter().enumerate() {
                    acc = acc + wrow[o] * g;
                }
                *dxv = acc;
            }
        }
    }
    Ok((dw, db, dx))
}

/// Per-frame 3x3 convolution with zero padding, channels last.
fn conv2d_3x3<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
    let (t, h, wd_, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let co = w.shape()[3];
    let mut y = Tensor::zeros(&[t, h, wd_, co])?;
    let xd = x.data();
    let wdat = w.data();
    let yd = y.data_mut();
    for f in 0..t {
        for yo in 0..h {
            for xo in 0..wd_ {
                let out_base = ((f * h + yo) * wd_ + xo) * co;
                for di in 0..3usize {
                    let yi = yo as isize + di as isize - 1;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    for dj in 0..3usize {
                        let xi = xo as isize + dj as isize - 1;
                        if xi < 0 || xi >= wd_ as isize {
                            continue;
                        }
                        let in_base = ((f * h + yi as usize) * wd_ + xi as usize) * c;
                        let w_base = (di * 3 + dj) * c * co;
                        for ci in 0..c {
                            let xv = xd[in_base + ci];
                            let wrow = &wdat[w_base + ci * co..w_base + (ci + 1) * co];
                            let yrow = &mut yd[out_base..out_base + co];
                            for o in 0..co {
                                yrow[o] = yrow[o] + xv * wrow[o];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

fn conv2d_3x3_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (t, h, wd_, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let co = w.shape()[3];
    let mut dw = w.zeros_like();
    let mut dx = x.zeros_like();
    let xd = x.data();
    let wdat = w.data();
    let dyd = dy.data();
    let dwd = dw.data_mut();
    let dxd = dx.data_mut();
    for f in 0..t {
        for yo in 0..h {
            for xo in 0..wd_ {
                let out_base = ((f * h + yo) * wd_ + xo) * co;
                let dyrow = &dyd[out_base..out_base + co];
                for di in 0..3usize {
                    let yi = yo as isize + di as isize - 1;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    for dj in 0..3usize {
                        let xi = xo as isize + dj as isize - 1;
                        if xi < 0 || xi >= wd_ as isize {
                            continue;
                        }
                        let in_base = ((f * h + yi as usize) * wd_ + xi as usize) * c;
                        let w_base = (di * 3 + dj) * c * co;
                        for ci in 0..c {
                            let xv = xd[in_base + ci];
                            let wrow = &wdat[w_base + ci * co..w_base + (ci + 1) * co];
                            let dwrow = &mut dwd[w_base + ci * co..w_base + (ci + 1) * co];
                            let mut acc = S::zero();
                            for o in 0..co {
                                let g = dyrow[o];
                                dwrow[o] = dwrow[o] + xv * g;
                                acc = acc + wrow[o] * g;
                            }
                            dxd[in_base + ci] = dxd[in_base + ci] + acc;
                        }
                    }
                }
            }
        }
    }
    Ok((dw, dx))
}

/// Per-pixel temporal convolution, kernel 3 over the frame axis, zero padded.
fn conv1d_time<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
    let (t, h, wd_, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let co = w.shape()[2];
    let pixels = h * wd_;
    let mut y = Tensor::zeros(&[t, h, wd_, co])?;
    let xd = x.data();
    let wdat = w.data();
    let yd = y.data_mut();
    for f in 0..t {
        for (dt, w_k) in (-1i64..=1).zip(0..3usize) {
            let fi = f as i64 + dt;
            if fi < 0 || fi >= t as i64 {
                continue;
            }
            let w_base = w_k * c * co;
            for p in 0..pixels {
                let in_base = (fi as usize * pixels + p) * c;
                let out_base = (f * pixels + p) * co;
                let yrow = &mut yd[out_base..out_base + co];
                for ci in 0..c {
                    let xv = xd[in_base + ci];
                    let wrow = &wdat[w_base + ci * co..w_base + (ci + 1) * co];
                    for o in 0..co {
                        yrow[o] = yrow[o] + xv * wrow[o];
                    }
                }
            }
        }
    }
    Ok(y)
}

fn conv1d_time_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (t, h, wd_, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let co = w.shape()[2];
    let pixels = h * wd_;
    let mut dw = w.zeros_like();
    let mut dx = x.zeros_like();
    let xd = x.data();
    let wdat = w.data();
    let dyd = dy.data();
    let dwd = dw.data_mut();
    let dxd = dx.data_mut();
    for f in 0..t {
        for (dt, w_k) in (-1i64..=1).zip(0..3usize) {
            let fi = f as i64 + dt;
            if fi < 0 || fi >= t as i64 {
                continue;
            }
            let w_base = w_k * c * co;
            for p in 0..pixels {
                let in_base = (fi as usize * pixels + p) * c;
                let out_base = (f * pixels + p) * co;
                let dyrow = &dyd[out_base..out_base + co];
                for ci in 0..c {
                    let xv = xd[in_base + ci];
                    let wrow = &wdat[w_base + ci * co..w_base + (ci + 1) * co];
                    let dwrow = &mut dwd[w_base + ci * co..w_base + (ci + 1) * co];
                    let mut acc = S::zero();
                    for o in 0..co {
                        let g = dyrow[o];
                        dwrow[o] = dwrow[o] + xv * g;
                        acc = acc + wrow[o] * g;
                    }
                    dxd[in_base + ci] = dxd[in_base + ci] + acc;
                }
            }
        }
    }
    Ok((dw, dx))
}

/// Raw network forward pass, returning activations for backprop.
pub fn forward_with_cache<S: Scalar>(
    params: &DenoiserParams<S>,
    cfg: &NetConfig,
    noisy: &Tensor<S>,
    c_noise: f64,
    cond: &ConditioningBundle<S>,
) -> Result<(Tensor<S>, ForwardCache<S>)> {
    check_forward_inputs(params, cfg, noisy, cond)?;
    let t = noisy.shape()[0];
    let e = cfg.embed_dim;
    let c = cfg.channels;
    let (h, w) = (noisy.shape()[1], noisy.shape()[2]);

    let x_in = Tensor::concat_last(&[noisy, cond.latent()])?;

    // per-frame modulation source: noise embedding plus frame embedding
    let ne = noise_embedding(c_noise, e);
    let mut embed_sum = Tensor::zeros(&[t, e])?;
    {
        let ed = embed_sum.data_mut();
        let fe = cond.embed().data();
        for f in 0..t {
            for k in 0..e {
                ed[f * e + k] = S::from_f64(ne[k]) + fe[f * e + k];
            }
        }
    }

    let mut acts: Vec<Tensor<S>> = Vec::with_capacity(1 + cfg.spatial_blocks + cfg.temporal_blocks);
    let h0 = pixelwise_linear(&x_in, params.get("input_proj.weight")?, params.get("input_proj.bias")?)?;
    acts.push(h0);

    for i in 0..cfg.spatial_blocks {
        let prev = acts.last().unwrap();
        let mut pre = conv2d_3x3(prev, params.get(&format!("spatial{i}.conv.weight"))?)?;
        let bias = params.get(&format!("spatial{i}.conv.bias"))?;
        let wmod = params.get(&format!("spatial{i}.mod.weight"))?;
        // mod_vec[f, c] = sum_e embed_sum[f, e] * wmod[e, c]
        let mut mod_vec = Tensor::zeros(&[t, c])?;
        {
            let md = mod_vec.data_mut();
            let ed = embed_sum.data();
            let wd = wmod.data();
            for f in 0..t {
                for k in 0..e {
                    let ev = ed[f * e + k];
                    let wrow = &wd[k * c..(k + 1) * c];
                    for o in 0..c {
                        md[f * c + o] = md[f * c + o] + ev * wrow[o];
                    }
                }
            }
        }
        {
            let pd = pre.data_mut();
            let bd = bias.data();
            let md = mod_vec.data();
            for f in 0..t {
                let mrow = &md[f * c..(f + 1) * c];
                for p in 0..h * w {
                    let base = (f * h * w + p) * c;
                    for o in 0..c {
                        pd[base + o] = (pd[base + o] + bd[o] + mrow[o]).tanh();
                    }
                }
            }
        }
        let next = acts.last().unwrap().add(&pre)?;
        acts.push(next);
    }

    for j in 0..cfg.temporal_blocks {
        let prev = acts.last().unwrap();
        let mut pre = conv1d_time(prev, params.get(&format!("temporal{j}.conv.weight"))?)?;
        let bias = params.get(&format!("temporal{j}.conv.bias"))?;
        {
            let pd = pre.data_mut();
            let bd = bias.data();
            for r in 0..t * h * w {
                let base = r * c;
                for o in 0..c {
                    pd[base + o] = (pd[base + o] + bd[o]).tanh();
                }
            }
        }
        let next = acts.last().unwrap().add(&pre)?;
        acts.push(next);
    }

    let out = pixelwise_linear(
        acts.last().unwrap(),
        params.get("output_proj.weight")?,
        params.get("output_proj.bias")?,
    )?;

    Ok((
        out,
        ForwardCache {
            x_in,
            embed_sum,
            acts,
        },
    ))
}

/// Raw network forward pass.
pub fn forward<S: Scalar>(
    params: &DenoiserParams<S>,
    cfg: &NetConfig,
    noisy: &Tensor<S>,
    c_noise: f64,
    cond: &ConditioningBundle<S>,
) -> Result<Tensor<S>> {
    Ok(forward_with_cache(params, cfg, noisy, c_noise, cond)?.0)
}

/// Reverse-mode gradients from cached activations. Returns gradients for
/// every parameter group plus the gradient with respect to the noisy input.
pub fn backward_from_cache<S: Scalar>(
    params: &DenoiserParams<S>,
    cfg: &NetConfig,
    cache: &ForwardCache<S>,
    upstream: &Tensor<S>,
) -> Result<(ParamGrads<S>, Tensor<S>)> {
    let mut grads = ParamGrads::new();
    let t = cache.x_in.shape()[0];
    let (h, w) = (cache.x_in.shape()[1], cache.x_in.shape()[2]);
    let c = cfg.channels;
    let e = cfg.embed_dim;

    let last = cache.acts.last().unwrap();
    let (dw_out, db_out, mut dh) =
        pixelwise_linear_backward(last, params.get("output_proj.weight")?, upstream)?;
    grads.insert("output_proj.weight".into(), dw_out);
    grads.insert("output_proj.bias".into(), db_out);

    for j in (0..cfg.temporal_blocks).rev() {
        let post = &cache.acts[1 + cfg.spatial_blocks + j];
        let input = &cache.acts[cfg.spatial_blocks + j];
        // the block stored input + tanh(pre); recover the tanh output by
        // subtraction instead of caching it separately
        let gate = post.sub(input)?;
        let dpre = dh.zip_map(&gate, |g, y| g * (S::one() - y * y))?;
        let mut db = Tensor::zeros(&[c])?;
        {
            let dbd = db.data_mut();
            let dpd = dpre.data();
            for r in 0..t * h * w {
                for o in 0..c {
                    dbd[o] = dbd[o] + dpd[r * c + o];
                }
            }
        }
        let (dw, dx) =
            conv1d_time_backward(input, params.get(&format!("temporal{j}.conv.weight"))?, &dpre)?;
        grads.insert(format!("temporal{j}.conv.weight"), dw);
        grads.insert(format!("temporal{j}.conv.bias"), db);
        dh = dx.add(&dh)?;
    }

    for i in (0..cfg.spatial_blocks).rev() {
        let post = &cache.acts[1 + i];
        let input = &cache.acts[i];
        let gate = post.sub(input)?;
        let dpre = dh.zip_map(&gate, |g, y| g * (S::one() - y * y))?;
        // bias and modulation share the per-frame reduction of dpre
        let mut db = Tensor::zeros(&[c])?;
        let mut dmod = Tensor::zeros(&[t, c])?;
        {
            let dbd = db.data_mut();
            let dmd = dmod.data_mut();
            let dpd = dpre.data();
            for f in 0..t {
                for p in 0..h * w {
                    let base = (f * h * w + p) * c;
                    for o in 0..c {
                        let g = dpd[base + o];
                        dbd[o] = dbd[o] + g;
                        dmd[f * c + o] = dmd[f * c + o] + g;
                    }
                }
            }
        }
        let mut dwmod = Tensor::zeros(&[e, c])?;
        {
            let dwd = dwmod.data_mut();
            let ed = cache.embed_sum.data();
            let dmd = dmod.data();
            for f in 0..t {
                for k in 0..e {
                    let ev = ed[f * e + k];
                    for o in 0..c {
                        dwd[k * c + o] = dwd[k * c + o] + ev * dmd[f * c + o];
                    }
                }
            }
        }
        let (dw, dx) =
            conv2d_3x3_backward(input, params.get(&format!("spatial{i}.conv.weight"))?, &dpre)?;
        grads.insert(format!("spatial{i}.conv.weight"), dw);
        grads.insert(format!("spatial{i}.conv.bias"), db);
        grads.insert(format!("spatial{i}.mod.weight"), dwmod);
        dh = dx.add(&dh)?;
    }

    let (dw_in, db_in, dx_in) =
        pixelwise_linear_backward(&cache.x_in, params.get("input_proj.weight")?, &dh)?;
    grads.insert("input_proj.weight".into(), dw_in);
    grads.insert("input_proj.bias".into(), db_in);

    // split the concatenated input gradient; the leading channels belong to
    // the noisy latent
    let c_noisy = params.latent_channels();
    let c_total = dx_in.shape()[3];
    let mut d_noisy = Tensor::zeros(&[t, h, w, c_noisy])?;
    {
        let dnd = d_noisy.data_mut();
        let dxd = dx_in.data();
        for r in 0..t * h * w {
            dnd[r * c_noisy..(r + 1) * c_noisy]
                .copy_from_slice(&dxd[r * c_total..r * c_total + c_noisy]);
        }
    }

    Ok((grads, d_noisy))
}

/// Forward plus reverse pass in one call.
pub fn backward<S: Scalar>(
    params: &DenoiserParams<S>,
    cfg: &NetConfig,
    noisy: &Tensor<S>,
    c_noise: f64,
    cond: &ConditioningBundle<S>,
    upstream: &Tensor<S>,
) -> Result<(ParamGrads<S>, Tensor<S>)> {
    let (out, cache) = forward_with_cache(params, cfg, noisy, c_noise, cond)?;
    if out.shape() != upstream.shape() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.shape(),
            out.shape()
        )));
    }
    backward_from_cache(params, cfg, &cache, upstream)
}

/// Adapter letting the trained network act as the EDM raw function `F`.
pub struct NetDenoiser<'a, S> {
    pub params: &'a DenoiserParams<S>,
    pub cfg: &'a NetConfig,
}

impl<S: Scalar> crate::edm::DenoiserFn<S> for NetDenoiser<'_, S> {
    fn raw(
        &self,
        x_scaled: &Tensor<S>,
        c_noise: f64,
        cond: &ConditioningBundle<S>,
    ) -> Result<Tensor<S>> {
        forward(self.params, self.cfg, x_scaled, c_noise, cond)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Result<Self> {
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::Domain(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<S> {
    m: BTreeMap<String, Tensor<S>>,
    v: BTreeMap<String, Tensor<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &DenoiserParams<S>) -> Self {
        let zeros: BTreeMap<String, Tensor<S>> = params
            .iter()
            .map(|(k, t)| (k.clone(), t.zeros_like()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update over all unfrozen groups. Non-finite gradients abort with
/// a training error naming the offending group.
pub fn adam_step<S: Scalar>(
    params: &mut DenoiserParams<S>,
    grads: &ParamGrads<S>,
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
) -> Result<()> {
    let t = state.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let names = params.group_names();
    for name in names {
        if params.is_frozen(&name) {
            continue;
        }
        let grad = grads
            .get(&name)
            .ok_or_else(|| Error::Params(format!("missing gradient for group {name:?}")))?;
        if !grad.all_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient in group {name:?} at optimizer step {t}"
            )));
        }
        let m = state.m.get_mut(&name).unwrap();
        let v = state.v.get_mut(&name).unwrap();
        let p = params.get_mut(&name)?;
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let one = S::one();
        let lr = S::from_f64(cfg.lr);
        let eps = S::from_f64(cfg.eps);
        let ibc1 = S::from_f64(1.0 / bc1);
        let ibc2 = S::from_f64(1.0 / bc2);
        let md = m.data_mut();
        let vd = v.data_mut();
        let pd = p.data_mut();
        let gd = grad.data();
        if gd.len() != pd.len() {
            return Err(Error::Shape(format!(
                "gradient size {} != parameter size {} in group {name:?}",
                gd.len(),
                pd.len()
            )));
        }
        for i in 0..pd.len() {
            let g = gd[i];
            md[i] = b1 * md[i] + (one - b1) * g;
            vd[i] = b2 * vd[i] + (one - b2) * g * g;
            let mhat = md[i] * ibc1;
            let vhat = vd[i] * ibc2;
            pd[i] = pd[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    state.step = t;
    Ok(())
}

/// Checkpoint layout: a directory holding `manifest.txt` plus one DCRF
/// tensor per parameter group (file name is the group name plus `.dcrf`).
/// The manifest records the `NetConfig` and each group's tag and shape.
pub fn save_checkpoint(dir: impl AsRef<Path>, params: &DenoiserParams<f32>, cfg: &NetConfig) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "channels {}", cfg.channels);
    let _ = writeln!(manifest, "spatial_blocks {}", cfg.spatial_blocks);
    let _ = writeln!(manifest, "temporal_blocks {}", cfg.temporal_blocks);
    let _ = writeln!(manifest, "embed_dim {}", cfg.embed_dim);
    for (name, tensor) in params.iter() {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            manifest,
            "group {} {} {}",
            name,
            params.tag(name)?.name(),
            dims.join("x")
        );
        io::save_tensor(dir.join(format!("{name}.dcrf")), tensor)?;
    }
    std::fs::write(dir.join("manifest.txt"), manifest)
        .map_err(|e| Error::io(dir.join("manifest.txt"), e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(DenoiserParams<f32>, NetConfig)> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut fields: BTreeMap<String, usize> = BTreeMap::new();
    let mut groups = BTreeMap::new();
    let mut tags = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [key, value] => {
                let v: usize = value.parse().map_err(|_| {
                    Error::format(&mpath, format!("line {}: bad value {value:?}", lineno + 1))
                })?;
                fields.insert((*key).to_string(), v);
            }
            ["group", name, tag, dims] => {
                let tag = GroupTag::parse(tag)?;
                let shape: Vec<usize> = dims
                    .split('x')
                    .map(|d| {
                        d.parse::<usize>().map_err(|_| {
                            Error::format(&mpath, format!("line {}: bad dims {dims:?}", lineno + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                let tensor = io::load_tensor(dir.join(format!("{name}.dcrf")))?;
                if tensor.shape() != shape.as_slice() {
                    return Err(Error::format(
                        &mpath,
                        format!(
                            "group {name}: manifest shape {shape:?} != tensor shape {:?}",
                            tensor.shape()
                        ),
                    ));
                }
                groups.insert((*name).to_string(), tensor);
                tags.insert((*name).to_string(), tag);
            }
            _ => {
                return Err(Error::format(
                    &mpath,
                    format!("line {}: unrecognized entry {line:?}", lineno + 1),
                ))
            }
        }
    }
    let get = |key: &str| -> Result<usize> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::format(&mpath, format!("missing field {key:?}")))
    };
    let cfg = NetConfig {
        channels: get("channels")?,
        spatial_blocks: get("spatial_blocks")?,
        temporal_blocks: get("temporal_blocks")?,
        embed_dim: get("embed_dim")?,
    };
    if groups.is_empty() {
        return Err(Error::format(&mpath, "checkpoint lists no parameter groups"));
    }
    let params = DenoiserParams {
        groups,
        tags,
        frozen: BTreeSet::new(),
    };
    Ok((params, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::VideoSeq;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            channels: 4,
            spatial_blocks: 1,
            temporal_blocks: 1,
            embed_dim: 4,
        }
    }

    fn rand_cond(rng: &mut Rng, t: usize, h: usize, w: usize, c: usize, e: usize) -> ConditioningBundle<f32> {
        ConditioningBundle::new(rng.randn(&[t, h, w, c]).unwrap(), rng.randn(&[t, e]).unwrap())
            .unwrap()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(0);
        let mut params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        for name in params.group_names() {
            let t = params.get_mut(&name).unwrap();
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let noisy = rng.randn(&[3, 4, 4, 2]).unwrap();
        let cond = rand_cond(&mut rng, 3, 4, 4, 2, 4);
        let out = forward(&params, &cfg, &noisy, 0.3, &cond).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fresh_params_give_zero_output_via_zero_head() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(1);
        let params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        let noisy = rng.randn(&[2, 4, 4, 2]).unwrap();
        let cond = rand_cond(&mut rng, 2, 4, 4, 2, 4);
        let out = forward(&params, &cfg, &noisy, -0.5, &cond).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn partition_is_total_and_tagged() {
        let cfg = NetConfig::default();
        let mut rng = Rng::new(2);
        let params = DenoiserParams::<f32>::init(&cfg, 48, &mut rng).unwrap();
        let spatial = params.count_by_tag(GroupTag::Spatial);
        let temporal = params.count_by_tag(GroupTag::Temporal);
        assert_eq!(spatial + temporal, params.total_params());
        assert!(spatial > 0 && temporal > 0);
    }

    #[test]
    fn freezing_by_tag() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(3);
        let mut params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        params.set_trainable_tags(&[GroupTag::Temporal]);
        assert!(params.is_frozen("input_proj.weight"));
        assert!(params.is_frozen("spatial0.conv.weight"));
        assert!(!params.is_frozen("temporal0.conv.weight"));
        params.set_trainable_tags(&[GroupTag::Spatial, GroupTag::Temporal]);
        assert!(params.frozen_names().is_empty());
    }

    #[test]
    fn single_frame_input_works() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(4);
        let params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        let noisy = rng.randn(&[1, 4, 4, 2]).unwrap();
        let cond = rand_cond(&mut rng, 1, 4, 4, 2, 4);
        let out = forward(&params, &cfg, &noisy, 0.0, &cond).unwrap();
        assert_eq!(out.shape(), &[1, 4, 4, 2]);
        assert!(out.all_finite());
    }

    #[test]
    fn frame_count_mismatch_is_conditioning_error() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(5);
        let params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        let noisy = rng.randn(&[3, 4, 4, 2]).unwrap();
        let cond = rand_cond(&mut rng, 2, 4, 4, 2, 4);
        assert!(matches!(
            forward(&params, &cfg, &noisy, 0.0, &cond),
            Err(Error::Conditioning(_))
        ));
    }

    #[test]
    fn temporal_receptive_field_is_bounded() {
        // with temporal_blocks = 0 a perturbation in the conditioning of
        // frame t must only change output frame t
        let cfg = NetConfig {
            channels: 4,
            spatial_blocks: 1,
            temporal_blocks: 0,
            embed_dim: 4,
        };
        let mut rng = Rng::new(6);
        let mut params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        // non-zero head so outputs respond to inputs
        for v in params.get_mut("output_proj.weight").unwrap().data_mut() {
            *v = 0.1;
        }
        let noisy = rng.randn(&[4, 4, 4, 2]).unwrap();
        let cond = rand_cond(&mut rng, 4, 4, 4, 2, 4);
        let base = forward(&params, &cfg, &noisy, 0.0, &cond).unwrap();

        let mut latent2 = cond.latent().clone();
        let frame_len = 4 * 4 * 2;
        for v in &mut latent2.data_mut()[2 * frame_len..3 * frame_len] {
            *v += 1.0;
        }
        let cond2 = ConditioningBundle::new(latent2, cond.embed().clone()).unwrap();
        let out2 = forward(&params, &cfg, &noisy, 0.0, &cond2).unwrap();
        let df = base.sub(&out2).unwrap();
        let out_frame = 4 * 4 * 2;
        for f in 0..4 {
            let frame = &df.data()[f * out_frame..(f + 1) * out_frame];
            let energy: f32 = frame.iter().map(|x| x.abs()).sum();
            if f == 2 {
                assert!(energy > 0.0, "perturbed frame must change");
            } else {
                assert_eq!(energy, 0.0, "frame {f} must be untouched");
            }
        }
    }

    #[test]
    fn temporal_blocks_widen_reach_by_one_frame_each() {
        let cfg = NetConfig {
            channels: 4,
            spatial_blocks: 0,
            temporal_blocks: 1,
            embed_dim: 4,
        };
        let mut rng = Rng::new(7);
        let mut params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        for v in params.get_mut("output_proj.weight").unwrap().data_mut() {
            *v = 0.1;
        }
        let t = 7;
        let noisy = rng.randn(&[t, 2, 2, 2]).unwrap();
        let cond = rand_cond(&mut rng, t, 2, 2, 2, 4);
        let base = forward(&params, &cfg, &noisy, 0.0, &cond).unwrap();

        let mut noisy2 = noisy.clone();
        let frame_len = 2 * 2 * 2;
        for v in &mut noisy2.data_mut()[3 * frame_len..4 * frame_len] {
            *v += 1.0;
        }
        let out2 = forward(&params, &cfg, &noisy2, 0.0, &cond).unwrap();
        let df = base.sub(&out2).unwrap();
        for f in 0..t {
            let frame = &df.data()[f * frame_len..(f + 1) * frame_len];
            let energy: f32 = frame.iter().map(|x| x.abs()).sum();
            let dist = (f as i64 - 3).abs();
            if dist <= 1 {
                assert!(energy > 0.0, "frame {f} inside receptive field");
            } else {
                assert_eq!(energy, 0.0, "frame {f} outside receptive field");
            }
        }
    }

    #[test]
    fn constant_frame_has_zero_std_and_gradient_features() {
        let video =
            VideoSeq::new(Tensor::from_vec(&[1, 4, 4, 3], vec![0.5; 48]).unwrap()).unwrap();
        let f = frame_features(&video, 0);
        assert!((f[0] - 0.5).abs() < 1e-12);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[5], 0.0);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(8);
        let mut params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        // zero one scalar weight and give it gradient 1.0
        let name = "input_proj.bias";
        params.get_mut(name).unwrap().data_mut()[0] = 0.0;
        let mut grads = ParamGrads::new();
        for n in params.group_names() {
            let mut g = params.get(&n).unwrap().zeros_like();
            if n == name {
                g.data_mut()[0] = 1.0;
            }
            grads.insert(n, g);
        }
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &AdamConfig::new(0.1).unwrap()).unwrap();
        let v = params.get(name).unwrap().data()[0];
        assert!((v - (-0.1)).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn adam_rejects_nan_gradients_naming_group() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(9);
        let mut params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        let mut grads = ParamGrads::new();
        for n in params.group_names() {
            let mut g = params.get(&n).unwrap().zeros_like();
            if n == "spatial0.conv.weight" {
                g.data_mut()[0] = f32::NAN;
            }
            grads.insert(n, g);
        }
        let mut state = AdamState::new(&params);
        match adam_step(&mut params, &grads, &mut state, &AdamConfig::new(0.1).unwrap()) {
            Err(Error::Training(msg)) => assert!(msg.contains("spatial0.conv.weight")),
            other => panic!("expected training error, got {other:?}"),
        }
    }

    #[test]
    fn frozen_groups_do_not_move() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(10);
        let mut params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        params.set_trainable_tags(&[GroupTag::Spatial]);
        let before = params.get("temporal0.conv.weight").unwrap().clone();
        let mut grads = ParamGrads::new();
        for n in params.group_names() {
            let mut g = params.get(&n).unwrap().zeros_like();
            for v in g.data_mut() {
                *v = 0.5;
            }
            grads.insert(n, g);
        }
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &AdamConfig::new(0.01).unwrap()).unwrap();
        let after = params.get("temporal0.conv.weight").unwrap();
        let same = before
            .data()
            .iter()
            .zip(after.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "frozen group must be bit-identical");
        let moved = params.get("spatial0.conv.weight").unwrap();
        assert_ne!(moved.data()[0].to_bits(), {
            // spatial weights must have moved; compare against what adam
            // cannot produce: identical bits with non-zero gradient
            let mut rng2 = Rng::new(10);
            DenoiserParams::<f32>::init(&cfg, 2, &mut rng2)
                .unwrap()
                .get("spatial0.conv.weight")
                .unwrap()
                .data()[0]
                .to_bits()
        });
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(11);
        let params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &params, &cfg).unwrap();
        let (back, cfg2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params.group_names(), back.group_names());
        for name in params.group_names() {
            let a = params.get(&name).unwrap();
            let b = back.get(&name).unwrap();
            assert_eq!(a.shape(), b.shape());
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_eq!(params.tag(&name).unwrap(), back.tag(&name).unwrap());
        }
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let cfg = tiny_cfg();
        let run = || {
            let mut rng = Rng::new(77);
            let mut params = DenoiserParams::<f32>::init(&cfg, 2, &mut rng).unwrap();
            let mut state = AdamState::new(&params);
            let acfg = AdamConfig::new(0.01).unwrap();
            for it in 0..5 {
                let mut item_rng = rng.derive(it);
                let noisy = item_rng.randn(&[2, 4, 4, 2]).unwrap();
                let cond = ConditioningBundle::new(
                    item_rng.randn(&[2, 4, 4, 2]).unwrap(),
                    item_rng.randn(&[2, 4]).unwrap(),
                )
                .unwrap();
                let upstream = item_rng.randn(&[2, 4, 4, 2]).unwrap();
                let (grads, _) =
                    backward(&params, &cfg, &noisy, 0.1, &cond, &upstream).unwrap();
                adam_step(&mut params, &grads, &mut state, &acfg).unwrap();
            }
            params
        };
        let a = run();
        let b = run();
        for name in a.group_names() {
            let x = a.get(&name).unwrap();
            let y = b.get(&name).unwrap();
            assert!(x
                .data()
                .iter()
                .zip(y.data())
                .all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
