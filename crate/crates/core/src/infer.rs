//! Long-video inference over overlapped segments.
//!
//! Sequences longer than the sampling window are split into overlapping
//! segments. Each segment after the first starts from the previous
//! segment's denoised overlap frames re-noised to the top of the schedule,
//! which anchors the scale and shift of the new segment, and segments are
//! merged by interpolating the overlap with weights falling linearly from
//! the previous segment to the next.

use crate::codec::{self, CodecConfig};
use crate::edm::{self, make_schedule, CfgConfig, ScheduleConfig};
use crate::error::{Error, Result};
use crate::net::{ConditioningBundle, DenoiserParams, NetConfig, NetDenoiser};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::{DepthSeq, VideoSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    pub window: usize,
    pub overlap: usize,
    pub segments: Vec<Segment>,
}

impl SegmentPlan {
    /// Total frame count covered by the plan.
    pub fn frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    /// Checks coverage and overlap structure; used by property tests.
    pub fn check(&self, t: usize) -> Result<()> {
        let segs = &self.segments;
        if segs.is_empty() || segs[0].start != 0 || segs.last().unwrap().end != t {
            return Err(Error::Inference(format!("plan does not cover [0, {t})")));
        }
        for (i, s) in segs.iter().enumerate() {
            if s.is_empty() || s.len() > self.window {
                return Err(Error::Inference(format!("segment {i} has bad length")));
            }
            if i > 0 {
                let prev = &segs[i - 1];
                let ov = prev.end as i64 - s.start as i64;
                if ov < self.overlap.min(prev.len().min(s.len())) as i64 {
                    return Err(Error::Inference(format!("segment {i} overlap {ov} too small")));
                }
                if s.end <= prev.end {
                    return Err(Error::Inference(format!("segment {i} adds no frames")));
                }
                let last = i + 1 == segs.len();
                if !last && ov != self.overlap as i64 {
                    return Err(Error::Inference(format!(
                        "interior segment {i} overlaps by {ov}, expected {}",
                        self.overlap
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Splits `[0, t)` into segments of up to `window` frames starting at
/// stride `window - overlap`; the final segment is end-aligned to `t` and
/// overlaps its predecessor by at least `overlap`.
pub fn plan_segments(t: usize, window: usize, overlap: usize) -> Result<SegmentPlan> {
    if t == 0 {
        return Err(Error::Inference("cannot plan zero frames".into()));
    }
    if window == 0 || overlap >= window {
        return Err(Error::Inference(format!(
            "need 0 <= overlap < window, got window {window}, overlap {overlap}"
        )));
    }
    let mut segments = Vec::new();
    if t <= window {
        segments.push(Segment { start: 0, end: t });
    } else {
        let stride = window - overlap;
        let mut start = 0;
        while start + window < t {
            segments.push(Segment {
                start,
                end: start + window,
            });
            start += stride;
        }
        segments.push(Segment {
            start: t - window,
            end: t,
        });
    }
    let plan = SegmentPlan {
        window,
        overlap,
        segments,
    };
    plan.check(t)?;
    Ok(plan)
}

/// Interpolation weights over an overlap of `o` frames: 1 at the first
/// frame, 0 at the last, linear in between; a single frame keeps the
/// previous segment.
pub fn stitch_weights(o: usize) -> Vec<f64> {
    if o == 1 {
        return vec![1.0];
    }
    (1..=o)
        .map(|i| (o - i) as f64 / (o - 1) as f64)
        .collect()
}

/// Initial latent for one segment: fresh frames start at pure `sigma_max`
/// noise, while frames carried over from the previous segment re-noise its
/// denoised latent. Noise is drawn for the whole segment in one pass, so a
/// given rng state yields paired anchored/independent inits.
pub fn anchored_init<S: Scalar>(
    prev_overlap: Option<&Tensor<S>>,
    frames: usize,
    frame_shape: &[usize],
    sigma_max: f64,
    rng: &mut Rng,
) -> Result<Tensor<S>> {
    let mut shape = vec![frames];
    shape.extend_from_slice(frame_shape);
    let eps: Tensor<S> = rng.randn(&shape)?;
    let mut init = eps.scale(S::from_f64(sigma_max));
    if let Some(prev) = prev_overlap {
        if prev.rank() != init.rank() || prev.shape()[1..] != shape[1..] {
            return Err(Error::Inference(format!(
                "anchor frames {:?} do not fit segment frames {:?}",
                prev.shape(),
                shape
            )));
        }
        let o = prev.shape()[0];
        if o > frames {
            return Err(Error::Inference(format!(
                "anchor overlap {o} exceeds segment length {frames}"
            )));
        }
        let frame_elems: usize = frame_shape.iter().product();
        let dst = init.data_mut();
        let src = prev.data();
        for k in 0..o * frame_elems {
            dst[k] = dst[k] + src[k];
        }
    }
    Ok(init)
}

/// Merges two denoised latent sequences whose trailing `o` / leading `o`
/// frames describe the same video frames, interpolating the overlap with
/// the given weights. Endpoint weights copy frames through bit-exactly.
pub fn stitch_with_weights<S: Scalar>(
    prev: &Tensor<S>,
    next: &Tensor<S>,
    weights: &[f64],
) -> Result<Tensor<S>> {
    let o = weights.len();
    if o == 0 || o > prev.shape()[0] || o > next.shape()[0] {
        return Err(Error::Inference(format!(
            "overlap {o} exceeds segment lengths {} and {}",
            prev.shape()[0],
            next.shape()[0]
        )));
    }
    if prev.shape()[1..] != next.shape()[1..] {
        return Err(Error::Inference(format!(
            "cannot stitch {:?} onto {:?}",
            next.shape(),
            prev.shape()
        )));
    }
    let (pt, nt) = (prev.shape()[0], next.shape()[0]);
    let frame_elems: usize = prev.shape()[1..].iter().product();
    let mut data = Vec::with_capacity((pt + nt - o) * frame_elems);
    data.extend_from_slice(&prev.data()[..(pt - o) * frame_elems]);
    for (i, &w) in weights.iter().enumerate() {
        let p = &prev.data()[(pt - o + i) * frame_elems..(pt - o + i + 1) * frame_elems];
        let n = &next.data()[i * frame_elems..(i + 1) * frame_elems];
        if w == 1.0 {
            data.extend_from_slice(p);
        } else if w == 0.0 {
            data.extend_from_slice(n);
        } else {
            let (wp, wn) = (S::from_f64(w), S::from_f64(1.0 - w));
            data.extend(p.iter().zip(n).map(|(&pv, &nv)| wp * pv + wn * nv));
        }
    }
    data.extend_from_slice(&next.data()[o * frame_elems..]);
    let mut shape: Vec<usize> = prev.shape().to_vec();
    shape[0] = pt + nt - o;
    Tensor::from_vec(&shape, data)
}

pub fn stitch<S: Scalar>(prev: &Tensor<S>, next: &Tensor<S>, o: usize) -> Result<Tensor<S>> {
    stitch_with_weights(prev, next, &stitch_weights(o.max(1)))
}

/// Ablation switch for the segment-merging strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StitchVariant {
    /// Independent segment inits, overlap averaged with constant 1/2.
    IndependentAverage,
    /// Anchored inits, overlap still averaged with constant 1/2.
    AnchoredAverage,
    /// Anchored inits plus linear interpolation weights.
    Full,
}

impl StitchVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            StitchVariant::IndependentAverage => "baseline",
            StitchVariant::AnchoredAverage => "anchored_init",
            StitchVariant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(StitchVariant::IndependentAverage),
            "anchored_init" => Ok(StitchVariant::AnchoredAverage),
            "full" => Ok(StitchVariant::Full),
            other => Err(Error::Config(format!("unknown stitch variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub window: usize,
    pub overlap: usize,
    pub schedule: ScheduleConfig,
    pub codec: CodecConfig,
    /// Classifier-free guidance scale; 1 takes the conditional path only.
    pub guidance: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            window: 16,
            overlap: 4,
            schedule: ScheduleConfig::default(),
            codec: CodecConfig::default(),
            guidance: 1.0,
        }
    }
}

/// Denoised latent for the whole sequence under a given merge variant.
/// Per-segment rng streams derive from the seed and segment index alone,
/// so all variants share segment noise and differ only in strategy.
pub fn infer_latents(
    params: &DenoiserParams<f32>,
    net_cfg: &NetConfig,
    video: &VideoSeq,
    icfg: &InferConfig,
    seed: u64,
    variant: StitchVariant,
) -> Result<Tensor<f32>> {
    let plan = plan_segments(video.frames(), icfg.window, icfg.overlap)?;
    let schedule = make_schedule(&icfg.schedule)?;
    let guidance = CfgConfig::new(icfg.guidance)?;
    let sigma_max = schedule.sigma_max();
    let video_latent = latent::standardize_video(&codec::encode_video(video, &icfg.codec)?)?;
    let frame_shape: Vec<usize> = video_latent.shape()[1..].into();
    let denoiser = NetDenoiser {
        params,
        cfg: net_cfg,
    };
    let master = Rng::new(seed);
    let mut merged: Option<Tensor<f32>> = None;

    for (k, seg) in plan.segments.iter().enumerate() {
        let mut seg_rng = master.derive(k as u64);
        let clip = video.slice_frames(seg.start, seg.end)?;
        let cond = ConditioningBundle::new(
            video_latent.slice0(seg.start, seg.end)?,
            crate::net::frame_embedding(&clip, net_cfg.embed_dim)?,
        )?;
        let anchor = match (&merged, variant) {
            (Some(m), StitchVariant::AnchoredAverage | StitchVariant::Full)
                if seg.start < m.shape()[0] =>
            {
                Some(m.slice0(seg.start, m.shape()[0])?)
            }
            _ => None,
        };
        let init = anchored_init(anchor.as_ref(), seg.len(), &frame_shape, sigma_max, &mut seg_rng)?;
        let out = edm::sample(&denoiser, &init, &schedule, &cond, Some(&guidance))?;
        if !out.all_finite() {
            return Err(Error::Inference(format!(
                "segment {k} produced non-finite latents"
            )));
        }
        merged = Some(match merged {
            None => out,
            Some(m) => {
                let ov = m.shape()[0] - seg.start;
                if ov == 0 {
                    Tensor::concat0(&[&m, &out])?
                } else {
                    match variant {
                        StitchVariant::Full => stitch(&m, &out, ov)?,
                        _ => stitch_with_weights(&m, &out, &vec![0.5; ov])?,
                    }
                }
            }
        });
    }
    latent::destandardize_depth(&merged.expect("plan has at least one segment"))
}

/// Full inference path: encode the conditioning video, denoise segment by
/// segment, merge, decode, and min-max normalize the result over the whole
/// sequence.
pub fn infer_long_variant(
    params: &DenoiserParams<f32>,
    net_cfg: &NetConfig,
    video: &VideoSeq,
    icfg: &InferConfig,
    seed: u64,
    variant: StitchVariant,
) -> Result<DepthSeq> {
    let latent = infer_latents(params, net_cfg, video, icfg, seed, variant)?;
    let depth = codec::decode_depth(&latent, &icfg.codec)?;
    let raw = DepthSeq::new(depth)?;
    crate::synth::renormalize01(&raw)
}

pub fn infer_long(
    params: &DenoiserParams<f32>,
    net_cfg: &NetConfig,
    video: &VideoSeq,
    icfg: &InferConfig,
    seed: u64,
) -> Result<DepthSeq> {
    infer_long_variant(params, net_cfg, video, icfg, seed, StitchVariant::Full)
}

/// Mean absolute frame-to-frame change, one value per adjacent frame pair.
pub fn frame_step_means(depth: &DepthSeq) -> Vec<f64> {
    let t = depth.frames();
    let px = depth.height() * depth.width();
    let d = depth.tensor().data();
    (1..t)
        .map(|f| {
            let prev = &d[(f - 1) * px..f * px];
            let cur = &d[f * px..(f + 1) * px];
            prev.iter()
                .zip(cur)
                .map(|(a, b)| (a - b).abs() as f64)
                .sum::<f64>()
                / px as f64
        })
        .collect()
}

/// Seam smoothness summary: the worst frame-step jump at any segment
/// boundary against the median jump over the whole sequence. `None` when
/// the plan has a single segment or too few frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeamStats {
    pub max_boundary: f64,
    pub median_step: f64,
}

pub fn seam_stats(depth: &DepthSeq, plan: &SegmentPlan) -> Option<SeamStats> {
    let means = frame_step_means(depth);
    if means.is_empty() || plan.segments.len() < 2 {
        return None;
    }
    let t = depth.frames();
    let mut boundary = Vec::new();
    for (i, seg) in plan.segments.iter().enumerate() {
        if i > 0 && seg.start >= 1 {
            boundary.push(means[seg.start - 1]);
        }
        if i + 1 < plan.segments.len() && seg.end < t {
            boundary.push(means[seg.end - 1]);
        }
    }
    let max_boundary = boundary.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sorted = means.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_step = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    Some(SeamStats {
        max_boundary,
        median_step,
    })
}
