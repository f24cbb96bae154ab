//! Procedural paired video/depth generation.
//!
//! Scenes are textured rectangles and ellipses drifting over a sloped
//! background plane, rendered with a z-buffer under a panning, zooming
//! camera. A depth-dependent haze ties appearance to the z-buffer so depth
//! is locally inferable from video, which is what makes conditioning on
//! video meaningful. Two corpus styles exist: `Realistic` (wide scene diversity,
//! depth labels degraded by a stereo-artifact stand-in) and `Synthetic`
//! (narrow diversity, finer texture, exact labels, fixed length).
//! Labels are normalized disparity with one scale/shift per sequence.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::save_tensor;
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;
use crate::video::{DepthSeq, VideoSeq};

/// Floor applied to every rendered depth so the z-buffer stays positive.
const OBJECT_DEPTH_FLOOR: f64 = 0.25;
const BACKGROUND_DEPTH_FLOOR: f64 = 0.5;
/// Fraction of frames each object must intersect the view.
const IN_FRAME_FRACTION: f64 = 0.8;
/// Aerial-perspective haze: every pixel blends toward `HAZE_COLOR` with
/// weight `1 - exp(-z / HAZE_SCALE)`. Sprites use warm albedos with a low
/// blue channel, so the blue channel in particular reads out depth almost
/// independently of albedo. Without some shading cue tied to z, depth
/// would not be inferable from appearance at all and conditioning would
/// be useless.
const HAZE_SCALE: f64 = 8.0;
const HAZE_COLOR: [f64; 3] = [0.72, 0.74, 0.84];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusStyle {
    Realistic,
    Synthetic,
}

impl CorpusStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusStyle::Realistic => "realistic",
            CorpusStyle::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "realistic" => Ok(CorpusStyle::Realistic),
            "synthetic" => Ok(CorpusStyle::Synthetic),
            other => Err(Error::Corpus(format!("unknown corpus style {other:?}"))),
        }
    }
}

impl fmt::Display for CorpusStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

/// One sprite: a flat shape at a per-frame depth, moving with linear
/// velocity plus sinusoidal perturbation in x, y, and depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub shape: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub half_w: f64,
    pub half_h: f64,
    pub depth: f64,
    pub vx: f64,
    pub vy: f64,
    pub v_depth: f64,
    pub amp_x: f64,
    pub freq_x: f64,
    pub phase_x: f64,
    pub amp_y: f64,
    pub freq_y: f64,
    pub phase_y: f64,
    pub amp_depth: f64,
    pub freq_depth: f64,
    pub phase_depth: f64,
    pub color: [f64; 3],
    pub tex_amp: f64,
    pub tex_freq: f64,
    pub tex_phase_x: f64,
    pub tex_phase_y: f64,
}

impl ObjectSpec {
    pub fn center_at(&self, t: usize) -> (f64, f64) {
        let t = t as f64;
        let x = self.cx + self.vx * t + self.amp_x * (self.freq_x * t + self.phase_x).sin();
        let y = self.cy + self.vy * t + self.amp_y * (self.freq_y * t + self.phase_y).sin();
        (x, y)
    }

    pub fn depth_at(&self, t: usize) -> f64 {
        let t = t as f64;
        let d = self.depth
            + self.v_depth * t
            + self.amp_depth * (self.freq_depth * t + self.phase_depth).sin();
        d.max(OBJECT_DEPTH_FLOOR)
    }

    fn covers(&self, dx: f64, dy: f64) -> bool {
        match self.shape {
            ShapeKind::Rect => dx.abs() <= self.half_w && dy.abs() <= self.half_h,
            ShapeKind::Ellipse => {
                let u = dx / self.half_w;
                let v = dy / self.half_h;
                u * u + v * v <= 1.0
            }
        }
    }
}

/// Camera pan in world pixels per frame and exponential zoom per frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpec {
    pub pan_vx: f64,
    pub pan_vy: f64,
    pub zoom_rate: f64,
}

impl CameraSpec {
    pub fn zoom_at(&self, t: usize) -> f64 {
        (self.zoom_rate * t as f64).exp()
    }

    pub fn pan_at(&self, t: usize) -> (f64, f64) {
        (self.pan_vx * t as f64, self.pan_vy * t as f64)
    }
}

/// Sloped depth plane behind all objects, with a multiplicative shading
/// texture that does not affect depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundSpec {
    pub base_depth: f64,
    pub slope_x: f64,
    pub slope_y: f64,
    pub tex_amp: f64,
    pub tex_freq_x: f64,
    pub tex_freq_y: f64,
    pub tex_phase_x: f64,
    pub tex_phase_y: f64,
}

impl BackgroundSpec {
    pub fn depth_at(&self, x: f64, y: f64) -> f64 {
        (self.base_depth + self.slope_x * x + self.slope_y * y).max(BACKGROUND_DEPTH_FLOOR)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub objects: Vec<ObjectSpec>,
    pub camera: CameraSpec,
    pub background: BackgroundSpec,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Scene(format!(
                "scene dimensions must be positive, got T={} H={} W={}",
                self.frames, self.height, self.width
            )));
        }
        if self.background.base_depth <= 0.0 {
            return Err(Error::Scene("background depth must be positive".into()));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.half_w <= 0.0 || obj.half_h <= 0.0 {
                return Err(Error::Scene(format!("object {i} has zero area")));
            }
            if obj.depth <= 0.0 {
                return Err(Error::Scene(format!("object {i} has nonpositive depth")));
            }
            let frac = self.in_frame_fraction(obj);
            if frac + 1e-9 < IN_FRAME_FRACTION {
                return Err(Error::Scene(format!(
                    "object {i} is in frame for only {:.0}% of frames",
                    frac * 100.0
                )));
            }
        }
        Ok(())
    }

    /// Fraction of frames where the object's bounding box intersects the
    /// visible world window.
    fn in_frame_fraction(&self, obj: &ObjectSpec) -> f64 {
        let mut hit = 0usize;
        for t in 0..self.frames {
            let (cx, cy) = obj.center_at(t);
            let (px, py) = self.camera.pan_at(t);
            let zoom = self.camera.zoom_at(t);
            let half_wx = (self.width as f64 - 1.0) / 2.0 / zoom;
            let half_wy = (self.height as f64 - 1.0) / 2.0 / zoom;
            let in_x = (cx - obj.half_w) <= (px + half_wx) && (cx + obj.half_w) >= (px - half_wx);
            let in_y = (cy - obj.half_h) <= (py + half_wy) && (cy + obj.half_h) >= (py - half_wy);
            if in_x && in_y {
                hit += 1;
            }
        }
        hit as f64 / self.frames as f64
    }

    /// Draws a random scene in the given style. Motion magnitudes are
    /// shrunk deterministically until every object stays at least partly
    /// in frame for the required fraction of frames, and depth excursions
    /// are capped so objects never cross the background plane.
    pub fn sample(
        style: CorpusStyle,
        frames: usize,
        height: usize,
        width: usize,
        rng: &mut Rng,
    ) -> Result<SceneSpec> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Scene("cannot sample a scene with zero extent".into()));
        }
        let (n_objects, size_lo, size_hi, speed, amp_hi, pan, zoom, tex_freq_lo, tex_freq_hi) =
            match style {
                CorpusStyle::Realistic => {
                    (rng.uniform_int(1, 4), 0.08, 0.28, 1.2, 6.0, 0.5, 0.004, 0.2, 1.2)
                }
                CorpusStyle::Synthetic => {
                    (rng.uniform_int(2, 3), 0.06, 0.16, 0.6, 3.0, 0.25, 0.002, 0.8, 2.0)
                }
            };
        let depth_hi = match style {
            CorpusStyle::Realistic => 6.0,
            CorpusStyle::Synthetic => 5.0,
        };

        let camera = CameraSpec {
            pan_vx: rng.uniform_range(-pan, pan),
            pan_vy: rng.uniform_range(-pan, pan),
            zoom_rate: rng.uniform_range(-zoom, zoom),
        };

        // Keep the plane depth positive across the widest world window the
        // camera can reach, so the slope cap shrinks with scene extent.
        let max_extent = (height.max(width) as f64 / 2.0) / (-zoom * frames as f64).exp()
            + pan * frames as f64;
        let slope_cap = 0.25 / max_extent.max(1.0);
        let background = BackgroundSpec {
            base_depth: rng.uniform_range(9.0, 13.0),
            slope_x: rng.uniform_range(-slope_cap, slope_cap),
            slope_y: rng.uniform_range(-slope_cap, slope_cap),
            tex_amp: rng.uniform_range(0.03, 0.15),
            tex_freq_x: rng.uniform_range(0.05, 0.4),
            tex_freq_y: rng.uniform_range(0.05, 0.4),
            tex_phase_x: rng.uniform_range(0.0, std::f64::consts::TAU),
            tex_phase_y: rng.uniform_range(0.0, std::f64::consts::TAU),
        };

        let mut objects = Vec::with_capacity(n_objects);
        for _ in 0..n_objects {
            let shape = if rng.uniform() < 0.5 {
                ShapeKind::Rect
            } else {
                ShapeKind::Ellipse
            };
            // Blue stays the smallest channel so sprites never blend into
            // the blue-tinted background shading.
            let hi_val = rng.uniform_range(0.75, 1.0);
            let mid_val = rng.uniform_range(0.15, 0.85);
            let lo_val = rng.uniform_range(0.0, 0.2);
            let color = if rng.uniform() < 0.5 {
                [hi_val, mid_val, lo_val]
            } else {
                [mid_val, hi_val, lo_val]
            };
            let depth = rng.uniform_range(1.0, depth_hi);
            let mut v_depth = rng.uniform_range(-0.05, 0.05);
            let mut amp_depth = rng.uniform_range(0.0, 0.8);
            // Cap the depth excursion so the trajectory stays inside
            // [0.5, 7.0], clear of both the floor and the plane.
            let margin = (depth - 0.5).min(7.0 - depth).max(0.0);
            let excursion = v_depth.abs() * (frames as f64 - 1.0) + amp_depth;
            if excursion > margin && excursion > 0.0 {
                let shrink = margin / excursion;
                v_depth *= shrink;
                amp_depth *= shrink;
            }
            objects.push(ObjectSpec {
                shape,
                cx: rng.uniform_range(-0.35, 0.35) * width as f64,
                cy: rng.uniform_range(-0.35, 0.35) * height as f64,
                half_w: rng.uniform_range(size_lo, size_hi) * width as f64,
                half_h: rng.uniform_range(size_lo, size_hi) * height as f64,
                depth,
                vx: rng.uniform_range(-speed, speed),
                vy: rng.uniform_range(-speed, speed),
                v_depth,
                amp_x: rng.uniform_range(0.0, amp_hi),
                freq_x: rng.uniform_range(0.05, 0.6),
                phase_x: rng.uniform_range(0.0, std::f64::consts::TAU),
                amp_y: rng.uniform_range(0.0, amp_hi),
                freq_y: rng.uniform_range(0.05, 0.6),
                phase_y: rng.uniform_range(0.0, std::f64::consts::TAU),
                amp_depth,
                freq_depth: rng.uniform_range(0.05, 0.5),
                phase_depth: rng.uniform_range(0.0, std::f64::consts::TAU),
                color,
                tex_amp: rng.uniform_range(0.05, 0.35),
                tex_freq: rng.uniform_range(tex_freq_lo, tex_freq_hi),
                tex_phase_x: rng.uniform_range(0.0, std::f64::consts::TAU),
                tex_phase_y: rng.uniform_range(0.0, std::f64::consts::TAU),
            });
        }

        let mut spec = SceneSpec {
            frames,
            height,
            width,
            objects,
            camera,
            background,
        };
        // Shrink every motion source together until the in-frame fraction
        // holds; the fixed point (a static scene) always satisfies it.
        for _ in 0..64 {
            let ok = spec
                .objects
                .iter()
                .all(|o| spec.in_frame_fraction(o) + 1e-9 >= IN_FRAME_FRACTION);
            if ok {
                break;
            }
            spec.camera.pan_vx *= 0.7;
            spec.camera.pan_vy *= 0.7;
            spec.camera.zoom_rate *= 0.7;
            for obj in &mut spec.objects {
                obj.vx *= 0.7;
                obj.vy *= 0.7;
                obj.amp_x *= 0.7;
                obj.amp_y *= 0.7;
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn render_frame(spec: &SceneSpec, t: usize, video: &mut [f32], depth: &mut [f32]) {
    let w = spec.width;
    let h = spec.height;
    let zoom = spec.camera.zoom_at(t);
    let (pan_x, pan_y) = spec.camera.pan_at(t);
    let cx_img = (w as f64 - 1.0) / 2.0;
    let cy_img = (h as f64 - 1.0) / 2.0;
    let states: Vec<(f64, f64, f64)> = spec
        .objects
        .iter()
        .map(|o| {
            let (x, y) = o.center_at(t);
            (x, y, o.depth_at(t))
        })
        .collect();
    let bg = &spec.background;
    for i in 0..h {
        for j in 0..w {
            let x = pan_x + (j as f64 - cx_img) / zoom;
            let y = pan_y + (i as f64 - cy_img) / zoom;
            let mut z = bg.depth_at(x, y);
            // Background shading: a slight depth gradient with a blue tint
            // and a low-frequency multiplicative texture.
            let v = ((z - 8.0) / 8.0).clamp(0.0, 1.0);
            let g = 0.3 + 0.4 * v;
            let f = 1.0
                + bg.tex_amp
                    * (bg.tex_freq_x * x + bg.tex_phase_x).sin()
                    * (bg.tex_freq_y * y + bg.tex_phase_y).sin();
            let mut rgb = [g * f, g * f, (0.9 * g + 0.1) * f];
            for (obj, &(ox, oy, oz)) in spec.objects.iter().zip(&states) {
                if oz < z && obj.covers(x - ox, y - oy) {
                    z = oz;
                    let tex = 1.0
                        + obj.tex_amp
                            * (obj.tex_freq * (x - ox) + obj.tex_phase_x).sin()
                            * (obj.tex_freq * (y - oy) + obj.tex_phase_y).sin();
                    rgb = [obj.color[0] * tex, obj.color[1] * tex, obj.color[2] * tex];
                }
            }
            let px = (i * w + j) * 3;
            let a = (-z / HAZE_SCALE).exp();
            for c in 0..3 {
                let hazed = a * rgb[c] + (1.0 - a) * HAZE_COLOR[c];
                video[px + c] = hazed.clamp(0.0, 1.0) as f32;
            }
            depth[i * w + j] = z as f32;
        }
    }
}

/// Renders the scene into an RGB video and its exact metric z-buffer.
pub fn render_scene(spec: &SceneSpec) -> Result<(VideoSeq, DepthSeq)> {
    spec.validate()?;
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let mut video = Tensor::<f32>::zeros(&[t, h, w, 3])?;
    let mut depth = Tensor::<f32>::zeros(&[t, h, w])?;
    let frame_px = h * w;
    video
        .data_mut()
        .par_chunks_mut(frame_px * 3)
        .zip(depth.data_mut().par_chunks_mut(frame_px))
        .enumerate()
        .for_each(|(ft, (vf, df))| render_frame(spec, ft, vf, df));
    Ok((VideoSeq::new(video)?, DepthSeq::new(depth)?))
}

/// Maps metric depth to disparity and min-max normalizes with a single
/// scale and shift shared by every frame in the sequence.
pub fn normalize_disparity(depth: &DepthSeq) -> Result<DepthSeq> {
    let (lo, _) = depth.tensor().min_max();
    if lo <= 0.0 {
        return Err(Error::Data(format!(
            "disparity needs positive depth, found minimum {lo}"
        )));
    }
    let disp: Vec<f64> = depth.tensor().data().iter().map(|&d| 1.0 / d as f64).collect();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in &disp {
        min = min.min(v);
        max = max.max(v);
    }
    let range = max - min;
    if range <= 0.0 || range < 1e-12 * max.abs() {
        return Err(Error::Degenerate(
            "constant disparity cannot be normalized".into(),
        ));
    }
    let data: Vec<f32> = disp.iter().map(|&v| ((v - min) / range) as f32).collect();
    DepthSeq::new(Tensor::from_vec(depth.tensor().shape(), data)?)
}

/// Rescales values already in [0, 1] so the sequence minimum and maximum
/// land exactly on 0 and 1 again, e.g. after label corruption.
pub fn renormalize01(depth: &DepthSeq) -> Result<DepthSeq> {
    let (lo, hi) = depth.tensor().min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let range = hi - lo;
    if range < 1e-12 {
        return Err(Error::Degenerate("constant labels cannot be rescaled".into()));
    }
    let data: Vec<f32> = depth
        .tensor()
        .data()
        .iter()
        .map(|&v| ((v as f64 - lo) / range) as f32)
        .collect();
    DepthSeq::new(Tensor::from_vec(depth.tensor().shape(), data)?)
}

/// Degrades normalized disparity labels with a smooth low-frequency field
/// plus noise concentrated at depth edges, mimicking stereo-matching
/// artifacts. The noise field is drawn independently of `strength`, so a
/// fixed seed yields pointwise-monotone corruption in `strength`.
pub fn corrupt_labels(depth: &DepthSeq, rng: &mut Rng, strength: f64) -> Result<DepthSeq> {
    if !strength.is_finite() || strength < 0.0 {
        return Err(Error::Data(format!(
            "corruption strength must be finite and nonnegative, got {strength}"
        )));
    }
    if strength == 0.0 {
        return Ok(depth.clone());
    }
    let shape = depth.tensor().shape();
    let (t, h, w) = (shape[0], shape[1], shape[2]);
    let cell = 8.0;
    let nodes = |n: usize| ((n as f64 - 1.0) / cell).floor() as usize + 2;
    let (nt, nh, nw) = (nodes(t), nodes(h), nodes(w));
    let mut grid = vec![0.0f64; nt * nh * nw];
    for v in &mut grid {
        *v = rng.normal();
    }
    let mut pixel = vec![0.0f64; t * h * w];
    for v in &mut pixel {
        *v = rng.normal();
    }

    let data = depth.tensor().data();
    let mut out = vec![0.0f32; data.len()];
    for ft in 0..t {
        for i in 0..h {
            for j in 0..w {
                let idx = (ft * h + i) * w + j;
                // Trilinear interpolation of the coarse grid.
                let gt = ft as f64 / cell;
                let gi = i as f64 / cell;
                let gj = j as f64 / cell;
                let (t0, i0, j0) = (gt.floor() as usize, gi.floor() as usize, gj.floor() as usize);
                let (t1, i1, j1) = (
                    (t0 + 1).min(nt - 1),
                    (i0 + 1).min(nh - 1),
                    (j0 + 1).min(nw - 1),
                );
                let (wt, wi, wj) = (gt - t0 as f64, gi - i0 as f64, gj - j0 as f64);
                let at = |a: usize, b: usize, c: usize| grid[(a * nh + b) * nw + c];
                let lerp = |a: f64, b: f64, w: f64| a + (b - a) * w;
                let low = lerp(
                    lerp(
                        lerp(at(t0, i0, j0), at(t0, i0, j1), wj),
                        lerp(at(t0, i1, j0), at(t0, i1, j1), wj),
                        wi,
                    ),
                    lerp(
                        lerp(at(t1, i0, j0), at(t1, i0, j1), wj),
                        lerp(at(t1, i1, j0), at(t1, i1, j1), wj),
                        wi,
                    ),
                    wt,
                );
                // Edge weight from the in-frame gradient magnitude.
                let d = data[idx] as f64;
                let dx = if j + 1 < w { data[idx + 1] as f64 - d } else { 0.0 };
                let dy = if i + 1 < h { data[idx + w] as f64 - d } else { 0.0 };
                let edge = (dx * dx + dy * dy).sqrt().min(1.0);
                let field = 0.6 * low + 2.0 * edge * pixel[idx];
                out[idx] = ((d + strength * field).clamp(0.0, 1.0)) as f32;
            }
        }
    }
    DepthSeq::new(Tensor::from_vec(shape, out)?)
}

/// A rendered pair plus the metric depth it was derived from.
#[derive(Debug, Clone)]
pub struct GeneratedSequence {
    pub video: VideoSeq,
    pub depth_norm: DepthSeq,
    pub depth_metric: DepthSeq,
}

/// Generates one paired sequence from a seed: sample a scene, render,
/// normalize disparity, and for the realistic style corrupt the labels and
/// rescale them back onto [0, 1].
pub fn generate_sequence(
    style: CorpusStyle,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<GeneratedSequence> {
    let mut spec_rng = Rng::new(derive_seed(seed, 0));
    let spec = SceneSpec::sample(style, frames, height, width, &mut spec_rng)?;
    let (video, depth_metric) = render_scene(&spec)?;
    let clean = normalize_disparity(&depth_metric)?;
    let depth_norm = match style {
        CorpusStyle::Synthetic => clean,
        CorpusStyle::Realistic => {
            let strength = Rng::new(derive_seed(seed, 2)).uniform_range(0.03, 0.12);
            let mut noise_rng = Rng::new(derive_seed(seed, 1));
            let corrupted = corrupt_labels(&clean, &mut noise_rng, strength)?;
            renormalize01(&corrupted)?
        }
    };
    Ok(GeneratedSequence {
        video,
        depth_norm,
        depth_metric,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub style: CorpusStyle,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl ManifestEntry {
    /// Directory of this sequence relative to the corpus root.
    pub fn rel_dir(&self) -> String {
        format!("{}/{}", self.style, self.id)
    }
}

/// Builds one style's worth of corpus under `out_dir/<style>/<id>/` and
/// returns the manifest entries. Lengths are drawn per sequence from the
/// inclusive range; rendering runs sequence-parallel on derived seeds.
#[allow(clippy::too_many_arguments)]
pub fn build_corpus(
    out_dir: &Path,
    style: CorpusStyle,
    count: usize,
    len_lo: usize,
    len_hi: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    if len_lo == 0 || len_lo > len_hi {
        return Err(Error::Corpus(format!(
            "invalid length range [{len_lo}, {len_hi}]"
        )));
    }
    let style_seed = derive_seed(
        seed,
        match style {
            CorpusStyle::Realistic => 0,
            CorpusStyle::Synthetic => 1,
        },
    );
    let mut len_rng = Rng::new(derive_seed(style_seed, 0));
    let entries: Vec<ManifestEntry> = (0..count)
        .map(|i| ManifestEntry {
            id: format!("{i:04}"),
            style,
            frames: len_rng.uniform_int(len_lo, len_hi),
            height,
            width,
            seed: derive_seed(style_seed, 1 + i as u64),
        })
        .collect();
    entries.par_iter().try_for_each(|entry| -> Result<()> {
        let seq = generate_sequence(style, entry.frames, height, width, entry.seed)?;
        let dir = out_dir.join(entry.rel_dir());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_tensor(dir.join("video.dcrf"), seq.video.tensor())?;
        save_tensor(dir.join("depth.dcrf"), seq.depth_norm.tensor())?;
        Ok(())
    })?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.id, e.style, e.frames, e.height, e.width, e.seed
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Corpus(format!(
                "{}:{}: expected 6 tab-separated fields, got {}",
                path.display(),
                ln + 1,
                fields.len()
            )));
        }
        let parse_num = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                Error::Corpus(format!("{}:{}: bad {what} {s:?}", path.display(), ln + 1))
            })
        };
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            style: CorpusStyle::parse(fields[1])?,
            frames: parse_num(fields[2], "frame count")?,
            height: parse_num(fields[3], "height")?,
            width: parse_num(fields[4], "width")?,
            seed: fields[5].parse().map_err(|_| {
                Error::Corpus(format!(
                    "{}:{}: bad seed {:?}",
                    path.display(),
                    ln + 1,
                    fields[5]
                ))
            })?,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_spec(frames: usize) -> SceneSpec {
        SceneSpec {
            frames,
            height: 24,
            width: 48,
            objects: vec![ObjectSpec {
                shape: ShapeKind::Rect,
                cx: -10.0,
                cy: 0.0,
                half_w: 5.0,
                half_h: 4.0,
                depth: 2.0,
                vx: 0.0,
                vy: 0.0,
                v_depth: 0.0,
                amp_x: 0.0,
                freq_x: 0.1,
                phase_x: 0.0,
                amp_y: 0.0,
                freq_y: 0.1,
                phase_y: 0.0,
                amp_depth: 0.0,
                freq_depth: 0.1,
                phase_depth: 0.0,
                color: [0.9, 0.3, 0.1],
                tex_amp: 0.2,
                tex_freq: 0.7,
                tex_phase_x: 0.3,
                tex_phase_y: 1.1,
            }],
            camera: CameraSpec {
                pan_vx: 0.0,
                pan_vy: 0.0,
                zoom_rate: 0.0,
            },
            background: BackgroundSpec {
                base_depth: 10.0,
                slope_x: 0.0,
                slope_y: 0.0,
                tex_amp: 0.1,
                tex_freq_x: 0.2,
                tex_freq_y: 0.3,
                tex_phase_x: 0.0,
                tex_phase_y: 0.0,
            },
        }
    }

    #[test]
    fn static_scene_renders_identical_frames() {
        let (video, depth) = render_scene(&static_spec(5)).unwrap();
        let vf = video.tensor().data();
        let df = depth.tensor().data();
        let (vsz, dsz) = (24 * 48 * 3, 24 * 48);
        for t in 1..5 {
            assert_eq!(&vf[..vsz], &vf[t * vsz..(t + 1) * vsz]);
            assert_eq!(&df[..dsz], &df[t * dsz..(t + 1) * dsz]);
        }
    }

    #[test]
    fn z_buffer_holds_exact_object_and_plane_depths() {
        let (_, depth) = render_scene(&static_spec(2)).unwrap();
        let mut has_obj = false;
        let mut has_bg = false;
        for &d in depth.tensor().data() {
            match d {
                2.0 => has_obj = true,
                10.0 => has_bg = true,
                other => panic!("unexpected depth value {other}"),
            }
        }
        assert!(has_obj && has_bg);
    }

    #[test]
    fn moving_object_centroid_advances_one_pixel_per_frame() {
        let mut spec = static_spec(12);
        spec.objects[0].vx = 1.0;
        let (_, depth) = render_scene(&spec).unwrap();
        let centroid = |t: usize| -> f64 {
            let mut sum = 0.0;
            let mut n = 0.0;
            for i in 0..24 {
                for j in 0..48 {
                    if depth.tensor().data()[(t * 24 + i) * 48 + j] < 5.0 {
                        sum += j as f64;
                        n += 1.0;
                    }
                }
            }
            sum / n
        };
        for t in 0..11 {
            let step = centroid(t + 1) - centroid(t);
            assert!((step - 1.0).abs() < 1e-9, "frame {t} moved {step}");
        }
    }

    #[test]
    fn zero_area_object_is_rejected() {
        let mut spec = static_spec(2);
        spec.objects[0].half_h = 0.0;
        assert!(matches!(render_scene(&spec), Err(Error::Scene(_))));
    }

    #[test]
    fn sampled_scenes_satisfy_invariants() {
        for style in [CorpusStyle::Realistic, CorpusStyle::Synthetic] {
            for seed in 0..10 {
                let mut rng = Rng::new(seed);
                let spec = SceneSpec::sample(style, 64, 20, 28, &mut rng).unwrap();
                let (_, depth) = render_scene(&spec).unwrap();
                let (lo, _) = depth.tensor().min_max();
                assert!(lo > 0.0, "nonpositive depth for seed {seed}");
            }
        }
    }

    #[test]
    fn normalize_matches_hand_computed_values() {
        let depth =
            DepthSeq::new(Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 4.0]).unwrap()).unwrap();
        let norm = normalize_disparity(&depth).unwrap();
        let got = norm.tensor().data();
        assert_eq!(got[0], 1.0);
        assert!((got[1] - 1.0 / 3.0).abs() < 1e-7);
        assert_eq!(got[2], 0.0);
    }

    #[test]
    fn normalize_is_invariant_to_depth_scale() {
        let base: Vec<f32> = (0..60).map(|i| 1.0 + 0.37 * (i % 7) as f32).collect();
        let scaled: Vec<f32> = base.iter().map(|&d| d * 3.5).collect();
        let a = normalize_disparity(
            &DepthSeq::new(Tensor::from_vec(&[3, 4, 5], base).unwrap()).unwrap(),
        )
        .unwrap();
        let b = normalize_disparity(
            &DepthSeq::new(Tensor::from_vec(&[3, 4, 5], scaled).unwrap()).unwrap(),
        )
        .unwrap();
        for (x, y) in a.tensor().data().iter().zip(b.tensor().data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn normalization_is_sequence_wide_not_per_frame() {
        // Frame 0 holds both extremes; frame 1 is strictly interior.
        let depth = DepthSeq::new(
            Tensor::from_vec(&[2, 1, 2], vec![1.0, 4.0, 1.6, 2.5]).unwrap(),
        )
        .unwrap();
        let norm = normalize_disparity(&depth).unwrap();
        let d = norm.tensor().data();
        assert_eq!(d[0], 1.0);
        assert_eq!(d[1], 0.0);
        assert!(d[2] > 0.0 && d[2] < 1.0);
        assert!(d[3] > 0.0 && d[3] < 1.0);
    }

    #[test]
    fn constant_depth_is_degenerate() {
        let depth =
            DepthSeq::new(Tensor::from_vec(&[1, 2, 2], vec![3.0; 4]).unwrap()).unwrap();
        assert!(matches!(
            normalize_disparity(&depth),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn corruption_at_zero_strength_is_identity() {
        let spec = static_spec(3);
        let (_, depth) = render_scene(&spec).unwrap();
        let norm = normalize_disparity(&depth).unwrap();
        let mut rng = Rng::new(9);
        let out = corrupt_labels(&norm, &mut rng, 0.0).unwrap();
        assert_eq!(norm.tensor().data(), out.tensor().data());
    }

    #[test]
    fn corruption_grows_with_strength_and_stays_in_range() {
        let mut spec = static_spec(6);
        spec.objects[0].vx = 0.5;
        let (_, depth) = render_scene(&spec).unwrap();
        let norm = normalize_disparity(&depth).unwrap();
        let mut means = Vec::new();
        for strength in [0.02, 0.05, 0.1, 0.2, 0.4] {
            let mut rng = Rng::new(77);
            let out = corrupt_labels(&norm, &mut rng, strength).unwrap();
            let (lo, hi) = out.tensor().min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
            let mad: f64 = norm
                .tensor()
                .data()
                .iter()
                .zip(out.tensor().data())
                .map(|(a, b)| (a - b).abs() as f64)
                .sum::<f64>()
                / norm.tensor().numel() as f64;
            means.push(mad);
        }
        for pair in means.windows(2) {
            assert!(pair[1] + 1e-12 >= pair[0], "corruption not monotone: {means:?}");
        }
        assert!(means[4] > means[0]);
    }

    #[test]
    fn emitted_labels_span_exactly_zero_to_one() {
        for style in [CorpusStyle::Realistic, CorpusStyle::Synthetic] {
            let seq = generate_sequence(style, 6, 16, 16, 41).unwrap();
            let (lo, hi) = seq.depth_norm.tensor().min_max();
            assert_eq!(lo, 0.0, "{style} min");
            assert_eq!(hi, 1.0, "{style} max");
        }
    }

    #[test]
    fn depth_and_color_masks_agree() {
        for seed in [3u64, 11, 29] {
            let mut rng = Rng::new(seed);
            let spec = SceneSpec::sample(CorpusStyle::Synthetic, 4, 32, 32, &mut rng).unwrap();
            let mut bg_only = spec.clone();
            bg_only.objects.clear();
            let (video, depth) = render_scene(&spec).unwrap();
            let (bg_video, bg_depth) = render_scene(&bg_only).unwrap();
            let n = depth.tensor().numel();
            let mut inter = 0usize;
            let mut union = 0usize;
            for idx in 0..n {
                let d_mask = (depth.tensor().data()[idx] - bg_depth.tensor().data()[idx]).abs()
                    > 1e-3;
                let c_mask = (0..3).any(|c| {
                    (video.tensor().data()[idx * 3 + c] - bg_video.tensor().data()[idx * 3 + c])
                        .abs()
                        > 0.05
                });
                if d_mask && c_mask {
                    inter += 1;
                }
                if d_mask || c_mask {
                    union += 1;
                }
            }
            assert!(union > 0, "seed {seed} rendered no object pixels");
            let iou = inter as f64 / union as f64;
            assert!(iou > 0.99, "seed {seed}: IoU {iou}");
        }
    }

    #[test]
    fn corpus_build_is_reproducible_and_listed() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let build = |root: &Path| {
            let mut entries =
                build_corpus(root, CorpusStyle::Realistic, 3, 4, 7, 16, 16, 5150).unwrap();
            entries
                .extend(build_corpus(root, CorpusStyle::Synthetic, 2, 5, 5, 16, 16, 5150).unwrap());
            write_manifest(&root.join("manifest.tsv"), &entries).unwrap();
            entries
        };
        let ea = build(dir_a.path());
        let eb = build(dir_b.path());
        assert_eq!(ea, eb);
        assert_eq!(ea.len(), 5);
        for e in &ea {
            if e.style == CorpusStyle::Synthetic {
                assert_eq!(e.frames, 5);
            } else {
                assert!((4..=7).contains(&e.frames));
            }
            for file in ["video.dcrf", "depth.dcrf"] {
                let pa = dir_a.path().join(e.rel_dir()).join(file);
                let pb = dir_b.path().join(e.rel_dir()).join(file);
                let ba = std::fs::read(&pa).unwrap();
                let bb = std::fs::read(&pb).unwrap();
                assert_eq!(ba, bb, "{} differs between runs", pa.display());
            }
        }
        let listed = read_manifest(&dir_a.path().join("manifest.tsv")).unwrap();
        assert_eq!(listed, ea);
    }

    #[test]
    fn manifest_rejects_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        std::fs::write(&path, "0000\trealistic\t8\t16\n").unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Corpus(_)), "{err}");
    }
}
