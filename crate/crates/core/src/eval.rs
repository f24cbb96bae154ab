//! Affine-invariant depth evaluation.
//!
//! Predictions are normalized disparities; ground truth is metric depth.
//! A single scale and shift per video is fit by least squares in the
//! disparity domain over all valid pixels, the aligned prediction is
//! converted back to depth, and AbsRel and delta1 are computed under a
//! depth cap, border crops, and a minimum-valid-depth rule. Nonpositive
//! aligned disparities count as delta1 failures and are excluded from
//! AbsRel with the exclusion reported.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::video::{crop_frames, DepthSeq};

/// Per-pixel validity aligned with a `[T, H, W]` depth tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidMask {
    shape: Vec<usize>,
    data: Vec<bool>,
}

impl ValidMask {
    pub fn new(shape: &[usize], data: Vec<bool>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.len() != 3 || numel != data.len() {
            return Err(Error::Shape(format!(
                "mask data of {} entries does not fit shape {shape:?}",
                data.len()
            )));
        }
        Ok(ValidMask {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn all_valid(shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        ValidMask::new(shape, vec![true; numel])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    fn check_fits(&self, t: &Tensor<f32>) -> Result<()> {
        if t.shape() != self.shape.as_slice() {
            return Err(Error::Shape(format!(
                "mask shape {:?} does not match tensor {:?}",
                self.shape,
                t.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub scale: f64,
    pub shift: f64,
    /// Mean squared error after alignment over the valid set.
    pub residual: f64,
}

/// Least-squares scale and shift mapping `pred` onto `target` over valid
/// pixels pooled across all frames, solved in closed form with 64-bit
/// accumulation.
pub fn align_scale_shift(
    pred: &DepthSeq,
    target: &DepthSeq,
    mask: &ValidMask,
) -> Result<AlignmentResult> {
    mask.check_fits(pred.tensor())?;
    mask.check_fits(target.tensor())?;
    let p = pred.tensor().data();
    let g = target.tensor().data();
    let mut n = 0.0f64;
    let (mut sp, mut sg, mut spp, mut spg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..p.len() {
        if mask.data[i] {
            let (pv, gv) = (p[i] as f64, g[i] as f64);
            n += 1.0;
            sp += pv;
            sg += gv;
            spp += pv * pv;
            spg += pv * gv;
        }
    }
    if n < 2.0 {
        return Err(Error::Data(format!(
            "alignment needs at least 2 valid pixels, got {n}"
        )));
    }
    let mean_p = sp / n;
    let mean_g = sg / n;
    let var_p = spp / n - mean_p * mean_p;
    if var_p <= 1e-14 * (1.0 + mean_p * mean_p) {
        return Err(Error::Degenerate(
            "prediction is constant over the valid set; scale is unidentifiable".into(),
        ));
    }
    let cov = spg / n - mean_p * mean_g;
    let scale = cov / var_p;
    let shift = mean_g - scale * mean_p;
    let mut residual = 0.0f64;
    for i in 0..p.len() {
        if mask.data[i] {
            let r = scale * p[i] as f64 + shift - g[i] as f64;
            residual += r * r;
        }
    }
    Ok(AlignmentResult {
        scale,
        shift,
        residual: residual / n,
    })
}

/// Mean absolute relative error over valid pixels; ground truth must be
/// positive wherever the mask is set.
pub fn absrel(pred: &DepthSeq, gt: &DepthSeq, mask: &ValidMask) -> Result<f64> {
    mask.check_fits(pred.tensor())?;
    mask.check_fits(gt.tensor())?;
    let p = pred.tensor().data();
    let g = gt.tensor().data();
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for i in 0..p.len() {
        if mask.data[i] {
            let gv = g[i] as f64;
            if gv <= 0.0 {
                return Err(Error::Data(format!(
                    "absrel needs positive ground truth, found {gv}"
                )));
            }
            sum += ((p[i] as f64) - gv).abs() / gv;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("absrel over an empty valid set".into()));
    }
    Ok(sum / n as f64)
}

/// Fraction of valid pixels with `max(pred/gt, gt/pred) < 1.25`, strict.
/// Nonpositive predictions have no defined ratio and count as failures.
pub fn delta1(pred: &DepthSeq, gt: &DepthSeq, mask: &ValidMask) -> Result<f64> {
    mask.check_fits(pred.tensor())?;
    mask.check_fits(gt.tensor())?;
    let p = pred.tensor().data();
    let g = gt.tensor().data();
    let mut hits = 0usize;
    let mut n = 0usize;
    for i in 0..p.len() {
        if mask.data[i] {
            let gv = g[i] as f64;
            if gv <= 0.0 {
                return Err(Error::Data(format!(
                    "delta1 needs positive ground truth, found {gv}"
                )));
            }
            n += 1;
            let pv = p[i] as f64;
            if pv > 0.0 && (pv / gv).max(gv / pv) < 1.25 {
                hits += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Data("delta1 over an empty valid set".into()));
    }
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub depth_cap: f64,
    pub crop_top: usize,
    pub crop_bottom: usize,
    pub crop_left: usize,
    pub crop_right: usize,
    pub valid_min: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            depth_cap: f64::INFINITY,
            crop_top: 0,
            crop_bottom: 0,
            crop_left: 0,
            crop_right: 0,
            valid_min: 1e-3,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth_cap.is_nan() || self.depth_cap <= 0.0 {
            return Err(Error::Config(format!(
                "depth cap must be positive, got {}",
                self.depth_cap
            )));
        }
        if !self.valid_min.is_finite() || self.valid_min <= 0.0 {
            return Err(Error::Config(format!(
                "valid_min must be positive and finite, got {}",
                self.valid_min
            )));
        }
        if self.valid_min > self.depth_cap {
            return Err(Error::Config(format!(
                "valid_min {} exceeds depth cap {}",
                self.valid_min, self.depth_cap
            )));
        }
        Ok(())
    }

    fn check_crop(&self, h: usize, w: usize) -> Result<()> {
        if self.crop_top + self.crop_bottom >= h || self.crop_left + self.crop_right >= w {
            return Err(Error::Config(format!(
                "crop ({}, {}, {}, {}) leaves no pixels of {h}x{w} frames",
                self.crop_top, self.crop_bottom, self.crop_left, self.crop_right
            )));
        }
        Ok(())
    }

    fn crop(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_crop(t.shape()[1], t.shape()[2])?;
        crop_frames(t, self.crop_top, self.crop_bottom, self.crop_left, self.crop_right)
    }
}

/// Crops metric ground truth and derives its validity mask: valid means
/// `valid_min <= gt <= depth_cap`.
pub fn apply_eval_config(gt_metric: &DepthSeq, cfg: &EvalConfig) -> Result<(DepthSeq, ValidMask)> {
    cfg.validate()?;
    let cropped = cfg.crop(gt_metric.tensor())?;
    let mask_data: Vec<bool> = cropped
        .data()
        .iter()
        .map(|&d| (d as f64) >= cfg.valid_min && (d as f64) <= cfg.depth_cap)
        .collect();
    let mask = ValidMask::new(cropped.shape(), mask_data)?;
    Ok((DepthSeq::new(cropped)?, mask))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceScores {
    pub absrel: f64,
    pub delta1: f64,
    pub scale: f64,
    pub shift: f64,
    /// Valid pixels whose aligned disparity was nonpositive; they count as
    /// delta1 failures and are left out of AbsRel.
    pub excluded: usize,
    pub valid: usize,
}

/// Full protocol for one sequence: crop, mask, align the predicted
/// disparity to the ground-truth disparity, convert to depth, score.
pub fn evaluate_sequence(
    pred: &DepthSeq,
    gt_metric: &DepthSeq,
    cfg: &EvalConfig,
) -> Result<SequenceScores> {
    cfg.validate()?;
    let (gt, mask) = apply_eval_config(gt_metric, cfg)?;
    let pred_c = DepthSeq::new(cfg.crop(pred.tensor())?)?;
    if pred_c.tensor().shape() != gt.tensor().shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} does not match ground truth {:?} after cropping",
            pred_c.tensor().shape(),
            gt.tensor().shape()
        )));
    }
    // Ground truth in the disparity domain; invalid pixels are never read.
    let gt_disp: Vec<f32> = gt
        .tensor()
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&d, &v)| if v { (1.0 / d as f64) as f32 } else { 0.0 })
        .collect();
    let gt_disp = DepthSeq::new(Tensor::from_vec(gt.tensor().shape(), gt_disp)?)?;
    let align = align_scale_shift(&pred_c, &gt_disp, &mask)?;

    let p = pred_c.tensor().data();
    let g = gt.tensor().data();
    let mut abs_sum = 0.0f64;
    let mut abs_n = 0usize;
    let mut hits = 0usize;
    let mut excluded = 0usize;
    let valid = mask.count_valid();
    for i in 0..p.len() {
        if !mask.data()[i] {
            continue;
        }
        let disp = align.scale * p[i] as f64 + align.shift;
        let gv = g[i] as f64;
        if disp <= 0.0 {
            excluded += 1;
            continue;
        }
        let depth = 1.0 / disp;
        abs_sum += (depth - gv).abs() / gv;
        abs_n += 1;
        if (depth / gv).max(gv / depth) < 1.25 {
            hits += 1;
        }
    }
    if valid == 0 {
        return Err(Error::Data("no valid pixels to evaluate".into()));
    }
    if abs_n == 0 {
        return Err(Error::Data(
            "every valid pixel was excluded by nonpositive aligned disparity".into(),
        ));
    }
    Ok(SequenceScores {
        absrel: abs_sum / abs_n as f64,
        delta1: hits as f64 / valid as f64,
        scale: align.scale,
        shift: align.shift,
        excluded,
        valid,
    })
}

/// Time slice of the depth sequence at image row `y`: `P[t, x] = depth[t, y, x]`.
pub fn temporal_profile(depth: &DepthSeq, y: usize) -> Result<Tensor<f32>> {
    let (t, h, w) = (depth.frames(), depth.height(), depth.width());
    if y >= h {
        return Err(Error::Domain(format!("profile row {y} out of 0..{h}")));
    }
    let d = depth.tensor().data();
    let mut data = Vec::with_capacity(t * w);
    for f in 0..t {
        data.extend_from_slice(&d[(f * h + y) * w..(f * h + y) * w + w]);
    }
    Tensor::from_vec(&[t, w], data)
}

/// Writes a `[T, W]` profile as a binary 8-bit PGM, mapping [0,1] linearly
/// onto [0,255].
pub fn write_pgm(path: &Path, profile: &Tensor<f32>) -> Result<()> {
    if profile.rank() != 2 {
        return Err(Error::Shape(format!(
            "profile image must be rank 2, got {:?}",
            profile.shape()
        )));
    }
    let (rows, cols) = (profile.shape()[0], profile.shape()[1]);
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.extend(
        profile
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8),
    );
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the per-sequence report plus a trailing `mean` summary row
/// (mean scores, mean alignment, summed exclusions).
pub fn write_report(path: &Path, rows: &[(String, SequenceScores)]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Data("cannot report zero sequences".into()));
    }
    let mut text = String::from("id\tabsrel\tdelta1\tscale\tshift\texcluded\n");
    let mut write_row = |id: &str, s: &SequenceScores| {
        let _ = writeln!(
            text,
            "{id}\t{}\t{}\t{}\t{}\t{}",
            s.absrel, s.delta1, s.scale, s.shift, s.excluded
        );
    };
    for (id, scores) in rows {
        write_row(id, scores);
    }
    let n = rows.len() as f64;
    let mean = SequenceScores {
        absrel: rows.iter().map(|(_, s)| s.absrel).sum::<f64>() / n,
        delta1: rows.iter().map(|(_, s)| s.delta1).sum::<f64>() / n,
        scale: rows.iter().map(|(_, s)| s.scale).sum::<f64>() / n,
        shift: rows.iter().map(|(_, s)| s.shift).sum::<f64>() / n,
        excluded: rows.iter().map(|(_, s)| s.excluded).sum(),
        valid: rows.iter().map(|(_, s)| s.valid).sum(),
    };
    write_row("mean", &mean);
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<(String, SequenceScores)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Data(format!("{}:{}: bad report row", path.display(), ln + 1));
        if f.len() != 6 {
            return Err(bad());
        }
        rows.push((
            f[0].to_string(),
            SequenceScores {
                absrel: f[1].parse().map_err(|_| bad())?,
                delta1: f[2].parse().map_err(|_| bad())?,
                scale: f[3].parse().map_err(|_| bad())?,
                shift: f[4].parse().map_err(|_| bad())?,
                excluded: f[5].parse().map_err(|_| bad())?,
                valid: 0,
            },
        ));
    }
    Ok(rows)
}
