// Temporary diagnostic scaffold; not part of the suite.
// Ridge regression probe: how much of the depth latent is linearly
// predictable from the video latent, per block position?

use viddepth_core::codec::{self, CodecConfig};
use viddepth_core::eval::{evaluate_sequence, EvalConfig};
use viddepth_core::io::load_tensor;
use viddepth_core::synth::{normalize_disparity, renormalize01};
use viddepth_core::video::{DepthSeq, VideoSeq};
use viddepth_core::Tensor;

fn seq_latents(dir: &std::path::Path, cfg: &CodecConfig) -> (Tensor<f32>, Tensor<f32>) {
    let video = VideoSeq::new(load_tensor(dir.join("video.dcrf")).unwrap()).unwrap();
    let gt = dir.join("depth_metric.dcrf");
    let dn = if gt.exists() {
        let metric = DepthSeq::new(load_tensor(gt).unwrap()).unwrap();
        normalize_disparity(&metric).unwrap()
    } else {
        DepthSeq::new(load_tensor(dir.join("depth.dcrf")).unwrap()).unwrap()
    };
    (
        codec::encode_video(&video, cfg).unwrap(),
        codec::encode_depth(&dn, cfg).unwrap(),
    )
}

#[test]
#[ignore]
fn probe() {
    let base = std::path::Path::new("/tmp/smoke");
    let data = std::env::var("DATA").unwrap_or_else(|_| "data6".into());
    let root = base.join(&data);
    let cfg = CodecConfig::default();

    // Gather training blocks from the first N realistic sequences.
    let mut train_dirs: Vec<_> = std::fs::read_dir(root.join("realistic"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    train_dirs.sort();
    train_dirs.truncate(40);

    let (vx, vy) = seq_latents(&train_dirs[0], &cfg);
    let fx = vx.shape()[3];
    let fy = vy.shape()[3];
    let d = fx + 1; // bias column

    // Normal equations: a = X^T X (d x d), b = X^T Y (d x fy).
    let mut a = vec![0f64; d * d];
    let mut b = vec![0f64; d * fy];
    let mut rows = 0usize;
    let mut accum = |x: &Tensor<f32>, y: &Tensor<f32>| {
        let xd = x.data();
        let yd = y.data();
        let n = xd.len() / fx;
        for r in 0..n {
            let xr = &xd[r * fx..(r + 1) * fx];
            let yr = &yd[r * fy..(r + 1) * fy];
            for i in 0..fx {
                let xi = xr[i] as f64;
                for j in 0..fx {
                    a[i * d + j] += xi * xr[j] as f64;
                }
                a[i * d + fx] += xi;
                for j in 0..fy {
                    b[i * fy + j] += xi * yr[j] as f64;
                }
            }
            a[fx * d + fx] += 1.0;
            for j in 0..fx {
                a[fx * d + j] += xr[j] as f64;
            }
            for j in 0..fy {
                b[fx * fy + j] += yr[j] as f64;
            }
        }
        rows += n;
    };
    accum(&vx, &vy);
    for dir in &train_dirs[1..] {
        let (x, y) = seq_latents(dir, &cfg);
        accum(&x, &y);
    }
    println!("probe fit on {rows} blocks, {fx}+1 features -> {fy} targets");

    // Ridge: a += lambda I (skip bias), then solve via Gaussian elimination.
    let lambda = 1e-3 * rows as f64;
    for i in 0..fx {
        a[i * d + i] += lambda;
    }
    // Solve a W = b for W (d x fy).
    let mut w = b.clone();
    for col in 0..d {
        // partial pivot
        let mut piv = col;
        for r in col + 1..d {
            if a[r * d + col].abs() > a[piv * d + col].abs() {
                piv = r;
            }
        }
        if piv != col {
            for j in 0..d {
                a.swap(col * d + j, piv * d + j);
            }
            for j in 0..fy {
                w.swap(col * fy + j, piv * fy + j);
            }
        }
        let pv = a[col * d + col];
        for r in 0..d {
            if r == col {
                continue;
            }
            let f = a[r * d + col] / pv;
            if f == 0.0 {
                continue;
            }
            for j in col..d {
                a[r * d + j] -= f * a[col * d + j];
            }
            for j in 0..fy {
                w[r * fy + j] -= f * w[col * fy + j];
            }
        }
    }
    for r in 0..d {
        let pv = a[r * d + r];
        for j in 0..fy {
            w[r * fy + j] /= pv;
        }
    }

    // Evaluate on the eval suite: latent rel err and decoded AbsRel.
    let ecfg = EvalConfig::default();
    let mut eval_dirs: Vec<_> = std::fs::read_dir(root.join("eval"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    eval_dirs.sort();
    for dir in &eval_dirs {
        let (x, y) = seq_latents(dir, &cfg);
        let xd = x.data();
        let yd = y.data();
        let n = xd.len() / fx;
        let mut pred = vec![0f32; n * fy];
        for r in 0..n {
            let xr = &xd[r * fx..(r + 1) * fx];
            for j in 0..fy {
                let mut acc = w[fx * fy + j]; // bias
                for i in 0..fx {
                    acc += xr[i] as f64 * w[i * fy + j];
                }
                pred[r * fy + j] = acc as f32;
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, t) in pred.iter().zip(yd) {
            num += ((p - t) as f64).powi(2);
            den += (*t as f64).powi(2);
        }
        let lat_tensor = Tensor::from_vec(y.shape(), pred).unwrap();
        let dec = DepthSeq::new(codec::decode_depth(&lat_tensor, &cfg).unwrap()).unwrap();
        let dec = renormalize01(&dec).unwrap();
        let metric = DepthSeq::new(
            load_tensor(dir.join("depth_metric.dcrf")).unwrap(),
        )
        .unwrap();
        let scores = evaluate_sequence(&dec, &metric, &ecfg).unwrap();
        println!(
            "{}: latent rel err {:.4}  absrel {:.4} delta1 {:.4}",
            dir.file_name().unwrap().to_string_lossy(),
            (num / den).sqrt(),
            scores.absrel,
            scores.delta1
        );
    }
}
