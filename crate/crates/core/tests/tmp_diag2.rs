// Temporary diagnostic scaffold; not part of the suite.

use viddepth_core::codec::{self, CodecConfig};
use viddepth_core::eval::{evaluate_sequence, EvalConfig};
use viddepth_core::io::load_tensor;
use viddepth_core::synth::{normalize_disparity, renormalize01};
use viddepth_core::video::DepthSeq;

#[test]
#[ignore]
fn survey() {
    let base = std::path::Path::new("/tmp/smoke/data/eval");
    let codec_cfg = CodecConfig::default();
    let ecfg = EvalConfig::default();
    for id in ["0000", "0001", "0002", "0003", "0004", "0005"] {
        let metric =
            DepthSeq::new(load_tensor(base.join(id).join("depth_metric.dcrf")).unwrap()).unwrap();
        let (lo, hi) = metric.tensor().min_max();
        let depth_norm = normalize_disparity(&metric).unwrap();
        let lat = codec::encode_depth(&depth_norm, &codec_cfg).unwrap();
        let dec = DepthSeq::new(codec::decode_depth(&lat, &codec_cfg).unwrap()).unwrap();
        let dec = renormalize01(&dec).unwrap();
        let floor = evaluate_sequence(&dec, &metric, &ecfg).unwrap();
        // Disparity spread: ratio of 95th to 5th percentile of 1/depth.
        let mut disp: Vec<f64> = metric.tensor().data().iter().map(|&d| 1.0 / d as f64).collect();
        disp.sort_by(f64::total_cmp);
        let p = |q: f64| disp[((disp.len() - 1) as f64 * q) as usize];
        println!(
            "{id}: depth [{lo:8.3}, {hi:8.3}]  disp p5/p95 {:8.4}/{:8.4} (ratio {:6.1})  floor absrel {:.4} delta1 {:.4} excl {}",
            p(0.05),
            p(0.95),
            p(0.95) / p(0.05),
            floor.absrel,
            floor.delta1,
            floor.excluded
        );
    }
}
