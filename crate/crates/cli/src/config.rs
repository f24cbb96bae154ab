//! Sectioned key-value configuration.
//!
//! Grammar: `[section]` headers, `key = value` lines, `#` starts a comment,
//! blank lines ignored. Every key has a default, so an empty or absent file
//! is a complete configuration. Unknown sections and keys are rejected by
//! name. The merged configuration can be rendered back out; commands echo
//! it next to their outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use viddepth_core::codec::CodecConfig;
use viddepth_core::edm::ScheduleConfig;
use viddepth_core::error::{Error, Result};
use viddepth_core::eval::EvalConfig;
use viddepth_core::infer::InferConfig;
use viddepth_core::net::{GroupTag, NetConfig};
use viddepth_core::synth::CorpusStyle;
use viddepth_core::train::{LengthLaw, StageConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EdmSection {
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub guidance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarLenStage {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub len_lo: usize,
    pub len_hi: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedLenStage {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferSection {
    pub window: usize,
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub realistic_count: usize,
    pub synthetic_count: usize,
    pub eval_count: usize,
    pub len_lo: usize,
    pub len_hi: usize,
    pub eval_len: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub edm: EdmSection,
    pub codec: CodecConfig,
    pub net: NetConfig,
    pub stage1: VarLenStage,
    pub stage2: VarLenStage,
    pub stage3: FixedLenStage,
    pub infer: InferSection,
    pub eval: EvalConfig,
    pub data: DataSection,
    pub paths: PathsSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            edm: EdmSection {
                steps: 5,
                sigma_min: 0.002,
                sigma_max: 700.0,
                rho: 7.0,
                guidance: 1.0,
            },
            codec: CodecConfig::default(),
            net: NetConfig::default(),
            stage1: VarLenStage {
                iterations: 300,
                batch_size: 4,
                lr: 3e-3,
                len_lo: 1,
                len_hi: 8,
            },
            stage2: VarLenStage {
                iterations: 150,
                batch_size: 4,
                lr: 3e-3,
                len_lo: 1,
                len_hi: 32,
            },
            stage3: FixedLenStage {
                iterations: 60,
                batch_size: 4,
                lr: 3e-3,
                len: 12,
            },
            infer: InferSection {
                window: 16,
                overlap: 4,
            },
            eval: EvalConfig::default(),
            data: DataSection {
                realistic_count: 48,
                synthetic_count: 12,
                eval_count: 6,
                len_lo: 16,
                len_hi: 40,
                eval_len: 48,
                height: 32,
                width: 32,
            },
            paths: PathsSection {
                data_dir: PathBuf::from("data"),
                run_dir: PathBuf::from("run"),
            },
        }
    }
}

const SECTIONS: &[&str] = &[
    "edm", "codec", "net", "stage1", "stage2", "stage3", "infer", "eval", "data", "paths",
];

fn parse_value<T: std::str::FromStr>(
    origin: &str,
    line: usize,
    section: &str,
    key: &str,
    value: &str,
) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "{origin}:{line}: invalid value {value:?} for {section}.{key}"
        ))
    })
}

impl CliConfig {
    /// Defaults, overridden by the file when one is given.
    pub fn load(path: Option<&Path>) -> Result<CliConfig> {
        let mut cfg = CliConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config(format!(
                        "{origin}:{line_no}: unknown section [{name}]"
                    )));
                }
                section = Some(name.to_string());
            } else if let Some((key, value)) = line.split_once('=') {
                let (key, value) = (key.trim(), value.trim());
                let section = section.as_deref().ok_or_else(|| {
                    Error::Config(format!(
                        "{origin}:{line_no}: key {key:?} appears before any [section]"
                    ))
                })?;
                self.set(origin, line_no, section, key, value)?;
            } else {
                return Err(Error::Config(format!(
                    "{origin}:{line_no}: expected `key = value`, got {line:?}"
                )));
            }
        }
        Ok(())
    }

    fn set(&mut self, origin: &str, line: usize, section: &str, key: &str, value: &str) -> Result<()> {
        macro_rules! field {
            ($slot:expr) => {
                $slot = parse_value(origin, line, section, key, value)?
            };
        }
        match (section, key) {
            ("edm", "steps") => field!(self.edm.steps),
            ("edm", "sigma_min") => field!(self.edm.sigma_min),
            ("edm", "sigma_max") => field!(self.edm.sigma_max),
            ("edm", "rho") => field!(self.edm.rho),
            ("edm", "guidance") => field!(self.edm.guidance),

            ("codec", "block") => field!(self.codec.block),
            ("codec", "keep") => field!(self.codec.keep),

            ("net", "channels") => field!(self.net.channels),
            ("net", "spatial_blocks") => field!(self.net.spatial_blocks),
            ("net", "temporal_blocks") => field!(self.net.temporal_blocks),
            ("net", "embed_dim") => field!(self.net.embed_dim),

            ("stage1", "iterations") => field!(self.stage1.iterations),
            ("stage1", "batch_size") => field!(self.stage1.batch_size),
            ("stage1", "lr") => field!(self.stage1.lr),
            ("stage1", "len_lo") => field!(self.stage1.len_lo),
            ("stage1", "len_hi") => field!(self.stage1.len_hi),

            ("stage2", "iterations") => field!(self.stage2.iterations),
            ("stage2", "batch_size") => field!(self.stage2.batch_size),
            ("stage2", "lr") => field!(self.stage2.lr),
            ("stage2", "len_lo") => field!(self.stage2.len_lo),
            ("stage2", "len_hi") => field!(self.stage2.len_hi),

            ("stage3", "iterations") => field!(self.stage3.iterations),
            ("stage3", "batch_size") => field!(self.stage3.batch_size),
            ("stage3", "lr") => field!(self.stage3.lr),
            ("stage3", "len") => field!(self.stage3.len),

            ("infer", "window") => field!(self.infer.window),
            ("infer", "overlap") => field!(self.infer.overlap),

            ("eval", "depth_cap") => field!(self.eval.depth_cap),
            ("eval", "crop_top") => field!(self.eval.crop_top),
            ("eval", "crop_bottom") => field!(self.eval.crop_bottom),
            ("eval", "crop_left") => field!(self.eval.crop_left),
            ("eval", "crop_right") => field!(self.eval.crop_right),
            ("eval", "valid_min") => field!(self.eval.valid_min),

            ("data", "realistic_count") => field!(self.data.realistic_count),
            ("data", "synthetic_count") => field!(self.data.synthetic_count),
            ("data", "eval_count") => field!(self.data.eval_count),
            ("data", "len_lo") => field!(self.data.len_lo),
            ("data", "len_hi") => field!(self.data.len_hi),
            ("data", "eval_len") => field!(self.data.eval_len),
            ("data", "height") => field!(self.data.height),
            ("data", "width") => field!(self.data.width),

            ("paths", "data_dir") => self.paths.data_dir = PathBuf::from(value),
            ("paths", "run_dir") => self.paths.run_dir = PathBuf::from(value),

            _ => {
                return Err(Error::Config(format!(
                    "{origin}:{line}: unknown key {key:?} in section [{section}]"
                )));
            }
        }
        Ok(())
    }

    /// Canonical text form; `apply_text` of the output reproduces `self`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[edm]");
        let _ = writeln!(s, "steps = {}", self.edm.steps);
        let _ = writeln!(s, "sigma_min = {}", self.edm.sigma_min);
        let _ = writeln!(s, "sigma_max = {}", self.edm.sigma_max);
        let _ = writeln!(s, "rho = {}", self.edm.rho);
        let _ = writeln!(s, "guidance = {}", self.edm.guidance);
        let _ = writeln!(s, "\n[codec]");
        let _ = writeln!(s, "block = {}", self.codec.block);
        let _ = writeln!(s, "keep = {}", self.codec.keep);
        let _ = writeln!(s, "\n[net]");
        let _ = writeln!(s, "channels = {}", self.net.channels);
        let _ = writeln!(s, "spatial_blocks = {}", self.net.spatial_blocks);
        let _ = writeln!(s, "temporal_blocks = {}", self.net.temporal_blocks);
        let _ = writeln!(s, "embed_dim = {}", self.net.embed_dim);
        for (name, st) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            let _ = writeln!(s, "\n[{name}]");
            let _ = writeln!(s, "iterations = {}", st.iterations);
            let _ = writeln!(s, "batch_size = {}", st.batch_size);
            let _ = writeln!(s, "lr = {}", st.lr);
            let _ = writeln!(s, "len_lo = {}", st.len_lo);
            let _ = writeln!(s, "len_hi = {}", st.len_hi);
        }
        let _ = writeln!(s, "\n[stage3]");
        let _ = writeln!(s, "iterations = {}", self.stage3.iterations);
        let _ = writeln!(s, "batch_size = {}", self.stage3.batch_size);
        let _ = writeln!(s, "lr = {}", self.stage3.lr);
        let _ = writeln!(s, "len = {}", self.stage3.len);
        let _ = writeln!(s, "\n[infer]");
        let _ = writeln!(s, "window = {}", self.infer.window);
        let _ = writeln!(s, "overlap = {}", self.infer.overlap);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "depth_cap = {}", self.eval.depth_cap);
        let _ = writeln!(s, "crop_top = {}", self.eval.crop_top);
        let _ = writeln!(s, "crop_bottom = {}", self.eval.crop_bottom);
        let _ = writeln!(s, "crop_left = {}", self.eval.crop_left);
        let _ = writeln!(s, "crop_right = {}", self.eval.crop_right);
        let _ = writeln!(s, "valid_min = {}", self.eval.valid_min);
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "realistic_count = {}", self.data.realistic_count);
        let _ = writeln!(s, "synthetic_count = {}", self.data.synthetic_count);
        let _ = writeln!(s, "eval_count = {}", self.data.eval_count);
        let _ = writeln!(s, "len_lo = {}", self.data.len_lo);
        let _ = writeln!(s, "len_hi = {}", self.data.len_hi);
        let _ = writeln!(s, "eval_len = {}", self.data.eval_len);
        let _ = writeln!(s, "height = {}", self.data.height);
        let _ = writeln!(s, "width = {}", self.data.width);
        let _ = writeln!(s, "\n[paths]");
        let _ = writeln!(s, "data_dir = {}", self.paths.data_dir.display());
        let _ = writeln!(s, "run_dir = {}", self.paths.run_dir.display());
        s
    }

    /// Writes the merged configuration (plus the seed, as a comment) into
    /// an output directory so every artifact records how it was produced.
    pub fn write_effective(&self, dir: &Path, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("effective.ini");
        let text = format!(
            "# effective configuration: defaults merged with file and flags\n# seed = {seed}\n\n{}",
            self.render()
        );
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.edm.steps,
            sigma_min: self.edm.sigma_min,
            sigma_max: self.edm.sigma_max,
            rho: self.edm.rho,
        }
    }

    pub fn infer_config(&self) -> InferConfig {
        InferConfig {
            window: self.infer.window,
            overlap: self.infer.overlap,
            schedule: self.schedule(),
            codec: self.codec,
            guidance: self.edm.guidance,
        }
    }

    /// The three stages with their fixed corpus/freeze pattern and the
    /// configured sizes.
    pub fn stages(&self) -> [StageConfig; 3] {
        [
            StageConfig {
                stage_id: 1,
                corpus_style: CorpusStyle::Realistic,
                length_law: LengthLaw::Uniform {
                    lo: self.stage1.len_lo,
                    hi: self.stage1.len_hi,
                },
                trainable: vec![GroupTag::Spatial, GroupTag::Temporal],
                iterations: self.stage1.iterations,
                batch_size: self.stage1.batch_size,
                lr: self.stage1.lr,
            },
            StageConfig {
                stage_id: 2,
                corpus_style: CorpusStyle::Realistic,
                length_law: LengthLaw::Uniform {
                    lo: self.stage2.len_lo,
                    hi: self.stage2.len_hi,
                },
                trainable: vec![GroupTag::Temporal],
                iterations: self.stage2.iterations,
                batch_size: self.stage2.batch_size,
                lr: self.stage2.lr,
            },
            StageConfig {
                stage_id: 3,
                corpus_style: CorpusStyle::Synthetic,
                length_law: LengthLaw::Fixed(self.stage3.len),
                trainable: vec![GroupTag::Spatial],
                iterations: self.stage3.iterations,
                batch_size: self.stage3.batch_size,
                lr: self.stage3.lr,
            },
        ]
    }
}
