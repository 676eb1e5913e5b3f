//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. Training keys:
//!
//! | key | default |
//! |---|---|
//! | `steps` | 20000 |
//! | `rank` | 20 |
//! | `lr_factors_init`, `lr_factors_final` | 1.6e-4, 1.6e-6 |
//! | `lr_medium` | 1e-3 |
//! | `weight_dr`, `weight_ssim`, `weight_cc`, `weight_bs`, `weight_tv` | 0.8, 0.2, 1, 1, 1 |
//! | `grad_threshold`, `opacity_threshold` | 1e-3, 0.1 |
//! | `densify_interval`, `densify_until`, `reset_interval` | 100, 10000, 1000 |
//! | `seed` | 0 |
//! | `medium` (`underwater` or `none`) | underwater |
//! | `bs_k` | 1000 |
//! | `checkpoint_interval` | 1000 |
//! | `als_iters`, `als_tol` | 100, 1e-9 |
//! | `adam_beta1`, `adam_beta2`, `adam_eps` | 0.9, 0.999, 1e-15 |
//!
//! Synthetic scene keys: `n_gaussians`, `width`, `height`, `n_views`,
//! `eval_views`, `ring_radius`, `ring_height`, `ring_arc`, `focal_factor`,
//! `dark_fraction`, `medium` (`underwater`, `fog` or `none`), `gamma_inf`,
//! `beta_b`, `attenuation` (three comma-separated values each), `seed`.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::synth::{MediumTruth, SynthMedium, SyntheticSpec};
use crate::trainer::{MediumMode, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config { line: i + 1, message: format!("expected key = value, got {line:?}") })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config { line: i + 1, message: "empty key".into() });
        }
        if out.iter().any(|e: &Entry| e.key == key) {
            return Err(Error::Config { line: i + 1, message: format!("duplicate key {key:?}") });
        }
        out.push(Entry { line: i + 1, key, value: v.trim().to_string() });
    }
    Ok(out)
}

impl Entry {
    fn fail(&self, msg: impl std::fmt::Display) -> Error {
        Error::Config { line: self.line, message: format!("{}: {msg}", self.key) }
    }

    fn parse<T: FromStr>(&self) -> Result<T> {
        self.value.parse().map_err(|_| self.fail(format!("cannot parse {:?}", self.value)))
    }

    fn triple(&self) -> Result<[f64; 3]> {
        let parts: Vec<&str> = self.value.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(self.fail("expected three comma-separated values"));
        }
        let mut out = [0.0; 3];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.parse().map_err(|_| self.fail(format!("cannot parse {p:?}")))?;
        }
        Ok(out)
    }
}

/// Apply entries on top of `cfg`.
pub fn apply_train_config(cfg: &mut TrainConfig, entries: &[Entry]) -> Result<()> {
    for e in entries {
        match e.key.as_str() {
            "steps" => cfg.steps = e.parse()?,
            "rank" => cfg.rank = e.parse()?,
            "lr_factors_init" => cfg.lr_factors_init = e.parse()?,
            "lr_factors_final" => cfg.lr_factors_final = e.parse()?,
            "lr_medium" => cfg.lr_medium = e.parse()?,
            "weight_dr" => cfg.weights.dr = e.parse()?,
            "weight_ssim" => cfg.weights.ssim = e.parse()?,
            "weight_cc" => cfg.weights.cc = e.parse()?,
            "weight_bs" => cfg.weights.bs = e.parse()?,
            "weight_tv" => cfg.weights.tv = e.parse()?,
            "grad_threshold" => cfg.tds.grad_threshold = e.parse()?,
            "opacity_threshold" => cfg.tds.opacity_threshold = e.parse()?,
            "densify_interval" => cfg.tds.interval = e.parse()?,
            "densify_until" => cfg.tds.densify_until = e.parse()?,
            "reset_interval" => cfg.tds.reset_interval = e.parse()?,
            "seed" => cfg.seed = e.parse()?,
            "medium" => {
                cfg.medium = match e.value.as_str() {
                    "underwater" => MediumMode::Underwater,
                    "none" => MediumMode::Disabled,
                    _ => return Err(e.fail("expected underwater or none")),
                }
            }
            "bs_k" => cfg.bs_k = e.parse()?,
            "checkpoint_interval" => cfg.checkpoint_interval = e.parse()?,
            "als_iters" => cfg.als_iters = e.parse()?,
            "als_tol" => cfg.als_tol = e.parse()?,
            "adam_beta1" => cfg.adam.beta1 = e.parse()?,
            "adam_beta2" => cfg.adam.beta2 = e.parse()?,
            "adam_eps" => cfg.adam.eps = e.parse()?,
            _ => return Err(e.fail("unknown key")),
        }
    }
    cfg.validate()
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    apply_train_config(&mut cfg, &parse_entries(text)?)?;
    Ok(cfg)
}

pub fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    parse_train_config(&text).map_err(|e| Error::load(path, e.to_string()))
}

/// Parse a synthetic scene description. `medium` selects the preset truth
/// that the medium-parameter keys then override.
pub fn parse_synthetic_spec(text: &str) -> Result<SyntheticSpec> {
    let entries = parse_entries(text)?;
    let mut spec = SyntheticSpec::default();
    if let Some(e) = entries.iter().find(|e| e.key == "medium") {
        spec.medium = match e.value.parse::<SynthMedium>().map_err(|err| e.fail(err))? {
            SynthMedium::Underwater => MediumTruth::underwater(),
            SynthMedium::Fog => MediumTruth::fog(),
            SynthMedium::None => MediumTruth::none(),
        };
    }
    for e in &entries {
        match e.key.as_str() {
            "medium" => {}
            "n_gaussians" => spec.n_gaussians = e.parse()?,
            "width" => spec.width = e.parse()?,
            "height" => spec.height = e.parse()?,
            "n_views" => spec.n_views = e.parse()?,
            "eval_views" => spec.eval_views = e.parse()?,
            "ring_radius" => spec.ring_radius = e.parse()?,
            "ring_height" => spec.ring_height = e.parse()?,
            "ring_arc" => spec.ring_arc = e.parse()?,
            "focal_factor" => spec.focal_factor = e.parse()?,
            "dark_fraction" => spec.dark_fraction = e.parse()?,
            "gamma_inf" => spec.medium.gamma_inf = e.triple()?,
            "beta_b" => spec.medium.beta_b = e.triple()?,
            "attenuation" => spec.medium.attenuation = e.triple()?,
            "seed" => spec.seed = e.parse()?,
            _ => return Err(e.fail("unknown key")),
        }
    }
    spec.validate()?;
    Ok(spec)
}

pub fn read_synthetic_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    parse_synthetic_spec(&text).map_err(|e| Error::load(path, e.to_string()))
}
