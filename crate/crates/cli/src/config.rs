//! Layered run configuration: built-in defaults, then a flat TOML config
//! file, then `AEDD_*` environment variables, then command-line flags. The
//! effective configuration is echoed to the run log so a run can be
//! reproduced byte-exactly from the echo.

use aedd_core::decode::{DecodeConfig, Strategy};
use aedd_core::model::ModelConfig;
use aedd_core::score::FaDenominator;
use aedd_core::simulate::MixtureSpec;
use aedd_core::train::TrainConfig;
use aedd_core::Real;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // shared
    pub seed: u64,
    pub workers: usize,
    pub threshold: Real,
    // model
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub f_in: usize,
    pub dropout: Real,
    // train
    pub l_enroll_min: usize,
    pub l_enroll_max: usize,
    pub zero_drop_p: Real,
    pub warmup_steps: usize,
    pub peak_lr_scale: Real,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: Real,
    pub checkpoint_every: usize,
    // decode
    pub l_enroll: usize,
    pub l_stop: usize,
    pub strategy: String,
    pub oracle_speakers: Option<usize>,
    pub max_speakers: usize,
    pub median_window: usize,
    // simulate
    pub speakers: usize,
    pub num_mixtures: usize,
    pub frames: usize,
    pub feature_dim: usize,
    pub mean_utt_frames: Real,
    pub mean_gap_frames: Real,
    pub overlap_bias: Real,
    pub noise_spread: Real,
    pub within_spread: Real,
    pub min_single_run: usize,
    // score
    pub collar: Real,
    pub score_overlap: bool,
    pub fa_denominator: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let decode = DecodeConfig::default();
        let sim = MixtureSpec::default();
        RunConfig {
            seed: 0,
            workers: 1,
            threshold: decode.threshold,
            d_model: model.d_model,
            n_heads: model.n_heads,
            enc_layers: model.enc_layers,
            dec_layers: model.dec_layers,
            ffn_dim: model.ffn_dim,
            f_in: model.f_in,
            dropout: model.dropout,
            l_enroll_min: train.l_enroll_min,
            l_enroll_max: train.l_enroll_max,
            zero_drop_p: train.zero_drop_p,
            warmup_steps: train.warmup_steps,
            peak_lr_scale: train.peak_lr_scale,
            batch_size: train.batch_size,
            epochs: train.epochs,
            grad_clip: train.grad_clip,
            checkpoint_every: train.checkpoint_every,
            l_enroll: decode.l_enroll,
            l_stop: decode.l_stop,
            strategy: "sc".into(),
            oracle_speakers: None,
            max_speakers: decode.max_speakers,
            median_window: decode.median_window,
            speakers: sim.n_speakers,
            num_mixtures: 10,
            frames: sim.duration_frames,
            feature_dim: sim.feature_dim,
            mean_utt_frames: sim.mean_utt_frames,
            mean_gap_frames: sim.mean_gap_frames,
            overlap_bias: sim.overlap_bias,
            noise_spread: sim.noise_spread,
            within_spread: sim.within_spread,
            min_single_run: sim.min_single_run,
            collar: 0.25,
            score_overlap: true,
            fa_denominator: "ref_class".into(),
        }
    }
}

pub const ENV_PREFIX: &str = "AEDD_";

impl RunConfig {
    /// defaults <- config file <- AEDD_* environment <- CLI flag overrides.
    pub fn resolve(config_file: Option<&Path>, overrides: &dyn Fn(&mut RunConfig)) -> Result<Self> {
        let mut cfg = match config_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config file {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config file {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        cfg.apply_env()?;
        overrides(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply AEDD_<FIELD> environment variables by field name.
    fn apply_env(&mut self) -> Result<()> {
        let mut value = serde_json::to_value(&*self)?;
        let map = value.as_object_mut().expect("config is a map");
        let keys: Vec<String> = map.keys().cloned().collect();
        for key in keys {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            let Ok(raw) = std::env::var(&var) else { continue };
            let parsed: serde_json::Value = match &map[&key] {
                serde_json::Value::String(_) => serde_json::Value::String(raw.clone()),
                serde_json::Value::Bool(_) => serde_json::Value::Bool(
                    raw.parse().with_context(|| format!("{var} must be a bool"))?,
                ),
                _ => serde_json::from_str(&raw)
                    .with_context(|| format!("{var}='{raw}' is not a valid value"))?,
            };
            map.insert(key, parsed);
        }
        *self = serde_json::from_value(value)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 {
            bail!("speakers must be >= 1");
        }
        if self.num_mixtures == 0 {
            bail!("num_mixtures must be >= 1");
        }
        if self.workers == 0 {
            bail!("workers must be >= 1");
        }
        self.strategy.parse::<Strategy>().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.fa_denom().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.model_config().validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.train_config().validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.decode_config().validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.mixture_spec(0).validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        if self.collar < 0.0 {
            bail!("collar must be >= 0");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            ffn_dim: self.ffn_dim,
            f_in: self.f_in,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            l_enroll_min: self.l_enroll_min,
            l_enroll_max: self.l_enroll_max,
            zero_drop_p: self.zero_drop_p,
            warmup_steps: self.warmup_steps,
            peak_lr_scale: self.peak_lr_scale,
            batch_size: self.batch_size,
            epochs: self.epochs,
            grad_clip: self.grad_clip,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            workers: self.workers,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            l_enroll: self.l_enroll,
            l_stop: self.l_stop,
            threshold: self.threshold,
            strategy: self.strategy.parse().unwrap_or(Strategy::Sc),
            oracle_num_speakers: self.oracle_speakers,
            max_speakers: self.max_speakers,
            seed: self.seed,
            median_window: self.median_window,
        }
    }

    pub fn mixture_spec(&self, seed: u64) -> MixtureSpec {
        MixtureSpec {
            n_speakers: self.speakers,
            duration_frames: self.frames,
            mean_utt_frames: self.mean_utt_frames,
            mean_gap_frames: self.mean_gap_frames,
            overlap_bias: self.overlap_bias,
            noise_spread: self.noise_spread,
            within_spread: self.within_spread,
            feature_dim: self.feature_dim,
            min_single_run: self.min_single_run,
            seed,
        }
    }

    pub fn fa_denom(&self) -> aedd_core::Result<FaDenominator> {
        match self.fa_denominator.as_str() {
            "ref_class" => Ok(FaDenominator::RefClass),
            "complement" => Ok(FaDenominator::Complement),
            other => Err(aedd_core::Error::input(format!(
                "fa_denominator must be 'ref_class' or 'complement', got '{other}'"
            ))),
        }
    }

    /// Echo the effective configuration: TOML written to `<out>/run_config.toml`
    /// and to stderr, so a run is reproducible from the echo alone.
    pub fn echo(&self, out_dir: &Path, command: &str) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let toml_text = toml::to_string_pretty(self)?;
        let annotated = format!("# effective configuration for `aedd {command}`\n{toml_text}");
        std::fs::write(out_dir.join("run_config.toml"), &annotated)?;
        eprintln!("effective config ({command}):\n{annotated}");
        Ok(())
    }
}
