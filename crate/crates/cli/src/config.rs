//! Experiment configuration: one TOML file with a section per stage.
//! Every field has a default; unknown keys are rejected.

use std::path::Path;

use chrono_field::encoding::TimeEncoding;
use chrono_field::field::FieldConfig;
use chrono_field::metrics::PeakConfig;
use chrono_field::synth::{ChronoSceneSpec, ToySignalSpec};
use chrono_field::train::{EvalConfig, Fit1dConfig, TrainConfig};
use chrono_field::{Error, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fit1dSection {
    /// Encodings fitted and compared by `fit1d`.
    pub encodings: Vec<TimeEncoding>,
    pub fit: Fit1dConfig,
    /// Matching window for recovered transitions.
    pub tolerance: f64,
}

impl Default for Fit1dSection {
    fn default() -> Self {
        Self {
            encodings: vec![
                TimeEncoding::Step { dim: 16 },
                TimeEncoding::Raw,
                TimeEncoding::Positional { num_frequencies: 15 },
            ],
            fit: Fit1dConfig::default(),
            tolerance: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub fit_rays: usize,
    pub fit_iterations: usize,
    pub fit_lr: f64,
    /// Grid points of a time sweep.
    pub sweep_steps: usize,
    pub peaks: PeakConfig,
    /// Matching window for detected transitions.
    pub match_window: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            fit_rays: e.fit_rays,
            fit_iterations: e.fit_iterations,
            fit_lr: e.fit_lr,
            sweep_steps: 101,
            peaks: PeakConfig::default(),
            match_window: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: ChronoSceneSpec,
    pub signal: ToySignalSpec,
    pub fit1d: Fit1dSection,
    pub model: FieldConfig,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let (model, training) = match preset {
            Preset::Desk => (FieldConfig::desk(), TrainConfig::desk()),
            Preset::Paper => (FieldConfig::paper(), TrainConfig::paper()),
        };
        Self {
            data: ChronoSceneSpec::default(),
            signal: ToySignalSpec::default(),
            fit1d: Fit1dSection::default(),
            model,
            training,
            evaluation: EvaluationSection::default(),
        }
    }

    /// Preset values overlaid with the keys present in `text`.
    pub fn from_toml(text: &str, preset: Preset) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, user);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, preset: Preset) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text, preset)
            }
            None => Ok(Self::preset(preset)),
        }
    }

    /// One seed for every randomized stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.signal.seed = seed;
        self.fit1d.fit.seed = seed;
        self.model.seed = seed;
        self.training.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.signal.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if self.evaluation.sweep_steps < 2 {
            return Err(Error::Config("evaluation.sweep_steps must be at least 2".into()));
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            fit_rays: self.evaluation.fit_rays,
            fit_iterations: self.evaluation.fit_iterations,
            fit_lr: self.evaluation.fit_lr,
            sampling: chrono_field::render::SamplingConfig {
                perturb: false,
                ..self.training.sampling
            },
            seed: self.training.seed,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Recursive table merge; values in `over` win. Tables naming a `kind`
/// (tagged enums) replace the preset table wholesale.
fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
