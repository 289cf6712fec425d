//! Flat `key = value` configuration for the CLI: schedule, network size,
//! composition weight, atom-count range, seed.

use crate::diffusion::ScheduleKind;
use crate::egnn::EgnnConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub schedule: ScheduleKind,
    pub t_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub k_neighbors: usize,
    pub hidden: usize,
    pub layers: usize,
    pub eta: f64,
    pub n_atoms_min: usize,
    pub n_atoms_max: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            schedule: ScheduleKind::Linear,
            t_steps: 100,
            beta_min: 1e-4,
            beta_max: 0.1,
            k_neighbors: 32,
            hidden: 64,
            layers: 4,
            eta: 0.5,
            n_atoms_min: 8,
            n_atoms_max: 24,
            seed: 0,
        }
    }
}

impl Config {
    /// Parses `key = value` lines; `#` starts a comment; unknown keys are
    /// errors. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| ConfigError::Parse {
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            let (key, value) = (key.trim(), value.trim());
            macro_rules! num {
                () => {
                    value.parse().map_err(|_| err(format!("bad value '{value}' for {key}")))?
                };
            }
            match key {
                "schedule" => {
                    cfg.schedule = value
                        .parse()
                        .map_err(|_| err(format!("bad schedule kind '{value}'")))?
                }
                "t_steps" => cfg.t_steps = num!(),
                "beta_min" => cfg.beta_min = num!(),
                "beta_max" => cfg.beta_max = num!(),
                "k_neighbors" => cfg.k_neighbors = num!(),
                "hidden" => cfg.hidden = num!(),
                "layers" => cfg.layers = num!(),
                "eta" => cfg.eta = num!(),
                "n_atoms_min" => cfg.n_atoms_min = num!(),
                "n_atoms_max" => cfg.n_atoms_max = num!(),
                "seed" => cfg.seed = num!(),
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        if cfg.n_atoms_min == 0 || cfg.n_atoms_min > cfg.n_atoms_max {
            return Err(ConfigError::Parse {
                line: 0,
                reason: format!(
                    "bad atom-count range [{}, {}]",
                    cfg.n_atoms_min, cfg.n_atoms_max
                ),
            });
        }
        Ok(cfg)
    }

    pub fn egnn_config(&self, lig_classes: usize) -> EgnnConfig {
        EgnnConfig {
            lig_classes,
            prot_classes: lig_classes + 1,
            hidden: self.hidden,
            layers: self.layers,
            ..EgnnConfig::default()
        }
    }
}
