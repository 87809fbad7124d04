use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, SparsityMode};
use crate::classifier::{SyntheticDataset, TrainConfig};
use crate::error::{Error, Result};
use crate::photopic::{reference_calibration, ContrastThreshold, PhotopicScene};
use crate::timing::CameraTimings;

/// Keys a manifest carries that are not configuration.
const MANIFEST_ONLY: [&str; 6] = ["tool_version", "command", "timestamp", "inputs", "outputs", "results"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Every slot shift once.
    Exhaustive,
    /// `trials` uniformly drawn shifts per image.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Percent of the frame time the source is on.
    DutyCycle,
    PulseWidth,
    FovFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Optimize a new train for every grid value.
    Reoptimize,
    /// Optimize once per trial at the base configuration and re-evaluate
    /// that train at every grid value.
    Fixed,
}

/// Every knob of every command, as flat keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// `bundled` or `exec:<command line>`.
    pub classifier: String,
    /// Weights of the bundled classifier; trained on the fly when absent.
    pub model: Option<PathBuf>,
    pub peer_timeout_s: f64,

    pub t_read_us: f64,
    pub t_exp_us: f64,
    pub n_rows_visible: usize,
    pub n_rows_hidden: usize,
    pub n_cols: usize,
    pub frame_rate_hz: f64,

    pub pulse_slots: Vec<usize>,
    pub width_us: f64,
    pub shift: usize,
    pub strength: f64,

    pub image: Option<PathBuf>,
    pub label: Option<usize>,

    pub theta_grid: Vec<f64>,
    pub l_b_grid: Vec<f64>,
    pub age_years: f64,
    pub pigment: f64,
    pub e_sensor: f64,
    pub lambda_nm: f64,
    pub c_thr: f64,
    /// Scattering coefficients; the reference calibration when absent.
    pub s_coeff: Option<f64>,
    pub t_exponent: Option<f64>,

    pub alpha: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub eot_samples: usize,
    pub binarize_threshold: f64,
    pub sparsity_weight: f64,
    pub sparsity_mode: SparsityMode,
    pub pulse_budget: Option<usize>,
    pub failure_loss: Option<f64>,
    /// Random shifts rendered by `attack`.
    pub render_shifts: usize,

    pub dataset_seed: u64,
    pub classes: usize,
    pub image_size: usize,
    pub fov_fraction: f64,
    pub fov_jitter: f64,

    pub epochs: usize,
    pub train_size: usize,
    pub holdout_size: usize,
    pub batch_size: usize,
    pub train_learning_rate: f64,
    pub min_accuracy: f64,

    /// Held-out images used when no `image` is given.
    pub images: usize,
    pub image_offset: usize,
    pub shift_mode: ShiftMode,
    pub trials: usize,

    pub sweep_axis: Option<SweepAxis>,
    pub sweep_grid: Vec<f64>,
    pub sweep_mode: SweepMode,
    /// Seeded repetitions per grid value, each on its own held-out image.
    pub sweep_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let attack = AttackConfig::default();
        let dataset = SyntheticDataset::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            classifier: "bundled".into(),
            model: None,
            peer_timeout_s: 30.0,

            t_read_us: 30.0,
            t_exp_us: 120.0,
            n_rows_visible: 64,
            n_rows_hidden: 4,
            n_cols: 64,
            frame_rate_hz: attack.frame_rate_hz,

            pulse_slots: Vec::new(),
            width_us: attack.width_us,
            shift: 0,
            strength: attack.strength,

            image: None,
            label: None,

            theta_grid: vec![1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0],
            l_b_grid: vec![1.0, 10.0, 100.0, 1000.0],
            age_years: 25.0,
            pigment: 1.0,
            e_sensor: 500.0,
            lambda_nm: 650.0,
            c_thr: 1.0,
            s_coeff: None,
            t_exponent: None,

            alpha: attack.alpha,
            learning_rate: attack.learning_rate,
            iterations: attack.iterations,
            eot_samples: attack.eot_samples,
            binarize_threshold: attack.binarize_threshold,
            sparsity_weight: attack.sparsity_weight,
            sparsity_mode: attack.sparsity_mode,
            pulse_budget: attack.pulse_budget,
            failure_loss: attack.failure_loss,
            render_shifts: 2,

            dataset_seed: dataset.seed,
            classes: dataset.classes,
            image_size: dataset.image_size,
            fov_fraction: dataset.fov_fraction,
            fov_jitter: dataset.fov_jitter,

            epochs: train.epochs,
            train_size: train.train_size,
            holdout_size: train.holdout_size,
            batch_size: train.batch_size,
            train_learning_rate: train.learning_rate,
            min_accuracy: train.min_accuracy,

            images: 20,
            image_offset: 0,
            shift_mode: ShiftMode::Exhaustive,
            trials: 254,

            sweep_axis: None,
            sweep_grid: Vec::new(),
            sweep_mode: SweepMode::Reoptimize,
            sweep_trials: 4,
        }
    }
}

/// Name inside the first pair of backticks of a deserializer message.
fn quoted_field(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

/// First key that fails to deserialize on its own.
fn offending_key(table: &toml::Table) -> Option<String> {
    table.iter().find_map(|(key, value)| {
        let single: toml::Table = [(key.clone(), value.clone())].into_iter().collect();
        single.try_into::<RunConfig>().is_err().then(|| key.clone())
    })
}

impl RunConfig {
    /// Parses a config file or a manifest, dropping manifest-only keys.
    /// `command`, when present, must match `expected_command`.
    pub fn from_toml(text: &str, expected_command: Option<&str>) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        Self::from_table(table, expected_command)
    }

    pub fn from_table(mut table: toml::Table, expected_command: Option<&str>) -> Result<Self> {
        if let (Some(found), Some(expected)) = (table.get("command"), expected_command) {
            if found.as_str() != Some(expected) {
                return Err(Error::config(
                    "command",
                    format!("manifest was written by `{found}`, not `{expected}`"),
                ));
            }
        }
        for key in MANIFEST_ONLY {
            table.remove(key);
        }
        table.clone().try_into().map_err(|e: toml::de::Error| {
            let message = e.message().to_string();
            let field = quoted_field(&message)
                .or_else(|| offending_key(&table))
                .unwrap_or_else(|| "config".into());
            Error::config(field, message)
        })
    }

    pub fn load(path: &Path, expected_command: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, expected_command)
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes to a table")
    }

    /// Applies `key=value` overrides; values are parsed as TOML and fall
    /// back to plain strings.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = self.to_table();
        for (key, raw) in overrides {
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.clone()));
            table.insert(key.clone(), value);
        }
        Self::from_table(table, None)
    }

    pub fn timings(&self) -> Result<CameraTimings> {
        CameraTimings::new(
            self.t_read_us,
            self.t_exp_us,
            self.n_rows_visible,
            self.n_rows_hidden,
            self.n_cols,
        )
    }

    pub fn attack(&self) -> AttackConfig {
        AttackConfig {
            alpha: self.alpha,
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            eot_samples: self.eot_samples,
            binarize_threshold: self.binarize_threshold,
            seed: self.seed,
            sparsity_weight: self.sparsity_weight,
            sparsity_mode: self.sparsity_mode,
            pulse_budget: self.pulse_budget,
            failure_loss: self.failure_loss,
            strength: self.strength,
            width_us: self.width_us,
            frame_rate_hz: self.frame_rate_hz,
        }
    }

    pub fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            seed: self.dataset_seed,
            classes: self.classes,
            image_size: self.image_size,
            fov_fraction: self.fov_fraction,
            fov_jitter: self.fov_jitter,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            epochs: self.epochs,
            train_size: self.train_size,
            holdout_size: self.holdout_size,
            batch_size: self.batch_size,
            learning_rate: self.train_learning_rate,
            min_accuracy: self.min_accuracy,
            ..TrainConfig::default()
        }
    }

    /// Scene at the first grid point; the surface overrides angle and background.
    pub fn scene(&self) -> PhotopicScene {
        let cal = reference_calibration();
        PhotopicScene {
            theta_deg: self.theta_grid.first().copied().unwrap_or(1.0),
            age_years: self.age_years,
            pigment: self.pigment,
            l_b: self.l_b_grid.first().copied().unwrap_or(10.0),
            e_sensor: self.e_sensor,
            lambda_nm: self.lambda_nm,
            s_coeff: self.s_coeff.unwrap_or(cal.s_coeff),
            t_exponent: self.t_exponent.unwrap_or(cal.t_exponent),
            c_thr: ContrastThreshold::Constant(self.c_thr),
        }
    }

    pub fn peer_timeout(&self) -> Result<Duration> {
        Duration::try_from_secs_f64(self.peer_timeout_s)
            .map_err(|_| Error::config("peer_timeout_s", "must be a non-negative number of seconds"))
    }
}
