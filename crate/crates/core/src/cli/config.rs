//! JSON run configuration. Every field is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::channels::{CoherenceParam, DeviceModel};
use crate::estimator::{AnalysisOptions, CalibrationSource, GlsOptions};
use crate::information::DEFAULT_STEP;
use crate::montecarlo::{DriftSpec, ExperimentConfig};
use crate::pulse_model::{PulseSpec, TimeOffset, DEFAULT_MODE_CUTOFF};

const DEFAULT_CALIBRATION_REPETITIONS: usize = 1000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFile {
    pub crosstalk: Option<f64>,
    pub efficiency: Option<f64>,
    pub dark_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftFile {
    pub std: f64,
    pub recenter_period: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub repetitions: Option<usize>,
    pub reuse_records: Option<bool>,
}

/// On-disk configuration. Times are in units of the pulse width.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mode_cutoff: Option<usize>,
    pub tau_grid: Option<Vec<f64>>,
    pub gammas: Option<Vec<f64>>,
    pub repetitions: Option<usize>,
    pub mean_total_detections: Option<f64>,
    pub device: Option<DeviceFile>,
    pub drift: Option<DriftFile>,
    pub seed: Option<u64>,
    pub calibration: Option<CalibrationFile>,
    pub fisher_step: Option<f64>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub experiment: ExperimentConfig,
    pub analysis: AnalysisOptions,
    pub fisher_step: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            analysis: AnalysisOptions {
                calibration: CalibrationSource::Fresh {
                    repetitions: DEFAULT_CALIBRATION_REPETITIONS,
                },
                gls: GlsOptions::default(),
            },
            fisher_step: DEFAULT_STEP,
        }
    }
}

impl Settings {
    /// The configuration with every default filled in; loading it back yields the same settings.
    pub fn echo(&self) -> ConfigFile {
        let e = &self.experiment;
        let (cal_reps, reuse) = match self.analysis.calibration {
            CalibrationSource::Fresh { repetitions } => (repetitions, false),
            CalibrationSource::Reuse => (DEFAULT_CALIBRATION_REPETITIONS, true),
        };
        ConfigFile {
            mode_cutoff: Some(e.spec.mode_cutoff()),
            tau_grid: Some(e.tau_grid.iter().map(|t| t.value()).collect()),
            gammas: Some(e.gammas.iter().map(|g| g.value()).collect()),
            repetitions: Some(e.repetitions),
            mean_total_detections: Some(e.mean_total_detections),
            device: Some(DeviceFile {
                crosstalk: Some(e.device.crosstalk_eps()),
                efficiency: Some(e.device.efficiency()),
                dark_rate: Some(e.device.dark_rate()),
            }),
            drift: e.drift.map(|d| DriftFile {
                std: d.std,
                recenter_period: Some(d.recenter_period),
            }),
            seed: Some(e.master_seed),
            calibration: Some(CalibrationFile {
                repetitions: Some(cal_reps),
                reuse_records: Some(reuse),
            }),
            fisher_step: Some(self.fisher_step),
        }
    }
}

/// 1-based line of the first occurrence of `"key"` in the source text.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

struct Locator<'a> {
    origin: &'a str,
    text: &'a str,
}

impl Locator<'_> {
    fn err(&self, key: &str, msg: impl std::fmt::Display) -> CliError {
        match key_line(self.text, key) {
            Some(line) => CliError::Config(format!("{} line {line}: {key}: {msg}", self.origin)),
            None => CliError::Config(format!("{}: {key}: {msg}", self.origin)),
        }
    }
}

/// Parses and validates configuration text. `origin` names the source in messages.
pub fn parse_config(text: &str, origin: &str) -> Result<Settings, CliError> {
    let file: ConfigFile = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    resolve(&file, &Locator { origin, text })
}

pub fn load_config(path: Option<&Path>) -> Result<Settings, CliError> {
    match path {
        None => Ok(Settings::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            parse_config(&text, &p.display().to_string())
        }
    }
}

fn resolve(file: &ConfigFile, loc: &Locator) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    let e = &mut s.experiment;

    let cutoff = file.mode_cutoff.unwrap_or(DEFAULT_MODE_CUTOFF);
    e.spec = PulseSpec::new(1.0, cutoff).map_err(|err| loc.err("mode_cutoff", err))?;
    if let Some(grid) = &file.tau_grid {
        e.tau_grid = grid
            .iter()
            .map(|&t| TimeOffset::new(t))
            .collect::<Result<_, _>>()
            .map_err(|err| loc.err("tau_grid", err))?;
    }
    if let Some(gammas) = &file.gammas {
        e.gammas = gammas
            .iter()
            .map(|&g| CoherenceParam::new(g))
            .collect::<Result<_, _>>()
            .map_err(|err| loc.err("gammas", err))?;
    }
    if let Some(r) = file.repetitions {
        e.repetitions = r;
    }
    if let Some(n) = file.mean_total_detections {
        e.mean_total_detections = n;
    }
    if let Some(d) = &file.device {
        let base = DeviceModel::default();
        e.device = DeviceModel::new(
            d.crosstalk.unwrap_or(base.crosstalk_eps()),
            d.efficiency.unwrap_or(base.efficiency()),
            d.dark_rate.unwrap_or(base.dark_rate()),
        )
        .map_err(|err| loc.err("device", err))?;
    }
    e.drift = file.drift.as_ref().map(|d| DriftSpec {
        std: d.std,
        recenter_period: d.recenter_period.unwrap_or(DriftSpec::DEFAULT_PERIOD),
    });
    if let Some(seed) = file.seed {
        e.master_seed = seed;
    }
    e.validate().map_err(|err| {
        use crate::montecarlo::ConfigError::*;
        let key = match err {
            EmptyTauGrid => "tau_grid",
            EmptyGammas => "gammas",
            Repetitions => "repetitions",
            MeanDetections(_) => "mean_total_detections",
            Cutoff(_) => "mode_cutoff",
            DriftStd(_) | DriftPeriod => "drift",
        };
        loc.err(key, err)
    })?;

    if let Some(c) = &file.calibration {
        s.analysis.calibration = if c.reuse_records.unwrap_or(false) {
            CalibrationSource::Reuse
        } else {
            let repetitions = c.repetitions.unwrap_or(DEFAULT_CALIBRATION_REPETITIONS);
            if repetitions == 0 {
                return Err(loc.err("calibration", "repetitions must be at least 1"));
            }
            CalibrationSource::Fresh { repetitions }
        };
    }
    if let Some(step) = file.fisher_step {
        if !(step.is_finite() && step > 0.0) {
            return Err(loc.err("fisher_step", format!("must be finite and positive, got {step}")));
        }
        s.fisher_step = step;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(parse_config("{}", "c.json").unwrap(), Settings::default());
    }

    #[test]
    fn echo_round_trips() {
        let text = r#"{
            "tau_grid": [0, 0.25, 0.5, 0.75, 1.0],
            "gammas": [0, 0.5],
            "device": {"crosstalk": 0.02},
            "drift": {"std": 0.01},
            "calibration": {"reuse_records": true},
            "seed": 7
        }"#;
        let s = parse_config(text, "c.json").unwrap();
        assert_eq!(s.experiment.master_seed, 7);
        assert_eq!(s.analysis.calibration, CalibrationSource::Reuse);
        let echoed = serde_json::to_string_pretty(&s.echo()).unwrap();
        assert_eq!(parse_config(&echoed, "echo").unwrap(), s);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = parse_config("{\n  \"repetitions\": 3,\n  \"colour\": 1\n}", "c.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("colour"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_value_points_at_its_key() {
        let err = parse_config("{\n  \"repetitions\": 3,\n  \"gammas\": [0, 0.7]\n}", "c.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("gammas"), "{msg}");
        let err = parse_config("{\"repetitions\": 0}", "c.json").unwrap_err();
        assert!(err.to_string().contains("line 1: repetitions"));
    }
}
