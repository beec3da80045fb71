//! Photon-counting simulation of the projection experiment.
//!
//! Every Poisson draw comes from its own ChaCha stream selected by the run
//! coordinates, so records do not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::channels::{
    apply_device, ideal_probs, mixed_projection_probs, Channel, CoherenceParam, DeviceModel,
    ModeProjector,
};
use crate::pulse_model::{PulseSpec, QuadratureGrid, TimeOffset};

/// Projections recorded per channel (modes `0..4`).
pub const RECORDED_MODES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("tau grid is empty")]
    EmptyTauGrid,
    #[error("gamma list is empty")]
    EmptyGammas,
    #[error("repetitions must be at least 1")]
    Repetitions,
    #[error("mean total detections must be finite and positive, got {0}")]
    MeanDetections(f64),
    #[error("mode cutoff {0} is below the {RECORDED_MODES} recorded projections")]
    Cutoff(usize),
    #[error("drift std must be finite and nonnegative, got {0}")]
    DriftStd(f64),
    #[error("drift recenter period must be at least 1")]
    DriftPeriod,
}

/// Slowly varying joint offset of both pulses relative to the gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSpec {
    /// Standard deviation of each random-walk increment, in `sigma_t`.
    pub std: f64,
    /// The offset resets to zero every this many runs.
    pub recenter_period: usize,
}

impl DriftSpec {
    pub const DEFAULT_PERIOD: usize = 10;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub spec: PulseSpec,
    pub tau_grid: Vec<TimeOffset>,
    pub gammas: Vec<CoherenceParam>,
    pub repetitions: usize,
    pub mean_total_detections: f64,
    pub device: DeviceModel,
    pub drift: Option<DriftSpec>,
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// Seven separations from 0 to `sigma_t`, dense near zero.
    pub const DEFAULT_TAU_GRID: [f64; 7] = [0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0];
    pub const DEFAULT_REPETITIONS: usize = 100;
    pub const DEFAULT_MEAN_DETECTIONS: f64 = 1e4;
    pub const DEFAULT_SEED: u64 = 20_220_315;

    pub fn default_tau_grid() -> Vec<TimeOffset> {
        Self::DEFAULT_TAU_GRID
            .iter()
            .map(|&t| TimeOffset::new(t).expect("nonnegative"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tau_grid.is_empty() {
            return Err(ConfigError::EmptyTauGrid);
        }
        if self.gammas.is_empty() {
            return Err(ConfigError::EmptyGammas);
        }
        if self.repetitions == 0 {
            return Err(ConfigError::Repetitions);
        }
        if !(self.mean_total_detections.is_finite() && self.mean_total_detections > 0.0) {
            return Err(ConfigError::MeanDetections(self.mean_total_detections));
        }
        if self.spec.mode_cutoff() < RECORDED_MODES {
            return Err(ConfigError::Cutoff(self.spec.mode_cutoff()));
        }
        if let Some(d) = self.drift {
            if !(d.std.is_finite() && d.std >= 0.0) {
                return Err(ConfigError::DriftStd(d.std));
            }
            if d.recenter_period == 0 {
                return Err(ConfigError::DriftPeriod);
            }
        }
        Ok(())
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_grid
            .iter()
            .map(|t| t.value())
            .fold(0.0, f64::max)
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec: PulseSpec::unit(),
            tau_grid: Self::default_tau_grid(),
            gammas: CoherenceParam::standard_settings(),
            repetitions: Self::DEFAULT_REPETITIONS,
            mean_total_detections: Self::DEFAULT_MEAN_DETECTIONS,
            device: DeviceModel::default(),
            drift: None,
            master_seed: Self::DEFAULT_SEED,
        }
    }
}

/// Counts of one run for projections `n = 0..4` on both mixed channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub tau_true: f64,
    pub gamma: f64,
    pub run_index: usize,
    pub counts_s: [u64; RECORDED_MODES],
    pub counts_a: [u64; RECORDED_MODES],
}

impl DetectionRecord {
    pub fn counts(&self, channel: Channel) -> &[u64; RECORDED_MODES] {
        match channel {
            Channel::Symmetric => &self.counts_s,
            Channel::Antisymmetric => &self.counts_a,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts_s.iter().chain(&self.counts_a).sum()
    }
}

/// Data-taking phase; calibration runs draw from disjoint streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Measurement,
    Calibration,
}

impl Phase {
    fn tag(self) -> u64 {
        match self {
            Phase::Measurement => 0x4d45_4153,
            Phase::Calibration => 0x4341_4c49,
        }
    }
}

/// Coordinates of one run in the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RunKey {
    pub phase: Phase,
    pub tau_index: usize,
    pub gamma_index: usize,
    pub run_index: usize,
}

const DRIFT_STREAM: u64 = 0xD21F_7000;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_id(fields: &[u64]) -> u64 {
    fields
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &f| splitmix64(acc ^ f))
}

/// Independent generator for one draw site: keyed by the master seed, with
/// the ChaCha stream chosen by the site coordinates.
pub fn stream_rng(master_seed: u64, fields: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(fields));
    rng
}

/// Joint offset of both pulses for the given run, or 0 without drift.
///
/// A Gaussian random walk restarted at zero at every multiple of the
/// recenter period.
pub fn apply_drift(config: &ExperimentConfig, key: &RunKey) -> f64 {
    let Some(drift) = config.drift else {
        return 0.0;
    };
    if drift.std == 0.0 {
        return 0.0;
    }
    let start = key.run_index - key.run_index % drift.recenter_period;
    let normal = Normal::new(0.0, drift.std).expect("validated drift std");
    (start + 1..=key.run_index)
        .map(|k| {
            let mut rng = stream_rng(
                config.master_seed,
                &[
                    DRIFT_STREAM,
                    key.phase.tag(),
                    key.tau_index as u64,
                    key.gamma_index as u64,
                    k as u64,
                ],
            );
            normal.sample(&mut rng)
        })
        .sum()
}

/// Expected detected rates, in units of the run's expected detections, for
/// the recorded projections of both mixed channels.
#[derive(Debug, Clone)]
pub struct RateModel {
    config: ExperimentConfig,
    projector: Option<ModeProjector>,
}

impl RateModel {
    pub fn new(config: &ExperimentConfig) -> Self {
        let projector = config.drift.map(|d| {
            let grid = QuadratureGrid::standard(&config.spec, config.tau_max() + 8.0 * d.std.max(0.0));
            ModeProjector::new(config.spec, grid)
        });
        Self {
            config: config.clone(),
            projector,
        }
    }

    pub fn rates(
        &self,
        tau: f64,
        gamma: CoherenceParam,
        centroid: f64,
    ) -> ([f64; RECORDED_MODES], [f64; RECORDED_MODES]) {
        let (s, a) = match (&self.projector, centroid) {
            (Some(p), c) if c != 0.0 => p.channel_probs(tau, c).expect("projector grid is shared"),
            _ => ideal_probs(&self.config.spec, tau),
        };
        let (ms, ma) = mixed_projection_probs((&s, &a), gamma).expect("matched channel pair");
        let n = self.config.mean_total_detections;
        let rs = apply_device(&ms, &self.config.device, n);
        let ra = apply_device(&ma, &self.config.device, n);
        let mut out_s = [0.0; RECORDED_MODES];
        let mut out_a = [0.0; RECORDED_MODES];
        out_s.copy_from_slice(&rs[..RECORDED_MODES]);
        out_a.copy_from_slice(&ra[..RECORDED_MODES]);
        (out_s, out_a)
    }
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(mean).expect("positive finite mean").sample(rng);
    draw as u64
}

/// One simulated run at grid point `(tau_index, gamma_index)`.
pub fn sample_run(config: &ExperimentConfig, model: &RateModel, key: &RunKey) -> DetectionRecord {
    let tau = config.tau_grid[key.tau_index].value();
    let gamma = config.gammas[key.gamma_index];
    let centroid = apply_drift(config, key);
    let (rs, ra) = model.rates(tau, gamma, centroid);
    let n = config.mean_total_detections;
    let mut counts = [[0u64; RECORDED_MODES]; 2];
    for (channel, rates) in [(Channel::Symmetric, rs), (Channel::Antisymmetric, ra)] {
        for (mode, &rate) in rates.iter().enumerate() {
            let mut rng = stream_rng(
                config.master_seed,
                &[
                    key.phase.tag(),
                    key.tau_index as u64,
                    key.gamma_index as u64,
                    key.run_index as u64,
                    channel.index() as u64,
                    mode as u64,
                ],
            );
            counts[channel.index()][mode] = poisson_count(&mut rng, n * rate);
        }
    }
    DetectionRecord {
        tau_true: tau,
        gamma: gamma.value(),
        run_index: key.run_index,
        counts_s: counts[0],
        counts_a: counts[1],
    }
}

/// All runs of one phase, ordered by tau, then gamma, then run index.
pub fn run_phase(config: &ExperimentConfig, phase: Phase, repetitions: usize) -> Vec<DetectionRecord> {
    let model = RateModel::new(config);
    let keys: Vec<RunKey> = (0..config.tau_grid.len())
        .flat_map(|tau_index| {
            (0..config.gammas.len()).flat_map(move |gamma_index| {
                (0..repetitions).map(move |run_index| RunKey {
                    phase,
                    tau_index,
                    gamma_index,
                    run_index,
                })
            })
        })
        .collect();
    keys.par_iter()
        .map(|key| sample_run(config, &model, key))
        .collect()
}

/// The measurement grid: `|tau_grid| x |gammas| x repetitions` records.
pub fn run_experiment(config: &ExperimentConfig) -> Vec<DetectionRecord> {
    run_phase(config, Phase::Measurement, config.repetitions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            repetitions: 5,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.repetitions = 0;
        assert_eq!(c.validate(), Err(ConfigError::Repetitions));
        let c = ExperimentConfig {
            mean_total_detections: 0.0,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            drift: Some(DriftSpec { std: 0.1, recenter_period: 0 }),
            ..ExperimentConfig::default()
        };
        assert_eq!(c.validate(), Err(ConfigError::DriftPeriod));
    }

    #[test]
    fn default_grid_size() {
        let c = ExperimentConfig::default();
        assert_eq!(c.tau_grid.len() * c.gammas.len() * c.repetitions, 3500);
    }

    #[test]
    fn zero_rate_gives_zero_counts() {
        let c = ExperimentConfig {
            mean_total_detections: 1e-300,
            ..small_config()
        };
        for r in run_experiment(&c) {
            assert_eq!(r.total(), 0);
        }
    }

    #[test]
    fn coherent_zero_offset_fires_only_ground_mode() {
        let c = ExperimentConfig {
            device: DeviceModel::ideal(),
            gammas: vec![CoherenceParam::COHERENT],
            tau_grid: vec![TimeOffset::ZERO],
            repetitions: 20,
            ..ExperimentConfig::default()
        };
        for r in run_experiment(&c) {
            assert_eq!(r.counts_a, [0; 4]);
            assert_eq!(&r.counts_s[1..], &[0, 0, 0]);
            assert!(r.counts_s[0] > 9000);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let c = small_config();
        let a = run_experiment(&c);
        assert_eq!(a.len(), 7 * 5 * 5);
        assert_eq!(a, run_experiment(&c));
        let other = ExperimentConfig {
            master_seed: c.master_seed + 1,
            ..c.clone()
        };
        assert_ne!(a, run_experiment(&other));
    }

    #[test]
    fn order_matches_grid() {
        let c = small_config();
        let recs = run_experiment(&c);
        assert_eq!(recs[0].tau_true, 0.0);
        assert_eq!(recs[5].gamma, 0.125);
        assert_eq!(recs[25].tau_true, 0.1);
        assert_eq!(recs[7].run_index, 2);
    }

    #[test]
    fn calibration_streams_are_disjoint() {
        let c = small_config();
        let m = run_phase(&c, Phase::Measurement, 5);
        let cal = run_phase(&c, Phase::Calibration, 5);
        assert_ne!(m, cal);
    }

    #[test]
    fn drift_resets_and_is_off_by_default() {
        let mut c = small_config();
        let key = |run_index| RunKey {
            phase: Phase::Measurement,
            tau_index: 1,
            gamma_index: 0,
            run_index,
        };
        assert_eq!(apply_drift(&c, &key(7)), 0.0);
        c.drift = Some(DriftSpec { std: 0.05, recenter_period: 10 });
        assert_eq!(apply_drift(&c, &key(0)), 0.0);
        assert_eq!(apply_drift(&c, &key(20)), 0.0);
        assert_ne!(apply_drift(&c, &key(13)), 0.0);
        // the walk is cumulative within a period
        let step = apply_drift(&c, &key(12)) - apply_drift(&c, &key(11));
        assert!(step.abs() < 0.5);
    }

    #[test]
    fn drifted_rates_break_parity() {
        let c = ExperimentConfig {
            device: DeviceModel::ideal(),
            drift: Some(DriftSpec { std: 0.05, recenter_period: 10 }),
            ..ExperimentConfig::default()
        };
        let model = RateModel::new(&c);
        let (s0, _) = model.rates(0.5, CoherenceParam::COHERENT, 0.0);
        assert_eq!(s0[1], 0.0);
        let (s, _) = model.rates(0.5, CoherenceParam::COHERENT, 0.1);
        assert!(s[1] > 1e-4);
    }
}
