//! In-phase and anti-phase channels of the two-pulse superposition, their
//! Hermite-Gauss projection statistics, partial-coherence mixing, intensity
//! profiles and the imperfect detector response.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::pulse_model::{
    hg_basis, quadrature_inner_product, shifted_pulse_at, PulseError, PulseSpec, QuadratureGrid,
    ShiftSign, TimeOffset, WaveformSamples,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("coherence parameter must lie in [0, 1/2], got {0}")]
    Gamma(f64),
    #[error("crosstalk must lie in [0, 1), got {0}")]
    Crosstalk(f64),
    #[error("efficiency must lie in (0, 1], got {0}")]
    Efficiency(f64),
    #[error("dark rate must be finite and nonnegative, got {0}")]
    DarkRate(f64),
    #[error("unknown channel label {0:?}")]
    Label(String),
    #[error("expected a symmetric and an antisymmetric distribution of equal length")]
    ChannelPair,
    #[error(transparent)]
    Pulse(#[from] PulseError),
}

/// Output port of the balanced beam splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    /// In-phase, `(psi_+ + psi_-)/sqrt(2)`.
    Symmetric,
    /// Anti-phase, `(psi_+ - psi_-)/sqrt(2)`.
    Antisymmetric,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Symmetric, Channel::Antisymmetric];

    /// Short label used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            Channel::Symmetric => "s",
            Channel::Antisymmetric => "a",
        }
    }

    /// Mode parity this channel populates on an ideal device (0 = even).
    pub fn parity(self) -> usize {
        match self {
            Channel::Symmetric => 0,
            Channel::Antisymmetric => 1,
        }
    }

    pub fn index(self) -> usize {
        self.parity()
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Channel {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" | "symmetric" | "in-phase" => Ok(Channel::Symmetric),
            "a" | "antisymmetric" | "anti-phase" => Ok(Channel::Antisymmetric),
            _ => Err(ChannelError::Label(s.to_string())),
        }
    }
}

/// Mixing weight between the two channel-swapped detection schemes.
/// `0` is fully coherent, `1/2` fully incoherent.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CoherenceParam(f64);

impl CoherenceParam {
    pub const COHERENT: CoherenceParam = CoherenceParam(0.0);
    pub const INCOHERENT: CoherenceParam = CoherenceParam(0.5);

    pub fn new(gamma: f64) -> Result<Self, ChannelError> {
        if !(0.0..=0.5).contains(&gamma) {
            return Err(ChannelError::Gamma(gamma));
        }
        Ok(Self(gamma))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The five settings scanned from coherent to incoherent.
    pub fn standard_settings() -> Vec<CoherenceParam> {
        [0.0, 0.125, 0.25, 0.375, 0.5]
            .into_iter()
            .map(CoherenceParam)
            .collect()
    }
}

/// Per-mode detection probabilities of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDistribution {
    pub channel: Channel,
    pub probs: Vec<f64>,
    /// Probability carried by modes at or beyond the cutoff.
    pub tail_mass: f64,
}

impl ChannelDistribution {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.tail_mass
    }
}

/// Linear-plus-offset map from ideal projection probabilities to detected rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceModel {
    crosstalk_eps: f64,
    efficiency: f64,
    dark_rate: f64,
}

impl DeviceModel {
    pub const DEFAULT_CROSSTALK: f64 = 0.01;

    pub fn new(crosstalk_eps: f64, efficiency: f64, dark_rate: f64) -> Result<Self, ChannelError> {
        if !(0.0..1.0).contains(&crosstalk_eps) {
            return Err(ChannelError::Crosstalk(crosstalk_eps));
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(ChannelError::Efficiency(efficiency));
        }
        if !(dark_rate.is_finite() && dark_rate >= 0.0) {
            return Err(ChannelError::DarkRate(dark_rate));
        }
        Ok(Self {
            crosstalk_eps,
            efficiency,
            dark_rate,
        })
    }

    pub fn ideal() -> Self {
        Self {
            crosstalk_eps: 0.0,
            efficiency: 1.0,
            dark_rate: 0.0,
        }
    }

    pub fn crosstalk_eps(&self) -> f64 {
        self.crosstalk_eps
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    /// Expected dark counts per projection per run.
    pub fn dark_rate(&self) -> f64 {
        self.dark_rate
    }
}

impl Default for DeviceModel {
    fn default() -> Self {
        Self {
            crosstalk_eps: Self::DEFAULT_CROSSTALK,
            efficiency: 1.0,
            dark_rate: 0.0,
        }
    }
}

/// Which intensity a profile describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileSource {
    Coherent(Channel),
    /// `gamma`-mixed channel; stored as the channel label it is reported under.
    Mixed(Channel),
    /// `|psi_+|^2 + |psi_-|^2`.
    IncoherentSum,
}

/// Time-resolved detection density.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityProfile {
    pub source: ProfileSource,
    pub grid: Arc<QuadratureGrid>,
    pub density: Vec<f64>,
}

impl IntensityProfile {
    pub fn total(&self) -> f64 {
        self.grid.integrate(&self.density)
    }
}

/// Poisson weight `x^n e^{-x} / n!` with `x = tau^2 / (16 sigma_t^2)`.
///
/// Accepts a signed offset; the weight is even in `tau`.
pub fn poisson_weight(spec: &PulseSpec, tau: f64, n: usize) -> f64 {
    let x = mode_mean(spec, tau);
    let mut term = (-x).exp();
    for k in 1..=n {
        term *= x / k as f64;
    }
    term
}

fn mode_mean(spec: &PulseSpec, tau: f64) -> f64 {
    let s = spec.sigma_t();
    tau * tau / (16.0 * s * s)
}

/// Summed weight of modes `n >= from` with the given parity, by direct series summation.
fn parity_tail(x: f64, from: usize, parity: usize) -> f64 {
    let mut term = (-x).exp();
    for k in 1..=from {
        term *= x / k as f64;
    }
    let mut sum = 0.0;
    let mut n = from;
    loop {
        if n % 2 == parity {
            sum += term;
        }
        n += 1;
        term *= x / n as f64;
        if term == 0.0 || (n > from + 2 && term < 1e-18 * sum) || n > from + 10_000 {
            break;
        }
    }
    sum
}

/// Closed-form projection probabilities at a signed offset.
pub fn ideal_probs(spec: &PulseSpec, tau: f64) -> (ChannelDistribution, ChannelDistribution) {
    let cutoff = spec.mode_cutoff();
    let x = mode_mean(spec, tau);
    let mut s = vec![0.0; cutoff];
    let mut a = vec![0.0; cutoff];
    let mut term = (-x).exp();
    for n in 0..cutoff {
        if n > 0 {
            term *= x / n as f64;
        }
        if n % 2 == 0 {
            s[n] = term;
        } else {
            a[n] = term;
        }
    }
    (
        ChannelDistribution {
            channel: Channel::Symmetric,
            probs: s,
            tail_mass: parity_tail(x, cutoff, 0),
        },
        ChannelDistribution {
            channel: Channel::Antisymmetric,
            probs: a,
            tail_mass: parity_tail(x, cutoff, 1),
        },
    )
}

/// `|<HG_n | psi_s>|^2` and `|<HG_n | psi_a>|^2` in closed form.
///
/// Even modes fire only in the symmetric channel, odd modes only in the
/// antisymmetric one, both with weight `p_n(tau)`.
pub fn hg_projection_probs(
    spec: &PulseSpec,
    tau: TimeOffset,
) -> (ChannelDistribution, ChannelDistribution) {
    ideal_probs(spec, tau.value())
}

/// Coherent superpositions at a signed offset, jointly displaced by `centroid`.
pub fn coherent_modes_at(
    spec: &PulseSpec,
    tau: f64,
    centroid: f64,
    grid: &Arc<QuadratureGrid>,
) -> (WaveformSamples, WaveformSamples) {
    let plus = shifted_pulse_at(spec, tau, ShiftSign::Plus, centroid, grid);
    let minus = shifted_pulse_at(spec, tau, ShiftSign::Minus, centroid, grid);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let s = plus.combine(r, &minus, r).expect("shared grid");
    let a = plus.combine(r, &minus, -r).expect("shared grid");
    (s, a)
}

/// `psi_s = (psi_+ + psi_-)/sqrt(2)` and `psi_a = (psi_+ - psi_-)/sqrt(2)`.
pub fn coherent_modes(
    spec: &PulseSpec,
    tau: TimeOffset,
    grid: &Arc<QuadratureGrid>,
) -> (WaveformSamples, WaveformSamples) {
    coherent_modes_at(spec, tau.value(), 0.0, grid)
}

/// Projects waveforms onto the retained HG modes by quadrature.
#[derive(Debug, Clone)]
pub struct ModeProjector {
    spec: PulseSpec,
    grid: Arc<QuadratureGrid>,
    basis: Vec<WaveformSamples>,
}

impl ModeProjector {
    pub fn new(spec: PulseSpec, grid: Arc<QuadratureGrid>) -> Self {
        let basis = hg_basis(&spec, &grid);
        Self { spec, grid, basis }
    }

    pub fn spec(&self) -> &PulseSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid> {
        &self.grid
    }

    /// `|<HG_n | f>|^2` for every retained mode, plus the remaining norm.
    pub fn project(&self, f: &WaveformSamples) -> Result<(Vec<f64>, f64), PulseError> {
        let probs = self
            .basis
            .iter()
            .map(|mode| quadrature_inner_product(mode, f).map(|c| c.norm_sqr()))
            .collect::<Result<Vec<_>, _>>()?;
        let tail = (f.norm_sqr() - probs.iter().sum::<f64>()).max(0.0);
        Ok((probs, tail))
    }

    /// Channel distributions with both pulses displaced by `centroid`.
    pub fn channel_probs(
        &self,
        tau: f64,
        centroid: f64,
    ) -> Result<(ChannelDistribution, ChannelDistribution), PulseError> {
        let (s, a) = coherent_modes_at(&self.spec, tau, centroid, &self.grid);
        let (ps, ts) = self.project(&s)?;
        let (pa, ta) = self.project(&a)?;
        Ok((
            ChannelDistribution {
                channel: Channel::Symmetric,
                probs: ps,
                tail_mass: ts,
            },
            ChannelDistribution {
                channel: Channel::Antisymmetric,
                probs: pa,
                tail_mass: ta,
            },
        ))
    }
}

/// Post-processing mix of the two channel-swapped detection schemes.
///
/// `P_s = (1-g) p_s + g p_a` and `P_a = g p_s + (1-g) p_a`; for parity-pure
/// inputs this weights even modes of the symmetric channel by `1-g` and odd
/// ones by `g`, and the reverse for the antisymmetric channel.
pub fn mixed_projection_probs(
    ideal: (&ChannelDistribution, &ChannelDistribution),
    gamma: CoherenceParam,
) -> Result<(ChannelDistribution, ChannelDistribution), ChannelError> {
    let (s, a) = ideal;
    if s.channel != Channel::Symmetric
        || a.channel != Channel::Antisymmetric
        || s.probs.len() != a.probs.len()
    {
        return Err(ChannelError::ChannelPair);
    }
    let g = gamma.value();
    let keep = 1.0 - g;
    let mix = |x: f64, y: f64| keep * x + g * y;
    let ms = s.probs.iter().zip(&a.probs).map(|(&x, &y)| mix(x, y)).collect();
    let ma = a.probs.iter().zip(&s.probs).map(|(&x, &y)| mix(x, y)).collect();
    Ok((
        ChannelDistribution {
            channel: Channel::Symmetric,
            probs: ms,
            tail_mass: mix(s.tail_mass, a.tail_mass),
        },
        ChannelDistribution {
            channel: Channel::Antisymmetric,
            probs: ma,
            tail_mass: mix(a.tail_mass, s.tail_mass),
        },
    ))
}

/// `|psi_s(t)|^2` and `|psi_a(t)|^2` on the grid.
pub fn intensity_profiles(
    spec: &PulseSpec,
    tau: TimeOffset,
    grid: &Arc<QuadratureGrid>,
) -> (IntensityProfile, IntensityProfile) {
    intensity_profiles_at(spec, tau.value(), grid)
}

pub fn intensity_profiles_at(
    spec: &PulseSpec,
    tau: f64,
    grid: &Arc<QuadratureGrid>,
) -> (IntensityProfile, IntensityProfile) {
    let (s, a) = coherent_modes_at(spec, tau, 0.0, grid);
    (
        IntensityProfile {
            source: ProfileSource::Coherent(Channel::Symmetric),
            grid: Arc::clone(grid),
            density: s.intensity(),
        },
        IntensityProfile {
            source: ProfileSource::Coherent(Channel::Antisymmetric),
            grid: Arc::clone(grid),
            density: a.intensity(),
        },
    )
}

/// Intensity profiles of the `gamma`-mixed channels.
pub fn mixed_intensity_profiles_at(
    spec: &PulseSpec,
    tau: f64,
    gamma: CoherenceParam,
    grid: &Arc<QuadratureGrid>,
) -> (IntensityProfile, IntensityProfile) {
    let (s, a) = intensity_profiles_at(spec, tau, grid);
    let g = gamma.value();
    let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter().zip(y).map(|(p, q)| (1.0 - g) * p + g * q).collect()
    };
    (
        IntensityProfile {
            source: ProfileSource::Mixed(Channel::Symmetric),
            grid: Arc::clone(grid),
            density: mix(&s.density, &a.density),
        },
        IntensityProfile {
            source: ProfileSource::Mixed(Channel::Antisymmetric),
            grid: Arc::clone(grid),
            density: mix(&a.density, &s.density),
        },
    )
}

/// `|psi_+(t)|^2 + |psi_-(t)|^2`, the direct-detection profile of the incoherent mixture.
pub fn incoherent_intensity_at(
    spec: &PulseSpec,
    tau: f64,
    grid: &Arc<QuadratureGrid>,
) -> IntensityProfile {
    let plus = shifted_pulse_at(spec, tau, ShiftSign::Plus, 0.0, grid);
    let minus = shifted_pulse_at(spec, tau, ShiftSign::Minus, 0.0, grid);
    let density = plus
        .values()
        .iter()
        .zip(minus.values())
        .map(|(p, m)| p.norm_sqr() + m.norm_sqr())
        .collect();
    IntensityProfile {
        source: ProfileSource::IncoherentSum,
        grid: Arc::clone(grid),
        density,
    }
}

/// Detected rate per mode, in units of the run's expected detections.
///
/// `rate(n) = eta [(1-eps) P(n) + eps/2 (P(n-1) + P(n+1))] + dark / mean_detections`.
/// Leakage below mode 0 is reflected back into mode 0; leakage past the last
/// retained mode is lost.
pub fn apply_device(ideal: &ChannelDistribution, dev: &DeviceModel, mean_detections: f64) -> Vec<f64> {
    let p = &ideal.probs;
    let n = p.len();
    let eps = dev.crosstalk_eps;
    let dark = if mean_detections > 0.0 {
        dev.dark_rate / mean_detections
    } else {
        0.0
    };
    let mut rate = vec![0.0; n];
    for (k, &pk) in p.iter().enumerate() {
        rate[k] += (1.0 - eps) * pk;
        let leak = 0.5 * eps * pk;
        if k == 0 {
            rate[0] += leak;
        } else {
            rate[k - 1] += leak;
        }
        if k + 1 < n {
            rate[k + 1] += leak;
        }
    }
    rate.iter_mut()
        .for_each(|r| *r = (dev.efficiency * *r + dark).max(0.0));
    rate
}
