//! Fisher information of mode projections and intensity detection, the
//! quantum bound, the norm-sensitive quantum Fisher information and the
//! resulting Cramér-Rao bounds.
//!
//! All values are per single detection event. Derivatives in `tau` are
//! central differences; every routine accepts the step explicitly so the
//! result can be checked against a halved step.

use std::sync::Arc;

use thiserror::Error;

use crate::channels::{
    coherent_modes_at, ideal_probs, incoherent_intensity_at, mixed_intensity_profiles_at,
    mixed_projection_probs, CoherenceParam, IntensityProfile,
};
use crate::pulse_model::{
    quadrature_inner_product, PulseError, PulseSpec, QuadratureGrid, TimeOffset, WaveformSamples,
};

/// Default differentiation step, in units of `sigma_t`.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Outcomes below this probability with a vanishing derivative contribute nothing.
const NEGLIGIBLE_PROB: f64 = 1e-14;
const NEGLIGIBLE_SLOPE: f64 = 1e-12;
/// Relative change under step halving above which a derivative is flagged.
const HALVING_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InformationError {
    #[error("differentiation step must be finite and positive, got {0}")]
    Step(f64),
    #[error("negative probability {value} for outcome {outcome}")]
    NegativeProbability { outcome: usize, value: f64 },
    #[error("probability vectors changed length between evaluations")]
    OutcomeCount,
    #[error("detected fraction must be nonnegative, got {0}")]
    DetectedFraction(f64),
    #[error(transparent)]
    Pulse(#[from] PulseError),
}

fn check_step(step: f64) -> Result<(), InformationError> {
    if step.is_finite() && step > 0.0 {
        Ok(())
    } else {
        Err(InformationError::Step(step))
    }
}

/// Per-event information budget at one `(tau, gamma)` point.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherReport {
    pub tau: f64,
    pub gamma: f64,
    pub fi_s: f64,
    pub fi_a: f64,
    pub fi_total: f64,
    pub qfi: f64,
    pub fi_intensity_s: f64,
    pub fi_intensity_a: f64,
    pub fi_intensity_incoherent: f64,
    pub crb_per_event: f64,
}

/// A derivative-based value together with its recomputation at half the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepChecked {
    pub value: f64,
    pub half_step_value: f64,
}

impl StepChecked {
    pub fn relative_change(&self) -> f64 {
        let scale = self.value.abs().max(self.half_step_value.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.value - self.half_step_value).abs() / scale
        }
    }

    /// False when halving the step moved the result by more than `1e-4` relative.
    pub fn converged(&self) -> bool {
        self.relative_change() <= HALVING_TOLERANCE
    }
}

/// `sum_n (d p_n / d tau)^2 / p_n` for an outcome distribution depending on `tau`.
///
/// `prob_fn` is called at `tau`, `tau +- step` and `tau +- 2 step`, so it must
/// accept signed offsets. Outcomes with `p = 0` and zero slope contribute nothing.
pub fn classical_fi_discrete<F>(prob_fn: F, tau: TimeOffset, step: f64) -> Result<f64, InformationError>
where
    F: Fn(f64) -> Vec<f64>,
{
    classical_fi_at(&prob_fn, tau.value(), step)
}

/// Fourth-order central difference from samples at `tau +- step` and `tau +- 2 step`.
fn stencil(hi: f64, lo: f64, hi2: f64, lo2: f64, step: f64) -> f64 {
    (8.0 * (hi - lo) - (hi2 - lo2)) / (12.0 * step)
}

fn classical_fi_at<F>(prob_fn: &F, tau: f64, step: f64) -> Result<f64, InformationError>
where
    F: Fn(f64) -> Vec<f64>,
{
    check_step(step)?;
    let center = prob_fn(tau);
    let hi = prob_fn(tau + step);
    let lo = prob_fn(tau - step);
    let hi2 = prob_fn(tau + 2.0 * step);
    let lo2 = prob_fn(tau - 2.0 * step);
    for probs in [&hi, &lo, &hi2, &lo2] {
        if probs.len() != center.len() {
            return Err(InformationError::OutcomeCount);
        }
    }
    for probs in [&center, &hi, &lo, &hi2, &lo2] {
        if let Some((outcome, &value)) = probs.iter().enumerate().find(|(_, &p)| p < 0.0) {
            return Err(InformationError::NegativeProbability { outcome, value });
        }
    }
    let mut fi = 0.0;
    for (k, &p) in center.iter().enumerate() {
        let slope = stencil(hi[k], lo[k], hi2[k], lo2[k], step);
        if p < NEGLIGIBLE_PROB && slope.abs() < NEGLIGIBLE_SLOPE {
            continue;
        }
        if p == 0.0 {
            // nonzero slope at a zero of p: the information is unbounded
            return Ok(f64::INFINITY);
        }
        fi += slope * slope / p;
    }
    Ok(fi)
}

/// Closed-form `(F_s, F_a)` for fully coherent detection of the two channels.
pub fn coherent_channel_fi_analytic(spec: &PulseSpec, tau: TimeOffset) -> (f64, f64) {
    let s2 = spec.sigma_t() * spec.sigma_t();
    let t2 = tau.value() * tau.value();
    let base = 1.0 / (8.0 * s2);
    let swing = (base - t2 / (32.0 * s2 * s2)) * (-t2 / (8.0 * s2)).exp();
    (base - swing, base + swing)
}

/// `1 / (4 sigma_t^2)`, independent of the separation.
pub fn qfi_constant(spec: &PulseSpec) -> f64 {
    1.0 / (4.0 * spec.sigma_t() * spec.sigma_t())
}

/// Quantum Cramér-Rao bound on the per-event variance, `4 sigma_t^2`.
pub fn quantum_crb(spec: &PulseSpec) -> f64 {
    1.0 / qfi_constant(spec)
}

fn central_difference(
    state_fn: &impl Fn(f64) -> WaveformSamples,
    tau: f64,
    step: f64,
) -> Result<WaveformSamples, InformationError> {
    let near = state_fn(tau + step).combine(1.0, &state_fn(tau - step), -1.0)?;
    let far = state_fn(tau + 2.0 * step).combine(1.0, &state_fn(tau - 2.0 * step), -1.0)?;
    let inv = 1.0 / (12.0 * step);
    Ok(near.combine(8.0 * inv, &far, -inv)?)
}

fn modified_qfi_at(
    state_fn: &impl Fn(f64) -> WaveformSamples,
    tau: f64,
    step: f64,
) -> Result<f64, InformationError> {
    let psi = state_fn(tau);
    let d = central_difference(state_fn, tau, step)?;
    let kinetic = quadrature_inner_product(&d, &d)?.re;
    let norm = quadrature_inner_product(&psi, &psi)?.re;
    let correction = if norm > NEGLIGIBLE_PROB {
        let bracket =
            quadrature_inner_product(&psi, &d)? - quadrature_inner_product(&d, &psi)?;
        (bracket * bracket).re / norm
    } else {
        0.0
    };
    Ok(4.0 * kinetic + correction)
}

/// Quantum Fisher information of a state whose norm may depend on `tau`:
/// `4 <d psi|d psi> + [<psi|d psi> - <d psi|psi>]^2 / N(tau)`.
///
/// The returned value carries the half-step recomputation; check
/// [`StepChecked::converged`] before trusting it.
pub fn modified_qfi<F>(state_fn: F, tau: TimeOffset, step: f64) -> Result<StepChecked, InformationError>
where
    F: Fn(f64) -> WaveformSamples,
{
    check_step(step)?;
    Ok(StepChecked {
        value: modified_qfi_at(&state_fn, tau.value(), step)?,
        half_step_value: modified_qfi_at(&state_fn, tau.value(), 0.5 * step)?,
    })
}

fn intensity_fi_at<F>(profile_fn: &F, tau: f64, step: f64) -> Result<f64, InformationError>
where
    F: Fn(f64) -> IntensityProfile,
{
    check_step(step)?;
    let center = profile_fn(tau);
    let hi = profile_fn(tau + step);
    let lo = profile_fn(tau - step);
    let hi2 = profile_fn(tau + 2.0 * step);
    let lo2 = profile_fn(tau - 2.0 * step);
    let integrand: Vec<f64> = (0..center.density.len())
        .map(|i| {
            let p = center.density[i];
            let slope = stencil(hi.density[i], lo.density[i], hi2.density[i], lo2.density[i], step);
            if p <= 0.0 || (p < f64::MIN_POSITIVE && slope == 0.0) {
                0.0
            } else {
                slope * slope / p
            }
        })
        .collect();
    Ok(center.grid.integrate(&integrand))
}

/// `integral (d P(t|tau) / d tau)^2 / P(t|tau) dt` for a time-resolved profile.
pub fn intensity_fi<F>(profile_fn: F, tau: TimeOffset, step: f64) -> Result<f64, InformationError>
where
    F: Fn(f64) -> IntensityProfile,
{
    intensity_fi_at(&profile_fn, tau.value(), step)
}

/// Information per detection registered in a sub-channel carrying `detected_fraction`
/// of all events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerDetectionFi {
    pub value: f64,
    /// Set when the channel receives no events; `value` is then infinite.
    pub undefined: bool,
}

pub fn per_detection_fi(fi: f64, detected_fraction: f64) -> Result<PerDetectionFi, InformationError> {
    if !(detected_fraction >= 0.0) {
        return Err(InformationError::DetectedFraction(detected_fraction));
    }
    if detected_fraction == 0.0 {
        return Ok(PerDetectionFi {
            value: f64::INFINITY,
            undefined: true,
        });
    }
    Ok(PerDetectionFi {
        value: fi / detected_fraction,
        undefined: false,
    })
}

/// Builds [`FisherReport`]s on a fixed quadrature grid.
#[derive(Debug, Clone)]
pub struct FisherCalculator {
    spec: PulseSpec,
    grid: Arc<QuadratureGrid>,
    step: f64,
}

impl FisherCalculator {
    pub fn new(spec: PulseSpec, grid: Arc<QuadratureGrid>, step: f64) -> Result<Self, InformationError> {
        check_step(step)?;
        Ok(Self { spec, grid, step })
    }

    pub fn spec(&self) -> &PulseSpec {
        &self.spec
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Mode-projection information of the two `gamma`-mixed channels.
    pub fn mode_fi(&self, tau: f64, gamma: CoherenceParam) -> Result<(f64, f64), InformationError> {
        let spec = self.spec;
        let channel = |index: usize| {
            move |t: f64| {
                let (s, a) = ideal_probs(&spec, t);
                let (ms, ma) = mixed_projection_probs((&s, &a), gamma)
                    .expect("ideal_probs yields a matched channel pair");
                if index == 0 {
                    ms.probs
                } else {
                    ma.probs
                }
            }
        };
        Ok((
            classical_fi_at(&channel(0), tau, self.step)?,
            classical_fi_at(&channel(1), tau, self.step)?,
        ))
    }

    /// Intensity-detection information of the two `gamma`-mixed channels.
    pub fn mixed_intensity_fi(
        &self,
        tau: f64,
        gamma: CoherenceParam,
    ) -> Result<(f64, f64), InformationError> {
        let spec = self.spec;
        let grid = &self.grid;
        let s = intensity_fi_at(
            &|t| mixed_intensity_profiles_at(&spec, t, gamma, grid).0,
            tau,
            self.step,
        )?;
        let a = intensity_fi_at(
            &|t| mixed_intensity_profiles_at(&spec, t, gamma, grid).1,
            tau,
            self.step,
        )?;
        Ok((s, a))
    }

    /// Direct-detection information of the incoherent mixture.
    pub fn incoherent_intensity_fi(&self, tau: f64) -> Result<f64, InformationError> {
        let spec = self.spec;
        intensity_fi_at(&|t| incoherent_intensity_at(&spec, t, &self.grid), tau, self.step)
    }

    /// Modified quantum information of `psi_s` and `psi_a`.
    pub fn channel_modified_qfi(&self, tau: TimeOffset) -> Result<(StepChecked, StepChecked), InformationError> {
        let spec = self.spec;
        let grid = &self.grid;
        let s = modified_qfi(|t| coherent_modes_at(&spec, t, 0.0, grid).0, tau, self.step)?;
        let a = modified_qfi(|t| coherent_modes_at(&spec, t, 0.0, grid).1, tau, self.step)?;
        Ok((s, a))
    }

    fn components(&self, t: f64, gamma: CoherenceParam) -> Result<[f64; 5], InformationError> {
        let (fi_s, fi_a) = self.mode_fi(t, gamma)?;
        let (int_s, int_a) = self.mixed_intensity_fi(t, gamma)?;
        let int_incoh = self.incoherent_intensity_fi(t)?;
        Ok([fi_s, fi_a, int_s, int_a, int_incoh])
    }

    /// Full report at one grid point.
    ///
    /// At separations below the differentiation step the derivative family is
    /// singular (the antisymmetric channel is empty at `tau = 0`). Every
    /// quantity is even in `tau`, so those points take the limit
    /// `(4 F(h) - F(2h)) / 3` with `h = step`, exact through `O(h^2)`.
    pub fn report(&self, tau: TimeOffset, gamma: CoherenceParam) -> Result<FisherReport, InformationError> {
        let c = if tau.value() < self.step {
            let near = self.components(self.step, gamma)?;
            let far = self.components(2.0 * self.step, gamma)?;
            let mut lim = [0.0; 5];
            for (l, (a, b)) in lim.iter_mut().zip(near.iter().zip(&far)) {
                *l = ((4.0 * a - b) / 3.0).max(0.0);
            }
            lim
        } else {
            self.components(tau.value(), gamma)?
        };
        let [fi_s, fi_a, fi_intensity_s, fi_intensity_a, fi_intensity_incoherent] = c;
        let fi_total = fi_s + fi_a;
        Ok(FisherReport {
            tau: tau.value(),
            gamma: gamma.value(),
            fi_s,
            fi_a,
            fi_total,
            qfi: qfi_constant(&self.spec),
            fi_intensity_s,
            fi_intensity_a,
            fi_intensity_incoherent,
            crb_per_event: 1.0 / fi_total,
        })
    }
}
