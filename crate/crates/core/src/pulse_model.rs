//! Gaussian pulses, their time-shifted copies and the Hermite-Gauss temporal
//! mode family, all sampled on a shared trapezoidal quadrature grid.
//!
//! Times are measured in the same unit as `sigma_t`. Everything downstream
//! uses `sigma_t = 1`, so offsets read directly as `tau / sigma_t`.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

/// Number of Hermite-Gauss modes retained unless configured otherwise.
pub const DEFAULT_MODE_CUTOFF: usize = 8;
/// Points on the standard quadrature grid.
pub const STANDARD_GRID_POINTS: usize = 4096;
/// Half-width of the standard grid, in units of `sigma_t`, before padding by `tau_max`.
pub const GRID_HALF_WIDTH: f64 = 12.0;
/// Largest separation the standard grid is padded for, in units of `sigma_t`.
pub const DEFAULT_TAU_MAX: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("pulse width must be finite and positive, got {0}")]
    InvalidWidth(f64),
    #[error("mode cutoff must be at least 2, got {0}")]
    CutoffTooSmall(usize),
    #[error("mode index {index} is outside 0..{cutoff}")]
    ModeIndex { index: usize, cutoff: usize },
    #[error("time offset must be finite and nonnegative, got {0}")]
    InvalidOffset(f64),
    #[error("waveforms are sampled on different grids")]
    GridMismatch,
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
}

/// The Gaussian pulse family and the number of Hermite-Gauss modes kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    sigma_t: f64,
    mode_cutoff: usize,
}

impl PulseSpec {
    pub fn new(sigma_t: f64, mode_cutoff: usize) -> Result<Self, PulseError> {
        if !(sigma_t.is_finite() && sigma_t > 0.0) {
            return Err(PulseError::InvalidWidth(sigma_t));
        }
        if mode_cutoff < 2 {
            return Err(PulseError::CutoffTooSmall(mode_cutoff));
        }
        Ok(Self {
            sigma_t,
            mode_cutoff,
        })
    }

    /// Unit-width pulse with the default cutoff.
    pub fn unit() -> Self {
        Self {
            sigma_t: 1.0,
            mode_cutoff: DEFAULT_MODE_CUTOFF,
        }
    }

    pub fn with_cutoff(self, mode_cutoff: usize) -> Result<Self, PulseError> {
        Self::new(self.sigma_t, mode_cutoff)
    }

    pub fn sigma_t(&self) -> f64 {
        self.sigma_t
    }

    pub fn mode_cutoff(&self) -> usize {
        self.mode_cutoff
    }

    fn amplitude_prefactor(&self) -> f64 {
        (2.0 * PI * self.sigma_t * self.sigma_t).powf(-0.25)
    }

    fn check_mode(&self, n: usize) -> Result<(), PulseError> {
        if n >= self.mode_cutoff {
            return Err(PulseError::ModeIndex {
                index: n,
                cutoff: self.mode_cutoff,
            });
        }
        Ok(())
    }
}

impl Default for PulseSpec {
    fn default() -> Self {
        Self::unit()
    }
}

/// Magnitude of the separation between the two pulses.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TimeOffset(f64);

impl TimeOffset {
    pub const ZERO: TimeOffset = TimeOffset(0.0);

    pub fn new(tau: f64) -> Result<Self, PulseError> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(PulseError::InvalidOffset(tau));
        }
        Ok(Self(tau))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Which of the two shifted copies: `Plus` is `psi(t + tau/2)`, `Minus` is `psi(t - tau/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftSign {
    Plus,
    Minus,
}

impl ShiftSign {
    fn factor(self) -> f64 {
        match self {
            ShiftSign::Plus => 1.0,
            ShiftSign::Minus => -1.0,
        }
    }
}

/// Quadrature nodes with trapezoidal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Trapezoidal rule over an arbitrary strictly increasing node list.
    pub fn from_points(points: Vec<f64>) -> Result<Self, PulseError> {
        if points.len() < 2 {
            return Err(PulseError::InvalidGrid("need at least two points"));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(PulseError::InvalidGrid("non-finite point"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PulseError::InvalidGrid("points must be strictly increasing"));
        }
        let n = points.len();
        let mut weights = vec![0.0; n];
        for i in 0..n - 1 {
            let half = 0.5 * (points[i + 1] - points[i]);
            weights[i] += half;
            weights[i + 1] += half;
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(lo: f64, hi: f64, len: usize) -> Result<Self, PulseError> {
        if len < 2 || !(hi > lo) {
            return Err(PulseError::InvalidGrid("uniform grid needs lo < hi and len >= 2"));
        }
        // centred construction keeps a symmetric grid exactly mirror-symmetric
        let step = (hi - lo) / (len - 1) as f64;
        let center = 0.5 * (lo + hi);
        let mid = 0.5 * (len - 1) as f64;
        let points = (0..len).map(|i| center + step * (i as f64 - mid)).collect();
        Self::from_points(points)
    }

    /// `[-12 sigma_t - tau_max, 12 sigma_t + tau_max]` with 4096 nodes.
    pub fn standard(spec: &PulseSpec, tau_max: f64) -> Arc<Self> {
        Self::standard_with_points(spec, tau_max, STANDARD_GRID_POINTS)
    }

    /// Standard extent with a different node count, used for resolution checks.
    pub fn standard_with_points(spec: &PulseSpec, tau_max: f64, len: usize) -> Arc<Self> {
        let half = GRID_HALF_WIDTH * spec.sigma_t() + tau_max.abs();
        Arc::new(Self::uniform(-half, half, len).expect("standard grid parameters are valid"))
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Trapezoidal integral of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Complex amplitudes sampled on a quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSamples {
    grid: Arc<QuadratureGrid>,
    values: Vec<Complex64>,
}

impl WaveformSamples {
    pub fn new(grid: Arc<QuadratureGrid>, values: Vec<Complex64>) -> Result<Self, PulseError> {
        if values.len() != grid.len() {
            return Err(PulseError::InvalidGrid("value count differs from grid size"));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &Arc<QuadratureGrid>, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn from_real_fn(grid: &Arc<QuadratureGrid>, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |t| Complex64::new(f(t), 0.0))
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }

    /// `a * self + b * other`, pointwise.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self, PulseError> {
        if !self.same_grid(other) {
            return Err(PulseError::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x * a + y * b)
            .collect();
        Ok(Self {
            grid: Arc::clone(&self.grid),
            values,
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v.norm_sqr())
            .sum()
    }

    /// Pointwise `|value|^2`.
    pub fn intensity(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }
}

/// `(2 pi sigma_t^2)^(-1/4) exp(-t^2 / (4 sigma_t^2))`
pub fn gaussian_amplitude(spec: &PulseSpec, t: f64) -> f64 {
    let s = spec.sigma_t();
    spec.amplitude_prefactor() * (-t * t / (4.0 * s * s)).exp()
}

/// Values of `HG_0..HG_{count-1}` at `t`, filled into `out`.
///
/// Uses the recurrence on `H_n / sqrt(2^n n!)` so no factorial is ever formed.
pub fn hg_amplitudes_into(spec: &PulseSpec, t: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let x = t / (SQRT_2 * spec.sigma_t());
    let envelope = gaussian_amplitude(spec, t);
    let mut prev = 0.0;
    let mut cur = 1.0;
    out[0] = envelope;
    for n in 1..out.len() {
        let k = (n - 1) as f64;
        let next = (2.0 / (k + 1.0)).sqrt() * x * cur - (k / (k + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        out[n] = envelope * cur;
    }
}

/// `HG_n(t)` for `n < mode_cutoff`.
pub fn hg_amplitude(spec: &PulseSpec, n: usize, t: f64) -> Result<f64, PulseError> {
    spec.check_mode(n)?;
    let mut buf = vec![0.0; n + 1];
    hg_amplitudes_into(spec, t, &mut buf);
    Ok(buf[n])
}

/// `HG_n` sampled on `grid`.
pub fn hg_mode(
    spec: &PulseSpec,
    n: usize,
    grid: &Arc<QuadratureGrid>,
) -> Result<WaveformSamples, PulseError> {
    spec.check_mode(n)?;
    let mut buf = vec![0.0; n + 1];
    let values = grid
        .points()
        .iter()
        .map(|&t| {
            hg_amplitudes_into(spec, t, &mut buf);
            Complex64::new(buf[n], 0.0)
        })
        .collect();
    Ok(WaveformSamples {
        grid: Arc::clone(grid),
        values,
    })
}

/// All retained modes on `grid`, indexed by mode number.
pub fn hg_basis(spec: &PulseSpec, grid: &Arc<QuadratureGrid>) -> Vec<WaveformSamples> {
    let cutoff = spec.mode_cutoff();
    let mut columns = vec![Vec::with_capacity(grid.len()); cutoff];
    let mut buf = vec![0.0; cutoff];
    for &t in grid.points() {
        hg_amplitudes_into(spec, t, &mut buf);
        for (col, &v) in columns.iter_mut().zip(&buf) {
            col.push(Complex64::new(v, 0.0));
        }
    }
    columns
        .into_iter()
        .map(|values| WaveformSamples {
            grid: Arc::clone(grid),
            values,
        })
        .collect()
}

/// `psi(t + sign * tau/2 - centroid) / sqrt(2)` for a signed offset.
///
/// The `1/sqrt(2)` keeps the two copies at total intensity one.
pub fn shifted_pulse_at(
    spec: &PulseSpec,
    tau: f64,
    sign: ShiftSign,
    centroid: f64,
    grid: &Arc<QuadratureGrid>,
) -> WaveformSamples {
    let shift = sign.factor() * 0.5 * tau - centroid;
    WaveformSamples::from_real_fn(grid, |t| gaussian_amplitude(spec, t + shift) / SQRT_2)
}

/// One of the two time-shifted copies, carrying half of the total intensity.
pub fn shifted_pulse(
    spec: &PulseSpec,
    tau: TimeOffset,
    sign: ShiftSign,
    grid: &Arc<QuadratureGrid>,
) -> WaveformSamples {
    shifted_pulse_at(spec, tau.value(), sign, 0.0, grid)
}

/// `integral conj(f(t)) g(t) dt` by the trapezoidal rule on the shared grid.
pub fn quadrature_inner_product(
    f: &WaveformSamples,
    g: &WaveformSamples,
) -> Result<Complex64, PulseError> {
    if !f.same_grid(g) {
        return Err(PulseError::GridMismatch);
    }
    Ok(f
        .grid
        .weights()
        .iter()
        .zip(f.values.iter().zip(&g.values))
        .map(|(w, (a, b))| a.conj() * b * *w)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> Arc<QuadratureGrid> {
        QuadratureGrid::standard(&PulseSpec::unit(), DEFAULT_TAU_MAX)
    }

    #[test]
    fn spec_validation() {
        assert!(PulseSpec::new(0.0, 8).is_err());
        assert!(PulseSpec::new(-1.0, 8).is_err());
        assert!(PulseSpec::new(f64::NAN, 8).is_err());
        assert_eq!(PulseSpec::new(1.0, 1), Err(PulseError::CutoffTooSmall(1)));
        assert!(PulseSpec::new(1.0, 2).is_ok());
        assert!(TimeOffset::new(-0.1).is_err());
        assert!(TimeOffset::new(f64::INFINITY).is_err());
    }

    #[test]
    fn gaussian_peak_and_decay() {
        let spec = PulseSpec::unit();
        assert_abs_diff_eq!(gaussian_amplitude(&spec, 0.0), 0.631_618_777_746_064_7, epsilon = 1e-15);
        assert_eq!(gaussian_amplitude(&spec, 1e3), 0.0);
        assert_eq!(gaussian_amplitude(&spec, -1e3), 0.0);
        for t in [0.1, 0.7, 2.5, 9.0] {
            assert_eq!(gaussian_amplitude(&spec, t), gaussian_amplitude(&spec, -t));
        }
        let g = grid();
        let psi = WaveformSamples::from_real_fn(&g, |t| gaussian_amplitude(&spec, t));
        assert_abs_diff_eq!(psi.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mode_zero_is_the_gaussian() {
        let spec = PulseSpec::unit();
        for t in [-3.0, -0.5, 0.0, 0.25, 4.0] {
            assert_eq!(hg_amplitude(&spec, 0, t).unwrap(), gaussian_amplitude(&spec, t));
        }
        assert_eq!(hg_amplitude(&spec, 1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn mode_index_out_of_range() {
        let spec = PulseSpec::unit();
        assert_eq!(
            hg_amplitude(&spec, 8, 0.0),
            Err(PulseError::ModeIndex { index: 8, cutoff: 8 })
        );
        assert!(hg_mode(&spec, 9, &grid()).is_err());
    }

    #[test]
    fn parity_is_exact() {
        let spec = PulseSpec::new(1.0, 16).unwrap();
        let g = grid();
        let basis = hg_basis(&spec, &g);
        let n_pts = g.len();
        for (n, mode) in basis.iter().enumerate() {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            for i in 0..n_pts {
                let a = mode.values()[i].re;
                let b = mode.values()[n_pts - 1 - i].re;
                assert!((a - sign * b).abs() <= 1e-15 * a.abs().max(1e-300) + 1e-300,
                    "mode {n} index {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn shifted_copies_at_zero_offset() {
        let spec = PulseSpec::unit();
        let g = grid();
        let plus = shifted_pulse(&spec, TimeOffset::ZERO, ShiftSign::Plus, &g);
        let minus = shifted_pulse(&spec, TimeOffset::ZERO, ShiftSign::Minus, &g);
        assert_eq!(plus, minus);
        for (v, &t) in plus.values().iter().zip(g.points()) {
            assert_eq!(v.re, gaussian_amplitude(&spec, t) / SQRT_2);
        }
    }

    #[test]
    fn shifted_overlap_and_norm() {
        let spec = PulseSpec::unit();
        let g = grid();
        for tau in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0] {
            let t = TimeOffset::new(tau).unwrap();
            let plus = shifted_pulse(&spec, t, ShiftSign::Plus, &g);
            let minus = shifted_pulse(&spec, t, ShiftSign::Minus, &g);
            assert_abs_diff_eq!(plus.norm_sqr() + minus.norm_sqr(), 1.0, epsilon = 1e-10);
            let overlap = quadrature_inner_product(&minus, &plus).unwrap();
            assert_abs_diff_eq!(overlap.re, 0.5 * (-tau * tau / 8.0).exp(), epsilon = 1e-10);
            assert_abs_diff_eq!(overlap.im, 0.0);
        }
        let t = TimeOffset::new(1.0).unwrap();
        let plus = shifted_pulse(&spec, t, ShiftSign::Plus, &g);
        let minus = shifted_pulse(&spec, t, ShiftSign::Minus, &g);
        let overlap = quadrature_inner_product(&minus, &plus).unwrap();
        assert_abs_diff_eq!(overlap.re, 0.441_248_451_292_297_7, epsilon = 1e-10);
    }

    #[test]
    fn inner_product_parity_and_mismatch() {
        let spec = PulseSpec::unit();
        let g = QuadratureGrid::standard_with_points(&spec, 0.0, 2001);
        let psi = WaveformSamples::from_real_fn(&g, |t| gaussian_amplitude(&spec, t));
        let hg1 = hg_mode(&spec, 1, &g).unwrap();
        assert_abs_diff_eq!(quadrature_inner_product(&psi, &psi).unwrap().re, 1.0, epsilon = 1e-10);
        assert!(quadrature_inner_product(&hg1, &psi).unwrap().norm() < 1e-10);

        let other = grid();
        let psi2 = WaveformSamples::from_real_fn(&other, |t| gaussian_amplitude(&spec, t));
        assert_eq!(quadrature_inner_product(&psi, &psi2), Err(PulseError::GridMismatch));
    }

    #[test]
    fn displaced_ground_mode_overlap() {
        // <HG_0 | psi(t - tau/2)> = exp(-tau^2 / (32 sigma_t^2)) at two resolutions.
        let spec = PulseSpec::unit();
        let expected = 0.969_233_234_476_344_1;
        for len in [STANDARD_GRID_POINTS, 2 * STANDARD_GRID_POINTS] {
            let g = QuadratureGrid::standard_with_points(&spec, DEFAULT_TAU_MAX, len);
            let hg0 = hg_mode(&spec, 0, &g).unwrap();
            let shifted = WaveformSamples::from_real_fn(&g, |t| gaussian_amplitude(&spec, t - 0.5));
            let v = quadrature_inner_product(&hg0, &shifted).unwrap().re;
            assert_abs_diff_eq!(v, expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(QuadratureGrid::from_points(vec![0.0]).is_err());
        assert!(QuadratureGrid::from_points(vec![0.0, 0.0, 1.0]).is_err());
        assert!(QuadratureGrid::uniform(1.0, 0.0, 10).is_err());
        let g = Arc::new(QuadratureGrid::uniform(0.0, 1.0, 5).unwrap());
        assert!(WaveformSamples::new(g.clone(), vec![Complex64::default(); 4]).is_err());
        assert_abs_diff_eq!(g.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }
}
