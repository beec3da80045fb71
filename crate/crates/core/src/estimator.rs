//! Separation estimator: per-setting calibration of the mean projection
//! responses by quartic polynomials in `tau`, followed by a
//! nonnegativity-constrained generalized least-squares fit of each run.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::channels::{Channel, CoherenceParam};
use crate::montecarlo::{run_phase, DetectionRecord, ExperimentConfig, Phase, RECORDED_MODES};

pub const POLY_DEGREE: usize = 4;
const POLY_LEN: usize = POLY_DEGREE + 1;
/// Distinct calibration separations needed to pin a quartic.
pub const MIN_CALIBRATION_POINTS: usize = POLY_LEN;
/// Records whose `tau`/`gamma` differ by less than this belong to the same grid point.
pub const GRID_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("calibration needs at least {MIN_CALIBRATION_POINTS} distinct separations, got {0}")]
    TooFewPoints(usize),
    #[error("calibration design matrix is singular")]
    Singular,
    #[error("no calibration records for gamma = {0}")]
    MissingCalibration(f64),
    #[error("record at tau = {tau}, gamma = {gamma} does not match the configured grid")]
    GridMismatch { tau: f64, gamma: f64 },
    #[error("grid point tau = {tau}, gamma = {gamma} has no records")]
    EmptyGroup { tau: f64, gamma: f64 },
}

/// Polynomial with ascending coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polynomial {
    pub coeffs: [f64; POLY_LEN],
}

impl Polynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// Fitted mean response of every recorded projection for one coherence setting.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    pub gamma: f64,
    pub tau_grid: Vec<f64>,
    /// Indexed `[channel][mode]`, in units of the expected detections per run.
    pub curves: [[Polynomial; RECORDED_MODES]; 2],
    pub residual_rms: [[f64; RECORDED_MODES]; 2],
    pub mean_detections: f64,
}

impl CalibrationModel {
    /// Model means for all recorded projections, `s` modes first.
    pub fn means(&self, tau: f64) -> [f64; 2 * RECORDED_MODES] {
        let mut out = [0.0; 2 * RECORDED_MODES];
        for (c, row) in self.curves.iter().enumerate() {
            for (n, poly) in row.iter().enumerate() {
                out[c * RECORDED_MODES + n] = poly.eval(tau);
            }
        }
        out
    }
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() < GRID_MATCH_TOL
}

/// Least-squares quartic through `(x, y)`.
pub fn fit_polynomial(x: &[f64], y: &[f64]) -> Result<Polynomial, EstimatorError> {
    let design = DMatrix::from_fn(x.len(), POLY_LEN, |i, j| x[i].powi(j as i32));
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(max_sv > 0.0) || min_sv / max_sv < 1e-12 {
        return Err(EstimatorError::Singular);
    }
    let sol = svd
        .solve(&DVector::from_column_slice(y), 0.0)
        .map_err(|_| EstimatorError::Singular)?;
    let mut coeffs = [0.0; POLY_LEN];
    coeffs.copy_from_slice(sol.as_slice());
    Ok(Polynomial { coeffs })
}

/// Fits the mean normalized counts of each projection against `tau`.
///
/// Only records at `gamma` are used. Counts are divided by `mean_detections`
/// so the curves are in probability units.
pub fn calibrate(
    records: &[DetectionRecord],
    gamma: CoherenceParam,
    mean_detections: f64,
) -> Result<CalibrationModel, EstimatorError> {
    let g = gamma.value();
    let mut taus: Vec<f64> = Vec::new();
    let mut sums: Vec<([f64; 2 * RECORDED_MODES], usize)> = Vec::new();
    for r in records.iter().filter(|r| same(r.gamma, g)) {
        let idx = match taus.iter().position(|&t| same(t, r.tau_true)) {
            Some(i) => i,
            None => {
                taus.push(r.tau_true);
                sums.push(([0.0; 2 * RECORDED_MODES], 0));
                taus.len() - 1
            }
        };
        let (acc, count) = &mut sums[idx];
        for (k, &c) in r.counts_s.iter().chain(&r.counts_a).enumerate() {
            acc[k] += c as f64;
        }
        *count += 1;
    }
    if taus.is_empty() {
        return Err(EstimatorError::MissingCalibration(g));
    }
    if taus.len() < MIN_CALIBRATION_POINTS {
        return Err(EstimatorError::TooFewPoints(taus.len()));
    }
    let means: Vec<[f64; 2 * RECORDED_MODES]> = sums
        .iter()
        .map(|(acc, count)| acc.map(|v| v / (*count as f64 * mean_detections)))
        .collect();

    let unit = Polynomial {
        coeffs: [0.0; POLY_LEN],
    };
    let mut curves = [[unit; RECORDED_MODES]; 2];
    let mut residual_rms = [[0.0; RECORDED_MODES]; 2];
    for channel in Channel::BOTH {
        for n in 0..RECORDED_MODES {
            let k = channel.index() * RECORDED_MODES + n;
            let y: Vec<f64> = means.iter().map(|m| m[k]).collect();
            let poly = fit_polynomial(&taus, &y)?;
            let ss: f64 = taus
                .iter()
                .zip(&y)
                .map(|(&t, &v)| (poly.eval(t) - v).powi(2))
                .sum();
            curves[channel.index()][n] = poly;
            residual_rms[channel.index()][n] = (ss / taus.len() as f64).sqrt();
        }
    }
    let mut tau_grid = taus;
    tau_grid.sort_by(f64::total_cmp);
    Ok(CalibrationModel {
        gamma: g,
        tau_grid,
        curves,
        residual_rms,
        mean_detections,
    })
}

/// Search settings for the constrained fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlsOptions {
    /// Upper end of the search interval `[0, tau_max]`.
    pub tau_max: f64,
    pub grid_points: usize,
    /// Weighted passes after the unweighted pilot fit.
    pub weighted_passes: usize,
}

impl Default for GlsOptions {
    fn default() -> Self {
        Self {
            tau_max: 2.0,
            grid_points: 1001,
            weighted_passes: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEstimate {
    pub tau_hat: f64,
    /// The run registered no counts at all.
    pub low_information: bool,
}

fn objective(cal: &CalibrationModel, counts: &[f64; 2 * RECORDED_MODES], weights: &[f64; 2 * RECORDED_MODES], tau: f64) -> f64 {
    let means = cal.means(tau);
    counts
        .iter()
        .zip(&means)
        .zip(weights)
        .map(|((c, m), w)| w * (c - m).powi(2))
        .sum()
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Brent minimization on `[lo, hi]`: successive parabolic steps with golden-section fallback.
fn brent_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, start: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let (mut x, mut w, mut v) = (start, start, start);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-14;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    // the bracket endpoints may beat the interior point when the minimum sits on the boundary
    [lo, x, hi]
        .into_iter()
        .map(|t| (t, f(t)))
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .map(|p| p.0)
        .unwrap_or(x)
}

fn minimize(cal: &CalibrationModel, counts: &[f64; 2 * RECORDED_MODES], weights: &[f64; 2 * RECORDED_MODES], opts: &GlsOptions) -> f64 {
    let n = opts.grid_points.max(3);
    let at = |i: usize| opts.tau_max * i as f64 / (n - 1) as f64;
    let (best, _) = (0..n)
        .map(|i| (i, objective(cal, counts, weights, at(i))))
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .expect("nonempty grid");
    let lo = at(best.saturating_sub(1));
    let hi = at((best + 1).min(n - 1));
    brent_min(|t| objective(cal, counts, weights, t), lo, hi, at(best), 1e-10)
}

/// Constrained GLS estimate of `tau >= 0` for one run.
pub fn estimate_gls(record: &DetectionRecord, cal: &CalibrationModel) -> TauEstimate {
    estimate_gls_with(record, cal, &GlsOptions::default())
}

/// Pilot fit with unit weights, then weights `1 / m_k(tau_pilot)` (Poisson
/// variance in normalized units, floored at one expected count).
pub fn estimate_gls_with(record: &DetectionRecord, cal: &CalibrationModel, opts: &GlsOptions) -> TauEstimate {
    if record.total() == 0 {
        return TauEstimate {
            tau_hat: 0.0,
            low_information: true,
        };
    }
    let mut counts = [0.0; 2 * RECORDED_MODES];
    for (k, &c) in record.counts_s.iter().chain(&record.counts_a).enumerate() {
        counts[k] = c as f64 / cal.mean_detections;
    }
    let floor = 1.0 / cal.mean_detections;
    let mut weights = [1.0; 2 * RECORDED_MODES];
    let mut tau = minimize(cal, &counts, &weights, opts);
    for _ in 0..opts.weighted_passes {
        let means = cal.means(tau);
        for (w, m) in weights.iter_mut().zip(&means) {
            *w = 1.0 / m.max(floor);
        }
        tau = minimize(cal, &counts, &weights, opts);
    }
    TauEstimate {
        tau_hat: tau.max(0.0),
        low_information: false,
    }
}

/// Summary of the estimates at one `(tau, gamma)` grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateStats {
    pub tau_true: f64,
    pub gamma: f64,
    pub n_runs: usize,
    pub mean: f64,
    /// Unbiased sample variance; absent for a single run.
    pub variance: Option<f64>,
    pub bias: f64,
    /// `variance x detections per run`.
    pub variance_per_detection: Option<f64>,
    /// Mean total counts per run used for the normalization.
    pub detections_per_run: f64,
}

impl EstimateStats {
    pub fn std_dev(&self) -> Option<f64> {
        self.variance.map(f64::sqrt)
    }
}

pub fn aggregate(
    tau_true: f64,
    gamma: f64,
    estimates: &[f64],
    detections_per_run: f64,
) -> Result<EstimateStats, EstimatorError> {
    let n = estimates.len();
    if n == 0 {
        return Err(EstimatorError::EmptyGroup { tau: tau_true, gamma });
    }
    let mean = estimates.iter().sum::<f64>() / n as f64;
    let variance = (n > 1).then(|| {
        estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    });
    Ok(EstimateStats {
        tau_true,
        gamma,
        n_runs: n,
        mean,
        variance,
        bias: mean - tau_true,
        variance_per_detection: variance.map(|v| v * detections_per_run),
        detections_per_run,
    })
}

/// Where calibration data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationSource {
    /// Independent calibration runs drawn from their own random streams.
    Fresh { repetitions: usize },
    /// The measured records themselves.
    Reuse,
}

impl Default for CalibrationSource {
    fn default() -> Self {
        CalibrationSource::Fresh { repetitions: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalysisOptions {
    pub calibration: CalibrationSource,
    pub gls: GlsOptions,
}

/// One estimate per input record, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEstimate {
    pub tau_true: f64,
    pub gamma: f64,
    pub run_index: usize,
    pub tau_hat: f64,
    pub low_information: bool,
}

#[derive(Debug, Clone)]
pub struct GroupSummary {
    pub stats: EstimateStats,
    /// Mean antisymmetric-channel counts per run.
    pub a_detections_per_run: f64,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub calibrations: Vec<CalibrationModel>,
    pub estimates: Vec<RunEstimate>,
    /// In grid order: tau outer, gamma inner.
    pub groups: Vec<GroupSummary>,
}

impl Analysis {
    pub fn group(&self, tau: f64, gamma: f64) -> Option<&GroupSummary> {
        self.groups
            .iter()
            .find(|g| same(g.stats.tau_true, tau) && same(g.stats.gamma, gamma))
    }
}

/// Calibrates every coherence setting, estimates every record and aggregates
/// per grid point.
pub fn analyze(
    config: &ExperimentConfig,
    records: &[DetectionRecord],
    options: &AnalysisOptions,
) -> Result<Analysis, EstimatorError> {
    let tau_index = |t: f64| config.tau_grid.iter().position(|g| same(g.value(), t));
    let gamma_index = |x: f64| config.gammas.iter().position(|g| same(g.value(), x));
    for r in records {
        if tau_index(r.tau_true).is_none() || gamma_index(r.gamma).is_none() {
            return Err(EstimatorError::GridMismatch {
                tau: r.tau_true,
                gamma: r.gamma,
            });
        }
    }

    let fresh;
    let cal_records: &[DetectionRecord] = match options.calibration {
        CalibrationSource::Reuse => records,
        CalibrationSource::Fresh { repetitions } => {
            fresh = run_phase(config, Phase::Calibration, repetitions.max(1));
            &fresh
        }
    };
    let calibrations = config
        .gammas
        .iter()
        .map(|&g| calibrate(cal_records, g, config.mean_total_detections))
        .collect::<Result<Vec<_>, _>>()?;

    let estimates: Vec<RunEstimate> = records
        .par_iter()
        .map(|r| {
            let cal = &calibrations[gamma_index(r.gamma).expect("checked above")];
            let est = estimate_gls_with(r, cal, &options.gls);
            RunEstimate {
                tau_true: r.tau_true,
                gamma: r.gamma,
                run_index: r.run_index,
                tau_hat: est.tau_hat,
                low_information: est.low_information,
            }
        })
        .collect();

    let mut groups = Vec::with_capacity(config.tau_grid.len() * config.gammas.len());
    for tau in &config.tau_grid {
        for gamma in &config.gammas {
            let (t, g) = (tau.value(), gamma.value());
            let members: Vec<usize> = (0..records.len())
                .filter(|&i| same(records[i].tau_true, t) && same(records[i].gamma, g))
                .collect();
            let hats: Vec<f64> = members.iter().map(|&i| estimates[i].tau_hat).collect();
            let runs = members.len().max(1) as f64;
            let total = members.iter().map(|&i| records[i].total() as f64).sum::<f64>() / runs;
            let a_total = members
                .iter()
                .map(|&i| records[i].counts_a.iter().sum::<u64>() as f64)
                .sum::<f64>()
                / runs;
            groups.push(GroupSummary {
                stats: aggregate(t, g, &hats, total)?,
                a_detections_per_run: a_total,
            });
        }
    }
    Ok(Analysis {
        calibrations,
        estimates,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{ideal_probs, DeviceModel};
    use crate::montecarlo::RateModel;
    use approx::assert_abs_diff_eq;

    /// Records whose counts equal the expected counts (rounded), one per grid point.
    fn noiseless_records(config: &ExperimentConfig, gamma: CoherenceParam, scale: f64) -> Vec<DetectionRecord> {
        let model = RateModel::new(config);
        config
            .tau_grid
            .iter()
            .map(|t| {
                let (rs, ra) = model.rates(t.value(), gamma, 0.0);
                DetectionRecord {
                    tau_true: t.value(),
                    gamma: gamma.value(),
                    run_index: 0,
                    counts_s: rs.map(|r| (r * scale).round() as u64),
                    counts_a: ra.map(|r| (r * scale).round() as u64),
                }
            })
            .collect()
    }

    fn ideal_config() -> ExperimentConfig {
        ExperimentConfig {
            device: DeviceModel::ideal(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn polynomial_fit_recovers_quartic() {
        let x: Vec<f64> = (0..7).map(|i| i as f64 / 6.0).collect();
        let truth = Polynomial { coeffs: [0.5, -1.0, 0.25, 2.0, -0.75] };
        let y: Vec<f64> = x.iter().map(|&t| truth.eval(t)).collect();
        let fit = fit_polynomial(&x, &y).unwrap();
        for (a, b) in fit.coeffs.iter().zip(truth.coeffs) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_response_fits_constant() {
        let x: Vec<f64> = (0..7).map(|i| i as f64 / 6.0).collect();
        let fit = fit_polynomial(&x, &[0.3; 7]).unwrap();
        assert_abs_diff_eq!(fit.coeffs[0], 0.3, epsilon = 1e-12);
        for c in &fit.coeffs[1..] {
            assert_abs_diff_eq!(*c, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn too_few_or_degenerate_points() {
        let c = ideal_config();
        let mut recs = noiseless_records(&c, CoherenceParam::COHERENT, 1e12);
        recs.truncate(4);
        assert_eq!(
            calibrate(&recs, CoherenceParam::COHERENT, 1e12),
            Err(EstimatorError::TooFewPoints(4))
        );
        assert_eq!(
            calibrate(&recs, CoherenceParam::INCOHERENT, 1e12),
            Err(EstimatorError::MissingCalibration(0.5))
        );
        assert_eq!(fit_polynomial(&[0.0, 0.0, 0.0, 0.0, 0.0], &[1.0; 5]), Err(EstimatorError::Singular));
    }

    #[test]
    fn noiseless_calibration_tracks_closed_form() {
        let c = ideal_config();
        let scale = 1e15;
        let recs = noiseless_records(&c, CoherenceParam::COHERENT, scale);
        let cal = calibrate(&recs, CoherenceParam::COHERENT, scale).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=100 {
            let tau = i as f64 / 100.0;
            let p1 = ideal_probs(&c.spec, tau).1.probs[1];
            worst = worst.max((cal.curves[1][1].eval(tau) - p1).abs());
        }
        // quartic truncation of x e^{-x} with x = tau^2 / 16 on [0, 1]
        assert!(worst < 2e-6, "max deviation {worst}");
    }

    #[test]
    fn exact_counts_recover_separation() {
        let c = ExperimentConfig {
            tau_grid: [0.0, 0.1, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0]
                .iter()
                .map(|&t| crate::pulse_model::TimeOffset::new(t).unwrap())
                .collect(),
            ..ideal_config()
        };
        let scale = 1e15;
        let recs = noiseless_records(&c, CoherenceParam::COHERENT, scale);
        let cal = calibrate(&recs, CoherenceParam::COHERENT, scale).unwrap();
        // counts equal to the calibrated means
        let means = cal.means(0.5);
        let rec = DetectionRecord {
            tau_true: 0.5,
            gamma: 0.0,
            run_index: 0,
            counts_s: [0, 1, 2, 3].map(|k| (means[k].max(0.0) * scale).round() as u64),
            counts_a: [4, 5, 6, 7].map(|k| (means[k].max(0.0) * scale).round() as u64),
        };
        let est = estimate_gls(&rec, &cal);
        assert!(!est.low_information);
        assert_abs_diff_eq!(est.tau_hat, 0.5, epsilon = 1e-6);

        let off_grid = cal.means(0.3337);
        let rec = DetectionRecord {
            counts_s: [0, 1, 2, 3].map(|k| (off_grid[k].max(0.0) * scale).round() as u64),
            counts_a: [4, 5, 6, 7].map(|k| (off_grid[k].max(0.0) * scale).round() as u64),
            ..rec
        };
        assert_abs_diff_eq!(estimate_gls(&rec, &cal).tau_hat, 0.3337, epsilon = 1e-6);
    }

    #[test]
    fn empty_run_is_flagged() {
        let c = ideal_config();
        let recs = noiseless_records(&c, CoherenceParam::COHERENT, 1e9);
        let cal = calibrate(&recs, CoherenceParam::COHERENT, 1e9).unwrap();
        let rec = DetectionRecord {
            tau_true: 0.2,
            gamma: 0.0,
            run_index: 0,
            counts_s: [0; 4],
            counts_a: [0; 4],
        };
        assert_eq!(
            estimate_gls(&rec, &cal),
            TauEstimate { tau_hat: 0.0, low_information: true }
        );
    }

    #[test]
    fn aggregate_edge_cases() {
        let single = aggregate(0.3, 0.0, &[0.31], 1e4).unwrap();
        assert_eq!(single.variance, None);
        assert_eq!(single.variance_per_detection, None);
        assert_abs_diff_eq!(single.bias, 0.01, epsilon = 1e-15);
        let same = aggregate(0.3, 0.0, &[0.2; 5], 1e4).unwrap();
        assert_eq!(same.variance, Some(0.0));
        let v = aggregate(0.0, 0.0, &[1.0, 2.0, 3.0], 10.0).unwrap();
        assert_eq!(v.variance, Some(1.0));
        assert_eq!(v.variance_per_detection, Some(10.0));
        assert!(aggregate(0.0, 0.0, &[], 1.0).is_err());
    }

    #[test]
    fn brent_finds_interior_and_boundary_minima() {
        let x = brent_min(|t| (t - 0.37).powi(2), 0.0, 1.0, 0.5, 1e-12);
        assert_abs_diff_eq!(x, 0.37, epsilon = 1e-9);
        let x = brent_min(|t| (t + 0.2).powi(2), 0.0, 1.0, 0.5, 1e-12);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn analysis_rejects_foreign_records() {
        let c = ExperimentConfig { repetitions: 2, ..ExperimentConfig::default() };
        let mut recs = crate::montecarlo::run_experiment(&c);
        recs[3].tau_true = 0.15;
        let err = analyze(&c, &recs, &AnalysisOptions::default()).unwrap_err();
        assert!(matches!(err, EstimatorError::GridMismatch { .. }));
    }
}
