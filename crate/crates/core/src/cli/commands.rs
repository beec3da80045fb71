use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{load_config, Settings};
use super::manifest::{FileDigest, OutputDir, RunManifest};
use super::output::{estimates_csv, fisher_csv, parse_records, records_csv, stats_csv};
use super::svg::{render, Plot, Series, Style};
use super::{CliError, CommonArgs, Figure};
use crate::channels::CoherenceParam;
use crate::estimator::{analyze, Analysis, EstimatorError};
use crate::information::{quantum_crb, FisherCalculator, FisherReport};
use crate::montecarlo::{run_experiment, DetectionRecord};
use crate::pulse_model::{QuadratureGrid, TimeOffset, DEFAULT_TAU_MAX};

pub const FISHER_FILE: &str = "fisher_report.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const STATS_FILE: &str = "stats.csv";

/// Points on the dense separation grid used for the bound curves.
const BOUND_POINTS: usize = 40;
const BOUND_TAU_MIN: f64 = 0.05;

pub fn settings(common: &CommonArgs) -> Result<Settings, CliError> {
    let mut s = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        s.experiment.master_seed = seed;
    }
    Ok(s)
}

fn calculator(s: &Settings) -> Result<FisherCalculator, CliError> {
    let spec = s.experiment.spec;
    let grid = QuadratureGrid::standard(&spec, s.experiment.tau_max().max(DEFAULT_TAU_MAX));
    FisherCalculator::new(spec, grid, s.fisher_step).map_err(|e| CliError::Config(e.to_string()))
}

pub fn fisher_reports(s: &Settings) -> Result<Vec<FisherReport>, CliError> {
    let calc = calculator(s)?;
    let points: Vec<(TimeOffset, CoherenceParam)> = s
        .experiment
        .tau_grid
        .iter()
        .flat_map(|&t| s.experiment.gammas.iter().map(move |&g| (t, g)))
        .collect();
    points
        .par_iter()
        .map(|&(t, g)| calc.report(t, g))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Data(e.to_string()))
}

pub fn fisher(common: &CommonArgs) -> Result<Vec<PathBuf>, CliError> {
    let s = settings(common)?;
    let reports = fisher_reports(&s)?;
    let mut out = OutputDir::create(&common.out, RunManifest::new("fisher", &s))?;
    let csv = out.write(FISHER_FILE, &fisher_csv(&reports))?;
    Ok(vec![csv, out.finish()?])
}

pub fn simulate(common: &CommonArgs) -> Result<Vec<PathBuf>, CliError> {
    let s = settings(common)?;
    let records = run_experiment(&s.experiment);
    let mut out = OutputDir::create(&common.out, RunManifest::new("simulate", &s))?;
    let csv = out.write(RECORDS_FILE, &records_csv(&records))?;
    Ok(vec![csv, out.finish()?])
}

fn analysis_error(e: EstimatorError) -> CliError {
    match e {
        EstimatorError::TooFewPoints(_) | EstimatorError::Singular => {
            CliError::Config(format!("tau_grid: {e}"))
        }
        _ => CliError::Data(e.to_string()),
    }
}

pub fn analyze_records(s: &Settings, records: &[DetectionRecord]) -> Result<Analysis, CliError> {
    analyze(&s.experiment, records, &s.analysis).map_err(analysis_error)
}

pub fn estimate(records_path: &Path, common: &CommonArgs) -> Result<Vec<PathBuf>, CliError> {
    let s = settings(common)?;
    let text = std::fs::read_to_string(records_path).map_err(|e| CliError::io(records_path, e))?;
    let records = parse_records(&text, &records_path.display().to_string())?;
    let analysis = analyze_records(&s, &records)?;
    let mut manifest = RunManifest::new("estimate", &s);
    manifest
        .inputs
        .push(FileDigest::of(&records_path.display().to_string(), text.as_bytes()));
    let mut out = OutputDir::create(&common.out, manifest)?;
    let est = out.write(ESTIMATES_FILE, &estimates_csv(&analysis.estimates))?;
    let stats = out.write(STATS_FILE, &stats_csv(&analysis.groups))?;
    Ok(vec![est, stats, out.finish()?])
}

fn gamma_label(g: f64) -> String {
    format!("gamma={}", super::output::fmt_g(g))
}

fn bound_taus(s: &Settings) -> Vec<f64> {
    let hi = s.experiment.tau_max().max(2.0 * BOUND_TAU_MIN);
    (0..BOUND_POINTS)
        .map(|i| BOUND_TAU_MIN + (hi - BOUND_TAU_MIN) * i as f64 / (BOUND_POINTS - 1) as f64)
        .collect()
}

/// `(tau, quantum bound, intensity-only bound)` on the dense grid, per detection.
fn bound_curves(s: &Settings) -> Result<Vec<(f64, f64, f64)>, CliError> {
    let calc = calculator(s)?;
    let q = quantum_crb(&s.experiment.spec);
    bound_taus(s)
        .par_iter()
        .map(|&t| {
            calc.incoherent_intensity_fi(t)
                .map(|f| (t, q, 1.0 / f))
                .map_err(|e| CliError::Data(e.to_string()))
        })
        .collect()
}

fn line(name: &str, points: Vec<(f64, f64)>) -> Series {
    Series {
        name: name.to_string(),
        style: Style::Line,
        points: points.into_iter().map(|(x, y)| (x, y, None)).collect(),
    }
}

/// Builds the plot for one figure. Each figure fixes its own coherence settings.
pub fn figure_plot(figure: Figure, base: &Settings) -> Result<Plot, CliError> {
    let mut s = base.clone();
    let gammas: &[f64] = match figure {
        Figure::Fig2 => &[0.0, 0.25, 0.5],
        Figure::Fig3 => &[0.0, 0.125, 0.25, 0.375, 0.5],
        Figure::Fig4 => &[0.0],
    };
    s.experiment.gammas = gammas
        .iter()
        .map(|&g| CoherenceParam::new(g).expect("in range"))
        .collect();
    let records = run_experiment(&s.experiment);
    let analysis = analyze_records(&s, &records)?;

    let plot = match figure {
        Figure::Fig2 => {
            let mut series: Vec<Series> = gammas
                .iter()
                .map(|&g| Series {
                    name: gamma_label(g),
                    style: Style::Points,
                    points: analysis
                        .groups
                        .iter()
                        .filter(|gr| gr.stats.gamma == g)
                        .map(|gr| (gr.stats.tau_true, gr.stats.mean, gr.stats.std_dev()))
                        .collect(),
                })
                .collect();
            let hi = s.experiment.tau_max();
            series.push(line("diagonal", vec![(0.0, 0.0), (hi, hi)]));
            Plot {
                title: "Estimated versus true separation".into(),
                x_label: "tau / sigma_t".into(),
                y_label: "mean tau_hat / sigma_t".into(),
                log_y: false,
                series,
            }
        }
        Figure::Fig3 => {
            let mut series: Vec<Series> = gammas
                .iter()
                .map(|&g| Series {
                    name: gamma_label(g),
                    style: Style::Points,
                    points: analysis
                        .groups
                        .iter()
                        .filter(|gr| gr.stats.gamma == g)
                        .filter_map(|gr| {
                            let v = gr.stats.variance_per_detection?;
                            let n = gr.stats.n_runs as f64;
                            Some((gr.stats.tau_true, v, Some(v * (2.0 / (n - 1.0)).sqrt())))
                        })
                        .collect(),
                })
                .collect();
            let bounds = bound_curves(&s)?;
            series.push(line("quantum_crb", bounds.iter().map(|b| (b.0, b.1)).collect()));
            series.push(line("intensity_crb", bounds.iter().map(|b| (b.0, b.2)).collect()));
            Plot {
                title: "Estimator variance per detection".into(),
                x_label: "tau / sigma_t".into(),
                y_label: "variance x detections / sigma_t^2".into(),
                log_y: true,
                series,
            }
        }
        Figure::Fig4 => {
            let per = |resource: &dyn Fn(&crate::estimator::GroupSummary) -> f64| -> Vec<(f64, f64, Option<f64>)> {
                analysis
                    .groups
                    .iter()
                    .filter_map(|gr| {
                        let v = gr.stats.variance?;
                        let n = gr.stats.n_runs as f64;
                        let e = (v * resource(gr)).sqrt();
                        Some((gr.stats.tau_true, e, Some(e / (2.0 * (n - 1.0)).sqrt())))
                    })
                    .collect()
            };
            let bounds = bound_curves(&s)?;
            Plot {
                title: "Estimation error per detection, gamma = 0".into(),
                x_label: "tau / sigma_t".into(),
                y_label: "error x sqrt(detections) / sigma_t".into(),
                log_y: true,
                series: vec![
                    Series {
                        name: "per_total_detection".into(),
                        style: Style::Points,
                        points: per(&|gr| gr.stats.detections_per_run),
                    },
                    Series {
                        name: "per_a_detection".into(),
                        style: Style::Points,
                        points: per(&|gr| gr.a_detections_per_run),
                    },
                    line("quantum_crb", bounds.iter().map(|b| (b.0, b.1.sqrt())).collect()),
                    line("intensity_crb", bounds.iter().map(|b| (b.0, b.2.sqrt())).collect()),
                ],
            }
        }
    };
    Ok(plot)
}

pub fn reproduce(figure: Figure, common: &CommonArgs, svg: bool) -> Result<Vec<PathBuf>, CliError> {
    let s = settings(common)?;
    let plot = figure_plot(figure, &s)?;
    let id = figure.id();
    let mut out = OutputDir::create(&common.out, RunManifest::new(&format!("reproduce-{id}"), &s))?;
    let mut written = vec![out.write(&format!("{id}.csv"), &plot.to_csv())?];
    if svg {
        written.push(out.write(&format!("{id}.svg"), &render(&plot))?);
    }
    written.push(out.finish()?);
    Ok(written)
}
