//! CSV schemas, number formatting and the records reader.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::CliError;
use crate::channels::Channel;
use crate::estimator::{GroupSummary, RunEstimate};
use crate::information::FisherReport;
use crate::montecarlo::{DetectionRecord, RECORDED_MODES};

pub const FISHER_HEADER: &str = "tau,gamma,fi_s,fi_a,fi_total,qfi,fi_int_s,fi_int_a,fi_int_incoh,crb_per_event";
pub const RECORDS_HEADER: &str = "tau_true,gamma,run,channel,n,counts";
pub const ESTIMATES_HEADER: &str = "tau_true,gamma,run,tau_hat";
pub const STATS_HEADER: &str = "tau_true,gamma,n_runs,mean,variance,bias,variance_per_detection";
pub const FIGURE_HEADER: &str = "series,tau,value,err";

const SIG_DIGITS: usize = 12;

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `printf("%.12g")` formatting.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= SIG_DIGITS as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs())
    } else {
        let fixed = format!("{:.*}", (SIG_DIGITS as i32 - 1 - exp) as usize, x);
        trim_fraction(&fixed).to_string()
    }
}

fn opt_g(x: Option<f64>) -> String {
    x.map(fmt_g).unwrap_or_default()
}

pub fn fisher_csv(reports: &[FisherReport]) -> String {
    let mut out = format!("{FISHER_HEADER}\n");
    for r in reports {
        let cells = [
            r.tau,
            r.gamma,
            r.fi_s,
            r.fi_a,
            r.fi_total,
            r.qfi,
            r.fi_intensity_s,
            r.fi_intensity_a,
            r.fi_intensity_incoherent,
            r.crb_per_event,
        ];
        let line: Vec<String> = cells.iter().map(|&v| fmt_g(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// One row per run, channel and projection.
pub fn records_csv(records: &[DetectionRecord]) -> String {
    let mut out = format!("{RECORDS_HEADER}\n");
    for r in records {
        for channel in Channel::BOTH {
            for (n, c) in r.counts(channel).iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{n},{c}",
                    fmt_g(r.tau_true),
                    fmt_g(r.gamma),
                    r.run_index,
                    channel.label()
                );
            }
        }
    }
    out
}

pub fn estimates_csv(estimates: &[RunEstimate]) -> String {
    let mut out = format!("{ESTIMATES_HEADER}\n");
    for e in estimates {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_g(e.tau_true),
            fmt_g(e.gamma),
            e.run_index,
            fmt_g(e.tau_hat)
        );
    }
    out
}

/// Undefined variances are written as empty cells.
pub fn stats_csv(groups: &[GroupSummary]) -> String {
    let mut out = format!("{STATS_HEADER}\n");
    for g in groups {
        let s = &g.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_g(s.tau_true),
            fmt_g(s.gamma),
            s.n_runs,
            fmt_g(s.mean),
            opt_g(s.variance),
            fmt_g(s.bias),
            opt_g(s.variance_per_detection)
        );
    }
    out
}

/// Reassembles runs from a records table. Every run must list each channel
/// and projection exactly once.
pub fn parse_records(text: &str, origin: &str) -> Result<Vec<DetectionRecord>, CliError> {
    let bad = |line: usize, msg: &str| CliError::Data(format!("{origin} line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RECORDS_HEADER => {}
        _ => return Err(bad(1, &format!("expected header `{RECORDS_HEADER}`"))),
    }
    let mut records: Vec<(DetectionRecord, [bool; 2 * RECORDED_MODES])> = Vec::new();
    let mut index: HashMap<(u64, u64, usize), usize> = HashMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 6 {
            return Err(bad(lineno, "expected 6 columns"));
        }
        let num = |s: &str, what: &str| -> Result<f64, CliError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(lineno, &format!("invalid {what} {s:?}")))
        };
        let tau = num(cells[0], "tau_true")?;
        let gamma = num(cells[1], "gamma")?;
        let run: usize = cells[2].parse().map_err(|_| bad(lineno, "invalid run index"))?;
        let channel: Channel = cells[3].parse().map_err(|_| bad(lineno, "invalid channel"))?;
        let n: usize = cells[4].parse().map_err(|_| bad(lineno, "invalid projection index"))?;
        if n >= RECORDED_MODES {
            return Err(bad(lineno, "projection index out of range"));
        }
        let counts: u64 = cells[5].parse().map_err(|_| bad(lineno, "invalid count"))?;

        let key = (tau.to_bits(), gamma.to_bits(), run);
        let slot = *index.entry(key).or_insert_with(|| {
            records.push((
                DetectionRecord {
                    tau_true: tau,
                    gamma,
                    run_index: run,
                    counts_s: [0; RECORDED_MODES],
                    counts_a: [0; RECORDED_MODES],
                },
                [false; 2 * RECORDED_MODES],
            ));
            records.len() - 1
        });
        let (rec, seen) = &mut records[slot];
        let k = channel.index() * RECORDED_MODES + n;
        if seen[k] {
            return Err(bad(lineno, "duplicate cell"));
        }
        seen[k] = true;
        match channel {
            Channel::Symmetric => rec.counts_s[n] = counts,
            Channel::Antisymmetric => rec.counts_a[n] = counts,
        }
    }
    records
        .into_iter()
        .map(|(rec, seen)| {
            if seen.iter().all(|&s| s) {
                Ok(rec)
            } else {
                Err(CliError::Data(format!(
                    "{origin}: run {} at tau = {}, gamma = {} is incomplete",
                    rec.run_index, rec.tau_true, rec.gamma
                )))
            }
        })
        .collect()
}
