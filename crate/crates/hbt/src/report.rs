//! Plot-ready CSV tables and TOML reports, with parsers for each.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hbt_core::calibration::{ExtinctionBudget, PowerFit, PowerScanPoint};
use hbt_core::correlator::{CorrelationHistogram, G2Report, RateSet, SidePeaks};
use hbt_core::Measured;

use crate::config::BackgroundMode;
use crate::error::{CliError, Result};

fn parse_err(path: &Path, offset: u64, message: impl Into<String>) -> CliError {
    CliError::Parse { path: path.to_owned(), offset, message: message.into() }
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(bytes)
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let offset = e.position().map_or(0, |p| p.byte());
    parse_err(path, offset, e.to_string())
}

/// `# key=value` comment lines ahead of a CSV body.
fn header_values(text: &str) -> impl Iterator<Item = (&str, &str)> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l[1..].trim().split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
}

pub fn histogram_csv(h: &CorrelationHistogram) -> String {
    let mut s = String::with_capacity(32 + 20 * h.counts.len());
    writeln!(s, "# bin_width_ps={}", h.bin_width_ps).unwrap();
    writeln!(s, "# tau_min_ps={}", h.tau_min_ps).unwrap();
    writeln!(s, "# tau_max_ps={}", h.tau_max_ps).unwrap();
    s.push_str("tau_ps,count\n");
    for (b, c) in h.counts.iter().enumerate() {
        writeln!(s, "{},{c}", h.bin_start(b)).unwrap();
    }
    s
}

pub fn parse_histogram_csv(bytes: &[u8], path: &Path) -> Result<CorrelationHistogram> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(path, e.valid_up_to() as u64, "not valid UTF-8"))?;
    let (mut width, mut lo, mut hi) = (None, None, None);
    for (k, v) in header_values(text) {
        let bad = || parse_err(path, 0, format!("bad header value `{v}` for {k}"));
        match k {
            "bin_width_ps" => width = Some(v.parse::<u64>().map_err(|_| bad())?),
            "tau_min_ps" => lo = Some(v.parse::<i64>().map_err(|_| bad())?),
            "tau_max_ps" => hi = Some(v.parse::<i64>().map_err(|_| bad())?),
            _ => {}
        }
    }
    let (Some(bin_width_ps), Some(tau_min_ps), Some(tau_max_ps)) = (width, lo, hi) else {
        return Err(parse_err(path, 0, "missing bin_width_ps / tau_min_ps / tau_max_ps header"));
    };
    #[derive(Deserialize)]
    struct Row {
        tau_ps: i64,
        count: u64,
    }
    let mut hist = CorrelationHistogram { bin_width_ps, tau_min_ps, tau_max_ps, counts: Vec::new() };
    let mut rdr = csv_reader(bytes);
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.tau_ps != hist.bin_start(hist.counts.len()) {
            return Err(parse_err(path, 0, format!("row tau_ps={} is out of sequence", row.tau_ps)));
        }
        hist.counts.push(row.count);
    }
    hist.validate()?;
    Ok(hist)
}

/// One integrated peak; `k = 0` is the zero-delay peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub k: i64,
    pub center_ps: i64,
    pub count: u64,
}

pub fn peak_rows(c0: u64, side: &SidePeaks, rep_period_ps: u64) -> Vec<PeakRow> {
    let mut rows: Vec<PeakRow> =
        side.peaks.iter().map(|&(k, count)| PeakRow { k, center_ps: k * rep_period_ps as i64, count }).collect();
    rows.push(PeakRow { k: 0, center_ps: 0, count: c0 });
    rows.sort_by_key(|r| r.k);
    rows
}

pub fn rows_csv<T: Serialize>(rows: &[T], comments: &[String]) -> String {
    let mut s = String::new();
    for c in comments {
        writeln!(s, "# {c}").unwrap();
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    s.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory writer")).expect("utf-8"));
    s
}

pub fn parse_rows<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> Result<Vec<T>> {
    csv_reader(bytes).deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

/// Everything `correlate` reports besides the histogram itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationReport {
    pub stream_hash: Option<String>,
    pub background_mode: BackgroundMode,
    pub t_exp_s: f64,
    pub rep_period_ps: u64,
    pub bin_width_ps: u64,
    pub peak_half_width_ps: u64,
    pub gated_tags: u64,
    pub side_peak_dispersion: Option<f64>,
    pub rates: Option<RateSet>,
    pub g2: G2Report,
    pub multiphoton_bound: Option<f64>,
}

impl CorrelationReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("report: {e}")))
    }
}

/// One row of the ion-number scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: u32,
    pub g2: f64,
    pub g2_err: f64,
    pub prediction: f64,
    pub c0: u64,
    pub c_tau: f64,
    pub c_b: f64,
}

impl ScanRow {
    pub fn pull(&self) -> f64 {
        (self.g2 - self.prediction) / self.g2_err
    }
}

/// Power-scan table rows: `rep_rate_hz,avg_power_w[,sigma_w]`.
pub fn parse_power_scan(bytes: &[u8], path: &Path) -> Result<Vec<PowerScanPoint>> {
    #[derive(Deserialize)]
    struct Row {
        rep_rate_hz: f64,
        avg_power_w: f64,
        #[serde(default)]
        sigma_w: Option<f64>,
    }
    let rows: Vec<Row> = parse_rows(bytes, path)?;
    Ok(rows.into_iter().map(|r| PowerScanPoint { rep_rate_hz: r.rep_rate_hz, avg_power_w: r.avg_power_w, sigma_w: r.sigma_w }).collect())
}

pub fn power_scan_csv(points: &[PowerScanPoint]) -> String {
    let mut s = String::from("rep_rate_hz,avg_power_w,sigma_w\n");
    for p in points {
        let sigma = p.sigma_w.map(|v| v.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{sigma}", p.rep_rate_hz, p.avg_power_w).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseChainReport {
    pub fit: PowerFit,
    pub peak_power_w: f64,
    pub pulse_fwhm_ps: f64,
    pub measured_extinction_db: f64,
    pub aom_improvement_db: f64,
    pub budget: ExtinctionBudget,
}

impl PulseChainReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

/// `value ± err` with a fixed number of significant digits.
pub fn fmt_measured(m: &Measured) -> String {
    format!("{:.4e} ± {:.2e}", m.value, m.err)
}
