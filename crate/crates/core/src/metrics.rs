//! Separation quality in terms of the lagged correlation measure
//! `rho_bar(x, y) = max_{|k| <= K2} |rho(x(t), y(t - k))|`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::permutations;
use crate::error::{Error, Result};
use crate::signal_io::{partial_path, TimeSeries};
use crate::stats::rho_maxlag;

pub const DEFAULT_K2: usize = 20;

pub const CSV_HEADER: [&str; 6] = [
    "rho_bar_mixtures",
    "rho_bar_separated",
    "rho_bar_sources",
    "ratio_1",
    "ratio_2",
    "K2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rho_bar_mixtures: f64,
    pub rho_bar_separated: f64,
    pub rho_bar_sources: Option<f64>,
    /// `rho_bar(x, s1) / rho_bar(x, s2)` for the output matched to `s1`,
    /// then for the output matched to `s2`.
    pub ratios: Option<[f64; 2]>,
    /// `matching[i]` is the output channel matched to source `i`.
    pub matching: Option<Vec<usize>>,
    #[serde(rename = "K2")]
    pub k2: usize,
    /// Common length after trimming.
    pub samples: usize,
    /// Free-form context (configuration, seeds).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

fn two_channels(name: &str, s: &TimeSeries) -> Result<()> {
    if s.num_channels() != 2 {
        return Err(Error::InvalidInput(format!(
            "{name} need 2 channels, got {}",
            s.num_channels()
        )));
    }
    Ok(())
}

/// Compares separated outputs with the mixtures and, when given, the
/// sources. Signals are trimmed from the end to the shortest length.
pub fn evaluate(
    separated: &TimeSeries,
    mixtures: &TimeSeries,
    sources: Option<&TimeSeries>,
    k2: usize,
) -> Result<EvalReport> {
    two_channels("separated signals", separated)?;
    two_channels("mixtures", mixtures)?;
    if let Some(s) = sources {
        two_channels("sources", s)?;
    }
    let len = [Some(separated.len()), Some(mixtures.len()), sources.map(TimeSeries::len)]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(0);
    if len <= 2 * k2 + 1 {
        return Err(Error::TooShort { needed: 2 * k2 + 2, got: len });
    }
    if [separated.len(), mixtures.len()].iter().chain(sources.map(|s| s.len()).as_ref()).any(|&l| l != len) {
        log::info!("evaluation trims signals to {len} samples");
    }
    let cut = |s: &TimeSeries, i: usize| -> Vec<f64> { s.channel(i)[..len].to_vec() };
    let out = [cut(separated, 0), cut(separated, 1)];
    let mix = [cut(mixtures, 0), cut(mixtures, 1)];
    let rho_bar_mixtures = rho_maxlag(&mix[0], &mix[1], k2)?;
    let rho_bar_separated = rho_maxlag(&out[0], &out[1], k2)?;

    let (rho_bar_sources, ratios, matching) = match sources {
        None => (None, None, None),
        Some(s) => {
            let src = [cut(s, 0), cut(s, 1)];
            // table[x][j] = rho_bar(output x, source j)
            let mut table = [[0.0; 2]; 2];
            for (x, o) in out.iter().enumerate() {
                for (j, sj) in src.iter().enumerate() {
                    table[x][j] = rho_maxlag(o, sj, k2)?;
                }
            }
            let matching = permutations(2)
                .into_iter()
                .max_by(|a, b| {
                    let score = |m: &Vec<usize>| table[m[0]][0] + table[m[1]][1];
                    score(a).total_cmp(&score(b))
                })
                .unwrap_or_else(|| vec![0, 1]);
            let ratio = |x: usize| table[x][0] / table[x][1];
            (
                Some(rho_maxlag(&src[0], &src[1], k2)?),
                Some([ratio(matching[0]), ratio(matching[1])]),
                Some(matching),
            )
        }
    };
    Ok(EvalReport {
        rho_bar_mixtures,
        rho_bar_separated,
        rho_bar_sources,
        ratios,
        matching,
        k2,
        samples: len,
        metadata: serde_json::Value::Null,
    })
}

/// Decimal rendering with at least six significant digits.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.6}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    if magnitude < -6 {
        return format!("{v:.6e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

/// JSON twin of a CSV report path (`report.csv` -> `report.json`).
pub fn json_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = partial_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes the one-row CSV report and its JSON twin.
pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(format_sig).unwrap_or_default();
    w.write_record([
        format_sig(report.rho_bar_mixtures),
        format_sig(report.rho_bar_separated),
        opt(report.rho_bar_sources),
        opt(report.ratios.map(|r| r[0])),
        opt(report.ratios.map(|r| r[1])),
        report.k2.to_string(),
    ])?;
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))?;
    write_atomic(path, &bytes)?;
    write_atomic(&json_path(path), serde_json::to_string_pretty(report)?.as_bytes())
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
