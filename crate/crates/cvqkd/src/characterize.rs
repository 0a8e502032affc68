//! Statistical characterization of source traces: phase uniformity,
//! autocorrelation, and intensity stability, with CSV trace ingestion.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::source::{phase_from_hybrid, HybridReading};
use crate::stats::chi_square_uniform;

#[derive(Debug, Error)]
pub enum CharacterizeError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unrecognized header {header:?}; expected t_s,i1,i2,q1,q2 | t_s,phase | t_s,intensity")]
    UnknownSchema { header: String },
    #[error("too few samples: need at least {needed}, got {got}")]
    SampleSize { needed: usize, got: usize },
    #[error("degenerate sequence: zero variance")]
    DegenerateSequence,
    #[error("indeterminate phase at {path}:{line}: both hybrid differences are zero")]
    IndeterminatePhase { path: String, line: usize },
}

/// A loaded measurement trace. At least one of `phases`, `hybrid`,
/// `intensities` is present; all present columns have equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceData {
    pub timestamps: Vec<f64>,
    pub phases: Option<Vec<f64>>,
    pub hybrid: Option<Vec<HybridReading>>,
    pub intensities: Option<Vec<f64>>,
}

/// Loads a CSV trace. Recognized schemas (header line first):
/// `t_s,i1,i2,q1,q2`, `t_s,phase`, `t_s,intensity`. When only hybrid
/// channels are present, phases are derived via the hybrid phase readout.
pub fn load_trace(path: &Path) -> Result<TraceData, CharacterizeError> {
    let text = fs::read_to_string(path).map_err(|source| CharacterizeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let p = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CharacterizeError::Parse {
        path: p.clone(),
        line: 1,
        message: "empty file".into(),
    })?;
    let header_norm: Vec<&str> = header.split(',').map(str::trim).collect();

    enum Schema {
        Hybrid,
        Phase,
        Intensity,
    }
    let schema = match header_norm.as_slice() {
        ["t_s", "i1", "i2", "q1", "q2"] => Schema::Hybrid,
        ["t_s", "phase"] => Schema::Phase,
        ["t_s", "intensity"] => Schema::Intensity,
        _ => {
            return Err(CharacterizeError::UnknownSchema {
                header: header.to_string(),
            })
        }
    };

    let mut data = TraceData::default();
    let mut hybrid = Vec::new();
    let mut column = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = match schema {
            Schema::Hybrid => 5,
            _ => 2,
        };
        if fields.len() != expected {
            return Err(CharacterizeError::Parse {
                path: p.clone(),
                line: lineno,
                message: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, CharacterizeError> {
            s.parse::<f64>().map_err(|_| CharacterizeError::Parse {
                path: p.clone(),
                line: lineno,
                message: format!("not a number: {s:?}"),
            })
        };
        data.timestamps.push(parse(fields[0])?);
        match schema {
            Schema::Hybrid => hybrid.push(HybridReading {
                i1: parse(fields[1])?,
                i2: parse(fields[2])?,
                q1: parse(fields[3])?,
                q2: parse(fields[4])?,
            }),
            Schema::Phase | Schema::Intensity => column.push(parse(fields[1])?),
        }
    }

    match schema {
        Schema::Hybrid => {
            let phases = hybrid
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    phase_from_hybrid(r).map_err(|_| CharacterizeError::IndeterminatePhase {
                        path: p.clone(),
                        line: i + 2,
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            data.hybrid = Some(hybrid);
            data.phases = Some(phases);
        }
        Schema::Phase => data.phases = Some(column),
        Schema::Intensity => data.intensities = Some(column),
    }
    Ok(data)
}

/// Chi-square goodness-of-fit of the phases against uniform on [0, 2pi).
/// Returns (chi2, p-value); requires at least 10 samples per bin.
pub fn uniformity_test(phases: &[f64], bins: usize) -> Result<(f64, f64), CharacterizeError> {
    if phases.len() < 10 * bins {
        return Err(CharacterizeError::SampleSize {
            needed: 10 * bins,
            got: phases.len(),
        });
    }
    Ok(chi_square_uniform(phases, 0.0, TAU, bins))
}

/// Normalized sample autocorrelation of a mean-removed sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Autocorrelation {
    /// r(1) .. r(max_lag)
    pub lags: Vec<f64>,
    /// Mean of |r| across the computed lags.
    pub mean_abs_residual: f64,
}

/// Normalized sample autocorrelation of the raw (not unwrapped) phase
/// sequence at lags 1..=max_lag.
pub fn phase_autocorrelation(
    phases: &[f64],
    max_lag: usize,
) -> Result<Autocorrelation, CharacterizeError> {
    if max_lag == 0 || phases.len() <= max_lag {
        return Err(CharacterizeError::SampleSize {
            needed: max_lag + 1,
            got: phases.len(),
        });
    }
    let n = phases.len();
    let mean = phases.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = phases.iter().map(|&x| x - mean).collect();
    let denom: f64 = centered.iter().map(|x| x * x).sum();
    if denom == 0.0 {
        return Err(CharacterizeError::DegenerateSequence);
    }
    let lags: Vec<f64> = (1..=max_lag)
        .map(|lag| {
            centered[..n - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / denom
        })
        .collect();
    let mean_abs_residual = lags.iter().map(|r| r.abs()).sum::<f64>() / lags.len() as f64;
    Ok(Autocorrelation {
        lags,
        mean_abs_residual,
    })
}

/// Sample mean, sample standard deviation (n-1 normalization), and their
/// ratio.
pub fn intensity_stability(intensities: &[f64]) -> Result<(f64, f64, f64), CharacterizeError> {
    if intensities.len() < 2 {
        return Err(CharacterizeError::SampleSize {
            needed: 2,
            got: intensities.len(),
        });
    }
    let n = intensities.len() as f64;
    let mean = intensities.iter().sum::<f64>() / n;
    let var = intensities.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    Ok((mean, std, std / mean))
}
