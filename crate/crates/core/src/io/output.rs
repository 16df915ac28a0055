use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inference::{ChainSamples, ParameterState, PosteriorSamples, ThicknessPrediction, WidthBands};

use super::format_float;

pub const LONG_HEADER: &str = "x_m,quantity,statistic,value";

/// One row of a long-format result table.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    pub x: f64,
    pub quantity: String,
    pub statistic: String,
    pub value: f64,
}

impl LongRow {
    pub fn new(x: f64, quantity: &str, statistic: &str, value: f64) -> Self {
        LongRow {
            x,
            quantity: quantity.into(),
            statistic: statistic.into(),
            value,
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `x_m,quantity,statistic,value`; only the header when `rows` is empty.
pub fn write_long_csv(path: impl AsRef<Path>, rows: &[LongRow]) -> Result<()> {
    let mut out = format!("{LONG_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_float(r.x),
            r.quantity,
            r.statistic,
            format_float(r.value)
        ));
    }
    write_text(path.as_ref(), &out)
}

pub fn read_long_csv(path: impl AsRef<Path>) -> Result<Vec<LongRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LONG_HEADER => {}
        _ => {
            return Err(Error::Parse {
                source_name: name,
                line: 1,
                message: format!("expected header `{LONG_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: &str| Error::Parse {
            source_name: name.clone(),
            line: i + 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
        rows.push(LongRow::new(num(f[0])?, f[1], f[2], num(f[3])?));
    }
    Ok(rows)
}

/// Thickness bands as long rows (`mean`, `lo`, `hi`, `lo_noisy`, `hi_noisy`).
pub fn prediction_rows(p: &ThicknessPrediction) -> Vec<LongRow> {
    let mut rows = Vec::with_capacity(5 * p.x.len());
    for (i, &x) in p.x.iter().enumerate() {
        for (stat, v) in [
            ("mean", p.mean[i]),
            ("lo", p.lo[i]),
            ("hi", p.hi[i]),
            ("lo_noisy", p.lo_noisy[i]),
            ("hi_noisy", p.hi_noisy[i]),
        ] {
            rows.push(LongRow::new(x, "thickness", stat, v));
        }
    }
    rows
}

/// Width bands on the quadrature nodes `x`.
pub fn width_rows(x: &[f64], w: &WidthBands) -> Vec<LongRow> {
    let mut rows = Vec::with_capacity(3 * x.len());
    for (i, &xi) in x.iter().enumerate() {
        for (stat, v) in [("mean", w.mean[i]), ("lo", w.lo[i]), ("hi", w.hi[i])] {
            rows.push(LongRow::new(xi, "width", stat, v));
        }
    }
    rows
}

fn samples_header(n_omega: usize) -> String {
    let mut h = String::from("chain,iter");
    for n in ParameterState::SCALAR_NAMES {
        h.push(',');
        h.push_str(n);
    }
    for i in 0..n_omega {
        h.push_str(&format!(",omega_{i}"));
    }
    h
}

/// Serializes retained states, one row per state. `iter` counts retained
/// states within a chain.
pub fn samples_csv(samples: &PosteriorSamples) -> String {
    let n_omega = samples.states().next().map_or(0, |s| s.omega_quad.len());
    let mut out = samples_header(n_omega);
    out.push('\n');
    for (c, chain) in samples.chains.iter().enumerate() {
        for (i, s) in chain.states.iter().enumerate() {
            out.push_str(&format!("{c},{i}"));
            for v in s.scalars().iter().chain(&s.omega_quad) {
                out.push(',');
                out.push_str(&format_float(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_samples_csv(path: impl AsRef<Path>, samples: &PosteriorSamples) -> Result<()> {
    write_text(path.as_ref(), &samples_csv(samples))
}

/// Reads a samples file. Acceptance rates are not stored and come back empty.
pub fn read_samples_csv(path: impl AsRef<Path>) -> Result<PosteriorSamples> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_samples_csv(&text, &path.display().to_string())
}

pub fn parse_samples_csv(text: &str, source_name: &str) -> Result<PosteriorSamples> {
    let err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| err(1, "empty samples file".into()))?.1;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let n_omega = cols.len().saturating_sub(7);
    if cols.len() < 7 || header.trim() != samples_header(n_omega) {
        return Err(err(1, "unexpected samples header".into()));
    }
    let mut samples = PosteriorSamples::default();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(err(i + 1, format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        let chain: usize = f[0]
            .parse()
            .map_err(|_| err(i + 1, format!("bad chain index `{}`", f[0])))?;
        let vals = f[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(i + 1, format!("`{s}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if chain > samples.chains.len() {
            return Err(err(i + 1, format!("chain {chain} appears before chain {}", samples.chains.len())));
        }
        if chain == samples.chains.len() {
            samples.chains.push(ChainSamples::default());
        }
        samples.chains[chain].states.push(ParameterState {
            a: vals[0],
            h0: vals[1],
            sigma2_h: vals[2],
            sigma2_omega: vals[3],
            tau2: vals[4],
            omega_quad: vals[5..].to_vec(),
        });
    }
    Ok(samples)
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::numerical(format!("json: {e}")))?;
    write_text(path.as_ref(), &(text + "\n"))
}

/// Lowercase hex SHA-256 of a file.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `config.toml` (byte copy of the source) and `resolved.toml`
/// (absolute paths and every default filled in; runnable on its own).
pub fn write_config_snapshot(dir: impl AsRef<Path>, source: &[u8], resolved: &super::RunConfig) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("config.toml");
    fs::write(&p, source).map_err(|e| Error::io(&p, e))?;
    write_text(&dir.join("resolved.toml"), &resolved.to_toml()?)
}
