//! Matrix CSV files, `ε`-grid specs and JSON reports.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eot::{EotReport, SpectralPath, SweepRow};
use crate::error::{EotError, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses a dense row-major CSV, with an optional leading `# rows cols` line.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut body = text;
    let mut declared: Option<(usize, usize)> = None;
    let trimmed = text.trim_start();
    if let Some(rest) = trimmed.strip_prefix('#') {
        let (line, remainder) = rest.split_once('\n').unwrap_or((rest, ""));
        let dims: Vec<usize> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| EotError::Parse(format!("bad header token '{t}'")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(EotError::Parse("header must read '# rows cols'".into()));
        }
        declared = Some((dims[0], dims[1]));
        body = remainder;
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(body.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| EotError::Parse(e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| EotError::Parse(format!("row {}: '{f}' is not a number", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EotError::NonFinite);
        }
        rows.push(row);
    }
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.is_empty() || cols == 0 {
        return Err(EotError::Empty);
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(EotError::Parse(format!(
            "row {} has {} fields, expected {cols}",
            bad + 1,
            rows[bad].len()
        )));
    }
    if let Some((r, c)) = declared {
        if (r, c) != (rows.len(), cols) {
            return Err(EotError::Parse(format!(
                "header declares {r}x{c} but data is {}x{cols}",
                rows.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn read_matrix<P: AsRef<Path>>(path: P) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EotError::Io(format!("{}: {e}", path.display())))?;
    parse_matrix(&text)
}

pub fn format_matrix(m: &DMatrix<f64>, header: bool) -> String {
    let mut out = String::new();
    if header {
        out.push_str(&format!("# {} {}\n", m.nrows(), m.ncols()));
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix<P: AsRef<Path>>(path: P, m: &DMatrix<f64>, header: bool) -> Result<()> {
    write_text(path, &format_matrix(m, header))
}

pub fn write_text<P: AsRef<Path>>(path: P, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| EotError::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<P: AsRef<Path>, T: Serialize>(path: P, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| EotError::Io(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpacing {
    Log,
    Lin,
}

/// `start:stop:count[:log|:lin]`, logarithmic unless stated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsGrid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub spacing: GridSpacing,
}

impl EpsGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                let t = k as f64 / last;
                match self.spacing {
                    GridSpacing::Log => (self.start.ln() + t * (self.stop.ln() - self.start.ln())).exp(),
                    GridSpacing::Lin => self.start + t * (self.stop - self.start),
                }
            })
            .collect()
    }
}

impl FromStr for EpsGrid {
    type Err = EotError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(EotError::Parse(format!(
                "grid '{s}' must read start:stop:count[:log|:lin]"
            )));
        }
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| EotError::Parse(format!("bad grid bound '{t}'")))
        };
        let start = num(parts[0])?;
        let stop = num(parts[1])?;
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| EotError::Parse(format!("bad grid count '{}'", parts[2])))?;
        let spacing = match parts.get(3).map(|t| t.trim()) {
            None | Some("log") => GridSpacing::Log,
            Some("lin") => GridSpacing::Lin,
            Some(other) => return Err(EotError::Parse(format!("unknown grid spacing '{other}'"))),
        };
        if !(start > 0.0 && stop > 0.0 && start.is_finite() && stop.is_finite()) {
            return Err(EotError::InvalidEpsilon(if start > 0.0 { stop } else { start }));
        }
        if count == 0 {
            return Err(EotError::Parse("grid count must be positive".into()));
        }
        Ok(EpsGrid {
            start,
            stop,
            count,
            spacing,
        })
    }
}

/// JSON body written by `solve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub epsilon: f64,
    pub w2_squared: f64,
    pub entropic_cost: f64,
    pub transport_cost: f64,
    pub kl: f64,
    pub spectrum: Vec<f64>,
    pub shrunk: Vec<f64>,
    pub r_trace_norm: f64,
}

impl SolveReport {
    pub fn new(path: &SpectralPath, report: &EotReport) -> Self {
        SolveReport {
            epsilon: report.epsilon,
            w2_squared: report.w2_squared,
            entropic_cost: report.entropic_cost,
            transport_cost: report.transport_cost,
            kl: report.kl,
            spectrum: path.lambdas().iter().copied().collect(),
            shrunk: report.shrunk.clone(),
            r_trace_norm: report.r_trace_norm,
        }
    }
}

/// JSON body written by `limit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSummary {
    pub variant: String,
    pub dimension: usize,
    pub rank: usize,
    pub w2_squared: f64,
    pub transport_cost: f64,
    pub null_mass: f64,
    pub schur_vanishes: bool,
    pub schur_norm: f64,
}

/// `epsilon,entropic_cost,bias,kl[,coupling_distance_sq][,bound1,bound2]`.
pub fn sweep_csv(rows: &[SweepRow], distances: bool, bounds: bool) -> String {
    let mut out = String::from("epsilon,entropic_cost,bias,kl");
    if distances {
        out.push_str(",coupling_distance_sq");
    }
    if bounds {
        out.push_str(",bound1,bound2");
    }
    out.push('\n');
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        let mut fields = vec![
            fmt_f64(r.epsilon),
            fmt_f64(r.entropic_cost),
            fmt_f64(r.bias),
            fmt_f64(r.kl),
        ];
        if distances {
            fields.push(opt(r.coupling_distance_sq));
        }
        if bounds {
            fields.push(opt(r.bound1));
            fields.push(opt(r.bound2));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0 / 3.0, -2e-300, 7.0, std::f64::consts::PI, 0.0, 1e300]);
        for header in [false, true] {
            let back = parse_matrix(&format_matrix(&m, header)).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn header_mismatch_is_rejected() {
        assert!(parse_matrix("# 2 2\n1,2\n").is_err());
        assert!(parse_matrix("1,2\n3\n").is_err());
        assert!(parse_matrix("1,x\n").is_err());
        assert!(matches!(parse_matrix(""), Err(EotError::Empty)));
        assert!(matches!(parse_matrix("1,NaN\n"), Err(EotError::NonFinite)));
    }

    #[test]
    fn whitespace_tolerated() {
        let m = parse_matrix("1, 2\n 3 ,4\n\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn grid_specs() {
        let g: EpsGrid = "1e-4:1:5".parse().unwrap();
        assert_eq!(g.spacing, GridSpacing::Log);
        let v = g.values();
        assert!((v[1] - 1e-3).abs() < 1e-15 && (v[4] - 1.0).abs() < 1e-15);
        let g: EpsGrid = "1:3:3:lin".parse().unwrap();
        assert_eq!(g.values(), vec![1.0, 2.0, 3.0]);
        assert!("0:1:3".parse::<EpsGrid>().is_err());
        assert!("1:2".parse::<EpsGrid>().is_err());
        assert!("1:2:3:cubic".parse::<EpsGrid>().is_err());
    }
}
