//! Kernel sample files.
//!
//! Layout: an optional run of `#` comment lines, a header line `d,M`, then
//! one row per source point `x_1..x_d, z1_1..z1_d, ..., zM_1..zM_d`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Number of standard deviations beyond which a sample value is replaced.
pub const OUTLIER_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub x: Vec<f64>,
    /// `M` samples of dimension `d`.
    pub z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSampleFile {
    pub d: usize,
    pub m: usize,
    pub rows: Vec<SampleRow>,
}

impl KernelSampleFile {
    /// Replaces every sample coordinate further than five standard
    /// deviations from its component mean by that mean. Statistics are
    /// pooled over all rows and samples per component and computed once.
    /// Files with fewer than two rows, or components with zero spread, are
    /// left alone. Returns the number of replaced values.
    pub fn clean(&mut self) -> usize {
        if self.rows.len() < 2 {
            return 0;
        }
        let mut replaced = 0;
        for a in 0..self.d {
            let values = || self.rows.iter().flat_map(|r| r.z.iter().map(move |z| z[a]));
            let count = (self.rows.len() * self.m) as f64;
            let mean = values().sum::<f64>() / count;
            let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            let std = var.sqrt();
            if !(std > 0.0) {
                continue;
            }
            for row in &mut self.rows {
                for z in &mut row.z {
                    if (z[a] - mean).abs() > OUTLIER_SIGMAS * std {
                        z[a] = mean;
                        replaced += 1;
                    }
                }
            }
        }
        replaced
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{},{}\n", self.d, self.m);
        for row in &self.rows {
            let fields: Vec<String> = row.x.iter().chain(row.z.iter().flatten()).map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }
}

fn parse_count(field: Option<&str>, line: usize, what: &str) -> Result<usize> {
    let field = field.ok_or_else(|| Error::Parse {
        line,
        reason: format!("header is missing {what}"),
    })?;
    match field.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Parse {
            line,
            reason: format!("{what} must be a positive integer, got `{field}`"),
        }),
    }
}

/// Parses file contents; see the module docs for the layout.
pub fn parse_kernel_csv(text: &str, clean: bool) -> Result<KernelSampleFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    let header = match records.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                reason: "empty file".into(),
            })
        }
        Some(r) => r.map_err(|e| csv_error(&e))?,
    };
    let header_line = line_of(&header);
    if header.len() != 2 {
        return Err(Error::Parse {
            line: header_line,
            reason: format!("header must be `d,M`, found {} fields", header.len()),
        });
    }
    let d = parse_count(header.get(0), header_line, "d")?;
    let m = parse_count(header.get(1), header_line, "M")?;
    let width = d * (m + 1);

    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = line_of(&record);
        if record.len() != width {
            return Err(Error::Parse {
                line,
                reason: format!("expected {width} fields for d = {d}, M = {m}, found {}", record.len()),
            });
        }
        let mut values = Vec::with_capacity(width);
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                reason: format!("non-numeric field `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    reason: format!("non-finite field `{field}`"),
                });
            }
            values.push(v);
        }
        rows.push(SampleRow {
            x: values[..d].to_vec(),
            z: values[d..].chunks_exact(d).map(<[f64]>::to_vec).collect(),
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: header_line + 1,
            reason: "no data rows".into(),
        });
    }
    let mut file = KernelSampleFile { d, m, rows };
    if clean {
        file.clean();
    }
    Ok(file)
}

pub fn ingest_kernel_csv(path: impl AsRef<Path>, clean: bool) -> Result<KernelSampleFile> {
    parse_kernel_csv(&std::fs::read_to_string(path)?, clean)
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn csv_error(e: &csv::Error) -> Error {
    Error::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        reason: e.to_string(),
    }
}
