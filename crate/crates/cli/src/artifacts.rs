//! Artifact files and the config block embedded in each of them.
//!
//! The block is a banner line `# otunfold <version> <command>` followed by
//! the resolved config, one `# `-prefixed TOML line each. CSV files start
//! with it, SVG files carry it in their leading XML comment, and
//! `summary.json` stores it under `"embedded"`.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::CliError;

const BANNER: &str = "otunfold";

/// Header written into every artifact of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub command: String,
    pub config: RunConfig,
}

impl Embedded {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
        }
    }

    pub fn block(&self) -> String {
        let mut out = format!("# {BANNER} {} {}\n", env!("CARGO_PKG_VERSION"), self.command);
        for line in self.config.to_toml().lines() {
            if line.is_empty() {
                out.push_str("#\n");
            } else {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }

    /// Parses a block produced by [`Embedded::block`].
    pub fn parse_block(lines: &[&str]) -> Result<Self, CliError> {
        let banner = lines.first().ok_or_else(|| CliError::Config("empty embedded config".into()))?;
        let mut words = banner.trim_start_matches('#').split_whitespace();
        if words.next() != Some(BANNER) {
            return Err(CliError::Config("missing otunfold banner in embedded config".into()));
        }
        let command = words
            .nth(1)
            .ok_or_else(|| CliError::Config("embedded banner names no command".into()))?
            .to_string();
        let body: String = lines[1..]
            .iter()
            .map(|l| l.strip_prefix("# ").unwrap_or(l.trim_start_matches('#')))
            .collect::<Vec<_>>()
            .join("\n");
        Ok(Self {
            command,
            config: RunConfig::parse(&body)?,
        })
    }
}

fn comment_lines(text: &str) -> Vec<&str> {
    text.lines().take_while(|l| l.starts_with('#')).collect()
}

/// Makes `text` safe inside an XML comment: `%` becomes `%25` and the
/// second dash of every `--` becomes `%2D`.
pub fn escape_comment(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev_dash = false;
    for c in text.chars() {
        match c {
            '%' => out.push_str("%25"),
            '-' if prev_dash => {
                out.push_str("%2D");
                prev_dash = false;
                continue;
            }
            _ => out.push(c),
        }
        prev_dash = c == '-';
    }
    out
}

pub fn unescape_comment(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(k) = rest.find('%') {
        out.push_str(&rest[..k]);
        let code = rest.get(k..k + 3);
        out.push(match code {
            Some("%25") => '%',
            Some("%2D") => '-',
            _ => {
                out.push('%');
                rest = &rest[k + 1..];
                continue;
            }
        });
        rest = &rest[k + 3..];
    }
    out.push_str(rest);
    out
}

fn svg_block(text: &str) -> Option<&str> {
    let start = text.find("<!--")? + 4;
    let end = start + text[start..].find("-->")?;
    Some(&text[start..end])
}

/// The embedded header of an artifact, or `None` for a plain config file.
pub fn read_embedded(path: &Path, text: &str) -> Result<Option<Embedded>, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let lines: Vec<String> = match ext {
        "csv" => comment_lines(text).into_iter().map(str::to_string).collect(),
        "svg" => {
            let block = svg_block(text).ok_or_else(|| CliError::Config("svg has no embedded config".into()))?;
            let block = unescape_comment(block.trim_start_matches('\n'));
            comment_lines(&block).into_iter().map(str::to_string).collect()
        }
        "json" => {
            let v: serde_json::Value =
                serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let s = v
                .get("embedded")
                .and_then(|e| e.as_str())
                .ok_or_else(|| CliError::Config("summary has no embedded config".into()))?;
            s.lines().map(str::to_string).collect()
        }
        _ => return Ok(None),
    };
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    Embedded::parse_block(&refs).map(Some)
}

/// The TOML body of an embedded config, for [`RunConfig::load`].
pub fn extract_embedded(path: &Path, text: &str) -> Result<Option<String>, CliError> {
    Ok(read_embedded(path, text)?.map(|e| e.config.to_toml()))
}

/// Shortest round-trip representation, empty for missing values.
pub fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_csv(path: &Path, embedded: &Embedded, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?).expect("utf8 csv");
    write_file(path, &(embedded.block() + &body))
}

/// A CSV artifact read back: its embedded header and its records keyed by
/// column name.
pub struct Table {
    pub embedded: Embedded,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let embedded = read_embedded(path, &text)?
            .ok_or_else(|| CliError::Config(format!("{} has no embedded config", path.display())))?;
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = r
            .headers()
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { embedded, header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, CliError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("missing column {name}")))
    }

    pub fn f64_at(&self, row: &[String], col: usize) -> Option<f64> {
        row.get(col).and_then(|s| s.parse().ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_round_trips() {
        let e = Embedded::new("compare", &RunConfig::default());
        let block = e.block();
        let lines: Vec<&str> = block.lines().collect();
        assert_eq!(Embedded::parse_block(&lines).unwrap(), e);
    }

    #[test]
    fn extracts_from_every_artifact_kind() {
        let e = Embedded::new("solve", &RunConfig::default());
        let csv = format!("{}a,b\n1,2\n", e.block());
        let svg = format!("<svg>\n<!--\n{}-->\n</svg>\n", e.block());
        let json = serde_json::json!({ "embedded": e.block() }).to_string();
        for (name, text) in [("x.csv", csv), ("x.svg", svg), ("x.json", json)] {
            assert_eq!(read_embedded(Path::new(name), &text).unwrap().unwrap(), e, "{name}");
        }
        assert!(read_embedded(Path::new("x.toml"), "schema_version = 1").unwrap().is_none());
    }

    #[test]
    fn comment_escape_round_trips() {
        for s in ["a--b", "---", "- -", "%2D", "100%", "x-%25-y", "--%", "plain"] {
            let e = escape_comment(s);
            assert!(!e.contains("--"), "{e}");
            assert_eq!(unescape_comment(&e), s);
        }
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1e-40, 3e-5, 1.0 / 3.0] {
            assert_eq!(num(Some(v)).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(None), "");
    }
}
