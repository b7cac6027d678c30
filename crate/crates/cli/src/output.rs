//! Results files: a `#`-prefixed JSON header followed by one JSON record per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::records::Record;

pub const TOOL: &str = "spinbench";
pub const RESULTS_FORMAT: &str = "spinbench-results/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub format: String,
    pub kind: String,
    /// Producing command's parameters.
    pub config: serde_json::Value,
}

impl Header {
    pub fn new(kind: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            format: RESULTS_FORMAT.into(),
            kind: kind.into(),
            config: serde_json::to_value(config)?,
        })
    }

    pub fn line(&self) -> Result<String> {
        Ok(format!("# {}", serde_json::to_string(self)?))
    }

    pub fn parse(line: &str) -> Result<Self> {
        let body = line.strip_prefix('#').context("results file lacks a '#' header")?;
        let h: Self = serde_json::from_str(body.trim()).context("malformed results header")?;
        if h.tool != TOOL || h.format != RESULTS_FORMAT {
            bail!("unsupported results format '{}' from '{}'", h.format, h.tool);
        }
        Ok(h)
    }
}

/// Single writer for a results stream, to a file or stdout.
pub struct Sink {
    w: Box<dyn Write>,
    path: Option<PathBuf>,
    n: usize,
}

impl Sink {
    pub fn open(path: Option<PathBuf>, header: &Header) -> Result<Self> {
        let w: Box<dyn Write> = match &path {
            Some(p) => Box::new(BufWriter::new(create(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        };
        let mut sink = Self { w, path, n: 0 };
        writeln!(sink.w, "{}", header.line()?)?;
        Ok(sink)
    }

    pub fn write(&mut self, r: &Record) -> Result<()> {
        serde_json::to_writer(&mut self.w, r)?;
        self.w.write_all(b"\n")?;
        self.n += 1;
        Ok(())
    }

    pub fn write_all<'a>(&mut self, rs: impl IntoIterator<Item = &'a Record>) -> Result<()> {
        rs.into_iter().try_for_each(|r| self.write(r))
    }

    /// Flush; returns the destination (none for stdout) and the record count.
    pub fn finish(mut self) -> Result<(Option<PathBuf>, usize)> {
        self.w.flush()?;
        Ok((self.path, self.n))
    }
}

/// Create a file, making its parent directories.
pub fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

pub fn read_results(path: &Path) -> Result<(Header, Vec<Record>)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines.next().transpose()?.with_context(|| format!("{} is empty", path.display()))?;
    let header = Header::parse(&first).with_context(|| path.display().to_string())?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let r = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 2))?;
        records.push(r);
    }
    Ok((header, records))
}

/// Minimal CSV writer; fields never contain separators or quotes here.
pub fn write_csv(path: &Path, head: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    writeln!(w, "{}", head.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
