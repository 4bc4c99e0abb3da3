use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::Format;

#[derive(Clone, Debug, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

/// 17 significant digits: round-trips every `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Column-oriented numeric table.
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

pub struct Sink {
    pub dir: PathBuf,
    pub meta: Metadata,
    pub format: Format,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: PathBuf, meta: Metadata, format: Format) -> anyhow::Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            meta,
            format,
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn create(&mut self, name: &str) -> anyhow::Result<BufWriter<fs::File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.written.push(path);
        Ok(BufWriter::new(file))
    }

    /// Writes `stem.csv` (metadata as `#` comment lines) or `stem.json`, per the format.
    pub fn table(&mut self, stem: &str, table: &Table) -> anyhow::Result<()> {
        match self.format {
            Format::Csv => self.csv(stem, table),
            Format::Json => {
                #[derive(Serialize)]
                struct Doc<'a> {
                    metadata: &'a Metadata,
                    columns: &'a [&'static str],
                    rows: &'a [Vec<f64>],
                }
                let meta = self.meta.clone();
                let doc = Doc {
                    metadata: &meta,
                    columns: &table.columns,
                    rows: &table.rows,
                };
                self.write_json_raw(&format!("{stem}.json"), &doc)
            }
        }
    }

    /// Always CSV, whatever the configured format.
    pub fn csv(&mut self, stem: &str, table: &Table) -> anyhow::Result<()> {
        let header = self.header_lines();
        let mut w = self.create(&format!("{stem}.csv"))?;
        w.write_all(header.as_bytes())?;
        writeln!(w, "{}", table.columns.join(","))?;
        for row in &table.rows {
            let line: Vec<String> = row.iter().map(|&v| num(v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// `name` as pretty JSON with a `metadata` block next to `body`.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            metadata: &'a Metadata,
            #[serde(flatten)]
            body: &'a T,
        }
        let meta = self.meta.clone();
        let doc = Doc {
            metadata: &meta,
            body,
        };
        self.write_json_raw(name, &doc)
    }

    fn write_json_raw<T: Serialize>(&mut self, name: &str, doc: &T) -> anyhow::Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, doc)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn header_lines(&self) -> String {
        let m = &self.meta;
        format!(
            "# tool: {} {}\n# command: {}\n# config_sha256: {}\n# seed: {}\n",
            m.tool, m.version, m.command, m.config_sha256, m.seed
        )
    }
}

pub fn relative<'a>(base: &Path, p: &'a Path) -> &'a Path {
    p.strip_prefix(base).unwrap_or(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(num(1234.5), "1.2345000000000000e3");
    }
}
