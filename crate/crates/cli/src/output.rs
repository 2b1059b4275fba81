//! CSV tables with a provenance comment, written atomically.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::ExperimentConfig;

/// Header comment shared by every output: command, config hash, seeds and
/// the full configuration, each line prefixed with `# `.
pub fn provenance(cfg: &ExperimentConfig, command: &str) -> String {
    let mut s = format!("# perfolab {command} config_hash={} seeds={}..{}\n", cfg.hash(), cfg.seeds.start, cfg.seeds.end);
    for line in cfg.to_toml().lines() {
        let _ = writeln!(s, "# {line}");
    }
    s
}

/// An in-memory CSV table.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Extra `# ` lines after the provenance block, such as per-row errors.
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), notes: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, provenance: &str) -> String {
        let mut s = provenance.to_string();
        for n in &self.notes {
            let _ = writeln!(s, "# {n}");
        }
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    /// Parse a table written by [`Table::render`], skipping comments.
    pub fn parse(text: &str) -> Result<Table> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
        let header = lines.next().context("table has no header")?;
        let mut t = Table { header: header.split(',').map(String::from).collect(), rows: Vec::new(), notes: Vec::new() };
        for l in lines {
            let row: Vec<String> = split_csv(l);
            if row.len() != t.header.len() {
                anyhow::bail!("row has {} fields, header has {}: {l:?}", row.len(), t.header.len());
            }
            t.rows.push(row);
        }
        Ok(t)
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).with_context(|| format!("missing column {name}"))
    }

    /// Column `name` of every row parsed as f64 (`nan` allowed).
    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.rows.iter().map(|r| r[c].parse::<f64>().with_context(|| format!("{name}: {:?}", r[c]))).collect()
    }
}

fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Quote a free-text field.
pub fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
}

/// `{:.10e}`, with non-finite values as `nan`/`inf`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.10e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Write through a temporary file in the same directory and rename, so an
/// interrupted run never leaves a truncated file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temporary file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

/// Output directory helper.
#[derive(Clone, Debug)]
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        OutDir { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&self, rel: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        write_atomic(&p, contents)?;
        Ok(p)
    }
}

/// File-name fragment for an epsilon, exact and sortable (`0.125` → `0p125`).
pub fn eps_tag(eps: f64) -> String {
    format!("{eps}").replace('.', "p")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(&["a", "b", "msg"]);
        t.push(vec![num(1.5), "nan".into(), quote("x, \"y\"")]);
        let text = t.render("# hdr\n");
        let back = Table::parse(&text).unwrap();
        assert_eq!(back.rows[0][2], "x, \"y\"");
        assert_eq!(back.floats("a").unwrap(), vec![1.5]);
        assert!(back.floats("b").unwrap()[0].is_nan());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.csv");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn tags() {
        assert_eq!(eps_tag(0.125), "0p125");
        assert_eq!(eps_tag(0.2), "0p2");
    }
}
