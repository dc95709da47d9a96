//! Header-addressed CSV input with line-numbered parse errors.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

pub struct Table {
    pub path: String,
    headers: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<Vec<String>>,
    /// 1-based line of each data row in the file.
    lines: Vec<u64>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("cannot open {display}"))?;
        let headers: Vec<String> = reader
            .headers()
            .with_context(|| format!("{display}: cannot read header row"))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut index = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            if h.is_empty() {
                bail!("{display}, line 1: column {} has an empty name", i + 1);
            }
            if index.insert(h.clone(), i).is_some() {
                bail!("{display}, line 1: duplicate column '{h}'");
            }
        }
        let mut rows = Vec::new();
        let mut lines = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| anyhow!("{display}: {e}"))?;
            let line = record.position().map_or(0, |p| p.line());
            rows.push(record.iter().map(str::to_string).collect());
            lines.push(line);
        }
        if rows.is_empty() {
            bail!("{display}: no data rows");
        }
        Ok(Self {
            path: display,
            headers,
            index,
            rows,
            lines,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn has(&self, column: &str) -> bool {
        self.index.contains_key(column)
    }

    pub fn text(&self, column: &str) -> Result<Vec<String>> {
        let j = self.position(column)?;
        Ok(self.rows.iter().map(|r| r[j].clone()).collect())
    }

    /// Parses every cell of `column` as a finite number.
    pub fn numeric(&self, column: &str) -> Result<Vec<f64>> {
        let j = self.position(column)?;
        self.rows
            .iter()
            .zip(&self.lines)
            .map(|(r, line)| {
                let cell = &r[j];
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ if cell.is_empty() => Err(anyhow!("{}, line {line}: column '{column}' is empty", self.path)),
                    _ => Err(anyhow!(
                        "{}, line {line}: column '{column}' value '{cell}' is not a finite number",
                        self.path
                    )),
                }
            })
            .collect()
    }

    fn position(&self, column: &str) -> Result<usize> {
        self.index
            .get(column)
            .copied()
            .ok_or_else(|| anyhow!("{}: no column named '{column}' (have: {})", self.path, self.headers.join(", ")))
    }
}
