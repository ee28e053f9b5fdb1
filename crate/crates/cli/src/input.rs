//! CSV and totals-file ingestion.

use std::collections::HashMap;
use std::path::Path;

use crate::CliError;

/// Numeric columns of a headed CSV file, keyed by lower-cased header name.
pub struct Table {
    pub path: String,
    pub columns: HashMap<String, Vec<f64>>,
    /// 1-based file line of each data row.
    pub lines: Vec<u64>,
}

impl Table {
    pub fn read(path: &Path, wanted: &[&str]) -> Result<Self, CliError> {
        let shown = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::Input(format!("{shown}: {e}")))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::Input(format!("{shown}: line 1: {e}")))?
            .iter()
            .map(|h| h.to_ascii_lowercase())
            .collect();
        let index: Vec<(String, usize)> = wanted
            .iter()
            .filter_map(|w| headers.iter().position(|h| h == w).map(|i| (w.to_string(), i)))
            .collect();
        let mut columns: HashMap<String, Vec<f64>> =
            index.iter().map(|(name, _)| (name.clone(), Vec::new())).collect();
        let mut lines = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                CliError::Input(format!("{shown}: line {line}: {e}"))
            })?;
            let line = record.position().map_or(0, |p| p.line());
            for (name, i) in &index {
                let raw = record.get(*i).unwrap_or("");
                if raw.is_empty() {
                    return Err(CliError::Input(format!(
                        "{shown}: line {line}: missing value in column '{name}'"
                    )));
                }
                let v: f64 = raw.parse().map_err(|_| {
                    CliError::Input(format!(
                        "{shown}: line {line}: column '{name}': '{raw}' is not a number"
                    ))
                })?;
                if !v.is_finite() {
                    return Err(CliError::Input(format!(
                        "{shown}: line {line}: column '{name}': non-finite value"
                    )));
                }
                columns.get_mut(name).expect("column registered").push(v);
            }
            lines.push(line);
        }
        Ok(Self {
            path: shown,
            columns,
            lines,
        })
    }

    pub fn has(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64], CliError> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| CliError::Input(format!("{}: missing column '{name}'", self.path)))
    }

    pub fn take(&mut self, name: &str) -> Result<Vec<f64>, CliError> {
        let path = self.path.clone();
        self.columns
            .remove(name)
            .ok_or_else(|| CliError::Input(format!("{path}: missing column '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    /// Checks that every value of `name` is 0 or 1.
    pub fn require_binary(&self, name: &str) -> Result<(), CliError> {
        for (v, line) in self.column(name)?.iter().zip(&self.lines) {
            if *v != 0.0 && *v != 1.0 {
                return Err(CliError::Input(format!(
                    "{}: line {line}: column '{name}' must be 0 or 1, got {v}",
                    self.path
                )));
            }
        }
        Ok(())
    }
}

/// Basis totals (first line) and population size (second line).
pub fn read_totals(path: &Path) -> Result<(Vec<f64>, f64), CliError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{shown}: {e}")))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (n1, first) = lines
        .next()
        .ok_or_else(|| CliError::Input(format!("{shown}: empty totals file")))?;
    let totals = parse_list(first)
        .map_err(|raw| CliError::Input(format!("{shown}: line {}: '{raw}' is not a number", n1 + 1)))?;
    let (n2, second) = lines
        .next()
        .ok_or_else(|| CliError::Input(format!("{shown}: missing population size line")))?;
    let size: f64 = second.trim().parse().map_err(|_| {
        CliError::Input(format!(
            "{shown}: line {}: '{}' is not a population size",
            n2 + 1,
            second.trim()
        ))
    })?;
    if let Some((n3, _)) = lines.next() {
        return Err(CliError::Input(format!("{shown}: line {}: unexpected content", n3 + 1)));
    }
    Ok((totals, size))
}

/// Parses a comma- or whitespace-separated list of numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| t.to_string()))
        .collect()
}

/// `5,10,15`, `5..50` (inclusive) or `5..50:5`.
pub fn parse_int_set(s: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, rest)) = part.split_once("..") {
            let (hi, step) = match rest.split_once(':') {
                Some((h, st)) => (h, st),
                None => (rest, "1"),
            };
            let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad range '{part}'"));
            let (lo, hi, step) = (parse(lo)?, parse(hi)?, parse(step)?);
            if step == 0 || lo > hi {
                return Err(format!("bad range '{part}'"));
            }
            out.extend((lo..=hi).step_by(step));
        } else {
            out.push(part.parse().map_err(|_| format!("'{part}' is not a count"))?);
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}
