//! Cross-domain, cross-model analysis: leaderboards and Kendall's tau-b.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyzeError {
    #[error("rankings differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations, got {0}")]
    TooShort(usize),
    #[error("tau is undefined when one ranking is entirely tied")]
    AllTied,
    #[error("NaN score in ranking")]
    NotANumber,
    #[error("model {model} has no score for domain {domain}")]
    MissingCell { model: String, domain: String },
    #[error("duplicate score for model {model}, domain {domain}")]
    DuplicateCell { model: String, domain: String },
    #[error("{0}")]
    Csv(String),
}

fn ties(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` in place and returns the number of inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// Kendall's tau-b with tie correction, computed with Knight's
/// O(n log n) algorithm. Pair counts are exact integers.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, AnalyzeError> {
    if x.len() != y.len() {
        return Err(AnalyzeError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalyzeError::TooShort(x.len()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(AnalyzeError::NotANumber);
    }
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    let cmp = |a: &f64, b: &f64| a.partial_cmp(b).unwrap_or(Ordering::Equal);
    pairs.sort_by(|a, b| cmp(&a.0, &b.0).then(cmp(&a.1, &b.1)));

    let n0 = n * (n - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = ties(&xs);
    // pairs tied in both x and y
    let mut n3 = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let discordant = merge_count(&mut ys);
    let n2 = ties(&ys);

    if n0 == n1 || n0 == n2 {
        return Err(AnalyzeError::AllTied);
    }
    // concordant - discordant
    let s = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * discordant as i128;
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok((s as f64 / denom).clamp(-1.0, 1.0))
}

pub const AVG_LABEL: &str = "Avg.";

/// VeriScore per model (rows) and domain (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDomainMatrix {
    pub models: Vec<String>,
    pub domains: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub averages: Vec<f64>,
}

impl ModelDomainMatrix {
    pub fn new(models: Vec<String>, domains: Vec<String>, scores: Vec<Vec<f64>>) -> Self {
        let averages = scores
            .iter()
            .map(|row| if row.is_empty() { 0.0 } else { row.iter().sum::<f64>() / row.len() as f64 })
            .collect();
        ModelDomainMatrix {
            models,
            domains,
            scores,
            averages,
        }
    }

    /// Builds a complete matrix from `(model, domain, score)` cells, keeping
    /// first-appearance order of models and domains.
    pub fn from_cells(cells: &[(String, String, f64)]) -> Result<Self, AnalyzeError> {
        let mut models: Vec<String> = Vec::new();
        let mut domains: Vec<String> = Vec::new();
        let mut lookup: HashMap<(&str, &str), f64> = HashMap::new();
        for (m, d, v) in cells {
            if !models.contains(m) {
                models.push(m.clone());
            }
            if !domains.contains(d) {
                domains.push(d.clone());
            }
            if lookup.insert((m, d), *v).is_some() {
                return Err(AnalyzeError::DuplicateCell {
                    model: m.clone(),
                    domain: d.clone(),
                });
            }
        }
        let mut scores = Vec::with_capacity(models.len());
        for m in &models {
            let mut row = Vec::with_capacity(domains.len());
            for d in &domains {
                let v = lookup.get(&(m.as_str(), d.as_str())).ok_or_else(|| AnalyzeError::MissingCell {
                    model: m.clone(),
                    domain: d.clone(),
                })?;
                row.push(*v);
            }
            scores.push(row);
        }
        Ok(Self::new(models, domains, scores))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.scores.iter().map(|row| row[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    /// Domains followed by the average column.
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.values[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.4}")));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Tau between every pair of domain columns and each domain against the
/// per-model average.
pub fn correlation_matrix(matrix: &ModelDomainMatrix) -> Result<CorrelationMatrix, AnalyzeError> {
    if matrix.models.len() < 2 {
        return Err(AnalyzeError::TooShort(matrix.models.len()));
    }
    let mut columns: Vec<Vec<f64>> = (0..matrix.domains.len()).map(|j| matrix.column(j)).collect();
    columns.push(matrix.averages.clone());
    let mut labels = matrix.domains.clone();
    labels.push(AVG_LABEL.to_string());

    let n = columns.len();
    let mut values = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let t = kendall_tau(&columns[i], &columns[j])?;
            values[i][j] = t;
            values[j][i] = t;
        }
    }
    Ok(CorrelationMatrix { labels, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model: String,
    pub scores: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaderboard {
    pub domains: Vec<String>,
    pub rows: Vec<LeaderboardRow>,
}

impl Leaderboard {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["Model".to_string()];
        h.extend(self.domains.iter().cloned());
        h.push(AVG_LABEL.to_string());
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut c = vec![r.model.clone()];
                c.extend(r.scores.iter().map(|v| pct(*v)));
                c.push(pct(r.average));
                c
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        align_table(&self.header(), &self.cells())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for row in self.cells() {
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Models sorted by average descending, ties by model id.
pub fn render_leaderboard(matrix: &ModelDomainMatrix) -> Leaderboard {
    let mut rows: Vec<LeaderboardRow> = matrix
        .models
        .iter()
        .zip(&matrix.scores)
        .zip(&matrix.averages)
        .map(|((m, s), a)| LeaderboardRow {
            model: m.clone(),
            scores: s.clone(),
            average: *a,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.average
            .partial_cmp(&a.average)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.model.cmp(&b.model))
    });
    Leaderboard {
        domains: matrix.domains.clone(),
        rows,
    }
}

/// First column left-aligned, the rest right-aligned, two-space gutters.
pub fn align_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let fmt_row = |row: &[String]| -> String {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate().take(cols) {
            if i > 0 {
                line.push_str("  ");
            }
            let pad = widths[i] - cell.chars().count();
            if i == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        line.trim_end().to_string()
    };
    let mut out = fmt_row(header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols.saturating_sub(1))));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out
}

/// Reads `(model, domain, F)` cells from scorecard CSV files.
pub fn read_scorecard_cells(paths: &[impl AsRef<Path>]) -> Result<Vec<(String, String, f64)>, AnalyzeError> {
    let mut cells = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let err = |m: String| AnalyzeError::Csv(format!("{}: {m}", path.display()));
        let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| err(format!("missing column {name}")));
        let (mi, di, fi) = (col("model")?, col("domain")?, col("F")?);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let f: f64 = rec[fi].trim().parse().map_err(|_| err(format!("bad F value {:?}", &rec[fi])))?;
            cells.push((rec[mi].to_string(), rec[di].to_string(), f));
        }
    }
    Ok(cells)
}
