use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix; rows are predicted classes, columns actual classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds from rows of counts, `rows[predicted][actual]`.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let z = rows.len();
        if z == 0 || rows.iter().any(|r| r.len() != z) {
            return Err(Error::dim("confusion matrix must be square and non-empty"));
        }
        Ok(ConfusionMatrix {
            classes: z,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, predicted: usize, actual: usize) -> Result<()> {
        if predicted >= self.classes || actual >= self.classes {
            return Err(Error::invalid(format!(
                "class pair ({predicted}, {actual}) outside a {}-class matrix",
                self.classes
            )));
        }
        self.counts[predicted * self.classes + actual] += 1;
        Ok(())
    }

    pub fn get(&self, predicted: usize, actual: usize) -> u64 {
        self.counts[predicted * self.classes + actual]
    }

    pub fn row_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|a| self.get(predicted, a)).sum()
    }

    pub fn col_sum(&self, actual: usize) -> u64 {
        (0..self.classes).map(|p| self.get(p, actual)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|h| self.get(h, h)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::dim("cannot merge matrices of different size"));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Parses comma-separated rows. A first line that is not all integers is
    /// a header; a leading non-integer cell on a row is a row label. Blank
    /// lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut first = true;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.first().is_some_and(|c| c.parse::<u64>().is_err()) {
                cells.remove(0);
            }
            let parsed: std::result::Result<Vec<u64>, _> = cells.iter().map(|c| c.parse::<u64>()).collect();
            match parsed {
                Ok(r) => rows.push(r),
                Err(_) if first => {}
                Err(_) => return Err(Error::parse(i + 1, format!("expected non-negative integer counts, got '{line}'"))),
            }
            first = false;
        }
        ConfusionMatrix::from_rows(&rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ConfusionMatrix::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut s = String::from("predicted\\actual");
        for h in 0..self.classes {
            let _ = write!(s, ",{}", names.get(h).copied().unwrap_or("?"));
        }
        s.push('\n');
        for p in 0..self.classes {
            s.push_str(names.get(p).copied().unwrap_or("?"));
            for a in 0..self.classes {
                let _ = write!(s, ",{}", self.get(p, a));
            }
            s.push('\n');
        }
        s
    }
}

/// Accuracy figures in percent; per-class entries are `None` when their
/// denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub oa: f64,
    /// User's accuracy per predicted class (diagonal over row sum).
    pub ua: Vec<Option<f64>>,
    /// Producer's accuracy per actual class (diagonal over column sum).
    pub pa: Vec<Option<f64>>,
    /// `None` when chance agreement is exactly one.
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ct_seconds: Option<f64>,
}

pub fn confusion_metrics(m: &ConfusionMatrix) -> Result<MetricReport> {
    let total = m.total();
    if total == 0 {
        return Err(Error::InsufficientData("confusion matrix is empty".into()));
    }
    let n = total as f64;
    let z = m.classes();
    let pct = |num: u64, den: u64| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    let ua = (0..z).map(|h| pct(m.get(h, h), m.row_sum(h))).collect();
    let pa = (0..z).map(|h| pct(m.get(h, h), m.col_sum(h))).collect();
    let po = m.trace() as f64 / n;
    let pe = (0..z)
        .map(|h| m.row_sum(h) as f64 * m.col_sum(h) as f64)
        .sum::<f64>()
        / (n * n);
    let kappa = (pe != 1.0).then(|| (po - pe) / (1.0 - pe));
    Ok(MetricReport {
        oa: 100.0 * po,
        ua,
        pa,
        kappa,
        ct_seconds: None,
    })
}

impl MetricReport {
    /// Aligned text table: the matrix with a U(%) column, then P(%), OA and Kappa rows.
    pub fn table(&self, m: &ConfusionMatrix, names: &[&str]) -> String {
        let w = names.iter().map(|n| n.len()).max().unwrap_or(0).max(10);
        let opt = |v: &Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}"));
        let mut s = String::new();
        let _ = write!(s, "{:<w$}", "");
        for n in names {
            let _ = write!(s, " {n:>w$}");
        }
        let _ = writeln!(s, " {:>w$}", "U(%)");
        for p in 0..m.classes() {
            let _ = write!(s, "{:<w$}", names[p]);
            for a in 0..m.classes() {
                let _ = write!(s, " {:>w$}", m.get(p, a));
            }
            let _ = writeln!(s, " {:>w$}", opt(&self.ua[p]));
        }
        let _ = write!(s, "{:<w$}", "P(%)");
        for v in &self.pa {
            let _ = write!(s, " {:>w$}", opt(v));
        }
        s.push('\n');
        let _ = writeln!(s, "{:<w$} {:>w$.2}", "OA(%)", self.oa);
        let _ = writeln!(s, "{:<w$} {:>w$}", "Kappa", self.kappa.map_or("n/a".into(), |k| format!("{k:.4}")));
        if let Some(ct) = self.ct_seconds {
            let _ = writeln!(s, "{:<w$} {:>w$.2}", "CT(s)", ct);
        }
        s
    }
}
