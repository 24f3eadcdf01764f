//! Train-on-source / evaluate-on-target accuracy tables. Each off-diagonal
//! cell is tested against the in-domain (diagonal) run of its column.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::paired_t_test;
use super::EvalReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub acc_at_1: Option<f64>,
    /// Accuracy minus the diagonal cell of the same column.
    pub delta: Option<f64>,
    pub p_value: Option<f64>,
    pub significant_at_95: bool,
}

impl TransferCell {
    fn empty() -> Self {
        TransferCell {
            acc_at_1: None,
            delta: None,
            p_value: None,
            significant_at_95: false,
        }
    }

    /// `better` / `worse` when significant, `ns` otherwise, `NA` when no
    /// test was possible.
    pub fn marker(&self) -> &'static str {
        match (self.p_value, self.delta) {
            (Some(_), Some(d)) if self.significant_at_95 && d > 0.0 => "better",
            (Some(_), Some(d)) if self.significant_at_95 && d < 0.0 => "worse",
            (Some(_), _) => "ns",
            _ => "NA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<TransferCell>>,
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_owned());
    }
}

/// Rows and columns appear in first-seen order. A later run for the same
/// cell replaces an earlier one. Significance needs the diagonal run and
/// both runs on the same target data (same digest and length); otherwise
/// the cell's test is unavailable.
pub fn transfer_matrix(runs: &[(String, String, EvalReport)]) -> TransferMatrix {
    let mut sources = Vec::new();
    let mut targets = Vec::new();
    for (s, t, _) in runs {
        push_unique(&mut sources, s);
        push_unique(&mut targets, t);
    }
    let find = |s: &str, t: &str| runs.iter().rev().find(|(rs, rt, _)| rs == s && rt == t).map(|r| &r.2);

    let cells = sources
        .iter()
        .map(|s| {
            targets
                .iter()
                .map(|t| {
                    let Some(run) = find(s, t) else {
                        return TransferCell::empty();
                    };
                    let mut cell = TransferCell {
                        acc_at_1: Some(run.acc_at_1),
                        ..TransferCell::empty()
                    };
                    let Some(diag) = find(t, t) else {
                        return cell;
                    };
                    cell.delta = Some(run.acc_at_1 - diag.acc_at_1);
                    if diag.dataset_digest == run.dataset_digest && diag.n == run.n {
                        if let Ok(test) = paired_t_test(&run.system_bits(), &diag.system_bits()) {
                            cell.p_value = Some(test.p_value);
                            cell.significant_at_95 = test.significant_at_95;
                        }
                    }
                    cell
                })
                .collect()
        })
        .collect();

    TransferMatrix {
        sources,
        targets,
        cells,
    }
}

impl TransferMatrix {
    fn csv(&self, value: impl Fn(&TransferCell) -> String) -> String {
        let mut out = String::from("source\\target");
        for t in &self.targets {
            out.push(',');
            out.push_str(t);
        }
        out.push('\n');
        for (s, row) in self.sources.iter().zip(&self.cells) {
            out.push_str(s);
            for cell in row {
                let _ = write!(out, ",{}", value(cell));
            }
            out.push('\n');
        }
        out
    }

    pub fn acc_csv(&self) -> String {
        self.csv(|c| c.acc_at_1.map_or("NA".into(), |v| format!("{v:.6}")))
    }

    pub fn delta_csv(&self) -> String {
        self.csv(|c| c.delta.map_or("NA".into(), |v| format!("{v:.6}")))
    }

    pub fn p_value_csv(&self) -> String {
        self.csv(|c| c.p_value.map_or("NA".into(), |v| format!("{v:.6e}")))
    }

    pub fn marker_csv(&self) -> String {
        self.csv(|c| c.marker().to_string())
    }
}
