// SPDX-License-Identifier: MIT OR Apache-2.0

//! Side-by-side comparison of detectors at matched ARL.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use super::montecarlo::OperatingCharacteristics;
use crate::error::{invalid, Result};

/// Relative ARL spread above which a comparison is flagged.
pub const ARL_MISMATCH_TOL: f64 = 0.05;

/// One machine-readable report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub arl: f64,
    pub arl_se: f64,
    pub add: f64,
    pub add_se: f64,
    pub n: u64,
    pub censored: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Rows sorted by ADD, smallest first.
    pub rows: Vec<ReportRow>,
    /// ARLs differ by more than [`ARL_MISMATCH_TOL`].
    pub arl_mismatch: bool,
    /// Standard errors rest on too few replications to be trusted.
    pub unreliable_se: bool,
}

/// Sorts detectors by detection delay and checks the ARLs are comparable.
pub fn relative_comparison_report(entries: &[(String, OperatingCharacteristics)]) -> Result<ComparisonReport> {
    if entries.is_empty() {
        return Err(invalid("comparison report needs at least one entry"));
    }
    let mut rows: Vec<ReportRow> = entries
        .iter()
        .map(|(name, oc)| ReportRow {
            name: name.clone(),
            arl: oc.arl_estimate,
            arl_se: oc.arl_se,
            add: oc.add_estimate,
            add_se: oc.add_se,
            n: oc.n_replications,
            censored: oc.n_censored,
        })
        .collect();
    rows.sort_by(|a, b| a.add.total_cmp(&b.add));
    let arls: Vec<f64> = rows.iter().map(|r| r.arl).filter(|a| a.is_finite() && *a > 0.0).collect();
    let arl_mismatch = match (
        arls.iter().copied().reduce(f64::min),
        arls.iter().copied().reduce(f64::max),
    ) {
        (Some(lo), Some(hi)) => hi / lo - 1.0 > ARL_MISMATCH_TOL,
        _ => false,
    };
    let unreliable_se = rows.iter().any(|r| !(r.add_se.is_finite() || r.arl_se.is_finite()));
    Ok(ComparisonReport { rows, arl_mismatch, unreliable_se })
}

fn cell(v: f64, se: f64) -> String {
    if v.is_nan() {
        "-".to_string()
    } else if se.is_finite() {
        format!("{v:.1} ({se:.2})")
    } else {
        format!("{v:.1} (?)")
    }
}

impl ComparisonReport {
    pub fn mark_unreliable(mut self) -> Self {
        self.unreliable_se = true;
        self
    }

    /// Aligned text table with any warnings underneath.
    pub fn to_text(&self) -> String {
        let header = ["detector", "ARL (SE)", "ADD (SE)", "n", "censored"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.name.clone(),
                    cell(r.arl, r.arl_se),
                    cell(r.add, r.add_se),
                    r.n.to_string(),
                    r.censored.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header.map(String::from), &mut out);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&rule, &mut out);
        for row in &body {
            line(row, &mut out);
        }
        if self.arl_mismatch {
            let _ = writeln!(out, "warning: ARLs differ by more than {:.0}%", ARL_MISMATCH_TOL * 100.0);
        }
        if self.unreliable_se {
            let _ = writeln!(out, "warning: standard errors unreliable at this replication budget");
        }
        out
    }

    /// One JSON object per row.
    pub fn to_json_lines(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("report rows always serialize") + "\n")
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oc(arl: f64, add: f64) -> OperatingCharacteristics {
        OperatingCharacteristics {
            arl_estimate: arl,
            arl_se: 5.0,
            add_estimate: add,
            add_se: 0.5,
            n_replications: 100,
            n_censored: 0,
            cap: 10_000,
        }
    }

    #[test]
    fn sorted_by_delay() {
        let r = relative_comparison_report(&[
            ("slow".into(), oc(500.0, 33.8)),
            ("fast".into(), oc(505.0, 28.8)),
        ])
        .unwrap();
        assert_eq!(r.rows[0].name, "fast");
        assert_eq!(r.rows[1].name, "slow");
        assert!(!r.arl_mismatch);
        let text = r.to_text();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("28.8 (0.50)"));
        assert_eq!(r.to_json_lines().lines().count(), 2);
    }

    #[test]
    fn single_entry_and_empty() {
        let r = relative_comparison_report(&[("only".into(), oc(500.0, 30.0))]).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(relative_comparison_report(&[]).is_err());
    }

    #[test]
    fn flags_mismatched_arl() {
        let r = relative_comparison_report(&[("a".into(), oc(500.0, 30.0)), ("b".into(), oc(540.0, 31.0))]).unwrap();
        assert!(r.arl_mismatch);
        assert!(r.to_text().contains("warning: ARLs differ"));
    }

    #[test]
    fn json_schema() {
        let r = relative_comparison_report(&[("a".into(), oc(500.0, 30.0))]).unwrap();
        let v: serde_json::Value = serde_json::from_str(r.to_json_lines().trim()).unwrap();
        for k in ["name", "arl", "arl_se", "add", "add_se", "n", "censored"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
    }
}
