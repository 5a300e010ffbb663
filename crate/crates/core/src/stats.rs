//! Per-operator statistics: illegal rate, execution time and mean
//! inconsistency per backend pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::LegalityStatus;
use crate::operators::OperatorCode;

/// What the statistics need to know about one evaluated mutant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutantResult {
    pub id: String,
    pub order: usize,
    pub operator: OperatorCode,
    pub legality: LegalityStatus,
    /// Mean total time over backends that completed; absent for illegal mutants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution_ms: Option<f64>,
    /// Largest change rate per backend pair (`a|b`).
    #[serde(default)]
    pub max_r: BTreeMap<String, f64>,
    /// Dedup keys of the reports this mutant raised.
    #[serde(default)]
    pub report_keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRow {
    pub operator: OperatorCode,
    pub mutants_generated: usize,
    pub illegal: usize,
    pub illegal_rate: f64,
    pub mean_execution_ms: Option<f64>,
    pub mean_inconsistency: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorStats {
    pub pairs: Vec<String>,
    pub rows: Vec<OperatorRow>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates by the operator of each mutant's newest step. Means cover
/// legal mutants only.
pub fn operator_stats(results: &[MutantResult]) -> OperatorStats {
    let pairs: BTreeSet<&String> = results.iter().flat_map(|r| r.max_r.keys()).collect();
    let mut by_op: BTreeMap<OperatorCode, Vec<&MutantResult>> = BTreeMap::new();
    for r in results {
        by_op.entry(r.operator).or_default().push(r);
    }
    let rows = by_op
        .into_iter()
        .map(|(operator, rs)| {
            let legal: Vec<&&MutantResult> = rs.iter().filter(|r| r.legality.is_legal()).collect();
            let illegal = rs
                .iter()
                .filter(|r| matches!(r.legality, LegalityStatus::Illegal(_)))
                .count();
            let mean_inconsistency = pairs
                .iter()
                .filter_map(|p| {
                    mean(legal.iter().filter_map(|r| r.max_r.get(*p).copied())).map(|m| ((*p).clone(), m))
                })
                .collect();
            OperatorRow {
                operator,
                mutants_generated: rs.len(),
                illegal,
                illegal_rate: illegal as f64 / rs.len() as f64,
                mean_execution_ms: mean(legal.iter().filter_map(|r| r.execution_ms)),
                mean_inconsistency,
            }
        })
        .collect();
    OperatorStats {
        pairs: pairs.into_iter().cloned().collect(),
        rows,
    }
}

pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}

/// `(a,b,c)` with one entry per pair in `pairs` order; `-` where a pair has
/// no legal data.
pub fn format_tuple(pairs: &[String], values: &BTreeMap<String, f64>) -> String {
    let parts: Vec<String> = pairs
        .iter()
        .map(|p| values.get(p).map_or("-".to_string(), |v| format!("{v:.4}")))
        .collect();
    format!("({})", parts.join(","))
}

pub const EMPTY_NOTICE: &str = "no mutants recorded: the statistics table is empty";

impl OperatorStats {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        if self.is_empty() {
            return format!("{EMPTY_NOTICE}\n");
        }
        let header = [
            "operator".to_string(),
            "generated".to_string(),
            "illegal".to_string(),
            "illegal rate".to_string(),
            "exec ms".to_string(),
            format!("inconsistency ({})", self.pairs.join(",")),
        ];
        let mut table: Vec<[String; 6]> = vec![header];
        for r in &self.rows {
            table.push([
                r.operator.name().to_string(),
                r.mutants_generated.to_string(),
                r.illegal.to_string(),
                format_percent(r.illegal_rate),
                r.mean_execution_ms.map_or("-".to_string(), |v| format!("{v:.3}")),
                format_tuple(&self.pairs, &r.mean_inconsistency),
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(op: OperatorCode, legal: bool, ms: f64, r: &[(&str, f64)]) -> MutantResult {
        MutantResult {
            id: "m".into(),
            order: 1,
            operator: op,
            legality: if legal {
                LegalityStatus::Legal
            } else {
                LegalityStatus::Illegal("range".into())
            },
            execution_ms: legal.then_some(ms),
            max_r: r.iter().map(|(p, v)| (p.to_string(), *v)).collect(),
            report_keys: Vec::new(),
        }
    }

    #[test]
    fn illegal_rate_fixture() {
        let mut rs: Vec<MutantResult> = (0..363).map(|_| result(OperatorCode::PM, false, 0.0, &[])).collect();
        rs.extend((0..637).map(|_| result(OperatorCode::PM, true, 1.0, &[])));
        let s = operator_stats(&rs);
        assert_eq!(s.rows[0].illegal_rate, 363.0 / 1000.0);
        assert_eq!(format_percent(s.rows[0].illegal_rate), "36.30%");
        assert!(s.render().contains("36.30%"));
    }

    #[test]
    fn all_legal_is_zero_percent() {
        let s = operator_stats(&[result(OperatorCode::GF, true, 2.0, &[])]);
        assert_eq!(format_percent(s.rows[0].illegal_rate), "0.00%");
    }

    #[test]
    fn single_pair_gives_a_one_element_tuple() {
        let s = operator_stats(&[result(OperatorCode::LA, true, 1.0, &[("a|b", 0.5)])]);
        assert_eq!(format_tuple(&s.pairs, &s.rows[0].mean_inconsistency), "(0.5000)");
    }

    #[test]
    fn means_skip_illegal_mutants() {
        let s = operator_stats(&[
            result(OperatorCode::LA, true, 1.0, &[("a|b", 1.0), ("a|c", 3.0)]),
            result(OperatorCode::LA, true, 3.0, &[("a|b", 2.0)]),
            result(OperatorCode::LA, false, 0.0, &[("a|b", 100.0)]),
        ]);
        let row = &s.rows[0];
        assert_eq!(row.mean_execution_ms, Some(2.0));
        assert_eq!(row.mean_inconsistency["a|b"], 1.5);
        assert_eq!(row.mean_inconsistency["a|c"], 3.0);
        assert_eq!(format_tuple(&s.pairs, &row.mean_inconsistency), "(1.5000,3.0000)");
    }

    #[test]
    fn empty_results_render_a_notice() {
        let s = operator_stats(&[]);
        assert!(s.is_empty());
        assert_eq!(s.render().trim_end(), EMPTY_NOTICE);
    }
}
