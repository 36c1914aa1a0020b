//! Aggregated accuracy over a dataset run.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::EvalRecord;
use crate::score::{ErrorCategory, Field, RecordScore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Count {
    pub correct: usize,
    pub total: usize,
    pub percentage: f64,
}

impl Count {
    pub fn new(correct: usize, total: usize) -> Self {
        let percentage = if total == 0 {
            0.0
        } else {
            100.0 * correct as f64 / total as f64
        };
        Self {
            correct,
            total,
            percentage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub dataset: String,
    pub dataset_sha256: String,
    pub mode: String,
    pub few_shot: bool,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub query: String,
    #[serde(flatten)]
    pub score: RecordScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub run: RunInfo,
    pub records: usize,
    /// Every field over every record.
    pub per_field: BTreeMap<Field, Count>,
    /// Grouping over the records whose ground truth has a grouping.
    pub grouping_subset: Count,
    pub grouping_subset_total: usize,
    pub overall: Count,
    /// Ground-truth filter clauses reproduced, summed over records.
    pub filter_clause_recall: Count,
    pub failed_records: usize,
    pub error_breakdown: BTreeMap<ErrorCategory, usize>,
    pub per_record: Vec<RecordResult>,
}

impl AccuracyReport {
    pub fn build(run: RunInfo, records: &[EvalRecord], scores: Vec<RecordScore>) -> Self {
        assert_eq!(records.len(), scores.len(), "one score per record");
        let n = records.len();
        let per_field = Field::ALL
            .iter()
            .map(|f| (*f, Count::new(scores.iter().filter(|s| s.field(*f)).count(), n)))
            .collect();
        let subset: Vec<&RecordScore> = records
            .iter()
            .zip(&scores)
            .filter(|(r, _)| r.grouping.is_some())
            .map(|(_, s)| s)
            .collect();
        let grouping_subset = Count::new(subset.iter().filter(|s| s.grouping).count(), subset.len());
        let mut error_breakdown: BTreeMap<ErrorCategory, usize> =
            ErrorCategory::ALL.iter().map(|c| (*c, 0)).collect();
        for c in scores.iter().flat_map(|s| &s.categories) {
            *error_breakdown.entry(*c).or_default() += 1;
        }
        Self {
            run,
            records: n,
            per_field,
            grouping_subset,
            grouping_subset_total: subset.len(),
            overall: Count::new(scores.iter().filter(|s| s.overall).count(), n),
            filter_clause_recall: Count::new(
                scores.iter().map(|s| s.clauses_matched).sum(),
                scores.iter().map(|s| s.clauses_total).sum(),
            ),
            failed_records: scores.iter().filter(|s| s.failed).count(),
            error_breakdown,
            per_record: records
                .iter()
                .zip(scores)
                .map(|(r, score)| RecordResult {
                    query: r.query.clone(),
                    score,
                })
                .collect(),
        }
    }

    pub fn field(&self, f: Field) -> Count {
        self.per_field[&f]
    }

    pub fn overall_vector(&self) -> Vec<bool> {
        self.per_record.iter().map(|r| r.score.overall).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// The accuracy table: one row, one column per field plus overall. The
    /// grouping column is over the grouping subset.
    pub fn render_table(&self) -> String {
        let pct = |c: Count| format!("{:.2}%", c.percentage);
        let headers = ["Widget Type", "Metric", "Aggregation", "Tag Filter", "Grouping", "Overall"];
        let cells = [
            pct(self.field(Field::WidgetType)),
            pct(self.field(Field::Metric)),
            pct(self.field(Field::Aggregation)),
            pct(self.field(Field::Filter)),
            pct(self.grouping_subset),
            pct(self.overall),
        ];
        let widths: Vec<usize> = headers
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.len().max(c.len()))
            .collect();
        let row = |items: Vec<String>| {
            let padded: Vec<String> = items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect();
            format!("| {} |", padded.join(" | "))
        };
        let mut out = String::new();
        writeln!(out, "{}", row(headers.iter().map(|s| s.to_string()).collect())).unwrap();
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        writeln!(out, "|-{}-|", rule.join("-|-")).unwrap();
        writeln!(out, "{}", row(cells.to_vec())).unwrap();
        writeln!(
            out,
            "\n{} records; grouping over {} grouped records ({:.2}% over all); tag filter clause recall {:.2}%",
            self.records,
            self.grouping_subset_total,
            self.field(Field::Grouping).percentage,
            self.filter_clause_recall.percentage
        )
        .unwrap();
        let errors: Vec<String> = self
            .error_breakdown
            .iter()
            .map(|(c, n)| format!("{}={n}", serde_json::to_value(c).unwrap().as_str().unwrap()))
            .collect();
        writeln!(out, "errors: {}", errors.join(", ")).unwrap();
        out
    }
}
