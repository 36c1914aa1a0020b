//! Per-record scoring against ground truth.

use std::collections::BTreeSet;

use dashtalk_core::parser::{ExtractionResult, GroupingSpec};
use dashtalk_core::resolver::{FieldPath, MatchStatus, Resolution};
use serde::{Deserialize, Serialize};

use crate::dataset::EvalRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    WidgetType,
    Metric,
    Aggregation,
    Filter,
    Grouping,
}

impl Field {
    pub const ALL: [Field; 5] = [
        Field::WidgetType,
        Field::Metric,
        Field::Aggregation,
        Field::Filter,
        Field::Grouping,
    ];

    fn of(path: FieldPath) -> Option<Field> {
        match path {
            FieldPath::WidgetType => Some(Field::WidgetType),
            FieldPath::Metric => Some(Field::Metric),
            FieldPath::Aggregation => Some(Field::Aggregation),
            FieldPath::Filter(_) => Some(Field::Filter),
            FieldPath::GroupByTag | FieldPath::Direction | FieldPath::MaxResults => Some(Field::Grouping),
            FieldPath::SloName => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    AmbiguousNaming,
    IncompleteExtraction,
    CompleteFailure,
    ImplicitParameter,
    IncorrectGroupingTag,
    WidgetTypeError,
    /// Metric or aggregation errors that fit none of the above.
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 7] = [
        ErrorCategory::AmbiguousNaming,
        ErrorCategory::IncompleteExtraction,
        ErrorCategory::CompleteFailure,
        ErrorCategory::ImplicitParameter,
        ErrorCategory::IncorrectGroupingTag,
        ErrorCategory::WidgetTypeError,
        ErrorCategory::Other,
    ];
}

/// A single-turn prediction after auto-correction. Fields the resolver
/// could not settle without asking are listed in `unsettled`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Prediction {
    pub draft: ExtractionResult,
    pub unsettled: BTreeSet<Field>,
    /// The parse itself failed (transport or unusable output).
    pub failed: bool,
}

impl Prediction {
    pub fn from_resolution(r: &Resolution) -> Self {
        let unsettled = r
            .outcomes
            .iter()
            .filter(|o| matches!(o.status, MatchStatus::Ambiguous | MatchStatus::Unresolvable))
            .filter_map(|o| Field::of(o.field_path))
            .collect();
        Self {
            draft: r.draft.clone(),
            unsettled,
            failed: false,
        }
    }

    pub fn failed() -> Self {
        Self {
            failed: true,
            ..Default::default()
        }
    }

    /// The ground truth itself, as a prediction.
    pub fn from_truth(gt: &EvalRecord) -> Self {
        Self {
            draft: ExtractionResult {
                widget_type: gt.widget_type,
                metric: gt.metric,
                aggregation: gt.aggregation,
                filter: gt.filter.clone(),
                grouping: gt.grouping,
                slo_name: gt.slo_name.clone(),
            },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordScore {
    pub widget_type: bool,
    pub metric: bool,
    pub aggregation: bool,
    pub filter: bool,
    pub grouping: bool,
    pub overall: bool,
    /// Ground-truth filter clauses reproduced exactly.
    pub clauses_matched: usize,
    pub clauses_total: usize,
    pub categories: Vec<ErrorCategory>,
    pub failed: bool,
}

impl RecordScore {
    pub fn field(&self, f: Field) -> bool {
        match f {
            Field::WidgetType => self.widget_type,
            Field::Metric => self.metric,
            Field::Aggregation => self.aggregation,
            Field::Filter => self.filter,
            Field::Grouping => self.grouping,
        }
    }
}

fn grouping_eq(p: Option<&GroupingSpec>, g: Option<&GroupingSpec>) -> bool {
    match (p, g) {
        (None, None) => true,
        (Some(p), Some(g)) => p.is_complete() && p == g,
        _ => false,
    }
}

pub fn score_record(pred: &Prediction, gt: &EvalRecord) -> RecordScore {
    let clauses_total = gt.filter.len();
    if pred.failed {
        return RecordScore {
            widget_type: false,
            metric: false,
            aggregation: false,
            filter: false,
            grouping: false,
            overall: false,
            clauses_matched: 0,
            clauses_total,
            categories: vec![ErrorCategory::CompleteFailure],
            failed: true,
        };
    }
    let d = &pred.draft;
    let ok = |f: Field, eq: bool| eq && !pred.unsettled.contains(&f);
    let widget_type = ok(Field::WidgetType, d.widget_type == gt.widget_type);
    let metric = ok(Field::Metric, d.metric == gt.metric);
    let aggregation = ok(Field::Aggregation, d.aggregation == gt.aggregation);
    let filter = ok(Field::Filter, d.filter == gt.filter);
    let grouping = ok(Field::Grouping, grouping_eq(d.grouping.as_ref(), gt.grouping.as_ref()));
    let clauses_matched = gt
        .filter
        .iter()
        .filter(|(k, v)| d.filter.get(*k) == Some(*v))
        .count();

    let mut categories = Vec::new();
    if !widget_type {
        categories.push(ErrorCategory::WidgetTypeError);
    }
    for (correct, missing) in [
        (metric, d.metric.is_none() && gt.metric.is_some()),
        (aggregation, d.aggregation.is_none() && gt.aggregation.is_some()),
    ] {
        if !correct {
            categories.push(if missing {
                ErrorCategory::ImplicitParameter
            } else {
                ErrorCategory::Other
            });
        }
    }
    if !filter {
        let subset = d.filter.iter().all(|(k, v)| gt.filter.get(k) == Some(v));
        categories.push(if d.filter.is_empty() && !gt.filter.is_empty() {
            ErrorCategory::CompleteFailure
        } else if subset && !pred.unsettled.contains(&Field::Filter) {
            ErrorCategory::IncompleteExtraction
        } else {
            ErrorCategory::AmbiguousNaming
        });
    }
    if !grouping {
        let wrong_tag = matches!(
            (d.grouping.and_then(|g| g.group_by_tag), gt.grouping.and_then(|g| g.group_by_tag)),
            (Some(p), Some(g)) if p != g
        );
        categories.push(if wrong_tag {
            ErrorCategory::IncorrectGroupingTag
        } else {
            ErrorCategory::ImplicitParameter
        });
    }

    RecordScore {
        widget_type,
        metric,
        aggregation,
        filter,
        grouping,
        overall: widget_type && metric && aggregation && filter && grouping,
        clauses_matched,
        clauses_total,
        categories,
        failed: false,
    }
}
