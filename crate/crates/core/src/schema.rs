//! Widget specification: the document a confirmed widget is stored as, the
//! published JSON Schema it validates against, and the data request it
//! implies.

use chrono::{DateTime, Duration, Utc};
use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::parser::{ExtractionResult, GroupingSpec, TagFilter};
use crate::resolver::FieldPath;
use crate::vocab::{Aggregation, Direction, GroupTag, GlobalVocabulary, Metric, WidgetType};

/// The shipped schema document (`schemas/widget.schema.json`).
pub const WIDGET_SCHEMA: &str = include_str!("../../../schemas/widget.schema.json");

pub const DEFAULT_TIME_RANGE_MINUTES: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeRange {
    #[serde(rename = "lastMinutes")]
    pub last_minutes: u32,
}

impl TimeRange {
    pub fn last_minutes(minutes: u32) -> Result<Self, SpecError> {
        if minutes == 0 {
            return Err(SpecError::InvalidTimeRange(minutes));
        }
        Ok(Self {
            last_minutes: minutes,
        })
    }

    pub fn seconds(self) -> i64 {
        i64::from(self.last_minutes) * 60
    }
}

impl Default for TimeRange {
    fn default() -> Self {
        Self {
            last_minutes: DEFAULT_TIME_RANGE_MINUTES,
        }
    }
}

/// A grouping with every field filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grouping {
    #[serde(rename = "groupbyTag")]
    pub group_by_tag: GroupTag,
    pub direction: Direction,
    #[serde(rename = "maxResults")]
    pub max_results: u32,
}

impl Grouping {
    pub fn from_spec(g: &GroupingSpec) -> Option<Self> {
        Some(Self {
            group_by_tag: g.group_by_tag?,
            direction: g.direction?,
            max_results: g.max_results?,
        })
    }
}

impl From<Grouping> for GroupingSpec {
    fn from(g: Grouping) -> Self {
        GroupingSpec::new(g.group_by_tag, g.direction, g.max_results)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub label: String,
    pub metric: Metric,
    pub aggregation: Aggregation,
    #[serde(rename = "tagFilterExpression")]
    pub tag_filter: TagFilter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<Grouping>,
}

impl DataSource {
    /// `MEAN(latency)` followed by the filter in brackets, if any.
    pub fn default_label(metric: Metric, aggregation: Aggregation, filter: &TagFilter) -> String {
        let head = format!("{aggregation}({metric})");
        if filter.is_empty() {
            return head;
        }
        let clauses: Vec<String> = filter.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{head} [{}]", clauses.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartStyle {
    Line,
    Bar,
    Pie,
    Number,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rendering {
    pub style: ChartStyle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donut: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparkline: Option<bool>,
}

impl Rendering {
    pub fn default_for(widget_type: WidgetType) -> Self {
        let plain = |style| Rendering {
            style,
            donut: None,
            sparkline: None,
        };
        match widget_type {
            WidgetType::Pie => Rendering {
                donut: Some(false),
                ..plain(ChartStyle::Pie)
            },
            WidgetType::BigNumber => Rendering {
                sparkline: Some(false),
                ..plain(ChartStyle::Number)
            },
            WidgetType::TopList => plain(ChartStyle::Bar),
            _ => plain(ChartStyle::Line),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WidgetConfig {
    Chart {
        rendering: Rendering,
        /// Passed through untouched.
        #[serde(default)]
        formatting: Map<String, Value>,
        #[serde(rename = "dataSources")]
        data_sources: Vec<DataSource>,
    },
    Slo { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetSpec {
    #[serde(rename = "type")]
    pub widget_type: WidgetType,
    pub title: String,
    pub config: WidgetConfig,
    pub time_range: TimeRange,
    pub widget_id: String,
    pub created_at: DateTime<Utc>,
}

impl WidgetSpec {
    /// Pretty JSON in canonical key order, LF line endings.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("widget specs always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn data_sources(&self) -> &[DataSource] {
        match &self.config {
            WidgetConfig::Chart { data_sources, .. } => data_sources,
            WidgetConfig::Slo { .. } => &[],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("draft is not complete; missing or invalid: {}", fields_list(.fields))]
    Contract { fields: Vec<FieldPath> },
    #[error("time range must be at least one minute, got {0}")]
    InvalidTimeRange(u32),
}

fn fields_list(fields: &[FieldPath]) -> String {
    fields
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Fields that keep a draft from being built, in clarification order.
pub fn contract_violations(draft: &ExtractionResult, vocab: &GlobalVocabulary) -> Vec<FieldPath> {
    let mut missing = Vec::new();
    let Some(widget_type) = draft.widget_type else {
        return vec![FieldPath::WidgetType];
    };
    if widget_type == WidgetType::Slo2 {
        if draft.slo_name.as_deref().map_or(true, |n| n.trim().is_empty()) {
            missing.push(FieldPath::SloName);
        }
        return missing;
    }
    if draft.metric.is_none() {
        missing.push(FieldPath::Metric);
    }
    match (draft.metric, draft.aggregation) {
        (_, None) => missing.push(FieldPath::Aggregation),
        (Some(m), Some(a)) if !vocab.allows(m, a) => missing.push(FieldPath::Aggregation),
        _ => {}
    }
    let grouping_checked = widget_type == WidgetType::TopList
        || (widget_type.supports_grouping() && draft.grouping.is_some());
    if grouping_checked {
        let g = draft.grouping.unwrap_or_default();
        if g.group_by_tag.is_none() {
            missing.push(FieldPath::GroupByTag);
        }
        if g.direction.is_none() {
            missing.push(FieldPath::Direction);
        }
        if g.max_results.is_none() {
            missing.push(FieldPath::MaxResults);
        }
    }
    missing
}

/// Builds the widget document for a complete draft. Grouping on a widget
/// type that cannot carry one is dropped.
pub fn build_widget_spec(
    draft: &ExtractionResult,
    time_range: TimeRange,
    vocab: &GlobalVocabulary,
    widget_id: impl Into<String>,
    created_at: DateTime<Utc>,
) -> Result<WidgetSpec, SpecError> {
    if time_range.last_minutes == 0 {
        return Err(SpecError::InvalidTimeRange(0));
    }
    let fields = contract_violations(draft, vocab);
    if !fields.is_empty() {
        return Err(SpecError::Contract { fields });
    }
    let widget_type = draft.widget_type.expect("checked above");
    let (title, config) = if widget_type == WidgetType::Slo2 {
        let name = draft.slo_name.clone().expect("checked above");
        (format!("SLO: {name}"), WidgetConfig::Slo { name })
    } else {
        let metric = draft.metric.expect("checked above");
        let aggregation = draft.aggregation.expect("checked above");
        let grouping = if widget_type.supports_grouping() {
            draft.grouping.as_ref().and_then(Grouping::from_spec)
        } else {
            None
        };
        let label = DataSource::default_label(metric, aggregation, &draft.filter);
        let source = DataSource {
            label: label.clone(),
            metric,
            aggregation,
            tag_filter: draft.filter.clone(),
            grouping,
        };
        (
            label,
            WidgetConfig::Chart {
                rendering: Rendering::default_for(widget_type),
                formatting: Map::new(),
                data_sources: vec![source],
            },
        )
    };
    Ok(WidgetSpec {
        widget_type,
        title,
        config,
        time_range,
        widget_id: widget_id.into(),
        created_at,
    })
}

/// Parameters for one metric query against the monitoring API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricQuery {
    pub metric: Metric,
    pub aggregation: Aggregation,
    /// Conjunction string, empty when unfiltered.
    pub filter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_by: Option<Grouping>,
    pub window_seconds: i64,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl MetricQuery {
    /// Query-string form: `metric`, `aggregation`, `window`, `end`, and when
    /// present `filter`, `groupBy`, `limit`, `order`.
    pub fn query_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = vec![
            ("metric".to_string(), self.metric.to_string()),
            ("aggregation".to_string(), self.aggregation.to_string()),
            ("window".to_string(), self.window_seconds.to_string()),
            ("end".to_string(), self.end.timestamp().to_string()),
        ];
        if !self.filter.is_empty() {
            pairs.push(("filter".into(), self.filter.clone()));
        }
        if let Some(g) = &self.group_by {
            pairs.push(("groupBy".into(), g.group_by_tag.to_string()));
            pairs.push(("limit".into(), g.max_results.to_string()));
            pairs.push(("order".into(), g.direction.to_string()));
        }
        pairs
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataRequest {
    Metrics { queries: Vec<MetricQuery> },
    Slo { name: String },
}

/// The data requests a spec implies, with its window ending at `now`.
pub fn data_request_params(spec: &WidgetSpec, now: DateTime<Utc>) -> DataRequest {
    match &spec.config {
        WidgetConfig::Slo { name } => DataRequest::Slo { name: name.clone() },
        WidgetConfig::Chart { data_sources, .. } => {
            let window_seconds = spec.time_range.seconds();
            let queries = data_sources
                .iter()
                .map(|ds| MetricQuery {
                    metric: ds.metric,
                    aggregation: ds.aggregation,
                    filter: ds.tag_filter.conjunction(),
                    group_by: ds.grouping,
                    window_seconds,
                    start: now - Duration::seconds(window_seconds),
                    end: now,
                })
                .collect();
            DataRequest::Metrics { queries }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// JSON pointer into the document; empty for document-level problems.
    pub pointer: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub syntax_error: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn pointers(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.pointer.as_str()).collect()
    }
}

static VALIDATOR: Lazy<jsonschema::Validator> = Lazy::new(|| {
    let schema: Value = serde_json::from_str(WIDGET_SCHEMA).expect("shipped schema is JSON");
    jsonschema::validator_for(&schema).expect("shipped schema compiles")
});

pub fn schema_document() -> Value {
    serde_json::from_str(WIDGET_SCHEMA).expect("shipped schema is JSON")
}

/// Checks a widget document against the shipped schema.
pub fn validate_widget_json(document: &str) -> ValidationReport {
    match serde_json::from_str::<Value>(document) {
        Ok(value) => validate_widget_value(&value),
        Err(e) => ValidationReport {
            syntax_error: true,
            violations: vec![Violation {
                pointer: String::new(),
                message: format!("syntax error: {e}"),
            }],
        },
    }
}

pub fn validate_widget_value(value: &Value) -> ValidationReport {
    let mut violations: Vec<Violation> = VALIDATOR
        .iter_errors(value)
        .map(|e| Violation {
            pointer: e.instance_path.to_string(),
            message: e.to_string(),
        })
        .collect();
    violations.sort_by(|a, b| a.pointer.cmp(&b.pointer).then_with(|| a.message.cmp(&b.message)));
    violations.dedup();
    ValidationReport {
        syntax_error: false,
        violations,
    }
}
