//! Deployment-invariant vocabulary: widget types, metrics and their
//! aggregations, filter keys, call types and grouping options.
//!
//! The vocabulary ships as an embedded JSON document whose layout is also
//! the "global knowledge base" block substituted into the extraction prompt.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

const EMBEDDED_VOCABULARY: &str = include_str!("../assets/global_vocabulary.json");

/// The literal token models use for "not provided".
pub const NULL_TOKEN: &str = "Null";

/// Returns true for any casing of `Null` (the models are not consistent).
pub fn is_null_token(s: &str) -> bool {
    s.trim().eq_ignore_ascii_case(NULL_TOKEN)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("vocabulary token {token:?} is not a valid {kind}")]
pub struct UnknownToken {
    pub kind: &'static str,
    pub token: String,
}

macro_rules! vocab_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }

            /// Case-insensitive lookup with surrounding whitespace ignored.
            pub fn parse_loose(s: &str) -> Option<Self> {
                let s = s.trim();
                Self::ALL.iter().copied().find(|v| v.as_str().eq_ignore_ascii_case(s))
            }
        }

        impl FromStr for $name {
            type Err = UnknownToken;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| UnknownToken { kind: $kind, token: s.to_string() })
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                Self::from_str(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

vocab_enum!(
    /// Concrete widget types. The "Null" sentinel is modelled as `Option::None`.
    WidgetType, "widget type" {
        BigNumber => "bigNumber",
        TimeSeries => "TIME_SERIES",
        Pie => "pie",
        Slo2 => "slo2",
        TopList => "topList",
    }
);

vocab_enum!(Metric, "metric" {
    Calls => "calls",
    Latency => "latency",
    ErroneousCalls => "erroneousCalls",
    Errors => "errors",
});

vocab_enum!(Aggregation, "aggregation" {
    Sum => "SUM",
    PerSecond => "PER_SECOND",
    Mean => "MEAN",
    Min => "MIN",
    Max => "MAX",
    P25 => "P25",
    P50 => "P50",
    P75 => "P75",
    P90 => "P90",
    P95 => "P95",
    P98 => "P98",
    P99 => "P99",
});

vocab_enum!(
    /// Filter keys, declared in lexicographic order of their token so that
    /// the derived `Ord` sorts clauses alphabetically.
    FilterKey, "filter key" {
        ApplicationName => "application.name",
        CallErroneous => "call.erroneous",
        CallType => "call.type",
        EndpointName => "endpoint.name",
        ServiceName => "service.name",
        TechnologyName => "technology.name",
    }
);

vocab_enum!(CallType, "call type" {
    Batch => "BATCH",
    Database => "DATABASE",
    Http => "HTTP",
    Graphql => "GRAPHQL",
    Rpc => "RPC",
    Messaging => "MESSAGING",
    Opentelemetry => "OPENTELEMETRY",
});

vocab_enum!(GroupTag, "grouping tag" {
    CallErrorMessage => "call.error.message",
    EndpointName => "endpoint.name",
    CallHttpPath => "call.http.path",
    CallHttpStatus => "call.http.status",
    HttpUrl => "http.url",
    ServiceName => "service.name",
});

vocab_enum!(Direction, "direction" {
    Asc => "ASC",
    Desc => "DESC",
});

impl WidgetType {
    /// Accepts the prompt tokens plus the dataset spelling `time_series`.
    pub fn parse_token(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("time_series") || s.eq_ignore_ascii_case("time series") {
            return Some(WidgetType::TimeSeries);
        }
        Self::parse_loose(s)
    }

    /// Whether the widget's data source may carry a grouping criterion.
    pub fn supports_grouping(self) -> bool {
        matches!(self, WidgetType::TimeSeries | WidgetType::TopList)
    }
}

impl FilterKey {
    /// Keys whose values name runtime entities and go through fuzzy matching.
    pub fn entity_kind(self) -> Option<crate::catalog::EntityKind> {
        use crate::catalog::EntityKind;
        match self {
            FilterKey::ServiceName => Some(EntityKind::Services),
            FilterKey::ApplicationName => Some(EntityKind::Applications),
            FilterKey::EndpointName => Some(EntityKind::Endpoints),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid vocabulary configuration at `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidgetTypeEntry {
    /// `None` for the Null sentinel entry.
    pub widget_type: Option<WidgetType>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricEntry {
    pub metric: Metric,
    pub description: String,
    pub aggregations: Vec<Aggregation>,
}

/// Type I knowledge: identical for every deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalVocabulary {
    widget_types: Vec<WidgetTypeEntry>,
    metrics: Vec<MetricEntry>,
    filter_keys: Vec<FilterKey>,
    call_types: Vec<CallType>,
    grouping_tags: Vec<GroupTag>,
    directions: Vec<Direction>,
    max_results_options: Vec<u32>,
    document: Value,
}

/// The fixed page sizes a grouping may request.
pub const MAX_RESULTS_OPTIONS: [u32; 4] = [5, 10, 20, 50];

impl GlobalVocabulary {
    /// The vocabulary compiled into the binary.
    pub fn embedded() -> Self {
        load_global_vocabulary(EMBEDDED_VOCABULARY).expect("embedded vocabulary is well-formed")
    }

    pub fn widget_type_entries(&self) -> &[WidgetTypeEntry] {
        &self.widget_types
    }

    /// The five concrete widget types in vocabulary order.
    pub fn widget_types(&self) -> Vec<WidgetType> {
        self.widget_types
            .iter()
            .filter_map(|e| e.widget_type)
            .collect()
    }

    pub fn metrics(&self) -> &[MetricEntry] {
        &self.metrics
    }

    pub fn metric_names(&self) -> Vec<Metric> {
        self.metrics.iter().map(|m| m.metric).collect()
    }

    pub fn aggregations_for(&self, metric: Metric) -> &[Aggregation] {
        self.metrics
            .iter()
            .find(|m| m.metric == metric)
            .map(|m| m.aggregations.as_slice())
            .unwrap_or(&[])
    }

    pub fn allows(&self, metric: Metric, aggregation: Aggregation) -> bool {
        self.aggregations_for(metric).contains(&aggregation)
    }

    /// Union of every metric's aggregations, in canonical aggregation order.
    pub fn all_aggregations(&self) -> Vec<Aggregation> {
        Aggregation::ALL
            .iter()
            .copied()
            .filter(|a| self.metrics.iter().any(|m| m.aggregations.contains(a)))
            .collect()
    }

    pub fn filter_keys(&self) -> &[FilterKey] {
        &self.filter_keys
    }

    pub fn call_types(&self) -> &[CallType] {
        &self.call_types
    }

    pub fn grouping_tags(&self) -> &[GroupTag] {
        &self.grouping_tags
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn max_results_options(&self) -> &[u32] {
        &self.max_results_options
    }

    /// The raw document, as loaded.
    pub fn document(&self) -> &Value {
        &self.document
    }

    /// `{"type": {...}}` rendered with four-space indentation, as embedded in
    /// the widget-type prompt.
    pub fn widget_type_descriptions_json(&self) -> String {
        let mut doc = Map::new();
        doc.insert("type".into(), self.document["type"].clone());
        pretty4(&Value::Object(doc))
    }

    /// The whole vocabulary document rendered with four-space indentation.
    pub fn knowledge_json(&self) -> String {
        pretty4(&self.document)
    }
}

pub(crate) fn pretty4(value: &Value) -> String {
    let mut buf = Vec::new();
    let fmt = serde_json::ser::PrettyFormatter::with_indent(b"    ");
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser).expect("serializing a Value cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Parses and validates a vocabulary document. Every closed set must match
/// the supported vocabulary exactly; a violation names the offending field.
pub fn load_global_vocabulary(source: &str) -> Result<GlobalVocabulary, ConfigError> {
    let document: Value =
        serde_json::from_str(source).map_err(|e| ConfigError::new("$", e.to_string()))?;
    let root = document
        .as_object()
        .ok_or_else(|| ConfigError::new("$", "expected a JSON object"))?;

    let types = section(root, "type")?;
    let mut widget_types = Vec::new();
    for (token, entry) in types {
        let field = format!("type.{token}");
        let widget_type = if token == NULL_TOKEN {
            None
        } else {
            Some(
                token
                    .parse::<WidgetType>()
                    .map_err(|e| ConfigError::new(&field, e.to_string()))?,
            )
        };
        widget_types.push(WidgetTypeEntry {
            widget_type,
            description: description(entry, &field)?,
        });
    }
    require_exact(
        "type",
        widget_types.iter().map(|e| e.widget_type),
        WidgetType::ALL.iter().copied().map(Some).chain([None]),
        |t| t.map(|t| t.as_str()).unwrap_or(NULL_TOKEN).to_string(),
    )?;

    let mut metrics = Vec::new();
    for (token, entry) in section(root, "metric")? {
        let field = format!("metric.{token}");
        let metric = token
            .parse::<Metric>()
            .map_err(|e| ConfigError::new(&field, e.to_string()))?;
        let aggs_field = format!("{field}.aggregations");
        let aggregations = string_list(entry.get("aggregations"), &aggs_field)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.parse::<Aggregation>()
                    .map_err(|e| ConfigError::new(format!("{aggs_field}[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if aggregations.is_empty() {
            return Err(ConfigError::new(aggs_field, "at least one aggregation is required"));
        }
        metrics.push(MetricEntry {
            metric,
            description: description(entry, &field)?,
            aggregations,
        });
    }
    require_exact(
        "metric",
        metrics.iter().map(|m| m.metric),
        Metric::ALL.iter().copied(),
        |m| m.to_string(),
    )?;

    let filter = section(root, "filter")?;
    let filter_keys = filter
        .keys()
        .map(|k| {
            k.parse::<FilterKey>()
                .map_err(|e| ConfigError::new(format!("filter.{k}"), e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    require_exact("filter", filter_keys.iter().copied(), FilterKey::ALL.iter().copied(), |k| {
        k.to_string()
    })?;
    let call_types: Vec<CallType> = parse_values(filter, "filter", "call.type")?;
    require_exact(
        "filter.call.type.values",
        call_types.iter().copied(),
        CallType::ALL.iter().copied(),
        |c| c.to_string(),
    )?;
    let erroneous = string_list(
        filter.get("call.erroneous").and_then(|e| e.get("values")),
        "filter.call.erroneous.values",
    )?;
    require_exact(
        "filter.call.erroneous.values",
        erroneous.iter().map(String::as_str),
        ["true", "false"].into_iter(),
        |s| s.to_string(),
    )?;

    let grouping = section(root, "grouping")?;
    let grouping_tags: Vec<GroupTag> = parse_values(grouping, "grouping", "groupbyTag")?;
    require_exact(
        "grouping.groupbyTag.values",
        grouping_tags.iter().copied(),
        GroupTag::ALL.iter().copied(),
        |t| t.to_string(),
    )?;
    let directions: Vec<Direction> = parse_values(grouping, "grouping", "direction")?;
    require_exact(
        "grouping.direction.values",
        directions.iter().copied(),
        Direction::ALL.iter().copied(),
        |d| d.to_string(),
    )?;
    let max_field = "grouping.maxResults.values";
    let max_results_options = grouping
        .get("maxResults")
        .and_then(|m| m.get("values"))
        .and_then(Value::as_array)
        .ok_or_else(|| ConfigError::new(max_field, "missing array"))?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_u64()
                .map(|n| n as u32)
                .ok_or_else(|| ConfigError::new(format!("{max_field}[{i}]"), "expected an integer"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    require_exact(
        max_field,
        max_results_options.iter().copied(),
        MAX_RESULTS_OPTIONS.iter().copied(),
        |n| n.to_string(),
    )?;

    Ok(GlobalVocabulary {
        widget_types,
        metrics,
        filter_keys,
        call_types,
        grouping_tags,
        directions,
        max_results_options,
        document,
    })
}

fn section<'a>(root: &'a Map<String, Value>, name: &str) -> Result<&'a Map<String, Value>, ConfigError> {
    root.get(name)
        .ok_or_else(|| ConfigError::new(name, "section is missing"))?
        .as_object()
        .ok_or_else(|| ConfigError::new(name, "expected an object"))
}

fn description(entry: &Value, field: &str) -> Result<String, ConfigError> {
    entry
        .get("description")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ConfigError::new(format!("{field}.description"), "missing string"))
}

fn string_list(value: Option<&Value>, field: &str) -> Result<Vec<String>, ConfigError> {
    let arr = value
        .and_then(Value::as_array)
        .ok_or_else(|| ConfigError::new(field, "missing array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| ConfigError::new(format!("{field}[{i}]"), "expected a string"))
        })
        .collect()
}

fn parse_values<T: FromStr<Err = UnknownToken>>(
    section: &Map<String, Value>,
    section_name: &str,
    key: &str,
) -> Result<Vec<T>, ConfigError> {
    let field = format!("{section_name}.{key}.values");
    string_list(section.get(key).and_then(|e| e.get("values")), &field)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            s.parse::<T>()
                .map_err(|e| ConfigError::new(format!("{field}[{i}]"), e.to_string()))
        })
        .collect()
}

/// Set equality between what the document lists and what is supported.
fn require_exact<T: PartialEq>(
    field: &str,
    found: impl Iterator<Item = T>,
    expected: impl Iterator<Item = T>,
    name: impl Fn(&T) -> String,
) -> Result<(), ConfigError> {
    let found: Vec<T> = found.collect();
    let expected: Vec<T> = expected.collect();
    for (i, item) in found.iter().enumerate() {
        if found[..i].contains(item) {
            return Err(ConfigError::new(field, format!("duplicate entry {}", name(item))));
        }
    }
    if let Some(missing) = expected.iter().find(|e| !found.contains(e)) {
        return Err(ConfigError::new(field, format!("missing entry {}", name(missing))));
    }
    if let Some(extra) = found.iter().find(|f| !expected.contains(f)) {
        return Err(ConfigError::new(field, format!("unsupported entry {}", name(extra))));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_vocabulary_has_expected_sets() {
        let v = GlobalVocabulary::embedded();
        assert!(v.aggregations_for(Metric::Latency).contains(&Aggregation::Mean));
        assert!(v.aggregations_for(Metric::Latency).contains(&Aggregation::P95));
        assert!(v.widget_types().contains(&WidgetType::Slo2));
        assert_eq!(v.widget_types().len(), 5);
        assert_eq!(v.widget_type_entries().len(), 6);
        assert_eq!(v.max_results_options(), &[5, 10, 20, 50]);
        assert_eq!(v.filter_keys().len(), 6);
        assert_eq!(v.call_types().len(), 7);
        assert_eq!(v.grouping_tags().len(), 6);
        for m in v.metrics() {
            assert!(!m.aggregations.is_empty());
        }
        assert_eq!(v.all_aggregations().len(), Aggregation::ALL.len());
    }

    #[test]
    fn missing_metric_section_is_a_config_error() {
        let mut doc: Value = serde_json::from_str(EMBEDDED_VOCABULARY).unwrap();
        doc.as_object_mut().unwrap().remove("metric");
        let err = load_global_vocabulary(&doc.to_string()).unwrap_err();
        assert_eq!(err.field, "metric");
    }

    #[test]
    fn unknown_aggregation_names_its_field() {
        let mut doc: Value = serde_json::from_str(EMBEDDED_VOCABULARY).unwrap();
        doc["metric"]["calls"]["aggregations"] = serde_json::json!(["SUM", "AVG"]);
        let err = load_global_vocabulary(&doc.to_string()).unwrap_err();
        assert_eq!(err.field, "metric.calls.aggregations[1]");
    }

    #[test]
    fn incomplete_widget_types_rejected() {
        let mut doc: Value = serde_json::from_str(EMBEDDED_VOCABULARY).unwrap();
        doc["type"].as_object_mut().unwrap().remove("slo2");
        let err = load_global_vocabulary(&doc.to_string()).unwrap_err();
        assert_eq!(err.field, "type");
        assert!(err.message.contains("slo2"));
    }

    #[test]
    fn extra_max_results_rejected() {
        let mut doc: Value = serde_json::from_str(EMBEDDED_VOCABULARY).unwrap();
        doc["grouping"]["maxResults"]["values"] = serde_json::json!([5, 10, 20, 50, 100]);
        let err = load_global_vocabulary(&doc.to_string()).unwrap_err();
        assert_eq!(err.field, "grouping.maxResults.values");
    }

    #[test]
    fn token_parsing() {
        assert_eq!(WidgetType::parse_token("time_series"), Some(WidgetType::TimeSeries));
        assert_eq!(WidgetType::parse_token(" TOPLIST "), Some(WidgetType::TopList));
        assert_eq!(WidgetType::parse_token("Null"), None);
        assert!("AVG".parse::<Aggregation>().is_err());
        assert!(is_null_token("null"));
        assert!(is_null_token(" NULL "));
    }

    #[test]
    fn filter_keys_sort_alphabetically() {
        let mut tokens: Vec<&str> = FilterKey::ALL.iter().map(|k| k.as_str()).collect();
        let sorted = {
            let mut t = tokens.clone();
            t.sort();
            t
        };
        tokens.sort_by_key(|t| t.parse::<FilterKey>().unwrap());
        assert_eq!(tokens, sorted);
    }
}
