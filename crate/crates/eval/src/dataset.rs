//! Ground-truth datasets in JSON Lines form.
//!
//! One object per line:
//! `{"query", "widget_type", "metric", "aggregation", "filter", "grouping"}`,
//! plus an optional `slo_name` used only to script oracle replies. The
//! string `"null"` (or JSON null) marks a field the query leaves out.

use std::collections::BTreeMap;
use std::path::Path;

use dashtalk_core::parser::{parse_max_results, GroupingSpec, TagFilter};
use dashtalk_core::vocab::{
    is_null_token, Aggregation, CallType, Direction, FilterKey, GroupTag, Metric, WidgetType,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalRecord {
    pub query: String,
    pub widget_type: Option<WidgetType>,
    pub metric: Option<Metric>,
    pub aggregation: Option<Aggregation>,
    pub filter: TagFilter,
    pub grouping: Option<GroupingSpec>,
    pub slo_name: Option<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<EvalRecord>,
    /// Hex SHA-256 of the file bytes.
    pub sha256: String,
}

impl Dataset {
    pub fn grouping_count(&self) -> usize {
        self.records.iter().filter(|r| r.grouping.is_some()).count()
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let records = parse_dataset(&text)?;
    if records.is_empty() {
        tracing::warn!(path = %path.display(), "dataset is empty");
    }
    Ok(Dataset {
        records,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub fn parse_dataset(text: &str) -> Result<Vec<EvalRecord>, DatasetError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let invalid = |message: String| DatasetError::Invalid {
            line: line_no,
            message,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
        records.push(parse_record(&value).map_err(invalid)?);
    }
    Ok(records)
}

fn nullish(v: Option<&Value>) -> bool {
    match v {
        None | Some(Value::Null) => true,
        Some(Value::String(s)) => is_null_token(s),
        _ => false,
    }
}

fn token<'a>(obj: &'a Value, field: &str) -> Result<Option<&'a str>, String> {
    let v = obj.get(field);
    if nullish(v) {
        return Ok(None);
    }
    v.and_then(Value::as_str)
        .map(Some)
        .ok_or_else(|| format!("`{field}` must be a string or null"))
}

fn parse_record(obj: &Value) -> Result<EvalRecord, String> {
    let query = obj
        .get("query")
        .and_then(Value::as_str)
        .filter(|q| !q.trim().is_empty())
        .ok_or("`query` must be a non-empty string")?
        .to_string();
    let widget_type = token(obj, "widget_type")?
        .map(|t| WidgetType::parse_token(t).ok_or_else(|| format!("unknown widget type `{t}`")))
        .transpose()?;
    let metric = token(obj, "metric")?
        .map(|t| t.parse::<Metric>().map_err(|e| e.to_string()))
        .transpose()?;
    let aggregation = token(obj, "aggregation")?
        .map(|t| t.parse::<Aggregation>().map_err(|e| e.to_string()))
        .transpose()?;

    let mut filter = TagFilter::new();
    match obj.get("filter") {
        f if nullish(f) => {}
        Some(Value::Object(map)) => {
            for (k, v) in map {
                let key: FilterKey = k.parse().map_err(|e: dashtalk_core::vocab::UnknownToken| e.to_string())?;
                let v = v.as_str().ok_or_else(|| format!("filter `{k}` must be a string"))?;
                let v = match key {
                    FilterKey::CallType => CallType::parse_loose(v)
                        .ok_or_else(|| format!("unknown call type `{v}`"))?
                        .to_string(),
                    FilterKey::CallErroneous if v == "true" || v == "false" => v.to_string(),
                    FilterKey::CallErroneous => return Err(format!("call.erroneous must be true or false, got `{v}`")),
                    _ if v.trim().is_empty() => return Err(format!("filter `{k}` is empty")),
                    _ => v.to_string(),
                };
                filter.insert(key, v);
            }
        }
        _ => return Err("`filter` must be an object".into()),
    }

    let grouping = match obj.get("grouping") {
        g if nullish(g) => None,
        Some(g @ Value::Object(_)) => {
            let tag = token(g, "groupbyTag")?
                .ok_or("grouping needs groupbyTag")?
                .parse::<GroupTag>()
                .map_err(|e| e.to_string())?;
            let direction = token(g, "direction")?
                .ok_or("grouping needs direction")?
                .parse::<Direction>()
                .map_err(|e| e.to_string())?;
            let max = parse_max_results(g.get("maxResults").unwrap_or(&Value::Null))
                .map_err(|e| e.to_string())?
                .ok_or("grouping needs maxResults")?;
            Some(GroupingSpec::new(tag, direction, max))
        }
        _ => return Err("`grouping` must be an object or null".into()),
    };

    let slo_name = obj.get("slo_name").and_then(Value::as_str).map(str::to_string);
    Ok(EvalRecord {
        query,
        widget_type,
        metric,
        aggregation,
        filter,
        grouping,
        slo_name,
    })
}

#[derive(Serialize, Deserialize)]
struct Row<'a> {
    query: &'a str,
    widget_type: &'a str,
    metric: &'a str,
    aggregation: &'a str,
    filter: BTreeMap<&'a str, &'a str>,
    grouping: RowGrouping,
    #[serde(skip_serializing_if = "Option::is_none")]
    slo_name: Option<&'a str>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RowGrouping {
    Null(String),
    Set {
        #[serde(rename = "groupbyTag")]
        tag: String,
        direction: String,
        #[serde(rename = "maxResults")]
        max_results: u32,
    },
}

impl EvalRecord {
    /// One JSONL line, fields in file order.
    pub fn to_json_line(&self) -> String {
        let null = |t: Option<&'static str>| t.unwrap_or("null");
        let grouping = match self.grouping {
            Some(GroupingSpec {
                group_by_tag: Some(t),
                direction: Some(d),
                max_results: Some(n),
            }) => RowGrouping::Set {
                tag: t.to_string(),
                direction: d.to_string(),
                max_results: n,
            },
            _ => RowGrouping::Null("null".into()),
        };
        let row = Row {
            query: &self.query,
            widget_type: null(self.widget_type.map(|t| t.as_str())),
            metric: null(self.metric.map(|m| m.as_str())),
            aggregation: null(self.aggregation.map(|a| a.as_str())),
            filter: self.filter.iter().map(|(k, v)| (k.as_str(), v)).collect(),
            grouping,
            slo_name: self.slo_name.as_deref(),
        };
        serde_json::to_string(&row).expect("rows serialize")
    }
}

pub fn to_jsonl(records: &[EvalRecord]) -> String {
    records.iter().map(|r| r.to_json_line() + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nulls_and_canonical_tokens() {
        let r = parse_dataset(
            r#"{"query":"q","widget_type":"time_series","metric":"null","aggregation":null,"filter":{"call.type":"http"},"grouping":"null"}"#,
        )
        .unwrap();
        assert_eq!(r[0].widget_type, Some(WidgetType::TimeSeries));
        assert_eq!(r[0].metric, None);
        assert_eq!(r[0].aggregation, None);
        assert_eq!(r[0].filter.get(FilterKey::CallType), Some("HTTP"));
        assert_eq!(r[0].grouping, None);
    }

    #[test]
    fn unknown_metric_names_the_line() {
        let text = "{\"query\":\"a\",\"widget_type\":\"pie\",\"metric\":\"calls\",\"aggregation\":\"SUM\",\"filter\":{},\"grouping\":\"null\"}\n\
                    {\"query\":\"b\",\"widget_type\":\"pie\",\"metric\":\"cpu\",\"aggregation\":\"SUM\",\"filter\":{},\"grouping\":\"null\"}";
        match parse_dataset(text) {
            Err(DatasetError::Invalid { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("cpu"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn string_and_numeric_max_results_agree() {
        let a = parse_dataset(r#"{"query":"a","grouping":{"groupbyTag":"endpoint.name","direction":"DESC","maxResults":"5"}}"#).unwrap();
        let b = parse_dataset(r#"{"query":"a","grouping":{"groupbyTag":"endpoint.name","direction":"DESC","maxResults":5}}"#).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let d = load_dataset(&path).unwrap();
        assert!(d.records.is_empty());
    }

    #[test]
    fn json_line_round_trip() {
        let line = r#"{"query":"top 5","widget_type":"topList","metric":"latency","aggregation":"P99","filter":{"application.name":"robot-shop"},"grouping":{"groupbyTag":"endpoint.name","direction":"DESC","maxResults":5}}"#;
        let r = parse_dataset(line).unwrap();
        assert_eq!(r[0].to_json_line(), line);
    }
}
