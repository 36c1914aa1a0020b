//! Two-pass semantic parsing: the first completion picks the widget type,
//! the second extracts the widget's data source with a widget-specific
//! prompt. Model text is parsed tolerantly but validated strictly.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::llm::{ChatBackend, CompletionRequest, LlmError, ReplayRecord};
use crate::prompts::{PromptPack, PromptTemplate, CORRECTION_INSTRUCTION};
use crate::vocab::{
    is_null_token, Aggregation, CallType, Direction, FilterKey, GroupTag, Metric, WidgetType,
    MAX_RESULTS_OPTIONS, NULL_TOKEN,
};

/// Conjunction of `key = value` clauses, one per filter key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagFilter(pub BTreeMap<FilterKey, String>);

impl TagFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: FilterKey, value: impl Into<String>) -> Self {
        self.0.insert(key, value.into());
        self
    }

    pub fn get(&self, key: FilterKey) -> Option<&str> {
        self.0.get(&key).map(String::as_str)
    }

    pub fn insert(&mut self, key: FilterKey, value: impl Into<String>) {
        self.0.insert(key, value.into());
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (FilterKey, &str)> {
        self.0.iter().map(|(k, v)| (*k, v.as_str()))
    }

    /// `application.name = "robot-shop" AND service.name = "catalogue"`
    pub fn conjunction(&self) -> String {
        self.iter()
            .map(|(k, v)| format!("{k} = {v:?}"))
            .collect::<Vec<_>>()
            .join(" AND ")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupingSpec {
    #[serde(rename = "groupbyTag")]
    pub group_by_tag: Option<GroupTag>,
    pub direction: Option<Direction>,
    #[serde(rename = "maxResults")]
    pub max_results: Option<u32>,
}

impl GroupingSpec {
    pub fn new(tag: GroupTag, direction: Direction, max_results: u32) -> Self {
        Self {
            group_by_tag: Some(tag),
            direction: Some(direction),
            max_results: Some(max_results),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.group_by_tag.is_none() && self.direction.is_none() && self.max_results.is_none()
    }

    pub fn is_complete(&self) -> bool {
        self.group_by_tag.is_some() && self.direction.is_some() && self.max_results.is_some()
    }
}

/// Raw five-field parse of one query; `None` stands for the Null sentinel.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub widget_type: Option<WidgetType>,
    pub metric: Option<Metric>,
    pub aggregation: Option<Aggregation>,
    pub filter: TagFilter,
    pub grouping: Option<GroupingSpec>,
    /// Only meaningful for slo2 widgets; `None` there means "not given".
    pub slo_name: Option<String>,
}

impl ExtractionResult {
    /// Enforces the structural rules every parser output obeys: grouping
    /// only on grouping-capable (or still unknown) widget types, always
    /// present on topList, never an empty shell on TIME_SERIES, and an SLO
    /// name only on slo2.
    pub fn normalize(&mut self) {
        match self.widget_type {
            Some(WidgetType::TopList) => {
                self.grouping.get_or_insert_with(GroupingSpec::default);
            }
            Some(t) if !t.supports_grouping() => self.grouping = None,
            _ => {
                if self.grouping.is_some_and(|g| g.is_empty()) {
                    self.grouping = None;
                }
            }
        }
        if self.widget_type != Some(WidgetType::Slo2) {
            self.slo_name = None;
        }
    }

    pub fn structural_violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.grouping.is_some() && self.widget_type.is_some_and(|t| !t.supports_grouping()) {
            v.push("grouping present on a widget type without grouping");
        }
        if self.widget_type == Some(WidgetType::TopList) && self.grouping.is_none() {
            v.push("topList without grouping");
        }
        if self.slo_name.is_some() && self.widget_type != Some(WidgetType::Slo2) {
            v.push("slo_name on a non-slo2 widget");
        }
        v
    }

    /// Serializes in the shape the extraction prompts ask the model for.
    pub fn to_model_json(&self) -> String {
        if self.widget_type == Some(WidgetType::Slo2) {
            let name = self.slo_name.clone().unwrap_or_else(|| NULL_TOKEN.into());
            return serde_json::json!({ "name": name }).to_string();
        }
        let token = |t: Option<&str>| Value::String(t.unwrap_or(NULL_TOKEN).to_string());
        let mut obj = Map::new();
        obj.insert("type".into(), token(self.widget_type.map(|t| t.as_str())));
        obj.insert("metric".into(), token(self.metric.map(|m| m.as_str())));
        obj.insert("aggregation".into(), token(self.aggregation.map(|a| a.as_str())));
        let filter: Map<String, Value> = self
            .filter
            .iter()
            .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
            .collect();
        obj.insert("filter".into(), Value::Object(filter));
        if let Some(g) = &self.grouping {
            obj.insert(
                "grouping".into(),
                serde_json::json!({
                    "groupbyTag": token(g.group_by_tag.map(|t| t.as_str())),
                    "direction": token(g.direction.map(|d| d.as_str())),
                    "maxResults": g.max_results.map(|n| Value::String(n.to_string())).unwrap_or_else(|| token(None)),
                }),
            );
        }
        Value::Object(obj).to_string()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no JSON object found in model output")]
    NoJson { raw: String },
    #[error("model output is not valid JSON: {message}")]
    Syntax { raw: String, message: String },
    #[error("invalid value {value:?} for field `{field}`")]
    Validation { field: String, value: String },
}

impl ParseError {
    fn invalid(field: impl Into<String>, value: impl Into<String>) -> Self {
        ParseError::Validation {
            field: field.into(),
            value: value.into(),
        }
    }
}

/// Strips code fences and surrounding prose and returns the outermost
/// balanced JSON object, if any.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses one model reply. `widget_type` selects the expected shape: slo2
/// replies carry `{"name": ...}`, everything else the five-field object.
pub fn parse_model_json(
    text: &str,
    widget_type: Option<WidgetType>,
) -> Result<ExtractionResult, ParseError> {
    if widget_type == Some(WidgetType::Slo2) {
        return parse_slo_reply(text);
    }
    let obj = json_object(text)?;
    let mut result = ExtractionResult {
        widget_type,
        ..Default::default()
    };
    for (key, value) in &obj {
        match key.as_str() {
            "type" => {
                result.widget_type = match nullable_str(value, "type")? {
                    None => None,
                    Some(s) => Some(
                        WidgetType::parse_token(s).ok_or_else(|| ParseError::invalid("type", s))?,
                    ),
                }
            }
            "metric" => result.metric = parse_token(value, "metric", Metric::parse_loose)?,
            "aggregation" => {
                result.aggregation = parse_token(value, "aggregation", Aggregation::parse_loose)?
            }
            "filter" => result.filter = parse_filter(value)?,
            "grouping" => result.grouping = parse_grouping(value)?,
            other => return Err(ParseError::invalid(other, value.to_string())),
        }
    }
    result.normalize();
    Ok(result)
}

fn json_object(text: &str) -> Result<Map<String, Value>, ParseError> {
    let raw = extract_json_object(text).ok_or_else(|| ParseError::NoJson {
        raw: text.to_string(),
    })?;
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(_) => Err(ParseError::NoJson {
            raw: text.to_string(),
        }),
        Err(e) => Err(ParseError::Syntax {
            raw: text.to_string(),
            message: e.to_string(),
        }),
    }
}

fn parse_slo_reply(text: &str) -> Result<ExtractionResult, ParseError> {
    let mut result = ExtractionResult {
        widget_type: Some(WidgetType::Slo2),
        ..Default::default()
    };
    let trimmed = text.trim().trim_matches('"');
    if trimmed.eq_ignore_ascii_case("none") || is_null_token(trimmed) {
        return Ok(result);
    }
    let obj = json_object(text)?;
    for (key, value) in &obj {
        if key != "name" {
            return Err(ParseError::invalid(key.as_str(), value.to_string()));
        }
        result.slo_name = nullable_str(value, "name")?
            .filter(|s| !s.eq_ignore_ascii_case("none"))
            .map(str::to_string);
    }
    Ok(result)
}

/// `null`, `"Null"` and `""` all mean "not provided".
fn nullable_str<'a>(value: &'a Value, field: &str) -> Result<Option<&'a str>, ParseError> {
    match value {
        Value::Null => Ok(None),
        Value::String(s) if s.trim().is_empty() || is_null_token(s) => Ok(None),
        Value::String(s) => Ok(Some(s.trim())),
        other => Err(ParseError::invalid(field, other.to_string())),
    }
}

fn parse_token<T>(
    value: &Value,
    field: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Option<T>, ParseError> {
    nullable_str(value, field)?
        .map(|s| parse(s).ok_or_else(|| ParseError::invalid(field, s)))
        .transpose()
}

fn parse_filter(value: &Value) -> Result<TagFilter, ParseError> {
    let obj = match value {
        Value::Null => return Ok(TagFilter::new()),
        Value::Object(obj) => obj,
        other => return Err(ParseError::invalid("filter", other.to_string())),
    };
    let mut filter = TagFilter::new();
    for (key, raw) in obj {
        let field = format!("filter.{key}");
        let fkey = key
            .parse::<FilterKey>()
            .map_err(|_| ParseError::invalid(&field, key.as_str()))?;
        let text = match raw {
            Value::Bool(b) => Some(b.to_string()),
            other => nullable_str(other, &field)?.map(str::to_string),
        };
        let Some(text) = text else { continue };
        let text = match fkey {
            FilterKey::CallType => CallType::parse_loose(&text)
                .ok_or_else(|| ParseError::invalid(&field, &text))?
                .to_string(),
            FilterKey::CallErroneous => match text.to_ascii_lowercase().as_str() {
                v @ ("true" | "false") => v.to_string(),
                _ => return Err(ParseError::invalid(&field, &text)),
            },
            _ => text,
        };
        filter.insert(fkey, text);
    }
    Ok(filter)
}

fn parse_grouping(value: &Value) -> Result<Option<GroupingSpec>, ParseError> {
    let obj = match value {
        Value::Null => return Ok(None),
        Value::String(s) if is_null_token(s) => return Ok(None),
        Value::Object(obj) => obj,
        other => return Err(ParseError::invalid("grouping", other.to_string())),
    };
    let mut spec = GroupingSpec::default();
    for (key, raw) in obj {
        match key.as_str() {
            "groupbyTag" | "groupByTag" => {
                spec.group_by_tag = parse_token(raw, "grouping.groupbyTag", GroupTag::parse_loose)?
            }
            "direction" => {
                spec.direction = parse_token(raw, "grouping.direction", Direction::parse_loose)?
            }
            "maxResults" => spec.max_results = parse_max_results(raw)?,
            other => {
                return Err(ParseError::invalid(format!("grouping.{other}"), raw.to_string()))
            }
        }
    }
    Ok(Some(spec))
}

/// Accepts both `"10"` and `10`; only the supported page sizes pass.
pub fn parse_max_results(raw: &Value) -> Result<Option<u32>, ParseError> {
    const FIELD: &str = "grouping.maxResults";
    let n = match raw {
        Value::Number(n) => n.as_u64(),
        other => match nullable_str(other, FIELD)? {
            None => return Ok(None),
            Some(s) => s.parse::<u64>().ok(),
        },
    };
    match n {
        Some(n) if MAX_RESULTS_OPTIONS.contains(&(n as u32)) => Ok(Some(n as u32)),
        _ => Err(ParseError::invalid(FIELD, raw.to_string())),
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("model output unusable after a corrective reprompt: {error}")]
    Parse { error: ParseError, raw: String },
}

/// Everything one two-pass parse produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome {
    pub result: ExtractionResult,
    pub llm_calls: u32,
    pub widget_type_reply: String,
    pub extraction_reply: String,
}

#[derive(Clone)]
pub struct SemanticParser {
    prompts: Arc<PromptPack>,
    llm: Arc<dyn ChatBackend>,
}

impl SemanticParser {
    pub fn new(prompts: Arc<PromptPack>, llm: Arc<dyn ChatBackend>) -> Self {
        Self { prompts, llm }
    }

    pub fn prompts(&self) -> &PromptPack {
        &self.prompts
    }

    /// First pass. Replies that are not one of the six tokens (after trim
    /// and case folding) count as Null.
    pub async fn infer_widget_type(&self, query: &str) -> Result<(Option<WidgetType>, String), LlmError> {
        let reply = self
            .llm
            .complete(&self.prompts.widget_type.request(query))
            .await?
            .text;
        let token = reply.trim().trim_matches(|c| c == '"' || c == '`' || c == '\'' || c == '.');
        Ok((WidgetType::parse_token(token), reply))
    }

    /// Second pass, with one corrective reprompt if the reply is unusable.
    /// Returns the result and the number of completions spent.
    pub async fn extract_data_sources(
        &self,
        query: &str,
        widget_type: Option<WidgetType>,
    ) -> Result<(ExtractionResult, u32, String), ExtractError> {
        let template: &PromptTemplate = if widget_type == Some(WidgetType::Slo2) {
            &self.prompts.datasource_slo
        } else {
            &self.prompts.datasource_generic
        };
        let request = template.request(query);
        let reply = self.llm.complete(&request).await?.text;
        let (parsed, calls, reply) = match parse_model_json(&reply, widget_type) {
            Ok(parsed) => (parsed, 1, reply),
            Err(first) => {
                tracing::warn!(error = %first, "extraction reply unusable, reprompting");
                let retry = CompletionRequest::new(
                    request.system_prompt.clone(),
                    format!("{}\n{}", request.user_message, CORRECTION_INSTRUCTION),
                );
                let reply = self.llm.complete(&retry).await?.text;
                match parse_model_json(&reply, widget_type) {
                    Ok(parsed) => (parsed, 2, reply),
                    Err(error) => return Err(ExtractError::Parse { error, raw: reply }),
                }
            }
        };
        Ok((reconcile_passes(widget_type, parsed), calls, reply))
    }

    /// Runs both passes.
    pub async fn parse(&self, query: &str) -> Result<ParseOutcome, ExtractError> {
        let (widget_type, widget_type_reply) = self.infer_widget_type(query).await?;
        let (result, calls, extraction_reply) =
            self.extract_data_sources(query, widget_type).await?;
        Ok(ParseOutcome {
            result,
            llm_calls: 1 + calls,
            widget_type_reply,
            extraction_reply,
        })
    }
}

/// Replay records that make the parser see `first` from the widget-type
/// pass and `second` from the extraction pass for `query`.
pub fn scripted_replies(pack: &PromptPack, query: &str, first: &str, second: &str) -> Vec<ReplayRecord> {
    let extraction = if WidgetType::parse_token(first.trim()) == Some(WidgetType::Slo2) {
        &pack.datasource_slo
    } else {
        &pack.datasource_generic
    };
    vec![
        ReplayRecord::new(pack.widget_type.system_prompt(), pack.widget_type.user_message(query), first),
        ReplayRecord::new(extraction.system_prompt(), extraction.user_message(query), second),
    ]
}

/// A concrete first-pass type always wins; a Null first pass adopts
/// whatever the second pass reported.
fn reconcile_passes(first: Option<WidgetType>, mut second: ExtractionResult) -> ExtractionResult {
    match (first, second.widget_type) {
        (Some(a), Some(b)) if a != b => {
            tracing::info!(first = %a, second = %b, "widget type disagreement; keeping first pass");
            second.widget_type = Some(a);
        }
        (Some(a), None) => second.widget_type = Some(a),
        _ => {}
    }
    second.normalize();
    second
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ratings_example() {
        let r = parse_model_json(
            r#"{"type":"bigNumber","metric":"calls","aggregation":"PER_SECOND","filter":{"service.name":"ratings"}}"#,
            None,
        )
        .unwrap();
        assert_eq!(r.widget_type, Some(WidgetType::BigNumber));
        assert_eq!(r.metric, Some(Metric::Calls));
        assert_eq!(r.aggregation, Some(Aggregation::PerSecond));
        assert_eq!(r.filter, TagFilter::new().with(FilterKey::ServiceName, "ratings"));
        assert_eq!(r.grouping, None);
    }

    #[test]
    fn fenced_output_matches_unfenced() {
        let plain = r#"{"type":"pie","metric":"calls","aggregation":"SUM","filter":{}}"#;
        let fenced = format!("Sure! Here it is:\n```json\n{plain}\n```\nLet me know.");
        assert_eq!(
            parse_model_json(plain, None).unwrap(),
            parse_model_json(&fenced, None).unwrap()
        );
    }

    #[test]
    fn enum_violations_name_field() {
        let err = parse_model_json(r#"{"type":"bigNumber","metric":"cpu"}"#, None).unwrap_err();
        assert_eq!(err, ParseError::invalid("metric", "cpu"));
        let err = parse_model_json(r#"{"type":"bigNumber","aggregation":"AVG"}"#, None).unwrap_err();
        assert_eq!(err, ParseError::invalid("aggregation", "AVG"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            parse_model_json(r#"{"type":"pie","colour":"red"}"#, None),
            Err(ParseError::Validation { .. })
        ));
        assert!(matches!(
            parse_model_json(r#"{"type":"pie","filter":{"host.name":"a"}}"#, None),
            Err(ParseError::Validation { .. })
        ));
    }

    #[test]
    fn no_json_is_parse_error() {
        assert!(matches!(
            parse_model_json("I cannot help with that", None),
            Err(ParseError::NoJson { .. })
        ));
        assert!(matches!(
            parse_model_json("{\"type\": \"pie\",", None),
            Err(ParseError::NoJson { .. })
        ));
    }

    #[test]
    fn null_tokens_any_casing() {
        let r = parse_model_json(
            r#"{"type":"null","metric":"NULL","aggregation":"Null","filter":{"service.name":"nginx-web"}}"#,
            None,
        )
        .unwrap();
        assert_eq!(r.widget_type, None);
        assert_eq!(r.metric, None);
        assert_eq!(r.aggregation, None);
    }

    #[test]
    fn toplist_gets_grouping_shell() {
        let r = parse_model_json(r#"{"type":"topList","metric":"calls","aggregation":"SUM"}"#, None).unwrap();
        assert_eq!(r.grouping, Some(GroupingSpec::default()));
    }

    #[test]
    fn grouping_dropped_on_pie_and_max_results_accepts_strings() {
        let r = parse_model_json(
            r#"{"type":"pie","metric":"calls","aggregation":"SUM","grouping":{"groupbyTag":"service.name","direction":"DESC","maxResults":"10"}}"#,
            None,
        )
        .unwrap();
        assert_eq!(r.grouping, None);
        let r = parse_model_json(
            r#"{"type":"topList","metric":"calls","aggregation":"SUM","grouping":{"groupbyTag":"endpoint.name","direction":"DESC","maxResults":10}}"#,
            None,
        )
        .unwrap();
        assert_eq!(r.grouping, Some(GroupingSpec::new(GroupTag::EndpointName, Direction::Desc, 10)));
        assert!(parse_model_json(
            r#"{"type":"topList","grouping":{"maxResults":"7"}}"#,
            None
        )
        .is_err());
    }

    #[test]
    fn slo_replies() {
        let r = parse_model_json(r#"{"name": "Great Expectations"}"#, Some(WidgetType::Slo2)).unwrap();
        assert_eq!(r.slo_name.as_deref(), Some("Great Expectations"));
        let r = parse_model_json("None", Some(WidgetType::Slo2)).unwrap();
        assert_eq!(r.slo_name, None);
        assert_eq!(r.widget_type, Some(WidgetType::Slo2));
    }

    #[test]
    fn call_type_canonicalized_and_erroneous_checked() {
        let r = parse_model_json(
            r#"{"type":"bigNumber","filter":{"call.type":"http","call.erroneous":true}}"#,
            None,
        )
        .unwrap();
        assert_eq!(r.filter.get(FilterKey::CallType), Some("HTTP"));
        assert_eq!(r.filter.get(FilterKey::CallErroneous), Some("true"));
        assert!(parse_model_json(r#"{"filter":{"call.erroneous":"maybe"}}"#, None).is_err());
    }

    #[test]
    fn pass_conflicts() {
        let second = ExtractionResult {
            widget_type: Some(WidgetType::BigNumber),
            ..Default::default()
        };
        assert_eq!(
            reconcile_passes(Some(WidgetType::TimeSeries), second.clone()).widget_type,
            Some(WidgetType::TimeSeries)
        );
        assert_eq!(reconcile_passes(None, second).widget_type, Some(WidgetType::BigNumber));
        assert_eq!(
            reconcile_passes(Some(WidgetType::Pie), ExtractionResult::default()).widget_type,
            Some(WidgetType::Pie)
        );
    }

    #[test]
    fn conjunction_format() {
        let f = TagFilter::new()
            .with(FilterKey::ServiceName, "catalogue")
            .with(FilterKey::ApplicationName, "robot-shop");
        assert_eq!(
            f.conjunction(),
            r#"application.name = "robot-shop" AND service.name = "catalogue""#
        );
    }
}
