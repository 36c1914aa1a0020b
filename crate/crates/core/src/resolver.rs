//! Fuzzy resolution of extracted values against the knowledge base.
//!
//! Each field ends up in one of five states: exact, auto-corrected (one
//! catalog value above threshold), ambiguous (several), missing (the model
//! gave Null) or unresolvable (none above threshold).

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::catalog::{EntityCatalog, EntityKind};
use crate::parser::ExtractionResult;
use crate::similarity::SimilarityProvider;
use crate::vocab::{FilterKey, GlobalVocabulary, WidgetType};

pub const DEFAULT_THRESHOLD: f64 = 0.60;
/// Ambiguous candidate lists shown to users are cut to this length.
pub const UI_CANDIDATE_CAP: usize = 10;

/// Addresses one field of an [`ExtractionResult`]. The derived order is the
/// order clarifications are asked in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldPath {
    WidgetType,
    Metric,
    Aggregation,
    Filter(FilterKey),
    GroupByTag,
    Direction,
    MaxResults,
    SloName,
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldPath::WidgetType => f.write_str("type"),
            FieldPath::Metric => f.write_str("metric"),
            FieldPath::Aggregation => f.write_str("aggregation"),
            FieldPath::Filter(k) => write!(f, "filter.{k}"),
            FieldPath::GroupByTag => f.write_str("grouping.groupbyTag"),
            FieldPath::Direction => f.write_str("grouping.direction"),
            FieldPath::MaxResults => f.write_str("grouping.maxResults"),
            FieldPath::SloName => f.write_str("slo_name"),
        }
    }
}

impl FromStr for FieldPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "type" => FieldPath::WidgetType,
            "metric" => FieldPath::Metric,
            "aggregation" => FieldPath::Aggregation,
            "grouping.groupbyTag" => FieldPath::GroupByTag,
            "grouping.direction" => FieldPath::Direction,
            "grouping.maxResults" => FieldPath::MaxResults,
            "slo_name" => FieldPath::SloName,
            other => match other.strip_prefix("filter.").map(str::parse::<FilterKey>) {
                Some(Ok(k)) => FieldPath::Filter(k),
                _ => return Err(format!("unknown field path {other:?}")),
            },
        })
    }
}

impl Serialize for FieldPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FieldPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

impl FieldPath {
    /// The catalog set an entity-bearing field resolves against.
    pub fn entity_kind(self) -> Option<EntityKind> {
        match self {
            FieldPath::Filter(k) => k.entity_kind(),
            FieldPath::SloName => Some(EntityKind::SloConfigs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStatus {
    Exact,
    AutoCorrected,
    Ambiguous,
    Missing,
    Unresolvable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub value: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub field_path: FieldPath,
    pub status: MatchStatus,
    /// The value as extracted (absent when the field was Null).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub original: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolved_value: Option<String>,
    /// Every above-threshold value, score descending then lexicographic.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub candidates: Vec<Candidate>,
}

impl MatchOutcome {
    fn new(field_path: FieldPath, status: MatchStatus, original: Option<&str>) -> Self {
        Self {
            field_path,
            status,
            original: original.map(str::to_string),
            resolved_value: None,
            candidates: Vec::new(),
        }
    }

    pub fn exact(field_path: FieldPath, value: &str) -> Self {
        Self {
            resolved_value: Some(value.to_string()),
            ..Self::new(field_path, MatchStatus::Exact, Some(value))
        }
    }

    pub fn missing(field_path: FieldPath) -> Self {
        Self::new(field_path, MatchStatus::Missing, None)
    }

    pub fn unresolvable(field_path: FieldPath, value: &str) -> Self {
        Self::new(field_path, MatchStatus::Unresolvable, Some(value))
    }

    /// Candidate list as offered in the UI (at most ten entries).
    pub fn ui_candidates(&self) -> &[Candidate] {
        &self.candidates[..self.candidates.len().min(UI_CANDIDATE_CAP)]
    }

    pub fn needs_user(&self) -> bool {
        !matches!(self.status, MatchStatus::Exact | MatchStatus::AutoCorrected)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResolveError {
    #[error("no catalog values available for `{field_path}` (catalog never fetched?)")]
    DomainUnavailable { field_path: FieldPath },
    #[error("`{field_path}` cannot be completed from a list of options")]
    NoOptions { field_path: FieldPath },
}

/// Score descending, then value ascending.
pub fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.value.cmp(&b.value))
}

/// Every domain value scored against `value`, best first.
pub fn rank_domain(
    value: &str,
    domain: &BTreeSet<String>,
    provider: &dyn SimilarityProvider,
) -> Vec<Candidate> {
    let mut all: Vec<Candidate> = domain
        .iter()
        .map(|d| Candidate {
            value: d.clone(),
            score: provider.similarity(value, d),
        })
        .collect();
    all.sort_by(rank);
    all
}

/// Resolves one value against a domain. The comparison with `threshold`
/// is inclusive.
pub fn resolve_field(
    value: Option<&str>,
    domain: &BTreeSet<String>,
    field_path: FieldPath,
    provider: &dyn SimilarityProvider,
    threshold: f64,
) -> Result<MatchOutcome, ResolveError> {
    let Some(value) = value else {
        return Ok(MatchOutcome::missing(field_path));
    };
    if domain.is_empty() {
        return Err(ResolveError::DomainUnavailable { field_path });
    }
    if domain.contains(value) {
        return Ok(MatchOutcome::exact(field_path, value));
    }
    let above: Vec<Candidate> = rank_domain(value, domain, provider)
        .into_iter()
        .filter(|c| c.score >= threshold)
        .collect();
    let mut outcome = MatchOutcome::new(field_path, MatchStatus::Unresolvable, Some(value));
    match above.len() {
        0 => {}
        1 => {
            outcome.status = MatchStatus::AutoCorrected;
            outcome.resolved_value = Some(above[0].value.clone());
            outcome.candidates = above;
        }
        _ => {
            outcome.status = MatchStatus::Ambiguous;
            outcome.candidates = above;
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionOptions {
    pub field_path: FieldPath,
    pub allowed_values: Vec<String>,
    pub context_note: String,
}

/// Values a user may pick for a field, narrowed by what is already known.
pub fn completion_options(
    field_path: FieldPath,
    partial: &ExtractionResult,
    vocab: &GlobalVocabulary,
    catalog: Option<&EntityCatalog>,
) -> Result<CompletionOptions, ResolveError> {
    let strings = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>();
    let (allowed_values, context_note) = match field_path {
        FieldPath::WidgetType => (
            strings(&mut vocab.widget_types().into_iter().map(|t| t.to_string())),
            "supported widget types".to_string(),
        ),
        FieldPath::Metric => (
            strings(&mut vocab.metric_names().into_iter().map(|m| m.to_string())),
            "supported metrics".to_string(),
        ),
        FieldPath::Aggregation => match partial.metric {
            Some(metric) => (
                strings(&mut vocab.aggregations_for(metric).iter().map(|a| a.to_string())),
                format!("aggregations available for {metric}"),
            ),
            None => (
                strings(&mut vocab.all_aggregations().into_iter().map(|a| a.to_string())),
                "aggregations available for any metric".to_string(),
            ),
        },
        FieldPath::GroupByTag => (
            strings(&mut vocab.grouping_tags().iter().map(|t| t.to_string())),
            "tags results can be grouped by".to_string(),
        ),
        FieldPath::Direction => (
            strings(&mut vocab.directions().iter().map(|d| d.to_string())),
            "sort direction".to_string(),
        ),
        FieldPath::MaxResults => (
            strings(&mut vocab.max_results_options().iter().map(|n| n.to_string())),
            "number of results".to_string(),
        ),
        FieldPath::Filter(FilterKey::CallType) => (
            strings(&mut vocab.call_types().iter().map(|c| c.to_string())),
            "call types".to_string(),
        ),
        FieldPath::Filter(FilterKey::CallErroneous) => {
            (vec!["true".into(), "false".into()], "erroneous calls only".to_string())
        }
        other => {
            let kind = other
                .entity_kind()
                .ok_or(ResolveError::NoOptions { field_path })?;
            let names = catalog
                .map(|c| c.names(kind))
                .filter(|n| !n.is_empty())
                .ok_or(ResolveError::NoOptions { field_path })?;
            (names.iter().cloned().collect(), format!("known {kind}"))
        }
    };
    Ok(CompletionOptions {
        field_path,
        allowed_values,
        context_note,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub draft: ExtractionResult,
    pub outcomes: Vec<MatchOutcome>,
}

impl Resolution {
    pub fn pending(&self) -> impl Iterator<Item = &MatchOutcome> {
        self.outcomes.iter().filter(|o| o.needs_user())
    }
}

/// Resolves every field of a raw parse. Exact and auto-corrected values are
/// written into the draft; everything else is reported for the user, with
/// candidate sets computed once here.
pub fn resolve_extraction(
    raw: &ExtractionResult,
    catalog: &EntityCatalog,
    vocab: &GlobalVocabulary,
    provider: &dyn SimilarityProvider,
    threshold: f64,
) -> Result<Resolution, ResolveError> {
    let mut draft = raw.clone();
    let mut outcomes = Vec::new();
    let closed = |path: FieldPath, token: Option<String>| match token {
        Some(t) => MatchOutcome::exact(path, &t),
        None => MatchOutcome::missing(path),
    };

    outcomes.push(closed(FieldPath::WidgetType, raw.widget_type.map(|t| t.to_string())));

    if raw.widget_type == Some(WidgetType::Slo2) {
        let outcome = resolve_field(
            raw.slo_name.as_deref(),
            catalog.names(EntityKind::SloConfigs),
            FieldPath::SloName,
            provider,
            threshold,
        )?;
        if outcome.status == MatchStatus::AutoCorrected {
            draft.slo_name = outcome.resolved_value.clone();
        }
        outcomes.push(outcome);
        return Ok(Resolution { draft, outcomes });
    }

    outcomes.push(closed(FieldPath::Metric, raw.metric.map(|m| m.to_string())));
    let aggregation = match (raw.metric, raw.aggregation) {
        (Some(m), Some(a)) if !vocab.allows(m, a) => {
            MatchOutcome::unresolvable(FieldPath::Aggregation, a.as_str())
        }
        (_, a) => closed(FieldPath::Aggregation, a.map(|a| a.to_string())),
    };
    outcomes.push(aggregation);

    for (key, value) in raw.filter.iter() {
        let path = FieldPath::Filter(key);
        let outcome = match key.entity_kind() {
            Some(kind) => {
                resolve_field(Some(value), catalog.names(kind), path, provider, threshold)?
            }
            None => MatchOutcome::exact(path, value),
        };
        if outcome.status == MatchStatus::AutoCorrected {
            if let Some(v) = &outcome.resolved_value {
                draft.filter.insert(key, v.clone());
            }
        }
        outcomes.push(outcome);
    }

    if let Some(g) = &raw.grouping {
        outcomes.push(closed(FieldPath::GroupByTag, g.group_by_tag.map(|t| t.to_string())));
        outcomes.push(closed(FieldPath::Direction, g.direction.map(|d| d.to_string())));
        outcomes.push(closed(FieldPath::MaxResults, g.max_results.map(|n| n.to_string())));
    }

    Ok(Resolution { draft, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{GroupingSpec, TagFilter};
    use crate::similarity::TrigramCosine;
    use crate::vocab::{Aggregation, Metric};

    fn domain(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn field_path_round_trips() {
        for p in [
            FieldPath::WidgetType,
            FieldPath::Filter(FilterKey::ServiceName),
            FieldPath::MaxResults,
            FieldPath::SloName,
        ] {
            assert_eq!(p.to_string().parse::<FieldPath>().unwrap(), p);
        }
        assert_eq!(FieldPath::Filter(FilterKey::ServiceName).to_string(), "filter.service.name");
    }

    #[test]
    fn null_is_missing_even_with_empty_domain() {
        let o = resolve_field(None, &BTreeSet::new(), FieldPath::Metric, &TrigramCosine, 0.6).unwrap();
        assert_eq!(o.status, MatchStatus::Missing);
    }

    #[test]
    fn empty_domain_is_unavailable() {
        let err = resolve_field(Some("x"), &BTreeSet::new(), FieldPath::SloName, &TrigramCosine, 0.6)
            .unwrap_err();
        assert_eq!(err, ResolveError::DomainUnavailable { field_path: FieldPath::SloName });
    }

    #[test]
    fn threshold_is_inclusive() {
        let d = domain(&["robot-shop shipping service"]);
        let score = TrigramCosine::score("robot-shop service", "robot-shop shipping service");
        let o = resolve_field(Some("robot-shop service"), &d, FieldPath::Filter(FilterKey::ServiceName), &TrigramCosine, score)
            .unwrap();
        assert_eq!(o.status, MatchStatus::AutoCorrected);
    }

    #[test]
    fn ties_sort_lexicographically() {
        let d = domain(&["appdata-writer", "appdata-reader"]);
        let o = resolve_field(Some("appdata"), &d, FieldPath::Filter(FilterKey::ServiceName), &TrigramCosine, 0.6).unwrap();
        assert_eq!(o.status, MatchStatus::Ambiguous);
        let names: Vec<_> = o.candidates.iter().map(|c| c.value.as_str()).collect();
        assert_eq!(names, ["appdata-reader", "appdata-writer"]);
    }

    #[test]
    fn ui_candidates_capped() {
        let names: Vec<String> = (0..15).map(|i| format!("svc-{i:02}")).collect();
        let d: BTreeSet<String> = names.into_iter().collect();
        let o = resolve_field(Some("svc"), &d, FieldPath::Filter(FilterKey::ServiceName), &TrigramCosine, 0.0).unwrap();
        assert_eq!(o.candidates.len(), 15);
        assert_eq!(o.ui_candidates().len(), UI_CANDIDATE_CAP);
    }

    #[test]
    fn completion_options_are_contextual() {
        let vocab = GlobalVocabulary::embedded();
        let partial = ExtractionResult {
            metric: Some(Metric::Latency),
            ..Default::default()
        };
        let opts = completion_options(FieldPath::Aggregation, &partial, &vocab, None).unwrap();
        let expected: Vec<String> = vocab
            .aggregations_for(Metric::Latency)
            .iter()
            .map(|a| a.to_string())
            .collect();
        assert_eq!(opts.allowed_values, expected);

        let opts = completion_options(FieldPath::Aggregation, &ExtractionResult::default(), &vocab, None).unwrap();
        assert_eq!(opts.allowed_values.len(), Aggregation::ALL.len());

        let opts = completion_options(FieldPath::WidgetType, &partial, &vocab, None).unwrap();
        assert_eq!(opts.allowed_values, ["bigNumber", "TIME_SERIES", "pie", "slo2", "topList"]);

        assert_eq!(
            completion_options(FieldPath::SloName, &partial, &vocab, Some(&EntityCatalog::empty("x"))),
            Err(ResolveError::NoOptions { field_path: FieldPath::SloName })
        );
        assert!(completion_options(FieldPath::Filter(FilterKey::TechnologyName), &partial, &vocab, None).is_err());
    }

    #[test]
    fn incompatible_aggregation_is_unresolvable() {
        let vocab = GlobalVocabulary::embedded();
        let mut catalog = EntityCatalog::empty("t");
        catalog.set_names(EntityKind::Services, ["catalogue"]);
        let raw = ExtractionResult {
            widget_type: Some(WidgetType::BigNumber),
            metric: Some(Metric::Calls),
            aggregation: Some(Aggregation::P99),
            filter: TagFilter::new(),
            grouping: None,
            slo_name: None,
        };
        let r = resolve_extraction(&raw, &catalog, &vocab, &TrigramCosine, 0.6).unwrap();
        let agg = r.outcomes.iter().find(|o| o.field_path == FieldPath::Aggregation).unwrap();
        assert_eq!(agg.status, MatchStatus::Unresolvable);
    }

    #[test]
    fn grouping_fields_reported() {
        let vocab = GlobalVocabulary::embedded();
        let raw = ExtractionResult {
            widget_type: Some(WidgetType::TopList),
            metric: Some(Metric::Latency),
            aggregation: Some(Aggregation::Mean),
            grouping: Some(GroupingSpec {
                group_by_tag: Some(crate::vocab::GroupTag::ServiceName),
                direction: None,
                max_results: None,
            }),
            ..Default::default()
        };
        let r = resolve_extraction(&raw, &EntityCatalog::empty("t"), &vocab, &TrigramCosine, 0.6).unwrap();
        let pending: Vec<_> = r.pending().map(|o| o.field_path).collect();
        assert_eq!(pending, [FieldPath::Direction, FieldPath::MaxResults]);
    }
}
