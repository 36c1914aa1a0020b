//! Conversation state machine: parse once, ask for whatever the parse could
//! not settle, then build the widget.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{EntityCatalog, KnowledgeBase};
use crate::parser::{ExtractError, ExtractionResult, SemanticParser};
use crate::resolver::{
    completion_options, rank_domain, resolve_extraction, FieldPath, MatchOutcome, MatchStatus,
    ResolveError, DEFAULT_THRESHOLD,
};
use crate::schema::{build_widget_spec, contract_violations, SpecError, TimeRange, WidgetSpec};
use crate::similarity::SimilarityProvider;
use crate::vocab::{Aggregation, Direction, GlobalVocabulary, GroupTag, Metric, WidgetType};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

pub trait IdGenerator: Send + Sync {
    fn next_id(&self, prefix: &str) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UuidIds;

impl IdGenerator for UuidIds {
    fn next_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", uuid::Uuid::new_v4())
    }
}

/// `prefix-1`, `prefix-2`, ... shared across prefixes.
#[derive(Debug, Default)]
pub struct SequentialIds(AtomicU64);

impl IdGenerator for SequentialIds {
    fn next_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.0.fetch_add(1, Ordering::SeqCst) + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingQuery,
    Parsing,
    Clarifying,
    Previewable,
    Confirmed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClarificationKind {
    Disambiguation,
    MissingElement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationRequest {
    pub id: String,
    pub kind: ClarificationKind,
    pub field_path: FieldPath,
    pub options: Vec<String>,
    pub prompt_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub phase: Phase,
    pub draft: ExtractionResult,
    pub pending: VecDeque<ClarificationRequest>,
    /// `None` until set; the default window applies at build time.
    pub time_range: Option<TimeRange>,
    pub transcript: Vec<TranscriptEntry>,
    /// Completions spent on the most recent query.
    pub query_llm_calls: u32,
    pub total_llm_calls: u32,
    pub widget: Option<WidgetSpec>,
    pub last_activity: DateTime<Utc>,
    /// Fields the user still has to settle, with the outcome that flagged them.
    unresolved: BTreeMap<FieldPath, MatchOutcome>,
    request_seq: u32,
}

impl SessionState {
    pub fn effective_time_range(&self) -> TimeRange {
        self.time_range.unwrap_or_default()
    }

    fn say(&mut self, role: Role, text: impl Into<String>) {
        self.transcript.push(TranscriptEntry {
            role,
            text: text.into(),
        });
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("`{operation}` is not allowed while the session is {phase:?}")]
    Phase {
        operation: &'static str,
        phase: Phase,
    },
    #[error("request `{got}` is not the current question (expected {expected:?})")]
    OutOfOrder {
        expected: Option<String>,
        got: String,
    },
    #[error("{choice:?} is not one of the options for `{field_path}`")]
    InvalidChoice { field_path: FieldPath, choice: String },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("query could not be parsed: {0}")]
    Parse(String),
    #[error("knowledge base cannot answer: {0}")]
    Catalog(#[from] ResolveError),
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Phase { .. } => "phase_error",
            SessionError::OutOfOrder { .. } => "ordering_error",
            SessionError::InvalidChoice { .. } => "invalid_choice",
            SessionError::Spec(SpecError::InvalidTimeRange(_)) => "validation_error",
            SessionError::Spec(SpecError::Contract { .. }) => "contract_error",
            SessionError::Parse(_) => "parse_error",
            SessionError::Catalog(_) => "catalog_error",
        }
    }
}

pub struct SessionEngine {
    parser: SemanticParser,
    kb: Arc<KnowledgeBase>,
    similarity: Arc<dyn SimilarityProvider>,
    threshold: f64,
    clock: Arc<dyn Clock>,
    ids: Arc<dyn IdGenerator>,
}

impl SessionEngine {
    pub fn new(
        parser: SemanticParser,
        kb: Arc<KnowledgeBase>,
        similarity: Arc<dyn SimilarityProvider>,
    ) -> Self {
        Self {
            parser,
            kb,
            similarity,
            threshold: DEFAULT_THRESHOLD,
            clock: Arc::new(SystemClock),
            ids: Arc::new(UuidIds),
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_ids(mut self, ids: Arc<dyn IdGenerator>) -> Self {
        self.ids = ids;
        self
    }

    pub fn knowledge_base(&self) -> &Arc<KnowledgeBase> {
        &self.kb
    }

    pub fn vocab(&self) -> &GlobalVocabulary {
        self.kb.vocab()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn new_session(&self) -> SessionState {
        SessionState {
            session_id: self.ids.next_id("s"),
            phase: Phase::AwaitingQuery,
            draft: ExtractionResult::default(),
            pending: VecDeque::new(),
            time_range: None,
            transcript: Vec::new(),
            query_llm_calls: 0,
            total_llm_calls: 0,
            widget: None,
            last_activity: self.clock.now(),
            unresolved: BTreeMap::new(),
            request_seq: 0,
        }
    }

    /// Parses a query into a fresh draft. A failed parse leaves the session
    /// in `failed` with the model's raw text in the transcript.
    pub async fn submit_query(&self, state: &mut SessionState, query: &str) -> Result<(), SessionError> {
        require(state, "submit_query", &[Phase::AwaitingQuery, Phase::Previewable])?;
        state.last_activity = self.clock.now();
        state.say(Role::User, query);
        state.phase = Phase::Parsing;
        state.draft = ExtractionResult::default();
        state.pending.clear();
        state.unresolved.clear();

        let outcome = match self.parser.parse(query).await {
            Ok(o) => o,
            Err(e) => {
                let (calls, text) = match &e {
                    ExtractError::Parse { raw, .. } => (3, raw.clone()),
                    ExtractError::Llm(err) => (0, err.to_string()),
                };
                state.query_llm_calls = calls;
                state.total_llm_calls += calls;
                state.say(Role::Assistant, text);
                state.phase = Phase::Failed;
                return Err(SessionError::Parse(e.to_string()));
            }
        };
        state.query_llm_calls = outcome.llm_calls;
        state.total_llm_calls += outcome.llm_calls;

        let catalog = self.kb.snapshot();
        self.similarity.prepare(&similarity_texts(&outcome.result, &catalog)).await;
        let resolution = match resolve_extraction(
            &outcome.result,
            &catalog,
            self.vocab(),
            self.similarity.as_ref(),
            self.threshold,
        ) {
            Ok(r) => r,
            Err(e) => return Err(self.fail(state, e.into())),
        };
        state.draft = resolution.draft;
        for o in resolution.outcomes {
            if o.needs_user() {
                state.unresolved.insert(o.field_path, o);
            }
        }
        if let Err(e) = self.reconcile(state, &catalog) {
            return Err(self.fail(state, e));
        }
        self.announce(state);
        Ok(())
    }

    /// Applies the user's pick for the request at the head of the queue.
    /// No completion is requested.
    pub fn answer_clarification(
        &self,
        state: &mut SessionState,
        request_id: &str,
        choice: &str,
    ) -> Result<(), SessionError> {
        require(state, "answer_clarification", &[Phase::Clarifying])?;
        let head = state.pending.front().expect("clarifying implies pending");
        if head.id != request_id {
            return Err(SessionError::OutOfOrder {
                expected: Some(head.id.clone()),
                got: request_id.to_string(),
            });
        }
        if !head.options.iter().any(|o| o == choice) {
            return Err(SessionError::InvalidChoice {
                field_path: head.field_path,
                choice: choice.to_string(),
            });
        }
        let field = head.field_path;
        let mut next = state.clone();
        apply_choice(&mut next.draft, field, choice, self.vocab())
            .map_err(|_| SessionError::InvalidChoice {
                field_path: field,
                choice: choice.to_string(),
            })?;
        next.unresolved.remove(&field);
        next.pending.pop_front();
        next.say(Role::User, choice);
        next.last_activity = self.clock.now();
        let catalog = self.kb.snapshot();
        self.reconcile(&mut next, &catalog)?;
        self.announce(&mut next);
        *state = next;
        Ok(())
    }

    pub fn set_time_range(&self, state: &mut SessionState, minutes: u32) -> Result<(), SessionError> {
        if matches!(state.phase, Phase::Confirmed | Phase::Failed) {
            return Err(SessionError::Phase {
                operation: "set_time_range",
                phase: state.phase,
            });
        }
        state.time_range = Some(TimeRange::last_minutes(minutes)?);
        state.last_activity = self.clock.now();
        Ok(())
    }

    /// The spec the session would confirm right now.
    pub fn preview(&self, state: &SessionState) -> Result<WidgetSpec, SessionError> {
        require(state, "preview", &[Phase::Previewable])?;
        Ok(build_widget_spec(
            &state.draft,
            state.effective_time_range(),
            self.vocab(),
            format!("{}-preview", state.session_id),
            self.clock.now(),
        )?)
    }

    pub fn confirm(&self, state: &mut SessionState) -> Result<WidgetSpec, SessionError> {
        require(state, "confirm", &[Phase::Previewable])?;
        let spec = build_widget_spec(
            &state.draft,
            state.effective_time_range(),
            self.vocab(),
            self.ids.next_id("w"),
            self.clock.now(),
        )?;
        state.phase = Phase::Confirmed;
        state.widget = Some(spec.clone());
        state.last_activity = self.clock.now();
        state.say(Role::Assistant, format!("Added widget \"{}\".", spec.title));
        Ok(spec)
    }

    fn fail(&self, state: &mut SessionState, err: SessionError) -> SessionError {
        state.say(Role::Assistant, err.to_string());
        state.phase = Phase::Failed;
        state.pending.clear();
        err
    }

    fn announce(&self, state: &mut SessionState) {
        let text = match state.pending.front() {
            Some(req) => req.prompt_text.clone(),
            None => "The widget is ready to preview.".to_string(),
        };
        state.say(Role::Assistant, text);
    }

    /// Recomputes the queue from the draft. Requests whose field and options
    /// are unchanged keep their ids.
    fn reconcile(&self, state: &mut SessionState, catalog: &EntityCatalog) -> Result<(), SessionError> {
        let vocab = self.vocab();
        let widget_type = state.draft.widget_type;
        state
            .unresolved
            .retain(|field, _| field_applies(*field, widget_type));

        let mut needed: BTreeMap<FieldPath, Option<MatchOutcome>> = state
            .unresolved
            .iter()
            .map(|(f, o)| (*f, Some(o.clone())))
            .collect();
        for field in contract_violations(&state.draft, vocab) {
            needed.entry(field).or_insert(None);
        }

        let old: Vec<ClarificationRequest> = state.pending.drain(..).collect();
        for (field, outcome) in needed {
            let (kind, options, prompt_text) = match outcome {
                Some(o) if o.status == MatchStatus::Ambiguous => (
                    ClarificationKind::Disambiguation,
                    o.ui_candidates().iter().map(|c| c.value.clone()).collect(),
                    format!(
                        "Several {} match \"{}\". Which one did you mean?",
                        plural_label(field),
                        o.original.as_deref().unwrap_or_default()
                    ),
                ),
                Some(o) if o.status == MatchStatus::Unresolvable => {
                    let original = o.original.clone().unwrap_or_default();
                    let options = match field.entity_kind() {
                        Some(kind) => rank_domain(&original, catalog.names(kind), self.similarity.as_ref())
                            .into_iter()
                            .map(|c| c.value)
                            .collect(),
                        None => completion_options(field, &state.draft, vocab, Some(catalog))?.allowed_values,
                    };
                    (
                        ClarificationKind::MissingElement,
                        options,
                        format!(
                            "No {} matches \"{original}\". Please pick one.",
                            label(field)
                        ),
                    )
                }
                _ => (
                    ClarificationKind::MissingElement,
                    completion_options(field, &state.draft, vocab, Some(catalog))?.allowed_values,
                    format!("Which {} should the widget use?", label(field)),
                ),
            };
            if options.is_empty() {
                return Err(ResolveError::NoOptions { field_path: field }.into());
            }
            let id = match old
                .iter()
                .find(|r| r.field_path == field && r.options == options && r.kind == kind)
            {
                Some(r) => r.id.clone(),
                None => {
                    state.request_seq += 1;
                    format!("c{}", state.request_seq)
                }
            };
            state.pending.push_back(ClarificationRequest {
                id,
                kind,
                field_path: field,
                options,
                prompt_text,
            });
        }
        state.phase = if state.pending.is_empty() {
            Phase::Previewable
        } else {
            Phase::Clarifying
        };
        debug_assert_eq!(check_invariants(state, vocab), Ok(()));
        Ok(())
    }
}

fn require(state: &SessionState, operation: &'static str, allowed: &[Phase]) -> Result<(), SessionError> {
    if allowed.contains(&state.phase) {
        Ok(())
    } else {
        Err(SessionError::Phase {
            operation,
            phase: state.phase,
        })
    }
}

/// Whether a field is meaningful for the (possibly unknown) widget type.
fn field_applies(field: FieldPath, widget_type: Option<WidgetType>) -> bool {
    match (field, widget_type) {
        (FieldPath::WidgetType, _) | (_, None) => true,
        (FieldPath::SloName, Some(t)) => t == WidgetType::Slo2,
        (_, Some(WidgetType::Slo2)) => false,
        (FieldPath::GroupByTag | FieldPath::Direction | FieldPath::MaxResults, Some(t)) => {
            t.supports_grouping()
        }
        _ => true,
    }
}

/// Writes a validated choice into the draft, re-deriving dependent fields.
fn apply_choice(
    draft: &mut ExtractionResult,
    field: FieldPath,
    choice: &str,
    vocab: &GlobalVocabulary,
) -> Result<(), ()> {
    match field {
        FieldPath::WidgetType => {
            draft.widget_type = Some(WidgetType::parse_token(choice).ok_or(())?);
            draft.normalize();
        }
        FieldPath::Metric => {
            let metric: Metric = choice.parse().map_err(|_| ())?;
            draft.metric = Some(metric);
            if draft.aggregation.is_some_and(|a| !vocab.allows(metric, a)) {
                draft.aggregation = None;
            }
        }
        FieldPath::Aggregation => draft.aggregation = Some(choice.parse::<Aggregation>().map_err(|_| ())?),
        FieldPath::Filter(key) => draft.filter.insert(key, choice),
        FieldPath::GroupByTag => {
            draft.grouping.get_or_insert_with(Default::default).group_by_tag =
                Some(choice.parse::<GroupTag>().map_err(|_| ())?)
        }
        FieldPath::Direction => {
            draft.grouping.get_or_insert_with(Default::default).direction =
                Some(choice.parse::<Direction>().map_err(|_| ())?)
        }
        FieldPath::MaxResults => {
            draft.grouping.get_or_insert_with(Default::default).max_results =
                Some(choice.parse::<u32>().map_err(|_| ())?)
        }
        FieldPath::SloName => draft.slo_name = Some(choice.to_string()),
    }
    Ok(())
}

fn similarity_texts(result: &ExtractionResult, catalog: &EntityCatalog) -> Vec<String> {
    let mut texts: Vec<String> = result.filter.iter().map(|(_, v)| v.to_string()).collect();
    texts.extend(result.slo_name.clone());
    for kind in crate::catalog::EntityKind::ALL {
        texts.extend(catalog.names(kind).iter().cloned());
    }
    texts
}

fn label(field: FieldPath) -> String {
    match field {
        FieldPath::WidgetType => "widget type".into(),
        FieldPath::Metric => "metric".into(),
        FieldPath::Aggregation => "aggregation".into(),
        FieldPath::Filter(k) => k.as_str().replace('.', " ").replace(" name", ""),
        FieldPath::GroupByTag => "grouping tag".into(),
        FieldPath::Direction => "sort direction".into(),
        FieldPath::MaxResults => "number of results".into(),
        FieldPath::SloName => "SLO".into(),
    }
}

fn plural_label(field: FieldPath) -> String {
    format!("{}s", label(field))
}

/// The state invariants, checked after every transition.
pub fn check_invariants(state: &SessionState, vocab: &GlobalVocabulary) -> Result<(), String> {
    if (state.phase == Phase::Clarifying) != !state.pending.is_empty() {
        return Err(format!(
            "phase {:?} with {} pending requests",
            state.phase,
            state.pending.len()
        ));
    }
    if state.pending.iter().any(|r| r.options.is_empty()) {
        return Err("clarification without options".into());
    }
    if state.phase == Phase::Previewable {
        let missing = contract_violations(&state.draft, vocab);
        if !missing.is_empty() {
            return Err(format!("previewable draft is missing {missing:?}"));
        }
    }
    Ok(())
}
