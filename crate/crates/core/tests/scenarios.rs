//! The three resolution scenarios (auto-correction, disambiguation,
//! completion of a missing aggregation) against the shipped catalog.

use std::path::PathBuf;

use dashtalk_core::catalog::{EntityCatalog, EntityKind};
use dashtalk_core::parser::{ExtractionResult, TagFilter};
use dashtalk_core::resolver::{
    completion_options, resolve_extraction, resolve_field, FieldPath, MatchStatus,
};
use dashtalk_core::similarity::TrigramCosine;
use dashtalk_core::vocab::{FilterKey, GlobalVocabulary, Metric, WidgetType};

const THRESHOLD: f64 = 0.60;

fn catalog() -> EntityCatalog {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/monitoring");
    EntityCatalog::from_fixture_dir(&dir).expect("fixture catalog loads")
}

#[test]
fn qotd_service_is_auto_corrected() {
    let c = catalog();
    let o = resolve_field(
        Some("qotd-service"),
        c.names(EntityKind::Services),
        FieldPath::Filter(FilterKey::ServiceName),
        &TrigramCosine,
        THRESHOLD,
    )
    .unwrap();
    assert_eq!(
        serde_json::to_string(&o).unwrap(),
        r#"{"field_path":"filter.service.name","status":"auto_corrected","original":"qotd-service","resolved_value":"qotd-web service","candidates":[{"value":"qotd-web service","score":0.6761234037828132}]}"#
    );
}

#[test]
fn qotd_service_substituted_in_draft() {
    let raw = ExtractionResult {
        widget_type: Some(WidgetType::BigNumber),
        metric: Some(Metric::Calls),
        aggregation: Some(dashtalk_core::vocab::Aggregation::Sum),
        filter: TagFilter::new().with(FilterKey::ServiceName, "qotd-service"),
        ..Default::default()
    };
    let vocab = GlobalVocabulary::embedded();
    let r = resolve_extraction(&raw, &catalog(), &vocab, &TrigramCosine, THRESHOLD).unwrap();
    assert_eq!(r.draft.filter.get(FilterKey::ServiceName), Some("qotd-web service"));
    let statuses: Vec<_> = r.outcomes.iter().map(|o| o.status).collect();
    assert_eq!(
        statuses.iter().filter(|s| **s == MatchStatus::AutoCorrected).count(),
        1
    );
    assert_eq!(r.pending().count(), 0);
}

#[test]
fn robot_shop_service_needs_disambiguation() {
    let c = catalog();
    let o = resolve_field(
        Some("robot-shop service"),
        c.names(EntityKind::Services),
        FieldPath::Filter(FilterKey::ServiceName),
        &TrigramCosine,
        THRESHOLD,
    )
    .unwrap();
    // 16 / sqrt(16 * 25) and 15 / sqrt(16 * 26).
    assert_eq!(
        serde_json::to_string(&o).unwrap(),
        r#"{"field_path":"filter.service.name","status":"ambiguous","original":"robot-shop service","candidates":[{"value":"robot-shop shipping service","score":0.8},{"value":"robot-shop catalogue service","score":0.7354355067681901}]}"#
    );
}

#[test]
fn missing_latency_aggregation_offers_latency_options() {
    let vocab = GlobalVocabulary::embedded();
    let partial = ExtractionResult {
        widget_type: Some(WidgetType::TimeSeries),
        metric: Some(Metric::Latency),
        aggregation: None,
        filter: TagFilter::new().with(FilterKey::ApplicationName, "robot-shop"),
        ..Default::default()
    };
    let r = resolve_extraction(&partial, &catalog(), &vocab, &TrigramCosine, THRESHOLD).unwrap();
    let pending: Vec<_> = r.pending().collect();
    assert_eq!(pending.len(), 1);
    assert_eq!(
        serde_json::to_string(pending[0]).unwrap(),
        r#"{"field_path":"aggregation","status":"missing"}"#
    );
    let opts = completion_options(FieldPath::Aggregation, &partial, &vocab, None).unwrap();
    assert_eq!(
        serde_json::to_string(&opts).unwrap(),
        r#"{"field_path":"aggregation","allowed_values":["MEAN","MIN","MAX","P25","P50","P75","P90","P95","P98","P99"],"context_note":"aggregations available for latency"}"#
    );
}

#[test]
fn appdata_matches_two_services() {
    let c = catalog();
    let o = resolve_field(
        Some("appdata"),
        c.names(EntityKind::Services),
        FieldPath::Filter(FilterKey::ServiceName),
        &TrigramCosine,
        THRESHOLD,
    )
    .unwrap();
    assert_eq!(o.status, MatchStatus::Ambiguous);
    let names: Vec<_> = o.candidates.iter().map(|c| c.value.as_str()).collect();
    assert_eq!(names, ["appdata-reader", "appdata-writer"]);
}

#[test]
fn payment_stays_unresolved() {
    let c = catalog();
    let o = resolve_field(
        Some("payment"),
        c.names(EntityKind::Services),
        FieldPath::Filter(FilterKey::ServiceName),
        &TrigramCosine,
        THRESHOLD,
    )
    .unwrap();
    assert_eq!(o.status, MatchStatus::Unresolvable);
}
