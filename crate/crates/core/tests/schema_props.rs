use chrono::{TimeZone, Utc};
use dashtalk_core::parser::{ExtractionResult, GroupingSpec, TagFilter};
use dashtalk_core::schema::{build_widget_spec, validate_widget_json, TimeRange, WidgetConfig, WidgetSpec};
use dashtalk_core::vocab::{
    Aggregation, CallType, Direction, FilterKey, GlobalVocabulary, GroupTag, Metric, WidgetType,
};
use proptest::prelude::*;
use serde_json::Value;

fn vocab() -> GlobalVocabulary {
    GlobalVocabulary::embedded()
}

/// Filter values as the parser emits them: closed keys canonical, entity
/// keys free text.
fn filter() -> impl Strategy<Value = TagFilter> {
    let clause = prop::sample::select(FilterKey::ALL.to_vec()).prop_flat_map(|k| {
        let value: BoxedStrategy<String> = match k {
            FilterKey::CallErroneous => prop::sample::select(vec!["true".to_string(), "false".to_string()]).boxed(),
            FilterKey::CallType => prop::sample::select(CallType::ALL.to_vec()).prop_map(|c| c.to_string()).boxed(),
            _ => "[a-z][a-z0-9 /._-]{0,20}".boxed(),
        };
        (Just(k), value)
    });
    prop::collection::vec(clause, 0..4).prop_map(|clauses| TagFilter(clauses.into_iter().collect()))
}

fn grouping() -> impl Strategy<Value = GroupingSpec> {
    (
        prop::sample::select(GroupTag::ALL.to_vec()),
        prop::sample::select(Direction::ALL.to_vec()),
        1u32..200,
    )
        .prop_map(|(t, d, n)| GroupingSpec::new(t, d, n))
}

/// Complete drafts of every widget type, grouping attached at random.
fn draft() -> impl Strategy<Value = ExtractionResult> {
    let v = vocab();
    let pairs: Vec<(Metric, Aggregation)> = v
        .metric_names()
        .into_iter()
        .flat_map(|m| v.aggregations_for(m).iter().map(move |a| (m, *a)))
        .collect();
    (
        prop::sample::select(WidgetType::ALL.to_vec()),
        prop::sample::select(pairs),
        filter(),
        prop::option::of(grouping()),
        "[A-Za-z][A-Za-z0-9 \\[\\]-]{0,30}",
    )
        .prop_map(|(t, (m, a), filter, g, slo)| {
            if t == WidgetType::Slo2 {
                return ExtractionResult {
                    widget_type: Some(t),
                    slo_name: Some(slo),
                    ..Default::default()
                };
            }
            let grouping = if t == WidgetType::TopList {
                Some(g.unwrap_or(GroupingSpec::new(GroupTag::ServiceName, Direction::Desc, 10)))
            } else {
                g
            };
            ExtractionResult {
                widget_type: Some(t),
                metric: Some(m),
                aggregation: Some(a),
                filter,
                grouping,
                slo_name: None,
            }
        })
}

fn build(d: &ExtractionResult, minutes: u32) -> WidgetSpec {
    let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    build_widget_spec(d, TimeRange::last_minutes(minutes).unwrap(), &vocab(), "w-1", at).unwrap()
}

fn grouping_pointers(v: &Value, at: String, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let p = format!("{at}/{k}");
                if k == "grouping" {
                    out.push(p.clone());
                }
                grouping_pointers(child, p, out);
            }
        }
        Value::Array(a) => {
            for (i, child) in a.iter().enumerate() {
                grouping_pointers(child, format!("{at}/{i}"), out);
            }
        }
        _ => {}
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn built_specs_validate_and_round_trip(d in draft(), minutes in 1u32..100_000) {
        let spec = build(&d, minutes);
        let text = spec.to_json();
        let report = validate_widget_json(&text);
        prop_assert!(report.is_valid(), "{:?}\n{}", report, text);
        let back = WidgetSpec::from_json(&text).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn grouping_lives_only_where_allowed(d in draft()) {
        let spec = build(&d, 60);
        let value: Value = serde_json::from_str(&spec.to_json()).unwrap();
        let mut found = Vec::new();
        grouping_pointers(&value, String::new(), &mut found);
        let t = spec.widget_type;
        if t.supports_grouping() && d.grouping.is_some() {
            prop_assert_eq!(found, vec!["/config/dataSources/0/grouping".to_string()]);
        } else {
            prop_assert!(found.is_empty(), "{:?} on {}", found, t);
        }
        if t == WidgetType::TopList {
            prop_assert!(spec.data_sources()[0].grouping.is_some());
        }
    }

    #[test]
    fn slo_specs_carry_only_a_name(d in draft()) {
        let spec = build(&d, 60);
        let is_slo = matches!(spec.config, WidgetConfig::Slo { .. });
        prop_assert_eq!(is_slo, spec.widget_type == WidgetType::Slo2);
    }
}
