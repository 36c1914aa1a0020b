//! Template-based synthetic dataset over the shipped vocabulary and an
//! entity catalog.

use std::collections::HashSet;

use dashtalk_core::catalog::{EntityCatalog, EntityKind};
use dashtalk_core::parser::{GroupingSpec, TagFilter};
use dashtalk_core::vocab::{
    Aggregation, CallType, Direction, FilterKey, GlobalVocabulary, GroupTag, Metric, WidgetType,
    MAX_RESULTS_OPTIONS,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::EvalRecord;

pub const DEFAULT_SEED: u64 = 271;

/// Widget-type mix of the shipped dataset: `(type, with grouping, count)`.
/// 271 records, 48 of them grouped.
pub const MIX: &[(Option<WidgetType>, bool, usize)] = &[
    (Some(WidgetType::TopList), true, 30),
    (Some(WidgetType::TimeSeries), true, 18),
    (Some(WidgetType::TimeSeries), false, 80),
    (Some(WidgetType::BigNumber), false, 60),
    (Some(WidgetType::Pie), false, 40),
    (Some(WidgetType::Slo2), false, 15),
    (None, false, 28),
];

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty choice")
}

fn names(catalog: &EntityCatalog, kind: EntityKind) -> Vec<String> {
    catalog.names(kind).iter().cloned().collect()
}

fn metric_phrase(rng: &mut ChaCha8Rng, m: Option<Metric>, a: Option<Aggregation>) -> String {
    use Aggregation::*;
    use Metric::*;
    let options: Vec<String> = match (m, a) {
        (Some(Calls), Some(Sum)) => vec!["total calls".into(), "number of calls".into(), "call count".into()],
        (Some(Calls), Some(PerSecond)) => vec!["calls per second".into(), "request rate per second".into()],
        (Some(Calls), _) => vec!["calls".into(), "traffic".into()],
        (Some(ErroneousCalls), Some(Sum)) => vec!["total erroneous calls".into(), "number of failed calls".into()],
        (Some(ErroneousCalls), Some(PerSecond)) => {
            vec!["erroneous calls per second".into(), "failed calls per second".into()]
        }
        (Some(ErroneousCalls), _) => vec!["erroneous calls".into(), "failed calls".into()],
        (Some(Errors), Some(_)) => vec!["error rate".into(), "mean error rate".into()],
        (Some(Errors), None) => vec!["errors".into()],
        (Some(Latency), Some(Mean)) => vec!["mean latency".into(), "average latency".into()],
        (Some(Latency), Some(Min)) => vec!["minimum latency".into(), "lowest latency".into()],
        (Some(Latency), Some(Max)) => vec!["maximum latency".into(), "worst-case latency".into()],
        (Some(Latency), Some(p)) => {
            let n = &p.as_str()[1..];
            vec![format!("{} latency", p.as_str().to_lowercase()), format!("{n}th percentile latency")]
        }
        (Some(Latency), None) => vec!["latency".into(), "response time".into()],
        (None, Some(Sum)) => vec!["the total".into()],
        (None, Some(PerSecond)) => vec!["the per-second rate".into()],
        (None, Some(Mean)) => vec!["the average".into()],
        (None, Some(a)) => vec![format!("the {}", a.as_str().to_lowercase())],
        (None, None) => vec!["the metrics".into(), "the numbers".into()],
    };
    pick(rng, &options).clone()
}

fn filter_phrase(filter: &TagFilter) -> String {
    let mut parts = Vec::new();
    for (k, v) in filter.iter() {
        let p = match k {
            FilterKey::ServiceName if v.ends_with("service") => format!("for {v}"),
            FilterKey::ServiceName => format!("for the {v} service"),
            FilterKey::ApplicationName => format!("in the {v} application"),
            FilterKey::EndpointName => format!("on the {v} endpoint"),
            FilterKey::CallType => format!("for {v} calls"),
            FilterKey::CallErroneous => "counting only erroneous calls".to_string(),
            FilterKey::TechnologyName => format!("on {v}"),
        };
        parts.push(p);
    }
    parts.join(" ")
}

fn tag_plural(t: GroupTag) -> &'static str {
    match t {
        GroupTag::CallErrorMessage => "error messages",
        GroupTag::EndpointName => "endpoints",
        GroupTag::CallHttpPath => "HTTP paths",
        GroupTag::CallHttpStatus => "HTTP status codes",
        GroupTag::HttpUrl => "URLs",
        GroupTag::ServiceName => "services",
    }
}

fn random_filter(rng: &mut ChaCha8Rng, catalog: &EntityCatalog, metric: Option<Metric>) -> TagFilter {
    let mut f = TagFilter::new();
    let roll: f64 = rng.gen();
    if roll < 0.6 {
        f.insert(FilterKey::ServiceName, pick(rng, &names(catalog, EntityKind::Services)).clone());
    } else if roll < 0.85 {
        f.insert(FilterKey::ApplicationName, pick(rng, &names(catalog, EntityKind::Applications)).clone());
    } else if roll < 0.95 {
        f.insert(FilterKey::EndpointName, pick(rng, &names(catalog, EntityKind::Endpoints)).clone());
    }
    if rng.gen_bool(0.15) {
        f.insert(FilterKey::CallType, pick(rng, CallType::ALL).to_string());
    }
    if metric == Some(Metric::Calls) && rng.gen_bool(0.1) {
        f.insert(FilterKey::CallErroneous, "true");
    }
    if rng.gen_bool(0.03) {
        f.insert(FilterKey::TechnologyName, pick(rng, &["java", "python", "nodejs"]).to_string());
    }
    f
}

fn record(
    rng: &mut ChaCha8Rng,
    vocab: &GlobalVocabulary,
    catalog: &EntityCatalog,
    widget_type: Option<WidgetType>,
    grouped: bool,
) -> EvalRecord {
    if widget_type == Some(WidgetType::Slo2) {
        let slo = pick(rng, &names(catalog, EntityKind::SloConfigs)).clone();
        let templates = [
            format!("Show the SLO status for {slo}"),
            format!("How is the {slo} SLO doing"),
            format!("SLO widget for {slo}"),
            format!("add the {slo} service level objective"),
        ];
        return EvalRecord {
            query: pick(rng, &templates).clone(),
            widget_type,
            metric: None,
            aggregation: None,
            filter: TagFilter::new(),
            grouping: None,
            slo_name: Some(slo),
        };
    }

    let metric = if rng.gen_bool(0.06) {
        None
    } else {
        Some(*pick(rng, &vocab.metric_names()))
    };
    let aggregation = if rng.gen_bool(0.08) {
        None
    } else {
        let allowed = match metric {
            Some(m) => vocab.aggregations_for(m).to_vec(),
            None => vocab.all_aggregations(),
        };
        Some(*pick(rng, &allowed))
    };
    let filter = random_filter(rng, catalog, metric);
    let grouping = grouped.then(|| {
        let direction = if rng.gen_bool(0.75) { Direction::Desc } else { Direction::Asc };
        GroupingSpec::new(*pick(rng, GroupTag::ALL), direction, *pick(rng, &MAX_RESULTS_OPTIONS))
    });

    let m = metric_phrase(rng, metric, aggregation);
    let f = filter_phrase(&filter);
    let mf = if f.is_empty() { m.clone() } else { format!("{m} {f}") };
    let templates: Vec<String> = match (widget_type, grouping) {
        (_, Some(g)) => {
            let n = g.max_results.unwrap();
            let tags = tag_plural(g.group_by_tag.unwrap());
            let (edge, extreme) = match g.direction {
                Some(Direction::Asc) => ("bottom", "lowest"),
                _ => ("top", "highest"),
            };
            if widget_type == Some(WidgetType::TopList) {
                vec![
                    format!("{} {n} {tags} by {mf}", capitalize(edge)),
                    format!("List the {n} {tags} with the {extreme} {mf}"),
                    format!("Which {n} {tags} have the {extreme} {mf}?"),
                ]
            } else {
                vec![
                    format!("Plot {mf} over time grouped by {tags}, {edge} {n}"),
                    format!("Time series of {mf} split by {tags}, showing the {n} {extreme}"),
                ]
            }
        }
        (Some(WidgetType::TimeSeries), None) => vec![
            format!("Show {mf} over time"),
            format!("Plot the {mf} as a time series"),
            format!("Graph {mf} over the last hour"),
            format!("How has the {mf} trended?"),
        ],
        (Some(WidgetType::BigNumber), None) => vec![
            format!("Big number of {mf}"),
            format!("Show {mf} as a single value"),
            format!("What is the current {mf}?"),
        ],
        (Some(WidgetType::Pie), None) => vec![
            format!("Pie chart of {mf}"),
            format!("Show {mf} as a donut"),
            format!("Break down {mf} in a pie"),
        ],
        _ => vec![
            format!("Show {mf}"),
            format!("I want to see {mf}"),
            format!("Give me {mf}"),
        ],
    };
    EvalRecord {
        query: pick(rng, &templates).clone(),
        widget_type,
        metric,
        aggregation,
        filter,
        grouping,
        slo_name: None,
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Generates the dataset described by [`MIX`]. Queries are unique; the same
/// seed and catalog always give the same records in the same order.
pub fn generate_dataset(seed: u64, vocab: &GlobalVocabulary, catalog: &EntityCatalog) -> Vec<EvalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan: Vec<(Option<WidgetType>, bool)> = MIX
        .iter()
        .flat_map(|(t, g, n)| std::iter::repeat((*t, *g)).take(*n))
        .collect();
    plan.shuffle(&mut rng);
    let mut seen = HashSet::new();
    plan.into_iter()
        .map(|(t, g)| loop {
            let r = record(&mut rng, vocab, catalog, t, g);
            if seen.insert(r.query.to_lowercase()) {
                break r;
            }
        })
        .collect()
}
