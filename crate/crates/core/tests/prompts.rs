use dashtalk_core::prompts::{build_prompts, build_prompts_with, FewShot};
use dashtalk_core::vocab::GlobalVocabulary;

const WIDGET_TYPE_LISTING: &str = include_str!("fixtures/widget_type.listing.txt");
const GENERIC_LISTING: &str = include_str!("fixtures/datasource_generic.listing.txt");
const SLO_LISTING: &str = include_str!("fixtures/datasource_slo.listing.txt");

fn unescape(s: &str) -> String {
    s.replace("{{", "{").replace("}}", "}")
}

#[test]
fn widget_type_template_reproduces_listing() {
    let pack = build_prompts(&GlobalVocabulary::embedded());
    assert_eq!(pack.widget_type.template(), WIDGET_TYPE_LISTING);
}

#[test]
fn slo_template_reproduces_listing() {
    let pack = build_prompts(&GlobalVocabulary::embedded());
    assert_eq!(pack.datasource_slo.template(), unescape(SLO_LISTING));
}

#[test]
fn generic_template_substitutes_only_the_knowledge_block() {
    let vocab = GlobalVocabulary::embedded();
    let pack = build_prompts(&vocab);
    let expected = unescape(GENERIC_LISTING).replace("<global_knowledge_base>", &vocab.knowledge_json());
    assert_eq!(pack.datasource_generic.template(), expected);
}

#[test]
fn example_counts() {
    let pack = build_prompts(&GlobalVocabulary::embedded());
    assert_eq!(pack.widget_type.example_count(), 14);
    assert_eq!(pack.datasource_generic.example_count(), 15);
    assert_eq!(pack.few_shot_count, 15);
    assert_eq!(pack.datasource_slo.example_count(), 2);
}

#[test]
fn render_fills_the_query_once() {
    let pack = build_prompts(&GlobalVocabulary::embedded());
    let q = "Show me the p99 latency of catalogue";
    let rendered = pack.datasource_generic.render(q);
    assert!(rendered.contains(&format!("Query: {q}<|end_of_text|>")));
    assert_eq!(rendered.matches(q).count(), 1);
}

#[test]
fn zero_shot_prompts_keep_instructions() {
    let vocab = GlobalVocabulary::embedded();
    let zero = build_prompts_with(&vocab, FewShot::Off);
    let few = build_prompts(&vocab);
    for (z, f) in [
        (&zero.widget_type, &few.widget_type),
        (&zero.datasource_generic, &few.datasource_generic),
        (&zero.datasource_slo, &few.datasource_slo),
    ] {
        assert_eq!(z.example_count(), 0);
        assert!(z.system_prompt().len() < f.system_prompt().len());
        assert!(f.system_prompt().starts_with(z.system_prompt().trim_end()));
        assert_eq!(z.user_message("x"), f.user_message("x"));
    }
}
