//! Prompt templates for the two extraction passes.
//!
//! Templates are stored in chat-template form: a system turn, a user turn
//! holding `Query: {}`, and an open assistant turn. The extraction and SLO
//! templates escape literal braces as `{{`/`}}`; the widget-type template
//! does not.

use crate::llm::CompletionRequest;
use crate::vocab::GlobalVocabulary;

const WIDGET_TYPE_TEMPLATE: &str = include_str!("../assets/widget_type.prompt");
const DATASOURCE_TEMPLATE: &str = include_str!("../assets/datasource_generic.prompt");
const SLO_TEMPLATE: &str = include_str!("../assets/datasource_slo.prompt");

const KNOWLEDGE_PLACEHOLDER: &str = "<global_knowledge_base>";
const DESCRIPTIONS_PLACEHOLDER: &str = "<widget_type_descriptions>";
const QUERY_PLACEHOLDER: &str = "{}";

const ROLE_END: &str = "<|end_role|>";
const TURN_END: &str = "<|end_of_text|>";

const WIDGET_TYPE_EXAMPLES_MARKER: &str = "A few examples of queries and their expected outputs";
const DATASOURCE_EXAMPLES_MARKER: &str = "Here are some examples:";
const SLO_EXAMPLES_MARKER: &str = "Some examples are given below:";

/// Appended to the user turn when the first extraction reply was unusable.
pub const CORRECTION_INSTRUCTION: &str = "Your previous reply could not be used. Reply with only the JSON object in the required format, with no other text.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FewShot {
    On,
    Off,
}

/// One rendered prompt, split into the pieces a chat API needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    /// The full template text with the `{}` query placeholder.
    template: String,
    system: String,
    user_template: String,
}

impl PromptTemplate {
    fn from_rendered(template: String) -> Self {
        let (system, user_template) = split_turns(&template);
        Self {
            template,
            system,
            user_template,
        }
    }

    pub fn system_prompt(&self) -> &str {
        &self.system
    }

    /// The user turn for a query (`Query: ...`).
    pub fn user_message(&self, query: &str) -> String {
        self.user_template.replacen(QUERY_PLACEHOLDER, query, 1)
    }

    /// The whole chat-template text with the query filled in.
    pub fn render(&self, query: &str) -> String {
        let at = self
            .template
            .rfind(QUERY_PLACEHOLDER)
            .expect("templates contain a query placeholder");
        let mut out = String::with_capacity(self.template.len() + query.len());
        out.push_str(&self.template[..at]);
        out.push_str(query);
        out.push_str(&self.template[at + QUERY_PLACEHOLDER.len()..]);
        out
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn request(&self, query: &str) -> CompletionRequest {
        CompletionRequest::new(self.system.clone(), self.user_message(query))
    }

    /// Number of `USER:` demonstrations in the system turn.
    pub fn example_count(&self) -> usize {
        self.system
            .lines()
            .filter(|l| l.starts_with("USER:"))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPack {
    pub widget_type: PromptTemplate,
    pub datasource_generic: PromptTemplate,
    pub datasource_slo: PromptTemplate,
    pub few_shot_count: usize,
    pub few_shot: FewShot,
}

pub fn build_prompts(vocab: &GlobalVocabulary) -> PromptPack {
    build_prompts_with(vocab, FewShot::On)
}

/// Builds the three prompts. With `FewShot::Off` every demonstration block
/// is dropped and the instructions are kept.
pub fn build_prompts_with(vocab: &GlobalVocabulary, few_shot: FewShot) -> PromptPack {
    let mut widget_type = WIDGET_TYPE_TEMPLATE.replacen(
        DESCRIPTIONS_PLACEHOLDER,
        &vocab.widget_type_descriptions_json(),
        1,
    );
    let mut generic = unescape_braces(DATASOURCE_TEMPLATE).replacen(
        KNOWLEDGE_PLACEHOLDER,
        &vocab.knowledge_json(),
        1,
    );
    let mut slo = unescape_braces(SLO_TEMPLATE);

    if few_shot == FewShot::Off {
        widget_type = strip_examples(&widget_type, WIDGET_TYPE_EXAMPLES_MARKER);
        generic = strip_examples(&generic, DATASOURCE_EXAMPLES_MARKER);
        slo = strip_examples(&slo, SLO_EXAMPLES_MARKER);
    }

    let datasource_generic = PromptTemplate::from_rendered(generic);
    PromptPack {
        few_shot_count: datasource_generic.example_count(),
        widget_type: PromptTemplate::from_rendered(widget_type),
        datasource_generic,
        datasource_slo: PromptTemplate::from_rendered(slo),
        few_shot,
    }
}

/// Collapses `{{`/`}}` to single braces, leaving the lone `{}` placeholder.
fn unescape_braces(template: &str) -> String {
    template.replace("{{", "{").replace("}}", "}")
}

/// Removes the demonstration block from `marker` up to the end of the
/// system turn.
fn strip_examples(template: &str, marker: &str) -> String {
    let Some(start) = template.find(marker) else {
        return template.to_string();
    };
    let end = template[start..]
        .find(TURN_END)
        .map(|i| start + i)
        .unwrap_or(template.len());
    let head = template[..start].trim_end_matches([' ', '\n']);
    format!("{head}{}", &template[end..])
}

/// Splits a chat-template text into (system text, user text).
fn split_turns(template: &str) -> (String, String) {
    let mut turns = template.split(TURN_END).map(|turn| {
        turn.split_once(ROLE_END)
            .map(|(_, body)| body)
            .unwrap_or(turn)
            .trim_start_matches(' ')
            .trim_start_matches('\n')
            .to_string()
    });
    let system = turns.next().unwrap_or_default();
    let user = turns.next().unwrap_or_default();
    (system, user)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pack() -> PromptPack {
        build_prompts(&GlobalVocabulary::embedded())
    }

    #[test]
    fn widget_type_prompt_carries_null_rule_and_examples() {
        let p = pack();
        assert!(p
            .widget_type
            .system_prompt()
            .contains("If widget type is not provided in the query, you should return \"Null\""));
        assert_eq!(p.widget_type.example_count(), 14);
    }

    #[test]
    fn generic_prompt_has_fifteen_examples_and_rules() {
        let p = pack();
        assert_eq!(p.few_shot_count, 15);
        let s = p.datasource_generic.system_prompt();
        assert!(s.contains("only application for TIME_SERIES and topList"));
        for n in 1..=4 {
            assert!(s.contains(&format!("{n}. ")), "rule {n}");
        }
        assert!(!s.contains(KNOWLEDGE_PLACEHOLDER));
        assert!(s.contains("\"PER_SECOND\""));
        assert!(!s.contains("{{"));
    }

    #[test]
    fn slo_prompt_has_both_examples() {
        let p = pack();
        assert!(p
            .datasource_slo
            .system_prompt()
            .contains("[demo]RobotShop - ep 123"));
        assert_eq!(p.datasource_slo.example_count(), 2);
    }

    #[test]
    fn user_turn_is_query_line() {
        let p = pack();
        assert_eq!(p.widget_type.user_message("abc"), "Query: abc");
        assert_eq!(p.datasource_generic.user_message("x y"), "Query: x y");
    }

    #[test]
    fn zero_shot_drops_examples_only() {
        let p = build_prompts_with(&GlobalVocabulary::embedded(), FewShot::Off);
        assert_eq!(p.few_shot_count, 0);
        assert_eq!(p.widget_type.example_count(), 0);
        assert_eq!(p.datasource_slo.example_count(), 0);
        assert!(p
            .datasource_generic
            .system_prompt()
            .contains("grouping is MANDATORY for topList"));
        assert_ne!(
            p.datasource_generic.system_prompt(),
            pack().datasource_generic.system_prompt()
        );
    }
}
