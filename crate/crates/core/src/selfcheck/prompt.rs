//! Prompt templates for the classification and explanation stages.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Sentiment,
    Multichoice,
    Nli,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplanationKind {
    Counterfactual,
    FeatureAttribution,
    Redaction,
    Classification,
}

impl ExplanationKind {
    pub fn name(self) -> &'static str {
        match self {
            ExplanationKind::Counterfactual => "counterfactual",
            ExplanationKind::FeatureAttribution => "feature-attribution",
            ExplanationKind::Redaction => "redaction",
            ExplanationKind::Classification => "classification",
        }
    }
}

/// Who the prompt asks about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Persona {
    Objective,
    Human,
    You,
}

impl Persona {
    pub const ALL: [Persona; 3] = [Persona::Objective, Persona::Human, Persona::You];

    pub fn name(self) -> &'static str {
        match self {
            Persona::Objective => "objective",
            Persona::Human => "human",
            Persona::You => "you",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RedactionToken {
    #[default]
    Redacted,
    Removed,
}

impl RedactionToken {
    pub fn token(self) -> &'static str {
        match self {
            RedactionToken::Redacted => "[REDACTED]",
            RedactionToken::Removed => "[REMOVED]",
        }
    }

    fn adjective(self) -> &'static str {
        match self {
            RedactionToken::Redacted => "redacted",
            RedactionToken::Removed => "removed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CounterfactualTarget {
    #[default]
    Explicit,
    Implicit,
}

/// Template slots. Which ones are required depends on the task and kind.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slots {
    pub paragraph: Option<String>,
    pub question: Option<String>,
    #[serde(default)]
    pub choices: Vec<String>,
    pub hypothesis: Option<String>,
    /// Requested label for explicit counterfactuals.
    pub target: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task: Task,
    pub kind: ExplanationKind,
    pub persona: Persona,
    #[serde(default)]
    pub redaction_token: RedactionToken,
    #[serde(default)]
    pub counterfactual_target: CounterfactualTarget,
    pub slots: Slots,
}

fn option_letter(i: usize) -> char {
    (b'a' + i as u8) as char
}

impl PromptSpec {
    /// Checks that the slot set matches the task and kind.
    pub fn validate(&self) -> Result<()> {
        let s = &self.slots;
        if s.paragraph.is_none() {
            return Err(Error::Template("paragraph"));
        }
        match self.task {
            Task::Sentiment => {
                if s.question.is_some() || !s.choices.is_empty() || s.hypothesis.is_some() {
                    return Err(Error::Config("sentiment prompts take only a paragraph".into()));
                }
            }
            Task::Multichoice => {
                if s.question.is_none() {
                    return Err(Error::Template("question"));
                }
                if s.choices.len() < 2 {
                    return Err(Error::Template("choices"));
                }
                if s.choices.len() > 25 {
                    return Err(Error::Config("at most 25 answer choices".into()));
                }
                if s.hypothesis.is_some() {
                    return Err(Error::Config("multichoice prompts take no hypothesis".into()));
                }
            }
            Task::Nli => {
                if s.hypothesis.is_none() {
                    return Err(Error::Template("hypothesis"));
                }
                if s.question.is_some() || !s.choices.is_empty() {
                    return Err(Error::Config("nli prompts take no question or choices".into()));
                }
            }
        }
        let explicit = self.kind == ExplanationKind::Counterfactual
            && self.counterfactual_target == CounterfactualTarget::Explicit;
        match (&s.target, explicit) {
            (None, true) => Err(Error::Template("target")),
            (Some(_), false) => {
                Err(Error::Config("a target label is only used by explicit counterfactual prompts".into()))
            }
            _ => Ok(()),
        }
    }

    /// Labels a classification answer may name, excluding "unknown".
    pub fn answer_labels(&self) -> Vec<String> {
        answer_labels(self.task, &self.slots.choices)
    }
}

pub fn answer_labels(task: Task, choices: &[String]) -> Vec<String> {
    match task {
        Task::Sentiment => ["positive", "negative", "neutral"].map(String::from).to_vec(),
        Task::Multichoice => choices.to_vec(),
        Task::Nli => ["yes", "no"].map(String::from).to_vec(),
    }
}

/// Renders the prompt text for `spec`.
pub fn render_prompt(spec: &PromptSpec) -> Result<String> {
    spec.validate()?;
    let s = &spec.slots;
    let paragraph = s.paragraph.as_deref().unwrap_or_default();
    let question = s.question.as_deref().unwrap_or_default();
    let hypothesis = s.hypothesis.as_deref().unwrap_or_default();
    let token = spec.redaction_token.token();
    let p = spec.persona;
    use ExplanationKind as K;
    use Persona as P;
    use Task as T;

    let instruction = match spec.kind {
        K::Classification => {
            let ask = match (spec.task, p) {
                (T::Sentiment, P::Objective) => "What is the sentiment of the following paragraph?".to_string(),
                (T::Sentiment, P::Human) => {
                    "What would a human classify the sentiment of the following paragraph as?".to_string()
                }
                (T::Sentiment, P::You) => {
                    "What would you classify the sentiment of the following paragraph as?".to_string()
                }
                (T::Multichoice, P::Objective) => {
                    format!("Consider the following paragraph, and answer the question: \"{question}\"")
                }
                (T::Multichoice, P::Human) => {
                    format!("Consideing the following paragraph, how would a human answer the question: \"{question}\"")
                }
                (T::Multichoice, P::You) => {
                    format!("Consideing the following paragraph, how would you answer the question: \"{question}\"")
                }
                (T::Nli, P::Objective) => {
                    format!("Does the statement \"{hypothesis}\" entail from the following paragraph?")
                }
                (T::Nli, P::Human) => {
                    format!("Does a human think the statement \"{hypothesis}\" entail from the following paragraph?")
                }
                (T::Nli, P::You) => {
                    format!("Do you think the statement \"{hypothesis}\" entail from the following paragraph?")
                }
            };
            let answer = match spec.task {
                T::Sentiment => {
                    "Answer only \"positive\", \"negative\", \"neutral\", or \"unknown\".".to_string()
                }
                T::Multichoice => {
                    let mut opts: Vec<String> = s
                        .choices
                        .iter()
                        .enumerate()
                        .map(|(i, c)| format!("{}) \"{c}\"", option_letter(i)))
                        .collect();
                    opts.push(format!("or {}) \"unknown\"", option_letter(s.choices.len())));
                    format!("Answer either {} if the question can not be answered.", opts.join(", "))
                }
                T::Nli => "Answer either 1) \"yes\" for entailment, 2) \"no\" for no entailment, or 3) \"unknown\" if the question can not be answered.".to_string(),
            };
            format!(
                "{ask} The paragraph can contain {} words marked with {token}. {answer}",
                spec.redaction_token.adjective()
            )
        }
        K::Counterfactual => {
            let body = match spec.counterfactual_target {
                CounterfactualTarget::Explicit => {
                    let target = s.target.as_deref().unwrap_or_default();
                    match (spec.task, p) {
                        (T::Sentiment, P::Objective) => {
                            format!("Edit the following paragraph such that the sentiment is \"{target}\".")
                        }
                        (T::Sentiment, P::Human) => format!(
                            "Edit the following paragraph such a human would classify the sentiment is \"{target}\"."
                        ),
                        (T::Sentiment, P::You) => format!(
                            "Edit the following paragraph such you would classify the sentiment is \"{target}\"."
                        ),
                        (T::Multichoice, P::Objective) => format!(
                            "Edit the following paragraph such that the answer to the question \"{question}\" is \"{target}\"."
                        ),
                        (T::Multichoice, P::Human) => format!(
                            "Edit the following paragraph such a human would answer the question \"{question}\" with \"{target}\"."
                        ),
                        (T::Multichoice, P::You) => format!(
                            "Edit the following paragraph such you would answer the question \"{question}\" with \"{target}\"."
                        ),
                        (T::Nli, _) => {
                            let who = match p {
                                P::Objective => "",
                                P::Human => "a human would say ",
                                P::You => "you would say ",
                            };
                            let relation = if target.eq_ignore_ascii_case("no") {
                                "does not entails"
                            } else {
                                "entails"
                            };
                            format!(
                                "Edit the following paragraph such that {who}the statement \"{hypothesis}\" {relation} from it."
                            )
                        }
                    }
                }
                CounterfactualTarget::Implicit => match (spec.task, p) {
                    (T::Sentiment, P::Objective) => "Edit the following paragraph such that the sentiment becomes the opposite of what it currently is.".to_string(),
                    (T::Sentiment, P::Human) => "Edit the following paragraph such a human would classify the as the opposite of what it currently is.".to_string(),
                    (T::Sentiment, P::You) => "Edit the following paragraph such you would classify the sentiment as the opposite of what it currently is.".to_string(),
                    (T::Multichoice, _) => {
                        let lead = match p {
                            P::Objective => format!("such that the answer to the question \"{question}\" is different"),
                            P::Human => format!("such a human would answer the question \"{question}\" differently"),
                            P::You => format!("such you would answer the question \"{question}\" differently"),
                        };
                        let n = s.choices.len();
                        let opts: Vec<String> = s
                            .choices
                            .iter()
                            .enumerate()
                            .map(|(i, c)| {
                                let and = if i + 1 == n { "and " } else { "" };
                                format!("{and}{}) \"{c}\"", option_letter(i))
                            })
                            .collect();
                        format!(
                            "Edit the following paragraph {lead} from how it should currently be answered. The possible answer options, including the current answer, are {}.",
                            opts.join(", ")
                        )
                    }
                    (T::Nli, _) => {
                        let tail = match p {
                            P::Objective => "the entailment becomes",
                            P::Human => "a human would say the entailment is",
                            P::You => "you would say the entailment is",
                        };
                        format!(
                            "Edit the following paragraph, such that given the statement \"{hypothesis}\", {tail} the opposite of what it currently is."
                        )
                    }
                },
            };
            format!("{body} Make as few edits as possible.")
        }
        K::FeatureAttribution | K::Redaction => {
            let redact = spec.kind == K::Redaction;
            let verb = if redact { "Redact" } else { "List" };
            let lead = match spec.task {
                T::Sentiment => "the most important words for determining the sentiment of the following paragraph".to_string(),
                T::Multichoice => {
                    format!("the most important words for answering \"{question}\" given the following paragraph")
                }
                T::Nli => format!(
                    "the most important words in the following paragraph, for determining if the statement \"{hypothesis}\" entails from it"
                ),
            };
            let condition = match (spec.task, p) {
                (T::Sentiment, P::Objective) => "the sentiment can not be determined",
                (T::Sentiment, P::Human) => "a human can not determine the sentiment",
                (T::Sentiment, P::You) => "you can not determine the sentiment",
                (T::Multichoice, P::Objective) => "the question can not be answered",
                (T::Multichoice, P::Human) => "a human can not answer the question",
                (T::Multichoice, P::You) => "you can not answer the question",
                (T::Nli, P::Objective) => "it can not be determined if there is entailment or no entailment",
                (T::Nli, P::Human) if redact => "a human can not determine if there is entailment or no entailment",
                (T::Nli, P::Human) => "you a human not determine if there is entailment or no entailment",
                (T::Nli, P::You) => "you can not determine if there is entailment or no entailment",
            };
            let how = if redact { format!(", by replacing important words with {token}") } else { String::new() };
            format!("{verb} {lead}{how}, such that without these words {condition}.")
        }
    };
    Ok(format!("{instruction} Do not explain the answer.\n\nParagraph: {paragraph}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentiment(kind: ExplanationKind, persona: Persona, token: RedactionToken) -> PromptSpec {
        PromptSpec {
            task: Task::Sentiment,
            kind,
            persona,
            redaction_token: token,
            counterfactual_target: CounterfactualTarget::Explicit,
            slots: Slots {
                paragraph: Some("it is awful".into()),
                target: (kind == ExplanationKind::Counterfactual).then(|| "positive".into()),
                ..Slots::default()
            },
        }
    }

    #[test]
    fn classification_instruction_sentence() {
        let text =
            render_prompt(&sentiment(ExplanationKind::Classification, Persona::Objective, RedactionToken::Redacted))
                .unwrap();
        assert!(text.contains("Answer only \"positive\", \"negative\", \"neutral\", or \"unknown\"."));
        assert!(text.ends_with("\n\nParagraph: it is awful"));
    }

    #[test]
    fn removed_variant_differs_only_in_token() {
        let a = render_prompt(&sentiment(ExplanationKind::Redaction, Persona::You, RedactionToken::Redacted)).unwrap();
        let b = render_prompt(&sentiment(ExplanationKind::Redaction, Persona::You, RedactionToken::Removed)).unwrap();
        assert_eq!(a.replace("[REDACTED]", "[REMOVED]"), b);
        assert_ne!(a, b);
    }

    #[test]
    fn multichoice_lists_options_then_unknown() {
        let spec = PromptSpec {
            task: Task::Multichoice,
            kind: ExplanationKind::Classification,
            persona: Persona::Objective,
            redaction_token: RedactionToken::Redacted,
            counterfactual_target: CounterfactualTarget::Explicit,
            slots: Slots {
                paragraph: Some("p".into()),
                question: Some("Where is Mary?".into()),
                choices: vec!["hallway".into(), "office".into()],
                ..Slots::default()
            },
        };
        let text = render_prompt(&spec).unwrap();
        assert!(text.contains(
            "Answer either a) \"hallway\", b) \"office\", or c) \"unknown\" if the question can not be answered."
        ));
    }

    #[test]
    fn missing_slot_is_named() {
        let mut spec = sentiment(ExplanationKind::Counterfactual, Persona::Human, RedactionToken::Redacted);
        spec.slots.target = None;
        match render_prompt(&spec) {
            Err(Error::Template(slot)) => assert_eq!(slot, "target"),
            other => panic!("expected template error, got {other:?}"),
        }
        spec.task = Task::Nli;
        spec.slots.target = Some("no".into());
        assert!(matches!(render_prompt(&spec), Err(Error::Template("hypothesis"))));
    }
}
