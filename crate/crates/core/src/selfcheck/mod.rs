//! Self-consistency checks of chat-model explanations.
//!
//! Each check runs three independent sessions: classify the input, ask for
//! an explanation, then classify the input transformed by that explanation.

mod backend;
mod parse;
mod prompt;

pub use backend::{
    ChatBackend, ChatTurn, GenerationParams, HttpBackend, MockBackend, MockMode, MockPattern, MockRule, MockScript,
    Role,
};
pub use parse::{apply_redaction, extract_explanation, parse_label, ExtractedExplanation, ParsedLabel, Redacted};
pub use prompt::{
    answer_labels, render_prompt, CounterfactualTarget, ExplanationKind, Persona, PromptSpec, RedactionToken, Slots,
    Task,
};

use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

/// One observation to classify and explain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfCheckExample {
    pub id: String,
    pub task: Task,
    pub gold: String,
    pub paragraph: String,
    #[serde(default)]
    pub question: Option<String>,
    #[serde(default)]
    pub choices: Vec<String>,
    #[serde(default)]
    pub hypothesis: Option<String>,
}

impl SelfCheckExample {
    fn slots(&self, paragraph: &str, target: Option<String>) -> Slots {
        Slots {
            paragraph: Some(paragraph.to_string()),
            question: self.question.clone(),
            choices: self.choices.clone(),
            hypothesis: self.hypothesis.clone(),
            target,
        }
    }

    pub fn labels(&self) -> Vec<String> {
        answer_labels(self.task, &self.choices)
    }

    /// Labels a counterfactual should reach: the opposite label where one
    /// exists, otherwise every other label.
    pub fn counterfactual_targets(&self) -> Vec<String> {
        let gold = self.gold.to_lowercase();
        let opposite = match (self.task, gold.as_str()) {
            (Task::Sentiment, "positive") => Some("negative"),
            (Task::Sentiment, "negative") => Some("positive"),
            (Task::Nli, "yes") => Some("no"),
            (Task::Nli, "no") => Some("yes"),
            _ => None,
        };
        match opposite {
            Some(o) => vec![o.to_string()],
            None => self.labels().into_iter().filter(|l| !l.eq_ignore_ascii_case(&gold)).collect(),
        }
    }
}

/// One prompt variation: an explanation kind plus its persona and
/// token-or-target axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variation {
    pub kind: VariationKind,
    pub persona: PersonaKey,
    pub axis: Axis,
}

/// Orderable mirrors of the prompt enums, used as report keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariationKind {
    Counterfactual,
    FeatureAttribution,
    Redaction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PersonaKey {
    Objective,
    Human,
    You,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Explicit,
    Implicit,
    Redacted,
    Removed,
}

impl VariationKind {
    pub const ALL: [VariationKind; 3] =
        [VariationKind::Counterfactual, VariationKind::FeatureAttribution, VariationKind::Redaction];

    pub fn kind(self) -> ExplanationKind {
        match self {
            VariationKind::Counterfactual => ExplanationKind::Counterfactual,
            VariationKind::FeatureAttribution => ExplanationKind::FeatureAttribution,
            VariationKind::Redaction => ExplanationKind::Redaction,
        }
    }
}

impl PersonaKey {
    pub fn persona(self) -> Persona {
        match self {
            PersonaKey::Objective => Persona::Objective,
            PersonaKey::Human => Persona::Human,
            PersonaKey::You => Persona::You,
        }
    }
}

impl Variation {
    /// The six prompt variations of one explanation kind.
    pub fn all(kind: VariationKind) -> Vec<Variation> {
        let axes = match kind {
            VariationKind::Counterfactual => [Axis::Explicit, Axis::Implicit],
            _ => [Axis::Redacted, Axis::Removed],
        };
        [PersonaKey::Objective, PersonaKey::Human, PersonaKey::You]
            .into_iter()
            .flat_map(|persona| axes.map(|axis| Variation { kind, persona, axis }))
            .collect()
    }

    pub fn every() -> Vec<Variation> {
        VariationKind::ALL.into_iter().flat_map(Variation::all).collect()
    }

    pub fn token(self) -> RedactionToken {
        match self.axis {
            Axis::Removed => RedactionToken::Removed,
            _ => RedactionToken::Redacted,
        }
    }

    pub fn target(self) -> CounterfactualTarget {
        match self.axis {
            Axis::Implicit => CounterfactualTarget::Implicit,
            _ => CounterfactualTarget::Explicit,
        }
    }

    pub fn label(self) -> String {
        let axis = match self.axis {
            Axis::Explicit => "explicit",
            Axis::Implicit => "implicit",
            Axis::Redacted => "[REDACTED]",
            Axis::Removed => "[REMOVED]",
        };
        format!("{}/{}", self.persona.persona().name(), axis)
    }
}

/// Prompt text, raw answer and what was read from it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub prompt: String,
    pub response: String,
    pub parsed: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscardReason {
    Incorrect,
    UnparseableClassification,
    UnparseableExplanation,
    UnparseableReclassification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfConsistencyRecord {
    pub id: String,
    pub task: Task,
    pub variation: Variation,
    pub gold: String,
    pub prediction: ParsedLabel,
    pub correct: bool,
    pub explanation: Option<ExtractedExplanation>,
    pub new_prediction: Option<ParsedLabel>,
    /// Defined only for correctly classified, fully parsed observations.
    pub faithful: Option<bool>,
    /// Counterfactual label the new prediction reached, if any.
    pub matched_target: Option<String>,
    pub discard: Option<DiscardReason>,
    pub exchanges: Vec<ChatExchange>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfCheckOptions {
    /// Redaction and feature attribution count as faithful only when the
    /// new answer is "unknown" rather than any non-gold answer.
    pub strict_unknown: bool,
}

fn session(backend: &dyn ChatBackend, prompt: String) -> Result<(String, String)> {
    // a fresh conversation holding exactly one user turn
    let response = backend.complete(&[ChatTurn::user(prompt.clone())])?;
    Ok((prompt, response))
}

/// Runs the three sessions for one example and variation.
pub fn evaluate_self_consistency(
    backend: &dyn ChatBackend,
    example: &SelfCheckExample,
    variation: Variation,
    options: SelfCheckOptions,
) -> Result<SelfConsistencyRecord> {
    let labels = example.labels();
    let classify = |paragraph: &str| -> Result<(ChatExchange, ParsedLabel)> {
        let spec = PromptSpec {
            task: example.task,
            kind: ExplanationKind::Classification,
            persona: variation.persona.persona(),
            redaction_token: variation.token(),
            counterfactual_target: CounterfactualTarget::Explicit,
            slots: example.slots(paragraph, None),
        };
        let (prompt, response) = session(backend, render_prompt(&spec)?)?;
        let parsed = parse_label(&response, example.task, &labels);
        Ok((ChatExchange { prompt, response, parsed: parsed.as_str().to_string() }, parsed))
    };

    let mut record = SelfConsistencyRecord {
        id: example.id.clone(),
        task: example.task,
        variation,
        gold: example.gold.clone(),
        prediction: ParsedLabel::Unparseable,
        correct: false,
        explanation: None,
        new_prediction: None,
        faithful: None,
        matched_target: None,
        discard: None,
        exchanges: Vec::with_capacity(3),
    };

    let (exchange, prediction) = classify(&example.paragraph)?;
    record.exchanges.push(exchange);
    record.correct = prediction.is(&example.gold);
    record.prediction = prediction;
    if record.prediction == ParsedLabel::Unparseable {
        record.discard = Some(DiscardReason::UnparseableClassification);
        return Ok(record);
    }
    if !record.correct {
        record.discard = Some(DiscardReason::Incorrect);
        return Ok(record);
    }

    let kind = variation.kind.kind();
    let targets = example.counterfactual_targets();
    let explicit_target = (kind == ExplanationKind::Counterfactual
        && variation.target() == CounterfactualTarget::Explicit)
        .then(|| targets.first().cloned())
        .flatten();
    if kind == ExplanationKind::Counterfactual
        && variation.target() == CounterfactualTarget::Explicit
        && explicit_target.is_none()
    {
        return Err(Error::Config(format!("no counterfactual target for gold label {:?}", example.gold)));
    }
    let spec = PromptSpec {
        task: example.task,
        kind,
        persona: variation.persona.persona(),
        redaction_token: variation.token(),
        counterfactual_target: variation.target(),
        slots: example.slots(&example.paragraph, explicit_target.clone()),
    };
    let (prompt, response) = session(backend, render_prompt(&spec)?)?;
    let explanation = extract_explanation(&response, kind);
    let transformed = match &explanation {
        Some(ExtractedExplanation::Paragraph(p)) => Some(p.clone()),
        Some(ExtractedExplanation::Words(words)) => {
            let redacted = apply_redaction(&example.paragraph, words, variation.token().token());
            if !redacted.unmatched.is_empty() {
                log::debug!("{}: {} listed words not in the paragraph", example.id, redacted.unmatched.len());
            }
            Some(redacted.text)
        }
        None => None,
    };
    let parsed = match &explanation {
        Some(ExtractedExplanation::Paragraph(_)) => "paragraph".to_string(),
        Some(ExtractedExplanation::Words(w)) => w.join(", "),
        None => "unparseable".to_string(),
    };
    record.exchanges.push(ChatExchange { prompt, response, parsed });
    record.explanation = explanation;
    let Some(transformed) = transformed else {
        record.discard = Some(DiscardReason::UnparseableExplanation);
        return Ok(record);
    };

    let (exchange, new_prediction) = classify(&transformed)?;
    record.exchanges.push(exchange);
    if new_prediction == ParsedLabel::Unparseable {
        record.new_prediction = Some(new_prediction);
        record.discard = Some(DiscardReason::UnparseableReclassification);
        return Ok(record);
    }
    let faithful = match kind {
        ExplanationKind::Counterfactual => {
            let wanted: Vec<String> = match explicit_target {
                Some(t) => vec![t],
                None => targets,
            };
            record.matched_target = wanted.iter().find(|t| new_prediction.is(t)).cloned();
            record.matched_target.is_some()
        }
        _ if options.strict_unknown => new_prediction == ParsedLabel::Unknown,
        _ => !new_prediction.is(&example.gold),
    };
    record.new_prediction = Some(new_prediction);
    record.faithful = Some(faithful);
    Ok(record)
}

/// Evaluates every (example, variation) pair on up to `workers` threads.
/// Results keep the input order: examples outer, variations inner.
pub fn evaluate_batch(
    backend: &dyn ChatBackend,
    examples: &[SelfCheckExample],
    variations: &[Variation],
    options: SelfCheckOptions,
    workers: usize,
) -> Result<Vec<Result<SelfConsistencyRecord>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let jobs: Vec<(&SelfCheckExample, Variation)> =
        examples.iter().flat_map(|e| variations.iter().map(move |&v| (e, v))).collect();
    Ok(pool.install(|| jobs.par_iter().map(|(e, v)| evaluate_self_consistency(backend, e, *v, options)).collect()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessRatio {
    pub faithful: usize,
    pub defined: usize,
    pub discarded: usize,
    /// `None` when no record is defined.
    pub ratio: Option<f64>,
}

/// Faithful records over records with a defined verdict.
pub fn faithfulness_ratio<'a, I>(records: I) -> FaithfulnessRatio
where
    I: IntoIterator<Item = &'a SelfConsistencyRecord>,
{
    let mut out = FaithfulnessRatio::default();
    for r in records {
        match r.faithful {
            Some(f) => {
                out.defined += 1;
                out.faithful += usize::from(f);
            }
            None => out.discarded += 1,
        }
    }
    out.ratio = (out.defined > 0).then(|| out.faithful as f64 / out.defined as f64);
    out
}

/// Ratios grouped by prompt variation.
pub fn ratios_by_variation(records: &[SelfConsistencyRecord]) -> BTreeMap<Variation, FaithfulnessRatio> {
    let mut groups: BTreeMap<Variation, Vec<&SelfConsistencyRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.variation).or_default().push(r);
    }
    groups.into_iter().map(|(v, rs)| (v, faithfulness_ratio(rs))).collect()
}

/// First-session accuracy per persona: (correct, total).
pub fn classification_accuracy(records: &[SelfConsistencyRecord]) -> BTreeMap<PersonaKey, (usize, usize)> {
    let mut out: BTreeMap<PersonaKey, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = out.entry(r.variation.persona).or_default();
        e.0 += usize::from(r.correct);
        e.1 += 1;
    }
    out
}

/// Append-only JSON-lines store, safe to share between worker threads.
pub struct RecordWriter {
    out: Mutex<std::io::BufWriter<std::fs::File>>,
}

impl RecordWriter {
    pub fn append_to(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordWriter { out: Mutex::new(std::io::BufWriter::new(file)) })
    }

    pub fn write<T: Serialize>(&self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value)?;
        let mut out = self.out.lock().expect("record writer");
        writeln!(out, "{line}")?;
        out.flush()?;
        Ok(())
    }
}

pub fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}
