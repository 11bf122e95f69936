//! Loading of the recorded chat transcripts used as golden prompts.

#![allow(dead_code)]

use faithkit::selfcheck::{Axis, PersonaKey, SelfCheckExample, Task, Variation, VariationKind};
use serde::Deserialize;

#[derive(Deserialize)]
pub struct Turn {
    pub role: String,
    pub text: String,
}

#[derive(Deserialize)]
pub struct Transcript {
    pub task: Task,
    pub kind: VariationKind,
    pub persona: PersonaKey,
    pub target: Option<Axis>,
    pub redaction: Option<Axis>,
    pub gold: String,
    pub verdict: String,
    pub turns: Vec<Turn>,
}

impl Transcript {
    pub fn variation(&self) -> Variation {
        Variation { kind: self.kind, persona: self.persona, axis: self.target.or(self.redaction).expect("axis") }
    }

    pub fn user_turns(&self) -> Vec<&str> {
        self.turns.iter().filter(|t| t.role == "user").map(|t| t.text.as_str()).collect()
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        self.turns.chunks(2).map(|c| (c[0].text.clone(), c[1].text.clone())).collect()
    }

    pub fn faithful(&self) -> bool {
        match self.verdict.as_str() {
            "faithful" => true,
            "not faithful" => false,
            other => panic!("unknown verdict {other}"),
        }
    }

    /// The observation behind the transcript; slot values are the task
    /// inputs, the paragraph is read back from the first prompt.
    pub fn example(&self) -> SelfCheckExample {
        let first = self.user_turns()[0];
        let paragraph = first.split_once("\n\nParagraph: ").expect("paragraph").1.to_string();
        let (question, choices, hypothesis) = match self.task {
            Task::Sentiment => (None, Vec::new(), None),
            Task::Multichoice => {
                (Some("Where is Mary?".to_string()), vec!["hallway".to_string(), "office".to_string()], None)
            }
            Task::Nli => {
                (None, Vec::new(), Some("Microsoft's Hotmail has raised its storage capacity to 250MB.".to_string()))
            }
        };
        SelfCheckExample {
            id: format!("{:?}", self.variation()),
            task: self.task,
            gold: self.gold.clone(),
            paragraph,
            question,
            choices,
            hypothesis,
        }
    }
}

pub fn transcripts() -> Vec<Transcript> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/appendix_transcripts.json");
    serde_json::from_str(&std::fs::read_to_string(path).expect("fixture")).expect("fixture json")
}
