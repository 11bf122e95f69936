//! Heuristics for reading labels and explanations out of free-form answers.

use super::prompt::{ExplanationKind, Task};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "outcome", content = "label")]
pub enum ParsedLabel {
    Label(String),
    Unknown,
    Unparseable,
}

impl ParsedLabel {
    pub fn is(&self, label: &str) -> bool {
        matches!(self, ParsedLabel::Label(l) if l.eq_ignore_ascii_case(label))
    }

    pub fn as_str(&self) -> &str {
        match self {
            ParsedLabel::Label(l) => l,
            ParsedLabel::Unknown => "unknown",
            ParsedLabel::Unparseable => "unparseable",
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte ranges of case-insensitive whole-word occurrences of `needle`.
fn whole_word_matches(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    if needle.is_empty() {
        return Vec::new();
    }
    let re = Regex::new(&format!("(?i){}", regex::escape(needle))).expect("escaped pattern");
    re.find_iter(haystack)
        .filter(|m| {
            let before = haystack[..m.start()].chars().next_back();
            let after = haystack[m.end()..].chars().next();
            let first = needle.chars().next().is_some_and(is_word_char);
            let last = needle.chars().next_back().is_some_and(is_word_char);
            !(first && before.is_some_and(is_word_char)) && !(last && after.is_some_and(is_word_char))
        })
        .map(|m| (m.start(), m.end()))
        .collect()
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:^|[\s(])([a-z0-9])\)").expect("static pattern"))
}

fn marker_index(task: Task, marker: char) -> Option<usize> {
    let m = marker.to_ascii_lowercase();
    match task {
        Task::Sentiment => None,
        Task::Multichoice => m.is_ascii_lowercase().then(|| (m as u8 - b'a') as usize),
        Task::Nli => m.to_digit(10).and_then(|d| (d as usize).checked_sub(1)),
    }
}

/// Reads a label from a classification answer.
///
/// Sentences are scanned in order; the first one naming a label or
/// "unknown" decides. Option markers such as `b)` are used only when a
/// sentence names no label. Two different labels in the deciding sentence
/// make the answer unparseable.
pub fn parse_label(response: &str, task: Task, labels: &[String]) -> ParsedLabel {
    let mut candidates: Vec<ParsedLabel> = labels.iter().map(|l| ParsedLabel::Label(l.clone())).collect();
    candidates.push(ParsedLabel::Unknown);
    let names: Vec<&str> = labels.iter().map(String::as_str).chain(["unknown"]).collect();

    for sentence in response.split(['.', '!', '?', '\n']) {
        let mut found: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| !whole_word_matches(sentence, n).is_empty())
            .map(|(i, _)| i)
            .collect();
        if found.is_empty() {
            found = marker_regex()
                .captures_iter(sentence)
                .filter_map(|c| c[1].chars().next())
                .filter_map(|m| marker_index(task, m))
                .filter(|&i| i < candidates.len())
                .collect();
            found.sort_unstable();
            found.dedup();
        }
        match found.as_slice() {
            [] => continue,
            [i] => return candidates[*i].clone(),
            _ => return ParsedLabel::Unparseable,
        }
    }
    ParsedLabel::Unparseable
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "form", content = "value")]
pub enum ExtractedExplanation {
    Paragraph(String),
    Words(Vec<String>),
}

fn extract_paragraph(response: &str) -> Option<String> {
    const MARKER: &str = "Paragraph:";
    let text = if let Some(pos) = response.rfind(MARKER) {
        &response[pos + MARKER.len()..]
    } else {
        match response.split_once("\n\n") {
            // drop a lead-in such as "Sure! Here's the edited paragraph:"
            Some((lead, rest)) if lead.trim_end().ends_with(':') => rest,
            _ => response,
        }
    };
    let text = text.trim();
    (!text.is_empty()).then(|| text.to_string())
}

fn bullet_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*•]|\d+[.)])\s+(.+?)\s*$").expect("static pattern"))
}

fn clean_word(w: &str) -> Option<String> {
    let quote_or_space = |c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '“' | '”' | '‘' | '’');
    let w = w.trim_matches(quote_or_space).trim_end_matches(['.', ',', ';']).trim_matches(quote_or_space);
    (!w.is_empty()).then(|| w.to_lowercase())
}

fn extract_words(response: &str) -> Option<Vec<String>> {
    let bullets: Vec<String> =
        response.lines().filter_map(|l| bullet_regex().captures(l)).filter_map(|c| clean_word(&c[1])).collect();
    if !bullets.is_empty() {
        return Some(bullets);
    }
    let list = response.rsplit_once(':').map_or(response, |(_, rest)| rest);
    let words: Vec<String> = list.split([',', '\n']).filter_map(clean_word).collect();
    (!words.is_empty()).then_some(words)
}

/// Pulls the explanation out of a response; `None` when nothing usable is
/// present.
pub fn extract_explanation(response: &str, kind: ExplanationKind) -> Option<ExtractedExplanation> {
    match kind {
        ExplanationKind::Counterfactual | ExplanationKind::Redaction => {
            extract_paragraph(response).map(ExtractedExplanation::Paragraph)
        }
        ExplanationKind::FeatureAttribution => extract_words(response).map(ExtractedExplanation::Words),
        ExplanationKind::Classification => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redacted {
    pub text: String,
    /// Listed words that never occur in the paragraph.
    pub unmatched: Vec<String>,
}

/// Replaces every case-insensitive whole-word occurrence of each listed
/// word with `token`. Existing occurrences of `token` are left alone, so
/// the operation is idempotent.
pub fn apply_redaction(paragraph: &str, words: &[String], token: &str) -> Redacted {
    let mut text = paragraph.to_string();
    let mut order: Vec<&String> = words.iter().collect();
    // longer phrases first so "storage capacity" wins over "storage"
    order.sort_by_key(|w| std::cmp::Reverse(w.chars().count()));
    let mut unmatched = Vec::new();
    for word in order {
        let protected: Vec<(usize, usize)> = if token.is_empty() {
            Vec::new()
        } else {
            text.match_indices(token).map(|(i, t)| (i, i + t.len())).collect()
        };
        let hits: Vec<(usize, usize)> = whole_word_matches(&text, word.trim())
            .into_iter()
            .filter(|&(s, e)| protected.iter().all(|&(ps, pe)| e <= ps || s >= pe))
            .collect();
        if hits.is_empty() {
            if !is_blank_or_token(word, token) {
                unmatched.push(word.clone());
            }
            continue;
        }
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for (s, e) in hits {
            out.push_str(&text[last..s]);
            out.push_str(token);
            last = e;
        }
        out.push_str(&text[last..]);
        text = out;
    }
    unmatched.sort();
    Redacted { text, unmatched }
}

fn is_blank_or_token(word: &str, token: &str) -> bool {
    word.trim().is_empty() || (!token.is_empty() && word.trim() == token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    fn sentiment_labels() -> Vec<String> {
        words(&["positive", "negative", "neutral"])
    }

    #[test]
    fn parses_examples() {
        assert_eq!(
            parse_label("Negative", Task::Sentiment, &sentiment_labels()),
            ParsedLabel::Label("negative".into())
        );
        let choices = words(&["hallway", "office"]);
        assert_eq!(parse_label("b) b) Office", Task::Multichoice, &choices), ParsedLabel::Label("office".into()));
        assert_eq!(
            parse_label("As an AI model I cannot help with that.", Task::Sentiment, &sentiment_labels()),
            ParsedLabel::Unparseable
        );
        assert_eq!(
            parse_label("3) Unknown. The statement ...", Task::Nli, &words(&["yes", "no"])),
            ParsedLabel::Unknown
        );
    }

    #[test]
    fn markers_and_conflicts() {
        let choices = words(&["hallway", "office"]);
        assert_eq!(parse_label("a)", Task::Multichoice, &choices), ParsedLabel::Label("hallway".into()));
        assert_eq!(parse_label("c)", Task::Multichoice, &choices), ParsedLabel::Unknown);
        assert_eq!(parse_label("2)", Task::Nli, &words(&["yes", "no"])), ParsedLabel::Label("no".into()));
        assert_eq!(parse_label("Positive or negative", Task::Sentiment, &sentiment_labels()), ParsedLabel::Unparseable);
        // label words must be whole words
        assert_eq!(parse_label("nonpositive", Task::Sentiment, &sentiment_labels()), ParsedLabel::Unparseable);
    }

    #[test]
    fn extracts_paragraphs() {
        let r = "Sure! Here it is:\n\nParagraph: The movie was excellent and fun.";
        assert_eq!(
            extract_explanation(r, ExplanationKind::Counterfactual),
            Some(ExtractedExplanation::Paragraph("The movie was excellent and fun.".into()))
        );
        let r = "Sure! Here's the redacted paragraph:\n\nIt is [REDACTED].";
        assert_eq!(
            extract_explanation(r, ExplanationKind::Redaction),
            Some(ExtractedExplanation::Paragraph("It is [REDACTED].".into()))
        );
        assert_eq!(extract_explanation("   ", ExplanationKind::Redaction), None);
    }

    #[test]
    fn extracts_word_lists() {
        assert_eq!(
            extract_explanation("Important words: \"great,\" \"amazing,\"", ExplanationKind::FeatureAttribution),
            Some(ExtractedExplanation::Words(words(&["great", "amazing"])))
        );
        assert_eq!(
            extract_explanation("Sure! Here they are:\n\n* Awful\n* Worst", ExplanationKind::FeatureAttribution),
            Some(ExtractedExplanation::Words(words(&["awful", "worst"])))
        );
        assert_eq!(
            extract_explanation("1. Back\n2. Office", ExplanationKind::FeatureAttribution),
            Some(ExtractedExplanation::Words(words(&["back", "office"])))
        );
    }

    #[test]
    fn redaction_examples() {
        let r = apply_redaction("it is awful", &words(&["awful"]), "[REDACTED]");
        assert_eq!(r.text, "it is [REDACTED]");
        let r = apply_redaction("Awful, truly awful.", &words(&["awful"]), "[REDACTED]");
        assert_eq!(r.text, "[REDACTED], truly [REDACTED].");
        let r = apply_redaction("the worst film", &words(&["worst", "boring"]), "[REMOVED]");
        assert_eq!(r.text, "the [REMOVED] film");
        assert_eq!(r.unmatched, words(&["boring"]));
        // no partial-word replacement
        let r = apply_redaction("awfully good", &words(&["awful"]), "[REDACTED]");
        assert_eq!(r.text, "awfully good");
    }

    #[test]
    fn redaction_leaves_token_alone() {
        let r = apply_redaction("it is [REDACTED] and redacted", &words(&["redacted"]), "[REDACTED]");
        assert_eq!(r.text, "it is [REDACTED] and [REDACTED]");
    }

    proptest! {
        #[test]
        fn redaction_idempotent(
            text in proptest::collection::vec("[a-zA-Z]{1,6}", 1..20),
            picks in proptest::collection::vec(0usize..20, 0..5),
            removed in any::<bool>(),
        ) {
            let paragraph = text.join(" ");
            let listed: Vec<String> = picks.iter().filter_map(|&i| text.get(i).cloned()).collect();
            let token = if removed { "[REMOVED]" } else { "[REDACTED]" };
            let once = apply_redaction(&paragraph, &listed, token);
            let twice = apply_redaction(&once.text, &listed, token);
            prop_assert_eq!(&once.text, &twice.text);
            for w in &listed {
                let covered = whole_word_matches(&once.text, w).iter().all(|&(s, e)| {
                    once.text.match_indices(token).any(|(i, t)| s >= i && e <= i + t.len())
                });
                prop_assert!(covered);
            }
        }
    }
}
