//! Rule-based rewriting of questions into grounding queries (English only).

use super::AnswerChoice;

const WH_WORDS: &[&str] = &["what", "when", "why", "how", "where", "who", "which"];
const AUXILIARIES: &[&str] = &["is", "are", "was", "were", "do", "does", "did", "has", "have", "had"];
const QUERY_PREFIX: &str = "The moment when";

fn bare_word(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

fn lowercase_first(token: &str) -> String {
    let mut chars = token.chars();
    match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// The question body with a leading WH word and following auxiliary removed.
fn core_clause(question: &str) -> String {
    let trimmed = question.trim().trim_end_matches('?').trim_end();
    let tokens: Vec<&str> = trimmed.split_whitespace().collect();
    let mut rest = &tokens[..];
    if let Some(first) = rest.first() {
        if WH_WORDS.contains(&bare_word(first).as_str()) {
            rest = &rest[1..];
            if let Some(aux) = rest.first() {
                if AUXILIARIES.contains(&bare_word(aux).as_str()) {
                    rest = &rest[1..];
                }
            }
        }
    }
    match rest.split_first() {
        Some((head, tail)) => {
            let mut out = lowercase_first(head);
            for t in tail {
                out.push(' ');
                out.push_str(t);
            }
            out
        }
        None => String::new(),
    }
}

/// `"The moment when <core clause>"`.
pub fn build_ground_query(question: &str) -> String {
    let clause = core_clause(question);
    if clause.is_empty() {
        QUERY_PREFIX.to_string()
    } else {
        format!("{QUERY_PREFIX} {clause}")
    }
}

/// The grounding query with the normalised provisional answer appended.
pub fn build_answer_augmented_query(question: &str, answer: &AnswerChoice) -> String {
    let base = build_ground_query(question);
    let norm = normalize_answer(&answer.option_text);
    if norm.is_empty() {
        base
    } else {
        format!("{base} {norm}")
    }
}

fn strip_option_prefix(text: &str) -> &str {
    let bytes = text.as_bytes();
    // "(A) ..." / "(1) ..."
    if bytes.len() >= 3 && bytes[0] == b'(' && bytes[1].is_ascii_alphanumeric() && bytes[2] == b')' {
        return &text[3..];
    }
    // "A. ..." / "A) ..." / "A: ..."
    if bytes.len() >= 2
        && bytes[0].is_ascii_alphanumeric()
        && matches!(bytes[1], b'.' | b')' | b':')
        && bytes.get(2).is_none_or(|b| b.is_ascii_whitespace())
    {
        return &text[2..];
    }
    text
}

/// Strips an option-letter prefix, lowercases, collapses whitespace and
/// drops terminal punctuation.
pub fn normalize_answer(text: &str) -> String {
    let stripped = strip_option_prefix(text.trim());
    let collapsed = stripped.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(['.', ',', '!', '?', ';', ':'])
        .trim_end()
        .to_string()
}
