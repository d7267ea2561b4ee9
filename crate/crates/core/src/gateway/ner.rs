//! Rule-based entity extraction used when no NER model is deployed.
//!
//! Entities are maximal runs of capitalized alphabetic tokens, minus a fixed
//! stopword list, plus standalone numbers. Lower fidelity than a trained
//! tagger but deterministic.

const STOPWORDS: &[&str] = &[
    "A", "About", "After", "Also", "Although", "An", "And", "Any", "Are", "As", "At", "Be", "Because",
    "Before", "Both", "But", "By", "Can", "Could", "Did", "Do", "Does", "Each", "Either", "First",
    "For", "From", "He", "Her", "His", "How", "However", "I", "If", "In", "Is", "It", "Its", "Let",
    "Maybe", "My", "No", "Not", "Now", "Of", "Oh", "Ok", "Okay", "On", "One", "Or", "Our", "Perhaps",
    "She", "Since", "So", "Some", "Still", "That", "The", "Their", "Then", "There", "These", "They",
    "This", "Those", "Thus", "To", "Wait", "Was", "We", "Well", "Were", "What", "When", "Where",
    "Which", "While", "Who", "Why", "With", "Yes", "You", "Your",
];

fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word)
}

fn is_capitalized(word: &str) -> bool {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) if c.is_uppercase() => chars.all(|c| c.is_alphabetic() || c == '-' || c == '\''),
        _ => false,
    }
}

fn is_number(word: &str) -> bool {
    word.chars().next().is_some_and(|c| c.is_ascii_digit())
        && word.chars().last().is_some_and(|c| c.is_ascii_digit())
        && word.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.')
}

/// Surface forms of entities in order of first appearance (duplicates kept;
/// set semantics come from [`crate::model::normalize_entities`]).
pub fn rule_based_entities(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    let flush = |run: &mut Vec<&str>, out: &mut Vec<String>| {
        if !run.is_empty() {
            out.push(run.join(" "));
            run.clear();
        }
    };
    for raw in text.split_whitespace() {
        let word = raw.trim_matches(|c: char| !c.is_alphanumeric());
        // Punctuation trailing a token closes the current run.
        let closes = raw
            .chars()
            .last()
            .is_some_and(|c| matches!(c, ',' | '.' | ';' | ':' | '!' | '?' | ')' | '"'));
        if is_capitalized(word) && !is_stopword(word) {
            run.push(word);
        } else {
            flush(&mut run, &mut out);
            if is_number(word) {
                out.push(word.to_string());
            }
        }
        if closes {
            flush(&mut run, &mut out);
        }
    }
    flush(&mut run, &mut out);
    out
}
