//! Small text helpers shared by ingestion, prompting, and metrics.

/// Number of whitespace-separated words.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lowercased alphanumeric tokens. Used by the lexical metrics and the
/// local hashed embedder.
pub fn alnum_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Collapses every whitespace run to a single space and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_lowercase_and_split_on_punctuation() {
        assert_eq!(
            alnum_tokens("TS 23.203: QoS-rule!"),
            vec!["ts", "23", "203", "qos", "rule"]
        );
        assert!(alnum_tokens("  ... ").is_empty());
    }

    #[test]
    fn collapse() {
        assert_eq!(collapse_whitespace("  a \t\n b  "), "a b");
        assert_eq!(word_count(" a  b\nc "), 3);
    }
}
