//! Tokenization shared by the mock prompt backend and the hash embedder.
//!
//! Both sides must agree on what a "token" is, otherwise extraction and
//! embedding drift apart and the routing indicator stops being checkable.

use crate::model::normalize_text;

/// Fixed English stopword list. Changing it changes mock-backend semantics,
/// which golden verification will flag.
pub const STOPWORDS: [&str; 50] = [
    "a", "all", "an", "and", "are", "as", "at", "be", "but", "by", "can",
    "community", "do", "enjoys", "for", "from", "had", "has", "have", "i",
    "if", "in", "interests", "into", "is", "it", "its", "likes", "loves",
    "my", "no", "not", "of", "on", "or", "so", "that", "the", "their",
    "them", "they", "this", "to", "was", "we", "were", "will", "with",
    "you", "your",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Normalized tokens in order of appearance, stopwords included.
pub fn tokens(text: &str) -> Vec<String> {
    normalize_text(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Normalized non-stopword tokens in order of appearance, repeats kept.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// Normalized non-stopword tokens, deduplicated by first occurrence.
pub fn distinct_content_tokens(text: &str) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    content_tokens(text)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopword_list_is_sorted_and_sized() {
        let mut sorted = STOPWORDS;
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
        assert_eq!(STOPWORDS.len(), 50);
        for w in ["loves", "community", "interests", "the", "a", "of"] {
            assert!(is_stopword(w), "{w} must be a stopword");
        }
    }

    #[test]
    fn content_tokens_drop_stopwords_and_punctuation() {
        assert_eq!(content_tokens("Loves vinyl jazz. Loves jazz."), ["vinyl", "jazz", "jazz"]);
        assert_eq!(distinct_content_tokens("Loves vinyl jazz. Loves jazz."), ["vinyl", "jazz"]);
        assert!(content_tokens("the a of").is_empty());
    }
}
