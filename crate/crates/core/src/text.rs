//! Small word-level helpers shared by the saliency, agent and mock modules.

/// Words a content-word check ignores.
pub(crate) const STOPWORDS: &[&str] = &["a", "an", "the", "of", "and", "or", "with", "in", "on"];

pub(crate) const QUANTITY_WORDS: &[&str] = &[
    "a", "an", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Words that never count as salient when they follow a quantity token
/// ("A photo of ...").
pub(crate) const STOP_NOUNS: &[&str] = &["photo", "picture", "image", "photograph"];

pub(crate) fn is_quantity(word: &str) -> bool {
    QUANTITY_WORDS.contains(&word) || (!word.is_empty() && word.chars().all(|c| c.is_ascii_digit()))
}

/// Lowercase, whitespace-split, with leading/trailing non-alphanumerics
/// trimmed. Words that trim to nothing are dropped.
pub(crate) fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

pub(crate) fn content_words(text: &str) -> Vec<String> {
    words(text)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Crude singular form for matching "dogs" against "dog".
pub(crate) fn stem(word: &str) -> &str {
    if word.len() > 3
        && word.ends_with("es")
        && (word.ends_with("ches") || word.ends_with("shes") || word.ends_with("xes"))
    {
        &word[..word.len() - 2]
    } else if word.len() > 2 && word.ends_with('s') && !word.ends_with("ss") {
        &word[..word.len() - 1]
    } else {
        word
    }
}
