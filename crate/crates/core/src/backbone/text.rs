//! Word-level vocabulary and caption + physical-description conditioning.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";
pub const UNK_ID: usize = 0;
pub const SEP_ID: usize = 1;

/// Lowercased alphanumeric words.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Special tokens first, then every distinct word of the corpus in sorted order.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = BTreeSet::new();
        for text in corpus {
            set.extend(words(text));
        }
        let mut tokens = vec![UNK.to_string(), SEP.to_string()];
        tokens.extend(set);
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        words(text).map(|w| self.id(&w)).collect()
    }
}

/// Recorded when the combined sequence had to be cut to the maximum length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncationWarning {
    pub original_len: usize,
    pub kept: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextCondition {
    pub ids: Vec<usize>,
    pub truncated: Option<TruncationWarning>,
}

/// Caption tokens, a separator, then physical-description tokens, cut to `max_len`.
pub fn concat_conditioning(vocab: &Vocab, caption: &str, description: &str, max_len: usize) -> TextCondition {
    let mut ids = vocab.encode(caption);
    ids.push(SEP_ID);
    ids.extend(vocab.encode(description));
    let truncated = (ids.len() > max_len).then_some(TruncationWarning {
        original_len: ids.len(),
        kept: max_len,
    });
    ids.truncate(max_len);
    TextCondition { ids, truncated }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["A ball bounces.", "gravity pulls the ball down"])
    }

    #[test]
    fn vocabulary_is_sorted_after_specials() {
        let v = vocab();
        assert_eq!(v.token(0), Some(UNK));
        assert_eq!(v.token(1), Some(SEP));
        assert_eq!(v.token(2), Some("a"));
        assert_eq!(v.id("ball"), 3);
        assert_eq!(v.id("zebra"), UNK_ID);
    }

    #[test]
    fn empty_description_gives_caption_and_separator() {
        let v = vocab();
        let c = concat_conditioning(&v, "a ball bounces", "", 64);
        assert_eq!(c.ids, vec![v.id("a"), v.id("ball"), v.id("bounces"), SEP_ID]);
        assert!(c.truncated.is_none());
    }

    #[test]
    fn caption_precedes_description() {
        let v = vocab();
        let c = concat_conditioning(&v, "ball", "gravity", 64);
        assert_eq!(c.ids, vec![v.id("ball"), SEP_ID, v.id("gravity")]);
        assert_eq!(c, concat_conditioning(&v, "ball", "gravity", 64));
    }

    #[test]
    fn overflow_truncates_with_warning() {
        let v = vocab();
        let c = concat_conditioning(&v, "a ball bounces", "gravity pulls the ball down", 5);
        assert_eq!(c.ids.len(), 5);
        assert_eq!(
            c.truncated,
            Some(TruncationWarning {
                original_len: 9,
                kept: 5
            })
        );
    }

    #[test]
    fn serde_as_token_list() {
        let v = vocab();
        let j = serde_json::to_string(&v).unwrap();
        assert!(j.starts_with("[\"<unk>\",\"<sep>\""));
        assert_eq!(serde_json::from_str::<Vocab>(&j).unwrap(), v);
    }
}
