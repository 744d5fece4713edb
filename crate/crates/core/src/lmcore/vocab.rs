//! Word-level text vocabulary plus the appended image-token range.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::LmError;
use crate::vqtok::ImageTokens;

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const SPECIALS: [&str; 3] = ["<pad>", "<eos>", "<unk>"];
pub const NEWLINE: &str = "\n";
const PUNCT: [char; 10] = ['.', ',', ':', '?', '!', ';', '<', '>', '(', ')'];

/// Splits text into word, punctuation and newline tokens.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let boundary = c == ' ' || c == '\t' || c == '\r' || c == '\n' || PUNCT.contains(&c);
        if boundary {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
            if c == '\n' || PUNCT.contains(&c) {
                out.push(&text[i..i + c.len_utf8()]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

/// Image-token spelling used inside serialized spans.
pub fn image_word(index: usize) -> String {
    format!("VQ{index:03}")
}

fn parse_image_word(w: &str) -> Option<usize> {
    let digits = w.strip_prefix("VQ")?;
    if digits.len() >= 3 && digits.bytes().all(|b| b.is_ascii_digit()) {
        digits.parse().ok()
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    /// Text token strings; index = id.
    pub text: Vec<String>,
    pub k_img: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Specials, then every distinct word of `texts` in lexicographic order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut words = BTreeSet::new();
        for t in texts {
            for w in split_words(t) {
                if parse_image_word(w).is_none() && !SPECIALS.contains(&w) {
                    words.insert(w.to_string());
                }
            }
        }
        let text: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(words).collect();
        Vocab::from_tokens(text, 0)
    }

    pub fn from_tokens(text: Vec<String>, k_img: usize) -> Vocab {
        let index = text.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { text, k_img, index }
    }

    pub fn k_text(&self) -> usize {
        self.text.len()
    }

    pub fn total(&self) -> usize {
        self.k_text() + self.k_img
    }

    pub fn with_images(&self, k_img: usize) -> Vocab {
        Vocab::from_tokens(self.text.clone(), k_img)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        if let Some(i) = parse_image_word(word) {
            return (i < self.k_img).then(|| self.k_text() + i);
        }
        self.index.get(word).copied()
    }

    /// Ids for `text`; unknown words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text).into_iter().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    pub fn token(&self, id: usize) -> String {
        if id < self.k_text() {
            self.text[id].clone()
        } else if id < self.total() {
            image_word(id - self.k_text())
        } else {
            SPECIALS[UNK].to_string()
        }
    }

    pub fn is_image(&self, id: usize) -> bool {
        id >= self.k_text() && id < self.total()
    }

    /// Text for ids, inverse of [`Vocab::encode`] on grammar text.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        let mut prev: Option<String> = None;
        for &id in ids {
            if id == PAD || id == EOS {
                continue;
            }
            let tok = self.token(id);
            let glue = match prev.as_deref() {
                None | Some("\n") | Some("<") | Some("(") => true,
                _ => matches!(tok.as_str(), "." | "," | ":" | "?" | "!" | ";" | ">" | ")" | "\n"),
            };
            if !glue {
                out.push(' ');
            }
            out.push_str(&tok);
            prev = Some(tok);
        }
        out
    }

    pub fn ids_from_image_tokens(&self, tokens: &ImageTokens) -> Result<Vec<usize>, LmError> {
        tokens
            .0
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                if i < self.k_img {
                    Ok(i + self.k_text())
                } else {
                    Err(LmError::ImageIndex { position: pos, index: i, k_img: self.k_img })
                }
            })
            .collect()
    }

    pub fn image_tokens_from_ids(&self, ids: &[usize]) -> Result<ImageTokens, LmError> {
        ids.iter()
            .enumerate()
            .map(|(pos, &id)| {
                if self.is_image(id) {
                    Ok(id - self.k_text())
                } else {
                    Err(LmError::TextInImageSpan { position: pos, id })
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(ImageTokens)
    }

    /// `<VQ005 VQ017 ...>` serialization of an image.
    pub fn image_span(tokens: &ImageTokens) -> String {
        let words: Vec<String> = tokens.0.iter().map(|&i| image_word(i)).collect();
        format!("<{}>", words.join(" "))
    }
}

impl Vocab {
    /// Restores the lookup table after deserialization.
    pub fn reindex(mut self) -> Vocab {
        self.index = self.text.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitting() {
        assert_eq!(split_words("### Response:\nMild left opacity."), vec!["###", "Response", ":", "\n", "Mild", "left", "opacity", "."]);
        assert_eq!(split_words("<VQ001 VQ002>"), vec!["<", "VQ001", "VQ002", ">"]);
    }

    #[test]
    fn build_is_sorted_and_deterministic() {
        let a = Vocab::build(["b a. c", "a\nd"]);
        assert_eq!(a, Vocab::build(["b a. c", "a\nd"]));
        assert_eq!(&a.text[..3], &SPECIALS.map(String::from));
        let words = &a.text[3..];
        assert!(words.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn offset_rule() {
        let v = Vocab::from_tokens((0..50821).map(|i| format!("w{i}")).collect(), 1024);
        assert_eq!(v.total(), 51845);
        assert_eq!(v.ids_from_image_tokens(&ImageTokens(vec![5])).unwrap(), vec![50826]);
    }

    #[test]
    fn decode_inverts_encode() {
        let text = "Findings: There is a mild left pleural effusion. Impression: <VQ003 VQ004>\n### End";
        let v = Vocab::build([text]).with_images(8);
        assert_eq!(v.decode(&v.encode(text)), text);
    }
}
