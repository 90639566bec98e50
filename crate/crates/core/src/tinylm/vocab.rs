//! Byte-level vocabulary with a fixed block of reserved special tokens.
//!
//! Ids `0..256` are raw bytes. Ids from 256 upward are specials in the order
//! of [`STANDARD_SPECIALS`]; a model with a smaller `vocab_size` sees a prefix
//! of that list, a larger one gets anonymous `<|tokN|>` placeholders.

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BYTE_TOKENS: usize = 256;
pub const BOS: TokenId = 256;
pub const EOS: TokenId = 257;
pub const MODE_CERTAIN: TokenId = 258;
pub const MODE_UNCERTAIN: TokenId = 259;

/// Smallest legal vocabulary: bytes plus BOS and EOS.
pub const MIN_VOCAB: usize = 258;

/// Role a special token plays in the planted construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialKind {
    Bos,
    Eos,
    ModeCertain,
    ModeUncertain,
    /// Hedging prefix phrase, followed by an answer.
    Hedge,
    /// Terminal refusal phrase.
    Abstain,
    /// Terminal answer phrase naming an entity.
    Entity,
}

#[derive(Debug, Clone, Copy)]
pub struct Special {
    pub markup: &'static str,
    pub text: &'static str,
    pub kind: SpecialKind,
}

const fn sp(markup: &'static str, text: &'static str, kind: SpecialKind) -> Special {
    Special { markup, text, kind }
}

pub const STANDARD_SPECIALS: &[Special] = &[
    sp("<|bos|>", "", SpecialKind::Bos),
    sp("<|eos|>", "", SpecialKind::Eos),
    sp("<|certain|>", "", SpecialKind::ModeCertain),
    sp("<|uncertain|>", "", SpecialKind::ModeUncertain),
    sp(
        "<|hedge:not-certain|>",
        "I'm not certain, but maybe ",
        SpecialKind::Hedge,
    ),
    sp("<|hedge:perhaps|>", "Perhaps ", SpecialKind::Hedge),
    sp("<|hedge:i-think|>", "I think ", SpecialKind::Hedge),
    sp("<|hedge:possibly|>", "Possibly ", SpecialKind::Hedge),
    sp("<|hedge:might|>", "It might be that ", SpecialKind::Hedge),
    sp("<|abstain|>", "I don't know.", SpecialKind::Abstain),
    sp("<|ent:paris|>", "it is Paris.", SpecialKind::Entity),
    sp("<|ent:london|>", "it is London.", SpecialKind::Entity),
    sp("<|ent:berlin|>", "it is Berlin.", SpecialKind::Entity),
    sp("<|ent:madrid|>", "it is Madrid.", SpecialKind::Entity),
    sp("<|ent:vienna|>", "it is Vienna.", SpecialKind::Entity),
    sp("<|ent:prague|>", "it is Prague.", SpecialKind::Entity),
    sp("<|ent:lisbon|>", "it is Lisbon.", SpecialKind::Entity),
    sp("<|ent:dublin|>", "it is Dublin.", SpecialKind::Entity),
    sp("<|ent:warsaw|>", "it is Warsaw.", SpecialKind::Entity),
    sp("<|ent:athens|>", "it is Athens.", SpecialKind::Entity),
    sp("<|ent:cairo|>", "it is Cairo.", SpecialKind::Entity),
    sp("<|ent:tokyo|>", "it is Tokyo.", SpecialKind::Entity),
    sp("<|ent:nairobi|>", "it is Nairobi.", SpecialKind::Entity),
    sp("<|ent:santiago|>", "it is Santiago.", SpecialKind::Entity),
    sp("<|ent:helsinki|>", "it is Helsinki.", SpecialKind::Entity),
    sp("<|ent:bangkok|>", "it is Bangkok.", SpecialKind::Entity),
];

/// Vocabulary size of the full standard layout.
pub const STANDARD_VOCAB: usize = BYTE_TOKENS + STANDARD_SPECIALS.len();

/// Tokenizer view over a vocabulary of a given size.
#[derive(Debug, Clone, Copy)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < MIN_VOCAB {
            return Err(Error::Config(format!(
                "vocab_size {size} is below the minimum of {MIN_VOCAB}"
            )));
        }
        Ok(Self { size })
    }

    pub fn standard() -> Self {
        Self {
            size: STANDARD_VOCAB,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.size
    }

    pub fn special(&self, id: TokenId) -> Option<&'static Special> {
        let idx = (id as usize).checked_sub(BYTE_TOKENS)?;
        if (id as usize) >= self.size {
            return None;
        }
        STANDARD_SPECIALS.get(idx)
    }

    pub fn kind(&self, id: TokenId) -> Option<SpecialKind> {
        self.special(id).map(|s| s.kind)
    }

    pub fn ids_of(&self, kind: SpecialKind) -> Vec<TokenId> {
        (BYTE_TOKENS..self.size)
            .map(|i| i as TokenId)
            .filter(|&id| self.kind(id) == Some(kind))
            .collect()
    }

    /// Hedge phrases plus the abstention token: the set whose logits the
    /// planted direction raises.
    pub fn hedge_ids(&self) -> Vec<TokenId> {
        let mut ids = self.ids_of(SpecialKind::Hedge);
        ids.extend(self.ids_of(SpecialKind::Abstain));
        ids
    }

    pub fn entity_ids(&self) -> Vec<TokenId> {
        self.ids_of(SpecialKind::Entity)
    }

    /// Entity name as it appears in answer text, e.g. `"Paris"`.
    pub fn entity_name(&self, id: TokenId) -> Option<&'static str> {
        let s = self.special(id)?;
        if s.kind != SpecialKind::Entity {
            return None;
        }
        Some(s.text.trim_start_matches("it is ").trim_end_matches('.'))
    }

    fn lookup_markup(&self, markup: &str) -> Option<TokenId> {
        (BYTE_TOKENS..self.size)
            .map(|i| i as TokenId)
            .find(|&id| self.special(id).is_some_and(|s| s.markup == markup))
    }

    /// Encodes text as bytes, recognising `<|...|>` markup for specials known
    /// to this vocabulary. Unknown markup is kept as literal bytes.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(text.len());
        let mut rest = text;
        while !rest.is_empty() {
            if rest.starts_with("<|") {
                if let Some(end) = rest.find("|>") {
                    let markup = &rest[..end + 2];
                    if let Some(id) = self.lookup_markup(markup) {
                        out.push(id);
                        rest = &rest[end + 2..];
                        continue;
                    }
                }
            }
            let ch = rest.chars().next().expect("nonempty");
            let n = ch.len_utf8();
            out.extend(rest.as_bytes()[..n].iter().map(|&b| b as TokenId));
            rest = &rest[n..];
        }
        out
    }

    /// `BOS` followed by the encoded question.
    pub fn encode_prompt(&self, question: &str) -> Vec<TokenId> {
        let mut ids = vec![BOS];
        ids.extend(self.encode(question));
        ids
    }

    /// Renders generated tokens as answer text: phrase specials expand to their
    /// text, control tokens vanish, output stops at EOS, first letter is
    /// upper-cased.
    pub fn decode_answer(&self, ids: &[TokenId]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if (id as usize) < BYTE_TOKENS {
                bytes.push(id as u8);
            } else if let Some(s) = self.special(id) {
                bytes.extend_from_slice(s.text.as_bytes());
            }
        }
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let mut chars = text.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => text,
        }
    }

    /// Renders tokens with markup for every special (lossless for known ids).
    pub fn decode_markup(&self, ids: &[TokenId]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            if (id as usize) < BYTE_TOKENS {
                bytes.push(id as u8);
            } else if let Some(s) = self.special(id) {
                bytes.extend_from_slice(s.markup.as_bytes());
            } else {
                bytes.extend_from_slice(format!("<|tok{id}|>").as_bytes());
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markup_round_trips() {
        let v = Vocab::standard();
        let text = "<|uncertain|>kqkq?";
        let ids = v.encode(text);
        assert_eq!(ids[0], MODE_UNCERTAIN);
        assert_eq!(ids.len(), 6);
        assert_eq!(v.decode_markup(&ids), text);
    }

    #[test]
    fn unknown_markup_stays_literal() {
        let v = Vocab::new(MIN_VOCAB).unwrap();
        // modes are outside a 258-token vocabulary
        let ids = v.encode("<|certain|>");
        assert_eq!(ids.len(), "<|certain|>".len());
        assert!(ids.iter().all(|&t| t < 256));
    }

    #[test]
    fn decode_answer_expands_phrases() {
        let v = Vocab::standard();
        let hedge = v.ids_of(SpecialKind::Hedge)[1];
        let ent = v.entity_ids()[0];
        assert_eq!(
            v.decode_answer(&[hedge, ent, EOS, ent]),
            "Perhaps it is Paris."
        );
        assert_eq!(v.decode_answer(&[ent]), "It is Paris.");
        assert_eq!(v.entity_name(ent), Some("Paris"));
    }

    #[test]
    fn vocab_below_minimum_rejected() {
        assert!(matches!(Vocab::new(257), Err(Error::Config(_))));
    }

    #[test]
    fn entity_names_are_not_substrings_of_each_other() {
        let v = Vocab::standard();
        let names: Vec<_> = v
            .entity_ids()
            .iter()
            .map(|&id| v.entity_name(id).unwrap().to_lowercase())
            .collect();
        for (i, a) in names.iter().enumerate() {
            for (j, b) in names.iter().enumerate() {
                if i != j {
                    assert!(!a.contains(b.as_str()), "{a} contains {b}");
                }
            }
        }
    }
}
