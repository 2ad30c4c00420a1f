//! Token vocabulary shared by lattices, language models and text tools.
//!
//! The file format is one token per line; the line number minus one is the
//! token id. Id 0 is always `<eps>`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, ParseErrorKind, Result};

pub type TokenId = u32;

pub const EPSILON: TokenId = 0;
pub const EPS_TOKEN: &str = "<eps>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only `<eps>`.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(EPS_TOKEN);
        v
    }

    /// `<eps>`, `<s>`, `</s>` and `<unk>` at ids 0..=3.
    pub fn with_specials() -> Self {
        let mut v = Self::new();
        v.insert(BOS_TOKEN);
        v.insert(EOS_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Looks up `token`, falling back to `<unk>` when present.
    pub fn id_or_unk(&self, token: &str) -> Result<TokenId> {
        self.id(token)
            .or_else(|| self.id(UNK_TOKEN))
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn require(&self, token: &str) -> Result<TokenId> {
        self.id(token)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, words: &[&str]) -> Result<Vec<TokenId>> {
        words.iter().map(|w| self.require(w)).collect()
    }

    pub fn encode_line(&self, line: &str) -> Result<Vec<TokenId>> {
        line.split_whitespace().map(|w| self.require(w)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<?>").to_string())
            .collect()
    }

    pub fn decode_line(&self, ids: &[TokenId]) -> String {
        self.decode(ids).join(" ")
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let tok = line.trim();
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(Error::parse(i + 1, format!("bad vocabulary entry {line:?}")));
            }
            if v.index.contains_key(tok) {
                return Err(Error::parse(i + 1, format!("duplicate token {tok}")));
            }
            v.insert(tok);
        }
        match v.tokens.first() {
            None => Err(Error::Parse {
                line: 0,
                kind: ParseErrorKind::Malformed("empty vocabulary".into()),
            }),
            Some(t) if t != EPS_TOKEN => Err(Error::parse(1, "id 0 must be <eps>")),
            _ => Ok(v),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_have_fixed_ids() {
        let v = Vocabulary::with_specials();
        assert_eq!(v.id(EPS_TOKEN), Some(0));
        assert_eq!(v.id(BOS_TOKEN), Some(1));
        assert_eq!(v.id(EOS_TOKEN), Some(2));
        assert_eq!(v.id(UNK_TOKEN), Some(3));
    }

    #[test]
    fn file_round_trip() {
        let mut v = Vocabulary::with_specials();
        v.insert("hello");
        v.insert("world");
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        let back = Vocabulary::read(&buf[..]).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn rejects_missing_eps() {
        assert!(Vocabulary::read(&b"hello\n"[..]).is_err());
        assert!(Vocabulary::read(&b""[..]).is_err());
    }

    #[test]
    fn unk_fallback() {
        let v = Vocabulary::with_specials();
        assert_eq!(v.id_or_unk("zzz").unwrap(), 3);
        let bare = Vocabulary::new();
        assert!(matches!(bare.id_or_unk("zzz"), Err(Error::UnknownToken(_))));
    }
}
