use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
/// Non-reserved token ids start here; in the vocab file, the token on
/// (0-based) line `n` has id `n + FIRST_TOKEN_ID`.
pub const FIRST_TOKEN_ID: u32 = 2;

/// Token ↔ id map with reserved pad and unk ids. Tokens are stored
/// lowercased; rebuilds from the same corpus produce the same ordering.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    by_token: BTreeMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a token (already lowercased) if absent; first-seen order fixes ids.
    pub fn add(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.by_token.get(token) {
            return id;
        }
        let id = FIRST_TOKEN_ID + self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.by_token.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> u32 {
        self.by_token.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.by_token.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        if id < FIRST_TOKEN_ID {
            return None;
        }
        self.tokens.get((id - FIRST_TOKEN_ID) as usize).map(|s| s.as_str())
    }

    /// Total id space including the two reserved ids.
    pub fn len_with_reserved(&self) -> usize {
        self.tokens.len() + FIRST_TOKEN_ID as usize
    }

    /// One token per line; 0-based line number = id - 2.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut vocab = Vocab::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                return Err(Error::Corpus {
                    line: i + 1,
                    detail: "empty vocab line".into(),
                });
            }
            vocab.add(line);
        }
        Ok(vocab)
    }
}

/// Byte span of one token in the original string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CharClass {
    Space,
    Alnum,
    Punct,
}

fn classify(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_alphanumeric() {
        CharClass::Alnum
    } else {
        CharClass::Punct
    }
}

/// Splits on whitespace and punctuation boundaries; every punctuation mark is
/// its own token. Offsets are byte ranges into the original string.
pub fn tokenize_surface(text: &str) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match classify(c) {
            CharClass::Space => {
                if let Some(s) = run_start.take() {
                    spans.push(TokenSpan { start: s, end: i });
                }
            }
            CharClass::Punct => {
                if let Some(s) = run_start.take() {
                    spans.push(TokenSpan { start: s, end: i });
                }
                spans.push(TokenSpan {
                    start: i,
                    end: i + c.len_utf8(),
                });
            }
            CharClass::Alnum => {
                if run_start.is_none() {
                    run_start = Some(i);
                }
            }
        }
    }
    if let Some(s) = run_start {
        spans.push(TokenSpan {
            start: s,
            end: text.len(),
        });
    }
    spans
}

/// Lowercased surface form of a token span.
pub fn token_text(text: &str, span: TokenSpan) -> String {
    text[span.start..span.end].to_lowercase()
}

/// Tokenizes into vocab ids plus byte offsets; unknown tokens map to `UNK_ID`.
pub fn tokenize(text: &str, vocab: &Vocab) -> (Vec<u32>, Vec<TokenSpan>) {
    let spans = tokenize_surface(text);
    let ids = spans
        .iter()
        .map(|&s| vocab.id(&token_text(text, s)))
        .collect();
    (ids, spans)
}
