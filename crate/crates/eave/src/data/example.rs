use super::corpus::ProductRecord;
use super::vocab::{tokenize, TokenSpan, Vocab, PAD_ID};
use crate::error::{Error, Result};
use crate::tagging::{spans_to_tags, Tag};

/// Paragraphs joined into one context string with this separator; evidence
/// offsets are remapped through the cumulative paragraph base offsets.
pub const PARAGRAPH_SEP: &str = " \n ";

/// One padded, BIO-labeled training/eval example for a (product, attribute)
/// pair.
#[derive(Debug, Clone)]
pub struct TokenizedExample {
    pub product_id: String,
    pub attribute: String,
    pub context_ids: Vec<u32>,
    pub attribute_ids: Vec<u32>,
    pub context_pad_mask: Vec<bool>,
    pub attribute_pad_mask: Vec<bool>,
    pub gold_tags: Vec<Tag>,
    /// Byte range in the joined context per real (non-pad) context token.
    pub token_to_char: Vec<(usize, usize)>,
    /// The joined context string the offsets refer to.
    pub context_text: String,
}

impl TokenizedExample {
    pub fn gold_spans(&self) -> Vec<(usize, usize)> {
        crate::tagging::decode_spans(&self.gold_tags)
    }

    /// Slice of the context text covered by a token span.
    pub fn span_text(&self, token_start: usize, token_end: usize) -> String {
        if token_start >= token_end || token_end > self.token_to_char.len() {
            return String::new();
        }
        let begin = self.token_to_char[token_start].0;
        let end = self.token_to_char[token_end - 1].1;
        self.context_text[begin..end].to_string()
    }
}

/// Joins a record's paragraphs and returns the combined string plus the byte
/// offset where each paragraph starts.
pub fn join_context(record: &ProductRecord) -> (String, Vec<usize>) {
    let mut text = String::new();
    let mut bases = Vec::with_capacity(record.paragraphs.len());
    for (i, p) in record.paragraphs.iter().enumerate() {
        if i > 0 {
            text.push_str(PARAGRAPH_SEP);
        }
        bases.push(text.len());
        text.push_str(&p.text);
    }
    (text, bases)
}

fn pad_to(ids: &mut Vec<u32>, len: usize) -> Vec<bool> {
    ids.truncate(len);
    let real = ids.len();
    ids.resize(len, PAD_ID);
    let mut mask = vec![true; real];
    mask.resize(len, false);
    mask
}

/// Tokenizes the context and attribute, maps evidence char spans to token
/// spans (a token is inside a span iff its byte range overlaps it), drops
/// spans that cross the truncation boundary, and emits BIO tags.
pub fn build_example(
    record: &ProductRecord,
    attribute_key: &str,
    vocab: &Vocab,
    s_c: usize,
    s_a: usize,
) -> Result<TokenizedExample> {
    record.validate()?;
    let attr = record
        .attribute(attribute_key)
        .ok_or_else(|| Error::Record {
            product: record.id.clone(),
            detail: format!("attribute {attribute_key:?} not annotated"),
        })?;

    let (context, bases) = join_context(record);
    let (all_ids, all_spans) = tokenize(&context, vocab);

    let mut token_spans: Vec<(usize, usize)> = Vec::new();
    for ev in &attr.evidences {
        let begin = bases[ev.paragraph_index] + ev.char_begin;
        let end = bases[ev.paragraph_index] + ev.char_end;
        let mut first: Option<usize> = None;
        let mut last = 0usize;
        for (ti, ts) in all_spans.iter().enumerate() {
            if ts.start < end && ts.end > begin {
                if first.is_none() {
                    first = Some(ti);
                }
                last = ti;
            }
        }
        if let Some(f) = first {
            // A span straddling the truncation point is dropped entirely.
            if last < s_c {
                token_spans.push((f, last + 1));
            }
        }
    }
    token_spans.sort_unstable();
    token_spans.dedup();
    let merged = merge_overlaps(token_spans);
    let gold_tags = spans_to_tags(&merged, s_c)?;

    let mut context_ids = all_ids;
    let context_pad_mask = pad_to(&mut context_ids, s_c);
    let token_to_char: Vec<(usize, usize)> = all_spans
        .iter()
        .take(s_c)
        .map(|s: &TokenSpan| (s.start, s.end))
        .collect();

    let (mut attribute_ids, _) = tokenize(attribute_key, vocab);
    let attribute_pad_mask = pad_to(&mut attribute_ids, s_a);

    Ok(TokenizedExample {
        product_id: record.id.clone(),
        attribute: attribute_key.to_string(),
        context_ids,
        attribute_ids,
        context_pad_mask,
        attribute_pad_mask,
        gold_tags,
        token_to_char,
        context_text: context,
    })
}

/// Input for extraction when the attribute need not be annotated on the
/// record: same tokenization, all-O gold.
pub fn build_input(
    record: &ProductRecord,
    attribute_key: &str,
    vocab: &Vocab,
    s_c: usize,
    s_a: usize,
) -> Result<TokenizedExample> {
    let (context, _) = join_context(record);
    let (mut context_ids, all_spans) = tokenize(&context, vocab);
    let context_pad_mask = pad_to(&mut context_ids, s_c);
    let token_to_char: Vec<(usize, usize)> = all_spans
        .iter()
        .take(s_c)
        .map(|s| (s.start, s.end))
        .collect();
    let (mut attribute_ids, _) = tokenize(attribute_key, vocab);
    let attribute_pad_mask = pad_to(&mut attribute_ids, s_a);
    Ok(TokenizedExample {
        product_id: record.id.clone(),
        attribute: attribute_key.to_string(),
        context_ids,
        attribute_ids,
        context_pad_mask,
        attribute_pad_mask,
        gold_tags: vec![Tag::O; s_c],
        token_to_char,
        context_text: context,
    })
}

fn merge_overlaps(spans: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for (s, e) in spans {
        match merged.last_mut() {
            Some(last) if s < last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}
