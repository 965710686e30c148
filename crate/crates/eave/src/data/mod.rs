//! Tokenization, corpus ingestion, example construction, and synthetic data.

mod corpus;
mod example;
mod synth;
mod vocab;

pub use corpus::{
    load_corpus, save_corpus, AttributeAnnotation, CorpusLoad, Evidence, LoadMode, Paragraph,
    ProductRecord,
};
pub use example::{build_example, build_input, join_context, TokenizedExample, PARAGRAPH_SEP};
pub use synth::{rule_based_extract, synthesize_corpus};
pub use vocab::{
    token_text, tokenize, tokenize_surface, TokenSpan, Vocab, FIRST_TOKEN_ID, PAD_ID, UNK_ID,
};

/// Builds a vocabulary from every paragraph and attribute key of a corpus,
/// in first-occurrence order.
pub fn build_vocab(records: &[ProductRecord]) -> Vocab {
    let mut vocab = Vocab::new();
    for rec in records {
        for para in &rec.paragraphs {
            for span in tokenize_surface(&para.text) {
                vocab.add(&token_text(&para.text, span));
            }
        }
        for attr in &rec.attributes {
            for span in tokenize_surface(&attr.key) {
                vocab.add(&token_text(&attr.key, span));
            }
        }
    }
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_rebuild_from_same_corpus_is_stable() {
        let records = synthesize_corpus(1, 10, 3, 40, 30, 0.0);
        let a = build_vocab(&records);
        let b = build_vocab(&records);
        for rec in &records {
            for para in &rec.paragraphs {
                for span in tokenize_surface(&para.text) {
                    let t = token_text(&para.text, span);
                    assert_eq!(a.id(&t), b.id(&t));
                }
            }
        }
    }

    #[test]
    fn label_tokens_detokenize_to_evidence_values() {
        let records = synthesize_corpus(4, 30, 4, 80, 40, 0.0);
        let vocab = build_vocab(&records);
        for rec in &records {
            for attr in &rec.attributes {
                let ex = build_example(rec, &attr.key, &vocab, 64, 4).unwrap();
                let values: Vec<String> = ex
                    .gold_spans()
                    .iter()
                    .map(|&(s, e)| ex.span_text(s, e).to_lowercase())
                    .collect();
                let want: Vec<String> = attr
                    .evidences
                    .iter()
                    .map(|e| e.value.to_lowercase())
                    .collect();
                assert_eq!(values, want);
            }
        }
    }
}
