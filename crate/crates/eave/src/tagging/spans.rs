use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-token tag in the BIO scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    O = 0,
    B = 1,
    I = 2,
}

impl Tag {
    pub fn from_index(i: usize) -> Tag {
        match i {
            1 => Tag::B,
            2 => Tag::I,
            _ => Tag::O,
        }
    }
}

/// Decodes BIO tags into half-open token spans. A span starts at `B` and runs
/// through consecutive `I`s. A dangling `I` (no preceding `B`/`I`) is
/// repaired to `B` and opens a span. Spans come out sorted and disjoint.
pub fn decode_spans(tags: &[Tag]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            Tag::O => {
                if let Some(s) = open.take() {
                    spans.push((s, i));
                }
            }
            Tag::B => {
                if let Some(s) = open.take() {
                    spans.push((s, i));
                }
                open = Some(i);
            }
            Tag::I => {
                // Repair: an I with nothing open acts as B.
                if open.is_none() {
                    open = Some(i);
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push((s, tags.len()));
    }
    spans
}

/// Encodes sorted, non-overlapping half-open token spans as BIO tags.
pub fn spans_to_tags(spans: &[(usize, usize)], len: usize) -> Result<Vec<Tag>> {
    let mut tags = vec![Tag::O; len];
    let mut prev_end = 0usize;
    for &(start, end) in spans {
        if start >= end || end > len {
            return Err(Error::BadShape {
                op: "spans_to_tags",
                shape: vec![len],
                detail: format!("span ({start}, {end}) out of range"),
            });
        }
        if start < prev_end {
            return Err(Error::BadShape {
                op: "spans_to_tags",
                shape: vec![len],
                detail: format!("span ({start}, {end}) overlaps its predecessor"),
            });
        }
        tags[start] = Tag::B;
        for t in tags.iter_mut().take(end).skip(start + 1) {
            *t = Tag::I;
        }
        prev_end = end;
    }
    Ok(tags)
}

/// Argmax decode of `[S_c, 3]` logits; padded positions become `O`.
/// Ties resolve to the lowest class index (O before B before I).
pub fn logits_to_tags(logits: &Tensor<f32>, pad_mask: &[bool]) -> Vec<Tag> {
    let rows = logits.rows();
    let data = logits.data();
    let mut tags = Vec::with_capacity(rows);
    for i in 0..rows {
        if !pad_mask.get(i).copied().unwrap_or(false) {
            tags.push(Tag::O);
            continue;
        }
        let row = &data[i * 3..(i + 1) * 3];
        let mut best = 0usize;
        for j in 1..3 {
            if row[j] > row[best] {
                best = j;
            }
        }
        tags.push(Tag::from_index(best));
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;

    use Tag::{B, I, O};

    #[test]
    fn all_outside_decodes_to_nothing() {
        assert!(decode_spans(&[O, O, O, O]).is_empty());
    }

    #[test]
    fn two_spans_decode_with_boundaries() {
        assert_eq!(decode_spans(&[O, B, I, O, B]), vec![(1, 3), (4, 5)]);
    }

    #[test]
    fn dangling_inside_is_repaired_to_begin() {
        assert_eq!(decode_spans(&[I, I, O]), vec![(0, 2)]);
    }

    #[test]
    fn adjacent_begins_stay_separate_spans() {
        assert_eq!(decode_spans(&[B, B, I]), vec![(0, 1), (1, 3)]);
    }

    #[test]
    fn encode_then_decode_is_identity() {
        let spans = vec![(0, 2), (3, 4), (6, 9)];
        let tags = spans_to_tags(&spans, 10).unwrap();
        assert_eq!(decode_spans(&tags), spans);
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        assert!(spans_to_tags(&[(0, 3), (2, 5)], 6).is_err());
        assert!(spans_to_tags(&[(0, 0)], 4).is_err());
        assert!(spans_to_tags(&[(2, 5)], 4).is_err());
    }

    #[test]
    fn argmax_decode_respects_pad_mask() {
        let logits = Tensor::new(
            vec![
                0.0, 5.0, 0.0, // B
                0.0, 0.0, 5.0, // I
                9.0, 0.0, 0.0, // O but padded anyway
            ],
            &[3, 3],
        )
        .unwrap();
        let tags = logits_to_tags(&logits, &[true, true, false]);
        assert_eq!(tags, vec![B, I, O]);
    }
}
