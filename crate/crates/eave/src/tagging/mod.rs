//! Sequence-tagging head, BIO span coding, and span-level metrics.

mod metrics;
mod spans;

pub use metrics::{evaluate, AttrMetrics, EvalReport, ExtractionRecord, SpanPrediction};
pub use spans::{decode_spans, logits_to_tags, spans_to_tags, Tag};

use crate::encoder::HeadNodes;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Scalar};

/// Projects the context segment of the light states to per-token O/B/I
/// logits. Attribute-segment states are not scored.
pub fn tag_logits<T: Scalar>(
    g: &mut Graph<T>,
    states: NodeId,
    head: &HeadNodes,
    context_len: usize,
) -> Result<NodeId> {
    let ctx = g.slice_rows(states, 0, context_len)?;
    let proj = g.matmul(ctx, head.w)?;
    g.add_bias(proj, head.b)
}

/// Mean cross-entropy of the tag logits against the gold tags over non-pad
/// context tokens. Pad tokens contribute exactly zero.
pub fn tagging_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    gold: &[Tag],
    pad_mask: &[bool],
) -> Result<NodeId> {
    if !pad_mask.iter().any(|&m| m) {
        return Err(Error::BadShape {
            op: "tagging_loss",
            shape: vec![gold.len()],
            detail: "all context tokens are padding".into(),
        });
    }
    let gold_ids: Vec<usize> = gold.iter().map(|t| *t as usize).collect();
    g.masked_cross_entropy(logits, &gold_ids, pad_mask)
}
