use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One extracted value: a half-open token span over the context segment plus
/// its decoded text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub token_start: usize,
    pub token_end: usize,
    #[serde(default)]
    pub text: String,
}

/// Spans for one (product, attribute) pair, the unit both `extract` and
/// `evaluate` work in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub product_id: String,
    pub attribute: String,
    pub spans: Vec<SpanPrediction>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AttrMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positive: usize,
    pub predicted: usize,
    pub gold: usize,
}

/// Micro-averaged span-level precision / recall / F1 with exact boundary
/// matching, plus a per-attribute breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positive: usize,
    pub predicted: usize,
    pub gold: usize,
    pub per_attribute: BTreeMap<String, AttrMetrics>,
}

fn prf(tp: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    let p = if predicted == 0 {
        0.0
    } else {
        tp as f64 / predicted as f64
    };
    let r = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

fn key_spans(
    records: &[ExtractionRecord],
    side: &str,
) -> Result<BTreeMap<(String, String), BTreeSet<(usize, usize)>>> {
    let mut map = BTreeMap::new();
    for rec in records {
        let key = (rec.product_id.clone(), rec.attribute.clone());
        if map.contains_key(&key) {
            return Err(Error::DuplicateKey {
                product: format!("{} ({side})", rec.product_id),
                attribute: rec.attribute.clone(),
            });
        }
        let spans: BTreeSet<(usize, usize)> = rec
            .spans
            .iter()
            .map(|s| (s.token_start, s.token_end))
            .collect();
        map.insert(key, spans);
    }
    Ok(map)
}

/// Compares predictions against golds keyed by (product id, attribute).
/// Matching is exact on token boundaries; counts are micro-averaged. Pairs
/// with empty gold and empty prediction contribute nothing.
pub fn evaluate(
    predictions: &[ExtractionRecord],
    golds: &[ExtractionRecord],
) -> Result<EvalReport> {
    let preds = key_spans(predictions, "prediction")?;
    let golds = key_spans(golds, "gold")?;

    let mut tp = 0usize;
    let mut n_pred = 0usize;
    let mut n_gold = 0usize;
    let mut per_attr: BTreeMap<String, AttrMetrics> = BTreeMap::new();

    let empty = BTreeSet::new();
    let keys: BTreeSet<&(String, String)> = preds.keys().chain(golds.keys()).collect();
    for key in keys {
        let p = preds.get(key).unwrap_or(&empty);
        let g = golds.get(key).unwrap_or(&empty);
        let hit = p.intersection(g).count();
        tp += hit;
        n_pred += p.len();
        n_gold += g.len();
        let slot = per_attr.entry(key.1.clone()).or_default();
        slot.true_positive += hit;
        slot.predicted += p.len();
        slot.gold += g.len();
    }

    for m in per_attr.values_mut() {
        let (p, r, f1) = prf(m.true_positive, m.predicted, m.gold);
        m.precision = p;
        m.recall = r;
        m.f1 = f1;
    }
    let (precision, recall, f1) = prf(tp, n_pred, n_gold);
    Ok(EvalReport {
        precision,
        recall,
        f1,
        true_positive: tp,
        predicted: n_pred,
        gold: n_gold,
        per_attribute: per_attr,
    })
}
