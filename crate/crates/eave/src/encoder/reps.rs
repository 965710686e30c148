use crate::tensor::Tensor;

/// Which input segment a heavy representation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Context,
    Attribute,
}

impl SegmentKind {
    pub fn as_u8(self) -> u8 {
        match self {
            SegmentKind::Context => 0,
            SegmentKind::Attribute => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(SegmentKind::Context),
            1 => Some(SegmentKind::Attribute),
            _ => None,
        }
    }
}

/// Cached non-interacting heavy representations of one token sequence,
/// restricted to the heavy layers selected by the layer mapping. Padding rows
/// are zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyReps {
    pub kind: SegmentKind,
    /// Hash of the producing heavy encoder (config, weights, mapping, location).
    pub fingerprint: u64,
    pub seq_len: usize,
    /// `(heavy layer index, [seq_len, d_heavy] activations)`, sorted by index.
    pub per_layer: Vec<(usize, Tensor<f32>)>,
}

impl HeavyReps {
    pub fn layer(&self, idx: usize) -> Option<&Tensor<f32>> {
        self.per_layer
            .binary_search_by_key(&idx, |(i, _)| *i)
            .ok()
            .map(|pos| &self.per_layer[pos].1)
    }

    /// Total payload bytes of the stored activations.
    pub fn payload_bytes(&self) -> usize {
        self.per_layer
            .iter()
            .map(|(_, t)| t.numel() * std::mem::size_of::<f32>())
            .sum()
    }
}
