use std::ops::Range;

/// How a `(query block, key block)` tile interacts with the causal mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileKind {
    /// Every key precedes or equals every query: no masking.
    Full,
    /// Straddles the diagonal: mask `key > query` element-wise.
    Diagonal,
    /// Every key is after every query: contributes nothing.
    Skip,
}

/// Classifies tile `(i, j)` for causal attention with the given block sizes.
pub fn apply_causal_tiling(i: usize, j: usize, block_q: usize, block_kv: usize) -> TileKind {
    let q = i * block_q..(i + 1) * block_q;
    let k = j * block_kv..(j + 1) * block_kv;
    classify(&q, &k)
}

/// Same classification for explicit, possibly short, row ranges.
pub(crate) fn classify(q: &Range<usize>, k: &Range<usize>) -> TileKind {
    if k.start > q.end - 1 {
        TileKind::Skip
    } else if k.end - 1 <= q.start {
        TileKind::Full
    } else {
        TileKind::Diagonal
    }
}
