use core::sync::atomic::{AtomicU64, Ordering};

use alloc::format;

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};
use crate::types::TokenId;

/// Pre-encoder token embeddings (`V × d`), with a counter of full-table
/// nearest-neighbour scans for instrumentation.
#[derive(Debug)]
pub struct VocabEmbeddingTable {
    table: Matrix,
    scans: AtomicU64,
}

impl Clone for VocabEmbeddingTable {
    fn clone(&self) -> Self {
        Self {
            table: self.table.clone(),
            scans: AtomicU64::new(0),
        }
    }
}

impl PartialEq for VocabEmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.table == other.table
    }
}

impl VocabEmbeddingTable {
    pub fn new(table: Matrix) -> Result<Self> {
        if table.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("vocabulary table"));
        }
        Ok(Self {
            table,
            scans: AtomicU64::new(0),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.table.cols()
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        self.table.row(id as usize)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.table
    }

    /// Number of [`project_to_vocab`] calls made against this table.
    pub fn scan_count(&self) -> u64 {
        self.scans.load(Ordering::Relaxed)
    }
}

/// Nearest vocabulary row to `e` by squared Euclidean distance; ties go to
/// the lowest id.
pub fn project_to_vocab(e: &[f64], table: &VocabEmbeddingTable) -> Result<TokenId> {
    if table.vocab_size() == 0 {
        return Err(Error::EmptyTable);
    }
    if e.len() != table.embed_dim() {
        return Err(Error::shape(
            format!("{}-vector", table.embed_dim()),
            format!("{}-vector", e.len()),
        ));
    }
    table.scans.fetch_add(1, Ordering::Relaxed);
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (id, row) in table.table.as_slice().chunks_exact(e.len()).enumerate() {
        let d = squared_distance(e, row);
        if d < best_d {
            best_d = d;
            best = id;
        }
    }
    Ok(best as TokenId)
}
