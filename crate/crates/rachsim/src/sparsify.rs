//! Gradient compression operators (top-k, rand-k) and the sparse-vector
//! arithmetic used by the error-feedback pipeline.
//!
//! Values are carried through compression exactly: no operator here rescales
//! or otherwise perturbs the entries it selects, so `densify(s) + residual(v, s)`
//! reconstructs `v` bit-for-bit.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparsifyError {
    #[error("dimension mismatch: update has dim {update}, vector has dim {vector}")]
    DimMismatch { update: usize, vector: usize },
    #[error("invalid entries: {0}")]
    InvalidEntries(String),
}

/// A compressed gradient payload sized to one ALOHA slot: `(index, value)`
/// pairs with strictly increasing indices, all below `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseUpdate {
    /// Build an update from raw entries, validating the index invariants.
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self, SparsifyError> {
        let mut last: Option<usize> = None;
        for &(idx, _) in &entries {
            if idx >= dim {
                return Err(SparsifyError::InvalidEntries(format!(
                    "index {idx} out of range for dim {dim}"
                )));
            }
            if let Some(prev) = last {
                if idx <= prev {
                    return Err(SparsifyError::InvalidEntries(format!(
                        "indices not strictly increasing at {idx}"
                    )));
                }
            }
            last = Some(idx);
        }
        Ok(Self { dim, entries })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Expand to a dense vector with zeros at unselected coordinates.
    pub fn densify(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(idx, val) in &self.entries {
            out[idx] = val;
        }
        out
    }

    /// Multiply every carried value by `scale`, in place.
    pub fn scale_values(&mut self, scale: f64) {
        for entry in &mut self.entries {
            entry.1 *= scale;
        }
    }
}

/// Euclidean norm of a dense vector.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Keep the `min(k, d)` largest-magnitude entries of `v`, ties broken by
/// lowest index. Values are preserved exactly.
pub fn top_k(v: &[f64], k: usize) -> SparseUpdate {
    assert!(k >= 1, "top_k requires k >= 1");
    let keep = k.min(v.len());
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then_with(|| a.cmp(&b)));
    let mut selected: Vec<usize> = order[..keep].to_vec();
    selected.sort_unstable();
    let entries = selected.into_iter().map(|i| (i, v[i])).collect();
    SparseUpdate {
        dim: v.len(),
        entries,
    }
}

/// Keep `min(k, d)` entries at indices sampled uniformly without replacement.
/// Values are preserved exactly; the d/k unbiasedness rescale is the caller's
/// choice (see `SparseUpdate::scale_values`).
pub fn rand_k<R: Rng + ?Sized>(v: &[f64], k: usize, rng: &mut R) -> SparseUpdate {
    assert!(k >= 1, "rand_k requires k >= 1");
    let keep = k.min(v.len());
    let mut selected = rand::seq::index::sample(rng, v.len(), keep).into_vec();
    selected.sort_unstable();
    let entries = selected.into_iter().map(|i| (i, v[i])).collect();
    SparseUpdate {
        dim: v.len(),
        entries,
    }
}

/// Return `v` with the coordinates named in `s` zeroed, so that
/// `densify(s) + residual(v, s) = v` elementwise.
pub fn residual(v: &[f64], s: &SparseUpdate) -> Result<Vec<f64>, SparsifyError> {
    if s.dim != v.len() {
        return Err(SparsifyError::DimMismatch {
            update: s.dim,
            vector: v.len(),
        });
    }
    let mut out = v.to_vec();
    for &(idx, _) in &s.entries {
        out[idx] = 0.0;
    }
    Ok(out)
}

/// `target[i] += scale * value` for each carried entry.
pub fn scatter_add(target: &mut [f64], s: &SparseUpdate, scale: f64) -> Result<(), SparsifyError> {
    if s.dim != target.len() {
        return Err(SparsifyError::DimMismatch {
            update: s.dim,
            vector: target.len(),
        });
    }
    for &(idx, val) in &s.entries {
        target[idx] += scale * val;
    }
    Ok(())
}
