use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Observations (`n` rows, `p` columns) with optional per-row responses.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Real> {
    observations: DMatrix<T>,
    responses: Option<DVector<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn new(observations: DMatrix<T>, responses: Option<DVector<T>>) -> Result<Self> {
        if observations.nrows() == 0 {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        if let Some((idx, _)) = observations.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let row = idx % observations.nrows();
            return Err(Error::InvalidInput(format!("non-finite observation in row {row}")));
        }
        if let Some(r) = &responses {
            if r.len() != observations.nrows() {
                return Err(Error::InvalidInput(format!(
                    "{} responses for {} observation rows",
                    r.len(),
                    observations.nrows()
                )));
            }
            if let Some(i) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite response in row {i}")));
            }
        }
        Ok(Self { observations, responses })
    }

    pub fn n(&self) -> usize {
        self.observations.nrows()
    }

    pub fn p(&self) -> usize {
        self.observations.ncols()
    }

    pub fn observations(&self) -> &DMatrix<T> {
        &self.observations
    }

    pub fn responses(&self) -> Option<&DVector<T>> {
        self.responses.as_ref()
    }

    /// A single batch holding every row.
    pub fn whole(self: &Arc<Self>) -> Batch<T> {
        Batch {
            parent: Arc::clone(self),
            indices: (0..self.n()).collect(),
            batch_id: 1,
        }
    }
}

/// One disjoint slice of a dataset; `batch_id` runs from 1 to C.
#[derive(Clone, Debug)]
pub struct Batch<T: Real> {
    pub parent: Arc<Dataset<T>>,
    pub indices: Vec<usize>,
    pub batch_id: usize,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Copies the batch rows into a contiguous matrix.
    pub fn observations(&self) -> DMatrix<T> {
        let obs = self.parent.observations();
        DMatrix::from_fn(self.indices.len(), obs.ncols(), |i, j| obs[(self.indices[i], j)])
    }

    pub fn responses(&self) -> Option<DVector<T>> {
        self.parent
            .responses()
            .map(|r| DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| r[i])))
    }
}

/// Random near-equal split of the rows into `c_total` batches: shuffle, then chunk.
/// Batch sizes differ by at most one and indices inside each batch are sorted.
pub fn partition_data<T: Real>(
    data: &Arc<Dataset<T>>,
    c_total: usize,
    seed: u64,
) -> Result<Vec<Batch<T>>> {
    let n = data.n();
    if c_total == 0 || c_total > n {
        return Err(Error::Config(format!(
            "cannot split {n} rows into {c_total} non-empty batches"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, rng::tag::PARTITION, 0);
    order.shuffle(&mut r);
    let base = n / c_total;
    let extra = n % c_total;
    let mut batches = Vec::with_capacity(c_total);
    let mut start = 0;
    for c in 0..c_total {
        let size = base + usize::from(c < extra);
        let mut indices = order[start..start + size].to_vec();
        indices.sort_unstable();
        start += size;
        batches.push(Batch {
            parent: Arc::clone(data),
            indices,
            batch_id: c + 1,
        });
    }
    Ok(batches)
}
