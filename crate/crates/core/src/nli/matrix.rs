use crate::error::{Error, Result};
use crate::par::{self, Execution};

use super::{check_pair, NliBackend, NliLabel, NliResult};

/// NLI results for every ordered pair `(i, j)`, `i != j`, of `n` responses.
///
/// Entries are stored row-major with the diagonal skipped, so iteration
/// order is lexicographic in `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseNliMatrix {
    n: usize,
    entries: Vec<NliResult>,
}

impl PairwiseNliMatrix {
    /// Builds from a dense `n x n` grid whose diagonal is ignored.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> NliResult) -> Result<Self> {
        if n < 2 {
            return Err(Error::InsufficientResponses { needed: 2, got: n });
        }
        let mut entries = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    entries.push(f(i, j));
                }
            }
        }
        Ok(PairwiseNliMatrix { n, entries })
    }

    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = ((usize, usize), NliResult)>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InsufficientResponses { needed: 2, got: n });
        }
        let mut slots: Vec<Option<NliResult>> = vec![None; n * (n - 1)];
        for ((i, j), r) in entries {
            if i >= n || j >= n || i == j {
                return Err(Error::Validation(format!("invalid pair index ({i}, {j}) for n={n}")));
            }
            let slot = &mut slots[Self::slot(n, i, j)];
            if slot.is_some() {
                return Err(Error::Validation(format!("duplicate pair ({i}, {j})")));
            }
            *slot = Some(r);
        }
        let entries = slots
            .into_iter()
            .enumerate()
            .map(|(k, s)| {
                s.ok_or_else(|| {
                    let (i, j) = Self::pair_of(n, k);
                    Error::Validation(format!("missing pair ({i}, {j})"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairwiseNliMatrix { n, entries })
    }

    fn slot(n: usize, i: usize, j: usize) -> usize {
        i * (n - 1) + if j > i { j - 1 } else { j }
    }

    fn pair_of(n: usize, k: usize) -> (usize, usize) {
        let i = k / (n - 1);
        let r = k % (n - 1);
        (i, if r >= i { r + 1 } else { r })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&NliResult> {
        (i < self.n && j < self.n && i != j).then(|| &self.entries[Self::slot(self.n, i, j)])
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &NliResult)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .map(move |(k, r)| (Self::pair_of(self.n, k), r))
    }

    pub fn labels(&self) -> impl Iterator<Item = NliLabel> + '_ {
        self.entries.iter().map(|r| r.predicted())
    }

    /// The matrix restricted to `keep` (in the given order).
    pub fn submatrix(&self, keep: &[usize]) -> Result<Self> {
        PairwiseNliMatrix::from_fn(keep.len(), |a, b| self.entries[Self::slot(self.n, keep[a], keep[b])])
    }

    /// The matrix with response `index` removed.
    pub fn without(&self, index: usize) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n).filter(|&k| k != index).collect();
        self.submatrix(&keep)
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        self.submatrix(perm)
    }
}

/// Classifies all `n(n-1)` ordered pairs of `responses`.
pub fn classify_all_ordered_pairs<B: NliBackend + ?Sized>(
    backend: &B,
    responses: &[String],
    exec: Execution,
) -> Result<PairwiseNliMatrix> {
    let n = responses.len();
    if n < 2 {
        return Err(Error::InsufficientResponses { needed: 2, got: n });
    }
    for r in responses {
        check_pair(r, r)?;
    }
    let entries = par::try_map_range(exec, n * (n - 1), |k| {
        let (i, j) = PairwiseNliMatrix::pair_of(n, k);
        backend.classify(&responses[i], &responses[j])
    })?;
    Ok(PairwiseNliMatrix { n, entries })
}
