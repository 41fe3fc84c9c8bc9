//! Symmetric sparse systems over the free degrees of freedom, factorized with
//! faer's supernodal Cholesky. The symbolic analysis (ordering and elimination
//! tree) is computed once per sparsity pattern and shared by every numeric
//! factorization with that pattern.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::{Conj, MatMut, Par, Side};

use crate::error::{Error, Result};

/// Maps full DOF indices to the reduced (free) index space.
#[derive(Debug, Clone)]
pub struct DofMap {
    free: Vec<usize>,
    reduced: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(dof_count: usize, fixed_nodes: impl IntoIterator<Item = usize>) -> Self {
        let mut is_fixed = vec![false; dof_count];
        for n in fixed_nodes {
            for d in 0..3 {
                is_fixed[3 * n + d] = true;
            }
        }
        let mut free = Vec::new();
        let mut reduced = vec![None; dof_count];
        for (i, fixed) in is_fixed.into_iter().enumerate() {
            if !fixed {
                reduced[i] = Some(free.len());
                free.push(i);
            }
        }
        DofMap { free, reduced }
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn full_count(&self) -> usize {
        self.reduced.len()
    }

    pub fn reduced(&self, dof: usize) -> Option<usize> {
        self.reduced[dof]
    }

    pub fn is_free(&self, dof: usize) -> bool {
        self.reduced[dof].is_some()
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Writes reduced values back into the free entries of `full`.
    pub fn scatter(&self, reduced: &[f64], full: &mut [f64]) {
        for (&i, &v) in self.free.iter().zip(reduced) {
            full[i] = v;
        }
    }
}

/// Fixed lower-triangular sparsity pattern with a cached symbolic Cholesky.
#[derive(Debug, Clone)]
pub struct SymmetricPattern {
    n: usize,
    pairs: Arc<Vec<(usize, usize)>>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Arc<Argsort<usize>>,
    cholesky: Arc<SymbolicCholesky<usize>>,
}

impl SymmetricPattern {
    /// `pairs` lists `(row, col)` with `row >= col`; duplicates are summed
    /// when values are supplied. Every diagonal entry must appear.
    pub fn new(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let idx: Vec<Pair<usize, usize>> = pairs
            .iter()
            .map(|&(row, col)| {
                debug_assert!(row >= col);
                Pair::new(row, col)
            })
            .collect();
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &idx)
            .map_err(|e| Error::Factorization(format!("pattern: {e:?}")))?;
        let cholesky =
            factorize_symbolic_cholesky(symbolic.as_ref(), Side::Lower, Default::default(), Default::default())
                .map_err(|e| Error::Factorization(format!("symbolic: {e:?}")))?;
        Ok(SymmetricPattern {
            n,
            pairs: Arc::new(pairs.to_vec()),
            symbolic,
            argsort: Arc::new(argsort),
            cholesky: Arc::new(cholesky),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry_count(&self) -> usize {
        self.pairs.len()
    }

    /// `y = A x` for the symmetric matrix whose lower triangle holds `values`.
    pub fn mul_vec(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (&(r, c), &v) in self.pairs.iter().zip(values) {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }

    pub fn matrix(&self, values: &[f64]) -> Result<SparseColMat<usize, f64>> {
        if values.len() != self.pairs.len() {
            return Err(Error::Factorization(format!(
                "expected {} values, got {}",
                self.pairs.len(),
                values.len()
            )));
        }
        SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, values)
            .map_err(|e| Error::Factorization(format!("assembly: {e:?}")))
    }

    /// Numeric `LLᵀ` factorization; fails if the matrix is not positive definite.
    pub fn factorize(&self, values: &[f64]) -> Result<CholeskyFactor> {
        let mat = self.matrix(values)?;
        let mut factor = vec![0.0; self.cholesky.len_val()];
        let scratch = self
            .cholesky
            .factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default());
        self.cholesky
            .factorize_numeric_llt::<f64>(
                &mut factor,
                mat.as_ref(),
                Side::Lower,
                Default::default(),
                Par::Seq,
                MemStack::new(&mut MemBuffer::new(scratch)),
                Default::default(),
            )
            .map_err(|e| Error::Factorization(format!("numeric: {e:?}")))?;
        Ok(CholeskyFactor {
            symbolic: Arc::clone(&self.cholesky),
            values: factor,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky<usize>>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.symbolic.nrows()
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let scratch = self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq);
        LltRef::<usize, f64>::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(rhs, n, 1),
            Par::Seq,
            MemStack::new(&mut MemBuffer::new(scratch)),
        );
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
