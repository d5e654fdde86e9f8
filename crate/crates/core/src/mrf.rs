//! ICAR precision matrices, per-component sum-to-zero constraints, and
//! eigen-truncated bases for MRF smooths.

use thiserror::Error;

use crate::linalg::Matrix;
use crate::nbgraph::NbStructure;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MrfError {
    #[error("an MRF needs at least 2 units, got {0}")]
    TooSmall(usize),
    #[error("rank k = {k} must lie in {c}..={n} (components..units)")]
    RankOutOfRange { k: usize, c: usize, n: usize },
}

/// ICAR precision `P` for a neighbourhood structure together with the
/// constraint basis and the (optionally reduced) penalty used for fitting.
///
/// `P[i][i]` is the neighbour count of unit `i`, `P[i][j] = -1` for
/// neighbours and 0 otherwise. Each connected component carries its own
/// sum-to-zero constraint, so `P` restricted to the constraint basis is
/// positive definite.
#[derive(Debug, Clone)]
pub struct PrecisionSpec<T> {
    names: Vec<String>,
    counts: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
    components: Vec<Vec<usize>>,
    constraint_basis: Matrix<T>,
    reduced_rank: Option<usize>,
    basis: Matrix<T>,
    penalty: Matrix<T>,
}

pub fn icar_precision<T: Scalar>(nb: &NbStructure) -> Result<PrecisionSpec<T>, MrfError> {
    let n = nb.len();
    if n < 2 {
        return Err(MrfError::TooSmall(n));
    }
    let adjacency: Vec<Vec<usize>> = (0..n).map(|i| nb.neighbours(i).to_vec()).collect();
    let counts = adjacency.iter().map(Vec::len).collect();
    let components = nb.components();
    let z = constraint_basis::<T>(n, &components);
    let mut spec = PrecisionSpec {
        names: nb.names().to_vec(),
        counts,
        adjacency,
        components,
        constraint_basis: z.clone(),
        reduced_rank: None,
        basis: z,
        penalty: Matrix::zeros(0, 0),
    };
    spec.penalty = spec.project(&spec.constraint_basis);
    Ok(spec)
}

/// Orthonormal basis of the vectors summing to zero over every component:
/// Helmert contrasts within each component, laid out block-wise.
fn constraint_basis<T: Scalar>(n: usize, components: &[Vec<usize>]) -> Matrix<T> {
    let q: usize = components.iter().map(|c| c.len() - 1).sum();
    let mut z = Matrix::zeros(n, q);
    let mut col = 0;
    for comp in components {
        for k in 1..comp.len() {
            let kf = T::from_usize_lossy(k);
            let norm = (kf * (kf + T::one())).sqrt();
            for &i in &comp[..k] {
                z[(i, col)] = T::one() / norm;
            }
            z[(comp[k], col)] = -kf / norm;
            col += 1;
        }
    }
    z
}

impl<T: Scalar> PrecisionSpec<T> {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn neighbour_counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    /// `Z`: n × (n − c), orthonormal columns orthogonal to every
    /// component indicator.
    pub fn constraint_basis(&self) -> &Matrix<T> {
        &self.constraint_basis
    }

    pub fn reduced_rank(&self) -> Option<usize> {
        self.reduced_rank
    }

    /// Basis mapping free coefficients to per-unit effects.
    pub fn basis(&self) -> &Matrix<T> {
        &self.basis
    }

    /// Penalty on the free coefficients.
    pub fn penalty(&self) -> &Matrix<T> {
        &self.penalty
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        self.adjacency
            .iter()
            .enumerate()
            .map(|(i, nbs)| {
                T::from_usize_lossy(self.counts[i]) * x[i] - nbs.iter().map(|&j| x[j]).sum::<T>()
            })
            .collect()
    }

    /// `xᵀ P x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        self.mul_vec(x).iter().zip(x).map(|(&a, &b)| a * b).sum()
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let n = self.len();
        let mut p = Matrix::zeros(n, n);
        for (i, nbs) in self.adjacency.iter().enumerate() {
            p[(i, i)] = T::from_usize_lossy(self.counts[i]);
            for &j in nbs {
                p[(i, j)] = -T::one();
            }
        }
        p
    }

    /// `Bᵀ P B` for a basis `B` with one row per unit.
    fn project(&self, b: &Matrix<T>) -> Matrix<T> {
        let q = b.ncols();
        let mut pb = Matrix::zeros(self.len(), q);
        for (i, nbs) in self.adjacency.iter().enumerate() {
            let d = T::from_usize_lossy(self.counts[i]);
            for c in 0..q {
                let mut v = d * b[(i, c)];
                for &j in nbs {
                    v -= b[(j, c)];
                }
                pb[(i, c)] = v;
            }
        }
        let mut out = b.transpose().matmul(&pb);
        for i in 0..q {
            for j in 0..i {
                let m = (out[(i, j)] + out[(j, i)]) * T::lit(0.5);
                out[(i, j)] = m;
                out[(j, i)] = m;
            }
        }
        out
    }

    /// `Zᵀ P Z` on the full constraint basis.
    pub fn constrained_precision(&self) -> Matrix<T> {
        self.project(&self.constraint_basis)
    }

    /// Restricts the basis to the `k − c` eigenvectors of the constrained
    /// precision with the smallest eigenvalues (the smoothest patterns);
    /// the penalty becomes the diagonal of those eigenvalues. `k = n`
    /// keeps the full space (rotated), `k = c` leaves no free coefficients.
    pub fn rank_reduce(&self, k: usize) -> Result<Self, MrfError> {
        let (n, c) = (self.len(), self.components.len());
        if k < c || k > n {
            return Err(MrfError::RankOutOfRange { k, c, n });
        }
        let (vals, vecs) = self.constrained_precision().symmetric_eigen();
        let keep = k - c;
        let u = vecs.block(0, 0, vecs.nrows(), keep);
        let mut out = self.clone();
        out.basis = self.constraint_basis.matmul(&u);
        out.penalty = Matrix::from_diag(&vals[..keep]);
        out.reduced_rank = Some(k);
        Ok(out)
    }

    /// Coordinate-triplet text of `P` (1-based `row col value` lines).
    pub fn triplets_text(&self) -> String {
        let mut out = String::new();
        for (i, nbs) in self.adjacency.iter().enumerate() {
            let mut entries: Vec<(usize, String)> = nbs.iter().map(|&j| (j, "-1".to_string())).collect();
            entries.push((i, self.counts[i].to_string()));
            entries.sort_by_key(|e| e.0);
            for (j, v) in entries {
                out.push_str(&format!("{} {} {}\n", i + 1, j + 1, v));
            }
        }
        out
    }
}
