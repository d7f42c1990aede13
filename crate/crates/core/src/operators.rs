//! Truncated number-basis operators. Position and momentum are built from
//! ladder operators at a reference frequency `ω_ref`:
//! `q = ℓ (a + a†)`, `p = iκ (a† − a)` with `ℓ = √(ħ/2mω_ref)`,
//! `κ = √(ħ m ω_ref / 2)`.

use ndarray::Array2;
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Sparse operator stored as a row-major list of non-zero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOp {
    dim: usize,
    entries: Vec<(usize, usize, Complex64)>,
}

impl SparseOp {
    pub fn from_dense(m: &Array2<Complex64>) -> Self {
        let dim = m.nrows();
        let mut entries = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                if m[(i, j)] != ZERO {
                    entries.push((i, j, m[(i, j)]));
                }
            }
        }
        Self { dim, entries }
    }

    pub fn to_dense(&self) -> Array2<Complex64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            entries: (0..dim).map(|i| (i, i, Complex64::new(1.0, 0.0))).collect(),
        }
    }

    pub fn annihilation(dim: usize) -> Self {
        Self {
            dim,
            entries: (1..dim)
                .map(|n| (n - 1, n, Complex64::new((n as f64).sqrt(), 0.0)))
                .collect(),
        }
    }

    pub fn adjoint(&self) -> Self {
        let mut entries: Vec<_> = self
            .entries
            .iter()
            .map(|&(i, j, v)| (j, i, v.conj()))
            .collect();
        entries.sort_by_key(|e| (e.0, e.1));
        Self {
            dim: self.dim,
            entries,
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|&(i, j, v)| (i, j, v * c))
                .collect(),
        }
    }

    pub fn add(&self, other: &SparseOp) -> Self {
        Self::from_dense(&(self.to_dense() + other.to_dense()))
    }

    pub fn matmul(&self, other: &SparseOp) -> Self {
        Self::from_dense(&self.to_dense().dot(&other.to_dense()))
    }

    /// `y = Op x`.
    pub fn apply_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![ZERO; self.dim];
        self.apply_into(x, &mut y);
        y
    }

    /// `⟨x|Op|x⟩` without normalization.
    pub fn expectation(&self, x: &[Complex64]) -> Complex64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| x[i].conj() * v * x[j])
            .sum()
    }

    /// `out += c · Op ρ`.
    pub fn left_mul_acc(&self, rho: &Array2<Complex64>, c: Complex64, out: &mut Array2<Complex64>) {
        let n = self.dim;
        for &(i, k, v) in &self.entries {
            let f = c * v;
            for j in 0..n {
                out[(i, j)] += f * rho[(k, j)];
            }
        }
    }

    /// `out += c · ρ Op`.
    pub fn right_mul_acc(
        &self,
        rho: &Array2<Complex64>,
        c: Complex64,
        out: &mut Array2<Complex64>,
    ) {
        let n = self.dim;
        for &(k, j, v) in &self.entries {
            let f = c * v;
            for i in 0..n {
                out[(i, j)] += f * rho[(i, k)];
            }
        }
    }

    pub fn left_mul(&self, rho: &Array2<Complex64>) -> Array2<Complex64> {
        let mut out = Array2::zeros(rho.raw_dim());
        self.left_mul_acc(rho, Complex64::new(1.0, 0.0), &mut out);
        out
    }

    /// `Tr(Op ρ)`.
    pub fn trace_with(&self, rho: &Array2<Complex64>) -> Complex64 {
        self.entries.iter().map(|&(i, k, v)| v * rho[(k, i)]).sum()
    }
}

/// Position, momentum and their truncated products in a fixed basis.
#[derive(Debug, Clone)]
pub struct PhaseSpaceOps {
    pub dim: usize,
    pub length_scale: f64,
    pub momentum_scale: f64,
    pub q: SparseOp,
    pub p: SparseOp,
    pub q2: SparseOp,
    pub p2: SparseOp,
    pub qp: SparseOp,
    pub pq: SparseOp,
    /// `{q, p}/2`.
    pub sym_qp: SparseOp,
}

impl PhaseSpaceOps {
    pub fn new(dim: usize, mass: f64, omega_ref: f64, hbar: f64) -> Self {
        let a = SparseOp::annihilation(dim);
        let ad = a.adjoint();
        let length_scale = (hbar / (2.0 * mass * omega_ref)).sqrt();
        let momentum_scale = (hbar * mass * omega_ref / 2.0).sqrt();
        let q = a.add(&ad).scale(Complex64::new(length_scale, 0.0));
        let p = ad
            .add(&a.scale(Complex64::new(-1.0, 0.0)))
            .scale(Complex64::new(0.0, momentum_scale));
        let q2 = q.matmul(&q);
        let p2 = p.matmul(&p);
        let qp = q.matmul(&p);
        let pq = p.matmul(&q);
        let sym_qp = qp.add(&pq).scale(Complex64::new(0.5, 0.0));
        Self {
            dim,
            length_scale,
            momentum_scale,
            q,
            p,
            q2,
            p2,
            qp,
            pq,
            sym_qp,
        }
    }
}

/// `f(M)` for a Hermitian matrix `M` through its eigendecomposition.
pub fn hermitian_function<F: Fn(f64) -> f64>(m: &Array2<Complex64>, f: F) -> Array2<Complex64> {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)].conj()));
    let eig = nalgebra::SymmetricEigen::new(dm);
    let v = &eig.eigenvectors;
    Array2::from_shape_fn((n, n), |(i, j)| {
        (0..n)
            .map(|k| v[(i, k)] * f(eig.eigenvalues[k]) * v[(j, k)].conj())
            .sum()
    })
}

/// Largest eigenvalue of a Hermitian matrix.
pub fn hermitian_max_eigenvalue(m: &Array2<Complex64>) -> f64 {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)].conj()));
    dm.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Dense matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(m: &Array2<Complex64>) -> Array2<Complex64> {
    let n = m.nrows();
    let norm: f64 = m
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m.mapv(|v| v / 2f64.powi(squarings));
    let mut result = Array2::<Complex64>::eye(n);
    let mut term = Array2::<Complex64>::eye(n);
    for k in 1..=20 {
        term = term.dot(&scaled).mapv(|v| v / k as f64);
        result += &term;
        let tn: f64 = term.iter().map(|v| v.norm()).sum();
        if tn < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}
