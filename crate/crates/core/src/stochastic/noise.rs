//! Complex Gaussian noise with prescribed correlation `D(τ,s) = E[φ*(τ)φ(s)]`
//! and pseudo-correlation `S(τ,s) = E[φ(τ)φ(s)]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bath::KernelTable;
use crate::error::{invalid, Error, Result};

/// Default ridge, relative to the largest variance of the joint covariance.
pub const DEFAULT_RIDGE: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-12;
const BATCH: usize = 1024;

#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub grid: Vec<f64>,
    pub d: Array2<Complex64>,
    pub s: Array2<Complex64>,
    /// Ridge `ε` added to the real joint covariance as `ε · max variance`.
    pub ridge: f64,
}

impl NoiseSpec {
    pub fn new(
        grid: Vec<f64>,
        d: Array2<Complex64>,
        s: Array2<Complex64>,
        ridge: f64,
    ) -> Result<Self> {
        let n = grid.len();
        if n == 0 {
            return Err(invalid("grid", "must not be empty"));
        }
        if d.dim() != (n, n) || s.dim() != (n, n) {
            return Err(Error::GridMismatch(format!(
                "grid has {n} nodes, D is {:?}, S is {:?}",
                d.dim(),
                s.dim()
            )));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(invalid("ridge", "must be finite and non-negative"));
        }
        let scale = d.iter().map(|v| v.norm()).fold(1e-300, f64::max);
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                dev = dev.max((d[(i, j)] - d[(j, i)].conj()).norm());
                dev = dev.max((s[(i, j)] - s[(j, i)]).norm());
            }
        }
        if dev > SYMMETRY_TOL * scale {
            return Err(Error::NotHermitian { deviation: dev });
        }
        Ok(Self { grid, d, s, ridge })
    }

    /// Stationary noise `D(τ_i, τ_j) = D(τ_i − τ_j)` from a tabulated bath
    /// correlation, with zero pseudo-correlation.
    pub fn from_kernel(table: &KernelTable, grid: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                d[(i, j)] = table.lookup(grid[i] - grid[j])?;
            }
        }
        Self::new(grid, d, Array2::zeros((n, n)), DEFAULT_RIDGE)
    }

    /// White noise: `D = I`, `S = s·I`.
    pub fn white(grid: Vec<f64>, s: Complex64) -> Result<Self> {
        let n = grid.len();
        let eye = Array2::from_diag_elem(n, Complex64::new(1.0, 0.0));
        Self::new(grid, eye.clone(), eye.mapv(|v| v * s), DEFAULT_RIDGE)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Covariance of `(Re φ, Im φ)`.
    pub fn joint_covariance(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut c = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            for k in 0..n {
                let (d, s) = (self.d[(j, k)], self.s[(j, k)]);
                c[(j, k)] = 0.5 * (d.re + s.re);
                c[(n + j, n + k)] = 0.5 * (d.re - s.re);
                c[(j, n + k)] = 0.5 * (s.im + d.im);
                c[(n + j, k)] = 0.5 * (s.im - d.im);
            }
        }
        c
    }
}

/// Sampler holding the symmetric square root of the joint covariance.
#[derive(Debug, Clone)]
pub struct ColoredNoise {
    n: usize,
    root: DMatrix<f64>,
}

impl ColoredNoise {
    pub fn new(spec: &NoiseSpec) -> Result<Self> {
        let c = spec.joint_covariance();
        let scale = c.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let eps = spec.ridge * scale.max(f64::MIN_POSITIVE);
        let eig = SymmetricEigen::new(c);
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min + eps < 0.0 {
            return Err(Error::Factorization {
                min_eigenvalue: min,
            });
        }
        let sq = eig.eigenvalues.map(|l| (l + eps).max(0.0).sqrt());
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&sq) * eig.eigenvectors.transpose();
        Ok(Self {
            n: spec.len(),
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<Complex64> {
        let z = DVector::from_fn(2 * self.n, |_, _| StandardNormal.sample(rng));
        let x = &self.root * z;
        (0..self.n)
            .map(|k| Complex64::new(x[k], x[self.n + k]))
            .collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n_samples` independent paths drawn from one RNG stream.
pub fn sample_colored_noise(
    spec: &NoiseSpec,
    n_samples: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<Vec<Complex64>>> {
    let noise = ColoredNoise::new(spec)?;
    let mut rng = stream_rng(seed, stream);
    Ok((0..n_samples).map(|_| noise.sample(&mut rng)).collect())
}

/// Running sums of `φ*_iφ_j` and `φ_iφ_j` (upper triangle) for empirical
/// correlations with standard errors.
#[derive(Debug, Clone)]
pub struct NoiseStatistics {
    n: usize,
    count: u64,
    d_sum: Vec<Complex64>,
    d_sq: Vec<(f64, f64)>,
    s_sum: Vec<Complex64>,
    s_sq: Vec<(f64, f64)>,
}

/// Empirical value and standard error of one matrix entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryEstimate {
    pub mean: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
}

impl EntryEstimate {
    /// Largest of the real and imaginary deviations in standard errors.
    pub fn z_score(&self, target: Complex64) -> f64 {
        let z = |d: f64, se: f64| {
            if d == 0.0 {
                0.0
            } else {
                d.abs() / se
            }
        };
        z(self.mean.re - target.re, self.stderr_re).max(z(self.mean.im - target.im, self.stderr_im))
    }
}

impl NoiseStatistics {
    pub fn new(n: usize) -> Self {
        let m = n * (n + 1) / 2;
        Self {
            n,
            count: 0,
            d_sum: vec![Complex64::new(0.0, 0.0); m],
            d_sq: vec![(0.0, 0.0); m],
            s_sum: vec![Complex64::new(0.0, 0.0); m],
            s_sq: vec![(0.0, 0.0); m],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, phi: &[Complex64]) {
        let mut k = 0;
        for i in 0..self.n {
            let (ci, pi) = (phi[i].conj(), phi[i]);
            for pj in &phi[i..] {
                let d = ci * pj;
                let s = pi * pj;
                self.d_sum[k] += d;
                self.d_sq[k].0 += d.re * d.re;
                self.d_sq[k].1 += d.im * d.im;
                self.s_sum[k] += s;
                self.s_sq[k].0 += s.re * s.re;
                self.s_sq[k].1 += s.im * s.im;
                k += 1;
            }
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for k in 0..self.d_sum.len() {
            self.d_sum[k] += other.d_sum[k];
            self.d_sq[k].0 += other.d_sq[k].0;
            self.d_sq[k].1 += other.d_sq[k].1;
            self.s_sum[k] += other.s_sum[k];
            self.s_sq[k].0 += other.s_sq[k].0;
            self.s_sq[k].1 += other.s_sq[k].1;
        }
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j);
        i * self.n - i * (i + 1) / 2 + j
    }

    fn estimate(&self, sum: Complex64, sq: (f64, f64)) -> EntryEstimate {
        let n = self.count as f64;
        let mean = sum / n;
        let se = |s2: f64, m: f64| ((s2 / n - m * m).max(0.0) / (n - 1.0)).sqrt();
        EntryEstimate {
            mean,
            stderr_re: se(sq.0, mean.re),
            stderr_im: se(sq.1, mean.im),
        }
    }

    /// Empirical `E[φ*_iφ_j]`; Hermitian by construction.
    pub fn correlation(&self, i: usize, j: usize) -> EntryEstimate {
        let (a, b) = (i.min(j), i.max(j));
        let k = self.index(a, b);
        let mut e = self.estimate(self.d_sum[k], self.d_sq[k]);
        if i > j {
            e.mean = e.mean.conj();
        }
        e
    }

    /// Empirical `E[φ_iφ_j]`; symmetric by construction.
    pub fn pseudo_correlation(&self, i: usize, j: usize) -> EntryEstimate {
        let k = self.index(i.min(j), i.max(j));
        self.estimate(self.s_sum[k], self.s_sq[k])
    }

    /// Largest z-scores of `D̂` against `D` and `Ŝ` against `S`.
    pub fn max_z_scores(&self, spec: &NoiseSpec) -> (f64, f64) {
        let (mut zd, mut zs) = (0.0f64, 0.0f64);
        for i in 0..self.n {
            for j in i..self.n {
                zd = zd.max(self.correlation(i, j).z_score(spec.d[(i, j)]));
                zs = zs.max(self.pseudo_correlation(i, j).z_score(spec.s[(i, j)]));
            }
        }
        (zd, zs)
    }
}

/// Accumulates correlation statistics over `n_samples` paths. Samples are
/// drawn in fixed batches with one RNG stream per batch, so the result
/// does not depend on the thread count.
pub fn noise_statistics(spec: &NoiseSpec, n_samples: usize, seed: u64) -> Result<NoiseStatistics> {
    let noise = ColoredNoise::new(spec)?;
    let batches = n_samples.div_ceil(BATCH);
    let parts: Vec<NoiseStatistics> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let mut stats = NoiseStatistics::new(noise.len());
            for _ in b * BATCH..((b + 1) * BATCH).min(n_samples) {
                stats.push(&noise.sample(&mut rng));
            }
            stats
        })
        .collect();
    let mut total = NoiseStatistics::new(noise.len());
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}
