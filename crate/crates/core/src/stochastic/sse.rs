//! Linear SSE with a single operator `A = αq + iβp`, read in Itô form as
//!
//! ```text
//! dψ = [−(i/ħ)(H_S + c{q,p}) − ½D A†A] ψ dt − i A ψ dW,
//! E[dW* dW] = D dt,  E[dW dW] = S dt,  c = Dαβħ/2.
//! ```
//!
//! Its ensemble `E[|ψ⟩⟨ψ|]` obeys the quadratic master equation with
//! `d_qq = Dα²/2`, `d_pp = Dβ²/2` and friction `Dαβ`. The `c{q,p}` term
//! cancels the Hamiltonian part of the dissipator `D(AρA† − ½{A†A, ρ})`.
//! `S` does not enter the ensemble average.
//!
//! One step is `ψ ← U_S (M₀ψ − i dW Aψ)` with the free propagator `U_S`
//! and `M₀ = e^{−ic{q,p}dt/ħ} (1 − D dt A†A)^½`. This is the Euler step with
//! its deterministic factor chosen so that `E[M†M] = 1` exactly; the plain
//! `1 + K dt` factor inflates the mean trace by `dt² ‖Kψ‖²` per step.
//!
//! Two estimators of `E[|ψ⟩⟨ψ|]` are offered. [`Estimator::Linear`]
//! averages the unnormalized states directly. [`Estimator::Tilted`]
//! draws each increment from the Gaussian reweighted by `‖ψ'‖²`, the
//! discrete form of the noise drift `i(D⟨A⟩* − S⟨A⟩)dt`, and keeps the
//! state normalized. Both have the same mean; the tilted one avoids the
//! heavy-tailed weights of the linear equation.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::PhysicalConstants;
use crate::dynamics::fock::MIN_DIM;
use crate::dynamics::{MomentTrajectory, QuadraticGenerator, SystemSpec};
use crate::error::{invalid, Error, Result};
use crate::operators::{
    expm, hermitian_function, hermitian_max_eigenvalue, PhaseSpaceOps, SparseOp,
};

/// Squared norm above which a trajectory is abandoned.
pub const NORM_OVERFLOW: f64 = 1e6;

/// Largest tolerated fraction of failed trajectories.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Cap on stored per-trajectory series.
pub const MAX_DUMPED_TRAJECTORIES: usize = 100;

const BATCH: usize = 32;
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Linear,
    Tilted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SSEConfig {
    pub system: SystemSpec,
    pub constants: PhysicalConstants,
    pub alpha: f64,
    pub beta: f64,
    pub d_scalar: f64,
    pub s_scalar: Complex64,
    pub dim: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Steps between recorded moments.
    pub record_every: usize,
    pub n_traj: usize,
    pub seed: u64,
    /// Number of trajectories whose moment series are kept (at most 100).
    pub dump_trajectories: usize,
    pub estimator: Estimator,
}

impl SSEConfig {
    /// `A = q + iμp`, `μ = ħ/(4mk_BT)`, `D = 4mγk_BT/ħ²`; unravels the
    /// corrected CL equation.
    pub fn ccl(
        system: SystemSpec,
        constants: PhysicalConstants,
        gamma: f64,
        temperature: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0 && temperature > 0.0) {
            return Err(invalid("gamma", "γ and T must be strictly positive"));
        }
        let kt = constants.k_b * temperature;
        let h = constants.hbar;
        Ok(Self {
            beta: h / (4.0 * system.mass * kt),
            ..Self::jz(system, constants, gamma, temperature)?
        })
    }

    /// `A = q` with the same strength; unravels the Joos-Zeh equation.
    pub fn jz(
        system: SystemSpec,
        constants: PhysicalConstants,
        gamma: f64,
        temperature: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0 && temperature > 0.0) {
            return Err(invalid("gamma", "γ and T must be strictly positive"));
        }
        let h = constants.hbar;
        Ok(Self {
            system,
            constants,
            alpha: 1.0,
            beta: 0.0,
            d_scalar: 4.0 * system.mass * gamma * constants.k_b * temperature / (h * h),
            s_scalar: Complex64::new(0.0, 0.0),
            dim: 40,
            dt: 1e-3,
            t_end: 10.0,
            record_every: 1000,
            n_traj: 10_000,
            seed: 0,
            dump_trajectories: 0,
            estimator: Estimator::Linear,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        SystemSpec::new(self.system.mass, self.system.omega_s)?;
        if !(self.d_scalar >= 0.0 && self.d_scalar.is_finite()) {
            return Err(invalid("d_scalar", "must be finite and non-negative"));
        }
        if self.s_scalar.norm() > self.d_scalar * (1.0 + 1e-12) {
            return Err(invalid("s_scalar", "|S| must not exceed D"));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(invalid("alpha", "operator coefficients must be finite"));
        }
        if self.dim < MIN_DIM {
            return Err(invalid("dim", format!("must be at least {MIN_DIM}")));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be strictly positive"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(invalid("t_end", "must be finite and non-negative"));
        }
        if self.n_traj == 0 {
            return Err(invalid("n_traj", "must be at least 1"));
        }
        if self.dump_trajectories > MAX_DUMPED_TRAJECTORIES {
            return Err(invalid(
                "dump_trajectories",
                "at most 100 trajectories can be dumped",
            ));
        }
        Ok(())
    }

    /// The master equation unraveled by this SSE.
    pub fn generator(&self) -> QuadraticGenerator {
        let (m, w, d) = (self.system.mass, self.system.omega_s, self.d_scalar);
        QuadraticGenerator {
            h_pp: 0.5 / m,
            h_qq: 0.5 * m * w * w,
            h_qp: 0.0,
            d_qq: 0.5 * d * self.alpha * self.alpha,
            d_pp: 0.5 * d * self.beta * self.beta,
            d_qp: 0.0,
            friction: d * self.alpha * self.beta,
        }
    }

    pub fn steps(&self) -> usize {
        crate::dynamics::step_count((0.0, self.t_end), self.dt).unwrap_or(0)
    }

    pub fn ops(&self) -> PhaseSpaceOps {
        PhaseSpaceOps::new(
            self.dim,
            self.system.mass,
            self.system.reference_frequency(),
            self.constants.hbar,
        )
    }
}

/// Banded matrix stored by diagonals: `diags[k][i] = M[i, i + offsets[k]]`.
#[derive(Debug, Clone)]
struct Banded {
    dim: usize,
    offsets: Vec<isize>,
    diags: Vec<Vec<Complex64>>,
}

impl Banded {
    fn from_sparse(op: &SparseOp) -> Self {
        Self::from_dense(&op.to_dense(), 0.0)
    }

    /// Keeps the diagonals whose largest entry exceeds `cut`.
    fn from_dense(dense: &Array2<Complex64>, cut: f64) -> Self {
        let dim = dense.nrows();
        let mut offsets = Vec::new();
        let mut diags = Vec::new();
        for off in -(dim as isize - 1)..dim as isize {
            let d: Vec<Complex64> = (0..dim)
                .map(|i| {
                    let j = i as isize + off;
                    if j >= 0 && (j as usize) < dim {
                        dense[(i, j as usize)]
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            if d.iter().any(|v| v.norm() > cut) {
                offsets.push(off);
                diags.push(d);
            }
        }
        Self {
            dim,
            offsets,
            diags,
        }
    }

    /// `y = M x`.
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        y.fill(Complex64::new(0.0, 0.0));
        for (off, d) in self.offsets.iter().zip(&self.diags) {
            let lo = (-off).max(0) as usize;
            let hi = (self.dim as isize - off.max(&0)) as usize;
            for i in lo..hi {
                y[i] += d[i] * x[(i as isize + off) as usize];
            }
        }
    }
}

/// Free evolution over one step.
#[derive(Debug, Clone)]
enum Propagator {
    Diagonal(Vec<Complex64>),
    Dense(Array2<Complex64>),
}

impl Propagator {
    fn apply(&self, psi: &mut [Complex64], scratch: &mut [Complex64]) {
        match self {
            Propagator::Diagonal(ph) => psi.iter_mut().zip(ph).for_each(|(v, p)| *v *= p),
            Propagator::Dense(u) => {
                for (i, s) in scratch.iter_mut().enumerate() {
                    *s = u.row(i).iter().zip(psi.iter()).map(|(a, b)| a * b).sum();
                }
                psi.copy_from_slice(scratch);
            }
        }
    }
}

/// Precomputed operators for one configuration.
#[derive(Debug, Clone)]
struct Integrator {
    cfg: SSEConfig,
    free: Propagator,
    a: Banded,
    m0: Banded,
    observables: [SparseOp; 6],
    /// 2×2 real factor of the `(Re dW, Im dW)` covariance per unit time.
    noise_factor: [[f64; 2]; 2],
    steps: usize,
    step: f64,
}

/// Quantities recorded along each trajectory, as unnormalized
/// expectations `⟨ψ|O|ψ⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observable {
    Trace,
    Q,
    P,
    Q2,
    P2,
    SymQP,
}

impl Observable {
    pub const ALL: [Observable; 6] = [
        Observable::Trace,
        Observable::Q,
        Observable::P,
        Observable::Q2,
        Observable::P2,
        Observable::SymQP,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Observable::Trace => "trace",
            Observable::Q => "q",
            Observable::P => "p",
            Observable::Q2 => "q2",
            Observable::P2 => "p2",
            Observable::SymQP => "qp_sym",
        }
    }
}

impl Integrator {
    fn new(cfg: &SSEConfig) -> Result<Self> {
        cfg.validate()?;
        let ops = cfg.ops();
        let h = cfg.constants.hbar;
        let (m, w) = (cfg.system.mass, cfg.system.omega_s);
        let steps = cfg.steps();
        let step = if steps == 0 {
            0.0
        } else {
            cfg.t_end / steps as f64
        };
        let free = if w > 0.0 {
            // the basis is the eigenbasis of H_S; drop the zero-point phase
            Propagator::Diagonal(
                (0..cfg.dim)
                    .map(|n| (-I * w * n as f64 * step).exp())
                    .collect(),
            )
        } else {
            let hs = ops.p2.scale(Complex64::new(0.5 / m, 0.0)).to_dense();
            Propagator::Dense(expm(&hs.mapv(|v| -I * v * step / h)))
        };
        let a = ops
            .q
            .scale(Complex64::new(cfg.alpha, 0.0))
            .add(&ops.p.scale(I * cfg.beta));
        let x = a
            .adjoint()
            .matmul(&a)
            .to_dense()
            .mapv(|v| v * cfg.d_scalar * step);
        let top = hermitian_max_eigenvalue(&x);
        if top >= 1.0 {
            return Err(invalid(
                "dt",
                format!("D·dt·‖A†A‖ = {top:.3} on the truncated basis must stay below 1"),
            ));
        }
        let root = hermitian_function(&x, |l| (1.0 - l).max(0.0).sqrt());
        // {q,p} = 2 sym_qp
        let counter = 0.5 * cfg.d_scalar * cfg.alpha * cfg.beta * h;
        let rot = expm(
            &ops.sym_qp
                .to_dense()
                .mapv(|z| -I * 2.0 * counter * step * z / h),
        );
        let m0 = rot.dot(&root);
        let (d, s) = (cfg.d_scalar, cfg.s_scalar);
        let cxx = 0.5 * (d + s.re);
        let cyy = 0.5 * (d - s.re);
        let cxy = 0.5 * s.im;
        let l11 = cxx.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { cxy / l11 } else { 0.0 };
        let l22 = (cyy - l21 * l21).max(0.0).sqrt();
        Ok(Self {
            cfg: *cfg,
            free,
            a: Banded::from_sparse(&a),
            // the band decays geometrically; the dropped tail is rounding noise
            m0: Banded::from_dense(&m0, 1e-12),
            observables: [
                SparseOp::identity(cfg.dim),
                ops.q.clone(),
                ops.p.clone(),
                ops.q2.clone(),
                ops.p2.clone(),
                ops.sym_qp.clone(),
            ],
            noise_factor: [[l11, 0.0], [l21, l22]],
            steps,
            step,
        })
    }

    fn record_times(&self) -> Vec<f64> {
        let every = self.cfg.record_every.max(1);
        let mut t = vec![0.0];
        for k in 1..=self.steps {
            if k % every == 0 || k == self.steps {
                t.push(k as f64 * self.step);
            }
        }
        t
    }

    fn measure(&self, psi: &[Complex64]) -> [f64; 6] {
        std::array::from_fn(|k| self.observables[k].expectation(psi).re)
    }

    fn run(
        &self,
        psi0: &[Complex64],
        rng: &mut ChaCha8Rng,
        keep_state: bool,
    ) -> Result<SseTrajectory> {
        let n = self.cfg.dim;
        let mut psi = psi0.to_vec();
        let mut scratch = vec![Complex64::new(0.0, 0.0); n];
        let mut a_psi = vec![Complex64::new(0.0, 0.0); n];
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        let every = self.cfg.record_every.max(1);
        let sq = self.step.sqrt();
        let [[l11, _], [l21, l22]] = self.noise_factor;
        // −i dW = c1 ξ1 + c2 ξ2 with standard normal ξ
        let c1 = Complex64::new(l21, -l11) * sq;
        let c2 = Complex64::new(l22, 0.0) * sq;
        let tilted = self.cfg.estimator == Estimator::Tilted;
        let mut weight = 1.0;
        let mut times = vec![0.0];
        let mut values = vec![self.measure(&psi)];
        for k in 1..=self.steps {
            self.free.apply(&mut psi, &mut scratch);
            self.a.apply(&psi, &mut a_psi);
            self.m0.apply(&psi, &mut x);
            let kick = if tilted {
                let (xi, z) = tilted_increment(&x, &a_psi, c1, c2, rng);
                weight *= z;
                c1 * xi[0] + c2 * xi[1]
            } else {
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                c1 * z1 + c2 * z2
            };
            for i in 0..n {
                psi[i] = x[i] + kick * a_psi[i];
            }
            if tilted {
                let norm = psi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                psi.iter_mut().for_each(|v| *v /= norm);
            }
            let t = k as f64 * self.step;
            if k % every == 0 || k == self.steps {
                let v = self.measure(&psi).map(|o| o * weight);
                if !(v[0] <= NORM_OVERFLOW) {
                    return Err(Error::NormOverflow { norm: v[0], t });
                }
                times.push(t);
                values.push(v);
            } else if k % 64 == 0 && !tilted {
                let norm: f64 = psi.iter().map(|v| v.norm_sqr()).sum();
                if !(norm <= NORM_OVERFLOW) {
                    return Err(Error::NormOverflow { norm, t });
                }
            }
        }
        if tilted {
            psi.iter_mut().for_each(|v| *v *= weight.sqrt());
        }
        Ok(SseTrajectory {
            times,
            values,
            final_state: if keep_state { psi } else { Vec::new() },
        })
    }
}

/// Draws `ξ ∈ ℝ²` from `φ(ξ) w(ξ) / Z` with `w(ξ) = ‖x + (c1ξ1 + c2ξ2)v‖²`
/// and `Z = E_φ[w]`, returning `ξ` and `Z`.
///
/// `w = a + 2hᵀξ + ξᵀGξ ≤ 2(a + ξᵀGξ)`, so proposals from the mixture
/// `φ(ξ)(a + ξᵀGξ)/Z` are accepted with probability `w / 2(a + ξᵀGξ)`.
fn tilted_increment(
    x: &[Complex64],
    v: &[Complex64],
    c1: Complex64,
    c2: Complex64,
    rng: &mut ChaCha8Rng,
) -> ([f64; 2], f64) {
    let a: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    let vv: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    let vx: Complex64 = v.iter().zip(x).map(|(p, q)| p.conj() * q).sum();
    let h = [(c1.conj() * vx).re, (c2.conj() * vx).re];
    let g11 = vv * c1.norm_sqr();
    let g22 = vv * c2.norm_sqr();
    let g12 = vv * (c1.conj() * c2).re;
    let tr = g11 + g22;
    let z = a + tr;
    let half_diff = 0.5 * (g11 - g22);
    let lam1 = 0.5 * tr + half_diff.hypot(g12);
    let theta = 0.5 * g12.atan2(half_diff);
    let (e1, e2) = ([theta.cos(), theta.sin()], [-theta.sin(), theta.cos()]);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    loop {
        let u = rng.random::<f64>() * z;
        let xi = if u < a {
            [normal(rng), normal(rng)]
        } else {
            // along an eigenvector of G the density is s²φ(s)
            let (dir, other) = if u - a < lam1 { (e1, e2) } else { (e2, e1) };
            let chi = (0..3).map(|_| normal(rng).powi(2)).sum::<f64>().sqrt();
            let s = if rng.random::<bool>() { chi } else { -chi };
            let o = normal(rng);
            [s * dir[0] + o * other[0], s * dir[1] + o * other[1]]
        };
        let quad = g11 * xi[0] * xi[0] + 2.0 * g12 * xi[0] * xi[1] + g22 * xi[1] * xi[1];
        let w = a + 2.0 * (h[0] * xi[0] + h[1] * xi[1]) + quad;
        if rng.random::<f64>() * 2.0 * (a + quad) <= w {
            return (xi, z);
        }
    }
}

/// Moments along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SseTrajectory {
    pub times: Vec<f64>,
    /// Unnormalized expectations in the order of [`Observable::ALL`].
    pub values: Vec<[f64; 6]>,
    pub final_state: Vec<Complex64>,
}

fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn check_initial_state(cfg: &SSEConfig, psi0: &[Complex64]) -> Result<()> {
    if psi0.len() != cfg.dim {
        return Err(invalid(
            "psi0",
            format!("length {} does not match dim {}", psi0.len(), cfg.dim),
        ));
    }
    let norm: f64 = psi0.iter().map(|v| v.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(invalid(
            "psi0",
            format!("must be normalized, squared norm is {norm}"),
        ));
    }
    // Euler accuracy guard: dt·D·‖A†A‖ < 0.1, with the norm estimated on
    // the initial state as ⟨(A†A)²⟩^½.
    let ops = cfg.ops();
    let a = ops
        .q
        .scale(Complex64::new(cfg.alpha, 0.0))
        .add(&ops.p.scale(I * cfg.beta));
    let ada = a.adjoint().matmul(&a);
    let est = ada.matmul(&ada).expectation(psi0).re.max(0.0).sqrt();
    if cfg.dt * cfg.d_scalar * est >= 0.1 {
        return Err(invalid(
            "dt",
            format!(
                "dt·D·‖A†A‖ ≈ {:.3} must stay below 0.1",
                cfg.dt * cfg.d_scalar * est
            ),
        ));
    }
    Ok(())
}

/// Integrates one trajectory on RNG stream `stream` of `cfg.seed`.
pub fn sse_trajectory(cfg: &SSEConfig, psi0: &[Complex64], stream: u64) -> Result<SseTrajectory> {
    check_initial_state(cfg, psi0)?;
    let integ = Integrator::new(cfg)?;
    integ.run(psi0, &mut trajectory_rng(cfg.seed, stream), true)
}

/// Running sums over trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub seed: u64,
    /// Trajectory `k` uses RNG stream `k` of `seed`.
    pub attempted: usize,
    pub count: usize,
    pub failures: Vec<(usize, String)>,
    sums: Vec<[f64; 6]>,
    squares: Vec<[f64; 6]>,
    /// `(trajectory index, moment series)` for the first dumped trajectories.
    pub dumps: Vec<(usize, Vec<[f64; 6]>)>,
}

impl TrajectoryEnsemble {
    fn empty(times: Vec<f64>, seed: u64) -> Self {
        let n = times.len();
        Self {
            times,
            seed,
            attempted: 0,
            count: 0,
            failures: Vec::new(),
            sums: vec![[0.0; 6]; n],
            squares: vec![[0.0; 6]; n],
            dumps: Vec::new(),
        }
    }

    fn push(&mut self, values: &[[f64; 6]]) {
        self.attempted += 1;
        self.count += 1;
        for (k, v) in values.iter().enumerate() {
            for (j, x) in v.iter().enumerate() {
                self.sums[k][j] += x;
                self.squares[k][j] += x * x;
            }
        }
    }

    /// Appends `other`, whose trajectories come after those of `self`.
    pub fn merge(&mut self, other: &TrajectoryEnsemble) {
        self.attempted += other.attempted;
        self.count += other.count;
        self.failures.extend(other.failures.iter().cloned());
        self.dumps.extend(other.dumps.iter().cloned());
        for k in 0..self.sums.len() {
            for j in 0..6 {
                self.sums[k][j] += other.sums[k][j];
                self.squares[k][j] += other.squares[k][j];
            }
        }
    }

    pub fn mean(&self, k: usize, obs: Observable) -> f64 {
        self.sums[k][obs as usize] / self.count as f64
    }

    /// Standard error of [`mean`](Self::mean); NaN with fewer than two
    /// trajectories.
    pub fn stderr(&self, k: usize, obs: Observable) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return f64::NAN;
        }
        let m = self.mean(k, obs);
        ((self.squares[k][obs as usize] / n - m * m).max(0.0) / (n - 1.0)).sqrt()
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header: Option<&str>) -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(out, "# {h}")?;
        }
        let mut cols = vec!["t".to_string()];
        for o in Observable::ALL {
            cols.push(o.column().to_string());
            cols.push(format!("{}_se", o.column()));
        }
        writeln!(out, "{}", cols.join(","))?;
        for k in 0..self.times.len() {
            write!(out, "{}", self.times[k])?;
            for o in Observable::ALL {
                write!(out, ",{:.15e},{:.15e}", self.mean(k, o), self.stderr(k, o))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Compares the ensemble against moment-equation output sampled at
    /// the same times.
    pub fn compare(&self, reference: &MomentTrajectory) -> Result<EnsembleComparison> {
        let mut rows = Vec::with_capacity(self.times.len());
        for (k, &t) in self.times.iter().enumerate() {
            let j = reference
                .times
                .iter()
                .position(|&r| (r - t).abs() <= 1e-9 * t.abs().max(1.0))
                .ok_or_else(|| Error::GridMismatch(format!("no reference moments at t = {t}")))?;
            let s = &reference.states[j];
            let [q2, p2, qp] = s.raw_second_moments();
            let exact = [1.0, s.mean_q, s.mean_p, q2, p2, qp];
            let mut z = [0.0; 6];
            let mut ens = [0.0; 6];
            let mut se = [0.0; 6];
            for o in Observable::ALL {
                let i = o as usize;
                ens[i] = self.mean(k, o);
                se[i] = self.stderr(k, o);
                let d = (ens[i] - exact[i]).abs();
                // below rounding level the deviation counts as zero even when
                // every trajectory agrees (stderr 0, e.g. at t = 0)
                z[i] = if d <= 1e-12 * exact[i].abs().max(1.0) {
                    0.0
                } else {
                    d / se[i]
                };
            }
            rows.push(ComparisonRow {
                t,
                ensemble: ens,
                stderr: se,
                reference: exact,
                z,
            });
        }
        Ok(EnsembleComparison { rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub ensemble: [f64; 6],
    pub stderr: [f64; 6],
    pub reference: [f64; 6],
    /// `|ensemble − reference| / stderr`.
    pub z: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleComparison {
    pub rows: Vec<ComparisonRow>,
}

impl EnsembleComparison {
    /// Largest z-score over the five moments (the trace is excluded).
    pub fn max_z(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.z[1..].iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header: Option<&str>) -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(out, "# {h}")?;
        }
        let mut cols = vec!["t".to_string()];
        for o in &Observable::ALL[1..] {
            let c = o.column();
            cols.extend([
                format!("{c}_ens"),
                format!("{c}_se"),
                format!("{c}_ode"),
                format!("{c}_z"),
            ]);
        }
        writeln!(out, "{}", cols.join(","))?;
        for r in &self.rows {
            write!(out, "{}", r.t)?;
            for i in 1..6 {
                write!(
                    out,
                    ",{:.15e},{:.15e},{:.15e},{:.6}",
                    r.ensemble[i], r.stderr[i], r.reference[i], r.z[i]
                )?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs `cfg.n_traj` trajectories from `psi0`. Trajectories are grouped
/// in fixed batches and merged in index order, so results are
/// bit-identical for any thread count. Trajectories whose norm overflows
/// are dropped; more than 1% of them fails the run.
pub fn ensemble_run(cfg: &SSEConfig, psi0: &[Complex64]) -> Result<TrajectoryEnsemble> {
    check_initial_state(cfg, psi0)?;
    let integ = Integrator::new(cfg)?;
    let times = integ.record_times();
    if cfg.n_traj < 100 {
        log::warn!(
            "ensemble of {} trajectories is below the recommended 100",
            cfg.n_traj
        );
    }
    let batches = cfg.n_traj.div_ceil(BATCH);
    let parts: Vec<TrajectoryEnsemble> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut part = TrajectoryEnsemble::empty(times.clone(), cfg.seed);
            for idx in b * BATCH..((b + 1) * BATCH).min(cfg.n_traj) {
                let mut rng = trajectory_rng(cfg.seed, idx as u64);
                match integ.run(psi0, &mut rng, false) {
                    Ok(tr) => {
                        if idx < cfg.dump_trajectories {
                            part.dumps.push((idx, tr.values.clone()));
                        }
                        part.push(&tr.values);
                    }
                    Err(e) => {
                        part.attempted += 1;
                        part.failures.push((idx, e.to_string()));
                    }
                }
            }
            part
        })
        .collect();
    let mut total = TrajectoryEnsemble::empty(times, cfg.seed);
    for p in &parts {
        total.merge(p);
    }
    let failed = total.failures.len();
    if failed as f64 > MAX_FAILURE_FRACTION * cfg.n_traj as f64 || total.count == 0 {
        return Err(Error::EnsembleFailure {
            failed,
            total: cfg.n_traj,
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::fock::{fock_propagate, FockBasis};
    use crate::dynamics::{
        integrate_moments_recording, GaussianMomentState, MasterEquationSpec, Variant,
    };

    fn system() -> SystemSpec {
        SystemSpec::new(1.0, 1.0).unwrap()
    }

    fn basis(cfg: &SSEConfig) -> FockBasis {
        FockBasis {
            ops: cfg.ops(),
            hbar: cfg.constants.hbar,
        }
    }

    fn small(mut cfg: SSEConfig) -> SSEConfig {
        cfg.dim = 20;
        cfg.t_end = 1.0;
        cfg.record_every = 250;
        cfg.n_traj = 64;
        cfg
    }

    #[test]
    fn ccl_generator_matches_master_equation() {
        let c = PhysicalConstants::default();
        let cfg = SSEConfig::ccl(system(), c, 0.05, 10.0).unwrap();
        let me = MasterEquationSpec::new(Variant::CCL, system(), 0.05, 10.0, c).unwrap();
        let (a, b) = (cfg.generator(), me.generator(0.0).unwrap());
        for (x, y) in [
            (a.d_qq, b.d_qq),
            (a.d_pp, b.d_pp),
            (a.friction, b.friction),
            (a.h_pp, b.h_pp),
            (a.h_qq, b.h_qq),
        ] {
            assert!((x - y).abs() <= 1e-14 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    /// Exact mean of one step, `U(M₀ρM₀† + D dt AρA†)U†`.
    fn mean_map(integ: &Integrator, rho: &Array2<Complex64>) -> Array2<Complex64> {
        let n = rho.nrows();
        let left = |m: &Banded, r: &Array2<Complex64>| {
            let mut out = Array2::zeros((n, n));
            let mut y = vec![Complex64::new(0.0, 0.0); n];
            for j in 0..n {
                let col: Vec<Complex64> = r.column(j).to_vec();
                m.apply(&col, &mut y);
                for i in 0..n {
                    out[(i, j)] = y[i];
                }
            }
            out
        };
        let sandwich = |m: &Banded, r: &Array2<Complex64>| {
            let once = left(m, r).t().mapv(|v| v.conj());
            left(m, &once).t().mapv(|v| v.conj())
        };
        let mut out = sandwich(&integ.m0, rho)
            + sandwich(&integ.a, rho).mapv(|v| v * integ.cfg.d_scalar * integ.step);
        if let Propagator::Diagonal(ph) = &integ.free {
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] *= ph[i] * ph[j].conj();
                }
            }
        }
        out
    }

    #[test]
    fn one_step_mean_matches_lindblad_increment() {
        let c = PhysicalConstants::default();
        let mut cfg = SSEConfig::ccl(system(), c, 0.3, 1.0).unwrap();
        cfg.dim = 20;
        cfg.dt = 1e-5;
        cfg.t_end = 1e-5;
        let integ = Integrator::new(&cfg).unwrap();
        let fb = basis(&cfg);
        let rho0 = FockBasis::pure_density(&fb.gaussian_pure_state(0.6, -0.4, 0.0));
        let incr = (mean_map(&integ, &rho0) - &rho0).mapv(|v| v / integ.step);
        let exact = fb.rhs(&cfg.generator(), &rho0);
        let scale = exact.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let err = (&incr - &exact)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-3 * scale, "{err} vs {scale}");
    }

    #[test]
    fn iterated_mean_map_tracks_master_equation() {
        let c = PhysicalConstants::default();
        let mut cfg = SSEConfig::ccl(system(), c, 0.05, 10.0).unwrap();
        cfg.dt = 1e-3;
        cfg.t_end = 1e-3;
        let integ = Integrator::new(&cfg).unwrap();
        let fb = basis(&cfg);
        let rho0 = FockBasis::pure_density(&fb.gaussian_pure_state(1.0, 0.0, 0.0));
        let mut rho = rho0.clone();
        for _ in 0..2000 {
            rho = mean_map(&integ, &rho);
        }
        let tr: Complex64 = (0..cfg.dim).map(|i| rho[(i, i)]).sum();
        assert!((tr.re - 1.0).abs() < 1e-10, "{tr}");
        let me = MasterEquationSpec::new(Variant::CCL, system(), 0.05, 10.0, c).unwrap();
        let f = fock_propagate(&me, &rho0, cfg.dim, (0.0, 2.0), 1e-3, 2000).unwrap();
        let (a, b) = (fb.moments(&rho), f.moments.last().unwrap());
        for (x, y) in [
            (a.mean_q, b.mean_q),
            (a.mean_p, b.mean_p),
            (a.sigma_qq, b.sigma_qq),
            (a.sigma_pp, b.sigma_pp),
            (a.sigma_qp, b.sigma_qp),
        ] {
            // first-order splitting error
            assert!((x - y).abs() < 5e-3 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn one_step_monte_carlo_matches_lindblad_increment() {
        let c = PhysicalConstants::default();
        let mut cfg = SSEConfig::ccl(system(), c, 0.3, 1.0).unwrap();
        cfg.dim = 20;
        cfg.dt = 1e-2;
        cfg.t_end = 1e-2;
        let integ = Integrator::new(&cfg).unwrap();
        let fb = basis(&cfg);
        let psi0 = fb.gaussian_pure_state(0.6, -0.4, 0.0);
        let rho0 = FockBasis::pure_density(&psi0);
        let n = 100_000;
        let mut acc = Array2::<Complex64>::zeros((cfg.dim, cfg.dim));
        let mut rng = trajectory_rng(7, 0);
        for _ in 0..n {
            let tr = integ.run(&psi0, &mut rng, true).unwrap();
            let psi = &tr.final_state;
            for i in 0..cfg.dim {
                for j in 0..cfg.dim {
                    acc[(i, j)] += psi[i] * psi[j].conj();
                }
            }
        }
        let incr = (acc.mapv(|v| v / n as f64) - &rho0).mapv(|v| v / cfg.dt);
        let exact = fb.rhs(&cfg.generator(), &rho0);
        let scale = exact.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let err = (&incr - &exact)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        // Monte Carlo error ≈ √(D/dt/n) per entry plus O(dt) bias
        assert!(err < 0.05 * scale, "{err} vs {scale}");
    }

    #[test]
    fn no_bath_is_free_rotation() {
        let c = PhysicalConstants::default();
        let mut cfg = small(SSEConfig::jz(system(), c, 1.0, 1.0).unwrap());
        cfg.d_scalar = 0.0;
        cfg.n_traj = 1;
        let psi0 = basis(&cfg).gaussian_pure_state(1.0, 0.0, 0.0);
        let tr = sse_trajectory(&cfg, &psi0, 0).unwrap();
        for (t, v) in tr.times.iter().zip(&tr.values) {
            assert!((v[0] - 1.0).abs() < 1e-12);
            assert!((v[1] - t.cos()).abs() < 1e-6, "{t}: {}", v[1]);
        }
        let ens = ensemble_run(&cfg, &psi0).unwrap();
        assert_eq!(ens.count, 1);
        assert_eq!(
            ens.mean(ens.times.len() - 1, Observable::Q),
            tr.values.last().unwrap()[1]
        );
        assert!(ens.stderr(1, Observable::Q).is_nan());
    }

    #[test]
    fn free_particle_uses_dense_propagator() {
        let c = PhysicalConstants::default();
        let mut cfg =
            small(SSEConfig::jz(SystemSpec::new(1.0, 0.0).unwrap(), c, 1.0, 1.0).unwrap());
        cfg.d_scalar = 0.0;
        let psi0 = basis(&cfg).gaussian_pure_state(0.0, 0.5, 0.0);
        let tr = sse_trajectory(&cfg, &psi0, 0).unwrap();
        let last = tr.values.last().unwrap();
        // free spreading reaches the truncation edge slowly
        assert!((last[1] - 0.5).abs() < 1e-4);
        assert!((last[2] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn real_noise_keeps_norm_for_hermitian_operator() {
        let c = PhysicalConstants::default();
        let mut cfg = small(SSEConfig::jz(system(), c, 0.1, 1.0).unwrap());
        cfg.s_scalar = Complex64::new(cfg.d_scalar, 0.0);
        let psi0 = basis(&cfg).gaussian_pure_state(0.0, 0.0, 0.0);
        let tr = sse_trajectory(&cfg, &psi0, 3).unwrap();
        // Euler leaves a norm error of order √(2N)·D·dt·⟨q²⟩ ≈ 1%
        for v in &tr.values {
            assert!((v[0] - 1.0).abs() < 0.05, "{}", v[0]);
        }
    }

    #[test]
    fn jz_ensemble_heats_linearly() {
        let c = PhysicalConstants::default();
        let mut cfg = small(SSEConfig::jz(system(), c, 0.1, 1.0).unwrap());
        cfg.n_traj = 400;
        let psi0 = basis(&cfg).gaussian_pure_state(0.0, 0.0, 0.0);
        let ens = ensemble_run(&cfg, &psi0).unwrap();
        let me = MasterEquationSpec::new(Variant::JZ, system(), 0.1, 1.0, c).unwrap();
        let ode = integrate_moments_recording(
            &me,
            GaussianMomentState::ground(&system(), &c),
            (0.0, 1.0),
            1e-3,
            250,
        )
        .unwrap();
        let cmp = ens.compare(&ode).unwrap();
        assert!(cmp.max_z() < 4.0, "{:?}", cmp.rows.last());
    }

    #[test]
    fn seed_determinism_and_stream_independence() {
        let c = PhysicalConstants::default();
        let cfg = small(SSEConfig::ccl(system(), c, 0.05, 10.0).unwrap());
        let psi0 = basis(&cfg).gaussian_pure_state(1.0, 0.0, 0.0);
        let a = ensemble_run(&cfg, &psi0).unwrap();
        let b = ensemble_run(&cfg, &psi0).unwrap();
        assert_eq!(a, b);
        let t0 = sse_trajectory(&cfg, &psi0, 0).unwrap();
        let t1 = sse_trajectory(&cfg, &psi0, 1).unwrap();
        assert_ne!(t0.values, t1.values);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c1 = single.install(|| ensemble_run(&cfg, &psi0).unwrap());
        assert_eq!(a, c1);
    }

    #[test]
    fn tilted_estimator_matches_density_evolution() {
        let c = PhysicalConstants::default();
        let mut cfg = small(SSEConfig::ccl(system(), c, 0.2, 2.0).unwrap());
        cfg.n_traj = 2000;
        let fb = basis(&cfg);
        let psi0 = fb.gaussian_pure_state(1.0, 0.0, 0.0);
        let me = MasterEquationSpec::new(Variant::CCL, system(), 0.2, 2.0, c).unwrap();
        let f = fock_propagate(
            &me,
            &FockBasis::pure_density(&psi0),
            cfg.dim,
            (0.0, cfg.t_end),
            cfg.dt,
            cfg.record_every,
        )
        .unwrap();
        let last = f.moments.last().unwrap();
        let [q2, p2, qp] = last.raw_second_moments();
        let exact = [1.0, last.mean_q, last.mean_p, q2, p2, qp];
        cfg.estimator = Estimator::Tilted;
        let ens = ensemble_run(&cfg, &psi0).unwrap();
        let k = ens.times.len() - 1;
        for o in &Observable::ALL[1..] {
            let d = ens.mean(k, *o) - exact[*o as usize];
            assert!(d.abs() < 4.0 * ens.stderr(k, *o), "{o:?}: {d}");
        }
        // weights are products of per-step normalizers equal to 1 up to rounding
        assert!((ens.mean(k, Observable::Trace) - 1.0).abs() < 1e-9);
        // the linear weights are heavy-tailed here, so only the scale is checked
        cfg.estimator = Estimator::Linear;
        let lin = ensemble_run(&cfg, &psi0).unwrap();
        assert!((lin.mean(k, Observable::Trace) - 1.0).abs() < 0.5);
    }

    #[test]
    fn invalid_configs() {
        let c = PhysicalConstants::default();
        let good = SSEConfig::ccl(system(), c, 0.05, 10.0).unwrap();
        let psi0 = FockBasis {
            ops: good.ops(),
            hbar: 1.0,
        }
        .gaussian_pure_state(0.0, 0.0, 0.0);
        let mut bad = good;
        bad.s_scalar = Complex64::new(0.0, 2.0 * good.d_scalar);
        assert!(bad.validate().is_err());
        bad = good;
        bad.dim = 10;
        assert!(bad.validate().is_err());
        bad = good;
        bad.dt = 0.1;
        assert!(ensemble_run(&bad, &psi0).is_err());
        let unnormalized: Vec<Complex64> = psi0.iter().map(|v| v * 2.0).collect();
        assert!(ensemble_run(&good, &unnormalized).is_err());
    }
}
