//! Time-dependent coefficients Γ, Θ, Ξ, Υ of the exact oscillator master
//! equation
//!
//! ```text
//! Γ(t) = −∫₀ᵗ ds 𝔻_re(t,s) C(t−s)        Θ(t) = ∫₀ᵗ ds 𝔻_re(t,s) C̃(t−s)
//! Ξ(t) = −∫₀ᵗ ds 𝔻_im(t,s) C(t−s)        Υ(t) = ∫₀ᵗ ds 𝔻_im(t,s) C̃(t−s)
//! ```
//!
//! with `C(τ) = cos ω_S τ`, `C̃(τ) = sin ω_S τ / ω_S`, and the dressed kernel
//! `𝔻 = Σₙ (−1)ⁿ⁻¹ D⁽ⁿ⁾` truncated at a configurable order.

use std::io::{BufRead, Write};

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::bath::{KernelTable, PhysicalConstants};
use crate::error::{invalid, Error, Result};

/// Highest dressed-kernel order accepted without the override flag.
pub const MAX_DEFAULT_ORDER: usize = 3;

/// Heisenberg-picture kernels of the harmonic oscillator:
/// `q(s) = C(s−t) q(t) + C̃(s−t) q̇(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorKernels {
    pub omega_s: f64,
}

impl OscillatorKernels {
    pub fn new(omega_s: f64) -> Result<Self> {
        if !(omega_s >= 0.0 && omega_s.is_finite()) {
            return Err(invalid("omega_s", "must be non-negative"));
        }
        Ok(Self { omega_s })
    }

    pub fn c(&self, tau: f64) -> f64 {
        (self.omega_s * tau).cos()
    }

    /// `sin(ω_S τ)/ω_S`, continuous into `τ` at ω_S = 0.
    pub fn c_tilde(&self, tau: f64) -> f64 {
        let x = self.omega_s * tau;
        if x.abs() < 1e-4 {
            tau * (1.0 - x * x / 6.0)
        } else {
            x.sin() / self.omega_s
        }
    }
}

/// `[q(t), q(s)] θ(t−s)` as a c-number:
/// `(iħ/m) C̃(s−t)` for `t > s`, zero otherwise.
pub fn commutator_contraction(
    kernels: &OscillatorKernels,
    mass: f64,
    constants: &PhysicalConstants,
    t: f64,
    s: f64,
) -> Complex64 {
    if t <= s {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, constants.hbar / mass * kernels.c_tilde(s - t))
}

#[derive(Debug, Clone)]
enum DressedRepr {
    /// Order 1: `𝔻 = D` is stationary and served from the base table.
    Stationary(KernelTable),
    /// Higher orders: full table over `(t_i, s_j)`.
    Tabulated(Array2<Complex64>),
}

/// `𝔻(t_i, s_j)` on the uniform grid `t_i = i·step`, `i < nodes`.
#[derive(Debug, Clone)]
pub struct DressedKernel {
    step: f64,
    nodes: usize,
    order: usize,
    repr: DressedRepr,
}

impl DressedKernel {
    /// The order-1 kernel, `𝔻 = D`.
    pub fn weak_coupling(base: &KernelTable) -> Self {
        Self {
            step: base.step(),
            nodes: base.len(),
            order: 1,
            repr: DressedRepr::Stationary(base.clone()),
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn max_time(&self) -> f64 {
        (self.nodes - 1) as f64 * self.step
    }

    /// `𝔻(t_i, s_j)`.
    pub fn value(&self, i: usize, j: usize) -> Complex64 {
        match &self.repr {
            DressedRepr::Stationary(table) => table.at_lag(i as isize - j as isize),
            DressedRepr::Tabulated(values) => values[(i, j)],
        }
    }

    /// Sup norm over the tabulated square.
    pub fn sup_norm(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.nodes {
            for j in 0..self.nodes {
                m = m.max(self.value(i, j).norm());
            }
        }
        m
    }

    /// `sup |𝔻 − other|` over the common grid.
    pub fn sup_distance(&self, other: &DressedKernel) -> f64 {
        let n = self.nodes.min(other.nodes);
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                m = m.max((self.value(i, j) - other.value(i, j)).norm());
            }
        }
        m
    }
}

/// Options for [`dressed_kernel`].
#[derive(Debug, Clone, Copy)]
pub struct DressedKernelOptions {
    pub order: usize,
    /// Number of grid nodes; defaults to the full base table.
    pub nodes: Option<usize>,
    /// Accept orders above [`MAX_DEFAULT_ORDER`].
    pub allow_high_order: bool,
}

impl Default for DressedKernelOptions {
    fn default() -> Self {
        Self {
            order: 1,
            nodes: None,
            allow_high_order: false,
        }
    }
}

fn trapezoid_weight(k: usize, upper: usize, h: f64) -> f64 {
    if upper == 0 {
        0.0
    } else if k == 0 || k == upper {
        0.5 * h
    } else {
        h
    }
}

/// Tabulates `𝔻 = Σ_{n=1}^{N} (−1)^{n−1} D⁽ⁿ⁾` with
///
/// ```text
/// D⁽ⁿ⁾(t,s) = ħ⁻² ∫₀ᵗ dtₙ ∫₀ᵗ ds₂ K(tₙ,s₂) [ D̄(tₙ,s) D⁽ⁿ⁻¹⁾(t,s₂) + D(tₙ,s) D⁽ⁿ⁻¹⁾(t,s₂)* ]
/// D̄(a,b)    = D_re(a−b) + i D_im(a−b) (2θ(a−b) − 1)
/// ```
///
/// where `K` is [`commutator_contraction`]. Both integrals use the
/// trapezoid rule on the base grid.
pub fn dressed_kernel(
    base: &KernelTable,
    kernels: &OscillatorKernels,
    mass: f64,
    constants: &PhysicalConstants,
    options: DressedKernelOptions,
) -> Result<DressedKernel> {
    let order = options.order;
    if order == 0 {
        return Err(invalid("order", "dressed-kernel order must be at least 1"));
    }
    if order > MAX_DEFAULT_ORDER && !options.allow_high_order {
        return Err(Error::OrderTooHigh(order));
    }
    if !(mass > 0.0) {
        return Err(invalid("mass", "must be strictly positive"));
    }
    let n = options.nodes.unwrap_or(base.len());
    if n > base.len() {
        return Err(Error::GridMismatch(format!(
            "requested {n} nodes but the base table holds {}",
            base.len()
        )));
    }
    let h = base.step();
    if order == 1 {
        let (re, im) = (base.re()[..n].to_vec(), base.im()[..n].to_vec());
        return Ok(DressedKernel::weak_coupling(&KernelTable::new(h, re, im)?));
    }

    let d = Array2::from_shape_fn((n, n), |(a, b)| base.at_lag(a as isize - b as isize));
    let d_bar = Array2::from_shape_fn((n, n), |(a, b)| {
        let lag = (a as isize - b as isize).unsigned_abs();
        Complex64::new(base.re()[lag], base.im()[lag])
    });
    let contraction = Array2::from_shape_fn((n, n), |(a, b)| {
        commutator_contraction(kernels, mass, constants, a as f64 * h, b as f64 * h)
    });
    let inv_hbar2 = 1.0 / (constants.hbar * constants.hbar);

    let mut previous = d.clone();
    let mut total = d.clone();
    for k in 2..=order {
        let rows: Vec<Vec<Complex64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                // G1(a) = Σ_b w_b K(a,b) P(i,b),  G2(a) = Σ_b w_b K(a,b) P(i,b)*
                let mut g1 = vec![Complex64::new(0.0, 0.0); i + 1];
                let mut g2 = vec![Complex64::new(0.0, 0.0); i + 1];
                for a in 0..=i {
                    for b in 0..a.min(i + 1) {
                        let w = trapezoid_weight(b, i, h);
                        let kab = contraction[(a, b)] * w;
                        g1[a] += kab * previous[(i, b)];
                        g2[a] += kab * previous[(i, b)].conj();
                    }
                }
                (0..n)
                    .map(|j| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for a in 0..=i {
                            let w = trapezoid_weight(a, i, h);
                            acc += w * (d_bar[(a, j)] * g1[a] + d[(a, j)] * g2[a]);
                        }
                        acc * inv_hbar2
                    })
                    .collect()
            })
            .collect();
        let next = Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]);
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        total.zip_mut_with(&next, |t, v| *t += sign * v);
        previous = next;
    }
    Ok(DressedKernel {
        step: h,
        nodes: n,
        order,
        repr: DressedRepr::Tabulated(total),
    })
}

/// The four coefficient time series on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HPZCoefficients {
    pub times: Vec<f64>,
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub xi: Vec<f64>,
    pub upsilon: Vec<f64>,
    /// Analytic constant values for `t > 0` (delta-limit tables). Lookups
    /// return these everywhere, including the right limit at `t = 0`.
    constant: Option<[f64; 4]>,
}

/// Coefficient values at one instant, in the order Γ, Θ, Ξ, Υ.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoefficientSample {
    pub gamma: f64,
    pub theta: f64,
    pub xi: f64,
    pub upsilon: f64,
}

impl HPZCoefficients {
    pub fn new(
        times: Vec<f64>,
        gamma: Vec<f64>,
        theta: Vec<f64>,
        xi: Vec<f64>,
        upsilon: Vec<f64>,
    ) -> Result<Self> {
        let n = times.len();
        if n == 0 || gamma.len() != n || theta.len() != n || xi.len() != n || upsilon.len() != n {
            return Err(Error::GridMismatch(
                "coefficient series lengths differ".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::GridMismatch(
                "coefficient times must increase strictly".into(),
            ));
        }
        Ok(Self {
            times,
            gamma,
            theta,
            xi,
            upsilon,
            constant: None,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn is_delta_limit(&self) -> bool {
        self.constant.is_some()
    }

    pub fn sample(&self, k: usize) -> CoefficientSample {
        CoefficientSample {
            gamma: self.gamma[k],
            theta: self.theta[k],
            xi: self.xi[k],
            upsilon: self.upsilon[k],
        }
    }

    /// Index of a time that lies on the table grid.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * (1.0 + t.abs());
        let idx = self.times.partition_point(|&x| x < t - tol);
        if idx < self.times.len() && (self.times[idx] - t).abs() <= tol {
            Ok(idx)
        } else {
            Err(Error::GridMismatch(format!(
                "t = {t} is not a node of the coefficient grid"
            )))
        }
    }

    /// Coefficients at arbitrary `t` inside the table span, linearly
    /// interpolated between nodes.
    pub fn at(&self, t: f64) -> Result<CoefficientSample> {
        let (start, end) = (self.start(), self.end());
        let slack = 1e-9 * (1.0 + end.abs());
        if t < start - slack || t > end + slack {
            return Err(Error::TableExhausted { t, start, end });
        }
        if let Some([gamma, theta, xi, upsilon]) = self.constant {
            return Ok(CoefficientSample {
                gamma,
                theta,
                xi,
                upsilon,
            });
        }
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            return Ok(self.sample(0));
        }
        if idx >= self.len() {
            return Ok(self.sample(self.len() - 1));
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let f = (t - t0) / (t1 - t0);
        let lerp = |v: &[f64]| v[idx - 1] * (1.0 - f) + v[idx] * f;
        Ok(CoefficientSample {
            gamma: lerp(&self.gamma),
            theta: lerp(&self.theta),
            xi: lerp(&self.xi),
            upsilon: lerp(&self.upsilon),
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header: Option<&str>) -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(out, "# {h}")?;
        }
        writeln!(out, "t,Gamma,Theta,Xi,Upsilon")?;
        for k in 0..self.len() {
            writeln!(
                out,
                "{},{:.15e},{:.15e},{:.15e},{:.15e}",
                self.times[k], self.gamma[k], self.theta[k], self.xi[k], self.upsilon[k]
            )?;
        }
        Ok(())
    }

    /// Reads the format written by [`HPZCoefficients::write_csv`]. Lines
    /// starting with `#` are skipped.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut cols: [Vec<f64>; 5] = Default::default();
        let mut saw_header = false;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if line != "t,Gamma,Theta,Xi,Upsilon" {
                    return Err(Error::Csv(format!(
                        "unexpected coefficient header `{line}`"
                    )));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Csv(format!(
                    "line {}: expected 5 fields",
                    lineno + 1
                )));
            }
            for (c, f) in cols.iter_mut().zip(fields) {
                c.push(
                    f.trim().parse().map_err(|_| {
                        Error::Csv(format!("line {}: bad number `{f}`", lineno + 1))
                    })?,
                );
            }
        }
        let [t, g, th, x, u] = cols;
        Self::new(t, g, th, x, u)
    }
}

/// Options for [`compute_coefficients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientOptions {
    /// Multiplies Υ. `+1` reproduces the printed formulas; `−1` flips the
    /// sign convention of the Υ integral.
    pub upsilon_sign: f64,
}

impl Default for CoefficientOptions {
    fn default() -> Self {
        Self { upsilon_sign: 1.0 }
    }
}

/// Evaluates Γ, Θ, Ξ, Υ by the trapezoid rule over `s ∈ [0, t]` for every
/// `t` in `t_grid`. Every entry of `t_grid` must be a node of the dressed
/// kernel grid.
pub fn compute_coefficients(
    dressed: &DressedKernel,
    kernels: &OscillatorKernels,
    t_grid: &[f64],
    options: CoefficientOptions,
) -> Result<HPZCoefficients> {
    let h = dressed.step();
    let indices: Vec<usize> = t_grid
        .iter()
        .map(|&t| {
            let x = t / h;
            let i = x.round();
            if t < 0.0 || (x - i).abs() > 1e-6 || i as usize >= dressed.nodes() {
                Err(Error::GridMismatch(format!(
                    "t = {t} is not a node of the kernel grid (step {h}, {} nodes)",
                    dressed.nodes()
                )))
            } else {
                Ok(i as usize)
            }
        })
        .collect::<Result<_>>()?;

    let rows: Vec<[f64; 4]> = indices
        .par_iter()
        .map(|&i| {
            let t = i as f64 * h;
            let mut acc = [0.0; 4];
            for j in 0..=i {
                let w = trapezoid_weight(j, i, h);
                if w == 0.0 {
                    continue;
                }
                let lag = t - j as f64 * h;
                let dv = dressed.value(i, j);
                let (c, ct) = (kernels.c(lag), kernels.c_tilde(lag));
                acc[0] -= w * dv.re * c;
                acc[1] += w * dv.re * ct;
                acc[2] -= w * dv.im * c;
                acc[3] += w * dv.im * ct;
            }
            acc[3] *= options.upsilon_sign;
            acc
        })
        .collect();

    HPZCoefficients::new(
        t_grid.to_vec(),
        rows.iter().map(|r| r[0]).collect(),
        rows.iter().map(|r| r[1]).collect(),
        rows.iter().map(|r| r[2]).collect(),
        rows.iter().map(|r| r[3]).collect(),
    )
}

/// Coefficients of a delta-correlated bath `D_re = c δ(t−s)`, `D_im = 0`,
/// with the endpoint convention `∫₀ᵗ δ(t−s) f(s) ds = f(t)/2`:
/// `Γ = −c/2` and `Θ = Ξ = Υ = 0` for `t > 0`.
pub fn delta_limit_coefficients(strength: f64, t_grid: &[f64]) -> Result<HPZCoefficients> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(invalid("strength", "must be non-negative"));
    }
    let gamma = -0.5 * strength;
    let g: Vec<f64> = t_grid
        .iter()
        .map(|&t| if t > 0.0 { gamma } else { 0.0 })
        .collect();
    let zeros = vec![0.0; t_grid.len()];
    let mut c = HPZCoefficients::new(t_grid.to_vec(), g, zeros.clone(), zeros.clone(), zeros)?;
    c.constant = Some([gamma, 0.0, 0.0, 0.0]);
    Ok(c)
}

/// Uniform grid `0, h, 2h, …, (n−1)h`.
pub fn uniform_grid(step: f64, nodes: usize) -> Vec<f64> {
    (0..nodes).map(|i| i as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn units() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn oscillator_kernel_limits() {
        let k = OscillatorKernels::new(2.0).unwrap();
        assert_eq!(k.c(0.0), 1.0);
        assert_eq!(k.c_tilde(0.0), 0.0);
        assert_relative_eq!(k.c_tilde(0.3), (0.6f64).sin() / 2.0, max_relative = 1e-15);
        let free = OscillatorKernels::new(0.0).unwrap();
        assert_eq!(free.c(5.0), 1.0);
        assert_eq!(free.c_tilde(5.0), 5.0);
        assert!(OscillatorKernels::new(-1.0).is_err());
    }

    /// Heisenberg evolution of (q, p) through the symplectic matrix
    /// M(τ) = [[cos ωτ, sin ωτ/(mω)], [−mω sin ωτ, cos ωτ]]; with
    /// [q, p] = iħ the commutator [q(t), q(s)] is iħ(M₁₁(t)M₁₂(s) − M₁₂(t)M₁₁(s)).
    fn symplectic_commutator(m: f64, w: f64, hbar: f64, t: f64, s: f64) -> Complex64 {
        let row = |tau: f64| ((w * tau).cos(), (w * tau).sin() / (m * w));
        let (a1, b1) = row(t);
        let (a2, b2) = row(s);
        Complex64::new(0.0, hbar * (a1 * b2 - b1 * a2))
    }

    #[test]
    fn contraction_examples() {
        let k = OscillatorKernels::new(1.0).unwrap();
        let u = units();
        assert_eq!(
            commutator_contraction(&k, 1.0, &u, 0.5, 1.0),
            Complex64::new(0.0, 0.0)
        );
        assert_eq!(
            commutator_contraction(&k, 1.0, &u, 1.0, 1.0),
            Complex64::new(0.0, 0.0)
        );
        assert!(commutator_contraction(&k, 1.0, &u, 0.3 + PI, 0.3).norm() < 1e-15);
        let v = commutator_contraction(&k, 1.0, &u, 0.3 + 0.5 * PI, 0.3);
        assert_relative_eq!(v.im, -1.0, max_relative = 1e-14);
        let oracle = symplectic_commutator(1.0, 1.0, 1.0, 0.3 + 0.5 * PI, 0.3);
        assert_relative_eq!(v.im, oracle.im, max_relative = 1e-12);
    }

    #[test]
    fn contraction_matches_symplectic_oracle() {
        let k = OscillatorKernels::new(1.7).unwrap();
        let u = PhysicalConstants::new(0.5, 1.0).unwrap();
        for &(t, s) in &[(2.0, 0.1), (0.9, 0.2), (5.0, 4.99)] {
            let v = commutator_contraction(&k, 2.5, &u, t, s);
            let o = symplectic_commutator(2.5, 1.7, 0.5, t, s);
            assert!((v - o).norm() < 1e-12);
        }
    }

    fn smooth_table(step: f64, n: usize, scale: f64) -> KernelTable {
        KernelTable::from_fn(step, n, |t| {
            Complex64::new(
                scale * (-t * t).exp() * (3.0 * t).cos(),
                -scale * t * (-t * t).exp(),
            )
        })
        .unwrap()
    }

    #[test]
    fn order_one_is_the_bare_kernel() {
        let table = smooth_table(0.1, 20, 1.0);
        let k = OscillatorKernels::new(1.0).unwrap();
        let dk =
            dressed_kernel(&table, &k, 1.0, &units(), DressedKernelOptions::default()).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(dk.value(i, j), table.at_lag(i as isize - j as isize));
            }
        }
        // Hermitian symmetry of the weak-coupling kernel
        assert!((dk.value(3, 7) - dk.value(7, 3).conj()).norm() < 1e-15);
    }

    #[test]
    fn high_order_needs_override() {
        let table = smooth_table(0.1, 8, 1.0);
        let k = OscillatorKernels::new(1.0).unwrap();
        let opts = DressedKernelOptions {
            order: 4,
            ..Default::default()
        };
        assert!(matches!(
            dressed_kernel(&table, &k, 1.0, &units(), opts),
            Err(Error::OrderTooHigh(4))
        ));
        let opts = DressedKernelOptions {
            order: 4,
            allow_high_order: true,
            ..Default::default()
        };
        assert!(dressed_kernel(&table, &k, 1.0, &units(), opts).is_ok());
    }

    #[test]
    fn zero_bath_gives_zero_dressed_kernel() {
        let table = smooth_table(0.1, 12, 0.0);
        let k = OscillatorKernels::new(1.0).unwrap();
        let opts = DressedKernelOptions {
            order: 3,
            ..Default::default()
        };
        let dk = dressed_kernel(&table, &k, 1.0, &units(), opts).unwrap();
        assert_eq!(dk.sup_norm(), 0.0);
    }

    #[test]
    fn second_order_correction_is_quadratic_in_coupling() {
        let k = OscillatorKernels::new(1.0).unwrap();
        let opts = DressedKernelOptions {
            order: 2,
            ..Default::default()
        };
        let ratio = |lambda: f64| {
            let table = smooth_table(0.1, 16, lambda * lambda);
            let bare = DressedKernel::weak_coupling(&table);
            let dk = dressed_kernel(&table, &k, 1.0, &units(), opts).unwrap();
            dk.sup_distance(&bare) / bare.sup_norm()
        };
        let r = ratio(1.0) / ratio(0.5);
        assert_relative_eq!(r, 4.0, max_relative = 1e-9);
    }

    #[test]
    fn coefficients_vanish_at_origin() {
        let table = smooth_table(0.05, 30, 1.0);
        let k = OscillatorKernels::new(1.0).unwrap();
        let dk = DressedKernel::weak_coupling(&table);
        let c = compute_coefficients(&dk, &k, &uniform_grid(0.05, 30), Default::default()).unwrap();
        assert_eq!(c.sample(0), CoefficientSample::default());
    }

    #[test]
    fn coefficients_against_independent_quadrature() {
        // D = e^{−τ²}(cos 3τ − iτ): integrate with adaptive GK as oracle
        let f_re = |t: f64| (-t * t).exp() * (3.0 * t).cos();
        let f_im = |t: f64| -t * (-t * t).exp();
        let h = 0.002;
        let n = 1001;
        let table = KernelTable::from_fn(h, n, |t| Complex64::new(f_re(t), f_im(t))).unwrap();
        let k = OscillatorKernels::new(1.3).unwrap();
        let dk = DressedKernel::weak_coupling(&table);
        let c = compute_coefficients(&dk, &k, &[0.5, 1.0, 2.0], Default::default()).unwrap();
        // trapezoid error is O(h²) ≈ 1e−5 relative here
        for (idx, &t) in [0.5, 1.0, 2.0].iter().enumerate() {
            let q = |g: &dyn Fn(f64) -> f64| {
                crate::quadrature::integrate(g, 0.0, t, 1e-12, 0.0)
                    .unwrap()
                    .value
            };
            let gamma = -q(&|u| f_re(u) * k.c(u));
            let theta = q(&|u| f_re(u) * k.c_tilde(u));
            let xi = -q(&|u| f_im(u) * k.c(u));
            let ups = q(&|u| f_im(u) * k.c_tilde(u));
            assert_relative_eq!(c.gamma[idx], gamma, max_relative = 1e-4);
            assert_relative_eq!(c.theta[idx], theta, max_relative = 1e-4);
            assert_relative_eq!(c.xi[idx], xi, max_relative = 1e-4);
            assert_relative_eq!(c.upsilon[idx], ups, max_relative = 1e-4);
        }
    }

    #[test]
    fn off_grid_time_rejected() {
        let table = smooth_table(0.1, 10, 1.0);
        let k = OscillatorKernels::new(1.0).unwrap();
        let dk = DressedKernel::weak_coupling(&table);
        assert!(matches!(
            compute_coefficients(&dk, &k, &[0.15], Default::default()),
            Err(Error::GridMismatch(_))
        ));
        assert!(compute_coefficients(&dk, &k, &[2.0], Default::default()).is_err());
    }

    #[test]
    fn delta_limit_values() {
        let grid = uniform_grid(0.1, 11);
        let c = delta_limit_coefficients(4.0, &grid).unwrap();
        assert_eq!(c.gamma[0], 0.0);
        assert!(c.gamma[1..].iter().all(|&g| g == -2.0));
        assert!(c
            .theta
            .iter()
            .chain(&c.xi)
            .chain(&c.upsilon)
            .all(|&v| v == 0.0));
        let z = delta_limit_coefficients(0.0, &grid).unwrap();
        assert!(z.gamma.iter().all(|&g| g == 0.0));
        assert!(delta_limit_coefficients(-1.0, &grid).is_err());
        assert_eq!(c.at(0.0).unwrap().gamma, -2.0);
    }

    #[test]
    fn interpolation_and_exhaustion() {
        let c = HPZCoefficients::new(
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 3.0],
            vec![0.0; 3],
            vec![0.0; 3],
            vec![0.0, -1.0, -1.0],
        )
        .unwrap();
        assert_relative_eq!(c.at(1.5).unwrap().gamma, 2.0);
        assert_relative_eq!(c.at(0.25).unwrap().upsilon, -0.25);
        assert!(matches!(c.at(2.5), Err(Error::TableExhausted { .. })));
        assert_eq!(c.node_index(1.0).unwrap(), 1);
        assert!(c.node_index(1.3).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = HPZCoefficients::new(
            vec![0.0, 0.5],
            vec![0.0, -1.25],
            vec![0.0, 0.125],
            vec![0.0, 3.0e-9],
            vec![0.0, -0.7],
        )
        .unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf, Some("test")).unwrap();
        let back = HPZCoefficients::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }
}
