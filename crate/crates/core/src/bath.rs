//! Ohmic spectral densities and the thermal bath correlation function
//! `D(τ) = D_re(τ) + i D_im(τ)`.
//!
//! ```text
//! D_re(τ) =  ħ ∫₀^∞ dω J(ω) coth(ħω / 2k_BT) cos ωτ
//! D_im(τ) = −ħ ∫₀^∞ dω J(ω) sin ωτ
//! J(ω)    = (2mγ/π) ω f(ω/Ω)
//! ```

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate, wynn_epsilon};

/// Below this value of ħω/2k_BT the factor `x coth x` is replaced by its
/// series `1 + x²/3`.
const COTH_SERIES_THRESHOLD: f64 = 1e-4;

/// Maximum number of half-period panels summed for soft cutoffs.
const MAX_PANELS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub k_b: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            k_b: 1.0,
        }
    }
}

impl PhysicalConstants {
    pub fn new(hbar: f64, k_b: f64) -> Result<Self> {
        let c = Self { hbar, k_b };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(invalid("hbar", "must be strictly positive"));
        }
        if !(self.k_b > 0.0 && self.k_b.is_finite()) {
            return Err(invalid("k_b", "must be strictly positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CutoffKind {
    #[default]
    Sharp,
    Exponential,
    Drude,
}

impl CutoffKind {
    /// Multiplicative cutoff factor as a function of `x = ω/Ω`.
    pub fn factor(self, x: f64) -> f64 {
        match self {
            CutoffKind::Sharp => {
                if x < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            CutoffKind::Exponential => (-x).exp(),
            CutoffKind::Drude => 1.0 / (1.0 + x * x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub mass: f64,
    pub gamma: f64,
    pub cutoff: CutoffKind,
    pub omega_cutoff: f64,
}

impl SpectralDensity {
    pub fn new(mass: f64, gamma: f64, cutoff: CutoffKind, omega_cutoff: f64) -> Result<Self> {
        let s = Self {
            mass,
            gamma,
            cutoff,
            omega_cutoff,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(invalid("mass", "must be strictly positive"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", "must be non-negative"));
        }
        if !(self.omega_cutoff > 0.0 && self.omega_cutoff.is_finite()) {
            return Err(invalid("omega_cutoff", "must be strictly positive"));
        }
        Ok(())
    }

    /// Ohmic prefactor `2mγ/π`.
    pub fn ohmic_prefactor(&self) -> f64 {
        2.0 * self.mass * self.gamma / PI
    }

    /// `J(ω)`; negative frequencies are rejected.
    pub fn eval(&self, omega: f64) -> Result<f64> {
        if omega < 0.0 || omega.is_nan() {
            return Err(invalid(
                "omega",
                format!("spectral density needs ω ≥ 0, got {omega}"),
            ));
        }
        Ok(self.eval_unchecked(omega))
    }

    fn eval_unchecked(&self, omega: f64) -> f64 {
        self.ohmic_prefactor() * omega * self.cutoff.factor(omega / self.omega_cutoff)
    }

    /// `∫₀^∞ J(ω)/ω dω`, the weight of the static frequency renormalization.
    pub fn inverse_moment(&self) -> f64 {
        let w = self.omega_cutoff;
        let shape = match self.cutoff {
            CutoffKind::Sharp => 1.0,
            CutoffKind::Exponential => 1.0,
            CutoffKind::Drude => 0.5 * PI,
        };
        self.ohmic_prefactor() * w * shape
    }
}

/// Free-function form of [`SpectralDensity::eval`].
pub fn eval_spectral_density(spec: &SpectralDensity, omega: f64) -> Result<f64> {
    spec.eval(omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalBathSpec {
    pub spectral: SpectralDensity,
    pub temperature: f64,
    pub constants: PhysicalConstants,
}

impl ThermalBathSpec {
    pub fn new(
        spectral: SpectralDensity,
        temperature: f64,
        constants: PhysicalConstants,
    ) -> Result<Self> {
        let s = Self {
            spectral,
            temperature,
            constants,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        self.constants.validate()?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid("temperature", "must be strictly positive"));
        }
        Ok(())
    }

    pub fn thermal_energy(&self) -> f64 {
        self.constants.k_b * self.temperature
    }

    /// `ħ J(ω) coth(ħω/2k_BT)`, regular at ω = 0.
    fn symmetrized_density(&self, omega: f64) -> f64 {
        let kt = self.thermal_energy();
        let x = self.constants.hbar * omega / (2.0 * kt);
        let x_coth_x = if x < COTH_SERIES_THRESHOLD {
            1.0 + x * x / 3.0
        } else {
            x / x.tanh()
        };
        // ħ ω coth(x) = 2k_BT · x coth x
        self.spectral.ohmic_prefactor()
            * self
                .spectral
                .cutoff
                .factor(omega / self.spectral.omega_cutoff)
            * 2.0
            * kt
            * x_coth_x
    }

    /// `ħ J(ω)`.
    fn response_density(&self, omega: f64) -> f64 {
        self.constants.hbar * self.spectral.eval_unchecked(omega)
    }
}

/// `4mγk_BT`: total mass of the delta-function limit of `D_re`.
pub fn delta_limit_strength(spec: &ThermalBathSpec) -> f64 {
    4.0 * spec.spectral.mass * spec.spectral.gamma * spec.thermal_energy()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Trig {
    Cos,
    Sin,
}

impl Trig {
    fn eval(self, x: f64) -> f64 {
        match self {
            Trig::Cos => x.cos(),
            Trig::Sin => x.sin(),
        }
    }

    /// Location of the k-th positive zero of the factor as a function of ωτ.
    fn zero(self, k: usize) -> f64 {
        match self {
            Trig::Cos => (k as f64 + 0.5) * PI,
            Trig::Sin => (k as f64 + 1.0) * PI,
        }
    }
}

/// `∫₀^upper g(ω) trig(ωτ) dω` with panels cut at the zeros of `trig(ωτ)`,
/// so that each panel integrand keeps one sign. For `upper = None` the
/// panels are summed until the tail is negligible, with Wynn extrapolation
/// for slowly decaying alternating tails.
fn fourier_integral<G: Fn(f64) -> f64>(
    g: G,
    trig: Trig,
    tau: f64,
    upper: Option<f64>,
    scale: f64,
    rel_tol: f64,
) -> Result<(f64, f64)> {
    let tau = tau.abs();
    let panel_tol = 0.1 * rel_tol;
    if tau == 0.0 {
        if trig == Trig::Sin {
            return Ok((0.0, 0.0));
        }
        return match upper {
            Some(b) => {
                let r = integrate(&g, 0.0, b, panel_tol, 0.0)?;
                Ok((r.value, r.error))
            }
            None => {
                let mut sum = 0.0;
                let mut err = 0.0;
                let mut lo = 0.0;
                for k in 0..MAX_PANELS {
                    let hi = lo + scale;
                    let r = integrate(&g, lo, hi, panel_tol, 0.0)?;
                    sum += r.value;
                    err += r.error;
                    lo = hi;
                    if k > 4 && r.abs_value <= 1e-3 * rel_tol * sum.abs() {
                        return Ok((sum, err + r.abs_value));
                    }
                    // slow algebraic tails (Drude) never meet the criterion
                    if k > 2000 {
                        return Err(Error::Divergent(
                            "D_re(0) is not finite for this cutoff".into(),
                        ));
                    }
                }
                Err(Error::QuadratureNotConverged {
                    achieved: f64::INFINITY,
                    requested: rel_tol,
                })
            }
        };
    }

    let f = |w: f64| g(w) * trig.eval(w * tau);
    let mut sum = 0.0;
    let mut err = 0.0;
    let mut abs_sum = 0.0;
    let mut lo = 0.0;
    let mut partial_sums = Vec::new();
    for k in 0..MAX_PANELS {
        let mut hi = trig.zero(k) / tau;
        let last = match upper {
            Some(b) if hi >= b => {
                hi = b;
                true
            }
            _ => false,
        };
        let r = integrate(f, lo, hi, panel_tol, 0.0)?;
        sum += r.value;
        err += r.error;
        abs_sum += r.abs_value;
        lo = hi;
        if last {
            let _ = abs_sum;
            return Ok((sum, err));
        }
        if upper.is_none() {
            partial_sums.push(sum);
            if r.abs_value <= 1e-3 * rel_tol * sum.abs().max(f64::MIN_POSITIVE) && hi > scale {
                return Ok((sum, err + r.abs_value));
            }
            // algebraic tails: extrapolate once well past the cutoff
            if hi > 4.0 * scale && partial_sums.len() >= 24 && k % 8 == 0 {
                let window = &partial_sums[partial_sums.len() - 24..];
                let (est, est_err) = wynn_epsilon(window);
                if est_err <= rel_tol * est.abs() {
                    return Ok((est, err + est_err));
                }
            }
        }
    }
    Err(Error::QuadratureNotConverged {
        achieved: err,
        requested: rel_tol * sum.abs(),
    })
}

/// Direct quadrature of `D(τ)`, without any tabulation.
pub fn correlation_by_quadrature(
    spec: &ThermalBathSpec,
    tau: f64,
    rel_tol: f64,
) -> Result<Complex64> {
    let omega_c = spec.spectral.omega_cutoff;
    let upper = match spec.spectral.cutoff {
        CutoffKind::Sharp => Some(omega_c),
        _ => None,
    };
    if spec.spectral.gamma == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let (re, _) = fourier_integral(
        |w| spec.symmetrized_density(w),
        Trig::Cos,
        tau,
        upper,
        omega_c,
        rel_tol,
    )?;
    let im = match spec.spectral.cutoff {
        // ∫₀^∞ ω sin(ωτ) / (1 + ω²/Ω²) dω = (π/2) Ω² e^{−Ω|τ|} sgn τ
        CutoffKind::Drude => {
            -spec.constants.hbar
                * spec.spectral.ohmic_prefactor()
                * 0.5
                * PI
                * omega_c
                * omega_c
                * (-omega_c * tau.abs()).exp()
                * if tau == 0.0 { 0.0 } else { tau.signum() }
        }
        _ => {
            let (s, _) = fourier_integral(
                |w| spec.response_density(w),
                Trig::Sin,
                tau,
                upper,
                omega_c,
                rel_tol,
            )?;
            -s * tau.signum()
        }
    };
    Ok(Complex64::new(re, im))
}

/// High-temperature (`coth x → 1/x`) approximant of `D_re` for a sharp
/// cutoff: `(4mγk_BT/π) sin(Ωτ)/τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighTemperatureValue {
    pub value: f64,
    /// `ħΩ/k_BT`; the approximant is trusted only well below 1.
    pub regime: f64,
    pub valid: bool,
}

pub const HIGH_TEMPERATURE_VALIDITY: f64 = 0.1;

pub fn high_temperature_closed_form(spec: &ThermalBathSpec, tau: f64) -> HighTemperatureValue {
    let s = &spec.spectral;
    let omega_c = s.omega_cutoff;
    let amplitude = 4.0 * s.mass * s.gamma * spec.thermal_energy() / PI;
    let x = omega_c * tau;
    let sinc_part = if x.abs() < 1e-8 {
        omega_c * (1.0 - x * x / 6.0)
    } else {
        x.sin() / tau
    };
    let regime = spec.constants.hbar * omega_c / spec.thermal_energy();
    HighTemperatureValue {
        value: amplitude * sinc_part,
        regime,
        valid: regime <= HIGH_TEMPERATURE_VALIDITY,
    }
}

/// Sharp-cutoff closed form of `D_im`:
/// `−(2mγħ/π) (sin Ωτ − Ωτ cos Ωτ)/τ²`.
pub fn sharp_cutoff_imaginary_closed_form(spec: &ThermalBathSpec, tau: f64) -> f64 {
    let s = &spec.spectral;
    let omega_c = s.omega_cutoff;
    let x = omega_c * tau;
    let core = if x.abs() < 1e-3 {
        // (sin x − x cos x)/τ² = Ω² x/3 (1 − x²/10 + ...)
        omega_c * omega_c * x / 3.0 * (1.0 - x * x / 10.0 + x.powi(4) / 280.0)
    } else {
        (x.sin() - x * x.cos()) / (tau * tau)
    };
    -s.ohmic_prefactor() * spec.constants.hbar * core
}

/// A stationary kernel `D(τ)` tabulated on the uniform grid `τ_i = i·step`,
/// `i = 0..len`. Negative arguments are served from the symmetries
/// `D_re(−τ) = D_re(τ)`, `D_im(−τ) = −D_im(τ)`; off-grid arguments are
/// interpolated linearly, with error bounded by `step²/8 · max|D''|`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    step: f64,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl KernelTable {
    pub fn new(step: f64, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(invalid("step", "grid step must be positive"));
        }
        if re.len() != im.len() || re.is_empty() {
            return Err(Error::GridMismatch(format!(
                "real/imaginary tables have lengths {} and {}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self { step, re, im })
    }

    /// Tabulates an arbitrary kernel `f(τ)` on `len` nodes.
    pub fn from_fn<F: Fn(f64) -> Complex64>(step: f64, len: usize, f: F) -> Result<Self> {
        let (re, im) = (0..len)
            .map(|i| {
                let v = f(i as f64 * step);
                (v.re, v.im)
            })
            .unzip();
        Self::new(step, re, im)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn max_tau(&self) -> f64 {
        (self.len() - 1) as f64 * self.step
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    /// Exact node value at lag `i` (which may be negative).
    pub fn at_lag(&self, lag: isize) -> Complex64 {
        let i = lag.unsigned_abs();
        let sign = if lag < 0 { -1.0 } else { 1.0 };
        Complex64::new(self.re[i], sign * self.im[i])
    }

    /// Interpolated value at arbitrary τ inside `[−max_tau, max_tau]`.
    pub fn lookup(&self, tau: f64) -> Result<Complex64> {
        let a = tau.abs();
        if a > self.max_tau() * (1.0 + 1e-12) {
            return Err(Error::TableExhausted {
                t: tau,
                start: -self.max_tau(),
                end: self.max_tau(),
            });
        }
        let x = a / self.step;
        let i = (x.floor() as usize).min(self.len() - 1);
        let frac = x - i as f64;
        let (re, im) = if i + 1 < self.len() {
            (
                self.re[i] * (1.0 - frac) + self.re[i + 1] * frac,
                self.im[i] * (1.0 - frac) + self.im[i + 1] * frac,
            )
        } else {
            (self.re[i], self.im[i])
        };
        Ok(Complex64::new(re, tau.signum() * im))
    }

    /// Returns a copy with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            step: self.step,
            re: self.re.iter().map(|v| v * factor).collect(),
            im: self.im.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header: Option<&str>) -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(out, "# {h}")?;
        }
        writeln!(out, "tau,D_re,D_im")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{:.12e},{:.12e}",
                i as f64 * self.step,
                self.re[i],
                self.im[i]
            )?;
        }
        Ok(())
    }
}

/// The thermal correlation function of an Ohmic bath, tabulated once at
/// construction and immutable afterwards.
#[derive(Debug, Clone)]
pub struct CorrelationKernel {
    spec: ThermalBathSpec,
    table: KernelTable,
    quad_tol: f64,
}

pub const DEFAULT_QUAD_TOL: f64 = 1e-8;

impl CorrelationKernel {
    /// Tabulates `D` on `τ_i = i·step`, `i = 0..len`.
    pub fn new(spec: ThermalBathSpec, step: f64, len: usize, quad_tol: f64) -> Result<Self> {
        spec.validate()?;
        if !(quad_tol > 0.0 && quad_tol < 1.0) {
            return Err(invalid("quad_tol", "must lie in (0, 1)"));
        }
        if len == 0 {
            return Err(invalid("len", "grid needs at least one node"));
        }
        let values: Vec<Complex64> = (0..len)
            .into_par_iter()
            .map(|i| correlation_by_quadrature(&spec, i as f64 * step, quad_tol))
            .collect::<Result<_>>()?;
        let table = KernelTable::new(
            step,
            values.iter().map(|v| v.re).collect(),
            values.iter().map(|v| v.im).collect(),
        )?;
        Ok(Self {
            spec,
            table,
            quad_tol,
        })
    }

    pub fn spec(&self) -> &ThermalBathSpec {
        &self.spec
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    /// `D(τ)` by direct quadrature at the kernel tolerance.
    pub fn eval(&self, tau: f64) -> Result<Complex64> {
        correlation_by_quadrature(&self.spec, tau, self.quad_tol)
    }

    /// `D(τ)` from the tabulated grid.
    pub fn lookup(&self, tau: f64) -> Result<Complex64> {
        self.table.lookup(tau)
    }

    pub fn high_temperature(&self, tau: f64) -> HighTemperatureValue {
        high_temperature_closed_form(&self.spec, tau)
    }
}

/// Free-function form of [`CorrelationKernel::eval`].
pub fn eval_correlation(kernel: &CorrelationKernel, tau: f64) -> Result<Complex64> {
    kernel.eval(tau)
}
