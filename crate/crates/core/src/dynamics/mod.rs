//! Gaussian-state dynamics under the CL, corrected-CL, Joos-Zeh, HPZ and
//! (q − μp)-coupled master equations.
//!
//! Every variant is reduced to one quadratic generator
//!
//! ```text
//! dρ/dt = −(i/ħ)[H, ρ] − d_qq [q,[q,ρ]] − d_pp [p,[p,ρ]] − d_qp [q,[p,ρ]] − i f [q,{p,ρ}]
//! H     = h_pp p² + h_qq q² + h_qp {q,p}
//! ```
//!
//! whose first and second moments obey the closed linear system
//! `ẋ = A x`, `σ̇ = Aσ + σAᵀ + N` with
//! `A = [[2h_qp, 2h_pp], [−2h_qq, −2h_qp − 2ħf]]` and
//! `N = ħ² [[2d_pp, −d_qp], [−d_qp, 2d_qq]]`.
//! [`fock`] propagates the same generator on a truncated number basis and
//! is the regression oracle for this map.

pub mod fock;

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bath::PhysicalConstants;
use crate::coefficients::HPZCoefficients;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianMomentState {
    pub mean_q: f64,
    pub mean_p: f64,
    pub sigma_qq: f64,
    pub sigma_pp: f64,
    pub sigma_qp: f64,
}

impl GaussianMomentState {
    fn to_array(self) -> [f64; 5] {
        [
            self.mean_q,
            self.mean_p,
            self.sigma_qq,
            self.sigma_pp,
            self.sigma_qp,
        ]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            mean_q: a[0],
            mean_p: a[1],
            sigma_qq: a[2],
            sigma_pp: a[3],
            sigma_qp: a[4],
        }
    }

    /// Ground state of the oscillator `(m, ω)`; for ω = 0 the unit-frequency
    /// minimum-uncertainty packet is used.
    pub fn ground(system: &SystemSpec, constants: &PhysicalConstants) -> Self {
        let w = system.reference_frequency();
        Self {
            mean_q: 0.0,
            mean_p: 0.0,
            sigma_qq: constants.hbar / (2.0 * system.mass * w),
            sigma_pp: constants.hbar * system.mass * w / 2.0,
            sigma_qp: 0.0,
        }
    }

    /// Coherent state displaced to `(q, p)`.
    pub fn coherent(system: &SystemSpec, constants: &PhysicalConstants, q: f64, p: f64) -> Self {
        Self {
            mean_q: q,
            mean_p: p,
            ..Self::ground(system, constants)
        }
    }

    /// Position-squeezed pure state with `σ_qq = e^{−2r} ħ/2mω`.
    pub fn squeezed(system: &SystemSpec, constants: &PhysicalConstants, r: f64) -> Self {
        let g = Self::ground(system, constants);
        Self {
            sigma_qq: g.sigma_qq * (-2.0 * r).exp(),
            sigma_pp: g.sigma_pp * (2.0 * r).exp(),
            ..g
        }
    }

    /// Thermal state of the oscillator at temperature `T` (requires ω > 0).
    pub fn thermal(system: &SystemSpec, constants: &PhysicalConstants, temperature: f64) -> Self {
        let g = Self::ground(system, constants);
        let w = system.reference_frequency();
        let c = 1.0 / (constants.hbar * w / (2.0 * constants.k_b * temperature)).tanh();
        Self {
            sigma_qq: g.sigma_qq * c,
            sigma_pp: g.sigma_pp * c,
            ..g
        }
    }

    /// `⟨H_S⟩` of the oscillator.
    pub fn energy(&self, system: &SystemSpec) -> f64 {
        let m = system.mass;
        let w = system.omega_s;
        (self.sigma_pp + self.mean_p * self.mean_p) / (2.0 * m)
            + 0.5 * m * w * w * (self.sigma_qq + self.mean_q * self.mean_q)
    }

    /// Raw second moments `⟨q²⟩, ⟨p²⟩, ⟨{q,p}/2⟩`.
    pub fn raw_second_moments(&self) -> [f64; 3] {
        [
            self.sigma_qq + self.mean_q * self.mean_q,
            self.sigma_pp + self.mean_p * self.mean_p,
            self.sigma_qp + self.mean_q * self.mean_p,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Robertson–Schrödinger witness `σ_qq σ_pp − σ_qp² − ħ²/4`; negative values
/// flag an unphysical Gaussian state.
pub fn rs_uncertainty(state: &GaussianMomentState, constants: &PhysicalConstants) -> f64 {
    state.sigma_qq * state.sigma_pp
        - state.sigma_qp * state.sigma_qp
        - 0.25 * constants.hbar * constants.hbar
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub mass: f64,
    pub omega_s: f64,
}

impl SystemSpec {
    pub fn new(mass: f64, omega_s: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(invalid("mass", "must be strictly positive"));
        }
        if !(omega_s >= 0.0 && omega_s.is_finite()) {
            return Err(invalid("omega_s", "must be non-negative"));
        }
        Ok(Self { mass, omega_s })
    }

    /// Frequency setting the basis length scale: ω_S, or 1 for a free particle.
    pub fn reference_frequency(&self) -> f64 {
        if self.omega_s > 0.0 {
            self.omega_s
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    /// Caldeira-Leggett: decoherence plus the `[q,{p,ρ}]` friction term.
    CL,
    /// CL plus the `−γ/(8mk_BT)[p,[p,ρ]]` term.
    CCL,
    /// Joos-Zeh: decoherence only.
    JZ,
    /// Exact equation with tabulated Γ, Θ, Ξ, Υ.
    HPZ(Arc<HPZCoefficients>),
    /// Markov limit of the `(q − μp)φ` coupling: JZ with `q → q − μp`.
    QPCoupled { mu: f64 },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::CL => "CL",
            Variant::CCL => "CCL",
            Variant::JZ => "JZ",
            Variant::HPZ(_) => "HPZ",
            Variant::QPCoupled { .. } => "QP",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterEquationSpec {
    pub variant: Variant,
    pub system: SystemSpec,
    pub gamma: f64,
    pub temperature: f64,
    pub constants: PhysicalConstants,
    /// Extra `q²` potential added to `H` in the HPZ variant, e.g. the
    /// counterterm `∫J(ω)/ω dω · q²/…` that cancels the static part of Ξ.
    pub potential_shift: f64,
}

impl MasterEquationSpec {
    pub fn new(
        variant: Variant,
        system: SystemSpec,
        gamma: f64,
        temperature: f64,
        constants: PhysicalConstants,
    ) -> Result<Self> {
        let s = Self {
            variant,
            system,
            gamma,
            temperature,
            constants,
            potential_shift: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        SystemSpec::new(self.system.mass, self.system.omega_s)?;
        match &self.variant {
            Variant::HPZ(c) => {
                if c.is_empty() {
                    return Err(invalid(
                        "coefficients",
                        "HPZ needs a non-empty coefficient table",
                    ));
                }
            }
            _ => {
                if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
                    return Err(invalid("gamma", "must be non-negative"));
                }
                if !(self.temperature > 0.0 && self.temperature.is_finite()) {
                    return Err(invalid("temperature", "must be strictly positive"));
                }
            }
        }
        if let Variant::QPCoupled { mu } = self.variant {
            if !mu.is_finite() {
                return Err(invalid("mu", "must be finite"));
            }
        }
        Ok(())
    }

    /// `2mγk_BT/ħ²`, the decoherence coefficient.
    pub fn decoherence_rate(&self) -> f64 {
        let h = self.constants.hbar;
        2.0 * self.system.mass * self.gamma * self.constants.k_b * self.temperature / (h * h)
    }

    /// Generator coefficients at time `t`.
    pub fn generator(&self, t: f64) -> Result<QuadraticGenerator> {
        let m = self.system.mass;
        let w = self.system.omega_s;
        let h = self.constants.hbar;
        let kt = self.constants.k_b * self.temperature;
        let mut g = QuadraticGenerator {
            h_pp: 0.5 / m,
            h_qq: 0.5 * m * w * w,
            ..Default::default()
        };
        match &self.variant {
            Variant::CL => {
                g.d_qq = self.decoherence_rate();
                g.friction = self.gamma / h;
            }
            Variant::CCL => {
                g.d_qq = self.decoherence_rate();
                g.friction = self.gamma / h;
                g.d_pp = self.gamma / (8.0 * m * kt);
            }
            Variant::JZ => {
                g.d_qq = self.decoherence_rate();
            }
            Variant::QPCoupled { mu } => {
                // −c[q−μp,[q−μp,ρ]] = −c[q,[q,ρ]] + 2cμ[q,[p,ρ]] − cμ²[p,[p,ρ]]
                let c = self.decoherence_rate();
                g.d_qq = c;
                g.d_qp = -2.0 * mu * c;
                g.d_pp = mu * mu * c;
            }
            Variant::HPZ(table) => {
                let k = table.at(t)?;
                let h2 = h * h;
                g.h_qq += self.potential_shift - k.xi / h;
                g.d_qq = -k.gamma / h2;
                g.d_qp = -k.theta / (m * h2);
                g.friction = -k.upsilon / (m * h2);
            }
        }
        Ok(g)
    }
}

/// Coefficients of the quadratic generator described in the module docs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadraticGenerator {
    pub h_pp: f64,
    pub h_qq: f64,
    pub h_qp: f64,
    pub d_qq: f64,
    pub d_pp: f64,
    pub d_qp: f64,
    pub friction: f64,
}

impl QuadraticGenerator {
    /// Drift matrix acting on `(q, p)`.
    pub fn drift(&self, hbar: f64) -> [[f64; 2]; 2] {
        [
            [2.0 * self.h_qp, 2.0 * self.h_pp],
            [
                -2.0 * self.h_qq,
                -2.0 * self.h_qp - 2.0 * hbar * self.friction,
            ],
        ]
    }

    /// Diffusion matrix of the covariance equation.
    pub fn diffusion(&self, hbar: f64) -> [[f64; 2]; 2] {
        let h2 = hbar * hbar;
        [
            [2.0 * h2 * self.d_pp, -h2 * self.d_qp],
            [-h2 * self.d_qp, 2.0 * h2 * self.d_qq],
        ]
    }

    pub fn moment_derivative(&self, s: &GaussianMomentState, hbar: f64) -> GaussianMomentState {
        let a = self.drift(hbar);
        let n = self.diffusion(hbar);
        let (sqq, spp, sqp) = (s.sigma_qq, s.sigma_pp, s.sigma_qp);
        GaussianMomentState {
            mean_q: a[0][0] * s.mean_q + a[0][1] * s.mean_p,
            mean_p: a[1][0] * s.mean_q + a[1][1] * s.mean_p,
            sigma_qq: 2.0 * (a[0][0] * sqq + a[0][1] * sqp) + n[0][0],
            sigma_pp: 2.0 * (a[1][0] * sqp + a[1][1] * spp) + n[1][1],
            sigma_qp: a[0][0] * sqp + a[0][1] * spp + a[1][0] * sqq + a[1][1] * sqp + n[0][1],
        }
    }
}

/// `d/dt` of the five moments under `spec` at time `t`.
pub fn moment_rhs(
    spec: &MasterEquationSpec,
    state: &GaussianMomentState,
    t: f64,
) -> Result<GaussianMomentState> {
    Ok(spec
        .generator(t)?
        .moment_derivative(state, spec.constants.hbar))
}

/// A recorded moment trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<GaussianMomentState>,
    pub hbar: f64,
}

impl MomentTrajectory {
    pub fn witness(&self) -> Vec<f64> {
        let c = PhysicalConstants {
            hbar: self.hbar,
            k_b: 1.0,
        };
        self.states.iter().map(|s| rs_uncertainty(s, &c)).collect()
    }

    /// First recorded time at which the witness drops below `−tol`.
    pub fn first_violation(&self, tol: f64) -> Option<f64> {
        self.witness()
            .iter()
            .zip(&self.times)
            .find(|(w, _)| **w < -tol)
            .map(|(_, t)| *t)
    }

    pub fn last(&self) -> &GaussianMomentState {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub const CSV_COLUMNS: [&'static str; 7] = [
        "t",
        "mean_q",
        "mean_p",
        "s_qq",
        "s_pp",
        "s_qp",
        "rs_witness",
    ];

    pub fn write_csv<W: Write>(&self, mut out: W, header: Option<&str>) -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(out, "# {h}")?;
        }
        writeln!(out, "{}", Self::CSV_COLUMNS.join(","))?;
        for ((t, s), w) in self.times.iter().zip(&self.states).zip(self.witness()) {
            writeln!(
                out,
                "{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}",
                t, s.mean_q, s.mean_p, s.sigma_qq, s.sigma_pp, s.sigma_qp, w
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, hbar: f64) -> Result<Self> {
        let table = crate::io::read_table(input)?;
        let col = |name: &str| table.column(name).map(|c| c.to_vec());
        let (t, q, p, sqq, spp, sqp) = (
            col("t")?,
            col("mean_q")?,
            col("mean_p")?,
            col("s_qq")?,
            col("s_pp")?,
            col("s_qp")?,
        );
        let states = (0..t.len())
            .map(|k| GaussianMomentState {
                mean_q: q[k],
                mean_p: p[k],
                sigma_qq: sqq[k],
                sigma_pp: spp[k],
                sigma_qp: sqp[k],
            })
            .collect();
        Ok(Self {
            times: t,
            states,
            hbar,
        })
    }
}

fn rk4_step(spec: &MasterEquationSpec, x: [f64; 5], t: f64, dt: f64) -> Result<[f64; 5]> {
    let f = |x: [f64; 5], t: f64| -> Result<[f64; 5]> {
        Ok(moment_rhs(spec, &GaussianMomentState::from_array(x), t)?.to_array())
    };
    let add = |x: [f64; 5], k: [f64; 5], c: f64| std::array::from_fn(|i| x[i] + c * k[i]);
    let k1 = f(x, t)?;
    let k2 = f(add(x, k1, 0.5 * dt), t + 0.5 * dt)?;
    let k3 = f(add(x, k2, 0.5 * dt), t + 0.5 * dt)?;
    let k4 = f(add(x, k3, dt), t + dt)?;
    Ok(std::array::from_fn(|i| {
        x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    }))
}

/// Number of fixed steps covering `t_span` with step at most `dt`.
pub(crate) fn step_count(t_span: (f64, f64), dt: f64) -> Result<usize> {
    let (t0, t1) = t_span;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", "must be strictly positive"));
    }
    if !(t1 >= t0) {
        return Err(invalid("t_span", "end must not precede start"));
    }
    Ok(((t1 - t0) / dt - 1e-9).ceil().max(0.0) as usize)
}

/// Fixed-step classical RK4 integration of [`moment_rhs`], recording every
/// `record_every` steps (and always the final state).
pub fn integrate_moments_recording(
    spec: &MasterEquationSpec,
    state0: GaussianMomentState,
    t_span: (f64, f64),
    dt: f64,
    record_every: usize,
) -> Result<MomentTrajectory> {
    spec.validate()?;
    let steps = step_count(t_span, dt)?;
    let record_every = record_every.max(1);
    let h = if steps == 0 {
        0.0
    } else {
        (t_span.1 - t_span.0) / steps as f64
    };
    let mut x = state0.to_array();
    let mut times = vec![t_span.0];
    let mut states = vec![state0];
    for k in 0..steps {
        let t = t_span.0 + k as f64 * h;
        x = rk4_step(spec, x, t, h)?;
        let t_next = t_span.0 + (k + 1) as f64 * h;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: t_next });
        }
        if (k + 1) % record_every == 0 || k + 1 == steps {
            times.push(t_next);
            states.push(GaussianMomentState::from_array(x));
        }
    }
    Ok(MomentTrajectory {
        times,
        states,
        hbar: spec.constants.hbar,
    })
}

/// [`integrate_moments_recording`] recording every step.
pub fn integrate_moments(
    spec: &MasterEquationSpec,
    state0: GaussianMomentState,
    t_span: (f64, f64),
    dt: f64,
) -> Result<MomentTrajectory> {
    integrate_moments_recording(spec, state0, t_span, dt, 1)
}
