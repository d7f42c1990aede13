//! Complete-positivity audit of 2×2 Kossakowski matrices over `(F₁, F₂) = (q, p)`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::PhysicalConstants;
use crate::coefficients::HPZCoefficients;
use crate::error::{invalid, Error, Result};

/// Relative eigenvalue threshold: `λ_min < −tol·‖a‖` counts as a violation.
pub const DEFAULT_CP_TOLERANCE: f64 = 1e-12;

const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KossakowskiMatrix {
    pub entries: [[Complex64; 2]; 2],
    pub t: f64,
}

impl KossakowskiMatrix {
    pub fn new(entries: [[Complex64; 2]; 2], t: f64) -> Result<Self> {
        if entries
            .iter()
            .flatten()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(invalid("a", "matrix entries must be finite"));
        }
        Ok(Self { entries, t })
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let e = &self.entries;
        (e[0][1] - e[1][0].conj())
            .norm()
            .max(e[0][0].im.abs())
            .max(e[1][1].im.abs())
    }

    pub fn trace(&self) -> f64 {
        self.entries[0][0].re + self.entries[1][1].re
    }

    pub fn determinant(&self) -> f64 {
        let e = &self.entries;
        e[0][0].re * e[1][1].re - e[0][1].norm_sqr()
    }

    /// Both eigenvalues, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let e = &self.entries;
        let (a, d) = (e[0][0].re, e[1][1].re);
        let tr = a + d;
        // tr² − 4det written without cancellation
        let disc = ((a - d) * (a - d) + 4.0 * e[0][1].norm_sqr()).sqrt();
        if tr >= 0.0 {
            let hi = 0.5 * (tr + disc);
            let lo = if hi > 0.0 {
                self.determinant() / hi
            } else {
                0.0
            };
            [lo, hi]
        } else {
            let lo = 0.5 * (tr - disc);
            let hi = if lo < 0.0 {
                self.determinant() / lo
            } else {
                0.0
            };
            [lo, hi]
        }
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        let [lo, hi] = self.eigenvalues();
        lo.abs().max(hi.abs())
    }
}

/// `a(t) = [[−2Γ, −Θ + iΥ], [−Θ − iΥ, 0]]` at a node of the coefficient grid.
pub fn assemble_hpz_matrix(coeffs: &HPZCoefficients, t: f64) -> Result<KossakowskiMatrix> {
    let k = coeffs.sample(coeffs.node_index(t)?);
    KossakowskiMatrix::new(
        [
            [
                Complex64::new(-2.0 * k.gamma, 0.0),
                Complex64::new(-k.theta, k.upsilon),
            ],
            [
                Complex64::new(-k.theta, -k.upsilon),
                Complex64::new(0.0, 0.0),
            ],
        ],
        t,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstantVariant {
    CL,
    CCL,
    JZ,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantParams {
    pub mass: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub constants: PhysicalConstants,
}

/// Kossakowski matrices of the time-independent equations:
/// CL `[[4mγk_BT/ħ², −iγ/ħ], [iγ/ħ, 0]]`, CCL the same with
/// `a₂₂ = γ/(4mk_BT)`, JZ `diag(4mγk_BT/ħ², 0)`.
pub fn assemble_constant_matrix(
    variant: ConstantVariant,
    params: &ConstantParams,
) -> Result<KossakowskiMatrix> {
    let ConstantParams {
        mass,
        gamma,
        temperature,
        constants,
    } = *params;
    if !(mass > 0.0 && gamma >= 0.0 && temperature > 0.0) {
        return Err(invalid(
            "params",
            "mass and temperature must be positive, γ non-negative",
        ));
    }
    constants.validate()?;
    let h = constants.hbar;
    let kt = constants.k_b * temperature;
    let a11 = 4.0 * mass * gamma * kt / (h * h);
    let z = Complex64::new(0.0, 0.0);
    let entries = match variant {
        ConstantVariant::JZ => [[Complex64::new(a11, 0.0), z], [z, z]],
        ConstantVariant::CL | ConstantVariant::CCL => {
            let a22 = if variant == ConstantVariant::CCL {
                gamma / (4.0 * mass * kt)
            } else {
                0.0
            };
            [
                [Complex64::new(a11, 0.0), Complex64::new(0.0, -gamma / h)],
                [Complex64::new(0.0, gamma / h), Complex64::new(a22, 0.0)],
            ]
        }
    };
    KossakowskiMatrix::new(entries, 0.0)
}

/// Smaller eigenvalue of a Hermitian 2×2 matrix.
pub fn min_eigenvalue(matrix: &KossakowskiMatrix) -> Result<f64> {
    let dev = matrix.hermiticity_deviation();
    let scale = matrix
        .entries
        .iter()
        .flatten()
        .map(|v| v.norm())
        .fold(1.0, f64::max);
    if dev > HERMITICITY_TOL * scale {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(matrix.eigenvalues()[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "CP-semigroup-form")]
    CpSemigroupForm,
    NotCP,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CPAuditReport {
    pub source: String,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub first_violation: Option<f64>,
    /// Set when the matrix is PSD with vanishing determinant somewhere.
    pub rank_one: bool,
    pub times: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
    pub determinants: Vec<f64>,
}

impl CPAuditReport {
    pub fn write_csv<W: Write>(&self, mut out: W, header: Option<&str>) -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(out, "# {h}")?;
        }
        writeln!(out, "t,lambda_min,det")?;
        for k in 0..self.times.len() {
            writeln!(
                out,
                "{},{:.15e},{:.15e}",
                self.times[k], self.min_eigenvalues[k], self.determinants[k]
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// What to audit.
#[derive(Debug, Clone, Copy)]
pub enum AuditSource<'a> {
    Hpz(&'a HPZCoefficients),
    Constant(ConstantVariant, ConstantParams),
}

/// Evaluates the smallest eigenvalue over `t_grid`. The verdict is `NotCP`
/// iff `λ_min < −tol·‖a(t)‖` at some sampled time.
pub fn audit_cp(source: AuditSource<'_>, t_grid: &[f64], tol: f64) -> Result<CPAuditReport> {
    let mut times = Vec::with_capacity(t_grid.len());
    let mut mins = Vec::with_capacity(t_grid.len());
    let mut dets = Vec::with_capacity(t_grid.len());
    let mut first_violation = None;
    let mut rank_one = false;
    let label = match source {
        AuditSource::Hpz(_) => "HPZ".to_string(),
        AuditSource::Constant(v, _) => format!("{v:?}"),
    };
    let constant = match source {
        AuditSource::Constant(v, p) => Some(assemble_constant_matrix(v, &p)?),
        AuditSource::Hpz(_) => None,
    };
    for &t in t_grid {
        let a = match (source, constant) {
            (AuditSource::Hpz(c), _) => assemble_hpz_matrix(c, t)?,
            (_, Some(m)) => KossakowskiMatrix { t, ..m },
            _ => unreachable!(),
        };
        let lmin = min_eigenvalue(&a)?;
        let det = a.determinant();
        let norm = a.norm();
        if lmin < -tol * norm {
            first_violation.get_or_insert(t);
        } else if norm > 0.0 && det.abs() <= tol * norm * norm {
            rank_one = rank_one || a.eigenvalues()[1] > tol * norm;
        }
        times.push(t);
        mins.push(lmin);
        dets.push(det);
    }
    Ok(CPAuditReport {
        source: label,
        verdict: if first_violation.is_some() {
            Verdict::NotCP
        } else {
            Verdict::CpSemigroupForm
        },
        tolerance: tol,
        first_violation,
        rank_one: rank_one && first_violation.is_none(),
        times,
        min_eigenvalues: mins,
        determinants: dets,
    })
}
