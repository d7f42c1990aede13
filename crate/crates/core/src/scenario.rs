//! JSON scenario files.
//!
//! Parsing runs in two passes. The first walks the raw JSON and collects
//! every unknown key (an error in strict mode, a warning otherwise) and
//! every missing required key, so one error lists them all. The second
//! deserializes into [`Scenario`] with defaults filled and checks values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bath::{CutoffKind, PhysicalConstants, DEFAULT_QUAD_TOL};
use crate::dynamics::{GaussianMomentState, SystemSpec};
use crate::error::{Error, Result};
use crate::stochastic::Estimator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub units: PhysicalConstants,
    pub system: SystemBlock,
    pub bath: BathBlock,
    pub equation: EquationBlock,
    pub run: RunBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic: Option<StochasticBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemBlock {
    pub mass: f64,
    pub omega_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathBlock {
    pub gamma: f64,
    pub temperature: f64,
    #[serde(default)]
    pub cutoff: CutoffKind,
    /// Needed only by pipelines that tabulate the bath kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_cutoff: Option<f64>,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
}

/// One master equation to propagate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VariantChoice {
    CL,
    CCL,
    JZ,
    /// Markov limit of the `(q − μp)` coupling.
    QP {
        mu: f64,
    },
    /// Exact equation with coefficients tabulated from the bath kernel.
    HPZ,
    /// Exact equation with delta-correlated coefficients.
    HPZDelta,
}

impl VariantChoice {
    pub fn label(&self) -> &'static str {
        match self {
            VariantChoice::CL => "cl",
            VariantChoice::CCL => "ccl",
            VariantChoice::JZ => "jz",
            VariantChoice::QP { .. } => "qp",
            VariantChoice::HPZ => "hpz",
            VariantChoice::HPZDelta => "hpz_delta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationBlock {
    pub variants: Vec<VariantChoice>,
    /// Dressed-kernel order for the HPZ pipeline.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub allow_high_order: bool,
    /// Bath kernel and coefficient grid spacing; defaults to `run.dt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_step: Option<f64>,
    #[serde(default)]
    pub audit: bool,
    /// Audit sampling interval; defaults to the coefficient grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Ground,
    Coherent {
        q: f64,
        p: f64,
    },
    /// Displaced position-squeezed state, `σ_qq = e^{−2r} ħ/2mω`.
    Squeezed {
        r: f64,
        #[serde(default)]
        q: f64,
        #[serde(default)]
        p: f64,
    },
    Thermal {
        temperature: f64,
    },
}

impl InitialState {
    pub fn moments(&self, system: &SystemSpec, c: &PhysicalConstants) -> GaussianMomentState {
        match *self {
            InitialState::Ground => GaussianMomentState::ground(system, c),
            InitialState::Coherent { q, p } => GaussianMomentState::coherent(system, c, q, p),
            InitialState::Squeezed { r, q, p } => GaussianMomentState {
                mean_q: q,
                mean_p: p,
                ..GaussianMomentState::squeezed(system, c, r)
            },
            InitialState::Thermal { temperature } => {
                GaussianMomentState::thermal(system, c, temperature)
            }
        }
    }

    /// `(q, p, r)` when the state is pure.
    pub fn pure_parameters(&self) -> Option<(f64, f64, f64)> {
        match *self {
            InitialState::Ground => Some((0.0, 0.0, 0.0)),
            InitialState::Coherent { q, p } => Some((q, p, 0.0)),
            InitialState::Squeezed { r, q, p } => Some((q, p, r)),
            InitialState::Thermal { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Moments,
    Coefficients,
    Kernel,
    Fock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBlock {
    pub t_span: [f64; 2],
    pub dt: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<Output>,
    #[serde(default = "default_dim")]
    pub fock_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticBlock {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub seed: u64,
    /// `[Re S, Im S]`.
    #[serde(default)]
    pub s_scalar: [f64; 2],
    /// `S` as a fraction of `D`; added to `s_scalar`.
    #[serde(default)]
    pub s_fraction: f64,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "default_sse_record")]
    pub record_every: usize,
    #[serde(default)]
    pub dump_trajectories: usize,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_quad_tol() -> f64 {
    DEFAULT_QUAD_TOL
}
fn default_order() -> usize {
    1
}
fn default_record_every() -> usize {
    1
}
fn default_outputs() -> Vec<Output> {
    vec![Output::Moments]
}
fn default_dim() -> usize {
    40
}
fn default_n_traj() -> usize {
    10_000
}
fn default_sse_record() -> usize {
    1000
}

/// `(block, allowed keys, required keys)`; the root block has an empty name.
const SCHEMA: &[(&str, &[&str], &[&str])] = &[
    (
        "",
        &[
            "name",
            "units",
            "system",
            "bath",
            "equation",
            "run",
            "stochastic",
        ],
        &["system", "bath", "equation", "run"],
    ),
    ("units", &["hbar", "k_b"], &["hbar", "k_b"]),
    ("system", &["mass", "omega_s"], &["mass", "omega_s"]),
    (
        "bath",
        &["gamma", "temperature", "cutoff", "omega_cutoff", "quad_tol"],
        &["gamma", "temperature"],
    ),
    (
        "equation",
        &[
            "variants",
            "order",
            "allow_high_order",
            "kernel_step",
            "audit",
            "audit_step",
        ],
        &["variants"],
    ),
    (
        "run",
        &[
            "t_span",
            "dt",
            "record_every",
            "initial_state",
            "outputs",
            "fock_dim",
        ],
        &["t_span", "dt"],
    ),
    (
        "stochastic",
        &[
            "dim",
            "n_traj",
            "seed",
            "s_scalar",
            "s_fraction",
            "estimator",
            "record_every",
            "dump_trajectories",
        ],
        &[],
    ),
];

/// Unknown and missing keys of a raw scenario document.
#[derive(Debug, Default)]
struct KeyAudit {
    unknown: Vec<String>,
    missing: Vec<String>,
}

fn audit_keys(doc: &Value) -> Result<KeyAudit> {
    let root = doc
        .as_object()
        .ok_or_else(|| Error::Validation(vec!["scenario must be a JSON object".into()]))?;
    let mut audit = KeyAudit::default();
    for (block, allowed, required) in SCHEMA {
        let (obj, prefix) = if block.is_empty() {
            (Some(root), String::new())
        } else {
            match root.get(*block) {
                None => continue,
                Some(v) => match v.as_object() {
                    Some(o) => (Some(o), format!("{block}.")),
                    None => {
                        audit.missing.push(format!("{block} (must be an object)"));
                        (None, String::new())
                    }
                },
            }
        };
        let Some(obj) = obj else { continue };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                audit.unknown.push(format!("{prefix}{key}"));
            }
        }
        for key in *required {
            if !obj.contains_key(*key) {
                audit.missing.push(format!("{prefix}{key}"));
            }
        }
    }
    Ok(audit)
}

/// Parse result: the scenario and any non-fatal findings.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub scenario: Scenario,
    pub warnings: Vec<String>,
}

pub fn parse_scenario_str(text: &str, strict: bool) -> Result<Parsed> {
    let doc: Value = serde_json::from_str(text)?;
    let keys = audit_keys(&doc)?;
    let mut errors: Vec<String> = keys
        .missing
        .iter()
        .map(|k| format!("missing required key `{k}`"))
        .collect();
    let mut warnings = Vec::new();
    for k in &keys.unknown {
        if strict {
            errors.push(format!("unknown key `{k}`"));
        } else {
            warnings.push(format!("ignored unknown key `{k}`"));
        }
    }
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    let scenario: Scenario = serde_json::from_value(doc)
        .map_err(|e| Error::Validation(vec![format!("malformed scenario: {e}")]))?;
    scenario.validate()?;
    Ok(Parsed { scenario, warnings })
}

/// Reads and validates a scenario file in strict mode.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    Ok(parse_scenario_file(path, true)?.scenario)
}

pub fn parse_scenario_file(path: impl AsRef<Path>, strict: bool) -> Result<Parsed> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
        Error::Validation(vec![format!(
            "cannot read {}: {e}",
            path.as_ref().display()
        )])
    })?;
    parse_scenario_str(&text, strict)
}

fn positive(errors: &mut Vec<String>, name: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(format!("`{name}` must be strictly positive (got {v})"));
    }
}

impl Scenario {
    /// Checks every value and collects all problems into one error.
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        positive(&mut e, "units.hbar", self.units.hbar);
        positive(&mut e, "units.k_b", self.units.k_b);
        positive(&mut e, "system.mass", self.system.mass);
        if !(self.system.omega_s >= 0.0 && self.system.omega_s.is_finite()) {
            e.push(format!(
                "`system.omega_s` must be non-negative (got {})",
                self.system.omega_s
            ));
        }
        if !(self.bath.gamma >= 0.0 && self.bath.gamma.is_finite()) {
            e.push(format!(
                "`bath.gamma` must be non-negative (got {})",
                self.bath.gamma
            ));
        }
        positive(&mut e, "bath.temperature", self.bath.temperature);
        if let Some(w) = self.bath.omega_cutoff {
            positive(&mut e, "bath.omega_cutoff", w);
        }
        if !(self.bath.quad_tol > 0.0 && self.bath.quad_tol < 1.0) {
            e.push("`bath.quad_tol` must lie in (0, 1)".into());
        }

        let eq = &self.equation;
        if eq.variants.is_empty() {
            e.push("`equation.variants` must name at least one equation".into());
        }
        for (i, v) in eq.variants.iter().enumerate() {
            if eq.variants[..i].iter().any(|w| w.label() == v.label()) {
                e.push(format!("`equation.variants` lists `{}` twice", v.label()));
            }
            if let VariantChoice::QP { mu } = v {
                if !mu.is_finite() {
                    e.push("`equation.variants.QP.mu` must be finite".into());
                }
            }
        }
        let needs_kernel = eq.variants.contains(&VariantChoice::HPZ)
            || self.run.outputs.contains(&Output::Kernel)
            || self.run.outputs.contains(&Output::Coefficients);
        if needs_kernel && self.bath.omega_cutoff.is_none() {
            e.push("`bath.omega_cutoff` is required to tabulate the bath kernel".into());
        }
        if eq.order == 0 {
            e.push("`equation.order` must be at least 1".into());
        }
        if let Some(h) = eq.kernel_step {
            positive(&mut e, "equation.kernel_step", h);
        }
        if let Some(h) = eq.audit_step {
            positive(&mut e, "equation.audit_step", h);
        }

        let run = &self.run;
        let [t0, t1] = run.t_span;
        if !(t0.is_finite() && t1.is_finite() && t1 >= t0 && t0 >= 0.0) {
            e.push(format!(
                "`run.t_span` must satisfy 0 ≤ start ≤ end (got [{t0}, {t1}])"
            ));
        }
        positive(&mut e, "run.dt", run.dt);
        if run.record_every == 0 {
            e.push("`run.record_every` must be at least 1".into());
        }
        if run.fock_dim < crate::dynamics::fock::MIN_DIM {
            e.push(format!(
                "`run.fock_dim` must be at least {}",
                crate::dynamics::fock::MIN_DIM
            ));
        }
        match run.initial_state {
            InitialState::Thermal { temperature } => {
                positive(&mut e, "run.initial_state.temperature", temperature);
                if self.system.omega_s == 0.0 {
                    e.push("a thermal initial state needs `system.omega_s` > 0".into());
                }
            }
            InitialState::Squeezed { r, q, p }
                if !(r.is_finite() && q.is_finite() && p.is_finite()) =>
            {
                e.push("`run.initial_state` parameters must be finite".into());
            }
            InitialState::Coherent { q, p } if !(q.is_finite() && p.is_finite()) => {
                e.push("`run.initial_state` parameters must be finite".into());
            }
            _ => {}
        }

        if let Some(s) = &self.stochastic {
            if t0 != 0.0 {
                e.push("stochastic runs start at t = 0; set `run.t_span[0]` to 0".into());
            }
            if !eq
                .variants
                .iter()
                .any(|v| matches!(v, VariantChoice::CCL | VariantChoice::JZ))
            {
                e.push(
                    "the `stochastic` block unravels CCL or JZ; list one in `equation.variants`"
                        .into(),
                );
            }
            if run.initial_state.pure_parameters().is_none() {
                e.push("stochastic runs need a pure initial state".into());
            }
            if self.bath.gamma <= 0.0 {
                e.push("stochastic runs need `bath.gamma` > 0".into());
            }
            if s.dim < crate::dynamics::fock::MIN_DIM {
                e.push(format!(
                    "`stochastic.dim` must be at least {}",
                    crate::dynamics::fock::MIN_DIM
                ));
            }
            if s.n_traj == 0 {
                e.push("`stochastic.n_traj` must be at least 1".into());
            }
            if s.record_every == 0 {
                e.push("`stochastic.record_every` must be at least 1".into());
            }
            if !(s.s_fraction.abs() <= 1.0) {
                e.push("`stochastic.s_fraction` must lie in [−1, 1]".into());
            }
            if s.dump_trajectories > crate::stochastic::MAX_DUMPED_TRAJECTORIES {
                e.push(format!(
                    "`stochastic.dump_trajectories` must not exceed {}",
                    crate::stochastic::MAX_DUMPED_TRAJECTORIES
                ));
            }
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(e))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Short SHA-256 digest of the canonical serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&bytes)
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        SystemSpec::new(self.system.mass, self.system.omega_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "system": {"mass": 1.0, "omega_s": 1.0},
        "bath": {"gamma": 0.1, "temperature": 2.0},
        "equation": {"variants": ["JZ"]},
        "run": {"t_span": [0.0, 5.0], "dt": 0.01}
    }"#;

    #[test]
    fn minimal_scenario_takes_defaults() {
        let s = parse_scenario_str(MINIMAL, true).unwrap().scenario;
        assert_eq!(s.units, PhysicalConstants::default());
        assert_eq!(s.bath.cutoff, CutoffKind::Sharp);
        assert_eq!(s.bath.quad_tol, 1e-8);
        assert_eq!(s.equation.order, 1);
        assert_eq!(s.run.initial_state, InitialState::Ground);
        assert!(s.stochastic.is_none());
    }

    #[test]
    fn stochastic_defaults() {
        let text = MINIMAL.replace(r#""run""#, r#""stochastic": {}, "run""#);
        let s = parse_scenario_str(&text, true).unwrap().scenario;
        let st = s.stochastic.unwrap();
        assert_eq!(st.s_scalar, [0.0, 0.0]);
        assert_eq!(st.s_fraction, 0.0);
        assert_eq!((st.dim, st.n_traj, st.seed), (40, 10_000, 0));
    }

    #[test]
    fn negative_temperature_is_one_error() {
        let text = MINIMAL.replace("\"temperature\": 2.0", "\"temperature\": -2.0");
        match parse_scenario_str(&text, true) {
            Err(Error::Validation(v)) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].contains("bath.temperature"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_keys_listed_together() {
        let text = r#"{"system": {"mass": 1.0}, "bath": {}, "equation": {"variants": ["JZ"]}}"#;
        match parse_scenario_str(text, true) {
            Err(Error::Validation(v)) => {
                for k in ["system.omega_s", "bath.gamma", "bath.temperature", "`run`"] {
                    assert!(v.iter().any(|m| m.contains(k)), "{k}: {v:?}");
                }
                assert_eq!(v.len(), 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_depend_on_strictness() {
        let text = MINIMAL.replace("\"mass\": 1.0", "\"mass\": 1.0, \"charge\": 2");
        match parse_scenario_str(&text, true) {
            Err(Error::Validation(v)) => assert!(v[0].contains("system.charge")),
            other => panic!("{other:?}"),
        }
        let p = parse_scenario_str(&text, false).unwrap();
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn hpz_requires_cutoff() {
        let text = MINIMAL.replace("[\"JZ\"]", "[\"HPZ\"]");
        assert!(matches!(
            parse_scenario_str(&text, true),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn round_trip_and_hash() {
        let text = MINIMAL.replace("[\"JZ\"]", "[\"CL\", {\"QP\": {\"mu\": 0.2}}]");
        let s = parse_scenario_str(&text, true).unwrap().scenario;
        let again = parse_scenario_str(&s.to_json().unwrap(), true)
            .unwrap()
            .scenario;
        assert_eq!(s, again);
        assert_eq!(s.hash(), again.hash());
        assert_eq!(s.hash().len(), 16);
    }
}
