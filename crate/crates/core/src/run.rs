//! Scenario execution: bath kernel → coefficients → moment, Fock, audit
//! and stochastic stages, each writing CSV files into one directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::{CorrelationKernel, SpectralDensity, ThermalBathSpec};
use crate::coefficients::{
    compute_coefficients, delta_limit_coefficients, dressed_kernel, uniform_grid,
    CoefficientOptions, DressedKernelOptions, HPZCoefficients, OscillatorKernels,
};
use crate::dynamics::fock::{fock_propagate, FockBasis, FockTrajectory};
use crate::dynamics::{integrate_moments_recording, MasterEquationSpec, Variant};
use crate::error::{Error, Result};
use crate::io::{provenance_header, TOOL_VERSION};
use crate::positivity::{
    audit_cp, AuditSource, ConstantParams, ConstantVariant, Verdict, DEFAULT_CP_TOLERANCE,
};
use crate::scenario::{Output, Scenario, VariantChoice};
use crate::stochastic::{ensemble_run, SSEConfig};

/// Witness values above `−WITNESS_TOL` count as physical.
pub const WITNESS_TOL: f64 = 1e-10;

/// Ensemble comparisons beyond this many standard errors are flagged.
pub const Z_WARNING: f64 = 3.0;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub scenario_hash: String,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

/// Exit status for a failed run: 2 for invalid input, 3 for numerical
/// failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_)
        | Error::InvalidParameter { .. }
        | Error::Json(_)
        | Error::OrderTooHigh(_) => 2,
        _ => 3,
    }
}

struct Writer<'a> {
    dir: &'a Path,
    header: String,
    outputs: Vec<String>,
}

impl Writer<'_> {
    fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>, &str) -> std::io::Result<()>,
    {
        let path: PathBuf = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w, &self.header)?;
        w.flush()?;
        self.outputs.push(name.to_string());
        Ok(())
    }
}

fn write_fock<W: Write>(tr: &FockTrajectory, mut out: W, header: &str) -> std::io::Result<()> {
    writeln!(out, "# {header}")?;
    writeln!(out, "t,mean_q,mean_p,s_qq,s_pp,s_qp,trace,leakage")?;
    for k in 0..tr.times.len() {
        let m = &tr.moments[k];
        writeln!(
            out,
            "{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.6e}",
            tr.times[k],
            m.mean_q,
            m.mean_p,
            m.sigma_qq,
            m.sigma_pp,
            m.sigma_qp,
            tr.traces[k],
            tr.leakage[k]
        )?;
    }
    Ok(())
}

/// Runs every stage the scenario asks for and writes the manifest.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> Result<RunManifest> {
    run_scenario_with_warnings(scenario, out_dir, Vec::new())
}

/// As [`run_scenario`], carrying warnings raised before the run (for
/// example ignored keys) into the manifest.
pub fn run_scenario_with_warnings(
    scenario: &Scenario,
    out_dir: &Path,
    mut warnings: Vec<String>,
) -> Result<RunManifest> {
    let start = Instant::now();
    scenario.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let hash = scenario.hash();
    let mut files = Writer {
        dir: out_dir,
        header: provenance_header(&hash),
        outputs: Vec::new(),
    };

    let c = scenario.units;
    let sys = scenario.system_spec()?;
    let bath = scenario.bath;
    let run = &scenario.run;
    let eq = &scenario.equation;
    let t_span = (run.t_span[0], run.t_span[1]);
    let state0 = run.initial_state.moments(&sys, &c);

    let kstep = eq.kernel_step.unwrap_or(run.dt);
    let nodes = ((t_span.1 / kstep) - 1e-9).ceil().max(0.0) as usize + 1;
    let grid = uniform_grid(kstep, nodes);

    let needs_kernel = eq.variants.contains(&VariantChoice::HPZ)
        || run.outputs.contains(&Output::Kernel)
        || run.outputs.contains(&Output::Coefficients);
    let hpz: Option<Arc<HPZCoefficients>> = if needs_kernel {
        let cutoff = bath.omega_cutoff.expect("validated");
        let spectral = SpectralDensity::new(sys.mass, bath.gamma, bath.cutoff, cutoff)?;
        let spec = ThermalBathSpec::new(spectral, bath.temperature, c)?;
        let kernel = CorrelationKernel::new(spec, kstep, nodes, bath.quad_tol)?;
        if run.outputs.contains(&Output::Kernel) {
            files.write("kernel.csv", |w, h| kernel.table().write_csv(w, Some(h)))?;
        }
        let kernels = OscillatorKernels::new(sys.omega_s)?;
        let dressed = dressed_kernel(
            kernel.table(),
            &kernels,
            sys.mass,
            &c,
            DressedKernelOptions {
                order: eq.order,
                nodes: None,
                allow_high_order: eq.allow_high_order,
            },
        )?;
        let coeffs =
            compute_coefficients(&dressed, &kernels, &grid, CoefficientOptions::default())?;
        files.write("coefficients.csv", |w, h| coeffs.write_csv(w, Some(h)))?;
        Some(Arc::new(coeffs))
    } else {
        None
    };

    let kt = c.k_b * bath.temperature;
    let delta = || -> Result<Arc<HPZCoefficients>> {
        let strength = 4.0 * sys.mass * bath.gamma * kt;
        Ok(Arc::new(delta_limit_coefficients(strength, &grid)?))
    };

    for choice in &eq.variants {
        let label = choice.label();
        let (variant, table) = match *choice {
            VariantChoice::CL => (Variant::CL, None),
            VariantChoice::CCL => (Variant::CCL, None),
            VariantChoice::JZ => (Variant::JZ, None),
            VariantChoice::QP { mu } => (Variant::QPCoupled { mu }, None),
            VariantChoice::HPZ => {
                let t = hpz.clone().expect("kernel stage ran");
                (Variant::HPZ(t.clone()), Some(t))
            }
            VariantChoice::HPZDelta => {
                let t = delta()?;
                (Variant::HPZ(t.clone()), Some(t))
            }
        };
        let spec = MasterEquationSpec::new(variant, sys, bath.gamma, bath.temperature, c)?;

        if run.outputs.contains(&Output::Moments) {
            let traj =
                integrate_moments_recording(&spec, state0, t_span, run.dt, run.record_every)?;
            files.write(&format!("moments_{label}.csv"), |w, h| {
                traj.write_csv(w, Some(h))
            })?;
            if let Some(t) = traj.first_violation(WITNESS_TOL) {
                warnings.push(format!(
                    "{label}: uncertainty witness negative from t = {t}, the state is unphysical"
                ));
            }
        }

        if run.outputs.contains(&Output::Fock) {
            match run.initial_state.pure_parameters() {
                Some((q, p, r)) => {
                    let basis = FockBasis::new(&spec, run.fock_dim);
                    let rho0 = FockBasis::pure_density(&basis.gaussian_pure_state(q, p, r));
                    let tr = fock_propagate(
                        &spec,
                        &rho0,
                        run.fock_dim,
                        t_span,
                        run.dt,
                        run.record_every,
                    )?;
                    files.write(&format!("fock_{label}.csv"), |w, h| write_fock(&tr, w, h))?;
                    if let Some(t) = tr.leakage_time {
                        warnings.push(format!(
                            "{label}: number-basis leakage exceeds {:e} from t = {t}",
                            crate::dynamics::fock::LEAKAGE_THRESHOLD
                        ));
                    }
                }
                None => warnings.push(format!(
                    "{label}: number-basis propagation skipped, the initial state is mixed"
                )),
            }
        }

        if eq.audit {
            let constant = |v| {
                AuditSource::Constant(
                    v,
                    ConstantParams {
                        mass: sys.mass,
                        gamma: bath.gamma,
                        temperature: bath.temperature,
                        constants: c,
                    },
                )
            };
            let source = match (choice, &table) {
                (VariantChoice::CL, _) => Some(constant(ConstantVariant::CL)),
                (VariantChoice::CCL, _) => Some(constant(ConstantVariant::CCL)),
                (VariantChoice::JZ, _) => Some(constant(ConstantVariant::JZ)),
                (_, Some(t)) => Some(AuditSource::Hpz(t)),
                _ => None,
            };
            match source {
                Some(source) => {
                    let every = eq
                        .audit_step
                        .map(|s| ((s / kstep).round() as usize).max(1))
                        .unwrap_or(1);
                    let times: Vec<f64> = grid.iter().step_by(every).copied().collect();
                    let report = audit_cp(source, &times, DEFAULT_CP_TOLERANCE)?;
                    files.write(&format!("audit_{label}.csv"), |w, h| {
                        report.write_csv(w, Some(h))
                    })?;
                    let json = report.to_json()?;
                    files.write(&format!("audit_{label}.json"), |w, _| writeln!(w, "{json}"))?;
                    if report.verdict == Verdict::NotCP {
                        warnings.push(format!(
                            "{label}: coefficient matrix has a negative eigenvalue from t = {}, verdict NotCP",
                            report.first_violation.unwrap_or(f64::NAN)
                        ));
                    }
                }
                None => warnings.push(format!(
                    "{label}: no coefficient-matrix audit for this equation"
                )),
            }
        }

        if let (Some(st), VariantChoice::CCL | VariantChoice::JZ) = (&scenario.stochastic, choice) {
            let mut cfg = if *choice == VariantChoice::CCL {
                SSEConfig::ccl(sys, c, bath.gamma, bath.temperature)?
            } else {
                SSEConfig::jz(sys, c, bath.gamma, bath.temperature)?
            };
            cfg.dim = st.dim;
            cfg.dt = run.dt;
            cfg.t_end = t_span.1;
            cfg.record_every = st.record_every;
            cfg.n_traj = st.n_traj;
            cfg.seed = st.seed;
            cfg.estimator = st.estimator;
            cfg.dump_trajectories = st.dump_trajectories;
            cfg.s_scalar = Complex64::new(
                st.s_scalar[0] + st.s_fraction * cfg.d_scalar,
                st.s_scalar[1],
            );
            if st.n_traj < 100 {
                warnings.push(format!(
                    "{label}: ensemble of {} trajectories is below the recommended 100",
                    st.n_traj
                ));
            }
            let (q, p, r) = run.initial_state.pure_parameters().expect("validated");
            let basis = FockBasis {
                ops: cfg.ops(),
                hbar: c.hbar,
            };
            let psi0 = basis.gaussian_pure_state(q, p, r);
            let ens = ensemble_run(&cfg, &psi0)?;
            files.write(&format!("ensemble_{label}.csv"), |w, h| {
                ens.write_csv(w, Some(h))
            })?;
            if !ens.failures.is_empty() {
                warnings.push(format!(
                    "{label}: {} of {} trajectories overflowed and were dropped",
                    ens.failures.len(),
                    ens.attempted
                ));
            }
            let reference = integrate_moments_recording(
                &spec,
                state0,
                (0.0, t_span.1),
                run.dt,
                st.record_every,
            )?;
            let cmp = ens.compare(&reference)?;
            files.write(&format!("comparison_{label}.csv"), |w, h| {
                cmp.write_csv(w, Some(h))
            })?;
            let z = cmp.max_z();
            if z > Z_WARNING {
                warnings.push(format!(
                    "{label}: ensemble deviates from the moment equations by {z:.2} standard errors"
                ));
            }
        }
    }

    let manifest = RunManifest {
        name: scenario.name.clone(),
        scenario_hash: hash,
        tool_version: TOOL_VERSION.to_string(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs: files.outputs,
        warnings,
    };
    std::fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}
