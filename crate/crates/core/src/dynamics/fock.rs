//! Truncated number-basis density-matrix propagation of the quadratic
//! generator. Used as an independent check on the moment equations.

use ndarray::Array2;
use num_complex::Complex64;

use super::{step_count, GaussianMomentState, MasterEquationSpec, QuadraticGenerator};
use crate::error::{invalid, Error, Result};
use crate::operators::{expm, PhaseSpaceOps, SparseOp};

/// Minimum basis size accepted by [`fock_propagate`].
pub const MIN_DIM: usize = 20;

/// Population of the top two levels above which truncation is reported.
pub const LEAKAGE_THRESHOLD: f64 = 1e-6;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Basis and operators for a given system.
#[derive(Debug, Clone)]
pub struct FockBasis {
    pub ops: PhaseSpaceOps,
    pub hbar: f64,
}

impl FockBasis {
    pub fn new(spec: &MasterEquationSpec, dim: usize) -> Self {
        Self {
            ops: PhaseSpaceOps::new(
                dim,
                spec.system.mass,
                spec.system.reference_frequency(),
                spec.constants.hbar,
            ),
            hbar: spec.constants.hbar,
        }
    }

    pub fn dim(&self) -> usize {
        self.ops.dim
    }

    /// `L(ρ)` for the generator `g`.
    pub fn rhs(&self, g: &QuadraticGenerator, rho: &Array2<Complex64>) -> Array2<Complex64> {
        let o = &self.ops;
        let mut out = Array2::zeros(rho.raw_dim());
        let c = |x: f64| Complex64::new(x, 0.0);
        let mi_hbar = -I / self.hbar;
        // −(i/ħ)[H, ρ]
        for (op, coef) in [
            (&o.p2, g.h_pp),
            (&o.q2, g.h_qq),
            (&o.qp, g.h_qp),
            (&o.pq, g.h_qp),
        ] {
            if coef != 0.0 {
                op.left_mul_acc(rho, mi_hbar * coef, &mut out);
                op.right_mul_acc(rho, -mi_hbar * coef, &mut out);
            }
        }
        // −d [X,[X,ρ]] = −d (X²ρ − 2XρX + ρX²)
        for (x, x2, d) in [(&o.q, &o.q2, g.d_qq), (&o.p, &o.p2, g.d_pp)] {
            if d != 0.0 {
                x2.left_mul_acc(rho, c(-d), &mut out);
                x2.right_mul_acc(rho, c(-d), &mut out);
                let xr = x.left_mul(rho);
                x.right_mul_acc(&xr, c(2.0 * d), &mut out);
            }
        }
        // −d_qp [q,[p,ρ]] = −d_qp (qpρ − qρp − pρq + ρpq)
        if g.d_qp != 0.0 {
            let d = g.d_qp;
            o.qp.left_mul_acc(rho, c(-d), &mut out);
            o.pq.right_mul_acc(rho, c(-d), &mut out);
            let qr = o.q.left_mul(rho);
            o.p.right_mul_acc(&qr, c(d), &mut out);
            let pr = o.p.left_mul(rho);
            o.q.right_mul_acc(&pr, c(d), &mut out);
        }
        // −i f [q,{p,ρ}] = −i f (qpρ + qρp − pρq − ρpq)
        if g.friction != 0.0 {
            let f = -I * g.friction;
            o.qp.left_mul_acc(rho, f, &mut out);
            o.pq.right_mul_acc(rho, -f, &mut out);
            let qr = o.q.left_mul(rho);
            o.p.right_mul_acc(&qr, f, &mut out);
            let pr = o.p.left_mul(rho);
            o.q.right_mul_acc(&pr, -f, &mut out);
        }
        out
    }

    pub fn moments(&self, rho: &Array2<Complex64>) -> GaussianMomentState {
        let o = &self.ops;
        let q = o.q.trace_with(rho).re;
        let p = o.p.trace_with(rho).re;
        GaussianMomentState {
            mean_q: q,
            mean_p: p,
            sigma_qq: o.q2.trace_with(rho).re - q * q,
            sigma_pp: o.p2.trace_with(rho).re - p * p,
            sigma_qp: o.sym_qp.trace_with(rho).re - q * p,
        }
    }

    /// Population of the two highest levels.
    pub fn leakage(&self, rho: &Array2<Complex64>) -> f64 {
        let n = self.dim();
        rho[(n - 1, n - 1)].re + rho[(n - 2, n - 2)].re
    }

    /// Pure Gaussian state `D(α) S(r) |0⟩` in this basis, where the state
    /// has means `(q, p)` and `σ_qq = e^{−2r} ħ/2mω_ref`. Built in an
    /// enlarged basis, truncated and renormalized.
    pub fn gaussian_pure_state(&self, mean_q: f64, mean_p: f64, squeeze_r: f64) -> Vec<Complex64> {
        let big = self.dim() + 40;
        let a = SparseOp::annihilation(big).to_dense();
        let ad = a.t().mapv(|v| v.conj());
        let a2 = a.dot(&a);
        let ad2 = ad.dot(&ad);
        let squeeze = expm(&(&a2 - &ad2).mapv(|v| v * (0.5 * squeeze_r)));
        let alpha = Complex64::new(
            mean_q / (2.0 * self.ops.length_scale),
            mean_p / (2.0 * self.ops.momentum_scale),
        );
        let disp = expm(&(ad.mapv(|v| v * alpha) - a.mapv(|v| v * alpha.conj())));
        let mut vac = ndarray::Array1::<Complex64>::zeros(big);
        vac[0] = ONE;
        let psi = disp.dot(&squeeze.dot(&vac));
        let mut out: Vec<Complex64> = psi.iter().take(self.dim()).copied().collect();
        let norm = out.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        out.iter_mut().for_each(|v| *v /= norm);
        out
    }

    pub fn pure_density(psi: &[Complex64]) -> Array2<Complex64> {
        let n = psi.len();
        Array2::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj())
    }
}

/// Output of [`fock_propagate`].
#[derive(Debug, Clone)]
pub struct FockTrajectory {
    pub times: Vec<f64>,
    pub moments: Vec<GaussianMomentState>,
    pub traces: Vec<f64>,
    pub leakage: Vec<f64>,
    /// First recorded time at which the top-two-level population exceeded
    /// [`LEAKAGE_THRESHOLD`].
    pub leakage_time: Option<f64>,
    pub final_rho: Array2<Complex64>,
}

/// Checks that `rho0` is Hermitian, unit-trace and positive semidefinite.
pub fn validate_density(rho: &Array2<Complex64>) -> Result<()> {
    let n = rho.nrows();
    if rho.ncols() != n {
        return Err(invalid("rho0", "density matrix must be square"));
    }
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((rho[(i, j)] - rho[(j, i)].conj()).norm());
        }
    }
    if dev > 1e-10 {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let tr: f64 = (0..n).map(|i| rho[(i, i)].re).sum();
    if (tr - 1.0).abs() > 1e-8 {
        return Err(invalid("rho0", format!("trace is {tr}, expected 1")));
    }
    // PSD through the Hermitian 2n×2n real embedding [[Re, −Im], [Im, Re]]
    let emb = nalgebra::DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let v = rho[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
        }
    });
    let min = emb.symmetric_eigenvalues().min();
    if min < -1e-10 {
        return Err(invalid(
            "rho0",
            format!("not positive semidefinite (eigenvalue {min:.3e})"),
        ));
    }
    Ok(())
}

/// Fixed-step RK4 propagation of the full master equation on `dim`
/// number states, recording moments every `record_every` steps.
pub fn fock_propagate(
    spec: &MasterEquationSpec,
    rho0: &Array2<Complex64>,
    dim: usize,
    t_span: (f64, f64),
    dt: f64,
    record_every: usize,
) -> Result<FockTrajectory> {
    spec.validate()?;
    if dim < MIN_DIM {
        return Err(invalid(
            "dim",
            format!("basis size must be at least {MIN_DIM}"),
        ));
    }
    if rho0.nrows() != dim {
        return Err(invalid("rho0", format!("expected a {dim}×{dim} matrix")));
    }
    validate_density(rho0)?;
    let basis = FockBasis::new(spec, dim);
    let steps = step_count(t_span, dt)?;
    let record_every = record_every.max(1);
    let h = if steps == 0 {
        0.0
    } else {
        (t_span.1 - t_span.0) / steps as f64
    };

    let mut rho = rho0.clone();
    let trace = |r: &Array2<Complex64>| (0..dim).map(|i| r[(i, i)].re).sum::<f64>();
    let mut out = FockTrajectory {
        times: vec![t_span.0],
        moments: vec![basis.moments(&rho)],
        traces: vec![trace(&rho)],
        leakage: vec![basis.leakage(&rho)],
        leakage_time: None,
        final_rho: Array2::zeros((dim, dim)),
    };
    if out.leakage[0] > LEAKAGE_THRESHOLD {
        out.leakage_time = Some(t_span.0);
    }
    for k in 0..steps {
        let t = t_span.0 + k as f64 * h;
        let g0 = spec.generator(t)?;
        let gm = spec.generator(t + 0.5 * h)?;
        let g1 = spec.generator(t + h)?;
        let k1 = basis.rhs(&g0, &rho);
        let k2 = basis.rhs(&gm, &(&rho + &k1.mapv(|v| v * (0.5 * h))));
        let k3 = basis.rhs(&gm, &(&rho + &k2.mapv(|v| v * (0.5 * h))));
        let k4 = basis.rhs(&g1, &(&rho + &k3.mapv(|v| v * h)));
        rho = &rho
            + &((&k1 + &k2.mapv(|v| v * 2.0) + &k3.mapv(|v| v * 2.0) + &k4)
                .mapv(|v| v * (h / 6.0)));
        let t_next = t + h;
        if rho.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite { t: t_next });
        }
        if (k + 1) % record_every == 0 || k + 1 == steps {
            let leak = basis.leakage(&rho);
            if leak > LEAKAGE_THRESHOLD && out.leakage_time.is_none() {
                out.leakage_time = Some(t_next);
            }
            out.times.push(t_next);
            out.moments.push(basis.moments(&rho));
            out.traces.push(trace(&rho));
            out.leakage.push(leak);
        }
    }
    out.final_rho = rho;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::PhysicalConstants;
    use crate::dynamics::{integrate_moments, SystemSpec, Variant};

    fn spec(variant: Variant, gamma: f64, t: f64) -> MasterEquationSpec {
        MasterEquationSpec::new(
            variant,
            SystemSpec::new(1.0, 1.0).unwrap(),
            gamma,
            t,
            PhysicalConstants::default(),
        )
        .unwrap()
    }

    #[test]
    fn coherent_state_rotates_without_bath() {
        let s = spec(Variant::CL, 0.0, 1.0);
        let basis = FockBasis::new(&s, 30);
        let psi = basis.gaussian_pure_state(1.0, 0.5, 0.0);
        let rho = FockBasis::pure_density(&psi);
        let traj = fock_propagate(&s, &rho, 30, (0.0, 3.0), 2e-3, 100).unwrap();
        let init = GaussianMomentState::coherent(&s.system, &s.constants, 1.0, 0.5);
        let ode = integrate_moments(&s, init, (0.0, 3.0), 2e-3).unwrap();
        for (k, t) in traj.times.iter().enumerate() {
            let m = traj.moments[k];
            let idx = (t / 2e-3).round() as usize;
            let o = ode.states[idx];
            assert!((m.mean_q - o.mean_q).abs() < 1e-6);
            assert!((m.mean_p - o.mean_p).abs() < 1e-6);
            assert!((m.sigma_qq - o.sigma_qq).abs() < 1e-6);
        }
        assert!(traj.leakage_time.is_none());
    }

    #[test]
    fn prepared_state_has_requested_moments() {
        let s = spec(Variant::JZ, 0.0, 1.0);
        let basis = FockBasis::new(&s, 60);
        let psi = basis.gaussian_pure_state(0.4, -0.3, 0.6);
        let m = basis.moments(&FockBasis::pure_density(&psi));
        assert!((m.mean_q - 0.4).abs() < 1e-10);
        assert!((m.mean_p + 0.3).abs() < 1e-10);
        assert!((m.sigma_qq - 0.5 * (-1.2f64).exp()).abs() < 1e-10);
        assert!((m.sigma_pp - 0.5 * (1.2f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn trace_is_preserved() {
        let s = spec(Variant::CCL, 0.1, 2.0);
        let basis = FockBasis::new(&s, 24);
        let rho = FockBasis::pure_density(&basis.gaussian_pure_state(0.5, 0.0, 0.0));
        let traj = fock_propagate(&s, &rho, 24, (0.0, 1.0), 1e-3, 50).unwrap();
        for tr in &traj.traces {
            assert!((tr - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn bad_inputs_rejected() {
        let s = spec(Variant::JZ, 0.1, 1.0);
        let rho = Array2::<Complex64>::eye(10).mapv(|v| v / 10.0);
        assert!(fock_propagate(&s, &rho, 10, (0.0, 1.0), 0.1, 1).is_err());
        let mut rho = Array2::<Complex64>::zeros((20, 20));
        rho[(0, 0)] = Complex64::new(2.0, 0.0);
        assert!(fock_propagate(&s, &rho, 20, (0.0, 1.0), 0.1, 1).is_err());
        let mut rho = Array2::<Complex64>::zeros((20, 20));
        rho[(0, 0)] = Complex64::new(1.5, 0.0);
        rho[(1, 1)] = Complex64::new(-0.5, 0.0);
        assert!(validate_density(&rho).is_err());
    }

    #[test]
    fn leakage_is_reported() {
        let s = spec(Variant::JZ, 0.5, 20.0);
        let basis = FockBasis::new(&s, 20);
        let rho = FockBasis::pure_density(&basis.gaussian_pure_state(0.0, 0.0, 0.0));
        let traj = fock_propagate(&s, &rho, 20, (0.0, 2.0), 1e-3, 100).unwrap();
        assert!(traj.leakage_time.is_some());
    }
}
