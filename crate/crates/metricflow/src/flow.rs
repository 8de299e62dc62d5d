//! Implicit-Euler semigroup driver: iterate the resolvent to evolve an
//! initial state along the gradient flow of `F(u) = E(du)`, collecting a
//! certificate for every accepted step.
//!
//! Each step solves `u_{k+1} = argmin E(du) + (1/2 tau_k)||u - u_k||^2_nu`
//! and stores the dual field `X_{k+1}` with
//!
//! * `(u_{k+1} - u_k)/tau_k = div(X_{k+1})` on every vertex, and
//! * `X_{k+1} ∈ ∂E(du_{k+1})` per edge (with the two-field split for the
//!   sum kinds).
//!
//! Along every trajectory the energy is nonincreasing with the implicit
//! Euler dissipation bound `F(u_{k+1}) - F(u_k) <= -||Δu||^2_nu / tau`,
//! mass is conserved, and pairs of trajectories contract in every weighted
//! r-norm of positive parts.

use thiserror::Error;

use crate::energy::{self, Integrand};
use crate::resolvent::{solve_resolvent, ResolventError, ResolventProblem};
use crate::space::{Space, SpaceError, VectorField, VertexFunction};

/// Time grid and solver settings for one flow run.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    taus: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl FlowConfig {
    /// Uniform grid of `steps` steps of size `tau`.
    pub fn uniform(tau: f64, steps: usize) -> Self {
        FlowConfig {
            taus: vec![tau; steps],
            tol: 1e-9,
            max_iter: 200_000,
        }
    }

    /// Explicit step schedule.
    pub fn explicit(taus: Vec<f64>) -> Self {
        FlowConfig {
            taus,
            tol: 1e-9,
            max_iter: 200_000,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn steps(&self) -> usize {
        self.taus.len()
    }
}

/// Certificate attached to one accepted step.
#[derive(Debug, Clone)]
pub struct StepCertificate {
    pub x: VectorField,
    /// `(X1, X2)` for the sum kinds, with `X1(e) = |du|^{p-2} du`.
    pub split: Option<(VectorField, VectorField)>,
    pub iterations: usize,
    pub primal_dual_gap: f64,
    pub div_residual: f64,
    pub gap_residual: f64,
}

/// A certified discrete trajectory: states on the time grid plus one
/// certificate and one diagnostics row per step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<VertexFunction>,
    certificates: Vec<StepCertificate>,
    energies: Vec<f64>,
    masses: Vec<f64>,
    step_norms: Vec<f64>,
}

impl Trajectory {
    /// Grid points `t_0 = 0 < t_1 < ...`; one more entry than steps.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[VertexFunction] {
        &self.states
    }

    pub fn certificates(&self) -> &[StepCertificate] {
        &self.certificates
    }

    /// `F(u_k)` along the grid.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `sum_x nu u_k` along the grid.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `||u_{k+1} - u_k||_{2,nu}` per step.
    pub fn step_norms(&self) -> &[f64] {
        &self.step_norms
    }

    pub fn steps(&self) -> usize {
        self.certificates.len()
    }

    pub fn tau(&self, step: usize) -> f64 {
        self.times[step + 1] - self.times[step]
    }

    pub fn final_state(&self) -> &VertexFunction {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Assembles a trajectory from stored pieces (the CSV reader path).
    pub fn from_parts(
        space: &Space,
        integrand: &Integrand,
        times: Vec<f64>,
        states: Vec<VertexFunction>,
        certificates: Vec<StepCertificate>,
    ) -> Result<Self, FlowError> {
        if times.len() != states.len() || times.len() != certificates.len() + 1 {
            return Err(FlowError::ShapeMismatch(format!(
                "{} times, {} states, {} certificates",
                times.len(),
                states.len(),
                certificates.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FlowError::ShapeMismatch(
                "times must be strictly increasing".into(),
            ));
        }
        for (k, state) in states.iter().enumerate() {
            if state.len() != space.vertex_count() {
                return Err(FlowError::ShapeMismatch(format!(
                    "state {k} has {} entries, space has {} vertices",
                    state.len(),
                    space.vertex_count()
                )));
            }
        }
        for (k, cert) in certificates.iter().enumerate() {
            let split_ok = cert
                .split
                .as_ref()
                .map(|(a, b)| a.len() == space.edge_count() && b.len() == space.edge_count())
                .unwrap_or(true);
            if cert.x.len() != space.edge_count() || !split_ok {
                return Err(FlowError::ShapeMismatch(format!(
                    "certificate {} does not match the {}-edge space",
                    k + 1,
                    space.edge_count()
                )));
            }
        }
        let energies = states
            .iter()
            .map(|u| energy::functional(space, integrand, u).value)
            .collect();
        let masses = states.iter().map(|u| space.mass(u)).collect();
        let step_norms = states
            .windows(2)
            .map(|w| {
                let diff = VertexFunction::new(
                    w[1].values()
                        .iter()
                        .zip(w[0].values())
                        .map(|(a, b)| a - b)
                        .collect(),
                )
                .expect("finite states");
                space.vertex_norm(&diff, 2.0).expect("r = 2 is valid")
            })
            .collect();
        Ok(Trajectory {
            times,
            states,
            certificates,
            energies,
            masses,
            step_norms,
        })
    }
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: ResolventError,
    },
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Runs the implicit-Euler flow from `u0` over the configured grid.
pub fn run_flow(
    space: &Space,
    integrand: &Integrand,
    u0: &VertexFunction,
    config: &FlowConfig,
) -> Result<Trajectory, FlowError> {
    if config.steps() == 0 {
        return Err(FlowError::InvalidConfig("schedule is empty".into()));
    }
    if config.taus.iter().any(|t| !(t > &0.0) || !t.is_finite()) {
        return Err(FlowError::InvalidConfig(
            "every step size must be positive and finite".into(),
        ));
    }
    if u0.len() != space.vertex_count() {
        return Err(FlowError::InvalidConfig(format!(
            "initial state has {} entries, space has {} vertices",
            u0.len(),
            space.vertex_count()
        )));
    }

    let mut times = Vec::with_capacity(config.steps() + 1);
    let mut states = Vec::with_capacity(config.steps() + 1);
    let mut certificates = Vec::with_capacity(config.steps());
    times.push(0.0);
    states.push(u0.clone());

    let mut t = 0.0;
    for (k, &tau) in config.taus.iter().enumerate() {
        let g = states.last().expect("at least the initial state");
        let problem = ResolventProblem {
            space,
            integrand,
            g,
            tau,
            tol: config.tol,
            max_iter: config.max_iter,
        };
        let sol =
            solve_resolvent(&problem).map_err(|source| FlowError::Step { step: k, source })?;
        let split = if integrand.has_split() {
            let du = space.differential(&sol.u);
            let cert =
                energy::split_certificate(space, integrand, &du, &sol.x).expect("sum kind splits");
            Some((cert.x1, cert.x2))
        } else {
            None
        };
        certificates.push(StepCertificate {
            x: sol.x,
            split,
            iterations: sol.iterations,
            primal_dual_gap: sol.primal_dual_gap,
            div_residual: sol.div_residual,
            gap_residual: sol.gap_residual,
        });
        t += tau;
        times.push(t);
        states.push(sol.u);
    }

    let energies = states
        .iter()
        .map(|u| energy::functional(space, integrand, u).value)
        .collect();
    let masses = states.iter().map(|u| space.mass(u)).collect();
    let step_norms = states
        .windows(2)
        .map(|w| {
            let diff = VertexFunction::new(
                w[1].values()
                    .iter()
                    .zip(w[0].values())
                    .map(|(a, b)| a - b)
                    .collect(),
            )
            .expect("finite states");
            space.vertex_norm(&diff, 2.0).expect("r = 2 is valid")
        })
        .collect();

    Ok(Trajectory {
        times,
        states,
        certificates,
        energies,
        masses,
        step_norms,
    })
}

/// Per-step `(F(u_{k+1}) - F(u_k), ||Δu||^2_nu / tau_k)`. Each step of an
/// exact implicit-Euler trajectory satisfies `ΔF <= -||Δu||^2/tau`.
pub fn dissipation_report(trajectory: &Trajectory) -> Vec<(f64, f64)> {
    (0..trajectory.steps())
        .map(|k| {
            let delta_f = trajectory.energies[k + 1] - trajectory.energies[k];
            let rate = trajectory.step_norms[k] * trajectory.step_norms[k] / trajectory.tau(k);
            (delta_f, rate)
        })
        .collect()
}

/// Checks, step by step, that the positive-part r-norm of the difference
/// of two trajectories is nonincreasing (within `1e-10` of scale), and
/// likewise the full weighted L2 norm. `r` may be any exponent `>= 1`
/// or infinity.
pub fn contraction_check(
    space: &Space,
    a: &Trajectory,
    b: &Trajectory,
    r: f64,
) -> Result<Vec<bool>, FlowError> {
    if a.times.len() != b.times.len()
        || a.times
            .iter()
            .zip(&b.times)
            .any(|(x, y)| (x - y).abs() > 1e-12 * (1.0 + x.abs()))
    {
        return Err(FlowError::ShapeMismatch(
            "trajectories are on different time grids".into(),
        ));
    }
    let diff = |k: usize| -> VertexFunction {
        VertexFunction::new(
            a.states[k]
                .values()
                .iter()
                .zip(b.states[k].values())
                .map(|(x, y)| x - y)
                .collect(),
        )
        .expect("finite states")
    };
    let mut out = Vec::with_capacity(a.steps());
    let mut prev = diff(0);
    let mut prev_pos = space.positive_part_norm(&prev, r)?;
    let mut prev_l2 = space.vertex_norm(&prev, 2.0)?;
    for k in 1..a.times.len() {
        prev = diff(k);
        let pos = space.positive_part_norm(&prev, r)?;
        let l2 = space.vertex_norm(&prev, 2.0)?;
        let slack = 1e-10 * (1.0 + prev_pos.max(prev_l2));
        out.push(pos <= prev_pos + slack && l2 <= prev_l2 + slack);
        prev_pos = pos;
        prev_l2 = l2;
    }
    Ok(out)
}

/// Self-consistency diagnostic under step refinement: runs the flow once
/// with the given uniform step and once with half the step and twice the
/// count, and reports `||u^tau(t_k) - u^{tau/2}(t_k)||_inf` at the matched
/// coarse grid points. A diagnostic only; no rate is claimed.
pub fn refinement_diagnostic(
    space: &Space,
    integrand: &Integrand,
    u0: &VertexFunction,
    tau: f64,
    steps: usize,
    tol: f64,
) -> Result<Vec<(f64, f64)>, FlowError> {
    let coarse = run_flow(space, integrand, u0, &FlowConfig::uniform(tau, steps).with_tol(tol))?;
    let fine = run_flow(
        space,
        integrand,
        u0,
        &FlowConfig::uniform(tau / 2.0, steps * 2).with_tol(tol),
    )?;
    Ok((1..=steps)
        .map(|k| {
            let diff: f64 = coarse.states[k]
                .values()
                .iter()
                .zip(fine.states[2 * k].values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            (coarse.times[k], diff)
        })
        .collect())
}
