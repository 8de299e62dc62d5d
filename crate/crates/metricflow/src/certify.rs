//! Independent verification: a brute-force resolvent oracle that shares no
//! algorithm with the main solver, from-scratch audits of trajectory
//! certificates, the variational integral inequality, and order-structure
//! (complete accretivity) tests.
//!
//! The accretivity condition tested here is
//!
//! ```text
//! sum_x nu(x) T(u1 - u2)(x) (v1 - v2)(x) >= 0
//! ```
//!
//! for pairs `(u, v)` in the graph of the flow operator and nondecreasing
//! ramps `T` with `0 <= T' <= 1`, `T'` supported away from zero. On a
//! graph this inequality follows from per-edge monotonicity of the
//! subdifferential, not from a chain rule for the discrete differential
//! (which does not hold exactly); a violation beyond tolerance would
//! falsify the discrete analogue, not the continuum statement. Purely
//! set-theoretic properties of the flow operator (maximality, density of
//! its domain) admit no finite test and are outside the audit's scope.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{self, Integrand};
use crate::flow::Trajectory;
use crate::resolvent::{solve_resolvent, ResolventError, ResolventProblem};
use crate::space::{Space, SpaceError, VertexFunction};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("oracle restricted to at most {max} vertices, space has {n}")]
    TooLarge { n: usize, max: usize },
    #[error("trajectory step {0} carries no split certificate for a sum-kind energy")]
    MissingCertificates(usize),
    #[error("operator pair is not certified: residual {residual:.3e} > {tol:.3e}")]
    Uncertified { residual: f64, tol: f64 },
    #[error("test trajectory has {got} states, flow grid has {want}")]
    GridMismatch { got: usize, want: usize },
    #[error("invalid test function: {0}")]
    InvalidTestFn(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Resolvent(#[from] ResolventError),
}

/// One named check with its measured residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// A bundle of checks; fails iff any residual exceeds its tolerance.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn push(&mut self, name: String, residual: f64, tolerance: f64) {
        self.checks.push(AuditCheck {
            name,
            residual,
            tolerance,
            pass: residual <= tolerance,
        });
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn merge(&mut self, other: AuditReport) {
        self.checks.extend(other.checks);
    }
}

// ---------------------------------------------------------------------------
// Brute-force resolvent oracle
// ---------------------------------------------------------------------------

const ORACLE_MAX_VERTICES: usize = 8;

/// Deliberately slow independent minimizer of
/// `E(du) + (1/2 tau)||u - g||^2_nu`, for cross-checking the main solver
/// on small spaces. Runs unprojected subgradient descent with diminishing
/// steps, then cycles exact golden-section line minimizations over a
/// direction dictionary until the objective stagnates below `precision^2`.
///
/// The dictionary holds every coordinate direction and every sign vector
/// in `{-1, +1}^n`. Coordinate moves alone can stall at non-minimizers of
/// the q = 1 energies (a cluster of equal values must move rigidly to
/// descend); the sign vectors cover exactly those rigid moves, and for
/// this objective a point optimal along all of them is a global minimizer.
pub fn brute_force_resolvent(
    space: &Space,
    integrand: &Integrand,
    g: &VertexFunction,
    tau: f64,
    precision: f64,
) -> Result<VertexFunction, CertifyError> {
    let n = space.vertex_count();
    if n > ORACLE_MAX_VERTICES {
        return Err(CertifyError::TooLarge {
            n,
            max: ORACLE_MAX_VERTICES,
        });
    }

    let objective = |u: &[f64]| -> f64 {
        let mut val = 0.0;
        for edge in space.edges() {
            val += edge.m * integrand.phi(u[edge.head] - u[edge.tail]);
        }
        for (i, &gi) in g.values().iter().enumerate() {
            let d = u[i] - gi;
            val += space.nu(i) * d * d / (2.0 * tau);
        }
        val
    };

    let mut u = g.values().to_vec();

    // Phase 1: subgradient descent with diminishing steps.
    let radius = 1.0 + g.max_abs();
    for k in 1..=2000usize {
        let mut sub = vec![0.0; n];
        for edge in space.edges() {
            let s = u[edge.head] - u[edge.tail];
            let d = edge.m * integrand.grad(s);
            sub[edge.head] += d;
            sub[edge.tail] -= d;
        }
        for (i, &gi) in g.values().iter().enumerate() {
            sub[i] += space.nu(i) * (u[i] - gi) / tau;
        }
        let norm = sub.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-300 {
            break;
        }
        let step = 0.05 * radius / (k as f64).sqrt();
        for (ui, si) in u.iter_mut().zip(&sub) {
            *ui -= step * si / norm;
        }
    }

    // Phase 2: golden-section sweeps over the direction dictionary.
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        directions.push(e);
    }
    // sign vectors, first component pinned to +1 (the line search covers -h)
    for bits in 0..(1usize << (n - 1)) {
        let mut h = vec![1.0; n];
        for (i, hi) in h.iter_mut().enumerate().skip(1) {
            if bits >> (i - 1) & 1 == 1 {
                *hi = -1.0;
            }
        }
        directions.push(h);
    }

    let mut current = objective(&u);
    let mut stagnant = 0;
    for _sweep in 0..500 {
        let before = current;
        for h in &directions {
            let t = line_minimize(|t| {
                let trial: Vec<f64> = u.iter().zip(h).map(|(ui, hi)| ui + t * hi).collect();
                objective(&trial)
            });
            if t != 0.0 {
                for (ui, hi) in u.iter_mut().zip(h) {
                    *ui += t * hi;
                }
            }
        }
        current = objective(&u);
        if before - current < precision * precision {
            stagnant += 1;
            if stagnant >= 2 {
                break;
            }
        } else {
            stagnant = 0;
        }
    }

    Ok(VertexFunction::new(u)?)
}

/// 1-D minimization of a convex function along a line: expands a bracket
/// around zero, then golden-section to float resolution. Returns 0 when no
/// strict improvement is found.
fn line_minimize<F: Fn(f64) -> f64>(f: F) -> f64 {
    let f0 = f(0.0);
    let step = 0.25;
    let (mut lo, mut hi);
    let (f_pos, f_neg) = (f(step), f(-step));
    if f_pos >= f0 && f_neg >= f0 {
        lo = -step;
        hi = step;
    } else {
        let sign = if f_pos < f_neg { 1.0 } else { -1.0 };
        let mut t_prev = 0.0f64;
        let mut t = sign * step;
        let mut ft = f(t);
        loop {
            let t_next = 2.0 * t;
            let f_next = f(t_next);
            if f_next >= ft || t_next.abs() > 1e12 {
                lo = t_prev.min(t_next);
                hi = t_prev.max(t_next);
                break;
            }
            t_prev = t;
            t = t_next;
            ft = f_next;
        }
    }
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if hi - lo < 1e-14 * (1.0 + lo.abs() + hi.abs()) {
            break;
        }
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = f(d);
        }
    }
    let t = 0.5 * (lo + hi);
    if f(t) < f0 {
        t
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Weak-solution audit
// ---------------------------------------------------------------------------

/// Re-verifies every step of a trajectory from scratch: the discrete
/// evolution equation `(u_k - u_{k-1})/tau = div(X_k)`, the per-edge
/// Fenchel-Young gaps of `X_k` against `du_k`, and for the sum kinds the
/// per-edge equality conditions of the stored split `(X1, X2)` including
/// the `|X2| <= 1` bound when q = 1.
pub fn audit_weak_solution(
    space: &Space,
    integrand: &Integrand,
    trajectory: &Trajectory,
    tol: f64,
) -> Result<AuditReport, CertifyError> {
    let mut report = AuditReport::default();
    let states = trajectory.states();
    for (k, cert) in trajectory.certificates().iter().enumerate() {
        let step = k + 1;
        let tau = trajectory.tau(k);
        let prev = &states[k];
        let next = &states[k + 1];
        let scale = 1.0 + prev.max_abs().max(next.max_abs());

        let div = space.divergence(&cert.x);
        let (mut worst_div, mut at_div) = (0.0f64, 0usize);
        for i in 0..space.vertex_count() {
            let r = ((next.values()[i] - prev.values()[i]) / tau - div.values()[i]).abs();
            if r > worst_div {
                worst_div = r;
                at_div = i;
            }
        }
        report.push(
            format!(
                "step {step} divergence (worst at vertex {})",
                space.vertex_ids()[at_div]
            ),
            worst_div / scale,
            tol,
        );

        let du = space.differential(next);
        let (mut worst_gap, mut at_gap) = (0.0f64, 0usize);
        for (e, (s, t)) in du.values().iter().zip(cert.x.values()).enumerate() {
            let phi = integrand.phi(*s);
            let conj = integrand.conjugate(*t);
            let gap = (phi + conj - s * t) / (1.0 + phi + conj);
            if gap > worst_gap {
                worst_gap = gap;
                at_gap = e;
            }
        }
        report.push(
            format!("step {step} fenchel gap (worst at edge {at_gap})"),
            worst_gap,
            tol,
        );

        if integrand.has_split() {
            let (x1, x2) = cert
                .split
                .as_ref()
                .ok_or(CertifyError::MissingCertificates(step))?;
            // stored split must recombine to the certificate field
            let mut recombine = 0.0f64;
            for ((a, b), t) in x1.values().iter().zip(x2.values()).zip(cert.x.values()) {
                recombine = recombine.max((a + b - t).abs() / (1.0 + t.abs()));
            }
            report.push(format!("step {step} split recombination"), recombine, tol);

            let p = integrand.p();
            let pc = integrand.p_conj();
            let q1 = integrand.is_q1();
            let q = integrand.q().expect("sum kind has q");

            let (mut worst_p, mut at_p) = (0.0f64, 0usize);
            let (mut worst_q, mut at_q) = (0.0f64, 0usize);
            let mut worst_box = 0.0f64;
            for e in 0..space.edge_count() {
                let s = du.values()[e];
                let a = s.abs();
                let x1e = x1.values()[e];
                let x2e = x2.values()[e];

                let pair = s * x1e;
                let norm = x1e.abs().powf(pc);
                let target = a.powf(p);
                let dev = (pair - norm).abs().max((pair - target).abs())
                    / (1.0 + pair.abs() + norm + target);
                if dev > worst_p {
                    worst_p = dev;
                    at_p = e;
                }

                if q1 {
                    worst_box = worst_box.max(x2e.abs() - 1.0);
                    let dev = (s * x2e - a).abs() / (1.0 + 2.0 * a);
                    if dev > worst_q {
                        worst_q = dev;
                        at_q = e;
                    }
                } else {
                    let qc = q / (q - 1.0);
                    let pair = s * x2e;
                    let norm = x2e.abs().powf(qc);
                    let target = a.powf(q);
                    let dev = (pair - norm).abs().max((pair - target).abs())
                        / (1.0 + pair.abs() + norm + target);
                    if dev > worst_q {
                        worst_q = dev;
                        at_q = e;
                    }
                }
            }
            report.push(
                format!("step {step} split p-part (worst at edge {at_p})"),
                worst_p,
                tol,
            );
            report.push(
                format!("step {step} split q-part (worst at edge {at_q})"),
                worst_q,
                tol,
            );
            if q1 {
                report.push(
                    format!("step {step} split sup bound"),
                    worst_box.max(0.0),
                    tol,
                );
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Variational inequality
// ---------------------------------------------------------------------------

/// Tests the integral inequality satisfied by the flow against one test
/// trajectory `v` on the same grid:
///
/// ```text
/// sum_k tau_k [ <Dv_k, v_k - u_k>_nu + F(v_k) - F(u_k) ]
///    >= 1/2 ||(v-u)(T)||^2 - 1/2 ||v(0) - u(0)||^2
/// ```
///
/// with backward differences `Dv_k = (v_k - v_{k-1})/tau_k` and all
/// integrands evaluated at the right endpoints of the implicit-Euler grid,
/// which makes the inequality exact up to certificate residuals.
pub fn variational_inequality_check(
    space: &Space,
    integrand: &Integrand,
    trajectory: &Trajectory,
    test_states: &[VertexFunction],
    tol: f64,
) -> Result<AuditReport, CertifyError> {
    let grid = trajectory.times().len();
    if test_states.len() != grid {
        return Err(CertifyError::GridMismatch {
            got: test_states.len(),
            want: grid,
        });
    }
    let states = trajectory.states();
    let mut lhs = 0.0;
    for k in 1..grid {
        let tau = trajectory.tau(k - 1);
        let dv = VertexFunction::new(
            test_states[k]
                .values()
                .iter()
                .zip(test_states[k - 1].values())
                .map(|(a, b)| (a - b) / tau)
                .collect(),
        )?;
        let gap = VertexFunction::new(
            test_states[k]
                .values()
                .iter()
                .zip(states[k].values())
                .map(|(a, b)| a - b)
                .collect(),
        )?;
        let f_v = energy::functional(space, integrand, &test_states[k]).value;
        let f_u = trajectory.energies()[k];
        lhs += tau * (space.vertex_inner(&dv, &gap) + f_v - f_u);
    }
    let end_gap = VertexFunction::new(
        test_states[grid - 1]
            .values()
            .iter()
            .zip(states[grid - 1].values())
            .map(|(a, b)| a - b)
            .collect(),
    )?;
    let start_gap = VertexFunction::new(
        test_states[0]
            .values()
            .iter()
            .zip(states[0].values())
            .map(|(a, b)| a - b)
            .collect(),
    )?;
    let rhs = 0.5 * space.vertex_inner(&end_gap, &end_gap)
        - 0.5 * space.vertex_inner(&start_gap, &start_gap);

    let scale = 1.0 + lhs.abs() + rhs.abs();
    let mut report = AuditReport::default();
    report.push(
        "variational inequality margin".into(),
        (rhs - lhs).max(0.0) / scale,
        tol,
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// Complete accretivity
// ---------------------------------------------------------------------------

/// Which side of the axis the ramp rises on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RampOrientation {
    Positive,
    Negative,
    Odd,
}

/// Smoothstep-based ramp `T` rising on `[a, b]` (and/or its odd
/// reflection), scaled so that `0 <= T' <= 1`; `T` vanishes on a
/// neighborhood of zero since `a > 0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RampTestFn {
    a: f64,
    b: f64,
    orientation: RampOrientation,
}

impl RampTestFn {
    pub fn new(a: f64, b: f64, orientation: RampOrientation) -> Result<Self, CertifyError> {
        if !(0.0 < a && a < b) || !b.is_finite() {
            return Err(CertifyError::InvalidTestFn(format!(
                "need 0 < a < b, got a={a}, b={b}"
            )));
        }
        Ok(RampTestFn { a, b, orientation })
    }

    fn base(&self, s: f64) -> f64 {
        // smoothstep scaled by 2/3 so the slope peaks at exactly 1
        let w = self.b - self.a;
        if s <= self.a {
            0.0
        } else if s >= self.b {
            2.0 / 3.0 * w
        } else {
            let x = (s - self.a) / w;
            2.0 / 3.0 * w * x * x * (3.0 - 2.0 * x)
        }
    }

    fn base_slope(&self, s: f64) -> f64 {
        if s <= self.a || s >= self.b {
            0.0
        } else {
            let x = (s - self.a) / (self.b - self.a);
            4.0 * x * (1.0 - x)
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        match self.orientation {
            RampOrientation::Positive => self.base(s),
            RampOrientation::Negative => -self.base(-s),
            RampOrientation::Odd => self.base(s) - self.base(-s),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match self.orientation {
            RampOrientation::Positive => self.base_slope(s),
            RampOrientation::Negative => self.base_slope(-s),
            RampOrientation::Odd => self.base_slope(s) + self.base_slope(-s),
        }
    }
}

/// A certified member `(u, v)` of the flow operator's graph, manufactured
/// from one resolvent solve through `v = (g - u)/tau`.
#[derive(Debug, Clone)]
pub struct OperatorPair {
    pub u: VertexFunction,
    pub v: VertexFunction,
    pub residual: f64,
}

impl OperatorPair {
    pub fn from_resolvent(
        space: &Space,
        integrand: &Integrand,
        g: &VertexFunction,
        tau: f64,
        tol: f64,
    ) -> Result<Self, CertifyError> {
        let sol =
            solve_resolvent(&ResolventProblem::new(space, integrand, g, tau).with_tol(tol))?;
        let v = VertexFunction::new(
            g.values()
                .iter()
                .zip(sol.u.values())
                .map(|(gi, ui)| (gi - ui) / tau)
                .collect(),
        )?;
        let residual = sol.div_residual.max(sol.gap_residual);
        Ok(OperatorPair {
            u: sol.u,
            v,
            residual,
        })
    }

    /// Wraps stored values; the residual is whatever certification the
    /// caller can vouch for.
    pub fn from_parts(u: VertexFunction, v: VertexFunction, residual: f64) -> Self {
        OperatorPair { u, v, residual }
    }
}

/// The accretivity integral `sum_x nu T(u1-u2)(v1-v2)`; nonnegative for
/// certified pairs up to residual effects. Errors if a pair's stored
/// residual exceeds `certification_tol`.
pub fn accretivity_test(
    space: &Space,
    pair1: &OperatorPair,
    pair2: &OperatorPair,
    t_fn: &RampTestFn,
    certification_tol: f64,
) -> Result<f64, CertifyError> {
    for pair in [pair1, pair2] {
        if !(pair.residual <= certification_tol) {
            return Err(CertifyError::Uncertified {
                residual: pair.residual,
                tol: certification_tol,
            });
        }
    }
    let mut total = 0.0;
    for i in 0..space.vertex_count() {
        let du = pair1.u.values()[i] - pair2.u.values()[i];
        let dv = pair1.v.values()[i] - pair2.v.values()[i];
        total += space.nu(i) * t_fn.value(du) * dv;
    }
    Ok(total)
}

/// Scale reference for accretivity assertions: the same sum with every
/// factor in absolute value.
pub fn accretivity_scale(
    space: &Space,
    pair1: &OperatorPair,
    pair2: &OperatorPair,
    t_fn: &RampTestFn,
) -> f64 {
    let mut total = 1.0;
    for i in 0..space.vertex_count() {
        let du = pair1.u.values()[i] - pair2.u.values()[i];
        let dv = pair1.v.values()[i] - pair2.v.values()[i];
        total += space.nu(i) * t_fn.value(du).abs() * dv.abs();
    }
    total
}

// ---------------------------------------------------------------------------
// Bounded parallel map for audit trials
// ---------------------------------------------------------------------------

/// Applies `f` to every index with order-stable output, fanning out over
/// at most `METRICFLOW_THREADS` workers (default: available parallelism).
/// Results are identical to the sequential run regardless of thread count.
pub fn parallel_map<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    let cap = std::env::var("METRICFLOW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|v| v.get())
                .unwrap_or(1)
        });
    let workers = cap.min(count.max(1));
    if workers <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let mut slots: Vec<Option<R>> = (0..count).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots_ref = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = f(i);
                let mut guard = slots_ref.lock().expect("no poisoned workers");
                guard[i] = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every index visited"))
        .collect()
}
