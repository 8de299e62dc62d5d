//! Convex energy densities on edge fields and the induced functionals.
//!
//! Three families of pointwise densities are supported, all convex, even,
//! and vanishing at zero:
//!
//! * `p:P`      -- `phi(s) = |s|^p / p` with `p > 1`,
//! * `qp:Q,P`   -- `phi(s) = |s|^q/q + |s|^p/p` with `1 <= q < p`,
//! * `1p:P`     -- `phi(s) = |s| + |s|^p/p` (the `q = 1` limit).
//!
//! The energy of a cotangent field is `E(v) = sum_e m(e) phi(v(e))` and the
//! functional on vertex functions is `F(u) = E(du)`. Subdifferential
//! membership `X ∈ ∂E(v)` is certified per edge through the Fenchel-Young
//! gap `phi(v) + phi*(X) - v·X >= 0`, which vanishes exactly on
//! subdifferential pairs. Since fibers are one-dimensional, every pointwise
//! norm statement reduces to signed scalars and absolute values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::solve_increasing;
use crate::space::{CotangentField, Space, VectorField, VertexFunction};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("invalid integrand: {0}")]
    InvalidIntegrand(String),
    #[error("integrand {0} has no (q,p) split; only qp:Q,P and 1p:P do")]
    NotSplittable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrandKind {
    PPower,
    QPSum,
    OnePSum,
}

/// A pointwise convex energy density with validated exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integrand {
    kind: IntegrandKind,
    q: f64,
    p: f64,
}

impl Integrand {
    /// `phi(s) = |s|^p / p`, `p > 1`.
    pub fn p_power(p: f64) -> Result<Self, EnergyError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(EnergyError::InvalidIntegrand(format!(
                "p must be > 1, got {p}"
            )));
        }
        Ok(Integrand {
            kind: IntegrandKind::PPower,
            q: p,
            p,
        })
    }

    /// `phi(s) = |s|^q/q + |s|^p/p`, `1 <= q < p`.
    pub fn qp_sum(q: f64, p: f64) -> Result<Self, EnergyError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(EnergyError::InvalidIntegrand(format!(
                "p must be > 1, got {p}"
            )));
        }
        if !(q >= 1.0) || !(q < p) {
            return Err(EnergyError::InvalidIntegrand(format!(
                "need 1 <= q < p, got q={q}, p={p}"
            )));
        }
        Ok(Integrand {
            kind: IntegrandKind::QPSum,
            q,
            p,
        })
    }

    /// `phi(s) = |s| + |s|^p/p`, `p > 1`.
    pub fn one_p_sum(p: f64) -> Result<Self, EnergyError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(EnergyError::InvalidIntegrand(format!(
                "p must be > 1, got {p}"
            )));
        }
        Ok(Integrand {
            kind: IntegrandKind::OnePSum,
            q: 1.0,
            p,
        })
    }

    pub fn kind(&self) -> IntegrandKind {
        self.kind
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Lower exponent of the sum kinds; `None` for a pure p-power.
    pub fn q(&self) -> Option<f64> {
        match self.kind {
            IntegrandKind::PPower => None,
            _ => Some(self.q),
        }
    }

    /// Conjugate exponent `p' = p/(p-1)`.
    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// True for the kinds whose density has a first-power term, making
    /// `phi` nonsmooth at the origin.
    pub fn is_q1(&self) -> bool {
        match self.kind {
            IntegrandKind::PPower => false,
            IntegrandKind::OnePSum => true,
            IntegrandKind::QPSum => self.q == 1.0,
        }
    }

    pub fn has_split(&self) -> bool {
        self.kind != IntegrandKind::PPower
    }

    /// Density value `phi(s)`.
    pub fn phi(&self, s: f64) -> f64 {
        let a = s.abs();
        match self.kind {
            IntegrandKind::PPower => a.powf(self.p) / self.p,
            IntegrandKind::QPSum => a.powf(self.q) / self.q + a.powf(self.p) / self.p,
            IntegrandKind::OnePSum => a + a.powf(self.p) / self.p,
        }
    }

    /// Convex conjugate `phi*(t) = sup_s { s t - phi(s) }`. Closed form for
    /// the p-power and the q = 1 sums; for `qp` with `q > 1` the supremum is
    /// evaluated by a safeguarded monotone root-find on the optimality
    /// equation `s^{q-1} + s^{p-1} = |t|` (inner tolerance ~1e-15).
    /// Finite for every `t` on all three kinds.
    pub fn conjugate(&self, t: f64) -> f64 {
        let a = t.abs();
        match self.kind {
            IntegrandKind::PPower => {
                let pc = self.p_conj();
                a.powf(pc) / pc
            }
            _ if self.is_q1() => {
                let pc = self.p_conj();
                let excess = (a - 1.0).max(0.0);
                excess.powf(pc) / pc
            }
            IntegrandKind::QPSum => {
                if a == 0.0 {
                    return 0.0;
                }
                let s = self.conjugate_maximizer(a);
                a * s - self.phi(s)
            }
            IntegrandKind::OnePSum => unreachable!(),
        }
    }

    /// Maximizer of `s -> s a - phi(s)` over `s >= 0` for the smooth sum
    /// kind; also the derivative of the conjugate at `a > 0`.
    fn conjugate_maximizer(&self, a: f64) -> f64 {
        let (q, p) = (self.q, self.p);
        let hi = a.powf(1.0 / (p - 1.0)).max(1.0);
        solve_increasing(
            |s| s.powf(q - 1.0) + s.powf(p - 1.0) - a,
            Some(|s: f64| (q - 1.0) * s.powf(q - 2.0) + (p - 1.0) * s.powf(p - 2.0)),
            0.0,
            hi,
        )
    }

    /// Derivative `phi'(s)` where the density is differentiable. For the
    /// q = 1 kinds the origin is a kink; callers on the smooth path must
    /// not evaluate there.
    pub fn grad(&self, s: f64) -> f64 {
        let a = s.abs();
        let sign = if s >= 0.0 { 1.0 } else { -1.0 };
        match self.kind {
            IntegrandKind::PPower => sign * a.powf(self.p - 1.0),
            _ if self.is_q1() => {
                if s == 0.0 {
                    0.0
                } else {
                    sign * (1.0 + a.powf(self.p - 1.0))
                }
            }
            IntegrandKind::QPSum => sign * (a.powf(self.q - 1.0) + a.powf(self.p - 1.0)),
            IntegrandKind::OnePSum => unreachable!(),
        }
    }

    /// Second derivative clamped to `[0, cap]`, finite everywhere.
    pub(crate) fn curvature_clamped(&self, s: f64, cap: f64) -> f64 {
        let a = s.abs();
        let term = |exp: f64| -> f64 {
            if exp == 2.0 {
                1.0
            } else if a == 0.0 {
                if exp > 2.0 {
                    0.0
                } else {
                    cap
                }
            } else {
                ((exp - 1.0) * a.powf(exp - 2.0)).min(cap)
            }
        };
        let total = match self.kind {
            IntegrandKind::PPower => term(self.p),
            IntegrandKind::QPSum if !self.is_q1() => term(self.q) + term(self.p),
            // first-power part has zero curvature away from the kink
            _ => term(self.p),
        };
        total.min(cap)
    }

    /// Scalar proximal map `argmin_s { lambda phi(s) + (s-w)^2/2 }`.
    /// Closed form for `p = 2` and for the threshold part of the q = 1
    /// kinds; otherwise a safeguarded monotone solve.
    pub fn prox(&self, lambda: f64, w: f64) -> f64 {
        debug_assert!(lambda >= 0.0);
        if lambda == 0.0 {
            return w;
        }
        let a = w.abs();
        let sign = if w >= 0.0 { 1.0 } else { -1.0 };
        match self.kind {
            IntegrandKind::PPower => sign * self.prox_power_part(lambda, a),
            _ if self.is_q1() => {
                if a <= lambda {
                    0.0
                } else {
                    sign * self.prox_power_part(lambda, a - lambda)
                }
            }
            IntegrandKind::QPSum => {
                if a == 0.0 {
                    return 0.0;
                }
                let (q, p) = (self.q, self.p);
                let root = solve_increasing(
                    |s| s + lambda * (s.powf(q - 1.0) + s.powf(p - 1.0)) - a,
                    Some(|s: f64| {
                        1.0 + lambda * ((q - 1.0) * s.powf(q - 2.0) + (p - 1.0) * s.powf(p - 2.0))
                    }),
                    0.0,
                    a,
                );
                sign * root
            }
            IntegrandKind::OnePSum => unreachable!(),
        }
    }

    /// Nonnegative solution of `s + lambda s^{p-1} = a`.
    fn prox_power_part(&self, lambda: f64, a: f64) -> f64 {
        debug_assert!(a >= 0.0);
        if a == 0.0 {
            return 0.0;
        }
        let p = self.p;
        if p == 2.0 {
            return a / (1.0 + lambda);
        }
        solve_increasing(
            |s| s + lambda * s.powf(p - 1.0) - a,
            Some(|s: f64| 1.0 + lambda * (p - 1.0) * s.powf(p - 2.0)),
            0.0,
            a,
        )
    }

    /// Spec string of the form `p:2`, `qp:1.5,3`, `1p:2`.
    pub fn spec_string(&self) -> String {
        match self.kind {
            IntegrandKind::PPower => format!("p:{}", self.p),
            IntegrandKind::QPSum => format!("qp:{},{}", self.q, self.p),
            IntegrandKind::OnePSum => format!("1p:{}", self.p),
        }
    }
}

impl std::fmt::Display for Integrand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.spec_string())
    }
}

impl std::str::FromStr for Integrand {
    type Err = EnergyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (tag, rest) = s
            .split_once(':')
            .ok_or_else(|| EnergyError::InvalidIntegrand(format!("missing ':' in {s:?}")))?;
        let parse = |v: &str| -> Result<f64, EnergyError> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| EnergyError::InvalidIntegrand(format!("bad exponent {v:?} in {s:?}")))
        };
        match tag {
            "p" => Integrand::p_power(parse(rest)?),
            "1p" => Integrand::one_p_sum(parse(rest)?),
            "qp" => {
                let (q, p) = rest.split_once(',').ok_or_else(|| {
                    EnergyError::InvalidIntegrand(format!("qp needs two exponents in {s:?}"))
                })?;
                Integrand::qp_sum(parse(q)?, parse(p)?)
            }
            _ => Err(EnergyError::InvalidIntegrand(format!(
                "unknown integrand tag {tag:?} (expected p, qp, or 1p)"
            ))),
        }
    }
}

/// Energy value together with the per-edge weighted contributions
/// `m(e) phi(v(e))`; the value is their sum.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub value: f64,
    pub per_edge: Vec<f64>,
}

/// `E(v) = sum_e m(e) phi(v(e))`.
pub fn energy(space: &Space, integrand: &Integrand, v: &CotangentField) -> EnergyReport {
    let per_edge: Vec<f64> = space
        .edges()
        .iter()
        .zip(v.values())
        .map(|(e, s)| e.m * integrand.phi(*s))
        .collect();
    EnergyReport {
        value: per_edge.iter().sum(),
        per_edge,
    }
}

/// `F(u) = E(du)`; finite for every vertex function on a finite space.
pub fn functional(space: &Space, integrand: &Integrand, u: &VertexFunction) -> EnergyReport {
    energy(space, integrand, &space.differential(u))
}

/// True iff `E(v) >= C ||v||_p^p` (with a 1e-12 relative slack so the
/// sharp constant `C = 1/p` passes at equality).
pub fn coercivity_check(space: &Space, integrand: &Integrand, v: &CotangentField, c: f64) -> bool {
    let value = energy(space, integrand, v).value;
    let norm_p = space
        .lp_norm(v.as_ref(), integrand.p())
        .expect("p > 1 is a valid exponent");
    let bound = c * norm_p.powf(integrand.p());
    value >= bound - 1e-12 * (1.0 + bound.abs())
}

/// Per-edge Fenchel-Young gaps `phi(v(e)) + phi*(X(e)) - v(e) X(e)`.
/// Each gap is nonnegative up to rounding, and `X ∈ ∂E(v)` holds exactly
/// when every gap vanishes.
pub fn subdifferential_residual(
    _space: &Space,
    integrand: &Integrand,
    v: &CotangentField,
    x: &VectorField,
) -> Vec<f64> {
    v.values()
        .iter()
        .zip(x.values())
        .map(|(s, t)| integrand.phi(*s) + integrand.conjugate(*t) - s * t)
        .collect()
}

/// Per-edge residuals of the two-field decomposition `X = X1 + X2`.
/// All entries are normalized except `box_excess`, which is the raw
/// overshoot `(|X2| - 1)+` of the q = 1 bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitEdgeResidual {
    /// Deviation in the p-part equality pair `v X1 = |X1|^{p'} = |v|^p`.
    pub p_part: f64,
    /// Deviation in the q-part equalities (`v X2 = |X2|^{q'} = |v|^q` for
    /// q > 1, or `v X2 = |v|` for q = 1).
    pub q_part: f64,
    /// `(|X2| - 1)+` for q = 1; zero for q > 1.
    pub box_excess: f64,
}

impl SplitEdgeResidual {
    pub fn max(&self) -> f64 {
        self.p_part.max(self.q_part).max(self.box_excess)
    }
}

/// Decomposition `X = X1 + X2` of a subdifferential candidate, with
/// `X1(e) = |v(e)|^{p-2} v(e)` the p-part gradient and the per-edge
/// residuals of the membership conditions on both parts.
#[derive(Debug, Clone)]
pub struct SplitCertificate {
    pub x1: VectorField,
    pub x2: VectorField,
    pub per_edge: Vec<SplitEdgeResidual>,
}

impl SplitCertificate {
    pub fn max_residual(&self) -> f64 {
        self.per_edge.iter().map(|r| r.max()).fold(0.0, f64::max)
    }

    pub fn is_certificate(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

/// Splits a candidate `X` for `∂E(v)` of a sum kind into its p-part and
/// q-part and measures the membership residuals of each. A residual above
/// tolerance means `X` is not a certificate; that is reported, not raised.
pub fn split_certificate(
    _space: &Space,
    integrand: &Integrand,
    v: &CotangentField,
    x: &VectorField,
) -> Result<SplitCertificate, EnergyError> {
    if !integrand.has_split() {
        return Err(EnergyError::NotSplittable(integrand.spec_string()));
    }
    let p = integrand.p();
    let pc = integrand.p_conj();
    let q1 = integrand.is_q1();
    let q = integrand.q().expect("sum kind has q");
    let qc = if q1 { f64::INFINITY } else { q / (q - 1.0) };

    let mut x1_vals = Vec::with_capacity(v.len());
    let mut x2_vals = Vec::with_capacity(v.len());
    let mut per_edge = Vec::with_capacity(v.len());
    for (s, t) in v.values().iter().zip(x.values()) {
        let a = s.abs();
        let x1 = if a == 0.0 { 0.0 } else { s * a.powf(p - 2.0) };
        let x2 = t - x1;
        x1_vals.push(x1);
        x2_vals.push(x2);

        let rel = |dev: f64, scale: f64| dev / (1.0 + scale);
        let p_pair = s * x1;
        let p_norm = x1.abs().powf(pc);
        let p_target = a.powf(p);
        let p_part = rel(
            (p_pair - p_norm).abs().max((p_pair - p_target).abs()),
            p_pair.abs() + p_norm + p_target,
        );

        let (q_part, box_excess) = if q1 {
            let pair = rel((s * x2 - a).abs(), 2.0 * a);
            (pair, (x2.abs() - 1.0).max(0.0))
        } else {
            let q_pair = s * x2;
            let q_norm = x2.abs().powf(qc);
            let q_target = a.powf(q);
            (
                rel(
                    (q_pair - q_norm).abs().max((q_pair - q_target).abs()),
                    q_pair.abs() + q_norm + q_target,
                ),
                0.0,
            )
        };
        per_edge.push(SplitEdgeResidual {
            p_part,
            q_part,
            box_excess,
        });
    }

    Ok(SplitCertificate {
        x1: VectorField::new(x1_vals).expect("finite split"),
        x2: VectorField::new(x2_vals).expect("finite split"),
        per_edge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Space;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn two_node() -> Space {
        Space::build(&[("a", 1.0), ("b", 1.0)], &[("a", "b", 1.0)]).unwrap()
    }

    fn all_kinds() -> Vec<Integrand> {
        vec![
            Integrand::p_power(1.5).unwrap(),
            Integrand::p_power(2.0).unwrap(),
            Integrand::p_power(3.0).unwrap(),
            Integrand::qp_sum(1.5, 3.0).unwrap(),
            Integrand::qp_sum(1.0, 2.0).unwrap(),
            Integrand::one_p_sum(2.0).unwrap(),
            Integrand::one_p_sum(3.0).unwrap(),
        ]
    }

    #[test]
    fn constructor_validation() {
        assert!(Integrand::p_power(1.0).is_err());
        assert!(Integrand::p_power(0.5).is_err());
        assert!(Integrand::qp_sum(0.9, 2.0).is_err());
        assert!(Integrand::qp_sum(2.0, 2.0).is_err());
        assert!(Integrand::one_p_sum(1.0).is_err());
        assert!(Integrand::qp_sum(1.0, 2.0).is_ok());
    }

    #[test]
    fn spec_string_round_trip() {
        for spec in ["p:2", "p:1.5", "qp:1.5,3", "1p:2"] {
            let i: Integrand = spec.parse().unwrap();
            assert_eq!(i.spec_string(), spec);
        }
        assert!("p:0.5".parse::<Integrand>().is_err());
        assert!("qp:3".parse::<Integrand>().is_err());
        assert!("x:2".parse::<Integrand>().is_err());
        assert!("2".parse::<Integrand>().is_err());
    }

    #[test]
    fn energy_examples() {
        let s = two_node();
        let zero = CotangentField::zeros(1);
        for i in all_kinds() {
            assert_eq!(energy(&s, &i, &zero).value, 0.0);
        }
        let one = CotangentField::new(vec![1.0]).unwrap();
        let p2 = Integrand::p_power(2.0).unwrap();
        assert!((energy(&s, &p2, &one).value - 0.5).abs() < 1e-15);
        let qp12 = Integrand::qp_sum(1.0, 2.0).unwrap();
        assert!((energy(&s, &qp12, &one).value - 1.5).abs() < 1e-15);
    }

    #[test]
    fn functional_examples() {
        let s = two_node();
        for i in all_kinds() {
            let c = functional(&s, &i, &VertexFunction::constant(4.2, 2));
            assert_eq!(c.value, 0.0);
        }
        for p in [1.5, 2.0, 3.0] {
            let i = Integrand::p_power(p).unwrap();
            let u = VertexFunction::new(vec![0.0, 1.0]).unwrap();
            assert!((functional(&s, &i, &u).value - 1.0 / p).abs() < 1e-15);
        }
        let i = Integrand::one_p_sum(2.0).unwrap();
        let u = VertexFunction::new(vec![0.0, 2.0]).unwrap();
        assert!((functional(&s, &i, &u).value - 4.0).abs() < 1e-15);
    }

    #[test]
    fn energy_report_sums_per_edge() {
        let s = Space::build(
            &[("a", 1.0), ("b", 1.0), ("c", 1.0)],
            &[("a", "b", 0.5), ("b", "c", 2.0)],
        )
        .unwrap();
        let v = CotangentField::new(vec![1.0, -2.0]).unwrap();
        for i in all_kinds() {
            let r = energy(&s, &i, &v);
            assert!(r.per_edge.iter().all(|c| *c >= 0.0));
            let total: f64 = r.per_edge.iter().sum();
            assert!((r.value - total).abs() < 1e-15);
        }
    }

    #[test]
    fn conjugate_p2_example() {
        let i = Integrand::p_power(2.0).unwrap();
        assert!((i.conjugate(3.0) - 4.5).abs() < 1e-15);
    }

    #[test]
    fn conjugate_zero_is_zero() {
        for i in all_kinds() {
            assert_eq!(i.conjugate(0.0), 0.0);
        }
    }

    #[test]
    fn conjugate_one_p_sum_example_matches_grid_sup() {
        let i = Integrand::one_p_sum(2.0).unwrap();
        let closed = i.conjugate(3.0);
        assert!((closed - 2.0).abs() < 1e-12);
        // scalar brute force over an s-grid
        let mut best = f64::NEG_INFINITY;
        let steps = 400_000;
        for k in 0..=steps {
            let s = -10.0 + 20.0 * (k as f64) / (steps as f64);
            best = best.max(3.0 * s - i.phi(s));
        }
        assert!((closed - best).abs() < 1e-7);
    }

    #[test]
    fn qp_conjugate_matches_grid_sup() {
        let i = Integrand::qp_sum(1.5, 3.0).unwrap();
        for t in [-4.0, -0.7, 0.3, 1.0, 2.5, 8.0] {
            let val = i.conjugate(t);
            let mut best = f64::NEG_INFINITY;
            let steps = 400_000;
            for k in 0..=steps {
                let s = -10.0 + 20.0 * (k as f64) / (steps as f64);
                best = best.max(t * s - i.phi(s));
            }
            assert!((val - best).abs() < 1e-7, "t={t}: {val} vs {best}");
        }
    }

    #[test]
    fn fenchel_young_gap_nonnegative_on_grid() {
        for i in all_kinds() {
            for a in -20..=20 {
                for b in -20..=20 {
                    let s = a as f64 / 2.0;
                    let t = b as f64 / 2.0;
                    let gap = i.phi(s) + i.conjugate(t) - s * t;
                    assert!(gap >= -1e-14, "{}: phi({s})+phi*({t})-st = {gap}", i);
                }
            }
        }
    }

    #[test]
    fn biconjugate_recovers_phi() {
        // numeric phi** via sup over a refined t-grid; all kinds are convex
        // and lower semicontinuous so phi** = phi.
        for i in all_kinds() {
            for k in 0..=24 {
                let s = -3.0 + 6.0 * (k as f64) / 24.0;
                let mut best = f64::NEG_INFINITY;
                let t_range = 1.0 + 3.0f64.powf(i.p() - 1.0) + 3.0;
                let steps = 200_000;
                for j in 0..=steps {
                    let t = -t_range + 2.0 * t_range * (j as f64) / (steps as f64);
                    best = best.max(s * t - i.conjugate(t));
                }
                assert!(
                    (best - i.phi(s)).abs() < 1e-8,
                    "{}: phi**({s})={best} phi={}",
                    i,
                    i.phi(s)
                );
            }
        }
    }

    #[test]
    fn energy_is_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let s = Space::build(
            &[("a", 1.0), ("b", 0.7), ("c", 1.3)],
            &[("a", "b", 1.1), ("b", "c", 0.6), ("a", "c", 1.9)],
        )
        .unwrap();
        for i in all_kinds() {
            for _ in 0..50 {
                let a = CotangentField::new((0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
                    .unwrap();
                let b = CotangentField::new((0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
                    .unwrap();
                let lambda: f64 = rng.random_range(0.0..1.0);
                let mix = CotangentField::new(
                    a.values()
                        .iter()
                        .zip(b.values())
                        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
                        .collect(),
                )
                .unwrap();
                let lhs = energy(&s, &i, &mix).value;
                let rhs =
                    lambda * energy(&s, &i, &a).value + (1.0 - lambda) * energy(&s, &i, &b).value;
                assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }

    #[test]
    fn coercivity_constant_one_over_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let s = Space::build(
            &[("a", 1.0), ("b", 0.7), ("c", 1.3)],
            &[("a", "b", 1.1), ("b", "c", 0.6)],
        )
        .unwrap();
        for i in all_kinds() {
            for _ in 0..30 {
                let v = CotangentField::new((0..2).map(|_| rng.random_range(-4.0..4.0)).collect())
                    .unwrap();
                assert!(coercivity_check(&s, &i, &v, 1.0 / i.p()));
            }
        }
        // strictness of the constant
        let two = two_node();
        let v = CotangentField::new(vec![1.0]).unwrap();
        let p2 = Integrand::p_power(2.0).unwrap();
        assert!(!coercivity_check(&two, &p2, &v, 1.0));
        let qp = Integrand::qp_sum(1.0, 2.0).unwrap();
        assert!(coercivity_check(&two, &qp, &v, 0.5));
    }

    #[test]
    fn subdifferential_residual_examples() {
        let s = two_node();
        let p2 = Integrand::p_power(2.0).unwrap();
        let v = CotangentField::new(vec![2.0]).unwrap();
        let gap = subdifferential_residual(&s, &p2, &v, &VectorField::new(vec![2.0]).unwrap());
        assert!(gap[0].abs() < 1e-14);
        let gap = subdifferential_residual(&s, &p2, &v, &VectorField::new(vec![1.0]).unwrap());
        assert!((gap[0] - 0.5).abs() < 1e-14);

        let op = Integrand::one_p_sum(2.0).unwrap();
        let v0 = CotangentField::zeros(1);
        let gap = subdifferential_residual(&s, &op, &v0, &VectorField::new(vec![0.7]).unwrap());
        assert!(gap[0].abs() < 1e-14);
    }

    #[test]
    fn gradient_formula_has_zero_gap_where_smooth() {
        let s = two_node();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for i in all_kinds() {
            for _ in 0..200 {
                let val: f64 = rng.random_range(-4.0..4.0);
                if i.is_q1() && val.abs() < 1e-3 {
                    continue;
                }
                let v = CotangentField::new(vec![val]).unwrap();
                let x = VectorField::new(vec![i.grad(val)]).unwrap();
                let gap = subdifferential_residual(&s, &i, &v, &x);
                assert!(
                    gap[0].abs() <= 1e-12 * (1.0 + i.phi(val).abs()),
                    "{}: gap {} at {val}",
                    i,
                    gap[0]
                );
            }
        }
    }

    #[test]
    fn split_certificate_examples() {
        let s = two_node();
        let op = Integrand::one_p_sum(2.0).unwrap();

        let v = CotangentField::new(vec![1.0]).unwrap();
        let x = VectorField::new(vec![2.0]).unwrap();
        let cert = split_certificate(&s, &op, &v, &x).unwrap();
        assert_eq!(cert.x1.values(), &[1.0]);
        assert_eq!(cert.x2.values(), &[1.0]);
        assert!(cert.max_residual() < 1e-14);

        let v = CotangentField::zeros(1);
        let x = VectorField::new(vec![0.5]).unwrap();
        let cert = split_certificate(&s, &op, &v, &x).unwrap();
        assert_eq!(cert.x1.values(), &[0.0]);
        assert_eq!(cert.x2.values(), &[0.5]);
        assert!(cert.is_certificate(1e-12));

        let v = CotangentField::new(vec![1.0]).unwrap();
        let x = VectorField::new(vec![3.0]).unwrap();
        let cert = split_certificate(&s, &op, &v, &x).unwrap();
        assert_eq!(cert.x2.values(), &[2.0]);
        assert!(!cert.is_certificate(1e-6));
        assert!((cert.per_edge[0].box_excess - 1.0).abs() < 1e-15);
    }

    #[test]
    fn split_rejects_pure_power() {
        let s = two_node();
        let p2 = Integrand::p_power(2.0).unwrap();
        let v = CotangentField::zeros(1);
        let x = VectorField::zeros(1);
        assert!(matches!(
            split_certificate(&s, &p2, &v, &x),
            Err(EnergyError::NotSplittable(_))
        ));
    }

    #[test]
    fn split_of_gradient_is_exact_for_qp() {
        let qp = Integrand::qp_sum(1.5, 3.0).unwrap();
        let s = two_node();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..100 {
            let val: f64 = rng.random_range(-3.0..3.0);
            let v = CotangentField::new(vec![val]).unwrap();
            let x = VectorField::new(vec![qp.grad(val)]).unwrap();
            let cert = split_certificate(&s, &qp, &v, &x).unwrap();
            assert!(cert.max_residual() < 1e-12, "residual {}", cert.max_residual());
        }
    }

    #[test]
    fn prox_satisfies_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for i in all_kinds() {
            for _ in 0..300 {
                let lambda: f64 = rng.random_range(0.001..10.0);
                let w: f64 = rng.random_range(-8.0..8.0);
                let s = i.prox(lambda, w);
                // golden-section oracle on the prox objective
                let obj = |x: f64| lambda * i.phi(x) + 0.5 * (x - w) * (x - w);
                let (mut lo, mut hi) = (-9.0, 9.0);
                let phi_ratio = (5f64.sqrt() - 1.0) / 2.0;
                let mut c = hi - phi_ratio * (hi - lo);
                let mut d = lo + phi_ratio * (hi - lo);
                for _ in 0..120 {
                    if obj(c) < obj(d) {
                        hi = d;
                    } else {
                        lo = c;
                    }
                    c = hi - phi_ratio * (hi - lo);
                    d = lo + phi_ratio * (hi - lo);
                }
                // golden section resolves a smooth minimum only to ~sqrt(eps)
                let oracle = 0.5 * (lo + hi);
                assert!(
                    (s - oracle).abs() < 2e-7 * (1.0 + w.abs()),
                    "{}: prox({lambda},{w}) = {s}, oracle {oracle}",
                    i
                );
            }
        }
    }
}
