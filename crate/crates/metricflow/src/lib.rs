//! Certified gradient flows on finite weighted graphs.
//!
//! The crate treats a finite weighted graph as a discrete metric measure
//! space and evolves vertex functions by the implicit-Euler gradient flow
//! of convex edge energies with p- or (q,p)-growth (heat flow, p-Laplacian,
//! (q,p)-Laplacian). Every accepted step carries a dual vector-field
//! certificate: a field `X` with `u_t = div X` and `X ∈ ∂E(du)`, the
//! membership checked per edge through Fenchel-Young gaps. Independent
//! verification (a brute-force resolvent oracle, weak-solution audits,
//! order and accretivity tests) lives in [`certify`].

// validation guards use `!(x > 0.0)` so that NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod corpus;
pub mod energy;
pub mod flow;
pub mod io;
mod num;
pub mod resolvent;
pub mod space;

pub use flow::{FlowConfig, StepCertificate, Trajectory};
pub use resolvent::{ResolventProblem, ResolventSolution};
pub use energy::{EnergyReport, Integrand, IntegrandKind, SplitCertificate};
pub use space::{CotangentField, Space, VectorField, VertexFunction};
