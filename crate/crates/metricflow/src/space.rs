//! Finite discrete metric measure space: a weighted graph with a vertex
//! measure `nu` and an oriented edge measure `m`, together with the
//! differential, divergence, duality pairing, and weighted norms.
//!
//! Vertices carry the measure `nu` and functions `u`; oriented edges carry
//! the measure `m` and the edge-indexed fields (differentials and vector
//! fields). The differential is `du(e) = u(head) - u(tail)` and the
//! divergence is its negative adjoint, fixed by the Gauss-Green identity
//!
//! ```text
//! sum_x nu(x) g(x) div(X)(x) = - sum_e m(e) dg(e) X(e)   for all g.
//! ```
//!
//! Orientation is fixed at construction. Flipping an edge flips the sign of
//! both `du(e)` and `X(e)`, so every quantity computed here is
//! orientation-independent. Edge lengths are absorbed into `m(e)`: there is
//! exactly one weight per edge.
//!
//! Note that the discrete differential does not satisfy an exact chain rule:
//! `d(phi ∘ u)(e)` and `phi'(u)·du(e)` differ in general, because an edge
//! increment is a finite difference. Downstream order-theoretic tests rely
//! on per-edge monotonicity instead.

use std::collections::HashMap;

use thiserror::Error;

/// Errors from space construction and the basic operations.
#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("duplicate vertex id {0:?}")]
    DuplicateVertex(String),
    #[error("non-positive measure {measure} for {what} {id:?}")]
    NonPositiveMeasure {
        what: &'static str,
        id: String,
        measure: f64,
    },
    #[error("self-loop at vertex {0:?}")]
    SelfLoop(String),
    #[error("unknown endpoint id {0:?}")]
    UnknownVertex(String),
    #[error("{what} has {got} entries, space has {want}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        want: usize,
    },
    #[error("non-finite entry {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("invalid norm exponent {0}; need r >= 1")]
    InvalidExponent(f64),
}

/// An oriented edge: ordered pair of distinct vertex indices plus its measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub m: f64,
}

/// Finite weighted graph acting as a discrete metric measure space.
///
/// Immutable after construction; all operations on it are pure functions,
/// so a `Space` can be shared read-only across threads.
#[derive(Debug, Clone)]
pub struct Space {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    nu: Vec<f64>,
    edges: Vec<Edge>,
    /// Per-vertex list of (edge index, +1 for tail / -1 for head).
    incident: Vec<Vec<(usize, f64)>>,
}

impl Space {
    /// Builds a space from `(id, nu)` vertex pairs and `(tail, head, m)`
    /// edge triples. Vertex and edge order is insertion order and is the
    /// index order used by all field types. Parallel edges are permitted,
    /// self-loops are not.
    pub fn build(
        vertices: &[(&str, f64)],
        edges: &[(&str, &str, f64)],
    ) -> Result<Self, SpaceError> {
        let mut ids = Vec::with_capacity(vertices.len());
        let mut index = HashMap::with_capacity(vertices.len());
        let mut nu = Vec::with_capacity(vertices.len());
        for &(id, measure) in vertices {
            if index.contains_key(id) {
                return Err(SpaceError::DuplicateVertex(id.to_owned()));
            }
            if !(measure > 0.0) || !measure.is_finite() {
                return Err(SpaceError::NonPositiveMeasure {
                    what: "vertex",
                    id: id.to_owned(),
                    measure,
                });
            }
            index.insert(id.to_owned(), ids.len());
            ids.push(id.to_owned());
            nu.push(measure);
        }

        let mut built = Vec::with_capacity(edges.len());
        for &(tail, head, m) in edges {
            let t = *index
                .get(tail)
                .ok_or_else(|| SpaceError::UnknownVertex(tail.to_owned()))?;
            let h = *index
                .get(head)
                .ok_or_else(|| SpaceError::UnknownVertex(head.to_owned()))?;
            if t == h {
                return Err(SpaceError::SelfLoop(tail.to_owned()));
            }
            if !(m > 0.0) || !m.is_finite() {
                return Err(SpaceError::NonPositiveMeasure {
                    what: "edge",
                    id: format!("{tail}->{head}"),
                    measure: m,
                });
            }
            built.push(Edge { tail: t, head: h, m });
        }

        let mut incident = vec![Vec::new(); ids.len()];
        for (e, edge) in built.iter().enumerate() {
            incident[edge.tail].push((e, 1.0));
            incident[edge.head].push((e, -1.0));
        }

        Ok(Space {
            ids,
            index,
            nu,
            edges: built,
            incident,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn nu(&self, x: usize) -> f64 {
        self.nu[x]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Total vertex measure `nu(X)`.
    pub fn total_vertex_measure(&self) -> f64 {
        self.nu.iter().sum()
    }

    /// Total edge measure `sum_e m(e)`.
    pub fn total_edge_measure(&self) -> f64 {
        self.edges.iter().map(|e| e.m).sum()
    }

    /// `du(e) = u(head) - u(tail)` on every edge. Linear in `u`; vanishes
    /// exactly on functions constant per connected component.
    pub fn differential(&self, u: &VertexFunction) -> CotangentField {
        debug_assert_eq!(u.len(), self.vertex_count());
        let values = self
            .edges
            .iter()
            .map(|e| u.values[e.head] - u.values[e.tail])
            .collect();
        CotangentField { values }
    }

    /// The divergence fixed by the Gauss-Green identity:
    /// `div(X)(x) = (1/nu(x)) (sum_{tail(e)=x} m X - sum_{head(e)=x} m X)`.
    /// Pairs to zero against constants, so `sum_x nu(x) div(X)(x) = 0`.
    pub fn divergence(&self, x_field: &VectorField) -> VertexFunction {
        debug_assert_eq!(x_field.len(), self.edge_count());
        let mut values = vec![0.0; self.vertex_count()];
        for (v, list) in self.incident.iter().enumerate() {
            let mut acc = 0.0;
            for &(e, sign) in list {
                acc += sign * self.edges[e].m * x_field.values[e];
            }
            values[v] = acc / self.nu[v];
        }
        VertexFunction { values }
    }

    /// Duality pairing `sum_e m(e) v(e) X(e)`, the discrete `∫ v(X) dnu`.
    pub fn pairing(&self, v: &CotangentField, x_field: &VectorField) -> f64 {
        debug_assert_eq!(v.len(), self.edge_count());
        debug_assert_eq!(x_field.len(), self.edge_count());
        self.edges
            .iter()
            .zip(v.values.iter().zip(&x_field.values))
            .map(|(e, (a, b))| e.m * a * b)
            .sum()
    }

    /// Weighted L^r norm of an edge field: `(sum_e m(e)|f(e)|^r)^{1/r}`.
    /// For `r = infinity` this is the unweighted max over edges (the
    /// essential supremum of a fully supported measure ignores weights).
    pub fn lp_norm(&self, field: &[f64], r: f64) -> Result<f64, SpaceError> {
        debug_assert_eq!(field.len(), self.edge_count());
        if r.is_infinite() && r > 0.0 {
            return Ok(field.iter().fold(0.0, |acc, v| acc.max(v.abs())));
        }
        if !(r >= 1.0) {
            return Err(SpaceError::InvalidExponent(r));
        }
        let total: f64 = self
            .edges
            .iter()
            .zip(field)
            .map(|(e, v)| e.m * v.abs().powf(r))
            .sum();
        Ok(total.powf(1.0 / r))
    }

    /// Weighted vertex L^r norm `(sum_x nu(x)|u(x)|^r)^{1/r}`; unweighted
    /// max for `r = infinity`.
    pub fn vertex_norm(&self, u: &VertexFunction, r: f64) -> Result<f64, SpaceError> {
        debug_assert_eq!(u.len(), self.vertex_count());
        if r.is_infinite() && r > 0.0 {
            return Ok(u.values.iter().fold(0.0, |acc, v| acc.max(v.abs())));
        }
        if !(r >= 1.0) {
            return Err(SpaceError::InvalidExponent(r));
        }
        let total: f64 = self
            .nu
            .iter()
            .zip(&u.values)
            .map(|(nu, v)| nu * v.abs().powf(r))
            .sum();
        Ok(total.powf(1.0 / r))
    }

    /// nu-weighted inner product on vertex functions.
    pub fn vertex_inner(&self, a: &VertexFunction, b: &VertexFunction) -> f64 {
        self.nu
            .iter()
            .zip(a.values.iter().zip(&b.values))
            .map(|(nu, (x, y))| nu * x * y)
            .sum()
    }

    /// `sum_x nu(x) u(x)`, the conserved mass of the flows.
    pub fn mass(&self, u: &VertexFunction) -> f64 {
        self.nu.iter().zip(&u.values).map(|(nu, v)| nu * v).sum()
    }

    /// Weighted r-norm of the positive part `(u)+`; unweighted max for
    /// `r = infinity`.
    pub fn positive_part_norm(&self, u: &VertexFunction, r: f64) -> Result<f64, SpaceError> {
        let clipped = VertexFunction {
            values: u.values.iter().map(|v| v.max(0.0)).collect(),
        };
        self.vertex_norm(&clipped, r)
    }

    /// Connected-component label per vertex (edges are undirected for
    /// connectivity purposes).
    pub fn components(&self) -> Vec<usize> {
        let n = self.vertex_count();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &(e, _) in &self.incident[v] {
                    let other = if self.edges[e].tail == v {
                        self.edges[e].head
                    } else {
                        self.edges[e].tail
                    };
                    if label[other] == usize::MAX {
                        label[other] = next;
                        stack.push(other);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Real-valued function on the vertices; the state of the flows.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexFunction {
    values: Vec<f64>,
}

impl VertexFunction {
    /// Validates that every entry is finite.
    pub fn new(values: Vec<f64>) -> Result<Self, SpaceError> {
        check_finite(&values)?;
        Ok(VertexFunction { values })
    }

    pub fn constant(value: f64, n: usize) -> Self {
        VertexFunction {
            values: vec![value; n],
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        VertexFunction { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Edge-indexed field in the image of the differential; pointwise norm
/// `|v|_*(e) = |v(e)|` since fibers are one-dimensional.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentField {
    values: Vec<f64>,
}

/// Edge-indexed vector field, the dual object paired against cotangent
/// fields; pointwise norm `|X|(e) = |X(e)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    values: Vec<f64>,
}

macro_rules! edge_field_impl {
    ($name:ident) => {
        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self, SpaceError> {
                check_finite(&values)?;
                Ok($name { values })
            }

            pub fn zeros(count: usize) -> Self {
                $name {
                    values: vec![0.0; count],
                }
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.values
            }
        }
    };
}

edge_field_impl!(CotangentField);
edge_field_impl!(VectorField);

impl VectorField {
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        VectorField { values }
    }
}

fn check_finite(values: &[f64]) -> Result<(), SpaceError> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(SpaceError::NonFinite { index, value });
        }
    }
    Ok(())
}
