//! Deterministic test-instance generation: random weighted graphs, random
//! data, random ramp test functions, and the standard 60-instance corpus
//! used by the verification suites. Everything is seeded, so a corpus
//! definition regenerates the same instances on any run.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certify::{RampOrientation, RampTestFn};
use crate::energy::Integrand;
use crate::space::{Space, VertexFunction};

/// One ready-to-solve instance.
#[derive(Debug, Clone)]
pub struct CorpusInstance {
    pub label: String,
    pub space: Space,
    pub integrand: Integrand,
    pub tau: f64,
    pub g: VertexFunction,
}

/// Serializable recipe for one instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub label: String,
    pub vertices: usize,
    pub extra_edges: usize,
    pub integrand: String,
    pub tau: f64,
    pub seed: u64,
}

/// Serializable recipe for a whole corpus; the on-disk corpus definition
/// format is this struct as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub entries: Vec<CorpusEntry>,
}

impl CorpusSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Materializes every entry.
    pub fn instances(&self) -> Vec<CorpusInstance> {
        self.entries
            .iter()
            .map(|e| {
                let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
                let space = random_connected_space(&mut rng, e.vertices, e.extra_edges);
                let g = random_vertex_function(&mut rng, &space, -2.0, 2.0);
                CorpusInstance {
                    label: e.label.clone(),
                    integrand: e.integrand.parse().expect("corpus integrand parses"),
                    tau: e.tau,
                    space,
                    g,
                }
            })
            .collect()
    }
}

/// The standard verification corpus: 60 instances crossing the five
/// integrands with both step sizes and graph sizes 2 through 6.
pub fn standard_corpus_spec(seed: u64) -> CorpusSpec {
    let integrands = ["p:1.5", "p:2", "p:3", "qp:1.5,3", "1p:2"];
    let taus = [0.1, 1.0];
    let mut entries = Vec::new();
    let mut k = 0u64;
    for integrand in integrands {
        for tau in taus {
            for rep in 0..6usize {
                let vertices = 2 + (rep + k as usize) % 5;
                entries.push(CorpusEntry {
                    label: format!("{integrand}/tau{tau}/rep{rep}"),
                    vertices,
                    extra_edges: vertices / 2,
                    integrand: integrand.to_owned(),
                    tau,
                    seed: seed.wrapping_mul(0x9e37_79b9).wrapping_add(k),
                });
                k += 1;
            }
        }
    }
    CorpusSpec { entries }
}

pub fn standard_corpus(seed: u64) -> Vec<CorpusInstance> {
    standard_corpus_spec(seed).instances()
}

/// Random connected weighted graph: a random attachment tree plus
/// `extra_edges` additional edges (parallel edges permitted). Measures are
/// uniform in `[0.5, 2)`.
pub fn random_connected_space(rng: &mut ChaCha8Rng, n: usize, extra_edges: usize) -> Space {
    let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let vertices: Vec<(&str, f64)> = ids
        .iter()
        .map(|id| (id.as_str(), rng.random_range(0.5..2.0)))
        .collect();
    let mut edges: Vec<(&str, &str, f64)> = Vec::new();
    for i in 1..n {
        let parent = rng.random_range(0..i);
        edges.push((
            ids[parent].as_str(),
            ids[i].as_str(),
            rng.random_range(0.5..2.0),
        ));
    }
    let mut added = 0;
    while added < extra_edges && n >= 2 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((ids[a].as_str(), ids[b].as_str(), rng.random_range(0.5..2.0)));
            added += 1;
        }
    }
    Space::build(&vertices, &edges).expect("generated space is valid")
}

pub fn random_vertex_function(
    rng: &mut ChaCha8Rng,
    space: &Space,
    lo: f64,
    hi: f64,
) -> VertexFunction {
    VertexFunction::new(
        (0..space.vertex_count())
            .map(|_| rng.random_range(lo..hi))
            .collect(),
    )
    .expect("bounded samples are finite")
}

/// Random member of the ramp family with `a` in `[0.05, 1)` and width in
/// `[0.05, 1)`, any orientation.
pub fn random_test_fn(rng: &mut ChaCha8Rng) -> RampTestFn {
    let a = rng.random_range(0.05..1.0);
    let b = a + rng.random_range(0.05..1.0);
    let orientation = match rng.random_range(0..3) {
        0 => RampOrientation::Positive,
        1 => RampOrientation::Negative,
        _ => RampOrientation::Odd,
    };
    RampTestFn::new(a, b, orientation).expect("sampled parameters are valid")
}
