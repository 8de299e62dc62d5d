//! File formats: graph JSON, vertex-function JSON/CSV, trajectory and
//! certificate CSV, and the diagnostic run report.
//!
//! All floating-point values are written with 17 significant digits
//! (`{:.16e}`), which round-trips every finite `f64` exactly, so identical
//! runs produce byte-identical files.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::AuditReport;
use crate::energy::Integrand;
use crate::flow::{StepCertificate, Trajectory};
use crate::space::{Space, SpaceError, VectorField, VertexFunction};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("graph spec: {0}")]
    GraphSpec(String),
    #[error("vertex function: {0}")]
    VertexFunction(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("u0 preset: {0}")]
    Preset(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Formats with 17 significant digits; round-trip exact for f64.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------------------
// Graph spec JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct GraphSpec {
    vertices: Vec<VertexSpec>,
    edges: Vec<EdgeSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VertexSpec {
    id: String,
    nu: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeSpec {
    tail: String,
    head: String,
    m: f64,
}

/// Parses `{"vertices":[{"id":..,"nu":..}],"edges":[{"tail":..,"head":..,"m":..}]}`.
pub fn parse_graph_json(text: &str) -> Result<Space, IoError> {
    let spec: GraphSpec =
        serde_json::from_str(text).map_err(|e| IoError::GraphSpec(e.to_string()))?;
    let vertices: Vec<(&str, f64)> = spec
        .vertices
        .iter()
        .map(|v| (v.id.as_str(), v.nu))
        .collect();
    let edges: Vec<(&str, &str, f64)> = spec
        .edges
        .iter()
        .map(|e| (e.tail.as_str(), e.head.as_str(), e.m))
        .collect();
    Ok(Space::build(&vertices, &edges)?)
}

pub fn graph_to_json(space: &Space) -> String {
    let spec = GraphSpec {
        vertices: space
            .vertex_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| VertexSpec {
                id: id.clone(),
                nu: space.nu(i),
            })
            .collect(),
        edges: space
            .edges()
            .iter()
            .map(|e| EdgeSpec {
                tail: space.vertex_ids()[e.tail].clone(),
                head: space.vertex_ids()[e.head].clone(),
                m: e.m,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&spec).expect("graph spec serializes")
}

pub fn load_graph(path: &Path) -> Result<Space, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    parse_graph_json(&text)
}

// ---------------------------------------------------------------------------
// Vertex functions
// ---------------------------------------------------------------------------

/// Parses a `{"id": value}` map, requiring exactly the space's vertex set.
pub fn parse_vertex_function_json(text: &str, space: &Space) -> Result<VertexFunction, IoError> {
    let map: HashMap<String, f64> =
        serde_json::from_str(text).map_err(|e| IoError::VertexFunction(e.to_string()))?;
    vertex_function_from_map(&map, space)
}

/// Parses two-column `id,value` CSV (an optional `id,value` header line is
/// skipped).
pub fn parse_vertex_function_csv(text: &str, space: &Space) -> Result<VertexFunction, IoError> {
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.eq_ignore_ascii_case("id,value")) {
            continue;
        }
        let (id, value) = line.split_once(',').ok_or_else(|| {
            IoError::VertexFunction(format!("line {}: expected id,value", lineno + 1))
        })?;
        let value: f64 = value.trim().parse().map_err(|_| {
            IoError::VertexFunction(format!("line {}: bad number {value:?}", lineno + 1))
        })?;
        map.insert(id.trim().to_owned(), value);
    }
    vertex_function_from_map(&map, space)
}

fn vertex_function_from_map(
    map: &HashMap<String, f64>,
    space: &Space,
) -> Result<VertexFunction, IoError> {
    let mut values = Vec::with_capacity(space.vertex_count());
    for id in space.vertex_ids() {
        let v = map
            .get(id)
            .ok_or_else(|| IoError::VertexFunction(format!("missing vertex {id:?}")))?;
        values.push(*v);
    }
    if map.len() != space.vertex_count() {
        let unknown: Vec<&String> = map
            .keys()
            .filter(|k| space.vertex_index(k).is_none())
            .collect();
        return Err(IoError::VertexFunction(format!(
            "unknown vertex ids {unknown:?}"
        )));
    }
    Ok(VertexFunction::new(values)?)
}

pub fn load_vertex_function(path: &Path, space: &Space) -> Result<VertexFunction, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        parse_vertex_function_csv(&text, space)
    } else {
        parse_vertex_function_json(&text, space)
    }
}

/// Resolves an initial-state source: `indicator:<id,id,...>` (one on the
/// listed vertices, zero elsewhere), `random:<seed>` (uniform in [-1, 1)),
/// or a path to a JSON/CSV vertex function.
pub fn resolve_u0(source: &str, space: &Space) -> Result<VertexFunction, IoError> {
    if let Some(list) = source.strip_prefix("indicator:") {
        let mut values = vec![0.0; space.vertex_count()];
        for id in list.split(',').filter(|s| !s.is_empty()) {
            let idx = space
                .vertex_index(id.trim())
                .ok_or_else(|| IoError::Preset(format!("indicator vertex {id:?} not in graph")))?;
            values[idx] = 1.0;
        }
        return Ok(VertexFunction::new(values)?);
    }
    if let Some(seed) = source.strip_prefix("random:") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| IoError::Preset(format!("bad random seed {seed:?}")))?;
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..space.vertex_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        return Ok(VertexFunction::new(values)?);
    }
    load_vertex_function(Path::new(source), space)
}

// ---------------------------------------------------------------------------
// Trajectory CSV
// ---------------------------------------------------------------------------

/// `step,t,<vertex ids...>`, one row per grid point starting at step 0.
pub fn trajectory_to_csv(space: &Space, trajectory: &Trajectory) -> String {
    let mut out = String::from("step,t");
    for id in space.vertex_ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (k, state) in trajectory.states().iter().enumerate() {
        out.push_str(&k.to_string());
        out.push(',');
        out.push_str(&format_f64(trajectory.times()[k]));
        for v in state.values() {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Reads back `(times, states)`; the header must list exactly the space's
/// vertex ids in order.
pub fn trajectory_from_csv(
    text: &str,
    space: &Space,
) -> Result<(Vec<f64>, Vec<VertexFunction>), IoError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IoError::Csv("empty file".into()))?;
    let expect: Vec<&str> = std::iter::once("step")
        .chain(std::iter::once("t"))
        .chain(space.vertex_ids().iter().map(|s| s.as_str()))
        .collect();
    let got: Vec<&str> = header.split(',').collect();
    if got != expect {
        return Err(IoError::Csv(format!(
            "trajectory header mismatch: expected {expect:?}, got {got:?}"
        )));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + space.vertex_count() {
            return Err(IoError::Csv(format!(
                "row {}: expected {} fields, got {}",
                lineno + 2,
                2 + space.vertex_count(),
                fields.len()
            )));
        }
        let step: usize = fields[0]
            .parse()
            .map_err(|_| IoError::Csv(format!("row {}: bad step index", lineno + 2)))?;
        if step != times.len() {
            return Err(IoError::Csv(format!(
                "row {}: step {} out of order",
                lineno + 2,
                step
            )));
        }
        let t: f64 = fields[1]
            .parse()
            .map_err(|_| IoError::Csv(format!("row {}: bad time", lineno + 2)))?;
        let mut values = Vec::with_capacity(space.vertex_count());
        for f in &fields[2..] {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| IoError::Csv(format!("row {}: bad value {f:?}", lineno + 2)))?,
            );
        }
        times.push(t);
        states.push(VertexFunction::new(values)?);
    }
    Ok((times, states))
}

// ---------------------------------------------------------------------------
// Certificate CSV
// ---------------------------------------------------------------------------

/// `step,edge,X,X1,X2,gap`, one row per (step >= 1, edge). The split
/// columns are empty for the pure power kind; `gap` is the raw per-edge
/// Fenchel-Young gap recomputed from the stored state.
pub fn certificates_to_csv(space: &Space, integrand: &Integrand, trajectory: &Trajectory) -> String {
    let mut out = String::from("step,edge,X,X1,X2,gap\n");
    for (k, cert) in trajectory.certificates().iter().enumerate() {
        let du = space.differential(&trajectory.states()[k + 1]);
        for e in 0..space.edge_count() {
            let x = cert.x.values()[e];
            let s = du.values()[e];
            let gap = integrand.phi(s) + integrand.conjugate(x) - s * x;
            out.push_str(&(k + 1).to_string());
            out.push(',');
            out.push_str(&e.to_string());
            out.push(',');
            out.push_str(&format_f64(x));
            out.push(',');
            if let Some((x1, x2)) = &cert.split {
                out.push_str(&format_f64(x1.values()[e]));
                out.push(',');
                out.push_str(&format_f64(x2.values()[e]));
            } else {
                out.push(',');
            }
            out.push(',');
            out.push_str(&format_f64(gap));
            out.push('\n');
        }
    }
    out
}

/// Reads certificates back; only the fields stored in the file are
/// recovered (solver statistics are not part of the format and read as
/// zero). `steps` is the expected number of flow steps.
pub fn certificates_from_csv(
    text: &str,
    steps: usize,
    edge_count: usize,
) -> Result<Vec<StepCertificate>, IoError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IoError::Csv("empty file".into()))?;
    if header != "step,edge,X,X1,X2,gap" {
        return Err(IoError::Csv(format!(
            "certificate header mismatch: got {header:?}"
        )));
    }
    let mut x = vec![vec![0.0; edge_count]; steps];
    let mut x1: Vec<Vec<Option<f64>>> = vec![vec![None; edge_count]; steps];
    let mut x2: Vec<Vec<Option<f64>>> = vec![vec![None; edge_count]; steps];
    let mut seen = vec![vec![false; edge_count]; steps];
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(IoError::Csv(format!(
                "row {}: expected 6 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let step: usize = fields[0]
            .parse()
            .map_err(|_| IoError::Csv(format!("row {}: bad step", lineno + 2)))?;
        let edge: usize = fields[1]
            .parse()
            .map_err(|_| IoError::Csv(format!("row {}: bad edge", lineno + 2)))?;
        if step == 0 || step > steps || edge >= edge_count {
            return Err(IoError::Csv(format!(
                "row {}: step {step}/edge {edge} outside trajectory shape",
                lineno + 2
            )));
        }
        let parse = |f: &str| -> Result<f64, IoError> {
            f.parse::<f64>()
                .map_err(|_| IoError::Csv(format!("row {}: bad value {f:?}", lineno + 2)))
        };
        x[step - 1][edge] = parse(fields[2])?;
        if !fields[3].is_empty() {
            x1[step - 1][edge] = Some(parse(fields[3])?);
        }
        if !fields[4].is_empty() {
            x2[step - 1][edge] = Some(parse(fields[4])?);
        }
        seen[step - 1][edge] = true;
    }
    for (k, row) in seen.iter().enumerate() {
        if row.iter().any(|s| !s) {
            return Err(IoError::Csv(format!("step {} is missing edges", k + 1)));
        }
    }

    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let split = if x1[k].iter().all(|v| v.is_some()) && x2[k].iter().all(|v| v.is_some()) {
            Some((
                VectorField::new(x1[k].iter().map(|v| v.expect("checked")).collect())?,
                VectorField::new(x2[k].iter().map(|v| v.expect("checked")).collect())?,
            ))
        } else {
            None
        };
        out.push(StepCertificate {
            x: VectorField::new(x[k].clone())?,
            split,
            iterations: 0,
            primal_dual_gap: 0.0,
            div_residual: 0.0,
            gap_residual: 0.0,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Run report JSON
// ---------------------------------------------------------------------------

/// One row of the diagnostic report; the initial row carries no solver
/// statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub mass: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub div_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primal_dual_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

/// Diagnostic JSON report for a run: configuration echo, per-step rows,
/// and optional audit sections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub integrand: String,
    pub tau: f64,
    pub steps: usize,
    pub tol: f64,
    pub rows: Vec<ReportRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primal_dual_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<Vec<(f64, f64)>>,
    pub status: String,
}

impl RunReport {
    pub fn from_trajectory(
        integrand: &Integrand,
        tau: f64,
        tol: f64,
        trajectory: &Trajectory,
    ) -> Self {
        let mut rows = Vec::with_capacity(trajectory.times().len());
        rows.push(ReportRow {
            step: 0,
            t: trajectory.times()[0],
            energy: trajectory.energies()[0],
            mass: trajectory.masses()[0],
            step_norm: None,
            div_residual: None,
            gap_residual: None,
            primal_dual_gap: None,
            iterations: None,
        });
        for (k, cert) in trajectory.certificates().iter().enumerate() {
            rows.push(ReportRow {
                step: k + 1,
                t: trajectory.times()[k + 1],
                energy: trajectory.energies()[k + 1],
                mass: trajectory.masses()[k + 1],
                step_norm: Some(trajectory.step_norms()[k]),
                div_residual: Some(cert.div_residual),
                gap_residual: Some(cert.gap_residual),
                primal_dual_gap: Some(cert.primal_dual_gap),
                iterations: Some(cert.iterations),
            });
        }
        RunReport {
            integrand: integrand.spec_string(),
            tau,
            steps: trajectory.steps(),
            tol,
            rows,
            primal_dual_gap: None,
            audit: None,
            refinement: None,
            status: "ok".into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
