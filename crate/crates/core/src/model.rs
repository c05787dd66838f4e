//! Model description files (TOML, one document per model).
//!
//! ```toml
//! dimension = 1
//! family = "pair_geometric"
//! beta = 0.1
//! gamma = 0.5
//! # max_range = 1            # optional finite-range cutoff
//! sequence = "ising_optimal" # optional default sequence policy
//! ```
//!
//! The `explicit` family lists `[[edges]]` tables with `vertices` and `j`;
//! `modified` and `scaled` carry a nested `[base]` table plus
//! `[[overrides]]` or `[[factors]]`. An explicit sequence is written as
//! `sequence = { increments = [[[1], [-1]], [[2]]] }` with offsets relative
//! to the center vertex.

use crate::error::{CoreError, Result};
use crate::interaction::Interaction;
use crate::lattice::{Hyperedge, Vertex};
use crate::sequence::SequencePolicy;
use serde::Deserialize;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Deserialize)]
struct EdgeDoc {
    vertices: Vec<Vec<i64>>,
    j: f64,
}

#[derive(Debug, Deserialize)]
struct FactorDoc {
    vertices: Vec<Vec<i64>>,
    factor: f64,
}

#[derive(Debug, Deserialize)]
struct FamilyDoc {
    family: String,
    edges: Option<Vec<EdgeDoc>>,
    beta: Option<f64>,
    gamma: Option<f64>,
    max_range: Option<u64>,
    base: Option<Box<FamilyDoc>>,
    overrides: Option<Vec<EdgeDoc>>,
    factors: Option<Vec<FactorDoc>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SequenceDoc {
    Named(String),
    Explicit { increments: Vec<Vec<Vec<i64>>> },
}

#[derive(Debug, Deserialize)]
struct ModelDoc {
    dimension: usize,
    sequence: Option<SequenceDoc>,
    #[serde(flatten)]
    family: FamilyDoc,
}

/// A parsed model: the interaction plus the file's default sequence policy.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub interaction: Arc<Interaction>,
    pub sequence: Option<SequencePolicy>,
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let doc: ModelDoc =
        toml::from_str(text).map_err(|e| CoreError::InvalidModel(format!("model file: {e}")))?;
    let interaction = Arc::new(build_family(&doc.family, doc.dimension)?);
    let sequence = match doc.sequence {
        None => None,
        Some(s) => Some(parse_sequence(&s, doc.dimension)?),
    };
    Ok(ModelFile {
        interaction,
        sequence,
    })
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::InvalidModel(format!("cannot read {}: {e}", path.display())))?;
    parse_model(&text)
}

fn parse_vertex(coords: &[i64], dim: usize) -> Result<Vertex> {
    if coords.len() != dim {
        return Err(CoreError::InvalidModel(format!(
            "vertex {coords:?} has {} coordinates in a dimension-{dim} model",
            coords.len()
        )));
    }
    Vertex::from_coords(coords)
}

fn parse_edge_list(docs: &[EdgeDoc], dim: usize) -> Result<Vec<(Hyperedge, f64)>> {
    docs.iter()
        .map(|d| {
            let verts = d
                .vertices
                .iter()
                .map(|c| parse_vertex(c, dim))
                .collect::<Result<Vec<_>>>()?;
            Ok((Hyperedge::new(verts)?, d.j))
        })
        .collect()
}

fn build_family(doc: &FamilyDoc, dim: usize) -> Result<Interaction> {
    let missing = |key: &str| {
        CoreError::InvalidModel(format!("family '{}' requires the '{key}' key", doc.family))
    };
    match doc.family.as_str() {
        "explicit" => {
            let edges = parse_edge_list(doc.edges.as_deref().unwrap_or(&[]), dim)?;
            Interaction::explicit(dim, edges)
        }
        "pair_geometric" => {
            let beta = doc.beta.ok_or_else(|| missing("beta"))?;
            let gamma = doc.gamma.ok_or_else(|| missing("gamma"))?;
            Interaction::pair_geometric(dim, beta, gamma, doc.max_range)
        }
        "modified" => {
            let base = doc.base.as_ref().ok_or_else(|| missing("base"))?;
            let overrides = doc.overrides.as_ref().ok_or_else(|| missing("overrides"))?;
            let base = Arc::new(build_family(base, dim)?);
            Interaction::modified(base, parse_edge_list(overrides, dim)?)
        }
        "scaled" => {
            let base = doc.base.as_ref().ok_or_else(|| missing("base"))?;
            let factors = doc.factors.as_ref().ok_or_else(|| missing("factors"))?;
            let base = Arc::new(build_family(base, dim)?);
            let factors = factors
                .iter()
                .map(|d| {
                    let verts = d
                        .vertices
                        .iter()
                        .map(|c| parse_vertex(c, dim))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((Hyperedge::new(verts)?, d.factor))
                })
                .collect::<Result<Vec<_>>>()?;
            Interaction::scaled(base, factors)
        }
        other => Err(CoreError::InvalidModel(format!(
            "unknown family '{other}' (expected explicit, pair_geometric, modified or scaled)"
        ))),
    }
}

fn parse_sequence(doc: &SequenceDoc, dim: usize) -> Result<SequencePolicy> {
    match doc {
        SequenceDoc::Named(name) => parse_policy_name(name),
        SequenceDoc::Explicit { increments } => {
            let incs = increments
                .iter()
                .map(|inc| inc.iter().map(|c| parse_vertex(c, dim)).collect())
                .collect::<Result<Vec<Vec<Vertex>>>>()?;
            Ok(SequencePolicy::Explicit(incs))
        }
    }
}

pub fn parse_policy_name(name: &str) -> Result<SequencePolicy> {
    match name {
        "ising_optimal" => Ok(SequencePolicy::IsingOptimal),
        "l1_balls" => Ok(SequencePolicy::L1Balls),
        other => Err(CoreError::InvalidModel(format!(
            "unknown sequence policy '{other}' (expected ising_optimal, l1_balls or an explicit table)"
        ))),
    }
}
