//! Shared generators for the randomized acceptance checks.

use gibbs_perfect::interaction::Interaction;
use gibbs_perfect::lattice::{Hyperedge, Vertex};
use gibbs_perfect::sequence::RegionSequence;
use rand::Rng;
use std::collections::HashSet;
use std::sync::Arc;

pub fn vx(x: i64) -> Vertex {
    Vertex::new(x, 0, 0)
}

fn random_vertex(rng: &mut impl Rng, dim: usize, span: i64) -> Vertex {
    let mut coords = [0i64; 3];
    for c in coords.iter_mut().take(dim) {
        *c = rng.gen_range(-span..=span);
    }
    Vertex::new(coords[0], coords[1], coords[2])
}

/// Random instance whose hyperedges (sizes 2-3, |J| <= 1) all pass through
/// the origin; at most `max_edges` of them.
pub fn random_explicit_through_origin(
    rng: &mut impl Rng,
    dim: usize,
    max_edges: usize,
) -> Arc<Interaction> {
    let mut edges: Vec<(Hyperedge, f64)> = Vec::new();
    let mut seen: HashSet<Hyperedge> = HashSet::new();
    let target = rng.gen_range(1..=max_edges);
    let mut attempts = 0;
    while edges.len() < target && attempts < 200 {
        attempts += 1;
        let size = rng.gen_range(2..=3usize);
        let mut verts = vec![Vertex::origin()];
        while verts.len() < size {
            let u = random_vertex(rng, dim, 2);
            if !verts.contains(&u) {
                verts.push(u);
            }
        }
        let edge = Hyperedge::new(verts).expect("distinct vertices");
        if seen.insert(edge.clone()) {
            let magnitude = rng.gen_range(0.05..=1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            edges.push((edge, sign * magnitude));
        }
    }
    Arc::new(Interaction::explicit(dim, edges).expect("valid instance"))
}

/// Random pairwise instance with `n` coupled neighbors of the origin.
pub fn random_pairwise_at_origin(rng: &mut impl Rng, dim: usize, n: usize) -> Arc<Interaction> {
    let span = if dim == 1 { 8 } else { 3 };
    let mut neighbors: Vec<Vertex> = Vec::new();
    while neighbors.len() < n {
        let u = random_vertex(rng, dim, span);
        if u != Vertex::origin() && !neighbors.contains(&u) {
            neighbors.push(u);
        }
    }
    let edges = neighbors
        .into_iter()
        .map(|u| {
            let magnitude = rng.gen_range(0.05..=1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (
                Hyperedge::pair(Vertex::origin(), u).expect("distinct"),
                sign * magnitude,
            )
        })
        .collect();
    Arc::new(Interaction::explicit(dim, edges).expect("valid instance"))
}

/// A maximally refined covering sequence at the origin (single-vertex
/// increments over the incident vertices, shuffled) and a coarser random
/// subsequence of it: a `(coarse, fine)` refinement pair.
pub fn refinement_pair(
    rng: &mut impl Rng,
    interaction: &Arc<Interaction>,
) -> (RegionSequence, RegionSequence, usize) {
    let mut cover: Vec<Vertex> = interaction
        .edges_at(&Vertex::origin())
        .expect("finite")
        .iter()
        .flat_map(|(e, _)| e.vertices().iter().copied())
        .filter(|u| *u != Vertex::origin())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    cover.sort_unstable();
    for i in (1..cover.len()).rev() {
        cover.swap(i, rng.gen_range(0..=i));
    }

    let fine_incs: Vec<Vec<Vertex>> = cover.iter().map(|u| vec![*u]).collect();
    // group consecutive fine increments into random blocks
    let mut coarse_incs: Vec<Vec<Vertex>> = Vec::new();
    let mut i = 0;
    while i < cover.len() {
        let block = rng.gen_range(1..=3usize).min(cover.len() - i);
        coarse_incs.push(cover[i..i + block].to_vec());
        i += block;
    }

    let dim = interaction.dimension();
    let fine = RegionSequence::from_increments(Vertex::origin(), fine_incs, dim);
    let coarse = RegionSequence::from_increments(Vertex::origin(), coarse_incs, dim);
    let horizon = cover.len() + 4;
    (coarse, fine, horizon)
}
