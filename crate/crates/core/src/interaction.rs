//! Interaction families `{J_B}` on `Z^d` and their strength queries.
//!
//! Every family answers four exact queries used throughout the crate:
//! the coupling of a hyperedge, the total strength `sum_{B: v in B} |J_B|`,
//! the tail strength `sum_{B: v in B, B not subset S} |J_B|` for a finite
//! set `S`, and the per-vertex mass `2 exp(total)`. Tail sums are computed
//! without truncation parameters: finite families enumerate, the geometric
//! family combines per-shell counts with closed-form shell tails.

use crate::error::{CoreError, Result};
use crate::lattice::{l1_shell, l1_shell_size, Hyperedge, SpinConfig, Vertex};
use crate::numeric::geometric_poly_tail;
use std::collections::{HashMap, HashSet};
use std::iter::Peekable;
use std::sync::Arc;

/// Coefficients of the shell-size polynomial `s_d(k)` for `k >= 1`.
pub(crate) fn shell_size_coeffs(dim: usize) -> &'static [f64] {
    match dim {
        1 => &[2.0],
        2 => &[0.0, 4.0],
        3 => &[2.0, 0.0, 4.0],
        _ => panic!("dimension must be 1, 2 or 3"),
    }
}

/// Coefficients of the ball-size polynomial `|ball_d(k)|`.
pub(crate) fn ball_size_coeffs(dim: usize) -> &'static [f64] {
    match dim {
        1 => &[1.0, 2.0],
        2 => &[1.0, 2.0, 2.0],
        3 => &[1.0, 8.0 / 3.0, 2.0, 4.0 / 3.0],
        _ => panic!("dimension must be 1, 2 or 3"),
    }
}

/// An explicit finite list of couplings.
#[derive(Debug, Clone)]
pub struct ExplicitFinite {
    dim: usize,
    edges: Vec<(Hyperedge, f64)>,
    by_vertex: HashMap<Vertex, Vec<usize>>,
}

/// Translation-invariant pairwise couplings `J({v, v+r}) = beta * gamma^|r|_1`,
/// optionally truncated beyond `max_range`.
#[derive(Debug, Clone)]
pub struct PairGeometric {
    dim: usize,
    beta: f64,
    gamma: f64,
    max_range: Option<u64>,
}

/// One edge whose coupling differs from the base interaction.
#[derive(Debug, Clone)]
struct DiffEdge {
    edge: Hyperedge,
    new_j: f64,
    base_j: f64,
}

/// A base interaction altered on finitely many hyperedges. Backs both the
/// override family and the scaled family.
#[derive(Debug, Clone)]
pub struct Perturbed {
    base: Arc<Interaction>,
    diffs: Vec<DiffEdge>,
    by_vertex: HashMap<Vertex, Vec<usize>>,
}

/// Geometric far-field parameters at a vertex, used to bound series tails.
/// `cover` lists the vertices of all perturbed edges through the vertex;
/// once a region contains them, the remaining couplings are exactly those
/// of the pure geometric family.
#[derive(Debug, Clone)]
pub struct GeomFar {
    pub beta_abs: f64,
    pub gamma: f64,
    pub dim: usize,
    pub cover: Vec<Vertex>,
}

#[derive(Debug, Clone)]
pub enum Interaction {
    ExplicitFinite(ExplicitFinite),
    PairGeometric(PairGeometric),
    Modified(Perturbed),
    Scaled(Perturbed),
}

impl ExplicitFinite {
    pub fn new(dim: usize, edges: Vec<(Hyperedge, f64)>) -> Result<ExplicitFinite> {
        check_dim(dim)?;
        let mut kept: Vec<(Hyperedge, f64)> = Vec::new();
        let mut seen: HashSet<Hyperedge> = HashSet::new();
        for (edge, j) in edges {
            for v in edge.vertices() {
                if v.coords(3)[dim..].iter().any(|c| *c != 0) {
                    return Err(CoreError::InvalidModel(format!(
                        "vertex {v} has nonzero coordinates beyond dimension {dim}"
                    )));
                }
            }
            if !seen.insert(edge.clone()) {
                return Err(CoreError::InvalidModel(format!(
                    "duplicate hyperedge {:?}",
                    edge.vertices()
                )));
            }
            // A_v only carries nonzero couplings.
            if j != 0.0 {
                kept.push((edge, j));
            }
        }
        kept.sort_by(|a, b| a.0.cmp(&b.0));
        let mut by_vertex: HashMap<Vertex, Vec<usize>> = HashMap::new();
        for (i, (edge, _)) in kept.iter().enumerate() {
            for v in edge.vertices() {
                by_vertex.entry(*v).or_default().push(i);
            }
        }
        Ok(ExplicitFinite {
            dim,
            edges: kept,
            by_vertex,
        })
    }

    fn indices_at(&self, v: &Vertex) -> &[usize] {
        self.by_vertex.get(v).map(|x| x.as_slice()).unwrap_or(&[])
    }

    pub fn edges(&self) -> &[(Hyperedge, f64)] {
        &self.edges
    }
}

impl PairGeometric {
    pub fn new(dim: usize, beta: f64, gamma: f64, max_range: Option<u64>) -> Result<PairGeometric> {
        check_dim(dim)?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(CoreError::InvalidModel(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        if !beta.is_finite() {
            return Err(CoreError::InvalidModel("beta must be finite".into()));
        }
        if max_range == Some(0) {
            return Err(CoreError::InvalidModel("max_range must be >= 1".into()));
        }
        Ok(PairGeometric {
            dim,
            beta,
            gamma,
            max_range,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn max_range(&self) -> Option<u64> {
        self.max_range
    }

    fn coupling_at_distance(&self, r: u64) -> f64 {
        if r == 0 || self.max_range.is_some_and(|m| r > m) {
            return 0.0;
        }
        self.beta * self.gamma.powi(r as i32)
    }

    /// `sum_{k > k_last} s_d(k) |beta| gamma^k`, honoring the range cutoff.
    fn shell_tail_abs(&self, k_last: u64) -> f64 {
        let beta_abs = self.beta.abs();
        if beta_abs == 0.0 {
            return 0.0;
        }
        match self.max_range {
            None => beta_abs * geometric_poly_tail(shell_size_coeffs(self.dim), self.gamma, k_last),
            Some(range) => {
                let mut sum = 0.0;
                for k in (k_last + 1)..=range {
                    sum += l1_shell_size(self.dim, k) as f64 * beta_abs * self.gamma.powi(k as i32);
                }
                sum
            }
        }
    }

    /// Exact tail strength at `v` over the complement of `others` (the set
    /// members besides `v`), accumulated shell by shell so no cancellation
    /// occurs.
    fn tail_abs(&self, v: &Vertex, others: &[Vertex]) -> f64 {
        let beta_abs = self.beta.abs();
        if beta_abs == 0.0 {
            return 0.0;
        }
        let mut counts: HashMap<u64, u64> = HashMap::new();
        let mut k_max = 0;
        for u in others {
            let d = u.l1_distance(v);
            if d == 0 {
                continue;
            }
            if self.max_range.is_some_and(|m| d > m) {
                continue;
            }
            *counts.entry(d).or_insert(0) += 1;
            k_max = k_max.max(d);
        }
        let mut sum = 0.0;
        for k in 1..=k_max {
            let present = counts.get(&k).copied().unwrap_or(0);
            let absent = l1_shell_size(self.dim, k) - present;
            sum += absent as f64 * beta_abs * self.gamma.powi(k as i32);
        }
        sum + self.shell_tail_abs(k_max)
    }
}

impl Perturbed {
    fn new(base: Arc<Interaction>, diffs: Vec<DiffEdge>) -> Result<Perturbed> {
        let mut seen: HashSet<Hyperedge> = HashSet::new();
        let mut kept = Vec::new();
        for d in diffs {
            for v in d.edge.vertices() {
                if v.coords(3)[base.dimension()..].iter().any(|c| *c != 0) {
                    return Err(CoreError::InvalidModel(format!(
                        "vertex {v} lies outside the base lattice dimension",
                    )));
                }
            }
            if !seen.insert(d.edge.clone()) {
                return Err(CoreError::InvalidModel(format!(
                    "duplicate perturbed hyperedge {:?}",
                    d.edge.vertices()
                )));
            }
            if d.new_j != d.base_j {
                kept.push(d);
            }
        }
        kept.sort_by(|a, b| a.edge.cmp(&b.edge));
        let mut by_vertex: HashMap<Vertex, Vec<usize>> = HashMap::new();
        for (i, d) in kept.iter().enumerate() {
            for v in d.edge.vertices() {
                by_vertex.entry(*v).or_default().push(i);
            }
        }
        Ok(Perturbed {
            base,
            diffs: kept,
            by_vertex,
        })
    }

    pub fn base(&self) -> &Interaction {
        &self.base
    }

    fn diffs_at(&self, v: &Vertex) -> impl Iterator<Item = &DiffEdge> {
        self.by_vertex
            .get(v)
            .map(|x| x.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(|i| &self.diffs[*i])
    }

    fn diff_for(&self, edge: &Hyperedge) -> Option<&DiffEdge> {
        self.diffs
            .binary_search_by(|d| d.edge.cmp(edge))
            .ok()
            .map(|i| &self.diffs[i])
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(CoreError::InvalidModel(format!(
            "dimension must be 1, 2 or 3, got {dim}"
        )))
    }
}

impl Interaction {
    pub fn explicit(dim: usize, edges: Vec<(Hyperedge, f64)>) -> Result<Interaction> {
        Ok(Interaction::ExplicitFinite(ExplicitFinite::new(
            dim, edges,
        )?))
    }

    pub fn pair_geometric(
        dim: usize,
        beta: f64,
        gamma: f64,
        max_range: Option<u64>,
    ) -> Result<Interaction> {
        Ok(Interaction::PairGeometric(PairGeometric::new(
            dim, beta, gamma, max_range,
        )?))
    }

    /// A base interaction with finitely many couplings replaced outright.
    pub fn modified(
        base: Arc<Interaction>,
        overrides: Vec<(Hyperedge, f64)>,
    ) -> Result<Interaction> {
        let diffs = overrides
            .into_iter()
            .map(|(edge, new_j)| {
                let base_j = base.coupling(&edge);
                DiffEdge {
                    edge,
                    new_j,
                    base_j,
                }
            })
            .collect();
        Ok(Interaction::Modified(Perturbed::new(base, diffs)?))
    }

    /// A base interaction with finitely many couplings scaled by factors of
    /// absolute value at most one.
    pub fn scaled(base: Arc<Interaction>, factors: Vec<(Hyperedge, f64)>) -> Result<Interaction> {
        let mut diffs = Vec::new();
        for (edge, factor) in factors {
            if !(factor.abs() <= 1.0) {
                return Err(CoreError::InvalidModel(format!(
                    "scale factor must satisfy |factor| <= 1, got {factor}"
                )));
            }
            let base_j = base.coupling(&edge);
            diffs.push(DiffEdge {
                new_j: factor * base_j,
                edge,
                base_j,
            });
        }
        Ok(Interaction::Scaled(Perturbed::new(base, diffs)?))
    }

    pub fn dimension(&self) -> usize {
        match self {
            Interaction::ExplicitFinite(x) => x.dim,
            Interaction::PairGeometric(x) => x.dim,
            Interaction::Modified(x) | Interaction::Scaled(x) => x.base.dimension(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Interaction::ExplicitFinite(_) => "explicit",
            Interaction::PairGeometric(_) => "pair_geometric",
            Interaction::Modified(_) => "modified",
            Interaction::Scaled(_) => "scaled",
        }
    }

    /// The coupling `J_B`, zero if the hyperedge is absent.
    pub fn coupling(&self, edge: &Hyperedge) -> f64 {
        match self {
            Interaction::ExplicitFinite(x) => x
                .edges
                .binary_search_by(|(e, _)| e.cmp(edge))
                .map(|i| x.edges[i].1)
                .unwrap_or(0.0),
            Interaction::PairGeometric(x) => {
                if !edge.is_pair() {
                    return 0.0;
                }
                let d = edge.vertices()[0].l1_distance(&edge.vertices()[1]);
                x.coupling_at_distance(d)
            }
            Interaction::Modified(p) | Interaction::Scaled(p) => match p.diff_for(edge) {
                Some(d) => d.new_j,
                None => p.base.coupling(edge),
            },
        }
    }

    /// `sum_{B: v in B} |J_B|`, always finite.
    pub fn total_strength(&self, v: &Vertex) -> f64 {
        match self {
            Interaction::ExplicitFinite(x) => {
                x.indices_at(v).iter().map(|i| x.edges[*i].1.abs()).sum()
            }
            Interaction::PairGeometric(x) => x.tail_abs(v, &[]),
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                let mut total = p.base.total_strength(v);
                for d in p.diffs_at(v) {
                    total += d.new_j.abs() - d.base_j.abs();
                }
                total
            }
        }
    }

    /// `sum_{B: v in B, B not subset set} |J_B|`. Requires `v` in `set`.
    pub fn tail_strength(&self, v: &Vertex, set: &[Vertex]) -> Result<f64> {
        if !set.contains(v) {
            return Err(CoreError::VertexNotInSet(*v));
        }
        Ok(self.tail_strength_unchecked(v, set))
    }

    pub(crate) fn tail_strength_unchecked(&self, v: &Vertex, set: &[Vertex]) -> f64 {
        match self {
            Interaction::ExplicitFinite(x) => {
                let members: HashSet<&Vertex> = set.iter().collect();
                x.indices_at(v)
                    .iter()
                    .map(|i| &x.edges[*i])
                    .filter(|(e, _)| !e.subset_of(|u| members.contains(u)))
                    .map(|(_, j)| j.abs())
                    .sum()
            }
            Interaction::PairGeometric(x) => x.tail_abs(v, set),
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                let mut tail = p.base.tail_strength_unchecked(v, set);
                let members: HashSet<&Vertex> = set.iter().collect();
                for d in p.diffs_at(v) {
                    if !d.edge.subset_of(|u| members.contains(u)) {
                        tail += d.new_j.abs() - d.base_j.abs();
                    }
                }
                tail
            }
        }
    }

    /// `M_v = 2 exp(sum_{B: v in B} |J_B|)`.
    pub fn mass(&self, v: &Vertex) -> f64 {
        2.0 * self.total_strength(v).exp()
    }

    /// Number of hyperedges with nonzero coupling through `v`, or `None`
    /// when infinite.
    pub fn n_v(&self, v: &Vertex) -> Option<usize> {
        match self {
            Interaction::ExplicitFinite(x) => Some(x.indices_at(v).len()),
            Interaction::PairGeometric(x) => {
                if x.beta == 0.0 {
                    return Some(0);
                }
                x.max_range
                    .map(|r| (crate::lattice::l1_ball_size(x.dim, r) - 1) as usize)
            }
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                let base = p.base.n_v(v)?;
                let mut n = base as i64;
                for d in p.diffs_at(v) {
                    if d.base_j != 0.0 && d.new_j == 0.0 {
                        n -= 1;
                    }
                    if d.base_j == 0.0 && d.new_j != 0.0 {
                        n += 1;
                    }
                }
                Some(n as usize)
            }
        }
    }

    /// True when `N_v` is finite for every vertex.
    pub fn finite_everywhere(&self) -> bool {
        match self {
            Interaction::ExplicitFinite(_) => true,
            Interaction::PairGeometric(x) => x.beta == 0.0 || x.max_range.is_some(),
            Interaction::Modified(p) | Interaction::Scaled(p) => p.base.finite_everywhere(),
        }
    }

    /// All hyperedges through `v` with their couplings, or `InfiniteSupport`.
    pub fn edges_at(&self, v: &Vertex) -> Result<Vec<(Hyperedge, f64)>> {
        match self {
            Interaction::ExplicitFinite(x) => Ok(x
                .indices_at(v)
                .iter()
                .map(|i| x.edges[*i].clone())
                .collect()),
            Interaction::PairGeometric(x) => {
                if x.beta == 0.0 {
                    return Ok(Vec::new());
                }
                let range = x.max_range.ok_or(CoreError::InfiniteSupport(*v))?;
                let mut out = Vec::new();
                for k in 1..=range {
                    let j = x.coupling_at_distance(k);
                    for o in l1_shell(x.dim, k) {
                        let u = v.translate(&o);
                        out.push((Hyperedge::pair(*v, u).expect("distinct endpoints"), j));
                    }
                }
                Ok(out)
            }
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                let mut out: Vec<(Hyperedge, f64)> = Vec::new();
                for (edge, _) in p.base.edges_at(v)? {
                    let j = self.coupling(&edge);
                    if j != 0.0 {
                        out.push((edge, j));
                    }
                }
                for d in p.diffs_at(v) {
                    if d.base_j == 0.0 && d.new_j != 0.0 {
                        out.push((d.edge.clone(), d.new_j));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Hyperedges through `v` entirely inside `set`, with nonzero coupling.
    pub fn edges_within(&self, v: &Vertex, set: &[Vertex]) -> Vec<(Hyperedge, f64)> {
        let members: HashSet<&Vertex> = set.iter().collect();
        match self {
            Interaction::ExplicitFinite(x) => x
                .indices_at(v)
                .iter()
                .map(|i| &x.edges[*i])
                .filter(|(e, _)| e.subset_of(|u| members.contains(u)))
                .map(|(e, j)| (e.clone(), *j))
                .collect(),
            Interaction::PairGeometric(x) => {
                let mut out = Vec::new();
                for u in set {
                    if u == v {
                        continue;
                    }
                    let j = x.coupling_at_distance(u.l1_distance(v));
                    if j != 0.0 {
                        out.push((Hyperedge::pair(*v, *u).expect("distinct endpoints"), j));
                    }
                }
                out
            }
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                let mut out: Vec<(Hyperedge, f64)> = Vec::new();
                for (edge, _) in p.base.edges_within(v, set) {
                    let j = self.coupling(&edge);
                    if j != 0.0 {
                        out.push((edge, j));
                    }
                }
                for d in p.diffs_at(v) {
                    if d.base_j == 0.0
                        && d.new_j != 0.0
                        && d.edge.subset_of(|u| members.contains(u))
                    {
                        out.push((d.edge.clone(), d.new_j));
                    }
                }
                out
            }
        }
    }

    /// Glauber flip rate `c_v(sigma) = exp(-sum_B J_B chi_B(sigma))`.
    /// Requires finite `N_v` and assigned spins on every incident hyperedge.
    pub fn flip_rate(&self, v: &Vertex, sigma: &SpinConfig) -> Result<f64> {
        let mut energy = 0.0;
        for (edge, j) in self.edges_at(v)? {
            energy += j * f64::from(sigma.chi(&edge)?);
        }
        Ok((-energy).exp())
    }

    /// True when every hyperedge with nonzero coupling has exactly two
    /// vertices.
    pub fn is_pairwise(&self) -> bool {
        match self {
            Interaction::ExplicitFinite(x) => x.edges.iter().all(|(e, _)| e.is_pair()),
            Interaction::PairGeometric(_) => true,
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                p.base.is_pairwise() && p.diffs.iter().all(|d| d.edge.is_pair() || d.new_j == 0.0)
            }
        }
    }

    /// All hyperedges through `v` as a stream ordered by non-increasing
    /// `|J_B|` (deterministic tie-breaking), with their signed couplings.
    /// Infinite for untruncated geometric families.
    pub fn hyperedges_at(&self, v: &Vertex) -> EdgeStream {
        match self {
            Interaction::ExplicitFinite(x) => {
                let mut items: Vec<(Hyperedge, f64)> = x
                    .indices_at(v)
                    .iter()
                    .map(|i| x.edges[*i].clone())
                    .collect();
                sort_edges(&mut items);
                EdgeStream::Finite(items.into_iter())
            }
            Interaction::PairGeometric(x) => EdgeStream::Shells(ShellNeighbors {
                geom: x.clone(),
                center: *v,
                radius: 0,
                buf: Vec::new(),
                next: 0,
            }),
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                let mut replaced: Vec<(Hyperedge, f64)> = Vec::new();
                let mut skip: HashSet<Hyperedge> = HashSet::new();
                for d in p.diffs_at(v) {
                    skip.insert(d.edge.clone());
                    if d.new_j != 0.0 {
                        replaced.push((d.edge.clone(), d.new_j));
                    }
                }
                sort_edges(&mut replaced);
                EdgeStream::Merged(Box::new(MergedEdges {
                    base: Box::new(p.base.hyperedges_at(v)).peekable(),
                    diffs: replaced.into_iter().peekable(),
                    skip,
                }))
            }
        }
    }

    /// Coupled neighbors of `v` sorted by non-increasing `|J|`, ties broken
    /// by (L1 distance, lexicographic coordinates). Yields `(w, |J_{v,w}|)`.
    pub fn pair_neighbors(&self, v: &Vertex) -> Result<PairNeighbors> {
        if !self.is_pairwise() {
            let offending = self.first_non_pair_edge();
            return Err(match offending {
                Some(e) => CoreError::NotPairwise(e.vertices().to_vec(), e.len()),
                None => CoreError::NotPairwise(Vec::new(), 0),
            });
        }
        Ok(self.pair_neighbors_unchecked(v))
    }

    fn first_non_pair_edge(&self) -> Option<Hyperedge> {
        match self {
            Interaction::ExplicitFinite(x) => x
                .edges
                .iter()
                .find(|(e, _)| !e.is_pair())
                .map(|(e, _)| e.clone()),
            Interaction::PairGeometric(_) => None,
            Interaction::Modified(p) | Interaction::Scaled(p) => p
                .diffs
                .iter()
                .find(|d| !d.edge.is_pair() && d.new_j != 0.0)
                .map(|d| d.edge.clone())
                .or_else(|| p.base.first_non_pair_edge()),
        }
    }

    fn pair_neighbors_unchecked(&self, v: &Vertex) -> PairNeighbors {
        match self {
            Interaction::ExplicitFinite(x) => {
                let mut items: Vec<(Vertex, f64)> = x
                    .indices_at(v)
                    .iter()
                    .map(|i| &x.edges[*i])
                    .filter_map(|(e, j)| e.other_end(v).map(|w| (w, j.abs())))
                    .collect();
                sort_neighbors(&mut items, v);
                PairNeighbors::Finite(items.into_iter())
            }
            Interaction::PairGeometric(x) => PairNeighbors::Shells(ShellNeighbors {
                geom: x.clone(),
                center: *v,
                radius: 0,
                buf: Vec::new(),
                next: 0,
            }),
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                let mut replaced: Vec<(Vertex, f64)> = Vec::new();
                let mut skip: HashSet<Vertex> = HashSet::new();
                for d in p.diffs_at(v) {
                    if let Some(w) = d.edge.other_end(v) {
                        skip.insert(w);
                        if d.new_j != 0.0 {
                            replaced.push((w, d.new_j.abs()));
                        }
                    }
                }
                sort_neighbors(&mut replaced, v);
                PairNeighbors::Merged(Box::new(MergedNeighbors {
                    base: Box::new(p.base.pair_neighbors_unchecked(v)).peekable(),
                    diffs: replaced.into_iter().peekable(),
                    skip,
                    center: *v,
                }))
            }
        }
    }

    /// Finite-perturbation structure over a pure geometric far field, if the
    /// innermost base is untruncated `PairGeometric`.
    pub fn geometric_far(&self, v: &Vertex) -> Option<GeomFar> {
        match self {
            Interaction::ExplicitFinite(_) => None,
            Interaction::PairGeometric(x) => {
                if x.max_range.is_some() || x.beta == 0.0 {
                    None
                } else {
                    Some(GeomFar {
                        beta_abs: x.beta.abs(),
                        gamma: x.gamma,
                        dim: x.dim,
                        cover: Vec::new(),
                    })
                }
            }
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                let mut far = p.base.geometric_far(v)?;
                for d in p.diffs_at(v) {
                    far.cover.extend_from_slice(d.edge.vertices());
                }
                far.cover.sort_unstable();
                far.cover.dedup();
                Some(far)
            }
        }
    }

    /// Vertices at which the interaction may differ from its translation
    /// class (union of explicit edges and perturbed edges).
    pub fn exceptional_vertices(&self) -> Vec<Vertex> {
        let mut out = Vec::new();
        self.collect_exceptional(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_exceptional(&self, out: &mut Vec<Vertex>) {
        match self {
            Interaction::ExplicitFinite(x) => {
                for (edge, _) in &x.edges {
                    out.extend_from_slice(edge.vertices());
                }
            }
            Interaction::PairGeometric(_) => {}
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                for d in &p.diffs {
                    out.extend_from_slice(d.edge.vertices());
                }
                p.base.collect_exceptional(out);
            }
        }
    }

    /// The innermost unperturbed interaction.
    pub fn far_field_base(&self) -> &Interaction {
        match self {
            Interaction::Modified(p) | Interaction::Scaled(p) => p.base.far_field_base(),
            other => other,
        }
    }

    /// Finite region containing every hyperedge, when one exists.
    pub fn support_region(&self) -> Option<Vec<Vertex>> {
        match self {
            Interaction::ExplicitFinite(_) => Some(self.exceptional_vertices()),
            Interaction::PairGeometric(x) => {
                if x.beta == 0.0 {
                    Some(Vec::new())
                } else {
                    None
                }
            }
            Interaction::Modified(p) | Interaction::Scaled(p) => {
                let mut region = p.base.support_region()?;
                for d in &p.diffs {
                    region.extend_from_slice(d.edge.vertices());
                }
                region.sort_unstable();
                region.dedup();
                Some(region)
            }
        }
    }
}

fn sort_edges(items: &mut [(Hyperedge, f64)]) {
    items.sort_by(|(ea, ja), (eb, jb)| {
        jb.abs()
            .partial_cmp(&ja.abs())
            .expect("couplings are finite")
            .then_with(|| ea.len().cmp(&eb.len()))
            .then_with(|| ea.cmp(eb))
    });
}

/// Stream of `(Hyperedge, J_B)` pairs, non-increasing in `|J_B|`.
pub enum EdgeStream {
    Finite(std::vec::IntoIter<(Hyperedge, f64)>),
    Shells(ShellNeighbors),
    Merged(Box<MergedEdges>),
}

impl Iterator for EdgeStream {
    type Item = (Hyperedge, f64);

    fn next(&mut self) -> Option<(Hyperedge, f64)> {
        match self {
            EdgeStream::Finite(it) => it.next(),
            EdgeStream::Shells(s) => {
                let (w, _) = s.next()?;
                let j = s.geom.coupling_at_distance(w.l1_distance(&s.center));
                Some((Hyperedge::pair(s.center, w).expect("distinct endpoints"), j))
            }
            EdgeStream::Merged(m) => m.next(),
        }
    }
}

/// Merge of the base edge stream (minus perturbed edges) with the sorted
/// perturbed edges.
pub struct MergedEdges {
    base: Peekable<Box<EdgeStream>>,
    diffs: Peekable<std::vec::IntoIter<(Hyperedge, f64)>>,
    skip: HashSet<Hyperedge>,
}

impl Iterator for MergedEdges {
    type Item = (Hyperedge, f64);

    fn next(&mut self) -> Option<(Hyperedge, f64)> {
        loop {
            match self.base.peek() {
                Some((e, _)) if self.skip.contains(e) => {
                    self.base.next();
                }
                _ => break,
            }
        }
        match (self.base.peek(), self.diffs.peek()) {
            (None, None) => None,
            (Some(_), None) => self.base.next(),
            (None, Some(_)) => self.diffs.next(),
            (Some((_, jb)), Some((_, jd))) => {
                if jb.abs() >= jd.abs() {
                    self.base.next()
                } else {
                    self.diffs.next()
                }
            }
        }
    }
}

fn sort_neighbors(items: &mut [(Vertex, f64)], center: &Vertex) {
    items.sort_by(|(wa, ja), (wb, jb)| {
        jb.partial_cmp(ja)
            .expect("couplings are finite")
            .then_with(|| wa.l1_distance(center).cmp(&wb.l1_distance(center)))
            .then_with(|| wa.cmp(wb))
    });
}

/// Stream of `(neighbor, |J|)` pairs, non-increasing in `|J|`.
pub enum PairNeighbors {
    Finite(std::vec::IntoIter<(Vertex, f64)>),
    Shells(ShellNeighbors),
    Merged(Box<MergedNeighbors>),
}

impl Iterator for PairNeighbors {
    type Item = (Vertex, f64);

    fn next(&mut self) -> Option<(Vertex, f64)> {
        match self {
            PairNeighbors::Finite(it) => it.next(),
            PairNeighbors::Shells(s) => s.next(),
            PairNeighbors::Merged(m) => m.next(),
        }
    }
}

/// Neighbors of the geometric family, shell by shell (lexicographic within
/// a shell, which realizes the distance/lexicographic tie-break).
pub struct ShellNeighbors {
    geom: PairGeometric,
    center: Vertex,
    radius: u64,
    buf: Vec<Vertex>,
    next: usize,
}

impl Iterator for ShellNeighbors {
    type Item = (Vertex, f64);

    fn next(&mut self) -> Option<(Vertex, f64)> {
        if self.geom.beta == 0.0 {
            return None;
        }
        while self.next >= self.buf.len() {
            self.radius += 1;
            if self.geom.max_range.is_some_and(|m| self.radius > m) {
                return None;
            }
            self.buf = l1_shell(self.geom.dim, self.radius)
                .into_iter()
                .map(|o| self.center.translate(&o))
                .collect();
            self.next = 0;
        }
        let w = self.buf[self.next];
        self.next += 1;
        Some((w, self.geom.coupling_at_distance(self.radius).abs()))
    }
}

/// Merge of the base neighbor stream (minus perturbed endpoints) with the
/// sorted perturbed neighbors.
pub struct MergedNeighbors {
    base: Peekable<Box<PairNeighbors>>,
    diffs: Peekable<std::vec::IntoIter<(Vertex, f64)>>,
    skip: HashSet<Vertex>,
    center: Vertex,
}

impl Iterator for MergedNeighbors {
    type Item = (Vertex, f64);

    fn next(&mut self) -> Option<(Vertex, f64)> {
        loop {
            match self.base.peek() {
                Some((w, _)) if self.skip.contains(w) => {
                    self.base.next();
                }
                _ => break,
            }
        }
        match (self.base.peek(), self.diffs.peek()) {
            (None, None) => None,
            (Some(_), None) => self.base.next(),
            (None, Some(_)) => self.diffs.next(),
            (Some((wb, jb)), Some((wd, jd))) => {
                let base_first = match jb.partial_cmp(jd).expect("couplings are finite") {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => {
                        let db = wb.l1_distance(&self.center);
                        let dd = wd.l1_distance(&self.center);
                        (db, *wb) <= (dd, *wd)
                    }
                };
                if base_first {
                    self.base.next()
                } else {
                    self.diffs.next()
                }
            }
        }
    }
}
