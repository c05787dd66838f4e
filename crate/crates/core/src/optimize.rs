//! Search for good region sequences and the applicability condition checks.
//!
//! Pairwise interactions have an explicitly computable optimum: single
//! vertices added in order of non-increasing coupling strength. Finite
//! vertex neighborhoods admit exhaustive search over running unions of
//! incident hyperedges (at most `N_v!` candidates), and any sequence can be
//! locally improved by refining its first block into single-vertex steps.

use crate::error::{CoreError, Result};
use crate::interaction::Interaction;
use crate::lattice::{Hyperedge, Vertex};
use crate::numeric::Interval;
use crate::sequence::{BoundTracker, LambdaDistribution, RegionSequence, SequencePolicy};
use itertools::Itertools;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

pub const DEFAULT_SEARCH_CAP: usize = 8;

/// A materialized candidate sequence: its center and increment list. For
/// block-refinement results the increments cover only the refined head; the
/// tail continues along the base sequence that was refined.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SequenceDescriptor {
    pub center: Vertex,
    pub increments: Vec<Vec<Vertex>>,
}

impl SequenceDescriptor {
    pub fn materialize(&self, dim: usize) -> RegionSequence {
        RegionSequence::from_increments(self.center, self.increments.clone(), dim)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub best_mu: Interval,
    pub argmin_sequences: Vec<SequenceDescriptor>,
    pub candidates_evaluated: u64,
}

/// The sequence adding single vertices by non-increasing `|J_{v,w}|`, ties
/// broken by L1 distance then lexicographic coordinates. A maximal element
/// of the sequence space, and optimal for pairwise interactions.
pub fn ising_optimal_sequence(v: Vertex, interaction: &Interaction) -> Result<RegionSequence> {
    RegionSequence::new(v, &SequencePolicy::IsingOptimal, interaction)
}

/// Evaluates the sorted-sequence birth-death expectation directly from the
/// ordered coupling magnitudes:
/// `-2 exp(-2 sum_i c_i) + exp(-sum_{i>=2} c_i) + sum_{l>=2} l (exp(-T_l) - exp(-T_{l-1}))`
/// with `T_l` the strength left after the `l` strongest couplings.
///
/// This is an algebraically independent route from
/// [`LambdaDistribution::birth_death_mu`]; the two must agree on the sorted
/// sequence within combined tolerances.
pub fn mu_ising_closed_form(
    v: Vertex,
    interaction: &Interaction,
    tolerance: f64,
) -> Result<Interval> {
    assert!(tolerance > 0.0);
    let mut stream = interaction.pair_neighbors(&v)?;
    let total = interaction.total_strength(&v);
    let mut consumed = vec![v];
    let mut sum = -2.0 * (-2.0 * total).exp();
    let mut prev_tail = total;

    let far = interaction.geometric_far(&v);
    let mut tracker = far.as_ref().map(|g| {
        let mut cover: Vec<Vertex> = g.cover.clone();
        cover.retain(|u| {
            u != &v && interaction.coupling(&Hyperedge::pair(v, *u).expect("distinct")) != 0.0
        });
        BoundTracker {
            dim: g.dim,
            center: v,
            beta_abs: g.beta_abs,
            gamma: g.gamma,
            counts: HashMap::new(),
            covered_radius: 0,
            missing_cover: cover.into_iter().collect(),
        }
    });

    let mut l = 0usize;
    for (w, _) in stream.by_ref() {
        l += 1;
        consumed.push(w);
        let tail = interaction.tail_strength_unchecked(&v, &consumed);
        if l == 1 {
            sum += (-tail).exp();
        } else {
            sum += l as f64 * ((-tail).exp() - (-prev_tail).exp());
        }
        prev_tail = tail;
        if tail == 0.0 {
            return Ok(Interval::point(sum));
        }
        if let Some(t) = tracker.as_mut() {
            t.add_set(&[w]);
            if t.missing_cover.is_empty() && t.covered_radius >= 1 {
                let bound = t.remainder_bound(consumed.len() as f64);
                if bound <= tolerance {
                    return Ok(Interval::new(sum, sum + bound));
                }
            }
        }
        if l > (1 << 22) {
            return Err(CoreError::TailNotBoundable(format!(
                "tolerance {tolerance} not reached after {l} couplings"
            )));
        }
    }
    if l == 0 {
        // no couplings at all: the middle term is exp(0)
        sum += 1.0;
    }
    Ok(Interval::point(sum))
}

/// Exact `mu` of a finite set chain `{v} = B(0) subset ... subset B(L)`
/// whose last set covers every incident hyperedge.
fn mu_of_chain(v: &Vertex, chain: &[Vec<Vertex>], interaction: &Interaction) -> f64 {
    let total = interaction.total_strength(v);
    let mut prev_cdf = (-2.0 * total).exp();
    let mut mu = -1.0;
    for set in chain {
        let cdf = (-interaction.tail_strength_unchecked(v, set)).exp();
        mu += set.len() as f64 * (cdf - prev_cdf).max(0.0);
        prev_cdf = cdf;
    }
    mu
}

/// Exhaustive minimum of `mu` over running-union sequences of the incident
/// hyperedges, in every order, with no-growth steps eliminated. Returns the
/// full argmin set.
pub fn brute_force_min(
    v: Vertex,
    interaction: &Interaction,
    cap: usize,
) -> Result<OptimizationResult> {
    let edges: Vec<Hyperedge> = interaction
        .edges_at(&v)?
        .into_iter()
        .map(|(e, _)| e)
        .collect();
    if edges.len() > cap {
        return Err(CoreError::TooManyHyperedges {
            vertex: v,
            count: edges.len(),
            cap,
        });
    }

    let mut chains: HashSet<Vec<Vec<Vertex>>> = HashSet::new();
    let mut permutations = 0u64;
    let indices: Vec<usize> = (0..edges.len()).collect();
    for perm in indices.iter().permutations(indices.len()) {
        permutations += 1;
        let mut union: Vec<Vertex> = vec![v];
        let mut chain: Vec<Vec<Vertex>> = Vec::new();
        for &&i in &perm {
            let mut grew = false;
            for u in edges[i].vertices() {
                if !union.contains(u) {
                    union.push(*u);
                    grew = true;
                }
            }
            if grew {
                let mut set = union.clone();
                set.sort_unstable();
                chain.push(set);
            }
        }
        chains.insert(chain);
    }
    if permutations == 0 {
        permutations = 1; // the empty permutation
        chains.insert(Vec::new());
    }

    let mut evaluated: Vec<(f64, Vec<Vec<Vertex>>)> = chains
        .into_iter()
        .map(|chain| (mu_of_chain(&v, &chain, interaction), chain))
        .collect();
    let best = evaluated
        .iter()
        .map(|(mu, _)| *mu)
        .fold(f64::INFINITY, f64::min);
    evaluated.retain(|(mu, _)| *mu <= best + 1e-12);

    let mut argmin: Vec<SequenceDescriptor> = evaluated
        .into_iter()
        .map(|(_, chain)| {
            let mut previous: HashSet<Vertex> = HashSet::from([v]);
            let increments = chain
                .iter()
                .map(|set| {
                    let inc: Vec<Vertex> = set
                        .iter()
                        .filter(|u| !previous.contains(u))
                        .copied()
                        .collect();
                    previous.extend(inc.iter().copied());
                    inc
                })
                .collect();
            SequenceDescriptor {
                center: v,
                increments,
            }
        })
        .collect();
    argmin.sort();

    Ok(OptimizationResult {
        best_mu: Interval::point(best),
        argmin_sequences: argmin,
        candidates_evaluated: permutations,
    })
}

/// Refines the first block of `base`: enumerates every ordering of
/// `B(n) \ {v}` into single-vertex steps, keeps the tail `B(n+i)` as is,
/// and returns the orderings of minimal `mu`. Monotone: the result is never
/// worse than the base sequence.
pub fn upsilon_refine(
    center: Vertex,
    base: &SequencePolicy,
    n: usize,
    interaction: &Arc<Interaction>,
    cap: usize,
    tolerance: f64,
) -> Result<OptimizationResult> {
    assert!(n >= 1, "refinement needs a nonempty first block");
    let base_dist = LambdaDistribution::for_policy(interaction, center, base)?;
    let block: Vec<Vertex> = base_dist
        .sequence()
        .set_at(n)?
        .into_iter()
        .filter(|u| *u != center)
        .collect();
    if block.len() > cap {
        return Err(CoreError::BlockTooLarge {
            size: block.len(),
            cap,
        });
    }

    let mu_base = base_dist.birth_death_mu(tolerance)?;
    let mut head_base = 0.0;
    for l in 1..=n {
        head_base += base_dist.sequence().size_at(l)? as f64 * base_dist.pmf(l)?;
    }

    // head(pi) = sum_{l=1..L} (l+1) lambda~(l) for the single-vertex order pi
    let head_of = |order: &[&Vertex]| -> f64 {
        let total = interaction.total_strength(&center);
        let mut prev_cdf = (-2.0 * total).exp();
        let mut head = 0.0;
        let mut set = vec![center];
        for (i, u) in order.iter().enumerate() {
            set.push(**u);
            let cdf = (-interaction.tail_strength_unchecked(&center, &set)).exp();
            head += (i + 2) as f64 * (cdf - prev_cdf).max(0.0);
            prev_cdf = cdf;
        }
        head
    };

    let mut evaluated: Vec<(f64, Vec<Vertex>)> = Vec::new();
    let mut permutations = 0u64;
    for order in block.iter().permutations(block.len()) {
        permutations += 1;
        evaluated.push((head_of(&order), order.into_iter().copied().collect()));
    }
    if permutations == 0 {
        permutations = 1;
        evaluated.push((0.0, Vec::new()));
    }

    let best_head = evaluated
        .iter()
        .map(|(h, _)| *h)
        .fold(f64::INFINITY, f64::min);
    evaluated.retain(|(h, _)| *h <= best_head + 1e-12);
    let mut argmin: Vec<SequenceDescriptor> = evaluated
        .into_iter()
        .map(|(_, order)| SequenceDescriptor {
            center,
            increments: order.into_iter().map(|u| vec![u]).collect(),
        })
        .collect();
    argmin.sort();

    Ok(OptimizationResult {
        best_mu: mu_base.shift(best_head - head_base),
        argmin_sequences: argmin,
        candidates_evaluated: permutations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    H1,
    H2,
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::H1 => "h1",
            Condition::H2 => "h2",
        }
    }
}

/// Outcome of an applicability check. The witness encloses the growth
/// expectation `sum_k |B_v(k)| lambda_v(k) = mu_v + 1`; the condition holds
/// when it is confirmed below one.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub condition: Condition,
    pub holds: bool,
    pub witness: Interval,
    pub vertex_class: String,
}

fn growth_expectation(
    interaction: &Arc<Interaction>,
    v: Vertex,
    policy: &SequencePolicy,
    tolerance: f64,
) -> Result<Interval> {
    let dist = LambdaDistribution::for_policy(interaction, v, policy)?;
    Ok(dist.birth_death_mu(tolerance)?.shift(1.0))
}

/// Far-field growth expectation: the translation-class value away from any
/// finite exceptional region.
fn far_field_witness(
    interaction: &Arc<Interaction>,
    policy: &SequencePolicy,
    tolerance: f64,
) -> Result<(Interval, String)> {
    let base = interaction.far_field_base();
    match base {
        Interaction::ExplicitFinite(_) => Ok((
            Interval::point(0.0),
            "zero interaction far field".to_string(),
        )),
        Interaction::PairGeometric(_) => {
            let shared = Arc::new(base.clone());
            let w = growth_expectation(&shared, Vertex::origin(), policy, tolerance)?;
            Ok((
                w,
                "translation class representative at the origin".to_string(),
            ))
        }
        _ => unreachable!("far_field_base strips perturbations"),
    }
}

/// Condition (H1): `sup_v sum_k |B*_v(k)| lambda_v(k) < 1` with L1-ball
/// sequences. The supremum is evaluated at the far-field class and at every
/// vertex touching an explicit or perturbed hyperedge.
pub fn check_h1(interaction: &Arc<Interaction>, tolerance: f64) -> Result<ConditionReport> {
    let policy = SequencePolicy::L1Balls;
    let (mut witness, far_desc) = far_field_witness(interaction, &policy, tolerance)?;
    let exceptional = interaction.exceptional_vertices();
    for v in &exceptional {
        let w = growth_expectation(interaction, *v, &policy, tolerance)?;
        witness = Interval::new(witness.lo.max(w.lo), witness.hi.max(w.hi));
    }
    Ok(ConditionReport {
        condition: Condition::H1,
        holds: witness.strictly_below(1.0),
        witness,
        vertex_class: format!("{far_desc} + {} exceptional vertices", exceptional.len()),
    })
}

/// Condition (H2): the far-field growth expectation (the limit superior
/// outside growing regions) is below one. Finite modifications do not
/// enter: the limit ignores any finite exceptional region.
pub fn check_h2(
    interaction: &Arc<Interaction>,
    policy: &SequencePolicy,
    tolerance: f64,
) -> Result<ConditionReport> {
    let (witness, far_desc) = far_field_witness(interaction, policy, tolerance)?;
    Ok(ConditionReport {
        condition: Condition::H2,
        holds: witness.strictly_below(1.0),
        witness,
        vertex_class: far_desc,
    })
}
