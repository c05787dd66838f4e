//! Ground-truth computations for finitely-supported interactions.
//!
//! When every hyperedge lives inside a finite region, the infinite-volume
//! Gibbs measure factorizes as (exact finite Gibbs on the region) times
//! (independent fair coins elsewhere): conditioned on the spins outside,
//! the inside weights `exp(sum_B J_B chi_B)` involve inside spins only, and
//! each outside site's conditional law is the fair coin. Full enumeration
//! over the region is therefore an exact oracle for the measure the
//! sampler targets.

use crate::error::{CoreError, Result};
use crate::interaction::Interaction;
use crate::lattice::{Hyperedge, Spin, SpinConfig, Vertex};
use crate::sampler::update_prob;
use crate::sequence::{LambdaDistribution, SequencePolicy};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::HashMap;
use std::sync::Arc;

pub const MAX_ORACLE_REGION: usize = 20;

/// Exact joint distribution of the spins on a finite region. Pattern `i`
/// assigns `Plus` to `region[b]` iff bit `b` of `i` is set.
#[derive(Debug, Clone)]
pub struct ExactMarginal {
    region: Vec<Vertex>,
    probs: Vec<f64>,
}

/// Enumerates the exact Gibbs marginal on `region`, which must contain
/// every hyperedge of the interaction.
pub fn exact_gibbs_finite_support(
    interaction: &Interaction,
    region: &[Vertex],
) -> Result<ExactMarginal> {
    let mut region: Vec<Vertex> = region.to_vec();
    region.sort_unstable();
    region.dedup();
    if region.len() > MAX_ORACLE_REGION {
        return Err(CoreError::RegionTooLarge {
            size: region.len(),
            cap: MAX_ORACLE_REGION,
        });
    }
    let support = interaction.support_region().ok_or_else(|| {
        CoreError::InvalidModel("the oracle needs a finitely supported interaction".into())
    })?;
    let index: HashMap<Vertex, usize> = region.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    if let Some(outside) = support.iter().find(|v| !index.contains_key(v)) {
        return Err(CoreError::InvalidModel(format!(
            "support vertex {outside} lies outside the oracle region"
        )));
    }

    // every relevant hyperedge, each taken once
    let mut edges: Vec<(Hyperedge, f64)> = Vec::new();
    for v in &support {
        for (e, j) in interaction.edges_at(v)? {
            if e.vertices()[0] == *v {
                edges.push((e, j));
            }
        }
    }
    let bit_edges: Vec<(Vec<usize>, f64)> = edges
        .iter()
        .map(|(e, j)| (e.vertices().iter().map(|v| index[v]).collect(), *j))
        .collect();

    let n = region.len();
    let mut probs = Vec::with_capacity(1 << n);
    let mut norm = 0.0;
    for pattern in 0u64..(1 << n) {
        let mut energy = 0.0;
        for (bits, j) in &bit_edges {
            let minus_count = bits.iter().filter(|b| pattern & (1 << **b) == 0).count();
            let chi = if minus_count % 2 == 0 { 1.0 } else { -1.0 };
            energy += j * chi;
        }
        let w = energy.exp();
        probs.push(w);
        norm += w;
    }
    for p in &mut probs {
        *p /= norm;
    }
    Ok(ExactMarginal { region, probs })
}

impl ExactMarginal {
    pub fn region(&self) -> &[Vertex] {
        &self.region
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cells(&self) -> usize {
        self.probs.len()
    }

    /// Index of a fully assigned pattern on the region.
    pub fn pattern_index(&self, sigma: &SpinConfig) -> Result<usize> {
        let mut idx = 0usize;
        for (b, v) in self.region.iter().enumerate() {
            match sigma.get(v) {
                Some(Spin::Plus) => idx |= 1 << b,
                Some(Spin::Minus) => {}
                None => return Err(CoreError::UnassignedSpin(*v)),
            }
        }
        Ok(idx)
    }

    /// Exact `P(sigma_u = sigma_v)`.
    pub fn prob_equal(&self, u: &Vertex, v: &Vertex) -> f64 {
        let (bu, bv) = (self.bit_of(u), self.bit_of(v));
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| (i >> bu) & 1 == (i >> bv) & 1)
            .map(|(_, p)| p)
            .sum()
    }

    /// Exact `E[sigma_u sigma_v]`.
    pub fn correlation(&self, u: &Vertex, v: &Vertex) -> f64 {
        2.0 * self.prob_equal(u, v) - 1.0
    }

    /// Exact `P(sigma_v = +1)`.
    pub fn site_plus_prob(&self, v: &Vertex) -> f64 {
        let b = self.bit_of(v);
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| (i >> b) & 1 == 1)
            .map(|(_, p)| p)
            .sum()
    }

    fn bit_of(&self, v: &Vertex) -> usize {
        self.region
            .binary_search(v)
            .expect("vertex in oracle region")
    }

    /// Inverse-CDF draw of a pattern index.
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if acc > u {
                return i;
            }
        }
        self.probs.len() - 1
    }

    /// Largest violation of the single-site conditional law
    /// `1 / (1 + exp(-2 sum_B J_B chi_B))` over all patterns and sites.
    pub fn local_spec_residual(&self, interaction: &Interaction) -> Result<f64> {
        let mut worst = 0.0f64;
        for pattern in 0..self.probs.len() {
            let sigma = self.config_of(pattern);
            for (b, v) in self.region.iter().enumerate() {
                let flipped = pattern ^ (1 << b);
                let denom = self.probs[pattern] + self.probs[flipped];
                if denom == 0.0 {
                    continue;
                }
                let conditional = self.probs[pattern] / denom;
                let mut energy = 0.0;
                for (e, j) in interaction.edges_at(v)? {
                    energy += j * f64::from(sigma.chi(&e)?);
                }
                let spec = 1.0 / (1.0 + (-2.0 * energy).exp());
                worst = worst.max((conditional - spec).abs());
            }
        }
        Ok(worst)
    }

    fn config_of(&self, pattern: usize) -> SpinConfig {
        let mut sigma = SpinConfig::new();
        for (b, v) in self.region.iter().enumerate() {
            let spin = if (pattern >> b) & 1 == 1 {
                Spin::Plus
            } else {
                Spin::Minus
            };
            sigma.set(*v, spin);
        }
        sigma
    }
}

/// Max residual of the rate decomposition
/// `c_v(sigma) = M_v [lambda(0)/2 + sum_k lambda(k) p^[k](-sigma(v)|sigma)]`
/// over `trials` random fully-assigned configurations.
pub fn verify_decomposition(
    interaction: &Arc<Interaction>,
    v: Vertex,
    policy: &SequencePolicy,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let dist = LambdaDistribution::for_policy(interaction, v, policy)?;
    // finite support: walk until the tail telescopes to zero
    let mut support_end = 0usize;
    while dist.cdf(support_end)? < 1.0 {
        support_end += 1;
        if support_end > (1 << 16) {
            return Err(CoreError::InfiniteSupport(v));
        }
    }

    let mut touched: Vec<Vertex> = vec![v];
    for (e, _) in interaction.edges_at(&v)? {
        touched.extend_from_slice(e.vertices());
    }
    touched.sort_unstable();
    touched.dedup();

    let mass = interaction.mass(&v);
    let mut worst = 0.0f64;
    for _ in 0..trials.max(1) {
        let mut sigma = SpinConfig::new();
        for u in &touched {
            let spin = if rng.gen_bool(0.5) {
                Spin::Plus
            } else {
                Spin::Minus
            };
            sigma.set(*u, spin);
        }
        let rate = interaction.flip_rate(&v, &sigma)?;
        let mut decomposed = dist.pmf(0)? / 2.0;
        for k in 1..=support_end {
            let lambda = dist.pmf(k)?;
            if lambda == 0.0 {
                continue;
            }
            decomposed += lambda * update_prob(v, k, &sigma, dist.sequence(), interaction)?;
        }
        worst = worst.max((rate - mass * decomposed).abs());
    }
    Ok(worst)
}

/// Chi-square goodness-of-fit of observed pattern counts against the
/// oracle, with cells of expected count below five pooled together.
#[derive(Debug, Clone)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub cells: usize,
    pub pooled: usize,
    pub samples: u64,
    /// Per-site z-scores of the empirical `P(sigma_v = +1)`.
    pub site_z: Vec<(Vertex, f64)>,
    pub alpha: f64,
    pub pass: bool,
}

pub fn compare_empirical(
    counts: &[u64],
    oracle: &ExactMarginal,
    alpha: f64,
) -> Result<ChiSquareReport> {
    if counts.len() != oracle.cells() {
        return Err(CoreError::InvalidModel(format!(
            "{} counts for {} oracle cells",
            counts.len(),
            oracle.cells()
        )));
    }
    assert!(alpha > 0.0 && alpha < 1.0);
    let n: u64 = counts.iter().sum();
    let nf = n as f64;

    let mut kept: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut pool_obs = 0.0;
    let mut pool_exp = 0.0;
    let mut pooled = 0usize;
    for (i, c) in counts.iter().enumerate() {
        let expected = oracle.probs[i] * nf;
        if expected < 5.0 {
            pool_obs += *c as f64;
            pool_exp += expected;
            pooled += 1;
        } else {
            kept.push((*c as f64, expected));
        }
    }
    if pooled > 0 {
        if pool_exp >= 5.0 || kept.is_empty() {
            kept.push((pool_obs, pool_exp));
        } else {
            // fold the underweight pool into the smallest kept cell
            let (i, _) = kept
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .expect("kept nonempty");
            kept[i].0 += pool_obs;
            kept[i].1 += pool_exp;
        }
    }

    let statistic: f64 = kept
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum();
    let dof = kept.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        let chi = ChiSquared::new(dof as f64).expect("dof >= 1");
        1.0 - chi.cdf(statistic)
    };

    let mut site_z = Vec::new();
    for v in &oracle.region {
        let b = oracle.bit_of(v);
        let p = oracle.site_plus_prob(v);
        let observed: u64 = counts
            .iter()
            .enumerate()
            .filter(|(i, _)| (i >> b) & 1 == 1)
            .map(|(_, c)| *c)
            .sum();
        let sd = (p * (1.0 - p) / nf).sqrt();
        let z = if sd > 0.0 {
            (observed as f64 / nf - p) / sd
        } else {
            0.0
        };
        site_z.push((*v, z));
    }

    Ok(ChiSquareReport {
        statistic,
        dof,
        p_value,
        cells: kept.len(),
        pooled,
        samples: n,
        site_z,
        alpha,
        pass: p_value >= alpha,
    })
}
