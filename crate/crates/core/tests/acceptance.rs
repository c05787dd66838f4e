//! End-to-end acceptance suite. Each test prints one PASS/FAIL line; run
//! with `cargo test -p gibbs-perfect --test acceptance -- --nocapture` to
//! see them.

mod common;

use common::*;
use gibbs_perfect::extinction::{
    galton_watson, simulate, simulate_recorded, ExtinctionSpec, Outcome,
};
use gibbs_perfect::interaction::Interaction;
use gibbs_perfect::lattice::{Hyperedge, Vertex};
use gibbs_perfect::optimize::{
    brute_force_min, check_h1, check_h2, ising_optimal_sequence, mu_ising_closed_form,
};
use gibbs_perfect::oracle::{compare_empirical, exact_gibbs_finite_support, verify_decomposition};
use gibbs_perfect::sampler::{backward_sketch, perfect_sample, SequenceStore};
use gibbs_perfect::sequence::{
    is_less_refined, stochastically_dominates, LambdaDistribution, RegionSequence, SequencePolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashSet;
use std::sync::Arc;

fn report(idx: u32, desc: &str, pass: bool) -> bool {
    println!(
        "acceptance {idx:>2} [{}] {desc}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn nn_ising(beta: f64) -> Arc<Interaction> {
    Arc::new(Interaction::pair_geometric(1, 2.0 * beta, 0.5, Some(1)).unwrap())
}

#[test]
fn criterion_01_decomposition_identity() {
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for trial in 0..25 {
        let dim = 1 + (trial % 2);
        let model = random_explicit_through_origin(&mut rng, dim, 8);
        let residual = verify_decomposition(
            &model,
            Vertex::origin(),
            &SequencePolicy::L1Balls,
            100,
            &mut rng,
        )
        .unwrap();
        worst = worst.max(residual);
    }
    let pass = report(
        1,
        &format!(
            "rate decomposition residual {worst:.2e} <= 1e-10 over 25 instances x 100 configs"
        ),
        worst <= 1e-10,
    );
    assert!(pass);
}

#[test]
fn criterion_02_lambda_normalization_and_telescoping() {
    let mut rng = ChaCha12Rng::seed_from_u64(202);
    let mut worst_norm = 0.0f64;
    let mut worst_tele = 0.0f64;
    for trial in 0..20 {
        let dim = 1 + (trial % 2);
        let model = random_explicit_through_origin(&mut rng, dim, 6);
        let dist =
            LambdaDistribution::for_policy(&model, Vertex::origin(), &SequencePolicy::L1Balls)
                .unwrap();
        let mut acc = 0.0;
        let mut k = 0;
        loop {
            acc += dist.pmf(k).unwrap();
            worst_tele = worst_tele.max((acc - dist.cdf(k).unwrap()).abs());
            if dist.cdf(k).unwrap() == 1.0 {
                break;
            }
            k += 1;
            assert!(k < 64, "finite support expected");
        }
        worst_norm = worst_norm.max((acc - 1.0).abs());
    }
    let pass = report(
        2,
        &format!(
            "lambda sums to 1 within {worst_norm:.2e} and CDF telescopes within {worst_tele:.2e} (tol 1e-12)"
        ),
        worst_norm <= 1e-12 && worst_tele <= 1e-12,
    );
    assert!(pass);
}

#[test]
fn criterion_03_refinement_dominance_and_mu_monotone() {
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    let mut violations = 0u32;
    let mut pairs = 0u32;
    while pairs < 50 {
        let dim = 1 + (pairs as usize % 2);
        let model = random_explicit_through_origin(&mut rng, dim, 6);
        if model.n_v(&Vertex::origin()).unwrap() > 6 {
            continue;
        }
        let (coarse, fine, horizon) = refinement_pair(&mut rng, &model);
        assert!(is_less_refined(&coarse, &fine, horizon).unwrap());
        let coarse = LambdaDistribution::new(model.clone(), coarse);
        let fine = LambdaDistribution::new(model.clone(), fine);
        if !stochastically_dominates(&coarse, &fine, horizon).unwrap() {
            violations += 1;
        }
        let mu_coarse = coarse.birth_death_mu(1e-12).unwrap();
        let mu_fine = fine.birth_death_mu(1e-12).unwrap();
        if mu_fine.hi > mu_coarse.lo + 1e-12 {
            violations += 1;
        }
        pairs += 1;
    }
    let pass = report(
        3,
        &format!(
            "refinement: CDF dominance and mu monotone over {pairs} pairs, {violations} violations"
        ),
        violations == 0,
    );
    assert!(pass);
}

#[test]
fn criterion_04_scaled_couplings_dominance() {
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    let mut violations = 0u32;
    let mut pairs = 0u32;
    while pairs < 50 {
        let dim = 1 + (pairs as usize % 2);
        let base = random_explicit_through_origin(&mut rng, dim, 6);
        let factors: Vec<(Hyperedge, f64)> = base
            .edges_at(&Vertex::origin())
            .unwrap()
            .into_iter()
            .map(|(e, _)| (e, rng.gen_range(-1.0..=1.0)))
            .collect();
        let scaled = Arc::new(Interaction::scaled(base.clone(), factors).unwrap());

        let (_, fine, horizon) = refinement_pair(&mut rng, &base);
        let incs: Vec<Vec<Vertex>> = (1..=horizon)
            .map(|k| fine.increment_at(k).unwrap())
            .collect();
        let seq_base = RegionSequence::from_increments(Vertex::origin(), incs.clone(), dim);
        let seq_scaled = RegionSequence::from_increments(Vertex::origin(), incs, dim);

        let dist_base = LambdaDistribution::new(base.clone(), seq_base);
        let dist_scaled = LambdaDistribution::new(scaled.clone(), seq_scaled);
        if !stochastically_dominates(&dist_base, &dist_scaled, horizon).unwrap() {
            violations += 1;
        }
        let mu = dist_base.birth_death_mu(1e-12).unwrap();
        let mu_scaled = dist_scaled.birth_death_mu(1e-12).unwrap();
        if mu_scaled.hi > mu.lo + 1e-12 {
            violations += 1;
        }
        pairs += 1;
    }
    let pass = report(
        4,
        &format!("|J~| <= |J| scaling: dominance and mu~ <= mu over {pairs} pairs, {violations} violations"),
        violations == 0,
    );
    assert!(pass);
}

#[test]
fn criterion_05_sorted_sequence_is_optimal_for_pairwise() {
    let mut rng = ChaCha12Rng::seed_from_u64(505);
    let mut worst_gap = 0.0f64;
    let mut sorted_missing = 0u32;
    for trial in 0..25 {
        let dim = 1 + (trial % 2);
        let n = rng.gen_range(2..=7usize);
        let model = random_pairwise_at_origin(&mut rng, dim, n);
        let result = brute_force_min(Vertex::origin(), &model, 7).unwrap();
        let closed = mu_ising_closed_form(Vertex::origin(), &model, 1e-12).unwrap();
        worst_gap = worst_gap.max((result.best_mu.lo - closed.lo).abs());

        let sorted = ising_optimal_sequence(Vertex::origin(), &model).unwrap();
        let sorted_incs: Vec<Vec<Vertex>> =
            (1..=n).map(|k| sorted.increment_at(k).unwrap()).collect();
        if !result
            .argmin_sequences
            .iter()
            .any(|d| d.increments == sorted_incs)
        {
            sorted_missing += 1;
        }
    }
    let pass = report(
        5,
        &format!(
            "exhaustive minimum matches the sorted-coupling closed form within {worst_gap:.2e}; sorted sequence missing from argmin {sorted_missing} times"
        ),
        worst_gap <= 1e-12 && sorted_missing == 0,
    );
    assert!(pass);
}

#[test]
fn criterion_06_far_field_invariance_under_finite_modification() {
    let base = Arc::new(Interaction::pair_geometric(1, 0.1, 0.5, None).unwrap());
    let modified = Arc::new(
        Interaction::modified(
            base.clone(),
            vec![
                (Hyperedge::pair(vx(0), vx(1)).unwrap(), 2.0),
                (Hyperedge::pair(vx(0), vx(2)).unwrap(), 0.0),
            ],
        )
        .unwrap(),
    );
    let mut pass = true;
    for far in [vx(5), vx(-7), vx(10)] {
        for policy in [SequencePolicy::IsingOptimal, SequencePolicy::L1Balls] {
            let d_base = LambdaDistribution::for_policy(&base, far, &policy).unwrap();
            let d_mod = LambdaDistribution::for_policy(&modified, far, &policy).unwrap();
            for k in 0..=10 {
                if d_base.pmf(k).unwrap().to_bits() != d_mod.pmf(k).unwrap().to_bits() {
                    pass = false;
                }
            }
            let mu_base = d_base.birth_death_mu(1e-9).unwrap();
            let mu_mod = d_mod.birth_death_mu(1e-9).unwrap();
            if mu_base.lo.to_bits() != mu_mod.lo.to_bits()
                || mu_base.hi.to_bits() != mu_mod.hi.to_bits()
            {
                pass = false;
            }
        }
    }
    let pass = report(
        6,
        "lambda and mu bit-identical at vertices clear of the override set",
        pass,
    );
    assert!(pass);
}

#[test]
fn criterion_07_h2_without_h1_still_samples() {
    let beta = 0.05;
    let heavy = Arc::new(
        Interaction::modified(
            nn_ising(beta),
            vec![(Hyperedge::pair(vx(0), vx(1)).unwrap(), 2.0)],
        )
        .unwrap(),
    );
    let h1 = check_h1(&heavy, 1e-10).unwrap();
    let h2 = check_h2(&heavy, &SequencePolicy::IsingOptimal, 1e-10).unwrap();

    let store = SequenceStore::new(heavy, SequencePolicy::IsingOptimal);
    let window = [vx(0), vx(1)];
    let mut exceeded = 0u32;
    for i in 0..1000u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        rng.set_stream(i);
        match perfect_sample(&window, &store, &mut rng, 1_000_000) {
            Ok(_) => {}
            Err(_) => exceeded += 1,
        }
    }
    let pass = report(
        7,
        &format!(
            "heavy-edge model: H1 fails (witness {:.3} >= 1), H2 holds (witness {:.3} < 1), 1000 replicas, {exceeded} step-limit failures",
            h1.witness.hi, h2.witness.hi
        ),
        !h1.holds && h2.holds && exceeded == 0,
    );
    assert!(pass);
}

#[test]
fn criterion_08_single_edge_matches_exact_oracle() {
    let beta = 0.3f64;
    let model = Arc::new(
        Interaction::explicit(1, vec![(Hyperedge::pair(vx(0), vx(1)).unwrap(), beta)]).unwrap(),
    );
    let oracle = exact_gibbs_finite_support(&model, &[vx(0), vx(1)]).unwrap();
    let store = SequenceStore::new(model, SequencePolicy::IsingOptimal);
    let window = [vx(0), vx(1)];

    let replicas = 100_000u64;
    let mut counts = vec![0u64; oracle.cells()];
    let mut equal = 0u64;
    for i in 0..replicas {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        rng.set_stream(i);
        let (sigma, _) = perfect_sample(&window, &store, &mut rng, 100_000).unwrap();
        counts[oracle.pattern_index(&sigma).unwrap()] += 1;
        if sigma.get(&vx(0)) == sigma.get(&vx(1)) {
            equal += 1;
        }
    }
    let p = beta.exp() / (beta.exp() + (-beta).exp());
    let sigma_p = (p * (1.0 - p) / replicas as f64).sqrt();
    let p_hat = equal as f64 / replicas as f64;
    let chi = compare_empirical(&counts, &oracle, 0.001).unwrap();
    let pass = report(
        8,
        &format!(
            "single edge beta=0.3: P(equal) {p_hat:.6} within 3 sigma ({:.6}) of {p:.6}; chi-square p={:.4}",
            3.0 * sigma_p,
            chi.p_value
        ),
        (p_hat - p).abs() <= 3.0 * sigma_p && chi.pass,
    );
    assert!(pass);
}

#[test]
fn criterion_09_nearest_neighbor_correlation_matches_transfer_matrix() {
    let beta = 0.05f64;
    let store = SequenceStore::new(nn_ising(beta), SequencePolicy::IsingOptimal);
    let window = [vx(0), vx(1)];

    let replicas = 100_000u64;
    let mut sum = 0f64;
    for i in 0..replicas {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        rng.set_stream(i);
        let (sigma, _) = perfect_sample(&window, &store, &mut rng, 1_000_000).unwrap();
        let s0 = sigma.get(&vx(0)).unwrap().value() as f64;
        let s1 = sigma.get(&vx(1)).unwrap().value() as f64;
        sum += s0 * s1;
    }
    let empirical = sum / replicas as f64;
    let exact = beta.tanh();
    let bound = 3.0 / (replicas as f64).sqrt();
    let pass = report(
        9,
        &format!(
            "1D NN Ising beta=0.05: E[s0 s1] = {empirical:.6} within {bound:.4} of tanh(beta) = {exact:.6}"
        ),
        (empirical - exact).abs() <= bound,
    );
    assert!(pass);
}

#[test]
fn criterion_10_extinction_and_galton_watson() {
    // uniform drift -0.2, ten initial vertices
    let spec = ExtinctionSpec::uniform(vec![0.6, 0.4], vec![1], 1.0, 10).unwrap();
    let mut drift_extinct = 0u32;
    for i in 0..1000u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        rng.set_stream(i);
        if simulate(&spec, &mut rng, 1_000_000).unwrap().is_extinct() {
            drift_extinct += 1;
        }
    }

    let mut sub_extinct = 0u32;
    let mut super_survived = 0u32;
    for i in 0..1000u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        rng.set_stream(i);
        if !galton_watson(&[0.55, 0.0, 0.45], 200, 1, &mut rng)
            .unwrap()
            .survived()
        {
            sub_extinct += 1;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        rng.set_stream(i);
        if galton_watson(&[0.45, 0.0, 0.55], 200, 1, &mut rng)
            .unwrap()
            .survived()
        {
            super_survived += 1;
        }
    }
    let pass = report(
        10,
        &format!(
            "extinction: eta=-0.2 spec {drift_extinct}/1000 extinct; subcritical GW {sub_extinct}/1000 extinct; supercritical GW survival {super_survived}/1000 (need >= 50)"
        ),
        drift_extinct == 1000 && sub_extinct == 1000 && super_survived >= 50,
    );
    assert!(pass);
}

#[test]
fn criterion_11_birth_death_reduction_reproduces_the_sampler() {
    let model = nn_ising(0.05);
    let window = vec![vx(0), vx(1)];
    let mut pass = true;
    for seed in 0..10u64 {
        let store = SequenceStore::new(model.clone(), SequencePolicy::IsingOptimal);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let trace = backward_sketch(&window, &store, &mut rng, 1_000_000).unwrap();

        let spec = ExtinctionSpec::from_interaction(
            model.clone(),
            SequencePolicy::IsingOptimal,
            window.clone(),
        );
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (outcome, steps) = simulate_recorded(&spec, &mut rng, 1_000_000).unwrap();

        if outcome
            != (Outcome::Extinct {
                steps: trace.diagnostics.n_stop,
            })
            || steps.len() != trace.events.len()
        {
            pass = false;
            continue;
        }
        // replay the sampler trace to recover per-step set sizes
        let mut set: HashSet<Vertex> = window.iter().copied().collect();
        for (ev, step) in trace.events.iter().zip(steps.iter()) {
            if ev.k == 0 {
                set.remove(&ev.vertex);
            } else {
                set.extend(ev.outer_region.iter().copied());
            }
            if step.vertex != ev.vertex || step.k != ev.k || step.size_after != set.len() {
                pass = false;
            }
        }
    }
    let pass = report(
        11,
        "backward sketch and its birth-death reduction agree event-by-event on 10 seeds",
        pass,
    );
    assert!(pass);
}
