use std::sync::Arc;

use mpbart::dists::mvn_conditional;
use mpbart::sampler::{FixedExpansion, Sampler, P1, P2};
use mpbart::simgen::{generate, Setting, SimSpec};
use mpbart::trees::{assign_rows, fitted, leaf_conjugate_update, mh_step, BinnedCovariates, Scratch};
use mpbart::{seeded_rng, AlgorithmRegistry, ChainConfig, Dataset, PriorConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn setting1(n: usize, seed: u64) -> Dataset {
    generate(&SimSpec::new(Setting::Balanced, n), &mut seeded_rng(seed)).unwrap()
}

/// Step 2 recomputed naively: every residual is rebuilt from full forest
/// predictions and the textbook conditional mean, with the same rng stream.
#[test]
fn step2_matches_straight_line_backfitting() {
    let data = setting1(150, 3);
    let prior = PriorConfig::new(2, 6);
    for name in ["kd", "p1", "p2"] {
        let algo = AlgorithmRegistry::with_defaults().get(name).unwrap();
        let mut s = Sampler::new(&data, prior.clone(), algo.clone(), seeded_rng(9)).unwrap();
        for _ in 0..20 {
            s.sweep().unwrap();
        }
        s.step1_draw_latents().unwrap();
        let st = s.state().clone();
        let mut rng = s.rng_mut().clone();
        s.step2_update_forests().unwrap();

        let grid = s.grid().clone();
        let bins = BinnedCovariates::new(data.x(), &grid).unwrap();
        let expanded = algo.trees_on_expanded_scale();
        let target = if expanded { st.w_expanded.clone() } else { st.w.clone() };
        let scale = if expanded { st.alpha1_sq } else { 1.0 };
        let sigma: DMatrix<f64> = &st.sigma * scale;
        let mut forests = st.forests.clone();
        let mut scratch = Scratch::default();
        let n = data.len();
        for b in 0..prior.num_trees {
            for j in 0..2 {
                let g: Vec<Vec<f64>> = forests.iter().map(|f| fitted(f, data.x(), &grid).unwrap()).collect();
                let own = fitted(&mpbart::trees::Forest { trees: vec![forests[j].trees[b].clone()], latent_dim: j }, data.x(), &grid).unwrap();
                let mut resid = vec![0.0; n];
                let mut tau_sq = 0.0;
                for i in 0..n {
                    let mu_i = [g[0][i], g[1][i]];
                    let w_i = [target[0][i], target[1][i]];
                    let (m, t2) = mvn_conditional(&mu_i, &sigma, &w_i, j).unwrap();
                    resid[i] = target[j][i] - (m - own[i]);
                    tau_sq = t2;
                }
                let mut assign = Vec::new();
                assign_rows(&forests[j].trees[b], &bins, &mut assign);
                let tree = &mut forests[j].trees[b];
                mh_step(tree, &mut assign, &bins, &resid, tau_sq, &prior.tree_prior, &grid, &mut scratch, &mut rng);
                leaf_conjugate_update(tree, &assign, &resid, tau_sq, prior.tree_prior.leaf_sd, &mut scratch, &mut rng).unwrap();
            }
        }
        let got = &s.state().forests;
        for j in 0..2 {
            for (a, b) in got[j].trees.iter().zip(&forests[j].trees) {
                assert_eq!(a.n_nodes(), b.n_nodes(), "{name}");
                for id in a.leaves() {
                    assert!((a.leaf_value(id) - b.leaf_value(id)).abs() < 1e-9, "{name}");
                }
            }
            let g = fitted(&forests[j], data.x(), &grid).unwrap();
            let ms = if expanded { 1.0 / st.alpha1_sq.sqrt() } else { 1.0 };
            for i in 0..n {
                assert!((s.state().mu[j][i] - g[i] * ms).abs() < 1e-9, "{name}");
            }
        }
    }
}

#[test]
fn p1_with_unit_expansion_is_p2() {
    let data = setting1(120, 4);
    let prior = PriorConfig::new(2, 5);
    let mut a = Sampler::new(&data, prior.clone(), Arc::new(P2), seeded_rng(1)).unwrap();
    let mut b = Sampler::new(&data, prior, Arc::new(FixedExpansion::new(Arc::new(P1), 1.0)), seeded_rng(1)).unwrap();
    for _ in 0..30 {
        a.sweep().unwrap();
        b.sweep().unwrap();
        assert_eq!(a.state().sigma, b.state().sigma);
        assert_eq!(a.state().w, b.state().w);
        assert_eq!(a.state().mu, b.state().mu);
    }
}

#[test]
fn chain_is_deterministic_per_seed() {
    let data = setting1(100, 5);
    let prior = PriorConfig::new(2, 4);
    let cfg = ChainConfig { burn_in: 5, draws: 5, thin: 2, store_forests: true, check_invariants: true };
    let algo = AlgorithmRegistry::with_defaults().get("kd").unwrap();
    let x = mpbart::run_chain(&data, &prior, &cfg, algo.clone(), seeded_rng(3)).unwrap();
    let y = mpbart::run_chain(&data, &prior, &cfg, algo, seeded_rng(3)).unwrap();
    assert_eq!(x.trace, y.trace);
    assert_eq!(x.kept, y.kept);
    assert_eq!(x.kept.len(), 3);
}

#[test]
fn reference_level_relabel_runs() {
    let data = setting1(100, 6).relabel("1").unwrap();
    assert_eq!(data.labels().reference(), "1");
    let cfg = ChainConfig { burn_in: 2, draws: 3, thin: 1, store_forests: false, check_invariants: true };
    let d = mpbart::run_chain(&data, &PriorConfig::new(2, 3), &cfg, Arc::new(P1), seeded_rng(0)).unwrap();
    assert!(d.kept.is_empty());
    assert_eq!(d.trace.len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn invariants_hold_for_random_priors(
        seed in 0u64..1000,
        dof in 1.0f64..4.0,
        off in -0.5f64..0.5,
        algo in prop::sample::select(vec!["kd", "p1", "p2"]),
    ) {
        let data = setting1(60, seed);
        let prior = PriorConfig::new(2, 3).with_psi_offdiag(dof, off);
        let mut s = Sampler::new(&data, prior, AlgorithmRegistry::with_defaults().get(algo).unwrap(), seeded_rng(seed)).unwrap();
        for _ in 0..15 {
            s.sweep().unwrap();
            s.check_invariants().unwrap();
        }
        let st = s.state();
        prop_assert!((st.sigma.trace() - 2.0).abs() < 1e-10);
        prop_assert!(st.alpha1_sq > 0.0 && st.alpha3_sq > 0.0);
    }

    #[test]
    fn truncated_draws_stay_inside(mean in -20.0f64..20.0, sd in 0.01f64..10.0, a in -30.0f64..30.0, w in 0.0001f64..5.0, seed in 0u64..100) {
        use mpbart::dists::{sample_truncated_normal, ExtReal, TruncationInterval};
        let iv = TruncationInterval::new(ExtReal::Finite(a), ExtReal::Finite(a + w)).unwrap();
        let mut rng = seeded_rng(seed);
        for _ in 0..50 {
            let x = sample_truncated_normal(mean, sd, &iv, &mut rng).unwrap();
            prop_assert!(x >= a && x <= a + w, "{x} outside [{a}, {}]", a + w);
        }
    }
}
