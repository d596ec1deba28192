mod common;

use common::{newton_dual, objective, proj_columns, proj_rows, random_problem, split_plan};
use otunfold::ot_unfold::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// DR settings that make the inner projection exact to rounding on O(0.1)
/// entries.
const TIGHT_DR: DrParams = DrParams { tau: 0.1, iters: 400 };

fn tight_config(eps: f64, l: usize) -> SolverConfig {
    SolverConfig {
        epsilon: eps,
        epsilon_init: eps,
        tau: TIGHT_DR.tau,
        dr_iters: TIGHT_DR.iters,
        init_sinkhorn_iters: 2000,
        init_mode: InitMode::Consistent,
        outer_iters: 3000,
        sigma0: Some(vec![1.0 / l as f64; l]),
        metric: otunfold::eval::MetricBackend::None,
        ..SolverConfig::default()
    }
}

fn small_sizes(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    let m = rng.random_range(1..=5);
    let l = rng.random_range(1..=(8 - m).min(4));
    let n = rng.random_range(1..=4);
    (m, l, n)
}

#[test]
fn objective_matches_newton_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..12 {
        let (m, l, n) = small_sizes(&mut rng);
        let p = random_problem(&mut rng, m, l, n);
        let eps = if case % 2 == 0 { 0.05 } else { 0.5 };
        let oracle = newton_dual(&p, eps);
        assert!(oracle.gradient_norm < 1e-12);

        let config = tight_config(eps, l);
        let system = assemble(&p, eps).unwrap();
        let init = InitParams {
            epsilon_init: eps,
            sinkhorn_iters: 2000,
            sinkhorn_tol: None,
            mode: InitMode::Consistent,
        };
        let mut state = initialize(&p, &system, config.sigma0.as_ref().unwrap(), &init).unwrap();
        for _ in 0..config.outer_iters {
            state = outer_step(&system, &state, TIGHT_DR).unwrap().0;
        }
        let (gamma, sigma) = split_plan(&system.plan(&state), m, n);
        let value = objective(&p.cost, &gamma, &sigma, eps);
        let rel = (value - oracle.objective).abs() / oracle.objective.abs();
        assert!(rel < 1e-4, "case {case} ({m},{l},{n}) eps {eps}: {value} vs {}", oracle.objective);
        for (a, b) in sigma.iter().zip(&oracle.sigma) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}

#[test]
fn scaling_updates_are_alternating_projections() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..8 {
        let (m, l, n) = small_sizes(&mut rng);
        let p = random_problem(&mut rng, m, l, n);
        let eps = if case % 2 == 0 { 0.05 } else { 0.5 };
        let system = assemble(&p, eps).unwrap();
        let sigma0 = vec![1.0 / l as f64; l];
        let init = InitParams {
            epsilon_init: eps,
            sinkhorn_iters: 50,
            ..InitParams::default()
        };
        let mut state = initialize(&p, &system, &sigma0, &init).unwrap();
        let mut explicit = system.plan(&state);
        for step in 1..=10 {
            state = outer_step(&system, &state, TIGHT_DR).unwrap().0;
            explicit = proj_columns(&proj_rows(&explicit, p.kernel.matrix()), &system.b);
            let scaled = system.plan(&state);
            let diff = (&scaled - &explicit).amax();
            assert!(diff < 1e-8, "case {case} step {step}: {diff:e}");
        }
    }
}

#[test]
fn optimum_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..8 {
        let (m, l, n) = small_sizes(&mut rng);
        let p = random_problem(&mut rng, m, l, n);
        let eps = if case % 2 == 0 { 0.05 } else { 0.5 };
        let oracle = newton_dual(&p, eps);
        let system = assemble(&p, eps).unwrap();
        let start = state_from_dual(&oracle, &p);
        let mut state = start.clone();
        for _ in 0..50 {
            state = outer_step(&system, &state, DrParams::default()).unwrap().0;
        }
        assert!(state.distance(&start) < 1e-8, "case {case}: {:e}", state.distance(&start));
    }
}

#[test]
fn prior_initialization_at_the_optimum_is_stationary() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for mode in [InitMode::Prior, InitMode::Consistent] {
        let p = random_problem(&mut rng, 4, 3, 3);
        let eps = 0.1;
        let oracle = newton_dual(&p, eps);
        let system = assemble(&p, eps).unwrap();
        let init = InitParams {
            epsilon_init: eps,
            sinkhorn_iters: 5000,
            sinkhorn_tol: Some(1e-15),
            mode,
        };
        let start = initialize(&p, &system, &oracle.sigma, &init).unwrap();
        let est = extract_sigma(&system, &start);
        for (a, b) in est.sigma.iter().zip(&oracle.sigma) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut state = start.clone();
        for _ in 0..50 {
            state = outer_step(&system, &state, DrParams::default()).unwrap().0;
        }
        assert!(state.distance(&start) < 1e-8, "{mode:?}: {:e}", state.distance(&start));
    }
}

#[test]
fn prior_initialization_away_from_the_optimum_biases_the_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_problem(&mut rng, 3, 2, 3);
    let eps = 0.05;
    let oracle = newton_dual(&p, eps);
    let run = |mode| {
        let config = SolverConfig {
            init_mode: mode,
            ..tight_config(eps, 2)
        };
        solve(&p, &config).unwrap().0
    };
    let gap = |s: &[f64]| s.iter().zip(&oracle.sigma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap(&run(InitMode::Consistent)) < 1e-8);
    assert!(gap(&run(InitMode::Prior)) > 1e-4);
}

#[test]
fn sigma_column_needs_no_renormalization_at_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = random_problem(&mut rng, 4, 3, 3);
    let oracle = newton_dual(&p, 0.1);
    assert!((oracle.sigma.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let system = assemble(&p, 0.1).unwrap();
    let est = extract_sigma(&system, &state_from_dual(&oracle, &p));
    assert!(est.defect < 1e-12);
}

/// `log u = [phi; -R^T phi]`, `log v = [psi; 0]`.
pub fn state_from_dual(dual: &common::DualSolution, p: &otunfold::UnfoldingProblem) -> ScalingState {
    let r = p.kernel.matrix();
    let mut log_u = dual.phi.clone();
    for k in 0..p.l() {
        log_u.push(-(0..p.m()).map(|i| r[(i, k)] * dual.phi[i]).sum::<f64>());
    }
    let mut log_v = dual.psi.clone();
    log_v.push(0.0);
    ScalingState { log_u, log_v }
}

#[test]
fn default_problem_marginals_and_trace() {
    let (p, _) = otunfold::problems::generate_1d(&otunfold::problems::OneDimConfig {
        l: 40,
        l_prime: 40,
        ..Default::default()
    })
    .unwrap();
    let config = SolverConfig {
        outer_iters: 30,
        eval_every: 10,
        ..SolverConfig::default()
    };
    let (sigma, trace) = solve(&p, &config).unwrap();
    assert_eq!(trace.len(), 30);
    for r in &trace.records {
        assert!(r.second_marginal_residual.unwrap() <= 1e-10);
        assert_eq!(r.w2sq_to_data.is_some(), r.iteration % 10 == 0);
        assert!(r.neg_log_likelihood.is_none());
    }
    assert!((sigma.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(trace.last().unwrap().sigma, sigma);
}

#[test]
fn early_stop_ends_the_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let p = random_problem(&mut rng, 3, 2, 2);
    let config = SolverConfig {
        early_stop: true,
        ..tight_config(0.5, 2)
    };
    let (_, trace) = solve(&p, &config).unwrap();
    assert!(trace.len() < config.outer_iters);
}
