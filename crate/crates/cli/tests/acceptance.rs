//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test -p otunfold-cli --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{kl_project_oracle, newton_dual, objective, proj_columns, proj_rows, random_problem, random_simplex, split_plan};
use nalgebra::DMatrix;
use otunfold::eval::{wasserstein_1d, wasserstein_exact, MetricBackend};
use otunfold::klproj::{kl_project_ker, ConstraintOperator, DEFAULT_DR_ITERS, DEFAULT_TAU};
use otunfold::measures::{DiscreteMeasure, PointSet, UnfoldingProblem};
use otunfold::ot_unfold::{assemble, initialize, outer_step, DrParams, InitMode, InitParams, ScalingState, SolverConfig};
use otunfold::problems::{generate_1d, OneDimConfig};
use otunfold::rl_unfold::{bin_problem, neg_log_likelihood, rl_step, BinSpec, GridMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const TIGHT_DR: DrParams = DrParams { tau: 0.1, iters: 400 };
const SMALL_CASES: usize = 20;

/// `(m, L, n)` with `m + L <= 8`, `n <= 4`, and the epsilon for case `k`.
fn small_instance(rng: &mut ChaCha8Rng, k: usize) -> (UnfoldingProblem, f64) {
    let m = rng.random_range(1..=5);
    let l = rng.random_range(1..=(8 - m).min(4));
    let n = rng.random_range(1..=4);
    let eps = if k.is_multiple_of(2) { 0.05 } else { 0.5 };
    (random_problem(rng, m, l, n), eps)
}

fn oracle_objective() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for k in 0..SMALL_CASES {
        let (p, eps) = small_instance(&mut rng, k);
        let oracle = newton_dual(&p, eps);
        let system = assemble(&p, eps).map_err(|e| e.to_string())?;
        let init = InitParams {
            epsilon_init: eps,
            sinkhorn_iters: 2000,
            sinkhorn_tol: None,
            mode: InitMode::Consistent,
        };
        let mut state = initialize(&p, &system, &vec![1.0 / p.l() as f64; p.l()], &init).map_err(|e| e.to_string())?;
        for _ in 0..300 {
            state = outer_step(&system, &state, TIGHT_DR).map_err(|e| e.to_string())?.0;
        }
        let (gamma, sigma) = split_plan(&system.plan(&state), p.m(), p.n());
        let value = objective(&p.cost, &gamma, &sigma, eps);
        worst = worst.max((value - oracle.objective).abs() / oracle.objective.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-4 && secs < 10.0,
        format!("{SMALL_CASES} problems, max relative objective gap {worst:.2e} (tol 1e-4), {secs:.2} s (limit 10 s)"),
    )
}

fn bregman_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for k in 0..SMALL_CASES {
        let (p, eps) = small_instance(&mut rng, k);
        let system = assemble(&p, eps).map_err(|e| e.to_string())?;
        let init = InitParams {
            epsilon_init: eps,
            sinkhorn_iters: 50,
            ..InitParams::default()
        };
        let mut state = initialize(&p, &system, &vec![1.0 / p.l() as f64; p.l()], &init).map_err(|e| e.to_string())?;
        let mut explicit = system.plan(&state);
        for _ in 1..=10 {
            state = outer_step(&system, &state, TIGHT_DR).map_err(|e| e.to_string())?.0;
            explicit = proj_columns(&proj_rows(&explicit, p.kernel.matrix()), &system.b);
            worst = worst.max((&system.plan(&state) - &explicit).amax());
        }
    }
    ensure(
        worst <= 1e-8,
        format!("{SMALL_CASES} problems x 10 steps, max elementwise gap {worst:.2e} (tol 1e-8)"),
    )
}

fn fixed_point() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for k in 0..SMALL_CASES {
        let (p, eps) = small_instance(&mut rng, k);
        let oracle = newton_dual(&p, eps);
        let system = assemble(&p, eps).map_err(|e| e.to_string())?;
        let r = p.kernel.matrix();
        let mut log_u = oracle.phi.clone();
        log_u.extend((0..p.l()).map(|c| -(0..p.m()).map(|i| r[(i, c)] * oracle.phi[i]).sum::<f64>()));
        let mut log_v = oracle.psi.clone();
        log_v.push(0.0);
        let start = ScalingState { log_u, log_v };
        let mut state = start.clone();
        for _ in 0..50 {
            state = outer_step(&system, &state, DrParams::default()).map_err(|e| e.to_string())?.0;
        }
        worst = worst.max(state.distance(&start));
    }
    ensure(
        worst < 1e-8,
        format!("{SMALL_CASES} problems, max log-scaling drift over 50 steps {worst:.2e} (tol 1e-8)"),
    )
}

fn kl_projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let l = 1000;
    let a = random_simplex(&mut rng, l);
    let b = random_simplex(&mut rng, l);
    let op = ConstraintOperator::new(&DMatrix::identity(l, l)).map_err(|e| e.to_string())?;
    let w: Vec<f64> = a.iter().chain(&b).copied().collect();
    let x = kl_project_ker(&op, &w, DEFAULT_TAU, DEFAULT_DR_ITERS).map_err(|e| e.to_string())?.point;
    let diag = (0..l)
        .map(|k| {
            let g = (a[k] * b[k]).sqrt();
            (x[k] - g).abs().max((x[l + k] - g).abs())
        })
        .fold(0.0, f64::max);

    let mut generic: f64 = 0.0;
    for _ in 0..40 {
        let m = rng.random_range(1..=6);
        let l = rng.random_range(1..=(10 - m).min(4));
        let mut r = DMatrix::from_fn(m, l, |_, _| rng.random_range(0.05..1.0));
        for mut c in r.column_iter_mut() {
            let s = c.sum();
            c /= s;
        }
        let w: Vec<f64> = (0..m + l).map(|_| rng.random_range(0.05..1.0)).collect();
        let op = ConstraintOperator::new(&r).map_err(|e| e.to_string())?;
        let tau = w.iter().sum::<f64>() / w.len() as f64;
        let x = kl_project_ker(&op, &w, tau, 500).map_err(|e| e.to_string())?.point;
        let oracle = kl_project_oracle(&r, &w);
        generic = generic.max(x.iter().zip(&oracle).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
    }
    ensure(
        diag <= 1e-6 && generic <= 1e-5,
        format!("diagonal L = {l}: {diag:.2e} (tol 1e-6); 40 random m+L <= 10: {generic:.2e} (tol 1e-5)"),
    )
}

fn feasibility_at_scale() -> Outcome {
    let start = Instant::now();
    let (p, _) = generate_1d(&OneDimConfig::default()).map_err(|e| e.to_string())?;
    let config = SolverConfig {
        metric: MetricBackend::None,
        ..SolverConfig::default()
    };
    let (_, trace) = otunfold::solve(&p, &config).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = trace
        .records
        .iter()
        .map(|r| r.second_marginal_residual.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let ker = trace.last().and_then(|r| r.ker_residual).unwrap_or(f64::INFINITY);
    ensure(
        trace.len() == 200 && worst <= 1e-10 && ker <= 1e-6 && secs < 300.0,
        format!(
            "L = {}, n = {}, {} steps: max second-marginal {worst:.2e} (tol 1e-10), final ker {ker:.2e} (tol 1e-6), {secs:.1} s",
            p.l(),
            p.n(),
            trace.len()
        ),
    )
}

fn em_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let m = rng.random_range(2..=30);
        let l = rng.random_range(1..=12);
        let n = rng.random_range(1..=30);
        let p = random_problem(&mut rng, m, l, n);
        let bins = BinSpec::PerAxis(rng.random_range(2..=20));
        let binned = bin_problem(&p, &bins, 1e-6, GridMode::Shared).map_err(|e| e.to_string())?;
        let mut sigma = random_simplex(&mut rng, l);
        let mut prev = neg_log_likelihood(&binned, &sigma).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            sigma = rl_step(&binned, &sigma).map_err(|e| e.to_string())?;
            let next = neg_log_likelihood(&binned, &sigma).map_err(|e| e.to_string())?;
            worst = worst.max(next - prev);
            prev = next;
        }
    }
    ensure(
        worst <= 1e-12,
        format!("100 instances x 100 steps, max increase {worst:.2e} (slack 1e-12)"),
    )
}

fn exact_w() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst: f64 = 0.0;
    let measure = |rng: &mut ChaCha8Rng| {
        let k = rng.random_range(1..=50);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        DiscreteMeasure::new(PointSet::from_scalars(&x), random_simplex(rng, k)).unwrap()
    };
    for case in 0..500 {
        let (mu, nu) = (measure(&mut rng), measure(&mut rng));
        let p = if case % 2 == 0 { 2.0 } else { 1.0 };
        let exact = wasserstein_exact(&mu, &nu, p).map_err(|e| e.to_string())?.0;
        let sweep = wasserstein_1d(&mu, &nu, p).map_err(|e| e.to_string())?;
        worst = worst.max((exact - sweep).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-10 && secs < 30.0,
        format!("500 instances, max gap {worst:.2e} (tol 1e-10), {secs:.2} s (limit 30 s)"),
    )
}

fn otunfold(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_otunfold"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("otunfold {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

const SEEDS: &str = "[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]";
const BIN_COUNTS: [&str; 3] = ["rl-12", "rl-28", "rl-112"];

/// Runs `compare` on the default 1D problem with `m` kernel samples per
/// prior point and returns the output directory.
fn compare_run(work: &Path, m: usize) -> Result<PathBuf, String> {
    let cfg = work.join(format!("m{m}.toml"));
    let body = format!(
        "schema_version = 1\nseeds = {SEEDS}\n[problem]\ngenerator = \"one_dim\"\nm = {m}\n\
         [rl]\nbins = [12, 28, 112]\n[eval]\neval_every = 10\n"
    );
    fs::write(&cfg, body).map_err(|e| e.to_string())?;
    let out = work.join(format!("m{m}"));
    otunfold(&["compare", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])?;
    Ok(out)
}

/// `(method, seed) -> final W2` from `final.csv`.
fn finals(dir: &Path) -> Result<Vec<(String, u64, f64)>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(dir.join("final.csv"))
        .map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("no column {name}"));
    let (cm, cs, cw) = (col("method")?, col("seed")?, col("final_w2")?);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let w: f64 = row[cw].parse().map_err(|_| format!("bad final_w2 `{}`", &row[cw]))?;
        out.push((row[cm].to_string(), row[cs].parse().map_err(|_| "bad seed".to_string())?, w));
    }
    Ok(out)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn of_method(rows: &[(String, u64, f64)], method: &str) -> Vec<f64> {
    rows.iter().filter(|r| r.0 == method).map(|r| r.2).collect()
}

fn ot_beats_rl(rows: &[(String, u64, f64)]) -> Outcome {
    let ot = of_method(rows, "ot");
    if ot.len() < 10 {
        return Err(format!("only {} OT seeds", ot.len()));
    }
    let (ot_mean, ot_se) = mean_se(&ot);
    let mut detail = format!("OT {ot_mean:.4}");
    let mut all_below = true;
    let mut best: Option<(f64, f64, &str)> = None;
    for label in BIN_COUNTS {
        let rl = of_method(rows, label);
        if rl.len() != ot.len() {
            return Err(format!("{label}: {} seeds vs {} for OT", rl.len(), ot.len()));
        }
        let (mean, se) = mean_se(&rl);
        all_below &= ot_mean < mean;
        if best.is_none_or(|b| mean < b.0) {
            best = Some((mean, se, label));
        }
        detail += &format!(", {label} {mean:.4}");
    }
    let (best_mean, best_se, label) = best.unwrap();
    let pooled = (ot_se.powi(2) + best_se.powi(2)).sqrt();
    let margin = best_mean - ot_mean;
    ensure(
        all_below && margin > pooled,
        format!("{} seeds, mean final W2: {detail}; margin to {label} {margin:.4} vs pooled SE {pooled:.4}", ot.len()),
    )
}

fn best_rl_gap(rows: &[(String, u64, f64)]) -> f64 {
    let ot = mean_se(&of_method(rows, "ot")).0;
    let best = BIN_COUNTS
        .iter()
        .map(|l| mean_se(&of_method(rows, l)).0)
        .fold(f64::INFINITY, f64::min);
    best - ot
}

fn rl_gap_shrinks(m1: &[(String, u64, f64)], m12: &[(String, u64, f64)]) -> Outcome {
    let seeds = |rows: &[(String, u64, f64)]| {
        let mut s: Vec<u64> = rows.iter().filter(|r| r.0 == "ot").map(|r| r.1).collect();
        s.sort();
        s
    };
    if seeds(m1) != seeds(m12) || seeds(m1).len() < 10 {
        return Err("seed sets differ or fewer than 10 seeds".into());
    }
    let (g1, g12) = (best_rl_gap(m1), best_rl_gap(m12));
    ensure(
        g12 < g1,
        format!("{} seeds, best RL minus OT mean final W2: M = 1 {g1:.4}, M = 12 {g12:.4}", seeds(m1).len()),
    )
}

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let mut stack = vec![PathBuf::new()];
    let mut count = 0;
    while let Some(rel) = stack.pop() {
        let mut names: Vec<_> = fs::read_dir(a.join(&rel))
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        let mut other: Vec<_> = fs::read_dir(b.join(&rel))
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name())
            .collect();
        other.sort();
        if names != other {
            return Err(format!("{} lists differ", rel.display()));
        }
        for name in names {
            let r = rel.join(name);
            if a.join(&r).is_dir() {
                stack.push(r);
            } else {
                if fs::read(a.join(&r)).map_err(|e| e.to_string())? != fs::read(b.join(&r)).map_err(|e| e.to_string())? {
                    return Err(format!("{} differs", r.display()));
                }
                count += 1;
            }
        }
    }
    Ok(count)
}

fn determinism(work: &Path, run: &Path) -> Outcome {
    let sweep_cfg = work.join("sweep.toml");
    fs::write(
        &sweep_cfg,
        "schema_version = 1\nseeds = [3, 5]\n[problem]\ngenerator = \"one_dim\"\nl = 30\nl_prime = 30\n\
         [solver]\nouter_iters = 20\n[rl]\niters = 20\nbins = [8, 20]\n[sweep]\naxis = \"epsilon\"\nvalues = [0.001, 0.01]\n",
    )
    .map_err(|e| e.to_string())?;
    let sweep = work.join("sweep");
    otunfold(&["sweep", "--config", sweep_cfg.to_str().unwrap(), "--out", sweep.to_str().unwrap()])?;

    let artifacts = [
        run.join("convergence.svg"),
        run.join("summary.json"),
        run.join("seed-7/rl-28/trace.csv"),
        sweep.join("sweep.csv"),
        sweep.join("epsilon-0.01/observables.svg"),
    ];
    let mut files = 0;
    for (k, artifact) in artifacts.iter().enumerate() {
        let again = work.join(format!("rerun-{k}"));
        otunfold(&["rerun", "--config", artifact.to_str().unwrap(), "--out", again.to_str().unwrap()])?;
        let original = if artifact.starts_with(&sweep) {
            if k == 3 {
                sweep.clone()
            } else {
                sweep.join("epsilon-0.01")
            }
        } else {
            run.to_path_buf()
        };
        files += same_tree(&original, &again).map_err(|e| format!("rerun of {}: {e}", artifact.display()))?;
    }
    Ok(format!("{} artifacts re-run, {files} files byte-identical", artifacts.len()))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, Outcome)> = vec![
        ("oracle equivalence", oracle_objective()),
        ("Bregman/Sinkhorn equivalence", bregman_equivalence()),
        ("fixed point at optimum", fixed_point()),
        ("KL projection", kl_projection()),
        ("marginal feasibility at scale", feasibility_at_scale()),
    ];
    let runs = compare_run(work.path(), 1).and_then(|d| Ok((finals(&d)?, d)));
    let runs12 = compare_run(work.path(), 12).and_then(|d| finals(&d));
    results.push((
        "OT beats RL at M = 1",
        runs.as_ref().map_err(Clone::clone).and_then(|(rows, _)| ot_beats_rl(rows)),
    ));
    results.push((
        "RL approaches OT as M grows",
        match (&runs, &runs12) {
            (Ok((a, _)), Ok(b)) => rl_gap_shrinks(a, b),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        },
    ));
    results.push(("EM monotonicity", em_monotone()));
    results.push(("exact W agreement", exact_w()));
    results.push((
        "CLI determinism",
        runs.as_ref().map_err(Clone::clone).and_then(|(_, dir)| determinism(work.path(), dir)),
    ));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
