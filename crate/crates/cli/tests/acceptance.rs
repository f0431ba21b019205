use std::time::Instant;

use mmadmm::blockspace::{read_csv_matrix, BlockOperatorFamily, BlockVector, WeightMatrix};
use mmadmm::diagnostics::{gauss_seidel_bound_matrices, mixed_bound_matrices, oracle_solve, BoundReport};
use mmadmm::partition::{case1_partition, descending_order, Partition};
use mmadmm::problems::{
    block_rng, build_latent_lrr, build_nonneg_matrix_completion, build_nonneg_sparse_coding, sparse_coding_from,
    ConstraintRow, DataGenSpec, LatentLrrFormulation, ProblemSpec, SparseCodingData, SubspaceData,
};
use mmadmm::prox::ProxFunction;
use mmadmm::solvers::*;
use mmadmm::surrogates::{proximal_surrogate, ObjectiveFn, SurrogateSpec};
use mmadmm_cli::commands::partition_study;
use mmadmm_cli::{generate, GenerateSpec, Manifest, ProblemKind};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

const SEEDS: [u64; 3] = [1, 2, 3];

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn fixed(iters: usize) -> SolverConfig<f64> {
    SolverConfig { max_iter: iters, eps_primal: 0.0, eps_step: 0.0, ..SolverConfig::default() }
}

fn final_objective(p: &ProblemSpec<f64>, kind: SolverKind, cfg: &SolverConfig<f64>) -> Result<f64, String> {
    let res = run(p, kind, cfg).map_err(|e| format!("{}: {e}", kind.name()))?;
    res.trace().last().map(|t| t.objective).ok_or_else(|| "empty trace".to_string())
}

fn gaussian(rows: usize, cols: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = block_rng(seed, stream);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Dense single-row problem with a feasible right-hand side.
fn dense_problem(d: usize, dims: &[usize], terms: Vec<ProxFunction<f64>>, seed: u64) -> ProblemSpec<f64> {
    let a: Vec<DMatrix<f64>> = dims.iter().enumerate().map(|(i, &m)| gaussian(d, m, seed, i as u64)).collect();
    let mut b = DMatrix::zeros(d, 1);
    for (i, ai) in a.iter().enumerate() {
        b += ai * gaussian(ai.ncols(), 1, seed, 100 + i as u64);
    }
    let row = ConstraintRow::new(BlockOperatorFamily::dense(a).unwrap(), BlockVector::new(vec![b]).unwrap()).unwrap();
    ProblemSpec::new("toy", terms, vec![row], None).unwrap()
}

/// Generated data, chosen `n₁` against a prefix enumeration with independently computed norms.
fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest =
        generate(&GenerateSpec::new(ProblemKind::Nnsc, 50, 100, 7), dir.path()).map_err(|e| e.to_string())?;
    let problem = Manifest::read(&manifest).and_then(|m| m.load(None)).map_err(|e| e.to_string())?;
    let study = partition_study(&problem, false).map_err(|e| e.to_string())?;

    let enumerate = |norms: &[f64]| {
        let n = norms.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap());
        let mut best = (0, f64::INFINITY);
        for n1 in 1..=n {
            let s1: f64 = order[..n1].iter().map(|&i| norms[i]).sum();
            let s2: f64 = order[n1..].iter().map(|&i| norms[i]).sum();
            let l2 = if n1 == n { 0.0 } else { (n - n1 - 1) as f64 * s2 };
            let score = (n1 - 1) as f64 * s1 + l2;
            if score < best.1 {
                best = (n1, score);
            }
        }
        best
    };
    let (n1, score) = enumerate(&problem.constraints.norms_sq());
    let mut svd_norms: Vec<f64> = Vec::with_capacity(100);
    for i in 1..=100 {
        let a = read_csv_matrix(&dir.path().join(format!("A_{i}.csv"))).map_err(|e| e.to_string())?;
        let a: DMatrix<f64> = a;
        svd_norms.push(a.singular_values().max().powi(2));
    }
    let (svd_n1, _) = enumerate(&svd_norms);
    check(
        study.n1 == n1 && study.best_score() == score && svd_n1 == n1,
        format!(
            "study n1={} score={}, enumeration n1={n1} score={score}, svd n1={svd_n1}",
            study.n1,
            study.best_score()
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut notes = Vec::new();
    for seed in SEEDS {
        let p: ProblemSpec<f64> = build_nonneg_sparse_coding(&DataGenSpec::sparse_coding_growing(50, 100, seed))
            .map_err(|e| e.to_string())?;
        let heuristic = final_objective(&p, SolverKind::MAdmm, &fixed(100))?;
        let order = descending_order(&p.constraints.norms_sq());
        let single = Partition::user(vec![order[0]], 100).map_err(|e| e.to_string())?;
        let worst = final_objective(&p, SolverKind::MAdmm, &SolverConfig { partition: Some(single), ..fixed(100) })?;
        let margin = (worst - heuristic) / worst.abs();
        notes.push(format!("seed {seed}: {heuristic:.4} vs {worst:.4} ({:.1}%)", 100.0 * margin));
        if margin < 0.01 {
            return Err(notes.join("; "));
        }
    }
    Ok(notes.join("; "))
}

fn split_instance(seed: u64, n: usize) -> Result<ProblemSpec<f64>, String> {
    let d = SparseCodingData::generate(&DataGenSpec::sparse_coding(50, vec![2000], seed))
        .and_then(|d| d.split(n))
        .map_err(|e| e.to_string())?;
    sparse_coding_from(&d.a, &d.y, None).map_err(|e| e.to_string())
}

fn criterion_3() -> Outcome {
    let mut notes = Vec::new();
    for seed in SEEDS {
        let p = split_instance(seed, 100)?;
        let bt = final_objective(&p, SolverKind::MAdmmBacktracking, &fixed(100))?;
        let m = final_objective(&p, SolverKind::MAdmm, &fixed(100))?;
        let l = final_objective(&p, SolverKind::LAdmmPs, &fixed(100))?;
        notes.push(format!("seed {seed}: bt {bt:.4} m {m:.4} l {l:.4}"));
        if bt > 1.01 * m || m > 1.01 * l {
            return Err(notes.join("; "));
        }
    }
    let coarse = final_objective(&split_instance(SEEDS[0], 20)?, SolverKind::MAdmmBacktracking, &fixed(100))?;
    let fine = final_objective(&split_instance(SEEDS[0], 100)?, SolverKind::MAdmmBacktracking, &fixed(100))?;
    let gap = (coarse - fine).abs() / fine.abs();
    notes.push(format!("n=20 vs n=100: {coarse:.4} vs {fine:.4}"));
    check(gap <= 0.1, notes.join("; "))
}

fn criterion_4() -> Outcome {
    let mut notes = Vec::new();
    for seed in SEEDS {
        let p = split_instance(seed, 100)?;
        let change = |kind| -> Result<f64, String> {
            let slow = final_objective(&p, kind, &SolverConfig { rho: 1.1, ..fixed(100) })?;
            let fast = final_objective(&p, kind, &SolverConfig { rho: 2.0, ..fixed(100) })?;
            Ok((fast - slow).abs() / slow.abs())
        };
        let bt = change(SolverKind::MAdmmBacktracking)?;
        let l = change(SolverKind::LAdmmPs)?;
        notes.push(format!("seed {seed}: bt {bt:.3} l {l:.3}"));
        if bt > l {
            return Err(notes.join("; "));
        }
    }
    Ok(notes.join("; "))
}

fn constant_beta(iters: usize) -> SolverConfig<f64> {
    SolverConfig { beta0: 1.0, rho: 1.0, record_iterates: true, ..fixed(iters) }
}

fn criterion_5() -> Outcome {
    let p = dense_problem(10, &[5, 5], vec![ProxFunction::l1(1.0), ProxFunction::sq(1.0)], 11);
    let cert = oracle_solve(&p, 1e-9).map_err(|e| e.to_string())?;
    let eta1 = 1.02 * p.constraints.operator(0).op_norm_sq();
    let g = vec![WeightMatrix::ScaledIdentityMinusGram(eta1), WeightMatrix::ScaledIdentity(0.1)];
    let cfg = SolverConfig { weights: Some(g.clone()), ..constant_beta(201) };
    let res = run(&p, SolverKind::GaussSeidel, &cfg).map_err(|e| e.to_string())?;
    let m = gauss_seidel_bound_matrices(&p, &[0.0, 0.0], &g, 1.0).map_err(|e| e.to_string())?;
    let two =
        BoundReport::from_run(&p, &res, &cert, &m, &p.zeros(), &p.constraints.zero_rhs()).map_err(|e| e.to_string())?;

    let q = dense_problem(10, &[5, 5, 5, 5], vec![ProxFunction::l1(1.0); 4], 12);
    let part = case1_partition(&q.constraints.norms_sq(), Some(&q.constraints)).map_err(|e| e.to_string())?;
    let cert = oracle_solve(&q, 1e-9).map_err(|e| e.to_string())?;
    let cfg = SolverConfig { partition: Some(part.clone()), ..constant_beta(201) };
    let res = run(&q, SolverKind::MAdmm, &cfg).map_err(|e| e.to_string())?;
    let m = mixed_bound_matrices(&q, &part, &[0.0; 4], &res.initial_weights, 1.0).map_err(|e| e.to_string())?;
    let four =
        BoundReport::from_run(&q, &res, &cert, &m, &q.zeros(), &q.constraints.zero_rhs()).map_err(|e| e.to_string())?;
    check(
        two.per_k.len() == 201 && two.holds(1e-8) && four.holds(1e-8),
        format!("two-block worst excess {:e}, four-block worst excess {:e}", two.worst_excess(), four.worst_excess()),
    )
}

fn criterion_6() -> Outcome {
    let mut notes = Vec::new();
    for seed in SEEDS {
        let p: ProblemSpec<f64> = build_nonneg_matrix_completion(&DataGenSpec::completion(64, 64, 5, seed), 10.0)
            .map_err(|e| e.to_string())?;
        let cfg = SolverConfig {
            beta0: 64.0 * 1e-4,
            schedule: Schedule::Adaptive { factor: 10.0, threshold: 1e-3 },
            stop_rule: StopRule::Blockwise,
            eps_primal: 1e-3,
            eps_step: 1e-4,
            max_iter: 1000,
            ..SolverConfig::default()
        };
        let iters = |kind| -> Result<usize, String> {
            let r = run(&p, kind, &cfg).map_err(|e| e.to_string())?;
            match r.stop_reason {
                StopReason::Converged => Ok(r.iterations()),
                _ => Err(format!("{} did not converge", kind.name())),
            }
        };
        let m = iters(SolverKind::MAdmm)?;
        let l = iters(SolverKind::LAdmmPs)?;
        notes.push(format!("seed {seed}: {m} vs {l}"));
        if m as f64 > 0.9 * l as f64 {
            return Err(notes.join("; "));
        }
    }
    Ok(notes.join("; "))
}

fn criterion_7() -> Outcome {
    let data = SubspaceData::generate(50, 5, 5, 30, 0.2, SEEDS[0]).map_err(|e| e.to_string())?;
    let p: ProblemSpec<f64> =
        build_latent_lrr(&data.x, 0.1, LatentLrrFormulation::ThreeBlock).map_err(|e| e.to_string())?;
    let m = run(&p, SolverKind::MAdmm, &fixed(300)).map_err(|e| e.to_string())?;
    let l = run(&p, SolverKind::LAdmmPs, &fixed(300)).map_err(|e| e.to_string())?;
    let (fm, fl) = (m.trace()[299].objective, l.trace()[299].objective);
    let (rm, rl) = (m.trace()[99].residual_norm, l.trace()[99].residual_norm);
    check(fm <= 1.01 * fl && rm <= rl, format!("f300 {fm:.4} vs {fl:.4}, r100 {rm:.3e} vs {rl:.3e}"))
}

fn max_diff(a: &BlockVector<f64>, b: &BlockVector<f64>) -> f64 {
    a.sub(b).unwrap().blocks().iter().map(|m| m.amax()).fold(0.0, f64::max)
}

fn same_trace(a: &[IterationTrace], b: &[IterationTrace]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            (x.k, x.objective, x.residual_norm, x.beta, x.step_norm, x.backtracks)
                == (y.k, y.objective, y.residual_norm, y.beta, y.step_norm, y.backtracks)
        })
}

fn criterion_8() -> Outcome {
    let mut rng = block_rng(8, 0);

    // Prox against a grid minimizer in one dimension.
    let grid: Vec<f64> = (0..=50_000).map(|i| -5.0 + i as f64 * 2e-4).collect();
    for f in [ProxFunction::l1(1.0), ProxFunction::l1_nonneg(0.7), ProxFunction::sq(2.0), ProxFunction::nonneg()] {
        for _ in 0..20 {
            let v: f64 = rng.gen_range(-3.0..3.0);
            let t: f64 = rng.gen_range(0.1..2.0);
            let obj = |x: f64| t * f.evaluate(&DMatrix::from_element(1, 1, x)).unwrap() + 0.5 * (x - v).powi(2);
            let best = grid.iter().copied().filter(|x| obj(*x).is_finite()).fold(f64::NAN, |b, x| {
                if b.is_nan() || obj(x) < obj(b) {
                    x
                } else {
                    b
                }
            });
            let got = f.prox(&DMatrix::from_element(1, 1, v), t).unwrap()[0];
            if (got - best).abs() > 2e-4 {
                return Err(format!("prox at v={v} t={t}: {got} vs grid {best}"));
            }
        }
    }

    // Proximal surrogate majorizes and touches.
    let l1: ObjectiveFn<f64> = std::sync::Arc::new(|x: &BlockVector<f64>| x.to_flat().iter().map(|v| v.abs()).sum());
    let anchor = BlockVector::from_vecs(vec![vec![0.3, -1.0]]).unwrap();
    let s =
        proximal_surrogate(l1, anchor.clone(), vec![WeightMatrix::ScaledIdentity(0.5)]).map_err(|e| e.to_string())?;
    if s.value(&anchor) != s.target_value(&anchor) {
        return Err("surrogate does not touch at the anchor".into());
    }
    for _ in 0..100 {
        let x = BlockVector::from_vecs(vec![vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]]).unwrap();
        if s.value(&x) < s.target_value(&x) - 1e-12 {
            return Err("surrogate below the target".into());
        }
    }

    // Dual update identity and degeneracies.
    let p = dense_problem(10, &[5, 4], vec![ProxFunction::l1(1.0), ProxFunction::sq(1.0)], 3);
    let rec = |iters| SolverConfig { record_iterates: true, ..fixed(iters) };
    let g = default_weights(&p, SolverKind::GaussSeidel, None, &SurrogateSpec::exact(2), &rec(1)).unwrap();
    let cfg = SolverConfig { weights: Some(g), partition: Some(Partition::user(vec![0], 2).unwrap()), ..rec(60) };
    let gs = run(&p, SolverKind::GaussSeidel, &cfg).unwrap();
    let m = run(&p, SolverKind::MAdmm, &cfg).unwrap();
    if gs.iterates.iter().zip(&m.iterates).any(|(a, b)| max_diff(a, b) > 1e-12) {
        return Err("gauss-seidel differs from M-ADMM with a singleton B1".into());
    }
    let mut lambda = BlockVector::from_vecs(vec![vec![0.0; 10]]).unwrap();
    for (k, x) in gs.iterates.iter().enumerate() {
        lambda.axpy(gs.betas[k], &p.residual(x).unwrap()).unwrap();
    }
    if lambda != gs.state.lambda {
        return Err("multiplier is not the running sum of beta-weighted residuals".into());
    }
    let q = dense_problem(10, &[3, 4, 5], vec![ProxFunction::l1(1.0); 3], 4);
    let g = default_weights(&q, SolverKind::Jacobi, None, &SurrogateSpec::exact(3), &rec(1)).unwrap();
    let cfg = SolverConfig { weights: Some(g), partition: Some(Partition::user(vec![], 3).unwrap()), ..rec(60) };
    let j = run(&q, SolverKind::Jacobi, &cfg).unwrap();
    let m = run(&q, SolverKind::MAdmm, &cfg).unwrap();
    if j.iterates.iter().zip(&m.iterates).any(|(a, b)| max_diff(a, b) > 1e-12) {
        return Err("jacobi differs from M-ADMM with an empty B1".into());
    }

    // Backtracking postconditions and parallel determinism.
    let r = dense_problem(12, &[4, 4, 4, 4, 4], vec![ProxFunction::l1(1.0); 5], 5);
    let part = Partition::user(vec![0, 1], 5).unwrap();
    let cfg = SolverConfig { beta0: 0.5, ..SolverConfig::default() };
    let (g, safe) = backtracking_weights(&r, &part, &cfg).unwrap();
    let mut state = SolverState::new(&r, cfg.beta0, g);
    for _ in 0..30 {
        let step = madmm_bt_step(&mut state, &r, &SurrogateSpec::exact(5), &part, &safe, &cfg, &Executor::sequential())
            .map_err(|e| e.to_string())?;
        let c = step.bt_check.ok_or("no backtracking check")?;
        if !(c.lhs2 <= c.rhs2 && c.lhs3 <= c.rhs3) {
            return Err(format!("backtracking postcondition: {c:?}"));
        }
    }
    let sc: ProblemSpec<f64> = build_nonneg_sparse_coding(&DataGenSpec::sparse_coding_growing(30, 6, 8)).unwrap();
    for kind in [SolverKind::Jacobi, SolverKind::MAdmm, SolverKind::MAdmmBacktracking] {
        let one = run(&sc, kind, &SolverConfig { workers: 1, ..fixed(40) }).unwrap();
        let four = run(&sc, kind, &SolverConfig { workers: 4, ..fixed(40) }).unwrap();
        if !same_trace(one.trace(), four.trace()) || one.x() != four.x() {
            return Err(format!("{} depends on the worker count", kind.name()));
        }
    }
    Ok("prox, surrogate, dual update, degeneracies, backtracking, determinism".into())
}

/// Writes past the test harness capture so results show in plain `cargo test` output.
fn report(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("partition oracle equivalence", criterion_1),
        ("partition benefit", criterion_2),
        ("backtracking ordering", criterion_3),
        ("rho sensitivity", criterion_4),
        ("bound verification", criterion_5),
        ("completion iteration advantage", criterion_6),
        ("latent LRR ordering", criterion_7),
        ("property suites", criterion_8),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => report(&format!("criterion {} PASS {name} ({secs:.1}s): {msg}", i + 1)),
            Err(msg) => {
                report(&format!("criterion {} FAIL {name} ({secs:.1}s): {msg}", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
