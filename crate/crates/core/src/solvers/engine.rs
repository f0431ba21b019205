use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::blockspace::{BlockVector, WeightMatrix};
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::problems::ProblemSpec;
use crate::scalar::Scalar;
use crate::surrogates::SurrogateSpec;

use super::subproblem::{k_quad, BlockSubproblem};
use super::weights::{backtracking_weights, default_weights, resolve_partition};
use super::{relative_denominator, SolverConfig, SolverKind, StopRule};

/// Runs independent block updates, on a private thread pool when more than one worker is
/// requested. Results always come back in block order.
pub struct Executor {
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn new(workers: usize) -> Result<Self> {
        if workers <= 1 {
            return Ok(Executor { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        Ok(Executor { pool: Some(pool) })
    }

    pub fn sequential() -> Self {
        Executor { pool: None }
    }

    pub fn map<R, F>(&self, items: &[usize], f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(usize) -> Result<R> + Sync + Send,
    {
        match &self.pool {
            None => items.iter().map(|&i| f(i)).collect(),
            Some(pool) => pool.install(|| items.par_iter().map(|&i| f(i)).collect()),
        }
    }
}

/// One row per completed iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub k: usize,
    pub objective: f64,
    pub residual_norm: f64,
    pub rel_residual: f64,
    /// Penalty used by this iteration.
    pub beta: f64,
    pub step_norm: f64,
    pub backtracks: usize,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug)]
pub struct SolverState<T: Scalar> {
    pub x: BlockVector<T>,
    pub lambda: BlockVector<T>,
    pub beta: T,
    pub k: usize,
    pub g: Vec<WeightMatrix<T>>,
    pub backtrack_count: usize,
    pub trace: Vec<IterationTrace>,
}

impl<T: Scalar> SolverState<T> {
    /// Zero primal and dual variables.
    pub fn new(problem: &ProblemSpec<T>, beta0: T, g: Vec<WeightMatrix<T>>) -> Self {
        SolverState {
            x: problem.zeros(),
            lambda: problem.constraints.zero_rhs(),
            beta: beta0,
            k: 0,
            g,
            backtrack_count: 0,
            trace: Vec::new(),
        }
    }
}

/// Exact left and right sides of the two backtracking acceptance tests at the accepted
/// iterate: `lhs2 ≤ rhs2` and `lhs3 ≤ rhs3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BacktrackCheck<T> {
    pub lhs2: T,
    pub rhs2: T,
    pub lhs3: T,
    pub rhs3: T,
}

#[derive(Clone, Debug)]
pub struct StepReport<T: Scalar> {
    /// `Axᵏ⁺¹ − b`
    pub residual: BlockVector<T>,
    pub step_norm: T,
    pub max_block_step: T,
    pub beta: T,
    pub backtracks: usize,
    pub bt_check: Option<BacktrackCheck<T>>,
}

/// `λ ← λ + β(Ax − b)` at the current `x` and `β`; returns the residual used.
pub fn dual_update<T: Scalar>(state: &mut SolverState<T>, problem: &ProblemSpec<T>) -> Result<BlockVector<T>> {
    let r = problem.residual(&state.x)?;
    state.lambda.axpy(state.beta, &r)?;
    Ok(r)
}

/// Read-only data shared by every block update of one iteration.
struct Iteration<'a, T: Scalar> {
    problem: &'a ProblemSpec<T>,
    surrogate: &'a SurrogateSpec<T>,
    anchor: &'a BlockVector<T>,
    gradient: Option<BlockVector<T>>,
    beta: T,
    check: bool,
}

impl<'a, T: Scalar> Iteration<'a, T> {
    fn new(
        problem: &'a ProblemSpec<T>,
        surrogate: &'a SurrogateSpec<T>,
        state: &'a SolverState<T>,
        check: bool,
    ) -> Result<Self> {
        if surrogate.blocks.len() != problem.n_blocks() {
            return Err(Error::Dimension(format!(
                "{} surrogate entries for {} blocks",
                surrogate.blocks.len(),
                problem.n_blocks()
            )));
        }
        let gradient =
            if surrogate.blocks.iter().any(|s| s.uses_gradient()) { problem.smooth_gradient(&state.x)? } else { None };
        Ok(Iteration { problem, surrogate, anchor: &state.x, gradient, beta: state.beta, check })
    }

    /// `λ + β s` for the anchor residual `s`.
    fn multiplier(&self, lambda: &BlockVector<T>, s: &BlockVector<T>) -> Result<BlockVector<T>> {
        let mut w = lambda.clone();
        w.axpy(self.beta, s)?;
        Ok(w)
    }

    fn update_block(&self, i: usize, weight: &WeightMatrix<T>, w: &BlockVector<T>) -> Result<DMatrix<T>> {
        let p = self.problem;
        let sp = BlockSubproblem::assemble(
            i,
            &p.terms[i],
            &self.surrogate.blocks[i],
            weight,
            p.constraints.operator(i),
            self.anchor.block(i),
            w,
            self.beta,
            self.gradient.as_ref().map(|g| g.block(i)),
            p.smooth.as_ref().is_some_and(|h| h.involves(i)),
        )?;
        let x = sp.solve()?;
        if self.check {
            let before = sp.value(self.anchor.block(i))?;
            let after = sp.value(&x)?;
            if after > before + T::lit(1e-10) * before.abs().max(T::one()) {
                return Err(Error::InternalConsistency(format!(
                    "block {i}: subproblem value rose from {before} to {after}"
                )));
            }
            let opt = sp.optimality_residual(&x, T::lit(1e-12))?;
            let scale = sp.linear.norm().max(T::one());
            if opt > T::lit(1e-9) * scale {
                return Err(Error::InternalConsistency(format!("block {i}: optimality residual {opt}")));
            }
        }
        Ok(x)
    }

    fn phase(
        &self,
        exec: &Executor,
        blocks: &[usize],
        g: &[WeightMatrix<T>],
        lambda: &BlockVector<T>,
        s: &BlockVector<T>,
    ) -> Result<Vec<DMatrix<T>>> {
        let w = self.multiplier(lambda, s)?;
        exec.map(blocks, |i| self.update_block(i, &g[i], &w))
    }
}

fn commit<T: Scalar>(x: &mut BlockVector<T>, blocks: &[usize], values: Vec<DMatrix<T>>) -> Result<()> {
    for (&i, v) in blocks.iter().zip(values) {
        x.set_block(i, v)?;
    }
    Ok(())
}

/// Dual step, penalty update and bookkeeping shared by every engine.
fn finish<T: Scalar>(
    state: &mut SolverState<T>,
    problem: &ProblemSpec<T>,
    config: &SolverConfig<T>,
    x_new: BlockVector<T>,
    backtracks: usize,
    bt_check: Option<BacktrackCheck<T>>,
) -> Result<StepReport<T>> {
    let delta = x_new.sub(&state.x)?;
    let step_norm = delta.norm();
    let max_block_step = delta.max_block_norm();
    state.x = x_new;
    let beta = state.beta;
    let residual = dual_update(state, problem)?;
    let denom = relative_denominator(problem.rhs_norm());
    state.beta = config.next_beta(beta, max_block_step, denom);
    state.k += 1;
    state.backtrack_count += backtracks;
    Ok(StepReport { residual, step_norm, max_block_step, beta, backtracks, bt_check })
}

/// Sequential sweep over all blocks, each anchored at the latest iterate.
pub fn gs_admm_step<T: Scalar>(
    state: &mut SolverState<T>,
    problem: &ProblemSpec<T>,
    surrogate: &SurrogateSpec<T>,
    config: &SolverConfig<T>,
) -> Result<StepReport<T>> {
    let x_new = {
        let it = Iteration::new(problem, surrogate, state, config.check_invariants)?;
        let exec = Executor::sequential();
        let mut x = state.x.clone();
        for i in 0..problem.n_blocks() {
            let s = problem.residual(&x)?;
            let v = it.phase(&exec, &[i], &state.g, &state.lambda, &s)?;
            commit(&mut x, &[i], v)?;
        }
        x
    };
    finish(state, problem, config, x_new, 0, None)
}

/// All blocks in parallel, anchored at `xᵏ`.
pub fn jacobi_admm_step<T: Scalar>(
    state: &mut SolverState<T>,
    problem: &ProblemSpec<T>,
    surrogate: &SurrogateSpec<T>,
    config: &SolverConfig<T>,
    exec: &Executor,
) -> Result<StepReport<T>> {
    let x_new = {
        let it = Iteration::new(problem, surrogate, state, config.check_invariants)?;
        let all: Vec<usize> = (0..problem.n_blocks()).collect();
        let s = problem.residual(&state.x)?;
        let v = it.phase(exec, &all, &state.g, &state.lambda, &s)?;
        let mut x = state.x.clone();
        commit(&mut x, &all, v)?;
        x
    };
    finish(state, problem, config, x_new, 0, None)
}

fn check_partition<T: Scalar>(problem: &ProblemSpec<T>, partition: &Partition) -> Result<()> {
    if partition.n_blocks() != problem.n_blocks() {
        return Err(Error::Argument(format!(
            "partition covers {} blocks, problem has {}",
            partition.n_blocks(),
            problem.n_blocks()
        )));
    }
    Ok(())
}

/// `B₁` in parallel anchored at `xᵏ`, then `B₂` in parallel anchored at `(x_{B₁}ᵏ⁺¹, x_{B₂}ᵏ)`.
pub fn madmm_step<T: Scalar>(
    state: &mut SolverState<T>,
    problem: &ProblemSpec<T>,
    surrogate: &SurrogateSpec<T>,
    partition: &Partition,
    config: &SolverConfig<T>,
    exec: &Executor,
) -> Result<StepReport<T>> {
    check_partition(problem, partition)?;
    let x_new = {
        let it = Iteration::new(problem, surrogate, state, config.check_invariants)?;
        let mut x = state.x.clone();
        if !partition.b1.is_empty() {
            let s = problem.residual(&state.x)?;
            let v = it.phase(exec, &partition.b1, &state.g, &state.lambda, &s)?;
            commit(&mut x, &partition.b1, v)?;
        }
        if !partition.b2.is_empty() {
            let s = problem.residual(&x)?;
            let v = it.phase(exec, &partition.b2, &state.g, &state.lambda, &s)?;
            commit(&mut x, &partition.b2, v)?;
        }
        x
    };
    finish(state, problem, config, x_new, 0, None)
}

fn grow<T: Scalar>(g: &mut [WeightMatrix<T>], set: &[usize], mu: T) {
    for &i in set {
        g[i] = g[i].scale(mu);
    }
}

/// Rescales needed to lift every block of `set` from its current `η` to `safe`.
fn rescales_to_safe<T: Scalar>(g: &[WeightMatrix<T>], safe: &[T], set: &[usize], mu: T) -> usize {
    set.iter()
        .map(|&i| match g[i].eta() {
            Some(e) if e > T::zero() && safe[i] > e => {
                ((safe[i] / e).ln() / mu.ln()).ceil().to_usize().unwrap_or(usize::MAX / 4)
            }
            _ => 0,
        })
        .max()
        .unwrap_or(0)
}

/// `‖A_S Δ_S‖²` and `Σ_{i∈S}⟨Δᵢ, (Gᵢ + AᵢᵀAᵢ)Δᵢ⟩` for the step `Δ` restricted to `S`.
fn step_quantities<T: Scalar>(
    problem: &ProblemSpec<T>,
    g: &[WeightMatrix<T>],
    delta: &BlockVector<T>,
    set: &[usize],
) -> Result<(T, T)> {
    let a = &problem.constraints;
    let lhs = a.apply_subset(delta, set)?.norm_sq();
    let mut rhs = T::zero();
    for &i in set {
        rhs += k_quad(&g[i], a.operator(i), delta.block(i))?;
    }
    Ok((lhs, rhs))
}

/// M-ADMM step whose weights grow by `μ` until both acceptance tests hold; condition on
/// `B₁` failing recomputes the whole step, condition on `B₂` failing recomputes `B₂` only.
/// `safe` holds the per-block `η` at which both tests provably pass.
pub fn madmm_bt_step<T: Scalar>(
    state: &mut SolverState<T>,
    problem: &ProblemSpec<T>,
    surrogate: &SurrogateSpec<T>,
    partition: &Partition,
    safe: &[T],
    config: &SolverConfig<T>,
    exec: &Executor,
) -> Result<StepReport<T>> {
    check_partition(problem, partition)?;
    let (b1, b2) = (&partition.b1, &partition.b2);
    let mu = config.mu;
    let limit = rescales_to_safe(&state.g, safe, b1, mu) + rescales_to_safe(&state.g, safe, b2, mu) + 2;
    let mut g = state.g.clone();
    let mut rescales = 0;
    let bump = |g: &mut Vec<WeightMatrix<T>>, set: &[usize], rescales: &mut usize| -> Result<()> {
        grow(g, set, mu);
        *rescales += 1;
        if *rescales > limit {
            return Err(Error::InternalConsistency(format!(
                "backtracking exceeded {limit} rescales in iteration {}",
                state.k + 1
            )));
        }
        Ok(())
    };
    let (x_new, check) = {
        let it = Iteration::new(problem, surrogate, state, config.check_invariants)?;
        let s1 = problem.residual(&state.x)?;
        'outer: loop {
            let mut x = state.x.clone();
            let mut delta = BlockVector::zeros(&problem.block_shapes());
            let (lhs2, rhs2) = if b1.is_empty() {
                (T::zero(), T::zero())
            } else {
                let v = it.phase(exec, b1, &g, &state.lambda, &s1)?;
                commit(&mut x, b1, v)?;
                for &i in b1.iter() {
                    delta.set_block(i, x.block(i) - state.x.block(i))?;
                }
                step_quantities(problem, &g, &delta, b1)?
            };
            if lhs2 > rhs2 {
                bump(&mut g, b1, &mut rescales)?;
                continue 'outer;
            }
            if b2.is_empty() {
                break 'outer (x, BacktrackCheck { lhs2, rhs2, lhs3: T::zero(), rhs3: T::zero() });
            }
            let s2 = problem.residual(&x)?;
            loop {
                let v = it.phase(exec, b2, &g, &state.lambda, &s2)?;
                let mut x2 = x.clone();
                commit(&mut x2, b2, v)?;
                let mut d2 = delta.clone();
                let mut step_sq = T::zero();
                for &i in b2.iter() {
                    let d = x2.block(i) - state.x.block(i);
                    step_sq += d.norm_squared();
                    d2.set_block(i, d)?;
                }
                let (a_sq, k_sum) = step_quantities(problem, &g, &d2, b2)?;
                let lhs3 = config.tau * step_sq;
                let rhs3 = k_sum - a_sq;
                if lhs3 > rhs3 {
                    bump(&mut g, b2, &mut rescales)?;
                    continue;
                }
                break 'outer (x2, BacktrackCheck { lhs2, rhs2, lhs3, rhs3 });
            }
        }
    };
    state.g = g;
    finish(state, problem, config, x_new, rescales, Some(check))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    Budget,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::Budget => "budget",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverResult<T: Scalar> {
    pub state: SolverState<T>,
    pub stop_reason: StopReason,
    pub kind: SolverKind,
    pub partition: Option<Partition>,
    pub surrogate: SurrogateSpec<T>,
    /// Weights in force at the start of the run.
    pub initial_weights: Vec<WeightMatrix<T>>,
    /// `x¹, x², …` when recording was requested.
    pub iterates: Vec<BlockVector<T>>,
    /// `β⁽⁰⁾, β⁽¹⁾, …`, the penalty each iteration used.
    pub betas: Vec<T>,
}

impl<T: Scalar> SolverResult<T> {
    pub fn trace(&self) -> &[IterationTrace] {
        &self.state.trace
    }

    pub fn iterations(&self) -> usize {
        self.state.k
    }

    pub fn x(&self) -> &BlockVector<T> {
        &self.state.x
    }
}

/// Solves from zero primal and dual variables.
pub fn run<T: Scalar>(problem: &ProblemSpec<T>, kind: SolverKind, config: &SolverConfig<T>) -> Result<SolverResult<T>> {
    run_from(problem, kind, config, None)
}

/// Solves from the given state (its `g` is replaced by the configured or default weights
/// unless it already holds one weight per block).
pub fn run_from<T: Scalar>(
    problem: &ProblemSpec<T>,
    kind: SolverKind,
    config: &SolverConfig<T>,
    start: Option<SolverState<T>>,
) -> Result<SolverResult<T>> {
    config.validate()?;
    let n = problem.n_blocks();
    let surrogate = config.surrogate.clone().unwrap_or_else(|| problem.recommended_surrogate.clone());
    let partition = match kind {
        SolverKind::MAdmm | SolverKind::MAdmmBacktracking => Some(resolve_partition(problem, config)?),
        _ => None,
    };
    let safe = match (kind, &partition) {
        (SolverKind::MAdmmBacktracking, Some(p)) => backtracking_weights(problem, p, config)?.1,
        _ => Vec::new(),
    };
    let weights = match &config.weights {
        Some(w) if w.len() == n => w.clone(),
        Some(w) => return Err(Error::Dimension(format!("{} weights for {n} blocks", w.len()))),
        None => default_weights(problem, kind, partition.as_ref(), &surrogate, config)?,
    };
    if kind == SolverKind::GaussSeidel && weights.last() == Some(&WeightMatrix::Zero) {
        log::warn!("last block weight is zero; the O(1/K) guarantee needs it positive definite");
    }
    let mut state = match start {
        Some(mut s) => {
            if s.g.len() != n {
                s.g = weights.clone();
            }
            s
        }
        None => SolverState::new(problem, config.beta0, weights.clone()),
    };
    let exec = Executor::new(config.workers)?;
    let denom = relative_denominator(problem.rhs_norm());
    let mut iterates = Vec::new();
    let mut betas = Vec::new();
    let mut stop_reason = StopReason::Budget;
    let t0 = Instant::now();
    while state.k < config.max_iter {
        let report = match kind {
            SolverKind::GaussSeidel => gs_admm_step(&mut state, problem, &surrogate, config)?,
            SolverKind::Jacobi | SolverKind::LAdmmPs | SolverKind::PlAdmmPs | SolverKind::GlAdmmPs => {
                jacobi_admm_step(&mut state, problem, &surrogate, config, &exec)?
            }
            SolverKind::MAdmm => {
                madmm_step(&mut state, problem, &surrogate, partition.as_ref().expect("resolved"), config, &exec)?
            }
            SolverKind::MAdmmBacktracking => madmm_bt_step(
                &mut state,
                problem,
                &surrogate,
                partition.as_ref().expect("resolved"),
                &safe,
                config,
                &exec,
            )?,
        };
        let rnorm = report.residual.norm();
        if !state.x.is_finite() || !state.lambda.is_finite() || !rnorm.is_finite() {
            let last = state.trace.last();
            return Err(Error::Divergence {
                iteration: state.k,
                last_objective: last.map_or(f64::NAN, |t| t.objective),
                last_residual: last.map_or(f64::NAN, |t| t.residual_norm),
            });
        }
        let objective = problem.objective(&state.x)?;
        state.trace.push(IterationTrace {
            k: state.k,
            objective: objective.as_f64(),
            residual_norm: rnorm.as_f64(),
            rel_residual: (rnorm / denom).as_f64(),
            beta: report.beta.as_f64(),
            step_norm: report.step_norm.as_f64(),
            backtracks: report.backtracks,
            wall_time_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        betas.push(report.beta);
        if config.record_iterates {
            iterates.push(state.x.clone());
        }
        let step = match config.stop_rule {
            StopRule::Aggregate => report.step_norm,
            StopRule::Blockwise => report.max_block_step,
        };
        if rnorm / denom <= config.eps_primal && step / denom <= config.eps_step {
            stop_reason = StopReason::Converged;
            break;
        }
    }
    Ok(SolverResult { state, stop_reason, kind, partition, surrogate, initial_weights: weights, iterates, betas })
}

/// `x̄ᴷ = Σₖ γ⁽ᵏ⁾xᵏ⁺¹` with `γ⁽ᵏ⁾ ∝ 1/β⁽ᵏ⁾`.
pub fn ergodic_average<T: Scalar>(iterates: &[BlockVector<T>], betas: &[T]) -> Result<BlockVector<T>> {
    if iterates.is_empty() || iterates.len() != betas.len() {
        return Err(Error::Argument(format!(
            "{} iterates and {} penalties; need matching non-empty lists",
            iterates.len(),
            betas.len()
        )));
    }
    if betas.iter().any(|b| !(*b > T::zero())) {
        return Err(Error::InvalidParameter("penalties must be positive".into()));
    }
    let total = betas.iter().fold(T::zero(), |acc, b| acc + T::one() / *b);
    let mut avg = BlockVector::zeros(&iterates[0].dims());
    for (x, b) in iterates.iter().zip(betas) {
        avg.axpy(T::one() / *b / total, x)?;
    }
    Ok(avg)
}
