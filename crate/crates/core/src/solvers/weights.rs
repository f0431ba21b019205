use crate::blockspace::WeightMatrix;
use crate::error::{Error, Result};
use crate::partition::{case1_partition, case2_partition, Partition};
use crate::problems::ProblemSpec;
use crate::scalar::Scalar;
use crate::surrogates::{quad_coupling_smoothness, BlockSurrogate, SurrogateSpec};

use super::subproblem::{block_curvature, solve_path};
use super::{SolverConfig, SolverKind};

/// Margin above the majorization threshold for Jacobian-phase weights.
const STRICT: f64 = 1.02;

/// Configured partition, else the problem's hint, else Case II, else Case I.
pub fn resolve_partition<T: Scalar>(problem: &ProblemSpec<T>, config: &SolverConfig<T>) -> Result<Partition> {
    let n = problem.n_blocks();
    if let Some(p) = config.partition.clone().or_else(|| problem.partition_hint.clone()) {
        if p.n_blocks() != n {
            return Err(Error::Argument(format!("partition covers {} blocks, problem has {n}", p.n_blocks())));
        }
        return Ok(p);
    }
    if n < 2 {
        return Partition::user(vec![], n);
    }
    if let Some(p) = case2_partition(&problem.constraints, T::zero())? {
        return Ok(p);
    }
    case1_partition(&problem.constraints.norms_sq(), Some(&problem.constraints))
}

fn exact_closed_form<T: Scalar>(problem: &ProblemSpec<T>, s: &BlockSurrogate<T>, i: usize) -> bool {
    let smooth = problem.smooth.as_ref().is_some_and(|h| h.involves(i));
    if smooth && matches!(s, BlockSurrogate::Exact | BlockSurrogate::Proximal(_)) {
        return false;
    }
    block_curvature(s, &WeightMatrix::Zero, problem.constraints.operator(i), T::one())
        .is_some_and(|q| solve_path(&problem.terms[i], &q).is_ok())
}

/// Per super block: `G = 0` where the block is decoupled inside its super block and has a
/// closed form, otherwise `c·η′ᵢI − AᵢᵀAᵢ` from the super block's own coupling constants.
fn super_block_weights<T: Scalar>(
    problem: &ProblemSpec<T>,
    surrogate: &SurrogateSpec<T>,
    sets: &[(&[usize], T)],
) -> Result<Vec<WeightMatrix<T>>> {
    let mut w = vec![WeightMatrix::Zero; problem.n_blocks()];
    for &(set, c) in sets {
        if set.is_empty() {
            continue;
        }
        let cert = quad_coupling_smoothness(&problem.constraints.subfamily(set)?)?;
        for (k, &i) in set.iter().enumerate() {
            w[i] = if cert.excess[k] == T::zero() && exact_closed_form(problem, &surrogate.blocks[i], i) {
                WeightMatrix::Zero
            } else {
                WeightMatrix::ScaledIdentityMinusGram(c * cert.eta_prime[k])
            };
        }
    }
    Ok(w)
}

/// The proximal weights each solver uses when none are configured.
pub fn default_weights<T: Scalar>(
    problem: &ProblemSpec<T>,
    kind: SolverKind,
    partition: Option<&Partition>,
    surrogate: &SurrogateSpec<T>,
    config: &SolverConfig<T>,
) -> Result<Vec<WeightMatrix<T>>> {
    let n = problem.n_blocks();
    let strict = T::lit(STRICT);
    match kind {
        SolverKind::GaussSeidel => {
            let singles: Vec<[usize; 1]> = (0..n).map(|i| [i]).collect();
            let sets: Vec<(&[usize], T)> =
                singles.iter().enumerate().map(|(i, s)| (&s[..], if i == 0 { T::one() } else { strict })).collect();
            super_block_weights(problem, surrogate, &sets)
        }
        SolverKind::Jacobi | SolverKind::LAdmmPs | SolverKind::PlAdmmPs => {
            let cert = quad_coupling_smoothness(&problem.constraints)?;
            Ok(cert.eta_prime.iter().map(|&e| WeightMatrix::ScaledIdentityMinusGram(strict * e)).collect())
        }
        SolverKind::GlAdmmPs => {
            let cert = quad_coupling_smoothness(&problem.constraints)?;
            Ok(cert.excess.iter().map(|&e| WeightMatrix::ScaledIdentity(strict * e)).collect())
        }
        SolverKind::MAdmm => {
            let p = partition.ok_or_else(|| Error::Argument("M-ADMM needs a partition".into()))?;
            super_block_weights(problem, surrogate, &[(&p.b1, T::one()), (&p.b2, strict)])
        }
        SolverKind::MAdmmBacktracking => {
            let p = partition.ok_or_else(|| Error::Argument("M-ADMM needs a partition".into()))?;
            Ok(backtracking_weights(problem, p, config)?.0)
        }
    }
}

/// Initial backtracking weights `eta_scale·η′ᵢI − AᵢᵀAᵢ` and the safe levels `η_safe`
/// (`η′ᵢ` in `B₁`, `η′ᵢ + τ` in `B₂`) at which both acceptance tests always pass.
pub fn backtracking_weights<T: Scalar>(
    problem: &ProblemSpec<T>,
    partition: &Partition,
    config: &SolverConfig<T>,
) -> Result<(Vec<WeightMatrix<T>>, Vec<T>)> {
    let n = problem.n_blocks();
    let mut w = vec![WeightMatrix::Zero; n];
    let mut safe = vec![T::zero(); n];
    for (set, extra) in [(&partition.b1, T::zero()), (&partition.b2, config.tau)] {
        if set.is_empty() {
            continue;
        }
        let cert = quad_coupling_smoothness(&problem.constraints.subfamily(set)?)?;
        for (k, &i) in set.iter().enumerate() {
            let e = cert.eta_prime[k];
            safe[i] = e + extra;
            let start = if e > T::zero() { e } else { safe[i] };
            w[i] = WeightMatrix::ScaledIdentityMinusGram(config.eta_scale * start);
        }
    }
    Ok((w, safe))
}
