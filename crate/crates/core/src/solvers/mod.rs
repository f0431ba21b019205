//! Gauss-Seidel, Jacobian and mixed ADMM engines with penalty schedules, stopping rules
//! and ergodic averaging.

mod engine;
mod subproblem;
mod weights;

pub use engine::{
    dual_update, ergodic_average, gs_admm_step, jacobi_admm_step, madmm_bt_step, madmm_step, run, run_from,
    BacktrackCheck, Executor, IterationTrace, SolverResult, SolverState, StepReport, StopReason,
};
pub use subproblem::{block_curvature, solve_path, BlockSubproblem, SolvePath};
pub use weights::{backtracking_weights, default_weights, resolve_partition};

use std::fmt;
use std::str::FromStr;

use crate::blockspace::WeightMatrix;
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::scalar::Scalar;
use crate::surrogates::SurrogateSpec;

/// Engine plus weight preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolverKind {
    GaussSeidel,
    Jacobi,
    MAdmm,
    MAdmmBacktracking,
    /// Jacobian engine with `Gᵢ = ηᵢI − AᵢᵀAᵢ`.
    LAdmmPs,
    /// Jacobian engine with proximal-gradient surrogates and linearized weights.
    PlAdmmPs,
    /// Jacobian engine with exact surrogates and `Gᵢ = ηᵢI`.
    GlAdmmPs,
}

impl SolverKind {
    pub const ALL: [SolverKind; 7] = [
        SolverKind::GaussSeidel,
        SolverKind::Jacobi,
        SolverKind::MAdmm,
        SolverKind::MAdmmBacktracking,
        SolverKind::LAdmmPs,
        SolverKind::PlAdmmPs,
        SolverKind::GlAdmmPs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::GaussSeidel => "gs",
            SolverKind::Jacobi => "jacobi",
            SolverKind::MAdmm => "madmm",
            SolverKind::MAdmmBacktracking => "madmm-bt",
            SolverKind::LAdmmPs => "l-admm-ps",
            SolverKind::PlAdmmPs => "pl-admm-ps",
            SolverKind::GlAdmmPs => "gl-admm-ps",
        }
    }

    pub fn is_jacobian(self) -> bool {
        matches!(self, SolverKind::Jacobi | SolverKind::LAdmmPs | SolverKind::PlAdmmPs | SolverKind::GlAdmmPs)
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown solver '{s}'")))
    }
}

/// Penalty update applied after every dual step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule<T: Scalar> {
    /// `β ← min(ρβ, β_max)`
    Geometric,
    /// `β ← min(factor·β, β_max)` when `β·maxᵢ‖Δxᵢ‖/‖b‖ ≤ threshold`, else unchanged.
    Adaptive { factor: T, threshold: T },
}

/// When to stop before the iteration budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRule {
    /// `‖Ax − b‖/‖b‖ ≤ ε_primal` and `‖Δx‖/‖b‖ ≤ ε_step`.
    Aggregate,
    /// `‖Ax − b‖/‖b‖ ≤ ε_primal` and `maxᵢ‖Δxᵢ‖/‖b‖ ≤ ε_step`.
    Blockwise,
}

#[derive(Clone, Debug)]
pub struct SolverConfig<T: Scalar> {
    pub beta0: T,
    pub rho: T,
    pub beta_max: T,
    pub max_iter: usize,
    pub eps_primal: T,
    pub eps_step: T,
    pub tau: T,
    pub mu: T,
    pub eta_scale: T,
    /// `None` picks the problem's hint, then Case II, then Case I.
    pub partition: Option<Partition>,
    pub schedule: Schedule<T>,
    pub stop_rule: StopRule,
    /// Overrides the surrogate template of the problem.
    pub surrogate: Option<SurrogateSpec<T>>,
    /// Overrides the default proximal weights.
    pub weights: Option<Vec<WeightMatrix<T>>>,
    /// Threads for the parallel phases; 0 or 1 runs them on the calling thread.
    pub workers: usize,
    /// Keep every iterate `x¹, x², …` for ergodic averaging.
    pub record_iterates: bool,
    /// Check surrogate descent and subproblem optimality of every block update.
    pub check_invariants: bool,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            beta0: T::lit(1e-4),
            rho: T::lit(1.1),
            beta_max: T::lit(1e6),
            max_iter: 10_000,
            eps_primal: T::lit(1e-4),
            eps_step: T::lit(1e-4),
            tau: T::lit(1.3),
            mu: T::lit(2.0),
            eta_scale: T::lit(0.01),
            partition: None,
            schedule: Schedule::Geometric,
            stop_rule: StopRule::Aggregate,
            surrogate: None,
            weights: None,
            workers: 1,
            record_iterates: false,
            check_invariants: false,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.beta0 > T::zero()) {
            return bad("beta0 must be > 0");
        }
        if self.beta0 > self.beta_max {
            return bad("beta0 must not exceed beta_max");
        }
        if !(self.rho >= T::one()) {
            return bad("rho must be ≥ 1");
        }
        if !(self.tau > T::zero()) {
            return bad("tau must be > 0");
        }
        if !(self.mu > T::one()) {
            return bad("mu must be > 1");
        }
        if !(self.eta_scale > T::zero()) {
            return bad("eta_scale must be > 0");
        }
        if self.eps_primal < T::zero() || self.eps_step < T::zero() {
            return bad("tolerances must be ≥ 0");
        }
        if let Schedule::Adaptive { factor, threshold } = self.schedule {
            if factor < T::one() || threshold < T::zero() {
                return bad("adaptive schedule needs factor ≥ 1 and threshold ≥ 0");
            }
        }
        Ok(())
    }

    /// Next penalty given the largest block step of the iteration.
    pub fn next_beta(&self, beta: T, max_block_step: T, denom: T) -> T {
        match self.schedule {
            Schedule::Geometric => (self.rho * beta).min(self.beta_max),
            Schedule::Adaptive { factor, threshold } => {
                if beta * max_block_step / denom <= threshold {
                    (factor * beta).min(self.beta_max)
                } else {
                    beta
                }
            }
        }
    }
}

/// `max(‖b‖, 1)`, the denominator of every relative criterion.
pub fn relative_denominator<T: Scalar>(b_norm: T) -> T {
    b_norm.max(T::one())
}
