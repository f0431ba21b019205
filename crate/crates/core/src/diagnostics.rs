//! KKT gaps, the right-hand sides of the ergodic convergence bounds, the auxiliary
//! multiplier `λ̂` and an oracle that certifies a high-accuracy KKT point.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::blockspace::{BlockVector, WeightMatrix};
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::problems::ProblemSpec;
use crate::scalar::Scalar;
use crate::solvers::{relative_denominator, run, SolverConfig, SolverKind, SolverResult};

/// A verified primal-dual pair with `Ax★ = b` and `−Aᵀλ★ ∈ ∂f(x★)`.
#[derive(Clone, Debug)]
pub struct KKTCertificate<T: Scalar> {
    pub x_star: BlockVector<T>,
    pub lambda_star: BlockVector<T>,
    pub f_star: T,
    /// `‖Ax★ − b‖`
    pub primal_residual: T,
    /// Largest per-block distance from `−Aᵢᵀλ★ − ∇ᵢh(x★)` to `∂gᵢ(x★ᵢ)`.
    pub dual_residual: T,
}

impl<T: Scalar> KKTCertificate<T> {
    /// Checks the KKT conditions of `(x, λ)` term by term.
    pub fn verify(problem: &ProblemSpec<T>, x: BlockVector<T>, lambda: BlockVector<T>) -> Result<Self> {
        let denom = relative_denominator(problem.rhs_norm());
        let primal_residual = problem.residual(&x)?.norm();
        if primal_residual > T::lit(1e-8) * denom {
            return Err(Error::Numerical(format!("primal residual {primal_residual} above the certificate floor")));
        }
        let grad = problem.smooth_gradient(&x)?;
        let mut dual_residual = T::zero();
        for i in 0..problem.n_blocks() {
            let mut u = -problem.constraints.operator(i).adjoint(&lambda)?;
            let mut scale = u.norm();
            if let Some(g) = &grad {
                u -= g.block(i);
                scale = scale.max(g.block(i).norm());
            }
            let d = problem.terms[i].subgradient_distance(x.block(i), &u, T::lit(1e-8))?;
            let rel = d / scale.max(T::one());
            if rel > T::lit(1e-6) {
                return Err(Error::Numerical(format!("block {i} violates stationarity by {d}")));
            }
            dual_residual = dual_residual.max(d);
        }
        let f_star = problem.objective(&x)?;
        Ok(KKTCertificate { x_star: x, lambda_star: lambda, f_star, primal_residual, dual_residual })
    }
}

/// `λ̂ᵏ⁺¹ = λᵏ + β⁽ᵏ⁾(A_{B₁}x_{B₁}ᵏ⁺¹ + A_{B₂}x_{B₂}ᵏ − b)`
pub fn hat_lambda<T: Scalar>(
    problem: &ProblemSpec<T>,
    partition: &Partition,
    lambda: &BlockVector<T>,
    beta: T,
    x_next: &BlockVector<T>,
    x_prev: &BlockVector<T>,
) -> Result<BlockVector<T>> {
    let mut mixed = x_prev.clone();
    for &i in &partition.b1 {
        mixed.set_block(i, x_next.block(i).clone())?;
    }
    let mut out = lambda.clone();
    out.axpy(beta, &problem.residual(&mixed)?)?;
    Ok(out)
}

/// `f(x̄) − f(x★) + ⟨Aᵀλ★, x̄ − x★⟩ + (β⁽⁰⁾α/2)‖Ax̄ − b‖²`
pub fn kkt_gap<T: Scalar>(
    problem: &ProblemSpec<T>,
    x_bar: &BlockVector<T>,
    cert: &KKTCertificate<T>,
    alpha: T,
    beta0: T,
) -> Result<T> {
    let r = problem.residual(x_bar)?;
    let r_star = problem.residual(&cert.x_star)?;
    // ⟨Aᵀλ★, x̄ − x★⟩ = ⟨λ★, (Ax̄ − b) − (Ax★ − b)⟩
    let coupling = cert.lambda_star.dot(&r.sub(&r_star)?)?;
    Ok(problem.objective(x_bar)? - cert.f_star + coupling + beta0 * alpha / T::lit(2.0) * r.norm_sq())
}

/// The `H⁰` matrices and `α` of one bound: each entry weights the stacked, column-major
/// flattened blocks of its group; the multiplier term is `lambda_weight·‖λ★ − λ⁰‖²`.
#[derive(Clone, Debug)]
pub struct TheoremMatrices<T: Scalar> {
    pub groups: Vec<(Vec<usize>, DMatrix<T>)>,
    pub lambda_weight: T,
    pub alpha: T,
}

fn dense_weight<T: Scalar>(w: &WeightMatrix<T>, a: &DMatrix<T>) -> DMatrix<T> {
    let p = a.ncols();
    match w {
        WeightMatrix::Zero => DMatrix::zeros(p, p),
        WeightMatrix::ScaledIdentity(e) => DMatrix::identity(p, p) * *e,
        WeightMatrix::ScaledIdentityMinusGram(e) => DMatrix::identity(p, p) * *e - a.transpose() * a,
        WeightMatrix::Explicit(m) => m.clone(),
    }
}

fn dense_ops<T: Scalar>(problem: &ProblemSpec<T>) -> Vec<DMatrix<T>> {
    problem.constraints.operators().iter().map(|op| op.to_dense()).collect()
}

fn hstack<T: Scalar>(mats: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows = mats.first().map_or(0, |m| m.nrows());
    let cols = mats.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for m in mats {
        out.columns_mut(c, m.ncols()).copy_from(m);
        c += m.ncols();
    }
    out
}

fn spectral_norm_sq<T: Scalar>(a: &DMatrix<T>) -> T {
    if a.is_empty() {
        return T::zero();
    }
    let eig = SymmetricEigen::new(a.transpose() * a);
    eig.eigenvalues.iter().fold(T::zero(), |acc, &v| acc.max(v))
}

/// Smallest singular value, by dense eigendecomposition.
fn sigma_min<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let eig = SymmetricEigen::new(m.transpose() * m);
    let min = eig.eigenvalues.iter().fold(eig.eigenvalues[0], |acc, &v| acc.min(v));
    min.max(T::zero()).sqrt()
}

fn alpha_from<T: Scalar>(numerator: T, a_norm_sq: T) -> T {
    let half = T::lit(0.5);
    if a_norm_sq == T::zero() {
        return half;
    }
    half.min(numerator / (T::lit(2.0) * a_norm_sq))
}

/// `Diag{Lᵢ/β⁽⁰⁾ + AᵢᵀAᵢ + Gᵢ, i ∈ set}`
fn block_diag<T: Scalar>(set: &[usize], a: &[DMatrix<T>], l: &[T], g: &[WeightMatrix<T>], beta0: T) -> DMatrix<T> {
    let sizes: Vec<usize> = set.iter().map(|&i| a[i].ncols()).collect();
    let total = sizes.iter().sum();
    let mut out = DMatrix::zeros(total, total);
    let mut off = 0;
    for (&i, &p) in set.iter().zip(&sizes) {
        let blk = DMatrix::identity(p, p) * (l[i] / beta0) + a[i].transpose() * &a[i] + dense_weight(&g[i], &a[i]);
        out.view_mut((off, off), (p, p)).copy_from(&blk);
        off += p;
    }
    out
}

fn check_lengths<T: Scalar>(problem: &ProblemSpec<T>, l: &[T], g: &[WeightMatrix<T>]) -> Result<()> {
    let n = problem.n_blocks();
    if l.len() != n || g.len() != n {
        return Err(Error::Dimension(format!("{} curvatures and {} weights for {n} blocks", l.len(), g.len())));
    }
    Ok(())
}

/// Gauss-Seidel bound on two blocks: `H⁰₁ = L₁/β⁽⁰⁾ + G₁`, `H⁰₂ = L₂/β⁽⁰⁾ + A₂ᵀA₂ + G₂`,
/// `α = min{½, σ²_min(G₂)/(2‖A₂‖²)}`; `l` holds `Lᵢ = lᵢI`.
pub fn gauss_seidel_bound_matrices<T: Scalar>(
    problem: &ProblemSpec<T>,
    l: &[T],
    g: &[WeightMatrix<T>],
    beta0: T,
) -> Result<TheoremMatrices<T>> {
    if problem.n_blocks() != 2 {
        return Err(Error::Argument("the two-block bound needs exactly two blocks".into()));
    }
    check_lengths(problem, l, g)?;
    let a = dense_ops(problem);
    let (p1, p2) = (a[0].ncols(), a[1].ncols());
    let h1 = DMatrix::identity(p1, p1) * (l[0] / beta0) + dense_weight(&g[0], &a[0]);
    let g2 = dense_weight(&g[1], &a[1]);
    let h2 = DMatrix::identity(p2, p2) * (l[1] / beta0) + a[1].transpose() * &a[1] + &g2;
    let s = sigma_min(&g2);
    Ok(TheoremMatrices {
        groups: vec![(vec![0], h1), (vec![1], h2)],
        lambda_weight: T::one() / (beta0 * beta0),
        alpha: alpha_from(s * s, spectral_norm_sq(&a[1])),
    })
}

/// Jacobian bound: `H⁰ᵢ = Lᵢ/β⁽⁰⁾ + AᵢᵀAᵢ + Gᵢ`,
/// `α = min{½, σ²_min(Diag{AᵢᵀAᵢ + Gᵢ} − AᵀA)/(2‖A‖²)}`.
pub fn jacobi_bound_matrices<T: Scalar>(
    problem: &ProblemSpec<T>,
    l: &[T],
    g: &[WeightMatrix<T>],
    beta0: T,
) -> Result<TheoremMatrices<T>> {
    check_lengths(problem, l, g)?;
    let a = dense_ops(problem);
    let all: Vec<usize> = (0..problem.n_blocks()).collect();
    let groups = all.iter().map(|&i| (vec![i], block_diag(&[i], &a, l, g, beta0))).collect();
    let full = hstack(&a.iter().collect::<Vec<_>>());
    let zero_l = vec![T::zero(); l.len()];
    let m = block_diag(&all, &a, &zero_l, g, T::one()) - full.transpose() * &full;
    let s = sigma_min(&m);
    Ok(TheoremMatrices {
        groups,
        lambda_weight: T::one() / (beta0 * beta0),
        alpha: alpha_from(s * s, spectral_norm_sq(&full)),
    })
}

fn madmm_groups<T: Scalar>(
    problem: &ProblemSpec<T>,
    partition: &Partition,
    a: &[DMatrix<T>],
    l: &[T],
    g: &[WeightMatrix<T>],
    beta0: T,
) -> Vec<(Vec<usize>, DMatrix<T>)> {
    let mut groups = Vec::new();
    if !partition.b1.is_empty() {
        let ab1 = hstack(&partition.b1.iter().map(|&i| &a[i]).collect::<Vec<_>>());
        let h1 = block_diag(&partition.b1, a, l, g, beta0) - ab1.transpose() * &ab1;
        groups.push((partition.b1.clone(), h1));
    }
    if !partition.b2.is_empty() {
        groups.push((partition.b2.clone(), block_diag(&partition.b2, a, l, g, beta0)));
    }
    debug_assert_eq!(partition.n_blocks(), problem.n_blocks());
    groups
}

/// Mixed bound: `H⁰₁ = Diag{Lᵢ/β⁽⁰⁾ + AᵢᵀAᵢ + Gᵢ, i ∈ B₁} − A_{B₁}ᵀA_{B₁}`,
/// `H⁰₂ = Diag{Lᵢ/β⁽⁰⁾ + AᵢᵀAᵢ + Gᵢ, i ∈ B₂}`,
/// `α = min{½, σ²_min(Diag{AᵢᵀAᵢ + Gᵢ, i ∈ B₂} − A_{B₂}ᵀA_{B₂})/(2‖A_{B₂}‖²)}`.
pub fn mixed_bound_matrices<T: Scalar>(
    problem: &ProblemSpec<T>,
    partition: &Partition,
    l: &[T],
    g: &[WeightMatrix<T>],
    beta0: T,
) -> Result<TheoremMatrices<T>> {
    check_lengths(problem, l, g)?;
    if partition.n_blocks() != problem.n_blocks() {
        return Err(Error::Argument("partition does not match the problem".into()));
    }
    let a = dense_ops(problem);
    let groups = madmm_groups(problem, partition, &a, l, g, beta0);
    let ab2 = hstack(&partition.b2.iter().map(|&i| &a[i]).collect::<Vec<_>>());
    let zero_l = vec![T::zero(); l.len()];
    let k2 = block_diag(&partition.b2, &a, &zero_l, g, T::one());
    let s = if partition.b2.is_empty() { T::zero() } else { sigma_min(&(k2 - ab2.transpose() * &ab2)) };
    Ok(TheoremMatrices {
        groups,
        lambda_weight: T::one() / (beta0 * beta0),
        alpha: alpha_from(s * s, spectral_norm_sq(&ab2)),
    })
}

/// Backtracking bound: the mixed `H⁰` with the initial weights `G⁰` and
/// `α = min{½, τ/(2‖A_{B₂}‖²)}`.
pub fn backtracking_bound_matrices<T: Scalar>(
    problem: &ProblemSpec<T>,
    partition: &Partition,
    l: &[T],
    g0: &[WeightMatrix<T>],
    beta0: T,
    tau: T,
) -> Result<TheoremMatrices<T>> {
    check_lengths(problem, l, g0)?;
    if partition.n_blocks() != problem.n_blocks() {
        return Err(Error::Argument("partition does not match the problem".into()));
    }
    let a = dense_ops(problem);
    let groups = madmm_groups(problem, partition, &a, l, g0, beta0);
    let ab2 = hstack(&partition.b2.iter().map(|&i| &a[i]).collect::<Vec<_>>());
    Ok(TheoremMatrices {
        groups,
        lambda_weight: T::one() / (beta0 * beta0),
        alpha: alpha_from(tau, spectral_norm_sq(&ab2)),
    })
}

fn stacked_diff<T: Scalar>(set: &[usize], x: &BlockVector<T>, y: &BlockVector<T>) -> Vec<T> {
    let mut out = Vec::new();
    for &i in set {
        out.extend((x.block(i) - y.block(i)).iter().copied());
    }
    out
}

/// `(Σⱼ‖x★_{Bⱼ} − x⁰_{Bⱼ}‖²_{H⁰ⱼ} + ‖λ★ − λ⁰‖²_{H⁰₃}) / (2 Σ_{k≤K} 1/β⁽ᵏ⁾)`
pub fn theorem_bound_rhs<T: Scalar>(
    x0: &BlockVector<T>,
    lambda0: &BlockVector<T>,
    cert: &KKTCertificate<T>,
    matrices: &TheoremMatrices<T>,
    betas: &[T],
    k: usize,
) -> Result<T> {
    if k >= betas.len() {
        return Err(Error::Argument(format!("K = {k} needs {} penalties, have {}", k + 1, betas.len())));
    }
    let numerator = bound_numerator(x0, lambda0, cert, matrices)?;
    let inv = betas[..=k].iter().fold(T::zero(), |acc, &b| acc + T::one() / b);
    Ok(numerator / (T::lit(2.0) * inv))
}

fn bound_numerator<T: Scalar>(
    x0: &BlockVector<T>,
    lambda0: &BlockVector<T>,
    cert: &KKTCertificate<T>,
    matrices: &TheoremMatrices<T>,
) -> Result<T> {
    let mut total = T::zero();
    for (set, h) in &matrices.groups {
        let scale = h.amax().max(T::one());
        let eig = SymmetricEigen::new(h.clone());
        let min = eig.eigenvalues.iter().fold(T::zero(), |acc, &v| acc.min(v));
        if min < -T::lit(1e-9) * scale {
            return Err(Error::AssumptionViolation(format!("H⁰ for blocks {set:?} has eigenvalue {min}")));
        }
        let d = DMatrix::from_vec(h.nrows(), 1, stacked_diff(set, &cert.x_star, x0));
        if d.nrows() != h.nrows() {
            return Err(Error::Dimension("H⁰ does not match the block sizes".into()));
        }
        total += (d.transpose() * h * &d)[0];
    }
    let dl = cert.lambda_star.sub(lambda0)?;
    Ok(total + matrices.lambda_weight * dl.norm_sq())
}

/// One row of a bound check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundPoint {
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
}

/// Left and right sides of an ergodic bound for `K = 0, 1, …`.
#[derive(Clone, Debug)]
pub struct BoundReport {
    pub alpha: f64,
    pub per_k: Vec<BoundPoint>,
}

impl BoundReport {
    /// Evaluates the bound along a recorded run started from `(x⁰, λ⁰)`.
    pub fn from_run<T: Scalar>(
        problem: &ProblemSpec<T>,
        result: &SolverResult<T>,
        cert: &KKTCertificate<T>,
        matrices: &TheoremMatrices<T>,
        x0: &BlockVector<T>,
        lambda0: &BlockVector<T>,
    ) -> Result<Self> {
        if result.iterates.len() != result.betas.len() || result.iterates.is_empty() {
            return Err(Error::Argument("run must record its iterates".into()));
        }
        let beta0 = result.betas[0];
        let numerator = bound_numerator(x0, lambda0, cert, matrices)?;
        let mut weighted = BlockVector::zeros(&x0.dims());
        let mut inv = T::zero();
        let mut per_k = Vec::with_capacity(result.iterates.len());
        for (k, (x, &b)) in result.iterates.iter().zip(&result.betas).enumerate() {
            weighted.axpy(T::one() / b, x)?;
            inv += T::one() / b;
            let x_bar = weighted.scale(T::one() / inv);
            let lhs = kkt_gap(problem, &x_bar, cert, matrices.alpha, beta0)?;
            let rhs = numerator / (T::lit(2.0) * inv);
            per_k.push(BoundPoint { k, lhs: lhs.as_f64(), rhs: rhs.as_f64() });
        }
        Ok(BoundReport { alpha: matrices.alpha.as_f64(), per_k })
    }

    /// Whether `lhs ≤ rhs + slack` at every `K`.
    pub fn holds(&self, slack: f64) -> bool {
        self.per_k.iter().all(|p| p.lhs <= p.rhs + slack)
    }

    /// `maxₖ (lhs − rhs)`
    pub fn worst_excess(&self) -> f64 {
        self.per_k.iter().map(|p| p.lhs - p.rhs).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["K", "lhs", "rhs"])?;
        for p in &self.per_k {
            w.write_record(&[p.k.to_string(), format!("{:e}", p.lhs), format!("{:e}", p.rhs)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Runs M-ADMM with its default weights to `ε = 10⁻⁹` (at most `10⁵` iterations) and
/// certifies the result. `target_tol` tightens or loosens both tolerances.
pub fn oracle_solve<T: Scalar>(problem: &ProblemSpec<T>, target_tol: T) -> Result<KKTCertificate<T>> {
    let tol = if target_tol > T::zero() { target_tol } else { T::lit(1e-9) };
    let config = SolverConfig {
        beta0: T::lit(1e-2),
        rho: T::lit(1.05),
        beta_max: T::lit(10.0),
        max_iter: 100_000,
        eps_primal: tol,
        eps_step: tol,
        ..SolverConfig::default()
    };
    let kind = if problem.n_blocks() < 2 { SolverKind::GaussSeidel } else { SolverKind::MAdmm };
    let result = run(problem, kind, &config)?;
    KKTCertificate::verify(problem, result.state.x, result.state.lambda).map_err(|e| match e {
        Error::Numerical(m) => Error::Numerical(format!("no certificate: {m}")),
        other => other,
    })
}
