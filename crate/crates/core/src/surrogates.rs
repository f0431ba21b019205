//! Majorant first-order surrogates, their certificates and combination rules, and the
//! smoothness constants of the quadratic coupling `½‖Ax − b‖²`.

use std::sync::Arc;

use crate::blockspace::{
    min_eigenvalue, residual, weighted_inner, weighted_norm_sq, BlockOperatorFamily, BlockVector, WeightMatrix,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A scalar function of the full block variable.
pub type ObjectiveFn<T> = Arc<dyn Fn(&BlockVector<T>) -> T + Send + Sync>;

/// Differentiable objective part `h` with a per-block smoothness certificate.
pub trait SmoothTerm<T: Scalar>: Send + Sync {
    fn value(&self, x: &BlockVector<T>) -> Result<T>;
    fn gradient(&self, x: &BlockVector<T>) -> Result<BlockVector<T>>;
    /// `Lᵢ` scalars such that `h` is `{LᵢI}`-smooth.
    fn smoothness(&self) -> Vec<T>;
}

/// `(w/2)‖Σᵢ Fᵢxᵢ − c‖²`
#[derive(Clone, Debug)]
pub struct QuadraticCoupling<T: Scalar> {
    weight: T,
    family: BlockOperatorFamily<T>,
    target: BlockVector<T>,
    lipschitz: Vec<T>,
}

impl<T: Scalar> QuadraticCoupling<T> {
    /// The certificate defaults to `w·η′ᵢ` from [`quad_coupling_smoothness`].
    pub fn new(weight: T, family: BlockOperatorFamily<T>, target: BlockVector<T>) -> Result<Self> {
        if weight < T::zero() {
            return Err(Error::InvalidParameter("coupling weight must be ≥ 0".into()));
        }
        if target.dims() != family.segments() {
            return Err(Error::Dimension("coupling target does not match the operator range".into()));
        }
        let cert = quad_coupling_smoothness(&family)?;
        let lipschitz = cert.eta_prime.iter().map(|&e| e * weight).collect();
        Ok(QuadraticCoupling { weight, family, target, lipschitz })
    }

    pub fn weight(&self) -> T {
        self.weight
    }

    pub fn family(&self) -> &BlockOperatorFamily<T> {
        &self.family
    }

    pub fn target(&self) -> &BlockVector<T> {
        &self.target
    }

    /// Whether block `i` enters the coupling at all.
    pub fn involves(&self, i: usize) -> bool {
        self.weight != T::zero() && !self.family.operator(i).is_zero()
    }
}

impl<T: Scalar> SmoothTerm<T> for QuadraticCoupling<T> {
    fn value(&self, x: &BlockVector<T>) -> Result<T> {
        let r = residual(&self.family, x, &self.target)?;
        Ok(self.weight * r.norm_sq() / T::lit(2.0))
    }

    fn gradient(&self, x: &BlockVector<T>) -> Result<BlockVector<T>> {
        let r = residual(&self.family, x, &self.target)?;
        Ok(self.family.adjoint(&r)?.scale(self.weight))
    }

    fn smoothness(&self) -> Vec<T> {
        self.lipschitz.clone()
    }
}

/// Per-block `Lᵢ` and strong-convexity `Pᵢ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessCert<T: Scalar> {
    pub per_block_l: Vec<WeightMatrix<T>>,
    pub per_block_p: Vec<WeightMatrix<T>>,
}

impl<T: Scalar> SmoothnessCert<T> {
    /// `Pᵢ = Lᵢ`, the membership every catalog surrogate has.
    pub fn tight(l: Vec<WeightMatrix<T>>) -> Self {
        SmoothnessCert { per_block_p: l.clone(), per_block_l: l }
    }

    pub fn zero(n: usize) -> Self {
        Self::tight(vec![WeightMatrix::Zero; n])
    }

    fn combine(&self, other: &Self, a1: T, a2: T) -> Result<Self> {
        let add = |x: &[WeightMatrix<T>], y: &[WeightMatrix<T>]| -> Result<Vec<WeightMatrix<T>>> {
            x.iter()
                .zip(y)
                .map(|(p, q)| {
                    p.scale(a1).add(&q.scale(a2)).ok_or_else(|| {
                        Error::Argument("certificate forms cannot be added without their operators".into())
                    })
                })
                .collect()
        };
        Ok(SmoothnessCert {
            per_block_l: add(&self.per_block_l, &other.per_block_l)?,
            per_block_p: add(&self.per_block_p, &other.per_block_p)?,
        })
    }
}

/// Per-block surrogate choice used by the solvers; `Lᵢ = ℓᵢ·I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlockSurrogate<T: Scalar> {
    /// `f̂ᵢ = fᵢ`
    Exact,
    /// `fᵢ + (ℓ/2)‖xᵢ − κᵢ‖²`
    Proximal(T),
    /// Linearizes the smooth part; the block's prox term must be zero.
    LipschitzGradient(T),
    /// Linearizes the smooth part and keeps the prox term.
    ProximalGradient(T),
}

impl<T: Scalar> BlockSurrogate<T> {
    pub fn curvature(&self) -> T {
        match *self {
            BlockSurrogate::Exact => T::zero(),
            BlockSurrogate::Proximal(l)
            | BlockSurrogate::LipschitzGradient(l)
            | BlockSurrogate::ProximalGradient(l) => l,
        }
    }

    pub fn uses_gradient(&self) -> bool {
        matches!(self, BlockSurrogate::LipschitzGradient(_) | BlockSurrogate::ProximalGradient(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            BlockSurrogate::Exact => "exact",
            BlockSurrogate::Proximal(_) => "proximal",
            BlockSurrogate::LipschitzGradient(_) => "lipschitz-gradient",
            BlockSurrogate::ProximalGradient(_) => "proximal-gradient",
        }
    }
}

/// Solver-side template: one surrogate choice per block, re-anchored at `xᵏ` every iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSpec<T: Scalar> {
    pub blocks: Vec<BlockSurrogate<T>>,
}

impl<T: Scalar> SurrogateSpec<T> {
    pub fn exact(n: usize) -> Self {
        SurrogateSpec { blocks: vec![BlockSurrogate::Exact; n] }
    }

    pub fn cert(&self) -> SmoothnessCert<T> {
        SmoothnessCert::tight(self.blocks.iter().map(|b| WeightMatrix::ScaledIdentity(b.curvature())).collect())
    }
}

/// An evaluable surrogate `f̂` of a target `f`, anchored at `κ`.
#[derive(Clone)]
pub struct Surrogate<T: Scalar> {
    anchor: BlockVector<T>,
    cert: SmoothnessCert<T>,
    value: ObjectiveFn<T>,
    target: ObjectiveFn<T>,
}

impl<T: Scalar> std::fmt::Debug for Surrogate<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Surrogate").field("anchor", &self.anchor).field("cert", &self.cert).finish()
    }
}

impl<T: Scalar> Surrogate<T> {
    pub fn new(anchor: BlockVector<T>, cert: SmoothnessCert<T>, value: ObjectiveFn<T>, target: ObjectiveFn<T>) -> Self {
        Surrogate { anchor, cert, value, target }
    }

    pub fn value(&self, x: &BlockVector<T>) -> T {
        (self.value)(x)
    }

    pub fn target_value(&self, x: &BlockVector<T>) -> T {
        (self.target)(x)
    }

    pub fn anchor(&self) -> &BlockVector<T> {
        &self.anchor
    }

    pub fn cert(&self) -> &SmoothnessCert<T> {
        &self.cert
    }

    /// The surrogate as a plain function, for wrapping in further surrogates.
    pub fn as_fn(&self) -> ObjectiveFn<T> {
        self.value.clone()
    }

    /// `½Σᵢ‖xᵢ − κᵢ‖²_{Lᵢ}`
    pub fn proximity_bound(&self, x: &BlockVector<T>) -> Result<T> {
        let d = x.sub(&self.anchor)?;
        let mut acc = T::zero();
        for (di, l) in d.blocks().iter().zip(&self.cert.per_block_l) {
            acc += weighted_norm_sq(di, l, None)?;
        }
        Ok(acc / T::lit(2.0))
    }
}

fn half_weighted_dist<T: Scalar>(x: &BlockVector<T>, kappa: &BlockVector<T>, l: &[WeightMatrix<T>]) -> T {
    let mut acc = T::zero();
    for ((xi, ki), li) in x.blocks().iter().zip(kappa.blocks()).zip(l) {
        let d = xi - ki;
        acc += weighted_norm_sq(&d, li, None).unwrap_or_else(|_| T::lit(f64::NAN));
    }
    acc / T::lit(2.0)
}

fn check_cert_len<T: Scalar>(kappa: &BlockVector<T>, l: &[WeightMatrix<T>]) -> Result<()> {
    if l.len() != kappa.n_blocks() {
        return Err(Error::Dimension(format!("{} weights for {} blocks", l.len(), kappa.n_blocks())));
    }
    if l.iter().any(|w| matches!(w, WeightMatrix::ScaledIdentityMinusGram(_))) {
        return Err(Error::Argument("surrogate weights must not depend on an operator".into()));
    }
    Ok(())
}

/// `f̂(x) = f(x) + ½‖x − κ‖²_L`
pub fn proximal_surrogate<T: Scalar>(
    f: ObjectiveFn<T>,
    kappa: BlockVector<T>,
    l: Vec<WeightMatrix<T>>,
) -> Result<Surrogate<T>> {
    check_cert_len(&kappa, &l)?;
    let (k2, l2, f2) = (kappa.clone(), l.clone(), f.clone());
    let value: ObjectiveFn<T> = Arc::new(move |x| f2(x) + half_weighted_dist(x, &k2, &l2));
    Ok(Surrogate::new(kappa, SmoothnessCert::tight(l), value, f))
}

/// `f̂(x) = f(κ) + ⟨∇f(κ), x − κ⟩ + ½Σᵢ‖xᵢ − κᵢ‖²_{Lᵢ}`
pub fn lipschitz_gradient_surrogate<T: Scalar>(
    f: Arc<dyn SmoothTerm<T>>,
    kappa: BlockVector<T>,
    cert: Vec<WeightMatrix<T>>,
) -> Result<Surrogate<T>> {
    proximal_gradient_surrogate(f, Arc::new(|_| T::zero()), kappa, cert)
}

/// `f̂(x) = f₁(κ) + ⟨∇f₁(κ), x − κ⟩ + ½Σᵢ‖xᵢ − κᵢ‖²_{Lᵢ} + f₂(x)`
pub fn proximal_gradient_surrogate<T: Scalar>(
    f1: Arc<dyn SmoothTerm<T>>,
    f2: ObjectiveFn<T>,
    kappa: BlockVector<T>,
    cert: Vec<WeightMatrix<T>>,
) -> Result<Surrogate<T>> {
    check_cert_len(&kappa, &cert)?;
    let f_k = f1.value(&kappa)?;
    let g_k = f1.gradient(&kappa)?;
    let (k2, c2, f2v) = (kappa.clone(), cert.clone(), f2.clone());
    let value: ObjectiveFn<T> = Arc::new(move |x| {
        let lin = x.sub(&k2).and_then(|d| g_k.dot(&d)).unwrap_or_else(|_| T::lit(f64::NAN));
        f_k + lin + half_weighted_dist(x, &k2, &c2) + f2v(x)
    });
    let target: ObjectiveFn<T> = Arc::new(move |x| f1.value(x).unwrap_or_else(|_| T::lit(f64::NAN)) + f2(x));
    Ok(Surrogate::new(kappa, SmoothnessCert::tight(cert), value, target))
}

fn same_anchor<T: Scalar>(a: &BlockVector<T>, b: &BlockVector<T>) -> bool {
    a.dims() == b.dims() && a.sub(b).map(|d| d.norm() == T::zero()).unwrap_or(false)
}

/// `a₁·s₁ + a₂·s₂` with certificate `{a₁Lᵢ + a₂L′ᵢ}`.
pub fn combine_linear<T: Scalar>(s1: &Surrogate<T>, s2: &Surrogate<T>, a1: T, a2: T) -> Result<Surrogate<T>> {
    if a1 <= T::zero() || a2 <= T::zero() {
        return Err(Error::InvalidParameter("combination weights must be positive".into()));
    }
    if !same_anchor(&s1.anchor, &s2.anchor) {
        return Err(Error::AnchorMismatch);
    }
    let cert = s1.cert.combine(&s2.cert, a1, a2)?;
    let (v1, v2, t1, t2) = (s1.value.clone(), s2.value.clone(), s1.target.clone(), s2.target.clone());
    Ok(Surrogate::new(
        s1.anchor.clone(),
        cert,
        Arc::new(move |x| a1 * v1(x) + a2 * v2(x)),
        Arc::new(move |x| a1 * t1(x) + a2 * t2(x)),
    ))
}

/// Surrogate of `f` obtained from a surrogate (`outer`) of a surrogate (`inner`) of `f`.
pub fn combine_transitive<T: Scalar>(outer: &Surrogate<T>, inner: &Surrogate<T>) -> Result<Surrogate<T>> {
    if !same_anchor(&outer.anchor, &inner.anchor) {
        return Err(Error::AnchorMismatch);
    }
    let cert = inner.cert.combine(&outer.cert, T::one(), T::one())?;
    Ok(Surrogate::new(inner.anchor.clone(), cert, outer.value.clone(), inner.target.clone()))
}

/// How the coupling constants were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivation {
    DenseDefault,
    RowGroupAware,
    UserSupplied,
}

/// `L′ᵢ ⪯ η′ᵢI` for `½‖Ax − b‖²`, with `excessᵢ` bounding `L′ᵢ − AᵢᵀAᵢ`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadCouplingCert<T: Scalar> {
    pub eta_prime: Vec<T>,
    /// `η` bound on `L′ᵢ − AᵢᵀAᵢ`; exactly zero when block `i` shares no rows with other blocks.
    pub excess: Vec<T>,
    pub derivation: Derivation,
}

impl<T: Scalar> QuadCouplingCert<T> {
    pub fn user(eta_prime: Vec<T>) -> Self {
        let excess = eta_prime.clone();
        QuadCouplingCert { eta_prime, excess, derivation: Derivation::UserSupplied }
    }

    pub fn per_block_lprime(&self) -> Vec<WeightMatrix<T>> {
        self.eta_prime.iter().map(|&e| WeightMatrix::ScaledIdentity(e)).collect()
    }

    /// Whether `G` satisfies `G ⪰ L′ᵢ − AᵢᵀAᵢ`.
    pub fn admits(&self, i: usize, g: &WeightMatrix<T>) -> bool {
        match g {
            WeightMatrix::ScaledIdentityMinusGram(e) => *e >= self.eta_prime[i],
            WeightMatrix::ScaledIdentity(e) => *e >= self.excess[i],
            WeightMatrix::Zero => self.excess[i] == T::zero(),
            WeightMatrix::Explicit(m) => min_eigenvalue(m) >= self.excess[i],
        }
    }
}

/// Structure-aware smoothness constants of the quadratic coupling.
pub fn quad_coupling_smoothness<T: Scalar>(a: &BlockOperatorFamily<T>) -> Result<QuadCouplingCert<T>> {
    let n = a.n_blocks();
    match a.row_groups() {
        None => {
            let norms = a.norms_sq();
            let nt = T::from_count(n);
            let active = norms.iter().filter(|&&v| v > T::zero()).count();
            let excess_factor = T::from_count(active.saturating_sub(1));
            Ok(QuadCouplingCert {
                eta_prime: norms.iter().map(|&v| nt * v).collect(),
                excess: norms.iter().map(|&v| excess_factor * v).collect(),
                derivation: Derivation::DenseDefault,
            })
        }
        Some(groups) => {
            let gn = a.group_norms_sq(groups);
            let ng = groups.groups().len();
            let k: Vec<usize> = (0..ng).map(|g| (0..n).filter(|&i| gn[i][g] > T::zero()).count()).collect();
            let mut eta_prime = vec![T::zero(); n];
            let mut excess = vec![T::zero(); n];
            for i in 0..n {
                for g in 0..ng {
                    if gn[i][g] > T::zero() {
                        eta_prime[i] += T::from_count(k[g]) * gn[i][g];
                        excess[i] += T::from_count(k[g] - 1) * gn[i][g];
                    }
                }
            }
            Ok(QuadCouplingCert { eta_prime, excess, derivation: Derivation::RowGroupAware })
        }
    }
}

/// The parallel surrogate `r̂` of `r(x) = ½‖Ax − b‖²` anchored at `y`, together with the
/// blocks whose `Gᵢ` is below the majorization threshold.
#[derive(Clone, Debug)]
pub struct QuadSurrogate<T: Scalar> {
    pub surrogate: Surrogate<T>,
    pub violations: Vec<usize>,
}

/// `r̂(x) = Σᵢ ½‖Aᵢxᵢ + Σ_{j≠i}Aⱼyⱼ − b‖² + ½Σᵢ‖xᵢ − yᵢ‖²_{Gᵢ} + (1−n)/2‖Ay − b‖²`
pub fn quad_surrogate_parallel<T: Scalar>(
    a: &BlockOperatorFamily<T>,
    b: &BlockVector<T>,
    y: &BlockVector<T>,
    g: &[WeightMatrix<T>],
) -> Result<QuadSurrogate<T>> {
    let n = a.n_blocks();
    if g.len() != n {
        return Err(Error::Dimension(format!("{} weights for {n} blocks", g.len())));
    }
    let s = residual(a, y, b)?;
    let cert = quad_coupling_smoothness(a)?;
    let violations = (0..n).filter(|&i| !cert.admits(i, &g[i])).collect();
    let l: Vec<WeightMatrix<T>> = (0..n)
        .map(|i| match &g[i] {
            WeightMatrix::ScaledIdentityMinusGram(e) => WeightMatrix::ScaledIdentity(*e),
            other => other
                .add(&WeightMatrix::ScaledIdentity(a.operator(i).op_norm_sq()))
                .unwrap_or(WeightMatrix::ScaledIdentity(a.operator(i).op_norm_sq())),
        })
        .collect();
    let (a1, y1, g1) = (a.clone(), y.clone(), g.to_vec());
    let half = T::lit(0.5);
    let value: ObjectiveFn<T> = Arc::new(move |x| {
        let eval = || -> Result<T> {
            let mut acc = half * (T::one() - T::from_count(n)) * s.norm_sq();
            for i in 0..n {
                let d = x.block(i) - y1.block(i);
                let mut r = s.clone();
                a1.operator(i).apply_add(&d, &mut r, T::one())?;
                acc += half * r.norm_sq() + half * weighted_inner(&d, &d, &g1[i], Some(a1.operator(i)))?;
            }
            Ok(acc)
        };
        eval().unwrap_or_else(|_| T::lit(f64::NAN))
    });
    let (a2, b2) = (a.clone(), b.clone());
    let target: ObjectiveFn<T> =
        Arc::new(move |x| residual(&a2, x, &b2).map(|r| half * r.norm_sq()).unwrap_or_else(|_| T::lit(f64::NAN)));
    Ok(QuadSurrogate { surrogate: Surrogate::new(y.clone(), SmoothnessCert::tight(l), value, target), violations })
}
