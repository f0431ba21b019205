//! Proximal operators for the per-block objective terms.
//!
//! Every routine here solves `min_x g(x) + 1/(2t)‖x − v‖²` in closed form. Ties at
//! `|vⱼ| = t` resolve to exactly zero.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which convex function a [`ProxFunction`] evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProxKind {
    L1,
    /// `‖x‖₁` restricted to `x ≥ 0`.
    L1Nonneg,
    Nuclear,
    /// `½‖x‖²_F`
    SqFrobenius,
    /// Sum of column norms.
    L21,
    IndicatorNonneg,
    Zero,
}

impl ProxKind {
    pub fn name(self) -> &'static str {
        match self {
            ProxKind::L1 => "l1",
            ProxKind::L1Nonneg => "l1-nonneg",
            ProxKind::Nuclear => "nuclear",
            ProxKind::SqFrobenius => "sq",
            ProxKind::L21 => "l21",
            ProxKind::IndicatorNonneg => "nonneg",
            ProxKind::Zero => "zero",
        }
    }
}

/// `weight · g` for one of the supported `g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxFunction<T: Scalar> {
    pub kind: ProxKind,
    pub weight: T,
}

fn nonzero_or_zero<T: Scalar>(v: T) -> T {
    if v == T::zero() {
        T::zero()
    } else {
        v
    }
}

/// Soft thresholding.
pub fn prox_l1<T: Scalar>(v: &DMatrix<T>, t: T) -> DMatrix<T> {
    v.map(|x| {
        let m = x.abs() - t;
        if m > T::zero() {
            if x > T::zero() {
                m
            } else {
                -m
            }
        } else {
            T::zero()
        }
    })
}

/// One-sided soft thresholding, `max(v − t, 0)`.
pub fn prox_l1_nonneg<T: Scalar>(v: &DMatrix<T>, t: T) -> DMatrix<T> {
    v.map(|x| if x - t > T::zero() { x - t } else { T::zero() })
}

/// `max(v, 0)` with negative zero mapped to zero.
pub fn project_nonneg<T: Scalar>(v: &DMatrix<T>) -> DMatrix<T> {
    v.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// `argmin (λ/2)‖x‖² + (w/2)‖x − v‖² = w·v/(λ + w)`.
pub fn prox_sq<T: Scalar>(v: &DMatrix<T>, lambda: T, w: T) -> Result<DMatrix<T>> {
    if lambda + w <= T::zero() {
        return Err(Error::InvalidParameter(format!("λ + w = {} must be positive", lambda + w)));
    }
    let c = w / (lambda + w);
    Ok(v.map(|x| nonzero_or_zero(c * x)))
}

/// Column-wise group shrinkage.
pub fn prox_l21<T: Scalar>(v: &DMatrix<T>, t: T) -> DMatrix<T> {
    let mut out = v.clone();
    for mut col in out.column_iter_mut() {
        let n = col.norm();
        let s = if n > t { T::one() - t / n } else { T::zero() };
        col.apply(|x| *x = nonzero_or_zero(*x * s));
    }
    out
}

fn svd<T: Scalar>(v: &DMatrix<T>) -> Result<SVD<T, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(v.clone(), true, true, T::eps(), 10_000).ok_or_else(|| {
        Error::Numerical(format!(
            "SVD did not converge on a {}×{} matrix (‖V‖_F = {}, finite: {})",
            v.nrows(),
            v.ncols(),
            v.norm(),
            v.iter().all(|x| x.is_finite())
        ))
    })
}

/// Singular value thresholding.
pub fn prox_nuclear<T: Scalar>(v: &DMatrix<T>, t: T) -> Result<DMatrix<T>> {
    if v.is_empty() {
        return Ok(v.clone());
    }
    let s = svd(v)?;
    let u = s.u.as_ref().expect("u requested");
    let vt = s.v_t.as_ref().expect("v requested");
    let mut out = DMatrix::zeros(v.nrows(), v.ncols());
    for (k, &sigma) in s.singular_values.iter().enumerate() {
        let shrunk = sigma - t;
        if shrunk > T::zero() {
            out.ger(shrunk, &u.column(k), &vt.row(k).transpose(), T::one());
        }
    }
    Ok(out)
}

/// Singular values in nonincreasing order.
pub fn singular_values<T: Scalar>(v: &DMatrix<T>) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    let s = SVD::try_new(v.clone(), false, false, T::eps(), 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let mut sv: Vec<T> = s.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(sv)
}

impl<T: Scalar> ProxFunction<T> {
    pub fn new(kind: ProxKind, weight: T) -> Result<Self> {
        if weight < T::zero() || !weight.is_finite() {
            return Err(Error::InvalidParameter(format!("weight {weight} must be finite and ≥ 0")));
        }
        Ok(ProxFunction { kind, weight })
    }

    pub fn zero() -> Self {
        ProxFunction { kind: ProxKind::Zero, weight: T::zero() }
    }

    pub fn l1(weight: T) -> Self {
        ProxFunction { kind: ProxKind::L1, weight }
    }

    pub fn l1_nonneg(weight: T) -> Self {
        ProxFunction { kind: ProxKind::L1Nonneg, weight }
    }

    pub fn nuclear(weight: T) -> Self {
        ProxFunction { kind: ProxKind::Nuclear, weight }
    }

    pub fn sq(weight: T) -> Self {
        ProxFunction { kind: ProxKind::SqFrobenius, weight }
    }

    pub fn l21(weight: T) -> Self {
        ProxFunction { kind: ProxKind::L21, weight }
    }

    pub fn nonneg() -> Self {
        ProxFunction { kind: ProxKind::IndicatorNonneg, weight: T::one() }
    }

    /// Whether the function is a sum of per-entry terms.
    pub fn is_separable(&self) -> bool {
        !matches!(self.kind, ProxKind::Nuclear | ProxKind::L21)
    }

    /// Whether the function is a (possibly zero) multiple of `½‖x‖²`.
    pub fn is_quadratic(&self) -> bool {
        match self.kind {
            ProxKind::Zero | ProxKind::SqFrobenius => true,
            ProxKind::L1 | ProxKind::Nuclear | ProxKind::L21 => self.weight == T::zero(),
            ProxKind::L1Nonneg | ProxKind::IndicatorNonneg => false,
        }
    }

    /// Coefficient `μ` with `f = (μ/2)‖x‖²` for quadratic functions.
    pub fn quadratic_coefficient(&self) -> Option<T> {
        if !self.is_quadratic() {
            return None;
        }
        Some(if self.kind == ProxKind::SqFrobenius { self.weight } else { T::zero() })
    }

    pub fn evaluate(&self, x: &DMatrix<T>) -> Result<T> {
        let w = self.weight;
        Ok(match self.kind {
            ProxKind::Zero => T::zero(),
            ProxKind::L1 => w * x.iter().fold(T::zero(), |a, v| a + v.abs()),
            ProxKind::L1Nonneg => {
                if x.iter().any(|&v| v < T::zero()) {
                    return Ok(T::lit(f64::INFINITY));
                }
                w * x.sum()
            }
            ProxKind::Nuclear => {
                if w == T::zero() {
                    T::zero()
                } else {
                    w * singular_values(x)?.into_iter().fold(T::zero(), |a, s| a + s)
                }
            }
            ProxKind::SqFrobenius => w * x.norm_squared() / T::lit(2.0),
            ProxKind::L21 => w * x.column_iter().fold(T::zero(), |a, c| a + c.norm()),
            ProxKind::IndicatorNonneg => {
                if x.iter().any(|&v| v < T::zero()) {
                    T::lit(f64::INFINITY)
                } else {
                    T::zero()
                }
            }
        })
    }

    /// `argmin_x weight·g(x) + 1/(2t)‖x − v‖²`
    pub fn prox(&self, v: &DMatrix<T>, t: T) -> Result<DMatrix<T>> {
        if t < T::zero() || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("prox step {t} must be finite and ≥ 0")));
        }
        let s = self.weight * t;
        Ok(match self.kind {
            ProxKind::Zero => v.clone(),
            ProxKind::L1 => prox_l1(v, s),
            ProxKind::L1Nonneg => prox_l1_nonneg(v, s),
            ProxKind::Nuclear => {
                if s == T::zero() {
                    v.clone()
                } else {
                    prox_nuclear(v, s)?
                }
            }
            ProxKind::SqFrobenius => {
                if t == T::zero() {
                    v.clone()
                } else {
                    prox_sq(v, self.weight, T::one() / t)?
                }
            }
            ProxKind::L21 => prox_l21(v, s),
            ProxKind::IndicatorNonneg => project_nonneg(v),
        })
    }

    /// Entrywise prox with per-entry steps `t`; separable kinds only.
    pub fn prox_diag(&self, v: &DMatrix<T>, t: &DMatrix<T>) -> Result<DMatrix<T>> {
        if !self.is_separable() {
            return Err(Error::Argument(format!("{} is not separable", self.kind.name())));
        }
        if v.shape() != t.shape() {
            return Err(Error::Dimension("prox steps must match the block shape".into()));
        }
        let w = self.weight;
        Ok(v.zip_map(t, |x, tj| {
            let s = w * tj;
            match self.kind {
                ProxKind::Zero => x,
                ProxKind::L1 => {
                    let m = x.abs() - s;
                    if m > T::zero() {
                        if x > T::zero() {
                            m
                        } else {
                            -m
                        }
                    } else {
                        T::zero()
                    }
                }
                ProxKind::L1Nonneg => {
                    if x - s > T::zero() {
                        x - s
                    } else {
                        T::zero()
                    }
                }
                ProxKind::SqFrobenius => nonzero_or_zero(x / (T::one() + s)),
                ProxKind::IndicatorNonneg => {
                    if x > T::zero() {
                        x
                    } else {
                        T::zero()
                    }
                }
                ProxKind::Nuclear | ProxKind::L21 => unreachable!(),
            }
        }))
    }

    /// Frobenius distance from `u` to `∂(weight·g)(x)`; entries with magnitude at most
    /// `zero_tol` count as zero when selecting the subdifferential branch.
    pub fn subgradient_distance(&self, x: &DMatrix<T>, u: &DMatrix<T>, zero_tol: T) -> Result<T> {
        if x.shape() != u.shape() {
            return Err(Error::Dimension("subgradient shape mismatch".into()));
        }
        let w = self.weight;
        let pos = |v: T| if v > T::zero() { v } else { T::zero() };
        let d2 = match self.kind {
            ProxKind::Zero => u.norm_squared(),
            ProxKind::L1 => x.zip_fold(u, T::zero(), |a, xj, uj| {
                let e = if xj.abs() > zero_tol { uj - w * xj.signum() } else { pos(uj.abs() - w) };
                a + e * e
            }),
            ProxKind::L1Nonneg => x.zip_fold(u, T::zero(), |a, xj, uj| {
                let e = if xj > zero_tol { uj - w } else { pos(uj - w) };
                a + e * e
            }),
            ProxKind::IndicatorNonneg => x.zip_fold(u, T::zero(), |a, xj, uj| {
                let e = if xj > zero_tol { uj } else { pos(uj) };
                a + e * e
            }),
            ProxKind::SqFrobenius => (u - x * w).norm_squared(),
            ProxKind::L21 => {
                let mut acc = T::zero();
                for (xc, uc) in x.column_iter().zip(u.column_iter()) {
                    let n = xc.norm();
                    if n > zero_tol {
                        acc += (uc - xc * (w / n)).norm_squared();
                    } else {
                        let e = pos(uc.norm() - w);
                        acc += e * e;
                    }
                }
                acc
            }
            ProxKind::Nuclear => {
                if w == T::zero() {
                    return Ok(u.norm());
                }
                let s = svd(x)?;
                let uu = s.u.as_ref().expect("u");
                let vt = s.v_t.as_ref().expect("v");
                let rank_idx: Vec<usize> =
                    (0..s.singular_values.len()).filter(|&k| s.singular_values[k] > zero_tol).collect();
                let ur = DMatrix::from_fn(x.nrows(), rank_idx.len(), |i, j| uu[(i, rank_idx[j])]);
                let vr = DMatrix::from_fn(x.ncols(), rank_idx.len(), |i, j| vt[(rank_idx[j], i)]);
                let wmat = u / w - &ur * vr.transpose();
                let p = &ur * ur.transpose();
                let q = &vr * vr.transpose();
                let perp = &wmat - &p * &wmat - &wmat * &q + &p * &wmat * &q;
                let rest = &wmat - &perp;
                let excess = singular_values(&perp)?
                    .into_iter()
                    .fold(T::zero(), |a, sv| a + pos(sv - T::one()) * pos(sv - T::one()));
                (rest.norm_squared() + excess) * w * w
            }
        };
        Ok(d2.sqrt())
    }
}
