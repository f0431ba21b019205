use nalgebra::{DMatrix, SymmetricEigen};

use super::operator::{BlockOperator, Gram};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Proximal weight `Gᵢ` attached to a block.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightMatrix<T: Scalar> {
    Zero,
    /// `η·I`
    ScaledIdentity(T),
    /// `η·I − AᵢᵀAᵢ` for the block's own operator.
    ScaledIdentityMinusGram(T),
    /// Dense symmetric matrix acting on the column-major vectorized block.
    Explicit(DMatrix<T>),
}

impl<T: Scalar> WeightMatrix<T> {
    pub fn scaled_identity(eta: T) -> Result<Self> {
        if eta < T::zero() {
            return Err(Error::InvalidWeight(format!("η = {eta} is negative")));
        }
        Ok(WeightMatrix::ScaledIdentity(eta))
    }

    pub fn minus_gram(eta: T) -> Result<Self> {
        if eta < T::zero() {
            return Err(Error::InvalidWeight(format!("η = {eta} is negative")));
        }
        Ok(WeightMatrix::ScaledIdentityMinusGram(eta))
    }

    /// Checks symmetry and positive semidefiniteness.
    pub fn explicit(m: DMatrix<T>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidWeight("explicit weight must be square".into()));
        }
        let scale = m.amax().max(T::one());
        let tol = T::lit(1e-10) * scale;
        let asym = (&m - m.transpose()).amax();
        if asym > tol {
            return Err(Error::InvalidWeight(format!("explicit weight not symmetric ({asym})")));
        }
        let min = min_eigenvalue(&m);
        if min < -tol {
            return Err(Error::InvalidWeight(format!("explicit weight has eigenvalue {min}")));
        }
        Ok(WeightMatrix::Explicit(m))
    }

    /// The `η` of the scaled forms.
    pub fn eta(&self) -> Option<T> {
        match self {
            WeightMatrix::ScaledIdentity(e) | WeightMatrix::ScaledIdentityMinusGram(e) => Some(*e),
            _ => None,
        }
    }

    pub fn scale(&self, c: T) -> Self {
        match self {
            WeightMatrix::Zero => WeightMatrix::Zero,
            WeightMatrix::ScaledIdentity(e) => WeightMatrix::ScaledIdentity(*e * c),
            WeightMatrix::ScaledIdentityMinusGram(e) => WeightMatrix::ScaledIdentityMinusGram(*e * c),
            WeightMatrix::Explicit(m) => WeightMatrix::Explicit(m * c),
        }
    }

    /// Sum of two weights on the same block; `None` when the forms cannot be combined
    /// without the paired operator.
    pub fn add(&self, other: &Self) -> Option<Self> {
        use WeightMatrix::*;
        Some(match (self, other) {
            (Zero, x) | (x, Zero) => x.clone(),
            (ScaledIdentity(a), ScaledIdentity(b)) => ScaledIdentity(*a + *b),
            (Explicit(a), Explicit(b)) if a.shape() == b.shape() => Explicit(a + b),
            (ScaledIdentity(a), Explicit(m)) | (Explicit(m), ScaledIdentity(a)) => {
                let n = m.nrows();
                Explicit(m + DMatrix::identity(n, n) * *a)
            }
            _ => return None,
        })
    }

    /// PSD check; operator needed for the minus-gram form.
    pub fn is_psd(&self, paired_op: Option<&BlockOperator<T>>) -> bool {
        match self {
            WeightMatrix::Zero => true,
            WeightMatrix::ScaledIdentity(e) => *e >= T::zero(),
            WeightMatrix::ScaledIdentityMinusGram(e) => paired_op.is_some_and(|op| *e >= op.op_norm_sq()),
            WeightMatrix::Explicit(m) => min_eigenvalue(m) >= -T::lit(1e-10) * m.amax().max(T::one()),
        }
    }

    /// `Gᵢ + AᵢᵀAᵢ` as a structured curvature, if representable.
    pub fn plus_gram(&self, op: &BlockOperator<T>) -> Option<Gram<T>> {
        match self {
            WeightMatrix::ScaledIdentityMinusGram(e) => Some(Gram::Scalar(*e)),
            WeightMatrix::Zero => op.gram(),
            WeightMatrix::ScaledIdentity(e) => Some(op.gram()?.add_scalar(*e)),
            WeightMatrix::Explicit(m) => {
                if op.input_shape().1 != 1 {
                    return None;
                }
                match op.gram()? {
                    Gram::Scalar(c) => Some(Gram::Left(m + DMatrix::identity(m.nrows(), m.nrows()) * c)),
                    Gram::Left(p) => Some(Gram::Left(p + m)),
                    Gram::Diagonal(d) => Some(Gram::Left(m + DMatrix::from_diagonal(&d.column(0).into_owned()))),
                    Gram::Right(_) => None,
                }
            }
        }
    }
}

pub(crate) fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().fold(eig.eigenvalues[0], |acc, &v| acc.min(v))
}

fn check_explicit<T: Scalar>(m: &DMatrix<T>, v: &DMatrix<T>) -> Result<()> {
    if m.nrows() != v.len() {
        return Err(Error::Dimension(format!("weight acts on {} entries, block has {}", m.nrows(), v.len())));
    }
    Ok(())
}

/// `⟨u, G v⟩`
pub fn weighted_inner<T: Scalar>(
    u: &DMatrix<T>,
    v: &DMatrix<T>,
    g: &WeightMatrix<T>,
    paired_op: Option<&BlockOperator<T>>,
) -> Result<T> {
    if u.shape() != v.shape() {
        return Err(Error::Dimension("inner product of differently shaped blocks".into()));
    }
    match g {
        WeightMatrix::Zero => Ok(T::zero()),
        WeightMatrix::ScaledIdentity(e) => Ok(*e * u.dot(v)),
        WeightMatrix::ScaledIdentityMinusGram(e) => {
            let op = paired_op.ok_or_else(|| Error::InvalidWeight("η·I − AᵀA needs its paired operator".into()))?;
            let au = op.apply(u)?;
            let av = op.apply(v)?;
            Ok(*e * u.dot(v) - au.dot(&av)?)
        }
        WeightMatrix::Explicit(m) => {
            check_explicit(m, v)?;
            let uf = DMatrix::from_column_slice(u.len(), 1, u.as_slice());
            let vf = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
            Ok(uf.dot(&(m * vf)))
        }
    }
}

/// `‖v‖²_G`; rejects values below `−10⁻¹²`, which signal an indefinite weight.
pub fn weighted_norm_sq<T: Scalar>(
    v: &DMatrix<T>,
    g: &WeightMatrix<T>,
    paired_op: Option<&BlockOperator<T>>,
) -> Result<T> {
    let val = weighted_inner(v, v, g, paired_op)?;
    if val < -T::lit(1e-12) {
        return Err(Error::InvalidWeight(format!("‖v‖²_G = {val} < 0; η below the gram norm?")));
    }
    Ok(val)
}
