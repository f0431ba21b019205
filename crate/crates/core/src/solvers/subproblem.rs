use nalgebra::{Cholesky, DMatrix};

use crate::blockspace::{weighted_inner, BlockOperator, BlockVector, Gram, WeightMatrix};
use crate::error::{Error, Result};
use crate::prox::{ProxFunction, ProxKind};
use crate::scalar::Scalar;
use crate::surrogates::BlockSurrogate;

/// Closed-form route a block subproblem takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolvePath {
    /// Scalar curvature: one prox evaluation.
    Prox,
    /// Diagonal curvature with a separable term: entrywise prox.
    EntrywiseProx,
    /// Left/right curvature with a quadratic term: one linear solve.
    LinearSolve,
}

/// `Q = ℓI + β(G + AᵀA)` as a structured curvature, if representable.
pub fn block_curvature<T: Scalar>(
    surrogate: &BlockSurrogate<T>,
    weight: &WeightMatrix<T>,
    op: &BlockOperator<T>,
    beta: T,
) -> Option<Gram<T>> {
    Some(collapse(weight.plus_gram(op)?.scale(beta).add_scalar(surrogate.curvature())))
}

/// A structured curvature that is exactly `c·I` becomes `Scalar(c)`.
fn collapse<T: Scalar>(q: Gram<T>) -> Gram<T> {
    let uniform = |m: &DMatrix<T>| {
        let c = m[(0, 0)];
        m.iter().all(|&v| v == c).then_some(c)
    };
    let identity = |p: &DMatrix<T>| {
        let c = p[(0, 0)];
        let ok = p.is_square()
            && p.iter().enumerate().all(|(k, &v)| if k / p.nrows() == k % p.nrows() { v == c } else { v == T::zero() });
        ok.then_some(c)
    };
    let c = match &q {
        Gram::Scalar(_) => None,
        Gram::Diagonal(d) if !d.is_empty() => uniform(d),
        Gram::Left(p) | Gram::Right(p) if !p.is_empty() => identity(p),
        _ => None,
    };
    c.map_or(q, Gram::Scalar)
}

/// Which closed form applies to `g` under curvature `q`, or why none does.
pub fn solve_path<T: Scalar>(g: &ProxFunction<T>, q: &Gram<T>) -> std::result::Result<SolvePath, String> {
    match q {
        Gram::Scalar(w) if *w > T::zero() => Ok(SolvePath::Prox),
        Gram::Scalar(_) => Err("zero curvature".into()),
        Gram::Diagonal(d) if g.is_separable() => {
            if d.iter().all(|&v| v > T::zero()) {
                Ok(SolvePath::EntrywiseProx)
            } else {
                Err("diagonal curvature has zero entries".into())
            }
        }
        Gram::Diagonal(_) => Err(format!("{} term with diagonal curvature", g.kind.name())),
        Gram::Left(_) | Gram::Right(_) if g.is_quadratic() => Ok(SolvePath::LinearSolve),
        Gram::Left(_) | Gram::Right(_) => {
            Err(format!("{} term with a non-scalar gram; use a linearizing weight", g.kind.name()))
        }
    }
}

/// `argmin_x g(x) + ⟨x − x₀, q⟩ + ½⟨x − x₀, Q(x − x₀)⟩` for one block.
#[derive(Clone, Debug)]
pub struct BlockSubproblem<T: Scalar> {
    pub block: usize,
    pub g: ProxFunction<T>,
    pub anchor: DMatrix<T>,
    pub linear: DMatrix<T>,
    pub curvature: Gram<T>,
}

impl<T: Scalar> BlockSubproblem<T> {
    /// Builds the subproblem of block `i` from the multiplier-plus-residual term
    /// `w = λ + β s` (constraint space) and, for gradient surrogates, `∇ᵢh(xᵏ)`.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        block: usize,
        g: &ProxFunction<T>,
        surrogate: &BlockSurrogate<T>,
        weight: &WeightMatrix<T>,
        op: &BlockOperator<T>,
        anchor: &DMatrix<T>,
        w: &BlockVector<T>,
        beta: T,
        gradient: Option<&DMatrix<T>>,
        smooth_involved: bool,
    ) -> Result<Self> {
        let unsupported = |reason: String| Error::UnsupportedSubproblem { block, reason };
        match surrogate {
            BlockSurrogate::Exact | BlockSurrogate::Proximal(_) if smooth_involved => {
                return Err(unsupported(format!("{} surrogate keeps the smooth coupling exact", surrogate.name())));
            }
            BlockSurrogate::LipschitzGradient(_) if g.kind != ProxKind::Zero => {
                return Err(unsupported("lipschitz-gradient surrogate needs a zero prox term".into()));
            }
            _ => {}
        }
        let curvature = block_curvature(surrogate, weight, op, beta)
            .ok_or_else(|| unsupported("weight and gram have incompatible structure".into()))?;
        let mut linear = op.adjoint(w)?;
        if surrogate.uses_gradient() {
            if let Some(gr) = gradient {
                linear += gr;
            }
        }
        Ok(BlockSubproblem { block, g: *g, anchor: anchor.clone(), linear, curvature })
    }

    pub fn path(&self) -> Result<SolvePath> {
        solve_path(&self.g, &self.curvature)
            .map_err(|reason| Error::UnsupportedSubproblem { block: self.block, reason })
    }

    pub fn solve(&self) -> Result<DMatrix<T>> {
        let x0 = &self.anchor;
        let q = &self.linear;
        match (self.path()?, &self.curvature) {
            (SolvePath::Prox, Gram::Scalar(w)) => {
                let inv = T::one() / *w;
                self.g.prox(&(x0 - q * inv), inv)
            }
            (SolvePath::EntrywiseProx, Gram::Diagonal(d)) => {
                let v = x0.zip_zip_map(q, d, |x, qj, dj| x - qj / dj);
                let t = d.map(|dj| T::one() / dj);
                self.g.prox_diag(&v, &t)
            }
            (SolvePath::LinearSolve, Gram::Left(p)) => {
                let mu = self.g.quadratic_coefficient().unwrap_or_else(T::zero);
                let rhs = p * x0 - q;
                Ok(self.cholesky(p, mu)?.solve(&rhs))
            }
            (SolvePath::LinearSolve, Gram::Right(p)) => {
                let mu = self.g.quadratic_coefficient().unwrap_or_else(T::zero);
                let rhs = (x0 * p - q).transpose();
                Ok(self.cholesky(p, mu)?.solve(&rhs).transpose())
            }
            _ => unreachable!("path matches curvature"),
        }
    }

    fn cholesky(&self, p: &DMatrix<T>, mu: T) -> Result<Cholesky<T, nalgebra::Dyn>> {
        let n = p.nrows();
        let m = p + DMatrix::identity(n, n) * mu;
        Cholesky::new(m)
            .ok_or_else(|| Error::Numerical(format!("block {}: curvature matrix is not positive definite", self.block)))
    }

    /// Subproblem objective at `x`.
    pub fn value(&self, x: &DMatrix<T>) -> Result<T> {
        let d = x - &self.anchor;
        Ok(self.g.evaluate(x)? + d.dot(&self.linear) + self.curvature.quad(&d) / T::lit(2.0))
    }

    /// Distance from `0` to the subdifferential of the subproblem at `x`.
    pub fn optimality_residual(&self, x: &DMatrix<T>, zero_tol: T) -> Result<T> {
        let d = x - &self.anchor;
        let u = -(&self.linear + self.curvature.apply(&d));
        self.g.subgradient_distance(x, &u, zero_tol)
    }
}

/// `⟨Δ, (G + AᵀA)Δ⟩`
pub(crate) fn k_quad<T: Scalar>(g: &WeightMatrix<T>, op: &BlockOperator<T>, d: &DMatrix<T>) -> Result<T> {
    match g.plus_gram(op) {
        Some(k) => Ok(k.quad(d)),
        None => {
            let ad = op.apply(d)?;
            Ok(weighted_inner(d, d, g, Some(op))? + ad.norm_sq())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockspace::LinearMap;

    fn vec1(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn scalar_prox_path() {
        // min |x| + (x - 0)·(-2) + ½x²  →  soft(2, 1) = 1
        let op = BlockOperator::dense(DMatrix::from_element(1, 1, 1.0));
        let w = BlockVector::from_vecs(vec![vec![-2.0]]).unwrap();
        let sp = BlockSubproblem::assemble(
            0,
            &ProxFunction::l1(1.0),
            &BlockSurrogate::Exact,
            &WeightMatrix::Zero,
            &op,
            &vec1(&[0.0]),
            &w,
            1.0,
            None,
            false,
        )
        .unwrap();
        assert_eq!(sp.path().unwrap(), SolvePath::Prox);
        assert_eq!(sp.solve().unwrap()[0], 1.0);
    }

    #[test]
    fn left_solve_matches_normal_equations() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 1.0]);
        let op = BlockOperator::dense(a.clone());
        let w = BlockVector::from_vecs(vec![vec![1.0, -2.0, 0.5]]).unwrap();
        let x0 = vec1(&[0.3, -0.7]);
        let sp = BlockSubproblem::assemble(
            0,
            &ProxFunction::sq(0.5),
            &BlockSurrogate::Exact,
            &WeightMatrix::Zero,
            &op,
            &x0,
            &w,
            2.0,
            None,
            false,
        )
        .unwrap();
        let x = sp.solve().unwrap();
        assert!(sp.optimality_residual(&x, 1e-12).unwrap() < 1e-10);
    }

    #[test]
    fn nuclear_with_gram_rejected() {
        let op = BlockOperator::single((2, 2), LinearMap::LeftMultiply(DMatrix::from_element(2, 2, 1.0))).unwrap();
        let w = BlockVector::zeros(&[(2, 2)]);
        let sp = BlockSubproblem::assemble(
            3,
            &ProxFunction::nuclear(1.0),
            &BlockSurrogate::Exact,
            &WeightMatrix::Zero,
            &op,
            &DMatrix::zeros(2, 2),
            &w,
            1.0,
            None,
            false,
        )
        .unwrap();
        assert!(matches!(sp.solve(), Err(Error::UnsupportedSubproblem { block: 3, .. })));
    }
}
