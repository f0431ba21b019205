use nalgebra::DMatrix;

use super::data::{DataGenSpec, LowRankData, SparseCodingData};
use super::{ConstraintRow, ProblemSpec};
use crate::blockspace::{BlockOperator, BlockOperatorFamily, BlockVector, LinearMap};
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::prox::ProxFunction;
use crate::scalar::Scalar;
use crate::surrogates::QuadraticCoupling;

fn cast<T: Scalar>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::lit)
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn gen_manifest(gen: &DataGenSpec) -> Vec<(String, String)> {
    let mut m = vec![kv("seed", gen.seed), kv("d", gen.d), kv("n", gen.n)];
    if !gen.block_dims.is_empty() {
        let dims: Vec<String> = gen.block_dims.iter().map(|v| v.to_string()).collect();
        m.push(kv("block_dims", dims.join(",")));
    }
    m.push(kv("nonzero_fraction", gen.nonzero_fraction));
    m.push(kv("noise_sigma", gen.noise_sigma));
    m.push(kv("rank", gen.rank));
    m.push(kv("observed_fraction", gen.observed_fraction));
    m
}

/// `min Σ‖xᵢ‖₁ s.t. Σ Aᵢxᵢ = y, xᵢ ≥ 0`.
pub fn build_nonneg_sparse_coding<T: Scalar>(gen: &DataGenSpec) -> Result<ProblemSpec<T>> {
    let data = SparseCodingData::generate(gen)?;
    let spec = sparse_coding_from(&data.a, &data.y, None)?;
    Ok(spec.with_manifest(gen_manifest(gen)))
}

/// Adds a noise block `e` with penalty `λ‖e‖₁`: `y = Σ Aᵢxᵢ + e`.
pub fn build_nonneg_sparse_coding_noisy<T: Scalar>(gen: &DataGenSpec, lambda: f64) -> Result<ProblemSpec<T>> {
    if !(lambda > 0.0) {
        return Err(Error::Argument("λ must be > 0".into()));
    }
    let data = SparseCodingData::generate(gen)?;
    let mut m = gen_manifest(gen);
    m.push(kv("lambda", lambda));
    Ok(sparse_coding_from(&data.a, &data.y, Some(T::lit(lambda)))?.with_manifest(m))
}

/// Sparse coding over given dictionaries; `noise_weight` adds the `e` block.
pub fn sparse_coding_from<T: Scalar>(
    a: &[DMatrix<f64>],
    y: &DMatrix<f64>,
    noise_weight: Option<T>,
) -> Result<ProblemSpec<T>> {
    let d = y.nrows();
    let mut ops: Vec<BlockOperator<T>> = a.iter().map(|ai| BlockOperator::dense(cast(ai))).collect();
    let mut terms = vec![ProxFunction::l1_nonneg(T::one()); a.len()];
    let mut names: Vec<String> = (1..=a.len()).map(|i| format!("x{i}")).collect();
    if let Some(w) = noise_weight {
        ops.push(BlockOperator::single((d, 1), LinearMap::ScaledIdentity(T::one()))?);
        terms.push(ProxFunction::l1(w));
        names.push("e".into());
    }
    let row = ConstraintRow::new(BlockOperatorFamily::new(ops)?, BlockVector::new(vec![cast(y)])?)?;
    let name = if noise_weight.is_some() { "nnsc-noisy" } else { "nnsc" };
    let mut spec = ProblemSpec::new(name, terms, vec![row], None)?;
    spec.block_names = names;
    Ok(spec)
}

/// Which latent LRR model to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentLrrFormulation {
    /// `min ‖Z‖_* + ‖L‖_* + (λ/2)‖XZ + LX − X‖² s.t. 1ᵀZ = 1ᵀ`
    TwoBlock,
    /// `min ‖Z‖_* + ‖L‖_* + (λ/2)‖E‖² s.t. 1ᵀZ = 1ᵀ, XZ + LX − X = E`
    ThreeBlock,
}

/// Latent low-rank representation of the columns of `x` (`d × N`).
pub fn build_latent_lrr<T: Scalar>(
    x: &DMatrix<f64>,
    lambda: f64,
    formulation: LatentLrrFormulation,
) -> Result<ProblemSpec<T>> {
    if !(lambda > 0.0) {
        return Err(Error::Argument("λ must be > 0".into()));
    }
    let (d, n) = x.shape();
    let xt: DMatrix<T> = cast(x);
    let ones_row = DMatrix::from_element(1, n, T::one());
    let lam = T::lit(lambda);
    let sum_row_z = BlockOperator::single((n, n), LinearMap::LeftMultiply(ones_row.clone()))?;
    let sum_rhs = BlockVector::new(vec![ones_row.clone()])?;
    let manifest = vec![kv("lambda", lambda), kv("rows", d), kv("cols", n)];
    match formulation {
        LatentLrrFormulation::TwoBlock => {
            let row = ConstraintRow::new(
                BlockOperatorFamily::new(vec![sum_row_z, BlockOperator::zero((d, d), vec![(1, n)])])?,
                sum_rhs,
            )?;
            let coupling = BlockOperatorFamily::new(vec![
                BlockOperator::single((n, n), LinearMap::LeftMultiply(xt.clone()))?,
                BlockOperator::single((d, d), LinearMap::RightMultiply(xt.clone()))?,
            ])?;
            let smooth = QuadraticCoupling::new(lam, coupling, BlockVector::new(vec![xt])?)?;
            let spec = ProblemSpec::new(
                "latent-lrr-2",
                vec![ProxFunction::nuclear(T::one()), ProxFunction::nuclear(T::one())],
                vec![row],
                Some(smooth),
            )?;
            Ok(spec
                .with_block_names(&["Z", "L"])
                .with_partition_hint(Partition::user(vec![0], 2)?)
                .with_manifest(manifest))
        }
        LatentLrrFormulation::ThreeBlock => {
            let row1 = ConstraintRow::new(
                BlockOperatorFamily::new(vec![
                    sum_row_z,
                    BlockOperator::zero((d, d), vec![(1, n)]),
                    BlockOperator::zero((d, n), vec![(1, n)]),
                ])?,
                sum_rhs,
            )?;
            let row2 = ConstraintRow::new(
                BlockOperatorFamily::new(vec![
                    BlockOperator::single((n, n), LinearMap::LeftMultiply(xt.clone()))?,
                    BlockOperator::single((d, d), LinearMap::RightMultiply(xt.clone()))?,
                    BlockOperator::single((d, n), LinearMap::Negation)?,
                ])?,
                BlockVector::new(vec![xt])?,
            )?;
            let spec = ProblemSpec::new(
                "latent-lrr-3",
                vec![ProxFunction::nuclear(T::one()), ProxFunction::nuclear(T::one()), ProxFunction::sq(lam)],
                vec![row1, row2],
                None,
            )?;
            Ok(spec
                .with_block_names(&["Z", "L", "E"])
                .with_partition_hint(Partition::user(vec![0], 3)?)
                .with_manifest(manifest))
        }
    }
}

/// `min ‖J‖_* + λ‖E‖_{2,1} s.t. X = A Z + E, Z = J` with blocks ordered `[Z, J, E]`.
pub fn build_lrr<T: Scalar>(x: &DMatrix<f64>, dict: &DMatrix<f64>, lambda: f64) -> Result<ProblemSpec<T>> {
    if !(lambda > 0.0) {
        return Err(Error::Argument("λ must be > 0".into()));
    }
    let (d, n) = x.shape();
    if dict.nrows() != d {
        return Err(Error::Dimension(format!("dictionary has {} rows, data {d}", dict.nrows())));
    }
    let m = dict.ncols();
    let row1 = ConstraintRow::new(
        BlockOperatorFamily::new(vec![
            BlockOperator::single((m, n), LinearMap::LeftMultiply(cast(dict)))?,
            BlockOperator::zero((m, n), vec![(d, n)]),
            BlockOperator::single((d, n), LinearMap::ScaledIdentity(T::one()))?,
        ])?,
        BlockVector::new(vec![cast(x)])?,
    )?;
    let row2 = ConstraintRow::new(
        BlockOperatorFamily::new(vec![
            BlockOperator::single((m, n), LinearMap::ScaledIdentity(T::one()))?,
            BlockOperator::single((m, n), LinearMap::Negation)?,
            BlockOperator::zero((d, n), vec![(m, n)]),
        ])?,
        BlockVector::zeros(&[(m, n)]),
    )?;
    let spec = ProblemSpec::new(
        "lrr",
        vec![ProxFunction::zero(), ProxFunction::nuclear(T::one()), ProxFunction::l21(T::lit(lambda))],
        vec![row1, row2],
        None,
    )?;
    Ok(spec.with_block_names(&["Z", "J", "E"]).with_manifest(vec![kv("lambda", lambda)]))
}

/// `min ‖X‖_* + (λ/2)‖E‖² s.t. P_Ω(Z) + E = B, X = Z, Z ≥ 0` with blocks `[X, E, Z]`.
pub fn build_nonneg_matrix_completion<T: Scalar>(gen: &DataGenSpec, lambda: f64) -> Result<ProblemSpec<T>> {
    let data = LowRankData::generate(gen)?;
    let mut m = gen_manifest(gen);
    m.push(kv("lambda", lambda));
    Ok(matrix_completion_from(&data.mask, &data.b, lambda)?.with_manifest(m))
}

/// Completion problem for a given 0/1 mask and observed data.
pub fn matrix_completion_from<T: Scalar>(mask: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<ProblemSpec<T>> {
    if !(lambda > 0.0) {
        return Err(Error::Argument("λ must be > 0".into()));
    }
    let shape = b.shape();
    if mask.shape() != shape {
        return Err(Error::Dimension("mask and data differ in shape".into()));
    }
    let row1 = ConstraintRow::new(
        BlockOperatorFamily::new(vec![
            BlockOperator::zero(shape, vec![shape]),
            BlockOperator::single(shape, LinearMap::ScaledIdentity(T::one()))?,
            BlockOperator::single(shape, LinearMap::mask(cast(mask))?)?,
        ])?,
        BlockVector::new(vec![cast(b)])?,
    )?;
    let row2 = ConstraintRow::new(
        BlockOperatorFamily::new(vec![
            BlockOperator::single(shape, LinearMap::ScaledIdentity(T::one()))?,
            BlockOperator::zero(shape, vec![shape]),
            BlockOperator::single(shape, LinearMap::Negation)?,
        ])?,
        BlockVector::zeros(&[shape]),
    )?;
    let spec = ProblemSpec::new(
        "nmc",
        vec![ProxFunction::nuclear(T::one()), ProxFunction::sq(T::lit(lambda)), ProxFunction::nonneg()],
        vec![row1, row2],
        None,
    )?;
    Ok(spec.with_block_names(&["X", "E", "Z"]).with_partition_hint(Partition::user(vec![0, 1], 3)?))
}
