//! Problem specifications and builders for the benchmark problems with their
//! synthetic data generators.

mod builders;
mod data;

pub use builders::{
    build_latent_lrr, build_lrr, build_nonneg_matrix_completion, build_nonneg_sparse_coding,
    build_nonneg_sparse_coding_noisy, matrix_completion_from, sparse_coding_from, LatentLrrFormulation,
};
pub use data::{block_rng, DataGenSpec, LowRankData, SparseCodingData, SubspaceData};

use crate::blockspace::{residual, BlockOperatorFamily, BlockVector, RowGroups, Shape};
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::prox::{ProxFunction, ProxKind};
use crate::scalar::Scalar;
use crate::surrogates::{BlockSurrogate, QuadraticCoupling, SmoothTerm, SurrogateSpec};

/// One constraint row `Σᵢ Aᵢxᵢ = b` of a problem.
#[derive(Clone, Debug)]
pub struct ConstraintRow<T: Scalar> {
    pub family: BlockOperatorFamily<T>,
    pub rhs: BlockVector<T>,
}

impl<T: Scalar> ConstraintRow<T> {
    pub fn new(family: BlockOperatorFamily<T>, rhs: BlockVector<T>) -> Result<Self> {
        if rhs.dims() != family.segments() {
            return Err(Error::Dimension(format!(
                "rhs layout {:?} does not match row {:?}",
                rhs.dims(),
                family.segments()
            )));
        }
        Ok(ConstraintRow { family, rhs })
    }
}

/// `min Σᵢ gᵢ(xᵢ) + h(x)  s.t.  Σᵢ Aᵢxᵢ = b` with all constraint rows stacked.
#[derive(Clone, Debug)]
pub struct ProblemSpec<T: Scalar> {
    pub name: String,
    pub block_names: Vec<String>,
    pub terms: Vec<ProxFunction<T>>,
    pub smooth: Option<QuadraticCoupling<T>>,
    pub rows: Vec<ConstraintRow<T>>,
    /// Stacked family over all rows, with row groups declared per row (or detected for a
    /// single dense row).
    pub constraints: BlockOperatorFamily<T>,
    pub rhs: BlockVector<T>,
    pub recommended_surrogate: SurrogateSpec<T>,
    pub partition_hint: Option<Partition>,
    /// `key = value` pairs describing how the instance was produced.
    pub manifest: Vec<(String, String)>,
}

impl<T: Scalar> ProblemSpec<T> {
    pub fn new(
        name: &str,
        terms: Vec<ProxFunction<T>>,
        rows: Vec<ConstraintRow<T>>,
        smooth: Option<QuadraticCoupling<T>>,
    ) -> Result<Self> {
        let families: Vec<BlockOperatorFamily<T>> = rows.iter().map(|r| r.family.clone()).collect();
        let stacked = BlockOperatorFamily::stack(&families)?;
        let n = stacked.n_blocks();
        if terms.len() != n {
            return Err(Error::Dimension(format!("{} objective terms for {n} blocks", terms.len())));
        }
        if let Some(h) = &smooth {
            if h.family().n_blocks() != n || h.family().input_shapes() != stacked.input_shapes() {
                return Err(Error::Dimension("smooth term blocks differ from the constraint blocks".into()));
            }
        }
        for i in 0..n {
            let constrained = !stacked.operator(i).is_zero();
            let in_objective = terms[i].kind != ProxKind::Zero || smooth.as_ref().is_some_and(|h| h.involves(i));
            if !constrained && !in_objective {
                return Err(Error::Structure(format!("block {i} appears in no constraint and no objective term")));
            }
        }
        let constraints = if rows.len() > 1 {
            let mut groups = Vec::with_capacity(rows.len());
            let mut offset = 0;
            for r in &rows {
                let d = r.family.rhs_dim();
                groups.push((offset..offset + d).collect());
                offset += d;
            }
            let d = stacked.rhs_dim();
            stacked.with_row_groups(RowGroups::new(groups, d)?)?
        } else {
            match stacked.detect_row_groups() {
                Some(g) => stacked.with_row_groups(g)?,
                None => stacked,
            }
        };
        let rhs = BlockVector::new(rows.iter().flat_map(|r| r.rhs.blocks().iter().cloned()).collect())?;
        let recommended_surrogate =
            match &smooth {
                None => SurrogateSpec::exact(n),
                Some(h) => {
                    let l = h.smoothness();
                    SurrogateSpec {
                        blocks: (0..n)
                            .map(|i| {
                                if h.involves(i) {
                                    BlockSurrogate::ProximalGradient(l[i])
                                } else {
                                    BlockSurrogate::Exact
                                }
                            })
                            .collect(),
                    }
                }
            };
        Ok(ProblemSpec {
            name: name.to_string(),
            block_names: (0..n).map(|i| format!("x{}", i + 1)).collect(),
            terms,
            smooth,
            rows,
            constraints,
            rhs,
            recommended_surrogate,
            partition_hint: None,
            manifest: Vec::new(),
        })
    }

    pub fn with_block_names(mut self, names: &[&str]) -> Self {
        assert_eq!(names.len(), self.n_blocks(), "one name per block");
        self.block_names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_partition_hint(mut self, p: Partition) -> Self {
        self.partition_hint = Some(p);
        self
    }

    pub fn with_manifest(mut self, entries: Vec<(String, String)>) -> Self {
        self.manifest = entries;
        self
    }

    pub fn n_blocks(&self) -> usize {
        self.terms.len()
    }

    pub fn block_shapes(&self) -> Vec<Shape> {
        self.constraints.input_shapes()
    }

    pub fn zeros(&self) -> BlockVector<T> {
        BlockVector::zeros(&self.block_shapes())
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.block_names.iter().position(|b| b == name)
    }

    /// `f(x) = Σᵢ gᵢ(xᵢ) + h(x)`
    pub fn objective(&self, x: &BlockVector<T>) -> Result<T> {
        let mut f = T::zero();
        for (g, xi) in self.terms.iter().zip(x.blocks()) {
            f += g.evaluate(xi)?;
        }
        if let Some(h) = &self.smooth {
            f += h.value(x)?;
        }
        Ok(f)
    }

    /// `Ax − b` in the stacked constraint space.
    pub fn residual(&self, x: &BlockVector<T>) -> Result<BlockVector<T>> {
        residual(&self.constraints, x, &self.rhs)
    }

    pub fn rhs_norm(&self) -> T {
        self.rhs.norm()
    }

    /// `∇h(x)`, or `None` without a smooth term.
    pub fn smooth_gradient(&self, x: &BlockVector<T>) -> Result<Option<BlockVector<T>>> {
        self.smooth.as_ref().map(|h| h.gradient(x)).transpose()
    }

    /// Renders the manifest as `key = value` lines.
    pub fn manifest_text(&self) -> String {
        let mut s = format!("problem = {}\n", self.name);
        for (k, v) in &self.manifest {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
