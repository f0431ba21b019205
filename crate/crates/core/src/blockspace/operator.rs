use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BlockVector, Shape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tag describing how a block operator acts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    DenseMatrix,
    IdentityScaled,
    LeftMultiply,
    RightMultiply,
    MaskProjection,
    Negation,
    Zero,
    /// Acts on more than one constraint row.
    Stacked,
}

/// One elementary linear map from a block into one constraint row segment.
#[derive(Clone, Debug)]
pub enum LinearMap<T: Scalar> {
    /// `v ↦ M v` for a vector block.
    Dense(DMatrix<T>),
    /// `v ↦ c v`
    ScaledIdentity(T),
    /// `Z ↦ M Z`
    LeftMultiply(DMatrix<T>),
    /// `L ↦ L M`
    RightMultiply(DMatrix<T>),
    /// Entrywise product with a 0/1 mask.
    Mask(DMatrix<T>),
    /// `v ↦ −v`
    Negation,
}

/// Certificates from exact spectral computations are inflated by this many ulps
/// so that rounding in `‖Av‖²` can never exceed them.
fn inflate<T: Scalar>(v: T) -> T {
    v * (T::one() + T::lit(1e3) * T::eps())
}

/// Largest eigenvalue of `MᵀM` via the smaller of the two grams.
pub(crate) fn spectral_norm_sq<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let g = if m.nrows() <= m.ncols() { m * m.transpose() } else { m.tr_mul(m) };
    let eig = SymmetricEigen::new(g);
    eig.eigenvalues.iter().fold(T::zero(), |acc, &v| acc.max(v))
}

impl<T: Scalar> LinearMap<T> {
    /// Builds a mask map, checking that every entry is 0 or 1.
    pub fn mask(m: DMatrix<T>) -> Result<Self> {
        if m.iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::Argument("mask entries must be 0 or 1".into()));
        }
        Ok(LinearMap::Mask(m))
    }

    pub fn kind(&self) -> OperatorKind {
        match self {
            LinearMap::Dense(_) => OperatorKind::DenseMatrix,
            LinearMap::ScaledIdentity(_) => OperatorKind::IdentityScaled,
            LinearMap::LeftMultiply(_) => OperatorKind::LeftMultiply,
            LinearMap::RightMultiply(_) => OperatorKind::RightMultiply,
            LinearMap::Mask(_) => OperatorKind::MaskProjection,
            LinearMap::Negation => OperatorKind::Negation,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = || Error::Dimension(format!("{:?} map cannot act on a {input:?} block", self.kind()));
        match self {
            LinearMap::Dense(m) => {
                if input.1 != 1 || m.ncols() != input.0 {
                    return Err(bad());
                }
                Ok((m.nrows(), 1))
            }
            LinearMap::LeftMultiply(m) => {
                if m.ncols() != input.0 {
                    return Err(bad());
                }
                Ok((m.nrows(), input.1))
            }
            LinearMap::RightMultiply(m) => {
                if m.nrows() != input.1 {
                    return Err(bad());
                }
                Ok((input.0, m.ncols()))
            }
            LinearMap::Mask(m) => {
                if m.shape() != input {
                    return Err(bad());
                }
                Ok(input)
            }
            LinearMap::ScaledIdentity(_) | LinearMap::Negation => Ok(input),
        }
    }

    /// `out += alpha · map(v)`
    pub fn apply_add(&self, v: &DMatrix<T>, out: &mut DMatrix<T>, alpha: T) {
        match self {
            LinearMap::Dense(m) | LinearMap::LeftMultiply(m) => out.gemm(alpha, m, v, T::one()),
            LinearMap::RightMultiply(m) => out.gemm(alpha, v, m, T::one()),
            LinearMap::ScaledIdentity(c) => {
                let a = alpha * *c;
                out.zip_apply(v, |o, x| *o += a * x)
            }
            LinearMap::Mask(m) => out.zip_zip_apply(v, m, |o, x, w| *o += alpha * w * x),
            LinearMap::Negation => out.zip_apply(v, |o, x| *o -= alpha * x),
        }
    }

    /// `out += alpha · map*(y)`
    pub fn adjoint_add(&self, y: &DMatrix<T>, out: &mut DMatrix<T>, alpha: T) {
        match self {
            LinearMap::Dense(m) | LinearMap::LeftMultiply(m) => out.gemm_tr(alpha, m, y, T::one()),
            LinearMap::RightMultiply(m) => out.gemm(alpha, y, &m.transpose(), T::one()),
            LinearMap::ScaledIdentity(c) => {
                let a = alpha * *c;
                out.zip_apply(y, |o, x| *o += a * x)
            }
            LinearMap::Mask(m) => out.zip_zip_apply(y, m, |o, x, w| *o += alpha * w * x),
            LinearMap::Negation => out.zip_apply(y, |o, x| *o -= alpha * x),
        }
    }

    pub fn norm_sq(&self) -> T {
        match self {
            LinearMap::Dense(m) | LinearMap::LeftMultiply(m) | LinearMap::RightMultiply(m) => {
                inflate(spectral_norm_sq(m))
            }
            LinearMap::ScaledIdentity(c) => inflate(*c * *c),
            LinearMap::Mask(m) => {
                if m.iter().any(|&v| v != T::zero()) {
                    T::one()
                } else {
                    T::zero()
                }
            }
            LinearMap::Negation => T::one(),
        }
    }

    /// trace of `map* ∘ map` on blocks of the given shape.
    fn trace_gram(&self, input: Shape) -> T {
        let size = T::from_count(input.0 * input.1);
        match self {
            LinearMap::Dense(m) | LinearMap::LeftMultiply(m) => m.norm_squared() * T::from_count(input.1),
            LinearMap::RightMultiply(m) => m.norm_squared() * T::from_count(input.0),
            LinearMap::ScaledIdentity(c) => *c * *c * size,
            LinearMap::Mask(m) => m.sum(),
            LinearMap::Negation => size,
        }
    }

    fn gram(&self) -> Gram<T> {
        match self {
            LinearMap::Dense(m) | LinearMap::LeftMultiply(m) => Gram::Left(m.tr_mul(m)),
            LinearMap::RightMultiply(m) => Gram::Right(m * m.transpose()),
            LinearMap::ScaledIdentity(c) => Gram::Scalar(*c * *c),
            LinearMap::Mask(m) => Gram::Diagonal(m.clone()),
            LinearMap::Negation => Gram::Scalar(T::one()),
        }
    }

    fn gram_class(&self) -> GramClass {
        match self {
            LinearMap::Dense(_) | LinearMap::LeftMultiply(_) => GramClass::Left,
            LinearMap::RightMultiply(_) => GramClass::Right,
            LinearMap::ScaledIdentity(_) | LinearMap::Negation => GramClass::Scalar,
            LinearMap::Mask(_) => GramClass::Diagonal,
        }
    }
}

/// Structured representation of a block's gram `AᵢᵀAᵢ` (or of a curvature built from it).
#[derive(Clone, Debug, PartialEq)]
pub enum Gram<T: Scalar> {
    /// `c·I`
    Scalar(T),
    /// Entrywise weights with the block's shape.
    Diagonal(DMatrix<T>),
    /// `V ↦ P V`
    Left(DMatrix<T>),
    /// `V ↦ V P`
    Right(DMatrix<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum GramClass {
    Scalar,
    Diagonal,
    Left,
    Right,
}

impl GramClass {
    fn join(self, other: GramClass) -> Option<GramClass> {
        use GramClass::*;
        match (self, other) {
            (Scalar, x) | (x, Scalar) => Some(x),
            (a, b) if a == b => Some(a),
            _ => None,
        }
    }
}

impl<T: Scalar> Gram<T> {
    pub fn add(self, other: Gram<T>) -> Option<Gram<T>> {
        use Gram::*;
        Some(match (self, other) {
            (Scalar(a), Scalar(b)) => Scalar(a + b),
            (Scalar(c), g) | (g, Scalar(c)) => g.add_scalar(c),
            (Diagonal(a), Diagonal(b)) => Diagonal(a + b),
            (Left(a), Left(b)) => Left(a + b),
            (Right(a), Right(b)) => Right(a + b),
            _ => return None,
        })
    }

    pub fn add_scalar(self, c: T) -> Gram<T> {
        match self {
            Gram::Scalar(a) => Gram::Scalar(a + c),
            Gram::Diagonal(d) => Gram::Diagonal(d.add_scalar(c)),
            Gram::Left(p) => {
                let n = p.nrows();
                Gram::Left(p + DMatrix::identity(n, n) * c)
            }
            Gram::Right(p) => {
                let n = p.nrows();
                Gram::Right(p + DMatrix::identity(n, n) * c)
            }
        }
    }

    pub fn scale(self, c: T) -> Gram<T> {
        match self {
            Gram::Scalar(a) => Gram::Scalar(a * c),
            Gram::Diagonal(d) => Gram::Diagonal(d * c),
            Gram::Left(p) => Gram::Left(p * c),
            Gram::Right(p) => Gram::Right(p * c),
        }
    }

    pub fn apply(&self, v: &DMatrix<T>) -> DMatrix<T> {
        match self {
            Gram::Scalar(c) => v * *c,
            Gram::Diagonal(d) => d.component_mul(v),
            Gram::Left(p) => p * v,
            Gram::Right(p) => v * p,
        }
    }

    /// `⟨v, K v⟩`
    pub fn quad(&self, v: &DMatrix<T>) -> T {
        match self {
            Gram::Scalar(c) => *c * v.norm_squared(),
            _ => v.dot(&self.apply(v)),
        }
    }
}

/// Linear map from one block into the (possibly stacked) constraint space.
#[derive(Clone, Debug)]
pub struct BlockOperator<T: Scalar> {
    input: Shape,
    segments: Vec<Shape>,
    terms: Vec<(usize, LinearMap<T>)>,
    norm_sq: T,
}

impl<T: Scalar> BlockOperator<T> {
    /// Operator acting on the listed constraint segments; untouched segments receive zero.
    pub fn new(input: Shape, segments: Vec<Shape>, terms: Vec<(usize, LinearMap<T>)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Dimension("constraint space has no rows".into()));
        }
        for (k, (seg, map)) in terms.iter().enumerate() {
            let Some(&shape) = segments.get(*seg) else {
                return Err(Error::Dimension(format!("segment {seg} out of range")));
            };
            let out = map.output_shape(input)?;
            if out != shape {
                return Err(Error::Dimension(format!("map into segment {seg} produces {out:?}, segment is {shape:?}")));
            }
            if terms[..k].iter().any(|(s, _)| s == seg) {
                return Err(Error::Structure(format!("two maps into segment {seg}")));
            }
        }
        let norm_sq = terms.iter().fold(T::zero(), |acc, (_, m)| acc + m.norm_sq());
        Ok(BlockOperator { input, segments, terms, norm_sq })
    }

    /// Operator into a single-row constraint space shaped by the map's output.
    pub fn single(input: Shape, map: LinearMap<T>) -> Result<Self> {
        let out = map.output_shape(input)?;
        Self::new(input, vec![out], vec![(0, map)])
    }

    /// Dense matrix acting on a column-vector block.
    pub fn dense(m: DMatrix<T>) -> Self {
        let input = (m.ncols(), 1);
        Self::single(input, LinearMap::Dense(m)).expect("dense operator shape")
    }

    pub fn zero(input: Shape, segments: Vec<Shape>) -> Self {
        Self::new(input, segments, Vec::new()).expect("zero operator")
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn segments(&self) -> &[Shape] {
        &self.segments
    }

    pub fn terms(&self) -> &[(usize, LinearMap<T>)] {
        &self.terms
    }

    pub fn op_norm_sq(&self) -> T {
        self.norm_sq
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn kind(&self) -> OperatorKind {
        match self.terms.as_slice() {
            [] => OperatorKind::Zero,
            [(_, m)] => m.kind(),
            _ => OperatorKind::Stacked,
        }
    }

    pub fn touches(&self, segment: usize) -> bool {
        self.terms.iter().any(|(s, _)| *s == segment)
    }

    fn check_input(&self, v: &DMatrix<T>) -> Result<()> {
        if v.shape() != self.input {
            return Err(Error::Dimension(format!("operator expects a {:?} block, got {:?}", self.input, v.shape())));
        }
        Ok(())
    }

    fn check_output(&self, y: &BlockVector<T>) -> Result<()> {
        if y.dims() != self.segments {
            return Err(Error::Dimension(format!(
                "constraint layout {:?} expected, got {:?}",
                self.segments,
                y.dims()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, v: &DMatrix<T>) -> Result<BlockVector<T>> {
        let mut out = BlockVector::zeros(&self.segments);
        self.apply_add(v, &mut out, T::one())?;
        Ok(out)
    }

    /// `out += alpha · A v`
    pub fn apply_add(&self, v: &DMatrix<T>, out: &mut BlockVector<T>, alpha: T) -> Result<()> {
        self.check_input(v)?;
        self.check_output(out)?;
        for (seg, map) in &self.terms {
            map.apply_add(v, out.block_mut(*seg), alpha);
        }
        Ok(())
    }

    pub fn adjoint(&self, y: &BlockVector<T>) -> Result<DMatrix<T>> {
        self.check_output(y)?;
        let mut out = DMatrix::zeros(self.input.0, self.input.1);
        for (seg, map) in &self.terms {
            map.adjoint_add(y.block(*seg), &mut out, T::one());
        }
        Ok(out)
    }

    /// Structured `AᵀA`, or `None` when the terms mix incompatible structures.
    pub fn gram(&self) -> Option<Gram<T>> {
        match self.gram_class()? {
            None => Some(Gram::Scalar(T::zero())),
            Some(_) => {
                let mut acc: Option<Gram<T>> = None;
                for (_, m) in &self.terms {
                    let g = m.gram();
                    acc = Some(match acc {
                        None => g,
                        Some(a) => a.add(g)?,
                    });
                }
                acc
            }
        }
    }

    /// Structure class of `AᵀA` without materializing it: `Some(None)` for the zero operator.
    pub(crate) fn gram_class(&self) -> Option<Option<GramClass>> {
        let mut acc: Option<GramClass> = None;
        for (_, m) in &self.terms {
            let c = m.gram_class();
            acc = Some(match acc {
                None => c,
                Some(a) => a.join(c)?,
            });
        }
        Some(acc)
    }

    /// trace(AᵀA), i.e. the squared Frobenius norm.
    pub fn trace_gram(&self) -> T {
        self.terms.iter().fold(T::zero(), |acc, (_, m)| acc + m.trace_gram(self.input))
    }

    /// Materializes the operator as a matrix acting on column-major vectorized blocks.
    pub fn to_dense(&self) -> DMatrix<T> {
        let p = self.input.0 * self.input.1;
        let d: usize = self.segments.iter().map(|(r, c)| r * c).sum();
        let mut out = DMatrix::zeros(d, p);
        let mut e = DMatrix::zeros(self.input.0, self.input.1);
        for k in 0..p {
            e[k] = T::one();
            let col = self.apply(&e).expect("shape checked").to_flat();
            out.column_mut(k).copy_from_slice(&col);
            e[k] = T::zero();
        }
        out
    }
}

/// Partition of the flattened constraint rows into groups, used for the
/// structure-aware coupling constants.
#[derive(Clone, Debug, PartialEq)]
pub struct RowGroups {
    groups: Vec<Vec<usize>>,
}

impl RowGroups {
    pub fn new(groups: Vec<Vec<usize>>, rhs_dim: usize) -> Result<Self> {
        let mut seen = vec![false; rhs_dim];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::Structure("empty row group".into()));
            }
            for &r in g {
                if r >= rhs_dim {
                    return Err(Error::Structure(format!("row {r} outside constraint space")));
                }
                if std::mem::replace(&mut seen[r], true) {
                    return Err(Error::Structure(format!("row {r} in two groups")));
                }
            }
        }
        if let Some(r) = seen.iter().position(|s| !s) {
            return Err(Error::Structure(format!("row {r} not covered by any group")));
        }
        Ok(RowGroups { groups })
    }

    /// One group per constraint row segment.
    pub fn by_segment(segments: &[Shape]) -> Self {
        let mut offset = 0;
        let mut groups = Vec::new();
        for &(r, c) in segments {
            groups.push((offset..offset + r * c).collect());
            offset += r * c;
        }
        RowGroups { groups }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

/// The constraint map `A = [A₁, …, Aₙ]`.
#[derive(Clone, Debug)]
pub struct BlockOperatorFamily<T: Scalar> {
    operators: Vec<BlockOperator<T>>,
    segments: Vec<Shape>,
    row_groups: Option<RowGroups>,
}

impl<T: Scalar> BlockOperatorFamily<T> {
    pub fn new(operators: Vec<BlockOperator<T>>) -> Result<Self> {
        let Some(first) = operators.first() else {
            return Err(Error::Dimension("family needs at least one operator".into()));
        };
        let segments = first.segments.clone();
        if operators.iter().any(|op| op.segments != segments) {
            return Err(Error::Dimension("operators map into different constraint spaces".into()));
        }
        Ok(BlockOperatorFamily { operators, segments, row_groups: None })
    }

    /// Family of dense matrices acting on vector blocks.
    pub fn dense(mats: Vec<DMatrix<T>>) -> Result<Self> {
        Self::new(mats.into_iter().map(BlockOperator::dense).collect())
    }

    pub fn with_row_groups(mut self, groups: RowGroups) -> Result<Self> {
        let g = RowGroups::new(groups.groups, self.rhs_dim())?;
        self.row_groups = Some(g);
        Ok(self)
    }

    /// Stacks per-row families (same blocks, one constraint row each) into one constraint space.
    pub fn stack(rows: &[BlockOperatorFamily<T>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Dimension("no constraint rows".into()));
        };
        let n = first.n_blocks();
        if rows.iter().any(|r| r.n_blocks() != n) {
            return Err(Error::Dimension("constraint rows disagree on the block count".into()));
        }
        let segments: Vec<Shape> = rows.iter().flat_map(|r| r.segments.iter().copied()).collect();
        let mut ops = Vec::with_capacity(n);
        for i in 0..n {
            let input = first.operators[i].input;
            let mut terms = Vec::new();
            let mut offset = 0;
            for r in rows {
                if r.operators[i].input != input {
                    return Err(Error::Dimension(format!("block {i} shape differs between rows")));
                }
                for (s, m) in &r.operators[i].terms {
                    terms.push((s + offset, m.clone()));
                }
                offset += r.segments.len();
            }
            ops.push(BlockOperator::new(input, segments.clone(), terms)?);
        }
        Self::new(ops)
    }

    pub fn n_blocks(&self) -> usize {
        self.operators.len()
    }

    pub fn operator(&self, i: usize) -> &BlockOperator<T> {
        &self.operators[i]
    }

    pub fn operators(&self) -> &[BlockOperator<T>] {
        &self.operators
    }

    pub fn segments(&self) -> &[Shape] {
        &self.segments
    }

    pub fn rhs_dim(&self) -> usize {
        self.segments.iter().map(|(r, c)| r * c).sum()
    }

    pub fn row_groups(&self) -> Option<&RowGroups> {
        self.row_groups.as_ref()
    }

    pub fn input_shapes(&self) -> Vec<Shape> {
        self.operators.iter().map(|op| op.input).collect()
    }

    pub fn norms_sq(&self) -> Vec<T> {
        self.operators.iter().map(|op| op.norm_sq).collect()
    }

    pub fn zero_rhs(&self) -> BlockVector<T> {
        BlockVector::zeros(&self.segments)
    }

    fn check_blocks(&self, x: &BlockVector<T>) -> Result<()> {
        if x.n_blocks() != self.n_blocks() {
            return Err(Error::Dimension(format!(
                "family has {} blocks, vector has {}",
                self.n_blocks(),
                x.n_blocks()
            )));
        }
        Ok(())
    }

    /// `Σᵢ Aᵢ xᵢ`
    pub fn apply(&self, x: &BlockVector<T>) -> Result<BlockVector<T>> {
        self.check_blocks(x)?;
        let mut out = self.zero_rhs();
        for (op, xi) in self.operators.iter().zip(x.blocks()) {
            op.apply_add(xi, &mut out, T::one())?;
        }
        Ok(out)
    }

    /// `Σ_{i∈subset} Aᵢ xᵢ`
    pub fn apply_subset(&self, x: &BlockVector<T>, subset: &[usize]) -> Result<BlockVector<T>> {
        self.check_blocks(x)?;
        let mut out = self.zero_rhs();
        for &i in subset {
            self.operators[i].apply_add(x.block(i), &mut out, T::one())?;
        }
        Ok(out)
    }

    /// `Aᵀ y` as a block vector.
    pub fn adjoint(&self, y: &BlockVector<T>) -> Result<BlockVector<T>> {
        BlockVector::new(self.operators.iter().map(|op| op.adjoint(y)).collect::<Result<Vec<_>>>()?)
    }

    /// Restriction to the listed blocks; row groups are kept.
    pub fn subfamily(&self, subset: &[usize]) -> Result<Self> {
        let mut f = Self::new(subset.iter().map(|&i| self.operators[i].clone()).collect())?;
        f.row_groups = self.row_groups.clone();
        Ok(f)
    }

    /// Row-support scan for single-row dense families: rows are grouped when one block
    /// has nonzeros in both. Returns `None` for other families or a single resulting group.
    pub fn detect_row_groups(&self) -> Option<RowGroups> {
        let d = self.rhs_dim();
        let mats: Vec<&DMatrix<T>> = self
            .operators
            .iter()
            .map(|op| match op.terms.as_slice() {
                [(0, LinearMap::Dense(m))] if op.segments.len() == 1 => Some(m),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        let mut parent: Vec<usize> = (0..d).collect();
        fn find(p: &mut [usize], mut a: usize) -> usize {
            while p[a] != a {
                p[a] = p[p[a]];
                a = p[a];
            }
            a
        }
        for m in mats {
            let rows: Vec<usize> = (0..d).filter(|&r| m.row(r).iter().any(|&v| v != T::zero())).collect();
            for w in rows.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                parent[a] = b;
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_index = vec![usize::MAX; d];
        for r in 0..d {
            let root = find(&mut parent, r);
            if root_index[root] == usize::MAX {
                root_index[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[root_index[root]].push(r);
        }
        if groups.len() <= 1 {
            return None;
        }
        RowGroups::new(groups, d).ok()
    }

    /// `‖A_{g,i}‖²` for every block `i` and group `g` of the given grouping.
    pub fn group_norms_sq(&self, groups: &RowGroups) -> Vec<Vec<T>> {
        let ranges: Vec<(usize, usize)> = {
            let mut offset = 0;
            self.segments
                .iter()
                .map(|&(r, c)| {
                    let s = (offset, offset + r * c);
                    offset += r * c;
                    s
                })
                .collect()
        };
        self.operators
            .iter()
            .map(|op| {
                groups
                    .groups()
                    .iter()
                    .map(|g| {
                        let seg = ranges.iter().position(|&(a, b)| {
                            g.len() == b - a && g.first() == Some(&a) && g.windows(2).all(|w| w[1] == w[0] + 1)
                        });
                        match seg {
                            Some(s) => op
                                .terms
                                .iter()
                                .filter(|(t, _)| *t == s)
                                .fold(T::zero(), |acc, (_, m)| acc + m.norm_sq()),
                            None => restricted_norm_sq(op, g),
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Norm of `P_g A` for a set of flattened rows, certified by power iteration.
fn restricted_norm_sq<T: Scalar>(op: &BlockOperator<T>, rows: &[usize]) -> T {
    if op.is_zero() {
        return T::zero();
    }
    let d: usize = op.segments.iter().map(|(r, c)| r * c).sum();
    if d * op.input.0 * op.input.1 <= 1_000_000 {
        let dense = op.to_dense();
        let sub = DMatrix::from_fn(rows.len(), dense.ncols(), |i, j| dense[(rows[i], j)]);
        return inflate(spectral_norm_sq(&sub));
    }
    let mut keep = vec![false; d];
    for &r in rows {
        keep[r] = true;
    }
    let segments = op.segments.clone();
    let gram = |v: &DMatrix<T>| {
        let y = op.apply(v).expect("shape");
        let mut flat = y.to_flat();
        for (k, val) in flat.iter_mut().enumerate() {
            if !keep[k] {
                *val = T::zero();
            }
        }
        let y = BlockVector::from_flat(&segments, &flat).expect("layout");
        op.adjoint(&y).expect("shape")
    };
    let (lambda, converged) = power_iteration(gram, op.input, T::lit(1e-6), 500);
    if !converged {
        return op.trace_gram();
    }
    if lambda == T::zero() {
        return T::zero();
    }
    lambda / (T::one() - T::lit(1e-6))
}

/// Result of [`estimate_op_norm_sq`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimate<T> {
    pub value: T,
    /// `false` when power iteration stalled and the trace bound was returned instead.
    pub converged: bool,
}

/// Rayleigh-quotient power iteration on a PSD map; returns (estimate, converged).
pub(crate) fn power_iteration<T: Scalar>(
    gram: impl Fn(&DMatrix<T>) -> DMatrix<T>,
    shape: Shape,
    tol: T,
    max_iter: usize,
) -> (T, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0fa1);
    let mut v = DMatrix::from_fn(shape.0, shape.1, |_, _| T::lit(rng.gen::<f64>() + 0.5));
    let nv = v.norm();
    if nv == T::zero() {
        return (T::zero(), true);
    }
    v /= nv;
    let mut prev = T::zero();
    for _ in 0..max_iter {
        let w = gram(&v);
        let lambda = v.dot(&w);
        let nw = w.norm();
        if nw == T::zero() {
            return (T::zero(), true);
        }
        if (lambda - prev).abs() <= tol * lambda {
            return (lambda.max(prev), true);
        }
        prev = lambda;
        v = w / nw;
    }
    (prev, false)
}

/// Power-iteration certificate for `‖A‖₂²`, inflated by `1/(1 − tol)`.
pub fn estimate_op_norm_sq<T: Scalar>(op: &BlockOperator<T>, tol: T, max_iter: usize) -> Result<NormEstimate<T>> {
    if tol <= T::zero() || tol >= T::one() {
        return Err(Error::InvalidParameter("tol must lie in (0, 1)".into()));
    }
    if op.is_zero() {
        return Ok(NormEstimate { value: T::zero(), converged: true });
    }
    let gram = |v: &DMatrix<T>| {
        let y = op.apply(v).expect("shape");
        op.adjoint(&y).expect("shape")
    };
    let (lambda, converged) = power_iteration(gram, op.input, tol, max_iter);
    if !converged {
        return Ok(NormEstimate { value: op.trace_gram(), converged: false });
    }
    Ok(NormEstimate { value: lambda / (T::one() - tol), converged: true })
}

/// `‖A_S‖₂²` of the concatenated operator over `subset`: exact for small dense families,
/// otherwise a power-iteration certificate.
pub(crate) fn estimate_subset_norm_sq<T: Scalar>(
    family: &BlockOperatorFamily<T>,
    subset: &[usize],
    tol: T,
    max_iter: usize,
) -> T {
    let dense: Option<Vec<&DMatrix<T>>> = subset
        .iter()
        .map(|&i| match family.operators[i].terms.as_slice() {
            [(0, LinearMap::Dense(m))] if family.segments.len() == 1 => Some(m),
            _ => None,
        })
        .collect();
    if let Some(mats) = dense {
        let d = family.rhs_dim();
        if d <= 2000 {
            let mut g = DMatrix::zeros(d, d);
            for m in mats {
                g.gemm(T::one(), m, &m.transpose(), T::one());
            }
            let eig = SymmetricEigen::new(g);
            return inflate(eig.eigenvalues.iter().fold(T::zero(), |acc, &v| acc.max(v)));
        }
    }
    let shapes: Vec<Shape> = subset.iter().map(|&i| family.operators[i].input).collect();
    let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let gram = |v: &DMatrix<T>| {
        let x = BlockVector::from_flat(&shapes, v.as_slice()).expect("layout");
        let mut y = family.zero_rhs();
        for (k, &i) in subset.iter().enumerate() {
            family.operators[i].apply_add(x.block(k), &mut y, T::one()).expect("shape");
        }
        let back: Vec<T> =
            subset.iter().flat_map(|&i| family.operators[i].adjoint(&y).expect("shape").as_slice().to_vec()).collect();
        DMatrix::from_vec(total, 1, back)
    };
    let (lambda, converged) = power_iteration(gram, (total, 1), tol, max_iter);
    if !converged {
        return subset.iter().fold(T::zero(), |acc, &i| acc + family.operators[i].trace_gram());
    }
    lambda / (T::one() - tol)
}

/// `Σᵢ Aᵢxᵢ − b`
pub fn residual<T: Scalar>(
    a: &BlockOperatorFamily<T>,
    x: &BlockVector<T>,
    b: &BlockVector<T>,
) -> Result<BlockVector<T>> {
    if b.dims() != a.segments {
        return Err(Error::Dimension(format!(
            "right-hand side layout {:?} does not match constraint space {:?}",
            b.dims(),
            a.segments
        )));
    }
    let mut r = a.apply(x)?;
    r.axpy(-T::one(), b)?;
    Ok(r)
}

/// Whether `AᵢᵀAⱼ` vanishes relative to `tol·‖Aᵢ‖‖Aⱼ‖`.
pub fn gram_cross_is_zero<T: Scalar>(op_i: &BlockOperator<T>, op_j: &BlockOperator<T>, tol: T) -> bool {
    assert_eq!(op_i.segments, op_j.segments, "operators must share the constraint space");
    let shared: Vec<usize> = op_i.terms.iter().map(|(s, _)| *s).filter(|&s| op_j.touches(s)).collect();
    if shared.is_empty() {
        return true;
    }
    fn term<T: Scalar>(op: &BlockOperator<T>, s: usize) -> &LinearMap<T> {
        op.terms.iter().find(|(t, _)| *t == s).map(|(_, m)| m).expect("shared segment")
    }
    let all_masks_disjoint = shared.iter().all(|&s| match (term(op_i, s), term(op_j, s)) {
        (LinearMap::Mask(a), LinearMap::Mask(b)) => a.component_mul(b).iter().all(|&v| v == T::zero()),
        _ => false,
    });
    if all_masks_disjoint {
        return true;
    }
    let threshold = tol * (op_i.norm_sq * op_j.norm_sq).sqrt();
    let cross = |v: &DMatrix<T>| -> DMatrix<T> {
        let mut y = BlockVector::zeros(&op_i.segments);
        for &s in &shared {
            term(op_j, s).apply_add(v, y.block_mut(s), T::one());
        }
        let mut out = DMatrix::zeros(op_i.input.0, op_i.input.1);
        for &s in &shared {
            term(op_i, s).adjoint_add(y.block(s), &mut out, T::one());
        }
        out
    };
    // A random probe rejects the common non-orthogonal case cheaply.
    let mut rng = ChaCha8Rng::seed_from_u64(0x0c7055);
    let (pr, pc) = op_j.input;
    let probe = DMatrix::from_fn(pr, pc, |_, _| T::lit(rng.gen::<f64>() * 2.0 - 1.0));
    let pn = probe.norm();
    if pn > T::zero() && cross(&probe).norm() > threshold * pn {
        return false;
    }
    let mut frob = T::zero();
    let mut e = DMatrix::zeros(pr, pc);
    for k in 0..pr * pc {
        e[k] = T::one();
        frob += cross(&e).norm_squared();
        e[k] = T::zero();
    }
    frob.sqrt() <= threshold
}
