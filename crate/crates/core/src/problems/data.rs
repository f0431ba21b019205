use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Recipe for the synthetic instances. Every draw is reproducible from `seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataGenSpec {
    pub seed: u64,
    /// Rows of the constraint matrix, or rows of the matrix to complete.
    pub d: usize,
    /// Number of blocks, or columns of the matrix to complete.
    pub n: usize,
    /// Columns `mᵢ` of each block.
    pub block_dims: Vec<usize>,
    /// Fraction of nonzero entries in the planted solution.
    pub nonzero_fraction: f64,
    pub noise_sigma: f64,
    pub rank: usize,
    pub observed_fraction: f64,
}

impl DataGenSpec {
    /// Sparse coding with `n` blocks of the given widths.
    pub fn sparse_coding(d: usize, block_dims: Vec<usize>, seed: u64) -> Self {
        DataGenSpec {
            seed,
            d,
            n: block_dims.len(),
            block_dims,
            nonzero_fraction: 0.1,
            noise_sigma: 0.0,
            rank: 0,
            observed_fraction: 1.0,
        }
    }

    /// `mᵢ = 10·i` for `i = 1..n`.
    pub fn sparse_coding_growing(d: usize, n: usize, seed: u64) -> Self {
        Self::sparse_coding(d, (1..=n).map(|i| 10 * i).collect(), seed)
    }

    /// `total` columns split into `n` blocks as evenly as possible.
    pub fn sparse_coding_uniform(d: usize, total: usize, n: usize, seed: u64) -> Self {
        let dims = (0..n).map(|i| total / n + usize::from(i < total % n)).collect();
        Self::sparse_coding(d, dims, seed)
    }

    /// A `rows × cols` rank-`rank` nonnegative matrix with 60% of entries observed.
    pub fn completion(rows: usize, cols: usize, rank: usize, seed: u64) -> Self {
        DataGenSpec {
            seed,
            d: rows,
            n: cols,
            block_dims: Vec::new(),
            nonzero_fraction: 1.0,
            noise_sigma: 0.1,
            rank,
            observed_fraction: 0.6,
        }
    }

    pub fn validate_sparse_coding(&self) -> Result<()> {
        if self.d == 0 || self.block_dims.is_empty() || self.block_dims.contains(&0) {
            return Err(Error::Argument("sparse coding needs d ≥ 1 and nonempty blocks".into()));
        }
        if self.block_dims.len() != self.n {
            return Err(Error::Argument(format!("n = {} but {} block widths", self.n, self.block_dims.len())));
        }
        if !(0.0..=1.0).contains(&self.nonzero_fraction) {
            return Err(Error::Argument("nonzero fraction must lie in [0, 1]".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Argument("noise sigma must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn validate_completion(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.rank == 0 {
            return Err(Error::Argument("completion needs positive size and rank".into()));
        }
        if !(self.observed_fraction > 0.0 && self.observed_fraction <= 1.0) {
            return Err(Error::Argument("observation fraction must lie in (0, 1]".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Argument("noise sigma must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// ChaCha8 seeded with `seed`, on stream `stream`; block `i` draws from stream `i`.
pub fn block_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Column-major fill so the draw order is fixed.
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_vec(rows, cols, data)
}

/// Sparse-coding instance: `y = Σᵢ Aᵢx★ᵢ (+ noise)`.
#[derive(Clone, Debug)]
pub struct SparseCodingData {
    pub a: Vec<DMatrix<f64>>,
    pub x_star: Vec<DMatrix<f64>>,
    pub noise: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl SparseCodingData {
    /// `Aᵢ` from stream `i`; the planted support and values from stream `n`, the noise
    /// from stream `n + 1`.
    pub fn generate(gen: &DataGenSpec) -> Result<Self> {
        gen.validate_sparse_coding()?;
        let n = gen.n;
        let a: Vec<DMatrix<f64>> = gen
            .block_dims
            .iter()
            .enumerate()
            .map(|(i, &m)| gaussian(&mut block_rng(gen.seed, i as u64), gen.d, m))
            .collect();
        let total: usize = gen.block_dims.iter().sum();
        let mut rng = block_rng(gen.seed, n as u64);
        let k = (gen.nonzero_fraction * total as f64).round() as usize;
        let mut picked = sample(&mut rng, total, k).into_vec();
        picked.sort_unstable();
        let mut flat = vec![0.0; total];
        for p in picked {
            flat[p] = StandardNormal.sample(&mut rng);
        }
        let mut x_star = Vec::with_capacity(n);
        let mut offset = 0;
        for &m in &gen.block_dims {
            x_star.push(DMatrix::from_column_slice(m, 1, &flat[offset..offset + m]));
            offset += m;
        }
        let mut y = DMatrix::zeros(gen.d, 1);
        for (ai, xi) in a.iter().zip(&x_star) {
            y += ai * xi;
        }
        let noise = if gen.noise_sigma > 0.0 {
            gaussian(&mut block_rng(gen.seed, n as u64 + 1), gen.d, 1) * gen.noise_sigma
        } else {
            DMatrix::zeros(gen.d, 1)
        };
        y += &noise;
        Ok(SparseCodingData { a, x_star, noise, y })
    }

    /// The same instance with its columns regrouped into `n` nearly equal consecutive blocks.
    pub fn split(&self, n: usize) -> Result<Self> {
        let a = concat_columns(&self.a);
        let x = concat_rows(&self.x_star);
        let total = a.ncols();
        if n == 0 || n > total {
            return Err(Error::Argument(format!("cannot split {total} columns into {n} blocks")));
        }
        let mut out_a = Vec::with_capacity(n);
        let mut out_x = Vec::with_capacity(n);
        let mut offset = 0;
        for i in 0..n {
            let m = total / n + usize::from(i < total % n);
            out_a.push(a.columns(offset, m).into_owned());
            out_x.push(x.rows(offset, m).into_owned());
            offset += m;
        }
        Ok(SparseCodingData { a: out_a, x_star: out_x, noise: self.noise.clone(), y: self.y.clone() })
    }
}

fn concat_columns(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, total);
    let mut offset = 0;
    for b in blocks {
        out.columns_mut(offset, b.ncols()).copy_from(b);
        offset += b.ncols();
    }
    out
}

fn concat_rows(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    concat_columns(&blocks.iter().map(|b| b.transpose()).collect::<Vec<_>>()).transpose()
}

/// Completion instance: the low-rank nonnegative matrix, its observation mask and the
/// noisy observed data `B = P_Ω(M + σN)`.
#[derive(Clone, Debug)]
pub struct LowRankData {
    pub m: DMatrix<f64>,
    pub mask: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LowRankData {
    pub fn generate(gen: &DataGenSpec) -> Result<Self> {
        gen.validate_completion()?;
        let (r, c) = (gen.d, gen.n);
        let u = gaussian(&mut block_rng(gen.seed, 0), r, gen.rank).abs();
        let v = gaussian(&mut block_rng(gen.seed, 1), c, gen.rank).abs();
        let m = &u * v.transpose();
        let mut rng = block_rng(gen.seed, 2);
        let k = ((gen.observed_fraction * (r * c) as f64).round() as usize).max(1);
        let mut mask = DMatrix::zeros(r, c);
        for p in sample(&mut rng, r * c, k) {
            mask[p] = 1.0;
        }
        let noise = gaussian(&mut block_rng(gen.seed, 3), r, c) * gen.noise_sigma;
        let b = (&m + noise).component_mul(&mask);
        Ok(LowRankData { m, mask, b })
    }
}

/// Columns drawn from `k` rotated `dim`-dimensional subspaces, a fraction of them corrupted.
#[derive(Clone, Debug)]
pub struct SubspaceData {
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub corrupted: Vec<usize>,
}

impl SubspaceData {
    /// `U₁` random orthonormal, `Uᵢ₊₁ = T Uᵢ` for a random rotation `T`, `Xᵢ = UᵢQᵢ + 0.1`;
    /// corrupted columns get Gaussian noise with standard deviation `0.2‖x‖`.
    pub fn generate(
        ambient: usize,
        k: usize,
        dim: usize,
        per_subspace: usize,
        corrupt_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || dim > ambient || k == 0 || per_subspace == 0 {
            return Err(Error::Argument("subspace sizes must satisfy 0 < dim ≤ ambient".into()));
        }
        let mut rng = block_rng(seed, 0);
        let u1 = gaussian(&mut rng, ambient, dim).qr().q();
        let t = gaussian(&mut rng, ambient, ambient).qr().q();
        let total = k * per_subspace;
        let mut x = DMatrix::zeros(ambient, total);
        let mut labels = Vec::with_capacity(total);
        let mut u = u1;
        for s in 0..k {
            let q = gaussian(&mut block_rng(seed, 1 + s as u64), dim, per_subspace);
            let xs = (&u * q).add_scalar(0.1);
            x.columns_mut(s * per_subspace, per_subspace).copy_from(&xs);
            labels.extend(std::iter::repeat_n(s, per_subspace));
            u = &t * u;
        }
        let mut rng = block_rng(seed, 1 + k as u64);
        let nc = (corrupt_fraction * total as f64).round() as usize;
        let mut corrupted = sample(&mut rng, total, nc).into_vec();
        corrupted.sort_unstable();
        for &j in &corrupted {
            let scale = 0.2 * x.column(j).norm();
            for i in 0..ambient {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[(i, j)] += scale * e;
            }
        }
        Ok(SubspaceData { x, labels, corrupted })
    }
}
