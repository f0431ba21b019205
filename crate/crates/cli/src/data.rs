use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mmadmm::blockspace::{read_csv_matrix, read_matrix_market, write_csv_matrix, write_matrix_market};
use mmadmm::problems::{
    build_latent_lrr, matrix_completion_from, sparse_coding_from, DataGenSpec, LatentLrrFormulation, LowRankData,
    ProblemSpec, SparseCodingData, SubspaceData,
};
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Nnsc,
    NnscNoisy,
    Nmc,
    LatentLrr,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Nnsc => "nnsc",
            ProblemKind::NnscNoisy => "nnsc-noisy",
            ProblemKind::Nmc => "nmc",
            ProblemKind::LatentLrr => "latent-lrr",
        }
    }

    fn default_lambda(self) -> f64 {
        match self {
            ProblemKind::Nnsc | ProblemKind::NnscNoisy => 1.0,
            ProblemKind::Nmc => 10.0,
            ProblemKind::LatentLrr => 0.1,
        }
    }
}

impl FromStr for ProblemKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        [ProblemKind::Nnsc, ProblemKind::NnscNoisy, ProblemKind::Nmc, ProblemKind::LatentLrr]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown problem '{s}'")))
    }
}

/// Everything `generate` needs; fields that do not apply to a problem are ignored.
#[derive(Clone, Debug)]
pub struct GenerateSpec {
    pub problem: ProblemKind,
    pub seed: u64,
    /// Rows of `A` (sparse coding), rows of the matrix (completion) or ambient dimension.
    pub d: usize,
    /// Blocks (sparse coding) or columns (completion).
    pub n: usize,
    /// Total columns split evenly over the blocks instead of `mᵢ = 10·i`.
    pub uniform_total: Option<usize>,
    pub nonzero_fraction: f64,
    pub noise_sigma: Option<f64>,
    pub rank: usize,
    pub observed_fraction: f64,
    pub lambda: Option<f64>,
    pub subspaces: usize,
    pub subspace_dim: usize,
    pub per_subspace: usize,
    pub corrupt_fraction: f64,
    pub formulation: LatentLrrFormulation,
}

impl GenerateSpec {
    pub fn new(problem: ProblemKind, d: usize, n: usize, seed: u64) -> Self {
        GenerateSpec {
            problem,
            seed,
            d,
            n,
            uniform_total: None,
            nonzero_fraction: 0.1,
            noise_sigma: None,
            rank: 5,
            observed_fraction: 0.6,
            lambda: None,
            subspaces: 5,
            subspace_dim: 5,
            per_subspace: 30,
            corrupt_fraction: 0.2,
            formulation: LatentLrrFormulation::ThreeBlock,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(self.problem.default_lambda())
    }

    fn data_spec(&self) -> DataGenSpec {
        match self.problem {
            ProblemKind::Nnsc | ProblemKind::NnscNoisy => {
                let mut g = match self.uniform_total {
                    Some(total) => DataGenSpec::sparse_coding_uniform(self.d, total, self.n, self.seed),
                    None => DataGenSpec::sparse_coding_growing(self.d, self.n, self.seed),
                };
                g.nonzero_fraction = self.nonzero_fraction;
                g.noise_sigma =
                    self.noise_sigma.unwrap_or(if self.problem == ProblemKind::NnscNoisy { 0.01 } else { 0.0 });
                g
            }
            _ => {
                let mut g = DataGenSpec::completion(self.d, self.n, self.rank, self.seed);
                g.observed_fraction = self.observed_fraction;
                g.noise_sigma = self.noise_sigma.unwrap_or(0.1);
                g
            }
        }
    }
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_dense(dir: &Path, name: &str, m: &DMatrix<f64>) -> CliResult<()> {
    let path = dir.join(name);
    write_csv_matrix(&path, m).map_err(|e| io_err(&path, e))
}

/// Writes the data files and `manifest.txt` into `dir`; returns the manifest path.
pub fn generate(spec: &GenerateSpec, dir: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut m = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(m, "{k} = {v}");
    };
    kv("problem", spec.problem.name().into());
    kv("seed", spec.seed.to_string());
    match spec.problem {
        ProblemKind::Nnsc | ProblemKind::NnscNoisy => {
            let g = spec.data_spec();
            let data = SparseCodingData::generate(&g)?;
            let mut files = Vec::with_capacity(data.a.len());
            for (i, a) in data.a.iter().enumerate() {
                let name = format!("A_{}.csv", i + 1);
                write_dense(dir, &name, a)?;
                files.push(name);
            }
            write_dense(dir, "y.csv", &data.y)?;
            kv("d", g.d.to_string());
            kv("n", g.n.to_string());
            kv("block_dims", fmt_list(&g.block_dims));
            kv("nonzero_fraction", g.nonzero_fraction.to_string());
            kv("noise_sigma", g.noise_sigma.to_string());
            if spec.problem == ProblemKind::NnscNoisy {
                kv("lambda", spec.lambda().to_string());
            }
            kv("operators", fmt_list(&files));
            kv("rhs", "y.csv".into());
        }
        ProblemKind::Nmc => {
            let g = spec.data_spec();
            let data = LowRankData::generate(&g)?;
            let mask_path = dir.join("mask.mtx");
            write_matrix_market(&mask_path, &data.mask).map_err(|e| io_err(&mask_path, e))?;
            write_dense(dir, "b.csv", &data.b)?;
            kv("rows", g.d.to_string());
            kv("cols", g.n.to_string());
            kv("rank", g.rank.to_string());
            kv("observed_fraction", g.observed_fraction.to_string());
            kv("noise_sigma", g.noise_sigma.to_string());
            kv("lambda", spec.lambda().to_string());
            kv("mask", "mask.mtx".into());
            kv("data", "b.csv".into());
        }
        ProblemKind::LatentLrr => {
            let data = SubspaceData::generate(
                spec.d,
                spec.subspaces,
                spec.subspace_dim,
                spec.per_subspace,
                spec.corrupt_fraction,
                spec.seed,
            )?;
            write_dense(dir, "x.csv", &data.x)?;
            kv("ambient", spec.d.to_string());
            kv("subspaces", spec.subspaces.to_string());
            kv("subspace_dim", spec.subspace_dim.to_string());
            kv("per_subspace", spec.per_subspace.to_string());
            kv("corrupt_fraction", spec.corrupt_fraction.to_string());
            kv("lambda", spec.lambda().to_string());
            let f = match spec.formulation {
                LatentLrrFormulation::TwoBlock => "2",
                LatentLrrFormulation::ThreeBlock => "3",
            };
            kv("formulation", f.into());
            kv("data", "x.csv".into());
        }
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, m).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Parsed `key = value` manifest with its location.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub path: PathBuf,
    entries: Vec<(String, String)>,
}

impl Manifest {
    /// Reads `path`, or `path/manifest.txt` when `path` is a directory.
    pub fn read(path: &Path) -> CliResult<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{}: malformed line '{line}'", path.display())))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Manifest { path, entries })
    }

    pub fn get(&self, key: &str) -> CliResult<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CliError::Config(format!("{}: missing key '{key}'", self.path.display())))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| CliError::Config(format!("{}: cannot parse {key} = {v}", self.path.display())))
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.parent().unwrap_or(Path::new(".")).join(name)
    }

    fn dense(&self, name: &str) -> CliResult<DMatrix<f64>> {
        let p = self.file(name);
        read_csv_matrix(&p).map_err(|e| io_err(&p, e))
    }

    pub fn problem_kind(&self) -> CliResult<ProblemKind> {
        self.get("problem")?.parse()
    }

    /// Builds the problem; `split` regroups sparse-coding columns into that many blocks.
    pub fn load(&self, split: Option<usize>) -> CliResult<ProblemSpec<f64>> {
        let kind = self.problem_kind()?;
        if split.is_some() && !matches!(kind, ProblemKind::Nnsc | ProblemKind::NnscNoisy) {
            return Err(CliError::Config(format!("split applies to sparse coding, not {}", kind.name())));
        }
        let spec = match kind {
            ProblemKind::Nnsc | ProblemKind::NnscNoisy => {
                let mut a = Vec::new();
                for name in self.get("operators")?.split(',') {
                    a.push(self.dense(name.trim())?);
                }
                let y = self.dense(self.get("rhs")?)?;
                if let Some(n) = split {
                    let x_star = a.iter().map(|ai| DMatrix::zeros(ai.ncols(), 1)).collect();
                    let noise = DMatrix::zeros(y.nrows(), 1);
                    a = SparseCodingData { a, x_star, noise, y: y.clone() }.split(n)?.a;
                }
                let weight = if kind == ProblemKind::NnscNoisy { Some(self.parsed("lambda")?) } else { None };
                sparse_coding_from(&a, &y, weight)?
            }
            ProblemKind::Nmc => {
                let p = self.file(self.get("mask")?);
                let mask = read_matrix_market(&p).map_err(|e| io_err(&p, e))?;
                let b = self.dense(self.get("data")?)?;
                matrix_completion_from(&mask, &b, self.parsed("lambda")?)?
            }
            ProblemKind::LatentLrr => {
                let x = self.dense(self.get("data")?)?;
                let f = match self.get("formulation")? {
                    "2" => LatentLrrFormulation::TwoBlock,
                    "3" => LatentLrrFormulation::ThreeBlock,
                    v => return Err(CliError::Config(format!("formulation must be 2 or 3, got {v}"))),
                };
                build_latent_lrr(&x, self.parsed("lambda")?, f)?
            }
        };
        let entries: Vec<(String, String)> = self.entries.iter().filter(|(k, _)| k != "problem").cloned().collect();
        Ok(spec.with_manifest(entries))
    }
}
