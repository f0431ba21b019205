use std::path::{Path, PathBuf};

use mmadmm::partition::{descending_order, Partition};
use mmadmm::problems::ProblemSpec;
use mmadmm::solvers::{Schedule, SolverConfig, SolverKind, StopRule};

use crate::error::{CliError, CliResult};

/// Every accepted key with its default, as printed by `mmadmm keys`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("manifest", "", "problem manifest file or directory, relative to the config file"),
    ("solver", "madmm", "gs | jacobi | madmm | madmm-bt | l-admm-ps | pl-admm-ps | gl-admm-ps"),
    ("label", "", "column-group name in bench output; defaults to the solver name"),
    ("beta0", "1e-4", "initial penalty"),
    ("rho", "1.1", "geometric penalty growth"),
    ("beta_max", "1e6", "penalty cap"),
    ("max_iter", "10000", "iteration budget"),
    ("eps", "1e-4", "sets both eps_primal and eps_step"),
    ("eps_primal", "1e-4", "relative residual tolerance"),
    ("eps_step", "1e-4", "relative step tolerance"),
    ("tau", "1.3", "backtracking margin on B2"),
    ("mu", "2", "backtracking growth factor"),
    ("eta_scale", "0.01", "initial backtracking weights as a fraction of the safe ones"),
    ("schedule", "geometric", "geometric | adaptive"),
    ("adaptive_factor", "10", "penalty factor of the adaptive schedule"),
    ("adaptive_threshold", "1e-3", "step threshold of the adaptive schedule"),
    ("stop_rule", "aggregate", "aggregate | blockwise step test"),
    ("partition", "auto", "auto | n1=K (K largest blocks in B1) | comma-separated B1 indices | empty"),
    ("split", "", "regroup sparse-coding columns into this many blocks"),
    ("workers", "1", "threads for Jacobian phases"),
    ("check_invariants", "false", "verify every block subproblem"),
    ("output", "", "trace CSV path, relative to the config file"),
    ("seed", "", "reported in the summary line"),
];

#[derive(Clone, Debug, PartialEq)]
pub enum PartitionChoice {
    Auto,
    /// The `K` blocks of largest `‖Aᵢ‖²` form `B₁`.
    Largest(usize),
    Blocks(Vec<usize>),
}

/// One solver run: the problem source, engine, solver settings and outputs.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub solver: SolverKind,
    pub label: Option<String>,
    pub solver_config: SolverConfig<f64>,
    pub partition: PartitionChoice,
    pub split: Option<usize>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            solver: SolverKind::MAdmm,
            label: None,
            solver_config: SolverConfig::default(),
            partition: PartitionChoice::Auto,
            split: None,
            output: None,
            seed: None,
            base_dir: PathBuf::from("."),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse '{value}'")))
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment and later keys override earlier ones.
    pub fn parse_str(text: &str) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let c = &mut self.solver_config;
        match key {
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "solver" => self.solver = value.parse().map_err(|e: mmadmm::Error| CliError::Config(e.to_string()))?,
            "label" => self.label = Some(value.to_string()),
            "beta0" => c.beta0 = parse(key, value)?,
            "rho" => c.rho = parse(key, value)?,
            "beta_max" => c.beta_max = parse(key, value)?,
            "max_iter" => c.max_iter = parse(key, value)?,
            "eps" => {
                c.eps_primal = parse(key, value)?;
                c.eps_step = c.eps_primal;
            }
            "eps_primal" => c.eps_primal = parse(key, value)?,
            "eps_step" => c.eps_step = parse(key, value)?,
            "tau" => c.tau = parse(key, value)?,
            "mu" => c.mu = parse(key, value)?,
            "eta_scale" => c.eta_scale = parse(key, value)?,
            "schedule" => {
                c.schedule = match value {
                    "geometric" => Schedule::Geometric,
                    "adaptive" => match c.schedule {
                        Schedule::Adaptive { .. } => c.schedule,
                        Schedule::Geometric => Schedule::Adaptive { factor: 10.0, threshold: 1e-3 },
                    },
                    _ => return Err(CliError::Config(format!("schedule: unknown '{value}'"))),
                }
            }
            "adaptive_factor" | "adaptive_threshold" => {
                let v: f64 = parse(key, value)?;
                let (mut factor, mut threshold) = match c.schedule {
                    Schedule::Adaptive { factor, threshold } => (factor, threshold),
                    Schedule::Geometric => (10.0, 1e-3),
                };
                if key == "adaptive_factor" {
                    factor = v;
                } else {
                    threshold = v;
                }
                c.schedule = Schedule::Adaptive { factor, threshold };
            }
            "stop_rule" => {
                c.stop_rule = match value {
                    "aggregate" => StopRule::Aggregate,
                    "blockwise" => StopRule::Blockwise,
                    _ => return Err(CliError::Config(format!("stop_rule: unknown '{value}'"))),
                }
            }
            "partition" => self.partition = parse_partition(value)?,
            "split" => self.split = Some(parse(key, value)?),
            "workers" => c.workers = parse(key, value)?,
            "check_invariants" => c.check_invariants = parse(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            "seed" => self.seed = Some(parse(key, value)?),
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> CliResult<()> {
        for o in overrides {
            let (k, v) =
                o.split_once('=').ok_or_else(|| CliError::Config(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.solver_config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.solver_config.workers == 0 {
            return Err(CliError::Config("workers must be ≥ 1".into()));
        }
        if self.split == Some(0) {
            return Err(CliError::Config("split must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.solver.name().to_string())
    }

    pub fn manifest_path(&self) -> Option<PathBuf> {
        self.manifest.as_ref().map(|m| self.resolve(m))
    }

    pub fn output_path(&self) -> Option<PathBuf> {
        self.output.as_ref().map(|o| self.resolve(o))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The solver settings with the partition choice resolved against `problem`.
    pub fn solver_config_for(&self, problem: &ProblemSpec<f64>) -> CliResult<SolverConfig<f64>> {
        let n = problem.n_blocks();
        let mut c = self.solver_config.clone();
        c.partition = match &self.partition {
            PartitionChoice::Auto => None,
            PartitionChoice::Largest(k) => {
                if *k > n {
                    return Err(CliError::Config(format!("partition n1={k} exceeds {n} blocks")));
                }
                let order = descending_order(&problem.constraints.norms_sq());
                Some(Partition::user(order[..*k].to_vec(), n).map_err(|e| CliError::Config(e.to_string()))?)
            }
            PartitionChoice::Blocks(b1) => {
                Some(Partition::user(b1.clone(), n).map_err(|e| CliError::Config(e.to_string()))?)
            }
        };
        Ok(c)
    }
}

fn parse_partition(value: &str) -> CliResult<PartitionChoice> {
    match value {
        "auto" => Ok(PartitionChoice::Auto),
        "empty" => Ok(PartitionChoice::Blocks(Vec::new())),
        v => {
            if let Some(k) = v.strip_prefix("n1=") {
                return Ok(PartitionChoice::Largest(parse("partition", k.trim())?));
            }
            let b1 = v.split(',').map(|s| parse("partition", s.trim())).collect::<CliResult<Vec<usize>>>()?;
            Ok(PartitionChoice::Blocks(b1))
        }
    }
}
