use std::io::Write;
use std::path::{Path, PathBuf};

use mmadmm::partition::case1_score_curve;
use mmadmm::problems::ProblemSpec;
use mmadmm::solvers::{run, IterationTrace, SolverResult};

use crate::config::RunConfig;
use crate::data::Manifest;
use crate::error::{CliError, CliResult};

/// Per-iteration columns of every trace CSV, in order.
pub const TRACE_COLUMNS: [&str; 8] =
    ["iter", "objective", "residual_norm", "rel_residual", "beta", "step_norm", "backtracks", "wall_time_ms"];

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn trace_fields(t: &IterationTrace) -> [String; 7] {
    [
        num(t.objective),
        num(t.residual_norm),
        num(t.rel_residual),
        num(t.beta),
        num(t.step_norm),
        t.backtracks.to_string(),
        num(t.wall_time_ms),
    ]
}

pub fn write_trace_csv<W: Write>(out: W, trace: &[IterationTrace]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for t in trace {
        let mut row = vec![t.k.to_string()];
        row.extend(trace_fields(t));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One line: solver, stop reason, iterations and final values.
pub fn summary_line(cfg: &RunConfig, res: &SolverResult<f64>) -> String {
    let last = res.trace().last();
    let get = |f: fn(&IterationTrace) -> f64| last.map_or(f64::NAN, f);
    let mut s = format!(
        "summary solver={} stop_reason={} iterations={} objective={} residual_norm={} rel_residual={} \
         total_backtracks={} wall_time_ms={}",
        cfg.label(),
        res.stop_reason.name(),
        res.iterations(),
        num(get(|t| t.objective)),
        num(get(|t| t.residual_norm)),
        num(get(|t| t.rel_residual)),
        res.state.backtrack_count,
        num(get(|t| t.wall_time_ms)),
    );
    if let Some(p) = &res.partition {
        s.push_str(&format!(" n1={}", p.n1()));
    }
    if let Some(seed) = cfg.seed {
        s.push_str(&format!(" seed={seed}"));
    }
    s
}

/// Loads the manifest named by `cfg` (or `manifest` when given).
pub fn load_problem(cfg: &RunConfig, manifest: Option<&Path>) -> CliResult<ProblemSpec<f64>> {
    let path = manifest
        .map(Path::to_path_buf)
        .or_else(|| cfg.manifest_path())
        .ok_or_else(|| CliError::Config("no manifest given".into()))?;
    Manifest::read(&path)?.load(cfg.split)
}

pub fn solve(cfg: &RunConfig, problem: &ProblemSpec<f64>) -> CliResult<SolverResult<f64>> {
    let sc = cfg.solver_config_for(problem)?;
    Ok(run(problem, cfg.solver, &sc)?)
}

/// Runs every config on one problem; labels are made unique by suffixing `#k`.
pub fn bench(configs: &[RunConfig], problem: &ProblemSpec<f64>) -> CliResult<Vec<(String, SolverResult<f64>)>> {
    if configs.is_empty() {
        return Err(CliError::Config("bench needs at least one config".into()));
    }
    let mut out: Vec<(String, SolverResult<f64>)> = Vec::with_capacity(configs.len());
    for cfg in configs {
        let base = cfg.label();
        let mut label = base.clone();
        let mut k = 2;
        while out.iter().any(|(l, _)| *l == label) {
            label = format!("{base}#{k}");
            k += 1;
        }
        out.push((label, solve(cfg, problem)?));
    }
    Ok(out)
}

/// Checks that all configs name the same manifest; returns it.
pub fn common_manifest(configs: &[RunConfig]) -> CliResult<Option<PathBuf>> {
    let canon = |p: PathBuf| std::fs::canonicalize(&p).unwrap_or(p);
    let mut paths = configs.iter().map(|c| c.manifest_path().map(canon));
    let first = paths.next().flatten();
    for p in paths {
        if p != first {
            return Err(CliError::Config("bench configs name different manifests".into()));
        }
    }
    Ok(first)
}

/// `iter` then one column group per run; a single run gives the plain trace schema.
pub fn write_bench_csv<W: Write>(out: W, runs: &[(String, SolverResult<f64>)]) -> CliResult<()> {
    if let [(_, r)] = runs {
        return write_trace_csv(out, r.trace());
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iter".to_string()];
    for (label, _) in runs {
        header.extend(TRACE_COLUMNS[1..].iter().map(|c| format!("{label}:{c}")));
    }
    w.write_record(&header)?;
    let rows = runs.iter().map(|(_, r)| r.trace().len()).max().unwrap_or(0);
    for k in 0..rows {
        let mut row = vec![(k + 1).to_string()];
        for (_, r) in runs {
            match r.trace().get(k) {
                Some(t) => row.extend(trace_fields(t)),
                None => row.extend(std::iter::repeat_n(String::new(), 7)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Case I score curve over `n₁ = 1..n` of the descending-norm order.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionStudy {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    /// `n₁` of the first minimum.
    pub n1: usize,
}

impl PartitionStudy {
    pub fn b1(&self) -> Vec<usize> {
        let mut b = self.order[..self.n1].to_vec();
        b.sort_unstable();
        b
    }

    pub fn best_score(&self) -> f64 {
        self.scores[self.n1 - 1]
    }
}

/// Without `correction` the `‖A_{B₁}‖²` term is dropped for every `n₁`.
pub fn partition_study(problem: &ProblemSpec<f64>, correction: bool) -> CliResult<PartitionStudy> {
    let a = correction.then_some(&problem.constraints);
    let (order, scores) = case1_score_curve(&problem.constraints.norms_sq(), a)?;
    let best = (0..scores.len()).fold(0, |b, k| if scores[k] < scores[b] { k } else { b });
    Ok(PartitionStudy { order, scores, n1: best + 1 })
}

pub fn write_study_csv<W: Write>(out: W, study: &PartitionStudy) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n1", "score"])?;
    for (k, s) in study.scores.iter().enumerate() {
        w.write_record([(k + 1).to_string(), num(*s)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn study_summary(study: &PartitionStudy) -> String {
    let b1: Vec<String> = study.b1().iter().map(|i| i.to_string()).collect();
    format!("argmin n1={} score={} b1={}", study.n1, num(study.best_score()), b1.join(","))
}

/// Gnuplot script drawing `columns` of `csv` (by header name) against `x`.
pub fn gnuplot_script(csv: &Path, x: &str, columns: &[String], logscale: bool) -> String {
    let mut s = String::from("set datafile separator \",\"\nset key outside\n");
    if logscale {
        s.push_str("set logscale y\n");
    }
    s.push_str(&format!("set xlabel \"{x}\"\n"));
    let file = csv.display().to_string().replace('"', "\\\"");
    let plots: Vec<String> = columns
        .iter()
        .map(|c| format!("\"{file}\" using \"{x}\":\"{c}\" with lines title \"{}\"", c.replace('_', "\\_")))
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

/// Objective curves of a solve or bench CSV.
pub fn trace_plot(csv: &Path, labels: &[String]) -> String {
    let cols = if labels.len() <= 1 {
        vec!["objective".to_string()]
    } else {
        labels.iter().map(|l| format!("{l}:objective")).collect()
    };
    gnuplot_script(csv, "iter", &cols, false)
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn create(path: &Path) -> CliResult<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(f))
}
