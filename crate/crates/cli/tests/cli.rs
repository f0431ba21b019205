use std::path::Path;
use std::process::{Command, Output};

use mmadmm::problems::{build_nonneg_sparse_coding, DataGenSpec, ProblemSpec};
use mmadmm::solvers::{run, SolverConfig, SolverKind};
use mmadmm_cli::commands::TRACE_COLUMNS;
use mmadmm_cli::{generate, GenerateSpec, Manifest, ProblemKind, RunConfig};

fn mmadmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmadmm")).args(args).output().expect("binary runs")
}

fn text(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn nnsc(dir: &Path, d: usize, n: usize, seed: u64) -> String {
    let out = dir.join(format!("nnsc-{d}-{n}-{seed}"));
    generate(&GenerateSpec::new(ProblemKind::Nnsc, d, n, seed), &out).unwrap();
    out.display().to_string()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

/// Drops the wall-clock column so runs can be compared byte for byte.
fn without_time(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f[..f.len() - 1].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        let out = dir.path().join(sub).display().to_string();
        let o = mmadmm(&["generate", "--problem", "nnsc", "--d", "8", "--n", "3", "--seed", seed, "--out", &out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["A_1.csv", "A_2.csv", "A_3.csv", "y.csv", "manifest.txt"] {
        assert_eq!(text(&dir.path().join("a").join(f)), text(&dir.path().join("b").join(f)), "{f}");
    }
    assert_ne!(text(&dir.path().join("a/y.csv")), text(&dir.path().join("c/y.csv")));
}

#[test]
fn generate_block_counts() {
    let dir = tempfile::tempdir().unwrap();
    let one = nnsc(dir.path(), 5, 1, 0);
    let p = Manifest::read(Path::new(&one)).unwrap().load(None).unwrap();
    assert_eq!(p.n_blocks(), 1);
    let many = nnsc(dir.path(), 5, 100, 0);
    let files = std::fs::read_dir(&many).unwrap().filter(|e| {
        let name = e.as_ref().unwrap().file_name();
        name.to_string_lossy().starts_with("A_")
    });
    assert_eq!(files.count(), 100);
}

#[test]
fn generated_manifests_load() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, d, n) in [(ProblemKind::NnscNoisy, 6, 3), (ProblemKind::Nmc, 8, 7), (ProblemKind::LatentLrr, 10, 0)] {
        let mut spec = GenerateSpec::new(kind, d, n, 1);
        spec.per_subspace = 4;
        spec.subspaces = 2;
        spec.subspace_dim = 2;
        let out = dir.path().join(kind.name());
        let manifest = generate(&spec, &out).unwrap();
        let p = Manifest::read(&manifest).unwrap().load(None).unwrap();
        assert!(p.n_blocks() >= 2, "{}", kind.name());
        assert!(p.manifest_text().contains("seed = 1"), "{}", p.manifest_text());
    }
}

#[test]
fn solve_trace_schema() {
    let dir = tempfile::tempdir().unwrap();
    let data = nnsc(dir.path(), 10, 4, 1);
    let cfg =
        write_config(dir.path(), "run.cfg", &format!("manifest = {data}\nsolver = madmm\nmax_iter = 7\neps = 0\n"));
    let out = dir.path().join("trace.csv").display().to_string();
    let o = mmadmm(&["solve", "--config", &cfg, "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = text(Path::new(&out));
    assert_eq!(csv.lines().next().unwrap(), TRACE_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 8);
    let summary = String::from_utf8(o.stdout).unwrap();
    assert!(summary.starts_with("summary solver=madmm stop_reason=budget iterations=7"), "{summary}");

    let o = mmadmm(&["solve", "--config", &cfg, "--set", "max_iter=0", "--out", &out]);
    assert!(o.status.success());
    assert_eq!(text(Path::new(&out)).trim_end(), TRACE_COLUMNS.join(","));
}

#[test]
fn solve_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = nnsc(dir.path(), 10, 4, 2);
    let cfg = write_config(dir.path(), "gs.cfg", &format!("manifest = {data}\nsolver = gs\nmax_iter = 5\neps = 0\n"));
    let o = mmadmm(&["solve", "--config", &cfg]);
    assert!(o.status.success());
    let cli: Vec<Vec<String>> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    let p: ProblemSpec<f64> = build_nonneg_sparse_coding(&DataGenSpec::sparse_coding_growing(10, 4, 2)).unwrap();
    let sc = SolverConfig { max_iter: 5, eps_primal: 0.0, eps_step: 0.0, ..SolverConfig::default() };
    let lib = run(&p, SolverKind::GaussSeidel, &sc).unwrap();
    assert_eq!(cli.len(), 5);
    for (row, t) in cli.iter().zip(lib.trace()) {
        assert_eq!(row[0], t.k.to_string());
        assert_eq!(row[1].parse::<f64>().unwrap(), t.objective);
        assert_eq!(row[2].parse::<f64>().unwrap(), t.residual_norm);
        assert_eq!(row[4].parse::<f64>().unwrap(), t.beta);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = nnsc(dir.path(), 10, 3, 1);
    let cfg = write_config(dir.path(), "gl.cfg", &format!("manifest = {data}\nsolver = gl-admm-ps\nmax_iter = 3\n"));
    assert_eq!(mmadmm(&["solve", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(mmadmm(&["solve", "--config", &cfg, "--set", "colour=red"]).status.code(), Some(1));
    let bad = write_config(dir.path(), "bad.cfg", "rho = 0.5\n");
    assert_eq!(mmadmm(&["solve", "--config", &bad]).status.code(), Some(1));
    let missing = dir.path().join("nope.cfg").display().to_string();
    assert_eq!(mmadmm(&["solve", "--config", &missing]).status.code(), Some(3));
    let lost = write_config(dir.path(), "lost.cfg", "manifest = nowhere\n");
    assert_eq!(mmadmm(&["solve", "--config", &lost]).status.code(), Some(3));
}

#[test]
fn bench_groups_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = nnsc(dir.path(), 10, 4, 3);
    let body = |solver: &str| format!("manifest = {data}\nsolver = {solver}\nmax_iter = 6\neps = 0\n");
    let cfgs: Vec<String> = ["madmm", "madmm-bt", "l-admm-ps"]
        .iter()
        .map(|s| write_config(dir.path(), &format!("{s}.cfg"), &body(s)))
        .collect();
    let out = dir.path().join("bench.csv").display().to_string();
    let mut args = vec!["bench"];
    for c in &cfgs {
        args.extend(["--config", c.as_str()]);
    }
    args.extend(["--out", &out]);
    let o = mmadmm(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = text(Path::new(&out));
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 3 * 7);
    assert_eq!(header[1], "madmm:objective");
    assert_eq!(header[8], "madmm-bt:objective");
    assert_eq!(header[15], "l-admm-ps:objective");
    assert_eq!(csv.lines().count(), 7);

    let single = dir.path().join("single.csv").display().to_string();
    assert!(mmadmm(&["bench", "--config", &cfgs[0], "--out", &single]).status.success());
    let solo = dir.path().join("solo.csv").display().to_string();
    assert!(mmadmm(&["solve", "--config", &cfgs[0], "--out", &solo]).status.success());
    assert_eq!(without_time(&text(Path::new(&single))), without_time(&text(Path::new(&solo))));
}

#[test]
fn bench_rho_sweep_and_duplicate_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = nnsc(dir.path(), 8, 3, 4);
    let cfg = write_config(dir.path(), "m.cfg", &format!("manifest = {data}\nmax_iter = 4\neps = 0\n"));
    let out = dir.path().join("rho.csv").display().to_string();
    let o = mmadmm(&["bench", "--config", &cfg, "--config", &cfg, "--rho", "1.1,2", "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = text(Path::new(&out));
    let header = csv.lines().next().unwrap();
    for label in ["madmm-rho1.1:", "madmm-rho2:", "madmm-rho1.1#2:", "madmm-rho2#2:"] {
        assert!(header.contains(label), "{header}");
    }
}

#[test]
fn bench_rejects_mixed_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let a = nnsc(dir.path(), 8, 3, 5);
    let b = nnsc(dir.path(), 8, 3, 6);
    let ca = write_config(dir.path(), "a.cfg", &format!("manifest = {a}\nmax_iter = 2\n"));
    let cb = write_config(dir.path(), "b.cfg", &format!("manifest = {b}\nmax_iter = 2\n"));
    assert_eq!(mmadmm(&["bench", "--config", &ca, "--config", &cb]).status.code(), Some(1));
}

#[test]
fn traces_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let data = nnsc(dir.path(), 10, 5, 7);
    let cfg = write_config(
        dir.path(),
        "bt.cfg",
        &format!("manifest = {data}\nsolver = madmm-bt\nmax_iter = 20\nworkers = 3\n"),
    );
    let first = mmadmm(&["solve", "--config", &cfg]).stdout;
    let second = mmadmm(&["solve", "--config", &cfg, "--workers", "1"]).stdout;
    let (a, b) = (String::from_utf8(first).unwrap(), String::from_utf8(second).unwrap());
    assert_eq!(without_time(&a), without_time(&b));
}

#[test]
fn partition_study_curves() {
    let dir = tempfile::tempdir().unwrap();
    let two = nnsc(dir.path(), 6, 2, 1);
    let out = dir.path().join("study.csv").display().to_string();
    let o = mmadmm(&["partition-study", "--manifest", &two, "--out", &out]);
    assert!(o.status.success());
    let csv = text(Path::new(&out));
    assert_eq!(csv.lines().count(), 3);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("argmin n1="));

    // Identical blocks: n₁ and n − n₁ score the same.
    let same = Path::new(&nnsc(dir.path(), 6, 4, 2)).to_path_buf();
    for i in 2..=4 {
        std::fs::copy(same.join("A_1.csv"), same.join(format!("A_{i}.csv"))).unwrap();
    }
    let out = dir.path().join("same.csv").display().to_string();
    assert!(mmadmm(&["partition-study", "--manifest", &same.display().to_string(), "--out", &out]).status.success());
    let scores: Vec<f64> =
        text(Path::new(&out)).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), 4);
    for n1 in 1..4 {
        assert_eq!(scores[n1 - 1], scores[4 - n1 - 1], "{scores:?}");
    }
}

#[test]
fn plot_scripts_name_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = nnsc(dir.path(), 6, 3, 1);
    let cfg = write_config(dir.path(), "p.cfg", &format!("manifest = {data}\nmax_iter = 3\n"));
    let out = dir.path().join("t.csv").display().to_string();
    let plot = dir.path().join("t.gp");
    let o = mmadmm(&["solve", "--config", &cfg, "--out", &out, "--plot", &plot.display().to_string()]);
    assert!(o.status.success());
    let script = text(&plot);
    assert!(script.contains(&out) && script.contains("\"objective\""), "{script}");
    assert_eq!(mmadmm(&["solve", "--config", &cfg, "--plot", "x.gp"]).status.code(), Some(1));
}

#[test]
fn config_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    nnsc(dir.path(), 6, 3, 9);
    let cfg = write_config(dir.path(), "rel.cfg", "manifest = nnsc-6-3-9\noutput = rel.csv\nmax_iter = 2\n");
    let c = RunConfig::from_file(Path::new(&cfg)).unwrap();
    assert_eq!(c.output_path().unwrap(), dir.path().join("rel.csv"));
    assert!(mmadmm(&["solve", "--config", &cfg]).status.success());
    assert_eq!(text(&dir.path().join("rel.csv")).lines().count(), 3);
}
