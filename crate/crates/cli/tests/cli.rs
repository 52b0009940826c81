use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use normshare_cli::commands::DEFAULT_SIZES;
use normshare_cli::runner::resolve_sizes;
use normshare_cli::spec::Size;

const GEN: &str = r#"
out = "data"

[synthetic]
train_tokens = 300
dev_tokens = 100
lexicon_size = 200
aux_size = 200
languages = [
  { code = "aa", seed = 1 },
  { code = "bb", seed = 2, scale = 0.5 },
  { code = "cc", seed = 3, scale = 1.5, norm_sets = 2 },
]
"#;

const HYPER: &str = r#"
[hyper]
embed_dim = 4
hidden_dim = 6
learning_rate = 0.01
"#;

fn normshare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normshare"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates three synthetic languages and returns the data directory.
fn synthetic_data(root: &Path) -> PathBuf {
    let gen = root.join("gen.toml");
    fs::write(&gen, GEN).unwrap();
    let out = normshare(&["gen-synthetic", "--spec", path_str(&gen)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    root.join("data")
}

/// The generated inventory plus `extra`, restricted to `datasets` when given.
fn write_spec(data: &Path, name: &str, datasets: Option<&[&str]>, extra: &str) -> PathBuf {
    let generated = fs::read_to_string(data.join("spec.toml")).unwrap();
    let mut text = String::new();
    for block in generated.split("\n\n") {
        let keep = match datasets {
            Some(names) if block.contains("[[dataset]]") => names
                .iter()
                .any(|n| block.contains(&format!("name = \"{n}\""))),
            _ => !block.trim_start().starts_with("out ="),
        };
        if keep {
            text.push_str(block);
            text.push_str("\n\n");
        }
    }
    text.push_str(extra);
    text.push_str(HYPER);
    let path = data.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn train_writes_artifacts_and_a_result_row() {
    let root = tempfile::tempdir().unwrap();
    let data = synthetic_data(root.path());
    let spec = write_spec(
        &data,
        "train.toml",
        Some(&["AA"]),
        "[experiment]\nconfigs = [\"SEADP\"]\naux_sets = [[\"autoencoding\"]]\nsizes = [100]\nseeds = [1]\nmax_epochs = 2\n",
    );
    let out_dir = root.path().join("run");
    let out = normshare(&[
        "train",
        "--spec",
        path_str(&spec),
        "--out",
        path_str(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "checkpoint.json",
        "train_log.jsonl",
        "eval_report.json",
        "predictions.tsv",
        "results.csv",
    ] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let rows = csv_lines(&out_dir.join("results.csv"));
    assert_eq!(rows.len(), 2);
    let header: Vec<&str> = rows[0].split(',').collect();
    let row: Vec<&str> = rows[1].split(',').collect();
    let field = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(field("dataset"), "AA");
    assert_eq!(field("config"), "SEADP");
    assert_eq!(field("size"), "100");
    let acc: f64 = field("accuracy").parse().unwrap();
    assert!((0.0..=100.0).contains(&acc));

    let eval_out = root.path().join("eval");
    let out = normshare(&[
        "evaluate",
        "--checkpoint",
        path_str(&out_dir.join("checkpoint.json")),
        "--input",
        path_str(&data.join("aa/AA.dev.tsv")),
        "--task",
        "AA",
        "--out",
        path_str(&eval_out),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(eval_out.join("eval_report.json").is_file());
}

#[test]
fn single_task_spec_gives_a_baseline_row() {
    let root = tempfile::tempdir().unwrap();
    let data = synthetic_data(root.path());
    let spec = write_spec(
        &data,
        "single.toml",
        Some(&["BB"]),
        "[experiment]\nconfigs = [\"\"]\nsizes = [100]\nseeds = [3]\nmax_epochs = 1\n",
    );
    let out_dir = root.path().join("run");
    let out = normshare(&[
        "train",
        "--spec",
        path_str(&spec),
        "--out",
        path_str(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = csv_lines(&out_dir.join("results.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("BB,,"), "{}", rows[1]);
}

#[test]
fn a_missing_path_exits_with_two_and_writes_nothing() {
    let root = tempfile::tempdir().unwrap();
    let spec = root.path().join("bad.toml");
    fs::write(
        &spec,
        "[[dataset]]\nname = \"EN\"\nlanguage = \"en\"\ntrain = \"nope.train.tsv\"\ndev = \"nope.dev.tsv\"\n\n\
         [experiment]\nconfigs = [\"\"]\nsizes = [100]\nseeds = [1]\n",
    )
    .unwrap();
    let out_dir = root.path().join("run");
    let out = normshare(&[
        "train",
        "--spec",
        path_str(&spec),
        "--out",
        path_str(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());

    let out = normshare(&[
        "train",
        "--spec",
        path_str(&root.path().join("absent.toml")),
        "--out",
        path_str(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn a_sweep_has_sixty_four_rows_and_reruns_change_nothing() {
    let root = tempfile::tempdir().unwrap();
    let data = synthetic_data(root.path());
    let spec = write_spec(
        &data,
        "sweep.toml",
        Some(&["AA"]),
        "[experiment]\naux_sets = [[\"autoencoding\"]]\nsizes = [100]\nseeds = [1]\nmax_epochs = 1\n",
    );
    let out_dir = root.path().join("sweep");
    let run = || {
        let out = normshare(&[
            "sweep-sharing",
            "--spec",
            path_str(&spec),
            "--out",
            path_str(&out_dir),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run();
    let files = [
        "results.csv",
        "splits.csv",
        "timings.csv",
        "ranking.csv",
        "sharing_summary.csv",
    ];
    let first: Vec<Vec<u8>> = files
        .iter()
        .map(|f| fs::read(out_dir.join(f)).unwrap())
        .collect();
    assert_eq!(csv_lines(&out_dir.join("results.csv")).len(), 1 + 64);
    let summary = csv_lines(&out_dir.join("sharing_summary.csv"));
    assert_eq!(summary[0], "shared,configs,min,q1,median,q3,max");
    let counts: Vec<&str> = summary[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(counts, ["1", "6", "15", "20", "15", "6", "1"]);

    run();
    for (f, before) in files.iter().zip(&first) {
        assert_eq!(&fs::read(out_dir.join(f)).unwrap(), before, "{f} changed");
    }

    // an interrupted sweep only fills in what is missing
    let results = out_dir.join("results.csv");
    let lines = csv_lines(&results);
    fs::write(&results, lines[..lines.len() - 3].join("\n") + "\n").unwrap();
    run();
    assert_eq!(fs::read(&results).unwrap(), first[0]);
}

#[test]
fn default_sizes_are_clipped_to_the_training_data() {
    let requested: Vec<Size> = DEFAULT_SIZES.iter().map(|&n| Size::Count(n)).collect();
    assert_eq!(
        resolve_sizes(&requested, 9000, "X"),
        [100, 500, 1000, 5000, 9000]
    );
    assert_eq!(
        resolve_sizes(&[Size::Full, Size::Count(100)], 300, "X"),
        [100, 300]
    );
}

#[test]
fn learning_curve_writes_the_curve_files() {
    let root = tempfile::tempdir().unwrap();
    let data = synthetic_data(root.path());
    let spec = write_spec(
        &data,
        "curve.toml",
        Some(&["AA", "BB"]),
        "[experiment]\nconfigs = [\"SEADP\"]\naux_sets = [[\"autoencoding\"]]\nsizes = [100, 50000]\nseeds = [1]\nmax_epochs = 1\n",
    );
    let out_dir = root.path().join("curve");
    let out = normshare(&[
        "learning-curve",
        "--spec",
        path_str(&spec),
        "--out",
        path_str(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let curve = csv_lines(&out_dir.join("curve.csv"));
    assert_eq!(curve[0], "dataset,config,size,seed,accuracy");
    // 2 datasets x 2 sizes x (single + SEADP)
    assert_eq!(curve.len(), 1 + 8);
    assert!(curve.iter().any(|l| l.starts_with("AA,single,300,1,")));
    for f in [
        "curve_AA.svg",
        "curve_BB.svg",
        "error_reduction.csv",
        "error_reduction.svg",
    ] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn zero_shot_reports_no_target_tokens_and_a_leak_exits_with_three() {
    let root = tempfile::tempdir().unwrap();
    let data = synthetic_data(root.path());
    let zs =
        "[zero_shot]\ntargets = [\"cc\"]\nepochs = 1\nsamples_per_epoch = 20\ntrain_tokens = 100\n";
    let spec = write_spec(
        &data,
        "zs.toml",
        None,
        &format!("[experiment]\nseeds = [1]\n\n{zs}"),
    );
    let out_dir = root.path().join("zs");
    let out = normshare(&[
        "zero-shot",
        "--spec",
        path_str(&spec),
        "--out",
        path_str(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("normalization tokens (target lang): 0"),
        "{stdout}"
    );
    let table = csv_lines(&out_dir.join("zero_shot_table.csv"));
    assert!(table.iter().any(|l| l.contains("CC_1")) && table.iter().any(|l| l.contains("CC_2")));
    assert!(table.iter().any(|l| l.contains("Micro-Avg")));

    let leak = write_spec(
        &data,
        "leak.toml",
        None,
        &format!("[experiment]\nseeds = [1]\n\n{zs}force_include = [\"CC_1\"]\n"),
    );
    let out = normshare(&[
        "zero-shot",
        "--spec",
        path_str(&leak),
        "--out",
        path_str(&root.path().join("leak")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn analyze_with_two_datasets_skips_correlations() {
    let root = tempfile::tempdir().unwrap();
    let data = synthetic_data(root.path());
    let spec = write_spec(
        &data,
        "two.toml",
        Some(&["AA", "BB"]),
        "[experiment]\nconfigs = [\"SEADP\"]\naux_sets = [[\"autoencoding\"]]\nsizes = [100]\nseeds = [1]\nmax_epochs = 1\n",
    );
    let runs = root.path().join("runs");
    let out = normshare(&[
        "learning-curve",
        "--spec",
        path_str(&spec),
        "--out",
        path_str(&runs),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = root.path().join("analysis");
    let out = normshare(&[
        "analyze",
        "--results",
        path_str(&runs),
        "--out",
        path_str(&report),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let md = fs::read_to_string(report.join("analysis.md")).unwrap();
    assert!(md.contains("Skipped"), "{md}");
    assert!(csv_lines(&report.join("correlations.csv")).len() <= 1);
}

#[test]
fn unknown_arguments_are_spec_errors() {
    let out = normshare(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn the_documented_example_spec_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/example_spec.toml");
    let spec = normshare_cli::spec::ExperimentSpec::load(&path).unwrap();
    assert_eq!(spec.datasets.len(), 1);
    assert_eq!(spec.aux_sets().len(), 2);
    assert_eq!(spec.configs().unwrap().unwrap().len(), 2);
}
