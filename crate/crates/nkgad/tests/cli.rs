//! End-to-end tests of the `nkgad` binary: exit codes, file formats,
//! determinism of emitted artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nkgad::eval::{inject_anomalies, random_geometric_graph, InjectionSpec, SyntheticSpec};
use nkgad::graph::{load_graph, save_graph};

fn nkgad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nkgad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_fixture(dir: &Path, labeled: bool) {
    let base = random_geometric_graph(&SyntheticSpec {
        nodes: 40,
        feature_dim: 4,
        avg_degree: 6.0,
        noise: 0.05,
        max_frequency: 30.0,
        seed: 5,
    })
    .unwrap();
    let g = if labeled {
        let (g, _) = inject_anomalies(
            &base,
            &InjectionSpec {
                clique_count: 1,
                clique_size: 3,
                swap_count: 2,
                candidate_pool: 10,
                seed: 5,
            },
        )
        .unwrap();
        g
    } else {
        base
    };
    save_graph(&g, dir).unwrap();
}

#[test]
fn train_score_roundtrip_and_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data, false);
    let model = dir.path().join("model.nkgd");
    let out = nkgad(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--set",
        "epochs=3",
        "--set",
        "hidden_dim=4",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(model.exists());
    assert!(dir.path().join("history.tsv").exists());
    let history = fs::read_to_string(dir.path().join("history.tsv")).unwrap();
    assert_eq!(history.lines().filter(|l| !l.starts_with('#')).count(), 3);

    let scores = dir.path().join("scores.tsv");
    let out = nkgad(&[
        "score",
        "--data",
        data.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        scores.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&scores).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 40);
    for (i, row) in rows.iter().enumerate() {
        let (node, score) = row.split_once('\t').unwrap();
        assert_eq!(node.parse::<usize>().unwrap(), i);
        assert!(score.parse::<f64>().unwrap() >= 0.0);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data, false);
    let run = |tag: &str| {
        let model = dir.path().join(format!("model_{tag}.nkgd"));
        let scores = dir.path().join(format!("scores_{tag}.tsv"));
        assert!(nkgad(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--seed",
            "3",
            "--set",
            "epochs=4",
            "--set",
            "hidden_dim=4",
            "--out",
            model.to_str().unwrap(),
        ])
        .status
        .success());
        assert!(nkgad(&[
            "score",
            "--data",
            data.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--out",
            scores.to_str().unwrap(),
        ])
        .status
        .success());
        (fs::read(&model).unwrap(), fs::read(&scores).unwrap())
    };
    let (model_a, scores_a) = run("a");
    let (model_b, scores_b) = run("b");
    assert_eq!(model_a, model_b, "model files differ across identical runs");
    assert_eq!(scores_a, scores_b, "scores.tsv differs across identical runs");
}

#[test]
fn missing_features_exits_one_with_filename() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("edges.tsv"), "0\t1\n").unwrap();
    let out = nkgad(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("features.tsv"), "stderr: {stderr}");
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data, false);
    let out = nkgad(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--set",
        "epochs=0",
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epochs"), "stderr: {stderr}");
}

#[test]
fn score_dim_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data, false);
    let model = dir.path().join("model.nkgd");
    assert!(nkgad(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--set",
        "epochs=2",
        "--set",
        "hidden_dim=4",
        "--out",
        model.to_str().unwrap(),
    ])
    .status
    .success());
    // A bundle with a different feature dimension.
    let other = dir.path().join("other");
    let g = random_geometric_graph(&SyntheticSpec {
        nodes: 10,
        feature_dim: 6,
        avg_degree: 4.0,
        noise: 0.05,
        max_frequency: 30.0,
        seed: 1,
    })
    .unwrap();
    save_graph(&g, &other).unwrap();
    let out = nkgad(&[
        "score",
        "--data",
        other.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_error_exits_one() {
    let out = nkgad(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn spectrum_emits_two_blocks_for_labeled_graph() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data, true);
    let out = nkgad(&["spectrum", "--data", data.to_str().unwrap(), "--bins", "8"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("# group: with_anomalous_edges"));
    assert!(stdout.contains("# group: without_anomalous_edges"));
    // 8 bins per block.
    let data_rows = stdout.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(data_rows, 16);
    // Each block's energies sum to ~1 (averaged over columns).
    for block in stdout.split("# group:").skip(1) {
        let total: f64 = block
            .lines()
            .filter(|l| !l.is_empty() && !l.starts_with('#') && l.contains('\t'))
            .map(|l| l.rsplit('\t').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-8, "block energy sums to {total}");
    }
}

#[test]
fn spectrum_single_block_without_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data, false);
    let out = nkgad(&["spectrum", "--data", data.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.matches("# group:").count(), 1);
}

#[test]
fn similarity_bins_sum_to_edge_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data, true);
    let g = load_graph(&data).unwrap();
    let out = nkgad(&["similarity", "--data", data.to_str().unwrap(), "--bins", "10"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("# group: normal-normal"));
    assert!(stdout.contains("# group: anomalous-normal"));
    assert!(stdout.contains("# group: anomalous-anomalous"));
    let total: u64 = stdout
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.rsplit('\t').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, g.edges().len() as u64);
}

#[test]
fn inject_roundtrips_through_load() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data, false);
    let injected_dir = dir.path().join("injected");
    let out = nkgad(&[
        "inject",
        "--data",
        data.to_str().unwrap(),
        "--out",
        injected_dir.to_str().unwrap(),
        "--cliques",
        "1",
        "--clique-size",
        "3",
        "--swaps",
        "2",
        "--pool",
        "10",
        "--seed",
        "4",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let g = load_graph(&injected_dir).unwrap();
    assert_eq!(g.node_count(), 40);
    let anomalies = g.labels().unwrap().iter().filter(|&&l| l == 1).count();
    assert_eq!(anomalies, 5);

    // Same seed: byte-identical bundle.
    let injected2 = dir.path().join("injected2");
    assert!(nkgad(&[
        "inject",
        "--data",
        data.to_str().unwrap(),
        "--out",
        injected2.to_str().unwrap(),
        "--cliques",
        "1",
        "--clique-size",
        "3",
        "--swaps",
        "2",
        "--pool",
        "10",
        "--seed",
        "4",
    ])
    .status
    .success());
    for name in ["edges.tsv", "features.tsv", "labels.tsv"] {
        assert_eq!(
            fs::read(injected_dir.join(name)).unwrap(),
            fs::read(injected2.join(name)).unwrap(),
            "{name} differs across identical inject runs"
        );
    }
}

#[test]
fn eval_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data, true);
    let report = dir.path().join("report.tsv");
    let out = nkgad(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--seeds",
        "0,1",
        "--variants",
        "ddagger,dagger",
        "--set",
        "epochs=2",
        "--set",
        "hidden_dim=4",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("# variant: ddagger"));
    assert!(text.contains("# variant: dagger"));
    assert!(text.contains("# seeds: 0,1"));
    assert!(text.lines().any(|l| l.starts_with("auc\t")));
}
