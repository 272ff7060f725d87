mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use common::Toy;
use memotion::dataset::{load_manifest, write_manifest, ImageRef, LabelValues, MemeSample};
use memotion::evaluation::PredictionTable;
use memotion::fusion::late_fuse;
use memotion::pipeline::Featurizer;
use memotion::training::{argmax, predict};
use memotion::Task;
use memotion_cli::experiment::{load_run, PREDICTIONS};
use memotion_cli::{exit, run_experiment, run_prepare, run_report, ExperimentConfig};

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn prepare_is_reproducible_and_table_shaped() {
    let root = tempfile::tempdir().unwrap();
    let cfg = Toy::default().config(&root.path().join("run"));
    let first = run_prepare(&cfg).unwrap();
    assert_eq!((first.train, first.validation), (90, 30));
    let dir = cfg.prepared_dir();
    let snapshot: Vec<_> = files_under(&dir).into_iter().map(|p| (p.clone(), fs::read(&p).unwrap())).collect();
    assert!(snapshot.iter().any(|(p, _)| p.extension().is_some_and(|e| e == "png")));
    run_prepare(&cfg).unwrap();
    for (p, bytes) in &snapshot {
        assert_eq!(&fs::read(p).unwrap(), bytes, "{} changed", p.display());
    }
    let table = fs::read_to_string(dir.join("distribution.txt")).unwrap();
    let sentiment = &first.distribution[0];
    assert_eq!(sentiment.train.iter().sum::<usize>(), 90);
    assert!(table.contains("Sentiment") && table.contains("Motivation"));
    // nothing escapes the output directory
    assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);
}

#[test]
fn table_shaped_manifest_reproduces_its_counts() {
    // Proportions of the published train split at 1/10 scale.
    let root = tempfile::tempdir().unwrap();
    let img = root.path().join("x.png");
    memotion::encoders::save_png(&memotion::dataset::PixelGrid::filled_rgb(2, 2, [1, 2, 3]), &img).unwrap();
    let counts = [52usize, 189, 353];
    let mut samples = Vec::new();
    for (class, &n) in counts.iter().enumerate() {
        for i in 0..n {
            samples.push(MemeSample {
                id: format!("s{class}_{i}"),
                text: "hello".into(),
                image: ImageRef::Path(img.clone()),
                labels: LabelValues {
                    sentiment: class as u8,
                    ..Default::default()
                },
            });
        }
    }
    let manifest = root.path().join("all.csv");
    write_manifest(&samples, &manifest).unwrap();
    let toml = Toy::default()
        .toml(&root.path().join("run"))
        .replace("[data.synthetic]\nn = 120\nseed = 11\nimage_size = 16\ncolumns = { sentiment = { kind = \"redundant\" } }", &format!("[data]\nmanifest = \"{}\"", manifest.display()))
        .replace("val_fraction = 0.25", "val_fraction = 0.1");
    let cfg = ExperimentConfig::parse(&toml, Path::new("")).unwrap();
    let s = run_prepare(&cfg).unwrap();
    let total: Vec<usize> = s.distribution[0].train.iter().zip(&s.distribution[0].validation).map(|(a, b)| a + b).collect();
    assert_eq!(total, counts);
    // stratified: every class gives round-ish 10% to validation
    assert_eq!(s.distribution[0].validation, vec![5, 19, 35]);
}

#[test]
fn missing_image_names_the_sample() {
    let root = tempfile::tempdir().unwrap();
    let manifest = root.path().join("m.csv");
    fs::write(
        &manifest,
        "id,text,image_path,sentiment,humor,sarcasm,offence,motivation\nmeme_42,\"hi\",nowhere.png,1,0,0,0,0\nmeme_43,\"yo\",nowhere2.png,2,0,0,0,0\n",
    )
    .unwrap();
    let toml = Toy::default().toml(&root.path().join("run")).replace(
        "[data.synthetic]\nn = 120\nseed = 11\nimage_size = 16\ncolumns = { sentiment = { kind = \"redundant\" } }",
        &format!("[data]\nmanifest = \"{}\"", manifest.display()),
    );
    let cfg = ExperimentConfig::parse(&toml, Path::new("")).unwrap();
    let err = run_prepare(&cfg).unwrap_err();
    assert!(err.to_string().contains("meme_42"), "{err}");
    assert_eq!(err.exit_code(), exit::DATA);
    assert!(!cfg.prepared_dir().exists());
}

#[test]
fn experiment_beats_majority_and_late_fusion_averages() {
    let root = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for (name, seed) in [("a", 1), ("b", 2)] {
        let cfg = Toy {
            name,
            seed,
            epochs: 15,
            ..Default::default()
        }
        .config(&root.path().join(name));
        run_prepare(&cfg).unwrap();
        let run = run_experiment(&cfg).unwrap();
        let a = &run.scores.tasks[&Task::Sentiment];
        assert!(a.macro_f1 > a.majority_macro_f1, "{} vs {}", a.macro_f1, a.majority_macro_f1);
        for f in ["checkpoint.bin", "history.jsonl", "predictions.csv", "scores.json", "report.txt", "report.csv", "run_meta.json"] {
            assert!(cfg.output_dir.join(f).is_file(), "{f}");
        }
        assert!(!cfg.output_dir.join(".staging-run").exists());
        dirs.push(cfg.output_dir.clone());
    }

    let late_toml = format!(
        r#"
name = "late"
output_dir = "{}"
seed = 0

[data.synthetic]
n = 120
seed = 11
image_size = 16
columns = {{ sentiment = {{ kind = "redundant" }} }}

[split]
val_fraction = 0.25
seed = 0

[late]
runs = ["{}", "{}"]
"#,
        root.path().join("late").display(),
        dirs[0].display(),
        dirs[1].display()
    );
    let late = ExperimentConfig::parse(&late_toml, Path::new("")).unwrap();
    run_prepare(&late).unwrap();
    run_experiment(&late).unwrap();
    let table = PredictionTable::load(late.output_dir.join(PREDICTIONS)).unwrap();

    // recompute by hand from the two checkpoints
    let val = load_manifest(late.prepared_dir().join("val.csv")).unwrap();
    let probs: Vec<_> = dirs
        .iter()
        .map(|d| {
            let run = load_run(d).unwrap();
            let set = Featurizer::for_model(&run.model, run.vocab.clone()).unwrap().encode(&val).unwrap();
            predict(&run.model, &set, 64).unwrap().probs.remove(0)
        })
        .collect();
    for i in 0..val.len() {
        let avg: Vec<f64> = (0..3).map(|c| (probs[0][[i, c]] + probs[1][[i, c]]) / 2.0).collect();
        let fused = late_fuse(&[probs[0].row(i).as_slice().unwrap(), probs[1].row(i).as_slice().unwrap()], &[1.0, 1.0]).unwrap();
        for c in 0..3 {
            assert!((avg[c] - fused[c]).abs() < 1e-12);
        }
        assert_eq!(table.columns[&Task::Sentiment][i], argmax(&avg));
    }

    let report = run_report(&[dirs[0].clone(), dirs[1].clone(), late.output_dir.clone()], &root.path().join("table")).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.rows[0].run.model, "Baseline Results");
    assert_eq!(report.rows[3].run.fusion, "Late Fusion");
}

#[test]
fn failed_experiment_leaves_no_partial_outputs() {
    let root = tempfile::tempdir().unwrap();
    let cfg = Toy::default().config(&root.path().join("run"));
    // not prepared
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), exit::DATA);
    run_prepare(&cfg).unwrap();
    let before = files_under(&cfg.output_dir);
    let mut broken = cfg.clone();
    broken.train.batch_size = 0;
    assert_eq!(run_experiment(&broken).unwrap_err().exit_code(), exit::MODEL);
    assert_eq!(files_under(&cfg.output_dir), before);
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memotion"))
}

#[test]
fn binary_runs_all_stages_and_maps_exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("toy.toml");
    fs::write(&config, Toy::default().toml(Path::new("run"))).unwrap();
    let run = |args: &[&str]| {
        let out = binary().args(args).env("RUST_LOG", "warn").output().unwrap();
        (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
    };
    let cfg = config.to_str().unwrap();
    let (code, _, err) = run(&["prepare", "--config", cfg]);
    assert_eq!(code, 0, "{err}");
    let (code, stdout, err) = run(&["train", "--config", cfg, "--seed", "4"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains('A'), "{stdout}");
    let run_dir = root.path().join("run");
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seeds"]["run"], 4);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);

    let predictions = fs::read(run_dir.join(PREDICTIONS)).unwrap();
    fs::remove_file(run_dir.join(PREDICTIONS)).unwrap();
    assert_eq!(run(&["predict", "--config", cfg]).0, 0);
    assert_eq!(fs::read(run_dir.join(PREDICTIONS)).unwrap(), predictions);
    let (code, stdout, _) = run(&["evaluate", "--config", cfg]);
    assert_eq!(code, 0);
    assert!(stdout.contains("sentiment: macro F1"), "{stdout}");
    let table = root.path().join("table");
    let (code, stdout, _) = run(&["report", run_dir.to_str().unwrap(), "--out", table.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("Baseline Results"));
    assert!(table.join("report.csv").is_file());

    assert_eq!(run(&["train", "--config", root.path().join("nope.toml").to_str().unwrap()]).0, exit::CONFIG);
    let other = root.path().join("fresh.toml");
    fs::write(&other, Toy::default().toml(Path::new("fresh"))).unwrap();
    assert_eq!(run(&["train", "--config", other.to_str().unwrap()]).0, exit::DATA);
}
