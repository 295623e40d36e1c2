mod common;

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use probe_bench::cli::run_cli;
use probe_bench::dataset::{load_embeddings, ClassId, EmbeddingSet};

fn run(args: &[&str]) -> i32 {
    run_cli(std::iter::once("probe-bench").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Manifest with the study's 21/9/7 counts and the first `pairs` eye-clean
/// specimens linked to perturbed rows `t00`, `t01`, ...
fn write_inputs(dir: &Path, pairs: usize) {
    let y = common::labels(common::COUNTS);
    let mut manifest = String::from("id,label,image_path,pair_id\n");
    for (i, (id, c)) in common::ids(37).iter().zip(&y).enumerate() {
        let pair = if i < pairs { format!("t{i:02}") } else { String::new() };
        manifest.push_str(&format!("{id},{},,{pair}\n", c.token()));
    }
    for i in 0..pairs {
        manifest.push_str(&format!("t{i:02},eye-clean,,\n"));
    }
    fs::write(dir.join("manifest.csv"), manifest).unwrap();

    let x = common::clusters(&y, 12, 8.0, 4);
    let mut ids = common::ids(37);
    let mut rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    for i in 0..pairs {
        // pushed from the eye-clean centre onto the moderate one
        let mut r = rows[i].clone();
        let shift = 8.0 / std::f64::consts::SQRT_2;
        r[0] -= shift;
        r[1] += shift;
        rows.push(r);
        ids.push(format!("t{i:02}"));
    }
    let data = ndarray::Array2::from_shape_vec((rows.len(), 12), rows.concat()).unwrap();
    EmbeddingSet::new("enc", ids, data).unwrap().save(dir.join("enc.csv")).unwrap();
}

fn write_config(dir: &Path, extra: &str) {
    let text = format!(
        "manifest = \"manifest.csv\"\nsources = [\"enc.csv\", \"gaussian:37:12\"]\nprobes = [\"logistic\", \"linear_svm\", \"random_forest\", \"gbt\"]\nn_perm = 10\nseed = 5\n{extra}[probe.random_forest]\nn_trees = 20\n[probe.gbt]\nn_rounds = 5\n"
    );
    fs::write(dir.join("study.toml"), text).unwrap();
}

#[test]
fn run_writes_reports_that_match_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path(), 3);
    write_config(dir.path(), "");
    let out = dir.path().join("out");
    assert_eq!(run(&["run", "--config", p(&dir.path().join("study.toml")), "--out", p(&out), "--workers", "2"]), 0);

    let csv = fs::read_to_string(out.join("study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    let text = fs::read_to_string(out.join("study.txt")).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("Acc    AUC    F1     p"));
    assert!(text.contains("config "));

    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schema/study_report.schema.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("study.json")).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    assert!(validator.is_valid(&report));
    assert_eq!(report["provenance"]["n_perm"], 10);
    assert!(report["grid"]["cells"][4]["p_value"].is_null(), "gaussian control has no p-value");
}

#[test]
fn perturbation_section_and_perturb_command() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path(), 3);
    write_config(dir.path(), "");
    let cfg = fs::read_to_string(dir.path().join("study.toml")).unwrap();
    fs::write(
        dir.path().join("study.toml"),
        cfg.replace("seed = 5\n", "seed = 5\nperturbation = \"enc.csv\"\nformats = [\"json\", \"csv\"]\n"),
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["run", "--config", p(&dir.path().join("study.toml")), "--out", p(&out), "--n-perm", "2"]), 0);
    assert!(!out.join("study.txt").exists());
    let margins = fs::read_to_string(out.join("margins.csv")).unwrap();
    assert_eq!(margins.lines().count(), 4);

    let pout = dir.path().join("pert");
    let (m, e) = (dir.path().join("manifest.csv"), dir.path().join("enc.csv"));
    assert_eq!(run(&["perturb", "--manifest", p(&m), "--embeddings", p(&e), "--out", p(&pout)]), 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(pout.join("perturbation.json")).unwrap()).unwrap();
    assert_eq!(json["margins"]["reclass_rate"], 1.0);
    assert_eq!(json["margins"]["skipped_unpaired"].as_array().unwrap().len(), 18);
    assert!(json["margins"]["mean_delta"].as_f64().unwrap() > 0.0);
}

#[test]
fn perturb_without_pairs_fails() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path(), 0);
    let (m, e, o) = (dir.path().join("manifest.csv"), dir.path().join("enc.csv"), dir.path().join("o"));
    assert_eq!(run(&["perturb", "--manifest", p(&m), "--embeddings", p(&e), "--out", p(&o)]), 3);
}

#[test]
fn config_and_data_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path(), 0);
    write_config(dir.path(), "");
    let cfg = p(&dir.path().join("study.toml")).to_string();
    assert_eq!(run(&["run", "--config", &cfg, "--n-perm", "0"]), 2);
    assert_eq!(run(&["run", "--config", p(&dir.path().join("absent.toml"))]), 2);
    assert_eq!(run(&["gaussian", "--n", "37", "--d", "0", "--out", p(&dir.path().join("g.csv"))]), 2);
    assert_eq!(run(&["run"]), 2);

    // a manifest id with no embedding row
    let c = fs::read_to_string(dir.path().join("study.toml")).unwrap();
    fs::write(dir.path().join("study.toml"), c.replace(", \"gaussian:37:12\"", "")).unwrap();
    let m = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    fs::write(dir.path().join("manifest.csv"), format!("{m}zz,heavy,,\n")).unwrap();
    assert_eq!(run(&["run", "--config", &cfg, "--out", p(&dir.path().join("o"))]), 3);
}

#[test]
fn gaussian_command_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for f in [&a, &b] {
        assert_eq!(run(&["gaussian", "--n", "37", "--d", "768", "--seed", "9", "--out", p(f)]), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let set = load_embeddings(&a).unwrap();
    assert_eq!((set.len(), set.dim()), (37, 768));
}

fn write_images(dir: &Path, y: &[ClassId]) -> String {
    let mut manifest = String::from("id,label,image_path,pair_id\n");
    for (i, c) in y.iter().enumerate() {
        let k = c.index() as u32;
        let img = RgbImage::from_fn(6, 5, |x, yy| {
            let t = ((x * 7 + yy * 3 + i as u32 * 5) % 11) as u8;
            Rgb([40 + 60 * k as u8 + t, 90 + t * 3, 200 - 50 * k as u8])
        });
        let name = format!("img{i}.png");
        img.save(dir.join(&name)).unwrap();
        manifest.push_str(&format!("s{i:02},{},{name},\n", c.token()));
    }
    manifest
}

#[test]
fn classical_extraction_and_study() {
    let dir = tempfile::tempdir().unwrap();
    let y = common::labels([4, 3, 3]);
    let images = dir.path().join("images");
    fs::create_dir(&images).unwrap();
    fs::write(dir.path().join("manifest.csv"), write_images(&images, &y)).unwrap();
    let m = p(&dir.path().join("manifest.csv")).to_string();

    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for f in [&a, &b] {
        assert_eq!(run(&["extract-classical", "--images", p(&images), "--manifest", &m, "--out", p(f)]), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(dir.path().join("a.csv.histograms.json")).unwrap(), fs::read(dir.path().join("b.csv.histograms.json")).unwrap());
    let set = load_embeddings(&a).unwrap();
    assert_eq!((set.len(), set.dim()), (10, 14));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(run(&["extract-classical", "--images", p(&empty), "--manifest", &m, "--out", p(&dir.path().join("c.csv"))]), 3);

    // the sidecar turns the file into a fold-refitted classical source
    fs::write(
        dir.path().join("study.toml"),
        "manifest = \"manifest.csv\"\nsources = [\"a.csv\", \"classical:images\"]\nprobes = [\"logistic\"]\nn_perm = 3\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["run", "--config", p(&dir.path().join("study.toml")), "--out", p(&out), "--workers", "1"]), 0);
    let csv = fs::read_to_string(out.join("study.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    // identical descriptors, so identical metrics
    assert_eq!(rows[0][4..], rows[1][4..]);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path(), 2);
    write_config(dir.path(), "perturbation = \"enc.csv\"\n");
    let cfg = p(&dir.path().join("study.toml")).to_string();
    let mut outputs = Vec::new();
    for w in ["1", "3"] {
        let out = dir.path().join(format!("out{w}"));
        assert_eq!(run(&["run", "--config", &cfg, "--out", p(&out), "--workers", w]), 0);
        outputs.push(
            ["study.csv", "study.json", "study.txt", "margins.csv"]
                .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}
