//! End-to-end runs of the `convad` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convad::dataset::{save_image, write_dataset};
use convad::synthetic::{
    color_square_detector, constant_model, golden_cnn, golden_half_mask, golden_input,
    square_dataset, GOLDEN_SEED,
};
use convad::{BinaryMask, Model, Tensor};
use serde_json::Value;

fn convad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convad"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn save_model(dir: &Path, name: &str, m: &Model) -> PathBuf {
    let manifest = dir.join(format!("{name}.json"));
    m.save(&manifest, &manifest.with_extension("adw")).unwrap();
    manifest
}

struct Golden {
    dir: tempfile::TempDir,
    model: PathBuf,
    image: PathBuf,
}

fn golden_files() -> Golden {
    let dir = tempfile::tempdir().unwrap();
    let model = save_model(dir.path(), "golden", &golden_cnn(GOLDEN_SEED));
    let image = dir.path().join("golden.png");
    save_image(&golden_input(), &image).unwrap();
    for (name, mask) in [
        ("ones", BinaryMask::ones(8, 8)),
        ("half", golden_half_mask()),
    ] {
        mask.write_pgm(&dir.path().join(format!("{name}.pgm")))
            .unwrap();
    }
    Golden { dir, model, image }
}

fn probabilities(o: &Output) -> Vec<f64> {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(o)).unwrap();
    v["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

fn top1(p: &[f64]) -> usize {
    (0..p.len())
        .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
        .unwrap()
}

#[test]
fn infer_modes_agree_on_all_ones() {
    let g = golden_files();
    let base = [
        "infer",
        "--model",
        p(&g.model),
        "--image",
        p(&g.image),
        "--json",
    ];
    let ones = g.dir.path().join("ones.pgm");
    let plain = probabilities(&convad(&base));
    let ad = probabilities(&convad(
        &[&base[..], &["--mask", p(&ones), "--ad"]].concat(),
    ));
    let zero = probabilities(&convad(
        &[&base[..], &["--mask", p(&ones), "--occlude=zero"]].concat(),
    ));
    assert_eq!(top1(&plain), top1(&ad));
    for (a, b) in plain.iter().zip(&ad) {
        assert!((a - b).abs() <= 1e-6);
    }
    assert_eq!(plain, zero);

    let text = stdout(&convad(&base[..5]));
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("class1\t"), "{text}");
}

#[test]
fn infer_half_mask_matches_fixture() {
    let g = golden_files();
    let half = g.dir.path().join("half.pgm");
    let got = probabilities(&convad(&[
        "infer",
        "--model",
        p(&g.model),
        "--image",
        p(&g.image),
        "--mask",
        p(&half),
        "--ad",
        "--json",
    ]));
    let fixture: Value = serde_json::from_str(include_str!("fixtures/golden.json")).unwrap();
    let want: Vec<f64> = fixture["half_mask_ad_probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-6, "{got:?} vs {want:?}");
    }
}

#[test]
fn explain_constant_model_at_gamma_one() {
    let dir = tempfile::tempdir().unwrap();
    let m = constant_model();
    let model = save_model(dir.path(), "constant", &m);
    let [c, h, w] = m.graph().input_shape();
    let image = dir.path().join("flat.png");
    save_image(&Tensor::full(vec![c, h, w], 0.5).unwrap(), &image).unwrap();
    let run = |out: &Path| {
        let o = convad(&[
            "explain",
            "--model",
            p(&model),
            "--image",
            p(&image),
            "--gamma",
            "1.0",
            "--seed",
            "3",
            "--out",
            p(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a);
    run(&b);
    let mask = BinaryMask::read(&a.join("flat_ad_1.pgm")).unwrap();
    assert!(mask.is_all_ones());
    let sidecar: Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("flat_ad_1.json")).unwrap()).unwrap();
    let keys: Vec<&str> = sidecar
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    assert_eq!(keys.len(), 5);
    for k in ["engine", "gamma", "confidence", "size_fraction", "seed"] {
        assert!(keys.contains(&k), "{keys:?}");
    }
    assert_eq!(sidecar["size_fraction"], 1.0);
    for f in ["flat_ad_1.pgm", "flat_ad_1.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap()
        );
    }
}

fn detector_files(images: usize) -> (tempfile::TempDir, PathBuf, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let m = color_square_detector();
    let model = save_model(dir.path(), "detector", &m);
    let (data, pool) = (dir.path().join("data"), dir.path().join("pool"));
    write_dataset(&data, &square_dataset(images, 31), m.labels()).unwrap();
    write_dataset(&pool, &square_dataset(45, 32), m.labels()).unwrap();
    (dir, model, data, pool)
}

#[test]
fn ad_explanations_are_no_smaller_than_zero_fill() {
    let (dir, model, data, _) = detector_files(6);
    let mut sizes = [0.0f64; 2];
    for entry in walk(&data) {
        for (k, engine) in ["ad", "zero"].into_iter().enumerate() {
            let o = convad(&[
                "explain",
                "--model",
                p(&model),
                "--image",
                p(&entry),
                "--engine",
                engine,
                "--gamma",
                "0.5",
                "--seed",
                "1",
                "--out",
                p(&dir.path().join("out")),
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            let stem = format!(
                "{}_{engine}_0.5",
                entry.file_stem().unwrap().to_str().unwrap()
            );
            let side: Value = serde_json::from_str(
                &std::fs::read_to_string(dir.path().join("out").join(format!("{stem}.json")))
                    .unwrap(),
            )
            .unwrap();
            sizes[k] += side["size_fraction"].as_f64().unwrap();
        }
    }
    assert!(sizes[0] >= sizes[1], "ad {} < zero {}", sizes[0], sizes[1]);
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for class in std::fs::read_dir(dir).unwrap() {
        for f in std::fs::read_dir(class.unwrap().path()).unwrap() {
            files.push(f.unwrap().path());
        }
    }
    files.sort();
    files
}

#[test]
fn evaluate_writes_a_reproducible_report() {
    let (dir, model, data, pool) = detector_files(5);
    let run = |out: &str| {
        let start = std::time::Instant::now();
        let o = convad(&[
            "evaluate",
            "--model",
            p(&model),
            "--dataset",
            p(&data),
            "--pool",
            p(&pool),
            "--engines",
            "ad,zero",
            "--gammas",
            "0,0.5,0.9",
            "--backgrounds",
            "20",
            "--seed",
            "5",
            "--out",
            p(&dir.path().join(out)),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(start.elapsed().as_secs() < 60);
        o
    };
    let a = run("a");
    let b = run("b");
    let report = std::fs::read(dir.path().join("a/report.csv")).unwrap();
    assert_eq!(
        report,
        std::fs::read(dir.path().join("b/report.csv")).unwrap()
    );
    assert_eq!(report, a.stdout);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(report).unwrap();
    assert_eq!(text.lines().next(), Some(convad::eval::REPORT_HEADER));
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    assert_eq!(
        std::fs::read(dir.path().join("a/samples.csv")).unwrap(),
        std::fs::read(dir.path().join("b/samples.csv")).unwrap()
    );
}

#[test]
fn verify_equivalence_passes_and_locates_faults() {
    let g = golden_files();
    let ok = convad(&[
        "verify-equivalence",
        "--model",
        p(&g.model),
        "--trials",
        "100",
    ]);
    assert_eq!(ok.status.code(), Some(0));
    let text = stdout(&ok);
    assert_eq!(text.lines().filter(|l| l.starts_with("tau ")).count(), 3);
    assert!(text.lines().last().unwrap().starts_with("PASS"));

    let dir = tempfile::tempdir().unwrap();
    let mixed = save_model(
        dir.path(),
        "mixed",
        &convad::synthetic::Architecture::Mixed.build(1),
    );
    assert_eq!(
        convad(&[
            "verify-equivalence",
            "--model",
            p(&mixed),
            "--trials",
            "100"
        ])
        .status
        .code(),
        Some(0)
    );

    let bad = convad(&[
        "verify-equivalence",
        "--model",
        p(&g.model),
        "--trials",
        "5",
        "--corrupt-checkpoint",
        "3",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let last = stdout(&bad).lines().last().unwrap().to_string();
    assert!(last.starts_with("FAIL\tlayer 2 output differs"), "{last}");
}

#[test]
fn usage_and_io_errors_exit_two() {
    let g = golden_files();
    let m = p(&g.model);
    let img = p(&g.image);
    let ones = g.dir.path().join("ones.pgm");
    for args in [
        vec!["infer"],
        vec!["infer", "--model", m, "--image", img, "--ad"],
        vec!["infer", "--model", m, "--image", img, "--mask", p(&ones)],
        vec![
            "infer",
            "--model",
            m,
            "--image",
            img,
            "--mask",
            p(&ones),
            "--ad",
            "--occlude",
            "zero",
        ],
        vec![
            "infer",
            "--model",
            m,
            "--image",
            img,
            "--mask",
            p(&ones),
            "--ad",
            "--tau",
            "1.0",
        ],
        vec!["infer", "--model", "/nonexistent.json", "--image", img],
        vec![
            "explain", "--model", m, "--image", img, "--gamma", "0.5", "--out", "x",
        ],
        vec![
            "explain", "--model", m, "--image", img, "--gamma", "1.5", "--seed", "1", "--out", "x",
        ],
        vec![
            "evaluate",
            "--model",
            m,
            "--dataset",
            "/nonexistent",
            "--seed",
            "1",
            "--out",
            "x",
        ],
        vec!["frobnicate"],
    ] {
        let o = convad(&args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(o.stdout.is_empty(), "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
}
