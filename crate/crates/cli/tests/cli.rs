use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
resolution = 8
groups = 2
features = 4
base_width = 4
depth = 1
mlp_width = 16
color_width = 8
rays_per_step = 64
coarse_samples = 8
fine_samples = 8
max_steps = 6
checkpoint_every = 3
";

fn trivol(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trivol"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("TRIVOL_THREADS", t),
        None => cmd.env_remove("TRIVOL_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn make_scene(dir: &Path, size: &str) {
    ok(&trivol(
        &["make-scene", "--name", "two-object", "--out", s(dir), "--views", "3", "--size", size, "--points", "2000", "--seed", "4"],
        None,
    ));
}

fn read_dir_sorted(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn render_with_missing_checkpoint_exits_2_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    make_scene(&scene, "12x12");
    let missing = tmp.path().join("nope.triv");
    let out = trivol(&["render", "--checkpoint", s(&missing), "--scene", s(&scene), "--out", s(tmp.path())], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn unknown_flags_and_bad_values_fail() {
    assert!(!trivol(&["bench", "--frobnicate"], None).status.success());
    assert!(!trivol(&["make-scene", "--out", "/tmp/x", "--size", "12"], None).status.success());
    let tmp = tempfile::tempdir().unwrap();
    let out = trivol(&["make-scene", "--name", "teapot", "--out", s(tmp.path())], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("teapot"));
}

#[test]
fn make_scene_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    make_scene(&a, "16x12");
    make_scene(&b, "16x12");
    let (da, db) = (read_dir_sorted(&a), read_dir_sorted(&b));
    assert_eq!(da.len(), 6);
    assert_eq!(da, db);
}

#[test]
fn bench_cell_counts() {
    let csv = ok(&trivol(&["bench", "--groups", "4..16", "--resolutions", "32..64", "--cells-only"], None));
    let rows: Vec<Vec<usize>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(4).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    for g in [4, 8, 16] {
        let cells: Vec<usize> = rows.iter().filter(|r| r[1] == g).map(|r| r[2]).collect();
        assert!(cells.windows(2).all(|w| w[0] < w[1]));
    }
    for r in &rows {
        if 3 * r[1] < r[0] {
            assert!(r[2] < r[3], "{r:?}");
        }
    }
}

#[test]
fn gradcheck_passes() {
    let out = trivol(&["gradcheck", "--samples", "12", "--seed", "2"], None);
    let stdout = ok(&out);
    assert_eq!(stdout.lines().count(), 13);
}

#[test]
fn train_render_eval_roundtrip_is_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    make_scene(&scene, "12x12");
    let cfg = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();

    let mut runs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("run{threads}"));
        ok(&trivol(
            &["train", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&out), "--views", "0-1", "--seed", "9"],
            Some(threads),
        ));
        let ckpt = out.join("checkpoint.triv");
        let renders = out.join("renders");
        ok(&trivol(
            &["render", "--checkpoint", s(&ckpt), "--scene", s(&scene), "--config", s(&cfg), "--out", s(&renders), "--seed", "9"],
            Some(threads),
        ));
        let eval = ok(&trivol(
            &["eval", "--checkpoint", s(&ckpt), "--scene", s(&scene), "--config", s(&cfg), "--views", "2", "--seed", "9"],
            Some(threads),
        ));
        runs.push((
            std::fs::read_to_string(out.join("train_log.csv")).unwrap(),
            std::fs::read(&ckpt).unwrap(),
            read_dir_sorted(&renders),
            eval,
        ));
    }
    assert_eq!(runs[0], runs[1]);
    let (log, _, renders, eval) = &runs[0];
    assert_eq!(log.lines().next(), Some("step,epoch,lr,loss,psnr"));
    assert_eq!(log.lines().count(), 7);
    assert_eq!(renders.len(), 3);
    let mut lines = eval.lines();
    assert_eq!(lines.next(), Some("view,psnr,ssim"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 2.0);
    assert!(row[1].is_finite() && row[2] <= 1.0);
}

#[test]
fn resumed_training_appends_to_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    make_scene(&scene, "12x12");
    let cfg = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let short = tmp.path().join("short.cfg");
    std::fs::write(&short, TINY.replace("max_steps = 6", "max_steps = 3")).unwrap();

    let full = tmp.path().join("full");
    ok(&trivol(&["train", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&full)], None));
    let part = tmp.path().join("part");
    ok(&trivol(&["train", "--scene", s(&scene), "--config", s(&short), "--out", s(&part)], None));
    let ckpt = part.join("checkpoint.triv");
    ok(&trivol(
        &["train", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&part), "--checkpoint", s(&ckpt)],
        None,
    ));
    assert_eq!(
        std::fs::read_to_string(full.join("train_log.csv")).unwrap(),
        std::fs::read_to_string(part.join("train_log.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(full.join("checkpoint.triv")).unwrap(),
        std::fs::read(part.join("checkpoint.triv")).unwrap()
    );
}

#[test]
fn eval_of_a_perfect_render_reports_the_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    make_scene(&scene, "12x12");
    let cfg = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY.replace("max_steps = 6", "max_steps = 1")).unwrap();
    let out = tmp.path().join("run");
    ok(&trivol(&["train", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&out)], None));

    // a camera looking away from the scene only sees the white background
    let away = r#"[{"K":[10,0,6,0,10,6,0,0,1],"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,-5],"width":12,"height":12}]"#;
    std::fs::write(scene.join("cameras.json"), away).unwrap();
    let white = [b"P6\n12 12\n255\n".to_vec(), vec![255u8; 12 * 12 * 3]].concat();
    std::fs::write(scene.join("gt").join("view_000.ppm"), white).unwrap();
    let csv = ok(&trivol(
        &["eval", "--checkpoint", s(&out.join("checkpoint.triv")), "--scene", s(&scene), "--config", s(&cfg)],
        None,
    ));
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("0,99,1"), "{row}");
}
