use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rendersynth"));
    c.env_remove("RENDERSYNTH_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn rendersynth")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_and_help_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["render"])), 1);
    let out = bin().args(["gradcheck", "--seeds", "1"]).env("RENDERSYNTH_THREADS", "zero").output().unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn render_writes_images_and_manifest_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = run(&["render", "--n", "10", "--seed", "3", "--resolution", "32", "--out", s(d)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(lines(&a.join("manifest.jsonl")), 10);
    for i in 0..10 {
        for ext in ["f32", "png"] {
            let name = format!("{i:06}.{ext}");
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        }
    }
    assert_eq!(fs::read(a.join("manifest.jsonl")).unwrap(), fs::read(b.join("manifest.jsonl")).unwrap());
    let out = run(&["render", "--n", "1", "--resolution", "8", "--out", s(&dir.path().join("c"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn dataset_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["dataset", "--variant", "rendergan", "--n", "2", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
    let out = run(&["dataset", "--variant", "bogus", "--n", "2", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let hm = dir.path().join("hm");
    let out = run(&["dataset", "--variant", "hm_3d", "--n", "4", "--resolution", "32", "--out", s(&hm)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(hm.join("manifest.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("\"provenance\":\"hm_3d\""));
}

#[test]
fn gradcheck_passes_and_catches_a_sign_flip() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("g.json");
    let out = run(&["gradcheck", "--seeds", "1", "--out", s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    for case in ["phi_blur", "phi_lighting", "phi_bg", "phi_detail", "generator"] {
        assert!(text.contains(case), "{text}");
    }
    assert!(report.exists());
    let out = run(&["gradcheck", "--seeds", "1", "--sign-flip", "phi_bg"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_resume_dataset_filter_eval() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let t = std::time::Instant::now();
    let out = run(&["train", "--smoke", "--out", s(&run_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(t.elapsed().as_secs() < 60);
    assert_eq!(lines(&run_dir.join("history.csv")), 3);
    let ckpt = run_dir.join("checkpoint.rsck");

    let resumed = dir.path().join("resumed");
    let out = run(&["train", "--resume", s(&ckpt), "--epochs", "3", "--out", s(&resumed)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let hist = fs::read_to_string(resumed.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 4);
    // smoke runs 5 steps per epoch, so epoch 3 ends at step 15
    assert!(hist.lines().nth(3).unwrap().starts_with("3,15,"), "{hist}");

    let data = dir.path().join("gan");
    let out = run(&["dataset", "--variant", "rendergan", "--n", "10", "--resolution", "16", "--checkpoint", s(&ckpt), "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let same = dir.path().join("q0");
    let out = run(&["filter", "--dataset", s(&data), "--checkpoint", s(&ckpt), "--quantile", "0", "--out", s(&same)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(same.join("manifest.jsonl")).unwrap(), fs::read(data.join("manifest.jsonl")).unwrap());
    assert_eq!(lines(&same.join("dropped.jsonl")), 0);

    let filtered = dir.path().join("q3");
    let out = run(&["filter", "--dataset", s(&data), "--checkpoint", s(&ckpt), "--quantile", "0.35", "--out", s(&filtered)]);
    assert_eq!(code(&out), 0);
    // ceil((1 - 0.35) * 10) = 7
    assert_eq!(lines(&filtered.join("manifest.jsonl")), 7);
    assert_eq!(lines(&filtered.join("dropped.jsonl")), 3);

    let test = dir.path().join("test");
    assert_eq!(code(&run(&["dataset", "--variant", "hm_3d", "--n", "10", "--resolution", "16", "--seed", "9", "--out", s(&test)])), 0);
    let report = |name: &str| {
        let p = dir.path().join(name);
        let out = run(&["eval", "--train", s(&data), "--train", s(&filtered), "--test", s(&test), "--out", s(&p)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(p).unwrap()
    };
    let r1 = report("r1.csv");
    assert_eq!(r1.lines().count(), 3);
    assert_eq!(r1, report("r2.csv"));
    let out = run(&["eval", "--train", s(&dir.path().join("missing")), "--test", s(&test)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_reports_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = run(&["sweep", "--n", "5", "--out", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(csv).unwrap();
    for stage in ["none", "blur", "lighting", "background", "detail", "full", "upto_detail"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{stage},"))), "{text}");
    }
}

#[test]
fn config_file_is_applied_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[render]\nn = 3\nresolution = 16\n").unwrap();
    let out_dir = dir.path().join("r");
    let out = run(&["render", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&out_dir.join("manifest.jsonl")), 3);
    fs::write(&cfg, "[render]\ncount = 3\n").unwrap();
    assert_eq!(code(&run(&["render", "--config", s(&cfg), "--out", s(&out_dir)])), 2);
}
