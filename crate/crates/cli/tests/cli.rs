use std::fs;
use std::path::{Path, PathBuf};

use xmodal::run;
use xmodal_core::projection::load_params;
use xmodal_core::store::load_dataset;

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

fn xm(args: &[&str]) -> i32 {
    run(args.iter().copied())
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = p(dir, name);
    let mut args = vec![
        "gen-synthetic",
        "--n",
        "120",
        "--d-a",
        "12",
        "--patches",
        "6",
        "--seed",
        "7",
    ];
    args.extend_from_slice(extra);
    let o = s(&out);
    args.extend(["--out", &o]);
    assert_eq!(xm(&args), 0);
    out
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(xm(&["eval", "--help"]), 0);
    assert_eq!(xm(&["--help"]), 0);
    assert_eq!(xm(&["no-such-command"]), 1);
    assert_eq!(xm(&[]), 1);
    assert_eq!(xm(&["eval", "--no-such-flag"]), 1);
}

#[test]
fn gen_synthetic_is_deterministic_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.aveb", &[]);
    let b = gen(dir.path(), "b.aveb", &[]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let manifest = fs::read_to_string(p(dir.path(), "a.aveb.manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 120);
    assert!(manifest
        .lines()
        .next()
        .unwrap()
        .contains("\"overall_aggregate\":\"mean\""));
    let ds = load_dataset(&a).unwrap();
    assert_eq!(
        (ds.len(), ds.dims().audio_dim, ds.dims().patches),
        (120, 12, 6)
    );

    let c = p(dir.path(), "c.aveb");
    assert_eq!(
        xm(&[
            "gen-synthetic",
            "--n",
            "120",
            "--d-a",
            "12",
            "--patches",
            "6",
            "--seed",
            "8",
            "--out",
            &s(&c)
        ]),
        0
    );
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn invalid_flags_exit_one_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.aveb", &[]);
    let out = p(dir.path(), "out");
    assert_eq!(xm(&["gen-synthetic", "--noise", "2", "--out", &s(&out)]), 1);
    assert_eq!(
        xm(&[
            "filter",
            "--data",
            &s(&data),
            "--threshold",
            "12",
            "--out",
            &s(&out)
        ]),
        1
    );
    assert_eq!(
        xm(&[
            "train",
            "--data",
            &s(&data),
            "--out-params",
            &s(&out),
            "--tau",
            "0"
        ]),
        1
    );
    assert_eq!(xm(&["eval", "--data", &s(&data), "--mode", "projected"]), 1);
    assert_eq!(xm(&["eval", "--data", &s(&data), "--pool", "0"]), 1);
    assert_eq!(
        xm(&["substitute", "--data", &s(&data), "--out", &s(&out)]),
        1
    );
    assert_eq!(
        xm(&[
            "fuse",
            "--data",
            &s(&data),
            "--strategy",
            "median",
            "--out",
            &s(&out)
        ]),
        1
    );
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn missing_and_corrupt_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(dir.path(), "missing.aveb");
    assert_eq!(xm(&["inspect", "--path", &s(&missing)]), 2);
    assert_eq!(xm(&["eval", "--data", &s(&missing)]), 2);

    let data = gen(dir.path(), "d.aveb", &[]);
    let mut bytes = fs::read(&data).unwrap();
    bytes[100] ^= 0xff;
    let bad = p(dir.path(), "bad.aveb");
    fs::write(&bad, &bytes).unwrap();
    assert_eq!(xm(&["inspect", "--path", &s(&bad)]), 2);
    let out = p(dir.path(), "f.aveb");
    assert_eq!(xm(&["filter", "--data", &s(&bad), "--out", &s(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn train_eval_project_and_substitute() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.aveb", &[]);
    let params = p(dir.path(), "p.avep");
    let log = p(dir.path(), "log.jsonl");
    let args = [
        "train",
        "--data",
        &s(&data),
        "--out-params",
        &s(&params),
        "--out-log",
        &s(&log),
        "--epochs",
        "2",
        "--hidden",
        "16",
        "--batch-size",
        "16",
        "--seed",
        "3",
    ];
    assert_eq!(xm(&args), 0);
    let text = fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("\"seed\":3"));
    assert_eq!(
        load_params(&params).unwrap().param_count(),
        16 * 12 + 16 + 2 * 16 + 16 * 16 + 16 + 2 * 16 + 1024 * 16 + 1024
    );
    assert_eq!(xm(&["inspect", "--path", &s(&params)]), 0);

    let report = p(dir.path(), "r.jsonl");
    assert_eq!(
        xm(&[
            "eval",
            "--data",
            &s(&data),
            "--params",
            &s(&params),
            "--pool",
            "5",
            "--out",
            &s(&report)
        ]),
        0
    );
    let r = fs::read_to_string(&report).unwrap();
    assert!(r.contains("\"a2v\"") && r.contains("\"v2a\""));
    assert_eq!(
        xm(&[
            "eval",
            "--data",
            &s(&data),
            "--params",
            &s(&params),
            "--mode",
            "raw-pad"
        ]),
        1
    );

    let projected = p(dir.path(), "proj.aveb");
    assert_eq!(
        xm(&[
            "project",
            "--data",
            &s(&data),
            "--params",
            &s(&params),
            "--out",
            &s(&projected)
        ]),
        0
    );
    assert_eq!(load_dataset(&projected).unwrap().dims().audio_dim, 1024);

    let subst = p(dir.path(), "s.aveb");
    let sel = p(dir.path(), "sel.jsonl");
    assert_eq!(
        xm(&[
            "substitute",
            "--data",
            &s(&data),
            "--params",
            &s(&params),
            "--k",
            "2",
            "--budget",
            "vision",
            "--out",
            &s(&subst),
            "--out-selection",
            &s(&sel)
        ]),
        0
    );
    let sub = load_dataset(&subst).unwrap();
    let proj = load_dataset(&projected).unwrap();
    for (a, b) in sub.segments().iter().zip(proj.segments()) {
        assert_eq!(
            a.visual.as_ref().unwrap().cls(),
            b.audio.as_ref().unwrap().as_slice()
        );
        let grid = a.visual.as_ref().unwrap();
        let kept = (1..=6)
            .filter(|&i| grid.row(i).iter().any(|&v| v != 0.0))
            .count();
        assert_eq!(kept, 2);
    }
    let first = fs::read_to_string(&sel).unwrap();
    assert_eq!(first.lines().count(), 120);

    let sweep = p(dir.path(), "sweep.jsonl");
    assert_eq!(
        xm(&[
            "interpolate",
            "--data",
            &s(&data),
            "--params",
            &s(&params),
            "--alphas",
            "0,1",
            "--pool",
            "5",
            "--out",
            &s(&sweep)
        ]),
        0
    );
    assert_eq!(fs::read_to_string(&sweep).unwrap().lines().count(), 2);
    assert_eq!(
        xm(&[
            "interpolate",
            "--data",
            &s(&data),
            "--params",
            &s(&params),
            "--alphas",
            "1.5"
        ]),
        1
    );
}

#[test]
fn config_file_supplies_defaults_that_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.aveb", &[]);
    let cfg = p(dir.path(), "cfg.json");
    fs::write(&cfg, r#"{"seed": 11, "train": {"epochs": 1, "hidden": 8}, "eval": {"pool": 4, "direction": "a2v"}}"#).unwrap();
    let params = p(dir.path(), "p.avep");
    let log = p(dir.path(), "log.jsonl");
    assert_eq!(
        xm(&[
            "--config",
            &s(&cfg),
            "train",
            "--data",
            &s(&data),
            "--out-params",
            &s(&params),
            "--out-log",
            &s(&log),
            "--epochs",
            "2"
        ]),
        0
    );
    let text = fs::read_to_string(&log).unwrap();
    assert!(
        text.contains("\"seed\":11")
            && text.contains("\"epochs\":2")
            && text.contains("\"hidden\":8")
    );

    let report = p(dir.path(), "r.jsonl");
    assert_eq!(
        xm(&[
            "eval",
            "--config",
            &s(&cfg),
            "--data",
            &s(&data),
            "--out",
            &s(&report)
        ]),
        0
    );
    let r = fs::read_to_string(&report).unwrap();
    assert!(r.contains("\"pool_size\":4") && !r.contains("\"v2a\""));

    fs::write(&cfg, r#"{"train": {"seed": 1}}"#).unwrap();
    assert_eq!(
        xm(&["--config", &s(&cfg), "inspect", "--path", &s(&data)]),
        1
    );
}

#[test]
fn filter_and_fuse() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.aveb", &["--layers", "4", "--seq-len", "3"]);
    let kept = p(dir.path(), "k.aveb");
    assert_eq!(
        xm(&[
            "filter",
            "--data",
            &s(&data),
            "--threshold",
            "5",
            "--out",
            &s(&kept)
        ]),
        0
    );
    let k = load_dataset(&kept).unwrap();
    assert!(
        k.len() < 120
            && k.segments()
                .iter()
                .all(|s| s.meta.alignment_scores.overall() > 5.0)
    );

    let w = p(dir.path(), "w.txt");
    fs::write(&w, "0.1, 0.2\n0.3 0.4\n").unwrap();
    let fused = p(dir.path(), "f.aveb");
    let strategy = format!("weighted:{}", s(&w));
    assert_eq!(
        xm(&[
            "fuse",
            "--data",
            &s(&data),
            "--strategy",
            &strategy,
            "--out",
            &s(&fused)
        ]),
        0
    );
    assert_eq!(load_dataset(&fused).unwrap().dims().audio_dim, 12);
    fs::write(&w, "0.5 0.5").unwrap();
    assert_eq!(
        xm(&[
            "fuse",
            "--data",
            &s(&data),
            "--strategy",
            &strategy,
            "--out",
            &s(&fused)
        ]),
        1
    );
    assert_eq!(
        xm(&[
            "fuse",
            "--data",
            &s(&data),
            "--strategy",
            "last-n:9",
            "--out",
            &s(&fused)
        ]),
        1
    );
}

#[test]
fn tradeoff_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ret = p(dir.path(), "r.csv");
    let gen = p(dir.path(), "g.csv");
    fs::write(
        &ret,
        "encoder,aligned,top1\nA,false,1\nA,true,9\nB,false,1\nB,true,4\nC,false,2\nC,true,3\n",
    )
    .unwrap();
    fs::write(&gen, "encoder,aligned,overall_score\nA,false,2\nA,true,1.2\nB,false,2\nB,true,1.8\nC,false,2\nC,true,1.95\n").unwrap();
    let out = p(dir.path(), "t.jsonl");
    assert_eq!(
        xm(&[
            "tradeoff",
            "--retrieval",
            &s(&ret),
            "--generation",
            &s(&gen),
            "--out",
            &s(&out)
        ]),
        0
    );
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 4);

    fs::write(&gen, "encoder,aligned,overall_score\nA,false,2\n").unwrap();
    assert_eq!(
        xm(&[
            "tradeoff",
            "--retrieval",
            &s(&ret),
            "--generation",
            &s(&gen)
        ]),
        1
    );
    fs::write(&gen, "encoder,aligned\nA,maybe\n").unwrap();
    assert_eq!(
        xm(&[
            "tradeoff",
            "--retrieval",
            &s(&ret),
            "--generation",
            &s(&gen)
        ]),
        2
    );
}
