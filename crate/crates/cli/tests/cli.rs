use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hymba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hymba"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn generate(dir: &Path, seed: &str) -> Output {
    hymba(&[
        "generate",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        seed,
        "--samples",
        "4",
        "--symbols",
        "4",
        "--subcarriers",
        "8",
        "--tx",
        "4x1",
    ])
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = hymba(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stdout).contains("Usage") || text(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = hymba(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("Usage"));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["generate", "pretrain", "eval", "bench"] {
        let out = hymba(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}");
        assert!(text(&out.stdout).contains("--"), "{sub}");
    }
}

#[test]
fn generate_is_deterministic_in_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(generate(&a, "7").status.success());
    assert!(generate(&b, "7").status.success());
    assert!(generate(&c, "8").status.success());
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 5);
    let mut differs = false;
    for name in &names {
        let bytes = fs::read(a.join(name)).unwrap();
        assert_eq!(bytes, fs::read(b.join(name)).unwrap(), "{name:?}");
        differs |= bytes != fs::read(c.join(name)).unwrap();
    }
    assert!(differs);
}

#[test]
fn validation_failures_exit_nonzero_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hymba(&[
        "bench",
        "--dims",
        "4x4x4",
        "--repetitions",
        "1",
        "--out",
        tmp.path().join("t.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: ") && err.contains("repetitions"));

    let bad = generate(&tmp.path().join("d"), "1");
    assert!(bad.status.success());
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "depthh = 3\n").unwrap();
    let out = hymba(&[
        "pretrain",
        "--data",
        tmp.path().join("d").to_str().unwrap(),
        "--out",
        tmp.path().join("ck").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("depthh"));
}

#[test]
fn bench_writes_timing_and_speedup_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, s) = (tmp.path().join("t.csv"), tmp.path().join("s.csv"));
    let out = hymba(&[
        "bench",
        "--dims",
        "4x4x4,4x8x8",
        "--variant",
        "both",
        "--out",
        t.to_str().unwrap(),
        "--speedup",
        s.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let timing = fs::read_to_string(&t).unwrap();
    let lines: Vec<&str> = timing.lines().collect();
    assert_eq!(lines[0], "variant,scale,L,K,Ns,tokens,median_ms,p10_ms,p90_ms");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("comhymba,tiny,4,4,4,8,"));
    assert!(lines[2].starts_with("transformer,tiny,4,4,4,8,"));
    let speedup = fs::read_to_string(&s).unwrap();
    assert!(speedup.starts_with("scale,L,K,Ns,comhymba_ms,transformer_ms,speedup\ntiny,4,4,4,"));
    assert_eq!(speedup.lines().count(), 3);
}

#[test]
fn pretrain_then_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(generate(&data, "3").status.success());
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "patch_l = 2\npatch_k = 2\npatch_s = 2\ndim = 24\ndepth = 2\nheads = 2\nhead_dim = 12\n\
         window = 4\nssm_state = 8\nssm_heads = 2\nn_meta = 2\ndec_depth = 1\ndec_dim = 24\n\
         ffn_mult = 2\nbatch_size = 2\nsteps = 3\nlr_max = 0.001\n",
    )
    .unwrap();
    let ck = tmp.path().join("ck");
    let args = |out: &str| {
        vec![
            "pretrain".to_string(),
            "--data".into(),
            data.to_str().unwrap().into(),
            "--out".into(),
            out.into(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
        ]
    };
    let run = |out: &Path| {
        let a = args(out.to_str().unwrap());
        hymba(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let out = run(&ck);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let loss = fs::read_to_string(ck.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,lr,rho,L_stat,L_eng,L_phase,L_total\n"));
    assert_eq!(loss.lines().count(), 4);
    assert!(ck.join("manifest.json").exists());

    let again = tmp.path().join("ck2");
    assert!(run(&again).status.success());
    assert_eq!(loss, fs::read_to_string(again.join("loss.csv")).unwrap());

    let report = tmp.path().join("eval/report.csv");
    let out = hymba(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("sample,model_nmse,interp_nmse\n"));
    assert_eq!(csv.lines().count(), 6);
    assert!(text(&out.stdout).contains("trilinear"));
}
