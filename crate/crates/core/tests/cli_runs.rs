use std::fs;
use std::path::Path;
use std::process::Command;

use lowbend::cli::{
    evaluate, init_checkpoint, train, verify_status, EvalOptions, RunConfig, VerifyStatus,
    CONFIG_FILE, MODEL_FILE, SEED_ENV,
};
use lowbend::continuum::{Estimate, RateOutcome, RateReport, RateRow};
use lowbend::imaging::{read_dataset, DatasetKind};
use lowbend::loss::TrainMode;
use lowbend::nn::Checkpoint;

fn lowbend() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lowbend"));
    c.env_remove(SEED_ENV);
    c
}

fn run(cmd: &mut Command) -> i32 {
    let out = cmd.output().unwrap();
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_reproducible_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.lbld"), dir.path().join("b.lbld"));
    for p in [&a, &b] {
        let code = run(lowbend().args([
            "gen",
            "--dataset",
            "s",
            "--count",
            "1000",
            "--eps",
            "1.5707963",
            "--res",
            "16",
            "--seed",
            "7",
            "--out",
            path(p),
        ]));
        assert_eq!(code, 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let recs = read_dataset(&a).unwrap();
    assert_eq!(recs.len(), 1000);
    assert_eq!(recs[0].img_x.width, 16);
    assert_eq!(recs[0].img_x.height, 16);
}

#[test]
fn gen_quantize_binarizes_every_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("q.lbld");
    let code = run(lowbend().args([
        "gen",
        "--dataset",
        "g",
        "--count",
        "100",
        "--res",
        "12",
        "--quantize",
        "--out",
        path(&p),
    ]));
    assert_eq!(code, 0);
    let recs = read_dataset(&p).unwrap();
    for t in &recs {
        for img in [&t.img_x, &t.img_y, &t.img_av] {
            assert!(img.pixels.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
    assert!(recs.iter().any(|t| t.img_x.pixels.contains(&1.0)));
}

#[test]
fn gen_rejects_radius_beyond_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(lowbend().args([
        "gen",
        "--dataset",
        "r",
        "--eps",
        "2.0",
        "--out",
        path(&dir.path().join("x")),
    ]));
    assert_eq!(code, 1);
}

#[test]
fn zero_step_training_returns_the_initialization() {
    let mut cfg = RunConfig::for_dataset(DatasetKind::G);
    cfg.resolution = 8;
    cfg.hidden = vec![16];
    cfg.steps = 0;
    cfg.seed = 3;
    let out = train(&cfg, None).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.checkpoint, init_checkpoint(&cfg).unwrap());
}

#[test]
fn flat_square_training_drives_encoder_loss_down() {
    let mut cfg = RunConfig::for_dataset(DatasetKind::FlatSquare);
    cfg.hidden = vec![32, 32];
    cfg.steps = 2000;
    cfg.lr = 1e-3;
    cfg.seed = 4;
    let out = train(&cfg, None).unwrap();
    assert!(out.aborted.is_none());
    let enc = |r: &lowbend::cli::LogRow| r.isometry + cfg.lambda * r.flatness;
    let first = enc(&out.log[0]);
    let last = enc(out.log.last().unwrap());
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn encoder_first_freezes_each_network_in_turn() {
    let mut cfg = RunConfig::for_dataset(DatasetKind::GRotation);
    cfg.resolution = 8;
    cfg.hidden = vec![16];
    cfg.mode = TrainMode::EncoderFirst;
    cfg.batch = 8;
    let init = init_checkpoint(&cfg).unwrap();
    // a single step falls in the second half: decoder only
    cfg.steps = 1;
    let one = train(&cfg, None).unwrap().checkpoint;
    assert_eq!(one.encoder, init.encoder);
    assert_ne!(one.decoder, init.decoder);
    assert_eq!(one.encoder_opt.step, 0);
    // two steps: one encoder step, then one decoder step
    cfg.steps = 2;
    let two = train(&cfg, None).unwrap().checkpoint;
    assert_ne!(two.encoder, init.encoder);
    assert_eq!((two.encoder_opt.step, two.decoder_opt.step), (1, 1));
}

#[test]
fn config_echo_reparses_identically() {
    let mut cfg = RunConfig::for_dataset(DatasetKind::R);
    cfg.seed = 99;
    cfg.lambda = 5.0;
    cfg.hidden = vec![64, 16];
    cfg.lr = 3e-4;
    cfg.mode = TrainMode::EncoderFirst;
    cfg.quantize = true;
    cfg.data_path = Some("records.lbld".into());
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);

    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let code = run(lowbend().args([
        "train",
        "--dataset",
        "g-rot",
        "--res",
        "8",
        "--hidden",
        "8",
        "--steps",
        "3",
        "--batch",
        "4",
        "--lambda",
        "0.5",
        "--seed",
        "12",
        "--out",
        path(&run_dir),
    ]));
    assert_eq!(code, 0);
    let echoed = RunConfig::load(&run_dir.join(CONFIG_FILE)).unwrap();
    assert_eq!(echoed.lambda, 0.5);
    assert_eq!(echoed.seed, 12);
    assert_eq!(RunConfig::parse(&echoed.to_text()).unwrap(), echoed);
}

#[test]
fn seed_precedence_is_file_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.txt");
    fs::write(
        &conf,
        "dataset = g-rot\nresolution = 8\nhidden = 8\nsteps = 1\nbatch = 4\nseed = 1\n",
    )
    .unwrap();
    let seed_of = |env: Option<&str>, flag: Option<&str>, name: &str| {
        let out = dir.path().join(name);
        let mut c = lowbend();
        c.args(["train", "--config", path(&conf), "--out", path(&out)]);
        if let Some(e) = env {
            c.env(SEED_ENV, e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        assert_eq!(run(&mut c), 0);
        RunConfig::load(&out.join(CONFIG_FILE)).unwrap().seed
    };
    assert_eq!(seed_of(None, None, "a"), 1);
    assert_eq!(seed_of(Some("2"), None, "b"), 2);
    assert_eq!(seed_of(Some("2"), Some("3"), "c"), 3);
}

#[test]
fn verify_exit_codes() {
    assert_eq!(
        run(lowbend().args(["verify", "--case", "flat-square", "--samples", "1000"])),
        0
    );
    assert_eq!(
        run(lowbend().args(["verify", "--case", "cylinder", "--samples", "20000"])),
        3
    );
    assert_eq!(run(lowbend().args(["verify", "--case", "torus"])), 1);
    let row = |eps: f64, diff: f64| RateRow {
        eps,
        mc: Estimate {
            mean: 1.0 + diff,
            std_err: 1e-9,
            samples: 10,
        },
        limit: 1.0,
        abs_diff: diff,
    };
    let report = RateReport {
        embedding: "synthetic".into(),
        lambda: 1.0,
        rows: vec![row(0.4, 0.1), row(0.2, 0.08)],
        outcome: RateOutcome::Slope {
            slope: 0.32,
            intercept: -1.0,
        },
    };
    assert_eq!(verify_status(&report), VerifyStatus::Fail);
    assert_eq!(VerifyStatus::Fail.exit_code(), 2);
}

#[test]
fn verify_reports_the_limit_values() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sphere.csv");
    let code = run(lowbend().args([
        "verify",
        "--case",
        "sphere",
        "--lambda",
        "2",
        "--samples",
        "5000",
        "--out",
        path(&csv),
    ]));
    assert_eq!(code, 0);
    let text = fs::read_to_string(&csv).unwrap();
    for line in text.lines().skip(1).filter(|l| !l.starts_with('#')) {
        let limit: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!((limit - 2.0).abs() < 1e-12);
    }
}

#[test]
fn eval_writes_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    assert_eq!(
        run(lowbend().args([
            "train",
            "--dataset",
            "s",
            "--res",
            "8",
            "--hidden",
            "16",
            "--steps",
            "5",
            "--batch",
            "8",
            "--seed",
            "2",
            "--out",
            path(&run_dir),
        ])),
        0
    );
    let ev = dir.path().join("ev");
    assert_eq!(
        run(lowbend().args([
            "eval",
            "--run",
            path(&run_dir),
            "--samples",
            "123",
            "--pairs",
            "16",
            "--recon-images",
            "2",
            "--out",
            path(&ev),
        ])),
        0
    );
    let proj = fs::read_to_string(ev.join("projection.csv")).unwrap();
    assert_eq!(proj.lines().count(), 1 + 123);
    let stds = fs::read_to_string(ev.join("pca_stds.csv")).unwrap();
    assert_eq!(
        stds.lines().count(),
        1 + DatasetKind::S.default_latent_dim()
    );
    let interp = fs::read_to_string(ev.join("interp_err.csv")).unwrap();
    let rows: Vec<&str> = interp.lines().skip(1).collect();
    assert_eq!(rows.len(), 11);
    for r in [rows[0], rows[10]] {
        let err: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(err, 0.0);
    }
    for i in 0..2 {
        assert!(ev.join(format!("recon_{i:03}_input.pgm")).exists());
        assert!(ev.join(format!("recon_{i:03}_output.pgm")).exists());
    }

    // the library path gives the same codes as the command
    let cfg = RunConfig::load(&run_dir.join(CONFIG_FILE)).unwrap();
    let ck = Checkpoint::load(&run_dir.join(MODEL_FILE)).unwrap();
    let opts = EvalOptions {
        samples: 123,
        pairs: 16,
        ..EvalOptions::default()
    };
    assert_eq!(evaluate(&cfg, &ck, &opts).unwrap().codes.len(), 123);
}

#[test]
fn eval_rejects_a_mismatched_model() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    assert_eq!(
        run(lowbend().args([
            "train",
            "--dataset",
            "s",
            "--res",
            "8",
            "--hidden",
            "8",
            "--steps",
            "1",
            "--batch",
            "4",
            "--out",
            path(&run_dir),
        ])),
        0
    );
    let other = dir.path().join("other.txt");
    fs::write(&other, "dataset = s\nresolution = 12\n").unwrap();
    let code = run(lowbend().args([
        "eval",
        "--model",
        path(&run_dir.join(MODEL_FILE)),
        "--config",
        path(&other),
        "--samples",
        "10",
        "--pairs",
        "4",
        "--out",
        path(&dir.path().join("ev")),
    ]));
    assert_eq!(code, 1);
}
