use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddcm::analytic::GmmParams;
use ddcm::harness::CSV_COLUMNS;
use ddcm::io::{read_signals, write_model, write_signals};

const BIN: &str = env!("CARGO_BIN_EXE_ddcm");

fn ddcm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn ddcm")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn labelled_mixture() -> GmmParams {
    GmmParams::new(
        vec![0.5, 0.5],
        vec![vec![-2.0, 0.0, 1.0, 0.5], vec![2.0, 0.5, -1.0, 0.0]],
        vec![vec![0.3, 0.5, 0.4, 0.6], vec![0.4, 0.3, 0.5, 0.5]],
        Some(vec![0, 1]),
    )
    .unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        write_model(fs::File::create(f.path("model.bin")).unwrap(), &labelled_mixture()).unwrap();
        write_signals(
            fs::File::create(f.path("x.sig")).unwrap(),
            4,
            &[vec![-1.8, 0.2, 0.9, 0.4]],
        )
        .unwrap();
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn signals(path: &Path) -> Vec<Vec<f64>> {
    read_signals(fs::File::open(path).unwrap()).unwrap().1
}

#[test]
fn compress_then_decompress_matches_emitted_reconstruction() {
    let f = Fixture::new();
    let out = ddcm(&[
        "compress", "--model", &f.s("model.bin"), "--T", "30", "--K", "64", "--M", "2", "--C", "4",
        "--seed", "7", "--in", &f.s("x.sig"), "--out", &f.s("x.ddcm"), "--emit-recon",
        &f.s("recon.sig"), "--pixels", "4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // 29 steps × (6 + 6 + 2) bits.
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "payload_bits=406 bpp=101.5");

    let out = ddcm(&["decompress", "--model", &f.s("model.bin"), "--in", &f.s("x.ddcm"), "--out", &f.s("dec.sig")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(f.path("dec.sig")).unwrap(), fs::read(f.path("recon.sig")).unwrap());
}

#[test]
fn eval_rate_distortion_emits_declared_columns() {
    let f = Fixture::new();
    let out = ddcm(&[
        "eval", "--experiment", "rate_distortion", "--model", &f.s("model.bin"), "--T", "20",
        "--K", "2,16", "--samples", "4", "--out", &f.s("rd.csv"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(f.path("rd.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = ddcm(&["compress", "--frobnicate"]);
    assert_eq!(code(&out), 2);
    let out = ddcm(&["transmogrify"]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&ddcm(&["--help"])), 0);
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let f = Fixture::new();
    // Missing model file: I/O.
    let out = ddcm(&["decompress", "--model", &f.s("absent.bin"), "--in", &f.s("x.sig"), "--out", &f.s("o")]);
    assert_eq!(code(&out), 5);
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("ddcm: I/O"), "{err}");

    // Bad configuration value.
    let out = ddcm(&[
        "compress", "--model", &f.s("model.bin"), "--T", "10", "--M", "3", "--C", "0", "--in",
        &f.s("x.sig"), "--out", &f.s("x.ddcm"),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    // Stream decoded against another model.
    let out = ddcm(&["compress", "--model", &f.s("model.bin"), "--T", "10", "--K", "4", "--in", &f.s("x.sig"), "--out", &f.s("x.ddcm")]);
    assert_eq!(code(&out), 0);
    write_model(fs::File::create(f.path("other.bin")).unwrap(), &GmmParams::standard_normal(4)).unwrap();
    let out = ddcm(&["decompress", "--model", &f.s("other.bin"), "--in", &f.s("x.ddcm"), "--out", &f.s("o")]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));

    // Damaged stream.
    let mut bytes = fs::read(f.path("x.ddcm")).unwrap();
    bytes[12] ^= 0x40;
    fs::write(f.path("bad.ddcm"), bytes).unwrap();
    let out = ddcm(&["decompress", "--model", &f.s("model.bin"), "--in", &f.s("bad.ddcm"), "--out", &f.s("o")]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));

    // Remote that never answers the handshake.
    let out = ddcm(&[
        "decompress", "--model", "exec:sleep 5", "--timeout", "0.2", "--in", &f.s("x.ddcm"), "--out",
        &f.s("o"),
    ]);
    assert_eq!(code(&out), 6, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let f = Fixture::new();
    fs::write(
        f.path("run.conf"),
        format!("# codec\nmodel = {}\nT = 12\nK = 8\nseed = 3\nemit_recon = {}\n", f.s("model.bin"), f.s("a.sig")),
    )
    .unwrap();
    let out = ddcm(&["compress", "--config", &f.s("run.conf"), "--in", &f.s("x.sig"), "--out", &f.s("a.ddcm")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "payload_bits=33");

    let out = ddcm(&["compress", "--config", &f.s("run.conf"), "--K", "16", "--in", &f.s("x.sig"), "--out", &f.s("b.ddcm")]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "payload_bits=44");

    fs::write(f.path("bad.conf"), "frobnicate = 1\n").unwrap();
    let out = ddcm(&["compress", "--config", &f.s("bad.conf"), "--in", &f.s("x.sig"), "--out", &f.s("c.ddcm")]);
    assert_eq!(code(&out), 3);
}

#[test]
fn exec_remote_decodes_like_the_model_file() {
    let f = Fixture::new();
    let out = ddcm(&["compress", "--model", &f.s("model.bin"), "--T", "15", "--K", "16", "--in", &f.s("x.sig"), "--out", &f.s("x.ddcm"), "--emit-recon", &f.s("recon.sig")]);
    assert_eq!(code(&out), 0);
    let remote = format!("exec:{BIN} serve --model {} --T 15", f.s("model.bin"));
    let out = ddcm(&["decompress", "--model", &remote, "--in", &f.s("x.ddcm"), "--out", &f.s("dec.sig")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // Remote values travel as f32, so the replay agrees only approximately.
    let (a, b) = (signals(&f.path("dec.sig")), signals(&f.path("recon.sig")));
    for (x, y) in a[0].iter().zip(&b[0]) {
        assert!((x - y).abs() < 1e-3, "{x} vs {y}");
    }
}

#[test]
fn sample_restore_and_edit_run() {
    let f = Fixture::new();
    let out = ddcm(&["sample", "--model", &f.s("model.bin"), "--T", "20", "--K", "8", "--n", "3", "--out", &f.s("g.sig")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let g = signals(&f.path("g.sig"));
    assert_eq!(g.len(), 3);
    assert_ne!(g[0], g[1]);

    let out = ddcm(&[
        "sample", "--model", &f.s("model.bin"), "--rule", "ccfg", "--condition", "1", "--T", "20",
        "--K", "16", "--out", &f.s("c.sig"), "--stream", &f.s("c.ddcm"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    for rule in ["restoration", "posterior", "inverse"] {
        let out = ddcm(&[
            "restore", "--model", &f.s("model.bin"), "--rule", rule, "--T", "20", "--K", "16", "--in",
            &f.s("x.sig"), "--noise-std", "0.3", "--lambda", "0.5", "--out", &f.s("r.sig"),
        ]);
        assert_eq!(code(&out), 0, "{rule}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(signals(&f.path("r.sig")).len(), 1);
    }

    let out = ddcm(&[
        "restore", "--model", &f.s("model.bin"), "--rule", "posterior", "--mask", "0,2", "--T", "20",
        "--K", "16", "--in", &f.s("x.sig"), "--out", &f.s("m.sig"),
    ]);
    assert_ne!(code(&out), 0, "a 4-vector observation does not fit a 2-coordinate mask");

    let out = ddcm(&[
        "edit", "--model", &f.s("model.bin"), "--in", &f.s("c.ddcm"), "--src-condition", "1",
        "--condition", "0", "--t-edit", "12", "--out", &f.s("e.sig"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}
