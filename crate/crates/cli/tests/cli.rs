use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lunggan_core::checkpoint::save_checkpoint;
use lunggan_core::generators::{Family, Generator, GeneratorConfig};
use serde_json::Value;
use tempfile::TempDir;

fn lunggan(args: &[&str]) -> Output {
    lunggan_env(args, &[])
}

fn lunggan_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lunggan"));
    cmd.args(args).env_remove("LUNGGAN_DEVICE");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_checkpoint(dir: &Path, family: Family) -> PathBuf {
    let gen = Generator::new(GeneratorConfig::new(family, 0.125, 11)).unwrap();
    let p = dir.join(format!("{family}.ckpt"));
    save_checkpoint(&p, &gen, None, None).unwrap();
    p
}

fn manifest(out: &Path) -> Value {
    let text = fs::read_to_string(out.join("manifest.json")).expect("manifest.json written");
    let m: Value = serde_json::from_str(&text).unwrap();
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["device"], "cpu");
    for a in m["artifacts"].as_array().unwrap() {
        assert!(out.join(a.as_str().unwrap()).exists(), "missing artifact {a}");
    }
    assert!(!resolved.is_empty());
    m
}

fn error_json(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().find(|l| l.starts_with('{')).expect("structured error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(lunggan(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(lunggan(&["sample", "--n", "many"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_3_with_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[phantom]\nscans = 1\nbogus_key = 3\n").unwrap();
    let out = lunggan(&["phantom", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["key"], "phantom.bogus_key");

    let out = lunggan(&["phantom", "--scans", "1"]);
    assert_eq!(out.status.code(), Some(3), "missing --out is a config error");

    let out = lunggan(&["phantom", "--scans", "x1", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = lunggan(&["phantom", "--set", "phantom.scans=x1", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["key"], "phantom.scans");

    let out = lunggan_env(
        &["phantom", "--scans", "1", "--out", s(dir.path())],
        &[("LUNGGAN_DEVICE", "cuda:0")],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["key"], "LUNGGAN_DEVICE");
}

#[test]
fn runtime_errors_exit_4() {
    let dir = TempDir::new().unwrap();
    let out = lunggan(&[
        "sample",
        "--checkpoint",
        s(&dir.path().join("absent.ckpt")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"]["kind"], "io");

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let out = lunggan(&["sample", "--checkpoint", s(&junk), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn precedence_defaults_then_config_then_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("p.cfg");
    fs::write(&cfg, "seed = 5\n[phantom]\nscans = 2\n").unwrap();
    // (config file, flag, --set) → expected scan count and origin
    let cases: [(bool, bool, bool, u64, &str); 5] = [
        (false, false, false, 4, "default"),
        (true, false, false, 2, "config"),
        (false, true, false, 1, "flag"),
        (true, true, false, 1, "flag"),
        (true, false, true, 3, "flag"),
    ];
    for (i, &(use_cfg, use_flag, use_set, want, origin)) in cases.iter().enumerate() {
        let out_dir = dir.path().join(format!("case{i}"));
        let mut args = vec!["phantom", "--out", s(&out_dir)];
        if use_cfg {
            args.extend(["--config", s(&cfg)]);
        }
        if use_flag {
            args.extend(["--scans", "1"]);
        }
        if use_set {
            args.extend(["--set", "phantom.scans=3"]);
        }
        ok(&lunggan(&args));
        let m = manifest(&out_dir);
        assert_eq!(m["config"]["phantom.scans"], want.to_string(), "case {i}");
        assert_eq!(m["seed"], if use_cfg { 5 } else { 0 }, "case {i}");
        let resolved = fs::read_to_string(out_dir.join("config.resolved")).unwrap();
        assert!(resolved.contains(&format!("phantom.scans = {want}  # {origin}")), "{resolved}");
        let scans = fs::read_dir(&out_dir)
            .unwrap()
            .filter(|e| {
                let n = e.as_ref().unwrap().file_name().into_string().unwrap();
                n.ends_with(".mhd") && !n.contains('_')
            })
            .count();
        assert_eq!(scans as u64, want, "case {i}");
    }
    // The resolved config replays to the same hash.
    let replay = dir.path().join("replay");
    ok(&lunggan(&[
        "phantom",
        "--config",
        s(&dir.path().join("case1/config.resolved")),
        "--out",
        s(&replay),
    ]));
    let a = manifest(&dir.path().join("case1"));
    let b = manifest(&replay);
    assert_eq!(a["config"]["phantom.scans"], b["config"]["phantom.scans"]);
}

#[test]
fn sample_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let ckpt = tiny_checkpoint(dir.path(), Family::Dcgan3d);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&lunggan(&["sample", "--checkpoint", s(&ckpt), "--n", "4", "--seed", seed, "--out", s(&out)]));
        manifest(&out);
        (fs::read(out.join("grid.png")).unwrap(), fs::read_to_string(out.join("latents.csv")).unwrap())
    };
    let a = run("a", "3");
    let b = run("b", "3");
    let c = run("c", "4");
    assert_eq!(a, b);
    assert_ne!(a.1, c.1);
    assert_ne!(a.0, c.0);
    assert!(a.1.starts_with("index,latent_seed\n"));
    assert_eq!(a.1.lines().count(), 5);
}

#[test]
fn fid_of_a_set_with_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let ckpt = tiny_checkpoint(dir.path(), Family::Biggan3d);
    let samples = dir.path().join("samples");
    ok(&lunggan(&[
        "sample",
        "--checkpoint",
        s(&ckpt),
        "--n",
        "6",
        "--save-patches",
        "--out",
        s(&samples),
    ]));
    let patches = samples.join("patches");
    for cmd in ["fid", "fid3d"] {
        let out = dir.path().join(cmd);
        ok(&lunggan(&[cmd, "--real", s(&patches), "--fake", s(&patches), "--n", "6", "--out", s(&out)]));
        manifest(&out);
        let r: Value = serde_json::from_str(&fs::read_to_string(out.join("fid.json")).unwrap()).unwrap();
        assert!(r["value"].as_f64().unwrap().abs() < 1e-6, "{cmd}: {r}");
        assert_eq!(r["n_real"], 6);
        let rank = if cmd == "fid" { "slice2d" } else { "volume3d" };
        assert_eq!(r["extractor"]["rank"], rank);
    }
    // Asking for more images than exist is a runtime error.
    let out = lunggan(&["fid", "--real", s(&patches), "--fake", s(&patches), "--n", "7", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn compare_runs_separates_distinct_methods() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("cmp");
    ok(&lunggan(&[
        "compare-runs",
        "--set",
        "compare.a_minima=30.1,31.4,29.8,30.6,30.9",
        "--set",
        "compare.b_minima=22.0,21.3,22.8,21.9,22.4",
        "--out",
        s(&out),
    ]));
    manifest(&out);
    let r: Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert!(r["welch"]["p"].as_f64().unwrap() < 1e-4, "{r}");
    assert!(r["welch"]["t"].as_f64().unwrap() > 0.0);

    // From run directories: minima come from metrics.csv, the best model is
    // the global argmin.
    let mut runs = Vec::new();
    for (name, fids) in [("a1", [9.0, 7.0]), ("a2", [8.0, 6.5]), ("b1", [5.0, 4.0]), ("b2", [3.5, 4.5])] {
        let d = dir.path().join(name);
        fs::create_dir_all(&d).unwrap();
        let mut csv = String::from("epoch,fid,d_loss,g_loss\n");
        for (e, f) in fids.iter().enumerate() {
            csv += &format!("{},{f},0.5,0.7\n", e + 1);
        }
        fs::write(d.join("metrics.csv"), csv).unwrap();
        runs.push(d);
    }
    let a = format!("{},{}", s(&runs[0]), s(&runs[1]));
    let b = format!("{},{}", s(&runs[2]), s(&runs[3]));
    let out = dir.path().join("cmp2");
    ok(&lunggan(&["compare-runs", "--a", &a, "--b", &b, "--out", s(&out)]));
    let r: Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(r["a"]["minima"], serde_json::json!([7.0, 6.5]));
    assert_eq!(r["best"]["group"], "b");
    assert_eq!(r["best"]["run"], s(&runs[3]));
    assert_eq!(r["best"]["epoch"], 1);
}

#[test]
fn structure_commands_write_their_reports() {
    let dir = TempDir::new().unwrap();
    let ckpt = tiny_checkpoint(dir.path(), Family::Dcgan3d);
    let out = dir.path().join("roc");
    ok(&lunggan(&[
        "skeleton-roc",
        "--checkpoint",
        s(&ckpt),
        "--set",
        "data.phantom_scans=1",
        "--n",
        "4",
        "--n-boot",
        "50",
        "--out",
        s(&out),
    ]));
    manifest(&out);
    for f in ["branch_counts.csv", "roc.json", "roc.png", "mip_real_00_view0.png", "mip_fake_01_view3.png"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let roc: Value = serde_json::from_str(&fs::read_to_string(out.join("roc.json")).unwrap()).unwrap();
    let auc = roc["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(fs::read_to_string(out.join("branch_counts.csv")).unwrap().lines().count(), 9);

    let out = dir.path().join("embed");
    ok(&lunggan(&[
        "umap-export",
        "--checkpoint",
        s(&ckpt),
        "--n",
        "20",
        "--labelled",
        "3",
        "--out",
        s(&out),
    ]));
    manifest(&out);
    let csv = fs::read_to_string(out.join("embedding.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let labelled = csv.lines().skip(1).filter(|l| !l.ends_with(',')).count();
    assert_eq!(labelled, 3);

    let out = lunggan(&["umap-export", "--checkpoint", s(&ckpt), "--n", "20", "--reducer", "tsne", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn interpolation_strip_for_each_latent_space() {
    let dir = TempDir::new().unwrap();
    for family in [Family::Dcgan3d, Family::Stylegan3d] {
        let ckpt = tiny_checkpoint(dir.path(), family);
        let out = dir.path().join(format!("interp-{family}"));
        ok(&lunggan(&["interpolate", "--checkpoint", s(&ckpt), "--steps", "3", "--out", s(&out)]));
        manifest(&out);
        let img = image::open(out.join("interpolation.png")).unwrap();
        assert_eq!((img.width(), img.height()), (3 * 64, 64));
    }
}

#[test]
fn observer_export_is_blinded_and_complete() {
    let dir = TempDir::new().unwrap();
    let ckpt = tiny_checkpoint(dir.path(), Family::Dcgan3d);
    let out = dir.path().join("obs");
    ok(&lunggan(&[
        "observer-export",
        "--checkpoint",
        s(&ckpt),
        "--set",
        "data.phantom_scans=2",
        "--out",
        s(&out),
    ]));
    manifest(&out);
    let key = fs::read_to_string(out.join("key.csv")).unwrap();
    assert_eq!(key.lines().filter(|l| l.ends_with(",real")).count(), 100);
    assert_eq!(key.lines().filter(|l| l.ends_with(",fake")).count(), 100);
    for r in 1..=3 {
        let order = fs::read_to_string(out.join(format!("order_{r}.txt"))).unwrap();
        assert_eq!(order.lines().count(), 200);
    }
    let pngs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 200);
}

#[test]
fn train_then_sample_end_to_end() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&lunggan(&["phantom", "--scans", "1", "--seed", "2", "--out", s(&data)]));
    let out = dir.path().join("train");
    let annotations = format!("data.annotations={}", s(&data.join("annotations.csv")));
    let split = format!("data.split={}", s(&data.join("split.txt")));
    ok(&lunggan(&[
        "train",
        "--data-dir",
        s(&data),
        "--set",
        &annotations,
        "--set",
        &split,
        "--width",
        "0.125",
        "--batch-size",
        "2",
        "--epochs",
        "1",
        "--fid-samples",
        "0",
        "--seed",
        "9",
        "--out",
        s(&out),
    ]));
    manifest(&out);
    manifest(&out.join("run"));
    let metrics = fs::read_to_string(out.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let trace = fs::read_to_string(out.join("loss_trace.csv")).unwrap();
    assert!(trace.lines().count() >= 2);
    let ckpt = out.join("run/checkpoints/epoch_001.ckpt");
    let samples = dir.path().join("samples");
    ok(&lunggan(&["sample", "--checkpoint", s(&ckpt), "--n", "2", "--out", s(&samples)]));
    manifest(&samples);
}
