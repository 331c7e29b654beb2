use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sundae_core::codec::io::{load_codebook, load_dataset, load_pgm, save_pgm};
use sundae_core::codec::{decode_grid, encode_grid, mask_downsample, ImageGrid, PixelMask};
use sundae_core::eval::{corruption_loss, exact_nll_per_token};
use sundae_core::model::checkpoint::load_model;
use sundae_core::model::HourglassModel;
use sundae_core::synthetic::digits;
use tempfile::TempDir;

const TINY: [&str; 6] = ["--dim", "16", "--depth", "1-1-1", "--heads", "2"];

fn sundae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sundae")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sundae(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_images(dir: &Path, images: &[ImageGrid]) {
    fs::create_dir_all(dir).unwrap();
    for (i, img) in images.iter().enumerate() {
        save_pgm(img, &dir.join(format!("img_{i:04}.pgm"))).unwrap();
    }
}

/// Digit images, a 16-word 2x2 codebook, and a labeled dataset built with it.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(count: usize) -> Self {
        let dir = TempDir::new().unwrap();
        let (images, labels) = digits(count, 3, 11).unwrap();
        write_images(&dir.path().join("images"), &images);
        let labels: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
        fs::write(dir.path().join("labels.txt"), labels.join("\n")).unwrap();
        let f = Self { dir };
        ok(&[
            "fit-codebook",
            "--images",
            s(&f.p("images")),
            "--vocab",
            "16",
            "--patch",
            "2",
            "--seed",
            "1",
            "--out",
            s(&f.p("cb.cbk")),
        ]);
        ok(&[
            "build-dataset",
            "--images",
            s(&f.p("images")),
            "--codebook",
            s(&f.p("cb.cbk")),
            "--out",
            s(&f.p("data.lds")),
        ]);
        f
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let (data, out) = (self.p("data.lds"), self.p(out));
        let mut args = vec!["train", "--dataset", s(&data), "--out", s(&out), "--batch", "2", "--seed", "4"];
        if !extra.contains(&"--steps") {
            args.extend(["--steps", "3"]);
        }
        args.extend(TINY);
        args.extend(extra);
        ok(&args);
    }
}

#[test]
fn help_exits_cleanly() {
    let out = ok(&["--help"]);
    for cmd in ["fit-codebook", "build-dataset", "train", "sample", "inpaint", "eval"] {
        assert!(stdout(&out).contains(cmd));
    }
}

#[test]
fn fit_codebook_is_deterministic() {
    let f = Fixture::new(12);
    let cb = load_codebook(&f.p("cb.cbk")).unwrap();
    assert_eq!((cb.vocab(), cb.patch_size()), (16, 2));
    ok(&[
        "fit-codebook",
        "--images",
        s(&f.p("images")),
        "--vocab",
        "16",
        "--patch",
        "2",
        "--seed",
        "1",
        "--out",
        s(&f.p("again.cbk")),
    ]);
    assert_eq!(fs::read(f.p("cb.cbk")).unwrap(), fs::read(f.p("again.cbk")).unwrap());
}

#[test]
fn missing_directory_exits_2() {
    let out = sundae(&["fit-codebook", "--images", "/no/such/dir", "--out", "/tmp/x.cbk"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    let line = err.lines().last().unwrap();
    assert!(line.starts_with("error: missing-path: "), "{line}");
    assert!(line.contains("/no/such/dir"));
}

#[test]
fn errors_are_one_prefixed_line() {
    let out = sundae(&["sample", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: config: "));
    let out = sundae(&["train", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: usage: "));
}

#[test]
fn direct_pixels_full_range() {
    let dir = TempDir::new().unwrap();
    let img = ImageGrid::new(28, 28, 1, (0..784).map(|i| (i % 256) as f32 / 255.0).collect()).unwrap();
    write_images(&dir.path().join("im"), &[img]);
    let out = dir.path().join("d.lds");
    ok(&["build-dataset", "--images", s(&dir.path().join("im")), "--direct-pixels", "256", "--out", s(&out)]);
    let ds = load_dataset(&out).unwrap();
    assert_eq!((ds.vocab(), ds.grid_shape()), (256, (28, 28)));
    let expect: Vec<u16> = (0..784).map(|i| (i % 256) as u16).collect();
    assert_eq!(ds.entries()[0].tokens(), &expect[..]);
}

#[test]
fn direct_pixels_two_levels_match_threshold() {
    let dir = TempDir::new().unwrap();
    let values: Vec<f32> =
        (0..64).map(|i| if i % 8 < 4 { (i % 4) as f32 * 0.1 } else { 0.6 + (i % 4) as f32 * 0.1 }).collect();
    let img = ImageGrid::new(8, 8, 1, values.clone()).unwrap();
    write_images(&dir.path().join("im"), &[img]);
    let out = dir.path().join("d.lds");
    ok(&["build-dataset", "--images", s(&dir.path().join("im")), "--direct-pixels", "2", "--out", s(&out)]);
    let ds = load_dataset(&out).unwrap();
    // The PGM round trip rounds to 1/255 steps; none of these sit near 0.5.
    let expect: Vec<u16> = values.iter().map(|&v| (v > 0.5) as u16).collect();
    assert_eq!(ds.entries()[0].tokens(), &expect[..]);
    let bad =
        sundae(&["build-dataset", "--images", s(&dir.path().join("im")), "--direct-pixels", "3", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn hflip_doubles_and_labels_embed() {
    let dir = TempDir::new().unwrap();
    let (images, labels) = digits(100, 4, 2).unwrap();
    write_images(&dir.path().join("im"), &images);
    let text: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
    fs::write(dir.path().join("labels.txt"), text.join("\n")).unwrap();
    let out = dir.path().join("d.lds");
    ok(&[
        "build-dataset",
        "--images",
        s(&dir.path().join("im")),
        "--direct-pixels",
        "4",
        "--hflip",
        "--labels",
        s(&dir.path().join("labels.txt")),
        "--out",
        s(&out),
    ]);
    let ds = load_dataset(&out).unwrap();
    assert_eq!(ds.len(), 200);
    assert_eq!(ds.labels().unwrap()[..4], [0, 0, 1, 1]);
}

#[test]
fn zero_steps_writes_initial_checkpoint() {
    let f = Fixture::new(8);
    f.train("run", &["--steps", "0"]);
    let csv = fs::read_to_string(f.p("run/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    let model: HourglassModel<f32> = load_model(&f.p("run/checkpoint.hgck")).unwrap();
    let fresh = HourglassModel::<f32>::new(model.config().clone(), 4).unwrap();
    assert_eq!(model.params(), fresh.params());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let f = Fixture::new(8);
    f.train("full", &["--steps", "100", "--checkpoint-every", "25"]);
    f.train("part", &["--steps", "50", "--checkpoint-every", "25"]);
    // Pretend the run died after step 50 with extra rows logged past the last checkpoint.
    let ckpt = f.p("part/ckpt_000025.hgck");
    f.train("part", &["--steps", "100", "--resume", s(&ckpt)]);
    assert_eq!(fs::read(f.p("full/loss.csv")).unwrap(), fs::read(f.p("part/loss.csv")).unwrap());
    assert_eq!(fs::read(f.p("full/checkpoint.hgck")).unwrap(), fs::read(f.p("part/checkpoint.hgck")).unwrap());
    let csv = fs::read_to_string(f.p("full/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    assert!(csv.starts_with("step,loss,L1,L2\n"));
}

#[test]
fn vocab_mismatch_exits_3() {
    let f = Fixture::new(8);
    let out =
        sundae(&["train", "--dataset", s(&f.p("data.lds")), "--out", s(&f.p("run")), "--vocab", "7", "--steps", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let line = stderr(&out).lines().last().unwrap().to_string();
    assert!(line.starts_with("error: vocab-mismatch: ") && line.contains('7') && line.contains("16"), "{line}");

    f.train("run", &[]);
    let out = sundae(&[
        "sample",
        "--checkpoint",
        s(&f.p("run/checkpoint.hgck")),
        "--direct-pixels",
        "4",
        "--out",
        s(&f.p("smp")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sample_contract_and_determinism() {
    let f = Fixture::new(8);
    f.train("run", &[]);
    let ckpt = f.p("run/checkpoint.hgck");
    let args = |out: &Path| {
        vec![
            "sample".to_string(),
            "--checkpoint".into(),
            s(&ckpt).into(),
            "--codebook".into(),
            s(&f.p("cb.cbk")).into(),
            "--steps".into(),
            "100".into(),
            "--proportion".into(),
            "0.8".into(),
            "--temp".into(),
            "1.0:0.6".into(),
            "--batch".into(),
            "16".into(),
            "--seed".into(),
            "3".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let a = args(&f.p("a"));
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    for i in 0..16 {
        let img = load_pgm(&f.p(&format!("a/sample_{i:03}.pgm"))).unwrap();
        assert_eq!((img.height(), img.width()), (16, 16));
    }
    let manifest = fs::read_to_string(f.p("a/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 17);
    let b = args(&f.p("b"));
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    for name in (0..16).map(|i| format!("sample_{i:03}.pgm")).chain(["manifest.csv".to_string()]) {
        assert_eq!(fs::read(f.p("a").join(&name)).unwrap(), fs::read(f.p("b").join(&name)).unwrap());
    }
}

#[test]
fn trace_writes_every_step() {
    let f = Fixture::new(8);
    f.train("run", &[]);
    ok(&[
        "sample",
        "--checkpoint",
        s(&f.p("run/checkpoint.hgck")),
        "--codebook",
        s(&f.p("cb.cbk")),
        "--steps",
        "4",
        "--min-steps",
        "4",
        "--batch",
        "2",
        "--trace",
        "--out",
        s(&f.p("t")),
    ]);
    let n = fs::read_dir(f.p("t/trace")).unwrap().count();
    assert_eq!(n, 5 * 2);
}

#[test]
fn class_conditioning_flags() {
    let f = Fixture::new(9);
    ok(&[
        "build-dataset",
        "--images",
        s(&f.p("images")),
        "--codebook",
        s(&f.p("cb.cbk")),
        "--labels",
        s(&f.p("labels.txt")),
        "--out",
        s(&f.p("labeled.lds")),
    ]);
    let mut args = vec!["train", "--dataset", "", "--out", "", "--steps", "2", "--batch", "2"];
    let (data, out) = (f.p("labeled.lds"), f.p("cond"));
    args[2] = s(&data);
    args[4] = s(&out);
    args.extend(TINY);
    ok(&args);
    let model: HourglassModel<f32> = load_model(&f.p("cond/checkpoint.hgck")).unwrap();
    assert_eq!(model.config().class_count, Some(3));
    let sample = |class: &str, dir: &str| {
        sundae(&[
            "sample",
            "--checkpoint",
            s(&f.p("cond/checkpoint.hgck")),
            "--codebook",
            s(&f.p("cb.cbk")),
            "--steps",
            "3",
            "--min-steps",
            "1",
            "--batch",
            "2",
            "--class",
            class,
            "--out",
            s(&f.p(dir)),
        ])
    };
    assert!(sample("2", "c2").status.success());
    assert_eq!(sample("3", "c3").status.code(), Some(1));

    f.train("plain", &[]);
    let out = sundae(&[
        "sample",
        "--checkpoint",
        s(&f.p("plain/checkpoint.hgck")),
        "--codebook",
        s(&f.p("cb.cbk")),
        "--class",
        "0",
        "--out",
        s(&f.p("c0")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn inpainting_contract() {
    let f = Fixture::new(8);
    f.train("run", &[]);
    let ckpt = f.p("run/checkpoint.hgck");
    let cb = load_codebook(&f.p("cb.cbk")).unwrap();
    let image = load_pgm(&f.p("images/img_0001.pgm")).unwrap();
    let write_mask = |name: &str, on: &dyn Fn(usize, usize) -> bool| {
        let values = (0..256).map(|i| if on(i / 16, i % 16) { 1.0 } else { 0.0 }).collect();
        save_pgm(&ImageGrid::new(16, 16, 1, values).unwrap(), &f.p(name)).unwrap();
    };
    let inpaint = |mask: &str, seed: &str, out: &str| {
        ok(&[
            "inpaint",
            "--checkpoint",
            s(&ckpt),
            "--codebook",
            s(&f.p("cb.cbk")),
            "--image",
            s(&f.p("images/img_0001.pgm")),
            "--mask",
            s(&f.p(mask)),
            "--seed",
            seed,
            "--steps",
            "20",
            "--out",
            s(&f.p(out)),
        ])
    };

    write_mask("zero.pgm", &|_, _| false);
    let out = inpaint("zero.pgm", "1", "zero_out.pgm");
    assert!(stderr(&out).contains("temp=0.4:0.4"));
    let round_trip = decode_grid(&encode_grid(&image, &cb).unwrap(), &cb).unwrap();
    let mut expected = Vec::new();
    sundae_core::codec::io::write_pgm(&round_trip, &mut expected).unwrap();
    assert_eq!(fs::read(f.p("zero_out.pgm")).unwrap(), expected);

    // A full mask consumes the same stream as item 0 of an unconditional sample.
    write_mask("full.pgm", &|_, _| true);
    inpaint("full.pgm", "6", "full_out.pgm");
    ok(&[
        "sample",
        "--checkpoint",
        s(&ckpt),
        "--codebook",
        s(&f.p("cb.cbk")),
        "--steps",
        "20",
        "--temp",
        "0.4",
        "--batch",
        "1",
        "--seed",
        "6",
        "--out",
        s(&f.p("uncond")),
    ]);
    assert_eq!(fs::read(f.p("full_out.pgm")).unwrap(), fs::read(f.p("uncond/sample_000.pgm")).unwrap());

    write_mask("block.pgm", &|r, c| (4..12).contains(&r) && (4..12).contains(&c));
    let latent = mask_downsample(&PixelMask::from_image(&load_pgm(&f.p("block.pgm")).unwrap()), 2).unwrap();
    let z = encode_grid(&image, &cb).unwrap();
    let mut outputs = Vec::new();
    for seed in 0..5 {
        let name = format!("block_{seed}.pgm");
        inpaint("block.pgm", &seed.to_string(), &name);
        let got = encode_grid(&load_pgm(&f.p(&name)).unwrap(), &cb).unwrap();
        for (i, (&a, &b)) in got.tokens().iter().zip(z.tokens()).enumerate() {
            if !latent.cells()[i] {
                assert_eq!(a, b, "seed {seed} cell {i}");
            }
        }
        outputs.push(fs::read(f.p(&name)).unwrap());
    }
    for i in 0..5 {
        for j in i + 1..5 {
            assert_ne!(outputs[i], outputs[j], "seeds {i} and {j}");
        }
    }
}

#[test]
fn echoed_config_replays_the_run() {
    let f = Fixture::new(8);
    f.train("run", &[]);
    let out = ok(&[
        "sample",
        "--checkpoint",
        s(&f.p("run/checkpoint.hgck")),
        "--codebook",
        s(&f.p("cb.cbk")),
        "--steps",
        "6",
        "--min-steps",
        "2",
        "--temp",
        "0.9:0.5",
        "--proportion",
        "0.5",
        "--batch",
        "3",
        "--seed",
        "12",
        "--out",
        s(&f.p("first")),
    ]);
    let echo = stderr(&out);
    let start = echo.find("# effective config").unwrap();
    let end = echo.find("# end config").unwrap();
    let text = echo[start..end].replace(s(&f.p("first")), s(&f.p("second")));
    fs::write(f.p("replay.cfg"), text).unwrap();
    let replay = ok(&["sample", "--config", s(&f.p("replay.cfg"))]);
    assert_eq!(stderr(&replay).replace(s(&f.p("second")), s(&f.p("first"))), echo);
    for i in 0..3 {
        let name = format!("sample_{i:03}.pgm");
        assert_eq!(fs::read(f.p("first").join(&name)).unwrap(), fs::read(f.p("second").join(&name)).unwrap());
    }
}

fn metric(csv: &str, key: &str) -> Option<f64> {
    csv.lines().find_map(|l| l.strip_prefix(&format!("{key},"))).and_then(|v| v.parse().ok())
}

#[test]
fn eval_reports_match_library_on_enumerable_data() {
    let dir = TempDir::new().unwrap();
    let images: Vec<ImageGrid> = (0..16)
        .map(|i| {
            ImageGrid::new(2, 2, 1, (0..4).map(|b| if (i >> b) & 1 == 1 || b == i % 4 { 0.9 } else { 0.1 }).collect())
                .unwrap()
        })
        .collect();
    write_images(&dir.path().join("im"), &images);
    let p = |n: &str| dir.path().join(n);
    ok(&["build-dataset", "--images", s(&p("im")), "--direct-pixels", "2", "--out", s(&p("d.lds"))]);
    ok(&[
        "train",
        "--dataset",
        s(&p("d.lds")),
        "--out",
        s(&p("run")),
        "--steps",
        "40",
        "--batch",
        "4",
        "--dim",
        "8",
        "--heads",
        "2",
        "--depth",
        "1-1-1",
        "--lr",
        "0.003",
    ]);
    let out = ok(&[
        "eval",
        "--checkpoint",
        s(&p("run/checkpoint.hgck")),
        "--dataset",
        s(&p("d.lds")),
        "--draws",
        "2000",
        "--samples",
        "64",
        "--steps",
        "10",
        "--min-steps",
        "2",
        "--out",
        s(&p("metrics.csv")),
    ]);
    let csv = stdout(&out);
    assert_eq!(fs::read_to_string(p("metrics.csv")).unwrap(), csv);
    let loss = metric(&csv, "loss_per_token").unwrap();
    let se = metric(&csv, "loss_std_err").unwrap();
    let nll = metric(&csv, "exact_nll_per_token").unwrap();
    let model: HourglassModel<f32> = load_model(&p("run/checkpoint.hgck")).unwrap();
    let data = load_dataset(&p("d.lds")).unwrap();
    let direct = corruption_loss(&model, &data, 2, 2000, 0).unwrap();
    assert_eq!((loss, se), (direct.mean, direct.std_err));
    let exact = exact_nll_per_token(&model, &data, 2).unwrap().value().unwrap();
    assert_eq!(nll, exact);
    assert!(nll > 0.0);
    assert!(metric(&csv, "marginal_tv").unwrap() <= 1.0);
    assert!(metric(&csv, "mean_stop_step").unwrap() <= 10.0);
}

#[test]
fn eval_without_enumeration_skips_exact_nll() {
    let f = Fixture::new(8);
    f.train("run", &[]);
    let out = ok(&[
        "eval",
        "--checkpoint",
        s(&f.p("run/checkpoint.hgck")),
        "--dataset",
        s(&f.p("data.lds")),
        "--draws",
        "4",
        "--samples",
        "0",
    ]);
    let csv = stdout(&out);
    assert!(metric(&csv, "loss_per_token").unwrap() > 0.0);
    assert!(!csv.contains("exact_nll") && !csv.contains("marginal_tv"));
}
