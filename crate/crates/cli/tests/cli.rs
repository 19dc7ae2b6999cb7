use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fan_core::data::{load_png, save_png, synthetic_image};
use fan_core::metrics::{psnr_y, ssim, SsimParams};
use fan_core::model::weights::save_model;
use fan_core::model::{FanConfig, FanModel};
use fan_core::tensor::{resize_bicubic, Ratio};
use fan_core::{Shape, Tensor};
use tempfile::tempdir;

fn fan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fan")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn levels(h: usize, w: usize, seed: usize, max: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| ((c * 37 + y * 11 + x * 5 + seed * 13) % max) as f32 / 255.0)
}

fn tiny_model() -> FanModel<f32> {
    let cfg = FanConfig {
        cagrdbs_per_branch: 1,
        rdbs_per_cagrdb: 1,
        rdb_layers: 2,
        rdb_growth: 4,
        branch_channels: vec![4, 4, 4],
        ca_reduction: 2,
        fusion_channels: 4,
        ..FanConfig::fan(3)
    };
    FanModel::new(cfg, 1).unwrap()
}

#[test]
fn identical_dirs_score_inf_and_one() {
    let d = tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    for i in 0..3 {
        let img = levels(16, 20, i, 256);
        save_png(&img, &a.join(format!("{i}.png"))).unwrap();
        save_png(&img, &b.join(format!("{i}.png"))).unwrap();
    }
    let out = fan(&["eval", "--pred", p(&a), "--gt", p(&b)]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("path,psnr_db,ssim\n"));
    let r = rows(&text);
    assert_eq!(r.len(), 4);
    for row in &r {
        assert_eq!(row[1], "inf");
        assert_eq!(row[2].parse::<f64>().unwrap(), 1.0);
    }
    assert_eq!(r[3][0], "MEAN");
}

#[test]
fn luma_offset_of_a_tenth_scores_twenty_db() {
    // 8-bit files cannot hold an offset of 25.5 levels per channel, but
    // (18, 30, 22) levels move BT.601 luma by exactly 25.5/255.
    let d = tempdir().unwrap();
    let (pred, gt) = (d.path().join("pred"), d.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    let offset = [18.0f32, 30.0, 22.0];
    for i in 0..2 {
        let g = levels(16, 16, i, 200);
        let q = Tensor::from_fn(g.shape(), |n, c, y, x| g.at(n, c, y, x) + offset[c] / 255.0);
        save_png(&g, &gt.join(format!("{i}.png"))).unwrap();
        save_png(&q, &pred.join(format!("{i}.png"))).unwrap();
    }
    let csv = d.path().join("scores.csv");
    let out = fan(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--csv", p(&csv)]);
    assert!(out.status.success());
    for row in rows(&fs::read_to_string(&csv).unwrap()) {
        let db: f64 = row[1].parse().unwrap();
        assert!((db - 20.0).abs() < 1e-6, "{row:?}");
    }
}

#[test]
fn bicubic_mean_matches_the_metrics_module() {
    let d = tempdir().unwrap();
    let [clean, lr, hr, pred] = ["clean", "lr", "hr", "pred"].map(|s| d.path().join(s));
    for dir in [&clean, &pred] {
        fs::create_dir_all(dir).unwrap();
    }
    for i in 0..3 {
        save_png(&synthetic_image(48, 40, 3, i), &clean.join(format!("img{i}.png"))).unwrap();
    }
    let out = fan(&["degrade", "--in", p(&clean), "--out-lr", p(&lr), "--out-hr", p(&hr), "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let (mut psnr_sum, mut ssim_sum) = (0.0, 0.0);
    for i in 0..3 {
        let name = format!("img{i}.png");
        let x = load_png(&lr.join(&name)).unwrap();
        assert_eq!((x.shape().h, x.shape().w), (12, 10));
        save_png(&resize_bicubic(&x, Ratio::up(4)).unwrap(), &pred.join(&name)).unwrap();
        let (y, g) = (load_png(&pred.join(&name)).unwrap(), load_png(&hr.join(&name)).unwrap());
        psnr_sum += psnr_y(&y, &g, 1.0).unwrap();
        ssim_sum += ssim(&y, &g, &SsimParams::default()).unwrap();
    }
    let out = fan(&["eval", "--pred", p(&pred), "--gt", p(&hr)]);
    assert!(out.status.success());
    let r = rows(&stdout(&out));
    let mean = r.iter().find(|row| row[0] == "MEAN").unwrap();
    assert!((mean[1].parse::<f64>().unwrap() - psnr_sum / 3.0).abs() < 1e-9);
    assert!((mean[2].parse::<f64>().unwrap() - ssim_sum / 3.0).abs() < 1e-9);
}

#[test]
fn unpairable_file_fails_but_scores_the_rest() {
    let d = tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    let img = levels(16, 16, 0, 256);
    save_png(&img, &a.join("both.png")).unwrap();
    save_png(&img, &b.join("both.png")).unwrap();
    save_png(&img, &a.join("orphan.png")).unwrap();
    let out = fan(&["eval", "--pred", p(&a), "--gt", p(&b)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("both.png,inf,1"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("orphan.png"));
}

#[test]
fn degrade_rejects_indivisible_images() {
    let d = tempdir().unwrap();
    let clean = d.path().join("clean");
    fs::create_dir_all(&clean).unwrap();
    save_png(&levels(18, 16, 0, 256), &clean.join("odd.png")).unwrap();
    save_png(&levels(16, 16, 0, 256), &clean.join("even.png")).unwrap();
    let (lr, hr) = (d.path().join("lr"), d.path().join("hr"));
    let out = fan(&["degrade", "--in", p(&clean), "--out-lr", p(&lr), "--out-hr", p(&hr)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(lr.join("even.png").exists());
    assert!(!lr.join("odd.png").exists());
}

#[test]
fn infer_writes_four_times_larger_images() {
    let d = tempdir().unwrap();
    let model = tiny_model();
    let weights = d.path().join("m.fanw");
    save_model(&model, &weights).unwrap();
    let input = d.path().join("in");
    fs::create_dir_all(&input).unwrap();
    let x = levels(24, 20, 1, 256);
    save_png(&x, &input.join("x.png")).unwrap();

    for (dir, extra) in [("plain", vec![]), ("tiled", vec!["--tile", "16"]), ("plus", vec!["--self-ensemble"])] {
        let out_dir = d.path().join(dir);
        let mut args = vec!["infer", "--model", p(&weights), "--in", p(&input), "--out", p(&out_dir)];
        args.extend(extra);
        let out = fan(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let y = load_png(&out_dir.join("x.png")).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 96, 80));
    }
    // the whole-image run is the model itself, up to PNG quantization
    let direct = model.forward(&load_png(&input.join("x.png")).unwrap()).unwrap();
    let y = load_png(&d.path().join("plain/x.png")).unwrap();
    let clamped = direct.map(|v| v.clamp(0.0, 1.0));
    assert!(y.max_abs_diff(&clamped) <= 0.5 / 255.0 + 1e-6);
}

#[test]
fn infer_rejects_bad_tiles() {
    let d = tempdir().unwrap();
    let weights = d.path().join("m.fanw");
    save_model(&tiny_model(), &weights).unwrap();
    let out = fan(&["infer", "--model", p(&weights), "--in", p(d.path()), "--out", p(d.path()), "--tile", "30"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_writes_logs_and_resumes_exactly() {
    let d = tempdir().unwrap();
    let config = d.path().join("run.json");
    fs::write(
        &config,
        r#"{
            "model": {"cagrdbs_per_branch": 1, "rdbs_per_cagrdb": 1, "rdb_layers": 2, "rdb_growth": 4,
                      "branch_channels": [4, 4, 4], "ca_reduction": 2, "fusion_channels": 4},
            "train": {"batch": 2, "epochs": 2, "patch": 8, "workers": 2},
            "synthetic_size": 32
        }"#,
    )
    .unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let base = ["train", "--config", p(&config), "--synthetic", "4", "--seed", "3"];
    let out = fan(&[&base[..], &["--out", p(&a)]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["log.csv", "ckpt_epoch_0.fanw", "ckpt_epoch_1.fanw", "best.fanw"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(a.join("log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,epoch,lr,loss,train_psnr"));
    assert_eq!(log.lines().count(), 1 + 4);

    let resume = a.join("ckpt_epoch_0.fanw");
    let out = fan(&[&base[..], &["--out", p(&b), "--resume", p(&resume)]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(a.join("ckpt_epoch_1.fanw")).unwrap(),
        fs::read(b.join("ckpt_epoch_1.fanw")).unwrap()
    );
}

#[test]
fn train_needs_a_data_source() {
    let d = tempdir().unwrap();
    let out = fan(&["train", "--out", p(d.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn params_reports_totals_and_ablations() {
    let d = tempdir().unwrap();
    let cfg = d.path().join("fan2.json");
    fs::write(&cfg, r#"{"num_branches": 2, "branch_channels": [64, 128]}"#).unwrap();
    let out = fan(&["params", "--config", p(&cfg), "--ablation"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let total = FanModel::<f32>::new(
        FanConfig {
            num_branches: 2,
            branch_channels: vec![64, 128],
            ..FanConfig::default()
        },
        0,
    )
    .unwrap()
    .count_params();
    assert!(text.lines().any(|l| l.starts_with("total") && l.ends_with(&total.to_string())));
    for label in ["FAN-1", "FAN-4", "CA off NL off", "CA on NL on"] {
        assert!(text.contains(label), "{label}");
    }

    fs::write(&cfg, r#"{"num_branches": 7}"#).unwrap();
    assert_eq!(fan(&["params", "--config", p(&cfg)]).status.code(), Some(1));
}

#[test]
fn gradcheck_single_op_and_unknown_name() {
    let out = fan(&["gradcheck", "--ops", "conv2d", "--instances", "3"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("conv2d"));
    assert_eq!(fan(&["gradcheck", "--ops", "nope"]).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fan(&["eval", "--pred", "x"]).status.code(), Some(1));
    assert_eq!(fan(&["frobnicate"]).status.code(), Some(1));
    assert!(fan(&["--help"]).status.success());
}
