use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mpt_core::data::{Checkpoint, LayerState, Phase};
use mpt_core::nn::{Arch, LayerSpec, NetworkSpec};
use mpt_core::supermask::Mask;
use mpt_core::Tensor;
use tempfile::TempDir;

fn mpt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpt")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: [&str; 10] = [
    "--arch",
    "conv2",
    "--train-size",
    "64",
    "--test-size",
    "32",
    "--classes",
    "2",
    "--image-size",
    "8",
];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend(TINY);
    args.extend(["--batch-size", "16"]);
    args.extend(extra);
    mpt(dir, &args)
}

fn trained(dir: &Path) {
    let o = train(dir, &["--epochs", "1", "--out", "a.ckpt", "--metrics", "a.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

fn without_time(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

fn all_kept_checkpoint() -> Checkpoint {
    let spec = NetworkSpec::conv_family(Arch::Conv2, [3, 8, 8], 2).unwrap();
    let layers = spec
        .prunable_layers()
        .iter()
        .map(|l| {
            let w = Tensor::from_fn(&l.weight_shape, |i| if i % 3 == 0 { -0.5 } else { 0.25 });
            let s = Tensor::from_fn(&l.weight_shape, |i| (i % 17) as f32 / 17.0);
            LayerState::new(w, s, Mask::ones(&l.weight_shape), 1.0).unwrap()
        })
        .collect();
    Checkpoint {
        spec,
        layers,
        seed: 0,
        phase: Phase::Mpt,
    }
}

#[test]
fn missing_out_is_a_usage_error_and_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let o = train(dir.path(), &["--epochs", "1", "--metrics", "m.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn invalid_selection_flags_write_nothing() {
    let dir = TempDir::new().unwrap();
    let o = train(dir.path(), &["--select", "threshold", "--out", "a.ckpt", "--metrics", "a.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let o = train(dir.path(), &["--alpha", "2", "--no-powerprop", "--out", "a.ckpt", "--metrics", "a.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn two_epochs_give_two_metric_rows() {
    let dir = TempDir::new().unwrap();
    let o = train(dir.path(), &["--epochs", "2", "--out", "a.ckpt", "--metrics", "a.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "epoch,phase,train_loss,test_accuracy,actual_prune_ratio,epoch_time_s");
    assert!(lines[1].starts_with("1,mpt,") && lines[2].starts_with("2,mpt,"));
    let ckpt = Checkpoint::load(&dir.path().join("a.ckpt")).unwrap();
    assert_eq!(ckpt.phase, Phase::Mpt);
    let echo = fs::read_to_string(dir.path().join("a.ckpt.config")).unwrap();
    assert!(echo.lines().any(|l| l == "epochs=2"));
}

#[test]
fn alpha_one_matches_powerprop_bypass() {
    let dir = TempDir::new().unwrap();
    let a = train(dir.path(), &["--epochs", "2", "--alpha", "1", "--out", "a.ckpt", "--metrics", "a.csv"]);
    let b = train(dir.path(), &["--epochs", "2", "--no-powerprop", "--out", "b.ckpt", "--metrics", "b.csv"]);
    assert_eq!((a.status.code(), b.status.code()), (Some(0), Some(0)));
    let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(without_time(&read("a.csv")), without_time(&read("b.csv")));
    assert_eq!(fs::read(dir.path().join("a.ckpt")).unwrap(), fs::read(dir.path().join("b.ckpt")).unwrap());
}

#[test]
fn config_file_fills_in_missing_flags() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.cfg"), "epochs=3\nseed=4\nout=ignored.ckpt\n").unwrap();
    let o = train(dir.path(), &["--config", "run.cfg", "--seed", "5", "--out", "a.ckpt", "--metrics", "a.csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(dir.path().join("a.csv")).unwrap().lines().count(), 4);
    let echo = fs::read_to_string(dir.path().join("a.ckpt.config")).unwrap();
    assert!(echo.lines().any(|l| l == "seed=5"));
    assert!(!dir.path().join("ignored.ckpt").exists());
}

#[test]
fn fully_pruned_layer_aborts_with_code_4() {
    let dir = TempDir::new().unwrap();
    let o = train(
        dir.path(),
        &["--select", "threshold", "--theta", "10", "--epochs", "1", "--out", "a.ckpt", "--metrics", "a.csv"],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fully pruned"));
}

#[test]
fn last_layer_finetune_leaves_conv_weights_alone() {
    let dir = TempDir::new().unwrap();
    trained(dir.path());
    let o = mpt(
        dir.path(),
        &["finetune", "--ckpt", "a.ckpt", "--scope", "last", "--epochs", "2", "--lr", "0.01", "--out", "b.ckpt", "--metrics", "b.csv"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let before = Checkpoint::load(&dir.path().join("a.ckpt")).unwrap();
    let after = Checkpoint::load(&dir.path().join("b.ckpt")).unwrap();
    assert_eq!(after.phase, Phase::Finetune);
    let convs = before.spec.layers.iter().filter(|l| matches!(l, LayerSpec::Conv2d(_))).count();
    for j in 0..convs {
        assert_eq!(before.layers[j].weights, after.layers[j].weights, "conv layer {j}");
    }
    let last = before.layers.len() - 1;
    assert_ne!(before.layers[last].weights, after.layers[last].weights);
    assert_eq!(before.masks(), after.masks());
}

#[test]
fn finetune_refuses_missing_or_overwritten_checkpoints() {
    let dir = TempDir::new().unwrap();
    let o = mpt(dir.path(), &["finetune", "--ckpt", "none.ckpt", "--out", "b.ckpt", "--metrics", "b.csv"]);
    assert_eq!(o.status.code(), Some(3));
    trained(dir.path());
    let original = fs::read(dir.path().join("a.ckpt")).unwrap();
    let o = mpt(dir.path(), &["finetune", "--ckpt", "a.ckpt", "--out", "a.ckpt", "--metrics", "b.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read(dir.path().join("a.ckpt")).unwrap(), original);
    assert!(!dir.path().join("b.csv").exists());
}

#[test]
fn grid_writes_one_row_per_cell_and_names_the_best() {
    let dir = TempDir::new().unwrap();
    trained(dir.path());
    let o = mpt(
        dir.path(),
        &["finetune", "--ckpt", "a.ckpt", "--grid", "--epochs", "1", "--train-size", "32", "--test-size", "16", "--grid-dir", "grid"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("grid/grid_results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "optimizer,schedule,lr,batch_size,scope,final_accuracy");
    assert_eq!(lines.len(), 1 + 2 * 3 * 4 * 4 * 3);
    let best = fs::read_to_string(dir.path().join("grid/grid_best.txt")).unwrap();
    let best_row = best.lines().nth(1).unwrap();
    assert!(lines.contains(&best_row));
    let top = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert_eq!(best_row.rsplit(',').next().unwrap().parse::<f64>().unwrap(), top);
    assert!(stdout(&o).contains(best_row));
}

#[test]
fn analyze_all_kept_checkpoint_has_unit_acceleration() {
    let dir = TempDir::new().unwrap();
    let ckpt = all_kept_checkpoint();
    ckpt.save(&dir.path().join("ones.ckpt")).unwrap();
    let o = mpt(dir.path(), &["analyze", "--ckpt", "ones.ckpt", "--report", "r.json", "--hist-dir", "h", "--bins", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["acceleration_rate"].as_f64(), Some(1.0));
    assert_eq!(report["zero_kernel_fraction"].as_f64(), Some(0.0));
    for (j, layer) in ckpt.layers.iter().enumerate() {
        for kind in ["raw", "effective"] {
            let csv = fs::read_to_string(dir.path().join(format!("h/layer{j}_{kind}.csv"))).unwrap();
            let rows: Vec<&str> = csv.lines().skip(1).collect();
            assert_eq!(rows.len(), 7);
            let total: usize = rows.iter().map(|r| r.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
            assert_eq!(total, layer.weights.len());
        }
    }
}

#[test]
fn analyze_rejects_corrupt_checkpoint() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.ckpt"), b"NOPE").unwrap();
    let o = mpt(dir.path(), &["analyze", "--ckpt", "bad.ckpt", "--report", "r.json", "--hist-dir", "h"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn infer_paths_agree_and_bench_matches_report() {
    let dir = TempDir::new().unwrap();
    trained(dir.path());
    let o = mpt(dir.path(), &["infer", "--ckpt", "a.ckpt", "--mode", "both", "--bench-out", "b.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let acc: Vec<&str> = out.lines().filter(|l| l.contains("accuracy")).map(|l| l.rsplit(' ').next().unwrap()).collect();
    assert_eq!(acc.len(), 2);
    assert_eq!(acc[0], acc[1]);

    let o = mpt(dir.path(), &["analyze", "--ckpt", "a.ckpt", "--report", "r.json", "--hist-dir", "h"]);
    assert_eq!(o.status.code(), Some(0));
    let read = |f: &str| serde_json::from_str::<serde_json::Value>(&fs::read_to_string(dir.path().join(f)).unwrap()).unwrap();
    let (bench, report) = (read("b.json"), read("r.json"));
    assert_eq!(bench["macs_dense"], report["macs_dense"]);
    assert_eq!(bench["macs_sparse"], report["macs_sparse"]);
    assert_eq!(bench["theoretical_ar"], report["acceleration_rate"]);
}

#[test]
fn infer_rejects_too_few_repeats() {
    let dir = TempDir::new().unwrap();
    trained(dir.path());
    let o = mpt(dir.path(), &["infer", "--ckpt", "a.ckpt", "--bench", "--repeats", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_select_csv_has_ratio_to_three_decimals() {
    let dir = TempDir::new().unwrap();
    let o = mpt(dir.path(), &["bench-select", "--sizes", "500,1000", "--alphas", "1,2", "--iters", "3", "--out", "s.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "size,alpha,sort_ns,threshold_ns,ratio,masks_equal");
    assert_eq!(lines.len(), 5);
    for row in &lines[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let (sort, thresh): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        assert_eq!(f[4], format!("{:.3}", sort / thresh));
        assert_eq!(f[5], "true");
    }
    assert!(dir.path().join("s.csv.config").exists());
}
