use std::fs;
use std::path::Path;

use mpt_core::analyze::{checkpoint_histograms, SparsityReport};
use mpt_core::bench::{bench_select as run_bench_select, select_csv};
use mpt_core::data::{load_cifar10, load_idx_dir, synth_splits, Checkpoint, DataSplits, Dataset, Split};
use mpt_core::nn::{argmax_rows, LayerSpec, NetworkSpec};
use mpt_core::sparse::{bench_inference, compact_model, sparse_forward, CompactModel, MIN_BENCH_REPEATS};
use mpt_core::supermask::{Scope, SelectionPolicy};
use mpt_core::trainer::{
    self, best_cell, finetune_grid, grid_csv, metrics_csv, train_mpt_observed, EpochMetrics, FinetuneConfig,
    GridAxes, TrainConfig,
};

use crate::config::echo_path;
use crate::{
    AnalyzeArgs, BenchSelectArgs, DataArgs, DatasetKind, Failure, FinetuneArgs, InferArgs, InferMode, ScopeKind,
    SelectKind, TrainArgs,
};

type Outcome = Result<(), Failure>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Other(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Other(format!("cannot write {}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn same_file(a: &Path, b: &Path) -> bool {
    a == b || matches!((a.canonicalize(), b.canonicalize()), (Ok(x), Ok(y)) if x == y)
}

fn print_epoch(m: &EpochMetrics) {
    eprintln!(
        "{} epoch {}: loss {:.4}, test accuracy {:.4}, pruned {:.4}, {:.1}s",
        m.phase.tag(),
        m.epoch,
        m.train_loss,
        m.test_accuracy,
        m.actual_prune_ratio,
        m.epoch_time_s
    );
}

impl DataArgs {
    /// Flags that can be rejected before any data is read.
    fn check(&self) -> Outcome {
        if self.dataset != DatasetKind::Synthetic && self.data.is_none() {
            return Err(Failure::Usage("--data DIR is required for cifar10 and idx datasets".into()));
        }
        for (name, v) in [
            ("--train-size", self.train_size),
            ("--test-size", self.test_size),
            ("--classes", self.classes),
            ("--image-size", self.image_size),
            ("--channels", self.channels),
        ] {
            if v == Some(0) {
                return Err(Failure::Usage(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Loads and normalizes both splits; synthetic data follows `like` when
    /// no explicit shape is given.
    fn load(&self, like: Option<&NetworkSpec>) -> Result<DataSplits, Failure> {
        let truncate = |d: Dataset, n: Option<usize>| match n {
            Some(n) => d.truncate(n),
            None => d,
        };
        let splits = match self.dataset {
            DatasetKind::Synthetic => {
                let [c, h, _] = like.map_or([3, 32, 32], |s| s.input_shape);
                let side = self.image_size.unwrap_or(h);
                let shape = [self.channels.unwrap_or(c), side, side];
                let classes = self.classes.unwrap_or(like.map_or(10, |s| s.num_classes));
                synth_splits(
                    self.data_seed,
                    self.train_size.unwrap_or(2048),
                    self.test_size.unwrap_or(512),
                    classes,
                    shape,
                )?
            }
            DatasetKind::Cifar10 => {
                let dir = self.data.as_deref().expect("checked");
                DataSplits::normalized(
                    load_cifar10(dir, Split::Train, self.train_size)?,
                    load_cifar10(dir, Split::Test, self.test_size)?,
                )?
            }
            DatasetKind::Idx => {
                let dir = self.data.as_deref().expect("checked");
                DataSplits::normalized(
                    truncate(load_idx_dir(dir, Split::Train)?, self.train_size),
                    truncate(load_idx_dir(dir, Split::Test)?, self.test_size),
                )?
            }
        };
        if let Some(spec) = like {
            if splits.train.sample_shape() != spec.input_shape || splits.train.num_classes > spec.num_classes {
                return Err(Failure::Data(format!(
                    "data samples {:?} with {} classes do not fit a network for {:?} with {} classes",
                    splits.train.sample_shape(),
                    splits.train.num_classes,
                    spec.input_shape,
                    spec.num_classes
                )));
            }
        }
        Ok(splits)
    }
}

impl TrainArgs {
    fn to_config(&self) -> Result<TrainConfig, Failure> {
        let scope = match self.scope {
            ScopeKind::Global => Scope::Global,
            ScopeKind::Layer => Scope::Layerwise,
        };
        let (selection, calibrate_theta) = match (self.select, self.theta, self.calibrate_theta) {
            (SelectKind::Topk, None, false) => (SelectionPolicy::topk(self.prune_ratio, scope), None),
            (SelectKind::Topk, _, _) => {
                return Err(Failure::Usage("--theta and --calibrate-theta need --select threshold".into()))
            }
            (SelectKind::Threshold, Some(_), true) => {
                return Err(Failure::Usage("give either --theta or --calibrate-theta, not both".into()))
            }
            (SelectKind::Threshold, Some(theta), false) => (SelectionPolicy::threshold(theta), None),
            (SelectKind::Threshold, None, true) => (SelectionPolicy::threshold(0.0), Some(self.prune_ratio)),
            (SelectKind::Threshold, None, false) => {
                return Err(Failure::Usage("threshold selection needs --theta or --calibrate-theta".into()))
            }
        };
        let config = TrainConfig {
            arch: self.arch,
            alpha: self.alpha,
            powerprop: !self.no_powerprop,
            selection,
            calibrate_theta,
            score_bound: self.score_bound,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            lr: self.lr,
            lr_schedule: self.lr_schedule,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn train(args: TrainArgs, echo: &str) -> Outcome {
    let config = args.to_config()?;
    args.data.check()?;
    if same_file(&args.out, &args.metrics) {
        return Err(Failure::Usage("--out and --metrics must differ".into()));
    }
    let data = args.data.load(None)?;
    let (ckpt, rows) = train_mpt_observed(&config, &data, print_epoch)?;
    write(&args.out, ckpt.to_bytes())?;
    write(&args.metrics, metrics_csv(&rows))?;
    write(&echo_path(&args.out), echo)
}

impl FinetuneArgs {
    fn to_config(&self) -> Result<FinetuneConfig, Failure> {
        let config = FinetuneConfig {
            scope: self.scope,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            lr: self.lr,
            lr_schedule: self.lr_schedule,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn finetune(args: FinetuneArgs, echo: &str) -> Outcome {
    let config = args.to_config()?;
    args.data.check()?;
    if let (Some(out), Some(metrics)) = (&args.out, &args.metrics) {
        if same_file(out, &args.ckpt) {
            return Err(Failure::Usage("--out must not overwrite the input checkpoint".into()));
        }
        if same_file(out, metrics) {
            return Err(Failure::Usage("--out and --metrics must differ".into()));
        }
    }
    let ckpt = load_checkpoint(&args.ckpt)?;
    let data = args.data.load(Some(&ckpt.spec))?;

    if args.grid {
        let axes = GridAxes::default();
        let total = axes.len();
        let mut done = 0;
        let cells = finetune_grid(&ckpt, &axes, &config, &data, |cell| {
            done += 1;
            eprintln!("grid {done}/{total}: {}", cell.csv_row());
        })?;
        let best = best_cell(&cells).expect("grid is nonempty");
        let results = args.grid_dir.join("grid_results.csv");
        write(&results, grid_csv(&cells))?;
        write(&args.grid_dir.join("grid_best.txt"), grid_csv(std::slice::from_ref(best)))?;
        write(&echo_path(&results), echo)?;
        println!("best cell: {}", best.csv_row());
        return Ok(());
    }

    let (tuned, rows) = trainer::finetune(&ckpt, &config, &data)?;
    rows.iter().for_each(print_epoch);
    let out = args.out.as_deref().expect("required without --grid");
    write(out, tuned.to_bytes())?;
    write(args.metrics.as_deref().expect("required without --grid"), metrics_csv(&rows))?;
    write(&echo_path(out), echo)
}

pub fn analyze(args: AnalyzeArgs, echo: &str) -> Outcome {
    if args.bins == 0 {
        return Err(Failure::Usage("--bins must be >= 1".into()));
    }
    let ckpt = load_checkpoint(&args.ckpt)?;
    let report = SparsityReport::from_checkpoint(&ckpt).map_err(|e| Failure::Data(e.to_string()))?;
    let histograms = checkpoint_histograms(&ckpt, args.bins).map_err(|e| Failure::Data(e.to_string()))?;

    write(&args.report, report.to_json())?;
    for (j, (raw, effective)) in histograms.iter().enumerate() {
        write(&args.hist_dir.join(format!("layer{j}_raw.csv")), raw.to_csv())?;
        write(&args.hist_dir.join(format!("layer{j}_effective.csv")), effective.to_csv())?;
    }
    write(&echo_path(&args.report), echo)?;

    println!("acceleration rate {:.4}", report.acceleration_rate);
    println!("zero-kernel fraction {:.4}", report.zero_kernel_fraction);
    println!("prune ratio {:.4}", report.actual_prune_ratio);
    let linear = ckpt.spec.layers.iter().filter(|l| matches!(l, LayerSpec::Linear { .. })).count();
    if linear > 0 {
        println!("note: {linear} linear layers have no kernels and are left out of the acceleration rate");
    }
    Ok(())
}

fn sparse_predictions(model: &CompactModel<f32>, data: &Dataset) -> Result<Vec<usize>, Failure> {
    let mut out = Vec::with_capacity(data.len());
    for batch in data.sequential_batches(256) {
        let (x, _) = data.batch(&batch);
        out.extend(argmax_rows(&sparse_forward(model, &x)?));
    }
    Ok(out)
}

pub fn infer(args: InferArgs, echo: &str) -> Outcome {
    let bench = args.bench || args.bench_out.is_some();
    if args.repeats < MIN_BENCH_REPEATS {
        return Err(Failure::Usage(format!("--repeats must be >= {MIN_BENCH_REPEATS}, got {}", args.repeats)));
    }
    if args.bench_batch == 0 {
        return Err(Failure::Usage("--bench-batch must be >= 1".into()));
    }
    args.data.check()?;
    let ckpt = load_checkpoint(&args.ckpt)?;
    let data = args.data.load(Some(&ckpt.spec))?;
    let test = &data.test;
    let model = compact_model::<f32>(&ckpt)?;

    let dense = match args.mode {
        InferMode::Sparse => None,
        _ => Some(trainer::predict(&ckpt.spec, &ckpt.effective_weights::<f32>()?, test)?),
    };
    let sparse = match args.mode {
        InferMode::Dense => None,
        _ => Some(sparse_predictions(&model, test)?),
    };
    if let Some(p) = &dense {
        println!("dense accuracy {:.6}", trainer::accuracy(p, &test.labels));
    }
    if let Some(p) = &sparse {
        println!("sparse accuracy {:.6}", trainer::accuracy(p, &test.labels));
    }
    if let (Some(d), Some(s)) = (&dense, &sparse) {
        if let Some(i) = d.iter().zip(s).position(|(a, b)| a != b) {
            return Err(Failure::Mismatch(format!(
                "dense and sparse predictions differ on test sample {i}: {} vs {}",
                d[i], s[i]
            )));
        }
    }

    if bench {
        let n = args.bench_batch.min(test.len());
        let (x, _) = test.batch(&(0..n).collect::<Vec<_>>());
        let json = bench_inference(&model, &x, args.repeats)?.to_json();
        println!("{json}");
        if let Some(path) = &args.bench_out {
            write(path, &json)?;
            write(&echo_path(path), echo)?;
        }
    }
    Ok(())
}

pub fn bench_select(args: BenchSelectArgs, echo: &str) -> Outcome {
    if args.sizes.is_empty() || args.alphas.is_empty() || args.iters == 0 {
        return Err(Failure::Usage("--sizes, --alphas and --iters must be nonempty".into()));
    }
    if let Some(&a) = args.alphas.iter().find(|&&a| !(a >= 1.0 && a.is_finite())) {
        return Err(Failure::Usage(format!("alpha must be >= 1, got {a}")));
    }
    if args.sizes.contains(&0) {
        return Err(Failure::Usage("score populations must be nonempty".into()));
    }
    let rows = run_bench_select(&args.sizes, &args.alphas, args.iters, args.seed)?;
    for row in &rows {
        println!("{}", row.csv_row());
    }
    write(&args.out, select_csv(&rows))?;
    write(&echo_path(&args.out), echo)
}

