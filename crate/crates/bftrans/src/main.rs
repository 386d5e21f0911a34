//! Command-line entry point: synth, train, track, eval, ablate, gradcheck,
//! selftest. Every failure exits nonzero with a single-line reason on
//! stderr. `BFT_THREADS` caps the worker pool.

use bftrans::config::RunConfig;
use bftrans::error::{Error, Result};
use bftrans::model::Variant;
use bftrans::tensor::ParamStore;
use bftrans::{ablate, data, eval, selftest, tracker, train};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

const CONFIG_HELP: &str = "\
Config file keys (INI sections, `key = value`, `#` comments):
  [run]      preset (desk|paper|gradcheck), seed, variant (baseline|ffm|bfm|bidir|full)
  [backbone] d, stage_channels (4 ints), strides (4 ints, last must be 2),
             template_size, search_size, corr_group
  [tape]     enabled, ratio, kernel, multiplicative, alpha_init, in_self
  [fusion]   depth, ffn_expansion, share_streams, share_self
  [heads]    depth, window_gamma
  [loss]     lambda1, lambda2
  [train]    epochs, pairs_per_epoch, batch_size, lr_backbone, lr_rest,
             weight_decay, decay_at, decay_factor, clip_norm, max_frame_gap
  [synth]    frames, frame_w, frame_h, object (rect|ellipse),
             motion (linear|sinusoidal|random_walk), speed, scale_drift,
             occluder, clutter, deform, illumination

Environment: BFT_THREADS caps the worker-thread count.";

#[derive(Parser)]
#[command(
    name = "bftrans",
    version,
    about = "Bidirectional fusion transformer tracker: synthetic data, training, tracking, evaluation",
    after_help = CONFIG_HELP
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic sequence, or the 12+3 attribute suite with --suite.
    Synth {
        /// Run-config file; desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (sequence dir, or suite root with --suite).
        #[arg(long)]
        out: PathBuf,
        /// Emit the standard attribute suite: train/ (12 seqs) + test/ (3).
        #[arg(long)]
        suite: bool,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a variant on a sequence directory and write a BFT1 checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (uses its train/ subdirectory when present).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Loss-log CSV path; defaults to <out>.loss.csv.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config variant (baseline|ffm|bfm|bidir|full).
        #[arg(long)]
        variant: Option<String>,
    },
    /// Run the tracker over one sequence, writing one "x,y,w,h" line per frame.
    Track {
        /// BFT1 checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Sequence directory (img/ + groundtruth.csv).
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: Option<String>,
        /// Run-config file; desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score results against ground truth (single sequence, or a results
    /// directory against a dataset directory for attribute tables).
    Eval {
        /// Results CSV, or a directory of <sequence>.csv files.
        #[arg(long)]
        results: PathBuf,
        /// groundtruth.csv, a sequence dir, or a dataset dir.
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated attribute tags to report (directory mode).
        #[arg(long)]
        attr: Option<String>,
        /// Write the success/precision plot as SVG.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Write the report CSV here instead of stdout only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train, track, and score all five variants with a shared seed.
    Ablate {
        /// Dataset root containing train/ and test/.
        #[arg(long)]
        data: PathBuf,
        /// Output table CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// tensor | tape | fusion | heads | all
        #[arg(long, default_value = "all")]
        scope: String,
    },
    /// Run every module's dataset-free invariant suite.
    Selftest,
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::desk()),
    }
}

fn data_root(dir: &Path) -> PathBuf {
    let train = dir.join("train");
    if train.is_dir() {
        train
    } else {
        dir.to_path_buf()
    }
}

fn cmd_eval(
    results: &Path,
    gt: &Path,
    attr: Option<&str>,
    plot: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    if results.is_dir() {
        // directory mode: <results>/<name>.csv against <gt>/<name>/groundtruth.csv
        let mut files: Vec<PathBuf> = std::fs::read_dir(results)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("no result CSVs in {}", results.display())));
        }
        let mut per_seq = Vec::new();
        let mut all_success = 0.0;
        let mut all_p20 = 0.0;
        for f in &files {
            let name = f.file_stem().unwrap().to_string_lossy().to_string();
            let seq = data::load_sequence(&gt.join(&name))?;
            let pred = data::load_boxes(f)?;
            let s = eval::success_curve(&pred, &seq.boxes)?;
            let p = eval::precision_curve(&pred, &seq.boxes)?;
            all_success += s.auc;
            all_p20 += p.p20.unwrap_or(0.0);
            per_seq.push((name, s.auc, seq.tags.clone()));
        }
        let n = files.len() as f64;
        println!(
            "sequences={} success_auc={} precision_p20={}",
            files.len(),
            all_success / n,
            all_p20 / n
        );
        let mut rows = eval::attribute_report(&per_seq);
        if let Some(filter) = attr {
            let keep: Vec<&str> = filter.split(',').map(|t| t.trim()).collect();
            rows.retain(|r| keep.contains(&r.tag.as_str()));
        }
        for r in &rows {
            println!("attr {} mean_auc={} sequences={}", r.tag, r.mean_auc, r.sequences);
        }
        if let Some(path) = out {
            let mut text = String::from("sequence,success_auc\n");
            for (name, auc, _) in &per_seq {
                text.push_str(&format!("{name},{auc}\n"));
            }
            for r in &rows {
                text.push_str(&format!("attr_{},{}\n", r.tag, r.mean_auc));
            }
            std::fs::write(path, text)?;
        }
        Ok(())
    } else {
        let pred = data::load_boxes(results)?;
        let gt_file = if gt.is_dir() { gt.join("groundtruth.csv") } else { gt.to_path_buf() };
        let gt_boxes = data::load_boxes(&gt_file)?;
        let s = eval::success_curve(&pred, &gt_boxes)?;
        let p = eval::precision_curve(&pred, &gt_boxes)?;
        println!(
            "frames={} success_auc={} precision_p20={}",
            pred.len(),
            s.auc,
            p.p20.unwrap_or(0.0)
        );
        if let Some(path) = out {
            eval::write_report_csv(path, &s, &p, &[])?;
        }
        if let Some(path) = plot {
            eval::write_plot_svg(path, &s, &p)?;
        }
        Ok(())
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Synth { config, out, suite, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            if suite {
                let (train, test) = data::generate_suite(&out, cfg.seed)?;
                println!(
                    "wrote {} train and {} test sequences under {}",
                    train.len(),
                    test.len(),
                    out.display()
                );
            } else {
                let ds = data::generate(&cfg.synth, &out)?;
                println!("wrote sequence '{}' with {} frames", ds.name, ds.len());
            }
            Ok(())
        }
        Cmd::Train { config, data: data_dir, out, log, seed, variant } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            if let Some(v) = variant {
                cfg.variant = Variant::parse(&v)?;
            }
            let dataset = data::load_dataset(&data_root(&data_dir))?;
            let mcfg = cfg.model_config();
            let mut store = bftrans::model::init_params(&mcfg, cfg.seed)?;
            let log_path = log.unwrap_or_else(|| out.with_extension("loss.csv"));
            let rows =
                train::train(&mut store, &mcfg, &dataset, &cfg.train, Some(&out), Some(&log_path))?;
            let last = rows.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!(
                "trained variant {} for {} iterations, final loss {last}, checkpoint {}",
                mcfg.variant.as_str(),
                rows.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Track { model, seq, out, variant, config } => {
            let mut cfg = load_config(&config)?;
            if let Some(v) = variant {
                cfg.variant = Variant::parse(&v)?;
            }
            let store = ParamStore::load(&model)?;
            let ds = data::load_sequence(&seq)?;
            let mcfg = cfg.model_config();
            let boxes = tracker::track_sequence(&ds, &store, &mcfg, Some(&out))?;
            println!("tracked {} frames of '{}' -> {}", boxes.len(), ds.name, out.display());
            Ok(())
        }
        Cmd::Eval { results, gt, attr, plot, out } => {
            cmd_eval(&results, &gt, attr.as_deref(), plot.as_deref(), out.as_deref())
        }
        Cmd::Ablate { data: data_dir, out, config, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            let (train_set, test_set) = ablate::load_split(&data_dir)?;
            let rows = ablate::run(&cfg, &train_set, &test_set, Some(&out))?;
            for r in &rows {
                println!("{} success={} precision={}", r.variant.as_str(), r.success, r.precision);
            }
            println!("table -> {}", out.display());
            Ok(())
        }
        Cmd::Gradcheck { seed, tol, scope } => {
            let report = selftest::gradcheck_scope(&scope, seed, tol)?;
            let status = if report.passed() { "PASS" } else { "FAIL" };
            println!(
                "{status} max_rel_err={:e} scalars={} scope={scope} seed={seed} tol={tol:e}",
                report.max_rel_err, report.scalars_checked
            );
            if !report.passed() {
                if let Some((name, idx, a, n)) = &report.worst {
                    eprintln!("error: worst entry {name}[{idx}]: analytic {a:e} vs numeric {n:e}");
                }
                std::process::exit(1);
            }
            Ok(())
        }
        Cmd::Selftest => {
            let results = selftest::run_all();
            let mut failed = 0;
            for r in &results {
                match &r.outcome {
                    Ok(detail) => println!("PASS {}: {detail}", r.name),
                    Err(e) => {
                        failed += 1;
                        println!("FAIL {}: {e}", r.name);
                    }
                }
            }
            println!("{} checks, {} failed", results.len(), failed);
            if failed > 0 {
                std::process::exit(1);
            }
            Ok(())
        }
    }
}

fn main() {
    if let Ok(threads) = std::env::var("BFT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .ok();
        }
    }
    if let Err(e) = real_main() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
