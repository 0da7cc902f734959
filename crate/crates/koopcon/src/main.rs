//! Command-line entry point: `condense`, `eval`, and `selftest`.
//!
//! Exit codes: 0 success, 2 usage/config errors, 3 data/format errors,
//! 4 numeric divergence. All artifacts land inside the configured output
//! directory, and every run writes a manifest (config hash, seed, artifact
//! checksums) sufficient to reproduce it bit-exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use koopcon::condense::{import_condensed, run_condensation, save_checkpoint, CondensedSet};
use koopcon::config::{load_config, Precision, RunConfig};
use koopcon::datasets::{holdout_split, load_split, DatasetKind, LabeledImages, Split};
use koopcon::error::{Error, Result};
use koopcon::evalharness::run_comparison;
use koopcon::losses::{exact_ot_oracle, sinkhorn_plan, squared_dist_matrix};
use koopcon::rng::{derive_seed, Rng};
use koopcon::scalar::Scalar;
use koopcon::tensor::{gradcheck, Tensor};

/// Seed-tag namespace for the optional test-split cap (disjoint from the
/// trainer and harness namespaces).
const TAG_TEST_CAP: u64 = 9 << 56;

#[derive(Parser)]
#[command(
    name = "koopcon",
    version,
    about = "Latent-space dataset condensation with an OT-regularized loss"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Condense the configured dataset into n' images per class.
    Condense {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Train matched classifiers on a condensed set and on a real subset,
    /// and compare them on held-out test data.
    Eval {
        /// Condensed set artifact (.kpcn) to evaluate.
        #[arg(long)]
        condensed: PathBuf,
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run gradient checks and the Sinkhorn-vs-oracle suite.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    check_thread_env()?;
    match cli.cmd {
        Command::Condense { config } => cmd_condense(&config),
        Command::Eval { condensed, config } => cmd_eval(&condensed, &config),
        Command::Selftest => cmd_selftest(),
    }
}

/// KOOPCON_THREADS caps worker threads. The compute kernels are sequential,
/// so every setting satisfies the cap and stays bit-exact; the variable is
/// still validated so typos fail loudly instead of being ignored.
fn check_thread_env() -> Result<usize> {
    match std::env::var("KOOPCON_THREADS") {
        Err(_) => Ok(1),
        Ok(raw) => match raw.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::config(
                "KOOPCON_THREADS",
                format!("must be an integer >= 1, got {raw:?}"),
            )),
        },
    }
}

fn cmd_condense(config_path: &Path) -> Result<()> {
    let (cfg, warnings) = load_config(config_path)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    match Precision::parse(&cfg.precision)? {
        Precision::F32 => condense_with::<f32>(&cfg),
        Precision::F64 => condense_with::<f64>(&cfg),
    }
}

fn condense_with<S: Scalar>(cfg: &RunConfig) -> Result<()> {
    let kind = DatasetKind::parse(&cfg.dataset)?;
    let data: LabeledImages<S> = load_split(kind, Path::new(&cfg.data_dir), Split::Train)?;
    eprintln!(
        "loaded {} training images ({} classes) from {}",
        data.len(),
        data.class_count,
        cfg.dataset
    );

    let ccfg = cfg.condense_config()?;
    let (set, pipeline, history) = run_condensation(&data, &ccfg)?;

    let out_dir = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let kpcn = out_dir.join("condensed.kpcn");
    let kpck = out_dir.join("checkpoint.kpck");
    let losses = out_dir.join("losses.csv");
    let spread = out_dir.join("spread.csv");

    koopcon::condense::export_condensed(&set, &kpcn)?;
    let config_json = serde_json::to_value(cfg)
        .expect("config serializes")
        .to_string();
    save_checkpoint(&pipeline.graph, &pipeline.params, &config_json, cfg.hash(), &kpck)?;
    write_text(&losses, &history.to_csv())?;
    write_text(&spread, &history.spread_csv())?;
    write_manifest(
        out_dir,
        "manifest.json",
        "condense",
        cfg,
        &[&kpcn, &kpck, &losses, &spread],
    )?;

    let first = history.epoch_mean_total(1).unwrap_or(f64::NAN);
    let last = history.epoch_mean_total(ccfg.epochs).unwrap_or(f64::NAN);
    println!(
        "condensed {} -> {} images/class over {} epochs; mean total loss {first:.6} -> {last:.6}",
        cfg.dataset, cfg.img_per_class, ccfg.epochs
    );
    for path in [&kpcn, &kpck, &losses, &spread] {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_eval(condensed_path: &Path, config_path: &Path) -> Result<()> {
    let (cfg, warnings) = load_config(config_path)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let set = import_condensed(condensed_path)?;
    if set.provenance.config_hash != cfg.hash() {
        eprintln!(
            "note: condensed set was produced under a different config \
             (hash mismatch); evaluating anyway"
        );
    }
    match Precision::parse(&cfg.precision)? {
        Precision::F32 => eval_with::<f32>(&cfg, &set),
        Precision::F64 => eval_with::<f64>(&cfg, &set),
    }
}

fn eval_with<S: Scalar>(cfg: &RunConfig, set: &CondensedSet) -> Result<()> {
    let kind = DatasetKind::parse(&cfg.dataset)?;
    let data_dir = Path::new(&cfg.data_dir);
    let train: LabeledImages<S> = load_split(kind, data_dir, Split::Train)?;
    let test: LabeledImages<S> = load_split(kind, data_dir, Split::Test)?;
    let test = cap_per_class(&test, cfg.test_per_class, cfg.seed)?;
    eprintln!(
        "evaluating {} condensed images against {} real train / {} test images",
        set.len(),
        train.len(),
        test.len()
    );

    let report = run_comparison(set, &train, &test, &cfg.eval_config())?;

    let out_dir = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join("eval_report.csv");
    write_text(&csv, &report.to_csv())?;
    write_manifest(out_dir, "eval_manifest.json", "eval", cfg, &[&csv])?;

    print!("{}", report.to_table());
    println!("wrote {}", csv.display());
    Ok(())
}

/// Deterministically subsample `data` down to `cap` images per class;
/// 0 or a cap no class can miss means "keep everything".
fn cap_per_class<S: Scalar>(
    data: &LabeledImages<S>,
    cap: usize,
    seed: u64,
) -> Result<LabeledImages<S>> {
    if cap == 0 {
        return Ok(data.clone());
    }
    let smallest = (0..data.class_count)
        .map(|c| data.class_indices(c).len())
        .min()
        .unwrap_or(0);
    if smallest <= cap {
        return Ok(data.clone());
    }
    let (subset, _) = holdout_split(data, cap, derive_seed(seed, TAG_TEST_CAP))?;
    Ok(subset)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reproducibility manifest: config hash, seed, and a SHA-256 per artifact.
fn write_manifest(
    out_dir: &Path,
    name: &str,
    command: &str,
    cfg: &RunConfig,
    artifacts: &[&PathBuf],
) -> Result<()> {
    let mut sums = BTreeMap::new();
    for path in artifacts {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file_name = path
            .file_name()
            .expect("artifact has a name")
            .to_string_lossy()
            .to_string();
        sums.insert(file_name, hex(&Sha256::digest(&bytes)));
    }
    let manifest = serde_json::json!({
        "command": command,
        "dataset": cfg.dataset,
        "seed": cfg.seed,
        "config_hash": cfg.hash_hex(),
        "artifacts": sums,
    });
    let path = out_dir.join(name);
    write_text(&path, &format!("{manifest}\n"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------- selftest

struct SelfTest {
    failures: usize,
}

impl SelfTest {
    fn report(&mut self, name: &str, outcome: Result<bool>) {
        match outcome {
            Ok(true) => println!("selftest {name}: pass"),
            Ok(false) => {
                println!("selftest {name}: FAIL");
                self.failures += 1;
            }
            Err(e) => {
                println!("selftest {name}: FAIL ({e})");
                self.failures += 1;
            }
        }
    }
}

fn cmd_selftest() -> Result<()> {
    let mut t = SelfTest { failures: 0 };
    t.report("gradcheck matmul", grad_matmul());
    t.report("gradcheck conv2d", grad_conv2d());
    t.report("gradcheck attention", grad_attention());
    t.report("gradcheck loss terms", grad_losses());
    t.report("sinkhorn vs exact OT oracle", sinkhorn_vs_oracle());
    if t.failures > 0 {
        return Err(Error::numeric(
            "selftest",
            format!("{} check(s) failed", t.failures),
        ));
    }
    println!("selftest: all checks passed");
    Ok(())
}

fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.range(lo, hi)).collect();
    Tensor::from_vec(shape, data).expect("selftest tensor")
}

fn grad_matmul() -> Result<bool> {
    let mut rng = Rng::new(101);
    for _ in 0..3 {
        let a = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
        let b = rand_tensor(&mut rng, &[4, 2], -2.0, 2.0);
        let r = gradcheck::check(&[a, b], 1e-5, |g, vs| {
            let y = g.matmul(vs[0], vs[1])?;
            let s = g.sigmoid(y);
            Ok(g.sum(s))
        })?;
        if !r.passes(1e-4) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn grad_conv2d() -> Result<bool> {
    let mut rng = Rng::new(102);
    for _ in 0..3 {
        let x = rand_tensor(&mut rng, &[2, 2, 5, 5], -1.0, 1.0);
        let k = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let r = gradcheck::check(&[x, k], 1e-5, |g, vs| {
            let y = g.conv2d(vs[0], vs[1], 2, 1)?;
            let s = g.sigmoid(y);
            Ok(g.sum(s))
        })?;
        if !r.passes(1e-4) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn grad_attention() -> Result<bool> {
    let mut rng = Rng::new(103);
    for _ in 0..3 {
        let y = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
        let wq = rand_tensor(&mut rng, &[3, 3], -0.7, 0.7);
        let r = gradcheck::check(&[y, wq], 1e-5, |g, vs| {
            let q = g.matmul(vs[0], vs[1])?;
            let scores = g.matmul_nt(q, vs[0])?;
            let scaled = g.scale(scores, 1.0 / (3.0f64).sqrt());
            let att = g.softmax(scaled, 1)?;
            let out = g.matmul(att, vs[0])?;
            let s = g.sigmoid(out);
            Ok(g.sum(s))
        })?;
        if !r.passes(1e-4) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn grad_losses() -> Result<bool> {
    let mut rng = Rng::new(104);
    for i in 0..3 {
        // MSE + cross-entropy + covariance, combined into one scalar.
        let x = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
        let y = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
        let labels = [i % 3, 1, 2, 0];
        let r = gradcheck::check(&[x, y], 1e-5, |g, vs| {
            let mse = g.mse(vs[0], vs[1])?;
            let ce = g.cross_entropy(vs[0], &labels[..])?;
            let cov = koopcon::losses::covariance_loss(g, vs[1])?;
            let a = g.add(mse, ce)?;
            Ok(g.add(a, cov.var)?)
        })?;
        if !r.passes(1e-4) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn sinkhorn_vs_oracle() -> Result<bool> {
    let mut rng = Rng::new(105);
    for case in 0..10 {
        let n = 2 + case % 5;
        let d = [1, 2, 8][case % 3];
        let y = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
        let yp = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
        let cost = squared_dist_matrix(&y, &yp)?;
        let plan = sinkhorn_plan(&cost, 1e-3, 20_000, 1e-9)?;
        let exact = exact_ot_oracle(&y, &yp)?;
        let approx = plan.objective;
        let denom = exact.abs().max(1e-12);
        if (approx - exact).abs() / denom > 0.02 {
            return Ok(false);
        }
        if plan.marginal_err > 1e-6 {
            return Ok(false);
        }
    }
    Ok(true)
}
