//! Command-line front end.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::model::gradcheck::check_model;
use crate::molgraph::{parse_qm9_xyz, parse_sdf, Molecule, Target};
use crate::preprocess::{
    fit_lsm, load_qm9_dir, split_dataset, AtomRef, Dataset, DatasetSplit, SplitName, TargetTransform, SPECIES,
};
use crate::tensor::gradcheck::{check_all_ops, TOLERANCE};
use crate::tensor::OpKind;
use crate::train::{evaluate, train, write_metrics_csv, write_size_csv, Checkpoint};

pub use config::{default_data_dir, RunConfig, KEYS};

#[derive(Debug, Parser)]
#[command(name = "dgann", version, about = "Directed graph attention network for molecular properties")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit target transforms, train one model per seed, keep the best.
    Train(RunArgs),
    /// MAE of a checkpoint on labelled QM9 files, with a per-size table.
    Eval(EvalArgs),
    /// Per-molecule predictions in original units.
    Predict(InferArgs),
    /// Per-molecule [CLS] fingerprint vectors.
    Fingerprint(InferArgs),
    /// Finite-difference check of every operation and of the full model.
    Gradcheck(GradcheckArgs),
    /// Fit the per-species least-squares baseline and report its contraction.
    Lsm(RunArgs),
}

/// Options shared by commands that read a run configuration.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// key = value file; command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of QM9 .xyz files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, overrides_with = "no_augment")]
    pub augment: bool,
    #[arg(long, overrides_with = "augment")]
    pub no_augment: bool,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub interaction_blocks: Option<usize>,
    #[arg(long)]
    pub transformer_blocks: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Atom reference energies (element,U0,U,H,G in eV).
    #[arg(long)]
    pub atomref: Option<PathBuf>,
    /// Use a seeded random subset of this many files.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Run configuration (e.g. a run's config.echo) for data, sample and atomref.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Individual labelled .xyz files instead of a directory.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Checked against the checkpoint's target.
    #[arg(long)]
    pub target: Option<String>,
    /// Split manifest; restricts evaluation to `--split`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Per-size MAE CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub atomref: Option<PathBuf>,
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// .xyz (QM9 layout), .sdf or .mol files, or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only the per-operation checks.
    #[arg(long)]
    pub ops_only: bool,
    /// Scale one operation's adjoint, as OP or OP=FACTOR.
    #[arg(long, hide = true)]
    pub fault: Option<String>,
}

impl RunArgs {
    /// Defaults, then `--config`, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(p) = &self.config {
            c.apply_file(p)?;
        }
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        put("data", self.data.as_ref().map(|p| p.display().to_string()));
        put("target", self.target.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("d_model", self.d_model.map(|v| v.to_string()));
        put("heads", self.heads.map(|v| v.to_string()));
        put("interaction_blocks", self.interaction_blocks.map(|v| v.to_string()));
        put("transformer_blocks", self.transformer_blocks.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("batch", self.batch.map(|v| v.to_string()));
        put("atomref", self.atomref.as_ref().map(|p| p.display().to_string()));
        put("sample", self.sample.map(|v| v.to_string()));
        if self.augment {
            put("augment", Some("true".into()));
        }
        if self.no_augment {
            put("augment", Some("false".into()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("--set expects KEY=VALUE, got '{}'", kv)))?;
            put(k.trim(), Some(v.to_string()));
        }
        for (k, v) in pairs {
            c.set(&k, &v)?;
        }
        c.finish()
    }
}

pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| true),
        Command::Eval(a) => cmd_eval(&a).map(|_| true),
        Command::Predict(a) => cmd_infer(&a, false).map(|_| true),
        Command::Fingerprint(a) => cmd_infer(&a, true).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Lsm(a) => cmd_lsm(&a).map(|_| true),
    }
}

fn load_dataset(cfg: &RunConfig, target: Target) -> Result<Dataset> {
    let records = load_qm9_dir(&cfg.data, cfg.sample.map(|k| (k, cfg.seed)))?;
    let atomref = cfg.atomref.as_deref().map(AtomRef::read).transpose()?;
    log::info!("loaded {} molecules from {}", records.len(), cfg.data.display());
    Dataset::from_records(&records, target, atomref.as_ref())
}

fn load_split(cfg: &RunConfig, dataset: &Dataset) -> Result<DatasetSplit> {
    match &cfg.split {
        Some(p) => DatasetSplit::read_manifest(p, &dataset.ids(), cfg.seed),
        None => split_dataset(dataset.len(), cfg.seed),
    }
}

pub fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let target = cfg.require_target()?;
    let out = args
        .out
        .clone()
        .ok_or_else(|| Error::Data("train needs --out DIR".into()))?;
    let dataset = load_dataset(&cfg, target)?;
    let split = load_split(&cfg, &dataset)?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.echo"), cfg.echo())?;
    split.write_manifest(&out.join("split.csv"), &dataset.ids())?;
    let transform = TargetTransform::fit(
        target,
        &dataset.counts(&split.train),
        &dataset.targets(&split.train),
        cfg.train.standardize,
    )?;
    let outcome = train(cfg.model, &cfg.train, &dataset, &split, &transform)?;
    outcome.checkpoint.save(&out.join("model.dgnn"))?;
    write_metrics_csv(&out.join("metrics.csv"), &outcome.runs[outcome.selected].metrics)?;
    for r in &outcome.runs {
        write_metrics_csv(&out.join(format!("metrics_seed{}.csv", r.seed)), &r.metrics)?;
    }
    let unit = target.unit();
    println!(
        "selected seed {} epoch {}: validation MAE {:.6} {}",
        outcome.checkpoint.seed, outcome.checkpoint.best_epoch, outcome.checkpoint.best_val_mae, unit
    );
    if let Some(test) = &outcome.test {
        write_size_csv(&out.join("size_mae.csv"), &test.per_size)?;
        println!("test MAE {:.6} {} over {} molecules", test.mae, unit, test.predictions.len());
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let target = ckpt.target();
    if let Some(t) = &args.target {
        let want: Target = t.parse()?;
        if want != target {
            return Err(Error::Data(format!(
                "checkpoint predicts '{}', not '{}'",
                target, want
            )));
        }
    }
    let mut cfg = RunConfig::default();
    if let Some(p) = &args.config {
        cfg.apply_file(p)?;
    }
    if let Some(d) = &args.data {
        cfg.data = d.clone();
    }
    if args.atomref.is_some() {
        cfg.atomref = args.atomref.clone();
    }
    if args.sample.is_some() {
        cfg.sample = args.sample;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let dataset = if args.input.is_empty() {
        load_dataset(&cfg, target)?
    } else {
        let records = args
            .input
            .iter()
            .map(|p| parse_qm9_xyz(&read(p)?).map_err(|e| Error::Data(format!("{}: {}", p.display(), e))))
            .collect::<Result<Vec<_>>>()?;
        let atomref = cfg.atomref.as_deref().map(AtomRef::read).transpose()?;
        Dataset::from_records(&records, target, atomref.as_ref())?
    };
    let idx = match &args.manifest {
        Some(m) => {
            let which: SplitName = args.split.parse()?;
            DatasetSplit::read_manifest(m, &dataset.ids(), cfg.seed)?.get(which).to_vec()
        }
        None => dataset.all(),
    };
    let model = ckpt.model()?;
    let ev = evaluate(&model, &ckpt.transform, &dataset, &idx, 64)?;
    println!("MAE {:.6} {} over {} molecules", ev.mae, target.unit(), idx.len());
    for b in &ev.per_size {
        println!("  {:>2} atoms: {:>6} molecules, MAE {:.6}", b.n_atoms, b.count, b.mae);
    }
    if let Some(out) = &args.out {
        write_size_csv(out, &ev.per_size)?;
    }
    Ok(())
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Data(format!("cannot read {}: {}", p.display(), e)))
}

/// Molecules from .xyz/.sdf/.mol files and directories, in argument order
/// and name order within directories.
pub fn read_molecules(inputs: &[PathBuf]) -> Result<Vec<Molecule>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut names: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| matches!(ext(f).as_str(), "xyz" | "sdf" | "mol"))
                .collect();
            names.sort();
            files.extend(names);
        } else {
            files.push(p.clone());
        }
    }
    let mut out = Vec::new();
    for f in &files {
        let text = read(f)?;
        let ctx = |e: Error| Error::Data(format!("{}: {}", f.display(), e));
        match ext(f).as_str() {
            "xyz" => out.push(parse_qm9_xyz(&text).map_err(ctx)?.molecule),
            "sdf" | "mol" => out.extend(parse_sdf(&text).map_err(ctx)?),
            other => {
                return Err(Error::Data(format!(
                    "{}: unsupported extension '{}' (expected xyz, sdf or mol)",
                    f.display(),
                    other
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Data("no molecules in the given inputs".into()));
    }
    Ok(out)
}

fn ext(p: &Path) -> String {
    p.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

pub fn cmd_infer(args: &InferArgs, fingerprint: bool) -> Result<()> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let model = ckpt.model()?;
    let molecules = read_molecules(&args.input)?;
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| Error::Data(format!("csv: {}", e));
    if fingerprint {
        let mut header = vec!["id".to_string()];
        header.extend((0..ckpt.config.d_model).map(|i| format!("f{}", i)));
        w.write_record(&header).map_err(csv_err)?;
        for chunk in molecules.chunks(64) {
            for (m, fp) in chunk.iter().zip(model.fingerprints(chunk)?) {
                let mut row = vec![m.id.clone()];
                row.extend(fp.iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    } else {
        let name = ckpt.target().name();
        w.write_record(["id", name]).map_err(csv_err)?;
        // Predictions are made in transformed units and inverted per molecule.
        let counts: Vec<[usize; 5]> = molecules.iter().map(|m| m.species_counts()).collect();
        for (chunk, c) in molecules.chunks(64).zip(counts.chunks(64)) {
            let raw = model.predict(chunk)?;
            let y = ckpt.transform.inverse(c, &raw)?;
            for (m, v) in chunk.iter().zip(y) {
                w.write_record([m.id.clone(), v.to_string()]).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_fault(s: &str) -> Result<(OpKind, f64)> {
    let (name, factor) = match s.split_once('=') {
        Some((n, f)) => (n, f.parse().map_err(|_| Error::Data(format!("bad fault factor '{}'", f)))?),
        None => (s, 1.01),
    };
    let names = || OpKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ");
    let kind = OpKind::from_name(name)
        .ok_or_else(|| Error::Data(format!("unknown op '{}'; ops: {}", name, names())))?;
    Ok((kind, factor))
}

/// Prints one line per operation and a model summary; `Ok(false)` when any
/// check exceeds the tolerance.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let fault = args.fault.as_deref().map(parse_fault).transpose()?;
    let mut ok = true;
    let verdict = |pass: bool| if pass { "ok" } else { "FAILED" };
    for r in check_all_ops(args.seed, fault)? {
        ok &= r.passed();
        println!("op {:<16} worst rel err {:.3e}  {}", r.name, r.max_rel_err, verdict(r.passed()));
    }
    if !args.ops_only {
        let results = check_model(args.seed, fault)?;
        let worst = results
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .expect("model has parameters");
        let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
        ok &= failed.is_empty();
        println!(
            "model ({} tensors, {} scalars) worst rel err {:.3e} at {}  {}",
            results.len(),
            results.iter().map(|r| r.evaluations).sum::<usize>(),
            worst.max_rel_err,
            worst.name,
            verdict(failed.is_empty())
        );
        for name in failed {
            println!("  failed: {}", name);
        }
    }
    println!("tolerance {:e}: {}", TOLERANCE, if ok { "all checks passed" } else { "FAILED" });
    Ok(ok)
}

/// Standard deviation with the sample (n − 1) denominator.
fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn cmd_lsm(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let target = cfg.target.unwrap_or(Target::U0Atom);
    let dataset = load_dataset(&cfg, target)?;
    let idx = dataset.all();
    let counts = dataset.counts(&idx);
    let y = dataset.targets(&idx);
    let lsm = fit_lsm(&counts, &y, target.name())?;
    let r = lsm.residualize(&counts, &y)?;
    let (raw, res) = (std_dev(&y), std_dev(&r));
    println!("target {} ({}), {} molecules", target, target.unit(), y.len());
    for (s, t) in SPECIES.iter().zip(&lsm.theta) {
        println!("theta[{}] = {:.9}", s, t);
    }
    println!("theta[bias] = {:.9}", lsm.theta[5]);
    println!("std raw {:.6e}, std residual {:.6e}, contraction {:.1}x", raw, res, raw / res);
    Ok(())
}
