//! Command-line parsing. A TOML file given with `--config` is loaded first;
//! flags override its values.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gcnstab_core::backprop::GradCheckConfig;
use gcnstab_core::experiments::{DatasetSpec, SweepConfig};
use gcnstab_core::graph::FilterKind;
use gcnstab_core::loss::{Loss, LossKind};
use gcnstab_core::model::Activation;
use gcnstab_core::training::TrainConfig;
use serde::de::DeserializeOwned;

use crate::commands::{rerun, run_and_record, to_value, ExecOptions, RunOutput};
use crate::config::{files_dataset, load_toml, BoundsRun, FiltersRun, GradcheckRun, TrainRun, TwinRun};
use crate::{CliError, Result};

pub const DEFAULT_OUT_DIR: &str = "gcnstab-out";

#[derive(Debug, Parser)]
#[command(name = "gcnstab", version, about = "Uniform-stability bounds and experiments for graph convolutional networks")]
pub struct Cli {
    /// Directory for output files and the run manifest.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    /// TOML file with the run configuration; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Re-run a recorded manifest and compare output digests.
    #[arg(long, value_name = "FILE")]
    pub from_manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare backpropagated gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Evaluate every bound from a set of constants.
    Bounds(BoundsArgs),
    /// Train one model with SGD and estimate its generalization gap.
    Train(TrainArgs),
    /// Train a coupled pair on neighboring datasets and audit the lemmas.
    Twin(TwinArgs),
    /// Gap estimates over filters, depths, widths and seeds.
    Sweep(SweepArgs),
    /// Spectral norms of graph filters built from an edge list.
    Filters(FiltersArgs),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub max_width: Option<usize>,
    /// Finite-difference step.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Constants written by `twin` (constants.json).
    #[arg(long, value_name = "FILE")]
    pub constants_file: Option<PathBuf>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub alpha_sigma: Option<f64>,
    #[arg(long)]
    pub nu_sigma: Option<f64>,
    #[arg(long)]
    pub alpha_ell: Option<f64>,
    #[arg(long)]
    pub nu_ell: Option<f64>,
    /// Loss ceiling.
    #[arg(long = "M")]
    pub loss_ceiling: Option<f64>,
    #[arg(long = "B")]
    pub b: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    /// Layer widths `d0,d1,...,dK` for the width-derived `B`.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long = "C-g")]
    pub c_g: Option<f64>,
    #[arg(long = "C-X")]
    pub c_x: Option<f64>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub filter: Option<FilterKind>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Hidden width.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub projection_b: Option<f64>,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Parameter snapshot to start from.
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

/// A dataset from files; all of `--edges`, `--features` and `--labels` or
/// none.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, value_name = "FILE")]
    pub edges: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TwinArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub replaced_index: Option<usize>,
    #[arg(long)]
    pub replacement_node: Option<usize>,
    /// Replace the sample with itself.
    #[arg(long)]
    pub identical_replacement: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub filters: Option<Vec<FilterKind>>,
    #[arg(long = "K", value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    #[arg(long = "d", value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FiltersArgs {
    #[arg(long, value_name = "FILE")]
    pub edges: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<FilterKind>>,
    #[arg(long)]
    pub num_nodes: Option<usize>,
    /// Power-iteration tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Drop nodes without edges first.
    #[arg(long)]
    pub drop_isolated: bool,
}

fn load_or_default<T: DeserializeOwned + Default>(config: Option<&Path>) -> Result<T> {
    match config {
        Some(p) => load_toml(p),
        None => Ok(T::default()),
    }
}

fn put<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, spec: &mut DatasetSpec) -> Result<()> {
        match (self.edges, self.features, self.labels) {
            (None, None, None) => {
                if self.split.is_some() {
                    return Err(CliError::Usage("--split needs --edges, --features and --labels".into()));
                }
                if let Some(f) = self.train_fraction {
                    match spec {
                        DatasetSpec::Csbm(p) => p.train_fraction = f,
                        DatasetSpec::Files { train_fraction, .. } => *train_fraction = f,
                    }
                }
                Ok(())
            }
            (Some(e), Some(f), Some(l)) => {
                *spec = files_dataset(e, f, l, self.split, self.train_fraction.unwrap_or(0.5));
                Ok(())
            }
            (e, f, l) => {
                let missing: Vec<&str> = [("--edges", e.is_none()), ("--features", f.is_none()), ("--labels", l.is_none())]
                    .into_iter()
                    .filter_map(|(n, m)| m.then_some(n))
                    .collect();
                Err(CliError::Usage(format!("dataset files incomplete; missing {}", missing.join(", "))))
            }
        }
    }
}

impl ModelArgs {
    #[allow(clippy::too_many_arguments)]
    fn apply(
        self,
        seed: &mut u64,
        filter: &mut FilterKind,
        activation: &mut Activation,
        k: &mut usize,
        d: &mut usize,
        train: &mut TrainConfig,
        init: &mut Option<PathBuf>,
        dataset: &mut DatasetSpec,
    ) -> Result<()> {
        put(seed, self.seed);
        put(filter, self.filter);
        put(activation, self.activation);
        put(k, self.k);
        put(d, self.d);
        put(&mut train.eta, self.eta);
        put(&mut train.t, self.t);
        if let Some(kind) = self.loss {
            train.loss = Loss { kind, ..train.loss };
        }
        if self.projection_b.is_some() {
            train.projection_b = self.projection_b;
        }
        put(&mut train.record_every, self.record_every);
        if self.init.is_some() {
            *init = self.init;
        }
        self.data.apply(dataset)
    }
}

/// The command name and its resolved configuration.
pub fn resolve(command: Command, config: Option<&Path>) -> Result<(&'static str, serde_json::Value, ExecOptions)> {
    let mut opts = ExecOptions::default();
    let resolved = match command {
        Command::Gradcheck(a) => {
            let mut run: GradcheckRun = match config {
                Some(p) => load_toml(p)?,
                None => GradcheckRun {
                    check: GradCheckConfig::default(),
                    inject_sign_flip: false,
                },
            };
            put(&mut run.check.trials, a.trials);
            put(&mut run.check.seed, a.seed);
            put(&mut run.check.max_nodes, a.max_nodes);
            put(&mut run.check.max_depth, a.max_depth);
            put(&mut run.check.max_width, a.max_width);
            put(&mut run.check.h, a.h);
            put(&mut run.check.rel_tol, a.rel_tol);
            run.inject_sign_flip |= a.inject_sign_flip;
            run.check.validate()?;
            ("gradcheck", to_value(&run))
        }
        Command::Bounds(a) => {
            let mut run: BoundsRun = load_or_default(config)?;
            if a.constants_file.is_some() {
                run.constants_file = a.constants_file;
            }
            if a.activation.is_some() {
                run.activation = a.activation;
            }
            if let Some(kind) = a.loss {
                run.loss = Some(Loss {
                    kind,
                    ..run.loss.unwrap_or_default()
                });
            }
            let opt = |slot: &mut Option<f64>, v: Option<f64>| {
                if v.is_some() {
                    *slot = v;
                }
            };
            opt(&mut run.alpha_sigma, a.alpha_sigma);
            opt(&mut run.nu_sigma, a.nu_sigma);
            opt(&mut run.alpha_ell, a.alpha_ell);
            opt(&mut run.nu_ell, a.nu_ell);
            opt(&mut run.loss_ceiling, a.loss_ceiling);
            opt(&mut run.b, a.b);
            opt(&mut run.xi, a.xi);
            opt(&mut run.c_g, a.c_g);
            opt(&mut run.c_x, a.c_x);
            opt(&mut run.eta, a.eta);
            if a.widths.is_some() {
                run.widths = a.widths;
            }
            if a.k.is_some() {
                run.k = a.k;
            }
            if a.t.is_some() {
                run.t = a.t;
            }
            if a.m.is_some() {
                run.m = a.m;
            }
            put(&mut run.delta, a.delta);
            ("bounds", to_value(&run))
        }
        Command::Train(a) => {
            let mut run: TrainRun = load_or_default(config)?;
            a.model.apply(
                &mut run.seed,
                &mut run.filter,
                &mut run.activation,
                &mut run.k,
                &mut run.d,
                &mut run.train,
                &mut run.init,
                &mut run.dataset,
            )?;
            put(&mut run.delta, a.delta);
            run.train.seed = run.seed;
            ("train", to_value(&run))
        }
        Command::Twin(a) => {
            let mut run: TwinRun = load_or_default(config)?;
            a.model.apply(
                &mut run.seed,
                &mut run.filter,
                &mut run.activation,
                &mut run.k,
                &mut run.d,
                &mut run.train,
                &mut run.init,
                &mut run.dataset,
            )?;
            if a.replaced_index.is_some() {
                run.replaced_index = a.replaced_index;
            }
            if a.replacement_node.is_some() {
                run.replacement_node = a.replacement_node;
            }
            run.identical_replacement |= a.identical_replacement;
            run.train.seed = run.seed;
            ("twin", to_value(&run))
        }
        Command::Sweep(a) => {
            let mut cfg: SweepConfig = load_or_default(config)?;
            put(&mut cfg.seeds, a.seeds);
            put(&mut cfg.filters, a.filters);
            put(&mut cfg.depths, a.depths);
            put(&mut cfg.widths, a.widths);
            put(&mut cfg.train.t, a.t);
            put(&mut cfg.train.eta, a.eta);
            cfg.validate()?;
            opts.jobs = a.jobs;
            ("sweep", to_value(&cfg))
        }
        Command::Filters(a) => {
            let mut run: FiltersRun = match config {
                Some(p) => load_toml(p)?,
                None => FiltersRun {
                    edges: a
                        .edges
                        .clone()
                        .ok_or_else(|| CliError::Usage("missing --edges".into()))?,
                    kinds: FilterKind::ALL.to_vec(),
                    num_nodes: None,
                    tol: 1e-10,
                    drop_isolated: false,
                },
            };
            put(&mut run.edges, a.edges);
            put(&mut run.kinds, a.kinds);
            if a.num_nodes.is_some() {
                run.num_nodes = a.num_nodes;
            }
            put(&mut run.tol, a.tol);
            run.drop_isolated |= a.drop_isolated;
            ("filters", to_value(&run))
        }
    };
    Ok((resolved.0, resolved.1, opts))
}

/// Parses the arguments and runs. Returns the output and where it went.
pub fn dispatch(cli: Cli) -> Result<(RunOutput, PathBuf)> {
    if let Some(manifest) = cli.from_manifest {
        if cli.command.is_some() || cli.config.is_some() {
            return Err(CliError::Usage(
                "--from-manifest takes the command and config from the manifest".into(),
            ));
        }
        let out_dir = cli.out_dir.unwrap_or_else(|| {
            manifest
                .parent()
                .map(|p| p.join("rerun"))
                .unwrap_or_else(|| PathBuf::from("rerun"))
        });
        let (out, _) = rerun(&manifest, &out_dir, ExecOptions::default())?;
        return Ok((out, out_dir));
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no command given; see --help".into()));
    };
    let (name, config, opts) = resolve(command, cli.config.as_deref())?;
    let out_dir = cli.out_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let (out, _) = run_and_record(name, config, &out_dir, opts)?;
    Ok((out, out_dir))
}

/// Full command-line entry point. Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 { 0 } else { 1 };
        }
    };
    match dispatch(cli) {
        Ok((out, _)) => {
            print!("{}", out.stdout);
            match out.failure {
                Some(msg) => {
                    eprintln!("error: verification failed: {msg}");
                    2
                }
                None => 0,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
