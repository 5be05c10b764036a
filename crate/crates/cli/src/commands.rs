//! Execution of a resolved run and recording of its manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gcnstab_core::backprop::gradient_check_suite;
use gcnstab_core::bounds::{width_to_b, AssumptionConstants, BoundReport, Provenance, Source};
use gcnstab_core::experiments::{estimate_gap, layer_widths, mean, records_to_csv, run_sweep, SweepConfig};
use gcnstab_core::graph::{build_filter, build_filter_with, FilterMatrix, Graph};
use gcnstab_core::model::{Activation, ModelParams};
use gcnstab_core::numerics::PowerOptions;
use gcnstab_core::rng;
use gcnstab_core::training::{audit_twin, init_params, train, twin_train, TrainConfig};
use rand::Rng as _;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{dataset_inputs, BoundsRun, FiltersRun, GradcheckRun, TrainRun, TwinRun};
use crate::manifest::{digest_file, sha256_hex, FileDigest, RunManifest, MANIFEST_FORMAT};
use crate::{CliError, Result};

pub const COMMANDS: [&str; 6] = ["gradcheck", "bounds", "train", "twin", "sweep", "filters"];

/// What a run produced before anything is written.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// File name within the output directory, and contents.
    pub files: Vec<(String, Vec<u8>)>,
    pub stdout: String,
    pub inputs: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    /// Set when a verification did not pass; the run still writes its files.
    pub failure: Option<String>,
}

impl RunOutput {
    fn file(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }
}

/// Runtime knobs that do not change a run's outputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOptions {
    pub jobs: Option<usize>,
}

pub fn to_value<T: Serialize>(run: &T) -> serde_json::Value {
    serde_json::to_value(run).expect("configuration serializes")
}

fn from_value<T: DeserializeOwned>(command: &str, config: &serde_json::Value) -> Result<T> {
    serde_json::from_value(config.clone()).map_err(|e| CliError::Usage(format!("{command} configuration: {e}")))
}

/// Runs `command` with a resolved configuration.
pub fn execute(command: &str, config: &serde_json::Value, opts: ExecOptions) -> Result<RunOutput> {
    match command {
        "gradcheck" => gradcheck(from_value(command, config)?),
        "bounds" => bounds(from_value(command, config)?),
        "train" => train_run(from_value(command, config)?),
        "twin" => twin(from_value(command, config)?),
        "sweep" => sweep(from_value(command, config)?, opts.jobs),
        "filters" => filters(from_value(command, config)?),
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    }
}

/// Executes, writes every output file into `out_dir` and records the
/// manifest there.
pub fn run_and_record(
    command: &str,
    config: serde_json::Value,
    out_dir: &Path,
    opts: ExecOptions,
) -> Result<(RunOutput, RunManifest)> {
    let output = execute(command, &config, opts)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut outputs = Vec::new();
    for (name, bytes) in &output.files {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        outputs.push(FileDigest {
            path: name.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    let inputs = output
        .inputs
        .iter()
        .map(|p| digest_file(p))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config,
        seeds: output.seeds.clone(),
        inputs,
        outputs,
        status: output.failure.clone().unwrap_or_else(|| "ok".to_string()),
    };
    manifest.write(out_dir)?;
    Ok((output, manifest))
}

/// Re-runs a recorded run into `out_dir` and compares output digests.
/// Inputs must be unchanged.
pub fn rerun(manifest_path: &Path, out_dir: &Path, opts: ExecOptions) -> Result<(RunOutput, RunManifest)> {
    let recorded = RunManifest::read(manifest_path)?;
    let changed = recorded.changed_inputs()?;
    if !changed.is_empty() {
        return Err(CliError::Verification(format!("inputs changed since the run: {}", changed.join(", "))));
    }
    let (output, fresh) = run_and_record(&recorded.command, recorded.config.clone(), out_dir, opts)?;
    let mismatched = recorded.mismatched_outputs(&fresh);
    if !mismatched.is_empty() {
        return Err(CliError::Verification(format!(
            "outputs differ from the recorded run: {}",
            mismatched.join(", ")
        )));
    }
    Ok((output, fresh))
}

fn gradcheck(run: GradcheckRun) -> Result<RunOutput> {
    run.check.validate()?;
    let flip = run.inject_sign_flip;
    let report = gradient_check_suite(&run.check, |g| {
        if flip {
            g.grad_w.iter_mut().for_each(|v| *v = -*v);
        }
    })?;
    let text = report.to_key_value();
    let mut out = RunOutput {
        stdout: text.clone(),
        seeds: vec![run.check.seed],
        ..RunOutput::default()
    };
    out.file("gradcheck.txt", text);
    if !report.passed() {
        out.failure = Some(format!(
            "{} of {} gradient entries disagree",
            report.agreement.failures, report.agreement.entries
        ));
    }
    Ok(out)
}

/// Constants as they are resolved, each possibly still missing.
#[derive(Default)]
struct Slots {
    alpha_sigma: Option<f64>,
    nu_sigma: Option<f64>,
    alpha_ell: Option<f64>,
    nu_ell: Option<f64>,
    m_ceiling: Option<f64>,
    b: Option<f64>,
    c_g: Option<f64>,
    c_x: Option<f64>,
    k: Option<usize>,
    eta: Option<f64>,
    t: Option<usize>,
    m: Option<usize>,
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

/// Resolves constants in order: constants file, registries, explicit values.
fn resolve_constants(run: &BoundsRun) -> Result<(AssumptionConstants, Provenance, Vec<PathBuf>)> {
    let mut s = Slots::default();
    let mut prov = Provenance::all(Source::UserSupplied);
    let mut inputs = Vec::new();
    if let Some(path) = &run.constants_file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let c: AssumptionConstants =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        s = Slots {
            alpha_sigma: Some(c.alpha_sigma),
            nu_sigma: Some(c.nu_sigma),
            alpha_ell: Some(c.alpha_ell),
            nu_ell: Some(c.nu_ell),
            m_ceiling: Some(c.loss_ceiling),
            b: Some(c.b),
            c_g: Some(c.c_g),
            c_x: Some(c.c_x),
            k: Some(c.k),
            eta: Some(c.eta),
            t: Some(c.t),
            m: Some(c.m),
        };
        prov = Provenance::all(Source::Measured);
        inputs.push(path.clone());
    }
    if let Some(a) = run.activation {
        s.alpha_sigma = Some(a.alpha_sigma());
        s.nu_sigma = Some(a.nu_sigma());
    }
    if let Some(loss) = &run.loss {
        let lc = loss.constants()?;
        s.alpha_ell = Some(lc.alpha_ell);
        s.nu_ell = Some(lc.nu_ell);
        s.m_ceiling = Some(lc.m);
    }
    set(&mut s.alpha_sigma, run.alpha_sigma);
    set(&mut s.nu_sigma, run.nu_sigma);
    set(&mut s.alpha_ell, run.alpha_ell);
    set(&mut s.nu_ell, run.nu_ell);
    set(&mut s.m_ceiling, run.loss_ceiling);
    match (run.b, run.xi, &run.widths) {
        (Some(_), Some(_), _) => return Err(CliError::Usage("give either B or xi with widths, not both".into())),
        (Some(b), None, _) => {
            s.b = Some(b);
            prov.b = Source::UserSupplied;
        }
        (None, Some(xi), Some(w)) => {
            s.b = Some(width_to_b(xi, w)?);
            prov.b = Source::WidthDerived;
        }
        (None, Some(_), None) => return Err(CliError::Usage("xi needs widths".into())),
        (None, None, _) => {}
    }
    if run.c_g.is_some() {
        prov.c_g = Source::UserSupplied;
    }
    if run.c_x.is_some() {
        prov.c_x = Source::UserSupplied;
    }
    set(&mut s.c_g, run.c_g);
    set(&mut s.c_x, run.c_x);
    set(&mut s.k, run.k);
    set(&mut s.eta, run.eta);
    set(&mut s.t, run.t);
    set(&mut s.m, run.m);

    let mut missing = Vec::new();
    let mut need_f = |name: &str, v: Option<f64>| {
        if v.is_none() {
            missing.push(name.to_string());
        }
        v.unwrap_or(0.0)
    };
    let alpha_sigma = need_f("alpha_sigma", s.alpha_sigma);
    let nu_sigma = need_f("nu_sigma", s.nu_sigma);
    let alpha_ell = need_f("alpha_ell", s.alpha_ell);
    let nu_ell = need_f("nu_ell", s.nu_ell);
    let loss_ceiling = need_f("M", s.m_ceiling);
    let b = need_f("B", s.b);
    let c_g = need_f("C_g", s.c_g);
    let c_x = need_f("C_X", s.c_x);
    let eta = need_f("eta", s.eta);
    for (name, v) in [("K", s.k), ("T", s.t), ("m", s.m)] {
        if v.is_none() {
            missing.push(name.to_string());
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Usage(format!("missing constants: {}", missing.join(", "))));
    }
    let c = AssumptionConstants {
        alpha_sigma,
        nu_sigma,
        alpha_ell,
        nu_ell,
        loss_ceiling,
        b,
        c_g,
        c_x,
        k: s.k.unwrap_or_default(),
        eta,
        t: s.t.unwrap_or_default(),
        m: s.m.unwrap_or_default(),
    };
    Ok((c, prov, inputs))
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("invalid delta: {delta} not in (0, 1)")))
    }
}

fn bounds(run: BoundsRun) -> Result<RunOutput> {
    check_delta(run.delta)?;
    let (c, prov, inputs) = resolve_constants(&run)?;
    let report = BoundReport::evaluate(&c, run.delta, prov)?;
    let text = report.to_key_value();
    let mut out = RunOutput {
        stdout: text.clone(),
        inputs,
        ..RunOutput::default()
    };
    out.file("bounds.txt", text);
    out.file("bounds.json", format!("{}\n", report.to_json()));
    Ok(out)
}

/// Dataset, filter, initialization and training settings shared by `train`
/// and `twin`.
struct Prepared {
    dataset: gcnstab_core::datasets::Dataset,
    filter: FilterMatrix,
    init: ModelParams,
    config: TrainConfig,
    inputs: Vec<PathBuf>,
}

#[allow(clippy::too_many_arguments)]
fn prepare(
    seed: u64,
    spec: &gcnstab_core::experiments::DatasetSpec,
    kind: gcnstab_core::graph::FilterKind,
    activation: Activation,
    k: usize,
    d: usize,
    train_cfg: &TrainConfig,
    init_path: Option<&Path>,
) -> Result<Prepared> {
    if d == 0 && k > 0 {
        return Err(CliError::Usage("invalid d: hidden width must be positive".into()));
    }
    let config = TrainConfig { seed, ..*train_cfg };
    config.validate()?;
    let dataset = spec.materialize(seed)?;
    let filter = build_filter(dataset.graph(), kind)?;
    let widths = layer_widths(dataset.feature_dim(), k, d);
    let mut inputs = dataset_inputs(spec);
    let init = match init_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let p = ModelParams::from_snapshot(&text, &path.display().to_string())?;
            if p.widths() != widths || p.activation() != activation {
                return Err(CliError::Usage(format!(
                    "{}: snapshot has widths {:?} and activation {}, run needs {:?} and {}",
                    path.display(),
                    p.widths(),
                    p.activation(),
                    widths,
                    activation
                )));
            }
            inputs.push(path.to_path_buf());
            p
        }
        None => init_params(&widths, activation, seed)?,
    };
    Ok(Prepared {
        dataset,
        filter,
        init,
        config,
        inputs,
    })
}

fn measured_constants(p: &Prepared, activation: Activation, k: usize, b: f64) -> Result<AssumptionConstants> {
    Ok(AssumptionConstants::from_parts(
        activation,
        &p.config.loss.constants()?,
        b,
        p.filter.c_g(),
        p.dataset.c_x(),
        k,
        p.config.eta,
        p.config.t,
        p.dataset.train_indices().len(),
    ))
}

#[derive(Serialize)]
struct TrainSummaryFile<'a> {
    filter: &'a str,
    activation: &'a str,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    m: usize,
    n_test: usize,
    #[serde(rename = "R_emp")]
    r_emp: f64,
    #[serde(rename = "R_test")]
    r_test: f64,
    gap: f64,
    initial_risk: f64,
    final_risk: f64,
    #[serde(rename = "measured_B")]
    measured_b: f64,
    #[serde(rename = "C_g")]
    c_g: f64,
    #[serde(rename = "C_X")]
    c_x: f64,
    step_losses: &'a [f64],
    index_sequence: &'a [usize],
    snapshot_steps: Vec<usize>,
    bounds: &'a BoundReport,
}

fn train_run(run: TrainRun) -> Result<RunOutput> {
    check_delta(run.delta)?;
    let p = prepare(
        run.seed,
        &run.dataset,
        run.filter,
        run.activation,
        run.k,
        run.d,
        &run.train,
        run.init.as_deref(),
    )?;
    let (params, summary) = train(&p.dataset, &p.filter, &p.init, &p.config)?;
    let est = estimate_gap(&params, &p.filter, &p.dataset, &p.config.loss)?;
    let c = measured_constants(&p, run.activation, run.k, summary.measured_b)?;
    let report = BoundReport::evaluate(&c, run.delta, Provenance::all(Source::Measured))?;
    let file = TrainSummaryFile {
        filter: run.filter.as_str(),
        activation: run.activation.as_str(),
        k: run.k,
        d: run.d,
        m: p.dataset.train_indices().len(),
        n_test: p.dataset.test_indices().len(),
        r_emp: est.r_emp,
        r_test: est.r_test,
        gap: est.gap,
        initial_risk: summary.initial_risk,
        final_risk: summary.final_risk,
        measured_b: summary.measured_b,
        c_g: p.filter.c_g(),
        c_x: p.dataset.c_x(),
        step_losses: &summary.step_losses,
        index_sequence: &summary.index_sequence,
        snapshot_steps: summary.snapshots.iter().map(|(t, _)| *t).collect(),
        bounds: &report,
    };
    let mut stdout = String::new();
    for (k, v) in [
        ("R_emp", est.r_emp),
        ("R_test", est.r_test),
        ("gap", est.gap),
        ("measured_B", summary.measured_b),
        ("C_g", p.filter.c_g()),
        ("C_X", p.dataset.c_x()),
    ] {
        let _ = writeln!(stdout, "{k}={v}");
    }
    let _ = writeln!(stdout, "gap_bound={}", report.gap_bound.to_text());
    let mut out = RunOutput {
        stdout,
        inputs: p.inputs.clone(),
        seeds: vec![run.seed],
        ..RunOutput::default()
    };
    out.file("params.txt", params.to_snapshot());
    let mut json = serde_json::to_string_pretty(&file).expect("summary serializes");
    json.push('\n');
    out.file("train_summary.json", json);
    out.file("bounds.txt", report.to_key_value());
    Ok(out)
}

fn twin(run: TwinRun) -> Result<RunOutput> {
    let p = prepare(
        run.seed,
        &run.dataset,
        run.filter,
        run.activation,
        run.k,
        run.d,
        &run.train,
        run.init.as_deref(),
    )?;
    let m = p.dataset.train_indices().len();
    if m == 0 {
        return Err(CliError::Usage("the training split is empty".into()));
    }
    let replaced = match run.replaced_index {
        Some(i) if i >= m => {
            return Err(CliError::Usage(format!("invalid replaced_index: {i} but the training set has {m} samples")));
        }
        Some(i) => i,
        None => rng::stream(run.seed, "twin.replaced").random_range(0..m),
    };
    let labels = p.dataset.labels();
    let replacement = if run.identical_replacement {
        p.dataset.train_sample(replaced)
    } else if let Some(node) = run.replacement_node {
        if node >= labels.len() {
            return Err(CliError::Usage(format!(
                "invalid replacement_node: {node} but the graph has {} nodes",
                labels.len()
            )));
        }
        (node, labels[node])
    } else {
        let test = p.dataset.test_indices();
        if test.is_empty() {
            return Err(CliError::Usage("no test node to draw a replacement from; set replacement_node".into()));
        }
        let node = test[rng::stream(run.seed, "twin.replacement").random_range(0..test.len())];
        (node, labels[node])
    };
    let trace = twin_train(&p.dataset, &p.filter, &p.init, &p.config, replaced, replacement)?;
    let constants = measured_constants(&p, run.activation, run.k, trace.measured_b)?;
    let audit = audit_twin(&trace, &p.filter, &p.dataset, &constants)?;

    let mut audit_text = String::new();
    let _ = writeln!(audit_text, "replaced_index={replaced}");
    let _ = writeln!(audit_text, "original_node={}", trace.original_sample.0);
    let _ = writeln!(audit_text, "replacement_node={}", trace.replacement_sample.0);
    let _ = writeln!(audit_text, "hits={}", trace.hits().iter().filter(|&&h| h).count());
    let _ = writeln!(audit_text, "final_delta_theta_star={}", trace.final_delta());
    audit_text.push_str(&audit.to_key_value());

    let mut out = RunOutput {
        stdout: audit_text.clone(),
        inputs: p.inputs.clone(),
        seeds: vec![run.seed],
        ..RunOutput::default()
    };
    out.file("twin.csv", trace.to_csv());
    out.file("audit.txt", audit_text);
    let mut json = serde_json::to_string_pretty(&constants).expect("constants serialize");
    json.push('\n');
    out.file("constants.json", json);
    if !audit.passed() {
        let failed: Vec<&str> = audit.ratios.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
        out.failure = Some(format!("audited inequalities violated: {}", failed.join(", ")));
    }
    Ok(out)
}

fn sweep(cfg: SweepConfig, jobs: Option<usize>) -> Result<RunOutput> {
    let records = run_sweep(&cfg, jobs)?;
    let mut stdout = String::from("filter,K,d,cells,failed,mean_gap\n");
    for &f in &cfg.filters {
        for &k in &cfg.depths {
            for &d in &cfg.widths {
                let cell: Vec<_> = records
                    .iter()
                    .filter(|r| r.cell.filter == f && r.cell.k == k && r.cell.d == d)
                    .collect();
                let failed = cell.iter().filter(|r| r.result.is_err()).count();
                let m = mean(cell.iter().filter_map(|r| r.gap()))
                    .map(|v| format!("{v:e}"))
                    .unwrap_or_default();
                let _ = writeln!(stdout, "{f},{k},{d},{},{failed},{m}", cell.len());
            }
        }
    }
    let mut out = RunOutput {
        stdout,
        inputs: dataset_inputs(&cfg.dataset),
        seeds: cfg.seeds.clone(),
        ..RunOutput::default()
    };
    out.file("sweep.csv", records_to_csv(&records));
    Ok(out)
}

fn filters(run: FiltersRun) -> Result<RunOutput> {
    if run.kinds.is_empty() {
        return Err(CliError::Usage("no filter kinds requested".into()));
    }
    let mut graph = Graph::read_edge_list(&run.edges, run.num_nodes)?;
    let mut isolated = 0;
    if run.drop_isolated {
        let deg = graph.degrees();
        let keep: Vec<usize> = (0..graph.num_nodes()).filter(|&v| deg[v] > 0).collect();
        isolated = graph.num_nodes() - keep.len();
        graph = graph.induced(&keep)?;
    }
    let power = PowerOptions {
        tol: run.tol,
        ..PowerOptions::default()
    };
    let mut csv = String::from("kind,N,C_g\n");
    for &kind in &run.kinds {
        let f = build_filter_with(&graph, kind, &power)?;
        let _ = writeln!(csv, "{kind},{},{}", graph.num_nodes(), f.c_g());
    }
    let mut stdout = format!(
        "edges={} dropped_self_loops={} dropped_duplicates={} dropped_isolated={isolated}\n",
        graph.num_edges(),
        graph.dropped_self_loops(),
        graph.dropped_duplicates()
    );
    stdout.push_str(&csv);
    let mut out = RunOutput {
        stdout,
        inputs: vec![run.edges.clone()],
        ..RunOutput::default()
    };
    out.file("filters.csv", csv);
    Ok(out)
}
