//! The `solve-hjb`, `run`, `batch` and `flow` subcommands.

use crate::config::{ExperimentConfig, FlowKind};
use anyhow::{bail, Context, Result};
use ccbo::cbo::{self, BatchSummary, RunRecord};
use ccbo::galerkin::GalerkinWorkspace;
use ccbo::hjb::{self, FlowError, FlowField, SolveReport, Trajectory};
use ccbo::{Objective, ValueFunctionApprox, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const VALUE_FUNCTION_FILE: &str = "value_function.json";
pub const SOLVE_REPORT_FILE: &str = "solve_report.json";
pub const BATCH_SUMMARY_FILE: &str = "summary.json";
pub const RUN_SUMMARY_FILE: &str = "run_summary.json";
pub const CONFIG_COPY_FILE: &str = "config.toml";
pub const RUNS_DIR: &str = "runs";

/// A validated configuration bound to its hash and output directory.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Session {
    pub fn new(config: ExperimentConfig, out: PathBuf) -> Self {
        let hash = config.hash();
        Self { config, hash, out }
    }

    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let text = format!("# config_hash = \"{}\"\n{}", self.hash, self.config.to_toml());
        write_file(&self.out.join(CONFIG_COPY_FILE), text.as_bytes())
    }

    pub fn value_function_path(&self) -> PathBuf {
        self.config.value_function.clone().unwrap_or_else(|| self.out.join(VALUE_FUNCTION_FILE))
    }

    fn objective(&self) -> Result<Objective> {
        Ok(self.config.objective.build()?)
    }

    fn load_value_function(&self) -> Result<ValueFunctionApprox> {
        let path = self.value_function_path();
        if !path.exists() {
            bail!("coefficient file {} not found; run `ccbo solve-hjb` with this config first", path.display());
        }
        let vfa: ValueFunctionApprox =
            hjb::load_value_function(&path).with_context(|| format!("loading {}", path.display()))?;
        vfa.require_dim(self.config.dim()).with_context(|| format!("coefficient file {}", path.display()))?;
        log::info!(
            "value function {} ({} terms, config hash {})",
            path.display(),
            vfa.basis().len(),
            vfa.provenance().config_hash.as_deref().unwrap_or("none")
        );
        Ok(vfa)
    }

    fn naming<'a>(&self, f: &'a Objective) -> RunNaming<'a> {
        RunNaming {
            objective: f.name(),
            variant: self.config.cbo.variant,
            n_particles: self.config.cbo.n_particles,
            particles: self.config.cbo.record_particles,
        }
    }

    fn value_function_for(&self, variant: Variant) -> Result<Option<ValueFunctionApprox>> {
        if variant.needs_value_function() {
            self.load_value_function().map(Some)
        } else {
            Ok(None)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Debug, Serialize)]
struct SolveDocument<'a> {
    format: &'static str,
    version: u32,
    config_hash: &'a str,
    objective: &'a str,
    coefficient_file: &'a str,
    report: &'a SolveReport,
}

/// Assembles the Galerkin system, runs discount continuation and writes the coefficient file
/// together with the solve report.
pub fn solve_hjb(s: &Session) -> Result<(ValueFunctionApprox, SolveReport)> {
    s.prepare()?;
    let f = s.objective()?;
    let basis = s.config.build_basis()?;
    log::info!("assembling {} on {} basis functions", f.name(), basis.len());
    let ws = GalerkinWorkspace::assemble(basis, &f, s.config.hjb.load_mode).context("Galerkin assembly")?;
    let (vfa, report) = hjb::discount_continuation(&ws, &s.config.hjb).context("HJB solve")?;
    let vfa = vfa.with_config_hash(s.hash.clone());
    let path = s.out.join(VALUE_FUNCTION_FILE);
    hjb::save_value_function(&vfa, &path)?;
    let doc = SolveDocument {
        format: "ccbo-solve-report",
        version: 1,
        config_hash: &s.hash,
        objective: f.name(),
        coefficient_file: VALUE_FUNCTION_FILE,
        report: &report,
    };
    write_json(&s.out.join(SOLVE_REPORT_FILE), &doc)?;
    Ok((vfa, report))
}

/// `<objective>_<variant>_d<d>_N<N>_seed<seed>`, the stem shared by a run's CSVs.
pub fn run_stem(objective: &str, variant: Variant, dim: usize, n_particles: usize, seed: u64) -> String {
    format!("{objective}_{}_d{dim}_N{n_particles}_seed{seed}", variant.name())
}

struct RunNaming<'a> {
    objective: &'a str,
    variant: Variant,
    n_particles: usize,
    particles: bool,
}

fn write_run(out: &Path, naming: &RunNaming<'_>, record: &RunRecord) -> Result<String> {
    let stem = run_stem(naming.objective, naming.variant, record.dim, naming.n_particles, record.seed);
    let name = format!("{RUNS_DIR}/{stem}.csv");
    let path = out.join(&name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    cbo::write_run_csv(BufWriter::new(file), record)?;
    if naming.particles {
        let p = out.join(format!("{RUNS_DIR}/{stem}_particles.csv"));
        let file = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        cbo::write_particles_csv(BufWriter::new(file), record)?;
    }
    Ok(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub objective: String,
    pub variant: Variant,
    pub seed: u64,
    pub steps: usize,
    pub final_w2sq: Option<f64>,
    pub final_variance: f64,
    pub final_consensus: Vec<f64>,
    pub run_file: String,
}

/// One simulation with seed `cbo.seed`.
pub fn run(s: &Session) -> Result<RunDocument> {
    s.prepare()?;
    let f = s.objective()?;
    let vfa = s.value_function_for(s.config.cbo.variant)?;
    let record = cbo::run(&s.config.cbo, &f, vfa.as_ref(), None)?;
    fs::create_dir_all(s.out.join(RUNS_DIR))?;
    let run_file = write_run(&s.out, &s.naming(&f), &record)?;
    let last = record.final_record();
    let doc = RunDocument {
        format: "ccbo-run-summary".into(),
        version: 1,
        config_hash: s.hash.clone(),
        objective: f.name().to_string(),
        variant: s.config.cbo.variant,
        seed: record.seed,
        steps: last.step,
        final_w2sq: last.w2sq,
        final_variance: last.variance,
        final_consensus: last.v.clone(),
        run_file,
    };
    write_json(&s.out.join(RUN_SUMMARY_FILE), &doc)?;
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDocument {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub objective: String,
    pub dim: usize,
    pub variant: Variant,
    pub summary: BatchSummary,
    /// Per-run CSVs of the completed runs, in seed order.
    pub run_files: Vec<String>,
}

/// `n_runs` simulations with seeds `cbo.seed + k`, on at most `jobs` threads.
pub fn batch(s: &Session, jobs: Option<usize>) -> Result<BatchDocument> {
    s.prepare()?;
    let f = s.objective()?;
    let vfa = s.value_function_for(s.config.cbo.variant)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    fs::create_dir_all(s.out.join(RUNS_DIR))?;
    let naming = s.naming(&f);
    let (result, files) = pool.install(|| -> Result<_> {
        let result = cbo::run_batch(&s.config.cbo, &f, vfa.as_ref(), None, s.config.n_runs, s.config.cbo.seed)?;
        let files = result
            .runs
            .par_iter()
            .filter_map(|r| r.as_ref().ok())
            .map(|r| write_run(&s.out, &naming, r))
            .collect::<Result<Vec<_>>>()?;
        Ok((result, files))
    })?;
    let doc = BatchDocument {
        format: "ccbo-batch-summary".into(),
        version: 1,
        config_hash: s.hash.clone(),
        objective: f.name().to_string(),
        dim: f.dim(),
        variant: s.config.cbo.variant,
        summary: result.summary,
        run_files: files,
    };
    write_json(&s.out.join(BATCH_SUMMARY_FILE), &doc)?;
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutcome {
    pub kind: FlowKind,
    pub file: PathBuf,
    pub endpoint: Vec<f64>,
    /// Step at which the trajectory left the divergence radius.
    pub diverged_at: Option<usize>,
}

pub fn flow_file_name(kind: FlowKind) -> String {
    format!("flow_{}.csv", kind.name())
}

fn write_flow(path: &Path, f: &Objective, path_data: &Trajectory<f64>, trailer: &str) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let d = f.dim();
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|p| format!("x_{p}")));
    header.push("f".into());
    w.write_record(&header)?;
    for (t, x) in path_data.times.iter().zip(&path_data.states) {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(f64::to_string));
        row.push(f.eval(x).to_string());
        w.write_record(&row)?;
    }
    let mut inner = w.into_inner().map_err(|e| anyhow::anyhow!("flushing {}: {}", path.display(), e.error()))?;
    inner.write_all(trailer.as_bytes())?;
    inner.flush()?;
    Ok(())
}

/// Deterministic flows from `flow.x0`; a diverging trajectory is written up to the last
/// in-range state and flagged in the `#` trailer.
pub fn flow(s: &Session) -> Result<Vec<FlowOutcome>> {
    s.prepare()?;
    let f = s.objective()?;
    let vfa = if s.config.flow.fields.contains(&FlowKind::Feedback) { Some(s.load_value_function()?) } else { None };
    let x0 = s.config.flow_start();
    let params = &s.config.flow;
    let mut out = Vec::new();
    for &kind in &params.fields {
        let field = match kind {
            FlowKind::Gradient => FlowField::NegGradient { objective: &f, fd_step: params.fd_step },
            FlowKind::Feedback => FlowField::Feedback(vfa.as_ref().expect("loaded above")),
        };
        let file = s.out.join(flow_file_name(kind));
        let outcome = match hjb::integrate_flow(field, &x0, params.dt, params.horizon) {
            Ok(path) => {
                let trailer = format!("# status=completed steps={} config_hash={}\n", path.len() - 1, s.hash);
                write_flow(&file, &f, &path, &trailer)?;
                FlowOutcome { kind, file, endpoint: path.endpoint().to_vec(), diverged_at: None }
            }
            Err(FlowError::Diverged { step, norm, partial, .. }) => {
                let trailer = format!("# status=diverged step={step} norm={norm:e} config_hash={}\n", s.hash);
                write_flow(&file, &f, &partial, &trailer)?;
                FlowOutcome { kind, file, endpoint: partial.endpoint().to_vec(), diverged_at: Some(step) }
            }
            Err(e) => return Err(e.into()),
        };
        out.push(outcome);
    }
    Ok(out)
}
