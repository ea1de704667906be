//! The five pipeline commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cat_core::gridworld::render_policy;
use cat_core::mdp::{
    policy_evaluation, reset_solver_calls, solver_calls, start_return, value_iteration,
};
use cat_core::occupancy::compute_occupancy;
use cat_core::oracle::{check_theorem1, randomized_theorem1_suite, InstanceKind, InstanceRecord};
use cat_core::successor::compute_sf;
use cat_core::transfer::{
    cat_iterative_transfer, cat_sf_transfer, evaluate_sources, primal_variance_transfer,
    risk_neutral_transfer, EvaluationMode,
};
use cat_core::{
    BoundReport, CatError, FeatureMap, OccupancyMeasure, RolloutStats, SourceEntry, SourceLibrary,
    SuccessorFeatureTable, TabularPolicy, TransferResult, DEFAULT_TOL,
};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    policy_hash, read_artifact_bytes, read_envelope, sha256_hex, write_bytes, write_envelope,
    Layout,
};
use crate::config::{hash_json, read_json, Experiment, ExperimentConfig, Method, Task};
use crate::error::{CliError, Result};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub methods: Option<Vec<Method>>,
    pub c: Option<f64>,
}

/// A loaded experiment with its output layout.
#[derive(Debug, Clone)]
pub struct Context {
    pub exp: Experiment,
    pub layout: Layout,
    pub config_hash: String,
}

impl Context {
    pub fn load(config_path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut config: ExperimentConfig = read_json(config_path)?;
        if let Some(seed) = overrides.seed {
            config.rollout.seed = seed;
        }
        if let Some(methods) = &overrides.methods {
            config.methods = methods.clone();
        }
        if let Some(c) = overrides.c {
            config.c = c;
        }
        let base = config_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let exp = Experiment::from_config(config, base)?;
        let layout = Layout::new(exp.output_dir(overrides.out.as_deref()));
        let config_hash = exp.config.hash();
        Ok(Self {
            exp,
            layout,
            config_hash,
        })
    }

    fn config(&self) -> &ExperimentConfig {
        &self.exp.config
    }

    /// Hash of everything that determines the transferred policies.
    fn transfer_hash(&self) -> String {
        let c = self.config();
        hash_json(&(
            &c.sources,
            &c.tests,
            &self.exp.caution,
            c.c,
            &c.primal_variance,
        ))
    }
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: String,
    pub start_value: f64,
    pub feature_dim: usize,
    /// File name to SHA-256.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub sources_hash: String,
    pub sources: Vec<SourceRecord>,
}

const POLICY_FILE: &str = "policy.json";
const Q_FILE: &str = "q.json";
const SF_FILE: &str = "sf.bin";
const OCCUPANCY_FILE: &str = "occupancy.json";

fn features_for(task: &Task) -> FeatureMap {
    match &task.grid {
        Some(grid) => grid.features(),
        None => FeatureMap::one_hot_next_state(task.mdp.n_states()),
    }
}

/// Solves each source task and stores its optimal policy, action values,
/// successor features and occupancy.
pub fn train(ctx: &Context) -> Result<TrainManifest> {
    let hash = &ctx.config_hash;
    let mut sources = Vec::new();
    for task in &ctx.exp.sources {
        let dir = ctx.layout.source_dir(&task.id);
        let (q, policy) = value_iteration(&task.mdp, DEFAULT_TOL)?;
        let sf = compute_sf(
            &task.mdp,
            &policy,
            &features_for(task),
            DEFAULT_TOL,
            task.id.clone(),
        )?;
        let d = compute_occupancy(&task.mdp, &policy)?;
        let start_value = start_return(&task.mdp, &policy, &q);

        let mut files = BTreeMap::new();
        let mut put = |name: &str, bytes: Vec<u8>| {
            files.insert(name.to_owned(), sha256_hex(&bytes));
        };
        put(
            POLICY_FILE,
            write_envelope(&dir.join(POLICY_FILE), hash, &policy)?,
        );
        put(Q_FILE, write_envelope(&dir.join(Q_FILE), hash, &q)?);
        let sf_bytes = sf.to_bytes();
        write_bytes(&dir.join(SF_FILE), &sf_bytes)?;
        put(SF_FILE, sf_bytes);
        put(
            OCCUPANCY_FILE,
            write_envelope(&dir.join(OCCUPANCY_FILE), hash, &d)?,
        );
        if let Some(grid) = &task.grid {
            write_bytes(
                &dir.join("policy.txt"),
                render_policy(&policy, grid.config()).as_bytes(),
            )?;
        }
        info!("trained `{}`: start value {start_value:.4}", task.id);
        sources.push(SourceRecord {
            id: task.id.clone(),
            start_value,
            feature_dim: sf.dim,
            files,
        });
    }
    let manifest = TrainManifest {
        sources_hash: ctx.config().sources_hash(),
        sources,
    };
    write_envelope(&ctx.layout.train_manifest(), hash, &manifest)?;
    Ok(manifest)
}

fn read_checked(dir: &Path, record: &SourceRecord, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = read_artifact_bytes(&path, "train")?;
    if record.files.get(name).map(String::as_str) != Some(sha256_hex(&bytes).as_str()) {
        return Err(CliError::Runtime(format!(
            "{}: contents do not match the train manifest; rerun `cat train`",
            path.display()
        )));
    }
    Ok(bytes)
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    let env: crate::artifacts::Envelope<T> = serde_json::from_slice(bytes)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(env.data)
}

/// Trained source library with cached successor features and occupancies.
pub fn load_library(ctx: &Context) -> Result<SourceLibrary> {
    let manifest: TrainManifest = read_envelope(&ctx.layout.train_manifest(), "train")?.data;
    if manifest.sources_hash != ctx.config().sources_hash() {
        return Err(CliError::MissingArtifact {
            path: ctx.layout.train_manifest(),
            hint: "train artifacts were built from different source tasks; rerun `cat train`"
                .into(),
        });
    }
    let mut entries = Vec::new();
    for record in &manifest.sources {
        let dir = ctx.layout.source_dir(&record.id);
        let policy: TabularPolicy = parse(
            &dir.join(POLICY_FILE),
            &read_checked(&dir, record, POLICY_FILE)?,
        )?;
        let sf = SuccessorFeatureTable::from_bytes(&read_checked(&dir, record, SF_FILE)?)?;
        let d: OccupancyMeasure = parse(
            &dir.join(OCCUPANCY_FILE),
            &read_checked(&dir, record, OCCUPANCY_FILE)?,
        )?;
        entries.push(
            SourceEntry::new(record.id.clone(), record.id.clone(), policy)
                .with_successor_features(sf)
                .with_occupancy(d),
        );
    }
    Ok(SourceLibrary::new(entries)?)
}

// ------------------------------------------------------------- transfer

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverUse {
    pub value_iterations: u64,
    pub policy_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub inputs_hash: String,
    pub task: String,
    pub method: Method,
    pub policy_hash: String,
    /// Solver calls made while composing, recorded for `cat_sf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_calls: Option<SolverUse>,
    pub result: TransferResult,
}

/// Runs one method on one test task.
pub fn run_method(
    ctx: &Context,
    library: &SourceLibrary,
    task: &Task,
    method: Method,
) -> Result<TransferRecord> {
    let cfg = ctx.config();
    let spec = ctx.exp.caution_for(task);
    let mut solver_use = None;
    let result = match method {
        Method::RiskNeutral => {
            let q = evaluate_sources(
                &task.mdp,
                library,
                EvaluationMode::Iterative,
                None,
                DEFAULT_TOL,
            )?;
            risk_neutral_transfer(&q)?
        }
        Method::Cat => cat_iterative_transfer(&task.mdp, library, &spec, cfg.c, DEFAULT_TOL)?,
        Method::CatSf => {
            let w = task.one_hot_weights()?;
            reset_solver_calls();
            let result = cat_sf_transfer(library, &w, &spec, cfg.c, &task.mdp)?;
            let calls = solver_calls();
            if calls.value_iterations != 0 || calls.policy_evaluations != 0 {
                return Err(CliError::Runtime(format!(
                    "successor-feature transfer on `{}` ran {} value iterations and {} policy evaluations",
                    task.id, calls.value_iterations, calls.policy_evaluations
                )));
            }
            solver_use = Some(SolverUse {
                value_iterations: calls.value_iterations,
                policy_evaluations: calls.policy_evaluations,
            });
            result
        }
        Method::PrimalVariance => {
            let pv = &cfg.primal_variance;
            primal_variance_transfer(
                &task.mdp,
                library,
                cfg.primal_c(),
                pv.n_rollouts,
                pv.horizon,
                pv.seed,
            )?
        }
    };
    if result.all_disqualified {
        warn!(
            "{method} on `{}`: every source is infeasible, fell back to risk-neutral",
            task.id
        );
    }
    Ok(TransferRecord {
        inputs_hash: ctx.transfer_hash(),
        task: task.id.clone(),
        method,
        policy_hash: policy_hash(&result.policy),
        solver_calls: solver_use,
        result,
    })
}

/// Runs every configured method on every test task.
pub fn transfer(ctx: &Context) -> Result<Vec<TransferRecord>> {
    let library = load_library(ctx)?;
    let mut records = Vec::new();
    for task in &ctx.exp.tests {
        for &method in &ctx.config().methods {
            let record = run_method(ctx, &library, task, method)?;
            let name = method.as_str();
            write_envelope(
                &ctx.layout.transfer_result(&task.id, name),
                &ctx.config_hash,
                &record,
            )?;
            write_envelope(
                &ctx.layout.transfer_policy(&task.id, name),
                &ctx.config_hash,
                &record.result.policy,
            )?;
            if let Some(grid) = &task.grid {
                let map = render_policy(&record.result.policy, grid.config());
                write_bytes(&ctx.layout.transfer_render(&task.id, name), map.as_bytes())?;
            }
            info!(
                "{name} on `{}`: policy {}",
                task.id,
                &record.policy_hash[..12]
            );
            records.push(record);
        }
    }
    Ok(records)
}

fn load_transfer(ctx: &Context, task: &Task, method: Method) -> Result<TransferRecord> {
    let path = ctx.layout.transfer_result(&task.id, method.as_str());
    let record: TransferRecord = read_envelope(&path, "transfer")?.data;
    if record.inputs_hash != ctx.transfer_hash() {
        return Err(CliError::MissingArtifact {
            path,
            hint: "transfer output is stale for this config; rerun `cat transfer`".into(),
        });
    }
    Ok(record)
}

// ------------------------------------------------------------- evaluate

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub task: String,
    pub method: Method,
    pub failure_rate: f64,
    pub goal_rate: f64,
    pub timeout_rate: f64,
    pub mean_return: f64,
    pub mean_steps: f64,
    pub seed: u64,
}

pub const CSV_HEADER: &str =
    "task,method,failure_rate,goal_rate,timeout_rate,mean_return,mean_steps,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub task: String,
    pub method: Method,
    pub policy_hash: String,
    pub seed: u64,
    pub horizon: usize,
    pub stats: RolloutStats,
    /// Exact discounted occupancy of the danger cells.
    pub danger_mass: f64,
    /// Exact expected discounted return from the start distribution.
    pub start_value: f64,
    /// Number of states won by each source.
    pub wins: Vec<usize>,
    #[serde(with = "cat_core::serde_ext::ext_real_vec")]
    pub cautions: Vec<f64>,
    pub all_disqualified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<EvaluationRow>,
}

/// Rolls out every transferred policy and writes the CSV and JSON results.
pub fn evaluate(ctx: &Context) -> Result<EvaluationReport> {
    if let Some(task) = ctx.exp.tests.iter().find(|t| t.grid.is_none()) {
        return Err(CliError::Schema(format!(
            "evaluate needs grid test tasks; `{}` is a raw MDP",
            task.id
        )));
    }
    let ro = &ctx.config().rollout;
    let mut rows = Vec::new();
    for task in &ctx.exp.tests {
        let grid = task.grid.as_ref().expect("checked above");
        for &method in &ctx.config().methods {
            let record = load_transfer(ctx, task, method)?;
            let policy = &record.result.policy;
            let stats = grid.rollout(policy, ro.horizon, ro.episodes, ro.seed)?;
            let d = compute_occupancy(&task.mdp, policy)?;
            let q = policy_evaluation(&task.mdp, policy, DEFAULT_TOL)?;
            let mut wins = vec![0; record.result.n_sources];
            for &j in &record.result.winner {
                wins[j] += 1;
            }
            rows.push(EvaluationRow {
                task: task.id.clone(),
                method,
                policy_hash: record.policy_hash.clone(),
                seed: ro.seed,
                horizon: ro.horizon,
                stats,
                danger_mass: d.mass_in(&task.danger_states),
                start_value: start_return(&task.mdp, policy, &q),
                wins,
                cautions: record.result.cautions.clone(),
                all_disqualified: record.result.all_disqualified,
            });
        }
    }
    write_csv(&ctx.layout.results_csv(), &rows)?;
    let report = EvaluationReport { rows };
    write_envelope(&ctx.layout.evaluate_report(), &ctx.config_hash, &report)?;
    Ok(report)
}

fn write_csv(path: &Path, rows: &[EvaluationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRow {
            task: r.task.clone(),
            method: r.method,
            failure_rate: r.stats.failure_rate,
            goal_rate: r.stats.goal_rate,
            timeout_rate: r.stats.timeout_rate,
            mean_return: r.stats.mean_return,
            mean_steps: r.stats.mean_steps,
            seed: r.seed,
        })?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_bytes(path, &bytes)
}

// --------------------------------------------------------- check-bounds

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBound {
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<BoundReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSummary {
    pub seed: u64,
    pub feasible_margin: f64,
    pub n_instances: usize,
    pub n_holding: usize,
    pub fraction_holding: f64,
    pub max_slack_utilization: f64,
    /// Draws discarded for leaving the feasible margin.
    pub rejected: usize,
    /// Instances where the feature-space bound is at least the reward-space one.
    pub corollary_dominates: usize,
    /// Largest `lhs` and `rhs` over the same-task, `c = 0` instances.
    pub identical_c0_max_lhs: f64,
    pub identical_c0_max_rhs: f64,
    pub tasks: Vec<TaskBound>,
    pub warnings: Vec<String>,
}

/// Randomized bound suite plus, optionally, one check per test task.
pub fn check_bounds(ctx: &Context) -> Result<BoundsSummary> {
    let cfg = ctx.config();
    let b = &cfg.bounds;
    let mut warnings = Vec::new();
    let mut tasks = Vec::new();
    if b.include_tasks {
        let library = load_library(ctx)?;
        let source_mdps: Vec<_> = ctx.exp.sources.iter().map(|t| t.mdp.clone()).collect();
        for task in &ctx.exp.tests {
            let spec = ctx.exp.caution_for(task);
            let bound = match check_theorem1(
                &task.mdp,
                &source_mdps,
                &library,
                &spec,
                cfg.c,
                b.feasible_margin,
            ) {
                Ok(report) => {
                    if !report.checkable {
                        let msg = format!(
                            "`{}`: the {} caution has no finite constants; bound not checkable",
                            task.id,
                            spec.name()
                        );
                        warn!("{msg}");
                        warnings.push(msg);
                    }
                    TaskBound {
                        task: task.id.clone(),
                        report: Some(report),
                        error: None,
                    }
                }
                Err(e @ CatError::Infeasible(_)) => TaskBound {
                    task: task.id.clone(),
                    report: None,
                    error: Some(e.to_string()),
                },
                Err(e) => return Err(e.into()),
            };
            tasks.push(bound);
        }
    }

    let suite = randomized_theorem1_suite(b.random_instances, b.seed, b.feasible_margin)?;
    let mut lines = Vec::new();
    for record in &suite.records {
        serde_json::to_writer(&mut lines, record).map_err(|e| CliError::Runtime(e.to_string()))?;
        lines.push(b'\n');
    }
    write_bytes(&ctx.layout.bounds_dir().join("instances.jsonl"), &lines)?;

    let identical: Vec<&InstanceRecord> = suite
        .records
        .iter()
        .filter(|r| r.kind == InstanceKind::IdenticalRiskNeutral)
        .collect();
    let n = suite.records.len();
    let summary = BoundsSummary {
        seed: b.seed,
        feasible_margin: b.feasible_margin,
        n_instances: n,
        n_holding: suite.n_holding(),
        fraction_holding: if n == 0 {
            1.0
        } else {
            suite.n_holding() as f64 / n as f64
        },
        max_slack_utilization: suite.max_slack_utilization(),
        rejected: suite.rejected,
        corollary_dominates: suite
            .records
            .iter()
            .filter(|r| r.report.corollary_rhs.is_some_and(|c| c >= r.report.rhs))
            .count(),
        identical_c0_max_lhs: identical
            .iter()
            .filter_map(|r| r.report.lhs)
            .fold(0.0, f64::max),
        identical_c0_max_rhs: identical.iter().map(|r| r.report.rhs).fold(0.0, f64::max),
        tasks,
        warnings,
    };
    info!(
        "bound holds on {}/{} instances, max slack utilization {:.3}",
        summary.n_holding, summary.n_instances, summary.max_slack_utilization
    );
    write_envelope(
        &ctx.layout.bounds_dir().join("summary.json"),
        &ctx.config_hash,
        &summary,
    )?;
    Ok(summary)
}

// --------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    /// Seconds since the Unix epoch; the only field that varies between reruns.
    pub generated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub methods: Vec<Method>,
    pub rows: Vec<EvaluationRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSummary>,
    pub metadata: RunMetadata,
}

/// Collects the evaluation and bound outputs into `report.json` and a
/// markdown summary.
pub fn report(ctx: &Context) -> Result<ExperimentReport> {
    let eval = read_envelope::<EvaluationReport>(&ctx.layout.evaluate_report(), "evaluate")?;
    if eval.config_hash != ctx.config_hash {
        return Err(CliError::MissingArtifact {
            path: ctx.layout.evaluate_report(),
            hint: "evaluation was run with a different config; rerun `cat evaluate`".into(),
        });
    }
    let cfg = ctx.config();
    let mut expected: Vec<(String, Method)> = ctx
        .exp
        .tests
        .iter()
        .flat_map(|t| cfg.methods.iter().map(move |&m| (t.id.clone(), m)))
        .collect();
    let mut found: Vec<(String, Method)> = eval
        .data
        .rows
        .iter()
        .map(|r| (r.task.clone(), r.method))
        .collect();
    expected.sort();
    found.sort();
    if expected != found {
        return Err(CliError::Runtime(
            "evaluation rows do not cover each (task, method) pair once".into(),
        ));
    }
    let bounds_path = ctx.layout.bounds_dir().join("summary.json");
    let bounds = if bounds_path.exists() {
        Some(read_envelope::<BoundsSummary>(&bounds_path, "check-bounds")?.data)
    } else {
        None
    };
    let generated_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let report = ExperimentReport {
        name: cfg.name.clone(),
        methods: cfg.methods.clone(),
        rows: eval.data.rows,
        bounds,
        metadata: RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            generated_at,
        },
    };
    write_envelope(&ctx.layout.report_json(), &ctx.config_hash, &report)?;
    write_bytes(
        &ctx.layout.report_md(),
        render_markdown(&report, &ctx.config_hash).as_bytes(),
    )?;
    Ok(report)
}

pub fn render_markdown(report: &ExperimentReport, config_hash: &str) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# {}\n", report.name);
    let _ = writeln!(md, "Config hash: `{config_hash}`\n");
    let _ = writeln!(
        md,
        "| task | method | failure | goal | timeout | mean return | danger mass |"
    );
    let _ = writeln!(md, "|---|---|---|---|---|---|---|");
    for r in &report.rows {
        let _ = writeln!(
            md,
            "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.2e} |",
            r.task,
            r.method,
            r.stats.failure_rate,
            r.stats.goal_rate,
            r.stats.timeout_rate,
            r.stats.mean_return,
            r.danger_mass
        );
    }
    let _ = writeln!(md, "\n## Mean failure rate\n");
    for &m in &report.methods {
        let rates: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.method == m)
            .map(|r| r.stats.failure_rate)
            .collect();
        if !rates.is_empty() {
            let mean = rates.iter().sum::<f64>() / rates.len() as f64;
            let _ = writeln!(md, "- {m}: {mean:.4}");
        }
    }
    if let Some(b) = &report.bounds {
        let _ = writeln!(md, "\n## Bound checks\n");
        let _ = writeln!(
            md,
            "- random instances holding: {}/{} (max slack utilization {:.3}, {} redraws)",
            b.n_holding, b.n_instances, b.max_slack_utilization, b.rejected
        );
        let _ = writeln!(
            md,
            "- feature-space bound at least as large: {}/{}",
            b.corollary_dominates, b.n_instances
        );
        for t in &b.tasks {
            match (&t.report, &t.error) {
                (Some(r), _) => {
                    let holds = r
                        .holds
                        .map_or("not checkable".to_owned(), |h| h.to_string());
                    let _ = writeln!(
                        md,
                        "- `{}`: holds {holds}, margin valid {}",
                        t.task, r.margin_valid
                    );
                }
                (None, Some(e)) => {
                    let _ = writeln!(md, "- `{}`: {e}", t.task);
                }
                (None, None) => {}
            }
        }
        for w in &b.warnings {
            let _ = writeln!(md, "- warning: {w}");
        }
    }
    md
}

/// Reads a JSON artifact without the envelope check; used by tests and tools.
pub fn read_artifact<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(read_envelope::<T>(path, "the producing command")?.data)
}
