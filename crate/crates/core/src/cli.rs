//! Command-line front end: parses scenario configuration files, dispatches
//! the design / analyze / simulate / reproduce workflows, and writes
//! machine-readable reports plus trajectory CSVs.
//!
//! Exit codes are the machine contract: 0 ok, 2 infeasible or budget too
//! small, 3 invalid input, 4 diverged.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::lmi::{BlockMargin, SolverOptions};
use crate::numkit::{self, Mat};
use crate::sim::{self, Scenario, SimError, Trajectory};
use crate::synthesis::{self, AgentModel, CostWeights, ProtocolGains, SynthesisError};
use crate::topology::{Edge, Topology, TopologyKind};

/// A simulated run whose disagreement metric grows beyond this factor of its
/// initial value is reported as diverged even when the states stay finite.
const DIVERGENCE_RATIO: f64 = 100.0;

#[derive(Parser, Debug)]
#[command(name = "gcsync", version, about = "Guaranteed-cost synchronization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Design protocol gains under the configured cost budget.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Check candidate gains against the analysis criteria.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gains: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Integrate the closed loop for given gains and export CSVs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gains: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Run a bundled benchmark end to end: design, analyze, simulate.
    Reproduce {
        /// One of: example1, example2.
        example_id: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
}

/// Command-line values that take precedence over config fields.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub budget: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
}

// ---------------------------------------------------------------------------
// Scenario configuration.

fn default_dt() -> f64 {
    1e-3
}

fn default_horizon() -> f64 {
    10.0
}

fn default_margin() -> f64 {
    1e-7
}

fn default_delta() -> f64 {
    1e-4
}

fn default_max_iters() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub budget: f64,
    /// One array of length `n` per agent, agents in index order.
    pub initial_states: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_initial_states: Option<Vec<Vec<f64>>>,
    pub model: ModelConfig,
    pub topology: TopologyConfig,
    pub weights: WeightsConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    /// Row-major n x n.
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    /// Row-major n x m.
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    /// Row-major d x n.
    #[serde(rename = "C")]
    pub c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    #[serde(rename = "N")]
    pub agents: usize,
    /// `[i, j, w]` with 1-based agent indices.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    /// Row-major n x n.
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    /// Row-major m x m.
    #[serde(rename = "R")]
    pub r: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig { dt: default_dt(), horizon: default_horizon() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig {
            margin: default_margin(),
            delta: default_delta(),
            max_iters: default_max_iters(),
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<ScenarioConfig, String> {
        toml::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(b) = ov.budget {
            self.budget = b;
        }
        if let Some(dt) = ov.dt {
            self.sim.dt = dt;
        }
        if let Some(h) = ov.horizon {
            self.sim.horizon = h;
        }
    }

    pub fn build_model(&self) -> Result<AgentModel, String> {
        let m = &self.model;
        let a = Mat::from_row_major(m.n, m.n, m.a.clone()).map_err(|e| format!("A: {e}"))?;
        let b = Mat::from_row_major(m.n, m.m, m.b.clone()).map_err(|e| format!("B: {e}"))?;
        let c = Mat::from_row_major(m.d, m.n, m.c.clone()).map_err(|e| format!("C: {e}"))?;
        AgentModel::new(a, b, c).map_err(|e| e.to_string())
    }

    pub fn build_topology(&self) -> Result<Topology, String> {
        let t = &self.topology;
        let edges = t
            .edges
            .iter()
            .map(|&(from, to, weight)| Edge { from, to, weight })
            .collect();
        Topology::new(t.kind, t.agents, edges).map_err(|e| e.to_string())
    }

    pub fn build_weights(&self) -> Result<CostWeights, String> {
        let n = self.model.n;
        let m = self.model.m;
        let q = Mat::from_row_major(n, n, self.weights.q.clone()).map_err(|e| format!("Q: {e}"))?;
        let r = Mat::from_row_major(m, m, self.weights.r.clone()).map_err(|e| format!("R: {e}"))?;
        CostWeights::new(q, r).map_err(|e| e.to_string())
    }

    pub fn stacked_initial_states(&self) -> Result<Vec<f64>, String> {
        stack_states(&self.initial_states, self.topology.agents, self.model.n, "initial_states")
    }

    pub fn stacked_protocol_states(&self) -> Result<Option<Vec<f64>>, String> {
        match &self.protocol_initial_states {
            None => Ok(None),
            Some(rows) => Ok(Some(stack_states(
                rows,
                self.topology.agents,
                self.model.n,
                "protocol_initial_states",
            )?)),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            margin: self.solver.margin,
            delta: self.solver.delta,
            max_iters: self.solver.max_iters,
            ..SolverOptions::default()
        }
    }
}

fn stack_states(rows: &[Vec<f64>], agents: usize, n: usize, label: &str) -> Result<Vec<f64>, String> {
    if rows.len() != agents {
        return Err(format!("{label} has {} arrays, expected N = {agents}", rows.len()));
    }
    let mut out = Vec::with_capacity(agents * n);
    for (idx, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(format!(
                "{label}[{}] has {} entries, expected n = {n}",
                idx + 1,
                row.len()
            ));
        }
        out.extend_from_slice(row);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Gains files and reports.

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainsFile {
    pub ku: Mat,
    pub kphi: Mat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_coefficient: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<Vec<MarginReport>>,
}

impl GainsFile {
    pub fn parse(text: &str) -> Result<GainsFile, String> {
        serde_json::from_str(text).map_err(|e| format!("gains parse error: {e}"))
    }

    pub fn gains(&self) -> ProtocolGains {
        ProtocolGains { ku: self.ku.clone(), kphi: self.kphi.clone() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginReport {
    pub label: String,
    pub extreme: f64,
    pub satisfied: bool,
}

impl From<&BlockMargin> for MarginReport {
    fn from(m: &BlockMargin) -> MarginReport {
        MarginReport { label: m.label.clone(), extreme: m.extreme, satisfied: m.satisfied }
    }
}

fn margin_reports(margins: &[BlockMargin]) -> Vec<MarginReport> {
    margins.iter().map(MarginReport::from).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Infeasible,
    BudgetTooSmall,
    Diverged,
    InvalidConfig,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::Infeasible | RunStatus::BudgetTooSmall => 2,
            RunStatus::InvalidConfig => 3,
            RunStatus::Diverged => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Infeasible => "infeasible",
            RunStatus::BudgetTooSmall => "budget_too_small",
            RunStatus::Diverged => "diverged",
            RunStatus::InvalidConfig => "invalid_config",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainsFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_coefficient: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_error_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margins: Option<Vec<MarginReport>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub csv_paths: Vec<String>,
    /// Present only when the protocol started away from rest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_guarantee_void: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<ReproduceSummary>,
}

impl RunReport {
    fn new(command: impl Into<String>) -> RunReport {
        RunReport {
            command: command.into(),
            status: RunStatus::Ok,
            reason: None,
            gains: None,
            gamma: None,
            budget_coefficient: None,
            cost_bound: None,
            final_cost: None,
            final_error_metric: None,
            solver_iterations: None,
            margins: None,
            csv_paths: Vec::new(),
            budget_guarantee_void: None,
            summary: None,
        }
    }

    fn fail(mut self, status: RunStatus, reason: impl Into<String>) -> RunReport {
        self.status = status;
        self.reason = Some(reason.into());
        self
    }

    fn invalid(self, reason: impl Into<String>) -> RunReport {
        self.fail(RunStatus::InvalidConfig, reason)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReproduceSummary {
    pub budget: f64,
    pub final_cost: f64,
    pub cost_within_budget: bool,
    pub initial_error_metric: f64,
    pub final_error_metric: f64,
    /// Synchronization function at t = 0 (leaderless runs).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sync_function_start: Option<Vec<f64>>,
    /// Published value the start is compared against, when one exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sync_function_reference: Option<Vec<f64>>,
}

/// Keeps reports free of non-finite numbers.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

// ---------------------------------------------------------------------------
// Bundled benchmark scenarios.

struct ExampleMeta {
    id: &'static str,
    config: &'static str,
    c0_reference: Option<[f64; 3]>,
}

const EXAMPLES: &[ExampleMeta] = &[
    ExampleMeta {
        id: "example1",
        config: include_str!("../scenarios/example1.toml"),
        c0_reference: Some([2.3333, 3.8333, 4.8333]),
    },
    ExampleMeta {
        id: "example2",
        config: include_str!("../scenarios/example2.toml"),
        c0_reference: None,
    },
];

/// Raw TOML text of a bundled scenario.
pub fn bundled_scenario(id: &str) -> Option<&'static str> {
    EXAMPLES.iter().find(|e| e.id == id).map(|e| e.config)
}

// ---------------------------------------------------------------------------
// Shared command plumbing.

struct Parts {
    model: AgentModel,
    topology: Topology,
    weights: CostWeights,
    x0: Vec<f64>,
    phi0: Option<Vec<f64>>,
    solver: SolverOptions,
}

fn build_parts(cfg: &ScenarioConfig) -> Result<Parts, String> {
    if !(cfg.budget > 0.0) || !cfg.budget.is_finite() {
        return Err(format!("budget must be positive, got {}", cfg.budget));
    }
    Ok(Parts {
        model: cfg.build_model()?,
        topology: cfg.build_topology()?,
        weights: cfg.build_weights()?,
        x0: cfg.stacked_initial_states()?,
        phi0: cfg.stacked_protocol_states()?,
        solver: cfg.solver_options(),
    })
}

fn synthesis_failure(e: &SynthesisError) -> (RunStatus, String) {
    match e {
        SynthesisError::BudgetTooSmall { .. } => (RunStatus::BudgetTooSmall, e.to_string()),
        SynthesisError::Infeasible { .. } | SynthesisError::NotConverged { .. } => {
            (RunStatus::Infeasible, e.to_string())
        }
        SynthesisError::Lmi(_) | SynthesisError::Num(_) => {
            (RunStatus::Infeasible, format!("solver failure: {e}"))
        }
        _ => (RunStatus::InvalidConfig, e.to_string()),
    }
}

fn read_to_string(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| format!("cannot serialize {}: {e}", path.display()))?;
    text.push('\n');
    write_file(path, &text)
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------------------
// Commands.

pub fn cmd_design(config_path: &Path, out_dir: &Path, ov: &Overrides) -> RunReport {
    let report = RunReport::new("design");
    let text = match read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => return report.invalid(e),
    };
    let mut cfg = match ScenarioConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return report.invalid(e),
    };
    cfg.apply(ov);
    run_design(&cfg, out_dir, "design")
}

fn run_design(cfg: &ScenarioConfig, out_dir: &Path, command: &str) -> RunReport {
    let mut report = RunReport::new(command);
    let parts = match build_parts(cfg) {
        Ok(p) => p,
        Err(e) => return report.invalid(e),
    };
    let design = match synthesis::design(
        &parts.model,
        &parts.topology,
        &parts.weights,
        &parts.x0,
        cfg.budget,
        &parts.solver,
    ) {
        Ok(d) => d,
        Err(e) => {
            let (status, reason) = synthesis_failure(&e);
            if let SynthesisError::NotConverged { iterations } = e {
                report.solver_iterations = Some(iterations);
            }
            return report.fail(status, reason);
        }
    };

    report.gamma = finite(design.gamma);
    report.budget_coefficient = finite(design.budget_coefficient);
    report.solver_iterations = Some(design.iterations);
    let cert = design.certificate.as_ref();
    report.cost_bound = cert.and_then(|c| finite(c.cost_bound));
    report.margins = cert.map(|c| margin_reports(&c.margins));
    let gains_file = GainsFile {
        ku: design.gains.ku.clone(),
        kphi: design.gains.kphi.clone(),
        gamma: finite(design.gamma),
        budget_coefficient: finite(design.budget_coefficient),
        margins: report.margins.clone(),
    };
    report.gains = Some(gains_file.clone());

    if !design.certified {
        return report.fail(
            RunStatus::Infeasible,
            "designed gains failed the analysis certification",
        );
    }
    if let Err(e) = write_json(&out_dir.join("gains.json"), &gains_file) {
        return report.invalid(e);
    }
    report
}

pub fn cmd_analyze(
    config_path: &Path,
    gains_path: &Path,
    out_dir: &Path,
    ov: &Overrides,
) -> RunReport {
    let _ = out_dir;
    let mut report = RunReport::new("analyze");
    let cfg_text = match read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => return report.invalid(e),
    };
    let mut cfg = match ScenarioConfig::parse(&cfg_text) {
        Ok(c) => c,
        Err(e) => return report.invalid(e),
    };
    cfg.apply(ov);
    let gains_text = match read_to_string(gains_path) {
        Ok(t) => t,
        Err(e) => return report.invalid(e),
    };
    let gains_file = match GainsFile::parse(&gains_text) {
        Ok(g) => g,
        Err(e) => return report.invalid(e),
    };
    let parts = match build_parts(&cfg) {
        Ok(p) => p,
        Err(e) => return report.invalid(e),
    };

    match synthesis::budget_coefficient(&parts.x0, parts.topology.kind(), parts.topology.agents()) {
        Ok(c) => report.budget_coefficient = finite(c),
        Err(e) => return report.invalid(e.to_string()),
    }

    match synthesis::analyze_with(
        &parts.model,
        &parts.topology,
        &parts.weights,
        &gains_file.gains(),
        &parts.x0,
        cfg.budget,
        &parts.solver,
    ) {
        Ok(cert) => {
            report.cost_bound = finite(cert.cost_bound);
            report.margins = Some(margin_reports(&cert.margins));
            report
        }
        Err(SynthesisError::Infeasible { margins }) => {
            report.margins = Some(margin_reports(&margins));
            report.fail(RunStatus::Infeasible, "analysis criteria are infeasible for these gains")
        }
        Err(e) => {
            let (status, reason) = synthesis_failure(&e);
            report.fail(status, reason)
        }
    }
}

pub fn cmd_simulate(
    config_path: &Path,
    gains_path: &Path,
    out_dir: &Path,
    ov: &Overrides,
) -> RunReport {
    let mut report = RunReport::new("simulate");
    let cfg_text = match read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => return report.invalid(e),
    };
    let mut cfg = match ScenarioConfig::parse(&cfg_text) {
        Ok(c) => c,
        Err(e) => return report.invalid(e),
    };
    cfg.apply(ov);
    let gains_text = match read_to_string(gains_path) {
        Ok(t) => t,
        Err(e) => return report.invalid(e),
    };
    let gains_file = match GainsFile::parse(&gains_text) {
        Ok(g) => g,
        Err(e) => return report.invalid(e),
    };
    match run_simulation(&cfg, &gains_file.gains(), out_dir, &mut report) {
        Ok(_) => report,
        Err((status, reason)) => report.fail(status, reason),
    }
}

/// Integrates, exports CSVs, and fills the trajectory-related report fields.
/// Returns the trajectory for callers that need more than the report.
fn run_simulation(
    cfg: &ScenarioConfig,
    gains: &ProtocolGains,
    out_dir: &Path,
    report: &mut RunReport,
) -> Result<Trajectory, (RunStatus, String)> {
    let invalid = |e: String| (RunStatus::InvalidConfig, e);
    let parts = build_parts(cfg).map_err(invalid)?;
    let scenario = Scenario::new(
        parts.model.clone(),
        parts.topology.clone(),
        parts.weights.clone(),
        gains.clone(),
        parts.x0.clone(),
        parts.phi0.clone(),
        cfg.sim.dt,
        cfg.sim.horizon,
    )
    .map_err(|e| (RunStatus::InvalidConfig, e.to_string()))?;

    if !scenario.protocol_start_is_zero() {
        report.budget_guarantee_void = Some(true);
    }

    let traj = match sim::integrate(&scenario) {
        Ok(t) => t,
        Err(e @ SimError::NumericalBlowup { .. }) => {
            return Err((RunStatus::Diverged, e.to_string()));
        }
        Err(e) => return Err((RunStatus::InvalidConfig, e.to_string())),
    };

    let metrics = sim::error_metrics(&traj, parts.topology.kind());
    let initial_metric = metrics.first().copied().unwrap_or(0.0);
    let final_metric = metrics.last().copied().unwrap_or(0.0);
    report.final_cost = finite(traj.final_cost());
    report.final_error_metric = finite(final_metric);

    let traj_path = out_dir.join("trajectory.csv");
    let mut buf = Vec::new();
    sim::write_csv(&traj, &mut buf).map_err(|e| invalid(e.to_string()))?;
    write_file(&traj_path, &String::from_utf8(buf).expect("csv is utf-8")).map_err(invalid)?;
    report.csv_paths.push(path_str(&traj_path));

    if parts.topology.kind() == TopologyKind::Leaderless {
        let sync_path = out_dir.join("sync_function.csv");
        let text =
            sync_function_csv(&parts.model, &parts.x0, &traj.times).map_err(|e| invalid(e.to_string()))?;
        write_file(&sync_path, &text).map_err(invalid)?;
        report.csv_paths.push(path_str(&sync_path));
    }

    if final_metric > DIVERGENCE_RATIO * initial_metric.max(1e-6) {
        return Err((
            RunStatus::Diverged,
            format!(
                "disagreement grew from {initial_metric:.3e} to {final_metric:.3e}; \
                 the network does not synchronize"
            ),
        ));
    }
    Ok(traj)
}

/// CSV of the closed-form synchronization function on the sample grid,
/// advanced one step at a time by the matrix exponential of one step.
fn sync_function_csv(model: &AgentModel, x0: &[f64], times: &[f64]) -> Result<String, SimError> {
    let mut out = String::from("t");
    for i in 1..=model.n() {
        out.push_str(&format!(",c{i}"));
    }
    out.push('\n');
    let mut c = sim::sync_function(model, x0, 0.0)?;
    let step = match times.len() {
        0 | 1 => None,
        _ => Some(numkit::expm(model.a(), times[1] - times[0])?),
    };
    for (idx, t) in times.iter().enumerate() {
        if idx > 0 {
            if let Some(e) = &step {
                c = e.mul_vec(&c);
            }
        }
        out.push_str(&format!("{t:?}"));
        for v in &c {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_reproduce(example_id: &str, out_dir: &Path, ov: &Overrides) -> RunReport {
    let command = format!("reproduce {example_id}");
    let report = RunReport::new(&command);
    let Some(meta) = EXAMPLES.iter().find(|e| e.id == example_id) else {
        return report.invalid(format!(
            "unknown example id '{example_id}'; expected example1 or example2"
        ));
    };
    let mut cfg = ScenarioConfig::parse(meta.config).expect("bundled scenarios parse");
    cfg.apply(ov);

    // Stage 1: design.
    let mut report = run_design(&cfg, out_dir, &command);
    if report.status != RunStatus::Ok {
        return report;
    }
    let gains = report.gains.as_ref().expect("design success carries gains").gains();

    // Stage 2: independent analysis of the designed gains.
    let parts = match build_parts(&cfg) {
        Ok(p) => p,
        Err(e) => return report.invalid(e),
    };
    let cert = match synthesis::analyze_with(
        &parts.model,
        &parts.topology,
        &parts.weights,
        &gains,
        &parts.x0,
        cfg.budget,
        &parts.solver,
    ) {
        Ok(c) => c,
        Err(e) => {
            let (status, reason) = synthesis_failure(&e);
            return report.fail(status, format!("re-analysis of designed gains failed: {reason}"));
        }
    };
    report.cost_bound = finite(cert.cost_bound);
    report.margins = Some(margin_reports(&cert.margins));

    // Stage 3: closed-loop simulation.
    let traj = match run_simulation(&cfg, &gains, out_dir, &mut report) {
        Ok(t) => t,
        Err((status, reason)) => return report.fail(status, reason),
    };
    let metrics = sim::error_metrics(&traj, parts.topology.kind());

    let sync_start = match parts.topology.kind() {
        TopologyKind::Leaderless => sim::sync_function(&parts.model, &parts.x0, 0.0).ok(),
        TopologyKind::LeaderFollowing => None,
    };
    let final_cost = traj.final_cost();
    report.summary = Some(ReproduceSummary {
        budget: cfg.budget,
        final_cost,
        cost_within_budget: final_cost <= cfg.budget,
        initial_error_metric: metrics.first().copied().unwrap_or(0.0),
        final_error_metric: metrics.last().copied().unwrap_or(0.0),
        sync_function_start: sync_start,
        sync_function_reference: meta.c0_reference.map(|v| v.to_vec()),
    });
    report
}

// ---------------------------------------------------------------------------
// Dispatch.

/// Runs one parsed command line to completion and returns the process exit
/// code. The report is always written to `<out>/report.json`.
pub fn run(cli: Cli) -> i32 {
    let (report, out_dir) = match &cli.command {
        Command::Design { config, out, budget } => {
            let ov = Overrides { budget: *budget, ..Overrides::default() };
            (run_in_dir(out, |d| cmd_design(config, d, &ov)), out.clone())
        }
        Command::Analyze { config, gains, out, budget } => {
            let ov = Overrides { budget: *budget, ..Overrides::default() };
            (run_in_dir(out, |d| cmd_analyze(config, gains, d, &ov)), out.clone())
        }
        Command::Simulate { config, gains, out, dt, horizon } => {
            let ov = Overrides { dt: *dt, horizon: *horizon, ..Overrides::default() };
            (run_in_dir(out, |d| cmd_simulate(config, gains, d, &ov)), out.clone())
        }
        Command::Reproduce { example_id, out, budget, dt, horizon } => {
            let ov = Overrides { budget: *budget, dt: *dt, horizon: *horizon };
            (run_in_dir(out, |d| cmd_reproduce(example_id, d, &ov)), out.clone())
        }
    };

    if let Err(e) = write_json(&out_dir.join("report.json"), &report) {
        eprintln!("{e}");
        return RunStatus::InvalidConfig.exit_code();
    }
    print_report(&report, &out_dir);
    report.status.exit_code()
}

fn run_in_dir(out_dir: &Path, f: impl FnOnce(&Path) -> RunReport) -> RunReport {
    if let Err(e) = fs::create_dir_all(out_dir) {
        return RunReport::new("setup")
            .invalid(format!("cannot create {}: {e}", out_dir.display()));
    }
    f(out_dir)
}

fn print_report(report: &RunReport, out_dir: &Path) {
    match &report.reason {
        Some(reason) => println!("{}: {} ({reason})", report.command, report.status.as_str()),
        None => println!("{}: {}", report.command, report.status.as_str()),
    }
    if let Some(s) = &report.summary {
        println!(
            "  cost: J_s = {:.4} vs budget {} ({})",
            s.final_cost,
            s.budget,
            if s.cost_within_budget { "within budget" } else { "over budget" }
        );
        println!(
            "  disagreement: {:.4e} -> {:.4e}",
            s.initial_error_metric, s.final_error_metric
        );
        if let Some(c0) = &s.sync_function_start {
            let shown: Vec<String> = c0.iter().map(|v| format!("{v:.4}")).collect();
            match &s.sync_function_reference {
                Some(r) => println!("  c(0) = [{}], reference {:?}", shown.join(", "), r),
                None => println!("  c(0) = [{}]", shown.join(", ")),
            }
        }
    } else {
        if let Some(b) = report.cost_bound {
            println!("  cost bound: {b:.4}");
        }
        if let Some(c) = report.final_cost {
            println!("  final cost: {c:.4}");
        }
    }
    for p in &report.csv_paths {
        println!("  csv: {p}");
    }
    println!("  report: {}", out_dir.join("report.json").display());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_round_trip() {
        for meta in EXAMPLES {
            let cfg = ScenarioConfig::parse(meta.config).unwrap();
            assert_eq!(cfg.topology.agents, 6);
            assert_eq!(cfg.model.n, 3);
            assert_eq!(cfg.model.m, 2);
            assert_eq!(cfg.model.d, 2);
            assert_eq!(cfg.initial_states.len(), 6);
            let again = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
            assert_eq!(cfg, again);
        }
    }

    #[test]
    fn bundled_budgets_match_the_benchmarks() {
        let e1 = ScenarioConfig::parse(bundled_scenario("example1").unwrap()).unwrap();
        assert_eq!(e1.budget, 6000.0);
        assert_eq!(e1.topology.kind, TopologyKind::Leaderless);
        assert_eq!(e1.model.a[0], 0.2);
        assert_eq!(e1.model.a[1], 3.5);
        let e2 = ScenarioConfig::parse(bundled_scenario("example2").unwrap()).unwrap();
        assert_eq!(e2.budget, 10000.0);
        assert_eq!(e2.topology.kind, TopologyKind::LeaderFollowing);
        assert!(bundled_scenario("example3").is_none());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = ScenarioConfig::parse(bundled_scenario("example1").unwrap()).unwrap();
        cfg.apply(&Overrides { budget: Some(123.0), dt: Some(0.5), horizon: Some(2.0) });
        assert_eq!(cfg.budget, 123.0);
        assert_eq!(cfg.sim.dt, 0.5);
        assert_eq!(cfg.sim.horizon, 2.0);
        cfg.apply(&Overrides::default());
        assert_eq!(cfg.budget, 123.0);
    }

    #[test]
    fn exit_codes_are_the_contract() {
        assert_eq!(RunStatus::Ok.exit_code(), 0);
        assert_eq!(RunStatus::Infeasible.exit_code(), 2);
        assert_eq!(RunStatus::BudgetTooSmall.exit_code(), 2);
        assert_eq!(RunStatus::InvalidConfig.exit_code(), 3);
        assert_eq!(RunStatus::Diverged.exit_code(), 4);
    }

    #[test]
    fn gains_file_round_trips() {
        let g = GainsFile {
            ku: Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]),
            kphi: Mat::from_rows(&[vec![-1.0], vec![0.5]]),
            gamma: Some(1.5),
            budget_coefficient: None,
            margins: Some(vec![MarginReport {
                label: "sync".into(),
                extreme: -1e-3,
                satisfied: true,
            }]),
        };
        let text = serde_json::to_string(&g).unwrap();
        let back = GainsFile::parse(&text).unwrap();
        assert_eq!(back.ku.get(1, 0), 3.0);
        assert_eq!(back.kphi.get(0, 0), -1.0);
        assert_eq!(back.gamma, Some(1.5));
        assert!(back.budget_coefficient.is_none());
        assert_eq!(back.margins.unwrap()[0].label, "sync");
    }

    #[test]
    fn config_errors_are_reported_not_panicked() {
        let cfg = ScenarioConfig::parse("budget = 5.0").unwrap_err();
        assert!(cfg.contains("parse error"));
        let mut ok = ScenarioConfig::parse(bundled_scenario("example1").unwrap()).unwrap();
        ok.initial_states.pop();
        assert!(ok.stacked_initial_states().is_err());
        ok.budget = -1.0;
        assert!(build_parts(&ok).is_err());
    }

    #[test]
    fn unknown_reproduce_id_is_invalid_input() {
        let dir = std::env::temp_dir().join("gcsync-cli-test-unknown-id");
        fs::create_dir_all(&dir).unwrap();
        let report = cmd_reproduce("example9", &dir, &Overrides::default());
        assert_eq!(report.status, RunStatus::InvalidConfig);
        assert_eq!(report.status.exit_code(), 3);
        assert!(report.reason.unwrap().contains("unknown example id"));
    }

    #[test]
    fn reports_serialize_without_null_noise() {
        let r = RunReport::new("design").fail(RunStatus::BudgetTooSmall, "too small");
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"status\":\"budget_too_small\""));
        assert!(!text.contains("cost_bound"));
        assert!(!text.contains("null"));
    }
}
