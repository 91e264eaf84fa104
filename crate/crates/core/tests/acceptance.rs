//! Acceptance gate: one test per release criterion, each printing a single
//! pass/fail line (visible with `--nocapture`; failures always show it).
//!
//! Run with: `cargo test --test acceptance -- --nocapture`

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gcsync::cli::{self, GainsFile, Overrides, RunReport, RunStatus, ScenarioConfig};
use gcsync::numkit::{self, Mat};
use gcsync::sim::{self, Scenario, Trajectory};
use gcsync::synthesis::{self, DesignReport, SynthesisError};
use gcsync::topology::{relationship_matrix, Edge, Topology, TopologyKind};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tempfile::TempDir;

fn criterion(n: usize, desc: &str, failures: &[String], detail: &str) {
    let pass = failures.is_empty();
    let what = if pass { detail.to_string() } else { failures.join("; ") };
    println!("criterion {n:02} [{}] {desc} — {what}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n:02} failed: {desc} — {what}");
}

// ---------------------------------------------------------------------------
// Shared artifacts for the first benchmark, computed once per process.

struct Example1Bundle {
    cfg: ScenarioConfig,
    reproduce: RunReport,
    reproduce_elapsed: Duration,
    design: DesignReport,
    traj: Trajectory,
    _out: TempDir,
}

static EXAMPLE1: OnceLock<Example1Bundle> = OnceLock::new();

fn example1() -> &'static Example1Bundle {
    EXAMPLE1.get_or_init(|| {
        let out = TempDir::new().expect("temp dir");
        let started = Instant::now();
        let reproduce = cli::cmd_reproduce("example1", out.path(), &Overrides::default());
        let reproduce_elapsed = started.elapsed();

        let cfg = ScenarioConfig::parse(cli::bundled_scenario("example1").unwrap()).unwrap();
        let model = cfg.build_model().unwrap();
        let topology = cfg.build_topology().unwrap();
        let weights = cfg.build_weights().unwrap();
        let x0 = cfg.stacked_initial_states().unwrap();
        let design = synthesis::design(
            &model,
            &topology,
            &weights,
            &x0,
            cfg.budget,
            &cfg.solver_options(),
        )
        .expect("bundled benchmark design succeeds");
        let scenario = Scenario::new(
            model,
            topology,
            weights,
            design.gains.clone(),
            x0,
            None,
            cfg.sim.dt,
            cfg.sim.horizon,
        )
        .unwrap();
        let traj = sim::integrate(&scenario).expect("bundled benchmark integrates");
        Example1Bundle { cfg, reproduce, reproduce_elapsed, design, traj, _out: out }
    })
}

/// Series `expm` with scaling and squaring, independent of the library's.
fn matexp_oracle(a: &Mat, t: f64) -> Mat {
    let n = a.rows();
    let at = a.scale(t);
    let norm = at.max_abs() * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let x = at.scale(0.5f64.powi(s as i32));
    let mut term = Mat::identity(n);
    let mut sum = Mat::identity(n);
    for k in 1..=24 {
        term = term.mul(&x).scale(1.0 / k as f64);
        sum = sum.add(&term);
    }
    for _ in 0..s {
        sum = sum.mul(&sum);
    }
    sum
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_example1_end_to_end() {
    let b = example1();
    let mut fails = Vec::new();
    if b.reproduce.status != RunStatus::Ok {
        fails.push(format!(
            "reproduce status {} ({})",
            b.reproduce.status.as_str(),
            b.reproduce.reason.clone().unwrap_or_default()
        ));
    }
    let secs = b.reproduce_elapsed.as_secs_f64();
    if secs >= 60.0 {
        fails.push(format!("took {secs:.1} s, limit 60 s"));
    }
    let mut detail = String::from("reproduce ok");
    if let Some(s) = &b.reproduce.summary {
        if !(s.final_cost <= 6000.0) {
            fails.push(format!("J_s(10) = {:.3} exceeds 6000", s.final_cost));
        }
        let limit = 1e-3 * s.initial_error_metric;
        if !(s.final_error_metric <= limit) {
            fails.push(format!(
                "disagreement {:.3e} above 1e-3 x initial = {limit:.3e}",
                s.final_error_metric
            ));
        }
        detail = format!(
            "J_s(10) = {:.1} <= 6000, disagreement {:.1e} -> {:.1e}, {secs:.1} s",
            s.final_cost, s.initial_error_metric, s.final_error_metric
        );
    } else if fails.is_empty() {
        fails.push("report carries no summary".into());
    }
    criterion(1, "first benchmark end to end", &fails, &detail);
}

#[test]
fn criterion_02_example2_end_to_end() {
    let out = TempDir::new().unwrap();
    let report = cli::cmd_reproduce("example2", out.path(), &Overrides::default());
    let mut fails = Vec::new();
    let mut detail = String::new();
    if report.status != RunStatus::Ok {
        fails.push(format!(
            "reproduce status {} ({})",
            report.status.as_str(),
            report.reason.clone().unwrap_or_default()
        ));
    } else if let Some(s) = &report.summary {
        if !(s.final_cost <= 10000.0) {
            fails.push(format!("J_s(10) = {:.3} exceeds 10000", s.final_cost));
        }
        let limit = 1e-3 * s.initial_error_metric;
        if !(s.final_error_metric <= limit) {
            fails.push(format!(
                "follower-leader error {:.3e} above 1e-3 x initial = {limit:.3e}",
                s.final_error_metric
            ));
        }
        detail = format!(
            "J_s(10) = {:.1} <= 10000, error {:.1e} -> {:.1e}",
            s.final_cost, s.initial_error_metric, s.final_error_metric
        );
    } else {
        fails.push("report carries no summary".into());
    }
    criterion(2, "second benchmark end to end", &fails, &detail);
}

#[test]
fn criterion_03_synchronization_function() {
    let b = example1();
    let mut fails = Vec::new();
    let model = b.cfg.build_model().unwrap();
    let x0 = b.cfg.stacked_initial_states().unwrap();
    let c0 = sim::sync_function(&model, &x0, 0.0).unwrap();
    let reference = [2.3333, 3.8333, 4.8333];
    for (i, (&got, &want)) in c0.iter().zip(reference.iter()).enumerate() {
        if (got - want).abs() >= 5e-5 {
            fails.push(format!("c(0)[{i}] = {got:.6}, want {want} to 4 dp"));
        }
    }

    // c(T) from an independent exponential, against every simulated agent.
    let n = model.n();
    let agents = x0.len() / n;
    let mut mean = vec![0.0; n];
    for j in 0..agents {
        for i in 0..n {
            mean[i] += x0[j * n + i] / agents as f64;
        }
    }
    let t_final = *b.traj.times.last().unwrap();
    let c_final = matexp_oracle(model.a(), t_final).mul_vec(&mean);
    let tol = 1e-3 * (1.0 + norm(&c_final));
    let x_final = b.traj.states.last().unwrap();
    let mut worst = 0.0f64;
    for j in 0..agents {
        let diff: Vec<f64> =
            (0..n).map(|i| x_final[j * n + i] - c_final[i]).collect();
        worst = worst.max(norm(&diff));
    }
    if !(worst <= tol) {
        fails.push(format!("max_j |x_j(T) - c(T)| = {worst:.3e} above {tol:.3e}"));
    }
    criterion(
        3,
        "synchronization function",
        &fails,
        &format!("c(0) matches to 4 dp, max deviation at T {worst:.2e} <= {tol:.2e}"),
    );
}

#[test]
fn criterion_04_budget_coefficients() {
    let mut fails = Vec::new();
    let mut shown = Vec::new();
    for (id, expect) in [("example1", 3369.0), ("example2", 6716.0)] {
        let cfg = ScenarioConfig::parse(cli::bundled_scenario(id).unwrap()).unwrap();
        let x0 = cfg.stacked_initial_states().unwrap();
        let kind = cfg.build_topology().unwrap().kind();
        let got = synthesis::budget_coefficient(&x0, kind, cfg.topology.agents).unwrap();
        let rel = (got - expect).abs() / expect;
        if rel > 1e-9 {
            fails.push(format!("{id}: coefficient {got:.9} vs {expect} (rel {rel:.2e})"));
        }
        shown.push(format!("{id}: {got:.6}"));
    }
    criterion(4, "budget coefficients", &fails, &shown.join(", "));
}

#[test]
fn criterion_05_cost_bound_chain() {
    let b = example1();
    let mut fails = Vec::new();
    let cert = b.design.certificate.as_ref().expect("certified design");
    let js = b.traj.final_cost();
    if !(js <= cert.cost_bound) {
        fails.push(format!("J_s(T) = {js:.3} above cost bound {:.3}", cert.cost_bound));
    }
    if !(cert.cost_bound <= b.cfg.budget) {
        fails.push(format!("cost bound {:.3} above budget {}", cert.cost_bound, b.cfg.budget));
    }
    for w in b.traj.cost_running.windows(2) {
        if w[1] < w[0] - 1e-9 {
            fails.push(format!("running cost dips: {} -> {}", w[0], w[1]));
            break;
        }
    }

    let cfg = &b.cfg;
    let scenario = Scenario::new(
        cfg.build_model().unwrap(),
        cfg.build_topology().unwrap(),
        cfg.build_weights().unwrap(),
        b.design.gains.clone(),
        cfg.stacked_initial_states().unwrap(),
        None,
        cfg.sim.dt / 2.0,
        cfg.sim.horizon,
    )
    .unwrap();
    let js_half = sim::integrate(&scenario).unwrap().final_cost();
    let rel = (js_half - js).abs() / js;
    if rel > 1e-6 {
        fails.push(format!("dt-halving moved J_s by {rel:.2e} relative"));
    }
    criterion(
        5,
        "cost-bound chain",
        &fails,
        &format!(
            "J_s = {js:.1} <= bound {:.1} <= budget {}, monotone, dt-halving rel {rel:.1e}",
            cert.cost_bound, b.cfg.budget
        ),
    );
}

#[test]
fn criterion_06_cost_term_identity() {
    let mut rng = StdRng::seed_from_u64(0xC0DE);
    let mut fails = Vec::new();
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let agents = rng.gen_range(3..=6);
        let n = rng.gen_range(1..=3);
        let mut edges: Vec<Edge> = (1..=agents)
            .map(|i| Edge {
                from: i,
                to: if i == agents { 1 } else { i + 1 },
                weight: rng.gen_range(0.1..2.0),
            })
            .collect();
        if agents >= 4 {
            edges.push(Edge { from: 1, to: agents / 2 + 1, weight: rng.gen_range(0.1..2.0) });
        }
        let topology = Topology::new(TopologyKind::Leaderless, agents, edges).unwrap();
        let m = Mat::from_rows(
            &(0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect::<Vec<_>>(),
        );
        let q = m.transpose().mul(&m);
        let weights =
            gcsync::synthesis::CostWeights::new(q.clone(), Mat::identity(1)).unwrap();
        let gains = gcsync::synthesis::ProtocolGains {
            ku: Mat::zeros(1, n),
            kphi: Mat::zeros(n, 1),
        };
        let nn = agents * n;
        let x: Vec<f64> = (0..nn).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let phi: Vec<f64> = (0..nn).map(|_| rng.gen_range(-5.0..5.0)).collect();

        let (_, jxphi) = sim::cost_terms(&x, &phi, &topology.laplacian(), &weights, &gains).unwrap();
        let z: Vec<f64> = phi.iter().zip(&x).map(|(p, s)| p - s).collect();
        let big = numkit::kron(&topology.laplacian().scale(2.0), &q);
        let bz = big.mul_vec(&z);
        let oracle: f64 = z.iter().zip(&bz).map(|(a, b)| a * b).sum();

        let rel = (jxphi - oracle).abs() / oracle.abs().max(1.0);
        worst = worst.max(rel);
        if rel > 1e-10 {
            fails.push(format!("trial {trial}: rel error {rel:.2e}"));
            break;
        }
    }
    criterion(
        6,
        "pairwise cost identity",
        &fails,
        &format!("1000 random evaluations, worst rel error {worst:.1e}"),
    );
}

#[test]
fn criterion_07_spectral_facts() {
    let mut fails = Vec::new();
    for agents in 2..=8usize {
        for kind in [TopologyKind::Leaderless, TopologyKind::LeaderFollowing] {
            let eig = numkit::sym_eig(&relationship_matrix(kind, agents)).unwrap();
            let mut expected = vec![0.0];
            match kind {
                TopologyKind::Leaderless => expected.extend(vec![1.0; agents - 1]),
                TopologyKind::LeaderFollowing => {
                    expected.extend(vec![1.0; agents - 2]);
                    expected.push(agents as f64);
                }
            }
            for (got, want) in eig.values.iter().zip(&expected) {
                if (got - want).abs() > 1e-9 {
                    fails.push(format!(
                        "{kind:?} N={agents}: eigenvalues {:?} vs {expected:?}",
                        eig.values
                    ));
                    break;
                }
            }
        }
    }
    let edges = (1..=6)
        .map(|i| Edge { from: i, to: if i == 6 { 1 } else { i + 1 }, weight: 1.0 })
        .collect();
    let spectrum = Topology::new(TopologyKind::Leaderless, 6, edges).unwrap().spectrum().unwrap();
    if (spectrum.lambda2 - 1.0).abs() > 1e-9 || (spectrum.lambda_n - 4.0).abs() > 1e-9 {
        fails.push(format!(
            "6-cycle lambda2 = {}, lambdaN = {}",
            spectrum.lambda2, spectrum.lambda_n
        ));
    }
    criterion(
        7,
        "spectral facts",
        &fails,
        "relationship spectra for N = 2..8 and 6-cycle extremes all within 1e-9",
    );
}

#[test]
fn criterion_08_trace_iteration_behavior() {
    let b = example1();
    let mut fails = Vec::new();
    for w in b.design.ccl.windows(2) {
        if w[1].objective > w[0].objective + 1e-8 {
            fails.push(format!(
                "objective rose {:.9} -> {:.9} at round {}",
                w[0].objective, w[1].objective, w[1].iteration
            ));
        }
    }
    let n = b.cfg.model.n as f64;
    for it in &b.design.ccl {
        if it.product_trace < n - 1e-9 {
            fails.push(format!(
                "tr(Px Phat_x) = {:.9} below n = {n} at round {}",
                it.product_trace, it.iteration
            ));
        }
    }

    let cfg = &b.cfg;
    let tiny = synthesis::design(
        &cfg.build_model().unwrap(),
        &cfg.build_topology().unwrap(),
        &cfg.build_weights().unwrap(),
        &cfg.stacked_initial_states().unwrap(),
        1e-3,
        &cfg.solver_options(),
    );
    match tiny {
        Err(SynthesisError::BudgetTooSmall { .. }) => {}
        other => fails.push(format!(
            "budget 1e-3 produced {:?} instead of BudgetTooSmall",
            other.map(|_| "a design")
        )),
    }
    criterion(
        8,
        "trace iteration behavior",
        &fails,
        &format!(
            "{} rounds, objective non-increasing, trace >= n, tiny budget rejected",
            b.design.ccl.len()
        ),
    );
}

#[test]
fn criterion_09_structural_exactness() {
    let mut fails = Vec::new();

    // Leader run: protocol and control of agent 1 stay bitwise zero.
    let cfg = ScenarioConfig::parse(cli::bundled_scenario("example2").unwrap()).unwrap();
    let gains = GainsFile::parse(include_str!("fixtures/reference_gains_example2.json"))
        .unwrap()
        .gains();
    let model = cfg.build_model().unwrap();
    let n = model.n();
    let scenario = Scenario::new(
        model,
        cfg.build_topology().unwrap(),
        cfg.build_weights().unwrap(),
        gains.clone(),
        cfg.stacked_initial_states().unwrap(),
        None,
        1e-3,
        1.0,
    )
    .unwrap();
    let traj = sim::integrate(&scenario).unwrap();
    'leader: for phi in &traj.protocol_states {
        for &v in &phi[0..n] {
            if v.to_bits() != 0 {
                fails.push(format!("leader protocol state became {v:e}"));
                break 'leader;
            }
        }
        for v in gains.ku.mul_vec(&phi[0..n]) {
            if v.to_bits() != 0 {
                fails.push(format!("leader control became {v:e}"));
                break 'leader;
            }
        }
    }

    // Leaderless run: the averaged protocol component stays numerically zero.
    let b = example1();
    let agents = b.traj.n_agents;
    let sn = b.traj.state_dim;
    let scale = 1.0 / (agents as f64).sqrt();
    let mut worst = 0.0f64;
    for phi in &b.traj.protocol_states {
        let mut avg = vec![0.0; sn];
        for j in 0..agents {
            for i in 0..sn {
                avg[i] += phi[j * sn + i] * scale;
            }
        }
        worst = worst.max(norm(&avg));
    }
    if worst > 1e-9 {
        fails.push(format!("averaged protocol reached {worst:.3e}"));
    }
    criterion(
        9,
        "structural exactness",
        &fails,
        &format!("leader bitwise zero over {} samples, averaged protocol <= {worst:.1e}", traj.times.len()),
    );
}

#[test]
fn criterion_10_reference_gain_fixtures() {
    #[derive(serde::Deserialize)]
    struct Expected {
        feasible: bool,
        budget: f64,
    }
    let expected: std::collections::BTreeMap<String, Expected> =
        serde_json::from_str(include_str!("fixtures/reference_analysis_expected.json")).unwrap();

    let mut fails = Vec::new();
    let mut shown = Vec::new();
    for (id, gains_text) in [
        ("example1", include_str!("fixtures/reference_gains_example1.json")),
        ("example2", include_str!("fixtures/reference_gains_example2.json")),
    ] {
        let want = &expected[id];
        let out = TempDir::new().unwrap();
        let cfg_path = out.path().join("scenario.toml");
        let gains_path = out.path().join("gains.json");
        std::fs::write(&cfg_path, cli::bundled_scenario(id).unwrap()).unwrap();
        std::fs::write(&gains_path, gains_text).unwrap();
        let report = cli::cmd_analyze(&cfg_path, &gains_path, out.path(), &Overrides::default());

        let feasible = report.status == RunStatus::Ok;
        if feasible != want.feasible {
            fails.push(format!(
                "{id}: analyze says {} but fixture records feasible = {}",
                report.status.as_str(),
                want.feasible
            ));
        }
        if feasible {
            match report.cost_bound {
                Some(cb) if cb <= want.budget => shown.push(format!("{id}: bound {cb:.1}")),
                Some(cb) => fails.push(format!("{id}: bound {cb:.3} above budget {}", want.budget)),
                None => fails.push(format!("{id}: feasible but no cost bound")),
            }
        } else {
            shown.push(format!("{id}: infeasible as recorded"));
        }
    }
    criterion(10, "reference gain fixtures", &fails, &shown.join(", "));
}
