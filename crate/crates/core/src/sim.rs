//! Closed-loop simulation of the synchronized network: integrates agent and
//! protocol states, accumulates the quadratic cost online, and reports
//! convergence metrics against the closed-form synchronization function.

use std::io::{self, Write};

use crate::numkit::{self, Mat, NumError};
use crate::synthesis::{AgentModel, CostWeights, ProtocolGains};
use crate::topology::{Topology, TopologyKind};

/// State-norm ceiling; beyond this the run is reported as divergent instead
/// of producing non-finite samples.
pub const BLOWUP_LIMIT: f64 = 1e12;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),
    #[error("state norm exceeded {BLOWUP_LIMIT:e} at t = {t}; the closed loop is diverging")]
    NumericalBlowup { t: f64 },
    #[error("bad scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// A fully specified closed-loop run.
#[derive(Debug, Clone)]
pub struct Scenario {
    model: AgentModel,
    topology: Topology,
    weights: CostWeights,
    gains: ProtocolGains,
    x0: Vec<f64>,
    phi0: Vec<f64>,
    dt: f64,
    horizon: f64,
}

impl Scenario {
    /// `phi0 = None` selects the all-zero protocol start, the only choice
    /// under which the cost budget certification applies.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: AgentModel,
        topology: Topology,
        weights: CostWeights,
        gains: ProtocolGains,
        x0: Vec<f64>,
        phi0: Option<Vec<f64>>,
        dt: f64,
        horizon: f64,
    ) -> Result<Scenario, SimError> {
        if weights.q().rows() != model.n() || weights.r().rows() != model.m() {
            return Err(SimError::ShapeMismatch(format!(
                "weights are {}x{} / {}x{}, expected n = {} and m = {}",
                weights.q().rows(),
                weights.q().cols(),
                weights.r().rows(),
                weights.r().cols(),
                model.n(),
                model.m()
            )));
        }
        gains
            .check_against(&model)
            .map_err(|e| SimError::ShapeMismatch(e.to_string()))?;
        let nn = topology.agents() * model.n();
        if x0.len() != nn {
            return Err(SimError::ShapeMismatch(format!(
                "x0 has {} entries, expected N*n = {}",
                x0.len(),
                nn
            )));
        }
        let phi0 = phi0.unwrap_or_else(|| vec![0.0; nn]);
        if phi0.len() != nn {
            return Err(SimError::ShapeMismatch(format!(
                "phi0 has {} entries, expected N*n = {}",
                phi0.len(),
                nn
            )));
        }
        if !x0.iter().chain(phi0.iter()).all(|v| v.is_finite()) {
            return Err(SimError::Invalid("initial states must be finite".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SimError::Invalid(format!("dt must be positive, got {dt}")));
        }
        if !(horizon >= dt) || !horizon.is_finite() {
            return Err(SimError::Invalid(format!(
                "horizon must be at least one step, got {horizon} with dt = {dt}"
            )));
        }
        Ok(Scenario { model, topology, weights, gains, x0, phi0, dt, horizon })
    }

    pub fn model(&self) -> &AgentModel {
        &self.model
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }

    pub fn gains(&self) -> &ProtocolGains {
        &self.gains
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn phi0(&self) -> &[f64] {
        &self.phi0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// True when the protocol starts at rest; required for the budget
    /// guarantee to be meaningful.
    pub fn protocol_start_is_zero(&self) -> bool {
        self.phi0.iter().all(|v| *v == 0.0)
    }
}

/// Sampled closed-loop motion with running cost.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n_agents: usize,
    pub state_dim: usize,
    pub times: Vec<f64>,
    /// Stacked agent states per sample, length `n_agents * state_dim`.
    pub states: Vec<Vec<f64>>,
    /// Stacked protocol states per sample.
    pub protocol_states: Vec<Vec<f64>>,
    /// Accumulated cost at each sample; starts at zero, non-decreasing.
    pub cost_running: Vec<f64>,
    /// Instantaneous `(J_u, J_xphi)` integrand values at each sample.
    pub cost_terms: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn final_cost(&self) -> f64 {
        *self.cost_running.last().unwrap_or(&0.0)
    }
}

/// Precomputed per-agent closed-loop operators.
struct ClosedLoop {
    n: usize,
    agents: usize,
    a: Mat,
    bku: Mat,
    /// `A + B K_u`.
    acl: Mat,
    /// `K_φ C`.
    kphic: Mat,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl ClosedLoop {
    fn new(model: &AgentModel, topology: &Topology, gains: &ProtocolGains) -> ClosedLoop {
        let bku = model.b().mul(&gains.ku);
        ClosedLoop {
            n: model.n(),
            agents: topology.agents(),
            a: model.a().clone(),
            acl: model.a().add(&bku),
            bku,
            kphic: gains.kphi.mul(model.c()),
            neighbors: topology.in_neighbors(),
        }
    }

    /// `dx_j = A x_j + B K_u φ_j`;
    /// `dφ_j = (A + B K_u) φ_j + K_φ C Σ_i w_ji [(x_i − x_j) − (φ_i − φ_j)]`.
    fn derivative(&self, x: &[f64], phi: &[f64], dx: &mut [f64], dphi: &mut [f64]) {
        let n = self.n;
        let mut s = vec![0.0; n];
        for j in 0..self.agents {
            let xj = &x[j * n..(j + 1) * n];
            let pj = &phi[j * n..(j + 1) * n];
            for (r, out) in dx[j * n..(j + 1) * n].iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.a.get(r, k) * xj[k] + self.bku.get(r, k) * pj[k];
                }
                *out = acc;
            }
            s.iter_mut().for_each(|v| *v = 0.0);
            for &(i, w) in &self.neighbors[j] {
                let xi = &x[i * n..(i + 1) * n];
                let pi = &phi[i * n..(i + 1) * n];
                for k in 0..n {
                    s[k] += w * ((xi[k] - xj[k]) - (pi[k] - pj[k]));
                }
            }
            for (r, out) in dphi[j * n..(j + 1) * n].iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.acl.get(r, k) * pj[k] + self.kphic.get(r, k) * s[k];
                }
                *out = acc;
            }
        }
    }
}

/// Closed-loop vector field at one point.
pub fn derivative(
    scenario: &Scenario,
    x: &[f64],
    phi: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let nn = scenario.topology.agents() * scenario.model.n();
    if x.len() != nn || phi.len() != nn {
        return Err(SimError::ShapeMismatch(format!(
            "state vectors must have N*n = {nn} entries, got {} and {}",
            x.len(),
            phi.len()
        )));
    }
    let cl = ClosedLoop::new(&scenario.model, &scenario.topology, &scenario.gains);
    let mut dx = vec![0.0; nn];
    let mut dphi = vec![0.0; nn];
    cl.derivative(x, phi, &mut dx, &mut dphi);
    Ok((dx, dphi))
}

/// Instantaneous cost integrand split into its control and disagreement
/// parts:
///
/// ```text
/// J_u    = Σ_j (K_u φ_j)ᵀ R (K_u φ_j)
/// J_xφ   = Σ_j Σ_i w_ji (e_i − e_j)ᵀ Q (e_i − e_j),   e = φ − x
/// ```
///
/// The double sum runs over ordered pairs, so for undirected topologies it
/// equals the quadratic form `(φ − x)ᵀ(2L ⊗ Q)(φ − x)`.
pub fn cost_terms(
    x: &[f64],
    phi: &[f64],
    laplacian: &Mat,
    weights: &CostWeights,
    gains: &ProtocolGains,
) -> Result<(f64, f64), SimError> {
    let agents = laplacian.rows();
    let n = gains.ku.cols();
    if laplacian.cols() != agents {
        return Err(SimError::ShapeMismatch("Laplacian must be square".into()));
    }
    if x.len() != agents * n || phi.len() != agents * n {
        return Err(SimError::ShapeMismatch(format!(
            "state vectors must have N*n = {} entries, got {} and {}",
            agents * n,
            x.len(),
            phi.len()
        )));
    }
    if weights.q().rows() != n || gains.ku.rows() != weights.r().rows() {
        return Err(SimError::ShapeMismatch(
            "weight dimensions do not match the gain dimensions".into(),
        ));
    }
    let q = weights.q();
    let r = weights.r();
    let m = gains.ku.rows();

    let mut ju = 0.0;
    let mut u = vec![0.0; m];
    for j in 0..agents {
        let pj = &phi[j * n..(j + 1) * n];
        for (row, uv) in u.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..n {
                acc += gains.ku.get(row, k) * pj[k];
            }
            *uv = acc;
        }
        for a in 0..m {
            for b in 0..m {
                ju += u[a] * r.get(a, b) * u[b];
            }
        }
    }

    let mut jxphi = 0.0;
    let mut diff = vec![0.0; n];
    for j in 0..agents {
        for i in 0..agents {
            if i == j {
                continue;
            }
            let w = -laplacian.get(j, i);
            if w == 0.0 {
                continue;
            }
            for k in 0..n {
                let ei = phi[i * n + k] - x[i * n + k];
                let ej = phi[j * n + k] - x[j * n + k];
                diff[k] = ei - ej;
            }
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    acc += diff[a] * q.get(a, b) * diff[b];
                }
            }
            jxphi += w * acc;
        }
    }
    Ok((ju, jxphi))
}

/// Integrates the closed loop with classical fixed-step RK4 and accumulates
/// the cost with Simpson quadrature on Hermite-interpolated midpoints.
///
/// The horizon is rounded to the nearest whole number of steps.
pub fn integrate(scenario: &Scenario) -> Result<Trajectory, SimError> {
    let agents = scenario.topology.agents();
    let n = scenario.model.n();
    let nn = agents * n;
    let dt = scenario.dt;
    let steps = (scenario.horizon / dt).round().max(1.0) as usize;

    let cl = ClosedLoop::new(&scenario.model, &scenario.topology, &scenario.gains);
    let lap = scenario.topology.laplacian();
    let cost_at = |x: &[f64], phi: &[f64]| -> Result<(f64, f64), SimError> {
        cost_terms(x, phi, &lap, &scenario.weights, &scenario.gains)
    };

    // Joint state z = [x; φ].
    let mut z = Vec::with_capacity(2 * nn);
    z.extend_from_slice(&scenario.x0);
    z.extend_from_slice(&scenario.phi0);

    let deriv = |z: &[f64], dz: &mut [f64]| {
        let (x, phi) = z.split_at(nn);
        let (dx, dphi) = dz.split_at_mut(nn);
        cl.derivative(x, phi, dx, dphi);
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut protocol_states = Vec::with_capacity(steps + 1);
    let mut cost_running = Vec::with_capacity(steps + 1);
    let mut cost_samples = Vec::with_capacity(steps + 1);

    let mut f0 = vec![0.0; 2 * nn];
    deriv(&z, &mut f0);
    let mut g0 = cost_at(&scenario.x0, &scenario.phi0)?;

    times.push(0.0);
    states.push(scenario.x0.clone());
    protocol_states.push(scenario.phi0.clone());
    cost_running.push(0.0);
    cost_samples.push(g0);

    let mut js = 0.0;
    let mut k2 = vec![0.0; 2 * nn];
    let mut k3 = vec![0.0; 2 * nn];
    let mut k4 = vec![0.0; 2 * nn];
    let mut stage = vec![0.0; 2 * nn];
    let mut z1 = vec![0.0; 2 * nn];
    let mut f1 = vec![0.0; 2 * nn];
    let mut zm = vec![0.0; 2 * nn];

    for step in 0..steps {
        let t1 = (step + 1) as f64 * dt;

        for i in 0..2 * nn {
            stage[i] = z[i] + 0.5 * dt * f0[i];
        }
        deriv(&stage, &mut k2);
        for i in 0..2 * nn {
            stage[i] = z[i] + 0.5 * dt * k2[i];
        }
        deriv(&stage, &mut k3);
        for i in 0..2 * nn {
            stage[i] = z[i] + dt * k3[i];
        }
        deriv(&stage, &mut k4);
        for i in 0..2 * nn {
            z1[i] = z[i] + dt / 6.0 * (f0[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        let worst = z1.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !worst.is_finite() || worst > BLOWUP_LIMIT {
            return Err(SimError::NumericalBlowup { t: t1 });
        }

        deriv(&z1, &mut f1);
        // Hermite midpoint on the step, then Simpson weights; the integrand
        // is a nonnegative quadratic, so every increment is nonnegative.
        for i in 0..2 * nn {
            zm[i] = 0.5 * (z[i] + z1[i]) + dt / 8.0 * (f0[i] - f1[i]);
        }
        let gm = cost_at(&zm[..nn], &zm[nn..])?;
        let g1 = cost_at(&z1[..nn], &z1[nn..])?;
        js += dt / 6.0 * ((g0.0 + g0.1) + 4.0 * (gm.0 + gm.1) + (g1.0 + g1.1));

        z.copy_from_slice(&z1);
        f0.copy_from_slice(&f1);
        g0 = g1;

        times.push(t1);
        states.push(z[..nn].to_vec());
        protocol_states.push(z[nn..].to_vec());
        cost_running.push(js);
        cost_samples.push(g1);
    }

    Ok(Trajectory {
        n_agents: agents,
        state_dim: n,
        times,
        states,
        protocol_states,
        cost_running,
        cost_terms: cost_samples,
    })
}

/// Closed-form synchronization trajectory `c(t) = e^{At} x̄(0)` for
/// leaderless networks, with `x̄(0)` the average of the stacked initial
/// states.
pub fn sync_function(model: &AgentModel, x0: &[f64], t: f64) -> Result<Vec<f64>, SimError> {
    let n = model.n();
    if x0.is_empty() || x0.len() % n != 0 {
        return Err(SimError::ShapeMismatch(format!(
            "stacked x0 length {} is not a multiple of n = {n}",
            x0.len()
        )));
    }
    let agents = x0.len() / n;
    let mut mean = vec![0.0; n];
    for j in 0..agents {
        for k in 0..n {
            mean[k] += x0[j * n + k];
        }
    }
    mean.iter_mut().for_each(|v| *v /= agents as f64);
    let e_at = numkit::expm(model.a(), t)?;
    Ok(e_at.mul_vec(&mean))
}

/// Per-sample disagreement norms: the largest distance of any agent from the
/// instantaneous mean (leaderless) or from the leader (leader-following).
pub fn error_metrics(traj: &Trajectory, kind: TopologyKind) -> Vec<f64> {
    let n = traj.state_dim;
    let agents = traj.n_agents;
    traj.states
        .iter()
        .map(|x| {
            let mut worst = 0.0f64;
            match kind {
                TopologyKind::Leaderless => {
                    let mut mean = vec![0.0; n];
                    for j in 0..agents {
                        for k in 0..n {
                            mean[k] += x[j * n + k];
                        }
                    }
                    mean.iter_mut().for_each(|v| *v /= agents as f64);
                    for j in 0..agents {
                        let d: f64 = (0..n)
                            .map(|k| (x[j * n + k] - mean[k]).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        worst = worst.max(d);
                    }
                }
                TopologyKind::LeaderFollowing => {
                    for j in 1..agents {
                        let d: f64 = (0..n)
                            .map(|k| (x[j * n + k] - x[k]).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        worst = worst.max(d);
                    }
                }
            }
            worst
        })
        .collect()
}

/// Writes the trajectory as CSV: `t,x1..,phi1..,Ju,Jxphi,Js`, one row per
/// sample, shortest round-trip decimal formatting.
pub fn write_csv(traj: &Trajectory, out: &mut dyn Write) -> io::Result<()> {
    let nn = traj.n_agents * traj.state_dim;
    let mut header = String::from("t");
    for i in 1..=nn {
        header.push_str(&format!(",x{i}"));
    }
    for i in 1..=nn {
        header.push_str(&format!(",phi{i}"));
    }
    header.push_str(",Ju,Jxphi,Js");
    writeln!(out, "{header}")?;
    for (idx, t) in traj.times.iter().enumerate() {
        let mut line = format!("{t:?}");
        for v in &traj.states[idx] {
            line.push_str(&format!(",{v:?}"));
        }
        for v in &traj.protocol_states[idx] {
            line.push_str(&format!(",{v:?}"));
        }
        let (ju, jxphi) = traj.cost_terms[idx];
        line.push_str(&format!(",{ju:?},{jxphi:?},{:?}", traj.cost_running[idx]));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::kron;
    use crate::topology::Edge;

    fn pair_topology() -> Topology {
        Topology::new(
            TopologyKind::Leaderless,
            2,
            vec![Edge { from: 1, to: 2, weight: 1.0 }],
        )
        .unwrap()
    }

    fn scalar_model(a: f64) -> AgentModel {
        AgentModel::new(
            Mat::from_rows(&[vec![a]]),
            Mat::from_rows(&[vec![1.0]]),
            Mat::from_rows(&[vec![1.0]]),
        )
        .unwrap()
    }

    fn unit_weights() -> CostWeights {
        CostWeights::new(Mat::from_rows(&[vec![1.0]]), Mat::from_rows(&[vec![1.0]])).unwrap()
    }

    fn zero_gains_1d() -> ProtocolGains {
        ProtocolGains {
            ku: Mat::from_rows(&[vec![0.0]]),
            kphi: Mat::from_rows(&[vec![0.0]]),
        }
    }

    fn demo_model() -> AgentModel {
        AgentModel::new(
            Mat::from_rows(&[vec![0.1, 1.0], vec![-0.5, -0.2]]),
            Mat::from_rows(&[vec![1.0], vec![0.5]]),
            Mat::from_rows(&[vec![1.0, 0.3]]),
        )
        .unwrap()
    }

    fn demo_gains() -> ProtocolGains {
        ProtocolGains {
            ku: Mat::from_rows(&[vec![-0.7, -0.4]]),
            kphi: Mat::from_rows(&[vec![-0.9], vec![-0.2]]),
        }
    }

    #[test]
    fn derivative_with_zero_protocol_is_autonomous() {
        let model = demo_model();
        let topo = pair_topology();
        let weights = CostWeights::new(Mat::identity(2), Mat::identity(1)).unwrap();
        let scenario = Scenario::new(
            model.clone(),
            topo,
            weights,
            demo_gains(),
            vec![1.0, -2.0, 0.5, 3.0],
            None,
            0.01,
            1.0,
        )
        .unwrap();
        let x = [1.0, -2.0, 0.5, 3.0];
        let phi = [0.0; 4];
        let (dx, _) = derivative(&scenario, &x, &phi).unwrap();
        for j in 0..2 {
            let ax = model.a().mul_vec(&x[j * 2..(j + 1) * 2]);
            for k in 0..2 {
                assert!((dx[j * 2 + k] - ax[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn derivative_coupling_cancels_when_states_match() {
        let model = demo_model();
        let scenario = Scenario::new(
            model.clone(),
            pair_topology(),
            CostWeights::new(Mat::identity(2), Mat::identity(1)).unwrap(),
            demo_gains(),
            vec![0.4, -1.0, 2.0, 0.3],
            None,
            0.01,
            1.0,
        )
        .unwrap();
        let x = [0.4, -1.0, 2.0, 0.3];
        let (_, dphi) = derivative(&scenario, &x, &x).unwrap();
        let acl = model.a().add(&model.b().mul(&demo_gains().ku));
        for j in 0..2 {
            let want = acl.mul_vec(&x[j * 2..(j + 1) * 2]);
            for k in 0..2 {
                assert!((dphi[j * 2 + k] - want[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn derivative_matches_kronecker_form() {
        let model = demo_model();
        let gains = demo_gains();
        let topo = pair_topology();
        let scenario = Scenario::new(
            model.clone(),
            topo.clone(),
            CostWeights::new(Mat::identity(2), Mat::identity(1)).unwrap(),
            gains.clone(),
            vec![0.0; 4],
            None,
            0.01,
            1.0,
        )
        .unwrap();
        let x = [1.3, -0.2, 0.7, 2.2];
        let phi = [0.1, 0.5, -0.8, 0.9];
        let (dx, dphi) = derivative(&scenario, &x, &phi).unwrap();

        let eye = Mat::identity(2);
        let lap = topo.laplacian();
        let bku = model.b().mul(&gains.ku);
        let acl = model.a().add(&bku);
        let kphic = gains.kphi.mul(model.c());

        let dx_kron = {
            let ax = kron(&eye, model.a()).mul_vec(&x);
            let bp = kron(&eye, &bku).mul_vec(&phi);
            ax.iter().zip(&bp).map(|(a, b)| a + b).collect::<Vec<_>>()
        };
        let dphi_kron = {
            let ap = kron(&eye, &acl).mul_vec(&phi);
            let lk = kron(&lap, &kphic);
            let e: Vec<f64> = phi.iter().zip(&x).map(|(p, xv)| p - xv).collect();
            let cp = lk.mul_vec(&e);
            ap.iter().zip(&cp).map(|(a, b)| a + b).collect::<Vec<_>>()
        };
        for k in 0..4 {
            assert!((dx[k] - dx_kron[k]).abs() < 1e-13, "dx[{k}]");
            assert!((dphi[k] - dphi_kron[k]).abs() < 1e-13, "dphi[{k}]");
        }
    }

    #[test]
    fn cost_terms_zero_protocol() {
        let topo = pair_topology();
        let lap = topo.laplacian();
        let weights = CostWeights::new(Mat::identity(2), Mat::identity(1)).unwrap();
        let gains = demo_gains();
        let x = [1.0, 2.0, -0.5, 0.25];
        let phi = [0.0; 4];
        let (ju, jxphi) = cost_terms(&x, &phi, &lap, &weights, &gains).unwrap();
        assert_eq!(ju, 0.0);
        let big = kron(&lap.scale(2.0), weights.q());
        let want: f64 = {
            let y = big.mul_vec(&x);
            x.iter().zip(&y).map(|(a, b)| a * b).sum()
        };
        assert!((jxphi - want).abs() < 1e-12);
    }

    #[test]
    fn cost_terms_vanish_on_matched_states() {
        let topo = pair_topology();
        let weights = CostWeights::new(Mat::identity(2), Mat::identity(1)).unwrap();
        let x = [1.0, 2.0, -0.5, 0.25];
        let (_, jxphi) = cost_terms(&x, &x, &topo.laplacian(), &weights, &demo_gains()).unwrap();
        assert_eq!(jxphi, 0.0);
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        let scenario = Scenario::new(
            scalar_model(-1.0),
            pair_topology(),
            unit_weights(),
            zero_gains_1d(),
            vec![1.0, 1.0],
            None,
            0.01,
            1.0,
        )
        .unwrap();
        let traj = integrate(&scenario).unwrap();
        assert_eq!(traj.times.len(), 101);
        let want = (-1.0f64).exp();
        for j in 0..2 {
            assert!(
                (traj.states.last().unwrap()[j] - want).abs() < 1e-9,
                "agent {j}: {} vs {want}",
                traj.states.last().unwrap()[j]
            );
        }
    }

    #[test]
    fn frozen_disagreement_grows_cost_linearly() {
        // A = 0 and zero gains freeze all states; the disagreement integrand
        // is constant so the cost is exactly linear in t.
        let scenario = Scenario::new(
            scalar_model(0.0),
            pair_topology(),
            unit_weights(),
            zero_gains_1d(),
            vec![1.0, -1.0],
            None,
            0.01,
            2.0,
        )
        .unwrap();
        let traj = integrate(&scenario).unwrap();
        // e = -x, slope = x'(2L x Q)x = 2 w (x1-x2)^2 = 8.
        for (t, js) in traj.times.iter().zip(&traj.cost_running) {
            assert!((js - 8.0 * t).abs() < 1e-9, "t={t}: {js}");
        }
        let (ju, jxphi) = traj.cost_terms[0];
        assert_eq!(ju, 0.0);
        assert!((jxphi - 8.0).abs() < 1e-12);
    }

    #[test]
    fn unstable_undriven_agent_reports_blowup() {
        let scenario = Scenario::new(
            scalar_model(1.0),
            pair_topology(),
            unit_weights(),
            zero_gains_1d(),
            vec![1e9, 1e9],
            None,
            0.01,
            20.0,
        )
        .unwrap();
        match integrate(&scenario) {
            Err(SimError::NumericalBlowup { t }) => assert!(t > 0.0 && t < 20.0),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn cost_running_is_monotone() {
        let model = demo_model();
        let scenario = Scenario::new(
            model,
            pair_topology(),
            CostWeights::new(Mat::identity(2), Mat::identity(1)).unwrap(),
            demo_gains(),
            vec![1.0, 0.0, -1.0, 0.5],
            None,
            0.001,
            2.0,
        )
        .unwrap();
        let traj = integrate(&scenario).unwrap();
        for w in traj.cost_running.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for (ju, jxphi) in &traj.cost_terms {
            assert!(*ju >= 0.0 && *jxphi >= 0.0);
        }
    }

    #[test]
    fn sync_function_at_zero_is_the_mean() {
        let model = demo_model();
        let x0 = [1.0, 2.0, 3.0, 6.0];
        let c0 = sync_function(&model, &x0, 0.0).unwrap();
        assert!((c0[0] - 2.0).abs() < 1e-14);
        assert!((c0[1] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn sync_function_constant_for_zero_dynamics() {
        let model = AgentModel::new(
            Mat::zeros(2, 2),
            Mat::from_rows(&[vec![1.0], vec![0.0]]),
            Mat::from_rows(&[vec![1.0, 0.0]]),
        )
        .unwrap();
        let x0 = [1.0, -1.0, 3.0, 5.0];
        for t in [0.0, 0.5, 2.0, 7.5] {
            let c = sync_function(&model, &x0, t).unwrap();
            assert!((c[0] - 2.0).abs() < 1e-12);
            assert!((c[1] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn error_metric_zero_for_identical_agents() {
        let traj = Trajectory {
            n_agents: 3,
            state_dim: 2,
            times: vec![0.0],
            states: vec![vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]],
            protocol_states: vec![vec![0.0; 6]],
            cost_running: vec![0.0],
            cost_terms: vec![(0.0, 0.0)],
        };
        let m = error_metrics(&traj, TopologyKind::Leaderless);
        assert_eq!(m, vec![0.0]);
    }

    #[test]
    fn error_metric_antisymmetric_pair() {
        let traj = Trajectory {
            n_agents: 2,
            state_dim: 2,
            times: vec![0.0],
            states: vec![vec![3.0, 4.0, -3.0, -4.0]],
            protocol_states: vec![vec![0.0; 4]],
            cost_running: vec![0.0],
            cost_terms: vec![(0.0, 0.0)],
        };
        let m = error_metrics(&traj, TopologyKind::Leaderless);
        assert!((m[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn leader_protocol_stays_bitwise_zero() {
        let model = demo_model();
        let topo = Topology::new(
            TopologyKind::LeaderFollowing,
            2,
            vec![Edge { from: 1, to: 2, weight: 1.0 }],
        )
        .unwrap();
        let scenario = Scenario::new(
            model,
            topo,
            CostWeights::new(Mat::identity(2), Mat::identity(1)).unwrap(),
            demo_gains(),
            vec![2.0, -1.0, 0.5, 1.5],
            None,
            0.01,
            2.0,
        )
        .unwrap();
        let traj = integrate(&scenario).unwrap();
        for phi in &traj.protocol_states {
            for v in &phi[..2] {
                assert_eq!(v.to_bits(), 0u64, "leader protocol must stay +0.0");
            }
        }
    }

    #[test]
    fn nonzero_protocol_start_is_flagged() {
        let scenario = Scenario::new(
            scalar_model(-1.0),
            pair_topology(),
            unit_weights(),
            zero_gains_1d(),
            vec![1.0, 2.0],
            Some(vec![0.5, 0.0]),
            0.01,
            1.0,
        )
        .unwrap();
        assert!(!scenario.protocol_start_is_zero());
        let zero = Scenario::new(
            scalar_model(-1.0),
            pair_topology(),
            unit_weights(),
            zero_gains_1d(),
            vec![1.0, 2.0],
            None,
            0.01,
            1.0,
        )
        .unwrap();
        assert!(zero.protocol_start_is_zero());
    }

    #[test]
    fn scenario_validation_rejects_bad_shapes() {
        let err = Scenario::new(
            scalar_model(-1.0),
            pair_topology(),
            unit_weights(),
            zero_gains_1d(),
            vec![1.0, 2.0, 3.0],
            None,
            0.01,
            1.0,
        );
        assert!(matches!(err, Err(SimError::ShapeMismatch(_))));
        let err = Scenario::new(
            scalar_model(-1.0),
            pair_topology(),
            unit_weights(),
            zero_gains_1d(),
            vec![1.0, 2.0],
            None,
            -0.5,
            1.0,
        );
        assert!(matches!(err, Err(SimError::Invalid(_))));
    }

    #[test]
    fn csv_round_trips_first_row() {
        let scenario = Scenario::new(
            scalar_model(-1.0),
            pair_topology(),
            unit_weights(),
            zero_gains_1d(),
            vec![1.0, 0.5],
            None,
            0.1,
            0.5,
        )
        .unwrap();
        let traj = integrate(&scenario).unwrap();
        let mut buf = Vec::new();
        write_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,phi1,phi2,Ju,Jxphi,Js");
        assert_eq!(text.lines().count(), 1 + traj.times.len());
        let row: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(row.len(), 8);
        assert_eq!(row[1], 1.0);
        assert_eq!(row[2], 0.5);
    }

    /// On an undirected leaderless network started with the protocol at rest,
    /// the coupling sums cancel in the average, so the agent mean must track
    /// the synchronization function exactly — whatever the gains are.
    #[test]
    fn agent_mean_tracks_sync_function_for_arbitrary_gains() {
        let model = demo_model();
        let edges: Vec<Edge> = (1..=4)
            .map(|i| Edge { from: i, to: i % 4 + 1, weight: 0.5 + 0.25 * i as f64 })
            .collect();
        let topology = Topology::new(TopologyKind::Leaderless, 4, edges).unwrap();
        let weights = CostWeights::new(Mat::identity(2), Mat::identity(1)).unwrap();
        let x0 = vec![3.0, -1.0, -2.0, 4.0, 0.5, 1.5, -4.0, 2.0];
        let scenario = Scenario::new(
            model.clone(),
            topology,
            weights,
            demo_gains(),
            x0.clone(),
            None,
            1e-3,
            2.0,
        )
        .unwrap();
        let traj = integrate(&scenario).unwrap();
        for (k, x) in traj.states.iter().enumerate() {
            let mut mean = [0.0; 2];
            for j in 0..4 {
                mean[0] += x[2 * j] / 4.0;
                mean[1] += x[2 * j + 1] / 4.0;
            }
            let c = sync_function(&model, &x0, traj.times[k]).unwrap();
            let err = ((mean[0] - c[0]).powi(2) + (mean[1] - c[1]).powi(2)).sqrt();
            assert!(
                err < 1e-9,
                "mean deviates from the synchronization function by {err:.3e} at t = {}",
                traj.times[k]
            );
        }
    }
}
