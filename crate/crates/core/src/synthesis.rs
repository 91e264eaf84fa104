//! Gain design and certification for guaranteed-cost synchronization.
//!
//! The design problem couples three symmetric unknowns `Pₓ`, `P̂ₓ`, `P̂_φ`
//! and a rectangular `K̂_u` through two eigenvalue-indexed synchronization
//! blocks, a budget cap `Pₓ ⪯ γI`, and the Schur coupling
//! `[[Pₓ, I], [I, P̂ₓ]] ⪰ 0` standing in for the bilinear relation
//! `P̂ₓ = Pₓ⁻¹`.  The coupling is worked down by the cone-complementarity
//! iteration from [`crate::lmi`]; gains follow as `K_u = K̂_u P̂_φ⁻¹` and
//! `K_φ = -P̂ₓCᵀ`.  A separate analysis path certifies arbitrary gains by
//! solving the linear criterion over `Pₓ`, `P_φ` alone and evaluating the
//! guaranteed cost bound `x(0)ᵀ(M ⊗ Pₓ)x(0)`.

use crate::lmi::{
    self, AffineBlock, Assignment, BlockMargin, CclIteration, LmiError, LmiProblem, MatVar, Sense,
    SolverOptions, Status, frame_cols, frame_rows,
};
use crate::numkit::{self, Mat, NumError};
use crate::topology::{relationship_matrix, Topology, TopologyError, TopologyKind};

/// Coefficients below this are treated as agreement initial states.
pub const AGREEMENT_TOL: f64 = 1e-12;

/// Eigenvalue floor imposed on `P̂_φ` during design.
///
/// The trace iteration only watches the `(Pₓ, P̂ₓ)` pair; left to itself it
/// parks the completion variable `P̂_φ` against the strict-inequality wall,
/// and the recovered `K_u = K̂_u P̂_φ⁻¹` blows up by the inverse of that
/// wall distance.  Requiring `P̂_φ ⪰ ρI` restricts the search to
/// well-conditioned witnesses — every inequality of the original criterion
/// still holds — and keeps the recovered gains at the scale of the model.
pub const COMPLETION_FLOOR: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("initial states are in agreement; the cost budget relation is undefined")]
    AgreementInitialStates,
    #[error("unusable topology spectrum: {0}")]
    BadSpectrum(String),
    #[error("cost budget {budget} is too small to synchronize this network")]
    BudgetTooSmall { budget: f64 },
    #[error("synchronization inequalities are infeasible for this configuration")]
    Infeasible { margins: Vec<BlockMargin> },
    #[error("coupling iteration did not converge within {iterations} rounds")]
    NotConverged { iterations: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Agent dynamics `ẋ = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone)]
pub struct AgentModel {
    a: Mat,
    b: Mat,
    c: Mat,
}

impl AgentModel {
    pub fn new(a: Mat, b: Mat, c: Mat) -> Result<Self, SynthesisError> {
        if a.rows() != a.cols() {
            return Err(SynthesisError::Invalid(format!(
                "state matrix must be square, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if b.rows() != a.rows() {
            return Err(SynthesisError::Invalid(format!(
                "input matrix has {} rows, state dimension is {}",
                b.rows(),
                a.rows()
            )));
        }
        if c.cols() != a.rows() {
            return Err(SynthesisError::Invalid(format!(
                "output matrix has {} columns, state dimension is {}",
                c.cols(),
                a.rows()
            )));
        }
        if b.cols() == 0 || c.rows() == 0 {
            return Err(SynthesisError::Invalid("input and output must be nonempty".into()));
        }
        Ok(AgentModel { a, b, c })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    /// State dimension n.
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    /// Input dimension m.
    pub fn m(&self) -> usize {
        self.b.cols()
    }

    /// Output dimension d.
    pub fn d(&self) -> usize {
        self.c.rows()
    }
}

/// Quadratic cost weights; both must be symmetric positive definite.
#[derive(Debug, Clone)]
pub struct CostWeights {
    q: Mat,
    r: Mat,
}

impl CostWeights {
    pub fn new(q: Mat, r: Mat) -> Result<Self, SynthesisError> {
        for (name, m) in [("Q", &q), ("R", &r)] {
            if m.rows() != m.cols() {
                return Err(SynthesisError::Invalid(format!("{name} must be square")));
            }
            if m.sym_residual() > 1e-10 {
                return Err(SynthesisError::Invalid(format!("{name} must be symmetric")));
            }
            let pd = numkit::is_pd(&m.symmetrize(), 0.0)?;
            if !pd.positive || pd.min_eig <= 0.0 {
                return Err(SynthesisError::Invalid(format!(
                    "{name} must be positive definite (min eigenvalue {:.3e})",
                    pd.min_eig
                )));
            }
        }
        Ok(CostWeights { q: q.symmetrize(), r: r.symmetrize() })
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn r(&self) -> &Mat {
        &self.r
    }
}

/// Protocol gain pair: `u = K_u φ` and output injection `K_φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolGains {
    pub ku: Mat,
    pub kphi: Mat,
}

impl ProtocolGains {
    pub fn check_against(&self, model: &AgentModel) -> Result<(), SynthesisError> {
        if self.ku.rows() != model.m() || self.ku.cols() != model.n() {
            return Err(SynthesisError::Invalid(format!(
                "Ku is {}x{}, expected {}x{}",
                self.ku.rows(),
                self.ku.cols(),
                model.m(),
                model.n()
            )));
        }
        if self.kphi.rows() != model.n() || self.kphi.cols() != model.d() {
            return Err(SynthesisError::Invalid(format!(
                "Kphi is {}x{}, expected {}x{}",
                self.kphi.rows(),
                self.kphi.cols(),
                model.n(),
                model.d()
            )));
        }
        Ok(())
    }
}

/// Everything the design pass produced, including the certification re-check.
#[derive(Debug, Clone)]
pub struct DesignReport {
    pub gains: ProtocolGains,
    pub px: Mat,
    pub phat_x: Mat,
    pub phat_phi: Mat,
    pub gamma: f64,
    pub budget_coefficient: f64,
    pub iterations: usize,
    /// Per-round objective and coupling record of the complementarity loop.
    pub ccl: Vec<CclIteration>,
    pub certificate: Option<AnalysisCertificate>,
    pub certified: bool,
}

/// Certificate produced by the analysis path for a fixed gain pair.
#[derive(Debug, Clone)]
pub struct AnalysisCertificate {
    pub feasible: bool,
    pub px: Mat,
    pub pphi: Mat,
    /// Guaranteed cost `x(0)ᵀ(M ⊗ Pₓ)x(0)`.
    pub cost_bound: f64,
    pub budget: f64,
    pub margins: Vec<BlockMargin>,
}

/// Quadratic form coefficient `x(0)ᵀ(M ⊗ Iₙ)x(0)` relating the budget to
/// the cap level γ.  Errors when the initial states are in agreement, which
/// makes the relation vacuous.
pub fn budget_coefficient(
    x0: &[f64],
    kind: TopologyKind,
    agents: usize,
) -> Result<f64, SynthesisError> {
    let gram = disagreement_gram(x0, kind, agents)?;
    let coeff = gram.trace();
    if coeff <= AGREEMENT_TOL {
        return Err(SynthesisError::AgreementInitialStates);
    }
    Ok(coeff)
}

/// The n×n Gram matrix `S = Σ_{j,k} M_{jk} x_k(0) x_j(0)ᵀ`, so that
/// `x(0)ᵀ(M ⊗ P)x(0) = tr(P·S)` for any symmetric `P`.
pub fn disagreement_gram(
    x0: &[f64],
    kind: TopologyKind,
    agents: usize,
) -> Result<Mat, SynthesisError> {
    if agents < 2 {
        return Err(SynthesisError::Invalid("need at least two agents".into()));
    }
    if x0.is_empty() || x0.len() % agents != 0 {
        return Err(SynthesisError::Invalid(format!(
            "stacked initial state length {} is not a multiple of {} agents",
            x0.len(),
            agents
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SynthesisError::Invalid("initial states must be finite".into()));
    }
    let n = x0.len() / agents;
    let m = relationship_matrix(kind, agents);
    let mut s = Mat::zeros(n, n);
    for j in 0..agents {
        for k in 0..agents {
            let w = m[(j, k)];
            if w == 0.0 {
                continue;
            }
            for p in 0..n {
                for q in 0..n {
                    s[(p, q)] += w * x0[k * n + p] * x0[j * n + q];
                }
            }
        }
    }
    Ok(s.symmetrize())
}

/// Design problem over `Pₓ`, `P̂ₓ`, `P̂_φ`, `K̂_u`: the budget cap, the two
/// eigenvalue-indexed synchronization blocks, the Schur coupling, and three
/// positivity blocks — seven in total.
pub fn assemble_design(
    model: &AgentModel,
    lambda2: f64,
    lambda_n: f64,
    weights: &CostWeights,
    gamma: f64,
) -> Result<LmiProblem, SynthesisError> {
    if !(lambda2 > 0.0) || !lambda2.is_finite() || !lambda_n.is_finite() || lambda_n < lambda2 {
        return Err(SynthesisError::BadSpectrum(format!(
            "need 0 < λ2 ≤ λN, got λ2 = {lambda2}, λN = {lambda_n}"
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(SynthesisError::Invalid(format!("gamma must be positive, got {gamma}")));
    }
    check_weights(model, weights)?;
    let n = model.n();

    let mut blocks = Vec::with_capacity(7);

    // Pₓ ⪯ γI.
    let mut budget = AffineBlock::new("budget", n, Sense::NegSemi);
    budget.add_constant(0, 0, &Mat::identity(n).scale(-gamma));
    budget.push_term(Mat::identity(n), "Px", false, Mat::identity(n), 1.0);
    blocks.push(budget);

    blocks.push(design_block(model, weights, lambda2, "sync lambda2"));
    blocks.push(design_block(model, weights, lambda_n, "sync lambdaN"));
    blocks.push(coupling_block(n));
    blocks.push(positivity_block("Px", n, "Px positive"));
    blocks.push(positivity_block("Phat_x", n, "Phat_x positive"));
    let mut phi_floor = positivity_block("Phat_phi", n, "Phat_phi positive");
    phi_floor.add_constant(0, 0, &Mat::identity(n).scale(COMPLETION_FLOOR));
    blocks.push(phi_floor);

    Ok(LmiProblem {
        vars: vec![
            MatVar::sym("Px", n),
            MatVar::sym("Phat_x", n),
            MatVar::sym("Phat_phi", n),
            MatVar::rect("Ku_hat", model.m(), n),
        ],
        blocks,
        objective: None,
    })
}

/// One synchronization block of the design criterion at eigenvalue λ:
///
/// ```text
/// [ AP̂_φ + P̂_φAᵀ + BK̂_u + K̂_uᵀBᵀ     -λ P̂ₓCᵀC                    K̂_uᵀR ]
/// [ *                                  PₓA + AᵀPₓ - 2λCᵀC + 2λQ    0     ]
/// [ *                                  0                           -R    ] ≺ 0
/// ```
fn design_block(model: &AgentModel, weights: &CostWeights, lambda: f64, label: &str) -> AffineBlock {
    let n = model.n();
    let m = model.m();
    let size = 2 * n + m;
    let a = model.a();
    let b = model.b();
    let ctc = model.c().transpose().mul(model.c());
    let r = weights.r();

    let e1 = frame_rows(size, 0, n);
    let f1 = frame_cols(size, 0, n);
    let e2 = frame_rows(size, n, n);
    let f2 = frame_cols(size, n, n);
    let e3 = frame_rows(size, 2 * n, m);
    let f3 = frame_cols(size, 2 * n, m);

    let mut blk = AffineBlock::new(label, size, Sense::StrictNeg);
    // (1,1): AP̂_φ + P̂_φAᵀ + BK̂_u + K̂_uᵀBᵀ.
    blk.push_term(e1.mul(a), "Phat_phi", false, f1.clone(), 1.0);
    blk.push_term(e1.clone(), "Phat_phi", false, a.transpose().mul(&f1), 1.0);
    blk.push_term(e1.mul(b), "Ku_hat", false, f1.clone(), 1.0);
    blk.push_term(e1.clone(), "Ku_hat", true, b.transpose().mul(&f1), 1.0);
    // (1,2) and mirror: -λ P̂ₓCᵀC.
    blk.push_term(e1.clone(), "Phat_x", false, ctc.mul(&f2), -lambda);
    blk.push_term(e2.mul(&ctc), "Phat_x", false, f1.clone(), -lambda);
    // (1,3) and mirror: K̂_uᵀR.
    blk.push_term(e1.clone(), "Ku_hat", true, r.mul(&f3), 1.0);
    blk.push_term(e3.mul(r), "Ku_hat", false, f1, 1.0);
    // (2,2): PₓA + AᵀPₓ - 2λCᵀC + 2λQ.
    blk.push_term(e2.clone(), "Px", false, a.mul(&f2), 1.0);
    blk.push_term(e2.mul(&a.transpose()), "Px", false, f2, 1.0);
    let const22 = weights.q().sub(&ctc).scale(2.0 * lambda);
    blk.add_constant(n, n, &const22);
    // (3,3): -R.
    blk.add_constant(2 * n, 2 * n, &r.scale(-1.0));
    blk
}

/// Schur coupling `[[Pₓ, I], [I, P̂ₓ]] ⪰ 0`.
fn coupling_block(n: usize) -> AffineBlock {
    let size = 2 * n;
    let mut blk = AffineBlock::new("coupling", size, Sense::PosSemi);
    blk.add_constant(0, n, &Mat::identity(n));
    blk.add_constant(n, 0, &Mat::identity(n));
    blk.push_term(frame_rows(size, 0, n), "Px", false, frame_cols(size, 0, n), 1.0);
    blk.push_term(frame_rows(size, n, n), "Phat_x", false, frame_cols(size, n, n), 1.0);
    blk
}

/// `X ≻ 0` encoded as `-X ≺ 0`.
fn positivity_block(var: &str, n: usize, label: &str) -> AffineBlock {
    let mut blk = AffineBlock::new(label, n, Sense::StrictNeg);
    blk.push_term(Mat::identity(n), var, false, Mat::identity(n), -1.0);
    blk
}

/// One analysis block at eigenvalue λ for fixed gains:
///
/// ```text
/// [ P_φ(A+BK_u) + (A+BK_u)ᵀP_φ    λ P_φ K_φ C                              K_uᵀR ]
/// [ *                             Pₓ(A+λK_φC) + (A+λK_φC)ᵀPₓ + 2λQ         0     ]
/// [ *                             0                                        -R    ] ≺ 0
/// ```
pub fn analysis_block(
    model: &AgentModel,
    weights: &CostWeights,
    gains: &ProtocolGains,
    lambda: f64,
    label: &str,
) -> Result<AffineBlock, SynthesisError> {
    gains.check_against(model)?;
    check_weights(model, weights)?;
    let n = model.n();
    let m = model.m();
    let size = 2 * n + m;
    let a_cl = model.a().add(&model.b().mul(&gains.ku));
    let kc = gains.kphi.mul(model.c());
    let a_lambda = model.a().add(&kc.scale(lambda));
    let r = weights.r();

    let e1 = frame_rows(size, 0, n);
    let f1 = frame_cols(size, 0, n);
    let e2 = frame_rows(size, n, n);
    let f2 = frame_cols(size, n, n);

    let mut blk = AffineBlock::new(label, size, Sense::StrictNeg);
    // (1,1): P_φ(A+BK_u) + (A+BK_u)ᵀP_φ.
    blk.push_term(e1.clone(), "Pphi", false, a_cl.mul(&f1), 1.0);
    blk.push_term(e1.mul(&a_cl.transpose()), "Pphi", false, f1.clone(), 1.0);
    // (1,2) and mirror: λ P_φ K_φ C.
    blk.push_term(e1.clone(), "Pphi", false, kc.mul(&f2), lambda);
    blk.push_term(e2.mul(&kc.transpose()), "Pphi", false, f1, lambda);
    // (1,3) corner: K_uᵀR constant.
    let corner = gains.ku.transpose().mul(r);
    blk.add_constant(0, 2 * n, &corner);
    blk.add_constant(2 * n, 0, &corner.transpose());
    // (2,2): Pₓ(A+λK_φC) + (A+λK_φC)ᵀPₓ + 2λQ.
    blk.push_term(e2.clone(), "Px", false, a_lambda.mul(&f2), 1.0);
    blk.push_term(e2.mul(&a_lambda.transpose()), "Px", false, f2, 1.0);
    blk.add_constant(n, n, &weights.q().scale(2.0 * lambda));
    // (3,3): -R.
    blk.add_constant(2 * n, 2 * n, &r.scale(-1.0));
    Ok(blk)
}

/// Analysis problem for fixed gains: two synchronization blocks, positivity
/// of `Pₓ` and `P_φ`, and the scalar budget constraint `tr(Pₓ·S) ≤ J*`.
fn assemble_analysis(
    model: &AgentModel,
    lambda2: f64,
    lambda_n: f64,
    weights: &CostWeights,
    gains: &ProtocolGains,
    gram: &Mat,
    budget: f64,
) -> Result<LmiProblem, SynthesisError> {
    if !(lambda2 > 0.0) || lambda_n < lambda2 {
        return Err(SynthesisError::BadSpectrum(format!(
            "need 0 < λ2 ≤ λN, got λ2 = {lambda2}, λN = {lambda_n}"
        )));
    }
    let n = model.n();
    let mut blocks = vec![
        analysis_block(model, weights, gains, lambda2, "sync lambda2")?,
        analysis_block(model, weights, gains, lambda_n, "sync lambdaN")?,
        positivity_block("Px", n, "Px positive"),
        positivity_block("Pphi", n, "Pphi positive"),
    ];

    // tr(Pₓ·S) - J* ⪯ 0 as a 1×1 block, with S split into rank-one factors.
    let eig = numkit::sym_eig(gram)?;
    let mut bound = AffineBlock::new("budget", 1, Sense::NegSemi);
    bound.add_constant(0, 0, &Mat::from_rows(&[vec![-budget]]));
    let cutoff = eig.values.iter().fold(0.0_f64, |a, &b| a.max(b.abs())) * 1e-14;
    for (idx, &sigma) in eig.values.iter().enumerate() {
        if sigma.abs() <= cutoff {
            continue;
        }
        let mut u_row = Mat::zeros(1, n);
        let mut u_col = Mat::zeros(n, 1);
        for i in 0..n {
            u_row[(0, i)] = eig.vectors[(i, idx)] * sigma;
            u_col[(i, 0)] = eig.vectors[(i, idx)];
        }
        bound.push_term(u_row, "Px", false, u_col, 1.0);
    }
    blocks.push(bound);

    Ok(LmiProblem {
        vars: vec![MatVar::sym("Px", n), MatVar::sym("Pphi", n)],
        blocks,
        objective: None,
    })
}

/// Extracts the protocol gains from the design unknowns:
/// `K_u = K̂_u P̂_φ⁻¹`, `K_φ = -P̂ₓCᵀ`.
pub fn gain_extraction(
    khat_u: &Mat,
    phat_phi: &Mat,
    phat_x: &Mat,
    c: &Mat,
) -> Result<ProtocolGains, SynthesisError> {
    let inv = numkit::inverse(phat_phi)?;
    let ku = khat_u.mul(&inv);
    let kphi = phat_x.mul(&c.transpose()).scale(-1.0);
    Ok(ProtocolGains { ku, kphi })
}

fn check_weights(model: &AgentModel, weights: &CostWeights) -> Result<(), SynthesisError> {
    if weights.q().rows() != model.n() {
        return Err(SynthesisError::Invalid(format!(
            "Q is {}x{}, state dimension is {}",
            weights.q().rows(),
            weights.q().cols(),
            model.n()
        )));
    }
    if weights.r().rows() != model.m() {
        return Err(SynthesisError::Invalid(format!(
            "R is {}x{}, input dimension is {}",
            weights.r().rows(),
            weights.r().cols(),
            model.m()
        )));
    }
    Ok(())
}

fn check_states(model: &AgentModel, topology: &Topology, x0: &[f64]) -> Result<(), SynthesisError> {
    let expected = topology.agents() * model.n();
    if x0.len() != expected {
        return Err(SynthesisError::Invalid(format!(
            "stacked initial state has length {}, expected {} ({} agents × n = {})",
            x0.len(),
            expected,
            topology.agents(),
            model.n()
        )));
    }
    Ok(())
}

/// Runs the full design pass: budget coefficient, spectrum, assembly, the
/// cone-complementarity iteration, gain extraction, and the certification
/// re-check via [`analyze`].
pub fn design(
    model: &AgentModel,
    topology: &Topology,
    weights: &CostWeights,
    x0: &[f64],
    budget: f64,
    opts: &SolverOptions,
) -> Result<DesignReport, SynthesisError> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(SynthesisError::Invalid(format!("budget must be positive, got {budget}")));
    }
    check_weights(model, weights)?;
    check_states(model, topology, x0)?;
    let adm = topology.is_admissible();
    if !adm.admissible {
        return Err(SynthesisError::Invalid(adm.diagnosis));
    }

    let coeff = budget_coefficient(x0, topology.kind(), topology.agents())?;
    let gamma = budget / coeff;
    let spectrum = topology.spectrum()?;
    let problem = assemble_design(model, spectrum.lambda2, spectrum.lambda_n, weights, gamma)?;

    let run = match lmi::cone_complementarity(&problem, ("Px", "Phat_x"), opts) {
        Ok(run) => run,
        Err(LmiError::Step1Infeasible { margins }) => {
            return Err(diagnose_infeasibility(&problem, margins, budget, opts));
        }
        Err(e) => return Err(e.into()),
    };
    if run.result.status == Status::MaxIterations {
        return Err(SynthesisError::NotConverged { iterations: run.iterations.len() });
    }

    let px = run.result.assignment["Px"].clone();
    let phat_x = run.result.assignment["Phat_x"].clone();
    let phat_phi = run.result.assignment["Phat_phi"].clone();
    let khat_u = run.result.assignment["Ku_hat"].clone();
    let gains = gain_extraction(&khat_u, &phat_phi, &phat_x, model.c())?;

    let certificate = match analyze(model, topology, weights, &gains, x0, budget) {
        Ok(cert) => Some(cert),
        Err(SynthesisError::Infeasible { .. }) => None,
        Err(e) => return Err(e),
    };
    let certified = certificate.as_ref().map(|c| c.feasible).unwrap_or(false);

    Ok(DesignReport {
        gains,
        px,
        phat_x,
        phat_phi,
        gamma,
        budget_coefficient: coeff,
        iterations: run.iterations.len(),
        ccl: run.iterations,
        certificate,
        certified,
    })
}

/// Distinguishes a genuinely infeasible configuration from one that only
/// fails because the budget cap binds: the same problem without the budget
/// block is re-solved, and feasibility there pins the blame on the budget.
fn diagnose_infeasibility(
    problem: &LmiProblem,
    margins: Vec<BlockMargin>,
    budget: f64,
    opts: &SolverOptions,
) -> SynthesisError {
    let mut relaxed = problem.clone();
    relaxed.blocks.retain(|b| b.label() != "budget");
    match lmi::solve_feasibility(&relaxed, opts) {
        Ok(res) if res.is_feasible() => SynthesisError::BudgetTooSmall { budget },
        _ => SynthesisError::Infeasible { margins },
    }
}

/// Certifies a fixed gain pair: solves the analysis inequalities together
/// with the budget constraint and evaluates the guaranteed cost bound.
pub fn analyze(
    model: &AgentModel,
    topology: &Topology,
    weights: &CostWeights,
    gains: &ProtocolGains,
    x0: &[f64],
    budget: f64,
) -> Result<AnalysisCertificate, SynthesisError> {
    analyze_with(model, topology, weights, gains, x0, budget, &SolverOptions::default())
}

/// [`analyze`] with explicit solver options.
pub fn analyze_with(
    model: &AgentModel,
    topology: &Topology,
    weights: &CostWeights,
    gains: &ProtocolGains,
    x0: &[f64],
    budget: f64,
    opts: &SolverOptions,
) -> Result<AnalysisCertificate, SynthesisError> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(SynthesisError::Invalid(format!("budget must be positive, got {budget}")));
    }
    gains.check_against(model)?;
    check_weights(model, weights)?;
    check_states(model, topology, x0)?;
    let adm = topology.is_admissible();
    if !adm.admissible {
        return Err(SynthesisError::Invalid(adm.diagnosis));
    }

    let gram = disagreement_gram(x0, topology.kind(), topology.agents())?;
    let spectrum = topology.spectrum()?;
    let problem =
        assemble_analysis(model, spectrum.lambda2, spectrum.lambda_n, weights, gains, &gram, budget)?;

    // Cheap warm start: Pₓ = P_φ = αI over a geometric grid, centered if it
    // already sits strictly inside; otherwise the full phase-1 search runs.
    let result = warm_start(&problem, model.n(), opts)
        .map(Ok)
        .unwrap_or_else(|| lmi::solve_feasibility(&problem, opts))?;
    if !result.is_feasible() {
        return Err(SynthesisError::Infeasible { margins: result.margins });
    }

    let px = result.assignment["Px"].clone();
    let pphi = result.assignment["Pphi"].clone();
    let cost_bound = cost_bound_of(&px, &gram);
    Ok(AnalysisCertificate {
        feasible: true,
        px,
        pphi,
        cost_bound,
        budget,
        margins: result.margins,
    })
}

fn warm_start(
    problem: &LmiProblem,
    n: usize,
    opts: &SolverOptions,
) -> Option<lmi::FeasibilityResult> {
    for k in -20..=20 {
        let alpha = 2.0_f64.powi(k);
        let mut asg = Assignment::new();
        asg.insert("Px".into(), Mat::identity(n).scale(alpha));
        asg.insert("Pphi".into(), Mat::identity(n).scale(alpha));
        match lmi::center_from(problem, &asg, opts) {
            Ok(res) if res.is_feasible() => return Some(res),
            _ => continue,
        }
    }
    None
}

/// `x(0)ᵀ(M ⊗ Pₓ)x(0)` evaluated through the Gram matrix.
pub fn cost_bound_of(px: &Mat, gram: &Mat) -> f64 {
    let mut t = 0.0;
    for i in 0..px.rows() {
        for j in 0..px.cols() {
            t += px[(i, j)] * gram[(j, i)];
        }
    }
    t
}
