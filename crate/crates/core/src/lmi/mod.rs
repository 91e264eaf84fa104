//! Linear matrix inequality problems and a deterministic interior-point solver.
//!
//! A problem is a list of matrix variables together with affine symmetric
//! blocks, each carrying a sense (`≺ 0`, `⪯ 0`, `⪰ 0`).  Feasibility and
//! trace-objective minimization run a log-barrier path-following method on the
//! vectorized variables; see [`barrier`] for the Newton machinery.  On top of
//! that sits the cone-complementarity linearization loop used to work the
//! bilinear coupling `P · P̂ = I` down to numerical tolerance.
//!
//! Everything here is deterministic: variables and parameters are ordered by
//! construction, there is no randomized initialization, and repeated solves of
//! the same problem produce bit-identical iterates.

mod barrier;

use crate::numkit::{self, Mat, NumError};
use std::collections::BTreeMap;

/// Default strict-inequality margin: `M ≺ 0` is solved as `M ⪯ -εI`.
pub const DEFAULT_MARGIN: f64 = 1e-7;
/// Slack applied when re-verifying block margins on a returned point.
pub const VERIFY_SLACK: f64 = 1e-9;
/// Default radius of the norm ball that keeps directions the constraints
/// leave free bounded.  Kept a couple of orders above the coordinate scale
/// of well-posed problems at these sizes; unbounded ("recession")
/// directions would otherwise drag iterates into ill-conditioned corners.
pub const BALL_RADIUS: f64 = 1e4;
/// Asymmetry residual above which a block is rejected as mis-assembled.
pub const ASYM_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum LmiError {
    #[error("shape mismatch in block '{label}': {detail}")]
    ShapeMismatch { label: String, detail: String },
    #[error("unknown variable '{0}'")]
    MissingVariable(String),
    #[error("block '{label}' assembles to an asymmetric matrix (residual {residual:.3e})")]
    Asymmetric { label: String, residual: f64 },
    #[error("ill-posed problem: {0}")]
    IllPosed(String),
    #[error("no strictly feasible starting point")]
    NoFeasibleStart,
    #[error("step 1 infeasible: no point satisfies the design inequalities")]
    Step1Infeasible { margins: Vec<BlockMargin> },
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Orientation of an affine block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `M(v) ≺ 0`, enforced as `M ⪯ -εI` with the solver margin ε.
    StrictNeg,
    /// `M(v) ⪯ 0`.
    NegSemi,
    /// `M(v) ⪰ 0`.
    PosSemi,
}

/// A matrix decision variable.  Symmetric variables are parameterized by
/// their upper triangle; rectangular ones entry by entry.
#[derive(Debug, Clone)]
pub struct MatVar {
    name: String,
    rows: usize,
    cols: usize,
    symmetric: bool,
}

impl MatVar {
    pub fn sym(name: &str, n: usize) -> Self {
        MatVar { name: name.to_string(), rows: n, cols: n, symmetric: true }
    }

    pub fn rect(name: &str, rows: usize, cols: usize) -> Self {
        MatVar { name: name.to_string(), rows, cols, symmetric: false }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn param_count(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }
}

/// One affine term `scale · L · X · R` (or `L · Xᵀ · R`) inside a block.
#[derive(Debug, Clone)]
pub struct Term {
    pub left: Mat,
    pub var: String,
    pub transpose: bool,
    pub right: Mat,
    pub scale: f64,
}

/// An affine symmetric matrix expression with a sense.
#[derive(Debug, Clone)]
pub struct AffineBlock {
    label: String,
    constant: Mat,
    terms: Vec<Term>,
    sense: Sense,
}

impl AffineBlock {
    pub fn new(label: &str, size: usize, sense: Sense) -> Self {
        AffineBlock {
            label: label.to_string(),
            constant: Mat::zeros(size, size),
            terms: Vec::new(),
            sense,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn size(&self) -> usize {
        self.constant.rows()
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    /// Adds `m` into the constant part at offset `(i0, j0)`.
    pub fn add_constant(&mut self, i0: usize, j0: usize, m: &Mat) {
        assert!(
            i0 + m.rows() <= self.size() && j0 + m.cols() <= self.size(),
            "constant placement out of range in block '{}'",
            self.label
        );
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                self.constant[(i0 + i, j0 + j)] += m[(i, j)];
            }
        }
    }

    /// Appends the term `scale · L · X · R` (with `X` transposed if asked).
    pub fn push_term(&mut self, left: Mat, var: &str, transpose: bool, right: Mat, scale: f64) {
        assert_eq!(left.rows(), self.size(), "term left factor row count in '{}'", self.label);
        assert_eq!(right.cols(), self.size(), "term right factor column count in '{}'", self.label);
        self.terms.push(Term { left, var: var.to_string(), transpose, right, scale });
    }
}

/// Places `m` into rows `i0..` of an identity-free frame: returns the
/// `size × m.rows()` matrix `E` with `E[i0+k][k] = 1`, so `E · m` embeds `m`
/// as a row block.  Used together with [`frame_cols`] to lift small factors
/// into a larger block.
pub fn frame_rows(size: usize, i0: usize, rows: usize) -> Mat {
    assert!(i0 + rows <= size, "frame rows out of range");
    let mut e = Mat::zeros(size, rows);
    for k in 0..rows {
        e[(i0 + k, k)] = 1.0;
    }
    e
}

/// Column companion of [`frame_rows`]: the `m.cols() × size` matrix `F` with
/// `F[k][j0+k] = 1`, so `m · F` embeds `m` as a column block.
pub fn frame_cols(size: usize, j0: usize, cols: usize) -> Mat {
    assert!(j0 + cols <= size, "frame cols out of range");
    let mut f = Mat::zeros(cols, size);
    for k in 0..cols {
        f[(k, j0 + k)] = 1.0;
    }
    f
}

/// Linear objective `Σ tr(Wₖ · Xₖ)` over a subset of the variables.
#[derive(Debug, Clone, Default)]
pub struct Objective {
    pub terms: Vec<(String, Mat)>,
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    pub vars: Vec<MatVar>,
    pub blocks: Vec<AffineBlock>,
    pub objective: Option<Objective>,
}

impl LmiProblem {
    pub fn var(&self, name: &str) -> Option<&MatVar> {
        self.vars.iter().find(|v| v.name == name)
    }
}

/// Variable assignment keyed by name.  `BTreeMap` keeps iteration order
/// stable so downstream reductions stay deterministic.
pub type Assignment = BTreeMap<String, Mat>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Feasible,
    InfeasibleBestEffort,
    MaxIterations,
}

/// Sense-oriented extreme eigenvalue of one block at the returned point.
#[derive(Debug, Clone)]
pub struct BlockMargin {
    pub label: String,
    pub sense: Sense,
    /// Largest eigenvalue for negative senses, smallest for `⪰ 0`.
    pub extreme: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub status: Status,
    pub assignment: Assignment,
    pub margins: Vec<BlockMargin>,
    pub objective_value: Option<f64>,
}

impl FeasibilityResult {
    pub fn is_feasible(&self) -> bool {
        self.status == Status::Feasible
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Strict-inequality margin ε.
    pub margin: f64,
    /// Eigenvalue slack allowed when re-verifying margins.
    pub psd_slack: f64,
    /// Initial and final barrier parameter, and the geometric factor.
    pub mu_init: f64,
    pub mu_min: f64,
    pub mu_factor: f64,
    /// Newton decrement tolerance and per-stage iteration cap.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Cone-complementarity stopping tolerance on `‖P·P̂ - I‖_F`.
    pub delta: f64,
    /// Cone-complementarity iteration cap.
    pub max_iters: usize,
    /// Norm-ball radius bounding the vectorized variables.
    pub ball_radius: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            margin: DEFAULT_MARGIN,
            psd_slack: VERIFY_SLACK,
            mu_init: 1.0,
            mu_min: 1e-9,
            mu_factor: 5.0,
            newton_tol: 1e-10,
            max_newton: 100,
            delta: 1e-4,
            max_iters: 200,
            ball_radius: BALL_RADIUS,
        }
    }
}

/// One record of the cone-complementarity trace.
#[derive(Debug, Clone)]
pub struct CclIteration {
    pub iteration: usize,
    /// Value of the linearized objective at the iterate.
    pub objective: f64,
    /// `‖P·P̂ - I‖_F` at the iterate.
    pub coupling: f64,
    /// `tr(P·P̂)` at the iterate; stays ≥ n under the coupling block.
    pub product_trace: f64,
}

#[derive(Debug, Clone)]
pub struct CclRun {
    pub result: FeasibilityResult,
    pub iterations: Vec<CclIteration>,
}

/// Assembles a block at an assignment and returns the symmetric matrix with
/// its sense-oriented extreme eigenvalue (largest for negative senses,
/// smallest for `⪰ 0`).
pub fn evaluate(block: &AffineBlock, assignment: &Assignment) -> Result<(Mat, f64), LmiError> {
    let n = block.size();
    let mut m = block.constant.clone();
    for term in &block.terms {
        let x = assignment
            .get(&term.var)
            .ok_or_else(|| LmiError::MissingVariable(term.var.clone()))?;
        let xt;
        let x_eff = if term.transpose {
            xt = x.transpose();
            &xt
        } else {
            x
        };
        if term.left.cols() != x_eff.rows() || x_eff.cols() != term.right.rows() {
            return Err(LmiError::ShapeMismatch {
                label: block.label.clone(),
                detail: format!(
                    "term on '{}': {}x{} · {}x{} · {}x{}",
                    term.var,
                    term.left.rows(),
                    term.left.cols(),
                    x_eff.rows(),
                    x_eff.cols(),
                    term.right.rows(),
                    term.right.cols()
                ),
            });
        }
        let contrib = term.left.mul(x_eff).mul(&term.right).scale(term.scale);
        m = m.add(&contrib);
    }
    let residual = m.sym_residual();
    if residual > ASYM_TOL {
        return Err(LmiError::Asymmetric { label: block.label.clone(), residual });
    }
    let m = m.symmetrize();
    let eig = numkit::sym_eig(&m)?;
    let extreme = match block.sense {
        Sense::StrictNeg | Sense::NegSemi => eig.values[n - 1],
        Sense::PosSemi => eig.values[0],
    };
    Ok((m, extreme))
}

/// Re-checks every block of `p` at `assignment` and reports margins.
pub fn verify(
    p: &LmiProblem,
    assignment: &Assignment,
    opts: &SolverOptions,
) -> Result<(Vec<BlockMargin>, bool), LmiError> {
    let mut margins = Vec::with_capacity(p.blocks.len());
    let mut all_ok = true;
    for block in &p.blocks {
        let (_, extreme) = evaluate(block, assignment)?;
        let satisfied = match block.sense {
            Sense::StrictNeg => extreme <= -(opts.margin - opts.psd_slack),
            Sense::NegSemi => extreme <= opts.psd_slack,
            Sense::PosSemi => extreme >= -opts.psd_slack,
        };
        all_ok &= satisfied;
        margins.push(BlockMargin {
            label: block.label.clone(),
            sense: block.sense,
            extreme,
            satisfied,
        });
    }
    Ok((margins, all_ok))
}

fn check_problem(p: &LmiProblem) -> Result<(), LmiError> {
    if p.vars.is_empty() {
        return Err(LmiError::IllPosed("no variables".into()));
    }
    if p.blocks.is_empty() {
        return Err(LmiError::IllPosed("no blocks".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for v in &p.vars {
        if v.rows == 0 || v.cols == 0 {
            return Err(LmiError::IllPosed(format!("variable '{}' has zero dimension", v.name)));
        }
        if !seen.insert(v.name.clone()) {
            return Err(LmiError::IllPosed(format!("duplicate variable '{}'", v.name)));
        }
    }
    for b in &p.blocks {
        if b.size() == 0 {
            return Err(LmiError::IllPosed(format!("block '{}' has zero dimension", b.label)));
        }
        for t in &b.terms {
            let var = p
                .var(&t.var)
                .ok_or_else(|| LmiError::MissingVariable(t.var.clone()))?;
            let (vr, vc) = if t.transpose { (var.cols, var.rows) } else { (var.rows, var.cols) };
            if t.left.cols() != vr || t.right.rows() != vc {
                return Err(LmiError::ShapeMismatch {
                    label: b.label.clone(),
                    detail: format!(
                        "term on '{}': left is {}x{}, variable is {}x{}, right is {}x{}",
                        t.var,
                        t.left.rows(),
                        t.left.cols(),
                        vr,
                        vc,
                        t.right.rows(),
                        t.right.cols()
                    ),
                });
            }
            if !t.scale.is_finite() {
                return Err(LmiError::IllPosed(format!(
                    "non-finite term scale in block '{}'",
                    b.label
                )));
            }
        }
    }
    if let Some(obj) = &p.objective {
        for (name, w) in &obj.terms {
            let var = p
                .var(name)
                .ok_or_else(|| LmiError::MissingVariable(name.clone()))?;
            if w.rows() != var.cols || w.cols() != var.rows {
                return Err(LmiError::ShapeMismatch {
                    label: "objective".into(),
                    detail: format!(
                        "weight for '{}' is {}x{}, need {}x{}",
                        name,
                        w.rows(),
                        w.cols(),
                        var.cols,
                        var.rows
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Searches for a strictly feasible point of `p` (the objective, if any, must
/// be absent).  The returned point is the terminal iterate of the phase-1
/// centering path — the analytic center of the phase-1 problem at the stage
/// where the uniform constraint shift went negative.  Deliberately *not*
/// centered on the target set afterwards: problems with unbounded
/// ("recession") directions would drag a full analytic center out to the
/// norm ball, while the phase-1 point stays at moderate coordinates.
pub fn solve_feasibility(p: &LmiProblem, opts: &SolverOptions) -> Result<FeasibilityResult, LmiError> {
    if p.objective.is_some() {
        return Err(LmiError::IllPosed(
            "feasibility search expects a problem without an objective".into(),
        ));
    }
    check_problem(p)?;
    let space = barrier::ParamSpace::build(&p.vars);
    let bar = barrier::BarrierProblem::linearize(p, &space, opts)?;
    let (v, feasible) = bar.find_feasible(opts);
    let assignment = space.unpack(&v);
    let (margins, ok) = verify(p, &assignment, opts)?;
    let status = if feasible && ok { Status::Feasible } else { Status::InfeasibleBestEffort };
    Ok(FeasibilityResult { status, assignment, margins, objective_value: None })
}

/// Centers a given strictly feasible assignment instead of running the
/// phase-1 search.  Errors with [`LmiError::NoFeasibleStart`] when the start
/// is not strictly interior; any objective on `p` is ignored.
pub fn center_from(
    p: &LmiProblem,
    start: &Assignment,
    opts: &SolverOptions,
) -> Result<FeasibilityResult, LmiError> {
    check_problem(p)?;
    let space = barrier::ParamSpace::build(&p.vars);
    let bar = barrier::BarrierProblem::linearize(p, &space, opts)?;
    let v0 = space.pack(start)?;
    if !bar.strictly_inside(&v0) {
        return Err(LmiError::NoFeasibleStart);
    }
    let v = bar.center(&v0, opts);
    let assignment = space.unpack(&v);
    let (margins, ok) = verify(p, &assignment, opts)?;
    let status = if ok { Status::Feasible } else { Status::InfeasibleBestEffort };
    Ok(FeasibilityResult { status, assignment, margins, objective_value: None })
}

/// Minimizes the trace objective of `p` over its feasible region, running its
/// own feasibility phase first.
pub fn solve_min_trace(p: &LmiProblem, opts: &SolverOptions) -> Result<FeasibilityResult, LmiError> {
    check_problem(p)?;
    if p.objective.is_none() {
        return Err(LmiError::IllPosed("trace minimization requires an objective".into()));
    }
    let feas = {
        let mut q = p.clone();
        q.objective = None;
        solve_feasibility(&q, opts)?
    };
    if !feas.is_feasible() {
        return Err(LmiError::NoFeasibleStart);
    }
    solve_min_trace_from(p, &feas.assignment, opts)
}

/// Minimizes the trace objective of `p` starting from a strictly feasible
/// assignment.  The result never has a worse objective value than the start:
/// if path following fails to improve, the start is returned unchanged.
pub fn solve_min_trace_from(
    p: &LmiProblem,
    start: &Assignment,
    opts: &SolverOptions,
) -> Result<FeasibilityResult, LmiError> {
    check_problem(p)?;
    let obj = p
        .objective
        .as_ref()
        .ok_or_else(|| LmiError::IllPosed("trace minimization requires an objective".into()))?;
    let space = barrier::ParamSpace::build(&p.vars);
    let bar = barrier::BarrierProblem::linearize(p, &space, opts)?;
    let c = space.objective_vector(obj);
    let v0 = space.pack(start)?;
    if !bar.strictly_inside(&v0) {
        return Err(LmiError::NoFeasibleStart);
    }
    let v = bar.minimize(&c, &v0, opts);
    let start_value = barrier::dot(&c, &v0);
    let end_value = barrier::dot(&c, &v);
    let (v, value) = if end_value <= start_value { (v, end_value) } else { (v0, start_value) };
    let assignment = space.unpack(&v);
    let (margins, ok) = verify(p, &assignment, opts)?;
    let status = if ok { Status::Feasible } else { Status::InfeasibleBestEffort };
    Ok(FeasibilityResult { status, assignment, margins, objective_value: Some(value) })
}

/// Cone-complementarity linearization for the bilinear coupling
/// `x · x̂ = I` between two symmetric variables of `p`.
///
/// `p` must already contain the coupling block `[[x, I], [I, x̂]] ⪰ 0` and
/// must not carry an objective; the linearized objective
/// `tr(x · x̂ₖ + xₖ · x̂)` is installed here each round.  Stops when
/// `‖x · x̂ - I‖_F < delta` (status `Feasible`) or after `max_iters` rounds
/// (status `MaxIterations`, last iterate returned).
pub fn cone_complementarity(
    p: &LmiProblem,
    coupling: (&str, &str),
    opts: &SolverOptions,
) -> Result<CclRun, LmiError> {
    check_problem(p)?;
    if p.objective.is_some() {
        return Err(LmiError::IllPosed(
            "cone complementarity installs its own objective".into(),
        ));
    }
    let (xn, xhn) = coupling;
    for name in [xn, xhn] {
        let var = p
            .var(name)
            .ok_or_else(|| LmiError::MissingVariable(name.to_string()))?;
        if !var.symmetric {
            return Err(LmiError::IllPosed(format!(
                "coupling variable '{name}' must be symmetric"
            )));
        }
    }
    if p.var(xn).unwrap().rows != p.var(xhn).unwrap().rows {
        return Err(LmiError::IllPosed("coupling variables must have equal dimension".into()));
    }

    let step1 = solve_feasibility(p, opts)?;
    if !step1.is_feasible() {
        return Err(LmiError::Step1Infeasible { margins: step1.margins });
    }

    let n = p.var(xn).unwrap().rows;
    let eye = Mat::identity(n);
    let mut current = step1;
    let mut iterations = Vec::new();
    for k in 0..opts.max_iters {
        let xk = current.assignment[xn].clone();
        let xhk = current.assignment[xhn].clone();
        let mut q = p.clone();
        q.objective = Some(Objective {
            terms: vec![(xn.to_string(), xhk.clone()), (xhn.to_string(), xk.clone())],
        });
        let step = solve_min_trace_from(&q, &current.assignment, opts)?;
        let product = step.assignment[xn].mul(&step.assignment[xhn]);
        let coupling_err = product.sub(&eye).frob_norm();
        iterations.push(CclIteration {
            iteration: k,
            objective: step.objective_value.unwrap_or(f64::NAN),
            coupling: coupling_err,
            product_trace: product.trace(),
        });
        current = step;
        if coupling_err < opts.delta {
            return Ok(CclRun { result: current, iterations });
        }
    }
    current.status = Status::MaxIterations;
    Ok(CclRun { result: current, iterations })
}
