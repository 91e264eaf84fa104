//! Log-barrier path-following internals.
//!
//! The affine blocks are vectorized over a flat parameter space (upper
//! triangle for symmetric variables, entries for rectangular ones) and
//! oriented so that every constraint reads `S(v) ≻ 0`:
//!
//! * `M ≺ 0` becomes `S = -M - εI`,
//! * `M ⪯ 0` becomes `S = -M`,
//! * `M ⪰ 0` becomes `S = M`.
//!
//! A norm ball `‖v‖ < R` bounds directions the constraints leave free, so the
//! analytic center always exists.  Feasibility is a phase-1 minimization of a
//! uniform shift `s` with `S_b(v) + sI ≻ 0`; objectives follow the central
//! path `min cᵀv + μ Φ(v)` with `μ` shrinking geometrically.  Newton steps
//! solve the exact Hessian system with an escalating ridge, and a backtracking
//! line search keeps every iterate strictly inside all cones.

use super::{AffineBlock, Assignment, LmiError, LmiProblem, Objective, Sense, SolverOptions};
use super::ASYM_TOL;
use crate::numkit::Mat;

/// Phase 1 stops early once the shift is at least this far below zero.
const PHASE1_EXIT: f64 = 1e-4;
/// Armijo sufficient-decrease constant and smallest admitted step.
const ARMIJO: f64 = 0.25;
const MIN_STEP: f64 = 1e-16;

pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct VarLayout {
    name: String,
    rows: usize,
    cols: usize,
    symmetric: bool,
    offset: usize,
}

/// Flat coordinates for all matrix variables of a problem.
pub(super) struct ParamSpace {
    layouts: Vec<VarLayout>,
    dim: usize,
}

impl ParamSpace {
    pub(super) fn build(vars: &[super::MatVar]) -> Self {
        let mut layouts = Vec::with_capacity(vars.len());
        let mut offset = 0;
        for v in vars {
            layouts.push(VarLayout {
                name: v.name().to_string(),
                rows: v.rows(),
                cols: v.cols(),
                symmetric: v.is_symmetric(),
                offset,
            });
            offset += v.param_count();
        }
        ParamSpace { layouts, dim: offset }
    }

    pub(super) fn dim(&self) -> usize {
        self.dim
    }

    pub(super) fn pack(&self, assignment: &Assignment) -> Result<Vec<f64>, LmiError> {
        let mut v = vec![0.0; self.dim];
        for l in &self.layouts {
            let m = assignment
                .get(&l.name)
                .ok_or_else(|| LmiError::MissingVariable(l.name.clone()))?;
            if m.rows() != l.rows || m.cols() != l.cols {
                return Err(LmiError::ShapeMismatch {
                    label: "assignment".into(),
                    detail: format!(
                        "'{}' is {}x{}, expected {}x{}",
                        l.name,
                        m.rows(),
                        m.cols(),
                        l.rows,
                        l.cols
                    ),
                });
            }
            let mut p = l.offset;
            if l.symmetric {
                for i in 0..l.rows {
                    for j in i..l.cols {
                        v[p] = if i == j { m[(i, i)] } else { 0.5 * (m[(i, j)] + m[(j, i)]) };
                        p += 1;
                    }
                }
            } else {
                for i in 0..l.rows {
                    for j in 0..l.cols {
                        v[p] = m[(i, j)];
                        p += 1;
                    }
                }
            }
        }
        Ok(v)
    }

    pub(super) fn unpack(&self, v: &[f64]) -> Assignment {
        let mut out = Assignment::new();
        for l in &self.layouts {
            let mut m = Mat::zeros(l.rows, l.cols);
            let mut p = l.offset;
            if l.symmetric {
                for i in 0..l.rows {
                    for j in i..l.cols {
                        m[(i, j)] = v[p];
                        m[(j, i)] = v[p];
                        p += 1;
                    }
                }
            } else {
                for i in 0..l.rows {
                    for j in 0..l.cols {
                        m[(i, j)] = v[p];
                        p += 1;
                    }
                }
            }
            out.insert(l.name.clone(), m);
        }
        out
    }

    /// Gradient of `Σ tr(Wₖ Xₖ)` in flat coordinates.
    pub(super) fn objective_vector(&self, obj: &Objective) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for (name, w) in &obj.terms {
            let Some(l) = self.layouts.iter().find(|l| &l.name == name) else {
                continue;
            };
            let mut p = l.offset;
            if l.symmetric {
                for i in 0..l.rows {
                    for j in i..l.cols {
                        c[p] += if i == j { w[(i, i)] } else { w[(i, j)] + w[(j, i)] };
                        p += 1;
                    }
                }
            } else {
                // d/dX_ij tr(W X) = W_ji.
                for i in 0..l.rows {
                    for j in 0..l.cols {
                        c[p] += w[(j, i)];
                        p += 1;
                    }
                }
            }
        }
        c
    }

    /// Basis matrix of parameter `p` for the variable it belongs to, as seen
    /// by a term (transposed when the term transposes the variable).
    fn basis(&self, layout: &VarLayout, local: usize, transposed: bool) -> Mat {
        if layout.symmetric {
            let mut rem = local;
            let mut i = 0;
            while rem >= layout.cols - i {
                rem -= layout.cols - i;
                i += 1;
            }
            let j = i + rem;
            let mut b = Mat::zeros(layout.rows, layout.cols);
            b[(i, j)] = 1.0;
            b[(j, i)] = 1.0;
            b
        } else {
            let i = local / layout.cols;
            let j = local % layout.cols;
            let (r, c) = if transposed { (layout.cols, layout.rows) } else { (layout.rows, layout.cols) };
            let mut b = Mat::zeros(r, c);
            if transposed {
                b[(j, i)] = 1.0;
            } else {
                b[(i, j)] = 1.0;
            }
            b
        }
    }
}

struct BarBlock {
    label: String,
    size: usize,
    /// Oriented constant part (`S(v) = s0 + Σ v_p D_p ≻ 0`).
    s0: Mat,
    derivs: Vec<(usize, Mat)>,
}

pub(super) struct BarrierProblem {
    blocks: Vec<BarBlock>,
    dim: usize,
    ball2: f64,
}

impl BarrierProblem {
    /// Orients every block and differentiates it against the parameter
    /// space.  Asymmetric constants or derivative matrices are construction
    /// errors and rejected here, before any Newton step runs.
    pub(super) fn linearize(
        p: &LmiProblem,
        space: &ParamSpace,
        opts: &SolverOptions,
    ) -> Result<Self, LmiError> {
        let mut blocks = Vec::with_capacity(p.blocks.len());
        for b in &p.blocks {
            blocks.push(Self::linearize_block(b, space, opts)?);
        }
        Ok(BarrierProblem {
            blocks,
            dim: space.dim(),
            ball2: opts.ball_radius * opts.ball_radius,
        })
    }

    fn linearize_block(
        b: &AffineBlock,
        space: &ParamSpace,
        opts: &SolverOptions,
    ) -> Result<BarBlock, LmiError> {
        let n = b.size();
        let residual = b.constant.sym_residual();
        if residual > ASYM_TOL {
            return Err(LmiError::Asymmetric { label: b.label.clone(), residual });
        }
        let negate = !matches!(b.sense, Sense::PosSemi);
        let mut s0 = b.constant.symmetrize();
        if negate {
            s0 = s0.scale(-1.0);
        }
        if b.sense == Sense::StrictNeg {
            s0 = s0.sub(&Mat::identity(n).scale(opts.margin));
        }
        let mut derivs = Vec::new();
        for l in &space.layouts {
            for local in 0..(if l.symmetric { l.rows * (l.rows + 1) / 2 } else { l.rows * l.cols }) {
                let mut d = Mat::zeros(n, n);
                let mut touched = false;
                for t in &b.terms {
                    if t.var != l.name {
                        continue;
                    }
                    let basis = space.basis(l, local, t.transpose);
                    d = d.add(&t.left.mul(&basis).mul(&t.right).scale(t.scale));
                    touched = true;
                }
                if !touched || d.max_abs() == 0.0 {
                    continue;
                }
                let residual = d.sym_residual();
                if residual > ASYM_TOL {
                    return Err(LmiError::Asymmetric { label: b.label.clone(), residual });
                }
                let mut d = d.symmetrize();
                if negate {
                    d = d.scale(-1.0);
                }
                derivs.push((l.offset + local, d));
            }
        }
        Ok(BarBlock { label: b.label.clone(), size: n, s0, derivs })
    }

    fn assemble(&self, b: &BarBlock, v: &[f64]) -> Mat {
        let mut s = b.s0.clone();
        for (p, d) in &b.derivs {
            let vp = v[*p];
            if vp != 0.0 {
                s = s.add(&d.scale(vp));
            }
        }
        s
    }

    pub(super) fn strictly_inside(&self, v: &[f64]) -> bool {
        if dot(v, v) >= self.ball2 {
            return false;
        }
        self.blocks.iter().all(|b| cholesky(&self.assemble(b, v)).is_some())
    }

    /// Barrier value `Φ(v)`, or `None` outside the domain.
    fn phi(&self, v: &[f64]) -> Option<f64> {
        let r2 = self.ball2 - dot(v, v);
        if r2 <= 0.0 {
            return None;
        }
        let mut phi = -r2.ln();
        for b in &self.blocks {
            let l = cholesky(&self.assemble(b, v))?;
            phi -= chol_logdet(&l, b.size);
        }
        if phi.is_finite() {
            Some(phi)
        } else {
            None
        }
    }

    /// Gradient and Hessian of `cᵀv + μ Φ(v)` at an interior point.
    fn derivatives(&self, c: &[f64], mu: f64, v: &[f64]) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = self.dim_total();
        let mut g: Vec<f64> = c.to_vec();
        let mut h = vec![vec![0.0; n]; n];

        for b in &self.blocks {
            let l = cholesky(&self.assemble(b, v))?;
            let sinv = chol_inverse(&l, b.size);
            // W_p = S⁻¹ D_p; grad −μ tr(W_p), Hess μ tr(W_p W_q).
            let ws: Vec<(usize, Mat)> = b
                .derivs
                .iter()
                .map(|(p, d)| (*p, sinv.mul(d)))
                .collect();
            for (p, w) in &ws {
                g[*p] -= mu * w.trace();
            }
            for (a, (p, wp)) in ws.iter().enumerate() {
                for (q, wq) in ws.iter().skip(a) {
                    let mut t = 0.0;
                    for i in 0..b.size {
                        for j in 0..b.size {
                            t += wp[(i, j)] * wq[(j, i)];
                        }
                    }
                    h[*p][*q] += mu * t;
                    if p != q {
                        h[*q][*p] += mu * t;
                    }
                }
            }
        }

        let r2 = self.ball2 - dot(v, v);
        if r2 <= 0.0 {
            return None;
        }
        for p in 0..n {
            g[p] += mu * 2.0 * v[p] / r2;
            h[p][p] += mu * 2.0 / r2;
            for q in 0..n {
                h[p][q] += mu * 4.0 * v[p] * v[q] / (r2 * r2);
            }
        }
        Some((g, h))
    }

    fn dim_total(&self) -> usize {
        self.dim
    }

    fn objective_and_barrier(&self, c: &[f64], mu: f64, v: &[f64]) -> Option<f64> {
        self.phi(v).map(|phi| dot(c, v) + mu * phi)
    }

    /// Damped Newton iteration for `min cᵀv + μ Φ(v)` from an interior point.
    fn center_stage(&self, v: &mut Vec<f64>, c: &[f64], mu: f64, opts: &SolverOptions) {
        for _ in 0..opts.max_newton {
            let Some((g, h)) = self.derivatives(c, mu, v) else {
                return;
            };
            let Some(d) = solve_ridged(&h, &g) else {
                return;
            };
            let decrement = -dot(&g, &d);
            if !decrement.is_finite() || decrement <= 0.0 {
                return;
            }
            if 0.5 * decrement <= opts.newton_tol {
                return;
            }
            let f0 = match self.objective_and_barrier(c, mu, v) {
                Some(f) => f,
                None => return,
            };
            let slope = dot(&g, &d);
            let mut t = 1.0;
            let step = loop {
                let trial: Vec<f64> = v.iter().zip(&d).map(|(x, dx)| x + t * dx).collect();
                if let Some(f) = self.objective_and_barrier(c, mu, &trial) {
                    if f <= f0 + ARMIJO * t * slope {
                        break Some(trial);
                    }
                }
                t *= 0.5;
                if t < MIN_STEP {
                    break None;
                }
            };
            match step {
                Some(trial) => *v = trial,
                None => return,
            }
        }
    }

    /// Phase 1: minimize a uniform shift `s` with `S_b(v) + sI ≻ 0`.
    /// Returns the best point found and whether it is strictly feasible.
    pub(super) fn find_feasible(&self, opts: &SolverOptions) -> (Vec<f64>, bool) {
        let v0 = vec![0.0; self.dim];
        let worst = self
            .blocks
            .iter()
            .map(|b| min_eig(&self.assemble(b, &v0)))
            .fold(f64::INFINITY, f64::min);
        if worst > PHASE1_EXIT {
            return (v0, true);
        }

        let aug = self.augmented();
        let mut v = vec![0.0; self.dim + 1];
        v[self.dim] = -worst + 1.0;
        let mut c = vec![0.0; self.dim + 1];
        c[self.dim] = 1.0;

        let mut mu = opts.mu_init;
        loop {
            aug.center_stage(&mut v, &c, mu, opts);
            if v[self.dim] <= -PHASE1_EXIT {
                break;
            }
            if mu <= opts.mu_min {
                break;
            }
            mu = (mu / opts.mu_factor).max(opts.mu_min);
        }
        let s = v[self.dim];
        v.truncate(self.dim);
        (v, s < 0.0)
    }

    /// Pure centering on the real constraint set (no objective).  Leaves the
    /// point untouched when it is not strictly interior.
    pub(super) fn center(&self, v: &[f64], opts: &SolverOptions) -> Vec<f64> {
        let mut v = v.to_vec();
        if !self.strictly_inside(&v) {
            return v;
        }
        let c = vec![0.0; self.dim];
        self.center_stage(&mut v, &c, 1.0, opts);
        v
    }

    /// Path following for `min cᵀv` from a strictly interior start.
    pub(super) fn minimize(&self, c: &[f64], v0: &[f64], opts: &SolverOptions) -> Vec<f64> {
        let mut v = v0.to_vec();
        let mut mu = opts.mu_init;
        loop {
            self.center_stage(&mut v, c, mu, opts);
            if mu <= opts.mu_min {
                break;
            }
            mu = (mu / opts.mu_factor).max(opts.mu_min);
        }
        v
    }

    /// The phase-1 problem: every block gains the shift direction `+I`.
    fn augmented(&self) -> BarrierProblem {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let mut derivs: Vec<(usize, Mat)> =
                    b.derivs.iter().map(|(p, d)| (*p, d.clone())).collect();
                derivs.push((self.dim, Mat::identity(b.size)));
                BarBlock { label: b.label.clone(), size: b.size, s0: b.s0.clone(), derivs }
            })
            .collect();
        BarrierProblem { blocks, dim: self.dim + 1, ball2: self.ball2 }
    }
}

fn min_eig(m: &Mat) -> f64 {
    match crate::numkit::sym_eig(&m.symmetrize()) {
        Ok(e) => e.values[0],
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Dense Cholesky of a symmetric matrix; `None` if any pivot is non-positive
/// or non-finite.  Returns the lower factor row-major.
fn cholesky(m: &Mat) -> Option<Vec<f64>> {
    let n = m.rows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[(i, j)];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn chol_logdet(l: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        s += l[i * n + i].ln();
    }
    2.0 * s
}

/// Inverse from a Cholesky factor: `S⁻¹ = L⁻ᵀ L⁻¹`.
fn chol_inverse(l: &[f64], n: usize) -> Mat {
    // X = L⁻¹ by forward substitution on the identity.
    let mut x = vec![0.0; n * n];
    for col in 0..n {
        for i in col..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                sum -= l[i * n + k] * x[k * n + col];
            }
            x[i * n + col] = sum / l[i * n + i];
        }
    }
    let mut inv = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = 0.0;
            for k in i.max(j)..n {
                sum += x[k * n + i] * x[k * n + j];
            }
            inv[(i, j)] = sum;
            inv[(j, i)] = sum;
        }
    }
    inv
}

/// Solves `H d = -g` with an escalating diagonal ridge so a semidefinite
/// Hessian still yields a descent direction.
fn solve_ridged(h: &[Vec<f64>], g: &[f64]) -> Option<Vec<f64>> {
    let n = g.len();
    let max_diag = (0..n).map(|i| h[i][i].abs()).fold(0.0, f64::max).max(1.0);
    let mut tau = 0.0;
    for _ in 0..30 {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = 0.5 * (h[i][j] + h[j][i]);
            }
            m[(i, i)] += tau;
        }
        if let Some(l) = cholesky(&m) {
            // Forward then backward substitution for -g.
            let mut y = vec![0.0; n];
            for i in 0..n {
                let mut sum = -g[i];
                for k in 0..i {
                    sum -= l[i * n + k] * y[k];
                }
                y[i] = sum / l[i * n + i];
            }
            let mut d = vec![0.0; n];
            for i in (0..n).rev() {
                let mut sum = y[i];
                for k in (i + 1)..n {
                    sum -= l[k * n + i] * d[k];
                }
                d[i] = sum / l[i * n + i];
            }
            if d.iter().all(|x| x.is_finite()) {
                return Some(d);
            }
        }
        tau = if tau == 0.0 { max_diag * 1e-14 } else { tau * 100.0 };
    }
    None
}
