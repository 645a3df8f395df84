//! Dual simplex on the row-basis form.
//!
//! A basis is a set `W` of `n` constraint rows with nonsingular matrix `B = A_W`. The vertex is
//! `x = B^-1 b_W` and the multipliers are `lambda_W = -B^-T c`. Starting from a dual feasible
//! basis (`lambda >= 0`), each pivot brings in the row picked by dual steepest edge and drops the
//! basis row picked by a Harris ratio test. The basis inverse is kept densely and updated with
//! rank-one corrections, with a fresh LU inverse every `refactor_every` pivots.
//!
//! Variables are rescaled internally by powers of two so every column has unit-order entries.
//! Multipliers that rounding would push below zero are held at zero by shifting the cost; once
//! the shifted problem is solved the true cost is restored and a few primal simplex pivots
//! finish the job.

use nalgebra::DMatrix;

use super::{LinearProgram, LpSolution, LpStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Absolute feasibility tolerance promised for optimal solutions.
    pub tolerance: f64,
    pub max_iters: usize,
    pub refactor_every: usize,
    /// Half-width of the artificial box used when no dual feasible start is supplied.
    pub artificial_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-6,
            max_iters: 200_000,
            refactor_every: 100,
            artificial_bound: 1e7,
        }
    }
}

pub fn solve_lp(lp: &LinearProgram, tolerance: f64, max_iters: usize) -> Result<LpSolution> {
    solve_lp_with(
        lp,
        &SolverOptions {
            tolerance,
            max_iters,
            ..SolverOptions::default()
        },
    )
}

pub fn solve_lp_with(lp: &LinearProgram, opts: &SolverOptions) -> Result<LpSolution> {
    if !(opts.tolerance > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let scale = column_scales(lp);
    if let Some(hint) = lp.initial_basis() {
        let rows = RowSet::new(lp, Vec::new(), 0.0, scale.clone());
        if let Some(mut solver) = Solver::start(rows, hint.to_vec(), opts) {
            return solver.run();
        }
    }
    // Artificial box rows sign_j * w_j <= M, signs chosen so that lambda_j = |c_j s_j|.
    let signs: Vec<f64> = lp.cost().iter().map(|&c| if c > 0.0 { -1.0 } else { 1.0 }).collect();
    let n = lp.n_vars();
    let m = lp.n_constraints();
    let rows = RowSet::new(lp, signs, opts.artificial_bound, scale);
    let basis: Vec<usize> = (m..m + n).collect();
    let mut solver = Solver::start(rows, basis, opts).ok_or_else(|| Error::Solver("artificial basis is singular".into()))?;
    solver.run()
}

/// Power-of-two factors `s_j` with `max_i |a_ij| s_j` in `[0.5, 2)`; 1 for empty columns.
fn column_scales(lp: &LinearProgram) -> Vec<f64> {
    let mut cmax = vec![0.0_f64; lp.n_vars()];
    let mut row = vec![0.0; lp.n_vars()];
    for i in 0..lp.n_constraints() {
        row.iter_mut().for_each(|v| *v = 0.0);
        lp.scatter_row(i, 1.0, &mut row);
        for (c, v) in cmax.iter_mut().zip(&row) {
            *c = c.max(v.abs());
        }
    }
    cmax.iter()
        .map(|&c| if c > 0.0 && c.is_finite() { (-c.log2().round()).exp2() } else { 1.0 })
        .collect()
}

/// The LP's rows in scaled variables `w = v / s`, plus optional artificial box rows on `w`
/// appended after them.
struct RowSet<'a> {
    lp: &'a LinearProgram,
    m: usize,
    art_sign: Vec<f64>,
    art_bound: f64,
    scale: Vec<f64>,
    cost: Vec<f64>,
    atoms: Vec<f64>,
    unscaled: Vec<f64>,
}

impl<'a> RowSet<'a> {
    fn new(lp: &'a LinearProgram, art_sign: Vec<f64>, art_bound: f64, scale: Vec<f64>) -> Self {
        let cost = lp.cost().iter().zip(&scale).map(|(c, s)| c * s).collect();
        RowSet {
            lp,
            m: lp.n_constraints(),
            art_sign,
            art_bound,
            unscaled: vec![0.0; scale.len()],
            scale,
            cost,
            atoms: vec![0.0; lp.n_atoms()],
        }
    }

    fn unscale(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.scale).map(|(w, s)| w * s).collect()
    }

    fn len(&self) -> usize {
        self.m + self.art_sign.len()
    }

    fn is_artificial(&self, i: usize) -> bool {
        i >= self.m
    }

    fn bound(&self, i: usize) -> f64 {
        if i < self.m {
            self.lp.bound(i)
        } else {
            self.art_bound
        }
    }

    /// Overwrites `out` with scaled row `i`.
    fn row_into(&self, i: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if i < self.m {
            self.lp.scatter_row(i, 1.0, out);
            for (o, s) in out.iter_mut().zip(&self.scale) {
                *o *= s;
            }
        } else {
            out[i - self.m] = self.art_sign[i - self.m];
        }
    }

    /// Scaled `a_i . w` for every row.
    fn values(&mut self, v: &[f64], out: &mut [f64]) {
        for ((u, w), s) in self.unscaled.iter_mut().zip(v).zip(&self.scale) {
            *u = w * s;
        }
        self.lp.atom_products(&self.unscaled, &mut self.atoms);
        for (i, o) in out[..self.m].iter_mut().enumerate() {
            *o = self.lp.row_from_atoms(i, &self.atoms);
        }
        for (j, o) in out[self.m..].iter_mut().enumerate() {
            *o = self.art_sign[j] * v[j];
        }
    }
}

struct Solver<'a> {
    rows: RowSet<'a>,
    opts: SolverOptions,
    n: usize,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    /// Row-major `n x n` inverse of the basis matrix.
    binv: Vec<f64>,
    x: Vec<f64>,
    lam: Vec<f64>,
    slack: Vec<f64>,
    primal_tol: Vec<f64>,
    /// Dual steepest-edge weights `1 + |a_i B^-1|^2`, kept by recurrence between refactors.
    weights: Vec<f64>,
    /// Working cost: the scaled cost plus the shifts that keep the multipliers nonnegative.
    cost: Vec<f64>,
    shifted: bool,
    iterations: usize,
    since_refactor: usize,
    /// Basis at the last successful refactor, restored if a later one turns out singular.
    last_good: Vec<usize>,
    /// Multiplier on the pivot tolerance, raised after each recovery.
    pivot_guard: f64,
    alpha: Vec<f64>,
    row: Vec<f64>,
    d: Vec<f64>,
    tau: Vec<f64>,
    ad: Vec<f64>,
    at: Vec<f64>,
}

const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

impl<'a> Solver<'a> {
    /// Returns `None` if the basis is malformed, singular or not dual feasible.
    fn start(rows: RowSet<'a>, basis: Vec<usize>, opts: &SolverOptions) -> Option<Self> {
        let n = rows.lp.n_vars();
        let total = rows.len();
        if basis.len() != n || basis.iter().any(|&i| i >= total) {
            return None;
        }
        let mut in_basis = vec![false; total];
        for &i in &basis {
            if in_basis[i] {
                return None;
            }
            in_basis[i] = true;
        }
        let mut row = vec![0.0; n];
        let primal_tol = (0..total)
            .map(|i| {
                rows.row_into(i, &mut row);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                (0.01 * opts.tolerance).min(1e-9 * norm.max(1.0))
            })
            .collect();
        let cost = rows.cost.clone();
        let mut s = Solver {
            rows,
            opts: opts.clone(),
            n,
            basis,
            in_basis,
            binv: vec![0.0; n * n],
            x: vec![0.0; n],
            lam: vec![0.0; n],
            slack: vec![0.0; total],
            primal_tol,
            weights: vec![1.0; total],
            cost,
            shifted: false,
            iterations: 0,
            since_refactor: 0,
            last_good: Vec::new(),
            pivot_guard: 1.0,
            alpha: vec![0.0; n],
            row,
            d: vec![0.0; n],
            tau: vec![0.0; n],
            ad: vec![0.0; total],
            at: vec![0.0; total],
        };
        if !s.refactor() {
            return None;
        }
        if s.lam.iter().any(|&l| l < -1e-7) {
            return None;
        }
        s.shift_negative_duals();
        s.init_weights();
        Some(s)
    }

    /// Exact weights for the starting basis, using the sparsity of its inverse.
    fn init_weights(&mut self) {
        let n = self.n;
        let sparse: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|j| {
                let row = &self.binv[j * n..(j + 1) * n];
                row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, &v)| (k, v)).collect()
            })
            .collect();
        let mut beta = vec![0.0; n];
        for i in 0..self.rows.len() {
            if self.in_basis[i] {
                continue;
            }
            self.rows.row_into(i, &mut self.row);
            beta.iter_mut().for_each(|v| *v = 0.0);
            for (j, &aj) in self.row.iter().enumerate() {
                if aj != 0.0 {
                    for &(k, v) in &sparse[j] {
                        beta[k] += aj * v;
                    }
                }
            }
            self.weights[i] = 1.0 + beta.iter().map(|v| v * v).sum::<f64>();
        }
    }

    /// Sets multiplier `k` to zero by moving the cost along basis row `k`.
    fn shift_dual(&mut self, k: usize) {
        let v = self.lam[k];
        self.rows.row_into(self.basis[k], &mut self.row);
        for (c, a) in self.cost.iter_mut().zip(&self.row) {
            *c += v * a;
        }
        self.lam[k] = 0.0;
        self.shifted = true;
    }

    fn shift_negative_duals(&mut self) {
        for k in 0..self.n {
            if self.lam[k] < 0.0 {
                self.shift_dual(k);
            }
        }
    }

    /// Recomputes the inverse, vertex, multipliers and slacks from the basis.
    fn refactor(&mut self) -> bool {
        let n = self.n;
        let mut b = DMatrix::<f64>::zeros(n, n);
        for (k, &i) in self.basis.iter().enumerate() {
            self.rows.row_into(i, &mut self.row);
            for j in 0..n {
                b[(k, j)] = self.row[j];
            }
        }
        let Some(inv) = b.lu().try_inverse() else {
            return false;
        };
        if inv.iter().any(|v| !v.is_finite()) {
            return false;
        }
        self.last_good.clone_from(&self.basis);
        for i in 0..n {
            for j in 0..n {
                self.binv[i * n + j] = inv[(i, j)];
            }
        }
        let bw: Vec<f64> = self.basis.iter().map(|&i| self.rows.bound(i)).collect();
        for i in 0..n {
            self.x[i] = (0..n).map(|k| self.binv[i * n + k] * bw[k]).sum();
        }
        for k in 0..n {
            self.lam[k] = -(0..n).map(|i| self.binv[i * n + k] * self.cost[i]).sum::<f64>();
        }
        let mut values = vec![0.0; self.rows.len()];
        self.rows.values(&self.x, &mut values);
        for (i, s) in self.slack.iter_mut().enumerate() {
            *s = self.rows.bound(i) - values[i];
        }
        self.since_refactor = 0;
        true
    }

    /// Refactors, falling back to the last good basis with a stricter pivot tolerance.
    fn refactor_or_recover(&mut self) -> Result<()> {
        if self.refactor() {
            return Ok(());
        }
        if self.pivot_guard < 1e4 && !self.last_good.is_empty() {
            self.pivot_guard *= 100.0;
            for &i in &self.basis {
                self.in_basis[i] = false;
            }
            self.basis.clone_from(&self.last_good);
            for &i in &self.basis {
                self.in_basis[i] = true;
            }
            if self.refactor() {
                return Ok(());
            }
        }
        Err(Error::Solver(format!("basis became singular after {} pivots", self.iterations)))
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in self.slack.iter().enumerate() {
            if self.in_basis[i] || s >= -self.primal_tol[i] {
                continue;
            }
            if bland {
                return Some(i);
            }
            let score = s * s / self.weights[i];
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        best.map(|(i, _)| i)
    }

    /// `alpha = a_r B^-1`, indexed by basis position.
    fn compute_alpha(&mut self, r: usize) {
        let n = self.n;
        self.rows.row_into(r, &mut self.row);
        self.alpha.iter_mut().for_each(|v| *v = 0.0);
        for (i, &ai) in self.row.iter().enumerate() {
            if ai != 0.0 {
                let row = &self.binv[i * n..(i + 1) * n];
                for (al, &b) in self.alpha.iter_mut().zip(row) {
                    *al += ai * b;
                }
            }
        }
    }

    /// Harris two-pass ratio test over basis positions with `alpha_k > 0`.
    fn leaving(&self, bland: bool) -> Option<usize> {
        let alpha = &self.alpha;
        let amax = alpha.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        let tol = self.pivot_guard * PIVOT_TOL * amax.max(1.0);
        let mut bound = f64::INFINITY;
        for (k, &a) in alpha.iter().enumerate() {
            if a > tol {
                bound = bound.min((self.lam[k] + DUAL_TOL) / a);
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let mut pick: Option<usize> = None;
        for (k, &a) in alpha.iter().enumerate() {
            if a > tol && self.lam[k] / a <= bound {
                pick = match pick {
                    None => Some(k),
                    Some(p) if bland && self.basis[k] < self.basis[p] => Some(k),
                    Some(p) if !bland && a > alpha[p] => Some(k),
                    keep => keep,
                };
            }
        }
        pick
    }

    /// Replaces basis position `q` by row `r`, with `alpha` already computed for `r`. With
    /// `shift`, multipliers that would turn negative are shifted to zero. Returns the dual step.
    fn pivot(&mut self, r: usize, q: usize, shift: bool) -> f64 {
        let n = self.n;
        let total = self.rows.len();
        self.iterations += 1;
        self.since_refactor += 1;

        let aq = self.alpha[q];
        let mu = self.lam[q] / aq;
        let mu = if shift { mu.max(0.0) } else { mu };
        for (l, &a) in self.lam.iter_mut().zip(&self.alpha) {
            *l -= mu * a;
        }
        self.lam[q] = mu;

        let theta = -self.slack[r] / aq;
        for i in 0..n {
            self.d[i] = -self.binv[i * n + q];
            self.x[i] += theta * self.d[i];
            self.tau[i] = self.binv[i * n..(i + 1) * n].iter().zip(&self.alpha).map(|(b, a)| b * a).sum();
        }
        self.rows.values(&self.d, &mut self.ad);
        self.rows.values(&self.tau, &mut self.at);
        for (s, &v) in self.slack.iter_mut().zip(&self.ad) {
            *s -= theta * v;
        }
        let wr = 1.0 + self.alpha.iter().map(|a| a * a).sum::<f64>();
        for i in 0..total {
            if !self.in_basis[i] && i != r {
                let rho = -self.ad[i] / aq;
                let w = self.weights[i] - 2.0 * rho * self.at[i] + rho * rho * wr;
                self.weights[i] = w.max(1.0 + rho * rho);
            }
        }
        self.weights[self.basis[q]] = (wr / (aq * aq)).max(1.0 + 1.0 / (aq * aq));

        for i in 0..n {
            let f = self.binv[i * n + q] / aq;
            if f != 0.0 {
                let row = &mut self.binv[i * n..(i + 1) * n];
                for (b, &a) in row.iter_mut().zip(&self.alpha) {
                    *b -= f * a;
                }
                row[q] = f;
            }
        }

        self.in_basis[self.basis[q]] = false;
        self.in_basis[r] = true;
        self.basis[q] = r;
        self.slack[r] = 0.0;
        if shift {
            for k in 0..n {
                if self.lam[k] < 0.0 {
                    self.shift_dual(k);
                }
            }
        }
        mu
    }

    fn run(&mut self) -> Result<LpSolution> {
        let mut degenerate = 0usize;
        loop {
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor_or_recover()?;
                self.shift_negative_duals();
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let Some(r) = self.entering(bland) else {
                if self.since_refactor > 0 {
                    self.refactor_or_recover()?;
                    self.shift_negative_duals();
                    continue;
                }
                if self.shifted {
                    return self.remove_shifts();
                }
                return Ok(self.finish_optimal());
            };
            if self.iterations >= self.opts.max_iters {
                return Ok(self.finish(LpStatus::IterationLimit, None));
            }
            self.compute_alpha(r);
            let Some(q) = self.leaving(bland) else {
                if self.since_refactor > 0 {
                    self.refactor_or_recover()?;
                    self.shift_negative_duals();
                    continue;
                }
                let alpha = self.alpha.clone();
                return Ok(self.finish_infeasible(r, &alpha));
            };
            let mu = self.pivot(r, q, true);
            if mu <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
        }
    }

    /// Restores the true cost at a primal feasible vertex and runs primal simplex to optimality.
    fn remove_shifts(&mut self) -> Result<LpSolution> {
        self.cost.clone_from(&self.rows.cost);
        self.shifted = false;
        self.refactor_or_recover()?;
        let n = self.n;
        let total = self.rows.len();
        let mut degenerate = 0usize;
        loop {
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor_or_recover()?;
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let mut leave: Option<usize> = None;
            for k in 0..n {
                if self.lam[k] < -DUAL_TOL {
                    let better = match leave {
                        None => true,
                        Some(p) if bland => self.basis[k] < self.basis[p],
                        Some(p) => self.lam[k] < self.lam[p],
                    };
                    if better {
                        leave = Some(k);
                    }
                }
            }
            let Some(k) = leave else {
                return Ok(self.finish_optimal());
            };
            if self.iterations >= self.opts.max_iters {
                return Ok(self.finish(LpStatus::IterationLimit, None));
            }
            // Moving off row k along d = -B^-1 e_k lowers the objective at rate lambda_k.
            for i in 0..n {
                self.d[i] = -self.binv[i * n + k];
            }
            self.rows.values(&self.d, &mut self.ad);
            let dmax = self.ad.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
            let tol = self.pivot_guard * PIVOT_TOL * dmax.max(1.0);
            let mut bound = f64::INFINITY;
            for i in 0..total {
                if !self.in_basis[i] && self.ad[i] > tol {
                    bound = bound.min((self.slack[i].max(0.0) + self.primal_tol[i]) / self.ad[i]);
                }
            }
            if !bound.is_finite() {
                return Ok(self.finish(LpStatus::Unbounded, None));
            }
            let mut enter: Option<usize> = None;
            for i in 0..total {
                if !self.in_basis[i] && self.ad[i] > tol && self.slack[i].max(0.0) / self.ad[i] <= bound {
                    enter = match enter {
                        None => Some(i),
                        Some(p) if bland && i < p => Some(i),
                        Some(p) if !bland && self.ad[i] > self.ad[p] => Some(i),
                        keep => keep,
                    };
                }
            }
            let r = enter.expect("a finite ratio bound has a candidate");
            self.slack[r] = self.slack[r].max(0.0);
            if self.slack[r] <= 1e-12 * self.ad[r] {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.compute_alpha(r);
            self.pivot(r, k, false);
        }
    }

    fn finish_optimal(&self) -> LpSolution {
        let unbounded = self
            .basis
            .iter()
            .zip(&self.lam)
            .any(|(&i, &l)| self.rows.is_artificial(i) && l > DUAL_TOL);
        if unbounded {
            self.finish(LpStatus::Unbounded, None)
        } else {
            self.finish(LpStatus::Optimal, None)
        }
    }

    fn finish_infeasible(&self, r: usize, alpha: &[f64]) -> LpSolution {
        let m = self.rows.m;
        let touches_artificial = self
            .basis
            .iter()
            .zip(alpha)
            .any(|(&i, &a)| self.rows.is_artificial(i) && a.abs() > PIVOT_TOL);
        let farkas = (!touches_artificial && r < m).then(|| {
            let mut y = vec![0.0; m];
            y[r] = 1.0;
            for (&i, &a) in self.basis.iter().zip(alpha) {
                if i < m {
                    y[i] = (-a).max(0.0);
                }
            }
            y
        });
        self.finish(LpStatus::Infeasible, farkas)
    }

    fn finish(&self, status: LpStatus, farkas: Option<Vec<f64>>) -> LpSolution {
        let lp = self.rows.lp;
        let mut duals = vec![0.0; lp.n_constraints()];
        for (&i, &l) in self.basis.iter().zip(&self.lam) {
            if i < duals.len() {
                duals[i] = l.max(0.0);
            }
        }
        let v = self.rows.unscale(&self.x);
        LpSolution {
            status,
            objective: lp.objective(&v),
            max_violation: lp.max_violation(&v),
            v,
            iterations: self.iterations,
            duals,
            farkas,
        }
    }
}
