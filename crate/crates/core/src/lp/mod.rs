//! Linear programs `min c'v  s.t.  a_i'v <= b_i` over free variables, and a dual simplex solver.
//!
//! Constraint rows are stored as short linear combinations of shared sparse "atom" rows. Many
//! constraints of the design problem are differences of two data rows, so storing them this way
//! keeps memory and the per-iteration work proportional to the number of distinct data rows.

mod simplex;

use std::fmt::{self, Write as _};

use smallvec::SmallVec;

use crate::error::{check_dim, Error, Result};

pub use simplex::{solve_lp, solve_lp_with, SolverOptions};

/// Index of an atom row inside a [`LinearProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AtomId(pub u32);

#[derive(Debug, Clone, PartialEq)]
struct Constraint {
    terms: SmallVec<[(u32, f64); 2]>,
    bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    n_vars: usize,
    cost: Vec<f64>,
    atom_ptr: Vec<usize>,
    atom_idx: Vec<u32>,
    atom_val: Vec<f64>,
    rows: Vec<Constraint>,
    initial_basis: Option<Vec<usize>>,
}

impl LinearProgram {
    pub fn new(cost: Vec<f64>) -> Result<Self> {
        if cost.is_empty() {
            return Err(Error::invalid("LP needs at least one variable"));
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("LP cost must be finite"));
        }
        Ok(LinearProgram {
            n_vars: cost.len(),
            cost,
            atom_ptr: vec![0],
            atom_idx: Vec::new(),
            atom_val: Vec::new(),
            rows: Vec::new(),
            initial_basis: None,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.atom_ptr.len() - 1
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    /// Registers a sparse row given as `(variable, coefficient)` pairs.
    pub fn add_atom(&mut self, entries: &[(usize, f64)]) -> Result<AtomId> {
        for &(j, v) in entries {
            if j >= self.n_vars {
                return Err(Error::invalid(format!("variable index {j} out of range")));
            }
            if !v.is_finite() {
                return Err(Error::invalid("LP coefficients must be finite"));
            }
            if v != 0.0 {
                self.atom_idx.push(j as u32);
                self.atom_val.push(v);
            }
        }
        self.atom_ptr.push(self.atom_idx.len());
        Ok(AtomId((self.atom_ptr.len() - 2) as u32))
    }

    /// Adds `sum_k coef_k * atom_k . v <= bound`.
    pub fn add_combination(&mut self, terms: &[(AtomId, f64)], bound: f64) -> Result<usize> {
        if !bound.is_finite() || terms.iter().any(|(_, c)| !c.is_finite()) {
            return Err(Error::invalid("LP constraint must be finite"));
        }
        if terms.iter().any(|(a, _)| a.0 as usize >= self.n_atoms()) {
            return Err(Error::invalid("unknown atom"));
        }
        self.rows.push(Constraint {
            terms: terms.iter().map(|(a, c)| (a.0, *c)).collect(),
            bound,
        });
        Ok(self.rows.len() - 1)
    }

    pub fn add_sparse_row(&mut self, entries: &[(usize, f64)], bound: f64) -> Result<usize> {
        let a = self.add_atom(entries)?;
        self.add_combination(&[(a, 1.0)], bound)
    }

    pub fn add_dense_row(&mut self, row: &[f64], bound: f64) -> Result<usize> {
        check_dim("LP row", self.n_vars, row.len())?;
        let entries: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
        self.add_sparse_row(&entries, bound)
    }

    /// `lo <= v_j <= hi`; infinite sides are skipped.
    pub fn add_variable_bounds(&mut self, j: usize, lo: f64, hi: f64) -> Result<()> {
        if hi.is_finite() {
            self.add_sparse_row(&[(j, 1.0)], hi)?;
        }
        if lo.is_finite() {
            self.add_sparse_row(&[(j, -1.0)], -lo)?;
        }
        Ok(())
    }

    /// Suggests `n_vars` constraint indices as the starting basis. It is used only if its rows
    /// are independent and the corresponding multipliers are nonnegative.
    pub fn set_initial_basis(&mut self, basis: Vec<usize>) {
        self.initial_basis = Some(basis);
    }

    pub fn initial_basis(&self) -> Option<&[usize]> {
        self.initial_basis.as_deref()
    }

    pub(crate) fn atom(&self, a: usize) -> (&[u32], &[f64]) {
        let r = self.atom_ptr[a]..self.atom_ptr[a + 1];
        (&self.atom_idx[r.clone()], &self.atom_val[r])
    }

    pub(crate) fn atom_products(&self, v: &[f64], out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            let (idx, val) = self.atom(a);
            *o = idx.iter().zip(val).map(|(&j, &c)| c * v[j as usize]).sum();
        }
    }

    pub(crate) fn row_from_atoms(&self, i: usize, atom_vals: &[f64]) -> f64 {
        self.rows[i].terms.iter().map(|&(a, c)| c * atom_vals[a as usize]).sum()
    }

    pub fn bound(&self, i: usize) -> f64 {
        self.rows[i].bound
    }

    /// Adds `scale * row_i` into `out`.
    pub(crate) fn scatter_row(&self, i: usize, scale: f64, out: &mut [f64]) {
        for &(a, c) in &self.rows[i].terms {
            let (idx, val) = self.atom(a as usize);
            for (&j, &v) in idx.iter().zip(val) {
                out[j as usize] += scale * c * v;
            }
        }
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vars];
        self.scatter_row(i, 1.0, &mut out);
        out
    }

    /// `a_i . v` for every constraint.
    pub fn row_values(&self, v: &[f64]) -> Vec<f64> {
        let mut atoms = vec![0.0; self.n_atoms()];
        self.atom_products(v, &mut atoms);
        (0..self.rows.len()).map(|i| self.row_from_atoms(i, &atoms)).collect()
    }

    pub fn max_violation(&self, v: &[f64]) -> f64 {
        self.row_values(v)
            .iter()
            .enumerate()
            .map(|(i, av)| av - self.rows[i].bound)
            .fold(0.0, f64::max)
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        self.cost.iter().zip(v).map(|(c, x)| c * x).sum()
    }

    /// CPLEX LP text format, for cross-checking with external solvers.
    pub fn to_lp_format(&self) -> String {
        let mut s = String::from("\\ generated LP\nMinimize\n obj:");
        write_linear(&mut s, self.cost.iter().copied().enumerate());
        s.push_str("\nSubject To\n");
        for i in 0..self.rows.len() {
            let row = self.dense_row(i);
            let _ = write!(s, " c{}:", i + 1);
            write_linear(&mut s, row.iter().copied().enumerate());
            let _ = writeln!(s, " <= {}", self.rows[i].bound);
        }
        s.push_str("Bounds\n");
        for j in 0..self.n_vars {
            let _ = writeln!(s, " v{} free", j + 1);
        }
        s.push_str("End\n");
        s
    }
}

fn write_linear(s: &mut String, terms: impl Iterator<Item = (usize, f64)>) {
    let mut any = false;
    for (j, c) in terms.filter(|(_, c)| *c != 0.0) {
        let sign = if c < 0.0 { '-' } else { '+' };
        let _ = write!(s, " {sign} {} v{}", c.abs(), j + 1);
        any = true;
    }
    if !any {
        s.push_str(" 0 v1");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl fmt::Display for LpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
            LpStatus::IterationLimit => "iteration-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; the last iterate when not optimal.
    pub v: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub iterations: usize,
    /// Nonnegative multipliers per constraint (zero off the final basis).
    pub duals: Vec<f64>,
    /// For infeasible problems, `y >= 0` with `y'A = 0` and `y'b < 0`.
    pub farkas: Option<Vec<f64>>,
}
