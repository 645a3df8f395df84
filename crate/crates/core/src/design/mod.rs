//! Sparse controller design: regression matrix, neighbour constraints, the l1 program and its
//! solution.

mod controller;
mod psi;

use std::time::Instant;

pub use controller::{
    controllers_from_str, controllers_to_string, read_controllers, sparsity_count, write_controllers, Controller,
};
pub use psi::{build_psi, independent_columns, neighbor_features, neighbor_sets, neighbor_sets_of, NeighborSets};

use crate::basis::BasisSet;
use crate::error::{check_dim, Error, Result};
use crate::estimate::PriorBounds;
use crate::kv::KvBlock;
use crate::lp::{solve_lp_with, LinearProgram, LpStatus, SolverOptions};
use crate::plant::{LpvDataset, Rows};

/// Everything the design program needs, for one input channel.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub psi: Rows,
    /// Columns of `psi` that carry program variables; the rest are fixed at zero.
    pub columns: Vec<usize>,
    pub u: Vec<f64>,
    /// Current feedback vectors `x_k`, `k < L`.
    pub states: Rows,
    pub neighbors: NeighborSets,
    pub delta: f64,
    pub lambda2_s: f64,
}

impl RegressionProblem {
    /// Builds the problem for a single-input dataset.
    pub fn new(dataset: &LpvDataset, basis: &BasisSet, delta: f64, lambda2_s: f64) -> Result<Self> {
        check_dim("design input channels", 1, dataset.n_u())?;
        let psi = build_psi(dataset, basis)?;
        Ok(RegressionProblem {
            columns: independent_columns(&psi),
            psi,
            u: dataset.u.column(0),
            states: dataset.x.head(dataset.len()),
            neighbors: neighbor_sets(dataset)?,
            delta,
            lambda2_s,
        })
    }

    pub fn n_coeffs(&self) -> usize {
        self.psi.width()
    }

    /// Full coefficient vector from the program variables.
    pub fn expand(&self, v: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.n_coeffs()];
        for (&c, &x) in self.columns.iter().zip(v) {
            b[c] = x;
        }
        b
    }
}

/// Encodes `min |b|_1` subject to the data-fit band and the pairwise neighbour constraints.
///
/// Variables are `(b, t)` over the kept columns, with `-t <= b <= t` and cost `sum t`.
/// Row order: the `2L` fit rows, then two rows per unordered neighbour pair, then the epigraph
/// rows. The epigraph rows form a dual feasible starting basis.
pub fn assemble_lp(problem: &RegressionProblem) -> Result<LinearProgram> {
    assemble_lp_with(problem, true)
}

/// [`assemble_lp`] with the neighbour rows optional. Each neighbour row follows from the two fit
/// rows of its pair by the triangle inequality (the budget is at least `2 delta`), so leaving
/// them out changes neither the feasible set nor the optimum.
pub fn assemble_lp_with(problem: &RegressionProblem, neighbor_rows: bool) -> Result<LinearProgram> {
    let n = problem.columns.len();
    let l = problem.psi.len();
    check_dim("regression targets", l, problem.u.len())?;
    check_dim("regression states", l, problem.states.len())?;
    if !(problem.delta >= 0.0) || !(problem.lambda2_s >= 0.0) {
        return Err(Error::invalid("delta and lambda2_s must be nonnegative"));
    }
    let mut cost = vec![0.0; 2 * n];
    cost[n..].iter_mut().for_each(|c| *c = 1.0);
    let mut lp = LinearProgram::new(cost)?;

    let mut atoms = Vec::with_capacity(l);
    let mut entries = Vec::with_capacity(n);
    for k in 0..l {
        entries.clear();
        let row = problem.psi.row(k);
        entries.extend(problem.columns.iter().enumerate().map(|(i, &c)| (i, row[c])));
        atoms.push(lp.add_atom(&entries)?);
    }
    let d = problem.delta;
    for k in 0..l {
        lp.add_combination(&[(atoms[k], 1.0)], d + problem.u[k])?;
        lp.add_combination(&[(atoms[k], -1.0)], d - problem.u[k])?;
    }
    let pairs: &[(u32, u32)] = if neighbor_rows { &problem.neighbors.pairs } else { &[] };
    for &(k, j) in pairs {
        let (k, j) = (k as usize, j as usize);
        let gap = problem.states.row(j).iter().zip(problem.states.row(k)).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let budget = problem.lambda2_s * gap + 2.0 * d;
        let du = problem.u[j] - problem.u[k];
        // |du + (Psi_k - Psi_j) b| <= budget
        lp.add_combination(&[(atoms[k], 1.0), (atoms[j], -1.0)], budget - du)?;
        lp.add_combination(&[(atoms[k], -1.0), (atoms[j], 1.0)], budget + du)?;
    }
    let first_epigraph = lp.n_constraints();
    for i in 0..n {
        lp.add_sparse_row(&[(i, 1.0), (n + i, -1.0)], 0.0)?;
        lp.add_sparse_row(&[(i, -1.0), (n + i, -1.0)], 0.0)?;
    }
    lp.set_initial_basis((first_epigraph..first_epigraph + 2 * n).collect());
    Ok(lp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    /// `lambda2_s = safety_margin / lambda_s`.
    pub safety_margin: f64,
    pub lambda2_s_override: Option<f64>,
    /// Include the pairwise neighbour rows (see [`assemble_lp_with`]).
    pub neighbor_rows: bool,
    pub sparsity_threshold: f64,
    pub solver: SolverOptions,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            safety_margin: 0.8,
            lambda2_s_override: None,
            neighbor_rows: true,
            sparsity_threshold: 1e-6,
            solver: SolverOptions {
                tolerance: 1e-7,
                ..SolverOptions::default()
            },
        }
    }
}

/// Summary of one design solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    pub n_x: usize,
    pub m: usize,
    pub n_coeffs: usize,
    pub length: usize,
    pub zeta: f64,
    pub n_pairs: usize,
    /// Coefficients left as program variables after removing zero and parallel columns.
    pub n_program_columns: usize,
    pub n_constraints: usize,
    pub delta: f64,
    pub lambda2_s: f64,
    pub lambda_s: f64,
    /// `lambda2_s * lambda_s`, below one when the small-gain condition is met.
    pub stability_product: f64,
    pub status: String,
    pub objective: f64,
    pub iterations: usize,
    pub max_violation: f64,
    pub n_sel: usize,
    /// RMS of `u - Psi b` on the design data.
    pub fit_rms: f64,
    pub fit_max: f64,
    pub solve_seconds: f64,
    pub priors: KvBlock,
}

impl DesignReport {
    pub fn stability_ok(&self) -> bool {
        self.stability_product < 1.0
    }

    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.push("n_x", self.n_x)
            .push("m", self.m)
            .push("n_coeffs", self.n_coeffs)
            .push("length", self.length)
            .push("zeta", self.zeta)
            .push("n_pairs", self.n_pairs)
            .push("n_program_columns", self.n_program_columns)
            .push("n_constraints", self.n_constraints)
            .push("delta", self.delta)
            .push("lambda2_s", self.lambda2_s)
            .push("lambda_s", self.lambda_s)
            .push("stability_product", self.stability_product)
            .push("stability_ok", self.stability_ok())
            .push("status", &self.status)
            .push("objective", self.objective)
            .push("iterations", self.iterations)
            .push("max_violation", self.max_violation)
            .push("n_sel", self.n_sel)
            .push("fit_rms", self.fit_rms)
            .push("fit_max", self.fit_max)
            .push("solve_seconds", self.solve_seconds)
            .extend_prefixed("prior.", &self.priors);
        kv
    }

    pub fn from_kv(kv: &KvBlock) -> Result<Self> {
        Ok(DesignReport {
            n_x: kv.parse_value("n_x")?,
            m: kv.parse_value("m")?,
            n_coeffs: kv.parse_value("n_coeffs")?,
            length: kv.parse_value("length")?,
            zeta: kv.parse_value("zeta")?,
            n_pairs: kv.parse_value("n_pairs")?,
            n_program_columns: kv.parse_value("n_program_columns")?,
            n_constraints: kv.parse_value("n_constraints")?,
            delta: kv.parse_value("delta")?,
            lambda2_s: kv.parse_value("lambda2_s")?,
            lambda_s: kv.parse_value("lambda_s")?,
            stability_product: kv.parse_value("stability_product")?,
            status: kv.require("status")?.to_string(),
            objective: kv.parse_value("objective")?,
            iterations: kv.parse_value("iterations")?,
            max_violation: kv.parse_value("max_violation")?,
            n_sel: kv.parse_value("n_sel")?,
            fit_rms: kv.parse_value("fit_rms")?,
            fit_max: kv.parse_value("fit_max")?,
            solve_seconds: kv.parse_value("solve_seconds")?,
            priors: kv.strip_prefix("prior."),
        })
    }
}

/// Designs a single-output controller from a single-input dataset.
pub fn design_controller(
    dataset: &LpvDataset,
    basis: &BasisSet,
    priors: &PriorBounds,
    safety_margin: f64,
) -> Result<(Controller, DesignReport)> {
    let opts = DesignOptions {
        safety_margin,
        ..DesignOptions::default()
    };
    design_controller_with(dataset, basis, priors, &opts)
}

pub fn design_controller_with(
    dataset: &LpvDataset,
    basis: &BasisSet,
    priors: &PriorBounds,
    opts: &DesignOptions,
) -> Result<(Controller, DesignReport)> {
    if !(opts.safety_margin > 0.0 && opts.safety_margin < 1.0) {
        return Err(Error::invalid(format!("safety margin must lie in (0, 1), got {}", opts.safety_margin)));
    }
    priors.validate()?;
    let lambda2_s = opts.lambda2_s_override.unwrap_or(opts.safety_margin / priors.lambda_s);
    let problem = RegressionProblem::new(dataset, basis, priors.delta, lambda2_s)?;
    let lp = assemble_lp_with(&problem, opts.neighbor_rows)?;

    let started = Instant::now();
    let sol = solve_lp_with(&lp, &opts.solver)?;
    let solve_seconds = started.elapsed().as_secs_f64();
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::Infeasible {
                delta: priors.delta,
                lambda2_s,
            })
        }
        other => {
            return Err(Error::Solver(format!(
                "design LP ended with status {other} after {} iterations",
                sol.iterations
            )))
        }
    }
    if sol.max_violation > 1e-6 {
        return Err(Error::Solver(format!(
            "design LP solution violates constraints by {:.3e}",
            sol.max_violation
        )));
    }

    let n = problem.n_coeffs();
    let b = problem.expand(&sol.v[..problem.columns.len()]);
    let controller = Controller::unflatten(basis.clone(), dataset.n_x(), &b)?;
    let residuals: Vec<f64> = (0..problem.psi.len())
        .map(|k| problem.u[k] - dot(problem.psi.row(k), &b))
        .collect();
    let report = DesignReport {
        n_x: dataset.n_x(),
        m: basis.len(),
        n_coeffs: n,
        length: dataset.len(),
        zeta: problem.neighbors.zeta,
        n_pairs: problem.neighbors.pairs.len(),
        n_program_columns: problem.columns.len(),
        n_constraints: lp.n_constraints(),
        delta: priors.delta,
        lambda2_s,
        lambda_s: priors.lambda_s,
        stability_product: lambda2_s * priors.lambda_s,
        status: sol.status.to_string(),
        objective: b.iter().map(|v| v.abs()).sum(),
        iterations: sol.iterations,
        max_violation: sol.max_violation,
        n_sel: sparsity_count(&controller, opts.sparsity_threshold),
        fit_rms: crate::closed_loop::rms(&residuals)?,
        fit_max: residuals.iter().fold(0.0, |m, r| m.max(r.abs())),
        solve_seconds,
        priors: priors.to_kv(),
    };
    Ok((controller, report))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::polynomial_basis;
    use crate::plant::SchedulingMap;

    fn scalar_data(states: &[f64], inputs: &[f64]) -> LpvDataset {
        let x = Rows::from_vecs(1, &states.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let u = Rows::from_vecs(1, &inputs.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        LpvDataset::from_states(0.1, x, u, SchedulingMap::Identity).unwrap()
    }

    /// Noiseless data from x+ = 0.5 x + 2 u.
    pub(crate) fn lti_data(inputs: &[f64]) -> LpvDataset {
        let mut xs = vec![0.0];
        for &u in inputs {
            let x = *xs.last().unwrap();
            xs.push(0.5 * x + 2.0 * u);
        }
        scalar_data(&xs, inputs)
    }

    fn priors(delta: f64) -> PriorBounds {
        PriorBounds {
            delta,
            gamma: 1.0,
            lambda_s: 1.0,
            lambda_b: 2.5,
            provenance: KvBlock::new(),
        }
    }

    #[test]
    fn row_counts() {
        let ds = scalar_data(&[1.0, 2.0, 3.0], &[0.1, 0.2]);
        let basis = polynomial_basis(1, 0).unwrap();
        let problem = RegressionProblem::new(&ds, &basis, 0.1, 0.5).unwrap();
        assert_eq!(problem.neighbors.pairs.len(), 1);
        let lp = assemble_lp(&problem).unwrap();
        assert_eq!(lp.n_vars(), 4);
        assert_eq!(lp.n_constraints(), 4 + 2 + 4);

        // Geometric states make the two columns parallel; only one survives.
        let ds = scalar_data(&[1.0, 2.0, 4.0], &[0.1, 0.2]);
        let problem = RegressionProblem::new(&ds, &basis, 0.1, 0.5).unwrap();
        assert_eq!(problem.columns, vec![0]);
        assert_eq!(assemble_lp(&problem).unwrap().n_vars(), 2);
    }

    #[test]
    fn large_delta_gives_zero_controller() {
        let ds = lti_data(&[0.3, -0.2, 0.5, 0.1, -0.4]);
        let basis = polynomial_basis(1, 2).unwrap();
        let (k, report) = design_controller(&ds, &basis, &priors(10.0), 0.8).unwrap();
        assert!(k.flatten().iter().all(|&v| v == 0.0));
        assert_eq!(report.objective, 0.0);
        assert_eq!(report.n_sel, 0);
    }

    #[test]
    fn recovers_lti_inverse() {
        let inputs: Vec<f64> = (0..40).map(|k| ((k * 7919) % 23) as f64 / 11.0 - 1.0).collect();
        let ds = lti_data(&inputs);
        let basis = polynomial_basis(1, 0).unwrap();
        let (k, report) = design_controller(&ds, &basis, &priors(1e-6), 0.8).unwrap();
        assert!((k.coefficient(0, 0, 0) - 0.5).abs() < 1e-3, "{:?}", k.flatten());
        assert!((k.coefficient(1, 0, 0) - 0.25).abs() < 1e-3, "{:?}", k.flatten());
        assert!(report.fit_max <= 1e-6 + 1e-9);
        // The design reproduces every recorded input within delta.
        for t in 0..ds.len() {
            let u = k.evaluate(ds.p.row(t), ds.x.row(t + 1), ds.x.row(t));
            assert!((u - ds.u.row(t)[0]).abs() <= 1e-6 + 1e-9);
        }
    }

    #[test]
    fn zero_delta_on_noisy_data_is_infeasible() {
        let inputs: Vec<f64> = (0..30).map(|k| ((k * 31) % 17) as f64 / 8.0 - 1.0).collect();
        let mut ds = lti_data(&inputs);
        for k in 0..ds.x.len() {
            ds.x.row_mut(k)[0] += 0.01 * (((k * 13) % 7) as f64 - 3.0);
        }
        for k in 0..ds.len() {
            ds.p.row_mut(k)[0] = ds.x.row(k)[0];
        }
        let basis = polynomial_basis(1, 0).unwrap();
        match design_controller(&ds, &basis, &priors(0.0), 0.8) {
            Err(Error::Infeasible { delta, .. }) => assert_eq!(delta, 0.0),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn neighbor_rows_do_not_change_the_optimum() {
        let inputs: Vec<f64> = (0..40).map(|k| ((k * 37) % 19) as f64 / 9.0 - 1.0).collect();
        let mut ds = lti_data(&inputs);
        for k in 0..ds.x.len() {
            ds.x.row_mut(k)[0] += 0.02 * (((k * 11) % 5) as f64 - 2.0);
        }
        for k in 0..ds.len() {
            ds.p.row_mut(k)[0] = ds.x.row(k)[0];
        }
        let basis = polynomial_basis(1, 2).unwrap();
        let mut opts = DesignOptions::default();
        let (_, full) = design_controller_with(&ds, &basis, &priors(0.1), &opts).unwrap();
        opts.neighbor_rows = false;
        let (_, lean) = design_controller_with(&ds, &basis, &priors(0.1), &opts).unwrap();
        assert!(full.n_constraints > lean.n_constraints);
        assert!((full.objective - lean.objective).abs() <= 1e-9 * (1.0 + full.objective));
    }

    #[test]
    fn report_round_trip() {
        let ds = lti_data(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        let (_, report) = design_controller(&ds, &polynomial_basis(1, 1).unwrap(), &priors(0.05), 0.8).unwrap();
        let back = DesignReport::from_kv(&KvBlock::parse(&report.to_kv().to_string()).unwrap()).unwrap();
        assert_eq!(back, report);
        assert!(report.stability_ok());
    }

    #[test]
    fn rejects_bad_margin_and_multi_input() {
        let ds = lti_data(&[0.3, -0.2, 0.5]);
        let basis = polynomial_basis(1, 0).unwrap();
        assert!(design_controller(&ds, &basis, &priors(0.1), 1.0).is_err());
        let mut two = ds.clone();
        two.u = Rows::from_vecs(2, &[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(design_controller(&two, &basis, &priors(0.1), 0.8).is_err());
    }
}
