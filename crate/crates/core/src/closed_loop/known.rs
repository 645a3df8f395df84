use nalgebra::{DMatrix, DVector};

use super::ClosedLoopRun;
use crate::design::Controller;
use crate::error::{check_dim, Error, Result};
use crate::plant::{SampledPlant, SchedulingMap};

/// Discrete LPV system `x+ = A(p) x + B(p) u + H(p) e` with maps affine in `p`:
/// `A(p) = A_0 + sum_i p_i A_i`, likewise for `B` and `H`. The scheduling parameter is
/// `scheduling(x)` evaluated on the true state.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownLpvSystem {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    h: Vec<DMatrix<f64>>,
    pub scheduling: SchedulingMap,
    pub p_box: Vec<(f64, f64)>,
    pub x_box: Vec<(f64, f64)>,
    pub e_box: Vec<(f64, f64)>,
}

impl KnownLpvSystem {
    /// Each of `a`, `b`, `h` holds `n_p + 1` matrices: the constant term then one per parameter.
    pub fn new(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        h: Vec<DMatrix<f64>>,
        scheduling: SchedulingMap,
        p_box: Vec<(f64, f64)>,
        x_box: Vec<(f64, f64)>,
        e_box: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let n_x = a.first().map_or(0, |m| m.nrows());
        if n_x == 0 || b.is_empty() || h.is_empty() {
            return Err(Error::invalid("known LPV system needs nonempty A, B and H"));
        }
        let n_p = scheduling.dim(n_x);
        scheduling.validate(n_x)?;
        for terms in [&a, &b, &h] {
            check_dim("affine terms", n_p + 1, terms.len())?;
        }
        let (n_u, n_e) = (b[0].ncols(), h[0].ncols());
        for m in &a {
            check_dim("A shape", n_x * n_x, m.nrows() * m.ncols())?;
            check_dim("A rows", n_x, m.nrows())?;
        }
        for m in &b {
            check_dim("B rows", n_x, m.nrows())?;
            check_dim("B columns", n_u, m.ncols())?;
        }
        for m in &h {
            check_dim("H rows", n_x, m.nrows())?;
            check_dim("H columns", n_e, m.ncols())?;
        }
        check_dim("P box", n_p, p_box.len())?;
        check_dim("X box", n_x, x_box.len())?;
        check_dim("E box", n_e, e_box.len())?;
        let boxes_ok = p_box.iter().chain(&x_box).chain(&e_box).all(|&(lo, hi)| lo.is_finite() && hi.is_finite() && lo <= hi);
        if !boxes_ok {
            return Err(Error::invalid("domain boxes must be finite with lo <= hi"));
        }
        Ok(KnownLpvSystem { a, b, h, scheduling, p_box, x_box, e_box })
    }

    pub fn n_x(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn n_p(&self) -> usize {
        self.p_box.len()
    }

    pub fn n_u(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn n_e(&self) -> usize {
        self.h[0].ncols()
    }

    fn affine(terms: &[DMatrix<f64>], p: &[f64]) -> DMatrix<f64> {
        let mut m = terms[0].clone();
        for (t, &pi) in terms[1..].iter().zip(p) {
            m += t * pi;
        }
        m
    }

    pub fn a_at(&self, p: &[f64]) -> DMatrix<f64> {
        Self::affine(&self.a, p)
    }

    pub fn b_at(&self, p: &[f64]) -> DMatrix<f64> {
        Self::affine(&self.b, p)
    }

    pub fn h_at(&self, p: &[f64]) -> DMatrix<f64> {
        Self::affine(&self.h, p)
    }

    /// One step with the parameter given explicitly.
    pub fn step_with(&self, p: &[f64], x: &[f64], u: &[f64], e: &[f64]) -> Vec<f64> {
        let next = self.a_at(p) * DVector::from_column_slice(x)
            + self.b_at(p) * DVector::from_column_slice(u)
            + self.h_at(p) * DVector::from_column_slice(e);
        next.as_slice().to_vec()
    }

    /// `max_p |B(p)|_inf` over the corners of the P box, an exact bound since `B` is affine.
    pub fn input_gain_bound(&self) -> f64 {
        corners(&self.p_box)
            .iter()
            .map(|p| {
                let b = self.b_at(p);
                (0..b.nrows()).map(|i| b.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

impl SampledPlant for KnownLpvSystem {
    fn state_dim(&self) -> usize {
        self.n_x()
    }

    fn input_dim(&self) -> usize {
        self.n_u()
    }

    fn disturbance_dim(&self) -> usize {
        self.n_e()
    }

    fn advance(&self, x: &[f64], u: &[f64], e: &[f64], _t: f64, _ts: f64) -> Result<Vec<f64>> {
        check_dim("known system state", self.n_x(), x.len())?;
        check_dim("known system input", self.n_u(), u.len())?;
        check_dim("known system disturbance", self.n_e(), e.len())?;
        Ok(self.step_with(&self.scheduling.apply(x), x, u, e))
    }
}

fn corners(bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(bounds.len())];
    for &(lo, hi) in bounds {
        out = out
            .into_iter()
            .flat_map(|c| {
                let mut a = c.clone();
                a.push(lo);
                let mut b = c;
                b.push(hi);
                [a, b]
            })
            .collect();
    }
    out
}

/// Stacked inputs `u_j = K1_j(p) r - K2_j(p) x` for one controller per input channel.
fn control(ks: &[Controller], p: &[f64], r: &[f64], x: &[f64]) -> Vec<f64> {
    ks.iter().map(|k| k.evaluate(p, r, x)).collect()
}

fn check_controllers(sys: &KnownLpvSystem, ks: &[Controller]) -> Result<()> {
    check_dim("controllers per input", sys.n_u(), ks.len())?;
    for k in ks {
        check_dim("controller state dimension", sys.n_x(), k.n_x())?;
        check_dim("controller scheduling dimension", sys.n_p(), k.basis().n_p())?;
    }
    Ok(())
}

/// `|r - (A(p) - B(p) K2(p)) x - B(p) K1(p) r - H(p) e|_inf`.
pub fn inversion_error(sys: &KnownLpvSystem, ks: &[Controller], p: &[f64], r: &[f64], x: &[f64], e: &[f64]) -> Result<f64> {
    check_controllers(sys, ks)?;
    check_dim("inversion error p", sys.n_p(), p.len())?;
    check_dim("inversion error r", sys.n_x(), r.len())?;
    check_dim("inversion error e", sys.n_e(), e.len())?;
    let next = sys.step_with(p, x, &control(ks, p, r, x), e);
    Ok(r.iter().zip(&next).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// Points of a uniform grid with `density` points per dimension over `bounds`, visited in
/// lexicographic order. Degenerate dimensions contribute one point.
fn for_each_grid_point(bounds: &[(f64, f64)], density: usize, mut f: impl FnMut(&[f64]) -> Result<()>) -> Result<()> {
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            if lo == hi || density == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..density).map(|i| lo + (hi - lo) * i as f64 / (density - 1) as f64).collect()
            }
        })
        .collect();
    let mut idx = vec![0usize; axes.len()];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    loop {
        f(&point)?;
        let mut d = axes.len();
        loop {
            if d == 0 {
                return Ok(());
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                point[d] = axes[d][idx[d]];
                break;
            }
            idx[d] = 0;
            point[d] = axes[d][0];
        }
    }
}

const MAX_GRID_POINTS: f64 = 5e7;

fn check_grid(dims: usize, density: usize) -> Result<()> {
    if density == 0 {
        return Err(Error::invalid("grid density must be positive"));
    }
    if (density as f64).powi(dims as i32) > MAX_GRID_POINTS {
        return Err(Error::invalid(format!("grid of {density}^{dims} points is too large")));
    }
    Ok(())
}

/// Largest inversion error over a uniform grid of `P x X x X x E` (r and x both range over X).
/// A lower bound on the supremum; density 21 is the default used in reports.
pub fn global_inversion_error(sys: &KnownLpvSystem, ks: &[Controller], density: usize) -> Result<f64> {
    check_controllers(sys, ks)?;
    let (n_p, n_x) = (sys.n_p(), sys.n_x());
    let mut bounds = sys.p_box.clone();
    bounds.extend(&sys.x_box);
    bounds.extend(&sys.x_box);
    bounds.extend(&sys.e_box);
    check_grid(bounds.len(), density)?;
    let mut worst = 0.0_f64;
    for_each_grid_point(&bounds, density, |w| {
        let (p, rest) = w.split_at(n_p);
        let (r, rest) = rest.split_at(n_x);
        let (x, e) = rest.split_at(n_x);
        let next = sys.step_with(p, x, &control(ks, p, r, x), e);
        worst = r.iter().zip(&next).fold(worst, |m, (a, b)| m.max((a - b).abs()));
        Ok(())
    })?;
    Ok(worst)
}

/// `max_p |K2a(p) - K2b(p)|_1` over a uniform grid of the box.
pub fn lambda2_grid(ka: &Controller, kb: &Controller, p_box: &[(f64, f64)], density: usize) -> Result<f64> {
    check_dim("lambda2 state dimension", ka.n_x(), kb.n_x())?;
    check_dim("lambda2 scheduling dimension", ka.basis().n_p(), kb.basis().n_p())?;
    check_dim("lambda2 box", ka.basis().n_p(), p_box.len())?;
    check_grid(p_box.len(), density)?;
    let mut worst = 0.0_f64;
    for_each_grid_point(p_box, density, |p| {
        let (_, a) = ka.gains(p);
        let (_, b) = kb.gains(p);
        worst = worst.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum());
        Ok(())
    })?;
    Ok(worst)
}

/// Per-step check of the tracking bound
/// `TE_{t+1} <= IE(K_oracle, p_t, r_{t+1}, x_t, e_t) + lambda_b |Delta(p_t) (r_{t+1}, -x_t)|_inf`,
/// where `Delta` is the gap between the run's controller and the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingBoundReport {
    /// `bound - TE` per step, starting at `t = 1`.
    pub margins: Vec<f64>,
    pub min_margin: f64,
}

impl TrackingBoundReport {
    pub fn holds(&self, tolerance: f64) -> bool {
        self.min_margin >= -tolerance
    }
}

/// Requires a run on `sys` with noise-free measurements; `lambda_b` must bound `|B(p)|_inf`.
pub fn verify_tracking_bound(
    sys: &KnownLpvSystem,
    oracle: &[Controller],
    used: &[Controller],
    run: &ClosedLoopRun,
    lambda_b: f64,
) -> Result<TrackingBoundReport> {
    check_controllers(sys, oracle)?;
    check_controllers(sys, used)?;
    if run.measured != run.feedback.head(run.measured.len()) {
        return Err(Error::invalid("tracking bound check needs a run without measurement noise"));
    }
    let steps = run.inputs.len();
    let mut margins = Vec::with_capacity(steps);
    for t in 0..steps {
        let (p, x, r) = (run.scheduling.row(t), run.feedback.row(t), run.reference.row(t + 1));
        let e = run.disturbance.row(t);
        let ie = inversion_error(sys, oracle, p, r, x, e)?;
        let gap = oracle
            .iter()
            .zip(used)
            .map(|(ko, ku)| (ku.evaluate(p, r, x) - ko.evaluate(p, r, x)).abs())
            .fold(0.0, f64::max);
        margins.push(ie + lambda_b * gap - run.te[t + 1]);
    }
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TrackingBoundReport { margins, min_margin })
}
