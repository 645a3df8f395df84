//! Set-membership estimates of the prior bounds used by the design: the noise bound `delta`,
//! the Lipschitz constant `gamma`, the reference-to-state gain `lambda_s` and the input gain
//! bound `lambda_b`.

use crate::basis::BasisSet;
use crate::design::{build_psi, dot, independent_columns};
use crate::error::{Error, Result};
use crate::kv::KvBlock;
use crate::lp::{solve_lp_with, LinearProgram, LpStatus, SolverOptions};
use crate::plant::{LpvDataset, Rows};

#[derive(Debug, Clone, PartialEq)]
pub struct PriorBounds {
    pub delta: f64,
    pub gamma: f64,
    pub lambda_s: f64,
    pub lambda_b: f64,
    /// How each number was obtained (grids, rules, overrides).
    pub provenance: KvBlock,
}

impl PriorBounds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.delta, self.gamma, self.lambda_s, self.lambda_b];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!("prior bounds must be finite and >= 0: {all:?}")));
        }
        if self.lambda_s <= 0.0 {
            return Err(Error::invalid("lambda_s must be positive"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.push("delta", self.delta)
            .push("gamma", self.gamma)
            .push("lambda_s", self.lambda_s)
            .push("lambda_b", self.lambda_b)
            .extend_prefixed("source.", &self.provenance);
        kv
    }

    pub fn from_kv(kv: &KvBlock) -> Result<Self> {
        Ok(PriorBounds {
            delta: kv.parse_value("delta")?,
            gamma: kv.parse_value("gamma")?,
            lambda_s: kv.parse_value("lambda_s")?,
            lambda_b: kv.parse_value("lambda_b")?,
            provenance: kv.strip_prefix("source."),
        })
    }
}

/// Regression points `w_k = (p_k, x_{k+1}, x_k)`.
fn regression_points(dataset: &LpvDataset) -> Vec<Vec<f64>> {
    (0..dataset.len())
        .map(|k| {
            let mut w = dataset.p.row(k).to_vec();
            w.extend_from_slice(dataset.x.row(k + 1));
            w.extend_from_slice(dataset.x.row(k));
            w
        })
        .collect()
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Smallest noise bound consistent with a `gamma`-Lipschitz map from `w_k` to `u_k`
/// (first input channel), for every `gamma` in `gamma_grid`.
pub fn validation_curve(dataset: &LpvDataset, gamma_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if dataset.len() < 2 {
        return Err(Error::Estimation("validation needs at least two samples".into()));
    }
    if gamma_grid.is_empty() || gamma_grid.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::invalid("gamma grid must be nonempty, finite and nonnegative"));
    }
    if gamma_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("gamma grid must be increasing"));
    }
    let w = regression_points(dataset);
    let u = dataset.u.column(0);
    let mut worst = vec![0.0_f64; gamma_grid.len()];
    for k in 0..w.len() {
        for l in k + 1..w.len() {
            let du = (u[k] - u[l]).abs();
            if du == 0.0 {
                continue;
            }
            let dw = inf_dist(&w[k], &w[l]);
            for (slot, g) in worst.iter_mut().zip(gamma_grid) {
                let v = du - g * dw;
                if v > *slot {
                    *slot = v;
                }
            }
        }
    }
    Ok(gamma_grid.iter().zip(worst).map(|(&g, v)| (g, 0.5 * v)).collect())
}

/// Picks the knee of a validation curve: the smallest `gamma` whose `delta_min` is within 5% of
/// the value at the largest `gamma`. Returns `(delta, gamma)` with `delta = inflation * delta_min`.
pub fn select_priors(curve: &[(f64, f64)], inflation: f64) -> Result<(f64, f64)> {
    let Some(&(_, asymptote)) = curve.last() else {
        return Err(Error::invalid("empty validation curve"));
    };
    if !(inflation >= 1.0) {
        return Err(Error::invalid("inflation must be >= 1"));
    }
    let tol = 1.05 * asymptote + 1e-15;
    let &(gamma, d) = curve.iter().find(|&&(_, d)| d <= tol).expect("last point always qualifies");
    Ok((inflation * d, gamma))
}

/// Largest ratio `max_W |x_k| / max_W |x_{k+1}|` over consecutive windows of `window` samples,
/// times `inflation`. A conservative stand-in for the reference-to-state gain, with the next
/// state playing the reference.
pub fn estimate_lambda_s(dataset: &LpvDataset, window: usize, inflation: f64) -> Result<f64> {
    if dataset.len() < 2 || window == 0 {
        return Err(Error::Estimation("lambda_s needs L >= 2 and a nonzero window".into()));
    }
    let norm = |k: usize| dataset.x.row(k).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut best: Option<f64> = None;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + window).min(dataset.len());
        let num = (start..end).map(norm).fold(0.0, f64::max);
        let den = (start..end).map(|k| norm(k + 1)).fold(0.0, f64::max);
        if den > 0.0 {
            let r = num / den;
            best = Some(best.map_or(r, |b: f64| b.max(r)));
        }
        start = end;
    }
    best.map(|b| inflation * b)
        .ok_or_else(|| Error::Estimation("all states are zero; the gain is undefined".into()))
}

/// Largest difference quotient `|x_{k+1} - x_{l+1}| / |u_k - u_l|` over pairs whose
/// `(p, x)` lie within `radius` of each other, times `inflation`.
pub fn estimate_lambda_b(dataset: &LpvDataset, radius: f64, inflation: f64) -> Result<f64> {
    let keys: Vec<Vec<f64>> = (0..dataset.len())
        .map(|k| {
            let mut v = dataset.p.row(k).to_vec();
            v.extend_from_slice(dataset.x.row(k));
            v
        })
        .collect();
    let mut best: Option<f64> = None;
    for k in 0..keys.len() {
        for l in k + 1..keys.len() {
            if inf_dist(&keys[k], &keys[l]) > radius {
                continue;
            }
            let du = inf_dist(dataset.u.row(k), dataset.u.row(l));
            if du > 0.0 {
                let q = inf_dist(dataset.x.row(k + 1), dataset.x.row(l + 1)) / du;
                best = Some(best.map_or(q, |b: f64| b.max(q)));
            }
        }
    }
    best.map(|b| inflation * b).ok_or_else(|| {
        Error::Estimation(format!(
            "no sample pairs within radius {radius} with distinct inputs; try a larger radius"
        ))
    })
}

/// Smallest `delta` for which the fit band `|u - Psi b|_inf <= delta` is feasible: the
/// Chebyshev (minimax) fit error of the first input channel over the basis.
///
/// Solved as `min tau + eps |b|_1` so that the epigraph rows of `b` and `tau >= 0` give a dual
/// feasible start; the returned value is the exact max residual of the solution, which exceeds
/// the true floor by at most `eps |b|_1`.
pub fn fit_floor(dataset: &LpvDataset, basis: &BasisSet) -> Result<f64> {
    const EPS: f64 = 1e-7;
    let full = build_psi(dataset, basis)?;
    let columns = independent_columns(&full);
    let mut psi = Rows::with_width(columns.len());
    let mut row = Vec::with_capacity(columns.len());
    for k in 0..full.len() {
        row.clear();
        row.extend(columns.iter().map(|&c| full.row(k)[c]));
        psi.push(&row);
    }
    let u = dataset.u.column(0);
    let n = psi.width();
    let tau = 2 * n;
    let mut cost = vec![0.0; 2 * n + 1];
    cost[n..2 * n].iter_mut().for_each(|c| *c = EPS);
    cost[tau] = 1.0;
    let mut lp = LinearProgram::new(cost)?;
    let mut entries = Vec::with_capacity(n);
    for k in 0..psi.len() {
        entries.clear();
        entries.extend(psi.row(k).iter().copied().enumerate());
        let a = lp.add_atom(&entries)?;
        let t = lp.add_atom(&[(tau, 1.0)])?;
        lp.add_combination(&[(a, 1.0), (t, -1.0)], u[k])?;
        lp.add_combination(&[(a, -1.0), (t, -1.0)], -u[k])?;
    }
    let first = lp.n_constraints();
    for i in 0..n {
        lp.add_sparse_row(&[(i, 1.0), (n + i, -1.0)], 0.0)?;
        lp.add_sparse_row(&[(i, -1.0), (n + i, -1.0)], 0.0)?;
    }
    lp.add_sparse_row(&[(tau, -1.0)], 0.0)?;
    lp.set_initial_basis((first..first + 2 * n + 1).collect());
    let sol = solve_lp_with(&lp, &SolverOptions { tolerance: 1e-9, ..SolverOptions::default() })?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver(format!("fit-floor LP ended with status {}", sol.status)));
    }
    let b = &sol.v[..n];
    Ok((0..psi.len()).map(|k| (u[k] - dot(psi.row(k), b)).abs()).fold(0.0, f64::max))
}

/// How the noise bound is chosen from the estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaRule {
    /// The validation-curve knee value.
    Validation,
    /// `inflation` times the fit floor.
    FitFloor { inflation: f64 },
    /// The larger of the two above.
    Larger { floor_inflation: f64 },
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub gamma_grid: Vec<f64>,
    pub delta_inflation: f64,
    pub delta_rule: DeltaRule,
    pub lambda_window: usize,
    pub lambda_inflation: f64,
    pub lambda_b_radius: f64,
    pub lambda_s_override: Option<f64>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            gamma_grid: (0..=60).map(|i| 10f64.powf(-3.0 + 0.1 * i as f64)).collect(),
            delta_inflation: 1.25,
            delta_rule: DeltaRule::Validation,
            lambda_window: 50,
            lambda_inflation: 1.25,
            lambda_b_radius: 0.1,
            lambda_s_override: None,
        }
    }
}

/// Runs every estimator on a single-input dataset and combines them per `opts`.
pub fn estimate_priors(dataset: &LpvDataset, basis: &BasisSet, opts: &EstimateOptions) -> Result<PriorBounds> {
    let mut prov = KvBlock::new();
    let curve = validation_curve(dataset, &opts.gamma_grid)?;
    let (delta_val, gamma) = select_priors(&curve, opts.delta_inflation)?;
    prov.push("gamma_grid", format!("{} points in [{}, {}]", curve.len(), curve[0].0, curve[curve.len() - 1].0))
        .push("knee_rule", "smallest gamma within 5% of the largest-gamma value")
        .push("delta_inflation", opts.delta_inflation)
        .push("delta_validation", delta_val);

    let needs_floor = matches!(opts.delta_rule, DeltaRule::FitFloor { .. } | DeltaRule::Larger { .. });
    let delta = if needs_floor {
        let floor = fit_floor(dataset, basis)?;
        prov.push("delta_floor", floor);
        match opts.delta_rule {
            DeltaRule::FitFloor { inflation } => {
                prov.push("delta_rule", format!("fit-floor x {inflation}"));
                inflation * floor
            }
            DeltaRule::Larger { floor_inflation } => {
                prov.push("delta_rule", format!("max(validation, fit-floor x {floor_inflation})"));
                delta_val.max(floor_inflation * floor)
            }
            _ => unreachable!(),
        }
    } else if let DeltaRule::Fixed(d) = opts.delta_rule {
        prov.push("delta_rule", "fixed");
        d
    } else {
        prov.push("delta_rule", "validation");
        delta_val
    };

    let lambda_s = match opts.lambda_s_override {
        Some(v) => {
            prov.push("lambda_s_method", "fixed");
            v
        }
        None => {
            prov.push(
                "lambda_s_method",
                format!("windowed gain ratio (heuristic), window {}, x {}", opts.lambda_window, opts.lambda_inflation),
            );
            estimate_lambda_s(dataset, opts.lambda_window, opts.lambda_inflation)?
        }
    };
    let lambda_b = estimate_lambda_b(dataset, opts.lambda_b_radius, opts.lambda_inflation)?;
    prov.push("lambda_b_radius", opts.lambda_b_radius);

    let priors = PriorBounds {
        delta,
        gamma,
        lambda_s,
        lambda_b,
        provenance: prov,
    };
    priors.validate()?;
    Ok(priors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::polynomial_basis;
    use crate::plant::{Rows, SchedulingMap};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(xs: &[f64], us: &[f64]) -> LpvDataset {
        let x = Rows::from_vecs(1, &xs.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let u = Rows::from_vecs(1, &us.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        LpvDataset::from_states(0.1, x, u, SchedulingMap::Identity).unwrap()
    }

    /// Inputs u_k = f(w_k) with f(w) = |w|_inf-Lipschitz with constant one: u = x_{k+1}.
    fn lipschitz_one(noise: f64, seed: u64, n: usize) -> LpvDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let us: Vec<f64> = (0..n).map(|k| xs[k + 1] + noise * rng.random_range(-1.0..1.0)).collect();
        dataset(&xs, &us)
    }

    #[test]
    fn noiseless_lipschitz_data() {
        let ds = lipschitz_one(0.0, 1, 200);
        let curve = validation_curve(&ds, &[0.5, 1.0, 2.0, 4.0]).unwrap();
        assert!(curve[0].1 > 0.0);
        for &(_, d) in &curve[1..] {
            assert_eq!(d, 0.0);
        }
        assert_eq!(select_priors(&curve, 1.2).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn constant_inputs() {
        let ds = dataset(&[0.1, 0.4, -0.3, 0.9], &[2.0, 2.0, 2.0]);
        let curve = validation_curve(&ds, &[0.0, 1.0]).unwrap();
        assert!(curve.iter().all(|&(_, d)| d == 0.0));
        assert_eq!(select_priors(&curve, 1.5).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn recovers_noise_amplitude() {
        let ds = lipschitz_one(0.1, 7, 1500);
        let grid = [0.25, 0.5, 1.0, 1.05, 1.1, 2.0];
        let curve = validation_curve(&ds, &grid).unwrap();
        let just_above = curve[4].1;
        assert!((0.05..=0.11).contains(&just_above), "{just_above}");
        let (delta, _) = select_priors(&curve, 1.2).unwrap();
        assert!((0.06..=0.13).contains(&delta), "{delta}");
    }

    #[test]
    fn too_short_or_bad_grid() {
        let ds = dataset(&[0.0, 1.0, 2.0], &[1.0, 2.0]);
        assert!(validation_curve(&ds, &[]).is_err());
        assert!(validation_curve(&ds, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn lambda_s_self_ratio() {
        // A periodic bounded sequence: x and its one-step shift have the same peaks per window.
        let xs: Vec<f64> = (0..=400).map(|k| (k as f64 * 0.3).sin() + 2.0).collect();
        let ds = dataset(&xs, &vec![0.0; 400]);
        let l = estimate_lambda_s(&ds, 50, 1.25).unwrap();
        assert!((l - 1.25).abs() < 0.05, "{l}");
    }

    #[test]
    fn lambda_s_geometric_fixture() {
        // x+ = 0.5 x + u with constant u = 1 from rest: x_k = 2 (1 - 0.5^k).
        let xs: Vec<f64> = (0..=120).map(|k| 2.0 * (1.0 - 0.5f64.powi(k))).collect();
        let ds = dataset(&xs, &vec![1.0; 120]);
        // Increasing sequence: each window ratio is x_end / x_{end+1}.
        let expect = [50usize, 100, 120]
            .iter()
            .map(|&e| (1.0 - 0.5f64.powi(e as i32 - 1)) / (1.0 - 0.5f64.powi(e as i32)))
            .fold(0.0, f64::max);
        let l = estimate_lambda_s(&ds, 50, 1.25).unwrap();
        assert!((l - 1.25 * expect).abs() < 1e-12);
    }

    #[test]
    fn lambda_s_single_window_and_zero_states() {
        let xs = [1.0, 2.0, 3.0, 0.5];
        let ds = dataset(&xs, &[0.0; 3]);
        assert_eq!(estimate_lambda_s(&ds, 50, 1.0).unwrap(), 3.0 / 3.0);
        let zero = dataset(&[0.0; 5], &[0.0; 4]);
        assert!(estimate_lambda_s(&zero, 50, 1.25).is_err());
    }

    #[test]
    fn lambda_b_exact_quotient_for_lti() {
        // Two samples at the same x with different inputs, x+ = 0.7 x + 3 u.
        let x = Rows::from_vecs(1, &[vec![0.4], vec![0.7 * 0.4 + 3.0 * 0.2], vec![0.4], vec![0.7 * 0.4 - 3.0 * 0.5]]).unwrap();
        let u = Rows::from_vecs(1, &[vec![0.2], vec![0.9], vec![-0.5]]).unwrap();
        let ds = LpvDataset::from_states(0.1, x, u, SchedulingMap::Identity).unwrap();
        let l = estimate_lambda_b(&ds, 1e-9, 1.25).unwrap();
        assert!((l - 1.25 * 3.0).abs() < 1e-9, "{l}");
    }

    #[test]
    fn lambda_b_zero_gain_and_no_pairs() {
        let ds = dataset(&[0.3, 0.3, 0.3, 0.3], &[1.0, -1.0, 0.5]);
        assert_eq!(estimate_lambda_b(&ds, 0.1, 1.25).unwrap(), 0.0);
        let spread = dataset(&[0.0, 10.0, 20.0, 30.0], &[1.0, -1.0, 0.5]);
        assert!(estimate_lambda_b(&spread, 0.1, 1.25).is_err());
    }

    #[test]
    fn fit_floor_matches_known_minimax() {
        // With a constant basis and n_x = 1, Psi_k b = b1 x_{k+1} - b2 x_k. Exact data give zero.
        let xs: Vec<f64> = (0..=30).map(|k| (k as f64 * 0.7).sin()).collect();
        let us: Vec<f64> = (0..30).map(|k| 0.5 * xs[k + 1] - 0.25 * xs[k]).collect();
        let basis = polynomial_basis(1, 0).unwrap();
        assert!(fit_floor(&dataset(&xs, &us), &basis).unwrap() < 1e-9);
        // Constant offset c on top cannot be fitted by a homogeneous law once x spans both signs.
        let zero_x = dataset(&[0.0; 4], &[0.3, -0.1, 0.2]);
        assert!((fit_floor(&zero_x, &basis).unwrap() - 0.3).abs() < 1e-9);
    }

    #[test]
    fn priors_round_trip() {
        let ds = lipschitz_one(0.05, 3, 300);
        let basis = polynomial_basis(1, 1).unwrap();
        let opts = EstimateOptions {
            delta_rule: DeltaRule::Larger { floor_inflation: 1.1 },
            lambda_b_radius: 0.5,
            ..EstimateOptions::default()
        };
        let p = estimate_priors(&ds, &basis, &opts).unwrap();
        let back = PriorBounds::from_kv(&KvBlock::parse(&p.to_kv().to_string()).unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(p.delta >= 1.1 * p.provenance.parse_value::<f64>("delta_floor").unwrap() - 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn curve_is_nonincreasing_and_consistent(
            xs in prop::collection::vec(-2.0f64..2.0, 6..25),
            noise in prop::collection::vec(-1.0f64..1.0, 25),
            infl in 1.0f64..2.0,
        ) {
            let us: Vec<f64> = (0..xs.len() - 1).map(|k| xs[k] * xs[k + 1] + noise[k]).collect();
            let ds = dataset(&xs, &us);
            let grid: Vec<f64> = (0..12).map(|i| 0.05 * 2f64.powi(i)).collect();
            let curve = validation_curve(&ds, &grid).unwrap();
            prop_assert!(curve.iter().all(|&(_, d)| d >= 0.0));
            prop_assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1));
            let (delta, gamma) = select_priors(&curve, infl).unwrap();
            let w = regression_points(&ds);
            for k in 0..w.len() {
                for l in 0..w.len() {
                    prop_assert!(us[k] - us[l] <= gamma * inf_dist(&w[k], &w[l]) + 2.0 * delta + 1e-12);
                }
            }
        }
    }
}
