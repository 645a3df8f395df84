use crate::basis::BasisSet;
use crate::error::{check_dim, Error, Result};
use crate::plant::{LpvDataset, Rows};

/// Regression matrix with rows `Psi_k` such that `Psi_k . b = K1(p_k) . x_{k+1} - K2(p_k) . x_k`
/// for every flattened coefficient vector `b`.
///
/// Columns are `[x_{k+1,l} phi_i(p_k)]` for the `K1` block followed by `[-x_{k,l} phi_i(p_k)]`
/// for the `K2` block, each ordered by state component then basis function.
pub fn build_psi(dataset: &LpvDataset, basis: &BasisSet) -> Result<Rows> {
    check_dim("basis scheduling dimension", dataset.n_p(), basis.n_p())?;
    let n_x = dataset.n_x();
    let m = basis.len();
    let half = n_x * m;
    let mut psi = Rows::with_width(2 * half);
    let mut phi = vec![0.0; m];
    let mut row = vec![0.0; 2 * half];
    for k in 0..dataset.len() {
        basis.evaluate_into(dataset.p.row(k), &mut phi);
        let next = dataset.x.row(k + 1);
        let cur = dataset.x.row(k);
        for l in 0..n_x {
            for i in 0..m {
                row[l * m + i] = next[l] * phi[i];
                row[half + l * m + i] = -cur[l] * phi[i];
            }
        }
        psi.push(&row);
    }
    Ok(psi)
}

/// Columns of `psi` that stay in the program once zero columns and scaled copies are removed.
///
/// Each group of parallel columns keeps the one of largest magnitude, so moving a group's
/// weight onto it never increases `|b|_1`. Parallel copies arise whenever a regressor
/// component is also a scheduling coordinate, e.g. `x_1 * p_2` and `x_2 * p_1`.
pub fn independent_columns(psi: &Rows) -> Vec<usize> {
    const REL_TOL: f64 = 1e-12;
    let n = psi.width();
    let cols: Vec<Vec<f64>> = (0..n).map(|i| psi.column(i)).collect();
    let peak: Vec<(usize, f64)> = cols
        .iter()
        .map(|c| c.iter().enumerate().fold((0, 0.0_f64), |(a, m), (k, v)| if v.abs() > m { (k, v.abs()) } else { (a, m) }))
        .collect();
    let mut order: Vec<usize> = (0..n).filter(|&i| peak[i].1 > 0.0).collect();
    order.sort_by(|&a, &b| peak[b].1.total_cmp(&peak[a].1).then(a.cmp(&b)));
    let mut taken = vec![false; n];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if taken[i] {
            continue;
        }
        kept.push(i);
        let (arg, _) = peak[i];
        for &j in &order[pos + 1..] {
            if taken[j] {
                continue;
            }
            let c = cols[j][arg] / cols[i][arg];
            let tol = REL_TOL * peak[j].1;
            if cols[j].iter().zip(&cols[i]).all(|(a, b)| (a - c * b).abs() <= tol) {
                taken[j] = true;
            }
        }
    }
    kept.sort_unstable();
    kept
}

/// The neighbourhood radius and the unordered neighbour pairs `(k, l)`, `k < l`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSets {
    pub zeta: f64,
    pub len: usize,
    pub pairs: Vec<(u32, u32)>,
}

impl NeighborSets {
    /// `Q^k` for every row, each sorted and containing `k` itself.
    pub fn sets(&self) -> Vec<Vec<usize>> {
        let mut sets: Vec<Vec<usize>> = (0..self.len).map(|k| vec![k]).collect();
        for &(k, l) in &self.pairs {
            sets[k as usize].push(l as usize);
            sets[l as usize].push(k as usize);
        }
        for s in &mut sets {
            s.sort_unstable();
        }
        sets
    }
}

/// Feature rows `(p_k, x_{k+1})` used for neighbourhoods.
pub fn neighbor_features(dataset: &LpvDataset) -> Rows {
    let mut f = Rows::with_width(dataset.n_p() + dataset.n_x());
    let mut buf = Vec::with_capacity(f.width());
    for k in 0..dataset.len() {
        buf.clear();
        buf.extend_from_slice(dataset.p.row(k));
        buf.extend_from_slice(dataset.x.row(k + 1));
        f.push(&buf);
    }
    f
}

pub(crate) fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Smallest radius for which every row has at least one other row within it, with the pairs
/// inside that radius.
pub fn neighbor_sets(dataset: &LpvDataset) -> Result<NeighborSets> {
    neighbor_sets_of(&neighbor_features(dataset))
}

pub fn neighbor_sets_of(features: &Rows) -> Result<NeighborSets> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("neighbour sets need at least two rows"));
    }
    let mut nearest = vec![f64::INFINITY; n];
    for k in 0..n {
        let fk = features.row(k);
        for l in k + 1..n {
            let d = inf_dist(fk, features.row(l));
            if d < nearest[k] {
                nearest[k] = d;
            }
            if d < nearest[l] {
                nearest[l] = d;
            }
        }
    }
    let zeta = nearest.iter().copied().fold(0.0, f64::max);
    let mut pairs = Vec::new();
    for k in 0..n {
        let fk = features.row(k);
        for l in k + 1..n {
            if inf_dist(fk, features.row(l)) <= zeta {
                pairs.push((k as u32, l as u32));
            }
        }
    }
    Ok(NeighborSets { zeta, len: n, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::polynomial_basis;
    use crate::design::Controller;
    use crate::plant::SchedulingMap;
    use proptest::prelude::*;

    fn scalar_dataset(states: &[f64]) -> LpvDataset {
        let x = Rows::from_vecs(1, &states.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let u = Rows::from_vecs(1, &vec![vec![0.0]; states.len() - 1]).unwrap();
        LpvDataset::from_states(0.1, x, u, SchedulingMap::Identity).unwrap()
    }

    #[test]
    fn hand_built_psi() {
        let ds = scalar_dataset(&[1.0, 2.0, 4.0]);
        let psi = build_psi(&ds, &polynomial_basis(1, 0).unwrap()).unwrap();
        assert_eq!(psi.row(0), &[2.0, -1.0]);
        assert_eq!(psi.row(1), &[4.0, -2.0]);
    }

    #[test]
    fn zero_states_zero_psi() {
        let ds = scalar_dataset(&[0.0, 0.0, 0.0, 0.0]);
        let psi = build_psi(&ds, &polynomial_basis(1, 3).unwrap()).unwrap();
        assert!(psi.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn basis_dimension_mismatch() {
        let ds = scalar_dataset(&[1.0, 2.0, 4.0]);
        assert!(build_psi(&ds, &polynomial_basis(2, 1).unwrap()).is_err());
    }

    #[test]
    fn identical_rows() {
        let f = Rows::from_vecs(2, &[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let ns = neighbor_sets_of(&f).unwrap();
        assert_eq!(ns.zeta, 0.0);
        assert_eq!(ns.sets(), vec![vec![0, 1], vec![0, 1]]);
    }

    #[test]
    fn collinear_points() {
        let f = Rows::from_vecs(1, &[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        let ns = neighbor_sets_of(&f).unwrap();
        assert_eq!(ns.zeta, 2.0);
        let sets = ns.sets();
        assert_eq!(sets[0], vec![0, 1]);
        assert_eq!(sets[2], vec![1, 2]);
        assert!(neighbor_sets_of(&f.head(1)).is_err());
    }

    #[test]
    fn parallel_and_zero_columns() {
        let psi = Rows::from_vecs(
            5,
            &[vec![1.0, 2.0, 0.0, 1.0, -1.0], vec![3.0, 6.0, 0.0, 0.0, -3.0], vec![-2.0, -4.0, 0.0, 5.0, 2.0]],
        )
        .unwrap();
        assert_eq!(independent_columns(&psi), vec![1, 3]);
    }

    #[test]
    fn state_scheduling_products_collapse() {
        // With p = x, the feedback block holds both x_1 * p_2 and x_2 * p_1.
        let xs: Vec<Vec<f64>> = (0..8).map(|k| vec![(k as f64 * 0.7).sin(), (k as f64 * 1.3).cos()]).collect();
        let x = Rows::from_vecs(2, &xs).unwrap();
        let u = Rows::from_vecs(1, &vec![vec![0.0]; 7]).unwrap();
        let ds = LpvDataset::from_states(0.1, x, u, SchedulingMap::Identity).unwrap();
        let psi = build_psi(&ds, &polynomial_basis(2, 1).unwrap()).unwrap();
        let kept = independent_columns(&psi);
        assert_eq!(kept.len(), 11);
        assert!(kept.contains(&8) != kept.contains(&10));
    }

    proptest! {
        #[test]
        fn psi_matches_controller_evaluation(
            xs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 4..12),
            seed_b in prop::collection::vec(-3.0f64..3.0, 2 * 2 * 10),
        ) {
            let x = Rows::from_vecs(2, &xs).unwrap();
            let u = Rows::from_vecs(1, &vec![vec![0.0]; xs.len() - 1]).unwrap();
            let ds = LpvDataset::from_states(0.1, x, u, SchedulingMap::Identity).unwrap();
            let basis = polynomial_basis(2, 3).unwrap();
            let psi = build_psi(&ds, &basis).unwrap();
            let k = Controller::unflatten(basis, 2, &seed_b).unwrap();
            for r in 0..ds.len() {
                let lhs: f64 = psi.row(r).iter().zip(&seed_b).map(|(a, b)| a * b).sum();
                let rhs = k.evaluate(ds.p.row(r), ds.x.row(r + 1), ds.x.row(r));
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
            }
        }

        #[test]
        fn zeta_is_minimal(pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 2..30)) {
            let f = Rows::from_vecs(2, &pts).unwrap();
            let ns = neighbor_sets_of(&f).unwrap();
            prop_assert!(ns.sets().iter().all(|s| s.len() >= 2));
            // Re-scan with a slightly smaller radius: some row must be left alone.
            let shrunk = ns.zeta - 1e-9 * (1.0 + ns.zeta);
            let lonely = (0..f.len()).any(|k| {
                (0..f.len()).filter(|&l| l != k).all(|l| inf_dist(f.row(k), f.row(l)) > shrunk)
            });
            prop_assert!(lonely);
        }
    }
}
