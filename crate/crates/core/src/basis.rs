//! Scalar basis functions over the scheduling domain.

use std::fmt;

use crate::error::{check_dim, Error, Result};
use crate::kv::KvBlock;

#[derive(Debug, Clone, PartialEq)]
pub enum BasisFunction {
    /// `prod_i p_i^e_i`.
    Monomial(Vec<u32>),
    /// `exp(-|p - center|_2^2 / (2 width^2))`.
    Gaussian { center: Vec<f64>, width: f64 },
}

impl BasisFunction {
    fn eval(&self, p: &[f64]) -> f64 {
        match self {
            BasisFunction::Monomial(exps) => {
                let mut v = 1.0;
                for (&e, &x) in exps.iter().zip(p) {
                    for _ in 0..e {
                        v *= x;
                    }
                }
                v
            }
            BasisFunction::Gaussian { center, width } => {
                let r2: f64 = center.iter().zip(p).map(|(c, x)| (x - c) * (x - c)).sum();
                (-r2 / (2.0 * width * width)).exp()
            }
        }
    }
}

impl fmt::Display for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisFunction::Monomial(exps) => {
                write!(f, "monomial")?;
                for e in exps {
                    write!(f, " {e}")?;
                }
                Ok(())
            }
            BasisFunction::Gaussian { center, width } => {
                write!(f, "gaussian {width}")?;
                for c in center {
                    write!(f, " {c}")?;
                }
                Ok(())
            }
        }
    }
}

/// Ordered family of `m` functions of an `n_p`-dimensional scheduling parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    n_p: usize,
    functions: Vec<BasisFunction>,
}

/// All monomials of total degree at most `degree` in `n_p` variables, graded by degree and
/// lexicographically descending in the exponent vector within a degree: `1, p1, p2, p1^2, p1 p2, p2^2, ...`.
pub fn polynomial_basis(n_p: usize, degree: u32) -> Result<BasisSet> {
    if n_p == 0 {
        return Err(Error::invalid("polynomial basis needs n_p >= 1"));
    }
    let mut functions = Vec::new();
    for d in 0..=degree {
        let mut current = vec![0u32; n_p];
        push_exponents(0, d, &mut current, &mut functions);
    }
    Ok(BasisSet { n_p, functions })
}

fn push_exponents(pos: usize, left: u32, current: &mut Vec<u32>, out: &mut Vec<BasisFunction>) {
    if pos + 1 == current.len() {
        current[pos] = left;
        out.push(BasisFunction::Monomial(current.clone()));
        return;
    }
    for e in (0..=left).rev() {
        current[pos] = e;
        push_exponents(pos + 1, left - e, current, out);
    }
}

/// Gaussian bumps centred on a uniform grid over `[lo_i, hi_i]` with `per_dim` points per axis.
pub fn gaussian_basis(bounds: &[(f64, f64)], per_dim: usize, width: f64) -> Result<BasisSet> {
    if bounds.is_empty() || per_dim == 0 {
        return Err(Error::invalid("gaussian basis needs n_p >= 1 and per_dim >= 1"));
    }
    if !(width > 0.0) || bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(Error::invalid("gaussian basis needs width > 0 and finite bounds"));
    }
    let axes: Vec<Vec<f64>> = bounds.iter().map(|&(lo, hi)| grid_points(lo, hi, per_dim)).collect();
    let mut functions = Vec::new();
    let mut idx = vec![0usize; bounds.len()];
    loop {
        let center = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        functions.push(BasisFunction::Gaussian { center, width });
        let mut d = bounds.len();
        loop {
            if d == 0 {
                return Ok(BasisSet { n_p: bounds.len(), functions });
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < per_dim {
                break;
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn grid_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl BasisSet {
    pub fn from_functions(n_p: usize, functions: Vec<BasisFunction>) -> Result<Self> {
        if n_p == 0 || functions.is_empty() {
            return Err(Error::invalid("basis needs n_p >= 1 and at least one function"));
        }
        for f in &functions {
            match f {
                BasisFunction::Monomial(e) => check_dim("monomial exponents", n_p, e.len())?,
                BasisFunction::Gaussian { center, width } => {
                    check_dim("gaussian center", n_p, center.len())?;
                    if !(*width > 0.0) || !width.is_finite() || center.iter().any(|c| !c.is_finite()) {
                        return Err(Error::invalid("gaussian needs a finite center and width > 0"));
                    }
                }
            }
        }
        Ok(BasisSet { n_p, functions })
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[BasisFunction] {
        &self.functions
    }

    pub fn family(&self) -> &'static str {
        let poly = self.functions.iter().all(|f| matches!(f, BasisFunction::Monomial(_)));
        let gauss = self.functions.iter().all(|f| matches!(f, BasisFunction::Gaussian { .. }));
        match (poly, gauss) {
            (true, _) => "polynomial",
            (_, true) => "gaussian",
            _ => "user",
        }
    }

    /// `phi(p)` in basis order.
    pub fn evaluate(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(p, &mut out);
        out
    }

    pub fn evaluate_into(&self, p: &[f64], out: &mut [f64]) {
        debug_assert_eq!(p.len(), self.n_p);
        for (o, f) in out.iter_mut().zip(&self.functions) {
            *o = f.eval(p);
        }
    }

    /// Per-function bound on the infinity-norm Lipschitz constant over a box,
    /// i.e. on `max |grad phi|_1`.
    pub fn lipschitz_bound_on_box(&self, bounds: &[(f64, f64)]) -> Result<Vec<f64>> {
        check_dim("lipschitz box", self.n_p, bounds.len())?;
        if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite()) || lo > hi) {
            return Err(Error::invalid("Lipschitz bound needs a bounded box"));
        }
        let reach: Vec<f64> = bounds.iter().map(|(lo, hi)| lo.abs().max(hi.abs())).collect();
        Ok(self
            .functions
            .iter()
            .map(|f| match f {
                // Every partial derivative magnitude grows with |p_j|, so the corner of largest
                // magnitudes maximizes each term at once.
                BasisFunction::Monomial(exps) => (0..exps.len())
                    .filter(|&i| exps[i] > 0)
                    .map(|i| {
                        let mut v = exps[i] as f64;
                        for (j, &e) in exps.iter().enumerate() {
                            let e = if j == i { e - 1 } else { e };
                            for _ in 0..e {
                                v *= reach[j];
                            }
                        }
                        v
                    })
                    .sum(),
                // |d/dp_i| <= |p_i - c_i| / w^2 * exp(-(p_i - c_i)^2 / 2w^2) <= 1 / (w sqrt(e)).
                BasisFunction::Gaussian { width, .. } => self.n_p as f64 / (width * std::f64::consts::E.sqrt()),
            })
            .collect())
    }

    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.push("family", self.family()).push("n_p", self.n_p).push("m", self.len());
        for (i, f) in self.functions.iter().enumerate() {
            kv.push(format!("phi.{}", i + 1), f);
        }
        kv
    }

    pub fn from_kv(kv: &KvBlock) -> Result<Self> {
        let n_p: usize = kv.parse_value("n_p")?;
        let m: usize = kv.parse_value("m")?;
        let mut functions = Vec::with_capacity(m);
        for i in 1..=m {
            let line = kv.require(&format!("phi.{i}"))?;
            functions.push(parse_function(line)?);
        }
        BasisSet::from_functions(n_p, functions)
    }
}

fn parse_function(line: &str) -> Result<BasisFunction> {
    let mut parts = line.split_whitespace();
    let bad = |msg: &str| Error::parse("basis function", format!("{msg}: {line:?}"));
    match parts.next() {
        Some("monomial") => parts
            .map(|t| t.parse::<u32>().map_err(|_| bad("bad exponent")))
            .collect::<Result<Vec<_>>>()
            .map(BasisFunction::Monomial),
        Some("gaussian") => {
            let nums = parts
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<Vec<_>>>()?;
            let (width, center) = nums.split_first().ok_or_else(|| bad("missing width"))?;
            Ok(BasisFunction::Gaussian { center: center.to_vec(), width: *width })
        }
        _ => Err(bad("unknown function kind")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binomial(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn degree_six_in_two_variables() {
        let b = polynomial_basis(2, 6).unwrap();
        assert_eq!(b.len(), 28);
        let first: Vec<_> = b.functions()[..6].iter().map(|f| f.to_string()).collect();
        assert_eq!(
            first,
            ["monomial 0 0", "monomial 1 0", "monomial 0 1", "monomial 2 0", "monomial 1 1", "monomial 0 2"]
        );
        assert_eq!(b.functions()[26], BasisFunction::Monomial(vec![1, 5]));
        assert_eq!(b.functions()[27], BasisFunction::Monomial(vec![0, 6]));
    }

    #[test]
    fn small_counts() {
        assert_eq!(polynomial_basis(2, 0).unwrap().len(), 1);
        assert_eq!(polynomial_basis(1, 3).unwrap().len(), 4);
        assert!(polynomial_basis(0, 3).is_err());
    }

    #[test]
    fn evaluation_examples() {
        let b = polynomial_basis(2, 2).unwrap();
        assert_eq!(b.evaluate(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        let mut at_zero = vec![0.0; 28];
        at_zero[0] = 1.0;
        assert_eq!(polynomial_basis(2, 6).unwrap().evaluate(&[0.0, 0.0]), at_zero);
        assert_eq!(polynomial_basis(3, 0).unwrap().evaluate(&[7.0, -1.0, 2.5]), vec![1.0]);
    }

    #[test]
    fn lipschitz_examples() {
        let b = polynomial_basis(2, 2).unwrap();
        let l = b.lipschitz_bound_on_box(&[(-2.0, 2.0), (-2.0, 2.0)]).unwrap();
        assert_eq!(l[0], 0.0);
        assert_eq!(l[1], 1.0);
        assert_eq!(l[3], 4.0);
        assert!(b.lipschitz_bound_on_box(&[(-1.0, f64::INFINITY), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn gaussian_grid_and_bound() {
        let b = gaussian_basis(&[(-1.0, 1.0), (0.0, 2.0)], 3, 0.5).unwrap();
        assert_eq!(b.len(), 9);
        assert_eq!(b.family(), "gaussian");
        assert_eq!(b.evaluate(&[-1.0, 0.0])[0], 1.0);
        let l = b.lipschitz_bound_on_box(&[(-1.0, 1.0), (0.0, 2.0)]).unwrap();
        // Numerical slope check along a coordinate direction.
        let h = 1e-6;
        let x0 = [-1.0 + 0.5, 0.0];
        let slope = (b.evaluate(&[x0[0] + h, x0[1]])[0] - b.evaluate(&x0)[0]).abs() / h;
        assert!(slope <= l[0] + 1e-6);
    }

    proptest! {
        #[test]
        fn count_is_binomial(n_p in 1usize..5, d in 0u32..7) {
            let b = polynomial_basis(n_p, d).unwrap();
            prop_assert_eq!(b.len() as u64, binomial(n_p as u64 + d as u64, n_p as u64));
        }

        #[test]
        fn serialization_round_trip(n_p in 1usize..4, d in 0u32..5, p in prop::collection::vec(-3.0f64..3.0, 3)) {
            let b = polynomial_basis(n_p, d).unwrap();
            let text = b.to_kv().to_string();
            let back = BasisSet::from_kv(&KvBlock::parse(&text).unwrap()).unwrap();
            prop_assert_eq!(&back, &b);
            let a = b.evaluate(&p[..n_p]);
            let c = back.evaluate(&p[..n_p]);
            prop_assert!(a.iter().zip(&c).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        #[test]
        fn gaussian_round_trip(w in 0.1f64..3.0, c in -5.0f64..5.0) {
            let b = BasisSet::from_functions(1, vec![BasisFunction::Gaussian { center: vec![c], width: w }]).unwrap();
            let back = BasisSet::from_kv(&KvBlock::parse(&b.to_kv().to_string()).unwrap()).unwrap();
            prop_assert_eq!(back, b);
        }

        #[test]
        fn integer_inputs_evaluate_exactly(a in -4i64..5, b in -4i64..5) {
            let basis = polynomial_basis(2, 6).unwrap();
            let vals = basis.evaluate(&[a as f64, b as f64]);
            for (f, v) in basis.functions().iter().zip(vals) {
                if let BasisFunction::Monomial(e) = f {
                    prop_assert_eq!(v, (a.pow(e[0]) * b.pow(e[1])) as f64);
                }
            }
        }
    }
}
