use std::fs;
use std::path::Path;

use crate::basis::BasisSet;
use crate::error::{check_dim, Error, Result};
use crate::kv::KvBlock;

/// Scheduled single-output feedback law `u = K1(p) . r_next - K2(p) . x` with
/// `K_j,l(p) = sum_i a_{j,l,i} phi_i(p)`.
///
/// Coefficients are stored flat: `a_{j,l,i}` (all zero-based) sits at `j*n_x*m + l*m + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    basis: BasisSet,
    n_x: usize,
    coeffs: Vec<f64>,
}

impl Controller {
    pub fn zeros(basis: BasisSet, n_x: usize) -> Self {
        let n = 2 * n_x * basis.len();
        Controller { basis, n_x, coeffs: vec![0.0; n] }
    }

    /// Inverse of [`Controller::flatten`].
    pub fn unflatten(basis: BasisSet, n_x: usize, b: &[f64]) -> Result<Self> {
        if n_x == 0 {
            return Err(Error::invalid("controller needs n_x >= 1"));
        }
        check_dim("controller coefficients", 2 * n_x * basis.len(), b.len())?;
        Ok(Controller { basis, n_x, coeffs: b.to_vec() })
    }

    pub fn flatten(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn m(&self) -> usize {
        self.basis.len()
    }

    pub fn index(&self, j: usize, l: usize, i: usize) -> usize {
        j * self.n_x * self.m() + l * self.m() + i
    }

    pub fn coefficient(&self, j: usize, l: usize, i: usize) -> f64 {
        self.coeffs[self.index(j, l, i)]
    }

    pub fn set_coefficient(&mut self, j: usize, l: usize, i: usize, v: f64) {
        let k = self.index(j, l, i);
        self.coeffs[k] = v;
    }

    /// `(K1(p), K2(p))` as two `n_x` vectors.
    pub fn gains(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let phi = self.basis.evaluate(p);
        self.gains_from_phi(&phi)
    }

    pub fn gains_from_phi(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.m();
        let gain = |j: usize, l: usize| -> f64 {
            let start = j * self.n_x * m + l * m;
            self.coeffs[start..start + m].iter().zip(phi).map(|(a, f)| a * f).sum()
        };
        let k1 = (0..self.n_x).map(|l| gain(0, l)).collect();
        let k2 = (0..self.n_x).map(|l| gain(1, l)).collect();
        (k1, k2)
    }

    pub fn evaluate(&self, p: &[f64], r_next: &[f64], x: &[f64]) -> f64 {
        let (k1, k2) = self.gains(p);
        let a: f64 = k1.iter().zip(r_next).map(|(k, r)| k * r).sum();
        let b: f64 = k2.iter().zip(x).map(|(k, x)| k * x).sum();
        a - b
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.push("n_x", self.n_x).extend_prefixed("basis.", &self.basis.to_kv());
        let nonzero: Vec<(usize, usize, usize)> = (0..2)
            .flat_map(|j| (0..self.n_x).flat_map(move |l| (0..self.m()).map(move |i| (j, l, i))))
            .filter(|&(j, l, i)| self.coefficient(j, l, i) != 0.0)
            .collect();
        kv.push("nonzero", nonzero.len());
        for (j, l, i) in nonzero {
            kv.push(format!("a.{}.{}.{}", j + 1, l + 1, i + 1), self.coefficient(j, l, i));
        }
        kv
    }

    fn from_kv(kv: &KvBlock) -> Result<Self> {
        let n_x: usize = kv.parse_value("n_x")?;
        let basis = BasisSet::from_kv(&kv.strip_prefix("basis."))?;
        let mut c = Controller::zeros(basis, n_x);
        let mut count = 0;
        for (key, value) in kv.iter() {
            let Some(rest) = key.strip_prefix("a.") else { continue };
            let idx: Vec<usize> = rest
                .split('.')
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse("controller", format!("bad coefficient key {key:?}")))?;
            let [j, l, i] = idx[..] else {
                return Err(Error::parse("controller", format!("bad coefficient key {key:?}")));
            };
            if !(1..=2).contains(&j) || l == 0 || l > n_x || i == 0 || i > c.m() {
                return Err(Error::parse("controller", format!("coefficient index out of range in {key:?}")));
            }
            let v: f64 = value
                .parse()
                .map_err(|_| Error::parse("controller", format!("bad value for {key:?}")))?;
            c.set_coefficient(j - 1, l - 1, i - 1, v);
            count += 1;
        }
        let declared: usize = kv.parse_value("nonzero")?;
        if declared != count {
            return Err(Error::parse("controller", format!("expected {declared} coefficients, found {count}")));
        }
        Ok(c)
    }
}

/// Number of coefficients with `|a| > threshold * max(1, max |a|)`.
pub fn sparsity_count(k: &Controller, threshold: f64) -> usize {
    let cut = threshold * k.max_abs().max(1.0);
    k.flatten().iter().filter(|a| a.abs() > cut).count()
}

/// One controller per input channel, serialized together.
pub fn controllers_to_string(channels: &[Controller]) -> String {
    let mut kv = KvBlock::new();
    kv.push("channels", channels.len());
    for (c, k) in channels.iter().enumerate() {
        kv.extend_prefixed(&format!("u{}.", c + 1), &k.to_kv());
    }
    kv.to_string()
}

pub fn controllers_from_str(text: &str) -> Result<Vec<Controller>> {
    let kv = KvBlock::parse(text)?;
    let n: usize = kv.parse_value("channels")?;
    if n == 0 {
        return Err(Error::parse("controller", "no channels"));
    }
    (1..=n).map(|c| Controller::from_kv(&kv.strip_prefix(&format!("u{c}.")))).collect()
}

pub fn write_controllers(path: &Path, channels: &[Controller]) -> Result<()> {
    fs::write(path, controllers_to_string(channels)).map_err(|e| Error::io(path, e))
}

pub fn read_controllers(path: &Path) -> Result<Vec<Controller>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    controllers_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::polynomial_basis;
    use proptest::prelude::*;

    fn constant_basis() -> BasisSet {
        polynomial_basis(1, 0).unwrap()
    }

    #[test]
    fn direct_formula() {
        let k = Controller::unflatten(constant_basis(), 1, &[0.5, 0.25]).unwrap();
        assert_eq!(k.evaluate(&[3.0], &[2.0], &[4.0]), 0.0);
        let zero = Controller::zeros(polynomial_basis(2, 3).unwrap(), 2);
        assert_eq!(zero.evaluate(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]), 0.0);
    }

    #[test]
    fn sparsity_examples() {
        let basis = polynomial_basis(2, 2).unwrap();
        let mut k = Controller::zeros(basis, 2);
        assert_eq!(sparsity_count(&k, 1e-6), 0);
        k.set_coefficient(1, 0, 3, 5.0);
        assert_eq!(sparsity_count(&k, 1e-6), 1);
        k.set_coefficient(0, 1, 2, 1e-7);
        assert_eq!(sparsity_count(&k, 1e-6), 1);
    }

    #[test]
    fn flattening_rule() {
        let basis = polynomial_basis(2, 1).unwrap();
        let b: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let k = Controller::unflatten(basis, 2, &b).unwrap();
        // a_{j,l,i} = b[j*n_x*m + l*m + i] with n_x = 2, m = 3.
        assert_eq!(k.coefficient(1, 0, 2), 8.0);
        assert_eq!(k.coefficient(0, 1, 0), 3.0);
        assert!(Controller::unflatten(polynomial_basis(2, 1).unwrap(), 2, &b[..11]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.ctl");
        let mut a = Controller::zeros(polynomial_basis(2, 2).unwrap(), 2);
        a.set_coefficient(0, 1, 4, 0.1 + 0.2);
        a.set_coefficient(1, 0, 0, -1e-300);
        let b = Controller::zeros(polynomial_basis(4, 1).unwrap(), 4);
        write_controllers(&path, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(read_controllers(&path).unwrap(), vec![a, b]);
    }

    #[test]
    fn rejects_tampered_files() {
        let k = Controller::unflatten(constant_basis(), 1, &[0.5, 0.25]).unwrap();
        let text = controllers_to_string(&[k]);
        assert!(controllers_from_str(&text.replace("u1.nonzero = 2", "u1.nonzero = 3")).is_err());
        assert!(controllers_from_str(&text.replace("u1.a.2.1.1", "u1.a.3.1.1")).is_err());
    }

    proptest! {
        #[test]
        fn flatten_round_trip(b in prop::collection::vec(-10.0f64..10.0, 2 * 2 * 6)) {
            let k = Controller::unflatten(polynomial_basis(2, 2).unwrap(), 2, &b).unwrap();
            let back = Controller::unflatten(k.basis().clone(), 2, k.flatten()).unwrap();
            prop_assert_eq!(back.flatten(), &b[..]);
            for j in 0..2 { for l in 0..2 { for i in 0..6 {
                prop_assert_eq!(k.coefficient(j, l, i), b[j * 12 + l * 6 + i]);
            }}}
        }

        #[test]
        fn text_round_trip(b in prop::collection::vec(prop_oneof![Just(0.0), -1e3f64..1e3], 2 * 3 * 4)) {
            let k = Controller::unflatten(polynomial_basis(1, 3).unwrap(), 3, &b).unwrap();
            let back = controllers_from_str(&controllers_to_string(&[k.clone()])).unwrap();
            prop_assert_eq!(back, vec![k]);
        }
    }
}
