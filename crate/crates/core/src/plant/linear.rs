use super::PlantModel;
use crate::error::{check_dim, Error, Result};

/// Continuous-time linear plant `x' = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl LinearPlant {
    /// `a` is `n x n` and `b` is `n x m`, both given row by row.
    pub fn new(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::invalid("linear plant needs at least one state"));
        }
        check_dim("linear plant B rows", n, b.len())?;
        let m = b[0].len();
        if m == 0 {
            return Err(Error::invalid("linear plant needs at least one input"));
        }
        for row in &a {
            check_dim("linear plant A columns", n, row.len())?;
        }
        for row in &b {
            check_dim("linear plant B columns", m, row.len())?;
        }
        if a.iter().chain(&b).flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("linear plant matrices must be finite"));
        }
        Ok(LinearPlant { a, b })
    }
}

impl PlantModel for LinearPlant {
    fn state_dim(&self) -> usize {
        self.a.len()
    }

    fn input_dim(&self) -> usize {
        self.b[0].len()
    }

    fn derivative(&self, x: &[f64], u: &[f64], _t: f64, dx: &mut [f64]) {
        for (i, d) in dx.iter_mut().enumerate() {
            let ax: f64 = self.a[i].iter().zip(x).map(|(a, x)| a * x).sum();
            let bu: f64 = self.b[i].iter().zip(u).map(|(b, u)| b * u).sum();
            *d = ax + bu;
        }
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
}
