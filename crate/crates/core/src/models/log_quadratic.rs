use crate::domain::{Domain, DomainKind};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};

use super::eigen::symmetric_lambda_min;

/// `U(x) = x^T W x + b^T x + offset` on the embedding of any domain.
///
/// The continuous extension is the same polynomial on all of `R^n`, so the
/// gradient is `2 W x + b`. `W` is always stored symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct LogQuadraticModel {
    domain: Domain,
    n: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    offset: f64,
}

impl LogQuadraticModel {
    /// `w` is row-major `n x n` with `n = domain.embed_dim()`. A non-symmetric
    /// `w` is replaced by `(w + w^T) / 2`.
    pub fn new(domain: Domain, w: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = domain.embed_dim();
        if w.len() != n * n {
            return Err(Error::Shape(format!(
                "W has {} entries, expected {n}x{n}",
                w.len()
            )));
        }
        if b.len() != n {
            return Err(Error::Shape(format!("b has {} entries, expected {n}", b.len())));
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("log-quadratic parameters"));
        }
        let mut sym = w;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (sym[i * n + j] + sym[j * n + i]);
                sym[i * n + j] = avg;
                sym[j * n + i] = avg;
            }
        }
        Ok(Self {
            domain,
            n,
            w: sym,
            b,
            offset: 0.0,
        })
    }

    pub fn from_rows(domain: Domain, rows: &[Vec<f64>], b: Vec<f64>) -> Result<Self> {
        let w = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(domain, w, b)
    }

    pub fn diagonal(domain: Domain, diag: &[f64], b: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        let mut w = vec![0.0; n * n];
        for (i, v) in diag.iter().enumerate() {
            w[i * n + i] = *v;
        }
        Self::new(domain, w, b)
    }

    /// Constant added to the energy. It does not change the distribution.
    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w_entry(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `x^T W x + b^T x` without the offset.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let row = &self.w[i * self.n..(i + 1) * self.n];
            let wx: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            total += x[i] * wx + self.b[i] * x[i];
        }
        total
    }

    /// Smallest eigenvalue of `W`.
    pub fn lambda_min(&self) -> f64 {
        symmetric_lambda_min(&self.w, self.n)
    }

    pub fn is_spin_or_binary(&self) -> bool {
        matches!(
            self.domain.kind(),
            DomainKind::Binary01 | DomainKind::SpinPm1
        )
    }
}

impl EnergyModel for LogQuadraticModel {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn energy_at(&self, x: &[f64]) -> f64 {
        self.quadratic_form(x) + self.offset
    }

    fn grad_at(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.w[i * self.n..(i + 1) * self.n];
            let wx: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            *o = 2.0 * wx + self.b[i];
        }
    }

    fn energy_grad_at(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let mut total = self.offset;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.w[i * self.n..(i + 1) * self.n];
            let wx: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            total += x[i] * wx + self.b[i] * x[i];
            *o = 2.0 * wx + self.b[i];
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::enumerate_states;
    use crate::energy::finite_diff_grad;

    fn sample_model() -> LogQuadraticModel {
        let d = Domain::spin(3).unwrap();
        LogQuadraticModel::from_rows(
            d,
            &[
                vec![0.5, 0.2, -0.3],
                vec![0.0, -1.0, 0.7],
                vec![0.1, 0.1, 0.25],
            ],
            vec![0.3, -0.2, 0.1],
        )
        .unwrap()
    }

    #[test]
    fn symmetrizes_input() {
        let m = sample_model();
        assert_eq!(m.w_entry(0, 1), 0.1);
        assert_eq!(m.w_entry(1, 0), 0.1);
        assert!((m.w_entry(0, 2) + 0.1).abs() < 1e-15);
        assert!((m.w_entry(1, 2) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn gradient_identity_at_every_state() {
        let m = sample_model();
        for s in enumerate_states(m.domain()).unwrap() {
            let x = m.domain().embed(&s);
            let g = m.grad(&s);
            for i in 0..3 {
                let mut wx = 0.0;
                for j in 0..3 {
                    wx += m.w_entry(i, j) * x[j];
                }
                assert_eq!(g[i], 2.0 * wx + m.b()[i]);
            }
        }
    }

    #[test]
    fn finite_differences_exact_for_quadratics() {
        let m = sample_model();
        for s in enumerate_states(m.domain()).unwrap() {
            let fd = finite_diff_grad(&m, &s, 1e-5);
            for (a, b) in fd.iter().zip(m.grad(&s)) {
                assert!((a - b).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn linear_model_gradient_is_b() {
        let d = Domain::binary(3).unwrap();
        let m = LogQuadraticModel::new(d, vec![0.0; 9], vec![1.5, -2.0, 0.25]).unwrap();
        let s = crate::domain::State::new(vec![1, 0, 1]);
        for (a, b) in finite_diff_grad(&m, &s, 1e-5).iter().zip([1.5, -2.0, 0.25]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_matrix_lambda_min() {
        let m = LogQuadraticModel::new(Domain::binary(3).unwrap(), vec![0.0; 9], vec![0.0; 3]).unwrap();
        assert_eq!(m.lambda_min(), 0.0);
    }

    #[test]
    fn shape_errors() {
        let d = Domain::binary(2).unwrap();
        assert!(LogQuadraticModel::new(d.clone(), vec![0.0; 3], vec![0.0; 2]).is_err());
        assert!(LogQuadraticModel::new(d, vec![0.0; 4], vec![0.0; 3]).is_err());
    }
}
