use rand::seq::index::sample;
use rand::Rng;

use crate::domain::Domain;
use crate::energy::{EnergyModel, MinibatchSpec};
use crate::error::{Error, Result};
use crate::rng::ChainRng;

/// Wraps a model and perturbs its gradient with independent `sigma * (+-1)`
/// noise per coordinate. The estimate is unbiased and its per-coordinate
/// standard deviation is exactly `sigma`.
#[derive(Debug, Clone)]
pub struct AdditiveNoiseModel<M> {
    inner: M,
    sigma: f64,
}

impl<M: EnergyModel> AdditiveNoiseModel<M> {
    pub fn new(inner: M, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise scale must be finite and non-negative, got {sigma}"
            )));
        }
        Ok(Self { inner, sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: EnergyModel> EnergyModel for AdditiveNoiseModel<M> {
    fn domain(&self) -> &Domain {
        self.inner.domain()
    }

    fn energy_at(&self, x: &[f64]) -> f64 {
        self.inner.energy_at(x)
    }

    fn grad_at(&self, x: &[f64], out: &mut [f64]) {
        self.inner.grad_at(x, out)
    }

    fn energy_grad_at(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.inner.energy_grad_at(x, out)
    }

    fn supports_stochastic_grad(&self) -> bool {
        true
    }

    /// The batch size is ignored; the noise level is a property of the model.
    fn stoch_grad_at(
        &self,
        x: &[f64],
        _batch: &MinibatchSpec,
        rng: &mut ChainRng,
        out: &mut [f64],
    ) -> Result<()> {
        self.inner.grad_at(x, out);
        for g in out.iter_mut() {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *g += self.sigma * sign;
        }
        Ok(())
    }
}

/// `U(x) = x^T W x + sum_n c_n^T x` over `N` data terms `c_n`.
///
/// The stochastic gradient draws `m` distinct terms uniformly, sums them in
/// index order and scales by `N / m`. With `m = N` it reproduces the full
/// gradient bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchQuadraticModel {
    domain: Domain,
    n: usize,
    w: Vec<f64>,
    terms: Vec<Vec<f64>>,
}

impl MinibatchQuadraticModel {
    pub fn new(domain: Domain, w: Vec<f64>, terms: Vec<Vec<f64>>) -> Result<Self> {
        let n = domain.embed_dim();
        if w.len() != n * n {
            return Err(Error::Shape(format!("W has {} entries, expected {n}x{n}", w.len())));
        }
        if terms.is_empty() {
            return Err(Error::Empty("minibatch data terms"));
        }
        if let Some(t) = terms.iter().find(|t| t.len() != n) {
            return Err(Error::Shape(format!("data term has {} entries, expected {n}", t.len())));
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
            terms,
        })
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn quadratic_grad(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.w[i * self.n..(i + 1) * self.n];
            *o = 2.0 * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn add_terms(&self, indices: impl Iterator<Item = usize>, scale: f64, out: &mut [f64]) {
        let mut acc = vec![0.0; self.n];
        for k in indices {
            acc.iter_mut().zip(&self.terms[k]).for_each(|(a, c)| *a += c);
        }
        out.iter_mut().zip(acc).for_each(|(o, a)| *o += scale * a);
    }
}

impl EnergyModel for MinibatchQuadraticModel {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn energy_at(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let row = &self.w[i * self.n..(i + 1) * self.n];
            total += x[i] * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        for t in &self.terms {
            total += t.iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
        }
        total
    }

    fn grad_at(&self, x: &[f64], out: &mut [f64]) {
        self.quadratic_grad(x, out);
        self.add_terms(0..self.terms.len(), 1.0, out);
    }

    fn supports_stochastic_grad(&self) -> bool {
        true
    }

    fn stoch_grad_at(
        &self,
        x: &[f64],
        batch: &MinibatchSpec,
        rng: &mut ChainRng,
        out: &mut [f64],
    ) -> Result<()> {
        let total = self.terms.len();
        let m = batch.batch_size;
        if m == 0 || m > total {
            return Err(Error::InvalidConfig(format!(
                "batch size {m} must be in 1..={total}"
            )));
        }
        let mut idx = sample(rng, total, m).into_vec();
        idx.sort_unstable();
        self.quadratic_grad(x, out);
        self.add_terms(idx.into_iter(), total as f64 / m as f64, out);
        Ok(())
    }
}
