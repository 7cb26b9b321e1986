//! The energy-model interface consumed by every sampler.
//!
//! A model defines `U` on real vectors of length `domain().embed_dim()`.
//! That function is the model's continuous extension: it must agree with the
//! discrete energy on embedded states, and `grad_at` must be its exact
//! gradient. Samplers only ever evaluate it at embedded states, but
//! [`finite_diff_grad`] probes it between lattice points.

use crate::domain::{Domain, State};
use crate::error::{Error, Result};
use crate::models::RbmModel;
use crate::rng::ChainRng;

/// Minibatch description for stochastic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinibatchSpec {
    pub batch_size: usize,
}

pub trait EnergyModel: Send + Sync {
    fn domain(&self) -> &Domain;

    /// Continuous extension of the energy at a real point.
    fn energy_at(&self, x: &[f64]) -> f64;

    /// Gradient of the continuous extension, written into `out`.
    fn grad_at(&self, x: &[f64], out: &mut [f64]);

    fn energy(&self, state: &State) -> f64 {
        self.energy_at(&self.domain().embed(state))
    }

    fn grad(&self, state: &State) -> Vec<f64> {
        let x = self.domain().embed(state);
        let mut g = vec![0.0; x.len()];
        self.grad_at(&x, &mut g);
        g
    }

    /// Energy and gradient together; models override this to share work.
    fn energy_grad_at(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.grad_at(x, out);
        self.energy_at(x)
    }

    fn energy_grad(&self, state: &State) -> (f64, Vec<f64>) {
        let x = self.domain().embed(state);
        let mut g = vec![0.0; x.len()];
        let u = self.energy_grad_at(&x, &mut g);
        (u, g)
    }

    fn supports_stochastic_grad(&self) -> bool {
        false
    }

    /// Unbiased estimate of `grad_at(x)`.
    fn stoch_grad_at(
        &self,
        _x: &[f64],
        _batch: &MinibatchSpec,
        _rng: &mut ChainRng,
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::Unsupported(
            "model does not provide stochastic gradients".into(),
        ))
    }

    fn stoch_grad(
        &self,
        state: &State,
        batch: &MinibatchSpec,
        rng: &mut ChainRng,
    ) -> Result<Vec<f64>> {
        let x = self.domain().embed(state);
        let mut g = vec![0.0; x.len()];
        self.stoch_grad_at(&x, batch, rng, &mut g)?;
        Ok(g)
    }

    /// Structure hook for samplers that only apply to RBMs.
    fn as_rbm(&self) -> Option<&RbmModel> {
        None
    }
}

/// Central-difference gradient of the continuous extension at an embedded state.
pub fn finite_diff_grad<M: EnergyModel + ?Sized>(model: &M, state: &State, h: f64) -> Vec<f64> {
    let x = model.domain().embed(state);
    finite_diff_grad_at(model, &x, h)
}

pub fn finite_diff_grad_at<M: EnergyModel + ?Sized>(model: &M, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = model.energy_at(&probe);
            probe[i] = x[i] - h;
            let down = model.energy_at(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
