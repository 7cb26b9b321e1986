use std::f64::consts::PI;

use crate::domain::Domain;
use crate::energy::EnergyModel;

/// One spin with energy `a x^2 + b x + 2 eps sin(pi x / 2)`.
///
/// The extension is the same smooth function of real `x`; its gradient
/// `2 a x + b + eps pi cos(pi x / 2)` does not depend on `eps` at `x = +-1`.
#[derive(Debug, Clone)]
pub struct Perturbed1DModel {
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
    domain: Domain,
}

impl Perturbed1DModel {
    pub fn new(a: f64, b: f64, epsilon: f64) -> Self {
        Self {
            a,
            b,
            epsilon,
            domain: Domain::spin(1).expect("one coordinate"),
        }
    }
}

impl EnergyModel for Perturbed1DModel {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn energy_at(&self, x: &[f64]) -> f64 {
        let t = x[0];
        self.a * t * t + self.b * t + 2.0 * self.epsilon * (t * PI / 2.0).sin()
    }

    fn grad_at(&self, x: &[f64], out: &mut [f64]) {
        let t = x[0];
        // cos(pi t / 2) as sin(pi (1 - |t|) / 2)
        let c = ((1.0 - t.abs()) * PI / 2.0).sin();
        out[0] = 2.0 * self.a * t + self.b + self.epsilon * PI * c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::State;
    use crate::energy::finite_diff_grad;

    #[test]
    fn finite_difference_at_plus_one() {
        let (a, b, eps) = (1.0, 0.1, 0.5);
        let m = Perturbed1DModel::new(a, b, eps);
        let s = State::new(vec![1]);
        let fd = finite_diff_grad(&m, &s, 1e-5)[0];
        let analytic = 2.0 * a + b + eps * PI * (PI / 2.0).cos();
        assert!((fd - analytic).abs() < 1e-8, "{fd} vs {analytic}");
        assert!((m.grad(&s)[0] - (2.0 * a + b)).abs() < 1e-12);
    }

    #[test]
    fn gradient_blind_to_epsilon_on_lattice() {
        for s in [State::new(vec![0]), State::new(vec![1])] {
            let g0 = Perturbed1DModel::new(0.0, 0.0, 0.0).grad(&s)[0];
            let g1 = Perturbed1DModel::new(0.0, 0.0, 0.8).grad(&s)[0];
            assert_eq!(g0, 0.0);
            assert_eq!(g1, 0.0);
        }
        let m = Perturbed1DModel::new(0.0, 0.0, 0.8);
        assert!((m.energy(&State::new(vec![1])) - 1.6).abs() < 1e-12);
        assert!((m.energy(&State::new(vec![0])) + 1.6).abs() < 1e-12);
    }
}
