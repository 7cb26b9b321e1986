use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::rng::seeded;

/// Above this size the smallest eigenvalue is found by Lanczos iteration.
pub const DENSE_EIGEN_LIMIT: usize = 512;

/// Smallest eigenvalue of a symmetric row-major `n x n` matrix.
pub fn symmetric_lambda_min(w: &[f64], n: usize) -> f64 {
    if n <= DENSE_EIGEN_LIMIT {
        lambda_min_dense(w, n)
    } else {
        lambda_min_lanczos(w, n, 1e-9)
    }
}

pub fn lambda_min_dense(w: &[f64], n: usize) -> f64 {
    let m = DMatrix::from_row_slice(n, n, w);
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Lanczos with full reorthogonalization. Stops once the Ritz residual of the
/// smallest Ritz value is below `tol * max(1, |theta|)`.
pub fn lambda_min_lanczos(w: &[f64], n: usize, tol: f64) -> f64 {
    let matvec = |x: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &w[i * n..(i + 1) * n];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    };
    let mut rng = seeded(0x1a2c_05e5);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut q);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut z = vec![0.0; n];
    let mut best = f64::INFINITY;

    for k in 0..n {
        matvec(&q, &mut z);
        let alpha = dot(&q, &z);
        basis.push(q.clone());
        alphas.push(alpha);
        // Two passes of Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &z);
                z.iter_mut().zip(v).for_each(|(zi, vi)| *zi -= c * vi);
            }
        }
        let beta = dot(&z, &z).sqrt();

        let m = alphas.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (idx, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        best = theta;
        let residual = (beta * eig.eigenvectors[(m - 1, idx)]).abs();
        if residual <= tol * theta.abs().max(1.0) || beta <= 1e-14 || k + 1 == n {
            break;
        }
        betas.push(beta);
        q = z.iter().map(|v| v / beta).collect();
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let w = [-0.001, 0.0, 0.0, -1000.0];
        assert!((lambda_min_dense(&w, 2) + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn lanczos_matches_dense() {
        let n = 40;
        let mut rng = seeded(3);
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
        let dense = lambda_min_dense(&w, n);
        let lanczos = lambda_min_lanczos(&w, n, 1e-10);
        assert!((dense - lanczos).abs() <= 1e-8 * dense.abs().max(1.0), "{dense} vs {lanczos}");
    }
}
