//! Independent reference implementations used as test oracles. Nothing here
//! calls the library's numerical routines.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plrm::{Dataset, ModelDims, ParameterVector};

/// Full probability vector, baseline last, by direct exponentiation with a
/// shift.
pub fn probs(x: &[f64], beta: &[f64], d: usize) -> Vec<f64> {
    let p = x.len();
    let mut eta: Vec<f64> = (0..d).map(|j| (0..p).map(|u| beta[j * p + u] * x[u]).sum()).collect();
    eta.push(0.0);
    let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn loglik(data: &Dataset, beta: &[f64]) -> f64 {
    let d = data.dims().d();
    data.rows()
        .iter()
        .map(|r| {
            let pi = probs(r.x.as_slice(), beta, d);
            r.y.as_slice().iter().zip(&pi).filter(|(y, _)| **y > 0.0).map(|(y, p)| y * p.ln()).sum::<f64>()
        })
        .sum()
}

/// Newton-Raphson on the multinomial log-likelihood with step halving.
pub fn newton_mle(data: &Dataset) -> Vec<f64> {
    let dims = data.dims();
    let (d, p) = (dims.d(), dims.row_len());
    let nu = d * p;
    let mut beta = vec![0.0; nu];
    let mut ll = loglik(data, &beta);
    for _ in 0..200 {
        let mut g = DVector::<f64>::zeros(nu);
        let mut h = DMatrix::<f64>::zeros(nu, nu);
        for r in data.rows() {
            let x = r.x.as_slice();
            let y = r.y.as_slice();
            let n = r.y.trials();
            let pi = probs(x, &beta, d);
            for j in 0..d {
                for u in 0..p {
                    g[j * p + u] += (y[j] - n * pi[j]) * x[u];
                    for l in 0..d {
                        let w = n * (if j == l { pi[j] } else { 0.0 } - pi[j] * pi[l]);
                        for v in 0..p {
                            h[(j * p + u, l * p + v)] += w * x[u] * x[v];
                        }
                    }
                }
            }
        }
        let step = h.cholesky().expect("positive definite information").solve(&g);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let cand_ll = loglik(data, &cand);
            if cand_ll >= ll - 1e-12 || t < 1e-8 {
                beta = cand;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
        }
        if step.amax() * t < 1e-13 {
            break;
        }
    }
    beta
}

/// `(e_m* - π*) ⊗ x` with `e_{d+1}* = 0`.
fn score(pi: &[f64], m: usize, x: &[f64]) -> DVector<f64> {
    let d = pi.len() - 1;
    let p = x.len();
    DVector::from_fn(d * p, |i, _| {
        let (j, u) = (i / p, i % p);
        (if j == m { 1.0 } else { 0.0 } - pi[j]) * x[u]
    })
}

/// `Ψ` by enumerating the single-trial sample space of every row.
pub fn psi_expanded(data: &Dataset, beta: &[f64], lambda: f64) -> DMatrix<f64> {
    let d = data.dims().d();
    let nu = data.dims().nu();
    let mut out = DMatrix::zeros(nu, nu);
    for r in data.rows() {
        let x = r.x.as_slice();
        let pi = probs(x, beta, d);
        for (m, &pm) in pi.iter().enumerate() {
            let u = score(&pi, m, x);
            out += &u * u.transpose() * (pm.powf(lambda + 1.0) * r.y.trials());
        }
    }
    out / data.total_trials()
}

/// `Ω` as `Σ u uᵀ f^{2λ+1} - ξ ξᵀ` over the single-trial sample space.
pub fn omega_expanded(data: &Dataset, beta: &[f64], lambda: f64) -> DMatrix<f64> {
    let d = data.dims().d();
    let nu = data.dims().nu();
    let mut out = DMatrix::zeros(nu, nu);
    for r in data.rows() {
        let x = r.x.as_slice();
        let pi = probs(x, beta, d);
        let mut xi = DVector::zeros(nu);
        let mut second = DMatrix::zeros(nu, nu);
        for (m, &pm) in pi.iter().enumerate() {
            let u = score(&pi, m, x);
            second += &u * u.transpose() * pm.powf(2.0 * lambda + 1.0);
            xi += u * pm.powf(lambda + 1.0);
        }
        out += (second - &xi * xi.transpose()) * r.y.trials();
    }
    out / data.total_trials()
}

/// Random dataset with standard normal covariates drawn from the model at
/// `beta`. Each row has `trials` trials.
pub fn random_dataset(rng: &mut ChaCha8Rng, k: usize, d: usize, n: usize, beta: &[f64], trials: u32) -> Dataset {
    let dims = ModelDims::new(k, d).unwrap();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let raw: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
        let mut x = vec![1.0];
        x.extend(&raw);
        let pi = probs(&x, beta, d);
        let mut counts = vec![0u32; d + 1];
        for _ in 0..trials {
            let mut u: f64 = rng.random();
            let mut cat = 0;
            while cat < d && u > pi[cat] {
                u -= pi[cat];
                cat += 1;
            }
            counts[cat] += 1;
        }
        xs.push(raw);
        ys.push(counts);
    }
    Dataset::from_counts(dims, &xs, &ys).unwrap()
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_beta(rng: &mut ChaCha8Rng, dims: ModelDims, scale: f64) -> ParameterVector {
    let values = (0..dims.nu()).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
    ParameterVector::new(dims, values).unwrap()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
