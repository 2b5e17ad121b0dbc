#![allow(dead_code)]

use netbridge::{CommodityModel, Kernel, Marginal, Matrix};
use rand::Rng;

/// Random sparsity pattern with a positive diagonal, so every vertex can wait.
pub fn pattern(rng: &mut impl Rng, n: usize, density: f64) -> Vec<Vec<bool>> {
    (0..n)
        .map(|i| (0..n).map(|j| i == j || rng.gen::<f64>() < density).collect())
        .collect()
}

pub fn stochastic_on(rng: &mut impl Rng, pat: &[Vec<bool>]) -> Matrix<f64> {
    let n = pat.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        let w: Vec<f64> = (0..n)
            .map(|j| if pat[i][j] { 0.05 + rng.gen::<f64>() } else { 0.0 })
            .collect();
        let s: f64 = w.iter().sum();
        for j in 0..n {
            m[(i, j)] = w[j] / s;
        }
    }
    m
}

pub fn probability(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| 0.05 + rng.gen::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn push(p: &[f64], m: &Matrix<f64>) -> Vec<f64> {
    (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| p[i] * m[(i, j)]).sum())
        .collect()
}

pub fn push_n(p: &[f64], m: &Matrix<f64>, steps: usize) -> Vec<f64> {
    (0..steps).fold(p.to_vec(), |acc, _| push(&acc, m))
}

/// Balanced instance: prior `A` and a second chain `B` on the same support.
/// `mu_N = mu_0 B^N`, so the endpoint pair is always feasible.
pub struct BridgeInstance {
    pub kernel: Kernel<f64>,
    pub mu0: Marginal<f64>,
    pub mu_n: Marginal<f64>,
    pub horizon: usize,
}

pub fn bridge_instance(rng: &mut impl Rng, n: usize, horizon: usize) -> BridgeInstance {
    let pat = pattern(rng, n, 0.6);
    let a = stochastic_on(rng, &pat);
    let b = stochastic_on(rng, &pat);
    let mu0 = probability(rng, n);
    let mu_n = renormalise(push_n(&mu0, &b, horizon));
    BridgeInstance {
        kernel: Kernel::homogeneous(a).unwrap(),
        mu0: Marginal::probability(mu0).unwrap(),
        mu_n: Marginal::probability(mu_n).unwrap(),
        horizon,
    }
}

pub fn renormalise(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub struct MultiInstance {
    pub model: Vec<CommodityModel<f64>>,
    pub mu0: Marginal<f64>,
    pub mu_n: Marginal<f64>,
    pub horizon: usize,
}

/// Dense commodity kernels; the targets are the aggregate of a perturbed
/// population so they differ from the prior aggregate.
pub fn multi_instance(rng: &mut impl Rng, k: usize, n: usize, horizon: usize) -> MultiInstance {
    let weights = probability(rng, k);
    let full = vec![vec![true; n]; n];
    let model: Vec<CommodityModel<f64>> = weights
        .iter()
        .map(|&w| {
            let a = stochastic_on(rng, &full);
            CommodityModel::new(w, Kernel::homogeneous(a).unwrap(), Marginal::probability(probability(rng, n)).unwrap())
                .unwrap()
        })
        .collect();
    let mu0 = probability(rng, n);
    let b = stochastic_on(rng, &full);
    let mu_n = renormalise(push_n(&mu0, &b, horizon));
    MultiInstance {
        model,
        mu0: Marginal::probability(mu0).unwrap(),
        mu_n: Marginal::probability(mu_n).unwrap(),
        horizon,
    }
}
