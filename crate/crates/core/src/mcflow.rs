//! Multi-commodity most-likely flow from aggregate endpoint histograms.
//!
//! Individuals belong to commodity `k` with prior weight `p_k` and move by the
//! commodity's own kernel `A_k` from initial law `r_k`. Only the commodity-blind
//! totals `mu_0`, `mu_N` are observed. The most likely joint law over
//! `(k, path)` is an entropic multi-marginal transport problem whose cost
//! splits into `N` three-index factors, so Sinkhorn scaling can be run as
//! message passing along the time chain with the commodity index carried by
//! the interior messages:
//!
//! ```text
//! phi(t,.,k)     = A_k phi(t+1,.,k)                       1 <= t <= N-2
//! phi_hat(t+1,.,k) = A_k^T phi_hat(t,.,k)
//! phi(0,i)       = sum_{k,j} p_k r_k(i) A_k(i,j) phi(1,j,k)
//! phi_hat(1,j,k) = sum_i p_k r_k(i) A_k(i,j) phi_hat(0,i)
//! phi(N-1,i,k)   = sum_j A_k(i,j) phi(N,j)
//! phi_hat(N,j)   = sum_{k,i} A_k(i,j) phi_hat(N-1,i,k)
//! phi(0) phi_hat(0) = mu_0,   phi(N) phi_hat(N) = mu_N
//! ```
//!
//! For `N = 1` the boundary layers are adjacent and the first and last lines
//! merge.

use rayon::prelude::*;

use crate::bridge::{apply_log, reweighted_kernel, SolverOptions};
use crate::error::{Error, Result};
use crate::graph::{reachable_backward, reachable_forward, validate_commodities, CommodityModel, Marginal};
use crate::matrix::Matrix;
use crate::oracle::{prior_path_measure, PathMeasure};
use crate::scalar::{exp0, ln0, log_div, lse, Scalar};

/// One time layer of potentials: commodity-free at the two boundary times,
/// one vector per commodity in between.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Shared(Vec<T>),
    PerCommodity(Vec<Vec<T>>),
}

impl<T: Scalar> Layer<T> {
    #[inline]
    pub fn get(&self, k: usize) -> &[T] {
        match self {
            Self::Shared(v) => v,
            Self::PerCommodity(v) => &v[k],
        }
    }

    fn shift(&mut self, s: T) {
        let shift = |v: &mut Vec<T>| v.iter_mut().for_each(|x| *x = *x + s);
        match self {
            Self::Shared(v) => shift(v),
            Self::PerCommodity(vs) => vs.iter_mut().for_each(shift),
        }
    }
}

/// Log-domain potentials for the multi-commodity system, layers `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommodityPotentials<T> {
    pub phi: Vec<Layer<T>>,
    pub phi_hat: Vec<Layer<T>>,
}

impl<T: Scalar> CommodityPotentials<T> {
    pub fn horizon(&self) -> usize {
        self.phi.len() - 1
    }

    /// `(c phi, phi_hat / c)` on every layer.
    pub fn scaled(&self, c: T) -> Self {
        let mut out = self.clone();
        out.shift(c.ln());
        out
    }

    fn shift(&mut self, s: T) {
        self.phi.iter_mut().for_each(|l| l.shift(s));
        self.phi_hat.iter_mut().for_each(|l| l.shift(-s));
    }

    fn normalize_ray(&mut self) {
        let s = self.phi_hat[0]
            .get(0)
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max);
        if s.is_finite() {
            self.shift(s);
        }
    }
}

/// Factored transport cost: `factors[t-1][k]` is `C^t(k, ., .)` for `t = 1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFactors<T> {
    pub factors: Vec<Vec<Matrix<T>>>,
}

impl<T: Scalar> CostFactors<T> {
    pub fn horizon(&self) -> usize {
        self.factors.len()
    }

    /// `C(k, i_0..i_N) = sum_t C^t(k, i_{t-1}, i_t)`.
    pub fn evaluate(&self, k: usize, path: &[usize]) -> T {
        self.factors
            .iter()
            .enumerate()
            .map(|(t, f)| f[k][(path[t], path[t + 1])])
            .fold(T::zero(), |a, b| a + b)
    }
}

/// `C^1 = -log r_k(i_0) A_k(i_0,i_1) - log p_k`, `C^t = -log A_k(i_{t-1}, i_t)`.
pub fn build_cost_factors<T: Scalar>(model: &[CommodityModel<T>], horizon: usize) -> Result<CostFactors<T>> {
    validate_commodities(model, horizon)?;
    let factors = (0..horizon)
        .map(|t| {
            model
                .iter()
                .map(|c| {
                    let a = c.kernel.step(t);
                    if t == 0 {
                        let lp = c.weight.ln();
                        Matrix::from_fn(a.rows(), a.cols(), |i, j| {
                            -ln0(c.initial[i] * a[(i, j)]) - lp
                        })
                    } else {
                        a.map(|v| -ln0(v))
                    }
                })
                .collect()
        })
        .collect();
    Ok(CostFactors { factors })
}

/// Large-deviation rate of the empirical population law `(M^1..M^K)`:
/// `sum_k KL(M^k || |M^k| Q_k) + sum_k |M^k| log(|M^k| / p_k)`.
pub fn rate_function<T: Scalar>(measures: &[PathMeasure<T>], model: &[CommodityModel<T>]) -> Result<T> {
    if measures.len() != model.len() || measures.is_empty() {
        return Err(Error::Dimension(format!(
            "{} measures for {} commodities",
            measures.len(),
            model.len()
        )));
    }
    let horizon = measures[0].horizon();
    validate_commodities(model, horizon)?;
    let masses: Vec<T> = measures.iter().map(PathMeasure::total_mass).collect();
    let total: T = masses.iter().copied().sum();
    if (total - T::one()).abs() > T::eps_num() {
        return Err(Error::Domain(format!("population masses sum to {total}, not 1")));
    }
    let mut rate = T::zero();
    for ((m, c), &mass) in measures.iter().zip(model).zip(&masses) {
        if mass == T::zero() {
            continue;
        }
        let q = prior_path_measure(c.initial.as_slice(), &c.kernel, horizon, m.len())?;
        if q.states() != m.states() {
            return Err(Error::Dimension("measure and prior state counts differ".into()));
        }
        for (&mv, &qv) in m.entries().iter().zip(q.entries()) {
            if mv > T::zero() {
                if qv == T::zero() {
                    return Ok(T::infinity());
                }
                rate = rate + mv * (mv / (mass * qv)).ln();
            }
        }
        rate = rate + mass * (mass / c.weight).ln();
    }
    Ok(rate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiCommoditySolution<T> {
    /// `transitions[k][t]` drives commodity `k` from `t` to `t+1`.
    pub transitions: Vec<Vec<Matrix<T>>>,
    /// `marginals[k][t]` is the flow `mu_t^k`.
    pub marginals: Vec<Vec<Vec<T>>>,
    pub masses: Vec<T>,
    pub potentials: CommodityPotentials<T>,
    pub iterations: usize,
    pub residual: T,
}

impl<T: Scalar> MultiCommoditySolution<T> {
    pub fn commodities(&self) -> usize {
        self.marginals.len()
    }

    pub fn horizon(&self) -> usize {
        self.marginals[0].len() - 1
    }

    /// `sum_k mu_t^k`.
    pub fn aggregate_marginal(&self, t: usize) -> Vec<T> {
        let n = self.marginals[0][t].len();
        let mut out = vec![T::zero(); n];
        for mk in &self.marginals {
            for (o, &v) in out.iter_mut().zip(&mk[t]) {
                *o = *o + v;
            }
        }
        out
    }

    /// Posterior path tensors `M^k`, each started from `mu_0^k`.
    pub fn path_measures(&self, cap: usize) -> Result<Vec<PathMeasure<T>>> {
        self.marginals
            .iter()
            .zip(&self.transitions)
            .map(|(mk, pk)| PathMeasure::from_markov(&mk[0], pk, cap))
            .collect()
    }

    /// Objective value (the rate of the posterior law) through the Markov
    /// decomposition, without materialising path tensors.
    pub fn objective(&self, model: &[CommodityModel<T>]) -> T {
        let mut total = T::zero();
        for (k, c) in model.iter().enumerate() {
            let m = self.masses[k];
            if m == T::zero() {
                continue;
            }
            total = total + m * (m / c.weight).ln();
            for (i, &v) in self.marginals[k][0].iter().enumerate() {
                if v > T::zero() {
                    total = total + v * (v / (m * c.initial[i])).ln();
                }
            }
            for t in 0..self.horizon() {
                let a = c.kernel.step(t);
                let pi = &self.transitions[k][t];
                for (i, &v) in self.marginals[k][t].iter().enumerate() {
                    if v == T::zero() {
                        continue;
                    }
                    for (&pv, &av) in pi.row(i).iter().zip(a.row(i)) {
                        if pv > T::zero() {
                            total = total + v * pv * (pv / av).ln();
                        }
                    }
                }
            }
        }
        total
    }
}

/// Commodity shares `m_k`, checked to be the same at every time.
pub fn commodity_masses<T: Scalar>(sol: &MultiCommoditySolution<T>) -> Result<Vec<T>> {
    let tol = T::lit(1e-9).max(T::eps_num());
    for (k, mk) in sol.marginals.iter().enumerate() {
        for (t, layer) in mk.iter().enumerate() {
            let m: T = layer.iter().copied().sum();
            if (m - sol.masses[k]).abs() > tol {
                return Err(Error::Inconsistent(format!(
                    "commodity {k} has mass {m} at t={t}, {} at t=0",
                    sol.masses[k]
                )));
            }
        }
    }
    Ok(sol.masses.clone())
}

/// Log tables reused across sweeps.
struct LogModel<T> {
    /// `log_a[k][t]`
    log_a: Vec<Vec<Matrix<T>>>,
    /// `log p_k + log r_k(i)`
    log_w: Vec<Vec<T>>,
}

impl<T: Scalar> LogModel<T> {
    fn new(model: &[CommodityModel<T>], horizon: usize) -> Self {
        Self {
            log_a: model.iter().map(|c| c.kernel.log_steps(horizon)).collect(),
            log_w: model
                .iter()
                .map(|c| {
                    let lp = c.weight.ln();
                    c.initial.as_slice().iter().map(|&r| ln0(r) + lp).collect()
                })
                .collect(),
        }
    }

    fn k(&self) -> usize {
        self.log_a.len()
    }

    /// Message into `t = 1` for commodity `k` from the shared `phi_hat(0)`.
    fn first_forward(&self, k: usize, hat0: &[T], stab: bool) -> Vec<T> {
        let weighted: Vec<T> = hat0.iter().zip(&self.log_w[k]).map(|(&h, &w)| h + w).collect();
        apply_log(&self.log_a[k][0], &weighted, true, stab)
    }

    /// `sum_j A_k(0)(i, j) exp(beta1[j])` in log form, without the `p_k r_k` weight.
    fn first_backward(&self, k: usize, beta1: &[T], stab: bool) -> Vec<T> {
        apply_log(&self.log_a[k][0], beta1, false, stab)
    }

    /// Forward messages `alpha_k(t)` for `t = 1..=N`.
    fn forward_messages(&self, hat0: &[T], horizon: usize, stab: bool) -> Vec<Vec<Vec<T>>> {
        (0..self.k())
            .into_par_iter()
            .map(|k| {
                let mut alpha = Vec::with_capacity(horizon);
                alpha.push(self.first_forward(k, hat0, stab));
                for t in 1..horizon {
                    let next = apply_log(&self.log_a[k][t], &alpha[t - 1], true, stab);
                    alpha.push(next);
                }
                alpha
            })
            .collect()
    }

    /// Backward messages `beta_k(t)` for `t = 0..=N`; `beta_k(N) = phi(N)` and
    /// `beta_k(0)` excludes the initial weight.
    fn backward_messages(&self, phi_n: &[T], horizon: usize, stab: bool) -> Vec<Vec<Vec<T>>> {
        (0..self.k())
            .into_par_iter()
            .map(|k| {
                let mut beta = vec![Vec::new(); horizon + 1];
                beta[horizon] = phi_n.to_vec();
                for t in (1..horizon).rev() {
                    beta[t] = apply_log(&self.log_a[k][t], &beta[t + 1], false, stab);
                }
                beta[0] = self.first_backward(k, &beta[1], stab);
                beta
            })
            .collect()
    }
}

fn reduce_over_commodities<T: Scalar>(per_k: &[Vec<T>], stab: bool) -> Vec<T> {
    let n = per_k[0].len();
    (0..n)
        .map(|i| lse(per_k.iter().map(|v| v[i]), stab))
        .collect()
}

fn check_multicommodity_support<T: Scalar>(
    model: &[CommodityModel<T>],
    mu0: &Marginal<T>,
    mu_n: &Marginal<T>,
    horizon: usize,
) -> Result<()> {
    let n = mu0.len();
    let target = mu_n.support();
    let mut reach = vec![false; n];
    let mut covered = vec![false; n];
    for c in model {
        let start: Vec<bool> = (0..n)
            .map(|i| mu0[i] > T::zero() && c.initial[i] > T::zero())
            .collect();
        for (r, f) in reach
            .iter_mut()
            .zip(reachable_forward(&start, &[&c.kernel], horizon))
        {
            *r |= f;
        }
        let back = reachable_backward(&target, &[&c.kernel], horizon);
        for i in 0..n {
            covered[i] |= start[i] && back[i];
        }
    }
    if let Some(j) = (0..n).find(|&j| target[j] && !reach[j]) {
        return Err(Error::Infeasible(format!(
            "target mass at vertex {j} is unreachable under every commodity's prior"
        )));
    }
    if let Some(i) = (0..n).find(|&i| mu0[i] > T::zero() && !covered[i]) {
        return Err(Error::Infeasible(format!(
            "initial mass at vertex {i} cannot be attributed to any commodity reaching the target"
        )));
    }
    Ok(())
}

/// Sinkhorn belief propagation for the aggregate-constrained multi-commodity problem.
pub fn solve_multicommodity<T: Scalar>(
    model: &[CommodityModel<T>],
    mu0: &Marginal<T>,
    mu_n: &Marginal<T>,
    horizon: usize,
    opts: &SolverOptions<T>,
) -> Result<MultiCommoditySolution<T>> {
    let n = validate_commodities(model, horizon)?;
    if mu0.len() != n || mu_n.len() != n {
        return Err(Error::Dimension(format!(
            "marginals have {} and {} entries, model has {n} states",
            mu0.len(),
            mu_n.len()
        )));
    }
    for (name, m) in [("mu0", mu0), ("muN", mu_n)] {
        if !m.is_probability() {
            return Err(Error::Validation(format!("{name} has mass {}, expected 1", m.mass())));
        }
    }
    check_multicommodity_support(model, mu0, mu_n, horizon)?;

    let lm = LogModel::new(model, horizon);
    let stab = opts.log_domain;
    let log_mu0: Vec<T> = mu0.as_slice().iter().map(|&v| ln0(v)).collect();
    let log_mu_n: Vec<T> = mu_n.as_slice().iter().map(|&v| ln0(v)).collect();

    let mut hat0 = vec![T::zero(); n];
    let mut phi0 = vec![T::zero(); n];
    let mut phi_n = vec![T::zero(); n];
    let mut hat_n;
    let mut alpha;
    let mut beta = Vec::new();
    let mut iterations = 0;
    let residual;
    loop {
        // forward pass: interior phi_hat layers, then phi_hat(N)
        alpha = lm.forward_messages(&hat0, horizon, stab);
        let last: Vec<Vec<T>> = alpha.iter().map(|a| a[horizon - 1].clone()).collect();
        hat_n = reduce_over_commodities(&last, stab);
        if iterations > 0 {
            let r = endpoint_residual(&phi0, &hat0, mu0.as_slice())
                + endpoint_residual(&phi_n, &hat_n, mu_n.as_slice());
            if !r.is_finite() || (r > opts.tol && iterations >= opts.max_iter) {
                return Err(Error::NotConverged {
                    iterations,
                    residual: r.as_f64(),
                });
            }
            if r <= opts.tol {
                residual = r;
                break;
            }
        }
        phi_n = log_mu_n.iter().zip(&hat_n).map(|(&m, &h)| log_div(m, h)).collect();
        // backward pass: interior phi layers, then phi(0)
        beta = lm.backward_messages(&phi_n, horizon, stab);
        let first: Vec<Vec<T>> = beta
            .iter()
            .enumerate()
            .map(|(k, b)| b[0].iter().zip(&lm.log_w[k]).map(|(&x, &w)| x + w).collect())
            .collect();
        phi0 = reduce_over_commodities(&first, stab);
        hat0 = log_mu0.iter().zip(&phi0).map(|(&m, &p)| log_div(m, p)).collect();
        iterations += 1;
    }

    let mut potentials = CommodityPotentials {
        phi: layers(phi0, &beta, 0, phi_n, horizon),
        phi_hat: layers(hat0, &alpha, 1, hat_n, horizon),
    };
    potentials.normalize_ray();
    let (transitions, marginals) = assemble(model, &lm, &potentials, stab)?;
    let masses = marginals
        .iter()
        .map(|mk| mk[0].iter().copied().sum())
        .collect();
    Ok(MultiCommoditySolution {
        transitions,
        marginals,
        masses,
        potentials,
        iterations,
        residual,
    })
}

fn endpoint_residual<T: Scalar>(lphi: &[T], lhat: &[T], target: &[T]) -> T {
    lphi.iter()
        .zip(lhat)
        .zip(target)
        .map(|((&a, &b), &m)| (exp0(a + b) - m).abs())
        .sum()
}

/// Packs per-commodity messages into potential layers `0..=N`; `per_k[k][0]`
/// holds time `first_time`.
fn layers<T: Scalar>(
    first: Vec<T>,
    per_k: &[Vec<Vec<T>>],
    first_time: usize,
    last: Vec<T>,
    horizon: usize,
) -> Vec<Layer<T>> {
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(Layer::Shared(first));
    for t in 1..horizon {
        out.push(Layer::PerCommodity(
            per_k.iter().map(|v| v[t - first_time].clone()).collect(),
        ));
    }
    out.push(Layer::Shared(last));
    out
}

/// Posterior kernels and flows implied by a set of potentials.
fn assemble<T: Scalar>(
    model: &[CommodityModel<T>],
    lm: &LogModel<T>,
    pot: &CommodityPotentials<T>,
    stab: bool,
) -> Result<(Vec<Vec<Matrix<T>>>, Vec<Vec<Vec<T>>>)> {
    let horizon = pot.horizon();
    let hat0 = pot.phi_hat[0].get(0);
    let phi_n = pot.phi[horizon].get(0);
    let per_k: Vec<Result<(Vec<Matrix<T>>, Vec<Vec<T>>)>> = (0..model.len())
        .into_par_iter()
        .map(|k| {
            // alpha_k(t) for t = 1..=N, beta_k(t) for t = 0..=N
            let mut alpha: Vec<Vec<T>> = (1..horizon).map(|t| pot.phi_hat[t].get(k).to_vec()).collect();
            let alpha_n = if horizon == 1 {
                lm.first_forward(k, hat0, stab)
            } else {
                apply_log(&lm.log_a[k][horizon - 1], &alpha[horizon - 2], true, stab)
            };
            alpha.push(alpha_n);
            let mut beta: Vec<Vec<T>> = (0..=horizon).map(|t| pot.phi[t].get(k).to_vec()).collect();
            beta[0] = lm.first_backward(k, &beta[1], stab);

            let mut marg = Vec::with_capacity(horizon + 1);
            marg.push(
                (0..hat0.len())
                    .map(|i| exp0(hat0[i] + lm.log_w[k][i] + beta[0][i]))
                    .collect::<Vec<T>>(),
            );
            for t in 1..horizon {
                marg.push(
                    alpha[t - 1]
                        .iter()
                        .zip(&beta[t])
                        .map(|(&a, &b)| exp0(a + b))
                        .collect(),
                );
            }
            marg.push(
                phi_n
                    .iter()
                    .zip(&alpha[horizon - 1])
                    .map(|(&p, &a)| exp0(p + a))
                    .collect(),
            );
            let trans = (0..horizon)
                .map(|t| {
                    reweighted_kernel(
                        model[k].kernel.step(t),
                        &lm.log_a[k][t],
                        &beta[t],
                        &beta[t + 1],
                        &marg[t],
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((trans, marg))
        })
        .collect();
    let mut transitions = Vec::with_capacity(model.len());
    let mut marginals = Vec::with_capacity(model.len());
    for r in per_k {
        let (t, m) = r?;
        transitions.push(t);
        marginals.push(m);
    }
    Ok((transitions, marginals))
}

/// Posterior kernels `pi_t^k` for arbitrary potentials (e.g. a rescaled ray representative).
pub fn posterior_kernels<T: Scalar>(
    model: &[CommodityModel<T>],
    potentials: &CommodityPotentials<T>,
) -> Result<Vec<Vec<Matrix<T>>>> {
    let horizon = potentials.horizon();
    validate_commodities(model, horizon)?;
    let lm = LogModel::new(model, horizon);
    Ok(assemble(model, &lm, potentials, true)?.0)
}

/// Residuals of the six message equations and the boundary products.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FbResiduals<T> {
    pub interior_backward: T,
    pub interior_forward: T,
    pub initial_backward: T,
    pub initial_forward: T,
    pub terminal_backward: T,
    pub terminal_forward: T,
    pub boundary: T,
}

impl<T: Scalar> FbResiduals<T> {
    pub fn max_equation(&self) -> T {
        [
            self.interior_backward,
            self.interior_forward,
            self.initial_backward,
            self.initial_forward,
            self.terminal_backward,
            self.terminal_forward,
        ]
        .into_iter()
        .fold(T::zero(), T::max)
    }
}

/// `max_i |exp(have_i) - exp(want_i)| / max_i exp(have_i)`.
fn relative_gap<T: Scalar>(have: &[T], want: &[T]) -> T {
    let s = have
        .iter()
        .chain(want)
        .copied()
        .fold(T::neg_infinity(), T::max);
    if s == T::neg_infinity() {
        return T::zero();
    }
    have.iter()
        .zip(want)
        .map(|(&a, &b)| (exp0(a - s) - exp0(b - s)).abs())
        .fold(T::zero(), T::max)
}

/// Re-evaluates every equation of the system at `potentials`.
pub fn fb_residuals<T: Scalar>(
    model: &[CommodityModel<T>],
    potentials: &CommodityPotentials<T>,
    mu0: &[T],
    mu_n: &[T],
) -> Result<FbResiduals<T>> {
    let horizon = potentials.horizon();
    validate_commodities(model, horizon)?;
    let lm = LogModel::new(model, horizon);
    let (phi, hat) = (&potentials.phi, &potentials.phi_hat);
    let mut r = FbResiduals::<T>::default();
    for k in 0..model.len() {
        for t in 1..horizon.saturating_sub(1) {
            let want = apply_log(&lm.log_a[k][t], phi[t + 1].get(k), false, true);
            r.interior_backward = r.interior_backward.max(relative_gap(phi[t].get(k), &want));
            let want = apply_log(&lm.log_a[k][t], hat[t].get(k), true, true);
            r.interior_forward = r.interior_forward.max(relative_gap(hat[t + 1].get(k), &want));
        }
        if horizon >= 2 {
            let want = lm.first_forward(k, hat[0].get(0), true);
            r.initial_forward = r.initial_forward.max(relative_gap(hat[1].get(k), &want));
            let want = apply_log(&lm.log_a[k][horizon - 1], phi[horizon].get(0), false, true);
            r.terminal_backward = r
                .terminal_backward
                .max(relative_gap(phi[horizon - 1].get(k), &want));
        }
    }
    let first: Vec<Vec<T>> = (0..model.len())
        .map(|k| {
            lm.first_backward(k, phi[1].get(k), true)
                .iter()
                .zip(&lm.log_w[k])
                .map(|(&x, &w)| x + w)
                .collect()
        })
        .collect();
    r.initial_backward = relative_gap(phi[0].get(0), &reduce_over_commodities(&first, true));
    let last: Vec<Vec<T>> = (0..model.len())
        .map(|k| {
            if horizon == 1 {
                lm.first_forward(k, hat[0].get(0), true)
            } else {
                apply_log(&lm.log_a[k][horizon - 1], hat[horizon - 1].get(k), true, true)
            }
        })
        .collect();
    r.terminal_forward = relative_gap(hat[horizon].get(0), &reduce_over_commodities(&last, true));
    r.boundary = endpoint_residual(phi[0].get(0), hat[0].get(0), mu0)
        + endpoint_residual(phi[horizon].get(0), hat[horizon].get(0), mu_n);
    Ok(r)
}
