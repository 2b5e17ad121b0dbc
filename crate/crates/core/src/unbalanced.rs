//! Creation and killing through a single parking state.
//!
//! A substochastic kernel `A` loses mass `b = 1 - A 1` at each vertex; parked
//! individuals re-enter at vertex `j` with probability `c_j` and stay parked
//! with probability `d = 1 - c^T 1`. The augmented chain
//!
//! ```text
//! A_hat = [ A    b ]
//!         [ c^T  d ]
//! ```
//!
//! is stochastic on `n + 1` states, so the unbalanced problem is an ordinary
//! bridge on the augmented chain. This module builds the augmentation, splits
//! the augmented potentials into graph and parking parts and reassembles the
//! posterior from its four blocks.

use crate::bridge::{solve_bridge, BridgeSolution, SolverOptions};
use crate::error::{Error, Result};
use crate::graph::{CommodityModel, Kernel, Marginal};
use crate::matrix::Matrix;
use crate::mcflow::{solve_multicommodity, MultiCommoditySolution};
use crate::scalar::{exp0, ln0, Scalar};

/// Prior creation probabilities out of the parking state.
#[derive(Debug, Clone, PartialEq)]
pub enum Creation<T> {
    Homogeneous(Vec<T>),
    TimeVarying(Vec<Vec<T>>),
}

impl<T: Scalar> Creation<T> {
    pub fn at(&self, t: usize) -> &[T] {
        match self {
            Self::Homogeneous(c) => c,
            Self::TimeVarying(v) => &v[t],
        }
    }

    fn steps(&self) -> usize {
        match self {
            Self::Homogeneous(_) => 1,
            Self::TimeVarying(v) => v.len(),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::Homogeneous(vec![T::zero(); n])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedKernel<T> {
    base: Kernel<T>,
    creation: Creation<T>,
    augmented: Kernel<T>,
}

impl<T: Scalar> AugmentedKernel<T> {
    /// Number of graph vertices (the parking state is index `n`).
    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn parking(&self) -> usize {
        self.base.n()
    }

    pub fn base(&self) -> &Kernel<T> {
        &self.base
    }

    /// The `(n+1) x (n+1)` stochastic kernel.
    pub fn kernel(&self) -> &Kernel<T> {
        &self.augmented
    }

    pub fn creation(&self, t: usize) -> &[T] {
        self.creation.at(t)
    }

    /// Kill probabilities `b = 1 - A 1` at step `t`.
    pub fn kill(&self, t: usize) -> Vec<T> {
        let m = self.augmented.step(t);
        (0..self.n()).map(|i| m[(i, self.n())]).collect()
    }

    /// Probability of staying parked, `d = 1 - c^T 1`.
    pub fn stay(&self, t: usize) -> T {
        self.augmented.step(t)[(self.n(), self.n())]
    }
}

/// Builds `[[A, b], [c^T, d]]`.
pub fn augment<T: Scalar>(base: &Kernel<T>, creation: Creation<T>) -> Result<AugmentedKernel<T>> {
    base.ensure_substochastic().map_err(|e| Error::Domain(e.to_string()))?;
    let n = base.n();
    let eps = T::eps_num();
    for s in 0..creation.steps() {
        let c = creation.at(s);
        if c.len() != n {
            return Err(Error::Dimension(format!(
                "creation vector has {} entries for {n} vertices",
                c.len()
            )));
        }
        if c.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(Error::Domain("creation probabilities must be nonnegative".into()));
        }
        let total: T = c.iter().copied().sum();
        if total > T::one() + eps {
            return Err(Error::Domain(format!("creation probabilities sum to {total} > 1")));
        }
    }
    let steps = match (&base, &creation) {
        (Kernel::TimeVarying(v), Creation::TimeVarying(c)) if v.len() != c.len() => {
            return Err(Error::Dimension(format!(
                "kernel has {} steps, creation has {}",
                v.len(),
                c.len()
            )))
        }
        (Kernel::TimeVarying(v), _) => v.len(),
        (_, Creation::TimeVarying(c)) => c.len(),
        _ => 1,
    };
    let block = |t: usize| {
        let a = base.step(t);
        let c = creation.at(t);
        let mut m = Matrix::zeros(n + 1, n + 1);
        for i in 0..n {
            let mut kept = T::zero();
            for j in 0..n {
                m[(i, j)] = a[(i, j)];
                kept = kept + a[(i, j)];
            }
            m[(i, n)] = (T::one() - kept).max(T::zero());
        }
        let mut created = T::zero();
        for j in 0..n {
            m[(n, j)] = c[j];
            created = created + c[j];
        }
        m[(n, n)] = (T::one() - created).max(T::zero());
        m
    };
    let augmented = if base.is_time_varying() || matches!(creation, Creation::TimeVarying(_)) {
        Kernel::time_varying((0..steps).map(block).collect())?
    } else {
        Kernel::homogeneous(block(0))?
    };
    Ok(AugmentedKernel {
        base: base.clone(),
        creation,
        augmented,
    })
}

/// Appends the missing mass as a parking coordinate.
pub fn augment_marginals<T: Scalar>(mu0: &Marginal<T>, mu_n: &Marginal<T>) -> Result<(Marginal<T>, Marginal<T>)> {
    let pad = |m: &Marginal<T>| -> Result<Marginal<T>> {
        if m.mass() > T::one() + T::eps_num() {
            return Err(Error::Domain(format!("marginal mass {} exceeds 1", m.mass())));
        }
        let mut v = m.as_slice().to_vec();
        v.push((T::one() - m.mass()).max(T::zero()));
        Marginal::new(v)
    };
    Ok((pad(mu0)?, pad(mu_n)?))
}

/// Augmented potentials split into graph vertices and the parking state (log domain).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPotentials<T> {
    pub log_phi: Vec<Vec<T>>,
    pub log_psi: Vec<T>,
    pub log_phi_hat: Vec<Vec<T>>,
    pub log_psi_hat: Vec<T>,
}

impl<T: Scalar> AugmentedPotentials<T> {
    fn split(sol: &BridgeSolution<T>, n: usize) -> Self {
        let p = &sol.potentials;
        let horizon = p.horizon();
        Self {
            log_phi: (0..=horizon).map(|t| p.log_phi(t)[..n].to_vec()).collect(),
            log_psi: (0..=horizon).map(|t| p.log_phi(t)[n]).collect(),
            log_phi_hat: (0..=horizon).map(|t| p.log_phi_hat(t)[..n].to_vec()).collect(),
            log_psi_hat: (0..=horizon).map(|t| p.log_phi_hat(t)[n]).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.log_psi.len() - 1
    }

    /// `(c phi, c psi, phi_hat / c, psi_hat / c)`.
    pub fn scaled(&self, c: T) -> Self {
        let lc = c.ln();
        let sh = |v: &[Vec<T>], s: T| v.iter().map(|l| l.iter().map(|&x| x + s).collect()).collect();
        Self {
            log_phi: sh(&self.log_phi, lc),
            log_psi: self.log_psi.iter().map(|&x| x + lc).collect(),
            log_phi_hat: sh(&self.log_phi_hat, -lc),
            log_psi_hat: self.log_psi_hat.iter().map(|&x| x - lc).collect(),
        }
    }

    /// `[phi_t phi_hat_t; psi_t psi_hat_t]`.
    pub fn marginal(&self, t: usize) -> Vec<T> {
        let mut v: Vec<T> = self.log_phi[t]
            .iter()
            .zip(&self.log_phi_hat[t])
            .map(|(&a, &b)| exp0(a + b))
            .collect();
        v.push(exp0(self.log_psi[t] + self.log_psi_hat[t]));
        v
    }
}

/// Which time index multiplies the creation row of the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CreationRowIndex {
    /// `c^T diag(phi_{t+1}) / psi_t`, the row-stochastic form.
    #[default]
    Next,
    /// `c^T diag(phi_t) / psi_t`, as sometimes printed; rows generally fail to sum to one.
    Current,
}

/// Posterior transition matrices from the four blocks.
pub fn assemble_transitions<T: Scalar>(
    aug: &AugmentedKernel<T>,
    pot: &AugmentedPotentials<T>,
    index: CreationRowIndex,
) -> Vec<Matrix<T>> {
    let n = aug.n();
    (0..pot.horizon())
        .map(|t| {
            let mass = pot.marginal(t);
            let prior = aug.kernel().step(t);
            let a = aug.base().step(t);
            let b = aug.kill(t);
            let c = aug.creation(t);
            let d = aug.stay(t);
            let (lphi, lphi1) = (&pot.log_phi[t], &pot.log_phi[t + 1]);
            let (lpsi, lpsi1) = (pot.log_psi[t], pot.log_psi[t + 1]);
            let mut m = Matrix::zeros(n + 1, n + 1);
            for i in 0..n {
                if mass[i] == T::zero() {
                    m.row_mut(i).copy_from_slice(prior.row(i));
                    continue;
                }
                for j in 0..n {
                    m[(i, j)] = exp0(ln0(a[(i, j)]) + lphi1[j] - lphi[i]);
                }
                m[(i, n)] = exp0(ln0(b[i]) + lpsi1 - lphi[i]);
            }
            if mass[n] == T::zero() {
                m.row_mut(n).copy_from_slice(prior.row(n));
            } else {
                let lphi_c = match index {
                    CreationRowIndex::Next => lphi1,
                    CreationRowIndex::Current => lphi,
                };
                for j in 0..n {
                    m[(n, j)] = exp0(ln0(c[j]) + lphi_c[j] - lpsi);
                }
                m[(n, n)] = exp0(ln0(d) + lpsi1 - lpsi);
            }
            m
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnbalancedSolution<T> {
    pub n: usize,
    /// `(n+1) x (n+1)` posterior per step.
    pub transitions: Vec<Matrix<T>>,
    /// Augmented flow; the last coordinate is the parked mass.
    pub marginals: Vec<Vec<T>>,
    pub potentials: AugmentedPotentials<T>,
    /// Posterior kill probability `[t][i]`.
    pub kill_rates: Vec<Vec<T>>,
    /// Posterior creation probability `[t][j]` out of the parking state.
    pub creation_rates: Vec<Vec<T>>,
    pub iterations: usize,
    pub residual: T,
}

/// Parking-state bookkeeping for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParkingFlow<T> {
    pub t: usize,
    pub parked: T,
    /// Mass leaving the parking state during `t -> t+1`.
    pub created: T,
    /// Mass entering the parking state during `t -> t+1`.
    pub killed: T,
}

impl<T: Scalar> UnbalancedSolution<T> {
    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    /// One row per time `0..=N`; fluxes at `t = N` are zero.
    pub fn parking_flows(&self) -> Vec<ParkingFlow<T>> {
        let n = self.n;
        (0..=self.horizon())
            .map(|t| {
                let parked = self.marginals[t][n];
                let (created, killed) = if t < self.horizon() {
                    let p = &self.transitions[t];
                    let created = parked * (0..n).map(|j| p[(n, j)]).sum::<T>();
                    let killed = (0..n).map(|i| self.marginals[t][i] * p[(i, n)]).sum::<T>();
                    (created, killed)
                } else {
                    (T::zero(), T::zero())
                };
                ParkingFlow {
                    t,
                    parked,
                    created,
                    killed,
                }
            })
            .collect()
    }

    /// Mass on graph vertices at each time (everything not parked).
    pub fn moving_mass(&self) -> Vec<T> {
        self.marginals
            .iter()
            .map(|m| m[..self.n].iter().copied().sum())
            .collect()
    }
}

/// Solves the augmented bridge and splits the result into graph and parking parts.
pub fn solve_unbalanced<T: Scalar>(
    aug: &AugmentedKernel<T>,
    mu0_hat: &Marginal<T>,
    mu_n_hat: &Marginal<T>,
    horizon: usize,
    opts: &SolverOptions<T>,
) -> Result<UnbalancedSolution<T>> {
    let n = aug.n();
    if mu0_hat.len() != n + 1 || mu_n_hat.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "augmented marginals need {} entries",
            n + 1
        )));
    }
    let sol = solve_bridge(aug.kernel(), mu0_hat, mu_n_hat, horizon, opts)?;
    let potentials = AugmentedPotentials::split(&sol, n);
    let transitions = assemble_transitions(aug, &potentials, CreationRowIndex::Next);
    let kill_rates = transitions
        .iter()
        .map(|m| (0..n).map(|i| m[(i, n)]).collect())
        .collect();
    let creation_rates = transitions
        .iter()
        .map(|m| (0..n).map(|j| m[(n, j)]).collect())
        .collect();
    Ok(UnbalancedSolution {
        n,
        transitions,
        marginals: sol.marginals,
        potentials,
        kill_rates,
        creation_rates,
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

/// Graph block of the posterior, `diag(phi_t)^-1 A diag(phi_{t+1})`, with its
/// row-sum deficit (the posterior kill probability `b_i psi_{t+1} / phi_t(i)`).
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedPosterior<T> {
    pub kernel: Matrix<T>,
    pub kill_probability: Vec<T>,
}

impl<T: Scalar> RestrictedPosterior<T> {
    pub fn row_sum_deficit(&self) -> Vec<T> {
        self.kernel
            .row_sums()
            .into_iter()
            .map(|s| T::one() - s)
            .collect()
    }
}

pub fn restricted_posterior<T: Scalar>(
    aug: &AugmentedKernel<T>,
    sol: &UnbalancedSolution<T>,
    t: usize,
) -> Result<RestrictedPosterior<T>> {
    if t >= sol.horizon() {
        return Err(Error::Domain(format!("step {t} outside horizon {}", sol.horizon())));
    }
    let n = sol.n;
    let pot = &sol.potentials;
    let a = aug.base().step(t);
    let b = aug.kill(t);
    let mass = &sol.marginals[t];
    let mut kernel = Matrix::zeros(n, n);
    let mut kill_probability = vec![T::zero(); n];
    for i in 0..n {
        if mass[i] == T::zero() {
            // carries no mass: reuse the prior convention of the full posterior
            for j in 0..n {
                kernel[(i, j)] = sol.transitions[t][(i, j)];
            }
            kill_probability[i] = sol.transitions[t][(i, n)];
            continue;
        }
        if pot.log_phi[t][i] == T::neg_infinity() {
            return Err(Error::Inconsistent(format!(
                "potential vanishes at vertex {i} which carries mass {}",
                mass[i]
            )));
        }
        for j in 0..n {
            kernel[(i, j)] = exp0(ln0(a[(i, j)]) + pot.log_phi[t + 1][j] - pot.log_phi[t][i]);
        }
        kill_probability[i] = exp0(ln0(b[i]) + pot.log_psi[t + 1] - pot.log_phi[t][i]);
    }
    Ok(RestrictedPosterior {
        kernel,
        kill_probability,
    })
}

/// Relative residuals of the four blocks of the augmented Schrödinger system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentedResiduals<T> {
    pub forward: T,
    pub backward: T,
    pub initial: T,
    pub terminal: T,
}

impl<T: Scalar> AugmentedResiduals<T> {
    pub fn max(&self) -> T {
        self.forward.max(self.backward).max(self.initial).max(self.terminal)
    }
}

fn relative_gap<T: Scalar>(have: &[T], want: &[T]) -> T {
    let s = have.iter().copied().fold(T::zero(), T::max);
    if s == T::zero() {
        return want.iter().copied().fold(T::zero(), T::max);
    }
    have.iter()
        .zip(want)
        .map(|(&a, &b)| (a - b).abs() / s)
        .fold(T::zero(), T::max)
}

/// Evaluates the block equations in the linear domain, each layer rescaled by its maximum.
pub fn block_residuals<T: Scalar>(
    aug: &AugmentedKernel<T>,
    pot: &AugmentedPotentials<T>,
    mu0_hat: &[T],
    mu_n_hat: &[T],
) -> AugmentedResiduals<T> {
    let n = aug.n();
    let horizon = pot.horizon();
    let layer = |lphi: &[T], lpsi: T, shift: T| -> (Vec<T>, T) {
        (
            lphi.iter().map(|&v| exp0(v - shift)).collect(),
            exp0(lpsi - shift),
        )
    };
    let max_of = |lphi: &[T], lpsi: T| lphi.iter().copied().fold(lpsi, T::max);
    let mut r = AugmentedResiduals::<T>::default();
    for t in 0..horizon {
        let a = aug.base().step(t);
        let b = aug.kill(t);
        let c = aug.creation(t);
        let d = aug.stay(t);

        // [A b; c^T d] [phi_{t+1}; psi_{t+1}] = [phi_t; psi_t]
        let s = max_of(&pot.log_phi[t], pot.log_psi[t]);
        if s.is_finite() {
            let (phi, psi) = layer(&pot.log_phi[t], pot.log_psi[t], s);
            let (phi1, psi1) = layer(&pot.log_phi[t + 1], pot.log_psi[t + 1], s);
            let mut want: Vec<T> = (0..n)
                .map(|i| (0..n).map(|j| a[(i, j)] * phi1[j]).sum::<T>() + b[i] * psi1)
                .collect();
            want.push((0..n).map(|j| c[j] * phi1[j]).sum::<T>() + d * psi1);
            let mut have = phi;
            have.push(psi);
            r.backward = r.backward.max(relative_gap(&have, &want));
        }

        // [A^T c; b^T d] [phi_hat_t; psi_hat_t] = [phi_hat_{t+1}; psi_hat_{t+1}]
        let s = max_of(&pot.log_phi_hat[t + 1], pot.log_psi_hat[t + 1]);
        if s.is_finite() {
            let (hat, psi_hat) = layer(&pot.log_phi_hat[t], pot.log_psi_hat[t], s);
            let (hat1, psi_hat1) = layer(&pot.log_phi_hat[t + 1], pot.log_psi_hat[t + 1], s);
            let mut want: Vec<T> = (0..n)
                .map(|j| (0..n).map(|i| a[(i, j)] * hat[i]).sum::<T>() + c[j] * psi_hat)
                .collect();
            want.push((0..n).map(|i| b[i] * hat[i]).sum::<T>() + d * psi_hat);
            let mut have = hat1;
            have.push(psi_hat1);
            r.forward = r.forward.max(relative_gap(&have, &want));
        }
    }
    let l1 = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum::<T>();
    r.initial = l1(&pot.marginal(0), mu0_hat);
    r.terminal = l1(&pot.marginal(horizon), mu_n_hat);
    r
}

/// Multi-commodity flow with killing and creation: each commodity's kernel is
/// augmented with its own creation vector and its initial law padded with a
/// prior parked fraction, then the aggregate problem is solved on `n + 1` states.
///
/// Experimental composition; the parking state is shared by all commodities.
pub fn solve_unbalanced_multicommodity<T: Scalar>(
    model: &[CommodityModel<T>],
    creation: &[Creation<T>],
    parked_prior: &[T],
    mu0: &Marginal<T>,
    mu_n: &Marginal<T>,
    horizon: usize,
    opts: &SolverOptions<T>,
) -> Result<MultiCommoditySolution<T>> {
    if creation.len() != model.len() || parked_prior.len() != model.len() {
        return Err(Error::Dimension(
            "need one creation vector and one parked fraction per commodity".into(),
        ));
    }
    let augmented = model
        .iter()
        .zip(creation)
        .zip(parked_prior)
        .map(|((c, cr), &rho)| {
            if !(rho >= T::zero()) || rho >= T::one() {
                return Err(Error::Domain(format!("parked fraction {rho} must lie in [0, 1)")));
            }
            let aug = augment(&c.kernel, cr.clone())?;
            let mut init: Vec<T> = c.initial.as_slice().iter().map(|&r| r * (T::one() - rho)).collect();
            init.push(rho);
            CommodityModel::new(c.weight, aug.kernel().clone(), Marginal::probability(init)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mu0_hat, mu_n_hat) = augment_marginals(mu0, mu_n)?;
    solve_multicommodity(&augmented, &mu0_hat, &mu_n_hat, horizon, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_bridge, prior_path_measure, OracleOptions, DEFAULT_CAP};

    fn kern(rows: &[&[f64]]) -> Kernel<f64> {
        Kernel::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn stochastic_kernel_without_creation_is_block_diagonal() {
        let aug = augment(&kern(&[&[0.3, 0.7], &[0.6, 0.4]]), Creation::zeros(2)).unwrap();
        assert_eq!(aug.kill(0), vec![0.0, 0.0]);
        assert_eq!(aug.stay(0), 1.0);
        let m = aug.kernel().step(0);
        assert_eq!(m.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn kill_and_stay_arithmetic() {
        let aug = augment(
            &kern(&[&[0.9, 0.0], &[0.2, 0.7]]),
            Creation::Homogeneous(vec![0.3, 0.3]),
        )
        .unwrap();
        let b = aug.kill(0);
        assert!((b[0] - 0.1).abs() < 1e-15 && (b[1] - 0.1).abs() < 1e-15);
        assert!((aug.stay(0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn augment_rejects_bad_inputs() {
        let a = kern(&[&[0.9, 0.2], &[0.2, 0.7]]);
        assert!(matches!(augment(&a, Creation::zeros(2)), Err(Error::Domain(_))));
        let a = kern(&[&[0.5, 0.2], &[0.2, 0.7]]);
        assert!(matches!(
            augment(&a, Creation::Homogeneous(vec![0.7, 0.7])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn marginal_padding() {
        let m = |v: Vec<f64>| Marginal::new(v).unwrap();
        let (a, b) = augment_marginals(&m(vec![0.5, 0.5]), &m(vec![0.3, 0.4])).unwrap();
        assert_eq!(a.as_slice()[2], 0.0);
        assert!((b.as_slice()[2] - 0.3).abs() < 1e-15);
        assert!(a.is_probability() && b.is_probability());
        let (a, b) = augment_marginals(&m(vec![0.3, 0.3]), &m(vec![0.5, 0.4])).unwrap();
        let net = a.as_slice()[2] - b.as_slice()[2];
        assert!((net - 0.3).abs() < 1e-15);
    }

    fn killing_instance() -> (AugmentedKernel<f64>, Marginal<f64>, Marginal<f64>) {
        let aug = augment(
            &kern(&[&[0.8, 0.1], &[0.1, 0.8]]),
            Creation::Homogeneous(vec![0.05, 0.05]),
        )
        .unwrap();
        let (m0, mn) = augment_marginals(
            &Marginal::new(vec![0.5, 0.5]).unwrap(),
            &Marginal::new(vec![0.3, 0.3]).unwrap(),
        )
        .unwrap();
        (aug, m0, mn)
    }

    #[test]
    fn killing_instance_matches_oracle_and_blocks_hold() {
        let (aug, m0, mn) = killing_instance();
        let sol = solve_unbalanced(&aug, &m0, &mn, 2, &SolverOptions::default()).unwrap();
        let q = prior_path_measure(&[1.0 / 3.0; 3], aug.kernel(), 2, DEFAULT_CAP).unwrap();
        assert_eq!(q.len(), 27);
        let exact = exact_bridge(&q, m0.as_slice(), mn.as_slice(), &OracleOptions::default()).unwrap();
        for t in 0..2 {
            let cond = exact.conditional(t);
            for i in 0..3 {
                if sol.marginals[t][i] > 0.0 {
                    for j in 0..3 {
                        assert!((sol.transitions[t][(i, j)] - cond[(i, j)]).abs() < 1e-8);
                    }
                }
            }
            let rs = sol.transitions[t].row_sums();
            assert!(rs.iter().all(|&s| (s - 1.0).abs() < 1e-12));
        }
        for t in 0..=2 {
            assert!((sol.marginals[t].iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let r = block_residuals(&aug, &sol.potentials, m0.as_slice(), mn.as_slice());
        assert!(r.forward < 1e-12 && r.backward < 1e-12, "{r:?}");
        assert!(r.initial + r.terminal <= 1e-9);
        let flows = sol.parking_flows();
        for t in 0..2 {
            let lhs = flows[t].parked - flows[t + 1].parked;
            assert!((lhs - (flows[t].created - flows[t].killed)).abs() < 1e-10);
        }
        let rp = restricted_posterior(&aug, &sol, 1).unwrap();
        for (d, k) in rp.row_sum_deficit().iter().zip(&rp.kill_probability) {
            assert!((d - k).abs() < 1e-12);
            assert!(*d > 0.0);
        }
    }

    #[test]
    fn creation_dominates_when_target_has_more_mass() {
        let aug = augment(
            &kern(&[&[0.8, 0.1], &[0.1, 0.8]]),
            Creation::Homogeneous(vec![0.05, 0.05]),
        )
        .unwrap();
        let (m0, mn) = augment_marginals(
            &Marginal::new(vec![0.3, 0.3]).unwrap(),
            &Marginal::new(vec![0.5, 0.4]).unwrap(),
        )
        .unwrap();
        let sol = solve_unbalanced(&aug, &m0, &mn, 2, &SolverOptions::default()).unwrap();
        let flows = sol.parking_flows();
        let created: f64 = flows.iter().map(|f| f.created).sum();
        let killed: f64 = flows.iter().map(|f| f.killed).sum();
        assert!(created > killed);
        assert!(sol.creation_rates[0].iter().all(|&c| c > 0.0));
    }

    #[test]
    fn printed_creation_row_is_not_stochastic() {
        let (aug, m0, mn) = killing_instance();
        let sol = solve_unbalanced(&aug, &m0, &mn, 2, &SolverOptions::default()).unwrap();
        let printed = assemble_transitions(&aug, &sol.potentials, CreationRowIndex::Current);
        let defect: f64 = printed
            .iter()
            .map(|m| (m.row_sums()[2] - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(defect > 1e-6);
    }

    #[test]
    fn balanced_case_decouples_parking() {
        let a = kern(&[&[0.6, 0.3, 0.1], &[0.2, 0.5, 0.3], &[0.1, 0.1, 0.8]]);
        let mu0 = Marginal::probability(vec![0.2, 0.3, 0.5]).unwrap();
        let mu_n = Marginal::probability(vec![0.5, 0.4, 0.1]).unwrap();
        let aug = augment(&a, Creation::zeros(3)).unwrap();
        let (m0, mn) = augment_marginals(&mu0, &mu_n).unwrap();
        let un = solve_unbalanced(&aug, &m0, &mn, 3, &SolverOptions::default()).unwrap();
        let bal = solve_bridge(&a, &mu0, &mu_n, 3, &SolverOptions::default()).unwrap();
        for t in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert!((un.transitions[t][(i, j)] - bal.transitions[t][(i, j)]).abs() < 1e-9);
                }
            }
            let rp = restricted_posterior(&aug, &un, t).unwrap();
            for s in rp.kernel.row_sums() {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn time_varying_creation_builds_sequence() {
        let a = kern(&[&[0.5, 0.4], &[0.4, 0.5]]);
        let aug = augment(
            &a,
            Creation::TimeVarying(vec![vec![0.1, 0.0], vec![0.0, 0.2], vec![0.3, 0.3]]),
        )
        .unwrap();
        assert!(aug.kernel().is_time_varying());
        assert!((aug.stay(2) - 0.4).abs() < 1e-15);
        for m in aug.kernel().matrices() {
            for s in m.row_sums() {
                assert!((s - 1.0).abs() < 1e-15);
            }
        }
    }
}
