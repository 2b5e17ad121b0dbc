//! Single-commodity Schrödinger bridge over a finite horizon.
//!
//! The solver runs the Fortet/IPF/Sinkhorn fixed point on the pair of
//! potentials `(phi, phi_hat)`:
//!
//! ```text
//! phi(t)        = A(t) phi(t+1)              (backward)
//! phi_hat(t+1)  = A(t)^T phi_hat(t)          (forward)
//! phi(0) phi_hat(0) = mu_0,  phi(N) phi_hat(N) = mu_N
//! ```
//!
//! and returns the posterior kernels `A(i,j) phi(t+1,j) / phi(t,i)` together
//! with the one-time marginals `phi(t) phi_hat(t)`. Potentials are kept in the
//! log domain; `-inf` encodes an exact zero.

use crate::error::{Error, Result};
use crate::graph::{propagate_marginal, reachable_backward, reachable_forward, Kernel, Marginal};
use crate::matrix::Matrix;
use crate::oracle::PathMeasure;
use crate::scalar::{exp0, ln0, log_div, lse, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// L1 tolerance on the endpoint marginal mismatch.
    pub tol: T,
    pub max_iter: usize,
    /// Max-shifted log-sum-exp reductions. When off, reductions are done in
    /// the linear domain and long horizons may underflow.
    pub log_domain: bool,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::default_tol(),
            max_iter: 10_000,
            log_domain: true,
        }
    }
}

/// Log-domain potentials indexed by `(t, vertex)`, `t = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField<T> {
    pub(crate) log_phi: Vec<Vec<T>>,
    pub(crate) log_phi_hat: Vec<Vec<T>>,
}

impl<T: Scalar> PotentialField<T> {
    pub fn from_log(log_phi: Vec<Vec<T>>, log_phi_hat: Vec<Vec<T>>) -> Result<Self> {
        if log_phi.len() != log_phi_hat.len()
            || log_phi.is_empty()
            || log_phi
                .iter()
                .chain(&log_phi_hat)
                .any(|l| l.len() != log_phi[0].len())
        {
            return Err(Error::Dimension("potential layers have inconsistent shapes".into()));
        }
        Ok(Self {
            log_phi,
            log_phi_hat,
        })
    }

    pub fn horizon(&self) -> usize {
        self.log_phi.len() - 1
    }

    pub fn n(&self) -> usize {
        self.log_phi[0].len()
    }

    pub fn log_phi(&self, t: usize) -> &[T] {
        &self.log_phi[t]
    }

    pub fn log_phi_hat(&self, t: usize) -> &[T] {
        &self.log_phi_hat[t]
    }

    pub fn phi(&self, t: usize) -> Vec<T> {
        self.log_phi[t].iter().map(|&v| exp0(v)).collect()
    }

    pub fn phi_hat(&self, t: usize) -> Vec<T> {
        self.log_phi_hat[t].iter().map(|&v| exp0(v)).collect()
    }

    /// `phi(t) * phi_hat(t)`.
    pub fn marginal(&self, t: usize) -> Vec<T> {
        self.log_phi[t]
            .iter()
            .zip(&self.log_phi_hat[t])
            .map(|(&a, &b)| exp0(a + b))
            .collect()
    }

    /// The equivalent representative `(c phi, phi_hat / c)` on the same ray.
    pub fn scaled(&self, c: T) -> Self {
        let lc = c.ln();
        let shift = |layers: &[Vec<T>], s: T| -> Vec<Vec<T>> {
            layers
                .iter()
                .map(|l| l.iter().map(|&v| v + s).collect())
                .collect()
        };
        Self {
            log_phi: shift(&self.log_phi, lc),
            log_phi_hat: shift(&self.log_phi_hat, -lc),
        }
    }

    /// Picks the representative with `max_i phi_hat(0, i) = 1`.
    pub(crate) fn normalize_ray(&mut self) {
        let s = self.log_phi_hat[0]
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max);
        if s.is_finite() {
            for l in &mut self.log_phi_hat {
                for v in l {
                    *v = *v - s;
                }
            }
            for l in &mut self.log_phi {
                for v in l {
                    *v = *v + s;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSolution<T> {
    /// Posterior kernel for each step `t -> t+1`.
    pub transitions: Vec<Matrix<T>>,
    /// One-time marginals `p_0..p_N`.
    pub marginals: Vec<Vec<T>>,
    pub potentials: PotentialField<T>,
    pub iterations: usize,
    /// L1 endpoint mismatch at termination.
    pub residual: T,
}

impl<T: Scalar> BridgeSolution<T> {
    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    /// Path measure of the posterior chain started from `p_0`.
    pub fn path_measure(&self, cap: usize) -> Result<PathMeasure<T>> {
        PathMeasure::from_markov(&self.marginals[0], &self.transitions, cap)
    }

    /// `KL(M* || Q)` via the Markov decomposition
    /// `KL(p_0 || nu_0) + sum_t sum_i p_t(i) KL(Pi*(t)(i,.) || A(t)(i,.))`.
    ///
    /// `prior_initial = None` takes `nu_0 = p_0`, dropping the constant term.
    pub fn objective(&self, kernel: &Kernel<T>, prior_initial: Option<&[T]>) -> T {
        let p0 = &self.marginals[0];
        let mut total = prior_initial.map_or(T::zero(), |nu| kl_vec(p0, nu));
        for t in 0..self.horizon() {
            let a = kernel.step(t);
            let pi = &self.transitions[t];
            for (i, &pt) in self.marginals[t].iter().enumerate() {
                if pt > T::zero() {
                    total = total + pt * kl_vec(pi.row(i), a.row(i));
                }
            }
        }
        total
    }
}

fn kl_vec<T: Scalar>(m: &[T], q: &[T]) -> T {
    let mut s = T::zero();
    for (&a, &b) in m.iter().zip(q) {
        if a > T::zero() {
            if b == T::zero() {
                return T::infinity();
            }
            s = s + a * (a / b).ln();
        }
    }
    s
}

/// Relative entropy between two path tensors with `0 log 0 = 0`; `+inf` when
/// `M` charges a path that `Q` does not.
pub fn path_kl<T: Scalar>(m: &PathMeasure<T>, q: &PathMeasure<T>) -> T {
    assert_eq!(m.len(), q.len(), "path measures of different shapes");
    kl_vec(m.entries(), q.entries())
}

/// Residuals of the Schrödinger system. The recursion residuals are relative
/// to the sup norm of the layer they define.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemResiduals<T> {
    pub backward: T,
    pub forward: T,
    pub boundary: T,
}

impl<T: Scalar> SystemResiduals<T> {
    pub fn max_recursion(&self) -> T {
        self.backward.max(self.forward)
    }
}

/// Relative mismatch of `layer` against `sum_j exp(log_a(i,j) + next[j])` (or its transpose).
pub(crate) fn recursion_residual<T: Scalar>(
    layer: &[T],
    next: &[T],
    log_a: &Matrix<T>,
    transpose: bool,
) -> T {
    let scale = layer.iter().copied().fold(T::neg_infinity(), T::max);
    if scale == T::neg_infinity() {
        // layer identically zero: the recursion must produce zero too
        let produced = apply_log(log_a, next, transpose, true);
        return if produced.iter().all(|&v| v == T::neg_infinity()) {
            T::zero()
        } else {
            T::infinity()
        };
    }
    let n = layer.len();
    let mut worst = T::zero();
    for i in 0..n {
        let mut acc = T::zero();
        for (j, &nj) in next.iter().enumerate() {
            let la = if transpose { log_a[(j, i)] } else { log_a[(i, j)] };
            acc = acc + exp0(la + nj - scale);
        }
        worst = worst.max((exp0(layer[i] - scale) - acc).abs());
    }
    worst
}

/// `log (A v)` or `log (A^T v)` for log-domain `v`.
pub(crate) fn apply_log<T: Scalar>(
    log_a: &Matrix<T>,
    v: &[T],
    transpose: bool,
    stabilised: bool,
) -> Vec<T> {
    let n = if transpose { log_a.cols() } else { log_a.rows() };
    (0..n)
        .map(|i| {
            if transpose {
                lse((0..log_a.rows()).map(|j| log_a[(j, i)] + v[j]), stabilised)
            } else {
                lse(log_a.row(i).iter().zip(v).map(|(&a, &b)| a + b), stabilised)
            }
        })
        .collect()
}

fn l1<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
}

/// Evaluates the Schrödinger system for `potentials` against `kernel` and the targets.
pub fn schrodinger_residuals<T: Scalar>(
    potentials: &PotentialField<T>,
    kernel: &Kernel<T>,
    mu0: &[T],
    mu_n: &[T],
) -> SystemResiduals<T> {
    let horizon = potentials.horizon();
    let log_a = kernel.log_steps(horizon);
    let mut backward = T::zero();
    let mut forward = T::zero();
    for t in 0..horizon {
        backward = backward.max(recursion_residual(
            &potentials.log_phi[t],
            &potentials.log_phi[t + 1],
            &log_a[t],
            false,
        ));
        forward = forward.max(recursion_residual(
            &potentials.log_phi_hat[t + 1],
            &potentials.log_phi_hat[t],
            &log_a[t],
            true,
        ));
    }
    let boundary = l1(&potentials.marginal(0), mu0) + l1(&potentials.marginal(horizon), mu_n);
    SystemResiduals {
        backward,
        forward,
        boundary,
    }
}

/// `A(i,j) exp(lphi_next[j] - lphi[i])`; rows whose marginal mass is zero get
/// the prior row renormalised.
pub(crate) fn reweighted_kernel<T: Scalar>(
    a: &Matrix<T>,
    log_a: &Matrix<T>,
    lphi: &[T],
    lphi_next: &[T],
    mass: &[T],
) -> Result<Matrix<T>> {
    let n = a.rows();
    let mut out = Matrix::zeros(n, a.cols());
    for i in 0..n {
        if mass[i] == T::zero() {
            let s: T = a.row(i).iter().copied().sum();
            if s > T::zero() {
                for (o, &v) in out.row_mut(i).iter_mut().zip(a.row(i)) {
                    *o = v / s;
                }
            }
            continue;
        }
        if lphi[i] == T::neg_infinity() {
            return Err(Error::Inconsistent(format!(
                "potential vanishes at vertex {i} which carries mass {}",
                mass[i]
            )));
        }
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = exp0(log_a[(i, j)] + lphi_next[j] - lphi[i]);
        }
    }
    Ok(out)
}

/// Posterior transition matrix at step `t` from the potentials.
pub fn posterior_kernel<T: Scalar>(
    potentials: &PotentialField<T>,
    kernel: &Kernel<T>,
    t: usize,
) -> Result<Matrix<T>> {
    if t >= potentials.horizon() {
        return Err(Error::Domain(format!(
            "step {t} outside horizon {}",
            potentials.horizon()
        )));
    }
    if kernel.n() != potentials.n() {
        return Err(Error::Dimension("kernel and potentials disagree on size".into()));
    }
    let a = kernel.step(t);
    let log_a = a.map(ln0);
    reweighted_kernel(
        a,
        &log_a,
        &potentials.log_phi[t],
        &potentials.log_phi[t + 1],
        &potentials.marginal(t),
    )
}

/// Support-level feasibility shared by the balanced and augmented solvers.
pub(crate) fn check_support(
    kernels: &[&Kernel<impl Scalar>],
    start: &[bool],
    target: &[bool],
    horizon: usize,
) -> Result<()> {
    let reach = reachable_forward(start, kernels, horizon);
    if let Some(j) = (0..target.len()).find(|&j| target[j] && !reach[j]) {
        return Err(Error::Infeasible(format!(
            "target mass at vertex {j} is unreachable in {horizon} steps from the initial support"
        )));
    }
    let coreach = reachable_backward(target, kernels, horizon);
    if let Some(i) = (0..start.len()).find(|&i| start[i] && !coreach[i]) {
        return Err(Error::Infeasible(format!(
            "initial mass at vertex {i} cannot reach the target support in {horizon} steps"
        )));
    }
    Ok(())
}

/// Most likely posterior chain with endpoint marginals `mu0` and `mu_n`.
pub fn solve_bridge<T: Scalar>(
    kernel: &Kernel<T>,
    mu0: &Marginal<T>,
    mu_n: &Marginal<T>,
    horizon: usize,
    opts: &SolverOptions<T>,
) -> Result<BridgeSolution<T>> {
    kernel.check_horizon(horizon)?;
    kernel.ensure_substochastic()?;
    let n = kernel.n();
    if mu0.len() != n || mu_n.len() != n {
        return Err(Error::Dimension(format!(
            "marginals have {} and {} entries, kernel has {n} states",
            mu0.len(),
            mu_n.len()
        )));
    }
    for (name, m) in [("mu0", mu0), ("muN", mu_n)] {
        if !m.is_probability() {
            return Err(Error::Validation(format!("{name} has mass {}, expected 1", m.mass())));
        }
    }
    check_support(&[kernel], &mu0.support(), &mu_n.support(), horizon)?;

    let log_a = kernel.log_steps(horizon);
    let log_mu0: Vec<T> = mu0.as_slice().iter().map(|&v| ln0(v)).collect();
    let log_mu_n: Vec<T> = mu_n.as_slice().iter().map(|&v| ln0(v)).collect();
    let stab = opts.log_domain;

    let mut log_phi = vec![vec![T::zero(); n]; horizon + 1];
    let mut log_hat = vec![vec![T::zero(); n]; horizon + 1];
    let mut iterations = 0;
    let residual;
    loop {
        for t in 0..horizon {
            log_hat[t + 1] = apply_log(&log_a[t], &log_hat[t], true, stab);
        }
        if iterations > 0 {
            let pn: Vec<T> = log_phi[horizon]
                .iter()
                .zip(&log_hat[horizon])
                .map(|(&a, &b)| exp0(a + b))
                .collect();
            let p0: Vec<T> = log_phi[0]
                .iter()
                .zip(&log_hat[0])
                .map(|(&a, &b)| exp0(a + b))
                .collect();
            let r = l1(&pn, mu_n.as_slice()) + l1(&p0, mu0.as_slice());
            if !r.is_finite() {
                return Err(Error::NotConverged {
                    iterations,
                    residual: r.as_f64(),
                });
            }
            if r <= opts.tol {
                residual = r;
                break;
            }
            if iterations >= opts.max_iter {
                return Err(Error::NotConverged {
                    iterations,
                    residual: r.as_f64(),
                });
            }
        }
        log_phi[horizon] = log_mu_n
            .iter()
            .zip(&log_hat[horizon])
            .map(|(&m, &h)| log_div(m, h))
            .collect();
        for t in (0..horizon).rev() {
            log_phi[t] = apply_log(&log_a[t], &log_phi[t + 1], false, stab);
        }
        log_hat[0] = log_mu0
            .iter()
            .zip(&log_phi[0])
            .map(|(&m, &p)| log_div(m, p))
            .collect();
        iterations += 1;
    }

    let mut potentials = PotentialField {
        log_phi,
        log_phi_hat: log_hat,
    };
    potentials.normalize_ray();
    let marginals: Vec<Vec<T>> = (0..=horizon).map(|t| potentials.marginal(t)).collect();
    let transitions = (0..horizon)
        .map(|t| {
            reweighted_kernel(
                kernel.step(t),
                &log_a[t],
                &potentials.log_phi[t],
                &potentials.log_phi[t + 1],
                &marginals[t],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BridgeSolution {
        transitions,
        marginals,
        potentials,
        iterations,
        residual,
    })
}

/// Propagates `p_0` through the posterior kernels; used to cross-check the
/// potential-product marginals.
pub fn propagated_marginals<T: Scalar>(p0: &[T], transitions: &[Matrix<T>]) -> Vec<Vec<T>> {
    let mut out = vec![p0.to_vec()];
    for pi in transitions {
        let next = propagate_marginal(out.last().unwrap(), pi);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_bridge, prior_path_measure, OracleOptions, DEFAULT_CAP};

    fn kern(rows: &[&[f64]]) -> Kernel<f64> {
        Kernel::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn marg(v: &[f64]) -> Marginal<f64> {
        Marginal::probability(v.to_vec()).unwrap()
    }

    #[test]
    fn prior_already_matching_is_a_fixed_point() {
        let a = kern(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let sol = solve_bridge(&a, &marg(&[0.5, 0.5]), &marg(&[0.5, 0.5]), 1, &SolverOptions::default())
            .unwrap();
        assert!(sol.transitions[0].max_abs_diff(a.step(0)) < 1e-15);
        for p in &sol.marginals {
            assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        }
        assert!(sol.objective(&a, None).abs() < 1e-15);
    }

    #[test]
    fn marginals_force_all_mass_across() {
        let a = kern(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let sol = solve_bridge(&a, &marg(&[1.0, 0.0]), &marg(&[0.0, 1.0]), 1, &SolverOptions::default())
            .unwrap();
        assert_eq!(sol.transitions[0].row(0), &[0.0, 1.0]);
        // zero-mass row falls back to the prior row
        assert_eq!(sol.transitions[0].row(1), &[0.5, 0.5]);
    }

    #[test]
    fn two_state_horizon_two_matches_oracle() {
        let a = kern(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let (mu0, mu_n) = (marg(&[0.5, 0.5]), marg(&[0.8, 0.2]));
        let sol = solve_bridge(&a, &mu0, &mu_n, 2, &SolverOptions::default()).unwrap();
        let q = prior_path_measure(&[0.5, 0.5], &a, 2, DEFAULT_CAP).unwrap();
        let exact = exact_bridge(&q, mu0.as_slice(), mu_n.as_slice(), &OracleOptions::default()).unwrap();
        let ours = sol.path_measure(DEFAULT_CAP).unwrap();
        assert!(ours.max_abs_diff(&exact) < 1e-8);
        for t in 0..2 {
            assert!(sol.transitions[t].max_abs_diff(&exact.conditional(t)) < 1e-8);
        }
        for t in 0..=2 {
            let e = exact.marginal(t);
            assert!(l1(&sol.marginals[t], &e) < 1e-8);
        }
    }

    #[test]
    fn unit_potentials_give_prior_kernel() {
        let a = kern(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let pf = PotentialField::from_log(vec![vec![0.0; 2]; 3], vec![vec![0.0; 2]; 3]).unwrap();
        let pi = posterior_kernel(&pf, &a, 1).unwrap();
        assert!(pi.max_abs_diff(a.step(0)) < 1e-15);
    }

    #[test]
    fn path_kl_examples() {
        let m = PathMeasure::from_vec(2, 0, vec![0.7, 0.3]).unwrap();
        let q = PathMeasure::from_vec(2, 0, vec![0.5, 0.5]).unwrap();
        assert_eq!(path_kl(&q, &q), 0.0);
        let expected = 0.7 * 1.4f64.ln() + 0.3 * 0.6f64.ln();
        assert!((path_kl(&m, &q) - expected).abs() < 1e-15);
        assert!((path_kl(&m, &q) - 0.08228).abs() < 1e-5);
        let z = PathMeasure::from_vec(2, 0, vec![1.0, 0.0]).unwrap();
        assert_eq!(path_kl(&q, &z), f64::INFINITY);
        assert_eq!(path_kl(&z, &q), 2f64.ln());
    }

    #[test]
    fn unreachable_target_is_infeasible() {
        let a = kern(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = solve_bridge(&a, &marg(&[1.0, 0.0]), &marg(&[0.5, 0.5]), 2, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn too_few_iterations_reports_not_converged() {
        let a = kern(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let opts = SolverOptions {
            tol: 1e-14,
            max_iter: 2,
            log_domain: true,
        };
        let r = solve_bridge(&a, &marg(&[0.5, 0.5]), &marg(&[0.8, 0.2]), 2, &opts);
        assert!(matches!(r, Err(Error::NotConverged { iterations: 2, .. })));
    }

    #[test]
    fn non_probability_marginal_rejected() {
        let a = kern(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let half = Marginal::new(vec![0.25, 0.25]).unwrap();
        let r = solve_bridge(&a, &half, &marg(&[0.5, 0.5]), 1, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn linear_domain_agrees_on_short_horizon() {
        let a = kern(&[&[0.6, 0.3, 0.1], &[0.2, 0.5, 0.3], &[0.1, 0.1, 0.8]]);
        let (mu0, mu_n) = (marg(&[0.2, 0.3, 0.5]), marg(&[0.5, 0.4, 0.1]));
        let log = solve_bridge(&a, &mu0, &mu_n, 3, &SolverOptions::default()).unwrap();
        let lin = solve_bridge(
            &a,
            &mu0,
            &mu_n,
            3,
            &SolverOptions {
                log_domain: false,
                ..SolverOptions::default()
            },
        )
        .unwrap();
        for t in 0..3 {
            assert!(log.transitions[t].max_abs_diff(&lin.transitions[t]) < 1e-9);
        }
    }

    #[test]
    fn long_horizon_survives_in_log_domain() {
        // tiny entries raised to a long horizon underflow without max-shifting
        let a = kern(&[&[1.0 - 1e-30, 1e-30], &[1e-30, 1.0 - 1e-30]]);
        let sol = solve_bridge(&a, &marg(&[0.5, 0.5]), &marg(&[0.6, 0.4]), 40, &SolverOptions::default())
            .unwrap();
        assert!((sol.marginals[40][0] - 0.6).abs() < 1e-9);
    }

    #[test]
    fn residuals_vanish_at_solution() {
        let a = kern(&[&[0.6, 0.3, 0.1], &[0.2, 0.5, 0.3], &[0.1, 0.1, 0.8]]);
        let (mu0, mu_n) = (marg(&[0.2, 0.3, 0.5]), marg(&[0.5, 0.4, 0.1]));
        let sol = solve_bridge(&a, &mu0, &mu_n, 4, &SolverOptions::default()).unwrap();
        let r = schrodinger_residuals(&sol.potentials, &a, mu0.as_slice(), mu_n.as_slice());
        assert!(r.max_recursion() < 1e-12);
        assert!(r.boundary <= 1e-9);
        let prop = propagated_marginals(&sol.marginals[0], &sol.transitions);
        for t in 0..=4 {
            assert!(l1(&prop[t], &sol.marginals[t]) < 1e-10);
        }
    }

    #[test]
    fn f32_solve_runs() {
        let a = Kernel::<f32>::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let mu0 = Marginal::probability(vec![0.5f32, 0.5]).unwrap();
        let mu_n = Marginal::probability(vec![0.8f32, 0.2]).unwrap();
        let sol = solve_bridge(&a, &mu0, &mu_n, 2, &SolverOptions::default()).unwrap();
        assert!((sol.marginals[2][0] - 0.8).abs() < 1e-4);
    }
}
