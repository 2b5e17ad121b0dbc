//! Networks, prior kernels, marginals and the structural checks the solvers rely on.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Directed graph on vertices `0..n`. Self-loops are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Network {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let edges: BTreeSet<_> = edges.into_iter().collect();
        if edges.is_empty() {
            return Err(Error::Validation("edge set is empty".into()));
        }
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(Error::Validation(format!(
                "edge ({i},{j}) references a vertex outside 0..{n}"
            )));
        }
        Ok(Self { n, edges })
    }

    /// Complete digraph including self-loops.
    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        Self { n, edges }
    }

    /// Graph whose edges are the positive entries of `kernel` at any step.
    pub fn support_of<T: Scalar>(kernel: &Kernel<T>) -> Result<Self> {
        let n = kernel.n();
        let mut edges = BTreeSet::new();
        for m in kernel.matrices() {
            for i in 0..n {
                for j in 0..n {
                    if m[(i, j)] > T::zero() {
                        edges.insert((i, j));
                    }
                }
            }
        }
        Self::new(n, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }
}

/// Prior transition kernel: one matrix for all steps, or one matrix per step.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel<T> {
    Homogeneous(Matrix<T>),
    TimeVarying(Vec<Matrix<T>>),
}

impl<T: Scalar> Kernel<T> {
    pub fn homogeneous(m: Matrix<T>) -> Result<Self> {
        if m.rows() != m.cols() || m.rows() == 0 {
            return Err(Error::Dimension(format!(
                "kernel must be square and nonempty, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(Self::Homogeneous(m))
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        Self::homogeneous(Matrix::from_rows(rows)?)
    }

    pub fn time_varying(steps: Vec<Matrix<T>>) -> Result<Self> {
        let n = steps
            .first()
            .ok_or_else(|| Error::Dimension("time-varying kernel has no steps".into()))?
            .rows();
        if steps.iter().any(|m| m.rows() != n || m.cols() != n) || n == 0 {
            return Err(Error::Dimension(
                "time-varying kernel steps must all be the same nonempty square size".into(),
            ));
        }
        Ok(Self::TimeVarying(steps))
    }

    pub fn n(&self) -> usize {
        match self {
            Self::Homogeneous(m) => m.rows(),
            Self::TimeVarying(v) => v[0].rows(),
        }
    }

    /// Matrix governing the transition `t -> t+1`.
    #[inline]
    pub fn step(&self, t: usize) -> &Matrix<T> {
        match self {
            Self::Homogeneous(m) => m,
            Self::TimeVarying(v) => &v[t],
        }
    }

    pub fn matrices(&self) -> &[Matrix<T>] {
        match self {
            Self::Homogeneous(m) => std::slice::from_ref(m),
            Self::TimeVarying(v) => v,
        }
    }

    pub fn is_time_varying(&self) -> bool {
        matches!(self, Self::TimeVarying(_))
    }

    /// Errors unless the kernel can drive `horizon` steps.
    pub fn check_horizon(&self, horizon: usize) -> Result<()> {
        if horizon < 1 {
            return Err(Error::Domain("horizon must be at least 1".into()));
        }
        match self {
            Self::TimeVarying(v) if v.len() != horizon => Err(Error::Dimension(format!(
                "time-varying kernel has {} steps, horizon is {horizon}",
                v.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Entrywise log of every step, zeros mapped to `-inf`.
    pub fn log_steps(&self, horizon: usize) -> Vec<Matrix<T>> {
        (0..horizon)
            .map(|t| self.step(t).map(crate::scalar::ln0))
            .collect()
    }

    pub fn map(&self, f: impl Fn(&Matrix<T>) -> Matrix<T>) -> Self {
        match self {
            Self::Homogeneous(m) => Self::Homogeneous(f(m)),
            Self::TimeVarying(v) => Self::TimeVarying(v.iter().map(f).collect()),
        }
    }

    /// Errors on negative or non-finite entries or on row sums above `1 + eps_num`.
    pub fn ensure_substochastic(&self) -> Result<()> {
        for (s, m) in self.matrices().iter().enumerate() {
            for i in 0..m.rows() {
                let row = m.row(i);
                if let Some(j) = row.iter().position(|&a| !(a >= T::zero()) || !a.is_finite()) {
                    return Err(Error::Validation(format!(
                        "kernel step {s} entry ({i},{j}) is {}",
                        row[j]
                    )));
                }
                let sum: T = row.iter().copied().sum();
                if sum > T::one() + T::eps_num() {
                    return Err(Error::Validation(format!(
                        "kernel step {s} row {i} sums to {sum} > 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Nonnegative histogram over vertices with total mass in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal<T>(Vec<T>);

impl<T: Scalar> Marginal<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(Error::Validation(format!(
                "marginal entry {i} is {}",
                values[i]
            )));
        }
        let mass: T = values.iter().copied().sum();
        if !(mass > T::zero()) || mass > T::one() + T::eps_num() {
            return Err(Error::Validation(format!(
                "marginal mass {mass} is outside (0, 1]"
            )));
        }
        Ok(Self(values))
    }

    /// Like [`Marginal::new`] but additionally requires unit mass.
    pub fn probability(values: Vec<T>) -> Result<Self> {
        let m = Self::new(values)?;
        if !m.is_probability() {
            return Err(Error::Validation(format!(
                "marginal mass {} is not 1",
                m.mass()
            )));
        }
        Ok(m)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![T::one() / T::from_usize(n).unwrap(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mass(&self) -> T {
        self.0.iter().copied().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.mass() - T::one()).abs() <= T::eps_num()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn support(&self) -> Vec<bool> {
        self.0.iter().map(|&v| v > T::zero()).collect()
    }
}

impl<T> std::ops::Index<usize> for Marginal<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

/// One commodity of the hierarchical prior: weight, dynamics and initial law.
#[derive(Debug, Clone, PartialEq)]
pub struct CommodityModel<T> {
    pub weight: T,
    pub kernel: Kernel<T>,
    pub initial: Marginal<T>,
}

impl<T: Scalar> CommodityModel<T> {
    pub fn new(weight: T, kernel: Kernel<T>, initial: Marginal<T>) -> Result<Self> {
        let m = Self {
            weight,
            kernel,
            initial,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if !(self.weight > T::zero()) || self.weight > T::one() + T::eps_num() {
            return Err(Error::Validation(format!(
                "commodity weight {} must lie in (0, 1]",
                self.weight
            )));
        }
        if self.initial.len() != self.kernel.n() {
            return Err(Error::Dimension(format!(
                "initial law has {} entries, kernel is {}x{}",
                self.initial.len(),
                self.kernel.n(),
                self.kernel.n()
            )));
        }
        if !self.initial.is_probability() {
            return Err(Error::Validation(format!(
                "commodity initial law has mass {}",
                self.initial.mass()
            )));
        }
        self.kernel.ensure_substochastic()
    }
}

/// Checks a family of commodities for a shared state space and weights summing to one.
pub fn validate_commodities<T: Scalar>(model: &[CommodityModel<T>], horizon: usize) -> Result<usize> {
    let first = model
        .first()
        .ok_or_else(|| Error::Validation("no commodities".into()))?;
    let n = first.kernel.n();
    for (k, c) in model.iter().enumerate() {
        c.validate()?;
        if c.kernel.n() != n {
            return Err(Error::Dimension(format!(
                "commodity {k} has {} states, commodity 0 has {n}",
                c.kernel.n()
            )));
        }
        c.kernel.check_horizon(horizon)?;
    }
    let total: T = model.iter().map(|c| c.weight).sum();
    if (total - T::one()).abs() > T::eps_num() {
        return Err(Error::Validation(format!(
            "commodity weights sum to {total}, not 1"
        )));
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelClass {
    Stochastic,
    Substochastic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation<T> {
    DimensionMismatch { kernel: usize, network: usize },
    Negative { step: usize, i: usize, j: usize, value: T },
    OffEdge { step: usize, i: usize, j: usize },
    RowSumExceedsOne { step: usize, i: usize, sum: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport<T> {
    pub violations: Vec<Violation<T>>,
    pub class: KernelClass,
    /// Row sums per step.
    pub row_sums: Vec<Vec<T>>,
}

impl<T> ValidationReport<T> {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every structural problem of `kernel` relative to `network` and classifies it.
pub fn validate_kernel<T: Scalar>(kernel: &Kernel<T>, network: &Network) -> ValidationReport<T> {
    let mut violations = Vec::new();
    if kernel.n() != network.n() {
        violations.push(Violation::DimensionMismatch {
            kernel: kernel.n(),
            network: network.n(),
        });
        return ValidationReport {
            violations,
            class: KernelClass::Substochastic,
            row_sums: Vec::new(),
        };
    }
    let eps = T::eps_num();
    let mut stochastic = true;
    let mut row_sums = Vec::new();
    for (step, m) in kernel.matrices().iter().enumerate() {
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let a = m[(i, j)];
                if a < T::zero() {
                    violations.push(Violation::Negative { step, i, j, value: a });
                }
                if a != T::zero() && !network.has_edge(i, j) {
                    violations.push(Violation::OffEdge { step, i, j });
                }
            }
        }
        let sums = m.row_sums();
        for (i, &sum) in sums.iter().enumerate() {
            if sum > T::one() + eps {
                violations.push(Violation::RowSumExceedsOne { step, i, sum });
            }
            if (sum - T::one()).abs() > eps {
                stochastic = false;
            }
        }
        row_sums.push(sums);
    }
    ValidationReport {
        violations,
        class: if stochastic {
            KernelClass::Stochastic
        } else {
            KernelClass::Substochastic
        },
        row_sums,
    }
}

/// True iff every entry of `A(0) A(1) ... A(N-1)` is positive.
///
/// Computed on the support pattern so long horizons cannot underflow.
pub fn check_bridge_feasibility<T: Scalar>(kernel: &Kernel<T>, horizon: usize) -> Result<bool> {
    kernel.check_horizon(horizon)?;
    let n = kernel.n();
    let mut reach: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect();
    for t in 0..horizon {
        let m = kernel.step(t);
        reach = reach
            .iter()
            .map(|row| {
                (0..n)
                    .map(|j| (0..n).any(|k| row[k] && m[(k, j)] > T::zero()))
                    .collect()
            })
            .collect();
    }
    Ok(reach.iter().flatten().all(|&b| b))
}

/// `q(j) = sum_i p(i) * Pi(i, j)`.
pub fn propagate_marginal<T: Scalar>(p: &[T], transition: &Matrix<T>) -> Vec<T> {
    debug_assert_eq!(p.len(), transition.rows());
    let mut q = vec![T::zero(); transition.cols()];
    for (i, &pi) in p.iter().enumerate() {
        if pi == T::zero() {
            continue;
        }
        for (qj, &a) in q.iter_mut().zip(transition.row(i)) {
            *qj = *qj + pi * a;
        }
    }
    q
}

/// Vertices reachable in exactly `horizon` steps from `start` (forward) under any of `kernels`.
pub(crate) fn reachable_forward<T: Scalar>(
    start: &[bool],
    kernels: &[&Kernel<T>],
    horizon: usize,
) -> Vec<bool> {
    let n = start.len();
    let mut cur = start.to_vec();
    for t in 0..horizon {
        let mut next = vec![false; n];
        for k in kernels {
            let m = k.step(t);
            for i in (0..n).filter(|&i| cur[i]) {
                for j in 0..n {
                    if m[(i, j)] > T::zero() {
                        next[j] = true;
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// Vertices from which `target` is reachable in exactly `horizon` steps.
pub(crate) fn reachable_backward<T: Scalar>(
    target: &[bool],
    kernels: &[&Kernel<T>],
    horizon: usize,
) -> Vec<bool> {
    let n = target.len();
    let mut cur = target.to_vec();
    for t in (0..horizon).rev() {
        let mut prev = vec![false; n];
        for k in kernels {
            let m = k.step(t);
            for i in 0..n {
                if (0..n).any(|j| cur[j] && m[(i, j)] > T::zero()) {
                    prev[i] = true;
                }
            }
        }
        cur = prev;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(rows: &[&[f64]]) -> Kernel<f64> {
        Kernel::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn uniform_kernel_is_valid_and_stochastic() {
        let r = validate_kernel(&k(&[&[0.5, 0.5], &[0.5, 0.5]]), &Network::complete(2));
        assert!(r.is_valid());
        assert_eq!(r.class, KernelClass::Stochastic);
    }

    #[test]
    fn leaky_kernel_is_substochastic() {
        let r = validate_kernel(&k(&[&[0.9, 0.0], &[0.2, 0.7]]), &Network::complete(2));
        assert!(r.is_valid());
        assert_eq!(r.class, KernelClass::Substochastic);
        assert!((r.row_sums[0][0] - 0.9).abs() < 1e-15);
        assert!((r.row_sums[0][1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn missing_edge_is_reported() {
        let g = Network::new(2, [(0, 0), (0, 1), (1, 1)]).unwrap();
        let r = validate_kernel(&k(&[&[0.5, 0.5], &[0.5, 0.5]]), &g);
        assert_eq!(r.violations, vec![Violation::OffEdge { step: 0, i: 1, j: 0 }]);
    }

    #[test]
    fn negative_and_overfull_rows_are_reported() {
        let r = validate_kernel(&k(&[&[1.2, -0.1], &[0.5, 0.5]]), &Network::complete(2));
        assert!(r
            .violations
            .contains(&Violation::Negative { step: 0, i: 0, j: 1, value: -0.1 }));
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::RowSumExceedsOne { i: 0, .. })));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let r = validate_kernel(&k(&[&[1.0]]), &Network::complete(2));
        assert!(!r.is_valid());
    }

    #[test]
    fn feasibility_examples() {
        assert!(check_bridge_feasibility(&k(&[&[0.5, 0.5], &[0.5, 0.5]]), 1).unwrap());
        assert!(!check_bridge_feasibility(&k(&[&[1.0, 0.0], &[0.0, 1.0]]), 3).unwrap());
        // A^2 = I for the swap, so off-diagonal entries vanish
        assert!(!check_bridge_feasibility(&k(&[&[0.0, 1.0], &[1.0, 0.0]]), 2).unwrap());
        assert!(matches!(
            check_bridge_feasibility(&k(&[&[1.0]]), 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn propagate_examples() {
        let swap = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(propagate_marginal(&[1.0, 0.0], &swap), vec![0.0, 1.0]);
        let u = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(propagate_marginal(&[0.5, 0.5], &u), vec![0.5, 0.5]);
        let leak = Matrix::<f64>::from_rows(&[vec![0.9, 0.0], vec![0.2, 0.7]]).unwrap();
        let q = propagate_marginal(&[0.5, 0.5], &leak);
        assert!((q[0] - 0.55).abs() < 1e-15 && (q[1] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn marginal_mass_checks() {
        assert!(Marginal::new(vec![0.3, 0.4]).is_ok());
        assert!(Marginal::new(vec![0.0, 0.0]).is_err());
        assert!(Marginal::new(vec![0.7, 0.4]).is_err());
        assert!(Marginal::new(vec![-0.1, 0.4]).is_err());
        assert!(Marginal::probability(vec![0.3, 0.4]).is_err());
    }

    #[test]
    fn commodity_weights_must_sum_to_one() {
        let a = k(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let c = |w| CommodityModel::new(w, a.clone(), Marginal::uniform(2)).unwrap();
        assert!(validate_commodities(&[c(0.5), c(0.5)], 2).is_ok());
        assert!(validate_commodities(&[c(0.5), c(0.4)], 2).is_err());
        assert!(CommodityModel::new(0.0, a.clone(), Marginal::uniform(2)).is_err());
    }

    #[test]
    fn time_varying_horizon_must_match() {
        let m = Matrix::identity(2);
        let tv = Kernel::<f64>::time_varying(vec![m.clone(), m]).unwrap();
        assert!(tv.check_horizon(2).is_ok());
        assert!(tv.check_horizon(3).is_err());
    }

    #[test]
    fn reachability_exact_steps() {
        let swap = k(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(reachable_forward(&[true, false], &[&swap], 3), vec![false, true]);
        assert_eq!(reachable_backward(&[true, false], &[&swap], 2), vec![true, false]);
    }
}
