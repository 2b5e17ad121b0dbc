//! Brute-force ground truth for small instances.
//!
//! Everything here works on the explicit path tensor, so it scales as
//! `K * n^(N+1)` and is capped. The code is deliberately plain: dense
//! tensors, linear-domain scaling, no factorisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{CommodityModel, Kernel};
#[cfg(test)]
use crate::graph::Marginal;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Generator used by every seeded routine in this crate.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3, seed_from_u64)";

pub const DEFAULT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions<T> {
    pub cap: usize,
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for OracleOptions<T> {
    fn default() -> Self {
        Self {
            cap: DEFAULT_CAP,
            tol: T::lit(1e-13).max(T::epsilon() * T::lit(64.0)),
            max_iter: 100_000,
        }
    }
}

/// Dense measure on paths `(i_0, ..., i_N)`; `i_0` is the slowest index.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMeasure<T> {
    states: usize,
    horizon: usize,
    data: Vec<T>,
}

fn tensor_len(states: usize, horizon: usize, blocks: usize, cap: usize) -> Result<usize> {
    let entries = (blocks as u128) * (states as u128).pow(horizon as u32 + 1);
    if entries > cap as u128 {
        return Err(Error::SizeCap { entries, cap });
    }
    Ok(entries as usize)
}

impl<T: Scalar> PathMeasure<T> {
    pub fn zeros(states: usize, horizon: usize, cap: usize) -> Result<Self> {
        let len = tensor_len(states, horizon, 1, cap)?;
        Ok(Self {
            states,
            horizon,
            data: vec![T::zero(); len],
        })
    }

    pub fn from_vec(states: usize, horizon: usize, data: Vec<T>) -> Result<Self> {
        let len = tensor_len(states, horizon, 1, usize::MAX)?;
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "{} entries for {states} states over horizon {horizon}",
                data.len()
            )));
        }
        Ok(Self {
            states,
            horizon,
            data,
        })
    }

    /// Measure of the Markov chain started from `initial` and driven by `transitions[t]`.
    pub fn from_markov(initial: &[T], transitions: &[Matrix<T>], cap: usize) -> Result<Self> {
        let horizon = transitions.len();
        let mut m = Self::zeros(initial.len(), horizon, cap)?;
        let n = m.states;
        for idx in 0..m.data.len() {
            let path = m.path_of(idx);
            let mut v = initial[path[0]];
            for t in 0..horizon {
                if v == T::zero() {
                    break;
                }
                v = v * transitions[t][(path[t], path[t + 1])];
            }
            m.data[idx] = v;
        }
        debug_assert_eq!(m.states, n);
        Ok(m)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn entries(&self) -> &[T] {
        &self.data
    }

    pub fn entries_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn path_of(&self, mut idx: usize) -> Vec<usize> {
        let mut path = vec![0; self.horizon + 1];
        for slot in path.iter_mut().rev() {
            *slot = idx % self.states;
            idx /= self.states;
        }
        path
    }

    pub fn index_of(&self, path: &[usize]) -> usize {
        path.iter().fold(0, |acc, &i| acc * self.states + i)
    }

    pub fn get(&self, path: &[usize]) -> T {
        self.data[self.index_of(path)]
    }

    pub fn total_mass(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// One-time marginal at `t`.
    pub fn marginal(&self, t: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.states];
        let stride = self.states.pow((self.horizon - t) as u32);
        for (idx, &v) in self.data.iter().enumerate() {
            out[(idx / stride) % self.states] = out[(idx / stride) % self.states] + v;
        }
        out
    }

    /// Two-time marginal over `(i_t, i_{t+1})`.
    pub fn pair_marginal(&self, t: usize) -> Matrix<T> {
        let n = self.states;
        let mut out = Matrix::zeros(n, n);
        let stride = n.pow((self.horizon - t - 1) as u32);
        for (idx, &v) in self.data.iter().enumerate() {
            let j = (idx / stride) % n;
            let i = (idx / (stride * n)) % n;
            out[(i, j)] = out[(i, j)] + v;
        }
        out
    }

    /// Conditional law of `i_{t+1}` given `i_t`; rows with no mass are left zero.
    pub fn conditional(&self, t: usize) -> Matrix<T> {
        let mut pair = self.pair_marginal(t);
        for i in 0..pair.rows() {
            let s: T = pair.row(i).iter().copied().sum();
            if s > T::zero() {
                for v in pair.row_mut(i) {
                    *v = *v / s;
                }
            }
        }
        pair
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            states: self.states,
            horizon: self.horizon,
            data: self.data.iter().map(|&v| v * c).collect(),
        }
    }
}

/// `Q(i_0..i_N) = nu0(i_0) A(i_0,i_1) ... A(i_{N-1},i_N)`.
pub fn prior_path_measure<T: Scalar>(
    initial: &[T],
    kernel: &Kernel<T>,
    horizon: usize,
    cap: usize,
) -> Result<PathMeasure<T>> {
    if horizon > 0 {
        kernel.check_horizon(horizon)?;
    }
    if initial.len() != kernel.n() {
        return Err(Error::Dimension("initial law and kernel sizes differ".into()));
    }
    let steps: Vec<Matrix<T>> = (0..horizon).map(|t| kernel.step(t).clone()).collect();
    PathMeasure::from_markov(initial, &steps, cap)
}

/// Alternating two-marginal scaling on `blocks` stacked path tensors whose
/// endpoint marginals are summed across blocks.
fn scale_to_endpoints<T: Scalar>(
    blocks: &mut [PathMeasure<T>],
    mu0: &[T],
    mu_n: &[T],
    tol: T,
    max_iter: usize,
) -> Result<usize> {
    let n = blocks[0].states;
    let horizon = blocks[0].horizon;
    let agg = |blocks: &[PathMeasure<T>], t: usize| {
        let mut out = vec![T::zero(); n];
        for b in blocks {
            for (o, v) in out.iter_mut().zip(b.marginal(t)) {
                *o = *o + v;
            }
        }
        out
    };
    for (t, target) in [(0, mu0), (horizon, mu_n)] {
        let have = agg(blocks, t);
        if let Some(i) = (0..n).find(|&i| target[i] > T::zero() && have[i] == T::zero()) {
            return Err(Error::Infeasible(format!(
                "target mass at vertex {i}, time {t} lies outside the prior support"
            )));
        }
    }
    let first_stride = n.pow(horizon as u32);
    let mut residual = T::infinity();
    for iter in 1..=max_iter {
        let m0 = agg(blocks, 0);
        for b in blocks.iter_mut() {
            for (idx, v) in b.data.iter_mut().enumerate() {
                let i0 = idx / first_stride;
                *v = if m0[i0] > T::zero() { *v * mu0[i0] / m0[i0] } else { T::zero() };
            }
        }
        let m_n = agg(blocks, horizon);
        for b in blocks.iter_mut() {
            for (idx, v) in b.data.iter_mut().enumerate() {
                let i_n = idx % n;
                *v = if m_n[i_n] > T::zero() { *v * mu_n[i_n] / m_n[i_n] } else { T::zero() };
            }
        }
        let m0 = agg(blocks, 0);
        residual = m0
            .iter()
            .zip(mu0)
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        if residual <= tol {
            return Ok(iter);
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: residual.as_f64(),
    })
}

/// Entropic projection of `prior` onto the set of path measures with endpoint marginals `mu0`, `mu_n`.
pub fn exact_bridge<T: Scalar>(
    prior: &PathMeasure<T>,
    mu0: &[T],
    mu_n: &[T],
    opts: &OracleOptions<T>,
) -> Result<PathMeasure<T>> {
    if mu0.len() != prior.states || mu_n.len() != prior.states {
        return Err(Error::Dimension("marginal length differs from state count".into()));
    }
    if prior.len() > opts.cap {
        return Err(Error::SizeCap {
            entries: prior.len() as u128,
            cap: opts.cap,
        });
    }
    let mut blocks = vec![prior.clone()];
    scale_to_endpoints(&mut blocks, mu0, mu_n, opts.tol, opts.max_iter)?;
    Ok(blocks.pop().unwrap())
}

/// Hierarchical prior tensors `p_k r_k(i_0) A_k(i_0,i_1) ...`, one per commodity.
pub fn joint_prior<T: Scalar>(
    model: &[CommodityModel<T>],
    horizon: usize,
    cap: usize,
) -> Result<Vec<PathMeasure<T>>> {
    let n = model.first().map_or(0, |c| c.kernel.n());
    tensor_len(n, horizon, model.len(), cap)?;
    model
        .iter()
        .map(|c| {
            let init: Vec<T> = c.initial.as_slice().iter().map(|&r| r * c.weight).collect();
            prior_path_measure(&init, &c.kernel, horizon, cap)
        })
        .collect()
}

/// Minimiser of the multi-commodity objective under the two aggregate endpoint constraints.
pub fn exact_multicommodity<T: Scalar>(
    model: &[CommodityModel<T>],
    mu0: &[T],
    mu_n: &[T],
    horizon: usize,
    opts: &OracleOptions<T>,
) -> Result<Vec<PathMeasure<T>>> {
    crate::graph::validate_commodities(model, horizon)?;
    let mut blocks = joint_prior(model, horizon, opts.cap)?;
    if mu0.len() != blocks[0].states || mu_n.len() != blocks[0].states {
        return Err(Error::Dimension("marginal length differs from state count".into()));
    }
    scale_to_endpoints(&mut blocks, mu0, mu_n, opts.tol, opts.max_iter)?;
    Ok(blocks)
}

/// Full cost tensor `C(k, path) = -log p_k r_k(i_0) A_k(i_0,i_1) ... A_k(i_{N-1},i_N)`.
pub fn full_cost_tensor<T: Scalar>(
    model: &[CommodityModel<T>],
    horizon: usize,
    cap: usize,
) -> Result<Vec<PathMeasure<T>>> {
    Ok(joint_prior(model, horizon, cap)?
        .into_iter()
        .map(|g| PathMeasure {
            states: g.states,
            horizon: g.horizon,
            data: g.data.iter().map(|&v| -crate::scalar::ln0(v)).collect(),
        })
        .collect())
}

/// `<M, C> + <M, log M>` evaluated entry by entry on the full tensors.
pub fn mot_objective<T: Scalar>(
    measures: &[PathMeasure<T>],
    model: &[CommodityModel<T>],
    cap: usize,
) -> Result<T> {
    let horizon = measures[0].horizon;
    let cost = full_cost_tensor(model, horizon, cap)?;
    let mut total = T::zero();
    for (m, c) in measures.iter().zip(&cost) {
        for (&v, &cv) in m.data.iter().zip(&c.data) {
            if v > T::zero() {
                if cv == T::infinity() {
                    return Ok(T::infinity());
                }
                total = total + v * cv + v * v.ln();
            }
        }
    }
    Ok(total)
}

/// Random feasible competitors: log-normal multiplicative noise on the
/// entries, then re-projection onto the endpoint constraints.
pub fn perturbed_competitor<T: Scalar>(
    optimum: &[PathMeasure<T>],
    mu0: &[T],
    mu_n: &[T],
    sigma: f64,
    rng: &mut impl Rng,
    opts: &OracleOptions<T>,
) -> Result<Vec<PathMeasure<T>>> {
    let mut blocks: Vec<PathMeasure<T>> = optimum
        .iter()
        .map(|m| PathMeasure {
            states: m.states,
            horizon: m.horizon,
            data: m
                .data
                .iter()
                .map(|&v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v * T::lit((sigma * z).exp())
                })
                .collect(),
        })
        .collect();
    scale_to_endpoints(&mut blocks, mu0, mu_n, opts.tol, opts.max_iter)?;
    Ok(blocks)
}

/// i.i.d. draws from the hierarchical prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSample {
    /// `(commodity, path)` per individual. Paths index into `0..states`.
    pub paths: Vec<(usize, Vec<usize>)>,
    /// Graph vertices plus one parking state when any kernel leaks mass.
    pub states: usize,
    /// Index of the parking state, when present.
    pub parking: Option<usize>,
    pub horizon: usize,
    pub commodities: usize,
    pub seed: u64,
}

impl PopulationSample {
    /// Normalised empirical tensors `M^k` (counts over the population size).
    pub fn empirical<T: Scalar>(&self, cap: usize) -> Result<Vec<PathMeasure<T>>> {
        tensor_len(self.states, self.horizon, self.commodities, cap)?;
        let mut out: Vec<PathMeasure<T>> = (0..self.commodities)
            .map(|_| PathMeasure::zeros(self.states, self.horizon, cap))
            .collect::<Result<_>>()?;
        let w = T::one() / T::from_usize(self.paths.len()).unwrap();
        for (k, path) in &self.paths {
            let idx = out[*k].index_of(path);
            out[*k].data[idx] = out[*k].data[idx] + w;
        }
        Ok(out)
    }

    pub fn commodity_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.commodities];
        for (k, _) in &self.paths {
            counts[*k] += 1;
        }
        counts
    }
}

fn draw<T: Scalar>(weights: impl Iterator<Item = T>, u: f64) -> Option<usize> {
    let mut acc = 0.0;
    let mut last = None;
    for (i, w) in weights.enumerate() {
        let w = w.as_f64();
        if w > 0.0 {
            acc += w;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    // u beyond the row sum: either rounding on a stochastic row or a kill
    if acc >= 1.0 - 1e-12 {
        last
    } else {
        None
    }
}

/// Samples `population` individuals: `k ~ p`, `i_0 ~ r_k`, `i_{t+1} ~ A_k(i_t, .)`.
/// Walkers killed by a leaking row move to the parking state and stay there.
pub fn sample_population<T: Scalar>(
    model: &[CommodityModel<T>],
    horizon: usize,
    population: usize,
    seed: u64,
) -> Result<PopulationSample> {
    if population == 0 {
        return Err(Error::Domain("population size must be at least 1".into()));
    }
    let n = crate::graph::validate_commodities(model, horizon)?;
    let leaks = model.iter().any(|c| {
        c.kernel.matrices().iter().any(|m| {
            m.row_sums()
                .iter()
                .any(|&s| (s - T::one()).abs() > T::eps_num())
        })
    });
    let parking = leaks.then_some(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(population);
    for _ in 0..population {
        let k = draw(model.iter().map(|c| c.weight), rng.gen::<f64>())
            .expect("weights sum to one");
        let c = &model[k];
        let mut path = Vec::with_capacity(horizon + 1);
        path.push(
            draw(c.initial.as_slice().iter().copied(), rng.gen::<f64>())
                .expect("initial law has unit mass"),
        );
        for t in 0..horizon {
            let cur = path[t];
            let next = if Some(cur) == parking {
                cur
            } else {
                let u = rng.gen::<f64>();
                draw(c.kernel.step(t).row(cur).iter().copied(), u).unwrap_or(n)
            };
            path.push(next);
        }
        paths.push((k, path));
    }
    Ok(PopulationSample {
        paths,
        states: n + usize::from(leaks),
        parking,
        horizon,
        commodities: model.len(),
        seed,
    })
}

/// Convenience for tests and the CLI: a seeded generator of the documented algorithm.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform2() -> Kernel<f64> {
        Kernel::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn horizon_zero_is_initial_law() {
        let q = prior_path_measure(&[0.3, 0.7], &uniform2(), 0, DEFAULT_CAP).unwrap();
        assert_eq!(q.entries(), &[0.3, 0.7]);
    }

    #[test]
    fn uniform_two_state_one_step() {
        let q = prior_path_measure(&[0.5, 0.5], &uniform2(), 1, DEFAULT_CAP).unwrap();
        assert_eq!(q.entries(), &[0.25; 4]);
    }

    #[test]
    fn substochastic_mass_is_survival_probability() {
        let a = Kernel::from_rows(&[vec![0.9, 0.0], vec![0.2, 0.7]]).unwrap();
        let nu = [0.4, 0.6];
        let q = prior_path_measure(&nu, &a, 3, DEFAULT_CAP).unwrap();
        let mut p = nu.to_vec();
        for t in 0..3 {
            p = crate::graph::propagate_marginal(&p, a.step(t));
        }
        let survived: f64 = p.iter().sum();
        assert!((q.total_mass() - survived).abs() < 1e-15);
        assert!(survived < 1.0);
    }

    #[test]
    fn size_cap_enforced() {
        let r = prior_path_measure(&[0.5, 0.5], &uniform2(), 20, 1000);
        assert!(matches!(r, Err(Error::SizeCap { .. })));
    }

    #[test]
    fn bridge_with_prior_marginals_returns_prior() {
        let a = Kernel::<f64>::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let q = prior_path_measure(&[0.3, 0.7], &a, 2, DEFAULT_CAP).unwrap();
        let m = exact_bridge(&q, &q.marginal(0), &q.marginal(2), &OracleOptions::default()).unwrap();
        assert!(m.max_abs_diff(&q) < 1e-15);
    }

    #[test]
    fn point_masses_condition_the_prior() {
        let a = Kernel::<f64>::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let q = prior_path_measure(&[0.5, 0.5], &a, 2, DEFAULT_CAP).unwrap();
        let m = exact_bridge(&q, &[1.0, 0.0], &[0.0, 1.0], &OracleOptions::default()).unwrap();
        // paths 0->x->1: Q = 0.5*0.9*0.1 and 0.5*0.1*0.8
        let z = 0.5 * 0.9 * 0.1 + 0.5 * 0.1 * 0.8;
        assert!((m.get(&[0, 0, 1]) - 0.5 * 0.9 * 0.1 / z).abs() < 1e-12);
        assert!((m.get(&[0, 1, 1]) - 0.5 * 0.1 * 0.8 / z).abs() < 1e-12);
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bridge_has_product_scaling_structure() {
        let a = Kernel::from_rows(&[
            vec![0.5, 0.3, 0.2],
            vec![0.1, 0.6, 0.3],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let q = prior_path_measure(&[1.0 / 3.0; 3], &a, 3, DEFAULT_CAP).unwrap();
        let m = exact_bridge(&q, &[0.2, 0.5, 0.3], &[0.6, 0.1, 0.3], &OracleOptions::default()).unwrap();
        // M/Q depends only on (i_0, i_N)
        let mut ratio = [[f64::NAN; 3]; 3];
        for idx in 0..m.len() {
            let p = m.path_of(idx);
            let r = m.entries()[idx] / q.entries()[idx];
            let slot = &mut ratio[p[0]][p[3]];
            if slot.is_nan() {
                *slot = r;
            } else {
                assert!((*slot - r).abs() <= 1e-12 * r.abs().max(1.0));
            }
        }
    }

    #[test]
    fn infeasible_target_detected() {
        let a = Kernel::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let q = prior_path_measure(&[1.0, 0.0], &a, 2, DEFAULT_CAP).unwrap();
        let r = exact_bridge(&q, &[1.0, 0.0], &[0.0, 1.0], &OracleOptions::default());
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn identical_commodities_are_proportional() {
        let a = Kernel::<f64>::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
        let r = Marginal::probability(vec![0.5, 0.5]).unwrap();
        let model = vec![
            CommodityModel::new(0.25, a.clone(), r.clone()).unwrap(),
            CommodityModel::new(0.75, a, r).unwrap(),
        ];
        let ms = exact_multicommodity(&model, &[0.1, 0.9], &[0.6, 0.4], 2, &OracleOptions::default())
            .unwrap();
        assert!(ms[0].scaled(3.0).max_abs_diff(&ms[1]) < 1e-14);
        assert!((ms[0].total_mass() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn sampler_is_deterministic_and_counts_one_path() {
        let a = Kernel::<f64>::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
        let model = vec![CommodityModel::new(1.0, a, Marginal::uniform(2)).unwrap()];
        let s1 = sample_population(&model, 3, 50, 7).unwrap();
        let s2 = sample_population(&model, 3, 50, 7).unwrap();
        assert_eq!(s1, s2);
        let one = sample_population(&model, 3, 1, 7).unwrap();
        let emp = one.empirical::<f64>(DEFAULT_CAP).unwrap();
        assert_eq!(emp[0].entries().iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(emp[0].total_mass(), 1.0);
    }

    #[test]
    fn killed_walkers_park() {
        let a = Kernel::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        let model = vec![CommodityModel::new(1.0, a, Marginal::uniform(2)).unwrap()];
        let s = sample_population(&model, 4, 200, 1).unwrap();
        assert_eq!(s.parking, Some(2));
        assert_eq!(s.states, 3);
        for (_, p) in &s.paths {
            if let Some(t) = p.iter().position(|&v| v == 2) {
                assert!(p[t..].iter().all(|&v| v == 2));
            }
        }
        assert!(s.paths.iter().any(|(_, p)| p[4] == 2));
    }
}
