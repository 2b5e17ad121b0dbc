//! Problem files: parsing, label resolution and conversion into solver inputs.

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use netbridge::unbalanced::Creation;
use netbridge::{validate_kernel, CommodityModel, Kernel, Marginal, Matrix, Network};
use serde::{Deserialize, Serialize};

/// A malformed or inconsistent problem file (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Edge {
    Index([usize; 2]),
    Label([String; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Steps(Vec<Vec<Vec<f64>>>),
    Single(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerCommodity<V> {
    Named(IndexMap<String, V>),
    Ordered(Vec<V>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarginalSpec {
    Dense(Vec<f64>),
    Labelled(IndexMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub mu0: MarginalSpec,
    #[serde(rename = "muN")]
    pub mu_n: MarginalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CreationVec {
    Steps(Vec<Vec<f64>>),
    Single(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CreationSpec {
    Shared(CreationVec),
    Named(IndexMap<String, CreationVec>),
}

/// The problem file. Commodity order is the order of `kernels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<Edge>,
    pub kernels: IndexMap<String, KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initials: Option<PerCommodity<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PerCommodity<f64>>,
    pub marginals: Marginals,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creation: Option<CreationSpec>,
    /// Prior fraction of each commodity parked at `t = 0` (multi-commodity with parking).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parked_prior: Option<PerCommodity<f64>>,
    /// Vertex labels each commodity may never occupy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forbidden: Option<IndexMap<String, Vec<String>>>,
}

impl Config {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).map_err(|e| bad(format!("invalid problem file: {e}")))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// A validated problem with labels resolved to indices.
#[derive(Debug, Clone)]
pub struct Problem {
    pub labels: Vec<String>,
    pub names: Vec<String>,
    pub kernels: Vec<Kernel<f64>>,
    pub initials: Option<Vec<Vec<f64>>>,
    pub weights: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu_n: Vec<f64>,
    pub horizon: usize,
    pub creation: Option<Vec<Creation<f64>>>,
    pub parked_prior: Vec<f64>,
    /// `forbidden[k]` lists vertex indices commodity `k` may never occupy.
    pub forbidden: Vec<Vec<usize>>,
}

impl Problem {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn commodities(&self) -> usize {
        self.names.len()
    }

    pub fn marginals(&self) -> anyhow::Result<(Marginal<f64>, Marginal<f64>)> {
        Ok((Marginal::new(self.mu0.clone())?, Marginal::new(self.mu_n.clone())?))
    }

    pub fn model(&self) -> anyhow::Result<Vec<CommodityModel<f64>>> {
        let initials = self
            .initials
            .as_ref()
            .ok_or_else(|| bad("`initials` is required for this subcommand"))?;
        self.kernels
            .iter()
            .zip(initials)
            .zip(&self.weights)
            .map(|((a, r), &w)| Ok(CommodityModel::new(w, a.clone(), Marginal::new(r.clone())?)?))
            .collect()
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> anyhow::Result<Matrix<f64>> {
    Matrix::from_rows(rows).map_err(|e| bad(format!("{what}: {e}")))
}

fn per_commodity<V: Clone>(
    spec: &PerCommodity<V>,
    names: &[String],
    what: &str,
) -> anyhow::Result<Vec<V>> {
    match spec {
        PerCommodity::Ordered(v) if v.len() == names.len() => Ok(v.clone()),
        PerCommodity::Ordered(v) => Err(bad(format!(
            "{what}: {} entries for {} commodities",
            v.len(),
            names.len()
        ))),
        PerCommodity::Named(map) => {
            if let Some(extra) = map.keys().find(|k| !names.contains(k)) {
                return Err(bad(format!("{what}: unknown commodity `{extra}`")));
            }
            names
                .iter()
                .map(|name| {
                    map.get(name)
                        .cloned()
                        .ok_or_else(|| bad(format!("{what}: missing commodity `{name}`")))
                })
                .collect()
        }
    }
}

fn creation_of(spec: &CreationVec) -> Creation<f64> {
    match spec {
        CreationVec::Single(c) => Creation::Homogeneous(c.clone()),
        CreationVec::Steps(c) => Creation::TimeVarying(c.clone()),
    }
}

/// Labels in order of first appearance, or `"0".."n-1"` for indexed networks.
fn resolve_labels(cfg: &Config, kernel_n: usize) -> anyhow::Result<(Vec<String>, Vec<(usize, usize)>)> {
    let labelled = cfg.edges.iter().any(|e| matches!(e, Edge::Label(_)));
    let indexed = cfg.edges.iter().any(|e| matches!(e, Edge::Index(_)));
    if labelled && indexed {
        return Err(bad("edges mix index pairs and labels"));
    }
    if labelled {
        let mut labels: IndexMap<String, ()> = IndexMap::new();
        let mut edges = Vec::new();
        for e in &cfg.edges {
            if let Edge::Label([a, b]) = e {
                let i = labels.insert_full(a.clone(), ()).0;
                let j = labels.insert_full(b.clone(), ()).0;
                edges.push((i, j));
            }
        }
        let labels: Vec<String> = labels.into_keys().collect();
        if let Some(n) = cfg.n {
            if n != labels.len() {
                return Err(bad(format!("`n` is {n} but edges name {} vertices", labels.len())));
            }
        }
        return Ok((labels, edges));
    }
    let n = cfg.n.unwrap_or(kernel_n);
    let edges: Vec<(usize, usize)> = cfg
        .edges
        .iter()
        .filter_map(|e| match e {
            Edge::Index([i, j]) => Some((*i, *j)),
            Edge::Label(_) => None,
        })
        .collect();
    if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(bad(format!("edge ({i}, {j}) outside 0..{n}")));
    }
    Ok(((0..n).map(|i| i.to_string()).collect(), edges))
}

fn resolve_marginal(spec: &MarginalSpec, labels: &[String], what: &str) -> anyhow::Result<Vec<f64>> {
    match spec {
        MarginalSpec::Dense(v) if v.len() == labels.len() => Ok(v.clone()),
        MarginalSpec::Dense(v) => Err(bad(format!(
            "{what} has {} entries for {} vertices",
            v.len(),
            labels.len()
        ))),
        MarginalSpec::Labelled(map) => {
            let mut out = vec![0.0; labels.len()];
            for (label, &mass) in map {
                let i = labels
                    .iter()
                    .position(|l| l == label)
                    .ok_or_else(|| bad(format!("{what}: unknown vertex `{label}`")))?;
                out[i] = mass;
            }
            Ok(out)
        }
    }
}

pub fn resolve(cfg: &Config) -> anyhow::Result<Problem> {
    if cfg.kernels.is_empty() {
        return Err(bad("no kernels given"));
    }
    let names: Vec<String> = cfg.kernels.keys().cloned().collect();
    let kernels = cfg
        .kernels
        .iter()
        .map(|(name, spec)| {
            let what = format!("kernel `{name}`");
            let k = match spec {
                KernelSpec::Single(rows) => Kernel::homogeneous(matrix(rows, &what)?),
                KernelSpec::Steps(steps) => Kernel::time_varying(
                    steps.iter().map(|m| matrix(m, &what)).collect::<anyhow::Result<_>>()?,
                ),
            };
            k.map_err(|e| bad(format!("{what}: {e}")))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let kernel_n = kernels[0].n();
    if let Some((name, k)) = names.iter().zip(&kernels).find(|(_, k)| k.n() != kernel_n) {
        return Err(bad(format!("kernel `{name}` has {} states, expected {kernel_n}", k.n())));
    }
    let (labels, edges) = resolve_labels(cfg, kernel_n)?;
    if labels.len() != kernel_n {
        return Err(bad(format!("network has {} vertices, kernels have {kernel_n}", labels.len())));
    }
    if !edges.is_empty() {
        let net = Network::new(labels.len(), edges).map_err(|e| bad(e.to_string()))?;
        for (name, k) in names.iter().zip(&kernels) {
            let report = validate_kernel(k, &net);
            if !report.is_valid() {
                return Err(bad(format!("kernel `{name}`: {:?}", report.violations[0])));
            }
        }
    }
    let weights = match &cfg.weights {
        Some(w) => per_commodity(w, &names, "weights")?,
        None if names.len() == 1 => vec![1.0],
        None => return Err(bad("`weights` is required with several commodities")),
    };
    let initials = cfg
        .initials
        .as_ref()
        .map(|r| per_commodity(r, &names, "initials"))
        .transpose()?;
    if let Some(r) = &initials {
        if let Some((name, v)) = names.iter().zip(r).find(|(_, v)| v.len() != kernel_n) {
            return Err(bad(format!("initial law `{name}` has {} entries", v.len())));
        }
    }
    let creation: Option<Vec<Creation<f64>>> = match &cfg.creation {
        None => None,
        Some(CreationSpec::Shared(v)) => Some(vec![creation_of(v); names.len()]),
        Some(CreationSpec::Named(map)) => {
            let v = per_commodity(&PerCommodity::Named(map.clone()), &names, "creation")?;
            Some(v.iter().map(creation_of).collect())
        }
    };
    let parked_prior = match &cfg.parked_prior {
        Some(p) => per_commodity(p, &names, "parked_prior")?,
        None => vec![0.0; names.len()],
    };
    let mut forbidden = vec![Vec::new(); names.len()];
    if let Some(map) = &cfg.forbidden {
        for (name, list) in map {
            let k = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| bad(format!("forbidden: unknown commodity `{name}`")))?;
            for label in list {
                let v = labels
                    .iter()
                    .position(|l| l == label)
                    .ok_or_else(|| bad(format!("forbidden: unknown vertex `{label}`")))?;
                let enters = kernels[k].matrices().iter().any(|m| (0..kernel_n).any(|i| m[(i, v)] > 0.0));
                let starts = initials.as_ref().is_some_and(|r| r[k][v] > 0.0);
                if enters || starts {
                    return Err(bad(format!("commodity `{name}` has prior mass on forbidden vertex `{label}`")));
                }
                forbidden[k].push(v);
            }
        }
    }
    Ok(Problem {
        mu0: resolve_marginal(&cfg.marginals.mu0, &labels, "mu0")?,
        mu_n: resolve_marginal(&cfg.marginals.mu_n, &labels, "muN")?,
        labels,
        names,
        kernels,
        initials,
        weights,
        horizon: cfg.horizon,
        creation,
        parked_prior,
        forbidden,
    })
}
