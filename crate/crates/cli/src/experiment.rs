//! Synthetic traffic scenario: cars and trucks on a 19-node road network,
//! observed only in aggregate at `t = 0` and `t = 9`.
//!
//! Agents live on directed road segments, so the solver runs on the line
//! graph: one state per segment, with moves between consecutive segments and a
//! self-loop for vehicles that stay put. Vehicles may park at a few nodes.
//! Every number below is a synthetic stand-in.

use indexmap::IndexMap;

use crate::config::{Config, CreationSpec, CreationVec, Edge, KernelSpec, MarginalSpec, Marginals, PerCommodity};

pub const HORIZON: usize = 9;
pub const CARS: &str = "cars";
pub const TRUCKS: &str = "trucks";

/// Two-way roads between nodes `1..=19`.
const ROADS: &[(usize, usize)] = &[
    (1, 2), (1, 3), (2, 4), (3, 4), (3, 5), (4, 6), (5, 7), (6, 7), (6, 9),
    (7, 8), (8, 11), (9, 10), (9, 12), (10, 11), (10, 13), (11, 14), (12, 13),
    (12, 15), (13, 14), (13, 16), (14, 17), (15, 16), (16, 18), (17, 19), (18, 19),
];

const PARKING_NODES: &[usize] = &[1, 5, 11, 15, 19];
const CAR_STARTS: &[(usize, usize)] = &[(2, 4), (6, 9)];
const TRUCK_STARTS: &[(usize, usize)] = &[(1, 3), (19, 18)];
const TRUCK_FORBIDDEN: &[(usize, usize)] = &[(6, 9), (9, 10), (9, 6), (10, 9)];
const PARKED_AT_START: f64 = 0.2;

pub fn segment_label((u, v): (usize, usize)) -> String {
    format!("{u}->{v}")
}

pub fn segments() -> Vec<(usize, usize)> {
    ROADS.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect()
}

struct Profile {
    stay: f64,
    kill: f64,
    create: f64,
    /// Extra weight on turns toward higher-numbered nodes.
    drift: f64,
    kill_boost_from: usize,
}

const CAR: Profile = Profile { stay: 0.3, kill: 0.1, create: 0.15, drift: 1.0, kill_boost_from: usize::MAX };
const TRUCK: Profile = Profile { stay: 0.4, kill: 0.05, create: 0.1, drift: 1.0, kill_boost_from: usize::MAX };

/// Row-substochastic kernel on segments; `banned` segments are never entered.
fn kernel(seg: &[(usize, usize)], p: &Profile, banned: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let n = seg.len();
    let mut rows = vec![vec![0.0; n]; n];
    for (i, &(u, v)) in seg.iter().enumerate() {
        if banned.contains(&(u, v)) {
            continue;
        }
        let mut kill = if PARKING_NODES.contains(&v) { p.kill } else { 0.0 };
        if v >= p.kill_boost_from && kill > 0.0 {
            kill *= 2.0;
        }
        let next: Vec<(usize, f64)> = seg
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| a == v && !banned.contains(&(a, b)))
            .map(|(j, &(_, w))| {
                let turn = if w == u { 0.2 } else { 1.0 };
                let drift = if w > v { p.drift } else { 1.0 };
                (j, turn * drift)
            })
            .collect();
        let total: f64 = next.iter().map(|x| x.1).sum();
        let moving = 1.0 - p.stay - kill;
        rows[i][i] = p.stay;
        for (j, w) in next {
            rows[i][j] += moving * w / total;
        }
    }
    rows
}

fn creation(seg: &[(usize, usize)], p: &Profile, banned: &[(usize, usize)]) -> Vec<f64> {
    let exits: Vec<usize> = (0..seg.len())
        .filter(|&j| PARKING_NODES.contains(&seg[j].0) && !banned.contains(&seg[j]))
        .collect();
    let mut c = vec![0.0; seg.len()];
    for &j in &exits {
        c[j] = p.create / exits.len() as f64;
    }
    c
}

fn initial(seg: &[(usize, usize)], favoured: &[(usize, usize)], banned: &[(usize, usize)]) -> Vec<f64> {
    let w: Vec<f64> = seg
        .iter()
        .map(|s| {
            if banned.contains(s) {
                0.0
            } else if favoured.contains(s) {
                12.0
            } else {
                1.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Pushes an augmented law (graph part `r`, parked `rho`) through `steps` moves.
fn push_augmented(r: &[f64], rho: f64, a: &[Vec<f64>], c: &[f64], steps: usize) -> (Vec<f64>, f64) {
    let n = r.len();
    let (mut x, mut parked) = (r.to_vec(), rho);
    for _ in 0..steps {
        let mut next = vec![0.0; n];
        let mut next_parked = parked * (1.0 - c.iter().sum::<f64>());
        for i in 0..n {
            let kept: f64 = a[i].iter().sum();
            for j in 0..n {
                next[j] += x[i] * a[i][j];
            }
            next_parked += x[i] * (1.0 - kept);
        }
        for j in 0..n {
            next[j] += parked * c[j];
        }
        x = next;
        parked = next_parked;
    }
    (x, parked)
}

/// The bundled scenario. The terminal histogram is generated by a "true"
/// population that drifts toward the high-numbered (south-east) nodes and
/// parks more there, on the same support as the prior, so it is reachable.
pub fn scenario() -> Config {
    let seg = segments();
    let labels: Vec<String> = seg.iter().map(|&s| segment_label(s)).collect();
    let weights = [2.0 / 3.0, 1.0 / 3.0];

    let car_a = kernel(&seg, &CAR, &[]);
    let truck_a = kernel(&seg, &TRUCK, TRUCK_FORBIDDEN);
    let car_c = creation(&seg, &CAR, &[]);
    let truck_c = creation(&seg, &TRUCK, TRUCK_FORBIDDEN);
    let car_r = initial(&seg, CAR_STARTS, &[]);
    let truck_r = initial(&seg, TRUCK_STARTS, TRUCK_FORBIDDEN);

    let true_car = kernel(&seg, &Profile { drift: 3.0, kill_boost_from: 15, ..CAR }, &[]);
    let true_truck = kernel(&seg, &Profile { drift: 2.0, kill_boost_from: 15, ..TRUCK }, TRUCK_FORBIDDEN);

    let start = |r: &[f64]| -> Vec<f64> { r.iter().map(|v| v * (1.0 - PARKED_AT_START)).collect() };
    let (car_end, _) = push_augmented(&start(&car_r), PARKED_AT_START, &true_car, &car_c, HORIZON);
    let (truck_end, _) = push_augmented(&start(&truck_r), PARKED_AT_START, &true_truck, &truck_c, HORIZON);
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| weights[0] * x + weights[1] * y).collect()
    };
    let mu0 = mix(&start(&car_r), &start(&truck_r));
    let mu_n = mix(&car_end, &truck_end);

    // Self-loops first, so first-appearance order is the segment order
    let mut edges: Vec<Edge> = labels.iter().map(|l| Edge::Label([l.clone(), l.clone()])).collect();
    for (i, &(_, v)) in seg.iter().enumerate() {
        for &(a, b) in &seg {
            if a == v {
                edges.push(Edge::Label([labels[i].clone(), segment_label((a, b))]));
            }
        }
    }

    let name = |s: &str| s.to_string();
    Config {
        note: Some(
            "synthetic: every kernel, creation rate, initial law and marginal in this file is an invented stand-in"
                .into(),
        ),
        n: Some(seg.len()),
        edges,
        kernels: IndexMap::from([(name(CARS), KernelSpec::Single(car_a)), (name(TRUCKS), KernelSpec::Single(truck_a))]),
        initials: Some(PerCommodity::Named(IndexMap::from([(name(CARS), car_r), (name(TRUCKS), truck_r)]))),
        weights: Some(PerCommodity::Named(IndexMap::from([(name(CARS), weights[0]), (name(TRUCKS), weights[1])]))),
        marginals: Marginals {
            mu0: MarginalSpec::Dense(mu0),
            mu_n: MarginalSpec::Dense(mu_n),
        },
        horizon: HORIZON,
        creation: Some(CreationSpec::Named(IndexMap::from([
            (name(CARS), CreationVec::Single(car_c)),
            (name(TRUCKS), CreationVec::Single(truck_c)),
        ]))),
        parked_prior: Some(PerCommodity::Named(IndexMap::from([
            (name(CARS), PARKED_AT_START),
            (name(TRUCKS), PARKED_AT_START),
        ]))),
        forbidden: Some(IndexMap::from([(
            name(TRUCKS),
            TRUCK_FORBIDDEN.iter().map(|&s| segment_label(s)).collect(),
        )])),
    }
}
