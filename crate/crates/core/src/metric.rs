//! Hamming-average metrics on `X^V` and covering and packing numbers of
//! finite sets and of measures.
//!
//! Ball conventions: covering defaults to closed balls `d ≤ δ`; packing is
//! always `≥ δ` separation. With open covering balls `d < δ` both chains
//! `cov_{δ/2} ≥ pack_δ ≥ cov_δ` hold exactly, so the chain checks use
//! [`Ball::Open`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{structural, validation, Error, Result};
use crate::model::{log_sum_exp, Configuration, LogCount};
use crate::process::check_distribution;
use crate::rng::{self, Rng};

/// Exact set cover is attempted up to this many points.
pub const EXACT_COVER_LIMIT: usize = 4096;
/// Exact packing is attempted up to this many points.
pub const EXACT_PACK_LIMIT: usize = 512;
/// Exact measure covering is attempted up to this many atoms.
pub const EXACT_MEASURE_ATOMS: usize = 24;
/// Exact measure packing enumerates subsets of at most this many atoms.
pub const EXACT_MEASURE_PACK_ATOMS: usize = 20;
/// Candidate centers for exact measure covering range over all of `X^V`
/// when it has at most this many points.
pub const EXACT_CENTER_SPACE: u128 = 1 << 16;
/// Search nodes before an exact solver gives up and reports no value.
pub const EXACT_NODE_BUDGET: u64 = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Ball {
    /// `d(x, c) ≤ δ`.
    Closed,
    /// `d(x, c) < δ`.
    Open,
}

impl Ball {
    #[inline]
    fn contains(self, d: f64, delta: f64) -> bool {
        match self {
            Ball::Closed => d <= delta,
            Ball::Open => d < delta,
        }
    }
}

/// Normalized Hamming metrics on configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "metric")]
pub enum Metric {
    /// Fraction of disagreeing vertices.
    Hamming,
    /// `½ d_X + ½ d_Y` on `(X × Y)^V`, pair symbols `x|Y| + y`.
    PairAverage { right: usize },
}

impl Metric {
    pub fn distance(&self, x: &Configuration, y: &Configuration) -> Result<f64> {
        if x.len() != y.len() {
            return Err(structural("configurations of different lengths"));
        }
        if x.is_empty() {
            return Ok(0.0);
        }
        let n = x.len() as f64;
        Ok(match *self {
            Metric::Hamming => x.0.iter().zip(&y.0).filter(|(a, b)| a != b).count() as f64 / n,
            Metric::PairAverage { right } => {
                let r = right as u8;
                let mut miss = 0usize;
                for (&a, &b) in x.0.iter().zip(&y.0) {
                    miss += usize::from(a / r != b / r) + usize::from(a % r != b % r);
                }
                miss as f64 / (2.0 * n)
            }
        })
    }
}

pub fn hamming_distance(x: &Configuration, y: &Configuration) -> Result<f64> {
    Metric::Hamming.distance(x, y)
}

fn distance_matrix(points: &[Configuration], metric: Metric) -> Result<Vec<Vec<f64>>> {
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.len() != first.len()) {
            return Err(structural("configurations of different lengths"));
        }
    }
    Ok(points
        .par_iter()
        .map(|x| points.iter().map(|y| metric.distance(x, y).expect("lengths checked")).collect())
        .collect())
}

/// A greedy bound and, when the exact solver finished, the exact value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Bounds {
    pub greedy: usize,
    pub exact: Option<usize>,
}

impl Bounds {
    /// The exact value, else the greedy one.
    pub fn best(&self) -> usize {
        self.exact.unwrap_or(self.greedy)
    }
}

#[derive(Clone, Debug)]
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn new(n: usize) -> Self {
        BitSet { words: vec![0; n.div_ceil(64)] }
    }
    fn full(n: usize) -> Self {
        let mut b = BitSet::new(n);
        for i in 0..n {
            b.insert(i);
        }
        b
    }
    fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }
    fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }
    fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
    fn count_and(&self, other: &BitSet) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }
    fn remove_all(&mut self, other: &BitSet) {
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a &= !b);
    }
    fn and(&self, other: &BitSet) -> BitSet {
        BitSet {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        }
    }
    fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }
    fn first(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }
    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * 64 + t)
            })
        })
    }
}

/// `cov_δ(S)`: fewest points of `S` whose balls cover `S`.
pub fn cov_delta(points: &[Configuration], delta: f64, ball: Ball) -> Result<Bounds> {
    cov_delta_metric(points, delta, ball, Metric::Hamming)
}

pub fn cov_delta_metric(points: &[Configuration], delta: f64, ball: Ball, metric: Metric) -> Result<Bounds> {
    if !(delta >= 0.0) {
        return Err(validation("delta must be nonnegative"));
    }
    let n = points.len();
    if n == 0 {
        return Ok(Bounds { greedy: 0, exact: Some(0) });
    }
    let d = distance_matrix(points, metric)?;
    let balls: Vec<BitSet> = (0..n)
        .map(|i| {
            let mut b = BitSet::new(n);
            for j in 0..n {
                if ball.contains(d[i][j], delta) {
                    b.insert(j);
                }
            }
            b
        })
        .collect();
    let greedy = greedy_cover(&balls, n);
    let exact = if n <= EXACT_COVER_LIMIT { exact_cover(&balls, n, greedy) } else { None };
    Ok(Bounds { greedy, exact })
}

fn greedy_cover(balls: &[BitSet], n: usize) -> usize {
    let mut uncovered = BitSet::full(n);
    let mut used = 0;
    while !uncovered.is_empty() {
        // Lowest index among the maximizers.
        let (best, _) = balls
            .iter()
            .enumerate()
            .map(|(i, b)| (i, b.count_and(&uncovered)))
            .fold((0, 0), |acc, x| if x.1 > acc.1 { x } else { acc });
        uncovered.remove_all(&balls[best]);
        used += 1;
    }
    used
}

/// Branch and bound over the sets covering the hardest uncovered point.
fn exact_cover(balls: &[BitSet], n: usize, upper: usize) -> Option<usize> {
    let max_ball = balls.iter().map(BitSet::count).max().unwrap_or(1).max(1);
    let covering: Vec<Vec<usize>> = (0..n).map(|j| (0..n).filter(|&i| balls[i].contains(j)).collect()).collect();
    let mut best = upper;
    let mut nodes = 0u64;

    fn go(
        uncovered: &BitSet,
        used: usize,
        best: &mut usize,
        nodes: &mut u64,
        balls: &[BitSet],
        covering: &[Vec<usize>],
        max_ball: usize,
    ) -> bool {
        *nodes += 1;
        if *nodes > EXACT_NODE_BUDGET {
            return false;
        }
        let left = uncovered.count();
        if left == 0 {
            *best = (*best).min(used);
            return true;
        }
        if used + left.div_ceil(max_ball) >= *best {
            return true;
        }
        let pivot = uncovered
            .iter()
            .min_by_key(|&j| covering[j].len())
            .expect("nonempty");
        let mut options: Vec<(usize, usize)> = covering[pivot].iter().map(|&i| (balls[i].count_and(uncovered), i)).collect();
        options.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, i) in options {
            let mut next = uncovered.clone();
            next.remove_all(&balls[i]);
            if !go(&next, used + 1, best, nodes, balls, covering, max_ball) {
                return false;
            }
        }
        true
    }

    go(&BitSet::full(n), 0, &mut best, &mut nodes, balls, &covering, max_ball).then_some(best)
}

/// `pack_δ(S)`: largest subset of `S` with pairwise distances `≥ δ`.
pub fn pack_delta(points: &[Configuration], delta: f64) -> Result<Bounds> {
    pack_delta_metric(points, delta, Metric::Hamming)
}

pub fn pack_delta_metric(points: &[Configuration], delta: f64, metric: Metric) -> Result<Bounds> {
    if !(delta > 0.0) {
        return Err(validation("delta must be positive"));
    }
    let n = points.len();
    let d = distance_matrix(points, metric)?;
    let mut kept: Vec<usize> = vec![];
    for i in 0..n {
        if kept.iter().all(|&k| d[i][k] >= delta) {
            kept.push(i);
        }
    }
    let greedy = kept.len();
    let exact = if n <= EXACT_PACK_LIMIT {
        let compatible: Vec<BitSet> = (0..n)
            .map(|i| {
                let mut b = BitSet::new(n);
                for j in 0..n {
                    if i != j && d[i][j] >= delta {
                        b.insert(j);
                    }
                }
                b
            })
            .collect();
        max_clique(&compatible, n, greedy)
    } else {
        None
    };
    Ok(Bounds { greedy, exact })
}

/// Maximum clique with a greedy-coloring bound.
fn max_clique(adj: &[BitSet], n: usize, lower: usize) -> Option<usize> {
    let mut best = lower;
    let mut nodes = 0u64;

    fn color_order(cands: &BitSet, adj: &[BitSet]) -> Vec<(usize, usize)> {
        let mut out = vec![];
        let mut left = cands.clone();
        let mut color = 0;
        while !left.is_empty() {
            color += 1;
            let mut avail = left.clone();
            while let Some(v) = avail.first() {
                out.push((v, color));
                let mut single = BitSet::new(adj.len());
                single.insert(v);
                left.remove_all(&single);
                avail.remove_all(&single);
                avail.remove_all(&adj[v]);
            }
        }
        out
    }

    fn expand(size: usize, cands: BitSet, best: &mut usize, nodes: &mut u64, adj: &[BitSet]) -> bool {
        *nodes += 1;
        if *nodes > EXACT_NODE_BUDGET {
            return false;
        }
        let order = color_order(&cands, adj);
        let mut cands = cands;
        for &(v, color) in order.iter().rev() {
            if size + color <= *best {
                return true;
            }
            let next = cands.and(&adj[v]);
            if next.is_empty() {
                *best = (*best).max(size + 1);
            } else if !expand(size + 1, next, best, nodes, adj) {
                return false;
            }
            let mut single = BitSet::new(adj.len());
            single.insert(v);
            cands.remove_all(&single);
        }
        true
    }

    if n == 0 {
        return Some(0);
    }
    expand(0, BitSet::full(n), &mut best, &mut nodes, adj).then_some(best)
}

#[derive(Clone, Debug, PartialEq)]
enum Repr {
    Explicit { support: Vec<Configuration>, weights: Vec<f64> },
    /// `ν^{×V}` for a distribution `ν` on `X`.
    Product { weights: Vec<f64> },
}

/// A probability measure on `X^V`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeasure {
    alphabet_size: usize,
    vertices: usize,
    repr: Repr,
}

impl ModelMeasure {
    /// Merges repeated configurations; atoms are kept in configuration order.
    pub fn explicit(alphabet_size: usize, atoms: Vec<(Configuration, f64)>) -> Result<Self> {
        let vertices = atoms.first().map(|a| a.0.len()).ok_or_else(|| validation("empty support"))?;
        let mut merged: BTreeMap<Configuration, f64> = BTreeMap::new();
        for (c, w) in atoms {
            if c.len() != vertices {
                return Err(structural("atoms of different lengths"));
            }
            if c.0.iter().any(|&s| usize::from(s) >= alphabet_size) {
                return Err(validation("atom symbol outside the alphabet"));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(validation("atom weights must be nonnegative"));
            }
            *merged.entry(c).or_insert(0.0) += w;
        }
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(validation(format!("atom weights sum to {total}")));
        }
        let (support, weights) = merged.into_iter().filter(|(_, w)| *w > 0.0).unzip();
        Ok(ModelMeasure {
            alphabet_size,
            vertices,
            repr: Repr::Explicit { support, weights },
        })
    }

    pub fn point_mass(alphabet_size: usize, x: Configuration) -> Result<Self> {
        ModelMeasure::explicit(alphabet_size, vec![(x, 1.0)])
    }

    /// Uniform on the listed configurations, counting repeats.
    pub fn uniform(alphabet_size: usize, configs: &[Configuration]) -> Result<Self> {
        let w = 1.0 / configs.len() as f64;
        ModelMeasure::explicit(alphabet_size, configs.iter().map(|c| (c.clone(), w)).collect())
    }

    /// `ν^{×V}`.
    pub fn product(weights: Vec<f64>, vertices: usize) -> Result<Self> {
        check_distribution(&weights)?;
        Ok(ModelMeasure {
            alphabet_size: weights.len(),
            vertices,
            repr: Repr::Product { weights },
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self.repr, Repr::Explicit { .. })
    }

    /// Atoms and weights of an explicit measure.
    pub fn atoms(&self) -> Option<(&[Configuration], &[f64])> {
        match &self.repr {
            Repr::Explicit { support, weights } => Some((support, weights)),
            Repr::Product { .. } => None,
        }
    }

    fn require_atoms(&self, what: &str) -> Result<(&[Configuration], &[f64])> {
        self.atoms()
            .ok_or_else(|| Error::Refused(format!("{what} needs an explicitly supported measure")))
    }

    /// Per-site weights of a product measure.
    pub fn site_weights(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Product { weights } => Some(weights),
            Repr::Explicit { .. } => None,
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Configuration {
        match &self.repr {
            Repr::Explicit { support, weights } => {
                let cum = rng::cumulative(weights);
                support[rng::categorical(rng, &cum)].clone()
            }
            Repr::Product { weights } => {
                let cum = rng::cumulative(weights);
                Configuration((0..self.vertices).map(|_| rng::categorical(rng, &cum) as u8).collect())
            }
        }
    }

    /// `ν × ν` on `(X × X)^V`.
    pub fn square(&self) -> Result<Self> {
        self.pair_with(self)
    }

    /// `ν × λ` on `(X × Y)^V`.
    pub fn pair_with(&self, other: &ModelMeasure) -> Result<Self> {
        if self.vertices != other.vertices {
            return Err(structural("measures on different vertex sets"));
        }
        let q = self.alphabet_size * other.alphabet_size;
        if q > 256 {
            return Err(validation("pair alphabet exceeds 256 symbols"));
        }
        match (&self.repr, &other.repr) {
            (Repr::Product { weights: a }, Repr::Product { weights: b }) => {
                ModelMeasure::product(a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect(), self.vertices)
            }
            (Repr::Explicit { support: sa, weights: wa }, Repr::Explicit { support: sb, weights: wb }) => {
                let mut atoms = Vec::with_capacity(sa.len() * sb.len());
                for (x, p) in sa.iter().zip(wa) {
                    for (y, r) in sb.iter().zip(wb) {
                        atoms.push((Configuration::pair(x, y, other.alphabet_size)?, p * r));
                    }
                }
                ModelMeasure::explicit(q, atoms)
            }
            _ => Err(Error::Refused("pairing an explicit measure with a product measure".into())),
        }
    }

    /// `ν(A)` for an explicit measure.
    pub fn mass_where(&self, pred: impl Fn(&Configuration) -> bool + Sync) -> Result<f64> {
        let (support, weights) = self.require_atoms("exact mass")?;
        Ok(support.iter().zip(weights).filter(|(c, _)| pred(c)).map(|(_, w)| w).sum())
    }
}

fn check_eps(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(validation("epsilon must lie in (0, 1)"))
    }
}

/// Greedy partial cover over support centers, stopping at mass `> 1 - ε`.
fn greedy_partial_cover(cover: &[Vec<usize>], weights: &[f64], epsilon: f64) -> usize {
    let mut covered = vec![false; weights.len()];
    let mut mass = 0.0;
    let mut used = 0;
    while mass <= 1.0 - epsilon {
        let gain = |c: &Vec<usize>| c.iter().filter(|&&j| !covered[j]).map(|&j| weights[j]).sum::<f64>();
        let (best, g) = cover
            .iter()
            .enumerate()
            .map(|(i, c)| (i, gain(c)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if g <= 0.0 {
            break;
        }
        for &j in &cover[best] {
            covered[j] = true;
        }
        mass += g;
        used += 1;
    }
    used
}

/// `cov_{ε,δ}(ν) = min{|F| : ν(B_δ(F)) > 1 - ε}` with centers anywhere in
/// the configuration space. The greedy bound restricts centers to atoms;
/// the exact value searches all of `X^V` when it is small enough.
pub fn cov_eps_delta(nu: &ModelMeasure, epsilon: f64, delta: f64, metric: Metric, ball: Ball) -> Result<Bounds> {
    check_eps(epsilon)?;
    if !(delta >= 0.0) {
        return Err(validation("delta must be nonnegative"));
    }
    let (support, weights) = nu.require_atoms("cov_{eps,delta}")?;
    let m = support.len();
    let d = distance_matrix(support, metric)?;
    let cover: Vec<Vec<usize>> = (0..m).map(|i| (0..m).filter(|&j| ball.contains(d[i][j], delta)).collect()).collect();
    let greedy = greedy_partial_cover(&cover, weights, epsilon);
    let space = (nu.alphabet_size as u128).checked_pow(nu.vertices as u32);
    let exact = if m <= EXACT_MEASURE_ATOMS && space.is_some_and(|s| s <= EXACT_CENTER_SPACE) {
        let mut masks: Vec<u32> = (0..space.unwrap() as u64)
            .into_par_iter()
            .map(|i| {
                let c = Configuration::from_index(i, nu.vertices, nu.alphabet_size);
                let mut mask = 0u32;
                for (j, s) in support.iter().enumerate() {
                    if ball.contains(metric.distance(&c, s).expect("same length"), delta) {
                        mask |= 1 << j;
                    }
                }
                mask
            })
            .collect();
        masks.sort_unstable();
        masks.dedup();
        min_masks_for_mass(&masks, weights, 1.0 - epsilon, greedy)
    } else {
        None
    };
    Ok(Bounds { greedy, exact })
}

fn mask_mass(mask: u32, weights: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut m = mask;
    while m != 0 {
        let j = m.trailing_zeros() as usize;
        s += weights[j];
        m &= m - 1;
    }
    s
}

/// Fewest masks whose union has mass `> threshold`, by breadth-first search
/// over reachable unions; `upper` is a known feasible count.
fn min_masks_for_mass(masks: &[u32], weights: &[f64], threshold: f64, upper: usize) -> Option<usize> {
    // Drop masks contained in another mask.
    let maximal: Vec<u32> = masks
        .iter()
        .copied()
        .filter(|&a| a != 0 && !masks.iter().any(|&b| b != a && a & b == a))
        .collect();
    if threshold < 0.0 {
        return Some(0);
    }
    let m = weights.len();
    let mut seen = vec![false; 1usize << m];
    let mut frontier = vec![0u32];
    seen[0] = true;
    let mut work = 0u64;
    for k in 1..upper {
        let mut next = vec![];
        for &s in &frontier {
            for &mask in &maximal {
                work += 1;
                if work > EXACT_NODE_BUDGET * 4 {
                    return None;
                }
                let u = s | mask;
                if !seen[u as usize] {
                    seen[u as usize] = true;
                    if mask_mass(u, weights) > threshold {
                        return Some(k);
                    }
                    next.push(u);
                }
            }
        }
        frontier = next;
    }
    Some(upper)
}

/// `pack_{ε,δ}(ν) = min{pack_δ(U) : U ⊆ supp ν, ν(U) > 1 - ε}`, exact by
/// enumerating subsets of a small support.
pub fn pack_eps_delta(nu: &ModelMeasure, epsilon: f64, delta: f64, metric: Metric) -> Result<Option<usize>> {
    check_eps(epsilon)?;
    if !(delta > 0.0) {
        return Err(validation("delta must be positive"));
    }
    let (support, weights) = nu.require_atoms("pack_{eps,delta}")?;
    let m = support.len();
    if m > EXACT_MEASURE_PACK_ATOMS {
        return Ok(None);
    }
    let d = distance_matrix(support, metric)?;
    // Conflict neighbourhoods: atoms closer than δ.
    let close: Vec<u32> = (0..m)
        .map(|i| (0..m).filter(|&j| d[i][j] < delta).fold(0u32, |acc, j| acc | 1 << j))
        .collect();
    let full = 1usize << m;
    // alpha[U] = largest δ-separated subset of U.
    let mut alpha = vec![0u8; full];
    for u in 1..full {
        let v = u.trailing_zeros() as usize;
        let without = u & !(1 << v);
        let with = u & !(close[v] as usize);
        alpha[u] = alpha[without].max(1 + alpha[with]);
    }
    let threshold = 1.0 - epsilon;
    Ok((1..full)
        .filter(|&u| mask_mass(u as u32, weights) > threshold)
        .map(|u| usize::from(alpha[u]))
        .min())
}

/// `cov_ε(ν) = min{|F| : ν(F) > 1 - ε}`: the heaviest atoms first. Product
/// measures are handled through letter types, whose members share a weight.
pub fn cov_eps(nu: &ModelMeasure, epsilon: f64) -> Result<LogCount> {
    check_eps(epsilon)?;
    let threshold = 1.0 - epsilon;
    match &nu.repr {
        Repr::Explicit { weights, .. } => {
            let mut sorted = weights.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite weights"));
            let mut mass = 0.0;
            for (i, w) in sorted.iter().enumerate() {
                mass += w;
                if mass > threshold {
                    return Ok(LogCount::from_exact(i as u128 + 1));
                }
            }
            Ok(LogCount::from_exact(sorted.len() as u128))
        }
        Repr::Product { weights } => product_cov_eps(weights, nu.vertices, threshold),
    }
}

/// Letter types beyond which product `cov_ε` is refused.
pub const MAX_TYPES: u64 = 10_000_000;

fn product_cov_eps(weights: &[f64], n: usize, threshold: f64) -> Result<LogCount> {
    let q = weights.len();
    let types = (1..q as u64).fold(1u128, |acc, i| acc * (n as u128 + i as u128) / i as u128);
    if types > u128::from(MAX_TYPES) {
        return Err(Error::Refused(format!("{types} letter types exceed the limit {MAX_TYPES}")));
    }
    let ln_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let ln_fact: Vec<f64> = (0..=n).map(|k| ln_gamma(k as f64 + 1.0)).collect();
    // (log weight of one configuration, log size of the type).
    let mut classes: Vec<(f64, f64)> = vec![];
    let mut counts = vec![0usize; q];
    fn walk(i: usize, left: usize, counts: &mut Vec<usize>, out: &mut Vec<(f64, f64)>, ln_w: &[f64], ln_fact: &[f64], n: usize) {
        if i + 1 == counts.len() {
            counts[i] = left;
            let mut lw = 0.0;
            for (k, l) in counts.iter().zip(ln_w) {
                if *k > 0 {
                    lw += *k as f64 * l;
                }
            }
            if lw.is_finite() {
                let size = ln_fact[n] - counts.iter().map(|&k| ln_fact[k]).sum::<f64>();
                out.push((lw, size));
            }
            return;
        }
        for k in 0..=left {
            counts[i] = k;
            walk(i + 1, left - k, counts, out, ln_w, ln_fact, n);
        }
    }
    walk(0, n, &mut counts, &mut classes, &ln_w, &ln_fact, n);
    classes.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite"));
    let mut mass = 0.0;
    let mut logs: Vec<f64> = vec![];
    let mut exact: Option<u128> = Some(0);
    for &(lw, size) in &classes {
        let class_mass = (lw + size).exp();
        if mass + class_mass > threshold {
            // Smallest r with mass + r·w > threshold; w may underflow, so
            // large r is kept as a logarithm.
            let ln_ratio = (threshold - mass).ln() - lw;
            if ln_ratio < 40.0 {
                let r = ln_ratio.exp().floor() + 1.0;
                logs.push(r.ln());
                exact = exact.and_then(|e| e.checked_add(r as u128));
            } else {
                logs.push(ln_ratio);
                exact = None;
            }
            return Ok(LogCount { exact, log: log_sum_exp(&logs) });
        }
        mass += class_mass;
        logs.push(size);
        exact = exact.and_then(|e| {
            let s = size.exp().round();
            (size < 60.0).then(|| e.checked_add(s as u128)).flatten()
        });
    }
    Ok(LogCount { exact, log: log_sum_exp(&logs) })
}

/// `ln |B_δ(x)| = ln Σ_{j ≤ δ|V|} C(|V|, j) (|X| - 1)^j`.
pub fn hamming_ball_volume(vertices: usize, delta: f64, alphabet_size: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(validation("delta must lie in [0, 1]"));
    }
    if alphabet_size == 0 {
        return Err(validation("empty alphabet"));
    }
    let radius = ((delta * vertices as f64) + 1e-9).floor() as usize;
    Ok(ball_volume_radius(vertices, radius.min(vertices), alphabet_size))
}

fn ball_volume_radius(n: usize, radius: usize, q: usize) -> f64 {
    let ln_n = ln_gamma(n as f64 + 1.0);
    let terms: Vec<f64> = (0..=radius)
        .filter(|&j| j == 0 || q > 1)
        .map(|j| ln_n - ln_gamma(j as f64 + 1.0) - ln_gamma((n - j) as f64 + 1.0) + if j == 0 { 0.0 } else { j as f64 * ((q - 1) as f64).ln() })
        .collect();
    log_sum_exp(&terms)
}

/// Largest `δ = j/|V|` with `ln |B_δ| ≤ η |V|`, by bisection on `j`.
pub fn max_delta_for_rate(vertices: usize, alphabet_size: usize, eta: f64) -> f64 {
    let budget = eta * vertices as f64;
    let (mut lo, mut hi) = (0usize, vertices);
    if ball_volume_radius(vertices, hi, alphabet_size) <= budget {
        return 1.0;
    }
    // Invariant: volume(lo) ≤ budget < volume(hi).
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ball_volume_radius(vertices, mid, alphabet_size) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo as f64 / vertices as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(s: &str) -> Configuration {
        Configuration(s.bytes().map(|b| b - b'0').collect())
    }

    fn cube(n: usize) -> Vec<Configuration> {
        (0..1u64 << n).map(|i| Configuration::from_index(i, n, 2)).collect()
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming_distance(&cfg("0101"), &cfg("0101")).unwrap(), 0.0);
        assert_eq!(hamming_distance(&cfg("0011"), &cfg("0101")).unwrap(), 0.5);
        assert_eq!(hamming_distance(&cfg("0110"), &cfg("1001")).unwrap(), 1.0);
        assert!(hamming_distance(&cfg("01"), &cfg("011")).is_err());
        // Pair symbols (x,y) = 2x + y: 0 = (0,0), 3 = (1,1), 1 = (0,1).
        let pa = Metric::PairAverage { right: 2 };
        assert_eq!(pa.distance(&Configuration(vec![0, 0]), &Configuration(vec![3, 1])).unwrap(), 0.75);
    }

    #[test]
    fn cover_examples() {
        assert_eq!(cov_delta(&[cfg("010")], 0.0, Ball::Closed).unwrap().exact, Some(1));
        let sq = cube(2);
        let c = cov_delta(&sq, 0.5, Ball::Closed).unwrap();
        assert_eq!(c.exact, Some(2));
        assert!(c.greedy >= 2);
        assert_eq!(cov_delta(&sq, 1.0, Ball::Closed).unwrap().exact, Some(1));
        assert_eq!(cov_delta(&cube(3), 0.0, Ball::Closed).unwrap().exact, Some(8));
    }

    #[test]
    fn pack_examples() {
        assert_eq!(pack_delta(&[cfg("010")], 0.5).unwrap().exact, Some(1));
        assert_eq!(pack_delta(&cube(2), 1.0).unwrap().exact, Some(2));
        assert_eq!(pack_delta(&cube(2), 1.01).unwrap().exact, Some(1));
        // Binary codes of length 5 and minimum distance 3 have at most 4 words.
        assert_eq!(pack_delta(&cube(5), 0.6).unwrap().exact, Some(4));
    }

    #[test]
    fn closed_balls_break_the_chain() {
        let s = vec![cfg("00"), cfg("01"), cfg("11")];
        assert_eq!(cov_delta(&s, 0.5, Ball::Closed).unwrap().exact, Some(1));
        assert_eq!(pack_delta(&s, 1.0).unwrap().exact, Some(2));
        assert_eq!(cov_delta(&s, 0.5, Ball::Open).unwrap().exact, Some(3));
    }

    fn three_atoms() -> ModelMeasure {
        ModelMeasure::explicit(2, vec![(cfg("00"), 0.5), (cfg("11"), 0.3), (cfg("10"), 0.2)]).unwrap()
    }

    #[test]
    fn measure_cover_examples() {
        let nu = three_atoms();
        let far = ModelMeasure::explicit(3, vec![(cfg("00"), 0.5), (cfg("11"), 0.3), (cfg("22"), 0.2)]).unwrap();
        let b = cov_eps_delta(&far, 0.25, 0.1, Metric::Hamming, Ball::Closed).unwrap();
        assert_eq!(b.exact, Some(2));
        assert_eq!(b.greedy, 2);
        assert_eq!(cov_eps_delta(&nu, 0.55, 0.1, Metric::Hamming, Ball::Closed).unwrap().exact, Some(1));
        assert_eq!(cov_eps_delta(&nu, 0.1, 1.0, Metric::Hamming, Ball::Closed).unwrap().exact, Some(1));
        let product = ModelMeasure::product(vec![0.5, 0.5], 4).unwrap();
        assert!(matches!(cov_eps_delta(&product, 0.1, 0.1, Metric::Hamming, Ball::Closed), Err(Error::Refused(_))));
    }

    #[test]
    fn centers_off_support_can_help() {
        // 0011 is within 1/2 of both atoms, but no atom is within 1/2 of the other.
        let nu = ModelMeasure::explicit(2, vec![(cfg("0000"), 0.5), (cfg("1111"), 0.5)]).unwrap();
        let b = cov_eps_delta(&nu, 0.1, 0.5, Metric::Hamming, Ball::Closed).unwrap();
        assert_eq!(b.greedy, 2);
        assert_eq!(b.exact, Some(1));
    }

    #[test]
    fn cov_eps_examples() {
        let point = ModelMeasure::point_mass(2, cfg("0110")).unwrap();
        assert_eq!(cov_eps(&point, 0.5).unwrap().exact, Some(1));
        let nu = three_atoms();
        assert_eq!(cov_eps(&nu, 0.25).unwrap().exact, Some(2));
        assert_eq!(cov_eps(&nu, 0.6).unwrap().exact, Some(1));
        assert!(cov_eps(&nu, 1.0).is_err());
    }

    #[test]
    fn product_cov_eps_matches_explicit() {
        for w in [[0.5f64, 0.5], [0.75, 0.25], [0.9, 0.1]] {
            for eps in [0.05, 0.3, 0.6] {
                let n = 8;
                let atoms: Vec<(Configuration, f64)> = cube(n)
                    .into_iter()
                    .map(|c| {
                        let ones = c.0.iter().filter(|&&s| s == 1).count() as i32;
                        let p = w[1].powi(ones) * w[0].powi(n as i32 - ones);
                        (c, p)
                    })
                    .collect();
                let explicit = ModelMeasure::explicit(2, atoms).unwrap();
                let product = ModelMeasure::product(w.to_vec(), n).unwrap();
                assert_eq!(cov_eps(&product, eps).unwrap().exact, cov_eps(&explicit, eps).unwrap().exact, "{w:?} {eps}");
            }
        }
        let big = cov_eps(&ModelMeasure::product(vec![0.5, 0.5], 4096).unwrap(), 0.1).unwrap();
        assert!((big.log / 4096.0 - 2f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn ball_volume_examples() {
        assert_eq!(hamming_ball_volume(10, 0.0, 3).unwrap(), 0.0);
        assert!((hamming_ball_volume(10, 1.0, 3).unwrap() - 10.0 * 3f64.ln()).abs() < 1e-10);
        assert!((hamming_ball_volume(4, 0.25, 2).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert_eq!(hamming_ball_volume(7, 1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn small_balls_have_small_volume() {
        for eta in [0.1, 0.2, 0.5] {
            let deltas: Vec<f64> = [64usize, 256, 1024, 4096].iter().map(|&n| max_delta_for_rate(n, 2, eta)).collect();
            let common = deltas.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(common > 0.0, "eta {eta}: {deltas:?}");
            for &n in &[64usize, 256, 1024, 4096] {
                assert!(hamming_ball_volume(n, common, 2).unwrap() <= eta * n as f64 + 1e-9);
            }
        }
    }

    #[test]
    fn measure_pack_examples() {
        let nu = three_atoms();
        assert_eq!(pack_eps_delta(&nu, 0.25, 0.5, Metric::Hamming).unwrap(), Some(2));
        assert_eq!(pack_eps_delta(&nu, 0.6, 0.5, Metric::Hamming).unwrap(), Some(1));
    }

    #[test]
    fn square_and_sampling() {
        let nu = ModelMeasure::uniform(2, &[cfg("01"), cfg("10")]).unwrap();
        let sq = nu.square().unwrap();
        assert_eq!(sq.atoms().unwrap().0.len(), 4);
        assert_eq!(sq.alphabet_size(), 4);
        let mut r = rng::stream(1, 0, 0);
        let draws: Vec<Configuration> = (0..200).map(|_| nu.sample(&mut r)).collect();
        let first = draws.iter().filter(|c| **c == cfg("01")).count();
        assert!(first > 70 && first < 130);
        let p = ModelMeasure::product(vec![0.25, 0.75], 5).unwrap().square().unwrap();
        assert_eq!(p.site_weights().unwrap(), &[0.0625, 0.1875, 0.1875, 0.5625]);
    }

    fn random_set(bits: u64, n: usize) -> Vec<Configuration> {
        cube(n).into_iter().enumerate().filter(|(i, _)| bits >> (i % 64) & 1 == 1).map(|(_, c)| c).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn chain_on_random_sets(bits in 1u64.., n in 2usize..=6, k in 1usize..=6) {
            let s = random_set(bits, n);
            let delta = (k.min(n)) as f64 / n as f64;
            let half = cov_delta(&s, delta / 2.0, Ball::Open).unwrap();
            let pack = pack_delta(&s, delta).unwrap();
            let full = cov_delta(&s, delta, Ball::Open).unwrap();
            let (h, p, f) = (half.exact.unwrap(), pack.exact.unwrap(), full.exact.unwrap());
            prop_assert!(h >= p && p >= f, "{h} {p} {f}");
            prop_assert!(half.greedy >= h && full.greedy >= f);
            prop_assert!(pack.greedy <= p);
            let closed = cov_delta(&s, delta, Ball::Closed).unwrap();
            prop_assert!(closed.greedy >= closed.exact.unwrap());
        }

        #[test]
        fn measure_chain(seed in 0u64..10_000, m in 1usize..=8, k in 1usize..=4, e in 1usize..=15) {
            let n = 4;
            let mut r = rng::stream(seed, 0, 0);
            let atoms: Vec<(Configuration, f64)> = (0..m)
                .map(|_| (Configuration::from_index(rng::uniform_below(&mut r, 16), n, 2), rng::uniform_f64(&mut r) + 0.01))
                .collect();
            let total: f64 = atoms.iter().map(|a| a.1).sum();
            let nu = ModelMeasure::explicit(2, atoms.into_iter().map(|(c, w)| (c, w / total)).collect()).unwrap();
            let eps = e as f64 / 16.0;
            let delta = k as f64 / n as f64;
            let half = cov_eps_delta(&nu, eps, delta / 2.0, Metric::Hamming, Ball::Open).unwrap().exact.unwrap();
            let pack = pack_eps_delta(&nu, eps, delta, Metric::Hamming).unwrap().unwrap();
            let full = cov_eps_delta(&nu, eps, delta, Metric::Hamming, Ball::Open).unwrap();
            prop_assert!(half >= pack && pack >= full.exact.unwrap(), "{half} {pack} {:?}", full);
            prop_assert!(full.greedy >= full.exact.unwrap());
        }
    }
}
