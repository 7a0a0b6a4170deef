//! Shift-invariant processes on `X^G` for finite `X`, given by exact
//! finite-window marginals.
//!
//! Shifts act on the right, `(S^g x)_h = x_{hg}`, so invariance means the
//! marginal on `Fg` read in the order of `F` equals the marginal on `F`.
//!
//! Patterns on a window `F = (g_0, …, g_{k-1})` are indexed big-endian:
//! index `Σ x_i |X|^{k-1-i}`, so `g_0` is the most significant digit.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{structural, validation, Error, Result};
use crate::group::{CosetKey, GroupElement, GroupSpec, Letter};

/// Largest marginal vector materialized.
pub const MAX_PATTERNS: u64 = 1 << 24;

pub const WEIGHT_TOLERANCE: f64 = 1e-12;
const MARKOV_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    labels: Vec<String>,
}

impl Alphabet {
    /// Symbols labelled `0, 1, …`.
    pub fn new(size: usize) -> Result<Self> {
        Alphabet::with_labels((0..size).map(|i| i.to_string()).collect())
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() || labels.len() > 256 {
            return Err(validation(format!("alphabet size {} outside 1..=256", labels.len())));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if l.is_empty() || !seen.insert(l.as_str()) {
                return Err(validation(format!("alphabet labels must be distinct and nonempty, got '{l}'")));
            }
        }
        Ok(Alphabet { labels })
    }

    /// Pairs `(x, y)` in row-major order: symbol `x|Y| + y`.
    pub fn product(&self, other: &Alphabet) -> Result<Self> {
        let mut labels = Vec::with_capacity(self.size() * other.size());
        for x in &self.labels {
            for y in &other.labels {
                labels.push(format!("({x},{y})"));
            }
        }
        Alphabet::with_labels(labels)
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, symbol: u8) -> &str {
        &self.labels[usize::from(symbol)]
    }

    /// Symbols joined without separators when every label is one character,
    /// otherwise separated by spaces.
    pub fn format(&self, symbols: &[u8]) -> String {
        let sep = if self.labels.iter().all(|l| l.chars().count() == 1) { "" } else { " " };
        symbols.iter().map(|&s| self.label(s)).collect::<Vec<_>>().join(sep)
    }

    pub fn parse(&self, text: &str) -> Result<Vec<u8>> {
        let lookup: HashMap<&str, u8> = self.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u8)).collect();
        let tokens: Vec<String> = if self.labels.iter().all(|l| l.chars().count() == 1) {
            text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
        } else {
            text.split_whitespace().map(String::from).collect()
        };
        tokens
            .iter()
            .map(|t| lookup.get(t.as_str()).copied().ok_or_else(|| validation(format!("unknown symbol '{t}'"))))
            .collect()
    }
}

pub fn check_distribution(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(validation("empty probability vector"));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(validation("probabilities must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(validation(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

pub fn pattern_count(alphabet_size: usize, len: usize) -> Result<usize> {
    let count = (alphabet_size as u64).checked_pow(len as u32).filter(|&c| c <= MAX_PATTERNS);
    count.map(|c| c as usize).ok_or_else(|| Error::Budget {
        what: format!("marginal on {len} sites over {alphabet_size} symbols"),
        required: (alphabet_size as u128).saturating_pow(len as u32),
        budget: u128::from(MAX_PATTERNS),
    })
}

pub fn pattern_index(symbols: &[u8], alphabet_size: usize) -> usize {
    symbols.iter().fold(0, |acc, &s| acc * alphabet_size + usize::from(s))
}

pub fn pattern_digits(mut index: usize, len: usize, alphabet_size: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    for slot in out.iter_mut().rev() {
        *slot = (index % alphabet_size) as u8;
        index /= alphabet_size;
    }
    out
}

/// A probability vector over `X^k`, big-endian indexed.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternDistribution {
    alphabet_size: usize,
    len: usize,
    probs: Vec<f64>,
}

impl PatternDistribution {
    pub fn new(alphabet_size: usize, len: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != pattern_count(alphabet_size, len)? {
            return Err(structural("probability vector length does not match the window"));
        }
        if probs.iter().any(|&p| !p.is_finite() || p < -WEIGHT_TOLERANCE) {
            return Err(validation("negative or non-finite pattern probability"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(validation(format!("pattern probabilities sum to {total}")));
        }
        Ok(PatternDistribution { alphabet_size, len, probs })
    }

    pub(crate) fn from_raw(alphabet_size: usize, len: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), alphabet_size.pow(len as u32));
        PatternDistribution { alphabet_size, len, probs }
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    /// Number of window sites.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, pattern: &[u8]) -> f64 {
        self.probs[pattern_index(pattern, self.alphabet_size)]
    }

    /// Half the ℓ¹ distance.
    pub fn tv(&self, other: &PatternDistribution) -> Result<f64> {
        if self.alphabet_size != other.alphabet_size || self.len != other.len {
            return Err(structural("patterns over different windows or alphabets"));
        }
        Ok(tv_slices(&self.probs, &other.probs))
    }

    /// Pushforward under restriction to the listed sites, in that order.
    pub fn project(&self, sites: &[usize]) -> Result<PatternDistribution> {
        if sites.iter().any(|&s| s >= self.len) {
            return Err(structural("projection site out of range"));
        }
        let mut out = vec![0.0; pattern_count(self.alphabet_size, sites.len())?];
        for (i, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let d = pattern_digits(i, self.len, self.alphabet_size);
            let sub: Vec<u8> = sites.iter().map(|&s| d[s]).collect();
            out[pattern_index(&sub, self.alphabet_size)] += p;
        }
        Ok(PatternDistribution::from_raw(self.alphabet_size, sites.len(), out))
    }

    /// Rows `pattern,probability` with nonzero probability.
    pub fn to_csv(&self, alphabet: &Alphabet) -> String {
        let mut out = String::from("pattern,probability\n");
        for (i, &p) in self.probs.iter().enumerate() {
            if p != 0.0 {
                let d = pattern_digits(i, self.len, self.alphabet_size);
                out.push_str(&format!("{},{}\n", alphabet.format(&d), p));
            }
        }
        out
    }
}

/// Total variation between two probability vectors on the same index set.
pub fn tv_slices(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Bernoulli(Vec<f64>),
    TreeMarkov {
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
    /// Independent copies of the base along the fibers `G × {h}`.
    Coinduced(Box<Process>),
    CosetIid {
        mu0: Vec<f64>,
        factor: usize,
    },
    PeriodicOrbit(Vec<u8>),
    Product(Box<Process>, Box<Process>),
    Diagonal(Box<Process>),
}

/// A shift-invariant measure on `X^G` presented by its window marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct Process {
    alphabet: Alphabet,
    group: GroupSpec,
    kind: Kind,
}

impl Process {
    pub fn bernoulli(group: &GroupSpec, weights: Vec<f64>) -> Result<Self> {
        check_distribution(&weights)?;
        Ok(Process {
            alphabet: Alphabet::new(weights.len())?,
            group: group.clone(),
            kind: Kind::Bernoulli(weights),
        })
    }

    /// Markov chain indexed by the Cayley tree of a free group (edges
    /// `{g, s g}`), with reversible `transition` and stationary `initial`.
    pub fn tree_markov(group: &GroupSpec, transition: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        if !group.is_word_group() {
            return Err(structural("tree Markov processes live on free groups"));
        }
        check_distribution(&initial)?;
        let q = initial.len();
        if transition.len() != q || transition.iter().any(|r| r.len() != q) {
            return Err(validation("transition matrix shape does not match the initial vector"));
        }
        for row in &transition {
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > MARKOV_TOLERANCE {
                return Err(validation("transition matrix is not row-stochastic"));
            }
        }
        for j in 0..q {
            let flow: f64 = (0..q).map(|i| initial[i] * transition[i][j]).sum();
            if (flow - initial[j]).abs() > MARKOV_TOLERANCE {
                return Err(validation("initial vector is not stationary"));
            }
            for i in 0..q {
                if (initial[i] * transition[i][j] - initial[j] * transition[j][i]).abs() > MARKOV_TOLERANCE {
                    return Err(validation("transition violates detailed balance"));
                }
            }
        }
        Ok(Process {
            alphabet: Alphabet::new(q)?,
            group: group.clone(),
            kind: Kind::TreeMarkov { transition, initial },
        })
    }

    /// The co-induced process on `G × H`.
    pub fn coinduced(base: &Process, h: &GroupSpec) -> Result<Self> {
        Ok(Process {
            alphabet: base.alphabet.clone(),
            group: GroupSpec::product(base.group.clone(), h.clone()),
            kind: Kind::Coinduced(Box::new(base.clone())),
        })
    }

    /// Constant on right cosets `Hg` of the free factor `factor`, with
    /// independent `mu0` values on distinct cosets.
    pub fn coset_iid(group: &GroupSpec, mu0: Vec<f64>, factor: usize) -> Result<Self> {
        check_distribution(&mu0)?;
        match group {
            GroupSpec::FreeProduct { factors, .. } if factor < factors.len() => {}
            GroupSpec::FreeProduct { .. } => return Err(structural(format!("free factor {factor} not declared"))),
            _ => return Err(structural("coset_iid needs a free product")),
        }
        Ok(Process {
            alphabet: Alphabet::new(mu0.len())?,
            group: group.clone(),
            kind: Kind::CosetIid { mu0, factor },
        })
    }

    /// Uniform measure on the shift orbit of the periodic point of `X^Z`
    /// repeating `pattern`.
    pub fn periodic_orbit(pattern: &[u8], alphabet_size: usize) -> Result<Self> {
        let p = pattern.len();
        if p == 0 {
            return Err(validation("empty period"));
        }
        if pattern.iter().any(|&s| usize::from(s) >= alphabet_size) {
            return Err(validation("pattern symbol outside the alphabet"));
        }
        if let Some(d) = (1..p).find(|&d| p % d == 0 && (0..p).all(|i| pattern[i] == pattern[(i + d) % p])) {
            return Err(validation(format!("pattern has least period {d}, not {p}")));
        }
        Ok(Process {
            alphabet: Alphabet::new(alphabet_size)?,
            group: GroupSpec::integers(),
            kind: Kind::PeriodicOrbit(pattern.to_vec()),
        })
    }

    /// The independent joining on `X × Y`.
    pub fn product(mu: &Process, nu: &Process) -> Result<Self> {
        if mu.group != nu.group {
            return Err(structural("product of processes over different groups"));
        }
        Ok(Process {
            alphabet: mu.alphabet.product(&nu.alphabet)?,
            group: mu.group.clone(),
            kind: Kind::Product(Box::new(mu.clone()), Box::new(nu.clone())),
        })
    }

    /// The diagonal self-joining: `(x, x)` with `x ∼ μ`.
    pub fn diagonal(mu: &Process) -> Result<Self> {
        Ok(Process {
            alphabet: mu.alphabet.product(&mu.alphabet)?,
            group: mu.group.clone(),
            kind: Kind::Diagonal(Box::new(mu.clone())),
        })
    }

    /// `μ^{×k}` on `X^k`, symbols in row-major order.
    pub fn power(mu: &Process, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(validation("power needs k >= 1"));
        }
        let size = (mu.alphabet.size() as u64).checked_pow(k as u32);
        if size.is_none_or(|s| s > 256) {
            return Err(validation(format!("|X|^{k} exceeds 256 symbols")));
        }
        let mut out = mu.clone();
        for _ in 1..k {
            out = Process::product(mu, &out)?;
        }
        Ok(out)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.size()
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    /// The one-site marginal.
    pub fn one_site(&self) -> Vec<f64> {
        self.marginal_on(&[self.group.identity()])
            .expect("identity marginal is always defined")
            .probs
    }

    /// Weights when the process is i.i.d. over sites.
    pub fn bernoulli_weights(&self) -> Option<Vec<f64>> {
        match &self.kind {
            Kind::Bernoulli(w) => Some(w.clone()),
            Kind::Coinduced(b) => b.bernoulli_weights(),
            Kind::Product(a, b) => {
                let (wa, wb) = (a.bernoulli_weights()?, b.bernoulli_weights()?);
                Some(wa.iter().flat_map(|x| wb.iter().map(move |y| x * y)).collect())
            }
            _ => None,
        }
    }

    /// Marginal on the given distinct elements, in the given order.
    pub fn marginal_on(&self, elems: &[GroupElement]) -> Result<PatternDistribution> {
        for g in elems {
            if !self.group.contains(g) {
                return Err(structural("window element outside the process's group"));
            }
        }
        for (i, g) in elems.iter().enumerate() {
            if elems[..i].contains(g) {
                return Err(structural("window elements must be distinct"));
            }
        }
        let q = self.alphabet.size();
        pattern_count(q, elems.len())?;
        let probs = match &self.kind {
            Kind::Bernoulli(w) => {
                let mut probs = vec![1.0];
                for _ in elems {
                    probs = probs.iter().flat_map(|p| w.iter().map(move |x| p * x)).collect();
                }
                probs
            }
            Kind::TreeMarkov { transition, initial } => self.tree_marginal(elems, transition, initial)?,
            Kind::Coinduced(base) => coinduced_marginal(base, elems)?,
            Kind::CosetIid { mu0, factor } => {
                let mut class_of = Vec::with_capacity(elems.len());
                let mut keys: Vec<CosetKey> = vec![];
                for g in elems {
                    let k = self.group.right_coset_key(g, *factor)?;
                    let c = keys.iter().position(|x| *x == k).unwrap_or_else(|| {
                        keys.push(k);
                        keys.len() - 1
                    });
                    class_of.push(c);
                }
                let mut probs = vec![0.0; pattern_count(q, elems.len())?];
                for a in 0..pattern_count(q, keys.len())? {
                    let vals = pattern_digits(a, keys.len(), q);
                    let p: f64 = vals.iter().map(|&v| mu0[usize::from(v)]).product();
                    let pat: Vec<u8> = class_of.iter().map(|&c| vals[c]).collect();
                    probs[pattern_index(&pat, q)] += p;
                }
                probs
            }
            Kind::PeriodicOrbit(pattern) => {
                let p = pattern.len() as i64;
                let pos = elems.iter().map(integer_of).collect::<Result<Vec<_>>>()?;
                let mut probs = vec![0.0; pattern_count(q, elems.len())?];
                for t in 0..p {
                    let pat: Vec<u8> = pos.iter().map(|&k| pattern[(k + t).rem_euclid(p) as usize]).collect();
                    probs[pattern_index(&pat, q)] += 1.0 / p as f64;
                }
                probs
            }
            Kind::Product(a, b) => {
                let pa = a.marginal_on(elems)?;
                let pb = b.marginal_on(elems)?;
                let (qa, qb) = (a.alphabet_size(), b.alphabet_size());
                let mut probs = vec![0.0; pattern_count(q, elems.len())?];
                for (i, &x) in pa.probs.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let dx = pattern_digits(i, elems.len(), qa);
                    for (j, &y) in pb.probs.iter().enumerate() {
                        if y == 0.0 {
                            continue;
                        }
                        let dy = pattern_digits(j, elems.len(), qb);
                        let z: Vec<u8> = dx.iter().zip(&dy).map(|(&s, &t)| (usize::from(s) * qb + usize::from(t)) as u8).collect();
                        probs[pattern_index(&z, q)] += x * y;
                    }
                }
                probs
            }
            Kind::Diagonal(base) => {
                let pb = base.marginal_on(elems)?;
                let qb = base.alphabet_size();
                let mut probs = vec![0.0; pattern_count(q, elems.len())?];
                for (i, &x) in pb.probs.iter().enumerate() {
                    let d = pattern_digits(i, elems.len(), qb);
                    let z: Vec<u8> = d.iter().map(|&s| (usize::from(s) * qb + usize::from(s)) as u8).collect();
                    probs[pattern_index(&z, q)] += x;
                }
                probs
            }
        };
        Ok(PatternDistribution::from_raw(q, elems.len(), probs))
    }

    /// Sum-product over the subtree spanned by `elems ∪ {e}`. In the tree
    /// with edges `{g, s g}` the path from `e` to a reduced word runs through
    /// its suffixes, so the parent of a node drops its first letter.
    fn tree_marginal(&self, elems: &[GroupElement], transition: &[Vec<f64>], initial: &[f64]) -> Result<Vec<f64>> {
        let q = initial.len();
        let mut index: HashMap<Vec<Letter>, usize> = HashMap::new();
        let mut words: Vec<Vec<Letter>> = vec![];
        let mut intern = |w: &[Letter], index: &mut HashMap<Vec<Letter>, usize>| -> usize {
            if let Some(&i) = index.get(w) {
                return i;
            }
            index.insert(w.to_vec(), words.len());
            words.push(w.to_vec());
            words.len() - 1
        };
        intern(&[], &mut index);
        let mut site_node = Vec::with_capacity(elems.len());
        for g in elems {
            let w = self.group.word_of(g)?;
            for start in (0..w.len()).rev() {
                intern(&w[start..], &mut index);
            }
            site_node.push(index[&w]);
        }
        let n = words.len();
        let mut children: Vec<Vec<usize>> = vec![vec![]; n];
        for (i, w) in words.iter().enumerate().skip(1) {
            children[index[&w[1..]]].push(i);
        }
        // Leaves before parents.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(words[i].len()));

        let k = elems.len();
        let mut clamp: Vec<Option<u8>> = vec![None; n];
        let mut beta = vec![vec![0.0; q]; n];
        let mut probs = vec![0.0; pattern_count(q, k)?];
        for (idx, slot) in probs.iter_mut().enumerate() {
            let pat = pattern_digits(idx, k, q);
            clamp.iter_mut().for_each(|c| *c = None);
            for (s, &node) in site_node.iter().enumerate() {
                clamp[node] = Some(pat[s]);
            }
            for &u in &order {
                for x in 0..q {
                    let mut b = match clamp[u] {
                        Some(c) if usize::from(c) != x => 0.0,
                        _ => 1.0,
                    };
                    for &c in &children[u] {
                        if b == 0.0 {
                            break;
                        }
                        b *= (0..q).map(|y| transition[x][y] * beta[c][y]).sum::<f64>();
                    }
                    beta[u][x] = b;
                }
            }
            *slot = (0..q).map(|x| initial[x] * beta[0][x]).sum();
        }
        Ok(probs)
    }
}

fn coinduced_marginal(base: &Process, elems: &[GroupElement]) -> Result<Vec<f64>> {
    let q = base.alphabet_size();
    let mut fibers: Vec<(GroupElement, Vec<usize>)> = vec![];
    for (i, e) in elems.iter().enumerate() {
        let GroupElement::Pair(_, h) = e else {
            return Err(structural("co-induced marginals take pairs"));
        };
        match fibers.iter_mut().find(|(k, _)| k == h.as_ref()) {
            Some((_, sites)) => sites.push(i),
            None => fibers.push((h.as_ref().clone(), vec![i])),
        }
    }
    let fiber_marginals = fibers
        .iter()
        .map(|(_, sites)| {
            let g_parts: Vec<GroupElement> = sites
                .iter()
                .map(|&i| match &elems[i] {
                    GroupElement::Pair(g, _) => g.as_ref().clone(),
                    _ => unreachable!(),
                })
                .collect();
            base.marginal_on(&g_parts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut probs = vec![0.0; pattern_count(q, elems.len())?];
    for (idx, slot) in probs.iter_mut().enumerate() {
        let d = pattern_digits(idx, elems.len(), q);
        let mut p = 1.0;
        for ((_, sites), m) in fibers.iter().zip(&fiber_marginals) {
            let sub: Vec<u8> = sites.iter().map(|&i| d[i]).collect();
            p *= m.prob(&sub);
            if p == 0.0 {
                break;
            }
        }
        *slot = p;
    }
    Ok(probs)
}

/// The integer `k` for `a^k` in the integers.
fn integer_of(g: &GroupElement) -> Result<i64> {
    let w = g.as_word().ok_or_else(|| structural("expected an integer"))?;
    Ok(w.iter().map(|l| if l.inverse { -1 } else { 1 }).sum())
}

/// Process description as found in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec {
    Bernoulli {
        weights: Vec<f64>,
    },
    TreeMarkov {
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
    /// Built over a product group `G × H`; the base lives on `G`.
    Coinduced {
        base: Box<ProcessSpec>,
    },
    CosetIid {
        mu0: Vec<f64>,
        #[serde(default)]
        factor: usize,
    },
    PeriodicOrbit {
        pattern: Vec<u8>,
        alphabet_size: usize,
    },
    Product {
        left: Box<ProcessSpec>,
        right: Box<ProcessSpec>,
    },
    Power {
        base: Box<ProcessSpec>,
        k: usize,
    },
}

impl ProcessSpec {
    pub fn build(&self, group: &GroupSpec) -> Result<Process> {
        match self {
            ProcessSpec::Bernoulli { weights } => Process::bernoulli(group, weights.clone()),
            ProcessSpec::TreeMarkov { transition, initial } => Process::tree_markov(group, transition.clone(), initial.clone()),
            ProcessSpec::Coinduced { base } => match group {
                GroupSpec::Product { left, right } => Process::coinduced(&base.build(left)?, right),
                _ => Err(structural("co-induced processes need a product group")),
            },
            ProcessSpec::CosetIid { mu0, factor } => Process::coset_iid(group, mu0.clone(), *factor),
            ProcessSpec::PeriodicOrbit { pattern, alphabet_size } => {
                if *group != GroupSpec::integers() {
                    return Err(structural("periodic orbits live on the integers"));
                }
                Process::periodic_orbit(pattern, *alphabet_size)
            }
            ProcessSpec::Product { left, right } => Process::product(&left.build(group)?, &right.build(group)?),
            ProcessSpec::Power { base, k } => Process::power(&base.build(group)?, *k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f2() -> GroupSpec {
        GroupSpec::free(2)
    }

    fn elems(spec: &GroupSpec, words: &[&str]) -> Vec<GroupElement> {
        words.iter().map(|w| spec.parse_element(w).unwrap()).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn bernoulli_examples() {
        let g = f2();
        let frozen = Process::bernoulli(&g, vec![1.0, 0.0]).unwrap();
        let m = frozen.marginal_on(g.ball(1).elements()).unwrap();
        assert_eq!(m.probs()[0], 1.0);
        let fair = Process::bernoulli(&g, vec![0.5, 0.5]).unwrap();
        let m = fair.marginal_on(&elems(&g, &["e", "a", "b"])).unwrap();
        assert!(m.probs().iter().all(|&p| close(p, 0.125)));
        let biased = Process::bernoulli(&g, vec![0.75, 0.25]).unwrap();
        let m = biased.marginal_on(&elems(&g, &["e", "a"])).unwrap();
        assert!(close(m.prob(&[0, 0]), 9.0 / 16.0));
        assert!(Process::bernoulli(&g, vec![0.5, 0.6]).is_err());
        assert!(Process::bernoulli(&g, vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn tree_markov_examples() {
        let g = f2();
        let frozen = Process::tree_markov(&g, vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5]).unwrap();
        let m = frozen.marginal_on(g.ball(1).elements()).unwrap();
        assert!(close(m.prob(&[0; 5]), 0.5) && close(m.prob(&[1; 5]), 0.5));

        let uniform = Process::tree_markov(&g, vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.5, 0.5]).unwrap();
        let fair = Process::bernoulli(&g, vec![0.5, 0.5]).unwrap();
        let w = g.ball(2).elements()[..7].to_vec();
        assert!(uniform.marginal_on(&w).unwrap().tv(&fair.marginal_on(&w).unwrap()).unwrap() < 1e-12);

        let flip = Process::tree_markov(&g, vec![vec![0.7, 0.3], vec![0.3, 0.7]], vec![0.5, 0.5]).unwrap();
        let m = flip.marginal_on(&elems(&g, &["e", "a"])).unwrap();
        assert!(close(m.prob(&[0, 0]), 0.35));
        // Distance-2 correlation along a path: P(x_e = x_{ab}) = 0.7² + 0.3².
        let m = flip.marginal_on(&elems(&g, &["e", "ab"])).unwrap();
        assert!(close(m.prob(&[0, 0]) + m.prob(&[1, 1]), 0.58));

        assert!(Process::tree_markov(&g, vec![vec![0.9, 0.2], vec![0.3, 0.7]], vec![0.5, 0.5]).is_err());
        assert!(Process::tree_markov(&g, vec![vec![0.7, 0.3], vec![0.3, 0.7]], vec![0.6, 0.4]).is_err());
        // Stationary but not reversible: a 3-cycle drift.
        let cyc = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        assert!(Process::tree_markov(&g, cyc, vec![1.0 / 3.0; 3]).is_err());
    }

    #[test]
    fn coinduced_examples() {
        let g = GroupSpec::integers();
        let h = GroupSpec::cyclic(3);
        let base = Process::periodic_orbit(&[0, 1], 2).unwrap();
        let co = Process::coinduced(&base, &h).unwrap();
        let spec = co.group().clone();
        let w = elems(&spec, &["(e,e)", "(a,e)"]);
        let m = co.marginal_on(&w).unwrap();
        let b = base.marginal_on(&elems(&g, &["e", "a"])).unwrap();
        assert!(m.tv(&b).unwrap() < 1e-12);
        let w = elems(&spec, &["(e,e)", "(e,a)"]);
        let m = co.marginal_on(&w).unwrap();
        assert!(m.probs().iter().all(|&p| close(p, 0.25)));

        let bern = Process::bernoulli(&g, vec![0.3, 0.7]).unwrap();
        let co = Process::coinduced(&bern, &h).unwrap();
        let prod_bern = Process::bernoulli(co.group(), vec![0.3, 0.7]).unwrap();
        let w = co.group().ball(2);
        assert!(co.marginal_on(w.elements()).unwrap().tv(&prod_bern.marginal_on(w.elements()).unwrap()).unwrap() < 1e-12);
    }

    fn coset_example() -> (GroupSpec, Process) {
        let g = GroupSpec::free_product(vec![2, 2]);
        let nu = Process::coset_iid(&g, vec![0.75, 0.25], 0).unwrap();
        (g, nu)
    }

    #[test]
    fn coset_iid_examples() {
        let (g, nu) = coset_example();
        let m = nu.marginal_on(&elems(&g, &["e", "a"])).unwrap();
        assert!(close(m.prob(&[0, 0]), 0.75) && close(m.prob(&[1, 1]), 0.25));
        assert_eq!(m.prob(&[0, 1]), 0.0);
        assert_eq!(m.prob(&[1, 0]), 0.0);
        let m = nu.marginal_on(&elems(&g, &["e", "a'"])).unwrap();
        assert!(close(m.prob(&[1, 0]), 0.1875));
        assert!(close(m.prob(&[0, 0]), 0.5625));
        assert_eq!(nu.one_site(), vec![0.75, 0.25]);
        assert!(Process::coset_iid(&g, vec![1.0], 2).is_err());
        assert!(Process::coset_iid(&f2(), vec![1.0], 0).is_err());
    }

    #[test]
    fn coset_iid_is_constant_on_classes() {
        let (g, nu) = coset_example();
        let w = g.ball(1);
        let m = nu.marginal_on(w.elements()).unwrap();
        let keys: Vec<_> = w.elements().iter().map(|x| g.right_coset_key(x, 0).unwrap()).collect();
        for (i, &p) in m.probs().iter().enumerate() {
            let d = pattern_digits(i, w.len(), 2);
            let constant = (0..w.len()).all(|s| (0..w.len()).all(|t| keys[s] != keys[t] || d[s] == d[t]));
            if !constant {
                assert_eq!(p, 0.0);
            }
        }
    }

    #[test]
    fn periodic_orbit_examples() {
        let z = GroupSpec::integers();
        let alt = Process::periodic_orbit(&[0, 1], 2).unwrap();
        assert_eq!(alt.one_site(), vec![0.5, 0.5]);
        let m = alt.marginal_on(&elems(&z, &["e", "a"])).unwrap();
        assert_eq!(m.probs(), &[0.0, 0.5, 0.5, 0.0]);
        let zero = Process::periodic_orbit(&[0], 2).unwrap();
        assert_eq!(zero.marginal_on(z.ball(3).elements()).unwrap().probs()[0], 1.0);
        assert!(Process::periodic_orbit(&[0, 1, 0, 1], 2).is_err());
        assert!(Process::periodic_orbit(&[0, 2], 2).is_err());
    }

    #[test]
    fn product_examples() {
        let g = f2();
        let point = Process::bernoulli(&g, vec![0.0, 1.0]).unwrap();
        let nu = Process::tree_markov(&g, vec![vec![0.7, 0.3], vec![0.3, 0.7]], vec![0.5, 0.5]).unwrap();
        let pn = Process::product(&point, &nu).unwrap();
        let w = elems(&g, &["e", "a", "b^-1"]);
        let m = pn.marginal_on(&w).unwrap();
        let mn = nu.marginal_on(&w).unwrap();
        for (i, &p) in mn.probs().iter().enumerate() {
            let d = pattern_digits(i, 3, 2);
            let tagged: Vec<u8> = d.iter().map(|&x| 2 + x).collect();
            assert!(close(m.prob(&tagged), p));
        }

        let p = Process::bernoulli(&g, vec![0.2, 0.8]).unwrap();
        let q = Process::bernoulli(&g, vec![0.1, 0.6, 0.3]).unwrap();
        let pq = Process::product(&p, &q).unwrap();
        let flat = Process::bernoulli(&g, pq.bernoulli_weights().unwrap()).unwrap();
        assert!(pq.marginal_on(&w).unwrap().tv(&flat.marginal_on(&w).unwrap()).unwrap() < 1e-12);

        let (h, nu) = coset_example();
        let sq = Process::product(&nu, &nu).unwrap();
        let m = sq.marginal_on(&[h.identity()]).unwrap();
        assert!(close(m.probs()[2], 3.0 / 16.0));
        assert_eq!(sq.alphabet().label(2), "(1,0)");

        assert!(Process::product(&p, &nu).is_err());
    }

    #[test]
    fn power_examples() {
        let g = f2();
        let fair = Process::bernoulli(&g, vec![0.5, 0.5]).unwrap();
        assert_eq!(Process::power(&fair, 1).unwrap(), fair);
        let sq = Process::power(&fair, 2).unwrap();
        assert!(sq.one_site().iter().all(|&p| close(p, 0.25)));
        let h = |w: &[f64]| -w.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        let biased = Process::bernoulli(&g, vec![0.75, 0.25]).unwrap();
        for k in 1..=4 {
            let pk = Process::power(&biased, k).unwrap();
            assert!((h(&pk.one_site()) - k as f64 * h(&biased.one_site())).abs() < 1e-12);
        }
        assert!(Process::power(&fair, 9).is_err());
        assert!(Process::power(&fair, 0).is_err());
    }

    #[test]
    fn diagonal_is_supported_on_diagonal() {
        let g = f2();
        let fair = Process::bernoulli(&g, vec![0.5, 0.5]).unwrap();
        let d = Process::diagonal(&fair).unwrap();
        assert_eq!(d.one_site(), vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn oversized_windows_are_refused() {
        let g = GroupSpec::free(3);
        let fair = Process::bernoulli(&g, vec![0.25; 4]).unwrap();
        assert!(matches!(fair.marginal_on(g.ball(2).elements()), Err(Error::Budget { .. })));
        assert!(fair.marginal_on(&elems(&g, &["a", "a"])).is_err());
    }

    #[test]
    fn spec_json() {
        let spec: ProcessSpec = serde_json::from_str(r#"{"process":"bernoulli","weights":[0.75,0.25]}"#).unwrap();
        assert_eq!(spec, ProcessSpec::Bernoulli { weights: vec![0.75, 0.25] });
        let co: ProcessSpec = serde_json::from_str(r#"{"process":"coinduced","base":{"process":"bernoulli","weights":[0.5,0.5]}}"#).unwrap();
        let g = GroupSpec::product(f2(), GroupSpec::cyclic(4));
        assert_eq!(co.build(&g).unwrap().group(), &g);
        assert!(co.build(&f2()).is_err());
        let back: ProcessSpec = serde_json::from_str(&serde_json::to_string(&co).unwrap()).unwrap();
        assert_eq!(back, co);
    }

    #[test]
    fn csv_lists_support() {
        let z = GroupSpec::integers();
        let alt = Process::periodic_orbit(&[0, 1], 2).unwrap();
        let m = alt.marginal_on(&elems(&z, &["e", "a"])).unwrap();
        assert_eq!(m.to_csv(alt.alphabet()), "pattern,probability\n01,0.5\n10,0.5\n");
    }

    fn all_processes() -> Vec<Process> {
        let g = f2();
        let z = GroupSpec::integers();
        let (_, nu) = coset_example();
        let flip = Process::tree_markov(&g, vec![vec![0.7, 0.3], vec![0.3, 0.7]], vec![0.5, 0.5]).unwrap();
        let pi = [0.2, 0.3, 0.5];
        // Reversible chain from symmetric weights: P_ij ∝ W_ij with π_i ∝ row sums.
        let wts = [[0.1, 0.05, 0.05], [0.05, 0.1, 0.15], [0.05, 0.15, 0.3]];
        let t: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| wts[i][j] / pi[i]).collect()).collect();
        let rev = Process::tree_markov(&g, t, pi.to_vec()).unwrap();
        vec![
            Process::bernoulli(&g, vec![0.6, 0.4]).unwrap(),
            flip.clone(),
            rev,
            Process::product(&flip, &Process::bernoulli(&g, vec![0.5, 0.5]).unwrap()).unwrap(),
            Process::diagonal(&flip).unwrap(),
            nu.clone(),
            Process::product(&nu, &nu).unwrap(),
            Process::periodic_orbit(&[0, 0, 1], 2).unwrap(),
            Process::coinduced(&Process::periodic_orbit(&[0, 1, 2], 3).unwrap(), &GroupSpec::cyclic(2)).unwrap(),
            Process::coinduced(&flip, &z).unwrap(),
        ]
    }

    fn pick_window(p: &Process, picks: &[usize], radius: usize) -> Vec<GroupElement> {
        let ball = p.group().ball(radius);
        let mut out: Vec<GroupElement> = vec![];
        for &i in picks {
            let g = &ball.elements()[i % ball.len()];
            if !out.contains(g) {
                out.push(g.clone());
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn marginals_are_consistent_and_invariant(
            which in 0usize..10,
            picks in prop::collection::vec(0usize..200, 1..=5),
            shift in 0usize..200,
            drop in 0usize..5,
        ) {
            let p = &all_processes()[which];
            let w = pick_window(p, &picks, 2);
            let m = p.marginal_on(&w).unwrap();
            prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(m.probs().iter().all(|&x| x >= 0.0));

            // Projection onto a sub-window reproduces its marginal.
            let keep: Vec<usize> = (0..w.len()).filter(|&i| w.len() == 1 || i != drop % w.len()).collect();
            let sub: Vec<GroupElement> = keep.iter().map(|&i| w[i].clone()).collect();
            let projected = m.project(&keep).unwrap();
            prop_assert!(projected.tv(&p.marginal_on(&sub).unwrap()).unwrap() < 1e-12);

            // Right translation leaves the marginal unchanged.
            let ball = p.group().ball(2);
            let g = &ball.elements()[shift % ball.len()];
            let moved: Vec<GroupElement> = w.iter().map(|x| p.group().multiply(x, g).unwrap()).collect();
            prop_assert!(m.tv(&p.marginal_on(&moved).unwrap()).unwrap() < 1e-12);
        }

        #[test]
        fn product_projects_to_factors(picks in prop::collection::vec(0usize..50, 1..=4)) {
            let g = f2();
            let a = Process::tree_markov(&g, vec![vec![0.7, 0.3], vec![0.3, 0.7]], vec![0.5, 0.5]).unwrap();
            let b = Process::bernoulli(&g, vec![0.1, 0.2, 0.7]).unwrap();
            let ab = Process::product(&a, &b).unwrap();
            let w = pick_window(&ab, &picks, 1);
            let m = ab.marginal_on(&w).unwrap();
            let ma = a.marginal_on(&w).unwrap();
            let mut left = vec![0.0; ma.probs().len()];
            for (i, &p) in m.probs().iter().enumerate() {
                let d = pattern_digits(i, w.len(), 6);
                let x: Vec<u8> = d.iter().map(|&s| s / 3).collect();
                left[pattern_index(&x, 2)] += p;
            }
            prop_assert!(tv_slices(&left, ma.probs()) < 1e-12);
        }
    }
}
