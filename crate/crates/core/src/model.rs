//! Configurations on `X^V`, their pullback names and empirical
//! distributions, and the good models of a process.

use rayon::prelude::*;
use serde_json::json;
use statrs::function::gamma::ln_gamma;

use crate::error::{structural, validation, Error, Result};
use crate::group::{GroupElement, Window};
use crate::process::{pattern_count, pattern_digits, pattern_index, Alphabet, PatternDistribution, Process};
use crate::rng;
use crate::sofic::SoficMap;

pub const DEFAULT_BUDGET: u128 = 1 << 26;

/// Configurations per parallel work item in exhaustive scans.
const SCAN_CHUNK: u64 = 1 << 12;

/// Samples per random stream in Monte Carlo counting.
pub const MC_CHUNK: usize = 1024;
/// Search nodes allowed in [`letter_frequency_count`].
pub const LETTER_NODE_BUDGET: u64 = 50_000_000;

/// A point of `X^V`, one symbol per vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration(pub Vec<u8>);

impl Configuration {
    pub fn new(symbols: Vec<u8>, alphabet_size: usize) -> Result<Self> {
        if symbols.iter().any(|&s| usize::from(s) >= alphabet_size) {
            return Err(validation("symbol outside the alphabet"));
        }
        Ok(Configuration(symbols))
    }

    pub fn constant(len: usize, symbol: u8) -> Self {
        Configuration(vec![symbol; len])
    }

    /// The `index`-th configuration in lexicographic order, vertex 0 most
    /// significant.
    pub fn from_index(index: u64, len: usize, alphabet_size: usize) -> Self {
        let mut out = vec![0u8; len];
        let mut i = index;
        for slot in out.iter_mut().rev() {
            *slot = (i % alphabet_size as u64) as u8;
            i /= alphabet_size as u64;
        }
        Configuration(out)
    }

    /// The configuration `v ↦ (x_v, y_v)` over `X × Y` (symbol `x|Y| + y`).
    pub fn pair(x: &Configuration, y: &Configuration, right_alphabet: usize) -> Result<Self> {
        if x.len() != y.len() {
            return Err(structural("paired configurations differ in length"));
        }
        Ok(Configuration(
            x.0.iter().zip(&y.0).map(|(&a, &b)| (usize::from(a) * right_alphabet + usize::from(b)) as u8).collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.0
    }

    pub fn format(&self, alphabet: &Alphabet) -> String {
        alphabet.format(&self.0)
    }

    pub fn parse(text: &str, alphabet: &Alphabet) -> Result<Self> {
        Ok(Configuration(alphabet.parse(text)?))
    }
}

fn check_len(sigma: &SoficMap, x: &Configuration) -> Result<()> {
    if x.len() == sigma.vertices() {
        Ok(())
    } else {
        Err(structural(format!("configuration of length {} on {} vertices", x.len(), sigma.vertices())))
    }
}

/// `(x_{σ^g(v)})_{g ∈ F}`.
pub fn pullback_name(sigma: &SoficMap, x: &Configuration, v: usize, window: &Window) -> Result<Vec<u8>> {
    check_len(sigma, x)?;
    window.elements().iter().map(|g| Ok(x.0[sigma.evaluate(g, v)?])).collect()
}

/// Pattern counts over all vertices; frequencies are `count / |V|`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmpiricalDistribution {
    alphabet_size: usize,
    len: usize,
    counts: Vec<u64>,
    total: u64,
}

impl EmpiricalDistribution {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn frequency(&self, pattern: &[u8]) -> f64 {
        self.counts[pattern_index(pattern, self.alphabet_size)] as f64 / self.total as f64
    }

    pub fn to_distribution(&self) -> PatternDistribution {
        let probs = self.counts.iter().map(|&c| c as f64 / self.total as f64).collect();
        PatternDistribution::from_raw(self.alphabet_size, self.len, probs)
    }

    pub fn tv(&self, target: &PatternDistribution) -> Result<f64> {
        if target.alphabet_size() != self.alphabet_size || target.len() != self.len {
            return Err(structural("empirical and target windows differ"));
        }
        Ok(tv_counts(&self.counts, self.total, target.probs()))
    }
}

/// Total variation between `counts / total` and `probs`, as
/// `Σ |c - n p| / 2n` so that ties at rational thresholds stay exact when
/// `n p` is an integer.
pub fn tv_counts(counts: &[u64], total: u64, probs: &[f64]) -> f64 {
    let n = total as f64;
    counts.iter().zip(probs).map(|(&c, &p)| (c as f64 - n * p).abs()).sum::<f64>() / (2.0 * n)
}

pub fn empirical_distribution(sigma: &SoficMap, x: &Configuration, window: &Window, alphabet_size: usize) -> Result<EmpiricalDistribution> {
    empirical_on(sigma, x, window.elements(), alphabet_size)
}

/// Empirical distribution of `(x_{σ^g(v)})_{g}` over `v`, for an arbitrary
/// list of elements.
pub fn empirical_on(sigma: &SoficMap, x: &Configuration, elems: &[GroupElement], alphabet_size: usize) -> Result<EmpiricalDistribution> {
    check_len(sigma, x)?;
    let fp = Footprints::new(sigma, elems)?;
    let mut counts = vec![0u64; pattern_count(alphabet_size, elems.len())?];
    fp.count(&x.0, alphabet_size, &mut counts);
    Ok(EmpiricalDistribution {
        alphabet_size,
        len: elems.len(),
        counts,
        total: sigma.vertices() as u64,
    })
}

/// For each vertex `v`, the vertices `σ^g(v)` read by its pullback name.
#[derive(Clone, Debug)]
pub struct Footprints {
    width: usize,
    table: Vec<u32>,
}

impl Footprints {
    pub fn new(sigma: &SoficMap, elems: &[GroupElement]) -> Result<Self> {
        let images = elems.iter().map(|g| sigma.images(g)).collect::<Result<Vec<_>>>()?;
        let n = sigma.vertices();
        let mut table = Vec::with_capacity(n * elems.len());
        for v in 0..n {
            for img in &images {
                table.push(img[v]);
            }
        }
        Ok(Footprints { width: elems.len(), table })
    }

    pub fn vertices(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.table.len() / self.width
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn of(&self, v: usize) -> &[u32] {
        &self.table[v * self.width..(v + 1) * self.width]
    }

    #[inline]
    pub fn pattern_index(&self, x: &[u8], v: usize, alphabet_size: usize) -> usize {
        self.of(v).iter().fold(0, |acc, &w| acc * alphabet_size + usize::from(x[w as usize]))
    }

    /// Adds the pattern counts of `x` into `counts` (which is cleared first).
    pub fn count(&self, x: &[u8], alphabet_size: usize, counts: &mut [u64]) {
        counts.iter_mut().for_each(|c| *c = 0);
        for v in 0..self.vertices() {
            counts[self.pattern_index(x, v, alphabet_size)] += 1;
        }
    }
}

/// Membership test for `Ω_μ(F, ε, σ)`: `TV((P^σ_x)_F, μ_F) < ε`.
#[derive(Clone, Debug)]
pub struct GoodModelTest {
    alphabet_size: usize,
    footprints: Footprints,
    target: Vec<f64>,
    epsilon: f64,
}

impl GoodModelTest {
    pub fn new(sigma: &SoficMap, mu: &Process, window: &Window, epsilon: f64) -> Result<Self> {
        if mu.group() != sigma.spec() {
            return Err(structural("process and sofic map are over different groups"));
        }
        let target = mu.marginal_on(window.elements())?;
        GoodModelTest::with_target(sigma, window.elements(), &target, epsilon)
    }

    pub fn with_target(sigma: &SoficMap, elems: &[GroupElement], target: &PatternDistribution, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(validation("epsilon must be positive"));
        }
        if target.len() != elems.len() {
            return Err(structural("target marginal window differs"));
        }
        Ok(GoodModelTest {
            alphabet_size: target.alphabet_size(),
            footprints: Footprints::new(sigma, elems)?,
            target: target.probs().to_vec(),
            epsilon,
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn vertices(&self) -> usize {
        self.footprints.vertices()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn footprints(&self) -> &Footprints {
        &self.footprints
    }

    pub fn scratch(&self) -> Vec<u64> {
        vec![0; self.target.len()]
    }

    /// `scratch` comes from [`GoodModelTest::scratch`]. When patterns
    /// outnumber vertices only occupied patterns are visited, and `scratch`
    /// is left zeroed.
    pub fn tv_with(&self, x: &[u8], scratch: &mut [u64]) -> f64 {
        let v = self.vertices();
        if self.target.len() <= 2 * v {
            self.footprints.count(x, self.alphabet_size, scratch);
            return tv_counts(scratch, v as u64, &self.target);
        }
        let n = v as f64;
        for u in 0..v {
            scratch[self.footprints.pattern_index(x, u, self.alphabet_size)] += 1;
        }
        // Unoccupied patterns contribute `n (1 - Σ_occupied p)`.
        let mut sum = n;
        for u in 0..v {
            let i = self.footprints.pattern_index(x, u, self.alphabet_size);
            let c = scratch[i];
            if c > 0 {
                let np = n * self.target[i];
                sum += (c as f64 - np).abs() - np;
                scratch[i] = 0;
            }
        }
        sum / (2.0 * n)
    }

    pub fn tv(&self, x: &Configuration) -> f64 {
        self.tv_with(&x.0, &mut self.scratch())
    }

    pub fn is_good_with(&self, x: &[u8], scratch: &mut [u64]) -> bool {
        self.tv_with(x, scratch) < self.epsilon
    }

    pub fn is_good(&self, x: &Configuration) -> bool {
        self.tv(x) < self.epsilon
    }
}

pub fn is_good_model(sigma: &SoficMap, x: &Configuration, mu: &Process, window: &Window, epsilon: f64) -> Result<bool> {
    check_len(sigma, x)?;
    Ok(GoodModelTest::new(sigma, mu, window, epsilon)?.is_good(x))
}

fn space_size(alphabet_size: usize, vertices: usize, budget: u128) -> Result<u64> {
    let required = (alphabet_size as u128).checked_pow(vertices as u32).unwrap_or(u128::MAX);
    if required > budget || required > u128::from(u64::MAX) {
        return Err(Error::Budget {
            what: format!("exhaustive scan of {alphabet_size}^{vertices} configurations"),
            required,
            budget,
        });
    }
    Ok(required as u64)
}

/// Calls `visit(index, x)` for every configuration of `X^V` in the chunk
/// `[start, end)`, stepping an odometer rather than re-decoding indices.
fn scan_chunk(start: u64, end: u64, len: usize, q: usize, mut visit: impl FnMut(u64, &[u8])) {
    let mut x = Configuration::from_index(start, len, q).0;
    for i in start..end {
        visit(i, &x);
        for slot in x.iter_mut().rev() {
            if usize::from(*slot) + 1 < q {
                *slot += 1;
                break;
            }
            *slot = 0;
        }
    }
}

/// Every configuration passing `test`, in lexicographic order.
pub fn enumerate_with(test: &GoodModelTest, budget: u128) -> Result<Vec<Configuration>> {
    let q = test.alphabet_size();
    let n = test.vertices();
    let total = space_size(q, n, budget)?;
    let chunks = total.div_ceil(SCAN_CHUNK);
    let found: Vec<Vec<Configuration>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut scratch = test.scratch();
            let mut out = vec![];
            let end = ((c + 1) * SCAN_CHUNK).min(total);
            scan_chunk(c * SCAN_CHUNK, end, n, q, |_, x| {
                if test.is_good_with(x, &mut scratch) {
                    out.push(Configuration(x.to_vec()));
                }
            });
            out
        })
        .collect();
    Ok(found.into_iter().flatten().collect())
}

pub fn count_with(test: &GoodModelTest, budget: u128) -> Result<u64> {
    let q = test.alphabet_size();
    let n = test.vertices();
    let total = space_size(q, n, budget)?;
    let chunks = total.div_ceil(SCAN_CHUNK);
    Ok((0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut scratch = test.scratch();
            let mut hits = 0u64;
            let end = ((c + 1) * SCAN_CHUNK).min(total);
            scan_chunk(c * SCAN_CHUNK, end, n, q, |_, x| hits += u64::from(test.is_good_with(x, &mut scratch)));
            hits
        })
        .sum())
}

pub fn enumerate_good_models(sigma: &SoficMap, mu: &Process, window: &Window, epsilon: f64, budget: u128) -> Result<Vec<Configuration>> {
    enumerate_with(&GoodModelTest::new(sigma, mu, window, epsilon)?, budget)
}

/// An exact or estimated count with its natural logarithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogCount {
    /// Exact integer count when it is known and fits.
    pub exact: Option<u128>,
    /// `ln(count)`, `-inf` for an empty set.
    pub log: f64,
}

impl LogCount {
    pub fn from_exact(count: u128) -> Self {
        LogCount {
            exact: Some(count),
            log: if count == 0 { f64::NEG_INFINITY } else { (count as f64).ln() },
        }
    }

    /// `{"count":…, "log_count_nats":…}`, with `"-inf"` for an empty set and
    /// `null` count when only the logarithm is known.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "count": self.exact.map(|c| serde_json::Value::String(c.to_string())).unwrap_or(serde_json::Value::Null),
            "log_count_nats": log_json(self.log),
        })
    }
}

/// JSON for a log value; `-inf` becomes the string `"-inf"`.
pub fn log_json(x: f64) -> serde_json::Value {
    if x == f64::NEG_INFINITY {
        json!("-inf")
    } else {
        json!(x)
    }
}

/// `Σ_{types k with TV(k/n, p) < ε} n! / Π k_i!`, the number of good models
/// for `F = {e}` on `n` vertices. Compositions are enumerated with the
/// first coordinates fixed; a branch is cut once the deviation already
/// spent plus the unavoidable deviation of the remainder reaches `2ε`.
pub fn letter_frequency_count(weights: &[f64], vertices: usize, epsilon: f64) -> Result<LogCount> {
    crate::process::check_distribution(weights)?;
    if !(epsilon > 0.0) {
        return Err(validation("epsilon must be positive"));
    }
    let q = weights.len();
    let n = vertices;
    let ln_fact: Vec<f64> = (0..=n).map(|k| ln_gamma(k as f64 + 1.0)).collect();
    let suffix: Vec<f64> = (0..=q).map(|i| weights[i..].iter().sum()).collect();
    let mut counts = vec![0u64; q];
    let mut logs: Vec<f64> = vec![];
    let mut exact: Option<u128> = Some(0);
    let limit = 2.0 * epsilon + 1e-9;

    #[allow(clippy::too_many_arguments)]
    fn walk(
        i: usize,
        remaining: usize,
        spent: f64,
        ctx: &(usize, &[f64], &[f64], &[f64], f64, f64),
        counts: &mut Vec<u64>,
        logs: &mut Vec<f64>,
        exact: &mut Option<u128>,
        nodes: &mut u64,
    ) {
        let (n, weights, suffix, ln_fact, limit, epsilon) = *ctx;
        *nodes += 1;
        if *nodes > LETTER_NODE_BUDGET {
            return;
        }
        let q = weights.len();
        let nf = n as f64;
        if i + 1 == q {
            counts[i] = remaining as u64;
            if tv_counts(counts, n as u64, weights) < epsilon {
                logs.push(ln_fact[n] - counts.iter().map(|&k| ln_fact[k as usize]).sum::<f64>());
                *exact = exact.and_then(|e| multinomial(n, counts).and_then(|m| e.checked_add(m)));
            }
            return;
        }
        for k in 0..=remaining {
            let dev = spent + (k as f64 / nf - weights[i]).abs();
            let rest = ((remaining - k) as f64 / nf - suffix[i + 1]).abs();
            if dev + rest >= limit {
                // Past the target the deviation only grows with k.
                if k as f64 / nf > weights[i] {
                    break;
                }
                continue;
            }
            counts[i] = k as u64;
            walk(i + 1, remaining - k, dev, ctx, counts, logs, exact, nodes);
        }
    }

    let ctx = (n, weights, &suffix[..], &ln_fact[..], limit, epsilon);
    let mut nodes = 0;
    walk(0, n, 0.0, &ctx, &mut counts, &mut logs, &mut exact, &mut nodes);
    if nodes > LETTER_NODE_BUDGET {
        return Err(Error::Budget {
            what: "letter-type enumeration nodes".into(),
            required: u128::from(nodes),
            budget: u128::from(LETTER_NODE_BUDGET),
        });
    }
    Ok(LogCount {
        exact,
        log: log_sum_exp(&logs),
    })
}

fn multinomial(n: usize, counts: &[u64]) -> Option<u128> {
    let mut out: u128 = 1;
    let mut left = n as u128;
    for &k in counts {
        let mut c: u128 = 1;
        for j in 0..u128::from(k) {
            c = c.checked_mul(left - j)? / (j + 1);
        }
        out = out.checked_mul(c)?;
        left -= u128::from(k);
    }
    Some(out)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Importance-sampling estimate of `|Ω|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    /// Mean of `1{good} / q(x)`; may overflow to `inf` for large `|V|`.
    pub estimate: f64,
    pub std_error: f64,
    /// `ln(estimate)` computed without overflow.
    pub log_estimate: f64,
    /// `std_error / estimate`, or `inf` when nothing was accepted.
    pub relative_error: f64,
    pub samples: usize,
    pub accepted: usize,
}

/// Draws `x ∼ proposal^{×V}` and averages `1{x ∈ Ω} / q(x)`. Samples come
/// in chunks of [`MC_CHUNK`], chunk `c` on stream `(MC_COUNT, c)`.
pub fn count_with_mc(test: &GoodModelTest, proposal: &[f64], samples: usize, seed: u64) -> Result<McEstimate> {
    crate::process::check_distribution(proposal)?;
    if proposal.len() != test.alphabet_size() {
        return Err(structural("proposal alphabet differs from the process"));
    }
    if proposal.iter().any(|&p| p <= 0.0) {
        return Err(validation("proposal must be strictly positive"));
    }
    if samples == 0 {
        return Err(validation("need at least one sample"));
    }
    let n = test.vertices();
    let cum = rng::cumulative(proposal);
    let neg_log_q: Vec<f64> = proposal.iter().map(|p| -p.ln()).collect();
    let chunks = samples.div_ceil(MC_CHUNK);
    let log_weights: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, rng::ns::MC_COUNT, c as u32);
            let mut scratch = test.scratch();
            let mut x = vec![0u8; n];
            let mut out = vec![];
            let len = MC_CHUNK.min(samples - c * MC_CHUNK);
            for _ in 0..len {
                let mut lw = 0.0;
                for slot in x.iter_mut() {
                    let s = rng::categorical(&mut r, &cum);
                    *slot = s as u8;
                    lw += neg_log_q[s];
                }
                if test.is_good_with(&x, &mut scratch) {
                    out.push(lw);
                }
            }
            out
        })
        .collect();
    let lw: Vec<f64> = log_weights.into_iter().flatten().collect();
    let accepted = lw.len();
    let nf = samples as f64;
    if accepted == 0 {
        return Ok(McEstimate {
            estimate: 0.0,
            std_error: 0.0,
            log_estimate: f64::NEG_INFINITY,
            relative_error: f64::INFINITY,
            samples,
            accepted,
        });
    }
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Moments of w / e^m over all samples (rejected ones contribute 0).
    let s1: f64 = lw.iter().map(|x| (x - m).exp()).sum::<f64>() / nf;
    let s2: f64 = lw.iter().map(|x| (2.0 * (x - m)).exp()).sum::<f64>() / nf;
    let var = (s2 - s1 * s1).max(0.0) * nf / (nf - 1.0).max(1.0);
    let se_scaled = (var / nf).sqrt();
    let log_estimate = m + s1.ln();
    Ok(McEstimate {
        estimate: log_estimate.exp(),
        std_error: se_scaled * m.exp(),
        log_estimate,
        relative_error: se_scaled / s1,
        samples,
        accepted,
    })
}

pub fn count_good_models_mc(
    sigma: &SoficMap,
    mu: &Process,
    window: &Window,
    epsilon: f64,
    proposal: &[f64],
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    count_with_mc(&GoodModelTest::new(sigma, mu, window, epsilon)?, proposal, samples, seed)
}

/// A `D`-local map `X^D → Y`, tabulated over big-endian patterns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMap {
    domain: Window,
    input_alphabet: usize,
    output_alphabet: usize,
    table: Vec<u8>,
}

impl BlockMap {
    pub fn new(domain: Window, input_alphabet: usize, output_alphabet: usize, table: Vec<u8>) -> Result<Self> {
        if table.len() != pattern_count(input_alphabet, domain.len())? {
            return Err(structural("block map table must cover every pattern"));
        }
        if table.iter().any(|&y| usize::from(y) >= output_alphabet) {
            return Err(validation("block map value outside the target alphabet"));
        }
        Ok(BlockMap {
            domain,
            input_alphabet,
            output_alphabet,
            table,
        })
    }

    pub fn from_fn(domain: Window, input_alphabet: usize, output_alphabet: usize, f: impl Fn(&[u8]) -> u8) -> Result<Self> {
        let k = domain.len();
        let table = (0..pattern_count(input_alphabet, k)?)
            .map(|i| f(&pattern_digits(i, k, input_alphabet)))
            .collect();
        BlockMap::new(domain, input_alphabet, output_alphabet, table)
    }

    pub fn domain(&self) -> &Window {
        &self.domain
    }

    pub fn output_alphabet(&self) -> usize {
        self.output_alphabet
    }

    pub fn apply(&self, pattern: &[u8]) -> u8 {
        self.table[pattern_index(pattern, self.input_alphabet)]
    }
}

/// `ψ^σ(x)_v = ψ(Π^σ_v(x)|_D)`.
pub fn apply_block_map(psi: &BlockMap, sigma: &SoficMap, x: &Configuration) -> Result<Configuration> {
    check_len(sigma, x)?;
    let fp = Footprints::new(sigma, psi.domain.elements())?;
    Ok(Configuration(
        (0..sigma.vertices())
            .map(|v| psi.table[fp.pattern_index(&x.0, v, psi.input_alphabet)])
            .collect(),
    ))
}

/// Fraction of `v` with `Π_v(ψ^σ(x))|_F ≠ ψ^F(Π_v(x)|_{DF})`, where
/// `ψ^F(z)_g = ψ((z_{dg})_{d ∈ D})`.
pub fn block_map_mismatch(psi: &BlockMap, sigma: &SoficMap, x: &Configuration, window: &Window) -> Result<f64> {
    let spec = sigma.spec();
    let y = apply_block_map(psi, sigma, x)?;
    let df = psi.domain.product_set(window, spec)?;
    let positions: Vec<Vec<usize>> = window
        .elements()
        .iter()
        .map(|g| {
            psi.domain
                .elements()
                .iter()
                .map(|d| Ok(df.index_of(&spec.multiply(d, g)?).expect("DF contains every dg")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let fy = Footprints::new(sigma, window.elements())?;
    let fx = Footprints::new(sigma, df.elements())?;
    let bad = (0..sigma.vertices())
        .filter(|&v| {
            let name_x: Vec<u8> = fx.of(v).iter().map(|&w| x.0[w as usize]).collect();
            fy.of(v).iter().zip(&positions).any(|(&w, pos)| {
                let sub: Vec<u8> = pos.iter().map(|&p| name_x[p]).collect();
                y.0[w as usize] != psi.apply(&sub)
            })
        })
        .count();
    Ok(bad as f64 / sigma.vertices() as f64)
}

/// `ρ^h(x)_{(v,w)} = x_{(v, τ^{h⁻¹}(w))}` on a product map `σ × τ`.
pub fn adjoint_shift(sigma_tau: &SoficMap, h: &GroupElement, x: &Configuration) -> Result<Configuration> {
    check_len(sigma_tau, x)?;
    let (_, tau) = sigma_tau
        .factors()
        .ok_or_else(|| structural("adjoint shifts need a product sofic map"))?;
    let h_inv = tau.spec().inverse(h)?;
    let cols = tau.images(&h_inv)?;
    let w = tau.vertices();
    let rows = sigma_tau.vertices() / w;
    let mut out = Vec::with_capacity(x.len());
    for v in 0..rows {
        for c in 0..w {
            out.push(x.0[v * w + cols[c] as usize]);
        }
    }
    Ok(Configuration(out))
}

pub fn good_models_csv(models: &[Configuration], alphabet: &Alphabet) -> String {
    let mut out = String::from("configuration\n");
    for m in models {
        out.push_str(&m.format(alphabet));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupSpec;
    use proptest::prelude::*;

    fn cycle(n: usize) -> SoficMap {
        SoficMap::quotient_map(&GroupSpec::integers(), n).unwrap()
    }

    fn cfg(s: &str) -> Configuration {
        Configuration(s.bytes().map(|b| b - b'0').collect())
    }

    fn ea(spec: &GroupSpec) -> Window {
        Window::new(spec, vec![spec.identity(), spec.parse_element("a").unwrap()]).unwrap()
    }

    fn bern(spec: &GroupSpec, w: &[f64]) -> Process {
        Process::bernoulli(spec, w.to_vec()).unwrap()
    }

    #[test]
    fn pullback_examples() {
        let z = GroupSpec::integers();
        let s = cycle(3);
        let x = cfg("012");
        assert_eq!(pullback_name(&s, &x, 1, &Window::identity(&z)).unwrap(), vec![1]);
        let w = ea(&z);
        assert_eq!(w.describe(&z), "{e,a}");
        assert_eq!(pullback_name(&s, &x, 0, &w).unwrap(), vec![0, 1]);
        assert_eq!(pullback_name(&s, &x, 2, &w).unwrap(), vec![2, 0]);
        assert!(pullback_name(&s, &cfg("01"), 0, &w).is_err());
    }

    #[test]
    fn empirical_examples() {
        let z = GroupSpec::integers();
        let s = cycle(4);
        let e = empirical_distribution(&s, &cfg("0000"), &z.ball(2), 2).unwrap();
        assert_eq!(e.counts()[0], 4);
        let e = empirical_distribution(&s, &cfg("0011"), &Window::identity(&z), 2).unwrap();
        assert_eq!(e.counts(), &[2, 2]);
        let e = empirical_distribution(&s, &cfg("0101"), &ea(&z), 2).unwrap();
        assert_eq!(e.counts(), &[0, 2, 2, 0]);
        assert_eq!(e.frequency(&[0, 1]), 0.5);
    }

    #[test]
    fn good_model_examples() {
        let z = GroupSpec::integers();
        let s = cycle(4);
        let f = Window::identity(&z);
        let fair = bern(&z, &[0.5, 0.5]);
        assert!(is_good_model(&s, &cfg("0000"), &fair, &f, 1.01).unwrap());
        assert!(is_good_model(&s, &cfg("0011"), &fair, &f, 0.1).unwrap());
        assert!(!is_good_model(&s, &cfg("0000"), &fair, &f, 0.3).unwrap());
        assert_eq!(GoodModelTest::new(&s, &fair, &f, 0.3).unwrap().tv(&cfg("0000")), 0.5);
        // The inequality is strict.
        assert!(!is_good_model(&s, &cfg("0001"), &fair, &f, 0.25).unwrap());
        assert!(is_good_model(&s, &cfg("0000"), &fair, &f, 0.0).is_err());
    }

    fn brute_count(n: usize, w: &[f64], eps: f64) -> usize {
        (0..1u32 << n)
            .filter(|x| {
                let ones = x.count_ones() as f64 / n as f64;
                0.5 * ((1.0 - ones - w[0]).abs() + (ones - w[1]).abs()) < eps
            })
            .count()
    }

    #[test]
    fn enumeration_examples() {
        let z = GroupSpec::integers();
        let s = cycle(4);
        let f = Window::identity(&z);
        let fair = enumerate_good_models(&s, &bern(&z, &[0.5, 0.5]), &f, 0.3, DEFAULT_BUDGET).unwrap();
        assert_eq!(fair.len(), 14);
        assert_eq!(fair.len(), brute_count(4, &[0.5, 0.5], 0.3));
        assert!(fair.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(fair[0], cfg("0001"));
        let biased = enumerate_good_models(&s, &bern(&z, &[0.75, 0.25]), &f, 0.3, DEFAULT_BUDGET).unwrap();
        assert_eq!(biased.len(), 11);
        assert!(biased.iter().all(|x| x.0.iter().filter(|&&b| b == 1).count() <= 2));
        let all = enumerate_good_models(&s, &bern(&z, &[0.75, 0.25]), &f, 1.0, DEFAULT_BUDGET).unwrap();
        assert_eq!(all.len(), 16);
    }

    #[test]
    fn enumeration_respects_budget() {
        let z = GroupSpec::integers();
        let s = cycle(30);
        let err = enumerate_good_models(&s, &bern(&z, &[0.5, 0.5]), &Window::identity(&z), 0.1, DEFAULT_BUDGET).unwrap_err();
        assert!(matches!(err, Error::Budget { required, budget, .. } if required == 1 << 30 && budget == DEFAULT_BUDGET));
    }

    #[test]
    fn chunked_scan_matches_brute_force() {
        let z = GroupSpec::integers();
        let s = cycle(14);
        let test = GoodModelTest::new(&s, &bern(&z, &[0.5, 0.5]), &Window::identity(&z), 0.1).unwrap();
        assert_eq!(count_with(&test, DEFAULT_BUDGET).unwrap() as usize, brute_count(14, &[0.5, 0.5], 0.1));
    }

    #[test]
    fn letter_count_examples() {
        assert_eq!(letter_frequency_count(&[0.5, 0.5], 4, 0.3).unwrap().exact, Some(14));
        assert_eq!(letter_frequency_count(&[0.75, 0.25], 4, 0.3).unwrap().exact, Some(11));
        for n in [5usize, 10, 17] {
            for eps in [0.05, 0.2, 0.5, 0.9] {
                let expect: u128 = (0..n).filter(|&j| (j as f64) < eps * n as f64).map(|j| binom(n, j)).sum();
                let got = letter_frequency_count(&[1.0, 0.0], n, eps).unwrap();
                assert_eq!(got.exact, Some(expect), "n={n} eps={eps}");
                assert!((got.log - (expect as f64).ln()).abs() < 1e-10);
            }
        }
        let empty = letter_frequency_count(&[0.5, 0.5], 3, 0.1).unwrap();
        assert_eq!(empty.exact, Some(0));
        assert_eq!(empty.log, f64::NEG_INFINITY);
        assert_eq!(empty.to_json()["log_count_nats"], "-inf");
    }

    fn binom(n: usize, k: usize) -> u128 {
        (0..k).fold(1u128, |c, j| c * (n - j) as u128 / (j as u128 + 1))
    }

    #[test]
    fn letter_count_matches_enumeration_three_letters() {
        let z = GroupSpec::integers();
        let s = cycle(9);
        let w = [0.5, 0.3, 0.2];
        for eps in [0.05, 0.15, 0.3] {
            let exact = enumerate_good_models(&s, &bern(&z, &w), &Window::identity(&z), eps, DEFAULT_BUDGET).unwrap().len();
            assert_eq!(letter_frequency_count(&w, 9, eps).unwrap().exact, Some(exact as u128));
        }
    }

    #[test]
    fn letter_count_large_is_finite() {
        let c = letter_frequency_count(&[0.5, 0.5], 4096, 0.05).unwrap();
        assert!(c.exact.is_none());
        assert!((c.log / 4096.0 - 2f64.ln()).abs() < 0.02);
    }

    #[test]
    fn mc_examples() {
        let z = GroupSpec::integers();
        let s = cycle(12);
        let f = Window::identity(&z);
        let fair = bern(&z, &[0.5, 0.5]);
        let all = count_good_models_mc(&s, &fair, &f, 1.5, &[0.5, 0.5], 3000, 1).unwrap();
        assert!((all.estimate - 4096.0).abs() < 1e-6);
        let exact = enumerate_good_models(&s, &fair, &f, 0.1, DEFAULT_BUDGET).unwrap().len() as f64;
        let uni = count_good_models_mc(&s, &fair, &f, 0.1, &[0.5, 0.5], 20_000, 7).unwrap();
        assert!((uni.estimate - exact).abs() < 3.0 * uni.std_error, "{uni:?} vs {exact}");
        let skew = count_good_models_mc(&s, &fair, &f, 0.1, &[0.3, 0.7], 20_000, 8).unwrap();
        let joint = (uni.std_error.powi(2) + skew.std_error.powi(2)).sqrt();
        assert!((uni.estimate - skew.estimate).abs() < 3.0 * joint);
        assert!(count_good_models_mc(&s, &fair, &f, 0.1, &[1.0, 0.0], 10, 1).is_err());
        let again = count_good_models_mc(&s, &fair, &f, 0.1, &[0.5, 0.5], 20_000, 7).unwrap();
        assert_eq!(again, uni);
    }

    #[test]
    fn block_map_examples() {
        let z = GroupSpec::integers();
        let s = cycle(4);
        let x = cfg("0011");
        let proj = BlockMap::from_fn(Window::identity(&z), 2, 2, |p| p[0]).unwrap();
        assert_eq!(apply_block_map(&proj, &s, &x).unwrap(), x);
        let xor = BlockMap::from_fn(ea(&z), 2, 2, |p| p[0] ^ p[1]).unwrap();
        assert_eq!(apply_block_map(&xor, &s, &x).unwrap(), cfg("0101"));
        let konst = BlockMap::from_fn(ea(&z), 2, 3, |_| 2).unwrap();
        assert_eq!(apply_block_map(&konst, &s, &x).unwrap().0, vec![2; 4]);
        assert_eq!(block_map_mismatch(&xor, &s, &x, &z.ball(2)).unwrap(), 0.0);
        assert!(BlockMap::new(ea(&z), 2, 2, vec![0, 1, 2, 0]).is_err());
    }

    #[test]
    fn adjoint_examples() {
        let z = GroupSpec::integers();
        let st = SoficMap::product(&cycle(3), &cycle(2)).unwrap();
        let x = cfg("010011");
        assert_eq!(adjoint_shift(&st, &z.identity(), &x).unwrap(), x);
        let a = z.parse_element("a").unwrap();
        assert_eq!(adjoint_shift(&st, &a, &x).unwrap(), cfg("100011"));
        assert!(adjoint_shift(&cycle(6), &a, &x).is_err());

        let st = SoficMap::product(&cycle(3), &cycle(5)).unwrap();
        let x = Configuration((0..15).map(|i| (i % 3) as u8).collect());
        for h1 in z.ball(3).elements() {
            for h2 in z.ball(3).elements() {
                let lhs = adjoint_shift(&st, h1, &adjoint_shift(&st, h2, &x).unwrap()).unwrap();
                let rhs = adjoint_shift(&st, &z.multiply(h1, h2).unwrap(), &x).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn string_round_trip_and_json() {
        let a = Alphabet::new(2).unwrap();
        let x = Configuration::parse("0110", &a).unwrap();
        assert_eq!(x.format(&a), "0110");
        assert_eq!(good_models_csv(&[x], &a), "configuration\n0110\n");
        let j = LogCount::from_exact(14).to_json();
        assert_eq!(j["count"], "14");
        assert!((j["log_count_nats"].as_f64().unwrap() - 14f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn larger_window_is_monotone() {
        // Ω(F', ε) ⊆ Ω(F, ε) for F ⊆ F', exhaustively on a random F_2 map.
        let f2 = GroupSpec::free(2);
        let s = SoficMap::random_uniform(&f2, 10, 4).unwrap();
        let mu = Process::tree_markov(&f2, vec![vec![0.8, 0.2], vec![0.2, 0.8]], vec![0.5, 0.5]).unwrap();
        let small = Window::identity(&f2);
        let big = f2.ball(1);
        for eps in [0.1, 0.25, 0.4] {
            let inner = enumerate_good_models(&s, &mu, &big, eps, DEFAULT_BUDGET).unwrap();
            let outer = enumerate_good_models(&s, &mu, &small, eps, DEFAULT_BUDGET).unwrap();
            assert!(inner.iter().all(|x| outer.binary_search(x).is_ok()));
        }
    }

    fn bad_vertex_fraction(s: &SoficMap, f: &Window, g: &GroupElement) -> f64 {
        let spec = s.spec();
        let ig = s.images(g).unwrap();
        let bad = (0..s.vertices())
            .filter(|&v| {
                f.elements().iter().any(|h| {
                    let fg = spec.multiply(h, g).unwrap();
                    s.evaluate(h, ig[v] as usize).unwrap() != s.evaluate(&fg, v).unwrap()
                })
            })
            .count();
        bad as f64 / s.vertices() as f64
    }

    #[test]
    fn approximate_invariance_on_exact_quotients() {
        let z = GroupSpec::integers();
        let s = cycle(7);
        let f = z.ball(1);
        let g = z.parse_element("aa").unwrap();
        let fg: Vec<GroupElement> = f.elements().iter().map(|h| z.multiply(h, &g).unwrap()).collect();
        for i in 0..1u64 << 7 {
            let x = Configuration::from_index(i, 7, 2);
            let p = empirical_distribution(&s, &x, &f, 2).unwrap();
            let shifted = empirical_on(&s, &x, &fg, 2).unwrap();
            assert_eq!(p, shifted);
        }
        assert_eq!(bad_vertex_fraction(&s, &f, &g), 0.0);
    }

    /// Random permutations evaluated through words of Z/5, which are far
    /// from multiplicative.
    fn scrambled_z5(seed: u64, n: usize) -> SoficMap {
        let mut r = rng::stream(seed, 0, 0);
        let mut img: Vec<u32> = (0..n as u32).collect();
        rng::fisher_yates(&mut r, &mut img);
        let p = crate::sofic::Permutation::from_images(img).unwrap();
        SoficMap::from_permutations(GroupSpec::cyclic(5), vec![p]).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn approximate_invariance(seed in 0u64..1000, gi in 0usize..5, xi in 0u64..(1 << 10)) {
            let f2 = GroupSpec::cyclic(5);
            let s = scrambled_z5(seed, 10);
            let f = f2.ball(1);
            let ball = f2.ball(2);
            let g = &ball.elements()[gi];
            let fg: Vec<GroupElement> = f.elements().iter().map(|h| f2.multiply(h, g).unwrap()).collect();
            let x = Configuration::from_index(xi, 10, 2);
            let p = empirical_distribution(&s, &x, &f, 2).unwrap().to_distribution();
            let shifted = empirical_on(&s, &x, &fg, 2).unwrap().to_distribution();
            let bound = 2.0 * bad_vertex_fraction(&s, &f, g);
            prop_assert!(p.tv(&shifted).unwrap() <= bound + 1e-12);
        }

        #[test]
        fn block_map_compatibility(seed in 0u64..1000, xi in 0u64..(1 << 12), table in prop::collection::vec(0u8..2, 8)) {
            let f2 = GroupSpec::cyclic(5);
            let s = scrambled_z5(seed, 12);
            let d = Window::new(&f2, vec![f2.identity(), f2.parse_element("a").unwrap(), f2.parse_element("a^-1").unwrap()]).unwrap();
            let psi = BlockMap::new(d.clone(), 2, 2, table).unwrap();
            let f = f2.ball(1);
            let x = Configuration::from_index(xi, 12, 2);
            let mismatch = block_map_mismatch(&psi, &s, &x, &f).unwrap();
            // Bound: vertices where σ^d σ^g ≠ σ^{dg} for some d ∈ D, g ∈ F.
            let bad = (0..12).filter(|&v| {
                f.elements().iter().any(|g| d.elements().iter().any(|dd| {
                    let dg = f2.multiply(dd, g).unwrap();
                    s.evaluate(dd, s.evaluate(g, v).unwrap()).unwrap() != s.evaluate(&dg, v).unwrap()
                }))
            }).count() as f64 / 12.0;
            prop_assert!(mismatch <= bad + 1e-12);
        }
    }
}
