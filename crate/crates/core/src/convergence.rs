//! Finite-size diagnostics for local weak*, quenched and doubly-quenched
//! convergence of measures on model spaces.
//!
//! Every diagnostic is exact when the measure has an explicit support of
//! manageable size or is a product measure, and Monte Carlo otherwise.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{structural, validation, Error, Result};
use crate::group::{GroupElement, Window};
use crate::metric::ModelMeasure;
use crate::model::{adjoint_shift, Configuration, Footprints, GoodModelTest};
use crate::process::{pattern_count, tv_slices, PatternDistribution, Process};
use crate::rng;
use crate::sofic::SoficMap;

/// Explicit supports up to this size are summed exactly.
pub const EXACT_SUPPORT_LIMIT: usize = 100_000;
/// Explicit pair supports up to this size are summed exactly in `dq_defect`.
pub const EXACT_PAIR_LIMIT: usize = 1 << 20;
pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.05;
const SAMPLE_CHUNK: usize = 1024;

/// A value with its Monte Carlo standard error (0 when exact).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub exact: bool,
}

impl Estimate {
    fn exact(value: f64) -> Self {
        Estimate { value, std_error: 0.0, exact: true }
    }

    fn proportion(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Estimate {
            value: p,
            std_error: (p * (1.0 - p) / n as f64).sqrt(),
            exact: false,
        }
    }
}

/// `N` draws from `ν`, chunk `c` on stream `(MEASURE_SAMPLE, c)`.
pub fn sample_configurations(nu: &ModelMeasure, samples: usize, seed: u64) -> Vec<Configuration> {
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    let parts: Vec<Vec<Configuration>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, rng::ns::MEASURE_SAMPLE, c as u32);
            let len = SAMPLE_CHUNK.min(samples - c * SAMPLE_CHUNK);
            (0..len).map(|_| nu.sample(&mut r)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

fn check_measure(sigma: &SoficMap, nu: &ModelMeasure) -> Result<()> {
    if nu.vertices() != sigma.vertices() {
        return Err(structural("measure and sofic map have different vertex sets"));
    }
    Ok(())
}

fn check_eps(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 {
        Ok(())
    } else {
        Err(validation("epsilon must be positive"))
    }
}

/// Law of `(x_{u_1}, …, x_{u_k})` under `ν^{×V}`: sites sharing a vertex
/// share a symbol, distinct vertices are independent.
pub fn product_pushforward(weights: &[f64], sites: &[u32]) -> Result<Vec<f64>> {
    let q = weights.len();
    let mut distinct: Vec<u32> = vec![];
    let slot: Vec<usize> = sites
        .iter()
        .map(|v| {
            distinct.iter().position(|d| d == v).unwrap_or_else(|| {
                distinct.push(*v);
                distinct.len() - 1
            })
        })
        .collect();
    let mut out = vec![0.0; pattern_count(q, sites.len())?];
    let mut symbols = vec![0u8; distinct.len()];
    for a in 0..pattern_count(q, distinct.len())? {
        let mut rest = a;
        let mut p = 1.0;
        for s in symbols.iter_mut().rev() {
            *s = (rest % q) as u8;
            rest /= q;
        }
        for &s in &symbols {
            p *= weights[usize::from(s)];
        }
        if p == 0.0 {
            continue;
        }
        let idx = slot.iter().fold(0, |acc, &k| acc * q + usize::from(symbols[k]));
        out[idx] += p;
    }
    Ok(out)
}

/// Pattern law of `x|_{sites}` under `ν`, from samples when `samples` is
/// given and `ν` has no exact route.
fn local_law(nu: &ModelMeasure, sites: &[u32], samples: Option<&[Configuration]>) -> Result<Vec<f64>> {
    let q = nu.alphabet_size();
    if let Some(w) = nu.site_weights() {
        return product_pushforward(w, sites);
    }
    let mut out = vec![0.0; pattern_count(q, sites.len())?];
    match (nu.atoms(), samples) {
        (Some((support, weights)), None) => {
            for (x, w) in support.iter().zip(weights) {
                out[sites.iter().fold(0, |acc, &u| acc * q + usize::from(x.0[u as usize]))] += w;
            }
        }
        (_, Some(draws)) => {
            let inc = 1.0 / draws.len() as f64;
            for x in draws {
                out[sites.iter().fold(0, |acc, &u| acc * q + usize::from(x.0[u as usize]))] += inc;
            }
        }
        (None, None) => return Err(Error::Refused("no exact route for this measure".into())),
    }
    Ok(out)
}

/// Draws used by estimators when the measure is too large to sum exactly.
fn draws_if_needed(nu: &ModelMeasure, samples: usize, seed: u64) -> Result<Option<Vec<Configuration>>> {
    let exact = nu.site_weights().is_some() || nu.atoms().is_some_and(|(s, _)| s.len() <= EXACT_SUPPORT_LIMIT);
    if exact {
        return Ok(None);
    }
    if samples == 0 {
        return Err(validation("need at least one sample"));
    }
    Ok(Some(sample_configurations(nu, samples, seed)))
}

/// Fraction of vertices `v` with `TV((Π^σ_v)_* ν |_F, μ_F) ≥ ε`.
pub fn lw_defect(
    sigma: &SoficMap,
    nu: &ModelMeasure,
    mu: &Process,
    window: &Window,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    check_measure(sigma, nu)?;
    check_eps(epsilon)?;
    let target = mu.marginal_on(window.elements())?;
    let fp = Footprints::new(sigma, window.elements())?;
    let draws = draws_if_needed(nu, samples, seed)?;
    let bad: Vec<bool> = (0..sigma.vertices())
        .into_par_iter()
        .map(|v| local_law(nu, fp.of(v), draws.as_deref()).map(|law| tv_slices(&law, target.probs()) >= epsilon))
        .collect::<Result<Vec<_>>>()?;
    let value = bad.iter().filter(|&&b| b).count() as f64 / sigma.vertices() as f64;
    Ok(Estimate {
        value,
        std_error: 0.0,
        exact: draws.is_none(),
    })
}

/// `1 - ν(Ω_μ(F, ε, σ))`.
pub fn quenched_defect(
    sigma: &SoficMap,
    nu: &ModelMeasure,
    mu: &Process,
    window: &Window,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    check_measure(sigma, nu)?;
    let test = GoodModelTest::new(sigma, mu, window, epsilon)?;
    mass_deficit(&test, nu, samples, seed)
}

fn mass_deficit(test: &GoodModelTest, nu: &ModelMeasure, samples: usize, seed: u64) -> Result<Estimate> {
    match nu.atoms() {
        Some((support, weights)) if support.len() <= EXACT_SUPPORT_LIMIT => {
            // Summing the bad mass keeps an all-good support at exactly 0.
            let bad: f64 = support
                .par_iter()
                .zip(weights)
                .map_init(|| test.scratch(), |scratch, (x, w)| if test.is_good_with(&x.0, scratch) { 0.0 } else { *w })
                .collect::<Vec<f64>>()
                .iter()
                .sum();
            Ok(Estimate::exact(bad.min(1.0)))
        }
        _ => {
            if samples == 0 {
                return Err(validation("need at least one sample"));
            }
            let draws = sample_configurations(nu, samples, seed);
            let bad = draws
                .par_iter()
                .map_init(|| test.scratch(), |scratch, x| usize::from(!test.is_good_with(&x.0, scratch)))
                .sum();
            Ok(Estimate::proportion(bad, samples))
        }
    }
}

/// `1 - (ν × ν)(Ω_{μ×μ}(F, ε, σ))` on the pair space `(X × X)^V`.
pub fn dq_defect(
    sigma: &SoficMap,
    nu: &ModelMeasure,
    mu: &Process,
    window: &Window,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    check_measure(sigma, nu)?;
    let mu2 = Process::product(mu, mu)?;
    let test = GoodModelTest::new(sigma, &mu2, window, epsilon)?;
    let q = nu.alphabet_size();
    if q * q > 256 {
        return Err(validation("pair alphabet exceeds 256 symbols"));
    }
    match nu.atoms() {
        Some((support, weights)) if support.len() * support.len() <= EXACT_PAIR_LIMIT => {
            let bad: f64 = (0..support.len())
                .into_par_iter()
                .map_init(
                    || test.scratch(),
                    |scratch, i| {
                        let mut s = 0.0;
                        for j in 0..support.len() {
                            let z = Configuration::pair(&support[i], &support[j], q).expect("same length");
                            if !test.is_good_with(&z.0, scratch) {
                                s += weights[i] * weights[j];
                            }
                        }
                        s
                    },
                )
                .collect::<Vec<f64>>()
                .iter()
                .sum();
            Ok(Estimate::exact(bad.min(1.0)))
        }
        Some(_) => {
            // Independent pairs: two halves of one sample stream.
            if samples == 0 {
                return Err(validation("need at least one sample"));
            }
            let draws = sample_configurations(nu, 2 * samples, seed);
            let bad = (0..samples)
                .into_par_iter()
                .map_init(
                    || test.scratch(),
                    |scratch, i| {
                        let z = Configuration::pair(&draws[2 * i], &draws[2 * i + 1], q).expect("same length");
                        usize::from(!test.is_good_with(&z.0, scratch))
                    },
                )
                .sum();
            Ok(Estimate::proportion(bad, samples))
        }
        None => mass_deficit(&test, &nu.square()?, samples, seed),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cluster {
    pub mass: f64,
    /// Mass-weighted mean of the members' empirical `F`-marginals.
    pub centroid: Vec<f64>,
    /// Number of distinct empirical marginals merged into the cluster.
    pub members: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dispersion {
    /// Clusters by decreasing mass.
    pub clusters: Vec<Cluster>,
    pub barycentre: Vec<f64>,
    /// `TV(barycentre, μ_F)` when a target was given.
    pub barycentre_tv: Option<f64>,
    pub exact: bool,
}

impl Dispersion {
    /// TV between two clusters' centroids.
    pub fn centroid_tv(&self, i: usize, j: usize) -> f64 {
        tv_slices(&self.clusters[i].centroid, &self.clusters[j].centroid)
    }
}

/// Single-linkage clustering (link when TV `< threshold`) of the empirical
/// `F`-marginals `(P^σ_x)_F` for `x ∼ ν`. Atoms are weighted exactly when the
/// support has at most `samples` atoms; otherwise `samples` draws are used.
pub fn dispersion(
    sigma: &SoficMap,
    nu: &ModelMeasure,
    window: &Window,
    target: Option<&PatternDistribution>,
    threshold: f64,
    samples: usize,
    seed: u64,
) -> Result<Dispersion> {
    check_measure(sigma, nu)?;
    let q = nu.alphabet_size();
    let fp = Footprints::new(sigma, window.elements())?;
    let (configs, weights, exact): (Vec<Configuration>, Vec<f64>, bool) = match nu.atoms() {
        Some((s, w)) if s.len() <= samples.max(1) => (s.to_vec(), w.to_vec(), true),
        _ => {
            if samples < 2 {
                return Err(validation("dispersion needs at least two samples"));
            }
            let draws = sample_configurations(nu, samples, seed);
            (draws, vec![1.0 / samples as f64; samples], false)
        }
    };
    // Identical marginals are merged before clustering.
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut distinct: Vec<Vec<u64>> = vec![];
    let mut mass: Vec<f64> = vec![];
    let mut scratch = vec![0u64; pattern_count(q, window.len())?];
    for (x, w) in configs.iter().zip(&weights) {
        fp.count(&x.0, q, &mut scratch);
        let k = *index.entry(scratch.clone()).or_insert_with(|| {
            distinct.push(scratch.clone());
            mass.push(0.0);
            distinct.len() - 1
        });
        mass[k] += w;
    }
    let n = sigma.vertices() as f64;
    let marginals: Vec<Vec<f64>> = distinct.iter().map(|c| c.iter().map(|&x| x as f64 / n).collect()).collect();
    let m = marginals.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut j = i;
        while p[j] != r {
            let next = p[j];
            p[j] = r;
            j = next;
        }
        r
    }
    let links: Vec<(usize, usize)> = (0..m)
        .into_par_iter()
        .flat_map_iter(|i| {
            let marginals = &marginals;
            (i + 1..m).filter(move |&j| tv_slices(&marginals[i], &marginals[j]) < threshold).map(move |j| (i, j))
        })
        .collect();
    for (i, j) in links {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: Vec<(usize, Cluster)> = vec![];
    let len = marginals.first().map(Vec::len).unwrap_or(0);
    for i in 0..m {
        let r = find(&mut parent, i);
        let pos = match groups.iter().position(|(root, _)| *root == r) {
            Some(p) => p,
            None => {
                groups.push((r, Cluster { mass: 0.0, centroid: vec![0.0; len], members: 0 }));
                groups.len() - 1
            }
        };
        let c = &mut groups[pos].1;
        c.mass += mass[i];
        c.members += 1;
        c.centroid.iter_mut().zip(&marginals[i]).for_each(|(a, b)| *a += mass[i] * b);
    }
    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|(_, mut c)| {
            let total = c.mass;
            c.centroid.iter_mut().for_each(|x| *x /= total);
            c
        })
        .collect();
    // Stable sort keeps first-appearance order among equal masses.
    clusters.sort_by(|a, b| b.mass.partial_cmp(&a.mass).expect("finite masses"));
    let mut barycentre = vec![0.0; len];
    for (k, w) in marginals.iter().zip(&mass) {
        barycentre.iter_mut().zip(k).for_each(|(a, b)| *a += w * b);
    }
    let barycentre_tv = match target {
        Some(t) => {
            if t.probs().len() != len {
                return Err(structural("target window differs"));
            }
            Some(tv_slices(&barycentre, t.probs()))
        }
        None => None,
    };
    Ok(Dispersion {
        clusters,
        barycentre,
        barycentre_tv,
        exact,
    })
}

/// Fraction of `pairs` uniform vertex pairs `(v, v′)` for which the joint law
/// of `(Π_v, Π_{v′})|_{F×F}` under `ν` is at TV `≥ ε` from `μ_F ⊗ μ_F`.
#[allow(clippy::too_many_arguments)]
pub fn pair_vertex_stat(
    sigma: &SoficMap,
    nu: &ModelMeasure,
    mu: &Process,
    window: &Window,
    epsilon: f64,
    pairs: usize,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    check_measure(sigma, nu)?;
    check_eps(epsilon)?;
    if pairs == 0 {
        return Err(validation("need at least one vertex pair"));
    }
    let target = mu.marginal_on(window.elements())?;
    let t = target.probs();
    let product: Vec<f64> = t.iter().flat_map(|a| t.iter().map(move |b| a * b)).collect();
    let fp = Footprints::new(sigma, window.elements())?;
    let draws = draws_if_needed(nu, samples, seed)?;
    let mut r = rng::stream(seed, rng::ns::VERTEX_PAIRS, 0);
    let n = sigma.vertices() as u64;
    let chosen: Vec<(usize, usize)> = (0..pairs)
        .map(|_| (rng::uniform_below(&mut r, n) as usize, rng::uniform_below(&mut r, n) as usize))
        .collect();
    let bad: usize = chosen
        .par_iter()
        .map(|&(v, w)| {
            let sites: Vec<u32> = fp.of(v).iter().chain(fp.of(w)).copied().collect();
            local_law(nu, &sites, draws.as_deref()).map(|law| usize::from(tv_slices(&law, &product) >= epsilon))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(Estimate::proportion(bad, pairs))
}

/// `(1/k) Σ_i δ_{x_i}`, repeated configurations merged.
pub fn models_to_measure(configs: &[Configuration], alphabet_size: usize) -> Result<ModelMeasure> {
    if configs.is_empty() {
        return Err(validation("need at least one configuration"));
    }
    ModelMeasure::uniform(alphabet_size, configs)
}

/// `(1/|E|) Σ_{h ∈ E} (ρ^h)_* θ` on a product map `σ × τ`.
pub fn h_average(sigma_tau: &SoficMap, theta: &ModelMeasure, elements: &[GroupElement]) -> Result<ModelMeasure> {
    let (support, weights) = theta
        .atoms()
        .ok_or_else(|| Error::Refused("h_average needs an explicitly supported measure".into()))?;
    if elements.is_empty() {
        return Err(validation("averaging set must be nonempty"));
    }
    let scale = 1.0 / elements.len() as f64;
    let mut atoms = Vec::with_capacity(support.len() * elements.len());
    for h in elements {
        for (x, w) in support.iter().zip(weights) {
            atoms.push((adjoint_shift(sigma_tau, h, x)?, w * scale));
        }
    }
    ModelMeasure::explicit(theta.alphabet_size(), atoms)
}

/// One row of a convergence curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub n: usize,
    pub vertices: usize,
    pub window: String,
    pub f_radius: usize,
    pub epsilon: f64,
    pub lw_defect: f64,
    pub q_defect: Estimate,
    pub dq_defect: Estimate,
    pub dispersion_clusters: usize,
}

impl ConvergenceReport {
    pub const CSV_HEADER: &'static str = "n,|V|,F_radius,epsilon,lw_defect,q_defect,dq_defect,dispersion_clusters";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.n,
            self.vertices,
            self.f_radius,
            self.epsilon,
            self.lw_defect,
            self.q_defect.value,
            self.dq_defect.value,
            self.dispersion_clusters
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data serializes")
    }
}
