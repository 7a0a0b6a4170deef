//! Finite permutation actions `σ: G → Sym(V)` and their audits.
//!
//! A map is either given by one permutation per generator, with `σ^g`
//! evaluated by composing along a word for `g`, or is the product of two
//! maps acting on `V × W` in row-major order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{structural, validation, Result};
use crate::group::{GroupElement, GroupSpec, Letter, Window};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<u32>,
    inverse: Vec<u32>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        let forward: Vec<u32> = (0..n as u32).collect();
        Permutation {
            inverse: forward.clone(),
            forward,
        }
    }

    pub fn from_images(images: Vec<u32>) -> Result<Self> {
        let n = images.len();
        let mut inverse = vec![u32::MAX; n];
        for (v, &w) in images.iter().enumerate() {
            let w = w as usize;
            if w >= n || inverse[w] != u32::MAX {
                return Err(validation("images do not form a bijection"));
            }
            inverse[w] = v as u32;
        }
        Ok(Permutation {
            forward: images,
            inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    #[inline]
    pub fn apply(&self, v: usize) -> usize {
        self.forward[v] as usize
    }

    #[inline]
    pub fn apply_inverse(&self, v: usize) -> usize {
        self.inverse[v] as usize
    }

    #[inline]
    pub fn apply_letter(&self, inverse: bool, v: usize) -> usize {
        if inverse {
            self.apply_inverse(v)
        } else {
            self.apply(v)
        }
    }

    pub fn images(&self) -> &[u32] {
        &self.forward
    }

    pub fn fixed_points(&self) -> usize {
        self.forward.iter().enumerate().filter(|&(v, &w)| v == w as usize).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Action {
    Generators {
        perms: Vec<Permutation>,
        /// Block label per vertex (0 = U, 1 = W) for partitioned maps.
        partition: Option<Vec<u8>>,
    },
    Product {
        left: Box<SoficMap>,
        right: Box<SoficMap>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoficMap {
    spec: GroupSpec,
    vertices: usize,
    action: Action,
}

impl SoficMap {
    pub fn from_permutations(spec: GroupSpec, perms: Vec<Permutation>) -> Result<Self> {
        if matches!(spec, GroupSpec::Product { .. }) {
            return Err(structural("maps over a product group are built with SoficMap::product"));
        }
        if perms.len() != spec.num_generators() {
            return Err(structural(format!(
                "{} permutations for {} generators",
                perms.len(),
                spec.num_generators()
            )));
        }
        let n = perms.first().map(Permutation::len).unwrap_or(0);
        if n == 0 || perms.iter().any(|p| p.len() != n) {
            return Err(structural("permutations must share a nonempty vertex set"));
        }
        Ok(SoficMap {
            spec,
            vertices: n,
            action: Action::Generators {
                perms,
                partition: None,
            },
        })
    }

    /// Independent uniform permutations, one per generator, drawn by
    /// Fisher–Yates on stream `(PERMUTATION, generator)` of `seed`.
    pub fn random_uniform(spec: &GroupSpec, n: usize, seed: u64) -> Result<Self> {
        if !spec.is_word_group() {
            return Err(structural("random_uniform needs a free group or free product"));
        }
        if n == 0 {
            return Err(validation("need at least one vertex"));
        }
        let perms = (0..spec.num_generators())
            .map(|i| {
                let mut rng = rng::stream(seed, rng::ns::PERMUTATION, i as u32);
                let mut images: Vec<u32> = (0..n as u32).collect();
                rng::fisher_yates(&mut rng, &mut images);
                Permutation::from_images(images)
            })
            .collect::<Result<Vec<_>>>()?;
        SoficMap::from_permutations(spec.clone(), perms)
    }

    /// The randomized approximation of `F_4 = <a,b> * <a',b'>` on
    /// `V = U ∪ W` with `|U| = 3n`, `|W| = n`: `a` and `b` are uniform among
    /// permutations preserving both blocks, `a'` and `b'` are uniform on `V`.
    pub fn partitioned_random(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(validation("need n >= 1"));
        }
        let spec = GroupSpec::free_product(vec![2, 2]);
        let total = 4 * n;
        let u = 3 * n;
        let mut perms = Vec::with_capacity(4);
        for i in 0..2u32 {
            let mut images: Vec<u32> = (0..total as u32).collect();
            let mut r_u = rng::stream(seed, rng::ns::PARTITION_BLOCK, 2 * i);
            rng::fisher_yates(&mut r_u, &mut images[..u]);
            let mut r_w = rng::stream(seed, rng::ns::PARTITION_BLOCK, 2 * i + 1);
            rng::fisher_yates(&mut r_w, &mut images[u..]);
            perms.push(Permutation::from_images(images)?);
        }
        for i in 2..4u32 {
            let mut rng = rng::stream(seed, rng::ns::PERMUTATION, i);
            let mut images: Vec<u32> = (0..total as u32).collect();
            rng::fisher_yates(&mut rng, &mut images);
            perms.push(Permutation::from_images(images)?);
        }
        let mut map = SoficMap::from_permutations(spec, perms)?;
        let labels = (0..total).map(|v| u8::from(v >= u)).collect();
        if let Action::Generators { partition, .. } = &mut map.action {
            *partition = Some(labels);
        }
        Ok(map)
    }

    /// Exact finite quotients: the `n`-cycle for the integers, the left
    /// regular action for a finite table (where `n` is ignored), and
    /// products of these for direct products.
    pub fn quotient_map(spec: &GroupSpec, n: usize) -> Result<Self> {
        match spec {
            GroupSpec::Free { rank: 1, .. } => {
                if n == 0 {
                    return Err(validation("need n >= 1"));
                }
                let images = (0..n as u32).map(|v| (v + 1) % n as u32).collect();
                SoficMap::from_permutations(spec.clone(), vec![Permutation::from_images(images)?])
            }
            GroupSpec::Finite { table, generators, .. } => {
                spec.validate()?;
                let perms = generators
                    .iter()
                    .map(|&s| Permutation::from_images((0..table.len()).map(|v| table[s][v] as u32).collect()))
                    .collect::<Result<Vec<_>>>()?;
                SoficMap::from_permutations(spec.clone(), perms)
            }
            GroupSpec::Product { left, right } => {
                SoficMap::product(&SoficMap::quotient_map(left, n)?, &SoficMap::quotient_map(right, n)?)
            }
            _ => Err(structural("quotient_map supports the integers, finite tables and their products")),
        }
    }

    /// `(σ×τ)^{(g,h)} = σ^g × τ^h` on `V × W`, vertex `(v,w)` at `v|W| + w`.
    pub fn product(left: &SoficMap, right: &SoficMap) -> Result<Self> {
        Ok(SoficMap {
            spec: GroupSpec::product(left.spec.clone(), right.spec.clone()),
            vertices: left.vertices * right.vertices,
            action: Action::Product {
                left: Box::new(left.clone()),
                right: Box::new(right.clone()),
            },
        })
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn partition(&self) -> Option<&[u8]> {
        match &self.action {
            Action::Generators { partition, .. } => partition.as_deref(),
            Action::Product { .. } => None,
        }
    }

    /// The two factors of a product map.
    pub fn factors(&self) -> Option<(&SoficMap, &SoficMap)> {
        match &self.action {
            Action::Product { left, right } => Some((left, right)),
            Action::Generators { .. } => None,
        }
    }

    pub fn permutation(&self, generator: usize) -> Option<&Permutation> {
        match &self.action {
            Action::Generators { perms, .. } => perms.get(generator),
            Action::Product { .. } => None,
        }
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v < self.vertices {
            Ok(())
        } else {
            Err(structural(format!("vertex {v} out of range 0..{}", self.vertices)))
        }
    }

    pub fn evaluate(&self, g: &GroupElement, v: usize) -> Result<usize> {
        self.check_vertex(v)?;
        match &self.action {
            Action::Generators { perms, .. } => {
                let word = self.spec.word_of(g)?;
                Ok(apply_word(perms, &word, v))
            }
            Action::Product { left, right } => {
                let GroupElement::Pair(a, b) = g else {
                    return Err(structural("product maps evaluate pairs"));
                };
                let (vl, vr) = (v / right.vertices, v % right.vertices);
                Ok(left.evaluate(a, vl)? * right.vertices + right.evaluate(b, vr)?)
            }
        }
    }

    /// The whole map `v ↦ σ^g(v)`.
    pub fn images(&self, g: &GroupElement) -> Result<Vec<u32>> {
        match &self.action {
            Action::Generators { perms, .. } => {
                let word = self.spec.word_of(g)?;
                let mut img: Vec<u32> = (0..self.vertices as u32).collect();
                for l in word.iter().rev() {
                    let p = &perms[usize::from(l.generator)];
                    for x in img.iter_mut() {
                        *x = p.apply_letter(l.inverse, *x as usize) as u32;
                    }
                }
                Ok(img)
            }
            Action::Product { left, right } => {
                let GroupElement::Pair(a, b) = g else {
                    return Err(structural("product maps evaluate pairs"));
                };
                let li = left.images(a)?;
                let ri = right.images(b)?;
                let w = right.vertices as u32;
                let mut out = Vec::with_capacity(self.vertices);
                for &x in &li {
                    for &y in &ri {
                        out.push(x * w + y);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Images of every window element, in window order.
    pub fn window_images(&self, window: &Window) -> Result<WindowImages> {
        let images = window
            .elements()
            .iter()
            .map(|g| self.images(g))
            .collect::<Result<Vec<_>>>()?;
        Ok(WindowImages {
            vertices: self.vertices,
            images,
        })
    }

    /// Fraction of `v` with `σ^g(σ^h(v)) ≠ σ^{gh}(v)`.
    pub fn multiplicativity_defect(&self, g: &GroupElement, h: &GroupElement) -> Result<f64> {
        let gh = self.spec.multiply(g, h)?;
        let ig = self.images(g)?;
        let ih = self.images(h)?;
        let igh = self.images(&gh)?;
        let bad = (0..self.vertices)
            .filter(|&v| ig[ih[v] as usize] != igh[v])
            .count();
        Ok(bad as f64 / self.vertices as f64)
    }

    pub fn fixed_point_fraction(&self, g: &GroupElement) -> Result<f64> {
        let ig = self.images(g)?;
        let fixed = ig.iter().enumerate().filter(|&(v, &w)| v == w as usize).count();
        Ok(fixed as f64 / self.vertices as f64)
    }

    /// Fraction of `v` at which some pair in `pairs` fails multiplicativity.
    pub fn joint_multiplicativity_failure(&self, pairs: &[(GroupElement, GroupElement)]) -> Result<f64> {
        let mut bad = vec![false; self.vertices];
        for (g, h) in pairs {
            let gh = self.spec.multiply(g, h)?;
            let ig = self.images(g)?;
            let ih = self.images(h)?;
            let igh = self.images(&gh)?;
            for v in 0..self.vertices {
                if ig[ih[v] as usize] != igh[v] {
                    bad[v] = true;
                }
            }
        }
        Ok(bad.iter().filter(|&&b| b).count() as f64 / self.vertices as f64)
    }

    pub fn defect(&self, pairs: &[(GroupElement, GroupElement)], elements: &[GroupElement]) -> Result<DefectReport> {
        let multiplicativity = pairs
            .iter()
            .map(|(g, h)| {
                Ok(PairDefect {
                    g: g.clone(),
                    h: h.clone(),
                    defect: self.multiplicativity_defect(g, h)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let fixed_points = elements
            .iter()
            .filter(|g| !self.spec.is_identity(g))
            .map(|g| {
                Ok(FixedPointDefect {
                    g: g.clone(),
                    fraction: self.fixed_point_fraction(g)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DefectReport {
            multiplicativity,
            fixed_points,
        })
    }

    /// Second-largest eigenvalue of the normalized adjacency of the Schreier
    /// multigraph with edges `v ~ π_s(v)` for the listed generators,
    /// optionally restricted to the induced subgraph on `restriction`.
    ///
    /// The normalization is `D^{-1/2} A D^{-1/2}`, which is `A / 2k` on a
    /// closed regular piece. Power iteration runs on `(M + I)/2` with the
    /// top eigenvector `D^{1/2} 1` projected out, so the returned value is
    /// the signed second eigenvalue.
    pub fn schreier_spectral_gap(&self, generators: &[usize], restriction: Option<&[usize]>) -> Result<SpectralEstimate> {
        let Action::Generators { perms, .. } = &self.action else {
            return Err(structural("spectral gap needs a generator-permutation map"));
        };
        if generators.is_empty() {
            return Err(validation("generator set must be nonempty"));
        }
        if generators.iter().any(|&s| s >= perms.len()) {
            return Err(structural("generator index out of range"));
        }
        let verts: Vec<usize> = match restriction {
            Some(r) => {
                for &v in r {
                    self.check_vertex(v)?;
                }
                r.to_vec()
            }
            None => (0..self.vertices).collect(),
        };
        let mut local = vec![usize::MAX; self.vertices];
        for (i, &v) in verts.iter().enumerate() {
            local[v] = i;
        }
        let m = verts.len();
        let mut adj: Vec<Vec<u32>> = vec![Vec::with_capacity(2 * generators.len()); m];
        for (i, &v) in verts.iter().enumerate() {
            for &s in generators {
                for inv in [false, true] {
                    let w = local[perms[s].apply_letter(inv, v)];
                    if w != usize::MAX {
                        adj[i].push(w as u32);
                    }
                }
            }
        }
        Ok(second_eigenvalue(&adj, rng::derive_seed(0x5eed, rng::ns::SPECTRAL_START, m as u32)))
    }

    pub fn to_doc(&self) -> Result<SoficMapDoc> {
        let Action::Generators { perms, partition } = &self.action else {
            return Err(structural("only generator-permutation maps serialize; store product factors separately"));
        };
        let labels = self.spec.labels();
        Ok(SoficMapDoc {
            n: self.vertices,
            perms: labels
                .into_iter()
                .zip(perms)
                .map(|(l, p)| (l, p.forward.clone()))
                .collect(),
            partition: partition.clone(),
        })
    }

    pub fn from_doc(spec: &GroupSpec, doc: &SoficMapDoc) -> Result<Self> {
        let labels = spec.labels();
        if doc.perms.len() != labels.len() {
            return Err(structural("permutation labels do not match the group's generators"));
        }
        let perms = labels
            .iter()
            .map(|l| {
                let images = doc
                    .perms
                    .get(l)
                    .ok_or_else(|| structural(format!("missing permutation for '{l}'")))?;
                if images.len() != doc.n {
                    return Err(structural(format!("permutation '{l}' has wrong length")));
                }
                Permutation::from_images(images.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut map = SoficMap::from_permutations(spec.clone(), perms)?;
        if let Some(p) = &doc.partition {
            if p.len() != doc.n {
                return Err(structural("partition length differs from n"));
            }
            if let Action::Generators { partition, .. } = &mut map.action {
                *partition = Some(p.clone());
            }
        }
        Ok(map)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc()?).expect("plain data serializes"))
    }

    pub fn from_json(spec: &GroupSpec, json: &str) -> Result<Self> {
        let doc: SoficMapDoc = serde_json::from_str(json).map_err(|e| validation(e.to_string()))?;
        SoficMap::from_doc(spec, &doc)
    }
}

fn apply_word(perms: &[Permutation], word: &[Letter], mut v: usize) -> usize {
    for l in word.iter().rev() {
        v = perms[usize::from(l.generator)].apply_letter(l.inverse, v);
    }
    v
}

/// Serialized form `{"n":…, "perms":{"a":[…],…}, "partition":[…]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoficMapDoc {
    pub n: usize,
    pub perms: BTreeMap<String, Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<u8>>,
}

/// `σ^g` for every `g` of a window, as full image arrays.
#[derive(Clone, Debug)]
pub struct WindowImages {
    vertices: usize,
    images: Vec<Vec<u32>>,
}

impl WindowImages {
    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `σ^{g_i}(v)` for the `i`-th window element.
    #[inline]
    pub fn image(&self, i: usize, v: usize) -> usize {
        self.images[i][v] as usize
    }

    /// The vertices `(σ^g(v))_{g ∈ F}` read by the pullback name at `v`.
    pub fn footprint(&self, v: usize) -> Vec<usize> {
        self.images.iter().map(|img| img[v] as usize).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDefect {
    pub g: GroupElement,
    pub h: GroupElement,
    pub defect: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointDefect {
    pub g: GroupElement,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DefectReport {
    pub multiplicativity: Vec<PairDefect>,
    pub fixed_points: Vec<FixedPointDefect>,
}

impl DefectReport {
    /// Rows `g,h,defect`; fixed-point rows leave `h` empty.
    pub fn to_csv(&self, spec: &GroupSpec) -> String {
        let mut out = String::from("g,h,defect\n");
        for d in &self.multiplicativity {
            out.push_str(&format!(
                "{},{},{}\n",
                spec.format_element(&d.g),
                spec.format_element(&d.h),
                d.defect
            ));
        }
        for d in &self.fixed_points {
            out.push_str(&format!("{},,{}\n", spec.format_element(&d.g), d.fraction));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralEstimate {
    /// Signed second-largest eigenvalue of the normalized adjacency.
    pub lambda2: f64,
    /// Cheeger lower bound `(1 - λ_2) / 2` on the conductance.
    pub conductance_lower_bound: f64,
    pub iterations: usize,
    /// `‖Mx − λx‖` at the returned unit vector.
    pub residual: f64,
    pub converged: bool,
    pub vertices: usize,
}

pub const SPECTRAL_TOLERANCE: f64 = 1e-9;
pub const SPECTRAL_MAX_ITERATIONS: usize = 100_000;

fn second_eigenvalue(adj: &[Vec<u32>], seed: u64) -> SpectralEstimate {
    let m = adj.len();
    let deg: Vec<f64> = adj.iter().map(|a| a.len() as f64).collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let mut top: Vec<f64> = deg.iter().map(|d| d.sqrt()).collect();
    let top_norm = top.iter().map(|x| x * x).sum::<f64>().sqrt();
    if top_norm > 0.0 {
        top.iter_mut().for_each(|x| *x /= top_norm);
    }
    let matvec = |x: &[f64], out: &mut [f64]| {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let s: f64 = adj[i].iter().map(|&j| x[j as usize] * inv_sqrt[j as usize]).sum();
            *o = s * inv_sqrt[i];
        });
    };
    let project = |x: &mut [f64]| {
        let d: f64 = x.iter().zip(&top).map(|(a, b)| a * b).sum();
        x.iter_mut().zip(&top).for_each(|(a, b)| *a -= d * b);
    };
    let normalize = |x: &mut [f64]| -> f64 {
        let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 0.0 {
            x.iter_mut().for_each(|a| *a /= n);
        }
        n
    };
    if m < 2 {
        return SpectralEstimate {
            lambda2: 0.0,
            conductance_lower_bound: 0.5,
            iterations: 0,
            residual: 0.0,
            converged: true,
            vertices: m,
        };
    }
    let mut r = rng::stream(seed, rng::ns::SPECTRAL_START, 0);
    let mut x: Vec<f64> = (0..m).map(|_| rng::uniform_f64(&mut r) - 0.5).collect();
    project(&mut x);
    normalize(&mut x);
    let mut mx = vec![0.0; m];
    let mut lambda = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < SPECTRAL_MAX_ITERATIONS {
        iterations += 1;
        matvec(&x, &mut mx);
        let rayleigh: f64 = x.iter().zip(&mx).map(|(a, b)| a * b).sum();
        // Step with the shifted operator (M + I) / 2, whose spectrum is in [0, 1].
        let mut next: Vec<f64> = x.iter().zip(&mx).map(|(a, b)| 0.5 * (a + b)).collect();
        project(&mut next);
        let norm = normalize(&mut next);
        let delta = (rayleigh - lambda).abs();
        lambda = rayleigh;
        if norm == 0.0 {
            converged = true;
            break;
        }
        x = next;
        if delta < SPECTRAL_TOLERANCE {
            converged = true;
            break;
        }
    }
    matvec(&x, &mut mx);
    let lambda2: f64 = x.iter().zip(&mx).map(|(a, b)| a * b).sum();
    let residual = x
        .iter()
        .zip(&mx)
        .map(|(a, b)| (b - lambda2 * a).powi(2))
        .sum::<f64>()
        .sqrt();
    SpectralEstimate {
        lambda2,
        conductance_lower_bound: (1.0 - lambda2) / 2.0,
        iterations,
        residual,
        converged,
        vertices: m,
    }
}
