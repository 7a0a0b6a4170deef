//! E2: covering and packing inequalities on random small instances.
//!
//! Covers use open balls throughout; packings use `≥ δ` separation.

use anyhow::{Context as _, Result};
use serde_json::json;
use sofic_core::metric::{cov_delta, cov_eps_delta, pack_delta, pack_eps_delta, Ball, Metric, ModelMeasure};
use sofic_core::model::Configuration;
use sofic_core::rng;

use super::Context;
use crate::config::CoverPack;
use crate::output::{cell, num, Check, Outcome, Table};

const FAMILIES: [&str; 4] = ["set_chain", "measure_chain", "coupling", "product"];

fn distinct_configs(r: &mut rng::Rng, vertices: usize, count: usize) -> Vec<Configuration> {
    let mut all: Vec<u64> = (0..1u64 << vertices).collect();
    rng::fisher_yates(r, &mut all);
    all[..count].iter().map(|&i| Configuration::from_index(i, vertices, 2)).collect()
}

fn random_weights(r: &mut rng::Rng, count: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..count).map(|_| 0.05 + rng::uniform_f64(r)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn random_measure(r: &mut rng::Rng, vertices: usize, max_atoms: usize) -> Result<ModelMeasure> {
    let m = 1 + rng::uniform_below(r, max_atoms.min(1 << vertices) as u64) as usize;
    let support = distinct_configs(r, vertices, m);
    let weights = random_weights(r, m);
    Ok(ModelMeasure::explicit(2, support.into_iter().zip(weights).collect())?)
}

fn exact(b: &sofic_core::metric::Bounds) -> Result<usize> {
    b.exact.context("instance exceeds the exact solver limits")
}

struct Row {
    vertices: usize,
    epsilon: Option<f64>,
    delta: f64,
    lhs: usize,
    middle: Option<usize>,
    rhs: usize,
    holds: bool,
    greedy_ok: bool,
}

fn set_chain(r: &mut rng::Rng, p: &CoverPack) -> Result<Row> {
    let v = 2 + rng::uniform_below(r, p.max_vertices as u64 - 1) as usize;
    let m = 1 + rng::uniform_below(r, p.max_points.min(1 << v) as u64) as usize;
    let points = distinct_configs(r, v, m);
    let delta = (1 + rng::uniform_below(r, v as u64)) as f64 / v as f64;
    let half = cov_delta(&points, delta / 2.0, Ball::Open)?;
    let pack = pack_delta(&points, delta)?;
    let cover = cov_delta(&points, delta, Ball::Open)?;
    let (h, k, c) = (exact(&half)?, exact(&pack)?, exact(&cover)?);
    Ok(Row {
        vertices: v,
        epsilon: None,
        delta,
        lhs: h,
        middle: Some(k),
        rhs: c,
        holds: h >= k && k >= c,
        greedy_ok: half.greedy >= h && cover.greedy >= c && pack.greedy <= k,
    })
}

fn measure_chain(r: &mut rng::Rng, p: &CoverPack) -> Result<Row> {
    let v = 2 + rng::uniform_below(r, p.max_vertices as u64 - 1) as usize;
    let nu = random_measure(r, v, p.max_atoms)?;
    let epsilon = 0.05 + 0.6 * rng::uniform_f64(r);
    let delta = (1 + rng::uniform_below(r, v as u64)) as f64 / v as f64;
    let half = cov_eps_delta(&nu, epsilon, delta / 2.0, Metric::Hamming, Ball::Open)?;
    let pack = pack_eps_delta(&nu, epsilon, delta, Metric::Hamming)?.context("packing beyond exact limits")?;
    let cover = cov_eps_delta(&nu, epsilon, delta, Metric::Hamming, Ball::Open)?;
    let (h, c) = (exact(&half)?, exact(&cover)?);
    Ok(Row {
        vertices: v,
        epsilon: Some(epsilon),
        delta,
        lhs: h,
        middle: Some(pack),
        rhs: c,
        holds: h >= pack && pack >= c,
        greedy_ok: half.greedy >= h && cover.greedy >= c,
    })
}

/// `cov_{ε,δ}(λ) ≤ cov_{ε/2,δ}(μ) cov_{ε/2,δ}(ν)` for a random coupling `λ`.
fn coupling(r: &mut rng::Rng, p: &CoverPack) -> Result<Row> {
    let v = 2 + rng::uniform_below(r, p.max_vertices.min(4) as u64 - 1) as usize;
    let side = (p.max_atoms as f64).sqrt().floor().max(1.0) as u64;
    let a = 1 + rng::uniform_below(r, side.min(1 << v)) as usize;
    let b = 1 + rng::uniform_below(r, side.min(1 << v)) as usize;
    let xs = distinct_configs(r, v, a);
    let ys = distinct_configs(r, v, b);
    let mut joint: Vec<f64> = (0..a * b).map(|_| if rng::uniform_below(r, 3) == 0 { 0.0 } else { 0.05 + rng::uniform_f64(r) }).collect();
    if joint.iter().all(|&w| w == 0.0) {
        joint[0] = 1.0;
    }
    let total: f64 = joint.iter().sum();
    joint.iter_mut().for_each(|w| *w /= total);
    let mut pairs = vec![];
    let mut left = vec![0.0; a];
    let mut right = vec![0.0; b];
    for i in 0..a {
        for j in 0..b {
            let w = joint[i * b + j];
            left[i] += w;
            right[j] += w;
            if w > 0.0 {
                pairs.push((Configuration::pair(&xs[i], &ys[j], 2)?, w));
            }
        }
    }
    let lambda = ModelMeasure::explicit(4, pairs)?;
    let mu = ModelMeasure::explicit(2, xs.into_iter().zip(left).collect())?;
    let nu = ModelMeasure::explicit(2, ys.into_iter().zip(right).collect())?;
    let epsilon = 0.05 + 0.85 * rng::uniform_f64(r);
    let delta = (1 + rng::uniform_below(r, 2 * v as u64)) as f64 / (2 * v) as f64;
    let joint_cov = exact(&cov_eps_delta(&lambda, epsilon, delta, Metric::PairAverage { right: 2 }, Ball::Open)?)?;
    let cm = exact(&cov_eps_delta(&mu, epsilon / 2.0, delta, Metric::Hamming, Ball::Open)?)?;
    let cn = exact(&cov_eps_delta(&nu, epsilon / 2.0, delta, Metric::Hamming, Ball::Open)?)?;
    Ok(Row {
        vertices: v,
        epsilon: Some(epsilon),
        delta,
        lhs: joint_cov,
        middle: None,
        rhs: cm * cn,
        holds: joint_cov <= cm * cn,
        greedy_ok: true,
    })
}

/// `cov_{ε,δ/4}(μ × ν) ≥ cov_{√ε,δ}(μ) cov_{√ε,δ}(ν)`.
fn product(r: &mut rng::Rng, p: &CoverPack) -> Result<Row> {
    let v = 2 + rng::uniform_below(r, p.max_vertices.min(4) as u64 - 1) as usize;
    let side = ((p.max_atoms as f64).sqrt().floor() as usize).max(1);
    let mu = random_measure(r, v, side)?;
    let nu = random_measure(r, v, side)?;
    let epsilon = 0.01 + 0.8 * rng::uniform_f64(r);
    let delta = (1 + rng::uniform_below(r, v as u64)) as f64 / v as f64;
    let prod = mu.pair_with(&nu)?;
    let joint_cov = exact(&cov_eps_delta(&prod, epsilon, delta / 4.0, Metric::PairAverage { right: 2 }, Ball::Open)?)?;
    let root = epsilon.sqrt();
    let cm = exact(&cov_eps_delta(&mu, root, delta, Metric::Hamming, Ball::Open)?)?;
    let cn = exact(&cov_eps_delta(&nu, root, delta, Metric::Hamming, Ball::Open)?)?;
    Ok(Row {
        vertices: v,
        epsilon: Some(epsilon),
        delta,
        lhs: joint_cov,
        middle: None,
        rhs: cm * cn,
        holds: joint_cov >= cm * cn,
        greedy_ok: true,
    })
}

pub fn cover_pack(ctx: &Context, p: &CoverPack) -> Result<Outcome> {
    let mut table = Table::new(
        "e2_cover_pack",
        &["instance", "family", "|V|", "epsilon", "delta", "lhs", "middle", "rhs", "holds", "greedy_consistent"],
    );
    let mut checks = vec![];
    for (f, family) in FAMILIES.iter().enumerate() {
        let mut failures = 0;
        let mut greedy_failures = 0;
        for i in 0..p.instances {
            let mut r = ctx.stream(f * p.instances + i);
            let row = match f {
                0 => set_chain(&mut r, p)?,
                1 => measure_chain(&mut r, p)?,
                2 => coupling(&mut r, p)?,
                _ => product(&mut r, p)?,
            };
            failures += usize::from(!row.holds);
            greedy_failures += usize::from(!row.greedy_ok);
            table.push(vec![
                cell(i),
                cell(family),
                cell(row.vertices),
                row.epsilon.map(num).unwrap_or_default(),
                num(row.delta),
                cell(row.lhs),
                row.middle.map(cell).unwrap_or_default(),
                cell(row.rhs),
                cell(row.holds),
                cell(row.greedy_ok),
            ]);
        }
        checks.push(Check::equals(format!("{family} violations"), failures as f64, 0.0));
        checks.push(Check::equals(format!("{family} greedy inconsistencies"), greedy_failures as f64, 0.0));
    }
    Ok(Outcome {
        tables: vec![table],
        checks,
        details: json!({ "ball": "open", "separation": ">= delta" }),
    })
}
