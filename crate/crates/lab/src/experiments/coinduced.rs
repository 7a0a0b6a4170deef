//! E5–E7: the co-induced process over the block-structured approximation
//! of `F_2 * F_2`, where `1_W` is the planted good model.

use anyhow::{ensure, Result};
use rayon::prelude::*;
use serde_json::json;
use sofic_core::metric::hamming_distance;
use sofic_core::model::{enumerate_good_models, is_good_model, Configuration, GoodModelTest};
use sofic_core::process::Process;
use sofic_core::{SoficMap, Window};

use super::Context;
use crate::config::{CoinducedModels, CoinducedPairs, Expansion};
use crate::output::{cell, num, Check, Outcome, Table};

/// `1_W` on `V = U ∪ W`, `W` being the last quarter.
pub fn indicator_of_w(sigma: &SoficMap) -> Configuration {
    let partition = sigma.partition().expect("block-structured map");
    Configuration(partition.to_vec())
}

fn setup(n: usize, seed: u64, mu0: &[f64]) -> Result<(SoficMap, Process)> {
    let sigma = SoficMap::partitioned_random(n, seed)?;
    let mu = Process::coset_iid(sigma.spec(), mu0.to_vec(), 0)?;
    Ok((sigma, mu))
}

/// Brute-force choice of the radius-1 `ε` for each seed: the smallest
/// multiple of `step` strictly above `min_x TV(x)`, so that the good-model
/// set is the nonempty set of near-optimal configurations. `step` is the
/// reciprocal of an integer.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub epsilon: Vec<f64>,
    pub min_tv: Vec<f64>,
    pub tv_of_indicator: Vec<f64>,
}

pub fn calibrate_ball_epsilon(ctx: &Context, n: usize, seeds: usize, mu0: &[f64], step: f64) -> Result<Calibration> {
    let mut out = Calibration {
        epsilon: vec![],
        min_tv: vec![],
        tv_of_indicator: vec![],
    };
    for i in 0..seeds {
        let (sigma, mu) = setup(n, ctx.seed_for(i), mu0)?;
        let test = GoodModelTest::new(&sigma, &mu, &sigma.spec().ball(1), 1.0)?;
        let v = sigma.vertices();
        let total = (mu.alphabet_size() as u128).pow(v as u32);
        ensure!(total <= u128::from(ctx.budget), "calibration scans {total} configurations, budget is {}", ctx.budget);
        let q = mu.alphabet_size();
        let min = (0..total as u64)
            .into_par_iter()
            .map_init(|| test.scratch(), |scratch, k| test.tv_with(&Configuration::from_index(k, v, q).0, scratch))
            .reduce(|| f64::INFINITY, f64::min);
        // Grid points are `k / scale` so they print as short decimals.
        let scale = (1.0 / step).round();
        let mut k = (min * scale).ceil();
        if k / scale <= min {
            k += 1.0;
        }
        out.epsilon.push(k / scale);
        out.min_tv.push(min);
        out.tv_of_indicator.push(test.tv(&indicator_of_w(&sigma)));
    }
    Ok(out)
}

pub fn coinduced_models(ctx: &Context, p: &CoinducedModels) -> Result<Outcome> {
    let mut table = Table::new(
        "e5_good_models",
        &["seed", "|V|", "indicator_good_F_e", "ball_epsilon", "indicator_tv_ball", "good_models", "indicator_in_models", "max_hamming", "mean_hamming", "within_radius"],
    );
    let mut letter_good = 0;
    let mut passing = 0;
    let mut contained = 0;
    for i in 0..p.seeds {
        let (sigma, mu) = setup(p.n, ctx.seed_for(i), &p.mu0)?;
        let g = sigma.spec().clone();
        let x = indicator_of_w(&sigma);
        let on_e = is_good_model(&sigma, &x, &mu, &Window::identity(&g), p.letter_epsilon)?;
        let ball = g.ball(1);
        let eps = p.ball_epsilon[i];
        let tv = GoodModelTest::new(&sigma, &mu, &ball, eps)?.tv(&x);
        let models = enumerate_good_models(&sigma, &mu, &ball, eps, u128::from(ctx.budget))?;
        let dists: Vec<f64> = models.iter().map(|y| hamming_distance(y, &x)).collect::<sofic_core::Result<_>>()?;
        let max = dists.iter().copied().fold(0.0, f64::max);
        let mean = if dists.is_empty() { 0.0 } else { dists.iter().sum::<f64>() / dists.len() as f64 };
        let has_x = models.contains(&x);
        let ok = max <= p.hamming_radius;
        letter_good += usize::from(on_e);
        passing += usize::from(ok);
        contained += usize::from(has_x);
        table.push(vec![
            cell(i),
            cell(sigma.vertices()),
            cell(on_e),
            num(eps),
            num(tv),
            cell(models.len()),
            cell(has_x),
            num(max),
            num(mean),
            cell(ok),
        ]);
    }
    Ok(Outcome {
        tables: vec![table],
        checks: vec![
            Check::equals("seeds where 1_W is an ({e}, ε)-good model", letter_good as f64, p.seeds as f64),
            Check::at_least("seeds with every good model near 1_W", passing as f64, p.min_passing_seeds as f64),
        ],
        details: json!({ "seeds_containing_indicator": contained }),
    })
}

pub fn coinduced_pairs(ctx: &Context, p: &CoinducedPairs) -> Result<Outcome> {
    let mut table = Table::new(
        "e6_pairs",
        &["seed", "|V|", "model_epsilon", "good_models", "pairs", "good_pairs", "min_pair_tv", "max_freq_10", "target_freq_10", "log_pair_count"],
    );
    let target10 = p.mu0[1] * p.mu0[0];
    let mut total_good = 0;
    let mut total_pairs = 0;
    for i in 0..p.seeds {
        let (sigma, mu) = setup(p.n, ctx.seed_for(i), &p.mu0)?;
        let g = sigma.spec().clone();
        let models = enumerate_good_models(&sigma, &mu, &g.ball(1), p.model_epsilon[i], u128::from(ctx.budget))?;
        let square = Process::product(&mu, &mu)?;
        let test = GoodModelTest::new(&sigma, &square, &Window::identity(&g), p.pair_epsilon)?;
        let q = mu.alphabet_size();
        let n = sigma.vertices() as f64;
        let per_row: Vec<(usize, f64, f64)> = models
            .par_iter()
            .map(|y| {
                let mut good = 0;
                let mut min_tv = f64::INFINITY;
                let mut max10: f64 = 0.0;
                for z in &models {
                    let pair = Configuration::pair(y, z, q).expect("same length");
                    let tv = test.tv(&pair);
                    good += usize::from(tv < p.pair_epsilon);
                    min_tv = min_tv.min(tv);
                    let f10 = y.0.iter().zip(&z.0).filter(|&(&a, &b)| a == 1 && b == 0).count() as f64 / n;
                    max10 = max10.max(f10);
                }
                (good, min_tv, max10)
            })
            .collect();
        let good: usize = per_row.iter().map(|r| r.0).sum();
        let min_tv = per_row.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let max10 = per_row.iter().map(|r| r.2).fold(0.0, f64::max);
        total_good += good;
        total_pairs += models.len() * models.len();
        table.push(vec![
            cell(i),
            cell(sigma.vertices()),
            num(p.model_epsilon[i]),
            cell(models.len()),
            cell(models.len() * models.len()),
            cell(good),
            if models.is_empty() { String::new() } else { num(min_tv) },
            num(max10),
            num(target10),
            num(if good == 0 { f64::NEG_INFINITY } else { (good as f64).ln() }),
        ]);
    }
    Ok(Outcome {
        tables: vec![table],
        checks: vec![
            Check::equals("good pairs for ν × ν among enumerated good models", total_good as f64, 0.0),
            Check::at_least("pairs examined", total_pairs as f64, 1.0),
        ],
        details: json!({}),
    })
}

pub fn expansion(ctx: &Context, p: &Expansion) -> Result<Outcome> {
    let mut table = Table::new(
        "e7_expansion",
        &["n", "seed", "block", "vertices", "lambda2", "conductance_lower_bound", "iterations", "converged"],
    );
    let mut checks = vec![];
    for &n in &p.sizes {
        let mut passing = 0;
        for i in 0..p.seeds {
            let sigma = SoficMap::partitioned_random(n, ctx.seed_for(i))?;
            let labels = sigma.partition().expect("block-structured map").to_vec();
            let mut ok = true;
            for (block, name) in [(0u8, "U"), (1u8, "W")] {
                let verts: Vec<usize> = (0..labels.len()).filter(|&v| labels[v] == block).collect();
                let est = sigma.schreier_spectral_gap(&[0, 1], Some(&verts))?;
                ok &= est.lambda2 < p.lambda2_max;
                table.push(vec![
                    cell(n),
                    cell(i),
                    cell(name),
                    cell(est.vertices),
                    num(est.lambda2),
                    num(est.conductance_lower_bound),
                    cell(est.iterations),
                    cell(est.converged),
                ]);
            }
            passing += usize::from(ok);
        }
        checks.push(Check::at_least(format!("seeds with λ2 < {} on both blocks (n = {n})", p.lambda2_max), passing as f64, p.min_passing_seeds as f64));
    }
    Ok(Outcome {
        tables: vec![table],
        checks,
        details: json!({}),
    })
}
