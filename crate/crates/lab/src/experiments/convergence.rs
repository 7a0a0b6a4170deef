//! E4 (Bernoulli quenched and doubly-quenched convergence), E8 (quenched
//! without doubly-quenched on cycles) and E9 (model measures from samples
//! and their averages over column rotations).

use anyhow::{ensure, Result};
use serde_json::json;
use sofic_core::convergence::{
    dispersion, dq_defect, h_average, lw_defect, models_to_measure, pair_vertex_stat, quenched_defect, sample_configurations,
};
use sofic_core::entropy::hq_lower_curve;
use sofic_core::metric::ModelMeasure;
use sofic_core::model::Configuration;
use sofic_core::process::{tv_slices, Process};
use sofic_core::{GroupElement, GroupSpec, SoficMap, Window};

use super::Context;
use crate::config::{BernoulliConvergence, Pipeline, QuenchedNotDq};
use crate::output::{cell, num, Check, Outcome, Table};

/// `P(TV(K/n, p) ≥ ε)` for `K ∼ Bin(n, p)`, with the same tie-exact TV
/// formula the good-model test uses.
pub fn binomial_tail_outside(n: usize, p: f64, epsilon: f64) -> f64 {
    let nf = n as f64;
    let mut ln_fact = vec![0.0; n + 1];
    for i in 1..=n {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    (0..=n)
        .filter(|&k| {
            let tv = ((k as f64 - nf * p).abs() + ((n - k) as f64 - nf * (1.0 - p)).abs()) / (2.0 * nf);
            tv >= epsilon
        })
        .map(|k| (ln_fact[n] - ln_fact[k] - ln_fact[n - k] + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp())
        .sum()
}

pub fn bernoulli_convergence(ctx: &Context, p: &BernoulliConvergence) -> Result<Outcome> {
    let f2 = GroupSpec::free(2);
    let mu = Process::bernoulli(&f2, p.weights.clone())?;
    let mut table = Table::new(
        "e4_convergence",
        &[
            "n", "|V|", "F_radius", "epsilon", "seed", "lw_defect", "q_defect", "q_se", "dq_defect", "dq_se", "dispersion_clusters", "q_oracle",
        ],
    )
    .with_plot("|V|", "q_defect", &["F_radius", "seed"]);
    let largest = *p.sizes.iter().max().expect("validated");
    let widest = *p.radii.iter().max().expect("validated");
    let mut oracle_misses = 0;
    let mut worst_q: f64 = 0.0;
    let mut worst_dq: f64 = 0.0;
    for &n in &p.sizes {
        let nu = ModelMeasure::product(p.weights.clone(), n)?;
        for s in 0..p.seeds {
            let seed = ctx.seed_for(s);
            let sigma = SoficMap::random_uniform(&f2, n, seed)?;
            for &r in &p.radii {
                let w = f2.ball(r);
                let lw = lw_defect(&sigma, &nu, &mu, &w, p.epsilon, p.samples, seed)?;
                let q = quenched_defect(&sigma, &nu, &mu, &w, p.epsilon, p.samples, seed)?;
                let dq = dq_defect(&sigma, &nu, &mu, &w, p.epsilon, p.samples, seed)?;
                let target = mu.marginal_on(w.elements())?;
                let disp = dispersion(&sigma, &nu, &w, Some(&target), sofic_core::convergence::DEFAULT_CLUSTER_THRESHOLD, p.dispersion_samples, seed)?;
                let oracle = (r == 0 && p.weights.len() == 2).then(|| binomial_tail_outside(n, p.weights[0], p.epsilon));
                if let Some(o) = oracle {
                    // Four standard errors, floored at the 1/N resolution.
                    if (q.value - o).abs() > 4.0 * q.std_error.max(1.0 / p.samples as f64) {
                        oracle_misses += 1;
                    }
                }
                if n == largest && r == widest {
                    worst_q = worst_q.max(q.value);
                    worst_dq = worst_dq.max(dq.value);
                }
                table.push(vec![
                    cell(n),
                    cell(n),
                    cell(r),
                    num(p.epsilon),
                    cell(s),
                    num(lw.value),
                    num(q.value),
                    num(q.std_error),
                    num(dq.value),
                    num(dq.std_error),
                    cell(disp.clusters.len()),
                    oracle.map(num).unwrap_or_default(),
                ]);
            }
        }
    }
    Ok(Outcome {
        tables: vec![table],
        checks: vec![
            Check::equals("radius-0 quenched defects off the binomial oracle by > 4 SE", oracle_misses as f64, 0.0),
            Check::below(format!("max quenched defect at |V| = {largest}, radius {widest}"), worst_q, p.q_defect_max),
            Check::below(format!("max doubly-quenched defect at |V| = {largest}, radius {widest}"), worst_dq, p.dq_defect_max),
        ],
        details: json!({}),
    })
}

fn alternating(len: usize, phase: u8) -> Configuration {
    Configuration((0..len).map(|i| (i as u8 + phase) % 2).collect())
}

pub fn quenched_not_dq(ctx: &Context, p: &QuenchedNotDq) -> Result<Outcome> {
    let z = GroupSpec::integers();
    let mu = Process::periodic_orbit(&[0, 1], 2)?;
    let square = Process::product(&mu, &mu)?;
    let elems: Vec<GroupElement> = p.window.iter().map(|s| z.parse_element(s)).collect::<sofic_core::Result<_>>()?;
    let w = Window::new(&z, elems)?;
    let target = square.marginal_on(w.elements())?;
    let mut defects = Table::new("e8_defects", &["n", "|V|", "epsilon", "lw_defect", "q_defect", "dq_defect"]);
    let mut disp_table = Table::new(
        "e8_dispersion",
        &[
            "n",
            "|V|",
            "clusters",
            "mass_0",
            "mass_1",
            "centroid_tv",
            "centroid_target_tv_0",
            "centroid_target_tv_1",
            "barycentre_tv",
            "pair_stat",
            "hq_lower_normalized",
        ],
    )
    .with_plot("|V|", "hq_lower_normalized", &[]);
    let mut worst_q: f64 = 0.0;
    let mut two_clusters = 0;
    let mut worst_mass: f64 = 0.0;
    let mut worst_target: f64 = 0.0;
    let mut worst_bary: f64 = 0.0;
    let mut min_pair = f64::INFINITY;
    let mut centroid_tvs = vec![];
    for (i, &n) in p.sizes.iter().enumerate() {
        let len = 2 * n;
        let sigma = SoficMap::quotient_map(&z, len)?;
        let nu = ModelMeasure::uniform(2, &[alternating(len, 0), alternating(len, 1)])?;
        for &eps in &p.epsilons {
            let lw = lw_defect(&sigma, &nu, &mu, &w, eps, 0, 0)?;
            let q = quenched_defect(&sigma, &nu, &mu, &w, eps, 0, 0)?;
            let dq = dq_defect(&sigma, &nu, &mu, &w, eps, 0, 0)?;
            worst_q = worst_q.max(q.value);
            defects.push(vec![cell(n), cell(len), num(eps), num(lw.value), num(q.value), num(dq.value)]);
        }
        let d = dispersion(&sigma, &nu.square()?, &w, Some(&target), p.cluster_threshold, 16, 0)?;
        let stat = pair_vertex_stat(&sigma, &nu, &mu, &w, p.pair_epsilon, p.vertex_pairs, 0, ctx.seed_for(i))?;
        let hq = hq_lower_curve(&[(n, nu.clone())], 0.1)?;
        let k = d.clusters.len();
        two_clusters += usize::from(k == 2);
        for c in &d.clusters {
            worst_mass = worst_mass.max((c.mass - 0.5).abs());
            worst_target = worst_target.max((tv_slices(&c.centroid, target.probs()) - 0.5).abs());
        }
        let bary = d.barycentre_tv.unwrap_or(f64::INFINITY);
        worst_bary = worst_bary.max(bary);
        min_pair = min_pair.min(stat.value);
        let ctv = if k >= 2 { d.centroid_tv(0, 1) } else { f64::NAN };
        centroid_tvs.push(ctv);
        let target_tv = |j: usize| d.clusters.get(j).map(|c| num(tv_slices(&c.centroid, target.probs()))).unwrap_or_default();
        disp_table.push(vec![
            cell(n),
            cell(len),
            cell(k),
            d.clusters.first().map(|c| num(c.mass)).unwrap_or_default(),
            d.clusters.get(1).map(|c| num(c.mass)).unwrap_or_default(),
            num(ctv),
            target_tv(0),
            target_tv(1),
            num(bary),
            num(stat.value),
            num(hq.rows[0].normalized),
        ]);
    }
    Ok(Outcome {
        tables: vec![defects, disp_table],
        checks: vec![
            Check::equals("max quenched defect", worst_q, 0.0),
            Check::equals("sizes with exactly two dq clusters", two_clusters as f64, p.sizes.len() as f64),
            Check::at_most("max |cluster mass - 1/2|", worst_mass, 1e-12),
            Check::at_most("max |TV(cluster centroid, (μ×μ)_F) - 1/2|", worst_target, 1e-12),
            Check::at_most("max TV(barycentre, (μ×μ)_F)", worst_bary, p.barycentre_tolerance),
            Check::at_least("min pair-vertex statistic", min_pair, p.min_pair_stat),
        ],
        details: json!({ "centroid_tv": centroid_tvs }),
    })
}

pub fn pipeline(ctx: &Context, p: &Pipeline) -> Result<Outcome> {
    let f2 = GroupSpec::free(2);
    let fair = vec![0.5, 0.5];
    let mu = Process::bernoulli(&f2, fair.clone())?;
    let w = f2.ball(p.radius);
    let mut samples = Table::new(
        "e9_sample_measures",
        &["seed", "|V|", "k", "F_radius", "epsilon", "lw_defect", "q_defect", "dq_defect"],
    );
    let mut worst_lw: f64 = 0.0;
    let mut worst_dq: f64 = 0.0;
    for s in 0..p.seeds {
        let seed = ctx.seed_for(s);
        let sigma = SoficMap::random_uniform(&f2, p.vertices, seed)?;
        let configs = sample_configurations(&ModelMeasure::product(fair.clone(), p.vertices)?, p.k, seed);
        let rho = models_to_measure(&configs, 2)?;
        let lw = lw_defect(&sigma, &rho, &mu, &w, p.epsilon, 0, seed)?;
        let q = quenched_defect(&sigma, &rho, &mu, &w, p.epsilon, 0, seed)?;
        let dq = dq_defect(&sigma, &rho, &mu, &w, p.epsilon, 0, seed)?;
        worst_lw = worst_lw.max(lw.value);
        worst_dq = worst_dq.max(dq.value);
        samples.push(vec![
            cell(s),
            cell(p.vertices),
            cell(p.k),
            cell(p.radius),
            num(p.epsilon),
            num(lw.value),
            num(q.value),
            num(dq.value),
        ]);
    }

    let a = &p.average;
    let z = GroupSpec::integers();
    let base = Process::bernoulli(&f2, fair.clone())?;
    let coinduced = Process::coinduced(&base, &z)?;
    let e: Vec<GroupElement> = (0..a.elements).map(|j| z.parse_element(&"a".repeat(j))).collect::<sofic_core::Result<_>>()?;
    let mut averaging = Table::new(
        "e9_h_average",
        &["seed", "measure", "|V|", "|E|", "atoms", "F_radius", "epsilon", "lw_defect", "q_defect", "dq_defect"],
    );
    let mut worst_shift: [f64; 3] = [0.0; 3];
    for s in 0..p.seeds {
        let seed = ctx.seed_for(s);
        let st = SoficMap::product(&SoficMap::random_uniform(&f2, a.base_vertices, seed)?, &SoficMap::quotient_map(&z, a.cycle)?)?;
        ensure!(st.spec() == coinduced.group(), "product map and co-induced process disagree");
        let ball = st.spec().ball(a.radius);
        let configs = sample_configurations(&ModelMeasure::product(fair.clone(), st.vertices())?, a.k, seed);
        let theta = models_to_measure(&configs, 2)?;
        let averaged = h_average(&st, &theta, &e)?;
        let mut values = vec![];
        for (name, m) in [("theta", &theta), ("averaged", &averaged)] {
            let lw = lw_defect(&st, m, &coinduced, &ball, a.epsilon, a.samples, seed)?;
            let q = quenched_defect(&st, m, &coinduced, &ball, a.epsilon, a.samples, seed)?;
            let dq = dq_defect(&st, m, &coinduced, &ball, a.epsilon, a.samples, seed)?;
            values.push([lw.value, q.value, dq.value]);
            averaging.push(vec![
                cell(s),
                cell(name),
                cell(st.vertices()),
                cell(a.elements),
                cell(m.atoms().map(|(x, _)| x.len()).unwrap_or(0)),
                cell(a.radius),
                num(a.epsilon),
                num(lw.value),
                num(q.value),
                num(dq.value),
            ]);
        }
        for j in 0..3 {
            worst_shift[j] = worst_shift[j].max((values[0][j] - values[1][j]).abs());
        }
    }
    Ok(Outcome {
        tables: vec![samples, averaging],
        checks: vec![
            Check::below("max lw defect of the sample measure", worst_lw, p.lw_defect_max),
            Check::below("max dq defect of the sample measure", worst_dq, p.dq_defect_max),
            Check::at_most("max |Δ lw defect| under averaging", worst_shift[0], a.tolerance),
            Check::at_most("max |Δ q defect| under averaging", worst_shift[1], a.tolerance),
            Check::at_most("max |Δ dq defect| under averaging", worst_shift[2], a.tolerance),
        ],
        details: json!({}),
    })
}
