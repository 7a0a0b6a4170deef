//! E1 (Bernoulli entropy against Shannon) and E3 (subadditivity inclusion).

use anyhow::{Context as _, Result};
use serde_json::json;
use sofic_core::entropy::{entropy_curve, shannon_entropy, subadditivity_inclusion, CountMethod};
use sofic_core::process::Process;
use sofic_core::rng;
use sofic_core::{GroupSpec, SoficMap, Window};

use super::{format_weights, Context};
use crate::config::{BernoulliEntropy, Method, Subadditivity};
use crate::output::{cell, num, Check, Outcome, Table};

pub fn bernoulli_entropy(ctx: &Context, p: &BernoulliEntropy) -> Result<Outcome> {
    let window = Window::identity(&p.group);
    let mut table = Table::new(
        "e1_entropy",
        &["weights", "shannon", "n", "|V|", "F", "epsilon", "log_value", "normalized", "method", "std_error"],
    )
    .with_plot("|V|", "normalized", &["weights"]);
    let mut checks = vec![];
    for (i, w) in p.distributions.iter().enumerate() {
        let mu = Process::bernoulli(&p.group, w.clone())?;
        let method = match &p.method {
            Method::LetterExact => CountMethod::LetterExact,
            Method::Exhaustive => CountMethod::Exhaustive { budget: u128::from(ctx.budget) },
            Method::Mc { samples } => CountMethod::Mc {
                samples: *samples,
                seed: ctx.seed_for(i),
            },
        };
        let h = shannon_entropy(w)?;
        let curve = entropy_curve(&p.family, &mu, &window, p.epsilon, &p.sizes, &method)?;
        let label = format_weights(w);
        for r in &curve.rows {
            table.push(vec![
                cell(&label),
                num(h),
                cell(r.n),
                cell(r.vertices),
                cell(&r.window),
                num(r.epsilon),
                num(r.log_value),
                num(r.normalized),
                cell(&r.method),
                r.std_error.map(num).unwrap_or_default(),
            ]);
        }
        let last = curve.last().context("no sizes")?;
        checks.push(Check::near(format!("normalized entropy of ({label}) vs Shannon"), last.normalized, h, p.tolerance));
    }
    Ok(Outcome {
        tables: vec![table],
        checks,
        details: json!({}),
    })
}

fn random_process(r: &mut rng::Rng, group: &GroupSpec) -> Result<(String, Process)> {
    let draw = |r: &mut rng::Rng| (100.0 * (0.1 + 0.5 * rng::uniform_f64(r))).round() / 100.0;
    let a = draw(r);
    if rng::uniform_below(r, 2) == 0 {
        Ok((format!("bernoulli({a:.2}/{:.2})", 1.0 - a), Process::bernoulli(group, vec![a, 1.0 - a])?))
    } else {
        // Two-state chains are reversible for their stationary vector.
        let b = draw(r);
        let label = format!("tree_markov(flip0={a:.2},flip1={b:.2})");
        let stationary = vec![b / (a + b), a / (a + b)];
        Ok((label, Process::tree_markov(group, vec![vec![1.0 - a, a], vec![b, 1.0 - b]], stationary)?))
    }
}

pub fn subadditivity(ctx: &Context, p: &Subadditivity) -> Result<Outcome> {
    let f2 = GroupSpec::free(2);
    let window = f2.ball(p.radius);
    let mut table = Table::new(
        "e3_subadditivity",
        &["pair", "mu", "nu", "|V|", "F", "epsilon", "pair_models", "left_models_2eps", "right_models_2eps", "violations", "count_inequality"],
    );
    let mut violations = 0;
    let mut failed_inequalities = 0;
    for i in 0..p.pairs {
        let mut r = ctx.stream(i);
        let (ml, mu) = random_process(&mut r, &f2)?;
        let (nl, nu) = random_process(&mut r, &f2)?;
        let sigma = SoficMap::random_uniform(&f2, p.vertices, ctx.seed_for(i))?;
        let rep = subadditivity_inclusion(&sigma, &mu, &nu, &window, p.epsilon, u128::from(ctx.budget))?;
        violations += rep.violations;
        failed_inequalities += usize::from(!rep.log_inequality_holds());
        table.push(vec![
            cell(i),
            cell(ml),
            cell(nl),
            cell(p.vertices),
            cell(window.describe(&f2)),
            num(p.epsilon),
            cell(rep.pair_models),
            cell(rep.left_models),
            cell(rep.right_models),
            cell(rep.violations),
            cell(rep.log_inequality_holds()),
        ]);
    }
    Ok(Outcome {
        tables: vec![table],
        checks: vec![
            Check::equals("pair models projecting outside the 2ε product", violations as f64, 0.0),
            Check::equals("pairs violating the count inequality", failed_inequalities as f64, 0.0),
        ],
        details: json!({}),
    })
}
