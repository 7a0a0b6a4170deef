//! Entropy curves: normalized log-counts of good models, normalized log
//! covering numbers of model measures, and their power-stabilized forms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{structural, validation, Result};
use crate::group::{GroupSpec, Window};
use crate::metric::{cov_eps, ModelMeasure};
use crate::model::{count_with, count_with_mc, letter_frequency_count, log_json, Configuration, GoodModelTest, LogCount};
use crate::process::{check_distribution, Process};
use crate::sofic::SoficMap;

/// `-Σ p ln p` in nats, with `0 ln 0 = 0`.
pub fn shannon_entropy(weights: &[f64]) -> Result<f64> {
    check_distribution(weights)?;
    Ok(-weights.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
}

/// A family `n ↦ σ_n` of sofic maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ApproxFamily {
    /// Independent uniform permutations on `n` vertices.
    RandomUniform { seed: u64 },
    /// The block-structured `F_2 * F_2` map on `4n` vertices.
    Partitioned { seed: u64 },
    /// Exact finite quotients (`n`-cycles for the integers).
    Quotient,
}

impl ApproxFamily {
    pub fn build(&self, spec: &GroupSpec, n: usize) -> Result<SoficMap> {
        match self {
            ApproxFamily::RandomUniform { seed } => SoficMap::random_uniform(spec, n, *seed),
            ApproxFamily::Partitioned { seed } => {
                let sigma = SoficMap::partitioned_random(n, *seed)?;
                if sigma.spec() != spec {
                    return Err(structural("the partitioned family lives on F_2 * F_2"));
                }
                Ok(sigma)
            }
            ApproxFamily::Quotient => SoficMap::quotient_map(spec, n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum CountMethod {
    Exhaustive { budget: u128 },
    Mc { samples: usize, seed: u64 },
    /// Multinomial sums over letter types; needs `F = {e}`.
    LetterExact,
}

impl CountMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            CountMethod::Exhaustive { .. } => "exhaustive",
            CountMethod::Mc { .. } => "mc",
            CountMethod::LetterExact => "letter_exact",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyRow {
    pub n: usize,
    pub vertices: usize,
    pub window: String,
    pub epsilon: f64,
    /// Log-count or log covering number in nats; `-inf` for an empty set.
    pub log_value: f64,
    /// `log_value / vertices`.
    pub normalized: f64,
    pub method: String,
    pub std_error: Option<f64>,
    pub exact_count: Option<u128>,
}

impl EntropyRow {
    fn new(n: usize, vertices: usize, window: String, epsilon: f64, count: LogCount, method: &str, std_error: Option<f64>) -> Self {
        EntropyRow {
            n,
            vertices,
            window,
            epsilon,
            log_value: count.log,
            normalized: count.log / vertices as f64,
            method: method.to_string(),
            std_error,
            exact_count: count.exact,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        json!({
            "n": self.n,
            "vertices": self.vertices,
            "window": self.window,
            "epsilon": self.epsilon,
            "log_value": log_json(self.log_value),
            "normalized": log_json(self.normalized),
            "method": self.method,
            "std_error": self.std_error,
            "count": self.exact_count.map(|c| c.to_string()),
        })
    }
}

fn csv_float(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EntropyCurve {
    pub rows: Vec<EntropyRow>,
}

impl EntropyCurve {
    pub const CSV_HEADER: &'static str = "n,|V|,F,epsilon,log_value,normalized,method,std_error";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},\"{}\",{},{},{},{},{}\n",
                r.n,
                r.vertices,
                r.window,
                r.epsilon,
                csv_float(r.log_value),
                csv_float(r.normalized),
                r.method,
                r.std_error.map(|s| s.to_string()).unwrap_or_default()
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(self.rows.iter().map(EntropyRow::to_json).collect())
    }

    pub fn last(&self) -> Option<&EntropyRow> {
        self.rows.last()
    }

    /// Indices `i` with `normalized[i+1] > normalized[i]`; curves are
    /// reported per `n` and such rises are flagged, not smoothed.
    pub fn rises(&self) -> Vec<usize> {
        self.rows.windows(2).enumerate().filter(|(_, w)| w[1].normalized > w[0].normalized).map(|(i, _)| i).collect()
    }
}

/// Importance-sampling proposal: the one-site marginal of `μ`, mixed with
/// the uniform law when some letter has zero mass.
pub fn default_proposal(mu: &Process) -> Vec<f64> {
    let p = mu.one_site();
    if p.iter().all(|&x| x > 0.0) {
        return p;
    }
    let q = p.len() as f64;
    p.iter().map(|x| 0.5 * x + 0.5 / q).collect()
}

/// `ln |Ω_μ(F, ε, σ)|` by the chosen method.
pub fn count_log(sigma: &SoficMap, mu: &Process, window: &Window, epsilon: f64, method: &CountMethod) -> Result<(LogCount, Option<f64>)> {
    match method {
        CountMethod::LetterExact => {
            if window.len() != 1 {
                return Err(validation("letter-exact counting needs F = {e}"));
            }
            if sigma.spec() != mu.group() {
                return Err(structural("sofic map and process act by different groups"));
            }
            Ok((letter_frequency_count(&mu.one_site(), sigma.vertices(), epsilon)?, None))
        }
        CountMethod::Exhaustive { budget } => {
            let test = GoodModelTest::new(sigma, mu, window, epsilon)?;
            Ok((LogCount::from_exact(u128::from(count_with(&test, *budget)?)), None))
        }
        CountMethod::Mc { samples, seed } => {
            let test = GoodModelTest::new(sigma, mu, window, epsilon)?;
            let est = count_with_mc(&test, &default_proposal(mu), *samples, *seed)?;
            // Delta-method error of the log estimate.
            let se = if est.accepted == 0 { None } else { Some(est.relative_error) };
            Ok((LogCount { exact: None, log: est.log_estimate }, se))
        }
    }
}

/// One row per size: `(1/|V_n|) ln |Ω_μ(F, ε, σ_n)|`.
pub fn entropy_curve(
    family: &ApproxFamily,
    mu: &Process,
    window: &Window,
    epsilon: f64,
    sizes: &[usize],
    method: &CountMethod,
) -> Result<EntropyCurve> {
    let desc = window.describe(mu.group());
    let rows = sizes
        .par_iter()
        .map(|&n| {
            let sigma = family.build(mu.group(), n)?;
            let (count, se) = count_log(&sigma, mu, window, epsilon, method)?;
            Ok(EntropyRow::new(n, sigma.vertices(), desc.clone(), epsilon, count, method.tag(), se))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EntropyCurve { rows })
}

/// `(1/|V_n|) ln cov_ε(μ_n)` for the discrete metric; rows keep the order of
/// `measures`, each given with its size parameter `n`.
pub fn hq_lower_curve(measures: &[(usize, ModelMeasure)], epsilon: f64) -> Result<EntropyCurve> {
    let rows = measures
        .par_iter()
        .map(|(n, nu)| Ok(EntropyRow::new(*n, nu.vertices(), "discrete".into(), epsilon, cov_eps(nu, epsilon)?, "cov_eps", None)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EntropyCurve { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HpsRow {
    pub k: usize,
    pub row: EntropyRow,
    /// `normalized / k`.
    pub per_power: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HpsTable {
    pub rows: Vec<HpsRow>,
}

impl HpsTable {
    pub const CSV_HEADER: &'static str = "k,n,|V|,F,epsilon,normalized,normalized_per_k,method";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},\"{}\",{},{},{},{}\n",
                r.k,
                r.row.n,
                r.row.vertices,
                r.row.window,
                r.row.epsilon,
                csv_float(r.row.normalized),
                csv_float(r.per_power),
                r.row.method
            ));
        }
        out
    }
}

/// `(1/k) (1/|V_n|) ln |Ω_{μ^{×k}}(F, ε, σ_n)|` for `k = 1..=k_max`.
pub fn hps_curve(
    family: &ApproxFamily,
    mu: &Process,
    window: &Window,
    epsilon: f64,
    sizes: &[usize],
    k_max: usize,
    method: &CountMethod,
) -> Result<HpsTable> {
    if k_max == 0 {
        return Err(validation("k_max must be at least 1"));
    }
    let mut rows = vec![];
    for k in 1..=k_max {
        let power = Process::power(mu, k)?;
        for row in entropy_curve(family, &power, window, epsilon, sizes, method)?.rows {
            let per_power = row.normalized / k as f64;
            rows.push(HpsRow { k, row, per_power });
        }
    }
    Ok(HpsTable { rows })
}

/// Outcome of projecting `Ω_{μ×ν}(F, ε, σ)` onto its two coordinates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubadditivityReport {
    pub pair_models: usize,
    pub left_models: u64,
    pub right_models: u64,
    /// Pair models whose projection misses `Ω_μ(F,2ε) × Ω_ν(F,2ε)`.
    pub violations: usize,
}

impl SubadditivityReport {
    /// `ln |Ω_{μ×ν}| ≤ ln |Ω_μ| + ln |Ω_ν|` at `2ε`.
    pub fn log_inequality_holds(&self) -> bool {
        (self.pair_models as u128) <= u128::from(self.left_models) * u128::from(self.right_models)
    }
}

/// Splits a pair configuration over `X × Y` into its coordinates.
pub fn split_pair(z: &Configuration, right_alphabet: usize) -> (Configuration, Configuration) {
    let r = right_alphabet as u8;
    (Configuration(z.0.iter().map(|s| s / r).collect()), Configuration(z.0.iter().map(|s| s % r).collect()))
}

/// Exhaustively checks that every `(F,ε)`-good model of `μ × ν` projects
/// to a pair of `(F,2ε)`-good models.
pub fn subadditivity_inclusion(
    sigma: &SoficMap,
    mu: &Process,
    nu: &Process,
    window: &Window,
    epsilon: f64,
    budget: u128,
) -> Result<SubadditivityReport> {
    let pair = Process::product(mu, nu)?;
    let pair_models = crate::model::enumerate_good_models(sigma, &pair, window, epsilon, budget)?;
    let left = GoodModelTest::new(sigma, mu, window, 2.0 * epsilon)?;
    let right = GoodModelTest::new(sigma, nu, window, 2.0 * epsilon)?;
    let ry = nu.alphabet_size();
    let violations = pair_models
        .par_iter()
        .filter(|z| {
            let (x, y) = split_pair(z, ry);
            !(left.is_good(&x) && right.is_good(&y))
        })
        .count();
    Ok(SubadditivityReport {
        pair_models: pair_models.len(),
        left_models: count_with(&left, budget)?,
        right_models: count_with(&right, budget)?,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convergence::quenched_defect;
    use crate::model::enumerate_good_models;
    use proptest::prelude::*;

    #[test]
    fn shannon_examples() {
        assert_eq!(shannon_entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert!((shannon_entropy(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let h = shannon_entropy(&[0.75, 0.25]).unwrap();
        assert!((h - 0.5623).abs() < 1e-4);
        assert!(shannon_entropy(&[0.5, 0.6]).is_err());
    }

    #[test]
    fn bernoulli_curves_approach_shannon() {
        let f2 = GroupSpec::free(2);
        let e = Window::identity(&f2);
        let fam = ApproxFamily::RandomUniform { seed: 1 };
        let fair = Process::bernoulli(&f2, vec![0.5, 0.5]).unwrap();
        let c = entropy_curve(&fam, &fair, &e, 0.05, &[4096], &CountMethod::LetterExact).unwrap();
        assert!((c.last().unwrap().normalized - 2f64.ln()).abs() < 0.02);
        let biased = Process::bernoulli(&f2, vec![0.75, 0.25]).unwrap();
        let c = entropy_curve(&fam, &biased, &e, 0.02, &[4096], &CountMethod::LetterExact).unwrap();
        let h = shannon_entropy(&[0.75, 0.25]).unwrap();
        assert!((c.last().unwrap().normalized - h).abs() < 0.03);
    }

    #[test]
    fn empty_sets_give_neg_inf_rows() {
        let z = GroupSpec::integers();
        let mu = Process::bernoulli(&z, vec![0.5, 0.5]).unwrap();
        // Three vertices cannot carry frequency 1/2 to within 0.1.
        let c = entropy_curve(&ApproxFamily::Quotient, &mu, &Window::identity(&z), 0.1, &[3], &CountMethod::Exhaustive { budget: 1 << 10 }).unwrap();
        assert_eq!(c.rows[0].log_value, f64::NEG_INFINITY);
        assert!(c.to_csv().contains(",-inf,-inf,"));
        assert_eq!(c.to_json()[0]["normalized"], "-inf");
    }

    #[test]
    fn methods_agree_on_small_instances() {
        let f2 = GroupSpec::free(2);
        let fam = ApproxFamily::RandomUniform { seed: 8 };
        let mu = Process::bernoulli(&f2, vec![0.6, 0.4]).unwrap();
        let e = Window::identity(&f2);
        let a = entropy_curve(&fam, &mu, &e, 0.15, &[10, 11, 12], &CountMethod::LetterExact).unwrap();
        let b = entropy_curve(&fam, &mu, &e, 0.15, &[10, 11, 12], &CountMethod::Exhaustive { budget: 1 << 20 }).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.exact_count, y.exact_count);
        }
    }

    #[test]
    fn hq_lower_examples() {
        let point = ModelMeasure::point_mass(2, Configuration::constant(64, 0)).unwrap();
        let c = hq_lower_curve(&[(64, point)], 0.1).unwrap();
        assert_eq!(c.rows[0].normalized, 0.0);

        let fair = ModelMeasure::product(vec![0.5, 0.5], 4096).unwrap();
        let c = hq_lower_curve(&[(4096, fair)], 0.1).unwrap();
        assert!((c.rows[0].normalized - 2f64.ln()).abs() < 0.05);

        let n = 32;
        let alt = |p: u8| Configuration((0..n).map(|i| (i as u8 + p) % 2).collect());
        let orbit = ModelMeasure::uniform(2, &[alt(0), alt(1)]).unwrap();
        let c = hq_lower_curve(&[(16, orbit)], 0.1).unwrap();
        assert!((c.rows[0].normalized - 2f64.ln() / n as f64).abs() < 1e-15);
    }

    #[test]
    fn hps_examples() {
        let f2 = GroupSpec::free(2);
        let fam = ApproxFamily::RandomUniform { seed: 3 };
        let mu = Process::bernoulli(&f2, vec![0.75, 0.25]).unwrap();
        let e = Window::identity(&f2);
        let t = hps_curve(&fam, &mu, &e, 0.01, &[1024], 2, &CountMethod::LetterExact).unwrap();
        let h = shannon_entropy(&[0.75, 0.25]).unwrap();
        for r in &t.rows {
            assert!((r.per_power - h).abs() < 0.03, "{r:?}");
        }
        let k3 = hps_curve(&fam, &mu, &e, 0.02, &[160], 3, &CountMethod::LetterExact).unwrap();
        assert!((k3.rows[2].per_power - h).abs() < 0.03, "{:?}", k3.rows[2]);
        let base = entropy_curve(&fam, &mu, &e, 0.01, &[1024], &CountMethod::LetterExact).unwrap();
        assert_eq!(t.rows[0].row, base.rows[0]);
        assert!(hps_curve(&fam, &mu, &e, 0.05, &[16], 9, &CountMethod::LetterExact).is_err());
    }

    #[test]
    fn coset_iid_square_has_no_models() {
        let g = GroupSpec::free_product(vec![2, 2]);
        let mu = Process::coset_iid(&g, vec![0.75, 0.25], 1).unwrap();
        let t = hps_curve(&ApproxFamily::Partitioned { seed: 4 }, &mu, &Window::identity(&g), 0.01, &[3], 2, &CountMethod::Exhaustive { budget: 1 << 26 })
            .unwrap();
        // Twelve vertices cannot carry the square's pair frequencies 9/16, 3/16, 3/16, 1/16.
        assert_eq!(t.rows[1].row.log_value, f64::NEG_INFINITY);
    }

    #[test]
    fn monotone_in_epsilon_and_window() {
        let f2 = GroupSpec::free(2);
        let sigma = SoficMap::random_uniform(&f2, 10, 5).unwrap();
        let mu = Process::tree_markov(&f2, vec![vec![0.7, 0.3], vec![0.3, 0.7]], vec![0.5, 0.5]).unwrap();
        let ex = CountMethod::Exhaustive { budget: 1 << 12 };
        let e = Window::identity(&f2);
        let b1 = f2.ball(1);
        let mut last_e = f64::INFINITY;
        let mut last_b = f64::INFINITY;
        for k in (1..=12).rev() {
            let eps = k as f64 / 24.0;
            let ce = count_log(&sigma, &mu, &e, eps, &ex).unwrap().0.log;
            let cb = count_log(&sigma, &mu, &b1, eps, &ex).unwrap().0.log;
            assert!(ce <= last_e && cb <= last_b);
            // Every F-marginal TV dominates the {e}-marginal TV.
            assert!(cb <= ce);
            last_e = ce;
            last_b = cb;
        }
    }

    #[test]
    fn cov_eps_is_dominated_by_good_models() {
        // With defect d < ε, the cov_ε-realizing heaviest atoms lose at most
        // d mass when intersected with Ω, so some set of at most |Ω| atoms
        // has mass > 1 - ε - d and cov_{ε+d} ≤ |Ω|.
        let z = GroupSpec::integers();
        let sigma = SoficMap::quotient_map(&z, 10).unwrap();
        let mu = Process::bernoulli(&z, vec![0.5, 0.5]).unwrap();
        let w = z.ball(1);
        let good = enumerate_good_models(&sigma, &mu, &w, 0.2, 1 << 12).unwrap();
        let mut atoms: Vec<(Configuration, f64)> = good.iter().map(|x| (x.clone(), 1.0)).collect();
        atoms.push((Configuration::constant(10, 0), 0.3 * good.len() as f64));
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let nu = ModelMeasure::explicit(2, atoms.into_iter().map(|(c, m)| (c, m / total)).collect()).unwrap();
        let d = quenched_defect(&sigma, &nu, &mu, &w, 0.2, 0, 0).unwrap().value;
        for eps in [0.3, 0.5, 0.7] {
            if d < eps {
                let cov = cov_eps(&nu, eps).unwrap().exact.unwrap();
                assert!(cov <= good.len() as u128 + 1);
                let tight = cov_eps(&nu, (eps + d).min(0.999)).unwrap().exact.unwrap();
                assert!(tight <= good.len() as u128);
            }
        }
    }

    #[test]
    fn normalized_values_stay_below_log_alphabet() {
        let f2 = GroupSpec::free(2);
        let fam = ApproxFamily::RandomUniform { seed: 2 };
        let mu = Process::bernoulli(&f2, vec![0.2, 0.3, 0.5]).unwrap();
        let c = entropy_curve(&fam, &mu, &Window::identity(&f2), 0.9, &[8, 64, 512], &CountMethod::LetterExact).unwrap();
        for r in &c.rows {
            assert!(r.normalized <= 3f64.ln() + 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn subadditivity_projection(seed in 0u64..1000, a in 0.1f64..0.9, b in 0.1f64..0.9, eps in 0.05f64..0.4) {
            let f2 = GroupSpec::free(2);
            let sigma = SoficMap::random_uniform(&f2, 6, seed).unwrap();
            let mu = Process::bernoulli(&f2, vec![a, 1.0 - a]).unwrap();
            let nu = Process::tree_markov(&f2, vec![vec![b, 1.0 - b], vec![1.0 - b, b]], vec![0.5, 0.5]).unwrap();
            let rep = subadditivity_inclusion(&sigma, &mu, &nu, &f2.ball(1), eps, 1 << 14).unwrap();
            prop_assert_eq!(rep.violations, 0);
            prop_assert!(rep.log_inequality_holds());
        }
    }
}
