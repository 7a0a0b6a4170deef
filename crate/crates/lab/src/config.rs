//! Experiment configuration files.

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sofic_core::entropy::ApproxFamily;
use sofic_core::GroupSpec;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BUDGET: u64 = 1 << 26;

fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Root of every random stream the experiment draws.
    pub seed: u64,
    /// Cap on configurations scanned by any exhaustive search.
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id")]
pub enum Experiment {
    E1(BernoulliEntropy),
    E2(CoverPack),
    E3(Subadditivity),
    E4(BernoulliConvergence),
    E5(CoinducedModels),
    E6(CoinducedPairs),
    E7(Expansion),
    E8(QuenchedNotDq),
    E9(Pipeline),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    LetterExact,
    Exhaustive,
    Mc { samples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BernoulliEntropy {
    pub group: GroupSpec,
    pub family: ApproxFamily,
    pub distributions: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub sizes: Vec<usize>,
    pub method: Method,
    /// Allowed gap between the last row and the Shannon entropy, in nats.
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverPack {
    /// Random instances per inequality family.
    pub instances: usize,
    pub max_vertices: usize,
    pub max_points: usize,
    pub max_atoms: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subadditivity {
    pub pairs: usize,
    pub vertices: usize,
    pub radius: usize,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BernoulliConvergence {
    pub weights: Vec<f64>,
    pub radii: Vec<usize>,
    pub epsilon: f64,
    pub sizes: Vec<usize>,
    pub seeds: usize,
    pub samples: usize,
    pub dispersion_samples: usize,
    pub q_defect_max: f64,
    pub dq_defect_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoinducedModels {
    pub n: usize,
    pub seeds: usize,
    pub mu0: Vec<f64>,
    /// `ε` for the `F = {e}` membership check of `1_W`.
    pub letter_epsilon: f64,
    /// Per-seed `ε` for the radius-1 enumeration, calibrated by a
    /// brute-force run.
    pub ball_epsilon: Vec<f64>,
    pub hamming_radius: f64,
    pub min_passing_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoinducedPairs {
    pub n: usize,
    pub seeds: usize,
    pub mu0: Vec<f64>,
    /// Per-seed `ε` for the radius-1 good models.
    pub model_epsilon: Vec<f64>,
    pub pair_epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expansion {
    pub sizes: Vec<usize>,
    pub seeds: usize,
    pub lambda2_max: f64,
    pub min_passing_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchedNotDq {
    /// Half-lengths `n`; the cycles have `2n` vertices.
    pub sizes: Vec<usize>,
    pub window: Vec<String>,
    pub epsilons: Vec<f64>,
    pub pair_epsilon: f64,
    pub vertex_pairs: usize,
    pub cluster_threshold: f64,
    pub min_pair_stat: f64,
    pub barycentre_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub vertices: usize,
    pub k: usize,
    pub radius: usize,
    pub epsilon: f64,
    pub seeds: usize,
    pub lw_defect_max: f64,
    pub dq_defect_max: f64,
    pub average: Averaging,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Averaging {
    pub base_vertices: usize,
    /// Length of the cycle approximating the integers.
    pub cycle: usize,
    /// `|E|`; the averaging set is `{e, a, …, a^{|E|-1}}`.
    pub elements: usize,
    pub k: usize,
    pub radius: usize,
    pub epsilon: f64,
    /// Monte Carlo draws when a pair support is too large to sum.
    pub samples: usize,
    pub tolerance: f64,
}

impl Experiment {
    pub fn id(&self) -> &'static str {
        match self {
            Experiment::E1(_) => "E1",
            Experiment::E2(_) => "E2",
            Experiment::E3(_) => "E3",
            Experiment::E4(_) => "E4",
            Experiment::E5(_) => "E5",
            Experiment::E6(_) => "E6",
            Experiment::E7(_) => "E7",
            Experiment::E8(_) => "E8",
            Experiment::E9(_) => "E9",
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    ensure!(x > 0.0 && x.is_finite(), "{name} must be positive");
    Ok(())
}

fn nonempty<T>(name: &str, xs: &[T]) -> Result<()> {
    ensure!(!xs.is_empty(), "{name} must be nonempty");
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).context("config does not match the schema")?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_json(&text)
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version);
        }
        ensure!(self.budget > 0, "budget must be positive");
        match &self.experiment {
            Experiment::E1(p) => {
                p.group.validate()?;
                nonempty("distributions", &p.distributions)?;
                nonempty("sizes", &p.sizes)?;
                positive("epsilon", p.epsilon)?;
                positive("tolerance", p.tolerance)?;
            }
            Experiment::E2(p) => {
                ensure!(p.instances > 0, "instances must be positive");
                ensure!((2..=8).contains(&p.max_vertices), "max_vertices must lie in 2..=8");
                ensure!(p.max_points >= 1 && p.max_atoms >= 1, "need at least one point and atom");
                ensure!(p.max_atoms <= 20, "max_atoms above the exact packing limit");
            }
            Experiment::E3(p) => {
                ensure!(p.pairs > 0 && p.vertices > 0, "pairs and vertices must be positive");
                positive("epsilon", p.epsilon)?;
            }
            Experiment::E4(p) => {
                nonempty("sizes", &p.sizes)?;
                nonempty("radii", &p.radii)?;
                ensure!(p.seeds > 0 && p.samples > 0, "seeds and samples must be positive");
                ensure!(p.dispersion_samples >= 2, "dispersion needs at least two samples");
                positive("epsilon", p.epsilon)?;
            }
            Experiment::E5(p) => {
                ensure!(p.n > 0 && p.seeds > 0, "n and seeds must be positive");
                ensure!(p.min_passing_seeds <= p.seeds, "min_passing_seeds exceeds seeds");
                positive("letter_epsilon", p.letter_epsilon)?;
                ensure!(p.ball_epsilon.len() == p.seeds, "ball_epsilon needs one value per seed");
                for &e in &p.ball_epsilon {
                    positive("ball_epsilon", e)?;
                }
            }
            Experiment::E6(p) => {
                ensure!(p.n > 0 && p.seeds > 0, "n and seeds must be positive");
                ensure!(p.model_epsilon.len() == p.seeds, "model_epsilon needs one value per seed");
                for &e in &p.model_epsilon {
                    positive("model_epsilon", e)?;
                }
                positive("pair_epsilon", p.pair_epsilon)?;
            }
            Experiment::E7(p) => {
                nonempty("sizes", &p.sizes)?;
                ensure!(p.min_passing_seeds <= p.seeds, "min_passing_seeds exceeds seeds");
            }
            Experiment::E8(p) => {
                nonempty("sizes", &p.sizes)?;
                nonempty("window", &p.window)?;
                nonempty("epsilons", &p.epsilons)?;
                ensure!(p.vertex_pairs > 0, "vertex_pairs must be positive");
                for &e in &p.epsilons {
                    positive("epsilon", e)?;
                }
            }
            Experiment::E9(p) => {
                ensure!(p.k > 0 && p.seeds > 0 && p.vertices > 0, "k, seeds and vertices must be positive");
                ensure!(p.average.elements > 0 && p.average.cycle > 0, "averaging set and cycle must be nonempty");
                positive("epsilon", p.epsilon)?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn checksum(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
