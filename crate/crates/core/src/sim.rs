//! Monte Carlo protocol: renewable sample pools, histogram reference
//! distributions, policy statistics and the radius sweep.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ambiguity::AmbiguitySpec;
use crate::dp::{backward_induction_with, open_loop_schedule, rollout_open_loop, BackwardOptions, Policy, ValueFunctions};
use crate::error::{Error, Result};
use crate::grid::GridCase;
use crate::value::{make_grid, DEFAULT_GRID_CAP};

/// Scenarios of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageScenarios {
    /// Renewable output per scenario and bus.
    pub xi: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    /// Histogram edges on total renewable output; empty when not built from
    /// a histogram.
    pub bin_edges: Vec<f64>,
}

impl StageScenarios {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    stages: Vec<StageScenarios>,
}

impl ScenarioSet {
    pub fn new(stages: Vec<StageScenarios>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Dimension("scenario set has no stages".into()));
        }
        let buses = stages[0].xi.first().map_or(0, Vec::len);
        for (t, s) in stages.iter().enumerate() {
            if s.xi.len() != s.q.len() || s.q.is_empty() {
                return Err(Error::Dimension(format!(
                    "stage {t}: {} scenarios, {} probabilities",
                    s.xi.len(),
                    s.q.len()
                )));
            }
            if s.xi.iter().any(|v| v.len() != buses) {
                return Err(Error::Dimension(format!("stage {t}: inconsistent bus count")));
            }
            AmbiguitySpec::new(s.q.clone(), 0.0)?;
        }
        Ok(ScenarioSet { stages })
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, t: usize) -> &StageScenarios {
        &self.stages[t]
    }

    pub fn stages(&self) -> &[StageScenarios] {
        &self.stages
    }

    /// Probability-weighted mean output per stage and bus.
    pub fn nominal_path(&self) -> Vec<Vec<f64>> {
        self.stages
            .iter()
            .map(|s| {
                let buses = s.xi[0].len();
                (0..buses)
                    .map(|n| s.q.iter().zip(&s.xi).map(|(q, xi)| q * xi[n]).sum())
                    .collect()
            })
            .collect()
    }
}

/// Generative model of renewable output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SamplingModel {
    /// Per-unit normal around the case mean, truncated at zero, with AR(1)
    /// correlation `rho` of the standardized noise across stages.
    #[serde(rename = "truncnorm")]
    TruncatedNormal { rho: f64 },
}

impl SamplingModel {
    pub fn from_name(name: &str, rho: f64) -> Result<Self> {
        match name {
            "truncnorm" => {
                if !(rho > -1.0 && rho < 1.0) {
                    return Err(Error::Domain(format!("AR(1) coefficient {rho} must lie in (-1, 1)")));
                }
                Ok(SamplingModel::TruncatedNormal { rho })
            }
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplingModel::TruncatedNormal { .. } => "truncnorm",
        }
    }
}

impl Default for SamplingModel {
    fn default() -> Self {
        SamplingModel::TruncatedNormal { rho: 0.0 }
    }
}

/// Sampled renewable trajectories, `paths[i][t][bus]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePool {
    pub paths: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
    pub model: SamplingModel,
}

impl SamplePool {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// SHA-256 over the bit patterns of every sample.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for path in &self.paths {
            for stage in path {
                for v in stage {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of the named substream of `seed`.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Draws `n` renewable trajectories over the case horizon.
pub fn sample_pool(case: &GridCase, model: SamplingModel, n: usize, seed: u64) -> Result<SamplePool> {
    if n == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    let net = case.index()?;
    let SamplingModel::TruncatedNormal { rho } = model;
    let innovation = (1.0 - rho * rho).sqrt();
    let std_normal = Normal::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut paths = Vec::with_capacity(n);
    for _ in 0..n {
        let mut path = vec![vec![0.0; case.num_buses()]; case.horizon];
        for (r, unit) in case.renewables.iter().enumerate() {
            let mut prev = 0.0;
            for (t, stage) in path.iter_mut().enumerate() {
                let (mu, sd) = (unit.mean[t], unit.std_dev);
                // Standardized noise, conditioned on keeping the output at or
                // above zero.
                let shift = rho * prev;
                let value = if sd > 0.0 {
                    let lower = (-mu / sd - shift) / innovation;
                    let e = shift + innovation * truncated_standard_normal(&std_normal, lower, &mut rng);
                    prev = e;
                    (mu + sd * e).max(0.0)
                } else {
                    mu.max(0.0)
                };
                stage[net.renewable_bus[r]] += value;
            }
        }
        paths.push(path);
    }
    Ok(SamplePool { paths, seed, model })
}

/// Standard normal conditioned on `z ≥ lower`, by inversion through the
/// upper tail so that far truncation points stay accurate.
fn truncated_standard_normal(n: &Normal, lower: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let tail = n.cdf(-lower);
    if tail <= 0.0 {
        return lower;
    }
    (-n.inverse_cdf(u * tail)).max(lower)
}

/// Per-stage histogram of total renewable output with `bins` equal-width
/// bins. Each nonempty bin becomes a scenario whose total equals the bin
/// center and whose bus split is that of its members' mean.
pub fn build_reference(pool: &SamplePool, bins: usize) -> Result<ScenarioSet> {
    if bins == 0 {
        return Err(Error::Domain("bin count must be at least 1".into()));
    }
    if pool.is_empty() {
        return Err(Error::Domain("sample pool is empty".into()));
    }
    let horizon = pool.paths[0].len();
    let n = pool.len();
    let stages = (0..horizon)
        .map(|t| {
            let rows: Vec<&Vec<f64>> = pool.paths.iter().map(|p| &p[t]).collect();
            stage_histogram(&rows, bins, n)
        })
        .collect();
    ScenarioSet::new(stages)
}

fn mean_vector(rows: &[&Vec<f64>]) -> Vec<f64> {
    let buses = rows[0].len();
    let k = rows.len() as f64;
    (0..buses).map(|b| rows.iter().map(|r| r[b]).sum::<f64>() / k).collect()
}

fn stage_histogram(rows: &[&Vec<f64>], bins: usize, n: usize) -> StageScenarios {
    let totals: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    let lo = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let overall = mean_vector(rows);
    if !(hi > lo) {
        return StageScenarios {
            xi: vec![overall],
            q: vec![1.0],
            bin_edges: vec![lo, hi],
        };
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|b| if b == bins { hi } else { lo + width * b as f64 })
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, &s) in totals.iter().enumerate() {
        let b = (((s - lo) / width) as usize).min(bins - 1);
        members[b].push(i);
    }

    let mut xi = Vec::new();
    let mut counts = Vec::new();
    for (b, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let center = 0.5 * (edges[b] + edges[b + 1]);
        let subset: Vec<&Vec<f64>> = idx.iter().map(|&i| rows[i]).collect();
        let mean = mean_vector(&subset);
        let mass: f64 = mean.iter().sum();
        let (shape, shape_mass) = if mass > 0.0 {
            (mean, mass)
        } else {
            let m = overall.iter().sum();
            (overall.clone(), m)
        };
        xi.push(shape.iter().map(|v| v * center / shape_mass).collect());
        counts.push(idx.len());
    }
    StageScenarios {
        xi,
        q: normalize_counts(&counts, n),
        bin_edges: edges,
    }
}

/// Frequencies `count/n`, with the last entry absorbing rounding so the
/// vector sums to exactly one.
fn normalize_counts(counts: &[usize], n: usize) -> Vec<f64> {
    let mut q: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let last = q.len() - 1;
    let head: f64 = q[..last].iter().sum();
    q[last] = 1.0 - head;
    q
}

/// Summary of simulated total costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator; 0 for one sample).
    pub std_dev: f64,
    /// Nearest-rank 90th percentile.
    pub p90: f64,
    pub n: usize,
}

impl PolicyStats {
    pub fn from_costs(costs: &[f64]) -> Result<Self> {
        let n = costs.len();
        if n == 0 {
            return Err(Error::Domain("no costs to summarize".into()));
        }
        let mean = costs.iter().sum::<f64>() / n as f64;
        let std_dev = if n > 1 {
            let ss: f64 = costs.iter().map(|c| (c - mean) * (c - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = costs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = (9 * n).div_ceil(10).max(1);
        Ok(PolicyStats {
            mean,
            std_dev,
            p90: sorted[rank - 1],
            n,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub stats: PolicyStats,
    /// Total cost per path, in pool order.
    pub costs: Vec<f64>,
}

/// Evaluates `rollout` on every path of `pool` (in parallel) and summarizes
/// the totals in path order.
pub fn evaluate_with<F>(pool: &SamplePool, rollout: F) -> Result<Evaluation>
where
    F: Fn(&[Vec<f64>]) -> Result<f64> + Sync,
{
    if pool.is_empty() {
        return Err(Error::Domain("sample pool is empty".into()));
    }
    let costs = pool
        .paths
        .par_iter()
        .enumerate()
        .map(|(index, path)| {
            rollout(path).map_err(|e| Error::Rollout {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Evaluation {
        stats: PolicyStats::from_costs(&costs)?,
        costs,
    })
}

/// Closed-loop evaluation of `policy`.
pub fn evaluate_policy(policy: &Policy<'_>, pool: &SamplePool) -> Result<Evaluation> {
    evaluate_with(pool, |path| policy.rollout(path).map(|r| r.total))
}

/// Evaluation of the schedule frozen along the reference's nominal path.
pub fn evaluate_open_loop(policy: &Policy<'_>, reference: &ScenarioSet, pool: &SamplePool) -> Result<Evaluation> {
    let schedule = open_loop_schedule(policy, &reference.nominal_path())?;
    let case = policy.case();
    evaluate_with(pool, |path| rollout_open_loop(case, &schedule, path).map(|r| r.total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    pub pieces: usize,
    pub bins: usize,
    pub n_fit: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub model: SamplingModel,
    pub open_loop: bool,
    pub grid_cap: usize,
    /// Parent of one checkpoint directory per radius.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gammas: vec![0.0, 1.0, 3.0, 5.0, 10.0],
            pieces: 3,
            bins: 5,
            n_fit: 500,
            n_eval: 1000,
            seed: 20240601,
            model: SamplingModel::default(),
            open_loop: false,
            grid_cap: DEFAULT_GRID_CAP,
            checkpoint_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub root_value: f64,
    pub max_fit_residual: f64,
    pub min_eigenvalue: f64,
    pub stats: PolicyStats,
    /// Digest of the evaluation pool this row was simulated on.
    pub eval_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub reference: ScenarioSet,
    pub fit_digest: String,
    pub eval_digest: String,
    #[serde(skip)]
    pub values: Vec<ValueFunctions>,
    #[serde(skip)]
    pub costs: Vec<Vec<f64>>,
}

/// Checkpoint directory name for radius `gamma`.
pub fn gamma_dir_name(gamma: f64) -> String {
    format!("gamma_{gamma}")
}

/// Fits and evaluates one policy per radius, all on the same fitting
/// reference and the same evaluation pool.
pub fn gamma_sweep(case: &GridCase, config: &SweepConfig) -> Result<SweepResult> {
    if config.gammas.is_empty() {
        return Err(Error::Domain("radius list is empty".into()));
    }
    let grid = make_grid(case, config.pieces, config.grid_cap)?;
    let fit_pool = sample_pool(case, config.model, config.n_fit, substream_seed(config.seed, "fit-pool"))?;
    let eval_pool = sample_pool(case, config.model, config.n_eval, substream_seed(config.seed, "eval-pool"))?;
    let reference = build_reference(&fit_pool, config.bins)?;
    let eval_digest = eval_pool.digest();

    let mut rows = Vec::with_capacity(config.gammas.len());
    let mut all_values = Vec::with_capacity(config.gammas.len());
    let mut all_costs = Vec::with_capacity(config.gammas.len());
    for &gamma in &config.gammas {
        let options = BackwardOptions {
            checkpoint_dir: config.checkpoint_dir.as_ref().map(|d| d.join(gamma_dir_name(gamma))),
            progress: None,
        };
        let values = backward_induction_with(case, &reference, gamma, &grid, &options)?;
        let policy = Policy::new(case, &values)?;
        let eval = if config.open_loop {
            evaluate_open_loop(&policy, &reference, &eval_pool)?
        } else {
            evaluate_policy(&policy, &eval_pool)?
        };
        rows.push(SweepRow {
            gamma,
            root_value: values.root.value,
            max_fit_residual: values.max_fit_residual(),
            min_eigenvalue: values.min_eigenvalue(),
            stats: eval.stats,
            eval_digest: eval_pool.digest(),
        });
        all_costs.push(eval.costs);
        all_values.push(values);
    }
    if rows.iter().any(|r| r.eval_digest != eval_digest) {
        return Err(Error::Domain("evaluation pool changed during the sweep".into()));
    }
    Ok(SweepResult {
        rows,
        reference,
        fit_digest: fit_pool.digest(),
        eval_digest,
        values: all_values,
        costs: all_costs,
    })
}
