//! Config-driven multi-seed experiments.
//!
//! A run is keyed by `(algo, seed)`. The instance comes from the
//! `[instance]` table (random instances carry their own seed); the loss
//! sequence, the distractor class and every learner stream are expanded
//! from the run seed, so two algorithms with the same seed face the same
//! world.

use super::{
    comparator_policy, evaluate_run, evaluate_uniform, lemma_diagnostics, rows_slope, EpisodeRow, LemmaReport,
    CSV_HEADER,
};
use crate::adversary::{make_fixed, make_stochastic, make_switching, random_loss, LossSequence};
use crate::error::{Error, Result};
use crate::hard_instances::{build, lower_bound_epsilon, HardInstanceParams};
use crate::mdp::LowRankMdp;
use crate::model_class::{build_distractor_class, ModelClass};
use crate::polo::{run, schedule_with_overrides, HyperParams, Overrides, RunArtifact, RunOptions, Schedule};
use crate::rng::{stream, Stream};
use crate::tables::{LossFunction, Policy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Polo,
    Uniform,
    /// POLO with the class reduced to the true factorization.
    KnownFeatures,
    /// POLO with `c_alpha = 0`.
    Greedy,
    /// POLO with `xi = 0`.
    NoExplore,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::Polo, Algo::Uniform, Algo::KnownFeatures, Algo::Greedy, Algo::NoExplore];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Polo => "polo",
            Algo::Uniform => "uniform",
            Algo::KnownFeatures => "known_features",
            Algo::Greedy => "greedy",
            Algo::NoExplore => "no_explore",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    /// The lower-bound family; `target = [i, a]` selects a perturbed
    /// instance, whose `epsilon` defaults to the lower-bound choice.
    Hard {
        dim: usize,
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<[usize; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
    },
    Random {
        n_states: usize,
        n_actions: usize,
        dim: usize,
        gamma: f64,
        #[serde(default = "default_concentration")]
        concentration: f64,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

fn default_concentration() -> f64 {
    1.0
}

/// Base loss: the hard instance's `1 - r` when available, otherwise a
/// `U(0, 1)` table from the adversary stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversarySpec {
    Fixed,
    /// Alternates the base loss and a second random loss every `period`
    /// episodes; `period` defaults to `K / 10`.
    Switching {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        period: Option<usize>,
    },
    /// Base loss plus independent `U(-noise, noise)` per entry and episode.
    Stochastic { noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelClassSpec {
    pub size: usize,
    #[serde(default = "default_perturb")]
    pub perturb_scale: f64,
}

fn default_perturb() -> f64 {
    0.3
}

impl Default for ModelClassSpec {
    fn default() -> Self {
        ModelClassSpec {
            size: 16,
            perturb_scale: default_perturb(),
        }
    }
}

fn default_algos() -> Vec<Algo> {
    vec![Algo::Polo, Algo::Uniform]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k_episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_algos")]
    pub algos: Vec<Algo>,
    /// Compute per-run lemma diagnostics (written to `diagnostics.csv`).
    #[serde(default)]
    pub diagnostics: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub instance: InstanceSpec,
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub model_class: ModelClassSpec,
    #[serde(default)]
    pub hyper: Overrides,
}

/// A manifest is the config with resolved hyperparameters; it parses back
/// as a config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ExperimentConfig,
    resolved: BTreeMap<String, ResolvedParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    #[serde(flatten)]
    pub params: HyperParams,
    pub xi_raw: f64,
    pub epoch_len_raw: f64,
    pub n_epochs: usize,
    pub class_size: usize,
}

impl ExperimentConfig {
    /// Parses a config or a manifest written by a previous run.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: ExperimentConfig = if table.contains_key("resolved") {
            let m: Manifest = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            m.config
        } else {
            table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative instance path is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let InstanceSpec::File { path: p } = &mut cfg.instance {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
            if !p.exists() {
                return Err(Error::Config(format!("instance file {} does not exist", p.display())));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.k_episodes == 0 {
            return bad("k_episodes must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        if self.algos.is_empty() {
            return bad("algos must be non-empty");
        }
        if self.model_class.size == 0 {
            return bad("model_class.size must be at least 1");
        }
        if let AdversarySpec::Switching { period: Some(0) } = self.adversary {
            return bad("switching period must be at least 1");
        }
        Ok(())
    }

    /// Sets one named parameter (a hyperparameter override, `k_episodes` or
    /// `model_class.size`/`perturb_scale`).
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let as_count = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{name} needs a nonnegative integer, got {v}")))
            }
        };
        match name {
            "xi" => self.hyper.xi = Some(value),
            "epoch_len" | "L" => self.hyper.epoch_len = Some(as_count(value)?),
            "eta" => self.hyper.eta = Some(value),
            "c_alpha" => self.hyper.c_alpha = Some(value),
            "c_lambda" => self.hyper.c_lambda = Some(value),
            "k_episodes" | "K" => self.k_episodes = as_count(value)?,
            "class_size" => self.model_class.size = as_count(value)?,
            "perturb_scale" => self.model_class.perturb_scale = value,
            _ => return Err(Error::Config(format!("unknown sweep parameter '{name}'"))),
        }
        self.validate()
    }
}

/// Everything a run at one seed sees.
#[derive(Debug, Clone)]
pub struct World {
    pub mdp: LowRankMdp,
    pub losses: LossSequence,
    pub class: ModelClass,
    pub comparator: Policy,
}

pub fn build_instance(spec: &InstanceSpec, k_episodes: usize) -> Result<(LowRankMdp, Option<LossFunction>)> {
    match spec {
        InstanceSpec::Hard {
            dim,
            n_states,
            n_actions,
            gamma,
            target,
            epsilon,
        } => {
            let mut p = HardInstanceParams::reference(*dim, *n_states, *n_actions, *gamma);
            if let Some([i, a]) = target {
                let eps = match epsilon {
                    Some(e) => *e,
                    None => lower_bound_epsilon(*dim, *n_actions, k_episodes)?,
                };
                p = p.with_target(*i, *a, eps);
            }
            let inst = build(p)?;
            Ok((inst.mdp, Some(inst.loss)))
        }
        InstanceSpec::Random {
            n_states,
            n_actions,
            dim,
            gamma,
            concentration,
            seed,
        } => {
            let mut rng = stream(*seed, Stream::Instance);
            Ok((LowRankMdp::random(*n_states, *n_actions, *dim, *gamma, *concentration, &mut rng)?, None))
        }
        InstanceSpec::File { path } => Ok((LowRankMdp::load(path)?, None)),
    }
}

pub fn build_world(config: &ExperimentConfig, seed: u64) -> Result<World> {
    let (mdp, base) = build_instance(&config.instance, config.k_episodes)?;
    let k = config.k_episodes;
    let (n, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut adv = stream(seed, Stream::Adversary);
    let base = match base {
        Some(l) => l,
        None => random_loss(n, n_a, &mut adv),
    };
    let losses = match &config.adversary {
        AdversarySpec::Fixed => make_fixed(&base, k)?,
        AdversarySpec::Switching { period } => {
            let other = random_loss(n, n_a, &mut adv);
            make_switching(&base, &other, period.unwrap_or((k / 10).max(1)), k)?
        }
        AdversarySpec::Stochastic { noise } => make_stochastic(&base, *noise, k, &mut adv, Some(seed))?,
    };
    let class = build_distractor_class(
        &mdp,
        config.model_class.size,
        &mut stream(seed, Stream::Distractors),
        config.model_class.perturb_scale,
    )?;
    let (comparator, _) = comparator_policy(&mdp, &losses)?;
    Ok(World {
        mdp,
        losses,
        class,
        comparator,
    })
}

/// POLO's schedule for this world and the config's overrides.
pub fn polo_schedule(config: &ExperimentConfig, mdp: &LowRankMdp) -> Result<Schedule> {
    schedule_with_overrides(config.k_episodes, mdp.n_actions(), mdp.dim(), mdp.gamma(), &config.hyper)
}

/// Each ablation changes exactly one thing relative to POLO's resolved
/// parameters; `None` for the uniform baseline.
pub fn algo_params(algo: Algo, polo: &HyperParams) -> Option<HyperParams> {
    let mut p = *polo;
    match algo {
        Algo::Uniform => return None,
        Algo::Polo | Algo::KnownFeatures => {}
        Algo::Greedy => p.c_alpha = 0.0,
        Algo::NoExplore => {
            p.xi = 0.0;
            p.alpha_xi = polo.alpha_xi;
        }
    }
    Some(p)
}

/// Result of one `(algo, seed)` run.
#[derive(Debug, Clone)]
pub struct AlgoRun {
    pub rows: Vec<EpisodeRow>,
    pub params: Option<HyperParams>,
    pub artifact: Option<RunArtifact>,
}

pub fn run_algorithm(
    world: &World,
    algo: Algo,
    polo: &HyperParams,
    seed: u64,
    options: RunOptions,
) -> Result<AlgoRun> {
    let Some(params) = algo_params(algo, polo) else {
        return Ok(AlgoRun {
            rows: evaluate_uniform(&world.mdp, &world.losses, &world.comparator)?,
            params: None,
            artifact: None,
        });
    };
    let singleton;
    let class = if algo == Algo::KnownFeatures {
        singleton = ModelClass::singleton(&world.mdp)?;
        &singleton
    } else {
        &world.class
    };
    let options = RunOptions {
        record_policies: true,
        ..options
    };
    let artifact = run(&world.mdp, class, &world.losses, params, seed, options)?;
    let rows = evaluate_run(&world.mdp, class, &world.losses, &world.comparator, &artifact)?;
    Ok(AlgoRun {
        rows,
        params: Some(params),
        artifact: Some(artifact),
    })
}

#[derive(Debug, Clone)]
pub struct RegretRecord {
    pub algo: Algo,
    pub seed: u64,
    pub rows: Vec<EpisodeRow>,
    /// Log-log slope over `[K/4, K]`; `None` when the fit was skipped.
    pub slope: Option<f64>,
    pub diagnostics: Option<LemmaReport>,
}

impl RegretRecord {
    pub fn final_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 200);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv(self.algo.as_str(), self.seed));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algo: Algo,
    pub n_seeds: usize,
    pub cum_regret_mean: f64,
    pub cum_regret_stderr: f64,
    pub slope_mean: f64,
    pub slope_stderr: f64,
    /// Seeds whose slope fit succeeded.
    pub slope_fits: usize,
}

impl SummaryRow {
    pub const HEADER: &'static str =
        "algo,n_seeds,cum_regret_mean,cum_regret_stderr,slope_mean,slope_stderr,slope_fits";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.10e},{:.10e},{:.10e},{:.10e},{}",
            self.algo,
            self.n_seeds,
            self.cum_regret_mean,
            self.cum_regret_stderr,
            self.slope_mean,
            self.slope_stderr,
            self.slope_fits
        )
    }
}

/// Mean and standard error (`NaN` for fewer than two values).
fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn summarize(records: &[RegretRecord], algos: &[Algo]) -> Vec<SummaryRow> {
    algos
        .iter()
        .map(|&algo| {
            let recs: Vec<&RegretRecord> = records.iter().filter(|r| r.algo == algo).collect();
            let finals: Vec<f64> = recs.iter().map(|r| r.final_regret()).collect();
            let slopes: Vec<f64> = recs.iter().filter_map(|r| r.slope).collect();
            let (cum_regret_mean, cum_regret_stderr) = mean_stderr(&finals);
            let (slope_mean, slope_stderr) = mean_stderr(&slopes);
            SummaryRow {
                algo,
                n_seeds: recs.len(),
                cum_regret_mean,
                cum_regret_stderr,
                slope_mean,
                slope_stderr,
                slope_fits: slopes.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub records: Vec<RegretRecord>,
    pub summary: Vec<SummaryRow>,
    pub resolved: BTreeMap<String, ResolvedParams>,
}

impl ExperimentOutput {
    /// The config with every override replaced by its resolved value, plus
    /// per-algorithm parameter tables.
    pub fn manifest(&self) -> String {
        let mut config = self.config.clone();
        if let Some(p) = self.resolved.get(Algo::Polo.as_str()).or_else(|| self.resolved.values().next()) {
            config.hyper = Overrides {
                xi: Some(p.params.xi),
                epoch_len: Some(p.params.epoch_len),
                eta: Some(p.params.eta),
                c_alpha: Some(p.params.c_alpha),
                c_lambda: Some(p.params.c_lambda),
            };
        }
        toml::to_string(&Manifest {
            config,
            resolved: self.resolved.clone(),
        })
        .expect("manifest serializes")
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(SummaryRow::HEADER);
        out.push('\n');
        for row in &self.summary {
            out.push_str(&row.to_csv());
            out.push('\n');
        }
        out
    }

    pub fn diagnostics_csv(&self) -> Option<String> {
        if !self.config.diagnostics {
            return None;
        }
        let mut out = String::from(
            "algo,seed,omd_sum,omd_bound,optimism_sum,optimism_ratio,estbias_sum,max_decomposition_residual,\
             exploration_slack,bonus_min,bonus_max,covariance_pd_margin,covariance_monotone_min_eig,\
             max_simplex_violation,potential_sum,potential_bound\n",
        );
        for r in &self.records {
            if let Some(d) = &r.diagnostics {
                out.push_str(&format!(
                    "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                    r.algo,
                    r.seed,
                    d.omd_sum,
                    d.omd_bound,
                    d.optimism_sum,
                    d.optimism_ratio,
                    d.estbias_sum,
                    d.max_decomposition_residual,
                    d.exploration_slack,
                    d.bonus_min,
                    d.bonus_max,
                    d.covariance_pd_margin,
                    d.covariance_monotone_min_eig,
                    d.max_simplex_violation,
                    d.potential.sum,
                    d.potential.bound
                ));
            }
        }
        Some(out)
    }

    /// Writes `<algo>_seed<seed>.csv` per run, `summary.csv`,
    /// `manifest.toml` and, with diagnostics on, `diagnostics.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for r in &self.records {
            fs::write(dir.join(format!("{}_seed{}.csv", r.algo, r.seed)), r.to_csv())?;
        }
        fs::write(dir.join("summary.csv"), self.summary_csv())?;
        fs::write(dir.join("manifest.toml"), self.manifest())?;
        if let Some(d) = self.diagnostics_csv() {
            fs::write(dir.join("diagnostics.csv"), d)?;
        }
        Ok(())
    }
}

fn run_one(config: &ExperimentConfig, algo: Algo, seed: u64) -> Result<RegretRecord> {
    let world = build_world(config, seed)?;
    let polo = polo_schedule(config, &world.mdp)?.params;
    let run = run_algorithm(&world, algo, &polo, seed, RunOptions::default())?;
    let diagnostics = match (&run.artifact, config.diagnostics) {
        (Some(art), true) => {
            let class = if algo == Algo::KnownFeatures {
                ModelClass::singleton(&world.mdp)?
            } else {
                world.class.clone()
            };
            Some(lemma_diagnostics(art, &run.rows, &world.mdp, &class)?)
        }
        _ => None,
    };
    Ok(RegretRecord {
        algo,
        seed,
        slope: rows_slope(&run.rows).ok(),
        rows: run.rows,
        diagnostics,
    })
}

/// Runs every `(algo, seed)` pair, in parallel on `jobs` threads (all
/// cores when `None`). Results are ordered by algorithm, then seed, and do
/// not depend on the thread count.
pub fn run_experiment(config: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutput> {
    config.validate()?;
    let (mdp, _) = build_instance(&config.instance, config.k_episodes)?;
    let schedule = polo_schedule(config, &mdp)?;
    let mut resolved = BTreeMap::new();
    for &algo in &config.algos {
        if let Some(params) = algo_params(algo, &schedule.params) {
            resolved.insert(
                algo.as_str().to_string(),
                ResolvedParams {
                    params,
                    xi_raw: schedule.xi_raw,
                    epoch_len_raw: schedule.epoch_len_raw,
                    n_epochs: schedule.epochs.n_epochs(),
                    class_size: if algo == Algo::KnownFeatures { 1 } else { config.model_class.size },
                },
            );
        }
    }

    let tasks: Vec<(Algo, u64)> =
        config.algos.iter().flat_map(|&a| config.seeds.iter().map(move |&s| (a, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(algo, seed)| run_one(config, algo, seed))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(&records, &config.algos);
    Ok(ExperimentOutput {
        config: config.clone(),
        records,
        summary,
        resolved,
    })
}

/// One summary row per swept value.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub row: SummaryRow,
}

pub const SWEEP_HEADER: &str =
    "param,value,algo,n_seeds,cum_regret_mean,cum_regret_stderr,slope_mean,slope_stderr,slope_fits";

pub fn run_sweep(
    config: &ExperimentConfig,
    param: &str,
    values: &[f64],
    jobs: Option<usize>,
) -> Result<(Vec<SweepRow>, Vec<ExperimentOutput>)> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::new();
    let mut outputs = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = config.clone();
        cfg.set_param(param, v)?;
        let out = run_experiment(&cfg, jobs)?;
        rows.extend(out.summary.iter().map(|r| SweepRow { value: v, row: r.clone() }));
        outputs.push(out);
    }
    Ok((rows, outputs))
}

pub fn sweep_csv(param: &str, rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{param},{},{}\n", r.value, r.row.to_csv()));
    }
    out
}
