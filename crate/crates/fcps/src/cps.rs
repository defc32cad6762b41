//! Passive contextual policy search.
//!
//! Two selectors share one experience store. The baseline (BO-CPS) fits a
//! GP from the full context and parameters to the rewards observed at
//! collection time. The factored selector (FCPS-BO) keeps outcomes instead
//! of rewards, re-scores every stored trajectory against the current query
//! target, and fits a GP from environment context and parameters to those
//! re-evaluated rewards. Both select parameters by maximizing GP-UCB.

use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cannon::ImpactPoint;
use crate::gp::{optimize_hyperparams, GpModel, HyperparamBounds, Hyperparams};
use crate::opt::{maximize_acquisition, Bounds};

/// Refinement starts used by every acquisition maximization.
pub const ACQUISITION_RESTARTS: usize = 5;

/// Task context: a target component (scored against outcomes) and an
/// environment component (may be empty).
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub target: Vec<f64>,
    pub environment: Vec<f64>,
}

/// Sufficient statistic of one trajectory: where the ball hit. Together
/// with the commanded parameters on the record this is enough to score the
/// episode against any target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub impact_x: f64,
    pub impact_y: f64,
    pub impact_z: f64,
}

impl From<ImpactPoint> for Outcome {
    fn from(p: ImpactPoint) -> Self {
        Self {
            impact_x: p.x,
            impact_y: p.y,
            impact_z: p.z,
        }
    }
}

impl Outcome {
    pub fn impact(&self) -> ImpactPoint {
        ImpactPoint {
            x: self.impact_x,
            y: self.impact_y,
            z: self.impact_z,
        }
    }
}

/// One stored trial. Serializes as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    #[serde(rename = "s_e")]
    pub environment_context: Vec<f64>,
    pub theta: Vec<f64>,
    pub outcome: Outcome,
    pub original_target: Vec<f64>,
    pub original_reward: f64,
    pub seed: u64,
}

/// Re-scores a stored episode against an arbitrary query target.
pub type RewardFn<'a> = &'a (dyn Fn(&[f64], &EpisodeRecord) -> f64 + Sync);

/// Append-only experience store plus the declared search boxes.
#[derive(Debug, Clone)]
pub struct ExperienceDataset {
    pub records: Vec<EpisodeRecord>,
    pub theta_bounds: Bounds,
    pub target_bounds: Bounds,
    pub env_bounds: Bounds,
}

impl ExperienceDataset {
    pub fn new(theta_bounds: Bounds, target_bounds: Bounds, env_bounds: Bounds) -> Self {
        Self {
            records: Vec::new(),
            theta_bounds,
            target_bounds,
            env_bounds,
        }
    }

    pub fn push(&mut self, record: EpisodeRecord) {
        assert!(
            self.theta_bounds.contains(&record.theta),
            "record theta out of bounds"
        );
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// GP input box for the factored model: environment context then theta.
    pub fn fcps_input_bounds(&self) -> Bounds {
        self.env_bounds.join(&self.theta_bounds)
    }

    /// GP input box for the baseline: target, environment context, theta.
    pub fn bocps_input_bounds(&self) -> Bounds {
        self.target_bounds.join(&self.env_bounds).join(&self.theta_bounds)
    }
}

/// Query-specific dataset: one `(s_e + theta, re-evaluated reward)` entry
/// per record, in storage order.
pub fn build_query_dataset(
    d: &ExperienceDataset,
    query_target: &[f64],
    reward: RewardFn,
) -> Vec<(Vec<f64>, f64)> {
    d.records
        .iter()
        .map(|rec| {
            let mut input = rec.environment_context.clone();
            input.extend_from_slice(&rec.theta);
            (input, reward(query_target, rec))
        })
        .collect()
}

/// GP-UCB acquisition value at one (already normalized) query input.
pub fn ucb(model: &GpModel, query: &[f64], kappa: f64) -> f64 {
    assert!(kappa >= 0.0, "kappa must be non-negative");
    if kappa == 0.0 {
        model.predict_mean(query)
    } else {
        let (mean, sd) = model.predict(query);
        mean + kappa * sd
    }
}

/// Current kernel hyperparameters plus the refit policy: re-optimize the
/// marginal likelihood when the dataset reaches 2 or 5 records and then at
/// every multiple of `refit_period`, otherwise reuse.
#[derive(Debug, Clone)]
pub struct HpSchedule {
    pub hp: Hyperparams,
    pub restarts: usize,
    pub refit_period: usize,
}

impl HpSchedule {
    pub fn new(input_dim: usize, restarts: usize, refit_period: usize) -> Self {
        assert!(refit_period >= 1);
        Self {
            hp: Hyperparams::default_for_dim(input_dim),
            restarts,
            refit_period,
        }
    }

    pub fn refit_due(&self, n: usize) -> bool {
        n == 2 || n == 5 || (n >= self.refit_period && n % self.refit_period == 0)
    }
}

/// Centers and scales to unit variance; fewer than two values (or constant
/// values) pass through unscaled so a lone observation keeps its sign
/// against the zero prior mean.
pub fn standardize(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = values.len();
    if n < 2 {
        return (values.to_vec(), 0.0, 1.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std <= 1e-12 * (1.0 + mean.abs()) {
        return (values.to_vec(), 0.0, 1.0);
    }
    (
        values.iter().map(|v| (v - mean) / std).collect(),
        mean,
        std,
    )
}

fn normalize_point(bounds: &Bounds, raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    bounds.normalize(raw, &mut out);
    out
}

fn normalized_query(bounds: &Bounds, parts: &[&[f64]]) -> Vec<f64> {
    let mut raw = Vec::with_capacity(bounds.dim());
    for p in parts {
        raw.extend_from_slice(p);
    }
    normalize_point(bounds, &raw)
}

fn target_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 1.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64
}

/// Normalized inputs and standardized labels for the factored model at one
/// query target.
fn fcps_training_data(
    d: &ExperienceDataset,
    query_target: &[f64],
    reward: RewardFn,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let in_bounds = d.fcps_input_bounds();
    let dq = build_query_dataset(d, query_target, reward);
    let inputs = dq.iter().map(|(x, _)| normalize_point(&in_bounds, x)).collect();
    let raw: Vec<f64> = dq.iter().map(|p| p.1).collect();
    let (y, _, _) = standardize(&raw);
    (inputs, y)
}

fn bocps_training_data(d: &ExperienceDataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    let in_bounds = d.bocps_input_bounds();
    let inputs = d
        .records
        .iter()
        .map(|rec| {
            normalized_query(
                &in_bounds,
                &[&rec.original_target, &rec.environment_context, &rec.theta],
            )
        })
        .collect();
    let raw: Vec<f64> = d.records.iter().map(|r| r.original_reward).collect();
    let (y, _, _) = standardize(&raw);
    (inputs, y)
}

fn maybe_refit(
    schedule: &mut HpSchedule,
    inputs: &[Vec<f64>],
    targets: &[f64],
    rng: &mut ChaCha8Rng,
) {
    let n = inputs.len();
    if n >= 2 && schedule.refit_due(n) {
        let dim = inputs[0].len();
        let bounds = HyperparamBounds::standard(&vec![1.0; dim], target_variance(targets));
        schedule.hp = optimize_hyperparams(
            inputs,
            targets,
            &bounds,
            &schedule.hp,
            schedule.restarts,
            rng,
        );
    }
}

/// Hyperparameter refit hook for callers that fit their own models (the
/// active setting): refits on the dataset re-scored at `query_target`
/// when the schedule is due.
pub fn maybe_refit_fcps(
    d: &ExperienceDataset,
    query_target: &[f64],
    reward: RewardFn,
    schedule: &mut HpSchedule,
    rng: &mut ChaCha8Rng,
) {
    if d.len() < 2 {
        return;
    }
    let (inputs, y) = fcps_training_data(d, query_target, reward);
    maybe_refit(schedule, &inputs, &y, rng);
}

/// Factored model for one query target with the given (fixed) kernel.
pub fn fit_fcps_model(
    d: &ExperienceDataset,
    query_target: &[f64],
    reward: RewardFn,
    hp: &Hyperparams,
) -> GpModel {
    let (inputs, y) = fcps_training_data(d, query_target, reward);
    GpModel::fit(inputs, y, hp.clone()).expect("factored GP fit failed")
}

/// Factored models for many query targets over the same records: the
/// kernel matrix does not depend on the labels, so one factorization is
/// shared and only the label solves differ.
pub fn fit_fcps_models_shared(
    d: &ExperienceDataset,
    query_targets: &[Vec<f64>],
    reward: RewardFn,
    hp: &Hyperparams,
) -> Vec<GpModel> {
    assert!(!d.is_empty() && !query_targets.is_empty());
    let base = fit_fcps_model(d, &query_targets[0], reward, hp);
    let mut models = Vec::with_capacity(query_targets.len());
    models.push(base);
    for target in &query_targets[1..] {
        let raw: Vec<f64> = d.records.iter().map(|rec| reward(target, rec)).collect();
        let (y, _, _) = standardize(&raw);
        models.push(models[0].refit_targets(y));
    }
    models
}

/// Baseline model over all records with the given kernel.
pub fn fit_bocps_model(d: &ExperienceDataset, hp: &Hyperparams) -> GpModel {
    let (inputs, y) = bocps_training_data(d);
    GpModel::fit(inputs, y, hp.clone()).expect("baseline GP fit failed")
}

/// Acquisition objective over theta for a factored model: the environment
/// slice of the query is held fixed.
pub fn fcps_objective<'m>(
    model: &'m GpModel,
    d: &ExperienceDataset,
    environment: &'m [f64],
    kappa: f64,
) -> impl FnMut(&[f64]) -> f64 + 'm {
    let in_bounds = d.fcps_input_bounds();
    move |theta: &[f64]| ucb(model, &normalized_query(&in_bounds, &[environment, theta]), kappa)
}

/// Acquisition objective over theta for the baseline model: the full query
/// context is held fixed.
pub fn bocps_objective<'m>(
    model: &'m GpModel,
    d: &ExperienceDataset,
    query: &'m Context,
    kappa: f64,
) -> impl FnMut(&[f64]) -> f64 + 'm {
    let in_bounds = d.bocps_input_bounds();
    move |theta: &[f64]| {
        ucb(
            model,
            &normalized_query(&in_bounds, &[&query.target, &query.environment, theta]),
            kappa,
        )
    }
}

/// FCPS-BO parameter selection: re-score experience at the query target,
/// fit the factored GP, maximize GP-UCB over theta. An empty dataset falls
/// back to a uniform random draw.
pub fn select_parameters_fcps(
    d: &ExperienceDataset,
    query: &Context,
    kappa: f64,
    schedule: &mut HpSchedule,
    reward: RewardFn,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    if d.is_empty() {
        return d.theta_bounds.sample_uniform(rng);
    }
    let (inputs, y) = fcps_training_data(d, &query.target, reward);
    maybe_refit(schedule, &inputs, &y, rng);
    let model = GpModel::fit(inputs, y, schedule.hp.clone()).expect("factored GP fit failed");
    let objective = fcps_objective(&model, d, &query.environment, kappa);
    maximize_acquisition(objective, &d.theta_bounds, ACQUISITION_RESTARTS, rng)
}

/// BO-CPS parameter selection: fit a GP from `(target, s_e, theta)` to the
/// originally observed rewards and maximize GP-UCB over theta with the
/// query context fixed.
pub fn select_parameters_bocps(
    d: &ExperienceDataset,
    query: &Context,
    kappa: f64,
    schedule: &mut HpSchedule,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    if d.is_empty() {
        return d.theta_bounds.sample_uniform(rng);
    }
    let (inputs, y) = bocps_training_data(d);
    maybe_refit(schedule, &inputs, &y, rng);
    let model = GpModel::fit(inputs, y, schedule.hp.clone()).expect("baseline GP fit failed");
    let objective = bocps_objective(&model, d, query, kappa);
    maximize_acquisition(objective, &d.theta_bounds, ACQUISITION_RESTARTS, rng)
}

/// Writes records as JSON lines. Round-trips bit-exactly.
pub fn save_records(path: &Path, records: &[EpisodeRecord]) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        writeln!(w)?;
    }
    w.flush()
}

pub fn load_records(path: &Path) -> io::Result<Vec<EpisodeRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = io::BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}
