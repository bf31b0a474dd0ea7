//! Aggregation over estimated source sets.
//!
//! Half of the target sample ranks the sources by a truncated RKHS distance
//! between slope estimates; the nested top-`l` sets each feed a two-step
//! transfer fit, and the other half of the target aggregates those fits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fda::TaskDataset;
use crate::flr::{fit_oflr, resolve_oflr_lambda, truncated_rkhs_distance, BetaEstimate, FitOptions, LambdaRule, LinearModel};
use crate::kernels::{mercer_eigensystem_on_grid, KernelSpec};
use crate::transfer::{fit_tlflr_with_rule, TransferMode};

/// Default truncation level for the relatedness distance.
pub const DEFAULT_TRUNCATION: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSets {
    /// `sets[l]` holds the `l` sources with the smallest distances; `sets[0]` is empty.
    pub sets: Vec<Vec<usize>>,
    /// `distances[k]` is the estimated distance of source `k`.
    pub distances: Vec<f64>,
    /// Source indices sorted by ascending distance, ties by index.
    pub ranking: Vec<usize>,
}

impl CandidateSets {
    /// Nested sets from per-source distances.
    pub fn from_distances(distances: Vec<f64>) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::arg("need at least one source"));
        }
        if distances.iter().any(|d| d.is_nan()) {
            return Err(Error::numerical("source distance is NaN"));
        }
        let mut ranking: Vec<usize> = (0..distances.len()).collect();
        ranking.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        let sets = (0..=ranking.len())
            .map(|l| {
                let mut s = ranking[..l].to_vec();
                s.sort_unstable();
                s
            })
            .collect();
        Ok(CandidateSets { sets, distances, ranking })
    }

    /// Index `l` of the candidate equal to `set` (order-insensitive), if any.
    pub fn position_of(&self, set: &[usize]) -> Option<usize> {
        let mut want = set.to_vec();
        want.sort_unstable();
        self.sets.iter().position(|s| *s == want)
    }
}

/// One predictor in the aggregation dictionary.
#[derive(Clone, Debug)]
pub struct DictionaryEntry {
    pub label: String,
    pub model: LinearModel,
    pub beta: BetaEstimate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AggregationMethod {
    #[default]
    SparseStar,
    ExpWeights { temperature: f64 },
}

#[derive(Clone, Debug)]
pub struct AggregationResult {
    pub weights: Vec<f64>,
    pub support: Vec<usize>,
    pub aggregated_beta: BetaEstimate,
    pub aggregated_intercept: f64,
    pub method: AggregationMethod,
    pub model: LinearModel,
    /// Mean squared holdout error of each dictionary member.
    pub member_risks: Vec<f64>,
    /// Mean squared holdout error of the aggregate.
    pub holdout_risk: f64,
}

/// Random split of the target into `I` (`⌊n₀/2⌋` rows) and its complement.
pub fn split_target(target: &TaskDataset, seed: u64) -> Result<(TaskDataset, TaskDataset)> {
    let n = target.len();
    if n < 4 {
        return Err(Error::arg(format!("target needs at least 4 rows to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = idx.split_at(n / 2);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    Ok((target.select(&a), target.select(&b)))
}

/// Ranks sources by the truncated distance between each source's own fit and
/// the fit on `half_i`, then builds the nested candidate sets.
pub fn build_candidate_sets(
    half_i: &TaskDataset,
    sources: &[&TaskDataset],
    kernel: &KernelSpec,
    m: usize,
    rule: &LambdaRule,
    opts: &FitOptions,
    seed: u64,
) -> Result<CandidateSets> {
    if sources.is_empty() {
        return Err(Error::arg("need at least one source"));
    }
    let base = oflr_with_rule(half_i, kernel, rule, opts, seed)?;
    let eig = mercer_eigensystem_on_grid(kernel, &base.beta.grid, m)?;
    if eig.count() < m {
        return Err(Error::arg(format!("kernel provides only {} eigenpairs, asked for {m}", eig.count())));
    }
    let distances = sources
        .iter()
        .map(|s| {
            let fit = oflr_with_rule(s, kernel, rule, opts, seed)?;
            truncated_rkhs_distance(&base.beta, &fit.beta, &eig, m)
        })
        .collect::<Result<Vec<_>>>()?;
    CandidateSets::from_distances(distances)
}

fn oflr_with_rule(
    data: &TaskDataset,
    kernel: &KernelSpec,
    rule: &LambdaRule,
    opts: &FitOptions,
    seed: u64,
) -> Result<DictionaryEntry> {
    let lambda = resolve_oflr_lambda(rule, &[data], kernel, seed)?;
    let fit = fit_oflr(&[data], kernel, lambda, opts)?;
    Ok(DictionaryEntry { label: data.task_id.clone(), model: fit.model, beta: fit.beta_on_grid })
}

fn member_predictions(dictionary: &[DictionaryEntry], holdout: &TaskDataset) -> Result<Vec<Vec<f64>>> {
    if dictionary.is_empty() {
        return Err(Error::arg("dictionary is empty"));
    }
    if holdout.is_empty() {
        return Err(Error::arg("holdout is empty"));
    }
    let grid = &dictionary[0].beta.grid;
    if dictionary.iter().any(|d| d.beta.grid != *grid) {
        return Err(Error::arg("dictionary slopes must share one evaluation grid"));
    }
    Ok(dictionary.iter().map(|d| d.model.predict_many(&holdout.curves)).collect())
}

fn mse(preds: &[f64], y: &[f64]) -> f64 {
    preds.iter().zip(y).map(|(p, y)| (y - p).powi(2)).sum::<f64>() / y.len() as f64
}

fn finish(
    dictionary: &[DictionaryEntry],
    holdout: &TaskDataset,
    weights: Vec<f64>,
    member_risks: Vec<f64>,
    method: AggregationMethod,
) -> AggregationResult {
    let support: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] > 0.0).collect();
    let kernel = *dictionary[0].model.slope.kernel();
    let model = LinearModel::combination(&kernel, support.iter().map(|&j| (weights[j], &dictionary[j].model)));
    let grid = &dictionary[0].beta.grid;
    let mut values = vec![0.0; grid.len()];
    for &j in &support {
        for (v, b) in values.iter_mut().zip(&dictionary[j].beta.values) {
            *v += weights[j] * b;
        }
    }
    let aggregated_beta = BetaEstimate { grid: grid.clone(), values };
    let holdout_risk = mse(&model.predict_many(&holdout.curves), &holdout.responses);
    AggregationResult {
        weights,
        support,
        aggregated_beta,
        aggregated_intercept: model.intercept,
        method,
        model,
        member_risks,
        holdout_risk,
    }
}

/// Star-shaped sparse aggregation: take the holdout risk minimizer `f*`, then
/// search every segment `θf* + (1−θ)f_j`, `θ ∈ [0, 1]`, for the best point.
pub fn sparse_aggregate_star(dictionary: &[DictionaryEntry], holdout: &TaskDataset) -> Result<AggregationResult> {
    let preds = member_predictions(dictionary, holdout)?;
    let y = &holdout.responses;
    let risks: Vec<f64> = preds.iter().map(|p| mse(p, y)).collect();
    let star = crate::flr::argmin_first(risks.iter().copied())
        .ok_or_else(|| Error::numerical("every dictionary member has a non-finite holdout risk"))?;
    let p_star = &preds[star];

    let mut best = (risks[star], star, 1.0);
    for (j, p) in preds.iter().enumerate() {
        if j == star {
            continue;
        }
        // risk(θ) = mean((y − p_j) − θ(p* − p_j))²
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..y.len() {
            let d = p_star[i] - p[i];
            num += (y[i] - p[i]) * d;
            den += d * d;
        }
        let theta = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 1.0 };
        if theta == 1.0 {
            continue;
        }
        let combo: Vec<f64> = p_star.iter().zip(p).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
        let r = mse(&combo, y);
        if r < best.0 {
            best = (r, j, theta);
        }
    }
    let mut weights = vec![0.0; dictionary.len()];
    let (_, j, theta) = best;
    weights[star] = theta;
    if j != star {
        weights[j] = 1.0 - theta;
    }
    Ok(finish(dictionary, holdout, weights, risks, AggregationMethod::SparseStar))
}

/// Exponential weights `w_j ∝ exp(−n·R̂_j/T)` with `R̂_j` the mean squared
/// holdout error.
pub fn exp_weights_aggregate(
    dictionary: &[DictionaryEntry],
    holdout: &TaskDataset,
    temperature: f64,
) -> Result<AggregationResult> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::arg(format!("temperature must be positive, got {temperature}")));
    }
    let preds = member_predictions(dictionary, holdout)?;
    let risks: Vec<f64> = preds.iter().map(|p| mse(p, &holdout.responses)).collect();
    let weights = exp_weights(&risks, holdout.len(), temperature)?;
    Ok(finish(dictionary, holdout, weights, risks, AggregationMethod::ExpWeights { temperature }))
}

/// Normalized `exp(−n·r_j/T)`, computed stably; non-finite risks get weight 0.
pub fn exp_weights(risks: &[f64], n: usize, temperature: f64) -> Result<Vec<f64>> {
    let scores: Vec<f64> = risks
        .iter()
        .map(|r| if r.is_finite() { -(n as f64) * r / temperature } else { f64::NEG_INFINITY })
        .collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::numerical("every dictionary member has a non-finite holdout risk"));
    }
    let raw: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[derive(Clone, Debug)]
pub struct AtlFlrFit {
    pub result: AggregationResult,
    pub candidates: CandidateSets,
    pub dictionary: Vec<DictionaryEntry>,
}

/// Full pipeline: split, rank, fit one transfer model per candidate set on
/// half `I`, aggregate on half `Iᶜ`.
#[allow(clippy::too_many_arguments)]
pub fn fit_atlflr(
    target: &TaskDataset,
    sources: &[&TaskDataset],
    kernel: &KernelSpec,
    m: usize,
    rule: &LambdaRule,
    method: AggregationMethod,
    opts: &FitOptions,
    seed: u64,
) -> Result<AtlFlrFit> {
    let (half_i, half_ic) = split_target(target, seed)?;
    let candidates = build_candidate_sets(&half_i, sources, kernel, m, rule, opts, seed)?;
    let mut dictionary = Vec::with_capacity(candidates.sets.len());
    dictionary.push(oflr_with_rule(&half_i, kernel, rule, opts, seed)?);
    for set in &candidates.sets[1..] {
        let chosen: Vec<&TaskDataset> = set.iter().map(|&k| sources[k]).collect();
        let fit = fit_tlflr_with_rule(&half_i, &chosen, kernel, rule, TransferMode::Full, opts, seed)?;
        dictionary.push(DictionaryEntry {
            label: format!("top-{}", set.len()),
            model: fit.model,
            beta: fit.combined_beta,
        });
    }
    dictionary[0].label = "target-only".to_string();
    let result = match method {
        AggregationMethod::SparseStar => sparse_aggregate_star(&dictionary, &half_ic)?,
        AggregationMethod::ExpWeights { temperature } => exp_weights_aggregate(&dictionary, &half_ic, temperature)?,
    };
    Ok(AtlFlrFit { result, candidates, dictionary })
}
