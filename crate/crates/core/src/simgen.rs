//! Synthetic scenarios: Gaussian-process predictors, the three target slopes,
//! `h`-transferable and negative source slopes, and noisy responses.
//!
//! Randomness is split into independent streams: task `k` of replication `r`
//! under base seed `s` draws from `ChaCha8(s)` on stream `(r << 32) | k`.
//! The target is task 0 and source `l` (0-based) is task `l + 1`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fda::{quad_weights, uniform_grid, Curve, TaskDataset};
use crate::flr::BetaEstimate;
use crate::kernels::{KernelKind, KernelSpec, MaternNu};
use crate::linalg::cholesky_with_jitter;

/// Reserved task index for drawing the transferable set in mixture experiments.
pub const SUBSET_STREAM: u32 = u32::MAX;
/// Reserved task index for Monte-Carlo risk evaluation.
pub const RISK_STREAM: u32 = u32::MAX - 1;

/// RNG for one task of one replication.
pub fn stream_rng(seed: u64, replication: u32, task: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(replication) << 32) | u64::from(task));
    rng
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFunction {
    /// `sin(πt)`, the predictor mean.
    #[default]
    SinPiT,
    /// `cos(2πt)`, the mean of negative-source slopes.
    Cos2PiT,
    Zero,
}

impl MeanFunction {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            MeanFunction::SinPiT => (PI * t).sin(),
            MeanFunction::Cos2PiT => (2.0 * PI * t).cos(),
            MeanFunction::Zero => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BetaScenario {
    /// `Σ 4√2 (−1)^{k−1} k^{−2} ψ_k(t)`.
    Series,
    /// `4 cos(3πt)`.
    Cosine,
    /// `4 cos(3πt) + 4 sin(3πt)`.
    CosineSine,
}

impl TryFrom<u8> for BetaScenario {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(BetaScenario::Series),
            2 => Ok(BetaScenario::Cosine),
            3 => Ok(BetaScenario::CosineSine),
            _ => Err(format!("beta scenario must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<BetaScenario> for u8 {
    fn from(s: BetaScenario) -> u8 {
        match s {
            BetaScenario::Series => 1,
            BetaScenario::Cosine => 2,
            BetaScenario::CosineSine => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeVariant {
    /// Slopes drawn from a GP with covariance `exp(−15|s−t|)`.
    #[default]
    Ou,
    /// Slopes drawn from a GP with covariance `min(s, t)`.
    Wiener,
}

impl NegativeVariant {
    pub fn kernel(self) -> KernelSpec {
        let kind = match self {
            NegativeVariant::Ou => KernelKind::OrnsteinUhlenbeck { rate: 15.0 },
            NegativeVariant::Wiener => KernelKind::Wiener,
        };
        KernelSpec::new(kind).expect("fixed kernel parameters are valid")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub beta_scenario: BetaScenario,
    pub h: f64,
    /// 0-based indices of the transferable sources; the rest are negative.
    pub transferable_ids: Vec<usize>,
    pub num_sources: usize,
    pub n0: usize,
    pub nl: usize,
    pub grid_points: usize,
    pub noise_sd: f64,
    /// Noise level for sources when it differs from the target's.
    pub source_noise_sd: Option<f64>,
    pub target_cov: KernelSpec,
    pub source_cov: KernelSpec,
    pub predictor_mean: MeanFunction,
    pub negative_variant: NegativeVariant,
    pub series_truncation: usize,
    pub seed: u64,
    pub replication: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            beta_scenario: BetaScenario::Cosine,
            h: 1.0,
            transferable_ids: (0..20).collect(),
            num_sources: 20,
            n0: 150,
            nl: 100,
            grid_points: 50,
            noise_sd: 0.5,
            source_noise_sd: None,
            target_cov: KernelSpec::matern(MaternNu::Half, 1.0).expect("valid"),
            source_cov: KernelSpec::matern(MaternNu::ThreeHalves, 1.0).expect("valid"),
            predictor_mean: MeanFunction::SinPiT,
            negative_variant: NegativeVariant::Ou,
            series_truncation: 50,
            seed: 0,
            replication: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::arg(format!("h must be nonnegative, got {}", self.h)));
        }
        if self.transferable_ids.len() > self.num_sources {
            return Err(Error::arg("more transferable sources than sources"));
        }
        let mut ids = self.transferable_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.transferable_ids.len() || ids.last().is_some_and(|&i| i >= self.num_sources) {
            return Err(Error::arg(format!(
                "transferable ids must be distinct and below {}",
                self.num_sources
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::arg("grid_points must be at least 2"));
        }
        if self.n0 < 1 || (self.num_sources > 0 && self.nl < 1) {
            return Err(Error::arg("sample sizes must be at least 1"));
        }
        let noise_ok = |s: f64| s >= 0.0 && s.is_finite();
        if !noise_ok(self.noise_sd) || !self.source_noise_sd.is_none_or(noise_ok) {
            return Err(Error::arg("noise standard deviations must be nonnegative"));
        }
        if self.series_truncation < 1 {
            return Err(Error::arg("series_truncation must be at least 1"));
        }
        self.target_cov.validate()?;
        self.source_cov.validate()
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(0.0, 1.0, self.grid_points).expect("grid_points validated")
    }

    pub fn is_transferable(&self, source: usize) -> bool {
        self.transferable_ids.contains(&source)
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedScenario {
    pub config: ScenarioConfig,
    pub target: TaskDataset,
    pub sources: Vec<TaskDataset>,
    pub true_target_beta: BetaEstimate,
    pub true_source_betas: Vec<BetaEstimate>,
}

impl GeneratedScenario {
    pub fn source_refs(&self) -> Vec<&TaskDataset> {
        self.sources.iter().collect()
    }

    pub fn transferable_sources(&self) -> Vec<&TaskDataset> {
        self.config.transferable_ids.iter().map(|&i| &self.sources[i]).collect()
    }

    /// Writes target then sources in the CSV layout read by [`crate::fda::io::read_tasks`].
    pub fn write_csv<W1: Write, W2: Write>(&self, curves: W1, responses: W2) -> Result<()> {
        let mut all = vec![self.target.clone()];
        all.extend(self.sources.iter().cloned());
        crate::fda::io::write_tasks(&all, curves, responses)
    }
}

fn psi(k: usize, t: f64) -> f64 {
    2f64.sqrt() * (PI * k as f64 * t).cos()
}

fn series_on_grid(coefs: &[f64], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&t| coefs.iter().enumerate().map(|(i, c)| c * psi(i + 1, t)).sum())
        .collect()
}

/// Draws `n` samples of `N(mean, cov)` through a jittered Cholesky factor.
pub fn sample_mvn(mean: &[f64], cov: &DMatrix<f64>, n: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::arg("covariance shape does not match the mean"));
    }
    let max_diag = (0..d).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    let (chol, _) = cholesky_with_jitter(cov, max_diag, 1e-10, 1e-6)?;
    let l = chol.l();
    Ok((0..n)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &l * z;
            mean.iter().zip(x.iter()).map(|(m, x)| m + x).collect()
        })
        .collect())
}

/// `n` Gaussian-process paths on `grid` with the given mean and covariance kernel.
pub fn sample_gp(
    mean: MeanFunction,
    cov: &KernelSpec,
    grid: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Curve>> {
    if n == 0 {
        return Err(Error::arg("need at least one draw"));
    }
    let shared: Arc<[f64]> = Arc::from(grid);
    let c = cov.gram_cross(grid, grid)?;
    let mu: Vec<f64> = grid.iter().map(|&t| mean.eval(t)).collect();
    sample_mvn(&mu, &c, n, rng)?
        .into_iter()
        .map(|v| Curve::new(shared.clone(), v))
        .collect()
}

/// One of the three target slopes evaluated on `grid`.
pub fn target_beta(scenario: BetaScenario, grid: &[f64], truncation: usize) -> Result<BetaEstimate> {
    let values = match scenario {
        BetaScenario::Series => {
            let coefs: Vec<f64> = (1..=truncation)
                .map(|k| {
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    4.0 * 2f64.sqrt() * sign / (k * k) as f64
                })
                .collect();
            series_on_grid(&coefs, grid)
        }
        BetaScenario::Cosine => grid.iter().map(|&t| 4.0 * (3.0 * PI * t).cos()).collect(),
        BetaScenario::CosineSine => grid.iter().map(|&t| 4.0 * (3.0 * PI * t).cos() + 4.0 * (3.0 * PI * t).sin()).collect(),
    };
    BetaEstimate::new(grid.to_vec(), values)
}

/// Coefficients `U_k √12 h / (π k²)` of the transferable perturbation in the `ψ_k` basis.
pub fn perturbation_coefficients(h: f64, uniforms: &[f64]) -> Vec<f64> {
    uniforms
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let k = (i + 1) as f64;
            u * 12f64.sqrt() * h / (PI * k * k)
        })
        .collect()
}

/// Target slope plus a random perturbation with `U_k ~ U[−1, 1]`.
pub fn transferable_source_beta(target: &BetaEstimate, h: f64, rng: &mut impl Rng, truncation: usize) -> BetaEstimate {
    let u: Vec<f64> = (0..truncation).map(|_| rng.random_range(-1.0..=1.0)).collect();
    transferable_source_beta_with(target, h, &u)
}

/// As [`transferable_source_beta`] with the uniforms supplied by the caller.
pub fn transferable_source_beta_with(target: &BetaEstimate, h: f64, uniforms: &[f64]) -> BetaEstimate {
    if h == 0.0 {
        return target.clone();
    }
    let pert = series_on_grid(&perturbation_coefficients(h, uniforms), &target.grid);
    BetaEstimate {
        grid: target.grid.clone(),
        values: target.values.iter().zip(pert).map(|(b, p)| b + p).collect(),
    }
}

/// A negative-transfer slope: a GP path with mean `cos(2πt)`.
pub fn negative_source_beta(variant: NegativeVariant, grid: &[f64], rng: &mut impl Rng) -> Result<BetaEstimate> {
    let path = sample_gp(MeanFunction::Cos2PiT, &variant.kernel(), grid, 1, rng)?.remove(0);
    BetaEstimate::new(grid.to_vec(), path.values().to_vec())
}

fn responses(curves: &[Curve], beta: &BetaEstimate, weights: &[f64], sd: f64, rng: &mut impl Rng) -> Vec<f64> {
    curves
        .iter()
        .map(|c| {
            let signal: f64 = c.values().iter().zip(&beta.values).zip(weights).map(|((x, b), w)| x * b * w).sum();
            signal + sd * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// Generates the target and all sources for one replication.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<GeneratedScenario> {
    config.validate()?;
    let grid = config.grid();
    let weights = quad_weights(&grid)?;
    let beta0 = target_beta(config.beta_scenario, &grid, config.series_truncation)?;

    let mut rng = stream_rng(config.seed, config.replication, 0);
    let x0 = sample_gp(config.predictor_mean, &config.target_cov, &grid, config.n0, &mut rng)?;
    let y0 = responses(&x0, &beta0, &weights, config.noise_sd, &mut rng);
    let target = TaskDataset::new("target", x0, y0)?;

    let sd = config.source_noise_sd.unwrap_or(config.noise_sd);
    let mut sources = Vec::with_capacity(config.num_sources);
    let mut betas = Vec::with_capacity(config.num_sources);
    for l in 0..config.num_sources {
        let mut rng = stream_rng(config.seed, config.replication, l as u32 + 1);
        let beta = if config.is_transferable(l) {
            transferable_source_beta(&beta0, config.h, &mut rng, config.series_truncation)
        } else {
            negative_source_beta(config.negative_variant, &grid, &mut rng)?
        };
        let x = sample_gp(config.predictor_mean, &config.source_cov, &grid, config.nl, &mut rng)?;
        let y = responses(&x, &beta, &weights, sd, &mut rng);
        sources.push(TaskDataset::new(format!("source{}", l + 1), x, y)?);
        betas.push(beta);
    }
    Ok(GeneratedScenario {
        config: config.clone(),
        target,
        sources,
        true_target_beta: beta0,
        true_source_betas: betas,
    })
}

#[cfg(test)]
mod tests;
