//! Forecast-error distributions: sampling, maximum-likelihood normal fits and
//! robust boxes.
//!
//! Error vectors are period-major (`t * n_t + j`) over the per-period error
//! coordinates of the distribution network. Values are per-unit real power.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::pdn::PdnNetwork;

/// Scenarios per random stream.
pub const CHUNK: usize = 1024;

const MAX_CONSECUTIVE_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),
    #[error("rejection sampling stalled: {0} consecutive rejections")]
    RejectionStall(usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("quantile level {0} is outside (0, 1)")]
    QuantileOutOfRange(f64),
    #[error("covariance is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionKind {
    /// Global error shared by all coordinates of a period plus independent nodal errors.
    TruncatedMvNormal { sigma_global: f64, sigma_node: f64 },
    /// Multivariate t with equal pairwise correlation over the whole horizon.
    TruncatedMvT { dof: f64, correlation: f64, alpha: f64 },
}

impl DistributionKind {
    pub fn default_truncation(&self) -> f64 {
        match self {
            DistributionKind::TruncatedMvNormal { .. } => 3.0,
            DistributionKind::TruncatedMvT { .. } => 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDistribution {
    pub kind: DistributionKind,
    /// Forecast ρ̂ per coordinate of the full error vector.
    pub forecasts: Vec<f64>,
    /// Coordinates per period.
    pub n_t: usize,
    /// Truncation bound in nominal standard deviations.
    pub truncation: f64,
}

impl ErrorDistribution {
    pub fn new(kind: DistributionKind, forecasts: Vec<f64>, n_t: usize) -> Result<Self, UncertaintyError> {
        let d = ErrorDistribution { truncation: kind.default_truncation(), kind, forecasts, n_t };
        d.check()?;
        Ok(d)
    }

    /// Forecasts taken from the real demand of every error coordinate of `net`.
    pub fn for_network(kind: DistributionKind, net: &PdnNetwork) -> Result<Self, UncertaintyError> {
        let coords = net.error_coords();
        let mut forecasts = Vec::with_capacity(coords.len() * net.periods);
        for t in 0..net.periods {
            for c in &coords {
                forecasts.push(net.buses[c.bus].p_demand[t][c.phase]);
            }
        }
        Self::new(kind, forecasts, coords.len())
    }

    pub fn check(&self) -> Result<(), UncertaintyError> {
        let bad = |m: &str| Err(UncertaintyError::InvalidParameter(m.to_string()));
        if self.n_t == 0 || self.forecasts.len() % self.n_t != 0 {
            return bad("forecast length must be a positive multiple of the per-period coordinate count");
        }
        if self.forecasts.iter().any(|f| !f.is_finite()) {
            return bad("non-finite forecast");
        }
        if !(self.truncation > 0.0) {
            return bad("truncation must be positive");
        }
        match self.kind {
            DistributionKind::TruncatedMvNormal { sigma_global, sigma_node } => {
                if !(sigma_global >= 0.0 && sigma_node >= 0.0) {
                    return bad("standard deviation fractions must be nonnegative");
                }
            }
            DistributionKind::TruncatedMvT { dof, correlation, alpha } => {
                if !(dof > 2.0) {
                    return bad("degrees of freedom must exceed 2");
                }
                if !(alpha >= 0.0) {
                    return bad("scale fraction must be nonnegative");
                }
                if !(0.0..=1.0).contains(&correlation) {
                    return bad("pairwise correlation must lie in [0, 1]");
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.forecasts.len()
    }

    pub fn periods(&self) -> usize {
        self.forecasts.len() / self.n_t
    }

    /// Untruncated standard deviation of coordinate `j`.
    pub fn nominal_std(&self, j: usize) -> f64 {
        let f = self.forecasts[j].abs();
        match self.kind {
            DistributionKind::TruncatedMvNormal { sigma_global, sigma_node } => f * sigma_global.hypot(sigma_node),
            DistributionKind::TruncatedMvT { alpha, .. } => alpha * f,
        }
    }

    pub fn label(&self) -> &'static str {
        "actual"
    }

    fn within_truncation(&self, v: &[f64]) -> bool {
        v.iter().enumerate().all(|(j, x)| x.abs() <= self.truncation * self.nominal_std(j))
    }

    fn draw_untruncated(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self.kind {
            DistributionKind::TruncatedMvNormal { sigma_global, sigma_node } => {
                for t in 0..self.periods() {
                    let g: f64 = rng.sample(StandardNormal);
                    for j in t * self.n_t..(t + 1) * self.n_t {
                        let e: f64 = rng.sample(StandardNormal);
                        out[j] = self.forecasts[j].abs() * (sigma_global * g + sigma_node * e);
                    }
                }
            }
            DistributionKind::TruncatedMvT { dof, correlation, alpha } => {
                let g: f64 = rng.sample(StandardNormal);
                let w = ChiSquared::new(dof).expect("dof checked").sample(rng);
                let mix = (dof / w).sqrt() * ((dof - 2.0) / dof).sqrt();
                let (a, b) = (correlation.sqrt(), (1.0 - correlation).sqrt());
                for (j, o) in out.iter_mut().enumerate() {
                    let e: f64 = rng.sample(StandardNormal);
                    *o = alpha * self.forecasts[j].abs() * mix * (a * g + b * e);
                }
            }
        }
    }
}

/// A source of i.i.d. error vectors.
pub trait ScenarioSource: Sync {
    fn dim(&self) -> usize;
    fn label(&self) -> &'static str;
    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<(), UncertaintyError>;
}

impl ScenarioSource for ErrorDistribution {
    fn dim(&self) -> usize {
        ErrorDistribution::dim(self)
    }

    fn label(&self) -> &'static str {
        ErrorDistribution::label(self)
    }

    /// Whole-vector rejection until every coordinate is within the truncation bound.
    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<(), UncertaintyError> {
        for _ in 0..MAX_CONSECUTIVE_REJECTIONS {
            self.draw_untruncated(rng, out);
            if self.within_truncation(out) {
                return Ok(());
            }
        }
        Err(UncertaintyError::RejectionStall(MAX_CONSECUTIVE_REJECTIONS))
    }
}

/// Independent random stream for chunk `chunk` of a run seeded with `seed`.
pub fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// `count` draws as rows of a matrix. Scenario `i` always comes from stream
/// `i / CHUNK`, so results do not depend on the number of worker threads.
pub fn sample<S: ScenarioSource + ?Sized>(source: &S, count: usize, seed: u64) -> Result<DMatrix<f64>, UncertaintyError> {
    if count == 0 {
        return Err(UncertaintyError::TooFewSamples { needed: 1, got: 0 });
    }
    let n = source.dim();
    let chunks: Vec<Vec<f64>> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK.min(count - c * CHUNK);
            let mut rng = chunk_rng(seed, c);
            let mut buf = vec![0.0; rows * n];
            for r in 0..rows {
                source.draw(&mut rng, &mut buf[r * n..(r + 1) * n])?;
            }
            Ok(buf)
        })
        .collect::<Result<_, UncertaintyError>>()?;
    let flat: Vec<f64> = chunks.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(count, n, &flat))
}

/// Write a sample matrix as CSV, one scenario per row.
pub fn write_samples_csv<W: std::io::Write>(samples: &DMatrix<f64>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..samples.ncols()).map(|j| format!("e{j}")))?;
    for r in 0..samples.nrows() {
        w.write_record(samples.row(r).iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedNormal {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Lower-triangular (or symmetric, after an eigen fallback) `L` with `L·Lᵀ = Σ`.
    pub factor: DMatrix<f64>,
}

impl FittedNormal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, UncertaintyError> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(UncertaintyError::DimensionMismatch(format!(
                "mean has {} entries, covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 * cov.abs().max().max(1.0) {
            return Err(UncertaintyError::InvalidParameter(format!("covariance is not symmetric ({asym:e})")));
        }
        let factor = psd_factor(&cov)?;
        Ok(FittedNormal { mean, cov, factor })
    }

    pub fn zero_mean(cov: DMatrix<f64>) -> Result<Self, UncertaintyError> {
        Self::new(DVector::zeros(cov.nrows()), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Factor of the diagonal covariance block `start..start+len`.
    pub fn block_factor(&self, start: usize, len: usize) -> Result<DMatrix<f64>, UncertaintyError> {
        psd_factor(&self.cov.view((start, start), (len, len)).into_owned())
    }
}

impl ScenarioSource for FittedNormal {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn label(&self) -> &'static str {
        "fitted"
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<(), UncertaintyError> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = &self.mean + &self.factor * z;
        out.copy_from_slice(v.as_slice());
        Ok(())
    }
}

/// `L` with `L·Lᵀ = m`: Cholesky, or an eigen-decomposition square root for
/// singular matrices.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>, UncertaintyError> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = m.clone().symmetric_eigen();
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    let min = eig.eigenvalues.min();
    if min < -1e-9 * scale {
        return Err(UncertaintyError::NotPsd(min));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Sample mean and 1/N covariance of the rows of `samples`, plus a ridge of
/// `1e-12·trace/n` so the covariance is factorable.
pub fn fit_mle(samples: &DMatrix<f64>) -> Result<FittedNormal, UncertaintyError> {
    let (count, n) = samples.shape();
    if count < 2 {
        return Err(UncertaintyError::TooFewSamples { needed: 2, got: count });
    }
    let mean: DVector<f64> = samples.row_mean().transpose();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / count as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    let trace = cov.trace();
    if trace == 0.0 {
        log::warn!("all {count} samples are identical; fitted covariance is zero");
    }
    let ridge = if n > 0 { 1e-12 * trace / n as f64 } else { 0.0 };
    for i in 0..n {
        cov[(i, i)] += ridge;
    }
    FittedNormal::new(mean, cov)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustBox {
    pub half_width: Vec<f64>,
}

impl RobustBox {
    pub fn dim(&self) -> usize {
        self.half_width.len()
    }

    pub fn scaled(&self, factor: f64) -> RobustBox {
        RobustBox { half_width: self.half_width.iter().map(|h| h * factor).collect() }
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.iter().zip(&self.half_width).all(|(x, h)| x.abs() <= *h)
    }

    pub fn clip(&self, v: &mut [f64]) {
        for (x, h) in v.iter_mut().zip(&self.half_width) {
            *x = x.clamp(-h, *h);
        }
    }
}

/// Per-coordinate largest absolute sample value.
pub fn robust_box(samples: &DMatrix<f64>) -> Result<RobustBox, UncertaintyError> {
    if samples.nrows() == 0 {
        return Err(UncertaintyError::TooFewSamples { needed: 1, got: 0 });
    }
    let half_width = samples.column_iter().map(|c| c.iter().fold(0.0_f64, |m, v| m.max(v.abs()))).collect();
    Ok(RobustBox { half_width })
}

pub fn std_normal_quantile(q: f64) -> Result<f64, UncertaintyError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(UncertaintyError::QuantileOutOfRange(q));
    }
    Ok(Normal::standard().inverse_cdf(q))
}
