//! Two-step voxel-wise IVIM fitting.
//!
//! Step one fits a mono-exponential `S(b) = S0_high * exp(-b * ADC)` to the
//! b-values strictly above `b_threshold`. Step two fixes the tissue diffusion
//! coefficient `D` to that ADC and fits the biexponential
//! `S(b) = S0 * (f * exp(-D* b) + (1 - f) * exp(-D b))` over every b-value for
//! `S0`, `f` and `D*`. Both stages use [`crate::lm`] with `f` in `[0, 1]`,
//! `ADC` inside `adc_range` and `D* > D` enforced by reparameterization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{BinaryMask, DwiSeries, IvimMaps, Parameter, BVALUE_TOLERANCE};
use crate::lm::{lm_fit, FitProblem, LmOptions, Termination, Transform};

/// How the per-voxel `residual` map is computed from the final biexponential fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMetric {
    /// Root-mean-square residual divided by the fitted `S0` (dimensionless).
    #[default]
    NormalizedRmse,
    /// Root-mean-square residual in signal units.
    Rmse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvimFitConfig {
    /// ADC is fitted on b-values strictly greater than this (s/mm²).
    pub b_threshold: f64,
    /// Lower ADC bound, mm²/s.
    pub adc_lo: f64,
    /// Upper ADC bound, mm²/s.
    pub adc_hi: f64,
    /// Upper D* bound, mm²/s. Without one, noisy voxels can drift toward
    /// D* → ∞ where the perfusion term vanishes for every b > 0.
    pub d_star_max: Option<f64>,
    pub residual: ResidualMetric,
    pub lm: LmOptions,
}

impl Default for IvimFitConfig {
    fn default() -> Self {
        IvimFitConfig {
            b_threshold: 100.0,
            adc_lo: 1e-5,
            adc_hi: 1e-1,
            d_star_max: Some(1.0),
            residual: ResidualMetric::default(),
            lm: LmOptions::default(),
        }
    }
}

impl IvimFitConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if !(self.b_threshold.is_finite() && self.b_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "b_threshold must be >= 0, got {}",
                self.b_threshold
            )));
        }
        if !(self.adc_lo > 0.0 && self.adc_lo < self.adc_hi && self.adc_hi.is_finite()) {
            return Err(Error::Config(format!(
                "adc range must satisfy 0 < lo < hi, got [{}, {}]",
                self.adc_lo, self.adc_hi
            )));
        }
        if let Some(max) = self.d_star_max {
            if !(max.is_finite() && max > self.adc_hi) {
                return Err(Error::Config(format!(
                    "d_star_max must exceed adc_hi ({}), got {max}",
                    self.adc_hi
                )));
            }
        }
        if self.lm.max_iter == 0 || self.lm.lambda_up <= 1.0 || self.lm.lambda_down <= 1.0 {
            return Err(Error::Config(
                "lm needs max_iter > 0 and damping factors > 1".into(),
            ));
        }
        Ok(())
    }

    fn adc_transform(&self) -> Transform {
        Transform::Logistic {
            lo: self.adc_lo,
            hi: self.adc_hi,
        }
    }
}

/// One voxel's intensities, sorted by ascending b-value.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelSignal {
    bvalues: Vec<f64>,
    intensities: Vec<f64>,
}

impl VoxelSignal {
    pub fn new(bvalues: &[f64], intensities: &[f64]) -> std::result::Result<Self, VoxelFailure> {
        if bvalues.len() != intensities.len() {
            return Err(VoxelFailure::InvalidSignal("length mismatch"));
        }
        if intensities.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(VoxelFailure::InvalidSignal(
                "intensities must be finite and non-negative",
            ));
        }
        let mut pairs: Vec<(f64, f64)> = bvalues.iter().copied().zip(intensities.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (bvalues, intensities) = pairs.into_iter().unzip();
        Ok(VoxelSignal {
            bvalues,
            intensities,
        })
    }

    pub fn bvalues(&self) -> &[f64] {
        &self.bvalues
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn len(&self) -> usize {
        self.bvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bvalues.is_empty()
    }
}

/// Why a voxel was left unfitted.
#[derive(Clone, Debug, PartialEq)]
pub enum VoxelFailure {
    InvalidSignal(&'static str),
    /// Fewer than two distinct b-values above the threshold with positive signal.
    TooFewHighB,
    TooFewPoints,
    /// No positive signal at b = 0.
    NoBaseline,
    Solver(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdcFit {
    pub s0_high: f64,
    pub adc: f64,
    /// ADC ended within `1e-6 * (adc_hi - adc_lo)` of a bound.
    pub at_boundary: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IvimFit {
    pub s0: f64,
    pub f: f64,
    pub d_star: f64,
    pub adc: f64,
    pub residual: f64,
}

fn count_distinct(sorted: impl Iterator<Item = f64>) -> usize {
    let mut last: Option<f64> = None;
    let mut n = 0;
    for b in sorted {
        if last.is_none_or(|l| (b - l).abs() >= BVALUE_TOLERANCE) {
            n += 1;
            last = Some(b);
        }
    }
    n
}

/// Mono-exponential fit on the high-b subset.
pub fn fit_adc(sig: &VoxelSignal, cfg: &IvimFitConfig) -> std::result::Result<AdcFit, VoxelFailure> {
    let high: Vec<(f64, f64)> = sig
        .bvalues
        .iter()
        .zip(&sig.intensities)
        .filter(|(b, _)| **b > cfg.b_threshold)
        .map(|(b, s)| (*b, *s))
        .collect();
    let usable: Vec<(f64, f64)> = high.iter().copied().filter(|(_, s)| *s > 0.0).collect();
    if count_distinct(usable.iter().map(|p| p.0)) < 2 {
        return Err(VoxelFailure::TooFewHighB);
    }

    // log-linear least squares for the starting point
    let n = usable.len() as f64;
    let mean_b = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_ln = usable.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = usable.iter().map(|(b, s)| (b - mean_b) * (s.ln() - mean_ln)).sum();
    let sxx: f64 = usable.iter().map(|(b, _)| (b - mean_b).powi(2)).sum();
    let slope = sxy / sxx;
    let margin = 1e-6 * (cfg.adc_hi - cfg.adc_lo);
    let adc0 = (-slope).clamp(cfg.adc_lo + margin, cfg.adc_hi - margin);
    let s0_0 = (mean_ln + adc0 * mean_b).exp();

    let problem = FitProblem::new(
        |p: &[f64], r: &mut [f64]| {
            for (ri, (b, s)) in r.iter_mut().zip(&high) {
                *ri = p[0] * (-b * p[1]).exp() - s;
            }
        },
        high.len(),
        vec![s0_0, adc0],
        vec![Transform::Log, cfg.adc_transform()],
    );
    let fit = lm_fit(&problem, &cfg.lm).map_err(|e| VoxelFailure::Solver(e.to_string()))?;
    if let Termination::Diverged(reason) = fit.termination {
        return Err(VoxelFailure::Solver(reason));
    }
    let adc = fit.params[1];
    Ok(AdcFit {
        s0_high: fit.params[0],
        adc,
        at_boundary: adc - cfg.adc_lo <= margin || cfg.adc_hi - adc <= margin,
    })
}

/// Biexponential fit with `D` fixed to `adc.adc`.
pub fn fit_ivim(
    sig: &VoxelSignal,
    adc: &AdcFit,
    cfg: &IvimFitConfig,
) -> std::result::Result<IvimFit, VoxelFailure> {
    if !(adc.adc.is_finite() && adc.adc > 0.0) {
        return Err(VoxelFailure::Solver(format!("invalid ADC {}", adc.adc)));
    }
    if sig.len() < 3 {
        return Err(VoxelFailure::TooFewPoints);
    }
    let baseline: Vec<f64> = sig
        .bvalues
        .iter()
        .zip(&sig.intensities)
        .filter(|(b, _)| b.abs() < BVALUE_TOLERANCE)
        .map(|(_, s)| *s)
        .collect();
    if baseline.is_empty() {
        return Err(VoxelFailure::NoBaseline);
    }
    let s0_0 = baseline.iter().sum::<f64>() / baseline.len() as f64;
    if s0_0 <= 0.0 {
        return Err(VoxelFailure::NoBaseline);
    }
    let d = adc.adc;
    let f0 = (1.0 - adc.s0_high / s0_0).clamp(0.01, 0.99);
    let mut d_star0 = (10.0 * d).max(d + 1e-3);
    let d_star_transform = match cfg.d_star_max {
        Some(hi) if hi > d => {
            d_star0 = d_star0.min(d + 0.5 * (hi - d));
            Transform::Logistic { lo: d, hi }
        }
        Some(hi) => {
            return Err(VoxelFailure::Solver(format!(
                "ADC {d} is not below the D* bound {hi}"
            )))
        }
        None => Transform::OffsetLog { floor: d },
    };

    let bvalues = &sig.bvalues;
    let intensities = &sig.intensities;
    let problem = FitProblem::new(
        |p: &[f64], r: &mut [f64]| {
            let (s0, f, d_star) = (p[0], p[1], p[2]);
            for ((ri, b), s) in r.iter_mut().zip(bvalues).zip(intensities) {
                *ri = s0 * (f * (-d_star * b).exp() + (1.0 - f) * (-d * b).exp()) - s;
            }
        },
        sig.len(),
        vec![s0_0, f0, d_star0],
        vec![
            Transform::Log,
            Transform::Logistic { lo: 0.0, hi: 1.0 },
            d_star_transform,
        ],
    );
    let fit = lm_fit(&problem, &cfg.lm).map_err(|e| VoxelFailure::Solver(e.to_string()))?;
    if let Termination::Diverged(reason) = fit.termination {
        return Err(VoxelFailure::Solver(reason));
    }
    let s0 = fit.params[0];
    let rmse = (fit.cost / sig.len() as f64).sqrt();
    let residual = match cfg.residual {
        ResidualMetric::NormalizedRmse => rmse / s0,
        ResidualMetric::Rmse => rmse,
    };
    Ok(IvimFit {
        s0,
        f: fit.params[1],
        d_star: fit.params[2],
        adc: d,
        residual,
    })
}

/// Outcome of both stages on a single voxel.
#[derive(Clone, Debug, PartialEq)]
pub enum VoxelOutcome {
    Fitted { fit: IvimFit, adc_at_boundary: bool },
    Failed(VoxelFailure),
}

pub fn fit_voxel(bvalues: &[f64], intensities: &[f64], cfg: &IvimFitConfig) -> VoxelOutcome {
    let run = || {
        let sig = VoxelSignal::new(bvalues, intensities)?;
        let adc = fit_adc(&sig, cfg)?;
        let fit = fit_ivim(&sig, &adc, cfg)?;
        Ok::<_, VoxelFailure>((fit, adc.at_boundary))
    };
    match run() {
        Ok((fit, adc_at_boundary)) => VoxelOutcome::Fitted {
            fit,
            adc_at_boundary,
        },
        Err(e) => VoxelOutcome::Failed(e),
    }
}

/// Counters reported alongside fitted maps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitLog {
    pub voxels_fitted: usize,
    pub voxels_failed: usize,
    /// Fitted voxels whose ADC ended on a bound.
    pub boundary_hits: usize,
}

/// How voxel fits are scheduled. `Parallel` falls back to sequential when the
/// crate is built without the `parallel` feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

fn fit_indices(
    series: &DwiSeries,
    indices: &[usize],
    cfg: &IvimFitConfig,
    execution: Execution,
) -> Vec<VoxelOutcome> {
    let bvalues = series.bvalues();
    let fit_one = |&i: &usize| fit_voxel(bvalues, &series.signal_at(i), cfg);
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            indices.par_iter().with_min_len(64).map(fit_one).collect()
        }
        _ => indices.iter().map(fit_one).collect(),
    }
}

/// Fit every masked voxel of a (direction-averaged) series.
pub fn fit_volume(
    series: &DwiSeries,
    mask: &BinaryMask,
    cfg: &IvimFitConfig,
) -> Result<(IvimMaps, FitLog)> {
    fit_volume_with(series, mask, cfg, Execution::default())
}

pub fn fit_volume_with(
    series: &DwiSeries,
    mask: &BinaryMask,
    cfg: &IvimFitConfig,
    execution: Execution,
) -> Result<(IvimMaps, FitLog)> {
    series.grid().ensure_matches(&mask.grid(), "mask vs series")?;
    cfg.validate()?;

    let indices: Vec<usize> = mask.indices().collect();
    let outcomes = fit_indices(series, &indices, cfg, execution);

    let mut maps = IvimMaps::empty(mask);
    let mut log = FitLog::default();
    for (&i, outcome) in indices.iter().zip(outcomes) {
        match outcome {
            VoxelOutcome::Fitted {
                fit,
                adc_at_boundary,
            } => {
                log.voxels_fitted += 1;
                log.boundary_hits += usize::from(adc_at_boundary);
                maps.map_mut(Parameter::S0)[i] = fit.s0;
                maps.map_mut(Parameter::F)[i] = fit.f;
                maps.map_mut(Parameter::DStar)[i] = fit.d_star;
                maps.map_mut(Parameter::Adc)[i] = fit.adc;
                maps.map_mut(Parameter::Residual)[i] = fit.residual;
            }
            VoxelOutcome::Failed(_) => log.voxels_failed += 1,
        }
    }
    Ok((maps, log))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterStats {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub count: usize,
}

/// Per-parameter statistics over fitted (non-sentinel) masked voxels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MapSummary {
    /// No masked voxel carries a fit.
    Empty { volume_ml: f64 },
    Fitted {
        volume_ml: f64,
        parameters: BTreeMap<String, ParameterStats>,
    },
}

impl MapSummary {
    pub fn volume_ml(&self) -> f64 {
        match self {
            MapSummary::Empty { volume_ml } | MapSummary::Fitted { volume_ml, .. } => *volume_ml,
        }
    }

    pub fn get(&self, parameter: Parameter) -> Option<&ParameterStats> {
        match self {
            MapSummary::Empty { .. } => None,
            MapSummary::Fitted { parameters, .. } => parameters.get(parameter.name()),
        }
    }
}

pub fn summarize(maps: &IvimMaps) -> MapSummary {
    let volume_ml = maps.mask.volume_ml();
    let mut parameters = BTreeMap::new();
    for p in Parameter::ALL {
        let values = maps.fitted_values(p);
        if values.is_empty() {
            return MapSummary::Empty { volume_ml };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        parameters.insert(
            p.name().to_string(),
            ParameterStats {
                mean,
                sd: var.sqrt(),
                count: values.len(),
            },
        );
    }
    MapSummary::Fitted {
        volume_ml,
        parameters,
    }
}

/// Biexponential signal at one b-value.
pub fn ivim_signal(b: f64, s0: f64, f: f64, d_star: f64, d: f64) -> f64 {
    s0 * (f * (-d_star * b).exp() + (1.0 - f) * (-d * b).exp())
}
