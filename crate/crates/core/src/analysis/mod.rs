//! Numerical checks of the posterior-ratio argument behind entropy-based
//! reference selection: leave-one-out retraining, the per-reference KL
//! bound, influence-function estimates and member/non-member distribution
//! reports.

mod distribution;
mod influence;
pub mod stats;

pub use distribution::{distribution_report, DistributionReport, Histogram, HistogramBin, HIST_BINS};
pub use influence::{influence_approx, mean_loss_hessian, InfluenceSolver, HESSIAN_STEP, MAX_HESSIAN_PARAMS};

use ndarray::ArrayView1;

use crate::data::Dataset;
use crate::dmp::entropies;
use crate::error::{Error, Result};
use crate::nncore::{check_temperature, cross_entropy, kl_loss, train_excluding, LayerSpec, Mlp, TrainConfig, TrainData};

/// Models trained on `d_tr` and on `d_tr` without one sample, from the same
/// initialization and recipe.
#[derive(Debug, Clone)]
pub struct NeighborPair {
    pub d_tr: Dataset,
    pub removed_index: usize,
    pub full: Mlp,
    pub reduced: Mlp,
}

fn oracle_run(arch: &[LayerSpec], d_tr: &Dataset, recipe: &TrainConfig, excluded: Option<usize>) -> Result<Mlp> {
    let init = Mlp::new(arch, recipe.seed)?;
    Ok(train_excluding(&init, TrainData::Labeled(d_tr), recipe, excluded)?.model)
}

/// Trains the neighboring pair. The minibatch schedule of the reduced run
/// matches the full run except that the removed sample is dropped from its
/// batch.
pub fn retrain_oracle(arch: &[LayerSpec], d_tr: &Dataset, removed_index: usize, recipe: &TrainConfig) -> Result<NeighborPair> {
    if d_tr.len() < 2 {
        return Err(Error::invalid("retrain oracle needs at least 2 training samples"));
    }
    if removed_index >= d_tr.len() {
        return Err(Error::invalid(format!(
            "removed index {removed_index} out of range for {} samples",
            d_tr.len()
        )));
    }
    let full = oracle_run(arch, d_tr, recipe, None)?;
    let reduced = oracle_run(arch, d_tr, recipe, Some(removed_index))?;
    Ok(NeighborPair {
        d_tr: d_tr.clone(),
        removed_index,
        full,
        reduced,
    })
}

/// Per-reference-row terms of the posterior-ratio analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTrace {
    /// `|KL(full || p) - KL(reduced || p)|` at the transfer temperature.
    pub delta_kl: Vec<f64>,
    /// `|CE(full) - CE(reduced)|` against the row's label at T = 1.
    pub delta_ce: Vec<f64>,
    /// Entropy of the full model's prediction at the transfer temperature.
    pub entropy: Vec<f64>,
    /// Absolute influence estimate of the removed sample on each row.
    pub approx_influence: Option<Vec<f64>>,
}

impl RatioTrace {
    pub fn len(&self) -> usize {
        self.delta_kl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_kl.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioBound {
    pub trace: RatioTrace,
    /// `(1/T) sum |delta KL|`.
    pub bound: f64,
    /// `(1/T) sum (KL(full || p) - KL(reduced || p))`, whose magnitude the
    /// bound dominates.
    pub signed_sum: f64,
    /// Temperature of the `1/T` prefactor.
    pub temperature: f64,
}

impl RatioBound {
    /// The same trace under a different `1/T` prefactor.
    pub fn rescaled(&self, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        let f = self.temperature / temperature;
        Ok(Self {
            trace: self.trace.clone(),
            bound: self.bound * f,
            signed_sum: self.signed_sum * f,
            temperature,
        })
    }
}

/// Evaluates the KL bound on the log posterior ratio of the removed sample
/// for the protected model `protected` over the labeled reference rows.
pub fn ratio_bound(pair: &NeighborPair, protected: &Mlp, x_ref: &Dataset, temperature: f64) -> Result<RatioBound> {
    check_temperature(temperature)?;
    for (name, m) in [("reduced model", &pair.reduced), ("protected model", protected)] {
        if m.layer_specs().first().map(|s| s.input_dim) != pair.full.layer_specs().first().map(|s| s.input_dim)
            || m.n_classes() != pair.full.n_classes()
        {
            return Err(Error::invalid(format!("{name} does not match the full model's input or class count")));
        }
    }
    let x = x_ref.features().view();
    let pf = pair.full.predict_proba(x, temperature)?;
    let pr = pair.reduced.predict_proba(x, temperature)?;
    let pp = protected.predict_proba(x, temperature)?;
    let (pf1, pr1) = if temperature == 1.0 {
        (pf.clone(), pr.clone())
    } else {
        (pair.full.predict_proba(x, 1.0)?, pair.reduced.predict_proba(x, 1.0)?)
    };
    let row = |a: ArrayView1<f64>| a.to_vec();
    // Rows are compared at the transfer temperature; the prefactor can be
    // changed afterwards with `RatioBound::rescaled`.
    let n = x_ref.len();
    let mut trace = RatioTrace {
        delta_kl: Vec::with_capacity(n),
        delta_ce: Vec::with_capacity(n),
        entropy: entropies(&pair.full, x, temperature)?,
        approx_influence: None,
    };
    let mut signed = 0.0;
    for i in 0..n {
        let p = row(pp.row(i));
        let d = kl_loss(&row(pf.row(i)), &p)? - kl_loss(&row(pr.row(i)), &p)?;
        signed += d;
        trace.delta_kl.push(d.abs());
        let y = x_ref.labels()[i];
        let ce = cross_entropy(&row(pf1.row(i)), y, 0.0, 0.0)? - cross_entropy(&row(pr1.row(i)), y, 0.0, 0.0)?;
        trace.delta_ce.push(ce.abs());
    }
    let bound = trace.delta_kl.iter().sum::<f64>() / temperature;
    Ok(RatioBound {
        trace,
        bound,
        signed_sum: signed / temperature,
        temperature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationReport {
    pub pearson_dkl_dce: f64,
    pub spearman_entropy_dkl: f64,
}

pub fn correlation_report(trace: &RatioTrace) -> Result<CorrelationReport> {
    if trace.len() < 3 {
        return Err(Error::UndefinedCorrelation("trace has fewer than 3 rows".into()));
    }
    Ok(CorrelationReport {
        pearson_dkl_dce: stats::pearson(&trace.delta_kl, &trace.delta_ce)?,
        spearman_entropy_dkl: stats::spearman(&trace.entropy, &trace.delta_kl)?,
    })
}

#[cfg(test)]
mod tests;
