use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{backward, Batch, Mlp, Targets, TrainConfig};

/// Largest parameter count for which the dense Hessian is assembled.
pub const MAX_HESSIAN_PARAMS: usize = 5000;
/// Central-difference step on the analytic gradient.
pub const HESSIAN_STEP: f64 = 1e-4;

fn plain_ce() -> TrainConfig {
    TrainConfig::default()
}

fn flat_gradient(model: &Mlp, x: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    let batch = Batch {
        inputs: x,
        targets: Targets::Labels(labels),
    };
    Ok(backward(model, batch, &plain_ce(), None)?.flatten())
}

fn check_size(model: &Mlp) -> Result<()> {
    let p = model.n_params();
    if p > MAX_HESSIAN_PARAMS {
        return Err(Error::invalid(format!(
            "model has {p} parameters; the explicit Hessian supports at most {MAX_HESSIAN_PARAMS}, use a smaller model"
        )));
    }
    Ok(())
}

/// Hessian of the mean plain cross-entropy over `d_tr`, column `j` being the
/// central difference of the analytic gradient along parameter `j`. Not
/// symmetrized.
pub fn mean_loss_hessian(model: &Mlp, d_tr: &Dataset, step: f64) -> Result<Array2<f64>> {
    check_size(model)?;
    if d_tr.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let p = model.n_params();
    let theta = model.params();
    let mut probe = model.clone();
    let mut h = Array2::zeros((p, p));
    let x = d_tr.features().view();
    for j in 0..p {
        let mut t = theta.clone();
        t[j] = theta[j] + step;
        probe.set_params(&t)?;
        let gp = flat_gradient(&probe, x, d_tr.labels())?;
        t[j] = theta[j] - step;
        probe.set_params(&t)?;
        let gm = flat_gradient(&probe, x, d_tr.labels())?;
        for i in 0..p {
            h[[i, j]] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok(h)
}

/// Factorized damped Hessian of a trained model, reusable across probes.
pub struct InfluenceSolver {
    model: Mlp,
    factor: Cholesky<f64, Dyn>,
}

impl InfluenceSolver {
    pub fn new(model: &Mlp, d_tr: &Dataset, damping: f64) -> Result<Self> {
        if !(damping > 0.0 && damping.is_finite()) {
            return Err(Error::invalid("damping must be positive"));
        }
        let h = mean_loss_hessian(model, d_tr, HESSIAN_STEP)?;
        let p = h.nrows();
        let m = DMatrix::from_fn(p, p, |i, j| 0.5 * (h[[i, j]] + h[[j, i]]) + if i == j { damping } else { 0.0 });
        match Cholesky::new(m.clone()) {
            Some(factor) => Ok(Self {
                model: model.clone(),
                factor,
            }),
            None => {
                let min = SymmetricEigen::new(m).eigenvalues.min();
                Err(Error::Numerical(format!(
                    "damped Hessian is not positive definite (minimum eigenvalue {min:.3e}); increase the damping"
                )))
            }
        }
    }

    fn sample_gradient(&self, x: &[f64], y: usize) -> Result<DVector<f64>> {
        let row = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(DVector::from_vec(flat_gradient(&self.model, row, &[y])?))
    }

    /// `|grad L(z_test) . H^-1 grad L(z)|`.
    pub fn influence(&self, z: (&[f64], usize), z_test: (&[f64], usize)) -> Result<f64> {
        let g = self.sample_gradient(z.0, z.1)?;
        let gt = self.sample_gradient(z_test.0, z_test.1)?;
        Ok(gt.dot(&self.factor.solve(&g)).abs())
    }
}

/// First-order estimate of how much removing `z` from `d_tr` moves the loss
/// at `z_test`, up to the `1/n` factor.
pub fn influence_approx(model: &Mlp, d_tr: &Dataset, z: (&[f64], usize), z_test: (&[f64], usize), damping: f64) -> Result<f64> {
    InfluenceSolver::new(model, d_tr, damping)?.influence(z, z_test)
}
