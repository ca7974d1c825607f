//! The 324-10-5-1 feed-forward network and its Levenberg-Marquardt trainer.
//!
//! Hidden layer 1 uses the logistic sigmoid, hidden layer 2 and the output
//! are linear. Targets are -1 (normal) / +1 (abnormal) and training
//! minimizes the sum of squared errors with damped Gauss-Newton steps:
//! solve (J'J + lambda*I) delta = J'e, accept the step only if the SSE
//! drops, shrinking lambda on success and growing it on rejection. When the
//! batch has fewer residuals than parameters the step is solved in residual
//! space through the algebraically identical (JJ' + lambda*I) system.

use crate::assembly::{Imputer, Scaler, FEATURE_COUNT};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const INPUT_DIM: usize = FEATURE_COUNT;
pub const HIDDEN1: usize = 10;
pub const HIDDEN2: usize = 5;

/// Total trainable parameters: 324*10+10 + 10*5+5 + 5*1+1.
pub const PARAM_COUNT: usize =
    INPUT_DIM * HIDDEN1 + HIDDEN1 + HIDDEN1 * HIDDEN2 + HIDDEN2 + HIDDEN2 + 1;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("normal equations unsolvable even at maximum damping")]
    SingularSystem,
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("need at least 2 training samples, got {0}")]
    TooFewSamples(usize),
    #[error("model file schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("non-finite value encountered during training at epoch {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    /// 10 x 324
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// 5 x 10
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    /// 1 x 5, kept as a vector
    pub w3: DVector<f64>,
    pub b3: f64,
    pub scaler: Scaler,
    pub imputer: Imputer,
    pub rng_seed: u64,
}

fn logsig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlpModel {
    /// Weights drawn uniformly from [-0.5, 0.5] in a fixed order (layer 1
    /// row-major, layer 2, output), biases zero; fully determined by `seed`.
    pub fn init(seed: u64, scaler: Scaler, imputer: Imputer) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
        };
        let w1 = DMatrix::from_row_slice(HIDDEN1, INPUT_DIM, &draw(HIDDEN1 * INPUT_DIM));
        let w2 = DMatrix::from_row_slice(HIDDEN2, HIDDEN1, &draw(HIDDEN2 * HIDDEN1));
        let w3 = DVector::from_vec(draw(HIDDEN2));
        Self {
            w1,
            b1: DVector::zeros(HIDDEN1),
            w2,
            b2: DVector::zeros(HIDDEN2),
            w3,
            b3: 0.0,
            scaler,
            imputer,
            rng_seed: seed,
        }
    }

    /// Forward pass on an already scaled input vector.
    pub fn forward(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), INPUT_DIM);
        let x = DVector::from_column_slice(x);
        let a1 = (&self.w1 * &x + &self.b1).map(logsig);
        let a2 = &self.w2 * a1 + &self.b2;
        self.w3.dot(&a2) + self.b3
    }

    /// Forward pass over a batch (rows = samples).
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let m = x.nrows();
        let mut out = DVector::zeros(m);
        for i in 0..m {
            let xi = x.row(i).transpose();
            let a1 = (&self.w1 * &xi + &self.b1).map(logsig);
            let a2 = &self.w2 * a1 + &self.b2;
            out[i] = self.w3.dot(&a2) + self.b3;
        }
        out
    }

    /// Flatten all parameters in the canonical order.
    pub fn params(&self) -> DVector<f64> {
        let mut p = Vec::with_capacity(PARAM_COUNT);
        for r in 0..HIDDEN1 {
            for c in 0..INPUT_DIM {
                p.push(self.w1[(r, c)]);
            }
        }
        p.extend(self.b1.iter());
        for r in 0..HIDDEN2 {
            for c in 0..HIDDEN1 {
                p.push(self.w2[(r, c)]);
            }
        }
        p.extend(self.b2.iter());
        p.extend(self.w3.iter());
        p.push(self.b3);
        DVector::from_vec(p)
    }

    pub fn set_params(&mut self, p: &DVector<f64>) {
        assert_eq!(p.len(), PARAM_COUNT);
        let mut k = 0;
        for r in 0..HIDDEN1 {
            for c in 0..INPUT_DIM {
                self.w1[(r, c)] = p[k];
                k += 1;
            }
        }
        for r in 0..HIDDEN1 {
            self.b1[r] = p[k];
            k += 1;
        }
        for r in 0..HIDDEN2 {
            for c in 0..HIDDEN1 {
                self.w2[(r, c)] = p[k];
                k += 1;
            }
        }
        for r in 0..HIDDEN2 {
            self.b2[r] = p[k];
            k += 1;
        }
        for r in 0..HIDDEN2 {
            self.w3[r] = p[k];
            k += 1;
        }
        self.b3 = p[k];
    }
}

/// Residual Jacobian d(output)/d(parameter) by analytic backprop. Rows are
/// samples, columns follow [`MlpModel::params`] order. Also returns the
/// batch outputs.
pub fn jacobian(model: &MlpModel, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let m = x.nrows();
    let mut j = DMatrix::zeros(m, PARAM_COUNT);
    let mut y = DVector::zeros(m);
    // d(output)/d(a1) is sample-independent: w3' * w2  (1 x HIDDEN1)
    let w3w2 = model.w2.transpose() * &model.w3; // HIDDEN1 vector

    let off_b1 = HIDDEN1 * INPUT_DIM;
    let off_w2 = off_b1 + HIDDEN1;
    let off_b2 = off_w2 + HIDDEN2 * HIDDEN1;
    let off_w3 = off_b2 + HIDDEN2;
    let off_b3 = off_w3 + HIDDEN2;

    for i in 0..m {
        let xi = x.row(i).transpose();
        let z1 = &model.w1 * &xi + &model.b1;
        let a1 = z1.map(logsig);
        let a2 = &model.w2 * &a1 + &model.b2;
        y[i] = model.w3.dot(&a2) + model.b3;

        for r in 0..HIDDEN1 {
            let dz1 = w3w2[r] * a1[r] * (1.0 - a1[r]);
            let row_base = r * INPUT_DIM;
            for c in 0..INPUT_DIM {
                j[(i, row_base + c)] = dz1 * xi[c];
            }
            j[(i, off_b1 + r)] = dz1;
        }
        for r in 0..HIDDEN2 {
            let base = off_w2 + r * HIDDEN1;
            for c in 0..HIDDEN1 {
                j[(i, base + c)] = model.w3[r] * a1[c];
            }
            j[(i, off_b2 + r)] = model.w3[r];
        }
        for r in 0..HIDDEN2 {
            j[(i, off_w3 + r)] = a2[r];
        }
        j[(i, off_b3)] = 1.0;
    }
    (j, y)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub mse_goal: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
    /// Fraction of samples held out for validation-based early stopping;
    /// 0 disables it.
    pub val_fraction: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            mse_goal: 1e-3,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
            lambda_max: 1e10,
            val_fraction: 0.15,
            patience: 6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if !(self.lambda_down > 0.0 && self.lambda_down < 1.0 && self.lambda_up > 1.0) {
            return Err(MlpError::DegenerateData(
                "lambda factors must satisfy 0 < down < 1 < up".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return Err(MlpError::DegenerateData("val_fraction must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MseGoal,
    MaxEpochs,
    LambdaMax,
    ValidationPatience,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub stop: StopReason,
    pub final_train_mse: f64,
    pub best_val_mse: Option<f64>,
}

fn sse(model: &MlpModel, x: &DMatrix<f64>, t: &DVector<f64>) -> f64 {
    let y = model.forward_batch(x);
    (t - y).norm_squared()
}

/// One damped Gauss-Newton step: (J'J + lambda I) delta = J'e, solved in
/// whichever space (parameter or residual) is smaller.
fn lm_step(j: &DMatrix<f64>, e: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let m = j.nrows();
    let p = j.ncols();
    if m <= p {
        // delta = J' (JJ' + lambda I)^-1 e
        let mut a = j * j.transpose();
        for i in 0..m {
            a[(i, i)] += lambda;
        }
        let chol = Cholesky::new(a)?;
        Some(j.transpose() * chol.solve(e))
    } else {
        let mut a = j.transpose() * j;
        for i in 0..p {
            a[(i, i)] += lambda;
        }
        let chol = Cholesky::new(a)?;
        Some(chol.solve(&(j.transpose() * e)))
    }
}

/// Train with Levenberg-Marquardt from the model's current weights.
/// `x` rows are scaled feature vectors, `t` the ±1 targets.
pub fn train_lm(
    model: &mut MlpModel,
    x: &DMatrix<f64>,
    t: &DVector<f64>,
    cfg: &TrainConfig,
) -> Result<TrainReport, MlpError> {
    cfg.validate()?;
    let m = x.nrows();
    if m < 2 {
        return Err(MlpError::TooFewSamples(m));
    }
    if t.iter().all(|&v| v == t[0]) {
        return Err(MlpError::DegenerateData("all targets identical".into()));
    }

    // Seeded validation split.
    let (train_idx, val_idx) = {
        let n_val = (cfg.val_fraction * m as f64).round() as usize;
        if n_val == 0 || m - n_val < 2 {
            ((0..m).collect::<Vec<_>>(), Vec::new())
        } else {
            let mut idx: Vec<usize> = (0..m).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x56414c)); // "VAL"
            for i in (1..idx.len()).rev() {
                let k = rng.gen_range(0..=i);
                idx.swap(i, k);
            }
            let val = idx[..n_val].to_vec();
            let train = idx[n_val..].to_vec();
            (train, val)
        }
    };
    let take = |rows: &[usize]| -> (DMatrix<f64>, DVector<f64>) {
        let mut xs = DMatrix::zeros(rows.len(), x.ncols());
        let mut ts = DVector::zeros(rows.len());
        for (r, &i) in rows.iter().enumerate() {
            xs.set_row(r, &x.row(i));
            ts[r] = t[i];
        }
        (xs, ts)
    };
    let (x_train, t_train) = take(&train_idx);
    let (x_val, t_val) = take(&val_idx);
    if t_train.iter().all(|&v| v == t_train[0]) {
        return Err(MlpError::DegenerateData(
            "all training targets identical after validation split".into(),
        ));
    }
    let m_train = x_train.nrows();

    let mut lambda = cfg.lambda_init;
    let mut current_sse = sse(model, &x_train, &t_train);
    let mut report = TrainReport {
        epochs: Vec::new(),
        stop: StopReason::MaxEpochs,
        final_train_mse: current_sse / m_train as f64,
        best_val_mse: None,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<DVector<f64>> = None;
    let mut patience_left = cfg.patience;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let (j, y) = jacobian(model, &x_train);
        let e = &t_train - y;
        if !e.iter().all(|v| v.is_finite()) {
            return Err(MlpError::NonFinite(epoch));
        }

        // Grow lambda until a step reduces the SSE.
        loop {
            let delta = lm_step(&j, &e, lambda);
            if let Some(delta) = delta {
                let params = model.params();
                let trial = &params + &delta;
                let mut trial_model = model.clone();
                trial_model.set_params(&trial);
                let trial_sse = sse(&trial_model, &x_train, &t_train);
                if trial_sse.is_finite() && trial_sse < current_sse {
                    *model = trial_model;
                    current_sse = trial_sse;
                    lambda = (lambda * cfg.lambda_down).max(1e-20);
                    break;
                }
            }
            lambda *= cfg.lambda_up;
            if lambda > cfg.lambda_max {
                report.stop = StopReason::LambdaMax;
                report.epochs.push(EpochStats {
                    epoch,
                    train_mse: current_sse / m_train as f64,
                    val_mse: None,
                    lambda,
                });
                break 'epochs;
            }
        }

        let train_mse = current_sse / m_train as f64;
        let val_mse = if val_idx.is_empty() {
            None
        } else {
            Some(sse(model, &x_val, &t_val) / val_idx.len() as f64)
        };
        report.epochs.push(EpochStats { epoch, train_mse, val_mse, lambda });

        if let Some(v) = val_mse {
            if v < best_val {
                best_val = v;
                best_params = Some(model.params());
                patience_left = cfg.patience;
            } else {
                patience_left = patience_left.saturating_sub(1);
                if patience_left == 0 {
                    report.stop = StopReason::ValidationPatience;
                    break;
                }
            }
        }
        if train_mse <= cfg.mse_goal {
            report.stop = StopReason::MseGoal;
            break;
        }
    }

    // Restore the best-validation weights when early stopping was active.
    if report.stop == StopReason::ValidationPatience {
        if let Some(p) = best_params {
            model.set_params(&p);
        }
    }
    report.final_train_mse = sse(model, &x_train, &t_train) / m_train as f64;
    report.best_val_mse = (!val_idx.is_empty()).then_some(best_val);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    activation: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    scaler: Scaler,
    imputation_medians: Vec<f64>,
    layers: Vec<LayerFile>,
    rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().cloned().collect())
        .collect()
}

/// Save as structured JSON; floats use the shortest decimal form that parses
/// back to the identical bits, so save/load round-trips are exact.
pub fn save_model(
    model: &MlpModel,
    path: impl AsRef<Path>,
    config_echo: Option<serde_json::Value>,
) -> Result<(), MlpError> {
    let file = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        scaler: model.scaler.clone(),
        imputation_medians: model.imputer.medians.clone(),
        layers: vec![
            LayerFile {
                weights: matrix_rows(&model.w1),
                biases: model.b1.iter().cloned().collect(),
                activation: "logsig".into(),
            },
            LayerFile {
                weights: matrix_rows(&model.w2),
                biases: model.b2.iter().cloned().collect(),
                activation: "purelin".into(),
            },
            LayerFile {
                weights: vec![model.w3.iter().cloned().collect()],
                biases: vec![model.b3],
                activation: "purelin".into(),
            },
        ],
        rng_seed: model.rng_seed,
        config: config_echo,
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel, MlpError> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.schema_version != MODEL_SCHEMA_VERSION {
        return Err(MlpError::SchemaMismatch(format!(
            "schema_version {} (expected {MODEL_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    let shapes = [(HIDDEN1, INPUT_DIM), (HIDDEN2, HIDDEN1), (1, HIDDEN2)];
    if file.layers.len() != 3 {
        return Err(MlpError::SchemaMismatch(format!(
            "{} layers (expected 3)",
            file.layers.len()
        )));
    }
    for (li, (layer, &(rows, cols))) in file.layers.iter().zip(&shapes).enumerate() {
        if layer.weights.len() != rows
            || layer.weights.iter().any(|r| r.len() != cols)
            || layer.biases.len() != rows
        {
            return Err(MlpError::SchemaMismatch(format!(
                "layer {li} is not {rows}x{cols} with {rows} biases"
            )));
        }
        let want = if li == 0 { "logsig" } else { "purelin" };
        if layer.activation != want {
            return Err(MlpError::SchemaMismatch(format!(
                "layer {li} activation {:?} (expected {want:?})",
                layer.activation
            )));
        }
    }
    if file.scaler.mean.len() != FEATURE_COUNT
        || file.scaler.std.len() != FEATURE_COUNT
        || file.imputation_medians.len() != FEATURE_COUNT
    {
        return Err(MlpError::SchemaMismatch(
            "scaler/imputation vectors must have 324 entries".into(),
        ));
    }

    let flat = |rows: &Vec<Vec<f64>>| -> Vec<f64> { rows.iter().flatten().cloned().collect() };
    Ok(MlpModel {
        w1: DMatrix::from_row_slice(HIDDEN1, INPUT_DIM, &flat(&file.layers[0].weights)),
        b1: DVector::from_vec(file.layers[0].biases.clone()),
        w2: DMatrix::from_row_slice(HIDDEN2, HIDDEN1, &flat(&file.layers[1].weights)),
        b2: DVector::from_vec(file.layers[1].biases.clone()),
        w3: DVector::from_vec(file.layers[2].weights[0].clone()),
        b3: file.layers[2].biases[0],
        scaler: file.scaler,
        imputer: Imputer { medians: file.imputation_medians },
        rng_seed: file.rng_seed,
    })
}

#[cfg(test)]
pub(crate) fn blank_scaler() -> (Scaler, Imputer) {
    (
        Scaler { mean: vec![0.0; FEATURE_COUNT], std: vec![1.0; FEATURE_COUNT] },
        Imputer { medians: vec![0.0; FEATURE_COUNT] },
    )
}
