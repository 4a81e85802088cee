//! Mini-batch Adam training with early stopping, plus a finite-difference
//! gradient checker.
//!
//! Models plug in through [`LossModel`]: a flat parameter vector and a batch
//! loss with its exact gradient. The loop is single-threaded and fully
//! deterministic given the config seed.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::adam::{adam_step, AdamState};
use crate::rng::rng_from_seed;

/// A model trainable by [`train`]: exposes its parameters flat and computes
/// mean batch loss with exact analytic gradients.
pub trait LossModel {
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    /// Mean loss over the batch.
    fn loss(&self, x: &Matrix, y: &Matrix) -> Result<f64>;
    /// Mean loss and its gradient with respect to every parameter.
    fn loss_and_grad(&self, x: &Matrix, y: &Matrix) -> Result<(f64, Vec<f64>)>;
    /// Named contiguous parameter groups, in flat order. Used for error
    /// reporting; the default is one anonymous group.
    fn param_groups(&self) -> Vec<(String, usize)> {
        vec![("params".to_string(), self.param_count())]
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 1000,
            patience: 20,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_val_loss: f64,
    /// Epoch whose parameters were returned; 0 means the initial parameters.
    pub best_epoch: usize,
}

fn group_of(groups: &[(String, usize)], flat_index: usize) -> String {
    let mut offset = 0;
    for (name, len) in groups {
        if flat_index < offset + len {
            return name.clone();
        }
        offset += len;
    }
    format!("flat index {flat_index}")
}

/// Trains `model` in place and leaves it at the parameters with the lowest
/// validation loss seen (the initial parameters count as epoch 0).
pub fn train<M: LossModel>(
    model: &mut M,
    train_x: &Matrix,
    train_y: &Matrix,
    val_x: &Matrix,
    val_y: &Matrix,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train_x.rows() == 0 || val_x.rows() == 0 {
        return Err(Error::InvalidArgument(
            "train and validation sets must be non-empty".into(),
        ));
    }
    if train_x.rows() != train_y.rows() || val_x.rows() != val_y.rows() {
        return Err(Error::shape("train", "feature/response row counts differ"));
    }

    let mut rng = rng_from_seed(config.seed);
    let mut state = AdamState::new(model.param_count(), config.learning_rate);
    let n = train_x.rows();
    let mut order: Vec<usize> = (0..n).collect();

    let mut best_params = model.params();
    let mut best_val = model.loss(val_x, val_y)?;
    if !best_val.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            reason: "initial validation loss is non-finite".into(),
        });
    }
    let mut best_epoch = 0usize;
    let mut since_improvement = 0usize;
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let bx = train_x.select_rows(chunk);
            let by = train_y.select_rows(chunk);
            let (loss, grads) = model.loss_and_grad(&bx, &by)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "non-finite training loss".into(),
                });
            }
            if let Some(idx) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    reason: format!(
                        "non-finite gradient in parameter group '{}'",
                        group_of(&model.param_groups(), idx)
                    ),
                });
            }
            let mut params = model.params();
            adam_step(&mut params, &grads, &mut state).map_err(|e| Error::Training {
                epoch,
                reason: e.to_string(),
            })?;
            model.set_params(&params)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / n as f64;
        let val_loss = model.loss(val_x, val_y)?;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "non-finite validation loss".into(),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_params = model.params();
            best_epoch = epoch;
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.patience {
                break;
            }
        }
    }

    model.set_params(&best_params)?;
    Ok(TrainHistory {
        epochs: history,
        best_val_loss: best_val,
        best_epoch,
    })
}

/// Compares every analytic parameter gradient against a central finite
/// difference with step 1e-5 and returns the maximum relative error
/// `|a−n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check<M: LossModel>(model: &mut M, probe_x: &Matrix, probe_y: &Matrix) -> Result<f64> {
    let (_, analytic) = model.loss_and_grad(probe_x, probe_y)?;
    let mut params = model.params();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        model.set_params(&params)?;
        let up = model.loss(probe_x, probe_y)?;
        params[i] = orig - h;
        model.set_params(&params)?;
        let down = model.loss(probe_x, probe_y)?;
        params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    model.set_params(&params)?;
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One scalar parameter, loss (p − 3)²; batches are ignored.
    struct Quadratic {
        p: f64,
    }

    impl LossModel for Quadratic {
        fn param_count(&self) -> usize {
            1
        }
        fn params(&self) -> Vec<f64> {
            vec![self.p]
        }
        fn set_params(&mut self, params: &[f64]) -> Result<()> {
            self.p = params[0];
            Ok(())
        }
        fn loss(&self, _x: &Matrix, _y: &Matrix) -> Result<f64> {
            Ok((self.p - 3.0) * (self.p - 3.0))
        }
        fn loss_and_grad(&self, x: &Matrix, y: &Matrix) -> Result<(f64, Vec<f64>)> {
            Ok((self.loss(x, y)?, vec![2.0 * (self.p - 3.0)]))
        }
    }

    /// Validation loss grows by one per evaluation; training loss constant.
    struct Worsening {
        evals: std::cell::Cell<u64>,
    }

    impl LossModel for Worsening {
        fn param_count(&self) -> usize {
            1
        }
        fn params(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn set_params(&mut self, _params: &[f64]) -> Result<()> {
            Ok(())
        }
        fn loss(&self, _x: &Matrix, _y: &Matrix) -> Result<f64> {
            let c = self.evals.get();
            self.evals.set(c + 1);
            Ok(c as f64)
        }
        fn loss_and_grad(&self, _x: &Matrix, _y: &Matrix) -> Result<(f64, Vec<f64>)> {
            Ok((0.0, vec![0.0]))
        }
    }

    fn dummy() -> (Matrix, Matrix) {
        (Matrix::zeros(4, 1), Matrix::zeros(4, 1))
    }

    #[test]
    fn zero_epochs_returns_initial_params_and_empty_history() {
        let mut model = Quadratic { p: 7.0 };
        let (x, y) = dummy();
        let cfg = TrainConfig {
            max_epochs: 0,
            patience: 0,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &x, &y, &x, &y, &cfg).unwrap();
        assert!(history.epochs.is_empty());
        assert_eq!(model.p, 7.0);
        assert_eq!(history.best_epoch, 0);
    }

    #[test]
    fn quadratic_converges_near_minimum() {
        let mut model = Quadratic { p: -4.0 };
        let (x, y) = dummy();
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 500,
            patience: 500,
            learning_rate: 0.05,
            seed: 1,
        };
        train(&mut model, &x, &y, &x, &y, &cfg).unwrap();
        assert!((model.p - 3.0).abs() < 0.1, "p = {}", model.p);
    }

    #[test]
    fn worsening_validation_stops_after_exactly_patience_epochs() {
        let mut model = Worsening {
            evals: std::cell::Cell::new(0),
        };
        let (x, y) = dummy();
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 100,
            patience: 5,
            learning_rate: 0.1,
            seed: 1,
        };
        let history = train(&mut model, &x, &y, &x, &y, &cfg).unwrap();
        assert_eq!(history.epochs.len(), 5);
        assert_eq!(history.best_epoch, 0);
    }

    #[test]
    fn returned_params_beat_every_recorded_epoch() {
        let mut model = Quadratic { p: 10.0 };
        let (x, y) = dummy();
        let cfg = TrainConfig {
            batch_size: 2,
            max_epochs: 60,
            patience: 60,
            learning_rate: 0.3,
            seed: 3,
        };
        let history = train(&mut model, &x, &y, &x, &y, &cfg).unwrap();
        let final_val = model.loss(&x, &y).unwrap();
        for rec in &history.epochs {
            assert!(final_val <= rec.val_loss + 1e-12);
        }
    }

    #[test]
    fn identical_seeds_give_identical_history() {
        let (x, y) = dummy();
        let cfg = TrainConfig {
            batch_size: 2,
            max_epochs: 30,
            patience: 30,
            learning_rate: 0.1,
            seed: 9,
        };
        let run = |_: ()| {
            let mut model = Quadratic { p: 5.0 };
            train(&mut model, &x, &y, &x, &y, &cfg).unwrap().epochs
        };
        assert_eq!(run(()), run(()));
    }

    #[test]
    fn non_finite_gradient_names_the_parameter_group() {
        struct NanGrad;
        impl LossModel for NanGrad {
            fn param_count(&self) -> usize {
                3
            }
            fn params(&self) -> Vec<f64> {
                vec![0.0; 3]
            }
            fn set_params(&mut self, _p: &[f64]) -> Result<()> {
                Ok(())
            }
            fn loss(&self, _x: &Matrix, _y: &Matrix) -> Result<f64> {
                Ok(1.0)
            }
            fn loss_and_grad(&self, _x: &Matrix, _y: &Matrix) -> Result<(f64, Vec<f64>)> {
                Ok((1.0, vec![0.0, 0.0, f64::NAN]))
            }
            fn param_groups(&self) -> Vec<(String, usize)> {
                vec![("head.weights".into(), 2), ("head.biases".into(), 1)]
            }
        }
        let (x, y) = dummy();
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 3,
            patience: 3,
            ..TrainConfig::default()
        };
        let err = train(&mut NanGrad, &x, &y, &x, &y, &cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("head.biases"), "{msg}");
        assert!(msg.contains("epoch 1"), "{msg}");
    }

    #[test]
    fn patience_larger_than_max_epochs_is_rejected() {
        let cfg = TrainConfig {
            max_epochs: 5,
            patience: 6,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gradient_check_is_exact_for_quadratic() {
        let mut model = Quadratic { p: 1.7 };
        let (x, y) = dummy();
        let err = gradient_check(&mut model, &x, &y).unwrap();
        assert!(err <= 1e-7, "err {err}");
    }

    #[test]
    fn gradient_check_of_zero_parameter_model_is_zero() {
        struct Empty;
        impl LossModel for Empty {
            fn param_count(&self) -> usize {
                0
            }
            fn params(&self) -> Vec<f64> {
                Vec::new()
            }
            fn set_params(&mut self, _p: &[f64]) -> Result<()> {
                Ok(())
            }
            fn loss(&self, _x: &Matrix, _y: &Matrix) -> Result<f64> {
                Ok(1.0)
            }
            fn loss_and_grad(&self, _x: &Matrix, _y: &Matrix) -> Result<(f64, Vec<f64>)> {
                Ok((1.0, Vec::new()))
            }
        }
        let (x, y) = dummy();
        assert_eq!(gradient_check(&mut Empty, &x, &y).unwrap(), 0.0);
    }
}
