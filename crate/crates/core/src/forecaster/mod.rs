//! Next-step forecaster: a 1-D convolutional network trained on normal data
//! with MAE loss, Adam, dropout and early stopping.

mod adam;
mod gradcheck;
mod layers;
mod model;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use gradcheck::{gradient_check, GradientCheck};
pub use layers::{base_stack, Activation, ConvStackSpec, LayerSpec, Shape};
pub use model::{mae_gradient, mae_loss, CnnModel, Gradients, Layer, Trace};
pub use train::{
    evaluate_loss, predict_series, train, EarlyStopping, SeriesForecast, TrainConfig, TrainHistory,
};

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "cps-sentinel/cnn/v1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    model: CnnModel,
}

impl CnnModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.to_string(),
            model: self.clone(),
        })
        .map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Serialization(format!(
                "unsupported model format {:?}",
                file.format
            )));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{make_windows, ChannelSchema, Label, TimeSeriesFrame};
    use crate::rng::SplitMix64;

    fn tiny_stack(channels: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(8, 3),
            LayerSpec::pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(5, Activation::Tanh, 0.0),
            LayerSpec::dense(channels, Activation::Sigmoid, 0.0),
        ]
    }

    fn random_vec(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.next_f64()).collect()
    }

    fn frame(rows: usize, channels: usize, f: impl Fn(usize, usize) -> f64) -> TimeSeriesFrame {
        let schema = ChannelSchema::sensors((0..channels).map(|c| format!("c{c}"))).unwrap();
        let values = (0..rows)
            .flat_map(|r| (0..channels).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        TimeSeriesFrame::new(schema, (0..rows as i64).collect(), values, vec![Label::Normal; rows])
            .unwrap()
    }

    #[test]
    fn base_stack_flatten_forces_window_twelve() {
        let model = CnnModel::build(12, 51, &base_stack(51), 1).unwrap();
        assert_eq!(model.flatten_size(), Some(192));
        let err = CnnModel::build(11, 51, &base_stack(51), 1).unwrap_err();
        assert!(err.to_string().contains("not divisible"), "{err}");
        let err = CnnModel::build(10, 51, &base_stack(51), 1).unwrap_err();
        assert!(err.to_string().contains("layer 3"), "{err}");
    }

    #[test]
    fn build_rejects_bad_stacks() {
        let no_flatten = vec![LayerSpec::conv(4, 3), LayerSpec::dense(2, Activation::Sigmoid, 0.0)];
        assert!(CnnModel::build(4, 2, &no_flatten, 0).is_err());
        let wrong_out = vec![LayerSpec::Flatten, LayerSpec::dense(3, Activation::Sigmoid, 0.0)];
        assert!(CnnModel::build(4, 2, &wrong_out, 0).is_err());
        let tanh_out = vec![LayerSpec::Flatten, LayerSpec::dense(2, Activation::Tanh, 0.0)];
        assert!(CnnModel::build(4, 2, &tanh_out, 0).is_err());
        let bad_dropout = vec![LayerSpec::Flatten, LayerSpec::dense(2, Activation::Sigmoid, 1.0)];
        assert!(CnnModel::build(4, 2, &bad_dropout, 0).is_err());
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let a = CnnModel::build(12, 8, &base_stack(8), 42).unwrap();
        let b = CnnModel::build(12, 8, &base_stack(8), 42).unwrap();
        let c = CnnModel::build(12, 8, &base_stack(8), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // First conv: fan_in 3*8, fan_out 3*32.
        let limit = (6.0f64 / (24.0 + 96.0)).sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(a.adam().m.iter().flatten().all(|&x| x == 0.0));
        assert_eq!(a.adam().step, 0);
    }

    #[test]
    fn zero_parameters_give_half() {
        let mut model = CnnModel::build(12, 8, &base_stack(8), 3).unwrap();
        for t in model.parameters_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        let out = model.predict(&vec![0.7; 96]).unwrap();
        assert_eq!(out, vec![0.5; 8]);
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let specs = vec![
            LayerSpec::conv(2, 3),
            LayerSpec::Flatten,
            LayerSpec::dense(1, Activation::Sigmoid, 0.0),
        ];
        let mut model = CnnModel::build(4, 1, &specs, 0).unwrap();
        let conv = &mut model.parameters_mut();
        conv[0].iter_mut().for_each(|w| *w = 1.0);
        conv[1].iter_mut().for_each(|b| *b = -100.0);
        let trace = model.forward(&[0.1, 0.2, 0.3, 0.4], None).unwrap();
        assert!(trace.layer_output(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_hand_computed_correlation() {
        // One channel, w = 4, kernel 3, zero "same" padding, linear activation
        // so the conv output can be read off directly.
        let specs = vec![
            LayerSpec::Conv1d {
                filters: 1,
                kernel_size: 3,
                activation: Activation::Linear,
            },
            LayerSpec::Flatten,
            LayerSpec::dense(1, Activation::Sigmoid, 0.0),
        ];
        let mut model = CnnModel::build(4, 1, &specs, 0).unwrap();
        {
            let mut p = model.parameters_mut();
            *p[0] = vec![0.5, -1.0, 2.0];
            *p[1] = vec![0.25];
            *p[2] = vec![1.0, 10.0, 100.0, 1000.0];
            *p[3] = vec![0.0];
        }
        let x = [1.0, 2.0, 3.0, 4.0];
        // y[t] = b + 0.5*x[t-1] - 1*x[t] + 2*x[t+1], zero outside [0, 4).
        let y = [
            0.25 + 0.0 - 1.0 + 4.0,
            0.25 + 0.5 - 2.0 + 6.0,
            0.25 + 1.0 - 3.0 + 8.0,
            0.25 + 1.5 - 4.0 + 0.0,
        ];
        let trace = model.forward(&x, None).unwrap();
        assert_eq!(trace.layer_output(0), &y);
        let z = y[0] + 10.0 * y[1] + 100.0 * y[2] + 1000.0 * y[3];
        assert_eq!(trace.output()[0], 1.0 / (1.0 + (-z).exp()));
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae_loss(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(mae_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(mae_loss(&[1.0], &[1.0, 2.0]).is_err());
        let mut rng = SplitMix64::new(8);
        let p = random_vec(&mut rng, 51);
        let t = random_vec(&mut rng, 51);
        let mut acc = 0.0;
        for i in 0..51 {
            let d = p[i] - t[i];
            acc += if d < 0.0 { -d } else { d };
        }
        assert!((mae_loss(&p, &t).unwrap() - acc / 51.0).abs() < 1e-12);
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let model = CnnModel::build(4, 2, &tiny_stack(2), 5).unwrap();
        let x = vec![0.2, 0.4, 0.1, 0.9, 0.5, 0.5, 0.3, 0.8];
        let target = model.predict(&x).unwrap();
        let (loss, grads) = model.loss_and_gradients(&x, &target, None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.is_zero());
    }

    #[test]
    fn max_pool_routes_to_argmax_only() {
        let specs = vec![
            LayerSpec::conv(1, 1),
            LayerSpec::pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(1, Activation::Sigmoid, 0.0),
        ];
        let mut model = CnnModel::build(4, 1, &specs, 0).unwrap();
        {
            let mut p = model.parameters_mut();
            *p[0] = vec![1.0];
            *p[1] = vec![0.0];
            *p[2] = vec![0.3, -0.7];
        }
        // Pool pairs (0.9, 0.1) and (0.2, 0.6): argmax positions 0 and 3.
        let x = [0.9, 0.1, 0.2, 0.6];
        let (_, grads) = model.loss_and_gradients(&x, &[0.0], None).unwrap();
        // d loss / d conv weight = sum over selected inputs only.
        let trace = model.forward(&x, None).unwrap();
        let out = trace.output()[0];
        let s = out * (1.0 - out);
        let expected_dw = s * (0.3 * 0.9 + -0.7 * 0.6);
        assert!((grads.tensors[0][0] - expected_dw).abs() < 1e-15);
    }

    #[test]
    fn dropout_only_in_training() {
        let stack = ConvStackSpec {
            dropout: 0.5,
            ..ConvStackSpec::default()
        };
        let model = CnnModel::build(8, 2, &stack.layers(2), 9).unwrap();
        let x: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let a = model.predict(&x).unwrap();
        assert_eq!(a, model.predict(&x).unwrap());
        let mut rng = SplitMix64::new(1);
        let trained = model.forward(&x, Some(&mut rng)).unwrap();
        assert_ne!(trained.output(), a.as_slice());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let model = CnnModel::build(12, 8, &base_stack(8), 77).unwrap();
        let back = CnnModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(model, back);
        assert!(CnnModel::from_json("{\"format\":\"other\",\"model\":null}").is_err());
    }

    #[test]
    fn early_stopping_arithmetic() {
        let mut stop = EarlyStopping::new(5);
        let losses = [1.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2];
        let mut stopped = None;
        for (i, &l) in losses.iter().enumerate() {
            if stop.observe(l).1 {
                stopped = Some(i + 1);
                break;
            }
        }
        assert!(stopped.unwrap() <= 7);
        assert_eq!(stop.best_epoch(), 2);
    }

    #[test]
    fn constant_target_training_reduces_loss() {
        let data = frame(200, 2, |_, c| if c == 0 { 0.8 } else { 0.2 });
        let batch = make_windows(&data, 4).unwrap();
        let mut model = CnnModel::build(4, 2, &tiny_stack(2), 2).unwrap();
        let all: Vec<usize> = (0..batch.len()).collect();
        let before = evaluate_loss(&model, &batch, &all).unwrap();
        let config = TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-2,
            early_stop_patience: 30,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &batch, &config).unwrap();
        let after = evaluate_loss(&model, &batch, &all).unwrap();
        assert!(after < before, "{after} >= {before}");
        assert_eq!(history.train_loss.len(), history.stopped_epoch);
        let min = history.validation_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(history.best_validation_loss(), min);
    }

    #[test]
    fn training_is_reproducible() {
        let data = frame(120, 2, |r, c| ((r as f64 * 0.3 + c as f64).sin() + 1.0) / 2.0);
        let batch = make_windows(&data, 4).unwrap();
        let config = TrainConfig {
            epochs: 5,
            batch_size: 16,
            early_stop_patience: 5,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut a = CnnModel::build(4, 2, &tiny_stack(2), 4).unwrap();
        let mut b = a.clone();
        let ha = train(&mut a, &batch, &config).unwrap();
        let hb = train(&mut b, &batch, &config).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn predict_series_alignment() {
        let data = frame(5, 2, |r, c| (r + c) as f64 / 10.0);
        let model = CnnModel::build(4, 2, &tiny_stack(2), 4).unwrap();
        let forecast = predict_series(&model, &data, 4).unwrap();
        assert_eq!(forecast.len(), 1);
        assert_eq!(forecast.target_indices, vec![4]);

        let data = frame(30, 2, |r, c| (r * 3 + c) as f64 % 1.0);
        let forecast = predict_series(&model, &data, 4).unwrap();
        let batch = make_windows(&data, 4).unwrap();
        for i in 0..batch.len() {
            assert_eq!(forecast.prediction(i), model.predict(batch.input(i)).unwrap().as_slice());
            assert_eq!(forecast.target(i), batch.target(i));
        }
        assert!(predict_series(&model, &frame(4, 2, |_, _| 0.0), 4).is_err());
    }
}
