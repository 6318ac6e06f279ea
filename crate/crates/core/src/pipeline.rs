//! End-to-end wiring: scale, window, train the forecaster, turn its errors
//! into a detector, and score new frames.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{apply_minmax, fit_minmax, make_windows, MinMaxScaler, TimeSeriesFrame};
use crate::detectors::{DetectorKind, DetectorModel, KmeansModel, OcsvmModel, ThresholdModel, VerdictSeries};
use crate::error::{Error, Result};
use crate::errorspace::{augment, embed, ErrorEmbedding, ErrorSeries, DEFAULT_AUGMENT_FRACTION};
use crate::forecaster::{predict_series, train, CnnModel, ConvStackSpec, TrainConfig, TrainHistory};
use crate::metrics::{score, ConfusionCounts, MetricsReport};
use crate::rng::derive_seed;

pub const ARTIFACT_FORMAT: &str = "cps-sentinel/pipeline/v1";

/// Training embeddings larger than this are thinned by a fixed stride before
/// the SVM fit, which is quadratic in memory.
pub const SVM_MAX_POINTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub kind: DetectorKind,
    pub beta: f64,
    pub nu: f64,
    pub gamma: f64,
    pub lag: usize,
    pub augment_fraction: f64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Threshold,
            beta: 1.0,
            nu: 0.05,
            gamma: 1.0,
            lag: 1,
            augment_fraction: DEFAULT_AUGMENT_FRACTION,
        }
    }
}

impl DetectorSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.beta) || !positive(self.gamma) || !positive(self.augment_fraction) {
            return Err(Error::InvalidArgument(
                "detector beta, gamma and augment_fraction must be positive".into(),
            ));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidArgument("detector nu must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub window: usize,
    pub stack: ConvStackSpec,
    pub train: TrainConfig,
    pub detector: DetectorSettings,
    pub seed: u64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            window: 12,
            stack: ConvStackSpec::default(),
            train: TrainConfig::default(),
            detector: DetectorSettings::default(),
            seed: 0,
        }
    }
}

/// Seed streams used inside a pipeline fit.
mod stream {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const KMEANS: u64 = 4;
}

/// A trained forecaster together with its scaler and train-set errors.
#[derive(Debug, Clone)]
pub struct TrainedForecaster {
    pub scaler: MinMaxScaler,
    pub model: CnnModel,
    pub history: TrainHistory,
    pub train_errors: ErrorSeries,
}

impl TrainedForecaster {
    pub fn fit(
        frame: &TimeSeriesFrame,
        window: usize,
        stack: &ConvStackSpec,
        train_config: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        if frame.has_attacks() {
            log::warn!("training frame contains attack-labeled rows");
        }
        let scaler = fit_minmax(frame)?;
        let normalized = apply_minmax(&scaler, frame)?;
        let batch = make_windows(&normalized, window)?;
        let specs = stack.layers(frame.channels());
        let mut model = CnnModel::build(window, frame.channels(), &specs, derive_seed(seed, stream::INIT))?;
        let config = TrainConfig {
            seed: derive_seed(seed, stream::TRAIN),
            ..train_config.clone()
        };
        let history = train(&mut model, &batch, &config)?;
        let forecast = predict_series(&model, &normalized, window)?;
        let train_errors = ErrorSeries::from_forecast(&forecast)?;
        Ok(Self {
            scaler,
            model,
            history,
            train_errors,
        })
    }

    pub fn errors(&self, frame: &TimeSeriesFrame) -> Result<ErrorSeries> {
        forecast_errors(&self.scaler, &self.model, frame)
    }
}

fn forecast_errors(scaler: &MinMaxScaler, model: &CnnModel, frame: &TimeSeriesFrame) -> Result<ErrorSeries> {
    let normalized = apply_minmax(scaler, frame)?;
    let forecast = predict_series(model, &normalized, model.window())?;
    ErrorSeries::from_forecast(&forecast)
}

fn thin(embedding: &ErrorEmbedding, max_points: usize) -> ErrorEmbedding {
    let n = embedding.real_len();
    if n <= max_points {
        return embedding.clone();
    }
    let stride = n.div_ceil(max_points);
    let keep: Vec<usize> = (0..n).step_by(stride).collect();
    ErrorEmbedding {
        lag: embedding.lag,
        points: keep.iter().map(|&i| embedding.points[i]).collect(),
        point_indices: keep.iter().map(|&i| embedding.point_indices[i]).collect(),
        weights: embedding
            .weights
            .as_ref()
            .map(|w| keep.iter().map(|&i| w[i]).collect()),
        synthetic: vec![false; keep.len()],
    }
}

/// Fits the configured detector on train-set errors.
pub fn fit_detector(train_errors: &ErrorSeries, settings: &DetectorSettings, seed: u64) -> Result<DetectorModel> {
    match settings.kind {
        DetectorKind::Threshold => Ok(DetectorModel::Threshold(ThresholdModel::fit(
            train_errors,
            settings.beta,
        )?)),
        DetectorKind::Ocsvm => {
            let embedding = thin(&embed(train_errors, settings.lag)?, SVM_MAX_POINTS);
            Ok(DetectorModel::Ocsvm(OcsvmModel::fit(&embedding, settings.nu, settings.gamma)?))
        }
        DetectorKind::Kmeans => {
            let embedding = embed(train_errors, settings.lag)?;
            let augmented = augment(
                &embedding,
                train_errors.delta,
                train_errors.sigma,
                settings.augment_fraction,
                derive_seed(seed, stream::AUGMENT),
            )?;
            Ok(DetectorModel::Kmeans(KmeansModel::fit(
                &augmented,
                derive_seed(seed, stream::KMEANS),
            )?))
        }
    }
}

/// Verdicts aligned one-to-one with `errors`.
pub fn run_detector(detector: &DetectorModel, lag: usize, errors: &ErrorSeries) -> Result<VerdictSeries> {
    let verdicts = match detector {
        DetectorModel::Threshold(m) => return Ok(m.detect(errors)),
        DetectorModel::Ocsvm(m) => m.detect(&embed(errors, lag)?),
        DetectorModel::Kmeans(m) => m.detect(&embed(errors, lag)?),
    };
    Ok(verdicts.expand_to(&errors.target_indices))
}

/// Labels of `frame` at the scored rows, `true` for attack.
pub fn labels_at(frame: &TimeSeriesFrame, indices: &[usize]) -> Result<Vec<bool>> {
    indices
        .iter()
        .map(|&i| {
            frame
                .labels()
                .get(i)
                .map(|l| l.is_attack())
                .ok_or_else(|| Error::Shape(format!("verdict index {i} outside frame of {} rows", frame.rows())))
        })
        .collect()
}

pub fn evaluate(verdicts: &VerdictSeries, frame: &TimeSeriesFrame) -> Result<(ConfusionCounts, MetricsReport)> {
    score(&verdicts.flags, &labels_at(frame, &verdicts.indices)?)
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub errors: ErrorSeries,
    pub verdicts: VerdictSeries,
}

/// Serialized artifact: everything needed to score a new frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub format: String,
    pub channel_names: Vec<String>,
    pub scaler: MinMaxScaler,
    pub model: CnnModel,
    pub lag: usize,
    pub detector: DetectorModel,
    pub train_delta: f64,
    pub train_sigma: f64,
}

impl Pipeline {
    pub fn fit(frame: &TimeSeriesFrame, settings: &PipelineSettings) -> Result<(Self, TrainHistory)> {
        let forecaster = TrainedForecaster::fit(frame, settings.window, &settings.stack, &settings.train, settings.seed)?;
        let pipeline = Self::assemble(frame, &forecaster, &settings.detector, settings.seed)?;
        Ok((pipeline, forecaster.history))
    }

    /// Fits a detector on an already trained forecaster.
    pub fn assemble(
        frame: &TimeSeriesFrame,
        forecaster: &TrainedForecaster,
        detector: &DetectorSettings,
        seed: u64,
    ) -> Result<Self> {
        let model = fit_detector(&forecaster.train_errors, detector, seed)?;
        Ok(Self {
            format: ARTIFACT_FORMAT.to_string(),
            channel_names: frame.schema().names().to_vec(),
            scaler: forecaster.scaler.clone(),
            model: forecaster.model.clone(),
            lag: detector.lag,
            detector: model,
            train_delta: forecaster.train_errors.delta,
            train_sigma: forecaster.train_errors.sigma,
        })
    }

    pub fn detect(&self, frame: &TimeSeriesFrame) -> Result<Detection> {
        if frame.schema().names() != self.channel_names.as_slice() {
            return Err(Error::Shape(format!(
                "frame channels {:?} do not match the trained channels {:?}",
                frame.schema().names(),
                self.channel_names
            )));
        }
        let errors = forecast_errors(&self.scaler, &self.model, frame)?;
        let verdicts = run_detector(&self.detector, self.lag, &errors)?;
        Ok(Detection { errors, verdicts })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pipeline: Self = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if pipeline.format != ARTIFACT_FORMAT {
            return Err(Error::Serialization(format!(
                "unsupported artifact format '{}', expected '{ARTIFACT_FORMAT}'",
                pipeline.format
            )));
        }
        Ok(pipeline)
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
    use crate::plantsim::{inject_attacks, simulate_normal, AttackCategory, AttackSpec, ChannelRole, Manipulation, PlantConfig};

    fn quick_settings(kind: DetectorKind) -> PipelineSettings {
        PipelineSettings {
            window: 8,
            stack: ConvStackSpec {
                conv_filters: [4, 4],
                kernel_size: 3,
                dense_units: [8, 8],
                dropout: 0.0,
            },
            train: TrainConfig {
                epochs: 3,
                batch_size: 64,
                early_stop_patience: 2,
                ..TrainConfig::default()
            },
            detector: DetectorSettings {
                kind,
                ..DetectorSettings::default()
            },
            seed: 5,
        }
    }

    #[test]
    fn every_detector_fits_and_round_trips() {
        let plant = PlantConfig::default();
        let train_frame = simulate_normal(&plant, 400).unwrap();
        let test = inject_attacks(
            &simulate_normal(&plant, 200).unwrap(),
            &[AttackSpec {
                category: AttackCategory::Sssp,
                start: 100,
                duration: 20,
                targets: vec![(0, ChannelRole::Level)],
                manipulation: Manipulation::Offset(300.0),
            }],
        )
        .unwrap();
        for kind in DetectorKind::ALL {
            let (pipeline, history) = Pipeline::fit(&train_frame, &quick_settings(kind)).unwrap();
            assert!(history.stopped_epoch >= 1);
            assert_eq!(pipeline.detector.kind(), kind);
            let detection = pipeline.detect(&test).unwrap();
            assert_eq!(detection.verdicts.indices, detection.errors.target_indices);
            assert_eq!(detection.errors.len(), 200 - 8);
            let back = Pipeline::from_json(&pipeline.to_json().unwrap()).unwrap();
            assert_eq!(back, pipeline);
            assert_eq!(back.detect(&test).unwrap().verdicts, detection.verdicts);
            evaluate(&detection.verdicts, &test).unwrap();
        }
    }

    #[test]
    fn threshold_pipeline_is_quiet_on_its_training_data() {
        let frame = simulate_normal(&PlantConfig::default(), 300).unwrap();
        let (pipeline, _) = Pipeline::fit(&frame, &quick_settings(DetectorKind::Threshold)).unwrap();
        assert_eq!(pipeline.detect(&frame).unwrap().verdicts.attack_count(), 0);
    }

    #[test]
    fn thinning_keeps_order() {
        let s = ErrorSeries::new((0..50).map(|i| i as f64 * 0.01).collect(), (0..50).collect()).unwrap();
        let e = embed(&s, 1).unwrap();
        let t = thin(&e, 10);
        assert!(t.len() <= 10);
        assert!(t.point_indices.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn rejects_foreign_artifacts() {
        assert!(Pipeline::from_json("{\"format\":\"other\"}").is_err());
    }
}
