//! Pinned synthetic benchmark: a two-stage plant, an all-normal training
//! trace, and labeled validation and test traces with five attacks each.

use crate::dataio::TimeSeriesFrame;
use crate::error::Result;
use crate::forecaster::{ConvStackSpec, TrainConfig};
use crate::pipeline::{DetectorSettings, PipelineSettings};
use crate::plantsim::{inject_attacks, simulate_normal, AttackCategory, AttackSpec, ChannelRole, Manipulation, PlantConfig};

/// Start-up steps dropped before the training trace.
pub const BURN_IN: usize = 200;
pub const TRAIN_STEPS: usize = 5000;
pub const VALIDATION_STEPS: usize = 1000;
pub const TEST_STEPS: usize = 1000;
/// Level offset injected by every benchmark attack.
pub const ATTACK_OFFSET: f64 = 40.0;

pub const THRESHOLD_F1_TARGET: f64 = 0.85;
pub const KMEANS_F1_TARGET: f64 = 0.80;

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub plant: PlantConfig,
    pub train: TimeSeriesFrame,
    pub validation: TimeSeriesFrame,
    pub test: TimeSeriesFrame,
}

/// Two 100-unit tanks. Integer flow rates keep levels on a coarse lattice so
/// pump and valve switches land on predictable steps.
pub fn reference_plant() -> PlantConfig {
    let mut plant = PlantConfig::uniform(2, 100.0, 8.0, 4.0, 0.1, 7);
    plant.stages[1].outflow = 2.0;
    plant
}

type Slot = (AttackCategory, Vec<(usize, ChannelRole)>, f64);

fn attacks(starts: [usize; 5], duration: usize, sign: f64) -> Vec<AttackSpec> {
    use AttackCategory::*;
    use ChannelRole::*;
    let plan: [Slot; 5] = [
        (Sssp, vec![(0, Level)], 1.0),
        (Sssp, vec![(1, Level)], -1.0),
        (Mssp, vec![(0, Level), (1, Level)], 1.0),
        (Ssmp, vec![(0, Level), (0, Flow)], -1.0),
        (Msmp, vec![(0, Level), (1, Level), (1, Flow)], 1.0),
    ];
    plan.into_iter()
        .zip(starts)
        .map(|((category, targets, s), start)| AttackSpec {
            category,
            start,
            duration,
            targets,
            manipulation: Manipulation::Offset(sign * s * ATTACK_OFFSET),
        })
        .collect()
}

pub fn test_attacks() -> Vec<AttackSpec> {
    attacks([100, 280, 460, 640, 820], 60, 1.0)
}

/// Different timing and signs from the test attacks.
pub fn validation_attacks() -> Vec<AttackSpec> {
    attacks([150, 330, 500, 690, 850], 50, -1.0)
}

/// Forecaster and detector settings used on the benchmark. The stack has the
/// base shape with dropout 0: inverted dropout on the output layer scales
/// inference outputs relative to training and leaves a persistent bias.
pub fn reference_settings(seed: u64) -> PipelineSettings {
    PipelineSettings {
        window: 12,
        stack: ConvStackSpec {
            dropout: 0.0,
            ..ConvStackSpec::default()
        },
        train: TrainConfig {
            epochs: 100,
            ..TrainConfig::default()
        },
        detector: DetectorSettings::default(),
        seed,
    }
}

/// Lengths of the consecutive pieces cut from one simulated trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitPlan {
    pub burn_in: usize,
    pub train: usize,
    /// Zero skips the validation split.
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            burn_in: BURN_IN,
            train: TRAIN_STEPS,
            validation: VALIDATION_STEPS,
            test: TEST_STEPS,
        }
    }
}

/// Simulates `burn_in + train + validation + test` steps and cuts them in
/// that order; attacks are positioned relative to their own split.
pub fn simulate_splits(
    plant: &PlantConfig,
    plan: &SplitPlan,
    validation_attacks: &[AttackSpec],
    test_attacks: &[AttackSpec],
) -> Result<(TimeSeriesFrame, Option<TimeSeriesFrame>, TimeSeriesFrame)> {
    let full = simulate_normal(plant, plan.burn_in + plan.train + plan.validation + plan.test)?;
    let v0 = plan.burn_in + plan.train;
    let t0 = v0 + plan.validation;
    let train = full.slice(plan.burn_in, v0)?;
    let validation = if plan.validation > 0 {
        Some(inject_attacks(&full.slice(v0, t0)?, validation_attacks)?)
    } else {
        None
    };
    let test = inject_attacks(&full.slice(t0, t0 + plan.test)?, test_attacks)?;
    Ok((train, validation, test))
}

pub fn reference_benchmark() -> Result<Benchmark> {
    let plant = reference_plant();
    let (train, validation, test) = simulate_splits(&plant, &SplitPlan::default(), &validation_attacks(), &test_attacks())?;
    Ok(Benchmark {
        plant,
        train,
        validation: validation.expect("reference plan has a validation split"),
        test,
    })
}
