//! TOML run configuration shared by every CLI subcommand.
//!
//! ```toml
//! seed = 1
//!
//! [paths]
//! train = "data/normal.csv"
//! validation = "data/validation.csv"
//! test = "data/attack.csv"
//! model = "out/model.json"
//! output = "out"
//!
//! [plant]
//! stages = 2
//! capacity = 100.0
//! inflow = 8.0
//! outflow = [4.0, 2.0]
//! noise_sigma = 0.1
//! seed = 7
//!
//! [[attack]]
//! category = "SSSP"
//! start = 100
//! duration = 60
//! targets = ["LIT101"]
//! manipulation = "offset:40"
//!
//! [forecaster]
//! window = 12
//!
//! [train]
//! epochs = 100
//!
//! [detector]
//! kind = "threshold"
//! beta = 1.5
//!
//! [ga]
//! population_size = 20
//! pin = ["window", "filters1"]
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmark::SplitPlan;
use crate::error::{Error, Result};
use crate::forecaster::{ConvStackSpec, TrainConfig};
use crate::gaopt::{GaConfig, Gene, Genome, GenomeSpace};
use crate::pipeline::{DetectorSettings, PipelineSettings};
use crate::plantsim::{parse_channel_name, AttackCategory, AttackSpec, Manipulation, PlantConfig, StageConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// All-normal training CSV.
    pub train: Option<PathBuf>,
    /// Labeled CSV for GA fitness.
    pub validation: Option<PathBuf>,
    /// Labeled CSV for final scoring.
    pub test: Option<PathBuf>,
    /// Pipeline artifact (JSON).
    pub model: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// A scalar applies to every stage; a list gives one value per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerStage {
    All(f64),
    Each(Vec<f64>),
}

impl PerStage {
    fn get(&self, stage: usize, stages: usize, key: &str) -> Result<f64> {
        match self {
            PerStage::All(v) => Ok(*v),
            PerStage::Each(v) if v.len() == stages => Ok(v[stage]),
            PerStage::Each(v) => Err(Error::Config(format!(
                "plant.{key} lists {} values for {stages} stages",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub stages: usize,
    pub capacity: PerStage,
    pub inflow: PerStage,
    pub outflow: PerStage,
    pub noise_sigma: PerStage,
    pub low_mark: f64,
    pub high_mark: f64,
    pub overflow_mark: f64,
    pub initial_level: f64,
    pub seed: u64,
    pub burn_in: usize,
    pub normal_steps: usize,
    pub validation_steps: usize,
    pub attack_steps: usize,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = PlantConfig::default();
        let plan = SplitPlan::default();
        let s = &p.stages[0];
        Self {
            stages: p.stages.len(),
            capacity: PerStage::All(s.capacity),
            inflow: PerStage::All(s.inflow),
            outflow: PerStage::All(s.outflow),
            noise_sigma: PerStage::All(s.noise_sigma),
            low_mark: p.low_mark,
            high_mark: p.high_mark,
            overflow_mark: p.overflow_mark,
            initial_level: p.initial_level,
            seed: p.seed,
            burn_in: plan.burn_in,
            normal_steps: plan.train,
            validation_steps: 0,
            attack_steps: plan.test,
        }
    }
}

impl PlantSection {
    pub fn plant(&self) -> Result<PlantConfig> {
        let n = self.stages;
        let stages = (0..n)
            .map(|k| {
                Ok(StageConfig {
                    capacity: self.capacity.get(k, n, "capacity")?,
                    inflow: self.inflow.get(k, n, "inflow")?,
                    outflow: self.outflow.get(k, n, "outflow")?,
                    noise_sigma: self.noise_sigma.get(k, n, "noise_sigma")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let plant = PlantConfig {
            stages,
            low_mark: self.low_mark,
            high_mark: self.high_mark,
            overflow_mark: self.overflow_mark,
            initial_level: self.initial_level,
            seed: self.seed,
        };
        plant.validate()?;
        Ok(plant)
    }

    pub fn plan(&self) -> SplitPlan {
        SplitPlan {
            burn_in: self.burn_in,
            train: self.normal_steps,
            validation: self.validation_steps,
            test: self.attack_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEntry {
    pub category: String,
    pub start: usize,
    pub duration: usize,
    /// Channel names such as `LIT101`.
    pub targets: Vec<String>,
    /// `freeze`, `offset:<amount>` or `force:<on|off|value>`.
    pub manipulation: String,
}

impl AttackEntry {
    pub fn spec(&self) -> Result<AttackSpec> {
        let targets = self
            .targets
            .iter()
            .map(|t| parse_channel_name(t).ok_or_else(|| Error::Config(format!("unknown attack target {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let spec = AttackSpec {
            category: self.category.parse::<AttackCategory>()?,
            start: self.start,
            duration: self.duration,
            targets,
            manipulation: self.manipulation.parse::<Manipulation>()?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterSection {
    pub window: usize,
    pub conv_filters: [usize; 2],
    pub kernel_size: usize,
    pub dense_units: [usize; 2],
    pub dropout: f64,
}

impl Default for ForecasterSection {
    fn default() -> Self {
        let s = ConvStackSpec::default();
        Self {
            window: 12,
            conv_filters: s.conv_filters,
            kernel_size: s.kernel_size,
            dense_units: s.dense_units,
            dropout: s.dropout,
        }
    }
}

impl ForecasterSection {
    pub fn stack(&self) -> ConvStackSpec {
        ConvStackSpec {
            conv_filters: self.conv_filters,
            kernel_size: self.kernel_size,
            dense_units: self.dense_units,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaSection {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism_count: usize,
    pub seed: u64,
    /// Epoch budget per evaluated genome.
    pub budget_epochs: usize,
    /// Genes held at the base genome's value.
    pub pin: Vec<Gene>,
}

impl Default for GaSection {
    fn default() -> Self {
        let g = GaConfig::default();
        Self {
            population_size: g.population_size,
            generations: g.generations,
            tournament_size: g.tournament_size,
            crossover_rate: g.crossover_rate,
            mutation_rate: g.mutation_rate,
            elitism_count: g.elitism_count,
            seed: g.seed,
            budget_epochs: 20,
            pin: Vec::new(),
        }
    }
}

impl GaSection {
    pub fn ga_config(&self) -> GaConfig {
        GaConfig {
            population_size: self.population_size,
            generations: self.generations,
            tournament_size: self.tournament_size,
            crossover_rate: self.crossover_rate,
            mutation_rate: self.mutation_rate,
            elitism_count: self.elitism_count,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub plant: Option<PlantSection>,
    pub attack: Vec<AttackEntry>,
    pub validation_attack: Vec<AttackEntry>,
    pub forecaster: ForecasterSection,
    pub train: TrainConfig,
    pub detector: DetectorSettings,
    pub ga: GaSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut config.paths;
        for slot in [&mut p.train, &mut p.validation, &mut p.test, &mut p.model, &mut p.output] {
            if let Some(rel) = slot.as_ref().filter(|p| p.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.ga_settings().0.validate()?;
        check_stack(&self.forecaster)?;
        self.detector.validate()?;
        if let Some(plant) = &self.plant {
            plant.plant()?;
        }
        for a in self.attack.iter().chain(&self.validation_attack) {
            a.spec()?;
        }
        Ok(())
    }

    pub fn attacks(&self) -> Result<Vec<AttackSpec>> {
        self.attack.iter().map(AttackEntry::spec).collect()
    }

    pub fn validation_attacks(&self) -> Result<Vec<AttackSpec>> {
        self.validation_attack.iter().map(AttackEntry::spec).collect()
    }

    pub fn pipeline_settings(&self) -> PipelineSettings {
        PipelineSettings {
            window: self.forecaster.window,
            stack: self.forecaster.stack(),
            train: self.train.clone(),
            detector: self.detector.clone(),
            seed: self.seed,
        }
    }

    /// Genome matching the configured forecaster and detector.
    pub fn stack_genome(&self) -> Genome {
        let f = &self.forecaster;
        let d = &self.detector;
        Genome {
            window: f.window,
            beta: d.beta,
            lag: d.lag,
            conv_filters: f.conv_filters,
            kernel_size: f.kernel_size,
            dense_units: f.dense_units,
            dropout: f.dropout,
            learning_rate: self.train.learning_rate,
            detector: d.kind,
            nu: d.nu,
            gamma: d.gamma,
        }
    }

    /// GA parameters, search space based on the configured genome, and the
    /// per-genome training budget.
    pub fn ga_settings(&self) -> (GaConfig, GenomeSpace, TrainConfig) {
        let space = GenomeSpace {
            base: self.stack_genome(),
            pinned: self.ga.pin.iter().copied().collect(),
        };
        let budget = TrainConfig {
            epochs: self.ga.budget_epochs,
            early_stop_patience: self.train.early_stop_patience.min(self.ga.budget_epochs.max(1)),
            ..self.train.clone()
        };
        (self.ga.ga_config(), space, budget)
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("missing paths.{key} in config")))
    }
}

/// Values outside the GA domains are fine in a fixed config; only
/// structurally impossible stacks are rejected here.
fn check_stack(f: &ForecasterSection) -> Result<()> {
    if f.window == 0 || f.kernel_size == 0 {
        return Err(Error::Config("forecaster window and kernel_size must be positive".into()));
    }
    if f.conv_filters.contains(&0) || f.dense_units.contains(&0) {
        return Err(Error::Config("layer sizes must be positive".into()));
    }
    if !(0.0..1.0).contains(&f.dropout) {
        return Err(Error::Config("dropout must lie in [0, 1)".into()));
    }
    Ok(())
}
