//! Genetic search over pipeline hyperparameters, maximizing validation F1.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::TimeSeriesFrame;
use crate::detectors::DetectorKind;
use crate::error::{Error, Result};
use crate::errorspace::ErrorSeries;
use crate::forecaster::{ConvStackSpec, TrainConfig};
use crate::pipeline::{fit_detector, labels_at, run_detector, DetectorSettings, PipelineSettings, TrainedForecaster};
use crate::rng::{derive_seed, fnv1a, SplitMix64};

/// Environment variable capping parallel evaluation; `0` means serial.
pub const THREADS_ENV: &str = "CPS_SENTINEL_THREADS";

pub const WINDOWS: [usize; 5] = [8, 12, 16, 20, 24];
pub const BETA_RANGE: (f64, f64) = (1.0, 3.0);
pub const LAGS: [usize; 4] = [1, 2, 3, 5];
pub const FILTERS: [usize; 3] = [16, 32, 64];
pub const KERNELS: [usize; 3] = [3, 5, 7];
pub const DENSE_UNITS: [usize; 4] = [16, 32, 64, 128];
pub const DROPOUTS: [f64; 4] = [0.0, 0.1, 0.2, 0.3];
pub const LEARNING_RATES: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const NUS: [f64; 3] = [0.01, 0.05, 0.1];
pub const GAMMAS: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gene {
    Window,
    Beta,
    Lag,
    Filters1,
    Filters2,
    Kernel,
    Dense1,
    Dense2,
    Dropout,
    LearningRate,
    Detector,
    Nu,
    Gamma,
}

impl Gene {
    pub const ALL: [Gene; 13] = [
        Gene::Window,
        Gene::Beta,
        Gene::Lag,
        Gene::Filters1,
        Gene::Filters2,
        Gene::Kernel,
        Gene::Dense1,
        Gene::Dense2,
        Gene::Dropout,
        Gene::LearningRate,
        Gene::Detector,
        Gene::Nu,
        Gene::Gamma,
    ];

    /// Genes that change the trained forecaster.
    pub const ARCHITECTURE: [Gene; 8] = [
        Gene::Window,
        Gene::Filters1,
        Gene::Filters2,
        Gene::Kernel,
        Gene::Dense1,
        Gene::Dense2,
        Gene::Dropout,
        Gene::LearningRate,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub window: usize,
    pub beta: f64,
    pub lag: usize,
    pub conv_filters: [usize; 2],
    pub kernel_size: usize,
    pub dense_units: [usize; 2],
    pub dropout: f64,
    pub learning_rate: f64,
    pub detector: DetectorKind,
    pub nu: f64,
    pub gamma: f64,
}

impl Default for Genome {
    /// The base architecture with a threshold detector at `beta = 1`.
    fn default() -> Self {
        let stack = ConvStackSpec::default();
        Self {
            window: 12,
            beta: 1.0,
            lag: 1,
            conv_filters: stack.conv_filters,
            kernel_size: stack.kernel_size,
            dense_units: stack.dense_units,
            dropout: stack.dropout,
            learning_rate: 1e-3,
            detector: DetectorKind::Threshold,
            nu: 0.05,
            gamma: 1.0,
        }
    }
}

fn pick<T: Copy>(rng: &mut SplitMix64, values: &[T]) -> T {
    values[rng.below(values.len())]
}

impl Genome {
    pub fn random(rng: &mut SplitMix64) -> Self {
        let mut g = Genome::default();
        for gene in Gene::ALL {
            g.resample(gene, rng);
        }
        g
    }

    /// Draws `gene` afresh from its domain.
    pub fn resample(&mut self, gene: Gene, rng: &mut SplitMix64) {
        match gene {
            Gene::Window => self.window = pick(rng, &WINDOWS),
            Gene::Beta => self.beta = rng.uniform(BETA_RANGE.0, BETA_RANGE.1),
            Gene::Lag => self.lag = pick(rng, &LAGS),
            Gene::Filters1 => self.conv_filters[0] = pick(rng, &FILTERS),
            Gene::Filters2 => self.conv_filters[1] = pick(rng, &FILTERS),
            Gene::Kernel => self.kernel_size = pick(rng, &KERNELS),
            Gene::Dense1 => self.dense_units[0] = pick(rng, &DENSE_UNITS),
            Gene::Dense2 => self.dense_units[1] = pick(rng, &DENSE_UNITS),
            Gene::Dropout => self.dropout = pick(rng, &DROPOUTS),
            Gene::LearningRate => self.learning_rate = pick(rng, &LEARNING_RATES),
            Gene::Detector => self.detector = pick(rng, &DetectorKind::ALL),
            Gene::Nu => self.nu = pick(rng, &NUS),
            Gene::Gamma => self.gamma = pick(rng, &GAMMAS),
        }
    }

    /// Copies `gene` from `other`.
    pub fn inherit(&mut self, gene: Gene, other: &Genome) {
        match gene {
            Gene::Window => self.window = other.window,
            Gene::Beta => self.beta = other.beta,
            Gene::Lag => self.lag = other.lag,
            Gene::Filters1 => self.conv_filters[0] = other.conv_filters[0],
            Gene::Filters2 => self.conv_filters[1] = other.conv_filters[1],
            Gene::Kernel => self.kernel_size = other.kernel_size,
            Gene::Dense1 => self.dense_units[0] = other.dense_units[0],
            Gene::Dense2 => self.dense_units[1] = other.dense_units[1],
            Gene::Dropout => self.dropout = other.dropout,
            Gene::LearningRate => self.learning_rate = other.learning_rate,
            Gene::Detector => self.detector = other.detector,
            Gene::Nu => self.nu = other.nu,
            Gene::Gamma => self.gamma = other.gamma,
        }
    }

    pub fn gene_valid(&self, gene: Gene) -> bool {
        match gene {
            Gene::Window => WINDOWS.contains(&self.window),
            Gene::Beta => (BETA_RANGE.0..=BETA_RANGE.1).contains(&self.beta),
            Gene::Lag => LAGS.contains(&self.lag),
            Gene::Filters1 => FILTERS.contains(&self.conv_filters[0]),
            Gene::Filters2 => FILTERS.contains(&self.conv_filters[1]),
            Gene::Kernel => KERNELS.contains(&self.kernel_size),
            Gene::Dense1 => DENSE_UNITS.contains(&self.dense_units[0]),
            Gene::Dense2 => DENSE_UNITS.contains(&self.dense_units[1]),
            Gene::Dropout => DROPOUTS.contains(&self.dropout),
            Gene::LearningRate => LEARNING_RATES.contains(&self.learning_rate),
            Gene::Detector => true,
            Gene::Nu => NUS.contains(&self.nu),
            Gene::Gamma => GAMMAS.contains(&self.gamma),
        }
    }

    pub fn is_valid(&self) -> bool {
        Gene::ALL.iter().all(|&g| self.gene_valid(g))
    }

    pub fn stack(&self) -> ConvStackSpec {
        ConvStackSpec {
            conv_filters: self.conv_filters,
            kernel_size: self.kernel_size,
            dense_units: self.dense_units,
            dropout: self.dropout,
        }
    }

    pub fn detector_settings(&self) -> DetectorSettings {
        DetectorSettings {
            kind: self.detector,
            beta: self.beta,
            nu: self.nu,
            gamma: self.gamma,
            lag: self.lag,
            ..DetectorSettings::default()
        }
    }

    /// Full pipeline settings under a training budget.
    pub fn settings(&self, budget: &TrainConfig, seed: u64) -> PipelineSettings {
        PipelineSettings {
            window: self.window,
            stack: self.stack(),
            train: TrainConfig {
                learning_rate: self.learning_rate,
                ..budget.clone()
            },
            detector: self.detector_settings(),
            seed,
        }
    }

    /// `key=value` list identifying the genome; equal keys mean equal genomes.
    pub fn key(&self) -> String {
        format!(
            "w={};beta={};lag={};filters={}/{};kernel={};dense={}/{};dropout={};lr={};detector={};nu={};gamma={}",
            self.window,
            self.beta,
            self.lag,
            self.conv_filters[0],
            self.conv_filters[1],
            self.kernel_size,
            self.dense_units[0],
            self.dense_units[1],
            self.dropout,
            self.learning_rate,
            self.detector,
            self.nu,
            self.gamma
        )
    }

    /// Key of the forecaster-relevant genes only.
    pub fn architecture_key(&self) -> String {
        format!(
            "w={};filters={}/{};kernel={};dense={}/{};dropout={};lr={}",
            self.window,
            self.conv_filters[0],
            self.conv_filters[1],
            self.kernel_size,
            self.dense_units[0],
            self.dense_units[1],
            self.dropout,
            self.learning_rate
        )
    }
}

/// Which genes evolve; pinned genes keep the value of `base`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenomeSpace {
    pub base: Genome,
    pub pinned: BTreeSet<Gene>,
}

impl GenomeSpace {
    pub fn pin(mut self, genes: impl IntoIterator<Item = Gene>) -> Self {
        self.pinned.extend(genes);
        self
    }

    /// Only beta evolves.
    pub fn beta_only(base: Genome) -> Self {
        Self {
            base,
            pinned: Gene::ALL.iter().copied().filter(|g| *g != Gene::Beta).collect(),
        }
    }

    pub fn free_genes(&self) -> Vec<Gene> {
        Gene::ALL.iter().copied().filter(|g| !self.pinned.contains(g)).collect()
    }

    pub fn random(&self, rng: &mut SplitMix64) -> Genome {
        let mut g = self.base.clone();
        for gene in self.free_genes() {
            g.resample(gene, rng);
        }
        g
    }

    /// Resamples invalid free genes and restores pinned ones.
    pub fn repair(&self, genome: &mut Genome, rng: &mut SplitMix64) {
        for gene in Gene::ALL {
            if self.pinned.contains(&gene) {
                genome.inherit(gene, &self.base);
            } else if !genome.gene_valid(gene) {
                genome.resample(gene, rng);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism_count: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 20,
            generations: 47,
            tournament_size: 3,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            elitism_count: 1,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::InvalidArgument("population_size must be at least 2".into()));
        }
        if self.generations == 0 || self.tournament_size == 0 {
            return Err(Error::InvalidArgument("generations and tournament_size must be positive".into()));
        }
        if self.elitism_count >= self.population_size {
            return Err(Error::InvalidArgument("elitism_count must be below population_size".into()));
        }
        for (name, rate) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Fitness of one genome; `reason` explains a forced zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub reason: Option<String>,
}

impl Evaluation {
    pub fn ok(fitness: f64) -> Self {
        Self { fitness, reason: None }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        Self {
            fitness: 0.0,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub generation: usize,
    pub index: usize,
    pub genome_key: String,
    pub fitness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub best: Individual,
    pub history: Vec<GenerationStats>,
    pub log: Vec<LogEntry>,
    pub evaluations: usize,
}

impl EvolutionResult {
    pub fn best_history(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.best).collect()
    }

    /// `generation,index,genome,fitness`, genome as a `key=value` list.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("generation,index,genome,fitness\n");
        for e in &self.log {
            let _ = writeln!(out, "{},{},\"{}\",{}", e.generation, e.index, e.genome_key, e.fitness);
        }
        out
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("generation,best_fitness,mean_fitness\n");
        for h in &self.history {
            let _ = writeln!(out, "{},{},{}", h.generation, h.best, h.mean);
        }
        out
    }
}

/// Thread cap from [`THREADS_ENV`]: `Some(0)` is serial, `None` means unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn tournament(rng: &mut SplitMix64, fitness: &[f64], size: usize) -> usize {
    let mut best = rng.below(fitness.len());
    for _ in 1..size {
        let c = rng.below(fitness.len());
        if fitness[c] > fitness[best] || (fitness[c] == fitness[best] && c < best) {
            best = c;
        }
    }
    best
}

/// Runs the GA. Generation 0 holds `space.base` plus random genomes; every
/// later generation keeps the `elitism_count` best unchanged and fills the
/// rest by tournament selection, uniform crossover and per-gene mutation.
///
/// `evaluate` must be a pure function of the genome. Fitness is cached by
/// genome key, and new genomes of a generation are evaluated in parallel
/// unless `threads` is `Some(0)`.
pub fn evolve<F>(config: &GaConfig, space: &GenomeSpace, threads: Option<usize>, evaluate: F) -> Result<EvolutionResult>
where
    F: Fn(&Genome) -> Evaluation + Sync,
{
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let mut population = vec![space.base.clone()];
    while population.len() < config.population_size {
        population.push(space.random(&mut rng));
    }

    let pool = match threads {
        Some(n) if n > 0 => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?,
        ),
        _ => None,
    };
    let serial = threads == Some(0);

    let mut cache: HashMap<String, f64> = HashMap::new();
    let mut history = Vec::with_capacity(config.generations);
    let mut log = Vec::new();
    let mut best: Option<(Genome, f64)> = None;

    for generation in 0..config.generations {
        let mut pending: Vec<(String, &Genome)> = Vec::new();
        for g in &population {
            let key = g.key();
            if !cache.contains_key(&key) && !pending.iter().any(|(k, _)| *k == key) {
                pending.push((key, g));
            }
        }
        let run = |(key, g): &(String, &Genome)| {
            let e = evaluate(g);
            if let Some(reason) = &e.reason {
                log::warn!("genome {key} scored 0: {reason}");
            }
            e.fitness
        };
        let scores: Vec<f64> = if serial {
            pending.iter().map(run).collect()
        } else if let Some(pool) = &pool {
            pool.install(|| pending.par_iter().map(run).collect())
        } else {
            pending.par_iter().map(run).collect()
        };
        for ((key, _), s) in pending.iter().zip(scores) {
            cache.insert(key.clone(), s);
        }

        let fitness: Vec<f64> = population.iter().map(|g| cache[&g.key()]).collect();
        for (index, (g, f)) in population.iter().zip(&fitness).enumerate() {
            log.push(LogEntry {
                generation,
                index,
                genome_key: g.key(),
                fitness: *f,
            });
            if best.as_ref().is_none_or(|(_, b)| *f > *b) {
                best = Some((g.clone(), *f));
            }
        }
        let gen_best = fitness.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
        log::info!("generation {generation}: best {gen_best:.4} mean {mean:.4}");
        history.push(GenerationStats {
            generation,
            best: gen_best,
            mean,
        });

        if generation + 1 == config.generations {
            break;
        }
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
        let mut next: Vec<Genome> = order[..config.elitism_count]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        let free = space.free_genes();
        while next.len() < config.population_size {
            let a = tournament(&mut rng, &fitness, config.tournament_size);
            let b = tournament(&mut rng, &fitness, config.tournament_size);
            let mut child = population[a].clone();
            if rng.bernoulli(config.crossover_rate) {
                for &gene in &free {
                    if rng.bernoulli(0.5) {
                        child.inherit(gene, &population[b]);
                    }
                }
            }
            for &gene in &free {
                if rng.bernoulli(config.mutation_rate) {
                    child.resample(gene, &mut rng);
                }
            }
            space.repair(&mut child, &mut rng);
            next.push(child);
        }
        population = next;
    }

    let (genome, fitness) = best.expect("at least one generation ran");
    Ok(EvolutionResult {
        best: Individual {
            genome,
            fitness: Some(fitness),
        },
        history,
        log,
        evaluations: cache.len(),
    })
}

struct CachedForecaster {
    forecaster: TrainedForecaster,
    validation_errors: ErrorSeries,
}

type ForecasterSlot = Arc<OnceLock<std::result::Result<Arc<CachedForecaster>, String>>>;

/// Scores genomes by validation F1: trains the genome's forecaster on
/// `train` under `budget`, fits its detector, and scores `validation`.
/// Forecasters are shared between genomes with equal architecture genes.
pub struct PipelineEvaluator {
    train: TimeSeriesFrame,
    validation: TimeSeriesFrame,
    budget: TrainConfig,
    seed: u64,
    forecasters: Mutex<HashMap<String, ForecasterSlot>>,
    fitness: Mutex<HashMap<String, Evaluation>>,
}

impl PipelineEvaluator {
    pub fn new(train: TimeSeriesFrame, validation: TimeSeriesFrame, budget: TrainConfig, seed: u64) -> Result<Self> {
        if train.has_attacks() {
            return Err(Error::InvalidArgument("GA training frame must be all normal".into()));
        }
        let attacks = validation.labels().iter().filter(|l| l.is_attack()).count();
        if attacks == 0 || attacks == validation.rows() {
            return Err(Error::InvalidArgument(
                "GA validation frame must contain both normal and attack rows".into(),
            ));
        }
        if train.schema() != validation.schema() {
            return Err(Error::Shape("train and validation frames have different channels".into()));
        }
        budget.validate()?;
        Ok(Self {
            train,
            validation,
            budget,
            seed,
            forecasters: Mutex::new(HashMap::new()),
            fitness: Mutex::new(HashMap::new()),
        })
    }

    pub fn budget(&self) -> &TrainConfig {
        &self.budget
    }

    /// Seed for everything trained from `genome`; depends only on the run
    /// seed and the relevant genes, so evaluation order does not matter.
    pub fn forecaster_seed(&self, genome: &Genome) -> u64 {
        derive_seed(self.seed, fnv1a(genome.architecture_key().as_bytes()))
    }

    pub fn detector_seed(&self, genome: &Genome) -> u64 {
        derive_seed(self.seed, fnv1a(genome.key().as_bytes()))
    }

    /// Number of distinct genomes evaluated so far.
    pub fn cache_len(&self) -> usize {
        self.fitness.lock().expect("fitness cache poisoned").len()
    }

    fn forecaster(&self, genome: &Genome) -> std::result::Result<Arc<CachedForecaster>, String> {
        let slot = {
            let mut map = self.forecasters.lock().expect("forecaster cache poisoned");
            map.entry(genome.architecture_key()).or_default().clone()
        };
        slot.get_or_init(|| {
            let budget = TrainConfig {
                learning_rate: genome.learning_rate,
                ..self.budget.clone()
            };
            let forecaster = TrainedForecaster::fit(
                &self.train,
                genome.window,
                &genome.stack(),
                &budget,
                self.forecaster_seed(genome),
            )
            .map_err(|e| e.to_string())?;
            let validation_errors = forecaster.errors(&self.validation).map_err(|e| e.to_string())?;
            Ok(Arc::new(CachedForecaster {
                forecaster,
                validation_errors,
            }))
        })
        .clone()
    }

    fn compute(&self, genome: &Genome) -> Evaluation {
        if !genome.is_valid() {
            return Evaluation::failed("genome has a gene outside its domain");
        }
        if !genome.window.is_multiple_of(4) {
            return Evaluation::failed(format!("window {} is not divisible by 4", genome.window));
        }
        let cached = match self.forecaster(genome) {
            Ok(c) => c,
            Err(reason) => return Evaluation::failed(reason),
        };
        let result = (|| -> Result<f64> {
            let detector = fit_detector(
                &cached.forecaster.train_errors,
                &genome.detector_settings(),
                self.detector_seed(genome),
            )?;
            let errors = &cached.validation_errors;
            let verdicts = run_detector(&detector, genome.lag, errors)?;
            let labels = labels_at(&self.validation, &verdicts.indices)?;
            Ok(crate::metrics::score(&verdicts.flags, &labels)?.1.f1)
        })();
        match result {
            Ok(f1) => Evaluation::ok(f1),
            Err(e) => Evaluation::failed(e.to_string()),
        }
    }

    pub fn evaluate(&self, genome: &Genome) -> Evaluation {
        let key = genome.key();
        if let Some(hit) = self.fitness.lock().expect("fitness cache poisoned").get(&key) {
            return hit.clone();
        }
        let e = self.compute(genome);
        self.fitness
            .lock()
            .expect("fitness cache poisoned")
            .insert(key, e.clone());
        e
    }
}
