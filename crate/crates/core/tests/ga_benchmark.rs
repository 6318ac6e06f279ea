//! Full GA search on the reference benchmark. Slow (every new architecture
//! trains for the 20-epoch budget), so it is ignored by default:
//!
//! ```text
//! cargo test --release -p cps-sentinel-core --test ga_benchmark -- --ignored --nocapture
//! ```

use cps_sentinel::benchmark::reference_benchmark;
use cps_sentinel::forecaster::TrainConfig;
use cps_sentinel::gaopt::{evolve, threads_from_env, GaConfig, Genome, GenomeSpace, PipelineEvaluator};

#[test]
#[ignore]
fn ga_improves_on_the_default_genome() {
    let b = reference_benchmark().unwrap();
    let budget = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let evaluator = PipelineEvaluator::new(b.train, b.validation, budget, 1).unwrap();
    let config = GaConfig {
        generations: 10,
        seed: 1,
        ..GaConfig::default()
    };
    let space = GenomeSpace::default();
    let result = evolve(&config, &space, threads_from_env().unwrap(), |g| evaluator.evaluate(g)).unwrap();
    print!("{}", result.history_csv());
    let default_fitness = evaluator.evaluate(&Genome::default()).fitness;
    let history = result.best_history();
    let best = result.best.fitness.unwrap();
    println!("default genome {default_fitness:.4}, best {best:.4}: {}", result.best.genome.key());
    assert!(best >= default_fitness);
    assert!(
        history[history.len() - 1] - history[0] >= 0.01,
        "best fitness moved {:.4} -> {:.4}",
        history[0],
        history[history.len() - 1]
    );
}
