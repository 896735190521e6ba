use codsa_core::codsa::{run_codsa, CodsaOptions, LambdaConfig};
use codsa_core::dgp::{carve_balanced_eval, gen_regression, EvalSplit, RegressSimConfig};
use codsa_core::estimators::{EstimatorConfig, ForestConfig};
use codsa_core::generator::{AutoencoderConfig, DiffusionConfig, GeneratorConfig, ScheduleParams};
use codsa_core::rng::SeedStream;
use codsa_core::tuner::{
    best_index, evaluate_codsa_grid, evaluate_crossfit_grid, marginal_sweep, tune, write_tuning_table, GridSpec,
    Replicate, ReplicateOutcome, SweepParam,
};
use rand::Rng;

fn opts() -> CodsaOptions {
    CodsaOptions {
        generator: GeneratorConfig {
            autoencoder: AutoencoderConfig { hidden: vec![16], latent_dim: 3, epochs: 3, lr: 3e-3, batch_size: 64 },
            diffusion: DiffusionConfig {
                hidden: 16,
                depth: 2,
                embed_dim: 8,
                schedule: ScheduleParams { timesteps: 20, beta_min: 1e-2, beta_max: 0.3 },
                epochs: 3,
                lr: 1e-3,
                batch_size: 64,
                ema_decay: 0.5,
            },
        },
        estimator: EstimatorConfig::Forest(ForestConfig { n_trees: 4, min_samples_split: 2, bootstrap: true, max_depth: Some(5) }),
        q: None,
        tau_samples: 0,
    }
}

fn split(seed: u64) -> EvalSplit {
    let d = gen_regression(&RegressSimConfig { n1: 60, n2: 140, sigma: 0.2, seed }).unwrap();
    carve_balanced_eval(&d, 10, 10, SeedStream::new(seed).child("carve")).unwrap()
}

fn small_grid() -> GridSpec {
    GridSpec {
        r_values: vec![0.3, 0.6],
        alpha1_values: vec![0.3, 0.8],
        alpha_vectors: vec![],
        m_over_n_values: vec![0.1, 0.5],
        include_baseline: true,
    }
}

fn table(reps: &[ReplicateOutcome]) -> String {
    let mut buf = Vec::new();
    write_tuning_table(&mut buf, "codsa", reps).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn caching_is_invisible() {
    let sp = split(1);
    let seed = SeedStream::new(2);
    let a = evaluate_codsa_grid(&sp, &small_grid(), &opts(), None, seed, true).unwrap();
    let b = evaluate_codsa_grid(&sp, &small_grid(), &opts(), None, seed, false).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 9);
    assert!(a.last().unwrap().point.is_baseline());
}

#[test]
fn worker_count_does_not_change_results() {
    let sp = split(3);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| evaluate_codsa_grid(&sp, &small_grid(), &opts(), None, SeedStream::new(4), true).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn grid_rows_match_single_runs() {
    let sp = split(5);
    let seed = SeedStream::new(6);
    let rows = evaluate_codsa_grid(&sp, &small_grid(), &opts(), None, seed, true).unwrap();
    for i in [0, 5, 8] {
        let pt = &rows[i].point;
        let lambda = LambdaConfig { alpha: pt.alpha.clone(), m: pt.m, r: pt.r };
        let run = run_codsa(&sp.train, &sp.validation, &lambda, &opts(), None, seed).unwrap();
        assert_eq!(run.validation, rows[i].validation, "row {i}");
        assert_eq!(run.estimator.evaluate(&sp.test).unwrap(), rows[i].test);
    }
}

#[test]
fn spiked_point_is_selected_and_visible_in_table() {
    let sp = split(7);
    let mut rows = evaluate_codsa_grid(&sp, &small_grid(), &opts(), None, SeedStream::new(8), true).unwrap();
    let mut rng = SeedStream::new(9).rng();
    for _ in 0..5 {
        let target = rng.random_range(0..rows.len());
        let floor = rows.iter().filter_map(|r| r.validation.overall).fold(f64::INFINITY, f64::min);
        rows[target].validation.overall = Some(floor - 1e-3);
        let rep = ReplicateOutcome::new(1, rows.clone(), 0.5).unwrap();
        assert_eq!(rep.best, target);

        // The selected row attains the minimum, read back from the CSV alone.
        let text = table(&[rep]);
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let recs: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        let val = |r: &csv::StringRecord| r[7].parse::<f64>().unwrap();
        let min = recs.iter().map(val).fold(f64::INFINITY, f64::min);
        let chosen: Vec<_> = recs.iter().filter(|r| &r[12] == "1").collect();
        assert_eq!(chosen.len(), 1);
        assert_eq!(val(chosen[0]), min);
    }
}

#[test]
fn single_point_grid_and_sweep_shapes() {
    let one = GridSpec {
        r_values: vec![0.5],
        alpha1_values: vec![0.7],
        alpha_vectors: vec![],
        m_over_n_values: vec![0.4],
        include_baseline: false,
    };
    let reps = vec![Replicate { seed: 10, split: split(10) }, Replicate { seed: 11, split: split(11) }];
    let res = tune(&reps, &one, &opts(), None, true).unwrap();
    assert!(res.replicates.iter().all(|r| r.best == 0 && r.results.len() == 1));
    assert_eq!(res.test.seeds, 2);

    let res = tune(&reps, &small_grid(), &opts(), None, true).unwrap();
    for param in [SweepParam::MOverN, SweepParam::Alpha1, SweepParam::R] {
        let rows = marginal_sweep(&res.replicates, param, 0.5).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.seeds == 2));
    }
    for rep in &res.replicates {
        assert_eq!(rep.best, best_index(&rep.results, 0.5).unwrap());
    }
}

#[test]
fn crossfit_grid_fixes_the_split_ratio() {
    let sp = split(12);
    let rows = evaluate_crossfit_grid(&sp, &small_grid(), 2, &opts(), None, SeedStream::new(13), true).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.point.r == 0.5 && r.test.overall.is_some()));
    let again = evaluate_crossfit_grid(&sp, &small_grid(), 2, &opts(), None, SeedStream::new(13), false).unwrap();
    assert_eq!(rows, again);
}
