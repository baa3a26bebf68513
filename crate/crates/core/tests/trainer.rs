use std::collections::BTreeMap;

use jwae::autodiff::Tensor;
use jwae::data::{make_batches, synth_generate, Dataset, PairSubset, Split, SynthConfig};
use jwae::nets::{
    init_params, is_discriminator_param, param_shapes, DiscriminatorConfig, MlpConfig, ModelConfig, ModelParams,
    TextEncoderConfig,
};
use jwae::objectives::Objective;
use jwae::trainer::{
    adam_step, fit, subsample_supervision, train_step, training_subset, AdamConfig, OptimizerState, TrainConfig,
    TrainError, TrainLog, TrainState,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar_params(v: f64) -> ModelParams {
    let mut p = ModelParams::new();
    p.insert("w", Tensor::new(vec![1], vec![v]).unwrap());
    p
}

fn grads(v: f64) -> BTreeMap<String, Tensor> {
    BTreeMap::from([("w".to_string(), Tensor::new(vec![1], vec![v]).unwrap())])
}

#[test]
fn adam_first_step_is_lr() {
    let mut p = scalar_params(0.5);
    let mut st = OptimizerState::new();
    adam_step(&mut p, &["w".to_string()], &grads(1.0), &mut st, &AdamConfig::with_lr(1e-3)).unwrap();
    let delta = p.get("w").unwrap().values()[0] - 0.5;
    assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
    assert_eq!(st.step, 1);
    assert!((st.m["w"][0] - 0.1).abs() < 1e-15);
    assert!((st.v["w"][0] - 0.001).abs() < 1e-15);
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut p = scalar_params(-2.0);
    let mut st = OptimizerState::new();
    for _ in 0..3 {
        adam_step(&mut p, &["w".to_string()], &grads(0.0), &mut st, &AdamConfig::with_lr(0.1)).unwrap();
    }
    assert_eq!(p.get("w").unwrap().values(), &[-2.0]);
    assert_eq!((st.m["w"][0], st.v["w"][0], st.step), (0.0, 0.0, 3));
}

#[test]
fn adam_errors() {
    let mut p = scalar_params(0.0);
    let mut st = OptimizerState::new();
    let names = ["w".to_string()];
    let cfg = AdamConfig::with_lr(1e-3);
    assert!(matches!(
        adam_step(&mut p, &names, &BTreeMap::new(), &mut st, &cfg),
        Err(TrainError::MissingGradient(n)) if n == "w"
    ));
    let wide = BTreeMap::from([("w".to_string(), Tensor::new(vec![2], vec![1.0, 1.0]).unwrap())]);
    assert!(matches!(
        adam_step(&mut p, &names, &wide, &mut st, &cfg),
        Err(TrainError::GradientShape { .. })
    ));
    assert_eq!(st.step, 0);
}

fn paired_subset(n: usize) -> PairSubset {
    PairSubset {
        retained: (0..n).map(|i| (i, i)).collect(),
        unpaired_images: vec![],
        unpaired_texts: vec![],
    }
}

#[test]
fn quarter_supervision_counts() {
    let full = paired_subset(1000);
    let s = subsample_supervision(&full, 0.25, 3).unwrap();
    assert_eq!(s.retained.len(), 250);
    assert_eq!(s.unpaired_images.len() + s.unpaired_texts.len(), 1500);
    assert_eq!(s, subsample_supervision(&full, 0.25, 3).unwrap());
    assert_ne!(s.retained, subsample_supervision(&full, 0.25, 4).unwrap().retained);
}

#[test]
fn full_supervision_is_identity() {
    let full = paired_subset(37);
    assert_eq!(subsample_supervision(&full, 1.0, 0).unwrap(), full);
}

#[test]
fn fraction_rounds_up() {
    let s = subsample_supervision(&paired_subset(10), 0.21, 0).unwrap();
    assert_eq!(s.retained.len(), 3);
    let s = subsample_supervision(&paired_subset(3), 0.01, 0).unwrap();
    assert_eq!(s.retained.len(), 1);
}

#[test]
fn bad_fraction_rejected() {
    for f in [0.0, -0.5, 1.5, f64::NAN] {
        assert!(matches!(
            subsample_supervision(&paired_subset(4), f, 0),
            Err(TrainError::InvalidConfig(_))
        ));
    }
}

#[test]
fn shared_image_stays_paired_while_one_caption_survives() {
    let full = PairSubset {
        retained: vec![(0, 0), (0, 1), (1, 2), (1, 3)],
        unpaired_images: vec![],
        unpaired_texts: vec![],
    };
    let s = subsample_supervision(&full, 0.5, 9).unwrap();
    let imgs: Vec<usize> = s.retained.iter().map(|p| p.0).collect();
    for img in 0..2 {
        assert_eq!(imgs.contains(&img), !s.unpaired_images.contains(&img));
    }
    let txts: Vec<usize> = s.retained.iter().map(|p| p.1).collect();
    for t in 0..4 {
        assert_ne!(txts.contains(&t), s.unpaired_texts.contains(&t));
    }
}

fn small_synth() -> Dataset {
    synth_generate(&SynthConfig {
        concepts: 3,
        source_dim: 4,
        image_dim: 12,
        text_dim: 10,
        items_per_concept: 30,
        ..SynthConfig::default()
    })
    .unwrap()
    .0
}

fn small_model(variational: bool) -> ModelConfig {
    ModelConfig {
        image: MlpConfig {
            input_dim: 12,
            hidden_dim: 16,
            latent_dim: 4,
        },
        text: TextEncoderConfig::Features(MlpConfig {
            input_dim: 10,
            hidden_dim: 16,
            latent_dim: 4,
        }),
        discriminator: DiscriminatorConfig {
            latent_dim: 4,
            layer_dims: [8, 8, 2],
        },
        variational,
    }
}

fn config(objective: Objective, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::for_objective(objective);
    c.batch_size = 16;
    c.epochs = epochs;
    c.lr_main = 1e-3;
    c.lr_disc = 1e-3;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn released_items_never_paired(fraction in 0.05f64..=1.0, seed in any::<u64>(), epoch in 0u64..4) {
        let ds = small_synth();
        let full = PairSubset::for_split(&ds, Split::Train);
        let s = subsample_supervision(&full, fraction, seed).unwrap();
        let expected = ((fraction * full.retained.len() as f64) - 1e-9).ceil() as usize;
        prop_assert_eq!(s.retained.len(), expected.min(full.retained.len()));
        prop_assert!(s.retained.iter().all(|p| full.retained.contains(p)));
        for batch in make_batches(&ds, &s, 8, seed, epoch).unwrap() {
            for &(i, t) in &batch.pairs {
                prop_assert!(s.retained.contains(&(i, t)));
                prop_assert!(!s.unpaired_images.contains(&i));
                prop_assert!(!s.unpaired_texts.contains(&t));
            }
        }
        let mut pooled: Vec<usize> = s.retained.iter().map(|p| p.0).chain(s.unpaired_images.iter().copied()).collect();
        pooled.sort_unstable();
        pooled.dedup();
        prop_assert_eq!(pooled, ds.images_in(Split::Train));
    }
}

#[test]
fn parameter_partition_is_disjoint_and_exhaustive() {
    for variational in [false, true] {
        let shapes = param_shapes(&small_model(variational));
        let disc: Vec<&String> = shapes.keys().filter(|n| is_discriminator_param(n)).collect();
        let rest: Vec<&String> = shapes.keys().filter(|n| !is_discriminator_param(n)).collect();
        assert_eq!(disc.len(), 6);
        assert_eq!(disc.len() + rest.len(), shapes.len());
        assert!(rest.iter().all(|n| n.starts_with("enc_") || n.starts_with("dec_")));
    }
}

fn state(model: &ModelConfig, seed: u64) -> TrainState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    TrainState::new(init_params(model, seed).unwrap(), rng)
}

fn disc_of(p: &ModelParams) -> Vec<(String, Vec<u64>)> {
    p.iter()
        .filter(|(n, _)| is_discriminator_param(n))
        .map(|(n, t)| (n.clone(), t.values().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

#[test]
fn disabled_adversary_freezes_discriminator() {
    let ds = small_synth();
    let model = small_model(false);
    let cfg = config(Objective::Mse, 1);
    let subset = training_subset(&ds, &cfg).unwrap();
    let mut st = state(&model, 0);
    let before = st.params.clone();
    for batch in make_batches(&ds, &subset, cfg.batch_size, 0, 0).unwrap().iter().take(3) {
        let t = train_step(&mut st, &model, &cfg, &ds, batch).unwrap();
        assert_eq!((t.reg_v, t.reg_t, t.discriminator), (0.0, 0.0, 0.0));
    }
    assert_eq!(disc_of(&st.params), disc_of(&before));
    assert!(!st.params.bit_eq(&before));
    assert_eq!(st.opt_disc.step, 0);
}

#[test]
fn adversarial_step_moves_both_partitions() {
    let ds = small_synth();
    let model = small_model(false);
    let mut cfg = config(Objective::JwaeMse, 1);
    cfg.disc_steps_per_gen_step = 3;
    let subset = training_subset(&ds, &cfg).unwrap();
    let batch = &make_batches(&ds, &subset, cfg.batch_size, 0, 0).unwrap()[0];
    let mut st = state(&model, 1);
    let before = st.params.clone();
    train_step(&mut st, &model, &cfg, &ds, batch).unwrap();
    assert_ne!(disc_of(&st.params), disc_of(&before));
    assert_eq!((st.opt_disc.step, st.opt_main.step), (3, 1));
    assert!(st.opt_disc.m.keys().all(|n| is_discriminator_param(n)));
    assert!(st.opt_main.m.keys().all(|n| !is_discriminator_param(n)));
}

#[test]
fn ten_steps_are_bit_identical() {
    let ds = small_synth();
    let model = small_model(false);
    let cfg = config(Objective::JwaeMh, 1);
    let subset = training_subset(&ds, &cfg).unwrap();
    let run = || {
        let mut st = state(&model, 4);
        let mut trace = Vec::new();
        for epoch in 0..10u64 {
            let batch = &make_batches(&ds, &subset, cfg.batch_size, 4, epoch).unwrap()[0];
            let t = train_step(&mut st, &model, &cfg, &ds, batch).unwrap();
            trace.extend(t.values().map(f64::to_bits));
        }
        (st, trace)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(ta, tb);
    assert!(a.params.bit_eq(&b.params));
    assert!(a.opt_main.bit_eq(&b.opt_main));
    assert!(a.opt_disc.bit_eq(&b.opt_disc));
}

#[test]
fn max_margin_needs_two_pairs() {
    let ds = small_synth();
    let model = small_model(false);
    let cfg = config(Objective::Mh, 1);
    let mut batch = make_batches(&ds, &training_subset(&ds, &cfg).unwrap(), 16, 0, 0).unwrap()[0].clone();
    batch.pairs.truncate(1);
    assert!(matches!(
        train_step(&mut state(&model, 0), &model, &cfg, &ds, &batch),
        Err(TrainError::TooFewPairs(1))
    ));
}

#[test]
fn zero_epochs_return_initial_params() {
    let ds = small_synth();
    let model = small_model(false);
    let cfg = config(Objective::JwaeMse, 0);
    let r = fit(&ds, &model, &cfg).unwrap();
    assert!(r.best.bit_eq(&init_params(&model, cfg.seed).unwrap()));
    assert!(r.last.bit_eq(&r.best));
    assert!(r.log.records.is_empty());
    assert_eq!(r.best_epoch, None);
}

#[test]
fn seeded_rerun_gives_identical_log() {
    let ds = small_synth();
    let model = small_model(false);
    let mut cfg = config(Objective::JwaeMh, 3);
    cfg.seed = 12;
    let a = fit(&ds, &model, &cfg).unwrap();
    let b = fit(&ds, &model, &cfg).unwrap();
    assert_eq!(a.log.to_tsv(), b.log.to_tsv());
    assert!(a.best.bit_eq(&b.best));
    assert!(a.last.bit_eq(&b.last));
}

#[test]
fn best_checkpoint_is_first_argmax_of_validation() {
    let ds = small_synth();
    let model = small_model(false);
    let r = fit(&ds, &model, &config(Objective::Mh, 6)).unwrap();
    let sums: Vec<f64> = r.log.records.iter().map(|x| x.validation_sum().unwrap()).collect();
    let max = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = sums.iter().position(|&s| s == max).unwrap() + 1;
    assert_eq!(r.best_epoch, Some(first));
    if first == sums.len() {
        assert!(r.best.bit_eq(&r.last));
    }
}

#[test]
fn without_validation_last_epoch_wins() {
    let mut ds = small_synth();
    ds.image_split.iter_mut().filter(|s| **s == Split::Val).for_each(|s| *s = Split::Train);
    ds.text_split.iter_mut().filter(|s| **s == Split::Val).for_each(|s| *s = Split::Train);
    let model = small_model(false);
    let r = fit(&ds, &model, &config(Objective::Mse, 3)).unwrap();
    assert_eq!(r.best_epoch, Some(3));
    assert!(r.best.bit_eq(&r.last));
    assert!(r.log.records.iter().all(|x| x.validation.is_none()));
    assert!(r.log.to_tsv().lines().nth(1).unwrap().ends_with("\t-"));
}

#[test]
fn log_format() {
    let ds = small_synth();
    let model = small_model(false);
    let r = fit(&ds, &model, &config(Objective::JwaeMse, 2)).unwrap();
    let tsv = r.log.to_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], TrainLog::header());
    assert_eq!(lines.len(), 3);
    let cols = lines[0].split('\t').count();
    assert!(lines.iter().all(|l| l.split('\t').count() == cols));
    assert!(lines[2].starts_with("2\t"));
    assert_eq!(r.log.records[1].step, 2 * r.log.records[0].step);
}

#[test]
fn fit_rejects_bad_setups() {
    let ds = small_synth();
    let model = small_model(false);
    let mut cfg = config(Objective::Mh, 1);
    cfg.batch_size = 1;
    assert!(matches!(fit(&ds, &model, &cfg), Err(TrainError::InvalidConfig(_))));
    assert!(matches!(
        fit(&ds, &model, &config(Objective::VaeMh, 1)),
        Err(TrainError::InvalidConfig(_))
    ));
    assert!(matches!(
        fit(&ds, &small_model(true), &config(Objective::JwaeMh, 1)),
        Err(TrainError::InvalidConfig(_))
    ));
    let mut empty = ds.clone();
    empty.image_split.iter_mut().for_each(|s| *s = Split::Test);
    empty.text_split.iter_mut().for_each(|s| *s = Split::Test);
    assert!(matches!(fit(&empty, &model, &cfg_ok()), Err(TrainError::EmptyTrainingSet)));
}

fn cfg_ok() -> TrainConfig {
    config(Objective::JwaeMse, 1)
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = TrainConfig::for_objective(Objective::JwaeMh);
    cfg.grad_clip_norm = Some(2.5);
    let text = toml::to_string(&cfg).unwrap();
    assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
    assert!(toml::from_str::<TrainConfig>(&format!("{text}\nbogus = 1\n")).is_err());
}

#[test]
fn variational_fit_runs() {
    let ds = small_synth();
    let model = small_model(true);
    let r = fit(&ds, &model, &config(Objective::VaeMh, 2)).unwrap();
    assert!(r.log.records.iter().all(|x| x.terms.generator.is_finite() && x.terms.reg_v >= 0.0));
}

#[test]
fn jwae_mse_generator_loss_halves() {
    let (ds, _) = synth_generate(&SynthConfig::default()).unwrap();
    let model = ModelConfig {
        image: MlpConfig {
            input_dim: ds.image_dim(),
            hidden_dim: 256,
            latent_dim: 16,
        },
        text: TextEncoderConfig::Features(MlpConfig {
            input_dim: ds.text_dim(),
            hidden_dim: 256,
            latent_dim: 16,
        }),
        discriminator: DiscriminatorConfig {
            latent_dim: 16,
            layer_dims: [64, 64, 2],
        },
        variational: false,
    };
    let mut cfg = TrainConfig::for_objective(Objective::JwaeMse);
    cfg.epochs = 200;
    cfg.lr_main = 2e-4;
    cfg.lr_disc = 5e-4;
    cfg.disc_steps_per_gen_step = 5;
    let r = fit(&ds, &model, &cfg).unwrap();
    let first = r.log.records[0].terms.generator;
    let last = r.log.records.last().unwrap().terms.generator;
    assert!(last <= 0.5 * first, "epoch 1 {first}, epoch 200 {last}");
}
