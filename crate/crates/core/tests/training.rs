use dcn::checkpoint;
use dcn::config::{DataConfig, DcnConfig, TrainConfig};
use dcn::model::{tiny_config, Dcn};
use dcn::train::dropout::Dropout;
use dcn::train::{adam_step, evaluate, lr_at, train_loop, AdamState, Dataset};
use proptest::prelude::*;

fn small(cfg: DcnConfig, n_train: usize, n_test: usize, epochs: usize) -> DcnConfig {
    DcnConfig {
        data: DataConfig {
            n_train,
            n_test,
            ..cfg.data.clone()
        },
        train: TrainConfig {
            max_epochs: epochs,
            batch_size: 8,
            ..cfg.train.clone()
        },
        ..cfg
    }
}

proptest! {
    #[test]
    fn schedule_never_increases(lr in 1e-5f64..0.5, decay in 1.0f64..10.0, e in 0.0f64..50.0, de in 0.0f64..5.0) {
        let cfg = TrainConfig { lr, decay_epochs: decay, ..TrainConfig::default() };
        prop_assert!(lr_at(e + de, &cfg) <= lr_at(e, &cfg));
        let halved = lr_at(e + decay, &cfg) / lr_at(e, &cfg);
        prop_assert!((halved - 0.5).abs() < 1e-12);
    }
}

#[test]
fn dataset_is_a_function_of_its_seed() {
    let cfg = small(DcnConfig::default(), 200, 50, 1);
    let a = Dataset::generate(&cfg).unwrap();
    let b = Dataset::generate(&cfg).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    let ex_a = a.example(&a.test[3]).unwrap();
    let ex_b = b.example(&b.test[3]).unwrap();
    assert!(ex_a.features.levels() == ex_b.features.levels());
    let mut other = cfg.clone();
    other.data.seed += 1;
    assert_ne!(Dataset::generate(&other).unwrap().train, a.train);
}

#[test]
fn zero_learning_rate_leaves_loss_flat() {
    let mut cfg = small(tiny_config(), 24, 8, 3);
    cfg.train.lr = 0.0;
    let data = Dataset::generate(&cfg).unwrap();
    let mut model = Dcn::new(&cfg).unwrap();
    let before = model.params().to_vec();
    let outcome = train_loop(&mut model, &data, None).unwrap();
    assert_eq!(model.params(), before.as_slice());
    let first = outcome.log[0].loss;
    for row in &outcome.log {
        assert!((row.loss - first).abs() <= 1e-12 * first, "{} vs {first}", row.loss);
        assert_eq!(row.accuracy, outcome.log[0].accuracy);
    }
}

#[test]
fn one_batch_is_memorized() {
    let mut cfg = DcnConfig {
        l: 2,
        ..DcnConfig::default()
    };
    cfg.train.lr = 0.001;
    let cfg = small(cfg, 8, 1, 1);
    let data = Dataset::generate(&cfg).unwrap();
    let mut model = Dcn::new(&cfg).unwrap();
    let examples: Vec<_> = data.train.iter().map(|s| data.example(s).unwrap()).collect();
    let mut state = AdamState::new(model.params());
    let mut last = f64::INFINITY;
    for _ in 0..400 {
        let mut total = 0.0;
        let mut sum: Vec<dcn::Tensor> = model.params().iter().map(|p| dcn::Tensor::zeros(p.shape())).collect();
        for (ex, s) in examples.iter().zip(&data.train) {
            let (loss, grads) = model.loss_and_grads(ex, s.answer, &mut Dropout::eval()).unwrap();
            total += loss / 8.0;
            for (a, g) in sum.iter_mut().zip(&grads) {
                a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y / 8.0);
            }
        }
        last = total;
        if last < 0.01 {
            break;
        }
        adam_step(model.params_mut(), &sum, &mut state, cfg.train.lr, &cfg.train).unwrap();
    }
    assert!(last < 0.01, "loss after {} steps: {last}", state.steps());
}

#[test]
fn checkpoint_round_trip_scores_identically() {
    let cfg = small(tiny_config(), 32, 16, 2);
    let data = Dataset::generate(&cfg).unwrap();
    let mut model = Dcn::new(&cfg).unwrap();
    train_loop(&mut model, &data, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&model, dir.path()).unwrap();
    let loaded = checkpoint::load(dir.path()).unwrap();
    assert_eq!(loaded.config(), model.config());
    for s in &data.test {
        let ex = data.example(s).unwrap();
        let a = model.predict(&ex).unwrap();
        let b = loaded.predict(&ex).unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
    let ra = evaluate(&model, &data, &data.test).unwrap();
    let rb = evaluate(&loaded, &data, &data.test).unwrap();
    assert_eq!((ra.correct, ra.total), (rb.correct, rb.total));
}
