use fuzzy_bridge::anfis::{cluster_init, grid_init, hybrid_train, kmeans, lse_consequents};
use fuzzy_bridge::data::{generate, DataSpec, Generator};
use fuzzy_bridge::moe::{
    loss_competitive, loss_coupled, train_moe, tsk_to_moe, GateFunction, MoeLoss, MoeModel,
};
use fuzzy_bridge::rng::SeededRng;
use fuzzy_bridge::stacking::{
    bootstrap_indices, fit_adaptive_stack, fit_bases, fit_constant_stack, local_rule_fit,
    nozaki_fit, Combiner, DEFAULT_RIDGE,
};
use fuzzy_bridge::train::TrainConfig;
use fuzzy_bridge::{mse, Antecedent, Clause, Consequent, Dataset, MembershipFunction};

fn sinc_data(n: usize, seed: u64) -> Dataset {
    generate(&DataSpec::new(Generator::Sinc2d, n, seed)).unwrap()
}

#[test]
fn anfis_zero_learning_rate_keeps_antecedents() {
    let data = sinc_data(100, 1);
    let init = grid_init(&[(-10.0, 10.0); 2], 3, Some(&data)).unwrap();
    let config = TrainConfig {
        epochs: 5,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let (m, history) = hybrid_train(&init, &data, &config, None).unwrap();
    assert_eq!(history.len(), 5);
    for (a, b) in m.rules().iter().zip(init.rules()) {
        assert_eq!(a.antecedent, b.antecedent);
    }
}

#[test]
fn anfis_fifty_epochs_no_worse_than_one() {
    let data = sinc_data(200, 2);
    let init = grid_init(&[(-10.0, 10.0); 2], 3, Some(&data)).unwrap();
    let run = |epochs| {
        let config = TrainConfig {
            epochs,
            learning_rate: 0.5,
            ..TrainConfig::default()
        };
        let (m, _) = hybrid_train(&init, &data, &config, None).unwrap();
        mse(&m.batch_predict(&data).unwrap(), data.targets()).unwrap()
    };
    assert!(run(50) <= run(1));
}

#[test]
fn lse_recovers_planted_consequents() {
    let data = sinc_data(150, 3);
    let init = grid_init(&[(-10.0, 10.0); 2], 2, None).unwrap();
    let mut rng = SeededRng::new(9);
    let planted_rules = init
        .rules()
        .iter()
        .map(|r| {
            let c = Consequent::affine(vec![rng.normal(), rng.normal()], rng.normal());
            fuzzy_bridge::Rule::new(r.antecedent.clone(), c)
        })
        .collect();
    let planted = fuzzy_bridge::TskModel::new(2, planted_rules, init.aggregation()).unwrap();
    let y = planted.batch_predict(&data).unwrap();
    let clean = Dataset::new(data.rows().map(<[f64]>::to_vec).collect(), y).unwrap();
    let fitted = lse_consequents(&init, &clean, 0.0).unwrap();
    for (a, b) in fitted.rules().iter().zip(planted.rules()) {
        let (
            Consequent::Affine {
                slopes: s1,
                intercept: i1,
            },
            Consequent::Affine {
                slopes: s2,
                intercept: i2,
            },
        ) = (&a.consequent, &b.consequent)
        else {
            panic!("affine consequents expected");
        };
        assert!((i1 - i2).abs() < 1e-6);
        assert!(s1.iter().zip(s2).all(|(p, q)| (p - q).abs() < 1e-6));
    }
}

#[test]
fn kmeans_is_deterministic_and_assigns_nearest() {
    let data = sinc_data(120, 4);
    let a = kmeans(&data, 4, 11).unwrap();
    assert_eq!(a, kmeans(&data, 4, 11).unwrap());
    let (centers, labels) = a;
    for (x, &l) in data.rows().zip(&labels) {
        let dist = |c: &[f64]| c.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        let best = centers
            .iter()
            .map(|c| dist(c))
            .fold(f64::INFINITY, f64::min);
        assert!(dist(&centers[l]) <= best + 1e-12);
    }
    assert_eq!(cluster_init(&data, 4, 11).unwrap().num_rules(), 4);
}

#[test]
fn moe_zero_learning_rate_is_identity() {
    let data = sinc_data(60, 5);
    let start = tsk_to_moe(&cluster_init(&data, 3, 5).unwrap()).unwrap();
    let config = TrainConfig {
        epochs: 3,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let (m, _) = train_moe(&start, &data, MoeLoss::Hybrid { lambda: 0.5 }, &config).unwrap();
    assert_eq!(m, start);
}

#[test]
fn moe_training_does_not_increase_loss() {
    let data = sinc_data(80, 6);
    let start = tsk_to_moe(&cluster_init(&data, 3, 6).unwrap()).unwrap();
    let config = TrainConfig {
        epochs: 40,
        learning_rate: 1.0,
        ..TrainConfig::default()
    };
    let (competitive, _) = train_moe(&start, &data, MoeLoss::Competitive, &config).unwrap();
    assert!(
        loss_competitive(&competitive, &data).unwrap() <= loss_competitive(&start, &data).unwrap()
    );
    let (coupled, _) = train_moe(&start, &data, MoeLoss::Coupled, &config).unwrap();
    assert!(loss_coupled(&coupled, &data).unwrap() <= loss_coupled(&start, &data).unwrap());
}

#[test]
fn negative_lambda_is_rejected() {
    let data = sinc_data(10, 7);
    let start = MoeModel::new(
        2,
        vec![Consequent::Constant(0.0).to_affine(2)],
        vec![GateFunction::constant(2, 0.0)],
    )
    .unwrap();
    let config = TrainConfig::default();
    assert!(train_moe(&start, &data, MoeLoss::Hybrid { lambda: -0.1 }, &config).is_err());
}

#[test]
fn bootstrap_is_seeded() {
    assert_eq!(bootstrap_indices(50, 3), bootstrap_indices(50, 3));
    assert_ne!(bootstrap_indices(50, 3), bootstrap_indices(50, 4));
    assert!(bootstrap_indices(50, 3).iter().all(|&i| i < 50));
}

#[test]
fn equal_gates_average_the_bases() {
    let data = sinc_data(60, 8);
    let bases = fit_bases(&data, 3, 8, DEFAULT_RIDGE).unwrap();
    let config = TrainConfig {
        epochs: 4,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let (stack, _) = fit_adaptive_stack(&bases, &data, &config).unwrap();
    assert!(matches!(stack.combiner(), Combiner::AdaptiveGates { .. }));
    for x in data.rows() {
        let mean = bases.iter().map(|b| b.predict(x)).sum::<f64>() / 3.0;
        assert!((stack.predict(x).unwrap() - mean).abs() < 1e-12);
    }
}

#[test]
fn constant_stack_beats_every_base_on_train() {
    let data = generate(&DataSpec {
        noise_sd: 0.3,
        ..DataSpec::new(Generator::Friedman1, 200, 9)
    })
    .unwrap();
    let bases = fit_bases(&data, 5, 9, DEFAULT_RIDGE).unwrap();
    let stack = fit_constant_stack(&bases, &data, DEFAULT_RIDGE).unwrap();
    let stack_mse = mse(&stack.batch_predict(&data).unwrap(), data.targets()).unwrap();
    for b in &bases {
        let p: Vec<f64> = data.rows().map(|x| b.predict(x)).collect();
        assert!(stack_mse <= mse(&p, data.targets()).unwrap() + 1e-9);
    }
}

#[test]
fn nozaki_consequents_are_weighted_means() {
    let data = sinc_data(40, 10);
    let grid = vec![
        vec![
            MembershipFunction::gaussian(-5.0, 4.0),
            MembershipFunction::gaussian(5.0, 4.0),
        ],
        vec![MembershipFunction::gaussian(0.0, 6.0)],
    ];
    let alpha = 2.0;
    let fit = nozaki_fit(&data, &grid, alpha).unwrap();
    assert!(fit.flagged.is_empty());
    for r in fit.model.rules() {
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in data.rows().zip(data.targets()) {
            let w = r.firing_level(x).unwrap().powf(alpha);
            num += w * y;
            den += w;
        }
        assert!((r.consequent.eval(&[0.0, 0.0]) - num / den).abs() < 1e-12);
    }
}

#[test]
fn local_rules_flag_starved_rules() {
    let data = sinc_data(30, 11);
    let far = Antecedent::new(vec![
        Clause::new(0, MembershipFunction::gaussian(1e3, 0.01)),
        Clause::new(1, MembershipFunction::gaussian(1e3, 0.01)),
    ])
    .unwrap();
    assert!(local_rule_fit(&data, vec![Antecedent::vacuous(), far]).is_err());
    assert_eq!(
        local_rule_fit(&data, vec![Antecedent::vacuous()])
            .unwrap()
            .num_rules(),
        1
    );
}
