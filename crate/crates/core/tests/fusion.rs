use ccafuse::cca::fit_cca;
use ccafuse::fusion::*;
use ccafuse::gradcheck::{central_difference, max_relative_error, DEFAULT_STEP};
use ccafuse::{Error, Matrix};

fn vector_data(n: usize, seed: u64) -> TwoViewDataset {
    let mut spec = SyntheticSpec::new(n, 3, 3, 0.5, 0.3, seed);
    spec.dim_a = 6;
    spec.dim_b = 5;
    make_synthetic_twoview(&spec).unwrap()
}

fn map_data(n: usize, seed: u64) -> TwoViewDataset {
    make_synthetic_twoview_maps(&SyntheticMapsSpec {
        n,
        n_classes: 3,
        latent_rows: 2,
        latent_cols: 2,
        shape_a: (5, 4),
        shape_b: (4, 4),
        noise_a: 0.3,
        noise_b: 0.3,
        class_sep: 1.5,
        seed,
    })
    .unwrap()
}

fn small_net() -> NetConfig {
    NetConfig {
        hidden_a: vec![7],
        hidden_b: vec![6],
        classifier_hidden: vec![5],
        channels: 3,
    }
}

/// Gradient of the batch loss with respect to each parameter by central differences.
fn numeric_grad(net: &FeatureNet, schedule: &TrainSchedule, batch: &TwoViewDataset) -> Vec<f64> {
    let values = net.param_values();
    let at = Matrix::from_row_slice(1, values.len(), &values);
    let g = central_difference(
        |p| {
            let mut probe = net.clone();
            let mut i = 0;
            probe.for_each_param_mut(|v| {
                *v = p[(0, i)];
                i += 1;
            });
            probe.loss(schedule, batch).unwrap().total
        },
        &at,
        DEFAULT_STEP,
    );
    g.iter().copied().collect()
}

fn check_gradient(mode: FusionMode, data: &TwoViewDataset, seed: u64) {
    let mut schedule = TrainSchedule::new(mode, seed);
    schedule.lambda = 0.7;
    schedule.reg_epsilon = 1e-3;
    let net = FeatureNet::new(&small_net(), data, &schedule).unwrap();
    let batch = data.select(&(0..16).collect::<Vec<_>>());
    let (_, grad) = net.loss_and_grad(&schedule, &batch).unwrap();
    let analytic = grad.param_values();
    let numeric = numeric_grad(&net, &schedule, &batch);
    let a = Matrix::from_row_slice(1, analytic.len(), &analytic);
    let n = Matrix::from_row_slice(1, numeric.len(), &numeric);
    let err = max_relative_error(&a, &n);
    assert!(err <= 1e-4, "{mode:?}: max relative error {err}");
}

#[test]
fn full_network_gradients_match_finite_differences() {
    for seed in 0..3 {
        let data = vector_data(40, seed);
        for mode in [FusionMode::Baseline, FusionMode::Ccar, FusionMode::Accar] {
            check_gradient(mode, &data, seed + 10);
        }
        check_gradient(FusionMode::Accar2d, &map_data(40, seed), seed + 20);
        check_gradient(FusionMode::Baseline, &map_data(40, seed), seed + 30);
    }
}

#[test]
fn zero_classifier_gives_uniform_softmax() {
    let data = vector_data(30, 1);
    let single =
        TwoViewDataset::new(data.view_a.clone(), data.view_b.clone(), vec![0; 30], 4).unwrap();
    let schedule = TrainSchedule::new(FusionMode::Baseline, 3);
    let mut net = FeatureNet::new(&small_net(), &single, &schedule).unwrap();
    for layer in &mut net.classifier {
        layer.w.fill(0.0);
        layer.b.fill(0.0);
    }
    let loss = net.loss(&schedule, &single).unwrap();
    assert!((loss.cce - 4f64.ln()).abs() < 1e-12);
    // all-zero logits: every prediction is class 0
    let acc = evaluate(&net, &schedule, &data).unwrap();
    let freq0 = data.labels.iter().filter(|&&l| l == 0).count() as f64 / 30.0;
    assert_eq!(acc, freq0);
}

#[test]
fn baseline_and_accar_share_the_graph_before_replacement() {
    let data = vector_data(30, 2);
    let base = TrainSchedule::new(FusionMode::Baseline, 5);
    let accar = TrainSchedule::new(FusionMode::Accar, 5);
    let n1 = FeatureNet::new(&small_net(), &data, &base).unwrap();
    let n2 = FeatureNet::new(&small_net(), &data, &accar).unwrap();
    assert_eq!(n1, n2);
    let l1 = n1
        .forward(FusionMode::Baseline, &data, 1e-4)
        .unwrap()
        .logits;
    let l2 = n2.forward(FusionMode::Accar, &data, 1e-4).unwrap().logits;
    assert_eq!(l1, l2);
}

#[test]
fn accar_replacement_with_frozen_features_is_exact() {
    let data = vector_data(120, 3);
    let mut schedule = TrainSchedule::new(FusionMode::Accar, 4);
    schedule.learning_rate = 0.0;
    schedule.epochs = 4;
    schedule.cca_first_m = 4;
    schedule.cca_freq_t = 1;
    let mut seen = Vec::new();
    let out = train_with_observer(&data, None, &small_net(), &schedule, |epoch, net| {
        seen.push((epoch, net.clone()));
    })
    .unwrap();
    assert_eq!(out.replacements.len(), 4);
    for ((epoch, net), rep) in seen.iter().zip(&out.replacements) {
        assert_eq!(*epoch, rep.epoch);
        let Features::Vectors(fa) = net.features(ViewSide::A, &data.view_a).unwrap() else {
            panic!()
        };
        let Features::Vectors(fb) = net.features(ViewSide::B, &data.view_b).unwrap() else {
            panic!()
        };
        let external = fit_cca(&fa, &fb, schedule.k, schedule.reg_epsilon).unwrap();
        let ReplacedTransforms::Cca(model) = &rep.transforms else {
            panic!()
        };
        assert_eq!(model, &external);
        let (Projection::Dense(pa), Projection::Dense(pb)) = (&net.a.projection, &net.b.projection)
        else {
            panic!()
        };
        assert_eq!(pa.w, external.u);
        assert_eq!(pb.w, external.v);
        assert!(out.logs[*epoch].cca_replaced);
    }
}

#[test]
fn baseline_fits_separable_data() {
    let mut spec = SyntheticSpec::new(200, 4, 2, 0.0, 0.0, 6);
    spec.class_sep = 10.0;
    let data = make_synthetic_twoview(&spec).unwrap();
    let mut schedule = TrainSchedule::new(FusionMode::Baseline, 7);
    schedule.epochs = 200;
    schedule.cca_first_m = 0;
    schedule.learning_rate = 0.1;
    let out = train(&data, None, &small_net(), &schedule).unwrap();
    let acc = evaluate(&out.net, &schedule, &data).unwrap();
    assert!(acc >= 0.99, "training accuracy {acc}");
}

#[test]
fn ccar_with_zero_lambda_matches_baseline() {
    let data = vector_data(90, 8);
    let mut base = TrainSchedule::new(FusionMode::Baseline, 9);
    base.epochs = 5;
    base.cca_first_m = 0;
    let mut ccar = base.clone();
    ccar.mode = FusionMode::Ccar;
    ccar.lambda = 0.0;
    let a = train(&data, None, &small_net(), &base).unwrap();
    let b = train(&data, None, &small_net(), &ccar).unwrap();
    for (x, y) in a.logs.iter().zip(&b.logs) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
    }
    assert_eq!(a.net, b.net);
}

#[test]
fn training_is_deterministic() {
    for (mode, data) in [
        (FusionMode::Ccar, vector_data(80, 10)),
        (FusionMode::Accar, vector_data(80, 10)),
        (FusionMode::Accar2d, map_data(80, 10)),
    ] {
        let mut s = TrainSchedule::new(mode, 11);
        s.epochs = 6;
        s.cca_first_m = 4;
        s.cca_freq_t = 2;
        let a = train(&data, None, &small_net(), &s).unwrap();
        let b = train(&data, None, &small_net(), &s).unwrap();
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.net, b.net);
        let replaced: Vec<bool> = a.logs.iter().map(|l| l.cca_replaced).collect();
        let expect = mode.replaces_weights();
        assert_eq!(replaced, [expect, false, expect, false, false, false]);
    }
}

#[test]
fn accar_2d_replacement_matches_solver() {
    let data = map_data(60, 12);
    let mut s = TrainSchedule::new(FusionMode::Accar2d, 13);
    s.epochs = 1;
    s.cca_first_m = 1;
    s.cca_freq_t = 1;
    let mut at_start = None;
    let out = train_with_observer(&data, None, &small_net(), &s, |_, net| {
        at_start = Some(net.clone())
    })
    .unwrap();
    let net = at_start.unwrap();
    let ReplacedTransforms::Cca2d(model) = &out.replacements[0].transforms else {
        panic!()
    };
    let Projection::Bilinear { l, r, bias } = &net.a.projection else {
        panic!()
    };
    assert_eq!(l, &model.lx);
    assert_eq!(r, &model.rx);
    assert_eq!(bias, &-(model.lx.transpose() * &model.mean_x * &model.rx));
}

#[test]
fn cca_layer_trains_and_rejects_tiny_batches() {
    let data = vector_data(90, 14);
    let mut s = TrainSchedule::new(FusionMode::CcaLayer, 15);
    s.epochs = 3;
    s.cca_first_m = 0;
    let out = train(&data, None, &small_net(), &s).unwrap();
    assert_eq!(out.logs.len(), 3);
    let net = FeatureNet::new(&small_net(), &data, &s).unwrap();
    let tiny = data.select(&[0, 1, 2]);
    assert!(matches!(net.loss(&s, &tiny), Err(Error::Degenerate(_))));
}

#[test]
fn mode_and_view_kind_must_agree() {
    let s = TrainSchedule::new(FusionMode::Accar2d, 1);
    assert!(train(&vector_data(30, 1), None, &small_net(), &s).is_err());
    let s = TrainSchedule::new(FusionMode::Accar, 1);
    assert!(train(&map_data(30, 1), None, &small_net(), &s).is_err());
}

#[test]
fn schedule_validation() {
    let mut s = TrainSchedule::new(FusionMode::Accar, 1);
    s.cca_first_m = 100;
    assert!(s.validate().is_err());
    let mut s = TrainSchedule::new(FusionMode::Accar, 1);
    s.cca_freq_t = 0;
    assert!(s.validate().is_err());
    let mut s = TrainSchedule::new(FusionMode::Ccar, 1);
    s.lambda = -1.0;
    assert!(s.validate().is_err());
}

#[test]
fn evaluate_rules() {
    let data = vector_data(60, 16);
    let s = TrainSchedule::new(FusionMode::Baseline, 17);
    let net = FeatureNet::new(&small_net(), &data, &s).unwrap();
    let empty = data.select(&[]);
    assert!(evaluate(&net, &s, &empty).is_err());
    // labels replaced by the network's own predictions: perfect score
    let pred = net.predict(FusionMode::Baseline, &data, 1e-4).unwrap();
    let own = TwoViewDataset::new(data.view_a.clone(), data.view_b.clone(), pred, 3).unwrap();
    assert_eq!(evaluate(&net, &s, &own).unwrap(), 1.0);
}

#[test]
fn random_labels_score_near_chance() {
    use rand::{Rng, SeedableRng};
    let mut spec = SyntheticSpec::new(10000, 2, 4, 0.5, 0.5, 18);
    spec.dim_a = 4;
    spec.dim_b = 4;
    let data = make_synthetic_twoview(&spec).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
    let labels = (0..10000).map(|_| rng.random_range(0..4)).collect();
    let shuffled =
        TwoViewDataset::new(data.view_a.clone(), data.view_b.clone(), labels, 4).unwrap();
    let s = TrainSchedule::new(FusionMode::Baseline, 20);
    let out_net = FeatureNet::new(&small_net(), &data, &s).unwrap();
    let acc = evaluate(&out_net, &s, &shuffled).unwrap();
    assert!((acc - 0.25).abs() <= 0.02, "{acc}");
}
