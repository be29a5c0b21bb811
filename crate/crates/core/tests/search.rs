mod common;

use bases_core::harness::GoalPolicy;
use bases_core::loss::{ensemble_input_gradient, FusionKind, GoalMode, LossKind};
use bases_core::nn::fd_gradient;
use bases_core::oracle::{LabelMode, Oracle};
use bases_core::pm::pm_run;
use bases_core::search::{
    bases_attack, default_eta, estimate_weight_gradient, hardlabel_attack, hardlabel_queryset,
    whitebox_weight_attack, CandidateTag, CoordinateOrder, WeightVector, WhiteboxConfig,
};
use bases_core::tensor::Tensor;
use bases_core::Model;

use common::{cases, pm_config, reference, search_config, surrogates, victim};

#[test]
fn victim_in_the_ensemble_falls_on_the_first_query() {
    let models = surrogates(&["cnn-a"]);
    let v = models[0].clone();
    let mut hits = 0;
    for case in cases(&v, GoalPolicy::Untargeted, 40) {
        let mut oracle = Oracle::local(v.clone(), LabelMode::Soft);
        let out =
            bases_attack(&case.x, &case.goal, &mut oracle, &models, &search_config(1)).unwrap();
        // With N = 1 the first PM output is plain whitebox PGD on the victim.
        let pm = pm_run(
            &case.x,
            &case.goal,
            &models,
            &[1.0],
            &Tensor::zeros(case.x.shape()),
            &pm_config(),
        )
        .unwrap();
        if v.forward(&pm.x_star).unwrap().argmax() != case.label {
            assert!(out.success);
            assert_eq!(out.queries, 1);
            hits += 1;
        }
    }
    assert!(hits > 0, "no image fell to whitebox PGD");
}

#[test]
fn single_query_budget_is_plain_transfer() {
    let models = surrogates(&common::SURROGATES);
    let v = victim("victim-mlp");
    let mut cfg = search_config(models.len());
    cfg.max_queries = 1;
    let uniform = vec![1.0 / models.len() as f64; models.len()];
    for case in cases(&v, GoalPolicy::Random, 30) {
        let mut oracle = Oracle::local(v.clone(), LabelMode::Soft);
        let out = bases_attack(&case.x, &case.goal, &mut oracle, &models, &cfg).unwrap();
        let pm = pm_run(
            &case.x,
            &case.goal,
            &models,
            &uniform,
            &Tensor::zeros(case.x.shape()),
            &cfg.pm,
        )
        .unwrap();
        let transfer = case
            .goal
            .is_met_by_logits(v.forward(&pm.x_star).unwrap().data());
        assert_eq!(out.queries, 1);
        assert_eq!(out.success, transfer);
        assert_eq!(out.delta, pm.delta);
    }
}

#[test]
fn success_on_plus_skips_the_minus_query() {
    let models = surrogates(&common::SURROGATES);
    let v = victim("victim-cnn");
    for case in cases(&v, GoalPolicy::Random, 60) {
        let mut oracle = Oracle::local(v.clone(), LabelMode::Soft);
        let out = bases_attack(
            &case.x,
            &case.goal,
            &mut oracle,
            &models,
            &search_config(models.len()),
        )
        .unwrap();
        let last = out.records.last().unwrap();
        if out.success && last.tag == CandidateTag::Plus {
            assert_eq!(out.queries % 2, 0, "init + k pairs + a lone plus is even");
        }
        if out.success && last.tag == CandidateTag::Minus {
            assert_eq!(out.queries % 2, 1);
        }
    }
}

#[test]
fn candidates_warm_start_from_the_accepted_perturbation() {
    let models = surrogates(&common::SURROGATES);
    let v = victim("victim-mlp");
    let cfg = search_config(models.len());
    let case = cases(&v, GoalPolicy::Hardest, 100)
        .into_iter()
        .find(|c| {
            let mut o = Oracle::local(v.clone(), LabelMode::Soft);
            !bases_attack(&c.x, &c.goal, &mut o, &models, &cfg)
                .unwrap()
                .success
        })
        .expect("some hardest-target image survives");
    let mut oracle = Oracle::local(v.clone(), LabelMode::Soft);
    let out = bases_attack(&case.x, &case.goal, &mut oracle, &models, &cfg).unwrap();
    assert!(!out.iterations.is_empty());
    for pair in out.iterations.windows(2) {
        assert_eq!(pair[1].delta_init, pair[0].accepted_delta);
    }
    // Replaying one iteration's candidate from its recorded start gives the queried image.
    let it = &out.iterations[3];
    let rec = &out.records[1 + 2 * 3];
    assert_eq!(rec.tag, CandidateTag::Plus);
    let pm = pm_run(
        &case.x,
        &case.goal,
        &models,
        &rec.weights,
        &it.delta_init,
        &cfg.pm,
    )
    .unwrap();
    let z = v.forward(&pm.x_star).unwrap();
    assert_eq!(
        cfg.pm.loss.value(z.data(), &case.goal).unwrap(),
        rec.victim_loss.unwrap()
    );
}

#[test]
fn coordinate_order_barely_moves_the_fooling_rate() {
    let models = surrogates(&common::SURROGATES);
    let v = victim("victim-cnn");
    let all = cases(&v, GoalPolicy::Random, common::IMAGES);
    let rate = |order: CoordinateOrder| {
        let mut cfg = search_config(models.len());
        cfg.order = order;
        let wins = all
            .iter()
            .filter(|c| {
                let mut o = Oracle::local(v.clone(), LabelMode::Soft);
                bases_attack(&c.x, &c.goal, &mut o, &models, &cfg)
                    .unwrap()
                    .success
            })
            .count();
        wins as f64 / all.len() as f64
    };
    let a = rate(CoordinateOrder::Random { seed: 1 });
    let b = rate(CoordinateOrder::Random { seed: 2 });
    assert!((a - b).abs() <= 0.05, "{a} vs {b}");
}

#[test]
fn hard_label_query_set_shape() {
    let models = surrogates(&common::SURROGATES);
    let stand_in = victim("victim-mlp");
    let cfg = search_config(models.len());
    let uniform = vec![1.0 / models.len() as f64; models.len()];
    for case in cases(&stand_in, GoalPolicy::Random, 10) {
        let set = hardlabel_queryset(&case.x, &case.goal, &stand_in, &models, &cfg).unwrap();
        assert_eq!(set.len(), cfg.max_queries);
        for e in &set {
            assert!(cfg.pm.budget.is_feasible(&e.delta, &case.x));
        }
        let first = pm_run(
            &case.x,
            &case.goal,
            &models,
            &uniform,
            &Tensor::zeros(case.x.shape()),
            &cfg.pm,
        )
        .unwrap();
        assert_eq!(set[0].delta, first.delta);
        assert_eq!(set[0].tag, CandidateTag::Init);
    }
}

/// `like` with its output layer replaced by a constant vote for `class`.
fn constant_model(like: &Model, class: usize) -> Model {
    let mut params = like.params().clone();
    let last = params.tensors.len() - 1;
    let mut bias = vec![0.0f32; like.num_classes()];
    bias[class] = 1e6;
    params.tensors[last] = params.tensors[last].with_data(bias);
    params.tensors[last - 1] =
        params.tensors[last - 1].with_data(vec![0.0; params.tensors[last - 1].len()]);
    Model::new(like.spec().clone(), params).unwrap()
}

#[test]
fn hard_label_replay_stops_early_or_spends_the_set() {
    let models = surrogates(&common::SURROGATES);
    let stand_in = victim("victim-mlp");
    let cfg = search_config(models.len());
    let case = &cases(&stand_in, GoalPolicy::Random, 10)[0];
    let set = hardlabel_queryset(&case.x, &case.goal, &stand_in, &models, &cfg).unwrap();

    // A victim whose argmax is always the target succeeds at once.
    let mut oracle = Oracle::local(constant_model(&stand_in, case.goal.label), LabelMode::Hard);
    let out = hardlabel_attack(&case.x, &case.goal, &set, &mut oracle).unwrap();
    assert!(out.success);
    assert_eq!(out.queries, 1);

    // A victim that never predicts the target exhausts the set.
    let never = constant_model(&stand_in, (case.goal.label + 1) % stand_in.num_classes());
    let mut oracle = Oracle::local(never, LabelMode::Hard);
    let out = hardlabel_attack(&case.x, &case.goal, &set, &mut oracle).unwrap();
    assert!(!out.success);
    assert_eq!(out.queries, set.len());
    assert_eq!(oracle.count(), set.len());
}

#[test]
fn whitebox_with_one_surrogate_repeats_pm() {
    let models = surrogates(&["mlp-b"]);
    let v = victim("victim-cnn");
    let cfg = WhiteboxConfig::new(1, pm_config(), 11);
    for case in cases(&v, GoalPolicy::Random, 10) {
        let out = whitebox_weight_attack(&case.x, &case.goal, &v, &models, &cfg).unwrap();
        assert_eq!(out.weights.as_slice(), &[1.0]);
        assert_eq!(out.success_by_iteration.len(), cfg.iterations + 1);
        let mut delta = Tensor::zeros(case.x.shape());
        for _ in 0..=cfg.iterations {
            delta = pm_run(&case.x, &case.goal, &models, &[1.0], &delta, &cfg.pm)
                .unwrap()
                .delta;
        }
        assert_eq!(out.delta, delta);
    }
}

#[test]
fn whitebox_weight_gradient_is_stable_under_a_finer_step() {
    let models = surrogates(&common::SURROGATES);
    let v = victim("victim-cnn");
    let pm = pm_config();
    let n = models.len();
    let w = WeightVector::uniform(n);
    let h = default_eta(n);
    // The first image whose estimate is not identically zero.
    let (case, g) = cases(&v, GoalPolicy::Random, 40)
        .into_iter()
        .find_map(|c| {
            let zero = Tensor::zeros(c.x.shape());
            let g =
                estimate_weight_gradient(&c.x, &c.goal, &v, &models, &w, &zero, &pm, h).unwrap();
            g.iter().any(|&x| x != 0.0).then_some((c, g))
        })
        .expect("an image with a nonzero weight gradient");
    let zero = Tensor::zeros(case.x.shape());
    let fine = estimate_weight_gradient(&case.x, &case.goal, &v, &models, &w, &zero, &pm, h / 10.0)
        .unwrap();
    let norm: f64 = fine.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = g
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(diff <= 0.05 * norm, "ĝ(h) = {g:?}, ĝ(h/10) = {fine:?}");
}

#[test]
fn ensemble_gradient_properties() {
    let models = surrogates(&["cnn-a", "mlp-a", "mlp-c"]);
    let case = &cases(&models[0], GoalPolicy::Random, 5)[0];
    let mut delta = case.x.with_data(vec![0.01; case.x.len()]);
    // Keep the finite differences off ReLU kinks.
    while models
        .iter()
        .any(|m| !reference::kink_crossings(m, &case.x.add(&delta).unwrap(), 1e-3).is_empty())
    {
        let shifted: Vec<f32> = delta.data().iter().map(|d| d * 0.9).collect();
        delta = delta.with_data(shifted);
    }
    let grad = |w: &[f64]| {
        ensemble_input_gradient(
            &models,
            &case.x,
            &delta,
            w,
            FusionKind::WeightedLoss,
            LossKind::CrossEntropy,
            &case.goal,
        )
        .unwrap()
    };

    // Vertex of the simplex is the single-model gradient.
    let vertex = grad(&[1.0, 0.0, 0.0]);
    let single = ensemble_input_gradient(
        &models[..1],
        &case.x,
        &delta,
        &[1.0],
        FusionKind::WeightedLoss,
        LossKind::CrossEntropy,
        &case.goal,
    )
    .unwrap();
    assert_eq!(vertex.data(), single.data());

    // Linear in the weights.
    let (w1, w2, a) = ([0.2, 0.3, 0.5], [0.6, 0.1, 0.3], 0.25);
    let mix: Vec<f64> = w1
        .iter()
        .zip(&w2)
        .map(|(p, q)| a * p + (1.0 - a) * q)
        .collect();
    let (g1, g2, gm) = (grad(&w1), grad(&w2), grad(&mix));
    for ((x, y), m) in g1.data().iter().zip(g2.data()).zip(gm.data()) {
        let expected = a as f32 * x + (1.0 - a as f32) * y;
        assert!((m - expected).abs() <= 1e-5 * (1.0 + expected.abs()));
    }

    // Matches finite differences of the fused loss.
    let w = [0.2, 0.3, 0.5];
    let analytic = grad(&w);
    // Targeted cross-entropy, fused by weight, all in f64.
    assert_eq!(case.goal.mode, GoalMode::Targeted);
    let numeric = fd_gradient(
        |d| {
            let input: Vec<f64> = case
                .x
                .data()
                .iter()
                .zip(d.data())
                .map(|(&p, &q)| f64::from(p + q))
                .collect();
            models
                .iter()
                .zip(w)
                .map(|(m, wi)| {
                    let z = reference::forward_f64(m, &input);
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    wi * (lse - z[case.goal.label])
                })
                .sum()
        },
        &delta,
        1e-3,
    );
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&p, &q)| f64::from(p - q).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(
        diff / numeric.l2_norm() < 1e-3,
        "relative error {}",
        diff / numeric.l2_norm()
    );
}
