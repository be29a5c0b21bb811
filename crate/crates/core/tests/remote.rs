mod common;

use bases_core::harness::GoalPolicy;
use bases_core::oracle::wire::PredictRequest;
use bases_core::oracle::{serve, Expectation, LabelMode, Oracle, OracleError, ServeConfig};
use bases_core::search::{bases_attack, AttackError};

use common::{cases, search_config, surrogates, victim};

fn serve_victim(mode: LabelMode, budget: Option<usize>) -> bases_core::oracle::ServerHandle {
    serve(
        victim("victim-mlp"),
        &ServeConfig {
            mode,
            budget,
            ..ServeConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn served_logits_match_in_process_ones() {
    let server = serve_victim(LabelMode::Soft, None);
    let mut remote = Oracle::connect(&server.url(), &Expectation::default()).unwrap();
    let mut local = Oracle::local(victim("victim-mlp"), LabelMode::Soft);
    assert_eq!(remote.meta(), local.meta());
    for x in common::trained().test.images.iter().take(20) {
        let r = remote.query(x, None).unwrap();
        let l = local.query(x, None).unwrap();
        for (a, b) in r.logits().unwrap().iter().zip(l.logits().unwrap()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }
    assert_eq!(remote.count(), 20);
    assert_eq!(server.served(), 20);
    server.shutdown();
}

#[test]
fn budget_exhaustion_surfaces_with_the_partial_attack() {
    let server = serve_victim(LabelMode::Soft, Some(3));
    let models = surrogates(&common::SURROGATES);
    let v = victim("victim-mlp");
    let case = cases(&v, GoalPolicy::Hardest, 100)
        .into_iter()
        .find(|c| {
            let mut o = Oracle::local(v.clone(), LabelMode::Soft);
            !bases_attack(&c.x, &c.goal, &mut o, &models, &search_config(models.len()))
                .unwrap()
                .success
        })
        .expect("an image that needs more than three queries");
    let mut oracle = Oracle::connect(&server.url(), &Expectation::default()).unwrap();
    match bases_attack(
        &case.x,
        &case.goal,
        &mut oracle,
        &models,
        &search_config(models.len()),
    ) {
        Err(AttackError::Oracle { source, partial }) => {
            assert_eq!(source, OracleError::BudgetExhausted);
            assert_eq!(partial.queries, 3);
            assert_eq!(partial.records.len(), 3);
        }
        other => panic!("expected budget exhaustion, got {other:?}"),
    }
    server.shutdown();
}

#[test]
fn exhausted_budget_answers_429() {
    let server = serve_victim(LabelMode::Soft, Some(1));
    let x = &common::trained().test.images[0];
    let mut oracle = Oracle::connect(&server.url(), &Expectation::default()).unwrap();
    oracle.query(x, None).unwrap();
    let body = PredictRequest::from_image(x);
    let resp = ureq::post(&format!("{}/v1/predict", server.url()))
        .send_string(&serde_json::to_string(&body).unwrap());
    match resp {
        Err(ureq::Error::Status(429, r)) => {
            let v: serde_json::Value = serde_json::from_str(&r.into_string().unwrap()).unwrap();
            assert_eq!(v["error"], "budget_exhausted");
        }
        other => panic!("expected 429, got {other:?}"),
    }
    server.shutdown();
}

#[test]
fn hard_server_answers_labels_and_refuses_logit_clients() {
    let server = serve_victim(LabelMode::Hard, None);
    let want_logits = Expectation {
        mode: Some(LabelMode::Soft),
        ..Expectation::default()
    };
    assert!(matches!(
        Oracle::connect(&server.url(), &want_logits),
        Err(OracleError::Capability(_))
    ));
    let mut oracle = Oracle::connect(&server.url(), &Expectation::default()).unwrap();
    let x = &common::trained().test.images[0];
    let resp = oracle.query(x, None).unwrap();
    assert!(resp.logits().is_none());
    assert_eq!(
        resp.label(),
        victim("victim-mlp").forward(x).unwrap().argmax()
    );
    server.shutdown();
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let err = Oracle::connect("http://127.0.0.1:9", &Expectation::default()).unwrap_err();
    assert!(matches!(err, OracleError::Transport(_)), "{err:?}");
}
