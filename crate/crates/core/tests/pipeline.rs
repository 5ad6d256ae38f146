use landscape::certify::{region_demo, RegionConfig, SourcePolicy};
use landscape::embed::{classify_embedding, compute_bd, gamma_embed, EmbeddingPlan, VerdictKind};
use landscape::infinity::{build_infinity_family, verify_infinity_minimum, VerifyOptions};
use landscape::pathfinder::{monotone_descent_to_global, PathOptions};
use landscape::{forward, gradient, init_random, ActivationKind, Error};

fn small_region() -> RegionConfig {
    RegionConfig { probe_k: 64, ..RegionConfig::default() }
}

#[test]
fn region_evidence_is_consistent() {
    let cfg = small_region();
    let ev = region_demo(&cfg).unwrap();
    assert_eq!(ev.region.dims(), &cfg.target_dims[..]);
    assert!(ev.train.final_grad_norm <= 1e-8);
    assert!((ev.region_loss - ev.train.final_loss).abs() <= 1e-12 * (1.0 + ev.region_loss));
    assert!(gradient(&ev.region, &ev.data).unwrap().max_abs() <= 1e-7);
    assert!(ev.min_probe.global_min >= -1e-9 * (1.0 + ev.region_loss));
    assert_eq!(ev.min_probe.k, 64);
    assert!(ev.walk.max_deviation <= 1e-12 * (1.0 + ev.region_loss));
    assert_eq!(*ev.walk.lambdas.last().unwrap(), cfg.lambda_saddle);
    assert_eq!(ev.saddle_verdict.kind, VerdictKind::Saddle);
    assert!(ev.escape.effective_curvature < 0.0);
    assert!(ev.escape.line_loss < ev.region_loss);
    assert!(ev.escape.final_loss <= ev.escape.line_loss);
    assert_eq!(ev.steps.len(), 40);
    // the evidence survives a JSON round trip
    let json = serde_json::to_string(&ev).unwrap();
    let back: landscape::NonAttractingEvidence = serde_json::from_str(&json).unwrap();
    assert_eq!(back.region, ev.region);
}

#[test]
fn region_demo_is_deterministic() {
    let cfg = RegionConfig { probe_k: 8, descent: landscape::TrainOptions { max_iters: 5, ..small_region().descent }, ..small_region() };
    let a = serde_json::to_string(&region_demo(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&region_demo(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn student_equal_to_teacher_is_rejected() {
    let cfg = RegionConfig {
        teacher_dims: vec![1, 1, 1],
        student_dims: vec![1, 1, 1],
        target_dims: vec![1, 2, 1],
        teacher_scale: 1.0,
        n_samples: 6,
        probe_k: 0,
        max_attempts: 3,
        source_policy: SourcePolicy::First,
        ..RegionConfig::default()
    };
    assert!(matches!(region_demo(&cfg), Err(Error::PreconditionFailed(_))));
}

#[test]
fn embedding_keeps_function_and_critical_point() {
    let ev = region_demo(&RegionConfig { probe_k: 0, ..RegionConfig::default() }).unwrap();
    let base = forward(&ev.student, &ev.data).unwrap().loss;
    for lambda in [-1.0, 0.0, 0.3, 0.5, 1.0, 2.0] {
        let big = gamma_embed(&ev.student, &EmbeddingPlan::new(1, 0, lambda)).unwrap();
        assert!((forward(&big, &ev.data).unwrap().loss - base).abs() <= 1e-12 * (1.0 + base));
        assert!(gradient(&big, &ev.data).unwrap().max_abs() <= 1e-7);
    }
    let bd = compute_bd(&ev.student, &ev.data, 2, 0, false).unwrap();
    assert!(bd.d_norm_inf <= 1e-8);
    let v = classify_embedding(&bd, 0.5);
    assert_eq!(v.recompute(), v.kind);
}

#[test]
fn wide_network_descends_to_zero_loss() {
    let teacher = init_random(&[2, 5, 5, 1], ActivationKind::Sigmoid, 8.0, 7).unwrap();
    let data = landscape::generate_teacher_dataset(&teacher, 10, Default::default(), 7).unwrap();
    let net = init_random(&[2, 12, 4, 1], ActivationKind::Sigmoid, 1.0, 1).unwrap();
    let path = monotone_descent_to_global(&net, &data, &PathOptions::default()).unwrap();
    assert_eq!(path.t.len(), 257);
    assert_eq!(path.certificate.violations, 0);
    assert!(path.certificate.final_loss <= 1e-6);
    assert!(path.losses.windows(2).all(|w| w[1] <= w[0] + path.certificate.slack));
}

#[test]
fn bottleneck_after_wide_layer_is_ineligible() {
    let teacher = init_random(&[2, 3, 1], ActivationKind::Sigmoid, 2.0, 1).unwrap();
    let data = landscape::generate_teacher_dataset(&teacher, 20, Default::default(), 1).unwrap();
    let net = init_random(&[2, 21, 4, 8, 1], ActivationKind::Sigmoid, 1.0, 1).unwrap();
    assert!(matches!(
        monotone_descent_to_global(&net, &data, &PathOptions::default()),
        Err(Error::Eligibility(_))
    ));
}

#[test]
fn infinity_witness_on_teacher_data() {
    let ev = region_demo(&RegionConfig { probe_k: 0, ..RegionConfig::default() }).unwrap();
    let base = init_random(&[2, 21, 21, 1], ActivationKind::Sigmoid, 1.0, 11).unwrap();
    let fam = build_infinity_family(&base, &ev.data).unwrap();
    let report = verify_infinity_minimum(&fam, &ev.data, &VerifyOptions::default()).unwrap();
    assert!(report.pass);
    assert!(fam.is_suboptimal_against(ev.region_loss));
    let control = verify_infinity_minimum(&fam.flipped().unwrap(), &ev.data, &VerifyOptions::default()).unwrap();
    assert!(!control.pass);
}
