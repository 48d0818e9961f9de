use memex_core::corpus::{generate_synthetic, SyntheticConfig};
use memex_core::encoders::SkipGramConfig;
use memex_core::engine::{Engine, EngineConfig, ModelKind};
use memex_core::nn::{choice_loss, minibatch_step, Architecture, Optimizer, OptimizerKind};
use memex_core::MemexNet;

fn quick_engine(config: &SyntheticConfig, seed: u64) -> Engine {
    let (corpus, features, _) = generate_synthetic(config, seed).unwrap();
    let config = EngineConfig {
        seed,
        skipgram: SkipGramConfig {
            epochs: 3,
            ..Default::default()
        },
        ..Default::default()
    };
    Engine::new(corpus, features, config).unwrap()
}

#[test]
fn saturated_correct_logit_loss() {
    let e = std::f64::consts::E;
    let want = ((e + 3.0) / e).ln();
    assert!((choice_loss(&[1.0, 0.0, 0.0, 0.0], 0) - want).abs() < 1e-12);
    assert!((choice_loss(&[0.0, 0.0, 1.0, 0.0], 2) - want).abs() < 1e-12);
}

#[test]
fn one_adagrad_step_lowers_single_sample_loss() {
    let engine = quick_engine(&SyntheticConfig::new(2, 2, 4, 2), 8);
    let net = MemexNet::new(engine.memexnet_config(), 8).unwrap();
    let ids = engine.corpus.qa_ids();
    let samples = engine.prepare_memexnet(&net, &ids[..5]).unwrap();
    let opt = Optimizer::new(OptimizerKind::adagrad());
    for s in &samples {
        let mut params = net.params.clone();
        let before = net.arch.loss_and_grads(&params, s).unwrap().0;
        minibatch_step(&mut params, std::slice::from_ref(s), &opt, None, |ps, s| {
            net.arch.loss_and_grads(ps, s)
        })
        .unwrap();
        let after = net.arch.loss_and_grads(&params, s).unwrap().0;
        assert!(after < before, "{}: {before} -> {after}", s.qa_id);
    }
}

#[test]
fn untrained_memexnet_is_at_chance() {
    let engine = quick_engine(&SyntheticConfig::new(64, 4, 8, 5), 2);
    assert!(engine.corpus.qas().len() >= 10_000);
    let model = engine.init_model(ModelKind::MemexNet, 2).unwrap();
    let report = engine.evaluate(&model, &engine.corpus.qa_ids()).unwrap();
    let acc = report.accuracy();
    assert!((acc - 0.25).abs() <= 0.03, "untrained accuracy {acc}");
}

/// Logits from a hash of the question id: a fixed, answer-blind guesser.
fn hashed_logits(qa_id: &str) -> Vec<f64> {
    let h = qa_id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    (0..4).map(|i| ((h >> (i * 16)) & 0xffff) as f64).collect()
}

#[test]
fn answer_blind_guessing_is_at_chance() {
    let (corpus, _, _) = generate_synthetic(&SyntheticConfig::new(64, 4, 8, 5), 5).unwrap();
    let qas: Vec<_> = corpus.qas().iter().collect();
    let report = memex_core::eval::evaluate(&qas, |qa| Ok(hashed_logits(&qa.qa_id))).unwrap();
    assert!((report.accuracy() - 0.25).abs() <= 0.02, "{}", report.accuracy());
}
