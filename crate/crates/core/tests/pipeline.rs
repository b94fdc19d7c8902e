use simulmt::asr::AsrSimConfig;
use simulmt::decoder::DecoderConfig;
use simulmt::experiment::{evaluate, train_on_corpus, AnyPolicy, EvalSettings, ExperimentConfig};
use simulmt::toy::gen_corpus;

fn settings(delta: f64, teacher_forced: bool) -> EvalSettings {
    EvalSettings {
        decoder: DecoderConfig {
            delta,
            ..DecoderConfig::default()
        },
        asr: AsrSimConfig::default(),
        word_duration_sec: 0.3,
        teacher_forced,
    }
}

#[test]
fn delta_trades_latency_for_quality() {
    let cfg = ExperimentConfig::default();
    let (model, corpus) = gen_corpus(&cfg.corpus_config()).unwrap();
    let params = train_on_corpus(&model, &corpus, &cfg.labels, &cfg.train_config()).unwrap().params;
    let run = |d: f64, tf: bool| {
        let policy = AnyPolicy::learned(params.clone(), d).unwrap();
        evaluate(&model, &corpus, &policy, &settings(d, tf)).unwrap().summary
    };

    let full = run(1.0, false);
    let half = run(0.5, false);
    assert_eq!(full.bleu, 100.0);
    assert!(half.bleu >= 98.0, "{half:?}");
    assert!(half.al_tokens < full.al_tokens);
    assert!(half.al < full.al);

    // waiting for the whole sentence is the slowest schedule
    for d in [0.5, 0.7, 0.9] {
        assert!(run(d, true).al_tokens <= full.al_tokens);
    }
    assert!(run(1.0, true).upl_first > run(0.5, true).upl_first);
}

#[test]
fn latency_is_never_negative_in_logical_time() {
    let cfg = ExperimentConfig::default();
    let (model, corpus) = gen_corpus(&cfg.corpus_config()).unwrap();
    let policy = AnyPolicy::WaitK(simulmt::decoder::wait_k_policy(1).unwrap());
    let eval = evaluate(&model, &corpus, &policy, &settings(0.5, false)).unwrap();
    for s in &eval.sentences {
        assert!(s.upl_first >= 0.0 && s.upl_last >= 0.0, "{}: {} {}", s.id, s.upl_first, s.upl_last);
    }
}
