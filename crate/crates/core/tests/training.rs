mod common;

use zsdst::backbone::BackboneConfig;
use zsdst::corpus::SlotKind;
use zsdst::evaluator::{predict_dialogues, predict_turn};
use zsdst::query::ReaderExample;
use zsdst::synthetic;
use zsdst::trainer::{train, train_on_corpus};
use zsdst::{Ablation, Error, ModelConfig, ReaderModel, TrainConfig};

fn model_config() -> ModelConfig {
    ModelConfig { backbone: BackboneConfig::tiny(0), fusion_width: 16, ablation: Ablation::KldAndFuse }
}

fn quick(steps: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        warmup_steps: 10,
        epochs: 100,
        max_steps: Some(steps),
        batch_size: 8,
        ..Default::default()
    }
}

#[test]
fn loss_falls_and_log_is_complete() {
    let records = synthetic::qa_corpus(64, 3);
    let (_, report) = train_on_corpus(&records, &model_config(), &quick(80), &[], None).unwrap();
    assert_eq!(report.steps.len(), 80);
    let mean = |s: &[zsdst::trainer::StepLog]| s.iter().map(|l| l.total).sum::<f64>() / s.len() as f64;
    assert!(mean(&report.steps[70..]) < 0.5 * mean(&report.steps[..10]));
    assert!(report.steps.iter().all(|s| s.kld >= 0.0));
    let log = report.to_jsonl();
    assert_eq!(log.lines().count(), 82);
    assert!(log.lines().next().unwrap().contains("\"record\":\"config\""));
}

#[test]
fn checkpoint_reloads_to_identical_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let records = synthetic::qa_corpus(32, 4);
    let ontology = synthetic::ontology();
    let (model, report) =
        train_on_corpus(&records, &model_config(), &quick(20), &ontology.texts(), Some(&path)).unwrap();
    assert_eq!(report.checkpoint.as_deref(), Some(path.as_path()));
    let loaded = ReaderModel::load(&path).unwrap();
    assert_eq!(loaded.to_checkpoint_bytes(), model.to_checkpoint_bytes());
    let turns = synthetic::dialogues(4, 1);
    assert_eq!(predict_dialogues(&turns, &ontology, &loaded).0, predict_dialogues(&turns, &ontology, &model).0);
}

#[test]
fn divergence_is_reported() {
    let records = synthetic::qa_corpus(16, 5);
    let config = TrainConfig { learning_rate: 1e300, warmup_steps: 0, ..quick(5) };
    match train_on_corpus(&records, &model_config(), &config, &[], None) {
        Err(Error::Diverged { step, last_checkpoint }) => {
            assert!(step >= 1);
            assert!(last_checkpoint.is_none());
        }
        other => panic!("expected divergence, got {:?}", other.map(|(_, r)| r.steps.len())),
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let records = synthetic::qa_corpus(8, 6);
    assert!(matches!(train_on_corpus(&[], &model_config(), &quick(1), &[], None), Err(Error::Validation(_))));
    let bad = TrainConfig { batch_size: 0, ..quick(1) };
    assert!(matches!(train_on_corpus(&records, &model_config(), &bad, &[], None), Err(Error::Config(_))));

    let (mut model, _) = train_on_corpus(&records, &model_config(), &quick(1), &[], None).unwrap();
    let mut ex = ReaderExample::from(&records[0]);
    ex.answer = None;
    assert!(matches!(train(&mut model, &[ex], &quick(1), None), Err(Error::Validation(_))));
}

#[test]
fn prediction_is_scoped_to_turn_domains() {
    let records = synthetic::qa_corpus(16, 7);
    let ontology = synthetic::ontology();
    let (model, _) = train_on_corpus(&records, &model_config(), &quick(2), &ontology.texts(), None).unwrap();
    for turn in synthetic::dialogues(6, 8) {
        let (pred, diag) = predict_turn(&turn, &ontology, &model);
        assert_eq!(diag.slots_queried, 2);
        assert!(pred.predicted_state.keys().all(|k| turn.domains.contains(&k.domain)));
        assert!(pred.predicted_state.values().all(|v| v != "none"));
        assert!(pred.predicted_state.keys().all(|k| ontology.kind_of(k) == Some(SlotKind::Categorical)));
    }
}

#[test]
fn every_ablation_trains() {
    let records = synthetic::qa_corpus(16, 9);
    for ablation in Ablation::ALL {
        let config = TrainConfig { ablation, ..quick(3) };
        let (model, report) = train_on_corpus(&records, &model_config(), &config, &[], None).unwrap();
        assert_eq!(model.ablation(), ablation);
        let kld: f64 = report.steps.iter().map(|s| s.kld).sum();
        assert_eq!(kld == 0.0, !ablation.uses_kld(), "{ablation}");
    }
}
