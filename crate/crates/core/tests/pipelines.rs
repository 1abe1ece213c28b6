use std::path::PathBuf;

use ebm_ssl::data::{bio_names, gen_hmm, gen_mixture, split, split_per_class, HmmSpec, LabeledSet, MixtureSpec};
use ebm_ssl::diffcore::checkpoint::Checkpoint;
use ebm_ssl::pipelines::{
    train, train_joint, train_partial, train_pretrain_finetune, train_resumable, train_supervised, EvalSet, Method,
    Modality, TaskData, TrainConfig,
};

fn mixture_task(spec: &MixtureSpec, per_class: usize, ratio: f64, seed: u64) -> TaskData {
    let data = gen_mixture(spec, 200, seed).unwrap();
    TaskData::Continuous {
        split: split_per_class(&data, per_class, ratio, seed).unwrap(),
        classes: spec.classes,
    }
}

fn hmm_task(n: usize, p: f64, ratio: f64, seed: u64) -> TaskData {
    let spec = HmmSpec::default();
    let (_, data) = gen_hmm(&spec, n, seed).unwrap();
    TaskData::Sequence {
        split: split(&data, p, ratio, seed).unwrap(),
        vocab: spec.vocab,
        labels: spec.states,
        max_len: spec.max_len,
        label_names: Some(bio_names(spec.states)),
    }
}

fn continuous(method: Method, steps: usize) -> TrainConfig {
    TrainConfig {
        modality: Modality::Continuous,
        method,
        steps,
        pretrain_steps: steps,
        log_every: 10,
        ..TrainConfig::default()
    }
}

fn sequence(method: Method, steps: usize) -> TrainConfig {
    TrainConfig {
        modality: Modality::Sequence,
        method,
        steps,
        pretrain_steps: steps,
        labeled_batch: 8,
        unlabeled_batch: 8,
        nce: ebm_ssl::pipelines::NceConfig {
            nu: 4,
            refresh_every: 5,
            ..Default::default()
        },
        log_every: 5,
        ..TrainConfig::default()
    }
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ebm-ssl-pipelines-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    let _ = std::fs::remove_file(&p);
    p
}

#[test]
fn separable_mixture_is_learned() {
    let spec = MixtureSpec {
        classes: 4,
        radius: 6.0,
        std: 0.3,
    };
    let task = mixture_task(&spec, 20, 0.0, 1);
    let m = train_supervised(&task, &continuous(Method::Supervised, 200)).unwrap();
    let test = gen_mixture(&spec, 100, 99).unwrap();
    let acc = m.evaluate(&EvalSet::Continuous(test)).unwrap().accuracy;
    assert!(acc >= 0.99, "accuracy {acc}");
    assert_eq!(m.train_metrics.accuracy, 1.0);
}

#[test]
fn single_class_has_zero_loss() {
    let data = gen_mixture(&MixtureSpec::default(), 10, 2).unwrap();
    let task = TaskData::Continuous {
        split: split_per_class(
            &LabeledSet {
                ys: vec![0; data.len()],
                ..data
            },
            10,
            0.0,
            2,
        )
        .unwrap(),
        classes: 1,
    };
    let m = train_supervised(&task, &continuous(Method::Supervised, 20)).unwrap();
    assert!(!m.log.is_empty());
    for row in &m.log {
        assert_eq!(row.loss_sup, 0.0);
        assert_eq!(row.metric_train, 1.0);
    }
}

#[test]
fn training_is_deterministic() {
    let task = mixture_task(&MixtureSpec::default(), 4, 5.0, 3);
    for method in Method::ALL {
        let cfg = continuous(method, 15);
        let a = train(&task, &cfg, None).unwrap();
        let b = train(&task, &cfg, None).unwrap();
        assert_eq!(a.params, b.params, "{method}");
        let c = train(&task, &TrainConfig { seed: 1, ..cfg }, None).unwrap();
        assert_ne!(a.params, c.params, "{method}");
    }
    let task = hmm_task(120, 0.1, 5.0, 3);
    for method in Method::ALL {
        let cfg = sequence(method, 8);
        let a = train(&task, &cfg, None).unwrap();
        let b = train(&task, &cfg, None).unwrap();
        assert_eq!(a.params, b.params, "{method}");
    }
}

#[test]
fn zero_weight_joint_equals_supervised() {
    let task = mixture_task(&MixtureSpec::default(), 4, 5.0, 4);
    let cfg = TrainConfig {
        unsup_weight: 0.0,
        ..continuous(Method::Joint, 30)
    };
    let j = train_joint(&task, &cfg).unwrap();
    let s = train_supervised(&task, &cfg).unwrap();
    assert_eq!(j.params, s.params);

    let task = hmm_task(120, 0.1, 5.0, 4);
    let cfg = TrainConfig {
        unsup_weight: 0.0,
        ..sequence(Method::Joint, 10)
    };
    assert_eq!(
        train_joint(&task, &cfg).unwrap().params,
        train_supervised(&task, &cfg).unwrap().params
    );
}

#[test]
fn frozen_encoder_is_not_updated_by_finetuning() {
    let cases = [
        (
            mixture_task(&MixtureSpec::default(), 4, 5.0, 5),
            continuous(Method::PretrainFinetune, 12),
            "body.",
        ),
        (
            hmm_task(120, 0.1, 5.0, 5),
            sequence(Method::PretrainFinetune, 6),
            "enc.",
        ),
    ];
    for (task, cfg, prefix) in cases {
        let ck = tmp(&format!("frozen-{prefix}ckpt"));
        train_partial(&task, &cfg, &ck, cfg.pretrain_steps).unwrap();
        let pre = Checkpoint::load(&ck).unwrap().params_with_prefix("param.").unwrap();
        let m = train_pretrain_finetune(&task, &cfg).unwrap();
        let mut checked = 0;
        for (name, p) in pre.iter() {
            if name.starts_with(prefix) && !name.contains("head") {
                assert_eq!(m.params.value(name).unwrap(), &p.value, "{name}");
                checked += 1;
            }
        }
        assert!(checked > 0);
        let unfrozen = train_pretrain_finetune(
            &task,
            &TrainConfig {
                freeze_encoder: false,
                ..cfg
            },
        )
        .unwrap();
        assert!(pre
            .iter()
            .filter(|(n, _)| n.starts_with(prefix) && !n.contains("head"))
            .any(|(n, p)| unfrozen.params.value(n).unwrap() != &p.value));
    }
}

#[test]
fn resumed_runs_match_uninterrupted_ones() {
    let cases = [
        (
            mixture_task(&MixtureSpec::default(), 4, 5.0, 6),
            continuous(Method::Joint, 20),
        ),
        (
            mixture_task(&MixtureSpec::default(), 4, 5.0, 6),
            continuous(Method::PretrainFinetune, 10),
        ),
        (hmm_task(120, 0.1, 5.0, 6), sequence(Method::Joint, 12)),
        (hmm_task(120, 0.1, 5.0, 6), sequence(Method::PretrainFinetune, 6)),
    ];
    for (i, (task, cfg)) in cases.into_iter().enumerate() {
        let whole = train(&task, &cfg, None).unwrap();
        let ck = tmp(&format!("resume-{i}.ckpt"));
        train_partial(&task, &cfg, &ck, 7).unwrap();
        train_partial(&task, &cfg, &ck, 3).unwrap();
        let resumed = train_resumable(&task, &cfg, None, &ck, 4).unwrap();
        assert_eq!(whole.params, resumed.params, "case {i}");
        assert_eq!(whole.log.len(), resumed.log.len(), "case {i}");
        for (a, b) in whole.log.iter().zip(&resumed.log) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.loss_sup.to_bits(), b.loss_sup.to_bits());
            assert_eq!(a.loss_unsup.to_bits(), b.loss_unsup.to_bits());
        }
    }
}

#[test]
fn linear_probe_on_pretrained_features_beats_chance() {
    let spec = MixtureSpec::default();
    let task = mixture_task(&spec, 10, 15.0, 7);
    let m = train_pretrain_finetune(&task, &continuous(Method::PretrainFinetune, 150)).unwrap();
    let test = gen_mixture(&spec, 100, 77).unwrap();
    let acc = m.evaluate(&EvalSet::Continuous(test)).unwrap().accuracy;
    assert!(acc > 0.5, "accuracy {acc}");
}

#[test]
fn probe_on_untrained_features_reaches_majority_rate() {
    let spec = MixtureSpec::default();
    let task = mixture_task(&spec, 10, 15.0, 5);
    let cfg = TrainConfig {
        pretrain_steps: 0,
        ..continuous(Method::PretrainFinetune, 150)
    };
    let m = train_pretrain_finetune(&task, &cfg).unwrap();
    let test = gen_mixture(&spec, 100, 55).unwrap();
    let majority = 1.0 / spec.classes as f64;
    let acc = m.evaluate(&EvalSet::Continuous(test)).unwrap().accuracy;
    assert!(acc >= majority, "accuracy {acc} below majority rate {majority}");
}

#[test]
fn sequence_tagger_learns_hmm_tags() {
    let task = hmm_task(400, 0.5, 0.0, 8);
    let m = train_supervised(
        &task,
        &TrainConfig {
            labeled_batch: 16,
            ..sequence(Method::Supervised, 300)
        },
    )
    .unwrap();
    let (_, test) = gen_hmm(&HmmSpec::default(), 200, 8).unwrap();
    let metrics = m.evaluate(&EvalSet::Sequence(test)).unwrap();
    assert!(metrics.accuracy > 0.6, "token accuracy {}", metrics.accuracy);
    assert!(metrics.span_f1.is_some());
}

#[test]
fn bad_inputs_are_rejected() {
    let task = mixture_task(&MixtureSpec::default(), 4, 0.0, 9);
    assert!(train_pretrain_finetune(&task, &continuous(Method::PretrainFinetune, 5)).is_err());
    assert!(train(&task, &sequence(Method::Supervised, 5), None).is_err());
    assert!(train(
        &task,
        &TrainConfig {
            unsup_weight: -1.0,
            ..continuous(Method::Joint, 5)
        },
        None
    )
    .is_err());
    let m = train_supervised(&task, &continuous(Method::Supervised, 5)).unwrap();
    let (_, seqs) = gen_hmm(&HmmSpec::default(), 5, 0).unwrap();
    assert!(m.evaluate(&EvalSet::Sequence(seqs)).is_err());
}
