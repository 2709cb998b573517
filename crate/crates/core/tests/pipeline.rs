use std::path::PathBuf;

use menunet::baselines::Mechanism;
use menunet::evaluation::{
    audit_set, compare, evaluate_baseline_set, evaluate_menunet, write_plots, EvaluationReport,
};
use menunet::losses::{LossWeights, PriorityMode};
use menunet::market::{
    generate_split, read_dataset, write_dataset, DatasetHeader, GenerationConfig, Split,
};
use menunet::mechanism::MenuNetwork;
use menunet::training::{mean_loss, train, TrainConfig};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("menunet-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn toy() -> GenerationConfig {
    GenerationConfig {
        n_students: 20,
        n_schools: 5,
        top_k_acceptable: 3,
        n_train: 12,
        n_val: 4,
        n_test: 6,
        ..Default::default()
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        hidden_width: 16,
        learning_rate: 1e-3,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn generate_train_evaluate_compare() {
    let dir = scratch("pipeline");
    let gen = toy();
    let mut splits = Vec::new();
    for (split, count) in [
        (Split::Train, gen.n_train),
        (Split::Val, gen.n_val),
        (Split::Test, gen.n_test),
    ] {
        let instances = generate_split(&gen, 3, split, count).unwrap();
        let path = dir.join(format!("{}.jsonl", split.name()));
        write_dataset(
            &path,
            &DatasetHeader::new(split, 3, count, gen.clone()),
            &instances,
        )
        .unwrap();
        let (header, back) = read_dataset(&path).unwrap();
        assert_eq!(header.count, count);
        assert_eq!(back, instances);
        splits.push(back);
    }
    let (train_set, val, test) = (&splits[0], &splits[1], &splits[2]);

    let mut cfg = quick();
    cfg.checkpoint_path = Some(dir.join("model.json"));
    let (net, report) = train(
        MenuNetwork::new(cfg.hidden_width, cfg.seed),
        train_set,
        val,
        &cfg,
    )
    .unwrap();
    assert_eq!(report.epochs.len(), 2);

    // the saved checkpoint reproduces the selected network exactly
    let (loaded, meta) = MenuNetwork::load(dir.join("model.json")).unwrap();
    assert_eq!(meta.n_students, Some(20));
    let w = LossWeights::default();
    let mode = PriorityMode::Smooth(w.tau_priority);
    let a = mean_loss(&net, val, &w, mode).unwrap();
    let b = mean_loss(&loaded, val, &w, mode).unwrap();
    assert!((a.total - b.total).abs() <= 1e-12);

    let mut eval = evaluate_menunet(&loaded, test, &w).unwrap();
    let again = evaluate_menunet(&loaded, test, &w).unwrap();
    assert_eq!(eval, again);
    eval.merge(evaluate_baseline_set(Mechanism::Rsd, test, 20, 1, &w).unwrap());
    eval.merge(evaluate_baseline_set(Mechanism::Da, test, 20, 1, &w).unwrap());
    eval.audit = Some(audit_set(&loaded, test, 5, 8, 2).unwrap());
    assert!(eval.audit.as_ref().unwrap().max_deficit <= 1e-12);
    assert_eq!(eval.mechanisms(), vec!["MenuNet", "RSD", "DA"]);

    let cmp = compare(&eval).unwrap();
    assert!(cmp.headline.is_some());
    eval.write_metrics_csv(dir.join("metrics.csv")).unwrap();
    eval.write_summary_csv(dir.join("summary.csv")).unwrap();
    cmp.write_csv(dir.join("comparison.csv")).unwrap();
    let plots = write_plots(&eval, dir.join("plots")).unwrap();
    assert!(plots.iter().all(|p| p.exists()));

    let back = EvaluationReport::read_metrics_csv(dir.join("metrics.csv")).unwrap();
    assert_eq!(back.rows, eval.rows);
    // RSD marginals are averages of non-wasteful draws, DA's of stable ones
    assert!(eval.rows_of("RSD").all(|r| r.overflow <= r.slack + 1e-12));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn training_is_deterministic() {
    let gen = toy();
    let train_set = generate_split(&gen, 8, Split::Train, 8).unwrap();
    let val = generate_split(&gen, 8, Split::Val, 2).unwrap();
    let cfg = quick();
    let run = || {
        train(
            MenuNetwork::new(cfg.hidden_width, cfg.seed),
            &train_set,
            &val,
            &cfg,
        )
        .unwrap()
    };
    let (n1, r1) = run();
    let (n2, r2) = run();
    for (p, q) in n1.params.iter().zip(&n2.params) {
        assert_eq!(p.value, q.value);
    }
    let strip = |r: &menunet::training::TrainReport| {
        r.epochs
            .iter()
            .map(|e| (e.train, e.val, e.max_grad_norm))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&r1), strip(&r2));
}
