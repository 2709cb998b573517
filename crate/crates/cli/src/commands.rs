use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use menunet::evaluation::{
    self, audit_set, check_trained_shape, evaluate_baseline_set, evaluate_menunet, write_plots,
    EvaluationReport,
};
use menunet::market::{
    generate_split, read_dataset, write_dataset, DatasetHeader, MarketInstance, Split,
};
use menunet::mechanism::MenuNetwork;
use menunet::training::{measure_scaling, save_network, ScalingConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::{
    AuditArgs, BaselineArgs, Common, CompareArgs, EvaluateArgs, GenerateArgs, ScalingArgs,
    TrainArgs,
};

/// Applies the shared flags, validates, and echoes the configuration.
fn resolve(
    mut cfg: ExperimentConfig,
    common: &Common,
    command: &str,
) -> Result<(ExperimentConfig, PathBuf)> {
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    cfg.echo(&cfg.output_dir, command)?;
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn load_split(dir: &Path, split: Split) -> Result<Vec<MarketInstance>> {
    let path = dir.join(format!("{}.jsonl", split.name()));
    let (_, instances) =
        read_dataset(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(instances)
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
}

#[derive(Serialize)]
struct ManifestEntry {
    split: &'static str,
    file: String,
    count: usize,
    sha256: String,
}

pub fn generate(mut cfg: ExperimentConfig, a: GenerateArgs) -> Result<()> {
    let g = &mut cfg.generation;
    if let Some(v) = a.students {
        g.n_students = v;
    }
    if let Some(v) = a.schools {
        g.n_schools = v;
    }
    if let Some(v) = a.phi_student {
        g.phi_student = v;
    }
    if let Some(v) = a.phi_school {
        g.phi_school = v;
    }
    if let Some(v) = a.n_train {
        g.n_train = v;
    }
    if let Some(v) = a.n_val {
        g.n_val = v;
    }
    if let Some(v) = a.n_test {
        g.n_test = v;
    }
    let (cfg, out) = resolve(cfg, &a.common, "generate")?;
    let gen = &cfg.generation;
    let mut manifest = Vec::new();
    for (split, count) in [
        (Split::Train, gen.n_train),
        (Split::Val, gen.n_val),
        (Split::Test, gen.n_test),
    ] {
        let instances = generate_split(gen, cfg.master_seed, split, count)?;
        let file = format!("{}.jsonl", split.name());
        let path = out.join(&file);
        write_dataset(
            &path,
            &DatasetHeader::new(split, cfg.master_seed, count, gen.clone()),
            &instances,
        )?;
        manifest.push(ManifestEntry {
            split: split.name(),
            sha256: sha256_hex(&path)?,
            file,
            count,
        });
        println!(
            "{}: {count} instances (n={}, m={})",
            split.name(),
            gen.n_students,
            gen.n_schools
        );
    }
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn train(mut cfg: ExperimentConfig, a: TrainArgs) -> Result<()> {
    let t = &mut cfg.training;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.hidden {
        t.hidden_width = v;
    }
    let (mut cfg, out) = resolve(cfg, &a.common, "train")?;
    let train_set = load_split(&a.data, Split::Train)?;
    let val = load_split(&a.data, Split::Val)?;
    ensure!(!train_set.is_empty(), "the training split is empty");
    let (n, m) = (train_set[0].n_students, train_set[0].n_schools);
    let model = out.join("model.json");
    cfg.training.checkpoint_path = Some(model.clone());
    let net = MenuNetwork::new(cfg.training.hidden_width, cfg.training.seed);
    let (net, report) = menunet::training::train(net, &train_set, &val, &cfg.training)?;
    save_network(&net, &model, n, m, &cfg.training)?;
    std::fs::write(out.join("train_log.csv"), report.to_csv())?;
    for e in &report.epochs {
        println!(
            "epoch {:>3}  train {:.5}  val {:.5}  overflow {:.3}  {:.1}s",
            e.epoch, e.train.total, e.val.total, e.val.overflow, e.seconds
        );
    }
    println!(
        "best epoch {}; model written to {}",
        report.best_epoch,
        model.display()
    );
    Ok(())
}

fn print_summary(report: &EvaluationReport) {
    for mech in report.mechanisms() {
        let envy = report.values(&mech, "envy_mean");
        let waste = report.values(&mech, "waste_mean");
        let (e, es) = evaluation::mean_and_se(&envy);
        let (w, ws) = evaluation::mean_and_se(&waste);
        let o = report.overflow_summary(&mech).expect("rows exist");
        println!(
            "{mech:<8} envy {e:.5} ± {es:.5}  waste {w:.5} ± {ws:.5}  overflow mean {:.3} max {:.3}  within 1.05K {:.0}%",
            o.mean,
            o.max,
            100.0 * o.within_tolerance
        );
    }
}

pub fn evaluate(cfg: ExperimentConfig, a: EvaluateArgs) -> Result<()> {
    let (cfg, out) = resolve(cfg, &a.common, "evaluate")?;
    let (net, meta) =
        MenuNetwork::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let test = load_split(&a.data, Split::Test)?;
    for inst in &test {
        check_trained_shape(&meta, inst)?;
    }
    let report = evaluate_menunet(&net, &test, &cfg.training.weights)?;
    report.write_metrics_csv(out.join("metrics_menunet.csv"))?;
    report.write_summary_csv(out.join("summary_menunet.csv"))?;
    if !report.is_empty() {
        print_summary(&report);
    }
    Ok(())
}

pub fn baseline(mut cfg: ExperimentConfig, a: BaselineArgs) -> Result<()> {
    if let Some(d) = a.draws {
        cfg.draws = d;
    }
    let (cfg, out) = resolve(cfg, &a.common, "baseline")?;
    let test = load_split(&a.data, Split::Test)?;
    let report = evaluate_baseline_set(
        a.mechanism,
        &test,
        cfg.draws,
        cfg.master_seed,
        &cfg.training.weights,
    )?;
    let tag = a.mechanism.tag().to_lowercase();
    report.write_metrics_csv(out.join(format!("metrics_{tag}.csv")))?;
    report.write_summary_csv(out.join(format!("summary_{tag}.csv")))?;
    if !report.is_empty() {
        print_summary(&report);
    }
    Ok(())
}

pub fn compare(cfg: ExperimentConfig, a: CompareArgs) -> Result<()> {
    let (_, out) = resolve(cfg, &a.common, "compare")?;
    let mut report = EvaluationReport::default();
    for path in &a.metrics {
        let part = EvaluationReport::read_metrics_csv(path)
            .with_context(|| format!("reading {}", path.display()))?;
        for mech in part.mechanisms() {
            if report.mechanisms().contains(&mech) {
                bail!("mechanism {mech} appears in more than one input");
            }
        }
        report.merge(part);
    }
    let cmp = evaluation::compare(&report)?;
    report.write_metrics_csv(out.join("metrics.csv"))?;
    report.write_summary_csv(out.join("summary.csv"))?;
    cmp.write_csv(out.join("comparison.csv"))?;
    write_plots(&report, out.join("plots"))?;
    print!("{}", cmp.render());
    print_summary(&report);
    Ok(())
}

pub fn audit(mut cfg: ExperimentConfig, a: AuditArgs) -> Result<()> {
    if let Some(v) = a.instances {
        cfg.audit.instances = v;
    }
    if let Some(v) = a.students {
        cfg.audit.students = v;
    }
    if let Some(v) = a.misreports {
        cfg.audit.misreports = v;
    }
    let (cfg, out) = resolve(cfg, &a.common, "audit")?;
    let (net, meta) =
        MenuNetwork::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let mut test = load_split(&a.data, Split::Test)?;
    test.truncate(cfg.audit.instances);
    for inst in &test {
        check_trained_shape(&meta, inst)?;
    }
    let summary = audit_set(
        &net,
        &test,
        cfg.audit.students,
        cfg.audit.misreports,
        cfg.master_seed,
    )?;
    std::fs::write(
        out.join("audit.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "{} instances x {} students x {} misreports: max deficit {:.3e}, menu violations {}",
        summary.instances,
        summary.students_per_instance,
        summary.misreports_per_student,
        summary.max_deficit,
        summary.menu_violations
    );
    ensure!(
        summary.max_deficit <= 1e-12 && summary.menu_violations == 0,
        "strategy-proofness audit failed"
    );
    Ok(())
}

pub fn scaling(mut cfg: ExperimentConfig, a: ScalingArgs) -> Result<()> {
    if let Some(v) = a.sizes {
        cfg.scaling.sizes = v;
    }
    if let Some(v) = a.instances {
        cfg.scaling.instances = v;
    }
    if let Some(v) = a.epochs {
        cfg.scaling.epochs = v;
    }
    let (cfg, out) = resolve(cfg, &a.common, "scaling")?;
    let mut train = cfg.training.clone();
    train.epochs = cfg.scaling.epochs;
    train.checkpoint_path = None;
    train.log_every = 0;
    let template = ScalingConfig {
        generation: cfg.generation.clone(),
        train,
        instances: cfg.scaling.instances,
        master_seed: cfg.master_seed,
    };
    let rows = measure_scaling(&template, &cfg.scaling.sizes)?;
    let mut csv = String::from("n_students,seconds_per_epoch,ratio_to_previous\n");
    for (i, r) in rows.iter().enumerate() {
        let ratio = if i == 0 {
            f64::NAN
        } else {
            r.seconds_per_epoch / rows[i - 1].seconds_per_epoch
        };
        let _ = writeln!(csv, "{},{},{}", r.n_students, r.seconds_per_epoch, ratio);
        println!(
            "n = {:>5}: {:.3} s/epoch{}",
            r.n_students,
            r.seconds_per_epoch,
            if i == 0 {
                String::new()
            } else {
                format!("  (x{ratio:.2})")
            }
        );
    }
    std::fs::write(out.join("scaling.csv"), csv)?;
    Ok(())
}
