use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use zsdst::corpus::{
    load_dialogues, load_ontology, load_qa_corpus, write_dialogues, write_ontology, write_qa_corpus, Ontology,
};
use zsdst::evaluator::{
    evaluate, predict_dialogues, read_predictions, write_predictions, EvaluateOptions, MetricsReport,
};
use zsdst::trainer::train_on_corpus;
use zsdst::{synthetic, Ablation, Error, ReaderModel};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "model.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const ABLATION_FILE: &str = "ablation.json";

fn prepare_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e }.into())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e }.into())
}

fn scoped_ontology(path: &Path, domain: Option<&str>) -> Result<Ontology, CliError> {
    let ontology = load_ontology(path)?;
    match domain {
        None => Ok(ontology),
        Some(d) if ontology.domains().iter().any(|x| x == d) => Ok(ontology.restricted_to(&[d.to_string()])),
        Some(d) => Err(CliError::Usage(format!("domain {d:?} is not in ontology {}", path.display()))),
    }
}

fn config_manifest(command: &str, config_path: &Path, cfg: &RunConfig) -> Result<RunManifest, CliError> {
    let mut m = RunManifest::new(command);
    m.config_path = Some(config_path.to_path_buf());
    m.resolved_config = Some(serde_json::to_value(cfg).expect("serializable config"));
    m.seed = Some(cfg.train.seed);
    m.input(config_path)?;
    m.input(&cfg.data.qa_corpus)?;
    for p in [&cfg.data.ontology, &cfg.data.dialogues].into_iter().flatten() {
        m.input(p)?;
    }
    Ok(m)
}

pub fn train(
    config_path: &Path,
    mut cfg: RunConfig,
    seed: Option<u64>,
    ablation: Option<Ablation>,
    out: &Path,
) -> Result<(), CliError> {
    cfg.apply_overrides(seed, ablation);
    cfg.validate()?;
    let records = load_qa_corpus(&cfg.data.qa_corpus, cfg.data.slice_fraction)?;
    let extra = match &cfg.data.ontology {
        Some(p) => load_ontology(p)?.texts(),
        None => Vec::new(),
    };
    prepare_out(out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let (_, report) = train_on_corpus(&records, &cfg.model_config(), &cfg.train, &extra, Some(&ckpt))?;
    let report_path = out.join(TRAIN_REPORT_FILE);
    write_text(&report_path, &report.to_jsonl())?;

    let mut manifest = config_manifest("train", config_path, &cfg)?;
    manifest.outputs = vec![ckpt.clone(), report_path];
    manifest.write(out)?;
    let last = report.final_step();
    println!(
        "trained {} on {} examples for {} steps (seed {}); final loss {}",
        cfg.train.ablation,
        records.len(),
        report.steps.len(),
        cfg.train.seed,
        last.map_or("n/a".into(), |s| format!("{:.4}", s.total))
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

pub fn predict(
    checkpoint: &Path,
    dialogues: &Path,
    ontology_path: &Path,
    domain: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let model = ReaderModel::load(checkpoint)?;
    let full = load_ontology(ontology_path)?;
    let ontology = scoped_ontology(ontology_path, domain)?;
    let turns = load_dialogues(dialogues, &full)?;
    let (preds, diag) = predict_dialogues(&turns, &ontology, &model);
    prepare_out(out)?;
    let path = out.join(PREDICTIONS_FILE);
    write_predictions(&path, &preds)?;

    let mut manifest = RunManifest::new("predict");
    for p in [checkpoint, dialogues, ontology_path] {
        manifest.input(p)?;
    }
    manifest.resolved_config = Some(serde_json::json!({ "domain": domain }));
    manifest.outputs = vec![path.clone()];
    manifest.write(out)?;
    println!(
        "{} turns predicted ({} slot queries, {} generation failures)",
        preds.len(),
        diag.slots_queried,
        diag.generation_failures
    );
    println!("predictions: {}", path.display());
    Ok(())
}

pub struct EvaluateArgs<'a> {
    pub predictions: &'a Path,
    pub dialogues: &'a Path,
    pub ontology: &'a Path,
    pub domain: Option<&'a str>,
    pub analyze: bool,
    pub sample: usize,
    pub seed: u64,
    pub out: &'a Path,
}

pub fn evaluate_cmd(a: EvaluateArgs<'_>) -> Result<(), CliError> {
    let ontology = load_ontology(a.ontology)?;
    let turns = load_dialogues(a.dialogues, &ontology)?;
    let preds = read_predictions(a.predictions)?;
    let options =
        EvaluateOptions { domain: a.domain.map(str::to_string), analyze: a.analyze.then_some((a.sample, a.seed)) };
    let report = evaluate(&preds, &turns, &ontology, &options)?;
    prepare_out(a.out)?;
    let path = a.out.join(METRICS_FILE);
    write_text(&path, &report.to_json())?;

    let mut manifest = RunManifest::new("evaluate");
    for p in [a.predictions, a.dialogues, a.ontology] {
        manifest.input(p)?;
    }
    manifest.seed = a.analyze.then_some(a.seed);
    manifest.resolved_config = Some(serde_json::json!({
        "domain": a.domain,
        "analyze": a.analyze,
        "sample": a.sample,
    }));
    manifest.outputs = vec![path.clone()];
    manifest.write(a.out)?;
    print!("{}", report.render_table());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct AblationRow {
    pub setting: Ablation,
    pub label: String,
    pub status: String,
    pub error: Option<String>,
    pub jga: Option<f64>,
    pub sga: Option<f64>,
    pub f1: Option<f64>,
}

fn run_setting(
    cfg: &RunConfig,
    ablation: Ablation,
    out: &Path,
    ontology: &Ontology,
    dialogues: &Path,
) -> Result<MetricsReport, Error> {
    let mut cfg = cfg.clone();
    cfg.apply_overrides(None, Some(ablation));
    let records = load_qa_corpus(&cfg.data.qa_corpus, cfg.data.slice_fraction)?;
    let dir = out.join(ablation.as_str());
    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    let (model, report) = train_on_corpus(
        &records,
        &cfg.model_config(),
        &cfg.train,
        &ontology.texts(),
        Some(&dir.join(CHECKPOINT_FILE)),
    )?;
    fs::write(dir.join(TRAIN_REPORT_FILE), report.to_jsonl())
        .map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    let turns = load_dialogues(dialogues, ontology)?;
    let (preds, _) = predict_dialogues(&turns, ontology, &model);
    write_predictions(&dir.join(PREDICTIONS_FILE), &preds)?;
    evaluate(&preds, &turns, ontology, &EvaluateOptions::default())
}

pub const ABLATION_SETTINGS: [Ablation; 3] = [Ablation::KldAndFuse, Ablation::KldOnly, Ablation::FuseOnly];

pub fn ablate(config_path: &Path, mut cfg: RunConfig, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    cfg.apply_overrides(seed, None);
    cfg.validate()?;
    let (Some(ontology_path), Some(dialogues)) = (cfg.data.ontology.clone(), cfg.data.dialogues.clone()) else {
        return Err(CliError::Usage("ablate needs data.ontology and data.dialogues in the config".into()));
    };
    let ontology = load_ontology(&ontology_path)?;
    load_dialogues(&dialogues, &ontology)?;
    load_qa_corpus(&cfg.data.qa_corpus, cfg.data.slice_fraction)?;
    prepare_out(out)?;

    let rows: Vec<AblationRow> = ABLATION_SETTINGS
        .iter()
        .map(|&setting| {
            let base = AblationRow {
                setting,
                label: setting.label().into(),
                status: "ok".into(),
                error: None,
                jga: None,
                sga: None,
                f1: None,
            };
            match run_setting(&cfg, setting, out, &ontology, &dialogues) {
                Ok(r) => AblationRow { jga: Some(r.jga), sga: Some(r.sga), f1: Some(r.f1), ..base },
                Err(e) => AblationRow { status: "failed".into(), error: Some(e.to_string()), ..base },
            }
        })
        .collect();

    let path = out.join(ABLATION_FILE);
    let json = serde_json::to_string_pretty(&serde_json::json!({ "seed": cfg.train.seed, "rows": rows }))
        .expect("serializable")
        + "\n";
    write_text(&path, &json)?;
    let mut manifest = config_manifest("ablate", config_path, &cfg)?;
    manifest.outputs = std::iter::once(path)
        .chain(ABLATION_SETTINGS.iter().flat_map(|a| {
            let d = out.join(a.as_str());
            [d.join(CHECKPOINT_FILE), d.join(TRAIN_REPORT_FILE), d.join(PREDICTIONS_FILE)]
        }))
        .collect();
    manifest.write(out)?;
    print!("{}", render_ablation(&rows));
    if rows.iter().all(|r| r.status != "ok") {
        return Err(Error::Contract("every ablation setting failed".into()).into());
    }
    Ok(())
}

fn render_ablation(rows: &[AblationRow]) -> String {
    let pct = |v: Option<f64>| v.map_or("     -".to_string(), |x| format!("{:6.2}", 100.0 * x));
    let mut s = format!("{:<10} {:>6} {:>6} {:>6}\n", "setting", "JGA", "SGA", "F1");
    for r in rows {
        write!(s, "{:<10} {} {} {}", r.label, pct(r.jga), pct(r.sga), pct(r.f1)).unwrap();
        if let Some(e) = &r.error {
            write!(s, "  failed: {e}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub const SYNTH_CONFIG: &str = "config.toml";

/// Writes a synthetic QA corpus, ontology, dialogues and a matching config.
pub fn synth(out: &Path, seed: u64, qa_records: usize, dialogues: usize) -> Result<(), CliError> {
    prepare_out(out)?;
    let files: [PathBuf; 4] = ["qa.jsonl", "ontology.json", "dialogues.jsonl", SYNTH_CONFIG].map(|f| out.join(f));
    write_qa_corpus(&files[0], &synthetic::qa_corpus(qa_records, seed))?;
    write_ontology(&files[1], &synthetic::ontology())?;
    write_dialogues(&files[2], &synthetic::dialogues(dialogues, seed.wrapping_add(1)))?;
    let config = format!(
        "[data]\nqa_corpus = \"qa.jsonl\"\nontology = \"ontology.json\"\ndialogues = \"dialogues.jsonl\"\n\n\
         [model]\nwidth = 32\nheads = 4\nff_width = 64\nfusion_width = 32\n\n\
         [train]\nlearning_rate = 3e-3\nwarmup_steps = 30\nepochs = 10\nbatch_size = 8\nseed = {seed}\n"
    );
    write_text(&files[3], &config)?;
    let mut manifest = RunManifest::new("synth");
    manifest.seed = Some(seed);
    manifest.resolved_config = Some(serde_json::json!({ "qa_records": qa_records, "dialogues": dialogues }));
    manifest.outputs = files.to_vec();
    manifest.write(out)?;
    println!("wrote {qa_records} QA records and {dialogues} dialogues to {}", out.display());
    Ok(())
}

pub fn verify(manifest_path: &Path) -> Result<(), CliError> {
    let manifest = RunManifest::load(manifest_path)?;
    let changed = manifest.changed_inputs();
    if changed.is_empty() {
        println!("{} inputs match {}", manifest.inputs.len(), manifest_path.display());
        Ok(())
    } else {
        let list: Vec<String> = changed.iter().map(|p| p.display().to_string()).collect();
        Err(Error::Validation(format!("inputs changed since the run: {}", list.join(", "))).into())
    }
}
