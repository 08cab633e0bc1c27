use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use xcb_core::metrics::EvalReport;
use xcb_core::model::{load_checkpoint, save_checkpoint, InferenceMode, Model};
use xcb_core::training::EpochReport;
use xcb_core::{Result, XcbError};

use crate::config::{RunConfig, Variant};
use crate::pipeline::{self, CorpusDir};
use crate::plot::{line_chart, Series};

pub const TRAIN_REPORT: &str = "train_report.jsonl";
pub const PRETRAIN_REPORT: &str = "pretrain_report.jsonl";
pub const LOSS_PLOT: &str = "loss.svg";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";

#[derive(Debug, Parser)]
#[command(name = "xcb", version, about = "Cross-lingual contextual biasing experiments on synthetic speech")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/test/pretrain corpus and entity pool.
    GenData(GenDataArgs),
    /// Pretrain (or load) a backbone and fine-tune one variant.
    Train(TrainArgs),
    /// Decode a test corpus and write JSON and CSV reports.
    Eval(EvalArgs),
    /// Train baseline and XCB per seed, evaluate XCB in both modes.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key=value` config file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Training seed (init, shuffling, training hotword lists).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub freeze_backbone: bool,
    /// Take the backbone from this checkpoint instead of pretraining one.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub mode: Option<InferenceMode>,
    #[arg(long)]
    pub hotword_n: Option<usize>,
    /// Seed of the per-utterance hotword lists.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub freeze_backbone: bool,
    #[arg(long)]
    pub hotword_n: Option<usize>,
    #[arg(long)]
    pub plot: bool,
}

/// Process exit code for an error: 2 config, 3 data, 4 numerical, 1 other.
pub fn exit_code(err: &XcbError) -> i32 {
    match err {
        XcbError::Config(_) => 2,
        XcbError::Parse { .. } | XcbError::Io(_) | XcbError::Json(_) | XcbError::Input(_) | XcbError::Protocol(_) => 3,
        XcbError::Numerical(_) | XcbError::DegenerateLoss | XcbError::EmptyFiring(_) => 4,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a),
    }
}

fn resolve(common: &Common, flags: Vec<(&str, String)>) -> Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut pairs: Vec<(String, String)> = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| XcbError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    pairs.extend(flags.into_iter().map(|(k, v)| (k.to_string(), v)));
    base.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
}

/// Replaces the corpus section with the one the corpus directory was built
/// from, then revalidates.
fn with_corpus(mut cfg: RunConfig, corpus: &CorpusDir) -> Result<RunConfig> {
    cfg.corpus = corpus.config.clone();
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn write_curve(path: &Path, curve: &[EpochReport]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in curve {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn loss_chart(title: &str, curve: &[EpochReport]) -> String {
    let pick = |f: fn(&EpochReport) -> f64| curve.iter().map(|r| (r.epoch as f64, f(r))).collect();
    line_chart(
        title,
        "epoch",
        &[
            Series { name: "l_total", points: pick(|r| r.l_total) },
            Series { name: "l_asr", points: pick(|r| r.l_asr) },
            Series { name: "l_bias", points: pick(|r| r.l_bias) },
            Series { name: "l_ce_2nd", points: pick(|r| r.l_ce_2nd) },
        ],
    )
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut flags = Vec::new();
    if let Some(s) = a.seed {
        flags.push(("corpus.seed", s.to_string()));
    }
    let cfg = resolve(&a.common, flags)?;
    pipeline::write_corpus_dir(&cfg, &a.common.out)?;
    Ok(())
}

fn train_flags(variant: Option<Variant>, seed: Option<u64>, alpha: Option<f64>, freeze: bool) -> Vec<(&'static str, String)> {
    let mut flags = Vec::new();
    if let Some(v) = variant {
        flags.push(("variant", v.to_string()));
    }
    if let Some(s) = seed {
        flags.push(("train.seed", s.to_string()));
    }
    if let Some(x) = alpha {
        flags.push(("train.alpha", x.to_string()));
    }
    if freeze {
        flags.push(("train.freeze_backbone", "true".to_string()));
    }
    flags
}

fn checkpoint_meta(cfg: &RunConfig, variant: Variant, backbone: &str) -> serde_json::Value {
    json!({
        "variant": variant,
        "seed": cfg.train.seed,
        "backbone": backbone,
        "config": cfg.to_json(),
    })
}

/// Pretrains (or loads) a backbone, fine-tunes `variant` and writes the
/// checkpoint, per-epoch reports and resolved config into `out`.
pub fn train_into(cfg: &RunConfig, corpus: &CorpusDir, init: Option<&Path>, out: &Path, plot: bool) -> Result<Model> {
    let variant = cfg.variant;
    let resolved = cfg.for_variant(variant);
    fs::create_dir_all(out)?;
    let (backbone, source) = match init {
        Some(p) => (load_checkpoint(p)?.params, "checkpoint"),
        None => {
            let (m, curve) = pipeline::pretrain_backbone(cfg, corpus)?;
            if !curve.is_empty() {
                write_curve(&out.join(PRETRAIN_REPORT), &curve)?;
            }
            (m.params, "pretrained")
        }
    };
    let mut report = BufWriter::new(File::create(out.join(TRAIN_REPORT))?);
    let (model, curve) = pipeline::finetune(cfg, variant, &backbone, corpus, &mut |r| {
        log::info!("{variant} epoch {} l_total {:.5} l_asr {:.5} l_bias {:.5} l_ce_2nd {:.5}", r.epoch, r.l_total, r.l_asr, r.l_bias, r.l_ce_2nd);
        serde_json::to_writer(&mut report, r)?;
        report.write_all(b"\n")?;
        report.flush()?;
        Ok(())
    })?;
    drop(report);
    save_checkpoint(out, &model.config, &model.params, &checkpoint_meta(&resolved, variant, source))?;
    fs::write(out.join(pipeline::CONFIG_FILE), resolved.render())?;
    if plot {
        fs::write(out.join(LOSS_PLOT), loss_chart(&format!("{variant} fine-tuning"), &curve))?;
    }
    Ok(model)
}

fn train(a: &TrainArgs) -> Result<()> {
    let corpus = pipeline::load_corpus_dir(&a.corpus)?;
    let cfg = resolve(&a.common, train_flags(a.variant, a.seed, a.alpha, a.freeze_backbone))?;
    let cfg = with_corpus(cfg, &corpus)?;
    train_into(&cfg, &corpus, a.init.as_deref(), &a.common.out, a.plot)?;
    Ok(())
}

/// Display name of a system in reports.
pub fn system_name(model: &Model, mode: InferenceMode) -> &'static str {
    match (model.has_xcb(), mode) {
        (false, _) => "baseline",
        (true, InferenceMode::Active) => "xcb",
        (true, InferenceMode::Inactive) => "xcb:nbm",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub system: String,
    pub mode: InferenceMode,
    pub config: serde_json::Value,
    pub checkpoint: serde_json::Value,
    pub report: EvalReport,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let corpus = pipeline::load_corpus_dir(&a.corpus)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let mut flags = Vec::new();
    if let Some(m) = a.mode {
        flags.push(("eval.mode", serde_json::to_value(m)?.as_str().unwrap_or_default().to_string()));
    }
    if let Some(n) = a.hotword_n {
        flags.push(("eval.hotword_n", n.to_string()));
    }
    if let Some(s) = a.seed {
        flags.push(("eval.seed", s.to_string()));
    }
    let mut cfg = resolve(&a.common, flags)?;
    cfg.model = ckpt.config.clone();
    cfg.variant = if ckpt.config.xcb { Variant::Xcb } else { Variant::Baseline };
    let cfg = with_corpus(cfg, &corpus)?;
    let model = Model::from_parts(ckpt.config, ckpt.params)?;
    let result = pipeline::evaluate(&model, &corpus.test, &corpus.pool, &corpus.vocab, &cfg.eval)?;
    let system = system_name(&model, cfg.eval.mode);
    log::info!("{system}: mer {:.4} bwer {:?} bcer {:?}", result.report.mer, result.report.bwer, result.report.bcer);
    fs::create_dir_all(&a.common.out)?;
    write_json(
        &a.common.out.join(REPORT_JSON),
        &ReportFile {
            system: system.to_string(),
            mode: cfg.eval.mode,
            config: cfg.to_json(),
            checkpoint: ckpt.meta,
            report: result.report.clone(),
        },
    )?;
    fs::write(
        a.common.out.join(REPORT_CSV),
        format!("{}\n{}\n", EvalReport::CSV_HEADER, result.report.csv_row(system)),
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `None` on median rows.
    pub seed: Option<u64>,
    pub system: String,
    /// Checkpoint directory relative to the ablation output; empty on
    /// median rows.
    pub checkpoint: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

pub const SYSTEMS: [&str; 3] = ["baseline", "xcb", "xcb:nbm"];

impl Ablation {
    pub fn csv_header() -> String {
        format!("seed,{},checkpoint", EvalReport::CSV_HEADER)
    }

    pub fn to_csv(&self) -> String {
        let mut s = Self::csv_header();
        s.push('\n');
        for r in &self.rows {
            let seed = r.seed.map(|x| x.to_string()).unwrap_or_else(|| "median".into());
            s.push_str(&format!("{seed},{},{}\n", r.report.csv_row(&r.system), r.checkpoint));
        }
        s
    }

    pub fn median(&self, system: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.seed.is_none() && r.system == system).map(|r| &r.report)
    }
}

fn median_f64(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

fn median_usize(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    v.get(v.len().saturating_sub(1) / 2).copied().unwrap_or(0)
}

/// Field-wise median; undefined values are left out, a field undefined on
/// every seed stays undefined.
pub fn median_report(reports: &[&EvalReport]) -> EvalReport {
    let opt = |f: fn(&EvalReport) -> Option<f64>| median_f64(reports.iter().filter_map(|r| f(r)).collect());
    EvalReport {
        mer: median_f64(reports.iter().map(|r| r.mer).collect()).unwrap_or(f64::NAN),
        bmer: opt(|r| r.bmer),
        bcer: opt(|r| r.bcer),
        n_bc: median_usize(reports.iter().map(|r| r.n_bc).collect()),
        bwer: opt(|r| r.bwer),
        n_bw: median_usize(reports.iter().map(|r| r.n_bw).collect()),
        precision_l1: opt(|r| r.precision_l1),
        recall_l1: opt(|r| r.recall_l1),
        precision_l2: opt(|r| r.precision_l2),
        recall_l2: opt(|r| r.recall_l2),
    }
}

/// Per seed: pretrain a backbone, fine-tune baseline and XCB from it, and
/// score baseline, XCB active and XCB inactive (the last two share one
/// checkpoint). Seeds run in order so logs are deterministic.
pub fn run_ablation(cfg: &RunConfig, corpus: &CorpusDir, seeds: &[u64], out: &Path, plot: bool) -> Result<Ablation> {
    if seeds.is_empty() {
        return Err(XcbError::Config("ablation needs at least one seed".into()));
    }
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut scfg = cfg.clone();
        scfg.train.seed = seed;
        let (backbone, pre_curve) = pipeline::pretrain_backbone(&scfg, corpus)?;
        let seed_dir = format!("seed_{seed}");
        if !pre_curve.is_empty() {
            fs::create_dir_all(out.join(&seed_dir))?;
            write_curve(&out.join(&seed_dir).join(PRETRAIN_REPORT), &pre_curve)?;
        }
        for variant in [Variant::Baseline, Variant::Xcb] {
            let rel = format!("{seed_dir}/{variant}");
            let dir = out.join(&rel);
            fs::create_dir_all(&dir)?;
            let vcfg = scfg.for_variant(variant);
            let (model, curve) = pipeline::finetune(&scfg, variant, &backbone.params, corpus, &mut |r| {
                log::info!("seed {seed} {variant} epoch {} l_total {:.5}", r.epoch, r.l_total);
                Ok(())
            })?;
            write_curve(&dir.join(TRAIN_REPORT), &curve)?;
            save_checkpoint(&dir, &model.config, &model.params, &checkpoint_meta(&vcfg, variant, "pretrained"))?;
            fs::write(dir.join(pipeline::CONFIG_FILE), vcfg.render())?;
            if plot {
                fs::write(dir.join(LOSS_PLOT), loss_chart(&format!("{variant} fine-tuning, seed {seed}"), &curve))?;
            }
            let modes: &[InferenceMode] = match variant {
                Variant::Baseline => &[InferenceMode::Active],
                Variant::Xcb => &[InferenceMode::Active, InferenceMode::Inactive],
            };
            for &mode in modes {
                let e = pipeline::evaluate_mode(&model, &corpus.test, &corpus.pool, &corpus.vocab, &cfg.eval, mode)?;
                let system = system_name(&model, mode);
                log::info!("seed {seed} {system}: mer {:.4} bwer {:?} bcer {:?}", e.report.mer, e.report.bwer, e.report.bcer);
                rows.push(AblationRow {
                    seed: Some(seed),
                    system: system.to_string(),
                    checkpoint: rel.clone(),
                    report: e.report,
                });
            }
        }
    }
    for system in SYSTEMS {
        let reports: Vec<&EvalReport> = rows.iter().filter(|r| r.system == system).map(|r| &r.report).collect();
        let report = median_report(&reports);
        rows.push(AblationRow {
            seed: None,
            system: system.to_string(),
            checkpoint: String::new(),
            report,
        });
    }
    let ablation = Ablation {
        config: cfg.to_json(),
        seeds: seeds.to_vec(),
        rows,
    };
    fs::write(out.join(ABLATION_CSV), ablation.to_csv())?;
    write_json(&out.join(ABLATION_JSON), &ablation)?;
    Ok(ablation)
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let corpus = pipeline::load_corpus_dir(&a.corpus)?;
    let mut flags = train_flags(None, None, a.alpha, a.freeze_backbone);
    if let Some(n) = a.hotword_n {
        flags.push(("eval.hotword_n", n.to_string()));
    }
    let cfg = with_corpus(resolve(&a.common, flags)?, &corpus)?;
    let ablation = run_ablation(&cfg, &corpus, &a.seeds, &a.common.out, a.plot)?;
    for system in SYSTEMS {
        if let Some(m) = ablation.median(system) {
            log::info!("median {system}: mer {:.4} bwer {:?} bcer {:?}", m.mer, m.bwer, m.bcer);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(mer: f64, bwer: Option<f64>) -> EvalReport {
        EvalReport {
            mer,
            bmer: None,
            bcer: None,
            n_bc: 0,
            bwer,
            n_bw: 3,
            precision_l1: None,
            recall_l1: None,
            precision_l2: None,
            recall_l2: None,
        }
    }

    #[test]
    fn medians() {
        let (a, b, c) = (report(0.3, Some(0.5)), report(0.1, None), report(0.2, Some(0.1)));
        let m = median_report(&[&a, &b, &c]);
        assert_eq!(m.mer, 0.2);
        assert!((m.bwer.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(m.bcer, None);
        assert_eq!(m.n_bw, 3);
        assert_eq!(median_usize(vec![4, 1]), 1);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&XcbError::Config("x".into())), 2);
        assert_eq!(exit_code(&XcbError::Parse { line: 1, msg: "x".into() }), 3);
        assert_eq!(exit_code(&XcbError::Numerical("x".into())), 4);
        assert_eq!(exit_code(&XcbError::Contract("x".into())), 1);
    }

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["xcb", "ablate", "--corpus", "c", "--out", "o", "--seeds", "4,5"]).unwrap();
        match cli.command {
            Command::Ablate(a) => assert_eq!(a.seeds, vec![4, 5]),
            other => panic!("{other:?}"),
        }
        let cli = Cli::try_parse_from(["xcb", "eval", "--checkpoint", "k", "--corpus", "c", "--out", "o", "--mode", "inactive"]).unwrap();
        match cli.command {
            Command::Eval(a) => assert_eq!(a.mode, Some(InferenceMode::Inactive)),
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["xcb", "train", "--corpus", "c", "--out", "o", "--variant", "big"]).is_err());
    }
}
