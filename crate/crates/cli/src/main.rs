use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use selqa_core::config::{RunConfig, CONFIG_ENV};
use selqa_core::demo::{run_demo, DemoBundle};
use selqa_core::pipeline::{
    accuracy_coverage_csv, build_pairs, curves, evaluate, label_records, recall_table,
    reliability_csv, render_lines, render_report, resolve_thresholds, risk_coverage_csv,
    score_records, select_pairs, Curves,
};
use selqa_core::records::{validate_and_load, write_records};
use selqa_core::{Criterion, Error, KnowledgeSource, Result};

#[derive(Parser)]
#[command(name = "selqa", version, about = "Calibrated answer selection between document and QA-history readers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a record file against the schema
    Validate(Common),
    /// Emit answerability/consistency labels and calibration targets
    Label(Common),
    /// Emit per-record confidence breakdowns
    Score(Common),
    /// Pick one answer per question
    Select(Common),
    /// Selection accuracy, calibration and selection-ratio report
    Eval(Common),
    /// Write risk-coverage, accuracy-coverage and reliability CSVs into --out
    Curves(Common),
    /// Retrieval recall@K over the records' ranked contexts
    Recall {
        #[command(flatten)]
        common: Common,
        /// Cutoffs to report
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,50,100")]
        k: Vec<usize>,
        #[arg(long, default_value = "document", value_parser = parse_source)]
        source: KnowledgeSource,
    },
    /// Run the whole pipeline on the bundled toy world (or --input bundle)
    Demo(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    input: Option<PathBuf>,
    /// TOML run config
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_criterion)]
    criterion: Option<Criterion>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    no_length_norm: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (directory for `curves` and `demo`)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_criterion(s: &str) -> std::result::Result<Criterion, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_source(s: &str) -> std::result::Result<KnowledgeSource, String> {
    KnowledgeSource::ALL
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown source {s:?}"))
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(c) = self.criterion {
            cfg.criterion = c;
        }
        if let Some(b) = self.bins {
            cfg.bins = b;
        }
        if self.no_length_norm {
            cfg.length_normalize = false;
        }
        if let Some(s) = self.seed {
            cfg.global_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::Invalid("--input is required".into()))
    }

    fn records(&self) -> Result<Vec<selqa_core::PredictionRecord>> {
        validate_and_load(self.input()?)
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Invalid("--out <DIR> is required".into()))
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => write(p, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_curves(dir: &Path, c: &Curves) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, points) in &c.risk_coverage {
        write(&dir.join(format!("risk_coverage_{name}.csv")), &risk_coverage_csv(points))?;
        write(&dir.join(format!("accuracy_coverage_{name}.csv")), &accuracy_coverage_csv(points))?;
    }
    for (name, bins) in &c.reliability {
        write(&dir.join(format!("reliability_{name}.csv")), &reliability_csv(bins))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(c) => {
            let recs = c.records()?;
            let pairs = selqa_core::records::pair_records(&recs);
            c.emit(&format!(
                "ok: {} records, {} pairs, {} unpaired\n",
                recs.len(),
                pairs.pairs.len(),
                pairs.unpaired.len()
            ))
        }
        Command::Label(c) => {
            let cfg = c.config()?;
            let recs = c.records()?;
            let thresholds = resolve_thresholds(&cfg, &recs)?;
            c.emit(&render_report(&label_records(&recs, thresholds)?)?)
        }
        Command::Score(c) => {
            let cfg = c.config()?;
            c.emit(&render_lines(&score_records(&c.records()?, &cfg)?)?)
        }
        Command::Select(c) => {
            let cfg = c.config()?;
            let (pairs, _) = build_pairs(&c.records()?, &cfg)?;
            c.emit(&render_lines(&select_pairs(&pairs, cfg.criterion)?)?)
        }
        Command::Eval(c) => {
            let cfg = c.config()?;
            c.emit(&render_report(&evaluate(&c.records()?, &cfg)?)?)
        }
        Command::Curves(c) => {
            let cfg = c.config()?;
            write_curves(c.out_dir()?, &curves(&c.records()?, &cfg)?)
        }
        Command::Recall { common, k, source } => {
            common.config()?;
            common.emit(&render_lines(&recall_table(&common.records()?, source, &k)?)?)
        }
        Command::Demo(c) => {
            let cfg = c.config()?;
            let bundle = match &c.input {
                Some(p) => DemoBundle::from_json(
                    &fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
                )?,
                None => DemoBundle::builtin(),
            };
            let out = run_demo(&bundle, &cfg)?;
            let report = render_report(&out.report)?;
            match &c.out {
                None => print!("{report}"),
                Some(dir) => {
                    write_curves(dir, &out.curves)?;
                    write(&dir.join("report.json"), &report)?;
                    write(&dir.join("records.jsonl"), &write_records(&out.records)?)?;
                    println!(
                        "test EM {:.4} (document {:.4}, qa_history {:.4}, oracle {:.4}); wrote {}",
                        out.report.test.em_accuracy,
                        out.report.test.document_accuracy,
                        out.report.test.qa_history_accuracy,
                        out.report.test.oracle_accuracy,
                        dir.display()
                    );
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
