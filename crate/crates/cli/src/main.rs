//! `owl`: runs the localization pipeline stage by stage.
//!
//! Every command reads the run config (`--config`, then `--set key=value`
//! overrides, `--seed`, `--out`), consumes the artifacts of earlier stages
//! from the output directory and writes its own. Failures print one line,
//! `error[<kind>]: <message>`, and exit with status 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use owl_tal::artifacts::{loss_csv, write_stamped, write_text, RunLayout, Split};
use owl_tal::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Model};
use owl_tal::config::RunConfig;
use owl_tal::evaltal::{PartitionReport, Task};
use owl_tal::pipeline;
use owl_tal::proposals::RecallReport;
use owl_tal::Result;

#[derive(Parser)]
#[command(name = "owl", version, about = "Audiovisual temporal action localization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run config; defaults are used for anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted config override such as `owl.window=8`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Window,
    ModalityGrid,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic training and validation corpora.
    GenData(Common),
    /// Train the boundary scorer.
    TrainProposals(Common),
    /// Propose segments on both splits and report average recall.
    GenProposals(Common),
    /// Train the proposal classifier.
    TrainClassifier(Common),
    /// Classify validation proposals into detections.
    Detect(Common),
    /// Evaluate validation detections, with the occlusion breakdown.
    Eval(Common),
    /// Run a sweep end to end and write its table.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        sweep: SweepKind,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut overrides = c.set.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &c.out {
        overrides.push(format!("paths.out={}", toml_string(&out.display().to_string())));
    }
    RunConfig::load(c.config.as_deref(), &overrides)
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = load_config(&c)?;
            let splits = pipeline::gen_data(&cfg)?;
            RunLayout::new(&cfg).write_splits(&splits, &cfg.provenance())?;
            log::info!(
                "wrote {} + {} videos",
                splits.train.videos.len(),
                splits.val.videos.len()
            );
        }
        Command::TrainProposals(c) => {
            let cfg = load_config(&c)?;
            let layout = RunLayout::new(&cfg);
            let train = layout.read_split(Split::Train)?;
            let (model, curve) = pipeline::train_proposals(&cfg, &train)?;
            let prov = cfg.provenance();
            save_checkpoint(
                &layout.tem(),
                &Checkpoint {
                    provenance: prov.clone(),
                    model: Model::Tem(model),
                },
            )?;
            write_text(&layout.tem_loss(), &prov, &loss_csv(&curve))?;
        }
        Command::GenProposals(c) => {
            let cfg = load_config(&c)?;
            let layout = RunLayout::new(&cfg);
            let Model::Tem(tem) = load_checkpoint(&layout.tem())?.model else {
                return Err(owl_tal::Error::Data(format!(
                    "{} is not a boundary scorer checkpoint",
                    layout.tem().display()
                )));
            };
            let prov = cfg.provenance();
            let mut recall_val: Option<RecallReport> = None;
            for split in [Split::Train, Split::Val] {
                let corpus = layout.read_split(split)?;
                let (sets, recall) = pipeline::gen_proposals(&cfg, &tem, &corpus)?;
                layout.write_proposals(split, &sets, &prov)?;
                if split == Split::Val {
                    recall_val = Some(recall);
                }
            }
            let recall = recall_val.expect("val split processed");
            log::info!("validation AR@100 {:.4}", recall.ar_at_100);
            write_stamped(&layout.recall(), &prov, &recall)?;
        }
        Command::TrainClassifier(c) => {
            let cfg = load_config(&c)?;
            let layout = RunLayout::new(&cfg);
            let train = layout.read_split(Split::Train)?;
            let props = layout.read_proposals(Split::Train, &train)?;
            let (model, curve) = pipeline::train_classifier_stage(&cfg, &train, &props)?;
            let prov = cfg.provenance();
            save_checkpoint(
                &layout.classifier(),
                &Checkpoint {
                    provenance: prov.clone(),
                    model: Model::Classifier(model),
                },
            )?;
            write_text(&layout.classifier_loss(), &prov, &loss_csv(&curve))?;
        }
        Command::Detect(c) => {
            let cfg = load_config(&c)?;
            let layout = RunLayout::new(&cfg);
            let Model::Classifier(model) = load_checkpoint(&layout.classifier())?.model else {
                return Err(owl_tal::Error::Data(format!(
                    "{} is not a classifier checkpoint",
                    layout.classifier().display()
                )));
            };
            let val = layout.read_split(Split::Val)?;
            let props = layout.read_proposals(Split::Val, &val)?;
            let dets = pipeline::detect_stage(&cfg, &model, &val, &props)?;
            layout.write_detections(&dets, &cfg.provenance())?;
        }
        Command::Eval(c) => {
            let cfg = load_config(&c)?;
            let layout = RunLayout::new(&cfg);
            let val = layout.read_split(Split::Val)?;
            let dets = layout.read_detections(&val)?;
            let (report, parts) = pipeline::eval_stage(&cfg, &dets, &val)?;
            let prov = cfg.provenance();
            write_stamped(&layout.report("json"), &prov, &report)?;
            write_text(&layout.report("txt"), &prov, &report.to_text())?;
            if let Some(parts) = parts {
                write_stamped(&layout.occlusion("json"), &prov, &parts)?;
                write_text(&layout.occlusion("txt"), &prov, &partition_text(&parts))?;
            }
            println!("average action mAP {:.4}", pipeline::headline(&report));
        }
        Command::Ablate { common, sweep } => {
            let cfg = load_config(&common)?;
            let layout = RunLayout::new(&cfg);
            let (name, table) = match sweep {
                SweepKind::Window => ("window", pipeline::window_ablation(&cfg)?),
                SweepKind::ModalityGrid => ("modality_grid", pipeline::modality_grid(&cfg)?),
            };
            write_text(&layout.ablation(name), &cfg.provenance(), &table.to_csv())?;
        }
    }
    Ok(())
}

fn partition_text(parts: &PartitionReport) -> String {
    let mut s = format!("{:<10} {:>6} {:>12}\n", "partition", "n_gt", "action mAP");
    for p in &parts.partitions {
        let map = parts
            .average_map(p.partition, Task::Action)
            .map_or("-".to_string(), |m| format!("{:.2}", 100.0 * m));
        s.push_str(&format!("{:<10} {:>6} {:>12}\n", p.partition.label(), p.n_gt, map));
    }
    s
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
