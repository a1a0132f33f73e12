use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use synalign::checkpoint::{load_checkpoint, save_checkpoint};
use synalign::config::RunConfig;
use synalign::encoder::init_model;
use synalign::experiment::loss_compare;
use synalign::linker::{build_index, evaluate, export_embeddings, topk};
use synalign::ontology::{load_dictionary, load_mentions, write_mentions};
use synalign::pairgen::{generate_pairs, read_pairs, write_pairs, DEFAULT_PAIR_CAP};
use synalign::synth::generate;
use synalign::trainer::{finetune, pretrain};
use synalign::{Error, Result};

#[derive(Parser)]
#[command(name = "synalign", version, about = "Synonym self-alignment and concept linking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides any configuration key, e.g. `--set learning_rate=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the positive pair list from a dictionary.
    PreparePairs {
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PAIR_CAP)]
        cap: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Self-alignment pretraining from a pair list.
    Pretrain {
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV, defaults to `<out>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune a checkpoint on mention/synonym pairs.
    Finetune {
        #[arg(long)]
        mentions: Option<PathBuf>,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Acc@k of a checkpoint on a mention set.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        mentions: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,5")]
        ks: Vec<usize>,
        /// JSON report, defaults to `<checkpoint>.eval.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Nearest dictionary names for one mention.
    Query {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        mention: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Export unit embeddings of every dictionary name.
    Embed {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic dictionary with train/test mentions.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model per loss kind and tabulate the results.
    LossCompare {
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        mentions: Option<PathBuf>,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.set_pair(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn need(arg: &Option<PathBuf>, cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    arg.clone()
        .or_else(|| cfg.path(key))
        .ok_or_else(|| Error::InvalidArgument(format!("missing --{} (or `{key}` in config)", flag_name(key))))
}

fn flag_name(key: &str) -> &str {
    match key {
        "dictionary" => "dict",
        "test_mentions" | "train_mentions" => "mentions",
        other => other,
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::PreparePairs { dict, out, cap, common } => {
            let cfg = run_config(&common)?;
            let ontology = load_dictionary(&need(&dict, &cfg, "dictionary")?)?;
            let pairs = generate_pairs(&ontology, cap, cfg.seed())?;
            write_pairs(&pairs, &out)?;
            eprintln!("wrote {} pairs to {}", pairs.len(), out.display());
        }
        Command::Pretrain { pairs, out, log, common } => {
            let cfg = run_config(&common)?;
            let pairs = read_pairs(&need(&pairs, &cfg, "pairs")?)?;
            let model = init_model(&cfg.encoder()?)?;
            let outcome = pretrain(&pairs, model, &cfg.train()?)?;
            save_checkpoint(&out, &outcome.model, Some(&outcome.optimizer))?;
            outcome
                .log
                .write_csv(&log.unwrap_or_else(|| with_suffix(&out, ".log.csv")))?;
            cfg.write_resolved(&with_suffix(&out, ".config"))?;
            eprintln!("{} iterations, checkpoint {}", outcome.log.len(), out.display());
        }
        Command::Finetune { mentions, dict, checkpoint, out, log, common } => {
            let cfg = run_config(&common)?;
            let mentions = load_mentions(&need(&mentions, &cfg, "train_mentions")?)?;
            let ontology = load_dictionary(&need(&dict, &cfg, "dictionary")?)?;
            let (model, _) = load_checkpoint(&need(&checkpoint, &cfg, "checkpoint")?)?;
            let outcome = finetune(&mentions, &ontology, model, &cfg.train()?)?;
            save_checkpoint(&out, &outcome.model, Some(&outcome.optimizer))?;
            outcome
                .log
                .write_csv(&log.unwrap_or_else(|| with_suffix(&out, ".log.csv")))?;
            cfg.write_resolved(&with_suffix(&out, ".config"))?;
            eprintln!("{} iterations, checkpoint {}", outcome.log.len(), out.display());
        }
        Command::Evaluate { checkpoint, dict, mentions, ks, out, common } => {
            let cfg = run_config(&common)?;
            let ckpt = need(&checkpoint, &cfg, "checkpoint")?;
            let (model, _) = load_checkpoint(&ckpt)?;
            let ontology = load_dictionary(&need(&dict, &cfg, "dictionary")?)?;
            let mentions = load_mentions(&need(&mentions, &cfg, "test_mentions")?)?;
            let index = build_index(&model, &ontology, cfg.index_batch_size()?)?;
            let report = evaluate(&index, &mentions, &model, &ks)?;
            println!("acc@1={} acc@5={}", report.acc_at_1, report.acc_at_5);
            let json = out.unwrap_or_else(|| with_suffix(&ckpt, ".eval.json"));
            write_text(&json, &(report.to_json() + "\n"))?;
        }
        Command::Query { checkpoint, dict, mention, k, common } => {
            let cfg = run_config(&common)?;
            let (model, _) = load_checkpoint(&need(&checkpoint, &cfg, "checkpoint")?)?;
            let ontology = load_dictionary(&need(&dict, &cfg, "dictionary")?)?;
            let index = build_index(&model, &ontology, cfg.index_batch_size()?)?;
            let pred = topk(&index, &mention, &model, k)?;
            for (rank, c) in pred.ranked.iter().enumerate() {
                println!("{}\t{}\t{}\t{}", rank + 1, c.cui, c.name, c.similarity);
            }
        }
        Command::Embed { checkpoint, dict, out, common } => {
            let cfg = run_config(&common)?;
            let (model, _) = load_checkpoint(&need(&checkpoint, &cfg, "checkpoint")?)?;
            let ontology = load_dictionary(&need(&dict, &cfg, "dictionary")?)?;
            let index = build_index(&model, &ontology, cfg.index_batch_size()?)?;
            export_embeddings(&index, &out)?;
        }
        Command::Synth { out, common } => {
            let cfg = run_config(&common)?;
            let data = generate(&cfg.synth()?)?;
            fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            data.dictionary.write(&out.join("dictionary.tsv"))?;
            write_mentions(&data.train_mentions, &out.join("train_mentions.tsv"))?;
            write_mentions(&data.test_mentions, &out.join("test_mentions.tsv"))?;
            cfg.write_resolved(&out.join("synth.config"))?;
            eprintln!(
                "{} dictionary names, {} train / {} test mentions in {}",
                data.dictionary.len(),
                data.train_mentions.len(),
                data.test_mentions.len(),
                out.display()
            );
        }
        Command::LossCompare { pairs, dict, mentions, out, common } => {
            let cfg = run_config(&common)?;
            let pairs_path = need(&pairs, &cfg, "pairs")?;
            let dict_path = need(&dict, &cfg, "dictionary")?;
            let mentions_path = need(&mentions, &cfg, "test_mentions")?;
            let pair_list = read_pairs(&pairs_path)?;
            let ontology = load_dictionary(&dict_path)?;
            let mention_set = load_mentions(&mentions_path)?;
            let train = cfg.train()?;
            let (baseline, rows) = loss_compare(
                &pair_list,
                &ontology,
                &mention_set,
                &cfg.encoder()?,
                &train,
                cfg.index_batch_size()?,
            )?;
            let mut table = format!(
                "# seed={} pairs={} dictionary={} mentions={} epochs={} max_iterations={} mining={}\n",
                cfg.seed(),
                pairs_path.display(),
                dict_path.display(),
                mentions_path.display(),
                train.epochs,
                train.max_iterations.unwrap_or(0),
                if train.mining_enabled { "on" } else { "off" },
            );
            table.push_str(&format!(
                "# untrained acc@1={} acc@5={}\n# kind\tfinal_loss\tacc@1\tacc@5\n",
                baseline.acc_at_1, baseline.acc_at_5
            ));
            for r in &rows {
                table.push_str(&format!(
                    "{}\t{:.6}\t{:.4}\t{:.4}\n",
                    r.kind, r.final_loss, r.acc_at_1, r.acc_at_5
                ));
            }
            print!("{table}");
            if let Some(out) = out {
                write_text(&out, &table)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
