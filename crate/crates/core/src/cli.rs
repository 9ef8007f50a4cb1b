//! Command-line entry point.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grouping::group_labels;
use crate::labelsem::{
    build_label_matrix, filter_graph, merge_embeddings, retrofit, EmbeddingMatrix, KnowledgeGraph, RetrofitConfig,
    VISUAL_RELATIONS,
};
use crate::trainer::{evaluate, load_dataset, parse_metrics, synthetic_spec, Checkpoint, RunConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "semco", version, about = "Semi-supervised classification with label semantics and co-training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Retrofit two embedding sets to a filtered knowledge graph and merge them.
    BuildEmbeddings {
        #[arg(long)]
        glove: PathBuf,
        #[arg(long)]
        w2v: PathBuf,
        /// Tab-separated `relation<TAB>term<TAB>term[<TAB>weight]` edges.
        #[arg(long)]
        graph: PathBuf,
        /// Comma-separated relation whitelist.
        #[arg(long, value_delimiter = ',', default_values_t = VISUAL_RELATIONS.map(String::from))]
        relations: Vec<String>,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Group class labels by density clustering of their embeddings; prints JSON.
    Group {
        #[arg(long)]
        embeddings: PathBuf,
        /// One class label per line.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = crate::grouping::DEFAULT_EPS)]
        eps: f64,
    },
    /// Train a model; writes metrics.csv, summary.json and checkpoint.json.
    #[command(after_help = train_help())]
    Train {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config override `key=value`; repeatable, applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test error rate of a checkpoint's EMA weights.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset spec; defaults to the checkpoint's own dataset.
        #[arg(long)]
        data: Option<String>,
    },
    /// Per-class pseudo-labeling table from a metrics file.
    Stats {
        #[arg(long)]
        metrics: PathBuf,
        /// Comma-separated class names; all classes when omitted.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
    },
}

fn train_help() -> String {
    format!("Config keys and defaults:\n{}", RunConfig::describe_defaults())
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code: 0 success, 1 usage, 2 data, 3 numerical.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::BuildEmbeddings {
            glove,
            w2v,
            graph,
            relations,
            dim,
            iters,
            out: out_path,
        } => {
            let merged = build_embeddings(&glove, &w2v, &graph, &relations, dim, iters)?;
            merged.write(&out_path)?;
            writeln!(out, "vocab {} dim {}", merged.len(), merged.dim()).map_err(io_out)
        }
        Command::Group { embeddings, labels, eps } => {
            let json = group_json(&embeddings, &labels, eps)?;
            writeln!(out, "{}", serde_json::to_string(&json)?).map_err(io_out)
        }
        Command::Train {
            config,
            overrides,
            out: out_dir,
        } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let summary = Trainer::from_config(cfg)?.run_to_dir(&out_dir)?;
            writeln!(
                out,
                "steps {} final_test_error {} groups {}",
                summary.steps, summary.final_test_error, summary.num_groups
            )
            .map_err(io_out)
        }
        Command::Eval { checkpoint, data } => {
            let ck = Checkpoint::read(&checkpoint)?;
            let spec = data.unwrap_or_else(|| ck.config.dataset.clone());
            let dataset = load_dataset(&spec, &synthetic_spec(&ck.config))?;
            if dataset.class_names != ck.class_names {
                return Err(Error::Data(format!(
                    "dataset `{spec}` classes differ from the checkpoint's"
                )));
            }
            let err = evaluate(&ck.model, &dataset.test)?;
            writeln!(out, "{err}").map_err(io_out)
        }
        Command::Stats { metrics, classes } => write_stats(&metrics, &classes, out),
    }
}

/// filter → retrofit each source → merge.
pub fn build_embeddings(
    glove: &Path,
    w2v: &Path,
    graph: &Path,
    relations: &[String],
    dim: usize,
    iters: usize,
) -> Result<EmbeddingMatrix> {
    let a = EmbeddingMatrix::read(glove)?;
    let b = EmbeddingMatrix::read(w2v)?;
    let g = filter_graph(&KnowledgeGraph::read(graph)?, relations)?;
    let cfg = RetrofitConfig {
        max_iters: iters,
        ..RetrofitConfig::default()
    };
    merge_embeddings(&retrofit(&a, &g, &cfg)?, &retrofit(&b, &g, &cfg)?, dim)
}

#[derive(Debug, Serialize)]
pub struct GroupListing {
    pub eps: f64,
    pub groups: Vec<Vec<String>>,
}

/// Groups with members sorted; multi-member groups first, then by first member.
pub fn group_json(embeddings: &Path, labels: &Path, eps: f64) -> Result<GroupListing> {
    let text = std::fs::read_to_string(labels).map_err(|e| Error::io(labels, e))?;
    let names: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let m = build_label_matrix(&EmbeddingMatrix::read(embeddings)?, &names)?;
    let grouping = group_labels(&m, eps)?;
    let mut groups: Vec<Vec<String>> = grouping
        .members()
        .into_iter()
        .map(|g| {
            let mut v: Vec<String> = g.into_iter().map(|c| names[c].to_string()).collect();
            v.sort();
            v
        })
        .collect();
    groups.sort_by(|a, b| (a.len() == 1).cmp(&(b.len() == 1)).then_with(|| a.cmp(b)));
    Ok(GroupListing { eps, groups })
}

const STATS_METRICS: [&str; 4] = ["pl_accuracy_sc", "pl_ratio_sc", "pl_accuracy_oh", "pl_ratio_oh"];

fn write_stats(path: &Path, classes: &[String], out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_metrics(&text, path)?;
    let mut table: BTreeMap<(usize, String), [Option<f64>; 4]> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for r in rows.iter().filter(|r| !r.class.is_empty()) {
        let Some(col) = STATS_METRICS.iter().position(|m| *m == r.metric) else {
            continue;
        };
        if !classes.is_empty() && !classes.contains(&r.class) {
            continue;
        }
        if !order.contains(&r.class) {
            order.push(r.class.clone());
        }
        table.entry((r.epoch, r.class.clone())).or_default()[col] = r.value;
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let mut w = |s: String| writeln!(out, "{s}").map_err(io_out);
    w(format!("epoch\tclass\t{}", STATS_METRICS.join("\t")))?;
    let epochs: Vec<usize> = {
        let mut e: Vec<usize> = table.keys().map(|k| k.0).collect();
        e.dedup();
        e
    };
    for epoch in epochs {
        for class in &order {
            if let Some(vals) = table.get(&(epoch, class.clone())) {
                let cells: Vec<String> = vals.iter().map(|v| fmt(*v)).collect();
                w(format!("{epoch}\t{class}\t{}", cells.join("\t")))?;
            }
        }
    }
    Ok(())
}
