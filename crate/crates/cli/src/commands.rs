use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use compound_kge::checkpoint::Checkpoint;
use compound_kge::diagnostics::{
    diagnose_selected, export_entity_embeddings, export_relation_histograms, load_entity_labels, lookup_name,
    write_histograms_csv, RelationDiagnostics,
};
use compound_kge::training::LogRow;
use compound_kge::{
    categorize_relations, complex_triple_fraction, evaluate, load_dataset, train, EvalOptions, EvalReport,
    FilterIndex, KgeError, KgeModel, RelationCategory, Split, TripleStore,
};

use crate::args::{CategorizeArgs, Cli, Command, DiagnoseArgs, EvalArgs};
use crate::config::{ExportOptions, RunConfig};
use crate::error::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const RUN_CONFIG: &str = "run_config.json";
pub const THREADS_ENV: &str = "COMPOUND_KGE_THREADS";

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| CliError::io("writing output", e))?
    };
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub best_step: u64,
    pub best_valid_mrr: Option<f64>,
    pub final_loss: Option<f64>,
    pub valid_report: Option<EvalReport>,
}

fn eval_options(deterministic: bool) -> EvalOptions {
    EvalOptions {
        parallel: !deterministic,
        ..EvalOptions::default()
    }
}

pub fn run_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainSummary> {
    say!(out, "# resolved configuration");
    say!(out, "{}", cfg.to_json());
    let store = open_dataset(&cfg.data)?;
    say!(
        out,
        "# dataset: {} entities, {} relations, {}/{}/{} triples",
        store.entity_count(),
        store.relation_count(),
        store.train.len(),
        store.valid.len(),
        store.test.len()
    );

    let mut progress = Vec::new();
    let outcome = train::<f32>(&store, &cfg.spec, &cfg.train, |row: &LogRow| {
        if let Some(mrr) = row.valid_mrr {
            progress.push(format!("step {:>8}  loss {:.6}  valid MRR {:.4}", row.step, row.loss, mrr));
            log::info!("step {} loss {:.6} valid MRR {:.4}", row.step, row.loss, mrr);
        }
    })?;
    for line in progress {
        say!(out, "{line}");
    }

    if let Some(dir) = &cfg.save {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        let config = serde_json::to_value(cfg).expect("run config serializes");
        Checkpoint::new(&outcome.best, &store, outcome.best_step, None, Some(config.clone()))?
            .save(&dir.join(BEST_CHECKPOINT))?;
        Checkpoint::new(&outcome.last, &store, outcome.steps, Some(&outcome.rng), Some(config))?
            .save(&dir.join(LAST_CHECKPOINT))?;
        outcome.log.write_csv(&dir.join(TRAIN_LOG))?;
        cfg.save(&dir.join(RUN_CONFIG))?;
        say!(out, "# wrote {} and {} to {}", BEST_CHECKPOINT, LAST_CHECKPOINT, dir.display());
    }

    let valid_report = if store.valid.is_empty() {
        None
    } else {
        let categories = categorize_relations(&store, cfg.eta)?;
        let filter = FilterIndex::build(&store);
        let report = evaluate(
            &outcome.best,
            &store,
            Split::Valid,
            &categories,
            &filter,
            &eval_options(cfg.train.deterministic),
        )?;
        say!(out, "# best model (step {}) on the validation split", outcome.best_step);
        write!(out, "{}", report.to_table()).map_err(|e| CliError::io("writing output", e))?;
        Some(report)
    };

    export(&outcome.best, &store.entities.names().to_vec(), &store.relations.names().to_vec(), &cfg.export, None)?;

    Ok(TrainSummary {
        steps: outcome.steps,
        best_step: outcome.best_step,
        best_valid_mrr: outcome.best_valid_mrr,
        final_loss: outcome.log.rows.last().map(|r| r.loss),
        valid_report,
    })
}

pub fn run_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<EvalReport> {
    let ckpt = open_checkpoint(&args.checkpoint)?;
    let store = open_dataset(&args.data)?;
    ckpt.verify_dataset(&store)?;
    let categories = categorize_relations(&store, args.eta).map_err(CliError::usage)?;
    let filter = FilterIndex::build(&store);
    let report = evaluate(&ckpt.model, &store, args.split, &categories, &filter, &EvalOptions::default())?;
    write!(out, "{}", report.to_table()).map_err(|e| CliError::io("writing output", e))?;
    if let Some(path) = &args.out {
        fs::write(path, report.to_json()?).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    }
    Ok(report)
}

pub fn run_categorize(args: &CategorizeArgs, out: &mut dyn Write) -> Result<(Vec<RelationCategory>, f64)> {
    let store = open_dataset(&args.data)?;
    let categories = categorize_relations(&store, args.eta).map_err(CliError::usage)?;
    let fraction = complex_triple_fraction(&store, &categories);
    let width = store.relations.names().iter().map(|n| n.len()).max().unwrap_or(8).max(8);
    say!(out, "{:<width$}  {:>10}  {:>10}  category", "relation", "hpt", "tph");
    for c in &categories {
        let note = if c.in_training { "" } else { "  (absent from train)" };
        say!(
            out,
            "{:<width$}  {:>10.4}  {:>10.4}  {}{}",
            store.relations.name(c.relation),
            c.hpt,
            c.tph,
            c.category,
            note
        );
    }
    say!(out, "complex-relation triple fraction: {fraction:.4}");
    Ok((categories, fraction))
}

pub fn run_diagnose(args: &DiagnoseArgs, out: &mut dyn Write) -> Result<Vec<RelationDiagnostics>> {
    let ckpt = open_checkpoint(&args.checkpoint)?;
    let names = &ckpt.header.relation_names;
    let ids = if args.all {
        (0..names.len() as u32).collect::<Vec<_>>()
    } else {
        args.relation
            .iter()
            .map(|n| lookup_name(names, "relation", n))
            .collect::<compound_kge::Result<Vec<_>>>()?
    };
    let rows = diagnose_selected(&ckpt.model, &ids, args.scale_tolerance)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4e}"));
    let width = names.iter().map(|n| n.len()).max().unwrap_or(8).max(8);
    say!(
        out,
        "{:<width$}  {:>9}  {:>11}  {:>11}  {:>8}  best inverse",
        "relation",
        "singular",
        "min |det|",
        "symmetry",
        "skipped"
    );
    for d in &rows {
        let inverse = d.best_inverse.as_ref().map_or_else(
            || "-".to_string(),
            |p| format!("{} ({})", names[p.partner as usize], fmt(p.residual.value)),
        );
        say!(
            out,
            "{:<width$}  {:>9.4}  {:>11.4e}  {:>11}  {:>8}  {}",
            names[d.relation as usize],
            d.singularity_fraction,
            d.block_det_min,
            fmt(d.symmetry_residual.value),
            d.symmetry_residual.singular_blocks,
            inverse
        );
    }
    let export_opts = ExportOptions {
        histograms: args.export_histograms.clone(),
        embeddings: args.export_embeddings.clone(),
        labels: args.labels.clone(),
        bins: args.bins,
    };
    export(&ckpt.model, &ckpt.header.entity_names, names, &export_opts, Some(&ids))?;
    Ok(rows)
}

fn with_path(path: &Path, e: KgeError) -> CliError {
    match e {
        KgeError::Io(io) => CliError::io(format!("reading {}", path.display()), io),
        other => other.into(),
    }
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| with_path(path, e))
}

fn open_dataset(path: &Path) -> Result<TripleStore> {
    load_dataset(path).map_err(|e| with_path(path, e))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// File name used for one relation's histogram CSV.
pub fn histogram_file(dir: &Path, id: u32, name: &str) -> PathBuf {
    dir.join(format!("{id}_{}.csv", sanitize(name)))
}

fn export(
    model: &KgeModel<f32>,
    entity_names: &[String],
    relation_names: &[String],
    opts: &ExportOptions,
    relations: Option<&[u32]>,
) -> Result<()> {
    if let Some(dir) = &opts.histograms {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        let all: Vec<u32> = (0..relation_names.len() as u32).collect();
        for &id in relations.unwrap_or(&all) {
            let rows = export_relation_histograms(model, id, opts.bins).map_err(CliError::usage)?;
            write_histograms_csv(&rows, &histogram_file(dir, id, &relation_names[id as usize]))?;
        }
    }
    if let Some(path) = &opts.embeddings {
        let labels = opts.labels.as_deref().map(load_entity_labels).transpose()?;
        export_entity_embeddings(model, entity_names, labels.as_ref(), path)?;
    } else if opts.labels.is_some() {
        log::warn!("--labels ignored without --export-embeddings");
    }
    Ok(())
}

/// Sizes the global thread pool from `COMPOUND_KGE_THREADS` when set.
pub fn configure_threads_from_env() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a thread count, got `{value}`")))?;
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::warn!("thread pool already configured: {e}");
    }
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(args) => {
            let cfg = RunConfig::from_args(args)?;
            run_train(&cfg, out).map(|_| ())
        }
        Command::Eval(args) => run_eval(args, out).map(|_| ()),
        Command::Categorize(args) => run_categorize(args, out).map(|_| ()),
        Command::Diagnose(args) => run_diagnose(args, out).map(|_| ()),
    }
}
