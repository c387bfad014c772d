//! One function per subcommand. Each loads what it needs, runs the core
//! pipeline, writes artifacts under `output_dir`, and prints a short
//! summary line.

use std::path::{Path, PathBuf};

use glassbox_core::Result as CoreResult;
use glassbox_core::{
    accuracy, auc, build_merged_report, build_report, build_vocabulary, enumerate_regions,
    enumerate_regions_from_forwards, f1, fit, format_metric, forward_dataset, histogram_csv,
    history_csv, load_checkpoint, load_corpus, load_merged, merge_regions, merge_report_csv,
    region_table_csv, report_json, report_markdown, save_checkpoint, save_merged,
    select_distance_threshold, select_lambda, split_dataset, sweep_complexity, sweep_csv,
    sweep_lambda, Dataset, Error, InterpretationReport, LabeledText, MergeConfig, TextCnnModel,
    Vocabulary,
};

use crate::config::{RunConfig, Split};
use crate::CliError;

fn data(e: Error) -> CliError {
    CliError::Data(e)
}

fn write_artifact(path: &Path, contents: &str) -> CoreResult<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_output_dir(cfg: &RunConfig) -> CoreResult<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| Error::Io {
        path: cfg.output_dir.clone(),
        source,
    })
}

fn load_records(cfg: &RunConfig) -> CoreResult<Vec<LabeledText>> {
    load_corpus(&cfg.corpus, cfg.corpus_format)
}

/// Train/val/test split of an encoded dataset: `train_fraction` of the
/// corpus trains, and `val_fraction` of the holdout validates (the rest
/// tests). The second shuffle derives its seed from the first.
fn three_way_split(ds: &Dataset, cfg: &RunConfig) -> CoreResult<(Dataset, Dataset, Dataset)> {
    let (train, holdout) = split_dataset(ds, cfg.train_fraction, cfg.seed)?;
    let (val, test) = split_dataset(&holdout, cfg.val_fraction, cfg.seed.wrapping_add(1))?;
    Ok((train, val, test))
}

fn pick_split(ds: &Dataset, cfg: &RunConfig, split: Split) -> CoreResult<Dataset> {
    if split == Split::All {
        return Ok(ds.clone());
    }
    let (train, val, test) = three_way_split(ds, cfg)?;
    Ok(match split {
        Split::Train => train,
        Split::Val => val,
        Split::Test => test,
        Split::All => unreachable!(),
    })
}

/// Corpus → vocabulary → encoded splits, for commands that train models.
fn prepare_training_data(cfg: &RunConfig) -> CoreResult<(Vocabulary, Dataset, Dataset, Dataset)> {
    let records = load_records(cfg)?;
    let vocab = build_vocabulary(records.iter().map(|r| r.tokens.as_slice()), cfg.min_freq);
    let ds = Dataset::encode(&records, &vocab, cfg.model.max_len);
    let (train, val, test) = three_way_split(&ds, cfg)?;
    Ok((vocab, train, val, test))
}

/// Checkpoint + corpus re-encoded with the checkpoint's own vocabulary
/// and max_len, so downstream commands see exactly what training saw.
fn load_model_and_dataset(cfg: &RunConfig) -> CoreResult<(TextCnnModel, Vocabulary, Dataset)> {
    let (model, vocab) = load_checkpoint(&cfg.checkpoint_path())?;
    let records = load_records(cfg)?;
    let ds = Dataset::encode(&records, &vocab, model.config.max_len);
    Ok((model, vocab, ds))
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_output_dir(cfg).map_err(data)?;
    let (vocab, train_ds, val_ds, _test) = prepare_training_data(cfg).map_err(data)?;
    let model = TextCnnModel::init(cfg.model.clone(), vocab.size()).map_err(data)?;
    let (best, history) = fit(&model, &train_ds, &val_ds, &cfg.train).map_err(data)?;

    let ckpt = cfg.checkpoint_path();
    save_checkpoint(&ckpt, &best, &vocab).map_err(data)?;
    let history_path = cfg.output_dir.join("history.csv");
    write_artifact(&history_path, &history_csv(&history)).map_err(data)?;

    let best_record = &history.records[history.best_epoch - 1];
    println!(
        "trained {} epochs on {} documents (best epoch {}, val accuracy {:.6})",
        history.records.len(),
        train_ds.len(),
        history.best_epoch,
        best_record.val_accuracy,
    );
    println!("wrote {} and {}", ckpt.display(), history_path.display());
    Ok(())
}

pub fn sweep_complexity_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_output_dir(cfg).map_err(data)?;
    let (vocab, train_ds, val_ds, test_ds) = prepare_training_data(cfg).map_err(data)?;
    let result = sweep_complexity(
        &cfg.nf_values,
        &cfg.nh_values,
        &cfg.model,
        &cfg.train,
        vocab.size(),
        &train_ds,
        &val_ds,
        &test_ds,
    )
    .map_err(data)?;
    let path = cfg.output_dir.join("sweep_complexity.csv");
    write_artifact(&path, &sweep_csv(&result)).map_err(data)?;
    println!(
        "swept {} cells; wrote {}",
        result.cells.len(),
        path.display()
    );
    Ok(())
}

pub fn sweep_lambda_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_output_dir(cfg).map_err(data)?;
    let (vocab, train_ds, val_ds, test_ds) = prepare_training_data(cfg).map_err(data)?;
    let result = sweep_lambda(
        &cfg.lambda_values,
        cfg.train.l1_placement,
        &cfg.model,
        &cfg.train,
        vocab.size(),
        &train_ds,
        &val_ds,
        &test_ds,
    )
    .map_err(data)?;
    let path = cfg.output_dir.join("sweep_lambda.csv");
    write_artifact(&path, &sweep_csv(&result)).map_err(data)?;
    let selected = select_lambda(&result, cfg.max_regions).map_err(data)?;
    println!(
        "swept {} lambda values; selected lambda = {} (region budget {}); wrote {}",
        result.cells.len(),
        selected,
        cfg.max_regions,
        path.display()
    );
    Ok(())
}

pub fn unwrap(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_output_dir(cfg).map_err(data)?;
    let (model, _vocab, ds) = load_model_and_dataset(cfg).map_err(data)?;
    let part = pick_split(&ds, cfg, cfg.unwrap_split).map_err(data)?;
    let forwards = forward_dataset(&model, &part).map_err(data)?;
    let regions = enumerate_regions_from_forwards(&model, &forwards);
    let thetas: Vec<Vec<f64>> = forwards.iter().map(|f| f.pooled.theta.clone()).collect();
    let csv = region_table_csv(&regions, &thetas, &part.labels()).map_err(data)?;
    let path = cfg.output_dir.join("region_table.csv");
    write_artifact(&path, &csv).map_err(data)?;
    println!(
        "{} regions ({} effective) over {} {} documents; wrote {}",
        regions.len(),
        glassbox_core::effective_region_count(&regions),
        part.len(),
        cfg.unwrap_split,
        path.display()
    );
    Ok(())
}

pub fn merge(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_output_dir(cfg).map_err(data)?;
    let (model, _vocab, ds) = load_model_and_dataset(cfg).map_err(data)?;
    let fit_ds = pick_split(&ds, cfg, cfg.merge_fit_split).map_err(data)?;
    let threshold = if cfg.distance_grid.is_empty() {
        cfg.merge.distance_threshold
    } else {
        let val_ds = pick_split(&ds, cfg, Split::Val).map_err(data)?;
        select_distance_threshold(&model, &fit_ds, &val_ds, &cfg.distance_grid, &cfg.merge)
            .map_err(data)?
    };
    let merge_cfg = MergeConfig {
        distance_threshold: threshold,
        ..cfg.merge.clone()
    };
    let merged = merge_regions(&model, &fit_ds, &merge_cfg).map_err(data)?;

    let merged_path = cfg.output_dir.join("merged.json");
    save_merged(&merged_path, &merged).map_err(data)?;
    let report_path = cfg.output_dir.join("merge_report.csv");
    write_artifact(&report_path, &merge_report_csv(&merged)).map_err(data)?;
    println!(
        "merged {} regions into {} at distance threshold {}; wrote {} and {}",
        merged.patterns.len(),
        merged.regions.len(),
        threshold,
        merged_path.display(),
        report_path.display()
    );
    Ok(())
}

fn write_report_artifacts(
    cfg: &RunConfig,
    report: &InterpretationReport,
) -> CoreResult<(PathBuf, PathBuf)> {
    let md_path = cfg.output_dir.join("report.md");
    write_artifact(&md_path, &report_markdown(report))?;
    let json_path = cfg.output_dir.join("report.json");
    write_artifact(&json_path, &report_json(report)?)?;
    for region in &report.regions {
        let hist_path = cfg
            .output_dir
            .join(format!("histogram_region_{}.csv", region.region_id));
        write_artifact(&hist_path, &histogram_csv(&region.histogram))?;
    }
    Ok((md_path, json_path))
}

pub fn explain(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_output_dir(cfg).map_err(data)?;
    let (model, _vocab, ds) = load_model_and_dataset(cfg).map_err(data)?;
    let part = pick_split(&ds, cfg, cfg.explain_split).map_err(data)?;

    // A previously merged model takes precedence: its report is the
    // simplified story the pipeline was run for.
    let merged_path = cfg.output_dir.join("merged.json");
    let (report, source) = if merged_path.exists() {
        let merged = load_merged(&merged_path).map_err(data)?;
        let report =
            build_merged_report(&model, &merged, &part, cfg.top_k_filters, cfg.top_k_samples)
                .map_err(data)?;
        (report, "merged regions")
    } else {
        let regions = enumerate_regions(&model, &part).map_err(data)?;
        let report = build_report(
            &model,
            &regions,
            &part,
            cfg.top_k_filters,
            cfg.top_k_samples,
        )
        .map_err(data)?;
        (report, "unwrapped regions")
    };
    let (md_path, json_path) = write_report_artifacts(cfg, &report).map_err(data)?;
    println!(
        "explained {} {} over {} {} documents; wrote {}, {}, and per-region histograms",
        report.regions.len(),
        source,
        part.len(),
        cfg.explain_split,
        md_path.display(),
        json_path.display()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, _vocab, ds) = load_model_and_dataset(cfg).map_err(data)?;
    let part = pick_split(&ds, cfg, cfg.eval_split).map_err(data)?;
    let forwards = forward_dataset(&model, &part).map_err(data)?;
    let scores: Vec<f64> = forwards.iter().map(|f| f.score()).collect();
    let labels = part.labels();
    let acc = accuracy(&scores, &labels, 0.5).map_err(data)?;
    let auc_value = auc(&scores, &labels);
    let f1_value = f1(&scores, &labels, 0.5).map_err(data)?;
    println!(
        "split={} n={} accuracy={:.6} auc={} f1={:.6}",
        cfg.eval_split,
        part.len(),
        acc,
        format_metric(auc_value),
        f1_value
    );
    Ok(())
}
