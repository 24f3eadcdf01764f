use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use biolinker::eval::{
    evaluate, load_dataset, measure_throughput, parse_dataset, transfer_matrix, Dataset, EvalReport, Throughput,
    TransferMatrix,
};
use biolinker::export::{export_training, to_jsonl, ExportOptions, ExportRecord};
use biolinker::index::AliasIndex;
use biolinker::kb::KbFormat;
use biolinker::{Backends, KnowledgeBase, LinkSettings, LinkTrace, Linker, PipelineConfig};
use serde_json::{json, Value};

use crate::CliError;

/// `<file>.meta.json` next to an output file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn config_echo(config: &PipelineConfig) -> Value {
    serde_json::to_value(config).expect("config is always serializable")
}

fn write_meta(path: &Path, config: &PipelineConfig, extra: Value) -> Result<(), CliError> {
    let mut meta = json!({ "config": config_echo(config) });
    if let (Some(m), Value::Object(extra)) = (meta.as_object_mut(), extra) {
        m.extend(extra);
    }
    write_file(&meta_path(path), pretty(&meta)?)
}

fn pretty(v: &impl serde::Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::data(e.to_string()))
}

fn load_kb(config: &PipelineConfig) -> Result<Option<KnowledgeBase>, CliError> {
    config
        .kb_path
        .as_ref()
        .map(|p| KnowledgeBase::load(p, KbFormat::from_path(p)).map_err(CliError::from))
        .transpose()
}

fn load_or_build_index(config: &PipelineConfig, backends: &Backends) -> Result<AliasIndex, CliError> {
    if let Some(path) = config.index_path.as_ref().filter(|p| p.exists()) {
        log::info!("loading index snapshot {}", path.display());
        return Ok(AliasIndex::load(path)?);
    }
    let kb = load_kb(config)?.ok_or_else(|| CliError::usage("need --kb or an existing --index snapshot"))?;
    let index = AliasIndex::build(&kb, backends.embedder.as_ref())?;
    if let Some(path) = &config.index_path {
        index.save(path)?;
    }
    Ok(index)
}

fn linker(config: &PipelineConfig) -> Result<(Linker, Backends), CliError> {
    let backends = Backends::from_config(config)?;
    let index = load_or_build_index(config, &backends)?;
    Ok((Linker::from_backends(index, &backends, LinkSettings::from(config)), backends))
}

fn dataset(config: &PipelineConfig) -> Result<Dataset, CliError> {
    let path = config.dataset_path.as_ref().ok_or_else(|| CliError::usage("need --dataset"))?;
    Ok(load_dataset(path)?)
}

/// Every mention failed at a backend: retrieval errored, or the
/// re-ranker never answered.
fn total_failure(traces: &[LinkTrace]) -> Option<String> {
    let failed = |t: &LinkTrace| t.error.is_some() || t.decision.llm_error.is_some();
    if traces.is_empty() || !traces.iter().all(failed) {
        return None;
    }
    let first = &traces[0];
    Some(format!(
        "all {} mentions failed; first error: {}",
        traces.len(),
        first.error.as_deref().or(first.decision.llm_error.as_deref()).unwrap_or("unknown")
    ))
}

pub struct IndexSummary {
    pub path: PathBuf,
    pub aliases: usize,
    pub dim: usize,
    /// Provider calls made by the mock embedder; `None` for real backends.
    pub embed_calls: Option<usize>,
}

pub fn cmd_index(config: &PipelineConfig, out: Option<&Path>) -> Result<IndexSummary, CliError> {
    let path = out
        .map(Path::to_path_buf)
        .or_else(|| config.index_path.clone())
        .ok_or_else(|| CliError::usage("index needs --out or --index"))?;
    let kb = load_kb(config)?.ok_or_else(|| CliError::usage("index needs --kb"))?;
    let backends = Backends::from_config(config)?;
    let index = AliasIndex::<f64>::build(&kb, backends.embedder.as_ref())?;
    index.save(&path)?;
    write_meta(&path, config, json!({ "aliases": index.len(), "dim": index.dim() }))?;
    Ok(IndexSummary {
        path,
        aliases: index.len(),
        dim: index.dim(),
        embed_calls: backends.mock_embedder.as_ref().map(|m| m.calls()),
    })
}

pub enum LinkInput {
    File(PathBuf),
    Stdin,
}

/// Writes traces as JSONL to `out` (stdout when `None`) and returns them.
pub fn cmd_link(config: &PipelineConfig, input: LinkInput, out: Option<&Path>) -> Result<Vec<LinkTrace>, CliError> {
    let ds = match input {
        LinkInput::File(p) => load_dataset(p)?,
        LinkInput::Stdin => parse_dataset(std::io::stdin().lock(), "<stdin>")?,
    };
    if ds.is_empty() {
        if let Some(out) = out {
            write_file(out, "")?;
            write_meta(out, config, json!({ "mentions": 0 }))?;
        }
        return Ok(Vec::new());
    }
    let (linker, _backends) = linker(config)?;
    let traces = linker.link_all(&ds.queries(), true);

    let mut body = String::new();
    for t in &traces {
        body.push_str(&serde_json::to_string(t).map_err(|e| CliError::data(e.to_string()))?);
        body.push('\n');
    }
    match out {
        Some(path) => {
            write_file(path, &body)?;
            write_meta(path, config, json!({ "mentions": traces.len(), "dataset_digest": ds.digest }))?;
        }
        None => {
            log::info!("effective config: {}", config_echo(config));
            std::io::stdout()
                .lock()
                .write_all(body.as_bytes())
                .map_err(|e| CliError::data(e.to_string()))?;
        }
    }
    if let Some(msg) = total_failure(&traces) {
        return Err(CliError::backend(msg));
    }
    Ok(traces)
}

pub struct Evaluation {
    pub report: EvalReport,
    pub throughput: Option<Throughput>,
    pub backends: Backends,
}

/// Accuracy pass (parallel) plus optional serial throughput pass. Writes
/// `report.json`, `report.txt` and `traces.jsonl` into `out_dir`.
pub fn cmd_evaluate(config: &PipelineConfig, out_dir: &Path, throughput: bool) -> Result<Evaluation, CliError> {
    let ds = dataset(config)?;
    let kb = load_kb(config)?;
    let (linker, backends) = linker(config)?;
    let run = evaluate(&linker, &ds, kb.as_ref())?;
    if let Some(msg) = total_failure(&run.traces) {
        return Err(CliError::backend(msg));
    }
    let mut report = run.report;
    report.config = config_echo(config);

    let tp = if throughput && !ds.is_empty() {
        let t = measure_throughput(&linker, &ds.queries(), config.throughput_warmup)?;
        report.throughput_qps = Some(t.qps);
        Some(t)
    } else {
        None
    };

    let mut traces = String::new();
    for t in &run.traces {
        traces.push_str(&serde_json::to_string(t).map_err(|e| CliError::data(e.to_string()))?);
        traces.push('\n');
    }
    let traces_path = out_dir.join("traces.jsonl");
    write_file(&traces_path, traces)?;
    write_meta(&traces_path, config, json!({ "dataset_digest": ds.digest }))?;
    write_file(&out_dir.join("report.json"), pretty(&report)?)?;
    let text = format!("{}\nconfig: {}\n", report.to_text_table(), config_echo(config));
    write_file(&out_dir.join("report.txt"), text)?;

    Ok(Evaluation {
        report,
        throughput: tp,
        backends,
    })
}

pub fn cmd_export_training(config: &PipelineConfig, out: &Path) -> Result<Vec<ExportRecord>, CliError> {
    let ds = dataset(config)?;
    let (linker, _backends) = linker(config)?;
    let opts = ExportOptions {
        seed: config.seed,
        shuffle: config.training_shuffle,
    };
    let records = export_training(&linker, &ds, &opts)?;
    write_file(out, to_jsonl(&records)?)?;
    let flagged: Vec<Value> = records
        .iter()
        .filter(|r| r.gold_not_retrieved)
        .map(|r| json!({ "mention_idx": r.mention_idx, "doc_id": r.doc_id }))
        .collect();
    write_meta(
        out,
        config,
        json!({ "samples": records.len(), "dataset_digest": ds.digest, "gold_not_retrieved": flagged }),
    )?;
    Ok(records)
}

/// `SOURCE:TARGET:PATH`. The path may itself contain colons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferRun {
    pub source: String,
    pub target: String,
    pub report: PathBuf,
}

impl FromStr for TransferRun {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, ':');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(src), Some(tgt), Some(path)) if !src.is_empty() && !tgt.is_empty() && !path.is_empty() => {
                Ok(TransferRun {
                    source: src.into(),
                    target: tgt.into(),
                    report: path.into(),
                })
            }
            _ => Err(CliError::usage(format!("expected SOURCE:TARGET:REPORT_JSON, got {s:?}"))),
        }
    }
}

pub fn cmd_transfer_matrix(config: &PipelineConfig, runs: &[TransferRun], out: &Path) -> Result<TransferMatrix, CliError> {
    let loaded = runs
        .iter()
        .map(|r| {
            let text = fs::read_to_string(&r.report)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", r.report.display())))?;
            let report: EvalReport = serde_json::from_str(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", r.report.display())))?;
            Ok((r.source.clone(), r.target.clone(), report))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let m = transfer_matrix(&loaded);

    let with_suffix = |suffix: &str| {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(suffix);
        out.with_file_name(name)
    };
    let acc = with_suffix(".acc.csv");
    write_file(&acc, m.acc_csv())?;
    write_file(&with_suffix(".delta.csv"), m.delta_csv())?;
    write_file(&with_suffix(".pvalue.csv"), m.p_value_csv())?;
    write_file(&with_suffix(".marker.csv"), m.marker_csv())?;
    let inputs: Vec<Value> = runs
        .iter()
        .map(|r| json!({ "source": r.source, "target": r.target, "report": r.report }))
        .collect();
    write_meta(&acc, config, json!({ "runs": inputs }))?;
    Ok(m)
}
