use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cloneguard_core::cache::IndexStore;
use cloneguard_core::ingest::ingest_directory;
use cloneguard_core::report::{render_html, sample_pairs, scan_attribution, ReportSource};
use cloneguard_core::stackexchange::ingest_stackexchange_dump;
use cloneguard_core::{CloneReport, CompatibilityMatrix, Corpus};
use cloneguard_service::{ApprenticeClient, ApprenticeState, LoadParams, ManagerClient, ManagerState, ReportRequest};
use tokio::net::TcpListener;

use crate::args::{
    AttributionArgs, BenchArgs, Cli, Command, DispatchArgs, IngestArgs, PushArgs, QueryArgs, RegisterArgs, SampleArgs,
    ServeArgs,
};
use crate::pipeline::{self, detection_config, has_conflicts, Settings};
use crate::Outcome;

/// License of StackExchange posts unless `--default-license` says otherwise.
const STACKEXCHANGE_LICENSE: &str = "CC-BY-SA-3.0";

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Query(a) => query(a),
        Command::Serve(a) => runtime()?.block_on(serve(a)),
        Command::Bench(a) => bench(a),
        Command::Sample(a) => sample(a),
        Command::Attribution(a) => attribution(a),
        Command::Push(a) => runtime()?.block_on(push(a)),
        Command::Register(a) => runtime()?.block_on(register(a)),
        Command::Dispatch(a) => runtime()?.block_on(dispatch(a)),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_corpus(corpus: &Corpus, out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    corpus.write_jsonl(BufWriter::new(file))?;
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<Outcome> {
    let detect = crate::args::DetectArgs {
        theta: cloneguard_core::engine::DEFAULT_THETA,
        min_tokens: a.min_tokens,
        denominator: crate::args::DenominatorArg::Max,
        keep_self_pairs: false,
    };
    let mut settings = Settings::new(&detect, &a.source_args, None, None)?;
    settings.ingest.corpus_id = a.corpus_id.clone();
    if a.stackexchange && settings.ingest.default_license.is_none() {
        settings.ingest.default_license = Some(STACKEXCHANGE_LICENSE.to_string());
    }
    if !a.source.exists() {
        bail!("{} does not exist", a.source.display());
    }
    let ingested = if a.stackexchange {
        let file = File::open(&a.source).with_context(|| format!("opening {}", a.source.display()))?;
        ingest_stackexchange_dump(BufReader::new(file), &a.tag, &settings.ingest, &settings.rules)?
    } else {
        ingest_directory(&a.source, &settings.ingest, &settings.rules)?
    };
    write_corpus(&ingested.corpus, &a.out)?;
    for s in &ingested.log.skipped {
        eprintln!("skipped {}: {}", s.source, s.reason);
    }
    println!(
        "{}",
        serde_json::json!({
            "corpus_id": ingested.corpus.corpus_id,
            "content_hash": ingested.corpus.content_hash,
            "blocks": ingested.corpus.len(),
            "files_seen": ingested.log.files_seen,
            "rows_seen": ingested.log.rows_seen,
            "malformed_rows": ingested.log.malformed_rows,
            "skipped": ingested.log.skipped.len(),
            "out": a.out.display().to_string(),
        })
    );
    Ok(Outcome::Clean)
}

fn open_store(path: Option<&std::path::PathBuf>) -> Result<Option<IndexStore>> {
    path.map(IndexStore::open).transpose().map_err(Into::into)
}

fn write_report(dir: &Path, report: &CloneReport) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    std::fs::write(dir.join("report.html"), render_html(report))?;
    Ok(())
}

fn query(a: QueryArgs) -> Result<Outcome> {
    let settings = Settings::new(&a.detect, &a.source_args, a.matrix.as_ref(), a.store.as_ref())?;
    let store = open_store(a.store.as_ref())?;
    let run = pipeline::run_local(&a.corpus, &a.query, &settings, store.as_ref())?;
    if let Some(dir) = &a.report {
        let source = ReportSource {
            apprentice_id: "local".to_string(),
            base_url: None,
            corpus_id: Some(run.corpus.corpus.corpus_id.clone()),
            corpus_hash: Some(run.corpus.corpus.content_hash.clone()),
        };
        let query_set_id = format!("qs-{}", &run.query_hash[..16.min(run.query_hash.len())]);
        let report = CloneReport::new(query_set_id, vec![source], run.pairs.clone(), settings.run_config.clone(), Vec::new());
        write_report(dir, &report)?;
    }
    pipeline::write_query_output(BufWriter::new(std::io::stdout().lock()), &settings.run_config, &run.pairs)?;
    Ok(if has_conflicts(&run.pairs) {
        Outcome::Conflicts
    } else {
        Outcome::Clean
    })
}

fn bench(a: BenchArgs) -> Result<Outcome> {
    let settings = Settings::new(&a.detect, &a.source_args, a.matrix.as_ref(), a.store.as_ref())?;
    let tmp;
    let root = match &a.store {
        Some(p) => p.clone(),
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().to_path_buf()
        }
    };
    let summary = pipeline::bench(&a.corpus, &a.query, &settings, &root, a.runs)?;
    for (i, (c, w)) in summary.cold_ms.iter().zip(&summary.warm_ms).enumerate() {
        println!("run {}: cold {c:.1} ms, warm {w:.1} ms", i + 1);
    }
    println!(
        "mean: cold {:.1} ms, warm {:.1} ms, warm/cold {:.3}, warm hits {}/{}",
        summary.cold_mean_ms, summary.warm_mean_ms, summary.ratio, summary.warm_hits, summary.runs
    );
    println!("{}", serde_json::to_string(&summary)?);
    Ok(Outcome::Clean)
}

fn sample(a: SampleArgs) -> Result<Outcome> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report = CloneReport::from_json(&text)?;
    let s = sample_pairs(&report.pairs, a.n, a.size_class.map(Into::into), a.seed)?;
    if s.short {
        eprintln!("population of {} is smaller than {}; returning all of it", s.population, a.n);
    }
    print_json(&s)?;
    Ok(Outcome::Clean)
}

fn attribution(a: AttributionArgs) -> Result<Outcome> {
    let file = File::open(&a.corpus).with_context(|| format!("opening {}", a.corpus.display()))?;
    let corpus = Corpus::read_jsonl(BufReader::new(file), "corpus")?;
    let matches = scan_attribution(&corpus.blocks, &a.patterns)?;
    print_json(&matches)?;
    Ok(Outcome::Clean)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

async fn serve(a: ServeArgs) -> Result<Outcome> {
    let listener = TcpListener::bind(a.bind)
        .await
        .with_context(|| format!("binding {}", a.bind))?;
    let addr = listener.local_addr()?;
    let router = if a.apprentice {
        let matrix = match &a.matrix {
            Some(p) => CompatibilityMatrix::load(p)?,
            None => CompatibilityMatrix::default(),
        };
        let store = open_store(a.store.as_ref())?;
        let id = a.id.clone().unwrap_or_else(|| format!("apprentice-{}", addr.port()));
        let state = Arc::new(ApprenticeState::new(id, store, matrix));
        if let Some(path) = &a.corpus {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let corpus = Corpus::read_jsonl(BufReader::new(file), state.id())?;
            let params = LoadParams::from_config(&detection_config(&a.detect)?);
            let s = state.clone();
            tokio::task::spawn_blocking(move || s.load_corpus(corpus, &params)).await??;
        }
        cloneguard_service::apprentice::router(state)
    } else {
        let state = ManagerState::open(&a.data_dir)?.with_chunk_size(a.chunk_size);
        cloneguard_service::manager::router(Arc::new(state))
    };
    println!("listening on http://{addr}");
    std::io::stdout().flush()?;
    cloneguard_service::serve(listener, router, shutdown_signal()).await?;
    Ok(Outcome::Clean)
}

async fn push(a: PushArgs) -> Result<Outcome> {
    let file = File::open(&a.corpus).with_context(|| format!("opening {}", a.corpus.display()))?;
    let corpus = Corpus::read_jsonl(BufReader::new(file), "corpus")?;
    let params = LoadParams::from_config(&detection_config(&a.detect)?);
    let status = ApprenticeClient::new(&a.apprentice).load_corpus(&corpus, &params).await?;
    print_json(&status)?;
    Ok(Outcome::Clean)
}

async fn register(a: RegisterArgs) -> Result<Outcome> {
    let record = ManagerClient::new(&a.manager).register(&a.apprentice).await?;
    print_json(&record)?;
    Ok(Outcome::Clean)
}

async fn dispatch(a: DispatchArgs) -> Result<Outcome> {
    let settings = Settings::new(&a.detect, &a.source_args, None, None)?;
    let query = pipeline::load_corpus(&a.query, &settings)?;
    let client = ManagerClient::new(&a.manager);
    let qs = client.create_query_set(&query).await?;
    let report = client
        .create_report(&ReportRequest {
            query_set_id: qs.query_set_id,
            config: settings.detection.clone(),
            chunk_size: a.chunk_size,
        })
        .await?;
    if let Some(dir) = &a.report {
        write_report(dir, &report)?;
    }
    for failure in &report.failures {
        eprintln!("apprentice failed: {failure}");
    }
    let mut run_config = report.run_config.clone();
    run_config.manager = Some(a.manager.clone());
    pipeline::write_query_output(BufWriter::new(std::io::stdout().lock()), &run_config, &report.pairs)?;
    Ok(if has_conflicts(&report.pairs) {
        Outcome::Conflicts
    } else {
        Outcome::Clean
    })
}
