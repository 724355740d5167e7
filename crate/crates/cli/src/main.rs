//! `mpr`: ingest embeddings, evaluate retrieval, reproduce reference tables
//! and refine catalog captions.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{parse_k_list, pick, ConfigFile, ENV_ATTEMPTS, ENV_MODEL, ENV_TOKEN, ENV_URL};
use mpr_core::analysis::{AnalysisError, ResultsTable};
use mpr_core::caption::{
    audit_caption, build_prompt, read_catalog, request_captions, review_samples, summarize, write_audits,
    write_catalog, CaptionAudit, CaptionError, EndpointConfig, Vocabulary, DEFAULT_TOKEN_BUDGET,
};
use mpr_core::fixtures;
use mpr_core::metrics::{read_truth_csv, EvalReport, MetricsError, ProbeSet, DEFAULT_KS};
use mpr_core::reproduce::{bundled_reference, reproduce, Verdict};
use mpr_core::similarity::{rank, score_matrix, score_matrix_with_workers, SimilarityError, TopK};
use mpr_core::store::{l2_normalize, read_embeddings, validate, write_embeddings, Manifest, Side, StoreError};

#[derive(Parser)]
#[command(name = "mpr", version, about = "Multimodal product retrieval benchmark")]
struct Cli {
    /// key=value configuration file; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify and summarize embedding files.
    Ingest(IngestArgs),
    /// Rank a gallery for every probe and report Recall@K and CMC.
    Eval(EvalArgs),
    /// Rebuild the reference comparison tables and check them.
    Reproduce(ReproduceArgs),
    /// Generate captions through a chat endpoint and audit them.
    Caption(CaptionArgs),
    /// Write a seeded synthetic probe/gallery fixture.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    probes: Option<PathBuf>,
    #[arg(long)]
    gallery: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    probes: Option<PathBuf>,
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// CSV with a `probe_id,gallery_id` header.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Comma-separated K values [default: 1,3,5].
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Results CSV [default: the bundled reference results].
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit non-zero if any check fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct CaptionArgs {
    /// CSV or JSON-lines catalog.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    endpoint_url: Option<String>,
    #[arg(long)]
    endpoint_model: Option<String>,
    #[arg(long)]
    endpoint_attempts: Option<u32>,
    #[arg(long)]
    endpoint_backoff_ms: Option<u64>,
    #[arg(long)]
    endpoint_timeout_s: Option<u64>,
    #[arg(long)]
    token_budget: Option<usize>,
    /// Concurrent requests.
    #[arg(long)]
    workers: Option<usize>,
    /// BPE merges file [default: bundled CLIP vocabulary].
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Audit the catalog's existing captions without calling an endpoint.
    #[arg(long)]
    audit_only: bool,
    /// Size of each review sample.
    #[arg(long, default_value_t = 0)]
    review_sample: usize,
    /// Seeds of the review passes, comma-separated.
    #[arg(long, default_value = "1,2")]
    review_seeds: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    probes: usize,
    #[arg(long, default_value_t = 409)]
    gallery: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Per-component noise added to each probe's target before renormalizing.
    #[arg(long, default_value_t = 0.5)]
    noise: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn path_setting(flag: Option<PathBuf>, cfg: &ConfigFile, key: &str) -> Option<PathBuf> {
    flag.or_else(|| cfg.get(key).map(PathBuf::from))
}

fn required(flag: Option<PathBuf>, cfg: &ConfigFile, key: &str) -> Result<PathBuf> {
    let path = path_setting(flag, cfg, key).with_context(|| format!("--{key} is required"))?;
    if !path.exists() {
        bail!("{key} path {} does not exist", path.display());
    }
    Ok(path)
}

fn load(path: &Path) -> Result<(mpr_core::store::EmbeddingMatrix, Manifest)> {
    read_embeddings(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_ingest(args: IngestArgs, cfg: &ConfigFile) -> Result<()> {
    let probes = path_setting(args.probes, cfg, "probes");
    let gallery = path_setting(args.gallery, cfg, "gallery");
    if probes.is_none() && gallery.is_none() {
        bail!("give --probes and/or --gallery");
    }
    let mut dims = Vec::new();
    for path in [probes, gallery].into_iter().flatten() {
        let (m, manifest) = load(&path)?;
        let report = validate(&m);
        if !report.is_clean() {
            bail!("{} failed validation: {report}", path.display());
        }
        println!(
            "{}: {} {} rows x dim {} (model {}, checksum {})",
            path.display(),
            manifest.side,
            m.len(),
            m.dim(),
            manifest.model.name,
            &manifest.checksum[..12.min(manifest.checksum.len())]
        );
        dims.push(m.dim());
    }
    if let [p, g] = dims[..] {
        if p != g {
            return Err(SimilarityError::DimensionMismatch { probe: p, gallery: g }.into());
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, cfg: &ConfigFile) -> Result<()> {
    let probes_path = required(args.probes, cfg, "probes")?;
    let gallery_path = required(args.gallery, cfg, "gallery")?;
    let truth_path = required(args.truth, cfg, "truth")?;
    let out = path_setting(args.out, cfg, "out").context("--out is required")?;
    let ks = match args.k.as_deref().or(cfg.get("k")) {
        Some(s) => parse_k_list(s)?,
        None => DEFAULT_KS.to_vec(),
    };
    let workers = pick(args.workers, None, cfg.parsed("workers")?)?;

    let (probes, probe_manifest) = load(&probes_path)?;
    let (gallery, gallery_manifest) = load(&gallery_path)?;
    if probe_manifest.side != Side::Probe || gallery_manifest.side != Side::Gallery {
        eprintln!("warning: file sides are {} / {}", probe_manifest.side, gallery_manifest.side);
    }
    if probe_manifest.model != gallery_manifest.model {
        eprintln!(
            "warning: probe model {} differs from gallery model {}",
            probe_manifest.model.name, gallery_manifest.model.name
        );
    }
    if probes.dim() != gallery.dim() {
        return Err(SimilarityError::DimensionMismatch {
            probe: probes.dim(),
            gallery: gallery.dim(),
        }
        .into());
    }

    let file = fs::File::open(&truth_path).with_context(|| format!("opening {}", truth_path.display()))?;
    let pairs = read_truth_csv(file).with_context(|| format!("parsing {}", truth_path.display()))?;
    let truth = ProbeSet::new(pairs, gallery.ids())?;
    truth.check_total(probes.ids())?;

    let probes = l2_normalize(&probes)?;
    let gallery = l2_normalize(&gallery)?;
    let scores = match workers {
        Some(w) => score_matrix_with_workers(&probes, &gallery, w)?,
        None => score_matrix(&probes, &gallery)?,
    };
    let ranking = rank(&scores, TopK::All)?;
    let report = EvalReport::evaluate(probe_manifest.model.clone(), &ranking, &truth, &ks)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let json = serde_json::to_string_pretty(&report.to_json())? + "\n";
    fs::write(out.join("eval_report.json"), json)?;
    fs::write(
        out.join("eval_report.csv"),
        format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
    )?;

    println!("model {} | {} probes x {} gallery", report.model.name, report.n_probes, report.gallery_size);
    for (k, v) in &report.recall_at {
        println!("Recall@{k:<3} {v:.3}");
    }
    if let Some(d) = report.gap_delta {
        println!("Delta      {d:.3}");
    }
    Ok(())
}

fn cmd_reproduce(args: ReproduceArgs, cfg: &ConfigFile) -> Result<()> {
    let out = path_setting(args.out, cfg, "out").context("--out is required")?;
    let table = match path_setting(args.reference, cfg, "reference") {
        Some(path) => ResultsTable::from_csv_path(&path).with_context(|| format!("loading {}", path.display()))?,
        None => bundled_reference(),
    };
    let bundle = reproduce(&table);
    bundle
        .write(&out)
        .with_context(|| format!("writing reports to {}", out.display()))?;
    for w in &bundle.warnings {
        eprintln!("warning: {w}");
    }
    for t in &bundle.tables {
        if t.checks.is_empty() {
            println!("{:<40} {} rows", t.title, t.rows.len());
        } else {
            println!(
                "{:<40} {} rows, {}/{} checks pass",
                t.title,
                t.rows.len(),
                t.count(Verdict::Pass),
                t.checks.len()
            );
        }
    }
    let failed = bundle.count(Verdict::Fail);
    println!(
        "total: {} pass, {} fail, {} missing; reports in {}",
        bundle.count(Verdict::Pass),
        failed,
        bundle.count(Verdict::Missing),
        out.display()
    );
    if args.strict && failed > 0 {
        bail!("{failed} checks failed");
    }
    Ok(())
}

fn endpoint_config(args: &CaptionArgs, cfg: &ConfigFile) -> Result<EndpointConfig> {
    let url: Option<String> = pick(args.endpoint_url.clone(), Some(ENV_URL), cfg.parsed("endpoint_url")?)?;
    let url = url.context("no endpoint configured: pass --endpoint-url, set MPR_ENDPOINT_URL or endpoint_url")?;
    let mut ec = EndpointConfig::new(url);
    ec.token = pick(None, Some(ENV_TOKEN), cfg.parsed("endpoint_token")?)?;
    if let Some(m) = pick(args.endpoint_model.clone(), Some(ENV_MODEL), cfg.parsed("endpoint_model")?)? {
        ec.model = m;
    }
    if let Some(a) = pick(args.endpoint_attempts, Some(ENV_ATTEMPTS), cfg.parsed("endpoint_attempts")?)? {
        ec.max_attempts = a;
    }
    if let Some(ms) = pick(args.endpoint_backoff_ms, None, cfg.parsed("endpoint_backoff_ms")?)? {
        ec.backoff = Duration::from_millis(ms);
    }
    if let Some(s) = pick(args.endpoint_timeout_s, None, cfg.parsed("endpoint_timeout_s")?)? {
        ec.timeout = Duration::from_secs(s);
    }
    if let Some(w) = pick(args.workers, None, cfg.parsed("workers")?)? {
        ec.concurrency = w;
    }
    Ok(ec)
}

fn catalog_output_name(catalog: &Path) -> String {
    let ext = catalog.extension().and_then(|e| e.to_str()).unwrap_or("csv");
    format!("captions.{ext}")
}

fn cmd_caption(args: CaptionArgs, cfg: &ConfigFile) -> Result<()> {
    let catalog_path = required(args.catalog.clone(), cfg, "catalog")?;
    let out = path_setting(args.out.clone(), cfg, "out").context("--out is required")?;
    let budget = pick(args.token_budget, None, cfg.parsed("token_budget")?)?.unwrap_or(DEFAULT_TOKEN_BUDGET);
    let vocab = match path_setting(args.vocab.clone(), cfg, "vocab") {
        Some(p) => Vocabulary::from_file(&p)?,
        None => Vocabulary::bundled(),
    };
    let mut records = read_catalog(&catalog_path)?;
    let metadata = records
        .iter()
        .map(|r| r.to_metadata())
        .collect::<Result<Vec<_>, _>>()?;

    let mut failures = Vec::new();
    if !args.audit_only {
        let endpoint = endpoint_config(&args, cfg)?;
        let jobs = metadata
            .iter()
            .map(|m| build_prompt(m, budget))
            .collect::<Result<Vec<_>, _>>()?;
        let results = request_captions(&jobs, &endpoint);
        let unreachable = results
            .iter()
            .filter(|r| matches!(r, Err(CaptionError::EndpointUnreachable(_))))
            .count();
        for (record, result) in records.iter_mut().zip(results) {
            match result {
                Ok(caption) => record.caption = Some(caption),
                Err(e) => {
                    record.caption = None;
                    failures.push(serde_json::json!({"sku_id": record.sku_id, "error": e.to_string()}));
                }
            }
        }
        if !records.is_empty() && unreachable == records.len() {
            bail!(CaptionError::EndpointUnreachable(format!(
                "all {} requests to {} failed",
                records.len(),
                endpoint.url
            )));
        }
    }

    let audits: Vec<CaptionAudit> = records
        .iter()
        .zip(&metadata)
        .filter_map(|(r, m)| r.caption.as_deref().map(|c| audit_caption(c, m, budget, &vocab)))
        .collect();

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_catalog(&out.join(catalog_output_name(&catalog_path)), &records)?;
    write_audits(&out.join("audit.jsonl"), &audits)?;
    if !failures.is_empty() {
        let lines: Vec<String> = failures.iter().map(|f| f.to_string()).collect();
        fs::write(out.join("failures.jsonl"), lines.join("\n") + "\n")?;
    }
    if args.review_sample > 0 {
        let seeds = args
            .review_seeds
            .split(',')
            .map(|s| s.trim().parse::<u64>().with_context(|| format!("invalid seed {s:?}")))
            .collect::<Result<Vec<_>>>()?;
        for (seed, sample) in seeds.iter().zip(review_samples(audits.len(), args.review_sample, &seeds)) {
            let subset: Vec<CaptionAudit> = sample.iter().map(|&i| audits[i].clone()).collect();
            write_audits(&out.join(format!("review_seed{seed}.jsonl")), &subset)?;
            println!("review pass seed {seed}: {}", summarize(&subset));
        }
    }

    let summary = summarize(&audits);
    println!("{summary}");
    println!(
        "prefix failures {}, token failures {}, request failures {}",
        summary.total - summary.prefix_ok,
        summary.total - summary.token_compliant,
        failures.len()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    if args.gallery == 0 || args.dim == 0 {
        bail!("--gallery and --dim must be positive");
    }
    let f = fixtures::synthetic(args.probes, args.gallery, args.dim, args.noise, args.seed);
    fs::create_dir_all(&args.out)?;
    let card = fixtures::synthetic_card();
    write_embeddings(&f.probes, &Manifest::new(card.clone(), Side::Probe), &args.out.join("probes.ompr"))?;
    write_embeddings(&f.gallery, &Manifest::new(card, Side::Gallery), &args.out.join("gallery.ompr"))?;
    let mut truth = String::from("probe_id,gallery_id\n");
    for (p, g) in &f.truth {
        truth.push_str(&format!("{p},{g}\n"));
    }
    fs::write(args.out.join("truth.csv"), truth)?;
    println!(
        "wrote {} probes x {} gallery at dim {} to {}",
        args.probes,
        args.gallery,
        args.dim,
        args.out.display()
    );
    Ok(())
}

/// Variant name of the first library error in the chain, e.g. `ChecksumMismatch`.
fn error_kind(err: &anyhow::Error) -> Option<String> {
    fn head(debug: String) -> String {
        debug.chars().take_while(|c| c.is_alphanumeric()).collect()
    }
    err.chain().find_map(|e| {
        if let Some(x) = e.downcast_ref::<StoreError>() {
            Some(head(format!("{x:?}")))
        } else if let Some(x) = e.downcast_ref::<SimilarityError>() {
            Some(head(format!("{x:?}")))
        } else if let Some(x) = e.downcast_ref::<MetricsError>() {
            Some(head(format!("{x:?}")))
        } else if let Some(x) = e.downcast_ref::<CaptionError>() {
            Some(head(format!("{x:?}")))
        } else {
            e.downcast_ref::<AnalysisError>().map(|x| head(format!("{x:?}")))
        }
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Reproduce(a) => cmd_reproduce(a, &cfg),
        Command::Caption(a) => cmd_caption(a, &cfg),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match error_kind(&e) {
                Some(kind) => eprintln!("error [{kind}]: {e:#}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
