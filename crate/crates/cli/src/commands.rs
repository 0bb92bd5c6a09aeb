use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use fypaudit::clone::{replay, rewrite_trace, verify_clones, IdentityRewrite, Pacing, VerifyParams};
use fypaudit::config::Config;
use fypaudit::http::{serve as serve_http, HttpTransport};
use fypaudit::orchestrator::{run_experiment, run_experiment_remote, ExperimentError};
use fypaudit::platform::{Corpus, Platform, Registration};
use fypaudit::proxy::{extract_trace, start_proxy, trace::read_trace};
use fypaudit::puppet::Client;
use fypaudit::report::{
    analyze_results, degenerate_tests, render_tables, render_tally, tally, write_report, ReportError,
};
use fypaudit::topics::find;
use fypaudit::wire::Dictionary;

use crate::{AnalyzeArgs, CloneArgs, CorpusArgs, ExperimentArgs, ProxyArgs, ReportArgs, ServeArgs, VerifyArgs};

pub const EXIT_NEGATIVE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFRA: u8 = 3;
pub const EXIT_DEGENERATE: u8 = 4;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Outcome = Result<(), Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_CONFIG, error: e.into() }
}

fn infra(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_INFRA, error: e.into() }
}

fn experiment_err(e: ExperimentError) -> Failure {
    if e.is_config() {
        config_err(e)
    } else {
        infra(e)
    }
}

pub fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Config::load(p).map_err(config_err),
        None => Ok(Config::default()),
    }
}

fn dictionary(config: &Config) -> Result<Dictionary, Failure> {
    match &config.paths.dictionary {
        Some(p) => {
            Dictionary::load(p).with_context(|| format!("loading dictionary {}", p.display())).map_err(config_err)
        }
        None => Ok(Dictionary::default_app_log()),
    }
}

fn read_credentials(path: &Path) -> Result<Registration, Failure> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display())).map_err(config_err)?;
    Registration::from_json(&bytes).with_context(|| format!("parsing {}", path.display())).map_err(config_err)
}

/// Rejects an output directory at or below the results directory.
fn outside(results: &Path, out: &Path) -> Result<(), Failure> {
    let results = results.canonicalize().unwrap_or_else(|_| results.to_path_buf());
    let out_abs = if out.exists() {
        out.canonicalize().unwrap_or_else(|_| out.to_path_buf())
    } else {
        std::env::current_dir().map(|d| d.join(out)).unwrap_or_else(|_| out.to_path_buf())
    };
    if out_abs.starts_with(&results) {
        return Err(config_err(anyhow!("output {} lies inside the results directory", out.display())));
    }
    Ok(())
}

pub fn corpus(config: &Config, args: CorpusArgs) -> Outcome {
    let mut plan = config.experiment.clone();
    plan.corpus_size = args.size.unwrap_or(plan.corpus_size);
    plan.corpus_seed = args.seed.unwrap_or(plan.corpus_seed);
    let corpus = plan.generate_corpus().map_err(experiment_err)?;
    let out = args.out.unwrap_or_else(|| config.paths.corpus.clone());
    let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display())).map_err(infra)?;
    let mut w = BufWriter::new(file);
    corpus.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(infra)?;
    println!("{} videos -> {}", corpus.len(), out.display());
    Ok(())
}

fn load_corpus(config: &Config, path: Option<PathBuf>) -> Result<Corpus, Failure> {
    let path = path.unwrap_or_else(|| config.paths.corpus.clone());
    if path.is_file() {
        let file = fs::File::open(&path).map_err(infra)?;
        return Corpus::read_jsonl(BufReader::new(file))
            .with_context(|| format!("reading {}", path.display()))
            .map_err(config_err);
    }
    log::info!("{} not found, generating corpus from config", path.display());
    config.experiment.generate_corpus().map_err(experiment_err)
}

pub fn serve(config: &Config, args: ServeArgs) -> Outcome {
    let mut config = config.clone();
    if let Some(p) = args.calibration_profile {
        config.experiment.calibration_profile = p;
        config.experiment.calibration = None;
    }
    let corpus = Arc::new(load_corpus(&config, args.corpus)?);
    let platform_config = config.platform_config(args.seed).map_err(config_err)?;
    let platform = Platform::new(corpus, platform_config, dictionary(&config)?).map_err(config_err)?;
    let listen = args.listen.unwrap_or_else(|| config.endpoints.platform_listen.clone());
    let handle = serve_http(&listen, Arc::new(platform), config.endpoints.server_workers)
        .with_context(|| format!("binding {listen}"))
        .map_err(infra)?;
    log::info!("platform listening on {}", handle.url());
    handle.join();
    Ok(())
}

pub fn proxy(config: &Config, args: ProxyArgs) -> Outcome {
    let listen = args.listen.unwrap_or_else(|| config.endpoints.proxy_listen.clone());
    let upstream = args.upstream.unwrap_or_else(|| config.endpoints.upstream_url.clone());
    let trace_dir = args.trace_dir.unwrap_or_else(|| config.paths.trace_dir.clone());
    let handle = start_proxy(&listen, &upstream, &trace_dir).map_err(infra)?;
    log::info!("proxy listening on {} -> {upstream}, traces in {}", handle.url(), trace_dir.display());
    handle.join();
    Ok(())
}

pub fn experiment(mut config: Config, args: ExperimentArgs) -> Outcome {
    let plan = &mut config.experiment;
    if !args.topics.is_empty() {
        plan.topics = args.topics;
    }
    plan.runs = args.runs.unwrap_or(plan.runs);
    if let Some(seed) = args.seed {
        plan.seed = seed;
        plan.run_seeds.clear();
    }
    plan.phase_length = args.phase_length.unwrap_or(plan.phase_length);
    plan.seed_count = args.seed_count.unwrap_or(plan.seed_count);
    plan.page_size = args.page_size.unwrap_or(plan.page_size);
    plan.confidence = args.confidence.unwrap_or(plan.confidence);
    if let Some(p) = args.calibration_profile {
        plan.calibration_profile = p;
        plan.calibration = None;
    }
    plan.corpus_size = args.corpus_size.unwrap_or(plan.corpus_size);
    plan.corpus_seed = args.corpus_seed.unwrap_or(plan.corpus_seed);
    config.jobs = args.jobs.unwrap_or(config.jobs);
    config.validate().map_err(config_err)?;

    let classifier = config.classifier.build().map_err(config_err)?;
    let out = args.out.unwrap_or_else(|| config.paths.results_dir.clone());
    let outcomes = match args.upstream {
        Some(url) => run_experiment_remote(&config.experiment, &HttpTransport::new(&url), &out, classifier.as_ref()),
        None => run_experiment(&config.experiment, &out, classifier.as_ref(), config.jobs()),
    }
    .map_err(experiment_err)?;
    let mut failed = 0;
    for o in &outcomes {
        match &o.error {
            None => println!("{}\tcompleted", o.dir),
            Some(e) => {
                failed += 1;
                println!("{}\tfailed\t{e}", o.dir);
            }
        }
    }
    if failed > 0 {
        return Err(infra(anyhow!("{failed} of {} runs failed; see error.txt in their directories", outcomes.len())));
    }
    Ok(())
}

fn parse_pacing(s: &str) -> Result<Pacing, Failure> {
    match s {
        "none" => Ok(Pacing::None),
        "recorded" => Ok(Pacing::Recorded),
        other => {
            other.parse::<f64>().ok().filter(|f| f.is_finite() && *f >= 0.0).map(Pacing::Scaled).ok_or_else(|| {
                config_err(anyhow!("pacing must be none, recorded or a non-negative factor, got {other:?}"))
            })
        }
    }
}

pub fn clone(config: &Config, args: CloneArgs) -> Outcome {
    let pacing = parse_pacing(&args.pacing)?;
    if args.targets.is_empty() && args.count == 0 {
        return Err(config_err(anyhow!("give --target credentials or --count")));
    }
    let dict = dictionary(config)?;
    let source = read_credentials(&args.source)?;
    let recorded =
        read_trace(&args.trace).with_context(|| format!("reading {}", args.trace.display())).map_err(config_err)?;
    let trace = extract_trace(&recorded, &source.account_id).map_err(config_err)?;
    let url = args.upstream.unwrap_or_else(|| config.endpoints.upstream_url.clone());
    let transport = HttpTransport::new(&url);

    let mut targets = Vec::new();
    for path in &args.targets {
        targets.push(read_credentials(path)?);
    }
    for _ in 0..args.count {
        let client = Client::register(&transport, dict.clone()).map_err(infra)?;
        targets.push(client.credentials().clone());
    }
    fs::create_dir_all(&args.out).map_err(infra)?;
    let mut reports = Vec::new();
    for target in &targets {
        let rewritten =
            rewrite_trace(&trace, &IdentityRewrite::new(&trace, target), &source.key, &dict).map_err(config_err)?;
        rewritten.save(&args.out.join(format!("{}.fltrace", target.account_id))).map_err(infra)?;
        fs::write(args.out.join(format!("{}.json", target.account_id)), target.to_json()).map_err(infra)?;
        let report = replay(&rewritten, &transport, pacing, &dict).map_err(infra)?;
        println!("{}\t{} exchanges replayed", target.account_id, report.accepted);
        reports.push(serde_json::json!({ "account_id": target.account_id, "replay": report }));
    }
    let summary = serde_json::to_vec_pretty(&reports).expect("serializable");
    fs::write(args.out.join("replay.json"), summary).map_err(infra)?;
    Ok(())
}

pub fn verify(config: &Config, args: VerifyArgs) -> Outcome {
    let dict = dictionary(config)?;
    let topic = find(&config.experiment.corpus_topics, &args.topic)
        .ok_or_else(|| config_err(anyhow!("unknown topic {}", args.topic)))?;
    let classifier = config.classifier.build().map_err(config_err)?;
    let url = args.upstream.unwrap_or_else(|| config.endpoints.upstream_url.clone());
    let transport = HttpTransport::new(&url);
    let client = |p: &PathBuf| read_credentials(p).map(|c| Client::new(&transport, c, dict.clone()));
    let original = client(&args.original)?;
    let clones = args.clones.iter().map(client).collect::<Result<Vec<_>, _>>()?;
    let baselines = args.baselines.iter().map(client).collect::<Result<Vec<_>, _>>()?;
    let params = VerifyParams { fetch_count: args.fetch, page_size: args.page_size, confidence: args.confidence };
    let verdict = verify_clones(
        &original,
        &clones.iter().collect::<Vec<_>>(),
        &baselines.iter().collect::<Vec<_>>(),
        &params,
        topic,
        classifier.as_ref(),
    )
    .map_err(infra)?;
    let json = serde_json::to_string_pretty(&verdict).expect("serializable");
    if let Some(out) = &args.out {
        fs::write(out, format!("{json}\n")).map_err(infra)?;
    }
    println!("{json}");
    if !verdict.pass {
        return Err(Failure { code: EXIT_NEGATIVE, error: anyhow!("{} failing pair(s)", verdict.failing_pairs.len()) });
    }
    Ok(())
}

fn report_err(e: ReportError) -> Failure {
    match e {
        ReportError::Io { .. } => infra(e),
        _ => config_err(e),
    }
}

pub fn analyze(args: AnalyzeArgs) -> Outcome {
    if let Some(out) = &args.out {
        outside(&args.results, out)?;
    }
    let analysis = analyze_results(&args.results, args.confidence).map_err(report_err)?;
    for s in &analysis.skipped {
        log::warn!("skipped {}: {}", s.dir, s.reason);
    }
    let tables = render_tables(&analysis.runs);
    match &args.out {
        Some(out) => {
            fs::create_dir_all(out).map_err(infra)?;
            for (name, content) in &tables {
                fs::write(out.join(name), content).map_err(infra)?;
            }
        }
        None => {
            for (name, content) in &tables {
                println!("== {name}\n{content}");
            }
        }
    }
    for (topic, run, test) in degenerate_tests(&analysis.runs, true) {
        log::warn!("{topic} run {run}: {test} has a zero-variance pooled proportion, no verdict");
    }
    let primary = degenerate_tests(&analysis.runs, false);
    if !primary.is_empty() {
        return Err(Failure {
            code: EXIT_DEGENERATE,
            error: anyhow!("{} Phase 2 comparison(s) without a verdict", primary.len()),
        });
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> Outcome {
    outside(&args.results, &args.out)?;
    let analysis = analyze_results(&args.results, args.confidence).map_err(report_err)?;
    let written = write_report(&args.results, &analysis, &args.out).map_err(report_err)?;
    print!("{}", render_tally(&tally(&analysis.runs)));
    log::info!("{} files written to {}", written.len(), args.out.display());
    Ok(())
}
