use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use anyhow::{bail, Context};
use promptrevert_core::apps::{edit_prompt, evolutionary_generate, fuse_prompts, EditSpec};
use promptrevert_core::backend::{DiffusionBackend, HardPromptBackend, TextEncoder, ToyBackend};
use promptrevert_core::captioner::{CaptionProvider, FixtureCaptioner};
use promptrevert_core::corpus::synthetic_corpus;
use promptrevert_core::e2t::E2TBundle;
use promptrevert_core::eval::{evaluate_prompt, BigramLm, LatentEmbedder, Scorers};
use promptrevert_core::fixtures::fixture_suite;
use promptrevert_core::optimizer::{invert_observed, EpochRecord};
use promptrevert_core::tokenizer::Tokenizer;
use promptrevert_core::types::{normalize_text, Prompt};

use crate::checkpoint;
use crate::cli::{Cli, Command, EditArgs, EvalArgs, EvolveArgs, FixturesArgs, FuseArgs, InvertArgs, TrainArgs};
use crate::config::{CaptionerConfig, Config};
use crate::io::{collect_images, read_image, read_json, read_jsonl, write_emb, write_image, write_json, JsonlWriter};
use crate::remote::RemoteCaptioner;
use crate::run::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

type Bundle<'a> = E2TBundle<&'a ToyBackend>;

pub fn run(cli: Cli) -> i32 {
    let config = cli.config.as_deref();
    let outcome = match cli.command {
        Command::Invert(a) => cmd_invert(config, &a),
        Command::TrainE2t(a) => cmd_train_e2t(config, &a),
        Command::Eval(a) => cmd_eval(config, &a),
        Command::Edit(a) => cmd_edit(config, &a),
        Command::Fuse(a) => cmd_fuse(config, &a),
        Command::Evolve(a) => cmd_evolve(config, &a),
        Command::Fixtures(a) => cmd_fixtures(config, &a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn setup(config: Option<&Path>, captions: Option<&Path>, checkpoint: Option<&Path>) -> anyhow::Result<(Config, ToyBackend)> {
    let mut cfg = Config::load(config)?;
    if let Some(p) = captions {
        cfg.captioner = CaptionerConfig::Fixture {
            path: Some(p.to_path_buf()),
        };
    }
    if let Some(p) = checkpoint {
        cfg.e2t.checkpoint = Some(p.to_path_buf());
    }
    let backend = cfg.build_backend()?;
    Ok((cfg, backend))
}

fn check_config(cfg: &Config, backend: &ToyBackend) -> anyhow::Result<()> {
    cfg.validate()?;
    let steps = backend.schedule().len();
    if cfg.optimizer.denoise_steps != steps {
        bail!(
            "optimizer.denoise_steps is {} but the backend schedule has {steps} steps",
            cfg.optimizer.denoise_steps
        );
    }
    Ok(())
}

fn build_captioner(cfg: &Config) -> anyhow::Result<Box<dyn CaptionProvider>> {
    match &cfg.captioner {
        CaptionerConfig::Fixture { path: Some(path) } => {
            let table: BTreeMap<String, String> = read_json(path)?;
            Ok(Box::new(FixtureCaptioner::from_entries(table)))
        }
        CaptionerConfig::Fixture { path: None } => {
            bail!("fixture captioner needs captioner.path or --captions")
        }
        CaptionerConfig::Remote(r) => Ok(Box::new(RemoteCaptioner::new(r.clone())?)),
    }
}

fn synthetic_prompts(cfg: &Config, tokenizer: &dyn Tokenizer) -> anyhow::Result<Vec<Prompt>> {
    synthetic_corpus(cfg.e2t.corpus_size, cfg.e2t.corpus_seed)
        .iter()
        .map(|t| Ok(tokenizer.tokenize(t)?))
        .collect()
}

fn build_e2t<'a>(cfg: &Config, backend: &'a ToyBackend) -> anyhow::Result<Bundle<'a>> {
    if let Some(dir) = &cfg.e2t.checkpoint {
        return Ok(checkpoint::load(dir, backend)?.0);
    }
    eprintln!(
        "no e2t checkpoint configured; training on {} synthetic prompts",
        cfg.e2t.corpus_size
    );
    let prompts = synthetic_prompts(cfg, backend.tokenizer())?;
    let trained = checkpoint::train(&backend, &prompts, &cfg.e2t.train)?;
    Ok(E2TBundle::new(trained.zero_step, trained.corrector, backend)?)
}

fn component_versions(backend: &ToyBackend) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("promptrevert".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("backend".to_string(), "toy".to_string()),
        ("backend_digest".to_string(), hex::encode(backend.parameter_digest())),
    ])
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

enum Outcome {
    Done(ResultRecord),
    Skipped(String, String),
    Failed(ErrorRecord, Option<String>),
}

pub fn cmd_invert(config: Option<&Path>, args: &InvertArgs) -> anyhow::Result<i32> {
    let (mut cfg, backend) = setup(config, args.captions.as_deref(), args.checkpoint.as_deref())?;
    args.overrides.apply(&mut cfg);
    check_config(&cfg, &backend)?;
    if args.workers == 0 {
        bail!("--workers must be at least 1");
    }
    let captioner = build_captioner(&cfg)?;
    let e2t = build_e2t(&cfg, &backend)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let id = run_id(&cfg);
    let manifest_path = args.out.join(MANIFEST_FILE);
    let mut manifest = if manifest_path.exists() {
        let m: RunManifest = read_json(&manifest_path)?;
        if m.run_id != id {
            bail!(
                "{} belongs to run {} but this configuration is run {id}",
                args.out.display(),
                m.run_id
            );
        }
        m
    } else {
        RunManifest {
            run_id: id.clone(),
            config: cfg.clone(),
            input_hashes: BTreeMap::new(),
            component_versions: component_versions(&backend),
            started_at: now_rfc3339(),
            finished_at: None,
        }
    };
    let results_path = args.out.join(RESULTS_FILE);
    let done: BTreeSet<String> = if results_path.exists() {
        read_jsonl::<ResultRecord>(&results_path)?
            .into_iter()
            .filter(|r| r.run_id == id)
            .map(|r| r.image_hash)
            .collect()
    } else {
        BTreeSet::new()
    };
    let mut jobs: Vec<PathBuf> = Vec::new();
    for p in &args.images {
        jobs.extend(collect_images(p)?);
    }
    // a directory may hold the same image as .png and .ppm
    let mut seen_ids = BTreeSet::new();
    jobs.retain(|p| seen_ids.insert(image_id(p)));
    if args.trace {
        fs::create_dir_all(args.out.join("traces"))?;
    }
    if args.save_embeddings {
        fs::create_dir_all(args.out.join("embeddings"))?;
    }

    let mut results = JsonlWriter::append(&results_path)?;
    let mut errors = JsonlWriter::append(&args.out.join(ERRORS_FILE))?;
    let next = AtomicUsize::new(0);
    let clock = SystemClock::default();
    let (tx, rx) = mpsc::channel::<Outcome>();
    let (mut ok, mut failed, mut skipped) = (0usize, 0usize, 0usize);
    std::thread::scope(|s| -> anyhow::Result<()> {
        for _ in 0..args.workers.min(jobs.len().max(1)) {
            let tx = tx.clone();
            let (jobs, next, cfg, backend, e2t, captioner, clock, done, id) =
                (&jobs, &next, &cfg, &backend, &e2t, &captioner, &clock, &done, &id);
            s.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = jobs.get(k) else { break };
                let outcome = invert_one(path, cfg, backend, e2t, captioner.as_ref(), clock, done, id, args);
                if tx.send(outcome).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for outcome in rx {
            match outcome {
                Outcome::Done(record) => {
                    manifest.input_hashes.insert(record.id.clone(), record.image_hash.clone());
                    results.write(&record)?;
                    ok += 1;
                }
                Outcome::Skipped(name, hash) => {
                    manifest.input_hashes.insert(name, hash);
                    skipped += 1;
                }
                Outcome::Failed(record, hash) => {
                    eprintln!("{}: {}", record.path, record.error);
                    if let Some(hash) = hash {
                        manifest.input_hashes.insert(record.id.clone(), hash);
                    }
                    errors.write(&record)?;
                    failed += 1;
                }
            }
        }
        Ok(())
    })?;
    manifest.finished_at = Some(now_rfc3339());
    write_json(&manifest_path, &manifest)?;
    eprintln!("{ok} inverted, {skipped} already done, {failed} failed");
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

#[allow(clippy::too_many_arguments)]
fn invert_one(
    path: &Path,
    cfg: &Config,
    backend: &ToyBackend,
    e2t: &Bundle<'_>,
    captioner: &dyn CaptionProvider,
    clock: &SystemClock,
    done: &BTreeSet<String>,
    run_id: &str,
    args: &InvertArgs,
) -> Outcome {
    let name = image_id(path);
    let fail = |error: String, hash: Option<String>| {
        Outcome::Failed(
            ErrorRecord {
                run_id: run_id.to_string(),
                id: name.clone(),
                path: path.display().to_string(),
                error,
            },
            hash,
        )
    };
    let target = match read_image(path) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string(), None),
    };
    let hash = target.content_hash_hex();
    if done.contains(&hash) {
        return Outcome::Skipped(name, hash);
    }
    let mut trace: Vec<EpochRecord> = Vec::new();
    let result = invert_observed(backend, captioner, e2t, &target, &cfg.optimizer, clock, &mut |r| {
        if args.trace {
            trace.push(*r)
        }
    });
    let result = match result {
        Ok(r) => r,
        Err(e) => return fail(e.to_string(), Some(hash)),
    };
    let side_files = || -> anyhow::Result<()> {
        if args.trace {
            let mut w = JsonlWriter::append(&args.out.join("traces").join(format!("{name}.jsonl")))?;
            for r in &trace {
                w.write(r)?;
            }
        }
        if args.save_embeddings {
            write_emb(&args.out.join("embeddings").join(format!("{name}.emb")), &result.embedding)?;
        }
        Ok(())
    };
    if let Err(e) = side_files() {
        return fail(format!("{e:#}"), Some(hash));
    }
    Outcome::Done(ResultRecord {
        run_id: run_id.to_string(),
        id: name,
        image_hash: hash,
        initial_prompt: result.initial_prompt.text().to_string(),
        prompt: result.prompt.text().to_string(),
        loss_trace: result.loss_trace,
        wall_time_s: result.wall_time_s,
        config: result.config,
        metrics: None,
    })
}

/// Tokenized corpus lines; parse and vocabulary errors name the line.
pub fn read_corpus(path: &Path, tokenizer: &dyn Tokenizer) -> anyhow::Result<Vec<Prompt>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line)
            .with_context(|| format!("{}: line {}: malformed corpus entry", path.display(), i + 1))?;
        let prompt = tokenizer
            .tokenize(&normalize_text(&parsed.prompt))
            .with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        out.push(prompt);
    }
    Ok(out)
}

pub fn cmd_train_e2t(config: Option<&Path>, args: &TrainArgs) -> anyhow::Result<i32> {
    let (mut cfg, backend) = setup(config, None, None)?;
    let train = &mut cfg.e2t.train;
    if let Some(s) = args.seed {
        train.seed = s;
    }
    if let Some(e) = args.epochs_zero {
        train.epochs_zero = e;
    }
    if let Some(e) = args.epochs_corrector {
        train.epochs_corrector = e;
    }
    cfg.validate()?;
    let prompts = read_corpus(&args.corpus, backend.tokenizer())?;
    if prompts.is_empty() {
        bail!("{}: corpus is empty", args.corpus.display());
    }
    let trained = checkpoint::train(&backend, &prompts, &cfg.e2t.train)?;
    for r in &trained.reports {
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
    }
    let manifest = checkpoint::save(&args.out, &trained, backend.tokenizer(), &cfg.e2t.train)?;
    eprintln!(
        "trained on {} prompts; final losses {:.4} / {:.4}; wrote {}",
        prompts.len(),
        manifest.final_losses[0],
        manifest.final_losses[1],
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn bigram_scorer(cfg: &Config, tokenizer: &dyn Tokenizer) -> anyhow::Result<BigramLm> {
    let prompts = match &cfg.eval.corpus {
        Some(path) => read_corpus(path, tokenizer)?,
        None => synthetic_prompts(cfg, tokenizer)?,
    };
    Ok(BigramLm::fit(&prompts, tokenizer.vocab_size(), cfg.eval.smoothing)?)
}

pub fn cmd_eval(config: Option<&Path>, args: &EvalArgs) -> anyhow::Result<i32> {
    let (cfg, backend) = setup(config, None, None)?;
    let tokenizer = backend.tokenizer();
    let fixtures: Vec<FixtureEntry> = read_json(&args.fixtures.join(FIXTURES_FILE))?;
    let by_id: BTreeMap<&str, &FixtureEntry> = fixtures.iter().map(|f| (f.id.as_str(), f)).collect();
    let records: Vec<ResultRecord> = read_jsonl(&args.results)?;
    let lm = bigram_scorer(&cfg, tokenizer)?;
    let embedder = LatentEmbedder(&backend);
    let scorers = Scorers {
        image: &embedder,
        tokens: backend.vocab_table(),
        lm: &lm,
        perceptual: None,
    };
    fs::create_dir_all(&args.out)?;
    let mut lines = Vec::with_capacity(records.len());
    for r in &records {
        let Some(fx) = by_id.get(r.id.as_str()) else {
            bail!("no fixture with id {:?} in {}", r.id, args.fixtures.display());
        };
        let target = read_image(&args.fixtures.join(&fx.image))?;
        let prompt = tokenizer.tokenize(&r.prompt).with_context(|| format!("result {}", r.id))?;
        let reference = tokenizer.tokenize(&fx.reference).with_context(|| format!("fixture {}", fx.id))?;
        let metrics = evaluate_prompt(&prompt, &r.config, &target, &reference, &backend, &scorers)
            .with_context(|| format!("evaluating {}", r.id))?;
        lines.push(MetricsRecord {
            id: r.id.clone(),
            prompt: r.prompt.clone(),
            reference: fx.reference.clone(),
            metrics,
        });
    }
    let metrics_path = args.out.join("metrics.jsonl");
    if metrics_path.exists() {
        fs::remove_file(&metrics_path)?;
    }
    let mut w = JsonlWriter::append(&metrics_path)?;
    for l in &lines {
        w.write(l)?;
    }
    let summary = Summary::from_reports(&lines.iter().map(|l| l.metrics).collect::<Vec<_>>());
    write_json(&args.out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(EXIT_OK)
}

pub fn cmd_edit(config: Option<&Path>, args: &EditArgs) -> anyhow::Result<i32> {
    let (_, backend) = setup(config, None, None)?;
    let tokenizer = backend.tokenizer();
    let prompt = tokenizer.tokenize(&normalize_text(&args.prompt))?;
    let spec = EditSpec::new(args.remove.clone(), args.replace.iter().cloned().collect())?;
    println!("{}", edit_prompt(&prompt, &spec, tokenizer)?);
    Ok(EXIT_OK)
}

pub fn cmd_fuse(config: Option<&Path>, args: &FuseArgs) -> anyhow::Result<i32> {
    let (_, backend) = setup(config, None, None)?;
    let tokenizer = backend.tokenizer();
    let a = tokenizer.tokenize(&normalize_text(&args.first))?;
    let b = tokenizer.tokenize(&normalize_text(&args.second))?;
    let max = args.max_tokens.unwrap_or(backend.seq_len());
    println!("{}", fuse_prompts(&a, &b, max, tokenizer)?);
    Ok(EXIT_OK)
}

pub fn cmd_evolve(config: Option<&Path>, args: &EvolveArgs) -> anyhow::Result<i32> {
    let (mut cfg, backend) = setup(config, args.captions.as_deref(), args.checkpoint.as_deref())?;
    args.overrides.apply(&mut cfg);
    check_config(&cfg, &backend)?;
    let captioner = build_captioner(&cfg)?;
    let e2t = build_e2t(&cfg, &backend)?;
    let mut images = Vec::new();
    for p in &args.images {
        for path in collect_images(p)? {
            images.push(read_image(&path)?);
        }
    }
    let lineage = evolutionary_generate(
        &backend,
        &e2t,
        captioner.as_ref(),
        &images,
        args.generations,
        &cfg.optimizer,
        &SystemClock::default(),
    )?;
    fs::create_dir_all(&args.out)?;
    let lineage_path = args.out.join("lineage.jsonl");
    if lineage_path.exists() {
        fs::remove_file(&lineage_path)?;
    }
    let mut w = JsonlWriter::append(&lineage_path)?;
    for entry in &lineage {
        let file = format!("gen-{:02}.png", entry.generation);
        write_image(&args.out.join(&file), &entry.image)?;
        w.write(&serde_json::json!({
            "generation": entry.generation,
            "parents": entry.parents.iter().map(Prompt::text).collect::<Vec<_>>(),
            "prompt": entry.prompt.text(),
            "image": file,
        }))?;
        println!("{}: {}", entry.generation, entry.prompt);
    }
    Ok(EXIT_OK)
}

pub fn cmd_fixtures(config: Option<&Path>, args: &FixturesArgs) -> anyhow::Result<i32> {
    let (cfg, backend) = setup(config, None, None)?;
    let suite = fixture_suite(&backend, args.count, args.seed, cfg.optimizer.noise_seed)?;
    fs::create_dir_all(&args.out)?;
    let mut entries = Vec::with_capacity(suite.len());
    let mut captions = BTreeMap::new();
    for f in &suite {
        write_image(&args.out.join(format!("{}.ppm", f.id)), &f.target)?;
        let image = format!("{}.png", f.id);
        write_image(&args.out.join(&image), &f.target)?;
        let hash = f.target.content_hash_hex();
        captions.insert(hash.clone(), f.caption.clone());
        entries.push(FixtureEntry {
            id: f.id.clone(),
            image,
            hash,
            reference: f.reference.text().to_string(),
            caption: f.caption.clone(),
        });
    }
    write_json(&args.out.join(FIXTURES_FILE), &entries)?;
    write_json(&args.out.join(CAPTIONS_FILE), &captions)?;
    let corpus_path = args.out.join(CORPUS_FILE);
    if corpus_path.exists() {
        fs::remove_file(&corpus_path)?;
    }
    let mut w = JsonlWriter::append(&corpus_path)?;
    for prompt in synthetic_corpus(cfg.e2t.corpus_size, cfg.e2t.corpus_seed) {
        w.write(&CorpusLine { prompt })?;
    }
    eprintln!("wrote {} fixtures to {}", suite.len(), args.out.display());
    Ok(EXIT_OK)
}
