mod common;

use std::fs;

use common::{results, Workspace, FAST_CONFIG};
use promptrevert::checkpoint::{self, CheckpointManifest};
use promptrevert::cli::TrainArgs;
use promptrevert::commands::{cmd_eval, cmd_train_e2t, EXIT_FAILURE, EXIT_OK, EXIT_PARTIAL};
use promptrevert::config::{Config, CONFIG_ENV};
use promptrevert::io::{read_json, read_jsonl};
use promptrevert::run::{ErrorRecord, MetricsRecord, RunManifest, Summary, ERRORS_FILE, MANIFEST_FILE};
use promptrevert_core::backend::{make_toy_backend, TextEncoder, ToyBackendSpec};

#[test]
fn invert_writes_a_record_per_fixture_and_a_manifest() {
    let ws = Workspace::new(FAST_CONFIG);
    let out = ws.path("run");
    assert_eq!(ws.invert(&ws.fixtures, &out, &["--workers", "3", "--trace", "--save-embeddings"]), EXIT_OK);
    let recs = results(&out);
    assert_eq!(recs.len(), 10);
    let manifest: RunManifest = read_json(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.input_hashes.len(), 10);
    assert!(manifest.finished_at.is_some());
    for r in &recs {
        assert_eq!(r.run_id, manifest.run_id);
        assert_eq!(r.loss_trace.len(), 21);
        assert_eq!(manifest.input_hashes[&r.id], r.image_hash);
        assert!(out.join("traces").join(format!("{}.jsonl", r.id)).exists());
        assert!(out.join("embeddings").join(format!("{}.emb", r.id)).exists());
    }
    let c = &manifest.config.optimizer;
    assert_eq!((c.denoise_steps, c.init_prompt_len), (5, 16));
    assert_eq!(manifest.config.e2t.train.max_len, 32);
}

#[test]
fn one_unreadable_image_is_a_partial_failure() {
    let ws = Workspace::new(FAST_CONFIG);
    let inputs = ws.path("inputs");
    fs::create_dir(&inputs).unwrap();
    for k in 0..9 {
        let name = format!("fixture-{k:02}.png");
        fs::copy(ws.fixtures.join(&name), inputs.join(&name)).unwrap();
    }
    fs::write(inputs.join("broken.png"), b"not an image").unwrap();
    let out = ws.path("run");
    assert_eq!(ws.invert(&inputs, &out, &[]), EXIT_PARTIAL);
    assert_eq!(results(&out).len(), 9);
    let errors: Vec<ErrorRecord> = read_jsonl(&out.join(ERRORS_FILE)).unwrap();
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0].id, "broken");
}

#[test]
fn reruns_resume_by_image_hash() {
    let ws = Workspace::new(FAST_CONFIG);
    let out = ws.path("run");
    assert_eq!(ws.invert(&ws.fixtures, &out, &[]), EXIT_OK);
    let first = results(&out);

    // drop three records, as if the run had been interrupted
    let text = fs::read_to_string(out.join("results.jsonl")).unwrap();
    let kept: Vec<&str> = text.lines().take(7).collect();
    fs::write(out.join("results.jsonl"), kept.join("\n") + "\n").unwrap();
    assert_eq!(ws.invert(&ws.fixtures, &out, &[]), EXIT_OK);
    let mut again = results(&out);
    assert_eq!(again.len(), 10);
    let mut want = first.clone();
    want.sort_by(|a, b| a.id.cmp(&b.id));
    again.sort_by(|a, b| a.id.cmp(&b.id));
    for (a, b) in want.iter().zip(&again) {
        assert_eq!((&a.prompt, &a.loss_trace), (&b.prompt, &b.loss_trace));
    }

    assert_eq!(ws.invert(&ws.fixtures, &out, &[]), EXIT_OK);
    assert_eq!(results(&out).len(), 10);
    // a different configuration may not write into this run
    assert_eq!(ws.invert(&ws.fixtures, &out, &["--max-epoch", "3"]), EXIT_FAILURE);
}

#[test]
fn zero_epochs_gives_the_caption_round_trip() {
    let ws = Workspace::new(FAST_CONFIG);
    let ckpt = ws.path("ckpt");
    let corpus = ws.fixtures.join("corpus.jsonl");
    assert_eq!(ws.run(&["train-e2t", "--corpus", corpus.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]), EXIT_OK);
    let out = ws.path("run");
    let extra = ["--max-epoch", "0", "--checkpoint", ckpt.to_str().unwrap()];
    assert_eq!(ws.invert(&ws.fixtures, &out, &extra), EXIT_OK);

    let backend = make_toy_backend(ToyBackendSpec::default()).unwrap();
    let (bundle, _) = checkpoint::load(&ckpt, &backend).unwrap();
    let recs = results(&out);
    assert_eq!(recs.len(), 10);
    for r in recs {
        let caption = backend.tokenizer().tokenize(&r.initial_prompt).unwrap();
        let c = backend.encode_text(&caption).unwrap();
        assert_eq!(r.prompt, bundle.invert_embedding(&c, 4, 4).unwrap().text());
        assert_eq!(r.loss_trace.len(), 1);
    }
}

#[test]
fn config_errors_exit_with_one() {
    let ws = Workspace::new(FAST_CONFIG);
    let out = ws.path("run");
    fs::write(&ws.config, "backend:\n  plugin: stable-diffusion\n").unwrap();
    assert_eq!(ws.invert(&ws.fixtures, &out, &[]), EXIT_FAILURE);
    fs::write(&ws.config, format!("{FAST_CONFIG}  batch_size: 0\n")).unwrap();
    assert_eq!(ws.invert(&ws.fixtures, &out, &[]), EXIT_FAILURE);
    fs::write(&ws.config, FAST_CONFIG).unwrap();
    assert_eq!(ws.invert(&ws.fixtures, &out, &["--denoise-steps", "3"]), EXIT_FAILURE);
    assert_eq!(ws.invert(&ws.fixtures, &out, &["--learning-rate=-1"]), EXIT_FAILURE);
    let missing = ws.path("nope.yaml");
    let code = promptrevert::commands::run(clap::Parser::parse_from([
        "promptrevert",
        "--config",
        missing.to_str().unwrap(),
        "fuse",
        "a cat",
        "a dog",
    ]));
    assert_eq!(code, EXIT_FAILURE);
    assert!(!out.join("results.jsonl").exists());
}

fn train_args(corpus: &std::path::Path, out: &std::path::Path) -> TrainArgs {
    TrainArgs {
        corpus: corpus.to_path_buf(),
        out: out.to_path_buf(),
        seed: None,
        epochs_zero: None,
        epochs_corrector: None,
    }
}

#[test]
fn train_e2t_checkpoints_reload_and_are_deterministic() {
    let ws = Workspace::new(FAST_CONFIG);
    let corpus = ws.fixtures.join("corpus.jsonl");
    let (a, b) = (ws.path("a"), ws.path("b"));
    assert_eq!(cmd_train_e2t(Some(&ws.config), &train_args(&corpus, &a)).unwrap(), EXIT_OK);
    assert_eq!(cmd_train_e2t(Some(&ws.config), &train_args(&corpus, &b)).unwrap(), EXIT_OK);
    let ma: CheckpointManifest = read_json(&a.join(checkpoint::MANIFEST_FILE)).unwrap();
    let mb: CheckpointManifest = read_json(&b.join(checkpoint::MANIFEST_FILE)).unwrap();
    assert_eq!(CheckpointManifest { created_at: String::new(), ..ma.clone() }, CheckpointManifest { created_at: String::new(), ..mb });
    assert_eq!(fs::read(a.join(checkpoint::PARAMS_FILE)).unwrap(), fs::read(b.join(checkpoint::PARAMS_FILE)).unwrap());
    assert_eq!(ma.corpus_size, 60);
    assert_eq!(ma.training_config.batch_size, 32);

    let backend = make_toy_backend(ToyBackendSpec::default()).unwrap();
    let (bundle, _) = checkpoint::load(&a, &backend).unwrap();
    let (z, _, _) = checkpoint::load_models(&a).unwrap();
    assert_eq!(bundle.zero_step(), &z);

    let other = make_toy_backend(ToyBackendSpec { vocab_size: 80, ..Default::default() }).unwrap();
    assert!(checkpoint::load(&a, &other).is_err());
    fs::write(a.join(checkpoint::PARAMS_FILE), [0u8; 12]).unwrap();
    assert!(checkpoint::load_models(&a).is_err());
}

#[test]
fn bad_corpora_are_rejected_with_line_numbers() {
    let ws = Workspace::new(FAST_CONFIG);
    let out = ws.path("ckpt");
    let empty = ws.path("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert!(cmd_train_e2t(Some(&ws.config), &train_args(&empty, &out)).is_err());
    let cs = ws.path("empty_cli.jsonl");
    fs::write(&cs, "\n").unwrap();
    assert_eq!(ws.run(&["train-e2t", "--corpus", cs.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_FAILURE);

    let corrupt = ws.path("corrupt.jsonl");
    fs::write(&corrupt, "{\"prompt\": \"a red cat on a table\"}\n{\"prompt\": \"a dog\"}\n{\"prompt\": \n").unwrap();
    let err = format!("{:#}", cmd_train_e2t(Some(&ws.config), &train_args(&corrupt, &out)).unwrap_err());
    assert!(err.contains("line 3"), "{err}");
    let unknown = ws.path("unknown.jsonl");
    fs::write(&unknown, "{\"prompt\": \"a red cat\"}\n{\"prompt\": \"a zebra\"}\n").unwrap();
    let err = format!("{:#}", cmd_train_e2t(Some(&ws.config), &train_args(&unknown, &out)).unwrap_err());
    assert!(err.contains("line 2") && err.contains("zebra"), "{err}");
    assert!(!out.join(checkpoint::MANIFEST_FILE).exists());
}

#[test]
fn eval_summaries_match_their_metric_lines() {
    let ws = Workspace::new(FAST_CONFIG);
    let run = ws.path("run");
    assert_eq!(ws.invert(&ws.fixtures, &run, &[]), EXIT_OK);
    let scores = ws.path("scores");
    let results = run.join("results.jsonl");
    let args = ["eval", "--results", results.to_str().unwrap(), "--fixtures", ws.fixtures.to_str().unwrap(), "--out", scores.to_str().unwrap()];
    assert_eq!(ws.run(&args), EXIT_OK);
    let lines: Vec<MetricsRecord> = read_jsonl(&scores.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.len(), 10);
    let summary: Summary = read_json(&scores.join("summary.json")).unwrap();
    assert_eq!(summary.count, 10);
    let mean = |f: fn(&MetricsRecord) -> f64| lines.iter().map(f).sum::<f64>() / lines.len() as f64;
    let checks: [(&str, fn(&MetricsRecord) -> f64); 6] = [
        ("image_cosine", |l| l.metrics.image_cosine),
        ("text_precision", |l| l.metrics.text_precision),
        ("text_recall", |l| l.metrics.text_recall),
        ("text_f1", |l| l.metrics.text_f1),
        ("token_f1", |l| l.metrics.token_f1),
        ("perplexity", |l| l.metrics.perplexity),
    ];
    for (name, f) in checks {
        assert!((summary.metrics[name].mean - mean(f)).abs() < 1e-12, "{name}");
    }
    assert!(!summary.metrics.contains_key("perceptual_distance"));
    assert!(lines.iter().all(|l| l.metrics.is_consistent()));

    // a result whose fixture is gone
    let mut text = fs::read_to_string(&results).unwrap();
    text = text.replacen("\"id\":\"fixture-00\"", "\"id\":\"fixture-99\"", 1);
    fs::write(&results, text).unwrap();
    let eval = promptrevert::cli::EvalArgs { results, fixtures: ws.fixtures.clone(), out: scores };
    let err = format!("{:#}", cmd_eval(Some(&ws.config), &eval).unwrap_err());
    assert!(err.contains("fixture-99"), "{err}");
}

#[test]
fn prompt_tools_and_evolution() {
    let ws = Workspace::new(FAST_CONFIG);
    assert_eq!(ws.run(&["edit", "--prompt", "a red cat on a table", "--remove", "red", "--replace", "cat=dog"]), EXIT_OK);
    assert_eq!(ws.run(&["edit", "--prompt", "a cat", "--remove", "a", "--remove", "cat"]), EXIT_FAILURE);
    assert_eq!(ws.run(&["edit", "--prompt", "a zebra"]), EXIT_FAILURE);
    assert_eq!(ws.run(&["fuse", "a cat", "a dog", "--max-tokens", "4"]), EXIT_OK);

    let pair = ws.path("pair");
    fs::create_dir(&pair).unwrap();
    for k in 0..2 {
        let name = format!("fixture-{k:02}.png");
        fs::copy(ws.fixtures.join(&name), pair.join(&name)).unwrap();
    }
    let out = ws.path("evolve");
    let captions = ws.captions();
    let args = ["evolve", "--images", pair.to_str().unwrap(), "--generations", "2", "--out", out.to_str().unwrap(), "--captions", captions.to_str().unwrap()];
    assert_eq!(ws.run(&args), EXIT_OK);
    let lineage: Vec<serde_json::Value> = read_jsonl(&out.join("lineage.jsonl")).unwrap();
    assert_eq!(lineage.len(), 2);
    assert!(out.join("gen-00.png").exists() && out.join("gen-01.png").exists());
    let one = pair.join("fixture-00.png");
    let args = ["evolve", "--images", one.to_str().unwrap(), "--out", out.to_str().unwrap(), "--captions", captions.to_str().unwrap()];
    assert_eq!(ws.run(&args), EXIT_FAILURE);
}

// The only test that touches the process environment.
#[test]
fn config_falls_back_to_the_environment() {
    let ws = Workspace::new(FAST_CONFIG);
    fs::write(&ws.config, "backend:\n  plugin: elsewhere\n").unwrap();
    std::env::set_var(CONFIG_ENV, &ws.config);
    let from_env = Config::load(None).unwrap();
    assert_eq!(from_env.backend.plugin, "elsewhere");
    let code = promptrevert::commands::run(clap::Parser::parse_from(["promptrevert", "fuse", "a cat", "a dog"]));
    std::env::remove_var(CONFIG_ENV);
    assert_eq!(code, EXIT_FAILURE);
    assert_eq!(Config::load(None).unwrap(), Config::default());
}
