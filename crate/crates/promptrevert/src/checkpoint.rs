//! E2T checkpoints: `params.bin` (little-endian f64 blobs, zero-step model
//! first) and `manifest.json`.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context};
use promptrevert_core::backend::TextEncoder;
use promptrevert_core::e2t::{
    train_corrector, train_zero_step, E2TBundle, ModelDims, SequenceModel, TrainConfig, TrainReport,
};
use promptrevert_core::tokenizer::Tokenizer;
use promptrevert_core::types::{LatentTextEmbedding, Prompt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{read_json, write_json};

pub const FORMAT: &str = "promptrevert-e2t/1";
pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDims {
    pub zero_step: ModelDims,
    pub corrector: ModelDims,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub vocab: Vec<String>,
    pub dims: CheckpointDims,
    pub max_len: usize,
    pub training_config: TrainConfig,
    pub corpus_hash: String,
    pub corpus_size: usize,
    pub final_losses: [f64; 2],
    pub created_at: String,
}

pub fn vocab_words(tokenizer: &dyn Tokenizer) -> Vec<String> {
    (0..tokenizer.vocab_size() as u32)
        .map(|id| tokenizer.token_str(id).unwrap_or_default().to_string())
        .collect()
}

/// SHA-256 over the newline-joined prompt texts.
pub fn corpus_hash(prompts: &[Prompt]) -> String {
    let mut h = Sha256::new();
    for p in prompts {
        h.update(p.text().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub struct Trained {
    pub zero_step: SequenceModel,
    pub corrector: SequenceModel,
    pub reports: [TrainReport; 2],
    pub corpus_hash: String,
    pub corpus_size: usize,
}

/// Embed `prompts` with `encoder` and train both models.
pub fn train(encoder: &impl TextEncoder, prompts: &[Prompt], cfg: &TrainConfig) -> anyhow::Result<Trained> {
    let corpus: Vec<(Prompt, LatentTextEmbedding)> = prompts
        .iter()
        .map(|p| Ok((p.clone(), encoder.encode_text(p)?)))
        .collect::<anyhow::Result<_>>()?;
    let (zero_step, zr) = train_zero_step(&corpus, encoder.tokenizer(), cfg)?;
    let (corrector, cr) = train_corrector(&corpus, &zero_step, encoder, cfg)?;
    Ok(Trained {
        zero_step,
        corrector,
        reports: [zr, cr],
        corpus_hash: corpus_hash(prompts),
        corpus_size: prompts.len(),
    })
}

pub fn save(dir: &Path, trained: &Trained, tokenizer: &dyn Tokenizer, cfg: &TrainConfig) -> anyhow::Result<CheckpointManifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut bytes = Vec::new();
    for m in [&trained.zero_step, &trained.corrector] {
        for v in m.to_blob() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let params = dir.join(PARAMS_FILE);
    fs::write(&params, bytes).with_context(|| format!("writing {}", params.display()))?;
    let last = |r: &TrainReport| r.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        vocab: vocab_words(tokenizer),
        dims: CheckpointDims {
            zero_step: trained.zero_step.dims().clone(),
            corrector: trained.corrector.dims().clone(),
        },
        max_len: trained.zero_step.max_len(),
        training_config: cfg.clone(),
        corpus_hash: trained.corpus_hash.clone(),
        corpus_size: trained.corpus_size,
        final_losses: [last(&trained.reports[0]), last(&trained.reports[1])],
        created_at: chrono::Utc::now().to_rfc3339(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn blob_len(dims: &ModelDims) -> usize {
    2 * dims.feature_dim() + dims.param_count()
}

pub fn load_models(dir: &Path) -> anyhow::Result<(SequenceModel, SequenceModel, CheckpointManifest)> {
    let manifest: CheckpointManifest = read_json(&dir.join(MANIFEST_FILE))?;
    ensure!(manifest.format == FORMAT, "unsupported checkpoint format {:?}", manifest.format);
    let params = dir.join(PARAMS_FILE);
    let bytes = fs::read(&params).with_context(|| format!("reading {}", params.display()))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let (zl, cl) = (blob_len(&manifest.dims.zero_step), blob_len(&manifest.dims.corrector));
    if bytes.len() % 8 != 0 || values.len() != zl + cl {
        bail!("{}: expected {} values, found {} bytes", params.display(), zl + cl, bytes.len());
    }
    let zero = SequenceModel::from_blob(manifest.dims.zero_step.clone(), &values[..zl])?;
    let corr = SequenceModel::from_blob(manifest.dims.corrector.clone(), &values[zl..])?;
    Ok((zero, corr, manifest))
}

/// Load a checkpoint and check its vocabulary against `encoder`.
pub fn load<E: TextEncoder>(dir: &Path, encoder: E) -> anyhow::Result<(E2TBundle<E>, CheckpointManifest)> {
    let (zero, corr, manifest) =
        load_models(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    if manifest.vocab != vocab_words(encoder.tokenizer()) {
        bail!("checkpoint {} was trained with a different vocabulary", dir.display());
    }
    Ok((E2TBundle::new(zero, corr, encoder)?, manifest))
}
