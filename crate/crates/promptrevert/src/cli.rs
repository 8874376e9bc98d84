use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use promptrevert_core::types::LossKind;

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "promptrevert", version, about = "Prompt inversion for latent diffusion models")]
pub struct Cli {
    /// YAML or JSON config; falls back to $PROMPTREVERT_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Invert target images into prompts.
    Invert(InvertArgs),
    /// Train the embedding-to-text models.
    #[command(name = "train-e2t")]
    TrainE2t(TrainArgs),
    /// Score a results file against its fixtures.
    Eval(EvalArgs),
    /// Remove or replace words in a prompt.
    Edit(EditArgs),
    /// Join two prompts.
    Fuse(FuseArgs),
    /// Evolve images by repeated inversion and fusion.
    Evolve(EvolveArgs),
    /// Write the synthetic fixture suite and training corpus.
    Fixtures(FixturesArgs),
}

/// Flags that override the `optimizer` section.
#[derive(Debug, Default, Args)]
pub struct OptimizerOverrides {
    #[arg(long)]
    pub max_epoch: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub denoise_steps: Option<usize>,
    #[arg(long)]
    pub init_prompt_len: Option<usize>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long, value_parser = parse_loss_kind)]
    pub loss_kind: Option<LossKind>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub correction_steps: Option<usize>,
}

fn parse_loss_kind(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: promptrevert_core::Error| e.to_string())
}

impl OptimizerOverrides {
    pub fn apply(&self, cfg: &mut Config) {
        let o = &mut cfg.optimizer;
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    o.$field = v;
                }
            )*};
        }
        set!(max_epoch, learning_rate, denoise_steps, init_prompt_len, noise_seed, loss_kind, beam_width, correction_steps);
    }
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    /// Image files or directories of .png/.ppm files.
    #[arg(long, required = true, num_args = 1..)]
    pub images: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Caption table (JSON hash -> caption); overrides the config.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// E2T checkpoint directory; overrides the config.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Write per-epoch loss records to `traces/<id>.jsonl`.
    #[arg(long)]
    pub trace: bool,
    /// Write refined embeddings to `embeddings/<id>.emb`.
    #[arg(long)]
    pub save_embeddings: bool,
    #[command(flatten)]
    pub overrides: OptimizerOverrides,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSONL file, one `{"prompt": ...}` per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs_zero: Option<usize>,
    #[arg(long)]
    pub epochs_corrector: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Directory written by `fixtures`.
    #[arg(long)]
    pub fixtures: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub remove: Vec<String>,
    /// `from=to`
    #[arg(long, value_parser = parse_pair)]
    pub replace: Vec<(String, String)>,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .ok_or_else(|| format!("expected from=to, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    pub first: String,
    pub second: String,
    /// Defaults to the encoder sequence length.
    #[arg(long)]
    pub max_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub images: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub generations: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: OptimizerOverrides,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}
