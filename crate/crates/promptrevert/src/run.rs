//! Run artifacts: manifest, per-image records and fixture listings.

use std::collections::BTreeMap;
use std::time::Instant;

use promptrevert_core::eval::MetricsReport;
use promptrevert_core::optimizer::Clock;
use promptrevert_core::types::InversionConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FIXTURES_FILE: &str = "fixtures.json";
pub const CAPTIONS_FILE: &str = "captions.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";

/// Monotonic seconds since construction.
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_s(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Stable id of a configuration: the first 16 hex digits of the SHA-256 of
/// its JSON form.
pub fn run_id(config: &Config) -> String {
    let json = serde_json::to_vec(config).expect("serializable");
    hex::encode(&Sha256::digest(&json)[..8])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: Config,
    /// Image id to content hash.
    pub input_hashes: BTreeMap<String, String>,
    pub component_versions: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub id: String,
    pub image_hash: String,
    pub initial_prompt: String,
    pub prompt: String,
    pub loss_trace: Vec<f64>,
    pub wall_time_s: f64,
    pub config: InversionConfig,
    pub metrics: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub run_id: String,
    pub id: String,
    pub path: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub id: String,
    pub image: String,
    pub hash: String,
    pub reference: String,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub id: String,
    pub prompt: String,
    pub reference: String,
    pub metrics: MetricsReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    /// Population moments; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub metrics: BTreeMap<String, Moments>,
}

impl Summary {
    pub fn from_reports(reports: &[MetricsReport]) -> Self {
        let mut metrics = BTreeMap::new();
        let mut add = |name: &str, values: Vec<f64>| {
            if let Some(m) = Moments::of(&values) {
                metrics.insert(name.to_string(), m);
            }
        };
        add("image_cosine", reports.iter().map(|r| r.image_cosine).collect());
        add("perceptual_distance", reports.iter().filter_map(|r| r.perceptual_distance).collect());
        add("text_precision", reports.iter().map(|r| r.text_precision).collect());
        add("text_recall", reports.iter().map(|r| r.text_recall).collect());
        add("text_f1", reports.iter().map(|r| r.text_f1).collect());
        add("token_f1", reports.iter().map(|r| r.token_f1).collect());
        add("perplexity", reports.iter().map(|r| r.perplexity).collect());
        Self {
            count: reports.len(),
            metrics,
        }
    }
}
