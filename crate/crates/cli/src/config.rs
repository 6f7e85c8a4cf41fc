use std::path::{Path, PathBuf};

use orderlab::codec::sha256_hex;
use orderlab::data::{ingest, ingest_texts, synth_regression, synth_text_documents, Corpus, IngestConfig, RegressionSpec, SplitRatios};
use orderlab::estimator::EstimatorConfig;
use orderlab::model::ModelSpec;
use orderlab::numerics::sub_seed;
use orderlab::store::{StoreOptions, DEFAULT_K_LADDER};
use orderlab::trainer::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    SynthText {
        #[serde(default = "default_documents")]
        documents: usize,
        #[serde(default = "default_topics")]
        topics: usize,
    },
    SynthRegression {
        samples: usize,
        dim: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// One document per line.
    Files { paths: Vec<PathBuf> },
}

fn default_documents() -> usize {
    130
}

fn default_topics() -> usize {
    8
}

fn default_noise() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub source: DataSource,
    pub batches: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_min_length")]
    pub min_length: usize,
    #[serde(default)]
    pub split: SplitRatios,
}

fn default_seq_len() -> usize {
    64
}

fn default_min_length() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    #[serde(default = "default_true")]
    pub second_order: bool,
    #[serde(default = "default_ladder")]
    pub k_ladder: Vec<usize>,
}

impl Default for StoreSection {
    fn default() -> Self {
        Self { second_order: true, k_ladder: default_ladder() }
    }
}

fn default_true() -> bool {
    true
}

fn default_ladder() -> Vec<usize> {
    DEFAULT_K_LADDER.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaSection {
    #[serde(default = "default_eight")]
    pub population: usize,
    #[serde(default = "default_eight")]
    pub generations: usize,
    #[serde(default = "default_mutation")]
    pub mutation_prob: f64,
    #[serde(default = "default_true")]
    pub include_identity: bool,
}

impl Default for GaSection {
    fn default() -> Self {
        Self {
            population: 8,
            generations: 8,
            mutation_prob: default_mutation(),
            include_identity: true,
        }
    }
}

fn default_eight() -> usize {
    8
}

fn default_mutation() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Orders sampled for AbsDiff.
    #[serde(default = "default_orders")]
    pub orders: usize,
    #[serde(default = "default_cell_samples")]
    pub cell_samples: usize,
    #[serde(default = "default_timing_orders")]
    pub timing_orders: usize,
    #[serde(default = "default_n_values")]
    pub n_values: Vec<usize>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            orders: default_orders(),
            cell_samples: default_cell_samples(),
            timing_orders: default_timing_orders(),
            n_values: default_n_values(),
        }
    }
}

fn default_orders() -> usize {
    10
}

fn default_cell_samples() -> usize {
    orderlab::analysis::DEFAULT_CELL_SAMPLES
}

fn default_timing_orders() -> usize {
    50
}

fn default_n_values() -> Vec<usize> {
    orderlab::analysis::DEFAULT_N_VALUES.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub data: DataSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub store: StoreSection,
    #[serde(default)]
    pub ga: GaSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// Line and column (1-based) of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
    (line, column)
}

/// Tagged tables report the table header; narrow it to the offending key.
fn unknown_key_offset(text: &str, message: &str, span: std::ops::Range<usize>) -> Option<usize> {
    let key = message.strip_prefix("unknown field `")?.split('`').next()?;
    let mut pos = span.start;
    for (i, line) in text.get(span.start..)?.split_inclusive('\n').enumerate() {
        let trimmed = line.trim_start();
        if i > 0 && pos >= span.end && trimmed.starts_with('[') {
            break;
        }
        if let Some(rest) = trimmed.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(pos + (line.len() - trimmed.len()));
            }
        }
        pos += line.len();
    }
    None
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let offset = e.span().map(|s| unknown_key_offset(text, e.message(), s.clone()).unwrap_or(s.start));
            let (line, column) = offset.map_or((0, 0), |o| line_col(text, o));
            CliError::ConfigParse { message: e.message().to_string(), line, column }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.adam.validate()?;
        self.estimator.validate()?;
        self.data.split.validate()?;
        self.ga_config().validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn digest(&self) -> String {
        let canonical = RunConfig { out_dir: None, ..self.clone() };
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }

    pub fn seed_for(&self, label: &str) -> u64 {
        sub_seed(self.seed, label)
    }

    pub fn store_options(&self) -> StoreOptions {
        StoreOptions {
            second_order: self.store.second_order,
            k_ladder: self.store.k_ladder.clone(),
            seed: self.seed_for("projection"),
        }
    }

    pub fn ga_config(&self) -> orderlab::curriculum::GaConfig {
        orderlab::curriculum::GaConfig {
            population: self.ga.population,
            generations: self.ga.generations,
            mutation_prob: self.ga.mutation_prob,
            seed: self.seed_for("ga"),
            include_identity: self.ga.include_identity,
        }
    }

    pub fn build_corpus(&self, base: &Path) -> Result<Corpus, CliError> {
        let d = &self.data;
        let seed = self.seed_for("data");
        let ingest_cfg = IngestConfig {
            min_length: d.min_length,
            split: d.split,
            batches: d.batches,
            seq_len: d.seq_len,
            seed,
            ..Default::default()
        };
        let corpus = match &d.source {
            DataSource::SynthText { documents, topics } => {
                ingest_texts(&synth_text_documents(seed, *documents, *topics), &ingest_cfg)?
            }
            DataSource::SynthRegression { samples, dim, noise } => synth_regression(&RegressionSpec {
                seed,
                n_samples: *samples,
                dim: *dim,
                batches: d.batches,
                noise: *noise,
            })?,
            DataSource::Files { paths } => {
                let paths: Vec<PathBuf> = paths.iter().map(|p| base.join(p)).collect();
                ingest(&paths, &ingest_cfg)?
            }
        };
        Ok(corpus)
    }
}
