use alloc::boxed::Box;
use alloc::string::String;

/// Errors produced by the inversion toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("token id {id} is outside the vocabulary (size {vocab_size})")]
    OutOfVocabulary { id: u32, vocab_size: usize },

    #[error("word {word:?} is not in the vocabulary")]
    UnknownWord { word: String },

    #[error("prompt has {len} tokens but the encoder accepts at most {max}")]
    PromptTooLong { len: usize, max: usize },

    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },

    #[error("non-finite value in {0}")]
    NonFiniteValue(&'static str),

    #[error("pixel value {value} outside [0, 1]")]
    PixelRange { value: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no caption for image {hash}")]
    NoCaption { hash: String },

    #[error("transport error after {retries} retries: {message}")]
    Transport { retries: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("empty prompt")]
    EmptyPrompt,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty vocabulary table")]
    EmptyTable,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("generation {generation}: {source}")]
    Generation {
        generation: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    /// Wrap this error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
