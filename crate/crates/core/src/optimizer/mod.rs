mod discrete;
mod pipeline;
mod projection;
mod refine;

pub use discrete::{discrete_invert, DiscreteInit, DiscreteResult};
pub use pipeline::{empirical_std, invert, invert_observed, random_embedding, stage, Clock, NullClock};
pub use projection::{project_to_vocab, VocabEmbeddingTable};
pub use refine::{refine_embedding, refine_embedding_observed, EpochRecord, OptTrace};
