//! Data model, ingestion, labeling and synthetic corpora.

pub mod features;
pub mod io;
pub mod records;
pub mod synth;

pub use features::{load_features, save_features};
pub use io::{load_corpus, load_split, save_corpus, save_split};
pub use records::{
    label_from_votes, sentence_bounds, AnnotationRecord, Dataset, DatasetSplit, Mode, ProductGroup,
    ProductRecord, ReviewRecord, Sentence, Span,
};
pub use synth::{synthesize, GeneratorConfig, SynthCorpus};
