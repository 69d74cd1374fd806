//! Parallel corpora, NLI datasets, vocabularies and label schemes.

mod nli;
mod parallel;
mod vocab;

pub use nli::{
    load_nli, DatasetStats, LabelScheme, NliDataset, NliExample, NliMeta, Split, SplitStats,
    TagMatch, UNSPLIT,
};
pub use parallel::{
    encode_parallel, load_parallel, EncodedPair, ParallelExample, ParallelStats,
    DEFAULT_MAX_TRAIN_LEN,
};
pub use vocab::{build_vocab, Vocabulary, BOS, DEFAULT_MAX_VOCAB, EOS, PAD, RESERVED, UNK};
