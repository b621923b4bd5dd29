//! Synthetic corpora, feature splicing and the on-disk text formats.

mod codec;
mod corpus;
mod text;

pub use codec::{
    parse_adapt_report, parse_alignment, parse_features, parse_lattice, parse_model, parse_train_run,
    read_alignment, read_features, read_lattice, read_model, read_train_run, write_adapt_report,
    write_alignment, write_features, write_lattice, write_model, write_train_run, format_adapt_report,
    format_alignment, format_features, format_lattice, format_model, format_train_run, read_adapt_report,
};
pub use corpus::{
    generate_corpus, splice, Corpus, CorpusMetadata, CorpusSpec, EmissionModel, Split, SpeakerProfile,
    SpeakerStats, Utterance,
};
pub use text::format_real;
