//! Synthetic bilingual corpus, secondary-language label masking and
//! per-utterance hotword lists.

mod corpus;
mod hotword;
mod io;
mod vocab;

pub(crate) use corpus::mix;
pub use corpus::{generate_corpus, generate_utterances, Corpus, CorpusConfig, Split, Utterance};
pub use hotword::{build_hotword_list, distractor_list, HotwordList, DEFAULT_HOTWORD_N};
pub use io::{parse_corpus, parse_entity_pool, read_corpus_file, read_entity_pool_file, serialize_corpus, serialize_entity_pool, write_corpus_file, write_entity_pool_file};
pub use vocab::{mask_l1, Lang, Phrase, Token, TokenId, Vocabulary};
