//! Curation and batching for instruction-tuning corpora of code.
//!
//! Selection clusters instruction embeddings with k-means and keeps, inside
//! each cluster, the samples whose response is hardest to predict without its
//! instruction relative to with it (the IFD ratio). Packing sorts each batch by
//! length, bins samples first-fit-decreasing into context-sized rows without
//! truncation, and pads every row to the longest row in its batch.
//!
//! ```
//! use codesift::pack::{plan_dynamic_pack, PackItem, PackScope};
//!
//! let items: Vec<_> = [5, 3, 4, 2, 6, 1].iter().enumerate()
//!     .map(|(i, &l)| PackItem::new(format!("s{i}"), l))
//!     .collect();
//! let plan = plan_dynamic_pack(&items, 8, 6, PackScope::Batch).unwrap();
//! assert_eq!(plan.stats.total_padding_tokens, 3);
//! ```

pub mod cluster;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod ifd;
pub mod jsonl;
pub mod pack;
pub mod pipeline;
pub mod select;
pub mod synth;
pub mod tokenize;

pub use cluster::{kmeans_fit, Clustering, KMeansConfig};
pub use corpus::{load_corpus, Corpus, FieldMapping, Sample};
pub use embed::{embed_instructions, EmbeddingSet};
pub use error::{Error, Result};
pub use ifd::{score_corpus, IfdRecord, NgramConfig, PerplexityProvider};
pub use pack::{compare_strategies, plan_dynamic_pack, PackItem, PackPlan, PackScope, PackStrategy};
pub use pipeline::{run_pipeline, run_sweep, RunConfig};
pub use select::{select, SelectionManifest, Strategy};
pub use tokenize::{ByteTokenizer, TokenCountProvider, TokenCounter};
