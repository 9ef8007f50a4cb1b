//! Label-embedding construction: knowledge-graph filtering, retrofitting,
//! two-source merging, attribute reduction and label lookup.

mod embedding;
mod graph;
mod lookup;
mod merge;
mod retrofit;

pub use embedding::EmbeddingMatrix;
pub use graph::{filter_graph, Edge, KnowledgeGraph, VISUAL_RELATIONS};
pub use lookup::{build_label_matrix, lookup_label, read_attributes, resolve_label, LabelMatrix, Resolution};
pub use merge::{merge_embeddings, pca_reduce};
pub use retrofit::{retrofit, retrofit_objective, retrofit_with_report, RetrofitConfig, RetrofitReport};
