//! Reusable neural sequence blocks over the autodiff tape.

pub mod attention;
pub mod embedding;
pub mod params;
pub mod rnn;

pub use attention::{cls_pool, final_pool, AttentionBlock, AttentionWeights};
pub use embedding::{EmbeddingTable, CLS_ID, CLS_TOKEN, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
pub use params::{Binding, ParamId, ParamStore};
pub use rnn::BiRnn;
