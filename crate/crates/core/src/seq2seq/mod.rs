//! Bidirectional LSTM encoder with an attentional LSTM decoder.

mod attention;
mod checkpoint;
mod config;
mod lstm;
mod model;
mod train;

pub use attention::{AdditiveAttention, AttentionMemory};
pub use checkpoint::{sidecar_path, Checkpoint};
pub use config::{NmtConfig, Profile};
pub use lstm::{LstmCell, FORGET_BIAS_INIT};
pub use model::{
    BatchLoss, DecoderState, EncodedBatch, EncoderOutput, LayerStates, LayerVars, ModelShape, Seq2Seq,
};
pub(crate) use model::argmax;
pub use train::{train_nmt, EvalRecord, StopReason, TrainLog};
