//! LSTM encoder/decoder with bilinear attention: teacher-forced training,
//! perplexity and greedy or beam decoding.

mod decode;
mod model;
mod train;

pub use decode::{decoder_registry, generate, Beam, DecodeConfig, Decoder, Greedy};
pub use model::{DecoderState, Encoded, GeneratorDims, GeneratorModel, LstmState, StepDecoder};
pub use train::{
    batch_loss_and_grads, perplexity, total_nll, train_generator, GeneratorConfig, Seq2SeqPair,
    TrainReport,
};
