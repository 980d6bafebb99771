//! The autoregressive decoding loop and its supporting pieces.

mod decode;
mod rng;
mod sampler;
mod source;
mod trace;

pub use decode::{
    step_distribution, DecodeRequest, Decoder, StepFailure, StepOutput, DEFAULT_MAX_NEW_TOKENS,
};
pub use rng::CounterRng;
pub use sampler::{candidate_distribution, sample, SamplerConfig};
pub use source::{
    CountingSource, DelayedSource, LogitSource, Modality, Query, SourceDescriptor, TextOnlyView,
};
pub use trace::{
    read_trace, step_counts, write_trace, DecodeResult, DecodeStepRecord, FinishReason, Mode,
    StepCounts,
};
