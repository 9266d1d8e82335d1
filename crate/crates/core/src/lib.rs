//! Segment-level melody continuation and analysis.
//!
//! The crate covers a two-stage generative pipeline plus its evaluation
//! tooling:
//!
//! 1. [`symbolic`] / [`harmony`] — token-grid melody representation, chord
//!    chroma, and chord-function labelling.
//! 2. [`vae`] — a disentangled segment VAE mapping 8-beat windows to pitch
//!    and rhythm latents, built on the [`graph`] autodiff kernel.
//! 3. [`predictor`] — latent sequence continuation with chord-function and
//!    rhythm-latent conditions (three model variants).
//! 4. [`metrics`] / [`vmo`] — duration-ratio rhythm accuracy and Variable
//!    Markov Oracle structure analysis (information rate, repeated
//!    patterns).
//!
//! Everything is deterministic for a fixed seed: random choices flow from
//! named [`rng::DetRng`] sub-streams, and checkpoints serialize bit-exactly.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod harmony;
pub mod lstm;
pub mod metrics;
pub mod params;
pub mod predictor;
pub mod rng;
pub mod symbolic;
pub mod tensor;
pub mod vae;
pub mod vmo;

pub use graph::{Graph, Var};
pub use harmony::{
    chord_function, function_track, scale_degree, CellFunction, ChordFunction, FunctionTrack,
    FUNCTION_DIM,
};
pub use metrics::{
    nearest_index, rhythm_accuracy, token_accuracy, MetricError, Normalization,
    RhythmAccuracyConfig,
};
pub use params::{adam_step, AdamState, ParamStore};
pub use predictor::{
    build_inputs, build_targets, continue_song, make_examples, train_predictor, Continuation,
    ContinuationTask, LatentSequenceExample, PredictorConfig, PredictorError, Variant,
};
pub use rng::DetRng;
pub use symbolic::{
    grid_to_notes, normalize_to_bpm, one_hot_melody, parse_corpus, quantize, segment_song,
    synth_corpus, transpose, write_corpus, ChordEvent, ChordTrack, Chroma, CorpusError, Key,
    MelodyGrid, MelodyToken, Mode, NoteEvent, Segment, SongEvents, SymbolicError, SynthParams,
    DEFAULT_SEGMENT_LEN, DEFAULT_TIMESTEP_SEC, HOLD, REST, TOKEN_DIM,
};
pub use tensor::Tensor;
pub use vae::{
    decode, encode, reconstruct_tokens, rhythm_decode, rhythm_tokens, train_vae, EncodeMode,
    EpochLoss, LatentPair, RhythmToken, VaeConfig, VaeError, VaeLossParts,
};
pub use vmo::{
    build_oracle, build_oracle_with, find_patterns, frame_distance, information_rate,
    threshold_sweep, FrameSeries, Oracle, Pattern, SweepPoint, SweepResult, REST_FRAME,
};
