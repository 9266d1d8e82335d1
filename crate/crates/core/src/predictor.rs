//! Latent sequence continuation.
//!
//! Songs are cut into fixed-length groups, each group encoded to one latent
//! pair by the segment VAE; the predictor fills in the latents of future
//! groups from the known prefix plus timeline-wide conditions. Three
//! variants are supported:
//!
//! * `b1` — unidirectional LSTM stack over masked latents only; sees no
//!   future information.
//! * `b2` — bidirectional stack, adds a per-group chord-function condition
//!   across the whole timeline.
//! * `proposed` — bidirectional stack conditioned on chord function and on
//!   every group's rhythm latent; predicts only the pitch half `z_p`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{Graph, Var};
use crate::harmony::{function_track, CellFunction, FUNCTION_DIM};
use crate::lstm::{bilstm_layer, bind_lstm, init_lstm_params, lstm_layer};
use crate::params::{adam_step, AdamState, ParamStore, StoreBinding};
use crate::rng::DetRng;
use crate::symbolic::{grid_to_notes, quantize, segment_song, MelodyGrid, NoteEvent, Segment, SongEvents, SymbolicError};
use crate::tensor::Tensor;
use crate::vae::{decode, encode, EncodeMode, LatentPair, VaeConfig, VaeError};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("song yields {got} segments, continuation needs at least {need}")]
    SongTooShort { got: usize, need: usize },
    #[error("no examples to train on")]
    EmptyExamples,
    #[error("example has {got} groups, task expects {want}")]
    GroupCount { got: usize, want: usize },
    #[error("latent dims {got} do not match VAE config {want}")]
    LatentDim { got: usize, want: usize },
    #[error("parameter {name} has shape {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    ParamShape {
        name: String,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("loss became non-finite at epoch {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

/// Continuation window geometry: `total_groups` consecutive groups of
/// `segment_len` cells, of which the first `known_groups` are given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContinuationTask {
    pub total_groups: usize,
    pub known_groups: usize,
    pub segment_len: usize,
}

impl ContinuationTask {
    pub fn new(total_groups: usize, known_groups: usize, segment_len: usize) -> Self {
        assert!(
            known_groups > 0 && known_groups < total_groups,
            "need 0 < known {known_groups} < total {total_groups}"
        );
        ContinuationTask {
            total_groups,
            known_groups,
            segment_len,
        }
    }

    pub fn unknown_groups(&self) -> usize {
        self.total_groups - self.known_groups
    }
}

impl Default for ContinuationTask {
    fn default() -> Self {
        ContinuationTask::new(10, 5, 32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    B1,
    B2,
    Proposed,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::B1, Variant::B2, Variant::Proposed];

    pub fn bidirectional(&self) -> bool {
        !matches!(self, Variant::B1)
    }

    pub fn input_dim(&self, zp_dim: usize, zr_dim: usize) -> usize {
        match self {
            Variant::B1 => zp_dim + zr_dim + 1,
            Variant::B2 => zp_dim + zr_dim + 1 + FUNCTION_DIM,
            Variant::Proposed => zp_dim + 1 + FUNCTION_DIM + zr_dim,
        }
    }

    pub fn target_dim(&self, zp_dim: usize, zr_dim: usize) -> usize {
        match self {
            Variant::Proposed => zp_dim,
            _ => zp_dim + zr_dim,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::B1 => "b1",
            Variant::B2 => "b2",
            Variant::Proposed => "proposed",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "b1" => Ok(Variant::B1),
            "b2" => Ok(Variant::B2),
            "proposed" => Ok(Variant::Proposed),
            other => Err(format!("unknown variant {other:?}, expected b1|b2|proposed")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictorConfig {
    pub layers: usize,
    pub hidden: usize,
    pub shortcuts: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            layers: 8,
            hidden: 64,
            shortcuts: true,
            lr: 1e-3,
            epochs: 60,
            batch_size: 16,
            seed: 42,
        }
    }
}

/// One training window: the latent pairs and pooled chord-function labels of
/// `total_groups` consecutive groups.
#[derive(Debug, Clone)]
pub struct LatentSequenceExample {
    pub latents: Vec<LatentPair>,
    pub functions: Vec<CellFunction>,
    pub song_id: String,
    pub group_offsets: Vec<usize>,
}

/// Most frequent label across a group's cells; ties break toward the lower
/// label index (T, D, S, O, pad order).
pub fn modal_function(cells: &[CellFunction]) -> CellFunction {
    let mut counts = [0usize; FUNCTION_DIM];
    for c in cells {
        counts[c.index()] += 1;
    }
    let mut best = 0;
    for (i, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = i;
        }
    }
    CellFunction::from_index(best)
}

/// Cut a song into sliding continuation windows: deterministic (mean) encode
/// of every group plus per-group modal chord functions. Too-short songs give
/// an empty list.
pub fn make_examples(
    song: &SongEvents,
    song_id: &str,
    vae_store: &ParamStore,
    vae_cfg: &VaeConfig,
    task: &ContinuationTask,
    timestep_sec: f64,
) -> Result<Vec<LatentSequenceExample>, PredictorError> {
    let (grid, chords) = quantize(song, timestep_sec)?;
    let segments = segment_song(&grid, &chords, task.segment_len);
    if segments.len() < task.total_groups {
        return Ok(Vec::new());
    }
    let refs: Vec<&Segment> = segments.iter().collect();
    let latents = encode(vae_store, vae_cfg, &refs, EncodeMode::Deterministic)?;
    let ftrack = function_track(&song.chords, song.key, grid.len(), timestep_sec);
    let group_functions: Vec<CellFunction> = (0..segments.len())
        .map(|s| {
            let start = s * task.segment_len;
            let stop = ((s + 1) * task.segment_len).min(ftrack.cells.len());
            if start >= stop {
                CellFunction::Pad
            } else {
                modal_function(&ftrack.cells[start..stop])
            }
        })
        .collect();

    let mut out = Vec::new();
    for w in 0..=(segments.len() - task.total_groups) {
        out.push(LatentSequenceExample {
            latents: latents[w..w + task.total_groups].to_vec(),
            functions: group_functions[w..w + task.total_groups].to_vec(),
            song_id: song_id.to_string(),
            group_offsets: (w..w + task.total_groups).collect(),
        });
    }
    Ok(out)
}

/// Per-group model input vectors for one example. Unknown groups carry
/// zeroed latents plus a known-flag of 0; conditions (chord function for b2
/// and proposed, rhythm latents for proposed) span the whole timeline.
pub fn build_inputs(
    example: &LatentSequenceExample,
    variant: Variant,
    task: &ContinuationTask,
) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(task.total_groups);
    for (i, lat) in example.latents.iter().enumerate() {
        let known = i < task.known_groups;
        let flag = if known { 1.0 } else { 0.0 };
        let mut row = Vec::new();
        match variant {
            Variant::B1 | Variant::B2 => {
                if known {
                    row.extend_from_slice(&lat.z_p);
                    row.extend_from_slice(&lat.z_r);
                } else {
                    row.extend(std::iter::repeat(0.0).take(lat.z_p.len() + lat.z_r.len()));
                }
                row.push(flag);
                if variant == Variant::B2 {
                    row.extend_from_slice(&example.functions[i].one_hot());
                }
            }
            Variant::Proposed => {
                if known {
                    row.extend_from_slice(&lat.z_p);
                } else {
                    row.extend(std::iter::repeat(0.0).take(lat.z_p.len()));
                }
                row.push(flag);
                row.extend_from_slice(&example.functions[i].one_hot());
                row.extend_from_slice(&lat.z_r);
            }
        }
        rows.push(row);
    }
    rows
}

/// Regression targets at the unknown groups: the full latent for the
/// baselines, the pitch half for the proposed variant.
pub fn build_targets(
    example: &LatentSequenceExample,
    variant: Variant,
    task: &ContinuationTask,
) -> Vec<Vec<f64>> {
    example.latents[task.known_groups..]
        .iter()
        .map(|lat| match variant {
            Variant::Proposed => lat.z_p.clone(),
            _ => {
                let mut v = lat.z_p.clone();
                v.extend_from_slice(&lat.z_r);
                v
            }
        })
        .collect()
}

pub fn init_predictor_params(
    variant: Variant,
    cfg: &PredictorConfig,
    zp_dim: usize,
    zr_dim: usize,
    rng: &mut DetRng,
) -> ParamStore {
    let mut store = ParamStore::new();
    let in_dim = variant.input_dim(zp_dim, zr_dim);
    let layer_out = if variant.bidirectional() {
        2 * cfg.hidden
    } else {
        cfg.hidden
    };
    for l in 0..cfg.layers {
        let input = if l == 0 { in_dim } else { layer_out };
        init_lstm_params(&mut store, &format!("l{l}.fwd"), input, cfg.hidden, rng);
        if variant.bidirectional() {
            init_lstm_params(&mut store, &format!("l{l}.bwd"), input, cfg.hidden, rng);
        }
    }
    let bound = 1.0 / (layer_out as f64).sqrt();
    let target = variant.target_dim(zp_dim, zr_dim);
    store.insert("head.w", Tensor::uniform(layer_out, target, bound, rng));
    store.insert("head.b", Tensor::zeros(1, target));
    store
}

fn check_predictor_store(
    store: &ParamStore,
    variant: Variant,
    cfg: &PredictorConfig,
    zp_dim: usize,
    zr_dim: usize,
) -> Result<(), PredictorError> {
    let in_dim = variant.input_dim(zp_dim, zr_dim);
    let layer_out = if variant.bidirectional() {
        2 * cfg.hidden
    } else {
        cfg.hidden
    };
    let mut expect: Vec<(String, usize, usize)> = Vec::new();
    for l in 0..cfg.layers {
        let input = if l == 0 { in_dim } else { layer_out };
        let dirs: &[&str] = if variant.bidirectional() {
            &["fwd", "bwd"]
        } else {
            &["fwd"]
        };
        for d in dirs {
            expect.push((format!("l{l}.{d}.wx"), input, 4 * cfg.hidden));
            expect.push((format!("l{l}.{d}.wh"), cfg.hidden, 4 * cfg.hidden));
            expect.push((format!("l{l}.{d}.b"), 1, 4 * cfg.hidden));
        }
    }
    expect.push(("head.w".into(), layer_out, variant.target_dim(zp_dim, zr_dim)));
    expect.push(("head.b".into(), 1, variant.target_dim(zp_dim, zr_dim)));
    for (name, rows, cols) in expect {
        if !store.contains(&name) {
            return Err(PredictorError::MissingParam(name));
        }
        let t = store.get(&name);
        if t.rows() != rows || t.cols() != cols {
            return Err(PredictorError::ParamShape {
                name,
                got_rows: t.rows(),
                got_cols: t.cols(),
                want_rows: rows,
                want_cols: cols,
            });
        }
    }
    Ok(())
}

/// Stacked recurrent forward pass; returns the head output at every group
/// (B x target_dim each). Identity shortcuts connect equal-width layers,
/// first layer excluded.
fn forward_graph(
    g: &mut Graph,
    binding: &StoreBinding,
    variant: Variant,
    cfg: &PredictorConfig,
    inputs: &[Var],
) -> Vec<Var> {
    let mut seq: Vec<Var> = inputs.to_vec();
    for l in 0..cfg.layers {
        let fwd = bind_lstm(binding, &format!("l{l}.fwd"), cfg.hidden);
        let out = if variant.bidirectional() {
            let bwd = bind_lstm(binding, &format!("l{l}.bwd"), cfg.hidden);
            bilstm_layer(g, &seq, &fwd, &bwd)
        } else {
            lstm_layer(g, &seq, &fwd)
        };
        let shortcut = cfg.shortcuts
            && l > 0
            && g.value(out[0]).cols() == g.value(seq[0]).cols();
        seq = if shortcut {
            out.iter()
                .zip(&seq)
                .map(|(&o, &i)| g.add(o, i))
                .collect()
        } else {
            out
        };
    }
    let head_w = binding.var("head.w");
    let head_b = binding.var("head.b");
    seq.iter()
        .map(|&h| {
            let o = g.matmul(h, head_w);
            g.add_bias(o, head_b)
        })
        .collect()
}

fn group_input_tensors(
    g: &mut Graph,
    examples: &[&LatentSequenceExample],
    variant: Variant,
    task: &ContinuationTask,
) -> Vec<Var> {
    let rows: Vec<Vec<Vec<f64>>> = examples
        .iter()
        .map(|e| build_inputs(e, variant, task))
        .collect();
    (0..task.total_groups)
        .map(|gi| {
            let width = rows[0][gi].len();
            let mut m = Tensor::zeros(examples.len(), width);
            for (b, r) in rows.iter().enumerate() {
                m.row_slice_mut(b).copy_from_slice(&r[gi]);
            }
            g.constant(m)
        })
        .collect()
}

/// Predicted latents at the unknown groups for each example.
pub fn forward(
    store: &ParamStore,
    variant: Variant,
    cfg: &PredictorConfig,
    task: &ContinuationTask,
    examples: &[&LatentSequenceExample],
    zp_dim: usize,
    zr_dim: usize,
) -> Result<Vec<Vec<Vec<f64>>>, PredictorError> {
    check_predictor_store(store, variant, cfg, zp_dim, zr_dim)?;
    for e in examples {
        if e.latents.len() != task.total_groups {
            return Err(PredictorError::GroupCount {
                got: e.latents.len(),
                want: task.total_groups,
            });
        }
        if e.latents[0].z_p.len() != zp_dim || e.latents[0].z_r.len() != zr_dim {
            return Err(PredictorError::LatentDim {
                got: e.latents[0].z_p.len() + e.latents[0].z_r.len(),
                want: zp_dim + zr_dim,
            });
        }
    }
    if examples.is_empty() {
        return Ok(Vec::new());
    }
    let mut g = Graph::new();
    let binding = store.bind_const(&mut g);
    let inputs = group_input_tensors(&mut g, examples, variant, task);
    let preds = forward_graph(&mut g, &binding, variant, cfg, &inputs);
    let mut out = vec![Vec::with_capacity(task.unknown_groups()); examples.len()];
    for &p in preds.iter().skip(task.known_groups) {
        let v = g.value(p);
        for (b, rows) in out.iter_mut().enumerate() {
            rows.push(v.row_slice(b).to_vec());
        }
    }
    Ok(out)
}

/// Epoch-mean training MSE curve entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorEpoch {
    pub epoch: usize,
    pub mse: f64,
}

/// Adam on the mean squared error over unknown groups only.
pub fn train_predictor(
    examples: &[LatentSequenceExample],
    variant: Variant,
    cfg: &PredictorConfig,
    task: &ContinuationTask,
) -> Result<(ParamStore, Vec<PredictorEpoch>), PredictorError> {
    if examples.is_empty() {
        return Err(PredictorError::EmptyExamples);
    }
    for e in examples {
        if e.latents.len() != task.total_groups {
            return Err(PredictorError::GroupCount {
                got: e.latents.len(),
                want: task.total_groups,
            });
        }
    }
    let zp_dim = examples[0].latents[0].z_p.len();
    let zr_dim = examples[0].latents[0].z_r.len();
    let mut init_rng = DetRng::stream(cfg.seed, &format!("predictor.{variant}.init"));
    let mut store = init_predictor_params(variant, cfg, zp_dim, zr_dim, &mut init_rng);
    let mut shuffle_rng = DetRng::stream(cfg.seed, &format!("predictor.{variant}.shuffle"));
    let mut adam = AdamState::new(&store, cfg.lr);

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&LatentSequenceExample> =
                chunk.iter().map(|&i| &examples[i]).collect();
            let loss = train_step(&mut store, &mut adam, &batch, variant, cfg, task);
            if !loss.is_finite() {
                return Err(PredictorError::NonFinite(epoch));
            }
            sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        curve.push(PredictorEpoch {
            epoch,
            mse: sum / seen as f64,
        });
    }
    Ok((store, curve))
}

fn train_step(
    store: &mut ParamStore,
    adam: &mut AdamState,
    batch: &[&LatentSequenceExample],
    variant: Variant,
    cfg: &PredictorConfig,
    task: &ContinuationTask,
) -> f64 {
    let mut g = Graph::new();
    let binding = store.bind(&mut g);
    let inputs = group_input_tensors(&mut g, batch, variant, task);
    let preds = forward_graph(&mut g, &binding, variant, cfg, &inputs);
    let unknown: Vec<Var> = preds[task.known_groups..].to_vec();
    let stacked = g.concat_rows(&unknown);

    let target_dim = variant.target_dim(
        batch[0].latents[0].z_p.len(),
        batch[0].latents[0].z_r.len(),
    );
    let mut target = Tensor::zeros(task.unknown_groups() * batch.len(), target_dim);
    let mut row = 0;
    for gi in 0..task.unknown_groups() {
        for e in batch {
            let t = build_targets(e, variant, task);
            target.row_slice_mut(row).copy_from_slice(&t[gi]);
            row += 1;
        }
    }
    let loss = g.mse(stacked, &target);
    let value = g.scalar(loss);
    g.backward(loss);
    store.accumulate_grads(&g, &binding);
    adam_step(store, adam);
    value
}

/// Mean MSE of a trained predictor over a set of examples (no updates).
pub fn evaluate_mse(
    store: &ParamStore,
    examples: &[LatentSequenceExample],
    variant: Variant,
    cfg: &PredictorConfig,
    task: &ContinuationTask,
) -> Result<f64, PredictorError> {
    if examples.is_empty() {
        return Err(PredictorError::EmptyExamples);
    }
    let refs: Vec<&LatentSequenceExample> = examples.iter().collect();
    let zp_dim = examples[0].latents[0].z_p.len();
    let zr_dim = examples[0].latents[0].z_r.len();
    let preds = forward(store, variant, cfg, task, &refs, zp_dim, zr_dim)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (e, rows) in examples.iter().zip(&preds) {
        let targets = build_targets(e, variant, task);
        for (p, t) in rows.iter().zip(&targets) {
            for (a, b) in p.iter().zip(t) {
                sum += (a - b) * (a - b);
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// A generated continuation: the full token grid (known prefix copied from
/// the reference, the rest decoded from predicted latents) and its notes.
#[derive(Debug, Clone)]
pub struct Continuation {
    pub grid: MelodyGrid,
    pub notes: Vec<NoteEvent>,
}

/// Continue a reference song. The first `known_groups` groups are copied
/// verbatim; conditions for the remaining groups (chord functions, chroma,
/// and for the proposed variant the rhythm latents) come from the reference.
pub fn continue_song(
    song: &SongEvents,
    vae_store: &ParamStore,
    vae_cfg: &VaeConfig,
    pred_store: &ParamStore,
    pred_cfg: &PredictorConfig,
    variant: Variant,
    task: &ContinuationTask,
    timestep_sec: f64,
) -> Result<Continuation, PredictorError> {
    let (grid, chords) = quantize(song, timestep_sec)?;
    let segments = segment_song(&grid, &chords, task.segment_len);
    if segments.len() < task.total_groups {
        return Err(PredictorError::SongTooShort {
            got: segments.len(),
            need: task.total_groups,
        });
    }
    let window: Vec<&Segment> = segments[..task.total_groups].iter().collect();
    let latents = encode(vae_store, vae_cfg, &window, EncodeMode::Deterministic)?;
    let ftrack = function_track(&song.chords, song.key, grid.len(), timestep_sec);
    let functions: Vec<CellFunction> = (0..task.total_groups)
        .map(|s| {
            let start = s * task.segment_len;
            let stop = ((s + 1) * task.segment_len).min(ftrack.cells.len());
            if start >= stop {
                CellFunction::Pad
            } else {
                modal_function(&ftrack.cells[start..stop])
            }
        })
        .collect();
    let example = LatentSequenceExample {
        latents: latents.clone(),
        functions,
        song_id: String::new(),
        group_offsets: (0..task.total_groups).collect(),
    };
    let preds = forward(
        pred_store,
        variant,
        pred_cfg,
        task,
        &[&example],
        vae_cfg.zp_dim,
        vae_cfg.zr_dim,
    )?;

    let n = task.segment_len;
    let mut tokens: Vec<u8> = grid.tokens()[..task.known_groups * n]
        .iter()
        .map(|t| t.value())
        .collect();
    for (i, pred) in preds[0].iter().enumerate() {
        let group = task.known_groups + i;
        let (zp, zr): (Vec<f64>, Vec<f64>) = match variant {
            Variant::Proposed => (pred.clone(), latents[group].z_r.clone()),
            _ => (
                pred[..vae_cfg.zp_dim].to_vec(),
                pred[vae_cfg.zp_dim..].to_vec(),
            ),
        };
        let chroma: Vec<[f64; 12]> = window[group].chroma.iter().map(|c| c.to_vec12()).collect();
        let (_, decoded) = decode(vae_store, vae_cfg, &zp, &zr, &chroma)?;
        tokens.extend_from_slice(&decoded);
    }
    let out_grid = MelodyGrid::from_raw_sanitized(&tokens, timestep_sec);
    let notes = grid_to_notes(&out_grid);
    Ok(Continuation { grid: out_grid, notes })
}
