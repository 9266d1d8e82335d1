//! Disentangled segment VAE.
//!
//! A bidirectional recurrent encoder reads a fixed-length melody+chroma
//! segment and emits two independent Gaussian posteriors: a pitch-contour
//! latent `z_p` and a rhythm-pattern latent `z_r`. A recurrent decoder
//! reconstructs the 130-way token sequence from (z_p, z_r, chroma); a second,
//! smaller decoder must reproduce the segment's onset/hold/rest pattern from
//! `z_r` alone, which is what pushes rhythm information into `z_r` and, with
//! the KL penalty, out of `z_p`.

use thiserror::Error;

use crate::graph::{Graph, Var};
use crate::lstm::{bind_lstm, init_lstm_params, lstm_cell, LstmWeights};
use crate::params::{adam_step, AdamState, ParamStore, StoreBinding};
use crate::rng::DetRng;
use crate::symbolic::{MelodyToken, Segment, TOKEN_DIM};
use crate::tensor::Tensor;

pub const CHROMA_DIM: usize = 12;
pub const RHYTHM_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("no segments to train on")]
    EmptyCorpus,
    #[error("segment length {got} does not match configured length {expected}")]
    SegmentLength { expected: usize, got: usize },
    #[error("parameter {name} has shape {got_rows}x{got_cols}, config expects {want_rows}x{want_cols}")]
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
}

#[derive(Debug, Clone)]
pub struct VaeConfig {
    /// Segment length in grid cells.
    pub segment_len: usize,
    pub zp_dim: usize,
    pub zr_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub rhythm_hidden: usize,
    /// KL weight.
    pub beta: f64,
    /// Epochs over which the KL weight ramps linearly from 0 to `beta`;
    /// keeps the posterior from collapsing before the decoder uses it.
    pub kl_warmup_epochs: usize,
    /// Probability of feeding the ground-truth previous token during training.
    pub teacher_forcing: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            segment_len: 32,
            zp_dim: 16,
            zr_dim: 16,
            enc_hidden: 64,
            dec_hidden: 64,
            rhythm_hidden: 32,
            beta: 0.01,
            kl_warmup_epochs: 20,
            teacher_forcing: 0.5,
            epochs: 80,
            batch_size: 16,
            lr: 1.5e-3,
            seed: 42,
        }
    }
}

impl VaeConfig {
    pub fn encoder_input_dim(&self) -> usize {
        TOKEN_DIM + CHROMA_DIM
    }

    pub fn decoder_input_dim(&self) -> usize {
        TOKEN_DIM + self.zp_dim + self.zr_dim + CHROMA_DIM
    }

    pub fn rhythm_input_dim(&self) -> usize {
        RHYTHM_DIM + self.zr_dim
    }
}

/// Onset/hold/rest view of a melody segment, derived token-by-token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhythmToken {
    Onset,
    Hold,
    Rest,
}

impl RhythmToken {
    pub fn index(&self) -> usize {
        match self {
            RhythmToken::Onset => 0,
            RhythmToken::Hold => 1,
            RhythmToken::Rest => 2,
        }
    }
}

pub fn rhythm_tokens(tokens: &[MelodyToken]) -> Vec<RhythmToken> {
    tokens
        .iter()
        .map(|t| {
            if t.is_pitch() {
                RhythmToken::Onset
            } else if t.is_hold() {
                RhythmToken::Hold
            } else {
                RhythmToken::Rest
            }
        })
        .collect()
}

/// A segment's latent code: sampled (or mean) vectors plus the posterior
/// parameters they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub z_p: Vec<f64>,
    pub z_r: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub logvar_p: Vec<f64>,
    pub mean_r: Vec<f64>,
    pub logvar_r: Vec<f64>,
}

/// Initialize a fresh parameter store for the configured model.
pub fn init_vae_params(cfg: &VaeConfig, rng: &mut DetRng) -> ParamStore {
    let mut store = ParamStore::new();
    init_lstm_params(&mut store, "enc.fwd", cfg.encoder_input_dim(), cfg.enc_hidden, rng);
    init_lstm_params(&mut store, "enc.bwd", cfg.encoder_input_dim(), cfg.enc_hidden, rng);
    let bound = 1.0 / (2.0 * cfg.enc_hidden as f64).sqrt();
    // logvar halves of the head biases start at -2 so early samples stay
    // close to the posterior mean
    let head_bias = |dim: usize| {
        let mut b = Tensor::zeros(1, 2 * dim);
        for i in dim..2 * dim {
            b.set(0, i, -2.0);
        }
        b
    };
    store.insert(
        "enc.head_p.w",
        Tensor::uniform(2 * cfg.enc_hidden, 2 * cfg.zp_dim, bound, rng),
    );
    store.insert("enc.head_p.b", head_bias(cfg.zp_dim));
    store.insert(
        "enc.head_r.w",
        Tensor::uniform(2 * cfg.enc_hidden, 2 * cfg.zr_dim, bound, rng),
    );
    store.insert("enc.head_r.b", head_bias(cfg.zr_dim));
    init_lstm_params(&mut store, "dec.lstm", cfg.decoder_input_dim(), cfg.dec_hidden, rng);
    let dbound = 1.0 / (cfg.dec_hidden as f64).sqrt();
    store.insert(
        "dec.head.w",
        Tensor::uniform(cfg.dec_hidden, TOKEN_DIM, dbound, rng),
    );
    store.insert("dec.head.b", Tensor::zeros(1, TOKEN_DIM));
    init_lstm_params(&mut store, "rdec.lstm", cfg.rhythm_input_dim(), cfg.rhythm_hidden, rng);
    let rbound = 1.0 / (cfg.rhythm_hidden as f64).sqrt();
    store.insert(
        "rdec.head.w",
        Tensor::uniform(cfg.rhythm_hidden, RHYTHM_DIM, rbound, rng),
    );
    store.insert("rdec.head.b", Tensor::zeros(1, RHYTHM_DIM));
    store
}

/// Verify that a store holds exactly the shapes the config prescribes.
pub fn check_store(cfg: &VaeConfig, store: &ParamStore) -> Result<(), VaeError> {
    let expect: Vec<(String, usize, usize)> = expected_shapes(cfg);
    for (name, rows, cols) in expect {
        if !store.contains(&name) {
            return Err(VaeError::MissingParam(name));
        }
        let t = store.get(&name);
        if t.rows() != rows || t.cols() != cols {
            return Err(VaeError::ParamShape {
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

fn expected_shapes(cfg: &VaeConfig) -> Vec<(String, usize, usize)> {
    let mut v = Vec::new();
    for dir in ["enc.fwd", "enc.bwd"] {
        v.push((format!("{dir}.wx"), cfg.encoder_input_dim(), 4 * cfg.enc_hidden));
        v.push((format!("{dir}.wh"), cfg.enc_hidden, 4 * cfg.enc_hidden));
        v.push((format!("{dir}.b"), 1, 4 * cfg.enc_hidden));
    }
    v.push(("enc.head_p.w".into(), 2 * cfg.enc_hidden, 2 * cfg.zp_dim));
    v.push(("enc.head_p.b".into(), 1, 2 * cfg.zp_dim));
    v.push(("enc.head_r.w".into(), 2 * cfg.enc_hidden, 2 * cfg.zr_dim));
    v.push(("enc.head_r.b".into(), 1, 2 * cfg.zr_dim));
    v.push(("dec.lstm.wx".into(), cfg.decoder_input_dim(), 4 * cfg.dec_hidden));
    v.push(("dec.lstm.wh".into(), cfg.dec_hidden, 4 * cfg.dec_hidden));
    v.push(("dec.lstm.b".into(), 1, 4 * cfg.dec_hidden));
    v.push(("dec.head.w".into(), cfg.dec_hidden, TOKEN_DIM));
    v.push(("dec.head.b".into(), 1, TOKEN_DIM));
    v.push(("rdec.lstm.wx".into(), cfg.rhythm_input_dim(), 4 * cfg.rhythm_hidden));
    v.push(("rdec.lstm.wh".into(), cfg.rhythm_hidden, 4 * cfg.rhythm_hidden));
    v.push(("rdec.lstm.b".into(), 1, 4 * cfg.rhythm_hidden));
    v.push(("rdec.head.w".into(), cfg.rhythm_hidden, RHYTHM_DIM));
    v.push(("rdec.head.b".into(), 1, RHYTHM_DIM));
    v
}

fn check_segments(cfg: &VaeConfig, segments: &[&Segment]) -> Result<(), VaeError> {
    for s in segments {
        if s.len() != cfg.segment_len {
            return Err(VaeError::SegmentLength {
                expected: cfg.segment_len,
                got: s.len(),
            });
        }
    }
    Ok(())
}

/// Posterior heads of an encoded batch.
struct EncoderOut {
    mean_p: Var,
    logvar_p: Var,
    mean_r: Var,
    logvar_r: Var,
}

/// Per-step B x (130+12) constant input matrices for a batch of segments.
fn encoder_inputs(g: &mut Graph, cfg: &VaeConfig, segments: &[&Segment]) -> Vec<Var> {
    let batch = segments.len();
    let width = cfg.encoder_input_dim();
    (0..cfg.segment_len)
        .map(|t| {
            let mut m = Tensor::zeros(batch, width);
            for (b, seg) in segments.iter().enumerate() {
                let row = m.row_slice_mut(b);
                row[seg.tokens[t].value() as usize] = 1.0;
                let chroma = seg.chroma[t].to_vec12();
                row[TOKEN_DIM..].copy_from_slice(&chroma);
            }
            g.constant(m)
        })
        .collect()
}

fn encode_graph(
    g: &mut Graph,
    binding: &StoreBinding,
    cfg: &VaeConfig,
    segments: &[&Segment],
) -> EncoderOut {
    let xs = encoder_inputs(g, cfg, segments);
    let fwd = bind_lstm(binding, "enc.fwd", cfg.enc_hidden);
    let bwd = bind_lstm(binding, "enc.bwd", cfg.enc_hidden);
    let batch = segments.len();

    let mut h = g.constant(Tensor::zeros(batch, cfg.enc_hidden));
    let mut c = g.constant(Tensor::zeros(batch, cfg.enc_hidden));
    for &x in &xs {
        let (nh, nc) = lstm_cell(g, x, h, c, &fwd);
        h = nh;
        c = nc;
    }
    let h_fwd_last = h;
    let mut h = g.constant(Tensor::zeros(batch, cfg.enc_hidden));
    let mut c = g.constant(Tensor::zeros(batch, cfg.enc_hidden));
    for &x in xs.iter().rev() {
        let (nh, nc) = lstm_cell(g, x, h, c, &bwd);
        h = nh;
        c = nc;
    }
    let h_bwd_first = h;
    let summary = g.concat_cols(&[h_fwd_last, h_bwd_first]);

    let wp = binding.var("enc.head_p.w");
    let bp = binding.var("enc.head_p.b");
    let hp = g.matmul(summary, wp);
    let hp = g.add_bias(hp, bp);
    let mean_p = g.slice_cols(hp, 0, cfg.zp_dim);
    let logvar_p = g.slice_cols(hp, cfg.zp_dim, cfg.zp_dim);

    let wr = binding.var("enc.head_r.w");
    let br = binding.var("enc.head_r.b");
    let hr = g.matmul(summary, wr);
    let hr = g.add_bias(hr, br);
    let mean_r = g.slice_cols(hr, 0, cfg.zr_dim);
    let logvar_r = g.slice_cols(hr, cfg.zr_dim, cfg.zr_dim);

    EncoderOut { mean_p, logvar_p, mean_r, logvar_r }
}

/// Previous-token feeding policy for the recurrent decoders.
enum Feeding<'a> {
    /// Training: ground-truth tokens, used per (step, row) when the coin is
    /// true, otherwise the decoder's own argmax.
    Teacher {
        targets: &'a [Vec<usize>],
        coins: &'a [Vec<bool>],
    },
    /// Inference: always the decoder's own argmax.
    SelfFed,
}

/// Shared recurrent decoder loop: at each step the previous token's one-hot
/// (width `vocab`) is concatenated with `conditions[t]` and pushed through an
/// LSTM and a linear head. Returns per-step logits.
fn decoder_loop(
    g: &mut Graph,
    lstm: &LstmWeights,
    head_w: Var,
    head_b: Var,
    vocab: usize,
    steps: usize,
    batch: usize,
    conditions: &[Var],
    feeding: Feeding,
) -> Vec<Var> {
    let mut h = g.constant(Tensor::zeros(batch, lstm.hidden));
    let mut c = g.constant(Tensor::zeros(batch, lstm.hidden));
    let mut logits_steps: Vec<Var> = Vec::with_capacity(steps);
    let mut prev = g.constant(Tensor::zeros(batch, vocab));
    for t in 0..steps {
        if t > 0 {
            let self_tokens = g.value(logits_steps[t - 1]).argmax_rows();
            let mut m = Tensor::zeros(batch, vocab);
            for b in 0..batch {
                let tok = match &feeding {
                    Feeding::Teacher { targets, coins } => {
                        if coins[t][b] {
                            targets[b][t - 1]
                        } else {
                            self_tokens[b]
                        }
                    }
                    Feeding::SelfFed => self_tokens[b],
                };
                m.set(b, tok, 1.0);
            }
            prev = g.constant(m);
        }
        let x = g.concat_cols(&[prev, conditions[t]]);
        let (nh, nc) = lstm_cell(g, x, h, c, lstm);
        h = nh;
        c = nc;
        let lo = g.matmul(h, head_w);
        let lo = g.add_bias(lo, head_b);
        logits_steps.push(lo);
    }
    logits_steps
}

/// Per-step condition matrices for the melody decoder: [z_p, z_r, chroma_t].
fn melody_conditions(
    g: &mut Graph,
    cfg: &VaeConfig,
    zp: Var,
    zr: Var,
    chroma: &[Vec<[f64; 12]>],
) -> Vec<Var> {
    let batch = chroma.len();
    (0..cfg.segment_len)
        .map(|t| {
            let mut m = Tensor::zeros(batch, CHROMA_DIM);
            for (b, ch) in chroma.iter().enumerate() {
                m.row_slice_mut(b).copy_from_slice(&ch[t]);
            }
            let ch = g.constant(m);
            g.concat_cols(&[zp, zr, ch])
        })
        .collect()
}

fn decode_graph(
    g: &mut Graph,
    binding: &StoreBinding,
    cfg: &VaeConfig,
    zp: Var,
    zr: Var,
    chroma: &[Vec<[f64; 12]>],
    feeding: Feeding,
) -> Vec<Var> {
    let lstm = bind_lstm(binding, "dec.lstm", cfg.dec_hidden);
    let head_w = binding.var("dec.head.w");
    let head_b = binding.var("dec.head.b");
    let conditions = melody_conditions(g, cfg, zp, zr, chroma);
    decoder_loop(
        g,
        &lstm,
        head_w,
        head_b,
        TOKEN_DIM,
        cfg.segment_len,
        chroma.len(),
        &conditions,
        feeding,
    )
}

fn rhythm_decode_graph(
    g: &mut Graph,
    binding: &StoreBinding,
    cfg: &VaeConfig,
    zr: Var,
    batch: usize,
    feeding: Feeding,
) -> Vec<Var> {
    let lstm = bind_lstm(binding, "rdec.lstm", cfg.rhythm_hidden);
    let head_w = binding.var("rdec.head.w");
    let head_b = binding.var("rdec.head.b");
    let conditions: Vec<Var> = (0..cfg.segment_len).map(|_| zr).collect();
    decoder_loop(
        g,
        &lstm,
        head_w,
        head_b,
        RHYTHM_DIM,
        cfg.segment_len,
        batch,
        &conditions,
        feeding,
    )
}

/// Deterministic encode returns posterior means as the latent; sampling mode
/// reparameterizes with noise from `rng`.
pub enum EncodeMode<'a> {
    Deterministic,
    Sample(&'a mut DetRng),
}

/// Encode segments to latent pairs.
pub fn encode(
    store: &ParamStore,
    cfg: &VaeConfig,
    segments: &[&Segment],
    mode: EncodeMode,
) -> Result<Vec<LatentPair>, VaeError> {
    check_store(cfg, store)?;
    check_segments(cfg, segments)?;
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    let mut g = Graph::new();
    let binding = store.bind_const(&mut g);
    let enc = encode_graph(&mut g, &binding, cfg, segments);
    let (mp, lp) = (g.value(enc.mean_p).clone(), g.value(enc.logvar_p).clone());
    let (mr, lr) = (g.value(enc.mean_r).clone(), g.value(enc.logvar_r).clone());
    let batch = segments.len();
    let (zp, zr) = match mode {
        EncodeMode::Deterministic => (mp.clone(), mr.clone()),
        EncodeMode::Sample(rng) => {
            let eps_p = draw_eps(rng, batch, cfg.zp_dim);
            let eps_r = draw_eps(rng, batch, cfg.zr_dim);
            let zp = g.reparameterize(enc.mean_p, enc.logvar_p, eps_p);
            let zr = g.reparameterize(enc.mean_r, enc.logvar_r, eps_r);
            (g.value(zp).clone(), g.value(zr).clone())
        }
    };
    Ok((0..batch)
        .map(|b| LatentPair {
            z_p: zp.row_slice(b).to_vec(),
            z_r: zr.row_slice(b).to_vec(),
            mean_p: mp.row_slice(b).to_vec(),
            logvar_p: lp.row_slice(b).to_vec(),
            mean_r: mr.row_slice(b).to_vec(),
            logvar_r: lr.row_slice(b).to_vec(),
        })
        .collect())
}

fn draw_eps(rng: &mut DetRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Tensor::from_vec(rows, cols, data)
}

fn chroma_rows(segments: &[&Segment]) -> Vec<Vec<[f64; 12]>> {
    segments
        .iter()
        .map(|s| s.chroma.iter().map(|c| c.to_vec12()).collect())
        .collect()
}

/// Decode melody logits (n x 130) from a latent pair and a chroma track,
/// argmax-fed. Returns the per-step logits and the argmax token values.
pub fn decode(
    store: &ParamStore,
    cfg: &VaeConfig,
    z_p: &[f64],
    z_r: &[f64],
    chroma: &[[f64; 12]],
) -> Result<(Vec<Vec<f64>>, Vec<u8>), VaeError> {
    check_store(cfg, store)?;
    if z_p.len() != cfg.zp_dim || z_r.len() != cfg.zr_dim {
        return Err(VaeError::ParamShape {
            name: "z".into(),
            got_rows: 1,
            got_cols: z_p.len() + z_r.len(),
            want_rows: 1,
            want_cols: cfg.zp_dim + cfg.zr_dim,
        });
    }
    if chroma.len() != cfg.segment_len {
        return Err(VaeError::SegmentLength {
            expected: cfg.segment_len,
            got: chroma.len(),
        });
    }
    let mut g = Graph::new();
    let binding = store.bind_const(&mut g);
    let zp = g.constant(Tensor::row(z_p.to_vec()));
    let zr = g.constant(Tensor::row(z_r.to_vec()));
    let logits = decode_graph(
        &mut g,
        &binding,
        cfg,
        zp,
        zr,
        &[chroma.to_vec()],
        Feeding::SelfFed,
    );
    let mut rows = Vec::with_capacity(cfg.segment_len);
    let mut tokens = Vec::with_capacity(cfg.segment_len);
    for lo in logits {
        let v = g.value(lo);
        rows.push(v.row_slice(0).to_vec());
        tokens.push(v.argmax_rows()[0] as u8);
    }
    Ok((rows, tokens))
}

/// Decode rhythm logits (n x 3) from `z_r` alone, argmax-fed.
pub fn rhythm_decode(
    store: &ParamStore,
    cfg: &VaeConfig,
    z_r: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<RhythmToken>), VaeError> {
    check_store(cfg, store)?;
    if z_r.len() != cfg.zr_dim {
        return Err(VaeError::ParamShape {
            name: "z_r".into(),
            got_rows: 1,
            got_cols: z_r.len(),
            want_rows: 1,
            want_cols: cfg.zr_dim,
        });
    }
    let mut g = Graph::new();
    let binding = store.bind_const(&mut g);
    let zr = g.constant(Tensor::row(z_r.to_vec()));
    let logits = rhythm_decode_graph(&mut g, &binding, cfg, zr, 1, Feeding::SelfFed);
    let mut rows = Vec::with_capacity(cfg.segment_len);
    let mut tokens = Vec::with_capacity(cfg.segment_len);
    for lo in logits {
        let v = g.value(lo);
        rows.push(v.row_slice(0).to_vec());
        let idx = v.argmax_rows()[0];
        tokens.push(match idx {
            0 => RhythmToken::Onset,
            1 => RhythmToken::Hold,
            _ => RhythmToken::Rest,
        });
    }
    Ok((rows, tokens))
}

/// Pre-drawn stochastic choices for one loss evaluation, so the loss is a
/// deterministic function of the parameters (required by gradient checks).
pub struct NoisePlan {
    eps_p: Tensor,
    eps_r: Tensor,
    melody_coins: Vec<Vec<bool>>,
    rhythm_coins: Vec<Vec<bool>>,
}

impl NoisePlan {
    pub fn draw(cfg: &VaeConfig, batch: usize, rng: &mut DetRng) -> Self {
        let eps_p = draw_eps(rng, batch, cfg.zp_dim);
        let eps_r = draw_eps(rng, batch, cfg.zr_dim);
        let mut coins = |_: ()| -> Vec<Vec<bool>> {
            (0..cfg.segment_len)
                .map(|_| (0..batch).map(|_| rng.coin(cfg.teacher_forcing)).collect())
                .collect()
        };
        let melody_coins = coins(());
        let rhythm_coins = coins(());
        NoisePlan {
            eps_p,
            eps_r,
            melody_coins,
            rhythm_coins,
        }
    }
}

/// The four loss readings of one batch: total = ce_melody + ce_rhythm +
/// beta * kl, where kl is the sum of the two per-latent KL terms (mean per
/// example).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLossParts {
    pub total: f64,
    pub ce_melody: f64,
    pub ce_rhythm: f64,
    pub kl: f64,
}

/// Build the full training loss on `g`; returns the scalar loss node plus
/// component readings.
pub fn vae_loss_graph(
    g: &mut Graph,
    binding: &StoreBinding,
    cfg: &VaeConfig,
    segments: &[&Segment],
    plan: &NoisePlan,
) -> (Var, VaeLossParts) {
    let batch = segments.len();
    let enc = encode_graph(g, binding, cfg, segments);
    let zp = g.reparameterize(enc.mean_p, enc.logvar_p, plan.eps_p.clone());
    let zr = g.reparameterize(enc.mean_r, enc.logvar_r, plan.eps_r.clone());

    let melody_targets: Vec<Vec<usize>> = segments
        .iter()
        .map(|s| s.tokens.iter().map(|t| t.value() as usize).collect())
        .collect();
    let rhythm_targets: Vec<Vec<usize>> = segments
        .iter()
        .map(|s| rhythm_tokens(&s.tokens).iter().map(|t| t.index()).collect())
        .collect();

    let chroma = chroma_rows(segments);
    let melody_logits = decode_graph(
        g,
        binding,
        cfg,
        zp,
        zr,
        &chroma,
        Feeding::Teacher {
            targets: &melody_targets,
            coins: &plan.melody_coins,
        },
    );
    let rhythm_logits = rhythm_decode_graph(
        g,
        binding,
        cfg,
        zr,
        batch,
        Feeding::Teacher {
            targets: &rhythm_targets,
            coins: &plan.rhythm_coins,
        },
    );

    // step-major stacking; targets follow the same order
    let stacked_m = g.concat_rows(&melody_logits);
    let flat_m: Vec<usize> = (0..cfg.segment_len)
        .flat_map(|t| melody_targets.iter().map(move |row| row[t]))
        .collect();
    let ce_melody = g.softmax_ce(stacked_m, &flat_m);

    let stacked_r = g.concat_rows(&rhythm_logits);
    let flat_r: Vec<usize> = (0..cfg.segment_len)
        .flat_map(|t| rhythm_targets.iter().map(move |row| row[t]))
        .collect();
    let ce_rhythm = g.softmax_ce(stacked_r, &flat_r);

    let kl_p = g.kl_diag_gaussian(enc.mean_p, enc.logvar_p);
    let kl_r = g.kl_diag_gaussian(enc.mean_r, enc.logvar_r);
    let kl_sum = g.add(kl_p, kl_r);
    let kl_mean = g.scale(kl_sum, 1.0 / batch as f64);

    let ce = g.add(ce_melody, ce_rhythm);
    let weighted_kl = g.scale(kl_mean, cfg.beta);
    let total = g.add(ce, weighted_kl);

    let parts = VaeLossParts {
        total: g.scalar(total),
        ce_melody: g.scalar(ce_melody),
        ce_rhythm: g.scalar(ce_rhythm),
        kl: g.scalar(kl_mean),
    };
    (total, parts)
}

/// Loss of a single segment with noise drawn from `rng`.
pub fn vae_loss(
    store: &ParamStore,
    cfg: &VaeConfig,
    segment: &Segment,
    rng: &mut DetRng,
) -> Result<VaeLossParts, VaeError> {
    check_store(cfg, store)?;
    check_segments(cfg, &[segment])?;
    let plan = NoisePlan::draw(cfg, 1, rng);
    let mut g = Graph::new();
    let binding = store.bind_const(&mut g);
    let (_, parts) = vae_loss_graph(&mut g, &binding, cfg, &[segment], &plan);
    Ok(parts)
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub ce_melody: f64,
    pub ce_rhythm: f64,
    pub kl: f64,
    pub total: f64,
}

/// Minibatch Adam training. Deterministic for a fixed config: shuffling,
/// reparameterization noise and teacher-forcing coins all come from named
/// sub-streams of `cfg.seed`.
pub fn train_vae(segments: &[Segment], cfg: &VaeConfig) -> Result<(ParamStore, Vec<EpochLoss>), VaeError> {
    if segments.is_empty() {
        return Err(VaeError::EmptyCorpus);
    }
    let refs: Vec<&Segment> = segments.iter().collect();
    check_segments(cfg, &refs)?;

    let mut init_rng = DetRng::stream(cfg.seed, "vae.init");
    let mut store = init_vae_params(cfg, &mut init_rng);
    let mut shuffle_rng = DetRng::stream(cfg.seed, "vae.shuffle");
    let mut noise_rng = DetRng::stream(cfg.seed, "vae.noise");
    let mut adam = AdamState::new(&store, cfg.lr);

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..segments.len()).collect();
    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_cfg = cfg.clone();
        if cfg.kl_warmup_epochs > 0 {
            let ramp = (epoch as f64 / cfg.kl_warmup_epochs as f64).min(1.0);
            epoch_cfg.beta = cfg.beta * ramp;
        }
        let mut sums = [0.0f64; 4];
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Segment> = chunk.iter().map(|&i| &segments[i]).collect();
            let plan = NoisePlan::draw(cfg, batch.len(), &mut noise_rng);
            let mut g = Graph::new();
            let binding = store.bind(&mut g);
            let (loss, parts) = vae_loss_graph(&mut g, &binding, &epoch_cfg, &batch, &plan);
            if !parts.total.is_finite() {
                return Err(VaeError::NonFinite(epoch));
            }
            g.backward(loss);
            store.accumulate_grads(&g, &binding);
            adam_step(&mut store, &mut adam);
            let w = batch.len() as f64;
            sums[0] += parts.ce_melody * w;
            sums[1] += parts.ce_rhythm * w;
            sums[2] += parts.kl * w;
            sums[3] += parts.total * w;
            seen += batch.len();
        }
        let n = seen as f64;
        curve.push(EpochLoss {
            epoch,
            ce_melody: sums[0] / n,
            ce_rhythm: sums[1] / n,
            kl: sums[2] / n,
            total: sums[3] / n,
        });
    }
    Ok((store, curve))
}

/// Deterministic reconstruction: encode to means, decode argmax-fed.
pub fn reconstruct_tokens(
    store: &ParamStore,
    cfg: &VaeConfig,
    segment: &Segment,
) -> Result<Vec<u8>, VaeError> {
    let latents = encode(store, cfg, &[segment], EncodeMode::Deterministic)?;
    let chroma: Vec<[f64; 12]> = segment.chroma.iter().map(|c| c.to_vec12()).collect();
    let (_, tokens) = decode(store, cfg, &latents[0].z_p, &latents[0].z_r, &chroma)?;
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::Chroma;

    fn tiny_cfg() -> VaeConfig {
        VaeConfig {
            segment_len: 8,
            zp_dim: 3,
            zr_dim: 3,
            enc_hidden: 5,
            dec_hidden: 5,
            rhythm_hidden: 4,
            beta: 0.1,
            kl_warmup_epochs: 0,
            teacher_forcing: 0.5,
            epochs: 10,
            batch_size: 4,
            lr: 1e-2,
            seed: 7,
        }
    }

    fn seg(values: &[u8]) -> Segment {
        Segment {
            tokens: values
                .iter()
                .map(|&v| MelodyToken::new(v as u16).unwrap())
                .collect(),
            chroma: vec![Chroma::from_pitch_classes(&[0, 4, 7]); values.len()],
        }
    }

    #[test]
    fn encode_dims_and_determinism() {
        let cfg = tiny_cfg();
        let mut rng = DetRng::new(1);
        let store = init_vae_params(&cfg, &mut rng);
        let s = seg(&[60, 128, 62, 129, 64, 128, 128, 129]);
        let a = encode(&store, &cfg, &[&s], EncodeMode::Deterministic).unwrap();
        let b = encode(&store, &cfg, &[&s], EncodeMode::Deterministic).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].z_p.len() + a[0].z_r.len(), cfg.zp_dim + cfg.zr_dim);
        assert_eq!(a[0].z_p, a[0].mean_p);
    }

    #[test]
    fn encode_rejects_wrong_length() {
        let cfg = tiny_cfg();
        let mut rng = DetRng::new(1);
        let store = init_vae_params(&cfg, &mut rng);
        let s = seg(&[60, 128]);
        assert!(matches!(
            encode(&store, &cfg, &[&s], EncodeMode::Deterministic),
            Err(VaeError::SegmentLength { expected: 8, got: 2 })
        ));
    }

    #[test]
    fn check_store_catches_shape_drift() {
        let cfg = tiny_cfg();
        let mut rng = DetRng::new(1);
        let store = init_vae_params(&cfg, &mut rng);
        let mut other = cfg.clone();
        other.zp_dim = 4;
        assert!(matches!(
            check_store(&other, &store),
            Err(VaeError::ParamShape { .. })
        ));
    }

    #[test]
    fn decode_shape_is_n_by_130() {
        let cfg = tiny_cfg();
        let mut rng = DetRng::new(2);
        let store = init_vae_params(&cfg, &mut rng);
        let chroma = vec![[0.0; 12]; cfg.segment_len];
        let (logits, tokens) = decode(&store, &cfg, &[0.0; 3], &[0.0; 3], &chroma).unwrap();
        assert_eq!(logits.len(), cfg.segment_len);
        assert!(logits.iter().all(|r| r.len() == TOKEN_DIM));
        assert_eq!(tokens.len(), cfg.segment_len);
    }

    #[test]
    fn rhythm_decode_shape_is_n_by_3() {
        let cfg = tiny_cfg();
        let mut rng = DetRng::new(2);
        let store = init_vae_params(&cfg, &mut rng);
        let (logits, tokens) = rhythm_decode(&store, &cfg, &[0.1, -0.2, 0.3]).unwrap();
        assert_eq!(logits.len(), cfg.segment_len);
        assert!(logits.iter().all(|r| r.len() == RHYTHM_DIM));
        assert_eq!(tokens.len(), cfg.segment_len);
    }

    #[test]
    fn untrained_zero_params_give_uniform_ce() {
        let cfg = tiny_cfg();
        let mut rng = DetRng::new(3);
        let mut store = init_vae_params(&cfg, &mut rng);
        for name in store.names().to_vec() {
            store.get_mut(&name).fill(0.0);
        }
        let s = seg(&[60, 128, 62, 129, 64, 128, 61, 129]);
        let parts = vae_loss(&store, &cfg, &s, &mut DetRng::new(9)).unwrap();
        assert!((parts.ce_melody - (TOKEN_DIM as f64).ln()).abs() < 1e-9);
        assert!((parts.ce_rhythm - (RHYTHM_DIM as f64).ln()).abs() < 1e-9);
        assert!(parts.kl.abs() < 1e-12);
    }

    #[test]
    fn beta_zero_removes_kl_exactly() {
        let mut cfg = tiny_cfg();
        let mut rng = DetRng::new(4);
        let store = init_vae_params(&cfg, &mut rng);
        let s = seg(&[60, 128, 62, 129, 64, 128, 61, 129]);
        cfg.beta = 0.0;
        let parts = vae_loss(&store, &cfg, &s, &mut DetRng::new(5)).unwrap();
        assert_eq!(parts.total, parts.ce_melody + parts.ce_rhythm);
        cfg.beta = 0.5;
        let parts2 = vae_loss(&store, &cfg, &s, &mut DetRng::new(5)).unwrap();
        assert!(
            (parts2.total - (parts2.ce_melody + parts2.ce_rhythm + 0.5 * parts2.kl)).abs() < 1e-12
        );
    }

    #[test]
    fn loss_components_nonnegative() {
        let cfg = tiny_cfg();
        let mut rng = DetRng::new(6);
        let store = init_vae_params(&cfg, &mut rng);
        let s = seg(&[72, 128, 128, 128, 129, 60, 128, 129]);
        let parts = vae_loss(&store, &cfg, &s, &mut DetRng::new(7)).unwrap();
        assert!(parts.ce_melody >= 0.0);
        assert!(parts.ce_rhythm >= 0.0);
        assert!(parts.kl >= 0.0);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let cfg = tiny_cfg();
        let segs: Vec<Segment> = vec![
            seg(&[60, 128, 62, 129, 64, 128, 61, 129]),
            seg(&[72, 129, 71, 128, 69, 128, 128, 129]),
        ];
        let (store_a, curve_a) = train_vae(&segs, &cfg).unwrap();
        let (store_b, curve_b) = train_vae(&segs, &cfg).unwrap();
        assert_eq!(curve_a, curve_b);
        for (name, t) in store_a.iter() {
            assert_eq!(t.data(), store_b.get(name).data());
        }
        assert!(curve_a.last().unwrap().total < curve_a[0].total);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let cfg = tiny_cfg();
        assert!(matches!(train_vae(&[], &cfg), Err(VaeError::EmptyCorpus)));
    }
}
