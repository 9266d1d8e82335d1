//! Symbolic melody/chord representation: corpus parsing, grid quantization,
//! token encoding, segmentation, transposition and a synthetic corpus
//! generator for tests and experiments.
//!
//! Melodies are monophonic token grids at a fixed timestep (default 0.125 s):
//! token values 0-127 are pitch onsets, 128 holds the previous pitch, 129 is
//! a rest. Chords ride along as per-cell 12-bit pitch-class chroma vectors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::DetRng;

pub const HOLD: u8 = 128;
pub const REST: u8 = 129;
/// One-hot width of a melody token: 128 pitches + hold + rest.
pub const TOKEN_DIM: usize = 130;
pub const DEFAULT_TIMESTEP_SEC: f64 = 0.125;
pub const DEFAULT_SEGMENT_LEN: usize = 32;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("song {song}: invalid {field}: {detail}")]
    Validation {
        song: usize,
        field: &'static str,
        detail: String,
    },
}

#[derive(Debug, Error)]
pub enum SymbolicError {
    #[error("quantization conflict: notes with pitches {first} and {second} both land on cell {cell}")]
    QuantizeConflict { cell: usize, first: u8, second: u8 },
    #[error("transposition by {semitones} puts pitch {pitch} outside 0..=127")]
    PitchOutOfRange { pitch: i32, semitones: i32 },
    #[error("melody token value {0} outside 0..=129")]
    InvalidToken(u16),
    #[error("hold token at cell {0} has no preceding pitch")]
    DanglingHold(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    #[serde(rename = "onset")]
    pub onset_sec: f64,
    #[serde(rename = "duration")]
    pub duration_sec: f64,
    pub pitch: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Key {
    pub tonic: u8,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordEvent {
    #[serde(rename = "onset")]
    pub onset_sec: f64,
    #[serde(rename = "duration")]
    pub duration_sec: f64,
    pub root: u8,
    pub pitch_classes: Vec<u8>,
    pub quality: String,
}

impl ChordEvent {
    pub fn chroma(&self) -> Chroma {
        Chroma::from_pitch_classes(&self.pitch_classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongEvents {
    pub bpm: f64,
    pub key: Key,
    pub notes: Vec<NoteEvent>,
    pub chords: Vec<ChordEvent>,
}

impl SongEvents {
    /// End of the last sounding event in seconds.
    pub fn end_time(&self) -> f64 {
        let note_end = self
            .notes
            .iter()
            .map(|n| n.onset_sec + n.duration_sec)
            .fold(0.0, f64::max);
        let chord_end = self
            .chords
            .iter()
            .map(|c| c.onset_sec + c.duration_sec)
            .fold(0.0, f64::max);
        note_end.max(chord_end)
    }

    pub fn validate(&self, song: usize) -> Result<(), CorpusError> {
        let err = |field, detail: String| CorpusError::Validation { song, field, detail };
        if !(self.bpm > 0.0) {
            return Err(err("bpm", format!("must be positive, got {}", self.bpm)));
        }
        if self.key.tonic > 11 {
            return Err(err("key", format!("tonic {} outside 0..=11", self.key.tonic)));
        }
        for (i, n) in self.notes.iter().enumerate() {
            if !(n.duration_sec > 0.0) {
                return Err(err("notes", format!("note {i} duration must be > 0")));
            }
            if n.onset_sec < 0.0 {
                return Err(err("notes", format!("note {i} onset must be >= 0")));
            }
            if n.pitch > 127 {
                return Err(err("notes", format!("note {i} pitch {} > 127", n.pitch)));
            }
            if i > 0 {
                let prev = &self.notes[i - 1];
                if n.onset_sec < prev.onset_sec - TIME_EPS {
                    return Err(err("notes", format!("note {i} not sorted by onset")));
                }
                if n.onset_sec < prev.onset_sec + prev.duration_sec - TIME_EPS {
                    return Err(err("notes", format!("note {i} overlaps note {} (monophonic)", i - 1)));
                }
            }
        }
        for (i, c) in self.chords.iter().enumerate() {
            if !(c.duration_sec > 0.0) {
                return Err(err("chords", format!("chord {i} duration must be > 0")));
            }
            if c.onset_sec < 0.0 {
                return Err(err("chords", format!("chord {i} onset must be >= 0")));
            }
            if c.root > 11 {
                return Err(err("chords", format!("chord {i} root {} > 11", c.root)));
            }
            if c.pitch_classes.iter().any(|&p| p > 11) {
                return Err(err("chords", format!("chord {i} pitch class > 11")));
            }
            if i > 0 {
                let prev = &self.chords[i - 1];
                if c.onset_sec < prev.onset_sec - TIME_EPS {
                    return Err(err("chords", format!("chord {i} not sorted by onset")));
                }
                if c.onset_sec < prev.onset_sec + prev.duration_sec - TIME_EPS {
                    return Err(err("chords", format!("chord {i} overlaps chord {}", i - 1)));
                }
            }
        }
        Ok(())
    }
}

/// 12-bit pitch-class indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Chroma(pub u16);

impl Chroma {
    pub fn from_pitch_classes(pcs: &[u8]) -> Self {
        let mut bits = 0u16;
        for &p in pcs {
            bits |= 1 << (p % 12);
        }
        Chroma(bits)
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn contains(&self, pc: u8) -> bool {
        self.0 & (1 << (pc % 12)) != 0
    }

    pub fn rotate(&self, semitones: i32) -> Chroma {
        let k = semitones.rem_euclid(12) as u32;
        let b = self.0 & 0x0fff;
        Chroma(((b << k) | (b >> (12 - k))) & 0x0fff)
    }

    pub fn to_vec12(&self) -> [f64; 12] {
        let mut v = [0.0; 12];
        for (pc, slot) in v.iter_mut().enumerate() {
            if self.contains(pc as u8) {
                *slot = 1.0;
            }
        }
        v
    }

    pub fn pitch_classes(&self) -> Vec<u8> {
        (0..12u8).filter(|&p| self.contains(p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MelodyToken(u8);

impl MelodyToken {
    pub fn new(value: u16) -> Result<Self, SymbolicError> {
        if value > 129 {
            return Err(SymbolicError::InvalidToken(value));
        }
        Ok(MelodyToken(value as u8))
    }

    pub fn pitch(p: u8) -> Self {
        assert!(p <= 127);
        MelodyToken(p)
    }

    pub const HOLD: MelodyToken = MelodyToken(HOLD);
    pub const REST: MelodyToken = MelodyToken(REST);

    pub fn value(&self) -> u8 {
        self.0
    }

    pub fn is_pitch(&self) -> bool {
        self.0 <= 127
    }

    pub fn is_hold(&self) -> bool {
        self.0 == HOLD
    }

    pub fn is_rest(&self) -> bool {
        self.0 == REST
    }
}

/// 130-d one-hot encoding of a melody token.
pub fn one_hot_melody(token: MelodyToken) -> Vec<f64> {
    let mut v = vec![0.0; TOKEN_DIM];
    v[token.value() as usize] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelodyGrid {
    tokens: Vec<MelodyToken>,
    timestep_sec: f64,
}

impl MelodyGrid {
    /// Build a grid, enforcing that a hold never opens the grid or follows a
    /// rest.
    pub fn new(tokens: Vec<MelodyToken>, timestep_sec: f64) -> Result<Self, SymbolicError> {
        assert!(timestep_sec > 0.0, "timestep must be positive");
        let mut sounding = false;
        for (i, t) in tokens.iter().enumerate() {
            if t.is_hold() && !sounding {
                return Err(SymbolicError::DanglingHold(i));
            }
            if t.is_pitch() {
                sounding = true;
            } else if t.is_rest() {
                sounding = false;
            }
        }
        Ok(MelodyGrid { tokens, timestep_sec })
    }

    /// Build a grid from raw token values, rewriting any hold that has no
    /// preceding pitch into a rest. Used for model output, which carries no
    /// validity guarantee.
    pub fn from_raw_sanitized(values: &[u8], timestep_sec: f64) -> Self {
        let mut tokens = Vec::with_capacity(values.len());
        let mut sounding = false;
        for &v in values {
            let t = if v == HOLD && !sounding {
                MelodyToken::REST
            } else {
                MelodyToken(v.min(REST))
            };
            if t.is_pitch() {
                sounding = true;
            } else if t.is_rest() {
                sounding = false;
            }
            tokens.push(t);
        }
        MelodyGrid { tokens, timestep_sec }
    }

    pub fn tokens(&self) -> &[MelodyToken] {
        &self.tokens
    }

    pub fn timestep_sec(&self) -> f64 {
        self.timestep_sec
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChordTrack {
    pub cells: Vec<Chroma>,
}

/// A fixed-length window of melody tokens and aligned chroma cells. Window
/// boundaries may cut through a sounding note, so segment tokens are stored
/// raw rather than as a standalone [`MelodyGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub tokens: Vec<MelodyToken>,
    pub chroma: Vec<Chroma>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Parse a corpus file: a JSON array of songs. Every song is validated and
/// errors carry the song index and offending field.
pub fn parse_corpus(path: &Path) -> Result<Vec<SongEvents>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let songs: Vec<SongEvents> = serde_json::from_str(&text)?;
    for (i, s) in songs.iter().enumerate() {
        s.validate(i)?;
    }
    Ok(songs)
}

pub fn write_corpus(songs: &[SongEvents], path: &Path) -> Result<(), CorpusError> {
    let text = serde_json::to_string_pretty(songs)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Rescale all event times so the song plays at `target_bpm` and stamp the
/// new tempo.
pub fn normalize_to_bpm(song: &SongEvents, target_bpm: f64) -> SongEvents {
    let factor = song.bpm / target_bpm;
    let mut out = song.clone();
    out.bpm = target_bpm;
    for n in &mut out.notes {
        n.onset_sec *= factor;
        n.duration_sec *= factor;
    }
    for c in &mut out.chords {
        c.onset_sec *= factor;
        c.duration_sec *= factor;
    }
    out
}

/// Quantize a song onto the token grid. Note onsets round to the nearest
/// cell, durations round but always claim at least one cell, and holds are
/// truncated where the next note begins. Two notes rounding onto the same
/// onset cell is a hard error.
pub fn quantize(
    song: &SongEvents,
    timestep_sec: f64,
) -> Result<(MelodyGrid, ChordTrack), SymbolicError> {
    assert!(timestep_sec > 0.0, "timestep must be positive");
    let end = song.end_time();
    let len = ((end / timestep_sec) - TIME_EPS).ceil().max(0.0) as usize;
    let mut tokens = vec![MelodyToken::REST; len];

    let mut onset_cells = Vec::with_capacity(song.notes.len());
    for n in &song.notes {
        let cell = ((n.onset_sec / timestep_sec).round() as usize).min(len.saturating_sub(1));
        onset_cells.push(cell);
    }
    for (i, n) in song.notes.iter().enumerate() {
        let cell = onset_cells[i];
        if i > 0 && cell == onset_cells[i - 1] {
            return Err(SymbolicError::QuantizeConflict {
                cell,
                first: song.notes[i - 1].pitch,
                second: n.pitch,
            });
        }
        let dur_cells = ((n.duration_sec / timestep_sec).round() as usize).max(1);
        let hold_end = (cell + dur_cells)
            .min(len)
            .min(*onset_cells.get(i + 1).unwrap_or(&len));
        tokens[cell] = MelodyToken::pitch(n.pitch);
        for t in tokens.iter_mut().take(hold_end).skip(cell + 1) {
            *t = MelodyToken::HOLD;
        }
    }

    let mut cells = vec![Chroma::default(); len];
    let mut ci = 0;
    for (i, cell) in cells.iter_mut().enumerate() {
        let t = i as f64 * timestep_sec;
        while ci < song.chords.len()
            && song.chords[ci].onset_sec + song.chords[ci].duration_sec - TIME_EPS <= t
        {
            ci += 1;
        }
        if let Some(ch) = song.chords.get(ci) {
            if ch.onset_sec - TIME_EPS <= t && t < ch.onset_sec + ch.duration_sec - TIME_EPS {
                *cell = ch.chroma();
            }
        }
    }

    let grid = MelodyGrid::new(tokens, timestep_sec).expect("quantize built an invalid grid");
    Ok((grid, ChordTrack { cells }))
}

/// Exact inverse of [`quantize`] on conflict-free grids: a pitch token opens
/// a note whose duration covers the following run of holds.
pub fn grid_to_notes(grid: &MelodyGrid) -> Vec<NoteEvent> {
    let dt = grid.timestep_sec();
    let mut notes = Vec::new();
    let mut i = 0;
    let tokens = grid.tokens();
    while i < tokens.len() {
        if tokens[i].is_pitch() {
            let mut j = i + 1;
            while j < tokens.len() && tokens[j].is_hold() {
                j += 1;
            }
            notes.push(NoteEvent {
                onset_sec: i as f64 * dt,
                duration_sec: (j - i) as f64 * dt,
                pitch: tokens[i].value(),
            });
            i = j;
        } else {
            i += 1;
        }
    }
    notes
}

/// Shift every pitched element by `semitones`; rhythm is untouched. Fails if
/// any note would leave the MIDI range.
pub fn transpose(song: &SongEvents, semitones: i32) -> Result<SongEvents, SymbolicError> {
    let mut out = song.clone();
    for n in &mut out.notes {
        let p = n.pitch as i32 + semitones;
        if !(0..=127).contains(&p) {
            return Err(SymbolicError::PitchOutOfRange { pitch: p, semitones });
        }
        n.pitch = p as u8;
    }
    for c in &mut out.chords {
        c.root = (c.root as i32 + semitones).rem_euclid(12) as u8;
        let rotated = Chroma::from_pitch_classes(&c.pitch_classes).rotate(semitones);
        c.pitch_classes = rotated.pitch_classes();
    }
    out.key.tonic = (out.key.tonic as i32 + semitones).rem_euclid(12) as u8;
    Ok(out)
}

/// Split a grid and its chord track into consecutive windows of `n` cells.
/// The final partial window is padded with rests and empty chroma.
pub fn segment_song(grid: &MelodyGrid, chords: &ChordTrack, n: usize) -> Vec<Segment> {
    assert!(n > 0, "segment length must be positive");
    assert_eq!(
        grid.len(),
        chords.cells.len(),
        "melody and chord tracks must align"
    );
    let count = grid.len().div_ceil(n);
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let start = s * n;
        let stop = ((s + 1) * n).min(grid.len());
        let mut tokens: Vec<MelodyToken> = grid.tokens()[start..stop].to_vec();
        let mut chroma: Vec<Chroma> = chords.cells[start..stop].to_vec();
        tokens.resize(n, MelodyToken::REST);
        chroma.resize(n, Chroma::default());
        out.push(Segment { tokens, chroma });
    }
    out
}

/// Knobs for the synthetic folk-like corpus generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthParams {
    /// 8-beat phrases per song.
    pub segments_per_song: usize,
    /// Distinct rhythm patterns per song.
    pub rhythm_vocab: usize,
    /// Distinct pitch contours per song.
    pub contour_vocab: usize,
    /// Probability that a slot in a rhythm pattern is silent.
    pub rest_prob: f64,
    /// Probability that a phrase repeats an already-used phrase verbatim.
    pub repeat_prob: f64,
    /// Probability of a major key; otherwise natural minor.
    pub major_prob: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            segments_per_song: 12,
            rhythm_vocab: 2,
            contour_vocab: 2,
            rest_prob: 0.08,
            repeat_prob: 0.6,
            major_prob: 0.7,
        }
    }
}

const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR_SCALE: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

// Four-chord progressions per phrase, chosen so their dominant chord
// function differs from phrase to phrase (tonic-, subdominant-, and
// dominant-centered progressions).
const PROGRESSIONS_MAJOR: [[usize; 4]; 4] = [[1, 6, 1, 4], [4, 2, 4, 5], [5, 3, 5, 7], [1, 4, 5, 5]];
const PROGRESSIONS_MINOR: [[usize; 4]; 4] = [[1, 3, 1, 4], [4, 2, 4, 2], [5, 7, 5, 7], [1, 4, 5, 5]];

fn scale_of(mode: Mode) -> &'static [u8; 7] {
    match mode {
        Mode::Major => &MAJOR_SCALE,
        Mode::Minor => &MINOR_SCALE,
    }
}

fn scale_index_to_pitch(tonic: u8, mode: Mode, idx: i32) -> u8 {
    let scale = scale_of(mode);
    let octave = idx.div_euclid(7);
    let step = idx.rem_euclid(7) as usize;
    (48 + tonic as i32 + 12 * octave + scale[step] as i32) as u8
}

fn triad_on_degree(tonic: u8, mode: Mode, degree: usize) -> (u8, Vec<u8>, String) {
    let scale = scale_of(mode);
    let d = degree - 1;
    let pcs: Vec<u8> = [0, 2, 4]
        .iter()
        .map(|&o| (tonic + scale[(d + o) % 7]) % 12)
        .collect();
    let root = pcs[0];
    let third = (pcs[1] + 12 - pcs[0]) % 12;
    let fifth = (pcs[2] + 12 - pcs[0]) % 12;
    let quality = match (third, fifth) {
        (4, 7) => "maj",
        (3, 7) => "min",
        (3, 6) => "dim",
        (4, 8) => "aug",
        _ => "other",
    };
    (root, pcs, quality.to_string())
}

#[derive(Clone)]
struct RhythmSlot {
    cells: usize,
    rest: bool,
}

fn draw_rhythm(rng: &mut DetRng, rest_prob: f64, phrase_cells: usize) -> Vec<RhythmSlot> {
    let mut slots = Vec::new();
    let mut remaining = phrase_cells;
    while remaining > 0 {
        let roll = rng.next_f64();
        let cells = if roll < 0.20 {
            1
        } else if roll < 0.60 {
            2
        } else if roll < 0.85 {
            4
        } else {
            8
        };
        let cells = cells.min(remaining);
        slots.push(RhythmSlot {
            cells,
            rest: rng.coin(rest_prob),
        });
        remaining -= cells;
    }
    if slots.iter().all(|s| s.rest) {
        slots[0].rest = false;
    }
    slots
}

fn draw_contour(rng: &mut DetRng, len: usize) -> Vec<i32> {
    let mut idx = 7; // one octave above the tonic base
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(idx);
        let step = rng.below(5) as i32 - 2;
        idx = (idx + step).clamp(0, 14);
    }
    out
}

/// Generate a deterministic folk-like corpus: diatonic melodies built from a
/// small per-song vocabulary of 8-beat phrases (independent rhythm and
/// contour choices) over degree progressions, with verbatim phrase repeats so
/// structure analysis has something to find. 120 bpm throughout.
pub fn synth_corpus(seed: u64, song_count: usize, params: &SynthParams) -> Vec<SongEvents> {
    assert!(song_count > 0, "song_count must be positive");
    assert!(params.segments_per_song > 0 && params.rhythm_vocab > 0 && params.contour_vocab > 0);
    let mut rng = DetRng::stream(seed, "synth");
    let phrase_cells = DEFAULT_SEGMENT_LEN;
    let phrase_secs = phrase_cells as f64 * DEFAULT_TIMESTEP_SEC;
    let mut songs = Vec::with_capacity(song_count);
    for _ in 0..song_count {
        let tonic = rng.below(12) as u8;
        let mode = if rng.coin(params.major_prob) {
            Mode::Major
        } else {
            Mode::Minor
        };
        let rhythms: Vec<Vec<RhythmSlot>> = (0..params.rhythm_vocab)
            .map(|_| draw_rhythm(&mut rng, params.rest_prob, phrase_cells))
            .collect();
        let contours: Vec<Vec<i32>> = (0..params.contour_vocab)
            .map(|_| draw_contour(&mut rng, phrase_cells))
            .collect();
        let vocab = params.rhythm_vocab * params.contour_vocab;

        let mut used: Vec<usize> = Vec::new();
        let mut sequence = Vec::with_capacity(params.segments_per_song);
        for s in 0..params.segments_per_song {
            let phrase = if s > 0 && rng.coin(params.repeat_prob) {
                used[rng.below(used.len())]
            } else {
                rng.below(vocab)
            };
            if !used.contains(&phrase) {
                used.push(phrase);
            }
            sequence.push(phrase);
        }

        let progressions = match mode {
            Mode::Major => &PROGRESSIONS_MAJOR,
            Mode::Minor => &PROGRESSIONS_MINOR,
        };

        let mut notes = Vec::new();
        let mut chords = Vec::new();
        for (s, &phrase) in sequence.iter().enumerate() {
            let r = phrase / params.contour_vocab;
            let c = phrase % params.contour_vocab;
            let t0 = s as f64 * phrase_secs;
            let mut cell = 0usize;
            let mut note_idx = 0usize;
            for slot in &rhythms[r] {
                if !slot.rest {
                    let idx = contours[c][note_idx % phrase_cells];
                    notes.push(NoteEvent {
                        onset_sec: t0 + cell as f64 * DEFAULT_TIMESTEP_SEC,
                        duration_sec: slot.cells as f64 * DEFAULT_TIMESTEP_SEC,
                        pitch: scale_index_to_pitch(tonic, mode, idx),
                    });
                    note_idx += 1;
                }
                cell += slot.cells;
            }
            let prog = &progressions[c % progressions.len()];
            for (k, &deg) in prog.iter().enumerate() {
                let (root, pcs, quality) = triad_on_degree(tonic, mode, deg);
                chords.push(ChordEvent {
                    onset_sec: t0 + k as f64,
                    duration_sec: 1.0,
                    root,
                    pitch_classes: pcs,
                    quality,
                });
            }
        }
        songs.push(SongEvents {
            bpm: 120.0,
            key: Key { tonic, mode },
            notes,
            chords,
        });
    }
    songs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn song_with(notes: Vec<NoteEvent>, chords: Vec<ChordEvent>) -> SongEvents {
        SongEvents {
            bpm: 120.0,
            key: Key { tonic: 0, mode: Mode::Major },
            notes,
            chords,
        }
    }

    fn note(onset: f64, dur: f64, pitch: u8) -> NoteEvent {
        NoteEvent { onset_sec: onset, duration_sec: dur, pitch }
    }

    #[test]
    fn quantize_basic_note() {
        let song = song_with(vec![note(0.0, 0.5, 60)], vec![]);
        let (grid, _) = quantize(&song, 0.125).unwrap();
        let vals: Vec<u8> = grid.tokens().iter().map(|t| t.value()).collect();
        assert_eq!(vals, vec![60, HOLD, HOLD, HOLD]);
    }

    #[test]
    fn quantize_silence_is_rest() {
        let song = song_with(vec![], vec![]);
        let (grid, _) = quantize(&song, 0.125).unwrap();
        assert!(grid.is_empty());

        let song = song_with(
            vec![],
            vec![ChordEvent {
                onset_sec: 0.0,
                duration_sec: 0.25,
                root: 0,
                pitch_classes: vec![0],
                quality: "maj".into(),
            }],
        );
        let (grid, _) = quantize(&song, 0.125).unwrap();
        let vals: Vec<u8> = grid.tokens().iter().map(|t| t.value()).collect();
        assert_eq!(vals, vec![REST, REST]);
    }

    #[test]
    fn quantize_chord_chroma() {
        let song = song_with(
            vec![note(0.0, 0.5, 60)],
            vec![ChordEvent {
                onset_sec: 0.0,
                duration_sec: 0.5,
                root: 0,
                pitch_classes: vec![0, 4, 7],
                quality: "maj".into(),
            }],
        );
        let (_, chords) = quantize(&song, 0.125).unwrap();
        assert_eq!(chords.cells.len(), 4);
        for c in &chords.cells {
            assert_eq!(c.pitch_classes(), vec![0, 4, 7]);
        }
    }

    #[test]
    fn quantize_conflict_is_error() {
        let song = song_with(vec![note(0.0, 0.01, 60), note(0.01, 0.5, 62)], vec![]);
        match quantize(&song, 0.125) {
            Err(SymbolicError::QuantizeConflict { cell: 0, first: 60, second: 62 }) => {}
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn grid_to_notes_inverts_quantize() {
        let song = song_with(vec![note(0.0, 0.5, 60)], vec![]);
        let (grid, _) = quantize(&song, 0.125).unwrap();
        let notes = grid_to_notes(&grid);
        assert_eq!(notes, vec![note(0.0, 0.5, 60)]);
    }

    #[test]
    fn grid_to_notes_examples() {
        let grid = MelodyGrid::new(vec![MelodyToken::REST, MelodyToken::REST], 0.125).unwrap();
        assert!(grid_to_notes(&grid).is_empty());

        let grid = MelodyGrid::new(
            vec![MelodyToken::pitch(60), MelodyToken::pitch(61)],
            0.125,
        )
        .unwrap();
        assert_eq!(
            grid_to_notes(&grid),
            vec![note(0.0, 0.125, 60), note(0.125, 0.125, 61)]
        );
    }

    #[test]
    fn hold_after_rest_rejected() {
        let r = MelodyGrid::new(vec![MelodyToken::REST, MelodyToken::HOLD], 0.125);
        assert!(matches!(r, Err(SymbolicError::DanglingHold(1))));
        let r = MelodyGrid::new(vec![MelodyToken::HOLD], 0.125);
        assert!(matches!(r, Err(SymbolicError::DanglingHold(0))));
    }

    #[test]
    fn sanitize_rewrites_dangling_holds() {
        let g = MelodyGrid::from_raw_sanitized(&[HOLD, 60, HOLD, REST, HOLD], 0.125);
        let vals: Vec<u8> = g.tokens().iter().map(|t| t.value()).collect();
        assert_eq!(vals, vec![REST, 60, HOLD, REST, REST]);
    }

    #[test]
    fn one_hot_examples() {
        let v = one_hot_melody(MelodyToken::pitch(60));
        assert_eq!(v.len(), TOKEN_DIM);
        assert_eq!(v[60], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert_eq!(one_hot_melody(MelodyToken::HOLD)[128], 1.0);
        assert_eq!(one_hot_melody(MelodyToken::REST)[129], 1.0);
    }

    #[test]
    fn transpose_shifts_everything() {
        let song = SongEvents {
            bpm: 120.0,
            key: Key { tonic: 0, mode: Mode::Major },
            notes: vec![note(0.0, 0.5, 60)],
            chords: vec![ChordEvent {
                onset_sec: 0.0,
                duration_sec: 0.5,
                root: 0,
                pitch_classes: vec![0, 4, 7],
                quality: "maj".into(),
            }],
        };
        let up = transpose(&song, 2).unwrap();
        assert_eq!(up.notes[0].pitch, 62);
        assert_eq!(up.key.tonic, 2);
        assert_eq!(up.chords[0].root, 2);
        assert_eq!(up.chords[0].pitch_classes, vec![2, 6, 9]);

        let same = transpose(&song, 0).unwrap();
        assert_eq!(same, song);

        let back = transpose(&up, -2).unwrap();
        assert_eq!(back, song);
    }

    #[test]
    fn transpose_out_of_range_errors() {
        let song = song_with(vec![note(0.0, 0.5, 127)], vec![]);
        assert!(matches!(
            transpose(&song, 1),
            Err(SymbolicError::PitchOutOfRange { .. })
        ));
    }

    #[test]
    fn segment_counts() {
        let song = song_with(vec![note(0.0, 40.0, 60)], vec![]);
        let (grid, chords) = quantize(&song, 0.125).unwrap();
        assert_eq!(grid.len(), 320);
        let segs = segment_song(&grid, &chords, 32);
        assert_eq!(segs.len(), 10);

        let song = song_with(vec![note(0.0, 33.0 * 0.125, 60)], vec![]);
        let (grid, chords) = quantize(&song, 0.125).unwrap();
        let segs = segment_song(&grid, &chords, 32);
        assert_eq!(segs.len(), 2);
        assert_eq!(
            segs[1].tokens.iter().filter(|t| t.is_rest()).count(),
            31
        );

        let empty = MelodyGrid::new(vec![], 0.125).unwrap();
        assert!(segment_song(&empty, &ChordTrack::default(), 32).is_empty());
    }

    #[test]
    fn corpus_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.json");
        let songs = vec![song_with(
            vec![note(0.0, 0.5, 60), note(0.5, 0.5, 62)],
            vec![ChordEvent {
                onset_sec: 0.0,
                duration_sec: 1.0,
                root: 0,
                pitch_classes: vec![0, 4, 7],
                quality: "maj".into(),
            }],
        )];
        write_corpus(&songs, &path).unwrap();
        let parsed = parse_corpus(&path).unwrap();
        assert_eq!(parsed, songs);

        std::fs::write(&path, "[]").unwrap();
        assert!(parse_corpus(&path).unwrap().is_empty());

        let bad = vec![song_with(vec![note(0.0, 0.0, 60)], vec![])];
        let text = serde_json::to_string(&bad).unwrap();
        std::fs::write(&path, text).unwrap();
        match parse_corpus(&path) {
            Err(CorpusError::Validation { song: 0, field: "notes", .. }) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_notes_rejected() {
        let bad = song_with(vec![note(0.0, 1.0, 60), note(0.5, 0.5, 62)], vec![]);
        assert!(bad.validate(3).is_err());
    }

    #[test]
    fn synth_is_deterministic_and_valid() {
        let params = SynthParams::default();
        let a = synth_corpus(7, 5, &params);
        let b = synth_corpus(7, 5, &params);
        assert_eq!(a, b);
        for (i, s) in a.iter().enumerate() {
            s.validate(i).unwrap();
            assert_eq!(s.bpm, 120.0);
        }
        let big = synth_corpus(11, 50, &params);
        assert_eq!(big.len(), 50);
        for (i, s) in big.iter().enumerate() {
            s.validate(i).unwrap();
        }
    }

    #[test]
    fn synth_songs_roundtrip_through_grid() {
        let params = SynthParams::default();
        for (i, song) in synth_corpus(3, 10, &params).iter().enumerate() {
            let (grid, _) = quantize(song, DEFAULT_TIMESTEP_SEC).unwrap();
            let notes = grid_to_notes(&grid);
            assert_eq!(notes.len(), song.notes.len(), "song {i} note count");
            for (a, b) in notes.iter().zip(&song.notes) {
                assert!((a.onset_sec - b.onset_sec).abs() < 1e-12);
                assert!((a.duration_sec - b.duration_sec).abs() < 1e-12);
                assert_eq!(a.pitch, b.pitch);
            }
        }
    }

    #[test]
    fn synth_has_planted_repeats() {
        let params = SynthParams::default();
        let songs = synth_corpus(21, 10, &params);
        for song in &songs {
            let (grid, chords) = quantize(song, DEFAULT_TIMESTEP_SEC).unwrap();
            let segs = segment_song(&grid, &chords, DEFAULT_SEGMENT_LEN);
            let mut repeated = false;
            for i in 0..segs.len() {
                for j in i + 1..segs.len() {
                    if segs[i].tokens == segs[j].tokens {
                        repeated = true;
                    }
                }
            }
            assert!(repeated, "every synthetic song should repeat a phrase");
        }
    }

    #[test]
    fn normalize_bpm_scales_times() {
        let mut song = song_with(vec![note(0.0, 1.0, 60), note(1.0, 1.0, 62)], vec![]);
        song.bpm = 60.0;
        let norm = normalize_to_bpm(&song, 120.0);
        assert_eq!(norm.bpm, 120.0);
        assert_eq!(norm.notes[1].onset_sec, 0.5);
        assert_eq!(norm.notes[1].duration_sec, 0.5);
    }
}
