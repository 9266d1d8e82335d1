//! Chord-function labelling: every chord gets one of four roles relative to
//! the key's tonal center — T (tonic), D (dominant), S (subdominant), O
//! (other) — and cells without chord information get a padding label.
//!
//! Classification is by the root's scale degree, quality-agnostic, so
//! sevenths and ninths inherit their triad's label. Major keys: degrees
//! 1 and 6 are T, 4 and 2 are S, 5, 7 and 3 are D. Natural minor: 1, 3 and 6
//! are T, 4 and 2 are S, 5 and 7 are D (a raised-leading-tone dominant still
//! has root degree 5, so it lands on D). Everything else, including chords
//! on non-diatonic roots, is O.

use crate::symbolic::{ChordEvent, Chroma, Key, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChordFunction {
    Tonic,
    Dominant,
    Subdominant,
    Other,
}

/// Per-cell label: a chord function or padding for chord-free cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellFunction {
    Function(ChordFunction),
    Pad,
}

/// Width of the one-hot condition vector: T, D, S, O, pad.
pub const FUNCTION_DIM: usize = 5;

impl CellFunction {
    /// One-hot layout [T, D, S, O, pad].
    pub fn one_hot(&self) -> [f64; FUNCTION_DIM] {
        let mut v = [0.0; FUNCTION_DIM];
        v[self.index()] = 1.0;
        v
    }

    pub fn index(&self) -> usize {
        match self {
            CellFunction::Function(ChordFunction::Tonic) => 0,
            CellFunction::Function(ChordFunction::Dominant) => 1,
            CellFunction::Function(ChordFunction::Subdominant) => 2,
            CellFunction::Function(ChordFunction::Other) => 3,
            CellFunction::Pad => 4,
        }
    }

    pub fn from_index(i: usize) -> CellFunction {
        match i {
            0 => CellFunction::Function(ChordFunction::Tonic),
            1 => CellFunction::Function(ChordFunction::Dominant),
            2 => CellFunction::Function(ChordFunction::Subdominant),
            3 => CellFunction::Function(ChordFunction::Other),
            4 => CellFunction::Pad,
            _ => panic!("cell function index {i} out of range"),
        }
    }
}

/// Per-cell chord-function track aligned 1:1 with a melody grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FunctionTrack {
    pub cells: Vec<CellFunction>,
}

const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR_SCALE: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

/// Scale degree (1-7) of a pitch-class root in the key, or `None` when the
/// root is not on the key's diatonic (major or natural minor) scale.
pub fn scale_degree(root: u8, key: Key) -> Option<u8> {
    let rel = (root as i32 - key.tonic as i32).rem_euclid(12) as u8;
    let scale = match key.mode {
        Mode::Major => &MAJOR_SCALE,
        Mode::Minor => &MINOR_SCALE,
    };
    scale.iter().position(|&s| s == rel).map(|i| i as u8 + 1)
}

/// Classify a chord by its root degree. The chroma and quality fields are
/// accepted for interface completeness but do not influence the label.
pub fn chord_function(root: u8, _pitches: Chroma, _quality: &str, key: Key) -> ChordFunction {
    let degree = match scale_degree(root, key) {
        Some(d) => d,
        None => return ChordFunction::Other,
    };
    match key.mode {
        Mode::Major => match degree {
            1 | 6 => ChordFunction::Tonic,
            4 | 2 => ChordFunction::Subdominant,
            5 | 7 | 3 => ChordFunction::Dominant,
            _ => ChordFunction::Other,
        },
        Mode::Minor => match degree {
            1 | 3 | 6 => ChordFunction::Tonic,
            4 | 2 => ChordFunction::Subdominant,
            5 | 7 => ChordFunction::Dominant,
            _ => ChordFunction::Other,
        },
    }
}

pub fn chord_event_function(chord: &ChordEvent, key: Key) -> ChordFunction {
    chord_function(chord.root, chord.chroma(), &chord.quality, key)
}

/// Label every grid cell with the function of the chord active at the cell's
/// start time; chord-free cells get the padding label. `chords` must be
/// sorted and non-overlapping.
pub fn function_track(
    chords: &[ChordEvent],
    key: Key,
    grid_len: usize,
    timestep_sec: f64,
) -> FunctionTrack {
    const TIME_EPS: f64 = 1e-9;
    let mut cells = vec![CellFunction::Pad; grid_len];
    let mut ci = 0;
    for (i, cell) in cells.iter_mut().enumerate() {
        let t = i as f64 * timestep_sec;
        while ci < chords.len() && chords[ci].onset_sec + chords[ci].duration_sec - TIME_EPS <= t {
            ci += 1;
        }
        if let Some(ch) = chords.get(ci) {
            if ch.onset_sec - TIME_EPS <= t && t < ch.onset_sec + ch.duration_sec - TIME_EPS {
                *cell = CellFunction::Function(chord_event_function(ch, key));
            }
        }
    }
    FunctionTrack { cells }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn major(tonic: u8) -> Key {
        Key { tonic, mode: Mode::Major }
    }

    fn minor(tonic: u8) -> Key {
        Key { tonic, mode: Mode::Minor }
    }

    fn chord(onset: f64, dur: f64, root: u8, pcs: &[u8]) -> ChordEvent {
        ChordEvent {
            onset_sec: onset,
            duration_sec: dur,
            root,
            pitch_classes: pcs.to_vec(),
            quality: "maj".into(),
        }
    }

    #[test]
    fn scale_degrees_major() {
        assert_eq!(scale_degree(7, major(0)), Some(5)); // G in C major
        assert_eq!(scale_degree(6, major(0)), None); // F# in C major
        assert_eq!(scale_degree(0, major(0)), Some(1));
        assert_eq!(scale_degree(11, major(0)), Some(7));
    }

    #[test]
    fn scale_degrees_minor() {
        assert_eq!(scale_degree(3, minor(0)), Some(3)); // Eb in C minor
        assert_eq!(scale_degree(11, minor(0)), None); // raised leading tone is non-diatonic as a root
        assert_eq!(scale_degree(10, minor(0)), Some(7));
    }

    fn f(root: u8, key: Key) -> ChordFunction {
        chord_function(root, Chroma::from_pitch_classes(&[root]), "maj", key)
    }

    #[test]
    fn c_major_reference_table() {
        use ChordFunction::*;
        let key = major(0);
        assert_eq!(f(0, key), Tonic); // C
        assert_eq!(f(9, key), Tonic); // Am
        assert_eq!(f(5, key), Subdominant); // F
        assert_eq!(f(2, key), Subdominant); // Dm
        assert_eq!(f(7, key), Dominant); // G
        assert_eq!(f(11, key), Dominant); // Bdim
        assert_eq!(f(4, key), Dominant); // Em
        assert_eq!(f(10, key), Other); // Bb
        assert_eq!(f(6, key), Other); // F#
    }

    #[test]
    fn extensions_inherit_triad_label() {
        let key = major(0);
        // G7 = {G,B,D,F}
        let g7 = chord_function(7, Chroma::from_pitch_classes(&[7, 11, 2, 5]), "7", key);
        assert_eq!(g7, ChordFunction::Dominant);
        // Dm7 = {D,F,A,C}
        let dm7 = chord_function(2, Chroma::from_pitch_classes(&[2, 5, 9, 0]), "min7", key);
        assert_eq!(dm7, ChordFunction::Subdominant);
        // Cmaj7 and C9 stay tonic
        let cmaj7 = chord_function(0, Chroma::from_pitch_classes(&[0, 4, 11, 7]), "maj7", key);
        assert_eq!(cmaj7, ChordFunction::Tonic);
    }

    #[test]
    fn minor_table() {
        use ChordFunction::*;
        let key = minor(0);
        assert_eq!(f(0, key), Tonic);
        assert_eq!(f(3, key), Tonic); // Eb
        assert_eq!(f(8, key), Tonic); // Ab
        assert_eq!(f(5, key), Subdominant); // Fm
        assert_eq!(f(2, key), Subdominant);
        assert_eq!(f(7, key), Dominant); // G or Gm: root degree 5 either way
        assert_eq!(f(10, key), Dominant); // Bb
        assert_eq!(f(11, key), Other); // B natural as a root
    }

    #[test]
    fn transposition_equivariance_all_keys() {
        for k in 0..12u8 {
            for mode in [Mode::Major, Mode::Minor] {
                for root in 0..12u8 {
                    let base = Key { tonic: 0, mode };
                    let moved = Key { tonic: k, mode };
                    assert_eq!(
                        f(root, base),
                        f((root + k) % 12, moved),
                        "root {root} shifted by {k} in {mode:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn function_track_cells() {
        let key = major(0);
        // C chord over 4 cells
        let track = function_track(&[chord(0.0, 0.5, 0, &[0, 4, 7])], key, 4, 0.125);
        assert!(track
            .cells
            .iter()
            .all(|c| *c == CellFunction::Function(ChordFunction::Tonic)));

        // no chords -> all pad
        let track = function_track(&[], key, 3, 0.125);
        assert!(track.cells.iter().all(|c| *c == CellFunction::Pad));

        // C then G, two cells each -> T,T,D,D
        let track = function_track(
            &[chord(0.0, 0.25, 0, &[0, 4, 7]), chord(0.25, 0.25, 7, &[7, 11, 2])],
            key,
            4,
            0.125,
        );
        let expect = [
            CellFunction::Function(ChordFunction::Tonic),
            CellFunction::Function(ChordFunction::Tonic),
            CellFunction::Function(ChordFunction::Dominant),
            CellFunction::Function(ChordFunction::Dominant),
        ];
        assert_eq!(track.cells, expect);
    }

    #[test]
    fn one_hot_has_exactly_one_bit() {
        for i in 0..FUNCTION_DIM {
            let c = CellFunction::from_index(i);
            let v = c.one_hot();
            assert_eq!(v.iter().sum::<f64>(), 1.0);
            assert_eq!(v[i], 1.0);
            assert_eq!(c.index(), i);
        }
    }
}
