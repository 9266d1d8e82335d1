//! Quantitative evaluation: duration-ratio rhythm accuracy and token
//! accuracy.
//!
//! Rhythm accuracy scores a generation against a reference by onset hits.
//! For each reference note i >= 2, find the generated note nearest its onset;
//! the term is 1 when the onset lands within the tolerance, weighted down by
//! the duration share of spurious generated notes strictly between the
//! previous hit and this one:
//!
//!   term_i = [|r_i - g_h(r_i)| < eps] * (1 - sum d_g(h(r_{i-1})+1 .. h(r_i)-1)
//!                                          / sum d_g(h(r_{i-1}) .. h(r_i)))
//!
//! The summed terms are divided by the reference note count n (so an exact
//! copy scores (n-1)/n) or, under the alternative normalization, by n-1.

use thiserror::Error;

use crate::symbolic::{MelodyGrid, NoteEvent};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("generation has no notes")]
    EmptyGeneration,
    #[error("reference needs at least 2 notes, got {0}")]
    TooFewReferenceNotes(usize),
    #[error("grids have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// How the summed hit terms are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divide by the reference note count n; identity scores (n-1)/n.
    PaperLiteral,
    /// Divide by n-1, the number of summed terms; identity scores 1.
    HitCount,
}

#[derive(Debug, Clone, Copy)]
pub struct RhythmAccuracyConfig {
    pub epsilon_sec: f64,
    pub normalization: Normalization,
}

impl Default for RhythmAccuracyConfig {
    fn default() -> Self {
        RhythmAccuracyConfig {
            epsilon_sec: 0.1,
            normalization: Normalization::PaperLiteral,
        }
    }
}

/// Index of the generated note whose onset is nearest to `x`; ties break
/// toward the smaller index. Notes must be onset-sorted.
pub fn nearest_index(x: f64, generation: &[NoteEvent]) -> Result<usize, MetricError> {
    if generation.is_empty() {
        return Err(MetricError::EmptyGeneration);
    }
    let mut best = 0;
    let mut best_d = (generation[0].onset_sec - x).abs();
    for (i, n) in generation.iter().enumerate().skip(1) {
        let d = (n.onset_sec - x).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}

/// Duration-ratio weighted onset-hit score in [0, 1].
pub fn rhythm_accuracy(
    reference: &[NoteEvent],
    generation: &[NoteEvent],
    config: &RhythmAccuracyConfig,
) -> Result<f64, MetricError> {
    let n = reference.len();
    if n < 2 {
        return Err(MetricError::TooFewReferenceNotes(n));
    }
    if generation.is_empty() {
        return Err(MetricError::EmptyGeneration);
    }
    debug_assert!(
        reference.windows(2).all(|w| w[0].onset_sec <= w[1].onset_sec)
            && generation.windows(2).all(|w| w[0].onset_sec <= w[1].onset_sec),
        "note lists must be onset-sorted"
    );
    let mut sum = 0.0;
    let mut prev_h = nearest_index(reference[0].onset_sec, generation)?;
    for r in &reference[1..] {
        let h = nearest_index(r.onset_sec, generation)?;
        let hit = (r.onset_sec - generation[h].onset_sec).abs() < config.epsilon_sec;
        if hit {
            let mut spurious = 0.0;
            for gnote in generation.iter().take(h).skip(prev_h + 1) {
                spurious += gnote.duration_sec;
            }
            let mut span = 0.0;
            for gnote in generation.iter().take(h + 1).skip(prev_h) {
                span += gnote.duration_sec;
            }
            sum += 1.0 - spurious / span;
        }
        prev_h = h;
    }
    let denom = match config.normalization {
        Normalization::PaperLiteral => n as f64,
        Normalization::HitCount => (n - 1) as f64,
    };
    Ok(sum / denom)
}

/// Fraction of cells whose tokens match between two equal-length grids.
pub fn token_accuracy(pred: &MelodyGrid, target: &MelodyGrid) -> Result<f64, MetricError> {
    if pred.len() != target.len() {
        return Err(MetricError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Ok(1.0);
    }
    let matching = pred
        .tokens()
        .iter()
        .zip(target.tokens())
        .filter(|(a, b)| a == b)
        .count();
    Ok(matching as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::MelodyToken;

    fn note(onset: f64, dur: f64) -> NoteEvent {
        NoteEvent {
            onset_sec: onset,
            duration_sec: dur,
            pitch: 60,
        }
    }

    #[test]
    fn nearest_index_examples() {
        let gen = vec![note(0.0, 0.5), note(0.5, 0.5), note(1.0, 0.5)];
        assert_eq!(nearest_index(0.5, &gen).unwrap(), 1);
        assert_eq!(nearest_index(5.0, &gen).unwrap(), 2);
        let gen2 = vec![note(0.0, 0.5), note(0.5, 0.5)];
        assert_eq!(nearest_index(0.25, &gen2).unwrap(), 0, "tie goes to smaller index");
        assert!(matches!(
            nearest_index(0.0, &[]),
            Err(MetricError::EmptyGeneration)
        ));
    }

    #[test]
    fn identity_scores_n_minus_one_over_n() {
        let config = RhythmAccuracyConfig::default();
        let notes = vec![note(0.0, 0.5), note(0.5, 0.5), note(1.0, 0.5), note(1.5, 0.5)];
        let acc = rhythm_accuracy(&notes, &notes, &config).unwrap();
        assert_eq!(acc, 0.75);
        let hc = RhythmAccuracyConfig {
            normalization: Normalization::HitCount,
            ..config
        };
        assert_eq!(rhythm_accuracy(&notes, &notes, &hc).unwrap(), 1.0);
    }

    #[test]
    fn worked_example_with_spurious_note() {
        let config = RhythmAccuracyConfig::default();
        let reference = vec![note(0.0, 0.5), note(0.5, 0.5), note(1.0, 0.5)];
        let generation = vec![
            note(0.0, 0.5),
            note(0.5, 0.25),
            note(0.75, 0.25),
            note(1.0, 0.5),
        ];
        let acc = rhythm_accuracy(&reference, &generation, &config).unwrap();
        assert!((acc - 1.75 / 3.0).abs() < 1e-15, "got {acc}");
    }

    #[test]
    fn shifted_generation_scores_zero() {
        let config = RhythmAccuracyConfig::default();
        let reference = vec![note(0.0, 0.5), note(0.5, 0.5), note(1.0, 0.5)];
        let generation: Vec<NoteEvent> = reference
            .iter()
            .map(|n| note(n.onset_sec + 0.2, n.duration_sec))
            .collect();
        assert_eq!(rhythm_accuracy(&reference, &generation, &config).unwrap(), 0.0);
    }

    #[test]
    fn tolerance_boundary_is_strict() {
        // use a binary-exact epsilon so the boundary case is representable
        let config = RhythmAccuracyConfig {
            epsilon_sec: 0.125,
            normalization: Normalization::PaperLiteral,
        };
        let reference = vec![note(0.0, 0.5), note(0.5, 0.5)];
        // off by exactly epsilon: a miss
        let generation = vec![note(0.0, 0.5), note(0.625, 0.5)];
        assert_eq!(rhythm_accuracy(&reference, &generation, &config).unwrap(), 0.0);
        // off by half the tolerance: a hit
        let generation = vec![note(0.0, 0.5), note(0.5625, 0.5)];
        assert!(rhythm_accuracy(&reference, &generation, &config).unwrap() > 0.0);
    }

    #[test]
    fn errors_on_degenerate_inputs() {
        let config = RhythmAccuracyConfig::default();
        assert!(matches!(
            rhythm_accuracy(&[note(0.0, 0.5)], &[note(0.0, 0.5)], &config),
            Err(MetricError::TooFewReferenceNotes(1))
        ));
        assert!(matches!(
            rhythm_accuracy(&[note(0.0, 0.5), note(0.5, 0.5)], &[], &config),
            Err(MetricError::EmptyGeneration)
        ));
    }

    #[test]
    fn token_accuracy_fractions() {
        let g = |vals: &[u8]| {
            MelodyGrid::new(
                vals.iter()
                    .map(|&v| MelodyToken::new(v as u16).unwrap())
                    .collect(),
                0.125,
            )
            .unwrap()
        };
        let a = g(&[60, 128, 129, 62]);
        assert_eq!(token_accuracy(&a, &a).unwrap(), 1.0);
        let b = g(&[61, 129, 61, 63]);
        assert_eq!(token_accuracy(&a, &b).unwrap(), 0.0);
        let c = g(&[60, 128, 129, 63]);
        assert_eq!(token_accuracy(&a, &c).unwrap(), 0.75);
        let short = g(&[60]);
        assert!(matches!(
            token_accuracy(&a, &short),
            Err(MetricError::LengthMismatch(4, 1))
        ));
    }
}
