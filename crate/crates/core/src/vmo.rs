//! Variable Markov Oracle analysis of melodic frame series: online oracle
//! construction over threshold-matched frames, an information-rate estimator
//! used to pick the matching threshold, and repeated-pattern extraction.
//!
//! Frames are per-cell sounding pitches (holds expanded to the sounding
//! pitch) with a rest sentinel that is infinitely far from every pitch and
//! at distance zero from itself, so repetition detection tracks melodic
//! content including silences.

use crate::symbolic::MelodyGrid;

/// Sentinel frame value for rests.
pub const REST_FRAME: f64 = -1.0;

/// Default frame distance: absolute difference on pitches; rests match only
/// rests.
pub fn frame_distance(a: f64, b: f64) -> f64 {
    let ra = a < 0.0;
    let rb = b < 0.0;
    match (ra, rb) {
        (true, true) => 0.0,
        (false, false) => (a - b).abs(),
        _ => f64::INFINITY,
    }
}

/// A non-empty series of real-valued frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    frames: Vec<f64>,
}

impl FrameSeries {
    pub fn new(frames: Vec<f64>) -> Self {
        assert!(!frames.is_empty(), "frame series must be non-empty");
        FrameSeries { frames }
    }

    /// Expand a melody grid: pitch tokens start a sounding pitch, holds
    /// repeat it, rests map to the sentinel.
    pub fn from_grid(grid: &MelodyGrid) -> Self {
        assert!(!grid.is_empty(), "cannot analyze an empty grid");
        let mut frames = Vec::with_capacity(grid.len());
        let mut current = REST_FRAME;
        for t in grid.tokens() {
            if t.is_pitch() {
                current = t.value() as f64;
            } else if t.is_rest() {
                current = REST_FRAME;
            }
            frames.push(current);
        }
        FrameSeries { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 1-based frame access, matching oracle state numbering.
    pub fn frame(&self, idx: usize) -> f64 {
        self.frames[idx - 1]
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    /// Largest finite pairwise distance, or 0 when none exists.
    pub fn max_pairwise_distance(&self, dist: impl Fn(f64, f64) -> f64) -> f64 {
        let mut max = 0.0f64;
        for i in 0..self.frames.len() {
            for j in i + 1..self.frames.len() {
                let d = dist(self.frames[i], self.frames[j]);
                if d.is_finite() && d > max {
                    max = d;
                }
            }
        }
        max
    }
}

/// Factor-oracle automaton over threshold-clustered frames. State 0 is the
/// empty state; state t corresponds to the series prefix of length t.
#[derive(Debug, Clone)]
pub struct Oracle {
    theta: f64,
    /// Forward transitions per state, in creation order. The label of a
    /// transition into state j is frame j.
    trans: Vec<Vec<usize>>,
    /// Suffix links; sfx[0] is unused and holds 0.
    sfx: Vec<usize>,
    /// Longest repeated suffix per state; lrs[0] = 0.
    lrs: Vec<usize>,
    frames: FrameSeries,
}

impl Oracle {
    pub fn state_count(&self) -> usize {
        self.sfx.len()
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sfx(&self) -> &[usize] {
        &self.sfx
    }

    pub fn lrs(&self) -> &[usize] {
        &self.lrs
    }

    pub fn transitions(&self, state: usize) -> &[usize] {
        &self.trans[state]
    }

    pub fn frames(&self) -> &FrameSeries {
        &self.frames
    }
}

/// Online oracle construction with the default frame distance.
pub fn build_oracle(series: &FrameSeries, theta: f64) -> Oracle {
    build_oracle_with(series, theta, frame_distance)
}

/// Online construction: for each new frame t, walk the suffix chain from
/// state t-1; every visited state lacking a theta-matching outgoing
/// transition gains one into t, and the suffix link of t goes to the target
/// of the first matching transition found (0 if the walk exhausts). lrs[t]
/// is recomputed by a direct backward scan against the suffix-link target.
pub fn build_oracle_with(
    series: &FrameSeries,
    theta: f64,
    dist: impl Fn(f64, f64) -> f64,
) -> Oracle {
    assert!(theta >= 0.0, "theta must be nonnegative");
    let n = series.len();
    let mut trans: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    let mut sfx = vec![0usize; n + 1];
    let mut lrs = vec![0usize; n + 1];

    for t in 1..=n {
        let label = series.frame(t);
        let mut k = t - 1;
        let link;
        loop {
            // best theta-match among k's transitions: smallest distance,
            // ties to the earliest-created transition
            let mut best: Option<(usize, f64)> = None;
            for &target in &trans[k] {
                let d = dist(series.frame(target), label);
                if d < theta {
                    let better = match best {
                        None => true,
                        Some((_, bd)) => d < bd,
                    };
                    if better {
                        best = Some((target, d));
                    }
                }
            }
            if let Some((target, _)) = best {
                link = target;
                break;
            }
            trans[k].push(t);
            if k == 0 {
                link = 0;
                break;
            }
            k = sfx[k];
        }
        sfx[t] = link;
        if link > 0 {
            let mut len = 0usize;
            while len < link && dist(series.frame(t - len), series.frame(link - len)) < theta {
                len += 1;
            }
            lrs[t] = len;
        }
    }

    Oracle {
        theta,
        trans,
        sfx,
        lrs,
        frames: series.clone(),
    }
}

/// Total information rate of the series in bits: the coding gain of a greedy
/// block-copy encoding over the oracle against a literal-only baseline.
///
/// K counts symbol clusters (states created without any theta-match, plus
/// the initial one). The baseline spends log2(K+1) per frame; the encoder
/// emits either a literal at log2(K+1) bits or, when a maximal run of
/// growing repeated suffixes is available, a block at log2(N) + log2(K+1)
/// bits covering the whole run. IR is clamped at zero.
pub fn information_rate(oracle: &Oracle) -> f64 {
    let n = oracle.frame_count();
    let lrs = oracle.lrs();
    let sfx = oracle.sfx();
    let clusters = 1 + (2..=n).filter(|&t| sfx[t] == 0).count();
    let sym_bits = ((clusters + 1) as f64).log2();
    let h0 = n as f64 * sym_bits;
    let block_bits = (n as f64).log2() + sym_bits;

    let mut cost = 0.0;
    let mut i = 1usize;
    while i <= n {
        let mut run = 0usize;
        while i + run <= n && lrs[i + run] >= run + 1 {
            run += 1;
        }
        if run >= 1 {
            cost += block_bits;
            i += run;
        } else {
            cost += sym_bits;
            i += 1;
        }
    }
    (h0 - cost).max(0.0)
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub theta: f64,
    pub ir: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub theta_star: f64,
    pub ir_star: f64,
    pub curve: Vec<SweepPoint>,
}

/// Evaluate IR on `grid_size` evenly spaced thresholds spanning (0, max
/// pairwise distance] and pick the maximizer (ties to the smallest theta).
/// A single-frame series returns theta 0 with IR 0; an all-identical series
/// sweeps a unit span instead of the degenerate zero span.
pub fn threshold_sweep(series: &FrameSeries, grid_size: usize) -> SweepResult {
    assert!(grid_size >= 2, "sweep needs at least 2 candidates");
    if series.len() == 1 {
        return SweepResult {
            theta_star: 0.0,
            ir_star: 0.0,
            curve: Vec::new(),
        };
    }
    let mut span = series.max_pairwise_distance(frame_distance);
    if span <= 0.0 {
        span = 1.0;
    }
    let mut curve = Vec::with_capacity(grid_size);
    let mut best: Option<(f64, f64)> = None;
    for j in 1..=grid_size {
        let theta = span * j as f64 / grid_size as f64;
        let oracle = build_oracle(series, theta);
        let ir = information_rate(&oracle);
        curve.push(SweepPoint { theta, ir });
        let improves = match best {
            None => true,
            Some((_, bi)) => ir > bi,
        };
        if improves {
            best = Some((theta, ir));
        }
    }
    let (theta_star, ir_star) = best.unwrap();
    SweepResult {
        theta_star,
        ir_star,
        curve,
    }
}

/// A repeated pattern: `length` frames long, occurring at each listed
/// 1-based start frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub length: usize,
    pub occurrences: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Interval {
    start: usize,
    end: usize,
}

impl Interval {
    fn overlaps(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    fn contains(&self, other: &Interval) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    fn len(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Extract repeated patterns of at least `min_len` frames. Every state with
/// a long enough repeated suffix contributes an occurrence pair; pairs that
/// overlap anywhere merge transitively into one pattern class, contained
/// occurrences are trimmed, and the class is normalized to its shortest
/// occurrence length (suffix-aligned). Occurrences that fail the pairwise
/// positionwise distance check against the kept set are dropped.
pub fn find_patterns(oracle: &Oracle, min_len: usize) -> Vec<Pattern> {
    assert!(min_len >= 2, "min_len must be at least 2");
    let n = oracle.frame_count();
    let lrs = oracle.lrs();
    let sfx = oracle.sfx();

    let mut pairs: Vec<[Interval; 2]> = Vec::new();
    for t in 1..=n {
        if lrs[t] >= min_len {
            let l = lrs[t];
            let s = sfx[t];
            pairs.push([
                Interval { start: t - l + 1, end: t },
                Interval { start: s - l + 1, end: s },
            ]);
        }
    }
    if pairs.is_empty() {
        return Vec::new();
    }

    // transitive merge of overlapping pairs (union-find)
    let mut parent: Vec<usize> = (0..pairs.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            let touch = pairs[i]
                .iter()
                .any(|a| pairs[j].iter().any(|b| a.overlaps(b)));
            if touch {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }

    let mut classes: std::collections::BTreeMap<usize, Vec<Interval>> =
        std::collections::BTreeMap::new();
    for i in 0..pairs.len() {
        let root = find(&mut parent, i);
        let entry = classes.entry(root).or_default();
        for iv in pairs[i] {
            if !entry.contains(&iv) {
                entry.push(iv);
            }
        }
    }

    let mut patterns = Vec::new();
    for (_, intervals) in classes {
        // trim occurrences fully contained in another
        let maximal: Vec<Interval> = intervals
            .iter()
            .filter(|a| !intervals.iter().any(|b| b != *a && b.contains(a)))
            .cloned()
            .collect();
        if maximal.len() < 2 {
            continue;
        }
        let length = maximal.iter().map(Interval::len).min().unwrap();
        // suffix-aligned: keep the last `length` frames of each occurrence
        let mut starts: Vec<usize> = maximal.iter().map(|iv| iv.end - length + 1).collect();
        starts.sort_unstable();
        starts.dedup();
        // enforce pairwise positionwise theta-validity
        let mut kept: Vec<usize> = Vec::new();
        'cand: for &s in &starts {
            for &k in &kept {
                for m in 0..length {
                    let d = frame_distance(
                        oracle.frames.frame(k + m),
                        oracle.frames.frame(s + m),
                    );
                    if !(d < oracle.theta) {
                        continue 'cand;
                    }
                }
            }
            kept.push(s);
        }
        if kept.len() >= 2 {
            patterns.push(Pattern {
                length,
                occurrences: kept,
            });
        }
    }
    patterns.sort_by_key(|p| p.occurrences[0]);
    patterns
}
