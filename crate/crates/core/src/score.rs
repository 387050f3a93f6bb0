//! Evaluation: diarization error rate with a no-score collar around
//! reference boundaries, per-speech-type FA/MISS under both denominators,
//! frame/segment conversions, and RTTM I/O.
//!
//! Time is quantized internally to a 10 ms grid; the optimal speaker mapping
//! is solved exactly (assignment over the overlap matrix).

use crate::{Error, Real, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// Internal scoring resolution in seconds.
pub const GRID_S: Real = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub start_s: Real,
    pub end_s: Real,
}

/// Segment-level "who spoke when" for one recording. Same-speaker segments
/// that touch or overlap are merged on construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub recording: String,
    pub turns: Vec<Turn>,
}

impl Annotation {
    pub fn new(recording: impl Into<String>, mut turns: Vec<Turn>) -> Result<Self> {
        for t in &turns {
            if !(t.end_s > t.start_s) || t.start_s < 0.0 {
                return Err(Error::input(format!(
                    "bad segment [{}, {}) for '{}'",
                    t.start_s, t.end_s, t.speaker
                )));
            }
        }
        turns.sort_by(|a, b| {
            a.speaker
                .cmp(&b.speaker)
                .then(a.start_s.partial_cmp(&b.start_s).unwrap())
        });
        let mut merged: Vec<Turn> = Vec::with_capacity(turns.len());
        for t in turns {
            match merged.last_mut() {
                Some(last) if last.speaker == t.speaker && t.start_s <= last.end_s => {
                    last.end_s = last.end_s.max(t.end_s);
                }
                _ => merged.push(t),
            }
        }
        merged.sort_by(|a, b| {
            a.start_s
                .partial_cmp(&b.start_s)
                .unwrap()
                .then(a.speaker.cmp(&b.speaker))
        });
        Ok(Annotation { recording: recording.into(), turns: merged })
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.turns {
            if !out.contains(&t.speaker) {
                out.push(t.speaker.clone());
            }
        }
        out
    }

    pub fn end_s(&self) -> Real {
        self.turns.iter().map(|t| t.end_s).fold(0.0, Real::max)
    }

    pub fn total_speech_s(&self) -> Real {
        self.turns.iter().map(|t| t.end_s - t.start_s).sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DerReport {
    pub recording: String,
    pub miss_s: Real,
    pub fa_s: Real,
    pub confusion_s: Real,
    pub scored_speech_s: Real,
    pub der: Real,
    /// (reference speaker, hypothesis speaker) pairs actually used.
    pub mapping: Vec<(String, String)>,
}

impl DerReport {
    fn finalize(mut self) -> Self {
        self.der = if self.scored_speech_s > 0.0 {
            (self.miss_s + self.fa_s + self.confusion_s) / self.scored_speech_s
        } else if self.miss_s + self.fa_s + self.confusion_s > 0.0 {
            Real::INFINITY
        } else {
            0.0
        };
        self
    }
}

fn grid_index(t: Real) -> usize {
    ((t / GRID_S).round()).max(0.0) as usize
}

fn rasterize(ann: &Annotation, speakers: &[String], frames: usize) -> Vec<Vec<bool>> {
    let mut grid = vec![vec![false; frames]; speakers.len()];
    for turn in &ann.turns {
        let s = speakers.iter().position(|n| n == &turn.speaker).unwrap();
        let a = grid_index(turn.start_s).min(frames);
        let b = grid_index(turn.end_s).min(frames);
        for f in a..b {
            grid[s][f] = true;
        }
    }
    grid
}

/// Exact max-overlap one-to-one assignment (bitmask DP over hypothesis
/// speakers). Returns per-reference-speaker hypothesis index.
fn optimal_assignment(overlap: &[Vec<Real>]) -> Vec<Option<usize>> {
    let r = overlap.len();
    let h = if r > 0 { overlap[0].len() } else { 0 };
    if r == 0 || h == 0 {
        return vec![None; r];
    }
    assert!(h <= 20, "assignment supports up to 20 hypothesis speakers");
    let full = 1usize << h;
    // dp[mask] = best score over processed refs with hyp set `mask` used.
    let mut dp = vec![Real::NEG_INFINITY; full];
    dp[0] = 0.0;
    let mut choices = vec![vec![(0usize, None); full]; r];
    for (i, row) in overlap.iter().enumerate() {
        let mut next = vec![Real::NEG_INFINITY; full];
        let mut choice = vec![(0usize, None); full];
        for mask in 0..full {
            if dp[mask] == Real::NEG_INFINITY {
                continue;
            }
            // Leave ref i unmapped.
            if dp[mask] > next[mask] {
                next[mask] = dp[mask];
                choice[mask] = (mask, None);
            }
            for hyp in 0..h {
                let bit = 1 << hyp;
                if mask & bit != 0 {
                    continue;
                }
                let m2 = mask | bit;
                let v = dp[mask] + row[hyp];
                if v > next[m2] {
                    next[m2] = v;
                    choice[m2] = (mask, Some(hyp));
                }
            }
        }
        dp = next;
        choices[i] = choice;
    }
    let mut best_mask = 0;
    for mask in 0..full {
        if dp[mask] > dp[best_mask] {
            best_mask = mask;
        }
    }
    let mut assign = vec![None; r];
    let mut mask = best_mask;
    for i in (0..r).rev() {
        let (prev, hyp) = choices[i][mask];
        assign[i] = hyp;
        mask = prev;
    }
    assign
}

/// DER with NIST-style no-score collars: a zone of ±`collar_s`/2 around each
/// reference segment boundary is excluded from scoring. Overlap regions are
/// scored with multiplicity; `score_overlap = false` excludes frames where
/// the reference has two or more active speakers.
pub fn der(
    reference: &Annotation,
    hypothesis: &Annotation,
    collar_s: Real,
    score_overlap: bool,
) -> Result<DerReport> {
    if collar_s < 0.0 {
        return Err(Error::input("collar must be >= 0"));
    }
    let end = reference.end_s().max(hypothesis.end_s());
    let frames = grid_index(end);
    let ref_speakers = reference.speakers();
    let hyp_speakers = hypothesis.speakers();
    let ref_grid = rasterize(reference, &ref_speakers, frames);
    let hyp_grid = rasterize(hypothesis, &hyp_speakers, frames);

    let mut scored = vec![true; frames];
    let half = collar_s / 2.0;
    for turn in &reference.turns {
        for boundary in [turn.start_s, turn.end_s] {
            let a = grid_index((boundary - half).max(0.0));
            let b = grid_index(boundary + half).min(frames);
            for f in a..b {
                scored[f] = false;
            }
        }
    }
    if !score_overlap {
        for f in 0..frames {
            let n: usize = ref_grid.iter().map(|row| row[f] as usize).sum();
            if n >= 2 {
                scored[f] = false;
            }
        }
    }

    let mut overlap = vec![vec![0.0; hyp_speakers.len()]; ref_speakers.len()];
    for (r, rrow) in ref_grid.iter().enumerate() {
        for (h, hrow) in hyp_grid.iter().enumerate() {
            let mut n = 0usize;
            for f in 0..frames {
                if scored[f] && rrow[f] && hrow[f] {
                    n += 1;
                }
            }
            overlap[r][h] = n as Real * GRID_S;
        }
    }
    let assign = optimal_assignment(&overlap);

    let (mut miss_f, mut fa_f, mut conf_f, mut speech_f) = (0usize, 0usize, 0usize, 0usize);
    for f in 0..frames {
        if !scored[f] {
            continue;
        }
        let n_ref: usize = ref_grid.iter().map(|row| row[f] as usize).sum();
        let n_hyp: usize = hyp_grid.iter().map(|row| row[f] as usize).sum();
        let mut n_correct = 0usize;
        for (r, hyp) in assign.iter().enumerate() {
            if let Some(h) = hyp {
                if ref_grid[r][f] && hyp_grid[*h][f] {
                    n_correct += 1;
                }
            }
        }
        speech_f += n_ref;
        miss_f += n_ref.saturating_sub(n_hyp);
        fa_f += n_hyp.saturating_sub(n_ref);
        conf_f += n_ref.min(n_hyp) - n_correct;
    }

    let mapping = assign
        .iter()
        .enumerate()
        .filter_map(|(r, h)| {
            h.map(|h| (ref_speakers[r].clone(), hyp_speakers[h].clone()))
        })
        .collect();
    Ok(DerReport {
        recording: reference.recording.clone(),
        miss_s: miss_f as Real * GRID_S,
        fa_s: fa_f as Real * GRID_S,
        confusion_s: conf_f as Real * GRID_S,
        scored_speech_s: speech_f as Real * GRID_S,
        der: 0.0,
        mapping,
    }
    .finalize())
}

/// Pooled aggregate over per-recording reports (equals the scored-time
/// weighted mean of the per-recording ratios).
pub fn aggregate_der(reports: &[DerReport]) -> DerReport {
    let mut out = DerReport {
        recording: "ALL".into(),
        miss_s: 0.0,
        fa_s: 0.0,
        confusion_s: 0.0,
        scored_speech_s: 0.0,
        der: 0.0,
        mapping: Vec::new(),
    };
    for r in reports {
        out.miss_s += r.miss_s;
        out.fa_s += r.fa_s;
        out.confusion_s += r.confusion_s;
        out.scored_speech_s += r.scored_speech_s;
    }
    out.finalize()
}

// ---------------------------------------------------------------------------
// Speech-type FA/MISS (non / single-speaker / overlap rows)

/// Denominator for the unstarred FA rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaDenominator {
    /// Reference class duration (default).
    RefClass,
    /// Duration of the reference complement (classic false-alarm rate).
    Complement,
}

#[derive(Clone, Debug, Serialize)]
pub struct TypeClassReport {
    pub class: String,
    pub ref_frames: usize,
    pub miss_frames: usize,
    pub fa_frames: usize,
    /// Percentages over the class denominator; `None` when undefined.
    pub miss_pct: Option<Real>,
    pub fa_pct: Option<Real>,
    /// Percentages over the total utterance duration.
    pub miss_star_pct: Real,
    pub fa_star_pct: Real,
}

#[derive(Clone, Debug, Serialize)]
pub struct TypeErrorReport {
    pub total_frames: usize,
    pub classes: Vec<TypeClassReport>,
}

/// Per-class FA/MISS treating the three type rows independently; conflicts
/// between rows are not resolved. Starred rates divide by the utterance
/// length instead of the class duration.
pub fn type_fa_miss(
    ref_types: &[u8],
    hyp_types: &[u8],
    t: usize,
    fa_denominator: FaDenominator,
) -> Result<TypeErrorReport> {
    if ref_types.len() != 3 * t || hyp_types.len() != 3 * t {
        return Err(Error::contract(format!(
            "type rows must be 3x{t}, got {} and {}",
            ref_types.len(),
            hyp_types.len()
        )));
    }
    if t == 0 {
        return Err(Error::contract("type_fa_miss needs at least one frame"));
    }
    let names = ["non", "sgl", "ovl"];
    let mut classes = Vec::with_capacity(3);
    for (c, name) in names.iter().enumerate() {
        let refs = &ref_types[c * t..(c + 1) * t];
        let hyps = &hyp_types[c * t..(c + 1) * t];
        let ref_frames = refs.iter().filter(|&&v| v == 1).count();
        let miss_frames = (0..t).filter(|&f| refs[f] == 1 && hyps[f] == 0).count();
        let fa_frames = (0..t).filter(|&f| refs[f] == 0 && hyps[f] == 1).count();
        let fa_den = match fa_denominator {
            FaDenominator::RefClass => ref_frames,
            FaDenominator::Complement => t - ref_frames,
        };
        classes.push(TypeClassReport {
            class: name.to_string(),
            ref_frames,
            miss_frames,
            fa_frames,
            miss_pct: (ref_frames > 0)
                .then(|| 100.0 * miss_frames as Real / ref_frames as Real),
            fa_pct: (fa_den > 0).then(|| 100.0 * fa_frames as Real / fa_den as Real),
            miss_star_pct: 100.0 * miss_frames as Real / t as Real,
            fa_star_pct: 100.0 * fa_frames as Real / t as Real,
        });
    }
    Ok(TypeErrorReport { total_frames: t, classes })
}

// ---------------------------------------------------------------------------
// Frame/segment conversion and RTTM

/// Turn binary activity rows into an annotation: maximal runs become
/// `[t*shift, (t+len)*shift)` segments.
pub fn frames_to_annotation(
    activity: &[u8],
    n_speakers: usize,
    t: usize,
    frame_shift_s: Real,
    recording: &str,
    speaker_names: &[String],
) -> Result<Annotation> {
    if activity.len() != n_speakers * t {
        return Err(Error::shape(format!(
            "activity buffer {} != {n_speakers}x{t}",
            activity.len()
        )));
    }
    if speaker_names.len() != n_speakers {
        return Err(Error::contract("speaker name count mismatch"));
    }
    let mut turns = Vec::new();
    for s in 0..n_speakers {
        let row = &activity[s * t..(s + 1) * t];
        let mut f = 0;
        while f < t {
            if row[f] == 1 {
                let start = f;
                while f < t && row[f] == 1 {
                    f += 1;
                }
                turns.push(Turn {
                    speaker: speaker_names[s].clone(),
                    start_s: start as Real * frame_shift_s,
                    end_s: f as Real * frame_shift_s,
                });
            } else {
                f += 1;
            }
        }
    }
    Annotation::new(recording, turns)
}

/// Inverse of [`frames_to_annotation`] on a fixed grid (used for round-trip
/// checks and type scoring against decode output).
pub fn annotation_to_frames(
    ann: &Annotation,
    frame_shift_s: Real,
    t: usize,
) -> (Vec<u8>, Vec<String>) {
    let speakers = ann.speakers();
    let mut activity = vec![0u8; speakers.len() * t];
    for turn in &ann.turns {
        let s = speakers.iter().position(|n| n == &turn.speaker).unwrap();
        let a = ((turn.start_s / frame_shift_s).round() as usize).min(t);
        let b = ((turn.end_s / frame_shift_s).round() as usize).min(t);
        for f in a..b {
            activity[s * t + f] = 1;
        }
    }
    (activity, speakers)
}

/// Write SPEAKER records, times to 3 decimals.
pub fn write_rttm<W: Write>(w: &mut W, ann: &Annotation) -> Result<()> {
    let mut turns = ann.turns.clone();
    turns.sort_by(|a, b| {
        a.start_s
            .partial_cmp(&b.start_s)
            .unwrap()
            .then(a.speaker.cmp(&b.speaker))
    });
    for t in &turns {
        writeln!(
            w,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            ann.recording,
            t.start_s,
            t.end_s - t.start_s,
            t.speaker
        )?;
    }
    Ok(())
}

/// Read SPEAKER records grouped by recording id (order of first appearance).
pub fn read_rttm<R: BufRead>(r: R) -> Result<Vec<Annotation>> {
    let mut grouped: BTreeMap<String, Vec<Turn>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 8 || fields[0] != "SPEAKER" {
            return Err(Error::format(format!("rttm line {}: '{line}'", lineno + 1)));
        }
        let parse = |s: &str, what: &str| -> Result<Real> {
            s.parse::<Real>()
                .map_err(|_| Error::format(format!("rttm line {}: bad {what} '{s}'", lineno + 1)))
        };
        let start = parse(fields[3], "tbeg")?;
        let dur = parse(fields[4], "tdur")?;
        let rec = fields[1].to_string();
        if !grouped.contains_key(&rec) {
            order.push(rec.clone());
        }
        grouped.entry(rec).or_default().push(Turn {
            speaker: fields[7].to_string(),
            start_s: start,
            end_s: start + dur,
        });
    }
    order
        .into_iter()
        .map(|rec| {
            let turns = grouped.remove(&rec).unwrap();
            Annotation::new(rec, turns)
        })
        .collect()
}
