//! Iterative enrollment decoding: predict the three speech-type areas with
//! the type tokens alone, then enroll one speaker per iteration out of the
//! still-unexplained single-speaker area until the longest remaining segment
//! drops below `l_stop` (or an oracle/maximum speaker count is reached).

mod cluster;

pub use cluster::{kmeans, spectral_cluster};

use crate::model::{
    diarize_from_embeddings, encode, extract_enrollment, EnrollmentSequence, LabelMatrix,
    Parameters,
};
use crate::features::FeatureSequence;
use crate::numerics::Tensor;
use crate::{Error, Real, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Enrollment windows from reference labels (mirrors the training-time
    /// sampler); needs reference labels, always uses the reference count.
    Gt,
    /// First `l_enroll` frames of the first remaining segment.
    Init,
    /// Random segment, then a random window inside it.
    Rand,
    /// Spectral-cluster the remaining embeddings, window from the biggest
    /// cluster (consecutive in its sorted index list).
    Sc,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gt" => Ok(Strategy::Gt),
            "init" => Ok(Strategy::Init),
            "rand" => Ok(Strategy::Rand),
            "sc" => Ok(Strategy::Sc),
            other => Err(Error::input(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub l_enroll: usize,
    pub l_stop: usize,
    pub threshold: Real,
    pub strategy: Strategy,
    pub oracle_num_speakers: Option<usize>,
    pub max_speakers: usize,
    pub seed: u64,
    /// Odd window width for an optional median filter over the returned
    /// binary rows; 0 disables it.
    pub median_window: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            l_enroll: 5,
            l_stop: 10,
            threshold: 0.5,
            strategy: Strategy::Sc,
            oracle_num_speakers: None,
            max_speakers: 10,
            seed: 0,
            median_window: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_enroll == 0 || self.l_stop == 0 {
            return Err(Error::input("l_enroll and l_stop must be >= 1"));
        }
        if self.max_speakers == 0 {
            return Err(Error::input("max_speakers must be >= 1"));
        }
        if self.median_window > 0 && self.median_window % 2 == 0 {
            return Err(Error::input("median_window must be odd"));
        }
        Ok(())
    }
}

/// A maximal run of consecutive frame indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn indices(&self) -> impl Iterator<Item = usize> {
        self.start..self.start + self.len
    }
}

/// Split a strictly increasing index list into maximal consecutive runs.
pub fn contiguous_segments(indices: &[usize]) -> Result<Vec<Segment>> {
    for pair in indices.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::contract(format!(
                "indices must be strictly increasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    let mut segments = Vec::new();
    let mut begin = 0;
    for i in 1..=indices.len() {
        if i == indices.len() || indices[i] != indices[i - 1] + 1 {
            segments.push(Segment { start: indices[begin], len: i - begin });
            begin = i;
        }
    }
    Ok(segments)
}

/// Keep segments of length >= `l`, preserving order.
pub fn filter_segs(segments: &[Segment], l: usize) -> Vec<Segment> {
    segments.iter().copied().filter(|s| s.len >= l).collect()
}

/// Longest segment; ties break to the earliest.
pub fn longest_segment(segments: &[Segment]) -> Option<Segment> {
    segments.iter().copied().max_by(|a, b| a.len.cmp(&b.len).then(b.start.cmp(&a.start)))
}

/// The enrollment window length for one iteration.
pub fn l_tmp(longest_len: usize, l_enroll: usize) -> usize {
    longest_len.min(l_enroll)
}

/// The stop test: decoding halts when the longest remaining segment is
/// strictly shorter than `l_stop`.
pub fn should_stop(l_stop: usize, longest_len: usize) -> bool {
    l_stop > longest_len
}

/// Pick the enrollment frame indices for one iteration.
///
/// `c_prime` is the filtered segment list with the longest segment appended;
/// `remaining` is the full un-predicted single-speaker index list (used by
/// the clustering strategy); `embeddings` are the encoder outputs.
pub fn select_enrollment(
    strategy: Strategy,
    c_prime: &[Segment],
    remaining: &[usize],
    embeddings: &Tensor,
    window_len: usize,
    max_speakers: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if c_prime.is_empty() {
        return Err(Error::contract("select_enrollment with empty segment list"));
    }
    if window_len == 0 {
        return Err(Error::contract("select_enrollment with zero window length"));
    }
    match strategy {
        Strategy::Init => {
            let first = c_prime[0];
            debug_assert!(first.len >= window_len);
            Ok((first.start..first.start + window_len).collect())
        }
        Strategy::Rand => {
            let seg = c_prime[rng.gen_range(0..c_prime.len())];
            debug_assert!(seg.len >= window_len);
            let offset = rng.gen_range(0..=seg.len - window_len);
            Ok((seg.start + offset..seg.start + offset + window_len).collect())
        }
        Strategy::Sc => {
            let d = embeddings.cols();
            let n = remaining.len();
            let mut rows = Vec::with_capacity(n * d);
            for &t in remaining {
                rows.extend_from_slice(&embeddings.values[t * d..(t + 1) * d]);
            }
            let labels = spectral_cluster(&rows, n, d, max_speakers)?;
            let k = labels.iter().copied().max().map_or(1, |m| m + 1);
            let mut sizes = vec![0usize; k];
            for &l in &labels {
                sizes[l] += 1;
            }
            let biggest = sizes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            // Members in ascending frame order; the window is consecutive in
            // this sorted list (the cluster itself may be fragmented in time).
            let members: Vec<usize> = remaining
                .iter()
                .copied()
                .zip(&labels)
                .filter(|&(_, &l)| l == biggest)
                .map(|(t, _)| t)
                .collect();
            if members.len() <= window_len {
                return Ok(members);
            }
            let offset = rng.gen_range(0..=members.len() - window_len);
            Ok(members[offset..offset + window_len].to_vec())
        }
        Strategy::Gt => Err(Error::contract(
            "gt enrollment is driven from reference labels by iterative_decode",
        )),
    }
}

/// Type-token pass: run the model with zero speakers and threshold the three
/// type rows. Returns the active frame index lists for [non, sgl, ovl] and
/// the embedding sequence for reuse across decode iterations. The lists may
/// overlap (independent sigmoids); only the single-speaker list drives
/// decoding.
pub fn predict_speech_types(
    x: &FeatureSequence,
    p: &Parameters,
    cfg: &DecodeConfig,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>, Tensor)> {
    let e = encode(x, p)?;
    let enroll = EnrollmentSequence::empty(p.cfg.d_model);
    let (_, binary) = diarize_from_embeddings(&e, &enroll, p, cfg.threshold)?;
    let t = x.t;
    let lists: Vec<Vec<usize>> = (0..3)
        .map(|row| (0..t).filter(|&f| binary[row * t + f] == 1).collect())
        .collect();
    let mut it = lists.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), e))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Longest remaining segment shorter than `l_stop`.
    StopLength,
    /// Reached the oracle speaker count.
    OracleCount,
    /// Hit the `max_speakers` cap.
    MaxSpeakers,
    /// Ground-truth strategy enrolled every reference speaker.
    GtComplete,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodeIteration {
    pub window: Vec<usize>,
    pub longest_len: usize,
    pub window_len: usize,
}

#[derive(Clone, Debug)]
pub struct DecodeResult {
    /// Row-major S_hat×T from the final forward pass.
    pub speaker_activity: Vec<u8>,
    pub s_hat: usize,
    /// 3×T type rows from the initial type-token pass.
    pub type_activity: Vec<u8>,
    pub t: usize,
    pub iterations: Vec<DecodeIteration>,
    pub stop_reason: StopReason,
}

fn sorted_minus(a: &[usize], mask: &[bool]) -> Vec<usize> {
    a.iter().copied().filter(|&t| !mask[t]).collect()
}

/// Deterministic ground-truth enrollment window for one speaker: the first
/// `l_enroll` frames (or all of it, if shorter) of the longest
/// single-speaker run in the reference labels.
fn gt_window(labels: &LabelMatrix, speaker: usize, l_enroll: usize) -> Option<Vec<usize>> {
    let frames = crate::train::single_speaker_frames(labels, speaker);
    if frames.is_empty() {
        return None;
    }
    let segs = contiguous_segments(&frames).expect("single frames sorted");
    let longest = longest_segment(&segs).unwrap();
    let take = longest.len.min(l_enroll);
    Some((longest.start..longest.start + take).collect())
}

/// Run the full iterative decoding pipeline on one utterance.
pub fn iterative_decode(
    x: &FeatureSequence,
    p: &Parameters,
    cfg: &DecodeConfig,
    ref_labels: Option<&LabelMatrix>,
) -> Result<DecodeResult> {
    cfg.validate()?;
    if cfg.strategy == Strategy::Gt && ref_labels.is_none() {
        return Err(Error::input("gt strategy requires reference labels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (_, i_sgl, _, e) = predict_speech_types(x, p, cfg)?;
    let t = x.t;
    let type_activity = {
        let enroll = EnrollmentSequence::empty(p.cfg.d_model);
        let (_, binary) = diarize_from_embeddings(&e, &enroll, p, cfg.threshold)?;
        binary[..3 * t].to_vec()
    };

    let mut enrolls = EnrollmentSequence::empty(p.cfg.d_model);
    let mut iterations = Vec::new();
    let mut final_binary: Option<Vec<u8>> = None;
    let stop_reason;

    if cfg.strategy == Strategy::Gt {
        let labels = ref_labels.unwrap();
        let n = labels.n_speakers.min(cfg.max_speakers);
        for s in 0..n {
            match gt_window(labels, s, cfg.l_enroll) {
                Some(w) => {
                    iterations.push(DecodeIteration {
                        longest_len: w.len(),
                        window_len: w.len(),
                        window: w.clone(),
                    });
                    enrolls.push_speaker(extract_enrollment(&e, &w)?)?;
                }
                None => {
                    iterations.push(DecodeIteration {
                        window: vec![],
                        longest_len: 0,
                        window_len: 0,
                    });
                    enrolls.push_zero();
                }
            }
        }
        stop_reason = StopReason::GtComplete;
    } else {
        let mut covered = vec![false; t];
        loop {
            let remaining = sorted_minus(&i_sgl, &covered);
            let segments = contiguous_segments(&remaining)?;
            let mut c_prime = filter_segs(&segments, cfg.l_enroll);
            let longest = longest_segment(&segments);
            let longest_len = longest.map_or(0, |s| s.len);
            if let Some(seg) = longest {
                c_prime.push(seg);
            }
            let window_len = l_tmp(longest_len, cfg.l_enroll);

            if let Some(oracle) = cfg.oracle_num_speakers {
                if enrolls.n_speakers() >= oracle.min(cfg.max_speakers) {
                    stop_reason = StopReason::OracleCount;
                    break;
                }
                if longest_len == 0 {
                    // No usable area left: remaining oracle slots get zero
                    // enrollment vectors.
                    while enrolls.n_speakers() < oracle.min(cfg.max_speakers) {
                        enrolls.push_zero();
                        iterations.push(DecodeIteration {
                            window: vec![],
                            longest_len: 0,
                            window_len: 0,
                        });
                    }
                    let (_, binary) =
                        diarize_from_embeddings(&e, &enrolls, p, cfg.threshold)?;
                    final_binary = Some(binary);
                    stop_reason = StopReason::OracleCount;
                    break;
                }
            } else if should_stop(cfg.l_stop, longest_len) {
                stop_reason = StopReason::StopLength;
                break;
            }
            if enrolls.n_speakers() >= cfg.max_speakers {
                stop_reason = StopReason::MaxSpeakers;
                break;
            }

            let window = select_enrollment(
                cfg.strategy,
                &c_prime,
                &remaining,
                &e,
                window_len,
                cfg.max_speakers,
                &mut rng,
            )?;
            debug_assert!(window.iter().all(|f| remaining.contains(f)));
            enrolls.push_speaker(extract_enrollment(&e, &window)?)?;
            iterations.push(DecodeIteration { longest_len, window_len, window });

            let (_, binary) = diarize_from_embeddings(&e, &enrolls, p, cfg.threshold)?;
            for s in 0..enrolls.n_speakers() {
                let row = &binary[(3 + s) * t..(4 + s) * t];
                for (f, &v) in row.iter().enumerate() {
                    if v == 1 {
                        covered[f] = true;
                    }
                }
            }
            final_binary = Some(binary);
        }
    }

    let s_hat = enrolls.n_speakers();
    let mut speaker_activity = if s_hat == 0 {
        Vec::new()
    } else {
        let binary = match final_binary {
            Some(b) if b.len() == (s_hat + 3) * t => b,
            _ => diarize_from_embeddings(&e, &enrolls, p, cfg.threshold)?.1,
        };
        binary[3 * t..].to_vec()
    };

    let mut type_activity = type_activity;
    if cfg.median_window >= 3 {
        for s in 0..s_hat {
            median_filter_row(&mut speaker_activity[s * t..(s + 1) * t], cfg.median_window);
        }
        for k in 0..3 {
            median_filter_row(&mut type_activity[k * t..(k + 1) * t], cfg.median_window);
        }
    }

    Ok(DecodeResult { speaker_activity, s_hat, type_activity, t, iterations, stop_reason })
}

/// Sliding binary median (majority vote) with edge truncation.
pub fn median_filter_row(row: &mut [u8], window: usize) {
    let half = window / 2;
    let orig: Vec<u8> = row.to_vec();
    for i in 0..row.len() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(orig.len());
        let ones: usize = orig[lo..hi].iter().map(|&v| v as usize).sum();
        row[i] = (2 * ones > hi - lo) as u8;
    }
}
