//! Synthetic labeled mixtures in feature space: per-speaker on/off renewal
//! processes with geometric durations, Gaussian speaker clouds around
//! well-separated centroids, and the three speech-type label rows derived
//! from the per-speaker activity.

use crate::container::{Container, NamedArray};
use crate::features::FeatureSequence;
use crate::{Error, Real, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

/// One synthetic speaker: a centroid in feature space plus within-speaker
/// spread. Centroids are rejection-sampled so pairwise distances stay
/// ≥ 6·σ_w, which keeps the clustering route solvable.
#[derive(Clone, Debug)]
pub struct SpeakerProfile {
    pub centroid: Vec<Real>,
    pub within_spread: Real,
    pub id: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n_speakers: usize,
    pub duration_frames: usize,
    pub mean_utt_frames: Real,
    pub mean_gap_frames: Real,
    /// ≥ 0; boosts a speaker's onset probability while another speaker is
    /// already active, pushing mixtures toward co-activity.
    pub overlap_bias: Real,
    pub noise_spread: Real,
    pub within_spread: Real,
    pub feature_dim: usize,
    /// Required longest single-speaker run per speaker (only enforced when
    /// duration_frames >= 100 * n_speakers); keeps teacher forcing well-posed.
    pub min_single_run: usize,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            n_speakers: 2,
            duration_frames: 500,
            mean_utt_frames: 30.0,
            mean_gap_frames: 30.0,
            overlap_bias: 0.0,
            noise_spread: 0.3,
            within_spread: 0.3,
            feature_dim: 345,
            min_single_run: 30,
            seed: 0,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 {
            return Err(Error::input("n_speakers must be >= 1"));
        }
        if self.duration_frames < 10 * self.n_speakers {
            return Err(Error::input(format!(
                "duration_frames {} < 10 * n_speakers {}",
                self.duration_frames, self.n_speakers
            )));
        }
        if self.mean_utt_frames <= 0.0 || self.mean_gap_frames <= 0.0 {
            return Err(Error::input("mean utterance/gap lengths must be positive"));
        }
        if self.overlap_bias < 0.0 {
            return Err(Error::input("overlap_bias must be >= 0"));
        }
        if self.noise_spread <= 0.0 || self.within_spread <= 0.0 {
            return Err(Error::input("spreads must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::input("feature_dim must be >= 1"));
        }
        Ok(())
    }
}

/// A generated mixture: features plus per-speaker and per-type binary rows.
#[derive(Clone, Debug)]
pub struct LabeledMixture {
    pub features: FeatureSequence,
    /// Row-major S×T, values 0/1.
    pub speaker_activity: Vec<u8>,
    /// Row-major 3×T in row order [non, sgl, ovl].
    pub type_labels: Vec<u8>,
    pub n_speakers: usize,
    pub t: usize,
    pub seed: u64,
}

impl LabeledMixture {
    pub fn speaker_row(&self, s: usize) -> &[u8] {
        &self.speaker_activity[s * self.t..(s + 1) * self.t]
    }

    pub fn type_row(&self, k: usize) -> &[u8] {
        &self.type_labels[k * self.t..(k + 1) * self.t]
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(serde_json::json!({
            "kind": "mixture",
            "n_speakers": self.n_speakers,
            "frames": self.t,
            "feature_dim": self.features.f,
            "frame_shift_s": self.features.frame_shift_s,
            "seed": self.seed,
        }));
        c.push(NamedArray::from_reals(
            "features",
            vec![self.features.t, self.features.f],
            &self.features.frames,
        ));
        c.push(NamedArray::from_bytes(
            "speaker_activity",
            vec![self.n_speakers, self.t],
            self.speaker_activity.clone(),
        ));
        c.push(NamedArray::from_bytes("type_labels", vec![3, self.t], self.type_labels.clone()));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let features = FeatureSequence::from_container(c)?;
        let act = c.get("speaker_activity")?;
        let types = c.get("type_labels")?;
        if act.shape.len() != 2 || types.shape.len() != 2 || types.shape[0] != 3 {
            return Err(Error::format("mixture label arrays have unexpected shapes"));
        }
        let (s, t) = (act.shape[0], act.shape[1]);
        if t != features.t || types.shape[1] != t {
            return Err(Error::format("mixture label frames do not match features"));
        }
        let seed = c.meta["seed"].as_u64().unwrap_or(0);
        Ok(LabeledMixture {
            features,
            speaker_activity: act.as_u8()?.to_vec(),
            type_labels: types.as_u8()?.to_vec(),
            n_speakers: s,
            t,
            seed,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Classify each frame by its speaker count: rows [non, sgl, ovl] where
/// non ⟺ zero active speakers, sgl ⟺ exactly one, ovl ⟺ two or more.
pub fn derive_type_labels(speaker_activity: &[u8], n_speakers: usize, t: usize) -> Result<Vec<u8>> {
    if speaker_activity.len() != n_speakers * t {
        return Err(Error::contract(format!(
            "activity buffer {} != {n_speakers}x{t}",
            speaker_activity.len()
        )));
    }
    if speaker_activity.iter().any(|&v| v > 1) {
        return Err(Error::contract("speaker activity must be binary"));
    }
    let mut labels = vec![0u8; 3 * t];
    for frame in 0..t {
        let count: u32 = (0..n_speakers).map(|s| speaker_activity[s * t + frame] as u32).sum();
        let row = match count {
            0 => 0,
            1 => 1,
            _ => 2,
        };
        labels[row * t + frame] = 1;
    }
    Ok(labels)
}

fn seed_for_attempt(seed: u64, attempt: u64) -> u64 {
    seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Longest run of frames where speaker `s` is the only active one.
pub fn longest_single_run(activity: &[u8], n_speakers: usize, t: usize, s: usize) -> usize {
    let mut best = 0;
    let mut cur = 0;
    for frame in 0..t {
        let mine = activity[s * t + frame] == 1;
        let others: u32 = (0..n_speakers)
            .filter(|&o| o != s)
            .map(|o| activity[o * t + frame] as u32)
            .sum();
        if mine && others == 0 {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

/// Generate one mixture. Fully determined by `spec` (including its seed);
/// retries derived seeds up to 20 times to satisfy the single-speaker-run
/// guarantee when the duration allows it.
pub fn sample_mixture(spec: &MixtureSpec) -> Result<LabeledMixture> {
    spec.validate()?;
    let enforce_runs = spec.duration_frames >= 100 * spec.n_speakers;
    let attempts = if enforce_runs { 20 } else { 1 };
    for attempt in 0..attempts {
        let mix = generate_once(spec, seed_for_attempt(spec.seed, attempt))?;
        if !enforce_runs
            || (0..spec.n_speakers).all(|s| {
                longest_single_run(&mix.speaker_activity, spec.n_speakers, mix.t, s)
                    >= spec.min_single_run
            })
        {
            return Ok(mix);
        }
    }
    Err(Error::numeric(format!(
        "no mixture with single-speaker runs >= {} in 20 attempts (seed {})",
        spec.min_single_run, spec.seed
    )))
}

pub fn sample_profiles(
    rng: &mut ChaCha8Rng,
    n_speakers: usize,
    feature_dim: usize,
    within_spread: Real,
) -> Result<Vec<SpeakerProfile>> {
    let mut profiles: Vec<SpeakerProfile> = Vec::with_capacity(n_speakers);
    for id in 0..n_speakers {
        let mut ok = false;
        for _ in 0..100 {
            let centroid: Vec<Real> =
                (0..feature_dim).map(|_| rng.sample::<f64, _>(StandardNormal) as Real).collect();
            let min_dist = profiles
                .iter()
                .map(|p| {
                    p.centroid
                        .iter()
                        .zip(&centroid)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<Real>()
                        .sqrt()
                })
                .fold(Real::INFINITY, Real::min);
            if min_dist >= 6.0 * within_spread {
                profiles.push(SpeakerProfile { centroid, within_spread, id });
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::numeric(format!(
                "could not place centroid {id} at separation 6*sigma_w in 100 draws"
            )));
        }
    }
    Ok(profiles)
}

fn generate_once(spec: &MixtureSpec, seed: u64) -> Result<LabeledMixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s_count, t) = (spec.n_speakers, spec.duration_frames);
    let profiles = sample_profiles(&mut rng, s_count, spec.feature_dim, spec.within_spread)?;

    // Two-state chain per speaker: off→on with probability 1/mean_gap
    // (boosted by overlap_bias while another speaker was active at t-1),
    // on→off with probability 1/mean_utt. Durations come out geometric.
    let p_on = (1.0 / spec.mean_gap_frames).min(1.0);
    let p_off = (1.0 / spec.mean_utt_frames).min(1.0);
    let stationary = spec.mean_utt_frames / (spec.mean_utt_frames + spec.mean_gap_frames);
    let mut activity = vec![0u8; s_count * t];
    let mut state: Vec<bool> = (0..s_count).map(|_| rng.gen_range(0.0..1.0) < stationary).collect();
    for frame in 0..t {
        let prev_any: Vec<bool> = (0..s_count)
            .map(|s| {
                if frame == 0 {
                    false
                } else {
                    (0..s_count).any(|o| o != s && activity[o * t + frame - 1] == 1)
                }
            })
            .collect();
        for s in 0..s_count {
            if frame > 0 {
                let u: Real = rng.gen_range(0.0..1.0);
                if state[s] {
                    if u < p_off {
                        state[s] = false;
                    }
                } else {
                    let boosted = if prev_any[s] {
                        (p_on * (1.0 + spec.overlap_bias)).min(1.0)
                    } else {
                        p_on
                    };
                    if u < boosted {
                        state[s] = true;
                    }
                }
            }
            activity[s * t + frame] = state[s] as u8;
        }
    }

    let f = spec.feature_dim;
    let mut frames = vec![0.0 as Real; t * f];
    for frame in 0..t {
        let row = &mut frames[frame * f..(frame + 1) * f];
        for p in &profiles {
            if activity[p.id * t + frame] == 1 {
                for (j, v) in row.iter_mut().enumerate() {
                    let jitter: Real = rng.sample::<f64, _>(StandardNormal) as Real;
                    *v += p.centroid[j] + p.within_spread * jitter;
                }
            }
        }
        for v in row.iter_mut() {
            let noise: Real = rng.sample::<f64, _>(StandardNormal) as Real;
            *v += spec.noise_spread * noise;
        }
    }

    let type_labels = derive_type_labels(&activity, s_count, t)?;
    Ok(LabeledMixture {
        features: FeatureSequence::new(frames, t, f, 0.1)?,
        speaker_activity: activity,
        type_labels,
        n_speakers: s_count,
        t,
        seed: spec.seed,
    })
}

/// One dataset row: where the shard lives and what it contains.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub n_speakers: usize,
    pub frames: usize,
    pub seed: u64,
}

/// Write mixtures as container shards plus a JSON-lines manifest; returns
/// the manifest path.
pub fn write_dataset(dir: &Path, mixtures: &[LabeledMixture]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(&manifest_path)?);
    for (i, mix) in mixtures.iter().enumerate() {
        let name = format!("mix_{i:05}.aedd");
        let path = dir.join(&name);
        mix.to_container().save(&path)?;
        let entry = ManifestEntry {
            path: PathBuf::from(name),
            n_speakers: mix.n_speakers,
            frames: mix.t,
            seed: mix.seed,
        };
        let line = serde_json::to_string(&entry)
            .map_err(|e| Error::format(format!("manifest row: {e}")))?;
        writeln!(manifest, "{line}")?;
    }
    manifest.flush()?;
    Ok(manifest_path)
}

/// Read a manifest; shard paths are resolved relative to the manifest file.
pub fn read_manifest(manifest_path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("manifest parse: {e}")))?;
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_dataset(manifest_path: &Path) -> Result<Vec<LabeledMixture>> {
    read_manifest(manifest_path)?
        .iter()
        .map(|e| LabeledMixture::load(&e.path))
        .collect()
}
