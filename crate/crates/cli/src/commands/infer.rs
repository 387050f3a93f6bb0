use crate::config::RunConfig;
use aedd_core::decode::{iterative_decode, DecodeIteration, DecodeResult, Strategy};
use aedd_core::features::{extract_features, FeatureSequence, Waveform};
use aedd_core::model::{LabelMatrix, Parameters};
use aedd_core::score::{frames_to_annotation, write_rttm};
use aedd_core::simulate::read_manifest;
use aedd_core::train::load_model;
use aedd_core::Real;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Per-recording decode report; speech-type predictions are stored as
/// (start, len) frame runs per class so the score command can rebuild them.
#[derive(Serialize, Deserialize)]
pub struct DecodeReport {
    pub recording: String,
    pub s_hat: usize,
    pub frames: usize,
    pub frame_shift_s: Real,
    pub strategy: String,
    pub stop_reason: aedd_core::decode::StopReason,
    pub iterations: Vec<DecodeIteration>,
    pub type_runs: TypeRuns,
}

#[derive(Serialize, Deserialize)]
pub struct TypeRuns {
    pub non: Vec<(usize, usize)>,
    pub sgl: Vec<(usize, usize)>,
    pub ovl: Vec<(usize, usize)>,
}

pub fn row_to_runs(row: &[u8]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut f = 0;
    while f < row.len() {
        if row[f] == 1 {
            let start = f;
            while f < row.len() && row[f] == 1 {
                f += 1;
            }
            runs.push((start, f - start));
        } else {
            f += 1;
        }
    }
    runs
}

pub fn runs_to_row(runs: &[(usize, usize)], t: usize) -> Vec<u8> {
    let mut row = vec![0u8; t];
    for &(start, len) in runs {
        for f in start..(start + len).min(t) {
            row[f] = 1;
        }
    }
    row
}

struct Utterance {
    recording: String,
    features: FeatureSequence,
    labels: Option<LabelMatrix>,
}

pub fn run(
    cfg: &RunConfig,
    model_path: &Path,
    data: Option<&Path>,
    wav: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let strategy: Strategy = cfg.strategy.parse()?;
    let params: Parameters = load_model(model_path).context("loading model checkpoint")?;

    let utterances: Vec<Utterance> = match (data, wav) {
        (Some(manifest), None) => {
            let entries = read_manifest(manifest).context("reading manifest")?;
            entries
                .iter()
                .enumerate()
                .map(|(i, e)| -> Result<Utterance> {
                    let mix = aedd_core::simulate::LabeledMixture::load(&e.path)
                        .with_context(|| format!("loading shard {}", e.path.display()))?;
                    Ok(Utterance {
                        recording: format!("mix_{i:05}"),
                        labels: Some(LabelMatrix::from_mixture(&mix)),
                        features: mix.features,
                    })
                })
                .collect::<Result<_>>()?
            }
        (None, Some(wav_path)) => {
            let waveform = Waveform::read_wav(wav_path)?;
            let features = extract_features(&waveform)?;
            let recording = wav_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "wav".into());
            vec![Utterance { recording, features, labels: None }]
        }
        _ => bail!(aedd_core::Error::input("provide exactly one of --data or --wav")),
    };
    if strategy == Strategy::Gt && utterances.iter().any(|u| u.labels.is_none()) {
        bail!(aedd_core::Error::input("gt strategy needs labeled data (--data manifest)"));
    }
    for u in &utterances {
        if u.features.f != params.cfg.f_in {
            bail!(aedd_core::Error::input(format!(
                "feature dim {} does not match the model's input width {}",
                u.features.f, params.cfg.f_in
            )));
        }
    }

    cfg.echo(out, "infer")?;
    let decode_cfg = cfg.decode_config();
    let decode_one = |u: &Utterance| -> Result<DecodeResult> {
        iterative_decode(&u.features, &params, &decode_cfg, u.labels.as_ref())
            .with_context(|| format!("decoding {}", u.recording))
    };
    let results: Result<Vec<DecodeResult>> = if cfg.workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
        pool.install(|| utterances.par_iter().map(decode_one).collect())
    } else {
        utterances.iter().map(decode_one).collect()
    };
    let results = results?;

    let reports_dir = out.join("reports");
    std::fs::create_dir_all(&reports_dir)?;
    let mut hyp_rttm = std::io::BufWriter::new(std::fs::File::create(out.join("hyp.rttm"))?);
    let mut ref_rttm = if utterances.iter().all(|u| u.labels.is_some()) {
        Some(std::io::BufWriter::new(std::fs::File::create(out.join("ref.rttm"))?))
    } else {
        None
    };

    for (u, r) in utterances.iter().zip(&results) {
        let shift = u.features.frame_shift_s;
        let hyp_names: Vec<String> = (0..r.s_hat).map(|s| format!("spk{s}")).collect();
        let hyp_ann =
            frames_to_annotation(&r.speaker_activity, r.s_hat, r.t, shift, &u.recording, &hyp_names)?;
        write_rttm(&mut hyp_rttm, &hyp_ann)?;

        if let (Some(w), Some(labels)) = (ref_rttm.as_mut(), u.labels.as_ref()) {
            let ref_names: Vec<String> =
                (0..labels.n_speakers).map(|s| format!("spk{s}")).collect();
            let ref_ann = frames_to_annotation(
                &labels.data[3 * labels.t..],
                labels.n_speakers,
                labels.t,
                shift,
                &u.recording,
                &ref_names,
            )?;
            write_rttm(w, &ref_ann)?;
        }

        let report = DecodeReport {
            recording: u.recording.clone(),
            s_hat: r.s_hat,
            frames: r.t,
            frame_shift_s: shift,
            strategy: cfg.strategy.clone(),
            stop_reason: r.stop_reason.clone(),
            iterations: r.iterations.clone(),
            type_runs: TypeRuns {
                non: row_to_runs(&r.type_activity[..r.t]),
                sgl: row_to_runs(&r.type_activity[r.t..2 * r.t]),
                ovl: row_to_runs(&r.type_activity[2 * r.t..]),
            },
        };
        let path = reports_dir.join(format!("{}.json", u.recording));
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    }
    hyp_rttm.flush()?;
    if let Some(mut w) = ref_rttm {
        w.flush()?;
    }

    let counted: usize = results.iter().map(|r| r.s_hat).sum();
    println!(
        "decoded {} recordings with strategy {} ({} speakers total); outputs in {}",
        results.len(),
        cfg.strategy,
        counted,
        out.display()
    );
    Ok(())
}
