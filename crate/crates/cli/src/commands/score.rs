use crate::commands::infer::{runs_to_row, DecodeReport};
use crate::config::RunConfig;
use aedd_core::score::{aggregate_der, der, read_rttm, Annotation, DerReport, TypeErrorReport};
use aedd_core::simulate::read_manifest;
use anyhow::{bail, Context, Result};
use std::io::BufReader;
use std::path::Path;

pub fn run(
    cfg: &RunConfig,
    ref_path: &Path,
    hyp_path: &Path,
    out: Option<&Path>,
    ref_manifest: Option<&Path>,
    reports_dir: Option<&Path>,
) -> Result<()> {
    let refs = read_rttm(BufReader::new(
        std::fs::File::open(ref_path).context("opening reference rttm")?,
    ))?;
    let hyps = read_rttm(BufReader::new(
        std::fs::File::open(hyp_path).context("opening hypothesis rttm")?,
    ))?;
    if refs.is_empty() {
        bail!(aedd_core::Error::input("reference rttm has no SPEAKER records"));
    }

    let score_one = |r: &Annotation| -> Result<DerReport> {
        let empty = Annotation::new(r.recording.clone(), vec![])?;
        let hyp = hyps.iter().find(|h| h.recording == r.recording).unwrap_or(&empty);
        Ok(der(r, hyp, cfg.collar, cfg.score_overlap)?)
    };
    let reports: Result<Vec<DerReport>> = if cfg.workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
        pool.install(|| refs.par_iter().map(score_one).collect())
    } else {
        refs.iter().map(score_one).collect()
    };
    let reports = reports?;
    let aggregate = aggregate_der(&reports);

    println!(
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>10}",
        "recording", "DER%", "MISS%", "FA%", "CONF%", "scored(s)"
    );
    let line = |r: &DerReport| {
        let pct = |x: f64| if r.scored_speech_s > 0.0 { 100.0 * x / r.scored_speech_s } else { 0.0 };
        println!(
            "{:<14} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>10.2}",
            r.recording,
            100.0 * r.der,
            pct(r.miss_s),
            pct(r.fa_s),
            pct(r.confusion_s),
            r.scored_speech_s
        );
    };
    for r in &reports {
        line(r);
    }
    line(&aggregate);

    let type_report = match (ref_manifest, reports_dir) {
        (Some(manifest), Some(dir)) => {
            Some(score_types(cfg, manifest, dir).context("scoring speech types")?)
        }
        (None, None) => None,
        _ => bail!(aedd_core::Error::input(
            "type scoring needs both --ref-manifest and --reports"
        )),
    };
    if let Some(tr) = &type_report {
        print_type_table(tr);
    }

    if let Some(path) = out {
        let json = serde_json::json!({
            "collar_s": cfg.collar,
            "score_overlap": cfg.score_overlap,
            "per_recording": reports,
            "aggregate": aggregate,
            "types": type_report,
        });
        std::fs::write(path, serde_json::to_string_pretty(&json)?)?;
        eprintln!("wrote report to {}", path.display());
    }
    Ok(())
}

/// Pool type-error counts across recordings, then recompute the rates.
fn score_types(cfg: &RunConfig, manifest: &Path, reports_dir: &Path) -> Result<TypeErrorReport> {
    let entries = read_manifest(manifest)?;
    let denom = cfg.fa_denom()?;
    let mut pooled_ref: Vec<u8> = Vec::new();
    let mut pooled_hyp: Vec<u8> = Vec::new();
    let mut total = 0usize;
    // Concatenating recordings per class keeps the counts poolable.
    let mut per_class_ref: [Vec<u8>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut per_class_hyp: [Vec<u8>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, e) in entries.iter().enumerate() {
        let recording = format!("mix_{i:05}");
        let mix = aedd_core::simulate::LabeledMixture::load(&e.path)?;
        let report_path = reports_dir.join(format!("{recording}.json"));
        let text = std::fs::read_to_string(&report_path)
            .with_context(|| format!("reading decode report {}", report_path.display()))?;
        let report: DecodeReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing decode report {}", report_path.display()))?;
        if report.frames != mix.t {
            bail!(aedd_core::Error::input(format!(
                "report {recording} has {} frames, dataset has {}",
                report.frames, mix.t
            )));
        }
        let hyp_rows = [
            runs_to_row(&report.type_runs.non, mix.t),
            runs_to_row(&report.type_runs.sgl, mix.t),
            runs_to_row(&report.type_runs.ovl, mix.t),
        ];
        for c in 0..3 {
            per_class_ref[c].extend_from_slice(mix.type_row(c));
            per_class_hyp[c].extend_from_slice(&hyp_rows[c]);
        }
        total += mix.t;
    }
    for c in 0..3 {
        pooled_ref.extend_from_slice(&per_class_ref[c]);
        pooled_hyp.extend_from_slice(&per_class_hyp[c]);
    }
    Ok(aedd_core::score::type_fa_miss(&pooled_ref, &pooled_hyp, total, denom)?)
}

fn print_type_table(tr: &TypeErrorReport) {
    println!();
    println!(
        "{:<6} {:>8} {:>8} {:>8} {:>8}",
        "class", "FA%", "MISS%", "FA*%", "MISS*%"
    );
    for c in &tr.classes {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.2}"),
            None => "n/a".to_string(),
        };
        println!(
            "{:<6} {:>8} {:>8} {:>8.2} {:>8.2}",
            c.class,
            fmt(c.fa_pct),
            fmt(c.miss_pct),
            c.fa_star_pct,
            c.miss_star_pct
        );
    }
}
