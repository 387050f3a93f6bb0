//! Teacher-forcing training: enrollment areas sampled from ground-truth
//! single-speaker regions, mean binary cross entropy over all rows, Adam with
//! an inverse-square-root warmup schedule.
//!
//! Randomness is derived per (seed, epoch), and per-mixture draws happen
//! before any parallel work, so a run is reproducible for any worker count
//! and training can resume from an epoch-boundary checkpoint bitwise.

use crate::container::{Container, NamedArray};
use crate::model::{
    bce_loss_on_tape, decode_attractors_on_tape, encode_on_tape, extract_enrollment,
    posteriors_on_tape, DropoutCtx, EnrollmentSequence, LabelMatrix, ModelConfig, Parameters,
};
use crate::numerics::{Tape, Tensor};
use crate::simulate::LabeledMixture;
use crate::{Error, Real, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

const ADAM_BETA1: Real = 0.9;
const ADAM_BETA2: Real = 0.98;
const ADAM_EPS: Real = 1e-9;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub l_enroll_min: usize,
    pub l_enroll_max: usize,
    pub zero_drop_p: Real,
    pub warmup_steps: usize,
    pub peak_lr_scale: Real,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: Real,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l_enroll_min: 10,
            l_enroll_max: 30,
            zero_drop_p: 0.1,
            warmup_steps: 1000,
            peak_lr_scale: 1.0,
            batch_size: 8,
            epochs: 10,
            grad_clip: 5.0,
            seed: 0,
            checkpoint_every: 1,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_enroll_min == 0 || self.l_enroll_min > self.l_enroll_max {
            return Err(Error::input("need 1 <= l_enroll_min <= l_enroll_max"));
        }
        if !(0.0..1.0).contains(&self.zero_drop_p) {
            return Err(Error::input("zero_drop_p must be in [0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::input("batch_size and epochs must be >= 1"));
        }
        if self.warmup_steps == 0 {
            return Err(Error::input("warmup_steps must be >= 1"));
        }
        Ok(())
    }
}

/// Per-speaker enrollment selection for one mixture: either a consecutive
/// window of frame indices inside the speaker's single-speaker area, or a
/// zero slot (no usable frames, or dropped for robustness).
#[derive(Clone, Debug, PartialEq)]
pub enum EnrollSlot {
    Window(Vec<usize>),
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnrollmentPlan {
    pub slots: Vec<EnrollSlot>,
}

/// Frames where speaker `s` is active and the frame is single-speaker.
pub fn single_speaker_frames(labels: &LabelMatrix, s: usize) -> Vec<usize> {
    let sgl = labels.row(1);
    labels
        .speaker_row(s)
        .iter()
        .enumerate()
        .filter(|&(t, &v)| v == 1 && sgl[t] == 1)
        .map(|(t, _)| t)
        .collect()
}

fn runs_of(sorted: &[usize]) -> Vec<(usize, usize)> {
    // (start index in `sorted`, length) of maximal consecutive runs.
    let mut runs = Vec::new();
    let mut begin = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i] != sorted[i - 1] + 1 {
            runs.push((begin, i - begin));
            begin = i;
        }
    }
    runs
}

/// Sample the per-speaker enrollment areas from ground truth: draw a length
/// L uniform in [l_enroll_min, l_enroll_max], pick a uniformly random
/// length-L window inside the speaker's single-speaker runs (or the longest
/// run when none fits, or a zero slot when the area is empty), then zero
/// surviving slots independently with probability `zero_drop_p`.
pub fn teacher_force_plan(
    labels: &LabelMatrix,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> EnrollmentPlan {
    let mut slots = Vec::with_capacity(labels.n_speakers);
    for s in 0..labels.n_speakers {
        let frames = single_speaker_frames(labels, s);
        if frames.is_empty() {
            slots.push(EnrollSlot::Zero);
            continue;
        }
        let runs = runs_of(&frames);
        let l = rng.gen_range(cfg.l_enroll_min..=cfg.l_enroll_max);
        let total_windows: usize = runs.iter().map(|&(_, len)| len.saturating_sub(l - 1)).sum();
        let window: Vec<usize> = if total_windows > 0 {
            let mut k = rng.gen_range(0..total_windows);
            let mut chosen = Vec::new();
            for &(start, len) in &runs {
                let w = len.saturating_sub(l - 1);
                if k < w {
                    chosen = frames[start + k..start + k + l].to_vec();
                    break;
                }
                k -= w;
            }
            chosen
        } else {
            let &(start, len) = runs.iter().max_by_key(|&&(_, len)| len).unwrap();
            frames[start..start + len].to_vec()
        };
        if rng.gen_range(0.0..1.0) < cfg.zero_drop_p {
            slots.push(EnrollSlot::Zero);
        } else {
            slots.push(EnrollSlot::Window(window));
        }
    }
    EnrollmentPlan { slots }
}

/// Spec-facing sampler over a plain embedding matrix: averages the planned
/// windows into an [`EnrollmentSequence`].
pub fn teacher_force_sample(
    labels: &LabelMatrix,
    embeddings: &Tensor,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EnrollmentSequence> {
    let plan = teacher_force_plan(labels, cfg, rng);
    let mut enroll = EnrollmentSequence::empty(embeddings.cols());
    for slot in &plan.slots {
        match slot {
            EnrollSlot::Window(idx) => enroll.push_speaker(extract_enrollment(embeddings, idx)?)?,
            EnrollSlot::Zero => enroll.push_zero(),
        }
    }
    Ok(enroll)
}

/// Build the training loss for one mixture on a fresh tape and return the
/// loss var (the caller owns the tape for backward).
pub fn mixture_loss_on_tape(
    tape: &mut Tape,
    bound: &crate::model::BoundParams,
    model_cfg: &ModelConfig,
    mix: &LabeledMixture,
    labels: &LabelMatrix,
    plan: &EnrollmentPlan,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<crate::numerics::Var> {
    let x = tape.constant(Tensor::new(
        vec![mix.features.t, mix.features.f],
        mix.features.frames.clone(),
    )?);
    let mut rng_holder = dropout_rng;
    let enc_drop = rng_holder
        .as_deref_mut()
        .map(|rng| DropoutCtx { p: model_cfg.dropout, rng });
    let e = encode_on_tape(tape, x, bound, model_cfg, enc_drop)?;

    let mut parts = vec![bound.type_emb];
    let d = model_cfg.d_model;
    for slot in &plan.slots {
        match slot {
            EnrollSlot::Window(idx) => parts.push(tape.select_rows_mean(e, idx)?),
            EnrollSlot::Zero => parts.push(tape.constant(Tensor::zeros(vec![1, d]))),
        }
    }
    let enroll = tape.concat_rows(&parts)?;
    let dec_drop = rng_holder
        .as_deref_mut()
        .map(|rng| DropoutCtx { p: model_cfg.dropout, rng });
    let a = decode_attractors_on_tape(tape, enroll, e, bound, model_cfg, dec_drop)?;
    let post = posteriors_on_tape(tape, a, e)?;
    bce_loss_on_tape(tape, post, labels)
}

/// Adam first/second moments, aligned with `Parameters::for_each_named`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: usize,
    pub m: Vec<Vec<Real>>,
    pub v: Vec<Vec<Real>>,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let mut m = Vec::new();
        params.for_each_named(&mut |_, t| m.push(vec![0.0; t.numel()]));
        AdamState { step: 0, m: m.clone(), v: m }
    }
}

/// Inverse-square-root schedule with linear warmup, scaled by d_model^-1/2.
pub fn learning_rate(cfg: &TrainConfig, d_model: usize, step: usize) -> Real {
    let s = step.max(1) as Real;
    let w = cfg.warmup_steps as Real;
    cfg.peak_lr_scale * (d_model as Real).powf(-0.5) * (s.powf(-0.5)).min(s * w.powf(-1.5))
}

#[derive(Clone, Debug, Serialize)]
pub struct StepStats {
    pub step: usize,
    pub loss: Real,
    pub lr: Real,
    pub grad_norm: Real,
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: Real,
    pub steps: usize,
    pub last_lr: Real,
}

/// One JSON-lines training log record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: Real,
    pub lr: Real,
    pub grad_norm: Real,
}

pub struct Trainer {
    pub params: Parameters,
    pub opt: AdamState,
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub epoch: usize,
    pub running_loss: Real,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, train_cfg: TrainConfig) -> Result<Self> {
        model_cfg.validate()?;
        train_cfg.validate()?;
        let params = Parameters::init(&model_cfg, train_cfg.seed)?;
        let opt = AdamState::new(&params);
        Ok(Trainer { params, opt, model_cfg, train_cfg, epoch: 0, running_loss: Real::NAN })
    }

    /// One optimizer step over a batch: forward/backward per mixture (in
    /// parallel when `workers > 1`, reduced in fixed order), global-norm
    /// clipping, then Adam.
    pub fn train_step(&mut self, batch: &[(&LabeledMixture, EnrollmentPlan, u64)]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::input("train_step needs a non-empty batch"));
        }
        let bound_template: Vec<usize> = {
            let mut sizes = Vec::new();
            self.params.for_each_named(&mut |_, t| sizes.push(t.numel()));
            sizes
        };

        let work = |(mix, plan, drop_seed): &(&LabeledMixture, EnrollmentPlan, u64)| -> Result<(Real, Vec<Vec<Real>>)> {
            let labels = LabelMatrix::from_mixture(mix);
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape, true);
            let mut drop_rng = ChaCha8Rng::seed_from_u64(*drop_seed);
            let dropout = if self.model_cfg.dropout > 0.0 { Some(&mut drop_rng) } else { None };
            let loss_var = mixture_loss_on_tape(
                &mut tape,
                &bound,
                &self.model_cfg,
                mix,
                &labels,
                plan,
                dropout,
            )?;
            let loss = tape.value(loss_var).values[0];
            let ordered: Vec<crate::numerics::Var> = bound.ordered_vars().to_vec();
            let mut grads_out = Vec::with_capacity(ordered.len());
            let mut g = tape.backward(loss_var)?;
            for (i, v) in ordered.iter().enumerate() {
                grads_out.push(g.take(*v).unwrap_or_else(|| vec![0.0; bound_template[i]]));
            }
            Ok((loss, grads_out))
        };

        let results: Vec<Result<(Real, Vec<Vec<Real>>)>> = if self.train_cfg.workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.train_cfg.workers)
                .build()
                .map_err(|e| Error::numeric(format!("thread pool: {e}")))?;
            pool.install(|| batch.par_iter().map(work).collect())
        } else {
            batch.iter().map(work).collect()
        };

        // Fixed-order reduction keeps results identical for any worker count.
        let inv = 1.0 / batch.len() as Real;
        let mut total_loss = 0.0;
        let mut grads: Vec<Vec<Real>> = bound_template.iter().map(|&n| vec![0.0; n]).collect();
        for r in results {
            let (loss, g) = r?;
            total_loss += loss * inv;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                for (a, b) in acc.iter_mut().zip(gi) {
                    *a += b * inv;
                }
            }
        }

        let step = self.opt.step + 1;
        let lr = learning_rate(&self.train_cfg, self.model_cfg.d_model, step);
        let mut norm_sq = 0.0;
        for g in &grads {
            for v in g {
                norm_sq += v * v;
            }
        }
        let grad_norm = norm_sq.sqrt();

        if !total_loss.is_finite() || !grad_norm.is_finite() {
            let diag = serde_json::json!({
                "step": step,
                "lr": lr,
                "loss": format!("{total_loss}"),
                "grad_norm": format!("{grad_norm}"),
            });
            return Err(Error::numeric(format!("non-finite loss: {diag}")));
        }

        if grad_norm > self.train_cfg.grad_clip {
            let scale = self.train_cfg.grad_clip / grad_norm;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
        }

        // Adam update.
        self.opt.step = step;
        let bias1 = 1.0 - ADAM_BETA1.powi(step as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(step as i32);
        let mut idx = 0;
        let opt = &mut self.opt;
        self.params.for_each_named_mut(&mut |_, t| {
            let g = &grads[idx];
            let m = &mut opt.m[idx];
            let v = &mut opt.v[idx];
            for ((p, gi), (mi, vi)) in
                t.values.iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                let mhat = *mi / bias1;
                let vhat = *vi / bias2;
                *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
            idx += 1;
        });

        // Divergence guard: beyond this magnitude the next forward pass is
        // guaranteed to overflow, so abort here with diagnostics instead.
        const PARAM_BOUND: Real = 1e150;
        let mut healthy = true;
        self.params.for_each_named(&mut |_, t| {
            healthy &= t.values.iter().all(|v| v.is_finite() && v.abs() < PARAM_BOUND);
        });
        if !healthy {
            let diag = serde_json::json!({
                "step": step,
                "lr": lr,
                "loss": total_loss,
                "grad_norm": grad_norm,
            });
            return Err(Error::numeric(format!(
                "non-finite or diverged parameters after optimizer update: {diag}"
            )));
        }

        self.running_loss = total_loss;
        Ok(StepStats { step, loss: total_loss, lr, grad_norm })
    }

    /// Run one epoch over the dataset; batches and all per-mixture draws are
    /// derived from (seed, epoch) before any parallel work.
    pub fn run_epoch(
        &mut self,
        data: &[LabeledMixture],
        mut on_step: impl FnMut(&StepStats),
    ) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::input("empty training set"));
        }
        let epoch = self.epoch + 1;
        let mut rng = epoch_rng(self.train_cfg.seed, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        // Fisher-Yates with the epoch stream.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut stats = Vec::new();
        for chunk in order.chunks(self.train_cfg.batch_size) {
            let batch: Vec<(&LabeledMixture, EnrollmentPlan, u64)> = chunk
                .iter()
                .map(|&i| {
                    let mix = &data[i];
                    let labels = LabelMatrix::from_mixture(mix);
                    let plan = teacher_force_plan(&labels, &self.train_cfg, &mut rng);
                    let drop_seed: u64 = rng.gen();
                    (mix, plan, drop_seed)
                })
                .collect();
            let s = self.train_step(&batch)?;
            on_step(&s);
            stats.push(s);
        }
        self.epoch = epoch;
        let mean_loss = stats.iter().map(|s| s.loss).sum::<Real>() / stats.len() as Real;
        Ok(EpochStats { epoch, mean_loss, steps: stats.len(), last_lr: stats.last().unwrap().lr })
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

pub struct Checkpoint {
    pub params: Parameters,
    pub opt: AdamState,
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub epoch: usize,
    pub running_loss: Real,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            params: t.params.clone(),
            opt: t.opt.clone(),
            model_cfg: t.model_cfg.clone(),
            train_cfg: t.train_cfg.clone(),
            epoch: t.epoch,
            running_loss: t.running_loss,
        }
    }

    pub fn into_trainer(self) -> Trainer {
        Trainer {
            params: self.params,
            opt: self.opt,
            model_cfg: self.model_cfg,
            train_cfg: self.train_cfg,
            epoch: self.epoch,
            running_loss: self.running_loss,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "checkpoint",
            "checkpoint_version": CHECKPOINT_VERSION,
            "model_cfg": self.model_cfg,
            "train_cfg": self.train_cfg,
            "epoch": self.epoch,
            "opt_step": self.opt.step,
            "running_loss": if self.running_loss.is_finite() {
                serde_json::json!(self.running_loss)
            } else {
                serde_json::Value::Null
            },
        });
        let mut c = Container::new(meta);
        self.params.write_arrays(&mut c, "param.");
        let mut idx = 0;
        self.params.for_each_named(&mut |name, t| {
            c.push(NamedArray::from_reals(
                format!("adam_m.{name}"),
                t.shape.clone(),
                &self.opt.m[idx],
            ));
            c.push(NamedArray::from_reals(
                format!("adam_v.{name}"),
                t.shape.clone(),
                &self.opt.v[idx],
            ));
            idx += 1;
        });
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let version = c.meta["checkpoint_version"].as_u64().unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let model_cfg: ModelConfig = serde_json::from_value(c.meta["model_cfg"].clone())
            .map_err(|e| Error::format(format!("checkpoint model_cfg: {e}")))?;
        let train_cfg: TrainConfig = serde_json::from_value(c.meta["train_cfg"].clone())
            .map_err(|e| Error::format(format!("checkpoint train_cfg: {e}")))?;
        let params = Parameters::read_arrays(&model_cfg, &c, "param.")?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        let mut err = None;
        params.for_each_named(&mut |name, t| {
            let read = |prefix: &str| -> Result<Vec<Real>> {
                let arr = c.get(&format!("{prefix}.{name}"))?;
                if arr.shape != t.shape {
                    return Err(Error::format(format!("optimizer array {name} shape mismatch")));
                }
                Ok(arr.to_reals())
            };
            match (read("adam_m"), read("adam_v")) {
                (Ok(a), Ok(b)) => {
                    m.push(a);
                    v.push(b);
                }
                (Err(e), _) | (_, Err(e)) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let opt = AdamState { step: c.meta["opt_step"].as_u64().unwrap_or(0) as usize, m, v };
        Ok(Checkpoint {
            params,
            opt,
            model_cfg,
            train_cfg,
            epoch: c.meta["epoch"].as_u64().unwrap_or(0) as usize,
            running_loss: c.meta["running_loss"].as_f64().unwrap_or(f64::NAN) as Real,
        })
    }
}

/// Load just the model (no optimizer state) for inference.
pub fn load_model(path: &Path) -> Result<Parameters> {
    let ck = Checkpoint::load(path)?;
    Ok(ck.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{sample_mixture, MixtureSpec};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ffn_dim: 24,
            f_in: 8,
            dropout: 0.0,
        }
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            l_enroll_min: 5,
            l_enroll_max: 10,
            zero_drop_p: 0.0,
            warmup_steps: 20,
            peak_lr_scale: 1.0,
            batch_size: 2,
            epochs: 2,
            seed: 3,
            ..Default::default()
        }
    }

    fn tiny_data(n: usize, t: usize) -> Vec<LabeledMixture> {
        (0..n)
            .map(|seed| {
                sample_mixture(&MixtureSpec {
                    feature_dim: 8,
                    duration_frames: t,
                    min_single_run: 10,
                    seed: seed as u64,
                    ..Default::default()
                })
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn planned_windows_stay_inside_single_speaker_regions() {
        // Region-scan oracle over many random label matrices.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = TrainConfig { zero_drop_p: 0.0, ..tiny_train() };
        for trial in 0..1000 {
            let (s, t) = (rng.gen_range(1..4usize), rng.gen_range(20..60usize));
            let activity: Vec<u8> = (0..s * t).map(|_| rng.gen_range(0..2u8)).collect();
            let types = crate::simulate::derive_type_labels(&activity, s, t).unwrap();
            let mut data = types;
            data.extend_from_slice(&activity);
            let labels = LabelMatrix::new(data, s, t).unwrap();
            let plan = teacher_force_plan(&labels, &cfg, &mut rng);
            for (spk, slot) in plan.slots.iter().enumerate() {
                let allowed = single_speaker_frames(&labels, spk);
                match slot {
                    EnrollSlot::Zero => assert!(allowed.is_empty(), "trial {trial}"),
                    EnrollSlot::Window(w) => {
                        assert!(!w.is_empty());
                        // Window must be consecutive and inside the area.
                        for pair in w.windows(2) {
                            assert_eq!(pair[1], pair[0] + 1);
                        }
                        for f in w {
                            assert!(allowed.contains(f), "trial {trial} frame {f}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn short_run_falls_back_to_whole_run() {
        // One single-speaker run of exactly 15 frames; L drawn in [20, 20].
        let t = 40;
        let mut activity = vec![0u8; t];
        for f in 10..25 {
            activity[f] = 1;
        }
        let types = crate::simulate::derive_type_labels(&activity, 1, t).unwrap();
        let mut data = types;
        data.extend_from_slice(&activity);
        let labels = LabelMatrix::new(data, 1, t).unwrap();
        let cfg = TrainConfig {
            l_enroll_min: 20,
            l_enroll_max: 20,
            zero_drop_p: 0.0,
            ..tiny_train()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = teacher_force_plan(&labels, &cfg, &mut rng);
        assert_eq!(plan.slots[0], EnrollSlot::Window((10..25).collect()));
    }

    #[test]
    fn fully_overlapped_speaker_gets_zero_slot() {
        let t = 20;
        // Two speakers always on together: no single-speaker frames at all.
        let activity = vec![1u8; 2 * t];
        let types = crate::simulate::derive_type_labels(&activity, 2, t).unwrap();
        let mut data = types;
        data.extend_from_slice(&activity);
        let labels = LabelMatrix::new(data, 2, t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = teacher_force_plan(&labels, &tiny_train(), &mut rng);
        assert_eq!(plan.slots, vec![EnrollSlot::Zero, EnrollSlot::Zero]);
    }

    #[test]
    fn initial_loss_is_near_ln_two() {
        let data = tiny_data(4, 120);
        let mut trainer = Trainer::new(tiny_model(), tiny_train()).unwrap();
        let labels = LabelMatrix::from_mixture(&data[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plan = teacher_force_plan(&labels, &trainer.train_cfg, &mut rng);
        let batch = vec![(&data[0], plan, 0u64)];
        let stats = trainer.train_step(&batch).unwrap();
        assert!(
            (stats.loss - (2.0 as Real).ln()).abs() < 0.15,
            "initial loss {}",
            stats.loss
        );
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_trajectories() {
        let data = tiny_data(4, 100);
        let run = || -> Vec<Real> {
            let mut t = Trainer::new(tiny_model(), tiny_train()).unwrap();
            let mut losses = Vec::new();
            for _ in 0..3 {
                let st = t.run_epoch(&data, |s| losses.push(s.loss)).unwrap();
                losses.push(st.mean_loss);
            }
            losses
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let data = tiny_data(4, 100);
        let run = |workers: usize| -> Real {
            let cfg = TrainConfig { workers, ..tiny_train() };
            let mut t = Trainer::new(tiny_model(), cfg).unwrap();
            let mut last = 0.0;
            for _ in 0..2 {
                last = t.run_epoch(&data, |_| {}).unwrap().mean_loss;
            }
            last
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn overfits_single_mixture() {
        // Fixed batch, fixed enrollment plan: optimizer sanity.
        let model_cfg = ModelConfig { d_model: 32, ffn_dim: 64, ..tiny_model() };
        let train_cfg = TrainConfig { batch_size: 1, ..tiny_train() };
        let data = tiny_data(1, 100);
        let labels = LabelMatrix::from_mixture(&data[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let plan = teacher_force_plan(&labels, &train_cfg, &mut rng);
        let mut trainer = Trainer::new(model_cfg, train_cfg).unwrap();
        let mut final_loss = Real::INFINITY;
        let mut prev = Real::INFINITY;
        let mut non_increasing_tail = true;
        for step in 0..200 {
            let batch = vec![(&data[0], plan.clone(), 0u64)];
            final_loss = trainer.train_step(&batch).unwrap().loss;
            // Allow the warmup phase some wiggle; after it, expect descent.
            if step > 50 && final_loss > prev + 0.05 {
                non_increasing_tail = false;
            }
            prev = final_loss;
            if final_loss < 0.01 {
                break;
            }
        }
        assert!(final_loss < 0.01, "final loss {final_loss}");
        assert!(non_increasing_tail);
    }

    #[test]
    fn all_zero_slots_make_speaker_rows_identical() {
        let cfg = tiny_model();
        let p = Parameters::init(&cfg, 5).unwrap();
        let data = tiny_data(1, 80);
        let e = crate::model::encode(&data[0].features, &p).unwrap();
        let mut enroll = EnrollmentSequence::empty(cfg.d_model);
        enroll.push_zero();
        enroll.push_zero();
        let (post, _) = crate::model::diarize_from_embeddings(&e, &enroll, &p, 0.5).unwrap();
        let t = data[0].t;
        for f in 0..t {
            let a = post.values[3 * t + f];
            let b = post.values[4 * t + f];
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_resume_equivalence() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(4, 100);
        let cfg = tiny_train();

        // Uninterrupted: 3 epochs.
        let mut full = Trainer::new(tiny_model(), cfg.clone()).unwrap();
        let mut full_losses = Vec::new();
        for _ in 0..3 {
            full_losses.push(full.run_epoch(&data, |_| {}).unwrap().mean_loss);
        }

        // Interrupted after 2 epochs, checkpointed, resumed.
        let mut part = Trainer::new(tiny_model(), cfg).unwrap();
        part.run_epoch(&data, |_| {}).unwrap();
        part.run_epoch(&data, |_| {}).unwrap();
        let ck_path = dir.path().join("ck.aedd");
        Checkpoint::from_trainer(&part).save(&ck_path).unwrap();

        // Byte-identical save -> load -> save.
        let loaded = Checkpoint::load(&ck_path).unwrap();
        let ck_path2 = dir.path().join("ck2.aedd");
        loaded.save(&ck_path2).unwrap();
        assert_eq!(std::fs::read(&ck_path).unwrap(), std::fs::read(&ck_path2).unwrap());

        let mut resumed = Checkpoint::load(&ck_path).unwrap().into_trainer();
        let resumed_loss = resumed.run_epoch(&data, |_| {}).unwrap().mean_loss;
        assert!(
            (resumed_loss - full_losses[2]).abs() <= 1e-12,
            "resumed {resumed_loss} vs full {}",
            full_losses[2]
        );
    }

    #[test]
    fn truncated_checkpoint_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let trainer = Trainer::new(tiny_model(), tiny_train()).unwrap();
        let path = dir.path().join("ck.aedd");
        Checkpoint::from_trainer(&trainer).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.aedd");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(Checkpoint::load(&cut), Err(Error::Format(_))));
    }

    #[test]
    fn learning_rate_schedule_shape() {
        let cfg = TrainConfig { warmup_steps: 100, peak_lr_scale: 1.0, ..tiny_train() };
        let lr = |s| learning_rate(&cfg, 64, s);
        assert!(lr(1) < lr(50));
        assert!(lr(50) < lr(100));
        assert!(lr(100) > lr(400));
        let peak = lr(100);
        assert!((peak - (64.0 as Real).powf(-0.5) * (100.0 as Real).powf(-0.5)).abs() < 1e-12);
    }
}
