use std::fmt::Write as _;

use log::{debug, info};
use rayon::prelude::*;

use crate::dataset::{
    label_windows_query_agnostic, label_windows_query_dependent, Dims, FeatureCache,
    GroundingDataset, LabeledWindow, QueryRecord, Split, VideoRecord,
};
use crate::error::{Error, Result};
use crate::temporal::{default_stride, generate_windows, Window};
use crate::tensor::{AdamW, RngState};

use super::config::{GuidanceConfig, GuidanceMode, TrainConfig};
use super::model::{bce_with_logits, GuidanceModel};

/// Gradient work per batch is split into this many contiguous chunks whose
/// sums are added in chunk order, so the result is the same at any thread count.
pub const GRAD_CHUNKS: usize = 8;

/// Guidance windows of a video: `window_len` frames at half-window stride.
pub fn guidance_windows(video: &VideoRecord, window_len: usize) -> Result<Vec<Window>> {
    generate_windows(
        video.num_frames,
        video.fps,
        window_len,
        default_stride(window_len),
    )
}

/// Labeled guidance windows for every video (agnostic) or query (dependent) in `split`.
pub fn labeled_windows(
    ds: &GroundingDataset,
    cfg: &GuidanceConfig,
    split: Split,
) -> Result<Vec<LabeledWindow>> {
    let mut out = Vec::new();
    match cfg.mode {
        GuidanceMode::Agnostic => {
            let moments = ds.moments_by_video();
            for v in ds.videos_in(split) {
                let windows = guidance_windows(v, cfg.window_len)?;
                out.extend(label_windows_query_agnostic(&v.id, &windows, &moments[v.id.as_str()]));
            }
        }
        GuidanceMode::Dependent => {
            for q in ds.queries_in(split) {
                let windows = guidance_windows(ds.video(&q.video_id)?, cfg.window_len)?;
                out.extend(label_windows_query_dependent(
                    &q.video_id,
                    &q.id,
                    &windows,
                    &q.ground_truth(),
                ));
            }
        }
    }
    Ok(out)
}

/// A trained model with its per-epoch diagnostics.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: GuidanceModel<f32>,
    /// Mean training loss of each epoch.
    pub losses: Vec<f64>,
    /// `(epoch, AUROC)` on the validation windows, when any were given.
    pub val_auroc: Vec<(usize, f64)>,
}

impl TrainOutcome {
    /// `epoch,mean_loss` rows with a header; epochs count from 1.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(s, "{},{l}", i + 1).expect("write to string");
        }
        s
    }
}

fn example_rng(seed: u64, epoch: usize, position: usize) -> RngState {
    RngState::new(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((epoch as u64) << 32) ^ position as u64)
}

/// Trains a guidance model with AdamW on shuffled mini-batches of `train`.
pub fn train_guidance(
    features: &FeatureCache,
    train: &[LabeledWindow],
    val: &[LabeledWindow],
    gcfg: &GuidanceConfig,
    dims: Dims,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    gcfg.validate()?;
    tcfg.validate()?;
    let positives = train.iter().filter(|l| l.label).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::Config(format!(
            "training windows must contain both classes ({positives} positive of {})",
            train.len()
        )));
    }
    let mut model = GuidanceModel::<f32>::new(gcfg.clone(), dims, tcfg.seed)?;
    let mut workers: Vec<GuidanceModel<f32>> = vec![model.clone(); GRAD_CHUNKS];
    let mut opt = AdamW::new(tcfg.lr, tcfg.weight_decay)?;
    let mut shuffle_rng = RngState::new(tcfg.seed ^ 0x5348_5546_464c_4521);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(tcfg.epochs);
    let mut val_auroc = Vec::new();
    info!(
        "training {} guidance: {} windows ({positives} positive), {} parameters",
        gcfg.mode,
        train.len(),
        model.parameter_count()
    );

    for epoch in 0..tcfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let chunk_len = batch.len().div_ceil(GRAD_CHUNKS);
            let base = b * tcfg.batch_size;
            let chunk_losses: Vec<Result<f64>> = workers
                .par_iter_mut()
                .enumerate()
                .map(|(c, worker)| {
                    let lo = (c * chunk_len).min(batch.len());
                    let hi = ((c + 1) * chunk_len).min(batch.len());
                    worker.copy_values_from(&model);
                    worker.zero_grad();
                    let mut sum = 0.0;
                    for (offset, &idx) in batch[lo..hi].iter().enumerate() {
                        let ex = &train[idx];
                        let inputs = features.window_inputs(
                            &ex.video_id,
                            &ex.window,
                            gcfg.window_len,
                            ex.query_id.as_deref(),
                            gcfg.text_len,
                        )?;
                        let mut rng = example_rng(tcfg.seed, epoch, base + lo + offset);
                        let cache = worker.forward_window(&inputs, true, &mut rng)?;
                        let (loss, dlogit) =
                            bce_with_logits(cache.logit(), ex.label, tcfg.pos_weight);
                        worker.backward(&cache, dlogit * scale)?;
                        sum += loss;
                    }
                    Ok(sum)
                })
                .collect();
            model.zero_grad();
            for (worker, loss) in workers.iter().zip(chunk_losses) {
                epoch_loss += loss.map_err(|e| match e {
                    Error::Numeric(m) => {
                        Error::Numeric(format!("epoch {} batch {b}: {m}", epoch + 1))
                    }
                    other => other,
                })?;
                let src: Vec<_> = worker.named_params().into_iter().map(|(_, p)| p).collect();
                for (dst, s) in model.params_mut().into_iter().zip(src) {
                    dst.grad.add_assign(&s.grad)?;
                }
            }
            opt.step(&mut model.params_mut())?;
        }
        let mean = epoch_loss / train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("epoch {}: mean loss is {mean}", epoch + 1)));
        }
        debug!("epoch {} mean loss {mean:.6}", epoch + 1);
        losses.push(mean);
        if !val.is_empty() && ((epoch + 1) % tcfg.eval_every == 0 || epoch + 1 == tcfg.epochs) {
            let (scores, labels) = score_labeled(&model, features, val)?;
            if let Ok(a) = auroc(&scores, &labels) {
                info!("epoch {} validation AUROC {a:.4}", epoch + 1);
                val_auroc.push((epoch + 1, a));
            }
        }
    }
    model.zero_grad();
    Ok(TrainOutcome {
        model,
        losses,
        val_auroc,
    })
}

/// Scores each window of `video` with dropout off, in window order.
///
/// `query` must be given exactly when the model is query-dependent.
pub fn score_windows(
    model: &GuidanceModel<f32>,
    features: &FeatureCache,
    video: &VideoRecord,
    query: Option<&QueryRecord>,
    windows: &[Window],
) -> Result<Vec<(usize, f64)>> {
    let cfg = model.config();
    match (cfg.mode, query) {
        (GuidanceMode::Dependent, None) => {
            return Err(Error::Usage("query-dependent scoring needs a query".into()))
        }
        (GuidanceMode::Agnostic, Some(_)) => {
            return Err(Error::Usage("query-agnostic scoring takes no query".into()))
        }
        _ => {}
    }
    let qid = query.map(|q| q.id.as_str());
    windows
        .par_iter()
        .map(|w| {
            let inputs =
                features.window_inputs(&video.id, w, cfg.window_len, qid, cfg.text_len)?;
            let p = model.predict(&inputs)?;
            model.pass_counter().add(1);
            Ok((w.index, p))
        })
        .collect()
}

/// Inference scores for labeled windows, in input order.
pub fn score_labeled(
    model: &GuidanceModel<f32>,
    features: &FeatureCache,
    examples: &[LabeledWindow],
) -> Result<(Vec<f64>, Vec<bool>)> {
    let cfg = model.config();
    let scores = examples
        .par_iter()
        .map(|ex| {
            let inputs = features.window_inputs(
                &ex.video_id,
                &ex.window,
                cfg.window_len,
                ex.query_id.as_deref(),
                cfg.text_len,
            )?;
            model.predict(&inputs)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((scores, examples.iter().map(|e| e.label).collect()))
}

/// Area under the ROC curve (Mann-Whitney statistic, ties count one half).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Usage("scores and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Usage("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}
