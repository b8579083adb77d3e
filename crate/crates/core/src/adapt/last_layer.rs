use crate::error::Result;
use crate::nn::adam::AdamState;
use crate::nn::layers::BnMode;
use crate::nn::loss::cross_entropy;
use crate::nn::train::{fit, net_val_auc, BatchSource, LabelledBatch, TrainConfig, TrainOutcome};
use crate::nn::{NetParams, FINAL_LAYER_PREFIX};

/// One Adam step on the final fully-connected layer only. The body runs with
/// running statistics, so nothing outside `fc.*` changes.
pub fn last_layer_step(
    params: &mut NetParams,
    opt: &mut AdamState,
    x: &crate::nn::Tensor,
    labels: &[usize],
) -> Result<f64> {
    let feats = params.features(x, BnMode::Running)?;
    let logits = params.fc.forward(&feats.data, x.n);
    let (loss, dlogits) = cross_entropy(&logits, labels, params.config.classes);
    let mut grads = params.zeros_like();
    params.fc.backward(&feats.data, &dlogits, x.n, Some(&mut grads.fc));
    opt.step(params, &grads, |n| n.starts_with(FINAL_LAYER_PREFIX));
    Ok(loss)
}

/// Retrain only the last fully-connected layer of `base` on target data.
pub fn finetune_last_layer(
    base: &NetParams,
    source: &mut impl BatchSource,
    val: &LabelledBatch,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<NetParams>> {
    cfg.validate("finetune")?;
    let mut opt = AdamState::new(cfg.adam);
    fit(
        base.clone(),
        cfg,
        |p| {
            let (x, y) = source.next_batch(cfg.batch_size)?;
            last_layer_step(p, &mut opt, &x, &y)
        },
        |p| net_val_auc(p, val),
    )
}
