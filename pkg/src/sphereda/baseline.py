"""Cross-entropy ablation: same encoder and data pipeline, a linear softmax head,
and max-softmax rejection calibrated on the source data."""
from __future__ import annotations

import numpy as np

from .metrics import PredictionRecord, build_report, map_true_labels
from .model import ForwardCache, backward, forward_batch
from .sphere import UNKNOWN
from .train import PseudoLabelSet, TrainConfig, _as_unlabeled, _stack_sources, embed, init_state, run_training

DEFAULT_PERCENTILE = 5.0


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def ce_backward(params, x, labels):
    """Summed cross-entropy and its parameter gradients."""
    cache = ForwardCache()
    logits = forward_batch(params, x, cache)
    p = softmax(logits)
    n = len(labels)
    loss = -np.sum(np.log(np.maximum(p[np.arange(n), labels], 1e-300)))
    g = p.copy()
    g[np.arange(n), labels] -= 1.0
    return float(loss), backward(params, cache, g)


def max_softmax(params, x):
    p = softmax(embed(params, x))
    return p.argmax(axis=1), p.max(axis=1)


def calibrate(params, sources, percentile=DEFAULT_PERCENTILE):
    """Rejection threshold: the given percentile of source max-softmax values.

    A percentile of 0 disables rejection entirely.
    """
    if percentile <= 0:
        return 0.0
    x, _ = _stack_sources(sources)
    _, conf = max_softmax(params, x)
    return float(np.percentile(conf, percentile))


def predict(params, x, threshold):
    pred, conf = max_softmax(params, x)
    return np.where(conf < threshold, UNKNOWN, pred), conf


def ce_baseline_train(sources, target, cfg: TrainConfig, percentile=DEFAULT_PERCENTILE,
                      state=None, style_pool=None):
    num_classes = int(max(s.labels.max() for s in sources)) + 1
    if state is None:
        state = init_state(sources[0].features.shape[1], cfg, normalize_output=False,
                           out_dim=num_classes)

    def breakpoint_fn(params, tgt, it):
        thr = calibrate(params, sources, percentile)
        pseudo = PseudoLabelSet(created_at=it)
        if cfg.self_training:
            pred, conf = predict(params, tgt.features, thr)
            keep = pred != UNKNOWN
            pseudo = PseudoLabelSet(np.flatnonzero(keep), pred[keep].astype(int),
                                    1.0 - conf[keep], it)
        return pseudo, {"event": "breakpoint", "iter": it, "threshold": thr,
                        "pseudo_count": len(pseudo),
                        "pseudo_per_class": pseudo.per_class(num_classes)}

    return run_training(sources, target, cfg, state=state, style_pool=style_pool,
                        step_fn=ce_backward, breakpoint_fn=breakpoint_fn)


def ce_evaluate(params, sources, target, percentile=DEFAULT_PERCENTILE, mode="open-set",
                threshold=None):
    num_known = params.weights[-1].shape[1]
    if threshold is None:
        threshold = calibrate(params, sources, percentile)
    pred, conf = predict(params, target.features, threshold)
    truth = map_true_labels(target.labels, num_known)
    records = [PredictionRecord(int(t), int(p), float(1.0 - c)) for t, p, c in zip(truth, pred, conf)]
    return build_report(records, num_known, mode, extra={"threshold": threshold,
                                                          "percentile": percentile})


def ce_baseline_train_eval(sources, target, cfg: TrainConfig, percentile=DEFAULT_PERCENTILE,
                           mode="open-set"):
    """Train the cross-entropy variant and return its MetricsReport on the target."""
    state = ce_baseline_train(sources, _as_unlabeled(target), cfg, percentile)
    return ce_evaluate(state.params, sources, target, percentile, mode)
