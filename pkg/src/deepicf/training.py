"""Pointwise log-loss training with per-parameter adaptive learning rates,
negative sampling, L2 regularization on the tower weights, and the
FISM-to-deep-variant embedding pre-training pipeline.

The update loop is single-writer: one process mutates a parameter set.
Periodic evaluation runs on the same (momentarily quiescent) parameters.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from deepicf.data import sample_training_instances
from deepicf.errors import ConfigError, TrainingDiverged
from deepicf.model import Variant, backward, fism_config, init_params, predict_logit
from deepicf.numerics import bce_from_logit, rng_from_seed

log = logging.getLogger(__name__)

ADAGRAD_EPSILON = 1e-8


class AdagradState:
    """Running sums of squared gradients, mirroring the parameter layout.

    Accumulators never decrease; updates touch only the entries that
    received a gradient from the current instance, so embedding rows
    outside the instance's history keep their state untouched.
    """

    def __init__(self, params, lr, epsilon=ADAGRAD_EPSILON):
        self.lr = float(lr)
        self.epsilon = float(epsilon)
        self.target_embed = np.zeros_like(params.target_embed)
        self.history_embed = np.zeros_like(params.history_embed)
        self.user_bias = np.zeros_like(params.user_bias)
        self.item_bias = np.zeros_like(params.item_bias)
        self.output_weights = np.zeros_like(params.output_weights)
        self.layer_weights = [np.zeros_like(w) for w in params.layer_weights]
        self.layer_biases = [np.zeros_like(b) for b in params.layer_biases]
        self.att_weight = (None if params.att_weight is None
                           else np.zeros_like(params.att_weight))
        self.att_bias = (None if params.att_bias is None
                         else np.zeros_like(params.att_bias))
        self.att_out = (None if params.att_out is None
                        else np.zeros_like(params.att_out))


def _dense_update(param, acc, grad, lr, eps):
    acc += grad * grad
    param -= lr * grad / (np.sqrt(acc) + eps)


def adagrad_step(state, params, grads):
    """One Adagrad update: acc += g^2 then theta -= lr*g/(sqrt(acc)+eps),
    elementwise over exactly the entries this instance touched."""
    lr, eps = state.lr, state.epsilon
    i, u = grads.item, grads.user

    g = grads.d_target
    acc = state.target_embed[i]
    acc += g * g
    params.target_embed[i] -= lr * g / (np.sqrt(acc) + eps)

    rows = grads.hist
    if rows.size:
        g = grads.d_history
        acc = state.history_embed  # history rows are unique per instance
        acc[rows] += g * g
        params.history_embed[rows] -= lr * g / (np.sqrt(acc[rows]) + eps)

    g = grads.d_user_bias
    state.user_bias[u] += g * g
    params.user_bias[u] -= lr * g / (math.sqrt(state.user_bias[u]) + eps)

    g = grads.d_item_bias
    state.item_bias[i] += g * g
    params.item_bias[i] -= lr * g / (math.sqrt(state.item_bias[i]) + eps)

    if grads.d_output is not None:
        _dense_update(params.output_weights, state.output_weights,
                      grads.d_output, lr, eps)
    for layer in range(len(grads.d_layer_w)):
        _dense_update(params.layer_weights[layer], state.layer_weights[layer],
                      grads.d_layer_w[layer], lr, eps)
        _dense_update(params.layer_biases[layer], state.layer_biases[layer],
                      grads.d_layer_b[layer], lr, eps)
    if grads.d_att_weight is not None:
        _dense_update(params.att_weight, state.att_weight,
                      grads.d_att_weight, lr, eps)
        _dense_update(params.att_bias, state.att_bias, grads.d_att_bias, lr, eps)
        _dense_update(params.att_out, state.att_out, grads.d_att_out, lr, eps)


def apply_batch(state, params, batch):
    """Apply a list of per-instance gradients as one summed update.

    With batch size 1 this is exactly :func:`adagrad_step`; larger batches
    merge row gradients first so each touched entry is updated once.
    """
    if len(batch) == 1:
        adagrad_step(state, params, batch[0])
        return
    target_rows, history_rows = {}, {}
    user_rows, item_rows = {}, {}
    d_output = None
    d_layer_w = [np.zeros_like(w) for w in params.layer_weights]
    d_layer_b = [np.zeros_like(b) for b in params.layer_biases]
    d_att_w = d_att_b = d_att_h = None
    for g in batch:
        if g.item in target_rows:
            target_rows[g.item] = target_rows[g.item] + g.d_target
        else:
            target_rows[g.item] = g.d_target
        for row, vec in zip(g.hist.tolist(), g.d_history):
            if row in history_rows:
                history_rows[row] = history_rows[row] + vec
            else:
                history_rows[row] = vec
        user_rows[g.user] = user_rows.get(g.user, 0.0) + g.d_user_bias
        item_rows[g.item] = item_rows.get(g.item, 0.0) + g.d_item_bias
        if g.d_output is not None:
            d_output = g.d_output if d_output is None else d_output + g.d_output
        for layer in range(len(g.d_layer_w)):
            d_layer_w[layer] += g.d_layer_w[layer]
            d_layer_b[layer] += g.d_layer_b[layer]
        if g.d_att_weight is not None:
            if d_att_w is None:
                d_att_w = g.d_att_weight.copy()
                d_att_b = g.d_att_bias.copy()
                d_att_h = g.d_att_out.copy()
            else:
                d_att_w += g.d_att_weight
                d_att_b += g.d_att_bias
                d_att_h += g.d_att_out

    lr, eps = state.lr, state.epsilon
    for i, g in target_rows.items():
        acc = state.target_embed[i]
        acc += g * g
        params.target_embed[i] -= lr * g / (np.sqrt(acc) + eps)
    for j, g in history_rows.items():
        acc = state.history_embed[j]
        acc += g * g
        params.history_embed[j] -= lr * g / (np.sqrt(acc) + eps)
    for u, g in user_rows.items():
        state.user_bias[u] += g * g
        params.user_bias[u] -= lr * g / (math.sqrt(state.user_bias[u]) + eps)
    for i, g in item_rows.items():
        state.item_bias[i] += g * g
        params.item_bias[i] -= lr * g / (math.sqrt(state.item_bias[i]) + eps)
    if d_output is not None:
        _dense_update(params.output_weights, state.output_weights, d_output,
                      lr, eps)
    for layer in range(len(d_layer_w)):
        _dense_update(params.layer_weights[layer], state.layer_weights[layer],
                      d_layer_w[layer], lr, eps)
        _dense_update(params.layer_biases[layer], state.layer_biases[layer],
                      d_layer_b[layer], lr, eps)
    if d_att_w is not None:
        _dense_update(params.att_weight, state.att_weight, d_att_w, lr, eps)
        _dense_update(params.att_bias, state.att_bias, d_att_b, lr, eps)
        _dense_update(params.att_out, state.att_out, d_att_h, lr, eps)


def loss_with_reg(logit, label, params, config, cache=None):
    """Instance loss: binary cross-entropy plus the L2 penalty.

    By default the penalty covers only the tower weight matrices, which is
    where overfitting concentrates; with ``reg_embeddings`` enabled (and a
    forward cache available) the touched embedding rows are penalized too.
    Returns (loss, dloss_dlogit); regularization gradients are added
    separately by :func:`add_l2_grads`.
    """
    loss, dlogit = bce_from_logit(logit, label)
    lam = config.l2
    if lam > 0.0:
        for w in params.layer_weights:
            loss += lam * float((w * w).sum())
        if config.reg_embeddings and cache is not None:
            p = params.target_embed[cache.item]
            loss += lam * float(p @ p)
            if cache.hist.size:
                q = params.history_embed[cache.hist]
                loss += lam * float((q * q).sum())
    return loss, dlogit


def add_l2_grads(grads, params, config):
    """Add 2*lambda*theta to the gradients covered by the L2 policy."""
    lam = config.l2
    if lam <= 0.0:
        return grads
    for layer in range(len(grads.d_layer_w)):
        grads.d_layer_w[layer] = (grads.d_layer_w[layer]
                                  + 2.0 * lam * params.layer_weights[layer])
    if config.reg_embeddings:
        grads.d_target = grads.d_target + 2.0 * lam * params.target_embed[grads.item]
        if grads.hist.size:
            grads.d_history = (grads.d_history
                               + 2.0 * lam * params.history_embed[grads.hist])
    return grads


def train_epoch(params, config, split, opt_state, rng):
    """One pass over freshly sampled, shuffled training instances.

    Per instance: forward, loss, analytic backward, Adagrad step. Returns
    the mean per-instance loss. A non-finite loss aborts immediately with
    the offending instance in the exception.
    """
    instances = sample_training_instances(split.train, config.num_negatives, rng)
    if instances.shape[0] == 0:
        return 0.0
    histories = split.train.item_arrays()
    total = 0.0
    batch = []
    for u, i, label in instances.tolist():
        hist = histories[u]
        logit, cache = predict_logit(params, config, hist, u, i)
        if not math.isfinite(logit):
            raise TrainingDiverged(
                f"non-finite logit on instance (user={u}, item={i}, "
                f"label={label}): logit={logit!r}",
                instance=(u, i, label), logit=logit)
        loss, dlogit = loss_with_reg(logit, label, params, config, cache)
        if not math.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss on instance (user={u}, item={i}, "
                f"label={label}): logit={logit!r}",
                instance=(u, i, label), logit=logit)
        total += loss
        grads = add_l2_grads(backward(params, config, cache, dlogit),
                             params, config)
        batch.append(grads)
        if len(batch) >= config.batch_size:
            apply_batch(opt_state, params, batch)
            batch = []
    if batch:
        apply_batch(opt_state, params, batch)
    return total / instances.shape[0]


@dataclass
class EpochStats:
    epoch: int
    loss: float
    hr: float | None
    ndcg: float | None
    seconds: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)

    def append(self, stats):
        self.epochs.append(stats)

    @property
    def final_loss(self):
        return self.epochs[-1].loss if self.epochs else None


def fit(config, split, params=None, seed_labels=(), eval_k=10, on_epoch=None):
    """Train a model on a split; returns (params, report).

    Parameters are initialized from the config seed unless a pre-built set
    (e.g. from pre-training) is passed in. Instance sampling is reseeded
    per epoch from (seed, epoch), so the whole run is a pure function of
    (config, split). Every ``eval_every`` epochs the ranking metrics are
    measured on the split's held-out items. On divergence the exception
    carries a snapshot of the last finite epoch's parameters.
    """
    # imported here to keep module dependencies one-directional
    from deepicf.evaluation import evaluate, model_scorer_factory

    if params is None:
        rng = rng_from_seed(config.seed, *seed_labels, "init")
        params = init_params(config, split.train.num_users,
                             split.train.num_items, rng)
    opt_state = AdagradState(params, lr=config.lr)
    report = TrainReport()
    for epoch in range(1, config.epochs + 1):
        snapshot = params.clone()
        rng = rng_from_seed(config.seed, *seed_labels, "epoch", epoch)
        started = time.perf_counter()
        try:
            loss = train_epoch(params, config, split, opt_state, rng)
        except TrainingDiverged as err:
            err.epoch = epoch
            err.last_params = snapshot
            raise
        elapsed = time.perf_counter() - started
        hr = ndcg = None
        if config.eval_every > 0 and epoch % config.eval_every == 0:
            result = evaluate(model_scorer_factory(params, config, split),
                              split, k=eval_k)
            hr, ndcg = result.hr_at_k, result.ndcg_at_k
        stats = EpochStats(epoch=epoch, loss=loss, hr=hr, ndcg=ndcg,
                           seconds=elapsed)
        report.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
        if hr is None:
            log.info("epoch %d: loss=%.6f (%.2fs)", epoch, loss, elapsed)
        else:
            log.info("epoch %d: loss=%.6f hr@%d=%.4f ndcg@%d=%.4f (%.2fs)",
                     epoch, loss, eval_k, hr, eval_k, ndcg, elapsed)
    return params, report


def pretrain_and_init(config, split, on_epoch=None):
    """Train the FISM companion model and seed a deep variant with its
    embeddings.

    Only the two embedding tables carry over; every other parameter
    (tower, attention, output weights, biases) is freshly initialized from
    the config seed.
    """
    if config.variant not in (Variant.DEEPICF, Variant.DEEPICF_A):
        raise ConfigError(
            f"pre-training applies to deep variants, not {config.variant.value}")
    companion = fism_config(config)
    log.info("pre-training phase: FISM, k=%d, %d epochs",
             companion.k, companion.epochs)
    fism_params, _ = fit(companion, split, seed_labels=("pretrain",),
                         on_epoch=on_epoch)
    rng = rng_from_seed(config.seed, "init")
    params = init_params(config, split.train.num_users,
                         split.train.num_items, rng)
    params.target_embed[:] = fism_params.target_embed
    params.history_embed[:] = fism_params.history_embed
    log.info("pre-training done; embeddings copied into %s",
             config.variant.value)
    return params
