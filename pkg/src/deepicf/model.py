"""Model variants, their parameters, forward prediction, and exact
analytic backward passes.

All three variants share the same skeleton: elementwise products between
the target-item embedding and each history-item embedding, a pooling step
(alpha-normalized averaging, or an attention network with a beta-smoothed
softmax), an optional ReLU tower over the pooled vector, and a linear
prediction layer with user and item biases.

Parameters are mutable numpy arrays; training is single-writer, while any
number of evaluators may read a parameter set concurrently.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from deepicf.errors import ConfigError, ModelError
from deepicf.numerics import relu, softmax_beta, softmax_beta_vjp

INIT_STD = 0.01
MIN_TOWER_WIDTH = 4


class Variant(str, enum.Enum):
    FISM = "FISM"
    DEEPICF = "DeepICF"
    DEEPICF_A = "DeepICF_A"

    @classmethod
    def parse(cls, text):
        try:
            return cls(text)
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ConfigError(f"unknown variant {text!r}; expected one of {valid}")


def tower_layer_sizes(k, depth):
    """Default hidden sizes: start at the embedding size and halve per
    layer, never narrower than 4. E.g. k=16, depth=3 -> (16, 8, 4)."""
    return tuple(max(MIN_TOWER_WIDTH, k >> level) for level in range(depth))


@dataclass(frozen=True)
class ModelConfig:
    """Variant selector plus every hyper-parameter.

    ``alpha`` smooths the average pooling (0 = sum, 1 = mean), ``beta``
    smooths the attention softmax denominator, ``l2`` is the L2 strength
    applied to the tower weight matrices, and ``num_negatives`` is the
    sampling ratio per training positive.
    """

    variant: Variant
    k: int = 16
    k_prime: int = 8
    num_layers: int = 0
    layer_sizes: tuple = ()
    alpha: float = 0.0
    beta: float = 0.5
    l2: float = 0.0
    num_negatives: int = 4
    lr: float = 0.01
    epochs: int = 50
    seed: int = 42
    batch_size: int = 1
    reg_embeddings: bool = False
    pretrain: bool = False
    pretrain_epochs: int | None = None
    eval_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        sizes = tuple(int(d) for d in self.layer_sizes)
        if self.num_layers > 0 and not sizes:
            sizes = tower_layer_sizes(self.k, self.num_layers)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) != self.num_layers:
            raise ConfigError(
                f"layer_sizes {sizes} inconsistent with L={self.num_layers}")
        if self.k <= 0:
            raise ConfigError(f"embedding size must be positive, got {self.k}")
        if any(d <= 0 for d in sizes):
            raise ConfigError(f"layer sizes must be positive, got {sizes}")
        if self.variant is Variant.FISM and self.num_layers != 0:
            raise ConfigError("FISM has no hidden layers; set L=0")
        if self.variant is Variant.DEEPICF_A:
            if self.k_prime <= 0:
                raise ConfigError(
                    f"attention size must be positive, got {self.k_prime}")
            if self.alpha != 0.0:
                raise ConfigError(
                    "the attention variant omits the history-length"
                    " normalizer; alpha must be 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if self.l2 < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.l2}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.num_negatives < 0:
            raise ConfigError(f"NS must be >= 0, got {self.num_negatives}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def output_dim(self):
        return self.layer_sizes[-1] if self.num_layers else self.k

    @property
    def uses_attention(self):
        return self.variant is Variant.DEEPICF_A

    @property
    def trains_output_weights(self):
        # FISM fixes the output vector to all-ones to match its inner
        # product form; the deep variants train it.
        return self.variant is not Variant.FISM


@dataclass
class ModelParams:
    """All trainable tensors for one model instance."""

    target_embed: np.ndarray        # (I, k) embeddings of the item being scored
    history_embed: np.ndarray       # (I, k) embeddings of interacted items
    user_bias: np.ndarray           # (U,)
    item_bias: np.ndarray           # (I,)
    output_weights: np.ndarray      # (d_L,) prediction-layer weights
    layer_weights: list = field(default_factory=list)   # W_l: (d_l, d_{l-1})
    layer_biases: list = field(default_factory=list)    # b_l: (d_l,)
    att_weight: np.ndarray | None = None    # (k', k)
    att_bias: np.ndarray | None = None      # (k',)
    att_out: np.ndarray | None = None       # (k',)

    @property
    def num_users(self):
        return self.user_bias.shape[0]

    @property
    def num_items(self):
        return self.item_bias.shape[0]

    def clone(self):
        return ModelParams(
            target_embed=self.target_embed.copy(),
            history_embed=self.history_embed.copy(),
            user_bias=self.user_bias.copy(),
            item_bias=self.item_bias.copy(),
            output_weights=self.output_weights.copy(),
            layer_weights=[w.copy() for w in self.layer_weights],
            layer_biases=[b.copy() for b in self.layer_biases],
            att_weight=None if self.att_weight is None else self.att_weight.copy(),
            att_bias=None if self.att_bias is None else self.att_bias.copy(),
            att_out=None if self.att_out is None else self.att_out.copy(),
        )

    def arrays(self):
        """Every array the variant carries, in checkpoint order."""
        out = [self.target_embed, self.history_embed, self.user_bias,
               self.item_bias, self.output_weights]
        for w, b in zip(self.layer_weights, self.layer_biases):
            out.extend([w, b])
        if self.att_weight is not None:
            out.extend([self.att_weight, self.att_bias, self.att_out])
        return out


def init_params(config, num_users, num_items, rng):
    """Fresh parameters: weights ~ Gaussian(0, 0.01), biases zero.

    The draw order (target embeddings, history embeddings, tower weights,
    output weights, attention weights) is fixed so a seed fully determines
    the result.
    """
    if num_users <= 0 or num_items <= 0:
        raise ModelError("need at least one user and one item")
    k = config.k
    target = rng.normal(0.0, INIT_STD, size=(num_items, k))
    history = rng.normal(0.0, INIT_STD, size=(num_items, k))
    weights, biases = [], []
    prev = k
    for d in config.layer_sizes:
        weights.append(rng.normal(0.0, INIT_STD, size=(d, prev)))
        biases.append(np.zeros(d))
        prev = d
    if config.trains_output_weights:
        out = rng.normal(0.0, INIT_STD, size=config.output_dim)
    else:
        out = np.ones(config.output_dim)
    att_w = att_b = att_h = None
    if config.uses_attention:
        att_w = rng.normal(0.0, INIT_STD, size=(config.k_prime, k))
        att_b = np.zeros(config.k_prime)
        att_h = rng.normal(0.0, INIT_STD, size=config.k_prime)
    return ModelParams(
        target_embed=target, history_embed=history,
        user_bias=np.zeros(num_users), item_bias=np.zeros(num_items),
        output_weights=out, layer_weights=weights, layer_biases=biases,
        att_weight=att_w, att_bias=att_b, att_out=att_h)


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------

def pairwise_interactions(params, history, item):
    """Elementwise products q_j * p_i over the history with the target item
    masked out. Returns (masked history indices, the (n, k) matrix)."""
    hist = np.asarray(history, dtype=np.int64)
    hist = hist[hist != item]
    return hist, params.history_embed[hist] * params.target_embed[item]


def pool_average(pairwise, alpha):
    """Sum the interaction vectors scaled by |set|^-alpha.

    alpha=0 gives plain sum pooling, alpha=1 the mean. An empty set pools
    to the zero vector (the normalizer is defined as 1 to avoid 0**0).
    """
    n = pairwise.shape[0]
    if n == 0:
        return np.zeros(pairwise.shape[1])
    scale = 1.0 if alpha == 0.0 else float(n) ** -alpha
    return scale * pairwise.sum(axis=0)


@dataclass
class AttentionCache:
    pre: np.ndarray       # (n, k') hidden pre-activations
    hidden: np.ndarray    # (n, k') ReLU outputs
    scores: np.ndarray    # (n,)
    weights: np.ndarray   # (n,) beta-softmax weights
    pooled: np.ndarray    # (k,)


def attention_forward(pairwise, att_weight, att_bias, att_out, beta):
    """Score each interaction vector with the one-hidden-layer attention
    net, normalize with the beta-smoothed softmax, and pool. The history
    length normalizer is omitted here by convention (alpha = 0)."""
    n, k = pairwise.shape
    if n == 0:
        empty = np.empty((0, att_weight.shape[0]))
        return AttentionCache(pre=empty, hidden=empty, scores=np.empty(0),
                              weights=np.empty(0), pooled=np.zeros(k))
    pre = pairwise @ att_weight.T + att_bias
    hidden = relu(pre)
    scores = hidden @ att_out
    weights = softmax_beta(scores, beta)
    pooled = weights @ pairwise
    return AttentionCache(pre=pre, hidden=hidden, scores=scores,
                          weights=weights, pooled=pooled)


def pool_attention(pairwise, att_weight, att_bias, att_out, beta):
    """Attention pooling; returns (pooled vector, attention weights)."""
    cache = attention_forward(pairwise, att_weight, att_bias, att_out, beta)
    return cache.pooled, cache.weights


def mlp_forward(x, weights, biases):
    """ReLU tower over the pooled vector. Returns the final activation and
    the per-layer (pre-activation, activation) lists; depth 0 is the
    identity."""
    pres, acts = [], []
    out = x
    for w, b in zip(weights, biases):
        if w.shape[1] != out.shape[0]:
            raise ModelError(
                f"layer expects input of size {w.shape[1]}, got {out.shape[0]}")
        pre = w @ out + b
        out = relu(pre)
        pres.append(pre)
        acts.append(out)
    return out, pres, acts


@dataclass
class ForwardCache:
    """Everything the backward pass needs, captured during prediction."""

    user: int
    item: int
    hist: np.ndarray            # masked history indices
    pairwise: np.ndarray        # (n, k)
    pool_scale: float           # |set|^-alpha (1.0 for attention/empty)
    attention: AttentionCache | None
    pooled: np.ndarray
    layer_pres: list
    layer_acts: list
    logit: float


def predict_logit(params, config, history, user, item):
    """Forward pass for one (user, item) pair given the user's stored
    training history. The target item is always masked out of the history,
    so a leaked copy of the item cannot influence its own score. Returns
    (logit, cache)."""
    if not 0 <= user < params.num_users:
        raise ModelError(f"user index {user} outside [0, {params.num_users})")
    if not 0 <= item < params.num_items:
        raise ModelError(f"item index {item} outside [0, {params.num_items})")
    hist, pairwise = pairwise_interactions(params, history, item)
    n = pairwise.shape[0]
    att = None
    if config.uses_attention:
        att = attention_forward(pairwise, params.att_weight, params.att_bias,
                                params.att_out, config.beta)
        pooled = att.pooled
        scale = 1.0
    else:
        scale = 1.0 if (n == 0 or config.alpha == 0.0) else float(n) ** -config.alpha
        pooled = scale * pairwise.sum(axis=0) if n else np.zeros(config.k)
    out, pres, acts = mlp_forward(pooled, params.layer_weights,
                                  params.layer_biases)
    logit = float(params.output_weights @ out
                  + params.user_bias[user] + params.item_bias[item])
    cache = ForwardCache(user=user, item=item, hist=hist, pairwise=pairwise,
                         pool_scale=scale, attention=att, pooled=pooled,
                         layer_pres=pres, layer_acts=acts, logit=logit)
    return logit, cache


def score_items(params, config, history, user, items):
    """Vectorized forward pass over many candidate items for one user.

    Equivalent to calling :func:`predict_logit` per item (verified by
    tests); used by the evaluation harness and the recommender, where the
    candidate set never overlaps the history. Falls back to the scalar
    path when it does.
    """
    items = np.atleast_1d(np.asarray(items, dtype=np.int64))
    if items.size == 0:
        return np.empty(0)
    if items.min() < 0 or items.max() >= params.num_items:
        raise ModelError("item index out of range")
    hist = np.asarray(history, dtype=np.int64)
    if hist.size and np.isin(items, hist).any():
        return np.array([predict_logit(params, config, hist, user, int(i))[0]
                         for i in items])
    n = hist.size
    num = items.shape[0]
    if n == 0:
        pooled = np.zeros((num, config.k))
    elif config.uses_attention:
        v = params.history_embed[hist][None, :, :] * params.target_embed[items][:, None, :]
        pre = v @ params.att_weight.T + params.att_bias
        scores = relu(pre) @ params.att_out                 # (num, n)
        weights = np.empty_like(scores)
        for r in range(num):
            weights[r] = softmax_beta(scores[r], config.beta)
        pooled = np.einsum("cn,cnk->ck", weights, v)
    else:
        scale = 1.0 if config.alpha == 0.0 else float(n) ** -config.alpha
        qsum = params.history_embed[hist].sum(axis=0)
        pooled = scale * (params.target_embed[items] * qsum)
    out = pooled
    for w, b in zip(params.layer_weights, params.layer_biases):
        out = relu(out @ w.T + b)
    return (out @ params.output_weights
            + params.user_bias[user] + params.item_bias[items])


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

@dataclass
class Grads:
    """Per-instance gradients, sparse over the touched embedding rows."""

    user: int
    item: int
    d_target: np.ndarray            # gradient of the target item's embedding row
    hist: np.ndarray                # history rows receiving gradients
    d_history: np.ndarray           # (n, k), aligned with hist
    d_user_bias: float
    d_item_bias: float
    d_output: np.ndarray | None
    d_layer_w: list
    d_layer_b: list
    d_att_weight: np.ndarray | None = None
    d_att_bias: np.ndarray | None = None
    d_att_out: np.ndarray | None = None


def backward(params, config, cache, dlogit):
    """Exact analytic gradients for every parameter the variant trains.

    Chain rule through the prediction layer, the ReLU tower, the pooling
    step, and the pairwise products. For attention pooling the full
    softmax Jacobian is applied: the beta exponent on the shared
    denominator couples all weights, so each score receives
    ``w_r * d_r - beta * g_r * <d, w>`` where g is the plain softmax of the
    same scores.
    """
    dlogit = float(dlogit)
    k = config.k
    n = cache.hist.size

    d_output = None
    if config.trains_output_weights:
        top = cache.layer_acts[-1] if cache.layer_acts else cache.pooled
        d_output = dlogit * top
    d_vec = dlogit * params.output_weights

    d_layer_w, d_layer_b = [], []
    for layer in range(len(params.layer_weights) - 1, -1, -1):
        # ReLU subgradient at exactly 0 is taken as 0
        d_pre = d_vec * (cache.layer_pres[layer] > 0.0)
        below = cache.layer_acts[layer - 1] if layer > 0 else cache.pooled
        d_layer_w.append(np.outer(d_pre, below))
        d_layer_b.append(d_pre)
        d_vec = params.layer_weights[layer].T @ d_pre
    d_layer_w.reverse()
    d_layer_b.reverse()

    d_att_w = d_att_b = d_att_h = None
    if config.uses_attention:
        d_att_w = np.zeros_like(params.att_weight)
        d_att_b = np.zeros_like(params.att_bias)
        d_att_h = np.zeros_like(params.att_out)

    if n == 0:
        d_target = np.zeros(k)
        d_history = np.zeros((0, k))
    elif config.uses_attention:
        att = cache.attention
        # pooled = sum_t w_t v_t
        d_weights = cache.pairwise @ d_vec                 # (n,)
        d_pair = att.weights[:, None] * d_vec[None, :]     # direct path
        d_scores = softmax_beta_vjp(att.scores, config.beta, d_weights)
        d_hidden = d_scores[:, None] * params.att_out[None, :]
        d_att_h = att.hidden.T @ d_scores
        d_pre = d_hidden * (att.pre > 0.0)
        d_att_w = d_pre.T @ cache.pairwise
        d_att_b = d_pre.sum(axis=0)
        d_pair = d_pair + d_pre @ params.att_weight        # attention path
        d_target = (d_pair * params.history_embed[cache.hist]).sum(axis=0)
        d_history = d_pair * params.target_embed[cache.item][None, :]
    else:
        d_pool = cache.pool_scale * d_vec
        d_target = d_pool * params.history_embed[cache.hist].sum(axis=0)
        d_history = np.broadcast_to(
            d_pool * params.target_embed[cache.item], (n, k))

    return Grads(
        user=cache.user, item=cache.item,
        d_target=d_target, hist=cache.hist, d_history=d_history,
        d_user_bias=dlogit, d_item_bias=dlogit,
        d_output=d_output, d_layer_w=d_layer_w, d_layer_b=d_layer_b,
        d_att_weight=d_att_w, d_att_bias=d_att_b, d_att_out=d_att_h)


# ---------------------------------------------------------------------------
# Flat parameter views, used by the finite-difference gradient checks
# ---------------------------------------------------------------------------

def _trainable_shapes(config, num_users, num_items):
    shapes = [("target_embed", (num_items, config.k)),
              ("history_embed", (num_items, config.k)),
              ("user_bias", (num_users,)),
              ("item_bias", (num_items,))]
    if config.trains_output_weights:
        shapes.append(("output_weights", (config.output_dim,)))
    prev = config.k
    for layer, d in enumerate(config.layer_sizes):
        shapes.append((f"layer_weights[{layer}]", (d, prev)))
        shapes.append((f"layer_biases[{layer}]", (d,)))
        prev = d
    if config.uses_attention:
        shapes.extend([("att_weight", (config.k_prime, config.k)),
                       ("att_bias", (config.k_prime,)),
                       ("att_out", (config.k_prime,))])
    return shapes


def flatten_params(params, config):
    """Concatenate the variant's trainable tensors into one vector."""
    parts = [params.target_embed, params.history_embed, params.user_bias,
             params.item_bias]
    if config.trains_output_weights:
        parts.append(params.output_weights)
    for w, b in zip(params.layer_weights, params.layer_biases):
        parts.extend([w, b])
    if config.uses_attention:
        parts.extend([params.att_weight, params.att_bias, params.att_out])
    return np.concatenate([p.ravel() for p in parts])


def params_from_flat(theta, config, num_users, num_items):
    """Rebuild parameters as views into a flat vector, so perturbing one
    coordinate of ``theta`` perturbs exactly one model weight."""
    pieces = {}
    offset = 0
    for name, shape in _trainable_shapes(config, num_users, num_items):
        size = int(np.prod(shape))
        pieces[name] = theta[offset:offset + size].reshape(shape)
        offset += size
    if offset != theta.size:
        raise ModelError(
            f"flat vector has {theta.size} entries, expected {offset}")
    weights = [pieces[f"layer_weights[{i}]"] for i in range(config.num_layers)]
    biases = [pieces[f"layer_biases[{i}]"] for i in range(config.num_layers)]
    out = (pieces["output_weights"] if config.trains_output_weights
           else np.ones(config.output_dim))
    return ModelParams(
        target_embed=pieces["target_embed"],
        history_embed=pieces["history_embed"],
        user_bias=pieces["user_bias"], item_bias=pieces["item_bias"],
        output_weights=out, layer_weights=weights, layer_biases=biases,
        att_weight=pieces.get("att_weight"), att_bias=pieces.get("att_bias"),
        att_out=pieces.get("att_out"))


def flatten_grads(grads, config, num_users, num_items):
    """Scatter a sparse :class:`Grads` into the flat layout of
    :func:`flatten_params`, for direct comparison with the oracle."""
    d_target = np.zeros((num_items, config.k))
    d_target[grads.item] = grads.d_target
    d_history = np.zeros((num_items, config.k))
    if grads.hist.size:
        d_history[grads.hist] = grads.d_history
    d_ub = np.zeros(num_users)
    d_ub[grads.user] = grads.d_user_bias
    d_ib = np.zeros(num_items)
    d_ib[grads.item] = grads.d_item_bias
    parts = [d_target, d_history, d_ub, d_ib]
    if config.trains_output_weights:
        parts.append(grads.d_output)
    for w, b in zip(grads.d_layer_w, grads.d_layer_b):
        parts.extend([w, b])
    if config.uses_attention:
        parts.extend([grads.d_att_weight, grads.d_att_bias, grads.d_att_out])
    return np.concatenate([p.ravel() for p in parts])


def fism_config(config):
    """The FISM companion of a deep config, used for embedding pre-training:
    same embedding size, pooling exponent, sampling ratio, and optimizer
    settings, with the tower and attention removed."""
    return replace(config, variant=Variant.FISM, num_layers=0, layer_sizes=(),
                   pretrain=False,
                   epochs=(config.pretrain_epochs
                           if config.pretrain_epochs is not None
                           else config.epochs))
