"""Masked recurrent aggregator: variable-length sequences to intensities.

A GRU runs over every (padded) frame of a video; all hidden states are
concatenated into one video-level embedding, whose coordinates beyond
the video's true pre-padding length are zeroed by the mask layer before
two feed-forward layers produce the 7 intensity outputs.

Because the masked coordinates are exactly zero, the first feed-forward
layer's weights attached to those positions receive exactly-zero
gradients: selective weight updating falls out of the arithmetic rather
than a bespoke sparse-update mechanism. Bias gradients are not masked;
biases attach to neurons, not embedding positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .optim import adam_step


@dataclass(frozen=True)
class AggregatorConfig:
    d_in: int = 26
    t: int = 32
    d_hidden: int = 16
    d_ff: int = 8
    n_out: int = 7
    gru_layers: int = 1
    mask_enabled: bool = True
    sigmoid_output: bool = False

    def param_shapes(self):
        shapes = {}
        for layer in range(self.gru_layers):
            d = self.d_in if layer == 0 else self.d_hidden
            for gate in ("z", "r", "h"):
                shapes[f"gru{layer}.w{gate}"] = (d, self.d_hidden)
                shapes[f"gru{layer}.u{gate}"] = (self.d_hidden, self.d_hidden)
                shapes[f"gru{layer}.b{gate}"] = (self.d_hidden,)
        shapes["ff1.w"] = (self.t * self.d_hidden, self.d_ff)
        shapes["ff1.b"] = (self.d_ff,)
        shapes["out.w"] = (self.d_ff, self.n_out)
        shapes["out.b"] = (self.n_out,)
        return shapes


def init_params(config, seed):
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in config.param_shapes().items():
        if name.split(".")[-1].startswith("b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(size=shape) / np.sqrt(shape[0])
    return params


def _np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_forward(frames, params, prefix="gru0", h0=None):
    """Run the GRU over a (t, d) sequence; returns all hidden states (t, d').

    Recurrence per step, with update gate u, reset gate r, candidate c:
        u_k = sigmoid(x_k Wz + h Uz + bz)
        r_k = sigmoid(x_k Wr + h Ur + br)
        c_k = tanh(x_k Wh + (r_k * h) Uh + bh)
        h_k = (1 - u_k) * h + u_k * c_k
    """
    frames = np.asarray(frames, dtype=np.float64)
    wz, uz, bz = (params[f"{prefix}.{n}z"] for n in ("w", "u", "b"))
    wr, ur, br = (params[f"{prefix}.{n}r"] for n in ("w", "u", "b"))
    wh, uh, bh = (params[f"{prefix}.{n}h"] for n in ("w", "u", "b"))
    d_hidden = wz.shape[1]
    h = np.zeros(d_hidden) if h0 is None else np.asarray(h0, dtype=np.float64)
    out = np.empty((frames.shape[0], d_hidden))
    for k, x in enumerate(frames):
        u = _np_sigmoid(x @ wz + h @ uz + bz)
        r = _np_sigmoid(x @ wr + h @ ur + br)
        c = np.tanh(x @ wh + (r * h) @ uh + bh)
        h = (1.0 - u) * h + u * c
        out[k] = h
    return out


def mask_by_length(z, length, d_hidden):
    """Keep the first length*d_hidden coordinates, zero the rest.

    The embedding is the row-major flattening of the per-step hidden
    states, so prefix selection keeps exactly the states computed from
    real (pre-padding) frames. Idempotent, and a linear projection.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] % d_hidden:
        raise ValueError(f"embedding width {z.shape[-1]} not divisible by {d_hidden}")
    t = z.shape[-1] // d_hidden
    if not 1 <= length <= t:
        raise ValueError(f"length {length} outside [1, {t}]")
    out = z.copy()
    out[..., length * d_hidden:] = 0.0
    return out


def length_mask(lengths, t, d_hidden):
    """(n, t*d_hidden) 0/1 array keeping each row's true-length prefix."""
    lengths = np.asarray(lengths)
    if np.any(lengths < 1) or np.any(lengths > t):
        raise ValueError(f"lengths must lie in [1, {t}]")
    positions = np.arange(t * d_hidden)
    return (positions[None, :] < lengths[:, None] * d_hidden).astype(np.float64)


def video_forward(frames, length, params, config):
    """Numeric forward pass for one video; returns the 7 intensities."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape != (config.t, config.d_in):
        raise ValueError(f"frames shape {frames.shape}, expected {(config.t, config.d_in)}")
    seq = frames
    for layer in range(config.gru_layers):
        seq = gru_forward(seq, params, prefix=f"gru{layer}")
    z = seq.reshape(-1)
    if config.mask_enabled:
        z = mask_by_length(z, length, config.d_hidden)
    z3 = np.tanh(z @ params["ff1.w"] + params["ff1.b"])
    u = z3 @ params["out.w"] + params["out.b"]
    return _np_sigmoid(u) if config.sigmoid_output else u


# ---------------------------------------------------------------------------
# expression-graph twins


def gru_chain_nodes(params, layer, inputs, batch_size, d_hidden):
    """Unrolled GRU over a list of (batch, d) nodes; returns all h nodes."""
    wz, uz, bz = (params[f"gru{layer}.{n}z"] for n in ("w", "u", "b"))
    wr, ur, br = (params[f"gru{layer}.{n}r"] for n in ("w", "u", "b"))
    wh, uh, bh = (params[f"gru{layer}.{n}h"] for n in ("w", "u", "b"))
    h = ad.constant(np.zeros((batch_size, d_hidden)))
    one = ad.constant(1.0)
    out = []
    for x in inputs:
        u = ad.sigmoid(ad.add(ad.add(ad.matmul(x, wz), ad.matmul(h, uz)), bz))
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, wr), ad.matmul(h, ur)), br))
        c = ad.tanh(ad.add(ad.add(ad.matmul(x, wh), ad.matmul(ad.mul(r, h), uh)), bh))
        h = ad.add(ad.mul(ad.sub(one, u), h), ad.mul(u, c))
        out.append(h)
    return out


def forward_nodes(config, batch_size, frame_nodes=None):
    """Batched forward graph; returns (param leaves, frame nodes, u node).

    When `frame_nodes` is omitted, per-step placeholders x_0..x_{t-1}
    are created, plus a "mask" placeholder when masking is enabled, so
    one graph serves every batch of the same size.
    """
    params = {name: ad.param(name, shape) for name, shape in config.param_shapes().items()}
    xs = frame_nodes
    if xs is None:
        xs = [ad.placeholder(f"x_{k}", (batch_size, config.d_in)) for k in range(config.t)]
    seq = xs
    for layer in range(config.gru_layers):
        seq = gru_chain_nodes(params, layer, seq, batch_size, config.d_hidden)
    z = ad.concat(seq, axis=1)
    if config.mask_enabled:
        z = ad.mul(z, ad.placeholder("mask", (batch_size, config.t * config.d_hidden)))
    z3 = ad.tanh(ad.affine(z, params["ff1.w"], params["ff1.b"]))
    u = ad.affine(z3, params["out.w"], params["out.b"])
    if config.sigmoid_output:
        u = ad.sigmoid(u)
    return params, xs, u


def _pearson_core(preds, labels, bump, keep):
    cov = ad.covariance(preds, labels, axis=0)
    den = ad.sqrt(ad.mul(ad.variance(preds, axis=0), ad.variance(labels, axis=0)))
    if bump is not None:
        den = ad.add(den, bump)
    rho = ad.div(cov, den)
    if keep is not None:
        rho = ad.mul(rho, keep)
    return ad.sub(ad.constant(1.0), ad.reduce_mean(rho))


def pearson_loss_node(preds, labels, degenerate_cols=None, guard_nodes=None):
    """1 - mean over outputs of the per-column batch Pearson correlation.

    Columns whose correlation is defined as zero get their denominator
    bumped and the resulting ratio zeroed exactly; either through
    `degenerate_cols` (a fixed boolean vector) or `guard_nodes`, a
    (bump, keep) pair of leaves bound per batch so one cached graph can
    serve batches with and without constant label columns.
    """
    if guard_nodes is not None:
        return _pearson_core(preds, labels, *guard_nodes)
    if degenerate_cols is not None and np.any(degenerate_cols):
        bump = np.where(degenerate_cols, 1.0, 0.0)
        return _pearson_core(preds, labels, ad.constant(bump), ad.constant(1.0 - bump))
    return _pearson_core(preds, labels, None, None)


def column_guards(labels):
    """(bump, keep) arrays marking constant label columns of a batch."""
    degenerate = _constant_columns(np.asarray(labels, dtype=np.float64))
    bump = degenerate.astype(np.float64)
    return bump, 1.0 - bump


def mse_loss_node(preds, labels):
    diff = ad.sub(preds, labels)
    return ad.reduce_mean(ad.mul(diff, diff))


def loss_node(preds, labels, loss_kind, degenerate_cols=None, guard_nodes=None):
    if loss_kind == "pearson":
        return pearson_loss_node(preds, labels, degenerate_cols, guard_nodes)
    if loss_kind == "mse":
        return mse_loss_node(preds, labels)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


# ---------------------------------------------------------------------------
# value-level loss surfaces


def _constant_columns(x):
    return np.all(x == x[0], axis=0)


def pearson_loss(preds, labels):
    """Batch value of the correlation loss; zero-variance columns count
    as correlation 0 (exactly)."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape or preds.ndim != 2:
        raise ValueError(f"shape mismatch {preds.shape} vs {labels.shape}")
    if preds.shape[0] < 2:
        raise ValueError("need a batch of at least 2")
    degenerate = _constant_columns(preds) | _constant_columns(labels)
    node = pearson_loss_node(
        ad.constant(preds), ad.constant(labels),
        degenerate if degenerate.any() else None,
    )
    return float(ad.Graph(node).evaluate({}))


def mse_loss(preds, labels):
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ValueError(f"shape mismatch {preds.shape} vs {labels.shape}")
    return float(ad.Graph(mse_loss_node(ad.constant(preds), ad.constant(labels))).evaluate({}))


# ---------------------------------------------------------------------------
# batched execution


def batch_bindings(config, params, frames, lengths, labels=None):
    """Bind a (n, t, d) batch to the placeholders of forward_nodes."""
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[0]
    if frames.shape != (n, config.t, config.d_in):
        raise ValueError(f"frames shape {frames.shape}, expected (n, {config.t}, {config.d_in})")
    bindings = dict(params)
    for k in range(config.t):
        bindings[f"x_{k}"] = frames[:, k, :]
    if config.mask_enabled:
        bindings["mask"] = length_mask(lengths, config.t, config.d_hidden)
    if labels is not None:
        labels = np.asarray(labels, dtype=np.float64)
        bindings["labels"] = labels
        bindings["rho_bump"], bindings["rho_keep"] = column_guards(labels)
    return bindings


class BatchRunner:
    """Reusable graphs for one (config, batch size): forward and loss."""

    def __init__(self, config, batch_size, loss_kind=None):
        self.config = config
        self.batch_size = batch_size
        self.loss_kind = loss_kind
        _, _, self.u = forward_nodes(config, batch_size)
        root = self.u
        if loss_kind is not None:
            labels = ad.placeholder("labels", (batch_size, config.n_out))
            guards = None
            if loss_kind == "pearson":
                guards = (
                    ad.placeholder("rho_bump", (config.n_out,)),
                    ad.placeholder("rho_keep", (config.n_out,)),
                )
            root = loss_node(self.u, labels, loss_kind, guard_nodes=guards)
        self.graph = ad.Graph(root)

    def forward(self, params, frames, lengths):
        bindings = batch_bindings(self.config, params, frames, lengths)
        if self.loss_kind is None:
            return self.graph.evaluate(bindings)
        self.graph.evaluate(bindings)
        return self.graph.cached_value(self.u)

    def loss(self, params, frames, lengths, labels):
        bindings = batch_bindings(self.config, params, frames, lengths, labels)
        return float(self.graph.evaluate(bindings))

    def step(self, params, opt_state, frames, lengths, labels, lr):
        """One Adam step; returns (params, opt_state, loss value)."""
        bindings = batch_bindings(self.config, params, frames, lengths, labels)
        value = float(self.graph.evaluate(bindings))
        if not np.isfinite(value):
            raise ad.GraphError("non-finite loss")
        grads = self.graph.backward()
        if self.config.mask_enabled:
            _assert_routing(grads["ff1.w"], lengths, self.config)
        new_params, new_state = adam_step(params, grads, opt_state, lr)
        return new_params, new_state, value


def _assert_routing(ff1_grad, lengths, config):
    # zeroed embedding coordinates must yield exactly-zero weight gradients
    boundary = int(np.max(lengths)) * config.d_hidden
    if not np.all(ff1_grad[boundary:, :] == 0.0):
        raise AssertionError("routing contract violated: masked ff1 rows got gradient")


def train_step(frames, lengths, labels, params, opt_state, lr, config, loss_kind="pearson"):
    """Single Adam update on one batch (builds a fresh graph; training
    loops should hold a BatchRunner instead)."""
    if loss_kind == "pearson" and len(frames) < 2:
        raise ValueError("pearson loss needs a batch of at least 2")
    runner = BatchRunner(config, len(frames), loss_kind)
    return runner.step(params, opt_state, frames, lengths, labels, lr)


def predict(samples, params, config, chunk_size=64):
    """Batched forward over a dataset; deterministic and order-preserving.

    `samples` is a sequence of objects with .frames and .length (or
    (frames, length) pairs).
    """
    frames, lengths = [], []
    for s in samples:
        if hasattr(s, "frames"):
            frames.append(s.frames)
            lengths.append(s.length)
        else:
            frames.append(s[0])
            lengths.append(s[1])
    if not frames:
        return np.zeros((0, config.n_out))
    frames = np.asarray(frames, dtype=np.float64)
    lengths = np.asarray(lengths)
    outputs = []
    runners = {}
    for start in range(0, len(frames), chunk_size):
        chunk = frames[start:start + chunk_size]
        n = len(chunk)
        if n not in runners:
            runners[n] = BatchRunner(config, n)
        outputs.append(runners[n].forward(params, chunk, lengths[start:start + chunk_size]))
    return np.concatenate(outputs, axis=0)
