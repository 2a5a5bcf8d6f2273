"""Multi-task per-frame affect head.

A shared fully-connected residual trunk feeds three task heads that
predict, for each frame descriptor: a valence-arousal pair (tanh), a
7-way basic-expression distribution (softmax), and 17 action-unit
activations (sigmoid). Training couples the tasks with four loss terms:

  * concordance loss on valence-arousal,
  * categorical cross entropy on expressions,
  * binary cross entropy on action units,
  * a coupling loss matching predicted AU activations against the AU
    mixture implied by the predicted expression distribution.

Per-sample label masks make the head trainable on batches where each
sample carries only a subset of the three annotation kinds; absent
tasks contribute exactly zero and are flagged in the loss breakdown.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .affect_space import N_AUS, N_EXPRESSIONS, relatedness_matrix

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class HeadConfig:
    d_in: int = 64
    width: int = 64
    n_blocks: int = 2
    two_term_coupling: bool = False

    def param_shapes(self):
        shapes = {
            "trunk.in.w": (self.d_in, self.width),
            "trunk.in.b": (self.width,),
        }
        for i in range(self.n_blocks):
            shapes[f"trunk.block{i}.w"] = (self.width, self.width)
            shapes[f"trunk.block{i}.b"] = (self.width,)
        shapes.update(
            {
                "va.w": (self.width, 2),
                "va.b": (2,),
                "expr.w": (self.width, N_EXPRESSIONS),
                "expr.b": (N_EXPRESSIONS,),
                "au.w": (self.width, N_AUS),
                "au.b": (N_AUS,),
            }
        )
        return shapes


def init_head_params(config, seed):
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(size=shape) / np.sqrt(shape[0])
    return params


@dataclass
class AffectOutput:
    """Head outputs for one frame (1-d) or a batch of frames (2-d)."""

    va: np.ndarray
    expr: np.ndarray
    au: np.ndarray

    def concat(self):
        return np.concatenate([self.va, self.expr, self.au], axis=-1)

    def validate(self):
        if np.any(np.abs(self.va) > 1.0):
            raise ValueError("valence-arousal outside [-1, 1]")
        if np.any((self.au < 0.0) | (self.au > 1.0)):
            raise ValueError("AU activation outside [0, 1]")
        sums = self.expr.sum(axis=-1)
        if not np.all(np.abs(sums - 1.0) < 1e-9):
            raise ValueError("expression distribution does not sum to 1")
        return self


def _np_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_forward(features, params, config):
    """Numeric forward pass; accepts a single descriptor or a batch."""
    x = np.asarray(features, dtype=np.float64)
    h = np.tanh(x @ params["trunk.in.w"] + params["trunk.in.b"])
    for i in range(config.n_blocks):
        h = h + np.tanh(h @ params[f"trunk.block{i}.w"] + params[f"trunk.block{i}.b"])
    va = np.tanh(h @ params["va.w"] + params["va.b"])
    expr = _np_softmax(h @ params["expr.w"] + params["expr.b"])
    au = 1.0 / (1.0 + np.exp(-(h @ params["au.w"] + params["au.b"])))
    return AffectOutput(va=va, expr=expr, au=au)


def head_nodes(config, features, params=None):
    """Differentiable twin of head_forward over a features node.

    Returns (AffectOutput of nodes, param-leaf dict). Param leaves are
    created on demand so several head instances can share one graph.
    """
    p = params if params is not None else {
        name: ad.param(name, shape) for name, shape in config.param_shapes().items()
    }
    h = ad.tanh(ad.affine(features, p["trunk.in.w"], p["trunk.in.b"]))
    for i in range(config.n_blocks):
        h = ad.add(h, ad.tanh(ad.affine(h, p[f"trunk.block{i}.w"], p[f"trunk.block{i}.b"])))
    va = ad.tanh(ad.affine(h, p["va.w"], p["va.b"]))
    expr = ad.softmax(ad.affine(h, p["expr.w"], p["expr.b"]))
    au = ad.sigmoid(ad.affine(h, p["au.w"], p["au.b"]))
    return AffectOutput(va=va, expr=expr, au=au), p


# ---------------------------------------------------------------------------
# loss builders (expression-graph nodes)


def ccc_node(x, y):
    """Concordance of two 1-d nodes: 2*cov / (var_x + var_y + mean_gap^2)."""
    cov = ad.covariance(x, y)
    gap = ad.sub(ad.reduce_mean(x), ad.reduce_mean(y))
    den = ad.add(ad.add(ad.variance(x), ad.variance(y)), ad.mul(gap, gap))
    return ad.div(ad.scale(cov, 2.0), den)


def weighted_va_ccc_loss_node(pred, label, row_weights):
    """1 - 0.5*(ccc_valence + ccc_arousal) over weight-selected batch rows.

    `row_weights` is a fixed (batch, 1) 0/1 array choosing the samples
    that carry valence-arousal labels; moments are computed over the
    selected rows only.
    """
    w = np.asarray(row_weights, dtype=np.float64).reshape(-1, 1)
    n = float(w.sum())
    wc = ad.constant(w)

    def wmean(node):
        return ad.scale(ad.reduce_sum(ad.mul(wc, node), axis=0), 1.0 / n)

    mp = wmean(pred)
    ml = wmean(label)
    cp = ad.sub(pred, mp)
    cl = ad.sub(label, ml)
    var_p = wmean(ad.mul(cp, cp))
    var_l = wmean(ad.mul(cl, cl))
    cov = wmean(ad.mul(cp, cl))
    gap = ad.sub(mp, ml)
    den = ad.add(ad.add(var_p, var_l), ad.mul(gap, gap))
    ccc_cols = ad.div(ad.scale(cov, 2.0), den)
    return ad.sub(ad.constant(1.0), ad.scale(ad.reduce_sum(ccc_cols), 0.5))


def cross_entropy_node(probs, onehot):
    """Mean over labeled rows of -log p[label]; unlabeled rows carry
    all-zero one-hot rows and drop out of the sum."""
    onehot = np.asarray(onehot, dtype=np.float64)
    n = float(onehot.sum())
    picked = ad.reduce_sum(ad.mul(ad.constant(onehot), ad.log(probs, floor=LOG_FLOOR)))
    return ad.scale(picked, -1.0 / n)


def binary_cross_entropy_node(probs, labels, row_weights):
    w = np.asarray(row_weights, dtype=np.float64).reshape(-1, 1)
    labels = np.asarray(labels, dtype=np.float64)
    n = float(w.sum()) * labels.shape[1]
    pos = ad.mul(ad.constant(labels), ad.log(probs, floor=LOG_FLOOR))
    neg = ad.mul(
        ad.constant(1.0 - labels),
        ad.log(ad.sub(ad.constant(1.0), probs), floor=LOG_FLOOR),
    )
    per_entry = ad.add(pos, neg)
    return ad.scale(ad.reduce_sum(ad.mul(ad.constant(w), per_entry)), -1.0 / n)


def coupling_node(au_probs, au_targets, two_term=False):
    """Soft-target cross entropy pulling AU activations toward the AU
    mixture implied by the expression distribution.

    The one-term form is the default; `two_term` adds the complementary
    (1 - target) * log(1 - p) half for comparison runs.
    """
    per = ad.mul(au_targets, ad.log(au_probs, floor=LOG_FLOOR))
    if two_term:
        comp = ad.mul(
            ad.sub(ad.constant(1.0), au_targets),
            ad.log(ad.sub(ad.constant(1.0), au_probs), floor=LOG_FLOOR),
        )
        per = ad.add(per, comp)
    summed = ad.reduce_sum(per) if len(au_probs.shape) == 1 else ad.reduce_mean(
        ad.reduce_sum(per, axis=1)
    )
    return ad.scale(summed, -1.0)


def pseudo_au_node(expr):
    return ad.matmul(expr, ad.constant(relatedness_matrix()))


# ---------------------------------------------------------------------------
# value-level loss surfaces (thin wrappers over the builders)


def _scalar(node):
    return float(ad.Graph(node).evaluate({}))


def concordance(x, y):
    """Concordance correlation of two equal-length sequences.

    Returns exactly 0.0 whenever either sequence is constant: with a
    constant input the covariance vanishes, and if both are constant
    with equal values the denominator does too (the 0-by-convention
    case, flagged by metrics-side reports).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two equal-length sequences with >= 2 points")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    return _scalar(ccc_node(ad.constant(x), ad.constant(y)))


def va_concordance_loss(va_pred, va_label):
    """1 - 0.5*(ccc_arousal + ccc_valence) across the batch."""
    va_pred = np.asarray(va_pred, dtype=np.float64)
    va_label = np.asarray(va_label, dtype=np.float64)
    if va_pred.shape != va_label.shape or va_pred.ndim != 2 or va_pred.shape[1] != 2:
        raise ValueError("expected (batch, 2) arrays")
    if va_pred.shape[0] < 2:
        raise ValueError("need at least 2 labeled samples")
    w = np.ones((va_pred.shape[0], 1))
    return _scalar(weighted_va_ccc_loss_node(ad.constant(va_pred), ad.constant(va_label), w))


def expression_loss(expr_probs, labels):
    """Mean categorical cross entropy -log p[label] with the usual floor."""
    expr_probs = np.asarray(expr_probs, dtype=np.float64)
    labels = np.asarray(labels)
    onehot = np.zeros_like(expr_probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    return _scalar(cross_entropy_node(ad.constant(expr_probs), onehot))


def au_detection_loss(au_probs, au_labels):
    """Mean binary cross entropy over all samples and all 17 AUs."""
    au_probs = np.asarray(au_probs, dtype=np.float64)
    au_labels = np.asarray(au_labels, dtype=np.float64)
    w = np.ones((au_probs.shape[0], 1))
    return _scalar(binary_cross_entropy_node(ad.constant(au_probs), au_labels, w))


def coupling_loss(au_probs, au_targets, two_term=False):
    """Value of the soft-target coupling loss for given activations and
    targets; batch inputs are averaged, single vectors summed."""
    return _scalar(
        coupling_node(
            ad.constant(np.asarray(au_probs, dtype=np.float64)),
            ad.constant(np.asarray(au_targets, dtype=np.float64)),
            two_term=two_term,
        )
    )


# ---------------------------------------------------------------------------
# batched multi-task loss


@dataclass
class FrameBatch:
    """Dense arrays for one batch of frame samples with label masks."""

    features: np.ndarray  # (n, d_in)
    va: np.ndarray  # (n, 2), zeros where unlabeled
    va_mask: np.ndarray  # (n,) bool
    expr: np.ndarray  # (n,) int, -1 where unlabeled
    expr_mask: np.ndarray  # (n,) bool
    au: np.ndarray  # (n, 17), zeros where unlabeled
    au_mask: np.ndarray  # (n,) bool

    def __len__(self):
        return self.features.shape[0]


@dataclass
class HeadLoss:
    total: float
    terms: dict
    absent: tuple

    def __post_init__(self):
        self.terms = {k: float(v) for k, v in self.terms.items()}


TERM_NAMES = ("ccc", "cce", "bce", "coupling")


def head_loss_graph(config, batch):
    """Build the full multi-task objective for one batch.

    Returns (Graph, term_nodes, absent) where term_nodes maps present
    term names to their scalar nodes and `absent` lists skipped terms.
    `batch` contents become constants, so the graph is specific to this
    batch; parameters are the only leaves.
    """
    feats = ad.constant(batch.features)
    out, params = head_nodes(config, feats)
    term_nodes = {}
    absent = []

    if int(batch.va_mask.sum()) >= 2:
        term_nodes["ccc"] = weighted_va_ccc_loss_node(
            out.va, ad.constant(batch.va), batch.va_mask.astype(np.float64)
        )
    else:
        absent.append("ccc")

    if batch.expr_mask.any():
        onehot = np.zeros((len(batch), N_EXPRESSIONS))
        rows = np.flatnonzero(batch.expr_mask)
        onehot[rows, batch.expr[rows]] = 1.0
        term_nodes["cce"] = cross_entropy_node(out.expr, onehot)
    else:
        absent.append("cce")

    if batch.au_mask.any():
        term_nodes["bce"] = binary_cross_entropy_node(
            out.au, batch.au, batch.au_mask.astype(np.float64)
        )
    else:
        absent.append("bce")

    # coupling reads predictions only, so it is never absent
    term_nodes["coupling"] = coupling_node(
        out.au, pseudo_au_node(out.expr), two_term=config.two_term_coupling
    )

    total = None
    for name in TERM_NAMES:
        node = term_nodes.get(name)
        if node is not None:
            total = node if total is None else ad.add(total, node)
    extra = [ad.param(n, s) for n, s in config.param_shapes().items()]
    return ad.Graph(total, extra_params=extra), term_nodes, tuple(absent)


def head_loss(batch, params, config):
    """Total multi-task loss with per-term breakdown for one batch."""
    graph, term_nodes, absent = head_loss_graph(config, batch)
    total = float(graph.evaluate(params))
    terms = {name: 0.0 for name in TERM_NAMES}
    for name, node in term_nodes.items():
        terms[name] = float(graph.cached_value(node))
    return HeadLoss(total=total, terms=terms, absent=absent)


def head_train_step(batch, params, opt_state, lr, config):
    """One Adam step on the multi-task loss; returns (params, state, loss)."""
    from .optim import adam_step

    graph, term_nodes, absent = head_loss_graph(config, batch)
    total = float(graph.evaluate(params))
    if not np.isfinite(total):
        raise ad.GraphError("non-finite loss")
    grads = graph.backward()
    terms = {name: 0.0 for name in TERM_NAMES}
    for name, node in term_nodes.items():
        terms[name] = float(graph.cached_value(node))
    new_params, new_state = adam_step(params, grads, opt_state, lr)
    return new_params, new_state, HeadLoss(total=total, terms=terms, absent=absent)
