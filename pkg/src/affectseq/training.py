"""Epoch loops for the three training stages, plus curve files.

Stages:
  * "mma":         multi-task head on frame datasets, tracked by
                   validation total loss (lower is better);
  * "mrnn-frozen": aggregator on affect-feature videos (either native
                   affect features or features produced offline by a
                   frozen head), tracked by validation mean correlation;
  * "end-to-end":  joint fine-tune of head + aggregator on descriptor
                   videos, tracked by validation mean correlation.

Everything is deterministic under a fixed seed: initialization, batch
order, and the tie-breaking of the best epoch (earlier epoch wins).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import affect_head as head
from . import aggregator as agg
from . import autodiff as ad
from . import metrics
from .data import frame_batch, video_arrays
from .optim import adam_init


@dataclass
class TrainOutcome:
    params: dict  # parameters at the best epoch
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = 0.0


def _epoch_batches(n, batch_size, rng, min_size=1):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) >= min_size:
            yield idx


def _copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def mean_correlation(preds, labels):
    return metrics.evaluate(preds, labels, "intensity").mean


def train_aggregator(train_samples, val_samples, agg_config, *, epochs, batch_size,
                     lr, loss_kind, seed, init_params=None):
    frames, lengths, labels = video_arrays(train_samples)
    params = init_params if init_params is not None else agg.init_params(agg_config, seed)
    state = adam_init(params)
    rng = np.random.default_rng(seed)
    runners = {}
    min_size = 2 if loss_kind == "pearson" else 1

    def val_metric(p):
        if len(val_samples) >= 2:
            return mean_correlation(agg.predict(val_samples, p, agg_config),
                                    np.asarray([s.label for s in val_samples]))
        return float("nan")

    best = TrainOutcome(params=_copy_params(params), best_epoch=0, best_metric=val_metric(params))
    history = []
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in _epoch_batches(len(frames), batch_size, rng, min_size):
            n = len(idx)
            if n not in runners:
                runners[n] = agg.BatchRunner(agg_config, n, loss_kind)
            params, state, value = runners[n].step(
                params, state, frames[idx], lengths[idx], labels[idx], lr
            )
            losses.append(value)
        metric = val_metric(params)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_mean_rho": metric,
        })
        if np.isnan(metric) or metric > best.best_metric:
            best = TrainOutcome(params=_copy_params(params), best_epoch=epoch, best_metric=metric)
    best.history = history
    return best


def train_head(train_samples, val_samples, head_config, *, epochs, batch_size, lr, seed,
               init_params=None):
    params = init_params if init_params is not None else head.init_head_params(head_config, seed)
    state = adam_init(params)
    rng = np.random.default_rng(seed)

    def val_loss(p):
        if val_samples:
            return head.head_loss(frame_batch(val_samples), p, head_config).total
        return float("nan")

    best = TrainOutcome(params=_copy_params(params), best_epoch=0, best_metric=val_loss(params))
    history = []
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in _epoch_batches(len(train_samples), batch_size, rng):
            batch = frame_batch([train_samples[i] for i in idx])
            params, state, loss = head.head_train_step(batch, params, state, lr, head_config)
            losses.append(loss.total)
        metric = val_loss(params)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_loss": metric,
        })
        if np.isnan(metric) or metric < best.best_metric:
            best = TrainOutcome(params=_copy_params(params), best_epoch=epoch, best_metric=metric)
    best.history = history
    return best


# ---------------------------------------------------------------------------
# frozen-feature and joint paths


def transform_videos(samples, head_params, head_config):
    """Run a frozen head over descriptor frames, emitting affect videos."""
    from .data import VideoSample

    out = []
    for s in samples:
        affect = head.head_forward(s.frames, head_params, head_config).concat()
        out.append(VideoSample(id=s.id, frames=affect, length=s.length, label=s.label))
    return out


def joint_forward(frames, length, head_params, head_config, agg_params, agg_config):
    affect = head.head_forward(frames, head_params, head_config).concat()
    return agg.video_forward(affect, length, agg_params, agg_config)


def joint_predict(samples, head_params, head_config, agg_params, agg_config):
    return agg.predict(transform_videos(samples, head_params, head_config), agg_params, agg_config)


class JointRunner:
    """Shared-parameter graph of head-per-frame plus aggregator."""

    def __init__(self, head_config, agg_config, batch_size, loss_kind):
        self.head_config = head_config
        self.agg_config = agg_config
        self.batch_size = batch_size
        head_leaves = {
            name: ad.param(name, shape) for name, shape in head_config.param_shapes().items()
        }
        xs = [
            ad.placeholder(f"x_{k}", (batch_size, head_config.d_in))
            for k in range(agg_config.t)
        ]
        affect_nodes = []
        for x in xs:
            out, _ = head.head_nodes(head_config, x, params=head_leaves)
            affect_nodes.append(ad.concat([out.va, out.expr, out.au], axis=1))
        _, _, self.u = agg.forward_nodes(agg_config, batch_size, frame_nodes=affect_nodes)
        labels = ad.placeholder("labels", (batch_size, agg_config.n_out))
        guards = None
        if loss_kind == "pearson":
            guards = (
                ad.placeholder("rho_bump", (agg_config.n_out,)),
                ad.placeholder("rho_keep", (agg_config.n_out,)),
            )
        self.graph = ad.Graph(agg.loss_node(self.u, labels, loss_kind, guard_nodes=guards))

    def step(self, params, opt_state, frames, lengths, labels, lr):
        from .optim import adam_step

        bindings = dict(params)
        for k in range(self.agg_config.t):
            bindings[f"x_{k}"] = frames[:, k, :]
        if self.agg_config.mask_enabled:
            bindings["mask"] = agg.length_mask(lengths, self.agg_config.t, self.agg_config.d_hidden)
        bindings["labels"] = labels
        bindings["rho_bump"], bindings["rho_keep"] = agg.column_guards(labels)
        value = float(self.graph.evaluate(bindings))
        if not np.isfinite(value):
            raise ad.GraphError("non-finite loss")
        grads = self.graph.backward()
        new_params, new_state = adam_step(params, grads, opt_state, lr)
        return new_params, new_state, value


def train_joint(train_samples, val_samples, head_config, agg_config, *, epochs, batch_size,
                lr, loss_kind, seed, init_head=None, init_agg=None):
    """End-to-end fine-tune; parameters of both stages in one dict."""
    params = dict(init_head if init_head is not None else head.init_head_params(head_config, seed))
    params.update(init_agg if init_agg is not None else agg.init_params(agg_config, seed + 1))
    state = adam_init(params)
    rng = np.random.default_rng(seed)
    frames, lengths, labels = video_arrays(train_samples)
    runners = {}
    min_size = 2 if loss_kind == "pearson" else 1

    def split_params(p):
        head_names = set(head_config.param_shapes())
        return (
            {k: v for k, v in p.items() if k in head_names},
            {k: v for k, v in p.items() if k not in head_names},
        )

    def val_metric(p):
        if len(val_samples) >= 2:
            hp, ap = split_params(p)
            preds = joint_predict(val_samples, hp, head_config, ap, agg_config)
            return mean_correlation(preds, np.asarray([s.label for s in val_samples]))
        return float("nan")

    best = TrainOutcome(params=_copy_params(params), best_epoch=0, best_metric=val_metric(params))
    history = []
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in _epoch_batches(len(frames), batch_size, rng, min_size):
            n = len(idx)
            if n not in runners:
                runners[n] = JointRunner(head_config, agg_config, n, loss_kind)
            params, state, value = runners[n].step(
                params, state, frames[idx], lengths[idx], labels[idx], lr
            )
            losses.append(value)
        metric = val_metric(params)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_mean_rho": metric,
        })
        if np.isnan(metric) or metric > best.best_metric:
            best = TrainOutcome(params=_copy_params(params), best_epoch=epoch, best_metric=metric)
    best.history = history
    return best


# ---------------------------------------------------------------------------
# curve files


def write_curve_csv(path, history):
    cols = []
    for row in history:
        for key in row:
            if key not in cols:
                cols.append(key)
    lines = ["schema_version,1", ",".join(cols)]
    for row in history:
        lines.append(",".join(repr(row.get(c, float("nan"))) for c in cols))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _polyline(points, x0, y0, w, h, xmin, xmax, ymin, ymax):
    span_x = (xmax - xmin) or 1.0
    span_y = (ymax - ymin) or 1.0
    coords = []
    for x, y in points:
        px = x0 + w * (x - xmin) / span_x
        py = y0 + h - h * (y - ymin) / span_y
        coords.append(f"{px:.2f},{py:.2f}")
    return " ".join(coords)


def write_curve_svg(path, history, series=("train_loss", "val_mean_rho")):
    """Minimal vector-graphic training curve: one polyline per series."""
    width, height, margin = 640, 360, 48
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#999"/>',
    ]
    xs = [row["epoch"] for row in history]
    if xs:
        for i, name in enumerate(series):
            pts = [(row["epoch"], row[name]) for row in history
                   if name in row and np.isfinite(row[name])]
            if not pts:
                continue
            ys = [p[1] for p in pts]
            line = _polyline(pts, margin, margin, plot_w, plot_h,
                             min(xs), max(xs), min(ys), max(ys))
            color = colors[i % len(colors)]
            parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            parts.append(
                f'<text x="{margin + 8}" y="{margin + 16 + 14 * i}" '
                f'fill="{color}" font-size="12">{name}</text>'
            )
    parts.append(f'<text x="{margin}" y="{height - 12}" font-size="12" fill="#333">epoch</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
