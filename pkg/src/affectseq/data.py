"""Deterministic synthetic corpora, padding, file storage, and splits.

Two dataset families substitute for the unavailable real corpora:

  * frame datasets: per-frame descriptors with partially-annotated
    valence-arousal / expression / action-unit labels, for training the
    multi-task head;
  * video datasets: padded variable-length sequences of affect features
    with one 7-dim intensity label per video, for the aggregator.

Video labels are functions of the un-padded prefix only, and padding is
either exact zeros or pure noise, so masking ablations measure a real
signal. Every generator is reproducible byte-for-byte from its seed:
each sample draws from its own spawned child stream.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .affect_space import (
    AU_IDS,
    AU_SLICE,
    EXPR_SLICE,
    EXPRESSIONS,
    FEATURE_DIM,
    INTENSITY_CLASSES,
    REPRESENTATION_SUBSETS,
    VA_SLICE,
    au_index,
    expression_index,
    relatedness_matrix,
)
from .affect_head import FrameBatch

SCHEMA_VERSION = "1"

# Rough circumplex coordinates driving the expression mixture.
VA_PROTOTYPES = {
    "anger": (-0.7, 0.7),
    "disgust": (-0.6, 0.35),
    "fear": (-0.6, 0.8),
    "happiness": (0.8, 0.5),
    "sadness": (-0.7, -0.5),
    "surprise": (0.4, 0.85),
    "neutral": (0.0, 0.0),
}

_PROTO = np.array([VA_PROTOTYPES[e] for e in EXPRESSIONS])


class DatasetError(Exception):
    """Malformed record, invariant violation, or bad generation request."""


@dataclass
class FrameSample:
    id: str
    features: np.ndarray  # (d_in,)
    va: np.ndarray | None = None  # (2,)
    expr: int | None = None
    au: np.ndarray | None = None  # (17,) binary


@dataclass
class VideoSample:
    id: str
    frames: np.ndarray  # (t, d)
    length: int
    label: np.ndarray  # (7,)


@dataclass(frozen=True)
class FrameRecipe:
    d_in: int = 64
    noise: float = 0.1
    # fractions of samples carrying each annotation pattern
    label_mix: tuple = (("all", 1.0),)
    temperature: float = 0.3


@dataclass(frozen=True)
class VideoRecipe:
    l_min: int = 8
    l_max: int = 32
    smoothness: float = 0.85
    drive: float = 0.3
    temperature: float = 0.4
    mix_noise: float = 0.5
    feature_noise: float = 0.05
    au_noise: float = 0.12
    padding: str = "zeros"  # "zeros" | "noise"
    feature_kind: str = "affect"  # "affect" | "descriptor"
    d_in: int = 64  # descriptor width when feature_kind == "descriptor"


@dataclass
class DatasetManifest:
    kind: str  # "frames" | "videos"
    seed: int
    n: int
    d: int
    recipe: dict
    t: int | None = None
    schema_version: str = SCHEMA_VERSION

    def to_dict(self):
        base = {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "seed": self.seed,
            "n": self.n,
            "d": self.d,
            "t": self.t,
            "recipe": self.recipe,
            "expression_order": list(EXPRESSIONS),
            "au_ids": list(AU_IDS),
        }
        if self.kind == "videos":
            base["label_order"] = list(INTENSITY_CLASSES)
        return base

    @classmethod
    def from_dict(cls, blob):
        if blob.get("schema_version") != SCHEMA_VERSION:
            raise DatasetError(f"unsupported manifest schema {blob.get('schema_version')!r}")
        return cls(
            kind=blob["kind"],
            seed=blob["seed"],
            n=blob["n"],
            d=blob["d"],
            recipe=blob["recipe"],
            t=blob.get("t"),
        )


def distribute(n, fractions):
    """Split n into integer counts: floor each share, then hand out the
    remainder by largest fractional part (ties to the earlier entry)."""
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _descriptor_lift(seed, d_in):
    # fixed per-dataset linear map from affect space to descriptor space
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x11F7]))
    return rng.normal(size=(FEATURE_DIM, d_in)) / np.sqrt(FEATURE_DIM)


def _mixture_logits(va, temperature):
    d2 = ((np.asarray(va)[..., None, :] - _PROTO) ** 2).sum(axis=-1)
    return -d2 / temperature


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gen_frame_dataset(seed, n, recipe):
    """Frame samples with configurable partial annotation; deterministic."""
    if n < 1:
        raise DatasetError("n must be >= 1")
    kinds = []
    names = [name for name, _ in recipe.label_mix]
    for name, count in zip(names, distribute(n, [f for _, f in recipe.label_mix])):
        kinds.extend([name] * count)
    kinds = [kinds[i] for i in np.random.default_rng(
        np.random.SeedSequence([int(seed), 0x31A0])).permutation(n)]

    lift = _descriptor_lift(seed, recipe.d_in)
    m = relatedness_matrix()
    samples = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        va = rng.uniform(-0.9, 0.9, size=2)
        weights = _softmax(
            _mixture_logits(va, recipe.temperature)
            + recipe.noise * rng.normal(size=len(EXPRESSIONS))
        )
        expr = int(np.argmax(weights))
        base_au = m[expr]
        au_obs = np.clip(base_au + recipe.noise * rng.normal(size=len(AU_IDS)), 0.0, 1.0)
        va_obs = np.clip(va + recipe.noise * 0.2 * rng.normal(size=2), -1.0, 1.0)
        affect = np.concatenate([va_obs, weights, au_obs])
        features = affect @ lift + recipe.noise * 0.1 * rng.normal(size=recipe.d_in)
        au_label = (
            np.clip(base_au + recipe.noise * rng.normal(size=len(AU_IDS)), 0.0, 1.0) > 0.5
        ).astype(np.float64)
        kind = kinds[i]
        samples.append(
            FrameSample(
                id=f"frame-{i:05d}",
                features=features,
                va=va_obs if kind in ("va", "all") else None,
                expr=expr if kind in ("expr", "all") else None,
                au=au_label if kind in ("au", "all") else None,
            )
        )
    manifest = DatasetManifest(
        kind="frames", seed=int(seed), n=n, d=recipe.d_in, recipe=asdict(recipe)
    )
    return samples, manifest


def video_label(frames, length):
    """Intensity label from the un-padded prefix of a 26-dim affect clip.

    Each output reads a different part of the representation (means over
    the prefix): two from valence-arousal, two from expression mass, two
    from action-unit activity, one mixed, so every channel carries
    information the others cannot fully replace.
    """
    prefix = np.asarray(frames, dtype=np.float64)[: int(length)]
    v, a = prefix[:, VA_SLICE].mean(axis=0)
    e = prefix[:, EXPR_SLICE].mean(axis=0)
    au = prefix[:, AU_SLICE].mean(axis=0)

    def ex(name):
        return e[expression_index(name)]

    def av(*ids):
        return float(np.mean([au[au_index(i)] for i in ids]))

    vals = [
        0.5 + 0.55 * v - 0.25 * a,
        0.1 + 2.2 * ex("happiness"),
        0.5 + 0.55 * a - 0.25 * v,
        0.1 + 2.2 * ex("disgust"),
        1.4 * av(4, 11, 15) - 0.05,
        0.9 * ex("fear") + 0.8 * au[au_index(20)] + 0.25 * a,
        1.3 * av(1, 2, 5, 26) - 0.1,
    ]
    # smooth squash into (0, 1): a hard clip would flatten label columns
    # at the bounds and kill their variance inside small batches
    return 1.0 / (1.0 + np.exp(-4.0 * (np.asarray(vals) - 0.5)))


def _affect_trajectory(rng, length, recipe):
    va = np.empty((length, 2))
    x = rng.uniform(-0.8, 0.8, size=2)
    for k in range(length):
        x = np.clip(
            recipe.smoothness * x + recipe.drive * rng.normal(size=2), -1.0, 1.0
        )
        va[k] = x
    va_obs = np.clip(va + recipe.feature_noise * rng.normal(size=(length, 2)), -1.0, 1.0)
    weights = _softmax(
        _mixture_logits(va, recipe.temperature)
        + recipe.mix_noise * rng.normal(size=(length, len(EXPRESSIONS)))
    )
    au = np.clip(
        weights @ relatedness_matrix()
        + recipe.au_noise * rng.normal(size=(length, len(AU_IDS))),
        0.0,
        1.0,
    )
    return np.concatenate([va_obs, weights, au], axis=1)


def _noise_affect_rows(rng, k, recipe):
    # padding noise is a decoy trajectory: statistically shaped like real
    # content but independent of the label, so a model that consumes
    # padded positions is genuinely misled rather than just averaging
    # over white noise
    return _affect_trajectory(rng, k, recipe)


def pad_sequence(frames, t):
    """Append zero rows up to length t; returns (padded, recorded length).

    Truncation is deliberately not offered: longer-than-t input is an
    error, as is an empty clip.
    """
    frames = np.asarray(frames, dtype=np.float64)
    length = frames.shape[0]
    if length == 0:
        raise DatasetError("empty clip (length 0) is invalid")
    if length > t:
        raise DatasetError(f"clip length {length} exceeds t={t}; truncation unsupported")
    padded = np.zeros((t, frames.shape[1]))
    padded[:length] = frames
    return padded, length


def gen_video_dataset(seed, n, recipe, t):
    """Padded variable-length videos with weak (video-level) labels."""
    if n < 1:
        raise DatasetError("n must be >= 1")
    if not 1 <= recipe.l_min <= recipe.l_max:
        raise DatasetError(f"bad length range [{recipe.l_min}, {recipe.l_max}]")
    if recipe.l_max > t:
        raise DatasetError(f"l_max {recipe.l_max} exceeds t={t}")
    if recipe.padding not in ("zeros", "noise"):
        raise DatasetError(f"unknown padding mode {recipe.padding!r}")
    if recipe.feature_kind not in ("affect", "descriptor"):
        raise DatasetError(f"unknown feature kind {recipe.feature_kind!r}")

    lift = _descriptor_lift(seed, recipe.d_in)
    samples = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        length = int(rng.integers(recipe.l_min, recipe.l_max + 1))
        affect = _affect_trajectory(rng, length, recipe)
        label = video_label(affect, length)
        padded, _ = pad_sequence(affect, t)
        if recipe.padding == "noise" and length < t:
            padded[length:] = _noise_affect_rows(rng, t - length, recipe)
        if recipe.feature_kind == "descriptor":
            emitted = padded @ lift
            emitted[:length] += recipe.feature_noise * 0.1 * rng.normal(
                size=(length, recipe.d_in)
            )
        else:
            emitted = padded
        samples.append(
            VideoSample(id=f"video-{i:05d}", frames=emitted, length=length, label=label)
        )
    d = recipe.d_in if recipe.feature_kind == "descriptor" else FEATURE_DIM
    manifest = DatasetManifest(
        kind="videos", seed=int(seed), n=n, d=d, t=t, recipe=asdict(recipe)
    )
    return samples, manifest


# ---------------------------------------------------------------------------
# storage: one JSON record per line, manifest beside the data file


def manifest_path(data_path):
    return Path(f"{data_path}.manifest.json")


def save_dataset(path, samples, manifest):
    path = Path(path)
    lines = []
    if manifest.kind == "frames":
        for s in samples:
            lines.append(json.dumps({
                "id": s.id,
                "features": np.asarray(s.features).tolist(),
                "labels": {
                    "va": None if s.va is None else np.asarray(s.va).tolist(),
                    "expr": None if s.expr is None else int(s.expr),
                    "au": None if s.au is None else np.asarray(s.au).tolist(),
                },
            }, sort_keys=True))
    elif manifest.kind == "videos":
        for s in samples:
            lines.append(json.dumps({
                "id": s.id,
                "frames": np.asarray(s.frames).tolist(),
                "length": int(s.length),
                "label": np.asarray(s.label).tolist(),
            }, sort_keys=True))
    else:
        raise DatasetError(f"unknown dataset kind {manifest.kind!r}")
    path.write_text("\n".join(lines) + "\n")
    manifest_path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def _check(cond, lineno, message):
    if not cond:
        raise DatasetError(f"line {lineno}: {message}")


def _validate_affect_rows(rows, lineno):
    va = rows[:, VA_SLICE]
    expr = rows[:, EXPR_SLICE]
    au = rows[:, AU_SLICE]
    _check(np.all(np.abs(va) <= 1.0 + 1e-12), lineno, "va block outside [-1, 1]")
    _check(np.all(expr >= -1e-12), lineno, "expr block has negative mass")
    sums = expr.sum(axis=1)
    _check(
        np.all(np.abs(sums - 1.0) <= 1e-6),
        lineno,
        f"expr block does not sum to 1 (got {sums[np.argmax(np.abs(sums - 1.0))]:.6g})",
    )
    _check(np.all((au >= -1e-12) & (au <= 1.0 + 1e-12)), lineno, "au block outside [0, 1]")


def load_dataset(path):
    """Read a dataset and its manifest, validating every record invariant.

    Raises DatasetError naming the line number and offending field.
    """
    path = Path(path)
    mpath = manifest_path(path)
    if not mpath.exists():
        raise DatasetError(f"missing manifest {mpath}")
    manifest = DatasetManifest.from_dict(json.loads(mpath.read_text()))
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"line {lineno}: malformed record ({e.msg})") from None
            if manifest.kind == "frames":
                samples.append(_parse_frame(rec, manifest, lineno))
            else:
                samples.append(_parse_video(rec, manifest, lineno))
    return samples, manifest


def _parse_frame(rec, manifest, lineno):
    features = np.asarray(rec["features"], dtype=np.float64)
    _check(features.shape == (manifest.d,), lineno, f"features shape {features.shape}")
    labels = rec["labels"]
    va = labels.get("va")
    expr = labels.get("expr")
    au = labels.get("au")
    _check(
        va is not None or expr is not None or au is not None,
        lineno,
        "sample carries no labels",
    )
    if va is not None:
        va = np.asarray(va, dtype=np.float64)
        _check(va.shape == (2,) and np.all(np.abs(va) <= 1.0), lineno, "bad va label")
    if expr is not None:
        _check(0 <= int(expr) < len(EXPRESSIONS), lineno, "bad expr label")
        expr = int(expr)
    if au is not None:
        au = np.asarray(au, dtype=np.float64)
        _check(
            au.shape == (len(AU_IDS),) and set(np.unique(au)) <= {0.0, 1.0},
            lineno,
            "bad au label (need a binary 17-vector)",
        )
    return FrameSample(id=rec["id"], features=features, va=va, expr=expr, au=au)


def _parse_video(rec, manifest, lineno):
    frames = np.asarray(rec["frames"], dtype=np.float64)
    length = int(rec["length"])
    label = np.asarray(rec["label"], dtype=np.float64)
    _check(frames.shape == (manifest.t, manifest.d), lineno, f"frames shape {frames.shape}")
    _check(1 <= length <= manifest.t, lineno, f"length {length} outside [1, {manifest.t}]")
    _check(
        label.shape == (len(INTENSITY_CLASSES),) and np.all((label >= 0) & (label <= 1)),
        lineno,
        "bad intensity label",
    )
    recipe = manifest.recipe
    if recipe.get("padding", "zeros") == "zeros" and length < manifest.t:
        _check(np.all(frames[length:] == 0.0), lineno, "padded rows are not zero")
    if recipe.get("feature_kind", "affect") == "affect":
        _validate_affect_rows(frames[:length], lineno)
    return VideoSample(id=rec["id"], frames=frames, length=length, label=label)


# ---------------------------------------------------------------------------
# splitting and batch assembly


def split(samples, fractions, seed):
    """Deterministic shuffle-then-cut into train/val/test; disjoint and
    exhaustive by construction."""
    if len(fractions) != 3:
        raise DatasetError("need exactly 3 fractions (train, val, test)")
    counts = distribute(len(samples), fractions)
    perm = np.random.default_rng(seed).permutation(len(samples))
    shuffled = [samples[i] for i in perm]
    train = shuffled[: counts[0]]
    val = shuffled[counts[0]: counts[0] + counts[1]]
    test = shuffled[counts[0] + counts[1]:]
    return {"train": train, "val": val, "test": test}


def frame_batch(samples):
    n = len(samples)
    d = samples[0].features.shape[0]
    batch = FrameBatch(
        features=np.zeros((n, d)),
        va=np.zeros((n, 2)),
        va_mask=np.zeros(n, dtype=bool),
        expr=np.full(n, -1, dtype=int),
        expr_mask=np.zeros(n, dtype=bool),
        au=np.zeros((n, len(AU_IDS))),
        au_mask=np.zeros(n, dtype=bool),
    )
    for i, s in enumerate(samples):
        batch.features[i] = s.features
        if s.va is not None:
            batch.va[i] = s.va
            batch.va_mask[i] = True
        if s.expr is not None:
            batch.expr[i] = s.expr
            batch.expr_mask[i] = True
        if s.au is not None:
            batch.au[i] = s.au
            batch.au_mask[i] = True
    return batch


def video_arrays(samples):
    frames = np.asarray([s.frames for s in samples], dtype=np.float64)
    lengths = np.asarray([s.length for s in samples], dtype=int)
    labels = np.asarray([s.label for s in samples], dtype=np.float64)
    return frames, lengths, labels


def select_columns(samples, subset):
    """Project video frames onto a named representation subset."""
    if subset not in REPRESENTATION_SUBSETS:
        raise DatasetError(f"unknown representation subset {subset!r}")
    cols = list(REPRESENTATION_SUBSETS[subset])
    return [
        VideoSample(id=s.id, frames=s.frames[:, cols], length=s.length, label=s.label)
        for s in samples
    ]
