"""The three learnable models: a listwise-input contextual ranker, a
pointwise-input ranker, and a per-position propensity table.

Both rankers expand the 14 raw features to 64 dimensions with a linear layer
and score with an ELU MLP over hidden sizes [32, 16, 8]; the listwise ranker
additionally mixes the expanded rows with a set encoder before scoring, so a
document's score may depend on its list companions but never on its position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .data import FEATURE_DIM, FeatureStats, atomic_write_text

MODEL_DIM = 64
HEAD_DIMS = (MODEL_DIM, 32, 16, 8, 1)
PROPENSITY_POSITIONS = 10

CHECKPOINT_MAGIC = "# ultrlab-checkpoint v1"


class CheckpointError(ValueError):
    pass


def _score_input(features, ndim_hint):
    x = features if isinstance(features, ad.Tensor) else ad.tensor(features)
    if x.shape[-1] != FEATURE_DIM:
        raise ad.ShapeMismatchError(
            f"score: feature dimension must be {FEATURE_DIM}, got {x.shape[-1]}"
        )
    if x.values.ndim not in ndim_hint:
        raise ad.ShapeMismatchError(f"score: unsupported input rank {x.values.ndim}")
    return x


class PointwiseRanker:
    """Scores each document from its own features alone."""

    def __init__(self, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.proj = nn.Linear(FEATURE_DIM, MODEL_DIM, rng, "proj")
        self.head = nn.MLP(HEAD_DIMS, rng, "head")

    def score(self, features):
        """(14,) -> scalar, (n, 14) -> (n,), (batch, n, 14) -> (batch, n)."""
        x = _score_input(features, (1, 2, 3))
        lead = x.shape[:-1]
        flat = ad.reshape(x, (-1, FEATURE_DIM)) if x.values.ndim != 2 else x
        scores = self.head(self.proj(flat))
        return ad.reshape(scores, lead)

    def parameters(self):
        return self.proj.parameters() + self.head.parameters()


class ListwiseRanker:
    """Scores every document of a list jointly through a set encoder.

    Permutation-equivariant: reordering the input rows reorders the scores
    identically, because nothing in the model sees positions.
    """

    def __init__(self, rng=None, encoder_layers=2, encoder_heads=4):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.encoder_layers = encoder_layers
        self.encoder_heads = encoder_heads
        self.proj = nn.Linear(FEATURE_DIM, MODEL_DIM, rng, "proj")
        self.encoder = nn.TransformerEncoder(MODEL_DIM, encoder_layers, encoder_heads, rng, "encoder")
        self.head = nn.MLP(HEAD_DIMS, rng, "head")

    def score(self, features):
        """(n, 14) -> (n,), (batch, n, 14) -> (batch, n)."""
        x = _score_input(features, (2, 3))
        lead = x.shape[:-1]
        mixed = self.encoder(self.proj(x))
        return ad.reshape(self.head(mixed), lead)

    def parameters(self):
        return self.proj.parameters() + self.encoder.parameters() + self.head.parameters()


@dataclass
class PropensityVector:
    scores: np.ndarray  # positive examination scores g(1..10)
    normalized: np.ndarray  # g(i) / g(1); first entry is exactly 1


class PropensityModel:
    """One learnable logit per display position; softplus keeps the
    examination score strictly positive so inverse weights stay finite."""

    def __init__(self, positions=PROPENSITY_POSITIONS):
        self.positions = positions
        self.logits = ad.tensor(np.zeros(positions), requires_grad=True)

    def scores(self):
        """Differentiable positive examination scores, one per position."""
        return ad.softplus(self.logits)

    def propensity(self):
        g = self.scores().values
        return PropensityVector(scores=g.copy(), normalized=g / g[0])

    def parameters(self):
        return [("position_logits", self.logits)]


def parameter_count(model):
    return sum(p.values.size for _, p in model.parameters())


def state_dict(model):
    return {name: p.values.copy() for name, p in model.parameters()}


def load_state(model, arrays):
    """Install named arrays into a model; any missing/extra/ill-shaped entry
    is rejected."""
    params = dict(model.parameters())
    if set(params) != set(arrays):
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        raise CheckpointError(f"parameter names mismatch (missing {missing}, unexpected {extra})")
    for name, p in params.items():
        incoming = np.asarray(arrays[name], dtype=np.float64)
        if incoming.shape != p.values.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {incoming.shape} vs model {p.values.shape}"
            )
    for name, p in params.items():
        p.values = np.array(arrays[name], dtype=np.float64)
        p.grad = None


def save_checkpoint(path, arrays, meta):
    """Versioned text checkpoint: named float64 arrays plus string metadata.
    Written atomically (temp file + rename)."""
    lines = [CHECKPOINT_MAGIC]
    for key in sorted(meta):
        lines.append(f"meta {key} {meta[key]}")
    for name in arrays:
        arr = np.asarray(arrays[name], dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"array {name} {dims}")
        lines.append(" ".join(repr(float(v)) for v in arr.reshape(-1)))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a recognized checkpoint (bad magic line)")
    meta = {}
    arrays = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        if line.startswith("meta "):
            _, key, value = line.split(" ", 2)
            meta[key] = value
            i += 1
        elif line.startswith("array "):
            parts = line.split()
            name = parts[1]
            shape = tuple(int(d) for d in parts[2:])
            if i + 1 >= len(lines):
                raise CheckpointError(f"{path}: truncated array {name}")
            flat = np.array([float(tok) for tok in lines[i + 1].split()])
            expected = int(np.prod(shape)) if shape else 1
            if flat.size != expected:
                raise CheckpointError(
                    f"{path}: array {name} has {flat.size} values, shape {shape} needs {expected}"
                )
            arrays[name] = flat.reshape(shape)
            i += 2
        else:
            raise CheckpointError(f"{path}: unrecognized line {line!r}")
    return arrays, meta


def save_model(path, model, meta, feature_stats=None):
    arrays = state_dict(model)
    if feature_stats is not None:
        arrays["__feature_mean__"] = feature_stats.mean
        arrays["__feature_std__"] = feature_stats.std
    save_checkpoint(path, arrays, meta)


def load_model(path):
    """Rebuild the model recorded in a checkpoint; returns
    (model, meta, FeatureStats or None)."""
    arrays, meta = load_checkpoint(path)
    stats = None
    if "__feature_mean__" in arrays:
        stats = FeatureStats(arrays.pop("__feature_mean__"), arrays.pop("__feature_std__"))
    kind = meta.get("kind")
    if kind == "pointwise":
        model = PointwiseRanker()
    elif kind == "listwise":
        model = ListwiseRanker(
            encoder_layers=int(meta["encoder_layers"]),
            encoder_heads=int(meta["encoder_heads"]),
        )
    elif kind == "propensity":
        model = PropensityModel()
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    load_state(model, arrays)
    return model, meta, stats
