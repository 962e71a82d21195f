"""Training procedures: naive click fitting, fixed-weight IPW, the dual
learning scheme (pointwise or listwise ranker), and the distillation
variants that add a pointwise student.

Per step, a batch of equal-length sessions is drawn with replacement, every
active model computes its loss on the whole batch at once, one backward pass
distributes gradients (the parameter sets are disjoint), and each model's
AdamW instance steps. Weighting terms and distillation targets are always
detached, so the teacher's trajectory is bit-identical whether or not a
student is attached.

The propensity side feeds log(g) into its softmax loss, with g the softplus
examination scores. softmax(log g) = g / sum(g), so the quantity the loss
calibrates is exactly the score vector whose ratios g(i)/g(1) are reported,
regardless of overall scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import TRAIN_LIST_LEN, load_vector
from .losses import (
    inverse_weights,
    loss_distill,
    loss_ipw,
    loss_irw,
    loss_listwise_softmax,
    np_softmax,
)
from .models import ListwiseRanker, PointwiseRanker, PropensityModel
from .optim import AdamW

METHODS = ("naive", "ipw", "dla", "cdla", "cdla_ld", "c_dla_ld")

# Which trained model scores documents at evaluation time.
EVAL_MODEL = {
    "naive": "pointwise",
    "ipw": "pointwise",
    "dla": "pointwise",
    "cdla": "listwise",
    "cdla_ld": "pointwise",
    "c_dla_ld": "pointwise",
}

# Deterministic, purpose-separated RNG streams: adding or removing one model
# never shifts another model's initialization or the batch order.
_STREAM_BATCH = 0
_STREAM_POINTWISE = 1
_STREAM_LISTWISE = 2
_STREAM_STUDENT = 4


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    method: str
    batch_size: int = 30
    steps: int = 2000
    learning_rate: float = 2e-5
    weight_clip_max: float = 10.0
    seed: int = 0
    encoder_layers: int = 2
    encoder_heads: int = 4
    ipw_propensity_path: str | None = None
    log_every: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise TrainingError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.weight_clip_max < 1.0:
            raise TrainingError("weight_clip_max must be >= 1")
        if self.steps < 1:
            raise TrainingError("steps must be >= 1")
        if self.method == "ipw" and not self.ipw_propensity_path:
            raise TrainingError("ipw needs ipw_propensity_path (externally estimated propensities)")


@dataclass
class LossReport:
    name: str
    value: float
    step: int


@dataclass
class TrainResult:
    method: str
    models: dict
    loss_curves: list[LossReport] = field(default_factory=list)

    @property
    def eval_model(self):
        return self.models[EVAL_MODEL[self.method]]


def _stream(seed, stream):
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def _build_models(config):
    models = {}
    if config.method in ("naive", "ipw", "dla"):
        models["pointwise"] = PointwiseRanker(_stream(config.seed, _STREAM_POINTWISE))
    if config.method in ("cdla", "cdla_ld", "c_dla_ld"):
        models["listwise"] = ListwiseRanker(
            _stream(config.seed, _STREAM_LISTWISE),
            encoder_layers=config.encoder_layers,
            encoder_heads=config.encoder_heads,
        )
    if config.method in ("dla", "cdla", "cdla_ld", "c_dla_ld"):
        models["propensity"] = PropensityModel()
    if config.method in ("cdla_ld", "c_dla_ld"):
        models["pointwise"] = PointwiseRanker(_stream(config.seed, _STREAM_STUDENT))
    return models


def _dual_losses(ranker_scores, clicks, propensity, clip):
    """The two inverse-weighted losses of the dual scheme. ``clicks`` may be
    0/1 indicators or soft click weights; both weight vectors are detached."""
    g = propensity.scores()
    w = inverse_weights(g.values, clip)
    rank = loss_ipw(ranker_scores, clicks, w)
    v = inverse_weights(np_softmax(ranker_scores.values, axis=-1), clip)
    prop = loss_irw(ad.log(g), clicks, v)
    return rank, prop


def train(config, sessions):
    """Run one training job on filtered, normalized sessions and return the
    trained models plus sampled loss curves."""
    if not sessions:
        raise TrainingError("no training sessions (did filtering remove everything?)")
    for s in sessions:
        if s.length != TRAIN_LIST_LEN:
            raise TrainingError(
                f"session {s.query_id} has length {s.length}; training lists must "
                f"be exactly {TRAIN_LIST_LEN} (run filter_sessions first)"
            )

    features = np.stack([s.features for s in sessions])  # (N, 10, 14)
    clicks = np.stack([s.clicks for s in sessions]).astype(np.float64)  # (N, 10)
    n_sessions = features.shape[0]

    models = _build_models(config)
    optimizers = {
        key: AdamW(model.parameters(), lr=config.learning_rate) for key, model in models.items()
    }
    batch_rng = _stream(config.seed, _STREAM_BATCH)
    clip = config.weight_clip_max

    fixed_ipw_weights = None
    if config.method == "ipw":
        propensities = load_vector(config.ipw_propensity_path)
        if propensities.shape != (TRAIN_LIST_LEN,):
            raise TrainingError(
                f"ipw propensity file must hold {TRAIN_LIST_LEN} values, got {propensities.shape}"
            )
        fixed_ipw_weights = inverse_weights(propensities, clip)

    def step_losses(batch_features, batch_clicks):
        method = config.method
        if method == "naive":
            scores = models["pointwise"].score(batch_features)
            return {"rank": loss_listwise_softmax(scores, batch_clicks)}
        if method == "ipw":
            scores = models["pointwise"].score(batch_features)
            return {"rank": loss_ipw(scores, batch_clicks, fixed_ipw_weights)}
        if method == "dla":
            scores = models["pointwise"].score(batch_features)
            rank, prop = _dual_losses(scores, batch_clicks, models["propensity"], clip)
            return {"rank": rank, "propensity": prop}
        if method == "cdla":
            scores = models["listwise"].score(batch_features)
            rank, prop = _dual_losses(scores, batch_clicks, models["propensity"], clip)
            return {"rank": rank, "propensity": prop}
        if method == "cdla_ld":
            teacher = models["listwise"].score(batch_features)
            rank, prop = _dual_losses(teacher, batch_clicks, models["propensity"], clip)
            student = models["pointwise"].score(batch_features)
            return {"rank": rank, "propensity": prop, "distill": loss_distill(teacher, student)}
        # c_dla_ld: the listwise model fits raw clicks; its softmax becomes a
        # soft click target for an otherwise standard dual step on the student.
        teacher = models["listwise"].score(batch_features)
        teacher_fit = loss_listwise_softmax(teacher, batch_clicks)
        soft_clicks = np_softmax(teacher.values, axis=-1)
        student = models["pointwise"].score(batch_features)
        rank, prop = _dual_losses(student, soft_clicks, models["propensity"], clip)
        return {"teacher_fit": teacher_fit, "rank": rank, "propensity": prop}

    curves = []
    for step in range(1, config.steps + 1):
        idx = batch_rng.integers(0, n_sessions, size=config.batch_size)
        losses = step_losses(features[idx], clicks[idx])

        total = None
        for value in losses.values():
            total = value if total is None else ad.add(total, value)
        ad.backward(total)
        for opt in optimizers.values():
            opt.step()

        for name, value in losses.items():
            scalar = float(value.values)
            if not np.isfinite(scalar):
                raise TrainingError(f"loss {name!r} became non-finite at step {step}")
            if step == 1 or step % config.log_every == 0 or step == config.steps:
                curves.append(LossReport(name, scalar, step))

    return TrainResult(method=config.method, models=models, loss_curves=curves)
