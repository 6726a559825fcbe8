"""The two-encoder, two-head detector: forward pass, training loop, prediction, checkpoints."""
from __future__ import annotations

import io
import json
import struct
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import evaluation
from .augmentation import build_batch, draw_permutation
from .encoders import encode, glorot, init_params, propagate
from .errors import BundleError, CheckpointError, ConfigError, NumericalError
from .fsutil import atomic_write
from .graph import normalized_propagation_matrix, row_normalize
from .losses import LossConfig, ProbBatch, gradient_barrier, total_loss
from .optim import Adam

CHECKPOINT_MAGIC = b"DAGD"
CHECKPOINT_VERSION = 1


@dataclass
class MlpHeadParams:
    w1: ad.Var  # hidden x 2d
    b1: ad.Var
    w2: ad.Var  # 2 x hidden
    b2: ad.Var

    def named_tensors(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def __call__(self, x):
        hidden = ad.relu(ad.add(ad.matmul(x, _transposed(self.w1)), self.b1))
        return ad.add(ad.matmul(hidden, _transposed(self.w2)), self.b2)


def _transposed(w):
    return ad.Var(w.value.T, (w,), lambda g: (g.T,))


def init_head(in_dim, hidden, seed, out_dim=2):
    rng = np.random.default_rng([int(seed), 0x4D4C50])
    return MlpHeadParams(
        ad.param(glorot(rng, in_dim, hidden).T.copy(), "w1"),
        ad.param(np.zeros(hidden), "b1"),
        ad.param(glorot(rng, hidden, out_dim).T.copy(), "w2"),
        ad.param(np.zeros(out_dim), "b2"),
    )


@dataclass(frozen=True)
class TrainConfig:
    encoder_kind: str = "gcn"
    d: int = 64
    hidden: int = 32
    heads: int = 8
    lr: float = 0.005
    epochs: int = 200
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    disable_augmentation: bool = False
    disable_classwise: bool = False
    dropout: float = 0.0
    weight_decay: float = 0.0
    normalize_features: bool = False
    aggregator: str = "symmetric"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.encoder_kind not in ("gcn", "gat"):
            raise ConfigError(f"encoder_kind must be gcn or gat, got {self.encoder_kind!r}")
        if min(self.d, self.hidden, self.heads) < 1 or self.epochs < 1:
            raise ConfigError("dimensions and epochs must be positive")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.encoder_kind == "gat" and self.d % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d={self.d}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.aggregator not in ("symmetric", "mean"):
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))

    def effective_loss(self):
        loss = self.loss
        if self.disable_classwise:
            loss = replace(loss, class_wise=False)
        if self.disable_augmentation:
            loss = replace(loss, beta=0.0)
        return loss

    def to_dict(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "loss" in d and isinstance(d["loss"], dict):
            d["loss"] = LossConfig(**d["loss"])
        return cls(**d)


@dataclass
class DagadModel:
    encoder_a: object
    encoder_b: object
    head_a: MlpHeadParams
    head_b: MlpHeadParams
    config: TrainConfig
    num_attrs: int

    def parameters(self):
        out = {}
        for prefix, part in (("encoder_a", self.encoder_a), ("encoder_b", self.encoder_b),
                             ("head_a", self.head_a), ("head_b", self.head_b)):
            for name, var in part.named_tensors().items():
                out[f"{prefix}.{name}"] = var
        return out


@dataclass
class TrainReport:
    records: list
    metrics: dict
    wall_clock: float
    config: dict

    @property
    def omega_trace(self):
        return [r["omega"] for r in self.records]

    def to_dict(self):
        return {"records": self.records, "metrics": self.metrics,
                "wall_clock": self.wall_clock, "config": self.config}


def init_model(num_attrs, config):
    s = config.seed
    kind = config.encoder_kind
    return DagadModel(
        encoder_a=init_params(kind, num_attrs, config.d, config.heads, seed=_subseed(s, 0)),
        encoder_b=init_params(kind, num_attrs, config.d, config.heads, seed=_subseed(s, 1)),
        head_a=init_head(2 * config.d, config.hidden, seed=_subseed(s, 2)),
        head_b=init_head(2 * config.d, config.hidden, seed=_subseed(s, 3)),
        config=config,
        num_attrs=num_attrs,
    )


def _subseed(seed, k):
    return int(np.random.SeedSequence([int(seed), k]).generate_state(1)[0])


class _GraphContext:
    """Per-bundle constants reused by every epoch."""

    def __init__(self, bundle, config):
        g = bundle.graph
        x = row_normalize(g.attributes) if config.normalize_features else \
            g.attributes.astype(np.float64)
        self.graph = g
        self.features = x
        self.csr = g.closed_csr()
        self.propagated = None
        if config.encoder_kind == "gcn":
            self.propagated = propagate(x, normalized_propagation_matrix(g, config.aggregator))


def _check_dims(model, bundle):
    if bundle.graph.num_attrs != model.num_attrs:
        raise BundleError(f"model expects {model.num_attrs} attributes, bundle has "
                          f"{bundle.graph.num_attrs}")


def _encode_both(model, ctx):
    kw = dict(graph=ctx.graph, propagated=ctx.propagated, csr=ctx.csr)
    h_a = encode(model.encoder_a, ctx.features, **kw).representations
    h_b = encode(model.encoder_b, ctx.features, **kw).representations
    return h_a, h_b


def _heads(model, h_a, h_b):
    # each head sees the other encoder's output through a barrier
    logits_a = model.head_a(ad.concat(h_a, gradient_barrier(h_b)))
    logits_b = model.head_b(ad.concat(gradient_barrier(h_a), h_b))
    return ad.softmax_rows(logits_a), ad.softmax_rows(logits_b)


def forward(model, bundle, _ctx=None):
    """Full-graph pass returning ``(h_a, h_b, probs_a, probs_b)`` as arrays."""
    _check_dims(model, bundle)
    ctx = _ctx or _GraphContext(bundle, model.config)
    h_a, h_b = _encode_both(model, ctx)
    p_a, p_b = _heads(model, h_a, h_b)
    return h_a.value, h_b.value, p_a.value, p_b.value


def predict(model, bundle):
    """Labels by argmax of the second head (ties go to normal) and anomaly scores."""
    *_, probs_b = forward(model, bundle)
    return labels_from_probs(probs_b), probs_b[:, 1].copy()


def labels_from_probs(probs):
    probs = np.asarray(probs)
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def training_step(model, ctx, train_ids, y_train, loss_cfg, epoch, augment=True, dropout=0.0):
    """One forward pass over the training rows; returns the LossBreakdown (not yet back-propagated)."""
    cfg = model.config
    h_a, h_b = _encode_both(model, ctx)
    if dropout > 0.0:
        rng = np.random.default_rng([cfg.seed, 0x44524F50, epoch])
        h_a, h_b = ad.dropout(h_a, dropout, rng), ad.dropout(h_b, dropout, rng)
    h_a_tr, h_b_tr = ad.take_rows(h_a, train_ids), ad.take_rows(h_b, train_ids)
    p_a, p_b = _heads(model, h_a_tr, h_b_tr)
    aug = None
    if augment:
        plan = draw_permutation(len(train_ids), cfg.seed, epoch)
        batch = build_batch(gradient_barrier(h_a_tr), h_b_tr, y_train, plan)
        p_aug = ad.softmax_rows(model.head_b(batch.augmented))
        aug = ProbBatch(p_aug, batch.augmented_labels)
    return total_loss(ProbBatch(p_a, y_train), ProbBatch(p_b, y_train), aug, loss_cfg)


def train(bundle, config, model=None, on_epoch=None):
    """Full-batch training for ``config.epochs`` epochs.

    Returns the trained model (parameters rounded to float32 so checkpoints
    are exact) and a report with one record per epoch and test metrics.
    """
    if bundle.split is None:
        raise BundleError("bundle has no train/test split")
    t0 = time.perf_counter()
    train_ids = np.asarray(bundle.split.train_ids, dtype=np.int64)
    y_train = bundle.labels.labels[train_ids]
    if len(train_ids) == 0 or y_train.min() == y_train.max():
        raise BundleError("training set must contain both anomalous and normal nodes")
    model = model or init_model(bundle.graph.num_attrs, config)
    _check_dims(model, bundle)
    ctx = _GraphContext(bundle, config)
    loss_cfg = config.effective_loss()
    params = list(model.parameters().values())
    opt = Adam(params, lr=config.lr, betas=config.adam_betas, eps=config.adam_eps,
               weight_decay=config.weight_decay)
    records = []
    for epoch in range(config.epochs):
        opt.zero_grad()
        # overflow is detected explicitly below, so numpy's warnings add nothing
        with np.errstate(over="ignore", invalid="ignore"):
            lb = training_step(model, ctx, train_ids, y_train, loss_cfg, epoch,
                               augment=not config.disable_augmentation, dropout=config.dropout)
            if not np.isfinite(lb.total):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            lb.objective.backward()
            opt.step()
        if not all(np.isfinite(p.value).all() for p in params):
            raise NumericalError(f"parameters became non-finite at epoch {epoch}")
        rec = {"epoch": epoch, **lb.as_dict()}
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    for p in params:
        p.value = p.value.astype(np.float32).astype(np.float64)
        p.grad = None
    metrics = evaluate(model, bundle, bundle.split.test_ids)
    report = TrainReport(records, metrics, time.perf_counter() - t0, config.to_dict())
    return model, report


def evaluate(model, bundle, ids):
    """Metric report on the given node ids (only observed labels are used)."""
    ids = np.asarray(ids, dtype=np.int64)
    ids = ids[bundle.labels.observed_mask[ids]]
    pred, scores = predict(model, bundle)
    return evaluation.metric_report(pred[ids], scores[ids], bundle.labels.labels[ids])


# ---------------------------------------------------------------------------
# checkpoints
#
# "DAGD" | u16 version | u32 len + config JSON | u32 count | records
# record: u16 len + name | u8 ndim | u64 dims... | f32 LE payload

def save_checkpoint(model, path, fingerprint=None):
    params = model.parameters()
    meta = {"num_attrs": model.num_attrs, "config": model.config.to_dict()}
    if fingerprint:
        meta["fingerprint"] = fingerprint
    blob = json.dumps(meta, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<HI", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(params)))
    for name, var in params.items():
        raw = name.encode()
        arr = var.value.astype("<f4")
        buf.write(struct.pack("<HB", len(raw), arr.ndim))
        buf.write(raw)
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    atomic_write(path, buf.getvalue())


def load_checkpoint(path, expect_attrs=None):
    try:
        data = open(path, "rb").read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a DAGAD checkpoint")
    version, n_blob = struct.unpack("<HI", take(6))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        meta = json.loads(bytes(take(n_blob)))
        config = TrainConfig.from_dict(meta["config"])
        num_attrs = int(meta["num_attrs"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt config blob ({exc})") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        n_name, ndim = struct.unpack("<HB", take(3))
        name = bytes(take(n_name)).decode()
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(bytes(take(4 * size)), dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float64)
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    if expect_attrs is not None and expect_attrs != num_attrs:
        raise CheckpointError(f"checkpoint expects {num_attrs} attributes, bundle has {expect_attrs}")
    model = init_model(num_attrs, config)
    params = model.parameters()
    if set(params) != set(tensors):
        raise CheckpointError(f"{path}: tensor set mismatch")
    for name, var in params.items():
        if var.value.shape != tensors[name].shape:
            raise CheckpointError(f"{path}: {name} has shape {tensors[name].shape}, "
                                  f"expected {var.value.shape}")
        var.value = tensors[name]
    return model
