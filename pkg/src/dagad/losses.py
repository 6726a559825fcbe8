"""Instance-wise and class-wise CE/GCE losses, the complementary weight and the total objective.

Every loss accepts a :class:`ProbBatch` whose ``probs`` is either a plain
array (returns a float) or a :class:`~dagad.autodiff.Var` (returns a Var so
the caller can back-propagate).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.5
    beta: float = 0.5
    q: float = 0.7
    class_wise: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if not 0.0 < self.q <= 1.0:
            raise ConfigError(f"q must lie in (0, 1], got {self.q}")


@dataclass
class ProbBatch:
    probs: object  # m x 2 array or Var
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        p = ad.const(self.probs).value
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] != len(self.labels):
            raise ValueError(f"probs must be m x 2 matching {len(self.labels)} labels, got {p.shape}")
        if len(p) == 0:
            raise ValueError("empty batch")
        if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > 1e-6:
            raise ValueError("probability rows must lie on the simplex")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    @property
    def differentiable(self):
        return isinstance(self.probs, ad.Var)


@dataclass
class LossBreakdown:
    l_org_ca: float
    l_org_cb: float
    l_aug_cb: float
    omega: float
    total: float
    objective: ad.Var | None = field(default=None, repr=False, compare=False)

    def as_dict(self):
        return {"l_org_ca": self.l_org_ca, "l_org_cb": self.l_org_cb, "l_aug_cb": self.l_aug_cb,
                "omega": self.omega, "total": self.total}


def _instance_weights(labels):
    return np.full(len(labels), 1.0 / len(labels))


def _class_weights(labels):
    n_anm = int((labels == 1).sum())
    n_norm = len(labels) - n_anm
    if n_anm == 0 or n_norm == 0:
        raise ValueError("class-wise loss needs both anomalous and normal samples "
                         f"(got {n_anm} anomalous, {n_norm} normal)")
    return np.where(labels == 1, 1.0 / n_anm, 1.0 / n_norm)


def _true_class_prob(batch):
    return ad.clamp_min(ad.pick(ad.const(batch.probs), batch.labels), PROB_FLOOR)


def _weighted_ce(batch, weights):
    return ad.scale(ad.dot(ad.log(_true_class_prob(batch)), weights), -1.0)


def _weighted_gce(batch, weights, q):
    pq = ad.power(_true_class_prob(batch), q)
    # sum w (1 - p^q) / q  ==  (sum w - sum w p^q) / q
    return ad.add(float(weights.sum()) / q, ad.scale(ad.dot(pq, weights), -1.0 / q))


def _finish(v, batch):
    return v if batch.differentiable else float(v.value)


def ce_instance(batch):
    """Mean of ``-log p(true class)``."""
    return _finish(_weighted_ce(batch, _instance_weights(batch.labels)), batch)


def gce_instance(batch, q):
    """Mean of ``(1 - p(true class)**q) / q``."""
    _check_q(q)
    return _finish(_weighted_gce(batch, _instance_weights(batch.labels), q), batch)


def ce_classwise(batch):
    """Mean CE over anomalies plus mean CE over normals."""
    return _finish(_weighted_ce(batch, _class_weights(batch.labels)), batch)


def gce_classwise(batch, q):
    _check_q(q)
    return _finish(_weighted_gce(batch, _class_weights(batch.labels), q), batch)


def _check_q(q):
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")


def omega(ce_ca, ce_cb):
    """Complementary weight ``ce_cb / (ce_ca + ce_cb)``; 0.5 when both are zero.

    Always a plain float: no gradient flows through it.
    """
    ce_ca, ce_cb = float(_value(ce_ca)), float(_value(ce_cb))
    if ce_ca < 0 or ce_cb < 0:
        raise ValueError("CE values must be non-negative")
    denom = ce_ca + ce_cb
    if denom == 0.0:
        return 0.5
    return ce_cb / denom


def _value(x):
    return x.value if isinstance(x, ad.Var) else x


def gradient_barrier(representations):
    """Value-identical copy with the gradient path cut."""
    return ad.detach(representations)


def total_loss(probs_ca_org, probs_cb_org, probs_cb_aug, config):
    """``alpha * omega * CE(C_a) + GCE(C_b) + beta * GCE(C_b, augmented)``.

    ``probs_cb_aug`` may be None (augmentation disabled), in which case the
    augmented term is zero. The omega numerator/denominator use the same CE
    flavour (class-wise or instance-wise) as the C_a term.
    """
    if config.class_wise:
        ce, gce = ce_classwise, gce_classwise
    else:
        ce, gce = ce_instance, gce_instance
    ce_a = ce(probs_ca_org)
    ce_b = ce(ProbBatch(ad.detach(probs_cb_org.probs), probs_cb_org.labels))
    w = omega(ce_a, ce_b)
    l_ca = ad.scale(_as_var(ce_a), w)
    l_cb = _as_var(gce(probs_cb_org, config.q))
    terms = ad.add(ad.scale(l_ca, config.alpha), l_cb)
    l_aug = 0.0
    if probs_cb_aug is not None:
        aug = _as_var(gce(probs_cb_aug, config.q))
        l_aug = float(aug.value)
        if config.beta != 0.0:
            terms = ad.add(terms, ad.scale(aug, config.beta))
    return LossBreakdown(
        l_org_ca=float(l_ca.value),
        l_org_cb=float(l_cb.value),
        l_aug_cb=l_aug,
        omega=w,
        total=float(terms.value),
        objective=terms if terms.requires_grad else None,
    )


def _as_var(x):
    return x if isinstance(x, ad.Var) else ad.Var(x)
