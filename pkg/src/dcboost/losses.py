"""The discriminative objective and its hand-derived gradients.

All three terms treat target-branch features as constants; gradients are
exposed w.r.t. online-branch outputs only (z_o for the positive/negative
terms, the predictor output for the instance term). No autodiff is used.

With S_o = sum of a class's online features, S_t the target sum and
d2_ij = ||z_o_i - z_t_j||^2 = 2 - 2 z_o_i.z_t_j on unit rows, the positive
term per class collapses to w_c * (2 n_c^2 - 2 S_o.S_t), which is what the
implementation evaluates; the pair form is kept in the tests as an oracle.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClassError, ShapeError

logger = logging.getLogger(__name__)

_DEGENERATE_NORM = 1e-12


class WeightMode(enum.Enum):
    """How the class-balancing weight w_c enters the positive loss."""

    W0_OFF = "w0_off"  # w_c = 1
    W1_CONSTANT = "w1_constant"  # w_c applied, treated as constant in the gradient
    W_OURS_FLOW = "w_ours_flow"  # w_c applied, gradient flows through its z_o dependence


@dataclass(frozen=True)
class ClassGroup:
    """Members (row indices into the selected arrays) sharing one pseudo-label."""

    label: int
    members: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.members, dtype=np.int64)
        if m.size == 0:
            raise ValueError("a class group cannot be empty")
        object.__setattr__(self, "members", m)


@dataclass(frozen=True)
class Prototype:
    label: int
    v_o: np.ndarray
    v_t: np.ndarray
    # carried for the gradient: members and the pre-normalization online norm
    members: np.ndarray
    sum_norm_o: float

    def __post_init__(self):
        for v in (self.v_o, self.v_t):
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise ValueError("prototypes must be unit vectors")


@dataclass(frozen=True)
class LossGrads:
    """Gradients w.r.t. online-branch outputs: selected rows and predictor rows."""

    d_z_o: np.ndarray
    d_pred: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    l_pos: float
    l_neg: float
    l_ins: float
    total: float
    grads: LossGrads

    def __post_init__(self):
        if abs(self.total - (self.l_pos + self.l_neg + self.l_ins)) > 1e-12:
            raise ValueError("total must equal the sum of the three terms")
        if not (np.all(np.isfinite(self.grads.d_z_o)) and np.all(np.isfinite(self.grads.d_pred))):
            raise ValueError("non-finite gradient entry")


def group_by_label(labels: np.ndarray) -> list[ClassGroup]:
    """Partition row indices by label, groups ordered by ascending label."""
    labels = np.asarray(labels)
    return [ClassGroup(int(c), np.flatnonzero(labels == c)) for c in np.unique(labels)]


def drop_degenerate_groups(
    groups: list[ClassGroup], z_o: np.ndarray, z_t: np.ndarray
) -> list[ClassGroup]:
    """Remove classes whose summed features have (near-)zero norm on either branch."""
    kept = []
    for g in groups:
        no = np.linalg.norm(z_o[g.members].sum(axis=0))
        nt = np.linalg.norm(z_t[g.members].sum(axis=0))
        if no < _DEGENERATE_NORM or nt < _DEGENERATE_NORM:
            logger.warning("dropping degenerate class %d (summed norms %.2e / %.2e)", g.label, no, nt)
        else:
            kept.append(g)
    return kept


def class_weight(group: ClassGroup, z_o: np.ndarray, z_t: np.ndarray) -> float:
    """Balancing weight 1 / (||sum z_o|| * ||sum z_t||) for one class."""
    no = np.linalg.norm(z_o[group.members].sum(axis=0))
    nt = np.linalg.norm(z_t[group.members].sum(axis=0))
    if no < _DEGENERATE_NORM or nt < _DEGENERATE_NORM:
        raise DegenerateClassError(f"class {group.label}: summed norms {no:.2e} / {nt:.2e}")
    return 1.0 / (no * nt)


def positive_loss(
    z_o: np.ndarray,
    z_t: np.ndarray,
    groups: list[ClassGroup],
    mode: WeightMode,
) -> tuple[float, np.ndarray]:
    """Weighted intra-class pair distances over all ordered pairs (i=j included)."""
    if not groups:
        raise ValueError("positive_loss needs at least one class group")
    c_b = len(groups)
    value = 0.0
    grad = np.zeros_like(z_o)
    for g in groups:
        s_o = z_o[g.members].sum(axis=0)
        s_t = z_t[g.members].sum(axis=0)
        no = np.linalg.norm(s_o)
        nt = np.linalg.norm(s_t)
        if no < _DEGENERATE_NORM or nt < _DEGENERATE_NORM:
            raise DegenerateClassError(f"class {g.label}: summed norms {no:.2e} / {nt:.2e}")
        n_c = g.members.size
        w = 1.0 if mode is WeightMode.W0_OFF else 1.0 / (no * nt)
        pair_sum = 2.0 * n_c * n_c - 2.0 * float(s_o @ s_t)
        value += w * pair_sum / (2.0 * c_b)
        g_row = -w * s_t / c_b
        if mode is WeightMode.W_OURS_FLOW:
            g_row = g_row - pair_sum * w / (2.0 * c_b) * s_o / (no * no)
        grad[g.members] += g_row
    return value, grad


def compute_prototypes(
    groups: list[ClassGroup], z_o: np.ndarray, z_t: np.ndarray
) -> list[Prototype]:
    """Normalized per-class feature sums; degenerate classes are excluded with a warning."""
    protos = []
    for g in groups:
        s_o = z_o[g.members].sum(axis=0)
        s_t = z_t[g.members].sum(axis=0)
        no = np.linalg.norm(s_o)
        nt = np.linalg.norm(s_t)
        if no < _DEGENERATE_NORM or nt < _DEGENERATE_NORM:
            logger.warning("class %d excluded from prototypes (summed norms %.2e / %.2e)", g.label, no, nt)
            continue
        protos.append(Prototype(g.label, s_o / no, s_t / nt, g.members, float(no)))
    return protos


def negative_loss(prototypes: list[Prototype], n_rows: int, d: int) -> tuple[float, np.ndarray]:
    """Prototype repulsion over ordered cross-class pairs; zero with <= 1 prototype.

    The gradient flows through the online prototype's normalization back to
    every member row; target prototypes are constants.
    """
    grad = np.zeros((n_rows, d))
    if len(prototypes) <= 1:
        return 0.0, grad
    c = len(prototypes)
    v_t = np.stack([p.v_t for p in prototypes])
    t_sum = v_t.sum(axis=0)
    value = 0.0
    for i, p in enumerate(prototypes):
        others = t_sum - v_t[i]
        value += -2.0 * (c - 1) + 2.0 * float(p.v_o @ others)
        d_vo = 2.0 * others
        # Jacobian of x -> x/||x|| applied at the online sum
        d_sum = (d_vo - float(d_vo @ p.v_o) * p.v_o) / p.sum_norm_o
        grad[p.members] += d_sum
    return value, grad


def instance_loss(pred_out: np.ndarray, target_out: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared distance between predictor and target rows."""
    if pred_out.shape != target_out.shape:
        raise ShapeError(f"shape mismatch {pred_out.shape} vs {target_out.shape}")
    n = pred_out.shape[0]
    diff = pred_out - target_out
    value = float((diff * diff).sum()) / n
    return value, 2.0 * diff / n


def total_loss(
    z_o: np.ndarray,
    z_t: np.ndarray,
    pred_out: np.ndarray,
    target_out: np.ndarray,
    groups: list[ClassGroup],
    mode: WeightMode,
) -> LossBreakdown:
    """Sum of the three terms; positive/negative vanish when no class group exists."""
    if groups:
        l_pos, d_pos = positive_loss(z_o, z_t, groups, mode)
        protos = compute_prototypes(groups, z_o, z_t)
        l_neg, d_neg = negative_loss(protos, z_o.shape[0], z_o.shape[1])
        d_z_o = d_pos + d_neg
    else:
        l_pos = l_neg = 0.0
        d_z_o = np.zeros_like(z_o)
    l_ins, d_pred = instance_loss(pred_out, target_out)
    total = l_pos + l_neg + l_ins
    return LossBreakdown(l_pos, l_neg, l_ins, total, LossGrads(d_z_o, d_pred))
