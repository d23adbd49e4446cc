"""Training objectives and the DDT-based confidence system.

Distance losses use fixed normalizations (1/2N^2 squared error for
intramolecular pairs, 1/NM smooth-L1 for intermolecular ones), the
coordinate loss is the RMSD form, and the confidence head classifies each
pair into the five attainable distance-difference-test values
{0, 25, 50, 75, 100} under the 8 Angstrom predicted-distance mask. The
total objective weights the confidence cross-entropy by 0.01.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig
from .weights import Initializer, ParamStore

DDT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
DDT_CUTOFF = 8.0
DDT_BIN_VALUES = np.array([0.0, 25.0, 50.0, 75.0, 100.0])
N_BINS = 5
CONF_WEIGHT = 0.01


@dataclass
class LossBreakdown:
    intradist: float
    interdist: float
    coord: float
    conf: float

    @property
    def dist(self) -> float:
        return self.intradist + self.interdist

    @property
    def total(self) -> float:
        return self.dist + self.coord + CONF_WEIGHT * self.conf


@dataclass
class ConfidenceReport:
    """Per-pair DDT bin probabilities and the aggregated screening scalar."""

    p_intra: np.ndarray       # (N, N, 5)
    p_inter: np.ndarray       # (N, M, 5)
    mask_intra: np.ndarray    # (N, N) bool, predicted distance < cutoff
    mask_inter: np.ndarray    # (N, M) bool
    scalar: float             # expected DDT over masked intermolecular pairs
    empty_mask: bool = False


def smooth_l1(x):
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside; scalar in, scalar out."""
    if isinstance(x, Tensor):
        return ag.smooth_l1(x)
    arr = np.asarray(x, dtype=np.float64)
    out = np.where(np.abs(arr) < 1.0, 0.5 * arr * arr, np.abs(arr) - 0.5)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def pair_masks(lig_mask: np.ndarray, poc_mask: np.ndarray):
    """Valid-pair masks; the intra diagonal is excluded (self-distances)."""
    n = lig_mask.shape[1]
    intra = lig_mask[:, :, None] * lig_mask[:, None, :] * (1.0 - np.eye(n))
    inter = lig_mask[:, :, None] * poc_mask[:, None, :]
    return intra, inter


def dist_loss(pred_intra_sym: Tensor, pred_inter: Tensor, gt_intra: np.ndarray,
              gt_inter: np.ndarray, lig_mask: np.ndarray, poc_mask: np.ndarray):
    """Batch-mean distance losses with the 1/2N^2 and 1/NM normalizations."""
    if pred_intra_sym.shape != gt_intra.shape or pred_inter.shape != gt_inter.shape:
        raise ag.ContractError(
            f"prediction/ground-truth shapes differ: {pred_intra_sym.shape} vs {gt_intra.shape}, "
            f"{pred_inter.shape} vs {gt_inter.shape}"
        )
    intra_mask, inter_mask = pair_masks(lig_mask, poc_mask)
    n_atoms = lig_mask.sum(axis=1)
    m_atoms = poc_mask.sum(axis=1)

    intra_err = ag.mul(ag.sub(pred_intra_sym, ag.constant(gt_intra)), ag.constant(intra_mask))
    per_intra = ag.tsum(ag.square(intra_err), axis=(1, 2))
    intradist = ag.tmean(ag.div(per_intra, ag.constant(2.0 * n_atoms**2)))

    inter_err = ag.mul(ag.sub(pred_inter, ag.constant(gt_inter)), ag.constant(inter_mask))
    per_inter = ag.tsum(ag.smooth_l1(inter_err), axis=(1, 2))
    interdist = ag.tmean(ag.div(per_inter, ag.constant(n_atoms * m_atoms)))
    return intradist, interdist


def coord_loss(pred: Tensor, gt: np.ndarray, lig_mask: np.ndarray) -> Tensor:
    """Batch mean of sqrt((1/N) sum_i |P_i - gt_i|^2)  (the RMSD form)."""
    if pred.shape != gt.shape:
        raise ag.ContractError(f"coordinate shapes differ: {pred.shape} vs {gt.shape}")
    err = ag.mul(ag.sub(pred, ag.constant(gt)), ag.constant(lig_mask[..., None]))
    per_sample = ag.div(
        ag.tsum(ag.square(err), axis=(1, 2)), ag.constant(lig_mask.sum(axis=1))
    )
    return ag.tmean(ag.sqrt(per_sample))


def ddt_true(d_pred: np.ndarray, d_gt: np.ndarray, thresholds=DDT_THRESHOLDS,
             cutoff: float = DDT_CUTOFF):
    """Per-pair DDT values and the predicted-distance mask.

    Each pair scores 25 points per threshold t with |pred - gt| < t; pairs
    whose predicted distance is >= cutoff are excluded from the mask.
    """
    d_pred = np.asarray(d_pred, dtype=np.float64)
    d_gt = np.asarray(d_gt, dtype=np.float64)
    if d_pred.shape != d_gt.shape:
        raise ag.ContractError(f"shape mismatch: {d_pred.shape} vs {d_gt.shape}")
    delta = np.abs(d_pred - d_gt)
    hits = sum((delta < t).astype(np.float64) for t in thresholds)
    values = 100.0 / len(thresholds) * hits
    return values, d_pred < cutoff


def ddt_bins(values: np.ndarray) -> np.ndarray:
    return np.rint(values / 25.0).astype(np.int64)


def init_confidence_params(store: ParamStore, init: Initializer, config: ModelConfig):
    width = 2 * config.d + config.H if config.conf_uses_atoms else config.H
    init.linear(store, "conf/l0", width, config.d)
    init.linear(store, "conf/l1", config.d, N_BINS)


def confidence_logits(features: Tensor, store: ParamStore,
                      features_rev: Tensor | None = None) -> Tensor:
    """5-bin logits from per-pair features via the confidence MLP.

    A pair (i, j) has two directed feature rows; when the reverse block is
    supplied its logits are averaged in, making the prediction a function
    of the unordered pair.
    """
    layers = [
        (store["conf/l0/W"], store["conf/l0/b"]),
        (store["conf/l1/W"], store["conf/l1/b"]),
    ]
    logits = ag.mlp(features, layers)
    if features_rev is not None:
        rev = ag.transpose(ag.mlp(features_rev, layers), (0, 2, 1, 3))
        logits = ag.mul(ag.add(logits, rev), 0.5)
    return logits


def cross_entropy_sum(logits: Tensor, bins: np.ndarray, mask: np.ndarray) -> Tensor:
    """-sum over masked pairs of log p(true bin)."""
    logp = ag.log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    idx = np.indices(bins.shape)
    onehot[(*idx, bins)] = 1.0
    picked = ag.tsum(ag.mul(logp, ag.constant(onehot)), axis=-1)
    return ag.mul(ag.tsum(ag.mul(picked, ag.constant(mask))), -1.0)


def conf_loss(logits_intra: Tensor, logits_inter: Tensor, ddt_intra: np.ndarray,
              ddt_inter: np.ndarray, mask_intra: np.ndarray, mask_inter: np.ndarray) -> Tensor:
    """Cross-entropy between one-hot true bins and predicted distributions,
    summed over masked intramolecular and intermolecular pairs."""
    if mask_intra.sum() + mask_inter.sum() == 0:
        warnings.warn("confidence mask is empty; conf loss contributes 0", stacklevel=2)
        return ag.constant(0.0)
    return ag.add(
        cross_entropy_sum(logits_intra, ddt_bins(ddt_intra), mask_intra),
        cross_entropy_sum(logits_inter, ddt_bins(ddt_inter), mask_inter),
    )


def confidence_report(logits_intra: np.ndarray, logits_inter: np.ndarray,
                      pred_intra: np.ndarray, pred_inter: np.ndarray,
                      valid_intra: np.ndarray, valid_inter: np.ndarray) -> ConfidenceReport:
    """Assemble per-pair bin probabilities and the 0-100 screening scalar.

    The scalar averages expected DDT over masked intermolecular pairs only;
    intramolecular pairs do not measure binding.
    """

    def probs(logits):
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    p_intra = probs(np.asarray(logits_intra))
    p_inter = probs(np.asarray(logits_inter))
    mask_intra = (pred_intra < DDT_CUTOFF) & valid_intra.astype(bool)
    mask_inter = (pred_inter < DDT_CUTOFF) & valid_inter.astype(bool)
    if mask_inter.sum() == 0:
        return ConfidenceReport(p_intra, p_inter, mask_intra, mask_inter,
                                scalar=0.0, empty_mask=True)
    expected = (p_inter * DDT_BIN_VALUES).sum(axis=-1)
    scalar = float(expected[mask_inter].mean())
    return ConfidenceReport(p_intra, p_inter, mask_intra, mask_inter, scalar=scalar)


def confidence_score(report: ConfidenceReport) -> float:
    return report.scalar


def total_loss(parts: LossBreakdown) -> float:
    """dist + coord + 0.01 conf, the phase-2 objective."""
    return parts.dist + parts.coord + CONF_WEIGHT * parts.conf
