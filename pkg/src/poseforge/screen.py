"""Batch virtual screening, evaluation metrics, and result plumbing.

One pocket, many ligands: featurize, encode, bind, decode, score by
confidence, optionally postprocess (energy minimization or rigid conformer
fit), and rank. Per-ligand failures are recorded, never fatal. The
evaluation side provides the 2 Angstrom success rate, rank-based ROC-AUC,
and the confidence-vs-RMSD regression summary.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import geometry
from .losses import confidence_report, confidence_score
from .model import DockingModel
from .molio import MoleculeGraph, ParseError, iter_sdf, parse_mol_block
from .structure import pose_record, pose_to_sdf

SUCCESS_RMSD = 2.0


@dataclass
class ScreenResult:
    ligand_id: str
    confidence: float
    pose_path: str = ""
    rmsd: float | None = None
    plausibility: geometry.PlausibilityReport | None = None
    wall_time: float = 0.0
    error: str = ""
    coords: np.ndarray | None = field(default=None, repr=False)

    @property
    def failed(self) -> bool:
        return bool(self.error)


def predict_batch(model: DockingModel, ligands: list, pocket: MoleculeGraph,
                  postprocess: str = "none") -> list:
    """Dock a batch of ligands against one pocket; returns ScreenResults.

    With ``end_to_end_decode`` off the gradient-descent distance-fit
    decoder produces the pose instead of the structure module.
    """
    pockets = [pocket] * len(ligands)
    with ag.no_grad():
        result = model.forward_graphs(ligands, pockets,
                                      decode=model.config.end_to_end_decode)
    if model.config.end_to_end_decode:
        coords_all = result.pose.final.data
    else:
        coords_list = model.decode_distance_fit(result, ligands, pockets)

    out = []
    for b, lig in enumerate(ligands):
        n, m = lig.n_atoms, pocket.n_atoms
        coords = (coords_all[b, :n] if model.config.end_to_end_decode
                  else coords_list[b])
        if postprocess == "em":
            coords = geometry.em_minimize(coords, lig, pocket).coords
        elif postprocess == "pcf":
            coords = geometry.pcf_correct(coords, lig)
        report = confidence_report(
            result.conf_logits_intra.data[b, :n, :n],
            result.conf_logits_inter.data[b, :n, :m],
            result.intra_sym.data[b, :n, :n],
            result.dist.inter.data[b, :n, :m],
            np.ones((n, n)) - np.eye(n),
            np.ones((n, m)),
        )
        out.append(ScreenResult(
            ligand_id=lig.name or f"ligand{b}",
            confidence=confidence_score(report),
            plausibility=geometry.plausibility_report(coords, lig, pocket),
            coords=coords,
        ))
    return out


def screen_library(pocket: MoleculeGraph, ligands: list, model: DockingModel,
                   batch_size: int = 8, postprocess: str = "none",
                   gt_coords: dict | None = None, poses_dir=None,
                   threads: int = 1) -> list:
    """Rank parsed ligands against one pocket by confidence (descending).

    ``ligands`` holds (ligand_id, MoleculeGraph-or-Exception) pairs so
    unparsable records flow through as error rows. ``gt_coords`` maps
    ligand ids to reference coordinates for RMSD columns.
    """
    if postprocess not in ("none", "em", "pcf"):
        raise ValueError(f"unknown postprocess mode {postprocess!r}")
    good, results = [], []
    for ligand_id, parsed in ligands:
        if isinstance(parsed, Exception):
            results.append(ScreenResult(ligand_id=ligand_id, confidence=-1.0,
                                        error=str(parsed)))
        else:
            good.append((ligand_id, parsed))

    batches = [good[lo:lo + batch_size] for lo in range(0, len(good), batch_size)]

    def run(chunk):
        t0 = time.perf_counter()
        rows = predict_batch(model, [g for _, g in chunk], pocket, postprocess)
        elapsed = (time.perf_counter() - t0) / max(len(chunk), 1)
        for (ligand_id, lig), row in zip(chunk, rows):
            row.ligand_id = ligand_id
            row.wall_time = elapsed
            if gt_coords and ligand_id in gt_coords:
                row.rmsd = geometry.rmsd(row.coords, gt_coords[ligand_id])
        return rows

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for rows in pool.map(run, batches):
                results.extend(rows)
    else:
        for chunk in batches:
            results.extend(run(chunk))

    results.sort(key=lambda r: (-r.confidence, r.ligand_id))
    if poses_dir is not None:
        _write_poses(results, dict(good), poses_dir)
    return results


def _write_poses(results, graphs, poses_dir):
    import os

    os.makedirs(poses_dir, exist_ok=True)
    for row in results:
        if row.failed or row.coords is None:
            continue
        lig = graphs[row.ligand_id]
        with open(os.path.join(poses_dir, f"{row.ligand_id}.sdf"), "w") as fh:
            fh.write(pose_to_sdf(lig, row.coords, name=row.ligand_id))
        with open(os.path.join(poses_dir, f"{row.ligand_id}.json"), "w") as fh:
            fh.write(pose_record(row.coords, row.confidence, row.rmsd, row.ligand_id))
        row.pose_path = os.path.join(poses_dir, f"{row.ligand_id}.sdf")


CSV_COLUMNS = ("rank", "ligand_id", "confidence", "rmsd", "bond_length_mae",
               "pass_distance", "pass_overlap", "error")


def results_to_csv(results: list, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rank, row in enumerate(results, start=1):
            plaus = row.plausibility
            writer.writerow([
                rank,
                row.ligand_id,
                f"{row.confidence:.4f}" if not row.failed else "",
                f"{row.rmsd:.4f}" if row.rmsd is not None else "",
                f"{plaus.bond_length_mae:.4f}" if plaus else "",
                plaus.pass_distance if plaus else "",
                plaus.pass_overlap if plaus else "",
                row.error,
            ])


def load_library(path) -> list:
    """(ligand_id, graph-or-error) pairs from a multi-molecule SDF."""
    with open(path) as fh:
        text = fh.read()
    out = []
    for k, (name, block) in enumerate(iter_sdf(text)):
        ligand_id = name or f"mol{k}"
        try:
            out.append((ligand_id, parse_mol_block(block, name=ligand_id)))
        except (ParseError, ValueError) as exc:
            out.append((ligand_id, exc))
    return out


# ---------------------------------------------------------------------------
# Evaluation metrics
# ---------------------------------------------------------------------------

def success_rate(poses: list, gts: list, threshold: float = SUCCESS_RMSD) -> float:
    """Percentage of poses with RMSD strictly below the threshold."""
    if len(poses) != len(gts):
        raise ag.ContractError(f"pose/ground-truth counts differ: {len(poses)} vs {len(gts)}")
    values = [geometry.rmsd(p, g) for p, g in zip(poses, gts)]
    return 100.0 * float(np.mean([v < threshold for v in values]))


def roc_auc(labels: list, scores: list) -> float:
    """Rank-based (Mann-Whitney) AUC with tie averaging."""
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ag.ContractError("AUC undefined: both classes must be present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = ranks[labels].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class RegressionSummary:
    slope: float
    intercept: float
    pearson: float
    spearman: float
    degenerate: bool = False


def confidence_rmsd_regression(confidences: list, rmsds: list) -> RegressionSummary:
    """Least-squares RMSD-on-confidence fit plus rank/linear correlations."""
    x = np.asarray(confidences, dtype=np.float64)
    y = np.asarray(rmsds, dtype=np.float64)
    if len(x) < 3 or len(x) != len(y):
        raise ag.ContractError("regression needs at least 3 paired points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return RegressionSummary(slope=0.0, intercept=float(y.mean()),
                                 pearson=0.0, spearman=0.0, degenerate=True)
    slope, intercept = np.polyfit(x, y, 1)
    pearson = float(np.corrcoef(x, y)[0, 1])
    from scipy.stats import spearmanr

    rho = float(spearmanr(x, y).statistic)
    return RegressionSummary(slope=float(slope), intercept=float(intercept),
                             pearson=pearson, spearman=rho)


def evaluation_report(results: list, gt_coords: dict) -> dict:
    """success_rate, AUC and regression summary over screened results."""
    scored = [r for r in results if not r.failed and r.ligand_id in gt_coords]
    rmsds = [r.rmsd if r.rmsd is not None else geometry.rmsd(r.coords, gt_coords[r.ligand_id])
             for r in scored]
    confs = [r.confidence for r in scored]
    labels = [v < SUCCESS_RMSD for v in rmsds]
    report = {
        "n_scored": len(scored),
        "success_rate": 100.0 * float(np.mean(labels)) if scored else 0.0,
        "mean_rmsd": float(np.mean(rmsds)) if scored else float("nan"),
    }
    if any(labels) and not all(labels):
        report["auc"] = roc_auc(labels, confs)
    if len(scored) >= 3:
        reg = confidence_rmsd_regression(confs, rmsds)
        report["regression"] = {
            "slope": reg.slope, "intercept": reg.intercept,
            "pearson": reg.pearson, "spearman": reg.spearman,
            "degenerate": reg.degenerate,
        }
    return report


def cumulative_rmsd_curve(rmsds: list, max_threshold: float = 5.0, points: int = 101):
    """X thresholds and cumulative-frequency Y values for plotting."""
    thresholds = np.linspace(0.0, max_threshold, points)
    values = np.asarray(rmsds, dtype=np.float64)
    freq = [(values <= t).mean() if len(values) else 0.0 for t in thresholds]
    return thresholds, np.asarray(freq)


def plot_cumulative_rmsd(curves: dict, out_path):
    """Render cumulative-RMSD curves (one per label) to SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axis = plt.subplots(figsize=(5, 4))
    for label, rmsds in curves.items():
        x, y = cumulative_rmsd_curve(rmsds)
        axis.plot(x, y, label=label)
    axis.axvline(SUCCESS_RMSD, color="red", linestyle="--", linewidth=1)
    axis.set_xlabel("RMSD threshold (A)")
    axis.set_ylabel("cumulative frequency")
    axis.set_ylim(0, 1.02)
    axis.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def write_report_json(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
