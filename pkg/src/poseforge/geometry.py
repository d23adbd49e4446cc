"""Pose evaluation and physical-plausibility correction.

Includes pocket-frame RMSD, Kabsch rigid superposition, the rigid
point-cloud-fitting correction (fit the input conformer onto the predicted
pose), a rigid-pocket energy minimizer with backtracking line search, the
gradient-descent decoder that rebuilds coordinates from predicted distance
matrices, and the plausibility report (bond/angle errors, clash and
overlap checks against van der Waals radii).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .molio import UNK, MoleculeGraph

# Bondi radii (Angstrom); UNK falls back to carbon.
VDW_RADII = {
    "C": 1.70, "N": 1.55, "O": 1.52, "S": 1.80, "P": 1.80,
    "F": 1.47, "Cl": 1.75, "Br": 1.85, "I": 1.98, "B": 1.92, "Se": 1.90,
}
_VDW_BY_INDEX = np.array(
    [VDW_RADII[e] for e in ["C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "Se"]]
    + [VDW_RADII["C"]]
)

CLASH_FACTOR = 0.75     # pass_distance threshold on vdW-sum fraction
OVERLAP_FACTOR = 0.8    # ligand center inside 0.8x pocket vdW sphere fails


class DegenerateGeometryError(ValueError):
    """Point set too degenerate (collinear/coincident) for superposition."""


@dataclass
class RigidTransform:
    rotation: np.ndarray     # (3, 3), proper (det +1)
    translation: np.ndarray  # (3,)

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return coords @ self.rotation.T + self.translation


@dataclass
class PlausibilityReport:
    bond_length_mae: float
    bond_angle_mae: float
    min_intermolecular_distance: float
    clash_count: int
    volume_overlap_flag: bool
    pass_distance: bool
    pass_overlap: bool

    def to_dict(self) -> dict:
        return {
            "bond_length_mae": self.bond_length_mae,
            "bond_angle_mae": self.bond_angle_mae,
            "min_intermolecular_distance": self.min_intermolecular_distance,
            "clash_count": self.clash_count,
            "volume_overlap_flag": self.volume_overlap_flag,
            "pass_distance": self.pass_distance,
            "pass_overlap": self.pass_overlap,
        }


@dataclass
class MinimizeResult:
    coords: np.ndarray
    energy: float
    converged: bool
    n_iter: int
    energy_trace: list


def vdw_radius(atom_type: int) -> float:
    return float(_VDW_BY_INDEX[min(atom_type, UNK)])


def rmsd(pred: np.ndarray, gt: np.ndarray) -> float:
    """Pocket-frame RMSD; no alignment is applied."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ag.ContractError(f"coordinate counts differ: {pred.shape} vs {gt.shape}")
    return float(np.sqrt(((pred - gt) ** 2).sum(axis=-1).mean()))


def kabsch(P: np.ndarray, Q: np.ndarray) -> RigidTransform:
    """Optimal proper rigid transform taking P onto Q (least-squares)."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape or P.ndim != 2 or P.shape[1] != 3:
        raise ag.ContractError(f"kabsch needs matching Nx3 sets, got {P.shape} and {Q.shape}")
    if len(P) < 3:
        raise ag.ContractError("kabsch needs at least 3 points")
    cp, cq = P.mean(axis=0), Q.mean(axis=0)
    H = (P - cp).T @ (Q - cq)
    U, S, Vt = np.linalg.svd(H)
    if S[0] < 1e-12 or S[1] < 1e-9 * S[0]:
        raise DegenerateGeometryError(
            f"point set is collinear or coincident (singular values {S})"
        )
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(rotation=R, translation=cq - R @ cp)


def pcf_correct(pred_coords: np.ndarray, reference: MoleculeGraph) -> np.ndarray:
    """Rigidly fit the reference conformer onto the predicted pose.

    The output inherits the reference's exact internal geometry at the
    predicted location and orientation.
    """
    fit = kabsch(reference.coords, np.asarray(pred_coords, dtype=np.float64))
    return fit.apply(reference.coords)


def ff_correct(pred_coords: np.ndarray, *_args, **_kwargs) -> np.ndarray:
    """Placeholder for external force-field postprocessing.

    Pocket-blind force-field relaxation was evaluated and rejected: it
    cannot protect intermolecular validity, so no backend is shipped. The
    pose is returned unchanged.
    """
    return np.array(pred_coords, dtype=np.float64, copy=True)


# ---------------------------------------------------------------------------
# Internal-geometry terms
# ---------------------------------------------------------------------------

def bond_index_arrays(ligand: MoleculeGraph):
    if not ligand.bonds:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    i, j = zip(*[(b[0], b[1]) for b in ligand.bonds])
    return np.array(i, dtype=int), np.array(j, dtype=int)


def angle_triplets(ligand: MoleculeGraph) -> np.ndarray:
    """(i, j, k) with bonds i-j and j-k, i < k, for every center j."""
    adj = ligand.adjacency()
    triplets = []
    for j, neighbors in enumerate(adj):
        for a in range(len(neighbors)):
            for b in range(a + 1, len(neighbors)):
                triplets.append((neighbors[a], j, neighbors[b]))
    return np.array(triplets, dtype=int).reshape(-1, 3)


def bond_lengths(coords: np.ndarray, idx_i: np.ndarray, idx_j: np.ndarray) -> np.ndarray:
    return np.linalg.norm(coords[idx_i] - coords[idx_j], axis=-1)


def bond_angles(coords: np.ndarray, triplets: np.ndarray) -> np.ndarray:
    if len(triplets) == 0:
        return np.zeros(0)
    u = coords[triplets[:, 0]] - coords[triplets[:, 1]]
    w = coords[triplets[:, 2]] - coords[triplets[:, 1]]
    cosang = (u * w).sum(axis=-1) / (
        np.linalg.norm(u, axis=-1) * np.linalg.norm(w, axis=-1)
    )
    return np.arccos(np.clip(cosang, -1.0, 1.0))


def nonbonded_pairs(ligand: MoleculeGraph, n_pocket: int):
    """Ligand-ligand pairs beyond 1-2/1-3 separation, plus all ligand-pocket pairs.

    Returns (lig_i, lig_j) and (lig_i, pocket_k) index arrays.
    """
    n = ligand.n_atoms
    excluded = {(b[0], b[1]) for b in ligand.bonds} | {(b[1], b[0]) for b in ligand.bonds}
    for i, j, k in angle_triplets(ligand):
        excluded.add((i, k))
        excluded.add((k, i))
    ll = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in excluded]
    ll_i = np.array([p[0] for p in ll], dtype=int)
    ll_j = np.array([p[1] for p in ll], dtype=int)
    lp_i, lp_k = np.meshgrid(np.arange(n), np.arange(n_pocket), indexing="ij")
    return ll_i, ll_j, lp_i.reshape(-1), lp_k.reshape(-1)


@dataclass
class EMParams:
    step: float = 1e-3
    max_iter: int = 300
    tol: float = 1e-6          # stop when the accepted step's decrease is below this
    k_bond: float = 100.0
    k_angle: float = 10.0
    k_clash: float = 50.0


def _pair_distances(P: Tensor, idx_a, coords_b, idx_b) -> Tensor:
    a = ag.gather_rows(P, idx_a)
    b = ag.gather_rows(coords_b, idx_b) if isinstance(coords_b, Tensor) else ag.constant(
        np.asarray(coords_b)[idx_b]
    )
    return ag.sqrt(ag.tsum(ag.square(ag.sub(a, b)), axis=-1))


def _energy(P: Tensor, pocket: MoleculeGraph, params: EMParams, terms) -> Tensor:
    bi, bj, l0, trip, theta0, ll_i, ll_j, lp_i, lp_k, rmin_ll, rmin_lp = terms
    total = ag.constant(0.0)
    if len(bi):
        lengths = _pair_distances(P, bi, P, bj)
        total = ag.add(total, ag.mul(ag.tsum(ag.square(ag.sub(lengths, ag.constant(l0)))),
                                     params.k_bond))
    if len(trip):
        u = ag.sub(ag.gather_rows(P, trip[:, 0]), ag.gather_rows(P, trip[:, 1]))
        w = ag.sub(ag.gather_rows(P, trip[:, 2]), ag.gather_rows(P, trip[:, 1]))
        dot = ag.tsum(ag.mul(u, w), axis=-1)
        norms = ag.mul(
            ag.sqrt(ag.tsum(ag.square(u), axis=-1)), ag.sqrt(ag.tsum(ag.square(w), axis=-1))
        )
        theta = ag.arccos(ag.div(dot, ag.maximum(norms, 1e-9)))
        total = ag.add(total, ag.mul(ag.tsum(ag.square(ag.sub(theta, ag.constant(theta0)))),
                                     params.k_angle))
    if len(ll_i):
        r = _pair_distances(P, ll_i, P, ll_j)
        gap = ag.relu(ag.sub(ag.constant(rmin_ll), r))
        total = ag.add(total, ag.mul(ag.tsum(ag.square(gap)), params.k_clash))
    if len(lp_i):
        r = _pair_distances(P, lp_i, pocket.coords, lp_k)
        gap = ag.relu(ag.sub(ag.constant(rmin_lp), r))
        total = ag.add(total, ag.mul(ag.tsum(ag.square(gap)), params.k_clash))
    return total


def _energy_terms(ligand: MoleculeGraph, pocket: MoleculeGraph):
    bi, bj = bond_index_arrays(ligand)
    l0 = bond_lengths(ligand.coords, bi, bj)
    trip = angle_triplets(ligand)
    theta0 = bond_angles(ligand.coords, trip)
    ll_i, ll_j, lp_i, lp_k = nonbonded_pairs(ligand, pocket.n_atoms)
    radii_l = _VDW_BY_INDEX[np.minimum(ligand.atom_types, UNK)]
    radii_p = _VDW_BY_INDEX[np.minimum(pocket.atom_types, UNK)]
    rmin_ll = OVERLAP_FACTOR * (radii_l[ll_i] + radii_l[ll_j])
    rmin_lp = OVERLAP_FACTOR * (radii_l[lp_i] + radii_p[lp_k])
    return bi, bj, l0, trip, theta0, ll_i, ll_j, lp_i, lp_k, rmin_ll, rmin_lp


def _descend(coords0: np.ndarray, objective, step: float, max_iter: int, tol: float) -> MinimizeResult:
    """Monotone gradient descent with backtracking; returns the best visit."""
    x = np.array(coords0, dtype=np.float64, copy=True)
    trace = []
    converged = False
    step_cap = 50.0 * step
    it = 0
    for it in range(max_iter):
        P = Tensor(x, requires_grad=True)
        e = objective(P)
        ag.backward(e)
        energy = float(e.data)
        trace.append(energy)
        grad = P.grad
        if grad is None or float(np.abs(grad).max()) < 1e-12:
            converged = True
            break
        trial_step = step
        accepted = False
        for _ in range(30):
            candidate = x - trial_step * grad
            e_new = float(objective(Tensor(candidate)).data)
            if e_new <= energy:
                accepted = True
                break
            trial_step *= 0.5
        if not accepted:
            break
        x = candidate
        step = min(trial_step * 2.0, step_cap)
        if energy - e_new < tol:
            converged = True
            break
    final_energy = float(objective(Tensor(x)).data)
    trace.append(final_energy)
    return MinimizeResult(coords=x, energy=final_energy, converged=converged,
                          n_iter=it + 1, energy_trace=trace)


def em_minimize(pred_coords: np.ndarray, ligand: MoleculeGraph, pocket: MoleculeGraph,
                params: EMParams | None = None) -> MinimizeResult:
    """Relax a pose against bond/angle/clash terms with the pocket held rigid.

    Reference bond lengths and angles come from the input conformer. Energy
    never increases between accepted iterations; hitting the iteration cap
    returns the best-so-far coordinates with ``converged=False``.
    """
    params = params or EMParams()
    terms = _energy_terms(ligand, pocket)

    def objective(P):
        return _energy(P, pocket, params, terms)

    return _descend(np.asarray(pred_coords), objective, params.step, params.max_iter, params.tol)


@dataclass
class FitParams:
    step: float = 5e-3
    max_iter: int = 500


def distance_fit(dist_intra: np.ndarray, dist_inter: np.ndarray, ligand: MoleculeGraph,
                 pocket: MoleculeGraph, params: FitParams | None = None,
                 init_coords: np.ndarray | None = None) -> MinimizeResult:
    """Rebuild ligand coordinates by least-squares against distance matrices.

    This is the iterative decoder the end-to-end structure module replaces:
    a fixed budget of gradient steps on
    sum_ij (|P_i-P_j| - D_intra_ij)^2 + sum_ik (|P_i-P_k| - D_inter_ik)^2
    starting from the centroid placement.
    """
    from .structure import init_pose

    params = params or FitParams()
    n = ligand.n_atoms
    dist_intra = np.asarray(dist_intra, dtype=np.float64)
    dist_inter = np.asarray(dist_inter, dtype=np.float64)
    x0 = np.asarray(init_coords, dtype=np.float64) if init_coords is not None else init_pose(ligand, pocket)
    if params.max_iter <= 0:
        return MinimizeResult(coords=x0.copy(), energy=float("nan"), converged=False,
                              n_iter=0, energy_trace=[])
    # A ligand atom placed exactly on a pocket anchor is a stationary point
    # of the objective; nudge it off deterministically.
    gaps = np.linalg.norm(x0[:, None, :] - pocket.coords[None, :, :], axis=-1)
    for i in np.nonzero(gaps.min(axis=1) < 1e-8)[0]:
        x0 = x0.copy()
        x0[i] += 1e-3 * np.array([1.0, 1.0, 1.0]) * (i + 1)
    off_diag = ~np.eye(n, dtype=bool)
    ii, jj = np.nonzero(off_diag)
    kk_i, kk = np.meshgrid(np.arange(n), np.arange(pocket.n_atoms), indexing="ij")
    kk_i, kk = kk_i.reshape(-1), kk.reshape(-1)
    target_ll = dist_intra[ii, jj]
    target_lp = dist_inter[kk_i, kk]

    def objective(P):
        r_ll = _pair_distances(P, ii, P, jj)
        r_lp = _pair_distances(P, kk_i, pocket.coords, kk)
        return ag.add(
            ag.tsum(ag.square(ag.sub(r_ll, ag.constant(target_ll)))),
            ag.tsum(ag.square(ag.sub(r_lp, ag.constant(target_lp)))),
        )

    return _descend(x0, objective, params.step, params.max_iter, tol=1e-12)


def plausibility_report(pred_coords: np.ndarray, ligand: MoleculeGraph,
                        pocket: MoleculeGraph) -> PlausibilityReport:
    """Geometry checks of a pose against the input conformer and the pocket."""
    coords = np.asarray(pred_coords, dtype=np.float64)
    bi, bj = bond_index_arrays(ligand)
    ref_lengths = bond_lengths(ligand.coords, bi, bj)
    lengths = bond_lengths(coords, bi, bj)
    trip = angle_triplets(ligand)
    ref_angles = bond_angles(ligand.coords, trip)
    angles = bond_angles(coords, trip)

    radii_l = _VDW_BY_INDEX[np.minimum(ligand.atom_types, UNK)]
    radii_p = _VDW_BY_INDEX[np.minimum(pocket.atom_types, UNK)]
    diff = coords[:, None, :] - pocket.coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    vdw_sum = radii_l[:, None] + radii_p[None, :]
    clashes = dist < CLASH_FACTOR * vdw_sum
    overlaps = dist < OVERLAP_FACTOR * radii_p[None, :]

    return PlausibilityReport(
        bond_length_mae=float(np.abs(lengths - ref_lengths).mean()) if len(bi) else 0.0,
        bond_angle_mae=float(np.abs(angles - ref_angles).mean()) if len(trip) else 0.0,
        min_intermolecular_distance=float(dist.min()) if dist.size else float("inf"),
        clash_count=int(clashes.sum()),
        volume_overlap_flag=bool(overlaps.any()),
        pass_distance=not clashes.any(),
        pass_overlap=not overlaps.any(),
    )
