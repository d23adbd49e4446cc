"""End-to-end coordinate decoder.

Each layer refreshes the complex representations (ligand self-attention,
ligand->pocket cross-attention, pocket self-attention), collapses the
H-channel attention maps to scalar pair scores carried across layers, and
displaces every ligand atom along unit difference vectors weighted by
those scores. Pocket coordinates never move.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .binding import ComplexState
from .config import ModelConfig
from .encoder import attention_block, init_block_params
from .molio import MoleculeGraph, write_mol_block
from .weights import Initializer, ParamStore

# Contributions from atom pairs closer than this are dropped: the unit
# difference vector is undefined at coincidence.
COINCIDENT_EPS = 1e-6


@dataclass
class Pose:
    """Ligand coordinates per decoder layer; entry 0 is the initial placement."""

    coords_per_layer: list                  # [(B, N, 3) ndarray]
    final: Tensor                           # (B, N, 3), graph-connected
    lig_mask: np.ndarray
    converged: bool = True
    scores: dict = field(default_factory=dict)

    @property
    def final_coords(self) -> np.ndarray:
        return self.final.data

    def single(self, index: int = 0, n_atoms: int | None = None) -> np.ndarray:
        n = n_atoms if n_atoms is not None else int(self.lig_mask[index].sum())
        return self.final.data[index, :n]


def init_structure_params(store: ParamStore, init: Initializer, config: ModelConfig):
    for layer in range(config.L_s):
        p = f"structure/block{layer}"
        init_block_params(store, f"{p}/intra", init, config)
        init_block_params(store, f"{p}/inter", init, config)
        init_block_params(store, f"{p}/pocket", init, config)
        for kind in ("intra", "inter"):
            init.linear(store, f"{p}/{kind}/head", config.H, 1)
            store[f"{p}/{kind}/carry_w"] = init.scalar(1.0)
            store[f"{p}/{kind}/carry_b"] = init.scalar(0.0)
            store[f"{p}/{kind}/out_w"] = init.scalar(1.0)
            store[f"{p}/{kind}/out_b"] = init.scalar(0.0)


def masked_centroid(coords: np.ndarray, mask: np.ndarray) -> np.ndarray:
    w = mask[..., None]
    return (coords * w).sum(axis=-2) / np.maximum(w.sum(axis=-2), 1.0)


def init_pose(ligand: MoleculeGraph, pocket: MoleculeGraph) -> np.ndarray:
    """Translate the ligand conformer so its centroid hits the pocket centroid."""
    if pocket.n_atoms == 0:
        raise ag.ContractError("cannot place a ligand in an empty pocket")
    shift = pocket.coords.mean(axis=0) - ligand.coords.mean(axis=0)
    return ligand.coords + shift


def init_pose_batch(lig_coords: np.ndarray, lig_mask: np.ndarray,
                    poc_coords: np.ndarray, poc_mask: np.ndarray) -> np.ndarray:
    if poc_mask.sum() == 0:
        raise ag.ContractError("cannot place a ligand in an empty pocket")
    shift = masked_centroid(poc_coords, poc_mask) - masked_centroid(lig_coords, lig_mask)
    return (lig_coords + shift[:, None, :]) * lig_mask[..., None]


def _score_update(prev: Tensor, maps: Tensor, store: ParamStore, prefix: str,
                  pair_mask: np.ndarray) -> Tensor:
    """Scalar pair scores: Linear(Linear(prev) + head(maps)), masked."""
    collapsed = ag.linear(maps, store[f"{prefix}/head/W"], store[f"{prefix}/head/b"])
    collapsed = ag.reshape(collapsed, collapsed.shape[:-1])
    carried = ag.add(ag.mul(prev, store[f"{prefix}/carry_w"]), store[f"{prefix}/carry_b"])
    out = ag.add(ag.mul(ag.add(carried, collapsed), store[f"{prefix}/out_w"]),
                 store[f"{prefix}/out_b"])
    return ag.mul(out, ag.constant(pair_mask))


def _directed_displacement(p_from: Tensor, p_to: Tensor, scores: Tensor) -> Tensor:
    """Sum of score-weighted unit vectors from p_to toward p_from.

    Pairs closer than COINCIDENT_EPS contribute nothing.
    """
    b, n, _ = p_from.shape
    m = p_to.shape[1]
    diff = ag.sub(
        ag.reshape(p_from, (b, n, 1, 3)), ag.reshape(p_to, (b, 1, m, 3))
    )
    dist = ag.sqrt(ag.tsum(ag.square(diff), axis=-1))
    safe = ag.maximum(dist, COINCIDENT_EPS)
    unit = ag.div(diff, ag.reshape(safe, (b, n, m, 1)))
    keep = (dist.data >= COINCIDENT_EPS).astype(np.float64)
    weighted = ag.mul(unit, ag.reshape(ag.mul(scores, ag.constant(keep)), (b, n, m, 1)))
    return ag.tsum(weighted, axis=2)


def structure_layer(state: ComplexState, pose: Tensor, poc_coords: np.ndarray,
                    a_intra: Tensor, a_inter: Tensor, store: ParamStore,
                    layer: int, config: ModelConfig, talking: bool):
    """One decoder layer: refresh representations, update scores, move atoms."""
    prefix = f"structure/block{layer}"
    n = state.n_ligand
    lig_mask, poc_mask = state.lig_mask, state.poc_mask

    al = state.ligand_atoms()
    ap = state.pocket_atoms()
    psi_ll = state.pair_block("lig", "lig")
    psi_lp = state.pair_block("lig", "poc")
    psi_pl = state.pair_block("poc", "lig")
    psi_pp = state.pair_block("poc", "poc")

    al, maps_ll = attention_block(al, al, psi_ll, store, f"{prefix}/intra", config,
                                  lig_mask, lig_mask, talking)
    al, maps_lp = attention_block(al, ap, psi_lp, store, f"{prefix}/inter", config,
                                  lig_mask, poc_mask, talking)
    ap, maps_pp = attention_block(ap, ap, psi_pp, store, f"{prefix}/pocket", config,
                                  poc_mask, poc_mask, talking)

    intra_mask = (lig_mask[:, :, None] * lig_mask[:, None, :]) * (1.0 - np.eye(n))
    inter_mask = lig_mask[:, :, None] * poc_mask[:, None, :]
    a_intra = _score_update(a_intra, maps_ll, store, f"{prefix}/intra", intra_mask)
    a_inter = _score_update(a_inter, maps_lp, store, f"{prefix}/inter", inter_mask)

    move = ag.add(
        _directed_displacement(pose, pose, a_intra),
        _directed_displacement(pose, ag.constant(poc_coords), a_inter),
    )
    pose = ag.add(pose, ag.mul(move, ag.constant(lig_mask[..., None])))

    atoms = ag.concat([al, ap], axis=1)
    top = ag.concat([maps_ll, maps_lp], axis=2)
    bottom = ag.concat([psi_pl, maps_pp], axis=2)
    pairs = ag.concat([top, bottom], axis=1)
    new_state = ComplexState(atoms=atoms, pairs=pairs, lig_mask=lig_mask, poc_mask=poc_mask)
    return new_state, pose, a_intra, a_inter


def run_structure(state: ComplexState, lig_coords0: np.ndarray, poc_coords: np.ndarray,
                  store: ParamStore, config: ModelConfig, talking: bool | None = None) -> Pose:
    """Decode ligand coordinates through L_s stacked layers.

    Layer-0 carried scores are zero, so the first layer depends only on its
    attention maps.
    """
    if talking is None:
        talking = config.use_talking_head
    b, n, _ = lig_coords0.shape
    m = poc_coords.shape[1]
    pose = ag.constant(lig_coords0)
    a_intra = ag.constant(np.zeros((b, n, n)))
    a_inter = ag.constant(np.zeros((b, n, m)))
    layers = [lig_coords0.copy()]
    for layer in range(config.L_s):
        state, pose, a_intra, a_inter = structure_layer(
            state, pose, poc_coords, a_intra, a_inter, store, layer, config, talking
        )
        layers.append(pose.data.copy())
    return Pose(
        coords_per_layer=layers,
        final=pose,
        lig_mask=state.lig_mask,
        scores={"intra": a_intra.data, "inter": a_inter.data},
    )


# ---------------------------------------------------------------------------
# Pose export
# ---------------------------------------------------------------------------

def pose_to_sdf(ligand: MoleculeGraph, coords: np.ndarray, name: str | None = None) -> str:
    """SDF block at the predicted coordinates; the bond block is the input's."""
    return write_mol_block(ligand.with_coords(coords), name)


def pose_record(coords: np.ndarray, confidence: float, rmsd: float | None = None,
                ligand_id: str | None = None) -> str:
    payload = {"coords": np.asarray(coords).tolist(), "confidence": float(confidence)}
    if rmsd is not None:
        payload["rmsd"] = float(rmsd)
    if ligand_id is not None:
        payload["ligand_id"] = ligand_id
    return json.dumps(payload, indent=1)
