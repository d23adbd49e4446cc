"""Complex assembly, binding blocks, and the distance projection heads.

The ligand and pocket states are concatenated into a single complex whose
pair grid starts block-diagonal (cross blocks zero-initialized). The same
attention block as the encoders runs L_b times, after which two heads
project pair entries to intramolecular (ligand-ligand) and intermolecular
(ligand-pocket) distances. The intermolecular head is evaluated in both
directions and averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig
from .encoder import EmbeddingState, attention_block, init_block_params
from .weights import Initializer, ParamStore


@dataclass
class ComplexState:
    atoms: Tensor            # (B, N+M, d)
    pairs: Tensor            # (B, N+M, N+M, H)
    lig_mask: np.ndarray     # (B, N)
    poc_mask: np.ndarray     # (B, M)

    @property
    def n_ligand(self) -> int:
        return self.lig_mask.shape[1]

    @property
    def n_pocket(self) -> int:
        return self.poc_mask.shape[1]

    @property
    def ligand_range(self):
        return (0, self.n_ligand)

    @property
    def pocket_range(self):
        return (self.n_ligand, self.n_ligand + self.n_pocket)

    @property
    def mask(self) -> np.ndarray:
        return np.concatenate([self.lig_mask, self.poc_mask], axis=1)

    def ligand_atoms(self) -> Tensor:
        return self.atoms[:, : self.n_ligand]

    def pocket_atoms(self) -> Tensor:
        return self.atoms[:, self.n_ligand:]

    def pair_block(self, rows: str, cols: str) -> Tensor:
        n = self.n_ligand
        sl = {"lig": slice(0, n), "poc": slice(n, None)}
        return self.pairs[:, sl[rows], sl[cols]]


@dataclass
class DistancePrediction:
    """Raw head outputs in Angstrom; symmetrization helpers included."""

    intra: Tensor            # (B, N, N), not symmetric in general
    inter: Tensor            # (B, N, M), already direction-averaged

    def intra_symmetrized(self) -> Tensor:
        """(D + D^T)/2 with the diagonal zeroed; idempotent."""
        sym = ag.mul(ag.add(self.intra, ag.transpose(self.intra, (0, 2, 1))), 0.5)
        n = sym.shape[-1]
        return ag.mul(sym, ag.constant(1.0 - np.eye(n)))


def init_binding_params(store: ParamStore, init: Initializer, config: ModelConfig):
    for layer in range(config.L_b):
        init_block_params(store, f"binding/block{layer}", init, config)
    d, H = config.d, config.H
    init.layer_norm(store, "binding/intra/ln", 2 * d + H)
    init.linear(store, "binding/intra/l1", 2 * d + H, d)
    init.linear(store, "binding/intra/l2", d, 1)
    for view in ("fwd", "rev"):
        init.linear(store, f"binding/inter/{view}/l1", d + H, d)
        init.layer_norm(store, f"binding/inter/{view}/ln", d)
        init.linear(store, f"binding/inter/{view}/l2", d, 1)


def assemble_complex(lig: EmbeddingState, poc: EmbeddingState) -> ComplexState:
    """Concatenate ligand then pocket; cross pair blocks start at zero."""
    if lig.atoms.shape[-1] != poc.atoms.shape[-1]:
        raise ag.ShapeError(
            f"atom widths differ: ligand {lig.atoms.shape[-1]} vs pocket {poc.atoms.shape[-1]}"
        )
    if lig.pairs.shape[-1] != poc.pairs.shape[-1]:
        raise ag.ShapeError(
            f"pair widths differ: ligand {lig.pairs.shape[-1]} vs pocket {poc.pairs.shape[-1]}"
        )
    atoms = ag.concat([lig.atoms, poc.atoms], axis=1)
    b, n, _, h = lig.pairs.shape
    m = poc.pairs.shape[1]
    zeros_lp = ag.constant(np.zeros((b, n, m, h)))
    zeros_pl = ag.constant(np.zeros((b, m, n, h)))
    top = ag.concat([lig.pairs, zeros_lp], axis=2)
    bottom = ag.concat([zeros_pl, poc.pairs], axis=2)
    pairs = ag.concat([top, bottom], axis=1)
    return ComplexState(atoms=atoms, pairs=pairs, lig_mask=lig.mask, poc_mask=poc.mask)


def binding_block(state: ComplexState, store: ParamStore, prefix: str,
                  config: ModelConfig, talking: bool) -> ComplexState:
    mask = state.mask
    atoms, pairs = attention_block(
        state.atoms, state.atoms, state.pairs, store, prefix, config, mask, mask, talking
    )
    return ComplexState(atoms=atoms, pairs=pairs, lig_mask=state.lig_mask, poc_mask=state.poc_mask)


def run_binding(state: ComplexState, store: ParamStore, config: ModelConfig,
                talking: bool) -> ComplexState:
    for layer in range(config.L_b):
        state = binding_block(state, store, f"binding/block{layer}", config, talking)
    return state


def expand_rows(x: Tensor, n_cols: int) -> Tensor:
    b, n, d = x.shape
    return ag.broadcast_to(ag.reshape(x, (b, n, 1, d)), (b, n, n_cols, d))


def expand_cols(x: Tensor, n_rows: int) -> Tensor:
    b, n, d = x.shape
    return ag.broadcast_to(ag.reshape(x, (b, 1, n, d)), (b, n_rows, n, d))


def distance_heads(state: ComplexState, store: ParamStore, config: ModelConfig) -> DistancePrediction:
    """Project the complex state to intra- and intermolecular distances.

    Intra (ligand pairs i,j):  W2 LeakyReLU(W1 LayerNorm(concat(C_i, C_j, Psi_ij)))
    Inter (ligand i, pocket k): W2 LayerNorm(ReLU(W1 concat(C_partner, Psi))),
    evaluated ligand->pocket and pocket->ligand, then averaged.
    """
    c_lig = state.ligand_atoms()
    c_poc = state.pocket_atoms()
    n, m = state.n_ligand, state.n_pocket

    cat = ag.concat(
        [expand_rows(c_lig, n), expand_cols(c_lig, n), state.pair_block("lig", "lig")],
        axis=-1,
    )
    normed = ag.layer_norm(cat, store["binding/intra/ln/gamma"], store["binding/intra/ln/beta"])
    hidden = ag.linear(normed, store["binding/intra/l1/W"], store["binding/intra/l1/b"])
    intra = ag.linear(ag.leaky_relu(hidden), store["binding/intra/l2/W"], store["binding/intra/l2/b"])
    intra = ag.reshape(intra, intra.shape[:-1])

    def inter_view(partner, psi, view):
        feats = ag.concat([partner, psi], axis=-1)
        hidden = ag.relu(ag.linear(feats, store[f"binding/inter/{view}/l1/W"],
                                   store[f"binding/inter/{view}/l1/b"]))
        normed = ag.layer_norm(hidden, store[f"binding/inter/{view}/ln/gamma"],
                               store[f"binding/inter/{view}/ln/beta"])
        out = ag.linear(normed, store[f"binding/inter/{view}/l2/W"],
                        store[f"binding/inter/{view}/l2/b"])
        return ag.reshape(out, out.shape[:-1])

    fwd = inter_view(expand_cols(c_poc, n), state.pair_block("lig", "poc"), "fwd")
    rev = inter_view(expand_cols(c_lig, m), state.pair_block("poc", "lig"), "rev")
    inter = symmetrize_inter(fwd, rev)
    return DistancePrediction(intra=intra, inter=inter)


def symmetrize_inter(fwd: Tensor, rev: Tensor) -> Tensor:
    """Average the ligand->pocket matrix with the transposed reverse view."""
    return ag.mul(ag.add(fwd, ag.transpose(rev, (0, 2, 1))), 0.5)
