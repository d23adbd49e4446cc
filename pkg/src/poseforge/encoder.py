"""Pair-biased multi-head attention blocks and the per-molecule encoder.

Each block computes scaled dot-product logits plus one pair-bias channel
per head, optionally refines them with talking-head mixing (a learnable
head-mixing matrix before the softmax and another after), updates atoms
through a residual MLP + LayerNorm, and replaces the pair state with the
concatenated post-softmax attention maps. Ligand and pocket encoders share
this architecture with independent weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig
from .weights import Initializer, ParamStore

MASK_LOGIT = -1e9


@dataclass
class EmbeddingState:
    """Atom and pair representations for one (batched, padded) molecule set."""

    atoms: Tensor          # (B, N, d)
    pairs: Tensor          # (B, N, N, H), one channel per head
    mask: np.ndarray       # (B, N)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]


def init_block_params(store: ParamStore, prefix: str, init: Initializer, config: ModelConfig):
    d, H = config.d, config.H
    for name in ("q", "k", "v", "o"):
        init.linear(store, f"{prefix}/{name}", d, d)
    init.linear(store, f"{prefix}/mlp/l0", d, d)
    init.linear(store, f"{prefix}/mlp/l1", d, d)
    init.layer_norm(store, f"{prefix}/ln", d)
    store[f"{prefix}/t1"] = init.weight(H, H, H)
    store[f"{prefix}/t2"] = init.weight(H, H, H)
    # Pair-bias gain; 1.0 adds the raw attention maps as bias.
    store[f"{prefix}/gain"] = init.scalar(1.0)


def init_encoder_params(store: ParamStore, prefix: str, init: Initializer, config: ModelConfig):
    init.linear(store, f"{prefix}/enc/pair_in", config.d_pair, config.H)
    for layer in range(config.L_e):
        init_block_params(store, f"{prefix}/enc/block{layer}", init, config)


def _split_heads(x: Tensor, H: int) -> Tensor:
    b, n, d = x.shape
    return ag.transpose(ag.reshape(x, (b, n, H, d // H)), (0, 2, 1, 3))


def attention_scores(xq: Tensor, xk: Tensor, pair_bias: Tensor, store: ParamStore,
                     prefix: str, config: ModelConfig) -> Tensor:
    """Per-head logits: Q K^T / sqrt(d) plus the gained pair-bias channel."""
    H = config.H
    q = _split_heads(ag.linear(xq, store[f"{prefix}/q/W"], store[f"{prefix}/q/b"]), H)
    k = _split_heads(ag.linear(xk, store[f"{prefix}/k/W"], store[f"{prefix}/k/b"]), H)
    logits = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(config.d))
    bias = ag.transpose(pair_bias, (0, 3, 1, 2))
    return ag.add(logits, ag.mul(store[f"{prefix}/gain"], bias))


def _mix_heads(m: Tensor, W: Tensor) -> Tensor:
    mixed = ag.matmul(ag.transpose(m, (0, 2, 3, 1)), W)
    return ag.transpose(mixed, (0, 3, 1, 2))


def talking_head(scores: Tensor, W_t1: Tensor | None, W_t2: Tensor | None,
                 mask_k: np.ndarray | None = None) -> Tensor:
    """softmax(M W_t1) W_t2 across the head axis; plain softmax when disabled.

    Padded keys get -1e9 immediately before the softmax (after any head
    mixing, which would otherwise rescale the mask) so their weight
    underflows to exactly zero.
    """

    def masked_softmax(m):
        if mask_k is not None:
            gap = (1.0 - mask_k)[:, None, None, :] * MASK_LOGIT
            m = ag.add(m, ag.constant(gap))
        return ag.softmax(m, axis=-1)

    if W_t1 is None or W_t2 is None:
        return masked_softmax(scores)
    return _mix_heads(masked_softmax(_mix_heads(scores, W_t1)), W_t2)


def attention_block(xq: Tensor, xk: Tensor, pair_bias: Tensor, store: ParamStore,
                    prefix: str, config: ModelConfig, mask_q: np.ndarray,
                    mask_k: np.ndarray, talking: bool):
    """One modified attention block.

    Returns the updated query atoms and the attention maps in pair layout
    (B, Nq, Nk, H) with padded rows/columns zeroed; the maps are the next
    pair representation.
    """
    H = config.H
    scores = attention_scores(xq, xk, pair_bias, store, prefix, config)
    if talking:
        maps = talking_head(scores, store[f"{prefix}/t1"], store[f"{prefix}/t2"], mask_k)
    else:
        maps = talking_head(scores, None, None, mask_k)

    v = _split_heads(ag.linear(xk, store[f"{prefix}/v/W"], store[f"{prefix}/v/b"]), H)
    context = ag.matmul(maps, v)                       # (B, H, Nq, dh)
    b, _, nq, dh = context.shape
    context = ag.reshape(ag.transpose(context, (0, 2, 1, 3)), (b, nq, H * dh))
    projected = ag.linear(context, store[f"{prefix}/o/W"], store[f"{prefix}/o/b"])
    mixed = ag.mlp(
        projected,
        [
            (store[f"{prefix}/mlp/l0/W"], store[f"{prefix}/mlp/l0/b"]),
            (store[f"{prefix}/mlp/l1/W"], store[f"{prefix}/mlp/l1/b"]),
        ],
    )
    atoms = ag.layer_norm(
        ag.add(xq, mixed), store[f"{prefix}/ln/gamma"], store[f"{prefix}/ln/beta"]
    )

    pair_maps = ag.transpose(maps, (0, 2, 3, 1))
    pad = (mask_q[:, :, None] * mask_k[:, None, :])[..., None]
    pair_maps = ag.mul(pair_maps, ag.constant(pad))
    return atoms, pair_maps


def encoder_block(state: EmbeddingState, store: ParamStore, prefix: str,
                  config: ModelConfig, talking: bool) -> EmbeddingState:
    atoms, pairs = attention_block(
        state.atoms, state.atoms, state.pairs, store, prefix, config,
        state.mask, state.mask, talking,
    )
    return EmbeddingState(atoms=atoms, pairs=pairs, mask=state.mask)


def run_encoder(atoms: Tensor, pairs: Tensor, mask: np.ndarray, store: ParamStore,
                prefix: str, config: ModelConfig, talking: bool) -> EmbeddingState:
    """Stack L_e blocks after projecting initial pair features to H channels."""
    if f"{prefix}/enc/pair_in/W" not in store:
        raise KeyError(f"no encoder weights under prefix {prefix!r}")
    if pairs.shape[-1] != config.d_pair:
        raise ag.ShapeError(
            f"initial pair width {pairs.shape[-1]} does not match config d_pair {config.d_pair}"
        )
    pairs = ag.linear(pairs, store[f"{prefix}/enc/pair_in/W"], store[f"{prefix}/enc/pair_in/b"])
    state = EmbeddingState(atoms=atoms, pairs=pairs, mask=mask)
    for layer in range(config.L_e):
        state = encoder_block(state, store, f"{prefix}/enc/block{layer}", config, talking)
    return state
