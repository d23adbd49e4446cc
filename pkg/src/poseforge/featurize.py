"""Initial network representations from molecule graphs.

Three ingredients feed the encoders: sinusoidal encodings of absolute 3D
coordinates reduced by a small MLP (the global position embedding, GPE),
Gaussian-kernel features of interatomic distances, and embedded graph
topology (shortest-path distance plus mean bond one-hots along the path).

The distance kernel places sigma under the 2*pi factor in both the
prefactor and the exponent:

    N(x; mu, sigma) = (2*pi*sigma)^(-1/2) * exp(-(x - mu)^2 / (2*pi*sigma^2))

``ModelConfig.standard_gaussian`` switches to the textbook normal pdf for
sensitivity studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig
from .molio import N_BOND_TYPES, VOCAB_SIZE, MoleculeGraph, clip_spd, path_features
from .weights import Initializer, ParamStore


@dataclass
class MolArrays:
    """Parameter-free numpy precursors for one molecule."""

    onehot: np.ndarray      # (N, V)
    sinus: np.ndarray       # (N, d_sin)
    spd_idx: np.ndarray     # (N, N) embedding indices (clipped, sentinel last)
    edge_mean: np.ndarray   # (N, N, B)
    dist: np.ndarray        # (N, N) Euclidean
    tpair_idx: np.ndarray   # (N, N) flattened unordered-type-pair index
    coords: np.ndarray      # (N, 3)

    @property
    def n_atoms(self) -> int:
        return self.onehot.shape[0]


@dataclass
class MolBatch:
    """Padded stack of MolArrays plus the per-atom validity mask."""

    onehot: np.ndarray
    sinus: np.ndarray
    spd_idx: np.ndarray
    edge_mean: np.ndarray
    dist: np.ndarray
    tpair_idx: np.ndarray
    coords: np.ndarray
    mask: np.ndarray        # (B, N) 1.0 for real atoms
    n_atoms: list

    @property
    def size(self) -> int:
        return self.onehot.shape[0]

    @property
    def max_atoms(self) -> int:
        return self.onehot.shape[1]


def sinusoid_encoding(coords: np.ndarray, d_sin: int) -> np.ndarray:
    """Per-axis sine/cosine encoding of coordinates, concatenated over x,y,z.

    Index i of each axis block holds sin(P / 10000^(2i/I)) when i is even
    and cos of the same argument when i is odd, I being the axis width.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if not np.isfinite(coords).all():
        raise ag.ContractError("non-finite coordinates in position encoding")
    if d_sin % 6 != 0:
        raise ag.ContractError(f"sinusoid width {d_sin} must be divisible by 6")
    width = d_sin // 3
    i = np.arange(width)
    angles = coords[..., None] / (10000.0 ** (2.0 * i / width))  # (..., 3, width)
    enc = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return enc.reshape(*coords.shape[:-1], d_sin)


def type_pair_indices(atom_types: np.ndarray, vocab: int = VOCAB_SIZE) -> np.ndarray:
    t = np.asarray(atom_types)
    return t[:, None] * vocab + t[None, :]


def mol_arrays(graph: MoleculeGraph, config: ModelConfig) -> MolArrays:
    """Compute every parameter-free featurization input for one molecule."""
    n = graph.n_atoms
    onehot = np.zeros((n, VOCAB_SIZE))
    onehot[np.arange(n), graph.atom_types] = 1.0
    feats = path_features(graph)
    diff = graph.coords[:, None, :] - graph.coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    return MolArrays(
        onehot=onehot,
        sinus=sinusoid_encoding(graph.coords, config.d_sin),
        spd_idx=clip_spd(feats.spd, config.spd_max),
        edge_mean=feats.edge_path_sum,
        dist=dist,
        tpair_idx=type_pair_indices(graph.atom_types),
        coords=graph.coords.copy(),
    )


def pad_batch(mols: list) -> MolBatch:
    """Stack per-molecule arrays, zero-padding every field to the max size."""
    b = len(mols)
    n_max = max(m.n_atoms for m in mols)
    d_sin = mols[0].sinus.shape[-1]

    def alloc(*shape, dtype=np.float64):
        return np.zeros((b, *shape), dtype=dtype)

    batch = MolBatch(
        onehot=alloc(n_max, VOCAB_SIZE),
        sinus=alloc(n_max, d_sin),
        spd_idx=alloc(n_max, n_max, dtype=np.int64),
        edge_mean=alloc(n_max, n_max, N_BOND_TYPES),
        dist=alloc(n_max, n_max),
        tpair_idx=alloc(n_max, n_max, dtype=np.int64),
        coords=alloc(n_max, 3),
        mask=alloc(n_max),
        n_atoms=[m.n_atoms for m in mols],
    )
    for k, m in enumerate(mols):
        n = m.n_atoms
        batch.onehot[k, :n] = m.onehot
        batch.sinus[k, :n] = m.sinus
        batch.spd_idx[k, :n, :n] = m.spd_idx
        batch.edge_mean[k, :n, :n] = m.edge_mean
        batch.dist[k, :n, :n] = m.dist
        batch.tpair_idx[k, :n, :n] = m.tpair_idx
        batch.coords[k, :n] = m.coords
        batch.mask[k, :n] = 1.0
    return batch


def init_featurize_params(store: ParamStore, prefix: str, init: Initializer, config: ModelConfig):
    V = VOCAB_SIZE
    half = config.d_pair // 2
    init.linear(store, f"{prefix}/feat/atom_embed", V, config.d)
    init.linear(store, f"{prefix}/feat/gpe/l0", config.d_sin, config.d)
    init.linear(store, f"{prefix}/feat/gpe/l1", config.d, config.d)
    init.layer_norm(store, f"{prefix}/feat/atom_ln", config.d)
    store[f"{prefix}/feat/spd_embed"] = init.weight(half, config.spd_max + 2, half)
    store[f"{prefix}/feat/edge_w"] = init.weight(N_BOND_TYPES, N_BOND_TYPES, half)
    # Distance transform starts as the identity d_hat = d.
    store[f"{prefix}/feat/gauss/u"] = Tensor(np.ones((V, V)), requires_grad=True)
    store[f"{prefix}/feat/gauss/v"] = Tensor(np.zeros((V, V)), requires_grad=True)
    store[f"{prefix}/feat/gauss/W1"] = init.weight(config.K, config.K, config.K)
    store[f"{prefix}/feat/gauss/W2"] = init.weight(config.K, config.K, config.d_pair)


def gpe_mlp(sinus, store: ParamStore, prefix: str) -> Tensor:
    """Reduce sinusoid encodings to the atom width with the 2-layer MLP."""
    layers = [
        (store[f"{prefix}/feat/gpe/l0/W"], store[f"{prefix}/feat/gpe/l0/b"]),
        (store[f"{prefix}/feat/gpe/l1/W"], store[f"{prefix}/feat/gpe/l1/b"]),
    ]
    return ag.mlp(ag.constant(sinus), layers)


def gaussian_kernels(dhat: Tensor, config: ModelConfig) -> Tensor:
    """Evaluate the K distance kernels at d_hat; trailing axis indexes k."""
    mu = config.gauss_mu
    sigma = config.gauss_sigmas
    z = ag.sub(ag.reshape(dhat, (*dhat.shape, 1)), ag.constant(mu))
    if config.standard_gaussian:
        pref = 1.0 / np.sqrt(2.0 * np.pi) / sigma
        scale = -1.0 / (2.0 * sigma**2)
    else:
        pref = 1.0 / np.sqrt(2.0 * np.pi * sigma)
        scale = -1.0 / (2.0 * np.pi * sigma**2)
    return ag.mul(ag.constant(pref), ag.texp(ag.mul(ag.square(z), ag.constant(scale))))


def gaussian_pair_features(dist, tpair_idx, store: ParamStore, prefix: str, config: ModelConfig) -> Tensor:
    """Kernelized distance features with the two-layer projection.

    u and v are shared per unordered atom-type pair (the raw tables are
    symmetrized before lookup), so the output is symmetric in (i, j).
    """
    V = VOCAB_SIZE

    def sym_lookup(name):
        raw = store[f"{prefix}/feat/gauss/{name}"]
        table = ag.mul(ag.add(raw, ag.transpose(raw, (1, 0))), 0.5)
        flat = ag.reshape(table, (V * V, 1))
        picked = ag.embedding(flat, tpair_idx)
        return ag.reshape(picked, tpair_idx.shape)

    u = sym_lookup("u")
    v = sym_lookup("v")
    dhat = ag.add(ag.mul(u, ag.constant(dist)), v)
    kern = gaussian_kernels(dhat, config)
    hidden = ag.leaky_relu(ag.matmul(kern, store[f"{prefix}/feat/gauss/W1"]))
    return ag.matmul(hidden, store[f"{prefix}/feat/gauss/W2"])


def global_position_embedding(coords: np.ndarray, store: ParamStore, prefix: str, config: ModelConfig) -> Tensor:
    """GPE rows for a coordinate set: sinusoids then the reducing MLP."""
    return gpe_mlp(sinusoid_encoding(coords, config.d_sin), store, prefix)


def atom_init(onehot, gpe, store: ParamStore, prefix: str, config: ModelConfig) -> Tensor:
    """Initial atom embeddings: LayerNorm(Linear(onehot) + GPE).

    With the GPE ablation the position term is omitted entirely.
    """
    embedded = ag.linear(
        ag.constant(onehot),
        store[f"{prefix}/feat/atom_embed/W"],
        store[f"{prefix}/feat/atom_embed/b"],
    )
    pre = ag.add(embedded, gpe) if config.use_gpe and gpe is not None else embedded
    return ag.layer_norm(
        pre, store[f"{prefix}/feat/atom_ln/gamma"], store[f"{prefix}/feat/atom_ln/beta"]
    )


def pair_init(spd_emb, edge_proj, phi3d) -> Tensor:
    """Initial pair embeddings: Concat(SPD embedding, edge projection) + 3D."""
    pair2d = ag.concat([spd_emb, edge_proj], axis=-1)
    if pair2d.shape[-1] != phi3d.shape[-1]:
        raise ag.ShapeError(
            f"pair width mismatch: 2D concat {pair2d.shape[-1]} vs 3D {phi3d.shape[-1]}"
        )
    return ag.add(pair2d, phi3d)


def arrays_to_json(arrays: MolArrays) -> str:
    """Serialize featurization precursors for golden-file comparisons."""
    import json

    payload = {
        "onehot": arrays.onehot.tolist(),
        "sinus": arrays.sinus.tolist(),
        "spd_idx": arrays.spd_idx.tolist(),
        "edge_mean": arrays.edge_mean.tolist(),
        "dist": arrays.dist.tolist(),
        "tpair_idx": arrays.tpair_idx.tolist(),
        "coords": arrays.coords.tolist(),
    }
    return json.dumps(payload, sort_keys=True)


def initial_embeddings(batch: MolBatch, store: ParamStore, prefix: str, config: ModelConfig):
    """Build (atoms, pairs) tensors for a padded molecule batch."""
    gpe = gpe_mlp(batch.sinus, store, prefix) if config.use_gpe else None
    atoms = atom_init(batch.onehot, gpe, store, prefix, config)
    phi3d = gaussian_pair_features(batch.dist, batch.tpair_idx, store, prefix, config)
    if config.use_2d:
        spd_emb = ag.embedding(store[f"{prefix}/feat/spd_embed"], batch.spd_idx)
        edge_proj = ag.matmul(ag.constant(batch.edge_mean), store[f"{prefix}/feat/edge_w"])
        pairs = pair_init(spd_emb, edge_proj, phi3d)
    else:
        pairs = phi3d
    return atoms, pairs
