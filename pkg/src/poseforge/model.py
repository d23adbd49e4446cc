"""Full docking network: parameter construction and the forward pipeline.

The pipeline places the ligand conformer at the pocket centroid, featurizes
both molecules in the pocket frame, runs the two weight-independent
encoders, the binding stack, the distance heads and the confidence head,
and (unless the gradient-descent baseline is selected) decodes coordinates
with the structure module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .binding import (
    ComplexState,
    DistancePrediction,
    assemble_complex,
    distance_heads,
    expand_cols,
    expand_rows,
    init_binding_params,
    run_binding,
)
from .config import ModelConfig
from .encoder import EmbeddingState, init_encoder_params, run_encoder
from .featurize import MolBatch, init_featurize_params, initial_embeddings, mol_arrays, pad_batch
from .geometry import FitParams, distance_fit
from .losses import confidence_logits, init_confidence_params
from .structure import Pose, init_pose_batch, init_structure_params, run_structure
from .weights import Initializer, ParamStore, load_weights, save_weights

CONFIG_KEY = "__config_json__"


@dataclass
class ForwardResult:
    lig_state: EmbeddingState
    poc_state: EmbeddingState
    complex_state: ComplexState
    dist: DistancePrediction
    intra_sym: Tensor              # symmetrized, zero-diagonal intra distances
    conf_logits_intra: Tensor
    conf_logits_inter: Tensor
    pose: Pose | None
    lig_batch: MolBatch
    poc_batch: MolBatch
    start_coords: np.ndarray       # (B, N, 3) initial placement


def build_params(config: ModelConfig) -> ParamStore:
    store = ParamStore()
    init = Initializer(config.seed)
    for prefix in ("enc_lig", "enc_poc"):
        init_featurize_params(store, prefix, init, config)
        init_encoder_params(store, prefix, init, config)
    init_binding_params(store, init, config)
    init_structure_params(store, init, config)
    init_confidence_params(store, init, config)
    return store


class DockingModel:
    def __init__(self, config: ModelConfig, params: ParamStore | None = None):
        self.config = config
        self.params = params if params is not None else build_params(config)

    # -- persistence ------------------------------------------------------

    def save(self, path):
        blob = json.dumps(self.config.to_dict()).encode("utf-8")
        self.params[CONFIG_KEY] = Tensor(np.frombuffer(blob, dtype=np.uint8).astype(np.float64))
        try:
            save_weights(self.params, path)
        finally:
            self.params.pop(CONFIG_KEY)

    @classmethod
    def load(cls, path) -> "DockingModel":
        store = load_weights(path)
        if CONFIG_KEY not in store:
            raise ValueError(f"{path}: weights file carries no model config entry")
        blob = bytes(store.pop(CONFIG_KEY).data.astype(np.uint8))
        config = ModelConfig.from_dict(json.loads(blob.decode("utf-8")))
        return cls(config, store)

    # -- forward passes ---------------------------------------------------

    def encode(self, lig_batch: MolBatch, poc_batch: MolBatch):
        cfg = self.config
        lig_atoms, lig_pairs = initial_embeddings(lig_batch, self.params, "enc_lig", cfg)
        poc_atoms, poc_pairs = initial_embeddings(poc_batch, self.params, "enc_poc", cfg)
        lig_state = run_encoder(lig_atoms, lig_pairs, lig_batch.mask, self.params,
                                "enc_lig", cfg, talking=cfg.use_talking_head)
        poc_state = run_encoder(poc_atoms, poc_pairs, poc_batch.mask, self.params,
                                "enc_poc", cfg,
                                talking=cfg.use_talking_head and cfg.talking_head_pocket)
        return lig_state, poc_state

    def forward(self, lig_batch: MolBatch, poc_batch: MolBatch, decode: bool = True) -> ForwardResult:
        cfg = self.config
        lig_state, poc_state = self.encode(lig_batch, poc_batch)
        complex0 = assemble_complex(lig_state, poc_state)
        complex_state = run_binding(complex0, self.params, cfg, talking=cfg.use_talking_head)
        dist = distance_heads(complex_state, self.params, cfg)
        intra_sym = dist.intra_symmetrized()
        conf_li, conf_lp = self._confidence(complex_state)

        start = init_pose_batch(lig_batch.coords, lig_batch.mask,
                                poc_batch.coords, poc_batch.mask)
        pose = None
        if decode and cfg.end_to_end_decode:
            pose = run_structure(complex_state, start, poc_batch.coords,
                                 self.params, cfg)
        return ForwardResult(
            lig_state=lig_state,
            poc_state=poc_state,
            complex_state=complex_state,
            dist=dist,
            intra_sym=intra_sym,
            conf_logits_intra=conf_li,
            conf_logits_inter=conf_lp,
            pose=pose,
            lig_batch=lig_batch,
            poc_batch=poc_batch,
            start_coords=start,
        )

    def _confidence(self, state: ComplexState):
        """Per-pair confidence logits for the ligand-ligand and ligand-pocket blocks."""
        psi_ll = state.pair_block("lig", "lig")
        psi_lp = state.pair_block("lig", "poc")
        psi_pl = state.pair_block("poc", "lig")
        if not self.config.conf_uses_atoms:
            return (
                confidence_logits(psi_ll, self.params, features_rev=psi_ll),
                confidence_logits(psi_lp, self.params, features_rev=psi_pl),
            )
        c_lig, c_poc = state.ligand_atoms(), state.pocket_atoms()
        n, m = state.n_ligand, state.n_pocket
        feat_ll = ag.concat([expand_rows(c_lig, n), expand_cols(c_lig, n), psi_ll], axis=-1)
        feat_lp = ag.concat([expand_rows(c_lig, m), expand_cols(c_poc, n), psi_lp], axis=-1)
        feat_pl = ag.concat([expand_rows(c_poc, n), expand_cols(c_lig, m), psi_pl], axis=-1)
        return (
            confidence_logits(feat_ll, self.params, features_rev=feat_ll),
            confidence_logits(feat_lp, self.params, features_rev=feat_pl),
        )

    def forward_graphs(self, ligands: list, pockets: list, decode: bool = True) -> ForwardResult:
        """Featurize graphs (ligands placed at their pocket centroids) and run."""
        cfg = self.config
        placed = []
        for lig, poc in zip(ligands, pockets):
            shift = poc.coords.mean(axis=0) - lig.coords.mean(axis=0)
            placed.append(lig.with_coords(lig.coords + shift))
        lig_batch = pad_batch([mol_arrays(g, cfg) for g in placed])
        poc_batch = pad_batch([mol_arrays(g, cfg) for g in pockets])
        return self.forward(lig_batch, poc_batch, decode=decode)

    def decode_distance_fit(self, result: ForwardResult, ligands: list, pockets: list,
                            params: FitParams | None = None) -> list:
        """The iterative baseline decoder, one optimization per complex."""
        out = []
        intra = result.intra_sym.data
        inter = np.maximum(result.dist.inter.data, 0.0)
        for b, (lig, poc) in enumerate(zip(ligands, pockets)):
            n, m = lig.n_atoms, poc.n_atoms
            fit = distance_fit(np.maximum(intra[b, :n, :n], 0.0), inter[b, :n, :m],
                               lig, poc, params)
            out.append(fit.coords)
        return out
