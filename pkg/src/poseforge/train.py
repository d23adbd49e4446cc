"""Two-phase training on synthetic desk-scale complexes.

Phase 1 fits the distance heads through the encoders and binding stack;
phase 2 optimizes the full objective (distances + coordinates + weighted
confidence) end to end with early stopping on a 9:1 validation split. The
synthetic generator plants a ground-truth pose whose closest ligand-pocket
contact lies in [2.5, 5] Angstrom.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .config import ModelConfig, TrainConfig
from .featurize import MolBatch, mol_arrays, pad_batch
from .losses import LossBreakdown, conf_loss, coord_loss, ddt_true, dist_loss, pair_masks
from .model import DockingModel, ForwardResult
from .molio import MoleculeGraph
from .weights import ParamStore

CONTACT_MIN = 2.5
CONTACT_MAX = 5.0


class GenerationError(RuntimeError):
    """Constraint satisfaction failed while building a synthetic complex."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the offending step in the message."""


@dataclass
class SyntheticComplex:
    ligand: MoleculeGraph        # centered input conformer
    pocket: MoleculeGraph
    gt_coords: np.ndarray        # (N, 3) planted pose, pocket frame
    gt_intra: np.ndarray         # (N, N)
    gt_inter: np.ndarray         # (N, M)
    seed: int
    _cache: dict = field(default_factory=dict, repr=False)

    def arrays(self, config: ModelConfig):
        """Featurization precursors with the ligand placed at the pocket centroid."""
        key = tuple(sorted(config.to_dict().items()))
        if key not in self._cache:
            shift = self.pocket.coords.mean(axis=0) - self.ligand.coords.mean(axis=0)
            placed = self.ligand.with_coords(self.ligand.coords + shift)
            self._cache[key] = (mol_arrays(placed, config), mol_arrays(self.pocket, config))
        return self._cache[key]


def _grow_ligand(rng: np.random.Generator, n: int):
    """Tree-plus-ring heavy-atom graph with bond lengths in [1.3, 1.6]."""
    coords: list = []
    bonds: list = []
    if n >= 6 and rng.random() < 0.5:
        side = rng.uniform(1.35, 1.45)
        radius = side / (2 * np.sin(np.pi / 6))
        for k in range(6):
            ang = np.pi / 3 * k
            coords.append(np.array([radius * np.cos(ang), radius * np.sin(ang), 0.0]))
        ring_type = "aromatic" if rng.random() < 0.7 else "single"
        bonds.extend((k, (k + 1) % 6, ring_type) for k in range(6))
    else:
        coords.append(np.zeros(3))

    attempts = 0
    while len(coords) < n:
        attempts += 1
        if attempts > 400 * n:
            raise GenerationError(f"could not grow a {n}-atom ligand")
        parent = int(rng.integers(len(coords)))
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        candidate = coords[parent] + direction * rng.uniform(1.3, 1.6)
        clear = all(
            np.linalg.norm(candidate - c) >= 1.5
            for idx, c in enumerate(coords) if idx != parent
        )
        if clear and np.linalg.norm(candidate - coords[parent]) >= 1.3:
            bond_type = "double" if rng.random() < 0.15 else "single"
            bonds.append((parent, len(coords), bond_type))
            coords.append(candidate)

    elements = rng.choice(["C", "N", "O"], size=n, p=[0.7, 0.15, 0.15])
    return np.array(coords), bonds, list(elements)


def _grow_pocket(rng: np.random.Generator, m: int, shell_radius: float):
    """Clustered point cloud on a shell; chain spacing keeps bonds inferable."""
    coords = []
    while len(coords) < m:
        center_dir = rng.standard_normal(3)
        center_dir /= np.linalg.norm(center_dir)
        center = center_dir * shell_radius
        cluster = min(int(rng.integers(2, 5)), m - len(coords))
        pos = center
        for _ in range(cluster):
            coords.append(pos)
            step = rng.standard_normal(3)
            step /= np.linalg.norm(step)
            pos = pos + step * rng.uniform(1.4, 1.5)
    elements = rng.choice(["C", "N", "O", "S"], size=m, p=[0.55, 0.2, 0.2, 0.05])
    return np.array(coords[:m]), list(elements)


def place_ligand(lig_coords: np.ndarray, poc_coords: np.ndarray,
                 rng: np.random.Generator, tries: int = 200):
    """Random rigid translation putting the closest contact in the window.

    Returns the placed coordinates, or None when no offset satisfies the
    [CONTACT_MIN, CONTACT_MAX] constraint within the try budget.
    """
    centered = lig_coords - lig_coords.mean(axis=0)
    lig_radius = np.linalg.norm(centered, axis=1).max()
    poc_center = poc_coords.mean(axis=0)
    poc_radius = np.linalg.norm(poc_coords - poc_center, axis=1).max()
    for _ in range(tries):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        offset = poc_center + direction * rng.uniform(0.0, max(poc_radius - lig_radius, 0.5))
        candidate = centered + offset
        contact = np.linalg.norm(
            candidate[:, None, :] - poc_coords[None, :, :], axis=-1
        ).min()
        if CONTACT_MIN <= contact <= CONTACT_MAX:
            return candidate
    return None


def synth_complex(seed: int, n_min: int = 3, n_max: int = 24,
                  m_min: int = 6, m_max: int = 48) -> SyntheticComplex:
    """Deterministically generate one synthetic complex for the given seed."""
    if not (3 <= n_min <= n_max <= 24 and 6 <= m_min <= m_max <= 48):
        raise ValueError("size parameters outside the supported desk-scale ranges")
    from .molio import element_index, infer_covalent_bonds

    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_min, n_max + 1))
    m = int(rng.integers(m_min, m_max + 1))
    lig_coords, bonds, lig_elements = _grow_ligand(rng, n)
    lig_coords = lig_coords - lig_coords.mean(axis=0)
    lig_radius = np.linalg.norm(lig_coords, axis=1).max()

    for _ in range(60):
        shell = lig_radius + rng.uniform(3.5, 6.0)
        poc_coords, poc_elements = _grow_pocket(rng, m, shell)
        gt = None
        for _ in range(200):
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            offset = direction * rng.uniform(0.0, max(shell - lig_radius, 0.5))
            candidate = lig_coords + offset
            contact = np.linalg.norm(
                candidate[:, None, :] - poc_coords[None, :, :], axis=-1
            ).min()
            if CONTACT_MIN <= contact <= CONTACT_MAX:
                gt = candidate
                break
        if gt is not None:
            break
    else:
        raise GenerationError(f"no placement satisfied the contact window for seed {seed}")

    ligand = MoleculeGraph(
        atom_types=[element_index(e) for e in lig_elements],
        coords=lig_coords,
        bonds=bonds,
        elements=lig_elements,
        name=f"synth{seed}",
    )
    pocket = MoleculeGraph(
        atom_types=[element_index(e) for e in poc_elements],
        coords=poc_coords,
        bonds=infer_covalent_bonds(poc_coords),
        is_pocket=True,
        elements=poc_elements,
        name=f"pocket{seed}",
    )
    gt_intra = np.linalg.norm(gt[:, None, :] - gt[None, :, :], axis=-1)
    gt_inter = np.linalg.norm(gt[:, None, :] - poc_coords[None, :, :], axis=-1)
    return SyntheticComplex(
        ligand=ligand, pocket=pocket, gt_coords=gt,
        gt_intra=gt_intra, gt_inter=gt_inter, seed=seed,
    )


def synth_binder(seed: int, pocket: MoleculeGraph, n_min: int = 4,
                 n_max: int = 12) -> SyntheticComplex:
    """Grow a ligand and plant it inside an existing pocket.

    Used to build screening libraries with known binders for one target.
    """
    from .molio import element_index

    rng = np.random.default_rng(seed)
    for _ in range(40):
        n = int(rng.integers(n_min, n_max + 1))
        lig_coords, bonds, lig_elements = _grow_ligand(rng, n)
        lig_coords = lig_coords - lig_coords.mean(axis=0)
        gt = place_ligand(lig_coords, pocket.coords, rng)
        if gt is not None:
            break
    else:
        raise GenerationError(f"no binder placement found for seed {seed}")
    ligand = MoleculeGraph(
        atom_types=[element_index(e) for e in lig_elements],
        coords=lig_coords,
        bonds=bonds,
        elements=lig_elements,
        name=f"binder{seed}",
    )
    gt_intra = np.linalg.norm(gt[:, None, :] - gt[None, :, :], axis=-1)
    gt_inter = np.linalg.norm(gt[:, None, :] - pocket.coords[None, :, :], axis=-1)
    return SyntheticComplex(ligand=ligand, pocket=pocket, gt_coords=gt,
                            gt_intra=gt_intra, gt_inter=gt_inter, seed=seed)


def make_dataset(n_complexes: int, base_seed: int = 0, **size_params) -> list:
    return [synth_complex(base_seed + k, **size_params) for k in range(n_complexes)]


# ---------------------------------------------------------------------------
# Batch assembly
# ---------------------------------------------------------------------------

@dataclass
class ComplexBatch:
    lig: MolBatch
    poc: MolBatch
    gt_coords: np.ndarray
    gt_intra: np.ndarray
    gt_inter: np.ndarray
    complexes: list


def make_batch(complexes: list, config: ModelConfig) -> ComplexBatch:
    lig_arrays, poc_arrays = zip(*[c.arrays(config) for c in complexes])
    lig = pad_batch(list(lig_arrays))
    poc = pad_batch(list(poc_arrays))
    b, n, m = len(complexes), lig.max_atoms, poc.max_atoms
    gt_coords = np.zeros((b, n, 3))
    gt_intra = np.zeros((b, n, n))
    gt_inter = np.zeros((b, n, m))
    for k, c in enumerate(complexes):
        cn, cm = c.ligand.n_atoms, c.pocket.n_atoms
        gt_coords[k, :cn] = c.gt_coords
        gt_intra[k, :cn, :cn] = c.gt_intra
        gt_inter[k, :cn, :cm] = c.gt_inter
    return ComplexBatch(lig=lig, poc=poc, gt_coords=gt_coords,
                        gt_intra=gt_intra, gt_inter=gt_inter, complexes=complexes)


def batch_losses(result: ForwardResult, batch: ComplexBatch, phase: int):
    """Loss tensor for the phase plus the float breakdown."""
    lm, pm = batch.lig.mask, batch.poc.mask
    intra, inter = dist_loss(result.intra_sym, result.dist.inter,
                             batch.gt_intra, batch.gt_inter, lm, pm)
    loss = ag.add(intra, inter)
    coord = conf = ag.constant(0.0)
    if phase == 2:
        coord = coord_loss(result.pose.final, batch.gt_coords, lm)
        valid_intra, valid_inter = pair_masks(lm, pm)
        ddt_i, keep_i = ddt_true(result.intra_sym.data, batch.gt_intra)
        ddt_e, keep_e = ddt_true(result.dist.inter.data, batch.gt_inter)
        conf = conf_loss(result.conf_logits_intra, result.conf_logits_inter,
                         ddt_i, ddt_e, keep_i * valid_intra, keep_e * valid_inter)
        loss = ag.add(loss, ag.add(coord, ag.mul(conf, 0.01)))
    parts = LossBreakdown(
        intradist=float(intra.data), interdist=float(inter.data),
        coord=float(coord.data), conf=float(conf.data),
    )
    return loss, parts


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: ParamStore, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected moment update over every parameter holding a grad."""
    state.step += 1
    t = state.step
    for name, tensor in store.items():
        g = tensor.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        v = state.v[name]
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

class LossLog:
    COLUMNS = ("step", "phase", "intradist", "interdist", "coord", "conf", "total")

    def __init__(self):
        self.rows = []

    def add(self, step: int, phase: int, parts: LossBreakdown):
        self.rows.append((step, phase, parts.intradist, parts.interdist,
                          parts.coord, parts.conf, parts.total))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            writer.writerows(self.rows)


def _batches(dataset: list, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(dataset))
    for lo in range(0, len(dataset), batch_size):
        yield [dataset[i] for i in order[lo:lo + batch_size]]


def _check_finite(value: float, step: int, phase: int):
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss at phase {phase} step {step}")


def train_phase1(dataset: list, tconfig: TrainConfig, model: DockingModel,
                 log: LossLog | None = None) -> LossLog:
    """Minimize the distance loss only; structure weights are never touched."""
    log = log if log is not None else LossLog()
    rng = np.random.default_rng(tconfig.seed)
    adam = AdamState()
    step = 0
    while step < tconfig.phase1_steps:
        for chunk in _batches(dataset, tconfig.batch_size, rng):
            if step >= tconfig.phase1_steps:
                break
            batch = make_batch(chunk, model.config)
            result = model.forward(batch.lig, batch.poc, decode=False)
            loss, parts = batch_losses(result, batch, phase=1)
            _check_finite(parts.total, step, 1)
            model.params.zero_grads()
            ag.backward(loss)
            adam_step(model.params, adam, tconfig.lr, tconfig.beta1, tconfig.beta2, tconfig.eps)
            log.add(step, 1, parts)
            step += 1
    model.params.zero_grads()
    return log


def _validation_loss(model: DockingModel, val_batches: list) -> float:
    total = 0.0
    with ag.no_grad():
        for batch in val_batches:
            result = model.forward(batch.lig, batch.poc, decode=True)
            _, parts = batch_losses(result, batch, phase=2)
            total += parts.total
    return total / max(len(val_batches), 1)


def _snapshot(store: ParamStore) -> dict:
    return {name: t.data.copy() for name, t in store.items()}


def _restore(store: ParamStore, snap: dict):
    for name, arr in snap.items():
        store[name].data = arr.copy()


def train_phase2(dataset: list, tconfig: TrainConfig, model: DockingModel,
                 log: LossLog | None = None) -> LossLog:
    """Minimize the full objective end to end with early stopping.

    The dataset is split 9:1 (train:validation); training halts when the
    validation total has not improved for ``patience`` consecutive epochs,
    restoring the best-validation weights.
    """
    log = log if log is not None else LossLog()
    if tconfig.phase2_steps <= 0:
        return log
    rng = np.random.default_rng(tconfig.seed + 1)
    use_val = len(dataset) > 1 and tconfig.val_fraction > 0
    n_val = max(1, int(round(len(dataset) * tconfig.val_fraction))) if use_val else 0
    order = rng.permutation(len(dataset))
    val_set = [dataset[i] for i in order[:n_val]]
    train_set = [dataset[i] for i in order[n_val:]] or list(dataset)
    val_batches = [
        make_batch(val_set[lo:lo + tconfig.batch_size], model.config)
        for lo in range(0, len(val_set), tconfig.batch_size)
    ]

    adam = AdamState()
    step = 0
    best_val = np.inf
    best_snap = _snapshot(model.params)
    stall = 0
    while step < tconfig.phase2_steps:
        for chunk in _batches(train_set, tconfig.batch_size, rng):
            if step >= tconfig.phase2_steps:
                break
            batch = make_batch(chunk, model.config)
            result = model.forward(batch.lig, batch.poc, decode=True)
            loss, parts = batch_losses(result, batch, phase=2)
            _check_finite(parts.total, step, 2)
            model.params.zero_grads()
            ag.backward(loss)
            adam_step(model.params, adam, tconfig.lr, tconfig.beta1, tconfig.beta2, tconfig.eps)
            log.add(step, 2, parts)
            step += 1
        if val_batches:
            val = _validation_loss(model, val_batches)
            if val < best_val - 1e-12:
                best_val = val
                best_snap = _snapshot(model.params)
                stall = 0
            else:
                stall += 1
                if stall >= tconfig.patience:
                    break
    if val_batches:
        _restore(model.params, best_snap)
    model.params.zero_grads()
    return log


def train(dataset: list, tconfig: TrainConfig, model: DockingModel,
          phase: str = "both") -> LossLog:
    log = LossLog()
    if phase in ("1", "both"):
        train_phase1(dataset, tconfig, model, log)
    if phase in ("2", "both"):
        train_phase2(dataset, tconfig, model, log)
    return log
