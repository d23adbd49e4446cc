"""Model hyperparameters and the desk/paper presets.

The reference architecture stacks L_e=15, L_b=4, L_s=8 layers; the desk
preset shrinks them so the full pipeline trains on a laptop-class CPU.
Width d, head count H and kernel count K are open hyperparameters.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class ModelConfig:
    d: int = 64                 # atom embedding width
    H: int = 8                  # attention heads; pair channels equal H
    L_e: int = 4                # encoder blocks per molecule encoder
    L_b: int = 2                # binding blocks
    L_s: int = 4                # structure (decoder) layers
    spd_max: int = 15           # shortest-path clip for the embedding table
    K: int = 16                 # Gaussian kernel count
    d_sin: int = 48             # sinusoid width before the reducing MLP
    gauss_max_mu: float = 10.0  # kernel means span [0, gauss_max_mu] Angstrom
    gauss_sigma: float = 1.0
    standard_gaussian: bool = False  # True switches to the textbook normal pdf
    use_gpe: bool = True
    use_2d: bool = True
    use_talking_head: bool = True
    talking_head_pocket: bool = False  # scheme was motivated for the ligand side
    end_to_end_decode: bool = True
    # Confidence head input: pair reps alone are too thin to calibrate the
    # distance-difference bins at desk scale, so the atom embeddings of the
    # pair ride along by default (same features the distance heads see).
    conf_uses_atoms: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d % self.H != 0:
            raise ValueError(f"d={self.d} must be divisible by H={self.H}")
        if self.H % 2 != 0:
            raise ValueError(f"H={self.H} must be even (pair features split in half)")
        if min(self.L_e, self.L_b, self.L_s) < 1:
            raise ValueError("layer counts must be >= 1")
        if self.d_sin % 6 != 0:
            raise ValueError(f"d_sin={self.d_sin} must be divisible by 6 (three even axes)")

    @property
    def d_pair(self) -> int:
        return self.H

    @property
    def gauss_mu(self) -> np.ndarray:
        return np.linspace(0.0, self.gauss_max_mu, self.K)

    @property
    def gauss_sigmas(self) -> np.ndarray:
        return np.full(self.K, self.gauss_sigma)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in payload.items() if k in cls.__dataclass_fields__})


def desk_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides)


def paper_config(**overrides) -> ModelConfig:
    base = dict(L_e=15, L_b=4, L_s=8)
    base.update(overrides)
    return ModelConfig(**base)


def toy_config(**overrides) -> ModelConfig:
    """The small dimensions used by gradient-integrity checks."""
    base = dict(d=32, H=4, L_e=2, L_b=1, L_s=2, K=8)
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    patience: int = 20
    batch_size: int = 8
    phase1_steps: int = 500
    phase2_steps: int = 500
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1   # 9:1 train/validation partition

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in payload.items() if k in cls.__dataclass_fields__})
