"""Freeze/update masks over (block, module kind) pairs and the trial search space."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("mhsa", "mlp", "ln")
DEFAULT_LR_RANGE = (1e-5, 1e-1)


@dataclass(frozen=True, eq=False)
class Mask:
    """``bits[b, k]`` is True when module kind ``KINDS[k]`` of block ``b`` is updated."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[1] != len(KINDS) or bits.shape[0] < 1:
            raise ConfigError(f"mask must have shape (n_blocks, {len(KINDS)}), got {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def n_blocks(self) -> int:
        return self.bits.shape[0]

    def selects(self, block: int, kind: str) -> bool:
        return bool(self.bits[block, KINDS.index(kind)])

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        return isinstance(other, Mask) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes() + bytes([self.n_blocks]))

    def __repr__(self):
        return f"Mask({encode(self)!r})"


def full_ft(n_blocks: int) -> Mask:
    return Mask(np.ones((n_blocks, len(KINDS)), dtype=bool))


def linear_readout(n_blocks: int) -> Mask:
    return Mask(np.zeros((n_blocks, len(KINDS)), dtype=bool))


def _column(n_blocks: int, kind: str) -> Mask:
    bits = np.zeros((n_blocks, len(KINDS)), dtype=bool)
    bits[:, KINDS.index(kind)] = True
    return Mask(bits)


def attention_only(n_blocks: int) -> Mask:
    return _column(n_blocks, "mhsa")


def layernorm_only(n_blocks: int) -> Mask:
    return _column(n_blocks, "ln")


NAMED_MASKS = {
    "full_ft": full_ft,
    "linear_readout": linear_readout,
    "attention_only": attention_only,
    "layernorm_only": layernorm_only,
}


@dataclass(frozen=True)
class SearchSpace:
    n_blocks: int = 12
    kinds: tuple = KINDS
    lr_range: tuple = DEFAULT_LR_RANGE

    def __post_init__(self):
        kinds = tuple(self.kinds)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "lr_range", tuple(float(v) for v in self.lr_range))
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be positive")
        if not kinds or any(k not in KINDS for k in kinds) or len(set(kinds)) != len(kinds):
            raise ConfigError(f"searched kinds must be a nonempty subset of {KINDS}")
        lo, hi = self.lr_range
        if not 0 < lo < hi:
            raise ConfigError("lr_range must satisfy 0 < lo < hi")

    @property
    def kind_columns(self) -> list[int]:
        # Kind-minor order always follows KINDS, regardless of how kinds were listed.
        return [KINDS.index(k) for k in KINDS if k in self.kinds]

    @property
    def n_bits(self) -> int:
        return self.n_blocks * len(self.kinds)

    def contains(self, mask: Mask) -> bool:
        if mask.n_blocks != self.n_blocks:
            return False
        off = [c for c in range(len(KINDS)) if c not in self.kind_columns]
        return not mask.bits[:, off].any()

    def flat_bits(self, mask: Mask) -> np.ndarray:
        """Searched bits as a flat vector, block-major."""
        return mask.bits[:, self.kind_columns].reshape(-1)

    def mask_from_flat(self, flat) -> Mask:
        flat = np.asarray(flat, dtype=bool)
        if flat.shape != (self.n_bits,):
            raise ConfigError(f"expected {self.n_bits} bits, got {flat.shape}")
        bits = np.zeros((self.n_blocks, len(KINDS)), dtype=bool)
        bits[:, self.kind_columns] = flat.reshape(self.n_blocks, len(self.kind_columns))
        return Mask(bits)


@dataclass(frozen=True)
class TrialConfig:
    mask: Mask
    learning_rate: float

    def to_dict(self) -> dict:
        return {"mask": encode(self.mask), "lr": float(self.learning_rate)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TrialConfig":
        return cls(mask_from_string(d["mask"]), float(d["lr"]))


def encode(mask: Mask, space: SearchSpace | None = None) -> str:
    """Block-major, kind-minor (mhsa, mlp, ln) bit string; restricted to the searched kinds of ``space``."""
    flat = mask.bits.reshape(-1) if space is None else space.flat_bits(mask)
    return "".join("1" if b else "0" for b in flat)


def decode(bits: str, space: SearchSpace) -> Mask:
    if len(bits) != space.n_bits:
        raise ConfigError(f"bit string has length {len(bits)}, space expects {space.n_bits}")
    if set(bits) - {"0", "1"}:
        raise ConfigError("bit string may only contain 0 and 1")
    return space.mask_from_flat([c == "1" for c in bits])


def mask_from_string(bits: str) -> Mask:
    """Inverse of ``encode(mask)`` for a full (all kinds) bit string."""
    if len(bits) % len(KINDS) or not bits:
        raise ConfigError(f"full mask string length must be a multiple of {len(KINDS)}")
    return decode(bits, SearchSpace(n_blocks=len(bits) // len(KINDS)))


def sample_prior(space: SearchSpace, rng: np.random.Generator) -> TrialConfig:
    flat = rng.random(space.n_bits) < 0.5
    lo, hi = space.lr_range
    lr = 10.0 ** rng.uniform(math.log10(lo), math.log10(hi))
    return TrialConfig(space.mask_from_flat(flat), float(min(max(lr, lo), hi)))
