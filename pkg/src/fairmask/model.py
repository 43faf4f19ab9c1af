"""Pre-norm residual block network with delta parameterisation and manual gradients.

Every maskable tensor has a frozen base value and a learned delta. The value used
in the forward pass is ``base + delta`` for modules the mask selects and ``base``
otherwise. The stem is never updated and the classification head always is.

Block layout (``x`` is the residual stream)::

    x = x + MIX(LN1(x))          # MIX: dense d_model -> d_model, stands in for attention
    x = x + MLP(LN2(x))          # MLP: dense -> GELU (tanh form) -> dense
"""
from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, NumericError, StaleCacheError
from .search_space import KINDS, Mask

LN_EPS = 1e-5
GELU_C = 0.7978845608  # sqrt(2 / pi)
GELU_A = 0.044715
CHECKPOINT_VERSION = 1

# tensor suffix -> module kind controlled by the mask
BLOCK_TENSORS = {
    "ln1.g": "ln", "ln1.b": "ln",
    "mix.W": "mhsa", "mix.b": "mhsa",
    "ln2.g": "ln", "ln2.b": "ln",
    "mlp.W1": "mlp", "mlp.b1": "mlp", "mlp.W2": "mlp", "mlp.b2": "mlp",
}
HEAD_TENSORS = ("head.W", "head.b")
STEM_TENSORS = ("stem.W", "stem.b")


@dataclass(frozen=True)
class Architecture:
    d_in: int
    d_model: int = 16
    n_blocks: int = 12
    mlp_hidden: int = 32
    n_classes: int = 2

    def __post_init__(self):
        if min(self.d_in, self.d_model, self.n_blocks, self.mlp_hidden) < 1:
            raise ConfigError("architecture sizes must be positive")
        if self.n_classes != 2:
            raise ConfigError("only binary classification (n_classes=2) is supported")

    def shapes(self) -> dict[str, tuple]:
        d, h = self.d_model, self.mlp_hidden
        out = {"stem.W": (self.d_in, d), "stem.b": (d,)}
        per_block = {
            "ln1.g": (d,), "ln1.b": (d,),
            "mix.W": (d, d), "mix.b": (d,),
            "ln2.g": (d,), "ln2.b": (d,),
            "mlp.W1": (d, h), "mlp.b1": (h,), "mlp.W2": (h, d), "mlp.b2": (d,),
        }
        for i in range(self.n_blocks):
            for k, s in per_block.items():
                out[f"blocks.{i}.{k}"] = s
        out["head.W"] = (d, self.n_classes)
        out["head.b"] = (self.n_classes,)
        return out

    def delta_names(self) -> list[str]:
        return [k for k in self.shapes() if not k.startswith("stem.")]


def module_kind(name: str) -> str | None:
    """Mask kind governing tensor ``name``; ``None`` for stem and head."""
    if name.startswith("blocks."):
        return BLOCK_TENSORS[name.split(".", 2)[2]]
    return None


def block_index(name: str) -> int:
    return int(name.split(".")[1])


@dataclass(eq=False)
class ModelParams:
    """Frozen base tensors plus learned deltas.

    ``version`` is bumped whenever the deltas are modified in place, which
    invalidates forward caches produced earlier.
    """

    arch: Architecture
    base: dict
    delta: dict
    version: int = 0

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            {k: v.copy() for k, v in self.base.items()},
            {k: v.copy() for k, v in self.delta.items()},
        )

    def with_zero_delta(self) -> "ModelParams":
        return ModelParams(self.arch, self.base, {k: np.zeros_like(v) for k, v in self.delta.items()})

    def merged(self, mask: Mask) -> "ModelParams":
        """Fold the masked deltas into a new base with zero delta."""
        return ModelParams(self.arch, effective_params(self, mask), zero_delta(self.arch))

    def equals(self, other: "ModelParams") -> bool:
        return (
            self.arch == other.arch
            and self.base.keys() == other.base.keys()
            and self.delta.keys() == other.delta.keys()
            and all(np.array_equal(self.base[k], other.base[k]) for k in self.base)
            and all(np.array_equal(self.delta[k], other.delta[k]) for k in self.delta)
        )


def zero_delta(arch: Architecture) -> dict:
    shapes = arch.shapes()
    return {k: np.zeros(shapes[k]) for k in arch.delta_names()}


def init_random(arch: Architecture, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    base = {}
    for name, shape in arch.shapes().items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "g":
            base[name] = np.ones(shape)
        elif leaf.startswith("b"):
            base[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            base[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(arch, base, zero_delta(arch))


def _check_mask(p: ModelParams, mask: Mask):
    if mask.n_blocks != p.arch.n_blocks:
        raise ConfigError(f"mask has {mask.n_blocks} blocks, architecture has {p.arch.n_blocks}")


def effective_params(p: ModelParams, mask: Mask) -> dict:
    _check_mask(p, mask)
    out = {}
    for name, base in p.base.items():
        if name in HEAD_TENSORS:
            out[name] = base + p.delta[name]
        elif name.startswith("blocks.") and mask.selects(block_index(name), module_kind(name)):
            out[name] = base + p.delta[name]
        else:
            out[name] = base
    return out


def _gelu_tanh(u):
    u2 = u * u
    return np.tanh(GELU_C * u * (1.0 + GELU_A * u2))


def gelu(u):
    return 0.5 * u * (1.0 + _gelu_tanh(u))


def gelu_grad(u, t=None):
    """Derivative of :func:`gelu`; pass ``t`` to reuse the forward tanh."""
    if t is None:
        t = _gelu_tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)


def _ln_forward(x, g, b):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, xhat, inv


def _ln_backward(dy, g, xhat, inv):
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


@dataclass
class ForwardCache:
    params: ModelParams
    version: int
    mask_bits: bytes
    eff: dict
    x: np.ndarray
    blocks: list = field(default_factory=list)
    final: np.ndarray | None = None


def forward(p: ModelParams, mask: Mask, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.arch.d_in:
        raise ConfigError(f"input must have shape (b, {p.arch.d_in}), got {x.shape}")
    eff = effective_params(p, mask)
    cache = ForwardCache(p, p.version, mask.bits.tobytes(), eff, x)
    h = x @ eff["stem.W"] + eff["stem.b"]
    if not np.isfinite(h).all():
        raise NumericError("non-finite activation", layer=-1)
    for i in range(p.arch.n_blocks):
        pre = f"blocks.{i}."
        a, xhat1, inv1 = _ln_forward(h, eff[pre + "ln1.g"], eff[pre + "ln1.b"])
        h_mid = h + a @ eff[pre + "mix.W"] + eff[pre + "mix.b"]
        c, xhat2, inv2 = _ln_forward(h_mid, eff[pre + "ln2.g"], eff[pre + "ln2.b"])
        u = c @ eff[pre + "mlp.W1"] + eff[pre + "mlp.b1"]
        t = _gelu_tanh(u)
        v = 0.5 * u * (1.0 + t)
        h = h_mid + v @ eff[pre + "mlp.W2"] + eff[pre + "mlp.b2"]
        if not np.isfinite(h).all():
            raise NumericError("non-finite activation", layer=i)
        cache.blocks.append((a, xhat1, inv1, c, xhat2, inv2, u, t, v))
    cache.final = h
    logits = h @ eff["head.W"] + eff["head.b"]
    if not np.isfinite(logits).all():
        raise NumericError("non-finite activation", layer=p.arch.n_blocks)
    return logits, cache


def features(p: ModelParams, mask: Mask, x) -> np.ndarray:
    """Residual stream entering the head."""
    return forward(p, mask, x)[1].final


def predict_proba(p: ModelParams, mask: Mask, x) -> np.ndarray:
    """Positive-class softmax probability per row."""
    logits, _ = forward(p, mask, x)
    z = logits[:, 1] - logits[:, 0]
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def backward(p: ModelParams, mask: Mask, cache: ForwardCache, dlogits) -> dict:
    """Gradients w.r.t. the deltas of mask-selected modules and of the head.

    Unselected modules get no entry at all. Backpropagation stops below the
    lowest block that has a selected module.
    """
    if cache.params is not p or cache.version != p.version or cache.mask_bits != mask.bits.tobytes():
        raise StaleCacheError("forward cache does not match these params and mask")
    dlogits = np.asarray(dlogits, dtype=np.float64)
    eff = cache.eff
    grads = {
        "head.W": cache.final.T @ dlogits,
        "head.b": dlogits.sum(axis=0),
    }
    selected = np.flatnonzero(mask.bits.any(axis=1))
    if selected.size == 0:
        return grads
    lowest = int(selected.min())
    dh = dlogits @ eff["head.W"].T
    for i in range(p.arch.n_blocks - 1, lowest - 1, -1):
        pre = f"blocks.{i}."
        a, xhat1, inv1, c, xhat2, inv2, u, t, v = cache.blocks[i]
        upd_mix, upd_mlp, upd_ln = (mask.bits[i, KINDS.index(k)] for k in ("mhsa", "mlp", "ln"))
        # MLP branch
        if upd_mlp:
            grads[pre + "mlp.W2"] = v.T @ dh
            grads[pre + "mlp.b2"] = dh.sum(axis=0)
        du = (dh @ eff[pre + "mlp.W2"].T) * gelu_grad(u, t)
        if upd_mlp:
            grads[pre + "mlp.W1"] = c.T @ du
            grads[pre + "mlp.b1"] = du.sum(axis=0)
        dc = du @ eff[pre + "mlp.W1"].T
        dx2, dg2, db2 = _ln_backward(dc, eff[pre + "ln2.g"], xhat2, inv2)
        dh = dh + dx2
        # MIX branch
        if upd_mix:
            grads[pre + "mix.W"] = a.T @ dh
            grads[pre + "mix.b"] = dh.sum(axis=0)
        da = dh @ eff[pre + "mix.W"].T
        dx1, dg1, db1 = _ln_backward(da, eff[pre + "ln1.g"], xhat1, inv1)
        if upd_ln:
            grads[pre + "ln1.g"], grads[pre + "ln1.b"] = dg1, db1
            grads[pre + "ln2.g"], grads[pre + "ln2.b"] = dg2, db2
        dh = dh + dx1
    return grads


def save_checkpoint(p: ModelParams, path) -> None:
    meta = {"format_version": CHECKPOINT_VERSION, "arch": asdict(p.arch)}
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for k, v in p.base.items():
        arrays["base/" + k] = np.asarray(v, dtype=np.float64)
    for k, v in p.delta.items():
        arrays["delta/" + k] = np.asarray(v, dtype=np.float64)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    try:
        with np.load(io.BytesIO(raw), allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (zipfile.BadZipFile, ValueError, OSError, EOFError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"corrupt checkpoint {path}: missing metadata")
    try:
        meta = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: bad metadata") from exc
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {meta.get('format_version')} != {CHECKPOINT_VERSION}")
    arch = Architecture(**meta["arch"])
    base = {k[5:]: v for k, v in arrays.items() if k.startswith("base/")}
    delta = {k[6:]: v for k, v in arrays.items() if k.startswith("delta/")}
    shapes = arch.shapes()
    if set(base) != set(shapes) or set(delta) != set(arch.delta_names()):
        raise CheckpointError(f"corrupt checkpoint {path}: tensor set does not match architecture")
    for k, v in {**base, **{"delta:" + k: v for k, v in delta.items()}}.items():
        if v.shape != shapes[k.removeprefix("delta:")]:
            raise CheckpointError(f"corrupt checkpoint {path}: bad shape for {k}")
    return ModelParams(arch, base, delta)
