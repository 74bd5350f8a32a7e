"""LoRA-family parameterizations of a weight update.

Three families share one small interface (``delta_w``, ``forward``,
``backward``, ``trainable_params``/``set_params``, ``param_masks``):

* ``RavanAdapter``      sum_i s_i B_i H_i A_i with frozen bases, trainable cores/scales
* ``VanillaLoraAdapter`` B A (FFA-LoRA freezes A)
* ``FedSbAdapter``       B H A with frozen B, A

Gradients are returned as ``dict[str, ndarray]`` keyed like ``trainable_params``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

from . import linalg
from .errors import ShapeError

AdapterGradients = Dict[str, np.ndarray]

INIT_SCHEMES = ("random_normal", "gram_schmidt", "constant", "shared_subspace")
SHARED_SUBSPACE_MAX_COND = 1e4


def _check_io(d_out, d_in, w, x, upstream=None):
    if w.shape != (d_out, d_in):
        raise ShapeError(f"backbone weight is {w.shape}, adapter expects {(d_out, d_in)}")
    if x.ndim != 2 or x.shape[0] != d_in:
        raise ShapeError(f"input has shape {x.shape}, expected ({d_in}, batch)")
    if upstream is not None and upstream.shape != (d_out, x.shape[1]):
        raise ShapeError(f"upstream has shape {upstream.shape}, expected {(d_out, x.shape[1])}")


@dataclass
class RavanAdapter:
    bases_b: np.ndarray  # (h, d_out, r), frozen
    bases_a: np.ndarray  # (h, r, d_in), frozen
    cores: np.ndarray  # (h, r, r)
    scales: np.ndarray  # (h,)
    active_mask: np.ndarray  # (h,) bool
    trainable_scaling: bool = True

    @property
    def h(self) -> int:
        return self.cores.shape[0]

    @property
    def r(self) -> int:
        return self.cores.shape[1]

    @property
    def d_out(self) -> int:
        return self.bases_b.shape[1]

    @property
    def d_in(self) -> int:
        return self.bases_a.shape[2]

    def delta_w(self) -> np.ndarray:
        out = np.zeros((self.d_out, self.d_in))
        for i in range(self.h):
            out += self.scales[i] * (self.bases_b[i] @ self.cores[i] @ self.bases_a[i])
        return out

    def forward(self, w, x):
        _check_io(self.d_out, self.d_in, w, x)
        out = w @ x
        for i in range(self.h):
            out += self.scales[i] * (self.bases_b[i] @ (self.cores[i] @ (self.bases_a[i] @ x)))
        return out

    def product_grads(self, x, upstream) -> np.ndarray:
        """dL/d(s_i H_i) = B_i^T G A_i^T with G = upstream x^T, for every head."""
        out = np.empty_like(self.cores)
        for i in range(self.h):
            out[i] = (self.bases_b[i].T @ upstream) @ (self.bases_a[i] @ x).T
        return out

    def backward(self, w, x, upstream) -> AdapterGradients:
        _check_io(self.d_out, self.d_in, w, x, upstream)
        prod = self.product_grads(x, upstream)
        grad_cores = np.zeros_like(self.cores)
        grad_scales = np.zeros_like(self.scales)
        for i in np.flatnonzero(self.active_mask):
            grad_cores[i] = self.scales[i] * prod[i]
            if self.trainable_scaling:
                grad_scales[i] = np.sum(prod[i] * self.cores[i])
        grads = {"cores": grad_cores}
        if self.trainable_scaling:
            grads["scales"] = grad_scales
        return grads

    def trainable_params(self) -> Dict[str, np.ndarray]:
        params = {"cores": self.cores}
        if self.trainable_scaling:
            params["scales"] = self.scales
        return params

    def param_masks(self) -> Dict[str, np.ndarray]:
        masks = {"cores": np.broadcast_to(self.active_mask[:, None, None], self.cores.shape)}
        if self.trainable_scaling:
            masks["scales"] = self.active_mask.copy()
        return masks

    def set_params(self, params):
        self.cores = params["cores"]
        if "scales" in params:
            self.scales = params["scales"]


@dataclass
class VanillaLoraAdapter:
    b: np.ndarray  # (d_out, r)
    a: np.ndarray  # (r, d_in)
    freeze_a: bool = False

    @property
    def r(self) -> int:
        return self.b.shape[1]

    @property
    def d_out(self) -> int:
        return self.b.shape[0]

    @property
    def d_in(self) -> int:
        return self.a.shape[1]

    def delta_w(self) -> np.ndarray:
        return self.b @ self.a

    def forward(self, w, x):
        _check_io(self.d_out, self.d_in, w, x)
        return w @ x + self.b @ (self.a @ x)

    def backward(self, w, x, upstream) -> AdapterGradients:
        _check_io(self.d_out, self.d_in, w, x, upstream)
        grads = {"b": upstream @ (self.a @ x).T}
        if not self.freeze_a:
            grads["a"] = (self.b.T @ upstream) @ x.T
        return grads

    def trainable_params(self):
        if self.freeze_a:
            return {"b": self.b}
        return {"b": self.b, "a": self.a}

    def param_masks(self):
        return {}

    def set_params(self, params):
        self.b = params["b"]
        if "a" in params:
            self.a = params["a"]


@dataclass
class FedSbAdapter:
    b: np.ndarray  # (d_out, r), frozen
    core: np.ndarray  # (r, r)
    a: np.ndarray  # (r, d_in), frozen

    @property
    def r(self) -> int:
        return self.core.shape[0]

    @property
    def d_out(self) -> int:
        return self.b.shape[0]

    @property
    def d_in(self) -> int:
        return self.a.shape[1]

    def delta_w(self) -> np.ndarray:
        return self.b @ self.core @ self.a

    def forward(self, w, x):
        _check_io(self.d_out, self.d_in, w, x)
        out = w @ x
        out += self.b @ (self.core @ (self.a @ x))
        return out

    def backward(self, w, x, upstream) -> AdapterGradients:
        _check_io(self.d_out, self.d_in, w, x, upstream)
        return {"core": (self.b.T @ upstream) @ (self.a @ x).T}

    def trainable_params(self):
        return {"core": self.core}

    def param_masks(self):
        return {}

    def set_params(self, params):
        self.core = params["core"]


Adapter = Union[RavanAdapter, VanillaLoraAdapter, FedSbAdapter]


def delta_w(adapter: Adapter) -> np.ndarray:
    return adapter.delta_w()


def forward(adapter: Adapter, w, x) -> np.ndarray:
    return adapter.forward(linalg.as_matrix(w, "w"), linalg.as_matrix(x, "x"))


def backward(adapter: Adapter, w, x, upstream) -> AdapterGradients:
    return adapter.backward(
        linalg.as_matrix(w, "w"), linalg.as_matrix(x, "x"), linalg.as_matrix(upstream, "upstream")
    )


@dataclass(frozen=True)
class InitScheme:
    tag: str = "random_normal"
    sigma_b: Optional[float] = None  # default 1/sqrt(d_out)
    sigma_a: Optional[float] = None  # default 1/sqrt(d_in)

    def __post_init__(self):
        if self.tag not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.tag!r}; expected one of {INIT_SCHEMES}")


def _condition_number(m) -> float:
    sv = linalg.svd(m).singular_values
    return math.inf if sv[-1] == 0 else float(sv[0] / sv[-1])


def init_ravan(d_out, d_in, r, h, scheme: InitScheme, stream, trainable_scaling=True) -> RavanAdapter:
    """Build frozen bases for ``h`` heads of rank ``r``; cores start at zero, scales at one."""
    if r < 1 or h < 1:
        raise ShapeError(f"need r >= 1 and h >= 1, got r={r}, h={h}")
    sb = scheme.sigma_b if scheme.sigma_b is not None else 1.0 / math.sqrt(d_out)
    sa = scheme.sigma_a if scheme.sigma_a is not None else 1.0 / math.sqrt(d_in)

    if scheme.tag == "random_normal":
        bases_b = stream.standard_normal((h, d_out, r)) * sb
        bases_a = stream.standard_normal((h, r, d_in)) * sa
    elif scheme.tag == "gram_schmidt":
        if r * h > min(d_out, d_in):
            raise ShapeError(f"r*h = {r * h} exceeds min(d_out, d_in) = {min(d_out, d_in)}")
        b_cat = linalg.gram_schmidt_columns(linalg.random_normal_matrix(d_out, r * h, sb, stream))
        a_cat = linalg.gram_schmidt_columns(linalg.random_normal_matrix(d_in, r * h, sa, stream)).T
        bases_b = np.stack([b_cat[:, i * r:(i + 1) * r] for i in range(h)])
        bases_a = np.stack([a_cat[i * r:(i + 1) * r, :] for i in range(h)])
    elif scheme.tag == "constant":
        b1 = linalg.random_normal_matrix(d_out, r, sb, stream)
        a1 = linalg.random_normal_matrix(r, d_in, sa, stream)
        bases_b = np.stack([b1] * h)
        bases_a = np.stack([a1] * h)
    else:  # shared_subspace
        m = linalg.random_normal_matrix(d_out, r, sb, stream)
        n = linalg.random_normal_matrix(r, d_in, sa, stream)
        bs, as_ = [], []
        for _ in range(h):
            while True:
                rot = linalg.random_normal_matrix(r, r, 1.0 / math.sqrt(r), stream)
                if _condition_number(rot) < SHARED_SUBSPACE_MAX_COND:
                    break
            bs.append(m @ rot)
            as_.append(rot @ n)
        bases_b = np.stack(bs)
        bases_a = np.stack(as_)

    return RavanAdapter(
        bases_b=bases_b,
        bases_a=bases_a,
        cores=np.zeros((h, r, r)),
        scales=np.ones(h),
        active_mask=np.ones(h, dtype=bool),
        trainable_scaling=trainable_scaling,
    )


def init_fedsb(delta_w_full, r: int) -> FedSbAdapter:
    """Truncated-SVD warm start: B = U[:, :r], H = diag(sigma[:r]), A = V^T[:r]."""
    dw = linalg.as_matrix(delta_w_full, "delta_w_full")
    if not 1 <= r <= min(dw.shape):
        raise ShapeError(f"rank {r} outside [1, {min(dw.shape)}]")
    u, s, vt = linalg.svd(dw)
    return FedSbAdapter(b=u[:, :r].copy(), core=np.diag(s[:r]), a=vt[:r].copy())


def init_lora(d_out, d_in, r, stream, sigma_a=None, freeze_a=False) -> VanillaLoraAdapter:
    """Standard LoRA start: B = 0, A ~ N(0, sigma_a^2)."""
    sa = sigma_a if sigma_a is not None else 1.0 / math.sqrt(d_in)
    return VanillaLoraAdapter(
        b=np.zeros((d_out, r)), a=linalg.random_normal_matrix(r, d_in, sa, stream), freeze_a=freeze_a
    )


def heads_rank(n_budget: int, h: int) -> int:
    """Per-head rank floor(sqrt(N / h)) for a budget of N trainable core entries."""
    return math.isqrt(n_budget // h)


def rank_bound_multihead(n_budget: int, h: int, d: int) -> int:
    if n_budget < 1 or h < 1 or d < 1:
        raise ValueError("n_budget, h and d must be positive")
    return min(math.isqrt(n_budget * h), d)


def rank_bound_vanilla_multihead(n_budget: int, h: int, d: int) -> int:
    if n_budget < 1 or h < 1 or d < 1:
        raise ValueError("n_budget, h and d must be positive")
    return min(n_budget // (2 * d), d)


# Serialization: magic, version, kind, flags, then matrices as
# (uint32 rows, uint32 cols, rows*cols little-endian float64).
_MAGIC = b"FRVA"
_VERSION = 1
_KINDS = {RavanAdapter: 1, VanillaLoraAdapter: 2, FedSbAdapter: 3}


def pack_matrix(m) -> bytes:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    return struct.pack("<II", *m.shape) + m.astype("<f8").tobytes()


def unpack_matrix(buf, offset):
    rows, cols = struct.unpack_from("<II", buf, offset)
    offset += 8
    n = rows * cols
    data = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).astype(np.float64)
    return data.reshape(rows, cols), offset + 8 * n


def serialize(adapter: Adapter) -> bytes:
    kind = _KINDS[type(adapter)]
    if isinstance(adapter, RavanAdapter):
        flags = int(adapter.trainable_scaling)
        mats = [*adapter.bases_b, *adapter.bases_a, *adapter.cores,
                adapter.scales[None, :], adapter.active_mask.astype(np.float64)[None, :]]
        head = struct.pack("<I", adapter.h)
    elif isinstance(adapter, VanillaLoraAdapter):
        flags = int(adapter.freeze_a)
        mats = [adapter.b, adapter.a]
        head = b""
    else:
        flags = 0
        mats = [adapter.b, adapter.core, adapter.a]
        head = b""
    body = b"".join(pack_matrix(m) for m in mats)
    return _MAGIC + struct.pack("<HBB", _VERSION, kind, flags) + head + body


def deserialize(buf: bytes) -> Adapter:
    if buf[:4] != _MAGIC:
        raise ValueError("not an adapter blob")
    version, kind, flags = struct.unpack_from("<HBB", buf, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported adapter blob version {version}")
    offset = 8
    if kind == 1:
        (h,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        mats = []
        for _ in range(3 * h + 2):
            m, offset = unpack_matrix(buf, offset)
            mats.append(m)
        return RavanAdapter(
            bases_b=np.stack(mats[:h]),
            bases_a=np.stack(mats[h:2 * h]),
            cores=np.stack(mats[2 * h:3 * h]),
            scales=mats[3 * h][0].copy(),
            active_mask=mats[3 * h + 1][0] != 0,
            trainable_scaling=bool(flags),
        )
    mats = []
    for _ in range(2 if kind == 2 else 3):
        m, offset = unpack_matrix(buf, offset)
        mats.append(m)
    if kind == 2:
        return VanillaLoraAdapter(b=mats[0], a=mats[1], freeze_a=bool(flags))
    if kind == 3:
        return FedSbAdapter(b=mats[0], core=mats[1], a=mats[2])
    raise ValueError(f"unknown adapter kind {kind}")


__all__ = [
    "AdapterGradients", "RavanAdapter", "VanillaLoraAdapter", "FedSbAdapter", "InitScheme",
    "init_ravan", "init_fedsb", "init_lora", "delta_w", "forward", "backward",
    "heads_rank", "rank_bound_multihead", "rank_bound_vanilla_multihead", "serialize", "deserialize",
]
