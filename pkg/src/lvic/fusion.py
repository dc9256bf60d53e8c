"""Point-embedding network that fuses geometry with painted texture.

Three small blocks, all affine layers with GELU between them:

* visual adapter ``d -> 8 -> 4`` on the texture channels,
* point encoder ``3 -> 4 -> 4`` on (x, y, z),
* fusion layer ``(4 + 4 + 1) -> e`` on ``concat(geo, tex, delta_z)``.

Rows no camera painted (u = v = -1) contribute a zero texture vector and a
zero depth cue; a row whose pixel had no depth estimate (z_c = -1) keeps its
texture but also feeds a zero depth cue. The ``-1`` markers never reach the
network as values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Iterator

import numpy as np
from scipy.special import erfc

from .errors import ConfigurationError
from .painter import DZ, TEX, U, V, ZC, PaintLayout

VISUAL_HIDDEN = 8
VISUAL_OUT = 4
POINT_HIDDEN = 4
POINT_OUT = 4
FUSION_IN = POINT_OUT + VISUAL_OUT + 1

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact GELU, ``x * Phi(x)``.

    ``Phi`` is evaluated as ``erfc(-x / sqrt(2)) / 2`` rather than
    ``(1 + erf(x / sqrt(2))) / 2``, which loses digits to cancellation for
    negative ``x``.
    """
    return x * 0.5 * erfc(-x / _SQRT2)


def gelu_grad(x):
    return 0.5 * erfc(-x / _SQRT2) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _identity(x):
    return x


def _ones_like(x):
    return np.ones_like(x)


ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "gelu": (gelu, gelu_grad),
    "identity": (_identity, _ones_like),
}

LAYER_ORDER = ("visual1", "visual2", "point1", "point2", "fuse")


@dataclass
class FusionParams:
    """Weights are stored ``(out, in)``; biases ``(out,)``."""

    visual1_w: np.ndarray
    visual1_b: np.ndarray
    visual2_w: np.ndarray
    visual2_b: np.ndarray
    point1_w: np.ndarray
    point1_b: np.ndarray
    point2_w: np.ndarray
    point2_b: np.ndarray
    fuse_w: np.ndarray
    fuse_b: np.ndarray

    def __post_init__(self) -> None:
        for f in fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=np.float64))
        if self.visual1_w.ndim != 2 or self.fuse_w.ndim != 2:
            raise ConfigurationError("layer weights must be 2-D")
        for name, shape in _shapes(self.d, self.e).items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ConfigurationError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ConfigurationError(f"{name}: non-finite parameters")

    @property
    def d(self) -> int:
        return self.visual1_w.shape[1]

    @property
    def e(self) -> int:
        return self.fuse_w.shape[0]

    def layers(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for name in LAYER_ORDER:
            yield name, getattr(self, f"{name}_w"), getattr(self, f"{name}_b")

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray]) -> FusionParams:
        return FusionParams(**{k: fn(k, v) for k, v in self.arrays().items()})

    @classmethod
    def zeros(cls, d: int = 16, e: int = 16) -> FusionParams:
        return cls(**{k: np.zeros(shape) for k, shape in _shapes(d, e).items()})


def _shapes(d: int, e: int) -> dict[str, tuple[int, ...]]:
    layer_shapes = {
        "visual1": (VISUAL_HIDDEN, d),
        "visual2": (VISUAL_OUT, VISUAL_HIDDEN),
        "point1": (POINT_HIDDEN, 3),
        "point2": (POINT_OUT, POINT_HIDDEN),
        "fuse": (e, FUSION_IN),
    }
    out: dict[str, tuple[int, ...]] = {}
    for name, (rows, cols) in layer_shapes.items():
        out[f"{name}_w"] = (rows, cols)
        out[f"{name}_b"] = (rows,)
    return out


def init_params(d: int = 16, e: int = 16, seed: int = 0) -> FusionParams:
    """Seeded uniform initialisation in ``±sqrt(1/fan_in)``."""
    rng = np.random.default_rng(seed)
    kw = {}
    for name, shape in _shapes(d, e).items():
        fan_in = _shapes(d, e)[name[:-2] + "_w"][1]
        bound = np.sqrt(1.0 / fan_in) if fan_in else 0.0
        kw[name] = rng.uniform(-bound, bound, size=shape)
    return FusionParams(**kw)


@dataclass
class _Cache:
    xyz: np.ndarray
    tex_in: np.ndarray
    gate: np.ndarray
    dz: np.ndarray
    dz_gate: np.ndarray
    v1: np.ndarray
    h_v: np.ndarray
    p1: np.ndarray
    h_p: np.ndarray
    fused_in: np.ndarray


def _split_rows(rows: np.ndarray, layout: PaintLayout, params: FusionParams):
    if layout.d != params.d:
        raise ConfigurationError(f"layout has d={layout.d}, weights expect d={params.d}")
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != layout.width:
        raise ConfigurationError(f"painted rows must have {layout.width} channels, got shape {rows.shape}")
    block = rows[:, layout.c:]
    # in-bounds pixels have u, v >= 0, so a -1 pair can only be the marker
    painted = ~((block[:, U] == -1.0) & (block[:, V] == -1.0))
    has_depth = painted & (block[:, ZC] > 0.0)
    return rows[:, :3], block[:, TEX:], painted[:, None], block[:, DZ], has_depth


def _forward(params: FusionParams, rows: np.ndarray, layout: PaintLayout, activation: str):
    act, _ = ACTIVATIONS[activation]
    xyz, tex_in, gate, dz, dz_gate = _split_rows(rows, layout, params)
    v1 = tex_in @ params.visual1_w.T + params.visual1_b
    tex = act(v1) @ params.visual2_w.T + params.visual2_b
    p1 = xyz @ params.point1_w.T + params.point1_b
    geo = act(p1) @ params.point2_w.T + params.point2_b
    fused_in = np.concatenate(
        [geo, np.where(gate, tex, 0.0), np.where(dz_gate, dz, 0.0)[:, None]], axis=1
    )
    out = fused_in @ params.fuse_w.T + params.fuse_b
    return out, _Cache(xyz, tex_in, gate, dz, dz_gate, v1, act(v1), p1, act(p1), fused_in)


def embed(params: FusionParams, rows: np.ndarray, layout: PaintLayout, activation: str = "gelu") -> np.ndarray:
    """Forward pass over an (n, c+3+1+d) painted matrix; returns (n, e)."""
    return _forward(params, rows, layout, activation)[0]


def fusion_forward(params: FusionParams, row: np.ndarray, layout: PaintLayout, activation: str = "gelu") -> np.ndarray:
    return embed(params, np.asarray(row)[None, :], layout, activation)[0]


def fusion_backward(
    params: FusionParams,
    row: np.ndarray,
    layout: PaintLayout,
    upstream: np.ndarray,
    activation: str = "gelu",
) -> tuple[FusionParams, np.ndarray]:
    """Reverse-mode gradients of ``upstream · fusion_forward(row)``.

    Returns ``(param_grads, row_grad)``. Channels the forward pass ignores
    (u, v, z_c, pass-through extras, gated branches) get zero gradient.
    """
    rows = np.asarray(row, dtype=np.float64)[None, :]
    g_out = np.asarray(upstream, dtype=np.float64).reshape(1, -1)
    _, dact = ACTIVATIONS[activation]
    _, cache = _forward(params, rows, layout, activation)

    g_fuse_w = g_out.T @ cache.fused_in
    g_fuse_b = g_out.sum(axis=0)
    g_in = g_out @ params.fuse_w
    g_geo = g_in[:, :POINT_OUT]
    g_tex = np.where(cache.gate, g_in[:, POINT_OUT:POINT_OUT + VISUAL_OUT], 0.0)
    g_dz = np.where(cache.dz_gate, g_in[:, -1], 0.0)

    g_v2_w = g_tex.T @ cache.h_v
    g_v2_b = g_tex.sum(axis=0)
    g_v1 = (g_tex @ params.visual2_w) * dact(cache.v1)
    g_v1_w = g_v1.T @ cache.tex_in
    g_v1_b = g_v1.sum(axis=0)
    g_tex_in = g_v1 @ params.visual1_w

    g_p2_w = g_geo.T @ cache.h_p
    g_p2_b = g_geo.sum(axis=0)
    g_p1 = (g_geo @ params.point2_w) * dact(cache.p1)
    g_p1_w = g_p1.T @ cache.xyz
    g_p1_b = g_p1.sum(axis=0)
    g_xyz = g_p1 @ params.point1_w

    grads = FusionParams(
        visual1_w=g_v1_w, visual1_b=g_v1_b,
        visual2_w=g_v2_w, visual2_b=g_v2_b,
        point1_w=g_p1_w, point1_b=g_p1_b,
        point2_w=g_p2_w, point2_b=g_p2_b,
        fuse_w=g_fuse_w, fuse_b=g_fuse_b,
    )
    g_row = np.zeros(layout.width)
    g_row[:3] = g_xyz[0]
    g_row[layout.c + DZ] = g_dz[0]
    g_row[layout.c + TEX:] = g_tex_in[0]
    return grads, g_row


def sgd_step(params: FusionParams, grads: FusionParams, learning_rate: float) -> FusionParams:
    g = grads.arrays()
    for k, v in params.arrays().items():
        if g[k].shape != v.shape:
            raise ConfigurationError(f"gradient {k} has shape {g[k].shape}, parameter has {v.shape}")
    return params.map(lambda k, v: v - learning_rate * g[k])

