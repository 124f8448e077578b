"""Learnable positional features.

Two grid types supply the latent vector for a space-time query:

* KeyframeGrid -- a multi-level stack of 2D latent code planes for one axis
  pair (xy / xt / yt), read with bilinear interpolation per level and
  concatenated coarse-to-fine.
* SparseGrid3D -- a single dense 3D grid far smaller than the pixel lattice,
  read by concatenating an h x w x s window of codes anchored at the cell
  containing the query; optionally each tap is replaced by the trilinear
  interpolation at the tap's center-of-cell position.

Lookups are vectorized over query batches. Scatters are the exact adjoints
of the lookups and accumulate into caller-provided gradient buffers keyed by
parameter name, so chunked/parallel training can reduce them in a fixed
order.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .optim import ParamBlock

AXIS_PAIRS = ("xy", "xt", "yt")


def level_shapes(base: tuple[int, int], gamma: float, levels: int) -> list[tuple[int, int]]:
    """Per-level plane shapes: floor(gamma**(l-1) * base), l = 1..levels."""
    if gamma <= 1.0:
        raise ValueError(f"gamma must exceed 1, got {gamma}")
    h1, w1 = base
    if h1 < 1 or w1 < 1 or levels < 1:
        raise ValueError("base resolution and level count must be positive")
    return [
        (math.floor(gamma**l * h1), math.floor(gamma**l * w1)) for l in range(levels)
    ]


def _check_unit_range(name: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError(f"{name} coordinate outside [0, 1]")


def _bilinear_taps(a, b, H, W):
    """Clamped corner indices and fractional weights for one plane.

    Weights stay in the coordinate dtype (int indices are cast before the
    subtraction, which would otherwise promote everything to float64).
    """
    fa = a * H
    fb = b * W
    m = np.clip(np.floor(fa).astype(np.int64), 0, H - 1)
    n = np.clip(np.floor(fb).astype(np.int64), 0, W - 1)
    wa = fa - m.astype(fa.dtype)
    wb = fb - n.astype(fb.dtype)
    m1 = np.minimum(m + 1, H - 1)
    n1 = np.minimum(n + 1, W - 1)
    return m, n, m1, n1, wa, wb


class KeyframeGrid:
    """L-level stack of 2D latent code planes for one axis pair."""

    def __init__(
        self,
        axis_pair: str,
        base: tuple[int, int],
        gamma: float,
        levels: int,
        channels: int,
        planes: list[ParamBlock] | None = None,
    ):
        if axis_pair not in AXIS_PAIRS:
            raise ValueError(f"axis_pair must be one of {AXIS_PAIRS}, got {axis_pair!r}")
        self.axis_pair = axis_pair
        self.base = (int(base[0]), int(base[1]))
        self.gamma = float(gamma)
        self.levels = int(levels)
        self.channels = int(channels)
        self.shapes = level_shapes(self.base, self.gamma, self.levels)
        if planes is None:
            planes = [
                ParamBlock.zeros(f"kf_{axis_pair}/level{l:02d}", (h, w, channels))
                for l, (h, w) in enumerate(self.shapes)
            ]
        for block, (h, w) in zip(planes, self.shapes):
            if block.value.shape != (h, w, channels):
                raise ValueError(
                    f"{block.name}: shape {block.value.shape} violates the "
                    f"level schedule entry {(h, w, channels)}"
                )
        self.planes = planes

    @property
    def out_dim(self) -> int:
        return self.levels * self.channels

    def parameters(self) -> list[ParamBlock]:
        return list(self.planes)

    def lookup(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Bilinear read at (a, b) in [0, 1]^2 for each query; (n, L*C) output."""
        a = np.atleast_1d(a)
        b = np.atleast_1d(b)
        _check_unit_range(f"kf_{self.axis_pair}", a, b)
        n_q = a.shape[0]
        out = np.empty((n_q, self.out_dim), dtype=self.planes[0].value.dtype)
        for l, block in enumerate(self.planes):
            H, W, C = block.value.shape
            m, n, m1, n1, wa, wb = _bilinear_taps(a, b, H, W)
            flat = block.value.reshape(-1, C)
            row = m * W
            row1 = m1 * W
            v00 = flat[row + n]
            v01 = flat[row + n1]
            v10 = flat[row1 + n]
            v11 = flat[row1 + n1]
            wa = wa[:, None]
            wb = wb[:, None]
            # lerp form: fewer temporaries than the expanded 4-weight sum
            v01 -= v00
            v01 *= wb
            v01 += v00  # top edge
            v11 -= v10
            v11 *= wb
            v11 += v10  # bottom edge
            v11 -= v01
            v11 *= wa
            v11 += v01
            out[:, l * C : (l + 1) * C] = v11
        return out

    def scatter(
        self,
        a: np.ndarray,
        b: np.ndarray,
        upstream: np.ndarray,
        grads: Mapping[str, np.ndarray],
    ) -> None:
        """Adjoint of lookup: route upstream slices onto the corner codes."""
        a = np.atleast_1d(a)
        b = np.atleast_1d(b)
        upstream = np.atleast_2d(upstream)
        _check_unit_range(f"kf_{self.axis_pair}", a, b)
        if upstream.shape != (a.shape[0], self.out_dim):
            raise ValueError(
                f"upstream shape {upstream.shape} != {(a.shape[0], self.out_dim)}"
            )
        n_q = a.shape[0]
        for l, block in enumerate(self.planes):
            H, W, C = block.value.shape
            m, n, m1, n1, wa, wb = _bilinear_taps(a, b, H, W)
            up = upstream[:, l * C : (l + 1) * C]
            row = m * W
            row1 = m1 * W
            idx = np.empty((4, n_q), dtype=np.int64)
            idx[0] = row + n
            idx[1] = row + n1
            idx[2] = row1 + n
            idx[3] = row1 + n1
            ua = 1.0 - wa
            ub = 1.0 - wb
            w = np.empty((4, n_q), dtype=wa.dtype)
            np.multiply(ua, ub, out=w[0])
            np.multiply(ua, wb, out=w[1])
            np.multiply(wa, ub, out=w[2])
            np.multiply(wa, wb, out=w[3])
            vals = up[None, :, :] * w[:, :, None]
            flat_idx = idx[:, :, None] * C + np.arange(C)
            buf = grads[block.name]
            buf[...] += np.bincount(
                flat_idx.ravel(), weights=vals.ravel(), minlength=buf.size
            ).reshape(buf.shape)


class SparseGrid3D:
    """Dense-but-undersized 3D latent grid read by window concatenation.

    Grid axes map to coordinates as (x, y, t) -> (H, W, S); the window
    extends forward from the anchor cell, and taps are emitted x-major,
    then y, then t, each tap contributing its D channels contiguously.
    """

    def __init__(
        self,
        shape: tuple[int, int, int],
        channels: int,
        window: tuple[int, int, int] = (3, 3, 1),
        upsample: bool = False,
        codes: ParamBlock | None = None,
    ):
        H, W, S = (int(v) for v in shape)
        h, w, s = (int(v) for v in window)
        if not (1 <= h <= H and 1 <= w <= W and 1 <= s <= S):
            raise ValueError(f"window {window} does not fit grid {shape}")
        self.shape = (H, W, S)
        self.channels = int(channels)
        self.window = (h, w, s)
        self.upsample = bool(upsample)
        if codes is None:
            codes = ParamBlock.zeros("sparse/codes", (H, W, S, channels))
        if codes.value.shape != (H, W, S, channels):
            raise ValueError(f"codes shape {codes.value.shape} != {(H, W, S, channels)}")
        self.codes = codes

    @property
    def out_dim(self) -> int:
        h, w, s = self.window
        return h * w * s * self.channels

    def parameters(self) -> list[ParamBlock]:
        return [self.codes]

    def _window_offsets(self):
        h, w, s = self.window
        for i in range(h):
            for j in range(w):
                for q in range(s):
                    yield i, j, q

    def lookup(self, coords: np.ndarray) -> np.ndarray:
        """Concatenated window read at (x, y, t) rows in [0, 1]^3; (n, h*w*s*D)."""
        coords = np.atleast_2d(coords)
        _check_unit_range("sparse", coords)
        H, W, S = self.shape
        D = self.channels
        x, y, t = coords[:, 0], coords[:, 1], coords[:, 2]
        flat = self.codes.value.reshape(-1, D)
        out = np.empty((coords.shape[0], self.out_dim), dtype=flat.dtype)
        if not self.upsample:
            m = np.floor(x * H).astype(np.int64)
            n = np.floor(y * W).astype(np.int64)
            k = np.floor(t * S).astype(np.int64)
            for tap, (i, j, q) in enumerate(self._window_offsets()):
                idx = (
                    np.clip(m + i, 0, H - 1) * (W * S)
                    + np.clip(n + j, 0, W - 1) * S
                    + np.clip(k + q, 0, S - 1)
                )
                out[:, tap * D : (tap + 1) * D] = flat[idx]
        else:
            px0 = x * H - 0.5
            py0 = y * W - 0.5
            pt0 = t * S - 0.5
            for tap, (i, j, q) in enumerate(self._window_offsets()):
                out[:, tap * D : (tap + 1) * D] = self._trilinear(
                    flat, px0 + i, py0 + j, pt0 + q
                )
        return out

    def _tri_corners(self, p, size):
        base = np.floor(p)
        frac = p - base
        bi = base.astype(np.int64)
        c0 = np.clip(bi, 0, size - 1)
        c1 = np.clip(bi + 1, 0, size - 1)
        return c0, c1, frac

    def _trilinear(self, flat, px, py, pt):
        H, W, S = self.shape
        x0, x1, fx = self._tri_corners(px, H)
        y0, y1, fy = self._tri_corners(py, W)
        t0, t1, ft = self._tri_corners(pt, S)
        acc = 0.0
        for xi, wx in ((x0, 1 - fx), (x1, fx)):
            for yi, wy in ((y0, 1 - fy), (y1, fy)):
                for ti, wt in ((t0, 1 - ft), (t1, ft)):
                    acc = acc + (wx * wy * wt)[:, None] * flat[xi * (W * S) + yi * S + ti]
        return acc

    def scatter(
        self,
        coords: np.ndarray,
        upstream: np.ndarray,
        grads: Mapping[str, np.ndarray],
    ) -> None:
        """Adjoint of lookup; clamp collisions accumulate additively."""
        coords = np.atleast_2d(coords)
        upstream = np.atleast_2d(upstream)
        _check_unit_range("sparse", coords)
        if upstream.shape != (coords.shape[0], self.out_dim):
            raise ValueError(
                f"upstream shape {upstream.shape} != {(coords.shape[0], self.out_dim)}"
            )
        H, W, S = self.shape
        D = self.channels
        x, y, t = coords[:, 0], coords[:, 1], coords[:, 2]
        buf = grads[self.codes.name]
        chan = np.arange(D)

        def deposit(idx, vals):
            buf[...] += np.bincount(
                (idx[:, None] * D + chan).ravel(),
                weights=vals.ravel(),
                minlength=buf.size,
            ).reshape(buf.shape)

        if not self.upsample:
            m = np.floor(x * H).astype(np.int64)
            n = np.floor(y * W).astype(np.int64)
            k = np.floor(t * S).astype(np.int64)
            idx_parts = []
            for i, j, q in self._window_offsets():
                idx_parts.append(
                    np.clip(m + i, 0, H - 1) * (W * S)
                    + np.clip(n + j, 0, W - 1) * S
                    + np.clip(k + q, 0, S - 1)
                )
            deposit(
                np.concatenate(idx_parts),
                upstream.reshape(-1, len(idx_parts), D).transpose(1, 0, 2).reshape(-1, D),
            )
        else:
            px0 = x * H - 0.5
            py0 = y * W - 0.5
            pt0 = t * S - 0.5
            for tap, (i, j, q) in enumerate(self._window_offsets()):
                x0, x1, fx = self._tri_corners(px0 + i, H)
                y0, y1, fy = self._tri_corners(py0 + j, W)
                t0, t1, ft = self._tri_corners(pt0 + q, S)
                up = upstream[:, tap * D : (tap + 1) * D]
                for xi, wx in ((x0, 1 - fx), (x1, fx)):
                    for yi, wy in ((y0, 1 - fy), (y1, fy)):
                        for ti, wt in ((t0, 1 - ft), (t1, ft)):
                            deposit(
                                xi * (W * S) + yi * S + ti,
                                (wx * wy * wt)[:, None] * up,
                            )


# Single-query forms of the grid reads and their adjoints. The batch methods
# above are what training uses; these mirror them one coordinate at a time
# and accumulate straight into the grids' own gradient buffers.

def keyframe_lookup(g: KeyframeGrid, a: float, b: float) -> np.ndarray:
    return g.lookup(np.array([a]), np.array([b]))[0]


def keyframe_scatter(g: KeyframeGrid, a: float, b: float, upstream: np.ndarray) -> None:
    grads = {p.name: p.grad for p in g.parameters()}
    g.scatter(np.array([a]), np.array([b]), np.asarray(upstream)[None, :], grads)


def sparse_lookup(g: SparseGrid3D, coord) -> np.ndarray:
    return g.lookup(np.asarray(coord, dtype=float)[None, :])[0]


def sparse_scatter(g: SparseGrid3D, coord, upstream: np.ndarray) -> None:
    g.scatter(
        np.asarray(coord, dtype=float)[None, :],
        np.asarray(upstream)[None, :],
        {g.codes.name: g.codes.grad},
    )
