# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Warp3d - The differentiable landmark-driven warping layer. Sparse landmark
offsets become a dense per-pixel offset field through Delaunay barycentric
interpolation, and spoof traces are resampled with bilinear interpolation so
their geometry follows a target face.

The warp is a backward gather anchored at the *target* landmarks: every
output pixel ``p`` reads the source trace at ``p + Tri(p, dst, src - dst)``.
Outside the convex hull of the target landmarks the offset is zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.spatial import Delaunay, QhullError

from spooftrace.errors import DegenerateGeometryError, DimensionError
from spooftrace.tensor import Tensor, TensorLike, as_tensor, record

LOGGER = logging.getLogger(__name__)

LANDMARK_COUNT = 140
INSIDE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LandmarkSet:
    """
    ``Q`` 2-D vertex positions ``(x, y)`` in pixel units
    """

    points: np.ndarray

    @staticmethod
    def of(points) -> LandmarkSet:
        """
        :raises DimensionError: If ``points`` is not a ``Q x 2`` array
        """
        array = np.array(points, dtype=np.float64)
        if array.ndim != 2 or array.shape[1] != 2:
            raise DimensionError(f"landmarks must be Q x 2, got {array.shape}")
        array.setflags(write=False)

        return LandmarkSet(array)

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def fits(self, size: int) -> bool:
        "Are all points finite and inside ``[0, size - 1]``?"
        return bool(
            np.all(np.isfinite(self.points))
            and np.all(self.points >= 0.0)
            and np.all(self.points <= size - 1)
        )

    def translated(self, dx: float, dy: float) -> LandmarkSet:
        return LandmarkSet.of(self.points + np.array([dx, dy]))


@dataclass(frozen=True)
class TriangleMesh:
    """
    Counter-clockwise index triples into a :py:class:`LandmarkSet`
    """

    triangles: np.ndarray


@dataclass(frozen=True)
class DenseOffset:
    """
    A ``N x N x 2`` per-pixel ``(dx, dy)`` offset field in pixels
    """

    field: np.ndarray


@dataclass(frozen=True)
class Rasterization:
    """
    For every pixel of an ``N x N`` grid: the triangle containing it (``-1``
    outside the hull) and its barycentric weights w.r.t. that triangle's
    vertices
    """

    mesh: TriangleMesh
    triangle: np.ndarray
    weights: np.ndarray


def _signed_area(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    ab, ac = b - a, c - a

    return 0.5 * (ab[..., 0] * ac[..., 1] - ac[..., 0] * ab[..., 1])


def delaunay(landmarks: LandmarkSet) -> TriangleMesh:
    """
    Delaunay-triangulate the landmarks. Zero-area simplices produced for
    co-circular points are dropped, the remaining triangles are oriented
    counter-clockwise.

    :raises DegenerateGeometryError: If there are fewer than 3 points or all
        points are collinear
    """
    points = landmarks.points
    if landmarks.count < 3:
        raise DegenerateGeometryError(f"need at least 3 points, got {landmarks.count}")
    centered = points - points.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9 * max(1.0, np.abs(centered).max())) < 2:
        raise DegenerateGeometryError("all landmarks are collinear")

    try:
        simplices = Delaunay(points).simplices.astype(np.int64)
    except QhullError as error:
        raise DegenerateGeometryError(str(error)) from error

    area = _signed_area(*(points[simplices[:, corner]] for corner in range(3)))
    clockwise = area < 0
    simplices[clockwise] = simplices[clockwise][:, [0, 2, 1]]
    kept = simplices[np.abs(area) > INSIDE_TOLERANCE]
    if kept.shape[0] == 0:
        raise DegenerateGeometryError("triangulation has no triangle of positive area")

    return TriangleMesh(kept)


def _barycentric(vertices: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    # [x, y, 1] = R @ w, solved once per triangle
    system = np.ones((3, 3))
    system[:2] = vertices.T
    inverse = np.linalg.inv(system)

    return (
        inverse[:, 0, None, None] * xs
        + inverse[:, 1, None, None] * ys
        + inverse[:, 2, None, None]
    )


@lru_cache(maxsize=512)
def _rasterize_cached(key: bytes, count: int, size: int) -> Rasterization:
    landmarks = LandmarkSet.of(np.frombuffer(key, dtype=np.float64).reshape(count, 2))
    mesh = delaunay(landmarks)
    triangle = np.full((size, size), -1, dtype=np.int64)
    weights = np.zeros((size, size, 3))

    # ties on shared edges go to the lowest triangle index
    for index, corners in enumerate(mesh.triangles):
        vertices = landmarks.points[corners]
        low = np.maximum(np.floor(vertices.min(axis=0)).astype(int), 0)
        high = np.minimum(np.ceil(vertices.max(axis=0)).astype(int), size - 1)
        if np.any(high < low):
            continue
        ys, xs = np.mgrid[low[1] : high[1] + 1, low[0] : high[0] + 1].astype(np.float64)
        bary = _barycentric(vertices, xs, ys)
        inside = np.all(bary >= -INSIDE_TOLERANCE, axis=0)
        free = triangle[low[1] : high[1] + 1, low[0] : high[0] + 1] < 0
        hit = inside & free
        rows, cols = np.nonzero(hit)
        triangle[rows + low[1], cols + low[0]] = index
        weights[rows + low[1], cols + low[0]] = bary[:, rows, cols].T

    # anchors that sit exactly on the grid interpolate to themselves
    for vertex, (x, y) in enumerate(landmarks.points):
        col, row = int(x), int(y)
        on_grid = col == x and row == y and 0 <= col < size and 0 <= row < size
        if on_grid and triangle[row, col] >= 0:
            corners = mesh.triangles[triangle[row, col]]
            if vertex in corners:
                weights[row, col] = (corners == vertex).astype(np.float64)

    triangle.setflags(write=False)
    weights.setflags(write=False)

    return Rasterization(mesh, triangle, weights)


def rasterize(landmarks: LandmarkSet, size: int) -> Rasterization:
    """
    Locate every pixel of an ``size x size`` grid in the landmark triangulation.
    Results are cached per landmark set, training re-uses the same faces.

    :raises DegenerateGeometryError: If the landmarks cannot be triangulated
    """
    points = np.ascontiguousarray(landmarks.points, dtype=np.float64)

    return _rasterize_cached(points.tobytes(), landmarks.count, size)


def sparse_to_dense(
    anchors: LandmarkSet, sparse_offsets, size: int
) -> DenseOffset:
    """
    Interpolate per-landmark offsets over the triangulation of ``anchors``:
    inside triangle ``(a, b, c)`` the offset is ``wa*da + wb*db + wc*dc``,
    outside the hull it is zero.

    :raises DimensionError: If there is not exactly one offset per anchor
    :raises DegenerateGeometryError: If the anchors cannot be triangulated
    """
    offsets = np.asarray(sparse_offsets, dtype=np.float64)
    if offsets.shape != (anchors.count, 2):
        raise DimensionError(
            f"expected {anchors.count} x 2 offsets, got {offsets.shape}"
        )

    raster = rasterize(anchors, size)
    inside = raster.triangle >= 0
    corners = raster.mesh.triangles[np.where(inside, raster.triangle, 0)]
    field = np.einsum("hwk,hwkd->hwd", raster.weights, offsets[corners])
    field[~inside] = 0.0

    return DenseOffset(field)


def _corner_weights(coords: np.ndarray, height: int, width: int):
    x, y = coords[..., 0], coords[..., 1]
    x0, y0 = np.floor(x), np.floor(y)
    fx, fy = x - x0, y - y0
    x0, y0 = x0.astype(np.int64), y0.astype(np.int64)
    corners = []
    for dy, dx, weight in (
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (0, 1, fx * (1.0 - fy)),
        (1, 0, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ):
        cx, cy = x0 + dx, y0 + dy
        valid = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
        corners.append(
            (
                np.clip(cy, 0, height - 1),
                np.clip(cx, 0, width - 1),
                np.where(valid, weight, 0.0),
                valid,
                dx,
                dy,
            )
        )

    return corners, fx, fy


def bilinear_sample(img: Tensor, coords: TensorLike) -> Tensor:
    """
    Read ``img[H,W,C]`` at the fractional ``(x, y)`` positions in
    ``coords[H',W',2]``. Neighbours outside the image read as zero.
    Differentiable w.r.t. ``img`` and, away from integer crossings, w.r.t.
    ``coords``.

    :raises DimensionError: On malformed shapes
    """
    grid = as_tensor(coords)
    if img.ndim != 3 or grid.ndim != 3 or grid.shape[2] != 2:
        raise DimensionError(f"cannot sample {img.shape} at {grid.shape}")
    height, width, channels = img.shape
    corners, fx, fy = _corner_weights(grid.data, height, width)

    out = np.zeros(grid.shape[:2] + (channels,))
    for row, col, weight, _, _, _ in corners:
        out += weight[..., None] * img.data[row, col]

    def _backward(grad):
        grad_img = None
        if img.requires_grad:
            grad_img = np.zeros_like(img.data)
            for row, col, weight, _, _, _ in corners:
                np.add.at(grad_img, (row, col), weight[..., None] * grad)
        grad_coords = None
        if grid.requires_grad:
            grad_coords = np.zeros(grid.shape)
            for row, col, _, valid, dx, dy in corners:
                value = np.where(valid[..., None], img.data[row, col], 0.0)
                wx = (fy if dy else 1.0 - fy) * (1.0 if dx else -1.0)
                wy = (fx if dx else 1.0 - fx) * (1.0 if dy else -1.0)
                grad_coords[..., 0] += wx * (value * grad).sum(axis=-1)
                grad_coords[..., 1] += wy * (value * grad).sum(axis=-1)
        return grad_img, grad_coords

    return record(out, (img, grid), _backward, "bilinear_sample")


def identity_grid(size: int) -> np.ndarray:
    "``p0``: the ``(x, y)`` position of every pixel"
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)

    return np.stack([xs, ys], axis=-1)


def warp_field(src_lm: LandmarkSet, dst_lm: LandmarkSet, size: int) -> DenseOffset:
    """
    The dense offset that brings a trace drawn on ``src_lm`` onto ``dst_lm``,
    anchored at the target landmarks

    :raises DimensionError: If the landmark sets differ in size
    """
    if src_lm.count != dst_lm.count:
        raise DimensionError(
            f"landmark counts differ: {src_lm.count} vs {dst_lm.count}"
        )

    return sparse_to_dense(dst_lm, src_lm.points - dst_lm.points, size)


def warp_trace(
    trace_img: Tensor,
    src_lm: LandmarkSet,
    dst_lm: LandmarkSet,
    offset: Optional[DenseOffset] = None,
) -> Tensor:
    """
    Move a ``N x N x 3`` trace from the geometry of ``src_lm`` to that of
    ``dst_lm``. Gradients flow to the trace values; landmarks are constants.

    :raises DimensionError: If the trace is not square
    :raises DegenerateGeometryError: If the target landmarks are degenerate
    """
    if trace_img.ndim != 3 or trace_img.shape[0] != trace_img.shape[1]:
        raise DimensionError(
            f"expected a square N x N x C trace, got {trace_img.shape}"
        )
    size = trace_img.shape[0]
    dense = offset if offset is not None else warp_field(src_lm, dst_lm, size)

    return bilinear_sample(trace_img, identity_grid(size) + dense.field)

