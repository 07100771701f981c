"""Structured triangulation of the unit square.

Every square cell of side h = 1/n is cut along its anti-diagonal, from
(x+h, y) to (x, y+h), into two right triangles. Each triangle then has one
edge parallel to each coordinate axis, both incident to the right-angle
vertex ``x0``. Element connectivity is stored as ``[x0, x1, x2]`` where
``x1`` is reached from ``x0`` along the first axis and ``x2`` along the
second, so the per-axis node pairs are simply ``(elements[:, 0],
elements[:, k])``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    n: int
    nodes: np.ndarray  # (N, 2)
    elements: np.ndarray  # (Ne, 3): x0, x1 (axis 1), x2 (axis 2)
    boundary: np.ndarray  # (N,) bool
    lumped_mass: np.ndarray  # (N,)
    areas: np.ndarray  # (Ne,)
    diagonal: str = "anti"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    def node_index(self, i: int, j: int) -> int:
        """Row-major index of the node at (i*h, j*h)."""
        return j * (self.n + 1) + i

    def same_grid(self, other: "Mesh") -> bool:
        return self.n == other.n and self.diagonal == other.diagonal


def build_structured_mesh(n: int, diagonal: str = "anti") -> Mesh:
    """Triangulate [0,1]^2 with ``n`` cells per side.

    ``diagonal="anti"`` splits every cell along (h,0)-(0,h); ``"main"``
    splits along (0,0)-(h,h). Both give elements with one side parallel
    to each axis.
    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"mesh size n must be a positive integer, got {n!r}")
    if diagonal not in ("anti", "main"):
        raise ValueError(f"unknown diagonal orientation {diagonal!r}")
    n = int(n)
    h = 1.0 / n
    idx = np.arange(n + 1)
    ii, jj = np.meshgrid(idx, idx, indexing="xy")  # jj varies slowest
    nodes = np.column_stack([ii.ravel() * h, jj.ravel() * h])

    def nid(i, j):
        return j * (n + 1) + i

    ci, cj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ci, cj = ci.ravel(), cj.ravel()
    if diagonal == "anti":
        lower = np.column_stack([nid(ci, cj), nid(ci + 1, cj), nid(ci, cj + 1)])
        upper = np.column_stack(
            [nid(ci + 1, cj + 1), nid(ci, cj + 1), nid(ci + 1, cj)]
        )
    else:
        lower = np.column_stack(
            [nid(ci + 1, cj), nid(ci, cj), nid(ci + 1, cj + 1)]
        )
        upper = np.column_stack(
            [nid(ci, cj + 1), nid(ci + 1, cj + 1), nid(ci, cj)]
        )
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    p = nodes[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    areas = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    lumped = np.zeros(nodes.shape[0])
    np.add.at(lumped, elements.ravel(), np.repeat(areas / 3.0, 3))

    i_all, j_all = ii.ravel(), jj.ravel()
    boundary = (i_all == 0) | (i_all == n) | (j_all == 0) | (j_all == n)

    for arr in (nodes, elements, boundary, lumped, areas):
        arr.setflags(write=False)
    return Mesh(n, nodes, elements, boundary, lumped, areas, diagonal)


def axis_nodes(mesh: Mesh, elem: int, axis: int) -> tuple[int, int]:
    """Node indices ``(x0, x_axis)`` of the edge of ``elem`` parallel to ``axis`` (1 or 2)."""
    if axis not in (1, 2):
        raise ValueError(f"axis must be 1 or 2, got {axis!r}")
    if not 0 <= elem < mesh.num_elements:
        raise ValueError(f"element index {elem} out of range")
    row = mesh.elements[elem]
    return int(row[0]), int(row[axis])
