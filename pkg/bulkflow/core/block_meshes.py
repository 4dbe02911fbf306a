"""
Multi-block structured hex meshes.

A block maps the unit cube onto a region of parameter space and carries its
own element divisions. Lattice points of all blocks are pushed through an
optional physical map and merged by position, which also closes periodic
seams (e.g. the angle 0 and 2*pi faces of a ring).
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from bulkflow.core.errors import InvalidDivisions
from bulkflow.core.mesh_fe import HexMesh, finalize_mesh, element_edge_lengths, merge_coincident_points, tensor_basis
from utils import logger

PointMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Block:
    divisions: Tuple[int, int, int]
    mapping: PointMap
    name: str = ""


def box_block(lower: Sequence[float], upper: Sequence[float], divisions: Sequence[int], name: str = "") -> Block:
    lower = np.asarray(lower, dtype=float)
    extent = np.asarray(upper, dtype=float) - lower
    return Block(tuple(int(d) for d in divisions), lambda u: lower + u * extent, name)


def _block_lattice(block: Block, q: int) -> np.ndarray:
    n = np.asarray(block.divisions)
    if np.any(n < 1):
        raise InvalidDivisions(f"block '{block.name}' has divisions {tuple(n)}")
    li = tensor_basis((q,) * 3).lattice_index
    ec, eb, ea = np.meshgrid(*(np.arange(d) for d in n[::-1]), indexing="ij")
    start = np.stack([ea.ravel(), eb.ravel(), ec.ravel()], axis=1)
    unit = (start[:, None, :] + li[None, :, :] / q) / n
    return block.mapping(unit.reshape(-1, 3)).reshape(len(start), len(li), 3)


def build_block_mesh(blocks: Sequence[Block], q_geom: int, physical_map: Optional[PointMap] = None,
                     label: str = "") -> HexMesh:
    """Assemble blocks into one conforming mesh.

    Args:
        blocks: Blocks in parameter space. Shared block faces must carry
            matching divisions.
        q_geom: Geometry order.
        physical_map: Map from parameter to physical coordinates; identity when None.
        label: Mesh label for logs.
    """
    q = int(q_geom)
    if q < 1:
        raise InvalidDivisions(f"q_geom must be positive, got {q_geom}")
    param = np.concatenate([_block_lattice(b, q) for b in blocks], axis=0)
    flat = param.reshape(-1, 3)
    physical = flat if physical_map is None else np.asarray(physical_map(flat), dtype=float)
    scratch = np.arange(len(flat)).reshape(param.shape[:2])
    tol = 1e-7 * float(np.min(element_edge_lengths(physical, scratch, q)))
    labels, n_nodes = merge_coincident_points(physical, tol)
    nodes = np.empty((n_nodes, 3))
    nodes[labels[::-1]] = physical[::-1]
    mesh = finalize_mesh(nodes, labels.reshape(param.shape[:2]), q, param, label=label)
    logger.debug(f"块结构网格 {label}: {len(blocks)} 块, {mesh.n_elements} 单元, {mesh.n_nodes} 节点")
    return mesh


def cylinder_channel_blocks(level: int = 0, length: float = 2.2, height: float = 0.41, depth: float = 1.0 / 3.0,
                            center: Tuple[float, float] = (0.2, 0.2), radius: Tuple[float, float] = (0.05, 0.06),
                            half_width: float = 0.1, base: Tuple[int, int, int, int, int, int, int] = (1, 2, 8, 1, 1, 1, 1)
                            ) -> List[Block]:
    """O-grid template of a channel with a cylindrical hole.

    The square ``center +- half_width`` holds four O-grid blocks between the
    cylinder and the square; eight boxes fill the rest of the channel. The
    cylinder radius grows linearly from ``radius[0]`` at c = 0 to
    ``radius[1]`` at c = depth.

    ``base`` holds the level-0 divisions ``(left, square, right, bottom,
    top, radial, depth)``; every count doubles per level.
    """
    scale = 2 ** int(level)
    n_left, n_sq, n_right, n_bottom, n_top, n_rad, n_depth = (scale * b for b in base)
    cx, cy = center
    d = half_width
    a_cuts = [(0.0, cx - d, n_left), (cx - d, cx + d, n_sq), (cx + d, length, n_right)]
    b_cuts = [(0.0, cy - d, n_bottom), (cy - d, cy + d, n_sq), (cy + d, height, n_top)]

    blocks: List[Block] = []
    for ia, (a0, a1, na) in enumerate(a_cuts):
        for ib, (b0, b1, nb) in enumerate(b_cuts):
            if ia == 1 and ib == 1:
                continue
            blocks.append(box_block((a0, b0, 0.0), (a1, b1, depth), (na, nb, n_depth), f"box{ia}{ib}"))

    r0, r1 = radius
    for k in range(4):
        blocks.append(Block((n_rad, n_sq, n_depth), _ogrid_map(k, cx, cy, d, r0, r1, depth), f"ogrid{k}"))
    return blocks


def _ogrid_map(k: int, cx: float, cy: float, d: float, r0: float, r1: float, depth: float) -> PointMap:
    # reference axes: (radial outward, counter-clockwise, depth)
    theta0 = -0.25 * np.pi + 0.5 * k * np.pi
    corner0 = np.array([cx, cy]) + d * np.sqrt(2.0) * np.array([np.cos(theta0), np.sin(theta0)])
    corner1 = np.array([cx, cy]) + d * np.sqrt(2.0) * np.array([np.cos(theta0 + 0.5 * np.pi), np.sin(theta0 + 0.5 * np.pi)])

    def mapping(u: np.ndarray) -> np.ndarray:
        t, s, w = u[:, 0], u[:, 1], u[:, 2]
        c = w * depth
        r = r0 + (r1 - r0) * w
        theta = theta0 + 0.5 * np.pi * s
        circle = np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)
        square = corner0[None, :] + s[:, None] * (corner1 - corner0)[None, :]
        ab = (1.0 - t)[:, None] * circle + t[:, None] * square
        return np.column_stack([ab, c])

    return mapping
