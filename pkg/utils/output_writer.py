"""
结果输出: VTK 场文件、CSV 时间序列与运行报告
"""

import csv
import os
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.table import Table

from bulkflow.core.errors import IoError
from bulkflow.core.flow_assembly import FlowSpaces, FlowState, levelset_derivatives
from bulkflow.core.levelset_geometry import LevelSetField, frames_from_derivatives
from bulkflow.core.mesh_fe import element_geometry, physical_basis
from bulkflow.core.tdc_ops import PointGradients, vorticity_scalar
from utils import logger

VTK_LAGRANGE_HEXAHEDRON = 72


def vtk_lagrange_order(q: int) -> np.ndarray:
    """Permutation from VTK Lagrange-hexahedron point order to the tensor lattice order.

    ``perm[v]`` is the lattice index of VTK point ``v``: corners, then edges,
    then faces, then the interior.
    """
    n = q + 1
    perm = np.empty(n ** 3, dtype=int)
    inner = q - 1
    for k in range(n):
        for j in range(n):
            for i in range(n):
                ib, jb, kb = i in (0, q), j in (0, q), k in (0, q)
                n_bdy = ib + jb + kb
                if n_bdy == 3:
                    v = (2 if j else 1) if i else (3 if j else 0)
                    v += 4 if k else 0
                elif n_bdy == 2:
                    v = 8
                    if not ib:
                        v += (i - 1) + (inner + inner if j else 0) + (4 * inner if k else 0)
                    elif not jb:
                        v += (j - 1) + (inner if i else 3 * inner) + (4 * inner if k else 0)
                    else:
                        v += 8 * inner + (k - 1) + inner * ((3 if j else 1) if i else (2 if j else 0))
                elif n_bdy == 1:
                    v = 8 + 12 * inner
                    if ib:
                        v += (j - 1) + inner * (k - 1) + (inner * inner if i else 0)
                    elif jb:
                        v += 2 * inner * inner + (i - 1) + inner * (k - 1) + (inner * inner if j else 0)
                    else:
                        v += 4 * inner * inner + (i - 1) + inner * (j - 1) + (inner * inner if k else 0)
                else:
                    v = 8 + 12 * inner + 6 * inner * inner + (i - 1) + inner * ((j - 1) + inner * (k - 1))
                perm[v] = i + n * (j + n * k)
    return perm


def nodal_derived_fields(spaces: FlowSpaces, state: FlowState, levelset: LevelSetField) -> Dict[str, np.ndarray]:
    """Pressure, phi, surface vorticity and ``u . n`` at the velocity nodes.

    Values are computed per element at the velocity lattice and averaged over
    the elements sharing a node.
    """
    mesh = spaces.mesh
    vel_basis = spaces.velocity.basis
    ids = np.arange(mesh.n_elements)
    geometry = element_geometry(mesh, ids, vel_basis.lattice, second=not levelset.is_analytic)
    grad_phi, hess_phi = levelset_derivatives(levelset, mesh, geometry)
    frame = frames_from_derivatives(grad_phi, hess_phi, levelset.gradient_floor)

    dofs = spaces.velocity.dof_map
    coeffs = state.velocity[:, dofs]
    vel = physical_basis(vel_basis, geometry)
    u = np.einsum("eqa,iea->eqi", vel.values, coeffs)
    grad_u = np.einsum("eqak,iea->eqik", vel.grads, coeffs)
    pre_values, _, _ = spaces.pressure.basis.tabulate(vel_basis.lattice)
    p = np.einsum("qc,ec->eq", pre_values, state.pressure[spaces.pressure.dof_map])
    if levelset.is_analytic:
        phi, _, _ = levelset.evaluate(geometry.x)
    else:
        geo_values, _, _ = mesh.geometry_basis.tabulate(vel_basis.lattice)
        phi = np.einsum("qn,en->eq", geo_values, levelset.nodal_values[mesh.elements])

    per_element = {
        "pressure": p,
        "phi": phi,
        "vorticity": vorticity_scalar(PointGradients(vector_grad=grad_u), frame),
        "normal_velocity": np.einsum("eqi,eqi->eq", u, frame.n),
    }
    counts = np.bincount(dofs.ravel(), minlength=spaces.n_nodes).astype(float)
    out = {}
    for name, values in per_element.items():
        total = np.bincount(dofs.ravel(), weights=values.ravel(), minlength=spaces.n_nodes)
        out[name] = total / np.maximum(counts, 1.0)
    return out


def write_vtk(spaces: FlowSpaces, state: FlowState, levelset: LevelSetField, path: str,
              extra_fields: Optional[Mapping[str, np.ndarray]] = None) -> str:
    """把速度、压力及派生量写成 VTK Lagrange 六面体的 .vtu 文件

    Args:
        spaces: 函数空间，网格点取速度节点
        state: 流场
        levelset: 水平集，用于 phi、涡量与法向速度
        path: 输出路径
        extra_fields: 额外的节点标量或向量场

    Raises:
        IoError: 写入失败
    """
    try:
        from vtk import vtkCellArray, vtkPoints, vtkUnstructuredGrid, vtkXMLUnstructuredGridWriter
        from vtk.util.numpy_support import numpy_to_vtk, numpy_to_vtkIdTypeArray
    except ImportError as e:
        raise IoError(f"VTK output needs the vtk package: {e}") from e

    q = spaces.velocity.orders[0]
    perm = vtk_lagrange_order(q)
    cells = spaces.velocity.dof_map[:, perm]
    fields = {"velocity": state.velocity.T}
    fields.update(nodal_derived_fields(spaces, state, levelset))
    fields.update(extra_fields or {})

    points = vtkPoints()
    points.SetData(numpy_to_vtk(np.ascontiguousarray(spaces.velocity.dof_coords), deep=True))
    grid = vtkUnstructuredGrid()
    grid.SetPoints(points)
    connectivity = np.hstack([np.full((len(cells), 1), cells.shape[1]), cells]).ravel()
    cell_array = vtkCellArray()
    cell_array.SetCells(len(cells), numpy_to_vtkIdTypeArray(connectivity.astype(np.int64), deep=True))
    grid.SetCells(VTK_LAGRANGE_HEXAHEDRON, cell_array)

    for name, values in fields.items():
        values = np.ascontiguousarray(values, dtype=float)
        if values.shape[0] != spaces.n_nodes:
            raise IoError(f"field '{name}' has {values.shape[0]} entries for {spaces.n_nodes} points")
        array = numpy_to_vtk(values, deep=True)
        array.SetName(name)
        grid.GetPointData().AddArray(array)

    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        writer = vtkXMLUnstructuredGridWriter()
        writer.SetFileName(path)
        writer.SetInputData(grid)
        if writer.Write() != 1:
            raise IoError(f"VTK writer failed for {path}")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    logger.debug(f"VTK 文件已写出: {path}")
    return path


def write_csv_series(path: str, columns: Sequence[str], rows: Iterable[Mapping[str, float]]) -> str:
    """写出 CSV 表，浮点数以 17 位有效数字保存，行尾统一为 '\\n'

    Raises:
        IoError: 写入失败或行缺少列
    """
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                missing = [c for c in columns if c not in row]
                if missing:
                    raise IoError(f"row lacks column '{missing[0]}'")
                writer.writerow([_format(row[c]) for c in columns])
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    return path


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def render_table(title: str, columns: Sequence[str], rows: Sequence[Mapping[str, object]]) -> Table:
    table = Table(title=title)
    for column in columns:
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(*[_short(row.get(c, "")) for c in columns])
    return table


def _short(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def write_report(path: str, title: str, summary: Mapping[str, object],
                 tables: Sequence[Table] = (), console: Optional[Console] = None) -> str:
    """把运行摘要与表格渲染为纯文本报告，同时输出到控制台

    Raises:
        IoError: 写入失败
    """
    recorder = Console(record=True, width=120)
    recorder.rule(title)
    for key, value in summary.items():
        recorder.print(f"{key}: {_short(value)}")
    for table in tables:
        recorder.print(table)
    text = recorder.export_text()
    if console is not None:
        console.print(text)
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    return path


def collect_columns(rows: Sequence[Mapping[str, object]]) -> List[str]:
    columns: List[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    return columns
