"""Legacy VTK files: tetrahedral unstructured grids and triangle polydata.

The reader handles the subset the writer produces (ASCII or big-endian
binary, scalars, vectors and a numeric FieldData block).
"""
from __future__ import annotations

import numpy as np

from .mesh import Mesh, with_interface_tags

VTK_TETRA = 10


def _block(f, arr, binary, dtype):
    arr = np.asarray(arr)
    if binary:
        f.write(arr.astype(np.dtype(dtype).newbyteorder(">")).tobytes())
        f.write(b"\n")
    else:
        if arr.size == 0:
            return
        fmt = "%d" if np.issubdtype(np.dtype(dtype), np.integer) else "%.10g"
        rows = arr.reshape(len(arr), -1) if arr.ndim > 1 else arr.reshape(-1, 1)
        for r in rows:
            f.write((" ".join(fmt % v for v in r) + "\n").encode())


def _data_arrays(f, arrays: dict, binary):
    for name, a in arrays.items():
        a = np.asarray(a, dtype=float)
        if a.ndim == 2 and a.shape[1] == 3:
            f.write(f"VECTORS {name} double\n".encode())
        else:
            f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n".encode())
        _block(f, a, binary, ">f8")


def write_vtk(path, mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None,
              field_data: dict | None = None, binary: bool = True, title: str = "rfasim") -> None:
    """Write a tetrahedral mesh with nodal and cell arrays.

    ``cell_region`` is always written as a cell scalar so the mesh can be
    reconstructed by :func:`read_vtk`.
    """
    mode = "BINARY" if binary else "ASCII"
    cd = {"cell_region": mesh.cell_region.astype(float)}
    cd.update(cell_data or {})
    with open(path, "wb") as f:
        f.write(f"# vtk DataFile Version 3.0\n{title[:250]}\n{mode}\nDATASET UNSTRUCTURED_GRID\n".encode())
        f.write(f"POINTS {mesh.n_nodes} double\n".encode())
        _block(f, mesh.nodes, binary, ">f8")
        conn = np.column_stack([np.full(mesh.n_cells, 4), mesh.cells])
        f.write(f"CELLS {mesh.n_cells} {conn.size}\n".encode())
        _block(f, conn, binary, ">i4")
        f.write(f"CELL_TYPES {mesh.n_cells}\n".encode())
        _block(f, np.full(mesh.n_cells, VTK_TETRA), binary, ">i4")
        if field_data:
            f.write(f"FIELD FieldData {len(field_data)}\n".encode())
            for k, v in field_data.items():
                v = np.atleast_1d(np.asarray(v, dtype=float))
                f.write(f"{k} 1 {v.size} double\n".encode())
                _block(f, v, binary, ">f8")
        if point_data:
            f.write(f"POINT_DATA {mesh.n_nodes}\n".encode())
            _data_arrays(f, point_data, binary)
        f.write(f"CELL_DATA {mesh.n_cells}\n".encode())
        _data_arrays(f, cd, binary)


def write_polydata(path, vertices, triangles, binary: bool = False, title: str = "isosurface") -> None:
    """Write a triangle surface (e.g. the lesion isotherm)."""
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    mode = "BINARY" if binary else "ASCII"
    with open(path, "wb") as f:
        f.write(f"# vtk DataFile Version 3.0\n{title}\n{mode}\nDATASET POLYDATA\n".encode())
        f.write(f"POINTS {len(vertices)} double\n".encode())
        _block(f, vertices, binary, ">f8")
        conn = np.column_stack([np.full(len(triangles), 3), triangles])
        f.write(f"POLYGONS {len(triangles)} {conn.size}\n".encode())
        _block(f, conn, binary, ">i4")


class _Reader:
    def __init__(self, data: bytes, binary: bool, pos: int):
        self.d, self.binary, self.pos = data, binary, pos

    def line(self) -> str:
        while True:
            end = self.d.index(b"\n", self.pos)
            s = self.d[self.pos:end].decode().strip()
            self.pos = end + 1
            if s:
                return s

    def array(self, n, dtype):
        if self.binary:
            # legacy binary: big-endian 4-byte ints and 8-byte doubles as written above
            dt = np.dtype(">i4" if np.issubdtype(np.dtype(dtype), np.integer) else ">f8")
            a = np.frombuffer(self.d, dtype=dt, count=n, offset=self.pos)
            self.pos += n * dt.itemsize
            return a.astype(dtype)
        out = []
        while len(out) < n:
            out.extend(self.line().split())
        return np.array(out[:n], dtype=dtype)


def read_vtk(path):
    """Read a file written by :func:`write_vtk`.

    Returns ``(mesh, point_data, cell_data, field_data)``; region-interface
    facets are reconstructed from ``cell_region``.
    """
    with open(path, "rb") as f:
        data = f.read()
    lines = data.split(b"\n", 4)
    if not lines[0].startswith(b"# vtk DataFile"):
        raise ValueError(f"{path}: not a legacy VTK file")
    binary = lines[2].strip().upper() == b"BINARY"
    if lines[3].split()[1] != b"UNSTRUCTURED_GRID":
        raise ValueError(f"{path}: expected an unstructured grid")
    r = _Reader(data, binary, sum(len(x) + 1 for x in lines[:4]))
    nodes = cells = None
    pd, cd, fd = {}, {}, {}
    target, n_target = None, 0
    while True:
        try:
            head = r.line().split()
        except ValueError:
            break
        key = head[0].upper()
        if key == "POINTS":
            nodes = r.array(int(head[1]) * 3, float).reshape(-1, 3)
        elif key == "CELLS":
            conn = r.array(int(head[2]), np.int64).reshape(int(head[1]), -1)
            if np.any(conn[:, 0] != 4):
                raise ValueError("only tetrahedral grids are supported")
            cells = conn[:, 1:]
        elif key == "CELL_TYPES":
            r.array(int(head[1]), np.int64)
        elif key == "FIELD":
            for _ in range(int(head[2])):
                name, _, n, _ = r.line().split()
                fd[name] = r.array(int(n), float)
        elif key in ("POINT_DATA", "CELL_DATA"):
            target, n_target = (pd if key == "POINT_DATA" else cd), int(head[1])
        elif key == "SCALARS":
            r.line()  # lookup table
            target[head[1]] = r.array(n_target, float)
        elif key == "VECTORS":
            target[head[1]] = r.array(3 * n_target, float).reshape(-1, 3)
        else:
            raise ValueError(f"{path}: unsupported section {key}")
        if r.pos >= len(data) or not data[r.pos:].strip():
            break
    if nodes is None or cells is None:
        raise ValueError(f"{path}: missing points or cells")
    region = cd.pop("cell_region", np.zeros(len(cells))).astype(np.int8)
    meta = {k: float(v[0]) for k, v in fd.items() if v.size == 1}
    mesh = Mesh(nodes, cells, region, np.zeros((0, 3), np.int64), np.zeros(0, np.int8), meta)
    return with_interface_tags(mesh), pd, cd, fd
