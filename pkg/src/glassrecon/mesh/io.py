"""ASCII OBJ and binary little-endian PLY mesh I/O."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import MeshError, TriangleMesh


def save_obj(mesh: TriangleMesh, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="ascii") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]} {f[1]} {f[2]}\n")


def load_obj(path) -> TriangleMesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                # fan-triangulate polygons
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not faces:
        raise MeshError(f"{path}: no faces")
    return TriangleMesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))


def save_ply(mesh: TriangleMesh, path) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    faces = np.empty(mesh.n_faces, dtype=face_dtype)
    faces["n"] = 3
    faces["idx"] = mesh.faces
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f8").tobytes())
        fh.write(faces.tobytes())


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def load_ply(path) -> TriangleMesh:
    """Binary little-endian PLY with vertex x/y/z and triangle faces."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MeshError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]
    if "format binary_little_endian 1.0" not in header:
        raise MeshError(f"{path}: only binary_little_endian PLY is supported")
    elements: list[tuple[str, int, list]] = []
    for line in header:
        parts = line.split()
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            elements[-1][2].append(parts[1:])
    offset = 0
    verts = faces = None
    for name, count, props in elements:
        if any(p[0] == "list" for p in props):
            if len(props) != 1:
                raise MeshError(f"{path}: mixed list properties unsupported")
            _, ctype, itype, _ = props[0]
            cdt = np.dtype("<" + _PLY_TYPES[ctype])
            idt = np.dtype("<" + _PLY_TYPES[itype])
            rec = np.dtype([("n", cdt), ("idx", idt, (3,))])
            arr = np.frombuffer(body, dtype=rec, count=count, offset=offset)
            if count and np.any(arr["n"] != 3):
                raise MeshError(f"{path}: non-triangle faces")
            offset += rec.itemsize * count
            if name == "face":
                faces = arr["idx"].astype(np.int64)
        else:
            rec = np.dtype([(p[1], "<" + _PLY_TYPES[p[0]]) for p in props])
            arr = np.frombuffer(body, dtype=rec, count=count, offset=offset)
            offset += rec.itemsize * count
            if name == "vertex":
                verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
    if verts is None or faces is None:
        raise MeshError(f"{path}: missing vertex or face element")
    return TriangleMesh(verts, faces)


def load_mesh(path) -> TriangleMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return load_obj(path)
    if suffix == ".ply":
        return load_ply(path)
    raise MeshError(f"unsupported mesh format: {suffix}")


def save_mesh(mesh: TriangleMesh, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        save_obj(mesh, path)
    elif suffix == ".ply":
        save_ply(mesh, path)
    else:
        raise MeshError(f"unsupported mesh format: {suffix}")
