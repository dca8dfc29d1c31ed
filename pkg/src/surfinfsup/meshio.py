"""OFF and OBJ readers/writers.

Floats are written with ``repr`` so a write/read round trip is bit-exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParameterError
from .mesh import TriMesh, from_arrays


def _fmt(x: float) -> str:
    return repr(float(x))


def write_off(mesh: TriMesh, path) -> None:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    lines += [" ".join(_fmt(c) for c in p) for p in mesh.vertices]
    lines += [f"3 {i} {j} {k}" for i, j, k in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def _tokens(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def read_off(path) -> TriMesh:
    lines = list(_tokens(Path(path).read_text()))
    if not lines or not lines[0].startswith("OFF"):
        raise ParameterError(f"{path}: missing OFF header")
    head = lines[0][3:].split() or lines[1].split()
    body = lines[1:] if lines[0][3:].split() else lines[2:]
    try:
        nv, nf = int(head[0]), int(head[1])
        verts = np.array([[float(t) for t in body[i].split()[:3]] for i in range(nv)])
        faces = []
        for line in body[nv:nv + nf]:
            rec = [int(t) for t in line.split()]
            if rec[0] != 3:
                raise ParameterError(f"{path}: only triangles are supported")
            faces.append(rec[1:4])
    except (IndexError, ValueError) as exc:
        raise ParameterError(f"{path}: malformed OFF file ({exc})") from exc
    return from_arrays(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh: TriMesh, path) -> None:
    lines = ["v " + " ".join(_fmt(c) for c in p) for p in mesh.vertices]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for line in _tokens(Path(path).read_text()):
        rec = line.split()
        if rec[0] == "v":
            verts.append([float(t) for t in rec[1:4]])
        elif rec[0] == "f":
            idx = [int(t.split("/")[0]) for t in rec[1:]]
            if len(idx) != 3:
                raise ParameterError(f"{path}: only triangles are supported")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return from_arrays(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def load_mesh(path) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        return read_off(path)
    if suffix == ".obj":
        return read_obj(path)
    raise ParameterError(f"unsupported mesh format {suffix!r}")


def save_mesh(mesh: TriMesh, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        write_off(mesh, path)
    elif suffix == ".obj":
        write_obj(mesh, path)
    else:
        raise ParameterError(f"unsupported mesh format {suffix!r}")
