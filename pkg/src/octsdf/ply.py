"""Minimal PLY reader/writer (ascii and binary little-endian)."""
import numpy as np


class PlyFormatError(ValueError):
    pass


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path, vertices, faces=None, binary=True):
    """Write float32 vertices and (optionally) int32 triangle faces."""
    v = np.ascontiguousarray(vertices, dtype=np.float32).reshape(-1, 3)
    f = None if faces is None else np.ascontiguousarray(faces, dtype=np.int32).reshape(-1, 3)
    fmt = "binary_little_endian" if binary else "ascii"
    head = ["ply", f"format {fmt} 1.0", f"element vertex {v.shape[0]}",
            "property float x", "property float y", "property float z"]
    if f is not None:
        head += [f"element face {f.shape[0]}", "property list uchar int vertex_indices"]
    head.append("end_header")
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(head) + "\n").encode("ascii"))
            if binary:
                fh.write(v.astype("<f4").tobytes())
                if f is not None and f.shape[0]:
                    rec = np.empty(f.shape[0], dtype=[("n", "u1"), ("idx", "<i4", (3,))])
                    rec["n"] = 3
                    rec["idx"] = f
                    fh.write(rec.tobytes())
            else:
                for row in v:
                    fh.write((" ".join(repr(float(x)) for x in row) + "\n").encode("ascii"))
                if f is not None:
                    for row in f:
                        fh.write(f"3 {row[0]} {row[1]} {row[2]}\n".encode("ascii"))
    except OSError as exc:
        raise OSError(f"cannot write PLY {path}: {exc}") from exc


def _parse_header(buf, path):
    end = buf.find(b"end_header")
    if not buf.startswith(b"ply") or end < 0:
        raise PlyFormatError(f"{path}: not a PLY file")
    nl = buf.find(b"\n", end)
    body = nl + 1 if nl >= 0 else len(buf)
    lines = buf[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise PlyFormatError(f"{path}: property before element")
            if tok[1] == "list":
                elements[-1]["props"].append((tok[4], ("list", tok[2], tok[3])))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise PlyFormatError(f"{path}: unknown property type {tok[1]!r}")
                elements[-1]["props"].append((tok[2], tok[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyFormatError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements, body


def read_ply(path):
    """Return ``(vertices (N, 3) float64, faces (M, 3) int64 or None)``.

    Polygon faces with more than three vertices are fan-triangulated.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    fmt, elements, pos = _parse_header(buf, path)
    verts, faces = None, None
    if fmt == "ascii":
        tokens = buf[pos:].split()
        ti = 0
        for el in elements:
            rows = []
            for _ in range(el["count"]):
                row = []
                for _, kind in el["props"]:
                    if isinstance(kind, tuple):
                        n = int(tokens[ti])
                        row.append([int(t) for t in tokens[ti + 1 : ti + 1 + n]])
                        ti += 1 + n
                    else:
                        if ti >= len(tokens):
                            raise PlyFormatError(f"{path}: truncated ascii body")
                        row.append(float(tokens[ti]))
                        ti += 1
                rows.append(row)
            verts, faces = _collect(el, rows, verts, faces, path)
    else:
        for el in elements:
            if all(not isinstance(k, tuple) for _, k in el["props"]):
                dt = np.dtype([(n, "<" + _PLY_TYPES[k]) for n, k in el["props"]])
                nbytes = dt.itemsize * el["count"]
                if pos + nbytes > len(buf):
                    raise PlyFormatError(f"{path}: truncated binary body at byte {pos}")
                arr = np.frombuffer(buf, dtype=dt, count=el["count"], offset=pos)
                pos += nbytes
                rows = arr
            elif (len(el["props"]) == 1 and el["name"] == "face"
                  and (tri := _try_triangles(buf, pos, el, path)) is not None):
                faces, pos = tri
                continue
            else:
                rows = []
                for _ in range(el["count"]):
                    row = []
                    for _, kind in el["props"]:
                        if isinstance(kind, tuple):
                            ct = np.dtype("<" + _PLY_TYPES[kind[1]])
                            it = np.dtype("<" + _PLY_TYPES[kind[2]])
                            if pos + ct.itemsize > len(buf):
                                raise PlyFormatError(f"{path}: truncated binary body at byte {pos}")
                            n = int(np.frombuffer(buf, ct, 1, pos)[0])
                            pos += ct.itemsize
                            if pos + n * it.itemsize > len(buf):
                                raise PlyFormatError(f"{path}: truncated binary body at byte {pos}")
                            row.append(np.frombuffer(buf, it, n, pos).tolist())
                            pos += n * it.itemsize
                        else:
                            t = np.dtype("<" + _PLY_TYPES[kind])
                            row.append(float(np.frombuffer(buf, t, 1, pos)[0]))
                            pos += t.itemsize
                    rows.append(row)
            verts, faces = _collect(el, rows, verts, faces, path)
    if verts is None:
        raise PlyFormatError(f"{path}: no vertex element")
    return verts, faces


def _collect(el, rows, verts, faces, path):
    names = [n for n, _ in el["props"]]
    if el["name"] == "vertex":
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise PlyFormatError(f"{path}: vertex element lacks property {axis!r}")
        if isinstance(rows, np.ndarray):
            verts = np.stack([rows[a].astype(np.float64) for a in ("x", "y", "z")], axis=1)
        else:
            ix = [names.index(a) for a in ("x", "y", "z")]
            verts = np.array([[r[i] for i in ix] for r in rows], dtype=np.float64).reshape(-1, 3)
    elif el["name"] == "face":
        key = "vertex_indices" if "vertex_indices" in names else ("vertex_index" if "vertex_index" in names else None)
        if key is None:
            return verts, faces
        i = names.index(key)
        tris = []
        for r in rows:
            poly = r[i]
            for k in range(1, len(poly) - 1):
                tris.append((poly[0], poly[k], poly[k + 1]))
        faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return verts, faces


def _try_triangles(buf, pos, el, path):
    # fast path: a face element that is all triangles
    _, kind = el["props"][0]
    dt = np.dtype([("n", "<" + _PLY_TYPES[kind[1]]), ("idx", "<" + _PLY_TYPES[kind[2]], (3,))])
    nbytes = dt.itemsize * el["count"]
    if pos + nbytes > len(buf):
        return None
    arr = np.frombuffer(buf, dtype=dt, count=el["count"], offset=pos)
    if not np.all(arr["n"] == 3):
        return None
    return arr["idx"].astype(np.int64), pos + nbytes
