"""The 256-case marching-cubes triangle table, built from face segments.

Corner ``k`` of a cube sits at ``(k & 1, k >> 1 & 1, k >> 2 & 1)``; a corner is
*inside* when its value is below the iso level. On every cube face the iso
line is a set of segments joining crossed edges. A face with four crossings
(the ambiguous saddle) is resolved by cutting off each inside corner
separately, a rule that depends only on the face's own four signs, so two
cubes sharing a face always agree and the mesh is watertight. Directed face
segments chain into closed loops which are fan-triangulated; winding makes
triangle normals point towards the outside (larger values).
"""
import numpy as np

CORNERS = np.array([[k & 1, (k >> 1) & 1, (k >> 2) & 1] for k in range(8)], dtype=np.int64)

# edges as (corner_a, corner_b, axis) with corner_b = corner_a | (1 << axis)
EDGES = np.array(
    [(k, k | (1 << a), a) for a in range(3) for k in range(8) if not k & (1 << a)], dtype=np.int64
)
_EDGE_OF = {(int(a), int(b)): i for i, (a, b, _) in enumerate(EDGES)}


def _faces():
    faces = []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        for side in (0, 1):
            cyc = []
            for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                k = (side << axis) | (du << u) | (dv << v)
                cyc.append(k)
            normal = np.zeros(3)
            normal[axis] = 1.0 if side else -1.0
            faces.append((cyc, normal))
    return faces


FACES = _faces()
_MID = 0.5 * (CORNERS[EDGES[:, 0]] + CORNERS[EDGES[:, 1]])


def _edge(a, b):
    return _EDGE_OF[(min(a, b), max(a, b))]


def _face_segments(case, cyc, normal):
    inside = [(case >> k) & 1 for k in cyc]
    crossed = [i for i in range(4) if inside[i] != inside[(i + 1) % 4]]
    segs = []
    if len(crossed) == 2:
        e0 = _edge(cyc[crossed[0]], cyc[(crossed[0] + 1) % 4])
        e1 = _edge(cyc[crossed[1]], cyc[(crossed[1] + 1) % 4])
        ref = np.mean([CORNERS[cyc[i]] for i in range(4) if inside[i]], axis=0)
        segs.append((e0, e1, ref))
    elif len(crossed) == 4:
        for i in range(4):
            if inside[i]:
                e0 = _edge(cyc[(i - 1) % 4], cyc[i])
                e1 = _edge(cyc[i], cyc[(i + 1) % 4])
                segs.append((e0, e1, CORNERS[cyc[i]].astype(float)))
    out = []
    for e0, e1, ref in segs:
        # direct so the inside lies to the left when looking at the face from outside
        a, b = _MID[e0], _MID[e1]
        if np.cross(normal, b - a) @ (ref - a) < 0:
            e0, e1 = e1, e0
        out.append((e0, e1))
    return out


def _case_triangles(case):
    nxt = {}
    for cyc, normal in FACES:
        for e0, e1 in _face_segments(case, cyc, normal):
            assert e0 not in nxt, "inconsistent face segments"
            nxt[e0] = e1
    tris = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        e = nxt[start]
        while e != start:
            loop.append(e)
            seen.add(e)
            e = nxt[e]
        for i in range(1, len(loop) - 1):
            tris.append((loop[0], loop[i], loop[i + 1]))
    return tris


def build_table():
    """``(tri_edges (256, T, 3) padded with -1, counts (256,))``."""
    cases = [_case_triangles(c) for c in range(256)]
    # orient globally: with only corner 0 inside the normal must point away from it
    a, b, c = (_MID[e] for e in cases[1][0])
    flip = np.cross(b - a, c - a) @ (a - CORNERS[0]) < 0
    if flip:
        cases = [[(t[0], t[2], t[1]) for t in tris] for tris in cases]
    width = max(len(t) for t in cases)
    table = np.full((256, width, 3), -1, dtype=np.int64)
    counts = np.zeros(256, dtype=np.int64)
    for i, tris in enumerate(cases):
        counts[i] = len(tris)
        if tris:
            table[i, : len(tris)] = tris
    return table, counts


TRI_TABLE, TRI_COUNT = build_table()
