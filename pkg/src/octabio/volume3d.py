"""Section-stack volumetry and watertight voxel-surface meshes in binary STL."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imgcore import BinaryMask, PixelGeometry, load_mask

log = logging.getLogger(__name__)

STL_HEADER = b"octabio voxel surface"

# Corner offsets (x, y, z) of each voxel face, counter-clockwise seen from
# outside. Face ids: 0 -x, 1 +x, 2 -y, 3 +y, 4 -z, 5 +z.
_FACE_CORNERS = np.array([
    [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
    [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
    [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
    [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
    [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
    [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
], dtype=np.int64)
_FACE_NORMALS = np.array([
    (-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1),
], dtype=np.float64)

_STL_DTYPE = np.dtype([
    ("normal", "<f4", (3,)),
    ("v", "<f4", (3, 3)),
    ("attr", "<u2"),
])


@dataclass(frozen=True, eq=False)
class SectionStack:
    sections: tuple
    slice_distance_um: float = 25.0

    def __post_init__(self):
        secs = tuple(self.sections)
        if not secs:
            raise ValueError("a section stack needs at least one section")
        if not self.slice_distance_um > 0:
            raise ValueError("slice_distance_um must be positive")
        first = secs[0]
        for i, s in enumerate(secs[1:], 1):
            if s.pixels.shape != first.pixels.shape or s.scan_size_um != first.scan_size_um:
                raise ValueError(
                    f"section {i} is {s.width}x{s.height}@{s.scan_size_um}um, "
                    f"expected {first.width}x{first.height}@{first.scan_size_um}um"
                )
        object.__setattr__(self, "sections", secs)

    @property
    def volume_mask(self) -> np.ndarray:
        """Boolean array indexed (section, row, col)."""
        return np.stack([s.pixels for s in self.sections])

    @property
    def total_pixels(self) -> int:
        return sum(s.count for s in self.sections)

    @property
    def geometry(self) -> PixelGeometry:
        return self.sections[0].geometry


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    triangles: np.ndarray  # (n, 3, 3) vertex coordinates in um
    normals: np.ndarray  # (n, 3) unit outward normals

    def __len__(self):
        return len(self.triangles)


def stack_volume(stack: SectionStack, geom: PixelGeometry | None = None) -> float:
    """Voxel-sum volume in um^3: object pixels x pixel area x slice distance."""
    geom = geom or stack.geometry
    return stack.total_pixels * geom.pixel_pitch_um ** 2 * stack.slice_distance_um


def _nonmanifold_splits(vol: np.ndarray) -> dict:
    """Find edges where two voxels touch only along that edge.

    For each such edge one of the two voxels gets the edge midpoint inserted
    into both of its faces meeting there, so every mesh edge ends up shared
    by exactly two triangles.  Returns ``{(flat_voxel, face_id): [midpoint]}``
    with midpoints in doubled integer (x, y, z) grid units.
    """
    P = np.pad(vol, 1)
    splits: dict = {}
    shape = vol.shape
    for aa in range(3):  # array axis the edge runs along
        pa, qa = [ax for ax in range(3) if ax != aa]

        def block(op, oq):
            sl = [slice(None)] * 3
            sl[aa] = slice(1, shape[aa] + 1)
            sl[pa] = slice(op, op + shape[pa] + 1)
            sl[qa] = slice(oq, oq + shape[qa] + 1)
            return P[tuple(sl)]

        a, b, c, d = block(0, 0), block(1, 0), block(0, 1), block(1, 1)
        for (op, oq), hits in (((0, 0), a & d & ~b & ~c), ((0, 1), b & c & ~a & ~d)):
            for idx in np.argwhere(hits):
                vox = idx.copy()
                vox[pa] += op - 1
                vox[qa] += oq - 1
                # corner side of the edge within this voxel: 1 = positive side
                sp, sq = 1 - op, 1 - oq
                mid = np.empty(3, dtype=np.int64)  # array-axis order (z, y, x)
                mid[aa] = 2 * vox[aa] + 1
                mid[pa] = 2 * (vox[pa] + sp)
                mid[qa] = 2 * (vox[qa] + sq)
                mid_xyz = (int(mid[2]), int(mid[1]), int(mid[0]))
                flat = int(np.ravel_multi_index(tuple(vox), shape))
                for ax, side in ((pa, sp), (qa, sq)):
                    face = 2 * (2 - ax) + side
                    splits.setdefault((flat, face), []).append(mid_xyz)
    return splits


def voxel_surface(stack: SectionStack, geom: PixelGeometry | None = None) -> TriangleMesh:
    """Boundary faces of the voxel volume as outward-facing triangles.

    Voxels are pitch x pitch x slice_distance cuboids with x = column,
    y = row and z = section index.  Triangles are ordered by voxel raster
    index, then face id.
    """
    geom = geom or stack.geometry
    vol = stack.volume_mask
    shape = vol.shape
    P = np.pad(vol, 1)
    # array-axis (z, y, x) offset of the neighbour behind each face
    neighbour = [(0, 0, -1), (0, 0, 1), (0, -1, 0), (0, 1, 0), (-1, 0, 0), (1, 0, 0)]
    flats, fids = [], []
    for f, (dz, dy, dx) in enumerate(neighbour):
        nb = P[1 + dz : P.shape[0] - 1 + dz, 1 + dy : P.shape[1] - 1 + dy, 1 + dx : P.shape[2] - 1 + dx]
        exposed = vol & ~nb
        idx = np.flatnonzero(exposed)
        flats.append(idx)
        fids.append(np.full(len(idx), f))
    flat = np.concatenate(flats)
    fid = np.concatenate(fids)
    order = np.lexsort((fid, flat))
    flat, fid = flat[order], fid[order]

    z, y, x = np.unravel_index(flat, shape)
    base = 2 * np.stack([x, y, z], axis=1)
    corners = base[:, None, :] + 2 * _FACE_CORNERS[fid]  # (faces, 4, 3) doubled units

    splits = _nonmanifold_splits(vol)
    counts = np.full(len(flat), 2, dtype=np.int64)
    polys = {}
    face_key = flat * 6 + fid  # ascending, by construction of ``order``
    for (fv, ff), mids in splits.items():
        i = int(np.searchsorted(face_key, fv * 6 + ff))
        c = corners[i]
        poly = []
        for k in range(4):
            u, v = c[k], c[(k + 1) % 4]
            poly.append(u)
            m = tuple(((u + v) // 2).tolist())
            if m in mids:
                poly.append(np.array(m))
        polys[i] = poly
        counts[i] = len(poly)

    tri = np.empty((int(counts.sum()), 3, 3), dtype=np.int64)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    plain = np.ones(len(flat), dtype=bool)
    plain[list(polys)] = False
    s = start[plain]
    c = corners[plain]
    tri[s] = c[:, [0, 1, 2]]
    tri[s + 1] = c[:, [0, 2, 3]]
    for i, poly in polys.items():
        centre = (corners[i][0] + corners[i][2]) // 2
        for k in range(len(poly)):
            tri[start[i] + k] = (centre, poly[k], poly[(k + 1) % len(poly)])

    scale = np.array([geom.pixel_pitch_um, geom.pixel_pitch_um, stack.slice_distance_um]) / 2.0
    normals = np.repeat(_FACE_NORMALS[fid], counts, axis=0)
    return TriangleMesh(tri * scale, normals)


def _row_ids(rows: np.ndarray) -> np.ndarray:
    """Dense integer id per distinct row (lexsort; faster than unique(axis=0))."""
    order = np.lexsort(rows.T[::-1])
    srt = rows[order]
    new = np.ones(len(rows), dtype=bool)
    new[1:] = np.any(srt[1:] != srt[:-1], axis=1)
    ids = np.empty(len(rows), dtype=np.int64)
    ids[order] = np.cumsum(new) - 1
    return ids


def mesh_edge_report(mesh: TriangleMesh):
    """Return ``(bad_undirected, bad_directed)`` edge counts.

    A closed, consistently wound mesh has every undirected edge in exactly
    two triangles, traversed once in each direction.
    """
    vid = _row_ids(mesh.triangles.reshape(-1, 3)).reshape(-1, 3)
    n = int(vid.max()) + 1
    i = vid.ravel()
    j = vid[:, [1, 2, 0]].ravel()
    _, dcount = np.unique(i * n + j, return_counts=True)
    _, ucount = np.unique(np.minimum(i, j) * n + np.maximum(i, j), return_counts=True)
    return int(np.count_nonzero(ucount != 2)), int(np.count_nonzero(dcount != 1))


def is_watertight(mesh: TriangleMesh) -> bool:
    if len(mesh) == 0:
        return False
    bad_u, bad_d = mesh_edge_report(mesh)
    return bad_u == 0 and bad_d == 0


def mesh_volume(mesh: TriangleMesh) -> float:
    """Enclosed volume via the signed tetrahedron sum."""
    if not is_watertight(mesh):
        raise ValueError("mesh is not watertight")
    t = mesh.triangles - mesh.triangles[0, 0]
    return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


def export_stl(mesh: TriangleMesh, path, header: bytes = STL_HEADER) -> None:
    """Write a little-endian binary STL file."""
    n = len(mesh)
    if n == 0:
        raise ValueError("refusing to write an empty mesh")
    if n > 0xFFFFFFFF:
        raise ValueError("too many triangles for binary STL")
    rec = np.zeros(n, dtype=_STL_DTYPE)
    rec["normal"] = mesh.normals
    rec["v"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(header[:80].ljust(80, b"\0"))
        fh.write(struct.pack("<I", n))
        fh.write(rec.tobytes())


def read_stl(path) -> TriangleMesh:
    data = Path(path).read_bytes()
    if len(data) < 84:
        raise ValueError(f"{path}: too short for binary STL")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + 50 * n:
        raise ValueError(f"{path}: size does not match triangle count {n}")
    rec = np.frombuffer(data, dtype=_STL_DTYPE, count=n, offset=84)
    return TriangleMesh(rec["v"].astype(np.float64), rec["normal"].astype(np.float64))


def load_stack_manifest(path) -> SectionStack:
    """Load ``{"slice_distance_um": .., "sections": [mask paths]}``.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    scan = doc.get("scan_size_um")
    masks = [load_mask(path.parent / p, scan) for p in doc["sections"]]
    return SectionStack(tuple(masks), float(doc.get("slice_distance_um", 25.0)))


def measurement_row(name: str, stack: SectionStack, geom: PixelGeometry | None = None) -> dict:
    """Visit / Sections / Distance / Pixels / Volume, as in a follow-up table."""
    return {
        "visit": name,
        "sections": len(stack.sections),
        "distance_um": stack.slice_distance_um,
        "pixels": stack.total_pixels,
        "volume_um3": stack_volume(stack, geom),
    }


def format_measurements(rows) -> str:
    lines = [f"{'Visit':<12} {'Sections':>8} {'Distance (um)':>14} {'Pixels':>10} {'Volume (um^3)':>15}"]
    for r in rows:
        lines.append(
            f"{r['visit']:<12} {r['sections']:>8d} {r['distance_um']:>14g} "
            f"{r['pixels']:>10d} {r['volume_um3']:>15.1f}"
        )
    return "\n".join(lines)


def stack_from_masks(masks, slice_distance_um: float = 25.0) -> SectionStack:
    return SectionStack(tuple(m if isinstance(m, BinaryMask) else BinaryMask(m) for m in masks), slice_distance_um)
