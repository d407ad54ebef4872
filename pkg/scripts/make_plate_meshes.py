"""Regenerate the shipped plate meshes in src/subdtune/data.

Each mesh is a polygon partition of an inner square, split into quads
(an n-gon centre gets valence n), framed by one layer of rectangles so that
every boundary vertex has its interior neighbour on the inward normal.
"""

import sys
from pathlib import Path

import numpy as np

from subdtune.mesh import ControlMesh, split_polygons, write_mesh

L = 10.0
OUT = Path(__file__).resolve().parents[1] / "src" / "subdtune" / "data"


def frame(mesh, band):
    """Add a band of rectangles between the boundary loop and the square [0, L]^2."""
    V = [list(p) for p in mesh.vertices]
    F = [tuple(int(x) for x in f) for f in mesh.faces]
    he = mesh.topology.halfedge
    outer = {}

    def project(p, vertical):
        key = (p, vertical)
        if key not in outer:
            x, y, _ = V[p]
            if vertical:
                x = 0.0 if x < L / 2 else L
            else:
                y = 0.0 if y < L / 2 else L
            outer[key] = len(V)
            V.append([x, y, 0.0])
        return outer[key]

    for a, b in list(he):
        if (b, a) in he:
            continue
        vertical = abs(V[a][0] - V[b][0]) < 1e-9
        # interior lies left of a -> b, so the band quad runs b, a, a', b'
        F.append((b, a, project(a, vertical), project(b, vertical)))
    for p in {k[0] for k in outer}:
        if (p, True) in outer and (p, False) in outer:
            x, y, _ = V[p]
            c = len(V)
            V.append([0.0 if x < L / 2 else L, 0.0 if y < L / 2 else L, 0.0])
            quad = [p, outer[(p, True)], c, outer[(p, False)]]
            P = np.array([V[q][:2] for q in quad])
            area = np.sum(P[:, 0] * np.roll(P[:, 1], -1) - np.roll(P[:, 0], -1) * P[:, 1])
            F.append(tuple(quad) if area > 0 else tuple(reversed(quad)))
    return ControlMesh(V, F)


def arrangement(curves, lo, hi, centres=None):
    """Polygons cut out of the square [lo, hi]^2 by polylines, split into quads.

    Interior crossings of the curves must be simple (degree 4) so that the
    only extraordinary vertices are the centres of non-quadrilateral polygons.
    """
    from shapely.geometry import LineString, Point, box
    from shapely.geometry.polygon import orient
    from shapely.ops import polygonize, unary_union

    curves = [[(round(x, 9), round(y, 9)) for x, y in c] for c in curves]
    lines = [LineString(c) for c in curves] + [box(lo, lo, hi, hi).exterior]
    polys = [orient(p, 1.0) for p in polygonize(unary_union(lines))]
    index, pts, out = {}, [], []
    for p in polys:
        ring = []
        for x, y in list(p.exterior.coords)[:-1]:
            key = (round(x, 9), round(y, 9))
            if key not in index:
                index[key] = len(pts)
                pts.append((x, y))
            ring.append(index[key])
        out.append(tuple(ring))
    cent = [None] * len(out)
    if centres:
        for i, p in enumerate(polys):
            for c in centres:
                if p.contains(Point(c)) and len(out[i]) == 5:
                    cent[i] = c
    return split_polygons(pts, out, cent)


def symmetric(band=1.0, inner=2.6, cut=0.35, ring=3.4):
    """Grid lines at 5 and 5 +- inner and a closed loop cutting the four diagonal cell corners."""
    lo, hi = band, L - band
    g = np.array([lo, 5.0 - inner, 5.0, 5.0 + inner, hi])
    curves = [[(x, lo), (x, hi)] for x in g[1:-1]] + [[(lo, y), (hi, y)] for y in g[1:-1]]
    a, b = g[3], g[3] + cut
    quarter = [(5.0 + ring, 5.0), (b, a), (a, b)]
    loop = []
    for k in range(4):
        c, s = np.cos(k * np.pi / 2), np.sin(k * np.pi / 2)
        c, s = round(c), round(s)
        loop += [(5.0 + c * (x - 5.0) - s * (y - 5.0), 5.0 + s * (x - 5.0) + c * (y - 5.0))
                 for x, y in quarter]
    curves.append(loop + [loop[0]])
    return frame(arrangement(curves, lo, hi), band)


def asymmetric(band=1.0):
    """Two L-shaped curves, each cutting one cell corner: one pentagon near the
    saddle point (5, 5) of the sinusoidal load and one in a cup-dominated cell."""
    lo, hi = band, L - band
    xs = (4.3, 6.3)
    ys = (3.7, 5.7, 7.7)
    xs_all = (2.6,) + xs
    curves = [[(x, lo), (x, hi)] for x in xs_all] + [[(lo, y), (hi, y)] for y in ys]
    curves.append([(lo, 5.4), (4.3, 5.4), (4.6, 5.7), (4.6, hi)])
    curves.append([(6.6, lo), (6.6, 5.7), (6.3, 6.0), (lo, 6.0)])
    return frame(arrangement(curves, lo, hi), band)


def main(out=OUT):
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(symmetric(), out / "symmetric_plate.obj",
               comment="fourfold-symmetric plate on [0,10]^2: valence-3 and valence-5 interior vertices")
    write_mesh(asymmetric(), out / "asymmetric_plate.obj",
               comment="asymmetric plate on [0,10]^2: valence-5 vertices near (7.3,7.8) and (5.4,4.7)")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else OUT)
