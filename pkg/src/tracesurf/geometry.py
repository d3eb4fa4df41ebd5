"""Implicit surface geometry: level sets, background tet meshes, cut-cell extraction.

The surface is the zero set of a level-set function sampled on a structured
tetrahedral background mesh.  The piecewise-linear interpolant of the level set
defines a polyhedral surface (one or two triangles per cut tet), the set of cut
tets ("active" elements), and a piecewise-constant extended normal field used
by the volume stabilisation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .quadrature import triangle_rule, tetrahedron_rule


class GeometryError(RuntimeError):
    """Raised when the surface/mesh combination is unusable (e.g. no cut elements)."""


# relative slack used both for the vertex perturbation and degenerate-triangle filter
PERTURB_REL = 1.0e-10
DEGENERATE_AREA_REL = 1.0e-14


@dataclass
class LevelSetSurface:
    """Closed surface given as the zero set of an analytic level-set function.

    kind "sphere" uses the exact signed distance |x - center| - radius, so the
    gradient has unit length and the closest-point projection is one explicit
    step.  kind "ellipsoid" uses the algebraic level set sqrt(sum (x_i/a_i)^2) - 1
    (not a distance function); projection then iterates.
    """

    kind: str = "sphere"
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0
    semi_axes: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.semi_axes = np.asarray(self.semi_axes, dtype=float)
        if self.kind not in ("sphere", "ellipsoid"):
            raise GeometryError(f"unknown surface kind '{self.kind}'")

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind == "sphere":
            return np.linalg.norm(x - self.center, axis=-1) - self.radius
        y = (x - self.center) / self.semi_axes
        return np.linalg.norm(y, axis=-1) - 1.0

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind == "sphere":
            d = x - self.center
            r = np.linalg.norm(d, axis=-1, keepdims=True)
            return d / np.where(r == 0.0, 1.0, r)
        y = (x - self.center) / self.semi_axes
        r = np.linalg.norm(y, axis=-1, keepdims=True)
        return (y / self.semi_axes) / np.where(r == 0.0, 1.0, r)

    def project(self, x: np.ndarray, tol: float = 1.0e-13, maxiter: int = 50) -> np.ndarray:
        """Closest-point projection p(x) = x - phi(x) grad phi(x).

        Exact in one step for the signed-distance sphere; otherwise iterated
        until |phi(p)| < tol.
        """
        p = np.atleast_2d(x).astype(float).copy()
        for _ in range(maxiter):
            phi = self.value(p)
            if np.all(np.abs(phi) < tol):
                break
            g = self.gradient(p)
            p = p - (phi / np.einsum("...i,...i", g, g))[..., None] * g
        return p.reshape(np.shape(x))


# Kuhn split of the unit cube: each tet walks from corner 000 to 111 along one
# of the 6 axis orderings; odd orderings get two vertices swapped so that all
# signed volumes come out positive.  Adjacent cubes share face diagonals.
def _kuhn_tets():
    corners = {}
    for i in range(2):
        for j in range(2):
            for k in range(2):
                corners[(i, j, k)] = (i, j, k)
    tets = []
    for perm in permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for ax in perm:
            nxt = path[-1].copy()
            nxt[ax] = 1
            path.append(nxt)
        tet = [tuple(p) for p in path]
        # parity of the permutation decides orientation; swap last two if odd
        inversions = sum(
            1 for a in range(3) for b in range(a + 1, 3) if perm[a] > perm[b]
        )
        if inversions % 2 == 1:
            tet[2], tet[3] = tet[3], tet[2]
        tets.append(tet)
    return tets


_KUHN = _kuhn_tets()

# local edges of a tet in (vertex, vertex) pairs; P2 dof ordering relies on this
TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


@dataclass
class BackgroundMesh:
    """Structured tetrahedral mesh of an axis-aligned box (6 tets per cube cell)."""

    bbox_min: np.ndarray
    bbox_max: np.ndarray
    n_per_axis: int
    vertices: np.ndarray = field(init=False, repr=False)
    tets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=float)
        self.bbox_max = np.asarray(self.bbox_max, dtype=float)
        n = int(self.n_per_axis)
        if n < 1:
            raise GeometryError("n_per_axis must be >= 1")
        if np.any(self.bbox_max <= self.bbox_min):
            raise GeometryError("bbox_max must exceed bbox_min componentwise")
        self.n_per_axis = n
        axes = [np.linspace(self.bbox_min[d], self.bbox_max[d], n + 1) for d in range(3)]
        # vertex id = i + (n+1)*(j + (n+1)*k), x index fastest
        K, J, I = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        self.vertices = np.column_stack([I.ravel(), J.ravel(), K.ravel()])

        stride = n + 1
        ii, jj, kk = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        base = (ii + stride * (jj + stride * kk)).ravel()  # cube corner index (i,j,k)
        tets = np.empty((6 * n**3, 4), dtype=np.int64)
        for t, tet in enumerate(_KUHN):
            for v, (di, dj, dk) in enumerate(tet):
                tets[t::6, v] = base + di + stride * (dj + stride * dk)
        self.tets = tets

    @property
    def h(self) -> float:
        """Mesh size: the cell edge length (cells are cubes for a cubic box)."""
        return float(np.max((self.bbox_max - self.bbox_min) / self.n_per_axis))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]


def sample_level_set(mesh: BackgroundMesh, surface: LevelSetSurface) -> np.ndarray:
    """Vertex values of the level set, with near-zero values nudged positive.

    Values with |phi| < 1e-10*h are replaced by +1e-10*h so that no background
    vertex sits exactly on the discrete surface and every cut has positive area.
    """
    phi = surface.value(mesh.vertices)
    eps = PERTURB_REL * mesh.h
    phi = np.where(np.abs(phi) < eps, eps, phi)
    return phi


def select_active_tets(mesh: BackgroundMesh, phi_vertex: np.ndarray) -> np.ndarray:
    """Indices of tets whose P1 level-set interpolant changes sign."""
    vals = phi_vertex[mesh.tets]
    active = (vals.min(axis=1) < 0.0) & (vals.max(axis=1) > 0.0)
    return np.nonzero(active)[0]


@dataclass
class ActiveMesh:
    """Cut tets, reconstructed surface triangles, and quadrature tables.

    Triangles carry the background-edge ids of their vertices (each triangle
    vertex lies on a unique background edge), which gives an exact adjacency
    relation for domain counting and VTK point sharing.
    """

    mesh: BackgroundMesh
    surface: LevelSetSurface
    phi_vertex: np.ndarray
    active_ids: np.ndarray          # (na,) indices into mesh.tets
    tet_verts: np.ndarray           # (na, 4) global vertex ids
    tet_coords: np.ndarray          # (na, 4, 3)
    grad_lambda: np.ndarray         # (na, 4, 3) P1 barycentric gradients
    tet_volume: np.ndarray          # (na,)
    ext_normal: np.ndarray          # (na, 3) unit normal from the P1 level set
    tri_coords: np.ndarray          # (ntri, 3, 3)
    tri_tet: np.ndarray             # (ntri,) owner index into the active list
    tri_area: np.ndarray            # (ntri,)
    tri_normal: np.ndarray          # (ntri, 3) = owner tet ext_normal
    tri_edges: np.ndarray           # (ntri, 3, 2) background edge (lo, hi) per vertex
    surf_qp: np.ndarray             # (ntri, nqs, 3) surface quadrature points
    surf_qw: np.ndarray             # (ntri, nqs) physical weights
    surf_bary: np.ndarray           # (ntri, nqs, 4) owner-tet barycentric coords
    tri_vertex_bary: np.ndarray     # (ntri, 3, 4) triangle corners in owner-tet coords
    vol_qp: np.ndarray              # (na, nqv, 3)
    vol_qw: np.ndarray              # (na, nqv)
    vol_bary: np.ndarray            # (nqv, 4) same in every tet

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def n_active(self) -> int:
        return self.active_ids.size

    @property
    def n_triangles(self) -> int:
        return self.tri_tet.size

    @property
    def area(self) -> float:
        """Total area of the reconstructed surface."""
        return float(self.tri_area.sum())

    @property
    def volume(self) -> float:
        """Volume of the active-tet neighbourhood omega_h."""
        return float(self.tet_volume.sum())

    def barycentric(self, active_index: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of physical points inside given active tets."""
        v0 = self.tet_coords[active_index, 0]
        lam = np.einsum(
            "...ij,...j->...i", self._inv_jac[active_index], points - v0
        )
        return np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)


def build_active_mesh(
    mesh: BackgroundMesh,
    surface: LevelSetSurface,
    surf_order: int = 4,
    vol_order: int = 2,
) -> ActiveMesh:
    """Cut the background mesh with the level set and build all tables.

    Raises GeometryError if the surface cuts no element (e.g. it lies outside
    the box or vanishes nowhere inside it).
    """
    phi = sample_level_set(mesh, surface)
    active = select_active_tets(mesh, phi)
    if active.size == 0:
        raise GeometryError(
            "level set does not cut the background mesh: no active elements "
            "(check bbox against the surface)"
        )

    tet_verts = mesh.tets[active]
    tet_coords = mesh.vertices[tet_verts]
    edges = tet_coords[:, 1:] - tet_coords[:, :1]          # (na, 3, 3) rows
    jac = np.transpose(edges, (0, 2, 1))                   # columns = edge vectors
    det = np.linalg.det(jac)
    if np.any(det <= 0):
        raise GeometryError("background tets must be positively oriented")
    inv_jac = np.linalg.inv(jac)
    vol = det / 6.0
    # grad lambda_i: rows of inv_jac for i=1..3, and -sum for lambda_0
    gl = np.empty((active.size, 4, 3))
    gl[:, 1:] = inv_jac
    gl[:, 0] = -inv_jac.sum(axis=1)

    phi_loc = phi[tet_verts]                               # (na, 4)
    grad_phi = np.einsum("ti,tid->td", phi_loc, gl)
    norm = np.linalg.norm(grad_phi, axis=1, keepdims=True)
    ext_normal = grad_phi / norm

    tris = _march_tets(tet_verts, tet_coords, phi_loc, ext_normal, mesh.h)
    tri_coords, tri_tet, tri_edges = tris

    e1 = tri_coords[:, 1] - tri_coords[:, 0]
    e2 = tri_coords[:, 2] - tri_coords[:, 0]
    cr = np.cross(e1, e2)
    tri_area = 0.5 * np.linalg.norm(cr, axis=1)
    tri_normal = ext_normal[tri_tet]

    sb, sw = triangle_rule(surf_order)
    surf_qp = np.einsum("qi,tid->tqd", sb, tri_coords)
    surf_qw = sw[None, :] * tri_area[:, None]

    vb, vw = tetrahedron_rule(vol_order)
    vol_qp = np.einsum("qi,tid->tqd", vb, tet_coords)
    vol_qw = vw[None, :] * vol[:, None]

    am = ActiveMesh(
        mesh=mesh,
        surface=surface,
        phi_vertex=phi,
        active_ids=active,
        tet_verts=tet_verts,
        tet_coords=tet_coords,
        grad_lambda=gl,
        tet_volume=vol,
        ext_normal=ext_normal,
        tri_coords=tri_coords,
        tri_tet=tri_tet,
        tri_area=tri_area,
        tri_normal=tri_normal,
        tri_edges=tri_edges,
        surf_qp=surf_qp,
        surf_qw=surf_qw,
        surf_bary=np.empty(0),
        tri_vertex_bary=np.empty(0),
        vol_qp=vol_qp,
        vol_qw=vol_qw,
        vol_bary=vb,
    )
    am._inv_jac = inv_jac
    am.surf_bary = am.barycentric(tri_tet[:, None], surf_qp)
    am.tri_vertex_bary = am.barycentric(tri_tet[:, None], tri_coords)
    return am


def _march_tets(tet_verts, tet_coords, phi_loc, ext_normal, h):
    """Marching tetrahedra on the P1 interpolant (1 or 2 triangles per cut tet)."""
    neg = phi_loc < 0.0
    nneg = neg.sum(axis=1)
    area_floor = DEGENERATE_AREA_REL * h * h

    coords_out = []
    tet_out = []
    edge_out = []

    def cut_points(tid, lone, others):
        """Intersections on edges lone->others, plus background edge keys."""
        pv = phi_loc[tid[:, None], lone[:, None]]                  # (m, 1)
        po = phi_loc[tid[:, None], others]                         # (m, k)
        t = pv / (pv - po)                                         # in (0, 1)
        a = tet_coords[tid[:, None], lone[:, None]]                # (m, 1, 3)
        b = tet_coords[tid[:, None], others]                       # (m, k, 3)
        pts = a + t[..., None] * (b - a)
        ga = tet_verts[tid[:, None], lone[:, None]]
        gb = tet_verts[tid[:, None], others]
        keys = np.stack([np.minimum(ga, gb), np.maximum(ga, gb)], axis=-1)
        return pts, keys

    for count in (1, 3):
        sel = np.nonzero(nneg == count)[0]
        if sel.size == 0:
            continue
        mask = neg[sel] if count == 1 else ~neg[sel]
        lone = np.argmax(mask, axis=1)
        all_loc = np.tile(np.arange(4), (sel.size, 1))
        others = all_loc[all_loc != lone[:, None]].reshape(sel.size, 3)
        pts, keys = cut_points(sel, lone, others)
        coords_out.append(pts)
        tet_out.append(sel)
        edge_out.append(keys)

    sel = np.nonzero(nneg == 2)[0]
    if sel.size:
        nloc = np.argsort(~neg[sel], axis=1, kind="stable")[:, :2]   # negatives
        ploc = np.argsort(neg[sel], axis=1, kind="stable")[:, :2]    # positives
        a, b = nloc[:, 0], nloc[:, 1]
        c, d = ploc[:, 0], ploc[:, 1]
        # quad cycle: (a,c) (a,d) (b,d) (b,c); each consecutive pair shares a face
        quad_pts = []
        quad_keys = []
        for vn, vp in ((a, c), (a, d), (b, d), (b, c)):
            pts, keys = cut_points(sel, vn, vp[:, None])
            quad_pts.append(pts[:, 0])
            quad_keys.append(keys[:, 0])
        quad_pts = np.stack(quad_pts, axis=1)                        # (m, 4, 3)
        quad_keys = np.stack(quad_keys, axis=1)                      # (m, 4, 2)
        d02 = np.linalg.norm(quad_pts[:, 0] - quad_pts[:, 2], axis=1)
        d13 = np.linalg.norm(quad_pts[:, 1] - quad_pts[:, 3], axis=1)
        use02 = d02 <= d13
        idx = np.where(
            use02[:, None, None],
            np.array([[0, 1, 2], [0, 2, 3]])[None],
            np.array([[1, 2, 3], [1, 3, 0]])[None],
        )                                                            # (m, 2, 3)
        m = sel.size
        rows = np.arange(m)[:, None, None]
        tri_pts = quad_pts[rows, idx]                                # (m, 2, 3, 3)
        tri_keys = quad_keys[rows, idx]
        coords_out.append(tri_pts.reshape(2 * m, 3, 3))
        tet_out.append(np.repeat(sel, 2))
        edge_out.append(tri_keys.reshape(2 * m, 3, 2))

    coords = np.concatenate(coords_out, axis=0)
    tets = np.concatenate(tet_out, axis=0)
    keys = np.concatenate(edge_out, axis=0)

    # orient consistently with the extended normal (positive side of the level set)
    cr = np.cross(coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0])
    flip = np.einsum("td,td->t", cr, ext_normal[tets]) < 0.0
    coords[flip] = coords[flip][:, [0, 2, 1]]
    keys[flip] = keys[flip][:, [0, 2, 1]]

    area = 0.5 * np.linalg.norm(
        np.cross(coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0]), axis=1
    )
    keep = area > area_floor
    coords, tets, keys = coords[keep], tets[keep], keys[keep]

    # deterministic ordering: by owner tet, then by first-vertex key
    order = np.lexsort((keys[:, 0, 1], keys[:, 0, 0], tets))
    return coords[order], tets[order], keys[order]


def tangential_projector(normals: np.ndarray) -> np.ndarray:
    """P = I - n n^T for an array of unit normals (..., 3) -> (..., 3, 3)."""
    eye = np.eye(3)
    return eye - normals[..., :, None] * normals[..., None, :]
