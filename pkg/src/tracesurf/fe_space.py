"""Background P1/P2 finite element spaces restricted to the active tets.

Degrees of freedom live on the background mesh (vertices, plus edge midpoints
for P2) but only those attached to active tets exist.  Vector spaces store the
three components block-wise: dof (component a, scalar dof i) = a*n_scalar + i.
Functions are evaluated through their traces on the reconstructed surface
(values, full gradients, tangential gradients, surface rate-of-strain) and on
the active-tet volume quadrature (values, gradients, normal derivatives).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ActiveMesh, TET_EDGES, tangential_projector


def _p2_values(bary: np.ndarray) -> np.ndarray:
    """P2 shape functions from barycentric coordinates (..., 4) -> (..., 10)."""
    lam = bary
    out = np.empty(bary.shape[:-1] + (10,))
    out[..., :4] = lam * (2.0 * lam - 1.0)
    for k, (i, j) in enumerate(TET_EDGES):
        out[..., 4 + k] = 4.0 * lam[..., i] * lam[..., j]
    return out


def _p2_grads(bary: np.ndarray, gl: np.ndarray) -> np.ndarray:
    """P2 shape gradients; gl is grad(lambda) per element, broadcastable to bary."""
    lam = bary[..., None]  # (..., 4, 1)
    out = np.empty(bary.shape[:-1] + (10, 3))
    out[..., :4, :] = (4.0 * lam - 1.0) * gl
    for k, (i, j) in enumerate(TET_EDGES):
        out[..., 4 + k, :] = 4.0 * (
            lam[..., i, :] * gl[..., j, :] + lam[..., j, :] * gl[..., i, :]
        )
    return out


@dataclass
class TraceEval:
    """Fields of one FE function sampled at the surface quadrature points."""

    values: np.ndarray        # (ntri, nq) or (ntri, nq, 3)
    grad: np.ndarray          # full gradient; (ntri, nq, 3) or Jacobian (ntri, nq, 3, 3)
    surf_grad: np.ndarray     # tangential gradient P grad / covariant P (grad) P
    es: np.ndarray | None = None       # surface rate of strain (vector only)
    div_gamma: np.ndarray | None = None  # surface divergence (vector only)
    normal_comp: np.ndarray | None = None  # u . n_h (vector only)


@dataclass
class VolumeEval:
    values: np.ndarray
    grad: np.ndarray
    normal_deriv: np.ndarray  # n_h . grad (componentwise for vectors)


class FESpace:
    """Scalar or 3-vector P1/P2 space on the active part of the background mesh."""

    def __init__(self, am: ActiveMesh, degree: int = 1, n_components: int = 1):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        if n_components not in (1, 3):
            raise ValueError("n_components must be 1 or 3")
        self.am = am
        self.degree = degree
        self.n_components = n_components

        verts = np.unique(am.tet_verts)
        v_index = {int(v): i for i, v in enumerate(verts)}
        nb = 4 if degree == 1 else 10
        na = am.n_active
        edofs = np.empty((na, nb), dtype=np.int64)
        vmap = np.full(am.mesh.n_vertices, -1, dtype=np.int64)
        vmap[verts] = np.arange(verts.size)
        edofs[:, :4] = vmap[am.tet_verts]
        points = [am.mesh.vertices[verts]]

        if degree == 2:
            nv = am.mesh.n_vertices
            pairs = am.tet_verts[:, TET_EDGES]                   # (na, 6, 2)
            lo = pairs.min(axis=2)
            hi = pairs.max(axis=2)
            keys = lo.astype(np.int64) * nv + hi
            uniq, inv = np.unique(keys, return_inverse=True)
            edofs[:, 4:] = verts.size + inv.reshape(na, 6)
            ulo, uhi = uniq // nv, uniq % nv
            points.append(0.5 * (am.mesh.vertices[ulo] + am.mesh.vertices[uhi]))

        self.edofs = edofs
        self.dof_points = np.concatenate(points, axis=0)
        self.n_scalar = self.dof_points.shape[0]
        self.edofs_tri = edofs[am.tri_tet]
        self._v_index = v_index

        # basis tables on both quadratures
        gl = am.grad_lambda                                      # (na, 4, 3)
        gl_tri = gl[am.tri_tet]
        if degree == 1:
            self.vol_basis = am.vol_bary                         # (nqv, 4)
            self.vol_grad = np.broadcast_to(
                gl[:, None], (na, am.vol_bary.shape[0], 4, 3)
            )
            self.surf_basis = am.surf_bary                       # (ntri, nqs, 4)
            self.surf_grad = np.broadcast_to(
                gl_tri[:, None], am.surf_bary.shape + (3,)
            )
        else:
            self.vol_basis = _p2_values(am.vol_bary)
            self.vol_grad = _p2_grads(
                np.broadcast_to(am.vol_bary, (na,) + am.vol_bary.shape),
                gl[:, None],
            )
            self.surf_basis = _p2_values(am.surf_bary)
            self.surf_grad = _p2_grads(am.surf_bary, gl_tri[:, None])

        self.proj_tri = tangential_projector(am.tri_normal)      # (ntri, 3, 3)
        self.n_basis = nb

    @property
    def ndof(self) -> int:
        return self.n_components * self.n_scalar

    def function(self, coeffs=None) -> "FEFunction":
        if coeffs is None:
            coeffs = np.zeros(self.ndof)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.ndof,):
            raise ValueError(f"expected {self.ndof} coefficients, got {coeffs.shape}")
        return FEFunction(self, coeffs)

    def interpolate(self, f) -> "FEFunction":
        """Nodal interpolation of a callable f(points (n,3)) -> (n,) or (n,3)."""
        vals = np.asarray(f(self.dof_points), dtype=float)
        if self.n_components == 1:
            if vals.shape != (self.n_scalar,):
                raise ValueError("interpolant of a scalar space needs scalar values")
            return FEFunction(self, vals.copy())
        if vals.shape != (self.n_scalar, 3):
            raise ValueError("interpolant of a vector space needs (n, 3) values")
        return FEFunction(self, vals.T.ravel().copy())

    # -- evaluation ---------------------------------------------------------

    def _component_view(self, coeffs):
        return coeffs.reshape(self.n_components, self.n_scalar)

    def eval_surface(self, coeffs: np.ndarray) -> TraceEval:
        C = self._component_view(coeffs)
        Ct = C[:, self.edofs_tri]                                # (nc, ntri, nb)
        vals = np.einsum("tqi,cti->tqc", self.surf_basis, Ct)
        grad = np.einsum("tqid,cti->tqcd", self.surf_grad, Ct)
        P = self.proj_tri
        if self.n_components == 1:
            g = grad[..., 0, :]
            sg = np.einsum("tab,tqb->tqa", P, g)
            return TraceEval(values=vals[..., 0], grad=g, surf_grad=sg)
        cov = np.einsum("tab,tqbc,tcd->tqad", P, grad, P)
        es = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        div = np.einsum("tqaa->tq", cov)
        un = np.einsum("tqc,tc->tq", vals, self.am.tri_normal)
        return TraceEval(
            values=vals, grad=grad, surf_grad=cov, es=es, div_gamma=div, normal_comp=un
        )

    def eval_volume(self, coeffs: np.ndarray) -> VolumeEval:
        C = self._component_view(coeffs)
        Ce = C[:, self.edofs]                                    # (nc, na, nb)
        vals = np.einsum("qi,cti->tqc", self.vol_basis, Ce)
        grad = np.einsum("tqid,cti->tqcd", self.vol_grad, Ce)
        nd = np.einsum("tqcd,td->tqc", grad, self.am.ext_normal)
        if self.n_components == 1:
            return VolumeEval(values=vals[..., 0], grad=grad[..., 0, :],
                              normal_deriv=nd[..., 0])
        return VolumeEval(values=vals, grad=grad, normal_deriv=nd)

    def eval_at(self, coeffs: np.ndarray, active_index: np.ndarray,
                bary: np.ndarray) -> np.ndarray:
        """Point values at barycentric coords inside given active tets.

        active_index: (...,) owner indices into the active list; bary (..., 4).
        Returns (...,) for scalar spaces, (..., 3) for vector ones.
        """
        if self.degree == 1:
            basis = bary
        else:
            basis = _p2_values(bary)
        C = self._component_view(coeffs)
        dofs = self.edofs[active_index]                          # (..., nb)
        vals = np.einsum("...i,c...i->...c", basis, C[:, dofs])
        return vals[..., 0] if self.n_components == 1 else vals


@dataclass
class FEFunction:
    """Coefficients in an FESpace (block component layout for vectors)."""

    space: FESpace
    coeffs: np.ndarray

    def eval_surface(self) -> TraceEval:
        return self.space.eval_surface(self.coeffs)

    def eval_volume(self) -> VolumeEval:
        return self.space.eval_volume(self.coeffs)

    def copy(self) -> "FEFunction":
        return FEFunction(self.space, self.coeffs.copy())
