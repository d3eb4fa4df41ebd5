"""Scalar observables of a phase-field/flow state on the discrete surface."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import scipy.sparse as sp

from .fe_space import FESpace
from .physics import MaterialParams, f0, rho_smooth


@dataclass
class DiagnosticsRow:
    """One accepted time step's observables (the CSV schema, in column order)."""

    t: float
    dt: float
    mass: float
    lyapunov: float
    dissipation: float
    perimeter: float
    domain_count: int
    max_abs_c: float
    rms_un: float
    ch_iterations: int
    ns_iterations: int

    @classmethod
    def column_names(cls):
        return [f.name for f in fields(cls)]

    def values(self):
        return [getattr(self, f.name) for f in fields(self.__class__)]


def mass(Vc: FESpace, c: np.ndarray) -> float:
    """Total order parameter int c ds (conserved by the transport scheme)."""
    ev = Vc.eval_surface(c)
    return float(np.sum(Vc.am.surf_qw * ev.values))


def perimeter_ld(Vc: FESpace, c: np.ndarray, epsilon: float) -> float:
    """Interface-length proxy p_ld = 2 pi int epsilon |grad_G c|^2 ds.

    For an equilibrium profile this is 2 pi * (interface length) * I_eps with
    I_eps = sqrt(2)/12 per unit length.
    """
    ev = Vc.eval_surface(c)
    g2 = np.einsum("tqa,tqa->tq", ev.surf_grad, ev.surf_grad)
    return float(2.0 * np.pi * epsilon * np.sum(Vc.am.surf_qw * g2))


def _triangle_edge_keys(am):
    """Canonical keys of the three edges of each triangle.

    A triangle vertex is identified by the background edge carrying it, so a
    shared triangle edge has an identical key in both neighbouring triangles.
    """
    nv = am.mesh.n_vertices
    vk = am.tri_edges[:, :, 0].astype(np.int64) * nv + am.tri_edges[:, :, 1]
    uniq, inv = np.unique(vk, return_inverse=True)             # compact cut-edge ids
    vk = inv.reshape(vk.shape).astype(np.int64)
    pairs = np.stack([vk, np.roll(vk, -1, axis=1)], axis=-1)   # (ntri, 3, 2)
    lo = pairs.min(axis=2)
    hi = pairs.max(axis=2)
    return lo * uniq.size + hi


def count_domains(Vc: FESpace, c: np.ndarray, threshold: float = 0.5,
                  min_triangles: int = 0) -> int:
    """Connected components of {triangle mean of c > threshold} (edge adjacency)."""
    am = Vc.am
    ev = Vc.eval_surface(c)
    tri_mean = np.einsum("tq,tq->t", am.surf_qw, ev.values) / am.tri_area
    sel = np.nonzero(tri_mean > threshold)[0]
    if sel.size == 0:
        return 0
    keys = _triangle_edge_keys(am)[sel]                         # (m, 3)
    # connect triangles sharing an edge key
    flat = keys.ravel()
    order = np.argsort(flat, kind="stable")
    srt = flat[order]
    tri_of = order // 3
    same = srt[1:] == srt[:-1]
    a = tri_of[:-1][same]
    b = tri_of[1:][same]
    m = sel.size
    graph = sp.coo_matrix((np.ones(a.size), (a, b)), shape=(m, m))
    ncomp, labels = sp.csgraph.connected_components(graph, directed=False)
    if min_triangles <= 1:
        return int(ncomp)
    sizes = np.bincount(labels)
    return int(np.sum(sizes >= min_triangles))


def lyapunov(Vc: FESpace, c: np.ndarray, A_c: sp.csr_matrix, mp: MaterialParams,
             Vu: FESpace | None = None, u: np.ndarray | None = None) -> float:
    """L = int (rho |u-bar|^2 + (sigma/eps) f0(c)) ds + a_c(c, c)."""
    am = Vc.am
    ev = Vc.eval_surface(c)
    val = (mp.sigma_gamma / mp.epsilon) * f0(ev.values)
    if u is not None and Vu is not None:
        eu = Vu.eval_surface(u)
        Pu = np.einsum("tab,tqb->tqa", Vu.proj_tri, eu.values)
        val = val + rho_smooth(ev.values, mp) * np.einsum("tqa,tqa->tq", Pu, Pu)
    return float(np.sum(am.surf_qw * val) + c @ (A_c @ c))


def rms_un(Vu: FESpace, u: np.ndarray) -> float:
    """Area-weighted root-mean-square of the normal velocity component."""
    ev = Vu.eval_surface(u)
    am = Vu.am
    return float(np.sqrt(np.sum(am.surf_qw * ev.normal_comp**2) / am.area))


def region_centroid(Vc: FESpace, c: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Area-weighted centroid of the region {c > threshold} (nan if empty)."""
    am = Vc.am
    ev = Vc.eval_surface(c)
    msk = ev.values > threshold
    w = am.surf_qw * msk
    tot = w.sum()
    if tot == 0.0:
        return np.full(3, np.nan)
    return np.einsum("tq,tqd->d", w, am.surf_qp) / tot
