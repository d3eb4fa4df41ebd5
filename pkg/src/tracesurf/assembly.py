"""Assembly of the surface/bulk bilinear forms and load vectors.

All forms integrate over the reconstructed surface triangles (order-4 rule) or
the active-tet volume (order-2 rule).  Nonlinear coefficients are sampled at
quadrature points and enter as arrays shaped like the quadrature tables;
polynomial factors in trial/test functions stay within the rules' exactness.

Matrices are scipy.sparse CSR; duplicate COO entries are summed on conversion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fe_space import FESpace


@dataclass
class FormParams:
    """Mesh-dependent stabilisation weights and model constants.

    tau_mu = h, tau_c = epsilon/h, tau = h^-2, beta_p = h, beta_u = h^-1,
    rho_s in [c h, c h^-1] (default c*h).  gamma_c stabilises the chemical
    potential update; sigma_gamma is the line-tension coefficient.
    """

    epsilon: float
    sigma_gamma: float = 1.0
    gamma_c: float = 1.0
    tau_mu: float = 0.0
    tau_c: float = 0.0
    tau: float = 0.0
    beta_p: float = 0.0
    beta_u: float = 0.0
    rho_s: float = 0.0

    @classmethod
    def from_mesh(cls, h: float, epsilon: float, sigma_gamma: float = 1.0,
                  gamma_c: float = 1.0, rho_s_scale: float = 1.0) -> "FormParams":
        return cls(
            epsilon=epsilon,
            sigma_gamma=sigma_gamma,
            gamma_c=gamma_c,
            tau_mu=h,
            tau_c=epsilon / h,
            tau=h**-2,
            beta_p=h,
            beta_u=1.0 / h,
            rho_s=rho_s_scale * h,
        )


def _scatter(elem: np.ndarray, rows: np.ndarray, cols: np.ndarray,
             shape) -> sp.csr_matrix:
    ne, ni, nj = elem.shape
    r = np.repeat(rows[:, :, None], nj, axis=2)
    c = np.repeat(cols[:, None, :], ni, axis=1)
    A = sp.coo_matrix((elem.ravel(), (r.ravel(), c.ravel())), shape=shape)
    return A.tocsr()


def _vector_dofs(V: FESpace, edofs: np.ndarray) -> np.ndarray:
    """Global dofs of a vector element, local order (component, scalar basis)."""
    off = np.arange(V.n_components) * V.n_scalar
    g = off[None, :, None] + edofs[:, None, :]
    return g.reshape(edofs.shape[0], -1)


def _coeff_surface(am, coeff):
    if coeff is None:
        return am.surf_qw
    return am.surf_qw * coeff


# -- scalar forms -----------------------------------------------------------


def mass_matrix(V: FESpace, coeff=None) -> sp.csr_matrix:
    """Surface mass matrix int coeff u v ds (coeff sampled at quadrature points)."""
    w = _coeff_surface(V.am, coeff)
    elem = np.einsum("tq,tqi,tqj->tij", w, V.surf_basis, V.surf_basis)
    return _scatter(elem, V.edofs_tri, V.edofs_tri, (V.n_scalar, V.n_scalar))


def stiffness_matrix(V: FESpace, coeff=None) -> sp.csr_matrix:
    """Surface stiffness int coeff grad_G u . grad_G v ds."""
    w = _coeff_surface(V.am, coeff)
    G = np.einsum("tab,tqib->tqia", V.proj_tri, V.surf_grad)
    elem = np.einsum("tq,tqia,tqja->tij", w, G, G)
    return _scatter(elem, V.edofs_tri, V.edofs_tri, (V.n_scalar, V.n_scalar))


def volume_stab_matrix(V: FESpace) -> sp.csr_matrix:
    """Normal-gradient volume stabilisation s_h(u, v) = int_omega (n.grad u)(n.grad v) dx."""
    am = V.am
    d = np.einsum("tqib,tb->tqi", V.vol_grad, am.ext_normal)
    elem = np.einsum("tq,tqi,tqj->tij", am.vol_qw, d, d)
    return _scatter(elem, V.edofs, V.edofs, (V.n_scalar, V.n_scalar))


def transport_matrix(Vc: FESpace, u_values) -> sp.csr_matrix:
    """T_ij = -int (u . grad_G v_i) c_j ds, the advective block of the phase update.

    u_values: velocity sampled at surface quadrature points, (ntri, nq, 3).
    """
    G = np.einsum("tab,tqib->tqia", Vc.proj_tri, Vc.surf_grad)
    a = np.einsum("tqia,tqa->tqi", G, u_values)
    elem = -np.einsum("tq,tqi,tqj->tij", Vc.am.surf_qw, a, Vc.surf_basis)
    return _scatter(elem, Vc.edofs_tri, Vc.edofs_tri, (Vc.n_scalar, Vc.n_scalar))


# -- vector forms -----------------------------------------------------------


def tangential_mass_matrix(Vu: FESpace, coeff=None) -> sp.csr_matrix:
    """int coeff (P u).(P v) ds on the vector space."""
    w = _coeff_surface(Vu.am, coeff)
    elem = np.einsum("tq,tab,tqi,tqj->taibj", w, Vu.proj_tri,
                     Vu.surf_basis, Vu.surf_basis)
    n = 3 * Vu.n_basis
    g = _vector_dofs(Vu, Vu.edofs_tri)
    return _scatter(elem.reshape(-1, n, n), g, g, (Vu.ndof, Vu.ndof))


def normal_penalty_matrix(Vu: FESpace) -> sp.csr_matrix:
    """int (u.n)(v.n) ds, penalising the normal velocity component."""
    am = Vu.am
    nn = am.tri_normal[:, :, None] * am.tri_normal[:, None, :]
    elem = np.einsum("tq,tab,tqi,tqj->taibj", am.surf_qw, nn,
                     Vu.surf_basis, Vu.surf_basis)
    n = 3 * Vu.n_basis
    g = _vector_dofs(Vu, Vu.edofs_tri)
    return _scatter(elem.reshape(-1, n, n), g, g, (Vu.ndof, Vu.ndof))


def strain_matrix(Vu: FESpace, eta=None) -> sp.csr_matrix:
    """int 2 eta E_s(u) : E_s(v) ds.

    With the piecewise-constant projector P, for u = phi_j e_b and v = phi_i e_a
    E_s(u):E_s(v) = 1/2 [ P_ab (G_i.G_j) + (G_i)_b (G_j)_a ],  G = P grad phi.
    """
    w = _coeff_surface(Vu.am, eta) * 2.0
    G = np.einsum("tab,tqib->tqia", Vu.proj_tri, Vu.surf_grad)
    t1 = np.einsum("tq,tab,tqic,tqjc->taibj", w, Vu.proj_tri, G, G)
    t2 = np.einsum("tq,tqib,tqja->taibj", w, G, G)
    elem = 0.5 * (t1 + t2)
    n = 3 * Vu.n_basis
    g = _vector_dofs(Vu, Vu.edofs_tri)
    return _scatter(elem.reshape(-1, n, n), g, g, (Vu.ndof, Vu.ndof))


def vector_volume_stab_matrix(Vu: FESpace) -> sp.csr_matrix:
    """Componentwise s_h on the vector space (block diagonal kron(I3, S))."""
    S_elem_d = np.einsum("tqib,tb->tqi", Vu.vol_grad, Vu.am.ext_normal)
    elem = np.einsum("tq,tqi,tqj->tij", Vu.am.vol_qw, S_elem_d, S_elem_d)
    nb = Vu.n_basis
    ne = elem.shape[0]
    big = np.zeros((ne, 3 * nb, 3 * nb))
    for a in range(3):
        big[:, a * nb:(a + 1) * nb, a * nb:(a + 1) * nb] = elem
    g = _vector_dofs(Vu, Vu.edofs)
    return _scatter(big, g, g, (Vu.ndof, Vu.ndof))


def convection_matrix(Vu: FESpace, w_values, w_div_gamma, rho, rho_hat) -> sp.csr_matrix:
    """c(rho; w, u, v) = int rho v.(grad_G u-bar) w ds + 1/2 int rho_hat div_G(w-bar) u-bar.v-bar ds.

    w_values (ntri,nq,3) and w_div_gamma (ntri,nq) are the transport field's
    trace values and discrete surface divergence; rho, rho_hat are sampled
    densities (rho_hat = rho - (d rho/d c) c).
    """
    am = Vu.am
    G = np.einsum("tab,tqib->tqia", Vu.proj_tri, Vu.surf_grad)
    gw = np.einsum("tqja,tqa->tqj", G, w_values)
    t1 = np.einsum("tq,tab,tqi,tqj->taibj", am.surf_qw * rho, Vu.proj_tri,
                   Vu.surf_basis, gw)
    t2 = np.einsum("tq,tab,tqi,tqj->taibj", 0.5 * am.surf_qw * rho_hat * w_div_gamma,
                   Vu.proj_tri, Vu.surf_basis, Vu.surf_basis)
    elem = t1 + t2
    n = 3 * Vu.n_basis
    g = _vector_dofs(Vu, Vu.edofs_tri)
    return _scatter(elem.reshape(-1, n, n), g, g, (Vu.ndof, Vu.ndof))


def divergence_matrix(Vu: FESpace, Vp: FESpace) -> sp.csr_matrix:
    """b(u, q) = int u . grad_G q ds as a (pressure x velocity) matrix."""
    Gp = np.einsum("tab,tqib->tqia", Vp.proj_tri, Vp.surf_grad)
    elem = np.einsum("tq,tqia,tqj->tiaj", Vu.am.surf_qw, Gp, Vu.surf_basis)
    ntri = elem.shape[0]
    elem = elem.reshape(ntri, Vp.n_basis, 3 * Vu.n_basis)
    gu = _vector_dofs(Vu, Vu.edofs_tri)
    return _scatter(elem, Vp.edofs_tri, gu, (Vp.n_scalar, Vu.ndof))


def theta_flux_matrix(Vu: FESpace, mobility, theta, grad_theta, grad_mu) -> sp.csr_matrix:
    """M (grad_G(theta u-bar) grad_G mu, theta v): linear in u, assembled on the left.

    grad_G(theta u-bar) = theta P grad(u) P + (P u)(grad_G theta)^T with P
    constant per triangle; mobility/theta/gradients are quadrature samples.
    """
    am = Vu.am
    G = np.einsum("tab,tqib->tqia", Vu.proj_tri, Vu.surf_grad)
    gdotm = np.einsum("tqja,tqa->tqj", G, grad_mu)          # G_j . grad mu
    sdotm = np.einsum("tqa,tqa->tq", grad_theta, grad_mu)   # grad theta . grad mu
    w1 = am.surf_qw * mobility * theta * theta
    w2 = am.surf_qw * mobility * theta * sdotm
    t1 = np.einsum("tq,tab,tqi,tqj->taibj", w1, Vu.proj_tri, Vu.surf_basis, gdotm)
    t2 = np.einsum("tq,tab,tqi,tqj->taibj", w2, Vu.proj_tri, Vu.surf_basis,
                   Vu.surf_basis)
    elem = t1 + t2
    n = 3 * Vu.n_basis
    g = _vector_dofs(Vu, Vu.edofs_tri)
    return _scatter(elem.reshape(-1, n, n), g, g, (Vu.ndof, Vu.ndof))


# -- loads ------------------------------------------------------------------


def scalar_load(V: FESpace, f_values) -> np.ndarray:
    """int f v ds for f sampled at surface quadrature points (ntri, nq)."""
    elem = np.einsum("tq,tqi->ti", V.am.surf_qw * f_values, V.surf_basis)
    out = np.zeros(V.n_scalar)
    np.add.at(out, V.edofs_tri, elem)
    return out


def vector_load(Vu: FESpace, f_values) -> np.ndarray:
    """int f . v ds for a vector field f sampled at quadrature points (ntri, nq, 3)."""
    elem = np.einsum("tq,tqa,tqi->tai", Vu.am.surf_qw, f_values, Vu.surf_basis)
    out = np.zeros(Vu.ndof)
    g = _vector_dofs(Vu, Vu.edofs_tri).reshape(-1, 3, Vu.n_basis)
    np.add.at(out, g, elem)
    return out


# -- composite operators of the scheme --------------------------------------


def assemble_a_mu(Vc: FESpace, mobility_values, params: FormParams,
                  stab: sp.csr_matrix) -> sp.csr_matrix:
    """a_mu(mu, v) = int M grad_G mu . grad_G v ds + tau_mu s_h(mu, v)."""
    return stiffness_matrix(Vc, mobility_values) + params.tau_mu * stab


def assemble_a_c(Vc: FESpace, params: FormParams, stab: sp.csr_matrix) -> sp.csr_matrix:
    """a_c(c, g) = epsilon int grad_G c . grad_G g ds + tau_c s_h(c, g)."""
    return params.epsilon * stiffness_matrix(Vc) + params.tau_c * stab


def assemble_vector_a(Vu: FESpace, eta_values, params: FormParams,
                      stab3: sp.csr_matrix) -> sp.csr_matrix:
    """a(eta; u, v) = int 2 eta E_s:E_s ds + tau int (u.n)(v.n) ds + beta_u s_h (componentwise)."""
    return (strain_matrix(Vu, eta_values)
            + params.tau * normal_penalty_matrix(Vu)
            + params.beta_u * stab3)


def assemble_pressure_stab(Vp: FESpace, params: FormParams,
                           stab: sp.csr_matrix) -> sp.csr_matrix:
    """s(p, q) = beta_p s_h(p, q)."""
    return params.beta_p * stab


def surface_integral(am, values) -> float:
    """Direct quadrature of a sampled scalar field over the surface."""
    return float(np.sum(am.surf_qw * values))


def volume_integral(am, values) -> float:
    return float(np.sum(am.vol_qw * values))
