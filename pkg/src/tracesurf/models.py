"""Discrete models: Laplace-Beltrami, the phase-field step, the flow step,
and the coupled time-stepping driver with its stability monitor.

One time step of the coupled system is decoupled into two linear solves:

  step 1 (phase): backward-Euler transport + chemical-potential update,
      (c^{n+1}-c^n, v)/dt - (u^n c^{n+1}, grad_G v) + a_mu(mu^{n+1}, v) = 0,
      (mu^{n+1} - gamma_c dt/eps [c]_t - f0'(c^n)/eps, g) - a_c(c^{n+1}, g) = 0;

  step 2 (flow): linear saddle-point momentum/continuity solve with the old
      density in the time term, convection linearised at u^n, viscosity at
      c^{n+1}, the theta-weighted chemical flux moved to the left-hand side,
      and line tension -sigma c^{n+1} grad_G mu^{n+1} as a load.

Both steps keep their residual-reported Krylov solves; the driver accepts a
step only if the solves converged and the Lyapunov functional stays below the
initial energy plus accumulated external-force work (within a small relative
tolerance) -- the discrete stability bound is cumulative, so brief energy
fluctuations during domain-merging events are legitimate while an excursion
above the energy budget is not.  Rejected steps restore the state and halve
dt; easy steps grow it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from . import diagnostics as diag
from . import physics as phys
from .assembly import FormParams
from .fe_space import FESpace, FEFunction
from .geometry import ActiveMesh, BackgroundMesh, LevelSetSurface, build_active_mesh
from .physics import MaterialParams, ElectrostaticParams
from .solvers import (SolveReport, make_ilu_preconditioner, saddle_matrix,
                      solve_nonsym, solve_saddle, solve_spd)


# -- Laplace-Beltrami --------------------------------------------------------


def solve_laplace_beltrami(am: ActiveMesh, f: Callable, rho_s: float | None = None,
                           tol: float = 1.0e-10, maxiter: int = 2000):
    """Solve -Delta_G u + u = f on the discrete surface with P1 trace elements.

    The full-gradient volume stabilisation rho_s s_h (default rho_s = h) makes
    the system uniformly well conditioned in the cut positions.  f is called
    with the surface quadrature points (n, 3).
    """
    V = FESpace(am, degree=1)
    if rho_s is None:
        rho_s = am.h
    A = (asm.stiffness_matrix(V) + asm.mass_matrix(V)
         + rho_s * asm.volume_stab_matrix(V))
    fq = np.asarray(f(am.surf_qp.reshape(-1, 3))).reshape(am.surf_qw.shape)
    b = asm.scalar_load(V, fq)
    x, rep = solve_spd(A, b, tol=tol, maxiter=maxiter)
    return FEFunction(V, x), A, rep


def lb_manufactured_errors(am: ActiveMesh, u_fe: FEFunction):
    """L2/H1 surface errors against u* = x1 x2 x3 on the unit sphere (f = 13 u*)."""
    surface = am.surface
    qp = am.surf_qp
    p = surface.project(qp.reshape(-1, 3)).reshape(qp.shape)
    uex = p[..., 0] * p[..., 1] * p[..., 2]
    g = np.stack([p[..., 1] * p[..., 2], p[..., 0] * p[..., 2],
                  p[..., 0] * p[..., 1]], axis=-1)
    nrm = p - surface.center
    nrm = nrm / np.linalg.norm(nrm, axis=-1, keepdims=True)
    gex = g - np.einsum("tqa,tqa->tq", g, nrm)[..., None] * nrm
    ev = u_fe.eval_surface()
    e2 = np.sum(am.surf_qw * (ev.values - uex) ** 2)
    h1 = np.sum(am.surf_qw * np.sum((ev.surf_grad - gex) ** 2, axis=-1))
    return float(np.sqrt(e2)), float(np.sqrt(h1))


def lb_convergence_study(n_levels=(8, 16, 32), box: float = 1.6,
                         tol: float = 1.0e-10):
    """Manufactured convergence study on the unit sphere; returns one dict per level."""
    sph = LevelSetSurface()
    rows = []
    for n in n_levels:
        mesh = BackgroundMesh([-box] * 3, [box] * 3, n)
        am = build_active_mesh(mesh, sph)

        def f(x):
            p = sph.project(x)
            return 13.0 * p[:, 0] * p[:, 1] * p[:, 2]

        u, _, rep = solve_laplace_beltrami(am, f, tol=tol)
        errL2, errH1 = lb_manufactured_errors(am, u)
        row = {"n": n, "h": mesh.h, "errL2": errL2, "errH1": errH1,
               "iterations": rep.iterations, "eocL2": np.nan, "eocH1": np.nan}
        if rows:
            r0 = rows[-1]
            row["eocL2"] = np.log(r0["errL2"] / errL2) / np.log(r0["h"] / mesh.h)
            row["eocH1"] = np.log(r0["errH1"] / errH1) / np.log(r0["h"] / mesh.h)
        rows.append(row)
    return rows


# -- operator bundle ---------------------------------------------------------


class Operators:
    """Mesh-constant matrices shared by every step of a run."""

    def __init__(self, Vc: FESpace, Vu: FESpace | None, fp: FormParams):
        self.fp = fp
        self.Mc = asm.mass_matrix(Vc)
        self.stab_c = asm.volume_stab_matrix(Vc)
        self.A_c = asm.assemble_a_c(Vc, fp, self.stab_c)
        self.ones_c = np.ones(Vc.n_scalar)
        self.lump_c = self.Mc @ self.ones_c
        if Vu is not None:
            self.stab_u3 = asm.vector_volume_stab_matrix(Vu)
            self.penalty_u = asm.normal_penalty_matrix(Vu)
            self.B = asm.divergence_matrix(Vu, Vc)
            self.S_pp = fp.beta_p * self.stab_c


# -- the two substeps --------------------------------------------------------


def ch_step(Vc: FESpace, ops: Operators, c: np.ndarray, dt: float,
            mp: MaterialParams, u_values: np.ndarray,
            tol: float = 1.0e-10, maxiter: int = 2000,
            mu0: np.ndarray | None = None):
    """One phase-field step; returns (c_new, mu_new, report, A_mu).

    The block system is assembled with the first row scaled by dt, which keeps
    conditioning mild and preserves exact mass conservation (the constant test
    function annihilates transport, diffusion and stabilisation).
    """
    fp = ops.fp
    ev = Vc.eval_surface(c)
    mob = phys.mobility(ev.values, mp)
    A_mu = asm.assemble_a_mu(Vc, mob, fp, ops.stab_c)
    T = asm.transport_matrix(Vc, u_values)
    g_over_eps = fp.gamma_c / fp.epsilon
    K = sp.bmat(
        [
            [ops.Mc + dt * T, dt * A_mu],
            [-g_over_eps * ops.Mc - ops.A_c, ops.Mc],
        ],
        format="csr",
    )
    F = asm.scalar_load(Vc, phys.f0_prime(ev.values))
    rhs = np.concatenate([ops.Mc @ c, F / fp.epsilon - g_over_eps * (ops.Mc @ c)])
    x0 = np.concatenate([c, mu0 if mu0 is not None else np.zeros_like(c)])
    x, rep = solve_nonsym(K, rhs, tol=tol, maxiter=maxiter, x0=x0)
    rep.method = "gmres-ch"
    n = Vc.n_scalar
    return x[:n], x[n:], rep, A_mu


class PrecondCache:
    """Reuses the saddle-point ILU across steps until it degrades.

    The matrix drifts slowly with the coefficients, so an old factorisation
    stays a good preconditioner for several steps; it is rebuilt
    deterministically on first use, every `refresh_every` solves, when the
    step size changes (the 1/dt time term rescales the whole velocity block),
    or after a slow/failed solve.
    """

    def __init__(self, refresh_every: int = 8, slow_iters: int = 300):
        self.refresh_every = refresh_every
        self.slow_iters = slow_iters
        self.M = None
        self.age = 0
        self.key = None

    def get(self, K: sp.csr_matrix, key: float | None = None):
        if self.M is None or self.age >= self.refresh_every or key != self.key:
            self.M = make_ilu_preconditioner(K)
            self.age = 0
            self.key = key
        self.age += 1
        return self.M

    def report(self, rep: SolveReport):
        if not rep.converged or rep.iterations > self.slow_iters:
            self.M = None


def ns_step(Vu: FESpace, Vc: FESpace, ops: Operators, u: np.ndarray,
            p: np.ndarray, c_old: np.ndarray, c_new: np.ndarray,
            mu_new: np.ndarray, dt: float, mp: MaterialParams,
            f_ext: np.ndarray | None = None, tol: float = 1.0e-8,
            maxiter: int = 2000, cache: PrecondCache | None = None):
    """One momentum/continuity step.

    Returns (u_new, p_new, report, A_form, f_work): A_form is the
    viscous+penalty+stabilisation bilinear form used by the dissipation
    monitor; f_work is the external-force power (f_ext, u_new), the rate at
    which forcing feeds energy into the membrane (0 without forcing).
    """
    fp = ops.fp
    ev_old = Vc.eval_surface(c_old)
    ev_new = Vc.eval_surface(c_new)
    ev_mu = Vc.eval_surface(mu_new)
    eu = Vu.eval_surface(u)

    rho_old = phys.rho_smooth(ev_old.values, mp)
    rho_new = phys.rho_smooth(ev_new.values, mp)
    rhohat = phys.rho_hat(ev_new.values, mp)
    eta = phys.cutoff_viscosity(ev_new.values, mp)
    th = phys.theta(ev_new.values, mp)
    grad_th = phys.theta_prime(ev_new.values, mp)[..., None] * ev_new.surf_grad
    mob = phys.mobility(ev_new.values, mp)

    W = asm.tangential_mass_matrix(Vu, rho_old / dt)
    C = asm.convection_matrix(Vu, eu.values, eu.div_gamma, rho_new, rhohat)
    A_form = (asm.strain_matrix(Vu, eta) + fp.tau * ops.penalty_u
              + fp.beta_u * ops.stab_u3)
    TF = asm.theta_flux_matrix(Vu, mob, th, grad_th, ev_mu.surf_grad)
    A_uu = W + C + A_form - TF

    f_lt = -mp.sigma_gamma * ev_new.values[..., None] * ev_mu.surf_grad
    load_ext = asm.vector_load(Vu, f_ext) if f_ext is not None else None
    rhs_u = W @ u + asm.vector_load(Vu, f_lt)
    if load_ext is not None:
        rhs_u = rhs_u + load_ext

    K = saddle_matrix(A_uu, ops.B, ops.S_pp)
    rhs = np.concatenate([rhs_u, np.zeros(Vc.n_scalar)])
    x0 = np.concatenate([u, p])
    M = cache.get(K, key=dt) if cache is not None else None
    x, rep = solve_nonsym(K, rhs, tol=tol, maxiter=maxiter, x0=x0, M=M)
    rep.method = "gmres-saddle"
    if cache is not None:
        cache.report(rep)
    nu = Vu.ndof
    u_new = x[:nu]
    p_new = x[nu:]
    p_new = p_new - (p_new @ ops.lump_c) / Vc.am.area   # zero-mean pressure
    f_work = float(load_ext @ u_new) if load_ext is not None else 0.0
    return u_new, p_new, rep, A_form, f_work


def adapt_dt(dt: float, lyap_rel_decrease: float, iter_fraction: float,
             sp_: "SchemeParams") -> float:
    """Grow dt when the step was easy (small energy drop, cheap solves)."""
    if lyap_rel_decrease < sp_.grow_threshold and iter_fraction < 1.0 / 3.0:
        dt = dt * sp_.grow
    return float(np.clip(dt, sp_.dt_min, sp_.dt_max))


# -- driver ------------------------------------------------------------------


@dataclass
class SchemeParams:
    dt_init: float = 1.0e-4
    dt_min: float = 4.0e-6
    dt_max: float = 4.0
    t_end: float = 1.0
    max_steps: int = 200
    tol_ch: float = 1.0e-10
    tol_ns: float = 1.0e-8
    max_iter: int = 2000
    lyap_tol: float = 1.0e-6       # allowed relative (to L0) Lyapunov increase
    grow_threshold: float = 1.0e-4
    grow: float = 1.5
    shrink: float = 0.5
    diag_every: int = 1


@dataclass
class RunResult:
    rows: list
    c: np.ndarray
    mu: np.ndarray
    u: np.ndarray
    p: np.ndarray
    t: float
    accepted: int
    rejected: int
    aborted: bool = False
    reason: str = ""
    extra: dict = field(default_factory=dict)


@dataclass
class Scenario:
    """Everything the coupled driver needs, already in simulation units."""

    am: ActiveMesh
    Vc: FESpace
    Vu: FESpace | None
    ops: Operators
    mp: MaterialParams
    sp: SchemeParams
    c0: np.ndarray
    u0: np.ndarray | None = None
    freeze_phase: bool = False
    freeze_velocity: bool = False
    external_force: Callable | None = None   # c_values (ntri,nq) -> (ntri,nq,3)
    on_accept: Callable | None = None        # called with (t, c, u) after a step
    stop_condition: Callable | None = None   # (t, c, u) -> bool, clean early stop
    min_triangles: int = 0


def nsch_run(sc: Scenario) -> RunResult:
    """Adaptive time stepping of the decoupled scheme with the Lyapunov monitor.

    A step is rejected (dt halved, state restored) if a solve fails or the
    Lyapunov functional would exceed L0 * (1 + lyap_tol), the stability bound
    guaranteed for the scheme; at dt_min the run aborts with the trajectory so
    far.  Accepted steps log one DiagnosticsRow every diag_every steps.
    """
    Vc, Vu, ops, mp, sp_ = sc.Vc, sc.Vu, sc.ops, sc.mp, sc.sp
    fp = ops.fp
    c = sc.c0.copy()
    mu = np.zeros_like(c)
    if Vu is not None:
        u = sc.u0.copy() if sc.u0 is not None else np.zeros(Vu.ndof)
    else:
        u = None
    p = np.zeros(Vc.n_scalar)
    zero_uq = np.zeros_like(sc.am.surf_qp)

    def lyap(c_, u_):
        return diag.lyapunov(Vc, c_, ops.A_c, mp, Vu, u_)

    L0 = lyap(c, u)
    L_prev = L0
    # Stability budget: L^N may never exceed the initial energy plus the work
    # the external force has fed in, up to a small relative slack.
    energy_budget = L0
    lyap_slack = sp_.lyap_tol * max(abs(L0), 1.0e-300)
    cache = PrecondCache()
    rows = [
        _diag_row(sc, 0.0, sp_.dt_init, c, u, L0, 0.0, 0, 0)
    ]
    t = 0.0
    dt = float(np.clip(sp_.dt_init, sp_.dt_min, sp_.dt_max))
    accepted = rejected = 0
    aborted = False
    reason = ""

    while t < sp_.t_end and accepted < sp_.max_steps:
        dt_step = min(dt, sp_.t_end - t)

        if sc.freeze_phase:
            c1, mu1, rep_ch, A_mu = c, mu, None, None
        else:
            u_vals = Vu.eval_surface(u).values if (Vu is not None) else zero_uq
            c1, mu1, rep_ch, A_mu = ch_step(
                Vc, ops, c, dt_step, mp, u_vals,
                tol=sp_.tol_ch, maxiter=sp_.max_iter, mu0=mu,
            )

        rep_ns, A_form, f_work = None, None, 0.0
        u1, p1 = u, p
        if Vu is not None and not sc.freeze_velocity:
            f_ext = None
            if sc.external_force is not None:
                f_ext = sc.external_force(Vc.eval_surface(c1).values)
            u1, p1, rep_ns, A_form, f_work = ns_step(
                Vu, Vc, ops, u, p, c, c1, mu1, dt_step, mp, f_ext=f_ext,
                tol=sp_.tol_ns, maxiter=sp_.max_iter, cache=cache,
            )

        ok = all(r is None or r.converged for r in (rep_ch, rep_ns))
        L1 = lyap(c1, u1) if ok else np.inf
        budget_new = energy_budget + dt_step * f_work
        if ok and not (L1 <= budget_new + lyap_slack):
            ok = False
        if not ok:
            rejected += 1
            if dt_step <= sp_.dt_min * (1.0 + 1.0e-12):
                aborted = True
                reason = (f"step rejected at dt_min (solves "
                          f"{'ok' if L1 < np.inf else 'failed'}, "
                          f"L {L1:.6e} vs budget {budget_new:.6e})")
                break
            dt = max(dt_step * sp_.shrink, sp_.dt_min)
            continue

        # stability-estimate dissipation increment:
        # dt * (a(eta; u, u) + a_mu(mu, mu) + s_h(p, p))
        diss = 0.0
        if A_form is not None:
            diss += u1 @ (A_form @ u1)
        if A_mu is not None:
            diss += mu1 @ (A_mu @ mu1)
        if Vu is not None and not sc.freeze_velocity:
            diss += p1 @ (ops.stab_c @ p1)
        diss *= dt_step

        t += dt_step
        c, mu, u, p = c1, mu1, u1, p1
        energy_budget = budget_new
        accepted += 1
        rel_dec = (L_prev - L1) / max(abs(L0), 1.0e-300)
        L_prev = L1
        iter_frac = max(
            (r.iterations / sp_.max_iter) for r in (rep_ch, rep_ns) if r is not None
        ) if (rep_ch or rep_ns) else 0.0
        if accepted % sp_.diag_every == 0 or t >= sp_.t_end:
            rows.append(_diag_row(
                sc, t, dt_step, c, u, L1, diss,
                rep_ch.iterations if rep_ch else 0,
                rep_ns.iterations if rep_ns else 0,
            ))
        if sc.on_accept is not None:
            sc.on_accept(t, c, u)
        if sc.stop_condition is not None and sc.stop_condition(t, c, u):
            reason = "stop condition met"
            break
        dt = adapt_dt(dt_step, rel_dec, iter_frac, sp_)

    return RunResult(rows=rows, c=c, mu=mu,
                     u=u if u is not None else np.zeros(0), p=p, t=t,
                     accepted=accepted, rejected=rejected,
                     aborted=aborted, reason=reason)


def _diag_row(sc: Scenario, t, dt, c, u, L, diss, it_ch, it_ns) -> diag.DiagnosticsRow:
    Vc, Vu, mp = sc.Vc, sc.Vu, sc.mp
    m = diag.mass(Vc, c)
    # count the dispersed (minority) phase: the domains that ripen and merge
    side = c if m <= 0.5 * sc.am.area else 1.0 - c
    return diag.DiagnosticsRow(
        t=t,
        dt=dt,
        mass=m,
        lyapunov=L,
        dissipation=diss,
        perimeter=diag.perimeter_ld(Vc, c, mp.epsilon),
        domain_count=diag.count_domains(Vc, side, min_triangles=sc.min_triangles),
        max_abs_c=float(np.abs(c).max()),
        rms_un=diag.rms_un(Vu, u) if (Vu is not None and u is not None) else 0.0,
        ch_iterations=it_ch,
        ns_iterations=it_ns,
    )


# -- initial conditions ------------------------------------------------------


def ic_bernoulli(Vc: FESpace, a_D: float, seed: int) -> np.ndarray:
    """Independent nodal draws: c_i = 1 with probability a_D, else 0."""
    rng = np.random.default_rng(seed)
    return (rng.random(Vc.n_scalar) < a_D).astype(float)


def ic_cap(Vc: FESpace, surface: LevelSetSurface, fraction: float,
           epsilon: float, direction=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Smoothed spherical cap of given area fraction centred on `direction`.

    The profile is the 1D equilibrium tanh shape in geodesic distance from the
    cap boundary, c = 1 inside the cap.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    x = Vc.dof_points - surface.center
    r = np.linalg.norm(x, axis=1)
    cos_psi = np.clip((x @ d) / np.where(r == 0, 1.0, r), -1.0, 1.0)
    psi = np.arccos(cos_psi)
    psi_b = np.arccos(1.0 - 2.0 * fraction)       # cap boundary polar angle
    s = surface.radius * (psi_b - psi)            # signed geodesic distance, >0 inside
    return 0.5 * (1.0 + np.tanh(s / (2.0 * np.sqrt(2.0) * epsilon)))


def ic_band(Vc: FESpace, surface: LevelSetSurface, fraction: float,
            epsilon: float, direction=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Smoothed band of given area fraction, symmetric about the equator of
    `direction`, with the tanh profile across both interfaces."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    x = Vc.dof_points - surface.center
    r = np.linalg.norm(x, axis=1)
    cos_psi = np.clip((x @ d) / np.where(r == 0, 1.0, r), -1.0, 1.0)
    psi = np.arccos(cos_psi)
    a = float(fraction)                     # band |z| < a has area fraction a
    psi1, psi2 = np.arccos(a), np.arccos(-a)
    w = surface.radius / (2.0 * np.sqrt(2.0) * epsilon)
    return 0.5 * (np.tanh(w * (psi - psi1)) - np.tanh(w * (psi - psi2)))


def ic_caps(Vc: FESpace, surface: LevelSetSurface, fraction: float,
            epsilon: float, direction=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Two antipodal smoothed caps along +/-direction, total area `fraction`."""
    up = ic_cap(Vc, surface, 0.5 * fraction, epsilon, direction)
    dn = ic_cap(Vc, surface, 0.5 * fraction, epsilon,
                -np.asarray(direction, dtype=float))
    return up + dn


def ic_uniform(Vc: FESpace, value: float) -> np.ndarray:
    return np.full(Vc.n_scalar, float(value))


# -- steady flow oracle ------------------------------------------------------


def rotation_fields(Vu: FESpace, surface: LevelSetSurface) -> np.ndarray:
    """The three interpolated rigid rotations (normal extensions), as columns."""
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0

        def w(x, e=e):
            q = surface.project(x)
            return np.cross(e, q - surface.center)

        cols.append(Vu.interpolate(w).coeffs)
    return np.column_stack(cols)


def project_out_rotations(load: np.ndarray, R: np.ndarray,
                          Mt: sp.csr_matrix) -> np.ndarray:
    """Remove the components of a load functional acting on the rotations."""
    G = R.T @ (Mt @ R)
    alpha = np.linalg.solve(G, R.T @ load)
    return load - (Mt @ R) @ alpha


def steady_flow_solve(Vu: FESpace, Vc: FESpace, ops: Operators, c: np.ndarray,
                      mp: MaterialParams, load: np.ndarray, tol: float = 1.0e-8,
                      picard_tol: float = 1.0e-10, max_picard: int = 30):
    """Picard fixed point of the steady discrete system (the time-limit oracle).

    Solves [A(eta) + C(u_k); B^T | B; -S] [u; p] = [load; 0] until the velocity
    stops changing; the same assembled blocks as the unsteady step, minus the
    time term.
    """
    fp = ops.fp
    ev = Vc.eval_surface(c)
    eta = phys.cutoff_viscosity(ev.values, mp)
    rho = phys.rho_smooth(ev.values, mp)
    rhohat = phys.rho_hat(ev.values, mp)
    A_visc = (asm.strain_matrix(Vu, eta) + fp.tau * ops.penalty_u
              + fp.beta_u * ops.stab_u3)
    u = np.zeros(Vu.ndof)
    p = np.zeros(Vc.n_scalar)
    rep = None
    for _ in range(max_picard):
        eu = Vu.eval_surface(u)
        C = asm.convection_matrix(Vu, eu.values, eu.div_gamma, rho, rhohat)
        u_new, p, rep = solve_saddle(A_visc + C, ops.B, ops.S_pp, load,
                                     tol=tol, x0=np.concatenate([u, p]))
        du = np.linalg.norm(u_new - u) / max(np.linalg.norm(u_new), 1e-300)
        u = u_new
        if du < picard_tol:
            break
    p = p - (p @ ops.lump_c) / Vc.am.area
    return u, p, rep
