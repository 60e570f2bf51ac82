"""Time stepping and the nonlinear Gauss-Seidel outer iteration.

One step of the scheme:

1. predict ``q_mid = q_k + dt/2 qdot_k`` and detect contacts there,
2. free velocity ``qdot_free = qdot_k + dt M^-1 F``,
3. sweep the contacts in their fixed order, solving each one with the others
   frozen and pushing its impulse increment into ``qdot`` immediately,
4. stop once the averaged four-term error drops below ``eps_glob``,
5. close the step with ``q_{k+1} = q_mid + dt/2 qdot_{k+1}``.

Impulses are in N s.  The descent parameter handed to the local kernels is
``alpha * rho_bar * dt``, i.e. ``alpha`` times the reduced mass of the pair,
which makes ``alpha < 2`` the normal stability bound of the Uzawa step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import local
from .kinematics import (BodyState, detect_contacts, delassus_block, gaps,
                         initial_state, predict_positions)
from .scene import Scene, rho_bar

METHODS = ("SBP", "SAL", "EBP", "EAL")
DEFAULT_ALPHA = {"SBP": 0.6, "SAL": 0.6, "EBP": 1.0, "EAL": 1.0}


def method_code(method) -> int:
    name = str(method).upper()
    if name not in METHODS:
        raise ValueError(f"unknown solver {method!r}; expected one of {', '.join(METHODS)}")
    return METHODS.index(name)


@dataclass
class SolverConfig:
    """Outer and inner iteration settings.

    ``alpha=None`` picks 0.6 for the Uzawa variants and 1 for the Newton
    variants.  ``theta=None`` keeps the scene value.
    """

    method: str = "EBP"
    alpha: float | None = None
    theta: float | None = None
    eps_glob: float = 1e-10
    max_nlgs: int = 5000
    eps_newt: float = 1e-5
    max_newton: int = 100
    warm_start: bool = False
    paper_typo_mode: bool = False

    def __post_init__(self):
        self.method = METHODS[method_code(self.method)]
        if self.alpha is None:
            self.alpha = DEFAULT_ALPHA[self.method]
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.eps_glob > 0:
            raise ValueError("eps_glob must be > 0")
        if self.max_nlgs < 1:
            raise ValueError("max_nlgs must be >= 1")
        if not self.eps_newt > 0 or self.max_newton < 1:
            raise ValueError("Newton tolerance and cap must be positive")
        if self.theta is not None and not 0.5 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [1/2, 1]")


@dataclass
class StepReport:
    """Diagnostics of one time step.

    ``eps_terms_trace`` has one row per NLGS iteration with columns
    ``(eps_motion, eps_proj, eps_bipo, eps_pen, eps_glob)``.
    ``max_penetration`` is geometric (end-of-step positions, m) and
    ``max_eps_pen`` the largest velocity-based penetration term (m/s).
    """

    nlgs_iterations: int
    eps_glob_final: float
    eps_terms_trace: np.ndarray
    newton_iterations: np.ndarray
    max_penetration: float
    max_eps_pen: float
    converged: bool
    n_contacts: int
    newton_failures: int = 0
    statuses: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    impulses: np.ndarray | None = None

    @property
    def newton_iterations_total(self) -> int:
        return int(self.newton_iterations.sum())


# ---------------------------------------------------------------------------
# elementary pieces


def free_velocity(state: BodyState, scene: Scene, dt=None, theta=None) -> np.ndarray:
    """Velocity reached without contact forces.

    Gravity is the only external force; it is constant, so the theta-weighted
    average of ``F_k`` and ``F_{k+1}`` equals ``F`` and ``theta`` drops out.
    """
    dt = scene.dt if dt is None else dt
    d = scene.dimension
    out = state.qdot.copy()
    out[:, :d] += dt * np.asarray(scene.gravity, dtype=np.float64)
    return out


def impact_coefficients(e_n, e_t, d, paper_typo_mode=False):
    """Weights ``(a, c)`` with ``u_tilde = a * u_plus + c * u_minus``."""
    a = np.empty(d)
    c = np.empty(d)
    a[0] = 1.0 / (1.0 + e_n)
    c[0] = e_n / (1.0 + e_n)
    a[1:] = 1.0 / (1.0 + e_t)
    c[1:] = (e_n if paper_typo_mode else e_t) / (1.0 + e_t)
    return a, c


def newton_impact_transform(u_plus, u_minus, e_n, e_t, paper_typo_mode=False):
    """Restitution-weighted velocity ``(u+ + e u-) / (1 + e)`` per direction.

    With ``paper_typo_mode`` the tangential numerator uses ``e_n`` in place
    of ``e_t``.
    """
    u_plus = np.asarray(u_plus, dtype=np.float64)
    a, c = impact_coefficients(e_n, e_t, u_plus.shape[0], paper_typo_mode)
    return a * u_plus + c * np.asarray(u_minus, dtype=np.float64)


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, error_model="numpy")
def _local_velocity_into(J_a, J_b, a, b, qdot, u):
    for i in range(J_a.shape[0]):
        s = 0.0
        for k in range(J_a.shape[1]):
            s += J_a[i, k] * qdot[a, k]
        if b >= 0:
            for k in range(J_b.shape[1]):
                s += J_b[i, k] * qdot[b, k]
        u[i] = s


@njit(cache=True, error_model="numpy")
def _local_velocity(J_a, J_b, a, b, qdot):
    u = np.zeros(J_a.shape[0])
    _local_velocity_into(J_a, J_b, a, b, qdot, u)
    return u


@njit(cache=True, error_model="numpy")
def _push_impulse(J_a, J_b, a, b, minv, dr, qdot):
    d = J_a.shape[0]
    for k in range(J_a.shape[1]):
        s = 0.0
        for i in range(d):
            s += J_a[i, k] * dr[i]
        qdot[a, k] += minv[a, k] * s
    if b >= 0:
        for k in range(J_b.shape[1]):
            s = 0.0
            for i in range(d):
                s += J_b[i, k] * dr[i]
            qdot[b, k] += minv[b, k] * s


@njit(cache=True, error_model="numpy")
def _nlgs_sweep(method, body_a, body_b, J_a, J_b, W, mu, rho, a_coef, c_coef,
                u_minus, minv, qdot, r, ut, eps_newt, max_newton):
    """One Gauss-Seidel pass; returns ``(newton_iterations, newton_failures)``."""
    law = method % 2
    newton = method >= 2
    nc = body_a.shape[0]
    d = W.shape[1]
    its_total = 0
    failures = 0
    # per-sweep workspaces, reused by every contact
    u_plus = np.empty(d)
    bl = np.empty(d)
    rc = np.empty(d)
    dr = np.empty(d)
    tau = np.empty(d)
    We = np.empty((d, d))
    vw = np.empty((local.N_VEC_WORK, d))
    mw = np.empty((local.N_MAT_WORK, d, d))
    piv = np.empty(d, np.int64)
    for c in range(nc):
        a = body_a[c]
        b = body_b[c]
        _local_velocity_into(J_a[c], J_b[c], a, b, qdot, u_plus)
        for i in range(d):
            rc[i] = r[c, i]
        for i in range(d):
            # velocity the contact would see with its own impulse removed
            free = u_plus[i]
            for j in range(d):
                free -= W[c, i, j] * rc[j]
            bl[i] = a_coef[c, i] * free + c_coef[c, i] * u_minus[c, i]
            for j in range(d):
                We[i, j] = a_coef[c, i] * W[c, i, j]
        r_new = r[c]
        v_new = ut[c]
        if newton:
            # current velocity, then Newton in place on (r[c], ut[c])
            local.matvec_into(We, rc, v_new)
            for i in range(d):
                v_new[i] += bl[i]
            its, conv, broke = local._newton_core(We, bl, r_new, v_new, rho[c], mu[c], law,
                                                  eps_newt, max_newton, vw, mw, piv)
            its_total += its
            if not conv:
                failures += 1
        else:
            local.matvec_into(We, rc, dr)
            for i in range(d):
                dr[i] += bl[i]
            local._uzawa_into(rc, dr, rho[c], mu[c], law, tau, r_new)
            local.matvec_into(We, r_new, v_new)
            for i in range(d):
                v_new[i] += bl[i]
        for i in range(d):
            dr[i] = r_new[i] - rc[i]
        _push_impulse(J_a[c], J_b[c], a, b, minv, dr, qdot)
    return its_total, failures


@njit(cache=True, error_model="numpy")
def _error_terms(r, ut, um, mu, terms):
    """Averaged error terms of stacked states; ``um`` is the velocity the
    equation of motion gives for the current impulses.  Returns eps_glob."""
    nc = r.shape[0]
    d = r.shape[1]
    for k in range(5):
        terms[k] = 0.0
    if nc == 0:
        return 0.0
    p = np.empty(d)
    for c in range(nc):
        local._project_cone_into(r[c], mu[c], p)
        fn = 0.0
        pn = 0.0
        for i in range(d):
            fi = ut[c, i] - um[c, i]
            pi = r[c, i] - p[i]
            fn += fi * fi
            pn += pi * pi
        bipo = abs(local.dot(ut[c], r[c]) + mu[c] * r[c, 0] * local.tangential_norm(ut[c]))
        terms[0] += math.sqrt(fn)
        terms[1] += math.sqrt(pn)
        terms[2] += bipo
        terms[3] += max(0.0, -ut[c, 0])
    for k in range(4):
        terms[k] /= nc
    terms[4] = terms[0] + terms[1] + terms[2] + terms[3]
    return terms[4]


@njit(cache=True, error_model="numpy")
def _sweep_error(method, body_a, body_b, J_a, J_b, a_coef, c_coef, u_minus, qdot,
                 r, ut, mu, terms, um):
    """Error after a sweep, with every contact's motion velocity taken from
    the current ``qdot`` (all impulses included).  ``um`` is scratch space
    shaped like ``ut``.

    The Uzawa variants carry no velocity unknown of their own: their ``ut``
    is overwritten with the motion velocity, so their motion term is zero.
    """
    nc = body_a.shape[0]
    d = ut.shape[1]
    for c in range(nc):
        _local_velocity_into(J_a[c], J_b[c], body_a[c], body_b[c], qdot, um[c])
        for i in range(d):
            um[c, i] = a_coef[c, i] * um[c, i] + c_coef[c, i] * u_minus[c, i]
    if method < 2:
        for c in range(nc):
            for i in range(d):
                ut[c, i] = um[c, i]
    return _error_terms(r, ut, um, mu, terms)


@njit(cache=True, error_model="numpy")
def _nlgs_loop(method, body_a, body_b, J_a, J_b, W, mu, rho, a_coef, c_coef,
               u_minus, minv, qdot, r, ut, eps_newt, max_newton,
               eps_glob, max_nlgs, trace, newton_trace):
    """Sweep until ``eps_glob`` is met; returns ``(iterations, failures)``."""
    terms = np.zeros(5)
    um = np.empty_like(ut)
    failures = 0
    it = 0
    while it < max_nlgs:
        its, fails = _nlgs_sweep(method, body_a, body_b, J_a, J_b, W, mu, rho,
                                 a_coef, c_coef, u_minus, minv, qdot, r, ut,
                                 eps_newt, max_newton)
        failures += fails
        eps = _sweep_error(method, body_a, body_b, J_a, J_b, a_coef, c_coef, u_minus,
                           qdot, r, ut, mu, terms, um)
        trace[it] = terms
        newton_trace[it] = its
        it += 1
        if eps <= eps_glob:
            break
    return it, failures


# ---------------------------------------------------------------------------
# packed contact data


@dataclass
class ContactArrays:
    """Struct-of-arrays view of a contact list for the compiled sweep."""

    body_a: np.ndarray
    body_b: np.ndarray
    J_a: np.ndarray
    J_b: np.ndarray
    W: np.ndarray
    mu: np.ndarray
    rho: np.ndarray
    a_coef: np.ndarray
    c_coef: np.ndarray

    @property
    def n(self):
        return self.body_a.shape[0]


def pack_contacts(contacts, scene: Scene, alpha, paper_typo_mode=False) -> ContactArrays:
    d, dofs = scene.dimension, scene.dofs
    nc = len(contacts)
    arr = ContactArrays(
        body_a=np.empty(nc, np.int64), body_b=np.empty(nc, np.int64),
        J_a=np.zeros((nc, d, dofs)), J_b=np.zeros((nc, d, dofs)),
        W=np.zeros((nc, d, d)), mu=np.empty(nc), rho=np.empty(nc),
        a_coef=np.ones((nc, d)), c_coef=np.zeros((nc, d)))
    for k, c in enumerate(contacts):
        arr.body_a[k] = c.body_a
        arr.body_b[k] = c.body_b
        arr.J_a[k] = c.P_a
        arr.J_b[k] = c.P_b
        arr.W[k] = delassus_block(c, scene)
        arr.mu[k] = c.mu
        arr.rho[k] = alpha * rho_bar(c, scene.dt) * scene.dt
        arr.a_coef[k], arr.c_coef[k] = impact_coefficients(c.e_n, c.e_t, d, paper_typo_mode)
    return arr


def local_velocities(arr: ContactArrays, qdot) -> np.ndarray:
    out = np.empty((arr.n, arr.W.shape[1]))
    for c in range(arr.n):
        out[c] = _local_velocity(arr.J_a[c], arr.J_b[c], arr.body_a[c], arr.body_b[c], qdot)
    return out


def explicit_velocity(arr: ContactArrays, qdot_free, minv, r) -> np.ndarray:
    """``qdot_free + M^-1 sum_c P_c r_c`` summed from scratch."""
    out = np.array(qdot_free, dtype=np.float64, copy=True)
    for c in range(arr.n):
        _push_impulse(arr.J_a[c], arr.J_b[c], arr.body_a[c], arr.body_b[c], minv, r[c], out)
    return out


def global_error(r, u_tilde, b_loc, W, mu):
    """Averaged four-term error and its breakdown.

    Per contact, ``b_loc + W r`` is the velocity given by the equation of
    motion and ``u_tilde`` the velocity carried by the local state.  Inputs
    are stacked: ``r``, ``u_tilde``, ``b_loc`` of shape (n, d), ``W`` of
    shape (n, d, d), ``mu`` of shape (n,).

    Returns
    -------
    eps_glob : float
    terms : ndarray
        ``(eps_motion, eps_proj, eps_bipo, eps_pen, eps_glob)``.
    """
    r = np.ascontiguousarray(r, dtype=np.float64)
    terms = np.zeros(5)
    if r.ndim != 2 or r.shape[0] == 0:
        return 0.0, terms
    um = np.ascontiguousarray(b_loc, dtype=np.float64) + np.einsum("cij,cj->ci", W, r)
    eps = _error_terms(r, np.ascontiguousarray(u_tilde, dtype=np.float64), um,
                       np.ascontiguousarray(mu, dtype=np.float64), terms)
    return float(eps), terms


class NLGSState:
    """Working arrays of one step, exposed so single sweeps can be driven."""

    def __init__(self, scene: Scene, state: BodyState, config: SolverConfig, previous=None):
        self.scene = scene
        self.config = config
        self.q_mid = predict_positions(state, scene.dt)
        self.contacts = detect_contacts(scene, self.q_mid)
        self.minv = scene.inverse_mass()
        self.qdot_free = free_velocity(state, scene, scene.dt, config.theta)
        self.arr = pack_contacts(self.contacts, scene, config.alpha, config.paper_typo_mode)
        nc, d = self.arr.n, scene.dimension
        self.u_minus = local_velocities(self.arr, state.qdot)
        self.r = np.zeros((nc, d))
        if config.warm_start and previous:
            for k, c in enumerate(self.contacts):
                if c.key in previous:
                    self.r[k] = previous[c.key]
        self.qdot = explicit_velocity(self.arr, self.qdot_free, self.minv, self.r)
        self.ut = self.motion_velocities()
        self.method = method_code(config.method)

    def sweep(self):
        """One pass over all contacts; returns ``(newton_its, failures)``."""
        a = self.arr
        return _nlgs_sweep(self.method, a.body_a, a.body_b, a.J_a, a.J_b, a.W, a.mu, a.rho,
                           a.a_coef, a.c_coef, self.u_minus, self.minv, self.qdot, self.r,
                           self.ut, self.config.eps_newt, self.config.max_newton)

    def motion_velocities(self):
        """Restitution-weighted local velocities of the current ``qdot``."""
        u_plus = local_velocities(self.arr, self.qdot)
        return self.arr.a_coef * u_plus + self.arr.c_coef * self.u_minus

    def error(self):
        """Error terms of the current iterate, as checked after each sweep."""
        a = self.arr
        terms = np.zeros(5)
        eps = _sweep_error(self.method, a.body_a, a.body_b, a.J_a, a.J_b, a.a_coef, a.c_coef,
                           self.u_minus, self.qdot, self.r, self.ut, a.mu, terms,
                           np.empty_like(self.ut))
        return float(eps), terms

    def iterate(self):
        """Run the outer loop; returns ``(iterations, trace, newton_trace, failures)``."""
        cfg = self.config
        a = self.arr
        if a.n == 0:
            return 1, np.zeros((1, 5)), np.zeros(1, np.int64), 0
        trace = np.zeros((cfg.max_nlgs, 5))
        newton_trace = np.zeros(cfg.max_nlgs, np.int64)
        it, failures = _nlgs_loop(self.method, a.body_a, a.body_b, a.J_a, a.J_b, a.W, a.mu,
                                  a.rho, a.a_coef, a.c_coef, self.u_minus, self.minv,
                                  self.qdot, self.r, self.ut, cfg.eps_newt, cfg.max_newton,
                                  cfg.eps_glob, cfg.max_nlgs, trace, newton_trace)
        return it, trace[:it].copy(), newton_trace[:it].copy(), failures

    def statuses(self):
        law = self.method % 2
        out = np.empty(self.arr.n, np.int64)
        for c in range(self.arr.n):
            tau = local.augmented_impulse(self.r[c], self.ut[c], self.arr.rho[c], self.arr.mu[c], law)
            out[c] = local.status_code(tau, self.arr.mu[c], law)
        return out


def step(scene: Scene, state: BodyState, config: SolverConfig, previous=None):
    """Advance one time step.

    ``previous`` maps contact keys to impulses for warm starting; the
    returned report carries the impulses of this step for the next one.

    Returns
    -------
    new_state : BodyState
    report : StepReport
    """
    work = NLGSState(scene, state, config, previous)
    it, trace, newton_trace, failures = work.iterate()
    dt = scene.dt
    q_new = work.q_mid + 0.5 * dt * work.qdot
    eps_final = float(trace[-1, 4])
    if work.arr.n:
        pen = float(np.max(np.maximum(0.0, -gaps(scene, work.contacts, q_new)))) + 0.0
        max_eps_pen = float(np.max(np.maximum(0.0, -work.ut[:, 0]))) + 0.0
    else:
        pen = 0.0
        max_eps_pen = 0.0
    report = StepReport(
        nlgs_iterations=int(it), eps_glob_final=eps_final, eps_terms_trace=trace,
        newton_iterations=newton_trace, max_penetration=pen, max_eps_pen=max_eps_pen,
        converged=bool(eps_final <= config.eps_glob), n_contacts=work.arr.n,
        newton_failures=int(failures), statuses=work.statuses(),
        impulses={c.key: work.r[k].copy() for k, c in enumerate(work.contacts)})
    return BodyState(q_new, work.qdot.copy()), report


def run(scene: Scene, config: SolverConfig, n_steps: int, state: BodyState | None = None,
        callback=None, keep_reports=True):
    """Apply :func:`step` ``n_steps`` times from ``state`` (default: the scene's).

    ``callback(k, state, report)`` is called after each step when given.
    With ``keep_reports=False`` the returned list is empty, which keeps long
    runs from holding every iteration trace.

    Returns
    -------
    state : BodyState
    reports : list of StepReport
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    state = initial_state(scene) if state is None else state.copy()
    reports = []
    previous = None
    for k in range(n_steps):
        state, rep = step(scene, state, config, previous)
        previous = rep.impulses
        if keep_reports:
            reports.append(rep)
        if callback is not None:
            callback(k, state, rep)
    return state, reports
