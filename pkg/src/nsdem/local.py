"""Per-contact mathematics for the four frictional contact solvers.

All vectors live in the local contact frame ``(n, t1[, t2])``: component 0 is
the normal part, the remaining ``d - 1`` components are tangential.  Two
admissible sets are used:

* the Coulomb cone ``K_mu = {r : |r_t| <= mu r_n}`` (bi-potential family,
  SBP / EBP),
* the half cylinder ``R+ x B(0, mu r_n)`` whose radius follows the normal
  component (augmented Lagrangian family, SAL / EAL).

The kernels are compiled with numba so that the Gauss-Seidel driver can call
them from its own compiled sweep; they are equally usable from Python with
float64 numpy arrays.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

SEPARATING = 0
STICKING = 1
SLIDING = 2

CONE = 0
CYLINDER = 1

# below this norm a direction v/|v| is replaced by the zero vector
NORM_EPS = 1e-12
# condensed matrices with a 1-norm condition number above this are rejected
COND_MAX = 1e12
# consecutive non-decreasing Newton errors tolerated before falling back
STALL_LIMIT = 5
# backtracking halvings tried when a full Newton step does not reduce the error
MAX_HALVINGS = 30


class ContactStatus(enum.IntEnum):
    SEPARATING = SEPARATING
    STICKING = STICKING
    SLIDING = SLIDING


class ContactLaw(enum.IntEnum):
    CONE = CONE
    CYLINDER = CYLINDER


class NewtonBreakdown(ArithmeticError):
    """The condensed Newton matrix is singular or too ill-conditioned."""


@dataclass
class LocalContactState:
    """Impulse ``r`` and post-impact relative velocity ``u_tilde`` of one contact."""

    r: np.ndarray
    u_tilde: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.u_tilde = np.asarray(self.u_tilde, dtype=np.float64)


def _law(law) -> int:
    if isinstance(law, str):
        return ContactLaw[law.upper()].value
    return int(law)


# ---------------------------------------------------------------------------
# small vector helpers


@njit(cache=True, error_model="numpy")
def tangential_norm(x):
    s = 0.0
    for k in range(1, x.shape[0]):
        s += x[k] * x[k]
    return math.sqrt(s)


@njit(cache=True, error_model="numpy")
def _vnorm(x):
    s = 0.0
    for k in range(x.shape[0]):
        s += x[k] * x[k]
    return math.sqrt(s)


@njit(cache=True, error_model="numpy")
def dot(x, y):
    s = 0.0
    for k in range(x.shape[0]):
        s += x[k] * y[k]
    return s


@njit(cache=True, error_model="numpy")
def matvec_into(M, x, out):
    for i in range(M.shape[0]):
        s = 0.0
        for k in range(M.shape[1]):
            s += M[i, k] * x[k]
        out[i] = s


@njit(cache=True, error_model="numpy")
def matvec(M, x):
    # plain loops: BLAS dispatch costs more than the work at d <= 3
    out = np.zeros(M.shape[0])
    matvec_into(M, x, out)
    return out


# ---------------------------------------------------------------------------
# projections
#
# The ``*_into`` kernels write their result into a caller-owned buffer so the
# Gauss-Seidel sweep runs without temporary arrays; the plain names allocate.


@njit(cache=True, error_model="numpy")
def _project_cone_into(tau, mu, out):
    d = tau.shape[0]
    tn = tau[0]
    nt = tangential_norm(tau)
    if tn >= 0.0 and nt <= mu * tn:
        for k in range(d):
            out[k] = tau[k]
    elif mu * nt <= -tn:
        for k in range(d):
            out[k] = 0.0
    else:
        # nt > 0 on this branch
        s = (nt - mu * tn) / (1.0 + mu * mu)
        out[0] = tn + mu * s
        scale = 1.0 - s / nt
        for k in range(1, d):
            out[k] = tau[k] * scale


@njit(cache=True, error_model="numpy")
def _project_cylinder_into(tau, mu, out):
    d = tau.shape[0]
    rn = max(0.0, tau[0])
    radius = mu * rn
    nt = tangential_norm(tau)
    scale = 1.0 if nt <= radius else radius / nt
    out[0] = rn
    for k in range(1, d):
        out[k] = tau[k] * scale


@njit(cache=True, error_model="numpy")
def _project_into(tau, mu, law, out):
    if law == CONE:
        _project_cone_into(tau, mu, out)
    else:
        _project_cylinder_into(tau, mu, out)


@njit(cache=True, error_model="numpy")
def project_coulomb_cone(tau, mu):
    """Orthogonal projection of ``tau`` onto the Coulomb cone ``K_mu``."""
    out = np.empty(tau.shape[0])
    _project_cone_into(tau, mu, out)
    return out


@njit(cache=True, error_model="numpy")
def project_cylinder(tau, mu):
    """Projection onto ``R+ x B(0, mu r_n)`` with ``r_n = max(0, tau_n)``."""
    out = np.empty(tau.shape[0])
    _project_cylinder_into(tau, mu, out)
    return out


@njit(cache=True, error_model="numpy")
def project(tau, mu, law):
    out = np.empty(tau.shape[0])
    _project_into(tau, mu, law, out)
    return out


# ---------------------------------------------------------------------------
# augmented impulse and one-shot Uzawa steps


@njit(cache=True, error_model="numpy")
def descent_direction(u, mu, law):
    """``mu |u_t| n + u`` for the cone law, ``u`` for the cylinder law."""
    D = u.copy()
    if law == CONE:
        D[0] += mu * tangential_norm(u)
    return D


@njit(cache=True, error_model="numpy")
def _augmented_into(r, u, rho, mu, law, out):
    extra = mu * tangential_norm(u) if law == CONE else 0.0
    out[0] = r[0] - rho * (u[0] + extra)
    for k in range(1, r.shape[0]):
        out[k] = r[k] - rho * u[k]


@njit(cache=True, error_model="numpy")
def augmented_impulse(r, u, rho, mu, law):
    """``tau = r - rho D(u)``."""
    out = np.empty(r.shape[0])
    _augmented_into(r, u, rho, mu, law, out)
    return out


@njit(cache=True, error_model="numpy")
def _uzawa_into(r, u, rho, mu, law, tau, out):
    _augmented_into(r, u, rho, mu, law, tau)
    _project_into(tau, mu, law, out)


@njit(cache=True, error_model="numpy")
def sbp_step(r, u, rho, mu):
    return project_coulomb_cone(augmented_impulse(r, u, rho, mu, CONE), mu)


@njit(cache=True, error_model="numpy")
def sal_step(r, u, rho, mu):
    return project_cylinder(augmented_impulse(r, u, rho, mu, CYLINDER), mu)


@njit(cache=True, error_model="numpy")
def uzawa_step(r, u, rho, mu, law):
    tau = np.empty(r.shape[0])
    out = np.empty(r.shape[0])
    _uzawa_into(r, u, rho, mu, law, tau, out)
    return out


# ---------------------------------------------------------------------------
# status, residual and tangent blocks


@njit(cache=True, error_model="numpy")
def status_code(tau, mu, law):
    tn = tau[0]
    nt = tangential_norm(tau)
    if law == CONE:
        if tn >= 0.0 and nt < mu * tn:
            return STICKING
        if mu * nt <= -tn:
            return SEPARATING
        return SLIDING
    if tn <= 0.0:
        return SEPARATING
    if nt < mu * tn:
        return STICKING
    return SLIDING


def contact_status(tau, mu, law) -> ContactStatus:
    """Classify an augmented impulse into separating / sticking / sliding."""
    tau = np.asarray(tau, dtype=np.float64)
    return ContactStatus(status_code(tau, float(mu), _law(law)))


@njit(cache=True, error_model="numpy")
def _residual_into(r, u, rho, mu, law, tau, p, out):
    _augmented_into(r, u, rho, mu, law, tau)
    _project_into(tau, mu, law, p)
    for k in range(r.shape[0]):
        out[k] = r[k] - p[k]


@njit(cache=True, error_model="numpy")
def _residual(r, u, rho, mu, law):
    d = r.shape[0]
    tau = np.empty(d)
    p = np.empty(d)
    out = np.empty(d)
    _residual_into(r, u, rho, mu, law, tau, p, out)
    return out


def residual_Z(chi: LocalContactState, rho, mu, law) -> np.ndarray:
    """Error on the prediction of the reaction, ``r - proj(tau)``."""
    return _residual(chi.r, chi.u_tilde, float(rho), float(mu), _law(law))


@njit(cache=True, error_model="numpy")
def _unit_into(x, out):
    # tangential part of x normalized, zero if tiny; out[0] = 0
    d = x.shape[0]
    nrm = tangential_norm(x)
    out[0] = 0.0
    for k in range(1, d):
        out[k] = x[k] / nrm if nrm >= NORM_EPS else 0.0
    return nrm


@njit(cache=True, error_model="numpy")
def _tangent_blocks_into(r, v, rho, mu, law, tau, th, vh, g, A, B):
    """Fill ``A = dZ/dr`` and ``B = dZ/dv``; returns the status code."""
    d = r.shape[0]
    for i in range(d):
        for j in range(d):
            A[i, j] = 0.0
            B[i, j] = 0.0
    _augmented_into(r, v, rho, mu, law, tau)
    status = status_code(tau, mu, law)
    if status == SEPARATING:
        for i in range(d):
            A[i, i] = 1.0
        return status

    nt = _unit_into(tau, th)
    tn = tau[0]
    if law == CONE:
        _unit_into(v, vh)
        if status == STICKING:
            B[0, 0] = rho
            for k in range(1, d):
                B[0, k] = rho * mu * vh[k]
                B[k, k] = rho
            return status
        # sliding on the cone
        c = 1.0 / (1.0 + mu * mu)
        s = (nt - mu * tn) * c
        for i in range(d):
            g[i] = th[i]
        g[0] = -mu
        for i in range(d):
            A[i, 0] = -mu * c * g[i]
            B[i, 0] = rho * mu * c * g[i]
        B[0, 0] += rho
        for k in range(1, d):
            for i in range(d):
                # d(tau_t / |tau_t|) / d(tau_tk)
                dth = 0.0
                if nt >= NORM_EPS and i > 0:
                    dth = ((1.0 if i == k else 0.0) - th[i] * th[k]) / nt
                A[i, k] = th[k] * c * g[i] + s * dth
                B[i, k] = -rho * c * (th[k] - mu * mu * vh[k]) * g[i] - rho * s * dth
            B[k, k] += rho
            B[0, k] += rho * mu * vh[k]
        return status

    # cylinder law
    if status == STICKING:
        for i in range(d):
            B[i, i] = rho
        return status
    B[0, 0] = rho
    for i in range(1, d):
        A[i, 0] = -mu * th[i]
        B[i, 0] = rho * mu * th[i]
    for k in range(1, d):
        for i in range(1, d):
            dth = 0.0
            if nt >= NORM_EPS:
                dth = ((1.0 if i == k else 0.0) - th[i] * th[k]) / nt
            A[i, k] = (1.0 if i == k else 0.0) - mu * tn * dth
            B[i, k] = rho * mu * tn * dth
    return status


@njit(cache=True, error_model="numpy")
def _tangent_blocks(r, v, rho, mu, law):
    d = r.shape[0]
    A = np.zeros((d, d))
    B = np.zeros((d, d))
    buf = np.empty((4, d))
    status = _tangent_blocks_into(r, v, rho, mu, law, buf[0], buf[1], buf[2], buf[3], A, B)
    return A, B, status


def tangent_blocks(chi: LocalContactState, rho, mu, law):
    """Jacobians ``A = dZ/dr`` and ``B = dZ/du`` of the prediction error.

    Column ``j`` of each matrix is the derivative with respect to local
    component ``j``; row ``i`` is the component of ``Z``.  The contact
    dimension is taken from the length of ``chi.r``.

    Returns
    -------
    A, B : ndarray, shape (d, d)
    status : ContactStatus
        The branch the blocks were taken from.
    """
    A, B, status = _tangent_blocks(chi.r, chi.u_tilde, float(rho), float(mu), _law(law))
    return A, B, ContactStatus(status)


# ---------------------------------------------------------------------------
# condensed linear solve


@njit(cache=True, error_model="numpy")
def _lu_factor_into(M, LU, piv):
    """Partial-pivoting LU of ``M`` into ``LU``; False if exactly singular."""
    n = M.shape[0]
    for i in range(n):
        piv[i] = i
        for k in range(n):
            LU[i, k] = M[i, k]
    for j in range(n):
        p = j
        big = abs(LU[j, j])
        for i in range(j + 1, n):
            if abs(LU[i, j]) > big:
                big = abs(LU[i, j])
                p = i
        if big == 0.0:
            return False
        if p != j:
            for k in range(n):
                tmp = LU[j, k]
                LU[j, k] = LU[p, k]
                LU[p, k] = tmp
            tmp_i = piv[j]
            piv[j] = piv[p]
            piv[p] = tmp_i
        for i in range(j + 1, n):
            LU[i, j] /= LU[j, j]
            for k in range(j + 1, n):
                LU[i, k] -= LU[i, j] * LU[j, k]
    return True


@njit(cache=True, error_model="numpy")
def _lu_solve_into(LU, piv, b, x):
    n = LU.shape[0]
    for i in range(n):
        x[i] = b[piv[i]]
    for i in range(n):
        for k in range(i):
            x[i] -= LU[i, k] * x[k]
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, n):
            x[i] -= LU[i, k] * x[k]
        x[i] /= LU[i, i]


@njit(cache=True, error_model="numpy")
def _norm1(M):
    best = 0.0
    for j in range(M.shape[1]):
        s = 0.0
        for i in range(M.shape[0]):
            s += abs(M[i, j])
        best = max(best, s)
    return best


@njit(cache=True, error_model="numpy")
def _condensed_into(A, B, W, f, g, M, LU, piv, rhs, e, col, dr, dv):
    """Condensed Newton solve into ``dr``, ``dv``; False on breakdown."""
    d = f.shape[0]
    for i in range(d):
        s = -g[i]
        for k in range(d):
            s += B[i, k] * f[k]
        rhs[i] = s
        for j in range(d):
            s = A[i, j]
            for k in range(d):
                s += B[i, k] * W[k, j]
            M[i, j] = s
    if not _lu_factor_into(M, LU, piv):
        return False
    # exact 1-norm condition number, affordable for d <= 3
    inv_norm = 0.0
    for j in range(d):
        for i in range(d):
            e[i] = 0.0
        e[j] = 1.0
        _lu_solve_into(LU, piv, e, col)
        s = 0.0
        for i in range(d):
            s += abs(col[i])
        inv_norm = max(inv_norm, s)
    cond = _norm1(M) * inv_norm
    if not np.isfinite(cond) or cond > COND_MAX:
        return False
    _lu_solve_into(LU, piv, rhs, dr)
    matvec_into(W, dr, dv)
    for i in range(d):
        dv[i] -= f[i]
    return True


@njit(cache=True, error_model="numpy")
def _condensed_solve(A, B, W, f, g):
    d = f.shape[0]
    mats = np.empty((2, d, d))
    vecs = np.empty((5, d))
    piv = np.empty(d, np.int64)
    ok = _condensed_into(A, B, W, f, g, mats[0], mats[1], piv, vecs[0], vecs[1], vecs[2],
                         vecs[3], vecs[4])
    if not ok:
        return np.zeros(d), np.zeros(d), False
    return vecs[3].copy(), vecs[4].copy(), True


def condensed_solve(A, B, W, f, g):
    """Solve the Newton system by eliminating the velocity block.

    The full system ``[[-W, I], [A, B]] (dr, dv) = (-f, -g)`` is reduced to
    ``(A + B W) dr = -g + B f`` followed by ``dv = -f + W dr``.

    Raises
    ------
    NewtonBreakdown
        If the condensed matrix is singular or its condition number exceeds
        ``COND_MAX``.
    """
    args = [np.ascontiguousarray(x, dtype=np.float64) for x in (A, B, W, f, g)]
    dr, dv, ok = _condensed_solve(*args)
    if not ok:
        raise NewtonBreakdown("condensed Newton matrix is singular or ill-conditioned")
    return dr, dv


# ---------------------------------------------------------------------------
# local Newton solver

# rows of the vector workspace used by _newton_core
_F, _Z, _TAU, _P, _DR, _DV, _RT, _VT, _RHS, _COL, _E, _TH, _VH, _G, _R0, _V0 = range(16)
N_VEC_WORK = 16
N_MAT_WORK = 4


@njit(cache=True, error_model="numpy")
def _motion_into(W, b, r, v, out):
    # f = v - b - W r
    for i in range(r.shape[0]):
        s = v[i] - b[i]
        for k in range(r.shape[0]):
            s -= W[i, k] * r[k]
        out[i] = s


@njit(cache=True, error_model="numpy")
def _newton_error_ws(W, b, r, v, rho, mu, law, vw):
    _motion_into(W, b, r, v, vw[_F])
    _residual_into(r, v, rho, mu, law, vw[_TAU], vw[_P], vw[_Z])
    return _vnorm(vw[_F]) + _vnorm(vw[_Z]) / rho


@njit(cache=True, error_model="numpy")
def newton_error(W, b, r, v, rho, mu, law):
    """Motion residual plus the velocity-scaled prediction error."""
    vw = np.empty((N_VEC_WORK, r.shape[0]))
    return _newton_error_ws(W, b, r, v, rho, mu, law, vw)


@njit(cache=True, error_model="numpy")
def _newton_core(W, b, r, v, rho, mu, law, eps_newt, max_iter, vw, mw, piv):
    """In-place Newton iteration on ``(r, v)``.

    Returns ``(iterations, converged, broke_down)``.  ``vw`` and ``mw`` are
    workspaces of shapes (N_VEC_WORK, d) and (N_MAT_WORK, d, d).
    """
    d = r.shape[0]
    r0 = vw[_R0]
    v0 = vw[_V0]
    for k in range(d):
        r0[k] = r[k]
        v0[k] = v[k]
    err = _newton_error_ws(W, b, r, v, rho, mu, law, vw)
    scale = _vnorm(v) + _vnorm(b) + _vnorm(r) / rho
    if err <= 4.0 * 2.220446049250313e-16 * scale:
        return 0, True, False

    A = mw[0]
    B = mw[1]
    dr = vw[_DR]
    dv = vw[_DV]
    r_try = vw[_RT]
    v_try = vw[_VT]
    best = err
    stall = 0
    it = 0
    broke = False
    converged = False
    while it < max_iter:
        # vw[_F] and vw[_Z] hold f and Z of the current iterate
        _tangent_blocks_into(r, v, rho, mu, law, vw[_TAU], vw[_TH], vw[_VH], vw[_G], A, B)
        ok = _condensed_into(A, B, W, vw[_F], vw[_Z], mw[2], mw[3], piv, vw[_RHS], vw[_E],
                             vw[_COL], dr, dv)
        if not ok:
            broke = True
            break
        # full step first; halve it while the error does not decrease
        t = 1.0
        for k in range(d):
            r_try[k] = r[k] + dr[k]
            v_try[k] = v[k] + dv[k]
        e_try = _newton_error_ws(W, b, r_try, v_try, rho, mu, law, vw)
        halvings = 0
        while e_try >= err and halvings < MAX_HALVINGS:
            t *= 0.5
            halvings += 1
            for k in range(d):
                r_try[k] = r[k] + t * dr[k]
                v_try[k] = v[k] + t * dv[k]
            e_try = _newton_error_ws(W, b, r_try, v_try, rho, mu, law, vw)
        if e_try >= err:
            # no decrease anywhere along the direction: keep the full step
            for k in range(d):
                r_try[k] = r[k] + dr[k]
                v_try[k] = v[k] + dv[k]
            e_try = _newton_error_ws(W, b, r_try, v_try, rho, mu, law, vw)
        for k in range(d):
            r[k] = r_try[k]
            v[k] = v_try[k]
        it += 1
        err = e_try
        if err <= eps_newt:
            converged = True
            break
        if err >= best:
            stall += 1
            if stall >= STALL_LIMIT:
                broke = True
                break
        else:
            best = err
            stall = 0

    if broke:
        _uzawa_into(r0, v0, rho, mu, law, vw[_TAU], r)
        matvec_into(W, r, v)
        for k in range(d):
            v[k] += b[k]
        return it, False, True
    return it, converged, False


@njit(cache=True, error_model="numpy")
def _newton_solve(W, b, r0, v0, rho, mu, law, eps_newt, max_iter):
    """Returns ``(r, v, iterations, converged, broke_down)``."""
    d = r0.shape[0]
    r = r0.copy()
    v = v0.copy()
    vw = np.empty((N_VEC_WORK, d))
    mw = np.empty((N_MAT_WORK, d, d))
    piv = np.empty(d, np.int64)
    it, conv, broke = _newton_core(W, b, r, v, rho, mu, law, eps_newt, max_iter, vw, mw, piv)
    return r, v, it, conv, broke


def newton_solve_contact(method, W_cc, b_loc, chi0: LocalContactState, rho, mu,
                         eps_newt=1e-5, max_iter=100):
    """Semi-smooth Newton solve of one contact with the others frozen.

    The contact obeys ``u_tilde = b_loc + W_cc r`` together with
    ``r = proj(tau)``.  ``method`` is ``"EBP"`` (cone law) or ``"EAL"``
    (cylinder law).  Each iteration tries the full Newton step and halves
    it while the error does not drop.  At least one step is taken unless
    ``chi0`` is already a root to rounding precision.  On a singular tangent
    or a stalled error, the initial state receives one Uzawa step of the
    same family and the result is reported as unconverged.

    Returns
    -------
    chi : LocalContactState
    iterations : int
    converged : bool
    """
    law = CONE if str(method).upper() == "EBP" else CYLINDER
    W = np.ascontiguousarray(W_cc, dtype=np.float64)
    b = np.ascontiguousarray(b_loc, dtype=np.float64)
    r, v, it, conv, _ = _newton_solve(W, b, chi0.r, chi0.u_tilde, float(rho), float(mu),
                                      law, float(eps_newt), int(max_iter))
    return LocalContactState(r, v), int(it), bool(conv)
