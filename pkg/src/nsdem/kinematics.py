"""Contact detection, local frames and the local-global mapping.

For a contact between body ``a`` and body ``b`` (or wall ``b``), the normal
``n`` points from ``b`` toward ``a`` and the local relative velocity is
``u = J_a qdot_a + J_b qdot_b`` where each ``J`` is the ``d x dofs`` block
of the transposed mapping.  Rows of ``J`` follow the frame ``(n, t1[, t2])``
so ``u_n > 0`` means the bodies separate.  A wall has no degrees of freedom;
its block is zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .scene import Scene, pair_material

WALL = -1


@dataclass
class BodyState:
    """Generalized coordinates and velocities, each of shape (n_bodies, dofs).

    Columns are translations followed by rotations (a rotation vector in 3D,
    an angle in 2D).
    """

    q: np.ndarray
    qdot: np.ndarray

    def copy(self):
        return BodyState(self.q.copy(), self.qdot.copy())

    def positions(self, dimension):
        return self.q[:, :dimension]


def initial_state(scene: Scene) -> BodyState:
    n, d = scene.n_bodies, scene.dimension
    q = np.zeros((n, scene.dofs))
    qdot = np.zeros((n, scene.dofs))
    for i, b in enumerate(scene.bodies):
        q[i, :d] = b.position
        qdot[i, :d] = b.velocity
    return BodyState(q, qdot)


def predict_positions(state: BodyState, dt) -> np.ndarray:
    """Mid-step prediction ``q + dt/2 qdot`` used to build the mapping."""
    return state.q + 0.5 * dt * state.qdot


def tangent_frame(n):
    """Orthonormal frame with rows ``(n, t1[, t2])``.

    3D: ``t1`` is the normalized projection of the x axis onto the plane
    orthogonal to ``n`` (the y axis when that projection is shorter than
    1e-8) and ``t2 = n x t1``.  2D: ``t = (n_y, -n_x)``.
    """
    n = np.asarray(n, dtype=np.float64)
    if n.shape[0] == 2:
        return np.array([n, [n[1], -n[0]]])
    t1 = np.array([1.0, 0.0, 0.0]) - n[0] * n
    nrm = np.linalg.norm(t1)
    if nrm < 1e-8:
        t1 = np.array([0.0, 1.0, 0.0]) - n[1] * n
        nrm = np.linalg.norm(t1)
    t1 /= nrm
    t2 = np.cross(n, t1)
    return np.array([n, t1, t2])


def mapping_block(frame, lever, sign=1.0):
    """Rows ``[e_k, lever x e_k]`` of the transposed mapping for one body.

    ``lever`` is the contact point relative to the body center.
    """
    d = frame.shape[0]
    if d == 3:
        J = np.empty((3, 6))
        J[:, :3] = frame
        J[:, 3:] = np.cross(lever, frame)
    else:
        J = np.empty((2, 3))
        J[:, :2] = frame
        J[:, 2] = lever[0] * frame[:, 1] - lever[1] * frame[:, 0]
    return sign * J


@dataclass
class Contact:
    """One detected contact at the predicted configuration.

    ``body_b`` is :data:`WALL` for body-wall contacts, in which case
    ``wall`` holds the wall index.  ``frame`` has rows ``(n, t1[, t2])``.
    """

    id: int
    body_a: int
    body_b: int
    wall: int
    frame: np.ndarray
    gap: float
    contact_point: np.ndarray
    mu: float
    e_n: float
    e_t: float
    P_a: np.ndarray
    P_b: np.ndarray
    mass_a: float
    mass_b: float

    @property
    def n(self):
        return self.frame[0]

    @property
    def t_basis(self):
        return tuple(self.frame[1:])

    @property
    def is_wall(self):
        return self.body_b == WALL

    @property
    def key(self):
        """Identity of the interacting pair, stable across time steps."""
        return (self.body_a, self.body_b, self.wall)


def detect_contacts(scene: Scene, q_pred) -> list:
    """All sphere-sphere and sphere-wall contacts with ``gap <= 0``.

    Contacts are ordered by body ``a`` first, then by partner, with other
    bodies before walls; ``a`` is the lower body index of a pair.
    """
    d = scene.dimension
    x = np.asarray(q_pred)[:, :d]
    radii = scene.radii()
    nb = scene.n_bodies
    found = []

    if nb > 1:
        tree = cKDTree(x)
        pairs = tree.query_pairs(2.0 * float(radii.max()), output_type="ndarray")
        if len(pairs):
            pairs = np.sort(pairs, axis=1)
            delta = x[pairs[:, 0]] - x[pairs[:, 1]]
            dist = np.linalg.norm(delta, axis=1)
            gap = dist - radii[pairs[:, 0]] - radii[pairs[:, 1]]
            for (i, j), g, dv, dd in zip(pairs, gap, delta, dist):
                if g <= 0.0:
                    found.append((int(i), int(j), WALL, g, dv / dd))
    for w, wall in enumerate(scene.walls):
        normal = np.asarray(wall.normal, dtype=np.float64)
        gap = x @ normal - wall.offset - radii
        for i in np.nonzero(gap <= 0.0)[0]:
            found.append((int(i), WALL, w, gap[i], normal))

    found.sort(key=lambda c: (c[0], c[1] if c[1] != WALL else nb + c[2]))

    contacts = []
    for cid, (a, b, w, g, n) in enumerate(found):
        frame = tangent_frame(n)
        ba = scene.bodies[a]
        point_a = x[a] - ba.radius * n
        J_a = mapping_block(frame, point_a - x[a])
        if b == WALL:
            other = scene.walls[w].material
            J_b = np.zeros_like(J_a)
            mass_b = math.inf
            point = point_a
        else:
            bb = scene.bodies[b]
            other = bb.material
            point_b = x[b] + bb.radius * n
            J_b = mapping_block(frame, point_b - x[b], sign=-1.0)
            mass_b = bb.mass
            point = 0.5 * (point_a + point_b)
        mu, e_n, e_t = pair_material(ba.material, other)
        contacts.append(Contact(cid, a, b, w, frame, float(g), point, mu, e_n, e_t,
                                J_a, J_b, ba.mass, mass_b))
    return contacts


def relative_velocity(contact: Contact, qdot) -> np.ndarray:
    """Local relative velocity of the contact points, in the contact frame."""
    u = contact.P_a @ qdot[contact.body_a]
    if not contact.is_wall:
        u = u + contact.P_b @ qdot[contact.body_b]
    return u


def delassus_block(contact: Contact, scene: Scene) -> np.ndarray:
    """Self block ``W_cc = P* M^-1 P`` of the Delassus operator."""
    minv = scene.inverse_mass()
    W = (contact.P_a * minv[contact.body_a]) @ contact.P_a.T
    if not contact.is_wall:
        W = W + (contact.P_b * minv[contact.body_b]) @ contact.P_b.T
    return W


def gaps(scene: Scene, contacts, q) -> np.ndarray:
    """Signed surface distance of each contact pair at configuration ``q``."""
    d = scene.dimension
    x = np.asarray(q)[:, :d]
    out = np.empty(len(contacts))
    for k, c in enumerate(contacts):
        ra = scene.bodies[c.body_a].radius
        if c.is_wall:
            wall = scene.walls[c.wall]
            out[k] = x[c.body_a] @ np.asarray(wall.normal) - wall.offset - ra
        else:
            rb = scene.bodies[c.body_b].radius
            out[k] = np.linalg.norm(x[c.body_a] - x[c.body_b]) - ra - rb
    return out
