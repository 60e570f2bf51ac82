"""Problem description: materials, bodies, walls and the scene file format.

Scene files are line oriented, ``#`` starts a comment::

    scene v1
    dim 3
    dt 1e-4
    theta 0.5
    gravity 0 0 -9.81
    material glass mu 0.7 en 0 et 0 density 2500
    sphere glass r 5e-3 pos 0 0 5e-3 vel 1.5 0 0
    plane glass n 0 0 1 offset 0

In two dimensions ``sphere`` declares a disk (``disk`` is accepted as an
alias) and every vector has two components.  Disk masses are per unit depth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SceneError(ValueError):
    """Invalid scene text; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Material:
    name: str
    mu: float
    e_n: float = 0.0
    e_t: float = 0.0
    density: float = 2500.0

    def __post_init__(self):
        if not self.mu >= 0.0:
            raise SceneError(f"material {self.name!r}: mu must be >= 0")
        if not 0.0 <= self.e_n <= 1.0 or not 0.0 <= self.e_t <= 1.0:
            raise SceneError(f"material {self.name!r}: restitution must lie in [0, 1]")
        if not self.density > 0.0:
            raise SceneError(f"material {self.name!r}: density must be > 0")


@dataclass(frozen=True)
class Body:
    """A sphere (3D) or disk (2D) with its initial position and velocity."""

    material: Material
    radius: float
    position: tuple
    velocity: tuple
    dimension: int = 3

    def __post_init__(self):
        if not self.radius > 0.0:
            raise SceneError("radius must be > 0")
        if len(self.position) != self.dimension or len(self.velocity) != self.dimension:
            raise SceneError(f"expected {self.dimension} components for position and velocity")

    @property
    def mass(self) -> float:
        if self.dimension == 3:
            return self.material.density * 4.0 / 3.0 * math.pi * self.radius ** 3
        return self.material.density * math.pi * self.radius ** 2

    @property
    def inertia(self) -> float:
        if self.dimension == 3:
            return 0.4 * self.mass * self.radius ** 2
        return 0.5 * self.mass * self.radius ** 2


@dataclass(frozen=True)
class Wall:
    """Half-space boundary ``{x : normal . x >= offset}``."""

    material: Material
    normal: tuple
    offset: float

    def __post_init__(self):
        if abs(math.sqrt(sum(c * c for c in self.normal)) - 1.0) > 1e-12:
            raise SceneError("wall normal must be a unit vector")

    def signed_distance(self, points):
        return np.asarray(points) @ np.asarray(self.normal) - self.offset


@dataclass(frozen=True)
class Scene:
    dimension: int
    bodies: tuple
    walls: tuple
    gravity: tuple
    dt: float
    theta: float = 0.5
    materials: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise SceneError("dimension must be 2 or 3")
        if not self.dt > 0.0:
            raise SceneError("dt must be > 0")
        if not 0.5 <= self.theta <= 1.0:
            raise SceneError("theta must lie in [1/2, 1]")
        if len(self.gravity) != self.dimension:
            raise SceneError("gravity has the wrong number of components")
        for b in self.bodies:
            if b.dimension != self.dimension:
                raise SceneError("body dimension does not match the scene")
        for w in self.walls:
            if len(w.normal) != self.dimension:
                raise SceneError("wall normal dimension does not match the scene")

    @property
    def n_bodies(self) -> int:
        return len(self.bodies)

    @property
    def dofs(self) -> int:
        """Generalized coordinates per body (translations + rotations)."""
        return 6 if self.dimension == 3 else 3

    def masses(self) -> np.ndarray:
        return np.array([b.mass for b in self.bodies])

    def inverse_mass(self) -> np.ndarray:
        """Diagonal of the inverse generalized mass matrix, shape (n_bodies, dofs)."""
        d = self.dimension
        out = np.empty((self.n_bodies, self.dofs))
        for i, b in enumerate(self.bodies):
            out[i, :d] = 1.0 / b.mass
            out[i, d:] = 1.0 / b.inertia
        return out

    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.bodies])


def pair_material(a: Material, b: Material):
    """Friction and restitution used by a contact between two materials."""
    return min(a.mu, b.mu), min(a.e_n, b.e_n), min(a.e_t, b.e_t)


def rho_bar(contact, dt):
    """Reference descent parameter ``m_a m_b / (m_a + m_b) / dt``.

    Walls have infinite mass, so a body-wall contact gives ``m_a / dt``.
    """
    return 1.0 / ((1.0 / contact.mass_a + 1.0 / contact.mass_b) * dt)


# ---------------------------------------------------------------------------
# parsing


def _floats(tokens, count, lineno, what):
    if len(tokens) < count:
        raise SceneError(f"{what}: expected {count} numbers", lineno)
    try:
        return tuple(float(t) for t in tokens[:count])
    except ValueError as exc:
        raise SceneError(f"{what}: {exc}", lineno) from None


def _keyword(tokens, i, name, lineno):
    if i >= len(tokens) or tokens[i] != name:
        got = tokens[i] if i < len(tokens) else "end of line"
        raise SceneError(f"expected '{name}', got '{got}'", lineno)


def parse_scene(text: str) -> Scene:
    """Parse scene file contents into a validated :class:`Scene`.

    Body order in the file is preserved; it fixes the Gauss-Seidel contact
    ordering.
    """
    dim = None
    dt = None
    theta = 0.5
    gravity = None
    materials = {}
    bodies = []
    walls = []
    seen_header = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key, args = tok[0], tok[1:]

        if not seen_header:
            if key != "scene" or args != ["v1"]:
                raise SceneError("file must start with 'scene v1'", lineno)
            seen_header = True
            continue

        if key == "dim":
            if len(args) != 1 or args[0] not in ("2", "3"):
                raise SceneError("dim must be 2 or 3", lineno)
            if bodies or walls or gravity is not None:
                raise SceneError("dim must precede gravity, bodies and walls", lineno)
            dim = int(args[0])
        elif key == "dt":
            (dt,) = _floats(args, 1, lineno, "dt")
            if not dt > 0:
                raise SceneError("dt must be > 0", lineno)
        elif key == "theta":
            (theta,) = _floats(args, 1, lineno, "theta")
            if not 0.5 <= theta <= 1.0:
                raise SceneError("theta must lie in [1/2, 1]", lineno)
        elif key == "gravity":
            _need_dim(dim, lineno)
            if len(args) != dim:
                raise SceneError(f"gravity needs {dim} components", lineno)
            gravity = _floats(args, dim, lineno, "gravity")
        elif key == "material":
            materials_entry = _parse_material(args, lineno)
            if materials_entry.name in materials:
                raise SceneError(f"material {materials_entry.name!r} defined twice", lineno)
            materials[materials_entry.name] = materials_entry
        elif key in ("sphere", "disk"):
            _need_dim(dim, lineno)
            bodies.append(_parse_body(args, dim, materials, lineno))
        elif key == "plane":
            _need_dim(dim, lineno)
            walls.append(_parse_plane(args, dim, materials, lineno))
        else:
            raise SceneError(f"unknown directive '{key}'", lineno)

    if not seen_header:
        raise SceneError("empty scene file")
    if dim is None:
        raise SceneError("missing 'dim'")
    if dt is None:
        raise SceneError("missing 'dt'")
    if gravity is None:
        gravity = (0.0,) * dim
    return Scene(dimension=dim, bodies=tuple(bodies), walls=tuple(walls),
                 gravity=gravity, dt=dt, theta=theta,
                 materials=tuple(materials.values()))


def _need_dim(dim, lineno):
    if dim is None:
        raise SceneError("'dim' must be declared first", lineno)


def _parse_material(args, lineno):
    if not args:
        raise SceneError("material needs a name", lineno)
    name = args[0]
    values = {}
    rest = args[1:]
    if len(rest) % 2:
        raise SceneError("material expects key/value pairs", lineno)
    for k, v in zip(rest[::2], rest[1::2]):
        if k not in ("mu", "en", "et", "density"):
            raise SceneError(f"unknown material key '{k}'", lineno)
        (values[k],) = _floats([v], 1, lineno, k)
    missing = {"mu", "en", "et", "density"} - values.keys()
    if missing:
        raise SceneError(f"material {name!r} missing {sorted(missing)}", lineno)
    try:
        return Material(name, values["mu"], values["en"], values["et"], values["density"])
    except SceneError as exc:
        raise SceneError(str(exc), lineno) from None


def _lookup(materials, name, lineno):
    try:
        return materials[name]
    except KeyError:
        raise SceneError(f"unknown material '{name}'", lineno) from None


def _parse_body(args, dim, materials, lineno):
    if not args:
        raise SceneError("sphere needs a material", lineno)
    mat = _lookup(materials, args[0], lineno)
    _keyword(args, 1, "r", lineno)
    (radius,) = _floats(args[2:], 1, lineno, "r")
    _keyword(args, 3, "pos", lineno)
    pos = _floats(args[4:], dim, lineno, "pos")
    i = 4 + dim
    vel = (0.0,) * dim
    if i < len(args):
        _keyword(args, i, "vel", lineno)
        vel = _floats(args[i + 1:], dim, lineno, "vel")
        i += 1 + dim
    if i != len(args):
        raise SceneError(f"unexpected trailing tokens {args[i:]}", lineno)
    if not radius > 0:
        raise SceneError("radius must be > 0", lineno)
    return Body(mat, radius, pos, vel, dim)


def _parse_plane(args, dim, materials, lineno):
    if not args:
        raise SceneError("plane needs a material", lineno)
    mat = _lookup(materials, args[0], lineno)
    _keyword(args, 1, "n", lineno)
    normal = _floats(args[2:], dim, lineno, "n")
    i = 2 + dim
    _keyword(args, i, "offset", lineno)
    (offset,) = _floats(args[i + 1:], 1, lineno, "offset")
    if i + 2 != len(args):
        raise SceneError(f"unexpected trailing tokens {args[i + 2:]}", lineno)
    try:
        return Wall(mat, normal, offset)
    except SceneError as exc:
        raise SceneError(str(exc), lineno) from None


def load_scene(path) -> Scene:
    return parse_scene(Path(path).read_text(encoding="utf-8"))


def emit_scene(scene: Scene) -> str:
    """Serialize a scene; ``parse_scene(emit_scene(s)) == s``."""
    def nums(values):
        return " ".join(repr(float(v)) for v in values)

    lines = ["scene v1", f"dim {scene.dimension}", f"dt {scene.dt!r}",
             f"theta {scene.theta!r}", f"gravity {nums(scene.gravity)}"]
    mats = {m.name: m for m in scene.materials}
    for obj in (*scene.bodies, *scene.walls):
        mats.setdefault(obj.material.name, obj.material)
    for m in mats.values():
        lines.append(f"material {m.name} mu {m.mu!r} en {m.e_n!r} et {m.e_t!r} density {m.density!r}")
    for b in scene.bodies:
        lines.append(f"sphere {b.material.name} r {b.radius!r} pos {nums(b.position)} vel {nums(b.velocity)}")
    for w in scene.walls:
        lines.append(f"plane {w.material.name} n {nums(w.normal)} offset {w.offset!r}")
    return "\n".join(lines) + "\n"
