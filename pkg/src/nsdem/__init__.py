"""Rigid-body granular dynamics with impulse-based frictional contact.

Four local contact solvers are available inside a nonlinear Gauss-Seidel
time stepper: ``SBP`` and ``SAL`` (one Uzawa step per contact visit on the
Coulomb cone and on the normal-dependent cylinder) and their semi-smooth
Newton counterparts ``EBP`` and ``EAL``.
"""
from .scene import Body, Material, Scene, SceneError, Wall, emit_scene, load_scene, parse_scene
from .kinematics import BodyState, detect_contacts, initial_state
from .nlgs import METHODS, SolverConfig, StepReport, run, step

__all__ = [
    "Body", "BodyState", "Material", "METHODS", "Scene", "SceneError", "SolverConfig",
    "StepReport", "Wall", "detect_contacts", "emit_scene", "initial_state", "load_scene",
    "parse_scene", "run", "step",
]
__version__ = "0.1.0"
