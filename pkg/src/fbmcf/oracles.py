"""Closed-form reference solutions and the named experiment setups."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .barrier import BarrierSurface
from .errors import InvalidParams, PastSingularTime
from .flow import FlowConfig
from .mesh import make_cap


@dataclass(frozen=True)
class HemisphereSolution:
    """Hemisphere of initial radius ``r0`` shrinking on a plane.

    With ``H = 2/r`` the flow reduces to ``dr/dt = -2/r``, so
    ``r(t)^2 = r0^2 - 4t`` and the singular time is ``r0^2 / 4``.
    """

    r0: float = 1.0

    def __post_init__(self):
        if not self.r0 > 0:
            raise InvalidParams("r0 must be positive")

    @property
    def T(self):
        return self.r0 ** 2 / 4.0

    def _check(self, t):
        if t < 0 or t >= self.T:
            raise PastSingularTime(f"t = {t!r} outside [0, {self.T!r})")

    def r(self, t):
        self._check(t)
        return math.sqrt(self.r0 ** 2 - 4.0 * t)

    def H(self, t):
        return 2.0 / self.r(t)

    def area(self, t):
        return 2.0 * math.pi * self.r(t) ** 2


def hemisphere_exact(r0, t):
    """``(r, H, area, remaining_time)`` of the shrinking hemisphere at time ``t``.

    Raises
    ------
    PastSingularTime
        Unless ``0 <= t < r0^2 / 4``.
    """
    sol = HemisphereSolution(float(r0))
    r = sol.r(t)
    return r, 2.0 / r, 2.0 * math.pi * r * r, sol.T - t


@dataclass
class CanonicalCase:
    name: str
    barrier: BarrierSurface
    mesh: object
    config: FlowConfig
    description: str = ""
    params: dict = field(default_factory=dict)


# default resolution (polar rings) per case
DEFAULT_RINGS = {
    "HEMI_PLANE": 32,
    "HEMI_PLANE_PERTURBED": 24,
    "CAP_SPHERE": 16,
    "CAP_CYLINDER": 16,
}

CASE_NAMES = tuple(DEFAULT_RINGS)

SPHERE_CAP_RADIUS = 0.5
CYLINDER_CAP_RADIUS = 0.2
CYLINDER_RADIUS = 2.0
PERTURBATION_AMPLITUDE = 0.05


def make_case(name, n_rings=None, amplitude=None, config=None):
    """Build one named case.

    ``HEMI_PLANE``
        unit hemisphere on the plane ``z = 0`` (barrier normal ``-e_z``).
    ``HEMI_PLANE_PERTURBED``
        the same, radially perturbed with amplitude 0.05 by default.
    ``CAP_SPHERE``
        spherical cap of radius 0.5 meeting the unit sphere orthogonally
        from inside; not umbilic for any positive time.
    ``CAP_CYLINDER``
        cap of geodesic radius 0.2 on the cylinder of radius 2, bulging
        toward the axis.
    """
    key = name.upper()
    if key not in DEFAULT_RINGS:
        raise InvalidParams(f"unknown case {name!r}; expected one of {', '.join(CASE_NAMES)}")
    n = DEFAULT_RINGS[key] if n_rings is None else int(n_rings)
    cfg = FlowConfig() if config is None else config
    if key in ("HEMI_PLANE", "HEMI_PLANE_PERTURBED"):
        amp = 0.0 if key == "HEMI_PLANE" else PERTURBATION_AMPLITUDE
        if amplitude is not None:
            amp = float(amplitude)
        barrier = BarrierSurface.plane(normal=(0.0, 0.0, -1.0))
        mesh = make_cap("hemisphere", n_rings=n, radius=1.0, amplitude=amp)
        return CanonicalCase(key, barrier, mesh, cfg, "hemisphere of radius 1 on a plane",
                             dict(n_rings=n, amplitude=amp, r0=1.0))
    if key == "CAP_SPHERE":
        barrier = BarrierSurface.sphere(radius=1.0)
        mesh = make_cap("sphere_cap", n_rings=n, radius=SPHERE_CAP_RADIUS, barrier_radius=1.0)
        return CanonicalCase(key, barrier, mesh, cfg, "orthogonal spherical cap inside the unit sphere",
                             dict(n_rings=n, cap_radius=SPHERE_CAP_RADIUS))
    barrier = BarrierSurface.cylinder(radius=CYLINDER_RADIUS)
    mesh = make_cap("cylinder_cap", n_rings=n, radius=CYLINDER_CAP_RADIUS, barrier_radius=CYLINDER_RADIUS)
    return CanonicalCase(key, barrier, mesh, cfg, "geodesic cap inside a cylinder",
                         dict(n_rings=n, cap_radius=CYLINDER_CAP_RADIUS, cylinder_radius=CYLINDER_RADIUS))


def canonical_cases(n_rings=None):
    """All named cases, in a fixed order."""
    return [make_case(name, n_rings) for name in CASE_NAMES]
