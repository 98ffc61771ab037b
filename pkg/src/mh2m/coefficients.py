"""Permeability fields A(x) and scalar source terms."""
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

KINDS = ("constant", "piecewise-constant-on-grid", "smooth-oscillatory")


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Isotropic or constant-tensor permeability.

    ``constant``: ``value`` is a scalar or a symmetric 2x2 tensor.
    ``piecewise-constant-on-grid``: scalar ``values`` on an ``nx`` by ``ny``
    grid of the box ``bounds = (x0, x1, y0, y1)``, row-major in y.
    ``smooth-oscillatory``: a(x) = 1 / (2 + 1.8 sin(2 pi x / epsilon)) I.
    """

    kind: str = "constant"
    value: object = 1.0
    values: tuple = ()
    grid: tuple = (1, 1)
    bounds: tuple = (0.0, 1.0, 0.0, 1.0)
    epsilon: float = 0.125
    amplitude: float = 1.8
    scale: float = 1.0
    _tensor: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown coefficient kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "constant":
            v = np.asarray(self.value, dtype=float)
            T = v * np.eye(2) if v.ndim == 0 else v.reshape(2, 2)
            if np.max(np.abs(T - T.T)) > 1e-14 * np.max(np.abs(T)) or np.linalg.eigvalsh(T)[0] <= 0:
                raise ConfigError("constant coefficient must be symmetric positive definite")
            object.__setattr__(self, "_tensor", T)
        elif self.kind == "piecewise-constant-on-grid":
            nx, ny = map(int, self.grid)
            vals = np.asarray(self.values, dtype=float)
            if vals.size != nx * ny or np.any(vals <= 0):
                raise ConfigError(f"piecewise coefficient needs {nx * ny} positive values")
        else:
            if not (self.epsilon > 0 and 0 <= self.amplitude < 2):
                raise ConfigError("oscillatory coefficient needs epsilon > 0 and 0 <= amplitude < 2")
        if not self.scale > 0:
            raise ConfigError("coefficient scale must be positive")

    @property
    def is_piecewise(self):
        return self.kind == "piecewise-constant-on-grid"

    def scalar(self, x, y):
        """Scalar multiple of the identity (for isotropic kinds)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "constant":
            return np.full(np.broadcast(x, y).shape, self.scale * self._tensor[0, 0])
        if self.kind == "smooth-oscillatory":
            a = 1.0 / (2.0 + self.amplitude * np.sin(2 * np.pi * x / self.epsilon)) + 0.0 * y
            return self.scale * a
        nx, ny = map(int, self.grid)
        x0, x1, y0, y1 = self.bounds
        i = np.clip(np.floor((x - x0) / (x1 - x0) * nx).astype(int), 0, nx - 1)
        j = np.clip(np.floor((y - y0) / (y1 - y0) * ny).astype(int), 0, ny - 1)
        return self.scale * np.asarray(self.values, dtype=float)[j * nx + i]

    def __call__(self, x, y):
        """Tensor values of shape (*x.shape, 2, 2)."""
        if self.kind == "constant":
            shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
            return np.broadcast_to(self.scale * self._tensor, shape + (2, 2)).copy()
        a = self.scalar(x, y)
        return a[..., None, None] * np.eye(2)

    def scaled(self, c):
        return replace(self, scale=self.scale * float(c))

    def bounds_sampled(self, points):
        """(a_min, a_max): extreme eigenvalues of A over the given points."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ev = np.linalg.eigvalsh(self(pts[:, 0], pts[:, 1]))
        return float(ev.min()), float(ev.max())


def coefficient_from_spec(spec):
    """Build a field from a config dict such as ``{"kind": "constant", "value": 1}``."""
    if isinstance(spec, CoefficientField):
        return spec
    spec = dict(spec or {"kind": "constant", "value": 1.0})
    kind = spec.pop("kind", "constant")
    allowed = {"value", "values", "grid", "bounds", "epsilon", "amplitude"}
    extra = set(spec) - allowed
    if extra:
        raise ConfigError(f"unknown coefficient keys {sorted(extra)}")
    for key in ("values", "grid", "bounds"):
        if key in spec:
            spec[key] = tuple(spec[key])
    return CoefficientField(kind, **spec)


def source_from_spec(spec):
    """Scalar source f(x, y) from a config dict (``zero``, ``constant``)."""
    spec = dict(spec or {"kind": "constant", "value": 1.0})
    kind = spec.pop("kind", "constant")
    if kind == "zero" and not spec:
        return lambda x, y: np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
    if kind == "constant" and set(spec) <= {"value"}:
        c = float(spec.get("value", 1.0))
        return lambda x, y: np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, c)
    raise ConfigError(f"unsupported source spec {kind!r} {spec}")
