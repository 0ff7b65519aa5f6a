"""Closed-form multi-transmitter propagation field.

Each transmitter contributes a log-distance path-loss term in dB; the
aggregate received power sums the contributions in linear scale and
converts back to dB. The module provides the aggregate field, the
fractional per-transmitter weights, analytic spatial gradients, and the
exact right-hand side that the Laplacian of the aggregate dB field must
satisfy in the shadow-free case. These closed forms serve both as the
synthetic ground truth generator and as the physics kernel of the trainer.

All operations are pure functions of immutable inputs and are vectorized:
a "point" argument accepts a single (x, y) pair or an (n, 2) array.
"""

from __future__ import annotations

import configparser
import functools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .seeding import derive_seed

LN10 = float(np.log(10.0))


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Transmitter:
    """One radio source: planar position and dB power at the reference distance."""

    position: Point
    power_db: float
    trainable: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.position[0]) and np.isfinite(self.position[1])):
            raise ValueError("transmitter position must be finite")
        if not np.isfinite(self.power_db):
            raise ValueError("transmitter power must be finite")


@dataclass(frozen=True)
class PropagationParams:
    """Log-distance model constants shared by all transmitters in a scene."""

    eta: float = 2.7
    d0: float = 1.0
    r_min: float | None = None  # singularity clamp, defaults to d0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("path-loss exponent must be positive")
        if self.d0 <= 0:
            raise ValueError("reference distance must be positive")
        if self.r_min is None:
            object.__setattr__(self, "r_min", self.d0)
        if self.r_min <= 0 or self.r_min < self.d0 / 100.0:
            raise ValueError("r_min must be positive and at least d0/100")


@dataclass(frozen=True)
class ShadowFieldSpec:
    """Spatially correlated log-normal shadowing: dB std, e-folding length, seed."""

    sigma_db: float = 0.0
    corr_length: float = 500.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_db < 0:
            raise ValueError("shadowing std must be nonnegative")
        if self.corr_length <= 0:
            raise ValueError("correlation length must be positive")


@dataclass(frozen=True)
class FieldScene:
    """A set of transmitters over shared propagation constants.

    ``shadow`` holds one spec per transmitter (independent realizations) or
    None for a shadow-free scene.
    """

    transmitters: tuple[Transmitter, ...]
    params: PropagationParams = field(default_factory=PropagationParams)
    shadow: tuple[ShadowFieldSpec, ...] | None = None

    def __post_init__(self):
        if len(self.transmitters) < 1:
            raise ValueError("scene needs at least one transmitter")
        object.__setattr__(self, "transmitters", tuple(self.transmitters))
        if self.shadow is not None:
            if len(self.shadow) != len(self.transmitters):
                raise ValueError("need one shadow spec per transmitter")
            object.__setattr__(self, "shadow", tuple(self.shadow))

    @property
    def m(self) -> int:
        return len(self.transmitters)

    @property
    def tx_positions(self) -> np.ndarray:
        return np.array([[t.position[0], t.position[1]] for t in self.transmitters])

    @property
    def tx_powers(self) -> np.ndarray:
        return np.array([t.power_db for t in self.transmitters])


def _as_points(p) -> tuple[np.ndarray, bool]:
    """Coerce a point-like argument to an (n, 2) array; flag single points."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (2,):
            raise ValueError("a point is a pair (x, y)")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    return arr, False


def db_to_linear(p):
    """Convert dB power to linear scale: 10^(p/10)."""
    return 10.0 ** (np.asarray(p, dtype=float) / 10.0)


def linear_to_db(s):
    """Convert linear power to dB; strictly positive input required."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("linear power must be positive to convert to dB")
    return 10.0 * np.log10(s)


def _clamped_dist(scene: FieldScene, pts: np.ndarray) -> np.ndarray:
    """Distances from each point to each transmitter, clamped to r_min. (n, M)."""
    diff = pts[:, None, :] - scene.tx_positions[None, :, :]
    r = np.sqrt((diff**2).sum(axis=2))
    return np.maximum(r, scene.params.r_min)


def _exponents(scene: FieldScene, pts: np.ndarray, shadow_db=None) -> np.ndarray:
    """Base-10 exponents of the per-transmitter linear powers. (n, M)."""
    r = _clamped_dist(scene, pts)
    a = (
        scene.tx_powers[None, :]
        - 10.0 * scene.params.eta * np.log10(r / scene.params.d0)
    ) / 10.0
    if shadow_db is not None:
        a = a + np.asarray(shadow_db, dtype=float) / 10.0
    return a


def exponent_term(scene: FieldScene, i: int, p, shadow_db=0.0):
    """Exponent of transmitter i's linear power at p, with distance clamped to r_min."""
    pts, single = _as_points(p)
    a = _exponents(scene, pts)[:, i] + np.asarray(shadow_db, dtype=float) / 10.0
    return float(a[0]) if single else a


def power_weights(scene: FieldScene, p, shadow_db=None):
    """Fractional contribution of each transmitter to the aggregate linear power.

    Computed with a subtract-max shift so that large exponents cannot
    overflow. Each weight lies in (0, 1] and the weights sum to one.
    """
    pts, single = _as_points(p)
    a = _exponents(scene, pts, shadow_db)
    a_shift = a - a.max(axis=1, keepdims=True)
    w = 10.0**a_shift
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if single else w


def total_power_db(scene: FieldScene, p, shadow_db=None):
    """Aggregate received power in dB at p (log-sum of linear contributions).

    ``shadow_db`` optionally supplies per-transmitter shadowing values of
    shape (n, M); omitted means the shadow-free mean field.
    """
    pts, single = _as_points(p)
    a = _exponents(scene, pts, shadow_db)
    a_max = a.max(axis=1)
    s = (10.0 ** (a - a_max[:, None])).sum(axis=1)
    total = 10.0 * (a_max + np.log10(s))
    return float(total[0]) if single else total


def exponent_grad(scene: FieldScene, i: int, p):
    """Spatial gradient of the shadow-free exponent term of transmitter i.

    Equals -(eta/ln 10) (p - p_i) / r_i^2 outside the clamp disc and zero
    inside it (the clamped term is constant there).
    """
    pts, single = _as_points(p)
    diff = pts - scene.tx_positions[i][None, :]
    r2 = (diff**2).sum(axis=1)
    inside = r2 < scene.params.r_min**2
    with np.errstate(divide="ignore", invalid="ignore"):
        g = -(scene.params.eta / LN10) * diff / r2[:, None]
    g[inside] = 0.0
    return g[0] if single else g


def exponent_laplacian(scene: FieldScene, i: int, p):
    """Laplacian of the shadow-free exponent term: zero (log distance is harmonic)."""
    pts, single = _as_points(p)
    lap = np.zeros(len(pts))
    return float(lap[0]) if single else lap


def pde_rhs(scene: FieldScene, p):
    """Exact Laplacian of the shadow-free aggregate dB field.

    With harmonic per-transmitter exponent terms the curvature of the
    aggregate comes entirely from the weight mixing:

        10 ln10 * (sum_i w_i |g_i|^2 - |sum_i w_i g_i|^2)

    where g_i is the exponent gradient. Vanishes identically for a single
    transmitter and wherever one transmitter dominates; its sign varies in
    transition zones.
    """
    pts, single = _as_points(p)
    w = power_weights(scene, pts)
    diff = pts[:, None, :] - scene.tx_positions[None, :, :]
    r2 = (diff**2).sum(axis=2)
    inside = r2 < scene.params.r_min**2
    with np.errstate(divide="ignore", invalid="ignore"):
        g = -(scene.params.eta / LN10) * diff / r2[:, :, None]
    g[inside] = 0.0
    g_sq = (g**2).sum(axis=2)
    wg = (w[:, :, None] * g).sum(axis=1)
    rhs = 10.0 * LN10 * ((w * g_sq).sum(axis=1) - (wg**2).sum(axis=1))
    return float(rhs[0]) if single else rhs


class ShadowField:
    """One realization of a correlated shadowing surface over a rectangle.

    Node values on a regular lattice are drawn once at construction with a
    circulant-embedding FFT sampler, giving (up to embedding truncation)
    zero-mean Gaussian values with covariance sigma^2 exp(-d / corr_length).
    Queries bilinearly interpolate the lattice, so the node statistics are
    exact and intermediate points are slightly smoothed. Immutable after
    construction; safe for concurrent sampling.
    """

    def __init__(self, spec: ShadowFieldSpec, bounds, lattice_step: float | None = None):
        self.spec = spec
        self.bounds = tuple(float(b) for b in bounds)
        x_min, x_max, y_min, y_max = self.bounds
        if not (x_max > x_min and y_max > y_min):
            raise ValueError("degenerate shadow field bounds")
        step = lattice_step if lattice_step is not None else spec.corr_length / 3.0
        self.step = float(step)
        # one-node margin so boundary queries interpolate instead of clamping
        self.x0 = x_min - step
        self.y0 = y_min - step
        self.nx = int(np.ceil((x_max - self.x0) / step)) + 2
        self.ny = int(np.ceil((y_max - self.y0) / step)) + 2
        self.values = self._draw_lattice()

    def _draw_lattice(self) -> np.ndarray:
        if self.spec.sigma_db == 0.0:
            return np.zeros((self.ny, self.nx))
        # pad the torus so wrap-around distances exceed several e-foldings
        pad = int(np.ceil(6.0 * self.spec.corr_length / self.step))
        nbig_x = self.nx + pad
        nbig_y = self.ny + pad
        kx = np.minimum(np.arange(nbig_x), nbig_x - np.arange(nbig_x)) * self.step
        ky = np.minimum(np.arange(nbig_y), nbig_y - np.arange(nbig_y)) * self.step
        d = np.sqrt(kx[None, :] ** 2 + ky[:, None] ** 2)
        cov = self.spec.sigma_db**2 * np.exp(-d / self.spec.corr_length)
        lam = np.fft.fft2(cov).real
        lam = np.maximum(lam, 0.0)
        rng = np.random.default_rng(self.spec.seed)
        xi = rng.standard_normal((nbig_y, nbig_x)) + 1j * rng.standard_normal(
            (nbig_y, nbig_x)
        )
        f = np.fft.fft2(xi * np.sqrt(lam / (nbig_x * nbig_y)))
        return f.real[: self.ny, : self.nx]

    def sample(self, p):
        """Shadowing value(s) in dB at the query point(s)."""
        pts, single = _as_points(p)
        fx = np.clip((pts[:, 0] - self.x0) / self.step, 0.0, self.nx - 1 - 1e-9)
        fy = np.clip((pts[:, 1] - self.y0) / self.step, 0.0, self.ny - 1 - 1e-9)
        ix = fx.astype(int)
        iy = fy.astype(int)
        tx = fx - ix
        ty = fy - iy
        v = (
            self.values[iy, ix] * (1 - tx) * (1 - ty)
            + self.values[iy, ix + 1] * tx * (1 - ty)
            + self.values[iy + 1, ix] * (1 - tx) * ty
            + self.values[iy + 1, ix + 1] * tx * ty
        )
        return float(v[0]) if single else v


@functools.lru_cache(maxsize=16)
def _cached_field(spec: ShadowFieldSpec, bounds: tuple) -> ShadowField:
    return ShadowField(spec, bounds)


def shadow_field_sample(spec: ShadowFieldSpec, p, bounds):
    """Sample the shadow realization for ``spec`` over ``bounds`` at p.

    The lattice for a given (spec, bounds) pair is drawn once and cached,
    so repeated calls see the same realization.
    """
    return _cached_field(spec, tuple(float(b) for b in bounds)).sample(p)


def scene_shadow_fields(scene: FieldScene, bounds) -> list[ShadowField] | None:
    """Instantiate the per-transmitter shadow realizations of a scene."""
    if scene.shadow is None:
        return None
    return [ShadowField(spec, bounds) for spec in scene.shadow]


def observed_power_db(scene: FieldScene, p, fields=None):
    """Aggregate power including shadowing, i.e. what a sensor would record."""
    pts, single = _as_points(p)
    shadow = None
    if fields:
        shadow = np.column_stack([f.sample(pts) for f in fields])
    out = total_power_db(scene, pts, shadow_db=shadow)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class SceneFile:
    """Parsed scene description: the scene, its domain bounds, channel label."""

    scene: FieldScene
    bounds: tuple[float, float, float, float]
    channel: str = "C0"


def load_scene(path) -> SceneFile:
    """Read a scene description file (INI: [domain], [propagation], [shadow],
    and one [transmitter.N] section per source)."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(f"scene file not found: {path}")
    if "domain" not in cp:
        raise ValueError(f"scene file {path} lacks a [domain] section")
    dom = cp["domain"]
    bounds = (
        dom.getfloat("x_min"),
        dom.getfloat("x_max"),
        dom.getfloat("y_min"),
        dom.getfloat("y_max"),
    )
    channel = dom.get("channel", "C0")
    prop = cp["propagation"] if "propagation" in cp else {}
    params = PropagationParams(
        eta=float(prop.get("eta", 2.7)),
        d0=float(prop.get("d0", 1.0)),
        r_min=float(prop["r_min"]) if "r_min" in prop else None,
    )
    txs = []
    for name in sorted(s for s in cp.sections() if s.startswith("transmitter")):
        sec = cp[name]
        txs.append(
            Transmitter(
                position=Point(sec.getfloat("x"), sec.getfloat("y")),
                power_db=sec.getfloat("power_db"),
                trainable=sec.getboolean("trainable", fallback=True),
            )
        )
    if not txs:
        raise ValueError(f"scene file {path} defines no transmitters")
    shadow = None
    if "shadow" in cp and cp["shadow"].getfloat("sigma_db", 0.0) > 0:
        sh = cp["shadow"]
        base_seed = sh.getint("seed", 0)
        shadow = tuple(
            ShadowFieldSpec(
                sigma_db=sh.getfloat("sigma_db"),
                corr_length=sh.getfloat("corr_length", 500.0),
                seed=derive_seed(base_seed, f"shadow-tx{i}"),
            )
            for i in range(len(txs))
        )
    scene = FieldScene(transmitters=tuple(txs), params=params, shadow=shadow)
    return SceneFile(scene=scene, bounds=bounds, channel=channel)
