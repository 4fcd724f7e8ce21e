"""Privacy accounting for the subsampled Gaussian mechanism.

The privacy loss distribution (PLD) of one noisy step is discretised on a
uniform grid of loss values, composed over ``T`` steps with an FFT, and
converted to ``epsilon`` for a target ``delta``.  Sensitivity is normalised to
1 (the clipping bound only scales the noise), so a step is described by the
noise multiplier ``sigma`` and the sampling ratio ``q``.

The neighbouring pair is ``mu = N(0, sigma^2)`` and
``mu' = (1 - q) N(0, sigma^2) + q N(1, sigma^2)``.  Both orderings of the pair
are accounted and the larger ``epsilon`` is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

__all__ = [
    "GridError",
    "Pld",
    "EpsilonResult",
    "DEFAULT_L",
    "DEFAULT_POINTS",
    "DIRECTIONS",
    "pld_subsampled_gaussian",
    "compose",
    "get_epsilon",
    "delta_for_epsilon",
    "epsilon",
    "epsilon_details",
    "approximate_sigma",
]

DEFAULT_L = 30.0
DEFAULT_POINTS = 2**17
MAX_POINTS = 2**22
REFINE_TOL = 1e-3
DIRECTIONS = ("add", "remove")
SIGMA_BRACKET = (0.3, 100.0)


class GridError(ValueError):
    """The loss grid cannot represent the distribution to the needed accuracy."""


@dataclass(frozen=True)
class Pld:
    """Discrete privacy loss distribution.

    ``mass[i]`` sits at loss ``grid_origin + i * grid_step``; ``inf_mass`` is
    the probability of an unbounded (or off-grid, upper tail) loss.
    """

    grid_origin: float
    grid_step: float
    mass: np.ndarray
    inf_mass: float = 0.0
    tail_mass: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.grid_step <= 0:
            raise ValueError("grid step must be positive")
        m = np.asarray(self.mass, dtype=np.float64)
        if m.ndim != 1 or m.size < 1:
            raise ValueError("mass must be a non-empty vector")
        if np.any(m < 0):
            raise ValueError("mass must be nonnegative")
        total = float(m.sum()) + self.inf_mass
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"total mass {total!r} differs from 1")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @property
    def losses(self) -> np.ndarray:
        return self.grid_origin + self.grid_step * np.arange(self.mass.size)

    @property
    def size(self) -> int:
        return self.mass.size

    @classmethod
    def point_mass(cls, loss: float = 0.0, L: float = DEFAULT_L, points: int = DEFAULT_POINTS) -> "Pld":
        origin, step = _grid(L, points)
        i = int(round((loss - origin) / step))
        if not 0 <= i < points:
            raise GridError("point mass outside the grid")
        m = np.zeros(points)
        m[i] = 1.0
        return cls(origin, step, m)


def _grid(L: float, points: int):
    if points < 2 or points % 2:
        raise ValueError("grid needs an even number of points")
    if L <= 0:
        raise ValueError("grid half-width must be positive")
    step = 2.0 * L / points
    return -L, step


def _log_ratio_inverse(loss, q: float):
    """``u`` with ``log(1 - q + q e^u) = loss``; ``-inf`` below the range."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.expm1(loss) / q
        u = np.where(t > -1.0, np.log1p(np.maximum(t, -1.0)), -np.inf)
    return u


def _normal_between(lo, hi, centre: float, sigma: float):
    """``P(lo < X <= hi)`` for ``X ~ N(centre, sigma^2)``, tail-accurate."""
    a = (lo - centre) / sigma
    b = (hi - centre) / sigma
    # differences of upper-tail probabilities keep precision for large a
    upper = ndtr(-a) - ndtr(-b)
    lower = ndtr(b) - ndtr(a)
    return np.maximum(np.where(a > 0, upper, lower), 0.0)


def pld_subsampled_gaussian(
    sigma: float,
    q: float,
    direction: str = "add",
    L: float = DEFAULT_L,
    points: int = DEFAULT_POINTS,
) -> Pld:
    """One-step PLD with each loss rounded to the nearest grid cell.

    ``direction="add"`` draws from the mixture ``mu'`` (loss increasing in x);
    ``"remove"`` draws from ``mu`` with the reciprocal ratio.  Mass below the
    grid joins the lowest cell; mass above it becomes ``inf_mass``, which is
    also stored as ``tail_mass``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    origin, step = _grid(L, points)
    if q == 0.0:
        return Pld.point_mass(0.0, L, points)

    edges = origin + step * (np.arange(points + 1) - 0.5)
    s2 = sigma * sigma
    if direction == "add":
        # loss(x) = log(1 - q + q exp((2x - 1) / (2 sigma^2))), x ~ mu'
        x = s2 * _log_ratio_inverse(edges, q) + 0.5
        lo, hi = x[:-1], x[1:]
        mass = (1.0 - q) * _normal_between(lo, hi, 0.0, sigma) + q * _normal_between(lo, hi, 1.0, sigma)
        below = (1.0 - q) * ndtr(x[0] / sigma) + q * ndtr((x[0] - 1.0) / sigma)
        above = (1.0 - q) * ndtr(-x[-1] / sigma) + q * ndtr((1.0 - x[-1]) / sigma)
    else:
        # loss(x) = -log(1 - q + q exp((2x - 1) / (2 sigma^2))), x ~ mu
        x = s2 * _log_ratio_inverse(-edges, q) + 0.5
        lo, hi = x[1:], x[:-1]
        mass = _normal_between(lo, hi, 0.0, sigma)
        below = ndtr(-x[0] / sigma)
        above = ndtr(x[-1] / sigma)
    mass = np.asarray(mass, dtype=np.float64).copy()
    mass[0] += float(below)
    above = float(above)
    # absorb rounding so the masses sum to one exactly
    mass *= (1.0 - above) / mass.sum()
    return Pld(origin, step, mass, above, tail_mass=above)


def compose(pld: Pld, T: int) -> Pld:
    """``T``-fold self-convolution by FFT on the circular grid centred at 0."""
    T = int(T)
    if T < 1:
        raise ValueError("T must be at least 1")
    if T == 1:
        return pld
    n = pld.size
    zero = -pld.grid_origin / pld.grid_step
    if abs(zero - round(zero)) > 1e-9:
        raise GridError("loss 0 must lie on the grid")
    zero = int(round(zero))
    finite = 1.0 - pld.inf_mass
    # roll loss 0 to index 0 so circular convolution keeps the origin fixed
    centred = np.roll(pld.mass, -zero)
    spec = np.fft.rfft(centred)
    out = np.fft.irfft(spec**T, n=n)
    if out.min() < -1e-12:
        # FFT noise is far smaller; larger negatives mean a broken input
        raise FloatingPointError(f"composition produced mass {out.min():.3g}")
    out = np.maximum(out, 0.0)
    expected = finite**T
    drift = abs(out.sum() - expected)
    if drift > 1e-6:
        raise FloatingPointError(f"composed mass drifted by {drift:.3g}")
    if out.sum() > 0:
        out *= expected / out.sum()
    out = np.roll(out, zero)
    return Pld(pld.grid_origin, pld.grid_step, out, 1.0 - expected, tail_mass=1.0 - (1.0 - pld.tail_mass) ** T)


def _suffix(pld: Pld):
    losses = pld.losses
    m = pld.mass
    # A_j = sum_{i > j} m_i,  B_j = sum_{i > j} m_i exp(-l_i)
    a = np.concatenate([np.cumsum(m[::-1])[::-1][1:], [0.0]])
    b = np.concatenate([np.cumsum((m * np.exp(-losses))[::-1])[::-1][1:], [0.0]])
    return losses, a, b


def delta_for_epsilon(pld: Pld, eps) -> np.ndarray:
    """``delta(eps) = inf_mass + sum_{l_i > eps} (1 - e^(eps - l_i)) m_i``."""
    eps = np.asarray(eps, dtype=np.float64)
    losses = pld.losses
    m = pld.mass
    flat = eps.ravel()
    out = np.empty(flat.shape)
    for k, e in enumerate(flat):
        sel = losses > e
        out[k] = pld.inf_mass + float(np.sum(-np.expm1(e - losses[sel]) * m[sel]))
    return out.reshape(eps.shape)


def get_epsilon(pld: Pld, delta: float) -> float:
    """Smallest ``eps >= 0`` with ``delta(eps) <= delta``.

    ``delta(eps)`` is continuous and decreasing; between neighbouring grid
    losses it equals ``inf + A - e^eps B`` and is solved in closed form there.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if pld.inf_mass > delta:
        raise GridError(f"delta={delta:.3g} below the unbounded-loss mass {pld.inf_mass:.3g}")
    losses, a, b = _suffix(pld)
    d_grid = pld.inf_mass + a - np.exp(losses) * b
    ok = np.nonzero(d_grid <= delta)[0]
    if ok.size == 0:
        raise GridError("delta not reached on the grid")
    k = int(ok[0])
    if k == 0:
        return 0.0
    j = k - 1
    num = pld.inf_mass + a[j] - delta
    if b[j] <= 0 or num <= 0:
        eps = losses[k]
    else:
        eps = math.log(num / b[j])
        eps = min(max(eps, losses[j]), losses[k])
    return max(float(eps), 0.0)


@dataclass(frozen=True)
class EpsilonResult:
    epsilon: float
    grid_points: int
    L: float
    directions: dict

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "grid_points": self.grid_points, "L": self.L,
                "directions": dict(self.directions)}


def _epsilon_on_grid(sigma, q, T, delta, L, points):
    per_dir = {}
    for direction in DIRECTIONS:
        pld = pld_subsampled_gaussian(sigma, q, direction, L, points)
        if pld.tail_mass > delta / 10:
            raise GridError(f"mass {pld.tail_mass:.3g} beyond the grid ({direction}); enlarge L")
        per_dir[direction] = get_epsilon(compose(pld, T), delta)
    return max(per_dir.values()), per_dir


def epsilon_details(
    sigma: float,
    q: float,
    T: int,
    delta: float,
    L: float = DEFAULT_L,
    points: int = DEFAULT_POINTS,
    refine: bool = True,
) -> EpsilonResult:
    """Epsilon over both neighbouring orders, with grid refinement.

    With ``refine`` the number of grid points is doubled until epsilon moves
    by less than ``1e-3`` (up to ``2^22`` points).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    eps, per_dir = _epsilon_on_grid(sigma, q, T, delta, L, points)
    while refine and points < MAX_POINTS:
        finer = points * 2
        eps2, per_dir2 = _epsilon_on_grid(sigma, q, T, delta, L, finer)
        moved = abs(eps2 - eps)
        eps, per_dir, points = eps2, per_dir2, finer
        if moved < REFINE_TOL:
            break
    return EpsilonResult(float(eps), int(points), float(L), per_dir)


def epsilon(sigma: float, q: float, T: int, delta: float, **grid) -> float:
    """Privacy accounting function: epsilon after ``T`` steps at ``delta``."""
    return epsilon_details(sigma, q, T, delta, **grid).epsilon


def approximate_sigma(
    eps: float,
    delta: float,
    q: float,
    T: int,
    bracket: tuple = SIGMA_BRACKET,
    rel_tol: float = 5e-3,
    **grid,
) -> float:
    """Smallest noise multiplier (to ``rel_tol``) whose epsilon meets ``eps``.

    Bisection on ``log sigma``; epsilon decreases with sigma.  Sigmas for which
    the grid cannot hold the loss distribution count as infinitely private
    loss (epsilon = inf).
    """
    if not eps > 0:
        raise ValueError("target epsilon must be positive")

    def f(s):
        try:
            return epsilon(s, q, T, delta, **grid)
        except GridError:
            return math.inf

    lo, hi = map(float, bracket)
    if f(hi) > eps:
        raise ValueError(f"epsilon={eps} unreachable with sigma <= {hi}")
    if f(lo) <= eps:
        return lo
    while hi / lo > 1.0 + rel_tol:
        mid = math.sqrt(lo * hi)
        if f(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return hi
