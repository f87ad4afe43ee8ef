"""Two-color drain urn: exact state machine, predictors, and path events.

The chain holds ``x`` blue and ``y`` red balls.  One step draws a ball
uniformly; a blue draw removes ``b`` blues and adds ``b - a`` reds, a red
draw removes ``a`` reds, so every step removes exactly ``a`` balls in total.
The run freezes at the first step where a count goes negative or the total
``m - a*n`` reaches zero.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .rng import RawStream


def _is_integral(v) -> bool:
    return isinstance(v, int) or (isinstance(v, float) and v.is_integer())


class Draw(enum.Enum):
    BLUE = "B"
    RED = "R"


@dataclass(frozen=True)
class UrnParams:
    """Replacement-rule parameters and initial counts.

    ``a`` balls leave the urn per step; a blue draw swaps ``b`` blues for
    ``b - a`` reds.  Requires ``0 < a < b``.  When every input is an integer
    the whole chain runs in exact integer arithmetic.

    ``x0`` should normally be a multiple of ``b`` (then the blue count can
    never go negative); ``multiple_warning`` flags a violation, and
    ``strict=True`` upgrades it to an error.
    """

    a: float
    b: float
    x0: float
    y0: float
    strict: bool = False

    def __post_init__(self):
        if not (self.a > 0 and self.b > self.a):
            raise ValueError(f"need 0 < a < b, got a={self.a}, b={self.b}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError("initial counts must be nonnegative")
        if self.x0 + self.y0 <= 0:
            raise ValueError("need x0 + y0 > 0")
        if self.strict and self.multiple_warning:
            raise ValueError(f"x0={self.x0} is not a multiple of b={self.b}")

    @property
    def m(self) -> float:
        return self.x0 + self.y0

    @property
    def integral(self) -> bool:
        return all(_is_integral(v) for v in (self.a, self.b, self.x0, self.y0))

    @property
    def multiple_warning(self) -> bool:
        """True when x0 is not an integer multiple of b."""
        if self.x0 == 0:
            return False
        q = self.x0 / self.b
        return abs(q - round(q)) > 1e-9

    def exhaustion_count(self) -> Optional[int]:
        """Number of blue draws that empties the blues exactly, if any."""
        if self.multiple_warning:
            return None
        return round(self.x0 / self.b) if self.x0 > 0 else 0

    def max_steps(self) -> int:
        """Hard upper bound on the freeze step: ceil(m / a)."""
        if self.integral:
            m, a = int(self.x0) + int(self.y0), int(self.a)
            return -((-m) // a)
        return math.ceil(self.m / self.a - 1e-12)


@dataclass
class UrnState:
    """Chain state after ``n`` steps; ``rho`` is set once the run froze."""

    n: int
    x: float
    y: float
    rho: Optional[int] = None

    @property
    def stopped(self) -> bool:
        return self.rho is not None


def _freeze_triggered(x, y, total) -> bool:
    # Order fixed for determinism: y first, then total, then x.
    return y < 0 or total <= 0 or x < 0


def step(state: UrnState, params: UrnParams, raws: RawStream) -> tuple[UrnState, Draw]:
    """Advance one draw; raises on a frozen or invalid state."""
    if state.stopped:
        raise ValueError("cannot step a frozen state")
    if state.x < 0 or state.y < 0:
        raise ValueError("cannot step a state with a negative count")
    total = state.x + state.y
    if total <= 0:
        raise ValueError("cannot step an empty urn")
    if params.integral:
        blue = raws.uniform_below(int(total)) < state.x
    else:
        blue = raws.unit() < state.x / total
    if blue:
        nx, ny, draw = state.x - params.b, state.y + (params.b - params.a), Draw.BLUE
    else:
        nx, ny, draw = state.x, state.y - params.a, Draw.RED
    n1 = state.n + 1
    rho = n1 if _freeze_triggered(nx, ny, nx + ny) else None
    return UrnState(n=n1, x=nx, y=ny, rho=rho), draw


@dataclass
class DerivedStatistics:
    """Per-step tracking ratios and hitting times of one trajectory."""

    k_n: list
    l_n: list
    tau: Optional[int]
    sigma_m: Optional[int] = None


@dataclass
class UrnTrajectory:
    """Full path of one run: states 0..rho plus the draws between them."""

    params: UrnParams
    states: list[UrnState]
    draws: list[Draw]
    seed: int

    @property
    def rho(self) -> int:
        return self.states[-1].rho

    def state_at(self, n: int) -> UrnState:
        """State after n steps; frozen runs extend by their last state."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        if n < len(self.states):
            return self.states[n]
        return self.states[-1]

    def tau(self) -> Optional[int]:
        """First step with the blue count exactly zero, if it happens."""
        for s in self.states:
            if s.x == 0:
                return s.n
        return None

    def sigma(self, m: float) -> Optional[int]:
        """First step with the blue count at or below m, if it happens."""
        for s in self.states:
            if s.x <= m:
                return s.n
        return None

    def derived(self, m: Optional[float] = None) -> DerivedStatistics:
        ks, ls = [], []
        for s in self.states:
            px = predicted_x(self.params, s.n) if s.n <= self.params.m / self.params.a else 0.0
            ks.append(s.x / px if px > 0 else None)
            py = predicted_y(self.params, s.n) if s.n <= self.params.m / self.params.a else 0.0
            ls.append(s.y / py if py > 0 else None)
        return DerivedStatistics(
            k_n=ks, l_n=ls, tau=self.tau(),
            sigma_m=self.sigma(m) if m is not None else None,
        )

    def write_csv(self, path, config_comment: Optional[str] = None) -> None:
        """Rows ``n,x,y,draw,k,l,x_pred,y_pred``; draw is the one that
        produced the row's state ('-' for n=0); undefined ratios are empty;
        reals carry 17 significant digits."""
        with open(path, "w", newline="") as fh:
            if config_comment:
                fh.write(f"# {config_comment}\n")
            w = csv.writer(fh)
            w.writerow(["n", "x", "y", "draw", "k", "l", "x_pred", "y_pred"])
            limit = self.params.m / self.params.a
            for s in self.states:
                draw = self.draws[s.n - 1].value if s.n >= 1 else "-"
                in_dom = s.n <= limit
                px = predicted_x(self.params, s.n) if in_dom else 0.0
                py = predicted_y(self.params, s.n) if in_dom else 0.0
                k = _g17(s.x / px) if px > 0 else ""
                l = _g17(s.y / py) if py > 0 else ""
                w.writerow([s.n, _g17(s.x), _g17(s.y), draw, k, l, _g17(px), _g17(py)])


def _g17(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class TrajectoryStats:
    """Streaming-mode result: hitting times and extremes, no path storage."""

    params: UrnParams
    seed: int
    rho: int
    final_x: float
    final_y: float
    tau: Optional[int]
    max_k_dev: float
    max_l_dev: float


def run(params: UrnParams, seed: int, stats_only: bool = False):
    """Run one trajectory to its freeze step.

    Deterministic in (params, seed).  Returns an UrnTrajectory, or a
    TrajectoryStats carrying only reductions when ``stats_only`` is set
    (intended for totals above ~1e7 where the path would not fit memory).
    """
    raws = RawStream(seed)
    state = UrnState(n=0, x=params.x0, y=params.y0,
                     rho=0 if _freeze_triggered(params.x0, params.y0, params.m) else None)
    if not stats_only:
        states = [state]
        draws: list[Draw] = []
        while not state.stopped:
            state, d = step(state, params, raws)
            states.append(state)
            draws.append(d)
        return UrnTrajectory(params=params, states=states, draws=draws, seed=seed)

    limit = params.m / params.a
    tau = 0 if params.x0 == 0 else None
    max_k = 0.0
    max_l = abs(params.y0 / predicted_y(params, 0) - 1.0) if params.y0 > 0 else 0.0
    while not state.stopped:
        state, _ = step(state, params, raws)
        if tau is None and state.x == 0:
            tau = state.n
        if state.n <= limit:
            px = predicted_x(params, state.n)
            if px > 0:
                max_k = max(max_k, abs(state.x / px - 1.0))
            py = predicted_y(params, state.n)
            if py > 0:
                max_l = max(max_l, abs(state.y / py - 1.0))
    return TrajectoryStats(params=params, seed=seed, rho=state.rho,
                           final_x=state.x, final_y=state.y, tau=tau,
                           max_k_dev=max_k, max_l_dev=max_l)


def predicted_x(params: UrnParams, n: float) -> float:
    """Deterministic blue-count prediction x0 * (1 - a*n/m)**(b/a).

    Evaluated as ``exp((b/a) * log1p(-a*n/m))`` so the base can be ~1e-9
    without catastrophic cancellation.  ``n`` must lie in [0, m/a].
    """
    m = params.m
    frac = params.a * n / m
    if n < 0 or frac > 1 + 1e-12:
        raise ValueError(f"n={n} outside [0, m/a={m / params.a}]")
    if n == 0:
        return float(params.x0)
    if frac >= 1.0:
        return 0.0
    return params.x0 * math.exp((params.b / params.a) * math.log1p(-frac))


def predicted_y(params: UrnParams, n: float) -> float:
    """Deterministic red-count prediction (m - a*n) - predicted_x(n)."""
    return (params.m - params.a * n) - predicted_x(params, n)


def k_ratio(trajectory: UrnTrajectory, n: int) -> float:
    """Blue count over its prediction; denominator must be positive."""
    px = predicted_x(trajectory.params, n)
    if px <= 0:
        raise ZeroDivisionError(f"prediction vanishes at n={n}")
    return trajectory.state_at(n).x / px


def l_ratio(trajectory: UrnTrajectory, n: int) -> Optional[float]:
    """Red count over its prediction; None where the prediction is zero."""
    py = predicted_y(trajectory.params, n)
    if py <= 0:
        return None
    return trajectory.state_at(n).y / py


def threshold_step(params: UrnParams, t: float) -> int:
    """floor(m * (1 - t * x0**(-a/b)) / a); may be negative for large t."""
    if t <= 0:
        raise ValueError("t must be positive")
    if params.x0 <= 0:
        raise ValueError("threshold_step needs x0 > 0")
    return math.floor(params.m * (1.0 - t * params.x0 ** (-params.a / params.b)) / params.a)


def last_predicted_step(params: UrnParams) -> int:
    """Largest integer n with n < m/a, the last step the predictions cover."""
    return params.max_steps() - 1


def event_k_tracking(trajectory: UrnTrajectory, t: float, eps: float) -> bool:
    """True iff the run stays live past threshold_step(t) with the blue
    count within eps of its prediction the whole way (vacuous if the
    threshold step is negative)."""
    if not (0 < eps < 0.5):
        raise ValueError("eps must lie in (0, 1/2)")
    nt = threshold_step(trajectory.params, t)
    if nt < 0:
        return True
    if trajectory.rho <= nt:
        return False
    nt = min(nt, last_predicted_step(trajectory.params))
    for n in range(nt + 1):
        if abs(k_ratio(trajectory, n) - 1.0) > eps:
            return False
    return True


def event_l_tracking(trajectory: UrnTrajectory, eps: float) -> bool:
    """True iff every defined red-count ratio with n < m/a stays within eps
    of one; frozen runs keep their last counts through the horizon."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = trajectory.params
    n_max = last_predicted_step(params)
    for n in range(n_max + 1):
        r = l_ratio(trajectory, n)
        if r is not None and abs(r - 1.0) > eps:
            return False
    return True


def event_drained(trajectory: UrnTrajectory) -> bool:
    """True iff the run ended by total depletion: m - a*rho <= 0."""
    return trajectory.params.m - trajectory.params.a * trajectory.rho <= 0


def event_sigma_tracking(trajectory: UrnTrajectory, m: float, eps: float) -> bool:
    """True iff the blue count reaches m while live and tracks its
    prediction within eps up to that first-passage step."""
    if m <= 0:
        raise ValueError("m must be positive")
    if not (0 < eps < 0.5):
        raise ValueError("eps must lie in (0, 1/2)")
    sig = trajectory.sigma(m)
    if sig is None or trajectory.rho <= sig:
        return False
    for n in range(sig + 1):
        if abs(k_ratio(trajectory, n) - 1.0) > eps:
            return False
    return True
