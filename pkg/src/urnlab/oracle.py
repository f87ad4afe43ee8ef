"""Exact law of the drain urn for small totals, by dynamic programming.

After ``n`` steps with ``j`` blue draws the counts are pinned to
``x = x0 - j*b`` and ``y = y0 + j*b - n*a``, so the full law lives on the
(n, j) grid.  With integer parameters the masses are exact fractions;
beyond the exact-mode horizon the same sweep runs in floats.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .urn import UrnParams, last_predicted_step, predicted_x, predicted_y, threshold_step

DEFAULT_HORIZON_CAP = 10_000
EXACT_HORIZON_LIMIT = 1_000


class HorizonCapError(RuntimeError):
    """Raised when the requested chain is longer than the configured cap."""


@dataclass(frozen=True)
class EventKTracking:
    """Live past the threshold step with blue/prediction within eps."""
    t: float
    eps: float


@dataclass(frozen=True)
class EventLTracking:
    """Red/prediction within eps at every defined step below m/a."""
    eps: float


@dataclass(frozen=True)
class EventDrained:
    """Run ends by total depletion: m - a*rho <= 0."""


@dataclass(frozen=True)
class EventSigmaTracking:
    """Blue count reaches m_small while live, tracking within eps so far."""
    m_small: float
    eps: float


@dataclass(frozen=True)
class EventExhaustionAfter:
    """Blue count stays nonzero strictly before step n0 (tau >= n0)."""
    n0: int


Event = object


class ExactDistribution:
    """Forward law of one parameter set on the (step, blue-draw-count) grid.

    ``live[n]`` maps j to the probability of being unfrozen at step n with
    j blue draws; ``absorbed`` maps (stop_step, j) to frozen mass.
    """

    def __init__(self, params: UrnParams, exact: bool):
        self.params = params
        self.exact = exact
        self.live: list[dict[int, object]] = []
        self.absorbed: dict[tuple[int, int], object] = {}
        self.horizon = 0

    def x_of(self, j: int):
        p = self.params
        return (int(p.x0) - j * int(p.b)) if self.exact else (p.x0 - j * p.b)

    def y_of(self, n: int, j: int):
        p = self.params
        if self.exact:
            return int(p.y0) + j * int(p.b) - n * int(p.a)
        return p.y0 + j * p.b - n * p.a

    def total_of(self, n: int):
        p = self.params
        if self.exact:
            return int(p.x0) + int(p.y0) - n * int(p.a)
        return p.m - n * p.a

    def live_mass(self, n: int):
        return sum(self.live[n].values()) if n < len(self.live) else 0

    def absorbed_mass_through(self, n: int):
        return sum(m for (s, _), m in self.absorbed.items() if s <= n)

    def marginal(self, n: int) -> dict[tuple, object]:
        """Law of (x, y) after n steps, frozen states included."""
        out: dict[tuple, object] = {}
        if n < len(self.live):
            for j, mass in self.live[n].items():
                key = (self.x_of(j), self.y_of(n, j))
                out[key] = out.get(key, 0) + mass
        for (s, j), mass in self.absorbed.items():
            if s <= n:
                key = (self.x_of(j), self.y_of(s, j))
                out[key] = out.get(key, 0) + mass
        return out

    def stop_law(self) -> dict[int, object]:
        """Law of the freeze step rho."""
        out: dict[int, object] = {}
        for (s, _), mass in self.absorbed.items():
            out[s] = out.get(s, 0) + mass
        return out

    def write_csv(self, path, config_comment: Optional[str] = None) -> None:
        """Dump rows ``n,j,x,y,prob,absorbed`` for every state with mass."""
        with open(path, "w", newline="") as fh:
            if config_comment:
                fh.write(f"# {config_comment}\n")
            w = csv.writer(fh)
            w.writerow(["n", "j", "x", "y", "prob", "absorbed"])
            for n, layer in enumerate(self.live):
                for j in sorted(layer):
                    w.writerow([n, j, self.x_of(j), self.y_of(n, j),
                                repr(float(layer[j])), 0])
            for (s, j) in sorted(self.absorbed):
                w.writerow([s, j, self.x_of(j), self.y_of(s, j),
                            repr(float(self.absorbed[(s, j)])), 1])


def _frozen(x, y, total) -> bool:
    return y < 0 or total <= 0 or x < 0


def build_distribution(params: UrnParams, horizon_cap: int = DEFAULT_HORIZON_CAP) -> ExactDistribution:
    """Run the forward sweep until all mass is frozen."""
    horizon = params.max_steps()
    if horizon > horizon_cap:
        raise HorizonCapError(f"needs {horizon} steps, cap is {horizon_cap}")
    exact = params.integral and horizon <= EXACT_HORIZON_LIMIT
    dist = ExactDistribution(params, exact)
    one = Fraction(1) if exact else 1.0
    dist.live = [{0: one}]
    if _frozen(dist.x_of(0), dist.y_of(0, 0), dist.total_of(0)):
        dist.absorbed[(0, 0)] = one
        dist.live = [{}]
        return dist
    n = 0
    while dist.live[n]:
        nxt: dict[int, object] = {}
        total = dist.total_of(n)
        for j, mass in dist.live[n].items():
            x = dist.x_of(j)
            y = dist.y_of(n, j)
            p_blue = Fraction(x, total) if exact else x / total
            for dj, p in ((1, p_blue), (0, one - p_blue)):
                if p == 0:
                    continue
                j2 = j + dj
                x2 = dist.x_of(j2)
                y2 = dist.y_of(n + 1, j2)
                m2 = mass * p
                if _frozen(x2, y2, dist.total_of(n + 1)):
                    key = (n + 1, j2)
                    dist.absorbed[key] = dist.absorbed.get(key, 0) + m2
                else:
                    nxt[j2] = nxt.get(j2, 0) + m2
        dist.live.append(nxt)
        n += 1
    dist.horizon = n
    return dist


def _k_dev_ok(x, px: float, eps: float) -> bool:
    return px > 0 and abs(float(x) / px - 1.0) <= eps


def _clean_sweep(params: UrnParams, exact: bool, n_stop: int, predicate,
                 on_frozen=None, collect=None):
    """Shared filtered forward sweep.

    Propagates only mass whose path has satisfied ``predicate(n, j)`` at
    every live step so far.  ``on_frozen(stop, j, mass)`` sees mass frozen
    at stop <= n_stop; ``collect(n, j, mass)`` may claim mass on arrival
    (return True to remove it from the flow).  Returns the clean live
    layer at ``n_stop``.
    """
    one = Fraction(1) if exact else 1.0

    def x_of(j):
        return (int(params.x0) - j * int(params.b)) if exact else params.x0 - j * params.b

    def y_of(n, j):
        if exact:
            return int(params.y0) + j * int(params.b) - n * int(params.a)
        return params.y0 + j * params.b - n * params.a

    def total_of(n):
        if exact:
            return int(params.x0) + int(params.y0) - n * int(params.a)
        return params.m - n * params.a

    layer: dict[int, object] = {}
    if _frozen(x_of(0), y_of(0, 0), total_of(0)):
        if on_frozen is not None:
            on_frozen(0, 0, one)
    elif collect is not None and collect(0, 0, one):
        pass
    elif predicate(0, 0):
        layer[0] = one
    for n in range(n_stop):
        if not layer:
            break
        nxt: dict[int, object] = {}
        total = total_of(n)
        for j, mass in layer.items():
            x = x_of(j)
            p_blue = Fraction(x, total) if exact else x / total
            for dj, p in ((1, p_blue), (0, one - p_blue)):
                if p == 0:
                    continue
                j2 = j + dj
                m2 = mass * p
                if _frozen(x_of(j2), y_of(n + 1, j2), total_of(n + 1)):
                    if on_frozen is not None:
                        on_frozen(n + 1, j2, m2)
                    continue
                if collect is not None and collect(n + 1, j2, m2):
                    continue
                if predicate(n + 1, j2):
                    nxt[j2] = nxt.get(j2, 0) + m2
        layer = nxt
    return layer


def event_probability(dist: ExactDistribution, event: Event):
    """Exact probability of a path event (fraction in exact mode)."""
    params = dist.params
    exact = dist.exact
    one = Fraction(1) if exact else 1.0

    if isinstance(event, EventDrained):
        total = 0
        for (s, _), mass in dist.absorbed.items():
            if params.m - params.a * s <= 0:
                total += mass
        return total

    if isinstance(event, EventExhaustionAfter):
        if event.n0 <= 0:
            return one
        j0 = params.exhaustion_count()
        if j0 is None:
            return one
        hit = []

        def collect(n, j, mass):
            if j == j0:
                if n <= event.n0 - 1:
                    hit.append(mass)
                return True
            return False

        def absorbed_hit(s, j, mass):
            # x frozen at x_of(j); zero only when j == j0
            collect(s, j, mass)

        _clean_sweep(params, exact, event.n0 - 1, lambda n, j: True,
                     on_frozen=absorbed_hit, collect=collect)
        return one - sum(hit, 0 if exact else 0.0)

    if isinstance(event, EventKTracking):
        if not (0 < event.eps < 0.5):
            raise ValueError("eps must lie in (0, 1/2)")
        nt = threshold_step(params, event.t)
        if nt < 0:
            return one
        nt = min(nt, last_predicted_step(params))
        preds = [predicted_x(params, n) for n in range(nt + 1)]

        def pred_ok(n, j):
            x = (int(params.x0) - j * int(params.b)) if exact else params.x0 - j * params.b
            return _k_dev_ok(x, preds[n], event.eps)

        layer = _clean_sweep(params, exact, nt, pred_ok)
        return sum(layer.values(), 0 if exact else 0.0)

    if isinstance(event, EventLTracking):
        if event.eps <= 0:
            raise ValueError("eps must be positive")
        n_max = last_predicted_step(params)
        preds = [predicted_y(params, n) for n in range(n_max + 1)]

        def l_ok_value(y, n):
            if preds[n] <= 0:
                return True  # undefined ratio skipped (only n=0 with y0=0)
            return abs(float(y) / preds[n] - 1.0) <= event.eps

        def pred_ok(n, j):
            y = (int(params.y0) + j * int(params.b) - n * int(params.a)) if exact \
                else params.y0 + j * params.b - n * params.a
            return l_ok_value(y, n)

        good_frozen = []

        def on_frozen(s, j, mass):
            y = (int(params.y0) + j * int(params.b) - s * int(params.a)) if exact \
                else params.y0 + j * params.b - s * params.a
            for k in range(s, n_max + 1):
                if not l_ok_value(y, k):
                    return
            good_frozen.append(mass)

        layer = _clean_sweep(params, exact, n_max, pred_ok, on_frozen=on_frozen)
        return sum(layer.values(), 0 if exact else 0.0) + sum(good_frozen, 0 if exact else 0.0)

    if isinstance(event, EventSigmaTracking):
        if event.m_small <= 0:
            raise ValueError("m_small must be positive")
        if not (0 < event.eps < 0.5):
            raise ValueError("eps must lie in (0, 1/2)")
        if params.x0 <= event.m_small:
            return one  # sigma = 0; rho > 0 and the step-0 ratio is 1
        b = int(params.b) if exact else params.b
        j_small = math.ceil((params.x0 - event.m_small) / b - 1e-12)
        horizon = params.max_steps()
        preds = [predicted_x(params, n) for n in range(last_predicted_step(params) + 1)]

        def pred_ok(n, j):
            if n >= len(preds):
                return False
            x = (int(params.x0) - j * int(params.b)) if exact else params.x0 - j * params.b
            return _k_dev_ok(x, preds[n], event.eps)

        claimed = []

        def collect(n, j, mass):
            if j >= j_small:
                if pred_ok(n, j):
                    claimed.append(mass)
                return True
            return False

        _clean_sweep(params, exact, horizon, pred_ok, collect=collect)
        return sum(claimed, 0 if exact else 0.0)

    raise TypeError(f"unknown event {event!r}")


@dataclass
class MartingaleReport:
    """Single-step conditional-expectation defects over every live state."""

    applicable: bool
    max_abs_defect: float
    max_positive_ratio_defect: float
    states_checked: int


def verify_martingale(dist: ExactDistribution) -> MartingaleReport:
    """Check the product-normalized blue count is drift-free and the
    blue/total ratio is non-increasing in conditional mean, state by state."""
    params = dist.params
    if params.x0 == 0:
        return MartingaleReport(False, 0.0, 0.0, 0)
    exact = dist.exact
    one = Fraction(1) if exact else 1.0
    a = int(params.a) if exact else params.a
    b = int(params.b) if exact else params.b
    x0 = int(params.x0) if exact else params.x0

    # prefix[n] = prod_{k<n} (1 - b/(m - a k)), exact in fraction mode
    prefix = [one]
    for k in range(dist.horizon):
        tot = dist.total_of(k)
        f = (one - Fraction(b, tot)) if exact else (1.0 - b / tot)
        prefix.append(prefix[-1] * f)

    max_abs = 0
    max_pos = 0
    checked = 0
    for n in range(dist.horizon):
        total = dist.total_of(n)
        total_next = dist.total_of(n + 1)
        for j in dist.live[n]:
            x = dist.x_of(j)
            p_blue = Fraction(x, total) if exact else x / total
            p_red = one - p_blue
            ex_next = p_blue * (x - b) + p_red * x
            checked += 1

            # E[X_{n+1}|state] - (1 - b/total) x, normalized where the
            # running product is nonzero (it vanishes when a total equals b)
            drift = ex_next - x * (one - (Fraction(b, total) if exact else b / total))
            if prefix[n + 1] != 0:
                d = drift / (x0 * prefix[n + 1])
            else:
                d = drift
            max_abs = max(max_abs, abs(d))

            if total_next > 0:
                s_now = Fraction(x, total) if exact else x / total
                s_next = (Fraction(ex_next, total_next) if exact else ex_next / total_next)
                max_pos = max(max_pos, s_next - s_now)
    return MartingaleReport(True, float(max_abs), float(max_pos), checked)
