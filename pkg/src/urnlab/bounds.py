"""Closed-form probability bounds and the drain-product sandwich.

Every bound takes a user-supplied constant ``c_const``; only existence of a
workable constant is guaranteed by theory, so the evaluators report the
formula value together with a validity-domain flag and never try to derive
the constant themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .urn import UrnParams


@dataclass(frozen=True)
class BoundInputs:
    """Parameters shared by the bound evaluators.

    ``c_const`` is the constant in front of each bound (default 1.0); ``t``
    the threshold scale, ``eps`` the tracking tolerance in (0, 1/2), ``m``
    the small-count level, ``n`` a step index.
    """

    params: UrnParams
    c_const: float = 1.0
    t: Optional[float] = None
    eps: Optional[float] = None
    m: Optional[float] = None
    n: Optional[int] = None

    def __post_init__(self):
        if self.c_const <= 0:
            raise ValueError("c_const must be positive")
        if self.eps is not None and not (0 < self.eps < 0.5):
            raise ValueError("eps must lie in (0, 1/2)")
        if self.m is not None and self.m <= 0:
            raise ValueError("m must be positive")


@dataclass
class BoundReport:
    """One evaluated bound: raw value, clamped value, and domain validity."""

    name: str
    value: float
    domain_ok: bool
    condition_text: str
    inputs: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def clamped_value(self) -> float:
        return min(1.0, max(0.0, self.value))

    @property
    def clamped(self) -> bool:
        return self.value != self.clamped_value

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "value": self.value,
            "clamped_value": self.clamped_value,
            "domain_ok": self.domain_ok,
            "inputs": self.inputs,
        }
        if self.extras:
            d["extras"] = self.extras
        return d


def drain_product(params: UrnParams, n: int) -> tuple[float, float, float]:
    """(product, lower, upper) for prod_{k<n} (1 - b/(m - a k)).

    Valid for n >= 1 with m - a*n >= 2*b; the product is computed by direct
    multiplication and is guaranteed to lie between
    ``exp(-b^2/(a (m-a n))) (1 - a n/m)^{b/a}`` and
    ``exp(b/(m-a n)) (1 - a n/m)^{b/a}``.
    """
    a, b, m = params.a, params.b, params.m
    if n < 1:
        raise ValueError("n must be at least 1")
    rem = m - a * n
    if rem < 2 * b:
        raise ValueError(f"domain violation: m - a n = {rem} < 2 b = {2 * b}")
    product = 1.0
    for k in range(n):
        product *= 1.0 - b / (m - a * k)
    power = math.exp((b / a) * math.log1p(-a * n / m))
    lower = math.exp(-b * b / (a * rem)) * power
    upper = math.exp(b / rem) * power
    return product, lower, upper


def _inputs_dict(inp: BoundInputs, *names: str) -> dict:
    p = inp.params
    d = {"a": p.a, "b": p.b, "x0": p.x0, "y0": p.y0, "c_const": inp.c_const}
    for nm in names:
        d[nm] = getattr(inp, nm)
    return d


def k_tracking_bound(inp: BoundInputs) -> BoundReport:
    """Lower bound 1 - C/(t^{b/a} eps^2) on the blue-tracking event,
    valid for t >= C x0^{a/b} / (m eps)."""
    p, t, eps, c = inp.params, inp.t, inp.eps, inp.c_const
    if t is None or eps is None:
        raise ValueError("needs t and eps")
    value = 1.0 - c / (t ** (p.b / p.a) * eps * eps)
    t_min = c * p.x0 ** (p.a / p.b) / (p.m * eps)
    return BoundReport(
        name="k_tracking",
        value=value,
        domain_ok=t >= t_min,
        condition_text=f"t >= c*x0^(a/b)/(m*eps) = {t_min:.6g}",
        inputs=_inputs_dict(inp, "t", "eps"),
    )


def k_tracking_bound_at_step(inp: BoundInputs) -> BoundReport:
    """Step-indexed form: 1 - C/(x0 (1 - a n/m)^{b/a} eps^2), valid while
    m - a*n >= C/eps."""
    p, n, eps, c = inp.params, inp.n, inp.eps, inp.c_const
    if n is None or eps is None:
        raise ValueError("needs n and eps")
    base = p.x0 * (1.0 - p.a * n / p.m) ** (p.b / p.a)
    value = 1.0 - c / (base * eps * eps) if base > 0 else -math.inf
    return BoundReport(
        name="k_tracking_at_step",
        value=value,
        domain_ok=p.m - p.a * n >= c / eps,
        condition_text=f"m - a*n >= c/eps = {c / eps:.6g}",
        inputs=_inputs_dict(inp, "n", "eps"),
    )


def exhaustion_tail_bound(inp: BoundInputs) -> BoundReport:
    """Upper bound C t^{b/(2b-a)} on P(blue count still positive at the
    threshold step), valid for t >= b x0^{a/b} / m."""
    p, t, c = inp.params, inp.t, inp.c_const
    if t is None:
        raise ValueError("needs t")
    expo = p.b / (2 * p.b - p.a)
    value = c * t ** expo
    t_min = p.b * p.x0 ** (p.a / p.b) / p.m
    return BoundReport(
        name="exhaustion_tail",
        value=value,
        domain_ok=t >= t_min,
        condition_text=f"t >= b*x0^(a/b)/m = {t_min:.6g}",
        inputs=_inputs_dict(inp, "t"),
    )


def exhaustion_tail_bound_at_step(inp: BoundInputs) -> BoundReport:
    """Step-indexed form C x0^{a/(2b-a)} (1 - a n/m)^{b/(2b-a)}, valid
    while m - a*n >= b."""
    p, n, c = inp.params, inp.n, inp.c_const
    if n is None:
        raise ValueError("needs n")
    expo = p.b / (2 * p.b - p.a)
    value = c * p.x0 ** (p.a / (2 * p.b - p.a)) * max(0.0, 1.0 - p.a * n / p.m) ** expo
    return BoundReport(
        name="exhaustion_tail_at_step",
        value=value,
        domain_ok=p.m - p.a * n >= p.b,
        condition_text=f"m - a*n >= b = {p.b:.6g}",
        inputs=_inputs_dict(inp, "n"),
    )


def sigma_tracking_bound(inp: BoundInputs) -> BoundReport:
    """Lower bound 1 - C/(m_small eps^2) on tracking down to level m."""
    if inp.m is None or inp.eps is None:
        raise ValueError("needs m and eps")
    value = 1.0 - inp.c_const / (inp.m * inp.eps * inp.eps)
    return BoundReport(
        name="sigma_tracking",
        value=value,
        domain_ok=True,
        condition_text="m > 0 and eps in (0, 1/2)",
        inputs=_inputs_dict(inp, "m", "eps"),
    )


def drained_bound(inp: BoundInputs) -> BoundReport:
    """Lower bound 1 - C x0^{a/(2b-a)} / m^{b/(2b-a)} on ending by total
    depletion, with the weaker all-x0 form 1 - C/m^{(b-a)/(2b-a)}."""
    p, c = inp.params, inp.c_const
    denom_exp = p.b / (2 * p.b - p.a)
    num_exp = p.a / (2 * p.b - p.a)
    value = 1.0 - c * p.x0 ** num_exp / p.m ** denom_exp
    weak = 1.0 - c / p.m ** ((p.b - p.a) / (2 * p.b - p.a))
    return BoundReport(
        name="drained",
        value=value,
        domain_ok=True,
        condition_text="any starting configuration",
        inputs=_inputs_dict(inp),
        extras={"weak_value": weak},
    )


ALL_BOUNDS = {
    "k_tracking": k_tracking_bound,
    "k_tracking_at_step": k_tracking_bound_at_step,
    "exhaustion_tail": exhaustion_tail_bound,
    "exhaustion_tail_at_step": exhaustion_tail_bound_at_step,
    "sigma_tracking": sigma_tracking_bound,
    "drained": drained_bound,
}
