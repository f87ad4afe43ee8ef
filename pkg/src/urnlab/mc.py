"""Replicate engine: lockstep batch simulation, event estimates, sweeps.

Replicate ``i`` of a run with base seed ``s`` is driven exclusively by the
substream ``rng.substream_seed(s, i)`` (SplitMix64 derivation, see
:mod:`urnlab.rng`), so serial, chunked, and parallel execution produce
identical aggregates, and a batch row is draw-for-draw identical to the
scalar :func:`urnlab.urn.run` with the same substream seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from . import rng as _rng
from .oracle import (EventDrained, EventExhaustionAfter, EventKTracking,
                     EventLTracking, EventSigmaTracking)
from .urn import UrnParams, last_predicted_step, predicted_x, predicted_y, threshold_step

_MAX_BLOCK = 8192
_MAX_RAW_WORDS = 1 << 25  # ~256 MB of buffered raws per batch


def derive_seeds(seed_base: int, count: int, start: int = 0) -> np.ndarray:
    """Vectorized substream seeds for replicates start..start+count-1."""
    idx = np.arange(start, start + count, dtype=np.uint64)
    z = (np.uint64(seed_base & _rng.MASK64) +
         (idx + np.uint64(1)) * np.uint64(_rng.GOLDEN))
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


@dataclass
class KernelRequest:
    """What the batch loop should track, and how far to run it."""

    horizon: int
    eps_k: Optional[float] = None
    k_horizon: int = -1
    eps_l: Optional[float] = None
    sigma_level: Optional[float] = None
    ensemble_quantiles: Optional[Sequence[float]] = None
    ensemble_stride: int = 1


@dataclass
class KernelResult:
    """Per-replicate reductions (-1 encodes 'never happened / still live')."""

    steps_run: int
    rho: np.ndarray
    tau: np.ndarray
    sigma: np.ndarray
    first_k_viol: np.ndarray
    first_l_viol: np.ndarray
    final_x: np.ndarray
    final_y: np.ndarray
    ensemble_steps: Optional[np.ndarray] = None
    ensemble_k: Optional[dict] = None
    ensemble_l: Optional[dict] = None

    def live_past(self, n: int) -> np.ndarray:
        return (self.rho < 0) | (self.rho > n)


def _run_chunk(params: UrnParams, seeds: np.ndarray, req: KernelRequest) -> KernelResult:
    n_rows = len(seeds)
    integral = params.integral and params.m < 2 ** 31
    horizon = req.horizon
    n_lmax = last_predicted_step(params) if req.eps_l is not None else -1
    track_l = req.eps_l is not None

    if integral:
        x = np.full(n_rows, int(params.x0), dtype=np.int64)
        y = np.full(n_rows, int(params.y0), dtype=np.int64)
        av, bv = int(params.a), int(params.b)
    else:
        x = np.full(n_rows, float(params.x0), dtype=np.float64)
        y = np.full(n_rows, float(params.y0), dtype=np.float64)
        av, bv = params.a, params.b

    live = np.ones(n_rows, dtype=bool)
    rho = np.full(n_rows, -1, dtype=np.int64)
    tau = np.full(n_rows, -1, dtype=np.int64)
    sigma = np.full(n_rows, -1, dtype=np.int64)
    fkv = np.full(n_rows, -1, dtype=np.int64)
    flv = np.full(n_rows, -1, dtype=np.int64)

    ens_q = req.ensemble_quantiles
    ens_steps: list[int] = []
    ens_k: dict = {"mean": []} if ens_q is not None else {}
    ens_l: dict = {"mean": []} if ens_q is not None else {}
    if ens_q is not None:
        for q in ens_q:
            ens_k[q] = []
            ens_l[q] = []
    last_pred = last_predicted_step(params)

    def check_state(n: int) -> None:
        if req.eps_k is not None and n <= req.k_horizon:
            px = predicted_x(params, n)
            if px > 0:
                bad = (np.abs(x / px - 1.0) > req.eps_k) & (fkv < 0)
                fkv[bad] = n
        if track_l and n <= n_lmax:
            py = predicted_y(params, n)
            if py > 0:
                bad = (np.abs(y / py - 1.0) > req.eps_l) & (flv < 0)
                flv[bad] = n
        hit = (x == 0) & (tau < 0)
        if hit.any():
            tau[hit] = n
        if req.sigma_level is not None:
            hit = (x <= req.sigma_level) & (sigma < 0)
            if hit.any():
                sigma[hit] = n
        if ens_q is not None and n % req.ensemble_stride == 0 and n <= last_pred:
            px = predicted_x(params, n)
            py = predicted_y(params, n)
            ens_steps.append(n)
            kvals = x / px
            ens_k["mean"].append(float(np.mean(kvals)))
            for q in ens_q:
                ens_k[q].append(float(np.quantile(kvals, q)))
            if py > 0:
                lvals = y / py
                ens_l["mean"].append(float(np.mean(lvals)))
                for q in ens_q:
                    ens_l[q].append(float(np.quantile(lvals, q)))
            else:
                ens_l["mean"].append(math.nan)
                for q in ens_q:
                    ens_l[q].append(math.nan)

    check_state(0)
    if horizon > 0:
        blocks = _rng.BlockDraws(seeds, block=min(horizon, _MAX_BLOCK))
        for n0 in range(horizon):
            if live.any():
                if integral:
                    u = blocks.draw_below(x + y, live)
                    blue = live & (u < x)
                else:
                    thr = x / np.where(live, x + y, 1.0)
                    blue = live & (blocks.draw_unit(live) < thr)
                if integral:
                    x = x - np.where(blue, bv, 0)
                    y = y + np.where(blue, bv - av, np.where(live, -av, 0))
                else:
                    x = x - np.where(blue, bv, 0.0)
                    y = y + np.where(blue, bv - av, np.where(live, -av, 0.0))
                newly = live & ((y < 0) | (x + y <= 0) | (x < 0))
                if newly.any():
                    rho[newly] = n0 + 1
                    live &= ~newly
            n = n0 + 1
            check_state(n)
            if not live.any() and (not track_l or n >= n_lmax):
                break
    else:
        n = 0

    result = KernelResult(
        steps_run=horizon, rho=rho, tau=tau, sigma=sigma,
        first_k_viol=fkv, first_l_viol=flv, final_x=x, final_y=y,
    )
    if ens_q is not None:
        result.ensemble_steps = np.asarray(ens_steps, dtype=np.int64)
        result.ensemble_k = {k: np.asarray(v) for k, v in ens_k.items()}
        result.ensemble_l = {k: np.asarray(v) for k, v in ens_l.items()}
    return result


def run_kernel(params: UrnParams, seed_base: int, replicates: int,
               req: KernelRequest) -> KernelResult:
    """Run the batch loop, chunking replicates to bound buffer memory."""
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    block = min(max(req.horizon, 1), _MAX_BLOCK)
    chunk_rows = max(1, min(replicates, _MAX_RAW_WORDS // block))
    if req.ensemble_quantiles is not None:
        chunk_rows = replicates  # cross-sections need the whole batch
    parts = []
    for start in range(0, replicates, chunk_rows):
        count = min(chunk_rows, replicates - start)
        seeds = derive_seeds(seed_base, count, start=start)
        parts.append(_run_chunk(params, seeds, req))
    if len(parts) == 1:
        return parts[0]
    return KernelResult(
        steps_run=req.horizon,
        rho=np.concatenate([p.rho for p in parts]),
        tau=np.concatenate([p.tau for p in parts]),
        sigma=np.concatenate([p.sigma for p in parts]),
        first_k_viol=np.concatenate([p.first_k_viol for p in parts]),
        first_l_viol=np.concatenate([p.first_l_viol for p in parts]),
        final_x=np.concatenate([p.final_x for p in parts]),
        final_y=np.concatenate([p.final_y for p in parts]),
    )


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    z = sps.norm.ppf(0.5 + confidence / 2)
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def clopper_pearson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Exact (beta-quantile) interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    alpha = 1.0 - confidence
    low = 0.0 if successes == 0 else float(sps.beta.ppf(alpha / 2, successes, n - successes + 1))
    high = 1.0 if successes == n else float(sps.beta.ppf(1 - alpha / 2, successes + 1, n - successes))
    return low, high


@dataclass
class EstimateReport:
    """Monte Carlo estimate of one event probability with a 95% interval."""

    event: str
    replicates: int
    successes: int
    p_hat: float
    ci_low: float
    ci_high: float
    ci_method: str
    seed_base: int

    def to_dict(self) -> dict:
        return {
            "event": self.event, "replicates": self.replicates,
            "successes": self.successes, "p_hat": self.p_hat,
            "ci_low": self.ci_low, "ci_high": self.ci_high,
            "ci_method": self.ci_method, "seed_base": self.seed_base,
        }


def _event_successes(params: UrnParams, event, seed_base: int, replicates: int) -> int:
    """Count replicates on which the event holds (exact short-circuits for
    vacuous events avoid simulating at all)."""
    if isinstance(event, EventKTracking):
        if not (0 < event.eps < 0.5):
            raise ValueError("eps must lie in (0, 1/2)")
        nt = threshold_step(params, event.t)
        if nt < 0:
            return replicates
        nt = min(nt, last_predicted_step(params))
        req = KernelRequest(horizon=nt, eps_k=event.eps, k_horizon=nt)
        res = run_kernel(params, seed_base, replicates, req)
        return int(np.count_nonzero(res.live_past(nt) & (res.first_k_viol < 0)))
    if isinstance(event, EventLTracking):
        if event.eps <= 0:
            raise ValueError("eps must be positive")
        horizon = last_predicted_step(params)
        req = KernelRequest(horizon=horizon, eps_l=event.eps)
        res = run_kernel(params, seed_base, replicates, req)
        return int(np.count_nonzero(res.first_l_viol < 0))
    if isinstance(event, EventDrained):
        req = KernelRequest(horizon=params.max_steps() + 1)
        res = run_kernel(params, seed_base, replicates, req)
        return int(np.count_nonzero((res.rho >= 0) & (params.m - params.a * res.rho <= 0)))
    if isinstance(event, EventSigmaTracking):
        if event.m_small <= 0:
            raise ValueError("m_small must be positive")
        if not (0 < event.eps < 0.5):
            raise ValueError("eps must lie in (0, 1/2)")
        if params.x0 <= event.m_small:
            return replicates
        req = KernelRequest(horizon=params.max_steps() + 1, eps_k=event.eps,
                            k_horizon=last_predicted_step(params),
                            sigma_level=event.m_small)
        res = run_kernel(params, seed_base, replicates, req)
        ok = res.sigma >= 0
        ok &= (res.rho < 0) | (res.rho > res.sigma)
        ok &= (res.first_k_viol < 0) | (res.first_k_viol > res.sigma)
        return int(np.count_nonzero(ok))
    if isinstance(event, EventExhaustionAfter):
        if event.n0 <= 0:
            return replicates
        req = KernelRequest(horizon=event.n0 - 1)
        res = run_kernel(params, seed_base, replicates, req)
        return int(np.count_nonzero(res.tau < 0))
    raise TypeError(f"unknown event {event!r}")


def estimate_event(params: UrnParams, event, replicates: int, seed_base: int,
                   ci_method: str = "wilson") -> EstimateReport:
    """Estimate one event probability over independent replicates."""
    successes = _event_successes(params, event, seed_base, replicates)
    if ci_method == "wilson":
        lo, hi = wilson_interval(successes, replicates)
    elif ci_method == "clopper-pearson":
        lo, hi = clopper_pearson_interval(successes, replicates)
    else:
        raise ValueError(f"unknown ci method {ci_method!r}")
    return EstimateReport(
        event=repr(event), replicates=replicates, successes=successes,
        p_hat=successes / replicates, ci_low=lo, ci_high=hi,
        ci_method=ci_method, seed_base=seed_base,
    )


@dataclass
class PowerLawFit:
    """Weighted log-log slope with its standard error."""

    exponent: float
    stderr: float
    points_used: int


def fit_power_law(xs: Sequence[float], probs: Sequence[float], n: int,
                  min_points: int = 5) -> Optional[PowerLawFit]:
    """WLS fit of log(prob) against log(x).

    Weights are inverse delta-method variances of log(p_hat) with a
    half-count shrink so saturated points stay finite; zero-count points
    are dropped.  Returns None below ``min_points`` usable points.
    """
    xs = np.asarray(xs, dtype=float)
    probs = np.asarray(probs, dtype=float)
    keep = probs > 0
    if int(keep.sum()) < min_points:
        return None
    lx = np.log(xs[keep])
    ly = np.log(probs[keep])
    shrunk = (probs[keep] * n + 0.5) / (n + 1)
    var = (1.0 - shrunk) / (n * shrunk)
    w = 1.0 / var
    wsum = w.sum()
    xbar = (w * lx).sum() / wsum
    ybar = (w * ly).sum() / wsum
    sxx = (w * (lx - xbar) ** 2).sum()
    if sxx <= 0:
        return None
    slope = (w * (lx - xbar) * (ly - ybar)).sum() / sxx
    return PowerLawFit(exponent=float(slope), stderr=float(1.0 / math.sqrt(sxx)),
                       points_used=int(keep.sum()))


@dataclass
class SweepRow:
    t: float
    n_t: int
    k_fail_count: int
    k_fail: float
    k_fail_ci: tuple[float, float]
    k_fail_bound: float
    k_domain_ok: bool
    tau_tail_count: int
    tau_tail: float
    tau_tail_ci: tuple[float, float]
    tau_tail_bound: float
    tau_domain_ok: bool

    def to_dict(self) -> dict:
        return {
            "t": self.t, "n_t": self.n_t,
            "k_fail_count": self.k_fail_count, "k_fail": self.k_fail,
            "k_fail_ci": list(self.k_fail_ci), "k_fail_bound": self.k_fail_bound,
            "k_domain_ok": self.k_domain_ok,
            "tau_tail_count": self.tau_tail_count, "tau_tail": self.tau_tail,
            "tau_tail_ci": list(self.tau_tail_ci),
            "tau_tail_bound": self.tau_tail_bound, "tau_domain_ok": self.tau_domain_ok,
        }


@dataclass
class SweepReport:
    """Per-threshold failure estimates with bound values and slope fits."""

    params: UrnParams
    eps: float
    replicates: int
    seed_base: int
    c_const: float
    rows: list[SweepRow]
    k_fit: Optional[PowerLawFit]
    tau_fit: Optional[PowerLawFit]
    c_min_k: Optional[float]
    c_min_tau: Optional[float]

    def to_dict(self) -> dict:
        return {
            "params": {"a": self.params.a, "b": self.params.b,
                       "x0": self.params.x0, "y0": self.params.y0},
            "eps": self.eps, "replicates": self.replicates,
            "seed_base": self.seed_base, "c_const": self.c_const,
            "rows": [r.to_dict() for r in self.rows],
            "k_fit": None if self.k_fit is None else vars(self.k_fit),
            "tau_fit": None if self.tau_fit is None else vars(self.tau_fit),
            "c_min_k": self.c_min_k, "c_min_tau": self.c_min_tau,
        }


def sweep_thresholds(params: UrnParams, eps: float, t_grid: Sequence[float],
                     replicates: int, seed_base: int, c_const: float = 1.0) -> SweepReport:
    """Estimate blue-tracking failures and exhaustion tails on a t-grid.

    All grid points are evaluated on one shared set of replicates (each
    point is a monotone function of the same path), so the failure rate is
    exactly nonincreasing in t and the tail exactly nondecreasing.
    """
    ts = list(t_grid)
    if any(t <= 0 for t in ts) or any(t1 <= t0 for t0, t1 in zip(ts, ts[1:])):
        raise ValueError("t_grid must be positive and strictly increasing")
    nts = [threshold_step(params, t) for t in ts]
    k_hor = max([n for n in nts if n >= 0], default=-1)
    k_hor = min(k_hor, last_predicted_step(params))
    req = KernelRequest(horizon=max(k_hor, 0), eps_k=eps, k_horizon=k_hor)
    res = run_kernel(params, seed_base, replicates, req)

    ba = params.b / params.a
    tail_exp = params.b / (2 * params.b - params.a)
    xp = params.x0 ** (params.a / params.b)
    rows = []
    for t, nt in zip(ts, nts):
        if nt < 0:
            k_fails = 0
            tau_count = replicates
        else:
            nt_c = min(nt, k_hor)
            ok = res.live_past(nt_c) & ((res.first_k_viol < 0) | (res.first_k_viol > nt_c))
            k_fails = replicates - int(np.count_nonzero(ok))
            tau_count = int(np.count_nonzero((res.tau < 0) | (res.tau >= nt_c)))
        rows.append(SweepRow(
            t=t, n_t=nt,
            k_fail_count=k_fails, k_fail=k_fails / replicates,
            k_fail_ci=wilson_interval(k_fails, replicates),
            k_fail_bound=c_const / (t ** ba * eps * eps),
            k_domain_ok=t >= c_const * xp / (params.m * eps),
            tau_tail_count=tau_count, tau_tail=tau_count / replicates,
            tau_tail_ci=wilson_interval(tau_count, replicates),
            tau_tail_bound=c_const * t ** tail_exp,
            tau_domain_ok=t >= params.b * xp / params.m,
        ))

    k_rows = [r for r in rows if r.k_domain_ok]
    tau_rows = [r for r in rows if r.tau_domain_ok]
    k_fit = fit_power_law([r.t for r in k_rows], [r.k_fail for r in k_rows], replicates)
    tau_fit = fit_power_law([r.t for r in tau_rows], [r.tau_tail for r in tau_rows], replicates)
    c_min_k = max((r.k_fail * r.t ** ba * eps * eps for r in k_rows), default=None)
    c_min_tau = max((r.tau_tail / r.t ** tail_exp for r in tau_rows), default=None)
    return SweepReport(params=params, eps=eps, replicates=replicates,
                       seed_base=seed_base, c_const=c_const, rows=rows,
                       k_fit=k_fit, tau_fit=tau_fit,
                       c_min_k=c_min_k, c_min_tau=c_min_tau)


@dataclass
class EnsembleStats:
    """Per-step cross-replicate aggregates of the tracking ratios."""

    params: UrnParams
    replicates: int
    seed_base: int
    quantiles: tuple
    steps: np.ndarray
    k_mean: np.ndarray
    k_quantiles: dict
    l_mean: np.ndarray
    l_quantiles: dict
    x_pred: np.ndarray
    y_pred: np.ndarray

    def write_csv(self, path, config_comment: Optional[str] = None) -> None:
        qcols = [f"q{int(round(q * 100)):02d}" for q in self.quantiles]
        with open(path, "w", newline="") as fh:
            if config_comment:
                fh.write(f"# {config_comment}\n")
            w = csv.writer(fh)
            w.writerow(["n", "k_mean"] + [f"k_{c}" for c in qcols] +
                       ["l_mean"] + [f"l_{c}" for c in qcols] + ["x_pred", "y_pred"])
            for i, n in enumerate(self.steps):
                row = [int(n), _fmt(self.k_mean[i])]
                row += [_fmt(self.k_quantiles[q][i]) for q in self.quantiles]
                row += [_fmt(self.l_mean[i])]
                row += [_fmt(self.l_quantiles[q][i]) for q in self.quantiles]
                row += [_fmt(self.x_pred[i]), _fmt(self.y_pred[i])]
                w.writerow(row)


def _fmt(v: float) -> str:
    return "" if (isinstance(v, float) and math.isnan(v)) else format(float(v), ".17g")


def ensemble_stats(params: UrnParams, replicates: int, seed_base: int,
                   quantiles: Sequence[float] = (0.05, 0.5, 0.95),
                   stride: int = 1) -> EnsembleStats:
    """Per-step mean and quantiles of both tracking ratios across replicates."""
    if replicates < 2:
        raise ValueError("ensemble statistics need at least 2 replicates")
    horizon = last_predicted_step(params)
    req = KernelRequest(horizon=horizon, ensemble_quantiles=tuple(quantiles),
                        ensemble_stride=stride)
    res = run_kernel(params, seed_base, replicates, req)
    steps = res.ensemble_steps
    return EnsembleStats(
        params=params, replicates=replicates, seed_base=seed_base,
        quantiles=tuple(quantiles), steps=steps,
        k_mean=res.ensemble_k["mean"],
        k_quantiles={q: res.ensemble_k[q] for q in quantiles},
        l_mean=res.ensemble_l["mean"],
        l_quantiles={q: res.ensemble_l[q] for q in quantiles},
        x_pred=np.array([predicted_x(params, int(n)) for n in steps]),
        y_pred=np.array([predicted_y(params, int(n)) for n in steps]),
    )
