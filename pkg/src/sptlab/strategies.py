"""Declarative strategy rules and their target-weight builders.

A strategy spec is a string like ``ewp``, ``market``, ``dwp:p=-0.5``,
``map:artifact=posterior.json``, or a learner to be fit per training
window (``dwp-grid``, ``dwp-mh:iterations=10000``, ``gp:chars=log:mu``).
Fixed rules build (T+1, n) target arrays from a PanelBundle here; learners
are bound to their training routines by the experiment harness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EvaluationError, InvalidArgumentError
from .panel_io import PanelBundle

FIXED_KINDS = ("ewp", "market", "dwp", "map")
LEARNER_KINDS = ("dwp-grid", "dwp-mh", "gp")


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    params: dict = field(default_factory=dict)

    @property
    def is_learner(self) -> bool:
        return self.kind in LEARNER_KINDS

    @property
    def label(self) -> str:
        if not self.params:
            return self.kind
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.kind}:{inner}"


def parse_strategy(text: str) -> StrategySpec:
    """Parse ``kind[:key=val[,key=val...]]``; numeric values become floats."""
    text = text.strip()
    kind, _, rest = text.partition(":")
    if kind not in FIXED_KINDS + LEARNER_KINDS:
        raise InvalidArgumentError(
            f"unknown strategy {kind!r}; expected one of "
            f"{', '.join(FIXED_KINDS + LEARNER_KINDS)}")
    params: dict = {}
    if rest:
        for item in rest.split(","):
            key, eq, val = item.partition("=")
            if not eq or not key:
                raise InvalidArgumentError(f"bad strategy parameter {item!r}")
            try:
                params[key.strip()] = float(val)
            except ValueError:
                params[key.strip()] = val.strip()
    if kind == "dwp":
        if "p" not in params:
            raise InvalidArgumentError("dwp strategy needs p=<exponent>")
        if not isinstance(params["p"], float):
            raise InvalidArgumentError(f"dwp exponent must be numeric, got {params['p']!r}")
    if kind == "map" and "artifact" not in params:
        raise InvalidArgumentError("map strategy needs artifact=<path>")
    return StrategySpec(kind, params)


def _formation_membership(bundle: PanelBundle) -> np.ndarray:
    m = bundle.panel.membership
    return np.vstack([m, m[-1:]])


def ewp_targets(bundle: PanelBundle) -> np.ndarray:
    """Equal weight over each formation day's members."""
    member = _formation_membership(bundle)
    counts = member.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise InvalidArgumentError("a formation day has no members")
    return member / counts


def _mu_rows(bundle: PanelBundle) -> np.ndarray:
    if "mu" not in bundle.channels:
        raise InvalidArgumentError(
            "bundle has no market-weight channel 'mu' (ingest a 'cap' "
            "characteristic or use a simulated bundle)")
    return bundle.channels["mu"]


def market_targets(bundle: PanelBundle) -> np.ndarray:
    """Buy-and-hold market portfolio.

    Rows follow the backtester's own drift recursion, so between membership
    changes the rebalance trade is exactly zero; on a day the universe
    changes, the row resets to that day's observed market weights.
    """
    mu = _mu_rows(bundle)
    member = bundle.panel.membership
    r_eff = np.where(member, bundle.panel.r, 0.0)
    t, n = r_eff.shape
    targets = np.empty((t + 1, n))
    targets[0] = mu[0]
    for k in range(t):
        if k > 0 and not np.array_equal(member[k], member[k - 1]):
            targets[k] = mu[k]
        held = targets[k][None, :]
        growth = 1.0 + r_eff[k][None, :]
        q = 1.0 + np.einsum("tn,tn->t", held, r_eff[k][None, :])
        targets[k + 1] = (held * growth / q[:, None])[0]
    return targets


def dwp_targets(bundle: PanelBundle, p: float) -> np.ndarray:
    """Diversity-weighted targets, exponent p on each day's market weights."""
    if not np.isfinite(p):
        raise InvalidArgumentError("p must be finite")
    mu = _mu_rows(bundle)
    if p == 1:
        return mu.copy()
    mask = mu > 0
    if p == 0:
        w = mask / mask.sum(axis=1, keepdims=True)
        return w
    with np.errstate(divide="ignore"):
        logw = np.where(mask, p * np.log(np.where(mask, mu, 1.0)), -np.inf)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def build_char_rows(bundle: PanelBundle, specs: list) -> np.ndarray:
    """(T+1, n, d) characteristic stack; spec ``log:name`` takes logs."""
    cols = []
    for spec in specs:
        take_log = spec.startswith("log:")
        name = spec[4:] if take_log else spec
        if name not in bundle.channels:
            raise InvalidArgumentError(f"unknown channel {name!r}")
        col = bundle.channels[name]
        if take_log:
            with np.errstate(divide="ignore", invalid="ignore"):
                col = np.log(col)
        cols.append(col)
    return np.stack(cols, axis=-1)


def map_targets(bundle: PanelBundle, f_log: Callable[[np.ndarray], float],
                char_specs: list) -> np.ndarray:
    """Investment-map targets: weight of each member asset proportional to
    exp(f_log(characteristics at formation time)); non-members weigh zero."""
    chars = build_char_rows(bundle, char_specs)
    member = _formation_membership(bundle)
    t1, n, _ = chars.shape
    targets = np.zeros((t1, n))
    for k in range(t1):
        idx = np.flatnonzero(member[k])
        if idx.size == 0:
            raise InvalidArgumentError(f"formation day {k} has no members")
        vals = np.empty(idx.size)
        for j, i in enumerate(idx):
            v = float(f_log(chars[k, i]))
            if not np.isfinite(v):
                raise EvaluationError(
                    f"investment map returned {v!r} for asset {i} on formation day {k}")
            vals[j] = v
        w = np.exp(vals - vals.max())
        targets[k, idx] = w / w.sum()
    return targets


def build_targets(spec: StrategySpec, bundle: PanelBundle) -> np.ndarray:
    """Target weights for a fixed (non-learner) rule."""
    if spec.kind == "ewp":
        return ewp_targets(bundle)
    if spec.kind == "market":
        return market_targets(bundle)
    if spec.kind == "dwp":
        return dwp_targets(bundle, float(spec.params["p"]))
    if spec.kind == "map":
        from .gp import load_posterior_artifact, posterior_targets
        artifact = load_posterior_artifact(str(spec.params["artifact"]))
        return posterior_targets(bundle, artifact)
    raise InvalidArgumentError(
        f"{spec.kind!r} is a learner; fit it through the experiment harness")
