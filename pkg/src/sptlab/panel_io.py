"""CSV ingestion and the timing discipline for trading characteristics.

Two frames matter for any characteristic:

* the *known* frame: one row per trading day, holding the latest value
  reported on or before that day's close (forward-filled between reports);
* the *formation* frame (a "channel"): T+1 rows aligned with target
  weights, where row k holds what was known strictly before return day k
  began. Row 0 comes from reports dated before the first panel date
  (serialized with an empty date field), row k = known row k-1, and the
  extra final row feeds the rebalance after the last close.

Strategies only ever see channels, so look-ahead is impossible by
construction. Market weights are the one exception to the one-day lag: a
"cap" characteristic records each day's closing capitalization, so its
channel rows are the capitalizations at the instant of each rebalance, and
the derived "mu" channel normalizes them over that day's members.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field

import numpy as np

from .backtest import ReturnsPanel
from .errors import DataError, LookAheadError

_GAP_TOLERANCE_DAYS = 7


@dataclass(frozen=True)
class PanelBundle:
    """A returns panel together with its characteristic channels."""

    panel: ReturnsPanel
    channels: dict = field(default_factory=dict)   # name -> (T+1, n) formation frame
    known: dict = field(default_factory=dict)      # name -> (T, n) as-known frame
    warnings: tuple = ()

    def __post_init__(self):
        t, n = self.panel.r.shape
        for name, rows in self.channels.items():
            if rows.shape != (t + 1, n):
                raise DataError(f"channel {name!r} shape {rows.shape} != {(t + 1, n)}")
        for name, rows in self.known.items():
            if rows.shape != (t, n):
                raise DataError(f"known frame {name!r} shape {rows.shape} != {(t, n)}")

    @property
    def n_days(self) -> int:
        return self.panel.n_days

    @property
    def n_assets(self) -> int:
        return self.panel.n_assets

    def window(self, lo: int, hi: int) -> "PanelBundle":
        """Bundle restricted to return rows lo:hi (channels keep their
        formation alignment, so they carry hi - lo + 1 rows)."""
        return PanelBundle(
            self.panel.window(lo, hi),
            {k: v[lo:hi + 1] for k, v in self.channels.items()},
            {k: v[lo:hi] for k, v in self.known.items()},
            self.warnings)


def _parse_rows(text: str, header: str, optional_last: bool = False):
    """Yield (line_number, fields) for a simple comma-separated table."""
    lines = text.splitlines()
    if not lines:
        raise DataError("empty file")
    cols = header.split(",")
    got = lines[0].strip()
    if got != header and not (optional_last and got == ",".join(cols[:-1])):
        raise DataError(f"line 1: expected header {header!r}, got {got!r}")
    n_cols = len(got.split(","))
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        fields = raw.split(",")
        if len(fields) != n_cols:
            raise DataError(f"line {ln}: expected {n_cols} fields, got {len(fields)}")
        if n_cols < len(cols):
            fields = fields + [""]
        yield ln, [f.strip() for f in fields]


def _parse_member(token: str, ln: int) -> bool:
    if token in ("", "1", "true", "True"):
        return True
    if token in ("0", "false", "False"):
        return False
    raise DataError(f"line {ln}: bad member flag {token!r}")


def parse_returns_csv(text: str) -> ReturnsPanel:
    """Parse the long `date,asset_id,return,member` format.

    The member column may be omitted or left empty (all members). Asset and
    date order follow first appearance; missing (date, asset) combinations
    become non-members.
    """
    date_ix: dict = {}
    asset_ix: dict = {}
    seen: dict = {}
    for ln, (date, aid, ret, member) in _parse_rows(
            text, "date,asset_id,return,member", optional_last=True):
        if not date:
            raise DataError(f"line {ln}: empty date")
        t = date_ix.setdefault(date, len(date_ix))
        i = asset_ix.setdefault(aid, len(asset_ix))
        if (t, i) in seen:
            raise DataError(f"line {ln}: duplicate entry for {date},{aid}")
        is_member = _parse_member(member, ln)
        if ret == "":
            value = np.nan
            if is_member:
                raise DataError(f"line {ln}: member asset without a return")
        else:
            try:
                value = float(ret)
            except ValueError:
                raise DataError(f"line {ln}: bad return {ret!r}") from None
        seen[(t, i)] = (value, is_member)
    if not seen:
        raise DataError("no data rows")
    r = np.full((len(date_ix), len(asset_ix)), np.nan)
    member = np.zeros(r.shape, dtype=bool)
    for (t, i), (value, m) in seen.items():
        r[t, i] = value
        member[t, i] = m
    return ReturnsPanel(np.array(list(date_ix)), r, member, tuple(asset_ix))


def _gap_warnings(dates: np.ndarray) -> list:
    out = []
    try:
        parsed = [datetime.date.fromisoformat(str(d)) for d in dates]
    except ValueError:
        return out  # synthetic identifiers: no calendar to check
    for a, b in zip(parsed, parsed[1:]):
        gap = (b - a).days
        if gap > _GAP_TOLERANCE_DAYS:
            out.append(f"gap of {gap} days between {a} and {b}")
    return out


def forward_fill_known(dates: np.ndarray, reports: list) -> tuple[np.ndarray, float]:
    """Known-frame column for one asset/characteristic.

    ``reports`` is a list of (date, value) pairs; the value known on day t
    is the last report dated on or before dates[t]. Returns the T-vector
    and the pre-sample value (last report dated strictly before dates[0],
    NaN if none). Days before the first report are NaN.
    """
    reports = sorted(reports)
    known = np.full(len(dates), np.nan)
    initial = np.nan
    j = 0
    current = np.nan
    for rd, rv in reports:
        if rd < dates[0]:
            initial = rv
    for t, d in enumerate(np.asarray(dates, dtype=str)):
        while j < len(reports) and reports[j][0] <= d:
            current = reports[j][1]
            j += 1
        known[t] = current
    return known, initial


def channels_from_known(known: np.ndarray, initial: np.ndarray) -> np.ndarray:
    """Formation frame: row k is what was known strictly before return day
    k, i.e. row 0 is the pre-sample value and row k = known[k-1]."""
    return np.vstack([np.asarray(initial, dtype=float)[None, :], known])


def derive_mu_channel(cap_channel: np.ndarray, membership: np.ndarray) -> np.ndarray:
    """Market weights at each formation time: capitalizations normalized
    over that day's members (non-members weigh zero)."""
    member = np.vstack([membership, membership[-1:]])
    caps = np.where(member, cap_channel, 0.0)
    total = caps.sum(axis=1, keepdims=True)
    if np.any(~np.isfinite(total)) or np.any(total <= 0):
        k = int(np.argmax(~(np.isfinite(total) & (total > 0)).ravel()))
        raise DataError(f"market capitalizations unusable on formation row {k}")
    return caps / total


def ingest_panel(returns_csv: str, characteristics_csv: str | None = None,
                 membership_csv: str | None = None) -> PanelBundle:
    """Build a PanelBundle from CSV text.

    ``characteristics_csv`` uses the sparse report format
    `date,asset_id,name,value`; rows dated between panel days forward-fill,
    rows with an empty date are pre-sample values, and rows dated after the
    panel's last day are rejected (they could silently leak future
    information into a mis-aligned join). ``membership_csv``
    (`date,asset_id,member`) overrides the returns file's member column;
    combinations it omits are non-members.
    """
    panel = parse_returns_csv(returns_csv)

    if membership_csv is not None:
        member = np.zeros_like(panel.membership)
        date_ix = {d: t for t, d in enumerate(panel.dates)}
        asset_ix = {a: i for i, a in enumerate(panel.asset_ids)}
        for ln, (date, aid, flag) in _parse_rows(membership_csv, "date,asset_id,member"):
            if date not in date_ix:
                raise DataError(f"line {ln}: date {date!r} not in the returns panel")
            if aid not in asset_ix:
                raise DataError(f"line {ln}: unknown asset {aid!r}")
            member[date_ix[date], asset_ix[aid]] = _parse_member(flag, ln)
        panel = ReturnsPanel(panel.dates, panel.r, member, panel.asset_ids)

    known: dict = {}
    channels: dict = {}
    if characteristics_csv is not None:
        last_date = str(panel.dates[-1])
        asset_ix = {a: i for i, a in enumerate(panel.asset_ids)}
        reports: dict = {}
        for ln, (date, aid, name, value) in _parse_rows(
                characteristics_csv, "date,asset_id,name,value"):
            if aid not in asset_ix:
                raise DataError(f"line {ln}: unknown asset {aid!r}")
            if date > last_date:
                raise LookAheadError(
                    f"line {ln}: report for {name!r} dated {date!r} lies beyond "
                    f"the panel's last day {last_date!r}")
            try:
                v = float(value)
            except ValueError:
                raise DataError(f"line {ln}: bad value {value!r}") from None
            reports.setdefault(name, {}).setdefault(aid, []).append((date, v))
        for name, per_asset in sorted(reports.items()):
            frame = np.full(panel.r.shape, np.nan)
            initial = np.full(panel.n_assets, np.nan)
            for aid, rows in per_asset.items():
                i = asset_ix[aid]
                frame[:, i], initial[i] = forward_fill_known(panel.dates, rows)
            known[name] = frame
            channels[name] = channels_from_known(frame, initial)
        if "cap" in channels:
            channels["mu"] = derive_mu_channel(channels["cap"], panel.membership)

    warnings = tuple(_gap_warnings(panel.dates))
    return PanelBundle(panel, channels, known, warnings)


def characteristics_csv(bundle: PanelBundle) -> str:
    """Serialize the known frames (plus pre-sample rows, empty date) in the
    sparse report format; NaN cells are skipped. Re-ingesting reproduces
    the bundle's channels bitwise, 'mu' included (it is re-derived)."""
    lines = ["date,asset_id,name,value"]
    panel = bundle.panel
    for name in sorted(bundle.known):
        frame = bundle.known[name]
        initial = bundle.channels[name][0]
        for i, aid in enumerate(panel.asset_ids):
            if np.isfinite(initial[i]):
                lines.append(f",{aid},{name},{float(initial[i])!r}")
        for t in range(panel.n_days):
            for i, aid in enumerate(panel.asset_ids):
                v = frame[t, i]
                if np.isfinite(v):
                    lines.append(f"{panel.dates[t]},{aid},{name},{float(v)!r}")
    return "\n".join(lines) + "\n"
