"""Command line client.

Every subcommand builds one JSON request, posts it to the service, and
writes the returned artifacts. By default the request runs against an
in-process application instance (no socket involved); ``--server
http://host:port`` targets a running service instead, with identical
results. The CLI owns all file handling: payloads travel inline, so the
service never sees a path.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or
convergence failure. ``SPTLAB_OUTDIR`` redirects relative output paths,
``SPTLAB_SERVER`` presets ``--server``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

import httpx

_SUCCESS, _USAGE, _DATA, _NUMERIC = 0, 1, 2, 3


class _ClientFailure(Exception):
    def __init__(self, name: str, detail: str, exit_code: int):
        super().__init__(detail)
        self.name = name
        self.detail = detail
        self.exit_code = exit_code


class _AsgiClient:
    """Synchronous facade over in-process requests to the ASGI app."""

    def __init__(self):
        from .service.app import create_app
        self._app = create_app()

    def __enter__(self) -> "_AsgiClient":
        return self

    def __exit__(self, *exc) -> bool:
        return False

    def post(self, route: str, json=None) -> httpx.Response:
        import asyncio

        async def call() -> httpx.Response:
            transport = httpx.ASGITransport(app=self._app)
            async with httpx.AsyncClient(transport=transport, timeout=None,
                                         base_url="http://sptlab.local") as client:
                return await client.post(route, json=json)

        return asyncio.run(call())


def _make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    return _AsgiClient()


def _post(client: httpx.Client, route: str, payload: dict) -> dict:
    resp = client.post(route, json=payload)
    if resp.status_code == 200:
        return resp.json()
    try:
        body = resp.json()
    except ValueError:
        raise _ClientFailure("HTTPError",
                             f"{resp.status_code}: {resp.text.strip()[:500]}", _DATA)
    if "exit_code" in body:
        raise _ClientFailure(body.get("error", "SptlabError"),
                             body.get("detail", ""), int(body["exit_code"]))
    return _raise_validation(body)


def _raise_validation(body: dict):
    detail = body.get("detail", body)
    if isinstance(detail, list):  # pydantic validation report
        parts = []
        for item in detail:
            loc = ".".join(str(x) for x in item.get("loc", ()) if x != "body")
            parts.append(f"{loc}: {item.get('msg', '')}")
        detail = "; ".join(parts)
    raise _ClientFailure("ValidationError", str(detail), _USAGE)


# --------------------------------------------------------------------------
# file handling


def _read(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as err:
        raise _ClientFailure("DataError", f"cannot read {path!r}: {err}", _DATA)


def _read_optional(path: str | None) -> str | None:
    return _read(path) if path else None


def _out_path(path: str) -> str:
    outdir = os.environ.get("SPTLAB_OUTDIR")
    if outdir and not os.path.isabs(path):
        return os.path.join(outdir, path)
    return path


def _write(path: str, text: str) -> None:
    full = _out_path(path)
    try:
        parent = os.path.dirname(full)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(full, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as err:
        raise _ClientFailure("DataError", f"cannot write {full!r}: {err}", _DATA)
    print(f"wrote {full}", file=sys.stderr)


def _parse_dt(text: str) -> float:
    """Accept plain floats and fractions such as ``1/252``."""
    s = text.strip()
    try:
        if "/" in s:
            num, _, den = s.partition("/")
            return float(num) / float(den)
        return float(s)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad time step {text!r}")


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}")


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}")


# --------------------------------------------------------------------------
# shared argument groups


def _add_panel_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--panel", required=True, metavar="CSV",
                   help="long-format returns panel (date,asset_id,return,member)")
    p.add_argument("--chars", metavar="CSV",
                   help="characteristic reports (date,asset_id,name,value)")
    p.add_argument("--membership", metavar="CSV",
                   help="membership overrides (date,asset_id,member)")


def _add_settings_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tc-rate", type=float, default=0.001,
                   help="proportional transaction cost rate (default 0.001)")
    p.add_argument("--periods-per-year", type=int, default=252)
    p.add_argument("--initial-wealth", type=float, default=1.0)
    p.add_argument("--charge-initial-acquisition", action="store_true",
                   help="also charge costs on the day-one buy-in")


def _panel_payload(args: argparse.Namespace) -> dict:
    return {
        "returns_csv": _read(args.panel),
        "characteristics_csv": _read_optional(args.chars),
        "membership_csv": _read_optional(args.membership),
        "settings": {
            "tc_rate": args.tc_rate,
            "periods_per_year": args.periods_per_year,
            "initial_wealth": args.initial_wealth,
            "charge_initial_acquisition": args.charge_initial_acquisition,
        },
    }


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


# --------------------------------------------------------------------------
# subcommand handlers


def _cmd_simulate(args, client) -> int:
    emit_panel = bool(args.panel_out or args.chars_out)
    payload = {
        "n_assets": args.n, "years": args.years, "dt": args.dt,
        "seed": args.seed, "drift": args.drift, "vol": args.vol,
        "cap_spread": args.cap_spread, "start_year": args.start_year,
        "emit_panel": emit_panel or args.premium is not None,
    }
    if args.x0 is not None:
        payload["x0"] = args.x0
    if args.premium is not None:
        payload["premium"] = args.premium
    body = _post(client, "/simulate", payload)
    if args.panel_out:
        _write(args.panel_out, body["returns_csv"])
    if args.chars_out:
        _write(args.chars_out, body["characteristics_csv"])
    if args.out:
        _write(args.out, body["path_csv"])
        _print_json({"n_assets": body["n_assets"], "n_steps": body["n_steps"]})
    else:
        sys.stdout.write(body["path_csv"])
    return _SUCCESS


def _cmd_backtest(args, client) -> int:
    payload = _panel_payload(args)
    payload["strategy"] = args.strategy
    if args.artifact:
        payload["artifact_json"] = _read(args.artifact)
    body = _post(client, "/backtest", payload)
    if args.out:
        _write(args.out, body["wealth_csv"])
    if args.summary_out:
        _write(args.summary_out, json.dumps(body["summary"], indent=2) + "\n")
    _print_json(body["summary"])
    return _SUCCESS


def _cmd_dwp_grid(args, client) -> int:
    payload = _panel_payload(args)
    payload.update(lo=args.lo, hi=args.hi, mesh=args.mesh)
    body = _post(client, "/learn/dwp-grid", payload)
    if args.values_out:
        _write(args.values_out, body.pop("values_csv"))
    else:
        body.pop("values_csv")
    if args.out:
        _write(args.out, json.dumps(body, indent=2) + "\n")
    _print_json(body)
    return _SUCCESS


def _cmd_dwp_mh(args, client) -> int:
    payload = _panel_payload(args)
    payload.update(iterations=args.iterations, burn_in=args.burn_in,
                   proposal_std=args.proposal_std, lo=args.lo, hi=args.hi,
                   initial_p=args.initial_p, seed=args.seed,
                   a=args.a, b=args.b, auto_start=not args.no_auto_start)
    body = _post(client, "/learn/dwp-mh", payload)
    if args.chain_out:
        _write(args.chain_out, body["chain_csv"])
    if args.out:
        _write(args.out, json.dumps(body["summary"], indent=2) + "\n")
    _print_json(body["summary"])
    return _SUCCESS


def _cmd_gp(args, client) -> int:
    payload = _panel_payload(args)
    payload.update(chars=args.channels, iterations=args.iterations,
                   burn_in=args.burn_in, seed=args.seed, a=args.a, b=args.b)
    if args.grid_sizes:
        payload["grid_sizes"] = args.grid_sizes
    body = _post(client, "/learn/gp", payload)
    if args.artifact_out:
        _write(args.artifact_out, body["artifact_json"])
    if args.map_out:
        _write(args.map_out, body["map_csv"])
    if args.out:
        _write(args.out, json.dumps(body["summary"], indent=2) + "\n")
    _print_json(body["summary"])
    return _SUCCESS


def _cmd_verify_master(args, client) -> int:
    payload = {
        "path_csv": _read(args.path),
        "generator": args.generator,
        "covariance": args.covariance,
        "coarsen": args.coarsen,
    }
    if args.sigma:
        rows = [line for line in _read(args.sigma).splitlines() if line.strip()]
        try:
            payload["sigma"] = [[float(x) for x in line.split(",")] for line in rows]
        except ValueError:
            raise _ClientFailure("DataError",
                                 f"{args.sigma!r} is not a numeric matrix", _DATA)
    elif args.vol is not None:
        payload["vol"] = args.vol
    body = _post(client, "/verify-master", payload)
    if args.out:
        _write(args.out, body["csv"])
        _print_json({"max_abs_residual": body["max_abs_residual"],
                     "rows": len(body["rows"])})
    else:
        sys.stdout.write(body["csv"])
        print(f"max |residual| = {body['max_abs_residual']!r}", file=sys.stderr)
    return _SUCCESS


def _experiment_config(path: str) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise _ClientFailure("DataError", f"cannot read config file {path!r}", _DATA)
    cfg: dict = {}
    if cp.has_section("experiment"):
        sec = cp["experiment"]
        if "strategies" in sec:
            cfg["strategies"] = sec["strategies"].split()
        for key in ("train_years", "test_years", "roll_step_years", "start_year", "seed"):
            if key in sec:
                cfg[key] = sec.getint(key)
    if cp.has_section("backtest"):
        sec = cp["backtest"]
        for key, get in (("tc_rate", sec.getfloat), ("periods_per_year", sec.getint),
                         ("initial_wealth", sec.getfloat),
                         ("charge_initial_acquisition", sec.getboolean)):
            if key in sec:
                cfg[key] = get(key)
    if cp.has_section("data"):
        sec = cp["data"]
        for key in ("returns", "characteristics", "membership"):
            if key in sec:
                cfg[key] = sec[key]
    return cfg


def _cmd_experiment(args, client) -> int:
    cfg = _experiment_config(args.config) if args.config else {}

    def pick(flag, key, fallback):
        return flag if flag is not None else cfg.get(key, fallback)

    panel = pick(args.panel, "returns", None)
    if not panel:
        print("error: no returns panel (use --panel or [data] returns in the config)",
              file=sys.stderr)
        return _USAGE
    strategies = args.strategy or cfg.get("strategies") or []
    if not strategies:
        print("error: no strategies (use --strategy or [experiment] strategies)",
              file=sys.stderr)
        return _USAGE
    payload = {
        "returns_csv": _read(panel),
        "characteristics_csv": _read_optional(pick(args.chars, "characteristics", None)),
        "membership_csv": _read_optional(pick(args.membership, "membership", None)),
        "strategies": strategies,
        "train_years": pick(args.train_years, "train_years", 10),
        "test_years": pick(args.test_years, "test_years", 5),
        "roll_step_years": pick(args.step_years, "roll_step_years", 1),
        "start_year": pick(args.start_year, "start_year", None),
        "seed": pick(args.seed, "seed", 0),
        "settings": {
            "tc_rate": pick(args.tc_rate, "tc_rate", 0.001),
            "periods_per_year": pick(args.periods_per_year, "periods_per_year", 252),
            "initial_wealth": pick(args.initial_wealth, "initial_wealth", 1.0),
            "charge_initial_acquisition":
                args.charge_initial_acquisition
                or bool(cfg.get("charge_initial_acquisition", False)),
        },
    }
    body = _post(client, "/experiment", payload)
    if args.out:
        _write(args.out, body["experiment_json"] + "\n")
    if args.summary_out:
        _write(args.summary_out, body["summary_csv"])
    print(f"folds: {body['n_folds']}", file=sys.stderr)
    sys.stdout.write(body["summary_csv"])
    return _SUCCESS


def _cmd_report(args, client) -> int:
    payload = {"kind": args.kind, "bins": args.bins}
    if args.experiment:
        payload["experiment_json"] = _read(args.experiment)
    if args.chain:
        payload["chain_csv"] = _read(args.chain)
    if args.artifact:
        payload["artifact_json"] = _read(args.artifact)
    if args.lo is not None:
        payload["lo"] = args.lo
    if args.hi is not None:
        payload["hi"] = args.hi
    body = _post(client, "/report", payload)
    if args.out:
        _write(args.out, body["csv"])
    else:
        sys.stdout.write(body["csv"])
    return _SUCCESS


# --------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sptlab",
        description="Simulate equity markets, backtest weight-driven portfolios, "
                    "and learn strategy parameters.")
    parser.add_argument("--server", default=os.environ.get("SPTLAB_SERVER"),
                        help="URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a market and dump its path/panel")
    p.add_argument("--n", type=int, default=10, help="number of assets")
    p.add_argument("--years", type=float, default=1.0)
    p.add_argument("--dt", type=_parse_dt, default=1.0 / 252.0,
                   help="time step in years, e.g. 1/252")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drift", type=float, default=0.05)
    p.add_argument("--vol", type=float, default=0.2)
    p.add_argument("--x0", type=_parse_floats, metavar="C1,C2,...",
                   help="initial capitalizations (default geometric spread)")
    p.add_argument("--cap-spread", type=float, default=1.5)
    p.add_argument("--premium", type=float,
                   help="plant a daily return bonus on the smallest-cap asset")
    p.add_argument("--start-year", type=int, default=2000)
    p.add_argument("--out", help="capitalization path CSV (default: stdout)")
    p.add_argument("--panel-out", help="returns panel CSV")
    p.add_argument("--chars-out", help="characteristic reports CSV")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("backtest", help="run one strategy through the backtester")
    _add_panel_args(p)
    _add_settings_args(p)
    p.add_argument("--strategy", default="ewp",
                   help="ewp | market | dwp:p=<x> | map (default ewp)")
    p.add_argument("--artifact", help="investment-map posterior JSON for map strategies")
    p.add_argument("--out", help="wealth series CSV")
    p.add_argument("--summary-out", help="summary JSON")
    p.set_defaults(handler=_cmd_backtest)

    learn = sub.add_parser("learn", help="fit strategy parameters")
    learners = learn.add_subparsers(dest="learner", required=True)

    p = learners.add_parser("dwp-grid", help="exhaustive exponent search")
    _add_panel_args(p)
    _add_settings_args(p)
    p.add_argument("--lo", type=float, default=-8.0)
    p.add_argument("--hi", type=float, default=8.0)
    p.add_argument("--mesh", type=float, default=0.05)
    p.add_argument("--values-out", help="per-exponent performance CSV")
    p.add_argument("--out", help="summary JSON")
    p.set_defaults(handler=_cmd_dwp_grid)

    p = learners.add_parser("dwp-mh", help="exponent posterior sampling")
    _add_panel_args(p)
    _add_settings_args(p)
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--burn-in", type=int, default=5_000)
    p.add_argument("--proposal-std", type=float, default=0.5)
    p.add_argument("--lo", type=float, default=-8.0)
    p.add_argument("--hi", type=float, default=8.0)
    p.add_argument("--initial-p", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--a", type=float, default=7.0, help="performance likelihood mean")
    p.add_argument("--b", type=float, default=0.5,
                   help="performance likelihood standard deviation")
    p.add_argument("--no-auto-start", action="store_true",
                   help="fail instead of scanning for a feasible starting exponent")
    p.add_argument("--chain-out", help="chain CSV (iter,p,log_lik,accepted)")
    p.add_argument("--out", help="summary JSON")
    p.set_defaults(handler=_cmd_dwp_mh)

    p = learners.add_parser("gp", help="investment-map posterior sampling")
    _add_panel_args(p)
    _add_settings_args(p)
    p.add_argument("--channels", default="log:mu",
                   help="'+'-separated characteristic specs, e.g. log:mu+log:cap")
    p.add_argument("--grid-sizes", help="map grid, e.g. 64 or 32x32")
    p.add_argument("--iterations", type=int, default=2_000)
    p.add_argument("--burn-in", type=int, default=1_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--a", type=float, default=7.0)
    p.add_argument("--b", type=float, default=0.5)
    p.add_argument("--artifact-out", help="posterior artifact JSON")
    p.add_argument("--map-out", help="per-cell map CSV with +-2 sd band")
    p.add_argument("--out", help="summary JSON")
    p.set_defaults(handler=_cmd_gp)

    p = sub.add_parser("verify-master",
                       help="decompose log relative wealth along a stored path")
    p.add_argument("--path", required=True, help="capitalization path CSV")
    p.add_argument("--generator", default="entropy",
                   help="entropy | power_mean:p=<x> | constant[:c=<x>]")
    p.add_argument("--vol", type=float, help="diagonal volatility (sigma = vol * I)")
    p.add_argument("--sigma", help="CSV file with an explicit volatility matrix")
    p.add_argument("--covariance", choices=("model", "realized"), default="model",
                   help="drift source: model volatility or the realized "
                        "quadratic covariation of the weights (needs no sigma)")
    p.add_argument("--coarsen", type=_parse_ints, default=[1], metavar="F1,F2,...",
                   help="subsampling factors, one decomposition row each")
    p.add_argument("--out", help="decomposition CSV (default: stdout)")
    p.set_defaults(handler=_cmd_verify_master)

    p = sub.add_parser("experiment", help="rolling train/test comparison")
    p.add_argument("--config", help="INI file with [experiment]/[backtest]/[data]")
    p.add_argument("--panel", metavar="CSV")
    p.add_argument("--chars", metavar="CSV")
    p.add_argument("--membership", metavar="CSV")
    p.add_argument("--strategy", action="append",
                   help="strategy spec; repeat for several")
    p.add_argument("--train-years", type=int)
    p.add_argument("--test-years", type=int)
    p.add_argument("--step-years", type=int)
    p.add_argument("--start-year", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tc-rate", type=float)
    p.add_argument("--periods-per-year", type=int)
    p.add_argument("--initial-wealth", type=float)
    p.add_argument("--charge-initial-acquisition", action="store_true")
    p.add_argument("--out", help="full experiment JSON")
    p.add_argument("--summary-out", help="headline table CSV")
    p.set_defaults(handler=_cmd_experiment)

    p = sub.add_parser("report", help="tables and plot data from stored artifacts")
    p.add_argument("--kind", required=True,
                   choices=["summary", "folds", "histogram", "map-band"])
    p.add_argument("--experiment", help="experiment JSON (summary/folds)")
    p.add_argument("--chain", help="chain CSV (histogram)")
    p.add_argument("--artifact", help="posterior artifact JSON (map-band)")
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--lo", type=float, help="histogram lower bound")
    p.add_argument("--hi", type=float, help="histogram upper bound")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(handler=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return _SUCCESS if exc.code in (0, None) else _USAGE
    try:
        with _make_client(args.server) as client:
            return args.handler(args, client)
    except _ClientFailure as err:
        print(f"error ({err.name}): {err.detail}", file=sys.stderr)
        return err.exit_code
    except httpx.HTTPError as err:
        print(f"error: service request failed: {err}", file=sys.stderr)
        return _DATA
    except KeyboardInterrupt:
        return _USAGE


if __name__ == "__main__":
    sys.exit(main())
