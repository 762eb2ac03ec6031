"""Command-line front end.

Configuration is flat ``section.key = value`` text; ``#`` starts a comment.
Sections and keys (defaults in brackets)::

    model.spot, model.rate, model.sigma, model.intensity_q [0],
    model.law [unit:0], model.transform [exp_minus_one],
    model.physical_drift, model.physical_intensity        (recorded, not priced)
    contract.kind [call], contract.strike, contract.maturity,
    contract.valuation_time [0], contract.payout [1], contract.barrier
    numerics.grid [auto | x_min:x_max], numerics.n_points [4096],
    numerics.tail_tolerance [1e-12], numerics.max_terms [200], numerics.strict [true]
    density.process [log_price | levy], density.gamma [0], density.x [0]
    mc.n_paths [100000], mc.n_steps [512], mc.seed [0], mc.bridge [true], mc.workers [1]

Exit codes: 0 ok, 2 validation, 3 numerical consistency, 4 I/O.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NumericalConsistencyError, ValidationError
from .grid_fourier import Grid1D, check_edges
from .jump_laws import format_law, parse_law
from .mc_oracle import McConfig, mc_price
from .pricing import (
    LevyModel,
    OptionContract,
    martingale_ratio,
    price,
    price_down_and_in_call,
    price_european_series,
    series_capable,
)
from .transition_density import (
    JumpDiffusionParams,
    SeriesTruncation,
    default_density_grid,
    jump_diffusion_density,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "model.intensity_q": "0",
    "model.law": "unit:0",
    "model.transform": "exp_minus_one",
    "contract.kind": "call",
    "contract.valuation_time": "0",
    "contract.payout": "1",
    "numerics.grid": "auto",
    "numerics.n_points": "4096",
    "numerics.tail_tolerance": "1e-12",
    "numerics.max_terms": "200",
    "numerics.strict": "true",
    "density.process": "log_price",
    "density.gamma": "0",
    "density.x": "0",
    "mc.n_paths": "100000",
    "mc.n_steps": "512",
    "mc.seed": "0",
    "mc.bridge": "true",
    "mc.workers": "1",
}
REQUIRED = ("model.spot", "model.rate", "model.sigma")
OPTIONAL = ("model.physical_drift", "model.physical_intensity", "contract.strike", "contract.maturity",
            "contract.barrier")
KNOWN = set(DEFAULTS) | set(REQUIRED) | set(OPTIONAL)

ROUTE_TOL = 1e-5
MARTINGALE_TOL = 1e-6
MASS_TOL = 1e-8


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'section.key = value'", f"line {lineno}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN:
            raise ValidationError(f"unknown configuration key {key!r}", key)
        if key in values:
            raise ValidationError(f"duplicate configuration key {key!r}", key)
        values[key] = value
    for key in REQUIRED:
        if key not in values:
            raise ValidationError(f"missing required key {key!r}", key)
    return {**DEFAULTS, **values}


def _float(cfg, key, positive=False):
    try:
        value = float(cfg[key])
    except (KeyError, ValueError):
        raise ValidationError(f"{key} must be a number, got {cfg.get(key)!r}", key) from None
    if not math.isfinite(value) or (positive and not value > 0):
        raise ValidationError(f"{key} must be {'positive' if positive else 'finite'}, got {cfg[key]!r}", key)
    return value


def _int(cfg, key):
    try:
        return int(cfg[key])
    except (KeyError, ValueError):
        raise ValidationError(f"{key} must be an integer, got {cfg.get(key)!r}", key) from None


def _bool(cfg, key):
    value = cfg[key].lower()
    if value in ("true", "yes", "1", "on"):
        return True
    if value in ("false", "no", "0", "off"):
        return False
    raise ValidationError(f"{key} must be true or false, got {cfg[key]!r}", key)


@dataclass(frozen=True)
class Numerics:
    grid: Optional[tuple]
    n_points: int
    trunc: SeriesTruncation
    strict: bool


@dataclass(frozen=True)
class RunConfig:
    values: dict
    model: LevyModel
    contract: Optional[OptionContract]
    numerics: Numerics
    mc: McConfig

    def settings(self):
        return [f"{k}={self.values[k]}" for k in sorted(self.values)]


def _with_key(exc: ValidationError, key: str) -> ValidationError:
    return exc if exc.key else ValidationError(str(exc), key)


def build_config(values: dict) -> RunConfig:
    """Validate every section before any computation; the first violation names its key."""
    try:
        law = parse_law(values["model.law"])
    except ValidationError as exc:
        raise ValidationError(str(exc), "model.law") from None
    optional = {k: _float(values, k) for k in ("model.physical_drift", "model.physical_intensity") if k in values}
    try:
        model = LevyModel(
            spot=_float(values, "model.spot"),
            rate=_float(values, "model.rate"),
            sigma=_float(values, "model.sigma"),
            intensity_q=_float(values, "model.intensity_q"),
            law_q=law,
            transform=values["model.transform"],
            physical_drift=optional.get("model.physical_drift"),
            physical_intensity=optional.get("model.physical_intensity"),
        )
    except ValidationError as exc:
        raise _with_key(exc, "model") from None

    contract = None
    if "contract.strike" in values or "contract.maturity" in values:
        kind = values["contract.kind"]
        try:
            contract = OptionContract(
                kind=kind,
                strike=_float(values, "contract.strike"),
                maturity=_float(values, "contract.maturity"),
                valuation_time=_float(values, "contract.valuation_time"),
                payout=_float(values, "contract.payout"),
                barrier=_float(values, "contract.barrier") if "contract.barrier" in values else None,
            )
        except ValidationError as exc:
            raise _with_key(exc, "contract") from None

    grid = None
    if values["numerics.grid"] != "auto":
        try:
            lo, hi = (float(v) for v in values["numerics.grid"].split(":"))
        except ValueError:
            raise ValidationError("numerics.grid must be 'auto' or 'x_min:x_max'", "numerics.grid") from None
        grid = (lo, hi)
    try:
        numerics = Numerics(
            grid,
            _int(values, "numerics.n_points"),
            SeriesTruncation(_float(values, "numerics.tail_tolerance"), _int(values, "numerics.max_terms")),
            _bool(values, "numerics.strict"),
        )
        if grid is not None:
            Grid1D(grid[0], grid[1], numerics.n_points)
        else:
            Grid1D(0.0, 1.0, numerics.n_points)
    except ValidationError as exc:
        raise _with_key(exc, "numerics") from None

    if values["density.process"] not in ("log_price", "levy"):
        raise ValidationError("density.process must be log_price or levy", "density.process")
    for key in ("density.gamma", "density.x"):
        _float(values, key)

    mc = McConfig(
        n_paths=_int(values, "mc.n_paths"),
        n_steps=_int(values, "mc.n_steps"),
        seed=_int(values, "mc.seed"),
        bridge_correction=_bool(values, "mc.bridge"),
        workers=_int(values, "mc.workers"),
    )
    return RunConfig(values, model, contract, numerics, mc)


def load_config(path, overrides=None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IOError(f"cannot read config {path}: {exc.strerror}") from None
    values = parse_config_text(text)
    values.update(overrides or {})
    return build_config(values)


def _fmt(x) -> str:
    """Shortest text that parses back to the same double."""
    return repr(float(x))


def _grid_for(rc: RunConfig, t: float, T: float) -> Optional[Grid1D]:
    if rc.numerics.grid is None:
        if rc.numerics.n_points == 4096:
            return None
        return rc.model.default_grid(t, T, rc.numerics.n_points)
    return Grid1D(*rc.numerics.grid, rc.numerics.n_points)


# --- checks -------------------------------------------------------------------

def run_checks(rc: RunConfig, route_price: Optional[float] = None):
    """Invariant checks on the run's path; returns ``[(name, passed, detail)]``."""
    model, contract, trunc = rc.model, rc.contract, rc.numerics.trunc
    t, T = (contract.valuation_time, contract.maturity) if contract else (0.0, 1.0)
    grid = _grid_for(rc, t, T)
    results = []
    dgrid = grid or model.default_grid(t, T)
    dens = jump_diffusion_density(model.log_price_params(t, T), 0.0, T - t, dgrid, trunc, x=math.log(model.spot))
    mass = dens.total_mass()
    results.append(("normalization", abs(mass - 1) <= MASS_TOL, f"mass={_fmt(mass)}"))
    ratio = martingale_ratio(model, t, T, grid, trunc)
    results.append(("martingale", abs(ratio - 1) <= MARTINGALE_TOL, f"ratio={_fmt(ratio)}"))
    if contract is None:
        return results
    if contract.kind == "down_and_out_call":
        out = price(model, contract, "series", trunc=trunc).price
        din = price_down_and_in_call(model, contract, trunc)
        vanilla = price_european_series(model, replace(contract, kind="call"), trunc)
        gap = abs(out + din - vanilla)
        results.append(("in_out_parity", gap <= 1e-12 * max(1.0, vanilla), f"gap={_fmt(gap)}"))
        results.append(("barrier_bound", out <= vanilla + 1e-12, f"out={_fmt(out)} vanilla={_fmt(vanilla)}"))
        return results
    if series_capable(model):
        s = price(model, contract, "series", trunc=trunc).price
        q = price(model, contract, "quadrature", grid, trunc).price
        rel = abs(s - q) / max(abs(s), 1e-300)
        results.append(("route_agreement", rel <= ROUTE_TOL, f"series={_fmt(s)} quadrature={_fmt(q)} rel={_fmt(rel)}"))
    return results


def _report_checks(results, out) -> bool:
    ok = True
    for name, passed, detail in results:
        ok &= passed
        print(f"check.{name}={'pass' if passed else 'FAIL'} {detail}", file=out)
    return ok


# --- subcommands --------------------------------------------------------------

def _price_report(rc: RunConfig, route: str, check: bool, out) -> int:
    if rc.contract is None:
        raise ValidationError("price needs contract.strike and contract.maturity", "contract")
    c = rc.contract
    res = price(rc.model, c, route, _grid_for(rc, c.valuation_time, c.maturity), rc.numerics.trunc)
    print(f"price={res.price:.8g}", file=out)
    print(f"route={res.route}", file=out)
    print(f"n_terms={res.n_terms}", file=out)
    print(f"tail_mass={_fmt(res.tail_mass)}", file=out)
    print(f"knocked_out={'true' if res.knocked_out else 'false'}", file=out)
    for note in res.notes:
        print(f"note={note}", file=out)
    status = EXIT_OK
    if check and not _report_checks(run_checks(rc, res.price), out):
        status = EXIT_NUMERICAL
    for line in rc.settings():
        print(f"# {line}", file=out)
    return status


def cmd_price(args) -> int:
    if args.batch:
        return _price_batch(args)
    rc = load_config(args.config, _overrides(args))
    return _price_report(rc, args.route, args.check, sys.stdout)


def _price_one(path: Path, args):
    buf = io.StringIO()
    try:
        status = _price_report(load_config(path, _overrides(args)), args.route, args.check, buf)
    except Exception as exc:  # one bad file must not stop the batch
        status = _exit_code(exc)
        print(_error_line(exc), file=buf)
    return path, status, buf.getvalue()


def _price_batch(args) -> int:
    folder = Path(args.batch)
    if not folder.is_dir():
        raise IOError(f"batch directory {folder} does not exist")
    files = sorted(p for p in folder.iterdir() if p.suffix in (".cfg", ".ini", ".conf"))
    with ThreadPoolExecutor() as pool:
        results = list(pool.map(lambda p: _price_one(p, args), files))
    outdir = Path(args.out) if args.out else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)
    worst = EXIT_OK
    for path, status, text in results:
        if outdir:
            (outdir / f"{path.stem}.txt").write_text(text)
        else:
            sys.stdout.write(f"[{path.name}]\n{text}")
        worst = max(worst, status)
    return worst


def density_table(rc: RunConfig, s: float, t: float):
    """``(grid, density)`` for the configured process over ``[s, t]``."""
    model, trunc = rc.model, rc.numerics.trunc
    if not t > s:
        raise ValidationError(f"need t > s, got s={s}, t={t}", "density.t")
    if rc.values["density.process"] == "log_price":
        params = model.log_price_params(s, t)
        x = math.log(model.spot)
        grid = _grid_for(rc, s, t) or model.default_grid(s, t)
    else:
        params = JumpDiffusionParams(float(rc.values["density.gamma"]), model.sigma if not callable(model.sigma)
                                     else math.sqrt(model.integrated_variance(s, t) / (t - s)),
                                     model.intensity_q, model.law_q)
        x = float(rc.values["density.x"])
        if rc.numerics.grid is None:
            grid = default_density_grid(params, t - s, x, rc.numerics.n_points, trunc)
        else:
            grid = Grid1D(*rc.numerics.grid, rc.numerics.n_points)
    dens = jump_diffusion_density(params, 0.0, t - s, grid, trunc, x=x)
    return grid, dens


def cmd_density(args) -> int:
    rc = load_config(args.config, _overrides(args))
    t = args.t if args.t is not None else (rc.contract.maturity if rc.contract else 1.0)
    grid, dens = density_table(rc, args.s, t)
    check_edges(dens.continuous, rc.numerics.strict, "density")
    atoms = dens.atom_column()
    lines = ["y,density,atom_mass"]
    lines += [f"{_fmt(y)},{_fmt(f)},{_fmt(a)}" for y, f, a in zip(grid.nodes, dens.values, atoms)]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    rc = load_config(args.config, _overrides(args))
    if rc.contract is None:
        raise ValidationError("simulate needs contract.strike and contract.maturity", "contract")
    res = mc_price(rc.model, rc.contract, rc.mc)
    row = f"{_fmt(res.estimate)},{_fmt(res.std_error)},{res.n_paths},{res.seed}"
    _emit(f"estimate,std_error,n_paths,seed\n{row}\n", args.out)
    return EXIT_OK


def cmd_check(args) -> int:
    rc = load_config(args.config, _overrides(args))
    ok = _report_checks(run_checks(rc), sys.stdout)
    return EXIT_OK if ok else EXIT_NUMERICAL


def _emit(text: str, path: Optional[str]):
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc.strerror}") from None


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["mc.seed"] = str(args.seed)
    if getattr(args, "strict", None) is not None:
        out["numerics.strict"] = "true" if args.strict else "false"
    return out


def _error_line(exc: BaseException) -> str:
    key = getattr(exc, "key", None)
    return f"error [{key}]: {exc}" if key else f"error: {exc}"


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, NumericalConsistencyError):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    raise exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kfprice", description="Jump-diffusion densities and option prices")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="flat 'section.key = value' config file")
        strict = p.add_mutually_exclusive_group()
        strict.add_argument("--strict", dest="strict", action="store_true", default=None,
                            help="wrap-around warnings are errors (default)")
        strict.add_argument("--relaxed", dest="strict", action="store_false", help="wrap-around only warns")
        p.add_argument("--seed", type=int, default=None, help="override mc.seed")
        p.add_argument("--out", default=None, help="output path (stdout if omitted)")

    p = sub.add_parser("price", help="price the configured contract")
    common(p, config_required=False)
    p.add_argument("--route", choices=("auto", "series", "quadrature"), default="auto")
    p.add_argument("--check", action="store_true", help="also run route-agreement and martingale checks")
    p.add_argument("--batch", default=None, help="price every .cfg/.ini file in a directory")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("density", help="tabulate the transition density as CSV")
    common(p)
    p.add_argument("--s", type=float, default=0.0, help="start time")
    p.add_argument("--t", type=float, default=None, help="end time (default contract.maturity or 1)")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("simulate", help="Monte Carlo estimate as a CSV row")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="run the invariant checks for a config")
    common(p)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "price" and not (args.config or args.batch):
        parser.error("price needs --config or --batch")
    try:
        return args.func(args)
    except (ValidationError, NumericalConsistencyError, OSError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
