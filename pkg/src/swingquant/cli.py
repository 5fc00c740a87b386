"""Command-line front end.

Orchestrates the pipeline (simulate, fit grids, estimate transitions,
price) from a JSON configuration, with content-addressed caching of the
built tree artifacts so repeated pricing and surface runs skip the
expensive estimation stages.  All outputs are deterministic given the
configuration and seeds, except the wall-clock ``timings`` field of the
price report.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import __version__
from .contracts import (
    ConstraintViolationError,
    GlobalConstraints,
    InfeasibleContractError,
    integer_vertices,
    interpolate_on_tile,
)
from .model import (
    TwoFactorParams,
    closed_form_strip,
    params_from_dict,
    simulate_factor_paths,
    spot_and_payoff,
)
from .tree import (
    QuantTree,
    build_tree,
    extract_and_value_policy,
    load_tree,
    premium_surface,
    quantized_dp_price,
    save_tree,
)

log = logging.getLogger(__name__)

CONFIG_ENV_VAR = "SWINGQUANT_CONFIG"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

PRICE_REPORT_SCHEMA = {
    "type": "object",
    "required": ["price", "mc_policy_value", "std_err", "N_bar", "seeds",
                 "timings", "Q_min", "Q_max"],
    "properties": {
        "price": {"type": "number"},
        "mc_policy_value": {"type": ["number", "null"]},
        "std_err": {"type": ["number", "null"]},
        "N_bar": {"type": "integer"},
        "Q_min": {"type": "number"},
        "Q_max": {"type": "number"},
        "seeds": {
            "type": "object",
            "required": ["pipeline", "policy"],
            "properties": {"pipeline": {"type": "integer"},
                           "policy": {"type": "integer"}},
        },
        "timings": {"type": "object"},
        "interpolated": {"type": "boolean"},
    },
}


class ConfigError(ValueError):
    """Configuration file missing, malformed or out of documented ranges."""


@dataclass
class RunConfig:
    params: TwoFactorParams
    q_lo: float
    q_hi: float
    n_bar: int
    n_samples: int
    seed: int
    policy_paths: int
    policy_seed: int
    optimizer: str
    out_dir: Path
    formats: tuple[str, ...]


def load_config(path, seed_override=None, out_override=None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, OSError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if "model" not in doc:
        raise ConfigError("config missing the 'model' section")
    try:
        params = params_from_dict(doc["model"], base_dir=path.parent)
    except (KeyError, ValueError, TypeError, FileNotFoundError) as exc:
        raise ConfigError(f"bad model section: {exc}") from exc

    pricing = doc.get("pricing", {})
    output = doc.get("output", {})
    try:
        n_bar = int(pricing.get("N_bar", 100))
        n_samples = int(pricing.get("n_samples", 200_000))
        seed = int(pricing.get("seed", 0)) if seed_override is None else int(seed_override)
        policy_paths = int(pricing.get("policy_paths", 10_000))
        policy_seed = int(pricing.get("policy_seed", seed + 1))
        q_lo = float(pricing.get("Q_min", 0.0))
        q_hi = float(pricing.get("Q_max", params.n))
        optimizer = str(pricing.get("optimizer", "clvq-lloyd"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad pricing section: {exc}") from exc
    if n_bar < 1:
        raise ConfigError("N_bar must be >= 1")
    if n_samples < 10 * n_bar:
        raise ConfigError("n_samples must be at least 10 * N_bar")
    if policy_paths < 2:
        raise ConfigError("policy_paths must be >= 2")
    if optimizer not in ("lloyd", "clvq", "clvq-lloyd"):
        raise ConfigError(f"unknown optimizer {optimizer!r}")

    out_dir = Path(out_override) if out_override else Path(
        output.get("directory", "swingquant-out")
    )
    if not out_dir.is_absolute():
        out_dir = (path.parent / out_dir).resolve()
    formats = tuple(output.get("formats", ("json", "csv")))
    return RunConfig(
        params=params, q_lo=q_lo, q_hi=q_hi, n_bar=n_bar, n_samples=n_samples,
        seed=seed, policy_paths=policy_paths, policy_seed=policy_seed,
        optimizer=optimizer, out_dir=out_dir, formats=formats,
    )


@contextmanager
def output_lock(out_dir: Path):
    """Single-writer guard: refuses to run against a locked directory."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"output directory {out_dir} is locked by another run "
            f"(remove {lock} if that run crashed)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _params_dict(params: TwoFactorParams) -> dict:
    return {
        "alpha1": params.alpha1, "alpha2": params.alpha2,
        "sigma1": params.sigma1, "sigma2": params.sigma2,
        "rho": params.rho, "r": params.r, "T": params.T, "n": params.n,
        "forward": [float(v) for v in params.forward],
        "strike": [float(v) for v in params.strikes],
    }


def tree_cache_key(cfg: RunConfig, n_bar: int | None = None) -> str:
    payload = {
        "model": _params_dict(cfg.params),
        "N_bar": n_bar if n_bar is not None else cfg.n_bar,
        "n_samples": cfg.n_samples,
        "seed": cfg.seed,
        "optimizer": cfg.optimizer,
        "scheme": 1,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def ensure_tree(cfg: RunConfig, n_bar: int | None = None) -> tuple[QuantTree, dict, dict]:
    """Build or reload the tree for the configuration.

    Returns ``(tree, manifest, timings)``; ``timings`` is empty on a cache
    hit.  Artifacts are content-addressed under ``<out>/cache/<key>``.
    """
    n_bar = n_bar if n_bar is not None else cfg.n_bar
    key = tree_cache_key(cfg, n_bar)
    cache_dir = cfg.out_dir / "cache" / key
    if (cache_dir / "manifest.json").exists():
        tree, manifest = load_tree(cache_dir)
        log.info("cache hit: %s", cache_dir)
        return tree, manifest, {}
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    tree = build_tree(
        cfg.params, n_bar, cfg.n_samples, cfg.seed, cfg.optimizer
    )
    timings["build_tree_seconds"] = time.perf_counter() - t0
    manifest_extra = {
        "N_bar": n_bar,
        "n_samples": cfg.n_samples,
        "seed": cfg.seed,
        "optimizer": cfg.optimizer,
        "cache_key": key,
        "package_version": __version__,
    }
    t0 = time.perf_counter()
    save_tree(tree, cache_dir, manifest_extra)
    timings["persist_seconds"] = time.perf_counter() - t0
    _, manifest = load_tree(cache_dir)
    return tree, manifest, timings


def _constraints(cfg: RunConfig, q_lo, q_hi) -> GlobalConstraints:
    lo = cfg.q_lo if q_lo is None else float(q_lo)
    hi = cfg.q_hi if q_hi is None else float(q_hi)
    n = cfg.params.n
    hi = min(hi, float(n))  # a cap beyond the horizon can never bind
    if lo > n:
        raise InfeasibleContractError(
            f"global floor {lo} cannot be met in {n} dates"
        )
    return GlobalConstraints(lo, hi)


def run_price(cfg: RunConfig, q_lo=None, q_hi=None, with_policy=True) -> dict:
    q = _constraints(cfg, q_lo, q_hi)
    tree, _, timings = ensure_tree(cfg)
    report = {
        "Q_min": q.q_lo,
        "Q_max": q.q_hi,
        "N_bar": cfg.n_bar,
        "seeds": {"pipeline": cfg.seed, "policy": cfg.policy_seed},
        "interpolated": not q.is_integer,
        "mc_policy_value": None,
        "std_err": None,
    }
    t0 = time.perf_counter()
    if q.is_integer:
        price, table = quantized_dp_price(tree, q)
        timings["dp_seconds"] = time.perf_counter() - t0
        if with_policy:
            t0 = time.perf_counter()
            _, mc_value, std_err = extract_and_value_policy(
                tree, table, q, cfg.policy_paths, cfg.policy_seed
            )
            timings["policy_seconds"] = time.perf_counter() - t0
            report["mc_policy_value"] = mc_value
            report["std_err"] = std_err
    else:
        surface = premium_surface(tree)
        price = interpolate_on_tile(surface, q)
        timings["surface_seconds"] = time.perf_counter() - t0
    if not math.isfinite(price):
        raise ArithmeticError(f"non-finite price {price}")
    report["price"] = price
    report["timings"] = timings
    return report


def run_surface(cfg: RunConfig) -> tuple[Path, Path]:
    tree, manifest, timings = ensure_tree(cfg)
    t0 = time.perf_counter()
    surface = premium_surface(tree)
    timings["surface_seconds"] = time.perf_counter() - t0
    if not all(math.isfinite(v) for v in surface.values.values()):
        raise ArithmeticError("non-finite surface value")
    csv_path = cfg.out_dir / "surface.csv"
    with csv_path.open("w") as fh:
        fh.write("Q_min,Q_max,price\n")
        for (i, j) in integer_vertices(tree.n):
            fh.write(f"{i},{j},{surface.values[(i, j)]!r}\n")
    meta = {
        "rows": len(surface.values),
        "n": tree.n,
        "cache_key": manifest.get("cache_key"),
        "N_bar": cfg.n_bar,
        "n_samples": cfg.n_samples,
        "seeds": {"pipeline": cfg.seed},
        "columns": ["Q_min", "Q_max", "price"],
    }
    meta_path = cfg.out_dir / "surface_meta.json"
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    log.info("surface timings: %s", timings)
    return csv_path, meta_path


def run_converge(cfg: RunConfig, n_bars: list[int]) -> tuple[Path, list[dict]]:
    """Error of the fully-flexible corner against the closed-form strip."""
    target = closed_form_strip(cfg.params)
    n = cfg.params.n
    rows = []
    for n_bar in n_bars:
        t0 = time.perf_counter()
        tree, _, _ = ensure_tree(cfg, n_bar=n_bar)
        price, _ = quantized_dp_price(tree, GlobalConstraints(0.0, float(n)))
        wall = time.perf_counter() - t0
        rows.append({
            "N_bar": n_bar,
            "price": price,
            "abs_error_vs_oracle": abs(price - target),
            "wall_seconds": wall,
        })
    slope = math.nan
    if len(rows) >= 2 and all(r["abs_error_vs_oracle"] > 0 for r in rows):
        xs = np.log([r["N_bar"] for r in rows])
        ys = np.log([r["abs_error_vs_oracle"] for r in rows])
        slope = float(np.polyfit(xs, ys, 1)[0])
    csv_path = cfg.out_dir / "converge.csv"
    with csv_path.open("w") as fh:
        fh.write("N_bar,price,abs_error_vs_oracle,wall_seconds\n")
        for r in rows:
            fh.write(f"{r['N_bar']},{r['price']!r},"
                     f"{r['abs_error_vs_oracle']!r},{r['wall_seconds']:.3f}\n")
        fh.write(f"# loglog_slope={slope!r}\n")
    return csv_path, rows


def run_simulate(cfg: RunConfig, n_paths: int) -> Path:
    paths = simulate_factor_paths(cfg.params, n_paths, cfg.seed)
    out = cfg.out_dir / "spots.csv"
    with out.open("w") as fh:
        header = ["date", "t", "forward", "strike"]
        header += [f"spot_{p:04d}" for p in range(n_paths)]
        fh.write(",".join(header) + "\n")
        for k in range(cfg.params.n):
            spot, _ = spot_and_payoff(cfg.params, k, paths[:, k, :])
            row = [str(k), repr(k * cfg.params.dt),
                   repr(float(cfg.params.forward[k])),
                   repr(float(cfg.params.strikes[k]))]
            row += [repr(float(s)) for s in spot]
            fh.write(",".join(row) + "\n")
    return out


def _set_threads(threads: int | None) -> None:
    if threads is None:
        return
    # Best effort: BLAS pools are sized at load time, so environment hints
    # only help subprocesses; threadpoolctl adjusts the live process when
    # available.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(threads)
    except ImportError:
        log.debug("threadpoolctl unavailable; thread cap applies to "
                  "subprocesses only")


def _dispatch(ctx: click.Context, fn) -> None:
    """Run a command body with the documented exit-code mapping."""
    try:
        cfg = load_config(
            ctx.obj["config"], ctx.obj["seed"], ctx.obj["out"]
        )
        with output_lock(cfg.out_dir):
            fn(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (InfeasibleContractError, ConstraintViolationError) as exc:
        click.echo(f"infeasible constraints: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    except (ArithmeticError, FloatingPointError, np.linalg.LinAlgError,
            ValueError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    sys.exit(EXIT_OK)


@click.group()
@click.option("--config", type=click.Path(), default=None,
              help=f"Config JSON (default: ${CONFIG_ENV_VAR}).")
@click.option("--seed", type=int, default=None,
              help="Override the pipeline seed from the config.")
@click.option("--out", type=click.Path(), default=None,
              help="Override the output directory from the config.")
@click.option("--threads", type=int, default=None,
              help="Best-effort cap on numeric library threads.")
@click.pass_context
def main(ctx, config, seed, out, threads):
    """Swing option pricing by quantized backward dynamic programming."""
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(threads)
    if config is None:
        config = os.environ.get(CONFIG_ENV_VAR) or None
    if config is None:
        click.echo("config error: no --config given and "
                   f"{CONFIG_ENV_VAR} is unset", err=True)
        sys.exit(EXIT_CONFIG)
    ctx.ensure_object(dict)
    ctx.obj.update(config=config, seed=seed, out=out)


@main.command()
@click.option("--qmin", type=float, default=None, help="Global floor.")
@click.option("--qmax", type=float, default=None, help="Global cap.")
@click.option("--no-policy", is_flag=True,
              help="Skip the Monte-Carlo policy valuation.")
@click.pass_context
def price(ctx, qmin, qmax, no_policy):
    """Price one constraint pair; JSON report on stdout."""

    def body(cfg):
        report = run_price(cfg, qmin, qmax, with_policy=not no_policy)
        click.echo(json.dumps(report, sort_keys=True))

    _dispatch(ctx, body)


@main.command()
@click.pass_context
def surface(ctx):
    """Premium at every integer constraint pair; CSV plus JSON sidecar."""

    def body(cfg):
        csv_path, meta_path = run_surface(cfg)
        click.echo(json.dumps({"surface": str(csv_path),
                               "metadata": str(meta_path)}, sort_keys=True))

    _dispatch(ctx, body)


@main.command()
@click.option("--nbar", "n_bars", type=int, multiple=True, required=True,
              help="Grid size to evaluate (repeatable).")
@click.pass_context
def converge(ctx, n_bars):
    """Error against the call-strip oracle for each grid size."""

    def body(cfg):
        csv_path, rows = run_converge(cfg, list(n_bars))
        click.echo(json.dumps({"converge": str(csv_path),
                               "rows": len(rows)}, sort_keys=True))

    _dispatch(ctx, body)


@main.command()
@click.pass_context
def grids(ctx):
    """Build (or reuse) the per-date codebooks; prints their location."""

    def body(cfg):
        _, manifest, timings = ensure_tree(cfg)
        cache_dir = cfg.out_dir / "cache" / manifest["cache_key"]
        click.echo(json.dumps({
            "cache_dir": str(cache_dir),
            "grid_files": sorted(p.name for p in cache_dir.glob("grid_*.csv")),
            "timings": timings,
        }, sort_keys=True))

    _dispatch(ctx, body)


@main.command()
@click.pass_context
def transitions(ctx):
    """Build (or reuse) the transition matrices; prints their location."""

    def body(cfg):
        _, manifest, timings = ensure_tree(cfg)
        cache_dir = cfg.out_dir / "cache" / manifest["cache_key"]
        click.echo(json.dumps({
            "cache_dir": str(cache_dir),
            "transition_files": sorted(
                p.name for p in cache_dir.glob("transition_*.csv")
            ),
            "timings": timings,
        }, sort_keys=True))

    _dispatch(ctx, body)


@main.command()
@click.option("--paths", "n_paths", type=int, default=100,
              help="Number of spot paths to write.")
@click.pass_context
def simulate(ctx, n_paths):
    """Write simulated spot paths as CSV."""

    def body(cfg):
        out = run_simulate(cfg, n_paths)
        click.echo(json.dumps({"spots": str(out)}, sort_keys=True))

    _dispatch(ctx, body)


if __name__ == "__main__":
    main()
