"""Command-line interface: ``supplyshare <fit|project|validate|compare|simulate|report>``.

Options can also come from a flat ``key = value`` config file (``--config``);
keys are the long option names with ``-`` or ``_``, ``#`` starts a comment,
and command-line flags override file values.

Exit codes: 0 success, 2 configuration error, 3 missing artifact, 4 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import pandas as pd

from . import __version__
from .basis import BasisConfig
from .data import ALL_METHODS, DEFAULT_WINDOW, Method, parse_dataset, split_train_test
from .diagnostics import convergence_report
from .errors import ConfigError, DataError, MissingArtifactError, SupplyShareError
from .posterior import write_outputs
from .sampler import DrawStore, SamplerConfig, atomic_write, make_layout, run_chains
from .simulation import DESK_METHODS, SimulationTruth, write_simulation
from .validation import report_frame, run_validation, write_reports
from .variants import MODEL_NAMES, get_model

log = logging.getLogger("supplyshare")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_DATA = 0, 2, 3, 4

DEFAULTS = {
    "model": "multivariate_intercept",
    "iterations": 80_000,
    "burn_in": 10_000,
    "thin": 35,
    "chains": 4,
    "seed": 0,
    "spacing": 5,
    "degree": 3,
    "window_start": DEFAULT_WINDOW[0],
    "window_end": DEFAULT_WINDOW[1],
    "cutoff": 2015,
    "draw_format": "npz",
    "jobs": 1,
    "methods": "observed",
}

INT_KEYS = {"iterations", "burn_in", "thin", "chains", "seed", "spacing", "degree", "window_start",
            "window_end", "cutoff", "jobs", "year", "countries", "regions_per_country"}
FLOAT_KEYS = {"se_logit"}


@dataclass
class RunConfig:
    model: str
    sampler: SamplerConfig
    basis: BasisConfig
    time_window: tuple
    cutoff: int
    methods: str
    data: str | None = None
    out: str | None = None
    draw_format: str = "npz"
    jobs: int = 1

    def to_json(self) -> dict:
        d = asdict(self)
        d["sampler"] = {k: (dict(v) if isinstance(v, dict) else v) for k, v in d["sampler"].items()}
        d["time_window"] = list(self.time_window)
        return d


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file into a dict of strings."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(key, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key} must be numeric, got {value!r}") from None
    return value


def merged_options(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        opts.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "handler"):
            opts[key] = value
    return {k: _coerce(k, v) for k, v in opts.items()}


def build_run_config(opts: dict) -> RunConfig:
    name = opts["model"]
    if name not in MODEL_NAMES:
        raise ConfigError(f"unknown model {name!r}; valid: {', '.join(MODEL_NAMES)}")
    if opts["draw_format"] not in ("npz", "csv"):
        raise ConfigError("draw-format must be npz or csv")
    if opts["jobs"] < 1:
        raise ConfigError("jobs must be at least 1")
    window = (opts["window_start"], opts["window_end"])
    if window[1] <= window[0]:
        raise ConfigError(f"invalid time window {window}")
    sampler = SamplerConfig(iterations=opts["iterations"], burn_in=opts["burn_in"], thin=opts["thin"],
                            chains=opts["chains"], seed=opts["seed"])
    if opts["degree"] < 1 or opts["spacing"] < 1:
        raise ConfigError("spacing and degree must be positive")
    return RunConfig(model=name, sampler=sampler, basis=BasisConfig(opts["degree"], opts["spacing"]),
                     time_window=window, cutoff=opts["cutoff"], methods=opts["methods"],
                     data=opts.get("data"), out=opts.get("out"), draw_format=opts["draw_format"],
                     jobs=opts["jobs"])


def _methods(spec: str, data_path):
    if spec == "all":
        return ALL_METHODS
    if spec == "observed":
        frame = pd.read_csv(data_path, dtype=str, keep_default_na=False, encoding="utf-8")
        if "method" not in frame.columns:
            return ALL_METHODS
        present = set()
        for token in frame["method"]:
            try:
                present.add(Method.parse(token))
            except DataError:
                pass
        return tuple(m for m in ALL_METHODS if m in present) or ALL_METHODS
    return tuple(Method.parse(t.strip()) for t in spec.split(",") if t.strip())


def load_data(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("--data is required")
    path = Path(cfg.data)
    if not path.exists():
        raise MissingArtifactError(f"data file not found: {path}")
    return parse_dataset(path, time_window=cfg.time_window, methods=_methods(cfg.methods, path))


def _require_out(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigError("--out is required")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=False)
    return atomic_write(path, lambda f: f.write(text + "\n"))


# -- subcommands ----------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = build_run_config(merged_options(args))
    ds = load_data(cfg)
    out = _require_out(cfg)
    spec = get_model(cfg.model)
    if args.dump_basis:
        layout = make_layout(spec, ds, cfg.basis)
        _dump_basis(layout, out / "basis.csv")
    log.info("fitting %s on %d observations", cfg.model, len(ds))
    store = run_chains(spec, ds, cfg.sampler, basis=cfg.basis, n_jobs=cfg.jobs)
    store.save(out, cfg.draw_format)
    report = convergence_report(store)
    _write_json(out / "convergence.json", report)
    _write_json(out / "run_config.json", cfg.to_json())
    flagged = sum(r["flagged"] for r in report)
    if flagged:
        log.warning("%d of %d parameters have R-hat above 1.01 or undefined", flagged, len(report))
    print(f"wrote {out}/draws.{cfg.draw_format} "
          f"({store.n_chains} chains x {store.n_draws} draws); {flagged} parameters flagged")
    return EXIT_OK


def _dump_basis(layout, path):
    rows = []
    for p, region in enumerate(layout.regions):
        k = layout.n_basis[p]
        for t, year in enumerate(layout.grid):
            for j in range(k):
                rows.append((region, int(year), j, layout.basis[p, t, j]))
    frame = pd.DataFrame(rows, columns=["region_id", "year", "basis", "value"])
    atomic_write(path, lambda f: frame.to_csv(f, index=False, float_format="%.15g"))


def cmd_project(args) -> int:
    run = Path(args.run)
    store = DrawStore.load(run)
    out = Path(args.out) if args.out else run
    if args.year is not None:
        grid = store.layout.grid
        if not grid[0] <= args.year <= grid[-1]:
            raise ConfigError(f"year {args.year} outside the projection horizon "
                              f"{int(grid[0])}-{int(grid[-1])}")
    written = write_outputs(store, out, args.year)
    for path in written.values():
        print(f"wrote {path}")
    return EXIT_OK


def _validate(args, names) -> int:
    cfg = build_run_config(merged_options(args))
    ds = load_data(cfg)
    out = _require_out(cfg)
    train, test = split_train_test(ds, cfg.cutoff)
    if len(test) == 0:
        raise DataError(f"empty test set: no observations at or after {cfg.cutoff}")
    reports = run_validation(names, ds, cfg.cutoff, cfg.sampler, cfg.basis, n_jobs=cfg.jobs)
    paths = write_reports(reports, out)
    print(report_frame(reports).to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    print(f"wrote {paths['json']} and {paths['csv']}")
    return EXIT_OK


def cmd_validate(args) -> int:
    name = merged_options(args)["model"]
    if name not in MODEL_NAMES:
        raise ConfigError(f"unknown model {name!r}; valid: {', '.join(MODEL_NAMES)}")
    return _validate(args, [name])


def cmd_compare(args) -> int:
    return _validate(args, list(MODEL_NAMES))


def cmd_simulate(args) -> int:
    opts = merged_options(args)
    out = opts.get("out")
    if not out:
        raise ConfigError("--out is required")
    if opts.get("model") not in MODEL_NAMES:
        raise ConfigError(f"unknown model {opts.get('model')!r}; valid: {', '.join(MODEL_NAMES)}")
    years = tuple(int(y) for y in str(opts.get("survey_years", "2000,2005,2010,2015")).split(","))
    kw = dict(n_countries=int(opts.get("countries", 3)),
              regions_per_country=int(opts.get("regions_per_country", 4)),
              survey_years=years, se_logit=float(opts.get("se_logit", 0.2)),
              time_window=(opts["window_start"], opts["window_end"]), model=opts["model"],
              basis=BasisConfig(opts["degree"], opts["spacing"]), seed=opts["seed"])
    if opts.get("methods") not in (None, "observed", "all"):
        kw["methods"] = tuple(Method.parse(t) for t in opts["methods"].split(","))
    # the desk hyperparameters are 2 x 2; other designs draw everything from the prior
    if opts["model"] != "multivariate_intercept" or len(kw.get("methods", DESK_METHODS)) != 2:
        kw["fixed"] = {}
    truth = SimulationTruth(**kw)
    paths = write_simulation(truth, out)
    print(f"wrote {paths['data']} and {paths['truth']}")
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run)
    if not run.exists():
        raise MissingArtifactError(f"run directory not found: {run}")
    lines = [f"run directory: {run}"]
    found = False
    conv = run / "convergence.json"
    if conv.exists():
        found = True
        records = json.loads(conv.read_text())
        rh = [r["r_hat"] for r in records if r["r_hat"] is not None]
        flagged = [r["parameter"] for r in records if r["flagged"]]
        lines.append(f"parameters: {len(records)}; max R-hat {max(rh):.4f}; "
                     f"min ESS {min(r['ess'] for r in records if r['ess'] is not None):.0f}")
        lines.append(f"flagged (R-hat > 1.01): {len(flagged)}"
                     + (f" e.g. {', '.join(flagged[:5])}" if flagged else ""))
    val = run / "validation_report.csv"
    if val.exists():
        found = True
        lines.append("")
        lines.append(pd.read_csv(val).to_string(index=False))
    ys = run / "year_summary.csv"
    if ys.exists():
        found = True
        lines.append("")
        lines.append(pd.read_csv(ys, comment="#").to_string(index=False))
    if not found:
        raise MissingArtifactError(f"no convergence, validation or projection outputs in {run}")
    text = "\n".join(lines) + "\n"
    atomic_write(run / "report.txt", lambda f: f.write(text))
    print(text, end="")
    return EXIT_OK


# -- parser ---------------------------------------------------------------

def _add_common(p, data=True, sampler=True):
    p.add_argument("--config", help="flat key = value config file; flags override it")
    if data:
        p.add_argument("--data", help="observation CSV")
        p.add_argument("--methods", help="'observed' (default), 'all' or a comma list of method tokens")
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", help=f"one of: {', '.join(MODEL_NAMES)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--spacing", type=int, help="knot spacing in years (default 5)")
    p.add_argument("--degree", type=int, help="spline degree (default 3)")
    p.add_argument("--window-start", type=int, dest="window_start")
    p.add_argument("--window-end", type=int, dest="window_end")
    if sampler:
        p.add_argument("--iterations", type=int)
        p.add_argument("--burn-in", type=int, dest="burn_in")
        p.add_argument("--thin", type=int)
        p.add_argument("--chains", type=int)
        p.add_argument("--jobs", type=int, help="worker processes for chains")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supplyshare", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="sample the posterior and write draws plus convergence.json")
    _add_common(p)
    p.add_argument("--draw-format", choices=("npz", "csv"), dest="draw_format")
    p.add_argument("--dump-basis", action="store_true", dest="dump_basis",
                   help="also write the B-spline basis matrix to basis.csv")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("project", help="summarise a fitted run into trajectory and table CSVs")
    p.add_argument("--run", required=True, help="directory written by fit")
    p.add_argument("--out", help="output directory (default: the run directory)")
    p.add_argument("--year", type=int, help="year for year_summary.csv")
    p.set_defaults(handler=cmd_project)

    for name, handler, text in (("validate", cmd_validate, "out-of-sample validation of one model"),
                                ("compare", cmd_compare, "out-of-sample validation of all five models")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        p.add_argument("--cutoff", type=int, help="first test year (default 2015)")
        p.set_defaults(handler=handler)

    p = sub.add_parser("simulate", help="write a synthetic dataset and truth.json")
    _add_common(p, data=False, sampler=False)
    p.add_argument("--countries", type=int)
    p.add_argument("--regions-per-country", type=int, dest="regions_per_country")
    p.add_argument("--survey-years", dest="survey_years", help="comma list, e.g. 2000,2005,2010,2015")
    p.add_argument("--se-logit", type=float, dest="se_logit")
    p.add_argument("--methods", help="comma list of method tokens (default sterilization,pill)")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("report", help="print a plain-text summary of a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if not args.verbose:
        warnings.filterwarnings("ignore", category=UserWarning, module=r"supplyshare\..*")
    handler = args.handler
    del args.handler
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SupplyShareError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
