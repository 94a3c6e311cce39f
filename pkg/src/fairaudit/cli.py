"""Command line front end: audit, diagnose, sensitivity, match, simulate.

Configuration lives in a single JSON file; `--seed`, `--out`, and `--jobs`
override the corresponding config entries.  Every output file starts with a
header recording the artifact version, the sha256 of the effective config,
and the seed, and all numbers are written with repr so a fixed seed gives
byte-identical files regardless of job count.

Exit codes: 0 success, 1 config error, 2 data error, 3 estimation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, matching, scenarios
from .data import (
    ColumnMap,
    CovariateSchema,
    ObservationalDataset,
    fit_normalization,
    load_dataset,
    load_saved_dataset,
    save_dataset,
)
from .diagnostics import KernelSpec, balance_report, render_report
from .estimators import (
    BatteryConfig,
    BatteryReport,
    _battery_distance_weights,
    _battery_trim,
    run_battery,
)
from .matching import TrimSpec, WeightedSample
from .models import (
    BoostedStumpsConfig,
    LogisticConfig,
    fit_outcome,
    fit_propensity,
)
from .sensitivity import austen_curve, render_curve

__all__ = ["main", "ConfigError", "DataError", "EstimationError"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_ESTIMATION = 3


class ConfigError(Exception):
    """Invalid or unreadable configuration."""


class DataError(Exception):
    """Missing or malformed input data."""


class EstimationError(Exception):
    """A model fit or estimator failed."""


# ---------------------------------------------------------------------------
# config plumbing


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            cfg = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _effective_config(args) -> dict:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if getattr(args, "jobs", None) is not None:
        cfg["jobs"] = args.jobs
    cfg.setdefault("seed", 0)
    cfg.setdefault("out", "fairaudit-out")
    cfg.setdefault("jobs", 1)
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    if not (isinstance(cfg["jobs"], int) and cfg["jobs"] >= 1):
        raise ConfigError("jobs must be a positive integer")
    return cfg


def _config_hash(cfg: dict) -> str:
    """Hash of the analytic configuration.

    The output directory and job count steer where and how fast results
    are produced, never what they contain, so they stay out of the hash
    and a fixed seed yields byte-identical files across both.
    """
    canonical = json.dumps(
        {k: v for k, v in cfg.items() if k not in ("out", "jobs")},
        sort_keys=True, separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _header(cfg: dict) -> str:
    return (
        f"# fairaudit {__version__}\n"
        f"# config sha256: {_config_hash(cfg)}\n"
        f"# seed: {cfg['seed']}\n"
    )


def _derive_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    return path


# ---------------------------------------------------------------------------
# dataset and model resolution


def _parse_schema(raw) -> CovariateSchema:
    try:
        return CovariateSchema.of(*[(str(n), str(k)) for n, k in raw])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad schema: {exc}") from None


def _resolve_dataset(cell: dict, seed: int) -> ObservationalDataset:
    if "preset" in cell:
        spec_cfg = cell["preset"]
        if not isinstance(spec_cfg, dict) or "name" not in spec_cfg:
            raise ConfigError("preset must be an object with a 'name'")
        kwargs = {k: v for k, v in spec_cfg.items() if k not in ("name", "n", "seed")}
        try:
            spec = scenarios.preset(
                spec_cfg["name"],
                int(spec_cfg.get("n", 1000)),
                seed=int(spec_cfg.get("seed", seed)),
                **kwargs,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad preset: {exc}") from None
        return scenarios.generate(spec)
    if "input" not in cell:
        raise ConfigError("each cell needs either 'input' or 'preset'")
    path = Path(cell["input"])
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    try:
        if "schema" in cell:
            schema = _parse_schema(cell["schema"])
            columns = cell.get("columns")
            column_map = ColumnMap(**columns) if columns else None
            return load_dataset(path, schema, column_map,
                                on_bad_row=cell.get("on_bad_row", "error"))
        return load_saved_dataset(path)
    except FileNotFoundError as exc:
        raise DataError(f"input file not found: {exc.filename}") from None
    except ValueError as exc:
        raise DataError(f"failed to load {path}: {exc}") from None


def _model_config(raw):
    if raw is None:
        return None
    if isinstance(raw, list):
        return [_model_config(item) for item in raw]
    if not isinstance(raw, dict):
        raise ConfigError("model config must be an object or a list of objects")
    family = raw.get("family", "logistic")
    params = {k: v for k, v in raw.items() if k != "family"}
    try:
        if family == "logistic":
            return LogisticConfig(**params)
        if family == "boosted-stumps":
            return BoostedStumpsConfig(**params)
    except TypeError as exc:
        raise ConfigError(f"bad {family} model config: {exc}") from None
    raise ConfigError(f"unknown model family {family!r}")


_ALL_ESTIMATORS = (
    "Unmatched", "Unmatched2",
    "MatchedEuc", "MatchedEuc2", "MatchedProp", "MatchedProp2",
    "InverseWeighting", "InverseWeighting2",
)


def _battery_config(cell: dict, seed: int) -> BatteryConfig:
    ci = cell.get("ci", {})
    level = float(ci.get("level", 0.95))
    if not (0.0 < level < 1.0):
        raise ConfigError("ci.level must be in (0, 1)")
    replicates = int(ci.get("bootstrap_replicates", 100))
    if replicates < 50:
        raise ConfigError("ci.bootstrap_replicates must be at least 50")
    trim_cfg = cell.get("trim")
    trim = None
    if isinstance(trim_cfg, dict):
        try:
            trim = {tag: TrimSpec(*map(float, pair)) for tag, pair in trim_cfg.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad trim table: {exc}") from None
        unknown = set(trim) - set(matching.MATCHED_VARIANTS)
        if unknown:
            raise ConfigError(f"trim names unknown estimators: {sorted(unknown)}")
    models = cell.get("models", {})
    kwargs = dict(
        covariates=tuple(cell["covariates"]) if "covariates" in cell else None,
        level=level,
        seed=seed,
        bootstrap_replicates=replicates,
        trim=trim,
        propensity_config=_model_config(models.get("propensity")),
        outcome_config=_model_config(models.get("outcome")),
        ci_method=dict(ci.get("method", {})),
    )
    if "outcome_kind" in cell:
        kwargs["outcome_kind"] = cell["outcome_kind"]
    if "period" in cell:
        kwargs["period"] = int(cell["period"])
    if "subsample_cap" in cell:
        kwargs["subsample_cap"] = int(cell["subsample_cap"])
    if "cross_fit_folds" in cell:
        kwargs["cross_fit_folds"] = int(cell["cross_fit_folds"])
    try:
        return BatteryConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad battery settings: {exc}") from None


def _cells(cfg: dict) -> list[dict]:
    base = {k: v for k, v in cfg.items() if k not in ("cells", "out", "jobs")}
    raw_cells = cfg.get("cells")
    if raw_cells is None:
        cell = dict(base)
        cell.setdefault("name", "all")
        return [cell]
    if not isinstance(raw_cells, list) or not raw_cells:
        raise ConfigError("cells must be a nonempty list")
    cells = []
    for i, raw in enumerate(raw_cells):
        if not isinstance(raw, dict):
            raise ConfigError("each cell must be an object")
        cell = dict(base)
        cell.pop("input", None)
        cell.pop("preset", None)
        cell.update(raw)
        cell.setdefault("name", f"cell{i}")
        cells.append(cell)
    names = [c["name"] for c in cells]
    if len(set(names)) != len(names):
        raise ConfigError("cell names must be unique")
    return cells


def _selected_estimators(cell: dict) -> tuple[str, ...]:
    selected = cell.get("estimators")
    if selected is None:
        return _ALL_ESTIMATORS
    unknown = [tag for tag in selected if tag not in _ALL_ESTIMATORS]
    if unknown:
        raise ConfigError(f"unknown estimators: {unknown}")
    return tuple(selected)


def _run_cells(cells, cfg, worker):
    """Evaluate `worker(index, cell)` for every cell, honoring the job
    count; results come back in cell order regardless of scheduling."""
    jobs = min(int(cfg["jobs"]), len(cells))
    if jobs <= 1:
        return [worker(i, cell) for i, cell in enumerate(cells)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(worker, i, cell) for i, cell in enumerate(cells)]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# audit


def _render_battery(report: BatteryReport, tags) -> str:
    lines = ["estimator".ljust(20) + "value".rjust(24) + "ci_lo".rjust(24)
             + "ci_hi".rjust(24) + "  method      flags"]
    for est in report.estimates:
        if est.estimator not in tags:
            continue
        flags = ",".join(est.flags) if est.flags else "-"
        lines.append(
            est.estimator.ljust(20)
            + repr(est.value).rjust(24)
            + repr(est.ci.lo).rjust(24)
            + repr(est.ci.hi).rjust(24)
            + f"  {est.ci.method:<10}  {flags}"
        )
    lines.append("")
    for est in report.estimates:
        if est.estimator in tags:
            lines.append(f"verdict {est.estimator}: {report.verdicts[est.estimator]}")
    lines.append(f"evidence fraction: {report.evidence_fraction!r}")
    lines.append(f"majority verdict: {report.majority_verdict}")
    return "\n".join(lines) + "\n"


def _plot_table(report: BatteryReport, tags) -> str:
    lines = ["estimator\tvalue\tlo\thi"]
    for est in report.estimates:
        if est.estimator in tags:
            lines.append(
                f"{est.estimator}\t{est.value!r}\t{est.ci.lo!r}\t{est.ci.hi!r}"
            )
    return "\n".join(lines) + "\n"


def cmd_audit(args) -> int:
    cfg = _effective_config(args)
    cells = _cells(cfg)
    plans = []
    for cell in cells:
        plans.append((cell, _selected_estimators(cell)))
    header = _header(cfg)
    out_dir = Path(cfg["out"])

    def worker(index: int, cell: dict) -> BatteryReport:
        seed = _derive_seed(cfg["seed"], index)
        dataset = _resolve_dataset(cell, seed)
        battery_config = _battery_config(cell, seed)
        try:
            return run_battery(dataset, battery_config)
        except (ValueError, RuntimeError) as exc:
            raise EstimationError(f"cell {cell['name']}: {exc}") from exc

    # validate every cell's static config before any heavy work
    for cell, _tags in plans:
        _battery_config(cell, 0)
    reports = _run_cells(cells, cfg, worker)

    for (cell, tags), report in zip(plans, reports):
        name = cell["name"]
        _write(out_dir, f"audit_{name}.txt",
               header + _render_battery(report, tags))
        _write(out_dir, f"plot_{name}.tsv", header + _plot_table(report, tags))
    summary = [
        f"{cell['name']}: {report.majority_verdict} "
        f"(evidence fraction {report.evidence_fraction!r})"
        for (cell, _), report in zip(plans, reports)
    ]
    _write(out_dir, "verdicts.txt", header + "\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose


def _uniform_sample(group, z_value: float) -> WeightedSample:
    n = group.y.shape[0]
    return WeightedSample(
        y=group.y, z=np.full(n, z_value), x=group.x,
        weights=np.full(n, 1.0 / n),
    )


def _inverse_weighted_pair(dataset, prop) -> tuple[WeightedSample, WeightedSample]:
    group0, group1 = dataset.split_groups()
    e0 = prop.predict(group0.x)
    e1 = prop.predict(group1.x)
    w0 = (1.0 / (1.0 - e0))
    w1 = (1.0 / e1)
    return (
        WeightedSample(y=group0.y, z=np.zeros(group0.y.size), x=group0.x,
                       weights=w0 / w0.sum()),
        WeightedSample(y=group1.y, z=np.ones(group1.y.size), x=group1.x,
                       weights=w1 / w1.sum()),
    )


def _matched_pair(dataset, variant, trim, normalization, weights, prop):
    group0, group1 = dataset.split_groups()
    names = dataset.schema.names
    if variant.startswith("MatchedEuc"):
        cost = matching.build_cost_euclidean(
            group0, group1, normalization, weights, names=names
        )
    else:
        cost = matching.build_cost_propensity(group0, group1, prop)
    plan = matching.solve_trimmed_transport(cost, trim)
    s0, s1 = matching.matched_weighted_samples(plan, group0, group1)
    return (
        WeightedSample(y=s0.y, z=np.zeros(s0.y.size), x=s0.x, weights=s0.weights),
        WeightedSample(y=s1.y, z=np.ones(s1.y.size), x=s1.x, weights=s1.weights),
    )


def cmd_diagnose(args) -> int:
    cfg = _effective_config(args)
    cells = _cells(cfg)
    header = _header(cfg)
    out_dir = Path(cfg["out"])

    def worker(index: int, cell: dict):
        seed = _derive_seed(cfg["seed"], index)
        dataset = _resolve_dataset(cell, seed)
        if "covariates" in cell:
            dataset = dataset.select_covariates(cell["covariates"])
        battery_config = _battery_config(cell, seed)
        names = dataset.schema.names
        kinds = dict(dataset.schema.entries)
        try:
            prop = fit_propensity(dataset, battery_config.propensity_config,
                                  seed=seed)
            normalization = fit_normalization(dataset)
            trim = _battery_trim(battery_config)
            dist_w = _battery_distance_weights(battery_config, names)
            group0, group1 = dataset.split_groups()
            pairs = {
                "original": (_uniform_sample(group0, 0.0),
                             _uniform_sample(group1, 1.0)),
            }
            for variant in cell.get("match_variants", matching.MATCHED_VARIANTS):
                if variant not in matching.MATCHED_VARIANTS:
                    raise ConfigError(f"unknown match variant {variant!r}")
                pairs[variant] = _matched_pair(
                    dataset, variant, trim[variant], normalization, dist_w, prop
                )
            pairs["InverseWeighting"] = _inverse_weighted_pair(dataset, prop)
            report = balance_report(
                pairs, names, kinds,
                kernel=KernelSpec(seed=seed),
                prop=prop,
                permutations=int(cell.get("permutations", 100)),
                seed=seed,
            )
        except ConfigError:
            raise
        except (ValueError, RuntimeError) as exc:
            raise EstimationError(f"cell {cell['name']}: {exc}") from exc
        return report

    reports = _run_cells(cells, cfg, worker)
    for cell, report in zip(cells, reports):
        name = cell["name"]
        _write(out_dir, f"balance_{name}.txt", header + render_report(report))
        rows = ["method\tMMD2\tW2"]
        for label in report.labels:
            m = report.mmd2[label]
            rows.append(
                f"{label}\t{m!r}\t{report.w2[label]!r}" if m is not None
                else f"{label}\t-\t{report.w2[label]!r}"
            )
        _write(out_dir, f"distances_{name}.tsv", header + "\n".join(rows) + "\n")
        if report.propensity is not None:
            grid, f0, f1 = report.propensity
            rows = ["grid\tclass0\tclass1"]
            rows += [f"{g!r}\t{a!r}\t{b!r}" for g, a, b in zip(grid, f0, f1)]
            _write(out_dir, f"density_{name}.tsv", header + "\n".join(rows) + "\n")
        print(f"{name}: wrote balance, distances, density tables")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sensitivity


def cmd_sensitivity(args) -> int:
    cfg = _effective_config(args)
    cells = _cells(cfg)
    header = _header(cfg)
    out_dir = Path(cfg["out"])

    def worker(index: int, cell: dict):
        seed = _derive_seed(cfg["seed"], index)
        dataset = _resolve_dataset(cell, seed)
        if "covariates" in cell:
            dataset = dataset.select_covariates(cell["covariates"])
        battery_config = _battery_config(cell, seed)
        groups = {
            name: tuple(group)
            for name, group in cell.get("groups", {}).items()
        }
        try:
            battery = run_battery(dataset, battery_config)
            prop = fit_propensity(dataset, battery_config.propensity_config,
                                  seed=seed)
            outcome = fit_outcome(dataset, battery_config.outcome_config,
                                  seed=seed)
            return austen_curve(
                dataset, battery, prop, outcome,
                grid_size=int(cell.get("grid_size", 20)),
                groups=groups,
                prop_config=battery_config.propensity_config,
                outcome_config=battery_config.outcome_config,
                draws=int(cell.get("draws", 1000)),
                seed=seed,
                band_replicates=int(cell.get("band_replicates", 0)),
            )
        except (ValueError, RuntimeError) as exc:
            raise EstimationError(f"cell {cell['name']}: {exc}") from exc

    curves = _run_cells(cells, cfg, worker)
    for cell, curve in zip(cells, curves):
        name = cell["name"]
        _write(out_dir, f"austen_{name}.txt", header + render_curve(curve))
        state = "empty curve" if curve.vacuous else (
            f"target bias {curve.target_bias!r}"
        )
        print(f"{name}: {state}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# match


def cmd_match(args) -> int:
    cfg = _effective_config(args)
    cells = _cells(cfg)
    header = _header(cfg)
    out_dir = Path(cfg["out"])

    def worker(index: int, cell: dict):
        seed = _derive_seed(cfg["seed"], index)
        dataset = _resolve_dataset(cell, seed)
        if "covariates" in cell:
            dataset = dataset.select_covariates(cell["covariates"])
        battery_config = _battery_config(cell, seed)
        trim = _battery_trim(battery_config)
        dist_w = _battery_distance_weights(battery_config, dataset.schema.names)
        try:
            prop = fit_propensity(dataset, battery_config.propensity_config,
                                  seed=seed)
            normalization = fit_normalization(dataset)
            out = {}
            for variant in cell.get("match_variants", matching.MATCHED_VARIANTS):
                if variant not in matching.MATCHED_VARIANTS:
                    raise ConfigError(f"unknown match variant {variant!r}")
                out[variant] = _matched_pair(
                    dataset, variant, trim[variant], normalization, dist_w, prop
                )
        except ConfigError:
            raise
        except (ValueError, RuntimeError) as exc:
            raise EstimationError(f"cell {cell['name']}: {exc}") from exc
        return dataset.schema.names, out

    results = _run_cells(cells, cfg, worker)
    for cell, (names, pairs) in zip(cells, results):
        name = cell["name"]
        for variant, pair in pairs.items():
            for side, sample in enumerate(pair):
                lines = ["\t".join(["index", "y", "z", *names, "weight"])]
                for i in range(sample.y.size):
                    lines.append("\t".join([
                        str(i), repr(float(sample.y[i])), repr(float(sample.z[i])),
                        *[repr(float(v)) for v in sample.x[i]],
                        repr(float(sample.weights[i])),
                    ]))
                _write(out_dir, f"match_{name}_{variant}_group{side}.tsv",
                       header + "\n".join(lines) + "\n")
        print(f"{name}: wrote weighted samples for {', '.join(pairs)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    cfg = _effective_config(args)
    if "preset" not in cfg:
        raise ConfigError("simulate config needs a 'preset' object")
    out = cfg.get("out")
    if out is None:
        raise ConfigError("simulate needs --out or an 'out' path")
    dataset = _resolve_dataset({"preset": cfg["preset"]}, cfg["seed"])
    path = Path(out)
    if path.suffix != ".csv":
        path = path / "dataset.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, path)
    print(f"wrote {path} ({dataset.n} rows, "
          f"{dataset.n_treated} treated / {dataset.n_control} control)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairaudit",
        description="Audit observational data for group unfairness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("audit", cmd_audit),
        ("diagnose", cmd_diagnose),
        ("sensitivity", cmd_sensitivity),
        ("match", cmd_match),
        ("simulate", cmd_simulate),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
