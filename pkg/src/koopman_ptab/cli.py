"""Batch command-line front end: collect, identify, simulate, report.

Every subcommand reads one JSON experiment config (``--config``) and works
inside one output directory (``--out``)::

    koopman-ptab --config configs/vdp.json --out run collect
    koopman-ptab --config configs/vdp.json --out run identify
    koopman-ptab --config configs/vdp.json --out run simulate --threads 4
    koopman-ptab --config configs/vdp.json --out run report

Exit codes: 0 success, 1 config or input error, 2 numerical abort,
3 some initial condition did not settle by ``T``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .analysis import DEFAULT_RADIUS
from .controller import PTABConfig
from .errors import (DataFormatError, KoopmanPTABError, NonFiniteError, RankDeficientError,
                     TrajectoryEscapeError, UncontrollableError)
from .pipeline import identify, simulate_many
from .plants import REFERENCE_ICS, ExcitationSignal, Plant, van_der_pol
from .plotting import render_all
from .records import read_dataset_csv, read_trajectory_csv, write_dataset_csv, write_trajectory_csv
from .simulator import ESCAPE_RADIUS, collect_data, split_dataset
from .sysid import KoopmanModel
from .uncertainty import write_residuals_csv

log = logging.getLogger("koopman_ptab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NOT_SETTLED = 0, 1, 2, 3

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "plant": {"kind": "van-der-pol", "eps": 1.0, "disturbance": True},
    "excitation": {"kind": "prbs", "amplitude": 2.0, "period": 0.1, "f0": 0.05, "f1": 2.0,
                   "horizon": 100.0, "dt": 0.01, "x0": [0.0, 0.0]},
    "dictionary": {"kind": "gaussian-rbf", "N": 12, "includes_identity": True},
    "identify": {"ridge": 1e-8, "split": 0.8, "realization": "output_chain", "chain_output": 0},
    "ptab": {"T": 5.0, "c": [2.0], "Gamma": [[1.0]], "guard_fraction": 0.01,
             "theta_hat0": [0.0], "regressor": "plant_phi"},
    "simulate": {"dt": 1e-3, "t_end": None, "initial_conditions": [list(x) for x in REFERENCE_ICS],
                 "escape_radius": ESCAPE_RADIUS, "radius": DEFAULT_RADIUS},
}


class ConfigError(KoopmanPTABError, ValueError):
    pass


def _merge(base: dict, override: Mapping, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, Mapping):
                raise ConfigError(f"config section {where + key!r} must be an object")
            # plant and dictionary sections carry kind-specific keys; a new
            # kind discards the defaults of the old one
            if key in ("plant", "dictionary"):
                if val.get("kind", base[key].get("kind")) != base[key].get("kind"):
                    out[key] = copy.deepcopy(dict(val))
                else:
                    out[key].update(copy.deepcopy(dict(val)))
            else:
                out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: str | None, seed: int | None = None) -> dict[str, Any]:
    """Defaults overlaid with the JSON document at ``path``; ``seed`` wins over both."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}, line {exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(doc, Mapping):
            raise ConfigError(f"{path}: top level must be a JSON object")
        cfg = _merge(cfg, doc)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def build_plant(spec: Mapping[str, Any]) -> Plant:
    kind = spec.get("kind", "van-der-pol")
    if kind == "van-der-pol":
        return van_der_pol(float(spec.get("eps", 1.0)), bool(spec.get("disturbance", True)))
    if kind == "linear":
        A = np.atleast_2d(np.asarray(spec["A"], dtype=float))
        b = np.asarray(spec["B"], dtype=float).reshape(-1)
        if A.shape != (b.size, b.size):
            raise ConfigError(f"linear plant: A is {A.shape}, B has {b.size} entries")
        return Plant(n=b.size, dynamics=lambda x, u, t: A @ x + b * u, theta_true=np.zeros(1),
                     name="linear")
    raise ConfigError(f"unknown plant kind {kind!r}")


def _excitation(cfg) -> ExcitationSignal:
    ex = cfg["excitation"]
    return ExcitationSignal(kind=ex["kind"], amplitude=float(ex["amplitude"]),
                            period=float(ex["period"]), seed=int(cfg["seed"]),
                            f0=float(ex["f0"]), f1=float(ex["f1"]))


def _dictionary_spec(cfg, n: int) -> dict[str, Any]:
    spec = dict(cfg["dictionary"])
    spec.setdefault("n", n)
    spec.setdefault("seed", int(cfg["seed"]))
    return spec


def _clean(obj):
    """JSON-safe copy: NaN/Inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _read_json(path: Path, what: str):
    try:
        return json.loads(path.read_text())
    except OSError:
        raise ConfigError(f"{what} not found at {path}; run the previous step first") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(path, exc.lineno, f"invalid JSON ({exc.msg})") from None


# -- subcommands --------------------------------------------------------------


def cmd_collect(cfg, args) -> int:
    out = _out_dir(args)
    plant = build_plant(cfg["plant"])
    ex = cfg["excitation"]
    x0 = np.asarray(ex["x0"], dtype=float)
    if x0.shape != (plant.n,):
        raise ConfigError(f"excitation.x0 must have {plant.n} entries")
    data = collect_data(plant, _excitation(cfg), float(ex["horizon"]), float(ex["dt"]), x0)
    split = float(cfg["identify"]["split"])
    train, val = split_dataset(data, split)
    try:
        write_dataset_csv(out / "train.csv", train)
        write_dataset_csv(out / "validation.csv", val)
    except OSError as exc:
        raise ConfigError(f"cannot write datasets to {out}: {exc.strerror}") from None
    manifest = {
        "dt": data.dt, "n": data.n, "seed": int(cfg["seed"]), "split": split,
        "counts": {"train": train.M + 1, "validation": val.M + 1},
        "t0": {"train": train.t0, "validation": val.t0},
        "excitation": _excitation(cfg).to_dict(), "plant": cfg["plant"],
    }
    _write_json(out / "manifest.json", manifest)
    print(f"collected {data.M + 1} states: {train.M + 1} train, {val.M + 1} validation -> {out}")
    return EXIT_OK


def cmd_identify(cfg, args) -> int:
    out = _out_dir(args)
    manifest = _read_json(out / "manifest.json", "dataset manifest")
    dt = float(manifest["dt"])
    train = read_dataset_csv(out / "train.csv", "train", dt=dt)
    val = read_dataset_csv(out / "validation.csv", "validation", dt=dt)
    idc = cfg["identify"]
    res = identify(train, val, _dictionary_spec(cfg, train.n), ridge=float(idc["ridge"]),
                   realization=idc["realization"], output_index=int(idc["chain_output"]))
    doc = res.model.to_dict()
    doc["train_rmse"] = res.train_rmse
    doc["validation_rmse"] = res.validation_rmse
    _write_json(out / "model.json", doc)
    write_residuals_csv(out / "residuals.csv", res.residuals)
    m = res.model
    print(f"N={m.N}  conversion={m.conversion_path}  chain order r={m.realization.order}")
    print(f"one-step RMSE: train {res.train_rmse:.6g}  validation {res.validation_rmse:.6g}")
    print(f"uncertainty bound: ||Delta|| <= {m.delta0:.6g} + {m.delta1:.6g} ||z||")
    return EXIT_OK


def _load_model(out: Path) -> KoopmanModel:
    doc = _read_json(out / "model.json", "model file")
    try:
        model = KoopmanModel.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(out / "model.json", None, f"invalid model document ({exc})") from None
    if model.realization is None:
        raise DataFormatError(out / "model.json", None, "model has no chain realization")
    return model


def format_table(reports) -> str:
    cols = ("tag", "settling_time", "residual_radius", "stayed", "vdot_violation_rate",
            "lemma_violations", "max_abs_u", "max_theta_hat_norm")
    heads = ("run", "t_settle", "resid", "stayed", "vdot_viol", "z_bound", "max|u|", "max|th|")

    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, bool):
            return "yes" if v else "no"
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.4g}"
        return str(v)

    rows = [[cell(r.get(c) if isinstance(r, dict) else getattr(r, c)) for c in cols] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(heads)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(heads, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in rows]
    for r in reports:
        fail = r.get("failure") if isinstance(r, dict) else r.failure
        if fail:
            lines.append(f"{r['tag'] if isinstance(r, dict) else r.tag}: {fail}")
    return "\n".join(lines)


def _status(reports) -> int:
    if any(r["failure"] for r in reports):
        return EXIT_NUMERICAL
    if not all(r["stayed"] for r in reports):
        return EXIT_NOT_SETTLED
    return EXIT_OK


def cmd_simulate(cfg, args) -> int:
    out = _out_dir(args)
    model = _load_model(out)
    plant = build_plant(cfg["plant"])
    try:
        ptab = PTABConfig.from_dict(cfg["ptab"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ptab section: {exc}") from None
    sim = cfg["simulate"]
    ics = [np.asarray(x, dtype=float) for x in sim["initial_conditions"]]
    if not ics or any(x.shape != (plant.n,) for x in ics):
        raise ConfigError(f"simulate.initial_conditions must be a nonempty list of {plant.n}-vectors")
    t_end = None if sim["t_end"] is None else float(sim["t_end"])
    tags = [f"ic{k:02d}" for k in range(len(ics))]
    results = simulate_many(plant, model, ptab, ics, t_end=t_end, dt=float(sim["dt"]),
                            escape_radius=float(sim["escape_radius"]), radius=float(sim["radius"]),
                            threads=max(1, int(args.threads)), tags=tags)
    # all writes happen here, after every run has finished, in tag order
    reports = []
    for (rec, rep), x0 in zip(results, ics):
        if len(rec):
            write_trajectory_csv(out / f"trajectory_{rec.tag}.csv", rec)
        d = rep.to_dict()
        d["x0"] = x0.tolist()
        reports.append(_clean(d))
    status = _status(reports)
    doc = {"T": ptab.T, "dt": float(sim["dt"]), "radius": float(sim["radius"]),
           "ptab": ptab.to_dict(), "all_stayed": all(r["stayed"] for r in reports),
           "runs": reports}
    _write_json(out / "report.json", doc)
    print(format_table(reports))
    return status


def cmd_report(cfg, args) -> int:
    out = _out_dir(args)
    doc = _read_json(out / "report.json", "simulation report")
    runs = []
    for r in doc["runs"]:
        path = out / f"trajectory_{r['tag']}.csv"
        if path.exists():
            try:
                cols = read_trajectory_csv(path)
            except ValueError as exc:
                raise DataFormatError(path, None, str(exc)) from None
            cols["tag"] = r["tag"]
            runs.append(cols)
    if not runs:
        raise ConfigError(f"no trajectory files in {out}; run simulate first")
    n = sum(1 for k in runs[0] if k.startswith("x") and k[1:].isdigit())
    longest = max(runs, key=lambda c: len(c["t"]))
    header = ["t"]
    for c in runs:
        header += [f"{c['tag']}_x{i + 1}" for i in range(n)] + [f"{c['tag']}_e_norm", f"{c['tag']}_u"]
    with open(out / "report.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for k, t in enumerate(longest["t"]):
            row = [repr(float(t))]
            for c in runs:
                keys = [f"x{i + 1}" for i in range(n)] + ["e_norm", "u"]
                row += [repr(float(c[key][k])) if k < len(c["t"]) else "" for key in keys]
            wr.writerow(row)
    figs = render_all(runs, doc.get("T"), out)
    print(format_table(doc["runs"]))
    print(f"wrote {out / 'report.csv'} and {len(figs)} figures")
    return _status(doc["runs"])


COMMANDS = {"collect": cmd_collect, "identify": cmd_identify, "simulate": cmd_simulate,
            "report": cmd_report}


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="experiment config JSON")
    p.add_argument("--out", default=d("out"), help="working/output directory (default: out)")
    p.add_argument("--seed", type=int, default=d(None), help="override the config seed")
    p.add_argument("--threads", type=int, default=d(1), help="concurrent closed-loop runs")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koopman-ptab", description=__doc__.split("\n")[0])
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"collect": "simulate open-loop excitation and write train/validation CSVs",
             "identify": "fit the lifted model and its uncertainty bound",
             "simulate": "run the PTAB controller from each initial condition",
             "report": "consolidate trajectories into report.csv and figures"}
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        _add_globals(sp, suppress=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg, args)
    except (UncontrollableError, RankDeficientError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NonFiniteError, TrajectoryEscapeError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, TypeError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
