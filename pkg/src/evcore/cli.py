"""Command line front end: ``evcore run | compose | report``.

Exit codes: 0 success, 2 numerical failure (optimizer, sampler, weights),
3 data error (unreadable or schema mismatch), 4 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import jsonfmt
from .errors import ConfigError, DataError, McmcFailure, OptimizerFailure, WeightDegeneracy
from .fbst import (EvalueConfig, compute_evalue, conjunction_evalue, inconsistency_index, loss_threshold,
                   possibilistic_disjunction)
from .mc import TruthFunction
from .models import (CvSufficientStats, WearoutData, contingency_2x2_models, cv_model, gradient_audit,
                     dose_equivalence_model, hardy_weinberg_model, weibull_wearout_model)

M_FLOOR = 1000
EXIT_OK, EXIT_NUMERIC, EXIT_DATA, EXIT_CONFIG = 0, 2, 3, 4
REPORT_COLUMNS = ("model", "hypothesis", "ev", "ev_bar", "sev", "delta", "log_s_star", "log_s_hat", "m", "seed")


# ------------------------------------------------------------ data files

def _read_json(path: Path) -> dict:
    try:
        obj = jsonfmt.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"{path}: expected a JSON object")
    return obj


def _read_csv(path: Path) -> tuple[list[list[str]], dict]:
    """Rows of a CSV file plus ``# key = value`` comment parameters."""
    params = {}
    rows = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for line in text.splitlines():
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            if "=" in s:
                k, v = s[1:].split("=", 1)
                params[k.strip()] = v.strip()
            continue
        rows.append(next(csv.reader([s])))
    return rows, params


def _numeric_rows(rows, ncol: int, path) -> np.ndarray:
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]  # header
    try:
        arr = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from exc
    if arr.ndim != 2 or arr.shape[1] != ncol:
        raise DataError(f"{path}: expected {ncol} columns")
    return arr


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _need(d: dict, keys, path) -> list:
    missing = [k for k in keys if k not in d]
    if missing:
        raise DataError(f"{path}: missing field(s) {', '.join(missing)}")
    return [d[k] for k in keys]


def _load_hw(path, data, reference):
    (counts,) = _need(data, ["counts"], path)
    model, hyp = hardy_weinberg_model(counts, reference, prior_counts=data.get("prior_counts"))
    return model, hyp, {"reference": reference, "sample_size": int(sum(counts))}


def _load_cv(path, data, reference):
    (c,) = _need(data, ["c"], path)
    if "x" in data:
        st = CvSufficientStats.from_data(data["x"])
    else:
        n, mean, std = _need(data, ["n", "mean", "std"], path)
        st = CvSufficientStats.from_summary(n, mean, std)
    model, hyp = cv_model(st, float(c), data.get("parametrization", "natural"))
    return model, hyp, {"reference": reference, "sample_size": st.n}


def _load_table(kind):
    def load(path, data, reference):
        (table,) = _need(data, ["table"], path)
        model, hyp = contingency_2x2_models(table, kind)
        return model, hyp, {"reference": reference, "sample_size": int(np.sum(table)),
                            "bayes_factor": model.info["bayes_factor"]}
    return load


def _load_weibull(path, data, reference):
    if data is None:
        rows, params = _read_csv(path)
        arr = _numeric_rows(rows, 2, path)
        failed = arr[:, 1] != 0
        if "rho" not in params:
            raise DataError(f"{path}: missing '# rho = value' line")
        interval = tuple(float(v) for v in params.get("beta_interval", "3,4").split(","))
        data = {"failures": arr[failed, 0].tolist(), "withdrawals": arr[~failed, 0].tolist(),
                "rho": float(params["rho"]), "beta_interval": interval}
    failures, rho = _need(data, ["failures", "rho"], path)
    wd = WearoutData(tuple(failures), tuple(data.get("withdrawals", ())), float(rho),
                     tuple(data.get("beta_interval", (3.0, 4.0))))
    model, hyp = weibull_wearout_model(wd)
    return model, hyp, {"reference": reference, "sample_size": len(wd.failures) + len(wd.withdrawals)}


def _load_dose(path, data, reference):
    if data is None:
        rows, _ = _read_csv(path)
        X = _numeric_rows(rows, 4, path)
    else:
        (X,) = _need(data, ["samples"], path)
    model, hyp = dose_equivalence_model(X)
    return model, hyp, {"reference": reference, "sample_size": int(np.shape(X)[0])}


MODELS = {
    "hardy-weinberg": _load_hw,
    "cv": _load_cv,
    "homogeneity": _load_table("homogeneity"),
    "independence": _load_table("independence"),
    "weibull-wearout": _load_weibull,
    "dose-equivalence": _load_dose,
}
REFERENCE_MODELS = {"hardy-weinberg"}
GRAD_AUDIT_TOL = 1e-4


def load_model(name: str, path: Path, reference: str = "uniform"):
    if name not in MODELS:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(sorted(MODELS))}")
    if reference != "uniform" and name not in REFERENCE_MODELS:
        raise ConfigError(f"model {name!r} supports only the uniform reference")
    data = None if path.suffix.lower() == ".csv" else _read_json(path)
    if data is None and name not in ("weibull-wearout", "dose-equivalence"):
        raise DataError(f"model {name!r} reads JSON data, got {path}")
    try:
        model, hyp, extra = MODELS[name](path, data, reference)
    except (TypeError, KeyError) as exc:
        raise DataError(f"{path}: data does not match the {name} schema ({exc})") from exc
    gap = gradient_audit(model, hyp)
    if not gap <= GRAD_AUDIT_TOL:
        raise OptimizerFailure(f"analytic gradient of {name} disagrees with finite differences ({gap:.3g})")
    return model, hyp, extra


# ------------------------------------------------------------------ run

@dataclass
class RunConfig:
    model: str
    data: Path
    reference: str = "uniform"
    sampler: str = "auto"
    m: int = 100_000
    beta: float = 0.05
    seed: int = 0
    streams: int = 1
    k: int = 64
    loss: tuple | None = None
    out: Path | None = None
    truth: Path | None = None

    def __post_init__(self):
        if self.m < M_FLOOR:
            raise ConfigError(f"--m must be at least {M_FLOOR}, got {self.m}")
        if not 0 < self.beta < 1:
            raise ConfigError("--beta must lie in (0, 1)")
        if self.streams < 1:
            raise ConfigError("--streams must be at least 1")
        if self.k < 1:
            raise ConfigError("--k must be at least 1")
        if self.loss is not None:
            loss_threshold(*self.loss)


def run(cfg: RunConfig) -> dict:
    model, hyp, extra = load_model(cfg.model, cfg.data, cfg.reference)
    rep = compute_evalue(model, hyp, EvalueConfig(m=cfg.m, beta=cfg.beta, seed=cfg.seed, streams=cfg.streams,
                                                  sampler=cfg.sampler, k=cfg.k))
    out = rep.to_dict()
    out.update(extra)
    if cfg.loss is not None:
        phi = loss_threshold(*cfg.loss)
        out["phi"] = phi
        out["decision"] = "accept" if rep.ev >= phi else "reject"
    _emit(jsonfmt.dumps(out), cfg.out)
    if cfg.truth is not None:
        _emit(jsonfmt.dumps(rep.truth.to_dict()), cfg.truth)
    return out


def _emit(text: str, path: Path | None):
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


# -------------------------------------------------------------- compose

def _load_component(path: Path):
    d = _read_json(path)
    fmt = d.get("format", "")
    if fmt.startswith("evcore.truth_function"):
        try:
            return TruthFunction.from_dict(d), None
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
    if fmt.startswith("evcore.report"):
        (ev,) = _need(d, ["ev"], path)
        return None, float(ev)
    raise DataError(f"{path}: not a truth-function or report file")


def compose(op: str, paths: list[Path], out: Path | None = None, truth: Path | None = None) -> dict:
    if not paths:
        raise ConfigError("compose needs at least one input")
    comps = [_load_component(p) for p in paths]
    if op == "or":
        evs = [ev if tf is None else tf.ev for tf, ev in comps]
        result = {"format": "evcore.composite/1", "op": "or", "ev": possibilistic_disjunction(evs),
                  "inputs": [str(p) for p in paths], "elementary": evs}
    elif op == "and":
        if any(tf is None for tf, _ in comps):
            raise DataError("AND composition needs truth-function files (run --truth)")
        res = conjunction_evalue([tf for tf, _ in comps])
        result = {"format": "evcore.composite/1", "op": "and", "ev": res.ev, "lower": res.lower,
                  "upper": res.upper, "log_s_star": res.truth.log_s_star,
                  "inputs": [str(p) for p in paths], "elementary": res.elementary[0].tolist()}
        if truth is not None:
            _emit(jsonfmt.dumps(res.truth.to_dict()), truth)
    else:
        raise ConfigError(f"unknown operation {op!r}")
    _emit(jsonfmt.dumps(result), out)
    return result


# --------------------------------------------------------------- report

def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def report(paths: list[Path], csv_path: Path | None = None, out=None) -> str:
    """Table of report files (10 columns), sensitivity grid, and curve CSV."""
    reports, truths = [], []
    for p in paths:
        d = _read_json(p)
        fmt = d.get("format", "")
        if fmt.startswith("evcore.truth_function"):
            try:
                truths.append((p, TruthFunction.from_dict(d)))
            except ValueError as exc:
                raise DataError(f"{p}: {exc}") from exc
            continue
        missing = [c for c in REPORT_COLUMNS if c not in d]
        if missing:
            raise DataError(f"{p}: missing field(s) {', '.join(missing)}")
        reports.append((p, d))
    buf = io.StringIO()
    if reports:
        rows = [[_fmt(d[c]) for c in REPORT_COLUMNS] for _, d in reports]
        widths = [max(len(c), *(len(r[i]) for r in rows)) for i, c in enumerate(REPORT_COLUMNS)]
        buf.write("  ".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths)).rstrip() + "\n")
        for r in rows:
            buf.write("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() + "\n")
        grid = sensitivity_grid([d for _, d in reports])
        if grid:
            buf.write("\n" + grid)
    if csv_path is not None:
        write_curves(csv_path, reports, truths)
    text = buf.getvalue()
    (out or sys.stdout).write(text)
    return text


def sensitivity_grid(records: list[dict]) -> str:
    """e-values by reference (rows) and sample size (columns), with per-column inconsistency."""
    cells = {}
    for d in records:
        if "reference" in d and "sample_size" in d:
            cells[(d["reference"], int(d["sample_size"]))] = float(d["ev"])
    refs = sorted({r for r, _ in cells})
    sizes = sorted({n for _, n in cells})
    if len(refs) < 2 or not sizes:
        return ""
    head = ["reference"] + [f"n={n}" for n in sizes]
    lines = [head]
    for r in refs:
        lines.append([r] + [_fmt(cells[(r, n)]) if (r, n) in cells else "-" for n in sizes])
    inc = []
    for n in sizes:
        col = [cells[(r, n)] for r in refs if (r, n) in cells]
        inc.append(_fmt(inconsistency_index(col)))
    lines.append(["inconsistency"] + inc)
    widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
    return "".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() + "\n" for row in lines)


def write_curves(path: Path, reports, truths):
    """Long-format CSV: W(v) per truth function and ev-bar against sample size per reference."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve", "series", "x", "y"])
        for p, tf in truths:
            for t, mass in zip(tf.log_thresholds, tf.masses):
                w.writerow(["W", p.name, format(float(t), ".17g"), format(float(mass), ".17g")])
        pts = sorted((str(d.get("reference", d["model"])), int(d.get("sample_size", 0)), float(d["ev_bar"]))
                     for _, d in reports)
        for series, n, evb in pts:
            w.writerow(["ev_bar", series, n, format(evb, ".17g")])


# ------------------------------------------------------------------ main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _loss(text: str) -> tuple:
    try:
        a, b, d = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError("--loss expects three numbers a,b,d") from exc
    return a, b, d


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evcore", description="E-values for sharp hypotheses.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="compute an e-value report")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True, type=Path)
    r.add_argument("--reference", default="uniform",
                   choices=["uniform", "maxent", "jeffreys", "custom", "exclude1", "exclude2", "exclude3"])
    r.add_argument("--sampler", default="auto", choices=["auto", "exact", "mcmc", "quasi", "pseudo"])
    r.add_argument("--m", type=int, default=100_000)
    r.add_argument("--beta", type=float, default=0.05)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--streams", type=int, default=1)
    r.add_argument("--k", type=int, default=64)
    r.add_argument("--loss", type=_loss, default=None)
    r.add_argument("--out", type=Path, default=None)
    r.add_argument("--truth", type=Path, default=None, help="also write the truth function here")
    c = sub.add_parser("compose", help="AND/OR composition of independent results")
    c.add_argument("op", choices=["and", "or"])
    c.add_argument("inputs", nargs="+", type=Path)
    c.add_argument("--out", type=Path, default=None)
    c.add_argument("--truth", type=Path, default=None)
    t = sub.add_parser("report", help="tabulate reports and write curve CSV")
    t.add_argument("files", nargs="+", type=Path)
    t.add_argument("--csv", type=Path, default=None)
    return p


def _seed(arg) -> int:
    if arg is not None:
        return int(arg)
    env = os.environ.get("EVCORE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"EVCORE_SEED must be an integer, got {env!r}") from exc


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "run":
            cfg = RunConfig(model=args.model, data=args.data, reference=args.reference, sampler=args.sampler,
                            m=args.m, beta=args.beta, seed=_seed(args.seed), streams=args.streams, k=args.k,
                            loss=args.loss, out=args.out, truth=args.truth)
            run(cfg)
        elif args.command == "compose":
            compose(args.op, args.inputs, args.out, args.truth)
        else:
            report(args.files, args.csv)
    except ConfigError as exc:
        print(f"evcore: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"evcore: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OptimizerFailure, McmcFailure, WeightDegeneracy) as exc:
        print(f"evcore: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining validation errors come from malformed inputs
        print(f"evcore: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
