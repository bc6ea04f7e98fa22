"""Batch front end: ``pacbound --config exp.json [--seed S] [--jobs J] [--out DIR]``.

Exit codes: 0 success, 2 invalid config or data, 3 negative cycle in the
bound matrix, 4 vacuous selection (no candidate or every bound infinite).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from . import oracle
from .bounds import BoundParams, TruncationModel
from .model import FAMILIES, DataError, Dataset, LossModel, ParameterGridNu, SubmodelGrid
from .selection import SelectionReport, jsonable, run_selection

EXIT_OK, EXIT_INVALID, EXIT_NEGATIVE_CYCLE, EXIT_VACUOUS = 0, 2, 3, 4
MODES = ("select", "verify", "coverage", "rates")
DEFAULTS = {"a": 1.0, "epsilon": 0.1, "zeta": 2.0, "q": 1.0, "seed": 0, "nu": "dyadic"}


class ConfigError(ValueError):
    pass


def _num(cfg: dict, key: str, errors: list) -> Optional[float]:
    v = cfg.get(key, DEFAULTS.get(key))
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append(f"{key} must be a number")
        return None
    return float(v)


def validate(config: dict) -> list:
    """Static checks of every module precondition; an empty list means valid."""
    errors: list = []
    if not isinstance(config, dict):
        return ["config must be a JSON object"]
    mode = config.get("mode", "select")
    if mode not in MODES:
        errors.append(f"mode must be one of {', '.join(MODES)}")
    a = _num(config, "a", errors)
    if a is not None and not 0 < a <= 1:
        errors.append("a must lie in (0,1]")
    eps = _num(config, "epsilon", errors)
    if eps is not None and not 0 < eps < 1:
        errors.append("epsilon must lie in (0,1)")
    zeta = _num(config, "zeta", errors)
    if zeta is not None and not zeta > 1:
        errors.append("zeta must be > 1")
    q = _num(config, "q", errors)
    if q is not None and not 0 < q <= 1:
        errors.append("q must lie in (0,1]")
    seed = config.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        errors.append("seed must be an integer in [0, 2^64)")
    nu = config.get("nu", "dyadic")
    if nu != "dyadic":
        if not isinstance(nu, dict) or "grid" not in nu:
            errors.append("nu must be \"dyadic\" or an object with a grid")
        else:
            grid = np.asarray(nu["grid"], dtype=float)
            if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
                errors.append("nu.grid must be positive and strictly ascending")
            mass = nu.get("mass")
            if mass is not None:
                m = np.asarray(mass, dtype=float)
                if m.shape != grid.shape or np.any(m < 0) or abs(m.sum() - 1) > 1e-9:
                    errors.append("nu.mass must be nonnegative, one per grid point, summing to 1")
    if mode == "select":
        if "data" not in config:
            errors.append("data must name a CSV file in select mode")
        errors += _validate_models(config.get("models"))
        errors += _validate_loss(config.get("loss"))
    elif mode in ("coverage", "rates"):
        world = config.get("world", "threshold")
        if world != "threshold":
            errors.append("world must be \"threshold\" in coverage and rates modes")
        levels = config.get("levels", [2, 4])
        if not isinstance(levels, list) or not levels or not all(isinstance(v, int) and 0 <= v <= 12 for v in levels):
            errors.append("levels must be a nonempty list of integers in [0, 12]")
        reps = config.get("replicates", 100)
        if not isinstance(reps, int) or reps < 2:
            errors.append("replicates must be an integer >= 2")
        if mode == "coverage":
            if config.get("theorem", "all_pairs") not in ("single_pair", "all_pairs"):
                errors.append("theorem must be single_pair or all_pairs")
            N = config.get("N", 100)
            if not isinstance(N, int) or N < 1:
                errors.append("N must be a positive integer")
        else:
            Ns = config.get("Ns", [100, 400, 1600])
            if not isinstance(Ns, list) or not Ns or not all(isinstance(v, int) and v > 0 for v in Ns):
                errors.append("Ns must be a nonempty list of positive integers")
    elif mode == "verify":
        reps = config.get("replicates", 10**5)
        if not isinstance(reps, int) or reps < 2:
            errors.append("replicates must be an integer >= 2")
    return errors


def _validate_models(models) -> list:
    if not isinstance(models, list) or not models:
        return ["models must be a nonempty list"]
    errors = []
    total_mu = 0.0
    for k, m in enumerate(models):
        key = f"models[{k}]"
        if not isinstance(m, dict):
            errors.append(f"{key} must be an object")
            continue
        mu = m.get("mu", 1.0 / len(models))
        if not isinstance(mu, (int, float)) or not 0 < mu <= 1:
            errors.append(f"{key}.mu must lie in (0,1]")
        else:
            total_mu += mu
        if "atoms" in m:
            atoms = m["atoms"]
            if not isinstance(atoms, list) or not atoms:
                errors.append(f"{key}.atoms must be a nonempty list")
            w = m.get("weights")
            if w is not None and (not isinstance(w, list) or len(w) != len(atoms) or any(v < 0 for v in w) or sum(w) <= 0):
                errors.append(f"{key}.weights must be nonnegative, one per atom, with positive sum")
        elif "lattice" in m:
            lat = m["lattice"]
            if not isinstance(lat, dict) or not {"lo", "hi", "steps"} <= set(lat):
                errors.append(f"{key}.lattice needs lo, hi and steps")
        else:
            errors.append(f"{key} needs atoms or lattice")
    if total_mu > 1 + 1e-9:
        errors.append("models mu must sum to at most 1")
    return errors


def _validate_loss(loss) -> list:
    if not isinstance(loss, dict):
        return ["loss must be an object with a family"]
    if loss.get("family") not in FAMILIES:
        return [f"loss.family must be one of {', '.join(FAMILIES)}"]
    try:
        _build_loss(loss)
    except ValueError as exc:
        return [f"loss: {exc}"]
    return []


def _build_loss(spec: dict) -> LossModel:
    em = spec.get("expmoment")
    return LossModel(
        spec["family"],
        bound_C=spec.get("bound"),
        expmoment=None if em is None else (float(em[0]), float(em[1])),
        clamp=spec.get("clamp"),
        p=float(spec.get("p", 2.0)),
    )


def _build_nu(config: dict, N: int) -> ParameterGridNu:
    nu = config.get("nu", "dyadic")
    if nu == "dyadic":
        return ParameterGridNu.dyadic(N)
    if nu.get("mass") is None:
        return ParameterGridNu.uniform(nu["grid"])
    m = np.asarray(nu["mass"], dtype=float)
    with np.errstate(divide="ignore"):
        return ParameterGridNu(np.asarray(nu["grid"], dtype=float), np.log(m / m.sum()))


def _build_grids(models: list) -> list:
    grids = []
    for i, m in enumerate(models):
        mu = float(m.get("mu", 1.0 / len(models)))
        if "atoms" in m:
            if m.get("weights") is not None:
                grids.append(SubmodelGrid.weighted(i, m["atoms"], m["weights"], mu))
            else:
                grids.append(SubmodelGrid.uniform(i, m["atoms"], mu))
        else:
            lat = m["lattice"]
            grids.append(SubmodelGrid.lattice(i, lat["lo"], lat["hi"], lat["steps"], mu))
    return grids


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, ensure_ascii=False) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["+inf" if isinstance(v, float) and math.isinf(v) and v > 0 else v for v in r])
    return buf.getvalue()


def bounds_rows(report: SelectionReport) -> list:
    """``M^2`` pair rows followed by ``M`` complexity rows."""
    rows = []
    cands = report.order.candidates
    for k, t in enumerate(cands):
        for j, tp in enumerate(cands):
            term = report.terms[k][j] if report.terms else None
            lam, gam, gamp = (term.argmin_params if term is not None and term.argmin_params else ("", "", ""))
            rows.append(["pair", k + 1, j + 1, t.model_index, t.beta, tp.model_index, tp.beta,
                         float(report.B[k, j]), float(report.B_tilde[k, j]), lam, gam, gamp, ""])
    for k, t in enumerate(cands):
        rows.append(["complexity", k + 1, "", t.model_index, t.beta, "", "", "", "", "", "", "", t.complexity])
    return rows


BOUNDS_HEADER = ["kind", "k", "j", "model", "beta", "model_prime", "beta_prime",
                 "B", "B_tilde", "lambda", "gamma", "gamma_prime", "complexity"]


def _summary_select(report: SelectionReport, status: int) -> str:
    lines = [f"candidates: {report.M} usable, {len(report.order.excluded)} excluded (infinite complexity)"]
    if report.negative_cycle:
        lines.append("negative cycle in the bound matrix: no selection")
    elif report.vacuous:
        lines.append("every bound is infinite: vacuous selection")
    else:
        sel = report.selected
        lines.append(f"selected k_hat={report.k_hat} (model {sel.model_index}, beta {sel.beta:g}), s_hat={report.s_hat}")
        lines.append(f"drawn atom {sel.atom}: {sel.posterior.grid.atoms[sel.atom].tolist()}")
        lines.append(f"empirical risk {sel.risk:.6g}, complexity {sel.complexity:.6g}")
        worst = max(c.slack for c in report.certificates)
        lines.append(f"largest certificate slack {worst:.6g}")
    if report.symmetric_violations:
        lines.append(f"pairs with negative symmetric bound sum: {len(report.symmetric_violations)}")
    lines.append(f"exit status {status}")
    return "\n".join(lines) + "\n"


def _run_select(config: dict, base: Path, out: Path, jobs: int):
    path = Path(config["data"])
    if not path.is_absolute():
        path = base / path
    data = Dataset.from_csv(path)
    loss = _build_loss(config["loss"])
    if loss.needs_labels and data.y is None:
        raise ConfigError("data: loss family needs a y column")
    grids = _build_grids(config["models"])
    for g in grids:
        if g.atoms.shape[1] != data.arity:
            raise ConfigError(f"models[{g.model_index}]: atom dimension {g.atoms.shape[1]} != data arity {data.arity}")
    N = data.n
    params = BoundParams(config.get("a", 1.0), config.get("epsilon", 0.1), config.get("zeta", 2.0),
                         _build_nu(config, N), N)
    report = run_selection(data, grids, loss, params, q=config.get("q", 1.0), seed=config["seed"],
                           truncation=TruncationModel.from_loss(loss), jobs=jobs)
    if report.negative_cycle:
        status = EXIT_NEGATIVE_CYCLE
    elif report.vacuous:
        status = EXIT_VACUOUS
    else:
        status = EXIT_OK
    doc = {"mode": "select", "seed": config["seed"], "N": N, "status": status, "selection": report.to_dict()}
    files = {
        "report.json": _json_text(doc),
        "bounds.csv": _csv_text(BOUNDS_HEADER, bounds_rows(report)),
        "summary.txt": _summary_select(report, status),
    }
    return status, files


def _check_rows(checks: list) -> str:
    keys = ["check", "mean", "se", "rate", "lhs", "delta", "passed"]
    return _csv_text(keys, [[c.get(k, "") for k in keys] for c in checks])


def _run_verify(config: dict, jobs: int):
    reps = config.get("replicates", 10**5)
    seed = config["seed"]
    checks = []
    w3 = oracle.three_point_world()
    for a in (0.5, 1.0):
        for lam in (1.0, 4.0, 8.0):
            checks.append(oracle.check_deviation_identity(w3, 0, 1, a, lam, 20, reps, seed))
    bw = oracle.bounded_world()
    N = 20
    for which, lam in (("upper", N / 8), ("upper", N / 4), ("lower", N / 8), ("lower", N / 4), ("variance", None)):
        checks.append(oracle.check_bernstein_variant(bw, 0, 1, lam, which, N, 1.0, reps, seed))
    rng = np.random.default_rng(seed)
    for size in (1, 2, 5, 20):
        n = rng.dirichlet(np.ones(size))
        h = rng.normal(size=size)
        checks.append(oracle.check_legendre_duality(n, h, 1000, seed))
    hw = oracle.heavy_tail_world()
    b, B = oracle.HEAVY_TAIL_MOMENTS
    for lam in (25.0, 50.0, 100.0):
        checks.append(oracle.check_truncation_bound(hw, 0, 1, lam, 100, b, B))
    return checks


def _threshold_grids(config: dict) -> tuple:
    return tuple(oracle.threshold_grids(config.get("levels", [2, 4])))


def _run_study(config: dict, jobs: int):
    mode = config["mode"]
    seed = config["seed"]
    world = oracle.threshold_world()
    grids = _threshold_grids(config)
    reps = config.get("replicates", 100)
    if mode == "coverage":
        cfg = oracle.CoverageConfig(world, grids, config.get("N", 100), config.get("epsilon", 0.1),
                                    a=config.get("a", 1.0), zeta=config.get("zeta", 2.0), q=config.get("q", 1.0))
        res = oracle.coverage(cfg, config.get("theorem", "all_pairs"), reps, seed, jobs)
        return [res], _check_rows([res])
    cfg = oracle.RateConfig(world, grids, epsilon=config.get("epsilon", 0.1), a=config.get("a", 1.0),
                            zeta=config.get("zeta", 2.0), q=config.get("q", 1.0))
    res = oracle.rate_experiment(cfg, config.get("Ns", [100, 400, 1600]), reps, seed, jobs)
    rows = [[N, r, ex] for N, exs in zip(res["Ns"], res["excess"]) for r, ex in enumerate(exs)]
    res["check"] = "rates"
    return [res], _csv_text(["N", "replicate", "excess_risk"], rows)


def run(config: dict, out_dir, jobs: int = 1, base_dir=None) -> int:
    """Validate, run and write ``report.json``, a CSV and ``summary.txt`` to ``out_dir``."""
    errors = validate(config)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_INVALID
    config = {**DEFAULTS, **config}
    config.setdefault("mode", "select")
    out = Path(out_dir)
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    try:
        if config["mode"] == "select":
            status, files = _run_select(config, base, out, jobs)
        else:
            if config["mode"] == "verify":
                checks = _run_verify(config, jobs)
                csv_name, csv_text = "checks.csv", _check_rows(checks)
            else:
                checks, csv_text = _run_study(config, jobs)
                csv_name = "checks.csv" if config["mode"] == "coverage" else "rates.csv"
            status = EXIT_OK
            doc = {"mode": config["mode"], "seed": config["seed"], "checks": checks,
                   "passed": all(c["passed"] for c in checks)}
            summary = "".join(f"{c['check']}: {'pass' if c['passed'] else 'FAIL'}\n" for c in checks)
            files = {"report.json": _json_text(jsonable(doc)), csv_name: csv_text, "summary.txt": summary}
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        _atomic_write(out / name, text)
    print(files["summary.txt"], end="")
    return status


def _jobs(arg: Optional[int]) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("PACBOUND_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            print("ignoring non-integer PACBOUND_JOBS", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="pacbound",
        description="Select among submodel grids with pairwise risk bounds, or run the verification studies.",
        epilog="exit codes: 0 ok, 2 invalid config or data, 3 negative cycle, 4 vacuous selection",
    )
    ap.add_argument("--config", required=True, help="experiment config (JSON)")
    ap.add_argument("--seed", type=int, help="overrides the config seed (unsigned 64-bit)")
    ap.add_argument("--jobs", type=int, help="worker count (default: $PACBOUND_JOBS or 1)")
    ap.add_argument("--out", default="out", help="output directory")
    args = ap.parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed is not None and isinstance(config, dict):
        config["seed"] = args.seed
    return run(config, args.out, _jobs(args.jobs), base_dir=Path(args.config).resolve().parent)


if __name__ == "__main__":
    sys.exit(main())
