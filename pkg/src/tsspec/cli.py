"""Batch front end: ``tsspec --job job.json --out results/``.

A job file is a JSON object::

    {"schema": 1, "command": "forward", "timescale": [[0, 3.14159]],
     "potential": {"segments": [{"samples": [...]}], "points": {}},
     "options": {"count": 20}}

Commands: ``forward``, ``inverse``, ``roundtrip``, ``verify``, ``oracle``.
Exit codes: 0 success, 1 a requested check failed, 2 bad job, 3 computation
failed.  Diagnostics go to stderr; stdout gets a single summary line.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .asymptotics import asymptotic_constants, assign_branches, branch_check
from .errors import CheckFailure, ComputeError, ConfigError, TSSpecError
from .forward import solver, spectral_data
from .inverse import InverseOptions, SpectralInput, run_inverse
from .oracle import discrete_solve
from .potential import Potential, distance, relative_l2_error
from .time_scale import TimeScale, validate
from .transfer import alpha_matrix
from .weyl import weyl_direct

__all__ = ["main", "run_job", "load_job", "dumps", "JobConfig"]

log = logging.getLogger("tsspec")

SCHEMA = 1
COMMANDS = ("forward", "inverse", "roundtrip", "verify", "oracle")
TOP_KEYS = {"schema", "command", "timescale", "potential", "data", "model", "options"}
DATA_KEYS = {"lambda1", "weights", "lambda0"}
COMMON_OPTIONS = {"count", "seed", "window", "checks", "tolerance"}
CHECKS = ("interlacing", "wronskian", "oracle", "asymptotics")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_COMPUTE = 0, 1, 2, 3


class JobConfig:
    """A schema-checked job; see the module docstring for the layout."""

    def __init__(self, obj):
        if not isinstance(obj, dict):
            raise ConfigError("job must be a JSON object")
        unknown = set(obj) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown job keys: {sorted(unknown)}")
        if obj.get("schema") != SCHEMA:
            raise ConfigError(f"unsupported schema {obj.get('schema')!r} (expected {SCHEMA})")
        self.command = obj.get("command")
        if self.command not in COMMANDS:
            raise ConfigError(f"command must be one of {COMMANDS}")
        if "timescale" not in obj:
            raise ConfigError("missing timescale")
        self.ts: TimeScale = validate(obj["timescale"])
        opts = dict(obj.get("options", {}))
        inv_names = set(InverseOptions.__dataclass_fields__)
        unknown = set(opts) - COMMON_OPTIONS - inv_names
        if unknown:
            raise ConfigError(f"unknown options: {sorted(unknown)}")
        self.options = opts
        self.inverse_options = InverseOptions(**{k: v for k, v in opts.items() if k in inv_names})
        self.potential = None
        if "potential" in obj:
            self.potential = _potential(self.ts, obj["potential"])
        self.model = _potential(self.ts, obj["model"]) if "model" in obj else None
        self.data = None
        if "data" in obj:
            data = obj["data"]
            unknown = set(data) - DATA_KEYS
            if unknown:
                raise ConfigError(f"unknown data keys: {sorted(unknown)}")
            try:
                self.data = SpectralInput(data["lambda1"], data["weights"], data.get("lambda0"),
                                          n_max=min(self.inverse_options.n_max, len(data["lambda1"])))
            except KeyError as exc:
                raise ConfigError(f"data needs {exc.args[0]}") from None
        needs_q = self.command in ("forward", "roundtrip", "verify", "oracle")
        if needs_q and self.potential is None:
            raise ConfigError(f"{self.command} needs a potential")
        if self.command == "inverse" and self.data is None:
            raise ConfigError("inverse needs data")


def _potential(ts, obj) -> Potential:
    if not isinstance(obj, dict) or set(obj) - {"segments", "points"}:
        raise ConfigError("potential must have only 'segments' and 'points'")
    for s in obj.get("segments", []):
        if set(s) != {"samples"}:
            raise ConfigError("each segment entry needs exactly a 'samples' list")
    return Potential.from_json(ts, obj)


def load_job(path) -> JobConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read job file: {exc}") from None
    return JobConfig(obj)


# -- output -----------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (bool, int, float, np.bool_, np.integer, np.floating)):
        return _fmt(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _write_json(path: Path, obj):
    path.write_text(dumps(obj) + "\n")


def _write_branches_csv(path: Path, ts, p, sd):
    consts = asymptotic_constants(ts, p) if ts.n_segments else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "index", "lambda", "branch", "n", "weight"])
        for j, lam in ((0, sd.lambda0), (1, sd.lambda1)):
            labels = assign_branches(consts, lam, j) if consts else [None] * len(lam)
            for i, v in enumerate(lam):
                lab = labels[i]
                wt = _fmt(sd.weights[i]) if j == 1 else ""
                w.writerow([j, i + 1, _fmt(v), "" if lab is None else lab[0], "" if lab is None else lab[1], wt])
    return consts


def _write_q_csv(path: Path, p: Potential):
    ts = p.ts
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "x", "q"])
        for l in range(ts.n_blocks):
            if ts.is_segment(l):
                k = ts.segment_blocks.index(l)
                for x, q in zip(p.grid(k), p.segment_samples[k]):
                    w.writerow([l, _fmt(x), _fmt(q)])
            elif l in p.point_values:
                w.writerow([l, _fmt(ts.blocks[l][0]), _fmt(p.point_values[l])])


# -- commands -------------------------------------------------------------------

def _count(job: JobConfig, default: int = 30) -> int | None:
    return None if job.ts.n_segments == 0 else int(job.options.get("count", default))


def _forward(job: JobConfig, out: Path):
    ts, p = job.ts, job.potential
    sd = spectral_data(ts, p, count=_count(job))
    consts = _write_branches_csv(out / "eigen_branches.csv", ts, p, sd)
    if consts is not None:
        sd.branch_labels0 = [list(l) if l else None for l in assign_branches(consts, sd.lambda0, 0)]
        sd.branch_labels1 = [list(l) if l else None for l in assign_branches(consts, sd.lambda1, 1)]
    st = solver(ts, p).run(np.concatenate([sd.lambda0, sd.lambda1]))
    result = sd.to_json()
    result["diagnostics"] = {
        "counts": sd.counts,
        "wronskian_drift": st.wronskian_drift,
        "min_lower_gap": float(sd.lower_gaps.min()) if sd.lower_gaps.size else None,
        "min_upper_gap": float(sd.upper_gaps.min()) if sd.upper_gaps.size else None,
    }
    _write_json(out / "spectral.json", result)
    report = None
    if ts.n_segments and consts.commensurable and sd.lambda1.size > job.options.get("window", [20, 60])[1]:
        report = branch_check(ts, p, sd, tuple(job.options.get("window", (20, 60))))
        _write_json(out / "branch_report.json", report.to_json())
    return sd, f"forward: {sd.lambda1.size} eigenvalue pairs"


def _inverse_from(job: JobConfig, data):
    return run_inverse(job.ts, data, job.model, job.inverse_options)


def _inverse(job: JobConfig, out: Path):
    res = _inverse_from(job, job.data)
    _write_json(out / "potential.json", res.to_json())
    _write_q_csv(out / "q_recovered.csv", res.potential)
    return res, f"inverse: recovered {len(res.diagnostics)} blocks"


def _roundtrip(job: JobConfig, out: Path):
    ts, p = job.ts, job.potential
    n = job.inverse_options.n_max
    _forward(job, out)
    weyl = weyl_direct(ts, p, count=n if ts.n_segments else None)
    res = _inverse_from(job, weyl)
    _write_json(out / "potential.json", res.to_json())
    _write_q_csv(out / "q_recovered.csv", res.potential)
    dist = distance(res.potential, p)
    rel = relative_l2_error(res.potential, p) if ts.n_segments else 0.0
    tol = float(job.options.get("tolerance", 5e-2))
    report = {"l2": dist.l2, "relative_l2": rel, "points": dist.points, "tolerance": tol,
              "pass": bool(rel <= tol and dist.points <= tol)}
    _write_json(out / "distance.json", report)
    if not report["pass"]:
        raise CheckFailure(f"roundtrip distance {rel:.3g}/{dist.points:.3g} exceeds {tol:g}")
    return res, f"roundtrip: relative L2 {rel:.3e}, point error {dist.points:.3e}"


def _check_rows(job: JobConfig):
    ts, p = job.ts, job.potential
    wanted = job.options.get("checks", list(CHECKS))
    bad = set(wanted) - set(CHECKS)
    if bad:
        raise ConfigError(f"unknown checks: {sorted(bad)}")
    rows = []
    sd = spectral_data(ts, p, count=_count(job))
    if "interlacing" in wanted:
        ok = sd.interlaced()
        gaps = np.concatenate([sd.lower_gaps, sd.upper_gaps])
        detail = f"smallest gap {float(gaps.min()):.3e}" if gaps.size else "empty spectra"
        rows.append(("interlacing", ok, detail))
    if "wronskian" in wanted:
        lam = np.concatenate([sd.lambda0, sd.lambda1, np.linspace(solver(ts, p).lower_bound() - 50, 0, 11)])
        drift = solver(ts, p).run(lam).wronskian_drift
        det = 0.0
        for l in range(ts.n_blocks - 1):
            det = max(det, float(np.max(np.abs(alpha_matrix(ts, p, l, lam).det() - 1))))
        rows.append(("wronskian", bool(drift <= 1e-10 and det <= 1e-12), f"drift {drift:.3e}, det {det:.3e}"))
    if "oracle" in wanted and ts.n_segments == 0:
        ref = discrete_solve(ts, p, 1)
        ref0 = discrete_solve(ts, p, 0)
        e1 = float(np.max(np.abs(ref.spectrum - sd.lambda1)))
        e0 = float(np.max(np.abs(ref0.spectrum - sd.lambda0)))
        ew = float(np.max(np.abs(ref.weights - sd.weights)))
        ok = max(e0, e1) <= 1e-10 and ew <= 1e-9
        rows.append(("oracle", ok, f"spectra {max(e0, e1):.3e}, weights {ew:.3e}"))
    if "asymptotics" in wanted and ts.n_segments:
        consts = asymptotic_constants(ts, p)
        if consts.commensurable:
            # enough eigenvalues for every branch to reach n = 60
            cnt = math.ceil(61 * sum(consts.d) / min(consts.d)) + 8
            big = spectral_data(ts, p, count=cnt)
            rep = branch_check(ts, p, big)
            grow = [k for k, v in rep.growth.items() if v]
            ok = not grow
            detail = f"sup {max(rep.sup.values(), default=0.0):.3e}"
            if rep.weight_residuals is not None:
                i50 = np.nonzero(rep.weight_n == 50)[0]
                if i50.size:
                    r = abs(rep.weight_residuals[i50[0]] / 50)
                    ok = ok and r <= 0.1
                    detail += f", |alpha_50 d/2 - 1| {r:.3e}"
            rows.append(("asymptotics", ok, detail))
    return rows


def _verify(job: JobConfig, out: Path):
    rows = _check_rows(job)
    with open(out / "verify.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "result", "detail"])
        for name, ok, detail in rows:
            w.writerow([name, "pass" if ok else "fail", detail])
    for name, ok, detail in rows:
        print(f"{name}: {'pass' if ok else 'fail'} ({detail})", file=sys.stderr)
    failed = [name for name, ok, _ in rows if not ok]
    if failed:
        raise CheckFailure(f"checks failed: {', '.join(failed)}")
    return rows, f"verify: {len(rows)} checks passed"


def _oracle(job: JobConfig, out: Path):
    ts, p = job.ts, job.potential
    s0 = discrete_solve(ts, p, 0)
    s1 = discrete_solve(ts, p, 1)
    obj = {"lambda0": s0.spectrum, "lambda1": s1.spectrum, "weights": s1.weights,
           "theta0": s1.theta0.coef, "theta1": s1.theta1.coef}
    _write_json(out / "oracle.json", obj)
    return obj, f"oracle: {s1.spectrum.size} eigenvalue pairs"


_DISPATCH = {"forward": _forward, "inverse": _inverse, "roundtrip": _roundtrip,
             "verify": _verify, "oracle": _oracle}


def run_job(job: JobConfig, out) -> str:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _, summary = _DISPATCH[job.command](job, out)
    return summary


def _parser():
    ap = argparse.ArgumentParser(prog="tsspec", description=__doc__.splitlines()[0])
    ap.add_argument("--job", required=True, help="job JSON file")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="worker threads for parallel stages")
    ap.add_argument("--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        job = load_job(args.job)
        job.inverse_options.threads = args.threads or os.cpu_count() or 1
        summary = run_job(job, args.out)
    except ConfigError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        print(f"error: bad job ({type(exc).__name__})")
        return EXIT_CONFIG
    except CheckFailure as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        print(f"fail: {exc}")
        return EXIT_CHECK
    except (ComputeError, TSSpecError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        print(f"error: computation failed ({type(exc).__name__})")
        return EXIT_COMPUTE
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
