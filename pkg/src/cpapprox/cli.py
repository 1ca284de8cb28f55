"""Command-line front end: ``cpapprox {approximate,counterexample,selftest}``.

Every run writes ``report.json`` to ``--out`` (plus CSV tables where relevant)
and exits with 0 when all checks pass, 1 when a check fails and 2 on a
precondition or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, io, presets
from .approximator import build_T, sandwich_defect_bound
from .blockmap import GridMap, numerical_rank, verify_ucp
from .errors import CpApproxError, NotGridFaithful, PatternScaleError, PreconditionError
from .gridalg import MatrixFunction, sup_norm
from .obstruction import SCAN_COLUMNS, defect_tradeoff_scan, expectation_family, verify_chain
from .reformulator import BlockFormMap, state_defect
from .selftest import run_selftest
from .states import State, balanced_pattern, rudin_state

EXIT_OK, EXIT_FAIL, EXIT_PRECONDITION = 0, 1, 2

DEFAULT_TOLS = {"ucp": 1e-9, "preservation": 1e-9, "rank_cutoff": 1e-9, "chain": 1e-7}

DEFAULTS = {
    "approximate": {"state": {"generator": "demo"}, "functions": "default", "eps": [0.1], "seed": 0, "samples": 200},
    "counterexample": {
        "level": 10,
        "smooth_level": 5,
        "eps": [0.1],
        "lambdas": [0.0, 0.25, 0.5, 1.0],
        "f": ["one", "ramp", "bump"],
        "theta": 0,
        "seed": 0,
    },
    "selftest": {"seed": 0},
}


class ConfigError(CpApproxError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _parse_tol(items) -> dict:
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep or name not in DEFAULT_TOLS:
            raise ConfigError(f"bad --tol {item!r}; expected NAME=VALUE with NAME in {sorted(DEFAULT_TOLS)}")
        try:
            out[name] = float(value)
        except ValueError:
            raise ConfigError(f"bad --tol value {value!r}") from None
    return out


def build_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags (flags win)."""
    cfg = json.loads(json.dumps(DEFAULTS[args.command]))
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(loaded) - set(cfg) - {"tol", "command"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg.update({k: v for k, v in loaded.items() if k != "tol"})
        tols = loaded.get("tol", {})
    else:
        tols = {}
    if getattr(args, "eps", None):
        cfg["eps"] = list(args.eps)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "level", None) is not None:
        cfg["level"] = args.level
    if getattr(args, "smooth_level", None) is not None:
        cfg["smooth_level"] = args.smooth_level
    if getattr(args, "state", None):
        cfg["state"] = {"file": args.state}
    cfg["tol"] = {**DEFAULT_TOLS, **tols, **_parse_tol(args.tol)}
    cfg["command"] = args.command
    return cfg


def _load_states(spec: dict, seed: int) -> list[tuple[str, State]]:
    if "file" in spec:
        obj = io.load(spec["file"])
        if not isinstance(obj, State):
            raise ConfigError(f"{spec['file']} does not hold a State")
        return [(str(spec["file"]), obj)]
    kind = spec.get("generator", "demo")
    if kind == "demo":
        return [("demo", presets.demo_state())]
    if kind == "random":
        rng = np.random.default_rng(seed)
        ns = spec.get("n", 2)
        ns = [ns] if isinstance(ns, int) else list(ns)
        m = int(spec.get("m", 128))
        out = []
        for i in range(int(spec.get("count", 1))):
            n = int(ns[i % len(ns)])
            out.append((f"random[{i}] n={n}", presets.random_state(rng, n, m)))
        return out
    if kind == "rudin":
        return [("rudin", rudin_state(balanced_pattern(int(spec.get("level", 7)), int(spec.get("smooth_level", 3)))))]
    raise ConfigError(f"unknown state generator {kind!r}")


def _check(name: str, passed: bool, witness) -> dict:
    return {"name": name, "passed": bool(passed), "witness": witness}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def preservation_residual(T: GridMap, phi: State, rng: np.random.Generator, samples: int) -> float:
    """``max |phi(T(h)) - phi(h)| / ||h||`` over random elements ``h``."""
    w = phi.functional()
    worst = 0.0
    for _ in range(samples):
        h = MatrixFunction(phi.grid, rng.standard_normal((phi.m, phi.n, phi.n)) + 1j * rng.standard_normal((phi.m, phi.n, phi.n)))
        diff = np.einsum("kab,kba->", w, T.apply(h).values - h.values)
        worst = max(worst, abs(diff) / sup_norm(h))
    return float(worst)


def _approximate_one(label: str, phi: State, cfg: dict, checks: list, rows: list, stages: list, timings: dict) -> bool:
    """Run the eps ladder on one state; returns False if the state was rejected."""
    tol = cfg["tol"]
    seed = int(cfg["seed"])
    F = presets.function_family(cfg["functions"], phi.grid)
    mine = []
    t_state = time.perf_counter()
    for eps in cfg["eps"]:
        tag = f"{label},eps={eps}"
        try:
            T, d = build_T(phi, F, float(eps), seed=seed)
        except NotGridFaithful as exc:
            checks.append(_check(f"grid_faithful[{tag}]", False, {"error": "NotGridFaithful", "detail": str(exc)}))
            return False
        rep = verify_ucp(T, tol["ucp"])
        pres = preservation_residual(T, phi, np.random.default_rng([seed, 1]), int(cfg["samples"]))
        rank = numerical_rank(T, tol["rank_cutoff"]) if T.m * phi.n**2 <= 4096 else None
        stages.append({"state": label, "eps": eps, "diagnostics": d.to_dict(), "ucp": rep._asdict(),
                       "preservation_residual": pres, "rank": rank})
        checks += [
            _check(f"ucp[{tag}]", rep.is_ucp, {"unitality": rep.unitality_defect, "choi_min": rep.min_choi_eigenvalue}),
            _check(f"preservation[{tag}]", pres <= tol["preservation"], pres),
            _check(f"probe_defect[{tag}]", d.probe_defect <= eps, d.probe_defect),
            _check(f"matrix_probe_defect[{tag}]", d.matrix_probe_defect <= sandwich_defect_bound(eps), d.matrix_probe_defect),
        ]
        if rank is not None:
            checks.append(_check(f"rank[{tag}]", rank <= d.rank_bound, {"rank": rank, "bound": d.rank_bound}))
        mine.append(
            {"state": label, "n": phi.n, "m": phi.m, "eps": eps, "cell_count": d.cell_count, "rank_bound": d.rank_bound,
             "rank": rank, "probe_defect": d.probe_defect, "matrix_probe_defect": d.matrix_probe_defect,
             "unitality_defect": rep.unitality_defect, "min_choi_eigenvalue": rep.min_choi_eigenvalue,
             "preservation_residual": pres}
        )
    timings[label] = time.perf_counter() - t_state
    # probe defects along the ladder, largest eps first
    ordered = sorted(mine, key=lambda r: -r["eps"])
    jumps = [b["probe_defect"] - a["probe_defect"] for a, b in zip(ordered, ordered[1:])]
    if jumps:
        checks.append(_check(f"ladder_nonincreasing[{label}]", max(jumps) <= 1e-12, {"largest_increase": max(jumps)}))
    rows += mine
    return True


def cmd_approximate(cfg: dict) -> tuple[dict, dict]:
    stages, checks, rows, timings = [], [], [], {}
    status = EXIT_OK
    for label, phi in _load_states(cfg["state"], int(cfg["seed"])):
        if not _approximate_one(label, phi, cfg, checks, rows, stages, timings):
            status = EXIT_PRECONDITION
    if status == EXIT_OK and not all(c["passed"] for c in checks):
        status = EXIT_FAIL
    return {"stages": stages, "checks": checks, "rows": rows, "status": status}, timings


APPROX_COLUMNS = (
    "state", "n", "m", "eps", "cell_count", "rank_bound", "rank", "probe_defect", "matrix_probe_defect",
    "unitality_defect", "min_choi_eigenvalue", "preservation_residual",
)


def cmd_counterexample(cfg: dict) -> tuple[dict, dict]:
    L, L0 = int(cfg["level"]), int(cfg["smooth_level"])
    if L0 < 1:
        raise PatternScaleError(f"need L > L0 >= 1, got L={L}, L0={L0}")
    pattern = balanced_pattern(L, L0)
    phi = rudin_state(pattern)
    theta = int(cfg["theta"])
    tol = cfg["tol"]["chain"]
    timings, checks, certs = {}, [], []

    t0 = time.perf_counter()
    D = BlockFormMap.from_gridmap(expectation_family(phi, L0, 0.0))
    one = np.ones(phi.m)
    e12 = np.einsum("ijkl,l->ijk", D.corners, one)[0, 1]
    checks.append(_check("identity_defect_e12", abs(np.max(np.abs(e12 - one)) - 1.0) <= 1e-12, float(np.max(np.abs(e12 - one)))))
    for name in cfg["f"]:
        f = presets.unit_function(name, phi.grid)
        for eps in cfg["eps"]:
            cert = verify_chain(D, phi, f, theta, float(eps), L0, tol=tol)
            retention = float(np.max(np.abs(D.corners[0, 1] @ f)))
            certs.append({"f": name, **cert.to_dict(), "retention": retention})
            checks.append(
                _check(f"certificate[f={name},eps={eps}]", cert.passed and cert.final_average <= 8 * eps,
                       {"final_average": cert.final_average, "bound": 8 * eps})
            )
            checks.append(_check(f"retention_zero[f={name},eps={eps}]", retention == 0.0, retention))
    timings["certificates"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ident = BlockFormMap.from_gridmap(GridMap.identity(phi.grid, 2))
    try:
        verify_chain(ident, phi, presets.unit_function("ramp", phi.grid), theta, float(cfg["eps"][0]), L0, tol=tol)
        rejected = None
    except PreconditionError as exc:
        rejected = exc.hypothesis
    checks.append(_check("identity_rejected", rejected == "RangeSmoothness", rejected))
    timings["identity"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    f_scan = presets.unit_function(cfg["f"][0], phi.grid)
    rows = defect_tradeoff_scan(phi, L0, cfg["lambdas"], f_scan, eps=float(cfg["eps"][0]), theta=theta)
    timings["scan"] = time.perf_counter() - t0
    for r in rows:
        if r["lambda"] > 0:
            checks.append(
                _check(f"tradeoff[lambda={r['lambda']}]",
                       r["retention"] > 0 and r["preservation_defect"] > 0 and not r["pass"],
                       {"retention": r["retention"], "preservation_defect": r["preservation_defect"], "status": r["status"]})
            )
        else:
            checks.append(_check("tradeoff[lambda=0.0]", r["pass"], {"final_average": r["final_average"]}))
    status = EXIT_OK if all(c["passed"] for c in checks) else EXIT_FAIL
    return {"certificates": certs, "checks": checks, "rows": rows, "status": status}, timings


def cmd_selftest(cfg: dict) -> tuple[dict, dict]:
    checks, timings = run_selftest(int(cfg["seed"]))
    status = EXIT_OK if all(c["passed"] for c in checks) else EXIT_FAIL
    return {"checks": checks, "status": status}, timings


COMMANDS = {"approximate": cmd_approximate, "counterexample": cmd_counterexample, "selftest": cmd_selftest}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpapprox", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", default="cpapprox-out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tol", action="append", metavar="NAME=VALUE", help=f"override a tolerance {sorted(DEFAULT_TOLS)}")

    a = sub.add_parser("approximate", help="build approximating maps over an eps ladder")
    common(a)
    a.add_argument("--eps", type=float, action="append", help="tolerance (repeatable)")
    a.add_argument("--state", help="State JSON file (default: bundled demo state)")

    c = sub.add_parser("counterexample", help="certify the obstruction for the two-corner pattern state")
    common(c)
    c.add_argument("--eps", type=float, action="append")
    c.add_argument("--level", type=int, help="grid level L (m = 2^L)")
    c.add_argument("--smooth-level", type=int, dest="smooth_level", help="balance level L0")

    s = sub.add_parser("selftest", help="run the reduced property suite")
    common(s)
    return p


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    out = Path(args.out)
    t_start = time.perf_counter()
    try:
        cfg = build_config(args)
        result, timings = COMMANDS[args.command](cfg)
    except (ConfigError, PatternScaleError, PreconditionError, KeyError, OSError, ValueError) as exc:
        cfg = locals().get("cfg", {"command": args.command})
        result = {"checks": [_check("preconditions", False, {"error": type(exc).__name__, "detail": str(exc)})],
                  "status": EXIT_PRECONDITION}
        timings = {}
    timings["total"] = time.perf_counter() - t_start
    status = result.pop("status")
    report = {"version": __version__, "config": cfg, **result, "exit_code": status,
              "passed": status == EXIT_OK, "timings": timings}
    report["report_hash"] = io.report_hash(report)

    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(io.dumps(report) + "\n")
    rows = result.get("rows")
    if rows is not None and args.command == "approximate":
        io.write_csv(out / "approximate.csv", rows, APPROX_COLUMNS)
    elif rows is not None and args.command == "counterexample":
        io.write_csv(out / "tradeoff.csv", rows, SCAN_COLUMNS)
    for c in report["checks"]:
        if not c["passed"]:
            print(f"FAIL {c['name']}: {json.dumps(io.to_jsonable(c['witness']))[:400]}", file=sys.stderr)
    print(f"{args.command}: {'pass' if status == EXIT_OK else 'fail'} (exit {status}); report {out / 'report.json'}")
    return status


def main() -> None:  # pragma: no cover
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
