"""JSON encoding of grid objects; complex numbers are written as ``[re, im]``."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .blockmap import GridMap
from .gridalg import Grid, MatrixFunction
from .reformulator import BlockFormMap
from .states import PatternSet, State, make_state


def encode_complex(a) -> list:
    """Nested lists with each entry replaced by ``[re, im]``."""
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def decode_complex(data) -> np.ndarray:
    a = np.asarray(data, dtype=float)
    if a.shape[-1] != 2:
        raise ValueError("complex arrays must end in a length-2 [re, im] axis")
    return a[..., 0] + 1j * a[..., 1]


def matrix_function_to_dict(h: MatrixFunction) -> dict:
    return {"type": "MatrixFunction", "n": h.n, "m": h.m, "values": encode_complex(h.values)}


def matrix_function_from_dict(d: dict) -> MatrixFunction:
    return MatrixFunction(Grid(int(d["m"])), decode_complex(d["values"]))


def state_to_dict(phi: State) -> dict:
    return {"type": "State", "n": phi.n, "m": phi.m, "mu": [float(x) for x in phi.mu], "g": encode_complex(phi.g)}


def state_from_dict(d: dict) -> State:
    return make_state(np.asarray(d["mu"], dtype=float), decode_complex(d["g"]), Grid(int(d["m"])))


def pattern_to_dict(p: PatternSet) -> dict:
    return {"type": "PatternSet", "L": p.level, "L0": p.balance_level, "members": [int(i) for i in p.members]}


def pattern_from_dict(d: dict) -> PatternSet:
    return PatternSet(Grid.dyadic(int(d["L"])), np.asarray(d["members"], dtype=int), int(d["L0"]))


def gridmap_to_dict(S: GridMap) -> dict:
    comps = []
    for rows, cols, ops in S.components():
        for r, k in enumerate(rows):
            for c, j in enumerate(cols):
                if np.any(ops[r, c]):
                    comps.append({"k": int(k), "j": int(j), "matrix": encode_complex(ops[r, c])})
    comps.sort(key=lambda e: (e["k"], e["j"]))
    return {"type": "GridMap", "n": S.n, "m": S.m, "structure": S.structure, "components": comps}


def gridmap_from_dict(d: dict) -> GridMap:
    comps = {(int(c["k"]), int(c["j"])): decode_complex(c["matrix"]) for c in d["components"]}
    return GridMap.from_components(Grid(int(d["m"])), int(d["n"]), comps, structure=d.get("structure", "sparse"))


def blockform_to_dict(B: BlockFormMap) -> dict:
    return {"type": "BlockFormMap", "n": B.n, "m": B.m, "corners": encode_complex(B.corners)}


def blockform_from_dict(d: dict) -> BlockFormMap:
    return BlockFormMap(Grid(int(d["m"])), decode_complex(d["corners"]))


_LOADERS = {
    "MatrixFunction": matrix_function_from_dict,
    "State": state_from_dict,
    "PatternSet": pattern_from_dict,
    "GridMap": gridmap_from_dict,
    "BlockFormMap": blockform_from_dict,
}


def load(path) -> object:
    d = json.loads(Path(path).read_text())
    return _LOADERS[d["type"]](d)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def to_jsonable(x):
    """Plain JSON types; non-finite floats become the strings ``"inf"``, ``"-inf"``, ``"nan"``."""
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (complex, np.complexfloating)):
        return [to_jsonable(x.real), to_jsonable(x.imag)]
    return x


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2)


def report_hash(report: dict) -> str:
    """SHA-256 of the canonical report with ``timings`` and the hash field removed."""
    body = {k: v for k, v in report.items() if k not in ("timings", "report_hash")}
    return hashlib.sha256(json.dumps(to_jsonable(body), sort_keys=True).encode()).hexdigest()


def write_csv(path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_csv_cell(r.get(c)) for c in columns])


def _csv_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v
