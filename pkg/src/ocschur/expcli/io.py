"""Experiment configuration, result rows and CSV/JSON emission."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

from ocschur.errors import ContractError

SCHEMA_VERSION = 1
KINDS = ("phi_sweep", "scalability", "precond_compare", "accuracy_cliff")
FORMATS = ("csv", "json")
ELASTIC_KINDS = ("precond_compare", "accuracy_cliff")
# fields that do not change results and so are left out of the config hash
_HASH_EXCLUDED = ("output", "format", "threads", "allow_empty")

DEFAULT_PHIS = {
    ("phi_sweep", "heat"): [2e-2, 2e-3, 2e-4, 2e-5, 2e-6, 2e-7, 2e-8, 2e-9, 2e-10, 2e-11, 2e-12],
    ("phi_sweep", "elasticity"): [1e-7, 1e-8, 1e-9, 1e-10, 1e-11, 1e-12],
    ("precond_compare", "elasticity"): [1e-7, 1e-8, 1e-9, 1e-10, 1e-11, 1e-12, 1e-13, 1e-14],
    ("precond_compare", "heat"): [1e-2, 1e-4, 1e-6, 1e-8],
    ("accuracy_cliff", "elasticity"): [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
    ("scalability", "heat"): [2e-8],
    ("scalability", "elasticity"): [1e-10],
}
DEFAULT_N = {"phi_sweep": 32, "scalability": 32, "precond_compare": 8, "accuracy_cliff": 24}
DEFAULT_TOL = {"phi_sweep": 1e-8, "scalability": 1e-8, "precond_compare": 1e-10,
               "accuracy_cliff": 1e-12}


def is_timing_column(name):
    return name.endswith("_time") or name in ("time", "wall_time")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that defines one experiment run.

    ``phis`` must be strictly positive and sorted in descending order.  For
    elasticity, ``units`` selects pascals or megapascals for the modulus and
    load (this changes the meaning of ``phi`` by a factor 1e12).
    """

    kind: str
    physics: str = ""
    n: int = 0
    sizes: tuple = ()
    s_x: int = 0
    s_y: int = 0
    h_ratio: int = 8
    phis: tuple = None
    tol: float = 0.0
    inner_tol: float = 1e-12
    block_tol: float = 1e-10
    max_iter: int = 1000
    augment: bool = True
    inner_solver: str = ""
    units: str = ""
    seed: int = 0
    deterministic: bool = False
    threads: int = 1
    output: str = ""
    format: str = "csv"
    allow_empty: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"kind must be one of {KINDS}, got {self.kind!r}")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if not self.physics:
            set_("physics", "elasticity" if self.kind in ELASTIC_KINDS else "heat")
        if self.physics not in ("heat", "elasticity"):
            raise ContractError("physics must be 'heat' or 'elasticity'")
        if self.format not in FORMATS:
            raise ContractError(f"format must be one of {FORMATS}")
        if not self.inner_solver:
            set_("inner_solver", "direct" if self.kind == "accuracy_cliff" else "feti")
        if self.inner_solver not in ("feti", "direct"):
            raise ContractError("inner_solver must be 'feti' or 'direct'")
        if self.kind == "accuracy_cliff" and self.physics != "elasticity":
            raise ContractError("the accuracy-cliff experiment uses elasticity")
        phis = DEFAULT_PHIS.get((self.kind, self.physics), [2e-8]) if self.phis is None else self.phis
        phis = tuple(float(p) for p in phis)
        if any(not p > 0 for p in phis):
            raise ContractError("phi values must be strictly positive")
        if any(a <= b for a, b in zip(phis, phis[1:])):
            raise ContractError("phi values must be sorted in strictly descending order")
        set_("phis", phis)
        if not self.n:
            set_("n", DEFAULT_N[self.kind])
        if self.kind == "scalability" and not self.sizes:
            set_("sizes", (16, 32, 64) if self.physics == "heat" else (8, 16))
        set_("sizes", tuple(int(s) for s in self.sizes))
        if not self.units:
            set_("units", "MPa" if self.kind == "accuracy_cliff" else "Pa")
        if self.units not in ("Pa", "MPa"):
            raise ContractError("units must be 'Pa' or 'MPa'")
        if self.kind != "scalability" and not (self.s_x and self.s_y):
            hx = 3 * self.n if self.physics == "elasticity" else self.n
            r = self.h_ratio
            if hx % r or self.n % r:
                raise ContractError(f"h_ratio {r} does not divide the mesh; give s_x and s_y")
            set_("s_x", hx // r)
            set_("s_y", self.n // r)
        if not self.tol:
            set_("tol", DEFAULT_TOL[self.kind])
        if not all(0 < t < 1 for t in (self.tol, self.inner_tol, self.block_tol)):
            raise ContractError("tolerances must lie in (0, 1)")
        if self.threads < 1:
            raise ContractError("threads must be >= 1")

    @classmethod
    def from_dict(cls, d, **overrides):
        d = {**d, **{k: v for k, v in overrides.items() if v is not None}}
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        for key in ("phis", "sizes"):
            if isinstance(d.get(key), list):
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path, **overrides):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ContractError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data, **overrides)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["phis"] = list(self.phis)
        d["sizes"] = list(self.sizes)
        return d

    def config_hash(self):
        d = {k: v for k, v in self.to_dict().items() if k not in _HASH_EXCLUDED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def format_value(v):
    """CSV cell text; floats keep 17 significant digits and ``None`` becomes ``""``."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        s = format(v, ".17g")
        if all(ch not in s for ch in ".en"):
            s += ".0"
        return s
    if v is None:
        return ""
    return str(v)


def parse_value(s):
    if s == "true":
        return True
    if s == "false":
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def ordered_columns(rows, preferred=()):
    cols = [c for c in preferred if any(c in r for r in rows)]
    extra = sorted({k for r in rows for k in r} - set(cols))
    return cols + extra


def emit(rows, fmt, path=None, config=None, columns=(), allow_empty=False):
    """Serialize rows; returns the text and writes it to ``path`` when given.

    Raises
    ------
    ContractError
        For empty ``rows`` unless ``allow_empty``.
    OSError
        With the path in the message if the file cannot be written.
    """
    rows = list(rows)
    if not rows and not allow_empty:
        raise ContractError("refusing to write an empty result set (set allow_empty)")
    if fmt not in FORMATS:
        raise ContractError(f"format must be one of {FORMATS}")
    chash = config.config_hash() if config is not None else ""
    cols = ordered_columns(rows, columns)
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(f"# config_hash={chash} schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([format_value(r.get(c)) for c in cols])
        text = buf.getvalue()
    else:
        doc = {"schema_version": SCHEMA_VERSION, "config_hash": chash,
               "config": config.to_dict() if config is not None else None,
               "columns": cols, "rows": rows}
        text = json.dumps(doc, indent=1) + "\n"
    if path:
        p = Path(path)
        try:
            p.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write results to {p}: {exc}") from exc
    return text


def parse(text, fmt=None):
    """Inverse of :func:`emit`; returns ``(rows, config_hash)``."""
    fmt = fmt or ("json" if text.lstrip().startswith("{") else "csv")
    if fmt == "json":
        doc = json.loads(text)
        return doc["rows"], doc.get("config_hash", "")
    lines = text.splitlines()
    chash = ""
    if lines and lines[0].startswith("#"):
        for tok in lines[0][1:].split():
            if tok.startswith("config_hash="):
                chash = tok.split("=", 1)[1]
        lines = lines[1:]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None:
        return [], chash
    rows = []
    for rec in reader:
        rows.append({k: parse_value(v) for k, v in zip(header, rec)})
    return rows, chash


def read_results(path):
    p = Path(path)
    if not p.exists():
        return [], ""
    return parse(p.read_text())


def strip_timing(rows):
    """Rows without wall-time columns, for determinism comparisons."""
    return [{k: v for k, v in r.items() if not is_timing_column(k)} for r in rows]
