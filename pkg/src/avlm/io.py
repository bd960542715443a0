"""Ingestion, checkpoints, trajectory output and config files."""

from __future__ import annotations

import csv
import difflib
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import IO, Iterator, Optional, Sequence

import numpy as np

from avlm.asymptotic import SandwichAccumulator
from avlm.regression import DesignPoint, SufficientStats

CHECKPOINT_VERSION = 1


class InputError(ValueError):
    """Malformed input data, config or checkpoint."""


class CheckpointError(InputError):
    pass


# ---------------------------------------------------------------- numbers

def fmt(x: float) -> str:
    """17-significant-digit text; ``inf``, ``-inf`` and ``nan`` as literal tokens."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def parse_float(text: str) -> float:
    return float(text)


# ---------------------------------------------------------------- ingestion

@dataclass(frozen=True)
class Schema:
    """Maps input columns to model roles.

    Parameters
    ----------
    y : str
        Outcome column.
    x : sequence of str
        Nuisance covariates.
    z : sequence of str
        Covariates under test.
    treatment : str, optional
        0/1 assignment indicator (used by the ATE command).
    pre : sequence of str
        Pre-treatment covariates; treated as nuisance covariates.
    intercept : bool
        Prepend a constant column to ``x``.
    """

    y: str = "y"
    x: Sequence[str] = ()
    z: Sequence[str] = ()
    treatment: Optional[str] = None
    pre: Sequence[str] = ()
    intercept: bool = False

    @property
    def columns(self) -> list[str]:
        cols = [self.y, *self.x, *self.pre, *self.z]
        if self.treatment:
            cols.append(self.treatment)
        return cols


@dataclass(frozen=True)
class Record:
    """One parsed input row, before it is turned into a design point."""

    line: int
    y: float
    x: np.ndarray
    z: np.ndarray
    treatment: Optional[float] = None

    def point(self) -> DesignPoint:
        return DesignPoint(self.x, self.z, self.y)


def _number(text, line, col) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise InputError(f"line {line}: non-numeric value {text!r} in column {col!r}") from None
    if not math.isfinite(v):
        raise InputError(f"line {line}: non-finite value {text!r} in column {col!r}")
    return v


def _missing(col, available):
    available = list(available)
    hint = [a for a in available if a.lower() == col.lower()] or difflib.get_close_matches(col, available, n=1)
    extra = f" (did you mean {hint[0]!r}?)" if hint else ""
    return InputError(f"missing column {col!r}{extra}")


def _build(line, get, schema: Schema) -> Record:
    y = get(schema.y)
    x = [get(c) for c in schema.x] + [get(c) for c in schema.pre]
    if schema.intercept:
        x = [1.0] + x
    z = [get(c) for c in schema.z]
    t = get(schema.treatment) if schema.treatment else None
    return Record(line, y, np.array(x, dtype=float), np.array(z, dtype=float), t)


def _csv_records(fh: IO[str], schema: Schema) -> Iterator[Record]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        return
    header = [h.strip() for h in header]
    index = {h: i for i, h in enumerate(header)}
    for col in schema.columns:
        if col not in index:
            raise _missing(col, header)
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"line {line}: expected {len(header)} fields, found {len(row)}")
        yield _build(line, lambda c: _number(row[index[c]].strip(), line, c), schema)


def _ndjson_records(fh: IO[str], schema: Schema) -> Iterator[Record]:
    for line, text in enumerate(fh, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"line {line}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise InputError(f"line {line}: expected a JSON object")
        if isinstance(obj.get("x"), list) or isinstance(obj.get("z"), list):
            # array form {"y": r, "x": [...], "z": [...]}
            for key in ("y", "z"):
                if key not in obj:
                    raise InputError(f"line {line}: missing field {key!r}")
            xs = obj.get("x", [])
            zs = obj["z"] if isinstance(obj["z"], list) else [obj["z"]]
            x = [_number(v, line, "x") for v in xs]
            if schema.intercept:
                x = [1.0] + x
            t = _number(obj[schema.treatment], line, schema.treatment) if schema.treatment else None
            yield Record(line, _number(obj["y"], line, "y"), np.array(x, dtype=float),
                         np.array([_number(v, line, "z") for v in zs], dtype=float), t)
            continue

        def get(c, obj=obj, line=line):
            if c not in obj:
                raise _missing(c, obj.keys()) from None
            return _number(obj[c], line, c)

        try:
            yield _build(line, get, schema)
        except InputError as exc:
            if str(exc).startswith("missing column"):
                raise InputError(f"line {line}: {exc}") from None
            raise


def detect_format(path: str) -> str:
    low = path.lower()
    if low.endswith((".ndjson", ".jsonl", ".json")):
        return "ndjson"
    return "csv"


def read_records(source, schema: Schema, fmt_name: Optional[str] = None) -> Iterator[Record]:
    """Parse rows in file order. ``source`` is a path, ``"-"`` for stdin, or a text stream.

    Raises
    ------
    InputError
        On a missing column, non-numeric cell, ragged row or bad JSON, with
        the offending line number. Nothing is skipped silently.
    """
    if isinstance(source, str):
        fmt_name = fmt_name or detect_format(source)
        if source == "-":
            yield from read_records(sys.stdin, schema, fmt_name)
            return
        try:
            fh = open(source, newline="", encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot open {source}: {exc.strerror}") from None
        with fh:
            yield from read_records(fh, schema, fmt_name)
        return
    fmt_name = fmt_name or "csv"
    if fmt_name == "csv":
        yield from _csv_records(source, schema)
    elif fmt_name == "ndjson":
        yield from _ndjson_records(source, schema)
    else:
        raise InputError(f"unknown input format {fmt_name!r}")


def ingest(source, schema: Schema, fmt_name: Optional[str] = None) -> Iterator[DesignPoint]:
    """Stream of :class:`DesignPoint`. A treatment column, if mapped, is appended to ``z``."""
    for rec in read_records(source, schema, fmt_name):
        z = rec.z if rec.treatment is None else np.append(rec.z, rec.treatment)
        try:
            yield DesignPoint(rec.x, z, rec.y)
        except ValueError as exc:
            raise InputError(f"line {rec.line}: {exc}") from None


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    """Resumable stream state.

    ``stats`` carries both halves of every compensated sum so a resumed
    stream continues bit-for-bit.
    """

    stats: SufficientStats
    config: dict = field(default_factory=dict)
    p_running_min: float = 1.0
    tau: Optional[int] = None
    sandwich: Optional[SandwichAccumulator] = None
    version: int = CHECKPOINT_VERSION


def _upper(m: np.ndarray) -> list[str]:
    k = m.shape[0]
    return [fmt(m[i, j]) for i in range(k) for j in range(i, k)]


def _from_upper(vals, k, name) -> np.ndarray:
    if len(vals) != k * (k + 1) // 2:
        raise CheckpointError(f"checkpoint field {name!r} has {len(vals)} entries, expected {k * (k + 1) // 2}")
    m = np.zeros((k, k))
    it = iter(vals)
    for i in range(k):
        for j in range(i, k):
            m[i, j] = m[j, i] = float(next(it))
    return m


def checkpoint_to_dict(ck: Checkpoint) -> dict:
    st = ck.stats
    out = {
        "version": ck.version,
        "p": st.p,
        "d": st.d,
        "n": st.n,
        "gram": _upper(st.gram_hi),
        "cross": [fmt(v) for v in st.cross_hi],
        "yty": fmt(st.yty_pair[0]),
        "compensation": {
            "gram": _upper(st.gram_lo),
            "cross": [fmt(v) for v in st.cross_lo],
            "yty": fmt(st.yty_pair[1]),
        },
        "config": ck.config,
        "p_running_min": fmt(ck.p_running_min),
        "tau": ck.tau,
    }
    if ck.sandwich is not None:
        s = ck.sandwich
        out["sandwich"] = {
            "n": s.n,
            "m2": [fmt(v) for v in s.m2.ravel()],
            "m3": [fmt(v) for v in s.m3.ravel()],
            "m4": [fmt(v) for v in s.m4.ravel()],
        }
    return out


def checkpoint_from_dict(obj) -> Checkpoint:
    if not isinstance(obj, dict) or "version" not in obj:
        raise CheckpointError("corrupted checkpoint: no version field")
    if obj["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {obj['version']!r} is not supported (expected {CHECKPOINT_VERSION})"
        )
    try:
        p, d, n = int(obj["p"]), int(obj["d"]), int(obj["n"])
        k = p + d
        comp = obj["compensation"]
        cross = np.array([float(v) for v in obj["cross"]])
        cross_c = np.array([float(v) for v in comp["cross"]])
        if cross.shape != (k,) or cross_c.shape != (k,):
            raise CheckpointError("checkpoint cross has the wrong length")
        stats = SufficientStats(
            p, d, n, _from_upper(obj["gram"], k, "gram"), _from_upper(comp["gram"], k, "compensation.gram"),
            cross, cross_c, np.array([float(obj["yty"]), float(comp["yty"])]),
        )
        sandwich = None
        if obj.get("sandwich") is not None:
            sw = obj["sandwich"]
            sandwich = SandwichAccumulator.from_state(
                k, {key: [float(v) for v in sw[key]] if key != "n" else sw[key] for key in ("n", "m2", "m3", "m4")}
            )
        tau = obj.get("tau")
        return Checkpoint(stats, dict(obj.get("config", {})), float(obj["p_running_min"]),
                          None if tau is None else int(tau), sandwich, CHECKPOINT_VERSION)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupted checkpoint (version {CHECKPOINT_VERSION}): {exc!r}") from None


def save_checkpoint(path: str, ck: Checkpoint) -> None:
    """Write atomically (temp file then rename)."""
    text = json.dumps(checkpoint_to_dict(ck), indent=1, sort_keys=True) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupted checkpoint {path}: {exc.msg} at line {exc.lineno}") from None
    return checkpoint_from_dict(obj)


# ---------------------------------------------------------------- trajectories

@dataclass(frozen=True)
class TrajectoryRow:
    """Per-observation monitoring output. ``ci_lo``/``ci_hi`` are ``-inf``/``inf`` when unbounded."""

    n: int
    delta_hat: np.ndarray
    se: np.ndarray
    log_bf: float
    p_instant: float
    p_running_min: float
    ci_lo: np.ndarray
    ci_hi: np.ndarray


def trajectory_header(d: int) -> list[str]:
    def names(base):
        return [base] if d == 1 else [f"{base}_{j + 1}" for j in range(d)]

    return ["n", *names("delta_hat"), *names("se"), "log_bf", "p_instant", "p_running_min",
            *names("ci_lo"), *names("ci_hi")]


def trajectory_fields(row: TrajectoryRow) -> list[str]:
    return [str(row.n), *map(fmt, row.delta_hat), *map(fmt, row.se), fmt(row.log_bf),
            fmt(row.p_instant), fmt(row.p_running_min), *map(fmt, row.ci_lo), *map(fmt, row.ci_hi)]


class TrajectoryWriter:
    """CSV writer enforcing strictly increasing ``n``."""

    def __init__(self, fh: IO[str], d: int, header: bool = True):
        self._w = csv.writer(fh, lineterminator="\n")
        self._last = -1
        if header:
            self._w.writerow(trajectory_header(d))

    def write(self, row: TrajectoryRow):
        if row.n <= self._last:
            raise ValueError("trajectory rows must have strictly increasing n")
        self._last = row.n
        self._w.writerow(trajectory_fields(row))


def read_trajectory(path: str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_summary_csv(fh: IO[str], tables: Sequence[tuple[str, str, Sequence[tuple[int, float]]]]):
    """ECDF tables as CSV with columns ``n, ecdf, method, dgp``."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["n", "ecdf", "method", "dgp"])
    for method, dgp, rows in tables:
        for n, v in rows:
            w.writerow([n, fmt(v), method, dgp])


def write_samples_csv(fh: IO[str], samples, dgp: str, header: bool = True):
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(["seed", "replication", "tau", "censored", "method", "dgp"])
    for s in samples:
        w.writerow([s.seed, s.replication, s.tau, int(s.censored), s.method, dgp])


# ---------------------------------------------------------------- config files

def parse_config(text: str, origin: str = "<config>") -> dict[str, str]:
    """Parse flat ``key = value`` lines. ``#`` starts a comment; keys are case-sensitive."""
    out: dict[str, str] = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{origin}:{i}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InputError(f"{origin}:{i}: empty key")
        out[key.replace("-", "_")] = value
    return out


def load_config(path: str) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read(), path)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
