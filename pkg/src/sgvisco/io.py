"""Config files, binary snapshots and CSV/JSON outputs.

Config files are INI-style (``key = value`` under ``[section]`` headers).
Every key is optional except ``[grid] n``; unknown sections or keys are
rejected with the offending line number.

Snapshot layout (all little-endian)::

    bytes 0-4   magic b"VSGV1"
    byte  5     endianness tag b"L"
    bytes 6-17  uint32 d, n, rank
    bytes 18-25 float64 t
    payload     float64 samples, row-major over (grid..., component)

``rank`` is the tensor rank of the field (0 scalar, 1 vector, 2 matrix);
rank 3 marks a state, stored as the 2d components of y followed by u.
"""
from __future__ import annotations

import configparser
import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import spectral as sp
from .diagnostics import DiagnosticsRecord
from .energy import KINDS, EnergyModel, make_model
from .evolution import SCHEMES, SolverConfig, State, init_state
from .experiments import INITIAL_KINDS, initial_data


class ConfigError(ValueError):
    """Invalid config file; the message names the section, key and line."""


class SnapshotError(ValueError):
    """Malformed snapshot file or a snapshot that does not match the grid."""


# ---------------------------------------------------------------------------
# config


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


MODEL_PARAMS = tuple(f.name for f in fields(EnergyModel) if f.name not in ("kind", "d"))

# section -> key -> (parser, default)
SCHEMA = {
    "grid": {"d": (int, 2), "n": (int, None), "cutoff": (_optional_int, None)},
    "model": {"kind": (str, "double_well"), **{k: (float, None) for k in MODEL_PARAMS}},
    "physics": {"nu": (float, 1.0), "delta": (float, 0.01)},
    "time": {"dt": (float, 1e-3), "t_end": (float, 1.0), "scheme": (str, "imex_cnab2"),
             "dealias": (str, "two_thirds")},
    "initial": {"kind": (str, "two_mode"), "amplitude": (float, 0.5), "width": (float, 0.15),
                "band": (float, 1.0), "seed": (int, 0), "file": (str, None)},
    "output": {"record_every": (int, 1), "snapshot_every": (int, 0), "out_dir": (str, "out"),
               "lr_exponents": (_floats, ()), "assert_inequalities": (_bool, False)},
    "study": {"values": (_floats, ()), "r_list": (_floats, (2.0,)),
              "sample_times": (_floats, (0.25, 0.5, 1.0)), "reference": (float, 0.0),
              "roughening": (float, 0.0), "eps": (float, 0.1), "max_workers": (int, 1),
              "cutoffs": (_ints, ()), "dts": (_floats, ()), "resolutions": (_ints, ()),
              "spatial_dt": (float, None), "sharpness": (float, 0.0)},
}


@dataclass
class RunConfig:
    """Validated contents of a config file, one dict per section."""

    grid: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    physics: dict = field(default_factory=dict)
    time: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    study: dict = field(default_factory=dict)
    source: str | None = field(default=None, compare=False)

    def solver_config(self) -> SolverConfig:
        g = self.grid
        grid = sp.SpectralGrid(g["d"], g["n"], g["cutoff"])
        overrides = {k: v for k, v in self.model.items() if k != "kind" and v is not None}
        model = make_model(self.model["kind"], g["d"], **overrides)
        return SolverConfig(grid, model, nu=self.physics["nu"], delta=self.physics["delta"],
                            dt=self.time["dt"], t_end=self.time["t_end"],
                            scheme=self.time["scheme"], dealias=self.time["dealias"])

    def initial_fields(self, grid: sp.SpectralGrid):
        """Real-space (u0, y0) for the configured preset or snapshot file."""
        ini = self.initial
        if ini["kind"] == "file":
            t, rank, data = read_snapshot(ini["file"], grid)
            if rank == 3:
                return data[grid.d:], data[:grid.d]
            if rank == 1:
                return np.zeros_like(data), data
            raise SnapshotError(f"{ini['file']}: initial data needs a vector or state snapshot, got rank {rank}")
        return initial_data(grid, ini["kind"], amplitude=ini["amplitude"], width=ini["width"],
                            band=ini["band"], seed=ini["seed"])

    def initial_state(self, grid: sp.SpectralGrid) -> State:
        u0, y0 = self.initial_fields(grid)
        return init_state(grid, u0, y0)


def _line_index(text: str) -> dict:
    """(section, key) -> line number; (section, None) for the header line."""
    index, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            index.setdefault((section, None), no)
        elif section is not None and ("=" in line or ":" in line):
            key = line.split("=", 1)[0] if "=" in line else line.split(":", 1)[0]
            index.setdefault((section, key.strip()), no)
    return index


def _where(lines, section, key=None, source="<config>"):
    no = lines.get((section, key)) or lines.get((section, None))
    return f"{source}:{no}: " if no else f"{source}: "


def _finite(*values):
    return all(math.isfinite(v) for v in values)


def _validate(cfg: RunConfig, lines, source):
    def fail(section, key, msg):
        raise ConfigError(f"{_where(lines, section, key, source)}[{section}].{key}: {msg}")

    g = cfg.grid
    if g["n"] is None:
        fail("grid", "n", "missing required key")
    if g["d"] not in (1, 2, 3):
        fail("grid", "d", f"must be 1, 2 or 3, got {g['d']}")
    if g["n"] < 4 or g["n"] % 2:
        fail("grid", "n", f"must be an even integer >= 4, got {g['n']}")
    if g["cutoff"] is not None and not 0 <= g["cutoff"] <= g["n"] // 2 - 1:
        fail("grid", "cutoff", f"must lie in [0, {g['n'] // 2 - 1}], got {g['cutoff']}")
    if cfg.model["kind"] not in KINDS:
        fail("model", "kind", f"unknown model {cfg.model['kind']!r}; expected one of {KINDS}")
    for key in MODEL_PARAMS:
        v = cfg.model[key]
        if v is not None and not (_finite(v) and v >= 0):
            fail("model", key, f"must be finite and >= 0, got {v}")
    for key in ("nu", "delta"):
        v = cfg.physics[key]
        if not (_finite(v) and v >= 0):
            fail("physics", key, f"must be finite and >= 0, got {v}")
    t = cfg.time
    if not (_finite(t["dt"]) and t["dt"] > 0):
        fail("time", "dt", f"must be finite and > 0, got {t['dt']}")
    if not (_finite(t["t_end"]) and t["t_end"] >= 0):
        fail("time", "t_end", f"must be finite and >= 0, got {t['t_end']}")
    if t["scheme"] not in SCHEMES:
        fail("time", "scheme", f"unknown scheme {t['scheme']!r}; expected one of {SCHEMES}")
    if t["dealias"] not in sp.DEALIAS_RULES:
        fail("time", "dealias", f"unknown rule {t['dealias']!r}; expected one of {sp.DEALIAS_RULES}")
    ini = cfg.initial
    if ini["kind"] not in INITIAL_KINDS + ("file",):
        fail("initial", "kind", f"unknown preset {ini['kind']!r}")
    if ini["kind"] == "file":
        if not ini["file"]:
            fail("initial", "file", "required when kind = file")
        if not Path(ini["file"]).is_file():
            fail("initial", "file", f"no such file {ini['file']!r}")
    for key in ("amplitude", "width", "band"):
        if not _finite(ini[key]):
            fail("initial", key, "must be finite")
    out = cfg.output
    if out["record_every"] < 1:
        fail("output", "record_every", "must be >= 1")
    if out["snapshot_every"] < 0:
        fail("output", "snapshot_every", "must be >= 0")
    if any(not r >= 1 for r in out["lr_exponents"]):
        fail("output", "lr_exponents", "exponents must be >= 1")
    s = cfg.study
    if any(not (_finite(v) and v > 0) for v in s["values"]):
        fail("study", "values", "swept values must be finite and > 0")
    if any(not (_finite(v) and v >= 0) for v in s["sample_times"]):
        fail("study", "sample_times", "must be finite and >= 0")
    if any(not r >= 1 for r in s["r_list"]):
        fail("study", "r_list", "exponents must be >= 1")
    if s["max_workers"] < 1:
        fail("study", "max_workers", "must be >= 1")


def parse_config_text(text: str, source: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (the model shift is K)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines = _line_index(text)
    cfg = RunConfig(source=source)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{_where(lines, section, None, source)}unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{_where(lines, section, key, source)}unknown key [{section}].{key}")
    for section, keys in SCHEMA.items():
        values = {}
        for key, (conv, default) in keys.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    values[key] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"{_where(lines, section, key, source)}[{section}].{key}: "
                                      f"cannot parse {raw!r} ({exc})") from exc
            else:
                values[key] = default
        setattr(cfg, section, values)
    if cfg.initial["file"] and base_dir is not None:
        p = Path(cfg.initial["file"])
        cfg.initial["file"] = str(p if p.is_absolute() else (base_dir / p).resolve())
    _validate(cfg, lines, source)
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a config file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror or exc})") from exc
    return parse_config_text(text, str(path), path.resolve().parent)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    """INI text that parses back to an equal config (unset keys are omitted)."""
    out = []
    for section in SCHEMA:
        values = getattr(cfg, section)
        out.append(f"[{section}]")
        for key, v in values.items():
            if v is None or (isinstance(v, tuple) and not v and section == "study"):
                continue
            out.append(f"{key} = {_format_value(v)}")
        out.append("")
    return "\n".join(out)


def default_config(n: int = 64, d: int = 2) -> RunConfig:
    return parse_config_text(f"[grid]\nd = {d}\nn = {n}\n")


# ---------------------------------------------------------------------------
# snapshots

MAGIC = b"VSGV1"
_HEADER = struct.Struct("<5sc3Id")
STATE_RANK = 3


def _components(d: int, rank: int) -> int:
    if rank == STATE_RANK:
        return 2 * d
    if rank in (0, 1, 2):
        return d**rank
    raise SnapshotError(f"unsupported rank {rank}")


def encode_snapshot(grid: sp.SpectralGrid, data, t: float = 0.0, rank: int | None = None) -> bytes:
    """Bytes for a real field of shape (*comp, *grid) or a :class:`State`.

    ``rank`` is inferred from the shape; pass ``STATE_RANK`` to re-encode the
    stacked (y, u) array that :func:`decode_snapshot` returns for a state.
    """
    if isinstance(data, State):
        t = data.t
        arr = np.concatenate([sp.inverse(grid, data.y_hat), sp.inverse(grid, data.u_hat)])
        rank = STATE_RANK
    else:
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            raise SnapshotError("snapshot fields must be real; got complex (spectral?) data")
        arr = arr.astype(float, copy=False)
        if arr.shape[arr.ndim - grid.d:] != grid.shape:
            raise SnapshotError(f"field shape {arr.shape} is not real-space on grid {grid.shape}")
        if rank is None:
            rank = grid.rank(arr)
    comps = _components(grid.d, rank)
    flat = np.reshape(arr, (comps,) + grid.shape)
    payload = np.ascontiguousarray(np.moveaxis(flat, 0, -1), dtype="<f8").tobytes()
    return _HEADER.pack(MAGIC, b"L", grid.d, grid.n, rank, float(t)) + payload


def decode_snapshot(blob: bytes, grid: sp.SpectralGrid | None = None):
    """(t, rank, array) with the array in (*comp, *grid) layout."""
    if len(blob) < _HEADER.size:
        raise SnapshotError("truncated header")
    magic, endian, d, n, rank, t = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if endian != b"L":
        raise SnapshotError(f"unsupported endianness tag {endian!r}")
    if grid is not None and (d, n) != (grid.d, grid.n):
        raise SnapshotError(f"snapshot grid (d={d}, n={n}) does not match (d={grid.d}, n={grid.n})")
    comps = _components(d, rank)
    expected = 8 * n**d * comps
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise SnapshotError(f"payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f8").reshape((n,) * d + (comps,))
    arr = np.moveaxis(arr, -1, 0).astype(float)
    if rank == 0:
        arr = arr[0]
    elif rank == 2:
        arr = arr.reshape((d, d) + (n,) * d)
    return t, rank, arr


def write_snapshot(path, grid: sp.SpectralGrid, data, t: float = 0.0) -> None:
    Path(path).write_bytes(encode_snapshot(grid, data, t))


def read_snapshot(path, grid: sp.SpectralGrid | None = None):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise SnapshotError(f"{path}: {exc.strerror or exc}") from exc
    return decode_snapshot(blob, grid)


def read_state(path, grid: sp.SpectralGrid) -> State:
    t, rank, arr = read_snapshot(path, grid)
    if rank != STATE_RANK:
        raise SnapshotError(f"{path}: expected a state snapshot, got rank {rank}")
    return State(t, sp.forward(grid, arr[:grid.d]), sp.forward(grid, arr[grid.d:]))


# ---------------------------------------------------------------------------
# CSV / JSON

DIAG_COLUMNS = ("t", "E", "diss_visc_cum", "G", "diss_struct_cum", "src_struct_cum", "curl_res",
                "l2_u", "l2_gradF", "l2_lapF")


def fmt(x: float) -> str:
    return "%.17g" % x


def _lr_label(r: float) -> str:
    return "lr_F_inf" if math.isinf(r) else f"lr_F_{r:g}"


class DiagnosticsWriter:
    """Streams records to a CSV file; columns are fixed by the first record."""

    def __init__(self, path, lr_exponents=()):
        self.path = Path(path)
        self.lr_exponents = tuple(lr_exponents)
        self.columns = DIAG_COLUMNS + tuple(_lr_label(r) for r in self.lr_exponents)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(",".join(self.columns) + "\n")
        self._last_t = -math.inf

    def write(self, rec: DiagnosticsRecord) -> None:
        if not rec.t > self._last_t:
            raise ValueError(f"diagnostics times must increase: {rec.t} after {self._last_t}")
        self._last_t = rec.t
        row = [getattr(rec, c) for c in DIAG_COLUMNS] + [rec.lr_norms[r] for r in self.lr_exponents]
        self._fh.write(",".join(fmt(v) for v in row) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_diagnostics(path, records, lr_exponents=()) -> None:
    with DiagnosticsWriter(path, lr_exponents) as w:
        for rec in records:
            w.write(rec)


def read_diagnostics(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if any(len(r) != len(header) for r in body):
        raise ValueError(f"{path}: ragged rows")
    return header, np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))


def write_table(path, header, rows) -> None:
    """Plain CSV with floats at full precision."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def write_study(out_dir, result) -> tuple[Path, Path]:
    """``study_<param>.csv`` (one row per value, t, r) and ``fits_<param>.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [(row["param"], row["t"], row["r"], row["error"], result.u_errors[(row["param"], row["t"])])
            for row in result.rows]
    csv_path = out_dir / f"study_{result.param}.csv"
    write_table(csv_path, (result.param, "t", "r", "error_F", "error_u"), rows)
    json_path = out_dir / f"fits_{result.param}.json"
    json_path.write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
