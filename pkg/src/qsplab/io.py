"""Configuration files, CSV tables, SVG charts and plain-text field dumps.

Config files are INI style (``key = value``, ``#`` comments, ``[section]``
headers) and are read with :mod:`configparser`.  Every run writes the resolved
configuration next to its outputs so a result directory is self-describing.
"""
from __future__ import annotations

import configparser
import csv
import io
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .grid import RadialGrid, build_uniform
from .model import ModelParams, PowerTerm

CSV_COLUMNS = ("param", "level", "h1_norm", "x_norm", "phi_inf", "u_inf",
               "grad_norm", "converged", "seconds")


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    return format(float(x), ".17g")


# --- radial coefficient profiles -------------------------------------------

@dataclass(frozen=True)
class RadialProfile:
    """Named coefficient profile ``C(r)`` usable as a :class:`PowerTerm` coefficient.

    ``const(a)`` is ``a``, ``gauss(a, s)`` is ``a exp(-(r/s)^2)`` and
    ``decay(a, s)`` is ``a / (1 + (r/s)^2)``.
    """

    kind: str
    a: float
    s: float = 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "const":
            return np.full_like(r, self.a)
        if self.kind == "gauss":
            return self.a * np.exp(-((r / self.s) ** 2))
        if self.kind == "decay":
            return self.a / (1.0 + (r / self.s) ** 2)
        raise ConfigError(f"unknown profile {self.kind!r}")

    def __str__(self):
        if self.kind == "const":
            return f"const({self.a!r})"
        return f"{self.kind}({self.a!r}, {self.s!r})"


_PROFILE = re.compile(r"^\s*(const|gauss|decay)\s*\(([^)]*)\)\s*$")


def parse_terms(text: str) -> tuple:
    """Parse ``q: C; q: C`` where ``C`` is a number or a named profile."""
    terms = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise ConfigError(f"term {chunk!r} must look like 'q: coefficient'")
        q_text, c_text = chunk.split(":", 1)
        try:
            q = float(q_text)
        except ValueError:
            raise ConfigError(f"bad exponent in term {chunk!r}") from None
        match = _PROFILE.match(c_text)
        if match:
            try:
                args = [float(x) for x in match.group(2).split(",") if x.strip()]
            except ValueError:
                raise ConfigError(f"bad profile arguments in {chunk!r}") from None
            kind = match.group(1)
            need = 1 if kind == "const" else 2
            if len(args) != need:
                raise ConfigError(f"{kind} takes {need} argument(s), got {len(args)}")
            coeff = RadialProfile(kind, *args)
        else:
            try:
                coeff = float(c_text)
            except ValueError:
                raise ConfigError(f"bad coefficient in term {chunk!r}") from None
        terms.append(PowerTerm(C=coeff, q=q))
    if not terms:
        raise ConfigError("at least one nonlinearity term is required")
    return tuple(terms)


def format_terms(terms) -> str:
    parts = []
    for t in terms:
        c = t.C if isinstance(t.C, RadialProfile) else repr(float(t.C))
        parts.append(f"{float(t.q)!r}: {c}")
    return "; ".join(parts)


# --- run configuration --------------------------------------------------------

@dataclass
class RunConfig:
    R: float = 20.0
    N: int = 1200
    params: ModelParams = field(default_factory=ModelParams)
    lambdas: tuple = (30.0, 60.0, 120.0, 240.0, 480.0)
    envelope_eps: tuple = (0.0, 0.5, 1.0)
    epsilons: tuple = (1.0, 0.5, 0.25, 0.1)
    super_lambdas: tuple = (30.0, 60.0, 120.0, 240.0, 480.0)
    super_p: float = 7.0
    super_K: float = 1.0
    tol: float = 1e-6
    eps_tol: float = 1e-10
    max_iter: int = 5000
    n_path: int = 31
    warm_start: bool = True
    out: str = "results"
    plot: bool = False
    record_timing: bool = True

    def grid(self) -> RadialGrid:
        try:
            return build_uniform(self.R, self.N)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> "RunConfig":
        self.grid()
        self.params.require_valid()
        for name in ("lambdas", "epsilons", "super_lambdas", "envelope_eps"):
            values = getattr(self, name)
            if not values and name != "envelope_eps":
                raise ConfigError(f"{name} must not be empty")
            if any(not math.isfinite(v) for v in values):
                raise ConfigError(f"{name} must be finite")
        for name in ("lambdas", "super_lambdas"):
            values = getattr(self, name)
            if any(v <= 0 for v in values) or list(values) != sorted(values):
                raise ConfigError(f"{name} must be positive and ascending")
        if any(v <= 0 for v in self.epsilons) or list(self.epsilons) != sorted(
                self.epsilons, reverse=True):
            raise ConfigError("epsilons must be positive and descending (0 is the baseline)")
        if any(v < 0 for v in self.envelope_eps):
            raise ConfigError("envelope_eps must be nonnegative")
        if not (self.super_p > 6 and self.super_K > 0):
            raise ConfigError("supercritical run needs p > 6 and K > 0")
        for name in ("tol", "eps_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_iter < 1 or self.n_path < 2:
            raise ConfigError("max_iter must be >= 1 and n_path >= 2")
        return self

    def to_ini(self) -> str:
        m = self.params
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["grid"] = {"R": _num(self.R), "N": str(self.N)}
        model = {"lam": _num(m.lam), "eps": _num(m.eps), "T": _num(m.T),
                 "theta": _num(m.theta), "terms": format_terms(m.terms)}
        if m.p is not None:
            model["p"] = _num(m.p)
        if m.K is not None:
            model["K"] = _num(m.K)
        cp["model"] = model
        cp["solver"] = {"tol": _num(self.tol), "max_iter": str(self.max_iter),
                        "n_path": str(self.n_path),
                        "warm_start": str(self.warm_start).lower()}
        cp["sweep"] = {"lambdas": _join(self.lambdas), "envelope_eps": _join(self.envelope_eps),
                       "epsilons": _join(self.epsilons), "eps_tol": _num(self.eps_tol)}
        cp["supercritical"] = {"p": _num(self.super_p), "K": _num(self.super_K),
                               "lambdas": _join(self.super_lambdas)}
        cp["output"] = {"out": self.out, "plot": str(self.plot).lower(),
                        "record_timing": str(self.record_timing).lower()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _num(x) -> str:
    # shortest repr that round-trips, so the resolved config stays readable
    return repr(float(x))


def _join(values) -> str:
    return ", ".join(_num(v) for v in values)


def _floats(text: str, key: str) -> tuple:
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: expected a list of numbers, got {text!r}") from None


_KNOWN = {
    "grid": {"r", "n"},
    "model": {"lam", "lambda", "eps", "t", "theta", "terms", "p", "k"},
    "solver": {"tol", "max_iter", "n_path", "warm_start"},
    "sweep": {"lambdas", "envelope_eps", "epsilons", "eps_tol"},
    "supercritical": {"p", "k", "lambdas"},
    "output": {"out", "plot", "record_timing"},
}


def parse_config(text: str) -> RunConfig:
    """Build a validated :class:`RunConfig` from INI text; unknown keys are errors."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        extra = set(cp[section]) - _KNOWN[section]
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")

    cfg = RunConfig()
    try:
        if cp.has_section("grid"):
            s = cp["grid"]
            cfg.R = s.getfloat("R", cfg.R)
            cfg.N = s.getint("N", cfg.N)
        kw = {}
        if cp.has_section("model"):
            s = cp["model"]
            for key, name in (("lam", "lam"), ("lambda", "lam"), ("eps", "eps"),
                              ("T", "T"), ("theta", "theta"), ("p", "p"), ("K", "K")):
                if key in s and s[key].strip():
                    kw[name] = s.getfloat(key)
            if "terms" in s:
                kw["terms"] = parse_terms(s["terms"])
        cfg.params = ModelParams(**kw)
        if cp.has_section("solver"):
            s = cp["solver"]
            cfg.tol = s.getfloat("tol", cfg.tol)
            cfg.max_iter = s.getint("max_iter", cfg.max_iter)
            cfg.n_path = s.getint("n_path", cfg.n_path)
            cfg.warm_start = s.getboolean("warm_start", cfg.warm_start)
        if cp.has_section("sweep"):
            s = cp["sweep"]
            for key in ("lambdas", "envelope_eps", "epsilons"):
                if key in s:
                    setattr(cfg, key, _floats(s[key], key))
            cfg.eps_tol = s.getfloat("eps_tol", cfg.eps_tol)
        if cp.has_section("supercritical"):
            s = cp["supercritical"]
            cfg.super_p = s.getfloat("p", cfg.super_p)
            cfg.super_K = s.getfloat("K", cfg.super_K)
            if "lambdas" in s:
                cfg.super_lambdas = _floats(s["lambdas"], "lambdas")
        if cp.has_section("output"):
            s = cp["output"]
            cfg.out = s.get("out", cfg.out)
            cfg.plot = s.getboolean("plot", cfg.plot)
            cfg.record_timing = s.getboolean("record_timing", cfg.record_timing)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# --- sweep records ------------------------------------------------------------

@dataclass
class SweepRecord:
    """One row of an experiment table; ``u`` and ``extras`` are not written to CSV."""

    param: float
    level: float
    h1_norm: float
    x_norm: float
    phi_inf: float
    u_inf: float
    grad_norm: float
    converged: bool
    seconds: float
    u: np.ndarray | None = field(default=None, repr=False, compare=False)
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    def row(self) -> list:
        return [fmt(self.param), fmt(self.level), fmt(self.h1_norm), fmt(self.x_norm),
                fmt(self.phi_inf), fmt(self.u_inf), fmt(self.grad_norm),
                "1" if self.converged else "0", fmt(self.seconds)]


def emit_csv(records, path) -> Path:
    """Write records under the fixed header with LF line endings."""
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for rec in records:
                w.writerow(rec.row())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> list:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for row in reader:
            vals = [float(x) for x in row]
            out.append(SweepRecord(*vals[:7], converged=bool(int(vals[7])), seconds=vals[8]))
    return out


def emit_table(path, header, rows) -> Path:
    """Generic numeric table in the same number format as :func:`emit_csv`."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, str) else fmt(x) for x in row])
    return path


def emit_profile_svg(path, g: RadialGrid, series: dict, title: str | None = None) -> Path:
    """Radial profiles ``{label: values}`` on a linear chart."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "qsplab", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, values in series.items():
            ax.plot(g.nodes, values, label=label)
        ax.set_xlabel("r")
        ax.legend()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def emit_svg(records, path, x_col: str = "param", y_cols=("h1_norm",), log_x: bool = True,
             log_y: bool = True, title: str | None = None) -> Path:
    """Polyline chart of ``y_cols`` against ``x_col`` as a standalone SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = list(records)
    if not records:
        raise ValueError("no records to plot")
    names = {f.name for f in fields(SweepRecord)}
    for col in (x_col, *y_cols):
        if col not in names and col not in records[0].extras:
            raise ValueError(f"unknown column {col!r}")

    def column(col):
        return np.array([getattr(r, col) if col in names else r.extras[col] for r in records],
                        dtype=float)

    x = column(x_col)
    with matplotlib.rc_context({"svg.hashsalt": "qsplab", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for col in y_cols:
            ax.plot(x, column(col), marker="o", label=col)
        if log_x:
            ax.set_xscale("log")
        if log_y:
            ax.set_yscale("log")
        ax.set_xlabel(x_col)
        ax.legend()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


# --- field dumps --------------------------------------------------------------

def write_field(path, g: RadialGrid, values, name: str = "u", meta: dict | None = None) -> Path:
    """Header lines ``# name``, ``# R = ...``, ``# N = ...`` then one value per line.

    ``meta`` entries are written as extra ``# key = value`` header lines.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (g.size,):
        raise ValueError(f"field has shape {values.shape}, grid expects ({g.size},)")
    path = Path(path)
    lines = [f"# {name}", f"# R = {fmt(g.R)}", f"# N = {g.N}"]
    for key, val in (meta or {}).items():
        lines.append(f"# {key} = {fmt(val) if isinstance(val, float) else val}")
    lines += [fmt(v) for v in values]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_field(path, with_meta: bool = False):
    """Return ``(grid, values)`` from a dump written by :func:`write_field`.

    With ``with_meta`` a third item holds the remaining header entries as strings.
    """
    path = Path(path)
    R = N = None
    values = []
    meta = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read field {path}: {exc}") from exc
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            key = key.strip()
            if key == "R":
                R = float(val)
            elif key == "N":
                N = int(val)
            elif val:
                meta[key] = val.strip()
            continue
        values.append(float(line))
    if R is None or N is None:
        raise ConfigError(f"{path}: missing R or N header")
    g = build_uniform(R, N)
    if len(values) != g.size:
        raise ConfigError(f"{path}: {len(values)} values for a grid of {g.size} nodes")
    return (g, np.array(values), meta) if with_meta else (g, np.array(values))
