"""YAML run configuration with line-anchored validation.

A config is a tree of seven blocks::

    model:    {kind: sbm, sigma: {power: true, gamma_prime: 0.0}}
    domain:   {x_min: -8, x_max: 8, nx: 256}
    levels:   {u_max: 8, nu: 128}
    time:     {dt: 1.0e-4, t_end: 0.5, drift_mode: explicit}
    ensemble: {replicas: 100, master_seed: 0}
    initial:  {kind: gaussian_cdf, mu: 0, s: 0.5, mass: 1}
    output:   {dir: out, snapshot_stride: 100, record_noise: false}

``sigma`` may instead be ``{table: [...]}`` or ``{path: file}``; for
``kind: fv`` the model holds ``gamma: {constant: true, c: 1}`` (or a table or
path) and the levels block holds ``na`` and ``nb``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import LevelGrid, MonotoneField, SpatialGrid
from .errors import DomainError
from .integrator import DRIFT_MODES, SchemeConfig
from .models import FvModel, Model, SbmModel, load_coefficients


class ConfigError(DomainError):
    """Invalid configuration; the message starts with ``file:line:``."""


@dataclass
class ModelBlock:
    kind: str = "sbm"
    sigma: dict = field(default_factory=lambda: {"power": True, "gamma_prime": 0.0})
    gamma: dict = field(default_factory=lambda: {"constant": True, "c": 1.0})


@dataclass
class DomainBlock:
    x_min: float = -8.0
    x_max: float = 8.0
    nx: int = 256


@dataclass
class LevelsBlock:
    u_max: float = 8.0
    nu: int | None = 128
    na: int | None = None
    nb: int | None = None


@dataclass
class TimeBlock:
    dt: float = 1e-4
    t_end: float = 0.5
    drift_mode: str = "explicit"


@dataclass
class EnsembleBlock:
    replicas: int = 1
    master_seed: int = 0


@dataclass
class InitialBlock:
    kind: str = "gaussian_cdf"
    mu: float = 0.0
    s: float = 0.5
    mass: float = 1.0
    location: float = 0.0
    path: str | None = None


@dataclass
class OutputBlock:
    dir: str = "out"
    snapshot_stride: int = 100
    record_noise: bool = False


_BLOCKS = {
    "model": ModelBlock, "domain": DomainBlock, "levels": LevelsBlock, "time": TimeBlock,
    "ensemble": EnsembleBlock, "initial": InitialBlock, "output": OutputBlock,
}


class _Lines:
    """Maps a key path like ``("time", "dt")`` to its 1-based source line."""

    def __init__(self, source: str, text: str | None):
        self.source = source
        self.lines: dict[tuple, int] = {}
        if text:
            try:
                node = yaml.compose(text)
            except yaml.YAMLError:
                node = None
            if node is not None:
                self._walk(node, ())

    def _walk(self, node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                self.lines[p] = k.start_mark.line + 1
                self._walk(v, p)

    def error(self, path: tuple, msg: str) -> ConfigError:
        for n in range(len(path), 0, -1):
            if path[:n] in self.lines:
                return ConfigError(f"{self.source}:{self.lines[path[:n]]}: {'.'.join(path)}: {msg}")
        return ConfigError(f"{self.source}: {'.'.join(path) or '<root>'}: {msg}")


@dataclass
class RunConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    domain: DomainBlock = field(default_factory=DomainBlock)
    levels: LevelsBlock = field(default_factory=LevelsBlock)
    time: TimeBlock = field(default_factory=TimeBlock)
    ensemble: EnsembleBlock = field(default_factory=EnsembleBlock)
    initial: InitialBlock = field(default_factory=InitialBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        d = {name: asdict(getattr(self, name)) for name in _BLOCKS}
        fv = self.model.kind == "fv"
        d["model"].pop("sigma" if fv else "gamma")
        lv = d["levels"]
        for k in ("na", "nb") if not fv else ("nu",):
            lv.pop(k)
        if fv:
            lv.pop("u_max")
        ini = d["initial"]
        keep = {"gaussian_cdf": ("mu", "s", "mass"), "step": ("location", "mass"),
                "table": ("path",)}.get(ini["kind"], ())
        d["initial"] = {"kind": ini["kind"], **{k: ini[k] for k in keep}}
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        """Git blob id of the canonical JSON form."""
        data = self.canonical_json().encode()
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

    @classmethod
    def from_dict(cls, d: dict, source: str = "<config>", text: str | None = None,
                  base_dir: Path | str = ".") -> RunConfig:
        lines = _Lines(source, text)
        if not isinstance(d, dict):
            raise lines.error((), "top level must be a mapping")
        for key in d:
            if key not in _BLOCKS:
                raise lines.error((str(key),), f"unknown block; expected one of {sorted(_BLOCKS)}")
        blocks = {}
        for name, klass in _BLOCKS.items():
            raw = d.get(name, {}) or {}
            if not isinstance(raw, dict):
                raise lines.error((name,), "block must be a mapping")
            known = klass.__dataclass_fields__
            for key in raw:
                if key not in known:
                    raise lines.error((name, str(key)), f"unknown key; expected one of {sorted(known)}")
            default = klass()
            kw = {k: raw.get(k, getattr(default, k)) for k in known}
            blocks[name] = klass(**kw)
        cfg = cls(**blocks, base_dir=Path(base_dir))
        if cfg.model.kind == "fv" and "levels" in d and "u_max" not in (d["levels"] or {}):
            cfg.levels.u_max = 1.0
        cfg.validate(lines)
        return cfg

    @classmethod
    def loads(cls, text: str, source: str = "<config>", base_dir: Path | str = ".") -> RunConfig:
        try:
            d = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{source}:{mark.line + 1}" if mark is not None else source
            raise ConfigError(f"{where}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
        return cls.from_dict(d if d is not None else {}, source, text, base_dir)

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
        return cls.loads(text, str(path), path.parent)

    # -- validation ----------------------------------------------------
    def validate(self, lines: _Lines | None = None) -> None:
        lines = lines or _Lines("<config>", None)

        def num(path, v, cond, what, integer=False):
            ok = isinstance(v, (int, float)) and not isinstance(v, bool)
            if integer:
                ok = ok and float(v).is_integer()
            if not ok or not math.isfinite(float(v)) or not cond(v):
                raise lines.error(path, f"must be {what}, got {v!r}")

        m = self.model
        if m.kind not in ("sbm", "fv"):
            raise lines.error(("model", "kind"), f"must be 'sbm' or 'fv', got {m.kind!r}")
        dm = self.domain
        num(("domain", "x_min"), dm.x_min, lambda v: True, "a number")
        num(("domain", "x_max"), dm.x_max, lambda v: v > dm.x_min, "a number greater than x_min")
        num(("domain", "nx"), dm.nx, lambda v: v >= 4, "an integer >= 4", True)
        lv = self.levels
        if m.kind == "fv":
            for k in ("na", "nb"):
                num(("levels", k), getattr(lv, k), lambda v: v >= 2, "an integer >= 2", True)
            if lv.na != lv.nb:
                raise lines.error(("levels", "nb"), f"must equal na ({lv.na}), got {lv.nb}")
            if lv.u_max != 1.0:
                raise lines.error(("levels", "u_max"), "Fleming-Viot levels live on [0, 1]")
            g = m.gamma
            if not isinstance(g, dict) or not (g.get("constant") or "table" in g or "path" in g):
                raise lines.error(("model", "gamma"), "needs {constant: true, c}, {table} or {path}")
            if g.get("constant"):
                num(("model", "gamma", "c"), g.get("c", 1.0), lambda v: v >= 0, "a number >= 0")
        else:
            num(("levels", "u_max"), lv.u_max, lambda v: v > 0, "a positive number")
            num(("levels", "nu"), lv.nu, lambda v: v >= 2, "an integer >= 2", True)
            s = m.sigma
            if not isinstance(s, dict) or not (s.get("power") or "table" in s or "path" in s):
                raise lines.error(("model", "sigma"), "needs {power: true, gamma_prime}, {table} or {path}")
            if s.get("power"):
                num(("model", "sigma", "gamma_prime"), s.get("gamma_prime", 0.0), lambda v: v >= 0,
                    "a number >= 0")
        t = self.time
        num(("time", "dt"), t.dt, lambda v: v > 0, "a positive number")
        num(("time", "t_end"), t.t_end, lambda v: v >= t.dt * (1 - 1e-9), "a number >= dt")
        if t.drift_mode not in DRIFT_MODES:
            raise lines.error(("time", "drift_mode"), f"must be one of {DRIFT_MODES}, got {t.drift_mode!r}")
        e = self.ensemble
        num(("ensemble", "replicas"), e.replicas, lambda v: v >= 1, "an integer >= 1", True)
        num(("ensemble", "master_seed"), e.master_seed, lambda v: 0 <= v < 2**64,
            "an unsigned 64-bit integer", True)
        ini = self.initial
        if ini.kind not in ("gaussian_cdf", "step", "table"):
            raise lines.error(("initial", "kind"), f"must be gaussian_cdf, step or table, got {ini.kind!r}")
        if ini.kind == "gaussian_cdf":
            num(("initial", "s"), ini.s, lambda v: v > 0, "a positive number")
        if ini.kind in ("gaussian_cdf", "step"):
            num(("initial", "mass"), ini.mass, lambda v: v >= 0, "a number >= 0")
            if m.kind == "fv" and ini.mass != 1:
                raise lines.error(("initial", "mass"), "Fleming-Viot states need mass 1")
        elif not ini.path:
            raise lines.error(("initial", "path"), "table initial data needs a path")
        o = self.output
        num(("output", "snapshot_stride"), o.snapshot_stride, lambda v: v >= 1, "an integer >= 1", True)
        if not isinstance(o.record_noise, bool):
            raise lines.error(("output", "record_noise"), "must be true or false")
        try:
            model = self.build_model()
            grid = self.build_grid()
            self.build_initial(model, grid)
            self.scheme().check(grid)
        except DomainError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise lines.error(_blame(str(exc)), str(exc)) from None

    # -- builders ------------------------------------------------------
    def _resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def build_grid(self) -> SpatialGrid:
        return SpatialGrid(float(self.domain.x_min), float(self.domain.x_max), int(self.domain.nx))

    def build_levels(self) -> LevelGrid:
        if self.model.kind == "fv":
            return LevelGrid(1.0, int(self.levels.na))
        return LevelGrid(float(self.levels.u_max), int(self.levels.nu))

    def build_model(self) -> Model:
        levels = self.build_levels()
        if self.model.kind == "fv":
            g = self.model.gamma
            if g.get("constant"):
                return FvModel(levels, c=float(g.get("c", 1.0)))
            table = g["table"] if "table" in g else load_coefficients(self._resolve(g["path"]))
            return FvModel(levels, table=np.asarray(table, dtype=float))
        s = self.model.sigma
        if s.get("power"):
            return SbmModel(levels, gamma_prime=float(s.get("gamma_prime", 0.0)))
        table = s["table"] if "table" in s else load_coefficients(self._resolve(s["path"]))
        return SbmModel(levels, table=np.asarray(table, dtype=float))

    def build_initial(self, model: Model | None = None, grid: SpatialGrid | None = None) -> MonotoneField:
        model = model or self.build_model()
        grid = grid or self.build_grid()
        cap = 1.0 if isinstance(model, FvModel) else math.inf
        ini = self.initial
        if ini.kind == "gaussian_cdf":
            Y = MonotoneField.gaussian_cdf(grid, float(ini.mu), float(ini.s), float(ini.mass), cap)
            if isinstance(model, FvModel):
                v = Y.values.copy()
                v[-1] = 1.0
                Y = MonotoneField(grid, v, cap)
            return Y
        if ini.kind == "step":
            return MonotoneField.step(grid, float(ini.location), float(ini.mass), cap)
        return MonotoneField(grid, load_coefficients(self._resolve(ini.path)), cap)

    def scheme(self) -> SchemeConfig:
        return SchemeConfig(float(self.time.dt), self.time.drift_mode, bool(self.output.record_noise),
                            int(self.output.snapshot_stride))


def _blame(msg: str) -> tuple:
    if "CFL" in msg or "dt" in msg:
        return ("time", "dt")
    if "table" in msg or "sigma" in msg or "gamma" in msg:
        return ("model",)
    if "field" in msg or "boundary" in msg or "values" in msg:
        return ("initial",)
    return ()
