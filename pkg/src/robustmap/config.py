"""Scenario files: TOML in, :class:`Scenario` out, and the resolved echo.

Every scenario field has a key in one of the sections below; ``seed`` and
``horizon`` live at the top level.  Unknown sections or keys are errors.
TOML has no null, so an optional key that is absent means "not set".
"""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from .deployment import DescentConfig
from .geometry import Workspace
from .sensing import DetectionModel, MeasurementModel
from .simulator import DEFAULT_WORKSPACE, FailureSpec, Scenario, TerrainSpec, parse_method

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

import tomli_w

__all__ = ["ConfigError", "ResolvedConfig", "load_config", "parse_config", "apply_override", "dump_config"]


class ConfigError(ValueError):
    """Bad scenario file or override; the CLI maps it to exit code 2."""


@dataclass(frozen=True)
class _Key:
    kind: str  # int, float, bool, str, ints, floats, points, box, pair, schedule
    default: object = None  # None: optional, omitted when unset


_NO_SWEEP_LIMIT = 0  # sweeps_per_step = 0 descends to convergence every step

SCHEMA: dict[str | None, dict[str, _Key]] = {
    None: {"seed": _Key("int", 0), "horizon": _Key("int", 10)},
    "workspace": {
        "x_min": _Key("float", DEFAULT_WORKSPACE.x_min),
        "x_max": _Key("float", DEFAULT_WORKSPACE.x_max),
        "y_min": _Key("float", DEFAULT_WORKSPACE.y_min),
        "y_max": _Key("float", DEFAULT_WORKSPACE.y_max),
    },
    "robots": {
        "m": _Key("int", 10),
        "k": _Key("int", 2),
        "method": _Key("str"),
        "initial_poses": _Key("points"),
        "init_box": _Key("box"),
        "max_speed": _Key("float"),
    },
    "sensing": {
        "sigma_d": _Key("float", 0.2),
        "p_max": _Key("float", 0.999),
        "r_eff": _Key("float"),
        "sigma_I": _Key("float", math.sqrt(0.5)),
        "i_min": _Key("float", -1000.0),
        "i_max": _Key("float", 4000.0),
    },
    "deployment": {
        "grid_nx": _Key("int", 100),
        "grid_ny": _Key("int", 100),
        "sweeps_per_step": _Key("int", 1),
        "eps": _Key("float", 1e-6),
        "max_sweeps": _Key("int", 500),
        "armijo_c": _Key("float", 1e-4),
        "armijo_beta": _Key("float", 0.5),
        "alpha0": _Key("float"),
        "max_backtracks": _Key("int", 30),
    },
    "filter": {
        "n1": _Key("int", 5000),
        "n2": _Key("int", 100),
        "per_location_intensities": _Key("bool", False),
        "paper_literal_resample": _Key("bool", False),
        "intensity_jitter": _Key("float", 0.0),
    },
    "failures": {
        "robots": _Key("ints"),
        "count": _Key("int"),
        "count_range": _Key("pair"),
        "at": _Key("int", 0),
        "schedule": _Key("schedule"),
    },
    "terrain": {
        "kind": _Key("str", "gaussian-bumps"),
        "path": _Key("str"),
        "seed": _Key("int"),
        "count": _Key("int", 6),
        "value": _Key("float"),
        "nx": _Key("int", 128),
    },
    "output": {
        "snapshots": _Key("ints"),
        "map_width": _Key("int", 128),
    },
}


def _where(section, key) -> str:
    return key if section is None else f"{section}.{key}"


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _coerce(kind: str, value, where: str):
    bad = ConfigError(f"{where}: expected {kind}, got {value!r}")
    if kind == "int":
        if not _is_int(value):
            raise bad
        return value
    if kind == "float":
        if not _is_num(value):
            raise bad
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise bad
        return value
    if kind == "ints":
        if not isinstance(value, list) or not all(_is_int(v) for v in value):
            raise bad
        return list(value)
    if kind == "pair":
        if not isinstance(value, list) or len(value) != 2 or not all(_is_int(v) for v in value):
            raise bad
        return list(value)
    if kind == "box":
        if not isinstance(value, list) or len(value) != 4 or not all(_is_num(v) for v in value):
            raise bad
        return [float(v) for v in value]
    if kind == "points":
        if not isinstance(value, list) or not all(
            isinstance(p, list) and len(p) == 2 and all(_is_num(c) for c in p) for p in value
        ):
            raise bad
        return [[float(c) for c in p] for p in value]
    if kind == "schedule":
        ok = isinstance(value, list) and all(
            isinstance(e, list) and len(e) == 2 and _is_int(e[0]) and isinstance(e[1], list)
            and all(_is_int(r) for r in e[1])
            for e in value
        )
        if not ok:
            raise bad
        return [[e[0], list(e[1])] for e in value]
    raise AssertionError(kind)


def _defaults() -> dict:
    out: dict = {}
    for section, keys in SCHEMA.items():
        target = out if section is None else out.setdefault(section, {})
        for key, spec in keys.items():
            if spec.default is not None:
                target[key] = copy.deepcopy(spec.default)
    return out


def _merge(base: dict, raw: dict) -> None:
    for name, value in raw.items():
        if name in SCHEMA[None]:
            base[name] = _coerce(SCHEMA[None][name].kind, value, name)
        elif name in SCHEMA and name is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"[{name}] must be a table")
            for key, v in value.items():
                if key not in SCHEMA[name]:
                    raise ConfigError(f"unknown key {_where(name, key)!r}")
                base[name][key] = _coerce(SCHEMA[name][key].kind, v, _where(name, key))
        else:
            raise ConfigError(f"unknown section or key {name!r}")


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply one ``section.key=value`` override in place.

    The value is parsed as a TOML value; anything that does not parse is
    taken as a bare string, so ``terrain.kind=ramp`` works unquoted.
    """
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    dotted, text = assignment.split("=", 1)
    dotted = dotted.strip()
    try:
        value = tomllib.loads(f"v = {text.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = text.strip()
    if "." in dotted:
        section, key = dotted.split(".", 1)
        _merge(cfg, {section: {key: value}})
    else:
        _merge(cfg, {dotted: value})


@dataclass(frozen=True)
class ResolvedConfig:
    data: dict  # fully populated nested dict, as echoed to run.toml
    scenario: Scenario
    base_dir: Path

    @property
    def output(self) -> dict:
        return self.data["output"]


def parse_config(raw: dict, overrides=(), seed: int | None = None, base_dir=".") -> ResolvedConfig:
    """Resolve ``raw`` plus overrides.  Relative terrain paths are taken
    from the working directory; :func:`load_config` first rebases the ones
    written in the file onto the file's own directory."""
    data = _defaults()
    _merge(data, raw)
    for ov in overrides:
        apply_override(data, ov)
    if seed is not None:
        data["seed"] = _coerce("int", seed, "seed")
    base_dir = Path(base_dir)
    terrain = data["terrain"]
    if "path" in terrain:
        p = Path(terrain["path"])
        if not p.is_file():
            raise ConfigError(f"terrain file not found: {p}")
        terrain["path"] = str(p)
    try:
        scenario = _build(data)
        scenario.validate()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return ResolvedConfig(data, scenario, base_dir)


def load_config(path, overrides=(), seed: int | None = None) -> ResolvedConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw.pop("provenance", None)  # a run.toml echo reloads as its own config
    terrain = raw.get("terrain")
    if isinstance(terrain, dict) and isinstance(terrain.get("path"), str):
        terrain["path"] = str(path.parent / terrain["path"])  # no-op for absolute paths
    return parse_config(raw, overrides, seed, path.parent)


def _build(d: dict) -> Scenario:
    rob, sen, dep, fil, fai, ter, out = (
        d[s] for s in ("robots", "sensing", "deployment", "filter", "failures", "terrain", "output")
    )
    k = rob["k"]
    if "method" in rob:
        k = parse_method(rob["method"])
        rob["k"] = k
    ws = d["workspace"]
    sweeps = dep["sweeps_per_step"]
    return Scenario(
        m=rob["m"],
        k=k,
        horizon=d["horizon"],
        seed=d["seed"],
        workspace=Workspace(ws["x_min"], ws["x_max"], ws["y_min"], ws["y_max"]),
        detection=DetectionModel(sen["sigma_d"], sen["p_max"], sen.get("r_eff")),
        measurement=MeasurementModel(sen["sigma_I"], sen["i_min"], sen["i_max"]),
        failures=FailureSpec(
            robots=tuple(fai["robots"]) if "robots" in fai else None,
            count=fai.get("count"),
            count_range=tuple(fai["count_range"]) if "count_range" in fai else None,
            at=fai["at"],
            schedule=tuple((t, tuple(r)) for t, r in fai["schedule"]) if "schedule" in fai else None,
        ),
        terrain=TerrainSpec(
            kind="file" if "path" in ter else ter["kind"],
            path=ter.get("path"),
            seed=ter.get("seed"),
            count=ter["count"],
            value=ter.get("value"),
            nx=ter["nx"],
        ),
        grid_nx=dep["grid_nx"],
        grid_ny=dep["grid_ny"],
        n1=fil["n1"],
        n2=fil["n2"],
        descent=DescentConfig(
            eps=dep["eps"],
            max_sweeps=dep["max_sweeps"],
            armijo_c=dep["armijo_c"],
            armijo_beta=dep["armijo_beta"],
            alpha0=dep.get("alpha0"),
            max_backtracks=dep["max_backtracks"],
        ),
        sweeps_per_step=None if sweeps == _NO_SWEEP_LIMIT else sweeps,
        initial_poses=tuple(tuple(p) for p in rob["initial_poses"]) if "initial_poses" in rob else None,
        init_box=tuple(rob["init_box"]) if "init_box" in rob else None,
        max_speed=rob.get("max_speed"),
        per_location_intensities=fil["per_location_intensities"],
        paper_literal_resample=fil["paper_literal_resample"],
        intensity_jitter=fil["intensity_jitter"],
        snapshots=tuple(out["snapshots"]) if "snapshots" in out else None,
    )


def dump_config(data: dict, provenance: dict | None = None) -> str:
    """TOML text of a resolved config, top-level keys first."""
    doc = {k: data[k] for k in SCHEMA[None]}
    doc.update({s: data[s] for s in SCHEMA if s is not None})
    if provenance:
        doc["provenance"] = provenance
    return tomli_w.dumps(doc)
