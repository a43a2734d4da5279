"""TOML run configuration: parsing, validation and model construction."""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .delay_models import DelayControlModel, DelayStateModel, delay_control_to_volterra, delay_state_to_volterra
from .errors import InvalidArgumentError
from .grid_kernels import make_uniform_grid
from .transforms import ModelSpec

PRESETS = ("volterra", "sde", "state-delay", "control-delay")
DEVIATIONS = ("zero", "double", "shifted", "limit_best_response", "best_response")

_MODEL_KEYS = {
    "volterra": {"phi", "b", "f", "c", "sigma"},
    "sde": {"x0", "b", "c", "sigma", "f"},
    "state-delay": {"A", "B", "C", "D", "k", "h"},
    "control-delay": {"A", "C", "D", "k", "h"},
}
_COMMON_MODEL_KEYS = {"preset", "R", "gamma", "eta"}
_GRID_KEYS = {"T", "n_steps", "tol", "k_max", "resolvent_tol"}
_EXPERIMENT_KEYS = {"Ns", "N", "paths", "seed", "deviations", "shift_steps", "batch_size", "solver_mode"}
_OUTPUT_KEYS = {"directory", "formats", "figures"}
_SECTIONS = {"model", "grid", "experiment", "output"}


class ConfigError(InvalidArgumentError):
    pass


def _reject_unknown(table: dict, allowed: set, where: str) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) {', '.join(map(repr, extra))} in {where}")


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where} must be a number, got {v!r}")
    return float(v)


def function_from_spec(spec, where: str) -> Callable[[np.ndarray], np.ndarray]:
    """One-variable function: a number, or a table with ``type`` constant / polynomial / exponential."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        v = float(spec)
        return lambda t: np.full_like(np.asarray(t, dtype=float), v)
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{where}: expected a number or a table with a 'type' key")
    kind = spec["type"]
    if kind == "constant":
        _reject_unknown(spec, {"type", "value"}, where)
        return function_from_spec(_number(spec.get("value", 0.0), f"{where}.value"), where)
    if kind == "polynomial":
        _reject_unknown(spec, {"type", "coeffs"}, where)
        coeffs = [_number(c, f"{where}.coeffs") for c in spec.get("coeffs", [])]
        return lambda t: np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), coeffs) + 0.0 * np.asarray(t, float)
    if kind == "exponential":
        _reject_unknown(spec, {"type", "scale", "rate"}, where)
        a = _number(spec.get("scale", 1.0), f"{where}.scale")
        r = _number(spec.get("rate", 0.0), f"{where}.rate")
        return lambda t: a * np.exp(r * np.asarray(t, dtype=float))
    raise ConfigError(f"{where}: unknown function type {kind!r}")


def kernel_from_spec(spec, where: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Two-variable kernel: number, constant, polynomial ``[[i, j, coef], ...]`` in ``t^i s^j``,
    exponential ``scale e^{rate (t - s)}`` or product ``g(t) h(s)``."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        v = float(spec)
        return lambda t, s: np.full(np.broadcast(np.asarray(t, float), np.asarray(s, float)).shape, v)
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{where}: expected a number or a table with a 'type' key")
    kind = spec["type"]
    if kind == "constant":
        _reject_unknown(spec, {"type", "value"}, where)
        return kernel_from_spec(_number(spec.get("value", 0.0), f"{where}.value"), where)
    if kind == "polynomial":
        _reject_unknown(spec, {"type", "coeffs"}, where)
        terms = []
        for term in spec.get("coeffs", []):
            if not isinstance(term, list) or len(term) != 3:
                raise ConfigError(f"{where}.coeffs entries must be [i, j, coef]")
            i, j, c = term
            if not (isinstance(i, int) and isinstance(j, int) and i >= 0 and j >= 0):
                raise ConfigError(f"{where}.coeffs powers must be non-negative integers")
            terms.append((i, j, _number(c, f"{where}.coeffs")))

        def poly(t, s, terms=tuple(terms)):
            t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
            out = np.zeros(t.shape)
            for i, j, c in terms:
                out = out + c * t ** i * s ** j
            return out
        return poly
    if kind == "exponential":
        _reject_unknown(spec, {"type", "scale", "rate"}, where)
        a = _number(spec.get("scale", 1.0), f"{where}.scale")
        r = _number(spec.get("rate", 0.0), f"{where}.rate")
        return lambda t, s: a * np.exp(r * (np.asarray(t, float) - np.asarray(s, float)))
    if kind == "product":
        _reject_unknown(spec, {"type", "t", "s"}, where)
        gt = function_from_spec(spec.get("t", 1.0), f"{where}.t")
        gs = function_from_spec(spec.get("s", 1.0), f"{where}.s")
        return lambda t, s: gt(np.asarray(t, float)) * gs(np.asarray(s, float))
    raise ConfigError(f"{where}: unknown kernel type {kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    Ns: tuple = (4, 16, 64, 256)
    N: int | None = None
    paths: int = 10_000
    seed: int = 0
    deviations: tuple = DEVIATIONS
    shift_steps: int | None = None
    batch_size: int = 250
    solver_mode: str = "direct"

    @property
    def check_N(self) -> int:
        return self.N if self.N is not None else self.Ns[0]


@dataclass(frozen=True)
class OutputConfig:
    directory: str | None = None
    formats: tuple = ("csv", "json")
    figures: bool = False


@dataclass(frozen=True, eq=False)
class RunConfig:
    preset: str
    model: ModelSpec
    experiment: ExperimentConfig
    output: OutputConfig
    sha256: str
    delay_model: Any = None
    raw: dict = field(default_factory=dict)


def _game_settings(model_t: dict, grid_t: dict) -> dict:
    out = {"R": _number(model_t.get("R", 1.0), "model.R"),
           "gamma": _number(model_t.get("gamma", 0.0), "model.gamma"),
           "eta": _number(model_t.get("eta", 0.0), "model.eta")}
    if "tol" in grid_t:
        out["tol"] = _number(grid_t["tol"], "grid.tol")
    if "resolvent_tol" in grid_t:
        out["resolvent_tol"] = _number(grid_t["resolvent_tol"], "grid.resolvent_tol")
    if "k_max" in grid_t:
        k = grid_t["k_max"]
        if not isinstance(k, int) or isinstance(k, bool):
            raise ConfigError("grid.k_max must be an integer")
        out["k_max"] = k
    return out


def build_model(model_t: dict, grid_t: dict):
    """Returns ``(preset, ModelSpec, delay_model_or_None)``."""
    preset = model_t.get("preset", "volterra")
    if preset not in PRESETS:
        raise ConfigError(f"model.preset must be one of {PRESETS}, got {preset!r}")
    _reject_unknown(model_t, _COMMON_MODEL_KEYS | _MODEL_KEYS[preset], f"[model] (preset {preset!r})")
    _reject_unknown(grid_t, _GRID_KEYS, "[grid]")
    T = _number(grid_t.get("T", 1.0), "grid.T")
    n = grid_t.get("n_steps", 64)
    if not isinstance(n, int) or isinstance(n, bool):
        raise ConfigError("grid.n_steps must be an integer")
    game = _game_settings(model_t, grid_t)
    K = lambda key: kernel_from_spec(model_t.get(key, 0.0), f"model.{key}")  # noqa: E731
    F = lambda key, default=0.0: function_from_spec(model_t.get(key, default), f"model.{key}")  # noqa: E731
    if preset == "volterra":
        return preset, ModelSpec(T=T, n_steps=n, phi=F("phi"), b=K("b"), f=K("f"), c=K("c"),
                                 sigma=K("sigma"), **game), None
    if preset == "sde":
        x0 = _number(model_t.get("x0", 0.0), "model.x0")
        bf, cf, sf = F("b"), F("c"), F("sigma")
        return preset, ModelSpec(
            T=T, n_steps=n, phi=x0,
            b=lambda t, s: bf(s) + 0.0 * t, c=lambda t, s: cf(s) + 0.0 * t,
            sigma=lambda t, s: sf(s) + 0.0 * t, f=K("f"), **game,
        ), None
    grid = make_uniform_grid(T, n)
    h = _number(model_t.get("h", 0.0), "model.h")
    if preset == "state-delay":
        dm = DelayStateModel(A=F("A"), B=K("B"), C=F("C"), D=F("D"), h=h, k=F("k"))
        return preset, delay_state_to_volterra(dm, grid, **game), dm
    dm = DelayControlModel(A=F("A"), C=F("C"), D=F("D"), h=h, k=F("k"))
    return preset, delay_control_to_volterra(dm, grid, **game), dm


def _experiment(t: dict) -> ExperimentConfig:
    _reject_unknown(t, _EXPERIMENT_KEYS, "[experiment]")
    kw: dict[str, Any] = {}
    if "Ns" in t:
        Ns = t["Ns"]
        if not isinstance(Ns, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in Ns):
            raise ConfigError("experiment.Ns must be a list of integers")
        kw["Ns"] = tuple(Ns)
    for key in ("N", "paths", "seed", "shift_steps", "batch_size"):
        if key in t:
            v = t[key]
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"experiment.{key} must be an integer")
            kw[key] = v
    if "seed" in kw and not 0 <= kw["seed"] < (1 << 64):
        raise ConfigError("experiment.seed must be an unsigned 64-bit integer")
    if "deviations" in t:
        devs = t["deviations"]
        if not isinstance(devs, list) or any(d not in DEVIATIONS for d in devs):
            raise ConfigError(f"experiment.deviations must be a list drawn from {DEVIATIONS}")
        kw["deviations"] = tuple(devs)
    if "solver_mode" in t:
        if t["solver_mode"] not in ("direct", "picard"):
            raise ConfigError("experiment.solver_mode must be 'direct' or 'picard'")
        kw["solver_mode"] = t["solver_mode"]
    return ExperimentConfig(**kw)


def _output(t: dict) -> OutputConfig:
    _reject_unknown(t, _OUTPUT_KEYS, "[output]")
    kw: dict[str, Any] = {}
    if "directory" in t:
        if not isinstance(t["directory"], str):
            raise ConfigError("output.directory must be a string")
        kw["directory"] = t["directory"]
    if "formats" in t:
        f = t["formats"]
        if not isinstance(f, list) or any(x not in ("csv", "json") for x in f) or not f:
            raise ConfigError("output.formats must be a non-empty list drawn from ['csv', 'json']")
        kw["formats"] = tuple(f)
    if "figures" in t:
        if not isinstance(t["figures"], bool):
            raise ConfigError("output.figures must be true or false")
        kw["figures"] = t["figures"]
    return OutputConfig(**kw)


def parse_config(text: str | bytes) -> RunConfig:
    data = text if isinstance(text, bytes) else text.encode("utf-8")
    try:
        raw = tomllib.loads(data.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not UTF-8: {exc}") from exc
    _reject_unknown(raw, _SECTIONS, "the top level")
    for sec in _SECTIONS:
        if sec in raw and not isinstance(raw[sec], dict):
            raise ConfigError(f"[{sec}] must be a table")
    preset, model, delay_model = build_model(raw.get("model", {}), raw.get("grid", {}))
    return RunConfig(
        preset=preset, model=model, experiment=_experiment(raw.get("experiment", {})),
        output=_output(raw.get("output", {})), sha256=hashlib.sha256(data).hexdigest(),
        delay_model=delay_model, raw=raw,
    )


def load_config(path: str | Path) -> RunConfig:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)
