"""Line-oriented run configuration: `key = value` pairs, `#` comments.

Validation enforces every admissibility inequality the engine relies on
(balance condition, chi range, intensity bounds, Picard gate) at parse
time, before any numerics run.
"""

from dataclasses import dataclass, field

import numpy as np

from .drift import (
    DriftSpec,
    constant_drift,
    lipschitz_demo_drift,
    tabulated_drift,
    ttw_drift,
)
from .engine.grid import GridSpec
from .engine.model import ACoeff, ModelSpec, a_benchmark, a_constant


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "model.alpha": "0.7",
    "model.gamma": "0.5",
    "model.eta": "1.0",
    "model.chi": "0.3",
    "model.T": "1.0",
    "drift.kind": "ttw",
    "drift.cap": "10.0",
    "drift.constant": "0.0",
    "drift.table": "",
    "a.kind": "benchmark",
    "a.constant": "1.0",
    "grid.h": "auto",
    "grid.extent": "2.0",
    "grid.center": "0.0",
    "grid.time_nodes": "10",
    "series.K": "12",
    "series.tol": "1e-8",
    "run.t_list": "0.1",
    "run.x": "0.0",
    "run.flow_choice": "anchor",
    "run.picard_k": "1",
    "mc.n_paths": "100000",
    "mc.n_steps": "256",
    "mc.seed": "20240901",
    "mc.scheme": "euler",
    "ck.t": "0.2",
    "ck.s": "0.1",
}


@dataclass
class RunConfig:
    model: ModelSpec
    grid: GridSpec
    t_list: list
    x: float
    flow_choice: object
    mc: dict
    ck: dict
    raw: dict = field(default_factory=dict)


def parse_config_text(text: str) -> dict:
    raw = dict(_DEFAULTS)
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        raw[key] = val
    return raw


def build_config(raw: dict) -> RunConfig:
    alpha = float(raw["model.alpha"])
    gamma = float(raw["model.gamma"])
    eta = float(raw["model.eta"])
    chi = float(raw["model.chi"])

    kind = raw["drift.kind"]
    if kind == "ttw":
        drift = ttw_drift(gamma, cap=float(raw["drift.cap"]))
    elif kind == "constant":
        drift = constant_drift(float(raw["drift.constant"]))
    elif kind == "zero":
        drift = constant_drift(0.0)
    elif kind == "lipschitz_demo":
        drift = lipschitz_demo_drift()
    elif kind == "tabulated":
        path = raw["drift.table"]
        if not path:
            raise ConfigError("drift.kind = tabulated needs drift.table = <csv>")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        drift = tabulated_drift(data[:, 0], data[:, 1], gamma)
    else:
        raise ConfigError(f"unknown drift.kind {kind!r}")

    if raw["a.kind"] == "benchmark":
        a = a_benchmark()
    elif raw["a.kind"] == "constant":
        a = a_constant(float(raw["a.constant"]))
    else:
        raise ConfigError(f"unknown a.kind {raw['a.kind']!r}")

    try:
        model = ModelSpec(alpha=alpha, drift=drift, a=a, chi=chi, eta=eta,
                          T=float(raw["model.T"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    t_list = sorted(float(v) for v in raw["run.t_list"].split(","))
    if not t_list or t_list[0] <= 0:
        raise ConfigError("run.t_list must hold positive times")
    if t_list[-1] > model.T:
        raise ConfigError(
            f"run times exceed the horizon T={model.T}: {t_list[-1]}"
        )

    if raw["grid.h"] == "auto":
        h = (t_list[0] * a.lo) ** (1.0 / alpha) / 5.0
    else:
        h = float(raw["grid.h"])
    grid = GridSpec(
        h=h,
        half_width=float(raw["grid.extent"]),
        center=float(raw["grid.center"]),
        n_time=int(raw["grid.time_nodes"]),
        trunc_k=int(raw["series.K"]),
    )
    try:
        grid.check_resolves(t_list[0], alpha, a.lo)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    choice = raw["run.flow_choice"]
    if choice == "anchor":
        flow_choice = "anchor"
    elif choice == "picard":
        k = int(raw["run.picard_k"])
        try:
            model.require_picard(k)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        flow_choice = ("picard", k)
    else:
        raise ConfigError(f"unknown run.flow_choice {choice!r}")

    mc = {
        "n_paths": int(float(raw["mc.n_paths"])),
        "n_steps": int(float(raw["mc.n_steps"])),
        "seed": int(raw["mc.seed"]),
        "scheme": raw["mc.scheme"],
    }
    ck = {"t": float(raw["ck.t"]), "s": float(raw["ck.s"])}
    return RunConfig(model=model, grid=grid, t_list=t_list,
                     x=float(raw["run.x"]), flow_choice=flow_choice,
                     mc=mc, ck=ck, raw=raw)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return build_config(parse_config_text(fh.read()))
