"""Experiment configuration: sectioned ``key = value`` files.

Every key has a default (see :func:`reference_text`), so an empty file is a
valid configuration of the noisy-forecast experiment.  Problems are raised
as :class:`ConfigError` carrying the file line where possible.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field

import numpy as np

from pcfa.forecast import DemandParams, ForecastConfig, PriceParams
from pcfa.policy import (AffineRhs, ConstantForecast, ExponentialStorageBounds, Identity, LookupTable,
                         StorageBoundsTable)
from pcfa.simulator import TEST_SEED_BASE, SimConfig
from pcfa.storage import ModelParams

POLICIES = ("identity", "constant", "lookup", "affine", "exp_bounds", "bounds_table")
METHODS = ("none", "sng", "sgf", "static")
STEPSIZES = ("rmsprop", "adagrad", "polynomial", "schedule")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


# (section, key, default, help); defaults are strings as they would be written
SCHEMA = [
    ("model", "r_max", "100", "storage capacity"),
    ("model", "charge_max", "10", "maximum charge per period"),
    ("model", "discharge_max", "10", "maximum discharge per period"),
    ("model", "charge_eff", "0.9", "charging efficiency"),
    ("model", "discharge_eff", "0.9", "discharging efficiency"),
    ("model", "penalty", "50", "cost per unit of unmet demand"),
    ("model", "T", "48", "last period; the horizon is 0..T"),
    ("model", "H", "23", "lookahead length of the policy"),
    ("model", "initial_storage", "0", "storage level at t = 0"),
    ("forecast", "sigma2_E", "40", "variance of the wind forecast noise"),
    ("forecast", "alpha", "0.2", "decay of the noise covariance"),
    ("forecast", "window", "", "forecast lead times kept per period (empty: H)"),
    ("forecast", "sigma_D", "1.0", "noise of demand forecasts"),
    ("forecast", "cdf_file", "", "empirical wind-error CDF table (empty: packaged table)"),
    ("forecast", "energy_mean", "25", "mean of the wind base profile"),
    ("forecast", "energy_amplitude", "15", "amplitude of the wind base profile"),
    ("forecast", "demand_base", "30", "mean demand"),
    ("forecast", "demand_amplitude", "10", "amplitude of the demand cycle"),
    ("forecast", "demand_frequency", "2", "demand cycles over the horizon"),
    ("forecast", "demand_rho", "0.7", "AR(1) coefficient of demand noise"),
    ("forecast", "demand_noise", "1.0", "scale of demand noise"),
    ("forecast", "price_slope", "0.1", "slope of the grid price path"),
    ("forecast", "price_mean", "20", "mean of the grid price level"),
    ("forecast", "price_std", "5", "standard deviation of the grid price level"),
    ("policy", "kind", "lookup", "one of " + ", ".join(POLICIES)),
    ("policy", "theta", "", "initial parameters, comma separated (empty: random start or the benchmark values)"),
    ("optimizer", "method", "sng", "one of " + ", ".join(METHODS)),
    ("optimizer", "iterations", "800", "number of iterations N"),
    ("optimizer", "batch", "12", "sample paths per SGF iteration"),
    ("optimizer", "h", "0.05", "finite-difference step of SNG"),
    ("optimizer", "stepsize", "rmsprop", "one of " + ", ".join(STEPSIZES) + "; schedule is 1/sqrt(k)"),
    ("optimizer", "eta", "0.05", "learning rate of rmsprop/adagrad"),
    ("optimizer", "rms_beta", "0.9", "RMSProp averaging weight"),
    ("optimizer", "adagrad_eps", "1e-8", "AdaGrad epsilon"),
    ("optimizer", "L0", "1.0", "SGF smoothing constant"),
    ("optimizer", "smoothing_beta", "0.25", "SGF smoothing exponent in (0, 1/2)"),
    ("optimizer", "project", "", "project iterates onto the box (empty: yes for SNG and static, no for SGF)"),
    ("optimizer", "box_low", "0", "lower box bound per coordinate"),
    ("optimizer", "box_high", "3", "upper box bound per coordinate"),
    ("optimizer", "starts", "1", "number of random starts"),
    ("optimizer", "start_low", "0.2", "random starts are uniform on [start_low, start_high]"),
    ("optimizer", "start_high", "2.0", ""),
    ("evaluation", "n_test", "1000", "held-out test paths"),
    ("evaluation", "n_paths", "100", "paths for simulate and grid-search"),
    ("seeds", "seed", "0", "master seed: random starts and output index"),
    ("seeds", "train_seed", "10000000", "first training path seed"),
    ("seeds", "test_seed", str(TEST_SEED_BASE), "first test path seed"),
    ("grid", "axis1", "0:0.5:1.5:0.05", "coordinate:start:stop:step"),
    ("grid", "axis2", "", "optional second axis"),
    ("grid", "lockstep", "no", "warm-start all grid points from the first"),
]

_DEFAULTS = {(s, k): v for s, k, v, _ in SCHEMA}


def reference_text() -> str:
    """Commented configuration listing every key with its default."""
    out = ["# pcfa experiment configuration; every key is optional", ""]
    section = None
    for s, k, v, h in SCHEMA:
        if s != section:
            if section is not None:
                out.append("")
            out.append(f"[{s}]")
            section = s
        if h:
            out.append(f"# {h}")
        out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class Axis:
    coord: int
    values: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig
    policy: str
    theta: tuple | None
    method: str
    iterations: int
    batch: int
    h: float
    stepsize: str
    eta: float
    rms_beta: float
    adagrad_eps: float
    L0: float
    smoothing_beta: float
    project: bool
    box: tuple
    starts: int
    start_range: tuple
    n_test: int
    n_paths: int
    seed: int
    train_seed: int
    test_seed: int
    axes: tuple
    lockstep: bool
    source: str = ""  # the effective configuration as text

    @property
    def dim(self) -> int:
        H = self.sim.model.lookahead_H
        return {"identity": 0, "constant": 1, "lookup": H, "affine": 2, "exp_bounds": 4,
                "bounds_table": 2 * H}[self.policy]

    def parameterization(self, vector=None):
        v = self.benchmark_vector() if vector is None else np.asarray(vector, dtype=float)
        H = self.sim.model.lookahead_H
        if self.policy == "identity":
            return Identity()
        if self.policy == "constant":
            return ConstantForecast(v[0])
        if self.policy == "lookup":
            return LookupTable(v)
        if self.policy == "affine":
            return AffineRhs(*v)
        if self.policy == "exp_bounds":
            return ExponentialStorageBounds(*v)
        return StorageBoundsTable(v[:H], v[H:])

    def benchmark_vector(self) -> np.ndarray:
        """Parameters that reproduce the unmodified lookahead (or ``theta``)."""
        if self.theta is not None:
            return np.array(self.theta, dtype=float)
        H = self.sim.model.lookahead_H
        r_max = self.sim.model.r_max
        return {
            "identity": np.zeros(0),
            "constant": np.ones(1),
            "lookup": np.ones(H),
            "affine": np.array([0.0, 1.0]),
            "exp_bounds": np.array([0.0, 0.0, r_max, 0.0]),
            "bounds_table": np.concatenate([np.zeros(H), np.full(H, r_max)]),
        }[self.policy]

    def starting_points(self) -> np.ndarray:
        """``theta`` if given, else ``starts`` uniform draws from the start range."""
        if self.theta is not None:
            return np.array([self.theta], dtype=float)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x7374]))
        lo, hi = self.start_range
        return rng.uniform(lo, hi, size=(self.starts, self.dim))


def _lines(text: str) -> dict:
    """(section, key) -> line number, for error messages."""
    where = {}
    section = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif section and line and line[0] not in "#;" and ("=" in line or ":" in line):
            key = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
            where[(section, key)] = i
    return where


def _axis(spec: str, dim: int) -> Axis:
    parts = spec.split(":")
    if len(parts) != 4:
        raise ValueError("axis must be coordinate:start:stop:step")
    c = int(parts[0])
    start, stop, step = (float(x) for x in parts[1:])
    if not 0 <= c < dim:
        raise ValueError(f"coordinate {c} outside 0..{dim - 1}")
    if step <= 0 or stop < start:
        raise ValueError("axis needs step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return Axis(c, start + step * np.arange(n))


def parse_config(text: str = "", path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text, source=path or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), path) from None
    lines = _lines(text)
    known = {(s, k.lower()) for s, k, _, _ in SCHEMA}
    for s in cp.sections():
        if s not in {x for x, _ in known}:
            raise ConfigError(f"unknown section [{s}]", None, path)
        for k in cp[s]:
            if (s, k) not in known:
                raise ConfigError(f"unknown key '{k}' in [{s}]", lines.get((s, k)), path)
    for (s, k), v in (overrides or {}).items():
        if not cp.has_section(s):
            cp.add_section(s)
        cp[s][k.lower()] = str(v)

    def raw(s, k):
        return cp.get(s, k.lower(), fallback=_DEFAULTS[(s, k)]).strip()

    def get(s, k, conv, check=None, msg=""):
        v = raw(s, k)
        try:
            out = conv(v)
        except ValueError as exc:
            raise ConfigError(f"[{s}] {k} = {v!r}: {exc}", lines.get((s, k.lower())), path) from None
        if check is not None and not check(out):
            raise ConfigError(f"[{s}] {k} = {v!r}: {msg}", lines.get((s, k.lower())), path)
        return out

    def boolean(v):
        low = v.lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise ValueError("expected yes or no")

    def choice(options):
        def conv(v):
            if v.lower() not in options:
                raise ValueError("expected one of " + ", ".join(options))
            return v.lower()
        return conv

    pos = (lambda x: x > 0, "must be positive")
    nonneg = (lambda x: x >= 0, "must be nonnegative")
    T = get("model", "T", int, *nonneg)
    H = get("model", "H", int, *nonneg)
    if H > T:
        raise ConfigError(f"[model] H = {H} exceeds T = {T}", lines.get(("model", "h")), path)
    try:
        model = ModelParams(
            r_max=get("model", "r_max", float), charge_max=get("model", "charge_max", float),
            discharge_max=get("model", "discharge_max", float), charge_eff=get("model", "charge_eff", float),
            discharge_eff=get("model", "discharge_eff", float), penalty=get("model", "penalty", float),
            horizon_T=T, lookahead_H=H)
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}", None, path) from None

    window = raw("forecast", "window")
    window = H if window == "" else get("forecast", "window", int, *nonneg)
    cdf = raw("forecast", "cdf_file") or None
    if cdf is not None:
        if path and not os.path.isabs(cdf):
            cdf = os.path.join(os.path.dirname(os.path.abspath(path)), cdf)
        if not os.path.isfile(cdf):
            raise ConfigError(f"[forecast] cdf_file {cdf!r} does not exist", lines.get(("forecast", "cdf_file")), path)
    try:
        fc = ForecastConfig(
            T=T, H=window, sigma_E=math.sqrt(get("forecast", "sigma2_E", float, *nonneg)),
            alpha=get("forecast", "alpha", float), sigma_D=get("forecast", "sigma_D", float, *nonneg),
            energy_mean=get("forecast", "energy_mean", float),
            energy_amplitude=get("forecast", "energy_amplitude", float),
            demand=DemandParams(base=get("forecast", "demand_base", float),
                                amplitude=get("forecast", "demand_amplitude", float),
                                frequency=get("forecast", "demand_frequency", float),
                                rho=get("forecast", "demand_rho", float),
                                noise_scale=get("forecast", "demand_noise", float)),
            price=PriceParams(slope=get("forecast", "price_slope", float), mean=get("forecast", "price_mean", float),
                              std=get("forecast", "price_std", float)),
            cdf_path=cdf)
        sim = SimConfig(model=model, forecast=fc, initial_storage=get("model", "initial_storage", float))
    except ValueError as exc:
        raise ConfigError(str(exc), None, path) from None

    policy = get("policy", "kind", choice(POLICIES))
    theta_txt = raw("policy", "theta")
    theta = None
    if theta_txt:
        theta = get("policy", "theta", lambda v: tuple(float(x) for x in v.replace(",", " ").split()))
    method = get("optimizer", "method", choice(METHODS))
    project_txt = raw("optimizer", "project")
    project = method != "sgf" if project_txt == "" else get("optimizer", "project", boolean)
    seed = get("seeds", "seed", int, *nonneg)
    train_seed = get("seeds", "train_seed", int, *nonneg)
    test_seed = get("seeds", "test_seed", int, *nonneg)
    iterations = get("optimizer", "iterations", int, *pos)
    batch = get("optimizer", "batch", int, *pos)
    starts = get("optimizer", "starts", int, *pos)
    n_test = get("evaluation", "n_test", int, *pos)
    n_paths = get("evaluation", "n_paths", int, *pos)

    cfg = ExperimentConfig(
        sim=sim, policy=policy, theta=theta, method=method, iterations=iterations, batch=batch,
        h=get("optimizer", "h", float, *pos), stepsize=get("optimizer", "stepsize", choice(STEPSIZES)),
        eta=get("optimizer", "eta", float, *pos), rms_beta=get("optimizer", "rms_beta", float,
                                                                lambda b: 0 < b < 1, "must lie in (0, 1)"),
        adagrad_eps=get("optimizer", "adagrad_eps", float, *nonneg), L0=get("optimizer", "L0", float, *pos),
        smoothing_beta=get("optimizer", "smoothing_beta", float, lambda b: 0 < b < 0.5, "must lie in (0, 1/2)"),
        project=project, box=(get("optimizer", "box_low", float), get("optimizer", "box_high", float)),
        starts=starts, start_range=(get("optimizer", "start_low", float), get("optimizer", "start_high", float)),
        n_test=n_test, n_paths=n_paths, seed=seed, train_seed=train_seed, test_seed=test_seed, axes=(),
        lockstep=get("grid", "lockstep", boolean), source="")

    if theta is not None and len(theta) != cfg.dim:
        raise ConfigError(f"[policy] theta has {len(theta)} entries, {policy} needs {cfg.dim}",
                          lines.get(("policy", "theta")), path)
    if cfg.box[0] > cfg.box[1]:
        raise ConfigError("[optimizer] box_low exceeds box_high", lines.get(("optimizer", "box_low")), path)
    if policy == "identity" and method != "none":
        raise ConfigError("the identity policy has no parameters to tune", lines.get(("optimizer", "method")), path)
    if method == "static" and policy != "affine":
        raise ConfigError("static mode needs policy kind = affine", lines.get(("policy", "kind")), path)
    if method == "static" and fc.H < T:
        raise ConfigError(f"static mode needs [forecast] window >= T = {T}", lines.get(("forecast", "window")), path)
    per_start = iterations * (batch if method == "sgf" else 1)
    train_end = train_seed + starts * per_start
    if not (train_end <= test_seed or test_seed + max(n_test, n_paths) <= train_seed):
        raise ConfigError(f"training seeds {train_seed}..{train_end - 1} overlap the test seeds from {test_seed}",
                          lines.get(("seeds", "train_seed")), path)
    axes = []
    for name in ("axis1", "axis2"):
        spec = raw("grid", name)
        if spec:
            axes.append(get("grid", name, lambda v: _axis(v, max(cfg.dim, 1))))
    cfg = _replace(cfg, axes=tuple(axes))
    return _replace(cfg, source=effective_text(cp))


def _replace(cfg, **kw):
    from dataclasses import replace
    return replace(cfg, **kw)


def effective_text(cp: configparser.ConfigParser) -> str:
    """All keys with their effective values, in schema order."""
    out = []
    section = None
    for s, k, v, _ in SCHEMA:
        if s != section:
            out.append(f"[{s}]")
            section = s
        out.append(f"{k} = {cp.get(s, k.lower(), fallback=v).strip()}")
    return "\n".join(out) + "\n"


def load_config(path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    if path is None:
        return parse_config("", None, overrides)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse_config(text, path, overrides)
