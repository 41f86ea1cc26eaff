"""Run configuration: flat ``section.key = value`` text files.

Blank lines and ``#`` comments are ignored.  Lists are comma separated.
Every key has a typed default; unknown keys are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .cost import CostModel, check_separation, make_cost
from .errors import ConfigurationError
from .flow import FlowConfig
from .geometry import DensitySpec, DomainSpec
from .initdata import ContinuationConfig

MAX_RESOLUTION = 256


def _floats(s):
    if isinstance(s, (list, tuple)):
        return tuple(float(v) for v in s)
    return tuple(float(v) for v in str(s).split(",") if v.strip())


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(conv):
    def f(s):
        if s is None or str(s).strip().lower() in ("", "none", "auto"):
            return None
        return conv(s)
    return f


def _domain_keys(prefix, kind, center, half):
    return {
        f"{prefix}.kind": (str, kind),
        f"{prefix}.center": (_floats, center),
        f"{prefix}.half_extents": (_floats, half),
        f"{prefix}.bounds": (_opt(_floats), None),
        f"{prefix}.r0": (float, 0.1),
    }


def _density_keys(prefix):
    return {
        f"{prefix}.kind": (str, "uniform"),
        f"{prefix}.value": (float, 1.0),
        f"{prefix}.slope": (_floats, ()),
        f"{prefix}.amplitude": (float, 0.0),
        f"{prefix}.path": (_opt(str), None),
    }


SCHEMA = {
    **_domain_keys("source", "interval", (0.5,), (0.5,)),
    **_domain_keys("target", "interval", (2.5,), (0.5,)),
    **_density_keys("rho"),
    **_density_keys("rho_star"),
    "cost.kind": (str, "quadratic"),
    "cost.p": (float, 2.0),
    "cost.eta": (str, "zero"),
    "cost.eta_coef": (float, 0.0),
    "cost.m1": (float, 1e-3),
    "reference.kind": (str, "quadratic"),
    "reference.p": (float, 2.0),
    "reference.eta": (str, "zero"),
    "reference.eta_coef": (float, 0.0),
    "grid.resolution": (int, 64),
    "grid.target_resolution": (_opt(int), None),
    "flow.dt_safety": (float, 0.9),
    "flow.residual_tol": (float, 1e-8),
    "flow.max_steps": (int, 200_000),
    "flow.boundary_tol": (float, 1e-11),
    "flow.boundary_max_iter": (int, 50),
    "flow.pd_floor": (float, 1e-8),
    "flow.cadence": (int, 100),
    "flow.max_rejections": (int, 10),
    "flow.initial": (_opt(str), None),
    "continuation.steps": (_opt(int), None),
    "continuation.newton_tol": (float, 1e-10),
    "continuation.newton_max_iter": (int, 20),
    "continuation.linear_tol": (float, 1e-12),
    "continuation.zero_mean": (_bool, True),
    "mtw.directions": (int, 16),
    "mtw.max_x": (int, 16),
    "mtw.max_y": (int, 16),
    "mtw.refine": (int, 16),
    "poly.n": (int, 2),
    "poly.sigma": (float, 0.1),
    "poly.C": (float, 1.0),
    "verify.potential": (_opt(str), None),
    "verify.coverage_tol": (float, 0.05),
    "verify.oracle_cap": (int, 64),
    "verify.strict_pairs": (int, 20000),
    "output.dir": (str, "parot_out"),
    "seed": (int, 0),
}


def parse_text(text: str, origin: str = "<config>") -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigurationError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigurationError(f"{origin}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


@dataclass
class RunConfig:
    values: dict
    base_dir: Path

    @classmethod
    def from_mapping(cls, raw: dict | None = None, base_dir=".") -> "RunConfig":
        raw = dict(raw or {})
        vals = {}
        for key, (conv, default) in SCHEMA.items():
            if key in raw:
                try:
                    vals[key] = conv(raw.pop(key))
                except (TypeError, ValueError) as exc:
                    raise ConfigurationError(f"bad value for {key}: {exc}") from exc
            else:
                vals[key] = default
        if raw:
            raise ConfigurationError(f"unknown keys: {sorted(raw)}")
        cfg = cls(vals, Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file {str(p)!r} not found")
        return cls.from_mapping(parse_text(p.read_text(), str(p)), p.parent)

    def override(self, **kw) -> "RunConfig":
        raw = dict(self.values)
        for k, v in kw.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigurationError(f"unknown key {key!r}")
            raw[key] = v
        return RunConfig.from_mapping(raw, self.base_dir)

    def __getitem__(self, key):
        return self.values[key]

    # -- validation ------------------------------------------------------

    def _path(self, p):
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def validate(self):
        v = self.values
        for res_key in ("grid.resolution", "grid.target_resolution"):
            r = v[res_key]
            if r is not None and not (4 <= r <= MAX_RESOLUTION):
                raise ConfigurationError(f"{res_key} must lie in [4, {MAX_RESOLUTION}]")
        for prefix in ("rho", "rho_star"):
            path = v[f"{prefix}.path"]
            if v[f"{prefix}.kind"] == "csv" and (path is None or not self._path(path).is_file()):
                raise ConfigurationError(f"{prefix}.path {path!r} does not exist")
        for key in ("flow.initial", "verify.potential"):
            if v[key] is not None and not self._path(v[key]).is_file():
                raise ConfigurationError(f"{key} {v[key]!r} does not exist")
        if not 0 < v["verify.oracle_cap"] <= 64:
            raise ConfigurationError("verify.oracle_cap must lie in [1, 64]")
        if not (0 <= v["verify.coverage_tol"] < 1):
            raise ConfigurationError("verify.coverage_tol must lie in [0, 1)")
        if not math.isfinite(v["poly.sigma"]):
            raise ConfigurationError("poly.sigma must be finite")
        self.source_spec()
        self.target_spec()
        self.cost()
        self.reference_cost()
        self.flow_config()
        self.continuation_config()

    # -- builders ----------------------------------------------------------

    def _domain(self, prefix) -> DomainSpec:
        v = self.values
        kind = v[f"{prefix}.kind"]
        bounds = v[f"{prefix}.bounds"]
        if bounds is not None:
            if len(bounds) % 2:
                raise ConfigurationError(f"{prefix}.bounds needs lo, hi pairs")
            lo, hi = bounds[0::2], bounds[1::2]
            center = tuple((a + b) / 2 for a, b in zip(lo, hi))
            half = tuple((b - a) / 2 for a, b in zip(lo, hi))
        else:
            center, half = v[f"{prefix}.center"], v[f"{prefix}.half_extents"]
        try:
            return DomainSpec(kind, center, half, v[f"{prefix}.r0"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad {prefix} domain: {exc}") from exc

    def source_spec(self) -> DomainSpec:
        return self._domain("source")

    def target_spec(self) -> DomainSpec:
        return self._domain("target")

    def density_spec(self, prefix) -> DensitySpec:
        v = self.values
        path = v[f"{prefix}.path"]
        return DensitySpec(v[f"{prefix}.kind"], v[f"{prefix}.value"], v[f"{prefix}.slope"],
                           v[f"{prefix}.amplitude"], str(self._path(path)) if path else None)

    def cost(self) -> CostModel:
        v = self.values
        return make_cost(v["cost.kind"], v["cost.p"], v["cost.eta"], v["cost.eta_coef"], v["cost.m1"])

    def reference_cost(self) -> CostModel:
        v = self.values
        return make_cost(v["reference.kind"], v["reference.p"], v["reference.eta"], v["reference.eta_coef"], v["cost.m1"])

    def check_costs(self) -> float:
        src, tgt = self.source_spec(), self.target_spec()
        check_separation(self.reference_cost(), src, tgt)
        return check_separation(self.cost(), src, tgt)

    def flow_config(self) -> FlowConfig:
        v = self.values
        return FlowConfig(
            dt_safety=v["flow.dt_safety"], residual_tol=v["flow.residual_tol"], max_steps=v["flow.max_steps"],
            boundary_tol=v["flow.boundary_tol"], boundary_max_iter=v["flow.boundary_max_iter"],
            pd_floor=v["flow.pd_floor"], cadence=v["flow.cadence"], max_rejections=v["flow.max_rejections"],
        )

    def continuation_config(self) -> ContinuationConfig:
        v = self.values
        return ContinuationConfig(
            steps=v["continuation.steps"], newton_tol=v["continuation.newton_tol"],
            newton_max_iter=v["continuation.newton_max_iter"], linear_tol=v["continuation.linear_tol"],
            zero_mean=v["continuation.zero_mean"],
        )

    def as_dict(self) -> dict:
        out = {}
        for k, val in sorted(self.values.items()):
            out[k] = list(val) if isinstance(val, tuple) else val
        return out

    def path(self, key) -> Path | None:
        val = self.values[key]
        return None if val is None else self._path(val)
