"""Experiment configs, parameter sweeps and CSV result tables.

A config is a YAML document::

    system:
      N: 10
      p: 0.9
      lambda: 0.99
      gamma_tr: 0.5
      gamma_sm: 0.3
      sources:
        - {kind: random_arrival, mu: 0.6, rho: 0.7, rho_bar: 0.4}
        - {kind: generate_at_will, rho: 0.7, rho_bar: 0.4}
    sweep: {param: gamma_tr, values: [0.1, 0.3, 0.5]}
    policies: [optimal, truncated, lower_bound, baseline]
    sim: {replications: 1000, seed: 0}
    output: results.csv

For a ``source_count`` sweep the sources are taken cyclically from
``system.sources``. Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import csv
import io
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import yaml

from .lp import SolverFailure
from .model import SystemSpec
from .occupancy import solve_joint
from .simulator import SimConfig, run
from .weakly_coupled import solve_decomposed

POLICIES = ("optimal", "truncated", "lower_bound", "baseline", "idle")
SWEEP_PARAMS = ("gamma_tr", "p", "source_count")
JOINT_GUARD = 1_000_000
CSV_HEADER = ("sweep_param", "policy", "lp_objective", "sim_qaoi", "sim_qaoi_ci95",
              "sim_tr", "sim_sm", "wall_ms", "status")

_prob = {"type": "number", "minimum": 0, "maximum": 1}
_SOURCE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "rho", "rho_bar"],
    "properties": {
        "kind": {"enum": ["random_arrival", "generate_at_will"]},
        "mu": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "rho": _prob,
        "rho_bar": _prob,
    },
}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N", "p", "lambda", "gamma_tr", "gamma_sm", "sources"],
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "lambda": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "gamma_tr": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "gamma_sm": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "sources": {"type": "array", "minItems": 1, "items": _SOURCE},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["param", "values"],
            "properties": {
                "param": {"enum": list(SWEEP_PARAMS)},
                "values": {"type": "array", "minItems": 1, "items": {"type": "number"}},
            },
        },
        "policies": {
            "type": "array",
            "minItems": 1,
            "uniqueItems": True,
            "items": {"enum": list(POLICIES)},
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "replications": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "horizon": {"type": ["integer", "null"], "minimum": 1},
                "tail_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "max_horizon": {"type": "integer", "minimum": 1},
            },
        },
        "output": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "allow_large_joint": {"type": "boolean"},
        "report_wall_time": {"type": "boolean"},
    },
}


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads "1e-6" as a string; accept exponent floats without a dot
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                  |[0-9][0-9_]*[eE][-+]?[0-9]+
                  |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                  |\.(?:inf|Inf|INF)|\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


@dataclass(frozen=True)
class ExperimentConfig:
    base: SystemSpec
    sweep_param: str | None = None
    grid: tuple[float, ...] = ()
    policies: tuple[str, ...] = ("optimal", "truncated", "lower_bound", "baseline")
    sim: SimConfig = field(default_factory=SimConfig)
    output: str | None = None
    threads: int = 1
    allow_large_joint: bool = False
    report_wall_time: bool = False

    def points(self) -> list[tuple[float, SystemSpec]]:
        """Grid values with the spec of each point, in grid order."""
        if self.sweep_param is None:
            return [(float("nan"), self.base)]
        out = []
        for v in self.grid:
            if self.sweep_param == "source_count":
                srcs = self.base.sources
                out.append((v, self.base.with_(sources=tuple(srcs[k % len(srcs)]
                                                             for k in range(int(v))))))
            else:
                out.append((v, self.base.with_(**{self.sweep_param: v})))
        return out


def lint(doc) -> list[str]:
    """All problems found in a parsed config document (empty if valid)."""
    v = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = []
    for e in sorted(v.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        where = "/".join(map(str, e.absolute_path)) or "<root>"
        errors.append(f"{where}: {e.message}")
    if errors:
        return errors
    for i, s in enumerate(doc["system"]["sources"]):
        if (s["kind"] == "random_arrival") != ("mu" in s):
            errors.append(f"system/sources/{i}: mu is required for random_arrival "
                          "and not allowed for generate_at_will")
    sweep = doc.get("sweep")
    if sweep:
        for v in sweep["values"]:
            if sweep["param"] == "source_count" and (v != int(v) or v < 1):
                errors.append(f"sweep/values: source_count {v} is not a positive integer")
            elif sweep["param"] == "p" and not 0 < v <= 1:
                errors.append(f"sweep/values: p={v} outside (0, 1]")
            elif sweep["param"] == "gamma_tr" and not 0 < v <= 1:
                errors.append(f"sweep/values: gamma_tr={v} outside (0, 1]")
    return errors


def parse_config(doc, *, seed: int | None = None, threads: int | None = None,
                 allow_large_joint: bool | None = None, output: str | None = None
                 ) -> ExperimentConfig:
    """Validate a parsed document and build the config; overrides come from the command line."""
    errors = lint(doc)
    if errors:
        raise ConfigError("\n".join(errors))
    try:
        base = SystemSpec.from_dict({**doc["system"], "sources": [
            {"mu": None, **s} for s in doc["system"]["sources"]]})
    except ValueError as e:
        raise ConfigError(f"system: {e}") from None
    sim = SimConfig(**doc.get("sim", {}))
    if seed is not None:
        sim = replace(sim, seed=seed)
    sweep = doc.get("sweep")
    cfg = ExperimentConfig(
        base=base,
        sweep_param=sweep["param"] if sweep else None,
        grid=tuple(sweep["values"]) if sweep else (),
        policies=tuple(doc.get("policies", ExperimentConfig.policies)),
        sim=sim,
        output=output or doc.get("output"),
        threads=threads or doc.get("threads", 1),
        allow_large_joint=bool(allow_large_joint or doc.get("allow_large_joint", False)),
        report_wall_time=doc.get("report_wall_time", False),
    )
    check_joint_guard(cfg)
    return cfg


def check_joint_guard(cfg: ExperimentConfig) -> None:
    if "optimal" not in cfg.policies or cfg.allow_large_joint:
        return
    for v, spec in cfg.points():
        if spec.joint_size > JOINT_GUARD:
            raise ConfigError(
                f"optimal policy requested with {spec.joint_size} joint states "
                f"(> {JOINT_GUARD}) at sweep value {v:g}; use truncated and lower_bound "
                "instead, or pass --allow-large-joint")


def parse_yaml(text: str):
    """Parse config text; exponent floats such as ``1e-6`` are read as numbers."""
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from None


def load_document(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return parse_yaml(text)


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config(load_document(path), **overrides)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    sweep_param: float
    policy: str
    lp_objective: float | None = None
    sim_qaoi: float | None = None
    sim_qaoi_ci95: float | None = None
    sim_tr: float | None = None
    sim_sm: float | None = None
    wall_ms: float | None = None
    status: str = "ok"


def _failed(v, policy, t0, e) -> ResultRow:
    kind = "solver_failure" if isinstance(e, SolverFailure) else "error"
    msg = " ".join(str(e).split())
    return ResultRow(v, policy, wall_ms=1e3 * (time.perf_counter() - t0),
                     status=f"{kind}: {msg}")


def run_point(v: float, spec: SystemSpec, policies, sim: SimConfig) -> list[ResultRow]:
    """Solve and simulate every requested policy at one grid point; failures become rows."""
    rows = {}
    joint = decomposed = None

    def simulate(policy_obj):
        m = run(policy_obj, spec, sim)
        return dict(sim_qaoi=m.qaoi_mean, sim_qaoi_ci95=m.qaoi_ci95,
                    sim_tr=m.tr_mean, sim_sm=m.sm_mean)

    for name in policies:
        t0 = time.perf_counter()
        try:
            if name == "optimal":
                joint = joint or solve_joint(spec)
                sol, _, pol = joint
                rows[name] = ResultRow(v, name, lp_objective=sol.objective_value, **simulate(pol))
            elif name in ("truncated", "lower_bound"):
                decomposed = decomposed or solve_decomposed(spec)
                _, tp, lb = decomposed
                if name == "lower_bound":
                    rows[name] = ResultRow(v, name, lp_objective=lb)
                else:
                    rows[name] = ResultRow(v, name, **simulate(tp))
            else:
                rows[name] = ResultRow(v, name, **simulate(name))
        except Exception as e:  # recorded in the table, the sweep goes on
            rows[name] = _failed(v, name, t0, e)
            continue
        rows[name] = replace(rows[name], wall_ms=1e3 * (time.perf_counter() - t0))
    return [rows[name] for name in policies]


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    """Rows in grid-major, policy-minor order, whatever order the workers finish in."""
    if not cfg.policies:
        raise ConfigError("no policies requested")
    pts = cfg.points()
    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        chunks = list(pool.map(lambda vs: run_point(vs[0], vs[1], cfg.policies, cfg.sim), pts))
    return [row for chunk in chunks for row in chunk]


def _fmt(v) -> str:
    if v is None or v != v:  # missing or NaN
        return ""
    return f"{v:.10g}"


def format_csv(rows: list[ResultRow], wall_time: bool = False) -> str:
    """CSV text; ``wall_ms`` is left empty unless ``wall_time`` (keeps reruns byte-identical)."""
    if not rows:
        raise ValueError("empty result table")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(r.sweep_param), r.policy, _fmt(r.lp_objective), _fmt(r.sim_qaoi),
                    _fmt(r.sim_qaoi_ci95), _fmt(r.sim_tr), _fmt(r.sim_sm),
                    _fmt(r.wall_ms) if wall_time else "", r.status])
    return buf.getvalue()


def emit_csv(rows: list[ResultRow], path, wall_time: bool = False) -> None:
    Path(path).write_text(format_csv(rows, wall_time))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
