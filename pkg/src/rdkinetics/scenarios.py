"""Scenario files: parsing, validation and problem assembly.

A scenario is one TOML file with nested tables (generator, problem,
initial, grid, solver, verify).  Unknown keys anywhere are rejected so that
typos cannot silently change a run.  Random initial data is always drawn
from a seeded generator and the seed lands in the report.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fields import TimeGrid
from .general import ReactionSpec
from .generators import (
    Generator,
    birth_death_generator,
    ring_generator,
    two_point_generator,
)
from .measure import FiniteMeasureSpace
from .two_by_two import TwoByTwoProblem

__all__ = ["Scenario", "ScenarioError", "load_scenario"]


class ScenarioError(ValueError):
    """Malformed scenario file."""


_SCHEMA = {
    "generator": {"kind", "size", "rate", "weights", "matrix"},
    "problem": {"kind", "c1", "c2", "lambda", "alpha", "beta", "lambdas",
                "partition", "block_rates"},
    "initial": {"profile", "low", "high", "seed", "value", "values",
                "center", "width", "amplitude"},
    "grid": {"t_end", "dt", "steps"},
    "solver": {"gamma", "max_iter", "tol", "lsi_restarts", "lsi_seed"},
    "verify": {"oracle", "oracle_rtol", "oracle_atol"},
}


def _check_keys(data: dict, path: str = ""):
    if path == "":
        unknown = set(data) - set(_SCHEMA)
        if unknown:
            raise ScenarioError(f"unknown top-level tables: {sorted(unknown)}")
        for name, table in data.items():
            if not isinstance(table, dict):
                raise ScenarioError(f"[{name}] must be a table")
            bad = set(table) - _SCHEMA[name]
            if bad:
                raise ScenarioError(f"unknown keys in [{name}]: {sorted(bad)}")


@dataclass
class Scenario:
    """Validated scenario ready to be assembled into solver inputs."""

    generator: dict
    problem: dict
    initial: dict
    grid: dict
    solver: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    path: str = "<memory>"

    @property
    def kind(self) -> str:
        return self.problem["kind"]

    @property
    def seed(self) -> int:
        return int(self.initial.get("seed", 0))

    def build_generator(self) -> Generator:
        g = self.generator
        kind = g.get("kind")
        if kind == "ring":
            return ring_generator(int(g["size"]), float(g.get("rate", 1.0)))
        if kind == "two_point":
            return two_point_generator(float(g.get("rate", 1.0)))
        if kind == "birth_death":
            return birth_death_generator(np.asarray(g["weights"], dtype=float))
        if kind == "explicit":
            mat = np.asarray(g["matrix"], dtype=float)
            if "weights" in g:
                space = FiniteMeasureSpace(np.asarray(g["weights"], dtype=float))
            else:
                space = FiniteMeasureSpace.uniform(mat.shape[0])
            return Generator(mat, space)
        raise ScenarioError(f"unknown generator kind {kind!r}")

    def species_count(self) -> int:
        if self.kind == "two_by_two":
            return 4
        return len(self.problem["alpha"])

    def build_initial(self, space: FiniteMeasureSpace) -> list:
        ini = self.initial
        profile = ini.get("profile", "random")
        q = self.species_count()
        n = space.n
        if profile == "explicit":
            values = [np.asarray(v, dtype=float) for v in ini["values"]]
            if len(values) != q:
                raise ScenarioError(f"need {q} initial vectors, got {len(values)}")
            return values
        if profile == "constant":
            return [np.full(n, float(ini.get("value", 1.0))) for _ in range(q)]
        if profile == "bump":
            center = int(ini.get("center", n // 2))
            width = float(ini.get("width", max(n / 8.0, 1.0)))
            amp = float(ini.get("amplitude", 1.0))
            x = np.arange(n)
            d = np.minimum(np.abs(x - center), n - np.abs(x - center))
            bump = amp * np.exp(-((d / width) ** 2))
            return [bump + 0.1 * (i + 1) for i in range(q)]
        if profile == "random":
            rng = np.random.default_rng(self.seed)
            lo = float(ini.get("low", 0.0))
            hi = float(ini.get("high", 2.0))
            if lo < 0.0:
                raise ScenarioError("initial data must be nonnegative: low < 0")
            return [rng.uniform(lo, hi, n) for _ in range(q)]
        raise ScenarioError(f"unknown initial profile {profile!r}")

    def build_problem(self, gen: Generator):
        p = self.problem
        f = self.build_initial(gen.space)
        if self.kind == "two_by_two":
            return TwoByTwoProblem(
                gen, float(p["c1"]), float(p["c2"]), float(p["lambda"]), tuple(f)
            ), f
        if self.kind == "general":
            alpha = [int(a) for a in p["alpha"]]
            beta = [int(b) for b in p["beta"]]
            lambdas = [float(x) for x in p["lambdas"]]
            partition = tuple(int(k) for k in p["partition"])
            block_rates = [float(c) for c in p.get("block_rates", [1.0] * (max(partition) + 1))]
            spec = ReactionSpec.from_scaled(gen, alpha, beta, lambdas, partition, block_rates)
            return spec, f
        raise ScenarioError(f"unknown problem kind {self.kind!r}")

    def build_grid(self, t_end: float | None = None) -> TimeGrid:
        g = self.grid
        if t_end is None:
            t_end = g.get("t_end")
            if t_end == "auto":
                raise ScenarioError("auto horizon must be resolved by the caller")
            t_end = float(t_end)
        if "steps" in g:
            steps = int(g["steps"])
        elif "dt" in g:
            steps = max(1, round(t_end / float(g["dt"])))
        else:
            raise ScenarioError("[grid] needs steps or dt")
        return TimeGrid(t_end, steps)

    @property
    def wants_auto_horizon(self) -> bool:
        return self.grid.get("t_end") == "auto"


def load_scenario(path: str) -> Scenario:
    """Parse and structurally validate a scenario file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        # tomllib reports line/column in the message
        raise ScenarioError(f"{path}: {exc}") from exc
    _check_keys(data)
    for required in ("generator", "problem", "initial", "grid"):
        if required not in data:
            raise ScenarioError(f"{path}: missing [{required}] table")
    kind = data["problem"].get("kind")
    if kind not in ("two_by_two", "general"):
        raise ScenarioError(f"{path}: problem.kind must be two_by_two or general")
    if kind == "two_by_two":
        for key in ("c1", "c2", "lambda"):
            if key not in data["problem"]:
                raise ScenarioError(f"{path}: [problem] missing {key!r}")
    else:
        for key in ("alpha", "beta", "lambdas", "partition"):
            if key not in data["problem"]:
                raise ScenarioError(f"{path}: [problem] missing {key!r}")
    grid_tbl = data["grid"]
    if grid_tbl.get("t_end") == "auto":
        if "dt" not in grid_tbl:
            raise ScenarioError(f"{path}: auto horizon needs grid.dt")
    elif "t_end" not in grid_tbl:
        raise ScenarioError(f"{path}: [grid] needs t_end")
    return Scenario(
        generator=data["generator"],
        problem=data["problem"],
        initial=data["initial"],
        grid=data["grid"],
        solver=data.get("solver", {}),
        verify=data.get("verify", {}),
        path=path,
    )
