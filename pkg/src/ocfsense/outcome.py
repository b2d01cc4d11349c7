"""Result record shared by the three mechanisms."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .channel import SubcarrierAssignment
from .sensing import UtilityReport

OUTCOME_SCHEMA = "ocfsense.outcome/1"
MODES = ("centralized", "noncoop", "ocf-random", "ocf-priority")


@dataclass(frozen=True, eq=False)
class MechanismOutcome:
    mode: str
    seed: int
    alpha: float | None
    assignment: SubcarrierAssignment
    participation: np.ndarray  # N x M, 0/1
    utilities: UtilityReport
    diagnostics: dict[str, Any] = field(default_factory=dict)
    scenario_meta: dict[str, Any] = field(default_factory=dict)
    payoffs: np.ndarray | None = None

    def __post_init__(self):
        x = np.array(self.participation, dtype=np.int8)
        x.setflags(write=False)
        object.__setattr__(self, "participation", x)

    @property
    def platform_utility(self) -> float:
        return self.utilities.platform_utility

    def to_dict(self) -> dict[str, Any]:
        d = {
            "schema": OUTCOME_SCHEMA,
            "mode": self.mode,
            "seed": self.seed,
            "alpha": self.alpha,
            "scenario": self.scenario_meta,
            "assignment": self.assignment.to_dict(),
            "participation": self.participation.tolist(),
            "utilities": self.utilities.to_dict(),
            "diagnostics": self.diagnostics,
        }
        if self.payoffs is not None:
            d["payoffs"] = np.asarray(self.payoffs).tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MechanismOutcome":
        if data.get("schema") != OUTCOME_SCHEMA:
            raise ValueError(f"unsupported outcome schema {data.get('schema')!r}")
        payoffs = data.get("payoffs")
        return cls(
            mode=data["mode"],
            seed=data["seed"],
            alpha=data["alpha"],
            assignment=SubcarrierAssignment.from_dict(data["assignment"]),
            participation=np.array(data["participation"], dtype=np.int8),
            utilities=UtilityReport.from_dict(data["utilities"]),
            diagnostics=data.get("diagnostics", {}),
            scenario_meta=data.get("scenario", {}),
            payoffs=None if payoffs is None else np.array(payoffs, dtype=float),
        )


def scenario_meta(scenario) -> dict[str, Any]:
    """Enough to regenerate a random scenario: params (incl. seed) and sizes."""
    return {
        "n_tasks": scenario.n_tasks,
        "n_users": scenario.n_users,
        "params": scenario.params.to_dict(),
    }
