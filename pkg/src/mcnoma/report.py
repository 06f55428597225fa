"""Solver report container shared by all allocation methods."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sic import Allocation

# statuses
OPTIMAL = "OPTIMAL"
CONVERGED = "CONVERGED"
BUDGET = "BUDGET"
INFEASIBLE = "INFEASIBLE"
INFEASIBLE_ROUNDING = "INFEASIBLE_ROUNDING"
NUMERIC_FAILURE = "NUMERIC_FAILURE"

EXIT_CODES = {OPTIMAL: 0, CONVERGED: 0, INFEASIBLE: 2, INFEASIBLE_ROUNDING: 2,
              BUDGET: 3, NUMERIC_FAILURE: 3}


@dataclass
class SolverReport:
    method: str
    status: str
    iterations: int = 0
    objective: float = np.nan
    trace: list = field(default_factory=list)
    incumbent: Allocation | None = None
    notes: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.status, 3)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, (np.floating, float)):
                return float(v) if np.isfinite(v) else None
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, (list, tuple)):
                return [clean(t) for t in v]
            if isinstance(v, dict):
                return {k: clean(t) for k, t in v.items()}
            if isinstance(v, np.ndarray):
                return clean(v.tolist())
            return v

        return {"format": "report-v1", "method": self.method, "status": self.status,
                "iterations": self.iterations, "objective": clean(self.objective),
                "trace": clean(self.trace), "notes": clean(self.notes),
                "incumbent": None if self.incumbent is None else self.incumbent.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SolverReport":
        if d.get("format") != "report-v1":
            raise ValueError("not a report-v1 document")
        inc = d.get("incumbent")
        obj = d.get("objective")
        return cls(d["method"], d["status"], d.get("iterations", 0),
                   np.nan if obj is None else obj, d.get("trace", []),
                   None if inc is None else Allocation.from_dict(inc), d.get("notes", {}))
