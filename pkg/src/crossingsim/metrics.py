"""Efficiency, stability, and safety metrics over paired experiments.

Each paired experiment yields a time ratio tau_i (candidate passing
time over baseline passing time).  The report aggregates:

* mu, the mean of tau over pairs where both episodes produced a
  passing time (efficiency; smaller is faster than the baseline);
* cv, the population coefficient of variation of tau (stability);
* kappa, the fraction of candidate episodes that crashed or timed out
  (safety), over all N pairs regardless of tau exclusions.

mu and kappa are compared against the aggressiveness gates mu_0 and
kappa_0 with strict inequalities when gates are configured.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

from crossingsim.sim import PairResult

__all__ = [
    "GateDecision",
    "EvaluationReport",
    "compute_report",
    "write_series",
]

_FORMAT = "crossingsim-report"
_VERSION = 1


@dataclass(frozen=True)
class GateDecision:
    """Aggressiveness thresholds and the strict-inequality verdict."""

    mu_0: float
    kappa_0: float
    passed: bool


@dataclass(frozen=True)
class EvaluationReport:
    """Aggregated metrics over one batch of paired experiments.

    ``tau`` keeps experiment order; ``running_mean[i]`` is the mean of
    ``tau[: i + 1]``, so ``running_mean[-1] == mu``.  When no pair has
    both passing times defined, ``tau`` is empty and mu, sigma, and cv
    are NaN.  ``kappa`` counts crashed and timed-out candidate episodes
    against the full pair count.
    """

    n_pairs: int
    tau: tuple[float, ...]
    running_mean: tuple[float, ...]
    mu: float
    sigma: float
    cv: float
    kappa: float
    n_excluded: int
    candidate_crashes: int
    candidate_timeouts: int
    baseline_crashes: int
    baseline_timeouts: int
    gate: Optional[GateDecision] = None

    def to_document(self) -> dict:
        doc: dict = {
            "format": _FORMAT,
            "version": _VERSION,
            "n_pairs": self.n_pairs,
            "mu": self.mu,
            "sigma": self.sigma,
            "cv": self.cv,
            "kappa": self.kappa,
            "n_excluded": self.n_excluded,
            "candidate_crashes": self.candidate_crashes,
            "candidate_timeouts": self.candidate_timeouts,
            "baseline_crashes": self.baseline_crashes,
            "baseline_timeouts": self.baseline_timeouts,
            "tau": list(self.tau),
            "running_mean": list(self.running_mean),
            "gate": None,
        }
        if self.gate is not None:
            doc["gate"] = {
                "mu_0": self.gate.mu_0,
                "kappa_0": self.gate.kappa_0,
                "passed": self.gate.passed,
            }
        return doc

    @classmethod
    def from_document(cls, doc: dict) -> "EvaluationReport":
        if doc.get("format") != _FORMAT:
            raise ValueError(f"not a report document: format={doc.get('format')!r}")
        if doc.get("version") != _VERSION:
            raise ValueError(f"unsupported report version {doc.get('version')!r}")
        gate_doc = doc.get("gate")
        gate = None
        if gate_doc is not None:
            gate = GateDecision(
                mu_0=float(gate_doc["mu_0"]),
                kappa_0=float(gate_doc["kappa_0"]),
                passed=bool(gate_doc["passed"]),
            )
        return cls(
            n_pairs=int(doc["n_pairs"]),
            tau=tuple(float(t) for t in doc["tau"]),
            running_mean=tuple(float(r) for r in doc["running_mean"]),
            mu=float(doc["mu"]),
            sigma=float(doc["sigma"]),
            cv=float(doc["cv"]),
            kappa=float(doc["kappa"]),
            n_excluded=int(doc["n_excluded"]),
            candidate_crashes=int(doc["candidate_crashes"]),
            candidate_timeouts=int(doc["candidate_timeouts"]),
            baseline_crashes=int(doc["baseline_crashes"]),
            baseline_timeouts=int(doc["baseline_timeouts"]),
            gate=gate,
        )

    def save(self, path: Union[str, Path]) -> None:
        text = json.dumps(self.to_document(), indent=2)
        Path(path).write_text(text + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EvaluationReport":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_document(doc)


def compute_report(
    pairs: Sequence[PairResult],
    mu_0: Optional[float] = None,
    kappa_0: Optional[float] = None,
) -> EvaluationReport:
    """Aggregate paired results into an EvaluationReport.

    Pairs missing either passing time are excluded from tau but still
    count toward kappa when the candidate crashed or timed out.  Gates
    must be given together or not at all; the verdict is the strict
    conjunction mu < mu_0 and kappa < kappa_0.

    Raises ValueError on an empty batch, on a completed episode with a
    nonpositive passing time (malformed input), or on a half-set gate.
    """
    if len(pairs) == 0:
        raise ValueError("need at least one pair")
    if (mu_0 is None) != (kappa_0 is None):
        raise ValueError("mu_0 and kappa_0 must be set together")

    tau: list[float] = []
    candidate_crashes = 0
    candidate_timeouts = 0
    baseline_crashes = 0
    baseline_timeouts = 0
    for pair in pairs:
        cand, base = pair.candidate, pair.baseline
        candidate_crashes += cand.crashed
        candidate_timeouts += cand.timed_out
        baseline_crashes += base.crashed
        baseline_timeouts += base.timed_out
        if cand.completed and base.completed:
            if cand.passing_time <= 0 or base.passing_time <= 0:
                raise ValueError(
                    f"pair {pair.index}: nonpositive passing time "
                    f"({cand.passing_time}, {base.passing_time})"
                )
            tau.append(cand.passing_time / base.passing_time)

    n = len(pairs)
    kappa = (candidate_crashes + candidate_timeouts) / n

    running: list[float] = []
    total = 0.0
    for i, t in enumerate(tau):
        total += t
        running.append(total / (i + 1))
    if tau:
        mu = running[-1]
        sigma = math.sqrt(sum((t - mu) ** 2 for t in tau) / len(tau))
        cv = sigma / mu
    else:
        mu = sigma = cv = math.nan

    gate = None
    if mu_0 is not None and kappa_0 is not None:
        gate = GateDecision(
            mu_0=float(mu_0),
            kappa_0=float(kappa_0),
            passed=bool(mu < mu_0 and kappa < kappa_0),
        )

    return EvaluationReport(
        n_pairs=n,
        tau=tuple(tau),
        running_mean=tuple(running),
        mu=mu,
        sigma=sigma,
        cv=cv,
        kappa=kappa,
        n_excluded=n - len(tau),
        candidate_crashes=candidate_crashes,
        candidate_timeouts=candidate_timeouts,
        baseline_crashes=baseline_crashes,
        baseline_timeouts=baseline_timeouts,
        gate=gate,
    )


def write_series(report: EvaluationReport, path: Union[str, Path]) -> None:
    """Write the plot-ready convergence series as (n, running_mean, tau)."""
    lines = ["n,running_mean,tau"]
    for i, (r, t) in enumerate(zip(report.running_mean, report.tau), start=1):
        lines.append(f"{i},{r!r},{t!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
