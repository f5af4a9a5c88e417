"""Run configuration: one JSON document driving the whole pipeline.

The document has named sections mirroring the package modules (sim,
mixture, agents, eval, ingest, paths) plus a single master seed; every
per-purpose random stream is derived from that seed, so one knob
reproduces a full study.  Unknown keys anywhere are errors: a silently
ignored typo in an experiment config corrupts results far downstream.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

from crossingsim.agents import HumanDriverParams, SoftYieldParams
from crossingsim.sim import SimConfig

__all__ = [
    "MixtureConfig",
    "AgentsConfig",
    "EvalConfig",
    "IngestConfig",
    "PathsConfig",
    "RunConfig",
]


@dataclass(frozen=True)
class MixtureConfig:
    """Model-selection sweep and EM knobs."""

    k_min: int = 1
    k_max: int = 15
    rate_threshold: float = 0.10
    truncation_mode: str = "truncated"
    max_iterations: int = 300
    loglik_tolerance: float = 1e-10
    restarts: int = 1
    covariance_floor: float = 1e-6
    mc_moment_draws: int = 20_000

    def __post_init__(self) -> None:
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ValueError(f"need 1 <= k_min <= k_max, got [{self.k_min}, {self.k_max}]")
        if not math.isfinite(self.rate_threshold):
            raise ValueError("rate_threshold must be finite")
        if self.truncation_mode not in ("none", "truncated"):
            raise ValueError(f"unknown truncation_mode {self.truncation_mode!r}")


@dataclass(frozen=True)
class AgentsConfig:
    """Strategy parameters and which strategy drives the candidate."""

    av_strategy: str = "soft-yield"
    soft_yield: SoftYieldParams = field(default_factory=SoftYieldParams)
    human: HumanDriverParams = field(default_factory=HumanDriverParams)

    def __post_init__(self) -> None:
        if self.av_strategy not in ("soft-yield", "human"):
            raise ValueError(
                f"av_strategy must be 'soft-yield' or 'human', got {self.av_strategy!r}"
            )


@dataclass(frozen=True)
class EvalConfig:
    """Batch size and optional aggressiveness gates.

    The gates have no defensible defaults, so they stay unset unless a
    study provides both.
    """

    n_experiments: int = 50
    mu_0: Optional[float] = None
    kappa_0: Optional[float] = None

    def __post_init__(self) -> None:
        if self.n_experiments < 1:
            raise ValueError("n_experiments must be >= 1")
        if (self.mu_0 is None) != (self.kappa_0 is None):
            raise ValueError("mu_0 and kappa_0 must be set together")
        for name in ("mu_0", "kappa_0"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class IngestConfig:
    """Synthetic-data size and trajectory resampling stride."""

    n_synthetic: int = 3000
    sample_stride: float = 0.5

    def __post_init__(self) -> None:
        if self.n_synthetic < 0:
            raise ValueError("n_synthetic must be >= 0")
        if not (math.isfinite(self.sample_stride) and self.sample_stride >= 0):
            raise ValueError("sample_stride must be >= 0")


@dataclass(frozen=True)
class PathsConfig:
    """Artifact file names, resolved against the output directory."""

    observations: str = "observations.csv"
    generator: str = "generator.json"
    model: str = "model.json"
    bic_curve: str = "bic_curve.csv"
    conditional: str = "conditional.csv"
    trajectory: str = "trajectory.csv"
    report: str = "report.json"
    series: str = "series.csv"


@dataclass(frozen=True)
class RunConfig:
    """Complete, fully defaulted configuration of one pipeline run."""

    master_seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    mixture: MixtureConfig = field(default_factory=MixtureConfig)
    agents: AgentsConfig = field(default_factory=AgentsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_document(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "sim": asdict(self.sim),
            "mixture": asdict(self.mixture),
            "agents": {
                "av_strategy": self.agents.av_strategy,
                "soft_yield": asdict(self.agents.soft_yield),
                "human": asdict(self.agents.human),
            },
            "eval": asdict(self.eval),
            "ingest": asdict(self.ingest),
            "paths": asdict(self.paths),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ValueError("config document must be a JSON object")
        top = dict(doc)
        master_seed = top.pop("master_seed", 0)
        if not isinstance(master_seed, int) or isinstance(master_seed, bool):
            raise ValueError(f"master_seed must be an integer, got {master_seed!r}")

        sim = SimConfig(**_section(top, "sim", SimConfig))
        mixture = MixtureConfig(**_section(top, "mixture", MixtureConfig))

        agents_doc = top.pop("agents", {})
        _require_mapping(agents_doc, "agents")
        agents_doc = dict(agents_doc)
        av_strategy = agents_doc.pop("av_strategy", "soft-yield")
        soft_yield = SoftYieldParams(
            **_section(agents_doc, "soft_yield", SoftYieldParams, parent="agents")
        )
        human = HumanDriverParams(
            **_section(agents_doc, "human", HumanDriverParams, parent="agents")
        )
        if agents_doc:
            raise ValueError(f"unknown keys in section 'agents': {sorted(agents_doc)}")
        agents = AgentsConfig(av_strategy=av_strategy, soft_yield=soft_yield, human=human)

        eval_cfg = EvalConfig(**_section(top, "eval", EvalConfig))
        ingest = IngestConfig(**_section(top, "ingest", IngestConfig))
        paths = PathsConfig(**_section(top, "paths", PathsConfig))
        if top:
            raise ValueError(f"unknown top-level config keys: {sorted(top)}")
        return cls(
            master_seed=master_seed,
            sim=sim,
            mixture=mixture,
            agents=agents,
            eval=eval_cfg,
            ingest=ingest,
            paths=paths,
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(
            json.dumps(self.to_document(), indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_document(doc)


def _require_mapping(value: object, name: str) -> None:
    if not isinstance(value, dict):
        raise ValueError(f"config section {name!r} must be a JSON object")


def _section(doc: dict, name: str, target: type, parent: str = "") -> dict:
    """Pop section ``name`` and check its keys against ``target``'s fields."""
    raw = doc.pop(name, {})
    label = f"{parent}.{name}" if parent else name
    _require_mapping(raw, label)
    allowed = set(target.__dataclass_fields__)
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"unknown keys in section {label!r}: {sorted(unknown)}")
    return dict(raw)
