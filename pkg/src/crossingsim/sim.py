"""Forward-Euler episode engine and the paired experiment protocol.

One episode: a vehicle approaches the crossing from beyond detection
range at free-flow speed; once inside the trigger range the arrival
clock starts and scheduled pedestrians begin to cross from either side.
Each step the driving strategy commands an acceleration from what it
can see, the vehicle integrates acceleration -> speed -> position, the
pedestrians advance, and the crash predicate is evaluated.  The episode
ends when the vehicle body fully clears the crossing line, a crash is
detected, or the horizon elapses.

Paired protocol: every experiment runs the same pedestrian realization
(arrival times, sides, walk speeds) through the candidate strategy and
the human baseline.  Walk speeds are decided against the vehicle state
of the candidate pass and replayed verbatim in the baseline pass, so
the two episodes differ only in the driving policy.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable, NamedTuple, Optional, Protocol, Sequence

from crossingsim.agents import (
    ArrivalSchedule,
    Pedestrian,
    StrategyDecision,
    decide_walk_speed,
    fixed_count_arrivals,
    sample_arrivals,
)
from crossingsim.mixture import GaussianMixture
from crossingsim.seeds import derive_seed

__all__ = [
    "SimConfig",
    "WorldState",
    "TrajectoryPoint",
    "EpisodeResult",
    "PairResult",
    "DrivingStrategy",
    "detect_crash",
    "experiment_schedule",
    "run_episode",
    "run_paired_experiments",
]


class DrivingStrategy(Protocol):
    """Per-episode controller; instances must not be reused across episodes."""

    def command(
        self,
        clock: float,
        longitudinal_gap: float,
        vehicle_speed: float,
        pedestrians: Sequence[Pedestrian],
    ) -> StrategyDecision: ...


@dataclass(frozen=True)
class SimConfig:
    """Geometry, dynamics, and arrival process of one crossing scenario."""

    trigger_range: float = 30.0  # m; arrival clock starts at this range
    crossing_length: float = 9.0  # m of crossing path
    free_flow_speed: float = 5.0  # m/s approach and recovery speed
    arrival_rate: float = 250.0 / 3600.0  # pedestrians per second
    arrival_mode: str = "fixed"  # "fixed" count per episode, or "poisson"
    fixed_count: int = 1
    dt: float = 0.05  # s integration step
    horizon: float = 120.0  # s from clock start before timing out
    vehicle_half_length: float = 2.5  # m
    vehicle_half_width: float = 1.0  # m
    detection_range: float = 50.0  # m visibility cutoff on the range
    walk_speed_min: float = 0.3  # m/s clamp on decided walk speeds
    walk_speed_max: float = 3.0

    def __post_init__(self) -> None:
        positive = (
            "trigger_range",
            "crossing_length",
            "free_flow_speed",
            "dt",
            "horizon",
            "vehicle_half_length",
            "vehicle_half_width",
            "detection_range",
            "walk_speed_min",
            "walk_speed_max",
        )
        for name in positive:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if self.arrival_rate < 0:
            raise ValueError("arrival_rate must be >= 0")
        if self.arrival_mode not in ("fixed", "poisson"):
            raise ValueError(
                f"arrival_mode must be 'fixed' or 'poisson', got {self.arrival_mode!r}"
            )
        if self.fixed_count < 0:
            raise ValueError("fixed_count must be >= 0")
        if self.walk_speed_min > self.walk_speed_max:
            raise ValueError("walk_speed_min must not exceed walk_speed_max")
        if self.dt > self.horizon:
            raise ValueError("dt must not exceed horizon")


@dataclass
class WorldState:
    """Snapshot of the simulated world at one step."""

    clock: float
    longitudinal_gap: float  # m, vehicle front to crossing line (positive approaching)
    vehicle_speed: float
    pedestrians: list[Pedestrian]
    pending_arrivals: int


class TrajectoryPoint(NamedTuple):
    """One trajectory row; pedestrian fields are None on pedestrian-free steps."""

    t: float
    longitudinal_gap: float
    vehicle_speed: float
    pedestrian_id: Optional[int]
    lateral_gap: Optional[float]
    walk_speed: Optional[float]


@dataclass
class EpisodeResult:
    """Outcome of one episode plus the realized pedestrian inputs."""

    passing_time: Optional[float]  # s from clock start to body clearance
    crashed: bool
    crash_time: Optional[float]
    timed_out: bool
    arrival_times: tuple[float, ...]
    sides: tuple[str, ...]
    walk_speeds: tuple[float, ...]
    walk_speed_fallbacks: tuple[bool, ...]
    strategy_fallbacks: int
    trajectory: Optional[list[TrajectoryPoint]] = None

    @property
    def completed(self) -> bool:
        return not self.crashed and not self.timed_out


def detect_crash(state: WorldState, config: SimConfig) -> bool:
    """True when the vehicle body overlaps the crossing line while some
    pedestrian stands within half a vehicle width of the vehicle path."""
    gap = state.longitudinal_gap
    if not (-2.0 * config.vehicle_half_length <= gap <= 0.0):
        return False
    return any(
        abs(p.lateral_position) <= config.vehicle_half_width
        for p in state.pedestrians
        if not p.finished
    )


def _lead_steps(config: SimConfig) -> int:
    """Steps of free-flow approach needed to start beyond detection range.

    Chosen so the trigger range is reached exactly on a step boundary,
    keeping passing-time discretization error within one dt.
    """
    per_step = config.free_flow_speed * config.dt
    needed = (config.detection_range - config.trigger_range) / per_step
    return max(int(math.floor(needed)) + 1, 1)


def run_episode(
    config: SimConfig,
    strategy: DrivingStrategy,
    schedule: ArrivalSchedule,
    model: Optional[GaussianMixture] = None,
    walk_speed_seeds: Optional[Sequence[int]] = None,
    walk_speeds: Optional[Sequence[float]] = None,
    record_trajectory: bool = False,
) -> EpisodeResult:
    """Simulate one pass of the crossing.

    Walk speeds come from two sources: ``walk_speeds`` replays
    previously decided values verbatim (paired baseline pass), and any
    arrival past its end draws a speed from ``model`` conditioned on
    the vehicle state at that instant, seeded by the matching entry of
    ``walk_speed_seeds``.  A replay list shorter than the schedule is
    allowed only when the model and seeds can cover the tail; an episode
    can end before every scheduled pedestrian arrives, so a paired run
    may legitimately replay just a prefix.

    The vehicle starts beyond detection range at free-flow speed; the
    arrival clock starts once the range drops to the trigger range, and
    schedule times are offsets from that instant.  Pedestrians beyond
    detection range or already past the vehicle path strip are invisible
    to the strategy but still simulated for crash purposes.

    Returns an EpisodeResult; a crash or an exceeded horizon yields a
    flagged result with no passing time rather than an exception.
    """
    n_replayed = len(walk_speeds) if walk_speeds is not None else 0
    if n_replayed < len(schedule):
        if model is None or walk_speed_seeds is None:
            raise ValueError("need a model and walk_speed_seeds to decide walk speeds")
        if len(walk_speed_seeds) < len(schedule):
            raise ValueError("need one walk-speed seed per scheduled arrival")
    interval = getattr(strategy, "update_interval", None)
    if interval is not None and config.dt > 0.1 * interval + 1e-12:
        raise ValueError(
            f"dt={config.dt} too coarse for strategy update interval {interval}"
        )

    dt = config.dt
    lead = _lead_steps(config)
    gap = config.trigger_range + lead * config.free_flow_speed * dt
    speed = config.free_flow_speed
    clock_start: Optional[float] = None
    deadline = lead * dt + config.horizon

    active: list[Pedestrian] = []
    spawn_order: dict[int, int] = {}  # object id -> spawn index
    spawned = 0
    decided_speeds: list[float] = []
    decided_fallbacks: list[bool] = []
    strategy_fallbacks = 0
    trajectory: Optional[list[TrajectoryPoint]] = [] if record_trajectory else None

    crashed = False
    crash_time: Optional[float] = None
    passing_time: Optional[float] = None
    timed_out = False

    step = 0
    while True:
        clock = step * dt
        if clock_start is None and gap <= config.trigger_range + 1e-12:
            clock_start = clock
        if clock_start is not None:
            rel = clock - clock_start
            while spawned < len(schedule) and schedule.times[spawned] <= rel + 1e-12:
                side = schedule.sides[spawned]
                if spawned < n_replayed:
                    speed_choice = float(walk_speeds[spawned])
                    fallback = False
                else:
                    speed_choice, fallback = decide_walk_speed(
                        model,
                        vehicle_range=gap,
                        vehicle_speed=speed,
                        seed=walk_speed_seeds[spawned],
                        bounds=(config.walk_speed_min, config.walk_speed_max),
                    )
                ped = Pedestrian(
                    # Nominal schedule instant, unique per pedestrian even if
                    # several spawn on the same step.
                    arrival_time=clock_start + float(schedule.times[spawned]),
                    side=side,
                    walk_speed=speed_choice,
                    crossing_length=config.crossing_length,
                )
                active.append(ped)
                spawn_order[id(ped)] = spawned
                decided_speeds.append(speed_choice)
                decided_fallbacks.append(fallback)
                spawned += 1

        visible = [
            p
            for p in active
            if gap <= config.detection_range and not p.past_path(config.vehicle_half_width)
        ]
        decision = strategy.command(clock, gap, speed, visible)
        if decision.fallback:
            strategy_fallbacks += 1

        if trajectory is not None:
            if active:
                for ped in active:
                    trajectory.append(
                        TrajectoryPoint(
                            clock, gap, speed,
                            spawn_order[id(ped)], ped.lateral_gap, ped.walk_speed,
                        )
                    )
            else:
                trajectory.append(TrajectoryPoint(clock, gap, speed, None, None, None))

        # Integrate: acceleration -> speed -> position; speed clamped at 0.
        speed = max(speed + decision.acceleration * dt, 0.0)
        gap -= speed * dt
        for ped in active:
            ped.advance(dt)
        step += 1
        clock = step * dt

        state = WorldState(
            clock=clock,
            longitudinal_gap=gap,
            vehicle_speed=speed,
            pedestrians=active,
            pending_arrivals=len(schedule) - spawned,
        )
        if detect_crash(state, config):
            crashed = True
            crash_time = clock
            break
        active = [p for p in active if not p.finished]
        if gap <= -2.0 * config.vehicle_half_length:
            assert clock_start is not None
            passing_time = clock - clock_start
            break
        if clock >= deadline:
            timed_out = True
            break

    return EpisodeResult(
        passing_time=passing_time,
        crashed=crashed,
        crash_time=crash_time,
        timed_out=timed_out,
        arrival_times=tuple(float(t) for t in schedule.times[:spawned]),
        sides=tuple(schedule.sides[:spawned]),
        walk_speeds=tuple(decided_speeds),
        walk_speed_fallbacks=tuple(decided_fallbacks),
        strategy_fallbacks=strategy_fallbacks,
        trajectory=trajectory,
    )


@dataclass
class PairResult:
    """Candidate and baseline episodes over one pedestrian realization."""

    index: int
    candidate: EpisodeResult
    baseline: EpisodeResult

    @property
    def time_ratio(self) -> Optional[float]:
        """Candidate passing time over baseline passing time; None if either
        episode ended without a passing time."""
        if not (self.candidate.completed and self.baseline.completed):
            return None
        return self.candidate.passing_time / self.baseline.passing_time


def experiment_schedule(config: SimConfig, master_seed: int, index: int) -> ArrivalSchedule:
    seed = derive_seed(master_seed, "arrivals", index)
    if config.arrival_mode == "fixed":
        return fixed_count_arrivals(config.arrival_rate, config.fixed_count, seed)
    return sample_arrivals(config.arrival_rate, config.horizon, seed)


def _run_one_pair(
    config: SimConfig,
    model: GaussianMixture,
    candidate_factory: Callable[[], DrivingStrategy],
    baseline_factory: Callable[[], DrivingStrategy],
    master_seed: int,
    record_trajectory: bool,
    index: int,
) -> PairResult:
    schedule = experiment_schedule(config, master_seed, index)
    walk_seeds = [
        derive_seed(master_seed, f"walk-{index}", j) for j in range(len(schedule))
    ]
    candidate = run_episode(
        config,
        candidate_factory(),
        schedule,
        model=model,
        walk_speed_seeds=walk_seeds,
        record_trajectory=record_trajectory,
    )
    baseline = run_episode(
        config,
        baseline_factory(),
        schedule,
        model=model,
        walk_speed_seeds=walk_seeds,
        walk_speeds=candidate.walk_speeds,
        record_trajectory=record_trajectory,
    )
    return PairResult(index=index, candidate=candidate, baseline=baseline)


def run_paired_experiments(
    config: SimConfig,
    model: GaussianMixture,
    candidate_factory: Callable[[], DrivingStrategy],
    baseline_factory: Callable[[], DrivingStrategy],
    n_experiments: int,
    master_seed: int,
    parallel: int = 1,
    record_trajectory: bool = False,
) -> list[PairResult]:
    """Run candidate/baseline episode pairs over shared realizations.

    Factories build a fresh strategy per episode.  Every experiment's
    seeds derive from (master_seed, purpose, index) alone, so results
    are identical for any ``parallel`` level; workers only change how
    the index set is partitioned.  Results come back ordered by index.
    """
    if n_experiments < 1:
        raise ValueError("n_experiments must be >= 1")
    if parallel < 1:
        raise ValueError("parallel must be >= 1")
    runner = partial(
        _run_one_pair,
        config,
        model,
        candidate_factory,
        baseline_factory,
        master_seed,
        record_trajectory,
    )
    indices = range(n_experiments)
    if parallel == 1:
        return [runner(i) for i in indices]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        chunk = max(1, n_experiments // (4 * parallel))
        return list(pool.map(runner, indices, chunksize=chunk))
