"""Benchmark harness: fixed pose suites, repeated seeded episodes, success
and collision rates with dispersion, and guidance-weight sweeps.

Episode ``e`` of repeat ``r`` always draws from
``SeedSequence([base_seed, r, e])``, so adding repeats or reordering work
never changes earlier results, and two policies evaluated on the same suite
see the same prior draws.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .flowmatch import InferenceConfig, sample_guided
from .mazeworld import rollout, sample_free_pose

log = logging.getLogger(__name__)

SCHEMA_BENCH = "benchreport/1"
SCHEMA_ABLATION = "ablationreport/1"


@dataclass(frozen=True)
class BenchSuite:
    episodes: tuple  # ((start, goal), ...) in world coordinates
    repeats: int = 3
    base_seed: int = 0

    def __post_init__(self):
        if len(self.episodes) == 0:
            raise ValueError("suite needs at least one episode")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def __len__(self):
        return len(self.episodes)


@dataclass(frozen=True)
class RateStat:
    mean: float
    std: float

    def __str__(self):
        return f"{self.mean:.1f} ± {self.std:.1f}"


@dataclass(frozen=True)
class EpisodeSummary:
    repeat: int
    episode: int
    success: bool
    collided: bool
    first_collision_index: int | None
    failed: bool = False


@dataclass
class BenchReport:
    policy_tag: str
    success_rate: RateStat
    collision_rate: RateStat
    per_repeat: list
    per_episode: list
    failed_queries: int = 0
    config_echo: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema": SCHEMA_BENCH,
            "policy_tag": self.policy_tag,
            "dispersion": "sample_std",
            "success_rate": {"mean": self.success_rate.mean, "std": self.success_rate.std},
            "collision_rate": {"mean": self.collision_rate.mean, "std": self.collision_rate.std},
            "failed_queries": self.failed_queries,
            "per_repeat": [{"repeat": r, "success_rate": s, "collision_rate": c}
                           for r, (s, c) in enumerate(self.per_repeat)],
            "per_episode": [{"repeat": p.repeat, "episode": p.episode, "success": p.success,
                             "collided": p.collided,
                             "first_collision_index": p.first_collision_index,
                             "failed": p.failed} for p in self.per_episode],
            "config": self.config_echo,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEMA_BENCH:
            raise ValueError(f"unexpected report schema {d.get('schema')!r}")
        eps = [EpisodeSummary(p["repeat"], p["episode"], p["success"], p["collided"],
                              p["first_collision_index"], p["failed"]) for p in d["per_episode"]]
        return cls(d["policy_tag"], RateStat(**d["success_rate"]), RateStat(**d["collision_rate"]),
                   [(p["success_rate"], p["collision_rate"]) for p in d["per_repeat"]],
                   eps, d["failed_queries"], d.get("config", {}))


@dataclass
class AblationReport:
    lambdas: list
    reports: list

    def __post_init__(self):
        if len(self.lambdas) != len(self.reports):
            raise ValueError("one report per lambda")
        if any(b <= a for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise ValueError("lambdas must be strictly increasing")

    def report_for(self, lam):
        return self.reports[self.lambdas.index(lam)]

    def to_dict(self):
        return {"schema": SCHEMA_ABLATION, "lambdas": list(self.lambdas),
                "reports": [r.to_dict() for r in self.reports]}


def to_json(report):
    """Stable JSON text (fixed key order, trailing newline)."""
    return json.dumps(report.to_dict(), indent=2) + "\n"


def make_suite(maze, n_episodes, min_goal_separation=2.0, seed=0, repeats=3, clearance=0.25):
    """Deterministic set of start/goal pairs shared by every policy under comparison."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    eps = tuple(sample_free_pose(maze, rng, min_goal_separation, clearance)
                for _ in range(n_episodes))
    return BenchSuite(eps, repeats, seed)


def episode_rng(base_seed, repeat, episode):
    return np.random.default_rng(np.random.SeedSequence([base_seed, repeat, episode]))


def _sample_std(x):
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def _rates(per_episode, repeats):
    per_repeat = []
    for r in range(repeats):
        rows = [p for p in per_episode if p.repeat == r]
        ok = [p for p in rows if not p.failed]
        succ = 100.0 * sum(p.success for p in rows) / len(rows)
        coll = 100.0 * sum(p.collided for p in ok) / len(ok) if ok else 0.0
        per_repeat.append((succ, coll))
    return per_repeat


def check_rate_identities(report):
    """Recompute the aggregate rates from the per-episode records; raise on mismatch."""
    repeats = len(report.per_repeat)
    per_repeat = _rates(report.per_episode, repeats)
    s = [p[0] for p in per_repeat]
    c = [p[1] for p in per_repeat]
    expect = (RateStat(float(np.mean(s)), _sample_std(s)), RateStat(float(np.mean(c)), _sample_std(c)))
    if per_repeat != list(report.per_repeat) or expect != (report.success_rate, report.collision_rate):
        raise AssertionError("report rates disagree with per-episode records")
    if report.failed_queries != sum(p.failed for p in report.per_episode):
        raise AssertionError("failed-query counter disagrees with per-episode records")


def run_bench(maze, policy, suite, norm, repeats=None, policy_tag="policy",
              success_radius=None, replan_every=None, config_echo=None):
    """Evaluate ``policy(obs, rng)`` on every suite episode for each repeat.

    Rates are computed per repeat and reported as mean and sample standard
    deviation. A policy query that fails numerically counts as a non-success
    and is left out of the collision denominator.
    """
    repeats = suite.repeats if repeats is None else repeats
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    per_episode = []
    for r in range(repeats):
        for e, (start, goal) in enumerate(suite.episodes):
            rng = episode_rng(suite.base_seed, r, e)
            try:
                res = rollout(maze, policy, start, goal, norm, rng, success_radius, replan_every)
            except NumericError as exc:
                log.warning("repeat %d episode %d: policy failed (%s)", r, e, exc)
                per_episode.append(EpisodeSummary(r, e, False, False, None, True))
                continue
            per_episode.append(EpisodeSummary(r, e, res.success, res.collided,
                                              res.first_collision_index))
    per_repeat = _rates(per_episode, repeats)
    s = [p[0] for p in per_repeat]
    c = [p[1] for p in per_repeat]
    failed = sum(p.failed for p in per_episode)
    if failed:
        log.warning("%s: %d failed policy queries", policy_tag, failed)
    report = BenchReport(policy_tag, RateStat(float(np.mean(s)), _sample_std(s)),
                         RateStat(float(np.mean(c)), _sample_std(c)), per_repeat, per_episode,
                         failed, dict(config_echo or {}))
    check_rate_identities(report)
    return report


def flow_policy(net, config=None, field=None):
    """Policy closure sampling one series per query with the episode's rng.

    Without a field the sampler runs unguided whatever the configured weight.
    """
    config = config or InferenceConfig()
    if field is None:
        config = InferenceConfig(config.steps, 0.0, config.seed, config.guidance_from,
                                 config.prior_std)

    def policy(obs, rng):
        return sample_guided(net, obs, config, field, rng)
    return policy


def run_lambda_ablation(maze, net, field, suite, lambdas, norm, repeats=None,
                        config=None, config_echo=None, **bench_kw):
    """One ``run_bench`` per guidance weight; weight 0 (plain sampling) is always included."""
    lambdas = [float(x) for x in lambdas]
    if not lambdas:
        raise ValueError("lambdas must be nonempty")
    if any(x < 0 for x in lambdas):
        raise ValueError("lambdas must be non-negative")
    if 0.0 not in lambdas:
        lambdas = [0.0] + lambdas
    config = config or InferenceConfig()
    reports = []
    for lam in lambdas:
        cfg = InferenceConfig(config.steps, lam, config.seed, config.guidance_from, config.prior_std)
        tag = "fmp" if lam == 0 else f"pf2mp(lambda={lam:g})"
        echo = dict(config_echo or {}, guidance_weight=lam)
        reports.append(run_bench(maze, flow_policy(net, cfg, field if lam > 0 else None), suite,
                                 norm, repeats, tag, config_echo=echo, **bench_kw))
    return AblationReport(lambdas, reports)


def format_table(reports, title="Task performance"):
    """Plain-text table with one column per policy, rows for success and collision."""
    reports = list(reports)
    width = max(16, *(len(r.policy_tag) + 2 for r in reports))
    head = "Metric".ljust(20) + "".join(r.policy_tag.ljust(width) for r in reports)
    rows = [
        "Success rate (%)".ljust(20) + "".join(str(r.success_rate).ljust(width) for r in reports),
        "Collision rate (%)".ljust(20) + "".join(str(r.collision_rate).ljust(width) for r in reports),
    ]
    reps = len(reports[0].per_repeat) if reports else 0
    foot = f"mean ± sample std over {reps} repeats"
    failed = sum(r.failed_queries for r in reports)
    if failed:
        foot += f"; {failed} failed policy queries excluded from collision rates"
    rule = "-" * len(head)
    return "\n".join([title, rule, head.rstrip(), rule, *(r.rstrip() for r in rows), rule, foot]) + "\n"
