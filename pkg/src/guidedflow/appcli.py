"""Command-line pipeline: generate demos, train, build the guidance field,
evaluate, sweep the guidance weight, and dump single rollouts.

Configuration resolves as defaults < JSON config file < command-line flags.
Every artifact carries the resolved configuration (minus output locations),
so reruns with the same inputs write byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evalbench, persist
from .density import build_kde
from .errors import FormatError, NumericError, PlanningError
from .flowmatch import InferenceConfig, TrainConfig, train
from .mazeworld import (BUILTIN_MAZES, Normalization, check_demonstration, gen_demoset, load_maze,
                        path_collisions, rollout)
from .nnet import ACTIVATIONS, PARAMETERIZATIONS, VectorFieldNet
from .potential import build_field

log = logging.getLogger("guidedflow")

EXIT_OK, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every knob of a run. JSON keys are the field names."""

    maze: str = "large"
    wall_inflation: float = 0.0
    seed: int = 0
    # demonstrations
    demo_count: int = 1000
    horizon: int = 80
    min_goal_separation: float = 2.0
    clearance: float = 0.25
    # network and training
    hidden: list = field(default_factory=lambda: [256, 256, 256])
    activation: str = "tanh"
    parameterization: str = "endpoint"
    time_features: int = 4
    epochs: int = 1000
    batch_size: int = 64
    learning_rate: float = 1e-3
    loss_weighting: str = "endpoint"
    prior_std: float = 1.0
    # density and potential
    subsample: int = 3000
    bandwidth: object = 1.0
    quantile: float = 0.05
    alpha: float = -0.02
    cap: object = "threshold"
    # inference and evaluation
    steps: int = 5
    guidance_weight: float = 0.8
    guidance_from: int = 0
    episodes: int = 500
    repeats: int = 3
    lambdas: list = field(default_factory=lambda: [0.01, 0.4, 0.8, 5.0])
    success_radius: object = None
    replan_every: object = None
    out_dir: str = "."

    def validate(self):
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)
        need(self.maze in BUILTIN_MAZES or Path(self.maze).is_file(),
             f"maze {self.maze!r} is neither builtin {BUILTIN_MAZES} nor a readable file")
        need(self.wall_inflation >= 0, "wall_inflation must be >= 0")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        need(self.demo_count >= 1, "demo_count must be >= 1")
        need(self.horizon >= 2, "horizon must be >= 2")
        need(self.min_goal_separation >= 0, "min_goal_separation must be >= 0")
        need(0 <= self.clearance < 0.5, "clearance must lie in [0, 0.5) cells")
        need(len(self.hidden) >= 1 and all(int(h) >= 1 for h in self.hidden), "hidden sizes must be >= 1")
        need(self.activation in ACTIVATIONS, f"activation must be one of {ACTIVATIONS}")
        need(self.parameterization in PARAMETERIZATIONS,
             f"parameterization must be one of {PARAMETERIZATIONS}")
        need(self.time_features >= 0, "time_features must be >= 0")
        need(self.epochs >= 1 and self.batch_size >= 1, "epochs and batch_size must be >= 1")
        need(self.learning_rate > 0, "learning_rate must be positive")
        need(self.loss_weighting in ("uniform", "endpoint"), "loss_weighting is uniform or endpoint")
        need(self.prior_std > 0, "prior_std must be positive")
        need(self.subsample >= 1, "subsample must be >= 1")
        need(self.bandwidth == "scott" or (_is_number(self.bandwidth) and self.bandwidth > 0),
             "bandwidth is 'scott' or a positive number")
        need(0 < self.quantile < 1, "quantile must lie in (0, 1)")
        need(self.alpha < 0, "alpha must be negative")
        need(self.cap == "threshold" or _is_number(self.cap), "cap is 'threshold' or a number")
        need(self.steps >= 1, "steps must be >= 1")
        need(self.guidance_weight >= 0, "guidance weight must be >= 0")
        need(self.guidance_from >= 0, "guidance_from must be >= 0")
        need(self.episodes >= 1 and self.repeats >= 1, "episodes and repeats must be >= 1")
        need(len(self.lambdas) >= 1 and all(_is_number(x) and x >= 0 for x in self.lambdas),
             "lambdas must be a nonempty list of non-negative numbers")
        need(self.success_radius is None or (_is_number(self.success_radius) and self.success_radius > 0),
             "success_radius must be null or positive")
        need(self.replan_every is None or (isinstance(self.replan_every, int) and self.replan_every >= 1),
             "replan_every must be null or a positive integer")
        return self

    def echo(self):
        """Resolved settings without output locations."""
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        return d

    def train_config(self):
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate,
                           prior_std=self.prior_std, loss_weighting=self.loss_weighting)

    def inference_config(self, weight=None):
        w = self.guidance_weight if weight is None else weight
        return InferenceConfig(self.steps, w, self.seed, self.guidance_from, self.prior_std)


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)


def resolve_config(path=None, overrides=None):
    """Defaults, then the JSON file at ``path``, then ``overrides`` (non-None values)."""
    values = {}
    names = {f.name for f in dataclasses.fields(RunConfig)}
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(loaded)
    for k, v in (overrides or {}).items():
        if k not in names:
            raise ConfigError(f"unknown config key {k!r}")
        if v is not None:
            values[k] = v
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        return cfg.validate()
    except TypeError as exc:
        raise ConfigError(f"config value has the wrong type: {exc}") from exc


def parse_lambdas(text):
    """``"0,0.4,0.8"`` -> ``[0.0, 0.4, 0.8]``."""
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse lambdas {text!r}") from exc
    if not vals:
        raise ConfigError("empty lambda list")
    return vals


# -- commands ----------------------------------------------------------------

def _out(cfg, args, default_name):
    path = Path(args.out) if args.out else Path(cfg.out_dir) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _maze(cfg):
    return load_maze(cfg.maze, cfg.wall_inflation)


def _norm(maze):
    return Normalization.from_bounds(maze.bounds)


def _require(path, what):
    if not path:
        raise ConfigError(f"--{what} is required for this command")
    return path


def cmd_gen_demos(cfg, args):
    maze = _maze(cfg)
    ds = gen_demoset(maze, cfg.demo_count, cfg.horizon, cfg.seed, cfg.min_goal_separation,
                     cfg.clearance)
    for i, demo in enumerate(ds.demos):
        try:
            check_demonstration(maze, demo, cfg.horizon)
        except ValueError as exc:
            raise PlanningError(f"demo {i} breaks its invariants: {exc}") from exc
    out = _out(cfg, args, "demos.pfdm")
    persist.save_demoset(out, ds, cfg.echo())
    print(f"wrote {len(ds)} demos, horizon {ds.horizon}, maze {maze.name} -> {out}")
    return ds


def cmd_train(cfg, args):
    ds = persist.load_demoset(_require(args.demos, "demos"))
    obs, _ = ds.training_arrays()
    net = VectorFieldNet.create(ds.horizon * ds.dim, obs.shape[1], tuple(cfg.hidden),
                                cfg.activation, cfg.time_features, cfg.seed,
                                parameterization=cfg.parameterization)

    def progress(epoch, loss):
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            log.info("epoch %d loss %.6g", epoch, loss)
    net, losses = train(net, ds, cfg.train_config(), cfg.seed, progress)
    out = _out(cfg, args, "model.pfck")
    persist.save_checkpoint(out, net, cfg.echo(), cfg.seed)
    csv_path = out.with_suffix(".loss.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])
    print(f"trained {cfg.epochs} epochs, final loss {losses[-1]:.6g} -> {out}, {csv_path}")
    return net, losses


def cmd_build_field(cfg, args):
    ds = persist.load_demoset(_require(args.demos, "demos"))
    kde = build_kde(ds, cfg.subsample, cfg.bandwidth, cfg.seed)
    fld = build_field(kde, cfg.quantile, cfg.alpha, cfg.cap)
    out = _out(cfg, args, "field.pfpf")
    persist.save_field(out, fld, cfg.echo())
    print(f"field: {kde.M} KDE points, h={kde.bandwidth:.6g}, {fld.safe.anchors.shape[0]} anchors, "
          f"threshold={fld.safe.threshold:.6g} -> {out}")
    return fld


def _load_policy_parts(cfg, args, need_field):
    net, _ = persist.load_checkpoint(_require(args.checkpoint, "checkpoint"))
    fld = None
    if need_field:
        fld, _ = persist.load_field(_require(args.field, "field"))
    return net, fld


def _write_json(path, text):
    Path(path).write_text(text)


def cmd_eval(cfg, args):
    maze = _maze(cfg)
    guided = args.policy == "pf2mp"
    net, fld = _load_policy_parts(cfg, args, guided and cfg.guidance_weight > 0)
    suite = evalbench.make_suite(maze, cfg.episodes, cfg.min_goal_separation, cfg.seed,
                                 cfg.repeats, cfg.clearance)
    weight = cfg.guidance_weight if guided else 0.0
    policy = evalbench.flow_policy(net, cfg.inference_config(weight), fld if weight > 0 else None)
    echo = dict(cfg.echo(), policy=args.policy)
    report = evalbench.run_bench(maze, policy, suite, _norm(maze), cfg.repeats, args.policy,
                                 cfg.success_radius, cfg.replan_every, echo)
    out = _out(cfg, args, "eval.json")
    _write_json(out, evalbench.to_json(report))
    table = evalbench.format_table([report])
    out.with_suffix(".txt").write_text(table)
    print(table, end="")
    return report


def cmd_ablate(cfg, args):
    maze = _maze(cfg)
    net, fld = _load_policy_parts(cfg, args, True)
    suite = evalbench.make_suite(maze, cfg.episodes, cfg.min_goal_separation, cfg.seed,
                                 cfg.repeats, cfg.clearance)
    lambdas = sorted(set(float(x) for x in cfg.lambdas))
    report = evalbench.run_lambda_ablation(maze, net, fld, suite, lambdas, _norm(maze), cfg.repeats,
                                           cfg.inference_config(), cfg.echo(),
                                           success_radius=cfg.success_radius,
                                           replan_every=cfg.replan_every)
    out = _out(cfg, args, "ablation.json")
    _write_json(out, evalbench.to_json(report))
    table = evalbench.format_table(report.reports, "Guidance weight sweep")
    out.with_suffix(".txt").write_text(table)
    print(table, end="")
    return report


def cmd_rollout(cfg, args):
    maze = _maze(cfg)
    guided = args.policy == "pf2mp"
    net, fld = _load_policy_parts(cfg, args, guided and cfg.guidance_weight > 0)
    suite = evalbench.make_suite(maze, args.episode + 1, cfg.min_goal_separation, cfg.seed, 1,
                                 cfg.clearance)
    start, goal = suite.episodes[args.episode]
    weight = cfg.guidance_weight if guided else 0.0
    policy = evalbench.flow_policy(net, cfg.inference_config(weight), fld if weight > 0 else None)
    res = rollout(maze, policy, start, goal, _norm(maze), evalbench.episode_rng(cfg.seed, 0, args.episode),
                  cfg.success_radius, cfg.replan_every)
    out = _out(cfg, args, "rollout.csv")
    hits = path_collisions(maze, np.vstack([start[None], res.trajectory]))
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "x", "y", "segment_collides"])
        w.writerow([0, repr(float(start[0])), repr(float(start[1])), ""])
        for i, (p, hit) in enumerate(zip(res.trajectory, hits), start=1):
            w.writerow([i, repr(float(p[0])), repr(float(p[1])), int(hit)])
    print(f"episode {args.episode}: success={res.success} collided={res.collided} "
          f"goal=({goal[0]:.3f}, {goal[1]:.3f}) -> {out}")
    return res


COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "train": cmd_train,
    "build-field": cmd_build_field,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "rollout": cmd_rollout,
}


def build_parser():
    p = argparse.ArgumentParser(prog="guidedflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--maze", help="builtin maze name (medium, large) or asset path")
        s.add_argument("--out", help="output file (default: <out_dir>/<standard name>)")
        s.add_argument("--seed", type=int)
        s.add_argument("--verbose", "-v", action="store_true")
        if name == "gen-demos":
            s.add_argument("--count", type=int, help="number of demonstrations")
            s.add_argument("--horizon", type=int)
        if name in ("train", "build-field"):
            s.add_argument("--demos", help="PFDM demo set")
        if name == "train":
            s.add_argument("--epochs", type=int)
        if name in ("eval", "ablate", "rollout"):
            s.add_argument("--checkpoint", help="PFCK checkpoint")
            s.add_argument("--field", help="PFPF field file")
            s.add_argument("--steps", type=int, help="Euler steps N")
            s.add_argument("--lambda", dest="lam", type=float, help="guidance weight")
        if name in ("eval", "rollout"):
            s.add_argument("--policy", choices=("fmp", "pf2mp"), default="pf2mp")
        if name in ("eval", "ablate"):
            s.add_argument("--episodes", type=int)
            s.add_argument("--repeats", type=int)
        if name == "ablate":
            s.add_argument("--lambdas", help="comma-separated guidance weights")
        if name == "rollout":
            s.add_argument("--episode", type=int, default=0, help="suite episode index")
    return p


def _overrides(args):
    g = lambda k: getattr(args, k, None)  # noqa: E731
    lambdas = parse_lambdas(args.lambdas) if g("lambdas") else None
    return {"maze": g("maze"), "seed": g("seed"), "demo_count": g("count"), "horizon": g("horizon"),
            "epochs": g("epochs"), "steps": g("steps"), "guidance_weight": g("lam"),
            "episodes": g("episodes"), "repeats": g("repeats"), "lambdas": lambdas}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, _overrides(args))
        if getattr(args, "episode", 0) < 0:
            raise ConfigError("--episode must be >= 0")
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, PlanningError, OSError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except NumericError as exc:
        print(f"{args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
