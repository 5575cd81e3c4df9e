"""Pipeline stages: simulate -> calibrate -> train -> eval / compare.

Each stage reads and writes plain files under ``run.out`` so the commands
can run as separate processes.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__, cutsim
from ..baseline import SpringModel, calibrate_baseline, spring_forces
from ..bridge import TRACE_COLUMNS, BridgeConfig
from ..calibration import AdamConfig, ParamSpace, TpeConfig, calibrate, reference_loss
from ..cutsim import DT_CUT, FoodSpec, ForceProfile, LinearDescent, SimParams
from ..errors import ConfigError, MissingHeldOutItem, MissingPolicy
from ..fdcc import GainBounds
from ..robosim import ChainSpec
from ..rl.checkpoint import Container, container_to_agent
from ..rl.env import EnvConfig, Item
from ..rl.networks import NetworkSpec
from ..rl.sac import SacAgent, SacConfig
from ..rl.train import SLICE_SCHEDULE, Metrics, deterministic_policy, evaluate, phase_labels, train
from .config import RunConfig
from .io import (
    CURVE_COLUMNS,
    TRIAL_COLUMNS,
    ItemRecord,
    atomic_write_text,
    load_force_profile,
    save_force_profile,
    write_csv,
    write_meta,
)

TAGS = ("cutsim", "baseline")


# --- builders ----------------------------------------------------------------


def bridge_config(cfg: RunConfig) -> BridgeConfig:
    b = cfg["bridge"]
    return BridgeConfig(b["exchange_period"], b["dt_cut"], b["dt_robot"], b["publish"])


def chain_spec(cfg: RunConfig) -> ChainSpec:
    c = cfg["chain"]
    n = len(c["link_lengths"])
    return ChainSpec(
        link_lengths=tuple(c["link_lengths"]),
        joint_limits=((-math.pi, math.pi),) * n,
        joint_velocity_limit=c["joint_velocity_limit"],
        command_lag=c["command_lag"],
        base=tuple(c["base"]),
    )


def food_spec(name: str, spec: dict) -> FoodSpec:
    return FoodSpec(name, spec["height"], spring_count=int(spec["spring_count"]), anchor_y=spec["anchor_y"])


def env_config(cfg: RunConfig, items=()) -> EnvConfig:
    e = cfg["env"]
    return EnvConfig(
        w1=e["w1"],
        w2=e["w2"],
        w3=e["w3"],
        f_max=e["f_max"],
        f_scale=e["f_scale"],
        jerk_cap=e["jerk_cap"],
        reward_mode=e["reward_mode"],
        target_tolerance=e["target_tolerance"],
        workspace_y=tuple(e["workspace_y"]),
        workspace_z=tuple(e["workspace_z"]),
        start_clearance=e["start_clearance"],
        max_steps=int(e["max_steps"]),
        agent_period=e["agent_period"],
        history=int(e["history"]),
        delta_y=tuple(e["delta_y"]),
        delta_z=tuple(e["delta_z"]),
        gain_bounds=GainBounds(tuple(e["kc"]), tuple(e["kp"]), tuple(e["kd"])),
        noise=e["noise"],
        bridge=bridge_config(cfg),
        chain=chain_spec(cfg),
        items=tuple(items),
    )


def sac_config(cfg: RunConfig) -> SacConfig:
    s = dict(cfg["sac"])
    e = cfg["env"]
    network = NetworkSpec(
        history=int(e["history"]), tcn_channels=int(s.pop("tcn_channels")), hidden=int(s.pop("hidden"))
    )
    return SacConfig(network=network, **s)


def reference_trajectory(cfg: RunConfig, spec: dict) -> tuple[LinearDescent, float]:
    sim = cfg["simulate"]
    z0 = spec["height"] + sim["clearance"]
    traj = LinearDescent(spec["anchor_y"], z0, vy=sim["lateral_speed"], vz=-sim["speed"], z_floor=0.0)
    period = sim["sample_period"]
    duration = round((z0 / sim["speed"] + sim["hold"]) / period) * period
    return traj, duration


def item_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([seed % 2**64, zlib.crc32(name.encode())]).generate_state(1)[0])


def _created(cfg: RunConfig, **extra) -> dict:
    return {"config_hash": cfg.hash, "seed": cfg.seed, "version": __version__, **extra}


# --- simulate ------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, log: Callable = print) -> list:
    """Record force profiles of every item with a hidden parameter vector."""
    names = cfg["simulate"]["items"] or [n for n, s in cfg["items"].items() if s.get("truth")]
    paths = []
    bridge = cfg["bridge"]
    dt = bridge["dt_cut"]
    for name in names:
        if name not in cfg["items"]:
            raise ConfigError(f"unknown scene {name!r}")
        spec = cfg["items"][name]
        if not spec.get("truth"):
            raise ConfigError(f"scene {name!r} has no truth parameters to simulate")
        params = SimParams.from_array(spec["truth"])
        traj, duration = reference_trajectory(cfg, spec)
        full = cutsim.simulate_trace(cutsim.build_scene(food_spec(name, spec), params), traj, dt, duration)
        stride = int(round(cfg["simulate"]["sample_period"] / dt))
        profile = ForceProfile(full.t[::stride], full.force[::stride], full.z[::stride])
        path = cfg.out / "profiles" / f"{name}.csv"
        save_force_profile(profile, path)
        write_meta(path, _created(cfg, item=name))
        log(f"{name}: {len(profile)} samples, peak {profile.peak():.3f} N -> {path}")
        paths.append(path)
    return paths


# --- calibrate ------------------------------------------------------------------


def _profile_paths(cfg: RunConfig, name: str, spec: dict) -> list:
    paths = [Path(p) for p in spec.get("profiles") or []]
    if not paths:
        default = cfg.out / "profiles" / f"{name}.csv"
        paths = [default] if default.exists() else []
    missing = [p for p in paths if not p.exists()]
    if not paths or missing:
        raise ConfigError(f"item {name!r} has no force profiles" + (f" ({missing[0]} missing)" if missing else ""))
    return paths


def record_path(cfg: RunConfig, name: str, tag: str) -> Path:
    return cfg.out / "calibration" / f"{name}.{tag}.json"


def cmd_calibrate(cfg: RunConfig, log: Callable = print) -> list:
    c = cfg["calibration"]
    tpe = TpeConfig(c["n_startup"], c["n_trials"], c["gamma"], c["n_candidates"])
    adam = AdamConfig(c["learning_rate"], c["beta1"], c["beta2"], c["epsilon"], c["iterations"])
    written = []
    for name, spec in cfg.items(held_out=False).items():
        paths = _profile_paths(cfg, name, spec)
        refs = [load_force_profile(p) for p in paths]
        food = food_spec(name, spec)
        traj, duration = reference_trajectory(cfg, spec)
        dt = cfg["bridge"]["dt_cut"]
        seed = item_seed(cfg.seed, name)
        params, history = calibrate(refs, food, traj, ParamSpace(), tpe, adam, seed=seed, dt=dt, duration=duration)
        loss = reference_loss(refs, food, traj, params, dt, duration)
        sources = [str(p) for p in paths]
        rec = ItemRecord(name, "cutsim", params.as_dict(), loss, sources, _created(cfg, item_seed=seed))
        written.append(rec.save(record_path(cfg, name, "cutsim")))
        trials = cfg.out / "calibration" / f"{name}.trials.csv"
        write_csv(trials, TRIAL_COLUMNS, [(i, *t.params.as_array(), t.loss) for i, t in enumerate(history)])
        write_meta(trials, _created(cfg, item_seed=seed))
        peak = max(r.peak() for r in refs)
        log(f"{name}: cutsim rmse {math.sqrt(loss / len(refs)):.4g} N (peak {peak:.3g} N)")

        best_ref = max(refs, key=lambda r: r.peak())
        spring = calibrate_baseline(best_ref, spec["height"], spec["height"], c["solver_step"])
        spring_loss = sum(_spring_loss(spring, traj, r) for r in refs)
        rec = ItemRecord(name, "baseline", spring.as_dict(), spring_loss, sources, _created(cfg))
        written.append(rec.save(record_path(cfg, name, "baseline")))
        log(f"{name}: baseline k = {spring.stiffness:.4g} N/m")
    return written


def _spring_loss(model: SpringModel, traj, ref: ForceProfile) -> float:
    _, z, _, vz = traj(ref.t)
    f = spring_forces(model, z, vz)
    return float(np.mean((np.abs(f.f_z) - ref.magnitude()) ** 2))


def load_items(cfg: RunConfig, tag: str, held_out: bool = False) -> list:
    items = []
    for name, spec in cfg.items(held_out=held_out).items():
        path = record_path(cfg, name, tag)
        if not path.exists():
            raise ConfigError(f"no {tag} calibration for item {name!r} ({path}); run calibrate first")
        rec = ItemRecord.load(path)
        model = SimParams(**rec.params).validate() if tag == "cutsim" else SpringModel(**rec.params)
        items.append(Item(name, food_spec(name, spec), model, tag))
    return items


def evaluation_items(cfg: RunConfig) -> list:
    """Calibrated cutsim items plus the held-out items at their hidden parameters."""
    items = load_items(cfg, "cutsim")
    for name, spec in cfg.items(held_out=True).items():
        if not spec.get("truth"):
            raise ConfigError(f"held-out item {name!r} needs truth parameters")
        items.append(Item(name, food_spec(name, spec), SimParams.from_array(spec["truth"]).validate()))
    return items


# --- train ----------------------------------------------------------------------


def policy_dir(cfg: RunConfig, tag: str, seed: int) -> Path:
    return cfg.out / "policies" / tag / f"seed{seed}"


def cmd_train(cfg: RunConfig, tag: str, seeds=None, log: Callable = print) -> list:
    if tag not in TAGS:
        raise ConfigError(f"unknown model tag {tag!r}")
    env = env_config(cfg, load_items(cfg, tag))
    sac = sac_config(cfg)
    seeds = list(cfg["train"]["seeds"] if seeds is None else seeds)
    out = []
    for seed in seeds:
        d = policy_dir(cfg, tag, seed)
        resume = None
        if cfg["train"]["resume"] and (d / "final.ckpt").exists():
            resume = Container.load(d / "final.ckpt")
        meta = {"config": cfg.tree, "config_hash": cfg.hash, "model_tag": tag}
        result = train(env, sac, seed, log=lambda s: log(f"[{tag} seed {seed}] {s}"), resume=resume, meta=meta)
        result.best.save(d / "best.ckpt")
        result.final.save(d / "final.ckpt")
        write_csv(d / "curve.csv", CURVE_COLUMNS, result.curve)
        write_csv(d / "episodes.csv", ("end_step", "return", "terminal"), result.episodes)
        for name in ("curve.csv", "episodes.csv"):
            write_meta(d / name, {"config_hash": cfg.hash, "seed": seed, "model_tag": tag})
        out.append(d)
    return out


def load_policy(cfg: RunConfig, tag: str, seed: int, which: str = "best") -> SacAgent:
    path = policy_dir(cfg, tag, seed) / f"{which}.ckpt"
    if not path.exists():
        raise MissingPolicy(f"no {tag} policy for seed {seed} at {path}")
    agent = SacAgent(sac_config(cfg), seed)
    container_to_agent(Container.load(path), agent)
    return agent


# --- eval / compare ----------------------------------------------------------------


EPISODE_COLUMNS = (
    "model_tag",
    "seed",
    "item",
    "held_out",
    "episode",
    "success",
    "terminal",
    "steps",
    "duration_s",
    "return",
    "peak_force_N",
    "mean_food_force_N",
    "mean_board_force_N",
    "board_peak_force_N",
    "jerk_rms",
)
STATS_COLUMNS = (
    "model_tag",
    "item",
    "held_out",
    "episodes",
    "success_rate",
    "collisions",
    "peak_force_median_N",
    "peak_force_q1_N",
    "peak_force_q3_N",
    "food_force_median_N",
    "board_force_median_N",
    "board_peak_median_N",
    "board_peak_q1_N",
    "board_peak_q3_N",
    "jerk_rms_median",
)


def schedule(cfg: RunConfig) -> list:
    per_item = int(cfg["eval"]["episodes_per_item"])
    names = list(cfg["items"])
    base = [row for row in SLICE_SCHEDULE if row[0] in names]
    base += [(n, 5, 0.005) for n in names if n not in {r[0] for r in SLICE_SCHEDULE}]
    if per_item > 0:
        return [(n, per_item, thick) for n, _, thick in base]
    return base


def _evaluate_tag(cfg: RunConfig, tag: str, seed: int) -> Metrics:
    agent = load_policy(cfg, tag, seed)
    items = evaluation_items(cfg)
    env = env_config(cfg, items)
    return evaluate(deterministic_policy(agent), env, slice_schedule=schedule(cfg), seed=int(cfg["eval"]["seed"]))


def _episode_rows(tag, seed, metrics: Metrics, held: set):
    counters: dict = {}
    for e in metrics.episodes:
        k = counters.get(e.item, 0)
        counters[e.item] = k + 1
        yield (
            tag, seed, e.item, e.item in held, k, e.success, e.terminal, e.steps, e.duration,
            e.episode_return, e.peak_force, e.mean_food_force, e.mean_board_force,
            e.board_peak_force, e.jerk_rms,
        )


def _stats_rows(tag, metrics: Metrics, held: set):
    for item in metrics.items():
        eps = [e for e in metrics.episodes if e.item == item]
        peak = metrics.summary(item, "peak_force")
        board = metrics.summary(item, "board_peak_force")
        yield (
            tag, item, item in held, len(eps),
            float(np.mean([e.success for e in eps])),
            sum(e.terminal == "collision" for e in eps),
            *peak,
            metrics.summary(item, "mean_food_force")[0],
            metrics.summary(item, "mean_board_force")[0],
            *board,
            metrics.summary(item, "jerk_rms")[0],
        )


def _write_traces(root: Path, tag: str, metrics: Metrics):
    counters: dict = {}
    for e in metrics.episodes:
        k = counters.get(e.item, 0)
        counters[e.item] = k + 1
        arr = e.trace.as_array()
        labels = phase_labels(arr[:, 2], arr[:, 5:7])
        rows = [(*row, lab) for row, lab in zip(arr.tolist(), labels)]
        write_csv(root / tag / f"{e.item}_{k:02d}.csv", (*TRACE_COLUMNS, "phase"), rows)


def cmd_eval(cfg: RunConfig, tag: str, seed: int | None = None, log: Callable = print) -> Metrics:
    seed = cfg["train"]["seeds"][0] if seed is None else seed
    metrics = _evaluate_tag(cfg, tag, seed)
    held = set(cfg.items(held_out=True))
    root = cfg.out / "eval" / tag
    write_csv(root / "episodes.csv", EPISODE_COLUMNS, _episode_rows(tag, seed, metrics, held))
    write_csv(root / "force_stats.csv", STATS_COLUMNS, _stats_rows(tag, metrics, held))
    for name in ("episodes.csv", "force_stats.csv"):
        write_meta(root / name, _created(cfg, policy_seed=seed, model_tag=tag))
    log(f"{tag}: success {metrics.success_rate:.2f} over {len(metrics)} episodes")
    return metrics


def cmd_compare(cfg: RunConfig, seed: int | None = None, log: Callable = print) -> dict:
    if not cfg.items(held_out=True):
        raise MissingHeldOutItem("compare needs at least one held-out item in the config")
    seed = cfg["train"]["seeds"][0] if seed is None else seed
    for tag in TAGS:
        path = policy_dir(cfg, tag, seed) / "best.ckpt"
        if not path.exists():
            raise MissingPolicy(f"no {tag} policy for seed {seed} at {path}")
    held = set(cfg.items(held_out=True))
    root = cfg.out / "compare"
    results, episodes, stats = {}, [], []
    for tag in TAGS:
        m = _evaluate_tag(cfg, tag, seed)
        results[tag] = m
        episodes.extend(_episode_rows(tag, seed, m, held))
        stats.extend(_stats_rows(tag, m, held))
        _write_traces(root / "traces", tag, m)
    write_csv(root / "episodes.csv", EPISODE_COLUMNS, episodes)
    write_csv(root / "force_stats.csv", STATS_COLUMNS, stats)
    for name in ("episodes.csv", "force_stats.csv"):
        write_meta(root / name, _created(cfg, policy_seed=seed))
    for row in stats:
        flag = " (held out)" if row[2] else ""
        log(f"{row[0]:8s} {row[1]:9s}{flag}: success {row[4]:.2f}, board peak median {row[10]:.2f} N")
    return results
