"""Run orchestration: config files, training runs, evaluation, ablations.

A run directory holds a manifest (config snapshot + seeds, enough to
reproduce the run bit-identically), a per-iteration metrics CSV, a periodic
evaluation CSV, and versioned checkpoints. See README for the CSV schemas
and the checkpoint layout.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import yaml

from . import curriculum as cur
from .a2c import TrainConfig, Trainer, lr_schedule
from .blockfile import read_blockfile, write_blockfile
from .model import ModelConfig, NavModel, model_config_for, onehot_actions
from .world import (
    Action,
    EnvConfig,
    GenerationSpec,
    MazeEnv,
    MazeLayout,
    Pose,
    generate_maze,
)

CHECKPOINT_VERSION = 1
RUN_ROOT_ENV = "NAVRL_RUN_ROOT"

METRICS_FIELDS = [
    "frames", "iteration", "learning_rate", "tau", "loss_total", "grad_norm",
    "loss_actor", "loss_critic", "loss_entropy", "loss_offpolicy_critic",
    "loss_pixel_control", "loss_reward_prediction", "loss_depth",
    "loss_obs_seg", "loss_target_seg",
    "mean_episode_length", "mean_episode_return", "episodes_done",
]

EVAL_FIELDS = ["frames", "n_episodes", "mean_episode_length", "mean_return",
               "success_rate"]

ABLATION_FIELDS = ["suite", "variant", "seed", "frames", "n_episodes",
                   "mean_episode_length", "mean_return", "success_rate"]


class ConfigError(ValueError):
    pass


@dataclass
class EnvSection:
    grid_rows: int = 7
    grid_cols: int = 7
    style: str = "maze"
    cell_size: float = 1.0
    n_targets: int = 1
    n_decor: int = 4
    reach_radius: float = 1.0
    layout_seed: int = 1
    distinct_layouts: bool = False  # when true, env i uses layout_seed + i
    actions: tuple = ("forward", "backward", "left", "right", "rotate_left", "rotate_right")
    rotate_step_deg: float = 30.0
    noise_enabled: bool = True
    frame_hw: int = 84


@dataclass
class ModelSection:
    core: str = "lstm"  # lstm | framestack
    # "auto" picks the preset for env.frame_hw
    preset: str = "auto"


@dataclass
class CurriculumSection:
    enabled: bool = True
    tau_start: float = 0.3
    tau_end: float = 1.0
    frame_start: int = 0
    frame_end: int = 250_000


@dataclass
class PretrainSection:
    enabled: bool = False
    dataset_path: str = ""
    dataset_size: int = 200_000
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3


@dataclass
class EvalSection:
    interval_frames: int = 100_000
    episodes: int = 100
    # stop the run early once an evaluation clears this success rate (<= 0: off)
    stop_success_rate: float = 0.0
    # cheap probes before paying for a full evaluation while early stopping:
    # rolling train success must clear this and tau must have ramped this far
    probe_train_success: float = 0.8
    probe_min_tau: float = 0.0


@dataclass
class CheckpointSection:
    interval_frames: int = 200_000


@dataclass
class RunConfig:
    seed: int = 1
    run_name: str = "run"
    env: EnvSection = field(default_factory=EnvSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainConfig = field(default_factory=TrainConfig)
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    checkpoint: CheckpointSection = field(default_factory=CheckpointSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        self.training.validate()
        if self.curriculum.enabled:
            cur.CurriculumSchedule(self.curriculum.tau_start, self.curriculum.tau_end,
                                   self.curriculum.frame_start, self.curriculum.frame_end)


_SECTION_TYPES = {
    "env": EnvSection,
    "model": ModelSection,
    "training": TrainConfig,
    "curriculum": CurriculumSection,
    "pretrain": PretrainSection,
    "eval": EvalSection,
    "checkpoint": CheckpointSection,
}


def _build_section(cls, data: dict, where: str):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise ConfigError(f"unknown keys in '{where}': {', '.join(unknown)}")
    kwargs = dict(data)
    if "actions" in kwargs and kwargs["actions"] is not None:
        kwargs["actions"] = tuple(kwargs["actions"])
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    top_valid = {"seed", "run_name"} | set(_SECTION_TYPES)
    unknown = sorted(set(data) - top_valid)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    cfg = RunConfig(seed=int(data.get("seed", 1)), run_name=str(data.get("run_name", "run")))
    for name, cls in _SECTION_TYPES.items():
        if name in data and data[name] is not None:
            if not isinstance(data[name], dict):
                raise ConfigError(f"section '{name}' must be a mapping")
            setattr(cfg, name, _build_section(cls, data[name], name))
    cfg.validate()
    return cfg


def load_config(path: str) -> RunConfig:
    with open(path) as f:
        data = yaml.safe_load(f)
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=True)


# ---------------------------------------------------------------------------
# construction helpers
# ---------------------------------------------------------------------------

def unique_layouts(layouts: list) -> list:
    out = []
    seen = set()
    for lay in layouts:
        if id(lay) not in seen:
            seen.add(id(lay))
            out.append(lay)
    return out


def build_layouts(cfg: RunConfig) -> list:
    e = cfg.env
    spec = GenerationSpec(rows=e.grid_rows, cols=e.grid_cols, style=e.style,
                          cell_size=e.cell_size, n_targets=e.n_targets,
                          n_decor=e.n_decor, reach_radius=e.reach_radius)
    k = cfg.training.num_envs
    if e.distinct_layouts:
        return [generate_maze(e.layout_seed + i, spec) for i in range(k)]
    layout = generate_maze(e.layout_seed, spec)
    return [layout] * k


def build_env_config(cfg: RunConfig) -> EnvConfig:
    e = cfg.env
    return EnvConfig(
        actions=tuple(e.actions),
        rotate_step_deg=e.rotate_step_deg,
        noise_enabled=e.noise_enabled,
        max_episode_length=cfg.training.max_episode_length,
        frame_hw=e.frame_hw,
    )


def build_envs(cfg: RunConfig, layouts=None) -> list:
    layouts = layouts or build_layouts(cfg)
    env_cfg = build_env_config(cfg)
    return [MazeEnv(lay, copy.deepcopy(env_cfg), seed=cfg.seed * 10_000 + 17 * i)
            for i, lay in enumerate(layouts)]


def build_model(cfg: RunConfig) -> NavModel:
    torch.manual_seed(cfg.seed)
    mc = model_config_for(cfg.env.frame_hw, len(build_env_config(cfg).actions),
                          core=cfg.model.core)
    return NavModel(mc)


def make_reset_sampler(cfg: RunConfig):
    """Returns (reset_fn, tau_fn) closing over the curriculum schedule."""
    if cfg.curriculum.enabled:
        schedule = cur.CurriculumSchedule(cfg.curriculum.tau_start, cfg.curriculum.tau_end,
                                          cfg.curriculum.frame_start, cfg.curriculum.frame_end)
        tau_fn = lambda frames: cur.tau_at(schedule, frames)
    else:
        tau_fn = lambda frames: 1.0

    def reset_fn(env: MazeEnv, rng: np.random.Generator, frames: int):
        tau = tau_fn(frames)
        target_id = int(rng.integers(len(env.layout.targets)))
        pose = cur.sample_initial_state(env.layout, tau, rng,
                                        agent_radius=env.config.agent_radius)
        return pose, target_id

    return reset_fn, tau_fn


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

class CheckpointMismatchError(ValueError):
    pass


def save_checkpoint(path: str, model: NavModel, trainer: Trainer = None,
                    frames: int = 0, extra: dict = None) -> None:
    blocks = {}
    for name, tensor in model.state_dict().items():
        blocks[f"param/{name}"] = tensor.detach().cpu().numpy()
    meta = {
        "kind": "checkpoint",
        "format_version": CHECKPOINT_VERSION,
        "model_config": json.loads(model.cfg.to_json()),
        "frames": frames,
        "extra": extra or {},
    }
    if trainer is not None:
        meta["frames"] = trainer.frames
        meta["iteration"] = trainer.iteration
        meta["episodes_done"] = trainer.episodes_done
        meta["rng_numpy"] = trainer.rng.bit_generator.state
        blocks["rng/torch_actions"] = trainer.action_rng.get_state().numpy()
        named = dict(model.named_parameters())
        for name, p in named.items():
            state = trainer.optimizer.state.get(p)
            if state and "square_avg" in state:
                blocks[f"opt/{name}/square_avg"] = state["square_avg"].detach().cpu().numpy()
                meta.setdefault("step_counts", {})[name] = float(state.get("step", 0))
    write_blockfile(path, meta, blocks)


def load_checkpoint(path: str, model: NavModel, trainer: Trainer = None) -> dict:
    meta, blocks = read_blockfile(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointMismatchError(f"{path} is not a checkpoint")
    want = json.loads(model.cfg.to_json())
    if meta["model_config"] != want:
        raise CheckpointMismatchError(
            "checkpoint architecture does not match the configured model:\n"
            f"  checkpoint: {meta['model_config']}\n  config:     {want}")
    state = {}
    for name, arr in blocks.items():
        if name.startswith("param/"):
            state[name[len("param/"):]] = torch.from_numpy(arr)
    model.load_state_dict(state)
    if trainer is not None:
        trainer.frames = int(meta.get("frames", 0))
        trainer.iteration = int(meta.get("iteration", 0))
        trainer.episodes_done = int(meta.get("episodes_done", 0))
        if "rng_numpy" in meta:
            trainer.rng.bit_generator.state = meta["rng_numpy"]
        if "rng/torch_actions" in blocks:
            trainer.action_rng.set_state(torch.from_numpy(blocks["rng/torch_actions"]))
        named = dict(model.named_parameters())
        steps = meta.get("step_counts", {})
        for name, p in named.items():
            key = f"opt/{name}/square_avg"
            if key in blocks:
                trainer.optimizer.state[p] = {
                    "square_avg": torch.from_numpy(blocks[key]).to(p.dtype),
                    "step": torch.tensor(float(steps.get(name, 0.0))),
                }
    return meta


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EpisodeRecord:
    length: int
    undiscounted_return: float
    success: bool
    target_id: int


@dataclass
class EvalReport:
    n_episodes: int
    mean_episode_length: float
    mean_return: float
    success_rate: float
    episodes: list

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "mean_episode_length": self.mean_episode_length,
            "mean_return": self.mean_return,
            "success_rate": self.success_rate,
        }


class ModelPolicy:
    """Stochastic actor wrapper driving one episode at a time."""

    def __init__(self, model: NavModel, action_set, seed: int = 0):
        self.model = model
        self.action_set = tuple(action_set)
        self.gen = torch.Generator().manual_seed(seed)
        self.reset()

    def reset(self) -> None:
        self.state = self.model.initial_state(1)
        self.prev_action_value = -1
        self.prev_reward = 0.0

    def act(self, obs) -> Action:
        dtype = next(self.model.parameters()).dtype
        with torch.no_grad():
            o = torch.from_numpy(obs.rgb[None]).permute(0, 3, 1, 2).to(dtype)
            t = torch.from_numpy(obs.target_rgb[None]).permute(0, 3, 1, 2).to(dtype)
            _, vec = self.model.conv_base(o, t)
            onehot = onehot_actions([self.prev_action_value], dtype=dtype)
            phi, self.state = self.model.core_step(
                vec, onehot, torch.tensor([self.prev_reward]), self.state)
            probs = self.model.policy_probs(phi)
            idx = int(torch.multinomial(probs, 1, generator=self.gen))
        action = self.action_set[idx]
        self.prev_action_value = action.value
        return action

    def observe_reward(self, reward: float) -> None:
        self.prev_reward = reward


def evaluate(policy, env: MazeEnv, n_episodes: int, seed: int,
             reset_fn=None) -> EvalReport:
    """Monte Carlo evaluation with per-episode rngs and full-range starts."""
    episodes = []
    for e in range(n_episodes):
        rng = np.random.default_rng([seed, e])
        env.rng = np.random.default_rng([seed, e, 1])
        if reset_fn is not None:
            pose, target_id = reset_fn(env, rng)
        else:
            target_id = int(rng.integers(len(env.layout.targets)))
            pose = cur.sample_initial_state(env.layout, 1.0, rng,
                                            agent_radius=env.config.agent_radius)
        obs = env.reset(pose, target_id)
        policy.reset()
        total = 0.0
        steps = 0
        success = False
        while True:
            action = policy.act(obs)
            result = env.step(action)
            policy.observe_reward(result.reward)
            total += result.reward
            steps += 1
            if result.terminal:
                success = result.reward > 0
                break
            obs = result.observation
        episodes.append(EpisodeRecord(steps, total, success, target_id))
    return EvalReport(
        n_episodes=n_episodes,
        mean_episode_length=float(np.mean([e.length for e in episodes])),
        mean_return=float(np.mean([e.undiscounted_return for e in episodes])),
        success_rate=float(np.mean([e.success for e in episodes])),
        episodes=episodes,
    )


# ---------------------------------------------------------------------------
# shortest-path planning (evaluation yardstick)
# ---------------------------------------------------------------------------

def shortest_action_count(layout: MazeLayout, pose: Pose, target, env_cfg: EnvConfig) -> int:
    """Action count of a simple planned route: BFS over cells, turns + moves.

    Forward motion covers cell_size per 1/forward_step actions; each turn in
    the cell path costs the rotations needed at the configured step angle.
    Reaching means entering reach_radius of the target position.
    """
    from collections import deque

    if isinstance(target, int):
        target = layout.targets[target]
    start = layout.cell_of(pose.x1, pose.x2)
    goal_cells = {c for c in _floor_cells(layout)
                  if math.hypot(layout.cell_center(c)[0] - target.position[0],
                                layout.cell_center(c)[1] - target.position[1])
                  <= target.reach_radius + 1e-9}
    if start in goal_cells:
        return 1  # any action terminates immediately
    prev = {start: None}
    q = deque([start])
    found = None
    while q:
        cell = q.popleft()
        if cell in goal_cells:
            found = cell
            break
        i, j = cell
        for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (i + di, j + dj)
            if layout.is_floor(*nxt) and nxt not in prev:
                prev[nxt] = cell
                q.append(nxt)
    if found is None:
        raise ValueError("target unreachable from pose")
    path = []
    c = found
    while c is not None:
        path.append(c)
        c = prev[c]
    path.reverse()

    moves_per_cell = max(1, round(layout.cell_size / env_cfg.forward_step))
    heading = pose.theta
    count = 0
    for a, b in zip(path[:-1], path[1:]):
        seg_heading = math.degrees(math.atan2(b[0] - a[0], b[1] - a[1])) % 360.0
        turn = abs((seg_heading - heading + 180.0) % 360.0 - 180.0)
        count += round(turn / env_cfg.rotate_step_deg)
        heading = seg_heading
        count += moves_per_cell
    return max(1, count)


def _floor_cells(layout: MazeLayout):
    for i in range(layout.rows):
        for j in range(layout.cols):
            if layout.is_floor(i, j):
                yield (i, j)


# ---------------------------------------------------------------------------
# training runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    run_dir: str
    frames: int
    stopped_early: bool
    last_eval: EvalReport = None
    checkpoint_path: str = ""


class _CsvLog:
    def __init__(self, path: str, fields: list, resume: bool):
        exists = os.path.exists(path) and resume
        self.fields = fields
        self.f = open(path, "a" if exists else "w", newline="")
        self.w = csv.DictWriter(self.f, fieldnames=fields, extrasaction="ignore")
        if not exists:
            self.w.writeheader()
            self.f.flush()

    def row(self, data: dict) -> None:
        self.w.writerow({k: data.get(k, "") for k in self.fields})
        self.f.flush()

    def close(self) -> None:
        self.f.close()


def default_run_root() -> str:
    return os.environ.get(RUN_ROOT_ENV, os.path.join(os.getcwd(), "runs"))


def prepare_run_dir(cfg: RunConfig, run_dir: str = None) -> str:
    run_dir = run_dir or os.path.join(default_run_root(),
                                      f"{cfg.run_name}-{time.strftime('%Y%m%d-%H%M%S')}")
    os.makedirs(run_dir, exist_ok=True)
    return run_dir


def write_manifest(cfg: RunConfig, run_dir: str, checkpoints: list) -> None:
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "version": CHECKPOINT_VERSION,
        "package_version": __import__("navrl").__version__,
        "start_time": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "checkpoints": checkpoints,
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def run_training(cfg: RunConfig, run_dir: str = None, resume: str = None,
                 log=print, eval_hook=None) -> RunResult:
    """Train until max_frames (or an early-stop evaluation success).

    `eval_hook(frames, report)` is called after each periodic evaluation.
    Resuming restores parameters, optimizer state, counters, and rngs from a
    checkpoint; metrics continue at the saved frame count.
    """
    cfg.validate()
    run_dir = prepare_run_dir(cfg, run_dir)
    save_config(cfg, os.path.join(run_dir, "config.yaml"))

    layouts = build_layouts(cfg)
    envs = build_envs(cfg, layouts)
    model = build_model(cfg)
    reset_fn, tau_fn = make_reset_sampler(cfg)

    if cfg.pretrain.enabled:
        from . import pretrain as pt

        ds_path = cfg.pretrain.dataset_path or os.path.join(run_dir, "pretrain.nvdset")
        if not os.path.exists(ds_path):
            rng = np.random.default_rng(cfg.seed + 9000)
            pt.generate_dataset(unique_layouts(layouts), cfg.pretrain.dataset_size,
                                rng, ds_path, frame_hw=cfg.env.frame_hw)
        pcfg = pt.PretrainConfig(epochs=cfg.pretrain.epochs,
                                 batch_size=cfg.pretrain.batch_size,
                                 learning_rate=cfg.pretrain.learning_rate,
                                 aux_downsize=cfg.training.aux_downsize)
        history = pt.pretrain(model, pt.Dataset(ds_path), pcfg,
                              max_ray=envs[0].max_ray_length, seed=cfg.seed, log=log)
        if log:
            log(f"pretraining done: loss {history[0]:.5f} -> {history[-1]:.5f}")

    trainer = Trainer(model, envs, cfg.training, reset_fn, tau_fn, seed=cfg.seed)
    checkpoints = []
    if resume:
        load_checkpoint(resume, model, trainer)
        checkpoints.append(resume)
        if log:
            log(f"resumed from {resume} at frame {trainer.frames}")
    write_manifest(cfg, run_dir, checkpoints)

    metrics_log = _CsvLog(os.path.join(run_dir, "metrics.csv"), METRICS_FIELDS,
                          resume is not None)
    eval_log = _CsvLog(os.path.join(run_dir, "eval.csv"), EVAL_FIELDS, resume is not None)

    next_eval = trainer.frames + cfg.eval.interval_frames
    next_ckpt = trainer.frames + cfg.checkpoint.interval_frames
    stopped_early = False
    last_eval = None

    def checkpoint(tag: str) -> str:
        path = os.path.join(run_dir, f"ckpt-{tag}.nvblk")
        save_checkpoint(path, model, trainer)
        checkpoints.append(path)
        write_manifest(cfg, run_dir, checkpoints)
        return path

    eval_env = MazeEnv(layouts[0], copy.deepcopy(envs[0].config), seed=cfg.seed + 777)

    while trainer.frames < cfg.training.max_frames:
        metrics = trainer.train_step()
        metrics_log.row(metrics)
        if log and trainer.iteration % 50 == 0:
            log(f"frames {metrics['frames']} loss {metrics['loss_total']:.4f} "
                f"len {metrics['mean_episode_length']:.1f} "
                f"ret {metrics['mean_episode_return']:.2f} tau {metrics['tau']:.2f}")
        if trainer.frames >= next_ckpt:
            checkpoint(str(trainer.frames))
            next_ckpt += cfg.checkpoint.interval_frames
        if cfg.eval.interval_frames and trainer.frames >= next_eval:
            next_eval += cfg.eval.interval_frames
            recent = trainer.completed_episodes[-50:]
            train_success = float(np.mean([r > 0 for _, r in recent])) if recent else 0.0
            wants_stop = cfg.eval.stop_success_rate > 0
            # full evaluations are expensive while the policy still times out
            if wants_stop and (train_success < cfg.eval.probe_train_success
                               or tau_fn(trainer.frames) < cfg.eval.probe_min_tau):
                continue
            policy = ModelPolicy(model, envs[0].config.actions, seed=cfg.seed + 31)
            report = evaluate(policy, eval_env, cfg.eval.episodes, seed=cfg.seed + 13)
            last_eval = report
            eval_log.row({"frames": trainer.frames, **report.to_dict()})
            if eval_hook:
                eval_hook(trainer.frames, report)
            if log:
                log(f"eval @ {trainer.frames}: success {report.success_rate:.2f} "
                    f"len {report.mean_episode_length:.1f}")
            if wants_stop and report.success_rate >= cfg.eval.stop_success_rate:
                stopped_early = True
                break

    final = checkpoint("final")
    metrics_log.close()
    eval_log.close()
    return RunResult(run_dir=run_dir, frames=trainer.frames,
                     stopped_early=stopped_early, last_eval=last_eval,
                     checkpoint_path=final)


# ---------------------------------------------------------------------------
# ablation suites
# ---------------------------------------------------------------------------

ABLATION_SUITES = ("lstm-vs-framestack", "unreal-vs-vn", "curriculum-on-off")


def _variant_configs(suite: str, base: RunConfig) -> dict:
    if suite not in ABLATION_SUITES:
        raise ValueError(f"unknown ablation suite {suite!r}; choose from {ABLATION_SUITES}")
    a = copy.deepcopy(base)
    b = copy.deepcopy(base)
    if suite == "lstm-vs-framestack":
        a.model.core = "lstm"
        b.model.core = "framestack"
        return {"lstm": a, "framestack": b}
    if suite == "unreal-vs-vn":
        # full vision-auxiliary stack vs the replay-only auxiliary pair
        b.training = dataclasses.replace(b.training, depth_weight=0.0,
                                         obs_seg_weight=0.0, target_seg_weight=0.0)
        return {"vn": a, "unreal": b}
    a.curriculum.enabled = True
    b.curriculum.enabled = False
    return {"curriculum": a, "fixed": b}


def run_ablation(suite: str, base: RunConfig, out_csv: str, seeds=(1, 2, 3),
                 eval_every: int = 20_000, eval_episodes: int = 20,
                 log=print, run_root: str = None) -> list:
    """Run the paired variants with matched seeds; one CSV row per eval point."""
    rows = []
    variants = _variant_configs(suite, base)
    with open(out_csv, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=ABLATION_FIELDS)
        w.writeheader()
        for variant, vcfg in variants.items():
            for seed in seeds:
                cfg = copy.deepcopy(vcfg)
                cfg.seed = seed
                cfg.run_name = f"{suite}-{variant}-s{seed}"
                cfg.eval.interval_frames = eval_every
                cfg.eval.episodes = eval_episodes
                cfg.eval.stop_success_rate = 0.0
                cfg.eval.probe_train_success = 0.0
                points = []

                def hook(frames, report, _v=variant, _s=seed):
                    row = {"suite": suite, "variant": _v, "seed": _s, "frames": frames,
                           **report.to_dict()}
                    points.append(row)
                    w.writerow(row)
                    f.flush()

                run_dir = None
                if run_root:
                    run_dir = os.path.join(run_root, cfg.run_name)
                run_training(cfg, run_dir=run_dir, log=log, eval_hook=hook)
                rows.extend(points)
    return rows


def frames_to_length_threshold(rows: list, variant: str, seed: int,
                               threshold: float) -> float:
    """First eval frame count at which the variant's mean length <= threshold."""
    pts = sorted((r for r in rows
                  if r["variant"] == variant and int(r["seed"]) == seed),
                 key=lambda r: int(r["frames"]))
    for r in pts:
        if float(r["mean_episode_length"]) <= threshold:
            return int(r["frames"])
    return math.inf
