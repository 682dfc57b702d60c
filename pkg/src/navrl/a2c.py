"""Batched advantage actor-critic with replayed auxiliary objectives.

k environments step synchronously for up to `rollout_length` steps per
iteration; the rollout is then re-run through the network in one batch to
compute the weighted sum of losses (policy gradient with mixed-length
bootstrapped returns, value regression, negative entropy, plus the replayed
pixel-control / reward-prediction / critic terms and the on-policy vision
losses). Gradients are clipped by global l2 norm and applied with RMSprop
under a linearly decaying learning rate.

Every loss is the mean over its batch elements; the configured weights are
applied once, in the total (verified by recomposition in the test suite).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from . import auxiliary as aux
from .model import NavModel, onehot_actions
from .renderer import downsample
from .world import MazeEnv


class TrainingDivergedError(RuntimeError):
    """Raised when a loss turns NaN/Inf during an update."""


@dataclass
class TrainConfig:
    discount_factor: float = 0.99
    max_episode_length: int = 900
    max_rollout_length: int = 20
    max_frames: int = 40_000_000
    num_envs: int = 16
    replay_buffer_size: int = 2000

    learning_rate: float = 7e-4
    rmsprop_alpha: float = 0.99
    rmsprop_epsilon: float = 1e-5
    max_gradient_norm: float = 0.5

    entropy_weight: float = 0.001
    actor_weight: float = 1.0
    critic_weight: float = 0.5
    offpolicy_critic_weight: float = 1.0
    pixel_control_weight: float = 0.05
    reward_prediction_weight: float = 1.0
    depth_weight: float = 0.1
    obs_seg_weight: float = 0.1
    target_seg_weight: float = 0.1

    pixel_control_discount: float = 0.9
    pixel_control_downsize: int = 4
    aux_downsize: int = 4

    LOSS_WEIGHT_FIELDS = (
        "actor_weight", "critic_weight", "entropy_weight", "offpolicy_critic_weight",
        "pixel_control_weight", "reward_prediction_weight", "depth_weight",
        "obs_seg_weight", "target_seg_weight",
    )

    def validate(self) -> None:
        errors = []
        for name in self.LOSS_WEIGHT_FIELDS:
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        for name in ("discount_factor", "pixel_control_discount"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                errors.append(f"{name} must be in (0, 1)")
        if self.max_rollout_length < 1:
            errors.append("max_rollout_length must be >= 1")
        if self.num_envs < 1:
            errors.append("num_envs must be >= 1")
        if self.replay_buffer_size < 1:
            errors.append("replay_buffer_size must be >= 1")
        if errors:
            raise ValueError("invalid training config: " + "; ".join(errors))


def n_step_returns(rewards: np.ndarray, terminals: np.ndarray, gamma: float,
                   bootstrap) -> np.ndarray:
    """Bootstrapped mixed-length returns by backward recursion.

    g[i] = r[i] + gamma * g[i+1], seeded with the critic's bootstrap value;
    the chain restarts from zero across terminal steps, so nothing leaks
    between episodes. Works on (L,) or (L, k) arrays with bootstrap () or (k,).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    terminals = np.asarray(terminals, dtype=bool)
    if rewards.size == 0:
        raise ValueError("empty rollout")
    g_next = np.asarray(bootstrap, dtype=np.float64)
    out = np.empty_like(rewards)
    for i in range(rewards.shape[0] - 1, -1, -1):
        g_next = rewards[i] + gamma * np.where(terminals[i], 0.0, g_next)
        out[i] = g_next
    return out


def actor_loss(log_prob_taken: torch.Tensor, advantages: torch.Tensor) -> torch.Tensor:
    """Policy-gradient surrogate; advantages must already be detached."""
    return -(log_prob_taken * advantages).mean()


def critic_loss(values: torch.Tensor, returns: torch.Tensor) -> torch.Tensor:
    """Half squared error against the (constant) bootstrapped returns."""
    return (0.5 * (returns - values) ** 2).mean()


def entropy_loss(log_probs: torch.Tensor) -> torch.Tensor:
    """Negative entropy, mean over batch: sum_a pi log pi (x log x -> 0 at 0)."""
    probs = log_probs.exp()
    plogp = torch.where(probs > 0, probs * log_probs, torch.zeros_like(probs))
    return plogp.sum(dim=-1).mean()


def clip_gradients(parameters, max_norm: float = 0.5) -> float:
    """Scale all gradients so the global l2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    grads = [p.grad for p in parameters if p.grad is not None]
    if not grads:
        return 0.0
    total = math.sqrt(sum(float(g.detach().pow(2).sum()) for g in grads))
    if total > max_norm:
        # the 1e-7 margin absorbs float32 rounding so the bound is strict
        scale = max_norm / total * (1.0 - 1e-7)
        for g in grads:
            g.detach().mul_(scale)
    return total


def lr_schedule(frames: int, max_frames: int, base_lr: float = 7e-4) -> float:
    """Linear decay from base_lr at frame 0 to zero at max_frames (clamped)."""
    if max_frames <= 0:
        return base_lr
    remaining = max(0.0, (max_frames - frames) / max_frames)
    return base_lr * remaining


@dataclass
class Rollout:
    """Fixed-length slice of synchronized experience across k environments.

    Arrays are time-major: (L, k, ...). `begin` flags steps that start a new
    episode (the core state is zeroed there); `terminal` flags steps that
    ended one. Downsampled ground-truth planes ride along for the vision
    losses; `bootstrap_value` is the detached critic estimate past the end.
    """

    obs: np.ndarray            # (L, k, H, W, 3) float32
    target: np.ndarray         # (L, k, H, W, 3) float32
    prev_action: np.ndarray    # (L, k) int64 full-enum values, -1 at episode start
    prev_reward: np.ndarray    # (L, k) float32
    action: np.ndarray         # (L, k) int64 policy indices
    reward: np.ndarray         # (L, k) float32
    terminal: np.ndarray       # (L, k) bool
    begin: np.ndarray          # (L, k) bool
    value: np.ndarray          # (L, k) float32 (collection-time, diagnostics)
    log_prob: np.ndarray       # (L, k) float32 (collection-time, diagnostics)
    depth_small: np.ndarray    # (L, k, h, w) float32 in [0, 1]
    obs_seg_small: np.ndarray  # (L, k, h, w, 3) float32
    target_seg_small: np.ndarray
    bootstrap_value: np.ndarray  # (k,) float32
    initial_state: tuple       # detached core state at step 0

    @property
    def length(self) -> int:
        return self.obs.shape[0]

    @property
    def num_envs(self) -> int:
        return self.obs.shape[1]


class Trainer:
    """Owns the update loop state: envs, buffers, model, optimizer, counters."""

    def __init__(self, model: NavModel, envs: list, config: TrainConfig,
                 reset_fn, tau_fn=None, seed: int = 0):
        config.validate()
        self.model = model
        self.envs = envs
        self.config = config
        self.reset_fn = reset_fn          # (env, rng, frames) -> (Pose, target_id)
        self.tau_fn = tau_fn or (lambda frames: 1.0)
        self.rng = np.random.default_rng(seed)
        self.action_rng = torch.Generator().manual_seed(seed)
        self.frames = 0
        self.iteration = 0

        env_cfg = envs[0].config
        self.action_set = env_cfg.actions
        self.action_values = np.array([a.value for a in self.action_set], dtype=np.int64)
        if model.cfg.n_actions != len(self.action_set):
            raise ValueError("model n_actions does not match the environment action set")

        self.buffers = [aux.ReplayBuffer(config.replay_buffer_size, env_cfg.frame_hw)
                        for _ in envs]
        self.optimizer = torch.optim.RMSprop(
            model.parameters(), lr=config.learning_rate,
            alpha=config.rmsprop_alpha, eps=config.rmsprop_epsilon,
            momentum=0.0, centered=False,
        )

        k = len(envs)
        self.state = model.initial_state(k)
        self.prev_action = np.full(k, -1, dtype=np.int64)   # full-enum values
        self.prev_reward = np.zeros(k, dtype=np.float32)
        self.obs = [None] * k
        self.episode_steps = np.zeros(k, dtype=np.int64)
        self.episode_return = np.zeros(k, dtype=np.float64)
        self.pending_begin = np.ones(k, dtype=bool)
        self.completed_episodes: list = []  # (length, return) of recent episodes
        self.episodes_done = 0
        self._reset_all()

    # -- episode management --------------------------------------------------

    def _reset_env(self, i: int) -> None:
        pose, target_id = self.reset_fn(self.envs[i], self.rng, self.frames)
        self.obs[i] = self.envs[i].reset(pose, target_id)
        self.prev_action[i] = -1
        self.prev_reward[i] = 0.0
        self.episode_steps[i] = 0
        self.episode_return[i] = 0.0
        self.pending_begin[i] = True

    def _reset_all(self) -> None:
        for i in range(len(self.envs)):
            self._reset_env(i)
        self.state = self.model.initial_state(len(self.envs))

    # -- rollout collection ----------------------------------------------------

    def _obs_batch(self):
        rgb = np.stack([o.rgb for o in self.obs])
        tgt = np.stack([o.target_rgb for o in self.obs])
        return rgb, tgt

    def _policy_step(self):
        """Sample one synchronized action vector (no gradients)."""
        rgb, tgt = self._obs_batch()
        dtype = next(self.model.parameters()).dtype
        obs_t = torch.from_numpy(rgb).permute(0, 3, 1, 2).to(dtype)
        tgt_t = torch.from_numpy(tgt).permute(0, 3, 1, 2).to(dtype)
        with torch.no_grad():
            keep = torch.from_numpy(~self.pending_begin).to(dtype)
            self.state = self.model.mask_state(self.state, keep)
            _, vec = self.model.conv_base(obs_t, tgt_t)
            onehots = onehot_actions(self.prev_action, dtype=dtype)
            phi, self.state = self.model.core_step(
                vec, onehots, torch.from_numpy(self.prev_reward), self.state)
            log_probs = F.log_softmax(self.model.actor_logits(phi), dim=-1)
            values = self.model.critic_value(phi)
            actions = torch.multinomial(log_probs.exp(), 1, generator=self.action_rng).squeeze(1)
            taken_logp = log_probs.gather(1, actions.unsqueeze(1)).squeeze(1)
        return actions.numpy(), values.numpy(), taken_logp.numpy()

    def collect_rollouts(self) -> Rollout:
        """Step all k environments for up to L synchronized steps."""
        cfg = self.config
        k = len(self.envs)
        L = cfg.max_rollout_length
        ds = cfg.aux_downsize
        rec = {name: [] for name in ("obs", "target", "prev_action", "prev_reward",
                                     "action", "reward", "terminal", "begin", "value",
                                     "log_prob", "depth_small", "obs_seg_small",
                                     "target_seg_small")}
        initial_state = self.model.detach_state(
            self.model.mask_state(self.state, torch.from_numpy(~self.pending_begin).float()))

        for _ in range(L):
            rec["begin"].append(self.pending_begin.copy())
            rec["prev_action"].append(self.prev_action.copy())
            rec["prev_reward"].append(self.prev_reward.copy())
            rgb, tgt = self._obs_batch()
            rec["obs"].append(rgb)
            rec["target"].append(tgt)
            depth_s = np.stack([
                downsample(o.depth / self.envs[i].max_ray_length, ds)
                for i, o in enumerate(self.obs)])
            rec["depth_small"].append(depth_s.astype(np.float32))
            rec["obs_seg_small"].append(np.stack(
                [downsample(o.seg, ds) for o in self.obs]).astype(np.float32))
            rec["target_seg_small"].append(np.stack(
                [downsample(o.target_seg, ds) for o in self.obs]).astype(np.float32))

            actions, values, logps = self._policy_step()
            self.pending_begin[:] = False
            rewards = np.zeros(k, dtype=np.float32)
            terminals = np.zeros(k, dtype=bool)
            for i, env in enumerate(self.envs):
                a_idx = int(actions[i])
                action = self.action_set[a_idx]
                obs_before = self.obs[i]
                result = env.step(action)
                rewards[i] = result.reward
                terminals[i] = result.terminal
                self.buffers[i].append(
                    np.clip(np.round(obs_before.rgb * 255.0), 0, 255).astype(np.uint8),
                    env.target.target_id, a_idx, float(result.reward),
                    bool(result.terminal), bool(rec["begin"][-1][i]),
                    target_rgb_u8=np.clip(np.round(obs_before.target_rgb * 255.0), 0, 255).astype(np.uint8),
                )
                self.episode_steps[i] += 1
                self.episode_return[i] += result.reward
                if result.terminal:
                    self.completed_episodes.append(
                        (int(self.episode_steps[i]), float(self.episode_return[i])))
                    self.episodes_done += 1
                    self._reset_env(i)
                else:
                    self.obs[i] = result.observation
                    self.prev_action[i] = self.action_values[a_idx]
                    self.prev_reward[i] = result.reward
            rec["action"].append(actions.astype(np.int64))
            rec["reward"].append(rewards)
            rec["terminal"].append(terminals)
            rec["value"].append(values.astype(np.float32))
            rec["log_prob"].append(logps.astype(np.float32))
            self.frames += k

        # bootstrap values for the state past the rollout end
        rgb, tgt = self._obs_batch()
        dtype = next(self.model.parameters()).dtype
        with torch.no_grad():
            keep = torch.from_numpy(~self.pending_begin).to(dtype)
            state = self.model.mask_state(self.state, keep)
            _, vec = self.model.conv_base(
                torch.from_numpy(rgb).permute(0, 3, 1, 2).to(dtype),
                torch.from_numpy(tgt).permute(0, 3, 1, 2).to(dtype))
            onehots = onehot_actions(self.prev_action, dtype=dtype)
            phi, _ = self.model.core_step(vec, onehots,
                                          torch.from_numpy(self.prev_reward), state)
            bootstrap = self.model.critic_value(phi).numpy().astype(np.float32)

        stacked = {name: np.stack(vals) for name, vals in rec.items()}
        return Rollout(
            obs=stacked["obs"], target=stacked["target"],
            prev_action=stacked["prev_action"], prev_reward=stacked["prev_reward"],
            action=stacked["action"], reward=stacked["reward"],
            terminal=stacked["terminal"], begin=stacked["begin"],
            value=stacked["value"], log_prob=stacked["log_prob"],
            depth_small=stacked["depth_small"], obs_seg_small=stacked["obs_seg_small"],
            target_seg_small=stacked["target_seg_small"],
            bootstrap_value=bootstrap, initial_state=initial_state,
        )

    # -- losses ---------------------------------------------------------------

    def _rollout_forward(self, rollout: Rollout):
        """Re-run the rollout with gradients: log-probs, values, aux maps."""
        L, k = rollout.length, rollout.num_envs
        dtype = next(self.model.parameters()).dtype
        obs = torch.from_numpy(rollout.obs.reshape(L * k, *rollout.obs.shape[2:]))
        tgt = torch.from_numpy(rollout.target.reshape(L * k, *rollout.target.shape[2:]))
        obs = obs.permute(0, 3, 1, 2).to(dtype)
        tgt = tgt.permute(0, 3, 1, 2).to(dtype)
        spatial, vec = self.model.conv_base(obs, tgt)
        vec = vec.reshape(L, k, -1)

        state = tuple(s.to(dtype) for s in rollout.initial_state)
        phis = []
        for t in range(L):
            keep = torch.from_numpy(~rollout.begin[t]).to(dtype)
            state = self.model.mask_state(state, keep)
            onehots = onehot_actions(rollout.prev_action[t], dtype=dtype)
            phi, state = self.model.core_step(
                vec[t], onehots, torch.from_numpy(rollout.prev_reward[t]), state)
            phis.append(phi)
        phi = torch.stack(phis)  # (L, k, d)
        log_probs = F.log_softmax(self.model.actor_logits(phi), dim=-1)
        values = self.model.critic_value(phi)
        return spatial, log_probs, values

    def _vn_losses(self, spatial, rollout: Rollout):
        depth_pred, obs_seg_pred, target_seg_pred = self.model.aux_predictions(spatial)
        L, k = rollout.length, rollout.num_envs
        dtype = depth_pred.dtype

        def flat(x, channels_last):
            t = torch.from_numpy(x.reshape(L * k, *x.shape[2:])).to(dtype)
            return t.permute(0, 3, 1, 2) if channels_last else t.unsqueeze(1)

        return (
            F.mse_loss(depth_pred, flat(rollout.depth_small, False)),
            F.mse_loss(obs_seg_pred, flat(rollout.obs_seg_small, True)),
            F.mse_loss(target_seg_pred, flat(rollout.target_seg_small, True)),
        )

    def train_step(self) -> dict:
        """One iteration: collect, compute the weighted losses, update."""
        cfg = self.config
        rollout = self.collect_rollouts()
        L, k = rollout.length, rollout.num_envs

        spatial, log_probs, values = self._rollout_forward(rollout)
        returns = n_step_returns(rollout.reward, rollout.terminal,
                                 cfg.discount_factor, rollout.bootstrap_value)
        returns_t = torch.from_numpy(returns).to(values.dtype)
        advantages = (returns_t - values.detach())

        actions_t = torch.from_numpy(rollout.action)
        taken_logp = log_probs.gather(2, actions_t.unsqueeze(2)).squeeze(2)

        losses = {
            "actor": actor_loss(taken_logp.reshape(-1), advantages.reshape(-1)),
            "critic": critic_loss(values.reshape(-1), returns_t.reshape(-1)),
            "entropy": entropy_loss(log_probs.reshape(-1, log_probs.shape[-1])),
        }

        if cfg.depth_weight or cfg.obs_seg_weight or cfg.target_seg_weight:
            d, os_, ts = self._vn_losses(spatial, rollout)
            losses["depth"] = d
            losses["obs_seg"] = os_
            losses["target_seg"] = ts

        if cfg.reward_prediction_weight:
            samples = []
            for buf in self.buffers:
                s = aux.sample_rp(buf, self.rng)
                if s is not None:
                    samples.append(s)
            if samples:
                losses["reward_prediction"] = aux.reward_prediction_loss(self.model, samples)

        if cfg.pixel_control_weight:
            w = self._sample_ready_window()
            if w is not None:
                buf, window = w
                losses["pixel_control"] = aux.pixel_control_loss(
                    self.model, buf, window, self.action_values,
                    gamma_pc=cfg.pixel_control_discount, factor=cfg.pixel_control_downsize)

        if cfg.offpolicy_critic_weight:
            w = self._sample_ready_window()
            if w is not None:
                buf, window = w
                losses["offpolicy_critic"] = aux.offpolicy_critic_loss(
                    self.model, buf, window, self.action_values, cfg.discount_factor)

        weight_of = {
            "actor": cfg.actor_weight, "critic": cfg.critic_weight,
            "entropy": cfg.entropy_weight, "offpolicy_critic": cfg.offpolicy_critic_weight,
            "pixel_control": cfg.pixel_control_weight,
            "reward_prediction": cfg.reward_prediction_weight,
            "depth": cfg.depth_weight, "obs_seg": cfg.obs_seg_weight,
            "target_seg": cfg.target_seg_weight,
        }
        for name, value in losses.items():
            if not torch.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {name}={float(value.detach())} at frame {self.frames}")
        total = sum(weight_of[name] * value for name, value in losses.items())

        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        grad_norm = clip_gradients(self.model.parameters(), cfg.max_gradient_norm)
        lr = lr_schedule(self.frames, cfg.max_frames, cfg.learning_rate)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.step()
        self.state = self.model.detach_state(self.state)
        self.iteration += 1

        recent = self.completed_episodes[-25:]
        metrics = {
            "frames": self.frames,
            "iteration": self.iteration,
            "learning_rate": lr,
            "tau": self.tau_fn(self.frames),
            "loss_total": float(total.detach()),
            "grad_norm": grad_norm,
            "episodes_done": self.episodes_done,
            "mean_episode_length": float(np.mean([e[0] for e in recent])) if recent else math.nan,
            "mean_episode_return": float(np.mean([e[1] for e in recent])) if recent else math.nan,
        }
        for name in weight_of:
            metrics[f"loss_{name}"] = float(losses[name].detach()) if name in losses else math.nan
        return metrics

    def _sample_ready_window(self):
        ready = [b for b in self.buffers if len(b) >= 3]
        if not ready:
            return None
        buf = ready[int(self.rng.integers(len(ready)))]
        w = aux.sample_window(buf, self.rng, self.config.max_rollout_length)
        return (buf, w) if w is not None else None
