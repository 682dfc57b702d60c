"""Experience replay and the off-policy auxiliary objectives.

One ring buffer per environment instance keeps the last n_e transitions as
(uint8 observation, target id, action index, reward, terminal, episode-begin).
Sampled windows are replayed through the network from a zero core state, so
stored recurrent states can never go stale under parameter drift.

Losses: 3-class reward-sign prediction (cross-entropy, class-balanced
sampling), per-cell pixel-control Q-learning with dueling heads, and the
replayed critic regression on bootstrapped n-step returns.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .model import NavModel, onehot_actions
from .renderer import downsample, to_grayscale

RP_ZERO, RP_POSITIVE, RP_NEGATIVE = 0, 1, 2


class ReplayBuffer:
    """FIFO ring of the last `capacity` transitions for one environment."""

    def __init__(self, capacity: int, frame_hw: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.frame_hw = frame_hw
        self.obs = np.zeros((capacity, frame_hw, frame_hw, 3), dtype=np.uint8)
        self.target_id = np.zeros(capacity, dtype=np.int32)
        self.action = np.zeros(capacity, dtype=np.int32)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.begin = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0          # ring slot receiving the next append
        self._appended = 0      # total appends ever (absolute indexing)
        self._nonzero: list[int] = []  # absolute indices with reward != 0
        self.target_rgb: dict[int, np.ndarray] = {}  # target_id -> (H, W, 3) uint8

    def __len__(self) -> int:
        return self.size

    def _slot(self, pos: int) -> int:
        """Ring slot of buffer position `pos` (0 = oldest)."""
        if not 0 <= pos < self.size:
            raise IndexError(pos)
        oldest = (self._next - self.size) % self.capacity
        return (oldest + pos) % self.capacity

    @property
    def base(self) -> int:
        """Absolute index of position 0."""
        return self._appended - self.size

    def append(self, obs_u8, target_id: int, action: int, reward: float,
               terminal: bool, begin: bool, target_rgb_u8=None) -> None:
        slot = self._next
        self.obs[slot] = obs_u8
        self.target_id[slot] = target_id
        self.action[slot] = action
        self.reward[slot] = reward
        self.terminal[slot] = terminal
        self.begin[slot] = begin
        if reward != 0.0:
            self._nonzero.append(self._appended)
        self._next = (self._next + 1) % self.capacity
        self._appended += 1
        self.size = min(self.size + 1, self.capacity)
        while self._nonzero and self._nonzero[0] < self.base:
            self._nonzero.pop(0)
        if target_rgb_u8 is not None and int(target_id) not in self.target_rgb:
            self.target_rgb[int(target_id)] = target_rgb_u8

    def nonzero_positions(self) -> list:
        """Positions (0 = oldest) of entries with non-zero reward."""
        return [a - self.base for a in self._nonzero]

    def window(self, start: int, length: int) -> dict:
        """Contiguous slice [start, start+length) as arrays (handles wrap)."""
        if start < 0 or length < 1 or start + length > self.size:
            raise IndexError(f"window [{start}, {start + length}) outside buffer of {self.size}")
        oldest = (self._next - self.size) % self.capacity
        idx = (oldest + np.arange(start, start + length)) % self.capacity
        return {
            "obs": self.obs[idx],
            "target_id": self.target_id[idx],
            "action": self.action[idx],
            "reward": self.reward[idx],
            "terminal": self.terminal[idx],
            "begin": self.begin[idx],
        }

    def save(self, path: str) -> None:
        from .blockfile import write_blockfile

        w = self.window(0, self.size) if self.size else {
            k: getattr(self, k)[:0] for k in ("obs", "target_id", "action", "reward", "terminal", "begin")
        }
        meta = {"kind": "replay_buffer", "capacity": self.capacity,
                "frame_hw": self.frame_hw, "size": self.size, "appended": self._appended}
        blocks = dict(w)
        for tid, rgb in self.target_rgb.items():
            blocks[f"target_rgb/{tid}"] = rgb
        write_blockfile(path, meta, blocks)

    @classmethod
    def load(cls, path: str) -> "ReplayBuffer":
        from .blockfile import read_blockfile

        meta, blocks = read_blockfile(path)
        if meta.get("kind") != "replay_buffer":
            raise ValueError("not a replay buffer snapshot")
        buf = cls(meta["capacity"], meta["frame_hw"])
        n = meta["size"]
        for i in range(n):
            buf.append(blocks["obs"][i], int(blocks["target_id"][i]), int(blocks["action"][i]),
                       float(blocks["reward"][i]), bool(blocks["terminal"][i]), bool(blocks["begin"][i]))
        buf._appended = meta["appended"]
        buf._nonzero = [buf.base + p for p, r in enumerate(blocks["reward"][:n]) if r != 0.0]
        for name, arr in blocks.items():
            if name.startswith("target_rgb/"):
                buf.target_rgb[int(name.split("/", 1)[1])] = arr
        return buf


@dataclass
class RpSample:
    obs: np.ndarray  # (3, H, W, 3) float32, consecutive within one episode
    label: int       # RP_ZERO / RP_POSITIVE / RP_NEGATIVE


def _rp_valid_end(buf: ReplayBuffer, w_term, w_begin, p: int) -> bool:
    # the three observations p-2, p-1, p must not straddle an episode boundary
    return not (w_term[p - 2] or w_term[p - 1] or w_begin[p - 1] or w_begin[p])


def sample_rp(buf: ReplayBuffer, rng: np.random.Generator):
    """Draw a reward-prediction sample, balancing reward classes 50/50.

    The sample ends with a non-zero reward with probability 0.5 when both
    classes are available; otherwise it falls back to whichever class exists.
    Returns None while the buffer has no valid 3-step sequence yet.
    """
    n = len(buf)
    if n < 3:
        return None
    term = buf.window(0, n)["terminal"]
    begin = buf.window(0, n)["begin"]
    reward = buf.window(0, n)["reward"]

    nz = [p for p in buf.nonzero_positions() if p >= 2 and _rp_valid_end(buf, term, begin, p)]
    want_nonzero = rng.random() < 0.5

    pick = None
    if want_nonzero and nz:
        pick = nz[int(rng.integers(len(nz)))]
    elif not want_nonzero:
        for _ in range(200):  # rejection sampling; zero rewards dominate in practice
            p = int(rng.integers(2, n))
            if reward[p] == 0.0 and _rp_valid_end(buf, term, begin, p):
                pick = p
                break
        if pick is None:
            zeros = [p for p in range(2, n)
                     if reward[p] == 0.0 and _rp_valid_end(buf, term, begin, p)]
            if zeros:
                pick = zeros[int(rng.integers(len(zeros)))]
    if pick is None:  # fall back to the other class
        if nz:
            pick = nz[int(rng.integers(len(nz)))]
        else:
            zeros = [p for p in range(2, n)
                     if reward[p] == 0.0 and _rp_valid_end(buf, term, begin, p)]
            if not zeros:
                return None
            pick = zeros[int(rng.integers(len(zeros)))]

    w = buf.window(pick - 2, 3)
    r = float(w["reward"][2])
    label = RP_ZERO if r == 0.0 else (RP_POSITIVE if r > 0 else RP_NEGATIVE)
    return RpSample(obs=w["obs"].astype(np.float32) / 255.0, label=label)


def reward_prediction_loss(model: NavModel, samples: list, device=None) -> torch.Tensor:
    """Cross-entropy of the reward-sign classifier over a batch of RpSamples."""
    frames = torch.from_numpy(np.stack([s.obs for s in samples]))  # (B, 3, H, W, 3)
    frames = frames.permute(0, 1, 4, 2, 3).contiguous().to(next(model.parameters()).dtype)
    labels = torch.tensor([s.label for s in samples], dtype=torch.long)
    logits = model.rp_logits(frames)
    return F.cross_entropy(logits, labels)


def pixel_change_rewards(obs_t: np.ndarray, obs_tp1: np.ndarray, factor: int = 4) -> np.ndarray:
    """Per-cell pseudo-reward: |block-mean grayscale difference| of two frames."""
    a = downsample(to_grayscale(obs_t), factor)
    b = downsample(to_grayscale(obs_tp1), factor)
    return np.abs(a - b)


def sample_window(buf: ReplayBuffer, rng: np.random.Generator, max_len: int):
    """Random contiguous window of up to max_len+1 entries (incl. bootstrap)."""
    n = len(buf)
    if n < 3:
        return None
    length = int(min(max_len + 1, n))
    start = int(rng.integers(0, n - length + 1))
    return buf.window(start, length)


def _window_core_inputs(buf: ReplayBuffer, w: dict, action_values: np.ndarray):
    """Model inputs for a replayed window: the first entry is treated as an
    episode start (zero state, zero previous action/reward)."""
    L = len(w["action"])
    obs = w["obs"].astype(np.float32) / 255.0
    target = np.stack([buf.target_rgb[int(t)] for t in w["target_id"]]).astype(np.float32) / 255.0
    begin = w["begin"].copy()
    begin[0] = True
    prev_action = np.empty(L, dtype=np.int64)
    prev_reward = np.zeros(L, dtype=np.float32)
    prev_action[0] = -1
    for i in range(1, L):
        if begin[i]:
            prev_action[i] = -1
            prev_reward[i] = 0.0
        else:
            prev_action[i] = action_values[w["action"][i - 1]]
            prev_reward[i] = w["reward"][i - 1]
    return obs, target, begin, prev_action, prev_reward


def replay_features(model: NavModel, buf: ReplayBuffer, w: dict,
                    action_values: np.ndarray) -> torch.Tensor:
    """Recurrent features for each window entry, replayed from a zero state.

    `action_values` maps policy action indices to full-enum values for the
    one-hot previous-action input.
    """
    obs, target, begin, prev_action, prev_reward = _window_core_inputs(buf, w, action_values)
    dtype = next(model.parameters()).dtype
    obs_t = torch.from_numpy(obs).permute(0, 3, 1, 2).to(dtype)
    tgt_t = torch.from_numpy(target).permute(0, 3, 1, 2).to(dtype)
    _, vec = model.conv_base(obs_t, tgt_t)
    L = vec.shape[0]
    state = model.initial_state(1, dtype=dtype)
    onehots = onehot_actions(prev_action, dtype=dtype)
    phis = []
    for i in range(L):
        if begin[i]:
            state = model.mask_state(state, torch.zeros(1))
        phi, state = model.core_step(vec[i:i + 1], onehots[i:i + 1],
                                     torch.tensor([prev_reward[i]]), state)
        phis.append(phi)
    return torch.cat(phis, dim=0)


def pixel_control_loss(model: NavModel, buf: ReplayBuffer, w: dict,
                       action_values: np.ndarray, gamma_pc: float = 0.9,
                       factor: int = 4) -> torch.Tensor:
    """n-step Q-learning on per-cell pixel-change pseudo-rewards.

    The window's last entry only provides the bootstrap max_a Q (zero across
    terminals); pseudo-rewards at terminal steps are zeroed because the frame
    after a reset belongs to a different episode.
    """
    L = len(w["action"]) - 1
    if L < 1:
        raise ValueError("pixel control needs at least 2 window entries")
    phi = replay_features(model, buf, w, action_values)
    q = model.pixel_control_q(phi)  # (L+1, A, h, w)

    obs = w["obs"].astype(np.float32) / 255.0
    rewards = np.stack([
        np.zeros_like(pixel_change_rewards(obs[0], obs[1], factor))
        if w["terminal"][i] else pixel_change_rewards(obs[i], obs[i + 1], factor)
        for i in range(L)
    ])
    bootstrap = q[L].max(dim=0).values.detach()
    g = bootstrap
    targets = [None] * L
    for i in reversed(range(L)):
        r = torch.from_numpy(rewards[i]).to(g.dtype)
        cont = 0.0 if w["terminal"][i] else 1.0
        g = r + gamma_pc * cont * g
        targets[i] = g
    target = torch.stack(targets)
    taken = q[torch.arange(L), torch.as_tensor(w["action"][:L], dtype=torch.long)]
    return ((taken - target) ** 2).sum(dim=(1, 2)).mean()


def offpolicy_critic_loss(model: NavModel, buf: ReplayBuffer, w: dict,
                          action_values: np.ndarray, gamma: float) -> torch.Tensor:
    """Critic regression on bootstrapped n-step returns over a replayed window.

    The actor head is not part of this graph, so it receives no gradient.
    """
    from .a2c import n_step_returns

    L = len(w["action"]) - 1
    if L < 1:
        raise ValueError("off-policy critic needs at least 2 window entries")
    phi = replay_features(model, buf, w, action_values)
    values = model.critic_value(phi)  # (L+1,)
    bootstrap = values[L].detach().item()
    g = n_step_returns(w["reward"][:L], w["terminal"][:L], gamma, bootstrap)
    g_t = torch.from_numpy(g).to(values.dtype)
    return (0.5 * (g_t - values[:L]) ** 2).mean()


def vn_aux_losses(model: NavModel, obs_rgb: torch.Tensor, target_rgb: torch.Tensor,
                  depth_target: torch.Tensor, obs_seg_target: torch.Tensor,
                  target_seg_target: torch.Tensor):
    """MSE of the three vision heads against downsampled ground truth.

    Targets are (B, 1|3, h, w); depth must already be normalized to [0, 1].
    """
    spatial, _ = model.conv_base(obs_rgb, target_rgb)
    depth_pred, obs_seg_pred, target_seg_pred = model.aux_predictions(spatial)
    return (
        F.mse_loss(depth_pred, depth_target),
        F.mse_loss(obs_seg_pred, obs_seg_target),
        F.mse_loss(target_seg_pred, target_seg_target),
    )
