"""Actor-critic network with a siamese convolutional base and auxiliary heads.

The observation and target images pass through one weight-shared stream of
convolutions each; the two maps are concatenated and refined by further
convolutions and a fully-connected layer. A recurrent core (LSTM, or a linear
layer over the last four frames for the frame-stack variant) consumes the
convolutional features together with the previous action (one-hot) and the
previous reward (clipped to [-1, 1]). Heads: softmax actor, scalar critic,
dueling per-cell Q map for pixel control, deconvolutional depth and
segmentation predictors, and a 3-class reward-sign classifier over three
stacked observation-stream features.

Downsampling is by stride only; there are no pooling layers.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .world import Action

ONEHOT_DIM = len(Action)  # previous-action encoding is always over the full set


def conv_out(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def deconv_out(size: int, k: int, s: int, p: int, op: int = 0) -> int:
    return (size - 1) * s - 2 * p + k + op


@dataclass(frozen=True)
class ModelConfig:
    frame_hw: int = 84
    n_actions: int = 8
    in_channels: int = 3
    # (out_channels, kernel, stride, padding) per layer
    stream_convs: tuple = ((16, 8, 4, 0), (32, 4, 2, 0))
    merged_convs: tuple = ((32, 3, 1, 1), (32, 3, 1, 1))
    fc_dim: int = 256
    core: str = "lstm"  # "lstm" | "framestack"
    lstm_dim: int = 256
    framestack_n: int = 4
    downsize: int = 4
    # pixel-control head: FC to a small spatial map, then one deconv per branch
    pc_base_hw: int = 7
    pc_base_ch: int = 32
    pc_deconv: tuple = (3, 3, 0, 0)  # (kernel, stride, padding, output_padding)
    # auxiliary predictors: two deconvs each, ReLU in between
    seg_mid_ch: int = 64
    depth_mid_ch: int = 32
    aux_deconv1: tuple = (4, 2, 1, 0)
    aux_deconv2: tuple = (4, 1, 0, 0)

    def stream_out_hw(self) -> int:
        hw = self.frame_hw
        for (_, k, s, p) in self.stream_convs:
            hw = conv_out(hw, k, s, p)
        return hw

    def merged_out_hw(self) -> int:
        hw = self.stream_out_hw()
        for (_, k, s, p) in self.merged_convs:
            hw = conv_out(hw, k, s, p)
        return hw

    def validate(self) -> None:
        if self.frame_hw % self.downsize:
            raise ValueError("frame_hw must be divisible by the downsize factor")
        small = self.frame_hw // self.downsize
        hw = self.merged_out_hw()
        if hw < 1:
            raise ValueError("convolution stack collapses below 1x1")
        a1 = deconv_out(hw, *self.aux_deconv1)
        a2 = deconv_out(a1, *self.aux_deconv2)
        if a2 != small:
            raise ValueError(f"aux head output {a2} != frame_hw/downsize {small}")
        q = deconv_out(self.pc_base_hw, *self.pc_deconv)
        if q != small:
            raise ValueError(f"pixel control output {q} != frame_hw/downsize {small}")
        if self.core not in ("lstm", "framestack"):
            raise ValueError(f"unknown core {self.core!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "ModelConfig":
        d = json.loads(s)
        for key in ("stream_convs", "merged_convs", "pc_deconv", "aux_deconv1", "aux_deconv2"):
            d[key] = tuple(tuple(x) if isinstance(x, list) else x for x in d[key]) \
                if key in ("stream_convs", "merged_convs") else tuple(d[key])
        return cls(**d)


def model_config_for(frame_hw: int, n_actions: int, core: str = "lstm") -> ModelConfig:
    """Preset shape configurations for the supported input resolutions."""
    if frame_hw == 84:
        cfg = ModelConfig(frame_hw=84, n_actions=n_actions, core=core)
    elif frame_hw == 64:
        cfg = ModelConfig(
            frame_hw=64, n_actions=n_actions, core=core,
            pc_base_hw=4, pc_deconv=(4, 4, 0, 0),
            aux_deconv1=(4, 2, 1, 0), aux_deconv2=(5, 1, 0, 0),
        )
    elif frame_hw == 8:
        cfg = tiny_model_config(n_actions, core=core)
    else:
        raise ValueError(f"no preset for frame_hw={frame_hw}; build a ModelConfig directly")
    cfg.validate()
    return cfg


def tiny_model_config(n_actions: int = 6, core: str = "lstm") -> ModelConfig:
    """Small double-precision-friendly instance used for gradient checking."""
    return ModelConfig(
        frame_hw=8, n_actions=n_actions,
        stream_convs=((4, 4, 4, 0), (8, 3, 1, 1)),
        merged_convs=((8, 3, 1, 1), (8, 3, 1, 1)),
        fc_dim=16, lstm_dim=4, core=core,
        pc_base_hw=1, pc_base_ch=4, pc_deconv=(2, 2, 0, 0),
        seg_mid_ch=8, depth_mid_ch=4,
        aux_deconv1=(3, 1, 1, 0), aux_deconv2=(3, 1, 1, 0),
    )


def _deconv(in_ch, out_ch, spec):
    k, s, p, op = spec
    return nn.ConvTranspose2d(in_ch, out_ch, k, stride=s, padding=p, output_padding=op)


class NavModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg

        convs = []
        ch = cfg.in_channels
        for (out, k, s, p) in cfg.stream_convs:
            convs.append(nn.Conv2d(ch, out, k, stride=s, padding=p))
            ch = out
        self.stream = nn.ModuleList(convs)
        self.stream_out_ch = ch

        merged = []
        ch = 2 * self.stream_out_ch
        for (out, k, s, p) in cfg.merged_convs:
            merged.append(nn.Conv2d(ch, out, k, stride=s, padding=p))
            ch = out
        self.merged = nn.ModuleList(merged)
        self.map_ch = ch
        self.map_hw = cfg.merged_out_hw()

        self.fc = nn.Linear(self.map_ch * self.map_hw * self.map_hw, cfg.fc_dim)

        core_in = cfg.fc_dim + ONEHOT_DIM + 1
        self.core_in_dim = core_in
        if cfg.core == "lstm":
            self.lstm = nn.LSTMCell(core_in, cfg.lstm_dim)
            nn.init.orthogonal_(self.lstm.weight_hh)
        else:
            self.stack_fc = nn.Linear(core_in * cfg.framestack_n, cfg.lstm_dim)

        self.actor = nn.Linear(cfg.lstm_dim, cfg.n_actions)
        self.critic = nn.Linear(cfg.lstm_dim, 1)

        self.pc_fc = nn.Linear(cfg.lstm_dim, cfg.pc_base_ch * cfg.pc_base_hw ** 2)
        self.pc_value = _deconv(cfg.pc_base_ch, 1, cfg.pc_deconv)
        self.pc_adv = _deconv(cfg.pc_base_ch, cfg.n_actions, cfg.pc_deconv)

        self.depth_head = nn.Sequential(
            _deconv(self.map_ch, cfg.depth_mid_ch, cfg.aux_deconv1), nn.ReLU(),
            _deconv(cfg.depth_mid_ch, 1, cfg.aux_deconv2),
        )
        self.obs_seg_head = nn.Sequential(
            _deconv(self.map_ch, cfg.seg_mid_ch, cfg.aux_deconv1), nn.ReLU(),
            _deconv(cfg.seg_mid_ch, 3, cfg.aux_deconv2),
        )
        self.target_seg_head = nn.Sequential(
            _deconv(self.map_ch, cfg.seg_mid_ch, cfg.aux_deconv1), nn.ReLU(),
            _deconv(cfg.seg_mid_ch, 3, cfg.aux_deconv2),
        )

        stream_flat = self.stream_out_ch * cfg.stream_out_hw() ** 2
        self.rp_fc = nn.Linear(3 * stream_flat, 3)

    # -- convolutional base ------------------------------------------------

    def stream_forward(self, x: torch.Tensor) -> torch.Tensor:
        """One weight-shared stream: (B, C, H, W) -> (B, ch, h, w)."""
        for conv in self.stream:
            x = F.relu(conv(x))
        return x

    def conv_base(self, obs: torch.Tensor, target: torch.Tensor):
        """Returns (spatial map for aux heads, feature vector for the core)."""
        a = self.stream_forward(obs)
        b = self.stream_forward(target)
        x = torch.cat([a, b], dim=1)
        for conv in self.merged:
            x = F.relu(conv(x))
        vec = F.relu(self.fc(x.flatten(1)))
        return x, vec

    # -- recurrent core ----------------------------------------------------

    def initial_state(self, batch: int, device=None, dtype=None):
        dtype = dtype or next(self.parameters()).dtype
        if self.cfg.core == "lstm":
            z = torch.zeros(batch, self.cfg.lstm_dim, device=device, dtype=dtype)
            return (z, z.clone())
        z = torch.zeros(batch, self.cfg.framestack_n, self.core_in_dim, device=device, dtype=dtype)
        return (z,)

    @staticmethod
    def mask_state(state, keep: torch.Tensor):
        """Zero state entries where keep == 0 (episode boundaries)."""
        out = []
        for s in state:
            k = keep.to(s.dtype).reshape(-1, *([1] * (s.dim() - 1)))
            out.append(s * k)
        return tuple(out)

    @staticmethod
    def detach_state(state):
        return tuple(s.detach() for s in state)

    def core_step(self, vec, prev_action_onehot, prev_reward, state):
        """One core step; prev_reward is clipped to [-1, 1] before entering."""
        r = torch.clamp(prev_reward, -1.0, 1.0).reshape(-1, 1).to(vec.dtype)
        x = torch.cat([vec, prev_action_onehot.to(vec.dtype), r], dim=1)
        if self.cfg.core == "lstm":
            h, c = self.lstm(x, state)
            return h, (h, c)
        stack = torch.cat([state[0][:, 1:], x.unsqueeze(1)], dim=1)
        phi = F.relu(self.stack_fc(stack.flatten(1)))
        return phi, (stack,)

    # -- heads ---------------------------------------------------------------

    def actor_logits(self, phi: torch.Tensor) -> torch.Tensor:
        return self.actor(phi)

    def policy_probs(self, phi: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.actor(phi), dim=-1)

    def critic_value(self, phi: torch.Tensor) -> torch.Tensor:
        return self.critic(phi).squeeze(-1)

    def pixel_control_q(self, phi: torch.Tensor) -> torch.Tensor:
        """Dueling per-cell Q map: (B, n_actions, hw/4, hw/4)."""
        b = phi.shape[0]
        base = F.relu(self.pc_fc(phi)).reshape(b, self.cfg.pc_base_ch,
                                               self.cfg.pc_base_hw, self.cfg.pc_base_hw)
        v = self.pc_value(base)
        a = self.pc_adv(base)
        return v + a - a.mean(dim=1, keepdim=True)

    def aux_predictions(self, spatial_map: torch.Tensor):
        """(depth, obs_seg, target_seg) maps at 1/downsize resolution."""
        return (
            self.depth_head(spatial_map),
            self.obs_seg_head(spatial_map),
            self.target_seg_head(spatial_map),
        )

    def rp_logits(self, frames: torch.Tensor) -> torch.Tensor:
        """Reward-sign logits from three stacked observations (B, 3, C, H, W).

        Classes: 0 = zero, 1 = positive, 2 = negative.
        """
        b = frames.shape[0]
        feats = self.stream_forward(frames.reshape(b * 3, *frames.shape[2:]))
        return self.rp_fc(feats.reshape(b, -1))


def onehot_actions(action_values, dtype=torch.float32) -> torch.Tensor:
    """One-hot over the full action enum; -1 encodes 'no previous action'."""
    idx = torch.as_tensor(action_values, dtype=torch.long)
    out = torch.zeros(*idx.shape, ONEHOT_DIM, dtype=dtype)
    valid = idx >= 0
    if valid.any():
        out[valid] = F.one_hot(idx[valid], ONEHOT_DIM).to(dtype)
    return out


def flat_parameters(model: nn.Module) -> torch.Tensor:
    """Flat copy of all parameters (gradient-check utility)."""
    return torch.cat([p.detach().reshape(-1) for p in model.parameters()])


def set_flat_parameters(model: nn.Module, flat: torch.Tensor) -> None:
    i = 0
    with torch.no_grad():
        for p in model.parameters():
            n = p.numel()
            p.copy_(flat[i:i + n].reshape(p.shape))
            i += n
    if i != flat.numel():
        raise ValueError("flat vector size mismatch")
