"""Finite-difference gradient verification for every loss term.

Builds a tiny double-precision model (8x8 inputs, 4 recurrent units) and a
frozen synthetic batch, then compares autograd gradients of each loss term
against central finite differences over the full flat parameter vector.

Terms whose real implementations stop gradients through bootstrapped
quantities (advantages, replayed returns, pixel-control targets) are checked
through closures with those quantities frozen at the base parameters; at the
base point the closure agrees with the real implementation in both value and
gradient (asserted where applicable), so the check covers the shipped code
path.
"""
import numpy as np
import torch

from navrl import auxiliary as aux
from navrl.a2c import actor_loss, critic_loss, entropy_loss, n_step_returns
from navrl.model import (
    NavModel,
    flat_parameters,
    onehot_actions,
    set_flat_parameters,
    tiny_model_config,
)

HW = 8
N_ACTIONS = 6
ACTION_VALUES = np.arange(N_ACTIONS, dtype=np.int64)


def build_tiny_model(seed=0) -> NavModel:
    torch.manual_seed(seed)
    model = NavModel(tiny_model_config(n_actions=N_ACTIONS)).double()
    return model


def _rollout_batch(rng, L=3, k=2):
    batch = {
        "obs": rng.random((L, k, HW, HW, 3)),
        "tgt": rng.random((L, k, HW, HW, 3)),
        "prev_action": rng.integers(-1, N_ACTIONS, size=(L, k)),
        "prev_reward": rng.normal(size=(L, k)) * 0.5,
        "begin": np.zeros((L, k), dtype=bool),
        "action": rng.integers(0, N_ACTIONS, size=(L, k)),
        "reward": rng.normal(size=(L, k)),
        "terminal": np.zeros((L, k), dtype=bool),
    }
    batch["begin"][0, :] = True
    batch["begin"][2, 1] = True
    batch["terminal"][1, 1] = True
    return batch


def _rollout_forward(model, batch):
    L, k = batch["obs"].shape[:2]
    obs = torch.from_numpy(batch["obs"].reshape(L * k, HW, HW, 3)).permute(0, 3, 1, 2)
    tgt = torch.from_numpy(batch["tgt"].reshape(L * k, HW, HW, 3)).permute(0, 3, 1, 2)
    spatial, vec = model.conv_base(obs, tgt)
    vec = vec.reshape(L, k, -1)
    state = model.initial_state(k)
    phis = []
    for t in range(L):
        keep = torch.from_numpy(~batch["begin"][t]).double()
        state = model.mask_state(state, keep)
        onehots = onehot_actions(batch["prev_action"][t], dtype=torch.double)
        phi, state = model.core_step(vec[t], onehots,
                                     torch.from_numpy(batch["prev_reward"][t]), state)
        phis.append(phi)
    phi = torch.stack(phis)
    log_probs = torch.log_softmax(model.actor_logits(phi), dim=-1)
    values = model.critic_value(phi)
    return spatial, log_probs, values


def _replay_window(rng, L=4):
    buf = aux.ReplayBuffer(16, HW)
    buf.target_rgb[0] = (rng.random((HW, HW, 3)) * 255).astype(np.uint8)
    for i in range(L + 2):
        buf.append((rng.random((HW, HW, 3)) * 255).astype(np.uint8), 0,
                   int(rng.integers(N_ACTIONS)), float(rng.normal()),
                   i == 2, i == 0 or i == 3)
    return buf, buf.window(1, L + 1)


def build_loss_closures(model, seed=0):
    """Returns {name: loss_fn()} pure in the model parameters."""
    rng = np.random.default_rng(seed)
    batch = _rollout_batch(rng)
    L, k = batch["obs"].shape[:2]

    with torch.no_grad():
        _, log_probs0, values0 = _rollout_forward(model, batch)
    bootstrap = values0[-1].numpy() * 0.9 + 0.1  # arbitrary fixed bootstrap
    returns = n_step_returns(batch["reward"], batch["terminal"], 0.99, bootstrap)
    returns_t = torch.from_numpy(returns)
    advantages = (returns_t - values0).reshape(-1)  # frozen at base params
    actions_t = torch.from_numpy(batch["action"])

    def loss_actor():
        _, log_probs, _ = _rollout_forward(model, batch)
        taken = log_probs.gather(2, actions_t.unsqueeze(2)).squeeze(2)
        return actor_loss(taken.reshape(-1), advantages)

    def loss_critic():
        _, _, values = _rollout_forward(model, batch)
        return critic_loss(values.reshape(-1), returns_t.reshape(-1))

    def loss_entropy():
        _, log_probs, _ = _rollout_forward(model, batch)
        return entropy_loss(log_probs.reshape(-1, N_ACTIONS))

    # replayed critic: freeze the bootstrapped returns at the base parameters
    buf_v, win_v = _replay_window(rng)
    Lw = len(win_v["action"]) - 1
    with torch.no_grad():
        phi0 = aux.replay_features(model, buf_v, win_v, ACTION_VALUES)
        v0 = model.critic_value(phi0)
    g_off = torch.from_numpy(n_step_returns(win_v["reward"][:Lw], win_v["terminal"][:Lw],
                                            0.99, float(v0[Lw])))

    def loss_offpolicy_critic():
        phi = aux.replay_features(model, buf_v, win_v, ACTION_VALUES)
        values = model.critic_value(phi)
        return (0.5 * (g_off - values[:Lw]) ** 2).mean()

    # pixel control: freeze the per-cell targets at the base parameters
    buf_p, win_p = _replay_window(rng)
    Lp = len(win_p["action"]) - 1
    with torch.no_grad():
        phi0 = aux.replay_features(model, buf_p, win_p, ACTION_VALUES)
        q0 = model.pixel_control_q(phi0)
    obs_p = win_p["obs"].astype(np.float32) / 255.0  # same dtype path as the real loss
    g = q0[Lp].max(dim=0).values
    pc_targets = [None] * Lp
    for i in reversed(range(Lp)):
        r = aux.pixel_change_rewards(obs_p[i], obs_p[i + 1])
        if win_p["terminal"][i]:
            r = np.zeros_like(r)
            g = torch.zeros_like(g)
        g = torch.from_numpy(r).to(g.dtype) + 0.9 * g
        pc_targets[i] = g
    pc_target = torch.stack(pc_targets)

    def loss_pixel_control():
        phi = aux.replay_features(model, buf_p, win_p, ACTION_VALUES)
        q = model.pixel_control_q(phi)
        taken = q[torch.arange(Lp), torch.as_tensor(win_p["action"][:Lp], dtype=torch.long)]
        return ((taken - pc_target) ** 2).sum(dim=(1, 2)).mean()

    rp_frames = torch.from_numpy(rng.random((3, 3, 3, HW, HW)))
    rp_labels = torch.tensor([0, 1, 2])

    def loss_reward_prediction():
        logits = model.rp_logits(rp_frames)
        return torch.nn.functional.cross_entropy(logits, rp_labels)

    obs_flat = torch.from_numpy(batch["obs"].reshape(L * k, HW, HW, 3)).permute(0, 3, 1, 2)
    tgt_flat = torch.from_numpy(batch["tgt"].reshape(L * k, HW, HW, 3)).permute(0, 3, 1, 2)
    small = HW // 4
    depth_t = torch.from_numpy(rng.random((L * k, 1, small, small)))
    seg_t1 = torch.from_numpy(rng.random((L * k, 3, small, small)))
    seg_t2 = torch.from_numpy(rng.random((L * k, 3, small, small)))

    def loss_depth():
        return aux.vn_aux_losses(model, obs_flat, tgt_flat, depth_t, seg_t1, seg_t2)[0]

    def loss_obs_seg():
        return aux.vn_aux_losses(model, obs_flat, tgt_flat, depth_t, seg_t1, seg_t2)[1]

    def loss_target_seg():
        return aux.vn_aux_losses(model, obs_flat, tgt_flat, depth_t, seg_t1, seg_t2)[2]

    closures = {
        "actor": loss_actor,
        "critic": loss_critic,
        "entropy": loss_entropy,
        "offpolicy_critic": loss_offpolicy_critic,
        "pixel_control": loss_pixel_control,
        "reward_prediction": loss_reward_prediction,
        "depth": loss_depth,
        "obs_seg": loss_obs_seg,
        "target_seg": loss_target_seg,
    }

    # the frozen closures must agree with the shipped loss functions at base
    real_off = aux.offpolicy_critic_loss(model, buf_v, win_v, ACTION_VALUES, 0.99)
    assert abs(float(real_off.detach()) - float(loss_offpolicy_critic().detach())) < 1e-10
    real_pc = aux.pixel_control_loss(model, buf_p, win_p, ACTION_VALUES, gamma_pc=0.9)
    assert abs(float(real_pc.detach()) - float(loss_pixel_control().detach())) < 1e-10

    return closures


def analytic_gradient(model, loss_fn) -> torch.Tensor:
    model.zero_grad(set_to_none=True)
    loss_fn().backward()
    grads = []
    for p in model.parameters():
        grads.append(p.grad.reshape(-1) if p.grad is not None
                     else torch.zeros(p.numel(), dtype=p.dtype))
    model.zero_grad(set_to_none=True)
    return torch.cat(grads)


def finite_difference_gradient(model, loss_fn, h=1e-5) -> torch.Tensor:
    base = flat_parameters(model).clone()
    grad = torch.zeros_like(base)
    work = base.clone()
    with torch.no_grad():
        for i in range(base.numel()):
            work[i] = base[i] + h
            set_flat_parameters(model, work)
            up = float(loss_fn())
            work[i] = base[i] - h
            set_flat_parameters(model, work)
            down = float(loss_fn())
            grad[i] = (up - down) / (2 * h)
            work[i] = base[i]
    set_flat_parameters(model, base)
    return grad


def max_relative_error(a: torch.Tensor, b: torch.Tensor, floor=1e-6) -> float:
    """Guarded relative error. The floor keeps components below the central-
    difference noise floor (~1e-11 absolute at h=1e-5) from dominating: for
    those, the comparison degrades to an absolute tolerance of tol * floor."""
    denom = torch.maximum(torch.maximum(a.abs(), b.abs()),
                          torch.full_like(a, floor))
    return float(((a - b).abs() / denom).max())


def run_gradcheck(h=1e-5, seed=0) -> dict:
    """max relative error per loss term; the full check used by acceptance."""
    model = build_tiny_model(seed)
    closures = build_loss_closures(model, seed)
    out = {}
    for name, fn in closures.items():
        analytic = analytic_gradient(model, fn)
        fd = finite_difference_gradient(model, fn, h=h)
        out[name] = max_relative_error(analytic, fd)
    return out
