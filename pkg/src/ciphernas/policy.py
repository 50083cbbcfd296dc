"""Search space, categorical policy, and the REINFORCE update.

The policy is a set of independent per-decision logit tables (the
simplest parameterization consistent with the Monte-Carlo policy
gradient; a conditioning hook is left in `sample` via the mask
argument).  Updates are plain SGD on the logits with the softmax
gradient in closed form; the baseline is an exponential moving average
of rewards (a batch-mean mode exists for exact translation invariance).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .model import LinearLayer, Network, NonLinearLayer


@dataclass(frozen=True)
class Decision:
    name: str
    choices: tuple
    arch: bool = False   # architecture decision (pinned while SW is off)


@dataclass(frozen=True)
class ConvSlot:
    filters: tuple
    kernels: tuple       # (f_h, f_w) pairs
    l_i: tuple
    l_f: tuple


@dataclass(frozen=True)
class PoolSlot:
    window: int = 2


@dataclass(frozen=True)
class FcSlot:
    l_i: tuple
    l_f: tuple


@dataclass(frozen=True)
class SearchSpace:
    slots: tuple
    input_hw: tuple = (32, 32)
    input_channels: int = 3
    classes: int = 10

    def decisions(self) -> list:
        out = []
        for si, slot in enumerate(self.slots):
            if isinstance(slot, ConvSlot):
                out.append(Decision(f"slot{si}.filters", tuple(slot.filters), arch=True))
                out.append(Decision(f"slot{si}.kernel", tuple(slot.kernels), arch=True))
                out.append(Decision(f"slot{si}.l_i", tuple(slot.l_i)))
                out.append(Decision(f"slot{si}.l_f", tuple(slot.l_f)))
            elif isinstance(slot, FcSlot):
                out.append(Decision(f"slot{si}.l_i", tuple(slot.l_i)))
                out.append(Decision(f"slot{si}.l_f", tuple(slot.l_f)))
            elif isinstance(slot, PoolSlot):
                pass
            else:
                raise TypeError(f"unknown slot {type(slot).__name__}")
        if not out:
            raise ValueError("search space has no decisions")
        for d in out:
            if len(d.choices) < 1:
                raise ValueError(f"decision {d.name} has no choices")
        return out


@dataclass(frozen=True)
class PolicyConfig:
    lr: float = 0.05
    gamma: float = 1.0
    ema_decay: float = 0.9
    batch: int = 5
    baseline_mode: str = "ema"   # or "batch_mean"

    def check(self) -> list:
        out = []
        if self.lr <= 0:
            out.append("lr must be > 0")
        if not 0.0 < self.gamma <= 1.0:
            out.append("gamma must lie in (0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            out.append("ema_decay must lie in [0, 1)")
        if self.batch < 1:
            out.append("batch must be >= 1")
        if self.baseline_mode not in ("ema", "batch_mean"):
            out.append(f"unknown baseline_mode {self.baseline_mode!r}")
        return out


@dataclass(frozen=True)
class PolicyState:
    logits: tuple            # one float64 vector per decision
    baseline: float = 0.0

    @classmethod
    def initial(cls, decisions: Sequence[Decision]) -> "PolicyState":
        return cls(logits=tuple(np.zeros(len(d.choices)) for d in decisions))

    def probs(self, idx: int) -> np.ndarray:
        return softmax(self.logits[idx])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    return z - math.log(np.exp(z).sum())


def sample(policy: PolicyState, decisions: Sequence[Decision],
           rng: np.random.Generator, mask: Optional[Sequence[bool]] = None,
           pinned: Optional[Sequence[int]] = None) -> tuple:
    """One categorical draw per decision from softmax(logits).

    Decisions where `mask` is False are not drawn: their action comes
    from `pinned` and they carry no log-probability (the conditioning
    hook used by the SW schedule).  Returns (actions, log_probs) with
    log_probs None at pinned positions.
    """
    actions = []
    log_probs = []
    for i, d in enumerate(decisions):
        if mask is not None and not mask[i]:
            actions.append(int(pinned[i]))
            log_probs.append(None)
            continue
        lp = log_softmax(policy.logits[i])
        a = int(rng.choice(len(d.choices), p=softmax(policy.logits[i])))
        actions.append(a)
        log_probs.append(float(lp[a]))
    return actions, log_probs


class DecodeRejection(Exception):
    """Structured rejection: the sampled actions produce an invalid
    architecture (the episode scores reward 0)."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


def decode(actions: Sequence[int], space: SearchSpace, episode_id: int,
           sw_n: int) -> Network:
    """Fill the template, propagating dimensions layer to layer.

    sw_flag follows the retrain schedule: on when episode_id is a
    multiple of the window length."""
    decisions = space.decisions()
    if len(actions) != len(decisions):
        raise ValueError(f"expected {len(decisions)} actions, got {len(actions)}")
    values = {}
    for d, a in zip(decisions, actions):
        if not 0 <= a < len(d.choices):
            raise ValueError(f"action {a} out of range for {d.name}")
        values[d.name] = d.choices[a]
    h, w = space.input_hw
    channels = space.input_channels
    layers = []
    for si, slot in enumerate(space.slots):
        if isinstance(slot, ConvSlot):
            f_h, f_w = values[f"slot{si}.kernel"]
            c_o = values[f"slot{si}.filters"]
            l_i = values[f"slot{si}.l_i"]
            l_f = values[f"slot{si}.l_f"]
            if f_h > h or f_w > w:
                raise DecodeRejection(
                    f"slot {si}: filter {f_h}x{f_w} larger than feature map {h}x{w}")
            if h != w:
                raise DecodeRejection(f"slot {si}: non-square feature map {h}x{w}")
            n = h * w
            layers.append(LinearLayer("Conv", n_i=n, n_o=n, f_w=f_w, f_h=f_h,
                                      l_i=l_i, l_f=l_f, c_i=channels, c_o=c_o))
            layers.append(NonLinearLayer("ReLU", n_i=n, n_o=n, l_i=l_i, l_o=l_i,
                                         c_i=c_o))
            channels = c_o
        elif isinstance(slot, PoolSlot):
            if h < slot.window or h % slot.window or w % slot.window:
                raise DecodeRejection(
                    f"slot {si}: cannot pool {h}x{w} by {slot.window}")
            n = h * w
            layers.append(NonLinearLayer("AvgPool", n_i=n,
                                         n_o=n // (slot.window * slot.window),
                                         l_i=8, l_o=8, c_i=channels,
                                         window=slot.window))
            h //= slot.window
            w //= slot.window
        elif isinstance(slot, FcSlot):
            n_in = h * w * channels
            l_i = values[f"slot{si}.l_i"]
            l_f = values[f"slot{si}.l_f"]
            layers.append(LinearLayer("FC", n_i=n_in, n_o=space.classes,
                                      f_w=n_in, f_h=1, l_i=l_i, l_f=l_f,
                                      c_i=1, c_o=1))
    return Network(layers=tuple(layers), episode_id=episode_id,
                   sw_flag=(episode_id % sw_n == 0))


def reward(a: float, xi_shaped: float) -> float:
    """R = A + A * xi_shaped: accuracy, boosted by the shaped
    performance score."""
    if not 0.0 <= a <= 1.0:
        raise ValueError("accuracy must lie in [0, 1]")
    return a + a * xi_shaped


@dataclass(frozen=True)
class EpisodeSample:
    """What the policy update needs from one completed episode."""
    actions: tuple
    reward: float
    sampled: Optional[tuple] = None   # bool per decision; None = all drawn


def update(policy: PolicyState, batch: Sequence[EpisodeSample],
           cfg: PolicyConfig) -> PolicyState:
    """Monte-Carlo policy-gradient ascent step.

    grad J = (1/m) sum_k sum_tau gamma^(t-tau) * grad log pi(a_tau) *
    (R_k - b), with the softmax gradient in closed form.  The baseline
    is then refreshed from the batch rewards.
    """
    m = len(batch)
    if m < 1:
        raise ValueError("batch must contain at least one episode")
    rewards = [ep.reward for ep in batch]
    mean_r = sum(rewards) / m
    b_used = policy.baseline if cfg.baseline_mode == "ema" else mean_r
    t = len(policy.logits)
    grads = [np.zeros_like(l) for l in policy.logits]
    for ep in batch:
        adv = ep.reward - b_used
        for tau in range(t):
            if ep.sampled is not None and not ep.sampled[tau]:
                continue
            weight = cfg.gamma ** (t - 1 - tau)  # gamma^(t-tau), tau 1-based
            p = softmax(policy.logits[tau])
            g = -p
            g[ep.actions[tau]] += 1.0
            grads[tau] += weight * adv * g
    new_logits = tuple(l + cfg.lr * g / m for l, g in zip(policy.logits, grads))
    if cfg.baseline_mode == "ema":
        new_b = cfg.ema_decay * policy.baseline + (1.0 - cfg.ema_decay) * mean_r
    else:
        new_b = mean_r
    return PolicyState(logits=new_logits, baseline=new_b)
