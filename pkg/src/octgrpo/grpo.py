"""Group-relative policy optimization over decoded voxel artifacts.

Rewards are standardized within each group of rollouts sharing a prompt, fed
to a clipped importance-ratio surrogate with a k3 KL penalty toward a frozen
reference policy, and applied with AdamW under a warmup + cosine schedule.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .codec import tokens_to_grid
from .critics import SLOTS, Artifact, CriticStack, RewardBreakdown
from .errors import CriticError, TrainingError
from .policy import (
    PolicyParams,
    PolicyShape,
    Rollout,
    grad_logprob,
    sample_sequence,
    sequence_logprob,
    split_tokens,
)
from .voxel import VoxelGrid
from .vq import Codebook, dequantize

LOG_HEADER = ("step", "lr", "r_h", "r_v", "r_x", "r_p", "reward", "kl", "objective")
SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class GrpoConfig:
    G: int = 4
    eps: float = 0.1
    beta: float = 0.01
    lr_base: float = 1e-2
    warmup_steps: int = 50
    total_steps: int = 200
    grad_clip_norm: float = 1.0
    kl_cap_factor: float = 1.2
    kl_ema_decay: float = 0.99
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 42

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise TrainingError(f"eps must be in (0, 1), got {self.eps}")
        if self.beta < 0:
            raise TrainingError(f"beta must be >= 0, got {self.beta}")
        if self.G < 2:
            raise TrainingError(f"group size must be >= 2, got {self.G}")
        if self.total_steps < 1 or not 0 <= self.warmup_steps <= self.total_steps:
            raise TrainingError("need 0 <= warmup_steps <= total_steps and total_steps >= 1")
        if not (0 <= self.kl_ema_decay < 1 and 0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise TrainingError("decay rates must lie in [0, 1)")
        if self.lr_base < 0 or self.grad_clip_norm <= 0 or self.weight_decay < 0 or self.kl_cap_factor <= 0:
            raise TrainingError("lr_base, weight_decay >= 0 and grad_clip_norm, kl_cap_factor > 0 required")

    @classmethod
    def paper(cls, **overrides) -> "GrpoConfig":
        """Hyperparameters used for full-scale training."""
        base = dict(G=4, eps=0.1, beta=0.01, lr_base=1e-6, warmup_steps=2000, total_steps=2000,
                    grad_clip_norm=1.0, kl_cap_factor=1.2, kl_ema_decay=0.99, adam_beta1=0.9, adam_beta2=0.98,
                    weight_decay=0.01)
        base.update(overrides)
        return cls(**base)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass
class GroupBatch:
    prompt_id: int
    rollouts: list[Rollout]
    rewards: np.ndarray
    breakdowns: list[RewardBreakdown]
    advantages: np.ndarray


@dataclass
class AdamState:
    m: PolicyParams
    v: PolicyParams
    t: int = 0

    @classmethod
    def zeros(cls, params: PolicyParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


@dataclass
class TrainState:
    params: PolicyParams
    ref: PolicyParams
    adam: AdamState
    step: int = 0
    kl_ema: float = 0.0
    kl_ema_weight: float = 0.0
    skipped: int = 0
    log: list[dict] = field(default_factory=list)

    @property
    def kl_ema_corrected(self) -> float:
        return self.kl_ema / self.kl_ema_weight if self.kl_ema_weight > 0 else 0.0


# -- objective pieces ----------------------------------------------------------

def advantages(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise TrainingError(f"need at least two rewards, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise TrainingError(f"non-finite reward in {r}")
    sigma = r.std()
    if sigma < SIGMA_FLOOR:
        return np.zeros_like(r)
    return (r - r.mean()) / sigma


def _same_length(a, b, what: str):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise TrainingError(f"{what}: length mismatch {a.shape} vs {b.shape}")
    return a, b


def token_ratio(logp_new, logp_old) -> np.ndarray:
    new, old = _same_length(logp_new, logp_old, "token_ratio")
    return np.exp(new - old)


def kl_estimate(logp_new, logp_ref) -> float:
    new, ref = _same_length(logp_new, logp_ref, "kl_estimate")
    if new.size == 0:
        return 0.0
    d = ref - new
    return float(np.mean(np.exp(d) - d - 1.0))


def surrogate_terms(ratio, adv, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-token clipped surrogate value and its derivative w.r.t. the new log-prob."""
    ratio = np.asarray(ratio, dtype=float)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * adv
    use_unclipped = unclipped <= clipped
    value = np.where(use_unclipped, unclipped, clipped)
    return value, np.where(use_unclipped, unclipped, 0.0)


def grpo_objective(group: GroupBatch, params: PolicyParams, ref: PolicyParams, cfg: GrpoConfig,
                   with_kl: bool = False):
    """Token-averaged clipped surrogate minus ``beta`` times k3 KL, and its gradient.

    The gradient points uphill in the objective. With ``with_kl`` the token-mean
    KL to ``ref`` is returned as a third value.
    """
    if len(group.rollouts) != len(group.advantages):
        raise TrainingError("advantages and rollouts differ in count")
    total_tokens = sum(len(r.tokens) for r in group.rollouts)
    if total_tokens == 0:
        raise TrainingError("empty group")
    grad = params.zeros_like()
    J = 0.0
    kl_sum = 0.0
    for ro, adv in zip(group.rollouts, group.advantages):
        if ro.logp_old is None:
            raise TrainingError("rollout is missing logp_old")
        lp_new = sequence_logprob(params, ro.tokens, ro.prompt_id)
        lp_ref = sequence_logprob(ref, ro.tokens, ro.prompt_id)
        ratio = token_ratio(lp_new, ro.logp_old)
        surr, d_surr = surrogate_terms(ratio, adv, cfg.eps)
        delta = lp_ref - lp_new
        e = np.exp(delta)
        k3 = e - delta - 1.0
        J += float(np.sum(surr - cfg.beta * k3))
        kl_sum += float(np.sum(k3))
        coef = (d_surr + cfg.beta * (e - 1.0)) / total_tokens
        g = grad_logprob(params, ro.tokens, ro.prompt_id, coef)
        for acc, part in zip(grad.arrays(), g.arrays()):
            acc += part
    J /= total_tokens
    if with_kl:
        return J, grad, kl_sum / total_tokens
    return J, grad


def lr_schedule(step: int, cfg: GrpoConfig) -> float:
    if step < 0 or step > cfg.total_steps:
        raise TrainingError(f"step {step} outside [0, {cfg.total_steps}]")
    W = cfg.warmup_steps
    if step <= W:
        return cfg.lr_base * step / W if W > 0 else cfg.lr_base
    frac = (step - W) / (cfg.total_steps - W)
    return cfg.lr_base * 0.5 * (1.0 + math.cos(math.pi * frac))


def adamw_step(params: PolicyParams, grad: PolicyParams, state: AdamState, lr: float, cfg: GrpoConfig):
    """One descent step on ``grad`` after global-norm clipping; updates in place."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise TrainingError("parameter, gradient and moment shapes differ")
    norm = grad.global_norm()
    if not math.isfinite(norm):
        raise TrainingError("non-finite gradient")
    scale = min(1.0, cfg.grad_clip_norm / norm) if norm > 0 else 1.0
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1, c2 = 1 - b1**state.t, 1 - b2**state.t
    for p, g, m, v in zip(params.arrays(), grad.arrays(), state.m.arrays(), state.v.arrays()):
        g = g * scale
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * cfg.weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state


# -- rollouts to rewards -------------------------------------------------------

def decode_rollout(shape: PolicyShape, tokens, codebook: Codebook, depth: int) -> VoxelGrid:
    _, idx = split_tokens(shape, tokens)
    return tokens_to_grid(dequantize(idx, codebook, depth))


def score_rollout(shape, ro: Rollout, codebook, depth, stack: CriticStack) -> RewardBreakdown:
    grid = decode_rollout(shape, ro.tokens, codebook, depth)
    try:
        return stack.evaluate(Artifact(grid, ro.prompt_id))
    except CriticError as exc:
        raise CriticError(f"scoring prompt {ro.prompt_id}: {exc}") from exc


def collect_group(params: PolicyParams, prompt_id: int, cfg: GrpoConfig, codebook: Codebook, depth: int,
                  stack: CriticStack, rng: np.random.Generator) -> GroupBatch:
    rollouts = [sample_sequence(params, prompt_id, 1.0, rng) for _ in range(cfg.G)]
    breakdowns = [score_rollout(params.shape, ro, codebook, depth, stack) for ro in rollouts]
    rewards = np.array([b.aggregate for b in breakdowns])
    return GroupBatch(prompt_id, rollouts, rewards, breakdowns, advantages(rewards))


def policy_shape_for(codebook: Codebook, depth: int, n_prompts: int, n_sem: int = 8, n_sem_vocab: int = 64,
                     width: int = 32, window: int = 8) -> PolicyShape:
    return PolicyShape(n_sem_vocab, codebook.size, width, window, n_sem, 8**depth, n_prompts)


def evaluate_policy(params: PolicyParams, codebook: Codebook, depth: int, stack: CriticStack, prompts,
                    n: int = 32, seed: int = 0) -> float:
    """Mean aggregate reward of ``n`` samples per prompt."""
    rng = np.random.default_rng(seed)
    vals = [score_rollout(params.shape, sample_sequence(params, p, 1.0, rng), codebook, depth, stack).aggregate
            for p in prompts for _ in range(n)]
    return float(np.mean(vals))


def init_state(params: PolicyParams) -> TrainState:
    return TrainState(params=params, ref=params.copy(), adam=AdamState.zeros(params))


def train_step(state: TrainState, cfg: GrpoConfig, codebook: Codebook, depth: int, stack: CriticStack,
               prompts, rng: np.random.Generator) -> dict:
    """One outer step: sample every group from a frozen snapshot, then update group by group."""
    step = state.step + 1
    lr = lr_schedule(step, cfg)
    snapshot = state.params.copy()
    groups = [collect_group(snapshot, p, cfg, codebook, depth, stack, rng) for p in prompts]

    kls, objs = [], []
    cap_armed = step > cfg.warmup_steps and state.kl_ema_weight > 0
    for grp in groups:
        J, grad, kl = grpo_objective(grp, state.params, state.ref, cfg, with_kl=True)
        if not (math.isfinite(J) and grad.is_finite()):
            raise TrainingError(f"non-finite objective or gradient at step {step}")
        kls.append(kl)
        objs.append(J)
        if cap_armed and kl > cfg.kl_cap_factor * state.kl_ema_corrected:
            state.skipped += 1
            lr *= 0.5
            continue
        descent = grad.copy()
        for a in descent.arrays():
            np.negative(a, out=a)
        adamw_step(state.params, descent, state.adam, lr, cfg)
    if not state.params.is_finite():
        raise TrainingError(f"parameters became non-finite at step {step}")

    kl_step = float(np.mean(kls))
    d = cfg.kl_ema_decay
    state.kl_ema = d * state.kl_ema + (1 - d) * kl_step
    state.kl_ema_weight = d * state.kl_ema_weight + (1 - d)
    state.step = step

    comps = np.array([[getattr(b, f"r_{s}") for s in SLOTS] for g in groups for b in g.breakdowns])
    rewards = np.concatenate([g.rewards for g in groups])
    row = {"step": step, "lr": lr, **{f"r_{s}": float(comps[:, i].mean()) for i, s in enumerate(SLOTS)},
           "reward": float(rewards.mean()), "kl": kl_step, "objective": float(np.mean(objs))}
    state.log.append(row)
    return row


def train(cfg: GrpoConfig, stack: CriticStack, codebook: Codebook, depth: int, prompts,
          params: PolicyParams | None = None, log_path=None, policy_seed: int | None = None,
          progress=None) -> TrainState:
    """Run ``cfg.total_steps`` outer steps; optionally stream the CSV log to ``log_path``."""
    prompts = list(prompts)
    if not prompts:
        raise TrainingError("need at least one prompt")
    if params is None:
        shape = policy_shape_for(codebook, depth, max(prompts) + 1)
        params = PolicyParams.init(shape, cfg.seed if policy_seed is None else policy_seed)
    if params.shape.n_geo != 8**depth or params.shape.n_geo_vocab != codebook.size:
        raise TrainingError("policy shape does not match codebook size and depth")
    state = init_state(params)
    rng = np.random.default_rng(cfg.seed)
    fh = writer = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_HEADER)
        writer.writeheader()
    try:
        for _ in range(cfg.total_steps):
            row = train_step(state, cfg, codebook, depth, stack, prompts, rng)
            if writer is not None:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
                fh.flush()
            if progress is not None:
                progress(row)
    finally:
        if fh is not None:
            fh.close()
    return state
