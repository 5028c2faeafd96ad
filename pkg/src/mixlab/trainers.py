"""Policy optimization of the control network: rollout collection, the
least-squares regression update over response pairs (REBEL-style), and a
simplified clipped-surrogate PPO variant.

Expert distributions are cached at collection time and treated as constants
throughout; gradients flow only through the control network's weights.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .core import Context, DimensionRegistry, PreferenceSpec, Vocab, encode_preference
from .errors import NonFiniteLossError
from .mixer import DecodeStrategy, MergeSpace, decode, replay_steps
from .pcm import (
    OptimizerState,
    PcmConfig,
    PcmGrad,
    PcmParams,
    apply_update,
    clip_grad_norm,
    init_params,
    pcm_backward,
    pcm_forward,
    zeros_like_params,
)
from .rewards import (
    ReferenceStore,
    RewardOracle,
    aggregate_reward,
    direct_average_reward,
)

GRAD_CLIP_NORM = 10.0


@dataclass(frozen=True)
class RebelConfig:
    eta: float = 1.0
    prompts_per_iter: int = 32
    inner_steps: int = 10
    inner_lr: float = 0.05
    iterations: int = 500
    reward_mode: str = "BT"  # "BT" | "DirectAverage"
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if min(self.prompts_per_iter, self.inner_steps) < 1 or self.iterations < 0:
            raise ValueError("counts must be positive")
        if self.reward_mode not in ("BT", "DirectAverage"):
            raise ValueError(f"bad reward_mode {self.reward_mode!r}")


@dataclass(frozen=True)
class PpoConfig:
    clip_epsilon: float = 0.2
    epochs: int = 4
    lr: float = 0.05
    prompts_per_iter: int = 32
    iterations: int = 500
    reward_mode: str = "BT"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.clip_epsilon < 1.0):
            raise ValueError("clip_epsilon must be in (0, 1)")


@dataclass
class TrainingTask:
    """Everything a trainer needs besides the parameters themselves."""

    vocab: Vocab
    registry: DimensionRegistry
    experts_by_dim: dict
    oracles: dict[int, RewardOracle]
    specs: list[tuple[str, PreferenceSpec]]
    train_prompts: list[tuple[int, tuple[int, ...]]]
    heldout_prompts: list[tuple[int, tuple[int, ...]]]
    refs: ReferenceStore
    pcm_cfg: PcmConfig
    space: MergeSpace = MergeSpace.PROBABILITY
    max_len: int = 64
    # per preference key, the dimensions actually rewarded (defaults to the
    # spec's own dims); lets diagnostics reward a subset of active experts
    reward_dims: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def rewarded_dims(self, key: str, spec: PreferenceSpec) -> tuple[int, ...]:
        return self.reward_dims.get(key, spec.dims)

    def pcm_weight_fn(self, params: PcmParams, spec: PreferenceSpec):
        pref = encode_preference(spec, self.registry)
        active = spec.dims
        window = self.pcm_cfg.window
        return lambda ctx: pcm_forward(params, ctx, pref, active, window).weights

    def reward_of(self, mode: str, prompt_id: int, key: str,
                  x: tuple[int, ...], y: tuple[int, ...], spec: PreferenceSpec) -> float:
        dims = self.rewarded_dims(key, spec)
        if mode == "BT":
            return aggregate_reward(x, y, dims, self.oracles, self.refs, prompt_id, key)
        return direct_average_reward(x, y, dims, self.oracles)


@dataclass
class CachedTraj:
    """A sampled response with everything needed to re-evaluate its
    likelihood under new parameters without re-querying experts."""

    prompt_id: int
    prompt: tuple[int, ...]
    pref_key: str
    spec: PreferenceSpec
    y: tuple[int, ...]
    expert_dists: list[np.ndarray]  # per step, (n, V)
    old_logp: float
    old_step_logps: np.ndarray
    reward: float


@dataclass
class RolloutPair:
    y1: CachedTraj
    y2: CachedTraj


def _cache_trajectory(task: TrainingTask, params: PcmParams, prompt_id: int,
                      prompt: tuple[int, ...], key: str, spec: PreferenceSpec,
                      seed: int, mode: str) -> CachedTraj:
    experts = [task.experts_by_dim[d] for d in spec.dims]
    strategy = DecodeStrategy(kind="temperature", tau=1.0, seed=seed, max_len=task.max_len)
    weight_fn = task.pcm_weight_fn(params, spec)
    traj = decode(prompt, experts, weight_fn, strategy, task.space, task.vocab,
                  pref_dims=spec.dims)
    dists = []
    for t in range(len(traj.response)):
        ctx = Context(prompt=prompt, partial=traj.response[:t])
        dists.append(np.stack([e.next_dist(ctx) for e in experts]))
    reward = task.reward_of(mode, prompt_id, key, prompt, traj.response, spec)
    return CachedTraj(
        prompt_id=prompt_id,
        prompt=prompt,
        pref_key=key,
        spec=spec,
        y=traj.response,
        expert_dists=dists,
        old_logp=traj.total_logprob,
        old_step_logps=np.asarray([s.logp for s in traj.steps]),
        reward=reward,
    )


def collect_rollouts(task: TrainingTask, params: PcmParams, cfg,
                     rng: np.random.Generator) -> tuple[list[RolloutPair], int]:
    """Two i.i.d. temperature-1 samples per (prompt, preference), preferences
    cycled over every registered composite preference."""
    n_prompts = len(task.train_prompts)
    picks = [task.train_prompts[int(i)] for i in
             rng.integers(0, n_prompts, size=cfg.prompts_per_iter)]
    pairs = []
    dropped = 0
    for pid, prompt in picks:
        for key, spec in task.specs:
            s1, s2 = (int(s) for s in rng.integers(0, 2**31 - 1, size=2))
            try:
                t1 = _cache_trajectory(task, params, pid, prompt, key, spec, s1,
                                       cfg.reward_mode)
                t2 = _cache_trajectory(task, params, pid, prompt, key, spec, s2,
                                       cfg.reward_mode)
            except Exception:
                dropped += 1
                continue
            if not (math.isfinite(t1.old_logp) and math.isfinite(t2.old_logp)):
                dropped += 1
                continue
            pairs.append(RolloutPair(t1, t2))
    return pairs, dropped


def _accumulate(total: PcmGrad, g: PcmGrad) -> None:
    total.emb += g.emb
    total.w1 += g.w1
    total.b1 += g.b1
    total.w2 += g.w2
    total.b2 += g.b2


def _traj_logp_and_steps(task: TrainingTask, params: PcmParams, traj: CachedTraj):
    weight_fn = task.pcm_weight_fn(params, traj.spec)
    return replay_steps(traj.prompt, traj.y, traj.expert_dists, weight_fn, task.space)


def _add_traj_grad(task: TrainingTask, params: PcmParams, traj: CachedTraj,
                   steps, coeff: float, grad: PcmGrad) -> None:
    pref = encode_preference(traj.spec, task.registry)
    for s in steps:
        g = pcm_backward(params, s.ctx, pref, traj.spec.dims,
                         coeff * s.dlogp_dweights, task.pcm_cfg.window)
        _accumulate(grad, g)


def _rebel_loss_and_grad(task: TrainingTask, params: PcmParams,
                         pairs: list[RolloutPair], eta: float,
                         want_grad: bool = True):
    n = len(pairs)
    grad = zeros_like_params(task.pcm_cfg) if want_grad else None
    loss = 0.0
    for pair in pairs:
        lp1, steps1, _ = _traj_logp_and_steps(task, params, pair.y1)
        lp2, steps2, _ = _traj_logp_and_steps(task, params, pair.y2)
        pred = eta * ((lp1 - pair.y1.old_logp) - (lp2 - pair.y2.old_logp))
        resid = pred - (pair.y1.reward - pair.y2.reward)
        loss += resid * resid / n
        if want_grad:
            c = 2.0 * resid * eta / n
            _add_traj_grad(task, params, pair.y1, steps1, c, grad)
            _add_traj_grad(task, params, pair.y2, steps2, -c, grad)
    return loss, grad


def rebel_step(task: TrainingTask, params_t: PcmParams, pairs: list[RolloutPair],
               cfg: RebelConfig) -> tuple[PcmParams, dict]:
    """Regress policy log-ratio differences onto reward differences via a
    fixed number of momentum-SGD steps; the step is retried at half the
    learning rate (then abandoned) if the batch loss would increase."""
    if not pairs:
        return params_t, {"loss_before": 0.0, "loss_after": 0.0, "mean_reward": 0.0}
    loss_before, _ = _rebel_loss_and_grad(task, params_t, pairs, cfg.eta, want_grad=False)
    if not math.isfinite(loss_before):
        raise NonFiniteLossError(f"non-finite batch loss {loss_before}")

    def run_inner(lr: float) -> tuple[PcmParams, float]:
        params = params_t.copy()
        state = OptimizerState.fresh(task.pcm_cfg)
        for _ in range(cfg.inner_steps):
            loss, grad = _rebel_loss_and_grad(task, params, pairs, cfg.eta)
            if not math.isfinite(loss):
                raise NonFiniteLossError(f"non-finite inner loss {loss}")
            grad = clip_grad_norm(grad, GRAD_CLIP_NORM)
            params, state = apply_update(params, grad, state, lr)
        loss_after, _ = _rebel_loss_and_grad(task, params, pairs, cfg.eta, want_grad=False)
        return params, loss_after

    params, loss_after = run_inner(cfg.inner_lr)
    if loss_after > loss_before:
        params, loss_after = run_inner(cfg.inner_lr / 2.0)
    if loss_after > loss_before:
        params, loss_after = params_t, loss_before
    mean_reward = float(np.mean([t.reward for p in pairs for t in (p.y1, p.y2)]))
    return params, {"loss_before": loss_before, "loss_after": loss_after,
                    "mean_reward": mean_reward}


def ppo_step(task: TrainingTask, params_t: PcmParams, trajs: list[CachedTraj],
             cfg: PpoConfig) -> tuple[PcmParams, dict]:
    """Clipped-surrogate policy update with a batch-mean reward baseline and
    the trajectory advantage broadcast to every token."""
    if not trajs:
        return params_t, {"loss_before": 0.0, "loss_after": 0.0, "mean_reward": 0.0}
    baseline = float(np.mean([t.reward for t in trajs]))
    advantages = [t.reward - baseline for t in trajs]
    total_tokens = sum(len(t.y) for t in trajs)
    eps = cfg.clip_epsilon

    def objective_and_grad(params: PcmParams, want_grad: bool = True):
        obj = 0.0
        grad = zeros_like_params(task.pcm_cfg) if want_grad else None
        for traj, adv in zip(trajs, advantages):
            _, steps, _ = _traj_logp_and_steps(task, params, traj)
            pref = encode_preference(traj.spec, task.registry)
            for s, old_lp in zip(steps, traj.old_step_logps):
                rho = math.exp(s.logp - old_lp)
                unclipped = rho * adv
                clipped = min(max(rho, 1.0 - eps), 1.0 + eps) * adv
                obj += min(unclipped, clipped) / total_tokens
                if want_grad and unclipped <= clipped:
                    # clip not binding: d(rho*A)/dtheta = rho*A * dlogp/dtheta
                    c = rho * adv / total_tokens
                    g = pcm_backward(params, s.ctx, pref, traj.spec.dims,
                                     c * s.dlogp_dweights, task.pcm_cfg.window)
                    _accumulate(grad, g)
        return obj, grad

    obj_before, _ = objective_and_grad(params_t, want_grad=False)
    if not math.isfinite(obj_before):
        raise NonFiniteLossError("non-finite PPO objective")
    params = params_t.copy()
    state = OptimizerState.fresh(task.pcm_cfg)
    for _ in range(cfg.epochs):
        obj, grad = objective_and_grad(params)
        if not math.isfinite(obj):
            raise NonFiniteLossError("non-finite PPO objective")
        # ascent on the surrogate: descend on its negation
        neg = PcmGrad(-grad.emb, -grad.w1, -grad.b1, -grad.w2, -grad.b2)
        neg = clip_grad_norm(neg, GRAD_CLIP_NORM)
        params, state = apply_update(params, neg, state, cfg.lr)
    obj_after, _ = objective_and_grad(params, want_grad=False)
    return params, {"loss_before": -obj_before, "loss_after": -obj_after,
                    "mean_reward": baseline}


def heldout_mean_reward(task: TrainingTask, weight_fn_of_spec) -> float:
    """Mean aggregate BT reward of greedy decodes over heldout prompts and
    all preferences. ``weight_fn_of_spec(spec)`` yields the per-step weight
    function for a preference."""
    strategy = DecodeStrategy(kind="greedy", max_len=task.max_len)
    total, count = 0.0, 0
    for pid, prompt in task.heldout_prompts:
        for key, spec in task.specs:
            experts = [task.experts_by_dim[d] for d in spec.dims]
            traj = decode(prompt, experts, weight_fn_of_spec(spec), strategy,
                          task.space, task.vocab, pref_dims=spec.dims)
            total += task.reward_of("BT", pid, key, prompt, traj.response, spec)
            count += 1
    return total / count


def heldout_pcm_reward(task: TrainingTask, params: PcmParams) -> float:
    return heldout_mean_reward(task, lambda spec: task.pcm_weight_fn(params, spec))


@dataclass
class TrainResult:
    params: PcmParams
    curve: list[dict]


def train(task: TrainingTask, cfg, algo: str = "rebel",
          out_dir: str | None = None, checkpoint_every: int = 50,
          init: PcmParams | None = None, verbose: bool = False) -> TrainResult:
    """Full training loop: collect rollouts, update, track held-out reward.

    Deterministic given the config seed. Writes the learning curve (and
    periodic checkpoints when ``out_dir`` is set).
    """
    from .harness import save_checkpoint  # cycle-free at call time

    params = init.copy() if init is not None else init_params(task.pcm_cfg)
    rng = np.random.default_rng(cfg.seed)
    curve = [{
        "iter": 0,
        "mean_reward_heldout": heldout_pcm_reward(task, params),
        "loss_before": None,
        "loss_after": None,
        "dropped_pairs": 0,
    }]
    for it in range(1, cfg.iterations + 1):
        pairs, dropped = collect_rollouts(task, params, cfg, rng)
        if algo == "rebel":
            params, stats = rebel_step(task, params, pairs, cfg)
        elif algo == "ppo":
            trajs = [t for p in pairs for t in (p.y1, p.y2)]
            params, stats = ppo_step(task, params, trajs, cfg)
        else:
            raise ValueError(f"unknown algo {algo!r}")
        row = {
            "iter": it,
            "mean_reward_heldout": heldout_pcm_reward(task, params),
            "loss_before": stats["loss_before"],
            "loss_after": stats["loss_after"],
            "dropped_pairs": dropped,
        }
        curve.append(row)
        if verbose:
            print(f"iter {it}: heldout={row['mean_reward_heldout']:.4f} "
                  f"loss {stats['loss_before']:.4f}->{stats['loss_after']:.4f}")
        if out_dir and checkpoint_every and it % checkpoint_every == 0:
            save_checkpoint(params, task.pcm_cfg,
                            os.path.join(out_dir, f"checkpoint_{it:05d}.json"))
    if out_dir:
        save_checkpoint(params, task.pcm_cfg, os.path.join(out_dir, "checkpoint_final.json"))
        write_curve(curve, os.path.join(out_dir, "curve.csv"))
    return TrainResult(params=params, curve=curve)


def write_curve(curve: list[dict], path: str) -> None:
    fields = ["iter", "mean_reward_heldout", "loss_before", "loss_after", "dropped_pairs"]
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for row in curve:
            w.writerow(row)
    os.replace(tmp, path)
