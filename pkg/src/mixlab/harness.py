"""Run configuration, checkpoint persistence, evaluation method builders,
and the end-to-end ablation pipeline."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from .core import PreferenceSpec
from .evaluate import EvalReport, Method, run_eval
from .experts import RemoteExpert
from .mixer import DecodeStrategy, MergeSpace, decode, uniform_weight_fn
from .pcm import (
    PcmConfig,
    PcmParams,
    checkpoint_from_json,
    checkpoint_to_json,
    init_params,
)
from .rewards import make_references
from .testbed import Testbed, build_testbed
from .trainers import (
    PpoConfig,
    RebelConfig,
    TrainingTask,
    heldout_mean_reward,
    heldout_pcm_reward,
    train,
)

SEED_ENV_VAR = "MIXLAB_SEED"


def atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def save_checkpoint(params: PcmParams, cfg: PcmConfig, path: str) -> None:
    atomic_write(path, checkpoint_to_json(params, cfg))


def load_checkpoint(path: str) -> tuple[PcmParams, PcmConfig]:
    with open(path) as f:
        return checkpoint_from_json(f.read())


DEFAULT_CONFIG = {
    "seed": 0,
    "testbed": {"max_len": 16, "beta": 4.0, "n_train_prompts": 8, "n_heldout_prompts": 4},
    "pcm": {"embed_dim": 16, "window": 16, "hidden_dim": 64},
    "trainer": {"algo": "rebel"},
    "space": "probability",
    "experts": {"mode": "in-process"},
    "out": "runs/default",
}


def load_run_config(path: str | None) -> dict:
    doc = {}
    if path:
        with open(path) as f:
            doc = json.load(f)
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    for k, v in doc.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    return cfg


def trainer_config(doc: dict, seed: int):
    t = dict(doc)
    algo = t.pop("algo", "rebel")
    t.setdefault("seed", seed)
    if algo == "rebel":
        cls = RebelConfig
    elif algo == "ppo":
        cls = PpoConfig
    else:
        raise ValueError(f"unknown trainer algo {algo!r}")
    # a run config may carry settings for both trainers; keep what applies
    names = {f.name for f in dataclasses.fields(cls)}
    return algo, cls(**{k: v for k, v in t.items() if k in names})


def build_task(cfg: dict) -> tuple[Testbed, TrainingTask]:
    """Assemble the testbed and a ready-to-train task from a run config."""
    seed = cfg["seed"]
    tb = build_testbed(seed=seed, **{k: v for k, v in cfg["testbed"].items()})
    space = MergeSpace(cfg.get("space", "probability"))
    experts_by_dim = dict(tb.experts)
    if cfg["experts"]["mode"] == "remote":
        endpoints = cfg["experts"]["endpoints"]
        if not endpoints:
            raise ValueError("remote mode needs a non-empty endpoints map")
        for dim_s, url in endpoints.items():
            d = int(dim_s)
            experts_by_dim[d] = RemoteExpert(tb.registry[d].name, url, tb.vocab)
    pcm_cfg = PcmConfig(
        vocab_size=tb.vocab.size,
        n_dims=tb.registry.n_dims,
        seed=seed,
        **cfg["pcm"],
    )
    all_prompts = tb.train_prompts + tb.heldout_prompts
    refs = make_references(all_prompts, tb.specs, experts_by_dim, tb.oracles,
                           tb.vocab, max_len=tb.max_len)
    task = TrainingTask(
        vocab=tb.vocab,
        registry=tb.registry,
        experts_by_dim=experts_by_dim,
        oracles=tb.oracles,
        specs=tb.specs,
        train_prompts=tb.train_prompts,
        heldout_prompts=tb.heldout_prompts,
        refs=refs,
        pcm_cfg=pcm_cfg,
        space=space,
        max_len=tb.max_len,
    )
    return tb, task


def method_uniform(task: TrainingTask, space: MergeSpace, name: str | None = None) -> Method:
    strategy = DecodeStrategy(kind="greedy", max_len=task.max_len)

    def generate(prompt, key, spec):
        experts = [task.experts_by_dim[d] for d in spec.dims]
        traj = decode(prompt, experts, uniform_weight_fn(len(experts)),
                      strategy, space, task.vocab, pref_dims=spec.dims)
        return traj.response

    return Method(name=name or f"uniform-{space.value}", generate=generate)


def method_pcm(task: TrainingTask, params: PcmParams, name: str = "trained-pcm") -> Method:
    strategy = DecodeStrategy(kind="greedy", max_len=task.max_len)

    def generate(prompt, key, spec):
        experts = [task.experts_by_dim[d] for d in spec.dims]
        traj = decode(prompt, experts, task.pcm_weight_fn(params, spec),
                      strategy, task.space, task.vocab, pref_dims=spec.dims)
        return traj.response

    return Method(name=name, generate=generate)


def method_single_expert(task: TrainingTask, dim: int) -> Method:
    strategy = DecodeStrategy(kind="greedy", max_len=task.max_len)
    expert = task.experts_by_dim[dim]

    def generate(prompt, key, spec):
        traj = decode(prompt, [expert], uniform_weight_fn(1), strategy,
                      MergeSpace.PROBABILITY, task.vocab, pref_dims=(dim,))
        return traj.response

    return Method(name=f"single-{task.registry[dim].name}", generate=generate)


def run_training(cfg: dict, out_dir: str | None = None, verbose: bool = False):
    """End-to-end train pipeline: build, train, persist run metadata."""
    tb, task = build_task(cfg)
    algo, tcfg = trainer_config(cfg["trainer"], cfg["seed"])
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        atomic_write(os.path.join(out_dir, "run_config.json"), json.dumps(cfg, indent=2))
        atomic_write(os.path.join(out_dir, "testbed.json"), tb.to_json())
        atomic_write(os.path.join(out_dir, "registry.json"), tb.registry.to_json())
        atomic_write(os.path.join(out_dir, "references.json"), task.refs.to_json())
    result = train(task, tcfg, algo=algo, out_dir=out_dir, verbose=verbose)
    return tb, task, result


def run_evaluation(task: TrainingTask, params: PcmParams | None = None,
                   include_single: bool = True) -> EvalReport:
    methods = [
        method_uniform(task, MergeSpace.PROBABILITY),
        method_uniform(task, MergeSpace.LOGIT),
    ]
    if params is not None:
        methods.append(method_pcm(task, params))
    if include_single:
        methods.append(method_single_expert(task, 0))
    return run_eval(methods, task.heldout_prompts, task.specs, task.oracles)


@dataclass
class AblationRow:
    space: str
    trainer: str
    reward_mode: str
    heldout_reward: float
    win_rate_vs_uniform: float | None


def run_ablation(cfg: dict, verbose: bool = False) -> list[AblationRow]:
    """Grid over merge space, trainer, and reward mode; each cell reports
    held-out reward and win rate against the uniform probability merge."""
    rows: list[AblationRow] = []
    grid = [
        ("probability", "none", "-"),
        ("logit", "none", "-"),
        ("probability", "rebel", "DirectAverage"),
        ("probability", "rebel", "BT"),
        ("logit", "rebel", "BT"),
        ("probability", "ppo", "BT"),
    ]
    for space, algo, mode in grid:
        sub = json.loads(json.dumps(cfg))
        sub["space"] = space
        tb, task = build_task(sub)
        if algo == "none":
            reward = heldout_mean_reward(
                task, lambda spec: uniform_weight_fn(len(spec.dims)))
            win = None
        else:
            sub["trainer"] = dict(cfg["trainer"])
            sub["trainer"]["algo"] = algo
            sub["trainer"]["reward_mode"] = mode
            talgo, tcfg = trainer_config(sub["trainer"], sub["seed"])
            result = train(task, tcfg, algo=talgo, verbose=verbose)
            reward = heldout_pcm_reward(task, result.params)
            report = run_eval(
                [method_pcm(task, result.params),
                 method_uniform(task, MergeSpace.PROBABILITY)],
                task.heldout_prompts, task.specs, task.oracles)
            win = report.matrix[0][1]
        rows.append(AblationRow(space, algo, mode, reward, win))
        if verbose:
            print(f"{space:12s} {algo:6s} {mode:14s} "
                  f"reward={reward:.4f} win={win}")
    return rows


def ablation_table(rows: list[AblationRow]) -> str:
    lines = [f"{'Space':<14}{'Trainer':<10}{'Reward':<16}{'Heldout':<10}{'Win% vs uniform':<16}"]
    for r in rows:
        win = "—" if r.win_rate_vs_uniform is None else f"{r.win_rate_vs_uniform:.2f}"
        lines.append(f"{r.space:<14}{r.trainer:<10}{r.reward_mode:<16}"
                     f"{r.heldout_reward:<10.4f}{win:<16}")
    return "\n".join(lines)
