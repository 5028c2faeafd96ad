"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import MixlabError
from .gradcheck import run_gradcheck
from .harness import (
    ablation_table,
    atomic_write,
    build_task,
    load_checkpoint,
    load_run_config,
    run_ablation,
    run_evaluation,
    run_training,
)
from .mixer import DecodeStrategy, decode, uniform_weight_fn
from .testbed import build_testbed, oracle_pair_check


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixlab",
                                description="Decoding-time expert mixing toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    tb = sub.add_parser("testbed", help="testbed utilities")
    tbsub = tb.add_subparsers(dest="tb_command", required=True)
    tbb = tbsub.add_parser("build", help="build and describe the synthetic testbed")
    tbb.add_argument("--seed", type=int, default=0)
    tbb.add_argument("--max-len", type=int, default=16)
    tbb.add_argument("--check", action="store_true", help="run the oracle diagnostics")
    tbb.add_argument("--out", help="directory for registry/spec JSON")

    sv = sub.add_parser("serve-expert", help="serve one analytic expert over HTTP")
    sv.add_argument("--config", help="run config JSON")
    sv.add_argument("--dim", type=int, required=True, help="dimension id of the expert")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)

    dc = sub.add_parser("decode", help="decode one prompt under one preference")
    dc.add_argument("--config", help="run config JSON")
    dc.add_argument("--prompt-id", type=int, default=0)
    dc.add_argument("--pref", required=True, help="preference key, e.g. AAB")
    dc.add_argument("--checkpoint", help="trained checkpoint (uniform weights if omitted)")

    tr = sub.add_parser("train", help="train the control network")
    tr.add_argument("--config", help="run config JSON")
    tr.add_argument("--out", help="output directory (overrides config)")
    tr.add_argument("--quiet", action="store_true")

    ev = sub.add_parser("eval", help="pairwise win-rate evaluation")
    ev.add_argument("--config", help="run config JSON")
    ev.add_argument("--checkpoint", help="include this trained checkpoint as a method")
    ev.add_argument("--out", help="directory for report artifacts")

    ab = sub.add_parser("ablate", help="run the merge-space / trainer / reward grid")
    ab.add_argument("--config", help="run config JSON")
    ab.add_argument("--out", help="directory for the ablation report")
    ab.add_argument("--quiet", action="store_true")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--cases", type=int, default=20)
    gc.add_argument("--seed", type=int, default=0)
    return p


def _cmd_testbed(args) -> int:
    tb = build_testbed(seed=args.seed, max_len=args.max_len)
    print(tb.to_json())
    if args.check:
        diag = oracle_pair_check(tb)
        print(json.dumps(diag, indent=2, default=str))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write(os.path.join(args.out, "registry.json"), tb.registry.to_json())
        atomic_write(os.path.join(args.out, "testbed.json"), tb.to_json())
    return 0


def _cmd_serve(args) -> int:
    from .experts import serve_expert

    cfg = load_run_config(args.config)
    tb = build_testbed(seed=cfg["seed"], **cfg["testbed"])
    print(f"serving expert {tb.registry[args.dim].name} on "
          f"http://{args.host}:{args.port}", file=sys.stderr)
    serve_expert(tb.expert_configs[args.dim], tb.vocab,
                 tb.registry[args.dim].name, args.host, args.port)
    return 0


def _cmd_decode(args) -> int:
    cfg = load_run_config(args.config)
    tb, task = build_task(cfg)
    spec = tb.spec_by_key(args.pref)
    prompts = dict(task.train_prompts + task.heldout_prompts)
    if args.prompt_id not in prompts:
        print(f"unknown prompt id {args.prompt_id}", file=sys.stderr)
        return 1
    if args.checkpoint:
        params, _ = load_checkpoint(args.checkpoint)
        weight_fn = task.pcm_weight_fn(params, spec)
    else:
        weight_fn = uniform_weight_fn(len(spec.dims))
    experts = [task.experts_by_dim[d] for d in spec.dims]
    strategy = DecodeStrategy(kind="greedy", max_len=task.max_len)
    traj = decode(prompts[args.prompt_id], experts, weight_fn, strategy,
                  task.space, task.vocab, pref_dims=spec.dims)
    print(traj.to_jsonl_line())
    return 0


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    out = args.out or cfg.get("out")
    tb, task, result = run_training(cfg, out_dir=out, verbose=not args.quiet)
    final = result.curve[-1]["mean_reward_heldout"]
    print(f"final held-out mean reward: {final:.4f}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    tb, task = build_task(cfg)
    params = None
    if args.checkpoint:
        params, _ = load_checkpoint(args.checkpoint)
    report = run_evaluation(task, params)
    print(report.to_text())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write(os.path.join(args.out, "report.json"), report.to_json())
        atomic_write(os.path.join(args.out, "verdicts.jsonl"), report.verdicts_jsonl())
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_run_config(args.config)
    rows = run_ablation(cfg, verbose=not args.quiet)
    table = ablation_table(rows)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write(os.path.join(args.out, "ablation.txt"), table)
        atomic_write(os.path.join(args.out, "ablation.json"), json.dumps(
            [r.__dict__ for r in rows], indent=2))
    return 0


def _cmd_gradcheck(args) -> int:
    worst = run_gradcheck(n_cases=args.cases, seed=args.seed)
    print(f"max relative gradient error: {worst:.3e}")
    return 0 if worst <= 1e-4 else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    handlers = {
        "testbed": _cmd_testbed,
        "serve-expert": _cmd_serve,
        "decode": _cmd_decode,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "ablate": _cmd_ablate,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except MixlabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
