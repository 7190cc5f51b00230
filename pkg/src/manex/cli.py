"""Operator entry point.

Verbs: demo-gen, train, eval, snr-report, improve, serve. Every command is
reproducible from (config file, seed); resolved configuration is echoed into
each output artifact. Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .analysis import average_jerk, compute_snr, pass_at_k
from .config import ExperimentConfig, load_config
from .envs import PlanarEnv, expert_action, expert_side, generate_demos, load_dataset, make_env_config, save_dataset
from .errors import ConfigError
from .improve import EVAL_SEED_BASE, RoundPlan, collect_rollouts, embedding_std, run_round
from .trainer import PolicyBundle, train
from .vib import LatentGaussian


def _write_json(path: str | None, doc: dict) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def _load_bundle(path: str) -> PolicyBundle:
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    return PolicyBundle.load(path)


def _env_from_args(cfg: ExperimentConfig, args):
    env_cfg = cfg.env
    if getattr(args, "env", None):
        env_cfg = make_env_config(args.env)
    if getattr(args, "bias", None) is not None:
        env_cfg = replace(env_cfg, expert_bias=args.bias)
    env_cfg.validate()
    return env_cfg


def cmd_demo_gen(args) -> int:
    cfg = load_config(args.config)
    env_cfg = _env_from_args(cfg, args)
    records = generate_demos(env_cfg, args.n, args.seed)
    meta = {
        "kind": "expert-demos",
        "seed": args.seed,
        "config": cfg.to_dict(),
        "env_name": env_cfg.name,
        "expert_bias": env_cfg.expert_bias,
    }
    out = args.out or cfg.paths.dataset
    save_dataset(out, records, meta)
    lefts = sum(1 for r in records if expert_side(r.seed, env_cfg.expert_bias) == "left")
    print(f"wrote {len(records)} expert episodes to {out} ({lefts} left-mode)")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.iterations is not None:
        cfg.train = replace(cfg.train, iterations=args.iterations)
    if args.seed is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    dataset_path = args.dataset or cfg.paths.dataset
    records, _ = load_dataset(dataset_path)
    if not records:
        raise ConfigError(f"dataset {dataset_path} is empty")
    env_cfg = cfg.env
    init_bundle = _load_bundle(args.resume) if args.resume else None
    with_vib = cfg.vib_enabled and not args.no_vib
    bundle = train(
        records,
        env_cfg.obs_dim,
        env_cfg.act_dim,
        cfg.policy,
        cfg.vib if with_vib else None,
        cfg.train,
        env_name=env_cfg.name,
        max_step=env_cfg.max_step,
        init_bundle=init_bundle,
        with_vib=with_vib,
    )
    out = args.out or cfg.paths.checkpoint
    bundle.save(out)
    il = [h[0] for h in bundle.loss_history]
    ib = [h[1] for h in bundle.loss_history]
    log = {
        "config": cfg.to_dict(),
        "dataset": dataset_path,
        "with_vib": with_vib,
        "iterations": cfg.train.iterations,
        "trained_iterations": bundle.trained_iterations,
        "il_loss": il,
        "ib_loss": ib,
    }
    _write_json(out + ".losses.json", log)
    final_il = float(np.mean(il[-50:])) if il else 0.0
    final_ib = float(np.mean(ib[-50:])) if ib else 0.0
    print(
        f"trained {cfg.train.iterations} iterations on {len(records)} episodes; "
        f"final il={final_il:.4f} ib={final_ib:.4f}; checkpoint -> {out}"
    )
    return 0


def _eval_oracle(env_cfg, episodes: int) -> dict:
    successes = 0
    jerks = []
    dt = 1.0 / env_cfg.control_hz
    for i in range(episodes):
        env = PlanarEnv(env_cfg)
        env.reset(EVAL_SEED_BASE + i)
        side = expert_side(EVAL_SEED_BASE + i, env_cfg.expert_bias)
        positions = [env.state.robot.copy()]
        done = False
        success = False
        while not done:
            _, done, success = env.step(expert_action(env.state, env_cfg, side))
            positions.append(env.state.robot.copy())
        successes += int(success)
        if len(positions) >= 4:
            jerks.append(average_jerk(np.stack(positions), dt))
    rate = successes / episodes
    return {"success_rate": rate, "pass_at_5": rate, "avg_jerk": float(np.mean(jerks))}


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    env_cfg = _env_from_args(cfg, args)
    if args.mode == "oracle":
        metrics = _eval_oracle(env_cfg, args.episodes)
        bundle = None
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --mode oracle")
        bundle = _load_bundle(args.checkpoint)
        plan = RoundPlan(
            starts=args.episodes,
            attempts=args.attempts,
            alpha=args.alpha,
            seed=args.seed or 0,
            mode=args.mode,
            seed_base=EVAL_SEED_BASE,
        )
        cond_std = None
        if args.mode == "cond-noise":
            records, _ = load_dataset(args.dataset or cfg.paths.dataset)
            cond_std = embedding_std(bundle, records)
        records, outcomes, jerk, used = collect_rollouts(
            bundle, env_cfg, plan, cond_noise_std=cond_std
        )
        successes = sum(r.success for r in records)
        metrics = {
            "success_rate": successes / len(records),
            "pass_at_5": pass_at_k(outcomes, min(5, args.attempts)),
            "avg_jerk": jerk,
            "rollouts_used": used,
        }
    doc = {
        "mode": args.mode,
        "alpha": args.alpha,
        "episodes": args.episodes,
        "env": env_cfg.name,
        "seed_base": EVAL_SEED_BASE,
        "config": cfg.to_dict(),
        **metrics,
    }
    _write_json(args.out, doc)
    if args.out:
        print(
            f"eval mode={args.mode}: success={metrics['success_rate']:.3f} "
            f"pass@5={metrics['pass_at_5']:.3f} jerk={metrics['avg_jerk']:.3f} -> {args.out}"
        )
    return 0


def _snr_doc(bundle: PolicyBundle, records, threshold_db: float) -> dict:
    rows = np.concatenate([r.observations for r in records])
    emb = bundle.policy.encode_observation(rows)
    g = bundle.plugin.encode_latent(emb)
    samples = [LatentGaussian(mu=g.mu[i], sigma=g.sigma[i]) for i in range(rows.shape[0])]
    return compute_snr(samples).to_dict(threshold_db)


def cmd_snr_report(args) -> int:
    cfg = load_config(args.config)
    bundle = _load_bundle(args.checkpoint)
    if bundle.plugin is None:
        raise ConfigError("checkpoint has no exploration plug-in; train without --no-vib")
    records, _ = load_dataset(args.dataset or cfg.paths.dataset)
    if not records:
        raise ConfigError("dataset is empty")
    threshold = args.threshold_db if args.threshold_db is not None else bundle.plugin.cfg.threshold_db
    doc = _snr_doc(bundle, records, threshold)
    doc["checkpoint"] = args.checkpoint
    doc["config"] = cfg.to_dict()
    _write_json(args.out, doc)
    eff = [d["index"] for d in doc["dims"] if d["effective"]]
    print(f"snr over {doc['samples']} samples: {len(eff)} effective dims {eff}")
    return 0


def cmd_improve(args) -> int:
    cfg = load_config(args.config)
    env_cfg = _env_from_args(cfg, args)
    bundle = _load_bundle(args.checkpoint)
    records, _ = load_dataset(args.dataset or cfg.paths.dataset)
    expert = [r for r in records if r.source == "expert"]
    if not expert:
        raise ConfigError("dataset holds no expert records")
    plans = cfg.rounds
    if args.rounds is not None or not plans:
        n = args.rounds or 1
        plans = [
            RoundPlan(
                starts=args.starts,
                attempts=args.attempts,
                alpha=args.alpha,
                cap=args.cap,
                seed=(args.seed or 0) + r,
                mode=args.mode,
                eval_episodes=args.eval_episodes,
            )
            for r in range(n)
        ]
    out_dir = args.out_dir or cfg.paths.report_dir
    os.makedirs(out_dir, exist_ok=True)
    dataset = expert
    for r, plan in enumerate(plans, start=1):
        bundle, dataset, rep = run_round(bundle, dataset, plan, env_cfg, cfg.train, round_index=r)
        doc = rep.to_dict()
        doc["config"] = cfg.to_dict()
        _write_json(os.path.join(out_dir, f"round_{rep.round_index}.json"), doc)
        bundle.save(os.path.join(out_dir, f"checkpoint_round_{rep.round_index}.json"))
        print(
            f"round {rep.round_index} [{rep.mode}]: success {rep.success_before:.3f} -> "
            f"{rep.success_after:.3f}, pass@5 {rep.pass_at_5:.3f}, jerk {rep.avg_jerk:.3f}, "
            f"rollouts {rep.rollouts_used}, collected {rep.successes_collected}"
            + (" [zero-success]" if rep.zero_success else "")
        )
    final = os.path.join(out_dir, "improved_checkpoint.json")
    bundle.save(final)
    print(f"final checkpoint -> {final}")
    return 0


def cmd_serve(args) -> int:
    from .service import SteeringService, make_server

    cfg = load_config(args.config)
    env_cfg = _env_from_args(cfg, args)
    bundle = _load_bundle(args.checkpoint)
    snr_doc = None
    if args.snr and os.path.exists(args.snr):
        with open(args.snr) as f:
            snr_doc = json.load(f)
    elif bundle.plugin is not None:
        dataset_path = args.dataset or cfg.paths.dataset
        if os.path.exists(dataset_path):
            records, _ = load_dataset(dataset_path)
            if records:
                snr_doc = _snr_doc(bundle, records, bundle.plugin.cfg.threshold_db)
    ui_dir = args.ui_dir
    if ui_dir is None:
        default_ui = os.path.join(os.path.dirname(__file__), "..", "..", "frontend", "dist")
        ui_dir = default_ui if os.path.isdir(default_ui) else None
    service = SteeringService(
        bundle,
        env_cfg,
        snr_doc=snr_doc,
        ui_dir=ui_dir,
        persist_path=args.persist,
    )
    server = make_server(service, host=args.host, port=args.port)
    print(
        f"steering service on http://{args.host}:{server.server_address[1]}/ "
        f"(ui: {ui_dir or 'fallback page'})",
        flush=True,
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manex", description=__doc__)
    p.add_argument("--version", action="version", version=f"manex {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config(sp):
        sp.add_argument("--config", help="experiment config JSON (default: $MANEX_CONFIG)")

    sp = sub.add_parser("demo-gen", help="generate scripted-expert demonstrations")
    add_config(sp)
    sp.add_argument("--env", choices=["planar-reach", "planar-push"])
    sp.add_argument("--bias", type=float, help="expert detour bias override")
    sp.add_argument("-n", type=int, default=10, help="number of successful episodes")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="output JSONL path")
    sp.set_defaults(func=cmd_demo_gen)

    sp = sub.add_parser("train", help="train policy (+ exploration plug-in)")
    add_config(sp)
    sp.add_argument("--dataset", help="training JSONL")
    sp.add_argument("--out", help="checkpoint path")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--no-vib", action="store_true", help="train the base path only")
    sp.add_argument("--resume", help="continue from an existing checkpoint")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the held-out seed block")
    add_config(sp)
    sp.add_argument("--checkpoint", help="checkpoint path")
    sp.add_argument("--env", choices=["planar-reach", "planar-push"])
    sp.add_argument("--bias", type=float)
    sp.add_argument("--episodes", type=int, default=100)
    sp.add_argument("--attempts", type=int, default=5)
    sp.add_argument("--mode", choices=["base", "explore", "cond-noise", "oracle"], default="base")
    sp.add_argument("--alpha", type=float, default=0.0)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--dataset", help="needed for cond-noise embedding stats")
    sp.add_argument("--out", help="metrics JSON path (default: stdout)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("snr-report", help="latent SNR spectrum over a dataset")
    add_config(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset")
    sp.add_argument("--threshold-db", type=float, dest="threshold_db")
    sp.add_argument("--out", help="report JSON path (default: stdout)")
    sp.set_defaults(func=cmd_snr_report)

    sp = sub.add_parser("improve", help="run self-improvement rounds")
    add_config(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset")
    sp.add_argument("--env", choices=["planar-reach", "planar-push"])
    sp.add_argument("--bias", type=float)
    sp.add_argument("--rounds", type=int, help="number of rounds (overrides config)")
    sp.add_argument("--starts", type=int, default=20)
    sp.add_argument("--attempts", type=int, default=5)
    sp.add_argument("--alpha", type=float, default=2.0)
    sp.add_argument("--cap", type=int, default=20)
    sp.add_argument("--mode", choices=["base", "explore", "cond-noise"], default="explore")
    sp.add_argument("--eval-episodes", type=int, default=100, dest="eval_episodes")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-dir", dest="out_dir", help="report directory")
    sp.set_defaults(func=cmd_improve)

    sp = sub.add_parser("serve", help="serve the steering API and UI")
    add_config(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--env", choices=["planar-reach", "planar-push"])
    sp.add_argument("--bias", type=float)
    sp.add_argument("--snr", help="precomputed SNR report JSON")
    sp.add_argument("--dataset", help="dataset for on-the-fly SNR computation")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8008)
    sp.add_argument("--ui-dir", dest="ui_dir", help="static UI bundle directory")
    sp.add_argument("--persist", help="JSONL path for completed steered episodes")
    sp.set_defaults(func=cmd_serve)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as e:  # runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
