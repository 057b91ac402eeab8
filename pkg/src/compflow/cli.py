"""Command-line orchestration: one subcommand per pipeline stage.

Subcommands: gen-dataset, train-offline-flow, train-online-flow,
estimate-gap, train, eval, plot. Exit codes: 0 success, 2 usage error,
1 runtime error. Diagnostics go to stderr, data to files.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import agent as agent_mod
from . import envs as envs_mod
from . import flow as flow_mod
from . import gap as gap_mod
from . import persist


def make_env_pair(cfg) -> envs_mod.EnvPair:
    env_id = cfg["env.id"]
    if env_id == "pointmass":
        return envs_mod.point_mass_pair(
            shift=cfg["env.shift"],
            friction_off=cfg["env.friction_off"],
            friction_on=cfg["env.friction_on"],
            kinematic_limit=cfg["env.kinematic_limit"],
            horizon=cfg["env.horizon"],
        )
    if env_id == "gaussian":
        return envs_mod.gaussian_linear_pair(
            delta=(cfg["env.delta0"], cfg["env.delta1"]),
            sigma_off=cfg["env.sigma_off"],
            sigma_on=cfg["env.sigma_on"],
            half_shift=cfg["env.half_shift"],
            horizon=cfg["env.horizon"],
        )
    if env_id == "patrol":
        return envs_mod.patrol_pair(
            attractiveness_seed=cfg["env.attractiveness_seed"],
            displacement_off=cfg["env.displacement_off"],
            displacement_on=cfg["env.displacement_on"],
            horizon=cfg["env.horizon"],
        )
    raise persist.ConfigError(f"unknown env id {env_id!r}")


def rl_config_from(cfg) -> agent_mod.RLConfig:
    return agent_mod.RLConfig(
        method=cfg["rl.method"],
        gamma=cfg["rl.gamma"],
        alpha_ent=cfg["rl.alpha_ent"],
        target_update_rate=cfg["rl.target_update_rate"],
        omega=cfg["rl.omega"],
        beta=cfg["rl.beta"],
        xi=cfg["rl.xi"],
        grad_steps=cfg["rl.grad_steps"],
        batch_size=cfg["rl.batch_size"],
        buffer_capacity=cfg["rl.buffer_capacity"],
        warmup_steps=cfg["rl.warmup_steps"],
        total_interactions=cfg["rl.total_interactions"],
        eval_interval=cfg["rl.eval_interval"],
        eval_episodes=cfg["rl.eval_episodes"],
        gap_samples=cfg["rl.gap_samples"],
        hidden_dim=cfg["rl.hidden_dim"],
        hidden_layers=cfg["rl.hidden_layers"],
        lr=cfg["rl.lr"],
        checkpoint_interval=cfg["rl.checkpoint_interval"],
        eta=cfg["flow.eta"],
        train_freq=cfg["flow.train_freq"],
    )


def _load_cfg(args) -> persist.RunConfig:
    items = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            items.update(persist.parse_config_text(fh.read()))
    items.update(persist.parse_overrides(getattr(args, "set", None)))
    return persist.make_config(items)


def _require_file(path, what):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing {what}: expected it at {path}")
    return path


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_gen_dataset(args):
    cfg = _load_cfg(args)
    cfg["env.id"] = args.env
    pair = make_env_pair(cfg)
    env = pair.offline if args.member == "offline" else pair.online
    rng = np.random.default_rng(args.seed)
    dataset = envs_mod.generate_offline_dataset(env, envs_mod.behavior_policy_for(env),
                                                args.n, rng)
    persist.write_dataset(args.out, dataset)
    print(f"wrote {len(dataset)} transitions to {args.out}")
    return 0


def cmd_train_offline_flow(args):
    cfg = _load_cfg(args)
    dataset = persist.read_dataset(_require_file(args.dataset, "dataset CSV"))
    n_holdout = max(1, len(dataset) // 10)
    train = dataset.subset(np.arange(len(dataset) - n_holdout))
    holdout = dataset.subset(np.arange(len(dataset) - n_holdout, len(dataset)))
    fcfg = persist.flow_train_config(cfg, "flow.offline_iters")
    rng = np.random.default_rng(args.seed)
    fl = flow_mod.train_offline_flow(train, fcfg, rng)
    val_rng = np.random.default_rng(args.seed + 1)
    x0 = val_rng.standard_normal((len(holdout), fl.x_dim))
    t = val_rng.uniform(0.0, 1.0, size=len(holdout))
    loss, _ = flow_mod.fm_loss(fl, x0, holdout.next_states, holdout.states, holdout.actions, t)
    flow_mod.save_flow(fl, args.out)
    print(f"held-out FM loss: {loss.value:.6f}")
    print(f"wrote flow checkpoint to {args.out}")
    return 0


def cmd_train_online_flow(args):
    cfg = _load_cfg(args)
    offline_flow = flow_mod.load_flow(_require_file(args.offline_flow, "offline flow checkpoint"))
    buffer = persist.read_dataset(_require_file(args.dataset, "online transition CSV"))
    fcfg = persist.flow_train_config(cfg, "flow.online_iters")
    rng = np.random.default_rng(args.seed)
    audit = flow_mod.CouplingAudit()
    fl = flow_mod.train_online_flow(offline_flow, buffer, cfg["flow.eta"], fcfg, rng,
                                    audit=audit)
    flow_mod.save_flow(fl, args.out)
    print(f"couplings checked: {audit.checks}, violations: {audit.violations}")
    print(f"wrote flow checkpoint to {args.out}")
    return 0


def cmd_estimate_gap(args):
    cfg = _load_cfg(args)
    offline_flow = flow_mod.load_flow(_require_file(args.offline_flow, "offline flow checkpoint"))
    online_flow = flow_mod.load_flow(_require_file(args.online_flow, "online flow checkpoint"))
    composite = flow_mod.CompositeFlow(offline_flow, online_flow)
    dataset = persist.read_dataset(_require_file(args.dataset, "dataset CSV"))
    n = len(dataset) if args.n is None else min(args.n, len(dataset))
    states, actions = dataset.states[:n], dataset.actions[:n]
    m = args.m if args.m is not None else cfg["rl.gap_samples"]
    rng = np.random.default_rng(args.seed)
    estimates = gap_mod.estimate_gap_batch(composite, states, actions, m, rng)
    gap_mod.write_gap_report(args.out, states, actions, estimates, args.seed)
    values = gap_mod.gap_values(estimates)
    print(f"wrote {n} gap estimates to {args.out} "
          f"(mean {values.mean():.4f}, max {values.max():.4f})")
    return 0


def _train_one_seed(packed):
    cfg_items, seed, out_dir, offline_dataset_path, offline_flow_path = packed
    cfg = persist.make_config(cfg_items)
    rl_cfg = rl_config_from(cfg)
    pair = make_env_pair(cfg)
    root = persist.runs_root(cfg, out_dir)
    run_dir = persist.run_directory(root, cfg, seed)
    persist.write_manifest(run_dir, cfg, [seed])
    ckpt_root = os.path.join(run_dir, "checkpoints")

    offline_dataset = None
    offline_flow = None
    if rl_cfg.method in ("compflow", "bcsac"):
        if offline_dataset_path is None:
            raise persist.ConfigError(f"method {rl_cfg.method!r} requires --offline-dataset")
        offline_dataset = persist.read_dataset(
            _require_file(offline_dataset_path, "offline dataset CSV"))
    if rl_cfg.method == "compflow":
        flow_ckpt = offline_flow_path or os.path.join(run_dir, "offline_flow.flow")
        if os.path.exists(flow_ckpt):
            offline_flow = flow_mod.load_flow(flow_ckpt)
        else:
            fcfg = persist.flow_train_config(cfg, "flow.offline_iters")
            offline_flow = flow_mod.train_offline_flow(
                offline_dataset, fcfg, np.random.default_rng(seed))
            flow_mod.save_flow(offline_flow, flow_ckpt)

    resume = None
    latest = persist.latest_checkpoint(ckpt_root)
    metrics_path = os.path.join(run_dir, "metrics.csv")
    if latest is not None:
        resume = persist.load_checkpoint(latest)
        resume_step = resume["meta"]["step"]
        if resume_step >= rl_cfg.total_interactions:
            print(f"seed {seed}: already complete at step {resume_step}", file=sys.stderr)
            return run_dir
        if os.path.exists(metrics_path):
            mf = persist.read_metrics(metrics_path)
            kept = [r for r in mf.records if r["step"] <= resume_step]
            with persist.MetricsWriter(metrics_path) as mw:
                for r in kept:
                    mw.write(r)
        print(f"seed {seed}: resuming from step {resume_step}", file=sys.stderr)

    writer = persist.MetricsWriter(metrics_path, resume=resume is not None)

    def checkpoint_fn(step, snapshot):
        persist.save_checkpoint(ckpt_root, step, snapshot)

    try:
        result = agent_mod.run_compflow(
            pair, offline_dataset, rl_cfg, seed,
            offline_flow=offline_flow,
            flow_cfg=persist.flow_train_config(cfg, "flow.online_iters"),
            metrics_sink=writer.write,
            checkpoint_fn=checkpoint_fn,
            resume=resume,
        )
    finally:
        writer.close()
    if result.metrics:
        last = result.metrics[-1]
        print(f"seed {seed}: final eval return {last['eval_return_mean']:.3f} "
              f"+- {last['eval_return_std']:.3f}")
    if result.audit.filter_violations or result.audit.coupling.violations:
        print(f"seed {seed}: AUDIT VIOLATIONS filter={result.audit.filter_violations} "
              f"coupling={result.audit.coupling.violations}", file=sys.stderr)
    return run_dir


def cmd_train(args):
    cfg = _load_cfg(args)
    cfg["rl.method"] = args.method
    persist.reset_dataset_read_log()
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    if not seeds:
        raise persist.ConfigError("--seeds must name at least one seed")
    packed = [(dict(cfg), seed, args.out_dir, args.offline_dataset, args.offline_flow)
              for seed in seeds]
    if args.parallel and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(len(seeds), os.cpu_count() or 1)) as pool:
            run_dirs = list(pool.map(_train_one_seed, packed))
    else:
        run_dirs = [_train_one_seed(p) for p in packed]
    for d in run_dirs:
        print(f"run directory: {d}")
    if args.audit_files:
        for path in persist.dataset_read_log():
            print(f"dataset-file-read: {path}", file=sys.stderr)
    return 0


def cmd_eval(args):
    cfg_manifest = persist.read_manifest(args.run_dir)
    cfg = persist.make_config(cfg_manifest["config"])
    pair = make_env_pair(cfg)
    rl_cfg = rl_config_from(cfg)
    latest = persist.latest_checkpoint(os.path.join(args.run_dir, "checkpoints"))
    if latest is None:
        raise FileNotFoundError(f"missing checkpoint: expected one under "
                                f"{os.path.join(args.run_dir, 'checkpoints')}")
    snapshot = persist.load_checkpoint(latest)
    nets = snapshot["nets"]
    env = pair.online
    agent = agent_mod.AgentState(
        actor=nets["actor"], q1=nets["q1"], q2=nets["q2"],
        target_q1=nets["target_q1"], target_q2=nets["target_q2"],
        opt_actor=None, opt_q1=None, opt_q2=None, cfg=rl_cfg,
        action_low=env.action_low, action_high=env.action_high,
    )
    mean, std = agent_mod.evaluate(agent, env, args.episodes,
                                   np.random.default_rng(args.seed))
    print(f"eval return over {args.episodes} episodes: {mean:.3f} +- {std:.3f}")
    return 0


def _plot_groups(tokens):
    groups: dict[str, list] = {}
    for token in tokens:
        if "=" in token:
            label, path = token.split("=", 1)
        else:
            path = token
            label = os.path.basename(os.path.dirname(os.path.abspath(token))) or token
        groups.setdefault(label, []).append(path)
    return list(groups.items())


def cmd_plot(args):
    groups = _plot_groups(args.runs)
    env_ids = set()
    for _, paths in groups:
        for p in paths:
            _require_file(p, "metrics CSV")
            manifest_path = os.path.join(os.path.dirname(os.path.abspath(p)), "manifest.json")
            if os.path.exists(manifest_path):
                env_ids.add(persist.read_manifest(os.path.dirname(manifest_path))["config"]["env.id"])
    if len(env_ids) > 1:
        raise ValueError(f"refusing to plot runs from different environments: {sorted(env_ids)}")
    persist.render_learning_curve(groups, args.out, title=args.title)
    print(f"wrote {args.out}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_config_args(p):
    p.add_argument("--config", help="config file (flat key = value text)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys and defaults:\n" + "\n".join(persist.config_help_lines())
    kw = dict(formatter_class=argparse.RawDescriptionHelpFormatter, epilog=epilog)
    parser = argparse.ArgumentParser(prog="compflow", description=__doc__, **kw)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="roll out a behavior policy and save transitions", **kw)
    p.add_argument("--env", required=True, choices=["pointmass", "gaussian", "patrol"])
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--member", choices=["offline", "online"], default="offline")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="dataset.csv")
    _add_config_args(p)
    p.set_defaults(fn=cmd_gen_dataset)

    p = sub.add_parser("train-offline-flow", help="fit the offline conditional flow", **kw)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_config_args(p)
    p.set_defaults(fn=cmd_train_offline_flow)

    p = sub.add_parser("train-online-flow", help="fit the online flow from OT-coupled pairs", **kw)
    p.add_argument("--offline-flow", required=True)
    p.add_argument("--dataset", required=True, help="online transitions CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_config_args(p)
    p.set_defaults(fn=cmd_train_online_flow)

    p = sub.add_parser("estimate-gap", help="Monte-Carlo dynamics-gap report", **kw)
    p.add_argument("--offline-flow", required=True)
    p.add_argument("--online-flow", required=True)
    p.add_argument("--dataset", required=True, help="CSV supplying the queried (s, a) pairs")
    p.add_argument("--n", type=int, default=None, help="limit the number of queried pairs")
    p.add_argument("--m", type=int, default=None, help="Monte-Carlo samples per pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="gap-report.csv")
    _add_config_args(p)
    p.set_defaults(fn=cmd_estimate_gap)

    p = sub.add_parser("train", help="run RL training (resumes from the last checkpoint)", **kw)
    p.add_argument("--method", required=True, choices=["compflow", "sac", "bcsac"])
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--offline-dataset", default=None)
    p.add_argument("--offline-flow", default=None,
                   help="pretrained offline flow checkpoint (compflow only)")
    p.add_argument("--out-dir", default=None, help="runs root (COMPFLOW_RUNS_DIR overrides)")
    p.add_argument("--parallel", action="store_true",
                   help="run seeds as concurrent worker processes")
    p.add_argument("--audit-files", action="store_true",
                   help="print every dataset file read to stderr")
    _add_config_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained agent checkpoint", **kw)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="render learning curves to SVG", **kw)
    p.add_argument("runs", nargs="+", metavar="LABEL=metrics.csv",
                   help="metrics files, optionally labeled; same label = one group")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="evaluation return")
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
