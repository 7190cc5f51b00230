"""One self-improvement round: explore, keep successes, retrain, re-evaluate.

The expert is biased (90% left detours), so the base policy inherits a
lopsided behavior distribution and fails on part of the evaluation block.
On-manifold exploration with alpha=2 diversifies rollouts; successful
episodes merge into the dataset and a short fine-tune lifts the success rate.

Run:  python3 demos/03_self_improvement.py   (a few minutes on a laptop CPU)
"""

from manex import (
    PolicyConfig,
    RoundPlan,
    TrainConfig,
    VibConfig,
    generate_demos,
    make_env_config,
    run_round,
    train,
)

env_cfg = make_env_config("planar-reach", expert_bias=0.9)
demos = generate_demos(env_cfg, n=10, seed=100)
train_cfg = TrainConfig(iterations=3000, seed=0)

print("training the base policy on 10 biased demos...")
bundle = train(
    demos,
    env_cfg.obs_dim,
    env_cfg.act_dim,
    PolicyConfig(),
    VibConfig(),
    train_cfg,
    env_name=env_cfg.name,
    max_step=env_cfg.max_step,
)

plan = RoundPlan(starts=20, attempts=5, alpha=2.0, cap=20, seed=1, mode="explore", eval_episodes=50)
print("running one exploration round (20 starts x 5 attempts)...")
new_bundle, merged, report = run_round(bundle, demos, plan, env_cfg, train_cfg)

print(f"\nsuccess rate:   {report.success_before:.2f} -> {report.success_after:.2f}")
if report.relative_improvement is not None:
    print(f"relative gain:  {report.relative_improvement:+.1%}")
print(f"pass@5:         {report.pass_at_5:.2f}")
print(f"average jerk:   {report.avg_jerk:.2f}")
print(f"rollouts used:  {report.rollouts_used}")
print(f"successes kept: {min(report.successes_collected, plan.cap)} (cap {plan.cap})")
print(f"dataset size:   {len(demos)} -> {len(merged)} episodes")
