"""
How well does a leaderboard survive sampling?
=============================================

Train the model slate on the full data and on every sample, rank the
models per (scenario, metric), and compare rankings with Kendall's tau.
Psi averages those taus over the grid; higher means the strategy keeps
the ordering of algorithms intact.
"""

from svpcf.experiment import config_from_dict, run_experiment

config = config_from_dict({
    "datasets": [{"name": "toy", "synthetic": {"users": 200, "items": 80,
                                               "interactions": 4000}}],
    "strategies": ["random-interaction", "head-user", "svp-cf-mf-interaction"],
    "percents": [80, 40, 10],
    "train": {"epochs": 8},
    "svp": {"epochs": 5},
})
result = run_experiment(config, progress=lambda k, n, t: print(f"  task {k}/{n}", end="\r"))
report = result.report

print("\npsi by strategy")
for strategy, psi in sorted(report.psi_mean.items(), key=lambda kv: -kv[1]):
    print(f"  {strategy:<24}{psi:+.3f}")

print("mean tau by percent")
for p, t in report.mean_tau_by_percent().items():
    print(f"  {p:>5g}%  {t:+.3f}")
