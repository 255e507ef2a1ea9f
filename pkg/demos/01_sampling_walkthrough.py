"""
Subsampling a train split eight ways
====================================

Every baseline strategy keeps exactly the same number of interactions.
What differs is *which* users and items survive.
"""

import numpy as np

from svpcf import BASELINE_STRATEGIES, SampleSpec, generate_synthetic, make_split, sample
from svpcf.graph import build_graph

data = generate_synthetic(users=300, items=120, interactions=6000, seed=3)
split = make_split(data, "implicit", seed=0)
train = split.train
print(f"train: {len(train)} interactions, {train.num_users} users, {train.num_items} items")

# the graph is shared by the centrality / walk / fire samplers
graph = build_graph(train)

print(f"\n{'strategy':<20}{'kept':>6}{'users':>7}{'items':>7}")
for strategy in BASELINE_STRATEGIES:
    res = sample(train, SampleSpec(20, strategy, seed=1), graph)
    kept = res.retained
    users = int((kept.user_counts() > 0).sum())
    items = int((kept.item_counts() > 0).sum())
    print(f"{strategy:<20}{len(kept):>6}{users:>7}{items:>7}")

# user-level strategies keep whole histories, so fewer users survive;
# interaction-level ones spread the budget thin across everybody
head = sample(train, SampleSpec(20, "head-user", 1)).retained.user_counts()
print("\nhead-user keeps the", int((head > 0).sum()), "heaviest users, e.g.",
      np.sort(head)[-5:][::-1])
