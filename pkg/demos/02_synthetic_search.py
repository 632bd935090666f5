"""
Searching for a vessel on synthetic traffic
===========================================

Two shipping lanes leave one port and each crosses a hotspot. We learn
transition rules on 100 vessels, hide the second half of a held-out track
and ask for the ten most plausible cells one step after it went quiet.
"""

# %%
from darkabduce.abduction import AbductionQuery, abduce_top_k
from darkabduce.evaluation import ABD, RND, EvalWindow, ExperimentConfig, ground_truth_cells, run_experiment, score
from darkabduce.geospace import FeatureConfig, prepare_grid
from darkabduce.learner import learn
from darkabduce.synth import generate, two_route_world
from darkabduce.syntax import format_rule
from darkabduce.trajectories import MID50, TimeBinning, mask

world = two_route_world()
tracks = generate(world, 130, 40, bin_seconds=600)
train, test = tracks[:100], tracks[100:]
features = FeatureConfig(port_locations=world.ports)

grid = prepare_grid(train, 0.025, features)
rules = learn(train, grid, bin_seconds=600)
print(len(grid.candidate_ids), "candidate cells,", len(rules), "rules")
for r in sorted(rules.rules, key=lambda r: -r.head_annotation.lower)[:5]:
    print(" ", format_rule(r))

# %%
pair = mask(test[0], MID50, features)
bins = TimeBinning(pair.prefix.points[0].timestamp, 600)
last = bins.timestep(pair.prefix.points[-1].timestamp)
q = AbductionQuery(test[0].agent_id, pair.prefix, rules.rules, grid, bins, last + 1, k=10, max_speed_kmh=46.3)
ex = abduce_top_k(q)
for r in ex.regions:
    print(r.region, round(r.score, 3), sorted(grid.labels_of(r.region)), r.fired_rules)

truth = ground_truth_cells(pair.suffix, grid, bins, q.horizon, EvalWindow())
print("hidden cells:", sorted(truth))
print(score(ex.region_ids, truth, grid))

# %%
# The same protocol over all 30 held-out tracks, against random cells.
report = run_experiment("f1_vs_k", train, test, ExperimentConfig(bin_seconds=600, features=features))
for k in (1, 5, 10, 15):
    print(f"k={k:2d}  ABD F1 {report.mean('f1', ABD, k=k):.3f}   RND F1 {report.mean('f1', RND, k=k):.3f}")
