"""
Replaying a feed through the serving loop
=========================================

Every vessel in this world switches its transponder off once for about an
hour. The server notices each silence from the feed clock and answers with
the top cells for the step after the last report.
"""

# %%
from darkabduce.geospace import FeatureConfig, prepare_grid
from darkabduce.learner import learn
from darkabduce.stream import Server, ServeConfig
from darkabduce.synth import generate, two_route_world

world = two_route_world(gap_prob=1.0)
tracks = generate(world, 40, 40, bin_seconds=600)
history, live = tracks[:30], tracks[30:]
grid = prepare_grid(history, 0.025, FeatureConfig(port_locations=world.ports))
rules = learn(history, grid, bin_seconds=600).rules

# %%
records = sorted((p.timestamp, t.agent_id, p) for t in live for p in t.points)
lines = [f"{a} {ts} {p.location.lon} {p.location.lat}" for ts, a, p in records]

alerts = []
server = Server(rules, grid, ServeConfig(k=5, bin_seconds=600, max_speed_kmh=46.3), alerts.append)
stats = server.run(lines)
print(stats)
for a in alerts[:4]:
    print(a["agent"], a["horizon"], [r["region_id"] for r in a["regions"]])
