"""
Annotated rules and the minimal model
=====================================

A vessel seen near a port, then in a hotspot cell, and one learned rule
that says this transition is normal with confidence 0.8.
"""

# %%
from darkabduce.learner import transition_rule
from darkabduce.logic import MULTI, TRUE, Program, TemporalFact, at, feature, minimal_model, normal, parsimony
from darkabduce.syntax import format_rule

rule = transition_rule("nearport", "hotspot", 0.8, MULTI)
print(format_rule(rule))

# %%
# Region labels hold at every step; the vessel is observed twice.
labels = {feature("nearport", "r_port"): TRUE, feature("hotspot", "r_box"): TRUE}
facts = [TemporalFact(at("v1", "r_port"), TRUE, 0), TemporalFact(at("v1", "r_box"), TRUE, 1)]
prog = Program(facts, [rule], max_timestep=1, persistent=labels)

model = minimal_model(prog)
for (atom, t), iv in sorted(model.cells().items(), key=lambda kv: (kv[0][1], str(kv[0][0]))):
    print(t, atom, iv)

# %%
# The parsimony score is the lower bound of normal(v1) at the query step.
print("score at t=1:", parsimony("v1", prog, 1))
print("normal(v1) at t=0:", model.value(normal("v1"), 0))
