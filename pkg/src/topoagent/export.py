"""Episode traces as JSON and topologies as Graphviz DOT."""
from __future__ import annotations

import json

from .env import EpisodeState
from .tkg import TemporalKG


def _topo(t) -> dict:
    return {"core": sorted(t.core), "periphery": sorted(t.periphery)}


def episode_trace(kg: TemporalKG, states: list[EpisodeState]) -> dict:
    """Per-step action and core/periphery quad ids, plus readable facts."""
    q = states[0].query
    steps, seen = [], set()
    for st in states:
        item = {"step": st.step, "subject": _topo(st.subject_topo),
                "object": _topo(st.object_topo), "reward": st.reward, "done": st.done}
        if st.action_history:
            item["action"] = kg.relations.name(st.action_history[-1])
        steps.append(item)
        for t in (st.subject_topo, st.object_topo):
            seen |= t.core | t.periphery
    final = states[-1]
    return {
        "query": {"subject": kg.entities.name(q.subject), "object": kg.entities.name(q.object),
                  "time": None if q.time is None or q.time < 0 else kg.times.name(q.time),
                  "relation": None if q.relation is None else kg.relations.name(q.relation)},
        "steps": steps,
        "actions": [kg.relations.name(a) for a in final.action_history],
        "reward": final.reward,
        "facts": {str(i): list(kg.describe(i)) for i in sorted(seen)},
    }


def _esc(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def _quote(s: str) -> str:
    return f'"{_esc(s)}"'


def topology_dot(kg: TemporalKG, state: EpisodeState) -> str:
    """Core facts as solid edges, periphery as dashed; query entities filled."""
    core = state.subject_topo.core | state.object_topo.core
    peri = (state.subject_topo.periphery | state.object_topo.periphery) - core
    q = state.query
    nodes = {q.subject, q.object}
    for i in core | peri:
        nodes.update((int(kg.subj[i]), int(kg.obj[i])))
    lines = ["digraph topology {", "  rankdir=LR;", "  node [shape=ellipse];"]
    for e in sorted(nodes):
        name = _quote(kg.entities.name(e))
        if e == q.subject:
            lines.append(f"  {name} [style=filled, fillcolor=lightblue, penwidth=2];")
        elif e == q.object:
            lines.append(f"  {name} [style=filled, fillcolor=lightsalmon, penwidth=2];")
        else:
            lines.append(f"  {name};")
    for i in sorted(core | peri):
        s, r, o, t = kg.describe(i)
        style = "solid" if i in core else "dashed"
        label = f'"{_esc(r)}\\n{_esc(t)}"'
        lines.append(f"  {_quote(s)} -> {_quote(o)} [label={label}, style={style}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_explanation(kg: TemporalKG, states: list[EpisodeState], trace_path, dot_path) -> dict:
    trace = episode_trace(kg, states)
    with open(trace_path, "w") as fh:
        json.dump(trace, fh, indent=1)
    with open(dot_path, "w") as fh:
        fh.write(topology_dot(kg, states[-1]))
    return trace
