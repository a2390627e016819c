"""Shortest-path planning restricted to a set of allowed states.

Edges all have unit cost, so breadth-first search finds a minimum-hop path.
Neighbors are expanded in increasing action-label order and each state keeps
its first discovery, which makes the returned plan the lexicographically
smallest action sequence among all minimum-hop paths — a cheap way to keep
traces reproducible.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .mdp import Mdp


class NoPathError(Exception):
    """No path between the endpoints inside the allowed set."""


@dataclass
class PathPlan:
    """A concrete plan: ``states[0]`` is the start, ``states[-1]`` the goal,
    and ``actions[i]`` moves from ``states[i]`` to ``states[i + 1]``."""

    actions: list[int]
    states: list[int]

    def __len__(self) -> int:
        return len(self.actions)


def shortest_safe_path(mdp: Mdp, allowed, start: int, goal: int) -> PathPlan:
    """Minimum-hop path from ``start`` to ``goal`` visiting only ``allowed``
    states.

    Raises
    ------
    NoPathError
        If either endpoint lies outside ``allowed`` or no connecting path
        exists inside it.
    """
    allowed = np.asarray(allowed, dtype=bool)
    if not allowed[start]:
        raise NoPathError(f"start state {start} is not in the allowed set")
    if not allowed[goal]:
        raise NoPathError(f"goal state {goal} is not in the allowed set")
    if start == goal:
        return PathPlan([], [int(start)])

    prev_state = np.full(mdp.num_states, -1, dtype=int)
    prev_action = np.full(mdp.num_states, -1, dtype=int)
    seen = np.zeros(mdp.num_states, dtype=bool)
    seen[start] = True
    queue = deque([int(start)])
    while queue:
        s = queue.popleft()
        for label, succ in mdp.actions_of(s):
            if seen[succ] or not allowed[succ]:
                continue
            seen[succ] = True
            prev_state[succ] = s
            prev_action[succ] = label
            if succ == goal:
                queue.clear()
                break
            queue.append(succ)

    if not seen[goal]:
        raise NoPathError(f"no path from {start} to {goal} inside the allowed set")
    actions, states = [], [int(goal)]
    s = int(goal)
    while s != start:
        actions.append(int(prev_action[s]))
        s = int(prev_state[s])
        states.append(s)
    actions.reverse()
    states.reverse()
    return PathPlan(actions, states)
