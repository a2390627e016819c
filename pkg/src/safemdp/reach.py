"""Set operators for safety, reachability and returnability.

All operators take and return boolean masks over the states of an
:class:`~safemdp.mdp.Mdp`.  They are monotone in their set arguments, which
the exploration algorithm relies on, and the fixpoint variants stabilize
after at most ``|S|`` (respectively ``|S| + 1``) applications.
"""

from __future__ import annotations

import numpy as np

from .mdp import Mdp


def _as_mask(mdp: Mdp, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (mdp.num_states,):
        raise ValueError(f"expected a mask over {mdp.num_states} states, got shape {mask.shape}")
    return mask


def r_safe_eps(mdp: Mdp, base, r_values, eps: float, lipschitz: float, threshold: float) -> np.ndarray:
    """States whose safety follows from ``base`` by a Lipschitz argument.

    A state ``s`` is included when some ``s'`` in ``base`` satisfies
    ``r(s') - eps - lipschitz * d(s, s') >= threshold``; ``base`` itself is
    always included.
    """
    base = _as_mask(mdp, base)
    r_values = np.asarray(r_values, dtype=float)
    out = base.copy()
    witnesses = np.flatnonzero(base)
    if witnesses.size:
        dist = mdp.distances(witnesses, np.arange(mdp.num_states))
        bound = r_values[witnesses][:, None] - eps - lipschitz * dist
        out |= (bound >= threshold).any(axis=0)
    return out


def r_reach(mdp: Mdp, base) -> np.ndarray:
    """``base`` plus everything reachable from it in one action."""
    base = _as_mask(mdp, base)
    src, _, dst = mdp.edges()
    out = base.copy()
    out[dst[base[src]]] = True
    return out


def r_ret_one(mdp: Mdp, through, target) -> np.ndarray:
    """One-step returnability: ``target`` plus the states of ``through``
    with an action leading into ``target``."""
    through = _as_mask(mdp, through)
    target = _as_mask(mdp, target)
    src, _, dst = mdp.edges()
    out = target.copy()
    hits = through[src] & target[dst]
    out[src[hits]] = True
    return out


def r_ret_fixpoint(mdp: Mdp, through, target, *, count: bool = False):
    """States that can return to ``target`` along a path inside ``through``.

    Iterates :func:`r_ret_one` to its least fixpoint, which takes at most
    ``|S|`` applications.  With ``count=True`` the number of applications is
    returned alongside the mask.
    """
    current = _as_mask(mdp, target).copy()
    applications = 0
    while True:
        grown = r_ret_one(mdp, through, current)
        applications += 1
        if np.array_equal(grown, current):
            break
        current = grown
    if count:
        return current, applications
    return current


def r_eps(mdp: Mdp, base, r_values, eps: float, lipschitz: float, threshold: float) -> np.ndarray:
    """One expansion round: safe by Lipschitz, reachable in a step, and able
    to return to ``base`` through the enlarged safe set."""
    base = _as_mask(mdp, base)
    if not base.any():
        return base.copy()
    safe = r_safe_eps(mdp, base, r_values, eps, lipschitz, threshold)
    reachable = r_reach(mdp, base)
    returnable = r_ret_fixpoint(mdp, safe, base)
    return safe & reachable & returnable


def r_eps_fixpoint(mdp: Mdp, seed, r_values, eps: float, lipschitz: float,
                   threshold: float, *, count: bool = False):
    """Largest set safely explorable from ``seed``: the least fixpoint of
    :func:`r_eps`, reached within ``|S| + 1`` applications."""
    current = _as_mask(mdp, seed).copy()
    applications = 0
    while True:
        grown = r_eps(mdp, current, r_values, eps, lipschitz, threshold)
        applications += 1
        if np.array_equal(grown, current):
            break
        current = grown
    if count:
        return current, applications
    return current
