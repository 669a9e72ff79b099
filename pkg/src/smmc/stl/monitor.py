"""Boolean dense-time monitoring of STL formulas on piecewise-constant trajectories."""

from __future__ import annotations

import operator

import numpy as np

from ..pctmc import Trajectory
from .ast import And, Atom, BinOp, Diff, Formula, Neg, Not, Num, TrueF, Until, Var, identifiers, temporal_depth
from .signals import BoolSignal


class UnboundIdentifierError(KeyError):
    pass


class HorizonError(ValueError):
    pass


_COMPARE = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
}
_ARITH = {"+": operator.add, "-": operator.sub, "*": operator.mul}


def _eval_expr(expr, columns: dict[str, int], states: np.ndarray):
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        return states[:, columns[expr.name]]
    if isinstance(expr, Diff):
        col = states[:, columns[expr.name]]
        return np.diff(col, prepend=col[:1])
    if isinstance(expr, Neg):
        return -_eval_expr(expr.arg, columns, states)
    return _ARITH[expr.op](_eval_expr(expr.left, columns, states), _eval_expr(expr.right, columns, states))


def _columns(species, names) -> dict[str, int]:
    index = {s: i for i, s in enumerate(species)}
    missing = sorted(n for n in names if n not in index)
    if missing:
        raise UnboundIdentifierError(f"unbound identifier(s) {', '.join(missing)}; species are {list(species)}")
    return {n: index[n] for n in names}


def _runs_signal(times: np.ndarray, values: np.ndarray, horizon: float) -> BoolSignal:
    values = np.broadcast_to(values, times.shape)
    if not values.any():
        return BoolSignal((), horizon)
    if values.all():
        return BoolSignal.true(horizon)
    edges = np.flatnonzero(values[1:] != values[:-1]) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [len(values)]))
    out = []
    for s, e in zip(starts.tolist(), ends.tolist()):
        if values[s]:
            if e < len(times):
                out.append((float(times[s]), 0, float(times[e]), -1))
            else:
                out.append((float(times[s]), 0, float(horizon), 0))
    return BoolSignal(tuple(out), horizon)


def atom_signal(atom: Atom, trajectory: Trajectory) -> BoolSignal:
    """Truth set of a comparison atom along ``trajectory``.

    ``D(X)`` on segment k is the jump of X at the event that opened it
    (zero on the first segment).
    """
    cols = _columns(trajectory.species, identifiers(atom))
    lhs = _eval_expr(atom.left, cols, trajectory.states)
    rhs = _eval_expr(atom.right, cols, trajectory.states)
    values = np.asarray(_COMPARE[atom.op](lhs, rhs))
    return _runs_signal(np.asarray(trajectory.times), values, trajectory.horizon)


def satisfaction_signal(phi: Formula, trajectory: Trajectory) -> BoolSignal:
    """Full truth set of ``phi`` over ``[0, horizon]``.

    Times beyond the horizon count as unsatisfied for every subformula.
    """
    if isinstance(phi, TrueF):
        return BoolSignal.true(trajectory.horizon)
    if isinstance(phi, Atom):
        return atom_signal(phi, trajectory)
    if isinstance(phi, Not):
        return satisfaction_signal(phi.arg, trajectory).negate()
    if isinstance(phi, And):
        return satisfaction_signal(phi.left, trajectory).conjoin(satisfaction_signal(phi.right, trajectory))
    if isinstance(phi, Until):
        return satisfaction_signal(phi.left, trajectory).until(
            satisfaction_signal(phi.right, trajectory), phi.lo, phi.hi
        )
    raise TypeError(f"not a formula node: {phi!r}")


def check_formula(phi: Formula, species, horizon: float) -> None:
    """Raise if ``phi`` names unknown species or needs more time than ``horizon``."""
    _columns(species, identifiers(phi))
    depth = temporal_depth(phi)
    if depth > horizon:
        raise HorizonError(f"formula needs a time window of {depth} but the trajectory horizon is {horizon}")


def monitor(phi: Formula, trajectory: Trajectory, checked: bool = False) -> bool:
    """Boolean satisfaction of ``phi`` at time 0."""
    if not checked:
        check_formula(phi, trajectory.species, trajectory.horizon)
    return satisfaction_signal(phi, trajectory).at_zero()
