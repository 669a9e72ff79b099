"""Parametric population CTMCs: model representation, SSA simulation, random generation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

MASS_ACTION = "mass_action"
DENSITY_SCALED = "density_scaled"
RATE_LAWS = (MASS_ACTION, DENSITY_SCALED)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional spawn path.

    Distinct key tuples give statistically independent streams, so work items
    (parameter index, replicate, role) can be seeded without coordination.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Reaction:
    """One reaction channel.

    ``reactants`` and ``products`` are stoichiometry vectors over the model
    species.  ``rate_species`` holds the exponents of the rate law when they
    differ from the reactants (e.g. a catalyst that is not consumed); when
    ``None`` the rate law uses the reactant stoichiometry.
    """

    reactants: tuple[int, ...]
    products: tuple[int, ...]
    param_index: int
    rate_law: str = MASS_ACTION
    label: str = ""
    rate_species: tuple[int, ...] | None = None

    @property
    def update(self) -> np.ndarray:
        return np.asarray(self.products, dtype=np.int64) - np.asarray(self.reactants, dtype=np.int64)

    @property
    def rate_exponents(self) -> tuple[int, ...]:
        return self.reactants if self.rate_species is None else self.rate_species


@dataclass(frozen=True)
class PCTMCModel:
    species: tuple[str, ...]
    init_state: tuple[int, ...]
    reactions: tuple[Reaction, ...]
    param_space: tuple[tuple[float, float], ...]
    population_size_constant: int | None = None
    name: str = ""

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_params(self) -> int:
        return len(self.param_space)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.param_space], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.param_space], dtype=float)

    def with_param_space(self, space: Sequence[Sequence[float]]) -> PCTMCModel:
        return PCTMCModel(
            species=self.species,
            init_state=self.init_state,
            reactions=self.reactions,
            param_space=tuple((float(lo), float(hi)) for lo, hi in space),
            population_size_constant=self.population_size_constant,
            name=self.name,
        )

    def to_dict(self) -> dict:
        def as_map(vec):
            return {s: int(c) for s, c in zip(self.species, vec) if c}

        reactions = []
        for rx in self.reactions:
            entry = {
                "label": rx.label,
                "reactants": as_map(rx.reactants),
                "products": as_map(rx.products),
                "rate_law": rx.rate_law,
                "param_index": rx.param_index,
            }
            if rx.rate_species is not None:
                entry["rate_species"] = as_map(rx.rate_species)
            reactions.append(entry)
        return {
            "name": self.name,
            "species": list(self.species),
            "init_state": {s: int(c) for s, c in zip(self.species, self.init_state)},
            "reactions": reactions,
            "param_space": [[lo, hi] for lo, hi in self.param_space],
            "population_size_constant": self.population_size_constant,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> PCTMCModel:
        species = tuple(doc["species"])
        index = {s: i for i, s in enumerate(species)}

        def as_vec(mapping, what):
            vec = [0] * len(species)
            for name, count in (mapping or {}).items():
                if name not in index:
                    raise ValueError(f"{what} references unknown species {name!r}")
                vec[index[name]] = int(count)
            return tuple(vec)

        init = doc["init_state"]
        if isinstance(init, dict):
            init_state = as_vec(init, "init_state")
        else:
            init_state = tuple(int(c) for c in init)
        reactions = []
        for i, rx in enumerate(doc["reactions"]):
            label = rx.get("label", f"R{i + 1}")
            reactions.append(
                Reaction(
                    reactants=as_vec(rx.get("reactants"), label),
                    products=as_vec(rx.get("products"), label),
                    param_index=int(rx["param_index"]),
                    rate_law=rx.get("rate_law", MASS_ACTION),
                    label=label,
                    rate_species=as_vec(rx["rate_species"], label) if "rate_species" in rx else None,
                )
            )
        n_const = doc.get("population_size_constant")
        return cls(
            species=species,
            init_state=init_state,
            reactions=tuple(reactions),
            param_space=tuple((float(lo), float(hi)) for lo, hi in doc["param_space"]),
            population_size_constant=None if n_const is None else int(n_const),
            name=doc.get("name", ""),
        )

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_model(path: str | Path) -> PCTMCModel:
    with open(path) as fh:
        return PCTMCModel.from_dict(json.load(fh))


def save_model(model: PCTMCModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)
        fh.write("\n")


def bundled_model(name: str = "sir") -> PCTMCModel:
    """Load a model shipped with the package (currently only ``sir``)."""
    text = resources.files("smmc").joinpath("data").joinpath(f"{name}.json").read_text()
    return PCTMCModel.from_dict(json.loads(text))


def validate_model(model: PCTMCModel) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    problems = []
    n = model.n_species
    if len(set(model.species)) != n:
        problems.append("species names are not unique")
    if len(model.init_state) != n:
        problems.append(f"init_state has {len(model.init_state)} entries for {n} species")
    elif any(c < 0 for c in model.init_state):
        negative = [s for s, c in zip(model.species, model.init_state) if c < 0]
        problems.append(f"negative initial counts for species {negative}")
    if len(model.reactions) != model.n_params:
        problems.append(
            f"model has {len(model.reactions)} reactions but a {model.n_params}-dimensional parameter space"
        )
    for lo, hi in model.param_space:
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi or lo < 0:
            problems.append(f"invalid parameter interval [{lo}, {hi}]")
    seen_params = []
    for i, rx in enumerate(model.reactions):
        name = rx.label or f"reaction {i}"
        vectors = [("reactants", rx.reactants), ("products", rx.products)]
        if rx.rate_species is not None:
            vectors.append(("rate_species", rx.rate_species))
        for what, vec in vectors:
            if len(vec) != n:
                problems.append(f"{name}: {what} vector has length {len(vec)}, expected {n}")
            elif any(c < 0 for c in vec):
                problems.append(f"{name}: negative {what} stoichiometry")
        if len(rx.reactants) == n and sum(rx.reactants) > 2:
            problems.append(f"{name}: total reactant multiplicity {sum(rx.reactants)} exceeds 2")
        if rx.rate_law not in RATE_LAWS:
            problems.append(f"{name}: unknown rate law {rx.rate_law!r}")
        if rx.rate_law == DENSITY_SCALED and not model.population_size_constant:
            problems.append(f"{name}: density_scaled rate law needs a positive population_size_constant")
        if not 0 <= rx.param_index < model.n_params:
            problems.append(f"{name}: parameter index {rx.param_index} out of range")
        seen_params.append(rx.param_index)
    if len(set(seen_params)) != len(seen_params):
        problems.append("several reactions share one parameter index")
    return problems


def _check_params(model: PCTMCModel, params) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.shape != (model.n_params,):
        raise ValueError(f"expected {model.n_params} parameters, got shape {params.shape}")
    if np.any(params < 0):
        raise ValueError("rate parameters must be nonnegative")
    return params


@dataclass(frozen=True)
class CompiledModel:
    """Dense array form of a model, as consumed by the simulation kernel."""

    reactants: np.ndarray  # (r, n)
    exponents: np.ndarray  # (r, n)
    updates: np.ndarray  # (r, n)
    scale: np.ndarray  # (r,) multiplicative factor per reaction
    param_index: np.ndarray  # (r,)
    init_state: np.ndarray  # (n,)

    @classmethod
    def from_model(cls, model: PCTMCModel) -> CompiledModel:
        problems = validate_model(model)
        if problems:
            raise ValueError("invalid model: " + "; ".join(problems))
        scale = np.ones(len(model.reactions))
        for i, rx in enumerate(model.reactions):
            if rx.rate_law == DENSITY_SCALED:
                scale[i] = 1.0 / model.population_size_constant
        return cls(
            reactants=np.array([rx.reactants for rx in model.reactions], dtype=np.int64).reshape(-1, model.n_species),
            exponents=np.array([rx.rate_exponents for rx in model.reactions], dtype=np.int64).reshape(
                -1, model.n_species
            ),
            updates=np.array([rx.update for rx in model.reactions], dtype=np.int64).reshape(-1, model.n_species),
            scale=scale,
            param_index=np.array([rx.param_index for rx in model.reactions], dtype=np.int64),
            init_state=np.array(model.init_state, dtype=np.int64),
        )


@numba.njit(cache=True, nogil=True)
def _propensities(reactants, exponents, scale, rates, x, out):
    total = 0.0
    r, n = reactants.shape
    for i in range(r):
        a = rates[i] * scale[i]
        for j in range(n):
            if x[j] < reactants[i, j]:
                a = 0.0
                break
            for c in range(exponents[i, j]):
                a *= x[j] - c
        if a < 0.0:
            a = 0.0
        out[i] = a
        total += a
    return total


@numba.njit(cache=True, nogil=True)
def _ssa_batch(reactants, exponents, updates, scale, rates, x0, horizon, runs, rng):
    r, n = reactants.shape
    cap = 1024
    times = np.empty(cap)
    states = np.empty((cap, n), dtype=np.int64)
    offsets = np.empty(runs + 1, dtype=np.int64)
    props = np.empty(r)
    x = np.empty(n, dtype=np.int64)
    k = 0
    for run in range(runs):
        offsets[run] = k
        t = 0.0
        for j in range(n):
            x[j] = x0[j]
        while True:
            if k >= cap:
                cap *= 2
                times2 = np.empty(cap)
                states2 = np.empty((cap, n), dtype=np.int64)
                times2[:k] = times[:k]
                states2[:k] = states[:k]
                times = times2
                states = states2
            times[k] = t
            states[k] = x
            k += 1
            a0 = _propensities(reactants, exponents, scale, rates, x, props)
            if a0 <= 0.0:
                break
            t = t + rng.exponential(1.0 / a0)
            if t > horizon:
                break
            u = rng.random() * a0
            acc = 0.0
            chosen = r - 1
            for i in range(r):
                acc += props[i]
                if u < acc and props[i] > 0.0:
                    chosen = i
                    break
            # guard against round-off selecting a disabled channel
            while props[chosen] <= 0.0:
                chosen -= 1
            for j in range(n):
                x[j] += updates[chosen, j]
    offsets[runs] = k
    return times[:k], states[:k], offsets


@dataclass(frozen=True)
class Trajectory:
    """Event-based sample path: ``states[k]`` holds on ``[times[k], times[k+1])``.

    The last state holds up to and including ``horizon``.
    """

    times: np.ndarray
    states: np.ndarray
    horizon: float
    species: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.times) != len(self.states) or len(self.times) == 0:
            raise ValueError("times and states must be nonempty and of equal length")
        if self.times[0] != 0.0:
            raise ValueError("trajectories start at time 0")
        if self.times[-1] > self.horizon:
            raise ValueError("last jump lies beyond the horizon")

    def __len__(self) -> int:
        return len(self.times)

    def value_at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[max(k, 0)]


def propensity(model: PCTMCModel, state, params, reaction_index: int) -> float:
    """Rate of one reaction channel in ``state`` under rate parameters ``params``."""
    if not 0 <= reaction_index < len(model.reactions):
        raise IndexError(f"reaction index {reaction_index} out of range")
    params = _check_params(model, params)
    compiled = CompiledModel.from_model(model)
    x = np.asarray(state, dtype=np.int64)
    out = np.empty(len(model.reactions))
    _propensities(compiled.reactants, compiled.exponents, compiled.scale, params[compiled.param_index], x, out)
    return float(out[reaction_index])


def simulate_batch(
    model: PCTMCModel | CompiledModel,
    params,
    horizon: float,
    runs: int,
    rng: np.random.Generator,
    species: tuple[str, ...] = (),
) -> list[Trajectory]:
    """Run ``runs`` independent SSA paths sequentially from one generator."""
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if isinstance(model, PCTMCModel):
        params = _check_params(model, params)
        species = model.species
        model = CompiledModel.from_model(model)
    else:
        params = np.asarray(params, dtype=float)
    rates = params[model.param_index]
    times, states, offsets = _ssa_batch(
        model.reactants, model.exponents, model.updates, model.scale, rates, model.init_state,
        float(horizon), int(runs), rng,
    )
    return [
        Trajectory(times[offsets[i]:offsets[i + 1]], states[offsets[i]:offsets[i + 1]], float(horizon), species)
        for i in range(runs)
    ]


def ssa_simulate(model: PCTMCModel, params, horizon: float, rng: np.random.Generator) -> Trajectory:
    """Gillespie direct-method sample path of ``model`` up to ``horizon``."""
    return simulate_batch(model, params, horizon, 1, rng)[0]


# Reaction shapes for random generation and their sampling probabilities.
REACTION_TYPES = ("bimolecular", "split", "conversion", "degradation", "birth")
REACTION_TYPE_PROBS = (0.25, 0.25, 0.25, 0.125, 0.125)


def _random_reaction(kind: str, n: int, rng: np.random.Generator):
    def draw(count):
        return [int(s) for s in rng.integers(0, n, size=count)]

    alpha = [0] * n
    beta = [0] * n
    if kind == "bimolecular":
        i, j, k = draw(3)
        alpha[i] += 1
        alpha[j] += 1
        beta[k] += 1
    elif kind == "split":
        i, j, k = draw(3)
        alpha[i] += 1
        beta[j] += 1
        beta[k] += 1
    elif kind == "conversion":
        i, j = draw(2)
        alpha[i] += 1
        beta[j] += 1
    elif kind == "degradation":
        (i,) = draw(1)
        alpha[i] += 1
    else:
        (i,) = draw(1)
        beta[i] += 1
    return tuple(alpha), tuple(beta)


def random_pctmc(
    r: int,
    rng: np.random.Generator,
    max_init: int = 10,
    space: tuple[float, float] = (0.001, 1.0),
    max_attempts: int = 1000,
) -> PCTMCModel:
    """Draw a well-formed, non-redundant random pCTMC with ``r`` reactions.

    Species are drawn from a pool of ``r + 1``; species that end up unused
    are dropped, so the model has at most ``r + 1`` species.  A reaction whose
    species draw is a no-op or duplicates an earlier reaction is redrawn with
    the same reaction type, which keeps the type frequencies exact.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    pool = r + 1
    kinds = rng.choice(len(REACTION_TYPES), size=r, p=REACTION_TYPE_PROBS)
    shapes = []
    for kind in kinds:
        for _ in range(max_attempts):
            alpha, beta = _random_reaction(REACTION_TYPES[kind], pool, rng)
            if alpha != beta and (alpha, beta) not in shapes:
                shapes.append((alpha, beta))
                break
        else:
            raise RuntimeError("could not draw a non-redundant reaction")
    used = [s for s in range(pool) if any(a[s] or b[s] for a, b in shapes)]
    init = rng.integers(0, max_init + 1, size=pool)
    species = tuple(f"S{s + 1}" for s in used)
    reactions = tuple(
        Reaction(
            reactants=tuple(alpha[s] for s in used),
            products=tuple(beta[s] for s in used),
            param_index=i,
            label=f"R{i + 1}:{REACTION_TYPES[kinds[i]]}",
        )
        for i, (alpha, beta) in enumerate(shapes)
    )
    return PCTMCModel(
        species=species,
        init_state=tuple(int(init[s]) for s in used),
        reactions=reactions,
        param_space=tuple((float(space[0]), float(space[1])) for _ in range(r)),
        name=f"random_r{r}",
    )


def random_pctmcs(r: int, count: int, seed: int) -> list[PCTMCModel]:
    """``count`` independent random models, model ``i`` seeded from ``(seed, i)``."""
    return [random_pctmc(r, make_rng(seed, i)) for i in range(count)]


def is_non_redundant(model: PCTMCModel) -> bool:
    shapes = [(rx.reactants, rx.products) for rx in model.reactions]
    if len(set(shapes)) != len(shapes):
        return False
    return all(any(rx.reactants[j] or rx.products[j] for rx in model.reactions) for j in range(model.n_species))
