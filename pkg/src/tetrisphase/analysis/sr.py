"""Symbolic regression by genetic programming over small expression trees.

Expressions are nested tuples: ('c', value), ('x', index), unary ('abs', t)
and ('sq', t), or binary ('+'|'-'|'*'|'/', left, right).  Fitness is the MSE
against the target; evolution uses tournament selection, subtree crossover
and mutation, and periodic hill-climbing of constants.  The result is the
complexity/accuracy Pareto front.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BINARY_OPS = ("+", "-", "*", "/")
UNARY_OPS = ("abs", "sq")
DIV_EPS = 1e-12


@dataclass(frozen=True)
class SrConfig:
    population: int = 256
    epochs: int = 6000  # generations; 6000 or 18000 are the stock choices
    mutation_rate: float = 0.3
    crossover_rate: float = 0.6
    tournament: int = 5
    max_complexity: int = 25
    parsimony: float = 1e-6  # complexity pressure added to tournament scores
    seed: int = 0
    const_opt_every: int = 50
    const_opt_iters: int = 120

    def __post_init__(self):
        if self.epochs < 1 or self.population < 4:
            raise ValueError("need epochs >= 1 and population >= 4")
        for r in (self.mutation_rate, self.crossover_rate):
            if not 0.0 <= r <= 1.0:
                raise ValueError("rates must lie in [0, 1]")


# ---- expression trees ----


def evaluate(tree, X: np.ndarray) -> np.ndarray:
    """Evaluate on features X (n, m).  Division by |den| < 1e-12 yields NaN,
    which marks the expression invalid at that point."""
    op = tree[0]
    if op == "c":
        return np.full(X.shape[0], tree[1], dtype=np.float64)
    if op == "x":
        return X[:, tree[1]].astype(np.float64)
    if op == "abs":
        return np.abs(evaluate(tree[1], X))
    if op == "sq":
        v = evaluate(tree[1], X)
        return v * v
    a = evaluate(tree[1], X)
    b = evaluate(tree[2], X)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return np.where(np.abs(b) < DIV_EPS, np.nan, a) / np.where(
            np.abs(b) < DIV_EPS, 1.0, b
        )
    raise ValueError(f"unknown op {op!r}")


def complexity(tree) -> int:
    op = tree[0]
    if op in ("c", "x"):
        return 1
    if op in UNARY_OPS:
        return 1 + complexity(tree[1])
    return 1 + complexity(tree[1]) + complexity(tree[2])


def to_string(tree, names=None) -> str:
    """Canonical infix text with constants at 6 significant digits."""
    op = tree[0]
    if op == "c":
        return f"{tree[1]:.6g}"
    if op == "x":
        return names[tree[1]] if names else f"x{tree[1]}"
    if op == "abs":
        return f"abs({to_string(tree[1], names)})"
    if op == "sq":
        return f"({to_string(tree[1], names)})^2"
    return f"({to_string(tree[1], names)} {op} {to_string(tree[2], names)})"


def _subtree_count(tree) -> int:
    return complexity(tree)


def _get_subtree(tree, index):
    """Preorder subtree access; index 0 is the root."""
    if index == 0:
        return tree
    index -= 1
    for child in tree[1:] if tree[0] in UNARY_OPS or tree[0] in BINARY_OPS else ():
        n = _subtree_count(child)
        if index < n:
            return _get_subtree(child, index)
        index -= n
    raise IndexError("subtree index out of range")


def _replace_subtree(tree, index, new):
    if index == 0:
        return new
    index -= 1
    if tree[0] in ("c", "x"):
        raise IndexError("subtree index out of range")
    children = list(tree[1:])
    for i, child in enumerate(children):
        n = _subtree_count(child)
        if index < n:
            children[i] = _replace_subtree(child, index, new)
            return (tree[0], *children)
        index -= n
    raise IndexError("subtree index out of range")


def _const_paths(tree, prefix=()):
    if tree[0] == "c":
        yield prefix
    elif tree[0] in UNARY_OPS or tree[0] in BINARY_OPS:
        for i, child in enumerate(tree[1:], start=1):
            yield from _const_paths(child, prefix + (i,))


def _get_at(tree, path):
    for i in path:
        tree = tree[i]
    return tree


def _set_at(tree, path, new):
    if not path:
        return new
    children = list(tree[1:])
    children[path[0] - 1] = _set_at(tree[path[0]], path[1:], new)
    return (tree[0], *children)


# ---- random generation and variation ----


def _random_tree(rng, n_features: int, depth: int, full: bool):
    if depth <= 0 or (not full and rng.random() < 0.3):
        if rng.random() < 0.5:
            return ("x", int(rng.integers(n_features)))
        return ("c", float(np.round(rng.uniform(-2.0, 2.0), 3)))
    if rng.random() < 0.25:
        return (UNARY_OPS[rng.integers(2)], _random_tree(rng, n_features, depth - 1, full))
    op = BINARY_OPS[rng.integers(4)]
    return (
        op,
        _random_tree(rng, n_features, depth - 1, full),
        _random_tree(rng, n_features, depth - 1, full),
    )


def _mutate(tree, rng, n_features: int):
    n = _subtree_count(tree)
    idx = int(rng.integers(n))
    return _replace_subtree(tree, idx, _random_tree(rng, n_features, int(rng.integers(1, 3)), False))


def _crossover(a, b, rng):
    ia = int(rng.integers(_subtree_count(a)))
    ib = int(rng.integers(_subtree_count(b)))
    return _replace_subtree(a, ia, _get_subtree(b, ib))


def _jitter_constants(tree, rng, sigma=0.3):
    out = tree
    for path in list(_const_paths(tree)):
        c = _get_at(out, path)[1]
        out = _set_at(out, path, ("c", float(c + sigma * rng.normal())))
    return out


def _mse(tree, X, y) -> float:
    with np.errstate(all="ignore"):
        pred = evaluate(tree, X)
        if not np.all(np.isfinite(pred)):
            return np.inf
        err = float(np.mean((pred - y) ** 2))
    return err if np.isfinite(err) else np.inf


def optimize_constants(tree, X, y, rng, iters: int = 120):
    """Greedy hill climbing on the constants with a decaying step size."""
    paths = list(_const_paths(tree))
    best_mse = _mse(tree, X, y)
    if not paths or not np.isfinite(best_mse):
        return tree, best_mse
    best = tree
    sigma = 0.5
    for _ in range(iters):
        cand = best
        for path in paths:
            if rng.random() < max(0.5, 1.0 / len(paths)):
                c = _get_at(cand, path)[1]
                step = sigma * rng.normal() * max(1.0, abs(c))
                cand = _set_at(cand, path, ("c", float(c + step)))
        m = _mse(cand, X, y)
        if m < best_mse:
            best, best_mse = cand, m
        sigma *= 0.97
    return best, best_mse


# ---- Pareto front ----


@dataclass
class Expression:
    """A fitted symbolic expression with its complexity and error."""

    tree: tuple
    complexity: int
    mse: float
    feature_names: list[str] | None = None

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            return evaluate(self.tree, np.atleast_2d(np.asarray(X, dtype=np.float64)))

    def __str__(self) -> str:
        return to_string(self.tree, self.feature_names)


class ParetoArchive:
    """Best MSE seen at each complexity; front = non-dominated subset."""

    def __init__(self):
        self.best: dict[int, tuple[float, tuple]] = {}

    def offer(self, tree, mse: float) -> None:
        if not np.isfinite(mse):
            return
        c = complexity(tree)
        cur = self.best.get(c)
        if cur is None or mse < cur[0]:
            self.best[c] = (mse, tree)

    def front(self) -> list[tuple[int, float, tuple]]:
        out = []
        best_so_far = np.inf
        for c in sorted(self.best):
            mse, tree = self.best[c]
            if mse < best_so_far - 1e-300:
                out.append((c, mse, tree))
                best_so_far = mse
        return out


# ---- main driver ----


def sr_fit(
    features: np.ndarray,
    target: np.ndarray,
    config: SrConfig,
    feature_names: list[str] | None = None,
) -> list[Expression]:
    """Evolve expressions fitting target from features; returns the Pareto
    front ordered by complexity (ascending)."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[0] == 1 and len(target) > 1:
        X = X.T
    y = np.asarray(target, dtype=np.float64)
    if X.shape[0] != len(y):
        raise ValueError("feature/target length mismatch")
    if X.shape[0] < 10:
        raise ValueError("need at least 10 data points")
    if X.shape[1] < 1:
        raise ValueError("need at least 1 feature")

    if float(np.var(y)) < 1e-24:
        const = ("c", float(y.mean()))
        return [
            Expression(const, 1, _mse(const, X, y), feature_names)
        ]

    rng = np.random.default_rng(config.seed)
    n_features = X.shape[1]
    archive = ParetoArchive()

    def fitness(tree):
        if complexity(tree) > config.max_complexity:
            return np.inf
        m = _mse(tree, X, y)
        archive.offer(tree, m)
        return m

    # ramped initialization, half grow / half full, depths 2..4
    population = []
    for i in range(config.population):
        depth = 2 + i % 3
        population.append(_random_tree(rng, n_features, depth, full=i % 2 == 0))
    scores = [fitness(t) for t in population]

    def tournament():
        idx = rng.integers(len(population), size=config.tournament)
        best_i = min(
            idx,
            key=lambda i: scores[i] + config.parsimony * complexity(population[i]),
        )
        return population[best_i]

    for gen in range(config.epochs):
        order = int(np.argmin(scores))
        new_pop = [population[order]]  # elitism
        while len(new_pop) < config.population:
            r = rng.random()
            if r < config.crossover_rate:
                child = _crossover(tournament(), tournament(), rng)
            elif r < config.crossover_rate + config.mutation_rate:
                child = _mutate(tournament(), rng, n_features)
            else:
                child = _jitter_constants(tournament(), rng)
            new_pop.append(child)
        population = new_pop
        scores = [fitness(t) for t in population]
        if (gen + 1) % config.const_opt_every == 0:
            # hill-climb constants of the current front members
            for c, m, tree in archive.front():
                tuned, tuned_mse = optimize_constants(
                    tree, X, y, rng, config.const_opt_iters
                )
                archive.offer(tuned, tuned_mse)
            best_i = int(np.argmin(scores))
            tuned, tuned_mse = optimize_constants(
                population[best_i], X, y, rng, config.const_opt_iters
            )
            archive.offer(tuned, tuned_mse)
            if tuned_mse < scores[best_i]:
                population[best_i] = tuned
                scores[best_i] = tuned_mse
        if min(scores) < 1e-15:
            break

    # final polish of the front
    for c, m, tree in archive.front():
        tuned, tuned_mse = optimize_constants(tree, X, y, rng, 4 * config.const_opt_iters)
        archive.offer(tuned, tuned_mse)
    return [
        Expression(tree, c, m, feature_names) for c, m, tree in archive.front()
    ]
