"""Non-IID client partitioning within a domain.

Each client draws a class-proportion vector from a symmetric Dirichlet;
samples of every class are then split across clients proportionally to
the clients' weights for that class (largest-remainder rounding), so the
client datasets are disjoint, cover the domain exactly, and each client
keeps at least one sample of every class present in the domain.
"""

from __future__ import annotations

import numpy as np

from .errors import PartitionInfeasibleError


def partition_dirichlet(
    labels,
    n_clients: int,
    alpha: float,
    rng: np.random.Generator,
    max_retries: int = 100,
):
    """Split sample indices into ``n_clients`` disjoint index arrays.

    Retries the Dirichlet draw (up to ``max_retries``) until every client
    holds at least one sample of every class present.
    """
    labels = np.asarray(labels)
    n = labels.size
    if n_clients < 1:
        raise ValueError("need at least one client")
    if alpha <= 0:
        raise ValueError("dirichlet alpha must be positive")
    classes = np.unique(labels)
    if n_clients == 1:
        return [np.arange(n)]
    if n < n_clients * classes.size:
        raise PartitionInfeasibleError(
            f"{n} samples cannot give {n_clients} clients one of each of {classes.size} classes"
        )

    for _ in range(max_retries):
        weights = rng.dirichlet(np.full(classes.size, alpha), size=n_clients)
        assignments = [[] for _ in range(n_clients)]
        feasible = True
        for c_idx, cls in enumerate(classes):
            idx = np.flatnonzero(labels == cls)
            rng.shuffle(idx)
            share = weights[:, c_idx]
            share = share / share.sum()
            counts = np.floor(share * idx.size).astype(int)
            remainder = idx.size - counts.sum()
            if remainder:
                frac = share * idx.size - counts
                for k in np.argsort(-frac)[:remainder]:
                    counts[k] += 1
            if np.any(counts < 1):
                feasible = False
                break
            stops = np.cumsum(counts)
            starts = np.concatenate([[0], stops[:-1]])
            for k in range(n_clients):
                assignments[k].append(idx[starts[k] : stops[k]])
        if feasible:
            return [np.sort(np.concatenate(parts)) for parts in assignments]
    raise PartitionInfeasibleError(f"no feasible draw in {max_retries} retries")
