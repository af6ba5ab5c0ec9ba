"""Base-station topology generation and its plain-text file format."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PlacementError(RuntimeError):
    """The requested layout could not be sampled within the retry cap."""


@dataclass(frozen=True)
class NetworkTopology:
    """Base-station positions (meters) inside rectangular area bounds."""

    positions: np.ndarray          # [M, 2]
    bounds: tuple                  # (xmin, ymin, xmax, ymax)

    @property
    def count(self):
        return self.positions.shape[0]

    def distances(self):
        """Pairwise Euclidean distance matrix [M, M]."""
        d = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt((d ** 2).sum(axis=2))


def generate_topology(count, bounds, min_sep, rng_seed, max_tries=10000):
    """Sample `count` positions in `bounds` with pairwise distance >= min_sep.

    Rejection sampling, deterministic given the seed. Raises PlacementError
    when the retry cap is exhausted (bounds too tight for the separation).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    xmin, ymin, xmax, ymax = bounds
    if xmax <= xmin or ymax <= ymin:
        raise ValueError(f"degenerate bounds {bounds}")
    rng = np.random.default_rng(rng_seed)
    placed = []
    tries = 0
    while len(placed) < count:
        if tries >= max_tries:
            raise PlacementError(
                f"could not place {count} points with min_sep={min_sep} m "
                f"in bounds {bounds} after {max_tries} tries")
        tries += 1
        p = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        if all(np.hypot(*(p - q)) >= min_sep for q in placed):
            placed.append(p)
    return NetworkTopology(positions=np.array(placed), bounds=tuple(float(b) for b in bounds))


def save_topology(topo: NetworkTopology, path):
    lines = ["# powergraph topology v1",
             f"count {topo.count}",
             "bounds " + " ".join(repr(float(b)) for b in topo.bounds)]
    for x, y in topo.positions:
        lines.append(f"position {float(x)!r} {float(y)!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_topology(path):
    count = None
    bounds = None
    positions = []
    with open(path) as f:
        for ln in f:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            tag, rest = ln.split(" ", 1)
            if tag == "count":
                count = int(rest)
            elif tag == "bounds":
                bounds = tuple(float(v) for v in rest.split())
            elif tag == "position":
                positions.append([float(v) for v in rest.split()])
            else:
                raise ValueError(f"unrecognized topology line: {ln!r}")
    pos = np.array(positions)
    if count is not None and count != len(pos):
        raise ValueError(f"topology file declares {count} positions, found {len(pos)}")
    return NetworkTopology(positions=pos, bounds=bounds)
