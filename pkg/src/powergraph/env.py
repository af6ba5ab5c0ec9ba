"""Stateless power-control environment.

Each episode: sample one Poisson-cluster traffic realization, observe it
as per-agent polar-grid tensors, apply one joint power action, and score
the resulting network state. There is no temporal state; the next episode
is a fresh draw.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .radio import (CategoryProfile, RadioParams, dbm_to_watts,
                    mcs_gamma_thresholds, path_loss_db)
from .topology import NetworkTopology


@dataclass
class UserSet:
    """One traffic realization. Arrays are parallel over users."""

    positions: np.ndarray      # [U, 2] meters
    categories: np.ndarray     # [U] in 0..S-1
    demands: np.ndarray        # [U] traffic weight t
    serving: np.ndarray = None     # [U] serving-cell index
    sinr: np.ndarray = None        # [U] linear
    efficiency: np.ndarray = None  # [U] bit/s/Hz
    bandwidth: np.ndarray = None   # [U] Hz

    @property
    def count(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class GridSpec:
    """Polar observation grid: distance bins x angle bins x categories."""

    distance_bins: int = 8
    angle_bins: int = 12
    max_radius_m: float = 1500.0

    def feature_dim(self, num_categories):
        return self.distance_bins * self.angle_bins * num_categories


@dataclass(frozen=True)
class StepResult:
    reward_bits: float        # raw objective, bit/s
    reward: float             # normalized, O(1) across scenario sizes
    users: UserSet
    cell_loads: np.ndarray    # [M] user counts


def sample_users(topo: NetworkTopology, profile: CategoryProfile, lam,
                 cluster_radius_m, rng):
    """Poisson cluster draw: per cell i and category k, Poisson(lam[i, k])
    users placed uniformly in the disk of cluster_radius around cell i.

    `rng` is a numpy Generator or a seed. Demand per user comes from the
    category profile (default 1).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("intensities must be non-negative")
    m, s = lam.shape
    if m != topo.count or s != profile.num_categories:
        raise ValueError(f"lambda matrix {lam.shape} does not match "
                         f"{topo.count} cells x {profile.num_categories} categories")
    scale = np.asarray(profile.intensity_scale)
    positions, categories, demands = [], [], []
    for i in range(m):
        for k in range(s):
            n = rng.poisson(lam[i, k] * scale[k])
            if n == 0:
                continue
            r = cluster_radius_m * np.sqrt(rng.uniform(size=n))
            phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
            pts = topo.positions[i] + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
            positions.append(pts)
            categories.append(np.full(n, k, dtype=np.intp))
            demands.append(np.full(n, profile.demand[k]))
    if not positions:
        return UserSet(positions=np.zeros((0, 2)), categories=np.zeros(0, dtype=np.intp),
                       demands=np.zeros(0))
    return UserSet(positions=np.concatenate(positions),
                   categories=np.concatenate(categories),
                   demands=np.concatenate(demands))


def observe(topo: NetworkTopology, users: UserSet, grid: GridSpec, num_categories):
    """Per-agent polar traffic histograms, shape [M, m_dist, n_angle, S].

    Users beyond max_radius of an agent are excluded from that agent's
    tensor. Bin edges are linear in distance and uniform in angle over
    [-pi, pi). Entries sum the demand t of the binned users.
    """
    m_bs = topo.count
    tensors = np.zeros((m_bs, grid.distance_bins, grid.angle_bins, num_categories))
    if users.count == 0:
        return tensors
    dr = grid.max_radius_m / grid.distance_bins
    dphi = 2.0 * np.pi / grid.angle_bins
    for i in range(m_bs):
        rel = users.positions - topo.positions[i]
        dist = np.hypot(rel[:, 0], rel[:, 1])
        inside = dist < grid.max_radius_m
        if not inside.any():
            continue
        d_idx = np.minimum((dist[inside] / dr).astype(np.intp), grid.distance_bins - 1)
        ang = np.arctan2(rel[inside, 1], rel[inside, 0])
        a_idx = np.minimum(((ang + np.pi) / dphi).astype(np.intp), grid.angle_bins - 1)
        np.add.at(tensors[i], (d_idx, a_idx, users.categories[inside]),
                  users.demands[inside])
    return tensors


def flatten_observations(tensors):
    """[M, m, n, S] -> [M, m*n*S] row-major node-feature matrix."""
    m_bs = tensors.shape[0]
    return np.ascontiguousarray(tensors.reshape(m_bs, -1))


class PowerControlEnv:
    """Binds a topology to traffic/radio/action configuration."""

    def __init__(self, topo: NetworkTopology, profile: CategoryProfile, lam,
                 cluster_radius_m=600.0, radio: RadioParams = None,
                 grid: GridSpec = None, power_levels_dbm=(34.0, 37.0, 40.0, 43.0, 46.0)):
        self.topo = topo
        self.profile = profile
        self.lam = np.asarray(lam, dtype=np.float64)
        self.cluster_radius_m = cluster_radius_m
        self.radio = radio or RadioParams()
        self.grid = grid or GridSpec()
        self.power_levels_dbm = np.asarray(power_levels_dbm, dtype=np.float64)
        # gamma thresholds per category x order, for vectorized MCS lookup
        self._thresholds = np.stack([
            mcs_gamma_thresholds(t, self.radio.mcs_orders)
            for t in self.profile.ber_targets])
        self._eta_values = np.log2(np.asarray(self.radio.mcs_orders, dtype=np.float64))

    @property
    def num_agents(self):
        return self.topo.count

    @property
    def num_actions(self):
        return len(self.power_levels_dbm)

    @property
    def feature_dim(self):
        return self.grid.feature_dim(self.profile.num_categories)

    def sample_users(self, rng):
        return sample_users(self.topo, self.profile, self.lam,
                            self.cluster_radius_m, rng)

    def observe(self, users):
        return observe(self.topo, users, self.grid, self.profile.num_categories)

    def node_features(self, users):
        return flatten_observations(self.observe(users))

    def _rx_power_matrix(self, users, action_idx, shadowing_db=None):
        """[U, M] linear received power under the joint action."""
        tx = self.power_levels_dbm[np.asarray(action_idx, dtype=np.intp)]
        diff = users.positions[:, None, :] - self.topo.positions[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        loss = path_loss_db(dist, self.radio)
        if shadowing_db is not None:
            loss = loss + shadowing_db
        return dbm_to_watts(tx[None, :] - loss)

    def sample_shadowing(self, users, rng):
        """Per user-cell lognormal shadowing draw (dB), or None when off."""
        sigma = self.radio.shadowing_sigma_db
        if sigma <= 0.0 or users.count == 0:
            return None
        return rng.normal(0.0, sigma, size=(users.count, self.num_agents))

    def compute_sinr(self, users, action_idx, rx=None, shadowing_db=None):
        """Best-server association + SINR at the current action's powers.

        Association uses the received powers of this joint action (ties to
        the lowest cell index), so power changes shift load between cells.
        """
        if rx is None:
            rx = self._rx_power_matrix(users, action_idx, shadowing_db)
        serving = np.argmax(rx, axis=1)
        noise = self.radio.noise_power_watts()
        total = rx.sum(axis=1)
        sig = rx[np.arange(users.count), serving]
        sinr = sig / (total - sig + noise)
        users.serving = serving
        users.sinr = sinr
        return users

    def step(self, users, action_idx, shadowing_db=None):
        """Apply one joint power action and score the resulting network.

        Reward is the sum over users of spectral efficiency times the
        equal-share bandwidth B / N_cell; the normalized variant divides
        by B * user count * max attainable efficiency.
        """
        action_idx = np.asarray(action_idx, dtype=np.intp)
        if action_idx.shape != (self.num_agents,):
            raise ValueError(f"need one action per agent: {action_idx.shape}")
        if np.any(action_idx < 0) or np.any(action_idx >= self.num_actions):
            raise IndexError("power index out of range")
        m = self.num_agents
        if users.count == 0:
            empty = UserSet(positions=users.positions, categories=users.categories,
                            demands=users.demands)
            return StepResult(reward_bits=0.0, reward=0.0, users=empty,
                              cell_loads=np.zeros(m))
        rx = self._rx_power_matrix(users, action_idx, shadowing_db)
        self.compute_sinr(users, action_idx, rx=rx)
        # largest order whose threshold the user's SINR clears, per category
        th = self._thresholds[users.categories]            # [U, O]
        ok = users.sinr[:, None] >= th
        eta = np.where(ok.any(axis=1),
                       self._eta_values[np.maximum(
                           np.where(ok, np.arange(th.shape[1])[None, :], -1).max(axis=1), 0)],
                       0.0)
        loads = np.bincount(users.serving, minlength=m).astype(np.float64)
        bw = self.radio.bandwidth_hz / loads[users.serving]
        users.efficiency = eta
        users.bandwidth = bw
        raw = float(np.sum(eta * bw))
        norm = raw / (self.radio.bandwidth_hz * users.count * float(self._eta_values[-1]))
        return StepResult(reward_bits=raw, reward=norm, users=users, cell_loads=loads)


def write_user_trace(users: UserSet, path):
    """Optional per-user episode trace (positions, category, link state)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x_m", "y_m", "category", "serving_cell", "sinr_db",
                    "efficiency_bps_hz", "bandwidth_hz"])
        for i in range(users.count):
            sinr_db = (repr(float(10.0 * np.log10(users.sinr[i])))
                       if users.sinr is not None and users.sinr[i] > 0 else "")
            w.writerow([repr(float(users.positions[i, 0])),
                        repr(float(users.positions[i, 1])),
                        int(users.categories[i]),
                        int(users.serving[i]) if users.serving is not None else "",
                        sinr_db,
                        repr(float(users.efficiency[i])) if users.efficiency is not None else "",
                        repr(float(users.bandwidth[i])) if users.bandwidth is not None else ""])
