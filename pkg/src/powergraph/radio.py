"""Link-level radio models: 3GPP TR 38.901 UMa LOS path loss, thermal
noise, square M-QAM bit error rate, and BER-targeted MCS selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

SPEED_OF_LIGHT = 3.0e8
THERMAL_NOISE_DBM_HZ = -174.0


@dataclass(frozen=True)
class RadioParams:
    bandwidth_hz: float = 60e6
    carrier_ghz: float = 3.7
    noise_figure_db: float = 9.0
    bs_height_m: float = 25.0
    ue_height_m: float = 1.5
    pathloss_model: str = "uma-los"
    mcs_orders: tuple = (4, 16, 64, 256)   # square M-QAM constellation sizes
    shadowing_sigma_db: float = 0.0        # lognormal shadowing, off by default

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.carrier_ghz <= 0:
            raise ValueError("bandwidth and carrier frequency must be positive")
        if tuple(sorted(self.mcs_orders)) != tuple(self.mcs_orders):
            raise ValueError("mcs_orders must be sorted ascending")

    @property
    def breakpoint_m(self):
        # d'_BP = 4 h'_BS h'_UT f_c / c with 1 m effective environment height
        h_bs = self.bs_height_m - 1.0
        h_ue = self.ue_height_m - 1.0
        return 4.0 * h_bs * h_ue * self.carrier_ghz * 1e9 / SPEED_OF_LIGHT

    def noise_power_watts(self):
        dbm = THERMAL_NOISE_DBM_HZ + 10.0 * np.log10(self.bandwidth_hz) + self.noise_figure_db
        return dbm_to_watts(dbm)


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=np.float64) - 30.0) / 10.0)


def watts_to_dbm(w):
    return 10.0 * np.log10(np.asarray(w, dtype=np.float64)) + 30.0


def path_loss_db(d2d_m, params: RadioParams):
    """TR 38.901 Table 7.4.1-1 UMa LOS path loss (dB) at 2D distance d2d_m.

    Below the breakpoint: 28 + 22 log10(d3D) + 20 log10(fc); beyond it the
    40 log10 slope with the breakpoint correction term. Distances under
    1 m are clamped to 1 m.
    """
    d2d = np.maximum(np.asarray(d2d_m, dtype=np.float64), 1.0)
    dh = params.bs_height_m - params.ue_height_m
    d3d = np.sqrt(d2d ** 2 + dh ** 2)
    fc = params.carrier_ghz
    dbp = params.breakpoint_m
    pl1 = 28.0 + 22.0 * np.log10(d3d) + 20.0 * np.log10(fc)
    pl2 = (28.0 + 40.0 * np.log10(d3d) + 20.0 * np.log10(fc)
           - 9.0 * np.log10(dbp ** 2 + dh ** 2))
    return np.where(d2d <= dbp, pl1, pl2)


def received_power_watts(tx_dbm, d2d_m, params: RadioParams, shadowing_db=None):
    """Received power in linear watts given tx power (dBm) and 2D distance."""
    loss = path_loss_db(d2d_m, params)
    if shadowing_db is not None:
        loss = loss + shadowing_db
    return dbm_to_watts(np.asarray(tx_dbm, dtype=np.float64) - loss)


def ber_mqam(L, gamma):
    """Union-bound BER of uncoded square M-QAM (M = L^2) at linear SINR gamma.

    P_b = (1 / log2 L) * ((L - 1) / L) * erfc(sqrt(3 * gamma / (2 (M - 1)))),
    the Gray-coded minimum-distance bound with average symbol energy.
    """
    if L < 2 or (L & (L - 1)) and L not in (2, 4, 8, 16):
        raise ValueError(f"unsupported constellation side L={L}")
    gamma = np.asarray(gamma, dtype=np.float64)
    M = L * L
    arg = np.sqrt(3.0 * np.maximum(gamma, 0.0) / (2.0 * (M - 1)))
    return (1.0 / np.log2(L)) * ((L - 1) / L) * erfc(arg)


def select_mcs(gamma, ber_target, orders=(4, 16, 64, 256)):
    """Spectral efficiency (bit/s/Hz) of the largest order meeting the target.

    Returns log2(M*) for the largest M* in `orders` whose M-QAM BER at
    `gamma` is <= ber_target, or 0.0 when none qualifies (outage).
    """
    eta = 0.0
    for m in orders:
        L = int(round(np.sqrt(m)))
        if L * L != m:
            raise ValueError(f"order {m} is not a square constellation")
        if ber_mqam(L, gamma) <= ber_target:
            eta = float(np.log2(m))
    return eta


def mcs_gamma_thresholds(ber_target, orders=(4, 16, 64, 256)):
    """Minimum linear SINR per order meeting `ber_target` (bisection).

    Convenience for vectorized spectral-efficiency lookups; select_mcs
    stays the reference scalar implementation.
    """
    thresholds = []
    for m in orders:
        L = int(round(np.sqrt(m)))
        lo, hi = 0.0, 1.0
        while ber_mqam(L, hi) > ber_target:
            hi *= 2.0
            if hi > 1e18:
                break
        if ber_mqam(L, hi) > ber_target:
            thresholds.append(np.inf)
            continue
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if ber_mqam(L, mid) <= ber_target:
                hi = mid
            else:
                lo = mid
        thresholds.append(hi)
    return np.array(thresholds)


@dataclass(frozen=True)
class CategoryProfile:
    """Per-category service definition; targets must tighten with k."""

    ber_targets: tuple = (1e-2, 1e-3, 1e-5)
    intensity_scale: tuple = field(default=None)
    demand: tuple = field(default=None)

    def __post_init__(self):
        t = tuple(self.ber_targets)
        if any(t[i] <= t[i + 1] for i in range(len(t) - 1)):
            raise ValueError("BER targets must be strictly decreasing across categories")
        if self.intensity_scale is None:
            object.__setattr__(self, "intensity_scale", tuple(1.0 for _ in t))
        if self.demand is None:
            object.__setattr__(self, "demand", tuple(1.0 for _ in t))

    @property
    def num_categories(self):
        return len(self.ber_targets)
