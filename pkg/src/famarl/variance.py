"""Reward-variance bounds and their Monte-Carlo counterparts.

The closed-form side: a placement-dispersion bound (any distribution on a set
of diameter d_max has E||u - E[u]||^2 <= d_max^2/4), norm bounds for the
SINR-to-channel and channel-to-placement Jacobians, and the trajectory-reward
variance bound assembled from them.  The empirical side re-measures each
quantity by simulation: sampled placements under a fixed scene with a matched
filter baseline, full-network Jacobian spectral norms, and the R(u) landscape
over a grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import channel as ch
from .config import NetworkConfig
from .env import FluidNetworkEnv, sample_fa_positions, sinr_from_arrays, sum_rate
from .errors import ConfigError, GeometryError
from .rngs import substream

# Exponent of each parameter in the dominant-scaling form of the reward
# variance bound.
DOMINANT_EXPONENTS = {
    "N": 7, "K": 7, "P_max": 4, "M": 3, "d_max": 2, "T": 2, "f": 2, "L": 1,
}

# Sweepable axes: short label to NetworkConfig field.
AXIS_FIELDS = {"N": "num_bs", "K": "num_users", "M": "num_antennas", "P_max": "max_power"}

# Scalar scene fields copied when rebuilding a config along a sweep axis;
# bs_positions and user_sectors are regenerated for the new shape.
_SWEEP_FIELDS = (
    "num_bs", "num_users", "num_antennas", "num_paths", "max_power",
    "noise_power", "frequency", "wavelength", "min_spacing", "region",
    "plane_height", "bs_spacing", "bs_height", "user_height", "gain_mode",
    "path_loss_exponent", "reference_gain", "penalty",
)


@dataclass(frozen=True)
class BoundReport:
    """All closed-form bounds for one configuration and horizon."""

    d_max: float
    lemma1: float
    jac_gamma_bound: float
    jac_h_bound: float
    lipschitz_bound: float
    theorem1: float
    dominant_scaling: dict


def lemma1_bound(region: tuple[float, float] | None = None, d_max: float | None = None) -> float:
    """Upper bound d_max^2/4 on the placement dispersion E||u - E[u]||^2.

    For a rectangular region d_max is its diagonal; pass ``d_max`` directly
    for non-rectangular feasible sets.
    """
    if d_max is None:
        if region is None:
            raise GeometryError("lemma1_bound needs a region or an explicit d_max")
        width, height = region
        if width <= 0 or height <= 0:
            raise GeometryError(f"region {region} has zero area")
        return (width * width + height * height) / 4.0
    if d_max <= 0:
        raise GeometryError(f"d_max must be positive, got {d_max}")
    return d_max * d_max / 4.0


def jacobian_norm_bounds(config: NetworkConfig) -> tuple[float, float]:
    """Closed-form norm bounds (gamma_bound, h_bound).

    gamma_bound caps ||d gamma / d h||: 2NKP_max sqrt(M)/sigma^2 * (1 +
    NKP_max/sigma^2).  h_bound caps ||d h / d u||: 2 pi NKM sqrt(L) / lambda.
    """
    n, k, m = config.num_bs, config.num_users, config.num_antennas
    power, sigma2 = config.max_power, config.noise_power
    load = n * k * power / sigma2
    gamma_bound = 2.0 * n * k * power * np.sqrt(m) / sigma2 * (1.0 + load)
    h_bound = 2.0 * np.pi * n * k * m * np.sqrt(config.num_paths) / config.wavelength
    return float(gamma_bound), float(h_bound)


def lipschitz_bound(config: NetworkConfig) -> float:
    """Reward-in-placement Lipschitz constant in its dominant-term form:
    (sqrt(NK)/ln 2) * (2 N^2 K^2 P_max^2 sqrt(M) / sigma^4) * (2 pi NKM sqrt(L) / lambda).
    """
    n, k, m = config.num_bs, config.num_users, config.num_antennas
    power, sigma2 = config.max_power, config.noise_power
    gamma_term = 2.0 * n**2 * k**2 * power**2 * np.sqrt(m) / sigma2**2
    h_term = 2.0 * np.pi * n * k * m * np.sqrt(config.num_paths) / config.wavelength
    return float(np.sqrt(n * k) / np.log(2.0) * gamma_term * h_term)


def theorem1_bound(config: NetworkConfig, horizon: int) -> float:
    """Trajectory-reward variance bound (T^2 d_max^2 / 4) * L_R^2."""
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    d_max = config.region_diagonal
    return horizon**2 * d_max**2 / 4.0 * lipschitz_bound(config) ** 2


def bound_report(config: NetworkConfig, horizon: int) -> BoundReport:
    gamma_bound, h_bound = jacobian_norm_bounds(config)
    return BoundReport(
        d_max=config.region_diagonal,
        lemma1=lemma1_bound(config.region),
        jac_gamma_bound=gamma_bound,
        jac_h_bound=h_bound,
        lipschitz_bound=lipschitz_bound(config),
        theorem1=theorem1_bound(config, horizon),
        dominant_scaling=dict(DOMINANT_EXPONENTS),
    )


def mrt_baseline_beamformer(channels: np.ndarray, max_power: float) -> np.ndarray:
    """Matched-filter beamformers with an equal power split.

    ``channels`` holds one BS's served-user rows (K, M); returns (K, M) with
    w_k = conj(h_k)/||h_k|| * sqrt(P_max/K), so sum_k ||w_k||^2 = P_max.
    """
    h = np.atleast_2d(np.asarray(channels))
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms == 0.0):
        raise GeometryError("zero-norm channel has no matched-filter direction")
    return np.conj(h) / norms[:, None] * np.sqrt(max_power / h.shape[0])


def mrt_network_beamformers(channels: np.ndarray, max_power: float) -> np.ndarray:
    """Matched filters for every BS toward its own users: (N, N, K, M) -> (N, K, M)."""
    return np.stack(
        [mrt_baseline_beamformer(channels[i, i], max_power) for i in range(channels.shape[0])]
    )


def reward_variance_mc(
    config: NetworkConfig, n_samples: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Sample variance and mean of R over uniform FA placements.

    One scene (user positions and multipath geometry) is fixed per call; each
    sample redraws every BS's antenna placement uniformly in the region
    (rejection-sampled for spacing), applies the matched-filter baseline, and
    scores the network sum-rate.  Per-sample child RNG streams keep the
    reduction order-independent.
    """
    if n_samples < 100:
        raise ConfigError(f"reward_variance_mc needs n_samples >= 100, got {n_samples}")
    env = FluidNetworkEnv(config)
    env.reset(rng)
    rates = np.empty(n_samples)
    for s, sample_rng in enumerate(rng.spawn(n_samples)):
        fa = np.stack(
            [sample_fa_positions(sample_rng, config) for _ in range(config.num_bs)]
        )
        channels = env.channels_for(fa)
        beams = mrt_network_beamformers(channels, config.max_power)
        rates[s] = sum_rate(sinr_from_arrays(channels, beams, config.noise_power))
    return float(np.var(rates, ddof=1)), float(np.mean(rates))


def config_with_axis(config: NetworkConfig, axis: str, value) -> NetworkConfig:
    """Copy of ``config`` with one sweep axis changed; derived geometry
    (BS positions, user sectors) is regenerated for the new shape."""
    if axis not in AXIS_FIELDS:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(AXIS_FIELDS)}")
    kwargs = {name: getattr(config, name) for name in _SWEEP_FIELDS}
    kwargs[AXIS_FIELDS[axis]] = value
    return NetworkConfig(**kwargs)


def variance_sweep(
    config: NetworkConfig,
    axis: str,
    values,
    n_samples: int,
    seed: int,
    horizon: int,
) -> list[dict]:
    """Empirical reward variance along one parameter axis.

    Every value reuses the same master seed, so scene randomness is shared
    across the sweep and only the swept parameter moves.
    """
    rows = []
    for value in values:
        swept = config_with_axis(config, axis, value)
        var, mean = reward_variance_mc(swept, n_samples, substream(seed, "variance-mc"))
        rows.append(
            {
                "axis": axis,
                "value": value,
                "mean_rate": mean,
                "variance": var,
                "theorem1_bound": theorem1_bound(swept, horizon),
            }
        )
    return rows


def empirical_jacobian_norm(config: NetworkConfig, rng: np.random.Generator) -> float:
    """Spectral norm of the full-network d h / d u for one random scene.

    Stacks the per-link placement Jacobians (bounded-gain mode, unit large
    scale) for all N*N*K links over all N placement vectors into one real
    matrix of shape (2*N*N*K*M, 3*N*M) and returns its largest singular value.
    """
    n, k, m = config.num_bs, config.num_users, config.num_antennas
    rows, cols = 2 * n * n * k * m, 3 * n * m
    full = np.zeros((rows, cols))
    users = _scene_users(config, rng)
    placements = [sample_fa_positions(rng, config) for _ in range(n)]
    block = 0
    for j in range(n):
        for i in range(n):
            for kk in range(k):
                geometry = ch.sample_geometry(
                    rng, config, config.bs_positions[j], users[i, kk], mode="bounded"
                )
                jac = ch.channel_jacobian(
                    users[i, kk], placements[j], geometry, config.wavelength
                )
                full[block * 2 * m : (block + 1) * 2 * m, j * 3 * m : (j + 1) * 3 * m] = jac
                block += 1
    return float(np.linalg.svd(full, compute_uv=False)[0])


def empirical_sinr_gradient_norm(config: NetworkConfig, rng: np.random.Generator) -> float:
    """Finite-difference spectral norm of d gamma / d h for one random scene.

    Channels enter as free real coordinates (re, im per entry); beamformers
    are the matched-filter baseline held fixed at the unperturbed channels.
    """
    env = FluidNetworkEnv(config)
    state, _ = env.reset(rng)
    channels = state.channels
    beams = mrt_network_beamformers(channels, config.max_power)

    def gamma(flat_real):
        h = flat_real[::2] + 1j * flat_real[1::2]
        return sinr_from_arrays(h.reshape(channels.shape), beams, config.noise_power).ravel()

    base = np.empty(2 * channels.size)
    base[::2], base[1::2] = channels.real.ravel(), channels.imag.ravel()
    delta = 1e-6
    jac = np.empty((gamma(base).size, base.size))
    for c in range(base.size):
        bumped = base.copy()
        bumped[c] += delta
        plus = gamma(bumped)
        bumped[c] -= 2 * delta
        jac[:, c] = (plus - gamma(bumped)) / (2 * delta)
    return float(np.linalg.svd(jac, compute_uv=False)[0])


def landscape_grid(
    config: NetworkConfig, resolution: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sum-rate landscape R(u) on a regular grid over the movable region.

    Requires M = 1 so a placement is a single planar point; all base stations
    share the same local grid point, the scene stays fixed, and beamformers
    are the matched-filter baseline recomputed per point.  Returns (xs, ys,
    rates) with rates[iy, ix] evaluated at (xs[ix], ys[iy]).
    """
    if config.num_antennas != 1:
        raise ConfigError(
            f"landscape_grid needs a single fluid antenna per BS, got M = {config.num_antennas}"
        )
    if resolution < 2:
        raise ConfigError(f"resolution must be >= 2, got {resolution}")
    env = FluidNetworkEnv(config)
    env.reset(rng)
    xs = np.linspace(0.0, config.region[0], resolution)
    ys = np.linspace(0.0, config.region[1], resolution)
    rates = np.empty((resolution, resolution))
    fa = np.zeros((config.num_bs, 1, 3))
    fa[:, 0, 2] = config.plane_height
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            fa[:, 0, 0], fa[:, 0, 1] = x, y
            channels = env.channels_for(fa)
            beams = mrt_network_beamformers(channels, config.max_power)
            rates[iy, ix] = sum_rate(sinr_from_arrays(channels, beams, config.noise_power))
    return xs, ys, rates


def _scene_users(config: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    """User drop matching the environment's sector sampling, shape (N, K, 3)."""
    users = np.zeros((config.num_bs, config.num_users, 3))
    for i in range(config.num_bs):
        for kk in range(config.num_users):
            rmin, rmax, amin, amax = config.user_sectors[kk]
            radius = rng.uniform(rmin, rmax)
            azimuth = np.deg2rad(rng.uniform(amin, amax))
            users[i, kk] = config.bs_positions[i] + np.array(
                [radius * np.cos(azimuth), radius * np.sin(azimuth), 0.0]
            )
            users[i, kk, 2] = config.user_height
    return users
