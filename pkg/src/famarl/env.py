"""Multi-cell downlink Dec-POMDP environment.

N base stations each serve K users with M fluid antennas.  An episode fixes
user positions and per-link multipath geometry at reset; within the episode
the scene is stationary and a step just installs the (projected) actions,
recomputes channels from the new antenna positions, and returns the shared
network-wide reward.  ``channels[j, i, k]`` is the row vector from BS j's
array to user k of BS i.  Complex quantities flatten to interleaved
(re, im) pairs everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import channel as ch
from .config import NetworkConfig
from .errors import GeometryError, InfeasibleConfigError

# Attempts to place M antennas with pairwise spacing D_min before giving up.
MAX_PLACEMENT_ATTEMPTS = 10_000


def flatten_complex(values: np.ndarray) -> np.ndarray:
    """Flatten a complex array to interleaved (re, im) float64 pairs."""
    return np.ascontiguousarray(values, dtype=complex).view(float).ravel()


def interleave_complex(values: np.ndarray) -> np.ndarray:
    """(..., C) complex -> (..., 2C) float with interleaved (re, im) pairs."""
    return np.ascontiguousarray(values, dtype=complex).view(float)


def unflatten_complex(values: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    pairs = np.asarray(values, dtype=float).reshape(*shape, 2)
    return pairs[..., 0] + 1j * pairs[..., 1]


@dataclass
class GlobalState:
    fa_positions: np.ndarray  # (N, M, 3)
    beamformers: np.ndarray  # (N, K, M) complex
    user_positions: np.ndarray  # (N, K, 3)
    channels: np.ndarray  # (N, N, K, M) complex, [tx, rx_bs, rx_user]
    rates: np.ndarray  # (N, K)

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [
                self.fa_positions.ravel(),
                flatten_complex(self.beamformers),
                self.user_positions.ravel(),
                flatten_complex(self.channels),
                self.rates.ravel(),
            ]
        )


@dataclass
class LocalObservation:
    fa_positions: np.ndarray  # (M, 3)
    beamformers: np.ndarray  # (K, M) complex
    user_positions: np.ndarray  # (K, 3)
    channels: np.ndarray  # (K, M) complex, own links only
    interference: np.ndarray  # (K,) inter-cell interference power per user
    rates: np.ndarray  # (K,)

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [
                self.fa_positions.ravel(),
                flatten_complex(self.beamformers),
                self.user_positions.ravel(),
                flatten_complex(self.channels),
                self.interference.ravel(),
                self.rates.ravel(),
            ]
        )


@dataclass
class LocalAction:
    fa_positions: np.ndarray  # (M, 3)
    beamformers: np.ndarray  # (K, M) complex

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.fa_positions.ravel(), flatten_complex(self.beamformers)])

    @classmethod
    def from_flat(cls, values: np.ndarray, num_antennas: int, num_users: int) -> "LocalAction":
        values = np.asarray(values, dtype=float)
        split = 3 * num_antennas
        return cls(
            fa_positions=values[:split].reshape(num_antennas, 3).copy(),
            beamformers=unflatten_complex(values[split:], (num_users, num_antennas)),
        )


def flatten_state(state: GlobalState) -> np.ndarray:
    return state.flatten()


def project_action(raw: LocalAction, config: NetworkConfig) -> tuple[LocalAction, bool]:
    """Clamp FA positions into the region, rescale beamformers to the power
    budget, and flag (without repairing) any pairwise spacing violation."""
    positions = np.asarray(raw.fa_positions, dtype=float).copy()
    positions[:, 0] = np.clip(positions[:, 0], 0.0, config.region[0])
    positions[:, 1] = np.clip(positions[:, 1], 0.0, config.region[1])
    positions[:, 2] = config.plane_height

    beamformers = np.asarray(raw.beamformers, dtype=complex)
    total_power = float(np.sum(np.abs(beamformers) ** 2))
    if total_power > config.max_power:
        beamformers = beamformers * np.sqrt(config.max_power / total_power)
    else:
        beamformers = beamformers.copy()

    violated = spacing_violated(positions, config.min_spacing)
    return LocalAction(fa_positions=positions, beamformers=beamformers), violated


@lru_cache(maxsize=None)
def _upper_pairs(num: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(num, k=1)


def spacing_violated(positions: np.ndarray, min_spacing: float) -> bool:
    num = positions.shape[0]
    if num < 2 or min_spacing <= 0:
        return False
    rows, cols = _upper_pairs(num)
    diffs = positions[rows] - positions[cols]
    sq = np.einsum("pd,pd->p", diffs, diffs)
    return bool(np.any(sq < min_spacing * min_spacing))


def sinr_from_arrays(channels: np.ndarray, beamformers: np.ndarray, noise_power: float) -> np.ndarray:
    """SINR grid (N, K) from channel and beamformer arrays.

    products[j, i, k, c] = |h_{j,i}^[k] . w_j^[c]|^2; the desired signal is the
    (i, i, k, k) entry, intra-cell interference the remaining own-cell beams,
    inter-cell interference everything transmitted by other cells.
    """
    products = np.abs(np.einsum("jikm,jcm->jikc", channels, beamformers)) ** 2
    own = np.einsum("iikc->ikc", products)  # (N, K, C) received from serving BS
    signal = np.einsum("ikk->ik", own)
    intra = own.sum(axis=2) - signal
    inter = products.sum(axis=(0, 3)) - own.sum(axis=2)
    return signal / (intra + inter + noise_power)


def intercell_interference(channels: np.ndarray, beamformers: np.ndarray) -> np.ndarray:
    products = np.abs(np.einsum("jikm,jcm->jikc", channels, beamformers)) ** 2
    own = np.einsum("iikc->ikc", products)
    return products.sum(axis=(0, 3)) - own.sum(axis=2)


def compute_sinr(state: GlobalState, config: NetworkConfig) -> np.ndarray:
    return sinr_from_arrays(state.channels, state.beamformers, config.noise_power)


def sum_rate(sinr: np.ndarray) -> float:
    return float(np.sum(np.log2(1.0 + sinr)))


def reward(state: GlobalState, violated_flags: np.ndarray, config: NetworkConfig) -> float:
    """Network-wide reward: the sum-rate, or -penalty if any agent violated spacing."""
    if np.any(violated_flags):
        return -config.penalty
    return sum_rate(compute_sinr(state, config))


def observe(state: GlobalState, agent: int, config: NetworkConfig) -> LocalObservation:
    if not 0 <= agent < config.num_bs:
        raise IndexError(f"agent index {agent} out of range for {config.num_bs} base stations")
    inter = intercell_interference(state.channels, state.beamformers)
    return LocalObservation(
        fa_positions=state.fa_positions[agent].copy(),
        beamformers=state.beamformers[agent].copy(),
        user_positions=state.user_positions[agent].copy(),
        channels=state.channels[agent, agent].copy(),
        interference=inter[agent].copy(),
        rates=state.rates[agent].copy(),
    )


def sample_fa_positions(rng: np.random.Generator, config: NetworkConfig) -> np.ndarray:
    """Uniform (M, 3) placement in the region, rejection-sampled for spacing."""
    width, height = config.region
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        draws = rng.random((2, config.num_antennas))  # one stream read per attempt
        positions = np.column_stack(
            [
                width * draws[0],
                height * draws[1],
                np.full(config.num_antennas, config.plane_height),
            ]
        )
        if not spacing_violated(positions, config.min_spacing):
            return positions
    raise InfeasibleConfigError(
        f"could not place {config.num_antennas} antennas with spacing "
        f"{config.min_spacing} in region {config.region} after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )


class FluidNetworkEnv:
    """One rollout worker's environment instance.

    Holds the per-episode scene (user positions and multipath geometry) plus
    the current ``GlobalState``.  ``freeze_fa=True`` pins antenna positions to
    their reset placement, turning the FA part of every action into a no-op.
    """

    def __init__(self, config: NetworkConfig, freeze_fa: bool = False) -> None:
        self.config = config
        self.freeze_fa = freeze_fa
        self.state: GlobalState | None = None
        self.link_geometry: list[list[list[ch.ChannelGeometry]]] = []
        # Stacked per-path arrays for the vectorized channel evaluation:
        # _coef[j, i, k, l] and _aod_dirs[j, i, k, l, :].
        self._coef: np.ndarray | None = None
        self._aod_dirs: np.ndarray | None = None

    def reset(self, rng: np.random.Generator) -> tuple[GlobalState, list[LocalObservation]]:
        cfg = self.config
        n, k = cfg.num_bs, cfg.num_users

        users = np.zeros((n, k, 3))
        for i in range(n):
            for kk in range(k):
                rmin, rmax, amin, amax = cfg.user_sectors[kk]
                radius = rng.uniform(rmin, rmax)
                azimuth = np.deg2rad(rng.uniform(amin, amax))
                users[i, kk] = cfg.bs_positions[i] + np.array(
                    [radius * np.cos(azimuth), radius * np.sin(azimuth), 0.0]
                )
                users[i, kk, 2] = cfg.user_height

        self.link_geometry = [
            [
                [ch.sample_geometry(rng, cfg, cfg.bs_positions[j], users[i, kk]) for kk in range(k)]
                for i in range(n)
            ]
            for j in range(n)
        ]
        self._stack_geometry(users)

        fa = np.stack([sample_fa_positions(rng, cfg) for _ in range(n)])
        raw = rng.standard_normal((n, k, cfg.num_antennas)) + 1j * rng.standard_normal(
            (n, k, cfg.num_antennas)
        )
        raw /= np.linalg.norm(raw, axis=2, keepdims=True)
        beamformers = raw * np.sqrt(cfg.max_power / k)

        self.state = self._make_state(fa, beamformers, users)
        return self.state, [observe(self.state, i, cfg) for i in range(n)]

    def _stack_geometry(self, users: np.ndarray) -> None:
        cfg = self.config
        n, k, paths = cfg.num_bs, cfg.num_users, cfg.num_paths
        coef = np.zeros((n, n, k, paths), dtype=complex)
        aod = np.zeros((n, n, k, paths, 3))
        for j in range(n):
            for i in range(n):
                for kk in range(k):
                    geom = self.link_geometry[j][i][kk]
                    coef[j, i, kk] = ch.path_coefficients(users[i, kk], geom, cfg.wavelength)
                    aod[j, i, kk] = geom.aod_directions
        self._coef = coef
        self._aod_dirs = aod

    def channels_for(self, fa_positions: np.ndarray) -> np.ndarray:
        """Channels (N, N, K, M) at the given antenna placement under the
        current episode's geometry."""
        if self._coef is None:
            raise RuntimeError("reset() must be called before evaluating channels")
        wavenumber = 2.0 * np.pi / self.config.wavelength
        phases = np.einsum("jmx,jiklx->jiklm", np.asarray(fa_positions, dtype=float), self._aod_dirs)
        return np.einsum("jikl,jiklm->jikm", self._coef, np.exp(1j * wavenumber * phases))

    def _make_state(self, fa: np.ndarray, beamformers: np.ndarray, users: np.ndarray) -> GlobalState:
        channels = self.channels_for(fa)
        sinr = sinr_from_arrays(channels, beamformers, self.config.noise_power)
        return GlobalState(
            fa_positions=fa,
            beamformers=beamformers,
            user_positions=users,
            channels=channels,
            rates=np.log2(1.0 + sinr),
        )

    def step(self, actions: list[LocalAction]) -> tuple[GlobalState, list[LocalObservation], float]:
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        cfg = self.config
        fa = np.empty_like(self.state.fa_positions)
        beamformers = np.empty_like(self.state.beamformers)
        violated = np.zeros(cfg.num_bs, dtype=bool)
        for i, action in enumerate(actions):
            if self.freeze_fa:
                action = LocalAction(
                    fa_positions=self.state.fa_positions[i], beamformers=action.beamformers
                )
            projected, flag = project_action(action, cfg)
            fa[i] = projected.fa_positions
            beamformers[i] = projected.beamformers
            violated[i] = flag

        self.state = self._make_state(fa, beamformers, self.state.user_positions)
        obs = [observe(self.state, i, cfg) for i in range(cfg.num_bs)]
        return self.state, obs, reward(self.state, violated, cfg)


class LockstepPool:
    """Batched physics for a pool of environments stepped in lockstep.

    Reset consumes each trajectory's RNG in exactly the order the scalar
    ``FluidNetworkEnv.reset`` does (users, per-link angles and gains, antenna
    placement, beamformers), then evaluates the scene physics once across the
    whole pool; steps batch the same way.  The arithmetic matches the scalar
    environment bit for bit: elementwise stages share the ufunc sequence and
    every einsum contraction sums the same operands in the same index order,
    only with a leading pool axis.  Member environments' ``state`` attributes
    are not refreshed; the pool owns the rollout state.
    """

    def __init__(self, envs: list[FluidNetworkEnv]) -> None:
        if not envs:
            raise ValueError("LockstepPool needs at least one environment")
        self.envs = envs
        self.config = envs[0].config
        self.freeze_fa = envs[0].freeze_fa
        self._coef: np.ndarray | None = None
        self._aod: np.ndarray | None = None
        self._users: np.ndarray | None = None
        self._fa: np.ndarray | None = None

    def reset(self, rngs: list[np.random.Generator]) -> tuple[np.ndarray, np.ndarray]:
        """Reset every member; returns flattened states (B, d_s) and
        observations (B, N, d_o)."""
        cfg = self.config
        batch, n, k = len(self.envs), cfg.num_bs, cfg.num_users
        paths = cfg.num_paths
        statistical = cfg.gain_mode == "statistical"

        # Draw phase: per lane, replicating the scalar reset's stream order.
        # Uniform blocks merge into single rng.random reads (low + range * u
        # matches numpy's uniform transform bitwise); normal draws stay their
        # own calls because the ziggurat consumes a variable stream length.
        blocks = 4 if statistical else 5
        user_draws = np.empty((batch, n, k, 2))
        link_draws = np.empty((batch, n, n, k, blocks, paths))
        normal_draws = np.empty((batch, n, n, k, 2, paths)) if statistical else None
        fa = np.empty((batch, n, cfg.num_antennas, 3))
        beam_normals = np.empty((batch, 2, n, k, cfg.num_antennas))
        for b, rng in enumerate(rngs):
            user_draws[b] = rng.random((n, k, 2))
            lane_links = link_draws[b]
            lane_normals = normal_draws[b] if statistical else None
            for j in range(n):
                for i in range(n):
                    for kk in range(k):
                        lane_links[j, i, kk] = rng.random((blocks, paths))
                        if statistical:
                            lane_normals[j, i, kk] = rng.standard_normal((2, paths))
            for j in range(n):
                fa[b, j] = sample_fa_positions(rng, cfg)
            beam_normals[b] = rng.standard_normal((2, n, k, cfg.num_antennas))

        # Scene assembly, batched over (lane, tx BS, rx cell, user, path).
        sectors = np.asarray(cfg.user_sectors, dtype=float)
        rmin, rmax = sectors[:, 0], sectors[:, 1]
        amin, amax = sectors[:, 2], sectors[:, 3]
        radius = rmin + (rmax - rmin) * user_draws[..., 0]
        azimuth = np.deg2rad(amin + (amax - amin) * user_draws[..., 1])
        bs = np.asarray(cfg.bs_positions, dtype=float)
        users = np.empty((batch, n, k, 3))
        users[..., 0] = bs[:, None, 0] + radius * np.cos(azimuth)
        users[..., 1] = bs[:, None, 1] + radius * np.sin(azimuth)
        users[..., 2] = cfg.user_height

        half_pi, two_pi = np.pi / 2, 2.0 * np.pi
        aoa_dirs = _direction_stack(
            -half_pi + np.pi * link_draws[..., 0, :], -np.pi + two_pi * link_draws[..., 1, :]
        )
        aod_dirs = _direction_stack(
            -half_pi + np.pi * link_draws[..., 2, :], -np.pi + two_pi * link_draws[..., 3, :]
        )
        if statistical:
            gains = (normal_draws[..., 0, :] + 1j * normal_draws[..., 1, :]) / np.sqrt(2.0)
            distance = ch.link_distance(bs[None, :, None, None, :], users[:, None, :, :, :])
            if np.any(distance <= 0.0):
                raise GeometryError("user position coincides with the base station")
            large_scale = cfg.large_scale_reference * distance ** (-cfg.path_loss_exponent)
        else:
            gains = np.exp(1j * (two_pi * link_draws[..., 4, :]))

        projection = np.einsum("bjiklx,bikx->bjikl", aoa_dirs, users)
        f = np.exp(1j * (2.0 * np.pi / cfg.wavelength) * projection)
        coef = np.conj(f) * gains / np.sqrt(paths)
        if statistical:
            coef = coef * np.sqrt(large_scale)[..., None]

        raw = beam_normals[:, 0] + 1j * beam_normals[:, 1]
        raw /= np.linalg.norm(raw, axis=3, keepdims=True)
        beams = raw * np.sqrt(cfg.max_power / k)

        self._coef = coef
        self._aod = aod_dirs
        self._users = users
        self._fa = fa
        states, obs, _, _ = self._physics(fa, beams)
        return states, obs

    def _physics(
        self, positions: np.ndarray, beams: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Channels, SINR and flattened state/obs for installed placements
        (B, N, M, 3) and beamformers (B, N, K, M); returns (states, obs,
        rates, inter)."""
        cfg = self.config
        batch, n = positions.shape[0], cfg.num_bs
        wavenumber = 2.0 * np.pi / cfg.wavelength
        phases = np.einsum("bjmx,bjiklx->bjiklm", positions, self._aod)
        channels = np.einsum("bjikl,bjiklm->bjikm", self._coef, np.exp(1j * wavenumber * phases))

        products = np.abs(np.einsum("bjikm,bjcm->bjikc", channels, beams)) ** 2
        own = np.einsum("biikc->bikc", products)
        signal = np.einsum("bikk->bik", own)
        own_total = own.sum(axis=3)
        intra = own_total - signal
        inter = products.sum(axis=(1, 4)) - own_total
        rates = np.log2(1.0 + signal / (intra + inter + cfg.noise_power))

        states = np.concatenate(
            [
                positions.reshape(batch, -1),
                interleave_complex(beams).reshape(batch, -1),
                self._users.reshape(batch, -1),
                interleave_complex(channels).reshape(batch, -1),
                rates.reshape(batch, -1),
            ],
            axis=1,
        )
        own_ch = np.einsum("biikm->bikm", channels)
        obs = np.concatenate(
            [
                positions.reshape(batch, n, -1),
                interleave_complex(beams).reshape(batch, n, -1),
                self._users.reshape(batch, n, -1),
                interleave_complex(own_ch).reshape(batch, n, -1),
                inter,
                rates,
            ],
            axis=2,
        )
        return states, obs, rates, inter

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Advance the pool one step with flat actions (B, N, d_a); returns
        flattened states (B, d_s), observations (B, N, d_o), rewards (B,)."""
        if self._coef is None:
            raise RuntimeError("reset() must be called before step()")
        cfg = self.config
        batch, n = actions.shape[0], cfg.num_bs
        m, k = cfg.num_antennas, cfg.num_users
        split = 3 * m

        if self.freeze_fa:
            positions = self._fa.copy()
        else:
            positions = np.ascontiguousarray(actions[..., :split], dtype=float).reshape(
                batch, n, m, 3
            )
        positions[..., 0] = np.clip(positions[..., 0], 0.0, cfg.region[0])
        positions[..., 1] = np.clip(positions[..., 1], 0.0, cfg.region[1])
        positions[..., 2] = cfg.plane_height

        pairs = np.ascontiguousarray(actions[..., split:], dtype=float).reshape(batch, n, k, m, 2)
        beams = pairs[..., 0] + 1j * pairs[..., 1]
        total = np.sum(np.abs(beams) ** 2, axis=(2, 3))
        over = total > cfg.max_power
        scale = np.where(over, np.sqrt(cfg.max_power / np.where(over, total, 1.0)), 1.0)
        beams = beams * scale[:, :, None, None]

        if m >= 2 and cfg.min_spacing > 0:
            rows, cols = _upper_pairs(m)
            diffs = positions[:, :, rows] - positions[:, :, cols]
            sq = np.einsum("bnpd,bnpd->bnp", diffs, diffs)
            violated = np.any(sq < cfg.min_spacing * cfg.min_spacing, axis=2)
        else:
            violated = np.zeros((batch, n), dtype=bool)

        states, obs, rates, _ = self._physics(positions, beams)
        rewards = np.where(violated.any(axis=1), -cfg.penalty, rates.sum(axis=(1, 2)))
        self._fa = positions
        return states, obs, rewards


def _direction_stack(elevation: np.ndarray, azimuth: np.ndarray) -> np.ndarray:
    """Direction cosines on the last axis for broadcast elevation/azimuth."""
    return np.stack(
        [
            np.cos(elevation) * np.cos(azimuth),
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
        ],
        axis=-1,
    )
