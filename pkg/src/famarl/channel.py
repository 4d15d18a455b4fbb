"""Field-response channel model for fluid-antenna transmitters.

Each link (BS -> user) is a sum of L planar paths.  A path contributes the
product of the receive response at the user position, a path gain scaled by
1/sqrt(L), and the transmit response at each fluid-antenna position:

    h_m = sum_l conj(f_l(v)) * (zeta_l / sqrt(L)) * g_l(u_m)

with f_l, g_l pure phase terms exp(j * (2*pi/lambda) * <pos, direction>).
Direction vectors are the virtual angles (eta, beta, nu) of the path's
elevation/azimuth pair and always have unit norm, which is what makes the
position-to-channel Jacobian norm bound tight and position-independent.

In ``bounded`` mode path gains are unit modulus and the large-scale factor
is 1; in ``statistical`` mode gains are standard circular complex Gaussians
and the channel is scaled by sqrt(g0 * distance**-alpha).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import NetworkConfig
from .errors import ConfigError, GeometryError


class VirtualAngles(NamedTuple):
    eta: float
    beta: float
    nu: float


def virtual_angles(elevation: float, azimuth: float) -> VirtualAngles:
    """Map an (elevation, azimuth) pair to its direction cosines."""
    return VirtualAngles(
        eta=np.cos(elevation) * np.cos(azimuth),
        beta=np.cos(elevation) * np.sin(azimuth),
        nu=np.sin(elevation),
    )


def direction_cosines(angles: np.ndarray) -> np.ndarray:
    """Vectorized virtual angles: (L, 2) elevation/azimuth -> (L, 3) unit vectors."""
    elevation, azimuth = angles[:, 0], angles[:, 1]
    return np.stack(
        [
            np.cos(elevation) * np.cos(azimuth),
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
        ],
        axis=1,
    )


@dataclass(frozen=True)
class ChannelGeometry:
    """Per-link multipath state, fixed for the duration of an episode.

    aoa/aod hold (L, 2) elevation/azimuth pairs for the receive and transmit
    sides; one set per link, shared by all antennas of the array.  gains are
    the complex path coefficients zeta_l (the 1/sqrt(L) factor is applied in
    the response computation, not stored here).
    """

    aoa: np.ndarray
    aod: np.ndarray
    gains: np.ndarray
    mode: str
    large_scale: float = 1.0

    def __post_init__(self) -> None:
        aoa = np.asarray(self.aoa, dtype=float)
        aod = np.asarray(self.aod, dtype=float)
        gains = np.asarray(self.gains, dtype=complex)
        if aoa.ndim != 2 or aoa.shape[1] != 2 or aoa.shape[0] < 1:
            raise ConfigError(f"aoa must have shape (L, 2) with L >= 1, got {aoa.shape}")
        if aod.shape != aoa.shape or gains.shape != (aoa.shape[0],):
            raise ConfigError(
                f"inconsistent geometry shapes: aoa {aoa.shape}, aod {aod.shape}, gains {gains.shape}"
            )
        if self.mode not in ("bounded", "statistical"):
            raise ConfigError(f"mode must be 'bounded' or 'statistical', got {self.mode!r}")
        if self.mode == "bounded" and not np.allclose(np.abs(gains), 1.0, atol=1e-9):
            raise ConfigError("bounded mode requires unit-modulus path gains")
        if self.large_scale <= 0:
            raise ConfigError("large_scale must be positive")
        for name, arr in (("aoa", aoa), ("aod", aod), ("gains", gains)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_paths(self) -> int:
        return self.aoa.shape[0]

    @property
    def aoa_directions(self) -> np.ndarray:
        cached = self.__dict__.get("_aoa_dirs")
        if cached is None:
            cached = direction_cosines(self.aoa)
            cached.setflags(write=False)
            object.__setattr__(self, "_aoa_dirs", cached)
        return cached

    @property
    def aod_directions(self) -> np.ndarray:
        cached = self.__dict__.get("_aod_dirs")
        if cached is None:
            cached = direction_cosines(self.aod)
            cached.setflags(write=False)
            object.__setattr__(self, "_aod_dirs", cached)
        return cached


def _phase_response(directions: np.ndarray, positions: np.ndarray, wavelength: float) -> np.ndarray:
    if wavelength <= 0:
        raise ConfigError("wavelength must be positive")
    # einsum keeps the x-contraction order identical to the batched pool path
    projection = np.einsum("lx,mx->lm", directions, np.asarray(positions, dtype=float))
    return np.exp(1j * (2.0 * np.pi / wavelength) * projection)


def user_field_response(position: np.ndarray, geometry: ChannelGeometry, wavelength: float) -> np.ndarray:
    """Receive-side response f(v): (L,) phase vector at the user position."""
    return _phase_response(geometry.aoa_directions, np.atleast_2d(position), wavelength)[:, 0]


def bs_field_response(positions: np.ndarray, geometry: ChannelGeometry, wavelength: float) -> np.ndarray:
    """Transmit-side responses G(u_1..u_M): (L, M) phase matrix."""
    positions = np.atleast_2d(positions)
    if positions.shape[1] != 3:
        raise ConfigError(f"antenna positions must have shape (M, 3), got {positions.shape}")
    return _phase_response(geometry.aod_directions, positions, wavelength)


def path_coefficients(position: np.ndarray, geometry: ChannelGeometry, wavelength: float) -> np.ndarray:
    """Receive-side part of each path: conj(f_l) * zeta_l / sqrt(L), with the
    large-scale amplitude folded in for statistical mode.  Shape (L,)."""
    f = user_field_response(position, geometry, wavelength)
    coef = np.conj(f) * geometry.gains / np.sqrt(geometry.num_paths)
    if geometry.mode == "statistical":
        coef = coef * np.sqrt(geometry.large_scale)
    return coef


def channel_vector(
    user_position: np.ndarray,
    antenna_positions: np.ndarray,
    geometry: ChannelGeometry,
    wavelength: float,
) -> np.ndarray:
    """Channel row h (M,) from an array at ``antenna_positions`` to one user."""
    antenna_positions = np.atleast_2d(antenna_positions)
    if antenna_positions.shape[0] < 1:
        raise ConfigError("need at least one antenna position")
    coef = path_coefficients(user_position, geometry, wavelength)
    g = bs_field_response(antenna_positions, geometry, wavelength)
    return coef @ g


def channel_jacobian(
    user_position: np.ndarray,
    antenna_positions: np.ndarray,
    geometry: ChannelGeometry,
    wavelength: float,
) -> np.ndarray:
    """Real Jacobian of the channel with respect to antenna coordinates.

    Rows 2m and 2m+1 are the gradients of Re(h_m) and Im(h_m); columns
    3m'..3m'+2 are the coordinates of antenna m'.  Antenna m's channel entry
    depends only on its own position, so all cross-antenna blocks are zero
    and each diagonal 2x3 block has spectral norm at most 2*pi*sqrt(L)/lambda
    (times the large-scale amplitude in statistical mode).
    """
    antenna_positions = np.atleast_2d(antenna_positions)
    num_antennas = antenna_positions.shape[0]
    coef = path_coefficients(user_position, geometry, wavelength)
    g = bs_field_response(antenna_positions, geometry, wavelength)
    wavenumber = 2.0 * np.pi / wavelength
    # grad[m, c] = sum_l coef_l * g_lm * j * k * d_lc
    grad = np.einsum("l,lm,lc->mc", coef, g, 1j * wavenumber * geometry.aod_directions)
    jac = np.zeros((2 * num_antennas, 3 * num_antennas))
    for m in range(num_antennas):
        jac[2 * m, 3 * m : 3 * m + 3] = grad[m].real
        jac[2 * m + 1, 3 * m : 3 * m + 3] = grad[m].imag
    return jac


def jacobian_block_bound(num_paths: int, wavelength: float, large_scale: float = 1.0) -> float:
    """Upper bound on the spectral norm of one antenna's 2x3 Jacobian block."""
    return 2.0 * np.pi * np.sqrt(num_paths) * np.sqrt(large_scale) / wavelength


def link_distance(bs_position, user_position) -> np.ndarray:
    """BS-to-user distance(s), broadcasting over leading axes.  The squared
    coordinates are summed in a fixed (x, then y, then z) order so scalar and
    batched evaluations agree to the last bit."""
    diff = np.asarray(bs_position, dtype=float) - np.asarray(user_position, dtype=float)
    return np.sqrt((diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]) + diff[..., 2] * diff[..., 2])


def sample_geometry(
    rng: np.random.Generator,
    config: NetworkConfig,
    bs_position: np.ndarray,
    user_position: np.ndarray,
    mode: str | None = None,
) -> ChannelGeometry:
    """Draw fresh multipath geometry for one BS -> user link.

    Elevations are uniform on [-pi/2, pi/2] and azimuths on [-pi, pi] for both
    link ends.  Bounded mode draws unit-modulus gains; statistical mode draws
    circular Gaussian gains and attaches the large-scale factor
    g0 * distance**-alpha.
    """
    mode = config.gain_mode if mode is None else mode
    distance = float(link_distance(bs_position, user_position))
    if distance <= 0.0:
        raise GeometryError("user position coincides with the base station")
    num_paths = config.num_paths
    aoa = np.column_stack(
        [rng.uniform(-np.pi / 2, np.pi / 2, num_paths), rng.uniform(-np.pi, np.pi, num_paths)]
    )
    aod = np.column_stack(
        [rng.uniform(-np.pi / 2, np.pi / 2, num_paths), rng.uniform(-np.pi, np.pi, num_paths)]
    )
    if mode == "bounded":
        gains = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, num_paths))
        large_scale = 1.0
    else:
        gains = (rng.standard_normal(num_paths) + 1j * rng.standard_normal(num_paths)) / np.sqrt(2.0)
        large_scale = config.large_scale_reference * distance ** (-config.path_loss_exponent)
    return ChannelGeometry(aoa=aoa, aod=aod, gains=gains, mode=mode, large_scale=large_scale)
