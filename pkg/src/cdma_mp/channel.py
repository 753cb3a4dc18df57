"""Synthetic CDMA transmissions: random spreading codes, BPSK bits, AWGN.

The received chip vector is

    y_mu = (1/sqrt(N)) sum_k s_mu_k b_k + sigma0 * n_mu

with K users, spreading factor N, chips s_mu_k and bits b_k in {-1, +1},
and n_mu standard normal.  All per-user power is unit (BPSK, perfect power
control).  Sampling is pure given (config, seed): trials are seeded through
a splittable generator keyed by (master seed, trial index, stream tag), so
results do not depend on execution order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import ConfigurationError

# Stream tags for the per-trial seed sequences.
STREAM_CODES = 0
STREAM_BITS = 1
STREAM_NOISE = 2


@dataclass(frozen=True)
class SystemConfig:
    """Static parameters of one CDMA system.

    Attributes
    ----------
    num_users : int
        K, number of simultaneous transmitters (>= 1).
    spreading_factor : int
        N, chips per symbol (>= 1).
    true_noise_variance : float
        sigma0^2 of the channel AWGN (>= 0; 0 means a noiseless channel).
    assumed_noise_variance : float or None
        sigma^2 a detector may assume.  None means "noise level unknown",
        which is the regime the improved detector is built for.
    """

    num_users: int
    spreading_factor: int
    true_noise_variance: float
    assumed_noise_variance: float | None = None

    def __post_init__(self) -> None:
        if self.num_users < 1 or self.spreading_factor < 1:
            raise ConfigurationError(
                f"need num_users >= 1 and spreading_factor >= 1, got "
                f"K={self.num_users}, N={self.spreading_factor}"
            )
        if self.true_noise_variance < 0:
            raise ConfigurationError("true_noise_variance must be >= 0")
        if self.assumed_noise_variance is not None and self.assumed_noise_variance < 0:
            raise ConfigurationError("assumed_noise_variance must be >= 0")

    @property
    def load(self) -> float:
        """System load beta = K / N."""
        return self.num_users / self.spreading_factor

    def to_dict(self) -> dict:
        return {
            "num_users": self.num_users,
            "spreading_factor": self.spreading_factor,
            "true_noise_variance": self.true_noise_variance,
            "assumed_noise_variance": self.assumed_noise_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        return cls(
            num_users=int(d["num_users"]),
            spreading_factor=int(d["spreading_factor"]),
            true_noise_variance=float(d["true_noise_variance"]),
            assumed_noise_variance=(
                None
                if d.get("assumed_noise_variance") is None
                else float(d["assumed_noise_variance"])
            ),
        )


@dataclass(frozen=True)
class TrialSeed:
    """Seed for one trial: (master seed, trial index).

    Every random stream of the trial draws from an independent
    ``SeedSequence`` spawned at (trial, stream tag), so trials are
    reproducible regardless of scheduling.
    """

    master: int
    trial: int = 0

    def sequence(self, stream: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.master, spawn_key=(self.trial, stream))

    def generator(self, stream: int) -> np.random.Generator:
        return np.random.default_rng(self.sequence(stream))


@dataclass(frozen=True)
class SpreadingSystem:
    """One sampled transmission: codes, bits, noise and received chips.

    Chips and bits are held sign-compact (int8, exactly +-1); arithmetic
    goes through the cached dense float views.  Instances are immutable and
    safe to share across threads.
    """

    config: SystemConfig
    codes: np.ndarray  # (N, K) int8, entries +-1
    bits: np.ndarray  # (K,) int8, entries +-1
    noise: np.ndarray  # (N,) float64
    received: np.ndarray  # (N,) float64

    @cached_property
    def codes_real(self) -> np.ndarray:
        s = self.codes.astype(np.float64)
        s.setflags(write=False)
        return s

    @cached_property
    def bits_real(self) -> np.ndarray:
        b = self.bits.astype(np.float64)
        b.setflags(write=False)
        return b

    @property
    def num_users(self) -> int:
        return self.codes.shape[1]

    @property
    def spreading_factor(self) -> int:
        return self.codes.shape[0]

    def to_dict(self) -> dict:
        """Flat layout for golden tests: config, row-major code signs, bits, y."""
        return {
            "config": self.config.to_dict(),
            "codes": self.codes.reshape(-1).tolist(),
            "bits": self.bits.tolist(),
            "received": self.received.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpreadingSystem":
        config = SystemConfig.from_dict(d["config"])
        n, k = config.spreading_factor, config.num_users
        codes = np.asarray(d["codes"], dtype=np.int8).reshape(n, k)
        bits = np.asarray(d["bits"], dtype=np.int8)
        received = np.asarray(d["received"], dtype=np.float64)
        # Noise is not part of the layout; reconstruct it from the residual.
        clean = transmit(codes.astype(np.float64), bits.astype(np.float64))
        sigma0 = np.sqrt(config.true_noise_variance)
        noise = (received - clean) / sigma0 if sigma0 > 0 else np.zeros(n)
        return _freeze(cls(config=config, codes=codes, bits=bits, noise=noise, received=received))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SpreadingSystem":
        return cls.from_dict(json.loads(text))


def _freeze(sys: SpreadingSystem) -> SpreadingSystem:
    for arr in (sys.codes, sys.bits, sys.noise, sys.received):
        arr.setflags(write=False)
    return sys


def transmit(codes_real: np.ndarray, bits_real: np.ndarray) -> np.ndarray:
    """Noiseless chip vector (1/sqrt(N)) S b for dense +-1 arrays."""
    n = codes_real.shape[0]
    return codes_real @ bits_real / np.sqrt(n)


def make_system(
    config: SystemConfig,
    codes: np.ndarray,
    bits: np.ndarray,
    noise: np.ndarray | None = None,
) -> SpreadingSystem:
    """Assemble a system from explicit arrays (tests, hand instances).

    The received vector is recomputed from the channel equation, so the
    stored arrays satisfy it exactly.
    """
    codes = np.asarray(codes)
    bits = np.asarray(bits)
    if codes.shape != (config.spreading_factor, config.num_users):
        raise ConfigurationError(
            f"codes shape {codes.shape} does not match config "
            f"({config.spreading_factor}, {config.num_users})"
        )
    if bits.shape != (config.num_users,):
        raise ConfigurationError("bits length does not match num_users")
    if not np.all(np.abs(codes) == 1) or not np.all(np.abs(bits) == 1):
        raise ConfigurationError("codes and bits must be exactly +-1")
    if noise is None:
        noise = np.zeros(config.spreading_factor)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (config.spreading_factor,):
        raise ConfigurationError("noise length does not match spreading_factor")
    codes8 = codes.astype(np.int8)
    bits8 = bits.astype(np.int8)
    sigma0 = np.sqrt(config.true_noise_variance)
    received = transmit(codes8.astype(np.float64), bits8.astype(np.float64)) + sigma0 * noise
    return _freeze(
        SpreadingSystem(config=config, codes=codes8, bits=bits8, noise=noise, received=received)
    )


def sample_system(config: SystemConfig, seed: TrialSeed | int) -> SpreadingSystem:
    """Draw codes, bits and noise and form the received vector.

    Codes and bits are i.i.d. uniform on {-1, +1}; noise is standard
    normal (skipped entirely when the channel is noiseless).  The same
    seed gives a bit-identical system.
    """
    if isinstance(seed, int):
        seed = TrialSeed(master=seed)
    n, k = config.spreading_factor, config.num_users
    codes = (seed.generator(STREAM_CODES).integers(0, 2, size=(n, k), dtype=np.int8) * 2 - 1).astype(
        np.int8
    )
    bits = (seed.generator(STREAM_BITS).integers(0, 2, size=k, dtype=np.int8) * 2 - 1).astype(np.int8)
    if config.true_noise_variance > 0:
        noise = seed.generator(STREAM_NOISE).standard_normal(n)
    else:
        noise = np.zeros(n)
    sigma0 = np.sqrt(config.true_noise_variance)
    received = transmit(codes.astype(np.float64), bits.astype(np.float64)) + sigma0 * noise
    return _freeze(
        SpreadingSystem(config=config, codes=codes, bits=bits, noise=noise, received=received)
    )


def empirical_signal_power(sys: SpreadingSystem) -> float:
    """(1/N) sum_mu y_mu^2 -- the received-power estimate the improved
    detector uses in place of any noise-level knowledge."""
    y = sys.received
    return float(y @ y / y.shape[0])
