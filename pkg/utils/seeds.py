"""
App name: Takens Reservoir Toolkit (takres)
Description: Deterministic seed schedule for ensembles of (network, sequence) runs.

Derivation (reproducible in any language):
    seed(base, role, index) = first 8 bytes, big-endian, of
        SHA-256( ASCII "{base}:{role}:{index}" )
    masked to 63 bits. Roles are "network" and "sequence".
"""

import hashlib
from dataclasses import dataclass
from typing import List

from utils.exceptions import ParameterError

_MASK_63 = (1 << 63) - 1


@dataclass(frozen=True)
class SeedPair:
    """Seeds of one ensemble run."""

    run_id: int
    network_id: int
    sequence_id: int
    network_seed: int
    sequence_seed: int


def derive_seed(base_seed: int, role: str, index: int) -> int:
    """Counter-mode hash of (base, role, index)."""
    digest = hashlib.sha256(f"{base_seed}:{role}:{index}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big") & _MASK_63


def seed_schedule(base_seed: int, n_networks: int, n_sequences: int) -> List[SeedPair]:
    """
    Func: Build the per-run seed pairs of an ensemble.
    Args:
        * base_seed: experiment seed
        * n_networks: number of reservoir initialisations
        * n_sequences: number of input sequences per network
    Return:
        n_networks * n_sequences SeedPair objects, network-major order.
    """
    if n_networks < 1 or n_sequences < 1:
        raise ParameterError(
            f"ensemble counts must be >= 1 (got {n_networks} x {n_sequences})"
        )

    network_seeds = [derive_seed(base_seed, "network", i) for i in range(n_networks)]
    sequence_seeds = [derive_seed(base_seed, "sequence", j) for j in range(n_sequences)]

    pairs = []
    for i, net_seed in enumerate(network_seeds):
        for j, seq_seed in enumerate(sequence_seeds):
            pairs.append(SeedPair(
                run_id=i * n_sequences + j,
                network_id=i,
                sequence_id=j,
                network_seed=net_seed,
                sequence_seed=seq_seed,
            ))
    return pairs
