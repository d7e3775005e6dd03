"""XOR parity over equal-length blocks."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import ContractError


def _as_arrays(blocks: Sequence[bytes]) -> list[np.ndarray]:
    if not blocks:
        raise ContractError("need at least one block")
    size = len(blocks[0])
    for b in blocks:
        if len(b) != size:
            raise ContractError(f"block length mismatch: {len(b)} != {size}")
    return [np.frombuffer(b, dtype=np.uint8) for b in blocks]


def xor_blocks(blocks: Sequence[bytes]) -> bytes:
    arrays = _as_arrays(blocks)
    acc = arrays[0].copy()
    for a in arrays[1:]:
        np.bitwise_xor(acc, a, out=acc)
    return acc.tobytes()


def compute_parity(blocks: Sequence[bytes]) -> bytes:
    """Parity block of a stripe: the byte-wise XOR of all its data blocks."""
    return xor_blocks(blocks)


def incremental_parity(old_data: bytes, new_data: bytes, old_parity: bytes) -> bytes:
    """New parity after replacing one block, without touching the others."""
    return xor_blocks([old_data, new_data, old_parity])


def reconstruct(surviving: Sequence[bytes], parity: bytes, n_data: int | None = None) -> bytes:
    """Rebuild the one missing data block of a stripe.

    ``n_data`` is optional; when given the survivor count must be exactly
    ``n_data - 1``.
    """
    if n_data is not None and len(surviving) != n_data - 1:
        raise ContractError(
            f"expected {n_data - 1} surviving blocks, got {len(surviving)}"
        )
    if not surviving:
        raise ContractError("need at least one surviving block")
    return xor_blocks([*surviving, parity])
