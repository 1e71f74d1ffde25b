"""Channel matrices, Gram matrices and the seeded random source.

A channel matrix is a ``K x N_t`` complex ndarray whose rows are the user
channels.  Functions here validate their inputs and always return fresh
``complex128`` arrays.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import DimensionError, SelectionIndexError

log = logging.getLogger(__name__)

__all__ = [
    "RandomSource",
    "as_generator",
    "validate_channel",
    "generate_rayleigh",
    "gram",
    "submatrix",
    "load_channel",
    "dump_channel",
    "MAX_CONDITION",
]

# Square channels above this condition number are redrawn.
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class RandomSource:
    """One independent random stream, identified by ``(seed, stream_id)``.

    Each trial of a sweep gets its own ``stream_id`` so trials can run in
    any order or process and still see the same draws.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))


RngLike = Union[RandomSource, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RandomSource):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomSource or numpy Generator, got {type(rng).__name__}")


def validate_channel(h) -> np.ndarray:
    """Return ``h`` as a 2-D complex128 array, checking shape and finiteness."""
    arr = np.asarray(h, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"channel must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("channel contains NaN or Inf entries")
    return arr


def generate_rayleigh(k: int, n_tx: int, rng: RngLike) -> np.ndarray:
    """Draw a ``k x n_tx`` matrix of i.i.d. CN(0, 1) entries.

    Real and imaginary parts each have variance 1/2.  When the matrix is
    square and its condition number exceeds ``MAX_CONDITION`` it is
    discarded and redrawn from the same stream.
    """
    if int(k) != k or int(n_tx) != n_tx or k < 1 or n_tx < 1:
        raise DimensionError(f"invalid channel dimensions k={k}, n_tx={n_tx}")
    gen = as_generator(rng)
    while True:
        re = gen.standard_normal((k, n_tx))
        im = gen.standard_normal((k, n_tx))
        h = (re + 1j * im) * np.sqrt(0.5)
        if k != n_tx or np.linalg.cond(h) <= MAX_CONDITION:
            return h
        log.info("redrawing ill-conditioned %dx%d channel", k, n_tx)


def gram(h) -> np.ndarray:
    """Gram matrix ``R = H H^H``, forced exactly Hermitian."""
    h = validate_channel(h)
    r = h @ h.conj().T
    # Symmetrize so downstream Hermitian checks hold bit-exactly.
    r = 0.5 * (r + r.conj().T)
    r[np.diag_indices_from(r)] = r.diagonal().real
    return r


def submatrix(h, users: Sequence[int]) -> np.ndarray:
    """Rows of ``h`` for ``users``, in the given order."""
    h = validate_channel(h)
    idx = [int(u) for u in users]
    if not idx:
        raise SelectionIndexError("empty user set")
    if len(set(idx)) != len(idx):
        raise SelectionIndexError(f"duplicate user index in {idx}")
    bad = [u for u in idx if u < 0 or u >= h.shape[0]]
    if bad:
        raise SelectionIndexError(f"user indices {bad} out of range 0..{h.shape[0] - 1}")
    return h[idx].copy()


def load_channel(path) -> np.ndarray:
    """Read a fixed channel from a JSON file with ``k``, ``n_tx``, ``re``, ``im``.

    ``re`` and ``im`` are row-major flat arrays of length ``k * n_tx``.
    """
    data = json.loads(Path(path).read_text())
    return channel_from_record(data)


def channel_from_record(data: dict) -> np.ndarray:
    try:
        k, n_tx = int(data["k"]), int(data["n_tx"])
        re = np.asarray(data["re"], dtype=float)
        im = np.asarray(data["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DimensionError(f"malformed channel record: {exc}") from exc
    if k < 1 or n_tx < 1 or re.size != k * n_tx or im.size != k * n_tx:
        raise DimensionError(
            f"channel record sizes do not match k={k}, n_tx={n_tx} "
            f"(re has {re.size}, im has {im.size})"
        )
    return validate_channel((re + 1j * im).reshape(k, n_tx))


def dump_channel(h, path=None) -> dict:
    """Inverse of :func:`load_channel`; writes to ``path`` when given."""
    h = validate_channel(h)
    rec = {
        "k": h.shape[0],
        "n_tx": h.shape[1],
        "re": h.real.ravel().tolist(),
        "im": h.imag.ravel().tolist(),
    }
    if path is not None:
        Path(path).write_text(json.dumps(rec, indent=2) + "\n")
    return rec
