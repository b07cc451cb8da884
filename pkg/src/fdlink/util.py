"""Small shared helpers: dB conversion, complex RNG draws, linear algebra glue."""

from __future__ import annotations

import numpy as np

LN2 = float(np.log(2.0))


class ConfigError(ValueError):
    """Invalid configuration or experiment spec (CLI exit code 2)."""


class DualSearchError(RuntimeError):
    """A scalar dual search failed to bracket/converge (CLI exit code 3)."""


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def format_db(x) -> str:
    return f"{float(linear_to_db(x)):.6f}"


def parse_level(value) -> float:
    """Parse a linear power-like quantity; strings with a dB suffix convert as 10^(x/10)."""
    if isinstance(value, str):
        text = value.strip().replace("−", "-")  # unicode minus
        if text.lower().endswith("db"):
            return float(db_to_linear(float(text[:-2].strip())))
        return float(text)
    return float(value)


def crandn(rng: np.random.Generator, shape, var=1.0):
    """Circularly-symmetric complex Gaussian, E|x|^2 = var."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().swapaxes(-2, -1)


def herm(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dagger(a))


def vec(a: np.ndarray) -> np.ndarray:
    # column-major so that vec(A X B) = (B^T kron A) vec(X)
    return a.reshape(-1, order="F")


def unvec(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return x.reshape(rows, cols, order="F")


def stabilized(sigma: np.ndarray) -> np.ndarray:
    """Relative ridge 1e-12*tr/M before inversion; a safety net, not a crutch."""
    m = sigma.shape[-1]
    ridge = 1e-12 * np.trace(sigma, axis1=-2, axis2=-1).real / m
    return sigma + ridge[..., None, None] * np.eye(m)


def rng_from(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
