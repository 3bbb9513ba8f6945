"""Masking distributions over observation vectors ``b`` and the 2xBoolean input code.

``b_i = 1`` means node ``i`` is observed. Schemes that need a per-batch
observation probability (nodewise, deterministic cycle, Markov blanket) draw
it once through :meth:`MaskingScheme.batch_probability` and then sample every
mask of the batch with that same value.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import NoisyOrNetwork

SCHEME_NAMES = ("uniform", "sizewise", "nodewise", "cycle", "markov")


class MaskingError(ValueError):
    pass


@dataclass(frozen=True)
class Mask:
    bits: np.ndarray

    @property
    def size(self) -> int:
        return int(self.bits.sum())


# -- element samplers -------------------------------------------------------


def sample_uniform_masks(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=(count, n), dtype=np.int8)


def sample_sizewise_masks(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    sizes = rng.integers(0, n + 1, size=count)
    template = (np.arange(n)[None, :] < sizes[:, None]).astype(np.int8)
    return rng.permuted(template, axis=1)


def sample_nodewise_masks(n: int, p: float, count: int, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise MaskingError(f"observation probability {p} outside [0, 1]")
    return (rng.random((count, n)) < p).astype(np.int8)


def blanket_indicator(net: NoisyOrNetwork) -> np.ndarray:
    """Row ``i`` flags the Markov blanket of the ``i``-th disease."""
    rows = np.zeros((len(net.disease_nodes), net.n), dtype=np.int8)
    for row, node in enumerate(net.disease_nodes):
        rows[row, sorted(net.markov_blanket(node))] = 1
    return rows


def sample_markov_masks(
    net: NoisyOrNetwork, p: float, count: int, rng: np.random.Generator, indicator=None
) -> np.ndarray:
    """Pick a disease per mask, then observe each blanket member with probability ``p``.

    The chosen disease never belongs to its own blanket, so it stays masked.
    """
    if not 0.0 <= p <= 1.0:
        raise MaskingError(f"observation probability {p} outside [0, 1]")
    if indicator is None:
        indicator = blanket_indicator(net)
    if len(indicator) == 0:
        raise MaskingError("Markov masking needs at least one disease")
    chosen = rng.integers(0, len(indicator), size=count)
    keep = rng.random((count, net.n)) < p
    return (indicator[chosen] & keep).astype(np.int8)


def sample_uniform_mask(n: int, rng: np.random.Generator) -> Mask:
    return Mask(sample_uniform_masks(n, 1, rng)[0])


def sample_sizewise_mask(n: int, rng: np.random.Generator) -> Mask:
    return Mask(sample_sizewise_masks(n, 1, rng)[0])


def sample_nodewise_mask(n: int, p: float, rng: np.random.Generator) -> Mask:
    return Mask(sample_nodewise_masks(n, p, 1, rng)[0])


def sample_markov_mask(net: NoisyOrNetwork, p: float, rng: np.random.Generator) -> Mask:
    return Mask(sample_markov_masks(net, p, 1, rng)[0])


# -- schemes -----------------------------------------------------------------


class MaskingScheme:
    name: str = ""

    def batch_probability(self, rng: np.random.Generator) -> float | None:
        """Per-batch observation probability, or None when the scheme has none."""
        return None

    def sample(self, n: int, count: int, p: float | None, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_batch(self, n: int, count: int, rng: np.random.Generator):
        p = self.batch_probability(rng)
        return self.sample(n, count, p, rng), p

    def get_state(self) -> dict:
        return {}

    def set_state(self, state: dict) -> None:
        pass

    def describe(self) -> dict:
        return {"name": self.name}


class UniformScheme(MaskingScheme):
    name = "uniform"

    def sample(self, n, count, p, rng):
        return sample_uniform_masks(n, count, rng)


class SizewiseScheme(MaskingScheme):
    name = "sizewise"

    def sample(self, n, count, p, rng):
        return sample_sizewise_masks(n, count, rng)


class NodewiseScheme(MaskingScheme):
    name = "nodewise"

    def __init__(self, p_max: float = 1.0):
        if not 0.0 < p_max <= 1.0:
            raise MaskingError("p_max must lie in (0, 1]")
        self.p_max = float(p_max)

    def batch_probability(self, rng):
        return next_nodewise_probability(self, rng)

    def sample(self, n, count, p, rng):
        return sample_nodewise_masks(n, p, count, rng)

    def describe(self):
        return {"name": self.name, "p_max": self.p_max}


def default_cycle_values() -> list[float]:
    return [round(0.05 * i, 2) for i in range(21)]


class DeterministicCycleScheme(MaskingScheme):
    name = "cycle"

    def __init__(self, values=None, cursor: int = 0):
        values = default_cycle_values() if values is None else [float(v) for v in values]
        if not values:
            raise MaskingError("cycle needs at least one value")
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise MaskingError("cycle values must lie in [0, 1]")
        self.values = values
        self.cursor = cursor % len(values)

    def batch_probability(self, rng):
        return next_deterministic_cycle_probability(self)

    def sample(self, n, count, p, rng):
        return sample_nodewise_masks(n, p, count, rng)

    def get_state(self):
        return {"cursor": self.cursor}

    def set_state(self, state):
        self.cursor = int(state["cursor"])

    def describe(self):
        return {"name": self.name, "values": self.values}


class MarkovBlanketScheme(MaskingScheme):
    """Blanket members observed nodewise with ``p ~ Uniform[0, p_max]`` per batch."""

    name = "markov"

    def __init__(self, net: NoisyOrNetwork, p_max: float = 1.0):
        if not net.disease_nodes:
            raise MaskingError("Markov masking needs at least one disease")
        if not 0.0 < p_max <= 1.0:
            raise MaskingError("p_max must lie in (0, 1]")
        self.net = net
        self.p_max = float(p_max)
        self._indicator = blanket_indicator(net)

    def batch_probability(self, rng):
        return float(rng.uniform(0.0, self.p_max))

    def sample(self, n, count, p, rng):
        if n != self.net.n:
            raise MaskingError(f"scheme built for n={self.net.n}, asked for n={n}")
        return sample_markov_masks(self.net, p, count, rng, self._indicator)

    def describe(self):
        return {"name": self.name, "p_max": self.p_max}


def next_nodewise_probability(scheme: MaskingScheme, rng: np.random.Generator) -> float:
    if not isinstance(scheme, NodewiseScheme):
        raise MaskingError(f"{scheme.name!r} is not a nodewise scheme")
    return float(rng.uniform(0.0, scheme.p_max))


def next_deterministic_cycle_probability(scheme: MaskingScheme) -> float:
    if not isinstance(scheme, DeterministicCycleScheme):
        raise MaskingError(f"{scheme.name!r} is not a deterministic-cycle scheme")
    value = scheme.values[scheme.cursor]
    scheme.cursor = (scheme.cursor + 1) % len(scheme.values)
    return value


def make_scheme(name: str, net: NoisyOrNetwork | None = None, **options) -> MaskingScheme:
    if name == "uniform":
        return UniformScheme()
    if name == "sizewise":
        return SizewiseScheme()
    if name == "nodewise":
        return NodewiseScheme(options.get("p_max", 1.0))
    if name == "cycle":
        return DeterministicCycleScheme(options.get("values"))
    if name == "markov":
        if net is None:
            raise MaskingError("Markov masking needs the network")
        return MarkovBlanketScheme(net, options.get("p_max", 1.0))
    raise MaskingError(f"unknown masking scheme {name!r}; choose from {', '.join(SCHEME_NAMES)}")


# -- encoding ----------------------------------------------------------------


def apply_mask(assignments, masks) -> np.ndarray:
    """2xBoolean code: node ``i`` fills slots ``(2i, 2i+1)`` with (0,0) masked,
    (1,0) observed false, (0,1) observed true."""
    x = np.asarray(assignments)
    b = np.asarray(masks.bits if isinstance(masks, Mask) else masks)
    if x.shape != b.shape:
        raise MaskingError(f"assignment shape {x.shape} != mask shape {b.shape}")
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],), dtype=np.float64)
    observed = b != 0
    out[..., 0::2] = observed & (x == 0)
    out[..., 1::2] = observed & (x != 0)
    return out


def decode(encoded) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`apply_mask`: (values, mask), masked values read as 0."""
    enc = np.asarray(encoded)
    false_slot, true_slot = enc[..., 0::2], enc[..., 1::2]
    if np.any((false_slot != 0) & (true_slot != 0)):
        raise MaskingError("illegal (1,1) node code")
    mask = ((false_slot != 0) | (true_slot != 0)).astype(np.int8)
    return (true_slot != 0).astype(np.int8), mask


# -- diagnostics -------------------------------------------------------------------


def mask_size_histogram(
    scheme: MaskingScheme, n: int, samples: int, rng: np.random.Generator, batch_size: int = 512
) -> np.ndarray:
    """Counts of mask sizes ``0..n``, drawing masks batch by batch as training would."""
    if samples < 1:
        raise MaskingError("samples must be >= 1")
    counts = np.zeros(n + 1, dtype=np.int64)
    remaining = samples
    while remaining:
        count = min(batch_size, remaining)
        masks, _ = scheme.sample_batch(n, count, rng)
        counts += np.bincount(masks.sum(axis=1), minlength=n + 1)
        remaining -= count
    return counts


def write_histogram(path, counts, scheme_name: str, n: int, samples: int, seed: int) -> None:
    lines = [f"# scheme={scheme_name} n={n} samples={samples} seed={seed}", "size count"]
    lines += [f"{k} {int(c)}" for k, c in enumerate(counts)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_histogram(path) -> tuple[dict, np.ndarray]:
    header, _, *rows = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in header.lstrip("# ").split())
    counts = np.array([int(r.split()[1]) for r in rows], dtype=np.int64)
    return meta, counts
