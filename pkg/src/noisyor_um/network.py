"""Three-layer Noisy-OR Bayesian network: risk factors -> diseases -> symptoms.

Nodes are globally ordered ``[risk factors, diseases, symptoms]``. Every
conditional is stored as the probability of the child being *false*:

    P(RF_j = 0)            = prior_j
    P(D_i = 0 | rf)        = leak_i * prod_j weight_ij ** rf_j
    P(S_j = 0 | d)         = leak_j * prod_k weight_jk ** d_k

Missing edges are stored as weight 1.0 so the products above can be taken
over the whole parent layer.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

RISK, DISEASE, SYMPTOM = "R", "D", "S"
LAYERS = (RISK, DISEASE, SYMPTOM)

DEFAULT_PARAM_RANGES = {
    "rf_priors": (0.5, 0.95),
    "leaks": (0.7, 0.99),
    "weights": (0.1, 0.9),
}


class NetworkError(ValueError):
    pass


def _check_open_unit(name: str, values: np.ndarray) -> None:
    if values.size and not np.all((values > 0.0) & (values < 1.0)):
        raise NetworkError(f"{name} must lie strictly inside (0, 1)")


@dataclass(frozen=True, eq=False)
class NoisyOrNetwork:
    """Immutable Noisy-OR network.

    ``disease_weights`` has shape ``(N_D, N_R)`` and ``symptom_weights`` has
    shape ``(N_S, N_D)``; entries without an edge hold exactly 1.0 and are
    flagged False in the matching adjacency matrix.
    """

    layer_sizes: tuple[int, int, int]
    rf_priors: np.ndarray
    disease_leaks: np.ndarray
    disease_weights: np.ndarray
    disease_adjacency: np.ndarray
    symptom_leaks: np.ndarray
    symptom_weights: np.ndarray
    symptom_adjacency: np.ndarray
    seed: int | None = None
    _blankets: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n_r, n_d, n_s = self.layer_sizes
        shapes = {
            "rf_priors": (n_r,),
            "disease_leaks": (n_d,),
            "disease_weights": (n_d, n_r),
            "disease_adjacency": (n_d, n_r),
            "symptom_leaks": (n_s,),
            "symptom_weights": (n_s, n_d),
            "symptom_adjacency": (n_s, n_d),
        }
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise NetworkError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
        if np.any(self.disease_weights[~self.disease_adjacency] != 1.0) or np.any(
            self.symptom_weights[~self.symptom_adjacency] != 1.0
        ):
            raise NetworkError("non-edges must carry weight 1.0")

    @classmethod
    def create(
        cls,
        rf_priors,
        disease_leaks,
        disease_edges,
        symptom_leaks,
        symptom_edges,
        seed: int | None = None,
        validate: bool = True,
    ) -> "NoisyOrNetwork":
        """Build a network from edge lists.

        ``disease_edges`` holds ``(rf_index, d_index, weight)`` triples and
        ``symptom_edges`` holds ``(d_index, s_index, weight)`` triples, with
        indices local to their layer. ``validate=False`` admits degenerate
        0/1 parameters and is meant for tests only.
        """
        rf_priors = np.array(rf_priors, dtype=np.float64)
        disease_leaks = np.array(disease_leaks, dtype=np.float64)
        symptom_leaks = np.array(symptom_leaks, dtype=np.float64)
        sizes = (len(rf_priors), len(disease_leaks), len(symptom_leaks))
        if min(sizes) < 1:
            raise NetworkError("every layer needs at least one node")

        d_w = np.ones((sizes[1], sizes[0]))
        d_adj = np.zeros((sizes[1], sizes[0]), dtype=bool)
        for parent, child, w in disease_edges:
            if d_adj[child, parent]:
                raise NetworkError(f"duplicate edge RF{parent} -> D{child}")
            d_adj[child, parent] = True
            d_w[child, parent] = w
        s_w = np.ones((sizes[2], sizes[1]))
        s_adj = np.zeros((sizes[2], sizes[1]), dtype=bool)
        for parent, child, w in symptom_edges:
            if s_adj[child, parent]:
                raise NetworkError(f"duplicate edge D{parent} -> S{child}")
            s_adj[child, parent] = True
            s_w[child, parent] = w

        if validate:
            _check_open_unit("rf_priors", rf_priors)
            _check_open_unit("disease_leaks", disease_leaks)
            _check_open_unit("symptom_leaks", symptom_leaks)
            _check_open_unit("disease edge weights", d_w[d_adj])
            _check_open_unit("symptom edge weights", s_w[s_adj])
        return cls(sizes, rf_priors, disease_leaks, d_w, d_adj, symptom_leaks, s_w, s_adj, seed)

    # -- layout ---------------------------------------------------------------

    @property
    def n(self) -> int:
        return sum(self.layer_sizes)

    @property
    def offsets(self) -> tuple[int, int, int]:
        n_r, n_d, _ = self.layer_sizes
        return (0, n_r, n_r + n_d)

    def layer_slice(self, layer: str) -> slice:
        idx = LAYERS.index(layer)
        start = self.offsets[idx]
        return slice(start, start + self.layer_sizes[idx])

    def layer_of(self, node: int) -> str:
        self._check_node(node)
        for layer in reversed(LAYERS):
            if node >= self.offsets[LAYERS.index(layer)]:
                return layer
        raise AssertionError("unreachable")

    @property
    def disease_nodes(self) -> list[int]:
        return list(range(*self.layer_slice(DISEASE).indices(self.n)))

    def node_name(self, node: int) -> str:
        layer = self.layer_of(node)
        return f"{layer}{node - self.offsets[LAYERS.index(layer)]}"

    def _check_node(self, node: int) -> None:
        if not 0 <= node < self.n:
            raise IndexError(f"node {node} out of range for n={self.n}")

    def _local(self, node: int, layer: str) -> int:
        sl = self.layer_slice(layer)
        if not sl.start <= node < sl.stop:
            raise IndexError(f"node {node} is not in layer {layer}")
        return node - sl.start

    @property
    def edge_counts(self) -> tuple[int, int]:
        return int(self.disease_adjacency.sum()), int(self.symptom_adjacency.sum())

    # -- graph ----------------------------------------------------------------

    def parents(self, node: int) -> set[int]:
        layer = self.layer_of(node)
        if layer == RISK:
            return set()
        if layer == DISEASE:
            row = self.disease_adjacency[self._local(node, DISEASE)]
            return {int(j) + self.offsets[0] for j in np.flatnonzero(row)}
        row = self.symptom_adjacency[self._local(node, SYMPTOM)]
        return {int(k) + self.offsets[1] for k in np.flatnonzero(row)}

    def children(self, node: int) -> set[int]:
        layer = self.layer_of(node)
        if layer == RISK:
            col = self.disease_adjacency[:, self._local(node, RISK)]
            return {int(i) + self.offsets[1] for i in np.flatnonzero(col)}
        if layer == DISEASE:
            col = self.symptom_adjacency[:, self._local(node, DISEASE)]
            return {int(j) + self.offsets[2] for j in np.flatnonzero(col)}
        return set()

    def markov_blanket(self, node: int) -> frozenset[int]:
        """Parents, children and the children's other parents of ``node``."""
        if node not in self._blankets:
            kids = self.children(node)
            blanket = self.parents(node) | kids
            for child in kids:
                blanket |= self.parents(child)
            blanket.discard(node)
            self._blankets[node] = frozenset(blanket)
        return self._blankets[node]

    # -- conditional probabilities -----------------------------------------------

    def prob_risk_factor_false(self, node: int) -> float:
        return float(self.rf_priors[self._local(node, RISK)])

    def prob_disease_false_given_parents(self, node: int, rf_values) -> float:
        i = self._local(node, DISEASE)
        rf = np.asarray(rf_values)
        if rf.shape != (self.layer_sizes[0],):
            raise ValueError("rf_values must cover every risk factor")
        return float(self.disease_leaks[i] * np.prod(self.disease_weights[i] ** rf))

    def prob_symptom_false_given_parents(self, node: int, d_values) -> float:
        j = self._local(node, SYMPTOM)
        d = np.asarray(d_values)
        if d.shape != (self.layer_sizes[1],):
            raise ValueError("d_values must cover every disease")
        return float(self.symptom_leaks[j] * np.prod(self.symptom_weights[j] ** d))

    def node_log_probabilities(self, assignments) -> np.ndarray:
        """Per-node log CPD values ``log P(x_i | pa(x_i))``; shape ``(..., n)``."""
        x = np.asarray(assignments)
        if x.shape[-1] != self.n:
            raise ValueError(f"assignment length {x.shape[-1]} != n={self.n}")
        x = x.astype(np.float64)
        rf = x[..., self.layer_slice(RISK)]
        d = x[..., self.layer_slice(DISEASE)]
        s = x[..., self.layer_slice(SYMPTOM)]
        with np.errstate(divide="ignore"):
            p_rf0 = self.rf_priors
            p_d0 = self.disease_leaks * np.exp(rf @ np.log(self.disease_weights).T)
            p_s0 = self.symptom_leaks * np.exp(d @ np.log(self.symptom_weights).T)
            parts = [
                np.log(np.where(v == 1, 1.0 - p0, p0))
                for v, p0 in ((rf, p_rf0), (d, p_d0), (s, p_s0))
            ]
        return np.concatenate(parts, axis=-1)

    def log_joint_probability(self, assignments) -> np.ndarray | float:
        out = self.node_log_probabilities(assignments).sum(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def joint_probability(self, assignments) -> np.ndarray | float:
        return np.exp(self.log_joint_probability(assignments))

    # -- sampling ---------------------------------------------------------------

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Ancestral samples, shape ``(count, n)``, dtype int8."""
        n_r, n_d, n_s = self.layer_sizes
        rf = rng.random((count, n_r)) >= self.rf_priors
        with np.errstate(divide="ignore"):
            p_d0 = self.disease_leaks * np.exp(rf @ np.log(self.disease_weights).T)
        d = rng.random((count, n_d)) >= p_d0
        with np.errstate(divide="ignore"):
            p_s0 = self.symptom_leaks * np.exp(d @ np.log(self.symptom_weights).T)
        s = rng.random((count, n_s)) >= p_s0
        return np.concatenate([rf, d, s], axis=1).astype(np.int8)

    def ancestral_sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample(1, rng)[0]

    # -- serialisation -------------------------------------------------------------

    def to_dict(self) -> dict:
        d_edges = [
            [int(j), int(i), float(self.disease_weights[i, j])]
            for i, j in zip(*np.nonzero(self.disease_adjacency))
        ]
        s_edges = [
            [int(k), int(j), float(self.symptom_weights[j, k])]
            for j, k in zip(*np.nonzero(self.symptom_adjacency))
        ]
        return {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "layer_sizes": list(self.layer_sizes),
            "rf_priors": self.rf_priors.tolist(),
            "disease_leaks": self.disease_leaks.tolist(),
            "disease_edges": sorted(d_edges),
            "symptom_leaks": self.symptom_leaks.tolist(),
            "symptom_edges": sorted(s_edges),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NoisyOrNetwork":
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise NetworkError(f"unsupported network format_version {version!r}")
        net = cls.create(
            data["rf_priors"],
            data["disease_leaks"],
            [(int(a), int(b), float(w)) for a, b, w in data["disease_edges"]],
            data["symptom_leaks"],
            [(int(a), int(b), float(w)) for a, b, w in data["symptom_edges"]],
            seed=data.get("seed"),
        )
        if list(net.layer_sizes) != list(data["layer_sizes"]):
            raise NetworkError("layer_sizes disagree with parameter vectors")
        return net

    def dumps(self) -> str:
        # json writes floats with repr(), the shortest exact round-trip form
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "NoisyOrNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def network_id(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:12]

    def same_parameters(self, other: "NoisyOrNetwork") -> bool:
        return self.to_dict() == other.to_dict()


def _draw_adjacency(rng, n_child, n_parent, edge_probability):
    adj = rng.random((n_child, n_parent)) < edge_probability
    orphans = ~adj.any(axis=1)
    while orphans.any():
        adj[orphans] = rng.random((int(orphans.sum()), n_parent)) < edge_probability
        orphans = ~adj.any(axis=1)
    return adj


def generate_random_network(
    seed: int,
    layer_sizes=(8, 8, 8),
    edge_probability: float = 0.4,
    param_ranges: dict | None = None,
) -> NoisyOrNetwork:
    """Random bipartite-per-layer Noisy-OR network, deterministic in ``seed``.

    Rows of the adjacency that come out parentless are redrawn until every
    disease has a risk-factor parent and every symptom a disease parent.
    """
    n_r, n_d, n_s = (int(v) for v in layer_sizes)
    if min(n_r, n_d, n_s) < 1:
        raise NetworkError("layer sizes must be >= 1")
    if not 0.0 < edge_probability <= 1.0:
        raise NetworkError("edge_probability must be in (0, 1]")
    ranges = dict(DEFAULT_PARAM_RANGES)
    ranges.update(param_ranges or {})
    for name, (lo, hi) in ranges.items():
        if not 0.0 < lo <= hi < 1.0:
            raise NetworkError(f"range for {name} must lie strictly inside (0, 1)")

    rng = np.random.default_rng(seed)
    d_adj = _draw_adjacency(rng, n_d, n_r, edge_probability)
    s_adj = _draw_adjacency(rng, n_s, n_d, edge_probability)
    priors = rng.uniform(*ranges["rf_priors"], size=n_r)
    d_leaks = rng.uniform(*ranges["leaks"], size=n_d)
    s_leaks = rng.uniform(*ranges["leaks"], size=n_s)
    d_w = rng.uniform(*ranges["weights"], size=(n_d, n_r))
    s_w = rng.uniform(*ranges["weights"], size=(n_s, n_d))

    d_edges = [(int(j), int(i), float(d_w[i, j])) for i, j in zip(*np.nonzero(d_adj))]
    s_edges = [(int(k), int(j), float(s_w[j, k])) for j, k in zip(*np.nonzero(s_adj))]
    return NoisyOrNetwork.create(priors, d_leaks, d_edges, s_leaks, s_edges, seed=seed)


CANONICAL_SEED = 7
_CANONICAL_PATH = Path(__file__).parent / "data" / "canonical_network.json"


def canonical_network_path() -> Path:
    return _CANONICAL_PATH


def load_canonical_network() -> NoisyOrNetwork:
    """The shipped 24-node experiment network (generated from seed 7)."""
    return NoisyOrNetwork.load(_CANONICAL_PATH)
