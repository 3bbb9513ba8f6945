"""Exact conditional marginals for three-layer Noisy-OR networks.

The joint over (risk factors, diseases) is tabulated once per network as a
``2**N_R x 2**N_D`` log-weight grid. Unobserved symptoms sum out to 1 and
observed symptoms contribute a per-disease-configuration factor, so a query
never enumerates the symptom layer.
"""

from __future__ import annotations

import re
import weakref
from collections.abc import Iterable, Mapping

import numpy as np
from scipy.special import logsumexp

from .network import DISEASE, RISK, SYMPTOM, NoisyOrNetwork

MAX_ENUMERATED = 22
MAX_BRUTE_FORCE = 20


class EvidenceError(ValueError):
    pass


def evidence_from_pairs(pairs: Iterable[tuple[int, int]], n: int | None = None) -> dict[int, int]:
    evidence: dict[int, int] = {}
    for node, value in pairs:
        node, value = int(node), int(value)
        if node in evidence:
            raise EvidenceError(f"node {node} observed twice")
        if value not in (0, 1):
            raise EvidenceError(f"node {node} has non-binary value {value}")
        if n is not None and not 0 <= node < n:
            raise EvidenceError(f"node {node} out of range for n={n}")
        evidence[node] = value
    return evidence


_PAIR = re.compile(r"^\s*(\d+)\s*=\s*([01])\s*$")


def parse_evidence(text: str, n: int | None = None) -> dict[int, int]:
    """Parse ``"3=1,10=0"`` into ``{3: 1, 10: 0}``."""
    if not text.strip():
        return {}
    pairs = []
    for item in text.split(","):
        m = _PAIR.match(item)
        if not m:
            raise EvidenceError(f"malformed evidence item {item!r}")
        pairs.append((int(m.group(1)), int(m.group(2))))
    return evidence_from_pairs(pairs, n)


def evidence_from_mask(assignment, mask) -> dict[int, int]:
    assignment = np.asarray(assignment)
    return {int(i): int(assignment[i]) for i in np.flatnonzero(np.asarray(mask))}


def _check_evidence(net: NoisyOrNetwork, evidence: Mapping[int, int]) -> None:
    for node, value in evidence.items():
        if not 0 <= node < net.n:
            raise EvidenceError(f"node {node} out of range for n={net.n}")
        if value not in (0, 1):
            raise EvidenceError(f"node {node} has non-binary value {value}")


def _bit_table(width: int) -> np.ndarray:
    codes = np.arange(2**width)
    return ((codes[:, None] >> np.arange(width)) & 1).astype(np.float64)


class _Tables:
    def __init__(self, net: NoisyOrNetwork):
        n_r, n_d, _ = net.layer_sizes
        if n_r + n_d > MAX_ENUMERATED:
            raise ValueError(f"N_R + N_D = {n_r + n_d} exceeds enumeration limit {MAX_ENUMERATED}")
        self.rf_bits = _bit_table(n_r)
        self.d_bits = _bit_table(n_d)
        log_prior = self.rf_bits @ np.log1p(-net.rf_priors) + (1 - self.rf_bits) @ np.log(net.rf_priors)
        # log P(D_i = 0 | rf) for every rf code: (R, N_D)
        log_d0 = np.log(net.disease_leaks) + self.rf_bits @ np.log(net.disease_weights).T
        log_d1 = np.log(-np.expm1(log_d0))
        log_d_given_rf = log_d1 @ self.d_bits.T + log_d0 @ (1 - self.d_bits).T
        self.log_rf_d = log_prior[:, None] + log_d_given_rf
        # log P(S_j = 0 | d) for every d code: (D, N_S)
        self.log_s0 = np.log(net.symptom_leaks) + self.d_bits @ np.log(net.symptom_weights).T
        self.log_s1 = np.log(-np.expm1(self.log_s0))


_TABLES: "weakref.WeakKeyDictionary[NoisyOrNetwork, _Tables]" = weakref.WeakKeyDictionary()


def _tables(net: NoisyOrNetwork) -> _Tables:
    tables = _TABLES.get(net)
    if tables is None:
        tables = _TABLES[net] = _Tables(net)
    return tables


def _weights(net: NoisyOrNetwork, evidence: Mapping[int, int]):
    """Unnormalised posterior weights over (rf, d) codes plus their log scale."""
    _check_evidence(net, evidence)
    t = _tables(net)
    log_w = t.log_rf_d.copy()
    rf_sl, d_sl, s_sl = (net.layer_slice(layer) for layer in (RISK, DISEASE, SYMPTOM))
    for node, value in evidence.items():
        if node < rf_sl.stop:
            log_w[t.rf_bits[:, node - rf_sl.start] != value, :] = -np.inf
        elif node < d_sl.stop:
            log_w[:, t.d_bits[:, node - d_sl.start] != value] = -np.inf
        else:
            j = node - s_sl.start
            log_w += (t.log_s1 if value else t.log_s0)[:, j][None, :]
    scale = log_w.max()
    return np.exp(log_w - scale), scale


def exact_conditional_marginals(net: NoisyOrNetwork, evidence: Mapping[int, int]) -> np.ndarray:
    """``P(X_i = 1 | evidence)`` for every node; observed entries are exact copies."""
    t = _tables(net)
    w, _ = _weights(net, evidence)
    total = w.sum()
    w_rf = w.sum(axis=1) / total
    w_d = w.sum(axis=0) / total
    out = np.concatenate([
        w_rf @ t.rf_bits,
        w_d @ t.d_bits,
        w_d @ np.exp(t.log_s1),
    ])
    for node, value in evidence.items():
        out[node] = float(value)
    return np.clip(out, 0.0, 1.0)


def evidence_log_probability(net: NoisyOrNetwork, evidence: Mapping[int, int]) -> float:
    """``log P(evidence)``, via the same enumeration as the marginals."""
    w, scale = _weights(net, evidence)
    return float(scale + np.log(w.sum()))


def _all_assignments(n: int) -> np.ndarray:
    return _bit_table(n).astype(np.int8)


def brute_force_marginals(net: NoisyOrNetwork, evidence: Mapping[int, int]) -> np.ndarray:
    """Reference marginals by summing the joint over all ``2**n`` states."""
    if net.n > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force refuses n={net.n} > {MAX_BRUTE_FORCE}")
    _check_evidence(net, evidence)
    states = _all_assignments(net.n)
    keep = np.ones(len(states), dtype=bool)
    for node, value in evidence.items():
        keep &= states[:, node] == value
    states = states[keep]
    p = net.joint_probability(states)
    return (p @ states) / p.sum()


def brute_force_log_probability(net: NoisyOrNetwork, evidence: Mapping[int, int]) -> float:
    if net.n > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force refuses n={net.n} > {MAX_BRUTE_FORCE}")
    _check_evidence(net, evidence)
    states = _all_assignments(net.n)
    keep = np.ones(len(states), dtype=bool)
    for node, value in evidence.items():
        keep &= states[:, node] == value
    return float(logsumexp(net.log_joint_probability(states[keep])))
