"""Recovery metrics and graph summaries.

Parameter-recovery criteria for simulation conditions (RMSD, absolute and
signed bias, edge false/correct positive rates, prior distance) plus
interaction-graph reports: ranked edge lists, maximal cliques, and a
plot-ready heat-map grid.
"""

import csv
from dataclasses import dataclass, fields

import numpy as np

from . import core, simulate
from .core import DesignMatrix, GdcmModel


@dataclass(frozen=True)
class RecoveryMetrics:
    rmsd_guess: float
    rmsd_slip: float
    bias_guess: float
    bias_slip: float
    rmsd_phi: float
    fpr: float | None
    cpr: float | None
    pi_distance: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _vec(a) -> np.ndarray:
    return np.asarray(a, dtype=float).ravel()


def _paired(est, truth):
    e, t = _vec(est), _vec(truth)
    if e.size != t.size or e.size == 0:
        raise ValueError("estimate and truth must have equal nonzero length")
    return e, t


def rmsd(est, truth) -> float:
    """Root mean squared deviation."""
    e, t = _paired(est, truth)
    return float(np.sqrt(np.mean((e - t) ** 2)))


def abs_bias(est, truth) -> float:
    """Mean absolute deviation (no sign cancellation)."""
    e, t = _paired(est, truth)
    return float(np.mean(np.abs(e - t)))


def mean_deviation(est, truth) -> float:
    """Signed mean deviation (positive = overestimation)."""
    e, t = _paired(est, truth)
    return float(np.mean(e - t))


def _phi_arr(phi) -> np.ndarray:
    return phi.phi if isinstance(phi, DesignMatrix) else np.asarray(phi, float)


def _upper(phi) -> np.ndarray:
    p = _phi_arr(phi)
    return p[np.triu_indices(p.shape[0], k=1)]


def graph_fpr_cpr(phi_hat, phi_true):
    """Edge-support error rates over upper-triangle pairs.

    Estimated nonzero means exactly nonzero (the thresholded estimator
    produces literal zeros).  Returns None for a rate whose denominator
    is empty instead of 0/0.
    """
    hat, true = _upper(phi_hat), _upper(phi_true)
    if hat.size != true.size:
        raise ValueError("matrices must have equal order")
    hat_nz, true_nz = hat != 0.0, true != 0.0
    n_zero = int((~true_nz).sum())
    n_edge = int(true_nz.sum())
    fpr = float((hat_nz & ~true_nz).sum() / n_zero) if n_zero else None
    cpr = float((hat_nz & true_nz).sum() / n_edge) if n_edge else None
    return fpr, cpr


def rmsd_phi(phi_hat, phi_true) -> float:
    """RMSD over all upper-triangle entries, zeros included."""
    return rmsd(_upper(phi_hat), _upper(phi_true))


def pi_distance(pi_hat, pi_true) -> float:
    """Euclidean distance between class-prior vectors."""
    e, t = _paired(pi_hat, pi_true)
    return float(np.linalg.norm(e - t))


def recovery_metrics(est: GdcmModel, truth: GdcmModel) -> RecoveryMetrics:
    """All per-replication criteria for a fitted model against its truth."""
    if est.family != "dina" or truth.family != "dina":
        raise ValueError("guess/slip recovery requires the conjunctive family")
    g_hat = core.dina_params(est.beta, est.q)
    g_true = core.dina_params(truth.beta, truth.q)
    fpr, cpr = graph_fpr_cpr(est.phi, truth.phi)
    return RecoveryMetrics(
        rmsd_guess=rmsd(g_hat.guess, g_true.guess),
        rmsd_slip=rmsd(g_hat.slip, g_true.slip),
        bias_guess=abs_bias(g_hat.guess, g_true.guess),
        bias_slip=abs_bias(g_hat.slip, g_true.slip),
        rmsd_phi=rmsd_phi(est.phi, truth.phi),
        fpr=fpr,
        cpr=cpr,
        pi_distance=pi_distance(est.prior.probs, truth.prior.probs),
    )


def aggregate_replications(per_rep) -> RecoveryMetrics:
    """Field-wise mean across replications, skipping undefined rates."""
    per_rep = list(per_rep)
    if not per_rep:
        raise ValueError("no replications to aggregate")
    out = {}
    for f in fields(RecoveryMetrics):
        vals = [getattr(m, f.name) for m in per_rep]
        defined = [v for v in vals if v is not None]
        out[f.name] = float(np.mean(defined)) if defined else None
    return RecoveryMetrics(**out)


def defined_counts(per_rep) -> dict:
    """How many replications supplied each metric (rates can be undefined)."""
    per_rep = list(per_rep)
    return {
        f.name: sum(getattr(m, f.name) is not None for m in per_rep)
        for f in fields(RecoveryMetrics)
    }


# ---------------------------------------------------------------------------
# graph summaries
# ---------------------------------------------------------------------------

def edge_list(phi, threshold: float = 0.0) -> list:
    """Upper-triangle entries with |value| > threshold, strongest first.

    Sorted by descending signed value, ties by ascending (j, j').
    """
    p = _phi_arr(phi)
    iu = np.triu_indices(p.shape[0], k=1)
    entries = [
        (int(j), int(jp), float(p[j, jp]))
        for j, jp in zip(*iu)
        if abs(p[j, jp]) > threshold
    ]
    entries.sort(key=lambda e: (-e[2], e[0], e[1]))
    return entries


@dataclass(frozen=True)
class Clique:
    """Fully connected item subset of the estimated graph."""

    items: tuple
    phi_sum: float

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(int(i) for i in self.items))
        if len(self.items) < 3:
            raise ValueError("cliques of interest have at least three items")
        if list(self.items) != sorted(set(self.items)):
            raise ValueError("items must be sorted and distinct")


def _bron_kerbosch(R: set, P: set, X: set, nbrs: dict, out: list):
    # pivot on the vertex covering most of P, recurse on the uncovered rest
    if not P and not X:
        out.append(frozenset(R))
        return
    pivot = max(P | X, key=lambda v: len(P & nbrs[v]))
    for v in sorted(P - nbrs[pivot]):
        _bron_kerbosch(R | {v}, P & nbrs[v], X & nbrs[v], nbrs, out)
        P.remove(v)
        X.add(v)


def maximal_cliques(phi, min_size: int = 3, positive_only: bool = True) -> list:
    """Maximal cliques of the nonzero (or positive) interaction graph.

    Returned largest-total-weight first; phi_sum adds the edge values
    inside each clique.
    """
    if min_size < 3:
        raise ValueError("min_size must be at least 3")
    p = _phi_arr(phi)
    J = p.shape[0]
    adj = (p > 0.0) if positive_only else (p != 0.0)
    np.fill_diagonal(adj, False)
    nbrs = {v: set(np.flatnonzero(adj[v])) for v in range(J)}
    found = []
    _bron_kerbosch(set(), set(range(J)), set(), nbrs, found)
    cliques = []
    for members in found:
        if len(members) < min_size:
            continue
        items = tuple(sorted(members))
        total = sum(p[a, b] for i, a in enumerate(items) for b in items[i + 1:])
        cliques.append(Clique(items=items, phi_sum=float(total)))
    cliques.sort(key=lambda c: (-c.phi_sum, c.items))
    return cliques


def export_heatmap(phi, path: str):
    """J x J grid of |value| with item-index headers, for external plotting."""
    p = np.abs(_phi_arr(phi))
    J = p.shape[0]

    def render(fh):
        w = csv.writer(fh)
        w.writerow(["item"] + [str(j + 1) for j in range(J)])
        for j in range(J):
            w.writerow([str(j + 1)] + [repr(float(v)) for v in p[j]])
    simulate._write_atomic_text(path, render)


# ---------------------------------------------------------------------------
# file outputs
# ---------------------------------------------------------------------------

def write_metrics_json(metrics: RecoveryMetrics, path: str,
                       n_replications: int = 1, counts: dict | None = None):
    doc = metrics.to_dict()
    doc["n_replications"] = n_replications
    if counts is not None:
        doc["defined_counts"] = counts
    core.write_json_atomic(doc, path)


def write_edges_csv(phi, path: str, threshold: float = 0.0,
                    top: int | None = None):
    entries = edge_list(phi, threshold)
    if top is not None:
        entries = entries[:top]

    def render(fh):
        w = csv.writer(fh)
        w.writerow(["j", "j'", "phi"])
        for j, jp, v in entries:
            w.writerow([j + 1, jp + 1, repr(v)])
    simulate._write_atomic_text(path, render)


def write_cliques_json(phi, path: str, min_size: int = 3,
                       positive_only: bool = True):
    p = _phi_arr(phi)
    doc = [
        {
            "items": [i + 1 for i in c.items],
            "phi_sum": c.phi_sum,
            "edge_values": [
                {"j": a + 1, "j'": b + 1, "value": float(p[a, b])}
                for i, a in enumerate(c.items) for b in c.items[i + 1:]
            ],
        }
        for c in maximal_cliques(p, min_size=min_size, positive_only=positive_only)
    ]
    core.write_json_atomic({"cliques": doc}, path)
