"""Synthetic data generation.

Covers the factorial study layout: block-structured Q-matrices, the three
interaction-graph scenarios (no edges / disjoint pairs / disjoint triplets),
uniform guess/slip draws, i.i.d. Bernoulli attribute profiles, and a Gibbs
sampler over items whose stationary law given a profile is the model's
conditional Markov field.

Each subject runs its own chain.  Uniform variates are keyed by
(seed, sweep, item) with the subject index as the counter position, so
output is a pure function of the configuration and independent of how
chains are scheduled.
"""

import csv
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import core, rng
from .core import (
    ClassPrior,
    DesignMatrix,
    DinaItemParams,
    GdcmModel,
    QMatrix,
    ResponseMatrix,
)

SCENARIO_KINDS = ("null", "pair", "triplet")


@dataclass(frozen=True)
class GraphScenario:
    """One of the simulated interaction-graph layouts."""

    kind: str
    J: int
    edge_value: float = 1.0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario {self.kind!r}")
        if self.kind == "pair" and self.J % 2:
            raise ValueError("pair scenario requires an even number of items")
        if self.kind == "triplet" and self.J % 3:
            raise ValueError("triplet scenario requires J divisible by 3")

    def edges(self) -> list:
        """0-based (j, j') edge list, j < j'."""
        if self.kind == "null":
            return []
        if self.kind == "pair":
            return [(j, j + 1) for j in range(0, self.J, 2)]
        out = []
        for base in range(0, self.J, 3):
            out += [(base, base + 1), (base, base + 2), (base + 1, base + 2)]
        return out


def build_scenario_phi(scenario: GraphScenario) -> DesignMatrix:
    phi = np.zeros((scenario.J, scenario.J))
    for j, jp in scenario.edges():
        phi[j, jp] = phi[jp, j] = scenario.edge_value
    return DesignMatrix(phi)


@dataclass(frozen=True)
class SimConfig:
    K: int
    N: int
    scenario: GraphScenario
    J: int = 30
    guess_range: tuple = (0.05, 0.2)
    slip_range: tuple = (0.0, 0.2)
    attr_success: float = 0.5
    burn_in: int = 300
    random_scan: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.scenario.J != self.J:
            raise ValueError("scenario and config disagree on J")
        for name, (lo, hi) in (("guess", self.guess_range), ("slip", self.slip_range)):
            if not (0.0 <= lo < hi <= 1.0):
                raise ValueError(f"{name}_range must be an increasing range inside [0,1]")
        if not 0.0 < self.attr_success < 1.0:
            raise ValueError("attr_success must lie in (0,1)")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "K": self.K, "N": self.N, "J": self.J,
            "scenario": self.scenario.kind,
            "edge_value": self.scenario.edge_value,
            "guess_range": list(self.guess_range),
            "slip_range": list(self.slip_range),
            "attr_success": self.attr_success,
            "burn_in": self.burn_in,
            "random_scan": self.random_scan,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        J = int(doc.get("J", 30))
        scenario = GraphScenario(doc["scenario"], J, float(doc.get("edge_value", 1.0)))
        kw = {}
        for key in ("guess_range", "slip_range"):
            if key in doc:
                kw[key] = tuple(doc[key])
        for key in ("attr_success", "burn_in", "random_scan", "seed"):
            if key in doc:
                kw[key] = doc[key]
        return cls(K=int(doc["K"]), N=int(doc["N"]), scenario=scenario, J=J, **kw)


def sim_config(K: int, N: int, scenario: str, J: int = 30, edge_value: float = 1.0,
               **kwargs) -> SimConfig:
    """Convenience builder taking the scenario by name."""
    return SimConfig(K=K, N=N, scenario=GraphScenario(scenario, J, edge_value),
                     J=J, **kwargs)


@dataclass(frozen=True)
class SimTruth:
    """Generating model plus the sampled profile of every subject."""

    model: GdcmModel
    alpha: np.ndarray  # (N, K) bits
    config: SimConfig

    def __post_init__(self):
        object.__setattr__(self, "alpha", core._frozen(self.alpha, dtype=int))
        if self.alpha.shape != (self.config.N, self.config.K):
            raise ValueError("alpha shape does not match config")

    def alpha_codes(self) -> np.ndarray:
        return self.alpha @ (1 << np.arange(self.config.K))


def gen_q_matrix(J: int, K: int, gen: np.random.Generator) -> QMatrix:
    """Three single-attribute anchor items per attribute, then uniform
    draws from the nonzero loading patterns."""
    if J < 3 * K:
        raise ValueError("need at least three anchor items per attribute (J >= 3K)")
    rows = np.zeros((J, K), dtype=int)
    for k in range(K):
        rows[3 * k:3 * k + 3, k] = 1
    extra = J - 3 * K
    if extra:
        codes = gen.integers(1, 1 << K, size=extra)
        rows[3 * K:] = (codes[:, None] >> np.arange(K)[None, :]) & 1
    return QMatrix(rows)


def product_bernoulli_prior(K: int, p: float) -> ClassPrior:
    """Prior implied by i.i.d. Bernoulli(p) attribute bits."""
    profiles = core.all_profiles(K)
    probs = (p ** profiles * (1 - p) ** (1 - profiles)).prod(axis=1)
    return ClassPrior(probs)


def sample_truth(config: SimConfig, gen: np.random.Generator,
                 q: QMatrix | None = None) -> SimTruth:
    """Draw item parameters and subject profiles for one replication."""
    if q is None:
        q = gen_q_matrix(config.J, config.K, gen)
    guess = gen.uniform(*config.guess_range, size=config.J)
    slip = gen.uniform(*config.slip_range, size=config.J)
    # uniform(0, hi) can return 0.0 exactly, which the domain forbids
    slip = np.maximum(slip, 1e-12)
    params = DinaItemParams(guess, slip)
    alpha = (gen.random((config.N, config.K)) < config.attr_success).astype(int)
    model = GdcmModel(
        q=q,
        beta=core.dina_coefficients(params, q),
        phi=build_scenario_phi(config.scenario),
        prior=product_bernoulli_prior(config.K, config.attr_success),
        family="dina",
    )
    return SimTruth(model=model, alpha=alpha, config=config)


def _gibbs_chains(base_logits: np.ndarray, phi: np.ndarray, burn_in: int,
                  seed: int, random_scan: bool = False) -> np.ndarray:
    """Run one chain per row of ``base_logits`` for ``burn_in`` sweeps.

    base_logits[i, j] is the profile term of chain i's logit for item j;
    the interaction term is recomputed from the current state each step.
    Returns the final (n_chains, J) binary state.
    """
    n, J = base_logits.shape
    neighbors = [np.flatnonzero(phi[j]) for j in range(J)]
    state = (rng.keyed_rng(seed, rng.TAG_GIBBS_INIT).random((n, J)) < 0.5).astype(float)
    for sweep in range(burn_in):
        if random_scan:
            order = rng.keyed_rng(seed, rng.TAG_GIBBS_ORDER, sweep).permutation(J)
        else:
            order = range(J)
        for j in order:
            nb = neighbors[j]
            eta = base_logits[:, j]
            if nb.size:
                eta = eta + state[:, nb] @ phi[nb, j]
            u = rng.keyed_rng(seed, rng.TAG_GIBBS_STEP, sweep, j).random(n)
            state[:, j] = u < core.expit(eta)
    return state.astype(np.int8)


def gibbs_sample_responses(truth: SimTruth, config: SimConfig | None = None,
                           seed: int | None = None) -> ResponseMatrix:
    """Sample one retained response vector per subject."""
    config = config or truth.config
    if seed is None:
        seed = config.seed
    logits = truth.model.class_item_logits()              # (J, 2^K)
    base = logits.T[truth.alpha_codes()]                  # (N, J)
    state = _gibbs_chains(base, truth.model.phi.phi, config.burn_in, seed,
                          config.random_scan)
    return ResponseMatrix(state)


def simulate_dataset(config: SimConfig) -> tuple:
    """Full replication: Q-matrix, truth, Gibbs responses."""
    truth = sample_truth(config, rng.keyed_rng(config.seed, rng.TAG_TRUTH))
    return gibbs_sample_responses(truth), truth


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _write_atomic_text(path: str, render) -> None:
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            render(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_responses_csv(x: ResponseMatrix, path: str):
    def render(fh):
        w = csv.writer(fh)
        w.writerow([f"item{j + 1}" for j in range(x.J)])
        w.writerows(x.x.tolist())
    _write_atomic_text(path, render)


def read_responses_csv(path: str) -> ResponseMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or not rows[0][0].startswith("item"):
        raise ValueError(f"{path}: expected an item1..itemJ header row")
    try:
        data = np.array(rows[1:], dtype=int)
    except ValueError as exc:
        raise ValueError(f"{path}: non-integer response cell") from exc
    return ResponseMatrix(data)


def write_qmatrix_csv(q: QMatrix, path: str):
    def render(fh):
        w = csv.writer(fh)
        w.writerow([f"attr{k + 1}" for k in range(q.K)])
        w.writerows(q.loadings.tolist())
    _write_atomic_text(path, render)


def read_qmatrix_csv(path: str) -> QMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or not rows[0][0].startswith("attr"):
        raise ValueError(f"{path}: expected an attr1..attrK header row")
    try:
        data = np.array(rows[1:], dtype=int)
    except ValueError as exc:
        raise ValueError(f"{path}: non-integer loading cell") from exc
    return QMatrix(data)


def write_truth_json(truth: SimTruth, path: str):
    doc = core.model_to_dict(truth.model)
    doc["alpha"] = truth.alpha.tolist()
    doc["config"] = truth.config.to_dict()
    core.write_json_atomic(doc, path)


def read_truth_json(path: str) -> SimTruth:
    with open(path) as fh:
        doc = json.load(fh)
    return SimTruth(
        model=core.model_from_dict(doc),
        alpha=np.array(doc["alpha"], dtype=int),
        config=SimConfig.from_dict(doc["config"]),
    )
