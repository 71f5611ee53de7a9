"""Model types and probability kernels.

A latent-class item response model (restricted to the conjunctive
guess/slip family or a fully generalized coefficient matrix) is combined
with a pairwise item-interaction matrix: the joint probability of a
response vector x and attribute profile alpha is proportional to

    pi_alpha * exp(x' B a(alpha) + 0.5 * x' Phi x)

where a(alpha) is the interaction-expanded profile.  Everything here is a
pure function; all array-backed values are frozen after construction.

Profile encoding convention: profile index = sum_k alpha_k 2^k (attribute
0 is the least significant bit).  Response patterns use the same encoding
over items.
"""

import itertools
import json
import math
import os
import tempfile
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# exact enumeration guard: keeps the oracle under ~2^18 table cells
MAX_EXACT_ITEMS = 14
MAX_EXACT_ATTRS = 4

FAMILIES = ("dina", "general")


def expit(z):
    """Numerically stable logistic function (branch form, no overflow)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    out = np.log(p) - np.log1p(-p)
    if out.ndim == 0:
        return float(out)
    return out


def log1pexp(z):
    """log(1 + e^z) without overflow."""
    z = np.asarray(z, dtype=float)
    return np.logaddexp(0.0, z)


def n_classes(K: int) -> int:
    return 1 << K


def profile_bits(index: int, K: int) -> np.ndarray:
    """Attribute bits of a profile index (attribute k has weight 2^k)."""
    return (index >> np.arange(K)) & 1


def profile_index(bits) -> int:
    bits = np.asarray(bits).astype(int)
    return int(bits @ (1 << np.arange(bits.size)))


@lru_cache(maxsize=None)
def all_profiles(K: int) -> np.ndarray:
    """(2^K, K) matrix whose row a holds the bits of profile a."""
    idx = np.arange(n_classes(K))
    out = (idx[:, None] >> np.arange(K)[None, :]) & 1
    out.setflags(write=False)
    return out


def all_patterns(J: int) -> np.ndarray:
    """(2^J, J) matrix of binary response patterns, row p = bits of p."""
    idx = np.arange(1 << J)
    out = ((idx[:, None] >> np.arange(J)[None, :]) & 1).astype(float)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def attribute_subsets(K: int) -> tuple:
    """All attribute subsets ordered by (size, lexicographic); first is ()."""
    subs = []
    for size in range(K + 1):
        subs.extend(itertools.combinations(range(K), size))
    return tuple(subs)


@lru_cache(maxsize=None)
def subset_position(K: int) -> dict:
    return {s: i for i, s in enumerate(attribute_subsets(K))}


@lru_cache(maxsize=None)
def profile_design_matrix(K: int) -> np.ndarray:
    """(2^K, 2^K) matrix: row a = interaction expansion of profile a.

    Column c is the product of the bits in the c-th attribute subset, so
    column 0 (empty subset) is the intercept and the last column is the
    all-attribute interaction.
    """
    profiles = all_profiles(K)
    cols = []
    for sub in attribute_subsets(K):
        if not sub:
            cols.append(np.ones(profiles.shape[0]))
        else:
            cols.append(profiles[:, list(sub)].prod(axis=1).astype(float))
    out = np.column_stack(cols)
    out.setflags(write=False)
    return out


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _check_binary(arr, name):
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} entries must be 0 or 1")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttributeProfile:
    """Binary mastery profile over K attributes."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", _frozen(self.bits, dtype=int))
        if self.bits.ndim != 1 or self.bits.size < 1:
            raise ValueError("profile needs at least one attribute")
        _check_binary(self.bits, "profile")

    @property
    def K(self) -> int:
        return self.bits.size

    @property
    def index(self) -> int:
        return profile_index(self.bits)

    @classmethod
    def from_index(cls, index: int, K: int) -> "AttributeProfile":
        return cls(profile_bits(index, K))


@dataclass(frozen=True)
class DesignVector:
    """Interaction expansion (1, a_1..a_K, a_1 a_2, ..., a_1..a_K)."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(self.entries))
        ln = self.entries.size
        if ln < 2 or ln & (ln - 1):
            raise ValueError("design vector length must be a power of two >= 2")
        if self.entries[0] != 1.0:
            raise ValueError("design vector must start with the intercept 1")
        _check_binary(self.entries, "design vector")


def design_vector(alpha, K: int | None = None) -> DesignVector:
    """Expand a profile into the fixed-order interaction basis."""
    bits = alpha.bits if isinstance(alpha, AttributeProfile) else np.asarray(alpha, dtype=int)
    if K is None:
        K = bits.size
    if bits.size != K:
        raise ValueError(f"profile has {bits.size} bits, expected {K}")
    row = profile_design_matrix(K)[profile_index(bits)]
    return DesignVector(row)


@dataclass(frozen=True)
class QMatrix:
    """J x K binary item-by-attribute loading indicator."""

    loadings: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "loadings", _frozen(self.loadings, dtype=int))
        if self.loadings.ndim != 2:
            raise ValueError("loadings must be a 2-D matrix")
        _check_binary(self.loadings, "loadings")
        if (self.loadings.sum(axis=1) == 0).any():
            raise ValueError("every item must load on at least one attribute")

    @property
    def J(self) -> int:
        return self.loadings.shape[0]

    @property
    def K(self) -> int:
        return self.loadings.shape[1]


def dina_mask(q: QMatrix) -> np.ndarray:
    """Boolean (J, 2^K) mask: intercept + full required-attribute interaction."""
    K = q.K
    pos = subset_position(K)
    mask = np.zeros((q.J, n_classes(K)), dtype=bool)
    mask[:, 0] = True
    for j in range(q.J):
        required = tuple(np.flatnonzero(q.loadings[j]))
        mask[j, pos[required]] = True
    return mask


def family_mask(family: str, q: QMatrix) -> np.ndarray:
    if family == "dina":
        return dina_mask(q)
    if family == "general":
        return np.ones((q.J, n_classes(q.K)), dtype=bool)
    raise ValueError(f"unknown family {family!r}")


@dataclass(frozen=True)
class ItemCoefficients:
    """J x 2^K regression coefficients over the interaction basis.

    ``mask`` marks the free entries; everything outside it is exactly 0.
    """

    beta: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(self.beta))
        object.__setattr__(self, "mask", _frozen(self.mask, dtype=bool))
        if self.beta.shape != self.mask.shape or self.beta.ndim != 2:
            raise ValueError("beta and mask must be equal-shape 2-D arrays")
        if not np.isfinite(self.beta).all():
            raise ValueError("coefficients must be finite")
        if (self.beta[~self.mask] != 0.0).any():
            raise ValueError("masked coefficients must be exactly 0")

    @property
    def J(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class DinaItemParams:
    """Per-item guessing and slipping probabilities, both in (0,1)."""

    guess: np.ndarray
    slip: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "guess", _frozen(self.guess))
        object.__setattr__(self, "slip", _frozen(self.slip))
        if self.guess.shape != self.slip.shape or self.guess.ndim != 1:
            raise ValueError("guess and slip must be equal-length vectors")
        for name, v in (("guess", self.guess), ("slip", self.slip)):
            if not ((v > 0.0) & (v < 1.0)).all():
                raise ValueError(f"{name} probabilities must lie strictly in (0,1)")

    def is_monotone(self) -> bool:
        """True when guessing never beats non-slipping (g <= 1-s per item)."""
        return bool((self.guess <= 1.0 - self.slip).all())


@dataclass(frozen=True)
class DesignMatrix:
    """Symmetric, zero-diagonal item interaction matrix."""

    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", _frozen(self.phi))
        p = self.phi
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("phi must be square")
        if not np.isfinite(p).all():
            raise ValueError("phi must be finite")
        if (p != p.T).any():
            raise ValueError("phi must be symmetric")
        if (np.diag(p) != 0.0).any():
            raise ValueError("phi must have a zero diagonal")

    @property
    def J(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class ClassPrior:
    """Probability vector over the 2^K attribute profiles."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))
        p = self.probs
        ln = p.size
        if p.ndim != 1 or ln < 2 or ln & (ln - 1):
            raise ValueError("prior length must be a power of two >= 2")
        if (p < 0).any():
            raise ValueError("prior entries must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("prior must sum to 1 within 1e-12")

    @property
    def K(self) -> int:
        return self.probs.size.bit_length() - 1


@dataclass(frozen=True)
class ResponseMatrix:
    """N x J binary item responses."""

    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, dtype=np.int8))
        if self.x.ndim != 2 or self.x.shape[0] < 1 or self.x.shape[1] < 2:
            raise ValueError("responses must be N x J with N >= 1 and J >= 2")
        _check_binary(self.x, "responses")

    @property
    def N(self) -> int:
        return self.x.shape[0]

    @property
    def J(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class GdcmModel:
    """Full model: loadings, item coefficients, interaction matrix, prior."""

    q: QMatrix
    beta: ItemCoefficients
    phi: DesignMatrix
    prior: ClassPrior
    family: str = "dina"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        J, K = self.q.J, self.q.K
        if self.beta.beta.shape != (J, n_classes(K)):
            raise ValueError("coefficient matrix shape does not match Q")
        if self.phi.J != J:
            raise ValueError("interaction matrix order does not match Q")
        if self.prior.probs.size != n_classes(K):
            raise ValueError("prior length does not match Q")

    @property
    def J(self) -> int:
        return self.q.J

    @property
    def K(self) -> int:
        return self.q.K

    def class_item_logits(self) -> np.ndarray:
        """(J, 2^K) matrix of per-class item logits beta_j . a(alpha)."""
        return self.beta.beta @ profile_design_matrix(self.K).T


# ---------------------------------------------------------------------------
# guess/slip <-> coefficient maps
# ---------------------------------------------------------------------------

def dina_to_beta(guess: float, slip: float, q_row) -> np.ndarray:
    """Coefficient row for one item: intercept logit(g), interaction
    logit(1-s) - logit(g) on the full required-attribute subset."""
    if not (0.0 < guess < 1.0 and 0.0 < slip < 1.0):
        raise ValueError("guess and slip must lie strictly in (0,1)")
    q_row = np.asarray(q_row, dtype=int)
    K = q_row.size
    row = np.zeros(n_classes(K))
    row[0] = logit(guess)
    required = tuple(np.flatnonzero(q_row))
    if not required:
        raise ValueError("item must require at least one attribute")
    row[subset_position(K)[required]] = logit(1.0 - slip) - logit(guess)
    return row


def beta_to_dina(beta_row, q_row, tol: float = 1e-10) -> tuple:
    """Invert :func:`dina_to_beta`; rejects rows violating the sparsity mask."""
    beta_row = np.asarray(beta_row, dtype=float)
    q_row = np.asarray(q_row, dtype=int)
    K = q_row.size
    required = tuple(np.flatnonzero(q_row))
    pos = subset_position(K)[required]
    off_mask = np.ones(beta_row.size, dtype=bool)
    off_mask[[0, pos]] = False
    if np.abs(beta_row[off_mask]).max(initial=0.0) > tol:
        raise ValueError("coefficient row has mass outside the guess/slip mask")
    g = expit(beta_row[0])
    s = 1.0 - expit(beta_row[0] + beta_row[pos])
    return g, s


def dina_coefficients(params: DinaItemParams, q: QMatrix) -> ItemCoefficients:
    """Build the full coefficient matrix from per-item (g, s)."""
    if params.guess.size != q.J:
        raise ValueError("parameter vectors must have one entry per item")
    beta = np.vstack([
        dina_to_beta(params.guess[j], params.slip[j], q.loadings[j])
        for j in range(q.J)
    ])
    return ItemCoefficients(beta, dina_mask(q))


def dina_params(beta: ItemCoefficients, q: QMatrix) -> DinaItemParams:
    """Recover per-item (g, s) from a DINA-masked coefficient matrix."""
    gs = [beta_to_dina(beta.beta[j], q.loadings[j]) for j in range(q.J)]
    g, s = zip(*gs)
    return DinaItemParams(np.array(g), np.array(s))


# ---------------------------------------------------------------------------
# probability kernels
# ---------------------------------------------------------------------------

def item_response_prob(beta_row, alpha) -> float:
    """P(X_j = 1 | alpha) = expit(beta_j . a(alpha))."""
    beta_row = np.asarray(beta_row, dtype=float)
    dv = design_vector(alpha, K=beta_row.size.bit_length() - 1)
    return float(expit(beta_row @ dv.entries))


def conditional_item_prob(model: GdcmModel, j: int, x_rest, alpha) -> float:
    """P(X_j = 1 | responses to the other items, alpha).

    ``x_rest`` holds the J-1 responses to items != j in item order.
    """
    x_rest = np.asarray(x_rest, dtype=float)
    if x_rest.size != model.J - 1:
        raise ValueError("x_rest must have J-1 entries")
    full = np.insert(x_rest, j, 0.0)  # phi[j, j] = 0, placeholder is inert
    dv = design_vector(alpha, K=model.K)
    eta = model.beta.beta[j] @ dv.entries + model.phi.phi[j] @ full
    return float(expit(eta))


def unnormalized_joint(model: GdcmModel, x, alpha) -> float:
    """pi_alpha * exp(x' B a(alpha) + 0.5 x' Phi x)."""
    x = np.asarray(x, dtype=float)
    if x.size != model.J:
        raise ValueError("x must have J entries")
    bits = alpha.bits if isinstance(alpha, AttributeProfile) else np.asarray(alpha, dtype=int)
    dv = design_vector(bits, K=model.K)
    pi_a = model.prior.probs[profile_index(bits)]
    energy = x @ model.beta.beta @ dv.entries + 0.5 * x @ model.phi.phi @ x
    return float(pi_a * math.exp(energy))


def _check_exact_size(model: GdcmModel):
    if model.J > MAX_EXACT_ITEMS or model.K > MAX_EXACT_ATTRS:
        raise ValueError(
            f"exact enumeration limited to J <= {MAX_EXACT_ITEMS}, "
            f"K <= {MAX_EXACT_ATTRS}; got J={model.J}, K={model.K}"
        )


def exact_pmf(model: GdcmModel) -> np.ndarray:
    """Exhaustive (2^J, 2^K) joint pmf table over (pattern, profile).

    Row p / column a hold P(X = pattern p, profile a) under the generating
    process the sampler realizes: the profile is drawn from the prior and
    the pattern from the conditional Markov field given that profile, so
    each profile column carries its own normalizing constant.  At Phi = 0
    the table factorizes into prior times independent item Bernoullis.
    Only feasible for small instances; ground-truth oracle for the sampler
    and the estimator.
    """
    _check_exact_size(model)
    patterns = all_patterns(model.J)
    energy = patterns @ model.class_item_logits()          # (2^J, 2^K)
    energy += 0.5 * np.einsum("pj,jk,pk->p", patterns, model.phi.phi, patterns)[:, None]
    m = energy.max(axis=0, keepdims=True)
    w = np.exp(energy - m)
    w /= w.sum(axis=0, keepdims=True)                      # column a: f(x | a)
    return w * model.prior.probs[None, :]


def marginal_exact_pmf(model: GdcmModel) -> np.ndarray:
    """(2^J,) pmf of the response pattern, profiles summed out."""
    return exact_pmf(model).sum(axis=1)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def model_to_dict(model: GdcmModel) -> dict:
    subsets = attribute_subsets(model.K)
    beta_entries = []
    for j in range(model.J):
        for c in np.flatnonzero(model.beta.mask[j]):
            beta_entries.append({
                "item": int(j),
                "subset": [int(k) for k in subsets[c]],
                "value": float(model.beta.beta[j, c]),
            })
    phi = model.phi.phi
    phi_entries = [
        {"j": int(j), "j'": int(jp), "value": float(phi[j, jp])}
        for j in range(model.J)
        for jp in range(j + 1, model.J)
        if phi[j, jp] != 0.0 or np.signbit(phi[j, jp])
    ]
    return {
        "K": model.K,
        "J": model.J,
        "family": model.family,
        "q": model.q.loadings.tolist(),
        "beta": beta_entries,
        "phi": phi_entries,
        "pi": model.prior.probs.tolist(),
    }


def model_from_dict(doc: dict) -> GdcmModel:
    K, J = int(doc["K"]), int(doc["J"])
    family = doc["family"]
    q = QMatrix(np.array(doc["q"], dtype=int))
    if q.loadings.shape != (J, K):
        raise ValueError("q shape does not match declared (J, K)")
    pos = subset_position(K)
    beta = np.zeros((J, n_classes(K)))
    for entry in doc["beta"]:
        c = pos[tuple(int(k) for k in entry["subset"])]
        beta[int(entry["item"]), c] = float(entry["value"])
    phi = np.zeros((J, J))
    for entry in doc["phi"]:
        j, jp = int(entry["j"]), int(entry["j'"])
        phi[j, jp] = phi[jp, j] = float(entry["value"])
    return GdcmModel(
        q=q,
        beta=ItemCoefficients(beta, family_mask(family, q)),
        phi=DesignMatrix(phi),
        prior=ClassPrior(np.array(doc["pi"], dtype=float)),
        family=family,
    )


def write_json_atomic(doc: dict, path: str):
    """Serialize to ``path`` via temp-file + rename."""
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: GdcmModel, path: str):
    write_json_atomic(model_to_dict(model), path)


def load_model(path: str) -> GdcmModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
