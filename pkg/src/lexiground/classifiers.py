"""Online binary attribute classifiers with confidence banding.

One logistic-regression unit per attribute word, trained one judgement at a
time.  A registry groups the units, creates them lazily as attribute words
first come up in dialogue, and maps each probability to one of three
confidence bands (unknown / unsure / confident) that the dialogue policies
condition on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .vision import COLORS, FEATURE_DIM, HSV_DIM, SHAPES

DEFAULT_ETA0 = 0.1
DEFAULT_LAMBDA = 1e-4

COLOUR_CATEGORY = "colour"
SHAPE_CATEGORY = "shape"
DEFAULT_CATEGORIES: dict[str, tuple[str, ...]] = {
    COLOUR_CATEGORY: COLORS,
    SHAPE_CATEGORY: SHAPES,
}
ATTRIBUTE_CATEGORY: dict[str, str] = {
    **{a: COLOUR_CATEGORY for a in COLORS},
    **{a: SHAPE_CATEGORY for a in SHAPES},
}

_SAVE_VERSION = 1


class Band(enum.Enum):
    UNKNOWN = "unknown"
    UNSURE = "unsure"
    CONFIDENT = "confident"


@dataclass(frozen=True)
class ConfidenceBands:
    """Cut-points separating the three bands: base < positive."""

    base: float = 0.5
    positive: float = 0.9

    def __post_init__(self) -> None:
        if not (0.0 < self.base < 1.0):
            raise ValueError(f"base threshold {self.base} outside (0,1)")
        if not (self.base < self.positive <= 1.0):
            raise ValueError(
                f"positive threshold {self.positive} not in ({self.base},1]"
            )


def band_for(prob: float, bands: ConfidenceBands) -> Band:
    if prob < bands.base:
        return Band.UNKNOWN
    if prob < bands.positive:
        return Band.UNSURE
    return Band.CONFIDENT


@dataclass(frozen=True)
class TrainingJudgement:
    """One labelled example: these features do/don't carry this attribute."""

    features: np.ndarray
    attribute: str
    positive: bool


@dataclass(frozen=True)
class Verdict:
    """Per-category confidence summary used by the dialogue policies."""

    category: str
    band: Band
    attribute: str | None
    prob: float | None


def _sigmoid(z: float) -> float:
    # clip keeps exp() finite; saturated inputs round to 0/1 anyway
    return float(1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0))))


class AttributeClassifier:
    """Logistic unit trained by SGD on L2-regularized log loss.

    The learning rate decays with the unit's own update count:
    eta_t = eta0 / (1 + eta0 * lam * t).  The bias is not regularized.
    """

    __slots__ = ("attribute", "weights", "bias", "updates_seen", "eta0", "lam")

    def __init__(
        self,
        attribute: str,
        dim: int = FEATURE_DIM,
        eta0: float = DEFAULT_ETA0,
        lam: float = DEFAULT_LAMBDA,
    ) -> None:
        if eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if lam < 0:
            raise ValueError("lam must be non-negative")
        self.attribute = attribute
        self.weights = np.zeros(dim, dtype=np.float64)
        self.bias = 0.0
        self.updates_seen = 0
        self.eta0 = eta0
        self.lam = lam

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.weights.shape:
            raise ValueError(
                f"feature length {x.shape} does not match weights "
                f"{self.weights.shape}"
            )
        return x

    def predict_prob(self, x: np.ndarray) -> float:
        x = self._check(x)
        return _sigmoid(float(self.weights @ x) + self.bias)

    def update(self, x: np.ndarray, y: float) -> None:
        """One gradient step; y is the label in {0, 1}."""
        x = self._check(x)
        eta = self.eta0 / (1.0 + self.eta0 * self.lam * self.updates_seen)
        g = self.predict_prob(x) - y
        self.weights -= eta * (g * x + self.lam * self.weights)
        self.bias -= eta * g
        self.updates_seen += 1

    def learn(self, judgement: TrainingJudgement) -> None:
        self.update(judgement.features, 1.0 if judgement.positive else 0.0)


def normalize_blocks(x: np.ndarray) -> np.ndarray:
    """Scale the colour-histogram and visual-word blocks to unit L2 norm.

    Stored feature vectors are L1-normalized per block, which leaves the two
    blocks with very different energies; equalizing them lets one learning
    rate serve both colour and shape units.  Near-zero blocks pass through.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (FEATURE_DIM,):
        raise ValueError(f"expected {FEATURE_DIM}-dim features, got {x.shape}")
    out = x.copy()
    for block in (slice(0, HSV_DIM), slice(HSV_DIM, FEATURE_DIM)):
        norm = float(np.linalg.norm(out[block]))
        if norm > 1e-12:
            out[block] /= norm
    return out


class ClassifierRegistry:
    """The learner's attribute lexicon: one classifier per known word.

    Classifiers appear lazily the first time an attribute word is mentioned;
    with the default inventory there are nine once every word has come up.
    The category map only serves wh-question policies and evaluation, never
    training.  Inputs are block-normalized on the way in; the raw per-unit
    SGD rule is untouched.
    """

    def __init__(
        self,
        dim: int = FEATURE_DIM,
        eta0: float = DEFAULT_ETA0,
        lam: float = DEFAULT_LAMBDA,
        bands: ConfidenceBands | None = None,
        normalize: bool = True,
    ) -> None:
        self.dim = dim
        self.eta0 = eta0
        self.lam = lam
        self.bands = bands if bands is not None else ConfidenceBands()
        self.normalize = normalize
        self.classifiers: dict[str, AttributeClassifier] = {}
        self.categories: dict[str, list[str]] = {
            COLOUR_CATEGORY: [],
            SHAPE_CATEGORY: [],
        }

    def _precondition(self, x: np.ndarray) -> np.ndarray:
        return normalize_blocks(x) if self.normalize else np.asarray(x, float)

    def ensure(self, attribute: str, category: str | None = None) -> AttributeClassifier:
        """Create the classifier for a newly mentioned attribute word."""
        clf = self.classifiers.get(attribute)
        if clf is None:
            clf = AttributeClassifier(attribute, self.dim, self.eta0, self.lam)
            self.classifiers[attribute] = clf
        if category is None:
            category = ATTRIBUTE_CATEGORY.get(attribute)
        if category is not None:
            members = self.categories.setdefault(category, [])
            if attribute not in members:
                members.append(attribute)
        return clf

    def known(self, category: str) -> list[str]:
        return list(self.categories.get(category, []))

    def train(self, judgement: TrainingJudgement) -> None:
        clf = self.ensure(judgement.attribute)
        clf.update(self._precondition(judgement.features), 1.0 if judgement.positive else 0.0)

    def prob(self, attribute: str, features: np.ndarray) -> float:
        clf = self.classifiers.get(attribute)
        if clf is None:
            return 0.5
        return clf.predict_prob(self._precondition(features))

    def verdict(self, category: str, features: np.ndarray) -> Verdict:
        """Best attribute of the category with its confidence band.

        A category with no classifiers yet is Unknown with no attribute.
        """
        members = self.categories.get(category, [])
        if not members:
            return Verdict(category, Band.UNKNOWN, None, None)
        x = self._precondition(features)
        best, best_p = None, -1.0
        for attribute in members:
            p = self.classifiers[attribute].predict_prob(x)
            if p > best_p:
                best, best_p = attribute, p
        return Verdict(category, band_for(best_p, self.bands), best, best_p)

    def prob_matrix(self, attributes: list[str], features: np.ndarray) -> np.ndarray:
        """Probabilities for many instances at once; missing units give 0.5."""
        X = np.asarray(features, dtype=np.float64)
        if self.normalize:
            X = np.stack([normalize_blocks(row) for row in X])
        out = np.full((X.shape[0], len(attributes)), 0.5)
        for j, attribute in enumerate(attributes):
            clf = self.classifiers.get(attribute)
            if clf is None:
                continue
            z = np.clip(X @ clf.weights + clf.bias, -500.0, 500.0)
            out[:, j] = 1.0 / (1.0 + np.exp(-z))
        return out

    # persistence

    def save(self, path: str) -> None:
        attrs = sorted(self.classifiers)
        payload: dict[str, np.ndarray] = {
            "version": np.array([_SAVE_VERSION]),
            "dim": np.array([self.dim]),
            "eta0": np.array([self.eta0]),
            "lam": np.array([self.lam]),
            "bands": np.array([self.bands.base, self.bands.positive]),
            "normalize": np.array([int(self.normalize)]),
            "attributes": np.array(attrs),
            "categories": np.array(
                [f"{cat}:{','.join(members)}" for cat, members in sorted(self.categories.items())]
            ),
        }
        for attribute in attrs:
            clf = self.classifiers[attribute]
            payload[f"w_{attribute}"] = clf.weights
            payload[f"b_{attribute}"] = np.array([clf.bias])
            payload[f"t_{attribute}"] = np.array([clf.updates_seen])
        np.savez(path, **payload)

    @classmethod
    def load(cls, path: str) -> "ClassifierRegistry":
        with np.load(path, allow_pickle=False) as data:
            version = int(data["version"][0])
            if version != _SAVE_VERSION:
                raise ValueError(f"unsupported model file version {version}")
            base, positive = (float(v) for v in data["bands"])
            reg = cls(
                dim=int(data["dim"][0]),
                eta0=float(data["eta0"][0]),
                lam=float(data["lam"][0]),
                bands=ConfidenceBands(base, positive),
                normalize=bool(int(data["normalize"][0])),
            )
            reg.categories = {}
            for entry in data["categories"]:
                cat, _, joined = str(entry).partition(":")
                reg.categories[cat] = [m for m in joined.split(",") if m]
            for attribute in (str(a) for a in data["attributes"]):
                clf = AttributeClassifier(attribute, reg.dim, reg.eta0, reg.lam)
                clf.weights = np.array(data[f"w_{attribute}"], dtype=np.float64)
                clf.bias = float(data[f"b_{attribute}"][0])
                clf.updates_seen = int(data[f"t_{attribute}"][0])
                reg.classifiers[attribute] = clf
        return reg

    def weight_bytes(self) -> bytes:
        """Canonical byte string of all parameters, for parity checks."""
        chunks: list[bytes] = []
        for attribute in sorted(self.classifiers):
            clf = self.classifiers[attribute]
            chunks.append(attribute.encode())
            chunks.append(clf.weights.tobytes())
            chunks.append(np.float64(clf.bias).tobytes())
            chunks.append(np.int64(clf.updates_seen).tobytes())
        return b"".join(chunks)
