"""Exact mutual-information bound verification on discrete joints.

The contrastive loss with the density ratio ``P(t|v)/P(t)`` as critic
lower-bounds mutual information: ``I(t, v) >= log(N) - L`` where ``L`` is
the expected loss over a positive pair plus ``N - 1`` i.i.d. negatives
drawn from the text marginal.  On small alphabets ``L`` is enumerated
exactly by summing over all multisets of negatives; larger problems fall
back to a seeded Monte-Carlo estimate with a reported standard error.

For mixed samples, the four-variable joint over (tx, ty, vx, vy) is built
as a Markov chain tx - vx - vy - ty: the x-pair is drawn first, the
source region vy is coupled to vx through an optional kernel, and ty
follows its conditional given vy.  The composite image is the symbol pair
vhat = (vx, vy).  Under this construction the subadditivity step
``I(t, vx) + I(t, vy) >= I(t, vhat)`` holds with equality exactly when
the coupling is absent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import AlphabetTooLargeError, DegenerateMarginalError, ValidationError

PROB_TOL = 1e-12
EXACT_TERM_BUDGET = 5_000_000


def _mi_of(probs: np.ndarray) -> float:
    """MI of a 2-D joint in nats; tolerates zero-mass rows and columns."""
    pt = probs.sum(axis=1)
    pv = probs.sum(axis=0)
    mask = probs > 0
    p = probs[mask]
    denom = np.outer(pt, pv)[mask]
    return float(np.sum(p * np.log(p / denom)))


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint distribution over a text alphabet (rows) and an image alphabet (columns)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise ValidationError(f"joint must be 2-D, got shape {probs.shape}")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValidationError("joint entries must be nonnegative and sum to 1")
        if np.any(probs.sum(axis=1) <= 0) or np.any(probs.sum(axis=0) <= 0):
            raise DegenerateMarginalError("every symbol needs positive marginal probability")

    @property
    def n_texts(self) -> int:
        return self.probs.shape[0]

    @property
    def n_images(self) -> int:
        return self.probs.shape[1]

    def marginal_text(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    def marginal_image(self) -> np.ndarray:
        return self.probs.sum(axis=0)

    def density_ratio(self) -> np.ndarray:
        """``P(t|v) / P(t)`` for every (t, v) cell."""
        return self.probs / np.outer(self.marginal_text(), self.marginal_image())

    @classmethod
    def random(cls, rng: np.random.Generator, n_texts: int, n_images: int) -> "DiscreteJoint":
        p = rng.random((n_texts, n_images)) + 1e-3
        return cls(p / p.sum())

    @classmethod
    def independent(cls, pt: np.ndarray, pv: np.ndarray) -> "DiscreteJoint":
        pt = np.asarray(pt, dtype=np.float64)
        pv = np.asarray(pv, dtype=np.float64)
        return cls(np.outer(pt / pt.sum(), pv / pv.sum()))


def exact_mi(joint: DiscreteJoint) -> float:
    """Mutual information in nats; zero exactly on product distributions."""
    return _mi_of(joint.probs)


def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``."""
    out = np.empty((math.comb(total + parts - 1, parts - 1), parts), dtype=np.int64)
    for i, bars in enumerate(combinations(range(total + parts - 1), parts - 1)):
        prev = -1
        for j, b in enumerate(bars):
            out[i, j] = b - prev - 1
            prev = b
        out[i, parts - 1] = total + parts - 2 - prev
    return out


def exact_term_count(joint: DiscreteJoint, batch_size: int) -> int:
    nt, nv = joint.probs.shape
    return math.comb(batch_size - 2 + nt, nt - 1) * nt * nv


def expected_infonce(joint: DiscreteJoint, batch_size: int, budget: int = EXACT_TERM_BUDGET) -> float:
    """Exact expected contrastive loss with the density-ratio critic.

    The batch holds one positive pair and ``batch_size - 1`` negatives drawn
    i.i.d. from the text marginal; the expectation enumerates negatives by
    multiset with multinomial weights.  Raises AlphabetTooLargeError when
    the enumeration exceeds ``budget`` terms (then use
    :func:`expected_infonce_mc`).
    """
    if batch_size < 1:
        raise ValidationError(f"batch size must be >= 1, got {batch_size}")
    if batch_size == 1:
        return 0.0
    if exact_term_count(joint, batch_size) > budget:
        raise AlphabetTooLargeError(
            f"{exact_term_count(joint, batch_size)} enumeration terms exceed "
            f"budget {budget}; use the Monte-Carlo estimator with a seed"
        )
    probs = joint.probs
    nt = joint.n_texts
    pt = joint.marginal_text()
    ratio = joint.density_ratio()

    counts = _compositions(batch_size - 1, nt)
    log_pt = np.log(pt)
    log_w = (
        math.lgamma(batch_size)
        - _lgamma_int(counts + 1).sum(axis=1)
        + counts @ log_pt
    )
    weights = np.exp(log_w)
    neg_sums = counts @ ratio  # (n_multisets, n_images)

    # E = sum_{t,v} p[t,v] * sum_m w_m * [log(ratio[t,v] + S[m,v]) - log ratio[t,v]]
    with np.errstate(divide="ignore"):
        stacked = np.log(ratio[None, :, :] + neg_sums[:, None, :])
        inner = np.einsum("m,mtv->tv", weights, stacked)
        log_ratio = np.log(ratio)
    mask = probs > 0
    return float(np.sum(probs[mask] * (inner[mask] - log_ratio[mask])))


def _lgamma_int(arr: np.ndarray) -> np.ndarray:
    vec = np.vectorize(math.lgamma, otypes=[np.float64])
    return vec(arr)


def expected_infonce_mc(
    joint: DiscreteJoint, batch_size: int, seed: int, samples: int = 1_000_000
) -> tuple[float, float]:
    """Monte-Carlo estimate of the expected loss; returns (mean, standard error)."""
    if batch_size < 1:
        raise ValidationError(f"batch size must be >= 1, got {batch_size}")
    if samples < 2:
        raise ValidationError("need at least 2 samples for a standard error")
    if batch_size == 1:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    probs = joint.probs
    nt, nv = probs.shape
    pt = joint.marginal_text()
    ratio = joint.density_ratio()
    flat = probs.reshape(-1)

    total = 0.0
    total_sq = 0.0
    remaining = samples
    chunk = 100_000
    while remaining > 0:
        n = min(chunk, remaining)
        pair = rng.choice(nt * nv, size=n, p=flat)
        t_pos, v = np.unravel_index(pair, (nt, nv))
        negatives = rng.choice(nt, size=(n, batch_size - 1), p=pt)
        r_pos = ratio[t_pos, v]
        r_neg = ratio[negatives, v[:, None]].sum(axis=1)
        losses = np.log(r_pos + r_neg) - np.log(r_pos)
        total += losses.sum()
        total_sq += (losses**2).sum()
        remaining -= n
    mean = total / samples
    var = (total_sq - samples * mean**2) / (samples - 1)
    return float(mean), float(np.sqrt(max(var, 0.0) / samples))


@dataclass
class VanillaBoundReport:
    mi: float
    loss: float
    batch_size: int
    tolerance: float
    method: str
    loss_stderr: float | None = None

    @property
    def rhs(self) -> float:
        return math.log(self.batch_size) - self.loss

    @property
    def margin(self) -> float:
        return self.mi - self.rhs

    @property
    def bound_ok(self) -> bool:
        return self.margin >= -self.tolerance


def verify_vanilla_bound(
    joint: DiscreteJoint,
    batch_size: int,
    eps: float = 1e-9,
    seed: int | None = None,
    samples: int = 1_000_000,
) -> VanillaBoundReport:
    """Check ``I >= log(N) - L`` with exact enumeration when feasible."""
    mi = exact_mi(joint)
    try:
        loss = expected_infonce(joint, batch_size)
        return VanillaBoundReport(mi, loss, batch_size, tolerance=eps, method="exact")
    except AlphabetTooLargeError:
        if seed is None:
            raise
        loss, stderr = expected_infonce_mc(joint, batch_size, seed=seed, samples=samples)
        return VanillaBoundReport(
            mi, loss, batch_size, tolerance=3.0 * stderr, method="monte-carlo",
            loss_stderr=stderr,
        )


# -- factored joints for mixed samples ---------------------------------------

@dataclass(frozen=True)
class FactoredJoint:
    """Joint over (tx, ty, vx, vy) plus the area weights of the mix."""

    probs: np.ndarray  # axes (tx, ty, vx, vy)
    s_x: float
    coupled: bool = False

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 4:
            raise ValidationError(f"factored joint must be 4-D, got shape {probs.shape}")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValidationError("joint entries must be nonnegative and sum to 1")
        if not 0.0 <= self.s_x <= 1.0:
            raise ValidationError(f"s_x must lie in [0, 1], got {self.s_x}")

    @property
    def s_y(self) -> float:
        return 1.0 - self.s_x

    @classmethod
    def build(
        cls,
        joint_x: DiscreteJoint,
        joint_y: DiscreteJoint,
        s_x: float,
        coupling: np.ndarray | None = None,
    ) -> "FactoredJoint":
        """Assemble the chain tx - vx - vy - ty.

        ``coupling`` is a row-stochastic ``(n_vx, n_vy)`` kernel giving
        ``P(vy | vx)``; without it the two pairs are independent and the y
        pair keeps its own joint.  With it, ``joint_y`` contributes only
        its conditional ``P(ty | vy)``.
        """
        px = joint_x.probs
        py = joint_y.probs
        if coupling is None:
            probs = np.einsum("ax,by->abxy", px, py)
            return cls(probs, s_x, coupled=False)
        coupling = np.asarray(coupling, dtype=np.float64)
        if coupling.shape != (joint_x.n_images, joint_y.n_images):
            raise ValidationError(
                f"coupling shape {coupling.shape} vs image alphabets "
                f"({joint_x.n_images}, {joint_y.n_images})"
            )
        if np.any(coupling < 0) or np.any(np.abs(coupling.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValidationError("coupling rows must be probability distributions")
        cond_y = py / py.sum(axis=0, keepdims=True)  # P(ty | vy)
        probs = np.einsum("ax,xy,by->abxy", px, coupling, cond_y)
        return cls(probs, s_x, coupled=True)

    def _pair(self, text_axis: int, image_axis: int) -> DiscreteJoint:
        other = [a for a in range(4) if a not in (text_axis, image_axis)]
        p = self.probs.sum(axis=tuple(other))
        if text_axis > image_axis:
            p = p.T
        return _pruned_joint(p)

    def joint_tx_vx(self) -> DiscreteJoint:
        return self._pair(0, 2)

    def joint_tx_vy(self) -> DiscreteJoint:
        return self._pair(0, 3)

    def joint_ty_vx(self) -> DiscreteJoint:
        return self._pair(1, 2)

    def joint_ty_vy(self) -> DiscreteJoint:
        return self._pair(1, 3)

    def joint_tx_vhat(self) -> DiscreteJoint:
        """Joint of tx with the composite symbol (vx, vy)."""
        p = self.probs.sum(axis=1)  # (tx, vx, vy)
        return _pruned_joint(p.reshape(p.shape[0], -1))

    def joint_ty_vhat(self) -> DiscreteJoint:
        p = self.probs.sum(axis=0)  # (ty, vx, vy)
        return _pruned_joint(p.reshape(p.shape[0], -1))

    def mi_tx_vy_given_vx(self) -> float:
        p = self.probs.sum(axis=1).transpose(0, 2, 1)  # (tx, vy, vx)
        return _conditional_mi(p)

    def mi_ty_vx_given_vy(self) -> float:
        p = self.probs.sum(axis=0)  # (ty, vx, vy)
        return _conditional_mi(p)


def _pruned_joint(p: np.ndarray) -> DiscreteJoint:
    """Drop zero-mass symbols so the joint meets the positive-marginal invariant."""
    rows = p.sum(axis=1) > 0
    cols = p.sum(axis=0) > 0
    return DiscreteJoint(p[np.ix_(rows, cols)])


def _conditional_mi(p: np.ndarray) -> float:
    """``I(t; a | b)`` for a 3-D joint with axes (t, a, b)."""
    total = 0.0
    for b in range(p.shape[2]):
        pb = p[:, :, b].sum()
        if pb <= 0:
            continue
        total += pb * _mi_of(p[:, :, b] / pb)
    return total


def random_factored_joint(
    rng: np.random.Generator,
    s_x: float,
    max_alphabet: int = 4,
    couple: bool | None = None,
) -> FactoredJoint:
    """Random chain joint for fuzzing; coupling drawn at random unless forced."""
    nt_x, nv_x = rng.integers(2, max_alphabet + 1, size=2)
    nt_y, nv_y = rng.integers(2, max_alphabet + 1, size=2)
    jx = DiscreteJoint.random(rng, int(nt_x), int(nv_x))
    jy = DiscreteJoint.random(rng, int(nt_y), int(nv_y))
    if couple is None:
        couple = bool(rng.integers(0, 2))
    if not couple:
        return FactoredJoint.build(jx, jy, s_x)
    kernel = rng.random((jx.n_images, jy.n_images)) + 1e-3
    kernel /= kernel.sum(axis=1, keepdims=True)
    return FactoredJoint.build(jx, jy, s_x, coupling=kernel)


@dataclass
class TimixBoundReport:
    """All MI terms, the expected mixed-batch loss, and the inequality verdicts."""

    batch_size: int
    s_x: float
    mi_tx_vx: float
    mi_ty_vy: float
    mi_tx_vy: float
    mi_ty_vx: float
    mi_tx_vhat: float
    mi_ty_vhat: float
    loss_x: float
    loss_y: float
    tolerance: float

    @property
    def s_y(self) -> float:
        return 1.0 - self.s_x

    @property
    def loss(self) -> float:
        return self.s_x * self.loss_x + self.s_y * self.loss_y

    @property
    def log_n(self) -> float:
        return math.log(self.batch_size)

    # per-term vanilla bounds on the composite image symbol
    @property
    def x_bound_ok(self) -> bool:
        return self.mi_tx_vhat >= self.log_n - self.loss_x - self.tolerance

    @property
    def y_bound_ok(self) -> bool:
        return self.mi_ty_vhat >= self.log_n - self.loss_y - self.tolerance

    # weighted bound on the mixed anchor
    @property
    def anchor_bound_ok(self) -> bool:
        lhs = self.s_x * self.mi_tx_vhat + self.s_y * self.mi_ty_vhat
        return lhs >= self.log_n - self.loss - self.tolerance

    # subadditivity of the composite: I(t, vx) + I(t, vy) >= I(t, (vx, vy))
    @property
    def subadd_x_margin(self) -> float:
        return self.mi_tx_vx + self.mi_tx_vy - self.mi_tx_vhat

    @property
    def subadd_y_margin(self) -> float:
        return self.mi_ty_vx + self.mi_ty_vy - self.mi_ty_vhat

    @property
    def subadd_x_ok(self) -> bool:
        return self.subadd_x_margin >= -self.tolerance

    @property
    def subadd_y_ok(self) -> bool:
        return self.subadd_y_margin >= -self.tolerance

    # combination of the above before rearrangement
    @property
    def combined_ok(self) -> bool:
        lhs = self.s_x * (self.mi_tx_vx + self.mi_tx_vy) + self.s_y * (
            self.mi_ty_vx + self.mi_ty_vy
        )
        return lhs >= self.log_n - self.loss - self.tolerance

    # final regularized bound
    @property
    def final_lhs(self) -> float:
        return self.s_x * self.mi_tx_vx + self.s_y * self.mi_ty_vy

    @property
    def final_rhs(self) -> float:
        return self.log_n - (self.loss + self.s_x * self.mi_tx_vy + self.s_y * self.mi_ty_vx)

    @property
    def final_margin(self) -> float:
        return self.final_lhs - self.final_rhs

    @property
    def final_ok(self) -> bool:
        return self.final_margin >= -self.tolerance

    @property
    def all_ok(self) -> bool:
        return (
            self.x_bound_ok
            and self.y_bound_ok
            and self.anchor_bound_ok
            and self.subadd_x_ok
            and self.subadd_y_ok
            and self.combined_ok
            and self.final_ok
        )


def verify_timix_bound(fjoint: FactoredJoint, batch_size: int, eps: float = 1e-9) -> TimixBoundReport:
    """Evaluate every inequality in the mixed-sample bound chain exactly."""
    return TimixBoundReport(
        batch_size=batch_size,
        s_x=fjoint.s_x,
        mi_tx_vx=exact_mi(fjoint.joint_tx_vx()),
        mi_ty_vy=exact_mi(fjoint.joint_ty_vy()),
        mi_tx_vy=exact_mi(fjoint.joint_tx_vy()),
        mi_ty_vx=exact_mi(fjoint.joint_ty_vx()),
        mi_tx_vhat=exact_mi(fjoint.joint_tx_vhat()),
        mi_ty_vhat=exact_mi(fjoint.joint_ty_vhat()),
        loss_x=expected_infonce(fjoint.joint_tx_vhat(), batch_size),
        loss_y=expected_infonce(fjoint.joint_ty_vhat(), batch_size),
        tolerance=eps,
    )


@dataclass
class ChainRuleReport:
    """Decomposition of the composite-image MI and its conditional remainder."""

    mi_tx_vhat: float
    mi_tx_vx: float
    mi_tx_vy: float
    cond_mi_x: float  # I(tx; vy | vx)
    mi_ty_vhat: float
    mi_ty_vy: float
    mi_ty_vx: float
    cond_mi_y: float  # I(ty; vx | vy)
    coupled: bool
    tolerance: float

    @property
    def identity_x_gap(self) -> float:
        return abs(self.mi_tx_vhat - (self.mi_tx_vx + self.cond_mi_x))

    @property
    def identity_y_gap(self) -> float:
        return abs(self.mi_ty_vhat - (self.mi_ty_vy + self.cond_mi_y))

    @property
    def identity_ok(self) -> bool:
        return self.identity_x_gap <= self.tolerance and self.identity_y_gap <= self.tolerance

    @property
    def slack_x(self) -> float:
        """Margin of replacing the conditional term by the unconditional one."""
        return self.mi_tx_vy - self.cond_mi_x

    @property
    def slack_y(self) -> float:
        return self.mi_ty_vx - self.cond_mi_y

    @property
    def dichotomy_ok(self) -> bool:
        """Equality without coupling, nonnegative slack with it."""
        if not self.coupled:
            return abs(self.slack_x) <= self.tolerance and abs(self.slack_y) <= self.tolerance
        return self.slack_x >= -self.tolerance and self.slack_y >= -self.tolerance

    @property
    def all_ok(self) -> bool:
        return self.identity_ok and self.dichotomy_ok


def chain_rule_check(fjoint: FactoredJoint, eps: float = 1e-10) -> ChainRuleReport:
    """Verify ``I(t, (vx, vy)) = I(t, vx) + I(t, vy | vx)`` and its slack."""
    return ChainRuleReport(
        mi_tx_vhat=exact_mi(fjoint.joint_tx_vhat()),
        mi_tx_vx=exact_mi(fjoint.joint_tx_vx()),
        mi_tx_vy=exact_mi(fjoint.joint_tx_vy()),
        cond_mi_x=fjoint.mi_tx_vy_given_vx(),
        mi_ty_vhat=exact_mi(fjoint.joint_ty_vhat()),
        mi_ty_vy=exact_mi(fjoint.joint_ty_vy()),
        mi_ty_vx=exact_mi(fjoint.joint_ty_vx()),
        cond_mi_y=fjoint.mi_ty_vx_given_vy(),
        coupled=fjoint.coupled,
        tolerance=eps,
    )
