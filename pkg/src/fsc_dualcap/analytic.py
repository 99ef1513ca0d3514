"""Closed-form bounds and Bellman certificates for the four example channels,
plus the DEC lower bound from first-order Markov inputs."""

import math
from dataclasses import dataclass, field

import numpy as np

from .channels import make_ising, make_post, make_trapdoor
from .dp import BellmanCertificate, bellman_residual, relative_value_iteration
from .errors import DomainError, ResourceError
from .info import binary_entropy
from .qgraph import markov_qgraph
from .results import BoundResult
from .search import multistart_golden_max, pattern_search
from .testdist import ising_test_dist, post_k, post_test_dist, trapdoor_test_dist
from .unifilar import pair_index, special_case_dp, unifilar_dp

LOG2_3_2 = math.log2(1.5)


@dataclass
class ClosedFormBound:
    channel: str
    params: dict
    value: float
    aux: dict = field(default_factory=dict)

    def to_result(self):
        diag = {"params": self.params, **self.aux}
        return BoundResult(self.value, "closed-form", diag, {"channel": self.channel})


def _check_closed(name, v):
    if not 0.0 <= v <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {v!r}")


# ---- trapdoor -------------------------------------------------------------

def trapdoor_dp():
    """Belief DP on the binary first-order Markov graph with R(0|0)=R(1|1)=2/3.

    State order (q, s) = (0,0), (0,1), (1,0), (1,1).
    """
    return unifilar_dp(make_trapdoor(), markov_qgraph(1, 2), trapdoor_test_dist())


def trapdoor_certificate():
    def h(z):
        return max(z[1], z[2])

    def policy(z):
        return 0 if z[1] <= z[2] else 1

    return BellmanCertificate(LOG2_3_2, h, policy, {"channel": "trapdoor"})


def trapdoor_bound():
    return ClosedFormBound("trapdoor", {}, LOG2_3_2)


# ---- Ising ----------------------------------------------------------------

def ising_constraints(a, b, c, d):
    """The four feasibility margins; the certificate needs all of them >= 0."""
    A, B, C, D = 1 - a, 1 - b, 1 - c, 1 - d
    return (
        2 * d * C - a * a,
        a ** 3 - 2 * A * c * d,
        4 * b * C * C * D - a * a * A * c,
        32 * b * b * B * C * C * D * D - a * c * c * d * d * A * A,
    )


def ising_policy_margins(a, b, c, d):
    """One margin per complementary state pair, in the order (0,0,0,0),
    (0,0,0,1), ..., (0,1,1,1). A margin >= 0 means the certificate's action
    is a best action there. Pairs 1, 4, 7 and 8 reproduce the four
    constraints above; the other four are not implied by them."""
    A, B, C, D = 1 - a, 1 - b, 1 - c, 1 - d
    return (
        a ** 3 - 2 * A * c * d,
        1024 * b ** 5 * B * C ** 5 * D ** 5 - a * A ** 5 * c ** 5 * d ** 5,
        8 * B - a,
        4 * b * C * C * D - a * a * A * c,
        a ** 5 * A * c - 16 * b * B * C ** 3 * d * D,
        64 * b * B * C * D - a * A * c * d,
        32 * b * b * B * C * C * D * D - a * c * c * d * d * A * A,
        2 * d * C - a * a,
    )


def ising_rho(a, b, c, d):
    return 0.25 * math.log2(1.0 / (2 * a * c * d * (1 - a)))


def _check_open_params(params):
    for name, v in zip("abcd", params):
        if not 0.0 < v < 1.0:
            raise DomainError(f"{name} must lie in (0, 1), got {v!r}")


def ising_h_table(a, b, c, d):
    """Relative values on states (s, x1, x2, x3); complementary states share values."""
    _check_open_params((a, b, c, d))
    A, B, C, D = 1 - a, 1 - b, 1 - c, 1 - d
    lg = math.log2
    half = {
        (0, 0, 0, 0): lg(1 / (4 * a * A)) / 2,
        (0, 0, 0, 1): lg(1 / (2 * a * c * d * A)) / 4,
        (0, 0, 1, 0): lg(A ** 3 * c * d ** 3 / (64 * a * b ** 5 * B * C ** 5 * D ** 3)) / 8,
        (0, 0, 1, 1): lg(1 / (2 * a * c)) / 2,
        (0, 1, 0, 0): lg(A * d / (256 * a * b ** 3 * c * B * C ** 3 * D)) / 8,
        (0, 1, 0, 1): lg(A * d / (8 * b * b * B * C * C * D)) / 4,
        (0, 1, 1, 0): lg(1 / (2 * a * b * c * C)) / 4,
        (0, 1, 1, 1): lg(d / (8 * a ** 3 * c * A)) / 4,
    }
    table = dict(half)
    for z, v in half.items():
        table[tuple(1 - t for t in z)] = v
    return table


def ising_policy(z):
    z0, _, z2, z3 = (int(round(t)) for t in z)
    return (1 - z0) * (1 - z2) + z3 * (z0 ^ z2)


@dataclass
class ConstraintReport:
    values: tuple
    satisfied: tuple
    policy_margins: tuple = ()

    @property
    def feasible(self):
        return all(self.satisfied)

    @property
    def violated(self):
        return [i + 1 for i, ok in enumerate(self.satisfied) if not ok]

    @property
    def certifies(self):
        """True when every policy margin is >= 0, so the table solves the
        Bellman equation exactly."""
        return all(m >= 0 for m in self.policy_margins)


def ising_certificate(a, b, c, d):
    """Returns ``(certificate, constraint report)`` for the order-3 Markov test
    distribution with parameters (a, b, c, d)."""
    table = ising_h_table(a, b, c, d)

    def h(z):
        return table[tuple(int(round(t)) for t in z)]

    vals = ising_constraints(a, b, c, d)
    report = ConstraintReport(vals, tuple(v >= 0 for v in vals),
                              ising_policy_margins(a, b, c, d))
    cert = BellmanCertificate(ising_rho(a, b, c, d), h, ising_policy,
                              {"channel": "ising", "params": (a, b, c, d)})
    return cert, report


def ising_dp(a, b, c, d):
    """The 16-state DP on (s, x1, x2, x3)."""
    return special_case_dp(make_ising(), 3, ising_test_dist(a, b, c, d))


def _ising_barrier(mu):
    def f(x):
        cons = ising_constraints(*x)
        if min(cons) <= 0:
            return math.inf
        a, _, c, d = x
        return 0.25 * math.log2(1 / (2 * a * c * d * (1 - a))) - mu * sum(math.log(v) for v in cons)
    return f


ISING_BOX = (1e-4, 1 - 1e-4)
BARRIER_SCHEDULE = (1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-10, 1e-12)


def ising_feasible_starts(count, rng):
    """Rejection-sample strictly feasible parameter vectors."""
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 1000 * count:
            raise ResourceError("could not sample feasible starting points")
        x = rng.uniform(*ISING_BOX, size=4)
        if min(ising_constraints(*x)) > 0:
            out.append(x)
    return out


def ising_minimize(starts=50, seed=0, finalists=3):
    """Minimise the Ising bound over parameters satisfying the four
    constraints.

    Every start is first improved on a log-barrier objective with a coarse
    pattern search; the best ``finalists`` are then followed down a
    decreasing barrier schedule to full precision.
    """
    rng = np.random.default_rng(seed)
    pool = ising_feasible_starts(starts, rng)
    evals = 0
    screened = []
    for x0 in pool:
        tr = pattern_search(_ising_barrier(1e-3), x0, *ISING_BOX, step=0.05, min_step=1e-4,
                            max_evals=5_000, rng=rng)
        evals += tr.evaluations
        screened.append((tr.value, tr.x))
    screened.sort(key=lambda t: t[0])
    best = None
    for _, x in screened[:finalists]:
        for mu in BARRIER_SCHEDULE:
            tr = pattern_search(_ising_barrier(mu), x, *ISING_BOX, step=1e-3, min_step=1e-12,
                                max_evals=50_000, rng=rng)
            x = tr.x
            evals += tr.evaluations
        value = ising_rho(*x)
        if best is None or value < best[0]:
            best = (value, x)
    if best is None or min(ising_constraints(*best[1])) < 0:
        raise ResourceError("no feasible Ising parameters found")
    value, x = best
    a, b, c, d = (float(t) for t in x)
    cert, report = ising_certificate(a, b, c, d)
    dp = ising_dp(a, b, c, d)
    res = bellman_residual(dp, cert, dp.space.points)
    rvi = relative_value_iteration(dp, tol=1e-12, max_iter=100_000, damping=0.5)
    aux = {
        "constraints": list(report.values),
        "policy_margins": list(report.policy_margins),
        "certified": report.certifies,
        "active": ising_active_set(x),
        "residual": res.max_residual,
        "policy_gap": res.max_policy_gap,
        "rvi_rho": rvi.rho,
        "evaluations": evals,
    }
    return ClosedFormBound("ising", {"a": a, "b": b, "c": c, "d": d}, value, aux)


def ising_active_set(x, tol=1e-8):
    """1-based indices of constraints within ``tol`` of equality."""
    return [i + 1 for i, v in enumerate(ising_constraints(*x)) if abs(v) <= tol]


def ising_local_check(x, step=1e-6):
    """True when no +/- ``step`` coordinate move both stays feasible and
    lowers the bound."""
    base = ising_rho(*x)
    for i in range(4):
        for sign in (1, -1):
            y = np.array(x, dtype=float)
            y[i] += sign * step
            if not all(0 < t < 1 for t in y):
                continue
            if min(ising_constraints(*y)) >= 0 and ising_rho(*y) < base:
                return False
    return True


# ---- DEC ------------------------------------------------------------------

def dec_root(eps, tol=1e-12):
    """Solve p^eps = 2(1 - p) on [1/2, 2/3] by bisection."""
    _check_closed("eps", eps)
    if eps == 0.0:
        return 0.5
    if eps == 1.0:
        return 2.0 / 3.0
    lo, hi = 0.5, 2.0 / 3.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if mid ** eps - 2 * (1 - mid) > 0:
            hi = mid
        else:
            lo = mid
    p = min((lo, hi), key=lambda t: abs(t ** eps - 2 * (1 - t)))
    if abs(p ** eps - 2 * (1 - p)) > tol:
        raise ResourceError(f"root residual {abs(p ** eps - 2 * (1 - p))!r} above {tol}")
    return p


def dec_upper_bound(eps):
    p = dec_root(eps)
    if eps == 0.0:
        value = 1.0
    elif eps == 1.0:
        value = 0.0
    else:
        value = 1.0 + eps * math.log2((1 - p) / p)
    return ClosedFormBound("dec", {"eps": eps}, value,
                           {"p": p, "root_residual": abs(p ** eps - 2 * (1 - p))})


def dec_feedback_objective(p, eps):
    """(1-eps)(p + eps H2(p)) / (eps + (1-eps) p)."""
    den = eps + (1 - eps) * p
    if den == 0:
        return 0.0
    return (1 - eps) * (p + eps * binary_entropy(p)) / den


def dec_feedback_capacity_form(eps):
    _check_closed("eps", eps)
    if eps == 1.0:
        return 0.0
    _, value = multistart_golden_max(lambda p: dec_feedback_objective(p, eps), 0.0, 1.0)
    return value


MAX_SERIES_TERMS = 10_000_000


def _series_ratio(a, eps):
    return eps / (1 - a * (1 - eps))


def _series_tail(a, eps, q_max):
    """Bound on the omitted terms q > q_max (each entropy factor is <= 1)."""
    r = _series_ratio(a, eps)
    if r >= 1:
        return 0.0 if a == 1.0 else math.inf
    return (1 - a) ** 2 * (1 - eps) ** 2 / eps * r ** (q_max + 2) / (1 - r)


def _terms_needed(a, eps, tail_tol):
    r = _series_ratio(a, eps)
    if a == 1.0:
        return 0
    if r >= 1:
        return MAX_SERIES_TERMS
    scale = (1 - a) ** 2 * (1 - eps) ** 2 / (eps * (1 - r))
    if scale <= tail_tol:
        return 0
    return max(0, math.ceil(math.log(tail_tol / scale) / math.log(r)) - 2)


def dec_markov_rate(a, eps, q_max=200):
    """Information rate of symmetric first-order Markov inputs with
    P(stay) = a, truncated after ``q_max`` series terms."""
    if eps == 0.0:
        return float(binary_entropy(a))
    r = _series_ratio(a, eps)
    q = np.arange(q_max + 1)
    alpha = (1 - np.power(2 * a - 1, q)) / 2
    series = np.sum(np.power(r, q + 1) * binary_entropy(alpha))
    return float((1 - eps) * binary_entropy(a) + (1 - a) ** 2 * (1 - eps) ** 2 / eps * series)


def dec_lower_bound(eps, q_max=200, tail_tol=1e-12):
    """Best first-order Markov input rate; ``q_max=None`` sizes the series
    so the tail bound meets ``tail_tol`` at every evaluated ``a``."""
    _check_closed("eps", eps)
    if eps == 1.0:
        return ClosedFormBound("dec", {"eps": eps}, 0.0, {"a": 0.5, "tail": 0.0, "q_max": 0})
    if eps == 0.0:
        return ClosedFormBound("dec", {"eps": eps}, 1.0, {"a": 0.5, "tail": 0.0, "q_max": 0})

    def terms(a):
        if q_max is not None:
            return q_max
        return min(_terms_needed(a, eps, tail_tol), MAX_SERIES_TERMS)

    a, value = multistart_golden_max(lambda a: dec_markov_rate(a, eps, terms(a)), 0.0, 1.0)
    used = terms(a)
    tail = _series_tail(a, eps, used)
    if tail > tail_tol:
        need = _terms_needed(a, eps, tail_tol)
        raise ResourceError(f"series tail {tail:.3g} exceeds {tail_tol:g} at q_max={used}; "
                            f"need q_max >= {need}")
    return ClosedFormBound("dec", {"eps": eps}, value, {"a": a, "tail": tail, "q_max": used})


# ---- POST -----------------------------------------------------------------

POST_COORDS = (pair_index(0, 0, 2), pair_index(1, 1, 2))


def post_bound(p):
    """log2(1 + (1-p) p^(p/(1-p))), with the limits at p = 0 and p = 1."""
    _check_closed("p", p)
    k = post_k(p)
    return ClosedFormBound("post", {"p": p}, math.log2(1.0 / k), {"K": k})


def post_dp(p):
    """Belief DP on the two reachable pairs (q, s) = (0, 0), (1, 1); the state
    is ``(z, 1 - z)`` with ``z`` the probability of node 0."""
    return unifilar_dp(make_post(p), markov_qgraph(1, 2), post_test_dist(p), coords=POST_COORDS)


def post_certificate(p):
    if not 0.0 < p < 1.0:
        raise DomainError(f"the POST certificate needs p in (0, 1), got {p!r}")
    k = post_k(p)
    slope = math.log2(p * (1 - k) / ((1 - p) * k))
    base = math.log2(p) / (1 - p)

    def h(z):
        return z[0] * slope + (1 - z[0]) * base

    return BellmanCertificate(math.log2(1.0 / k), h, lambda z: 0, {"channel": "post", "p": p})


def post_action_gap(p, zs):
    """g(z,0) + h(F(z,0)) - g(z,1) - h(F(z,1)) for each z in ``zs``."""
    dp = post_dp(p)
    cert = post_certificate(p)
    Z = np.stack([np.asarray(zs, dtype=float), 1 - np.asarray(zs, dtype=float)], axis=1)
    sides = []
    for u in (0, 1):
        img = dp.transition(Z, u)
        sides.append(dp.reward(Z, u) + np.array([cert.h(v) for v in img]))
    return sides[0] - sides[1]
