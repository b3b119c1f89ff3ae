"""Evaluation suite and exact information-theoretic identity checks.

Two layers live here. The finite layer manipulates exact probability tables
over small alphabets (entropy, mutual information, total correlation) and
runs the identity suite that validates, by direct summation, the chained
decompositions the training procedure relies on. The model layer scores a
trained encoder/decoder pair: deterministic representation inference, KL
pruning, the vote-based disentanglement score, unsupervised cluster accuracy,
a Gaussian-fit total-correlation diagnostic, and a minibatch-mixture
per-dimension mutual information estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .assignment import per_sample_argmax
from .errors import MetricError
from .rng import Prng

KL_PRUNE_THRESHOLD = 0.1
TC_RIDGE = 1e-6


# --------------------------------------------------------------------------
# exact finite distributions


@dataclass
class FiniteJoint:
    """Exact joint distribution over small finite alphabets."""

    probs: np.ndarray  # shape == alphabet sizes, entries >= 0, sums to 1

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(self.probs < 0.0):
            raise ValueError("probabilities must be nonnegative")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1, got {total}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.probs.shape

    @property
    def num_vars(self) -> int:
        return self.probs.ndim

    def marginal(self, variables) -> "FiniteJoint":
        variables = list(variables)
        keep = set(variables)
        drop = tuple(ax for ax in range(self.num_vars) if ax not in keep)
        table = self.probs.sum(axis=drop) if drop else self.probs
        remaining = [ax for ax in range(self.num_vars) if ax in keep]
        perm = [remaining.index(v) for v in variables]
        return FiniteJoint(np.transpose(table, perm))


def entropy(dist: FiniteJoint) -> float:
    """Shannon entropy in nats with the 0 ln 0 = 0 convention."""
    p = dist.probs[dist.probs > 0.0]
    return float(-(p * np.log(p)).sum())


def mutual_information(joint: FiniteJoint, group_a, group_b) -> float:
    """Exact I(group_a; group_b) from marginalized tables."""
    group_a, group_b = list(group_a), list(group_b)
    if set(group_a) & set(group_b):
        raise ValueError(f"groups must be disjoint, got {group_a} and {group_b}")
    h_a = entropy(joint.marginal(group_a))
    h_b = entropy(joint.marginal(group_b))
    h_ab = entropy(joint.marginal(group_a + group_b))
    return h_a + h_b - h_ab


def total_correlation_exact(joint: FiniteJoint, variables=None) -> float:
    """KL from the joint over ``variables`` to the product of its marginals."""
    if variables is None:
        variables = list(range(joint.num_vars))
    variables = list(variables)
    if len(variables) < 2:
        raise ValueError("total correlation needs at least two variables")
    sub = joint.marginal(variables)
    h_single = sum(entropy(sub.marginal([j])) for j in range(sub.num_vars))
    return h_single - entropy(sub)


def kl_finite(q: np.ndarray, p: np.ndarray) -> float:
    """KL(q || p) over flat tables; q-zero cells contribute zero."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    live = q > 0.0
    return float((q[live] * (np.log(q[live]) - np.log(p[live]))).sum())


@dataclass
class IdentityReport:
    """Max absolute residuals of the decomposition identities over random models."""

    chain_rule: float        # TC(z_1:i) - TC(z_1:i-1) = I(z_1:i-1; z_i)
    partition: float         # I(x;[z1,z2]) = I(x;z1) + I(x;z2) - I(z1;z2)
    telescoping: float       # TC(z) = sum_i I(z_1:i-1; z_i)
    kl_decomposition: float  # E_x KL(q(z|x)||p(z)) = I(x;z) + TC(z) + sum_j KL(q_j||p_j)
    uniform_bound: float     # violation of KL(q(d)||unif) <= S E[1(d=d')] - 1

    @property
    def max_residual(self) -> float:
        return max(
            self.chain_rule, self.partition, self.telescoping, self.kl_decomposition,
            self.uniform_bound,
        )


def _random_joint(rng: Prng, sizes) -> FiniteJoint:
    total = 1
    for s in sizes:
        total *= s
    table = rng.uniforms(total) + 1e-3  # bounded away from zero cells
    return FiniteJoint((table / table.sum()).reshape(sizes))


def _random_conditional(rng: Prng, rows: int, cols: int) -> np.ndarray:
    table = rng.uniforms(rows * cols).reshape(rows, cols) + 1e-3
    return table / table.sum(axis=1, keepdims=True)


def verify_identities(rng: Prng, trials: int) -> IdentityReport:
    """Exercise every identity on ``trials`` random finite models.

    Models use alphabet sizes 2-4 and 3-4 variables; the cases that assume a
    conditionally factorized posterior are built as p(x) * prod_j p(z_j | x).
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    worst = dict.fromkeys(
        ("chain_rule", "partition", "telescoping", "kl_decomposition", "uniform_bound"), 0.0
    )

    def bump(key, value):
        worst[key] = max(worst[key], abs(value))

    for _ in range(trials):
        # chain rule and telescoping on an arbitrary joint
        n_vars = 3 + rng.randint(2)
        sizes = [2 + rng.randint(3) for _ in range(n_vars)]
        joint = _random_joint(rng, sizes)
        tc_prefix = [0.0, 0.0]  # TC of a single variable is zero
        for i in range(2, n_vars + 1):
            tc_prefix.append(total_correlation_exact(joint, range(i)))
        mi_terms = [
            mutual_information(joint, list(range(i - 1)), [i - 1])
            for i in range(2, n_vars + 1)
        ]
        for i in range(2, n_vars + 1):
            bump("chain_rule", tc_prefix[i] - tc_prefix[i - 1] - mi_terms[i - 2])
        bump("telescoping", tc_prefix[n_vars] - sum(mi_terms))

        # partition identity on a conditionally factorized model over (x, z1, z2)
        sx, s1, s2 = (2 + rng.randint(3) for _ in range(3))
        px = rng.uniforms(sx) + 1e-3
        px /= px.sum()
        pz1 = _random_conditional(rng, sx, s1)
        pz2 = _random_conditional(rng, sx, s2)
        joint_xzz = FiniteJoint(px[:, None, None] * pz1[:, :, None] * pz2[:, None, :])
        residual = (
            mutual_information(joint_xzz, [0], [1, 2])
            - mutual_information(joint_xzz, [0], [1])
            - mutual_information(joint_xzz, [0], [2])
            + mutual_information(joint_xzz, [1], [2])
        )
        bump("partition", residual)

        # KL decomposition with a factorized prior, same conditional structure
        m_z = 2 + rng.randint(2)
        sx = 2 + rng.randint(3)
        z_sizes = [2 + rng.randint(2) for _ in range(m_z)]
        px = rng.uniforms(sx) + 1e-3
        px /= px.sum()
        conds = [_random_conditional(rng, sx, sz) for sz in z_sizes]
        priors = []
        for sz in z_sizes:
            p = rng.uniforms(sz) + 1e-3
            priors.append(p / p.sum())
        prior = priors[0]
        for p in priors[1:]:
            prior = np.multiply.outer(prior, p)
        table = np.ones((sx, *z_sizes))
        for j, cond in enumerate(conds):
            shape = [sx] + [1] * m_z
            shape[1 + j] = z_sizes[j]
            table = table * cond.reshape(shape)
        expected_kl = sum(
            float(px[i]) * kl_finite(table[i], prior) for i in range(sx)
        )
        joint_full = FiniteJoint(px.reshape([sx] + [1] * m_z) * table)
        mi_xz = mutual_information(joint_full, [0], list(range(1, m_z + 1)))
        z_marg = joint_full.marginal(range(1, m_z + 1))
        tc_z = total_correlation_exact(z_marg)
        marg_kl = sum(
            kl_finite(z_marg.marginal([j]).probs, priors[j]) for j in range(m_z)
        )
        bump("kl_decomposition", expected_kl - mi_xz - tc_z - marg_kl)

        # uniform-prior bound for the discrete code
        s_card = 2 + rng.randint(3)
        q = rng.uniforms(s_card)
        q /= q.sum()
        lhs = kl_finite(q, np.full(s_card, 1.0 / s_card))
        rhs = s_card * float((q * q).sum()) - 1.0
        bump("uniform_bound", max(0.0, lhs - rhs))

    return IdentityReport(**worst)


# --------------------------------------------------------------------------
# model-level metrics


@dataclass
class Representation:
    continuous: np.ndarray  # (n, m) posterior means
    discrete: np.ndarray    # (n,) inferred category indices


@dataclass
class DisentanglementReport:
    score: float
    votes: np.ndarray         # (dims, K) counts
    dim_ids: tuple[int, ...]  # continuous indices, then discrete_dim_id if kept
    discrete_dim_id: int      # equals the continuous dimension count m
    surviving_dims: tuple[int, ...]
    full_data_variances: np.ndarray


def infer_representation(params: nn.MlpParams, dataset) -> Representation:
    """Posterior means plus decoder-argmax discrete codes, fully deterministic."""
    x = dataset.as_float() if hasattr(dataset, "as_float") else np.asarray(dataset, float)
    post = nn.encoder_forward(params, x)
    s = params.discrete_card
    rewards = np.empty((x.shape[0], s))
    eye = np.eye(s)
    for k in range(s):
        probs = nn.decoder_forward(params, post.mu, np.tile(eye[k], (x.shape[0], 1)))
        rewards[:, k] = nn.bernoulli_loglik(probs, x)
    return Representation(continuous=post.mu, discrete=per_sample_argmax(rewards))


def surviving_from_kl(mean_kl: np.ndarray) -> tuple[int, ...]:
    """Dims kept by the pruning rule; the threshold itself survives."""
    return tuple(int(j) for j in np.flatnonzero(mean_kl >= KL_PRUNE_THRESHOLD))


def prune_dims(params: nn.MlpParams, dataset) -> tuple[int, ...]:
    """Continuous dims whose mean KL from the prior is at least the threshold."""
    x = dataset.as_float() if hasattr(dataset, "as_float") else np.asarray(dataset, float)
    post = nn.encoder_forward(params, x)
    mean_kl = nn.gaussian_kl_per_dim(post).mean(axis=0)
    surviving = surviving_from_kl(mean_kl)
    if not surviving and params.discrete_card < 2:
        raise MetricError("all continuous dimensions pruned and no discrete dimension")
    return surviving


def _pairwise_variance_continuous(values: np.ndarray) -> np.ndarray:
    """(1 / 2L(L-1)) sum_{p,q} (x_p - x_q)^2 per column == unbiased variance."""
    return values.var(axis=0, ddof=1)


def _pairwise_variance_discrete(labels: np.ndarray) -> float:
    """(1 / 2L(L-1)) sum_{p,q} 1(x_p != x_q)."""
    n = labels.shape[0]
    counts = np.bincount(labels)
    return float(n * n - (counts * counts).sum()) / (2.0 * n * (n - 1))


def score_representation(
    rep: Representation,
    factor_table: np.ndarray,
    cards,
    surviving_cont,
    votes: int,
    fixed_batch: int,
    rng: Prng,
) -> DisentanglementReport:
    """Vote-based disentanglement score over precomputed representations.

    For each vote: fix a uniformly chosen factor at a uniformly chosen value,
    draw ``fixed_batch`` factor combinations with the other factors uniform
    (with replacement), look those rows up in the representation, compute the
    pairwise empirical variance per dimension (squared differences for
    continuous dims, the inequality indicator for the discrete dim),
    normalize by the full-data variance, and vote for the argmin dimension.
    The score is the fraction of votes captured by each dimension's most
    frequent factor.
    """
    cards = tuple(int(c) for c in cards)
    n_factors = len(cards)
    if any(c < 2 for c in cards):
        raise MetricError(f"every factor needs >= 2 values, got cardinalities {cards}")
    dims = [int(j) for j in surviving_cont] + [rep.continuous.shape[1]]
    m = rep.continuous.shape[1]

    full_var = np.empty(len(dims))
    for slot, j in enumerate(dims):
        if j == m:
            full_var[slot] = _pairwise_variance_discrete(rep.discrete)
        else:
            full_var[slot] = _pairwise_variance_continuous(rep.continuous[:, [j]])[0]
    usable = full_var > 0.0
    if not np.all(usable):
        dropped = [dims[i] for i in np.flatnonzero(~usable)]
        warnings.warn(f"dropping zero-variance dimensions {dropped} from the score")
        dims = [d for d, ok in zip(dims, usable) if ok]
        full_var = full_var[usable]
    if not dims:
        raise MetricError("no dimension has positive full-data variance")

    weights = np.ones(n_factors, dtype=np.int64)
    for j in range(n_factors - 2, -1, -1):
        weights[j] = weights[j + 1] * cards[j + 1]

    vote_matrix = np.zeros((len(dims), n_factors), dtype=np.int64)
    for _ in range(votes):
        k = rng.randint(n_factors)
        fixed_value = rng.randint(cards[k])
        draws = np.empty((fixed_batch, n_factors), dtype=np.int64)
        for j, card in enumerate(cards):
            draws[:, j] = rng.integers(card, fixed_batch)
        draws[:, k] = fixed_value
        rows = draws @ weights
        local = np.empty(len(dims))
        cont_rows = rep.continuous[rows]
        disc_rows = rep.discrete[rows]
        for slot, j in enumerate(dims):
            if j == m:
                local[slot] = _pairwise_variance_discrete(disc_rows)
            else:
                local[slot] = _pairwise_variance_continuous(cont_rows[:, [j]])[0]
        winner = int(np.argmin(local / full_var))
        vote_matrix[winner, k] += 1

    score = float(vote_matrix.max(axis=1).sum()) / votes
    return DisentanglementReport(
        score=score,
        votes=vote_matrix,
        dim_ids=tuple(dims),
        discrete_dim_id=m,
        surviving_dims=tuple(int(j) for j in surviving_cont),
        full_data_variances=full_var,
    )


def disentanglement_score(
    params: nn.MlpParams,
    dataset,
    fixed_batch: int = 100,
    votes: int = 800,
    rng: Prng | None = None,
) -> DisentanglementReport:
    """Full pipeline: infer representations, prune, then vote."""
    if rng is None:
        rng = Prng(0).child("metrics")
    rep = infer_representation(params, dataset)
    surviving = prune_dims(params, dataset)
    return score_representation(
        rep, dataset.factors, dataset.cards, surviving, votes, fixed_batch, rng
    )


def cluster_accuracy(inferred: np.ndarray, truth: np.ndarray) -> float:
    """Accuracy after mapping each inferred label to its majority true class."""
    inferred = np.asarray(inferred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if inferred.shape != truth.shape:
        raise ValueError(f"length mismatch: {inferred.shape} vs {truth.shape}")
    if inferred.size == 0:
        raise ValueError("empty label vectors")
    n_inf = int(inferred.max()) + 1
    n_true = int(truth.max()) + 1
    contingency = np.zeros((n_inf, n_true), dtype=np.int64)
    np.add.at(contingency, (inferred, truth), 1)
    mapping = contingency.argmax(axis=1)  # ties break to the lowest class
    return float((mapping[inferred] == truth).mean())


def estimate_tc_gaussian(z_means: np.ndarray) -> float:
    """Gaussian-fit total correlation of the aggregate posterior means.

    Fits the sample correlation matrix (covariance normalized per dimension,
    which makes the value exactly invariant to per-dimension affine scaling),
    adds a small ridge, and returns 0.5 * (sum_j ln R_jj - ln det R). This is
    an approximation: it measures only the second-moment dependence.
    """
    z = np.asarray(z_means, dtype=np.float64)
    n, m = z.shape
    if n <= m:
        raise ValueError(f"need more samples than dimensions, got {z.shape}")
    cov = np.cov(z, rowvar=False, ddof=1).reshape(m, m)
    std = np.sqrt(np.diag(cov))
    live = std > 0.0
    denom = np.where(live, std, 1.0)
    corr = cov / denom[:, None] / denom[None, :]
    corr[~live, :] = 0.0
    corr[:, ~live] = 0.0
    corr[np.diag_indices(m)] = 1.0
    corr = corr + TC_RIDGE * np.eye(m)
    sign, logdet = np.linalg.slogdet(corr)
    if sign <= 0:
        raise ValueError("correlation matrix is not positive definite after ridging")
    return float(0.5 * (np.log(np.diag(corr)).sum() - logdet))


def estimate_mi_per_dim(
    params: nn.MlpParams,
    dataset,
    batch_size: int,
    rng: Prng,
    num_batches: int = 32,
) -> np.ndarray:
    """(m+1)-vector of mutual information estimates in nats.

    Continuous dims use the minibatch-mixture estimator
    mean_i [ln q(z_j(i)|x(i)) - ln (1/n) sum_i' q(z_j(i)|x(i'))] averaged over
    seeded batches, floored at zero (the population value is nonnegative and
    the floor removes small-sample noise on collapsed dimensions). The
    discrete entry is the entropy of the inferred-label distribution, which
    equals I(x; d) because the code is deterministic given x.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    x = dataset.as_float() if hasattr(dataset, "as_float") else np.asarray(dataset, float)
    n_rows = x.shape[0]
    m = params.latent_dim
    acc = np.zeros(m)
    for _ in range(num_batches):
        rows = rng.permutation(n_rows)[:batch_size]
        post = nn.encoder_forward(params, x[rows])
        z = nn.reparameterize(post, rng)
        var = np.exp(post.log_var)
        # log q(z_j(i) | x(i')) for all pairs (i, i'), per dimension
        diff = z[:, None, :] - post.mu[None, :, :]
        log_q = -0.5 * (diff**2 / var[None, :, :] + post.log_var[None, :, :] + np.log(2 * np.pi))
        own = np.diagonal(log_q, axis1=0, axis2=1).T  # (n, m)
        mix = _logsumexp(log_q, axis=1) - np.log(batch_size)
        acc += (own - mix).mean(axis=0)
    estimates = np.maximum(acc / num_batches, 0.0)
    labels = infer_representation(params, dataset).discrete
    freq = np.bincount(labels, minlength=params.discrete_card).astype(float)
    freq /= freq.sum()
    discrete_mi = float(-(freq[freq > 0] * np.log(freq[freq > 0])).sum())
    return np.concatenate([estimates, [discrete_mi]])


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    peak = a.max(axis=axis, keepdims=True)
    out = np.log(np.exp(a - peak).sum(axis=axis)) + np.squeeze(peak, axis=axis)
    return out


def format_report(values: dict, report: DisentanglementReport | None = None) -> str:
    """Line-oriented key=value report text."""
    lines = [f"{key}={value}" for key, value in values.items()]
    if report is not None:
        lines.append("surviving_dims=" + ",".join(str(d) for d in report.surviving_dims))
    return "\n".join(lines) + "\n"


def votes_csv(report: DisentanglementReport, factor_names) -> str:
    lines = ["dim," + ",".join(factor_names)]
    for dim_id, row in zip(report.dim_ids, report.votes):
        name = "discrete" if dim_id == report.discrete_dim_id else f"z{dim_id}"
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"
