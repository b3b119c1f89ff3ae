"""Exact solvers for the batch discrete-code assignment problem.

Given per-sample rewards U (row i holds the decoder log-likelihood of sample
i under each of the S one-hot codes) and a collision weight, find codes
maximizing

    sum_i U[i, c_i]  -  lambda' * sum_k n_k (n_k - 1),

where n_k counts the samples assigned code k and the penalty counts ordered
equal-code pairs. ``solve_bruteforce`` enumerates every assignment and is the
oracle; ``solve_mcf`` reduces the problem to a minimum cost flow and solves
it exactly by successive shortest paths with node potentials.

Network (maximization negated into costs): source -> sample arcs of capacity
1 and cost 0; sample -> category arcs of capacity 1 and cost -U[i, k];
category k -> sink as n parallel unit arcs with costs 2*lambda'*(j-1) for
j = 1..n, the convex expansion of n_k (n_k - 1). Pushing n units of flow at
minimum cost yields the optimal assignment.

Shortest paths are computed on a compressed view of the residual graph whose
nodes are {source, categories, sink}: on any source-to-sink path, the
potential of an interior sample node cancels between its entering and leaving
arcs, so a category-to-category "move" edge (reassign the cheapest sample)
and a source-to-category "entry" edge (assign the cheapest unassigned sample)
carry exactly the residual path costs. This is the same successive-shortest-
path iteration, just without scanning per-sample arcs one at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError

_BRUTE_LIMIT = 10**6


@dataclass
class AssignmentInstance:
    rewards: np.ndarray  # (n, S) float64
    lambda_prime: float

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.rewards.ndim != 2 or self.rewards.shape[0] < 1 or self.rewards.shape[1] < 1:
            raise ValueError(f"rewards must be a nonempty 2-d matrix, got shape {self.rewards.shape}")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")
        if self.lambda_prime < 0.0:
            raise ValueError(f"lambda_prime must be >= 0, got {self.lambda_prime}")

    @property
    def n(self) -> int:
        return self.rewards.shape[0]

    @property
    def s_card(self) -> int:
        return self.rewards.shape[1]


@dataclass
class Assignment:
    labels: np.ndarray  # (n,) int64
    objective: float


@dataclass
class FlowNetwork:
    """Literal arc-level view of a solved instance, for optimality audits.

    Node ids: 0 = source, 1..n = samples, n+1..n+S = categories, n+S+1 = sink.
    Parallel category->sink arcs appear individually with their convex costs.
    """

    n: int
    s_card: int
    tail: np.ndarray
    head: np.ndarray
    capacity: np.ndarray
    cost: np.ndarray
    flow: np.ndarray
    potentials: np.ndarray

    def min_residual_reduced_cost(self) -> float:
        """Smallest reduced cost over residual arcs; >= -1e-9 iff optimal flow.

        Residual arcs are unsaturated forward arcs and the reversals of arcs
        carrying flow (cost negated).
        """
        pi = self.potentials
        fwd = self.flow < self.capacity
        rc_f = self.cost[fwd] + pi[self.tail[fwd]] - pi[self.head[fwd]]
        bwd = self.flow > 0
        rc_b = -self.cost[bwd] + pi[self.head[bwd]] - pi[self.tail[bwd]]
        worst = np.inf
        if rc_f.size:
            worst = min(worst, float(rc_f.min()))
        if rc_b.size:
            worst = min(worst, float(rc_b.min()))
        return worst

    def conservation_violation(self) -> int:
        """Net flow imbalance over interior nodes (0 for a valid n-unit flow)."""
        net = np.zeros(self.n + self.s_card + 2, dtype=np.int64)
        np.add.at(net, self.tail, -self.flow.astype(np.int64))
        np.add.at(net, self.head, self.flow.astype(np.int64))
        return int(np.abs(net[1:-1]).sum())


def collision_count(labels: np.ndarray, s_card: int) -> int:
    """Ordered pairs of equal labels: sum_k n_k (n_k - 1)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= s_card):
        raise ValueError(f"labels must lie in [0, {s_card}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    counts = np.bincount(labels, minlength=s_card)
    return int((counts * (counts - 1)).sum())


def _objective(rewards: np.ndarray, labels: np.ndarray, lam: float) -> float:
    picked = rewards[np.arange(rewards.shape[0]), labels]
    return float(picked.sum() - lam * collision_count(labels, rewards.shape[1]))


def per_sample_argmax(rewards: np.ndarray) -> np.ndarray:
    """Row-wise argmax with lowest-index tie break."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if not np.all(np.isfinite(rewards)):
        raise ValueError("rewards must be finite")
    return np.argmax(rewards, axis=1)


def solve_bruteforce(inst: AssignmentInstance) -> Assignment:
    """Globally optimal assignment by exhaustive enumeration.

    Ties break toward the lexicographically smallest label vector. Guarded to
    S^n <= 1e6 outcomes.
    """
    n, s = inst.n, inst.s_card
    total = s**n
    if total > _BRUTE_LIMIT:
        raise ValueError(f"instance too large for brute force: S^n = {total} > {_BRUTE_LIMIT}")
    if n == 1:
        labels = np.array([int(np.argmax(inst.rewards[0]))])
        return Assignment(labels, _objective(inst.rewards, labels, inst.lambda_prime))
    codes = np.arange(total)
    weights = s ** np.arange(n - 1, -1, -1)
    labels_all = (codes[:, None] // weights[None, :]) % s  # lexicographic order
    picked = inst.rewards[np.arange(n)[None, :], labels_all].sum(axis=1)
    coll = np.zeros(total, dtype=np.int64)
    for k in range(s):
        nk = (labels_all == k).sum(axis=1)
        coll += nk * (nk - 1)
    objectives = picked - inst.lambda_prime * coll
    best = int(np.argmax(objectives))  # first max = lexicographically smallest
    labels = labels_all[best].astype(np.int64)
    return Assignment(labels, _objective(inst.rewards, labels, inst.lambda_prime))


def solve_mcf(inst: AssignmentInstance, want_network: bool = False):
    """Optimal assignment via successive shortest paths with node potentials.

    Initial potentials come from a single shortest-path pass over the layered
    (acyclic) zero-flow network; each iteration then runs Dijkstra on
    nonnegative reduced costs and augments one unit. Returns the assignment,
    or (assignment, FlowNetwork) when ``want_network`` is set.
    """
    u = inst.rewards
    lam = inst.lambda_prime
    n, s = inst.n, inst.s_card
    neg_u = -u

    # DAG pass over source -> samples -> categories -> sink at zero flow.
    pi_cat = neg_u.min(axis=0).copy()
    pi_sink = float(pi_cat.min())  # first parallel sink arc costs 0
    pi_src = 0.0

    labels = np.full(n, -1, dtype=np.int64)
    sink_flow = np.zeros(s, dtype=np.int64)
    unassigned = np.ones(n, dtype=bool)
    inf = np.inf

    for _ in range(n):
        un_idx = np.flatnonzero(unassigned)
        rows = neg_u[un_idx]
        ent_local = rows.argmin(axis=0)
        ent_sample = un_idx[ent_local]
        ent_vals = rows[ent_local, np.arange(s)]

        move = np.full((s, s), inf)
        move_arg = np.full((s, s), -1, dtype=np.int64)
        for k in range(s):
            members = np.flatnonzero(labels == k)
            if members.size:
                diffs = u[members, k][:, None] - u[members]  # cost of moving i: k -> k'
                arg = diffs.argmin(axis=0)
                move[k] = diffs[arg, np.arange(s)]
                move_arg[k] = members[arg]
        np.fill_diagonal(move, inf)

        # Dijkstra over {categories, sink} on reduced costs (source has dist 0).
        dist = np.empty(s + 1)
        dist[:s] = ent_vals + pi_src - pi_cat
        dist[s] = inf
        parent: list = [("entry", int(ent_sample[k])) for k in range(s)] + [None]
        done = np.zeros(s + 1, dtype=bool)
        rw_exit = 2.0 * lam * sink_flow + pi_cat - pi_sink
        while True:
            cand = np.where(done, inf, dist)
            node = int(cand.argmin())
            if node == s:
                break
            done[node] = True
            alt = dist[node] + rw_exit[node]
            if alt < dist[s]:
                dist[s] = alt
                parent[s] = ("exit", node)
            rw_row = move[node] + pi_cat[node] - pi_cat
            for k2 in range(s):
                if not done[k2] and rw_row[k2] < inf:
                    alt = dist[node] + rw_row[k2]
                    if alt < dist[k2]:
                        dist[k2] = alt
                        parent[k2] = ("move", node, int(move_arg[node, k2]))

        # Apply the augmenting path (one unit): walk parents back from the sink.
        kind, node = parent[s]
        sink_flow[node] += 1
        while True:
            entry = parent[node]
            if entry[0] == "entry":
                labels[entry[1]] = node
                unassigned[entry[1]] = False
                break
            _, prev, sample = entry
            labels[sample] = node
            node = prev

        d_sink = dist[s]
        pi_cat += np.minimum(dist[:s], d_sink)
        pi_sink += d_sink

    objective = _objective(u, labels, lam)
    result = Assignment(labels, objective)
    if not want_network:
        return result

    # Materialize the literal network with its final flow and potentials.
    tails, heads, caps, costs, flows = [], [], [], [], []
    for i in range(n):
        tails.append(0)
        heads.append(1 + i)
        caps.append(1)
        costs.append(0.0)
        flows.append(1)
    for i in range(n):
        for k in range(s):
            tails.append(1 + i)
            heads.append(1 + n + k)
            caps.append(1)
            costs.append(float(neg_u[i, k]))
            flows.append(1 if labels[i] == k else 0)
    sink = 1 + n + s
    for k in range(s):
        for j in range(n):
            tails.append(1 + n + k)
            heads.append(sink)
            caps.append(1)
            costs.append(2.0 * lam * j)
            flows.append(1 if j < sink_flow[k] else 0)
    pot = np.zeros(n + s + 2)
    pot[1 + n : 1 + n + s] = pi_cat
    pot[sink] = pi_sink
    # A sample's tightest constraint is its assigned category's reverse arc.
    pi_smp = u[np.arange(n), labels] + pi_cat[labels]
    pot[1 : 1 + n] = pi_smp
    pot[0] = float(pi_smp.min()) if n else 0.0
    network = FlowNetwork(
        n=n,
        s_card=s,
        tail=np.array(tails, dtype=np.int64),
        head=np.array(heads, dtype=np.int64),
        capacity=np.array(caps, dtype=np.int64),
        cost=np.array(costs, dtype=np.float64),
        flow=np.array(flows, dtype=np.int64),
        potentials=pot,
    )
    return result, network


def parse_instance(text: str, source: str = "<instance>") -> AssignmentInstance:
    """Plain-text instance: header ``n S lambda_prime`` then n reward rows."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{source}: empty instance")
    head = lines[0].split()
    if len(head) != 3:
        raise FormatError(f"{source}: header must be 'n S lambda_prime', got {lines[0]!r}")
    try:
        n, s, lam = int(head[0]), int(head[1]), float(head[2])
    except ValueError as exc:
        raise FormatError(f"{source}: bad header {lines[0]!r}: {exc}") from exc
    if len(lines) - 1 != n:
        raise FormatError(f"{source}: expected {n} reward rows, found {len(lines) - 1}")
    rewards = np.empty((n, s))
    for i, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != s:
            raise FormatError(f"{source}: row {i} has {len(parts)} entries, expected {s}")
        try:
            rewards[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise FormatError(f"{source}: row {i}: {exc}") from exc
    return AssignmentInstance(rewards, lam)


def format_solution(assignment: Assignment) -> str:
    labels = " ".join(str(int(v)) for v in assignment.labels)
    return f"{labels}\nobjective={assignment.objective:.10g}\n"
