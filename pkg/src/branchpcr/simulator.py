"""Simulation of the duplication process and exact small-instance enumeration.

Populations are stored as count tables keyed by an integer mutation count m;
a particle's state is m times ``state_scale``. Poisson increment laws live on
the integer lattice directly (scale 1). A general (mu, nu) law is realized as
the two-point distribution on {0, a} with a = (nu + mu^2)/mu and atom
probability p = mu^2/(nu + mu^2), which matches both moments. Each cycle
draws one binomial per occupied class for the duplication count and one
multinomial (or binomial, for two-point laws) for the increments, so the cost
scales with the number of occupied classes rather than the population size.

Monte Carlo replicates use independent Philox streams seeded by (seed,
replicate), aggregated in fixed-size chunks so results are identical for any
thread count.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .moments import ExactMoments, MutationLaw
from .schedule import DerivedSequences, EfficiencySchedule, mm_lambda

DEFAULT_POPULATION_CAP = 10**8
_CHUNK = 1024
_PMF_TAIL = 1e-12


@dataclass(frozen=True)
class ProcessSpec:
    """A branching instance: efficiency schedule, increment law, initial size."""

    sched: EfficiencySchedule
    law: MutationLaw
    S0: int

    def __post_init__(self) -> None:
        if self.S0 < 1:
            raise ValueError("initial population must be at least 1")
        if not self.law.poisson and self.law.mu == 0.0 and self.law.nu > 0.0:
            raise ValueError(
                "cannot realize a zero-mean, positive-variance increment law "
                "on the two-point support {0, a}"
            )


@dataclass(frozen=True)
class PopulationState:
    """Population snapshot after ``gen`` cycles."""

    gen: int
    size: int
    states: dict[int, int]
    state_scale: float
    realized_lambdas: tuple[float, ...]

    def values_counts(self) -> tuple[np.ndarray, np.ndarray]:
        keys = np.array(sorted(self.states), dtype=np.int64)
        counts = np.array([self.states[k] for k in keys], dtype=np.int64)
        return keys * self.state_scale, counts

    def mean(self) -> float:
        values, counts = self.values_counts()
        return float(np.sum(values * counts) / self.size)

    def second_moment(self) -> float:
        values, counts = self.values_counts()
        return float(np.sum(values**2 * counts) / self.size)

    def histogram(self) -> dict[int, float]:
        """Normalized counts keyed by mutation count."""
        return {m: c / self.size for m, c in self.states.items()}


class PopulationCapExceeded(RuntimeError):
    """Raised when a trajectory outgrows the population cap.

    Carries the trajectory simulated so far (up to the last cycle that
    stayed within the cap) plus the offending generation and size.
    """

    def __init__(self, trajectory: list[PopulationState], gen: int, size: int):
        super().__init__(
            f"population reached {size} at cycle {gen}, above the cap; "
            f"partial trajectory has {len(trajectory)} snapshots"
        )
        self.trajectory = trajectory
        self.gen = gen
        self.size = size


def _increment_sampler(law: MutationLaw):
    """Return (kind, payload) describing how to draw mutation-count increments."""
    if law.poisson:
        if law.mu == 0.0:
            return "fixed", None
        k_max = int(stats.poisson.ppf(1.0 - _PMF_TAIL, law.mu)) + 1
        pmf = stats.poisson.pmf(np.arange(k_max + 1), law.mu)
        pmf = pmf / pmf.sum()
        return "table", pmf
    a, p = law.two_point_support()
    if p == 0.0:
        return "fixed", None
    return "bernoulli", p


def _state_scale(law: MutationLaw) -> float:
    if law.poisson:
        return 1.0
    a, _ = law.two_point_support()
    return a


def simulate(
    spec: ProcessSpec,
    n: int,
    rng: np.random.Generator,
    population_cap: int = DEFAULT_POPULATION_CAP,
) -> list[PopulationState]:
    """Run one trajectory for n cycles; snapshots for cycles 0..n.

    Michaelis-Menten schedules compute each cycle's efficiency from the
    current size; deterministic schedules must cover n cycles.
    """
    if n < 0:
        raise ValueError("cycle count must be nonnegative")
    deterministic = spec.sched.kind == "deterministic"
    lam_seq = spec.sched.prefix(n) if deterministic else None
    kind, payload = _increment_sampler(spec.law)
    scale = _state_scale(spec.law)

    table: dict[int, int] = {0: spec.S0}
    size = spec.S0
    realized: tuple[float, ...] = ()
    traj = [PopulationState(0, size, dict(table), scale, realized)]
    for c in range(n):
        lam = lam_seq[c] if deterministic else mm_lambda(size, spec.sched.mm_C, spec.sched.mm_D)
        new: dict[int, int] = {}
        for m in sorted(table):
            count = table[m]
            dups = int(rng.binomial(count, lam))
            new[m] = new.get(m, 0) + count
            if dups == 0:
                continue
            if kind == "fixed":
                new[m] += dups
            elif kind == "bernoulli":
                hits = int(rng.binomial(dups, payload))
                if hits:
                    new[m + 1] = new.get(m + 1, 0) + hits
                if dups - hits:
                    new[m] += dups - hits
            else:
                draws = rng.multinomial(dups, payload)
                for inc, cnt in enumerate(draws):
                    if cnt:
                        new[m + inc] = new.get(m + inc, 0) + int(cnt)
        table = new
        size = sum(table.values())
        realized = realized + (float(lam),)
        if size > population_cap:
            raise PopulationCapExceeded(traj, c + 1, size)
        traj.append(PopulationState(c + 1, size, dict(table), scale, realized))
    return traj


def draw_sample(state: PopulationState, ell: int, rng: np.random.Generator) -> np.ndarray:
    """ell with-replacement draws of particle states."""
    if ell < 1:
        raise ValueError("sample size must be at least 1")
    values, counts = state.values_counts()
    picks = rng.multinomial(ell, counts / state.size)
    return np.repeat(values, picks)


@dataclass(frozen=True)
class MonteCarloMoments:
    """Replicate-averaged statistics with standard errors."""

    replicates: int
    n: int
    ell: int
    t_mean: float
    t_se: float
    t_var: float
    t_var_se: float
    M_mean: float
    M_se: float
    M_var: float
    M_var_se: float
    D_mean: float
    D_se: float
    size_mean: float
    size_se: float
    martingale_mean: float
    martingale_se: float
    harmonic: dict[float, tuple[float, float]] = field(default_factory=dict)
    eta_hist: dict[int, float] | None = None
    eta_hist_sd: dict[int, float] | None = None
    state_scale: float = 1.0
    t_values: np.ndarray | None = None


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    r = len(x)
    m = float(np.mean(x))
    if r < 2:
        return m, 0.0
    return m, float(np.std(x, ddof=1) / np.sqrt(r))


def _var_se(x: np.ndarray) -> tuple[float, float]:
    """Sample variance and its large-sample standard error (via 4th moment)."""
    r = len(x)
    if r < 2:
        return 0.0, 0.0
    m = float(np.mean(x))
    d = x - m
    s2 = float(np.sum(d * d) / (r - 1))
    m4 = float(np.mean(d**4))
    return s2, float(np.sqrt(max(m4 - s2 * s2 * (r - 3) / (r - 1), 0.0) / r))


def monte_carlo_moments(
    spec: ProcessSpec,
    n: int,
    ell: int,
    replicates: int,
    seed: int,
    threads: int = 1,
    harmonic_shifts: tuple[float, ...] = (),
    collect_histogram: bool = False,
    keep_samples: bool = False,
    population_cap: int = DEFAULT_POPULATION_CAP,
) -> MonteCarloMoments:
    """Replicate the process and aggregate sample statistics.

    Each replicate r runs on Generator(Philox(SeedSequence((seed, r)))), so
    the result is a pure function of (spec, n, ell, replicates, seed) no
    matter how many threads carry the chunks.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    for y in harmonic_shifts:
        if spec.S0 + y <= 0:
            raise ValueError(f"harmonic shift {y} reaches zero at the initial size")

    def run_chunk(start: int, stop: int):
        width = stop - start
        t = np.empty(width)
        Mz = np.empty(width)
        Dz = np.empty(width)
        sizes = np.empty(width)
        mart = np.empty(width)
        harm = {y: np.empty(width) for y in harmonic_shifts}
        hist_sums: dict[int, list[float]] = {}
        for i in range(width):
            rep = start + i
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, rep))))
            final = simulate(spec, n, rng, population_cap)[-1]
            t[i] = float(np.mean(draw_sample(final, ell, rng)))
            Mz[i] = final.mean()
            Dz[i] = final.second_moment() - Mz[i] ** 2
            sizes[i] = final.size
            gamma_n = float(np.prod(1.0 / (1.0 + np.array(final.realized_lambdas))))
            mart[i] = gamma_n * final.size
            for y in harmonic_shifts:
                harm[y][i] = 1.0 / (final.size + y)
            if collect_histogram:
                for m, frac in final.histogram().items():
                    cell = hist_sums.setdefault(m, [0.0, 0.0])
                    cell[0] += frac
                    cell[1] += frac * frac
        return t, Mz, Dz, sizes, mart, harm, hist_sums

    bounds = [(s, min(s + _CHUNK, replicates)) for s in range(0, replicates, _CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda b: run_chunk(*b), bounds))
    else:
        results = [run_chunk(*b) for b in bounds]

    t = np.concatenate([r[0] for r in results])
    Mz = np.concatenate([r[1] for r in results])
    Dz = np.concatenate([r[2] for r in results])
    sizes = np.concatenate([r[3] for r in results])
    mart = np.concatenate([r[4] for r in results])
    harm_all = {
        y: np.concatenate([r[5][y] for r in results]) for y in harmonic_shifts
    }
    eta_hist = eta_hist_sd = None
    scale = _state_scale(spec.law)
    if collect_histogram:
        merged: dict[int, list[float]] = {}
        for r in results:
            for m, (s1, s2) in r[6].items():
                cell = merged.setdefault(m, [0.0, 0.0])
                cell[0] += s1
                cell[1] += s2
        R = replicates
        eta_hist = {m: s1 / R for m, (s1, _) in sorted(merged.items())}
        eta_hist_sd = {}
        for m, (s1, s2) in sorted(merged.items()):
            var = (s2 - s1 * s1 / R) / (R - 1) if R > 1 else 0.0
            eta_hist_sd[m] = float(np.sqrt(max(var, 0.0)))

    t_mean, t_se = _mean_se(t)
    t_var, t_var_se = _var_se(t)
    M_mean, M_se = _mean_se(Mz)
    M_var, M_var_se = _var_se(Mz)
    D_mean, D_se = _mean_se(Dz)
    size_mean, size_se = _mean_se(sizes)
    mart_mean, mart_se = _mean_se(mart)
    return MonteCarloMoments(
        replicates=replicates, n=n, ell=ell,
        t_mean=t_mean, t_se=t_se, t_var=t_var, t_var_se=t_var_se,
        M_mean=M_mean, M_se=M_se, M_var=M_var, M_var_se=M_var_se,
        D_mean=D_mean, D_se=D_se,
        size_mean=size_mean, size_se=size_se,
        martingale_mean=mart_mean, martingale_se=mart_se,
        harmonic={y: _mean_se(v) for y, v in harm_all.items()},
        eta_hist=eta_hist, eta_hist_sd=eta_hist_sd,
        state_scale=scale,
        t_values=t if keep_samples else None,
    )


def eta_star_distribution(
    seqs: DerivedSequences,
    law: MutationLaw,
    n: int,
    tail_tol: float = _PMF_TAIL,
) -> tuple[np.ndarray, np.ndarray]:
    """Limit law of a sampled state: sum over cycles of alpha_k-thinned increments.

    Returns (values, probs) on the increment lattice. The mean equals
    mu W_n up to the truncation tolerance.
    """
    if law.poisson:
        scale = 1.0
        if law.mu == 0.0:
            inc = np.array([1.0])
        else:
            k_max = int(stats.poisson.ppf(1.0 - tail_tol, law.mu)) + 1
            inc = stats.poisson.pmf(np.arange(k_max + 1), law.mu)
            inc = inc / inc.sum()
    else:
        scale, p_atom = law.two_point_support()
        inc = np.array([1.0 - p_atom, p_atom]) if p_atom > 0.0 else np.array([1.0])
    dist = np.array([1.0])
    for a in seqs.alpha[:n]:
        step = a * inc
        step[0] += 1.0 - a
        dist = np.convolve(dist, step)
    return np.arange(len(dist)) * scale, dist


def _single_tree_outcomes(lam: np.ndarray, c: int, n: int, memo: dict) -> dict:
    """Distribution of (leaves, sum of depths, sum of subtree sizes squared,
    sum of squared depths) for one particle alive at cycle c, run to cycle n."""
    if c == n:
        return {(1, 0, 0, 0): 1.0}
    if c in memo:
        return memo[c]
    base = _single_tree_outcomes(lam, c + 1, n, memo)
    L = lam[c]
    out: dict = {}
    for key, prob in base.items():
        out[key] = out.get(key, 0.0) + (1.0 - L) * prob
    for (s1, a1, b1, q1), p1 in base.items():
        for (s2, a2, b2, q2), p2 in base.items():
            key = (s1 + s2, a1 + a2 + s2, b1 + b2 + s2 * s2, q1 + q2 + 2 * a2 + s2)
            out[key] = out.get(key, 0.0) + L * p1 * p2
    memo[c] = out
    return out


def enumerate_tiny(
    sched: EfficiencySchedule,
    law: MutationLaw,
    S0: int,
    n: int,
    ell: int = 1,
) -> ExactMoments:
    """Exhaustive genealogy enumeration for S0 <= 2 and n <= 4.

    Conditional on a tree pattern, the increments on the edges are iid, so
    every moment is a polynomial in (mu, nu) with combinatorial coefficients
    read off the pattern. Independent of the dynamic program in the moments
    module, which it cross-checks.
    """
    if S0 not in (1, 2):
        raise ValueError("enumeration supports initial sizes 1 and 2")
    if not 0 <= n <= 4:
        raise ValueError("enumeration supports at most 4 cycles")
    if ell < 1:
        raise ValueError("sample size must be at least 1")
    lam = sched.prefix(n)
    single = _single_tree_outcomes(lam, 0, n, {})
    mu, nu = law.mu, law.nu
    mu2 = mu * mu

    if S0 == 1:
        patterns = single.items()
    else:
        collapsed: dict[tuple[int, int], list[float]] = {}
        for (s, a, b, q), p in single.items():
            cell = collapsed.setdefault((s, a), [0.0, 0.0, 0.0])
            cell[0] += p
            cell[1] += p * b
            cell[2] += p * q
        pats: dict = {}
        for (s1, a1), (p1, pb1, pq1) in collapsed.items():
            for (s2, a2), (p2, pb2, pq2) in collapsed.items():
                s, a = s1 + s2, a1 + a2
                # E[b_tot 1] and E[q_tot 1] over the product law
                pb = pb1 * p2 + p1 * pb2
                pq = pq1 * p2 + p1 * pq2
                cell = pats.setdefault((s, a), [0.0, 0.0, 0.0])
                cell[0] += p1 * p2
                cell[1] += pb
                cell[2] += pq
        patterns = [((s, a, None, None), tuple(cell)) for (s, a), cell in pats.items()]

    max_size = S0 * 2**n
    sizes = np.arange(S0, max_size + 1)
    width = len(sizes)
    p_v = np.zeros(width)
    m1_v = np.zeros(width)
    m2_v = np.zeros(width)
    q_v = np.zeros(width)
    for key, payload in patterns:
        s, a = key[0], key[1]
        idx = s - S0
        if S0 == 1:
            prob = payload
            eb, eq = prob * key[2], prob * key[3]
        else:
            prob, eb, eq = payload
        p_v[idx] += prob
        m1_v[idx] += mu * a * prob / s
        m2_v[idx] += (nu * eb + mu2 * a * a * prob) / (s * s)
        q_v[idx] += (nu * a * prob + mu2 * eq) / s

    M_eta = float(m1_v.sum())
    EM2 = float(m2_v.sum())
    M2_eta = float(q_v.sum())
    Rn = EM2 - M_eta**2
    D_eta = M2_eta - M_eta**2
    Vt = D_eta / ell + (1.0 - 1.0 / ell) * Rn
    return ExactMoments(
        n=n, S0=S0, ell=ell, Et=M_eta, Vt=Vt, Rn=Rn,
        M_eta=M_eta, M2_eta=M2_eta, D_eta=D_eta, D_zeta_mean=M2_eta - EM2,
        sizes=sizes, p=p_v, m1=m1_v, m2=m2_v, q=q_v,
    )


@dataclass(frozen=True)
class GeneralPopulation:
    """Snapshot of the general offspring-number model."""

    gen: int
    size: int
    states: dict[float, int]

    def mean(self) -> float:
        return sum(v * c for v, c in self.states.items()) / self.size


def _check_general_inputs(arity_pmfs, child_means, n):
    if len(arity_pmfs) < n or len(child_means) < n:
        raise ValueError("need per-cycle arity laws and child means for n cycles")
    for c in range(n):
        pmf = arity_pmfs[c]
        if abs(sum(pmf.values()) - 1.0) > 1e-9:
            raise ValueError(f"arity law at cycle {c + 1} does not sum to 1")
        for j, prob in pmf.items():
            if j < 1 or prob < 0.0:
                raise ValueError("arities must be >= 1 with nonnegative probabilities")
            if prob > 0.0 and len(child_means[c][j]) != j:
                raise ValueError(f"cycle {c + 1}: arity {j} needs {j} child means")


def simulate_general(
    arity_pmfs: list[dict[int, float]],
    child_means: list[dict[int, tuple[float, ...]]],
    S0: int,
    n: int,
    rng: np.random.Generator,
    population_cap: int = DEFAULT_POPULATION_CAP,
) -> list[GeneralPopulation]:
    """General model: each particle is replaced by L children (L >= 1 random),
    child c of an arity-j family shifting by the deterministic mean
    child_means[cycle][j][c]. Increment randomness is suppressed; only the
    arities are drawn, which is all the first-moment checks need.
    """
    if S0 < 1:
        raise ValueError("initial population must be at least 1")
    _check_general_inputs(arity_pmfs, child_means, n)
    table: dict[float, int] = {0.0: S0}
    traj = [GeneralPopulation(0, S0, dict(table))]
    for c in range(n):
        arities = sorted(arity_pmfs[c])
        probs = np.array([arity_pmfs[c][j] for j in arities])
        new: dict[float, int] = {}
        for state in sorted(table):
            count = table[state]
            fam = rng.multinomial(count, probs)
            for j, n_fam in zip(arities, fam):
                if n_fam == 0:
                    continue
                for shift in child_means[c][j]:
                    key = state + shift
                    new[key] = new.get(key, 0) + int(n_fam)
        table = new
        size = sum(table.values())
        if size > population_cap:
            raise PopulationCapExceeded(traj, c + 1, size)  # type: ignore[arg-type]
        traj.append(GeneralPopulation(c + 1, size, dict(table)))
    return traj


def theorem_j_mean(
    arity_pmfs: list[dict[int, float]],
    child_means: list[dict[int, tuple[float, ...]]],
    n: int,
) -> float:
    """Limit mean of a sampled state in the general model.

    Each cycle contributes sum_j P(L=j) (total mean increment of an arity-j
    family) / E(L). The two-child special case recovers mu alpha_k per cycle.
    """
    _check_general_inputs(arity_pmfs, child_means, n)
    total = 0.0
    for c in range(n):
        pmf = arity_pmfs[c]
        mean_L = sum(j * p for j, p in pmf.items())
        total += sum(
            p * sum(child_means[c][j]) for j, p in pmf.items() if p > 0.0
        ) / mean_L
    return total
