"""q-species reactions with block diffusion and the pairing linearization.

Species are partitioned into blocks sharing one generator.  Within a block,
consumed species (stoichiometric difference beta - alpha < 0) are paired
onto produced ones by an onto mapping; each produced species i together
with its preimage forms a small linear sub-block whose coefficient matrix
has the signed structure that preserves positivity and a weighted
conservation law.  Sweeping these matrix cornerstone problems with the
nonlinearity frozen at the previous iterate extends the two-by-two scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cornerstone import ConvergenceError, cumulative_trapezoid, semigroup_flow
from .fields import Field, TimeGrid
from .generators import Generator, dirichlet_form, estimate_lsi_constant
from .measure import exp_moment
from .orlicz import YoungExp, gauge_norm

__all__ = [
    "ReactionSpec",
    "NuMapping",
    "BlockPairing",
    "GeneralReport",
    "build_nu_mapping",
    "solve_matrix_cornerstone",
    "general_decoupled_step",
    "general_iterate",
    "general_conservation_residual",
    "theta_and_membership",
]

# stopping-functional weight for the energy term; any positive value gives
# an equivalent convergence criterion (no closed-form ratio exists here)
SIGMA_KAPPA = 0.75


@dataclass(frozen=True)
class ReactionSpec:
    """Stoichiometry, rates, block partition and per-block generators.

    alpha_i != beta_i for every species (no catalysts) and every block must
    contain both consumed and produced species.  All block generators share
    one measure space.
    """

    alpha: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    partition: tuple
    generators: tuple

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=int)
        b = np.asarray(self.beta, dtype=int)
        lam = np.asarray(self.lam, dtype=float)
        part = tuple(int(k) for k in self.partition)
        q = a.size
        if q < 2:
            raise ValueError("need at least two species")
        if not (b.size == lam.size == len(part) == q):
            raise ValueError("alpha, beta, lam and partition must share length q")
        if np.any(a < 0) or np.any(b < 0):
            raise ValueError("stoichiometric coefficients must be nonnegative integers")
        if np.any(a == b):
            raise ValueError("alpha_i = beta_i is a catalyst, which is not supported")
        if np.any(lam <= 0.0):
            raise ValueError("reaction rates must be positive")
        n_blocks = max(part) + 1
        if sorted(set(part)) != list(range(n_blocks)):
            raise ValueError("partition must use contiguous block ids 0..K-1")
        if len(self.generators) != n_blocks:
            raise ValueError(f"expected {n_blocks} block generators")
        space = self.generators[0].space
        for gen in self.generators[1:]:
            if gen.space != space:
                raise ValueError("all block generators must share one measure space")
        for k in range(n_blocks):
            members = [i for i in range(q) if part[i] == k]
            signs = b[members] - a[members]
            if not (np.any(signs < 0) and np.any(signs > 0)):
                raise ValueError(
                    f"block {k} must contain both consumed and produced species"
                )
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "partition", part)
        object.__setattr__(self, "generators", tuple(self.generators))

    @classmethod
    def from_scaled(cls, base: Generator, alpha, beta, lam, partition, block_scales):
        gens = tuple(base.scaled(c) for c in block_scales)
        return cls(alpha, beta, lam, tuple(partition), gens)

    @property
    def q(self) -> int:
        return self.alpha.size

    @property
    def space(self):
        return self.generators[0].space

    @property
    def delta(self) -> np.ndarray:
        return self.lam * np.abs(self.beta - self.alpha)

    @property
    def theta(self) -> int:
        return int(max(self.alpha.sum(), self.beta.sum()) - 1)

    def generator_for(self, i: int) -> Generator:
        return self.generators[self.partition[i]]

    def block_members(self, k: int) -> list:
        return [i for i in range(self.q) if self.partition[i] == k]

    @property
    def n_blocks(self) -> int:
        return len(self.generators)


@dataclass(frozen=True)
class BlockPairing:
    """Pairing data of one block.

    source_side is 'minus' when consumed species are at least as numerous as
    produced ones (the canonical orientation); otherwise the roles of the
    stoichiometric sides are swapped symmetrically.
    """

    block: int
    source_side: str
    nu: dict  # source species -> target species
    preimages: dict  # target species -> tuple of sources
    z: dict  # target species -> sum of source deltas


@dataclass(frozen=True)
class NuMapping:
    blocks: tuple  # one BlockPairing per block


def build_nu_mapping(spec: ReactionSpec) -> NuMapping:
    """Pair sources onto targets by label congruence within each block.

    Species on each side are enumerated by ascending index; source number l
    maps to target number m exactly when l - m is a multiple of the target
    count, which makes the map onto with balanced preimage sizes.
    """
    out = []
    for k in range(spec.n_blocks):
        members = spec.block_members(k)
        signs = spec.beta[members] - spec.alpha[members]
        minus = [i for i, s in zip(members, signs) if s < 0]
        plus = [i for i, s in zip(members, signs) if s > 0]
        if not minus or not plus:
            raise ValueError(f"block {k} lacks a consumed or produced species")
        if len(minus) >= len(plus):
            sources, targets, side = minus, plus, "minus"
        else:
            sources, targets, side = plus, minus, "plus"
        nu = {s: targets[l % len(targets)] for l, s in enumerate(sources)}
        preimages = {t: tuple(s for s in sources if nu[s] == t) for t in targets}
        delta = spec.delta
        z = {t: float(sum(delta[s] for s in preimages[t])) for t in targets}
        out.append(
            BlockPairing(block=k, source_side=side, nu=nu, preimages=preimages, z=z)
        )
    return NuMapping(blocks=tuple(out))


def _rk4_linear(v, a_mat, b, h, clamp):
    """One RK4 step of v' = A v (+ b), A frozen; preserves linear invariants."""

    def rhs(w):
        w_eff = np.maximum(w, 0.0) if clamp else w
        out = np.einsum("rcx,cx->rx", a_mat, w_eff)
        if b is not None:
            out = out + b
        return out

    k1 = rhs(v)
    k2 = rhs(v + 0.5 * h * k1)
    k3 = rhs(v + 0.5 * h * k2)
    k4 = rhs(v + h * k3)
    return v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def solve_matrix_cornerstone(
    gen: Generator,
    a_values: np.ndarray,
    b_values: np.ndarray | None,
    f_vec: np.ndarray,
    grid: TimeGrid,
    plus_variant: bool = False,
) -> np.ndarray:
    """Vector Cauchy problem d_t u = L u + A(t) u + B(t) by Strang splitting.

    a_values has shape (steps+1, m, m, N): a frozen m x m coupling matrix
    per node and state; b_values is (steps+1, m, N) or None.  The reaction
    substep takes one RK4 step of the frozen linear system (exact linear
    invariants, error far below the splitting error); with plus_variant the
    coupling acts on the positive part of the unknown.  Returns an array of
    shape (steps+1, m, N).
    """
    m = f_vec.shape[0]
    n_nodes = grid.steps + 1
    if a_values.shape != (n_nodes, m, m, gen.n):
        raise ValueError(f"coupling array has shape {a_values.shape}")
    half = 0.5 * grid.dt
    step_matrix = gen.transition_matrix(grid.dt)
    out = np.empty((n_nodes, m, gen.n))
    v = f_vec.astype(float).copy()
    out[0] = v
    for k in range(grid.steps):
        b_l = b_values[k] if b_values is not None else None
        b_r = b_values[k + 1] if b_values is not None else None
        v = _rk4_linear(v, a_values[k], b_l, half, plus_variant)
        v = v @ step_matrix.T
        v = _rk4_linear(v, a_values[k + 1], b_r, half, plus_variant)
        out[k + 1] = v
    return out


def _frozen_products(spec, u_prev_vals, exps, species):
    """prod_j (u_prev_j)^{exps_j - [j == species]} per node and state, 0^0 = 1."""
    n_nodes, n = u_prev_vals.shape[1], u_prev_vals.shape[2]
    out = np.ones((n_nodes, n))
    for j in range(spec.q):
        e = exps[j] - (1 if j == species else 0)
        if e > 0:
            out = out * u_prev_vals[j] ** e
    return out


def general_decoupled_step(
    spec: ReactionSpec,
    nu: NuMapping,
    u_prev: list,
    grid: TimeGrid,
) -> list:
    """One sweep: solve the paired matrix cornerstone problem per target.

    The diagonal coefficients are the source-side frozen products, the last
    column couples each source to its target through the target's frozen
    product, and the target equation averages its sources with weights
    delta_r / Z.  Working with the rescaled target variable u_i / delta_i
    gives exactly that signed matrix structure.
    """
    delta = spec.delta
    u_prev_vals = np.stack([f.values for f in u_prev])
    n_nodes = grid.steps + 1
    out_vals = [None] * spec.q
    for pairing in nu.blocks:
        gen = spec.generators[pairing.block]
        if pairing.source_side == "minus":
            diag_exps, couple_exps = spec.alpha, spec.beta
        else:
            diag_exps, couple_exps = spec.beta, spec.alpha
        for target, sources in pairing.preimages.items():
            m = len(sources) + 1
            z = pairing.z[target]
            a_diag = [
                delta[r] * _frozen_products(spec, u_prev_vals, diag_exps, r)
                for r in sources
            ]
            a_couple = delta[target] * _frozen_products(
                spec, u_prev_vals, couple_exps, target
            )
            a_values = np.zeros((n_nodes, m, m, gen.n))
            for idx, r in enumerate(sources):
                a_values[:, idx, idx, :] = -a_diag[idx]
                a_values[:, idx, m - 1, :] = delta[r] * a_couple
                a_values[:, m - 1, idx, :] = a_diag[idx] / z
            a_values[:, m - 1, m - 1, :] = -a_couple
            # every iterate starts at the shared initial datum
            f_block = np.stack(
                [u_prev_vals[r, 0] for r in sources]
                + [u_prev_vals[target, 0] / delta[target]]
            )
            sol = solve_matrix_cornerstone(gen, a_values, None, f_block, grid)
            for idx, r in enumerate(sources):
                out_vals[r] = sol[:, idx, :]
            out_vals[target] = delta[target] * sol[:, m - 1, :]
    return [Field(grid, spec.space, vals) for vals in out_vals]


@dataclass
class GeneralReport:
    """Convergence record of a general_iterate run."""

    sigma: list = field(default_factory=list)
    measured_ratios: list = field(default_factory=list)
    kappa: float = SIGMA_KAPPA
    theta: int = -1
    conservation_residual: float = math.nan
    positivity_min: float = math.nan
    n_converged: int = -1
    converged: bool = False


def _sigma_general(spec, u_n, u_prev, dt):
    mu = spec.space.weights
    diff = np.stack([a.values - b.values for a, b in zip(u_n, u_prev)])
    l2 = ((diff**2) @ mu).sum(axis=0)
    energy = np.array(
        [
            sum(
                dirichlet_form(spec.generator_for(i), diff[i, k])
                for i in range(spec.q)
            )
            for k in range(diff.shape[1])
        ]
    )
    return l2 + 2.0 * SIGMA_KAPPA * cumulative_trapezoid(energy, dt)


def general_iterate(
    spec: ReactionSpec,
    f: list,
    grid: TimeGrid,
    max_n: int = 30,
    tol: float = 1e-10,
) -> tuple:
    """Run the paired linearization from heat flows until Sigma collapses.

    No closed-form contraction ratio exists for general stoichiometry; the
    report records the measured Sigma ratios instead.
    """
    space = spec.space
    f_arrs = []
    for fi in f:
        arr = space.check_function(fi)
        if arr.min() < 0.0:
            raise ValueError("initial data must be componentwise nonnegative")
        f_arrs.append(arr.copy())

    nu = build_nu_mapping(spec)
    u_prev = [
        semigroup_flow(spec.generator_for(i), 1.0, grid, f_arrs[i])
        for i in range(spec.q)
    ]
    report = GeneralReport(theta=spec.theta)
    pos_min = min(ui.min() for ui in u_prev)

    u = u_prev
    for n in range(1, max_n + 1):
        u = general_decoupled_step(spec, nu, u_prev, grid)
        pos_min = min(pos_min, min(ui.min() for ui in u))
        sup_sigma = float(_sigma_general(spec, u, u_prev, grid.dt).max())
        if report.sigma:
            prev = report.sigma[-1]
            report.measured_ratios.append(sup_sigma / prev if prev > 0 else 0.0)
        report.sigma.append(sup_sigma)
        u_prev = u
        if sup_sigma < tol:
            report.converged = True
            report.n_converged = n
            break
    report.positivity_min = pos_min
    report.conservation_residual = general_conservation_residual(u, spec, nu, f_arrs)
    if not report.converged:
        report.n_converged = max_n
        raise ConvergenceError(
            f"general iteration did not reach tol={tol:g} within {max_n} sweeps "
            f"(last sup Sigma = {report.sigma[-1]:.3e})",
            gap=report.sigma[-1],
            report=report,
        )
    return u, report


def general_conservation_residual(
    u: list, spec: ReactionSpec, nu: NuMapping, f: list | None = None
) -> float:
    """sup defect of the per-pairing identity sum_r u_r + (Z/delta_i) u_i = heat flow.

    Each target i and its sources conserve the delta-weighted sum, which
    evolves by the pure block semigroup applied to the initial combination.
    """
    if f is None:
        f = [ui.values[0] for ui in u]
    delta = spec.delta
    grid = u[0].grid
    worst = 0.0
    for pairing in nu.blocks:
        gen = spec.generators[pairing.block]
        for target, sources in pairing.preimages.items():
            weight = pairing.z[target] / delta[target]
            combo = sum(u[r].values for r in sources) + weight * u[target].values
            combo0 = sum(f[r] for r in sources) + weight * f[target]
            ref = semigroup_flow(gen, 1.0, grid, combo0)
            worst = max(worst, float(np.abs(combo - ref.values).max()))
    return worst


def theta_and_membership(spec: ReactionSpec, f: list, gammas=(0.5, 1.0, 2.0)) -> tuple:
    """Integrability exponent theta and the moment/product evidence table.

    theta = max(sum alpha, sum beta) - 1.  The table holds the exponential
    moments mu(e^{gamma f_i^{2 theta}}) over the gamma ladder and, per
    species i with alpha_i >= 1, the gauge norm of the frozen product
    prod_j f_j^{alpha_j - [j=i]} under Phi_{2 theta / m} (m = number of
    factors) against the product of the factors' Phi_{2 theta} norms, the
    multilinear bound behind the sweep's coefficient regularity.
    """
    space = spec.space
    f_arrs = [space.check_function(fi) for fi in f]
    for arr in f_arrs:
        if arr.min() < 0.0:
            raise ValueError("initial data must be componentwise nonnegative")
    theta = spec.theta
    phi_2theta = YoungExp(2.0 * theta)
    norms = [gauge_norm(space, fi, phi_2theta) for fi in f_arrs]

    moments = {
        i: {g: exp_moment(space, f_arrs[i], g, 2.0 * theta) for g in gammas}
        for i in range(spec.q)
    }
    products = []
    for i in range(spec.q):
        if spec.alpha[i] < 1:
            continue
        exps = spec.alpha.copy()
        exps[i] -= 1
        m_factors = int(exps.sum())
        if m_factors == 0:
            continue
        prod = np.ones(space.n)
        bound = 1.0
        for j in range(spec.q):
            if exps[j] > 0:
                prod = prod * f_arrs[j] ** exps[j]
                bound *= norms[j] ** exps[j]
        r = theta / m_factors
        measured = gauge_norm(space, prod, YoungExp(2.0 * r))
        products.append(
            {
                "species": i,
                "factors": m_factors,
                "young_exponent": 2.0 * r,
                "bound": bound,
                "measured": measured,
                "phi2_norm": gauge_norm(space, prod, YoungExp(2.0)),
            }
        )
    return theta, {"moments": moments, "products": products}
