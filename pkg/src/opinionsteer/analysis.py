"""Stability, equilibrium, layered-structure, and containment analysis.

The core facts this module computes and certifies:

* the regular-to-regular matrix A of a reachable system has spectral radius
  below 1, so the shifted matrix A - I is Hurwitz and the dynamics admit a
  unique equilibrium;
* the steady-state matrix C (solving (A - I) C = -B) is row-stochastic and
  nonnegative, so every equilibrium opinion is a convex combination of the
  constant input's entries;
* permuting the regular agents into layers block-triangularizes A when the
  influence structure respects the layer order, and zeroing the diagonal
  blocks (strict layering) makes it nilpotent: the network freezes in as
  many steps as there are layers.

Spectral radii are computed by power iteration on the nonnegative matrix
(with a +I shift to kill periodicity, and an exact short-circuit for
nilpotent matrices); a dense eigensolve is available as an alternative
backend for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .dynamics import SystemMatrices
from .errors import NoUniqueEquilibriumError, ScenarioError
from .graph import EdgeSet, LayerPartition, LayerSelectors, build_selection_matrices, infer_layering, validate_layering

__all__ = [
    "EquilibriumResult",
    "LayeredSystem",
    "ConvergenceCertificate",
    "ContainmentReport",
    "AnalysisReport",
    "spectral_radius",
    "check_hurwitz",
    "steady_state_matrix",
    "equilibrium",
    "solve_equilibrium",
    "transform_to_layers",
    "layered_step",
    "run_layered",
    "convergence_certificate",
    "containment_check",
    "analyze_system",
]

# relative stopping tolerance / iteration cap for the power-iteration backend
POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000
# condition-number ceiling beyond which the steady-state solve is refused
COND_LIMIT = 1e12


def spectral_radius(matrix: np.ndarray, method: str = "power") -> float:
    """Largest eigenvalue magnitude of a square nonnegative matrix.

    method="power" (default) runs power iteration on the shifted matrix
    M + I, whose positive diagonal removes periodicity; the radius is the
    limit of the shifted iteration minus 1.  A preliminary probe multiplies
    the all-ones vector through M: for a nonnegative matrix, annihilating a
    positive vector proves nilpotency, so the radius is returned as exactly
    0.  method="eig" uses a dense eigensolve instead.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ScenarioError(f"spectral radius needs a square matrix, got shape {m.shape}")
    if m.size == 0 or not m.any():
        return 0.0
    if m.min() < 0.0:
        raise ScenarioError("spectral radius backend expects a nonnegative matrix")
    if method == "eig":
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    if method != "power":
        raise ScenarioError(f"unknown spectral radius method {method!r}")

    dim = m.shape[0]
    probe = np.ones(dim)
    for _ in range(dim):
        probe = m @ probe
        if not probe.any():
            # no cancellation is possible with nonnegative entries, so an
            # exact zero image of a positive vector certifies nilpotency
            return 0.0
        peak = probe.max()
        if peak > 1e12:
            break
        probe /= peak

    vec = np.full(dim, 1.0 / dim)
    estimate = 0.0
    for _ in range(POWER_MAX_ITER):
        image = vec + m @ vec
        norm = image.sum()
        vec = image / norm
        if abs(norm - estimate) <= POWER_TOL * norm:
            estimate = norm
            break
        estimate = norm
    return max(estimate - 1.0, 0.0)


def check_hurwitz(regular_matrix: np.ndarray) -> tuple[bool, np.ndarray]:
    """Whether the shifted matrix A - I has all eigenvalues in the open left half-plane.

    For nonnegative A this is equivalent to spectral_radius(A) < 1.  Returns
    the decision together with the shifted matrix.
    """
    a = np.asarray(regular_matrix, dtype=float)
    shifted = a - np.eye(a.shape[0])
    return spectral_radius(a) < 1.0, shifted


def steady_state_matrix(regular_matrix: np.ndarray, input_matrix: np.ndarray) -> np.ndarray:
    """Steady-state map C from the constant input to the equilibrium state.

    Solves (A - I) C = -B column-by-column (no explicit inversion).  Raises
    NoUniqueEquilibriumError when the solve is singular or the condition
    number exceeds COND_LIMIT, which happens exactly when some regular agent
    is cut off from the stubborn set.
    """
    a = np.asarray(regular_matrix, dtype=float)
    b = np.asarray(input_matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
        raise ScenarioError(f"incompatible shapes: A {a.shape}, B {b.shape}")
    shifted = a - np.eye(a.shape[0])
    condition = np.linalg.cond(shifted)
    if not np.isfinite(condition) or condition > COND_LIMIT:
        raise NoUniqueEquilibriumError(
            f"steady-state solve is ill-conditioned (cond ~ {condition:.3g}); "
            "no unique equilibrium — check stubborn reachability"
        )
    return np.linalg.solve(shifted, -b)


def equilibrium(steady_state: np.ndarray, constant_input: np.ndarray) -> np.ndarray:
    """Equilibrium state x* = C u, applied per subject block."""
    c = np.asarray(steady_state, dtype=float)
    u = np.asarray(constant_input, dtype=float)
    total = c.shape[1]
    if u.ndim != 1 or u.size % total != 0:
        raise ScenarioError(f"input length {u.size} does not split over {total} agents")
    blocks = u.reshape(-1, total)
    return (blocks @ c.T).ravel()


@dataclass(frozen=True)
class EquilibriumResult:
    """Steady-state matrix, predicted equilibrium, and the stability facts behind them."""

    steady_state: np.ndarray
    x_star: np.ndarray
    spectral_radius: float
    hurwitz: bool

    @property
    def row_sum_error_max(self) -> float:
        return float(np.abs(self.steady_state.sum(axis=1) - 1.0).max())

    @property
    def min_entry(self) -> float:
        return float(self.steady_state.min())


def solve_equilibrium(mats: SystemMatrices, constant_input: np.ndarray) -> EquilibriumResult:
    """Spectral radius, Hurwitz check, steady-state matrix, and equilibrium in one call."""
    radius = spectral_radius(mats.A)
    hurwitz = radius < 1.0
    c = steady_state_matrix(mats.A, mats.B)
    return EquilibriumResult(c, equilibrium(c, constant_input), radius, hurwitz)


@dataclass(frozen=True)
class LayeredSystem:
    """The update matrices conjugated into layer order, plus the permuted input.

    ``regular`` is the permuted regular-to-regular matrix (block lower
    triangular under weak layering), ``stubborn`` the permuted stubborn
    influence (nonzero only in the first layer's rows for the canonical
    layered community), and ``bias`` the permuted bias vector.  ``u_perm``
    is the constant input with its regular-initials block permuted to layer
    order; the stubborn block is untouched.
    """

    selectors: LayerSelectors
    regular: np.ndarray
    stubborn: np.ndarray
    bias: np.ndarray
    u_perm: np.ndarray

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return self.selectors.layer_sizes

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def num_regular(self) -> int:
        return self.regular.shape[0]

    @property
    def num_stubborn(self) -> int:
        return self.stubborn.shape[1]

    @property
    def num_subjects(self) -> int:
        return self.u_perm.size // (self.num_regular + self.num_stubborn)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.layer_sizes)]))

    def block(self, p: int, q: int) -> np.ndarray:
        """Regular-to-regular block from layer q into layer p (1-based)."""
        o = self.offsets
        return self.regular[o[p - 1]:o[p], o[q - 1]:o[q]]

    def stubborn_block(self, p: int) -> np.ndarray:
        o = self.offsets
        return self.stubborn[o[p - 1]:o[p], :]

    def bias_block(self, p: int) -> np.ndarray:
        o = self.offsets
        return self.bias[o[p - 1]:o[p]]

    def stubborn_input(self) -> np.ndarray:
        """Subject-major stubborn slice of the permuted input."""
        blocks = self.u_perm.reshape(self.num_subjects, -1)
        return blocks[:, : self.num_stubborn].ravel()

    def initial_layer_states(self) -> list[np.ndarray]:
        """Per-layer initial opinions (subject-major), read off the permuted input."""
        blocks = self.u_perm.reshape(self.num_subjects, -1)[:, self.num_stubborn:]
        o = self.offsets
        return [blocks[:, o[l]:o[l + 1]].ravel() for l in range(self.num_layers)]

    def split_layers(self, state: np.ndarray) -> list[np.ndarray]:
        """Split a permuted whole-network state into per-layer state vectors."""
        blocks = np.asarray(state, dtype=float).reshape(self.num_subjects, self.num_regular)
        o = self.offsets
        return [blocks[:, o[l]:o[l + 1]].ravel() for l in range(self.num_layers)]

    def join_layers(self, states: Sequence[np.ndarray]) -> np.ndarray:
        """Inverse of :meth:`split_layers`."""
        n = self.num_subjects
        blocks = [np.asarray(s, dtype=float).reshape(n, -1) for s in states]
        return np.hstack(blocks).ravel()

    def permute_state(self, state: np.ndarray) -> np.ndarray:
        """Map an id-ordered state into layer order."""
        blocks = np.asarray(state, dtype=float).reshape(-1, self.num_regular)
        return (blocks @ self.selectors.regular.T).ravel()

    def unpermute_state(self, state: np.ndarray) -> np.ndarray:
        """Map a layer-ordered state back to id order."""
        blocks = np.asarray(state, dtype=float).reshape(-1, self.num_regular)
        return (blocks @ self.selectors.regular).ravel()


def transform_to_layers(mats: SystemMatrices, selectors: LayerSelectors, constant_input: np.ndarray) -> LayeredSystem:
    """Conjugate the system matrices by the layer permutation.

    The permuted dynamics reproduce the original trajectory exactly (the
    permutation is orthogonal); under weak layering the permuted regular
    matrix is block lower triangular.
    """
    perm = selectors.regular
    nr = mats.num_regular
    ns = mats.num_stubborn
    if perm.shape != (nr, nr):
        raise ScenarioError(f"selector permutation {perm.shape} does not match {nr} regular agents")
    u = np.asarray(constant_input, dtype=float)
    if u.ndim != 1 or u.size % (nr + ns) != 0:
        raise ScenarioError(f"input length {u.size} does not split over {nr + ns} agents")
    regular = perm @ mats.A @ perm.T
    stubborn = perm @ mats.stubborn
    bias = perm @ mats.bias
    blocks = u.reshape(-1, nr + ns)
    u_perm = np.hstack([blocks[:, :ns], blocks[:, ns:] @ perm.T]).ravel()
    return LayeredSystem(selectors, regular, stubborn, bias, u_perm)


def layered_step(
    states: Sequence[np.ndarray],
    system: LayeredSystem,
    initial_states: Sequence[np.ndarray] | None = None,
    stubborn_input: np.ndarray | None = None,
    mode: str = "weak",
) -> list[np.ndarray]:
    """One step of the by-layer recursion.

    Layer l's next state mixes the current states of layers 1..l (weak mode)
    or 1..l-1 (strict mode, where the diagonal blocks are zero), plus its own
    initial opinions through the bias and any direct stubborn influence.  The
    stubborn term is applied to every layer; for the canonical layered
    community only layer 1 has nonzero stubborn rows, recovering the
    simplified recursion exactly.
    """
    if mode not in ("weak", "strict"):
        raise ScenarioError(f"unknown layered mode {mode!r}")
    if initial_states is None:
        initial_states = system.initial_layer_states()
    if stubborn_input is None:
        stubborn_input = system.stubborn_input()
    n = system.num_subjects
    stub_blocks = np.asarray(stubborn_input, dtype=float).reshape(n, system.num_stubborn)
    current = [np.asarray(s, dtype=float).reshape(n, -1) for s in states]
    anchors = [np.asarray(s, dtype=float).reshape(n, -1) for s in initial_states]
    if len(current) != system.num_layers or len(anchors) != system.num_layers:
        raise ScenarioError(f"expected {system.num_layers} per-layer states")
    out: list[np.ndarray] = []
    for l in range(1, system.num_layers + 1):
        upto = l if mode == "weak" else l - 1
        nxt = anchors[l - 1] * system.bias_block(l) + stub_blocks @ system.stubborn_block(l).T
        for h in range(1, upto + 1):
            nxt = nxt + current[h - 1] @ system.block(l, h).T
        out.append(nxt.ravel())
    return out


def run_layered(system: LayeredSystem, steps: int, mode: str = "weak") -> list[np.ndarray]:
    """Iterate the by-layer recursion from the initial opinions; returns permuted full states."""
    states = system.initial_layer_states()
    trajectory = [system.join_layers(states)]
    for _ in range(steps):
        states = layered_step(states, system, mode=mode)
        trajectory.append(system.join_layers(states))
    return trajectory


@dataclass(frozen=True)
class ConvergenceCertificate:
    """Either a finite step count (strict layering) or an asymptotic bound."""

    mode: str  # "finite" | "asymptotic"
    steps: int | None
    spectral_radius: float
    layer_fixed_at: tuple[int, ...] | None = None

    def to_dict(self) -> dict:
        return {"mode": self.mode, "steps": self.steps}


def convergence_certificate(system: LayeredSystem, mode: str, tol: float = 1e-12) -> ConvergenceCertificate:
    """Certify how fast the layered dynamics settle.

    In strict mode the diagonal blocks must be zero; the certificate then
    simulates the recursion and verifies that layer l stops moving after l
    steps, returning the layer count as the exact convergence time.  In weak
    mode the certificate is asymptotic, backed by the spectral radius of the
    permuted regular matrix.
    """
    radius = spectral_radius(system.regular)
    if mode != "strict":
        return ConvergenceCertificate("asymptotic", None, radius)
    num_layers = system.num_layers
    for l in range(1, num_layers + 1):
        if system.block(l, l).any():
            raise ScenarioError(f"strict certificate requires zero diagonal blocks; layer {l} has self-influence")
    horizon = num_layers + 2
    states = system.initial_layer_states()
    per_layer: list[list[np.ndarray]] = [[s.copy()] for s in states]
    for _ in range(horizon):
        states = layered_step(states, system, mode="strict")
        for l, s in enumerate(states):
            per_layer[l].append(s.copy())
    fixed_at = []
    for l in range(num_layers):
        seq = per_layer[l]
        k = horizon
        while k > 0 and np.abs(seq[k - 1] - seq[horizon]).max() <= tol:
            k -= 1
        fixed_at.append(k)
        if k > l + 1:
            raise ScenarioError(f"layer {l + 1} still moving after {l + 1} steps; layering is not strict")
    return ConvergenceCertificate("finite", num_layers, radius, tuple(fixed_at))


def _inside_polygon(point: np.ndarray, hull_points: np.ndarray, slack: float) -> bool:
    # counterclockwise vertex walk; the point is inside iff it sits on the
    # left of (or within slack of) every directed edge
    hull = ConvexHull(hull_points)
    vertices = hull_points[hull.vertices]
    for a, b in zip(vertices, np.roll(vertices, -1, axis=0)):
        edge = b - a
        if edge[0] * (point[1] - a[1]) - edge[1] * (point[0] - a[0]) < -slack:
            return False
    return True


def _convex_weights_feasible(point: np.ndarray, generators: np.ndarray, slack: float) -> bool:
    # nonnegative weights, summing to 1, reproducing the point
    count = generators.shape[0]
    a_eq = np.vstack([generators.T, np.ones(count)])
    b_eq = np.concatenate([point, [1.0]])
    result = linprog(np.zeros(count), A_eq=a_eq, b_eq=b_eq, bounds=[(0.0, None)] * count, method="highs")
    if not result.success:
        return False
    residual = np.abs(a_eq @ result.x - b_eq).max()
    return bool(residual <= max(slack, 1e-9))


def point_in_convex_hull(point: np.ndarray, generators: np.ndarray, slack: float = 1e-9) -> bool:
    """Is ``point`` a convex combination of the generator points (within slack)?

    Two-dimensional, full-dimensional hulls use orientation tests against the
    hull polygon; every other case falls back to a small feasibility program
    over convex weights.
    """
    point = np.asarray(point, dtype=float)
    generators = np.asarray(generators, dtype=float)
    if point.ndim != 1 or generators.ndim != 2 or generators.shape[1] != point.size:
        raise ScenarioError(f"hull test shapes disagree: point {point.shape}, generators {generators.shape}")
    if point.size == 2 and generators.shape[0] >= 3:
        try:
            return _inside_polygon(point, generators, slack)
        except QhullError:
            pass  # degenerate (collinear) hull
    return _convex_weights_feasible(point, generators, slack)


@dataclass(frozen=True)
class ContainmentReport:
    """Per-agent verdicts on equilibrium containment.

    Every equilibrium opinion is checked to be a convex combination of the
    constant input's entries, certified by the matching row of the
    steady-state matrix.  When every bias is zero the initial opinions drop
    out of the input's reach, and membership in the convex hull of the
    stubborn opinions is checked as well.
    """

    certificate_ok: tuple[bool, ...]
    certificate_residual: tuple[float, ...]
    hull_checked: bool
    in_hull: tuple[bool, ...] | None
    violations: tuple[int, ...]  # row indices of failing regular agents

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"checked": True, "hull_checked": self.hull_checked, "violations": list(self.violations)}


def containment_check(
    x_star: np.ndarray,
    steady_state: np.ndarray,
    constant_input: np.ndarray,
    stubborn_opinions: np.ndarray,
    bias: np.ndarray,
    certificate_tol: float = 1e-9,
    hull_slack: float = 1e-9,
) -> ContainmentReport:
    """Verify that equilibrium opinions are contained where theory puts them."""
    c = np.asarray(steady_state, dtype=float)
    u = np.asarray(constant_input, dtype=float)
    stub = np.asarray(stubborn_opinions, dtype=float)
    bias = np.asarray(bias, dtype=float)
    num_regular = c.shape[0]
    blocks = u.reshape(-1, c.shape[1])
    star = np.asarray(x_star, dtype=float).reshape(-1, num_regular)
    cert_ok: list[bool] = []
    residuals: list[float] = []
    for i in range(num_regular):
        row = c[i]
        reconstructed = blocks @ row
        residual = float(np.abs(reconstructed - star[:, i]).max())
        ok = (
            row.min() >= -1e-12
            and abs(row.sum() - 1.0) <= 1e-9
            and residual <= certificate_tol
        )
        cert_ok.append(bool(ok))
        residuals.append(residual)
    hull_checked = bool(bias.size and not bias.any())
    in_hull: list[bool] | None = None
    if hull_checked:
        in_hull = [point_in_convex_hull(star[:, i], stub, hull_slack) for i in range(num_regular)]
    violations = tuple(
        i for i in range(num_regular)
        if not cert_ok[i] or (in_hull is not None and not in_hull[i])
    )
    return ContainmentReport(
        certificate_ok=tuple(cert_ok),
        certificate_residual=tuple(residuals),
        hull_checked=hull_checked,
        in_hull=tuple(in_hull) if in_hull is not None else None,
        violations=violations,
    )


@dataclass(frozen=True)
class AnalysisReport:
    """Snapshot of every analysis fact about one set of system matrices.

    ``step`` records which discrete time the matrices describe (None for
    time-invariant systems).
    """

    spectral_radius: float
    hurwitz: bool
    equilibrium_status: str  # "ok" | "no unique equilibrium"
    row_sum_error_max: float | None
    min_steady_state_entry: float | None
    x_star: np.ndarray | None
    convergence: ConvergenceCertificate | None
    containment: ContainmentReport | None
    layering: dict | None
    step: int | None = None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "spectral_radius": self.spectral_radius,
            "hurwitz": self.hurwitz,
            "equilibrium": self.equilibrium_status,
            "row_sum_error_max": self.row_sum_error_max,
            "min_C_entry": self.min_steady_state_entry,
            "x_star": None if self.x_star is None else list(map(float, self.x_star)),
            "convergence": self.convergence.to_dict() if self.convergence else {"mode": None, "steps": None},
            "containment": self.containment.to_dict() if self.containment else {"checked": False, "violations": []},
            "layering": self.layering,
        }


def analyze_system(
    mats: SystemMatrices,
    constant_input: np.ndarray,
    edges: EdgeSet | None = None,
    partition: LayerPartition | None = None,
    step: int | None = None,
) -> AnalysisReport:
    """Full analysis of one system: stability, equilibrium, layering, containment."""
    constant_input = np.asarray(constant_input, dtype=float)
    radius = spectral_radius(mats.A)
    hurwitz = radius < 1.0
    status = "ok"
    row_err = min_entry = None
    x_star = None
    containment = None
    try:
        c = steady_state_matrix(mats.A, mats.B)
    except NoUniqueEquilibriumError:
        status = "no unique equilibrium"
        c = None
    if c is not None:
        x_star = equilibrium(c, constant_input)
        row_err = float(np.abs(c.sum(axis=1) - 1.0).max())
        min_entry = float(c.min())
        ns = mats.num_stubborn
        stub = constant_input.reshape(-1, mats.size)[:, :ns].T
        containment = containment_check(x_star, c, constant_input, stub, mats.bias)

    layering_info: dict | None = None
    certificate: ConvergenceCertificate | None = None
    if edges is not None and partition is None:
        partition = infer_layering(edges)
    if partition is not None:
        strict = weak = False
        if edges is not None:
            weak = validate_layering(edges, partition, "weak")
            strict = validate_layering(edges, partition, "strict")
        layering_info = {
            "reducible": True,
            "num_layers": partition.num_layers,
            "weak": weak,
            "strict": strict,
        }
        selectors = build_selection_matrices(partition)
        layered = transform_to_layers(mats, selectors, constant_input)
        certificate = convergence_certificate(layered, "strict" if strict else "weak")
    else:
        if edges is not None:
            layering_info = {"reducible": False, "num_layers": None, "weak": False, "strict": False}
        certificate = ConvergenceCertificate("asymptotic", None, radius)
    return AnalysisReport(
        spectral_radius=radius,
        hurwitz=hurwitz,
        equilibrium_status=status,
        row_sum_error_max=row_err,
        min_steady_state_entry=min_entry,
        x_star=x_star,
        convergence=certificate,
        containment=containment,
        layering=layering_info,
        step=step,
    )
