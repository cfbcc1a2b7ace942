"""One-step integrators for SDE sample ensembles and a time-stepping loop.

Four steppers are provided.  ``em_step`` advances a full-order sample
cloud with explicit Euler-Maruyama.  The three low-rank steppers advance
a factored ensemble X = u^T y: all of them first move every sample by the
projected Euler-Maruyama increment, then update the orthonormal basis by
solving a small Gramian-weighted linear system, and finally restore
orthonormality with a QR refactorization.  They differ only in which
Gramian weights the basis solve and in which part of the increment enters
its right-hand side:

``dlr_em_step``
    weights with the Gramian of the old samples and feeds only the drift
    into the basis solve.
``dlr_ps_em_step``
    weights with the Gramian of the moved samples and feeds the complete
    increment (drift and diffusion) into the basis solve.
``dlr_ps_sde_step``
    weights with the Gramian of the moved samples and feeds only the
    drift into the basis solve.

``integrate`` runs a chosen stepper over a Brownian increment grid and
collects per-step diagnostics into a ``Trajectory``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .ensemble import (
    ORTHONORMALITY_TOL,
    EnsembleState,
    expectation_outer,
    gramian,
    mean_square_norm,
    reconstruct,
)
from .errors import ModelBlowUp, RankDeficient, StepFailed
from .linalg import (DEFAULT_PINV_RELATIVE_THRESHOLD, reduced_qr,
                     solve_spsd_minnorm)

SCHEMES = ("em", "dlr_em", "dlr_ps_em", "dlr_ps_sde")

# relative residual of the basis solve above which the step is flagged
SOLVER_WARNING_THRESHOLD = 1e-6

# relative cutoff used when the SVD fallback reports an effective
# condition number over the retained spectrum
_SVD_RANK_RELATIVE_TOL = 1e-14

_FACTORIZATION_TOL = 1e-10
_IDENTITY_TOL = 1e-8
# the projected-update identities hold exactly only when the Gramian
# solve keeps the full spectrum; truncated directions contribute up to
# sqrt(k * relative threshold) ~ 1e-5 of the cloud norm
_IDENTITY_TOL_TRUNCATED = 1e-5

RANK_POLICIES = ("abort", "svd")


@dataclass(frozen=True)
class StepRecord:
    """Per-step diagnostics emitted by the low-rank steppers.

    Attributes
    ----------
    t_next : float
        Time reached by the step.
    sigma_min_gramian : float
        Smallest eigenvalue of the Gramian that weighted the basis
        solve, clamped at zero (tiny negative rounding is possible).
    qr_r_condition : float
        Condition number lambda_max / lambda_min of R^T R from the
        refactorization.  When the SVD fallback replaced QR this is
        taken over the retained part of the spectrum so it stays finite.
    solver_residual : float
        Relative residual of the basis solve, zero for the exact
        linear-drift shortcut.
    solver_warning : bool
        True when solver_residual exceeded SOLVER_WARNING_THRESHOLD,
        which happens when the right-hand side has a component in the
        numerical null space of the Gramian.
    """

    t_next: float
    sigma_min_gramian: float
    qr_r_condition: float
    solver_residual: float
    solver_warning: bool = False

    def __post_init__(self):
        vals = (self.t_next, self.sigma_min_gramian, self.qr_r_condition,
                self.solver_residual)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("StepRecord fields must be finite")
        if self.sigma_min_gramian < 0.0:
            raise ValueError("sigma_min_gramian must be non-negative")


@dataclass
class Trajectory:
    """Result of integrating one scheme over one increment grid.

    Sample values are stored only at the requested node indices;
    scalar diagnostics are kept at every grid node.  Lineage fields
    (seed, endpoints, step counts, coarsening factor) let error metrics
    verify that two trajectories were driven by the same root noise
    before comparing them.
    """

    scheme: str
    model_name: str
    t0: float
    t1: float
    n_steps: int
    grid_seed: int
    coarsen_factor: int
    times: np.ndarray
    mean_square_norms: np.ndarray
    sigma_min_gramians: np.ndarray
    records: list = field(default_factory=list)
    node_indices: list = field(default_factory=list)
    node_values: list = field(default_factory=list)
    node_states: list = field(default_factory=list)
    final_state: object = None
    completed: bool = True
    error: str = None

    @property
    def root_n_steps(self):
        """Step count of the finest grid this trajectory's noise came from."""
        return self.n_steps * self.coarsen_factor

    def node_fraction_pairs(self):
        """Recorded nodes as exact fractions (index, n_steps) of [t0, t1]."""
        return [(int(i), self.n_steps) for i in self.node_indices]


def _first_bad_path(arr):
    bad = ~np.isfinite(arr)
    cols = bad.any(axis=0)
    return int(np.argmax(cols))


def _check_finite(arr, t, what):
    if not np.all(np.isfinite(arr)):
        j = _first_bad_path(np.atleast_2d(arr))
        raise ModelBlowUp(
            "non-finite %s at t=%.6g on path %d" % (what, t, j), t=t, path=j)


def em_step(model, x, t, dt, dw):
    """Advance a full-order sample cloud by one Euler-Maruyama step.

    Parameters
    ----------
    model : SdeModel
    x : ndarray of shape (d, M)
    t : float
    dt : float, positive
    dw : ndarray of shape (m, M)
        Brownian increments for this step.

    Returns
    -------
    ndarray of shape (d, M)
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != model.d:
        raise ValueError("x must have shape (d, M)")
    if dw.shape != (model.m, x.shape[1]):
        raise ValueError("dw must have shape (m, M)")
    a = model.drift_many(t, x)
    _check_finite(a, t, "drift")
    bdw = model.diffusion_dw(t, x, dw)
    _check_finite(bdw, t, "diffusion increment")
    out = x + a * dt + bdw
    _check_finite(out, t, "state")
    return out


def _moved_samples(model, state, dt, dw):
    """Common first stage of all low-rank steppers.

    Evaluates the model on the reconstructed cloud and moves every
    sample by the basis-projected Euler-Maruyama increment.

    Returns (x, a, bdw, y_moved) where x is the reconstructed cloud,
    a the drift, bdw the diffusion increment (all (d, M)) and y_moved
    the moved coefficient samples (k, M).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if dw.shape != (model.m, state.m_paths):
        raise ValueError("dw must have shape (m, M)")
    if state.d != model.d:
        raise ValueError("state dimension does not match model")
    t = state.t
    x = reconstruct(state)
    a = model.drift_many(t, x)
    _check_finite(a, t, "drift")
    bdw = model.diffusion_dw(t, x, dw)
    _check_finite(bdw, t, "diffusion increment")
    y_moved = state.y + state.u @ (a * dt + bdw)
    _check_finite(y_moved, t, "coefficient samples")
    return x, a, bdw, y_moved


def _without_row_span(g, u):
    """Right-multiply a (k, d) block by (I - u^T u)."""
    return g - (g @ u.T) @ u


def _basis_solve(c_mat, u, g_orth, u_solve_perturbation):
    """Solve C * u_new = C * u + g_orth for the unnormalized basis.

    The minimal-norm solution is used so a singular Gramian cannot
    abort the step.  Returns (u_new, relative_residual).
    """
    rhs = c_mat @ u + g_orth
    u_new = solve_spsd_minnorm(c_mat, rhs)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm > 0.0:
        residual = np.linalg.norm(c_mat @ u_new - rhs) / rhs_norm
    else:
        residual = 0.0
    if u_solve_perturbation is not None:
        u_new = u_new + u_solve_perturbation(c_mat)
    return u_new, residual


def _gramian_sigma_min(c_mat):
    if not np.all(np.isfinite(c_mat)):
        return np.nan
    lam = np.linalg.eigvalsh(0.5 * (c_mat + c_mat.T))
    return max(float(lam[0]), 0.0)


def _checked_gramian(y, t):
    """Sample Gramian of y, raising ModelBlowUp if squares overflowed."""
    c_mat = gramian(y).c
    if not np.all(np.isfinite(c_mat)):
        sq = np.sum(y * y, axis=0)
        j = int(np.argmax(~np.isfinite(sq)))
        raise ModelBlowUp(
            "sample second moments overflowed at t=%.6g on path %d"
            % (t, j), t=t, path=j)
    return c_mat


def _identity_tolerance(c_mat):
    """Debug-check tolerance, loosened when the solve truncated."""
    lam = np.linalg.eigvalsh(0.5 * (c_mat + c_mat.T))
    if lam[0] <= DEFAULT_PINV_RELATIVE_THRESHOLD * max(lam[-1], 0.0):
        return _IDENTITY_TOL_TRUNCATED
    return _IDENTITY_TOL


def _refactor(u_new, y_moved, t_next, rank_policy):
    """Restore row orthonormality of the basis after the solve.

    QR of the transposed basis is the default.  If QR reports rank
    deficiency the behavior follows rank_policy: "abort" re-raises as
    StepFailed, "svd" refactors through a singular value decomposition,
    which keeps the sample product u^T y exact while zeroing the
    coefficient rows of the dead directions.

    Returns (u_plus, y_plus, qr_r_condition).
    """
    if rank_policy not in RANK_POLICIES:
        raise ValueError("rank_policy must be one of %r" % (RANK_POLICIES,))
    try:
        q, r = reduced_qr(u_new.T)
        u_plus = q.T
        y_plus = r @ y_moved
        s = np.linalg.svd(r, compute_uv=False)
        condition = float((s[0] / s[-1]) ** 2)
    except RankDeficient as exc:
        if rank_policy == "abort":
            raise StepFailed(
                "basis refactorization found a rank-deficient basis "
                "(column %s); rerun with rank_policy='svd' to continue "
                "with dead directions zeroed" % exc.column) from exc
        w, s, vt = np.linalg.svd(u_new.T, full_matrices=False)
        u_plus = w.T
        y_plus = (s[:, np.newaxis] * vt) @ y_moved
        # canonical signs: largest-magnitude entry of each basis row positive
        lead = np.argmax(np.abs(u_plus), axis=1)
        signs = np.where(u_plus[np.arange(u_plus.shape[0]), lead] < 0.0, -1.0, 1.0)
        u_plus = signs[:, np.newaxis] * u_plus
        y_plus = signs[:, np.newaxis] * y_plus
        cutoff = _SVD_RANK_RELATIVE_TOL * np.linalg.norm(u_new)
        kept = s[s > cutoff]
        floor = kept[-1] if kept.size else s[0] if s[0] > 0.0 else 1.0
        condition = float((s[0] / floor) ** 2)

    defect = np.linalg.norm(u_plus @ u_plus.T - np.eye(u_plus.shape[0]))
    if defect > ORTHONORMALITY_TOL:
        warnings.warn(
            "basis lost orthonormality (defect %.3e), re-orthonormalizing"
            % defect)
        q2, r2 = reduced_qr(u_plus.T)
        u_plus = q2.T
        y_plus = r2 @ y_plus
    return u_plus, y_plus, condition


def _finish(state, u_new, y_moved, dt, c_mat, residual, rank_policy,
            debug, t_next=None):
    """Refactor, validate, and package the step result."""
    if t_next is None:
        t_next = state.t + dt
    u_plus, y_plus, condition = _refactor(u_new, y_moved, t_next, rank_policy)
    _check_finite(y_plus, t_next, "coefficient samples")
    new_state = EnsembleState(t=t_next, u=u_plus, y=y_plus)
    if debug:
        product = u_new.T @ y_moved
        err = np.linalg.norm(u_plus.T @ y_plus - product)
        scale = max(np.linalg.norm(product), 1.0)
        if err > _FACTORIZATION_TOL * scale:
            raise StepFailed(
                "refactorization changed the sample product "
                "(relative error %.3e)" % (err / scale))
    record = StepRecord(
        t_next=t_next,
        sigma_min_gramian=_gramian_sigma_min(c_mat),
        qr_r_condition=condition,
        solver_residual=float(residual),
        solver_warning=bool(residual > SOLVER_WARNING_THRESHOLD),
    )
    return new_state, record


def _tangent_apply(u, y_ref, c_ref, z):
    """Apply the sample tangent projector at (u, y_ref) to a cloud z.

    The projector keeps the component of z inside the span of the basis
    rows and, outside that span, the part correlated with the reference
    coefficient samples:

        P[z] = (I - u^T u) E[z y_ref^T] C_ref^+ y_ref + u^T u z

    where C_ref is the Gramian of y_ref.  The same minimal-norm solve
    as the steppers is used so the two agree on singular Gramians.
    """
    cross = expectation_outer(z, y_ref)
    coeff = solve_spsd_minnorm(c_ref, cross.T).T
    fluct = coeff @ y_ref
    fluct = fluct - u.T @ (u @ fluct)
    return fluct + u.T @ (u @ z)


def _check_identity(lhs, rhs, what, tol):
    err = np.linalg.norm(lhs - rhs)
    scale = max(np.linalg.norm(lhs), 1.0)
    if err > tol * scale:
        raise StepFailed(
            "%s violated (relative error %.3e)" % (what, err / scale))


def dlr_em_step(model, state, dt, dw, *, fast_linear=False, debug=False,
                rank_policy="abort", u_solve_perturbation=None):
    """One low-rank Euler-Maruyama step.

    The basis solve is weighted by the Gramian of the samples before
    the move and its right-hand side carries only the drift.  With
    ``fast_linear`` set and a model whose drift is x -> A(t) x, the
    solve is replaced by the exact shortcut u + u A(t)^T (I - u^T u) dt,
    in which the Gramian cancels.

    Returns
    -------
    (EnsembleState, StepRecord)
    """
    x, a, bdw, y_moved = _moved_samples(model, state, dt, dw)
    c_old = _checked_gramian(state.y, state.t)
    if fast_linear and model.is_linear_drift:
        a_mat = model.a_mat(state.t)
        u_new = state.u + _without_row_span(state.u @ a_mat.T, state.u) * dt
        residual = 0.0
        if u_solve_perturbation is not None:
            u_new = u_new + u_solve_perturbation(c_old)
    else:
        g = expectation_outer(state.y, a) * dt
        u_new, residual = _basis_solve(
            c_old, state.u, _without_row_span(g, state.u),
            u_solve_perturbation)
    return _finish(state, u_new, y_moved, dt, c_old, residual, rank_policy,
                   debug)


def dlr_ps_em_step(model, state, dt, dw, *, debug=False, rank_policy="abort",
                   u_solve_perturbation=None):
    """One projector-splitting step built on the discrete increment.

    The basis solve is weighted by the Gramian of the moved samples and
    its right-hand side carries the complete increment, drift plus
    diffusion.  In debug mode the step verifies the projected-update
    identity: the new cloud equals the old cloud plus the tangent
    projection of the full increment.

    Returns
    -------
    (EnsembleState, StepRecord)
    """
    x, a, bdw, y_moved = _moved_samples(model, state, dt, dw)
    c_new = _checked_gramian(y_moved, state.t)
    w = a * dt + bdw
    g = expectation_outer(y_moved, w)
    u_new, residual = _basis_solve(
        c_new, state.u, _without_row_span(g, state.u), u_solve_perturbation)
    new_state, record = _finish(state, u_new, y_moved, dt, c_new, residual,
                                rank_policy, debug)
    if debug:
        rhs = x + _tangent_apply(state.u, y_moved, c_new, w)
        _check_identity(reconstruct(new_state), rhs,
                        "projected-update identity",
                        _identity_tolerance(c_new))
    return new_state, record


def dlr_ps_sde_step(model, state, dt, dw, *, debug=False, rank_policy="abort",
                    u_solve_perturbation=None):
    """One projector-splitting step split at the continuous level.

    Identical to ``dlr_ps_em_step`` except that only the drift enters
    the basis solve; the diffusion increment reaches the new cloud only
    through the span of the old basis rows.  In debug mode the step
    verifies its projected-update identity: new cloud = old cloud +
    tangent projection of the drift times dt + row projection of the
    diffusion increment.

    Returns
    -------
    (EnsembleState, StepRecord)
    """
    x, a, bdw, y_moved = _moved_samples(model, state, dt, dw)
    c_new = _checked_gramian(y_moved, state.t)
    g = expectation_outer(y_moved, a) * dt
    u_new, residual = _basis_solve(
        c_new, state.u, _without_row_span(g, state.u), u_solve_perturbation)
    new_state, record = _finish(state, u_new, y_moved, dt, c_new, residual,
                                rank_policy, debug)
    if debug:
        rhs = (x + _tangent_apply(state.u, y_moved, c_new, a) * dt
               + state.u.T @ (state.u @ bdw))
        _check_identity(reconstruct(new_state), rhs,
                        "projected-update identity",
                        _identity_tolerance(c_new))
    return new_state, record


_DLR_STEPS = {
    "dlr_em": dlr_em_step,
    "dlr_ps_em": dlr_ps_em_step,
    "dlr_ps_sde": dlr_ps_sde_step,
}


def integrate(model, scheme, init, grid, *, record_nodes=None,
              keep_states=False, debug=False, fast_linear=False,
              rank_policy="abort", u_solve_perturbation=None):
    """Run one scheme over a Brownian increment grid.

    Parameters
    ----------
    model : SdeModel
    scheme : str
        One of "em", "dlr_em", "dlr_ps_em", "dlr_ps_sde".
    init : EnsembleState or ndarray of shape (d, M)
        Factored ensemble for the low-rank schemes, plain sample cloud
        for "em".
    grid : BrownianGrid
        Must match the model's noise dimension and the ensemble's path
        count.
    record_nodes : iterable of int, optional
        Grid node indices at which the reconstructed cloud is stored.
        Defaults to the first and last node.
    keep_states : bool
        Also store the factored states at the recorded nodes.
    debug : bool
        Enable the per-step identity checks (roughly doubles cost).
    fast_linear : bool
        Use the exact linear-drift shortcut in "dlr_em".
    rank_policy : str
        "abort" (default) stops the run when the refactorization finds
        a rank-deficient basis, "svd" continues with dead directions
        zeroed.
    u_solve_perturbation : callable, optional
        Receives the Gramian of each basis solve and returns an offset
        added to its solution; intended for null-space experiments.

    Returns
    -------
    Trajectory
        ``completed`` is False when a step failed; scalar diagnostics
        before the failure are kept and the error is annotated.
    """
    if scheme not in SCHEMES:
        raise ValueError("unknown scheme %r, expected one of %r"
                         % (scheme, SCHEMES))
    if grid.m != model.m:
        raise ValueError("grid carries %d noise components, model needs %d"
                         % (grid.m, model.m))
    low_rank = scheme != "em"
    if low_rank:
        if not isinstance(init, EnsembleState):
            raise TypeError("low-rank schemes need an EnsembleState init")
        m_paths = init.m_paths
        state = init
    else:
        x = np.array(init, dtype=float)
        if x.ndim != 2 or x.shape[0] != model.d:
            raise ValueError("em init must have shape (d, M)")
        m_paths = x.shape[1]
    if grid.m_paths != m_paths:
        raise ValueError("grid carries %d paths, ensemble has %d"
                         % (grid.m_paths, m_paths))

    n = grid.n_steps
    dt = grid.dt
    times = grid.times()
    if record_nodes is None:
        record_set = {0, n}
    else:
        record_set = {int(i) for i in record_nodes}
        for i in record_set:
            if i < 0 or i > n:
                raise ValueError("record node %d outside grid [0, %d]"
                                 % (i, n))

    msq = np.full(n + 1, np.nan)
    sig = np.full(n + 1, np.nan)
    traj = Trajectory(
        scheme=scheme,
        model_name=model.name,
        t0=grid.t0,
        t1=grid.t1,
        n_steps=n,
        grid_seed=grid.seed,
        coarsen_factor=grid.coarsen_factor,
        times=times,
        mean_square_norms=msq,
        sigma_min_gramians=sig,
    )

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n + 1):
            if low_rank:
                msq[i] = mean_square_norm(state.y)
                sig[i] = _gramian_sigma_min(gramian(state.y).c)
            else:
                msq[i] = mean_square_norm(x)
            if i in record_set:
                traj.node_indices.append(i)
                traj.node_values.append(
                    reconstruct(state) if low_rank else x.copy())
                if keep_states and low_rank:
                    traj.node_states.append(state)
            if i == n:
                break
            dw = grid.increments[i]
            try:
                if low_rank:
                    step = _DLR_STEPS[scheme]
                    kwargs = dict(debug=debug, rank_policy=rank_policy,
                                  u_solve_perturbation=u_solve_perturbation)
                    if scheme == "dlr_em":
                        kwargs["fast_linear"] = fast_linear
                    state, record = step(model, state, dt, dw, **kwargs)
                    # pin the node time to the grid lattice
                    state = EnsembleState(t=times[i + 1], u=state.u,
                                          y=state.y)
                    traj.records.append(record)
                else:
                    x = em_step(model, x, times[i], dt, dw)
            except (StepFailed, ModelBlowUp, ValueError,
                    np.linalg.LinAlgError) as exc:
                traj.completed = False
                traj.error = "%s at step %d (t=%.6g): %s" % (
                    type(exc).__name__, i, times[i], exc)
                break

    traj.final_state = state if low_rank else x
    return traj
