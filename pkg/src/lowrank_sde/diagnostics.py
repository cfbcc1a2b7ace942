"""Closed-form bound evaluators, stability margins, and error metrics.

The bound evaluators are literal formula translations and therefore
total, deterministic functions of their scalar arguments.  The error
metrics compare trajectories pathwise: they require both runs to be
driven by the same root noise (same seed, horizon, and finest grid) and
match recorded nodes through exact integer grid fractions, never by
floating-point time comparison.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, IncomparableTrajectories


def k1_bound(t, e_x0_sq, c_lgb):
    """Second-moment growth envelope (1 + E|X0|^2) e^((1+7c) t) - 1.

    Parameters
    ----------
    t : float, >= 0
    e_x0_sq : float, >= 0
        Initial mean-square norm E[|X_0|^2].
    c_lgb : float, > 0
        Linear-growth constant of the model.
    """
    if t < 0.0 or e_x0_sq < 0.0 or c_lgb <= 0.0:
        raise ValueError("need t >= 0, e_x0_sq >= 0, c_lgb > 0")
    # the envelope may saturate to inf for long horizons; callers only
    # consume it through 1 / (1 + K), so that limit is well defined
    with np.errstate(over="ignore"):
        return (1.0 + e_x0_sq) * np.exp((1.0 + 7.0 * c_lgb) * t) - 1.0


def k4_bound(t, e_x0_sq, c_lgb, t_final):
    """Second-moment envelope with horizon-dependent rate.

    Evaluates (E|X0|^2 + 1) e^((1 + c(2+T)) t) - 1, the analogue of
    ``k1_bound`` whose exponent rate grows with the horizon T instead
    of the fixed factor 7.
    """
    if t < 0.0 or e_x0_sq < 0.0 or c_lgb <= 0.0 or t_final < 0.0:
        raise ValueError("need t >= 0, e_x0_sq >= 0, c_lgb > 0, T >= 0")
    rate = 1.0 + c_lgb * (2.0 + t_final)
    with np.errstate(over="ignore"):
        return (e_x0_sq + 1.0) * np.exp(rate * t) - 1.0


def k2_ktilde_bounds(k1_t, c_lgb, t_final):
    """Envelopes for the coefficient samples and the moved samples.

    Given the cloud envelope K1(T), returns the pair

        k2     = K1 + 3 c (1 + K1) T + 12 c (1 + K1) T
        ktilde = 3 (K1 + c (T^2 + 4 T) (1 + K1))

    both degenerate to (K1, 3 K1) when c or T vanishes.
    """
    if k1_t < 0.0 or c_lgb < 0.0 or t_final < 0.0:
        raise ValueError("inputs must be non-negative")
    grow = c_lgb * (1.0 + k1_t)
    k2 = k1_t + 3.0 * grow * t_final + 12.0 * grow * t_final
    ktilde = 3.0 * (k1_t + c_lgb * (t_final ** 2 + 4.0 * t_final)
                    * (1.0 + k1_t))
    return k2, ktilde


def gramian_bound_simple(sigma_b, dt):
    """One-step Gramian floor sigma_b * dt under elliptic noise."""
    if sigma_b < 0.0 or dt <= 0.0:
        raise ValueError("need sigma_b >= 0 and dt > 0")
    return sigma_b * dt


def gramian_bound_refined(sigma_0, sigma_b, c_lgb, k_bound, dt, n):
    """Accumulated Gramian floor after n steps.

    With A := sigma_b / (2 c (1 + K)) the bound reads

        min(sigma_0, sigma_b^2 / (4 c (1 + K)))
        + (sigma_b / 2) dt [1 - (1 - 1/(1 + A/dt))^(n+1)]

    where K is a second-moment envelope at the horizon (``k1_bound``
    for the plain low-rank scheme, ``k4_bound`` for the splitting
    schemes).  The second term is the geometric accumulation of the
    per-step noise injection; its prefactor never exceeds the cap in
    the first term.
    """
    if min(sigma_0, sigma_b, c_lgb, k_bound) < 0.0 or dt <= 0.0 or n < 0:
        raise ValueError("inputs must be non-negative with dt > 0, n >= 0")
    denom = 2.0 * c_lgb * (1.0 + k_bound)
    if denom > 0.0:
        a_const = sigma_b / denom
        cap = 0.5 * sigma_b * a_const
    else:
        a_const = np.inf
        cap = np.inf
    if sigma_b == 0.0:
        return min(sigma_0, 0.0)
    decay = 1.0 - 1.0 / (1.0 + a_const / dt)
    geometric = 1.0 - decay ** (n + 1)
    return min(sigma_0, cap) + 0.5 * sigma_b * dt * geometric


def dt_condition(sigma_k_n, c_lgb, sup_ex_sq):
    """Largest stable step predicted from the current Gramian floor.

    Evaluates sqrt(sigma) / (sqrt(c) sqrt(1 + sup_n E|X_n|^2)).
    """
    if sigma_k_n < 0.0 or c_lgb <= 0.0 or sup_ex_sq < 0.0:
        raise ValueError("need sigma >= 0, c_lgb > 0, sup >= 0")
    return np.sqrt(sigma_k_n) / (np.sqrt(c_lgb) * np.sqrt(1.0 + sup_ex_sq))


def ams_margin(a_mat, b_mats, dt):
    """Asymptotic mean-square stability margin of the linear test SDE.

    Returns |1 + lambda_max(A + A^T) dt + sigma_max(A)^2 dt^2
    + sum_k |B_k|^2 dt| where |B_k| is the spectral norm.  A value
    below one predicts mean-square contraction of the explicit schemes
    on dX = A X dt + sum_k B_k X dW^k.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    a_mat = np.asarray(a_mat, dtype=float)
    if a_mat.ndim != 2 or a_mat.shape[0] != a_mat.shape[1]:
        raise DimensionMismatch("A must be square")
    d = a_mat.shape[0]
    lam_max = float(np.linalg.eigvalsh(a_mat + a_mat.T)[-1])
    sig_max = float(np.linalg.norm(a_mat, 2))
    noise = 0.0
    for b_mat in b_mats:
        b_mat = np.asarray(b_mat, dtype=float)
        if b_mat.shape != (d, d):
            raise DimensionMismatch("every B_k must match A's shape")
        noise += float(np.linalg.norm(b_mat, 2)) ** 2
    return abs(1.0 + lam_max * dt + sig_max ** 2 * dt ** 2 + noise * dt)


def empirical_c_lgb(model, t, cloud):
    """Empirical linear-growth ratio over a realized sample cloud.

    Returns max_j (|a(t, x_j)|^2 + ||b(t, x_j)||_F^2) / (1 + |x_j|^2).
    Used when a model does not certify ``c_lgb`` itself.
    """
    cloud = np.asarray(cloud, dtype=float)
    drift = model.drift_many(t, cloud)
    num = np.sum(drift * drift, axis=0)
    for j in range(cloud.shape[1]):
        b_mat = model.diffusion_mat(t, cloud[:, j])
        num[j] += np.sum(b_mat * b_mat)
    return float(np.max(num / (1.0 + np.sum(cloud * cloud, axis=0))))


def _matched_node_pairs(traj_a, traj_b):
    """Indices of recorded nodes at identical physical times.

    Node i of an n-step grid sits at the exact fraction i/n of the
    horizon, so two nodes coincide iff i_a * n_b == i_b * n_a.
    """
    if traj_a.grid_seed != traj_b.grid_seed:
        raise IncomparableTrajectories("different noise seeds")
    if traj_a.t0 != traj_b.t0 or traj_a.t1 != traj_b.t1:
        raise IncomparableTrajectories("different time horizons")
    if traj_a.root_n_steps != traj_b.root_n_steps:
        raise IncomparableTrajectories("different root noise grids")
    lookup = {}
    for j, ib in enumerate(traj_b.node_indices):
        lookup[int(ib) * traj_a.n_steps] = j
    pairs = []
    for i, ia in enumerate(traj_a.node_indices):
        j = lookup.get(int(ia) * traj_b.n_steps)
        if j is not None:
            pairs.append((i, j))
    if not pairs:
        raise IncomparableTrajectories("no recorded nodes in common")
    for i, j in pairs:
        if traj_a.node_values[i].shape != traj_b.node_values[j].shape:
            raise IncomparableTrajectories(
                "sample clouds have different shapes at a shared node")
    return pairs


def _sup_sq_over_nodes(values_a, values_b, pairs):
    sup_sq = None
    for i, j in pairs:
        diff = values_a[i] - values_b[j]
        sq = np.sum(diff * diff, axis=0)
        sup_sq = sq if sup_sq is None else np.maximum(sup_sq, sq)
    return sup_sq


def l2_sup_error(traj_a, traj_b):
    """Mean-square norm of the pathwise sup-difference over shared nodes.

    Computes sqrt(E[sup_n |X_n^a - X_n^b|^2]) where the sup runs over
    the recorded nodes the two trajectories share and the expectation
    is the sample average over paths.

    Raises
    ------
    IncomparableTrajectories
        If the trajectories were not driven by the same root noise or
        record no common nodes.
    """
    pairs = _matched_node_pairs(traj_a, traj_b)
    sup_sq = _sup_sq_over_nodes(traj_a.node_values, traj_b.node_values,
                                pairs)
    return float(np.sqrt(np.mean(sup_sq)))


def relative_l2_sup_error(traj_a, traj_ref):
    """``l2_sup_error`` divided by the same functional of the reference."""
    pairs = _matched_node_pairs(traj_a, traj_ref)
    sup_sq = _sup_sq_over_nodes(traj_a.node_values, traj_ref.node_values,
                                pairs)
    ref_sup_sq = None
    for _, j in pairs:
        sq = np.sum(traj_ref.node_values[j] ** 2, axis=0)
        ref_sup_sq = sq if ref_sup_sq is None else np.maximum(ref_sup_sq, sq)
    num = float(np.sqrt(np.mean(sup_sq)))
    denom = float(np.sqrt(np.mean(ref_sup_sq)))
    if denom == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / denom


def fit_order(dt_values, errors):
    """Least-squares slope of log error against log dt.

    Requires at least three strictly positive points.
    """
    dt_values = np.asarray(dt_values, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if dt_values.size < 3 or errors.size != dt_values.size:
        raise ValueError("need at least three matching points")
    if np.any(dt_values <= 0.0) or np.any(errors <= 0.0):
        raise ValueError("points must be strictly positive")
    slope = np.polyfit(np.log(dt_values), np.log(errors), 1)[0]
    return float(slope)


@dataclass
class BoundTrace:
    """Per-node Gramian floors next to the observed smallest eigenvalue."""

    times: np.ndarray
    sigma_k_observed: np.ndarray
    bound_simple: np.ndarray
    bound_refined: np.ndarray
    dt_condition: np.ndarray

    def __post_init__(self):
        fields = (self.times, self.sigma_k_observed, self.bound_simple,
                  self.bound_refined, self.dt_condition)
        lengths = {len(f) for f in fields}
        if len(lengths) != 1:
            raise ValueError("all BoundTrace arrays must share a length")
        if np.any(np.asarray(self.bound_simple) < 0.0) \
                or np.any(np.asarray(self.bound_refined) < 0.0):
            raise ValueError("bounds must be non-negative")


@dataclass
class ErrorReport:
    """Errors of one scheme against one reference over a step ladder."""

    dt_values: np.ndarray
    l2_sup_errors: np.ndarray
    relative_errors: np.ndarray
    fitted_order: float
    scheme: str
    reference: str

    def __post_init__(self):
        dts = np.asarray(self.dt_values, dtype=float)
        if np.any(np.diff(dts) >= 0.0):
            raise ValueError("dt_values must be strictly decreasing")
        if np.any(np.asarray(self.l2_sup_errors) < 0.0) \
                or np.any(np.asarray(self.relative_errors) < 0.0):
            raise ValueError("errors must be non-negative")


def _write_csv(path, header, columns):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in zip(*columns):
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def write_bound_trace_csv(trace, path):
    """Serialize a BoundTrace with fixed column order."""
    _write_csv(path, "t,sigma_k,bound_simple,bound_refined,dt_hat",
               (trace.times, trace.sigma_k_observed, trace.bound_simple,
                trace.bound_refined, trace.dt_condition))


def write_error_report_csv(report, path):
    """Serialize an ErrorReport with fixed column order."""
    _write_csv(path, "dt,l2_sup,rel_l2_sup",
               (report.dt_values, report.l2_sup_errors,
                report.relative_errors))
