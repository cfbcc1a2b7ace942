"""Config-driven experiment runner.

An experiment is described by one section of an INI file; the section
name becomes the experiment name.  Parsing is fail-closed: unknown
keys, malformed values, and inconsistent combinations raise SpecError
instead of being ignored.  Four experiment kinds exist:

``convergence``
    Couples every requested coarse step size to a single fine grid,
    integrates the configured schemes, and reports L2-sup errors and
    fitted orders against the configured reference (pathwise exact
    values for the scalar oracle, otherwise a fine full-order run and
    a fine splitting run on the same grid and initial samples).
``singular_values``
    Traces the smallest Gramian eigenvalue per step for each
    (scheme, dt) cell, next to the simple and accumulated lower
    bounds and the step-size condition derived from them.  Bound
    violations are flagged in a separate file, never fatal.
``stability``
    Runs the low-rank schemes at each dt and classifies each run as
    stable (final mean-square norm < 1e-3 x initial), unstable
    (> 10 x initial, or overflow/failure), or inconclusive.
``single_run``
    One scheme on one grid, serializing factored snapshots at
    configured times.

Every run writes a ``manifest.json`` recording the resolved spec, the
library version, wall time, and a SHA-256 digest of each output file;
re-running a spec reproduces every CSV byte for byte.

The LOWRANK_SDE_THREADS environment variable (default 1) sets how
many (scheme, dt) cells may run concurrently; each cell's step loop
stays sequential, so results do not depend on the thread count.
"""

import configparser
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .diagnostics import (
    BoundTrace,
    ErrorReport,
    dt_condition,
    empirical_c_lgb,
    fit_order,
    gramian_bound_refined,
    k1_bound,
    k4_bound,
    l2_sup_error,
    relative_l2_sup_error,
    write_bound_trace_csv,
    write_error_report_csv,
)
from .ensemble import (
    EnsembleState,
    init_rank_k,
    mean_square_norm,
    save_snapshot,
)
from .errors import SpecError, StepFailed
from .integrators import RANK_POLICIES, SCHEMES, Trajectory, integrate
from .models import build_model, gbm_exact_values
from .noise import coarsen, generate

KINDS = ("convergence", "singular_values", "stability", "single_run")
REFERENCES = ("exact", "em_fine", "dlr_ps_sde_fine")

STABLE_FACTOR = 1e-3
UNSTABLE_FACTOR = 10.0
GRAMIAN_FLOOR_FRACTION = 0.8

_BOOL_WORDS = {
    "true": True, "yes": True, "on": True, "1": True,
    "false": False, "no": False, "off": False, "0": False,
}

_COMMON_KEYS = {
    "kind", "model", "schemes", "rank", "paths", "seed", "t_final",
    "dt", "output_dir", "debug_identities", "linear_fast_path",
    "rank_policy",
}
_KIND_ONLY_KEYS = {
    "reference": ("convergence",),
    "fine_factor": ("convergence",),
    "snapshot_times": ("single_run",),
}


def _parse_bool(section, key, raw):
    word = raw.strip().lower()
    if word not in _BOOL_WORDS:
        raise SpecError("[%s] %s: expected a boolean, got %r"
                        % (section, key, raw))
    return _BOOL_WORDS[word]


def _parse_floats(section, key, raw):
    try:
        values = tuple(float(part) for part in raw.split(","))
    except ValueError:
        raise SpecError("[%s] %s: expected comma-separated numbers, got %r"
                        % (section, key, raw))
    if not values:
        raise SpecError("[%s] %s: empty list" % (section, key))
    return values


def _parse_int(section, key, raw):
    try:
        return int(raw)
    except ValueError:
        raise SpecError("[%s] %s: expected an integer, got %r"
                        % (section, key, raw))


def _steps_for(dt, t_final, where):
    n = int(round(t_final / dt))
    if n < 1:
        raise SpecError("%s: dt=%g exceeds t_final=%g" % (where, dt, t_final))
    return n


@dataclass(frozen=True)
class ExperimentSpec:
    """Resolved description of one experiment section."""

    name: str
    kind: str
    model: str
    model_overrides: dict = field(default_factory=dict)
    schemes: tuple = ()
    rank: int = 1
    paths: int = 1
    seed: int = 0
    t_final: float = 1.0
    dt_values: tuple = ()
    reference: str = ""
    fine_factor: int = 10
    output_dir: str = "."
    debug_identities: bool = False
    linear_fast_path: bool = False
    rank_policy: str = "abort"
    snapshot_times: tuple = ()

    def __post_init__(self):
        where = "[%s]" % self.name
        if self.kind not in KINDS:
            raise SpecError("%s kind must be one of %s, got %r"
                            % (where, "/".join(KINDS), self.kind))
        if not self.schemes:
            raise SpecError("%s schemes must be non-empty" % where)
        for scheme in self.schemes:
            if scheme not in SCHEMES:
                raise SpecError("%s unknown scheme %r (known: %s)"
                                % (where, scheme, ", ".join(SCHEMES)))
        if len(set(self.schemes)) != len(self.schemes):
            raise SpecError("%s schemes repeat" % where)
        if self.kind in ("singular_values", "stability") \
                and "em" in self.schemes:
            raise SpecError("%s kind %s traces factored ensembles; the "
                            "full-order scheme has none" % (where, self.kind))
        if self.rank < 1:
            raise SpecError("%s rank must be >= 1" % where)
        if self.paths < 1:
            raise SpecError("%s paths must be >= 1" % where)
        if not np.isfinite(self.t_final) or self.t_final <= 0.0:
            raise SpecError("%s t_final must be positive" % where)
        if not self.dt_values:
            raise SpecError("%s dt must list at least one value" % where)
        for dt in self.dt_values:
            if not np.isfinite(dt) or dt <= 0.0:
                raise SpecError("%s dt values must be positive" % where)
        if len(self.dt_values) > 1 \
                and any(np.diff(self.dt_values) >= 0.0):
            raise SpecError("%s dt values must be strictly decreasing"
                            % where)
        if self.rank_policy not in RANK_POLICIES:
            raise SpecError("%s rank_policy must be one of %s"
                            % (where, "/".join(RANK_POLICIES)))
        if self.kind == "convergence":
            if self.reference not in REFERENCES:
                raise SpecError("%s convergence needs reference one of %s"
                                % (where, "/".join(REFERENCES)))
            if self.reference == "exact" and self.model != "gbm_oracle":
                raise SpecError("%s exact reference is only available for "
                                "gbm_oracle" % where)
            if self.fine_factor < 1:
                raise SpecError("%s fine_factor must be >= 1" % where)
            if self.reference != "exact" and self.fine_factor < 2:
                raise SpecError("%s fine references need fine_factor >= 2"
                                % where)
            for dt in self.dt_values:
                n = _steps_for(dt, self.t_final, where)
                if abs(n * dt - self.t_final) > 1e-9 * max(1.0, self.t_final):
                    raise SpecError("%s dt=%g does not divide t_final=%g"
                                    % (where, dt, self.t_final))
            n_fine = self.fine_factor * _steps_for(
                self.dt_values[-1], self.t_final, where)
            for dt in self.dt_values:
                if n_fine % _steps_for(dt, self.t_final, where):
                    raise SpecError(
                        "%s fine grid of %d steps is not a multiple of the "
                        "dt=%g grid" % (where, n_fine, dt))
        if self.kind == "single_run":
            if len(self.schemes) != 1:
                raise SpecError("%s single_run takes exactly one scheme"
                                % where)
            if len(self.dt_values) != 1:
                raise SpecError("%s single_run takes exactly one dt" % where)
            dt = self.dt_values[0]
            n = _steps_for(dt, self.t_final, where)
            for t in self.snapshot_times:
                i = int(round(t / dt))
                if i < 0 or i > n or \
                        abs(i * dt - t) > 1e-9 * max(1.0, self.t_final):
                    raise SpecError("%s snapshot time %g is not a grid node"
                                    % (where, t))

    def fine_steps(self):
        """Number of steps of the shared fine grid (convergence only)."""
        return self.fine_factor * _steps_for(
            self.dt_values[-1], self.t_final, self.name)

    def as_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "model": self.model,
            "model_overrides": dict(self.model_overrides),
            "schemes": list(self.schemes),
            "rank": self.rank,
            "paths": self.paths,
            "seed": self.seed,
            "t_final": self.t_final,
            "dt_values": list(self.dt_values),
            "reference": self.reference,
            "fine_factor": self.fine_factor,
            "output_dir": self.output_dir,
            "debug_identities": self.debug_identities,
            "linear_fast_path": self.linear_fast_path,
            "rank_policy": self.rank_policy,
            "snapshot_times": list(self.snapshot_times),
        }


def load_specs(path):
    """Parse an INI experiment file into a list of ExperimentSpec.

    Raises SpecError for unreadable files, unknown keys, malformed
    values, unknown models or model overrides, and combinations the
    runners cannot honor.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise SpecError("cannot read spec file %s: %s" % (path, exc))
    except configparser.Error as exc:
        raise SpecError("malformed spec file %s: %s" % (path, exc))
    if not parser.sections():
        raise SpecError("spec file %s defines no experiment sections" % path)

    specs = []
    for section in parser.sections():
        raw = dict(parser.items(section))
        fields = {"name": section}
        overrides = {}
        for key, value in raw.items():
            if key.startswith("model."):
                overrides[key[len("model."):]] = value
                continue
            if key not in _COMMON_KEYS and key not in _KIND_ONLY_KEYS:
                raise SpecError("[%s] unknown key %r" % (section, key))
        kind = raw.get("kind", "")
        for key, kinds in _KIND_ONLY_KEYS.items():
            if key in raw and kind not in kinds:
                raise SpecError("[%s] key %r only applies to kind %s"
                                % (section, key, "/".join(kinds)))
        for key in ("kind", "model", "schemes", "rank", "paths", "seed",
                    "t_final", "dt", "output_dir"):
            if key not in raw:
                raise SpecError("[%s] missing required key %r"
                                % (section, key))

        fields["kind"] = raw["kind"].strip()
        fields["model"] = raw["model"].strip()
        fields["model_overrides"] = overrides
        fields["schemes"] = tuple(
            s.strip() for s in raw["schemes"].split(",") if s.strip())
        fields["rank"] = _parse_int(section, "rank", raw["rank"])
        fields["paths"] = _parse_int(section, "paths", raw["paths"])
        fields["seed"] = _parse_int(section, "seed", raw["seed"])
        fields["t_final"] = _parse_floats(section, "t_final",
                                          raw["t_final"])[0]
        fields["dt_values"] = _parse_floats(section, "dt", raw["dt"])
        fields["output_dir"] = raw["output_dir"].strip()
        if "reference" in raw:
            fields["reference"] = raw["reference"].strip()
        if "fine_factor" in raw:
            fields["fine_factor"] = _parse_int(section, "fine_factor",
                                               raw["fine_factor"])
        if "debug_identities" in raw:
            fields["debug_identities"] = _parse_bool(
                section, "debug_identities", raw["debug_identities"])
        if "linear_fast_path" in raw:
            fields["linear_fast_path"] = _parse_bool(
                section, "linear_fast_path", raw["linear_fast_path"])
        if "rank_policy" in raw:
            fields["rank_policy"] = raw["rank_policy"].strip()
        if "snapshot_times" in raw:
            fields["snapshot_times"] = _parse_floats(
                section, "snapshot_times", raw["snapshot_times"])

        spec = ExperimentSpec(**fields)
        model, _ = build_model(spec.model, spec.model_overrides)
        if spec.rank > min(model.d, spec.paths):
            raise SpecError("[%s] rank %d exceeds min(d=%d, paths=%d)"
                            % (section, spec.rank, model.d, spec.paths))
        if spec.linear_fast_path and not model.is_linear_drift:
            raise SpecError("[%s] linear_fast_path needs a model with "
                            "linear drift" % section)
        specs.append(spec)
    return specs


def _thread_count():
    raw = os.environ.get("LOWRANK_SDE_THREADS", "1")
    try:
        count = int(raw)
    except ValueError:
        raise SpecError("LOWRANK_SDE_THREADS must be an integer, got %r"
                        % raw)
    if count < 1:
        raise SpecError("LOWRANK_SDE_THREADS must be >= 1, got %d" % count)
    return count


def _map_cells(fn, cells):
    """Evaluate fn over independent cells, possibly on worker threads."""
    threads = _thread_count()
    if threads == 1 or len(cells) <= 1:
        return [fn(cell) for cell in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cells))


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(spec, out_dir, outputs, wall_seconds, summary):
    manifest = {
        "spec": spec.as_dict(),
        "version": __version__,
        "wall_time_seconds": wall_seconds,
        "seed": spec.seed,
        "outputs": {name: _sha256(os.path.join(out_dir, name))
                    for name in sorted(outputs)},
        "summary": summary,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _g(value):
    return "%g" % value


def _prepare(spec):
    """Shared setup: output dir, model, initial cloud, factored state."""
    os.makedirs(spec.output_dir, exist_ok=True)
    model, law = build_model(spec.model, spec.model_overrides)
    samples = law(spec.seed, spec.paths)
    state0 = None
    if any(s != "em" for s in spec.schemes):
        state0 = init_rank_k(samples, spec.rank)
    return model, samples, state0


def _wrap_exact_reference(model, root, node_indices):
    """Pathwise-exact oracle values packaged as a reference trajectory."""
    values = gbm_exact_values(model.mu, model.sigma, root, node_indices)
    filler = np.full(root.n_steps + 1, np.nan)
    return Trajectory(
        scheme="exact",
        model_name=model.name,
        t0=root.t0,
        t1=root.t1,
        n_steps=root.n_steps,
        grid_seed=root.seed,
        coarsen_factor=1,
        times=root.times(),
        mean_square_norms=filler,
        sigma_min_gramians=filler.copy(),
        node_indices=list(node_indices),
        node_values=[values[row] for row in range(values.shape[0])],
        final_state=None,
    )


def run_convergence(spec):
    """Coupled step-size sweep with fitted convergence orders.

    One fine grid drives everything; each coarse grid is its block-sum
    coarsening, so all runs share Brownian paths and initial samples.
    Writes errors_<scheme>_vs_<reference>.csv per pair, slopes.csv,
    status.csv (ok/failed per cell; failed cells are excluded from the
    fits), and manifest.json.
    """
    started = time.monotonic()
    model, samples, state0 = _prepare(spec)
    n_values = [_steps_for(dt, spec.t_final, spec.name)
                for dt in spec.dt_values]
    n_fine = spec.fine_factor * n_values[-1]
    root = generate(spec.seed, 0.0, spec.t_final, n_fine, model.m,
                    spec.paths)

    union = sorted({i * (n_fine // n) for n in n_values
                    for i in range(n + 1)})
    references = {}
    if spec.reference == "exact":
        references["exact"] = _wrap_exact_reference(model, root, union)
    else:
        em_ref = integrate(model, "em", samples, root, record_nodes=union)
        if em_ref.error:
            raise StepFailed("fine full-order reference failed: %s"
                             % em_ref.error)
        ps_ref = integrate(model, "dlr_ps_sde", state0, root,
                           record_nodes=union, rank_policy=spec.rank_policy)
        if ps_ref.error:
            raise StepFailed("fine splitting reference failed: %s"
                             % ps_ref.error)
        references["em_fine"] = em_ref
        references["dlr_ps_sde_fine"] = ps_ref

    def run_cell(cell):
        scheme, dt, n = cell
        grid = coarsen(root, n_fine // n)
        init = samples if scheme == "em" else state0
        traj = integrate(
            model, scheme, init, grid,
            record_nodes=range(n + 1),
            debug=spec.debug_identities,
            fast_linear=spec.linear_fast_path and scheme == "dlr_em",
            rank_policy=spec.rank_policy)
        if traj.error:
            return scheme, dt, None, traj.error
        errors = {}
        for ref_name, ref in references.items():
            errors[ref_name] = (l2_sup_error(traj, ref),
                                relative_l2_sup_error(traj, ref))
        return scheme, dt, errors, None

    cells = [(scheme, dt, n)
             for scheme in spec.schemes
             for dt, n in zip(spec.dt_values, n_values)]
    results = _map_cells(run_cell, cells)

    by_scheme = {scheme: [] for scheme in spec.schemes}
    failures = []
    status_rows = []
    for scheme, dt, errors, error in results:
        status_rows.append((scheme, _g(dt), "ok" if error is None
                            else "failed"))
        if error is None:
            by_scheme[scheme].append((dt, errors))
        else:
            failures.append({"scheme": scheme, "dt": dt, "error": error})

    outputs = []
    reports = {}
    slope_rows = []
    for scheme in spec.schemes:
        for ref_name in references:
            rows = [(dt, errors[ref_name]) for dt, errors
                    in by_scheme[scheme]]
            dts = np.array([dt for dt, _ in rows])
            errs = np.array([pair[0] for _, pair in rows])
            rels = np.array([pair[1] for _, pair in rows])
            if dts.size >= 3 and np.all(errs > 0.0):
                order = fit_order(dts, errs)
            else:
                order = float("nan")
            report = ErrorReport(
                dt_values=dts, l2_sup_errors=errs, relative_errors=rels,
                fitted_order=order, scheme=scheme, reference=ref_name)
            reports[(scheme, ref_name)] = report
            name = "errors_%s_vs_%s.csv" % (scheme, ref_name)
            write_error_report_csv(report,
                                   os.path.join(spec.output_dir, name))
            outputs.append(name)
            slope_rows.append((scheme, ref_name, "%.17g" % order,
                               str(dts.size)))

    _write_rows(os.path.join(spec.output_dir, "slopes.csv"),
                "scheme,reference,fitted_order,points", slope_rows)
    outputs.append("slopes.csv")
    _write_rows(os.path.join(spec.output_dir, "status.csv"),
                "scheme,dt,status", status_rows)
    outputs.append("status.csv")

    summary = {
        "fitted_orders": {"%s vs %s" % key: reports[key].fitted_order
                          for key in reports},
        "failures": failures,
        "fine_steps": n_fine,
    }
    _write_manifest(spec, spec.output_dir, outputs,
                    time.monotonic() - started, summary)
    return {"reports": reports, "failures": failures,
            "output_dir": spec.output_dir}


def run_singular_values(spec):
    """Per-step smallest Gramian eigenvalue against its lower bounds.

    Writes singular_values_<scheme>_dt<dt>.csv per cell plus a
    violations.csv listing every recorded node whose observed value
    drops below 0.8 x (certified noise floor x dt).  Violations are
    reported, never fatal.
    """
    started = time.monotonic()
    model, samples, state0 = _prepare(spec)
    c_lgb = model.c_lgb
    if c_lgb is None:
        c_lgb = empirical_c_lgb(model, 0.0, samples)
    e0 = mean_square_norm(samples)
    sigma_b = model.sigma_b_lower or 0.0

    def run_cell(cell):
        scheme, dt = cell
        n = _steps_for(dt, spec.t_final, spec.name)
        grid = generate(spec.seed, 0.0, n * dt, n, model.m, spec.paths)
        traj = integrate(
            model, scheme, state0, grid,
            debug=spec.debug_identities,
            fast_linear=spec.linear_fast_path and scheme == "dlr_em",
            rank_policy=spec.rank_policy)
        horizon = n * dt
        if scheme == "dlr_em":
            k_bound = k1_bound(horizon, e0, c_lgb)
        else:
            k_bound = k4_bound(horizon, e0, c_lgb, horizon)
        return scheme, dt, traj, k_bound

    cells = [(scheme, dt) for scheme in spec.schemes
             for dt in spec.dt_values]
    results = _map_cells(run_cell, cells)

    outputs = []
    violation_rows = []
    failures = []
    traces = {}
    for scheme, dt, traj, k_bound in results:
        if traj.error:
            failures.append({"scheme": scheme, "dt": dt,
                             "error": traj.error})
        observed = traj.sigma_min_gramians
        valid = np.isfinite(observed)
        last = int(np.max(np.nonzero(valid))) if valid.any() else -1
        times = traj.times[:last + 1]
        sigma = observed[:last + 1]
        sigma_0 = sigma[0] if sigma.size else 0.0
        sup_msq = float(np.nanmax(traj.mean_square_norms)) \
            if np.isfinite(traj.mean_square_norms).any() else np.inf

        simple = np.full(sigma.shape, sigma_b * dt)
        refined = np.empty_like(sigma)
        if sigma.size:
            denom = 4.0 * c_lgb * (1.0 + k_bound)
            cap = sigma_b ** 2 / denom if denom > 0.0 else np.inf
            refined[0] = min(sigma_0, cap)
            for i in range(1, sigma.size):
                refined[i] = gramian_bound_refined(
                    sigma_0, sigma_b, c_lgb, k_bound, dt, i - 1)
        dt_hat = np.array([dt_condition(max(s, 0.0), c_lgb, sup_msq)
                           for s in sigma])

        trace = BoundTrace(times=times, sigma_k_observed=sigma,
                           bound_simple=simple, bound_refined=refined,
                           dt_condition=dt_hat)
        traces[(scheme, dt)] = trace
        name = "singular_values_%s_dt%s.csv" % (scheme, _g(dt))
        write_bound_trace_csv(trace, os.path.join(spec.output_dir, name))
        outputs.append(name)

        if sigma_b > 0.0:
            threshold = GRAMIAN_FLOOR_FRACTION * sigma_b * dt
            for i in range(1, sigma.size):
                if sigma[i] < threshold:
                    violation_rows.append(
                        (scheme, _g(dt), "%.17g" % times[i],
                         "%.17g" % sigma[i], "%.17g" % threshold))

    _write_rows(os.path.join(spec.output_dir, "violations.csv"),
                "scheme,dt,t,sigma_k,threshold", violation_rows)
    outputs.append("violations.csv")

    summary = {"violations": len(violation_rows), "failures": failures}
    _write_manifest(spec, spec.output_dir, outputs,
                    time.monotonic() - started, summary)
    return {"traces": traces, "violations": violation_rows,
            "failures": failures, "output_dir": spec.output_dir}


def classify_stability(initial, final, completed):
    """Label one run from its first and last mean-square norms.

    A run that already contracted below the stable threshold counts as
    stable even if a later step failed (the factorization degenerates
    once the ensemble underflows); any other failure or overflow is
    unstable.
    """
    if np.isfinite(final) and final < STABLE_FACTOR * initial:
        return "stable"
    if not completed or not np.isfinite(final):
        return "unstable"
    if final > UNSTABLE_FACTOR * initial:
        return "unstable"
    return "inconclusive"


def run_stability(spec):
    """Mean-square norm traces and a stable/unstable verdict per cell.

    Writes norms_<scheme>_dt<dt>.csv (t, mean_square_norm over the
    computed prefix) and classification.csv; overflowing or failing
    runs classify as unstable.
    """
    started = time.monotonic()
    model, samples, state0 = _prepare(spec)

    def run_cell(cell):
        scheme, dt = cell
        n = _steps_for(dt, spec.t_final, spec.name)
        grid = generate(spec.seed, 0.0, n * dt, n, model.m, spec.paths)
        traj = integrate(
            model, scheme, state0, grid,
            debug=spec.debug_identities,
            fast_linear=spec.linear_fast_path and scheme == "dlr_em",
            rank_policy=spec.rank_policy)
        return scheme, dt, traj

    cells = [(scheme, dt) for scheme in spec.schemes
             for dt in spec.dt_values]
    results = _map_cells(run_cell, cells)

    outputs = []
    class_rows = []
    classifications = {}
    for scheme, dt, traj in results:
        msq = traj.mean_square_norms
        computed = ~np.isnan(msq)
        last = int(np.max(np.nonzero(computed))) if computed.any() else -1
        rows = [("%.17g" % traj.times[i], "%.17g" % msq[i])
                for i in range(last + 1)]
        name = "norms_%s_dt%s.csv" % (scheme, _g(dt))
        _write_rows(os.path.join(spec.output_dir, name),
                    "t,mean_square_norm", rows)
        outputs.append(name)

        initial = msq[0] if last >= 0 else np.nan
        final = msq[last] if last >= 0 else np.nan
        verdict = classify_stability(initial, final, traj.completed)
        classifications[(scheme, dt)] = verdict
        class_rows.append((scheme, _g(dt), verdict))

    _write_rows(os.path.join(spec.output_dir, "classification.csv"),
                "scheme,dt,classification", class_rows)
    outputs.append("classification.csv")

    summary = {"classification": {"%s dt=%s" % (s, _g(dt)): v
                                  for (s, dt), v in classifications.items()}}
    _write_manifest(spec, spec.output_dir, outputs,
                    time.monotonic() - started, summary)
    return {"classifications": classifications,
            "output_dir": spec.output_dir}


def run_single(spec):
    """One scheme, one grid, with factored snapshots at chosen times.

    Writes trace.csv (t, mean_square_norm, sigma_k per node) and
    snapshot_<t>.csv files; the full-order scheme is serialized with
    an identity basis so snapshots share one format.
    """
    started = time.monotonic()
    model, samples, state0 = _prepare(spec)
    scheme = spec.schemes[0]
    dt = spec.dt_values[0]
    n = _steps_for(dt, spec.t_final, spec.name)
    grid = generate(spec.seed, 0.0, n * dt, n, model.m, spec.paths)
    snapshot_nodes = [int(round(t / dt)) for t in spec.snapshot_times]
    record = sorted({0, n, *snapshot_nodes})

    init = samples if scheme == "em" else state0
    traj = integrate(
        model, scheme, init, grid,
        record_nodes=record, keep_states=True,
        debug=spec.debug_identities,
        fast_linear=spec.linear_fast_path and scheme == "dlr_em",
        rank_policy=spec.rank_policy)
    if traj.error:
        raise StepFailed("single run failed: %s" % traj.error)

    outputs = []
    by_node = dict(zip(traj.node_indices,
                       traj.node_states if scheme != "em"
                       else traj.node_values))
    for node in snapshot_nodes:
        entry = by_node[node]
        if scheme == "em":
            entry = EnsembleState(t=traj.times[node],
                                  u=np.eye(model.d), y=entry)
        name = "snapshot_t%s.csv" % _g(traj.times[node])
        save_snapshot(entry, os.path.join(spec.output_dir, name))
        outputs.append(name)

    trace_rows = [("%.17g" % traj.times[i],
                   "%.17g" % traj.mean_square_norms[i],
                   "%.17g" % traj.sigma_min_gramians[i])
                  for i in range(n + 1)]
    _write_rows(os.path.join(spec.output_dir, "trace.csv"),
                "t,mean_square_norm,sigma_k", trace_rows)
    outputs.append("trace.csv")

    summary = {"final_mean_square_norm": float(traj.mean_square_norms[-1])}
    _write_manifest(spec, spec.output_dir, outputs,
                    time.monotonic() - started, summary)
    return {"trajectory": traj, "output_dir": spec.output_dir}


_RUNNERS = {
    "convergence": run_convergence,
    "singular_values": run_singular_values,
    "stability": run_stability,
    "single_run": run_single,
}


def run_experiment(spec):
    """Dispatch one ExperimentSpec to its runner."""
    return _RUNNERS[spec.kind](spec)
