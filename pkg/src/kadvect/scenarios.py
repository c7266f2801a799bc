"""The runnable scenarios: each turns a :class:`ScenarioConfig` into tables and verdicts.

Every scenario returns a :class:`ScenarioResult`; :func:`run` writes its
tables as CSV files, a ``summary.json`` and a ``manifest.json`` into the
output directory.  Numeric outputs depend only on the config (never on the
thread count), so CSVs are byte-identical across re-runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .advection import (Chain, conservation_check, kiw_residual, kiw_transport_gap,
                        specialization_suite, weak_residual, weak_residual_convergence)
from .config import SCENARIOS, RunManifest, ScenarioConfig, new_manifest
from .counterexample import (GammaSelection, HolderDrift, LinearRadialDrift, ball_l2_distance,
                             ball_volume, characteristic_ode_residual, holder_probe_ratio,
                             mollified_drifts, noise_selection_experiment, weak_residual_study)
from .exterior.fields import QuadratureGrid, TestForm, VectorField
from .flow.benchmarks import (additive_exact_solution_error, additive_noise_error,
                              geometric_strong_error, round_trip_sweep)
from .flow.brownian import generate_paths, uniform_grid
from .flow.integrate import flow_convergence_sweep, integrate_flow, jacobian_moments
from .identities import calculus_identity_suite, summarize
from .mollifier import epsilon_sweep
from .registry import build_form, build_vector_field
from .reports import ConvergenceReport, write_csv, write_json


@dataclass
class Table:
    name: str
    rows: list[dict]
    header: list[str] | None = None


@dataclass
class ScenarioResult:
    tables: list[Table]
    verdicts: dict[str, bool]
    summary: dict[str, Any] = field(default_factory=dict)
    dump: Callable[[], list[dict]] | None = None


class ScenarioError(RuntimeError):
    """A scenario could not run with the given config (not a numeric failure)."""


# ---------------------------------------------------------------------------
# field resolution
def _role_seed(seed: int, offset: int) -> int:
    return (int(seed) * 1_000_003 + offset) % 2**32


def _random_spec(seed: int, offset: int, **kw) -> dict:
    return {"name": "random", "seed": _role_seed(seed, offset), **kw}


def _default_xi_spec(n: int, seed: int, amp: float = 0.3) -> dict:
    if n == 2:
        return {"sum": [{"name": "trig", "wavevector": [0.0, 1.0], "value": [amp, 0.0]},
                        {"name": "trig", "wavevector": [1.0, 0.0], "phase": np.pi / 2,
                         "value": [0.0, amp]}]}
    return _random_spec(seed, 6, scale=amp)


class _Fields:
    """Field lookup with seeded defaults; records the specs actually used."""

    def __init__(self, cfg: ScenarioConfig, n: int):
        self.cfg, self.n, self.used = cfg, n, {}

    def _spec(self, role, default):
        spec = self.cfg.fields.get(role, default)
        self.used[role] = spec
        return spec

    def vector(self, role: str, default: dict) -> VectorField:
        return build_vector_field(self._spec(role, default), self.n)

    def vectors(self, role: str, default: list[dict]) -> list[VectorField]:
        spec = self._spec(role, default)
        specs = spec if isinstance(spec, list) else [spec]
        return [build_vector_field(s, self.n) for s in specs]

    def form(self, role: str, k: int, default: dict):
        return build_form(self._spec(role, default), self.n, k)

    def test_form(self, k: int, offset: int = 3) -> TestForm:
        base = self.form("theta", k, _random_spec(self.cfg.seed, offset))
        radius = float(self.cfg.param("theta_radius", 1.0))
        center = self.cfg.param("theta_center", None)
        return TestForm(base, radius, center)


def _report_rows(rep: ConvergenceReport, **extra) -> list[dict]:
    return [{**extra, **r} for r in rep.rows()]


def _levels_paths(cfg: ScenarioConfig, N: int, n_paths: int, levels, *, zero: bool = False,
                  seed_offset: int = 0):
    t = cfg.resolved("time")
    steps = int(t["steps"])
    if steps % 2 ** max(levels) != 0:
        raise ScenarioError(f"time.steps = {steps} must be divisible by 2^{max(levels)}")
    return generate_paths(N, uniform_grid(float(t["T"]), steps), seed=cfg.seed + seed_offset,
                          n_paths=n_paths, zero=zero)


def _x0(cfg: ScenarioConfig, n: int) -> np.ndarray:
    if "x0" in cfg.params:
        x0 = np.atleast_2d(np.asarray(cfg.params["x0"], dtype=float))
        if x0.shape[-1] != n:
            raise ScenarioError(f"params.x0 must have {n} columns")
        return x0
    x0 = np.zeros((3, n))
    x0[1, 0], x0[2, 0] = 0.3, -0.5
    if n > 1:
        x0[1, 1], x0[2, 1] = 0.1, 0.4
    return x0


def _dump_ensemble(b, xis, paths, x0, threads):
    def dump():
        return integrate_flow(b, xis, paths, x0, store="all", threads=threads).dump_rows()
    return dump


# ---------------------------------------------------------------------------
# scenarios
def run_calculus_identities(cfg: ScenarioConfig, threads: int, **_) -> ScenarioResult:
    n = cfg.resolved("n")
    checks = calculus_identity_suite(cfg.seed, int(cfg.param("n_cases", 20)),
                                     dims=tuple(range(1, n + 1)))
    summ = summarize(checks)
    return ScenarioResult([Table("identities", [c.row() for c in checks])],
                          {name: s["pass"] for name, s in summ.items()}, {"identities": summ})


def run_specializations(cfg: ScenarioConfig, threads: int, **_) -> ScenarioResult:
    res = specialization_suite(cfg.seed, int(cfg.param("n_cases", 10)),
                               h=float(cfg.param("fd_step", 1e-4)))
    rows = [{"identity": key, **val} for key, val in res.items() if isinstance(val, dict)]
    return ScenarioResult([Table("specializations", rows)],
                          {r["identity"]: r["pass"] for r in rows}, {"specializations": res})


def run_commutator_sweep(cfg: ScenarioConfig, threads: int, **_) -> ScenarioResult:
    n, k = cfg.resolved("n"), cfg.resolved("k")
    eps = cfg.resolved("eps_list")
    ratio = float(cfg.param("ratio", 1e-2))
    control_tol = float(cfg.param("control_tol", 1e-8))
    q = int(cfg.param("grid_points", 32))
    kq = int(cfg.param("kernel_points", 16))
    f = _Fields(cfg, n)
    rows, cases = [], []
    verdict = {"ratio": True, "bound": True, "split_agreement": True}
    first = None
    for case in range(int(cfg.param("n_cases", 5))):
        sub = _Fields(cfg, n)
        off = 100 * (case + 1)
        b = sub.vector("b", _random_spec(cfg.seed, off + 1))
        xi = sub.vectors("xi", [_random_spec(cfg.seed, off + 2)])[0]
        K = sub.form("K", k, _random_spec(cfg.seed, off + 3))
        theta = TestForm(sub.form("theta", k, _random_spec(cfg.seed, off + 4)),
                         float(cfg.param("theta_radius", 1.0)), cfg.param("theta_center", None))
        f.used.update(sub.used)
        first = first or (K, theta)
        grid = QuadratureGrid.cube(n, theta.support_radius, q, center=theta.center)
        for op, vf in (("b", b), ("xi", xi)):
            rep = epsilon_sweep(op, {op: vf, "K": K, "theta": theta, "grid": grid,
                                     "points_per_axis": kq}, eps, ratio=ratio)
            # an identically vanishing commutator (e.g. constant fields) passes vacuously
            ok_ratio = bool(rep.info["final_ratio"] < ratio or max(rep.errors) < control_tol)
            verdict["ratio"] &= ok_ratio
            verdict["bound"] &= bool(rep.info["bound_holds"])
            split_ok = True
            for ev in rep.info["evaluations"]:
                row = {"operator": op, "case": case, **ev.row(),
                       "split_value": ev.split_value if ev.split_value is not None else ""}
                if ev.split_value is not None:
                    gap = abs(ev.split_value - ev.value)
                    split_ok &= gap <= ratio * ev.abs_value + 3 * (
                        ev.error_estimate + ev.split_error_estimate) + 1e-12
                rows.append(row)
            verdict["split_agreement"] &= split_ok
            cases.append({"operator": op, "case": case, "rate": rep.rate,
                          "final_ratio": rep.info["final_ratio"], "ratio_pass": ok_ratio,
                          "bound_holds": rep.info["bound_holds"]})
    K, theta = first
    grid = QuadratureGrid.cube(n, theta.support_radius, q, center=theta.center)
    const = VectorField.constant(np.linspace(0.3, -0.7, n))
    worst = 0.0
    for op in ("b", "xi"):
        rep = epsilon_sweep(op, {op: const, "K": K, "theta": theta, "grid": grid,
                                 "points_per_axis": kq, "split": False}, eps, ratio=ratio)
        worst = max(worst, max(rep.errors))
        for ev in rep.info["evaluations"]:
            rows.append({"operator": op, "case": "constant-control", **ev.row(), "split_value": ""})
    verdict["constant_controls"] = worst < control_tol
    header = ["operator", "case", "epsilon", "value", "abs_value", "split_value", "bound_rhs",
              "fitted_constant", "error_estimate"]
    return ScenarioResult([Table("commutator", rows, header), Table("commutator_cases", cases)],
                          verdict, {"cases": cases, "control_max_abs": worst, "ratio": ratio,
                                    "eps_list": eps, "fields": f.used})


def _holder_setup(cfg: ScenarioConfig, n: int):
    drift = HolderDrift(float(cfg.param("alpha", 0.5)), float(cfg.param("R", 1.0)), n)
    amp = float(cfg.param("xi_amplitude", 1.0))
    f = _Fields(cfg, n)
    xis = f.vectors("xi", [{"name": "constant", "value": list(amp * np.eye(n)[j])}
                           for j in range(n)])
    return drift, xis, f


def run_flow_convergence(cfg: ScenarioConfig, threads: int, **_) -> ScenarioResult:
    n = cfg.resolved("n")
    eps = cfg.resolved("eps_list")
    t = cfg.resolved("time")
    P = cfg.resolved("n_paths")
    drift, xis, f = _holder_setup(cfg, n)
    x0 = _x0(cfg, n)
    grid_t = uniform_grid(float(t["T"]), int(t["steps"]))
    paths = generate_paths(len(xis), grid_t, seed=cfg.seed, n_paths=P)
    bs = mollified_drifts(drift, eps, points_per_axis=int(cfg.param("kernel_points", 12)))
    bs.append(drift.field())
    sweep = flow_convergence_sweep(bs, xis, paths, x0, p=float(cfg.param("p", 2.0)),
                                   params=list(eps) + [0.0], threads=threads)
    tables = [Table("flow_sweep", _report_rows(sweep))]
    verdicts = {"mollified_flows_decrease": sweep.verdict}

    # Jacobian moments of the finest mollified flow under path doubling
    Pm = int(cfg.param("moment_paths", 512))
    mom_rows, stable = [], True
    for p in (2.0, 4.0):
        ests = []
        for PP in (Pm, 2 * Pm):
            pp = generate_paths(len(xis), grid_t, seed=cfg.seed + 1, n_paths=PP)
            est, se = jacobian_moments(integrate_flow(bs[-2], xis, pp, x0, threads=threads), p)
            ests.append(est)
            mom_rows.append({"p": p, "paths": PP, "estimate": est, "standard_error": se})
        stable &= max(ests) <= 2.0 * min(ests)
    tables.append(Table("jacobian_moments", mom_rows))
    verdicts["jacobian_moments_stable"] = stable

    # integrator benchmarks
    lv = [int(v) for v in cfg.param("sde_levels", [6, 7, 8, 9, 10])]
    gpaths = generate_paths(1, uniform_grid(1.0, 2 ** max(lv)), seed=cfg.seed + 2,
                            n_paths=int(cfg.param("sde_paths", 256)))
    geo = geometric_strong_error(float(cfg.param("gbm_mu", 0.0)),
                                 float(cfg.param("gbm_sigma", 1.0)), gpaths, lv)
    tables.append(Table("sde_strong", _report_rows(geo)))
    verdicts["geometric_strong_rate"] = geo.verdict
    coarse = gpaths.coarsen(2 ** (max(lv) - min(lv)))
    add = {"exact_solution": additive_exact_solution_error(coarse),
           "heun_recursion": additive_noise_error(coarse)}
    tables.append(Table("sde_additive", [{"case": key, "max_deviation": v, "tolerance": 1e-12}
                                         for key, v in add.items()]))
    verdicts["additive_exact"] = all(v <= 1e-12 for v in add.values())
    rt_lv = [int(v) for v in cfg.param("roundtrip_levels", [5, 6, 7, 8, 9])]
    rb = f.vector("b_roundtrip", _random_spec(cfg.seed, 11, scale=0.5))
    rxi = f.vectors("xi_roundtrip", [_random_spec(cfg.seed, 12, scale=0.3)])
    rpaths = generate_paths(len(rxi), uniform_grid(1.0, 2 ** max(rt_lv)), seed=cfg.seed + 3,
                            n_paths=int(cfg.param("roundtrip_paths", 32)))
    rng = np.random.default_rng(_role_seed(cfg.seed, 13))
    rt = round_trip_sweep(rb, rxi, rpaths, rng.uniform(-1, 1, size=(5, n)), rt_lv,
                          threads=threads)
    tables.append(Table("roundtrip", _report_rows(rt)))
    verdicts["roundtrip_rate"] = rt.verdict
    summary = {"sweep": sweep.summary(), "geometric": geo.summary(), "roundtrip": rt.summary(),
               "additive": add, "fields": f.used, "alpha": drift.alpha, "R": drift.R}
    return ScenarioResult(tables, verdicts, summary,
                          _dump_ensemble(bs[-2], xis, paths, x0, threads))


def _weak_setup(cfg: ScenarioConfig):
    n, k = cfg.resolved("n"), cfg.resolved("k")
    f = _Fields(cfg, n)
    K0 = f.form("K0", k, _random_spec(cfg.seed, 2))
    b = f.vector("b", _random_spec(cfg.seed, 1, scale=0.5))
    xis = f.vectors("xi", [_default_xi_spec(n, cfg.seed)])
    theta = f.test_form(k)
    grid = QuadratureGrid.cube(n, float(cfg.param("grid_half_width", 1.6)),
                               int(cfg.param("grid_points", 28)))
    levels = [int(v) for v in cfg.param("levels", [4, 3, 2, 1, 0])]
    return n, k, f, K0, b, xis, theta, grid, levels


def run_weak_residual(cfg: ScenarioConfig, threads: int, **_) -> ScenarioResult:
    n, k, f, K0, b, xis, theta, grid, levels = _weak_setup(cfg)
    det = _levels_paths(cfg, 1, 1, levels, zero=True)
    sto = _levels_paths(cfg, len(xis), cfg.resolved("n_paths"), levels)
    rd = weak_residual_convergence(K0, b, [], det, theta, grid, levels,
                                   threshold=float(cfg.param("deterministic_rate", 0.9)),
                                   threads=threads)
    rs = weak_residual_convergence(K0, b, xis, sto, theta, grid, levels,
                                   threshold=float(cfg.param("stochastic_rate", 0.4)),
                                   threads=threads)
    finest = weak_residual(K0, b, xis, sto, theta, grid, threads=threads)
    tables = [Table("weak_residual", _report_rows(rd, case="deterministic")
                    + _report_rows(rs, case="stochastic"), ["case", "dt", "error"]),
              Table("weak_residual_paths", finest.rows())]
    summary = {"deterministic": rd.summary(), "stochastic": rs.summary(),
               "finest_rms": finest.rms, "finest_error_estimate": finest.error_estimate,
               "flagged": finest.flagged, "fields": f.used}
    return ScenarioResult(tables, {"deterministic_rate": rd.verdict, "stochastic_rate": rs.verdict},
                          summary, _dump_ensemble(b, xis, sto, _x0(cfg, n), threads))


def run_kiw(cfg: ScenarioConfig, threads: int, **_) -> ScenarioResult:
    n, k, f, K0, b, xis, theta, grid, levels = _weak_setup(cfg)
    G = f.form("G", k, _random_spec(cfg.seed, 4))
    H = [f.form("H", k, _random_spec(cfg.seed, 5))]
    det = _levels_paths(cfg, 1, 1, levels, zero=True)
    sto = _levels_paths(cfg, len(xis), cfg.resolved("n_paths"), levels)
    rows, dets, stos = [], [], []
    for lv in levels:
        pd = det.coarsen(2**lv) if lv else det
        ps = sto.coarsen(2**lv) if lv else sto
        gd = kiw_transport_gap(K0, b, [], pd, theta, grid, threads=threads).rms_gap
        gs = kiw_transport_gap(K0, b, xis, ps, theta, grid, threads=threads).rms_gap
        dets.append(gd)
        stos.append(gs)
        rows.append({"dt": float(ps.dt[0]), "deterministic_gap": gd, "stochastic_rms_gap": gs})
    dt = [r["dt"] for r in rows]
    rd = ConvergenceReport("dt", dt, dets, criterion="rate >= 0.9")
    rs = ConvergenceReport("dt", dt, stos, criterion="rate >= 0.4")
    rd.verdict = bool(rd.rate >= float(cfg.param("deterministic_rate", 0.9)))
    rs.verdict = bool(rs.rate >= float(cfg.param("stochastic_rate", 0.4)))

    # the general identity with an explicit semimartingale K(t)
    both = _levels_paths(cfg, len(H) + len(xis), cfg.resolved("n_paths"), levels, seed_offset=1)
    gen_rows, cross = [], {}
    for coupling in ("independent", "same"):
        rep = kiw_residual(K0, G, H, b, xis, both, theta, grid, coupling=coupling,
                           threads=threads)
        ct = rep.cross_term
        se = float(ct.std(ddof=1) / np.sqrt(ct.size))
        cross[coupling] = {"mean": float(ct.mean()), "standard_error": se}
        gen_rows.append({"coupling": coupling, "rms_gap": rep.rms_gap,
                         "cross_term_mean": float(ct.mean()), "cross_term_se": se})
    ind = cross["independent"]
    cross_ok = abs(ind["mean"]) <= 3.0 * ind["standard_error"]
    tables = [Table("kiw_transport", rows), Table("kiw_general", gen_rows),
              Table("kiw_paths_same_driver", rep.rows())]
    summary = {"deterministic": rd.summary(), "stochastic": rs.summary(), "cross_term": cross,
               "fields": f.used}
    return ScenarioResult(tables, {"transport_gap_deterministic_rate": rd.verdict,
                                   "transport_gap_stochastic_rate": rs.verdict,
                                   "independent_cross_term_zero": cross_ok},
                          summary, _dump_ensemble(b, xis, sto, _x0(cfg, n), threads))


def _default_chain(cfg: ScenarioConfig, n: int, k: int) -> Chain:
    if "chain" in cfg.params:
        return Chain.from_json(cfg.params["chain"])
    if k == 1:
        p0, p1 = np.zeros(n), np.zeros(n)
        p0[0], p1[0] = -0.5, 0.4
        if n > 1:
            p0[1], p1[1] = -0.2, 0.6
        return Chain.segment(p0, p1)
    if k == 2 and n == 2:
        return Chain.unit_square((-0.5, -0.5))
    v = np.zeros((1, k + 1, n))
    v[0, :, :] = -0.3
    for i in range(k):
        v[0, i + 1, i] += 0.8
    return Chain(v, np.ones(1))


def _default_div_free(n: int) -> dict:
    if n == 2:
        return {"sum": [{"name": "trig", "wavevector": [0.0, 1.0], "value": [0.7, 0.0]},
                        {"name": "trig", "wavevector": [1.0, 0.0], "phase": np.pi / 2,
                         "value": [0.0, 0.7]}]}
    if n == 1:
        return {"name": "constant", "value": [0.5]}
    return {"name": "rotation", "omega": 0.7}


def run_conservation(cfg: ScenarioConfig, threads: int, **_) -> ScenarioResult:
    n, k = cfg.resolved("n"), cfg.resolved("k")
    f = _Fields(cfg, n)
    K0 = f.form("K0", k, _random_spec(cfg.seed, 2))
    chain = _default_chain(cfg, n, k)
    bdet = f.vector("b_div_free", _default_div_free(n))
    det_steps = int(cfg.param("deterministic_steps", 64))
    det = generate_paths(1, uniform_grid(float(cfg.param("deterministic_T", 1.0)), det_steps),
                         seed=cfg.seed, n_paths=1, zero=True)
    rdet = conservation_check(K0, chain, bdet, [], det, threads=threads)
    det_tol = float(cfg.param("deterministic_tol", 1e-6))
    b = f.vector("b", _random_spec(cfg.seed, 1, scale=0.5))
    xis = f.vectors("xi", [_default_xi_spec(n, cfg.seed)])
    levels = [int(v) for v in cfg.param("levels", [4, 3, 2, 1, 0])]
    sto = _levels_paths(cfg, len(xis), cfg.resolved("n_paths"), levels)
    dts, gaps = [], []
    for lv in levels:
        p = sto.coarsen(2**lv) if lv else sto
        dts.append(float(p.dt[0]))
        gaps.append(conservation_check(K0, chain, b, xis, p, threads=threads).rms_gap)
    rs = ConvergenceReport("dt", dts, gaps, criterion="rate >= 0.4")
    rs.verdict = bool(rs.rate >= float(cfg.param("stochastic_rate", 0.4)))
    tables = [Table("conservation_deterministic",
                    [{"initial": rdet.initial, "final": float(rdet.final[0]),
                      "relative_gap": float(rdet.relative_gap[0]), "tolerance": det_tol}]),
              Table("conservation_stochastic", _report_rows(rs))]
    summary = {"deterministic_gap": float(rdet.rms_gap), "stochastic": rs.summary(),
               "chain": chain.to_json(), "fields": f.used}
    return ScenarioResult(tables, {"deterministic_gap": rdet.rms_gap < det_tol,
                                   "stochastic_rate": rs.verdict}, summary,
                          _dump_ensemble(b, xis, sto, chain.nodes()[0].reshape(-1, n)[:4],
                                         threads))


def run_counterexample(cfg: ScenarioConfig, threads: int, **_) -> ScenarioResult:
    n = cfg.resolved("n")
    alpha = float(cfg.param("alpha", 0.5))
    drift = HolderDrift(alpha, float(cfg.param("R", 10.0)), n)
    f = _Fields(cfg, n)
    K0 = f.form("K0", 0, {"name": "gaussian_bump", "width": float(np.sqrt(0.5)), "value": [1.0]})
    center = cfg.param("theta_center", list(np.r_[0.2, 0.1, np.zeros(max(n - 2, 0))][:n]))
    theta = TestForm(f.form("theta", 0, _random_spec(cfg.seed, 3)),
                     float(cfg.param("theta_radius", 1.0)), center)
    window = tuple(float(v) for v in cfg.param("window", [0.3, 0.8]))
    rel_tol = float(cfg.param("relative_tol", 1e-3))
    levels = [tuple(int(x) for x in lv) for lv in
              cfg.param("levels", [[12, 16, 4], [24, 32, 8], [48, 64, 16]])]
    sels = [GammaSelection.matched(K0), GammaSelection.zero()]
    if n == 2:
        sels.append(GammaSelection.angular(float(cfg.param("angular_amplitude", 0.7))))
    rows, verdicts, finals = [], {}, {}
    for g in sels:
        st = weak_residual_study(g, K0, theta, window, drift, levels)
        rows += st.rows()
        finals[st.label] = st.final
        verdicts[f"residual_{st.label}"] = bool(st.decays and st.final < rel_tol)
    ctl = LinearRadialDrift(1.0, alpha, n)
    ctl_res = {}
    for g in sels[:2]:
        st = weak_residual_study(g, K0, theta, window, ctl, levels[-1:])
        ctl_res[st.label] = st.final
        rows += [{**r, "selection": f"control-{st.label}"} for r in st.rows()]
    verdicts["control_detects_wrong_fill"] = min(ctl_res.values()) > 100 * max(finals.values())

    t_l2 = float(cfg.param("l2_time", window[1]))
    dist = ball_l2_distance(sels[0], sels[1], K0, t_l2, drift)
    c = abs(float(sels[0](np.eye(n)[:1], np.zeros(1))[0, 0] - sels[1](np.eye(n)[:1],
                                                                    np.zeros(1))[0, 0]))
    analytic = c * np.sqrt(ball_volume(n, float(drift.ball_radius(t_l2))))
    verdicts["l2_distance"] = abs(dist - analytic) <= 0.1 * analytic

    m = int(cfg.param("probe_pairs", 10_000))
    radius = float(cfg.param("probe_radius", 2.0 * drift.R))
    probes = [holder_probe_ratio(drift.field(), alpha, radius, mm, seed=cfg.seed)
              for mm in (m, 4 * m)]
    verdicts["holder_probe_stable"] = abs(probes[1] - probes[0]) <= 0.05 * probes[1]

    a_ode = float(cfg.param("ode_alpha", 0.3))
    v = np.zeros(n)
    v[0] = 0.6
    v[min(1, n - 1)] += 0.8
    v /= np.linalg.norm(v)
    ode = characteristic_ode_residual(a_ode, drift.R, v, 0.2, 1.0,
                                      cfg.param("ode_steps", [2e-2, 1e-2, 5e-3, 2.5e-3]))
    verdicts["characteristic_ode_rate"] = ode.verdict
    tables = [Table("counterexample_residuals", rows),
              Table("counterexample_l2", [{"time": t_l2, "distance": dist, "analytic": analytic,
                                           "relative_error": abs(dist - analytic) / analytic}]),
              Table("holder_probes", [{"pairs": mm, "ratio": r} for mm, r in
                                      zip((m, 4 * m), probes)]),
              Table("characteristic_ode", _report_rows(ode))]
    summary = {"relative_residuals": finals, "control_residuals": ctl_res, "l2_distance": dist,
               "l2_analytic": analytic, "holder_probes": probes, "ode": ode.summary(),
               "distinct_solutions": dist > 0 and all(f_ < rel_tol for f_ in finals.values()),
               "fields": f.used}
    return ScenarioResult(tables, verdicts, summary)


def run_noise_selection(cfg: ScenarioConfig, threads: int, **_) -> ScenarioResult:
    n = cfg.resolved("n")
    eps = cfg.resolved("eps_list")
    t = cfg.resolved("time")
    paths = generate_paths(n, uniform_grid(float(t["T"]), int(t["steps"])), seed=cfg.seed,
                           n_paths=cfg.resolved("n_paths"))
    alpha, R = float(cfg.param("alpha", 0.5)), float(cfg.param("R", 1.0))
    amp = float(cfg.param("xi_amplitude", 1.0))
    x0 = np.zeros((1, n))
    rep = noise_selection_experiment(alpha, R, amp, eps, paths, x0=x0,
                                     shift_fraction=float(cfg.param("shift_fraction", 0.3)),
                                     points_per_axis=int(cfg.param("kernel_points", 12)),
                                     threads=threads)
    drift = HolderDrift(alpha, R, n)
    b = mollified_drifts(drift, eps[-1:], points_per_axis=int(cfg.param("kernel_points", 12)))[0]
    xis = [VectorField.constant(amp * np.eye(n)[j]) for j in range(n)]
    return ScenarioResult([Table("noise_selection", _report_rows(rep))],
                          {"noise_on_gaps_decrease": rep.verdict}, {"report": rep.summary()},
                          _dump_ensemble(b, xis, paths, x0, threads))


RUNNERS: dict[str, Callable[..., ScenarioResult]] = {
    "calculus-identities": run_calculus_identities,
    "commutator-sweep": run_commutator_sweep,
    "flow-convergence": run_flow_convergence,
    "weak-residual": run_weak_residual,
    "kiw": run_kiw,
    "conservation": run_conservation,
    "counterexample": run_counterexample,
    "noise-selection": run_noise_selection,
    "specializations": run_specializations,
}
assert set(RUNNERS) == set(SCENARIOS)

DESCRIPTIONS = {
    "calculus-identities": "d^2 = 0, Cartan, Hodge double star, adjointness and pairing "
                           "identities on randomized forms",
    "commutator-sweep": "mollifier commutators for b and double commutators for xi over eps",
    "flow-convergence": "mollified Hoelder-drift flows, Jacobian moments, SDE benchmarks",
    "weak-residual": "weak-form residual of the pushforward solution under dt refinement",
    "kiw": "Ito-Wentzell identity: transport gap and explicit semimartingale forms",
    "conservation": "integral of K(t) over the advected chain against the initial integral",
    "counterexample": "two weak solutions for the Hoelder drift, distance, probes, ODE residual",
    "noise-selection": "coupled gaps of mollified flows with and without noise",
    "specializations": "volume form, 0-form and n = 3 curl identities; pushforward PDE checks",
}


def list_scenarios() -> str:
    w = max(map(len, SCENARIOS))
    return "\n".join(f"{s.ljust(w)}  {DESCRIPTIONS[s]}" for s in SCENARIOS)


def run(cfg: ScenarioConfig, *, threads: int = 1, dump_paths: bool = False) -> RunManifest:
    """Run ``cfg``, write its CSV tables, ``summary.json`` and ``manifest.json``."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    out = Path(cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise ScenarioError(f"output directory {out} is not writable: {e}") from None
    t0 = time.perf_counter()
    res = RUNNERS[cfg.scenario](cfg, threads)
    files = []
    for tb in res.tables:
        write_csv(out / f"{tb.name}.csv", tb.rows, tb.header)
        files.append(f"{tb.name}.csv")
    if dump_paths and res.dump is not None:
        write_csv(out / "paths.csv", res.dump())
        files.append("paths.csv")
    wall = time.perf_counter() - t0
    write_json(out / "summary.json", {"scenario": cfg.scenario, "config_hash": cfg.hash(),
                                      "verdicts": res.verdicts, "summary": res.summary})
    files.append("summary.json")
    man = new_manifest(cfg, wall, res.verdicts, files + ["manifest.json"], threads)
    write_json(out / "manifest.json", man.to_dict())
    return man
