"""Acceptance gate: criteria 1-9 at their stated tolerances and time limits.

Each test runs the shipped scenario config (seed 7), asserts every sub-condition
explicitly and records one PASS/FAIL line, printed in the terminal summary.
"""

import json
import time
from pathlib import Path

import pytest

from kadvect.config import load_config
from kadvect.scenarios import run

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "kadvect" / "configs"


def _run(name: str, out: Path, threads: int = 1, **overrides):
    cfg = load_config(CONFIGS / f"{name}.yaml", out=str(out))
    for key, val in overrides.items():
        if key == "params":
            cfg.params = {**cfg.params, **val}
        else:
            setattr(cfg, key, val)
    t0 = time.perf_counter()
    man = run(cfg, threads=threads)
    secs = time.perf_counter() - t0
    summary = json.loads((out / "summary.json").read_text())
    return man, summary["summary"], secs, cfg


@pytest.fixture(scope="module")
def flow_run(tmp_path_factory):
    return _run("flow-convergence", tmp_path_factory.mktemp("flow"))


def test_criterion_1_exterior_calculus(tmp_path, record_criterion):
    man, summ, secs, cfg = _run("calculus-identities", tmp_path)
    ids = summ["identities"]
    required = ("d_squared", "cartan", "hodge_double_star", "adjointness", "pairing")
    ok = (cfg.resolved("n") == 4 and all(ids[k]["cases"] >= 20 and ids[k]["pass"] for k in required)
          and all(man.verdicts.values()) and secs < 30)
    detail = ", ".join(f"{k} {ids[k]['passed']}/{ids[k]['cases']} max {ids[k]['max_residual']:.1e}"
                       for k in required)
    record_criterion(1, "exterior calculus suite", ok, detail, secs)
    assert cfg.resolved("n") == 4
    for k in required:
        assert ids[k]["cases"] >= 20 and ids[k]["pass"], (k, ids[k])
    assert all(man.verdicts.values()), man.verdicts
    assert secs < 30


def test_criterion_2_specializations(tmp_path, record_criterion):
    man, summ, secs, cfg = _run("specializations", tmp_path)
    spec = summ["specializations"]
    ok = all(spec[k]["pass"] for k in ("volume", "scalar", "mhd")) and secs < 30
    detail = ", ".join(f"{k} {spec[k]['max_residual']:.1e}" for k in ("volume", "scalar", "mhd"))
    record_criterion(2, "specialization identities", ok,
                     f"{cfg.param('n_cases', 10)} fields each; {detail}", secs)
    assert cfg.param("n_cases", 10) >= 10
    for k in ("volume", "scalar", "mhd"):
        assert spec[k]["pass"], (k, spec[k])
    assert all(man.verdicts.values()), man.verdicts
    assert secs < 30


def test_criterion_3_commutators(tmp_path, record_criterion):
    man, summ, secs, cfg = _run("commutator-sweep", tmp_path)
    v = man.verdicts
    cases = summ["cases"]
    worst_ratio = max(c["final_ratio"] for c in cases)
    n_cases = len({c["case"] for c in cases})
    ok = (n_cases >= 5 and v["ratio"] and v["bound"] and v["constant_controls"]
          and v["split_agreement"] and secs < 180)
    detail = (f"{n_cases} cases, eps {summ['eps_list']}; worst final ratio {worst_ratio:.4f} "
              f"(need < 1e-2); bound {v['bound']}; split {v['split_agreement']}; "
              f"controls max {summ['control_max_abs']:.1e}")
    record_criterion(3, "commutator convergence", ok, detail, secs)
    assert n_cases >= 5
    assert summ["eps_list"] == [0.2, 0.1, 0.05, 0.025]
    assert v["bound"], "calibrated bound violated"
    assert v["constant_controls"], summ["control_max_abs"]
    assert v["split_agreement"]
    assert secs < 180
    assert v["ratio"], f"final/initial ratio {worst_ratio:.4f} is not below 1e-2"


def test_criterion_4_sde_integrator(flow_run, record_criterion):
    man, summ, secs, cfg = flow_run
    geo, rt, add = summ["geometric"], summ["roundtrip"], summ["additive"]
    levels = cfg.param("sde_levels", [6, 7, 8, 9, 10])
    paths = cfg.param("sde_paths", 256)
    ok = (geo["rate"] >= 0.9 and rt["rate"] >= 0.9 and max(add.values()) <= 1e-12
          and paths >= 256 and secs < 120)
    detail = (f"geometric rate {geo['rate']:.3f} over 2^-{min(levels)}..2^-{max(levels)} with "
              f"{paths} paths; additive max dev {max(add.values()):.1e}; "
              f"round-trip rate {rt['rate']:.3f}")
    record_criterion(4, "SDE integrator", ok, detail, secs)
    assert sorted(levels) == [6, 7, 8, 9, 10] and paths >= 256
    assert geo["rate"] >= 0.9
    assert max(add.values()) <= 1e-12
    assert rt["rate"] >= 0.9
    assert secs < 120


def test_criterion_5_weak_form_and_kiw(tmp_path, record_criterion):
    m1, s1, t1, c1 = _run("weak-residual", tmp_path / "weak")
    m2, s2, t2, c2 = _run("kiw", tmp_path / "kiw")
    secs = t1 + t2
    ind = s2["cross_term"]["independent"]
    rates = {"weak det": s1["deterministic"]["rate"], "weak sto": s1["stochastic"]["rate"],
             "kiw det": s2["deterministic"]["rate"], "kiw sto": s2["stochastic"]["rate"]}
    cross_ok = abs(ind["mean"]) <= 3 * ind["standard_error"]
    ok = (rates["weak det"] >= 0.9 and rates["kiw det"] >= 0.9 and rates["weak sto"] >= 0.4
          and rates["kiw sto"] >= 0.4 and cross_ok and c1.resolved("n_paths") >= 64
          and c2.resolved("n_paths") >= 64 and secs < 180)
    detail = ", ".join(f"{k} rate {r:.2f}" for k, r in rates.items()) + (
        f"; independent cross term {ind['mean']:.1e} +- {ind['standard_error']:.1e}")
    record_criterion(5, "weak form and KIW residuals", ok, detail, secs)
    assert c1.resolved("n_paths") >= 64 and c2.resolved("n_paths") >= 64
    assert rates["weak det"] >= 0.9 and rates["kiw det"] >= 0.9
    assert rates["weak sto"] >= 0.4 and rates["kiw sto"] >= 0.4
    assert cross_ok
    assert secs < 180


def test_criterion_6_conservation(tmp_path, record_criterion):
    man, summ, secs, cfg = _run("conservation", tmp_path)
    gap, rate = summ["deterministic_gap"], summ["stochastic"]["rate"]
    ok = gap < 1e-6 and rate >= 0.4 and secs < 120
    record_criterion(6, "conservation law", ok,
                     f"deterministic gap {gap:.1e}; stochastic rate {rate:.2f}", secs)
    assert gap < 1e-6
    assert rate >= 0.4
    assert secs < 120


def test_criterion_7_counterexample(tmp_path, record_criterion):
    man, summ, secs, cfg = _run("counterexample", tmp_path)
    res = summ["relative_residuals"]
    dist, analytic = summ["l2_distance"], summ["l2_analytic"]
    p1, p4 = summ["holder_probes"]
    ode_rate = summ["ode"]["rate"]
    two = [res["matched"], res["zero"]]
    ok = (max(two) < 1e-3 and abs(dist - analytic) <= 0.1 * analytic and analytic > 0
          and abs(p4 - p1) <= 0.05 * p4 and ode_rate >= 1.9 and secs < 120)
    detail = (f"residuals matched {res['matched']:.1e}, zero {res['zero']:.1e}; L2 {dist:.4f} vs "
              f"{analytic:.4f}; probes {p1:.4f}/{p4:.4f}; ODE rate {ode_rate:.2f}")
    record_criterion(7, "counterexample", ok, detail, secs)
    assert max(two) < 1e-3
    assert man.verdicts["residual_matched"] and man.verdicts["residual_zero"]
    assert analytic > 0 and abs(dist - analytic) <= 0.1 * analytic
    assert abs(p4 - p1) <= 0.05 * p4
    assert ode_rate >= 1.9
    assert secs < 120


def test_criterion_8_flow_convergence(flow_run, tmp_path, record_criterion):
    man, summ, secs, cfg = flow_run
    errs = [float(r["error"]) for r in _csv(Path(cfg.output) / "flow_sweep.csv")]
    moments = _csv(Path(cfg.output) / "jacobian_moments.csv")
    by_p = {}
    for r in moments:
        by_p.setdefault(float(r["p"]), []).append(float(r["estimate"]))
    stable = all(max(v) <= 2 * min(v) for v in by_p.values())
    n_eps = len(cfg.resolved("eps_list"))
    ok = man.verdicts["mollified_flows_decrease"] and stable and n_eps == 4 and secs < 180
    detail = (f"errors {', '.join(f'{e:.2e}' for e in errs)}; moments "
              + "; ".join(f"p={int(p)}: {v[0]:.3g} vs {v[1]:.3g}" for p, v in by_p.items()))
    record_criterion(8, "flow-convergence sweeps", ok, detail, secs)
    assert n_eps == 4 and len(errs) == 4
    assert man.verdicts["mollified_flows_decrease"], errs
    assert set(by_p) == {2.0, 4.0} and stable, by_p
    assert secs < 180


def _csv(path: Path) -> list[dict]:
    import csv
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_criterion_9_reproducibility(tmp_path, record_criterion):
    t0 = time.perf_counter()
    checked, mismatched = 0, []
    for name, extra in (("conservation", {}), ("noise-selection", {}),
                        ("calculus-identities", {"n": 2, "params": {"n_cases": 4}})):
        outs = []
        for tag, threads in (("a", 1), ("b", 1), ("c", 2)):
            out = tmp_path / f"{name}-{tag}"
            _run(name, out, threads=threads, **extra)
            outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        for other in outs[1:]:
            assert other.keys() == outs[0].keys()
            for fname, data in outs[0].items():
                checked += 1
                if other[fname] != data:
                    mismatched.append(f"{name}/{fname}")
    secs = time.perf_counter() - t0
    ok = not mismatched and checked > 0
    record_criterion(9, "reproducibility", ok,
                     f"{checked} CSV comparisons (re-run and --threads 1 vs 2), "
                     f"{len(mismatched)} mismatches", secs)
    assert not mismatched, mismatched
