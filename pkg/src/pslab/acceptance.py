"""Acceptance criteria: one callable per criterion, with runtime budgets.

Each criterion returns a dict with ``name``, ``passed``, ``elapsed_s``,
``budget_s``, and ``details``; `pslab verify --suite acceptance` and the
pytest acceptance module both dispatch through :data:`CRITERIA`.
"""

from __future__ import annotations

import time

import numpy as np

from .grid import ComplexField, make_grid, mass, norm
from .harness import run_experiment
from .potentials import harmonic
from .propagators import PropagatorSpec, exact_quadratic_propagate, propagate


def _experiment_criterion(configs, merge=all):
    records = [run_experiment(c) for c in configs]
    details = {f"{r.experiment}[{i}]": {"criteria": r.criteria,
                                        "measurements_keys": sorted(r.measurements),
                                        "fits": r.fits}
               for i, r in enumerate(records)}
    return merge(r.passed for r in records), details, records


def criterion_mass_conservation():
    """Split-step conserves mass to 1e-12 relative over 1000 steps (d=1 and d=2)."""
    passed, details, recs = _experiment_criterion([
        {"experiment": "unitarity", "dimension": 1},
        {"experiment": "unitarity", "dimension": 2},
    ])
    details["drifts"] = [r.measurements["max_mass_drift"] for r in recs]
    return passed, details


def criterion_oracle_equivalence():
    """Split-step matches the exact quadratic kernel; halving dt gains 4x."""
    V = harmonic(1.0, 1)
    g = make_grid(1, 16.0, 512)
    x = g.axis_points()
    u0 = ComplexField(g, np.exp(-0.5 * (x - 1.0) ** 2) * np.exp(0.5j * x))
    u0 = ComplexField(g, u0.values / norm(u0))
    exact = exact_quadratic_propagate(V, u0, 1.0)
    errs = {}
    for dt in (1e-3, 5e-4):
        tr = propagate(PropagatorSpec(V, "split-step", dt=dt), u0, (0.0, 1.0),
                       stride=int(round(1.0 / dt)))
        errs[dt] = norm(tr.fields[-1] - exact)
    ratio = errs[1e-3] / errs[5e-4]
    passed = errs[1e-3] <= 1e-6 and abs(ratio - 4.0) <= 0.5
    return passed, {"l2_error_dt=1e-3": errs[1e-3], "halving_ratio": ratio}


def criterion_dispersive_exponent():
    """Fitted L1->Linf decay slope is -d/2 (V = 0 and harmonic, d = 1, 2)."""
    return _experiment_criterion([
        {"experiment": "dispersive", "dimension": 1},
        {"experiment": "dispersive", "dimension": 1, "potential": {"kind": "harmonic"}},
        {"experiment": "dispersive", "dimension": 2},
        {"experiment": "dispersive", "dimension": 2, "potential": {"kind": "harmonic"}},
    ])[:2]


def criterion_galilei_covariance():
    return _experiment_criterion([{"experiment": "galilei", "dimension": 1}])[:2]


def criterion_lens_identity():
    return _experiment_criterion([
        {"experiment": "lens", "dimension": 1},
        {"experiment": "lens", "dimension": 2},
    ])[:2]


def criterion_fbi_plancherel():
    return _experiment_criterion([{"experiment": "fbi", "dimension": 1}])[:2]


def criterion_wavepacket_frame():
    return _experiment_criterion([{"experiment": "frames", "dimension": 1}])[:2]


def criterion_classical_flow():
    return _experiment_criterion([{"experiment": "flow_report", "dimension": 1}])[:2]


def criterion_bilinear_scaling():
    return _experiment_criterion([
        {"experiment": "bilinear", "dimension": 1},
        {"experiment": "bilinear", "dimension": 1, "potential": {"kind": "harmonic"}},
        {"experiment": "bilinear", "dimension": 1,
         "potential": {"kind": "time-step-harmonic"}},
        {"experiment": "bilinear", "dimension": 2},
        {"experiment": "bilinear", "dimension": 2, "potential": {"kind": "magnetic"}},
    ])[:2]


def criterion_kernel_decay():
    return _experiment_criterion([{"experiment": "kernel_decay", "dimension": 1}])[:2]


def criterion_profile_recovery():
    return _experiment_criterion([{"experiment": "profiles", "dimension": 1}])[:2]


def criterion_interval_selection():
    return _experiment_criterion([{"experiment": "interval", "dimension": 1}])[:2]


#: (name, runtime budget in seconds, callable)
CRITERIA = [
    ("mass_conservation", 10.0, criterion_mass_conservation),
    ("oracle_equivalence", 30.0, criterion_oracle_equivalence),
    ("dispersive_exponent", 60.0, criterion_dispersive_exponent),
    ("galilei_covariance", 30.0, criterion_galilei_covariance),
    ("lens_identity", 30.0, criterion_lens_identity),
    ("fbi_plancherel", 30.0, criterion_fbi_plancherel),
    ("wavepacket_frame", 60.0, criterion_wavepacket_frame),
    ("classical_flow", 30.0, criterion_classical_flow),
    ("bilinear_scaling", 1500.0, criterion_bilinear_scaling),  # 5 min per case
    ("kernel_decay", 180.0, criterion_kernel_decay),
    ("profile_recovery", 120.0, criterion_profile_recovery),
    ("interval_selection", 60.0, criterion_interval_selection),
]


def run_criterion(name: str) -> dict:
    for cname, budget, fn in CRITERIA:
        if cname == name:
            start = time.perf_counter()
            passed, details = fn()
            elapsed = time.perf_counter() - start
            return {"name": cname, "passed": bool(passed), "elapsed_s": elapsed,
                    "budget_s": budget, "within_budget": elapsed < budget,
                    "details": details}
    raise KeyError(name)


def run_all(verbose: bool = True) -> list:
    out = []
    for cname, _, _ in CRITERIA:
        res = run_criterion(cname)
        out.append(res)
        if verbose:
            status = "PASS" if res["passed"] and res["within_budget"] else "FAIL"
            print(f"{status}  {cname}  ({res['elapsed_s']:.1f}s / "
                  f"budget {res['budget_s']:.0f}s)")
    return out
