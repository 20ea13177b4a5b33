"""Scenario files: parsing with field paths and evaluation of analysis requests.

A scenario is one JSON object::

    {
      "id": "qubit-flip",
      "internal": {"energies": [0, 1]}            # or {"H": matrix, "basis": matrix?}
      "state": matrix,                            # optional, default maximally mixed
      "dynamics": {"shiftinv": {...}}             # or {"instrument": {...}} or {"fq": {...}}
      "analyses": ["classify", "dilate", "tradeoff", {"window-sweep": {"m": [10, 50], "l": 2}},
                   "classical-compare"],
      "tolerances": {"eq": 1e-8},
      "seed": 7
    }

Matrices are row-major lists of ``[re, im]`` pairs (flat or nested by row);
real scalars are accepted for real entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classical import (
    birkhoff_decompose,
    classical_description,
    classical_work_entropy_bound,
    quantum_classical_equivalence,
)
from .fqext import (
    FQWorkExtraction,
    check_energy_conserving,
    eigenspace_supported,
    realize,
    to_cp,
)
from .hamiltonics import SpectralHamiltonian, decompose, from_energies
from .instrument import CPWorkExtraction, action_distance, classify, energy_tolerance, work_distribution
from .qcore import (
    DEFAULT_TOL,
    DimensionError,
    PreconditionError,
    QwxError,
    Tolerances,
    ValidationError,
    as_density,
    as_unitary,
    matrix_from_json,
    maximally_mixed,
)
from .shiftinv import (
    ShiftInvariantEngine,
    build_F,
    check_shift_invariant,
    check_stationary,
    controlled_engine,
    engine_instrument,
)
from .tradeoff import (
    analyze,
    cp_tradeoff,
    purify,
    purify_external,
    verify_tradeoff_entropy,
    verify_tradeoff_fidelity,
    window_bound,
)

ANALYSES = ("classify", "dilate", "tradeoff", "window-sweep", "classical-compare")
EQUIVALENCE_TOL = 1e-10


class ScenarioError(ValidationError):
    """Malformed scenario; the message starts with the offending field path."""


def _req(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        raise ScenarioError(f"{path}: expected an object")
    if key not in obj:
        raise ScenarioError(f"{path}.{key}: missing")
    return obj[key]


def _matrix(obj, path: str, dim: int | None = None) -> np.ndarray:
    try:
        return matrix_from_json(obj, dim, path)
    except (ValidationError, DimensionError, TypeError, ValueError) as e:
        msg = str(e)
        raise ScenarioError(msg if msg.startswith(path) else f"{path}: {msg}") from None


def _wrap(path: str, fn, *args, **kw):
    """Call ``fn`` and prefix validation failures with ``path``."""
    try:
        return fn(*args, **kw)
    except ScenarioError:
        raise
    except (ValidationError, DimensionError) as e:
        raise ScenarioError(f"{path}: {e}") from None


@dataclass
class Dynamics:
    """Parsed dynamics: exactly one of the three variants is set."""

    kind: str
    instrument: CPWorkExtraction | None = None
    fq: FQWorkExtraction | None = None
    engine: ShiftInvariantEngine | None = None
    rho_E1: np.ndarray | None = None
    target: np.ndarray | None = None

    def ext(self, H: SpectralHamiltonian, tol: Tolerances) -> CPWorkExtraction:
        if self.kind == "instrument":
            return self.instrument
        if self.kind == "fq":
            return to_cp(self.fq, H)
        return engine_instrument(self.engine, self.rho_E1, tol=tol)

    def quartet(self, tol: Tolerances) -> FQWorkExtraction | None:
        if self.kind == "fq":
            return self.fq
        if self.kind == "shiftinv":
            return self.engine.fq(self.rho_E1, tol=tol)
        return None


@dataclass
class Scenario:
    id: str
    H: SpectralHamiltonian
    rho: np.ndarray
    dynamics: Dynamics
    analyses: list
    tol: Tolerances = DEFAULT_TOL
    seed: int | None = None
    raw: dict = field(default_factory=dict, repr=False)


def _tolerances(obj, path: str, base: Tolerances) -> Tolerances:
    if obj is None:
        return base
    if not isinstance(obj, dict):
        raise ScenarioError(f"{path}: expected an object")
    try:
        return base.replace(**{k: float(v) for k, v in obj.items()})
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"{path}: {e}") from None


def _internal(obj, tol: Tolerances) -> SpectralHamiltonian:
    path = "internal"
    if not isinstance(obj, dict):
        raise ScenarioError(f"{path}: expected an object")
    if ("energies" in obj) == ("H" in obj):
        raise ScenarioError(f"{path}: give exactly one of 'energies' or 'H'")
    if "energies" in obj:
        e = obj["energies"]
        if not isinstance(e, list) or not e or not all(isinstance(x, (int, float)) for x in e):
            raise ScenarioError(f"{path}.energies: expected a non-empty list of numbers")
        return from_energies(e, tol)
    h = _matrix(obj["H"], f"{path}.H")
    basis = _matrix(obj["basis"], f"{path}.basis", h.shape[0]) if "basis" in obj else None
    return _wrap(path, decompose, h, tol, basis)


def _ladder_state(spec, engine: ShiftInvariantEngine, path: str) -> np.ndarray | None:
    if spec is None:
        return None
    lad = engine.ladder
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ScenarioError(f"{path}: expected one of eigenstate, uniform, superposition, mixture, matrix")
    (k, v), = spec.items()
    try:
        if k == "eigenstate":
            return lad.eigenstate(int(v))
        if k == "uniform":
            return lad.uniform_superposition(int(v))
        if k == "superposition":
            return lad.superposition({int(j): complex(*a) if isinstance(a, list) else complex(a) for j, a in v.items()})
        if k == "mixture":
            return lad.mixture({int(j): float(p) for j, p in v.items()})
        if k == "matrix":
            return _matrix(v, f"{path}.matrix", engine.dim_E1)
    except ScenarioError:
        raise
    except (QwxError, TypeError, ValueError, AttributeError) as e:
        raise ScenarioError(f"{path}.{k}: {e}") from None
    raise ScenarioError(f"{path}: unknown ladder state kind {k!r}")


def _dynamics(obj, H: SpectralHamiltonian, tol: Tolerances) -> Dynamics:
    path = "dynamics"
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ScenarioError(f"{path}: expected exactly one of instrument, fq, shiftinv")
    (kind, spec), = obj.items()
    d = H.dim
    p = f"{path}.{kind}"
    if kind == "instrument":
        ext = _wrap(p, CPWorkExtraction.from_json, spec, tol, p)
        if ext.dim != d:
            raise ScenarioError(f"{p}.dim: {ext.dim} does not match internal dim {d}")
        target = _matrix(spec["target"], f"{p}.target", d) if isinstance(spec, dict) and "target" in spec else None
        return Dynamics(kind, instrument=ext, target=target)
    if kind == "fq":
        he = _req(spec, "H_E", p)
        H_E = from_energies(he, tol) if isinstance(he, list) and he and all(
            isinstance(x, (int, float)) for x in he) else _wrap(f"{p}.H_E", decompose, _matrix(he, f"{p}.H_E"), tol)
        dE = H_E.dim
        U = _matrix(_req(spec, "U", p), f"{p}.U", d * dE)
        rho_E = _matrix(_req(spec, "rho_E", p), f"{p}.rho_E", dE)
        F = _wrap(p, FQWorkExtraction.create, H_E, U, rho_E, d, tol)
        target = _matrix(spec["target"], f"{p}.target", d) if "target" in spec else None
        return Dynamics(kind, fq=F, target=target)
    if kind == "shiftinv":
        M = spec.get("M") if isinstance(spec, dict) else None
        if M is not None and (not isinstance(M, int) or M < 0):
            raise ScenarioError(f"{p}.M: expected a non-negative integer")
        h_E = spec.get("h_E") if isinstance(spec, dict) else None
        if "E2" in spec:
            e2 = spec["E2"]
            us = _req(e2, "unitaries", f"{p}.E2")
            if not isinstance(us, list) or not us:
                raise ScenarioError(f"{p}.E2.unitaries: expected a non-empty list")
            mats = [_matrix(u, f"{p}.E2.unitaries[{i}]", d) for i, u in enumerate(us)]
            rho2 = _matrix(_req(e2, "rho", f"{p}.E2"), f"{p}.E2.rho", len(mats))
            eng = _wrap(p, controlled_engine, mats, H, rho2, M, tol)
            target = _matrix(spec["target"], f"{p}.target", d) if "target" in spec else None
        else:
            U = _matrix(_req(spec, "U_I", p), f"{p}.U_I", d)
            eng = _wrap(p, build_F, U, H, M, h_E, tol)
            target = U
        rho1 = _ladder_state(spec.get("ladder_state"), eng, f"{p}.ladder_state")
        if rho1 is not None:
            _wrap(f"{p}.ladder_state", as_density, rho1, tol)
        return Dynamics(kind, engine=eng, rho_E1=rho1, target=target)
    raise ScenarioError(f"{path}: unknown variant {kind!r}")


def _analyses(obj) -> list:
    if obj is None:
        return ["classify"]
    if not isinstance(obj, list):
        raise ScenarioError("analyses: expected a list")
    out = []
    for i, a in enumerate(obj):
        p = f"analyses[{i}]"
        if isinstance(a, str):
            name, args = a, {}
        elif isinstance(a, dict) and len(a) == 1:
            (name, args), = a.items()
        else:
            raise ScenarioError(f"{p}: expected a name or a single-key object")
        if name not in ANALYSES:
            raise ScenarioError(f"{p}: unknown analysis {name!r}")
        if name == "window-sweep":
            ms = _req(args, "m", p)
            l = _req(args, "l", p)
            if not isinstance(ms, list) or not ms or not all(isinstance(m, int) and m >= 0 for m in ms):
                raise ScenarioError(f"{p}.m: expected a non-empty list of non-negative integers")
            if not isinstance(l, int) or l < 1:
                raise ScenarioError(f"{p}.l: expected a positive integer")
        out.append((name, args if isinstance(args, dict) else {}))
    return out


def parse_scenario(obj, tol_override: dict | None = None) -> Scenario:
    """Validate a decoded scenario document."""
    if not isinstance(obj, dict):
        raise ScenarioError("scenario: expected a JSON object")
    sid = obj.get("id", "scenario")
    if not isinstance(sid, str):
        raise ScenarioError("id: expected a string")
    tol = _tolerances(obj.get("tolerances"), "tolerances", DEFAULT_TOL)
    if tol_override:
        tol = _tolerances(tol_override, "--tol", tol)
    H = _internal(_req(obj, "internal", "scenario"), tol)
    if "state" in obj:
        rho = _wrap("state", as_density, _matrix(obj["state"], "state", H.dim), tol, "state")
    else:
        rho = maximally_mixed(H.dim)
    dyn = _dynamics(_req(obj, "dynamics", "scenario"), H, tol)
    seed = obj.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ScenarioError("seed: expected an integer")
    return Scenario(sid, H, rho, dyn, _analyses(obj.get("analyses")), tol, seed, obj)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class Evaluation:
    """Per-analysis results, contract violations and CSV rows."""

    results: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    rows: list = field(default_factory=list)


def _do_classify(sc: Scenario, ev: Evaluation) -> dict:
    ext = sc.dynamics.ext(sc.H, sc.tol)
    v = classify(ext, sc.H, sc.tol)
    out = {"verdict": v.as_dict(), "works": [float(w) for w in ext.works], "n_outcomes": ext.n_outcomes}
    if not v.hierarchy_ok:
        ev.violations.append({"analysis": "classify", "contract": "hierarchy", "verdict": v.as_dict()})
    if not v.level4_forms_agree:
        ev.violations.append({"analysis": "classify", "contract": "level4_forms_agree", "verdict": v.as_dict()})
    dyn = sc.dynamics
    if dyn.kind in ("fq", "shiftinv"):
        F = dyn.quartet(sc.tol)
        ok, dev = check_energy_conserving(F, sc.H, sc.tol)
        out["energy_conserving"] = {"holds": ok, "deviation": dev}
        if ok:
            lhs = eigenspace_supported(F.H_E, F.rho_E, sc.tol)
            out["eigenstate_iff_level4"] = {"eigenspace_supported": lhs, "level4": v.level4}
            if lhs != v.level4:
                ev.violations.append({"analysis": "classify", "contract": "eigenstate_iff_level4",
                                      "eigenspace_supported": lhs, "level4": v.level4})
            if not v.level2:
                ev.violations.append({"analysis": "classify", "contract": "energy_conserving_level2"})
    if dyn.kind == "shiftinv":
        eng = dyn.engine
        si, sdev = check_shift_invariant(eng.F, eng, tol=sc.tol)
        st, stdev = check_stationary(eng, rho_E1=dyn.rho_E1, tol=sc.tol)
        out["shift_invariant"] = {"holds": si, "deviation": sdev}
        out["stationary"] = {"holds": st, "deviation": stdev}
        out["ladder"] = {"span": eng.ladder.span, "M": eng.ladder.M, "margin": eng.ladder.margin}
        if si and not v.level3:
            ev.violations.append({"analysis": "classify", "contract": "shift_invariant_level3"})
        if st and not v.unital:
            ev.violations.append({"analysis": "classify", "contract": "stationary_implies_unital"})
    return out


def _do_dilate(sc: Scenario, ev: Evaluation) -> dict:
    ext = sc.dynamics.ext(sc.H, sc.tol)
    F = realize(ext, sc.H, tol=sc.tol)
    back = to_cp(F, sc.H)
    dist = action_distance(ext, back)
    ec, dev = check_energy_conserving(F, sc.H, sc.tol)
    out = {"dim_E": F.dim_E, "action_distance": dist, "energy_conserving": ec, "commutator": dev}
    if dist > sc.tol.eq:
        ev.violations.append({"analysis": "dilate", "contract": "roundtrip", "action_distance": dist})
    return out


def _row(sc: Scenario, r, m=None, l=None) -> dict:
    return {"scenario_id": sc.id, "d_I": sc.H.dim, "m": m, "l": l, "S_e": r.S_e, "F_e": r.F_e, "S_PZ": r.S_PZ,
            "I_ZE": r.I_ZE, "dI": r.dI, "I_F": r.I_F, "S2": r.S2, "dIF": r.dIF, "margin_T2": r.margin_T2,
            "margin_T3": r.margin_T3, "fano_rhs": r.fano_rhs}


def _do_tradeoff(sc: Scenario, ev: Evaluation) -> dict:
    dyn = sc.dynamics
    target = dyn.target
    if target is None:
        raise PreconditionError("tradeoff needs a target unitary ('target' field)")
    target = as_unitary(target, sc.tol, "target")
    ps = purify(sc.rho, sc.H, sc.tol)
    if dyn.kind == "instrument":
        r = cp_tradeoff(dyn.instrument, target, ps, sc.tol)
        out = {"mode": "cp", **r.as_dict()}
        if r.margin_entropy < -sc.tol.eq:
            ev.violations.append({"analysis": "tradeoff", "contract": "cp_entropy", "margin": r.margin_entropy})
        if r.fidelity_applicable and r.margin_fidelity < -sc.tol.eq:
            ev.violations.append({"analysis": "tradeoff", "contract": "cp_fidelity", "margin": r.margin_fidelity})
        if r.level4 and max(r.dI, r.dIF) >= sc.tol.eq:
            ev.violations.append({"analysis": "tradeoff", "contract": "level4_perfect_correlation",
                                  "dI": r.dI, "dIF": r.dIF})
        return out
    F = dyn.quartet(sc.tol)
    purified = False
    if np.linalg.eigvalsh(F.rho_E)[-1] < 1.0 - sc.tol.eq:
        F, purified = purify_external(F), True
    r = analyze(ps, F, target, sc.tol)
    m2 = verify_tradeoff_entropy(r, sc.tol)
    m3 = verify_tradeoff_fidelity(r, sc.tol)
    out = {"mode": "fq", "external_purified": purified, **r.as_dict(),
           "fidelity_tradeoff_applicable": m3.applicable, "equality_expected": m2.equality_expected}
    if not m2.holds:
        ev.violations.append({"analysis": "tradeoff", "contract": "entropy_tradeoff", "margin": r.margin_T2})
    if m3.applicable and not m3.holds:
        ev.violations.append({"analysis": "tradeoff", "contract": "fidelity_tradeoff", "margin": r.margin_T3})
    if not r.fano_holds:
        ev.violations.append({"analysis": "tradeoff", "contract": "fano", "S_e": r.S_e, "rhs": r.fano_rhs})
    ev.rows.append(_row(sc, r))
    return out


def _do_window(sc: Scenario, ev: Evaluation, args: dict) -> dict:
    dyn = sc.dynamics
    if dyn.kind != "shiftinv" or dyn.engine.d_E2 != 1:
        raise PreconditionError("window-sweep needs a shiftinv engine without E2")
    l = int(args["l"])
    rows = []
    for m in args["m"]:
        w = window_bound(dyn.engine.U_int, sc.H, sc.rho, int(m), l, sc.tol)
        vals = [w.neg_log_Fe2, w.I_F, w.neg_log_closed]
        rows.append({"m": int(m), "l": l, "q": w.q, "S_e": w.S_e, "F_e": w.F_e, "bound": w.bound,
                     "holds": w.holds, "neg_log_Fe2": w.neg_log_Fe2, "I_F": w.I_F,
                     "closed_form": w.closed_form, "neg_log_closed": w.neg_log_closed,
                     "identity_spread": max(vals) - min(vals), "margin_T3": w.report.margin_T3})
        if not w.holds:
            ev.violations.append({"analysis": "window-sweep", "contract": "window_bound", "m": int(m),
                                  "S_e": w.S_e, "bound": w.bound})
        ev.rows.append(_row(sc, w.report, int(m), l))
    order = sorted(rows, key=lambda r: r["m"])
    mono = all(a["S_e"] > b["S_e"] for a, b in zip(order, order[1:]) if a["m"] < b["m"])
    return {"rows": rows, "S_e_decreasing_in_m": mono}


def _do_classical(sc: Scenario, ev: Evaluation) -> dict:
    ext = sc.dynamics.ext(sc.H, sc.tol)
    cwe = classical_description(ext, sc.H, sc.tol)
    out = {"T": [[float(x) for x in row] for row in cwe.T], "bistochastic": cwe.is_bistochastic(sc.tol.eq)}
    try:
        eq = quantum_classical_equivalence(ext, sc.H, sc.rho, sc.tol)
        out["equivalence"] = {"tv": eq.tv, "max_deviation": eq.max_deviation,
                              "quantum": {"values": list(eq.quantum.values), "probs": list(eq.quantum.probs)},
                              "classical": {"values": list(eq.classical.values), "probs": list(eq.classical.probs)}}
        if eq.tv > EQUIVALENCE_TOL:
            ev.violations.append({"analysis": "classical-compare", "contract": "equivalence", "tv": eq.tv})
    except PreconditionError as e:
        out["equivalence"] = {"not_applicable": str(e)}
    if out["bistochastic"]:
        bd = birkhoff_decompose(cwe.T, sc.tol)
        out["birkhoff"] = {"weights": list(bd.weights), "perms": [list(f) for f in bd.perms],
                           "reconstruction_error": float(np.max(np.abs(bd.matrix(cwe.n) - cwe.T)))}
    p = np.real(np.diag(sc.H.in_basis(sc.rho)))
    b = classical_work_entropy_bound(cwe, np.clip(p, 0, None) / p.sum(), sc.tol)
    out["entropy_bound"] = {"entropy": b.entropy, "bound": b.bound, "holds": b.holds}
    if not b.holds:
        ev.violations.append({"analysis": "classical-compare", "contract": "entropy_bound"})
    wd = work_distribution(ext, sc.rho, energy_tolerance(ext, sc.H, sc.tol))
    out["work_distribution"] = {"values": list(wd.values), "probs": list(wd.probs)}
    return out


def evaluate(sc: Scenario) -> Evaluation:
    """Run every requested analysis; precondition failures are recorded per analysis."""
    ev = Evaluation()
    counts: dict = {}
    for name, args in sc.analyses:
        counts[name] = counts.get(name, 0) + 1
        key = name if counts[name] == 1 else f"{name}#{counts[name]}"
        try:
            if name == "classify":
                ev.results[key] = _do_classify(sc, ev)
            elif name == "dilate":
                ev.results[key] = _do_dilate(sc, ev)
            elif name == "tradeoff":
                ev.results[key] = _do_tradeoff(sc, ev)
            elif name == "window-sweep":
                ev.results[key] = _do_window(sc, ev, args)
            else:
                ev.results[key] = _do_classical(sc, ev)
        except PreconditionError as e:
            ev.results[key] = {"not_applicable": str(e)}
    return ev
