"""End-to-end pipelines behind the CLI verbs.

Each pipeline writes its artifacts into ``out`` and returns a dict with the
artifact paths, the hard-invariant outcomes and any soft predicate
failures.  Artifacts never contain timestamps, run times or absolute
paths, so reruns with the same config and seed are byte-identical.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .exceptions import CorruptArtifact, MissingArtifacts
from .green import compare_scales, ldt_probe
from .io import SCHEMA_VERSION, read_csv, read_json, write_csv, write_json
from .resonance import (check_omega_hypotheses, separation_report, theta_failure_fraction,
                        write_monte_carlo_csv)
from .solver import cwb_solve, decay_fit, time_residual
from .spectrum import (center_equidistribution, check_symmetry, check_translation_covariance,
                       decay_slope, diagonalize_and_relabel, diophantine_check, eigenvalue_profile,
                       pole_free_grid, rellich_iterate, spatial_box)

log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
COVARIANCE_TOL = 1e-10
GRAM_TOL = 1e-10
EIGEN_RESIDUAL_TOL = 1e-8
TIME_RESIDUAL_TOL = 1e-8


def _echo(cfg: ExperimentConfig):
    """Resolved config without the output location (so --out does not change bytes)."""
    data = cfg.to_dict()
    data["output"] = {k: v for k, v in data["output"].items() if k != "directory"}
    return data


def _eigensystem(cfg: ExperimentConfig):
    m = cfg.section("model")
    return diagonalize_and_relabel(cfg.params(), spatial_box(m["d"], m["radius"]),
                                   m["match_radius"], m["boundary_margin"])


def _want(cfg, fmt):
    return fmt in cfg.section("output")["formats"]


def run_spectrum(cfg: ExperimentConfig, out: Path):
    out = Path(out)
    m, sp = cfg.section("model"), cfg.section("spectrum")
    params = cfg.params()
    d, eps = params.d, params.eps
    es = _eigensystem(cfg)

    grid = pole_free_grid(sp["theta_grid"], params, m["radius"], sp["pole_margin"])
    prof = eigenvalue_profile(params, m["radius"], grid, m["match_radius"])

    rng = np.random.default_rng(cfg.sub_seed("symmetry"))
    sym = []
    for th in rng.random(sp["symmetry_samples"]):
        sym.append(check_symmetry(params.with_theta(th), spatial_box(d, m["radius"]))["max_spectral_defect"])
    rng = np.random.default_rng(cfg.sub_seed("covariance"))
    shifts = rng.integers(-sp["max_shift"], sp["max_shift"] + 1, size=(sp["covariance_shifts"], d))
    cov = [check_translation_covariance(params, sp["covariance_radius"], s) for s in shifts]

    interior = np.flatnonzero(es.interior_mask())
    labels = [tuple(int(x) for x in es.sites[k]) for k in interior]
    peak_err = float(np.abs(es.peak[interior] - 1.0).max()) if len(interior) else 0.0
    slopes = [decay_slope(es, j) for j in labels] if eps > 0 else []
    slopes = [s for s in slopes if np.isfinite(s)]
    loc_holds = peak_err < math.sqrt(eps) if eps > 0 else peak_err < 1e-12
    slope_bound = 0.4 * math.log(eps) if eps > 0 else -math.inf
    slope_holds = all(s <= slope_bound for s in slopes) if eps > 0 else True

    rel_grid = pole_free_grid(sp["rellich_grid"], params, max(sp["rellich_schedule"]), sp["pole_margin"])
    rel = rellich_iterate(params, rel_grid, [0] + list(sp["rellich_schedule"]))
    equi = center_equidistribution(es, sp["center_window"])
    dio = diophantine_check(params.alpha, params.gamma, params.tau, sp["diophantine_jmax"])

    invariants = {
        "symmetry": {"max_defect": max(sym), "tol": SYMMETRY_TOL, "holds": max(sym) <= SYMMETRY_TOL},
        "covariance": {"max_defect": max(cov), "tol": COVARIANCE_TOL, "holds": max(cov) <= COVARIANCE_TOL},
        "orthonormality": {"gram_defect": es.gram_defect(), "tol": GRAM_TOL,
                           "holds": es.gram_defect() <= GRAM_TOL},
        "eigen_residual": {"max_residual": es.max_residual, "tol": EIGEN_RESIDUAL_TOL,
                           "holds": es.max_residual <= EIGEN_RESIDUAL_TOL},
    }
    approx = {"max_deviation": prof["max_deviation"], "bound": prof["bound"],
              "holds": prof["max_deviation"] <= prof["bound"] + 1e-12}
    predicates = {
        "diophantine": dio,
        "peak": {"max_error": peak_err, "bound": math.sqrt(eps), "holds": bool(loc_holds)},
        "decay_slope": {"max_slope": max(slopes) if slopes else None, "bound": slope_bound,
                        "holds": bool(slope_holds)},
        "monotone_profile": {"max_secant_slope": prof["max_secant_slope"], "holds": prof["monotone"]},
        "rellich": {"non_unique": len(rel.non_unique),
                    "sup_change": [lv["sup_change"] for lv in rel.levels],
                    "holds": not rel.non_unique},
        "center_equidistribution": {"min_ratio": equi["min_ratio"], "max_ratio": equi["max_ratio"],
                                    "window": equi["window"]},
    }
    # |E - V| <= 2 d eps presumes a well-defined labelling, which exact degeneracies of a
    # non-Diophantine alpha destroy; the bound is then only reported
    (invariants if dio["holds"] else predicates)["potential_approximation"] = approx
    paths = {}
    if _want(cfg, "json"):
        paths["eigensystem"] = write_json(es.to_dict(), out / "eigensystem.json")
        paths["spectrum_checks"] = write_json({
            "kind": "spectrum_checks", "matching_method": es.method, "invariants": invariants,
            "predicates": predicates,
            "failed_predicates": sorted(k for k, v in predicates.items() if v.get("holds") is False),
            "config": _echo(cfg)}, out / "spectrum_checks.json")
    if _want(cfg, "csv"):
        paths["profile"] = write_csv(out / "profile.csv", ["theta", "E", "cot_pi_theta"],
                                     zip(prof["theta"].tolist(), prof["E"].tolist(), prof["V"].tolist()))
    return {"paths": paths, "invariants": invariants, "predicates": predicates}


def _separation(cfg: ExperimentConfig, es):
    s, sep = cfg.section("solver"), cfg.section("separation")
    betas = [tuple(a["site"]) for a in s["anchors"]]
    rep = separation_report(es, betas, s["delta"], sep["N"], sep["R"], sep["R2"])
    omega0 = np.array([es.mu_at(bk) for bk in betas])
    rep["omega"] = check_omega_hypotheses(omega0, es, sep["N"], min(sep["scale_floor"], sep["N"]),
                                          sep["K2"])
    return rep


def run_separation(cfg: ExperimentConfig, out: Path):
    out = Path(out)
    m, s, sep = cfg.section("model"), cfg.section("solver"), cfg.section("separation")
    params = cfg.params()
    es = _eigensystem(cfg)
    rep = _separation(cfg, es)
    dio = diophantine_check(params.alpha, params.gamma, params.tau,
                            cfg.section("spectrum")["diophantine_jmax"])
    mc = []
    if sep["monte_carlo_samples"] > 0:
        betas = [tuple(a["site"]) for a in s["anchors"]]
        for k, dl in enumerate(sep["monte_carlo_deltas"]):
            mc.append(theta_failure_fraction(params, m["radius"], betas, dl, sep["N"], sep["R"],
                                             sep["monte_carlo_samples"],
                                             cfg.sub_seed(f"separation-mc-{k}"), sep["R2"]))
    predicates = {k: v["holds"] for k, v in rep.items()}
    predicates["diophantine"] = dio["holds"]
    paths = {}
    if _want(cfg, "json"):
        paths["separation"] = write_json({
            "kind": "separation", "predicates": rep, "diophantine": dio, "monte_carlo": mc,
            "failed_predicates": sorted(k for k, v in predicates.items() if not v),
            "config": _echo(cfg)}, out / "separation.json")
    if mc and _want(cfg, "csv"):
        paths["separation_mc"] = write_monte_carlo_csv(mc, out / "separation_mc.csv")
    return {"paths": paths, "invariants": {}, "predicates": predicates}


def solve(cfg: ExperimentConfig, es=None):
    """Run the CWB solver for the configured instance; returns (eigsys, report)."""
    s = cfg.section("solver")
    es = _eigensystem(cfg) if es is None else es
    return es, cwb_solve(es, cfg.resonant(), s["delta"], s["p"], s["M"], s["tol"], s["max_r"],
                         s["max_time_radius"], s["cond_max"])


def run_solve(cfg: ExperimentConfig, out: Path):
    out = Path(out)
    s = cfg.section("solver")
    es = _eigensystem(cfg)
    pre = _separation(cfg, es)
    failed_pre = sorted(k for k, v in pre.items() if not v["holds"])
    for k in failed_pre:
        log.warning("pre-flight predicate %s fails (margin %.3e)", k, pre[k]["margin"])
    es, rep = solve(cfg, es)
    eps = cfg.params().eps
    rep.decay = decay_fit(rep.u, es, cfg.resonant(), eps, s["delta"])
    rng = np.random.default_rng(cfg.sub_seed("time-samples"))
    times = np.sort(rng.uniform(0.0, s["time_horizon"], s["time_samples"]))
    rep.time_residual = time_residual(rep.u, rep.omega, es, s["delta"], s["p"], times)
    rep.config = _echo(cfg)
    invariants = {
        "anchors": {"holds": rep.checks["anchors"]},
        "time_residual": {"max": rep.time_residual, "tol": TIME_RESIDUAL_TOL,
                          "holds": bool(rep.time_residual <= TIME_RESIDUAL_TOL)},
    }
    predicates = {"monotone_residual": rep.checks["monotone"],
                  "block_growth": rep.checks["block_growth"],
                  "rho_positive": bool(rep.decay.get("rho_star", 0) > 0)}
    predicates.update({f"preflight_{k}": pre[k]["holds"] for k in pre})
    paths = {}
    if _want(cfg, "json"):
        doc = rep.to_dict(es)
        doc["preflight"] = {k: {"holds": v["holds"], "margin": v["margin"]} for k, v in pre.items()}
        doc["failed_predicates"] = sorted(k for k, v in predicates.items() if not v)
        paths["solution"] = write_json(doc, out / "solution.json")
        paths["time_residual"] = write_json({
            "kind": "time_residual", "times": times, "max_residual": rep.time_residual,
            "tol": TIME_RESIDUAL_TOL}, out / "time_residual.json")
    if _want(cfg, "csv"):
        paths["decay"] = rep.write_decay_csv(es, out / "decay.csv")
    return {"paths": paths, "invariants": invariants, "predicates": predicates, "report": rep}


def run_ldt(cfg: ExperimentConfig, out: Path):
    out = Path(out)
    s, pr = cfg.section("solver"), cfg.section("probes")
    es, rep = solve(cfg)
    reports = []
    for N in pr["scales"]:
        r = ldt_probe(rep.u, es, rep.omega, s["delta"], s["p"], N, pr["n_sigma"],
                      cfg.sub_seed(f"ldt-sigma-{N}"), tuple(pr["sigma_interval"]), pr["c_tilde"],
                      drop_tol=pr["drop_tol"], max_witnesses=pr["max_witnesses"])
        reports.append(r)
    comparisons = [compare_scales(a, b) for a, b in zip(reports, reports[1:])]
    predicates = {f"non_increasing_{c['scales'][0]}_{c['scales'][1]}": c["non_increasing"]
                  for c in comparisons}
    paths = {}
    if _want(cfg, "json"):
        paths["ldt"] = write_json({
            "kind": "ldt", "solution_residual": rep.history[-1]["residual"],
            "omega": rep.omega, "probes": [r.to_dict() for r in reports],
            "monotonicity": comparisons,
            "failed_predicates": sorted(k for k, v in predicates.items() if not v),
            "config": _echo(cfg)}, out / "ldt.json")
    if _want(cfg, "csv"):
        for r in reports:
            cols = ["sigma", "norm_ok", "decay_ok", "decay_ratio", "component_size", "min_diagonal"]
            paths[f"ldt_witnesses_{r.scale}"] = write_csv(
                out / f"ldt_witnesses_N{r.scale}.csv", cols,
                [[w[c] for c in cols] for w in r.witnesses])
    return {"paths": paths, "invariants": {}, "predicates": predicates, "reports": reports}


# report -------------------------------------------------------------------------------

KNOWN_JSON = ("spectrum_checks", "eigensystem", "separation", "solution", "time_residual", "ldt")
KNOWN_CSV = ("profile", "decay", "separation_mc")


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "pass" if v else "FAIL"
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def run_report(directory: Path, out: Path = None):
    """Summarize every artifact found in ``directory`` into report.md and summary.csv."""
    directory = Path(directory)
    out = directory if out is None else Path(out)
    if not directory.is_dir():
        raise MissingArtifacts(f"{directory} is not a directory")
    docs = {}
    for name in KNOWN_JSON:
        p = directory / f"{name}.json"
        if p.exists():
            docs[name] = read_json(p)
    csvs = {}
    for p in sorted(directory.glob("*.csv")):
        if p.name == "summary.csv":
            continue
        csvs[p.stem] = read_csv(p)
    if not docs and not csvs:
        raise MissingArtifacts(f"no artifacts found in {directory}")
    for name, doc in docs.items():
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise CorruptArtifact(directory / f"{name}.json",
                                  f"schema_version {doc.get('schema_version')!r} unsupported")

    rows = []
    lines = ["# Run summary", ""]

    def section(title, items):
        lines.append(f"## {title}")
        lines.append("")
        lines.append("| item | value | tolerance | status |")
        lines.append("|---|---|---|---|")
        for item, value, tol, status in items:
            lines.append(f"| {item} | {_fmt(value)} | {_fmt(tol)} | {_fmt(status)} |")
            rows.append([title, item, _fmt(value), _fmt(tol), _fmt(status)])
        lines.append("")

    for name, builder in SECTIONS:
        if name not in docs:
            continue
        try:
            items = builder(docs[name])
        except (KeyError, TypeError, IndexError, StopIteration) as exc:
            raise CorruptArtifact(directory / f"{name}.json", f"unexpected layout: {exc!r}") from None
        section(name, items)
    if csvs:
        section("tables", [(f"{name}.csv rows", len(body), None, None)
                           for name, (_, body) in csvs.items()])
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text("\n".join(lines))
    write_csv(out / "summary.csv", ["section", "item", "value", "tolerance", "status"], rows)
    return {"paths": {"report": out / "report.md", "summary": out / "summary.csv"},
            "invariants": {}, "predicates": {}}


def _spectrum_items(d):
    items = []
    for k, v in d["invariants"].items():
        val = next(v[x] for x in v if x not in ("tol", "bound", "holds"))
        items.append((f"invariant {k}", val, v.get("tol", v.get("bound")), v["holds"]))
    for k, v in d["predicates"].items():
        if "holds" in v:
            val = {kk: vv for kk, vv in v.items() if kk not in ("holds", "bound")}
            items.append((f"predicate {k}", _first_number(val), v.get("bound"), v["holds"]))
    return items


def _separation_items(d):
    items = [(k, v["margin"], v.get("threshold"), v["holds"]) for k, v in d["predicates"].items()]
    items.append(("diophantine", d["diophantine"]["margin"], d["diophantine"]["gamma"],
                  d["diophantine"]["holds"]))
    for r in d["monte_carlo"]:
        items.append((f"theta failure fraction (delta={r['delta']})", r["fraction_failed"], None, None))
    return items


def _solution_items(d):
    cfg = d["config"]["solver"]
    final = d["history"][-1]["residual"]
    rho = d["decay"].get("rho_star")
    items = [("converged", d["converged"], None, d["converged"]),
             ("iterations", d["iterations"], cfg["max_r"], d["iterations"] <= cfg["max_r"]),
             ("final residual", final, cfg["tol"], final <= cfg["tol"])]
    items += [(f"check {k}", v, None, v) for k, v in d["checks"].items()]
    items.append(("rho_star", rho, 0.0, rho is not None and rho > 0))
    items.append(("time residual", d["time_residual"], TIME_RESIDUAL_TOL,
                  d["time_residual"] <= TIME_RESIDUAL_TOL))
    items += [(f"preflight {k}", v["margin"], None, v["holds"]) for k, v in d["preflight"].items()]
    return items


def _time_items(d):
    return [("max time-domain residual", d["max_residual"], d["tol"], d["max_residual"] <= d["tol"]),
            ("samples", len(d["times"]), None, None)]


def _eigensystem_items(d):
    res = d["matching"]["max_residual"]
    return [("labels", len(d["eigenvalues"]), None, None),
            ("matching method", d["matching"]["method"], None, None),
            ("max eigen residual", res, EIGEN_RESIDUAL_TOL, res <= EIGEN_RESIDUAL_TOL)]


def _ldt_items(d):
    items = []
    for p in d["probes"]:
        items.append((f"N={p['scale']} bad fraction", p["fraction_failed"], p["measure_bound"], None))
        items.append((f"N={p['scale']} norm failures", p["fraction_norm_failed"], None, None))
        items.append((f"N={p['scale']} decay failures", p["fraction_decay_failed"], None, None))
    for c in d["monotonicity"]:
        items.append((f"non-increasing N={c['scales'][0]}->{c['scales'][1]}", c["fractions"][1],
                      c["fractions"][0], c["non_increasing"]))
    return items


SECTIONS = (("spectrum_checks", _spectrum_items), ("eigensystem", _eigensystem_items),
            ("separation", _separation_items), ("solution", _solution_items),
            ("time_residual", _time_items), ("ldt", _ldt_items))


def _first_number(d):
    for v in d.values():
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return v
    return None


PIPELINES = {
    "spectrum": run_spectrum,
    "separation": run_separation,
    "solve": run_solve,
    "ldt": run_ldt,
}

__all__ = ["PIPELINES", "run_report", "solve"]
