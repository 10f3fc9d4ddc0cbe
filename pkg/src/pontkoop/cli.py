"""Command-line pipeline: ``pontkoop {check,spectrum,synthesize,simulate,compare}``.

Exit codes: 0 success, 1 numerical-check failure, 2 config error, 3 solver
non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .basis import gauss_legendre_rule
from .config import ConfigError, PipelineConfig
from .model import FieldConsistencyError, ModelError, minimize_hamiltonian_control, pontryagin_field
from .poly import PolyExpr, to_spec
from .sim import BlowUpError, closed_loop_rollout, evaluate_cost, state_names
from .spectral import EigenSolverError, assemble_galerkin, eigendecompose, mirror_pairs, write_spectrum_csv
from .structure import (STRUCTURE_THRESHOLDS, adjoint_defect, bump_weight, check_hamiltonian_structure,
                        monodromy, monodromy_defects)
from .synthesis import (CostateSolveError, MultipleRootWarning, NewtonOptions, SelectionError, fit_polynomial_law,
                        compare_reference, solve_grid, synthesize, uniform_grid)

log = logging.getLogger("pontkoop")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class CheckFailure(Exception):
    pass


# helpers ---------------------------------------------------------------------------


def _meta(cfg: PipelineConfig) -> dict:
    return {"config_sha256": cfg.hash, "pontkoop": __version__, "numpy": np.__version__}


def _header(cfg: PipelineConfig) -> str:
    return " ".join(f"{k}={v}" for k, v in _meta(cfg).items())


def _write_json(path: Path, payload: dict, cfg: PipelineConfig) -> None:
    path.write_text(json.dumps({"meta": _meta(cfg), **payload}, indent=2) + "\n")


def _cplx(z) -> list:
    return [float(np.real(z)), float(np.imag(z))]


def _field(cfg: PipelineConfig):
    fld = cfg.bare_field(verify=False)
    if fld is not None:
        return fld, None
    model = cfg.model()
    ustar = minimize_hamiltonian_control(model)
    try:
        return pontryagin_field(model, ustar), model
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _need_model(cfg: PipelineConfig):
    model = cfg.model()
    if model is None:
        raise ConfigError("this command needs an optimal control problem, not a bare field")
    return model


def _newton_options(cfg: PipelineConfig) -> NewtonOptions:
    tol = cfg.get("tolerances")
    nw = cfg.get("newton")
    return NewtonOptions(tol=tol.get("newton", 1e-10), max_iter=nw.get("max_iter", 50),
                         max_halvings=nw.get("max_halvings", 20))


def _synthesize(cfg: PipelineConfig):
    model = _need_model(cfg)
    tol = cfg.get("tolerances")
    return synthesize(model, cfg.basis(), cfg.quadrature(), tau=tol.get("tau"), choose=cfg.raw.get("select"),
                      pair_tol=tol.get("pairing"), newton=_newton_options(cfg))


# commands --------------------------------------------------------------------------


def _random_bump_pairs(box, vars, count: int, rng) -> list:
    w = bump_weight(box, vars)
    out = []
    for _ in range(count):
        pq = []
        for _ in range(2):
            r = PolyExpr.const(float(rng.uniform(-1, 1)), vars)
            for v in vars:
                r = r + PolyExpr.var(v, vars) * float(rng.uniform(-1, 1))
            pq.append(w * r)
        out.append(tuple(pq))
    return out


def cmd_check(cfg: PipelineConfig, out: Path, seed: int) -> int:
    fld, _ = _field(cfg)
    box = cfg.box()
    sc = cfg.get("structure")
    rng = np.random.default_rng(seed)
    lo = np.array(box.center) - np.array(box.half_width)
    hi = np.array(box.center) + np.array(box.half_width)
    samples = rng.uniform(lo, hi, size=(sc["samples"], box.dim))
    report = check_hamiltonian_structure(fld, samples)
    div_poly = fld.divergence()
    report.divergence = max(report.divergence, div_poly.max_abs_coeff())
    sym, det = 0.0, 0.0
    for z0 in rng.uniform(lo, hi, size=(sc["monodromy_points"], box.dim)):
        try:
            s, d = monodromy_defects(monodromy(fld, z0, sc["monodromy_t"]), fld.n_x)
        except BlowUpError:
            s = d = math.inf
        sym, det = max(sym, s), max(det, d)
    report.monodromy_symplectic_defect, report.monodromy_det_defect = sym, det
    if sc["adjoint_pairs"]:
        pairs = _random_bump_pairs(box, fld.vars, sc["adjoint_pairs"], rng)
        p0, q0 = pairs[0]
        need = p0.max_var_degree() + fld.lift(q0).max_var_degree()
        quad = gauss_legendre_rule(box, math.ceil((need + 1) / 2))
        report.adjoint_defect = max(adjoint_defect(fld, p, q, quad, strict=True) for p, q in pairs)
    failures = report.failures()
    (out / "structure_report.json").write_text(
        report.to_json(meta=_meta(cfg), thresholds=STRUCTURE_THRESHOLDS, failures=failures,
                       divergence_is_zero_polynomial=div_poly.is_zero()) + "\n")
    if failures:
        raise CheckFailure("structure check failed: " + ", ".join(failures))
    return EXIT_OK


def cmd_spectrum(cfg: PipelineConfig, out: Path, seed: int) -> int:
    fld, _ = _field(cfg)
    basis = cfg.basis()
    quad = cfg.quadrature()
    if quad is None:
        from .basis import default_nodes_per_dim
        need = max(fld.lift(p).max_var_degree() + p.max_var_degree() for p in basis.functions)
        quad = gauss_legendre_rule(basis.box, default_nodes_per_dim(basis.max_degree, fld.degree(), need))
    tol = cfg.get("tolerances")
    G = assemble_galerkin(fld, basis, quad)
    eigs = eigendecompose(G, tol.get("eigen"))
    pairing = mirror_pairs(eigs, tol.get("pairing"))
    write_spectrum_csv(out / "spectrum.csv", eigs, pairing, _header(cfg))
    n_mirrored = 2 * len(pairing.pairs)
    _write_json(out / "pairing.json", {
        "pairs": [{"i": i, "j": j, "defect": d} for i, j, d in pairing.pairs],
        "unpaired": pairing.unpaired,
        "flagged": [i for i, e in enumerate(eigs) if e.truncation_dominated],
        "mirrored_count": n_mirrored,
        "mirror_requirement_met": n_mirrored >= 2 * fld.n_x,
        "basis_indices": [list(a) for a in basis.indices],
        "quadrature_nodes_per_dim": (quad.exact_degree + 1) // 2,
    }, cfg)
    return EXIT_OK


def _law_payload(syn, cfg: PipelineConfig, fit) -> dict:
    law = syn.law
    sel = []
    for c in syn.system.candidates:
        sel.append({"index": c.index, "kappa": _cplx(c.kappa), "partner": c.partner,
                    "mirror_defect": c.mirror_defect, "exact_mirror": c.exact_mirror,
                    "coupling": c.coupling, "selected": c.kappa in syn.system.selected_eigs,
                    "coefficients": [_cplx(a) for a in syn.eigs[c.index].left_vector]})
    return {
        "selected_eigenvalues": [_cplx(k) for k in syn.system.selected_eigs],
        "candidates": sel,
        "basis_indices": [list(a) for a in syn.galerkin.basis.indices],
        "newton": {"tol": law.newton.tol, "max_iter": law.newton.max_iter,
                   "max_halvings": law.newton.max_halvings},
        "warm_start_P": law.P.tolist(),
        "steady_state": {"x": law.x_p.tolist(), "lambda": law.lambda_p.tolist()},
        "fit": None if fit is None else [to_spec(p) for p in fit],
    }


def cmd_synthesize(cfg: PipelineConfig, out: Path, seed: int) -> int:
    syn = _synthesize(cfg)
    g = cfg.get("grid")
    sbox = cfg.state_box()
    grid = solve_grid(syn.law, uniform_grid(sbox, g["per_dim"]))
    grid.to_csv(out / "feedback_grid.csv", _header(cfg))
    fit = None
    if not grid.failed and g["fit_degree"] is not None:
        fit = fit_polynomial_law(syn.law, sbox, g["fit_degree"])
    payload = _law_payload(syn, cfg, fit)
    if g["restarts"]:
        multi = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MultipleRootWarning)
            for k, x in enumerate(grid.points):
                if k in grid.failed:
                    continue
                roots = syn.law.candidate_roots(x, n_restarts=g["restarts"], seed=seed + k)
                if len(roots) > 1:
                    multi.append({"x": x.tolist(), "roots": [r.tolist() for r in roots]})
        payload["multiple_roots"] = multi
    payload["failed_nodes"] = [grid.points[k].tolist() for k in grid.failed]
    _write_json(out / "law.json", payload, cfg)
    if grid.failed:
        raise CostateSolveError(f"costate solve failed at {len(grid.failed)} grid nodes: "
                                f"{payload['failed_nodes'][:5]}")
    return EXIT_OK


def cmd_simulate(cfg: PipelineConfig, out: Path, seed: int) -> int:
    model = _need_model(cfg)
    syn = _synthesize(cfg)
    sc = cfg.get("simulate")
    t_eval = np.linspace(0.0, sc["t_end"], sc["samples"])
    names = state_names(model)
    runs = []
    with open(out / "trajectories.csv", "w") as fh:
        fh.write(f"# {_header(cfg)}\n")
        fh.write(",".join(["run", "t", *names]) + "\n")
        for r, x0 in enumerate(sc["initial_states"]):
            if len(x0) != model.n_x:
                raise ConfigError(f"simulate.initial_states[{r}] has length {len(x0)}, expected {model.n_x}")
            tr = closed_loop_rollout(model, syn.law, x0, sc["t_end"], t_eval=t_eval)
            for t, y in zip(tr.times, tr.states):
                fh.write(",".join([str(r), repr(float(t)), *(repr(float(v)) for v in y)]) + "\n")
            runs.append({"x0": list(map(float, x0)), "status": tr.status, "message": tr.message,
                         "t_final": float(tr.times[-1]), "x_final": tr.states[-1, :model.n_x].tolist(),
                         "norm_x_final": float(np.linalg.norm(tr.states[-1, :model.n_x])),
                         "cost": float(tr.states[-1, model.n_x])})
    _write_json(out / "cost_report.json", {"runs": runs}, cfg)
    if any(r["status"] not in ("ok", "stopped") for r in runs):
        raise CostateSolveError("rollout truncated: " + "; ".join(r["message"] for r in runs if r["message"]))
    return EXIT_OK


def cmd_compare(cfg: PipelineConfig, out: Path, seed: int) -> int:
    ref = cfg.reference()
    if ref is None:
        print("no reference law configured; comparison skipped", file=sys.stderr)
        return EXIT_OK
    syn = _synthesize(cfg)
    res = compare_reference(syn.law, ref, cfg.state_box())
    _write_json(out / "comparison.json", res, cfg)
    if res["failed_nodes"]:
        raise CostateSolveError(f"costate solve failed at {len(res['failed_nodes'])} quadrature nodes")
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "spectrum": cmd_spectrum,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pontkoop", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON pipeline config")
    ap.add_argument("--out", help="output directory (default: config 'output' or ./out)")
    ap.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    ap.add_argument("--seed", type=int, default=0, help="seed for sampling and perturbed restarts")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _thread_limit(n):
    if n is None:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl not installed; --threads ignored")
        return nullcontext()
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = PipelineConfig.load(args.config)
        out = Path(args.out or cfg.get("output"))
        out.mkdir(parents=True, exist_ok=True)
        with _thread_limit(args.threads):
            return COMMANDS[args.command](cfg, out, args.seed)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CHECK
    except FieldConsistencyError as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (SelectionError, CostateSolveError, EigenSolverError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
