"""Command-line entry point.

Exit codes: 0 success, 1 operational error, 2 verdict or threshold failure,
3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from fractions import Fraction

from threadpoolctl import threadpool_limits

from .coefficients import mean_lambda
from .discretization import CommensurabilityError, assemble_stencil, commensurate, write_field, write_field_csv
from .harness import (ConfigError, StudyConfig, build_coefficient, build_kernel, default_probe_psi, make_rhs,
                      parse_eps, psi_from_spec, run_study, weak_convergence_probe, write_outputs)
from .kernels import ValidationBudget, validate_kernel
from .solvers import init_symbol, solve_effective, solve_epsilon

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

OUT_ENV = "NLHOMOG_OUT"
EXIT_OK, EXIT_ERROR, EXIT_VERDICT, EXIT_NONCONVERGED = 0, 1, 2, 3
CSV_MAX_VALUES = 1 << 16


class CLIError(Exception):
    pass


def load_config(path) -> dict:
    """TOML by default, JSON when the file ends in ``.json``."""
    if not os.path.isfile(path):
        raise CLIError(f"config file not found: {path}")
    try:
        if str(path).endswith(".json"):
            with open(path) as fh:
                return json.load(fh)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise CLIError(f"{path}: {exc}") from exc


def _out_dir(args, doc) -> str:
    if args.out:
        return args.out
    if os.environ.get(OUT_ENV):
        return os.environ[OUT_ENV]
    return doc.get("output", {}).get("dir", "out")


def _formats(args, doc) -> str:
    fmt = args.format or doc.get("output", {}).get("format", "all")
    if fmt not in ("json", "csv", "all"):
        raise CLIError(f"unknown format {fmt!r}")
    return fmt


def _study_config(doc, args, **overrides) -> StudyConfig:
    if args.seed is not None:
        overrides["seed"] = args.seed
    return StudyConfig.from_dict(doc, **overrides)


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _eps_for(args, cfg: StudyConfig) -> Fraction:
    if args.eps is not None:
        return parse_eps(args.eps)
    return min(cfg.eps)


def cmd_validate_kernel(args, doc) -> int:
    cfg = _study_config(doc, args)
    kernel = build_kernel(cfg)
    kspec = doc.get("kernel", {})
    budget = ValidationBudget(**{**kspec.get("validation", {}), "seed": cfg.seed})
    report = validate_kernel(kernel, budget, mode=kspec.get("mode"))
    out = _out_dir(args, doc)
    os.makedirs(out, exist_ok=True)
    _dump(os.path.join(out, "kernel_report.json"), {"config": cfg.to_dict(), **report.to_dict()})
    for v in report.verdicts:
        print(f"{v.name:18s} {'pass' if v.passed else 'FAIL'}  measured={v.measured:.4g} threshold={v.threshold:.4g}")
    return EXIT_OK if report.passed else EXIT_VERDICT


def _single_solve_setup(args, doc):
    cfg = _study_config(doc, args, require_power_of_two=False)
    eps = _eps_for(args, cfg)
    try:
        commensurate(cfg.T, eps)
    except CommensurabilityError as exc:
        raise CLIError(f"{exc}; eps must divide T = {cfg.T} an integer number of times") from exc
    if not 0 < eps <= 1:
        raise CLIError("eps must lie in (0, 1]")
    return cfg, eps, cfg.grid(eps)


def _write_solution(out, stem, u, eps, sidecar, fmt):
    os.makedirs(out, exist_ok=True)
    write_field(os.path.join(out, stem + ".bin"), u, eps)
    if fmt in ("csv", "all") and u.grid.size <= CSV_MAX_VALUES:
        write_field_csv(os.path.join(out, stem + ".csv"), u)
    _dump(os.path.join(out, stem + ".json"), sidecar)


def cmd_solve_eps(args, doc) -> int:
    cfg, eps, grid = _single_solve_setup(args, doc)
    kernel, coeff = build_kernel(cfg), build_coefficient(cfg)
    st = assemble_stencil(grid, kernel, coeff, eps, R_img=cfg.R_img, subsamples=cfg.subsamples)
    f = make_rhs(grid, cfg.rhs)
    res = solve_epsilon(st, cfg.m, f, tol=cfg.tol, maxit=cfg.maxit, precondition=cfg.precondition)
    sidecar = {"config": cfg.to_dict(), "eps": str(eps), "stencil": st.describe(), **res.sidecar()}
    _write_solution(_out_dir(args, doc), "u_eps", res.u, float(eps), sidecar, _formats(args, doc))
    print(f"eps={eps} N={grid.N} iterations={res.iterations} residual={res.residual:.3e} "
          f"c1_ratio={res.c1_ratio:.6f} c2_ratio={res.c2_ratio:.6f}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_solve_eff(args, doc) -> int:
    cfg, eps, grid = _single_solve_setup(args, doc)
    kernel, coeff = build_kernel(cfg), build_coefficient(cfg)
    lam_bar = mean_lambda(coeff)
    sym = init_symbol(cfg.alpha, lam_bar, kernel.angular, seed=cfg.seed)
    f = make_rhs(grid, cfg.rhs)
    u = solve_effective(grid, cfg.m, f, sym)
    fn = f.norm()
    sidecar = {"config": cfg.to_dict(), "grid": grid.describe(), "lambda_bar": lam_bar, "c_alpha": sym.c_alpha,
               "symbol_check": sym.check, "f_norm": fn, "u_norm": u.norm(),
               "c1_ratio": cfg.m * u.norm() / fn if fn > 0 else 0.0}
    _write_solution(_out_dir(args, doc), "u_effective", u, None, sidecar, _formats(args, doc))
    print(f"N={grid.N} lambda_bar={lam_bar:.12g} |u|={u.norm():.6e}")
    return EXIT_OK


def cmd_study(args, doc) -> int:
    cfg = _study_config(doc, args)
    report = run_study(cfg)
    write_outputs(report, _out_dir(args, doc), _formats(args, doc))
    for r in report.records:
        print(f"eps={r['eps']:>6s} N={r['N']:5d} error={r['error']:.4e} iterations={r['iterations']} "
              f"c1={r['c1_ratio']:.4f} c2={r['c2_ratio']:.4f}")
    slope = report.fit.get("slope")
    print(f"slope={slope:.4f}" if slope == slope else f"slope: {report.fit.get('flag')}")
    ok = report.converged
    if cfg.threshold is not None:
        ok = ok and report.records[-1]["error"] <= cfg.threshold
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_probe_weak(args, doc) -> int:
    cfg = _study_config(doc, args)
    spec = doc.get("probe")
    if spec is None or "delta" not in spec:
        raise CLIError("[probe] section with 'delta' is required")
    psi, delta = psi_from_spec(cfg.dim, spec)
    eps_list = spec.get("eps", [str(e) for e in cfg.eps])
    res = weak_convergence_probe(build_kernel(cfg), build_coefficient(cfg), eps_list, psi, delta,
                                 n_gauss=int(spec.get("n_gauss", 8)))
    out = _out_dir(args, doc)
    os.makedirs(out, exist_ok=True)
    _dump(os.path.join(out, "probe.json"), {"config": cfg.to_dict(), **res.to_dict()})
    for row in res.rows:
        print(f"eps={row['eps']:.6g} ratio={row['ratio']:.12f}")
    return EXIT_OK


COMMANDS = {
    "validate-kernel": cmd_validate_kernel,
    "solve-eps": cmd_solve_eps,
    "solve-eff": cmd_solve_eff,
    "study": cmd_study,
    "probe-weak": cmd_probe_weak,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlhomog", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML or JSON study document")
        sp.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and [output].dir)")
        sp.add_argument("--eps", help="rational eps such as 1/4 (solve commands)")
        sp.add_argument("--format", choices=("json", "csv", "all"))
        sp.add_argument("--threads", type=int, help="BLAS/FFT thread limit")
        sp.add_argument("--seed", type=int, help="seed for sampling validators")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    limit = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limit:
            doc = load_config(args.config)
            return COMMANDS[args.command](args, doc)
    except (CLIError, ConfigError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
