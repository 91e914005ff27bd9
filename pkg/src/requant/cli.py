"""Command-line front end.

Every command prints CSV to stdout, or with ``--out STEM`` writes
STEM.csv, STEM.json and STEM.manifest.json.  Exit codes: 0 ok, 2 usage,
3 numerical failure, 4 comparison with the bundled paper values failed.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import io
import json
import os
import sys
from importlib import resources

import numpy as np

from . import __version__
from .errors import ConfigError, RequantError, SchemeError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_COMPARE = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------
# helpers


def load_scheme(spec: str):
    from .scheme import QuantizationScheme, max_scheme
    if spec.isdigit():
        return max_scheme(int(spec))
    if os.path.exists(spec):
        return QuantizationScheme.from_json(spec)
    raise UsageError(f"--scheme must be 1..4 or a JSON file, got {spec!r}")


def parse_grid(spec: str) -> np.ndarray:
    """'a:b:step' (inclusive) or a comma list."""
    try:
        if ":" in spec:
            a, b, st = (float(t) for t in spec.split(":"))
            n = int(round((b - a) / st))
            grid = a + st * np.arange(n + 1)
            return np.round(grid, 12)
        return np.array([float(t) for t in spec.split(",")])
    except ValueError:
        raise UsageError(f"bad grid {spec!r}; use start:stop:step or a,b,c") from None


def fmt(x, digits):
    s = f"{x:.{digits}f}"
    # values that round to zero print unsigned
    return s[1:] if s.startswith("-") and not s.strip("-0.") else s


def matrix_csv(mat, labels, digits, corner="i\\j") -> str:
    buf = io.StringIO()
    buf.write(",".join([corner] + [str(l) for l in labels]) + "\n")
    for l, row in zip(labels, mat):
        buf.write(",".join([str(l)] + [fmt(v, digits) for v in row]) + "\n")
    return buf.getvalue()


def rows_csv(header, rows, digits) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(fmt(v, digits) if isinstance(v, float) else str(v) for v in r) + "\n")
    return buf.getvalue()


def emit(args, command: str, csv_text: str, payload: dict, params: dict, extra: dict | None = None):
    """Print or write CSV/JSON plus the manifest (atomic per file).

    ``extra`` maps already written side files to their bytes so that the
    manifest lists their checksums too.
    """
    if not args.out:
        sys.stdout.write(csv_text)
        return
    stem = args.out
    d = os.path.dirname(stem)
    if d:
        os.makedirs(d, exist_ok=True)
    mname = os.path.basename(stem) + ".manifest.json"
    payload = dict(payload, manifest=mname)
    csv_text += f"# manifest,{mname}\n"
    files = {stem + ".csv": csv_text.encode(),
             stem + ".json": (json.dumps(payload, indent=1, sort_keys=True) + "\n").encode()}
    for path, data in files.items():
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    manifest = {
        "command": command,
        "parameters": params,
        "seed": params.get("seed"),
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": {os.path.basename(p): hashlib.sha256(b).hexdigest()
                    for p, b in {**files, **(extra or {})}.items()},
    }
    with open(stem + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    sys.stderr.write(f"wrote {stem}.csv, {stem}.json, {stem}.manifest.json\n")


def mark_failed(args, msg: str):
    if getattr(args, "out", None):
        with open(args.out + ".FAILED", "w") as fh:
            fh.write(msg + "\n")


def bundled_tables() -> dict:
    with resources.files("requant").joinpath("data/paper_tables.json").open() as fh:
        return json.load(fh)


def compare(name, got, ref, tol):
    diff = np.abs(np.asarray(got) - np.asarray(ref))
    ok = bool(np.all(diff <= tol + 1e-12))
    i, j = np.unravel_index(np.argmax(diff), diff.shape) if diff.ndim == 2 else (int(np.argmax(diff)), None)
    where = f"({i}, {j})" if j is not None else f"[{i}]"
    line = f"{'PASS' if ok else 'FAIL'} {name}: max |diff| = {diff.max():.4f} at {where}, tolerance {tol}"
    return ok, line


# ----------------------------------------------------------------------------
# commands


def cmd_moments(args):
    from .moments import build_context, moment_matrix
    scheme = load_scheme(args.scheme)
    ctx = build_context(scheme, args.lam, h=args.h, window=args.window)
    size = args.size or max(2 * scheme.M, 3)
    mm = moment_matrix(ctx, size=size)
    n = mm.mu.shape[0]
    params = {"scheme": scheme.to_dict(), "lambda": args.lam, "h": args.h, "window": args.window,
              "size": size}
    payload = {"parameters": params, "mu": mm.mu.tolist(), "mu20": mm.var_target,
               "mu02": mm.var_estimate}
    emit(args, "moments", matrix_csv(mm.mu, range(n), args.digits, "n\\m"), payload, params)


def cmd_dist(args):
    from .dist import bivariate_distribution, correlation_coefficient
    from .moments import build_context, moment_matrix
    scheme = load_scheme(args.scheme)
    ctx = build_context(scheme, args.lam, h=args.h, window=args.window)
    mm = moment_matrix(ctx)
    P = bivariate_distribution(mm, scheme)
    params = {"scheme": scheme.to_dict(), "lambda": args.lam, "h": args.h, "window": args.window}
    shown = P.pretty() if args.pretty else P.p
    payload = {"parameters": params, "levels": P.indices.tolist(), "p": P.p.tolist(),
               "rho": correlation_coefficient(mm), "residual": P.residual,
               "negatives": [list(t) for t in P.negatives]}
    emit(args, "dist", matrix_csv(shown, P.indices, args.digits), payload, params)


def cmd_rho(args):
    from .dist import rho_sweep
    scheme = load_scheme(args.scheme)
    grid = parse_grid(args.lambda_grid)
    rows = rho_sweep(scheme, grid, h=args.h, window=args.window)
    params = {"scheme": scheme.to_dict(), "lambda_grid": args.lambda_grid, "h": args.h,
              "window": args.window}
    payload = {"parameters": params, "rows": [{"lambda": l, "rho": r} for l, r in rows]}
    emit(args, "rho", rows_csv(["lambda", "rho"], rows, args.digits), payload, params)


def cmd_simulate(args):
    from .mc import SimulationConfig, simulate_joint
    scheme = load_scheme(args.scheme)
    cfg = SimulationConfig(scheme=scheme, lam=args.lam, trials=args.trials,
                           recon_terms_x=args.terms, recon_terms_w=args.terms_w or args.terms,
                           seed=args.seed)
    rep = simulate_joint(cfg)
    params = cfg.to_dict()
    csv = matrix_csv(rep.empirical_p.p, rep.empirical_p.indices, args.digits)
    csv += f"# rho,{fmt(rep.empirical_rho, args.digits)},stderr,{fmt(rep.rho_stderr, args.digits)}\n"
    emit(args, "simulate", csv, rep.to_dict(), params)


def cmd_src(args):
    from .rateconv import SrcConfig, run_src
    scheme = load_scheme(args.scheme)
    cfg = SrcConfig(L=args.L, D=args.D, scheme=scheme, taps_per_phase=args.taps,
                    stream_len=args.samples, seed=args.seed, A_f_mode=args.af_mode,
                    both_fir=args.both_fir)
    samples = None
    if args.input:
        from .rateconv import read_stream
        try:
            samples, _ = read_stream(args.input)
        except OSError as e:
            raise UsageError(f"cannot read --input: {e}") from None
    if args.streams and not args.out:
        raise UsageError("--streams needs --out")
    rep = run_src(cfg, samples=samples, keep_streams=bool(args.streams))
    params = cfg.to_dict()
    if args.input:
        params["input"] = os.path.basename(args.input)
        params["input_sha256"] = hashlib.sha256(open(args.input, "rb").read()).hexdigest()
    rows = [(i, i / cfg.L, float(rep.per_phase_mu11[i]), float(rep.per_phase_mu02[i]),
             float(rep.empirical_phase_gamma[i])) for i in range(cfg.L)]
    csv = rows_csv(["phase", "lambda", "mu11", "mu02", "gamma_empirical_phase"], rows, args.digits)
    csv += (f"# gamma_empirical,{fmt(rep.gamma_empirical, args.digits)},"
            f"gamma_theoretical,{fmt(rep.gamma_theoretical, args.digits)}\n")
    extra = {}
    if args.streams:
        from .rateconv import write_stream
        mname = os.path.basename(args.out) + ".manifest.json"
        for path in ("top", "bottom"):
            name = f"{args.out}.{path}.{args.streams}"
            write_stream(name, rep.streams[path], args.streams,
                         meta={"path": path, "manifest": mname, "L": cfg.L, "D": cfg.D,
                               "first_output": int(stream_first_output(cfg))})
            extra[name] = open(name, "rb").read()
    emit(args, "src", csv, rep.to_dict(), params, extra=extra)


def stream_first_output(cfg):
    from .rateconv import stream_plan
    return stream_plan(cfg)[1][0]


def _table_theory(name, ref):
    from .dist import bivariate_distribution
    from .moments import build_context, moment_matrix
    from .scheme import max_scheme
    s = max_scheme(ref["M"])
    P = bivariate_distribution(moment_matrix(build_context(s, ref["lambda"])), s)
    return P.p, P.indices


def _table_mc(name, ref, seed, trials):
    from .mc import SimulationConfig, simulate_joint
    from .scheme import max_scheme
    rep = simulate_joint(SimulationConfig(max_scheme(ref["M"]), ref["lambda"], trials=trials, seed=seed))
    return rep.empirical_p.p, rep.empirical_p.indices


def cmd_tables(args):
    which = args.which
    ok = True
    lines = []
    params = {"which": which, "seed": args.seed, "trials": args.trials, "samples": args.samples}
    if which in ("table2a", "table2b", "table3a", "table3b"):
        ref = bundled_tables()[which]
        if which.startswith("table2"):
            p, idx = _table_theory(which, ref)
        else:
            p, idx = _table_mc(which, ref, args.seed, args.trials)
        ok, line = compare(which, p, ref["p"], ref["tolerance"])
        lines.append(line)
        csv = matrix_csv(p, idx, args.digits)
        payload = {"parameters": params, "levels": idx.tolist(), "p": p.tolist(),
                   "reference": ref, "pass": ok}
    elif which in ("fig2", "fig4"):
        from .dist import rho_sweep
        from .mc import SimulationConfig, simulate_joint
        from .scheme import max_scheme
        grid = np.round(np.arange(1, 11) * 0.05, 12) if which == "fig4" else np.round(np.arange(0, 11) * 0.05, 12)
        rows = []
        for M in range(1, 5):
            for lam, rho in rho_sweep(max_scheme(M), grid):
                row = [M, float(lam), rho]
                if which == "fig4":
                    rep = simulate_joint(SimulationConfig(max_scheme(M), float(lam), trials=args.trials,
                                                          seed=args.seed))
                    tol = max(0.01, 3 * rep.rho_stderr)
                    good = abs(rep.empirical_rho - rho) <= tol
                    ok &= good
                    row += [rep.empirical_rho, rep.rho_stderr, "PASS" if good else "FAIL"]
                rows.append(row)
        header = ["M", "lambda", "rho_theory"] + (["rho_mc", "rho_stderr", "check"] if which == "fig4" else [])
        csv = rows_csv(header, rows, args.digits)
        payload = {"parameters": params, "header": header, "rows": rows, "pass": ok}
        if which == "fig4":
            lines.append(f"{'PASS' if ok else 'FAIL'} fig4: |rho_theory - rho_mc| <= max(0.01, 3 stderr) at all points")
    elif which == "fig5":
        from .mc import finite_window_rho
        from .scheme import max_scheme
        sizes = [2, 4, 8, 16, 32, 64, 128, 200, 500]
        th = dict(finite_window_rho(max_scheme(1), 0.5, sizes, theory=True))
        mc = dict(finite_window_rho(max_scheme(1), 0.5, sizes, theory=False, trials=args.trials,
                                    seed=args.seed))
        rows = [[g, th[g], mc[g], abs(th[g] - mc[g])] for g in sizes]
        checked = [r for r in rows if r[0] in (4, 8, 16, 64, 200)]
        ok = all(r[3] <= 0.01 for r in checked)
        lines.append(f"{'PASS' if ok else 'FAIL'} fig5: theory vs MC within 0.01 at G in 4, 8, 16, 64, 200")
        csv = rows_csv(["G", "rho_theory", "rho_mc", "abs_diff"], rows, args.digits)
        payload = {"parameters": params, "rows": rows, "pass": ok}
    elif which == "fig7":
        from .rateconv import SrcConfig, run_src
        from .scheme import max_scheme
        rows = []
        for M in range(1, 5):
            for L in range(2, 31):
                rep = run_src(SrcConfig(L=L, D=1, scheme=max_scheme(M), stream_len=args.samples,
                                        seed=args.seed))
                good = abs(rep.gamma_empirical - rep.gamma_theoretical) <= 0.01
                ok &= good
                rows.append([M, L, rep.gamma_theoretical, rep.gamma_empirical, "PASS" if good else "FAIL"])
        lines.append(f"{'PASS' if ok else 'FAIL'} fig7: |gamma_emp - gamma_theory| <= 0.01 for all M, L")
        csv = rows_csv(["M", "L", "gamma_theory", "gamma_empirical", "check"], rows, args.digits)
        payload = {"parameters": params, "rows": rows, "pass": ok}
    else:
        raise UsageError(f"unknown table {which!r}")
    emit(args, "tables", csv, payload, params)
    for line in lines:
        sys.stderr.write(line + "\n")
    return EXIT_OK if ok else EXIT_COMPARE


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="requant", description=__doc__.split("\n")[0],
                                allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scheme=True):
        if scheme:
            sp.add_argument("--scheme", default="4", help="Max scheme M (1..4) or JSON file {M, a, y}")
        sp.add_argument("--out", help="output stem; writes STEM.csv, STEM.json, STEM.manifest.json")
        sp.add_argument("--digits", type=int, default=6, help="CSV decimal digits (default 6)")

    def theory_opts(sp):
        sp.add_argument("--h", type=int, default=1, help="near-set half-size (default 1)")
        sp.add_argument("--window", type=int, default=None,
                        help="finite estimate window G (even); default infinite")

    sp = sub.add_parser("moments", help="mixed-moment matrix mu_{n,m}", allow_abbrev=False)
    common(sp)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    theory_opts(sp)
    sp.add_argument("--size", type=int, default=None,
                    help="matrix order n, m < size (default max(2M, 3))")
    sp.set_defaults(func=cmd_moments)

    sp = sub.add_parser("dist", help="bivariate level distribution p_{i,j}", allow_abbrev=False)
    common(sp)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    theory_opts(sp)
    sp.add_argument("--pretty", action="store_true",
                    help="clip small negative entries in the CSV (JSON stays raw)")
    sp.set_defaults(func=cmd_dist)

    sp = sub.add_parser("rho", help="correlation coefficient over a lambda grid", allow_abbrev=False)
    common(sp)
    sp.add_argument("--lambda-grid", default="0:0.5:0.05", help="start:stop:step or a,b,c")
    theory_opts(sp)
    sp.set_defaults(func=cmd_rho)

    sp = sub.add_parser("simulate", help="Monte Carlo joint distribution", allow_abbrev=False)
    common(sp)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--terms", type=int, default=200, help="reconstruction terms of x (and w)")
    sp.add_argument("--terms-w", type=int, default=None, help="reconstruction terms of w if different")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("src", help="L/D rate conversion and coherence gamma", allow_abbrev=False)
    common(sp)
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--D", type=int, default=1)
    sp.add_argument("--samples", type=int, default=1_000_000, help="output samples used for gamma")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--taps", type=int, default=256, help="FIR taps per phase (default 256)")
    sp.add_argument("--af-mode", choices=("unity", "computed"), default="unity")
    sp.add_argument("--both-fir", action="store_true", help="reference path through the same FIR")
    sp.add_argument("--input", default=None,
                    help="input stream file (see FORMATS.md) instead of generated samples")
    sp.add_argument("--streams", choices=("bin", "csv"), default=None,
                    help="with --out, also write STEM.top.EXT and STEM.bottom.EXT")
    sp.set_defaults(func=cmd_src)

    sp = sub.add_parser("tables", help="reproduce a paper table or figure dataset", allow_abbrev=False)
    common(sp, scheme=False)
    sp.add_argument("--which", required=True,
                    choices=("table2a", "table2b", "table3a", "table3b", "fig2", "fig4", "fig5", "fig7"))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--samples", type=int, default=1_000_000)
    sp.set_defaults(func=cmd_tables)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        code = args.func(args)
    except (UsageError, SchemeError, ConfigError, ValueError) as exc:
        mark_failed(args, f"usage: {exc}")
        sys.stderr.write(f"requant: error: {exc}\n")
        return EXIT_USAGE
    except (RequantError, ArithmeticError, np.linalg.LinAlgError) as exc:
        mark_failed(args, f"numerical: {exc}")
        sys.stderr.write(f"requant: numerical failure: {exc}\n")
        return EXIT_NUMERIC
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
