"""Command-line front end.

Every command prints one JSON document (or CSV with --csv) of the form
{"command", "version", "params", "result"}. Floats carry 12 significant digits
and keys are sorted, so identical inputs give identical bytes.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction

import numpy as np

from . import __version__

EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


class InputError(ValueError):
    pass


# ---------------------------------------------------------------- output


def clean(x):
    """JSON-ready copy with floats at 12 significant digits."""
    if isinstance(x, dict):
        return {str(k): clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [clean(float(x.real)), clean(float(x.imag))]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        v = float(f"{x:.12g}")
        return 0.0 if v == 0 else v
    return x


def render(doc, fmt):
    if fmt == "csv":
        rows = doc["result"].get("rows")
        if rows is None:
            raise InputError(f"command '{doc['command']}' has no tabular output; use --json")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = doc["result"]["columns"]
        w.writerow(cols)
        for r in rows:
            w.writerow([json.dumps(clean(r[c])) if isinstance(r[c], (list, dict)) else clean(r[c]) for c in cols])
        return buf.getvalue()
    return json.dumps(clean(doc), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------- input helpers


def _load_json(arg):
    """Inline JSON or a path to a JSON file."""
    if arg is None:
        return None
    s = arg.strip()
    if s[:1] in "[{" or s[:1].isdigit() or s[:1] == "-":
        try:
            return json.loads(s)
        except json.JSONDecodeError as e:
            raise InputError(f"invalid inline JSON: {e}") from None
    try:
        with open(s) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise InputError(f"{s}: invalid JSON: {e}") from None


def _check_keys(d, allowed, what):
    if not isinstance(d, dict):
        raise InputError(f"{what} must be a JSON object")
    extra = set(d) - set(allowed)
    if extra:
        raise InputError(f"unknown keys in {what}: {sorted(extra)}")


def _matrix3(values):
    if isinstance(values, str):
        if values == "identity":
            return np.eye(3)
        values = values.replace(",", " ").split()
    a = np.asarray([float(v) for v in np.ravel(values)], float)
    if a.size != 9:
        raise InputError("M needs 9 entries (row-major)")
    return a.reshape(3, 3)


def _positive(name, v):
    if not v > 0:
        raise InputError(f"{name} must be positive")
    return v


def _trig(ell, samples, shape):
    """Trigonometric interpolant of uniform samples on [0, ell)."""
    A = np.asarray(samples, float)
    if A.shape[1:] != shape:
        raise InputError(f"samples must have shape (n,) + {shape}")
    n = len(A)
    C = np.fft.fft(A, axis=0) / n
    p = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        p[n // 2] = 0.0  # drop the Nyquist term; samples should be band limited well below it
        C[n // 2] = 0.0
    w = 2 * np.pi / ell
    return lambda s: np.real(np.tensordot(np.exp(1j * w * p * s), C, axes=(0, 0)))


def load_loop(spec, seed=None):
    from .circle_model import MatrixLoop

    if spec is None:
        raise InputError("--loop is required")
    _check_keys(spec, {"kind", "ell", "M", "samples", "sign", "seed", "amplitude", "harmonics", "winding"}, "loop")
    ell = _positive("ell", float(spec.get("ell", 2 * np.pi)))
    kind = spec.get("kind", "samples" if "samples" in spec else None)
    if kind == "constant":
        return MatrixLoop.constant(_matrix3(spec.get("M", "identity")), ell)
    if kind == "rotation":
        return MatrixLoop.rotation(ell, int(spec.get("sign", 1)))
    if kind == "random":
        sd = spec.get("seed", seed if seed is not None else 0)
        return MatrixLoop.random_smooth(int(sd), ell, float(spec.get("amplitude", 0.1)), int(spec.get("harmonics", 2)),
                                        int(spec.get("winding", 0)), int(spec.get("sign", 1)))
    if kind == "samples":
        return MatrixLoop.from_samples(ell, spec["samples"])
    raise InputError("loop kind must be constant, rotation, random or samples")


def load_pert(spec, ell):
    from .circle_model import PerturbationData

    if spec is None:
        return None
    _check_keys(spec, {"Mvec", "W", "B", "C", "b0", "q", "r0"}, "pert")
    f = {}
    for key, shape in (("Mvec", (3,)), ("W", (3, 3)), ("B", (3,)), ("C", (3,))):
        if spec.get(key) is not None:
            f[key] = _trig(ell, spec[key], shape)
    return PerturbationData(f.get("Mvec"), f.get("W"), f.get("B"), f.get("C"), float(spec.get("b0", 0.0)),
                            float(spec.get("q", 0.0)), None if spec.get("r0") is None else float(spec["r0"]))


def _class(v, name):
    if v is None:
        raise InputError(f"--{name} is required")
    if isinstance(v, str):
        v = _load_json(v) if v.strip()[:1] == "[" else v.replace(",", " ").split()
    try:
        return [Fraction(str(x)) for x in v]
    except (ValueError, ZeroDivisionError):
        raise InputError(f"--{name}: entries must be integers or fractions") from None


def _form(arg):
    from .lattice_cohomology import UnimodularForm

    d = _load_json(arg)
    if d is None:
        raise InputError("--form is required")
    return UnimodularForm.from_json(d)


# ---------------------------------------------------------------- commands


def cmd_clifford(a):
    from .clifford import build_clifford_rep, verify_relations

    rep = build_clifford_rep()
    if a.action == "dump":
        return {"matrices": rep.to_json()}
    return {"violations": verify_relations(rep)}


def _spectrum_rows(sl):
    rows = [{"index": i, "eigenvalue": float(e), "multiplicity": int(m), "residual": float(sl.truncation_residual)}
            for i, (e, m) in enumerate(zip(sl.eigenvalues, sl.multiplicities))]
    return {"columns": ["index", "eigenvalue", "multiplicity", "residual"], "rows": rows,
            "truncation_residual": float(sl.truncation_residual)}


def cmd_spectrum(a):
    if a.kind == "d0":
        from .oscillator import d0_spectrum_numeric

        M = _matrix3(a.M)
        sl = d0_spectrum_numeric(M, _positive("R", a.R), n_max=a.nmax or 40, count=a.count)
        return _spectrum_rows(sl)
    if a.kind == "model1d":
        from .oscillator import build_model_1d, lowest_levels

        n = a.nmax or 40
        ev, mu = lowest_levels(np.linalg.eigvalsh(build_model_1d(_positive("R", a.R), n_max=n).matrix), a.count)
        ev2, _ = lowest_levels(np.linalg.eigvalsh(build_model_1d(a.R, n_max=n + 4).matrix), a.count)
        from .oscillator import SpectrumSlice

        return _spectrum_rows(SpectrumSlice(ev, mu, float(np.max(np.abs(ev2 - ev)))))
    from .circle_model import build_D_circle, circle_spectrum, fit_lattice

    loop = load_loop(_load_json(a.loop), a.seed)
    pert = load_pert(_load_json(a.pert), loop.ell)
    band = _positive("band", a.band)
    op = build_D_circle(loop, _positive("R", a.R), pert, n_max=a.nmax or 4, band=band)
    spec = circle_spectrum(op, band)
    out = {"columns": ["index", "eigenvalue", "multiplicity", "residual"],
           "rows": [{"index": i, "eigenvalue": float(e), "multiplicity": 1, "residual": float(r)}
                    for i, (e, r) in enumerate(zip(spec.values, spec.residuals))],
           "dimension": op.dim, "antiperiodic": bool(op.meta["nu"])}
    try:
        out["lattice_fit"] = fit_lattice(spec.values, loop.ell).to_json()
    except RuntimeError as e:
        out["lattice_fit"] = {"error": str(e)}
    return out


def cmd_berry(a):
    from .circle_model import berry_alpha

    loop = load_loop(_load_json(a.loop), a.seed)
    pert = load_pert(_load_json(a.pert), loop.ell)
    b = berry_alpha(loop, _positive("R", a.R), pert, n_steps=a.steps)
    return {"alpha": b.alpha, "alpha_refined": b.alpha_refined, "residual": abs(b.alpha - b.alpha_refined),
            "sigma": b.sigma, "shift": b.first_order_shift}


def _hermitian(v, n=None):
    if isinstance(v, dict):
        m = np.asarray(v.get("re", 0), float) + 1j * np.asarray(v.get("im", 0), float)
    else:
        m = np.asarray(v, float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError("matrices must be square")
    if np.abs(m - m.conj().T).max() > 1e-12:
        raise InputError("matrices must be Hermitian")
    return m


def cmd_flow(a):
    from .flow_engine import OperatorFamily, brute_force_flow, spectral_flow

    spec = _load_json(a.family)
    if spec is None:
        raise InputError("--family is required")
    _check_keys(spec, {"kind", "A0", "B", "t", "n_grid", "n"}, "family")
    t0, t1 = spec.get("t", [0.0, 1.0])
    grid = np.linspace(float(t0), float(t1), int(spec.get("n_grid", 41)))
    if spec.get("kind", "pencil") == "random-pencil":
        rng = np.random.default_rng(a.seed or 0)
        n = int(spec.get("n", 12))
        X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        A0 = (X + X.conj().T) / 2
        Y = rng.normal(size=(n, n))
        B = -(Y @ Y.T + np.eye(n))
    else:
        A0, B = _hermitian(spec["A0"]), _hermitian(spec["B"])
        if A0.shape != B.shape:
            raise InputError("A0 and B must have the same shape")
    fam = OperatorFamily(lambda t: A0 + t * B, grid, "A0 + t B")
    r = spectral_flow(fam, _positive("band", a.band))
    out = r.to_json()
    out["oracle_net"] = brute_force_flow(fam)
    return out


def cmd_torus(a):
    from .torus_model import TorusModelSpec, crossing_predictions, sector_flow_check

    spec = TorusModelSpec(a.q, _positive("m", a.m))
    win = None
    if a.window:
        try:
            win = tuple(float(x) for x in a.window.split(","))
        except ValueError:
            raise InputError("--window must be 'a,b'") from None
        if len(win) != 2 or not win[0] < win[1]:
            raise InputError("--window must be 'a,b' with a < b")
    pred = crossing_predictions(spec)
    flow = sector_flow_check(spec, win).to_json()
    return {"predictions": pred, "sector_flow": flow, "r": spec.r}


def cmd_lattice(a):
    from . import lattice_cohomology as lc

    if a.action == "index":
        v = lc.index_formula(a.b1, a.b2plus, Fraction(a.tt), Fraction(a.tK), a.tK_sign)
        return {"index": v}
    if a.action == "criterion":
        return lc.boundedness_criterion(a.n, a.eps_bound).to_json()
    form = _form(a.form)
    if a.action == "pontrjagin":
        return lc.pontrjagin_class_search(form, a.k).to_json()
    if a.action == "search-t":
        return lc.kahler_t_search(form, _class(a.K, "K"), _class(a.w, "w"), not a.allow_tK, a.route).to_json()
    if a.action == "search-zeta":
        return lc.symplectic_zeta_search(form, _class(a.K, "K"), _class(a.w, "w")).to_json()
    return lc.prop515_estimate(_class(a.F, "F"), _class(a.Sigma, "Sigma"), form).to_json()


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="vwspec", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="fmt", action="store_const", const="json")
    fmt.add_argument("--csv", dest="fmt", action="store_const", const="csv")
    common.add_argument("--out", help="write output to this path")
    common.add_argument("--seed", type=int, help="seed for randomized inputs")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("clifford", parents=[common], help="Clifford module relations")
    c.add_argument("action", nargs="?", choices=["check", "dump"], default="check")
    c.set_defaults(func=cmd_clifford)

    s = sub.add_parser("spectrum", parents=[common], help="truncated spectra")
    s.add_argument("kind", choices=["d0", "model1d", "circle"])
    s.add_argument("--M", default="identity", help="'identity' or 9 numbers, row-major")
    s.add_argument("--R", type=float, default=1.0)
    s.add_argument("--nmax", type=int)
    s.add_argument("--count", type=int, default=12)
    s.add_argument("--loop", help="loop JSON (inline or file)")
    s.add_argument("--pert", help="perturbation JSON (inline or file)")
    s.add_argument("--band", type=float, default=2.5)
    s.set_defaults(func=cmd_spectrum)

    b = sub.add_parser("berry", parents=[common], help="holonomy of the kernel bundle")
    b.add_argument("--loop", required=True)
    b.add_argument("--pert")
    b.add_argument("--R", type=float, default=100.0)
    b.add_argument("--steps", type=int, default=64)
    b.set_defaults(func=cmd_berry)

    f = sub.add_parser("flow", parents=[common], help="spectral flow of a pencil A0 + t B")
    f.add_argument("--family", required=True)
    f.add_argument("--band", type=float, default=1.0)
    f.set_defaults(func=cmd_flow)

    t = sub.add_parser("torus", parents=[common], help="T4 model sector flow")
    t.add_argument("--q", type=int, required=True)
    t.add_argument("--m", type=float, required=True)
    t.add_argument("--window")
    t.set_defaults(func=cmd_torus)

    la = sub.add_parser("lattice", parents=[common], help="intersection-form arithmetic")
    la.add_argument("action", choices=["pontrjagin", "search-t", "search-zeta", "index", "criterion", "prop515"])
    la.add_argument("--form", help='e.g. {"kind": "odd", "params": {"p_plus": 3, "q_minus": 3}} or {"kind": "even", "gram": [[...]]}')
    la.add_argument("--k", type=int)
    la.add_argument("--K")
    la.add_argument("--w")
    la.add_argument("--F")
    la.add_argument("--Sigma")
    la.add_argument("--route", choices=["auto", "pairs", "definite"], default="auto")
    la.add_argument("--allow-tK", action="store_true", help="do not require t.K = 0")
    la.add_argument("--b1", type=int, default=0)
    la.add_argument("--b2plus", type=int, default=0)
    la.add_argument("--tt", default="0")
    la.add_argument("--tK", default="0")
    la.add_argument("--tK-sign", dest="tK_sign", type=int, choices=[-1, 1], default=-1)
    la.add_argument("--n", type=int, default=0)
    la.add_argument("--eps-bound", dest="eps_bound", type=float, default=1.0)
    la.set_defaults(func=cmd_lattice)
    return p


_SKIP = {"func", "fmt", "out", "command"}


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if a.command == "lattice" and a.action == "pontrjagin" and a.k is None:
        print("error: --k is required", file=stderr)
        return EXIT_INPUT
    params = {k: v for k, v in sorted(vars(a).items()) if k not in _SKIP and v is not None}
    try:
        result = a.func(a)
        doc = {"command": a.command, "version": __version__, "params": params, "result": result}
        text = render(doc, a.fmt or "json")
    except (InputError, ValueError, KeyError, TypeError) as e:
        print(f"error: {e}", file=stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"error: {e}", file=stderr)
        return EXIT_IO
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=stderr)
        return EXIT_NUMERIC
    try:
        if a.out:
            with open(a.out, "w") as fh:
                fh.write(text)
        else:
            stdout.write(text)
    except OSError as e:
        print(f"error: {e}", file=stderr)
        return EXIT_IO
    return 0


def main():  # pragma: no cover
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
