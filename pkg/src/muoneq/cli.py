"""Command-line driver: ensemble sweeps, audits, constants and training runs.

Exit codes: 0 success, 1 audit failure (or numerical failure), 2 usage error.
Every run writes ``manifest.json`` beside its outputs in ``--out``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from muoneq import __version__, experiments as ex, io as mio, theory
from muoneq.equilibrate import DEFAULT_EPS, MODE_ORDER, EquilConfig, EquilMode
from muoneq.exceptions import DomainError, FormatError, NumericalError
from muoneq.newton_schulz import NS5_CONFIG, NsConfig, get_polynomial
from muoneq.optimizer import (
    OptConfig,
    ScheduleSpec,
    muon_scale,
    run,
    theory_config,
    wd_envelope_check,
)
from muoneq.problems import make_problem

EXIT_OK, EXIT_AUDIT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, defaults):
        # Subcommands repeat the global flags with suppressed defaults so they may
        # appear on either side of the subcommand name.
        parser.add_argument("--seed", type=int, default=42 if defaults else argparse.SUPPRESS,
                            help="64-bit seed (default 42)")
        parser.add_argument("--out", default="muoneq-out" if defaults else argparse.SUPPRESS,
                            help="output directory (default muoneq-out)")
        parser.add_argument("--format", choices=("csv", "csv+svg"),
                            default="csv" if defaults else argparse.SUPPRESS)

    common = _Parser(add_help=False)
    global_flags(common, defaults=False)

    p = _Parser(prog="muoneq", description="MuonEq experiments and audits")
    global_flags(p, defaults=True)
    p.add_argument("--version", action="version", version=f"muoneq {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def ensemble_flags(sp, shapes, count, spectrum, imbalance):
        sp.add_argument("--shapes", default=shapes)
        sp.add_argument("--count", type=int, default=count)
        sp.add_argument("--spectrum-decades", type=float, default=spectrum)
        sp.add_argument("--imbalance-decades", type=float, default=imbalance)

    s = sub.add_parser("ns-sweep", parents=[common], help="per-mode NS error curves over an ensemble")
    ensemble_flags(s, "64x64,64x256,256x64,256x256", 40, 2.0, 1.5)
    s.add_argument("--k-max", type=int, default=10)
    s.add_argument("--coeffs", choices=("taylor", "practical"), default="taylor")
    s.add_argument("--prescale", choices=("frobenius", "max1_frobenius"), default="frobenius")
    s.add_argument("--modes", default="RC,R,C,None")
    s.add_argument("--epsilon", type=float, default=DEFAULT_EPS)

    s = sub.add_parser("bound-check", parents=[common], help="audit the Newton-Schulz lower bound")
    ensemble_flags(s, "64x64,64x256,256x64", 200, 2.0, 0.0)
    s.add_argument("--k-max", type=int, default=10)
    s.add_argument("--coeffs", choices=("taylor", "practical"), default="taylor")
    s.add_argument("--input", nargs="+", help="MEQ1/NPY matrices instead of the ensemble")
    s.add_argument("--tolerance", type=float, default=1e-10)

    s = sub.add_parser("decompose", parents=[common], help="approximation error vs preconditioning bias")
    ensemble_flags(s, "64x64,64x256,256x64", 40, 2.0, 1.5)
    s.add_argument("--input", nargs="+", help="MEQ1/NPY matrices instead of the ensemble")
    s.add_argument("--modes", default="RC,R,C,None")
    s.add_argument("--epsilon", type=float, default=DEFAULT_EPS)
    s.add_argument("--coeffs", choices=("taylor", "practical"), default="taylor")
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--prescale", choices=("frobenius", "max1_frobenius"), default="max1_frobenius")
    s.add_argument("--tolerance", type=float, default=1e-9)

    s = sub.add_parser("whiten-check", parents=[common], help="first-order whitening scaling experiment")
    s.add_argument("--side", choices=("row", "column", "two_sided", "all"), default="all")
    s.add_argument("--t-grid", type=_float_list,
                   default=[10.0 ** (-1 - 0.5 * i) for i in range(5)])
    s.add_argument("--shape", default="24x16")

    s = sub.add_parser("align-check", parents=[common], help="alignment inequality audit")
    s.add_argument("--count", type=int, default=1000)
    s.add_argument("--shapes", default="8x8,16x32,32x16,64x128,128x64,128x256")
    s.add_argument("--input", nargs="+", help="MEQ1/NPY matrices instead of the ensemble")
    s.add_argument("--tolerance", type=float, default=1e-9)

    s = sub.add_parser("inexactness", parents=[common], help="NS5 inexactness of stored matrices")
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--tolerance", type=float, default=1e-6)

    s = sub.add_parser("constants", parents=[common], help="convergence constants as CSV")
    s.add_argument("variant", choices=("rc", "r"))
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--g-inf", type=float, default=1.0)
    s.add_argument("--eps", type=float, default=None, help="RC stability term (default (4/5) g_inf^2 max(m, n))")
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--l-smooth", type=float, default=1.0)
    s.add_argument("--a", type=float, default=None, help="scale (default 0.2 sqrt(max(m, n)))")
    s.add_argument("--f-gap", type=float, default=1.0)
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--eps-ns", type=float, default=0.0)
    s.add_argument("--T", type=_float_list, default=[1e2, 1e3, 1e4])

    s = sub.add_parser("train", parents=[common], help="run the optimizer on a synthetic problem")
    s.add_argument("--problem", choices=("least-squares", "mlp2"), default="least-squares")
    s.add_argument("--mode", type=str, default="R")
    s.add_argument("--compare", action="store_true", help="run RC, R, C and None with the same seed")
    s.add_argument("--nesterov", action="store_true")
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--schedules", choices=("theory", "practical"), default="theory")
    s.add_argument("--m", type=int, default=64)
    s.add_argument("--n", type=int, default=32)
    s.add_argument("--hidden", type=int, default=32)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--n-samples", type=int, default=4096)
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--epsilon", type=float, default=None,
                   help="equilibration term (default 0 under theory schedules, 1e-8 otherwise)")
    s.add_argument("--rho", type=float, default=0.0, help="weight-decay level for theory schedules")
    s.add_argument("--eps-ns", type=float, default=0.0, help="NS gap allowance in the weight-decay schedule")
    s.add_argument("--exact-polar", action="store_true")
    s.add_argument("--eval-interval", type=int, default=1)
    s.add_argument("--lr-peak", type=float, default=0.02)
    s.add_argument("--momentum", type=float, default=0.95)
    s.add_argument("--record-params", action="store_true")
    return p


def _shapes(args):
    return ex.parse_shapes(args.shapes)


def _ensemble(args):
    if getattr(args, "input", None):
        return [mio.read_matrix(p) for p in args.input]
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    return ex.shape_ensemble(_shapes(args), args.count, args.spectrum_decades,
                             args.imbalance_decades, args.seed)


class Outputs:
    def __init__(self, args):
        self.dir = Path(args.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.svg = args.format == "csv+svg"
        self.files: list[str] = []

    def write(self, name: str, data: bytes):
        (self.dir / name).write_bytes(data)
        self.files.append(name)

    def csv(self, name, records, columns=None):
        self.write(name, mio.emit_csv(records, columns))

    def plot(self, name, series, axes):
        if self.svg:
            self.write(name, mio.emit_svg(series, axes))


def _manifest(args, outs: Outputs, status: str, summary: dict):
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("out",)}
    doc = {
        "artifact": "muoneq",
        "version": __version__,
        "subcommand": args.command,
        "seed": args.seed,
        "flags": flags,
        "outputs": outs.files,
        "status": status,
        "summary": summary,
    }
    text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"
    (outs.dir / "manifest.json").write_text(text)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return str(o)


def cmd_ns_sweep(args, outs):
    mats = _ensemble(args)
    modes = ex.parse_modes(args.modes)
    recs = ex.ns_sweep(mats, modes, get_polynomial(args.coeffs), args.k_max, args.prescale, args.epsilon)
    summ = ex.sweep_summary(recs)
    outs.csv("ns_sweep.csv", recs)
    outs.csv("ns_sweep_summary.csv", summ)
    series = {}
    for mode in modes:
        rows = [r for r in summ if r["mode"] == mode.value]
        series[mode.value] = ([r["k"] for r in rows], [r["median_error"] for r in rows])
    outs.plot("ns_sweep.svg", series, {"ylog": True, "xlabel": "NS step k",
                                       "ylabel": "median ||X_k - Orth||_F / sqrt(r)", "title": "NS error by mode"})
    kk = {m.value: next(r for r in summ if r["mode"] == m.value and r["k"] == min(5, args.k_max))
          for m in modes}
    for m, r in kk.items():
        print(f"{m:>4}: median error at k={r['k']}: {r['median_error']:.6g}  "
              f"median kappa {r['median_kappa_pre']:.4g} -> {r['median_kappa_post']:.4g}")
    return EXIT_OK, {m: r["median_error"] for m, r in kk.items()}


def cmd_bound_check(args, outs):
    mats = _ensemble(args)
    res = ex.bound_audit(mats, get_polynomial(args.coeffs), args.k_max, args.tolerance)
    outs.csv("bound_check.csv", res["records"])
    worst = min(r["margin"] for r in res["records"])
    print(f"matrices {len(mats)}, violations {res['violations']}, worst margin {worst:.3e}, "
          f"tau identity max deviation {res['tau_max_deviation']:.3e}")
    code = EXIT_OK if res["violations"] == 0 else EXIT_AUDIT
    return code, {"violations": res["violations"], "worst_margin": worst,
                  "tau_max_deviation": res["tau_max_deviation"]}


def cmd_decompose(args, outs):
    mats = _ensemble(args)
    modes = ex.parse_modes(args.modes)
    ns = NsConfig(get_polynomial(args.coeffs), args.steps, args.prescale)
    recs = ex.decompose_records(mats, modes, args.epsilon, ns, args.tolerance)
    outs.csv("decompose.csv", recs)
    bad = sum(not r["triangle_ok"] for r in recs)
    bad += sum(r["mode"] == "None" and r["precond_bias"] != 0.0 for r in recs)
    summ = []
    for m in modes:
        rs = [r for r in recs if r["mode"] == m.value]
        summ.append({
            "mode": m.value,
            "median_approx_error": float(np.median([r["approx_error"] for r in rs])),
            "median_precond_bias": float(np.median([r["precond_bias"] for r in rs])),
            "median_total": float(np.median([r["total"] for r in rs])),
        })
    outs.csv("decompose_summary.csv", summ)
    for s in summ:
        print(f"{s['mode']:>4}: approx {s['median_approx_error']:.4g}  bias {s['median_precond_bias']:.4g}  "
              f"total {s['median_total']:.4g}")
    print(f"violations {bad}")
    return (EXIT_OK if bad == 0 else EXIT_AUDIT), {"violations": bad}


def cmd_whiten_check(args, outs):
    sides = ("row", "column", "two_sided") if args.side == "all" else (args.side,)
    shape = ex.parse_shapes(args.shape)[0]
    recs, slopes, series = [], [], {}
    bad = 0
    for side in sides:
        r = theory.whitening_slopes(side, args.t_grid, shape, args.seed)
        for t, c, z, f in zip(args.t_grid, r["gram"], r["zeroth"], r["first"]):
            recs.append({"side": side, "t": t, "gram_residual": c, "zeroth_residual": z, "first_order_residual": f})
        ok = 0.9 <= r["zeroth_slope"] <= 1.1 and 1.8 <= r["first_slope"] <= 2.2
        bad += not ok
        slopes.append({"side": side, "zeroth_slope": r["zeroth_slope"], "first_slope": r["first_slope"], "ok": ok})
        series[f"{side} zeroth"] = (r["gram"], r["zeroth"])
        series[f"{side} first"] = (r["gram"], r["first"])
        print(f"{side:>9}: zeroth slope {r['zeroth_slope']:.4f}  first-order slope {r['first_slope']:.4f}")
    outs.csv("whiten_check.csv", recs)
    outs.csv("whiten_slopes.csv", slopes)
    outs.plot("whiten_check.svg", series, {"xlog": True, "ylog": True, "xlabel": "||C||_2", "ylabel": "residual"})
    return (EXIT_OK if bad == 0 else EXIT_AUDIT), {"slopes": slopes}


def cmd_align_check(args, outs):
    if args.input:
        mats = [mio.read_matrix(p) for p in args.input]
    else:
        if args.count < 1:
            raise UsageError("--count must be >= 1")
        mats = ex.alignment_ensemble(args.count, _shapes(args), args.seed)
    res = ex.align_audit(mats, args.tolerance)
    outs.csv("align_check.csv", res["records"])
    print(f"matrices {len(mats)}, violations {res['violations']}")
    return (EXIT_OK if res["violations"] == 0 else EXIT_AUDIT), {"violations": res["violations"]}


def cmd_inexactness(args, outs):
    mats = [mio.read_matrix(p) for p in args.input]
    res = ex.inexactness_records(mats, NS5_CONFIG, args.tolerance)
    for r, path in zip(res["records"], args.input):
        r["input"] = Path(path).name
    outs.csv("inexactness.csv", res["records"])
    agg = theory.ns_inexactness(mats, NS5_CONFIG)
    print(f"eps_ns {agg['eps_ns']:.6g}  delta_0 {agg['delta_0']:.6g}  lemma bound {agg['lemma_bound']:.6g}  "
          f"violations {res['violations']}")
    return (EXIT_OK if res["violations"] == 0 else EXIT_AUDIT), {
        "eps_ns": agg["eps_ns"], "delta_0": agg["delta_0"], "lemma_bound": agg["lemma_bound"],
        "violations": res["violations"],
    }


def cmd_constants(args, outs):
    a = args.a if args.a is not None else muon_scale((args.m, args.n))
    if args.variant == "rc":
        eps = args.eps if args.eps is not None else 0.8 * args.g_inf**2 * max(args.m, args.n)
        c = theory.rc_constants(args.m, args.n, args.g_inf, eps, args.sigma, args.l_smooth, a, args.f_gap)
    else:
        c = theory.r_constants(args.m, args.n, args.rho, args.sigma, args.l_smooth, a, args.eps_ns, args.f_gap)
    rec = {k: ("" if v is None else v) for k, v in c.as_dict().items()}
    for T in args.T:
        rec[f"bound_T{T:g}"] = c.bound(T)
    data = mio.emit_csv([rec])
    outs.write(f"constants_{args.variant}.csv", data)
    sys.stdout.write(data.decode())
    if c.warning:
        print(f"warning: {c.warning}", file=sys.stderr)
    return EXIT_OK, {"C1": c.C1, "C2": c.C2, "warning": c.warning}


def _train_config(args, mode: EquilMode) -> OptConfig:
    if args.schedules == "theory":
        eps = 0.0 if args.epsilon is None else args.epsilon
        ns = None if args.exact_polar else NS5_CONFIG
        return theory_config(mode, eps, args.rho, args.eps_ns, ns, args.nesterov)
    eps = DEFAULT_EPS if args.epsilon is None else args.epsilon
    ns = None if args.exact_polar else NsConfig("practical", 5, "frobenius")
    warm = max(1, args.steps // 10) if args.steps > 1 else 0
    return OptConfig(
        equil=EquilConfig(mode, eps),
        ns=ns,
        nesterov=args.nesterov,
        lr=ScheduleSpec.warmup_cosine(args.lr_peak, warm, args.steps + 1),
        beta=ScheduleSpec.constant(args.momentum),
        weight_decay=ScheduleSpec.constant(0.0),
    )


def cmd_train(args, outs):
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.problem == "least-squares":
        problem = make_problem("least-squares", (args.m, args.n), args.n_samples, args.noise,
                               args.seed, args.batch_size)
    else:
        problem = make_problem("mlp2", (args.n, args.hidden, args.classes), args.n_samples,
                               args.noise, args.seed, args.batch_size)
    modes = list(MODE_ORDER) if args.compare else [EquilMode.parse(args.mode)]
    series_loss, summary = {}, {}
    code = EXIT_OK
    for mode in modes:
        cfg = _train_config(args, mode)
        trace = run(problem, cfg, args.steps, seed=args.seed, eval_interval=args.eval_interval,
                    record_params=args.record_params)
        full = dict(zip(trace.eval_steps, zip(trace.full_loss, trace.full_grad_norm)))
        recs = []
        for t in range(1, len(trace) + 1):
            fl, fg = full.get(t, ("", ""))
            recs.append({"step": t, "loss": trace.loss[t - 1], "grad_norm": trace.grad_norm[t - 1],
                         "lr": trace.lr[t - 1], "beta": trace.beta[t - 1], "full_loss": fl, "full_grad_norm": fg})
        tag = mode.value.lower()
        outs.csv(f"train_{tag}.csv", recs)
        if args.record_params:
            prow = []
            snaps = trace.snapshots + [trace.final_params]
            for t, params in enumerate(snaps, start=1):
                for pi, p in enumerate(params):
                    for j, v in enumerate(np.asarray(p).reshape(-1)):
                        prow.append({"step": t, "param_index": pi, "entry": j, "value": float(v)})
            outs.csv(f"params_{tag}.csv", prow)
        entry = {"initial_loss": trace.loss[0], "final_loss": trace.loss[-1],
                 "initial_full_grad_norm": trace.full_grad_norm[0],
                 "final_full_grad_norm": trace.full_grad_norm[-1]}
        if args.schedules == "theory":
            env = wd_envelope_check(trace, cfg, args.rho, args.eps_ns)
            entry["envelope"] = env
            outs.csv(f"envelope_{tag}.csv", [{"mode": mode.value, **env}])
            if not env["ok"]:
                code = EXIT_AUDIT
            print(f"{mode.value:>4}: full grad norm {entry['initial_full_grad_norm']:.4g} -> "
                  f"{entry['final_full_grad_norm']:.4g}  envelope {'ok' if env['ok'] else 'VIOLATED'}")
        else:
            print(f"{mode.value:>4}: full grad norm {entry['initial_full_grad_norm']:.4g} -> "
                  f"{entry['final_full_grad_norm']:.4g}")
        summary[mode.value] = entry
        series_loss[mode.value] = (list(range(1, len(trace) + 1)), trace.loss)
    outs.plot("train_loss.svg", series_loss, {"ylog": True, "xlabel": "step", "ylabel": "mini-batch loss"})
    return code, summary


COMMANDS = {
    "ns-sweep": cmd_ns_sweep,
    "bound-check": cmd_bound_check,
    "decompose": cmd_decompose,
    "whiten-check": cmd_whiten_check,
    "align-check": cmd_align_check,
    "inexactness": cmd_inexactness,
    "constants": cmd_constants,
    "train": cmd_train,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        outs = Outputs(args)
        code, summary = COMMANDS[args.command](args, outs)
    except (UsageError, ValueError, DomainError, FormatError, FileNotFoundError) as exc:
        print(f"muoneq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"muoneq {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    _manifest(args, outs, "ok" if code == EXIT_OK else "audit_failure", summary)
    return code


if __name__ == "__main__":
    sys.exit(main())
