"""``leap`` command line: gen, train, eval, ablate, verify."""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen as dg
from . import diffcore as dc
from . import evaluate as ev
from . import oracles
from . import prior as pr
from . import splineflow as sf
from . import trainer as tr

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _parser():
    p = argparse.ArgumentParser(prog="leap", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--kind", required=True, choices=dg.KINDS)
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--regimes", type=int)
    g.add_argument("--points", type=int)
    g.add_argument("--sparse", action="store_true")
    g.add_argument("--n", type=int, default=8, help="latent dimension")
    g.add_argument("--lag", type=int, default=2)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--config", type=Path, help="JSON with any subset of the config keys")
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--resume", action="store_true")

    e = sub.add_parser("eval", help="score a trained run")
    e.add_argument("--run", type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--threshold", type=float, default=0.1)
    e.add_argument("--which", choices=("best", "last"), default="best")
    e.add_argument("--debug-truth", action="store_true",
                   help="score the true latents against themselves")

    a = sub.add_parser("ablate", help="train the module ladder over seeds")
    a.add_argument("--data", required=True, type=Path)
    a.add_argument("--config", type=Path)
    a.add_argument("--out", required=True, type=Path)
    a.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])

    v = sub.add_parser("verify", help="run the fast self-check suite")
    v.add_argument("--flows", type=Path, help="checkpoint whose spline flows are checked")
    return p


def _config(path, seed=None):
    cfg = tr.TrainConfig() if path is None else tr.TrainConfig.load(path)
    if seed is not None:
        cfg.seed = seed
    return cfg


def cmd_gen(args):
    ds = dg.generate(args.kind, seed=args.seed, points=args.points, regimes=args.regimes,
                     sparse=args.sparse, n=args.n, L=args.lag)
    dg.save(ds, args.out)
    print(f"wrote {ds.num_windows} windows of kind {ds.kind} to {args.out}")


def cmd_train(args):
    ds = dg.load(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "train.log", "a", encoding="utf-8") as log:
        art = tr.train(ds, _config(args.config, args.seed), args.out, resume=args.resume,
                       log=log)
    print(f"epochs {len(art.metrics)}  best val elbo {art.best_val_elbo:.4f}  "
          f"final mcc {art.final_mcc:.4f}")


def _held_out(ds):
    _, _, test = ds.split()
    return np.sort(test)


def evaluate_run(ds, model=None, threshold=0.1, debug_truth=False):
    """EvalReport for the test windows, scoring the newest position of each window."""
    idx = _held_out(ds)
    z_true = ds.z[idx, -1]
    if debug_truth:
        z_hat = z_true.copy()
    else:
        if model.cfg.z_dim != ds.n:
            raise CliError(f"model has {model.cfg.z_dim} latents, dataset {ds.n}", EXIT_DATA)
        z_hat = model.encode(ds.x[idx])[:, -1]
    res = ev.mcc(z_hat, z_true, ds.method)
    report = ev.EvalReport(res.mcc, ds.method, res.permutation.tolist(),
                           res.correlations.tolist())
    if isinstance(ds.spec, dg.NpProcessSpec):
        truth = ev.mask_to_skeleton(ds.spec.mask)
        if debug_truth:
            skel = truth
        elif model.cfg.prior and model.transition.kind == "np":
            skel = ev.extract_skeleton(model.transition, threshold, res.permutation)
        else:
            skel = None
        if skel is not None:
            report.shd = ev.shd(skel, truth)
            report.skeleton = ev.skeleton_edges(skel)
        var = ev.variability_rank(ds.spec, ds.z[0])
        report.variability = {"rank": var.rank, "required": var.required,
                              "passed": var.passed}
    else:
        B = ds.spec.effective(0)
        if debug_truth:
            B_hat = B
        elif model.cfg.prior and model.transition.kind == "var":
            B_hat = model.transition.matrices()
        else:
            B_hat = None
        if B_hat is not None:
            al = ev.align_transition(B_hat, B, z_hat, z_true, res.permutation)
            report.aligned_matrix_error = {"max": al.max_error, "mean": al.mean_error,
                                           "r2": al.r2, "matrices": al.matrices.tolist()}
    return report


def cmd_eval(args):
    ds = dg.load(args.data)
    model = None
    if not args.debug_truth:
        if args.run is None:
            raise CliError("eval needs --run unless --debug-truth is given", EXIT_USAGE)
        model = tr.load_model(args.run, ds, args.which)
    report = evaluate_run(ds, model, args.threshold, args.debug_truth)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    report.save(args.out)
    extra = f"  shd {report.shd}" if report.shd is not None else ""
    print(f"mcc {report.mcc:.4f} ({report.method}){extra}")


def cmd_ablate(args):
    ds = dg.load(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "ablate.log", "a", encoding="utf-8") as log:
        _, table = tr.ablate(ds, _config(args.config), tuple(args.seeds), args.out, log)
    for row in table:
        print(f"{row['rung']:<10} {row['mcc']:.4f}")


def cmd_verify(args):
    state = None
    if args.flows is not None:
        _, arrays = tr.load_checkpoint(args.flows)
        state = {k.split("/", 1)[-1]: v for k, v in arrays.items() if "flow.raw" in k}
        if not state:
            raise CliError(f"{args.flows} holds no spline flows", EXIT_DATA)
    checks = oracles.run_suite(state)
    for c in checks:
        print(c.line())
    failed = [c.name for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if failed:
        raise CliError("failed: " + ", ".join(failed), EXIT_NUMERIC)


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "verify": cmd_verify}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except CliError as err:
        print(f"leap {args.command}: {err}", file=sys.stderr)
        return err.code
    except tr.ConfigError as err:
        print(f"leap {args.command}: config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (dg.DatagenError, tr.CheckpointError, ev.EvalError, OSError,
            json.JSONDecodeError, KeyError) as err:
        print(f"leap {args.command}: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (tr.NumericalError, dc.DiffError, pr.PriorError, sf.SplineError,
            FloatingPointError) as err:
        print(f"leap {args.command}: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
