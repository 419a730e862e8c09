"""``saltseg`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error,
4 checkpoint incompatibility.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .checkpoint import load_checkpoint
from .config import TrainConfig
from .data_pipeline import load_dataset, save_dataset, synth_generate
from .exceptions import SaltSegError
from .model_arch import spec_hash, table1_specs
from .training import cross_validate, evaluate, predict, train

log = logging.getLogger("saltseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


def _load_checked(path):
    ckpt = load_checkpoint(path)
    return load_checkpoint(path, spec_hash(table1_specs(ckpt.config.faithful_table1)))


def cmd_train(args):
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, lr_scale=args.lr, seed=args.seed,
        faithful_table1=args.faithful_table1, log_every=args.log_every,
        checkpoint_every=args.checkpoint_every, train_fraction=args.train_fraction,
        rho=args.rho, eps=args.eps, reduction=args.reduction,
    )
    resume = _load_checked(args.resume) if args.resume else None
    data = load_dataset(args.data)
    ckpt, rows = train(data, cfg, resume=resume, checkpoint_path=args.out, log_path=args.log)
    if rows:
        print(f"epoch {rows[-1].epoch}: train_loss {rows[-1].train_loss:.6f} test_loss {rows[-1].test_loss:.6f}")
    print(f"wrote {args.out} ({ckpt.epochs_completed} epochs)")


def cmd_predict(args):
    mask, _ = predict(_load_checked(args.ckpt), args.image, args.out, args.prob)
    print(f"wrote {args.out}: {int(mask.sum())} of {mask.size} pixels labelled salt")


def cmd_eval(args):
    m = evaluate(_load_checked(args.ckpt), load_dataset(args.data))
    print(f"mean_loss {m.mean_loss:.6f}")
    print(f"pixel_accuracy {m.pixel_accuracy:.6f}")
    print(f"iou {m.iou:.6f}")


def cmd_cv(args):
    warm = _load_checked(args.warm) if args.warm else None
    if warm is not None:
        cfg = warm.config
    else:
        cfg = TrainConfig(batch_size=args.batch, lr_scale=args.lr, seed=args.seed,
                          faithful_table1=args.faithful_table1)
    result = cross_validate(load_dataset(args.data), args.k, warm, args.epochs_per_fold, cfg)
    for i, loss in enumerate(result.fold_losses, start=1):
        print(f"fold {i}: {loss:.6f}")
    print(f"mean {result.mean:.6f}")


def cmd_synth(args):
    save_dataset(synth_generate(args.n, args.seed), args.out, ext=args.ext)
    print(f"wrote {args.n} samples to {args.out}")


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    results = run_suite(n_shapes=args.shapes, seed=args.seed)
    failed = 0
    for r in results:
        print(r.line())
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def build_parser():
    p = argparse.ArgumentParser(prog="saltseg", description="Seismic salt segmentation auto-encoder")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a dataset directory")
    t.add_argument("--data", required=True, help="directory with images/ and masks/")
    t.add_argument("--epochs", type=int, required=True)
    t.add_argument("--batch", type=int, default=100)
    t.add_argument("--lr", type=float, default=0.01, help="scale applied to each ADADELTA step")
    t.add_argument("--rho", type=float, default=0.95)
    t.add_argument("--eps", type=float, default=1e-6)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--train-fraction", type=float, default=0.8)
    t.add_argument("--reduction", choices=("mean", "sample"), default="mean")
    t.add_argument("--faithful-table1", action="store_true",
                   help="keep the ReLU before the output sigmoid (predicts all salt)")
    t.add_argument("--log-every", type=int, default=1)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="CSV loss log path")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="segment one image")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out", required=True, help="mask output (.pgm or .png)")
    pr.add_argument("--prob", help="probability map output (.npy, .pgm or .png)")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="loss, pixel accuracy and IoU on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cv", help="k-fold cross-validation")
    c.add_argument("--data", required=True)
    c.add_argument("--k", type=int, default=10)
    c.add_argument("--warm", help="checkpoint every fold starts from")
    c.add_argument("--epochs-per-fold", type=int, required=True)
    c.add_argument("--batch", type=int, default=100)
    c.add_argument("--lr", type=float, default=0.01)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--faithful-table1", action="store_true")
    c.set_defaults(func=cmd_cv)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--ext", choices=(".pgm", ".png"), default=".pgm")
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("gradcheck", help="finite-difference check of every backward kernel")
    g.add_argument("--shapes", type=int, default=20, help="random shapes per kernel")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or EXIT_OK
    except SaltSegError as exc:
        print(f"saltseg {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"saltseg {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
