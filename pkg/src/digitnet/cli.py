"""Command line entry point: ``digitnet <subcommand> [flags]``.

Subcommands: train, eval, analyze, ae, vae, inspect.  Every subcommand takes
``--out`` (all files go there), ``--seed`` and ``--config`` (a flat
``key=value`` file whose values act as defaults; explicit flags win).

Exit codes: 0 success, 2 usage/user error, 3 data or format error,
4 internal invariant violation.  Failures print one line,
``error: <category>: <detail>``, on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import autoencoders as ae_mod
from . import filters as flt
from .errors import ConfigError, DigitNetError, DomainError, FormatError, UserError
from .layers import flatten_width, default_architecture
from .mnist import find_split, load_dataset
from .optim import SgdConfig
from .tensor import SeededRng, derive_seed
from .trainer import (
    TrainingConfig,
    evaluate,
    export_metrics,
    load_checkpoint,
    make_checkpoint,
    network_from_checkpoint,
    plot_metrics,
    save_checkpoint,
    summarize,
    train,
)

log = logging.getLogger("digitnet")

EXIT_OK, EXIT_USER, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(UserError):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _flag(value):
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p):
    p.add_argument("--out", default="out", help="output directory (created if absent)")
    p.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
    p.add_argument("--config", help="key=value file supplying defaults for these flags")
    p.add_argument("--deterministic", type=_flag, default=True,
                   help="bitwise-reproducible outputs; wall_seconds is written as 0 (default: true)")
    p.add_argument("--quiet", action="store_true", help="only log warnings")


def _data(p, train=True, test=True):
    p.add_argument("--data", help="directory holding the IDX files (raw or .gz)")
    if train:
        p.add_argument("--train-images", help="training image IDX file (overrides --data)")
        p.add_argument("--train-labels", help="training label IDX file (overrides --data)")
    if test:
        p.add_argument("--test-images", help="test image IDX file (overrides --data)")
        p.add_argument("--test-labels", help="test label IDX file (overrides --data)")


def _training(p, epochs=50):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.001, help="initial learning rate")
    p.add_argument("--decay", type=float, default=1e-6, help="learning-rate decay per update")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--nesterov", type=_flag, default=True)
    p.add_argument("--conv1-filters", type=int, default=32)
    p.add_argument("--conv2-filters", type=int, default=16)
    p.add_argument("--conv-dropout", type=float, default=0.25)
    p.add_argument("--dense-dropout", type=float, default=0.5)
    p.add_argument("--weight-init", choices=["he", "glorot"], default="he")
    p.add_argument("--limit-train", type=int, help="use only the first N training samples")
    p.add_argument("--limit-eval", type=int, help="use only the first N test samples")


def build_parser():
    parser = _Parser(prog="digitnet", description="MNIST CNN training, filter-similarity analysis and autoencoders.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", help="train the classifier")
    _common(p)
    _data(p)
    _training(p)
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--plot-format", choices=["pgm", "png"], default="pgm")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test set")
    _common(p)
    _data(p, train=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--limit-eval", type=int)

    p = sub.add_parser("analyze", help="similar-filter analysis")
    _common(p)
    _data(p)
    _training(p, epochs=1)
    p.add_argument("--checkpoint", help="analyze this single checkpoint")
    p.add_argument("--sweep", action="store_true", help="analyze one network per --filter-counts entry")
    p.add_argument("--filter-counts", type=_ints, default=[32, 64, 128, 256],
                   help="filters in each conv layer for --sweep")
    p.add_argument("--train-missing", action="store_true",
                   help="train sweep networks whose checkpoints are absent (uses --data)")
    p.add_argument("--thresholds", type=_floats, default=[0.5, 0.6])
    p.add_argument("--abs-similarity", action="store_true", help="compare |cosine| instead of the signed value")
    p.add_argument("--image-index", type=int, default=0, help="test image used for activation maps")

    for name, latent, lr in (("ae", 32, 1.0), ("vae", 20, 1e-3)):
        p = sub.add_parser(name, help=f"train the {'variational ' if name == 'vae' else ''}autoencoder")
        _common(p)
        _data(p)
        p.add_argument("--epochs", type=int, default=5)
        p.add_argument("--batch-size", type=int, default=128)
        p.add_argument("--latent", type=int, default=latent)
        p.add_argument("--lr", type=float, default=lr)
        p.add_argument("--decay", type=float, default=1e-6)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--nesterov", type=_flag, default=True)
        p.add_argument("--limit-train", type=int)
        p.add_argument("--grid", type=int, default=8, help="images per grid row")
        if name == "vae":
            p.add_argument("--hidden", type=int, default=400)
            p.add_argument("--mse-recon", action="store_true", help="squared-error reconstruction term")

    p = sub.add_parser("inspect", help="describe a checkpoint")
    _common(p)
    p.add_argument("checkpoint")
    return parser


def _read_config(path):
    if not os.path.exists(path):
        raise UserError(f"config file not found: {path}")
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip().replace("-", "_")] = v.strip()
    return values


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, raw in _read_config(args.config).items():
            action = actions.get(key)
            if action is None or key in ("config", "help"):
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            if action.const is True and action.nargs == 0:
                defaults[key] = _flag(raw)
            else:
                try:
                    defaults[key] = action.type(raw) if action.type else raw
                except (ValueError, argparse.ArgumentTypeError) as e:
                    raise ConfigError(f"config key {key}: {e}") from None
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _paths(args, split):
    img = getattr(args, f"{split}_images", None)
    lab = getattr(args, f"{split}_labels", None)
    if img and lab:
        return img, lab
    if not args.data:
        raise UserError(f"no {split} data: pass --data DIR or --{split}-images/--{split}-labels")
    found = find_split(args.data, split)
    return img or found[0], lab or found[1]


def _load(args, split):
    return load_dataset(*_paths(args, split))


def _sgd(args):
    return SgdConfig(lr0=args.lr, decay=args.decay, momentum=args.momentum, nesterov=args.nesterov)


def _training_config(args, conv1=None, conv2=None):
    arch = default_architecture(
        conv1_filters=conv1 or args.conv1_filters,
        conv2_filters=conv2 or args.conv2_filters,
        conv_dropout=args.conv_dropout,
        dense_dropout=args.dense_dropout,
    )
    return TrainingConfig(
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, sgd=_sgd(args),
        architecture=arch, weight_init=args.weight_init, limit_train=args.limit_train,
        limit_eval=args.limit_eval, deterministic=args.deterministic,
    )


def _out(args, name):
    return os.path.join(args.out, name)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args):
    config = _training_config(args)
    train_set, test_set = _load(args, "train"), _load(args, "test")
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None and resume.config:
        config = TrainingConfig.from_dict({**resume.config, "epochs": args.epochs,
                                           "deterministic": args.deterministic})
    net, metrics = train(config, train_set, test_set, resume=resume, checkpoint_path=_out(args, "checkpoint.bin"))
    export_metrics(metrics, _out(args, "metrics.csv"))
    plot_metrics(metrics, args.out, ext=args.plot_format)
    summary = summarize(metrics)
    with open(_out(args, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"final train_acc {summary['final_train_acc']:.6f}  val_acc {summary['final_val_acc']:.6f}  "
          f"(max {summary['max_train_acc']:.6f} / {summary['max_val_acc']:.6f})")


def cmd_eval(args):
    net = network_from_checkpoint(load_checkpoint(args.checkpoint))
    test_set = _load(args, "test").subset(args.limit_eval)
    loss, acc = evaluate(net, test_set)
    with open(_out(args, "eval.csv"), "w") as fh:
        fh.write("samples,loss,accuracy\n")
        fh.write(f"{len(test_set)},{loss:.9g},{acc:.9g}\n")
    print(f"samples {len(test_set)}  loss {loss:.6f}  accuracy {acc:.6f}")


def _write_grouped(reports, args):
    flt.write_report_csv(reports, _out(args, "similarity.csv"))
    groups = {}
    for r in reports:
        groups.setdefault((r.layer_index, r.threshold), []).append(r)
    for (layer, t), rs in sorted(groups.items()):
        flt.write_report_csv(rs, _out(args, f"similarity_layer{layer}_t{flt.format_threshold(t)}.csv"))


def cmd_analyze(args):
    if args.sweep == bool(args.checkpoint):
        raise UserError("pass exactly one of --checkpoint or --sweep")
    for t in args.thresholds:
        if not -1.0 < t <= 1.0:
            raise UserError(f"threshold {t} outside (-1, 1]")
    image = None
    if args.data or (args.test_images and args.test_labels):
        test_set = _load(args, "test")
        if not 0 <= args.image_index < len(test_set):
            raise UserError(f"--image-index {args.image_index} outside 0..{len(test_set) - 1}")
        image = test_set.images[args.image_index]

    if args.checkpoint:
        net = network_from_checkpoint(load_checkpoint(args.checkpoint))
        reports = flt.analyze_network(net, args.thresholds, use_abs=args.abs_similarity)
        _write_grouped(reports, args)
        convs = dict(flt.conv_layers(net))
        for ordinal, idx in convs.items():
            flt.export_filter_grid(net.params[idx]["W"], _out(args, f"filters_layer{ordinal}.pgm"))
        for r in reports:
            tag = f"layer{r.layer_index}_t{flt.format_threshold(r.threshold)}"
            flt.write_pairs_csv(r, _out(args, f"pairs_{tag}.csv"))
            if image is not None and r.pairs:
                flt.export_pair_visual(net, convs[r.layer_index], r.pairs[0], image, _out(args, f"pair_{tag}.pgm"))
            print(f"layer {r.layer_index} ({r.kernel_size}x{r.kernel_size}, {r.n} filters) threshold "
                  f"{r.threshold:g}: {len(r.pairs)}/{r.total_pairs} similar pairs, ratio {r.ratio:.4f}")
        return

    train_fn = None
    if args.train_missing:
        train_set, test_set = _load(args, "train"), _load(args, "test")

        def train_fn(count, path):
            config = _training_config(args, conv1=count, conv2=count)
            log.info("training sweep network with %d filters per conv layer", count)
            net, metrics = train(config, train_set, test_set)
            save_checkpoint(path, make_checkpoint(net, _empty_state(net), config.epochs, config, metrics))
            return net

    reports = flt.sweep(args.filter_counts, args.thresholds, args.out, train_fn=train_fn,
                        use_abs=args.abs_similarity)
    _write_grouped(reports, args)
    for r in reports:
        print(f"layer {r.layer_index} filters {r.n:>4} threshold {r.threshold:g}: ratio {r.ratio:.4f}")


def _empty_state(net):
    from .optim import OptimizerState

    return OptimizerState.for_params([p for p, _ in net.parameters()])


def cmd_ae(args):
    data = _load(args, "train")
    config = ae_mod.AeConfig(epochs=args.epochs, batch_size=args.batch_size, latent=args.latent, seed=args.seed,
                             sgd=_sgd(args), limit_train=args.limit_train)
    model, curve = ae_mod.ae_train(config, data)
    ae_mod.write_curve(curve, ["epoch", "mse"], _out(args, "ae_loss.csv"))
    picks = data.images[: args.grid]
    ae_mod.export_reconstructions(model, picks, _out(args, "ae_grid.pgm"))
    print(f"ae final mse {curve[-1][1]:.6f}")


def cmd_vae(args):
    data = _load(args, "train")
    config = ae_mod.VaeConfig(epochs=args.epochs, batch_size=args.batch_size, latent=args.latent,
                              hidden=args.hidden, seed=args.seed, recon="mse" if args.mse_recon else "bce",
                              sgd=_sgd(args), limit_train=args.limit_train)
    model, curve = ae_mod.vae_train(config, data)
    ae_mod.write_curve(curve, ["epoch", "recon", "kl", "total"], _out(args, "vae_loss.csv"))
    rng = SeededRng(derive_seed(args.seed, "vae-sample"))
    ae_mod.export_samples(model, 4 * args.grid, rng, _out(args, "vae_grid.pgm"), cols=args.grid)
    ae_mod.export_reconstructions(model, data.images[: args.grid], _out(args, "vae_recon.pgm"))
    print(f"vae final total {curve[-1][3]:.3f} (recon {curve[-1][1]:.3f}, kl {curve[-1][2]:.3f})")


def cmd_inspect(args):
    ckpt = load_checkpoint(args.checkpoint)
    net = network_from_checkpoint(ckpt)
    print(f"checkpoint {args.checkpoint} (format v{ckpt.format_version})")
    print(f"input {'x'.join(map(str, net.input_shape))}, stored epoch {ckpt.epoch}, "
          f"optimizer iteration {ckpt.iteration}")
    print(net.summary())
    try:
        print(f"flatten width: {flatten_width(net)}")
    except DomainError:
        pass
    if ckpt.metrics:
        last = ckpt.metrics[-1]
        print(f"last epoch: train_acc {last['train_acc']:.6f} val_acc {last['val_acc']:.6f}")


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze,
    "ae": cmd_ae, "vae": cmd_vae, "inspect": cmd_inspect,
}


def exit_code(exc):
    if isinstance(exc, FormatError):
        return EXIT_DATA
    if isinstance(exc, (UserError, ConfigError, DomainError)):
        return EXIT_USER
    return EXIT_INTERNAL


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except DigitNetError as e:
        print(f"error: {e.category}: {e}", file=sys.stderr)
        return exit_code(e)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](args)
    except DigitNetError as e:
        print(f"error: {e.category}: {' '.join(str(e).split())}", file=sys.stderr)
        return exit_code(e)
    except Exception as e:  # noqa: BLE001 - last-resort guard so the CLI never dumps a traceback
        log.debug("internal error", exc_info=True)
        print(f"error: internal: {type(e).__name__}: {' '.join(str(e).split())}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def main():
    sys.exit(run())
