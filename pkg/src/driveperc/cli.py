"""Command-line interface: ``driveperc <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 when some inputs
failed but the rest were processed.  Progress goes to stderr; results go to
files (gradcheck also prints its table on stdout).
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import datasets, imaging, lanes, metrics, models, synth
from .config import TASK_DEFAULTS, Config
from .errors import DrivePercError
from .nn import gradcheck
from .nn.optim import OptimizerState
from .nn.train import predict, train_epoch
from .tensor_core import Prng

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2

TRAIN_TASKS = tuple(TASK_DEFAULTS)
LOSSES = {"signs": "categorical_ce", "vehicles": "binary_ce", "clone": "mse", "segment": "binary_ce"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg):
    print(msg, file=sys.stderr, flush=True)


def default_seed():
    text = os.environ.get("DRIVEPERC_SEED", "0")
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"DRIVEPERC_SEED must be an integer, got {text!r}") from None


def load_config(args, task=None):
    cfg = Config()
    if getattr(args, "config", None):
        cfg.read(args.config)
    for section, key, value in getattr(args, "overrides", None) or []:
        cfg.set(section, key, value)
    if task is not None:
        cfg.resolve_task(task)
    return cfg.validate()


def _seed(args):
    return args.seed if args.seed is not None else default_seed()


# ---------------------------------------------------------------------------
# lane-detect


def _lane_inputs(path):
    if os.path.isdir(path):
        return [os.path.join(path, f) for f in imaging.list_images(path)]
    if os.path.isfile(path):
        return [path]
    raise UsageError(f"input {path!r} does not exist")


def _detect_one(job):
    path, out_dir, pipeline, stages = job
    stem = os.path.splitext(os.path.basename(path))[0]
    try:
        image = imaging.read_image(path)
        result = lanes.run_pipeline(image, pipeline, dump_dir=out_dir if stages else None, stem=stem)
        imaging.write_image(result.annotated, os.path.join(out_dir, f"{stem}.overlay.ppm"))
        with open(os.path.join(out_dir, f"{stem}.lanes.txt"), "w") as fh:
            fh.write(lanes.format_lanes(result.lanes))
        return path, None
    except (DrivePercError, OSError) as exc:
        return path, str(exc)


def cmd_lane_detect(args):
    cfg = load_config(args)
    if args.dump_config:
        sys.stdout.write(cfg.dump())
        return EXIT_OK
    inputs = _lane_inputs(args.input)
    os.makedirs(args.output, exist_ok=True)
    jobs = [(p, args.output, cfg.pipeline(), args.stages) for p in inputs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_detect_one, jobs))
    else:
        results = [_detect_one(j) for j in jobs]
    failed = 0
    for path, error in results:
        if error is not None:
            failed += 1
            _err(f"{path}: {error}")
    _err(f"processed {len(results) - failed}/{len(results)} frames")
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# task data


def build_model(task, cfg, seed):
    if task == "signs":
        return models.build_traffic_sign_cnn(seed, classes=cfg["data"]["classes"])
    if task == "vehicles":
        return models.build_binary_vehicle_cnn(seed)
    if task == "clone":
        return models.build_behavior_clone_cnn(seed)
    return models.build_mini_fcn_segmenter(seed)


def _clone_records(data_dir, cameras):
    log = os.path.join(data_dir, "driving_log.csv")
    records = datasets.parse_driving_log(log)
    return [(r, cam) for r in records for cam in (("center",) if cameras == "center" else datasets.CAMERAS)]


def load_task_data(task, data_dir, cfg, classes=None):
    """``(x, y)`` arrays for a task directory in the layout written by ``synth``."""
    if not os.path.isdir(data_dir):
        raise UsageError(f"data directory {data_dir!r} does not exist")
    if task in ("signs", "vehicles"):
        image_set = datasets.load_class_dirs(data_dir)
        if task == "signs":
            return datasets.load_classification_arrays(image_set, classes or cfg["data"]["classes"])
        x, _ = datasets.load_classification_arrays(image_set, 2)
        return x, np.array([[float(c)] for _, c in image_set.samples])
    if task == "segment":
        pairs = datasets.load_seg_pairs(os.path.join(data_dir, "images"), os.path.join(data_dir, "masks"))
        x = np.stack([imaging.normalize(imaging.read_image(i)) for i, _ in pairs.pairs])
        m = np.stack(
            [datasets.binarize_mask(imaging.read_image(k), cfg["data"]["mask_threshold"]) for _, k in pairs.pairs]
        )
        return x, m
    aug = cfg.augment()
    xs, ys = [], []
    for record, cam in _clone_records(data_dir, cfg["data"]["cameras"]):
        t, s = datasets.preprocess_driving(record, cam, images_dir=data_dir, config=aug)
        xs.append(t)
        ys.append([s])
    return np.stack(xs), np.array(ys)


def _flip_batch(x, y, prng, prob):
    """Mirror a random subset of driving tensors left-right and negate their steering."""
    flip = prng.random(len(x)) < prob
    x = x.copy()
    y = y.copy()
    x[flip] = x[flip][..., ::-1]
    y[flip] = -y[flip]
    return x, y


# ---------------------------------------------------------------------------
# train / eval


def cmd_train(args):
    cfg = load_config(args, args.task)
    if args.dump_config:
        sys.stdout.write(cfg.dump())
        return EXIT_OK
    if not args.data or not args.out:
        raise UsageError("train needs --data and --out")
    seed = _seed(args)
    t = cfg["train"]
    x, y = load_task_data(args.task, args.data, cfg)
    model = build_model(args.task, cfg, seed)
    state = OptimizerState(t["optimizer"], lr=t["lr"], beta=t["beta"], beta1=t["beta1"], beta2=t["beta2"], eps=t["eps"])
    prng = Prng(seed).split()
    augment = cfg["augment"]["enabled"] and args.task == "clone"
    for epoch in range(1, t["epochs"] + 1):
        xe, ye = _flip_batch(x, y, prng, cfg["augment"]["flip_prob"]) if augment else (x, y)
        value = train_epoch(model, xe, ye, LOSSES[args.task], state, prng, t["batch"])
        _err(f"epoch {epoch} loss {value:.6f}")
    models.save_checkpoint(model, args.out)
    return EXIT_OK


def task_report(task, model, x, y, threshold=0.5):
    """One report row of infer-mode metrics for a task."""
    pred = predict(model, x)
    row = {"model": model.name}
    if task == "signs":
        truth, guess = y.argmax(1), pred.argmax(1)
        # macro average over the classes that occur; spare outputs are ignored
        used = int(max(truth.max(), guess.max())) + 1
        row.update(metrics.macro_scores(metrics.ConfusionMatrix.from_labels(truth, guess, classes=used)))
    elif task in ("vehicles", "segment"):
        truth = (y.ravel() >= 0.5).astype(int)
        cm = metrics.ConfusionMatrix.from_labels(truth, (pred.ravel() >= threshold).astype(int), classes=2)
        row.update(metrics.classification_scores(cm, positive=1))
        if task == "vehicles" and 0 < truth.sum() < truth.size:
            row["auc"] = metrics.roc_auc(pred.ravel(), truth)[1]
        if task == "segment":
            row["mean_iou"] = metrics.mean_iou(pred[:, 0], y[:, 0], threshold)
    else:
        row["rmse"] = metrics.rmse(y, pred)
        row["mse"] = row["rmse"] ** 2
    if "flags" in row:
        flags = row.pop("flags")
        row["flags"] = flags
    return row


def cmd_eval(args):
    cfg = load_config(args, args.task)
    model = models.load_checkpoint(args.ckpt)
    classes = model.output_shape[0] if args.task == "signs" else None
    x, y = load_task_data(args.task, args.data, cfg, classes=classes)
    row = task_report(args.task, model, x, y)
    metrics.write_report([row], args.report, args.format or cfg["data"]["report_format"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck / preprocess / synth


def cmd_gradcheck(args):
    seed = _seed(args)
    seeds = range(seed, seed + args.seeds)
    worst = 0.0

    def report(name, err):
        status = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{name:28s} {err:.3e} {status}", flush=True)

    results = gradcheck.run_suite(seeds, report=report)
    worst = max(results.values())
    print(f"max relative error {worst:.3e} over {len(results)} cases x {len(seeds)} seeds")
    return EXIT_OK if worst < gradcheck.TOLERANCE else EXIT_USAGE


def cmd_preprocess(args):
    cfg = load_config(args)
    if args.task != "clone":
        raise UsageError("preprocess supports --task clone only")
    records = datasets.parse_driving_log(args.log)
    cams = ("center",) if cfg["data"]["cameras"] == "center" else datasets.CAMERAS
    aug = cfg.augment()
    os.makedirs(args.out, exist_ok=True)
    lines, failed = [], 0
    for i, record in enumerate(records):
        for cam in cams:
            try:
                tensor, steering = datasets.preprocess_driving(record, cam, images_dir=args.images, config=aug)
            except DrivePercError as exc:
                failed += 1
                _err(str(exc))
                continue
            name = f"{i:05d}_{cam}.npy"
            np.save(os.path.join(args.out, name), tensor)
            lines.append(f"{name} {steering!r}\n")
    with open(os.path.join(args.out, "manifest.txt"), "w") as fh:
        fh.writelines(lines)
    _err(f"wrote {len(lines)} tensors")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_synth(args):
    paths = synth.synth_generate(args.task, args.n, _seed(args), args.out, classes=args.classes)
    _err(f"wrote {len(paths)} files under {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


class _SetOverride(argparse.Action):
    def __call__(self, parser, namespace, value, option_string=None):
        section, _, rest = value.partition(".")
        key, eq, text = rest.partition("=")
        if not eq or not section or not key:
            parser.error(f"--set expects section.key=value, got {value!r}")
        items = list(getattr(namespace, self.dest) or [])
        items.append((section, key, text))
        setattr(namespace, self.dest, items)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", dest="overrides", action=_SetOverride, metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="random seed (default: $DRIVEPERC_SEED or 0)")
    common.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")

    parser = _Parser(prog="driveperc", description="Lane detection and driving-perception networks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("lane-detect", parents=[common], help="detect lanes in images")
    p.add_argument("--input", help="image file or directory")
    p.add_argument("--output", default=".", help="output directory")
    p.add_argument("--stages", action="store_true", help="also write per-stage images")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_lane_detect)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--task", choices=TRAIN_TASKS, required=True)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="checkpoint path to write")
    for key, kind in (("epochs", int), ("batch", int), ("lr", float)):
        p.add_argument(f"--{key}", type=kind, help=f"override [train] {key}")
    p.add_argument("--optimizer", choices=("sgd", "rmsprop", "adam"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--task", choices=TRAIN_TASKS, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=("text", "csv"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("preprocess", parents=[common], help="materialise preprocessed driving tensors")
    p.add_argument("--task", choices=("clone",), default="clone")
    p.add_argument("--log", required=True, help="driving_log.csv")
    p.add_argument("--images", help="directory image paths are relative to")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--task", choices=synth.TASKS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10, help="sign classes")
    p.set_defaults(func=cmd_synth)
    return parser


def _flag_overrides(args):
    """Training flags become config overrides so they outrank the config file."""
    extra = []
    for key in ("epochs", "batch", "lr", "optimizer"):
        value = getattr(args, key, None)
        if value is not None:
            extra.append(("train", key, str(value)))
    args.overrides = (args.overrides or []) + extra


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _flag_overrides(args)
    try:
        if args.command == "lane-detect" and not args.input and not args.dump_config:
            raise UsageError("lane-detect needs --input")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _err(f"driveperc: error: {exc}")
        return EXIT_USAGE
    except (DrivePercError, OSError) as exc:
        _err(f"driveperc: error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
