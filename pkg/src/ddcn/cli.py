"""Command-line entry point: degrade, train, infer, eval, gradcheck, selftest.

Exit codes: 0 success, 1 usage error, 2 data error, 3 self-test failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from ddcn.core import set_backward_fault
from ddcn.core.parallel import threads
from ddcn.errors import DataError, DDCNError
from ddcn.model import ModelConfig
from ddcn.model.checkpoint import load_checkpoint, save_checkpoint
from ddcn.video import DegradationConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SELFTEST = 0, 1, 2, 3


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str) -> int | None:
    return None if str(text).strip().lower() in ("", "auto", "none") else int(text)


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str


KEYS = [
    Key("frames", int, 5, "input frames 2T+1 (ablation axis: 3, 5 or 7)"),
    Key("base_channels", int, 64, "feature width"),
    Key("inner_growth", int, 16, "channels added per inner dense unit"),
    Key("outer_growth", int, 64, "channels added per outer dense block"),
    Key("inner_units", int, 4, "dense units per inner block"),
    Key("outer_blocks_3d", int, 3, "outer blocks in the 3-D fusion stage"),
    Key("outer_blocks_2d", int, 3, "outer blocks in the 2-D reconstruction stage"),
    Key("attention_in_extraction", _bool, True, "temporal attention in the group branches"),
    Key("attention_in_fusion", _bool, True, "temporal attention in the 3-D dense blocks"),
    Key("beta1", float, 0.9, "Adam beta1"),
    Key("beta2", float, 0.999, "Adam beta2"),
    Key("adam_epsilon", float, 1e-8, "Adam epsilon"),
    Key("lr_initial", float, 1e-4, "learning rate before the drop"),
    Key("lr_drop", float, 1e-5, "learning rate after the drop"),
    Key("drop_after", int, 40, "epochs at the initial learning rate"),
    Key("post_drop_epochs", int, 15, "epochs at the dropped learning rate"),
    Key("epochs", _opt_int, None, "total epochs (default drop_after + post_drop_epochs)"),
    Key("batch_size", int, 8, "samples per Adam step"),
    Key("lambda_up", float, 0.01, "weight of the bicubic-upsampling L1 term"),
    Key("loss", str, "composite", "composite or ir-only"),
    Key("augment", _bool, True, "random horizontal/vertical flips"),
    Key("seed", int, 0, "seed for initialization, crops, shuffling and flips"),
    Key("sigma", float, 1.6, "Gaussian blur standard deviation"),
    Key("scale", int, 4, "magnification factor (only 4 is supported)"),
    Key("crop", int, 256, "HR training crop size"),
    Key("crop_border", int, 0, "pixels trimmed from each edge before metrics"),
    Key("threads", int, 1, "BLAS threads; 1 is the deterministic mode"),
]
KEY_BY_NAME = {k.name: k for k in KEYS}


class UsageError(DDCNError):
    pass


class RunConfig(dict):
    """Flat key=value settings: defaults, then the config file, then flags."""

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k.name: k.default for k in KEYS})

    def set(self, name: str, raw) -> None:
        if name not in KEY_BY_NAME:
            raise UsageError(f"unknown config key {name!r}")
        key = KEY_BY_NAME[name]
        try:
            value = key.parse(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise UsageError(f"bad value for {name}: {exc}") from None
        self[name] = value

    def load_file(self, path) -> None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            self.set(key, value)

    def validate(self) -> None:
        if self["frames"] < 3 or self["frames"] % 2 == 0:
            raise UsageError(f"frames must be odd and >= 3, got {self['frames']}")
        if self["loss"] not in ("composite", "ir-only"):
            raise UsageError(f"loss must be composite or ir-only, got {self['loss']!r}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(T=(self["frames"] - 1) // 2, base_channels=self["base_channels"],
                           inner_growth=self["inner_growth"], outer_growth=self["outer_growth"],
                           inner_units=self["inner_units"], outer_blocks_3d=self["outer_blocks_3d"],
                           outer_blocks_2d=self["outer_blocks_2d"], scale=self["scale"],
                           attention_in_extraction=self["attention_in_extraction"],
                           attention_in_fusion=self["attention_in_fusion"])

    def train_config(self):
        from ddcn.trainer import TrainConfig
        return TrainConfig(beta1=self["beta1"], beta2=self["beta2"], epsilon=self["adam_epsilon"],
                           lr_initial=self["lr_initial"], lr_drop=self["lr_drop"],
                           drop_after=self["drop_after"], post_drop_epochs=self["post_drop_epochs"],
                           batch_size=self["batch_size"], lambda_up=self["lambda_up"],
                           use_composite_loss=self["loss"] == "composite",
                           augment=self["augment"], seed=self["seed"], epochs=self["epochs"])

    def degradation_config(self) -> DegradationConfig:
        return DegradationConfig(sigma=self["sigma"], scale=self["scale"], crop=self["crop"])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser, names: list[str]) -> None:
    g = p.add_argument_group("settings (also accepted as key=value lines in --config)")
    for name in names:
        key = KEY_BY_NAME[name]
        default = "auto" if key.default is None else key.default
        extra = {}
        if name == "frames":
            extra["choices"] = [3, 5, 7]
            extra["type"] = int
        elif name == "loss":
            extra["choices"] = ["composite", "ir-only"]
        g.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}", default=None,
                       metavar=None if extra.get("choices") else name.upper(),
                       help=f"{key.help} (default: {default})", **extra)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value settings file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any setting")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddcn", description="Dual dense connection video super-resolution.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    model_keys = ["frames", "base_channels", "inner_growth", "outer_growth", "inner_units",
                  "outer_blocks_3d", "outer_blocks_2d", "attention_in_extraction",
                  "attention_in_fusion"]
    train_keys = ["beta1", "beta2", "adam_epsilon", "lr_initial", "lr_drop", "drop_after",
                  "post_drop_epochs", "epochs", "batch_size", "lambda_up", "loss", "augment",
                  "seed"]
    deg_keys = ["sigma", "scale", "crop"]

    p = sub.add_parser("degrade", help="blur and decimate every frame of an HR dataset")
    p.add_argument("--in", dest="inp", required=True, help="manifest of HR sequence directories")
    p.add_argument("--out", required=True, help="output directory for the LR dataset")
    _add_common(p)
    _add_config_flags(p, ["sigma", "scale", "threads"])

    p = sub.add_parser("train", help="train on an HR dataset and write a checkpoint")
    p.add_argument("--data", required=True, help="manifest of HR sequence directories")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="loss CSV (default: <out>.loss.csv)")
    p.add_argument("--no-plot", action="store_true", help="skip the loss figure")
    p.add_argument("--no-attn-extract", action="store_true",
                   help="disable attention in the group feature extraction")
    p.add_argument("--no-attn-fusion", action="store_true",
                   help="disable attention in the 3-D fusion blocks")
    _add_common(p)
    _add_config_flags(p, model_keys + train_keys + deg_keys + ["threads"])

    p = sub.add_parser("infer", help="super-resolve the centre frame of one LR sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="inp", required=True, help="directory of 2T+1 LR frames")
    p.add_argument("--out", required=True, help="output PPM path")
    _add_common(p)
    _add_config_flags(p, ["threads"])

    p = sub.add_parser("eval", help="Y-channel PSNR/SSIM of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--plot", help="figure path (default: next to --out as .png)")
    _add_common(p)
    _add_config_flags(p, ["crop_border", "threads"])

    for name, text in (("gradcheck", "operator and end-to-end gradient checks"),
                       ("selftest", "every invariant suite")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--inject-fault", metavar="OP",
                       help="scale OP's backward pass by 1.01 (to see a failure)")
        _add_common(p)
        _add_config_flags(p, ["seed", "threads"])
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.defaults()
    if args.config:
        cfg.load_file(args.config)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip())
    for k in KEYS:
        raw = getattr(args, f"cfg_{k.name}", None)
        if raw is not None:
            cfg.set(k.name, str(raw))
    if getattr(args, "no_attn_extract", False):
        cfg.set("attention_in_extraction", False)
    if getattr(args, "no_attn_fusion", False):
        cfg.set("attention_in_fusion", False)
    cfg.validate()
    return cfg


# --- commands ----------------------------------------------------------------

def cmd_degrade(args, cfg: RunConfig) -> int:
    from ddcn.video import degrade_frame, frame_paths, load_frame, read_manifest, save_frame, \
        write_manifest

    deg = cfg.degradation_config()
    out_root = Path(args.out)
    failures = 0
    written = []
    for seq in read_manifest(args.inp):
        paths = frame_paths(seq)
        if not paths:
            print(f"error: no frames in {seq}", file=sys.stderr)
            failures += 1
            continue
        dest = out_root / seq.name
        dest.mkdir(parents=True, exist_ok=True)
        for p in paths:
            try:
                save_frame(degrade_frame(load_frame(p), deg), dest / p.name)
            except (DDCNError, OSError) as exc:
                print(f"error: {p}: {exc}", file=sys.stderr)
                failures += 1
        written.append(dest)
    if written:
        write_manifest(written, out_root / "manifest.txt")
    print(f"degraded {len(written)} sequence(s) into {out_root}")
    return EXIT_DATA if failures else EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    from ddcn.model import count_parameters
    from ddcn.plotting import plot_loss_history
    from ddcn.trainer import train, write_history_csv
    from ddcn.video import build_dataset

    mc, tc = cfg.model_config(), cfg.train_config()
    dataset = build_dataset(args.data, mc.T, cfg.degradation_config(), tc.seed)
    print(f"{len(dataset)} training windows, {tc.total_epochs} epochs, "
          f"{count_parameters(mc)} parameters")

    def progress(row):
        print(f"epoch {row.epoch:4d}  l_ir {row.l_ir:.6f}  l_up {row.l_up:.6f}  "
              f"total {row.total:.6f}  lr {row.lr:g}", flush=True)

    result = train(dataset, mc, tc, progress)
    save_checkpoint(args.out, result.params, mc, result.adam, result.epochs)
    history_path = Path(args.history) if args.history else Path(f"{args.out}.loss.csv")
    write_history_csv(result.history, history_path)
    if not args.no_plot and result.history:
        plot_loss_history(result.history, history_path.with_suffix(".png"))
    print(f"wrote {args.out} and {history_path}")
    return EXIT_OK


def cmd_infer(args, cfg: RunConfig) -> int:
    from ddcn.trainer import predict
    from ddcn.video import load_frames, save_frame

    ckpt = load_checkpoint(args.checkpoint)
    frames = load_frames(args.inp)
    expected = ckpt.config.frames
    if len(frames) != expected:
        raise DataError(f"{args.inp} holds {len(frames)} frames; this checkpoint expects "
                        f"2T+1 = {expected}")
    out = predict(frames, ckpt.params, ckpt.config)
    save_frame(out, args.out)
    print(f"wrote {args.out} ({out.shape[2]}x{out.shape[1]})")
    return EXIT_OK


def _sequence_dirs(root: Path) -> dict[str, Path]:
    from ddcn.video import frame_paths
    if frame_paths(root):
        return {root.name: root}
    return {d.name: d for d in sorted(root.iterdir()) if d.is_dir() and frame_paths(d)}


def cmd_eval(args, cfg: RunConfig) -> int:
    from ddcn.metrics import MetricReport, write_report_csv
    from ddcn.plotting import plot_metric_report
    from ddcn.video import frame_paths, load_frame

    pred_root, truth_root = Path(args.pred), Path(args.truth)
    for root in (pred_root, truth_root):
        if not root.is_dir():
            raise DataError(f"{root} is not a directory")
    preds, truths = _sequence_dirs(pred_root), _sequence_dirs(truth_root)
    if not truths:
        raise DataError(f"no frames under {truth_root}")
    if len(preds) == 1 and len(truths) == 1:
        preds = {next(iter(truths)): next(iter(preds.values()))}
    if set(preds) != set(truths):
        raise DataError(f"prediction sequences {sorted(preds)} do not match truth {sorted(truths)}")
    reports = []
    for name, tdir in truths.items():
        tp, pp = frame_paths(tdir), frame_paths(preds[name])
        if len(tp) != len(pp):
            raise DataError(f"{name}: {len(pp)} predicted frames vs {len(tp)} truth frames")
        rep = MetricReport(name)
        for a, b in zip(pp, tp):
            rep.add(b.name, load_frame(a), load_frame(b), cfg["crop_border"])
        reports.append(rep)
    if args.out:
        write_report_csv(reports, args.out)
        plot_path = args.plot or str(Path(args.out).with_suffix(".png"))
    else:
        write_report_csv(reports, sys.stdout)
        plot_path = args.plot
    if plot_path:
        plot_metric_report(reports, plot_path)
    return EXIT_OK


def _run_checks(args, cfg: RunConfig, suite) -> int:
    if args.inject_fault:
        set_backward_fault(args.inject_fault, 1.01)
    try:
        results = suite(cfg["seed"])
    finally:
        if args.inject_fault:
            set_backward_fault(args.inject_fault, None)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_SELFTEST if failed else EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from ddcn.selftest import run_gradcheck
    return _run_checks(args, cfg, run_gradcheck)


def cmd_selftest(args, cfg: RunConfig) -> int:
    from ddcn.selftest import run_selftest
    return _run_checks(args, cfg, run_selftest)


COMMANDS = {"degrade": cmd_degrade, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
    except (UsageError, ValueError) as exc:
        print(f"ddcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threads(cfg["threads"]):
            return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"ddcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DDCNError, OSError) as exc:
        print(f"ddcn: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
