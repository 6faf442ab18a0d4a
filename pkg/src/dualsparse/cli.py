"""Command-line entry point: ``dualsparse <command> [options]``.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 pipeline error.
Option precedence: command-line flags > ``--config`` file (key=value lines)
> built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dualsparse import __version__
from dualsparse.errors import DualSparseError, FormatError
from dualsparse.grouping import GroupingConfig
from dualsparse.image import Image
from dualsparse.io import load_codes, load_dictionary, read_image, save_codes, save_dictionary, write_image
from dualsparse.metrics import MetricConfig, NoiseModel, psnr, ssim
from dualsparse.pipeline import DenoiseConfig, denoise
from dualsparse.sparse import SparseConfig, encode_all, ksvd_learn
from dualsparse.patches import extract_patches
from dualsparse.subdict import compute_split, split

logger = logging.getLogger("dualsparse")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_PIPELINE = 0, 2, 3, 4


class UsageError(Exception):
    pass


class IOFailure(Exception):
    pass


@dataclass
class RunManifest:
    """Everything needed to repeat a run."""

    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = __version__
    python: str = field(default_factory=platform.python_version)
    timings: dict[str, float] = field(default_factory=dict)
    status: str = "pending"
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


# Tunables shared by denoise/despeckle; (type, default).
DENOISE_KEYS = {
    "sigma": (float, 35.0),
    "epsilon": (float, None),
    "patch": (int, 8),
    "atoms": (int, 256),
    "gamma": (int, 90),
    "window": (int, 39),
    "ref_stride": (int, 4),
    "stride": (int, 1),
    "looks": (float, 1.0),
    "mode": (str, "additive"),
    "scope": (str, "global"),
    "iters": (int, 12),
    "max_support": (int, None),
    "weighting": (str, "sparsity"),
    "train_patches": (int, 20000),
    "split": (lambda s: str(s).lower() in ("1", "true", "yes", "on"), True),
    "seed": (int, 0),
}


def read_config_file(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IOFailure(f"cannot read config file {path}: {exc}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(keys: dict, args: argparse.Namespace) -> dict:
    merged = {k: default for k, (_, default) in keys.items()}
    if getattr(args, "config", None):
        for k, v in read_config_file(args.config).items():
            if k not in keys:
                raise UsageError(f"unknown config key {k!r}")
            conv = keys[k][0]
            try:
                merged[k] = None if v.lower() == "none" else conv(v)
            except ValueError:
                raise UsageError(f"bad value for {k}: {v!r}") from None
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    return merged


def build_denoise_config(opts: dict) -> DenoiseConfig:
    try:
        return DenoiseConfig(
            sigma=opts["sigma"],
            patch_edge=opts["patch"],
            dict_atoms=opts["atoms"],
            epsilon=opts["epsilon"],
            grouping=GroupingConfig(
                gamma=opts["gamma"],
                window=opts["window"],
                metric="ppb" if opts["mode"] == "speckle" else "euclidean",
                looks=opts["looks"],
                ref_stride=opts["ref_stride"],
            ),
            mode=opts["mode"],
            dict_scope=opts["scope"],
            learn_iters=opts["iters"],
            seed=opts["seed"],
            max_support=opts["max_support"],
            patch_stride=opts["stride"],
            weighting=opts["weighting"],
            split=opts["split"],
            train_patches=opts["train_patches"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read(path) -> Image:
    try:
        return read_image(path)
    except (OSError, FormatError) as exc:
        raise IOFailure(f"cannot read image {path}: {exc}") from None


def _write(path, img) -> None:
    try:
        write_image(path, img)
    except (OSError, FormatError) as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from None


def _fmt(v: float) -> str:
    return "%.10g" % v


def cmd_denoise(args) -> int:
    if args.command == "despeckle":
        args.mode = "speckle"
    opts = resolve(DENOISE_KEYS, args)
    out = Path(args.out)
    manifest_path = Path(args.manifest) if args.manifest else out.with_name(out.name + ".manifest.json")
    report_path = Path(args.report) if args.report else out.with_name(out.name + ".report.txt")
    manifest = RunManifest(command=args.command, config=opts, inputs={"image": str(args.input)})
    t0 = time.perf_counter()
    try:
        cfg = build_denoise_config(opts)
        manifest.config = {"cli": opts, "resolved": cfg.to_dict()}
        img = _read(args.input)
        result, report = denoise(img, cfg)
        _write(out, Image(result, img.dynamic_range))
        try:
            report_path.write_text(report.to_text())
            if args.table:
                Path(args.table).write_text(report.to_table())
        except OSError as exc:
            raise IOFailure(f"cannot write report: {exc}") from None
        manifest.outputs = {"image": str(out), "report": str(report_path)}
        manifest.timings = dict(report.timings)
        manifest.status = "ok"
        print(report.to_text(), end="")
        return EXIT_OK
    except BaseException as exc:
        manifest.status = "failed"
        manifest.error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest.timings["wall_s"] = time.perf_counter() - t0
        try:
            manifest.write(manifest_path)
        except OSError:
            logger.warning("could not write manifest %s", manifest_path)


def cmd_simulate(args) -> int:
    try:
        model = NoiseModel(kind=args.noise, sigma=args.sigma, looks=args.looks, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    img = _read(args.input)
    noisy = model.apply(img)
    _write(args.out, Image(noisy, img.dynamic_range))
    return EXIT_OK


def cmd_metrics(args) -> int:
    ref, test = _read(args.ref), _read(args.test)
    try:
        cfg = MetricConfig(dynamic_range=args.range or ref.dynamic_range, c1=args.c1, c2=args.c2, windowed=args.windowed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"psnr_db={_fmt(psnr(ref, test, peak=args.peak))}")
    print(f"ssim={_fmt(ssim(ref, test, cfg))}")
    return EXIT_OK


def cmd_learn_dict(args) -> int:
    img = _read(args.input)
    eps = args.epsilon if args.epsilon is not None else args.sigma
    try:
        cap = args.max_support if args.max_support is not None else max(1, args.patch**2 // 2)
        cfg = SparseConfig(epsilon=eps, max_support=cap, learn_iters=args.iters, seed=args.seed)
        patches = extract_patches(img, args.patch, args.stride)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    X = patches.data - patches.data.mean(axis=0) if not args.keep_mean else patches.data
    train = X
    if args.train_patches and X.shape[1] > args.train_patches:
        rng = np.random.default_rng(args.seed)
        train = X[:, np.sort(rng.choice(X.shape[1], args.train_patches, replace=False))]
    D, _ = ksvd_learn(train, args.atoms, cfg)
    try:
        save_dictionary(args.out, D)
        if args.codes_out:
            save_codes(args.codes_out, encode_all(D, X, cfg))
    except OSError as exc:
        raise IOFailure(f"cannot write dictionary: {exc}") from None
    return EXIT_OK


def split_report(s, n_patches: int) -> str:
    lines = [
        f"atoms={s.n_atoms}",
        f"patches={n_patches}",
        f"modal_frequency={s.modal_frequency}",
        f"cut={s.cut}",
        "rank\tatom\tfrequency\tpart",
    ]
    for rank, k in enumerate(s.order):
        part = "principal" if rank < s.cut else "noise"
        lines.append(f"{rank}\t{k}\t{s.frequencies[k]}\t{part}")
    return "\n".join(lines) + "\n"


def cmd_split_dict(args) -> int:
    try:
        D = load_dictionary(args.dict)
        codes = load_codes(args.codes)
    except (OSError, FormatError) as exc:
        raise IOFailure(str(exc)) from None
    s = compute_split(codes)
    principal, noise = split(D, codes, s)
    base = Path(args.dict)
    report = Path(args.report) if args.report else base.with_name(base.name + ".split.txt")
    p_out = Path(args.principal_out) if args.principal_out else base.with_name(base.stem + ".principal.dsdd")
    n_out = Path(args.noise_out) if args.noise_out else base.with_name(base.stem + ".noise.dsdd")
    try:
        report.write_text(split_report(s, codes.count))
        save_dictionary(p_out, principal.atoms)
        save_dictionary(n_out, noise.atoms)
    except OSError as exc:
        raise IOFailure(f"cannot write split outputs: {exc}") from None
    print(f"modal_frequency={s.modal_frequency}\ncut={s.cut}")
    return EXIT_OK


def _add_denoise_args(p: argparse.ArgumentParser, speckle: bool) -> None:
    p.add_argument("--in", dest="input", required=True, help="noisy input image")
    p.add_argument("--out", required=True, help="denoised output image")
    p.add_argument("--sigma", type=float, help="AWGN standard deviation (additive mode)")
    p.add_argument("--epsilon", type=float, help="per-pixel RMS coding tolerance (default: noise level)")
    p.add_argument("--patch", type=int, help="patch edge in pixels")
    p.add_argument("--atoms", type=int, help="dictionary atoms K")
    p.add_argument("--gamma", type=int, help="group size")
    p.add_argument("--window", type=int, help="search window edge")
    p.add_argument("--ref-stride", dest="ref_stride", type=int)
    p.add_argument("--stride", type=int, help="patch extraction stride")
    p.add_argument("--looks", type=float, help="equivalent number of looks (speckle)")
    if not speckle:
        p.add_argument("--mode", choices=["additive", "speckle"])
    p.add_argument("--scope", choices=["global", "per_group"])
    p.add_argument("--iters", type=int, help="K-SVD sweeps")
    p.add_argument("--max-support", dest="max_support", type=int)
    p.add_argument("--weighting", choices=["sparsity", "uniform"])
    p.add_argument("--train-patches", dest="train_patches", type=int)
    p.add_argument("--no-split", dest="split", action="store_const", const=False, help="single decomposition")
    p.add_argument("--seed", type=int)
    p.add_argument("--report", help="key=value report path")
    p.add_argument("--table", help="per-group tab-separated table path")
    p.add_argument("--manifest", help="manifest JSON path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualsparse", description="Dual sparse decomposition denoising")
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--threads", type=int, default=None, help="numeric threads (default: all cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, speckle in (("denoise", False), ("despeckle", True)):
        p = sub.add_parser(name, help="despeckle a one-look intensity image" if speckle else "denoise an image")
        _add_denoise_args(p, speckle)
        p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("simulate", help="add synthetic noise to a clean image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise", choices=["awgn", "speckle"], default="awgn")
    p.add_argument("--sigma", type=float, default=35.0)
    p.add_argument("--looks", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", help="PSNR and SSIM of an image pair")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--peak", type=float, help="override the PSNR peak (default: max of reference)")
    p.add_argument("--range", type=float, help="dynamic range for SSIM constants")
    p.add_argument("--c1", type=float)
    p.add_argument("--c2", type=float)
    p.add_argument("--windowed", action="store_true", help="11x11 Gaussian-window mean SSIM")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("learn-dict", help="learn a dictionary from an image's patches")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="dictionary file")
    p.add_argument("--codes-out", help="also write the codes of all patches")
    p.add_argument("--sigma", type=float, default=35.0)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--atoms", type=int, default=256)
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--iters", type=int, default=12)
    p.add_argument("--max-support", dest="max_support", type=int, default=None, help="default: half the patch dimension")
    p.add_argument("--train-patches", dest="train_patches", type=int, default=20000)
    p.add_argument("--keep-mean", action="store_true", help="do not subtract patch means")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_learn_dict)

    p = sub.add_parser("split-dict", help="frequency split of a dictionary and its codes")
    p.add_argument("--dict", required=True)
    p.add_argument("--codes", required=True)
    p.add_argument("--report")
    p.add_argument("--principal-out")
    p.add_argument("--noise-out")
    p.set_defaults(func=cmd_split_dict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = args.threads or os.cpu_count() or 1
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DualSparseError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
