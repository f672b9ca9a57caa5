"""Command-line front end.

Every subcommand is composable through files (raw matrices, containers,
JSON reports); there is no hidden state.  Each run emits a JSON report that
echoes the resolved configuration, the seed, and SHA-256 digests of its
inputs and outputs, written to ``--report`` when given and to standard
output otherwise.

Exit codes: 0 on success, 2 for command-line usage errors (argparse), 1 for
data errors (unreadable or damaged files, shape mismatches) with a message
on standard error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .container import read_container, write_container
from .costmodel import dse_csv, dse_sweep
from .engine import LayerConfig, run_layer_benchmark
from .errors import DataError
from .gemm import gemm_tiled, gemv_bitsliced
from .matio import read_matrix, write_matrix
from .planes import gen_gaussian_weights, sparsity_stats, to_sign_magnitude
from .predict import PredictorConfig, exact_scores, exact_topk, predict, recall
from .quantize import QuantParams, quantize_symmetric, quantize_weights


# -- argument types (argparse maps failures here to exit code 2) ------------


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return value


def positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def nonneg_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return value


def group_size(text: str) -> int:
    value = int(text)
    if not 1 <= value <= 16:
        raise argparse.ArgumentTypeError(f"group size must be in 1..16, got {text}")
    return value


def group_size_range(text: str) -> list[int]:
    """Parse ``4``, ``1..8`` (inclusive) or ``2,4,8`` into a list of sizes."""
    try:
        if ".." in text:
            lo_s, hi_s = text.split("..", 1)
            lo, hi = int(lo_s), int(hi_s)
            if lo > hi:
                raise ValueError
            values = list(range(lo, hi + 1))
        elif "," in text:
            values = [int(part) for part in text.split(",")]
        else:
            values = [int(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad group-size range {text!r}") from None
    if not values or any(not 1 <= v <= 16 for v in values):
        raise argparse.ArgumentTypeError(f"group sizes must lie in 1..16, got {text!r}")
    return values


def alpha_arg(text: str):
    try:
        if "," in text:
            values = [float(part) for part in text.split(",")]
            if any(a < 0 for a in values):
                raise ValueError
            return values
        value = float(text)
        if value < 0:
            raise ValueError
        return value
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha {text!r}") from None


# -- report plumbing ---------------------------------------------------------


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _base_report(args: argparse.Namespace, inputs: list[str]) -> dict:
    config = {
        key: value
        for key, value in vars(args).items()
        if key not in ("func", "command") and not callable(value)
    }
    return {
        "tool": "bitslice",
        "version": __version__,
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config": config,
        "inputs": {path: _sha256(path) for path in inputs},
    }


def _emit(report: dict, path: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=str)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load_codes(path: str) -> np.ndarray:
    matrix = read_matrix(path)
    if matrix.dtype != np.int8:
        raise DataError(f"{path}: expected an int8 matrix, got {matrix.dtype}")
    if matrix.min() == -128:
        raise DataError(
            f"{path}: value -128 has no sign-magnitude encoding; requantize to [-127, 127]"
        )
    return matrix


# -- subcommands -------------------------------------------------------------


def cmd_gen_weights(args: argparse.Namespace) -> int:
    w = gen_gaussian_weights(args.rows, args.cols, args.std, args.seed)
    write_matrix(args.out, w.astype(np.float32))
    report = _base_report(args, [])
    report["outputs"] = {args.out: _sha256(args.out)}
    _emit(report, args.report)
    return 0


def cmd_quantize(args: argparse.Namespace) -> int:
    w = read_matrix(getattr(args, "in"))
    if w.dtype != np.float32:
        raise DataError(f"{getattr(args, 'in')}: expected a float32 matrix, got {w.dtype}")
    codes, delta_w = quantize_weights(w)
    write_matrix(args.out, codes)
    params = QuantParams(delta_w=delta_w, delta_x=1.0, zero_x=0, delta_y=1.0, zero_y=0)
    if args.params:
        with open(args.params, "w") as fh:
            json.dump(params.to_dict(), fh, indent=2)
            fh.write("\n")
    report = _base_report(args, [getattr(args, "in")])
    report["outputs"] = {args.out: _sha256(args.out)}
    report["delta_w_range"] = [float(delta_w.min()), float(delta_w.max())]
    _emit(report, args.report)
    return 0


def cmd_sparsity_stats(args: argparse.Namespace) -> int:
    codes = _load_codes(getattr(args, "in"))
    tensor = to_sign_magnitude(codes)
    stats = sparsity_stats(tensor, args.m)
    report = _base_report(args, [getattr(args, "in")])
    report["stats"] = stats.to_dict()
    if stats.value_sparsity > 0:
        report["bit_to_value_sparsity_ratio"] = stats.avg_bit_sparsity / stats.value_sparsity
    else:
        report["bit_to_value_sparsity_ratio"] = None
    _emit(report, args.report)
    return 0


def cmd_compress(args: argparse.Namespace) -> int:
    codes = _load_codes(getattr(args, "in"))
    tensor = to_sign_magnitude(codes)
    summary = write_container(args.out, tensor, args.m, args.segment_len, args.threshold)
    report = _base_report(args, [getattr(args, "in")])
    report["outputs"] = {args.out: _sha256(args.out)}
    report["container"] = {
        "total_bytes": summary.total_bytes,
        "plane_flags": summary.plane_flags,
        "payload_bits": summary.payload_bits,
        "raw_bits": summary.raw_bits,
        "compression_ratio": summary.raw_bits / summary.payload_bits,
    }
    _emit(report, args.report)
    return 0


def cmd_decompress(args: argparse.Namespace) -> int:
    tensor = read_container(getattr(args, "in"))
    if tensor.bit_width != 8:
        raise DataError(
            f"{getattr(args, 'in')}: {tensor.bit_width}-bit container does not fit the int8 matrix format"
        )
    write_matrix(args.out, tensor.values().astype(np.int8))
    report = _base_report(args, [getattr(args, "in")])
    report["outputs"] = {args.out: _sha256(args.out)}
    _emit(report, args.report)
    return 0


def cmd_gemm(args: argparse.Namespace) -> int:
    w_codes = _load_codes(args.weights)
    x_codes = _load_codes(args.acts)
    tensor = to_sign_magnitude(w_codes)
    if x_codes.shape[1] == 1:
        y, counters = gemv_bitsliced(tensor, x_codes[:, 0], args.m)
        y = y[:, None]
    else:
        y, counters = gemm_tiled(
            tensor, x_codes, args.m, args.tile_m, args.tile_k, args.tile_n
        )
    report = _base_report(args, [args.weights, args.acts])
    report["shape"] = list(y.shape)
    report["counters"] = counters.to_dict()
    report["result_int32_sha256"] = hashlib.sha256(
        np.ascontiguousarray(y, dtype="<i4").tobytes()
    ).hexdigest()
    if args.verify:
        oracle = tensor.values().astype(np.int64) @ x_codes.astype(np.int64)
        if np.array_equal(oracle, y.astype(np.int64)):
            print("VERIFIED exact")
            report["verified"] = True
        else:
            diff = int(np.abs(oracle - y.astype(np.int64)).max())
            raise DataError(f"verification failed: max abs difference {diff}")
    if args.out:
        write_matrix(args.out, y.astype(np.float32))
        report["outputs"] = {args.out: _sha256(args.out)}
    _emit(report, args.report)
    return 0


def cmd_dse(args: argparse.Namespace) -> int:
    tensor = read_container(args.weights)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    x = rng.integers(0, 256, tensor.cols)
    rows = dse_sweep(tensor, x, args.m)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(dse_csv(rows))
    report = _base_report(args, [args.weights])
    report["rows"] = [row.to_dict() for row in rows]
    report["recommended_m"] = next(row.m for row in rows if row.recommended)
    if args.csv:
        report["outputs"] = {args.csv: _sha256(args.csv)}
    _emit(report, args.report)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed))
    q_float = rng.normal(0.0, args.sigma, args.d)
    k_float = rng.normal(0.0, args.sigma, (args.s, args.d))
    q_codes, delta_q = quantize_symmetric(q_float)
    k_codes, delta_k = quantize_symmetric(k_float)
    keys = to_sign_magnitude(k_codes)
    config = PredictorConfig(
        rounds=args.rounds,
        alpha=args.alpha,
        radius=math.inf if args.keep_all else args.radius,
        q_bits=args.q_bits,
        bound_mode=args.bound_mode,
        scale_q=delta_q,
        scale_k=delta_k,
    )
    result = predict(q_codes, keys, config)
    topk = min(args.topk, args.s)
    oracle = exact_topk(exact_scores(q_codes, keys, delta_q, delta_k), topk)
    baseline_bits = 4 * args.s * args.d
    report = _base_report(args, [])
    report["result"] = {
        "candidates": result.candidates,
        "survivors": int(result.survivors.shape[0]),
        "survivor_curve": result.survivor_curve,
        "survivor_indices": [int(i) for i in result.survivors],
        "gated_rounds": result.gated_rounds,
        "k_bits": result.k_bits,
        "sign_bits": result.sign_bits,
        "q_bits_fetched": result.q_bits_fetched,
        "total_bits": result.total_bits,
        "baseline_prediction_bits": baseline_bits,
        "traffic_fraction": (result.k_bits + result.sign_bits) / baseline_bits,
        f"recall_at_{topk}": recall(result.survivors, oracle),
    }
    _emit(report, args.report)
    return 0


def cmd_layer(args: argparse.Namespace) -> int:
    if args.config:
        with open(args.config) as fh:
            config = LayerConfig.from_dict(json.load(fh))
    else:
        config = LayerConfig()
    overrides = {
        "h": args.h,
        "d": args.d,
        "heads": args.heads,
        "ffn_mult": args.ffn_mult,
        "m": args.m,
        "rounds": args.rounds,
        "alpha": args.alpha,
        "radius": args.radius,
        "q_bits": args.q_bits,
        "bound_mode": args.bound_mode,
        "seed": args.seed,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(config, name, value)
    if args.keep_all:
        config.radius = math.inf
    config.validate()

    result = run_layer_benchmark(
        config,
        prefill_tokens=args.prefill_tokens,
        decode_steps=args.decode_steps,
        workers=args.workers,
    )
    report = _base_report(args, [args.config] if args.config else [])
    report["seed"] = result.config.seed
    report["config"] = result.config.to_dict()
    report.update(result.report_dict())
    report["outputs_sha256"] = {
        "prefill": hashlib.sha256(
            np.ascontiguousarray(result.prefill_out, dtype="<f8").tobytes()
        ).hexdigest(),
        "decode": hashlib.sha256(
            np.ascontiguousarray(result.decode_out, dtype="<f8").tobytes()
        ).hexdigest(),
    }
    if args.csv:
        stages = [result.prefill_report, result.decode_report, result.total_report]
        flat = [stage.to_flat_dict() for stage in stages]
        with open(args.csv, "w") as fh:
            fh.write(",".join(flat[0].keys()) + "\n")
            for row in flat:
                fh.write(",".join(str(value) for value in row.values()) + "\n")
        report["outputs"] = {args.csv: _sha256(args.csv)}
    _emit(report, args.report)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    interesting = (
        "recommended_m",
        "result",
        "container",
        "bit_to_value_sparsity_ratio",
        "verified",
        "result_int32_sha256",
    )
    for path in getattr(args, "in"):
        with open(path) as fh:
            doc = json.load(fh)
        line = (
            f"{path}: {doc.get('tool', '?')} {doc.get('version', '?')}"
            f" command={doc.get('command', '?')} seed={doc.get('seed')}"
        )
        print(line)
        for stage in ("prefill", "decode", "total"):
            if stage in doc and isinstance(doc[stage], dict):
                stage_doc = doc[stage]
                counters = stage_doc.get("counters", {})
                adds = counters.get("merge_adds", 0) + counters.get("recon_adds", 0)
                print(
                    f"  {stage}: tokens={stage_doc.get('tokens')}"
                    f" adds={adds}"
                    f" kv_bits={stage_doc.get('kv_bits_loaded')}"
                    f" max_abs_diff={stage_doc.get('max_abs_diff')}"
                )
        for key in interesting:
            if key in doc:
                print(f"  {key}: {json.dumps(doc[key], sort_keys=True, default=str)}")
    return 0


# -- parser ------------------------------------------------------------------


def _add_seed(sub: argparse.ArgumentParser, default: int | None = 42) -> None:
    sub.add_argument("--seed", type=int, default=default, help="PRNG seed")


def _add_report(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--report", help="write the JSON report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bitslice",
        description="Bit-slice integer kernels, plane codec, and the toy decoder layer.",
    )
    parser.add_argument("--version", action="version", version=f"bitslice {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-weights", help="write a seeded Gaussian float32 matrix")
    p.add_argument("--rows", type=positive_int, required=True)
    p.add_argument("--cols", type=positive_int, required=True)
    p.add_argument("--std", type=positive_float, default=0.02)
    p.add_argument("--out", required=True)
    _add_seed(p)
    _add_report(p)
    p.set_defaults(func=cmd_gen_weights)

    p = sub.add_parser("quantize", help="per-row symmetric int8 weight quantization")
    p.add_argument("--in", required=True, help="float32 matrix file")
    p.add_argument("--out", required=True, help="int8 matrix file")
    p.add_argument("--params", help="write quantization parameters JSON here")
    _add_seed(p)
    _add_report(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("sparsity-stats", help="per-plane sparsity of an int8 matrix")
    p.add_argument("--in", required=True, help="int8 matrix file")
    p.add_argument("--m", type=group_size, default=4)
    _add_seed(p)
    _add_report(p)
    p.set_defaults(func=cmd_sparsity_stats)

    p = sub.add_parser("compress", help="pack an int8 matrix into a plane container")
    p.add_argument("--in", required=True, help="int8 matrix file")
    p.add_argument("--out", required=True, help="container file")
    p.add_argument("--m", type=group_size, default=4)
    p.add_argument("--threshold", type=nonneg_float, default=0.65,
                   help="compress planes whose zero fraction exceeds this")
    p.add_argument("--segment-len", type=positive_int, default=1024)
    _add_seed(p)
    _add_report(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="unpack a container back to an int8 matrix")
    p.add_argument("--in", required=True, help="container file")
    p.add_argument("--out", required=True, help="int8 matrix file")
    _add_seed(p)
    _add_report(p)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("gemm", help="bit-slice integer product with counters")
    p.add_argument("--weights", required=True, help="int8 matrix file")
    p.add_argument("--acts", required=True, help="int8 matrix file (columns are inputs)")
    p.add_argument("--m", type=group_size, default=4)
    p.add_argument("--tile-m", type=positive_int, default=64)
    p.add_argument("--tile-k", type=positive_int, default=256)
    p.add_argument("--tile-n", type=positive_int, default=32)
    p.add_argument("--verify", action="store_true",
                   help="check against the dense oracle; prints VERIFIED exact")
    p.add_argument("--out", help="write the product as float32")
    _add_seed(p)
    _add_report(p)
    p.set_defaults(func=cmd_gemm)

    p = sub.add_parser("dse", help="sweep group sizes over a weight container")
    p.add_argument("--weights", required=True, help="container file")
    p.add_argument("--m", type=group_size_range, default=list(range(1, 9)),
                   help="sizes to sweep: 4, 1..8, or 2,4,8")
    p.add_argument("--csv", help="write the sweep table as CSV")
    _add_seed(p)
    _add_report(p)
    p.set_defaults(func=cmd_dse)

    p = sub.add_parser("predict", help="progressive key prediction on Gaussian data")
    p.add_argument("--s", type=positive_int, default=512, help="number of keys")
    p.add_argument("--d", type=positive_int, default=64, help="key width")
    p.add_argument("--sigma", type=positive_float, default=1.5)
    p.add_argument("--rounds", type=positive_int, default=4)
    p.add_argument("--alpha", type=alpha_arg, default=0.55)
    p.add_argument("--radius", type=nonneg_float, default=3.0)
    p.add_argument("--q-bits", type=positive_int, default=4)
    p.add_argument("--bound-mode", choices=("estimate", "upper"), default="estimate")
    p.add_argument("--keep-all", action="store_true", help="disable pruning (infinite radius)")
    p.add_argument("--topk", type=positive_int, default=32)
    _add_seed(p)
    _add_report(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("layer", help="run the toy decoder layer benchmark")
    p.add_argument("--config", help="layer config JSON")
    p.add_argument("--h", type=positive_int)
    p.add_argument("--d", type=positive_int)
    p.add_argument("--heads", type=positive_int)
    p.add_argument("--ffn-mult", type=positive_int)
    p.add_argument("--m", type=group_size)
    p.add_argument("--rounds", type=positive_int)
    p.add_argument("--alpha", type=alpha_arg)
    p.add_argument("--radius", type=nonneg_float)
    p.add_argument("--q-bits", type=positive_int)
    p.add_argument("--bound-mode", choices=("estimate", "upper"))
    p.add_argument("--keep-all", action="store_true")
    p.add_argument("--prefill-tokens", type=positive_int, default=16)
    p.add_argument("--decode-steps", type=nonneg_int, default=16)
    p.add_argument("--workers", type=positive_int, default=os.cpu_count() or 1)
    p.add_argument("--csv", help="write per-stage counters as CSV")
    _add_seed(p, default=None)
    _add_report(p)
    p.set_defaults(func=cmd_layer)

    p = sub.add_parser("report", help="summarize JSON reports")
    p.add_argument("--in", nargs="+", required=True, help="report JSON files")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
