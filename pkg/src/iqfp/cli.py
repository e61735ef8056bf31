"""Operator command line: generate, preprocess, train, eval, fingerprint.

Every verb is driven by one JSON config file (see :mod:`iqfp.config`); the
CLI adds no hyperparameters of its own beyond a seed override and a thread
cap. Commands exit 0 on success and 2 on any diagnosed failure, with a
one-line structured diagnostic on stderr:

    iqfp: error: <ErrorKind>: <message>

Heavy imports happen after argument parsing so --threads can pin the BLAS
pool before numpy initializes it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

__all__ = [
    "main",
    "build_parser",
    "cmd_generate",
    "cmd_preprocess",
    "cmd_train",
    "cmd_eval",
    "cmd_fingerprint",
]

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

_STORE_INDEX = "processed.index.json"
_STORE_TENSOR = "processed.npy"
_STORE_FORMAT = "iqfp-processed-v1"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iqfp",
        description="RF device fingerprinting: synthesize, train, identify.",
    )
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument(
        "--seed", type=int, default=None, help="override every section seed"
    )
    parser.add_argument(
        "--threads", type=int, default=None, help="cap BLAS/OpenMP thread pools"
    )
    verbs = parser.add_subparsers(dest="verb", required=True)
    verbs.add_parser("generate", help="synthesize the dataset into paths.data_dir")
    verbs.add_parser("preprocess", help="filter/decimate windows into the store")
    verbs.add_parser("train", help="fit the model; writes checkpoint + history")
    verbs.add_parser("eval", help="score the test split; writes the report JSON")
    fp = verbs.add_parser("fingerprint", help="rank device classes for one capture")
    fp.add_argument("capture", help="path to a .sigmf-meta capture file")
    fp.add_argument(
        "--top", type=int, default=5, help="how many ranked classes to print"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("iqfp: error: ConfigError: --threads must be >= 1", file=sys.stderr)
            return 2
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .checkpoint import CheckpointError
    from .config import ConfigError, load_config, override_seed
    from .sigmf import SigmfError
    from .training import DivergenceError

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = override_seed(config, args.seed)
        if args.verb == "generate":
            cmd_generate(config)
        elif args.verb == "preprocess":
            cmd_preprocess(config)
        elif args.verb == "train":
            cmd_train(config)
        elif args.verb == "eval":
            cmd_eval(config)
        elif args.verb == "fingerprint":
            cmd_fingerprint(config, args.capture, top=args.top)
        return 0
    except (ConfigError, SigmfError, CheckpointError, DivergenceError) as err:
        print(f"iqfp: error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"iqfp: error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


def cmd_generate(config) -> None:
    """Synthesize the configured dataset and write it as SigMF + manifest."""
    from .config import serialize_config
    from .sigmf import write_dataset
    from .synth import generate_dataset

    config.require("synth")
    dataset = generate_dataset(config.synth)
    extras = {"synth": serialize_config(config)["synth"]}
    write_dataset(config.paths.data_dir, dataset, extras=extras)
    counts = dataset.counts()
    print(
        f"generated {len(dataset)} windows "
        f"({counts['train']} train / {counts['val']} val / {counts['test']} test), "
        f"{dataset.class_count} devices, L={dataset.window_len} "
        f"@ {dataset.sample_rate_hz:.6g} Hz -> {config.paths.data_dir}"
    )


def _load_raw(config):
    from .config import ConfigError
    from .sigmf import read_dataset

    data_dir = Path(config.paths.data_dir)
    if not (data_dir / "manifest.json").exists():
        raise ConfigError(
            f"no dataset manifest under {data_dir}; run `iqfp generate` first"
        )
    dataset, _ = read_dataset(data_dir)
    return dataset


def cmd_preprocess(config) -> None:
    """Run the preprocessing recipe over every window into a binary store."""
    import numpy as np

    from .config import serialize_config
    from .dsp import preprocess_array

    dataset = _load_raw(config)
    x = np.stack([w.signal.samples for w in dataset.windows]).astype(np.complex64)
    labels = [w.label for w in dataset.windows]
    splits = [w.split for w in dataset.windows]
    processed, fs = preprocess_array(x, dataset.sample_rate_hz, config.preprocess)
    processed = processed.astype(np.complex64)

    data_dir = Path(config.paths.data_dir)
    np.save(data_dir / _STORE_TENSOR, processed)
    index = {
        "format": _STORE_FORMAT,
        "tensor": _STORE_TENSOR,
        "count": int(processed.shape[0]),
        "window_len": int(processed.shape[1]),
        "sample_rate_hz": float(fs),
        "class_count": dataset.class_count,
        "class_names": list(dataset.class_names),
        "labels": labels,
        "splits": splits,
        "preprocess": serialize_config(config)["preprocess"],
    }
    (data_dir / _STORE_INDEX).write_text(
        json.dumps(index, indent=2) + "\n", encoding="utf-8"
    )
    print(
        f"preprocessed {processed.shape[0]} windows to L={processed.shape[1]} "
        f"@ {fs:.6g} Hz -> {data_dir / _STORE_TENSOR}"
    )


def _load_store(config):
    import numpy as np

    from .config import ConfigError
    from .signals import ComplexSignal, LabeledDataset, LabeledWindow

    data_dir = Path(config.paths.data_dir)
    index_path = data_dir / _STORE_INDEX
    if not index_path.exists():
        raise ConfigError(
            f"no processed store under {data_dir}; run `iqfp preprocess` first"
        )
    index = json.loads(index_path.read_text(encoding="utf-8"))
    if index.get("format") != _STORE_FORMAT:
        raise ConfigError(
            f"{index_path}: format {index.get('format')!r} is not {_STORE_FORMAT!r}"
        )
    tensor = np.load(data_dir / index["tensor"])
    if tensor.shape[0] != index["count"]:
        raise ConfigError(
            f"store tensor holds {tensor.shape[0]} windows, index says {index['count']}"
        )
    fs = float(index["sample_rate_hz"])
    windows = tuple(
        LabeledWindow(
            signal=ComplexSignal(tensor[i], fs, center_freq_hz=0.0),
            label=int(index["labels"][i]),
            split=index["splits"][i],
        )
        for i in range(tensor.shape[0])
    )
    return LabeledDataset(windows, int(index["class_count"]), tuple(index["class_names"]))


def _expected_input_len(store_len: int, preprocess) -> int:
    if preprocess.crop_parts > 1 and preprocess.crop_mode == "extract":
        return store_len // preprocess.crop_parts
    return store_len


def cmd_train(config) -> None:
    """Fit the configured model on the processed store; save the best epoch."""
    from .checkpoint import save_checkpoint
    from .config import ConfigError, serialize_config
    from .models import build_model
    from .training import train

    config.require("model", "train")
    dataset = _load_store(config)
    expected = _expected_input_len(dataset.window_len, config.preprocess)
    if config.model.input_len != expected:
        raise ConfigError(
            f"model.input_len={config.model.input_len} but the processed store "
            f"serves windows of {expected} samples "
            f"(store L={dataset.window_len}, crop_parts={config.preprocess.crop_parts}, "
            f"crop_mode={config.preprocess.crop_mode})"
        )
    if config.model.class_count != dataset.class_count:
        raise ConfigError(
            f"model.class_count={config.model.class_count} but the store has "
            f"{dataset.class_count} classes"
        )

    model = build_model(config.model, seed=config.train.seed)
    model, state = train(
        model,
        dataset,
        config.train,
        crop_parts=config.preprocess.crop_parts,
        crop_mode=config.preprocess.crop_mode,
        log=_log_epoch,
    )
    state_doc = state.to_dict()
    for record in state_doc.get("history", []):
        record.pop("seconds", None)

    checkpoint_path = Path(config.paths.checkpoint)
    checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        checkpoint_path,
        model,
        extra={
            "train_state": state_doc,
            "class_names": list(dataset.class_names),
            "sample_rate_hz": dataset.sample_rate_hz,
            "config": serialize_config(config),
        },
    )
    history_path = Path(str(checkpoint_path) + ".history.json")
    history_path.write_text(
        json.dumps(state_doc, indent=2) + "\n", encoding="utf-8"
    )
    print(
        f"trained {config.model.arch}: best val top-1 {state.best_val_top1:.4f} "
        f"at epoch {state.best_epoch} ({state.epochs_run} run"
        f"{', halted early' if state.halted_early else ''}) -> {checkpoint_path}"
    )


def _log_epoch(record: dict) -> None:
    print(
        f"epoch {record['epoch']:3d}  loss {record['train_loss']:.4f}  "
        f"val top-1 {record['val_top1']:.4f}  lr {record['lr']:.2e}  "
        f"{record['seconds']:.1f}s"
    )


def _load_trained(config):
    from .checkpoint import CheckpointError, load_checkpoint

    checkpoint_path = Path(config.paths.checkpoint)
    if not checkpoint_path.exists():
        raise CheckpointError(
            f"checkpoint not found: {checkpoint_path}; run `iqfp train` first"
        )
    return load_checkpoint(checkpoint_path)


def cmd_eval(config) -> None:
    """Score the test split end to end: load raw, preprocess, infer, report."""
    import dataclasses

    import numpy as np

    from .dsp import preprocess_array
    from .training import evaluate_arrays

    model, extra = _load_trained(config)

    t0 = time.perf_counter()
    dataset = _load_raw(config)
    x_raw, y = dataset.split_arrays("test")
    t_load = time.perf_counter() - t0
    if x_raw.shape[0] == 0:
        from .config import ConfigError

        raise ConfigError("dataset has no test split to evaluate")

    t1 = time.perf_counter()
    x, _ = preprocess_array(x_raw, dataset.sample_rate_hz, config.preprocess)
    x = x.astype(np.complex64)
    t_preprocess = time.perf_counter() - t1

    crop_seed = (config.train.seed if config.train is not None else 0) + 3
    report = evaluate_arrays(
        model,
        x,
        y,
        dataset.class_count,
        crop_parts=config.preprocess.crop_parts,
        crop_seed=crop_seed,
        crop_mode=config.preprocess.crop_mode,
    )
    report = dataclasses.replace(
        report,
        timings_s={
            "load": round(t_load, 6),
            "preprocess": round(t_preprocess, 6),
            "infer": report.timings_s["infer"],
        },
    )
    report_path = Path(config.paths.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(_render_report(report, dataset.class_names))
    print(f"report -> {report_path}")


def _render_report(report, class_names) -> str:
    lines = [
        f"top-1 accuracy  {report.top1:.4f}",
        f"top-5 accuracy  {report.top5:.4f}",
        f"test windows    {report.sample_count}  ({report.class_count} classes)",
        "phase timings   "
        + "  ".join(f"{k} {v:.3f}s" for k, v in report.timings_s.items()),
        "confusion (rows truth, cols prediction):",
    ]
    width = max(3, len(str(max(max(row) for row in report.confusion))))
    header = " " * 12 + " ".join(f"{c:>{width}}" for c in range(report.class_count))
    lines.append(header)
    for label, row in enumerate(report.confusion):
        name = class_names[label] if label < len(class_names) else str(label)
        lines.append(
            f"{name[:10]:>10}  " + " ".join(f"{n:>{width}}" for n in row)
        )
    return "\n".join(lines)


def cmd_fingerprint(config, capture_path, top: int = 5) -> None:
    """Rank device classes for one capture through the full trained pipeline."""
    import numpy as np

    from .autodiff import no_grad
    from .config import ConfigError
    from .dsp import preprocess_array
    from .sigmf import SigmfError, read_capture
    from .signals import window_signal

    model, extra = _load_trained(config)
    class_names = extra.get("class_names") or [
        f"class_{i}" for i in range(model.spec.class_count)
    ]

    meta_path = Path(capture_path)
    if meta_path.suffix != ".sigmf-meta":
        raise ConfigError(f"capture must be a .sigmf-meta path, got {capture_path}")
    data_path = meta_path.with_suffix(".sigmf-data")
    if not meta_path.exists() or not data_path.exists():
        raise SigmfError(f"capture pair incomplete: {meta_path} / {data_path}")
    t0 = time.perf_counter()
    meta, signals = read_capture(meta_path, data_path)

    raw_len = model.spec.input_len * config.preprocess.decimation_factor
    pieces = []
    for sig in signals:
        if len(sig) < raw_len:
            continue
        pieces.extend(w.samples for w in window_signal(sig, raw_len, raw_len))
    if not pieces:
        raise ConfigError(
            f"capture holds no window of {raw_len} samples "
            f"(model input {model.spec.input_len} x decimation "
            f"{config.preprocess.decimation_factor})"
        )
    x = np.stack(pieces).astype(np.complex64)
    x, _ = preprocess_array(x, meta.sample_rate_hz, config.preprocess)
    x = x.astype(np.complex64)

    model.eval()
    with no_grad():
        logits = model.forward(x).data
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    scores = probs.mean(axis=0)
    elapsed = time.perf_counter() - t0

    order = np.argsort(-scores)
    print(f"fingerprint of {meta_path.name}: {x.shape[0]} window(s), {elapsed:.3f}s")
    for rank, idx in enumerate(order[: max(1, top)], start=1):
        print(f"  {rank}. {class_names[idx]:<12} {scores[idx]:.4f}")


if __name__ == "__main__":
    sys.exit(main())
