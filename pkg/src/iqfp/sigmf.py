"""Bit-exact reader/writer for SigMF-style capture pairs.

A capture is a `<name>.sigmf-data` file of raw little-endian interleaved
I/Q samples plus a `<name>.sigmf-meta` JSON document using the standard
global/captures/annotations triad with `core:` key names. Two datatypes
are supported: cf32_le (pairs of float32, the default) and ci16_le
(pairs of int16, full scale 32768). cf32 round trips are bit-exact;
ci16 round trips are within one quantization step per component.

Metadata keys this module does not model are preserved verbatim through
a read/write cycle, so foreign files survive rewrite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .signals import ComplexSignal

__all__ = [
    "SigmfError",
    "SigmfCapture",
    "SigmfAnnotation",
    "SigmfMeta",
    "read_capture",
    "write_capture",
    "build_meta",
    "write_dataset",
    "read_dataset",
    "CI16_FULL_SCALE",
]

CI16_FULL_SCALE = 32768.0

_DATATYPES = {
    "cf32_le": 8,  # bytes per complex sample
    "ci16_le": 4,
}


class SigmfError(Exception):
    """Structured failure while reading or writing a capture pair."""


@dataclass(frozen=True)
class SigmfCapture:
    sample_start: int
    center_freq_hz: Optional[float] = None
    datetime: Optional[str] = None
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SigmfAnnotation:
    sample_start: int
    sample_count: int
    label: Optional[str] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_start < 0 or self.sample_count < 1:
            raise SigmfError(
                f"annotation range invalid: start={self.sample_start}, count={self.sample_count}"
            )


@dataclass(frozen=True)
class SigmfMeta:
    datatype: str
    sample_rate_hz: float
    version: str = "1.0.0"
    captures: tuple = ()
    annotations: tuple = ()
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.datatype not in _DATATYPES:
            raise SigmfError(
                f"unsupported datatype {self.datatype!r}; supported: {sorted(_DATATYPES)}"
            )
        if not self.sample_rate_hz > 0:
            raise SigmfError("sample_rate must be positive")
        object.__setattr__(self, "captures", tuple(self.captures))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        starts = [c.sample_start for c in self.captures]
        if starts != sorted(starts) or len(set(starts)) != len(starts):
            raise SigmfError("captures must be sorted ascending by unique sample_start")

    @property
    def bytes_per_sample(self) -> int:
        return _DATATYPES[self.datatype]


def _meta_to_json(meta: SigmfMeta) -> dict:
    doc_global = {
        "core:datatype": meta.datatype,
        "core:sample_rate": meta.sample_rate_hz,
        "core:version": meta.version,
    }
    doc_global.update(meta.extras)
    captures = []
    for cap in meta.captures:
        entry = {"core:sample_start": cap.sample_start}
        if cap.center_freq_hz is not None:
            entry["core:frequency"] = cap.center_freq_hz
        if cap.datetime is not None:
            entry["core:datetime"] = cap.datetime
        entry.update(cap.extras)
        captures.append(entry)
    annotations = []
    for ann in meta.annotations:
        entry = {
            "core:sample_start": ann.sample_start,
            "core:sample_count": ann.sample_count,
        }
        if ann.label is not None:
            entry["core:label"] = ann.label
        entry.update(ann.extras)
        annotations.append(entry)
    return {"global": doc_global, "captures": captures, "annotations": annotations}


def _meta_from_json(doc: dict, path: Path) -> SigmfMeta:
    if not isinstance(doc, dict) or "global" not in doc:
        raise SigmfError(f"{path}: metadata lacks a 'global' section")
    doc_global = dict(doc["global"])
    try:
        datatype = doc_global.pop("core:datatype")
        sample_rate = float(doc_global.pop("core:sample_rate"))
    except KeyError as missing:
        raise SigmfError(f"{path}: global section missing {missing}") from None
    version = doc_global.pop("core:version", "1.0.0")

    captures = []
    for entry in doc.get("captures", []):
        entry = dict(entry)
        captures.append(
            SigmfCapture(
                sample_start=int(entry.pop("core:sample_start", 0)),
                center_freq_hz=entry.pop("core:frequency", None),
                datetime=entry.pop("core:datetime", None),
                extras=entry,
            )
        )
    annotations = []
    for entry in doc.get("annotations", []):
        entry = dict(entry)
        try:
            start = int(entry.pop("core:sample_start"))
            count = int(entry.pop("core:sample_count"))
        except KeyError as missing:
            raise SigmfError(f"{path}: annotation missing {missing}") from None
        annotations.append(
            SigmfAnnotation(
                sample_start=start,
                sample_count=count,
                label=entry.pop("core:label", None),
                extras=entry,
            )
        )
    return SigmfMeta(
        datatype=datatype,
        sample_rate_hz=sample_rate,
        version=version,
        captures=tuple(captures),
        annotations=tuple(annotations),
        extras=doc_global,
    )


def _decode(raw: np.ndarray, datatype: str) -> np.ndarray:
    if datatype == "cf32_le":
        return raw
    pairs = raw.astype(np.float32).reshape(-1, 2)
    return ((pairs[:, 0] + 1j * pairs[:, 1]) / CI16_FULL_SCALE).astype(np.complex64)


def read_capture(meta_path, data_path) -> tuple:
    """Read a capture pair into (SigmfMeta, [ComplexSignal, ...]).

    One signal per annotation; a single spanning signal when there are
    none. Out-of-range annotations raise SigmfError before any sample is
    read, so the reader never reads past the promised range.
    """
    meta_path, data_path = Path(meta_path), Path(data_path)
    try:
        text = meta_path.read_text(encoding="utf-8")
    except OSError as err:
        raise SigmfError(f"cannot read metadata {meta_path}: {err}") from err
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise SigmfError(
            f"{meta_path}: malformed metadata JSON at byte {err.pos}: {err.msg}"
        ) from err
    meta = _meta_from_json(doc, meta_path)

    try:
        file_bytes = data_path.stat().st_size
    except OSError as err:
        raise SigmfError(f"cannot read data {data_path}: {err}") from err
    bytes_per = meta.bytes_per_sample
    if file_bytes % bytes_per:
        raise SigmfError(
            f"{data_path}: size {file_bytes} is not a multiple of {bytes_per}-byte samples"
        )
    total_samples = file_bytes // bytes_per

    for ann in meta.annotations:
        if ann.sample_start + ann.sample_count > total_samples:
            raise SigmfError(
                f"{data_path}: data shorter than metadata promises "
                f"(annotation needs samples up to {ann.sample_start + ann.sample_count}, "
                f"file has {total_samples})"
            )
    for cap in meta.captures:
        if cap.sample_start > total_samples:
            raise SigmfError(
                f"{data_path}: data shorter than metadata promises "
                f"(capture starts at sample {cap.sample_start}, file has {total_samples})"
            )

    if meta.datatype == "cf32_le":
        data = np.fromfile(data_path, dtype="<c8")
    else:
        data = np.fromfile(data_path, dtype="<i2")
    samples = _decode(data, meta.datatype)

    def capture_for(start: int) -> Optional[SigmfCapture]:
        chosen = None
        for cap in meta.captures:
            if cap.sample_start <= start:
                chosen = cap
        return chosen

    signals = []
    if meta.annotations:
        for ann in meta.annotations:
            cap = capture_for(ann.sample_start)
            signals.append(
                ComplexSignal(
                    samples=samples[ann.sample_start : ann.sample_start + ann.sample_count].copy(),
                    sample_rate_hz=meta.sample_rate_hz,
                    center_freq_hz=cap.center_freq_hz if cap else None,
                    capture_time=cap.datetime if cap else None,
                    source_id=ann.label,
                )
            )
    else:
        if total_samples == 0:
            raise SigmfError(f"{data_path}: empty data file")
        cap = capture_for(0)
        signals.append(
            ComplexSignal(
                samples=samples,
                sample_rate_hz=meta.sample_rate_hz,
                center_freq_hz=cap.center_freq_hz if cap else None,
                capture_time=cap.datetime if cap else None,
            )
        )
    return meta, signals


def _encode(samples: np.ndarray, datatype: str) -> np.ndarray:
    if datatype == "cf32_le":
        return np.ascontiguousarray(samples, dtype="<c8")
    scaled = np.rint(np.asarray(samples) * CI16_FULL_SCALE)
    interleaved = np.empty(samples.size * 2, dtype="<i2")
    interleaved[0::2] = np.clip(scaled.real, -32768, 32767).astype(np.int16)
    interleaved[1::2] = np.clip(scaled.imag, -32768, 32767).astype(np.int16)
    return interleaved


def write_capture(meta: SigmfMeta, signals, meta_path, data_path) -> None:
    """Write signals (concatenated in order) plus their metadata document.

    If `meta.annotations` is non-empty it must describe the signal
    boundaries exactly; :func:`build_meta` constructs such a meta.
    """
    meta_path, data_path = Path(meta_path), Path(data_path)
    signals = list(signals)
    if not signals:
        raise SigmfError("write_capture needs at least one signal")
    for sig in signals:
        if sig.sample_rate_hz != meta.sample_rate_hz:
            raise SigmfError(
                f"signal rate {sig.sample_rate_hz} != metadata rate {meta.sample_rate_hz}"
            )
    if meta.annotations:
        if len(meta.annotations) != len(signals):
            raise SigmfError(
                f"{len(meta.annotations)} annotations for {len(signals)} signals"
            )
        offset = 0
        for ann, sig in zip(meta.annotations, signals):
            if ann.sample_start != offset or ann.sample_count != len(sig):
                raise SigmfError(
                    "annotations must tile the concatenated signals exactly; "
                    f"expected start={offset} count={len(sig)}, got "
                    f"start={ann.sample_start} count={ann.sample_count}"
                )
            offset += len(sig)

    samples = np.concatenate([np.asarray(s.samples) for s in signals])
    try:
        _encode(samples, meta.datatype).tofile(data_path)
        meta_path.write_text(json.dumps(_meta_to_json(meta), indent=2) + "\n", encoding="utf-8")
    except OSError as err:
        raise SigmfError(f"cannot write capture pair {meta_path} / {data_path}: {err}") from err


def build_meta(signals, datatype: str = "cf32_le", labels=None, extras=None) -> SigmfMeta:
    """Construct a SigmfMeta whose annotations tile the given signals in order."""
    signals = list(signals)
    if not signals:
        raise SigmfError("build_meta needs at least one signal")
    labels = list(labels) if labels is not None else [s.source_id for s in signals]
    if len(labels) != len(signals):
        raise SigmfError(f"{len(labels)} labels for {len(signals)} signals")
    annotations = []
    offset = 0
    for sig, label in zip(signals, labels):
        annotations.append(
            SigmfAnnotation(sample_start=offset, sample_count=len(sig), label=label)
        )
        offset += len(sig)
    first = signals[0]
    captures = (
        SigmfCapture(
            sample_start=0,
            center_freq_hz=first.center_freq_hz,
            datetime=first.capture_time,
        ),
    )
    return SigmfMeta(
        datatype=datatype,
        sample_rate_hz=first.sample_rate_hz,
        captures=captures,
        annotations=tuple(annotations),
        extras=dict(extras or {}),
    )


_MANIFEST_FORMAT = "iqfp-dataset-v1"


def write_dataset(dir_path, dataset, extras=None) -> None:
    """Persist a LabeledDataset as one capture pair per class plus a manifest.

    Windows of each class are concatenated into class_NN.sigmf-data with
    per-window annotations; the split tag rides in the annotation extras.
    manifest.json indexes the pairs and records the class roster.
    """
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    pairs = []
    for label in range(dataset.class_count):
        windows = [w for w in dataset.windows if w.label == label]
        if not windows:
            continue
        stem = f"class_{label:02d}"
        meta = build_meta(
            [w.signal for w in windows],
            labels=[dataset.class_names[label]] * len(windows),
        )
        annotations = tuple(
            SigmfAnnotation(
                sample_start=ann.sample_start,
                sample_count=ann.sample_count,
                label=ann.label,
                extras={"iqfp:split": w.split},
            )
            for ann, w in zip(meta.annotations, windows)
        )
        meta = SigmfMeta(
            datatype=meta.datatype,
            sample_rate_hz=meta.sample_rate_hz,
            captures=meta.captures,
            annotations=annotations,
        )
        write_capture(
            meta,
            [w.signal for w in windows],
            dir_path / (stem + ".sigmf-meta"),
            dir_path / (stem + ".sigmf-data"),
        )
        pairs.append(
            {
                "meta": stem + ".sigmf-meta",
                "data": stem + ".sigmf-data",
                "label": label,
            }
        )
    manifest = {
        "format": _MANIFEST_FORMAT,
        "class_count": dataset.class_count,
        "class_names": list(dataset.class_names),
        "window_len": dataset.window_len,
        "sample_rate_hz": dataset.sample_rate_hz,
        "pairs": pairs,
        "extras": dict(extras or {}),
    }
    (dir_path / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )


def read_dataset(dir_path) -> tuple:
    """Load a dataset directory written by write_dataset.

    Returns (LabeledDataset, manifest_extras). Window order is by class,
    then by position within each class pair, which is deterministic.
    """
    dir_path = Path(dir_path)
    manifest_path = dir_path / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as err:
        raise SigmfError(f"cannot read dataset manifest {manifest_path}: {err}") from err
    except json.JSONDecodeError as err:
        raise SigmfError(f"{manifest_path}: malformed manifest JSON: {err.msg}") from err
    if manifest.get("format") != _MANIFEST_FORMAT:
        raise SigmfError(
            f"{manifest_path}: format {manifest.get('format')!r} is not {_MANIFEST_FORMAT!r}"
        )
    from .signals import LabeledDataset, LabeledWindow

    windows = []
    for pair in manifest["pairs"]:
        meta, signals = read_capture(dir_path / pair["meta"], dir_path / pair["data"])
        if len(meta.annotations) != len(signals):
            raise SigmfError(f"{pair['meta']}: annotation/signal count mismatch")
        for ann, sig in zip(meta.annotations, signals):
            windows.append(
                LabeledWindow(
                    signal=sig,
                    label=int(pair["label"]),
                    split=ann.extras.get("iqfp:split", "train"),
                )
            )
    dataset = LabeledDataset(
        tuple(windows),
        int(manifest["class_count"]),
        tuple(manifest["class_names"]),
    )
    return dataset, manifest.get("extras", {})
