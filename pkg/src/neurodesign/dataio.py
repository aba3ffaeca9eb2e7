"""Dataset formats, synthetic EEG generation, and replay streaming.

Recordings travel as a small CSV dialect (two header lines, then one row
per sample); labeled segment sets are directories with a JSON manifest
and a checksum sidecar. See docs/file-formats.md for the bit-exact spec.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .labels import CommandLabel, FeatureLabels
from .signal import DEFAULT_CHANNEL_NAMES, DEFAULT_SAMPLE_RATE, EegRecording
from .spectral import EEG_BANDS

FLOAT_FMT = "%.9g"   # save->load round-trips to 9 significant digits
CHUNK_SECONDS = 0.25


class RecordingFormatError(ValueError):
    """Recording file violates the CSV format; carries the offending line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if line_no is not None else message)


def save_recording(rec: EegRecording, path: str | Path) -> None:
    path = Path(path)
    lines = [
        f"sample_rate,{FLOAT_FMT % rec.sample_rate}",
        "channels," + ",".join(rec.channel_names),
    ]
    for col in rec.data.T:
        lines.append(",".join(FLOAT_FMT % v for v in col))
    path.write_text("\n".join(lines) + "\n")


def load_recording(path: str | Path) -> EegRecording:
    """Parse the recording CSV; every malformation reports its line number."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("sample_rate,"):
        raise RecordingFormatError("expected 'sample_rate,<value>' header", line_no=1)
    try:
        sample_rate = float(lines[0].split(",", 1)[1])
    except (IndexError, ValueError):
        raise RecordingFormatError("sample_rate is not numeric", line_no=1) from None
    if len(lines) < 2 or not lines[1].startswith("channels,"):
        raise RecordingFormatError("expected 'channels,<name>,...' header", line_no=2)
    channel_names = [c for c in lines[1].split(",")[1:] if c != ""]
    if not channel_names:
        raise RecordingFormatError("no channel names declared", line_no=2)

    rows = []
    for line_no, line in enumerate(lines[2:], start=3):
        if line.strip() == "":
            continue
        cells = line.split(",")
        if len(cells) != len(channel_names):
            raise RecordingFormatError(
                f"expected {len(channel_names)} cells, got {len(cells)}", line_no=line_no
            )
        try:
            values = [float(c) for c in cells]
        except ValueError:
            bad = next(c for c in cells if not _is_float(c))
            raise RecordingFormatError(f"non-numeric cell {bad!r}", line_no=line_no) from None
        if not all(math.isfinite(v) for v in values):
            raise RecordingFormatError("non-finite sample", line_no=line_no)
        rows.append(values)
    if not rows:
        raise RecordingFormatError("no samples")
    data = np.asarray(rows, dtype=np.float64).T
    if sample_rate <= 0:
        raise RecordingFormatError(f"sample_rate must be positive, got {sample_rate}", line_no=1)
    return EegRecording(sample_rate=sample_rate, channel_names=channel_names, data=data)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


LabelValue = Union[CommandLabel, FeatureLabels]


@dataclass
class LabeledSegmentSet:
    """EEG segments with homogeneous labels plus provenance metadata."""

    segments: list[EegRecording]
    labels: list[LabelValue]
    participant_id: str = "p00"
    source: str = "synthetic"

    def __post_init__(self):
        if len(self.segments) != len(self.labels):
            raise ValueError("segment count does not match label count")
        kinds = {type(lab) for lab in self.labels}
        if len(kinds) > 1:
            raise ValueError(f"mixed label kinds in one set: {sorted(k.__name__ for k in kinds)}")
        shapes = {seg.data.shape for seg in self.segments}
        if len(shapes) > 1:
            raise ValueError(f"segments have inconsistent dimensions: {sorted(shapes)}")

    @property
    def label_kind(self) -> str:
        if not self.labels:
            return "empty"
        return "command" if isinstance(self.labels[0], CommandLabel) else "features"

    def __len__(self) -> int:
        return len(self.segments)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def save_segment_set(segset: LabeledSegmentSet, directory: str | Path) -> None:
    directory = Path(directory)
    (directory / "segments").mkdir(parents=True, exist_ok=True)
    entries = []
    checksums = {}
    for idx, (seg, label) in enumerate(zip(segset.segments, segset.labels)):
        rel = f"segments/seg_{idx:04d}.csv"
        save_recording(seg, directory / rel)
        checksums[rel] = _sha256_file(directory / rel)
        if isinstance(label, CommandLabel):
            entries.append({"file": rel, "label": label.value})
        else:
            entries.append({"file": rel, "label": label.as_dict()})
    manifest = {
        "v": 1,
        "participant_id": segset.participant_id,
        "source": segset.source,
        "label_kind": segset.label_kind,
        "segments": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (directory / "checksums.json").write_text(json.dumps(checksums, indent=2, sort_keys=True) + "\n")


def load_segment_set(directory: str | Path, verify_checksums: bool = True) -> LabeledSegmentSet:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("v") != 1:
        raise ValueError(f"unsupported manifest version {manifest.get('v')!r}")
    checksums = {}
    checksum_path = directory / "checksums.json"
    if verify_checksums and checksum_path.exists():
        checksums = json.loads(checksum_path.read_text())
    segments, labels = [], []
    for entry in manifest["segments"]:
        rel = entry["file"]
        path = directory / rel
        if rel in checksums and _sha256_file(path) != checksums[rel]:
            raise ValueError(f"checksum mismatch for {rel}")
        segments.append(load_recording(path))
        raw = entry["label"]
        if manifest["label_kind"] == "command":
            labels.append(CommandLabel(raw))
        else:
            labels.append(FeatureLabels.from_dict(raw))
    return LabeledSegmentSet(
        segments=segments,
        labels=labels,
        participant_id=manifest.get("participant_id", "p00"),
        source=manifest.get("source", "unknown"),
    )


# Band-amplitude boosts that give each command a recognizable spectral
# signature (alpha / beta / theta dominant respectively).
DEFAULT_COMMAND_SIGNATURES: dict[str, dict[str, float]] = {
    CommandLabel.INCREASE_TRANSPARENCY.value: {"alpha": 3.0},
    CommandLabel.MORE_LUXURIOUS_DECORATION.value: {"beta": 3.0},
    CommandLabel.MORE_CLASSICAL_STYLE.value: {"theta": 3.0},
}
BASE_BAND_AMPLITUDE = 1.0


@dataclass
class SynthSpec:
    """Parameters of the synthetic EEG generator."""

    n_per_class: int
    sample_rate: float = DEFAULT_SAMPLE_RATE
    channels: int = 14
    duration_s: float = 2.0
    class_signatures: dict[str, dict[str, float]] = field(
        default_factory=lambda: {k: dict(v) for k, v in DEFAULT_COMMAND_SIGNATURES.items()}
    )
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if not self.class_signatures:
            raise ValueError("at least one class signature is required")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for name, sig in self.class_signatures.items():
            for band, amp in sig.items():
                if band not in EEG_BANDS:
                    raise ValueError(f"unknown band {band!r} in signature {name!r}")
                if amp <= 0:
                    raise ValueError(f"amplitude for {name}/{band} must be positive")


def _render_segment(
    rng: np.random.Generator,
    signature: dict[str, float],
    channels: int,
    n_samples: int,
    sample_rate: float,
    noise_sigma: float,
) -> np.ndarray:
    """Sum of band-limited sinusoids per channel plus white noise."""
    t = np.arange(n_samples) / sample_rate
    data = np.zeros((channels, n_samples))
    for band, (low, high) in EEG_BANDS.items():
        amp = BASE_BAND_AMPLITUDE * signature.get(band, 1.0)
        # one tone per channel per band, frequency and phase drawn per segment
        freqs = rng.uniform(low + 0.1 * (high - low), high - 0.1 * (high - low), size=channels)
        phases = rng.uniform(0, 2 * np.pi, size=channels)
        gains = amp * rng.uniform(0.8, 1.2, size=channels)
        data += gains[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])
    if noise_sigma > 0:
        data += noise_sigma * rng.standard_normal(data.shape)
    return data


def synth_generate(spec: SynthSpec, participant_id: str = "p00") -> LabeledSegmentSet:
    """Command-labeled synthetic set; fully determined by spec.seed."""
    rng = np.random.default_rng(spec.seed)
    n_samples = int(round(spec.duration_s * spec.sample_rate))
    names = list(DEFAULT_CHANNEL_NAMES[: spec.channels])
    if len(names) < spec.channels:
        names += [f"CH{idx}" for idx in range(len(names), spec.channels)]
    segments, labels = [], []
    for class_name in sorted(spec.class_signatures):
        label = CommandLabel(class_name)
        signature = spec.class_signatures[class_name]
        for _ in range(spec.n_per_class):
            data = _render_segment(
                rng, signature, spec.channels, n_samples, spec.sample_rate, spec.noise_sigma
            )
            segments.append(EegRecording(spec.sample_rate, list(names), data))
            labels.append(label)
    return LabeledSegmentSet(segments=segments, labels=labels,
                             participant_id=participant_id, source="synthetic")


# Archetype rooms for the feature-labeled generator. The five signatures
# live on an alpha/beta amplitude grid, so the between-class structure is
# genuinely two-dimensional and a 2-component PCA of band powers shows
# five blobs. Scores are fixed per archetype and cover both directions of
# every spatial feature.
FEATURE_ARCHETYPES: list[tuple[dict[str, float], dict[str, float]]] = [
    ({"alpha": 5.0}, {"transparency": 4, "style": -2, "decoration_density": -3, "color_scheme": -1}),
    ({"alpha": 0.2}, {"transparency": -4, "style": 3, "decoration_density": 1, "color_scheme": -2}),
    ({"beta": 5.0}, {"transparency": 1, "style": -4, "decoration_density": 4, "color_scheme": 2}),
    ({"beta": 0.2}, {"transparency": -2, "style": 2, "decoration_density": -4, "color_scheme": 4}),
    ({"alpha": 5.0, "beta": 5.0}, {"transparency": 3, "style": -1, "decoration_density": 2, "color_scheme": -4}),
]


def synth_feature_set(
    n_per_archetype: int,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    channels: int = 14,
    duration_s: float = 2.0,
    noise_sigma: float = 2.0,
    seed: int = 0,
    participant_id: str = "p00",
) -> LabeledSegmentSet:
    """Feature-labeled synthetic set built from the five archetype signatures."""
    rng = np.random.default_rng(seed)
    n_samples = int(round(duration_s * sample_rate))
    names = list(DEFAULT_CHANNEL_NAMES[:channels])
    if len(names) < channels:
        names += [f"CH{idx}" for idx in range(len(names), channels)]
    segments, labels = [], []
    for signature, scores in FEATURE_ARCHETYPES:
        label = FeatureLabels.from_dict(scores)
        for _ in range(n_per_archetype):
            data = _render_segment(rng, signature, channels, n_samples, sample_rate, noise_sigma)
            segments.append(EegRecording(sample_rate, list(names), data))
            labels.append(label)
    return LabeledSegmentSet(segments=segments, labels=labels,
                             participant_id=participant_id, source="synthetic")


@dataclass
class ChunkEvent:
    index: int
    start_time: float
    data: np.ndarray


@dataclass
class EndEvent:
    n_chunks: int


@dataclass
class ErrorEvent:
    error: Exception


StreamEvent = Union[ChunkEvent, EndEvent, ErrorEvent]


class ReplayHandle:
    """Owns the replay thread; join() waits for end-of-stream."""

    def __init__(self, thread: threading.Thread, cancel_flag: threading.Event):
        self._thread = thread
        self._cancel = cancel_flag

    def cancel(self) -> None:
        self._cancel.set()

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout)

    @property
    def done(self) -> bool:
        return not self._thread.is_alive()


def replay_stream(
    rec: EegRecording,
    sink: Callable[[StreamEvent], None],
    speed: float = 1.0,
    chunk_s: float = CHUNK_SECONDS,
    batch: bool = False,
) -> ReplayHandle:
    """Stream a recording to a sink in fixed-size chunks.

    Chunks are chunk_s long (a shorter trailing chunk is still emitted,
    so the chunks concatenate to the recording exactly) and are paced at
    wall-clock intervals of chunk_s / speed. batch=True, or an infinite
    speed, delivers everything immediately. A sink that raises terminates
    the stream with an ErrorEvent.
    """
    if not batch and not math.isinf(speed) and speed <= 0:
        raise ValueError(f"speed must be positive, got {speed}")
    immediate = batch or math.isinf(speed)
    chunk_samples = max(1, int(round(chunk_s * rec.sample_rate)))
    cancel_flag = threading.Event()

    def run():
        started = time.monotonic()
        emitted = 0
        try:
            for start in range(0, rec.n_samples, chunk_samples):
                if cancel_flag.is_set():
                    return
                if not immediate:
                    target = started + (start / rec.sample_rate) / speed
                    delay = target - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                chunk = rec.data[:, start:start + chunk_samples]
                sink(ChunkEvent(index=emitted, start_time=start / rec.sample_rate, data=chunk))
                emitted += 1
            if not immediate and not cancel_flag.is_set():
                # the stream ends when the data ends, not when the last chunk starts
                delay = started + rec.duration_s / speed - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            sink(EndEvent(n_chunks=emitted))
        except Exception as exc:  # sink rejected a delivery
            try:
                sink(ErrorEvent(error=exc))
            except Exception:
                pass

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    return ReplayHandle(thread, cancel_flag)
