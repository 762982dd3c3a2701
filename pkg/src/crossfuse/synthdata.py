"""Synthetic bimodal benchmark where the label lives in the interaction.

Each example carries a latent video symbol (the orientation of a drifting
luminance grating) and a latent audio symbol (which tone is playing); the
class label is (z_video + z_audio) mod 3. With unimodal_leak = 0 the label
is statistically independent of either symbol alone, so any single-modality
classifier is stuck at chance while a fusion model can reach 100%.

Datasets are a pure function of their spec: equal specs give bit-identical
examples, and the train/val splits draw from disjoint seed streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SynthSpec, canonical_json, dataclass_from_dict, dataclass_to_dict
from .encoders import AudioClip, VideoClip
from .errors import FormatError
from .tensor import Tensor
from .tensor_io import load_tensor, save_tensor

MANIFEST_NAME = "manifest.json"
_DATASET_FORMAT = "crossfuse-dataset"
_DATASET_VERSION = 1
_DATA_STREAM = 0x44415441  # b"DATA"


@dataclass
class Example:
    video: VideoClip
    audio: AudioClip
    label: int


@dataclass
class SynthDataset:
    train: list[Example]
    val: list[Example]
    spec: SynthSpec


def _balanced_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly n/3 labels per class (remainder spread low-class-first),
    in a seeded random order."""
    base, rem = divmod(n, 3)
    counts = [base + (1 if c < rem else 0) for c in range(3)]
    labels = np.repeat(np.arange(3), counts)
    rng.shuffle(labels)
    return labels


def _draw_symbols(rng: np.random.Generator, label: int, leak: float) -> tuple[int, int]:
    """Latent (z_video, z_audio) with (z_video + z_audio) mod 3 == label.

    With probability ``leak`` one modality carries the label directly
    (symbol == label, the other fixed at 0); otherwise the video symbol is
    uniform and the audio symbol completes the sum.
    """
    if leak > 0.0 and rng.random() < leak:
        if rng.random() < 0.5:
            return label, 0
        return 0, label
    zv = int(rng.integers(3))
    return zv, (label - zv) % 3


def _render_video(zv: int, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """A drifting sinusoidal grating whose orientation encodes the symbol:
    0 = vertical stripes, 1 = horizontal, 2 = diagonal."""
    res, t_total = spec.resolution, spec.t_total
    hh, ww = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    if zv == 0:
        u = ww.astype(np.float64)
    elif zv == 1:
        u = hh.astype(np.float64)
    else:
        u = (hh + ww) / math.sqrt(2.0)
    # Small random-walk drift keeps the texture moving without washing out
    # the temporal mean of the sampled frames.
    phase = rng.uniform(0.0, 2.0 * math.pi)
    drift = np.cumsum(rng.uniform(-0.6, 0.6, size=t_total)) * (2.0 * math.pi / spec.pattern_period)
    angles = (2.0 * math.pi / spec.pattern_period) * u[None, :, :] + (phase + drift)[:, None, None]
    base = 0.5 + spec.video_amplitude * np.sin(angles)  # (T, H, W)
    frames = np.broadcast_to(base, (spec.channels,) + base.shape).copy()
    frames += rng.normal(0.0, spec.noise_sigma, size=frames.shape)
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def _render_audio(za: int, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """A pure tone at the symbol's frequency plus white noise."""
    t = np.arange(spec.audio_len) / spec.sample_rate
    phase = rng.uniform(0.0, 2.0 * math.pi)
    wave = spec.audio_amplitude * np.sin(2.0 * math.pi * spec.tone_freqs[za] * t + phase)
    wave += rng.normal(0.0, spec.noise_sigma, size=wave.shape)
    return np.clip(wave, -1.0, 1.0).astype(np.float32)


def _split_streams(spec: SynthSpec) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    root = np.random.SeedSequence([spec.seed, _DATA_STREAM])
    train_ss, val_ss = root.spawn(2)
    return train_ss, val_ss


def _generate_split(spec: SynthSpec, split_ss: np.random.SeedSequence, n: int) -> list[Example]:
    children = split_ss.spawn(n + 1)
    labels = _balanced_labels(n, np.random.default_rng(children[0]))
    examples = []
    for i in range(n):
        rng = np.random.default_rng(children[i + 1])
        label = int(labels[i])
        zv, za = _draw_symbols(rng, label, spec.unimodal_leak)
        video = VideoClip(Tensor(_render_video(zv, spec, rng)), frame_rate=spec.frame_rate)
        audio = AudioClip(Tensor(_render_audio(za, spec, rng)), sample_rate=spec.sample_rate)
        examples.append(Example(video, audio, label))
    return examples


def generate(spec: SynthSpec) -> SynthDataset:
    """Render both splits. Bit-identical output for equal specs."""
    train_ss, val_ss = _split_streams(spec)
    return SynthDataset(
        train=_generate_split(spec, train_ss, spec.num_train),
        val=_generate_split(spec, val_ss, spec.num_val),
        spec=spec,
    )


def latent_symbols(spec: SynthSpec) -> tuple[list[tuple[int, int, int]], list[tuple[int, int, int]]]:
    """(z_video, z_audio, label) triples per split, without rendering media.

    Consumes the per-example rng streams exactly as ``generate`` does, so
    triples line up with generated examples index by index.
    """
    out = []
    train_ss, val_ss = _split_streams(spec)
    for split_ss, n in ((train_ss, spec.num_train), (val_ss, spec.num_val)):
        children = split_ss.spawn(n + 1)
        labels = _balanced_labels(n, np.random.default_rng(children[0]))
        triples = []
        for i in range(n):
            rng = np.random.default_rng(children[i + 1])
            label = int(labels[i])
            zv, za = _draw_symbols(rng, label, spec.unimodal_leak)
            triples.append((zv, za, label))
        out.append(triples)
    return out[0], out[1]


def save_dataset(dataset: SynthDataset, dirpath: str | Path) -> None:
    """One tensor file per media stream plus a canonical-JSON manifest.

    Media files are written first (each atomically); the manifest lands
    last, so a directory without a readable manifest is recognizably
    incomplete.
    """
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "format": _DATASET_FORMAT,
        "version": _DATASET_VERSION,
        "spec": dataclass_to_dict(dataset.spec),
    }
    index = 0
    for split_name, examples in (("train", dataset.train), ("val", dataset.val)):
        entries = []
        for ex in examples:
            video_name = f"ex{index}_video.cftn"
            audio_name = f"ex{index}_audio.cftn"
            save_tensor(dirpath / video_name, ex.video.frames.data)
            save_tensor(dirpath / audio_name, ex.audio.waveform.data)
            entries.append({
                "index": index,
                "video": video_name,
                "audio": audio_name,
                "label": int(ex.label),
            })
            index += 1
        manifest[split_name] = entries
    tmp = dirpath / (MANIFEST_NAME + ".tmp")
    tmp.write_text(canonical_json(manifest))
    tmp.replace(dirpath / MANIFEST_NAME)


def load_dataset(dirpath: str | Path) -> SynthDataset:
    """Reload a saved dataset; tensors come back bit-exact."""
    dirpath = Path(dirpath)
    manifest_path = dirpath / MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"{dirpath}: no {MANIFEST_NAME}; not a dataset directory")
    try:
        manifest = json.loads(manifest_path.read_text())
    except ValueError as exc:
        raise FormatError(f"{manifest_path.name}: invalid JSON: {exc}") from exc
    if manifest.get("format") != _DATASET_FORMAT or manifest.get("version") != _DATASET_VERSION:
        raise FormatError(f"{manifest_path.name}: unrecognized dataset format/version")
    spec = dataclass_from_dict(SynthSpec, manifest.get("spec"), where=str(manifest_path))
    splits: dict[str, list[Example]] = {}
    for split_name in ("train", "val"):
        entries = manifest.get(split_name)
        if not isinstance(entries, list):
            raise FormatError(f"{manifest_path.name}: missing split {split_name!r}")
        examples = []
        for entry in entries:
            label = int(entry["label"])
            if not 0 <= label < 3:
                raise FormatError(f"{manifest_path.name}: label {label} out of range")
            video = VideoClip(Tensor(load_tensor(dirpath / entry["video"])),
                              frame_rate=spec.frame_rate)
            audio = AudioClip(Tensor(load_tensor(dirpath / entry["audio"])),
                              sample_rate=spec.sample_rate)
            examples.append(Example(video, audio, label))
        splits[split_name] = examples
    return SynthDataset(train=splits["train"], val=splits["val"], spec=spec)
