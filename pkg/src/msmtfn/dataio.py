"""Call/segment records, manifests, padding, stub encoders and synthetic data.

Manifest format: UTF-8 line-delimited JSON, one call per line::

    {"call_id": "c0001", "variant": "orig", "label": "B", "domain": "dental",
     "split": "train",
     "segments": [{"index": 1, "transcript": "...", "wav": "wav/c0001_1.wav"},
                  {"index": 2, "audio_features": "feat/c0001_2.audio.tblob",
                   "text_features": "feat/c0001_2.text.tblob"}]}

Paths are relative to the manifest's directory.
"""
from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
import wave as wavlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import blob
from .errors import ShapeError, ValidationError
from .heads import LABELS, label_index
from .rng import generator

SAMPLE_RATE = 8000
MAX_AUDIO_SAMPLES = 320_000  # 40 s at 8 kHz
FRAME_LEN = 400
FRAME_HOP = 320
AUDIO_FRAMES = (MAX_AUDIO_SAMPLES - FRAME_LEN) // FRAME_HOP + 1  # 999
MAX_TOKENS = 199
FEATURE_DIM = 768
PAD_TOKEN = ""
SPLITS = ("train", "val", "test", "unlabeled")
DOMAINS = ("dental", "beauty", "courses")


# -- records -----------------------------------------------------------------

@dataclass
class SegmentRecord:
    index: int
    transcript: Optional[str] = None
    salesperson_text: Optional[str] = None
    customer_text: Optional[str] = None
    wav_path: Optional[str] = None
    audio_blob: Optional[str] = None
    text_blob: Optional[str] = None
    waveform: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def has_audio_wave(self) -> bool:
        return self.wav_path is not None or self.waveform is not None

    def load_waveform(self) -> np.ndarray:
        if self.waveform is not None:
            return self.waveform
        if self.wav_path is None:
            raise ValidationError(f"segment {self.index} has no waveform")
        wave, sr = read_wav(self.wav_path)
        if sr != SAMPLE_RATE:
            raise ValidationError(f"{self.wav_path}: sample rate {sr} != {SAMPLE_RATE}")
        return wave


@dataclass
class CallRecord:
    call_id: str
    segments: list
    label: Optional[str] = None
    domain: Optional[str] = None
    split: str = "train"
    variant: str = "orig"

    @property
    def key(self) -> tuple:
        return (self.call_id, self.variant)


def validate_record(rec: CallRecord) -> list[str]:
    """Problems with a record, each prefixed by its call id."""
    tag = f"call {rec.call_id}" + ("" if rec.variant == "orig" else f" [{rec.variant}]")
    out = []
    if not rec.segments:
        out.append(f"{tag}: no segments")
    idx = [s.index for s in rec.segments]
    if idx != list(range(1, len(idx) + 1)):
        out.append(f"{tag}: segment indices {idx} are not 1..{len(idx)}")
    if rec.split not in SPLITS:
        out.append(f"{tag}: unknown split {rec.split!r}")
    if rec.label is None:
        if rec.split != "unlabeled":
            out.append(f"{tag}: missing label")
    elif str(rec.label).upper() not in LABELS or len(str(rec.label)) != 1:
        out.append(f"{tag}: label {rec.label!r} not in A-E")
    for s in rec.segments:
        if s.has_audio_wave() == (s.audio_blob is not None):
            out.append(f"{tag} segment {s.index}: needs exactly one of waveform or audio feature blob")
        if s.transcript is None and s.text_blob is None:
            out.append(f"{tag} segment {s.index}: needs a transcript or a text feature blob")
    return out


# -- WAV -----------------------------------------------------------------------

def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono 16-bit PCM → float samples in [-1, 1)."""
    with wavlib.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValidationError(f"{path}: expected mono, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise ValidationError(f"{path}: expected 16-bit PCM")
        sr = w.getframerate()
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, sr


def write_wav(path, wave: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(wave) * 32768.0), -32768, 32767).astype("<i2")
    with wavlib.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def wav_header(path) -> tuple[int, int, int]:
    with wavlib.open(str(path), "rb") as w:
        return w.getnchannels(), w.getsampwidth(), w.getframerate()


# -- padding -------------------------------------------------------------------

def pad_or_truncate_audio(wave, sample_rate: int = SAMPLE_RATE) -> tuple[np.ndarray, int]:
    """Fix a waveform to 320,000 samples; returns (samples, valid_len)."""
    if sample_rate != SAMPLE_RATE:
        raise ValidationError(f"audio must be sampled at {SAMPLE_RATE} Hz, got {sample_rate}")
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ShapeError(f"audio must be mono 1-D, got shape {wave.shape}")
    if wave.size == 0:
        raise ValidationError("empty waveform")
    valid = min(wave.size, MAX_AUDIO_SAMPLES)
    out = np.zeros(MAX_AUDIO_SAMPLES)
    out[:valid] = wave[:valid]
    return out, valid


def pad_or_truncate_tokens(tokens: Sequence) -> tuple[list, int]:
    tokens = list(tokens)
    if not tokens:
        raise ValidationError("empty token sequence")
    valid = min(len(tokens), MAX_TOKENS)
    return tokens[:valid] + [PAD_TOKEN] * (MAX_TOKENS - valid), valid


def leading_mask(valid_len: int, length: int) -> np.ndarray:
    m = np.zeros(length, dtype=bool)
    m[:valid_len] = True
    return m


def audio_frames_valid(valid_samples: int) -> int:
    """Number of stub-encoder frames whose window starts inside the valid audio."""
    return min(AUDIO_FRAMES, -(-valid_samples // FRAME_HOP))


def pad_features(features, max_len: int, what: str) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
        raise ShapeError(f"{what} features must be [L, {FEATURE_DIM}], got {features.shape}")
    if not 1 <= features.shape[0] <= max_len:
        raise ShapeError(f"{what} features have {features.shape[0]} rows; allowed 1..{max_len}")
    out = np.zeros((max_len, FEATURE_DIM))
    out[: features.shape[0]] = features
    return out, leading_mask(features.shape[0], max_len)


# -- silence removal -------------------------------------------------------------

def remove_silence(wave, sample_rate: int = SAMPLE_RATE, min_span_s: float = 0.3,
                   rel_threshold: float = 0.02, frame_s: float = 0.01) -> np.ndarray:
    """Drop runs longer than ``min_span_s`` whose frame RMS is below ``rel_threshold`` × peak."""
    wave = np.asarray(wave, dtype=np.float64)
    peak = np.max(np.abs(wave)) if wave.size else 0.0
    if peak == 0.0:
        return wave.copy()
    flen = max(1, int(round(frame_s * sample_rate)))
    n = wave.size // flen
    frames = wave[: n * flen].reshape(n, flen)
    quiet = np.sqrt((frames ** 2).mean(axis=1)) < rel_threshold * peak
    keep = np.ones(wave.size, dtype=bool)
    min_frames = int(np.ceil(min_span_s / frame_s))
    start = None
    for i, q in enumerate(np.append(quiet, False)):
        if q and start is None:
            start = i
        elif not q and start is not None:
            if i - start > min_frames:
                keep[start * flen : i * flen] = False
            start = None
    out = wave[keep]
    return out if out.size else wave[:1].copy()


# -- stub encoders -----------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _audio_projection(seed: int) -> np.ndarray:
    rng = generator(seed, "stub-audio-projection")
    return rng.normal(0.0, 1.0 / np.sqrt(FRAME_LEN), size=(FRAME_LEN, FEATURE_DIM))


def stub_encode_audio(wave, seed: int = 0) -> np.ndarray:
    """Deterministic stand-in for the pretrained audio encoder: [999, 768].

    The padded waveform is cut into 400-sample frames with hop 320 and each
    frame is multiplied by a fixed seeded projection matrix.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if wave.shape != (MAX_AUDIO_SAMPLES,):
        raise ShapeError(f"stub audio encoder needs {MAX_AUDIO_SAMPLES} samples, got {wave.shape}")
    # contiguous copy: BLAS falls back to a slow path on the strided view
    frames = np.ascontiguousarray(np.lib.stride_tricks.sliding_window_view(wave, FRAME_LEN)[::FRAME_HOP])
    return frames @ _audio_projection(seed)


@functools.lru_cache(maxsize=65536)
def _char_embedding(seed: int, ch: str) -> np.ndarray:
    row = generator(seed, "stub-text-table", ch).normal(0.0, 1.0, size=FEATURE_DIM)
    row.setflags(write=False)
    return row


def stub_encode_text(chars: Sequence[str], seed: int = 0) -> np.ndarray:
    """Hashed per-character embedding lookup; padding rows are zero. Shape [199, 768]."""
    chars = list(chars)
    if len(chars) != MAX_TOKENS:
        chars, _ = pad_or_truncate_tokens(chars)
    out = np.zeros((MAX_TOKENS, FEATURE_DIM))
    for i, ch in enumerate(chars):
        if ch != PAD_TOKEN:
            out[i] = _char_embedding(seed, ch)
    return out


# -- model-ready features ------------------------------------------------------------

@dataclass
class SegmentFeatures:
    audio: np.ndarray
    audio_mask: np.ndarray
    text: np.ndarray
    text_mask: np.ndarray

    def compact(self) -> "SegmentFeatures":
        """Drop trailing padding rows (masks are leading-valid)."""
        la = int(self.audio_mask.sum())
        lt = int(self.text_mask.sum())
        return SegmentFeatures(self.audio[:la].copy(), self.audio_mask[:la].copy(),
                               self.text[:lt].copy(), self.text_mask[:lt].copy())


@dataclass
class CallExample:
    call_id: str
    label: Optional[str]
    segments: list
    variant: str = "orig"


def ingest_segment(seg: SegmentRecord, stub_seed: int = 0, drop_silence: bool = False) -> SegmentFeatures:
    """Apply the padding contract: audio → [999, 768], text → [199, 768], with masks."""
    if seg.audio_blob is not None:
        audio, amask = pad_features(blob.load_tensor(seg.audio_blob), AUDIO_FRAMES, "audio")
    else:
        wave = seg.load_waveform()
        if drop_silence:
            wave = remove_silence(wave)
        padded, valid = pad_or_truncate_audio(wave)
        audio = stub_encode_audio(padded, stub_seed)
        amask = leading_mask(audio_frames_valid(valid), AUDIO_FRAMES)
    if seg.text_blob is not None:
        text, tmask = pad_features(blob.load_tensor(seg.text_blob), MAX_TOKENS, "text")
    else:
        tokens, valid = pad_or_truncate_tokens(seg.transcript or "")
        text = stub_encode_text(tokens, stub_seed)
        tmask = leading_mask(valid, MAX_TOKENS)
    return SegmentFeatures(audio, amask, text, tmask)


def load_examples(records: Iterable[CallRecord], stub_seed: int = 0, drop_silence: bool = False,
                  compact: bool = True) -> list[CallExample]:
    out = []
    for rec in records:
        segs = [ingest_segment(s, stub_seed, drop_silence) for s in rec.segments]
        if compact:
            segs = [s.compact() for s in segs]
        out.append(CallExample(rec.call_id, rec.label, segs, rec.variant))
    return out


# -- manifest I/O ----------------------------------------------------------------------

def _resolve(base: Path, p: Optional[str]) -> Optional[str]:
    if p is None:
        return None
    q = Path(p)
    return str(q if q.is_absolute() else base / q)


def _relative(base: Path, p: Optional[str]) -> Optional[str]:
    if p is None:
        return None
    try:
        return Path(p).resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return str(Path(p).resolve())


def _check_files(rec: CallRecord) -> list[str]:
    tag = f"call {rec.call_id}"
    problems = []
    for s in rec.segments:
        for path, what, max_rows in ((s.audio_blob, "audio", AUDIO_FRAMES), (s.text_blob, "text", MAX_TOKENS)):
            if path is None:
                continue
            if not Path(path).exists():
                problems.append(f"{tag} segment {s.index}: missing {what} blob {path}")
                continue
            try:
                shape = blob.peek_shape(path)
            except ValidationError as exc:
                problems.append(f"{tag} segment {s.index}: bad {what} blob {path}: {exc}")
                continue
            if len(shape) != 2 or shape[1] != FEATURE_DIM or not 1 <= shape[0] <= max_rows:
                problems.append(f"{tag} segment {s.index}: {what} blob shape {shape} violates [<={max_rows} x {FEATURE_DIM}]")
        if s.wav_path is not None:
            if not Path(s.wav_path).exists():
                problems.append(f"{tag} segment {s.index}: missing wav {s.wav_path}")
                continue
            try:
                ch, width, sr = wav_header(s.wav_path)
            except (wavlib.Error, EOFError) as exc:
                problems.append(f"{tag} segment {s.index}: unreadable wav {s.wav_path}: {exc}")
                continue
            if (ch, width, sr) != (1, 2, SAMPLE_RATE):
                problems.append(f"{tag} segment {s.index}: wav must be mono 16-bit {SAMPLE_RATE} Hz, "
                                f"got {ch} ch / {8 * width} bit / {sr} Hz")
    return problems


def _record_from_json(obj: dict, base: Path) -> CallRecord:
    segments = [
        SegmentRecord(
            index=int(s["index"]),
            transcript=s.get("transcript"),
            salesperson_text=s.get("salesperson_text"),
            customer_text=s.get("customer_text"),
            wav_path=_resolve(base, s.get("wav")),
            audio_blob=_resolve(base, s.get("audio_features")),
            text_blob=_resolve(base, s.get("text_features")),
        )
        for s in obj["segments"]
    ]
    return CallRecord(
        call_id=str(obj["call_id"]),
        segments=segments,
        label=obj.get("label"),
        domain=obj.get("domain"),
        split=obj.get("split", "train"),
        variant=obj.get("variant", "orig"),
    )


def load_manifest(path, check_files: bool = True) -> list[CallRecord]:
    """Parse and validate a manifest; every problem is reported in one ValidationError."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"manifest {path} does not exist")
    base = path.parent
    records, problems, seen = [], [], set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = _record_from_json(json.loads(line), base)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            problems.append(f"line {lineno}: malformed record ({exc})")
            continue
        if rec.key in seen:
            problems.append(f"call {rec.call_id}: duplicate record for variant {rec.variant!r}")
        seen.add(rec.key)
        problems.extend(validate_record(rec))
        if check_files:
            problems.extend(_check_files(rec))
        records.append(rec)
    if problems:
        raise ValidationError(f"{path}: {len(problems)} problem(s)", problems)
    return records


def record_to_json(rec: CallRecord, base: Path) -> dict:
    segs = []
    for s in rec.segments:
        d = {"index": s.index}
        for key, val in (("transcript", s.transcript), ("salesperson_text", s.salesperson_text),
                         ("customer_text", s.customer_text)):
            if val is not None:
                d[key] = val
        for key, val in (("wav", s.wav_path), ("audio_features", s.audio_blob), ("text_features", s.text_blob)):
            if val is not None:
                d[key] = _relative(base, val)
        segs.append(d)
    out = {"call_id": rec.call_id, "variant": rec.variant, "label": rec.label, "domain": rec.domain,
           "split": rec.split, "segments": segs}
    return {k: v for k, v in out.items() if v is not None}


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def write_manifest(records: Sequence[CallRecord], path, wav_dir: str = "wav") -> list[CallRecord]:
    """Write records; in-memory waveforms are saved as WAV files under ``wav_dir``.

    Returns the records as they now exist on disk (waveforms replaced by paths).
    """
    path = Path(path)
    base = path.parent
    base.mkdir(parents=True, exist_ok=True)
    problems = [p for r in records for p in validate_record(r)]
    if problems:
        raise ValidationError("refusing to write invalid records", problems)
    written, lines = [], []
    for rec in records:
        segs = []
        for s in rec.segments:
            if s.waveform is not None:
                out_dir = base / wav_dir
                out_dir.mkdir(parents=True, exist_ok=True)
                wav_path = out_dir / f"{_safe(rec.call_id)}_{_safe(rec.variant)}_{s.index}.wav"
                write_wav(wav_path, s.waveform)
                s = dataclasses.replace(s, wav_path=str(wav_path), waveform=None)
            segs.append(s)
        rec = dataclasses.replace(rec, segments=segs)
        written.append(rec)
        lines.append(json.dumps(record_to_json(rec, base), ensure_ascii=False, sort_keys=True))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return written


def manifest_digest(records: Sequence[CallRecord]) -> str:
    """SHA-256 over record metadata and the bytes of every referenced payload."""
    h = hashlib.sha256()
    for rec in records:
        meta = dataclasses.asdict(rec)
        for s in meta["segments"]:
            s.pop("waveform", None)
            for key in ("wav_path", "audio_blob", "text_blob"):
                if s[key] is not None:
                    s[key] = Path(s[key]).name
        h.update(json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8"))
        for s in rec.segments:
            if s.waveform is not None:
                h.update(np.ascontiguousarray(s.waveform, dtype="<f8").tobytes())
            for p in (s.wav_path, s.audio_blob, s.text_blob):
                if p is not None:
                    h.update(Path(p).read_bytes())
    return h.hexdigest()


# -- synthetic data ----------------------------------------------------------------------

SYNTH_VOCAB = "的是不了在人有我他这中大来上个国到说们为子和你地出道也时年"


def balanced_labels(n_calls: int, rng: np.random.Generator) -> list[str]:
    labels = [LABELS[i % 5] for i in range(n_calls)]
    return [labels[i] for i in rng.permutation(n_calls)]


def synth_dataset(
    out_dir,
    n_calls: int = 16,
    segments_per_call: int = 3,
    class_signal_strength: float = 1.0,
    seed: int = 0,
    audio_frames: int = 24,
    text_tokens: int = 8,
    split: str = "train",
    mode: str = "features",
    id_prefix: str = "c",
    prototype_seed: int = 0,
) -> tuple[Path, list[CallRecord]]:
    """Generate a labelled toy corpus with planted class evidence.

    In ``features`` mode each segment gets audio [audio_frames, 768] and text
    [text_tokens, 768] blobs of unit Gaussian noise plus
    ``class_signal_strength`` times a prototype that depends on the class and
    the segment position. In ``raw`` mode segments are short 8 kHz tones with
    class-dependent pitch and transcripts drawn from a class-dependent
    vocabulary slice. Labels are balanced across A-E. Prototypes come from
    ``prototype_seed`` alone, so corpora drawn with different ``seed`` values
    share their class evidence and can serve as held-out splits for each other.
    """
    if n_calls < 5:
        raise ValidationError("n_calls must be at least 5 so every class can appear")
    if mode not in ("features", "raw"):
        raise ValueError("mode must be 'features' or 'raw'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = generator(seed, "synth", "labels")
    labels = balanced_labels(n_calls, rng)
    proto = generator(prototype_seed, "synth", "prototypes")
    audio_proto = proto.normal(size=(5, segments_per_call, FEATURE_DIM))
    text_proto = proto.normal(size=(5, segments_per_call, FEATURE_DIM))
    records = []
    width = max(4, len(str(n_calls)))
    for i, label in enumerate(labels):
        call_id = f"{id_prefix}{i:0{width}d}"
        c = label_index(label)
        r = generator(seed, "synth", call_id)
        segs = []
        for j in range(segments_per_call):
            if mode == "features":
                audio = r.normal(size=(audio_frames, FEATURE_DIM)) + class_signal_strength * audio_proto[c, j]
                text = r.normal(size=(text_tokens, FEATURE_DIM)) + class_signal_strength * text_proto[c, j]
                feat = out_dir / "features"
                feat.mkdir(exist_ok=True)
                ap = feat / f"{call_id}_{j + 1}.audio.tblob"
                tp = feat / f"{call_id}_{j + 1}.text.tblob"
                blob.save_tensor(ap, audio.astype(np.float32))
                blob.save_tensor(tp, text.astype(np.float32))
                segs.append(SegmentRecord(index=j + 1, audio_blob=str(ap), text_blob=str(tp)))
            else:
                n = int(SAMPLE_RATE * r.uniform(1.0, 2.0))
                t = np.arange(n) / SAMPLE_RATE
                freq = 150.0 + 50.0 * c * class_signal_strength + 10.0 * j
                tone = 0.3 * np.sin(2 * np.pi * freq * t) + 0.02 * r.normal(size=n)
                vocab = SYNTH_VOCAB[c * 6 : c * 6 + 6] if class_signal_strength > 0 else SYNTH_VOCAB
                text = "".join(r.choice(list(vocab), size=text_tokens))
                segs.append(SegmentRecord(index=j + 1, transcript=text, waveform=tone))
        records.append(CallRecord(call_id, segs, label, DOMAINS[i % 3], split))
    manifest = out_dir / "manifest.jsonl"
    records = write_manifest(records, manifest)
    return manifest, records
