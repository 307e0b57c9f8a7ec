"""Waveform and transcript augmentation, and policy-driven training-set expansion."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataio import SAMPLE_RATE, CallRecord
from .errors import ValidationError
from .rng import generator

WINDOW_S = 0.025  # 200 samples at 8 kHz


@dataclass
class AugmentPolicy:
    noise_sigma: float = 0.005
    speed_factors: tuple = (0.9, 1.1)
    mask_rate: float = 0.05
    mask_max_width: int = 400
    homophone_prob: float = 0.10
    audio_multiplicity: int = 2
    text_multiplicity: int = 1
    seed: int = 0
    # call_id -> (audio_multiplicity, text_multiplicity)
    per_record: dict = field(default_factory=dict)

    def __post_init__(self):
        self.speed_factors = tuple(float(f) for f in self.speed_factors)
        problems = []
        if self.noise_sigma < 0:
            problems.append("noise_sigma must be >= 0")
        if not self.speed_factors or any(not 0.5 <= f <= 2.0 for f in self.speed_factors):
            problems.append("speed_factors must be nonempty and within [0.5, 2.0]")
        if not 0.0 <= self.mask_rate <= 1.0:
            problems.append("mask_rate must be in [0, 1]")
        if self.mask_max_width < 1:
            problems.append("mask_max_width must be >= 1")
        if not 0.0 <= self.homophone_prob <= 1.0:
            problems.append("homophone_prob must be in [0, 1]")
        mults = [(self.audio_multiplicity, self.text_multiplicity), *self.per_record.values()]
        if any(a < 0 or t < 0 for a, t in mults):
            problems.append("multiplicities must be >= 0")
        if problems:
            raise ValidationError("invalid augmentation policy", problems)

    def multiplicity(self, call_id: str) -> tuple[int, int]:
        return tuple(self.per_record.get(call_id, (self.audio_multiplicity, self.text_multiplicity)))


# -- homophones -------------------------------------------------------------------

@dataclass
class HomophoneDict:
    entries: Mapping[str, tuple]

    def __post_init__(self):
        clean, problems = {}, []
        for ch, alts in self.entries.items():
            alts = tuple(alts)
            if not alts:
                problems.append(f"{ch!r} has no homophones")
            elif alts == (ch,):
                problems.append(f"{ch!r} lists only itself")
            clean[ch] = alts
        if problems:
            raise ValidationError("invalid homophone dictionary", problems)
        self.entries = clean

    def __contains__(self, ch) -> bool:
        return ch in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def parse(cls, text: str) -> "HomophoneDict":
        """One entry per line: ``char<TAB>alt1 alt2 ...``; '#' starts a comment."""
        entries = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            head, _, rest = line.partition("\t")
            if not rest:
                raise ValidationError(f"homophone line {lineno}: expected 'char<TAB>homophones'")
            entries[head] = tuple(rest.split())
        return cls(entries)

    @classmethod
    def load(cls, path) -> "HomophoneDict":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def sample(cls) -> "HomophoneDict":
        text = resources.files("msmtfn").joinpath("data/homophones_sample.tsv").read_text(encoding="utf-8")
        return cls.parse(text)


# -- operators ----------------------------------------------------------------------

def gaussian_noise(wave, sigma: float, rng: np.random.Generator) -> np.ndarray:
    wave = np.asarray(wave, dtype=np.float64)
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if not np.isfinite(wave).all():
        raise ValueError("waveform contains non-finite samples")
    if sigma == 0:
        return wave.copy()
    return wave + rng.normal(0.0, sigma, size=wave.shape)


def _hann(n: int) -> np.ndarray:
    # periodic Hann; copies spaced n/2 apart sum to exactly 1
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def speed_perturb(wave, factor: float, rng: Optional[np.random.Generator] = None,
                  sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Change tempo by ``factor`` without shifting pitch (WSOLA time stretch).

    The output has round(len / factor) samples. Frames of 25 ms are laid down
    at a 50 % hop; each frame is taken from within one hop of its nominal
    input position, at the offset whose waveform best continues the previous
    frame. ``rng`` is accepted for a uniform operator signature and unused.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"speed factor must be within [0.5, 2.0], got {factor}")
    if factor == 1.0:
        return wave.copy()
    n_out = int(round(wave.size / factor))
    win = max(2, int(round(WINDOW_S * sample_rate)))
    win -= win % 2
    hop = win // 2
    tol = hop
    window = _hann(win)
    n_frames = -(-n_out // hop) + 1
    reach = int(np.ceil((n_frames + 1) * hop * factor)) + 2 * tol + 2 * win
    xp = np.concatenate([np.zeros(tol), wave, np.zeros(max(0, reach - wave.size))])
    out = np.zeros(n_frames * hop + win)
    prev = 0
    for k in range(n_frames):
        nominal = int(round(k * hop * factor))
        if k == 0:
            pos = 0
        else:
            template = xp[prev + hop + tol : prev + hop + tol + win]
            region = xp[nominal : nominal + 2 * tol + win]
            corr = np.correlate(region, template, mode="valid")
            pos = nominal - tol + int(np.argmax(corr))
        out[k * hop : k * hop + win] += xp[pos + tol : pos + tol + win] * window
        prev = pos
    return out[:n_out]


def random_mask(wave, mask_rate: float, max_width: int, rng: np.random.Generator) -> np.ndarray:
    """Zero non-overlapping spans of at most ``max_width`` samples.

    Spans are added until at least mask_rate × len samples are zero or no free
    position remains.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError(f"mask rate must be in [0, 1], got {mask_rate}")
    if max_width < 1:
        raise ValueError("max_width must be >= 1")
    out = wave.copy()
    n = wave.size
    target = int(np.ceil(mask_rate * n))
    gaps = [(0, n)] if n else []  # free [start, end) intervals
    zeroed = 0
    while zeroed < target and gaps:
        width = int(rng.integers(1, max_width + 1))
        longest = max(e - s for s, e in gaps)
        width = min(width, longest)
        placements = np.array([max(0, (e - s) - width + 1) for s, e in gaps])
        choice = int(rng.integers(placements.sum()))
        g = int(np.searchsorted(np.cumsum(placements), choice, side="right"))
        s, e = gaps[g]
        start = s + choice - int(placements[:g].sum())
        out[start : start + width] = 0.0
        zeroed += width
        pieces = [(a, b) for a, b in ((s, start), (start + width, e)) if b > a]
        gaps[g : g + 1] = pieces
    return out


def homophone_substitute(chars, homophones: HomophoneDict, p: float, rng: np.random.Generator):
    """Replace each dictionary character with probability ``p`` by a random homophone."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"substitution probability must be in [0, 1], got {p}")
    out = []
    for ch in chars:
        alts = homophones.entries.get(ch)
        if alts is not None and p > 0 and rng.random() < p:
            ch = alts[int(rng.integers(len(alts)))]
        out.append(ch)
    return "".join(out) if isinstance(chars, str) else out


# -- pipelines ------------------------------------------------------------------------

def augment_waveform(wave, policy: AugmentPolicy, *keys) -> np.ndarray:
    """Noise, then speed change, then masking; each operator has its own stream."""
    factor = policy.speed_factors[int(generator(policy.seed, *keys, "speed-choice").integers(len(policy.speed_factors)))]
    out = gaussian_noise(wave, policy.noise_sigma, generator(policy.seed, *keys, "noise"))
    out = speed_perturb(out, factor)
    return random_mask(out, policy.mask_rate, policy.mask_max_width, generator(policy.seed, *keys, "mask"))


def expand_dataset(records: Sequence[CallRecord], policy: AugmentPolicy,
                   homophones: Optional[HomophoneDict] = None) -> list[CallRecord]:
    """Originals plus augmented copies of each training call.

    Audio copies carry augmented in-memory waveforms and the original text;
    text copies carry substituted transcripts and the original audio. Copies
    keep the call id, label and segment order and differ only in ``variant``.
    """
    bad = [r.call_id for r in records if r.split != "train"]
    if bad:
        raise ValidationError("augmentation is only allowed on the training split",
                              [f"call {c} is not in the train split" for c in bad])
    if homophones is None:
        homophones = HomophoneDict.sample()
    out = []
    for rec in records:
        out.append(rec)
        n_audio, n_text = policy.multiplicity(rec.call_id)
        for k in range(1, n_audio + 1):
            segs = []
            for s in rec.segments:
                if not s.has_audio_wave():
                    raise ValidationError(f"call {rec.call_id} segment {s.index}: audio augmentation needs a waveform")
                wave = augment_waveform(s.load_waveform(), policy, rec.call_id, s.index, "audio", k)
                segs.append(dataclasses.replace(s, waveform=wave, wav_path=None))
            out.append(dataclasses.replace(rec, segments=segs, variant=f"audio-{k}"))
        for k in range(1, n_text + 1):
            segs = []
            for s in rec.segments:
                if s.transcript is None:
                    raise ValidationError(f"call {rec.call_id} segment {s.index}: text augmentation needs a transcript")
                sub = homophone_substitute(s.transcript, homophones, policy.homophone_prob,
                                           generator(policy.seed, rec.call_id, s.index, "text", k))
                segs.append(dataclasses.replace(s, transcript=sub, text_blob=None))
            out.append(dataclasses.replace(rec, segments=segs, variant=f"text-{k}"))
    return out
