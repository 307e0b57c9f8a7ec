"""From raw segments to fixed-size feature matrices and a validated manifest.

Audio is padded or cut to 40 s at 8 kHz and mapped to 999 frames; transcripts
are padded or cut to 199 tokens. The stub encoders stand in for pretrained
speech and text encoders with matching output shapes.

Run: python3 demos/07_data_pipeline.py
"""
import tempfile
from pathlib import Path

import numpy as np

from msmtfn import blob
from msmtfn.dataio import SegmentRecord, ingest_segment, load_manifest, synth_dataset
from msmtfn.errors import ValidationError

rng = np.random.default_rng(0)
seg = SegmentRecord(1, transcript="您好，请问需要保险吗", waveform=0.1 * rng.normal(size=48_000))
feat = ingest_segment(seg)
print("audio", feat.audio.shape, "valid frames", int(feat.audio_mask.sum()))
print("text ", feat.text.shape, "valid tokens", int(feat.text_mask.sum()))

with tempfile.TemporaryDirectory() as d:
    manifest, records = synth_dataset(d, n_calls=5, segments_per_call=2)
    print("manifest line:", Path(manifest).read_text().splitlines()[0][:100], "...")
    print("loaded", len(load_manifest(manifest)), "calls")

    # Corrupt one feature file; loading reports every violation with its call id.
    blob.save_tensor(Path(d) / "features" / f"{records[0].call_id}_1.text.tblob", np.zeros((250, 768)))
    try:
        load_manifest(manifest)
    except ValidationError as exc:
        print("rejected:", exc.problems)
