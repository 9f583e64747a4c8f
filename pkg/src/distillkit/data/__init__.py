from distillkit.data.batching import Batch, batch_at, batches_per_epoch, collate, make_batches, read_manifest
from distillkit.data.synth import parse_synth_flag, synth_corpus, synth_item
from distillkit.data.wav import SAMPLE_RATE, Waveform, parse_wav, read_wav, wav_bytes, write_wav

__all__ = [
    "SAMPLE_RATE", "Batch", "Waveform", "batch_at", "batches_per_epoch", "collate", "make_batches",
    "parse_synth_flag", "parse_wav", "read_manifest", "read_wav", "synth_corpus", "synth_item",
    "wav_bytes", "write_wav",
]
