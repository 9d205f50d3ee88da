"""On-disk dataset format: one binary file per split plus a JSON manifest.

Record layout (all little-endian):

    u32   payload length in bytes
    payload:
        u64  record seed
        f64  sample SNR in dB
        f64  sample rate in Hz
        f64  receiver center frequency in Hz
        u16  label count
        per label:
            u32 begin bin, u32 end bin, u8 modulation code,
            f64 center offset Hz, f64 bandwidth Hz, f64 linear power
        u32  sample count L
        L x (f32 I, f32 Q) interleaved
    u32   CRC32 of the payload

The manifest records the format version, generation config, per-split
record counts and byte offsets, and the bin mapping statement.  Bytes are
fully determined by (config, seed).
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .ctensor import IQFrame
from .errors import CorruptRecord, SplitMissing, VersionMismatch
from .siggen import GenConfig, SampleRecord, SegmentLabel, synth_record

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
MOD_CODES = {"BPSK": 0, "QPSK": 1, "PSK8": 2, "QAM8": 3, "QAM16": 4, "GMSK": 5, "FSK2": 6}
MOD_NAMES = {v: k for k, v in MOD_CODES.items()}

_HEAD = struct.Struct("<QdddH")
_LABEL = struct.Struct("<IIBddd")
_U32 = struct.Struct("<I")

BIN_MAPPING_NOTE = ("bin = floor((f_offset_hz + sample_rate/2) / bin_width); "
                    "bin 0 is -fs/2, bin L/2 is the receiver center frequency")


def record_to_bytes(rec: SampleRecord) -> bytes:
    samples = np.ascontiguousarray(rec.frame.samples.astype("<c8"))
    parts = [_HEAD.pack(int(rec.seed) & (2 ** 64 - 1), float(rec.sample_snr_db),
                        float(rec.frame.sample_rate_hz), float(rec.frame.center_freq_hz),
                        len(rec.labels))]
    for lab in rec.labels:
        parts.append(_LABEL.pack(lab.begin_bin, lab.end_bin, MOD_CODES[lab.modulation.upper()],
                                 lab.center_offset_hz, lab.bandwidth_hz, lab.power))
    parts.append(_U32.pack(len(samples)))
    parts.append(samples.view("<f4").tobytes())
    payload = b"".join(parts)
    return _U32.pack(len(payload)) + payload + _U32.pack(zlib.crc32(payload))


def record_from_bytes(buf: bytes, offset: int = 0) -> tuple[SampleRecord, int]:
    """Parse one record starting at `offset`; returns (record, next offset)."""
    try:
        (plen,) = _U32.unpack_from(buf, offset)
        payload = buf[offset + 4:offset + 4 + plen]
        if len(payload) != plen:
            raise CorruptRecord("truncated record payload")
        (crc,) = _U32.unpack_from(buf, offset + 4 + plen)
    except struct.error as e:
        raise CorruptRecord("truncated record") from e
    if zlib.crc32(payload) != crc:
        raise CorruptRecord("record checksum mismatch")
    seed, snr, fs, fc, n_labels = _HEAD.unpack_from(payload, 0)
    pos = _HEAD.size
    labels = []
    for _ in range(n_labels):
        b, e, code, off_hz, bw, power = _LABEL.unpack_from(payload, pos)
        pos += _LABEL.size
        labels.append(SegmentLabel(b, e, MOD_NAMES[code], off_hz, bw, power))
    (n_samples,) = _U32.unpack_from(payload, pos)
    pos += 4
    want = n_samples * 8
    if len(payload) - pos != want:
        raise CorruptRecord(f"sample block is {len(payload) - pos} bytes, expected {want}")
    samples = np.frombuffer(payload, dtype="<f4", count=2 * n_samples, offset=pos)
    frame = IQFrame(samples.view("<c8").copy(), fs, fc)
    return SampleRecord(frame, labels, snr, seed), offset + 8 + plen


def generate_dataset(config: GenConfig, out_dir, threads: int | None = None) -> dict:
    """Synthesize and write a dataset directory; returns the manifest."""
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    if threads is None:
        threads = max(1, int(os.environ.get("SPECSEG_THREADS", "1")))
    counts = config.split_counts()
    manifest = {
        "format_version": FORMAT_VERSION,
        "count": config.count,
        "input_bins": config.input_bins,
        "sample_rate_hz": config.sample_rate_hz,
        "snr_db_range": [config.snr_db_min, config.snr_db_max],
        "signal_count_range": [config.n_signals_min, config.n_signals_max],
        "bandwidths_hz": list(config.bandwidths_hz),
        "guard_hz": config.guard_hz,
        "modulations": list(config.modulations),
        "seed": config.seed,
        "split_fractions": list(config.split_fractions),
        "bin_mapping": BIN_MAPPING_NOTE,
        "splits": {},
    }
    start = 0
    for split in SPLITS:
        n = counts[split]
        indices = range(start, start + n)
        start += n
        path = os.path.join(out_dir, f"{split}.bin")
        offsets = []
        with open(path, "wb") as f:
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    blobs = pool.map(lambda i: record_to_bytes(synth_record(config, i)),
                                     indices, chunksize=8)
                    for blob in blobs:
                        offsets.append(f.tell())
                        f.write(blob)
            else:
                for i in indices:
                    offsets.append(f.tell())
                    f.write(record_to_bytes(synth_record(config, i)))
        manifest["splits"][split] = {"file": f"{split}.bin", "count": n, "offsets": offsets}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest


class Dataset:
    """Read access to a dataset directory written by `generate_dataset`."""

    def __init__(self, root):
        self.root = root
        manifest_path = os.path.join(root, "manifest.json")
        if not os.path.exists(manifest_path):
            raise SplitMissing(f"no manifest.json under {root}")
        with open(manifest_path, encoding="utf-8") as f:
            self.manifest = json.load(f)
        version = self.manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"dataset format version {version}, supported {FORMAT_VERSION}")

    @property
    def input_bins(self) -> int:
        return int(self.manifest["input_bins"])

    @property
    def sample_rate_hz(self) -> float:
        return float(self.manifest["sample_rate_hz"])

    def splits(self):
        return list(self.manifest["splits"])

    def count(self, split: str) -> int:
        return int(self._split_entry(split)["count"])

    def _split_entry(self, split: str) -> dict:
        try:
            return self.manifest["splits"][split]
        except KeyError:
            raise SplitMissing(f"split {split!r} not in {self.splits()}") from None

    def iterate(self, split: str):
        """Yield SampleRecords of one split in stored order."""
        entry = self._split_entry(split)
        path = os.path.join(self.root, entry["file"])
        if not os.path.exists(path):
            raise SplitMissing(f"missing split file {path}")
        with open(path, "rb") as f:
            buf = f.read()
        for off in entry["offsets"]:
            rec, _ = record_from_bytes(buf, off)
            yield rec

    def load(self, split: str) -> list[SampleRecord]:
        return list(self.iterate(split))


def dataset_config_from_manifest(manifest: dict) -> GenConfig:
    return GenConfig(
        count=manifest["count"],
        input_bins=manifest["input_bins"],
        sample_rate_hz=manifest["sample_rate_hz"],
        snr_db_min=manifest["snr_db_range"][0],
        snr_db_max=manifest["snr_db_range"][1],
        n_signals_min=manifest["signal_count_range"][0],
        n_signals_max=manifest["signal_count_range"][1],
        bandwidths_hz=tuple(manifest["bandwidths_hz"]),
        guard_hz=manifest["guard_hz"],
        modulations=tuple(manifest["modulations"]),
        seed=manifest["seed"],
        split_fractions=tuple(manifest["split_fractions"]),
    )
