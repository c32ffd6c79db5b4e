"""Sensor-to-server acquisition chain simulation.

Implements the digital microphone side (2nd-order delta-sigma PDM at
3.072 MHz), the server-side four-stage decimation to 32-bit PCM at 48 kHz
(CIC -> half-band FIR -> half-band FIR -> droop-compensation FIR), and the
UDP-style packet framing with resequencing and gap reporting.
"""

from __future__ import annotations

import json
import struct
import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal as sig

from .errors import ProtocolError

PDM_RATE = 3_072_000
PCM_RATE = 48_000
DECIMATION = PDM_RATE // PCM_RATE  # 64

CIC_R = 16
CIC_ORDER = 5
HB1_TAPS = 31
HB2_TAPS = 67
COMP_TAPS = 31

CHANNELS_PER_FPGA = 200
DEFAULT_FRAMES_PER_PACKET = 512
PACKET_MAGIC = b"SIAM"
# magic, fpga_id, sequence, sample_timestamp, status_flags, channels, frames
PACKET_HEADER = struct.Struct("<4sHIQHHH")
STATUS_SYNC_ERROR = 0x0001

PCM_FULL_SCALE_CODE = 2**31 - 1


@dataclass
class PdmStream:
    """Packed 1-bit pulse-density stream for one channel."""

    bits: np.ndarray  # packed uint8, np.packbits order
    n_bits: int
    rate: int = PDM_RATE
    channel_id: int = 0
    clipped: bool = False

    @classmethod
    def from_bits(cls, bits: np.ndarray, channel_id: int = 0, clipped: bool = False) -> "PdmStream":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(bits=np.packbits(bits), n_bits=len(bits), channel_id=channel_id, clipped=clipped)

    def unpacked(self) -> np.ndarray:
        return np.unpackbits(self.bits, count=self.n_bits)

    @property
    def duration(self) -> float:
        return self.n_bits / self.rate


@dataclass
class PcmBlock:
    """Decimated PCM output; full scale maps to 2**31 - 1."""

    samples: np.ndarray  # int32
    rate: int = PCM_RATE
    group_delay: float = 0.0  # in output samples, constant for the chain
    full_scale: float = 1.0  # Pa value of digital full scale

    def to_float(self) -> np.ndarray:
        return self.samples.astype(np.float64) * (self.full_scale / PCM_FULL_SCALE_CODE)


@dataclass
class DaqPacket:
    fpga_id: int
    sequence: int
    sample_timestamp: int  # PDM ticks of the first frame in this packet
    payload: bytes  # channel-major packed bits
    channels: int = CHANNELS_PER_FPGA
    frames: int = DEFAULT_FRAMES_PER_PACKET
    status_flags: int = 0

    def pack(self) -> bytes:
        header = PACKET_HEADER.pack(
            PACKET_MAGIC,
            self.fpga_id,
            self.sequence,
            self.sample_timestamp,
            self.status_flags,
            self.channels,
            self.frames,
        )
        return header + self.payload

    @classmethod
    def unpack(cls, buf: bytes) -> "DaqPacket":
        magic, fpga_id, seq, ts, status, channels, frames = PACKET_HEADER.unpack_from(buf)
        if magic != PACKET_MAGIC:
            raise ProtocolError(f"bad packet magic {magic!r}")
        stride = (frames + 7) // 8
        payload = buf[PACKET_HEADER.size : PACKET_HEADER.size + channels * stride]
        if len(payload) != channels * stride:
            raise ProtocolError("truncated packet payload")
        return cls(
            fpga_id=fpga_id,
            sequence=seq,
            sample_timestamp=ts,
            payload=payload,
            channels=channels,
            frames=frames,
            status_flags=status,
        )


@dataclass
class GapRecord:
    """Missing packet range, in sequence numbers and PDM sample indices."""

    fpga_id: int
    first_sequence: int
    last_sequence: int
    start_sample: int
    end_sample: int  # exclusive


def pdm_modulate(waveform: np.ndarray, full_scale: float = 1.0) -> PdmStream:
    """Encode a 3.072 MHz-sampled waveform as a 1-bit PDM stream.

    A 2nd-order delta-sigma loop (CIFB, feedback coefficients 1 and 2) with a
    single-bit quantizer. Inputs beyond full scale are clipped and flagged.
    """
    x = np.asarray(waveform, dtype=np.float64) / float(full_scale)
    clipped = bool((np.abs(x) > 1.0).any())
    if clipped:
        x = np.clip(x, -1.0, 1.0)
    bits = np.empty(len(x), dtype=np.uint8)
    s1 = 0.0
    s2 = 0.0
    y = 1.0
    for i in range(len(x)):
        s1 += x[i] - y
        s2 += s1 - 2.0 * y
        y = 1.0 if s2 >= 0.0 else -1.0
        bits[i] = 1 if y > 0.0 else 0
    return PdmStream.from_bits(bits, clipped=clipped)


@lru_cache(maxsize=1)
def _decimation_filters():
    """The three FIR stages behind the CIC (designed once, deterministic)."""
    # 192 kHz -> 96 kHz; images of the final band fall at 72..120 kHz
    hb1 = sig.remez(HB1_TAPS, [0, 24_000, 72_000, 96_000], [1, 0], weight=[1, 10], fs=192_000)
    # 96 kHz -> 48 kHz; transition 20..28 kHz centered on 24 kHz
    hb2 = sig.remez(HB2_TAPS, [0, 20_000, 28_000, 48_000], [1, 0], weight=[1, 10], fs=96_000)
    # droop equalizer at the output rate
    freqs = np.linspace(0.0, 24_000.0, 241)
    gains = 1.0 / np.abs(cic_response(freqs))
    comp = sig.firwin2(COMP_TAPS, freqs / 24_000.0, gains)
    return hb1, hb2, comp


def cic_response(frequency) -> np.ndarray:
    """Normalized magnitude of the CIC stage at the PDM input rate."""
    f = np.atleast_1d(np.asarray(frequency, dtype=float))
    num = np.sin(np.pi * f * CIC_R / PDM_RATE)
    den = CIC_R * np.sin(np.pi * f / PDM_RATE)
    out = np.ones_like(f)
    nz = f != 0.0
    out[nz] = (num[nz] / den[nz]) ** CIC_ORDER
    return out


def chain_frequency_response(frequency) -> np.ndarray:
    """Complex passband response of the complete decimation chain."""
    hb1, hb2, comp = _decimation_filters()
    f = np.atleast_1d(np.asarray(frequency, dtype=float))
    h = cic_response(f).astype(complex)
    _, h1 = sig.freqz(hb1, worN=2 * np.pi * f / 192_000)
    _, h2 = sig.freqz(hb2, worN=2 * np.pi * f / 96_000)
    _, hc = sig.freqz(comp, worN=2 * np.pi * f / 48_000)
    return h * h1 * h2 * hc


def decimation_group_delay() -> float:
    """Constant chain latency in output (48 kHz) samples.

    The CIC contributes N (R - 1) / 2 input samples minus the R - 1 samples
    the decimator pick (first full window) advances the stream by.
    """
    cic = (CIC_ORDER * (CIC_R - 1) / 2.0 - (CIC_R - 1)) / DECIMATION
    return cic + (HB1_TAPS - 1) / 2.0 / 4.0 + (HB2_TAPS - 1) / 2.0 / 2.0 + (COMP_TAPS - 1) / 2.0


def decimation_warmup_bits() -> int:
    """Input samples consumed before the chain output is settled."""
    return CIC_ORDER * CIC_R + HB1_TAPS * 16 + HB2_TAPS * 32 + COMP_TAPS * 64


def pdm_decimate(stream: PdmStream, full_scale: float = 1.0) -> PcmBlock:
    """Convert a PDM stream to 48 kHz PCM through the four-stage chain.

    Stage ratios are 16 (CIC), 2, 2, and 1 (compensator). The CIC runs in
    exact modular integer arithmetic; bits are mapped to +-1 so the chain is
    DC-free for a balanced stream.
    """
    if stream.rate != PDM_RATE:
        raise ValueError(f"expected {PDM_RATE} Hz PDM input, got {stream.rate}")
    if stream.n_bits < decimation_warmup_bits():
        raise ValueError(
            f"stream of {stream.n_bits} bits is shorter than the filter warm-up "
            f"({decimation_warmup_bits()} bits)"
        )
    hb1, hb2, comp = _decimation_filters()
    x = stream.unpacked().astype(np.int64) * 2 - 1
    for _ in range(CIC_ORDER):
        x = np.cumsum(x)
    x = x[CIC_R - 1 :: CIC_R]
    for _ in range(CIC_ORDER):
        x = np.diff(x, prepend=np.int64(0))
    y = x.astype(np.float64) / float(CIC_R**CIC_ORDER)
    y = sig.lfilter(hb1, 1.0, y)[::2]
    y = sig.lfilter(hb2, 1.0, y)[::2]
    y = sig.lfilter(comp, 1.0, y)
    codes = np.clip(np.rint(y * PCM_FULL_SCALE_CODE), -(2**31), PCM_FULL_SCALE_CODE)
    return PcmBlock(
        samples=codes.astype(np.int32),
        rate=PCM_RATE,
        group_delay=decimation_group_delay(),
        full_scale=float(full_scale),
    )


def packetize(
    streams: list[PdmStream],
    fpga_id: int = 0,
    frames_per_packet: int = DEFAULT_FRAMES_PER_PACKET,
) -> list[DaqPacket]:
    """Frame 200 equal-length PDM streams into channel-major packets."""
    if len(streams) != CHANNELS_PER_FPGA:
        raise ValueError(f"expected {CHANNELS_PER_FPGA} channels, got {len(streams)}")
    n_bits = streams[0].n_bits
    if any(s.n_bits != n_bits for s in streams):
        raise ValueError("all channels must have equal length")
    if frames_per_packet < 1:
        raise ValueError("frames_per_packet must be >= 1")
    bits = np.stack([s.unpacked() for s in streams])  # (200, n_bits)
    packets = []
    seq = 0
    for start in range(0, n_bits, frames_per_packet):
        frames = min(frames_per_packet, n_bits - start)
        chunk = bits[:, start : start + frames]
        payload = np.packbits(chunk, axis=1).tobytes()
        packets.append(
            DaqPacket(
                fpga_id=fpga_id,
                sequence=seq,
                sample_timestamp=start,
                payload=payload,
                channels=CHANNELS_PER_FPGA,
                frames=frames,
            )
        )
        seq += 1
    return packets


def depacketize(packets: list[DaqPacket], allow_gaps: bool = False):
    """Reassemble packets into per-channel streams.

    Packets are resequenced by (fpga_id, sequence); duplicates raise, and
    missing sequences either raise or are zero-filled and reported. Returns
    (streams_by_fpga, gap_records).
    """
    by_fpga: dict[int, list[DaqPacket]] = {}
    for p in packets:
        by_fpga.setdefault(p.fpga_id, []).append(p)

    streams_out: dict[int, list[PdmStream]] = {}
    gaps: list[GapRecord] = []
    for fpga_id in sorted(by_fpga):
        plist = sorted(by_fpga[fpga_id], key=lambda p: p.sequence)
        seqs = [p.sequence for p in plist]
        for a, b in zip(seqs, seqs[1:]):
            if a == b:
                raise ProtocolError(f"duplicate sequence {a} for FPGA {fpga_id}")
        total = plist[-1].sample_timestamp + plist[-1].frames
        channels = plist[0].channels
        bits = np.zeros((channels, total), dtype=np.uint8)
        # sequences start at 0 per capture, so a late first packet is a gap
        expected_seq = 0
        expected_ts = 0
        for p in plist:
            if p.sequence != expected_seq:
                gap = GapRecord(
                    fpga_id=fpga_id,
                    first_sequence=expected_seq,
                    last_sequence=p.sequence - 1,
                    start_sample=expected_ts,
                    end_sample=p.sample_timestamp,
                )
                if not allow_gaps:
                    raise ProtocolError(
                        f"missing sequences {gap.first_sequence}..{gap.last_sequence} "
                        f"(samples {gap.start_sample}..{gap.end_sample}) for FPGA {fpga_id}"
                    )
                gaps.append(gap)
            stride = (p.frames + 7) // 8
            packed = np.frombuffer(p.payload, dtype=np.uint8).reshape(channels, stride)
            chunk = np.unpackbits(packed, axis=1, count=p.frames)
            bits[:, p.sample_timestamp : p.sample_timestamp + p.frames] = chunk
            expected_seq = p.sequence + 1
            expected_ts = p.sample_timestamp + p.frames
        streams_out[fpga_id] = [
            PdmStream.from_bits(bits[c], channel_id=fpga_id * CHANNELS_PER_FPGA + c)
            for c in range(channels)
        ]
    return streams_out, gaps


def stream_data_rate(channels: int, pdm_rate: float = PDM_RATE, overhead_fraction: float = 0.0) -> float:
    """Continuous link rate in Mbit/s for 1-bit streams plus framing overhead."""
    if channels < 1:
        raise ValueError("channels must be >= 1")
    return channels * pdm_rate * (1.0 + overhead_fraction) / 1e6


def phase_skew_budget(skew_seconds: float, frequency: float) -> float:
    """Worst-case inter-channel phase error in degrees for a clock skew."""
    if skew_seconds < 0:
        raise ValueError("skew must be >= 0")
    return 360.0 * skew_seconds * frequency


def write_capture(path, packets: list[DaqPacket]):
    """Raw capture file: little-endian length-prefixed DaqPackets."""
    with open(path, "wb") as fh:
        for p in packets:
            raw = p.pack()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def read_capture(path) -> list[DaqPacket]:
    packets = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            (n,) = struct.unpack("<I", head)
            packets.append(DaqPacket.unpack(fh.read(n)))
    return packets


def write_pcm_raw(path_base, blocks: list[PcmBlock]):
    """Raw int32 interleaved PCM plus a JSON sidecar with chain metadata."""
    data = np.stack([b.samples for b in blocks], axis=1)
    raw_path = f"{path_base}.pcm"
    data.astype("<i4").tofile(raw_path)
    sidecar = {
        "rate": blocks[0].rate,
        "channels": len(blocks),
        "samples": int(data.shape[0]),
        "group_delay": blocks[0].group_delay,
        "full_scale": blocks[0].full_scale,
        "dtype": "int32_le",
        "interleaved": True,
    }
    with open(f"{path_base}.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True)
    return raw_path


def write_pcm_wav(path, blocks: list[PcmBlock]):
    """Multichannel 32-bit integer PCM WAV."""
    data = np.stack([b.samples for b in blocks], axis=1).astype("<i4")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(data.shape[1])
        fh.setsampwidth(4)
        fh.setframerate(blocks[0].rate)
        fh.writeframes(data.tobytes())
