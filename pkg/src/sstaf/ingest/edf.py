"""EDF / EDF+ reader and header writer (16-bit samples only)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dsp import Recording

ANNOTATION_LABEL = "EDF Annotations"

_FIXED = [  # (name, width)
    ("version", 8), ("patient_id", 80), ("recording_id", 80), ("start_date", 8),
    ("start_time", 8), ("header_bytes", 8), ("reserved", 44), ("n_records", 8),
    ("record_duration", 8), ("n_signals", 4),
]
_PER_SIGNAL = [
    ("label", 16), ("transducer", 80), ("physical_dimension", 8), ("physical_min", 8),
    ("physical_max", 8), ("digital_min", 8), ("digital_max", 8), ("prefiltering", 80),
    ("samples_per_record", 8), ("reserved", 32),
]


class EdfParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class SignalHeader:
    label: str
    transducer: str = ""
    physical_dimension: str = "uV"
    physical_min: float = -1.0
    physical_max: float = 1.0
    digital_min: int = -32768
    digital_max: int = 32767
    prefiltering: str = ""
    samples_per_record: int = 1
    reserved: str = ""

    @property
    def scale(self) -> float:
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)

    def to_physical(self, digital: np.ndarray) -> np.ndarray:
        return self.physical_min + (digital.astype(np.float64) - self.digital_min) * self.scale

    def to_digital(self, physical: np.ndarray) -> np.ndarray:
        d = np.round((np.asarray(physical, dtype=np.float64) - self.physical_min) / self.scale + self.digital_min)
        return np.clip(d, self.digital_min, self.digital_max).astype("<i2")


@dataclass
class EdfHeader:
    version: str = "0"
    patient_id: str = ""
    recording_id: str = ""
    start_date: str = "01.01.00"
    start_time: str = "00.00.00"
    reserved: str = ""
    n_records: int = 0
    record_duration: float = 1.0
    signals: list[SignalHeader] = field(default_factory=list)

    @property
    def n_signals(self) -> int:
        return len(self.signals)

    @property
    def header_bytes(self) -> int:
        return 256 * (1 + self.n_signals)

    @property
    def record_bytes(self) -> int:
        return 2 * sum(s.samples_per_record for s in self.signals)

    @property
    def is_edf_plus(self) -> bool:
        return self.reserved.startswith("EDF+")


@dataclass(frozen=True)
class AnnotationEvent:
    onset: float
    duration: float
    code: str

    def __post_init__(self):
        if self.onset < 0 or self.duration < 0:
            raise ValueError(f"annotation needs non-negative onset/duration, got {self}")


def _field(buf: bytes, start: int, width: int) -> str:
    try:
        return buf[start:start + width].decode("ascii").rstrip(" ")
    except UnicodeDecodeError:
        raise EdfParseError("non-ASCII header field", start) from None


def _num(text: str, kind, offset: int, name: str):
    try:
        value = kind(text.strip())
    except ValueError:
        raise EdfParseError(f"header field {name!r} is not numeric: {text!r}", offset) from None
    if not np.isfinite(value):
        raise EdfParseError(f"header field {name!r} is not finite: {text!r}", offset)
    return value


def parse_header(buf: bytes) -> EdfHeader:
    if len(buf) < 256:
        raise EdfParseError(f"file too short for the 256-byte fixed header ({len(buf)} bytes)", len(buf))
    pos = 0
    raw = {}
    offsets = {}
    for name, width in _FIXED:
        raw[name] = _field(buf, pos, width)
        offsets[name] = pos
        pos += width
    ns = _num(raw["n_signals"], int, offsets["n_signals"], "n_signals")
    if ns < 1:
        raise EdfParseError(f"signal count must be >= 1, got {ns}", offsets["n_signals"])
    hbytes = _num(raw["header_bytes"], int, offsets["header_bytes"], "header_bytes")
    if hbytes != 256 * (1 + ns):
        raise EdfParseError(f"header length {hbytes} != 256*(1+{ns})", offsets["header_bytes"])
    if len(buf) < hbytes:
        raise EdfParseError(f"truncated signal header: need {hbytes} bytes", len(buf))

    cols: dict[str, list] = {}
    for name, width in _PER_SIGNAL:
        vals = []
        for i in range(ns):
            text = _field(buf, pos, width)
            if name in ("physical_min", "physical_max"):
                text = _num(text, float, pos, name)
            elif name in ("digital_min", "digital_max", "samples_per_record"):
                text = _num(text, int, pos, name)
            vals.append(text)
            pos += width
        cols[name] = vals
    signals = [SignalHeader(**{k: cols[k][i] for k in cols}) for i in range(ns)]
    for i, s in enumerate(signals):
        if s.digital_max <= s.digital_min:
            raise EdfParseError(f"signal {i} ({s.label!r}): digital max <= digital min", 256)
        if s.samples_per_record < 1:
            raise EdfParseError(f"signal {i} ({s.label!r}): samples per record < 1", 256)

    duration = _num(raw["record_duration"], float, offsets["record_duration"], "record_duration")
    n_records = _num(raw["n_records"], int, offsets["n_records"], "n_records")
    hdr = EdfHeader(
        version=raw["version"], patient_id=raw["patient_id"], recording_id=raw["recording_id"],
        start_date=raw["start_date"], start_time=raw["start_time"], reserved=raw["reserved"],
        n_records=n_records, record_duration=duration, signals=signals,
    )
    if duration <= 0 and not (hdr.is_edf_plus and duration == 0):
        raise EdfParseError(f"record duration must be > 0, got {duration}", offsets["record_duration"])
    return hdr


def _fmt_num(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if float(value).is_integer():
        return str(int(value))
    text = repr(float(value))
    if len(text) > 8:
        text = f"{value:.8g}"[:8]
    return text


def _pad(text: str, width: int) -> bytes:
    b = text.encode("ascii")
    if len(b) > width:
        raise ValueError(f"header value {text!r} exceeds field width {width}")
    return b.ljust(width, b" ")


def serialize_header(hdr: EdfHeader) -> bytes:
    """Inverse of :func:`parse_header` for canonically formatted headers."""
    fixed = {
        "version": hdr.version, "patient_id": hdr.patient_id, "recording_id": hdr.recording_id,
        "start_date": hdr.start_date, "start_time": hdr.start_time,
        "header_bytes": str(hdr.header_bytes), "reserved": hdr.reserved,
        "n_records": str(hdr.n_records), "record_duration": _fmt_num(hdr.record_duration),
        "n_signals": str(hdr.n_signals),
    }
    out = [_pad(fixed[name], width) for name, width in _FIXED]
    for name, width in _PER_SIGNAL:
        for s in hdr.signals:
            v = getattr(s, name)
            out.append(_pad(v if isinstance(v, str) else _fmt_num(v), width))
    return b"".join(out)


def parse_tal(raw: bytes, base_offset: int = 0) -> list[AnnotationEvent]:
    """Decode time-stamped annotation lists from one annotation-signal block."""
    events = []
    pos = 0
    while pos < len(raw):
        if raw[pos] == 0:
            pos += 1
            continue
        end = raw.find(b"\x14\x00", pos)
        if end < 0 and raw.endswith(b"\x14") and len(raw) - pos > 1:
            end = len(raw) - 1
        if end < 0:
            raise EdfParseError("unterminated TAL", base_offset + pos)
        chunk = raw[pos:end + 1]
        try:
            text = chunk.decode("utf-8")
        except UnicodeDecodeError:
            raise EdfParseError("TAL is not valid UTF-8", base_offset + pos) from None
        head, _, rest = text.partition("\x14")
        onset_txt, _, dur_txt = head.partition("\x15")
        try:
            onset = float(onset_txt)
            duration = float(dur_txt) if dur_txt else 0.0
        except ValueError:
            raise EdfParseError(f"malformed TAL timing {head!r}", base_offset + pos) from None
        if not onset_txt or onset_txt[0] not in "+-":
            raise EdfParseError(f"TAL onset must carry a sign: {onset_txt!r}", base_offset + pos)
        for code in rest.split("\x14"):
            if code:
                if onset < 0 or duration < 0:
                    raise EdfParseError(f"negative TAL timing {head!r}", base_offset + pos)
                events.append(AnnotationEvent(onset, duration, code))
        pos = end + 2
    return events


def parse_edf(buf: bytes) -> tuple[EdfHeader, Recording, list[AnnotationEvent]]:
    """Parse an EDF/EDF+ byte string.

    Returns the header, a :class:`Recording` of the ordinary signals in
    physical units, and the events from any ``EDF Annotations`` signal
    (sorted by onset).
    """
    buf = bytes(buf)
    hdr = parse_header(buf)
    body = len(buf) - hdr.header_bytes
    rb = hdr.record_bytes
    n_rec = hdr.n_records
    if n_rec == -1:
        if body % rb:
            raise EdfParseError("data section is not a whole number of records", hdr.header_bytes + body - body % rb)
        n_rec = body // rb
        hdr.n_records = n_rec
    elif n_rec < 0:
        raise EdfParseError(f"invalid record count {n_rec}", 236)
    if body < n_rec * rb:
        raise EdfParseError(
            f"truncated data: {n_rec} records of {rb} bytes need {n_rec * rb}, have {body}", len(buf)
        )
    if body > n_rec * rb:
        raise EdfParseError(
            f"inconsistent record sizes: {body - n_rec * rb} trailing bytes", hdr.header_bytes + n_rec * rb
        )

    data_idx = [i for i, s in enumerate(hdr.signals) if s.label != ANNOTATION_LABEL]
    ann_idx = [i for i, s in enumerate(hdr.signals) if s.label == ANNOTATION_LABEL]
    spr = np.array([s.samples_per_record for s in hdr.signals])
    starts = np.concatenate([[0], np.cumsum(spr)])
    samples = np.frombuffer(buf, dtype="<i2", offset=hdr.header_bytes, count=n_rec * rb // 2)
    samples = samples.reshape(n_rec, rb // 2)

    if data_idx:
        rates = {hdr.signals[i].samples_per_record for i in data_idx}
        if len(rates) != 1:
            raise EdfParseError(f"signals have differing samples per record {sorted(rates)}", 256)
        n = rates.pop()
        cols = []
        for i in data_idx:
            dig = samples[:, starts[i]:starts[i + 1]].reshape(-1)
            cols.append(hdr.signals[i].to_physical(dig))
        data = np.stack(cols, axis=1)
        fs = n / hdr.record_duration if hdr.record_duration > 0 else 0.0
    else:
        data = np.zeros((0, 0))
        fs = 0.0
    if fs <= 0:
        raise EdfParseError("recording has no data signals or zero record duration", 244)
    rec = Recording(data, fs, [hdr.signals[i].label for i in data_idx])

    events: list[AnnotationEvent] = []
    for i in ann_idx:
        for r in range(n_rec):
            block = samples[r, starts[i]:starts[i + 1]].tobytes()
            offset = hdr.header_bytes + r * rb + 2 * starts[i]
            events.extend(parse_tal(block, offset))
    events.sort(key=lambda e: e.onset)
    return hdr, rec, events


def read_edf(path) -> tuple[EdfHeader, Recording, list[AnnotationEvent]]:
    with open(path, "rb") as fh:
        return parse_edf(fh.read())


def encode_tal(events, record_onset: float | None = None) -> bytes:
    """Encode events (plus an optional timekeeping TAL) as EDF+ TAL bytes."""
    out = b""
    if record_onset is not None:
        out += f"+{_fmt_num(record_onset)}\x14\x14\x00".encode()
    for e in events:
        dur = f"\x15{_fmt_num(e.duration)}" if e.duration else ""
        out += f"+{_fmt_num(e.onset)}{dur}\x14{e.code}\x14\x00".encode()
    return out


def write_edf(hdr: EdfHeader, digital: list[np.ndarray], annotations: bytes | None = None) -> bytes:
    """Assemble an EDF byte string from per-signal digital sample arrays.

    ``digital`` holds one int16 array per non-annotation signal; if the
    header declares an ``EDF Annotations`` signal, ``annotations`` is placed
    in its first record (zero-padded) and later records stay empty.
    """
    records = []
    it = iter(digital)
    per_signal = []
    for s in hdr.signals:
        if s.label == ANNOTATION_LABEL:
            per_signal.append(None)
        else:
            arr = np.asarray(next(it), dtype="<i2")
            if arr.size != hdr.n_records * s.samples_per_record:
                raise ValueError(f"signal {s.label!r}: expected {hdr.n_records * s.samples_per_record} samples")
            per_signal.append(arr.reshape(hdr.n_records, s.samples_per_record))
    for r in range(hdr.n_records):
        for s, arr in zip(hdr.signals, per_signal):
            if arr is None:
                block = (annotations or b"") if r == 0 else encode_tal([], record_onset=r * hdr.record_duration)
                width = 2 * s.samples_per_record
                if len(block) > width:
                    raise ValueError("annotation block exceeds signal capacity")
                records.append(block.ljust(width, b"\x00"))
            else:
                records.append(arr[r].tobytes())
    return serialize_header(hdr) + b"".join(records)
