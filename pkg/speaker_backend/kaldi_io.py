"""
Readers and writers for the file formats around an embedding extractor:
binary Kaldi archives (float32 vectors and matrices) with their scp indexes,
trial lists, score files, RTTM, VAD label files, utt2spk, Kaldi segments and
the binary PLDA model file.
"""

import struct
import sys
from contextlib import ExitStack, contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Dict, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
import pydantic

from .errors import (
    DimensionError,
    DuplicateKeyError,
    FormatError,
    ParseError,
)
from .logger import logger
from .models import (
    Diarization,
    EmbeddingSet,
    ScoreList,
    Segment,
    SpeakerMap,
    Trial,
    TrialLabel,
    TrialList,
)

PathLike = Union[str, Path]

BINARY_MARKER = b"\0B"
VECTOR_TOKEN = b"FV "
MATRIX_TOKEN = b"FM "
INT32_SIZE = b"\x04"
PLDA_MAGIC = b"WSPLDA1"
MEAN_KEY = "mean"

_LABELS = {
    "1": TrialLabel.target,
    "target": TrialLabel.target,
    "0": TrialLabel.nontarget,
    "nontarget": TrialLabel.nontarget,
}


@dataclass(frozen=True)
class ArkEntry:
    key: str
    payload: np.ndarray

    @property
    def is_vector(self) -> bool:
        return self.payload.ndim == 1


@contextmanager
def _open_output(path: PathLike, mode: str = "w"):
    """
    Open a file for writing, "-" means stdout
    """
    if str(path) == "-":
        stream = sys.stdout.buffer if "b" in mode else sys.stdout
        yield stream
        stream.flush()
    else:
        with open(path, mode, **({} if "b" in mode else {"encoding": "utf8"})) as f:
            yield f


def _iter_lines(path: PathLike) -> Iterator[Tuple[int, List[str]]]:
    """
    Yield whitespace-split fields of every nonblank line with 1-based line numbers
    """
    with open(path, encoding="utf8") as f:
        for number, line in enumerate(f, start=1):
            fields = line.split()
            if fields:
                yield number, fields


# Binary archives


def _read_exact(fd: IO[bytes], size: int, what: str) -> bytes:
    offset = fd.tell()
    data = fd.read(size)
    if len(data) != size:
        raise FormatError(f"Truncated archive while reading {what}", offset)
    return data


def _read_int32(fd: IO[bytes], what: str) -> int:
    offset = fd.tell()
    size = _read_exact(fd, 1, f"{what} size marker")
    if size != INT32_SIZE:
        raise FormatError(f"Expected int32 size marker before {what}", offset)
    (value,) = struct.unpack("<i", _read_exact(fd, 4, what))
    if value <= 0:
        raise FormatError(f"Non-positive {what}: {value}", offset + 1)
    return value


def _read_key(fd: IO[bytes]) -> Optional[str]:
    """
    Read the key of the next archive entry, consuming the separating space
    :return: Key, or None at the end of the archive
    """
    offset = fd.tell()
    chars = bytearray()
    while True:
        ch = fd.read(1)
        if not ch:
            if chars:
                raise FormatError("Archive ends inside a key", offset)
            return None
        if ch == b" ":
            break
        if ch.isspace() or ch == b"\0":
            raise FormatError("Malformed key", offset)
        chars += ch
    if not chars:
        raise FormatError("Empty key", offset)
    return chars.decode("utf8")


def read_payload(fd: IO[bytes]) -> np.ndarray:
    """
    Read a binary float32 vector or matrix starting at the current position,
    which must point at the binary marker right after "key "
    :param fd: Binary file handle
    :return: 1-D vector or 2-D matrix of float32
    """
    offset = fd.tell()
    if fd.read(2) != BINARY_MARKER:
        raise FormatError("Bad binary marker, expected '\\0B'", offset)

    offset = fd.tell()
    token = fd.read(3)
    if token == VECTOR_TOKEN:
        dim = _read_int32(fd, "vector dimension")
        data = _read_exact(fd, 4 * dim, "vector data")
        return np.frombuffer(data, dtype="<f4").astype(np.float32)
    if token == MATRIX_TOKEN:
        rows = _read_int32(fd, "matrix rows")
        cols = _read_int32(fd, "matrix cols")
        data = _read_exact(fd, 4 * rows * cols, "matrix data")
        return np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(rows, cols)
    raise FormatError(f"Unsupported payload type {token!r}", offset)


def iter_ark(path: PathLike) -> Iterator[ArkEntry]:
    """
    Iterate over the entries of a binary archive in file order
    :param path: Path to the .ark file
    :return: Generator of ArkEntry
    """
    with open(path, "rb") as fd:
        while True:
            key = _read_key(fd)
            if key is None:
                return
            yield ArkEntry(key=key, payload=read_payload(fd))


def _to_embedding_set(entries: Iterable[Tuple[str, np.ndarray]]) -> EmbeddingSet:
    items: Dict[str, np.ndarray] = {}
    dim = 0
    for key, payload in entries:
        if payload.ndim != 1:
            raise DimensionError(f"Entry {key} is a matrix, expected a vector")
        if key in items:
            raise DuplicateKeyError(f"Duplicate key: {key}")
        if not items:
            dim = payload.shape[0]
        elif payload.shape[0] != dim:
            raise DimensionError(
                f"Entry {key} has dimension {payload.shape[0]}, expected {dim}"
            )
        items[key] = payload
    return EmbeddingSet(dim=dim, entries=items)


def read_ark(path: PathLike) -> EmbeddingSet:
    """
    Read an archive of embedding vectors
    :param path: Path to the .ark file
    :return: EmbeddingSet in file order, dim is 0 for an empty archive
    """
    return _to_embedding_set((e.key, e.payload) for e in iter_ark(path))


def _encode_payload(payload: np.ndarray) -> bytes:
    data = np.ascontiguousarray(payload, dtype="<f4")
    if data.ndim == 1:
        header = VECTOR_TOKEN + INT32_SIZE + struct.pack("<i", data.shape[0])
    elif data.ndim == 2:
        header = (
            MATRIX_TOKEN
            + INT32_SIZE
            + struct.pack("<i", data.shape[0])
            + INT32_SIZE
            + struct.pack("<i", data.shape[1])
        )
    else:
        raise DimensionError(f"Cannot write a payload with {data.ndim} dimensions")
    if 0 in data.shape:
        raise DimensionError("Cannot write an empty payload")
    return BINARY_MARKER + header + data.tobytes()


def write_ark(
    entries: Union[EmbeddingSet, Iterable[ArkEntry]],
    ark_path: PathLike,
    scp_path: Optional[PathLike] = None,
):
    """
    Write entries into a binary archive, optionally with an scp index whose
    offsets point at the binary marker of every entry
    :param entries: EmbeddingSet or ArkEntry items
    :param ark_path: Output archive
    :param scp_path: Output index, optional
    """
    if isinstance(entries, EmbeddingSet):
        items: Iterable[ArkEntry] = (
            ArkEntry(key=k, payload=v) for k, v in entries.entries.items()
        )
    else:
        items = entries

    with ExitStack() as stack:
        ark = stack.enter_context(open(ark_path, "wb"))
        scp = None
        if scp_path:
            scp = stack.enter_context(open(scp_path, "w", encoding="utf8"))
        for entry in items:
            ark.write(entry.key.encode("utf8") + b" ")
            offset = ark.tell()
            ark.write(_encode_payload(entry.payload))
            if scp:
                scp.write(f"{entry.key} {ark_path}:{offset}\n")


def read_scp(path: PathLike) -> List[Tuple[str, str, int]]:
    """
    Parse an scp index
    :param path: Path to the .scp file
    :return: List of (key, archive path, byte offset)
    """
    index = []
    for number, fields in _iter_lines(path):
        if len(fields) != 2:
            raise ParseError("Expected 'key ark_path:offset'", number)
        key, location = fields
        ark_path, sep, offset = location.rpartition(":")
        if not sep or not offset.isdigit():
            raise ParseError(f"Bad archive location {location!r}", number)
        index.append((key, ark_path, int(offset)))
    return index


def read_scp_embeddings(path: PathLike) -> EmbeddingSet:
    """
    Load the embeddings referenced by an scp index using random access
    :param path: Path to the .scp file
    :return: EmbeddingSet in scp order
    """
    with ExitStack() as stack:
        handles: Dict[str, IO[bytes]] = {}

        def _load(ark_path: str, offset: int) -> np.ndarray:
            if ark_path not in handles:
                handles[ark_path] = stack.enter_context(open(ark_path, "rb"))
            fd = handles[ark_path]
            fd.seek(offset)
            return read_payload(fd)

        return _to_embedding_set(
            (key, _load(ark, offset)) for key, ark, offset in read_scp(path)
        )


def load_embeddings(path: PathLike) -> EmbeddingSet:
    """
    Load embeddings from either an .scp index or an .ark archive
    """
    if Path(path).suffix == ".scp":
        return read_scp_embeddings(path)
    return read_ark(path)


# Trials and scores


def read_trials(path: PathLike) -> TrialList:
    """
    Read a trial list, lines are "enroll test [label]" with label one of
    1/0/target/nontarget
    :param path: Path to the trial list
    :return: TrialList, trials without a label are unknown
    """
    trials = []
    for number, fields in _iter_lines(path):
        if len(fields) not in (2, 3):
            raise ParseError(f"Expected 2 or 3 fields, got {len(fields)}", number)
        label = TrialLabel.unknown
        if len(fields) == 3:
            try:
                label = _LABELS[fields[2]]
            except KeyError:
                raise ParseError(f"Invalid trial label {fields[2]!r}", number)
        trials.append(Trial(enroll=fields[0], test=fields[1], label=label))
    return TrialList(trials=tuple(trials))


def write_trials(trials: TrialList, path: PathLike):
    with _open_output(path) as f:
        for trial in trials.trials:
            if trial.label == TrialLabel.unknown:
                f.write(f"{trial.enroll} {trial.test}\n")
            else:
                f.write(f"{trial.enroll} {trial.test} {trial.label.value}\n")


def read_scores(path: PathLike) -> ScoreList:
    pairs, values = [], []
    for number, fields in _iter_lines(path):
        if len(fields) != 3:
            raise ParseError(f"Expected 'enroll test score', got {fields}", number)
        try:
            value = float(fields[2])
        except ValueError:
            raise ParseError(f"Invalid score {fields[2]!r}", number)
        pairs.append((fields[0], fields[1]))
        values.append(value)
    try:
        return ScoreList.from_pairs(pairs, values)
    except pydantic.ValidationError as e:
        raise ParseError(f"Invalid score file {path}: {e}")


def write_scores(scores: ScoreList, path: PathLike):
    with _open_output(path) as f:
        for s in scores.scores:
            f.write(f"{s.enroll} {s.test} {s.score:.6f}\n")


# Speaker maps


def read_utt2spk(path: PathLike) -> SpeakerMap:
    mapping: Dict[str, str] = {}
    for number, fields in _iter_lines(path):
        if len(fields) != 2:
            raise ParseError("Expected 'utt spk'", number)
        if fields[0] in mapping:
            raise DuplicateKeyError(f"Duplicate utterance {fields[0]} on line {number}")
        mapping[fields[0]] = fields[1]
    return SpeakerMap(mapping=mapping)


def write_utt2spk(spk: SpeakerMap, path: PathLike):
    with _open_output(path) as f:
        for utt, speaker in spk.mapping.items():
            f.write(f"{utt} {speaker}\n")


# Segmentations


def _segment(number: int, **fields) -> Segment:
    try:
        return Segment(**fields)
    except pydantic.ValidationError as e:
        raise ParseError(str(e.errors()[0]["msg"]), number)


def read_rttm(path: PathLike) -> Diarization:
    """
    Read SPEAKER lines of an RTTM file, other line types and comments are
    ignored
    :param path: Path to the .rttm file
    :return: Diarization in file order
    """
    segments = []
    for number, fields in _iter_lines(path):
        if fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise ParseError("SPEAKER line needs at least 8 fields", number)
        try:
            start, duration = float(fields[3]), float(fields[4])
        except ValueError:
            raise ParseError("Invalid start or duration", number)
        if duration < 0:
            raise ParseError(f"Negative duration {duration}", number)
        if duration == 0:
            logger.warning("%s:%d: skipping zero-duration segment", path, number)
            continue
        segments.append(
            _segment(
                number,
                recording_id=fields[1],
                start=start,
                end=start + duration,
                speaker="" if fields[7] == "<NA>" else fields[7],
            )
        )
    return Diarization(segments=tuple(segments))


def write_rttm(diarization: Diarization, path: PathLike):
    """
    Write SPEAKER lines with millisecond precision, an empty speaker becomes
    <NA>. Segments shorter than 0.5 ms round to a zero duration and are
    skipped by read_rttm
    :param diarization: Segments to write
    :param path: Output .rttm file
    """
    with _open_output(path) as f:
        for s in diarization.segments:
            f.write(
                f"SPEAKER {s.recording_id} 1 {s.start:.3f} {s.duration:.3f} "
                f"<NA> <NA> {s.speaker or '<NA>'} <NA> <NA>\n"
            )


def read_lab(path: PathLike, recording_id: str) -> List[Segment]:
    """
    Read a VAD label file with "start end [label]" lines (seconds)
    :param path: Path to the .lab file
    :param recording_id: Recording the speech regions belong to
    :return: Speech segments with an empty speaker, sorted by start
    """
    segments = []
    for number, fields in _iter_lines(path):
        if len(fields) not in (2, 3):
            raise ParseError("Expected 'start end [label]'", number)
        try:
            start, end = float(fields[0]), float(fields[1])
        except ValueError:
            raise ParseError("Invalid start or end time", number)
        if end <= start:
            raise ParseError(f"End {end} is not after start {start}", number)
        segments.append(
            _segment(number, recording_id=recording_id, start=start, end=end)
        )
    return sorted(segments, key=lambda s: (s.start, s.end))


def read_segments(path: PathLike) -> List[Tuple[str, Segment]]:
    """
    Read a Kaldi segments file, lines are "key recording start end"
    """
    segments = []
    for number, fields in _iter_lines(path):
        if len(fields) != 4:
            raise ParseError("Expected 'key recording start end'", number)
        try:
            start, end = float(fields[2]), float(fields[3])
        except ValueError:
            raise ParseError("Invalid start or end time", number)
        segments.append(
            (fields[0], _segment(number, recording_id=fields[1], start=start, end=end))
        )
    return segments


def write_segments(segments: Iterable[Tuple[str, Segment]], path: PathLike):
    with _open_output(path) as f:
        for key, s in segments:
            f.write(f"{key} {s.recording_id} {s.start:.3f} {s.end:.3f}\n")


# Back-end models


def write_mean(mean: np.ndarray, path: PathLike):
    write_ark([ArkEntry(key=MEAN_KEY, payload=np.asarray(mean))], path)


def read_mean(path: PathLike) -> np.ndarray:
    entries = list(iter_ark(path))
    if len(entries) != 1 or not entries[0].is_vector:
        raise FormatError(f"{path} must hold exactly one mean vector")
    return entries[0].payload.astype(np.float64)


def write_plda(
    mu: np.ndarray, sigma_b: np.ndarray, sigma_w: np.ndarray, path: PathLike
):
    """
    Write a PLDA model: magic, int32 dimension, then mean, between and within
    covariances as little-endian float64, matrices row-major
    """
    dim = mu.shape[0]
    with open(path, "wb") as f:
        f.write(PLDA_MAGIC)
        f.write(struct.pack("<i", dim))
        for array in (mu, sigma_b, sigma_w):
            f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def read_plda(path: PathLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(len(PLDA_MAGIC)) != PLDA_MAGIC:
            raise FormatError("Bad PLDA model magic", 0)
        (dim,) = struct.unpack("<i", _read_exact(f, 4, "model dimension"))
        if dim <= 0:
            raise FormatError(f"Non-positive model dimension {dim}", len(PLDA_MAGIC))
        mu = np.frombuffer(_read_exact(f, 8 * dim, "mean"), dtype="<f8")
        shape = (dim, dim)
        sigma_b = np.frombuffer(_read_exact(f, 8 * dim * dim, "sigma_b"), dtype="<f8")
        sigma_w = np.frombuffer(_read_exact(f, 8 * dim * dim, "sigma_w"), dtype="<f8")
        if f.read(1):
            raise FormatError("Trailing bytes after PLDA model", f.tell() - 1)
    return (
        mu.astype(np.float64),
        sigma_b.reshape(shape).astype(np.float64),
        sigma_w.reshape(shape).astype(np.float64),
    )
