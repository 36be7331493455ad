"""Streaming message readers for JSON Lines and plain-text corpora."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

from .geo import GeoPoint, valid_point

log = logging.getLogger(__name__)

FORMATS = ("jsonl", "lines")
BLOCK = 1 << 22

_json = json.JSONDecoder()


class Message(NamedTuple):
    id: str
    text: str
    lang: str | None = None
    geo: GeoPoint | None = None


@dataclass
class ReadCounts:
    """Bookkeeping shared by a reader and its filters.

    ``read == emitted + skipped + filtered`` holds once a stream is drained.
    """

    read: int = 0
    skipped: int = 0
    filtered: int = 0

    @property
    def emitted(self) -> int:
        return self.read - self.skipped - self.filtered

    def __iadd__(self, other: ReadCounts) -> ReadCounts:
        self.read += other.read
        self.skipped += other.skipped
        self.filtered += other.filtered
        return self


def _coord(value) -> float | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError("coordinate is not a number")
    return float(value)


def parse_jsonl_record(line: str | bytes) -> Message:
    """Map one JSON object to a Message; raises ValueError on a bad record."""
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    rec, end = _json.raw_decode(line)
    if end != len(line) and not line[end:].isspace():
        raise ValueError("trailing data after JSON object")
    if type(rec) is not dict:
        raise ValueError("record is not a JSON object")
    text = rec.get("text")
    if type(text) is not str:
        raise ValueError("record has no string 'text'")
    rid = rec.get("id")
    if type(rid) is not str:
        if rid is None or isinstance(rid, (dict, list)):
            raise ValueError("record has no usable 'id'")
        rid = str(rid)
    lang = rec.get("lang")
    if lang is not None and type(lang) is not str:
        raise ValueError("'lang' is not a string")
    lat = rec.get("lat")
    lon = rec.get("lon")
    if lat is None and lon is None:
        return Message(rid, text, lang)
    lat, lon = _coord(lat), _coord(lon)
    if lat is None or lon is None or not valid_point(lat, lon):
        raise ValueError("incomplete or out-of-range coordinates")
    return Message(rid, text, lang, GeoPoint(lat, lon))


def iter_byte_range(path, start: int = 0, end: int | None = None) -> Iterator[bytes]:
    """Yield the lines of bytes [start, end) with terminators removed.

    Both offsets must sit on line boundaries (see :func:`shard_offsets`).
    """
    with open(path, "rb") as f:
        f.seek(start)
        remaining = None if end is None else end - start
        tail = b""
        while True:
            n = BLOCK if remaining is None else min(BLOCK, remaining)
            block = f.read(n) if n > 0 else b""
            if not block:
                break
            if remaining is not None:
                remaining -= len(block)
            lines = (tail + block).split(b"\n")
            tail = lines.pop()
            for line in lines:
                yield line[:-1] if line.endswith(b"\r") else line
        if tail:
            yield tail[:-1] if tail.endswith(b"\r") else tail


def read_messages(
    path,
    format: str = "jsonl",
    counts: ReadCounts | None = None,
    start: int = 0,
    end: int | None = None,
    first_line_no: int = 1,
) -> Iterator[Message]:
    """Stream messages from ``path``.

    ``jsonl`` records carry id, text, lang and optional flat lat/lon; bad
    records are skipped and counted.  ``lines`` turns every line into a
    message whose id is its 1-based line number.  ``start``/``end`` restrict
    reading to one shard of the file, with ``first_line_no`` the line number
    of the shard's first line.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown corpus format {format!r}")
    if not os.access(path, os.R_OK) or os.path.isdir(path):
        raise OSError(f"cannot read corpus file {path}")
    if counts is None:
        counts = ReadCounts()
    return _read(path, format, counts, start, end, first_line_no)


def _read(path, format, counts, start, end, first_line_no) -> Iterator[Message]:
    lines = iter_byte_range(path, start, end)
    if format == "lines":
        for line_no, raw in enumerate(lines, start=first_line_no):
            counts.read += 1
            yield Message(str(line_no), raw.decode("utf-8", errors="replace"))
        return
    for line_no, raw in enumerate(lines, start=first_line_no):
        if not raw or raw.isspace():
            continue
        counts.read += 1
        try:
            msg = parse_jsonl_record(raw)
        except (ValueError, UnicodeDecodeError) as exc:
            counts.skipped += 1
            log.debug("%s:%d skipped: %s", path, line_no, exc)
            continue
        yield msg


def filter_lang(
    messages: Iterable[Message], code: str, counts: ReadCounts | None = None
) -> Iterator[Message]:
    """Pass only messages whose lang is exactly ``code``."""
    for m in messages:
        if m.lang == code:
            yield m
        elif counts is not None:
            counts.filtered += 1


def shard_offsets(path, n_shards: int) -> list[tuple[int, int, int]]:
    """Split a file into up to ``n_shards`` line-aligned byte ranges.

    Returns ``(start, end, first_line_no)`` triples covering the file in
    order.  Line numbers are counted here so that ``lines``-format ids stay
    global whatever the shard count.
    """
    size = os.path.getsize(path)
    n_shards = max(1, min(n_shards, size))
    cuts = [0]
    with open(path, "rb") as f:
        for k in range(1, n_shards):
            target = size * k // n_shards
            if target <= cuts[-1]:
                continue
            f.seek(target - 1)
            f.readline()  # finish the line containing target - 1
            pos = f.tell()
            if cuts[-1] < pos < size:
                cuts.append(pos)
        cuts.append(size)
        out = []
        line_no = 1
        for a, b in zip(cuts, cuts[1:]):
            out.append((a, b, line_no))
            f.seek(a)
            remaining = b - a
            while remaining > 0:
                chunk = f.read(min(remaining, 1 << 20))
                remaining -= len(chunk)
                line_no += chunk.count(b"\n")
    if not out:
        out.append((0, 0, 1))
    return out
