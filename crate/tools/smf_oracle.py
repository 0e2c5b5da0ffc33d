#!/usr/bin/env python3
"""Independent Standard MIDI File decoder used to cross-check the Rust reader.

Decodes formats 0 and 1 directly from the SMF specification and applies the
same note policy the library documents: per-track per-pitch FIFO matching,
velocity-0 note-ons as note-offs, unmatched note-ons closed at end of track,
and tick normalization to 480 ticks per beat with round-half-up.

Prints one line per note (onset, pitch, duration, velocity, tab-separated)
in (onset, pitch) stable order, plus header comments with the note count,
dangling count, and a positional checksum. With --summary, prints only the
header comments.
"""

import argparse
import sys
from pathlib import Path

TICKS_PER_BEAT = 480


class Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def u8(self):
        b = self.data[self.pos]
        self.pos += 1
        return b

    def u16(self):
        return (self.u8() << 8) | self.u8()

    def u32(self):
        return (self.u16() << 16) | self.u16()

    def take(self, n):
        s = self.data[self.pos : self.pos + n]
        if len(s) != n:
            raise ValueError("unexpected end of data")
        self.pos += n
        return s

    def vlq(self):
        value = 0
        for _ in range(4):
            b = self.u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise ValueError("VLQ longer than 4 bytes")


def rescale(value, ppq):
    return (value * TICKS_PER_BEAT + ppq // 2) // ppq


def decode_track(body):
    """Returns (notes in close order as (onset, pitch, dur, vel) source ticks,
    dangling count)."""
    r = Reader(body)
    tick = 0
    running = None
    open_notes = [[] for _ in range(128)]  # per pitch: (onset, velocity) FIFO
    notes = []
    dangling = 0

    def close(pitch):
        if open_notes[pitch]:
            onset, vel = open_notes[pitch].pop(0)
            notes.append((onset, pitch, max(tick - onset, 1), vel))

    while r.pos < len(r.data):
        tick += r.vlq()
        first = r.u8()
        if first & 0x80:
            status = first
            if first < 0xF0:
                running = first
        else:
            r.pos -= 1
            if running is None:
                raise ValueError("data byte with no running status")
            status = running
        kind = status & 0xF0
        if kind == 0x80:
            pitch = r.u8() & 0x7F
            r.u8()
            close(pitch)
        elif kind == 0x90:
            pitch = r.u8() & 0x7F
            vel = r.u8() & 0x7F
            if vel == 0:
                close(pitch)
            else:
                open_notes[pitch].append((tick, vel))
        elif kind in (0xA0, 0xB0, 0xE0):
            r.take(2)
        elif kind in (0xC0, 0xD0):
            r.take(1)
        elif status in (0xF0, 0xF7):
            r.take(r.vlq())
        elif status == 0xFF:
            meta_type = r.u8()
            r.take(r.vlq())
            if meta_type == 0x2F:
                break
        else:
            raise ValueError(f"unsupported status {status:#x}")

    for pitch in range(128):
        while open_notes[pitch]:
            onset, vel = open_notes[pitch].pop(0)
            dangling += 1
            notes.append((onset, pitch, max(tick - onset, 1), vel))
    return notes, dangling


def decode_file(path):
    r = Reader(Path(path).read_bytes())
    if r.take(4) != b"MThd":
        raise ValueError("missing MThd")
    header_len = r.u32()
    fmt = r.u16()
    if fmt > 1:
        raise ValueError(f"unsupported format {fmt}")
    r.u16()  # declared track count
    division = r.u16()
    if division & 0x8000 or division == 0:
        raise ValueError(f"unsupported division {division:#x}")
    r.take(header_len - 6)

    raw = []
    dangling = 0
    while len(r.data) - r.pos >= 8:
        kind = r.take(4)
        body = r.take(r.u32())
        if kind == b"MTrk":
            notes, d = decode_track(body)
            raw += notes
            dangling += d

    notes = [
        (rescale(onset, division), pitch, max(rescale(dur, division), 1), vel)
        for onset, pitch, dur, vel in raw
    ]
    notes.sort(key=lambda n: (n[0], n[1]))  # python sort is stable
    return notes, dangling


def checksum(notes):
    """Order-sensitive digest over all note fields (FNV-1a over the tuples)."""
    h = 0xCBF29CE484222325
    for fields in notes:
        for v in fields:
            h = ((h ^ v) * 0x100000001B3) % (1 << 64)
    return h


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("files", nargs="+", type=Path)
    ap.add_argument("--summary", action="store_true", help="header comments only")
    args = ap.parse_args()
    for path in args.files:
        notes, dangling = decode_file(path)
        print(f"# file {path.name}")
        print(f"# notes {len(notes)}")
        print(f"# dangling {dangling}")
        print(f"# checksum {checksum(notes):#018x}")
        if not args.summary:
            for onset, pitch, dur, vel in notes:
                print(f"{onset}\t{pitch}\t{dur}\t{vel}")


if __name__ == "__main__":
    sys.exit(main())
