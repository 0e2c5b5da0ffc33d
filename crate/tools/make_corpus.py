#!/usr/bin/env python3
"""Generate the checked-in test corpus: synthetic multi-voice MIDI pieces.

Writes 22 deterministic pieces (520-900 notes each) covering format 0 and 1,
several tick resolutions, running status, velocity-0 note-offs, overlapping
voices, chords, and non-note events the reader must skip. Also writes a few
small edge-case fixtures used by the parser tests.

Usage: tools/make_corpus.py [--out tests/data/corpus] [--fixtures tests/data/fixtures]
"""

import argparse
import random
import struct
from pathlib import Path

MAJOR = [0, 2, 4, 5, 7, 9, 11]
MINOR = [0, 2, 3, 5, 7, 8, 10]
# Scale-degree roots of a few stock progressions.
PROGRESSIONS = [[0, 3, 4, 0], [0, 5, 3, 4], [0, 4, 5, 3], [0, 3, 0, 4]]


def vlq(value):
    out = bytearray([value & 0x7F])
    value >>= 7
    while value:
        out.insert(0, 0x80 | (value & 0x7F))
        value >>= 7
    return bytes(out)


def meta(delta, meta_type, body):
    return vlq(delta) + bytes([0xFF, meta_type]) + vlq(len(body)) + body


def track_chunk(body):
    return b"MTrk" + struct.pack(">I", len(body)) + body


def header_chunk(fmt, ntracks, ppq):
    return b"MThd" + struct.pack(">IHHH", 6, fmt, ntracks, ppq)


def encode_track(notes, rng, use_running_status, zero_vel_offs, decorate):
    """notes: list of (onset, pitch, duration, velocity) in source ticks."""
    events = []  # (tick, order, status, data1, data2)
    for onset, pitch, dur, vel in notes:
        events.append((onset, 1, 0x90, pitch, vel))
        if zero_vel_offs:
            events.append((onset + dur, 0, 0x90, pitch, 0))
        else:
            events.append((onset + dur, 0, 0x80, pitch, 64))
    # Offs sort before ons at the same tick so re-struck pitches stay clean.
    events.sort(key=lambda e: (e[0], e[1], e[3]))

    body = bytearray()
    if decorate:
        body += meta(0, 0x51, struct.pack(">I", 500000)[1:])  # tempo 120
        body += meta(0, 0x58, bytes([4, 2, 24, 8]))  # time signature
        body += vlq(0) + bytes([0xC0, rng.randrange(0, 8)])  # program change
    last_tick = 0
    last_status = None
    for tick, _, status, d1, d2 in events:
        body += vlq(tick - last_tick)
        last_tick = tick
        if use_running_status and status == last_status:
            body += bytes([d1, d2])
        else:
            body += bytes([status, d1, d2])
            last_status = status
        if decorate and rng.random() < 0.02:
            body += vlq(0) + bytes([0xB0, 64, rng.randrange(0, 128)])  # CC
            last_status = 0xB0
    body += meta(0, 0x2F, b"")
    return track_chunk(bytes(body))


def make_voice(rng, ppq, register, beats):
    """Random tonal voice: scale runs, arpeggios, chords, rests."""
    scale = rng.choice([MAJOR, MINOR])
    key = rng.randrange(0, 12)
    progression = rng.choice(PROGRESSIONS)
    notes = []
    tick = 0
    end = beats * ppq
    degree = rng.randrange(0, 7)
    bar = 0
    while tick < end:
        root = progression[(bar // 2) % len(progression)]
        style = rng.random()
        base_vel = rng.randrange(40, 100)
        step_ticks = rng.choice([ppq // 4, ppq // 4, ppq // 2, ppq])
        if style < 0.25:  # block chord
            dur = rng.choice([ppq, ppq * 2])
            for offset in (0, 2, 4):
                pitch = key + register + 12 * ((root + offset) // 7) + scale[(root + offset) % 7]
                vel = max(1, min(127, base_vel + rng.randrange(-8, 9)))
                notes.append((tick, pitch, dur, vel))
            tick += dur
        elif style < 0.5:  # arpeggio
            for offset in rng.choice([(0, 2, 4, 2), (0, 4, 2, 4), (4, 2, 0, 2)]):
                pitch = key + register + 12 * ((root + offset) // 7) + scale[(root + offset) % 7]
                vel = max(1, min(127, base_vel + rng.randrange(-8, 9)))
                dur = step_ticks if rng.random() < 0.8 else step_ticks * 2  # legato overlap
                notes.append((tick, pitch, dur, vel))
                tick += step_ticks
        elif style < 0.9:  # scale run
            for _ in range(rng.randrange(4, 9)):
                degree += rng.choice([-2, -1, -1, 1, 1, 1, 2])
                degree = max(-7, min(13, degree))
                pitch = key + register + 12 * (degree // 7) + scale[degree % 7]
                vel = max(1, min(127, base_vel + rng.randrange(-8, 9)))
                notes.append((tick, pitch, step_ticks, vel))
                tick += step_ticks
        else:  # rest
            tick += rng.choice([ppq // 2, ppq])
        bar += 1
    return [(t, max(21, min(108, p)), d, v) for t, p, d, v in notes if t < end]


def make_piece(index, out_dir):
    rng = random.Random(9000 + index)
    ppq = rng.choice([240, 480, 480, 960])
    fmt = 0 if index % 3 == 0 else 1
    target = rng.randrange(520, 900)

    registers = [60] if fmt == 0 else rng.choice([[48, 67], [36, 55, 72]])
    phrase_beats = 16
    phrase_start = 0
    voices = [[] for _ in registers]
    while sum(len(v) for v in voices) < target:
        for vi, register in enumerate(registers):
            voices[vi] += [
                (t + phrase_start, p, d, v)
                for t, p, d, v in make_voice(rng, ppq, register, phrase_beats)
            ]
        phrase_start += phrase_beats * ppq

    if fmt == 0:
        merged = sorted((n for voice in voices for n in voice), key=lambda n: (n[0], n[1]))
        tracks = [
            encode_track(merged, rng, rng.random() < 0.7, rng.random() < 0.5, True)
        ]
    else:
        tracks = [
            encode_track(
                sorted(voice, key=lambda n: (n[0], n[1])),
                rng,
                rng.random() < 0.7,
                rng.random() < 0.5,
                vi == 0,
            )
            for vi, voice in enumerate(voices)
        ]

    data = header_chunk(fmt, len(tracks), ppq) + b"".join(tracks)
    path = out_dir / f"piece_{index:02}.mid"
    path.write_bytes(data)
    return path, sum(len(v) for v in voices), fmt, ppq


def make_fixtures(fixtures_dir):
    """Small hand-built files exercising parser edge cases."""
    # Two tracks whose notes interleave in time; track 2 uses running status
    # and velocity-0 note-offs.
    t1 = bytearray()
    t1 += vlq(0) + bytes([0x90, 60, 100])
    t1 += vlq(96) + bytes([0x80, 60, 64])
    t1 += vlq(96) + bytes([0x90, 64, 90])
    t1 += vlq(48) + bytes([0x80, 64, 64])
    t1 += meta(0, 0x2F, b"")
    t2 = bytearray()
    t2 += vlq(48) + bytes([0x90, 55, 70])
    t2 += vlq(96) + bytes([55, 0])  # running status, vel 0 = off
    t2 += meta(0, 0x2F, b"")
    data = header_chunk(1, 2, 96) + track_chunk(bytes(t1)) + track_chunk(bytes(t2))
    (fixtures_dir / "interleaved.mid").write_bytes(data)

    # A note-on with no matching off: closed at end of track.
    t = bytearray()
    t += vlq(0) + bytes([0x90, 72, 80])
    t += vlq(240) + bytes([0x90, 76, 80])
    t += vlq(240) + bytes([0x80, 76, 64])
    t += meta(0, 0x2F, b"")
    data = header_chunk(0, 1, 480) + track_chunk(bytes(t))
    (fixtures_dir / "dangling.mid").write_bytes(data)

    # Same pitch struck twice before either off: offs close FIFO.
    t = bytearray()
    t += vlq(0) + bytes([0x90, 67, 50])
    t += vlq(120) + bytes([0x90, 67, 90])
    t += vlq(120) + bytes([0x80, 67, 64])
    t += vlq(120) + bytes([0x80, 67, 64])
    t += meta(0, 0x2F, b"")
    data = header_chunk(0, 1, 240) + track_chunk(bytes(t))
    (fixtures_dir / "overlap_fifo.mid").write_bytes(data)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("crates/gluenote/tests/data/corpus"))
    ap.add_argument(
        "--fixtures", type=Path, default=Path("crates/gluenote/tests/data/fixtures")
    )
    ap.add_argument("--count", type=int, default=22)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    args.fixtures.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        path, n, fmt, ppq = make_piece(i, args.out)
        print(f"{path}  notes={n} format={fmt} ppq={ppq}")
    make_fixtures(args.fixtures)
    print(f"fixtures in {args.fixtures}")


if __name__ == "__main__":
    main()
