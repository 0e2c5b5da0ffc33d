#!/usr/bin/env python3
"""Convert Vienna 4x22 match files into gluenote's evaluation layout.

The public corpus (https://github.com/CPJKU/vienna4x22) publishes one
``.match`` file per performance; each line pairs a score note (``snote``)
with a performance note (``note``), or marks one side as unmatched
(``snote(...)-deletion``, ``insertion-note(...)``, ``trill(...)-note(...)``,
...). Both note lists and the ground-truth matching are reconstructed from
the match file alone, so the emitted note indices are consistent by
construction with the MIDI files written next to them:

    <stem>.s1.mid   score notes (onsets in beats x 480 ticks, velocity 64)
    <stem>.s2.mid   performance notes (times rescaled to 480 ticks per beat)
    <stem>.align    "#gluenote-match v1" note-index pairs

Point GLUENOTE_VIENNA4X22_DIR at the output directory to enable the
Vienna-baseline acceptance criterion.

Usage:
    python3 tools/prepare_vienna4x22.py /path/to/vienna4x22/match --out prepared/

Only the standard library is used. Match files come in several revisions;
parsing is defensive (top-level term splitting, positional numeric fields)
and every skipped line or dropped note is reported on stderr.
"""

import argparse
import re
import struct
import sys
from pathlib import Path

PPQ = 480
STEP_SEMITONES = {"c": 0, "d": 2, "e": 4, "f": 5, "g": 7, "a": 9, "b": 11}
MODIFIER_SEMITONES = {
    "n": 0, "natural": 0, "": 0,
    "#": 1, "sharp": 1, "s": 1, "x": 2, "##": 2, "ss": 2,
    "b": -1, "flat": -1, "f": -1, "bb": -2, "ff": -2,
}


# ---------------------------------------------------------------- SMF writer

def vlq(value):
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def write_midi(path, notes):
    """Write (onset, pitch, duration, velocity) tuples as a format-0 SMF."""
    events = []
    for onset, pitch, duration, velocity in notes:
        events.append((onset, 1, pitch, velocity))
        events.append((onset + duration, 0, pitch, 0x40))
    events.sort(key=lambda e: (e[0], e[1], e[2]))
    data = bytearray()
    tick = 0
    for when, is_on, pitch, velocity in events:
        data += vlq(when - tick)
        tick = when
        status = 0x90 if is_on else 0x80
        data += bytes((status, pitch, velocity))
    data += vlq(0) + bytes((0xFF, 0x2F, 0x00))
    with open(path, "wb") as f:
        f.write(b"MThd" + struct.pack(">IHHH", 6, 0, 1, PPQ))
        f.write(b"MTrk" + struct.pack(">I", len(data)) + bytes(data))


# ------------------------------------------------------------- match parsing

def split_top_level(text, separator):
    """Split on `separator` characters at bracket/paren depth zero."""
    parts, depth, current = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == separator and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return parts


TERM = re.compile(r"^\s*([A-Za-z_]\w*)\s*(?:\((.*)\))?\s*$", re.DOTALL)


def parse_term(text):
    """`name(arg,...)` -> (name, [args]); args keep their raw spelling."""
    m = TERM.match(text.strip())
    if not m:
        return None, []
    name, body = m.group(1), m.group(2)
    if body is None:
        return name, []
    return name, [a.strip() for a in split_top_level(body, ",")]


def parse_number(text):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return None


def parse_fraction(text):
    """Durations/onsets like `1/8`, `0:2`, or plain numbers, in beats."""
    for sep in ("/", ":"):
        if sep in text:
            parts = [parse_number(p) for p in split_top_level(text, sep)]
            if sep == "/" and len(parts) == 2 and parts[1]:
                return parts[0] / parts[1]
            return None
    return parse_number(text)


def parse_pitch(args, start):
    """MIDI pitch from `[Step,Modifier],Octave` at `args[start:]`, or a bare
    MIDI number; returns (pitch, next_index) or (None, start)."""
    if start >= len(args):
        return None, start
    head = args[start]
    if head.startswith("["):
        fields = [f.strip().strip("'") for f in split_top_level(head[1:-1], ",")]
        if len(fields) >= 1 and fields[0].lower() in STEP_SEMITONES:
            semitone = STEP_SEMITONES[fields[0].lower()]
            modifier = fields[1].lower() if len(fields) > 1 else ""
            if modifier not in MODIFIER_SEMITONES:
                return None, start
            octave = parse_number(args[start + 1]) if start + 1 < len(args) else None
            if octave is None:
                return None, start
            pitch = 12 * (int(octave) + 1) + semitone + MODIFIER_SEMITONES[modifier]
            return (pitch, start + 2) if 0 <= pitch <= 127 else (None, start)
        return None, start
    value = parse_number(head)
    if isinstance(value, int) and 0 <= value <= 127:
        return value, start + 1
    return None, start


def parse_snote(args):
    """Score note -> (onset_beats, offset_beats, pitch)."""
    pitch, after = parse_pitch(args, 1)
    if pitch is None:
        return None
    # Positional per the published format: ..., OnsetInBeats, OffsetInBeats
    # directly after bar:beat, offset, and duration fields.
    numbers = [parse_fraction(a) for a in args[after + 3:after + 5]]
    if len(numbers) == 2 and all(isinstance(n, (int, float)) for n in numbers):
        onset, offset = numbers
        if offset >= onset:
            return float(onset), float(offset), pitch
    return None


def parse_note(args):
    """Performance note -> (onset, offset, pitch, velocity) in source units."""
    pitch, after = parse_pitch(args, 1)
    if pitch is None:
        return None
    numbers = [parse_number(a) for a in args[after:]]
    numbers = [n for n in numbers if n is not None]
    if len(numbers) < 2:
        return None
    onset, offset = numbers[0], numbers[1]
    velocity = None
    for n in reversed(numbers[2:]):
        if isinstance(n, int) and 1 <= n <= 127:
            velocity = n
            break
    if velocity is None:
        velocity = 64
    if offset < onset:
        offset = onset
    return float(onset), float(offset), pitch, velocity


def convert_match(path):
    """Parse one match file into (score_notes, perf_notes, links, report).

    score_notes / perf_notes are (onset_beats_or_units, offset, pitch[, vel])
    lists; links pairs their indices."""
    clock_units = None
    score, perf, links = [], [], []
    skipped = 0
    for raw in path.read_text(errors="replace").splitlines():
        line = raw.strip().rstrip(".")
        if not line or line.startswith("%"):
            continue
        halves = split_top_level(line, "-")
        if len(halves) == 1:
            name, args = parse_term(halves[0])
            if name == "info" and len(args) == 2 and args[0] == "midiClockUnits":
                clock_units = parse_number(args[1])
            continue
        if len(halves) != 2:
            skipped += 1
            continue
        left_name, left_args = parse_term(halves[0])
        right_name, right_args = parse_term(halves[1])
        score_index = perf_index = None
        if left_name == "snote":
            parsed = parse_snote(left_args)
            if parsed is None:
                skipped += 1
                continue
            score.append(parsed)
            score_index = len(score) - 1
        if right_name == "note":
            parsed = parse_note(right_args)
            if parsed is None:
                skipped += 1
                continue
            perf.append(parsed)
            perf_index = len(perf) - 1
        if left_name not in ("snote", "insertion", "trill", "ornament",
                             "hammer_bounce", "trailing_played_note",
                             "trailing_score_note", "no_score_note") \
                and right_name not in ("note", "deletion", "no_played_note",
                                       "trailing_score_note"):
            skipped += 1
        if score_index is not None and perf_index is not None:
            links.append((score_index, perf_index))
    return score, perf, links, clock_units, skipped


# ------------------------------------------------------- layout construction

def beats_to_ticks(beats, origin):
    return round((beats - origin) * PPQ)


def build_side(raw_notes, to_ticks):
    """Convert raw notes to tick units, resolve per-pitch overlaps, sort the
    way the Rust loader does, and return (notes, old->new index map, drops)."""
    notes = []
    for index, raw in enumerate(raw_notes):
        onset, offset, pitch = raw[0], raw[1], raw[2]
        velocity = raw[3] if len(raw) > 3 else 64
        on, off = to_ticks(onset), to_ticks(offset)
        notes.append([on, pitch, max(off - on, 1), velocity, index])
    # Same-pitch overlaps would make note-on/off pairing ambiguous in the
    # flat MIDI event stream: truncate the earlier note; drop exact-onset
    # duplicates (keeping the longer one).
    dropped = set()
    by_pitch = {}
    for note in sorted(notes, key=lambda n: (n[0], -n[2])):
        prev = by_pitch.get(note[1])
        if prev is not None and prev[0] == note[0]:
            dropped.add(note[4])
            continue
        if prev is not None and prev[0] + prev[2] > note[0]:
            prev[2] = note[0] - prev[0]
        by_pitch[note[1]] = note
    kept = [n for n in notes if n[4] not in dropped]
    kept.sort(key=lambda n: (n[0], n[1]))
    index_map = {note[4]: new for new, note in enumerate(kept)}
    return [tuple(n[:4]) for n in kept], index_map, len(dropped)


def prepare_file(path, out_dir):
    score_raw, perf_raw, links, clock_units, skipped = convert_match(path)
    if not score_raw or not perf_raw:
        print(f"{path.name}: no usable note pairs, skipped", file=sys.stderr)
        return False

    score_origin = min(n[0] for n in score_raw)
    score, score_map, score_drops = build_side(
        score_raw, lambda beats: beats_to_ticks(beats, score_origin)
    )

    perf_origin = min(n[0] for n in perf_raw)
    if clock_units:
        scale = PPQ / clock_units
    else:
        # Seconds at the corpus' nominal tempo: 120 BPM = 960 ticks/second.
        scale = 960.0
    perf, perf_map, perf_drops = build_side(
        perf_raw, lambda t: round((t - perf_origin) * scale)
    )

    stem = path.stem
    write_midi(out_dir / f"{stem}.s1.mid", score)
    write_midi(out_dir / f"{stem}.s2.mid", perf)

    matched_s1, matched_s2 = set(), set()
    lines = ["#gluenote-match v1"]
    for si, pi in links:
        if si not in score_map or pi not in perf_map:
            continue
        a, b = score_map[si], perf_map[pi]
        if a in matched_s1 or b in matched_s2:
            continue
        matched_s1.add(a)
        matched_s2.add(b)
        lines.append(f"{a}\t{b}")
    for a in range(len(score)):
        if a not in matched_s1:
            lines.append(f"{a}\t*")
    for b in range(len(perf)):
        if b not in matched_s2:
            lines.append(f"*\t{b}")
    (out_dir / f"{stem}.align").write_text("\n".join(lines) + "\n")

    drops = score_drops + perf_drops
    note = f", {drops} overlap drops" if drops else ""
    note += f", {skipped} unparsed lines" if skipped else ""
    print(
        f"{stem}: {len(score)} score notes, {len(perf)} performance notes, "
        f"{len(matched_s1)} matches{note}"
    )
    return True


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("match_dir", type=Path, help="directory of .match files")
    parser.add_argument("--out", type=Path, required=True)
    args = parser.parse_args()

    files = sorted(args.match_dir.glob("*.match"))
    if not files:
        sys.exit(f"no .match files in {args.match_dir}")
    args.out.mkdir(parents=True, exist_ok=True)
    converted = sum(prepare_file(path, args.out) for path in files)
    print(f"{converted}/{len(files)} files converted into {args.out}")
    if converted:
        print(f"export GLUENOTE_VIENNA4X22_DIR={args.out.resolve()}")


if __name__ == "__main__":
    main()
