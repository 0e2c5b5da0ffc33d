//! MIDI reader checked against an independent Python decoder.
//!
//! The expectations below are frozen from `tools/smf_oracle.py`, a separate
//! stdlib-only SMF implementation, run over the checked-in fixtures and a
//! sample of the corpus. Regenerate with:
//! `python3 tools/smf_oracle.py crates/gluenote/tests/data/fixtures/*.mid`

use std::path::PathBuf;

use gluenote::{load_midi, NoteSequence};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(rel)
}

/// FNV-1a over the (onset, pitch, duration, velocity) stream, mirroring the
/// oracle's digest.
fn checksum(seq: &NoteSequence) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for n in seq.notes() {
        for v in [
            n.onset as u64,
            n.pitch as u64,
            n.duration as u64,
            n.velocity as u64,
        ] {
            h = (h ^ v).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn assert_notes(seq: &NoteSequence, expected: &[(u32, u8, u32, u8)]) {
    assert_eq!(seq.len(), expected.len());
    for (note, &(onset, pitch, duration, velocity)) in seq.notes().iter().zip(expected) {
        assert_eq!(
            (note.onset, note.pitch, note.duration, note.velocity),
            (onset, pitch, duration, velocity)
        );
    }
}

#[test]
fn interleaved_tracks_with_running_status_and_zero_velocity_offs() {
    let loaded = load_midi(data("fixtures/interleaved.mid")).unwrap();
    assert_eq!(loaded.dangling_note_ons, 0);
    // Oracle output: 96 ppq rescaled x5; track order does not survive the
    // (onset, pitch) sort.
    assert_notes(
        &loaded.sequence,
        &[(0, 60, 480, 100), (240, 55, 480, 70), (960, 64, 240, 90)],
    );
    assert_eq!(checksum(&loaded.sequence), 0xf97ea3e822408f74);
}

#[test]
fn unterminated_note_closes_at_end_of_track() {
    let loaded = load_midi(data("fixtures/dangling.mid")).unwrap();
    assert_eq!(loaded.dangling_note_ons, 1);
    assert_notes(&loaded.sequence, &[(0, 72, 480, 80), (240, 76, 240, 80)]);
    assert_eq!(checksum(&loaded.sequence), 0xe5c569c485809db9);
}

#[test]
fn restruck_pitch_closes_fifo() {
    let loaded = load_midi(data("fixtures/overlap_fifo.mid")).unwrap();
    assert_eq!(loaded.dangling_note_ons, 0);
    // The first off closes the first (velocity 50) strike, not the second.
    assert_notes(&loaded.sequence, &[(0, 67, 480, 50), (240, 67, 480, 90)]);
    assert_eq!(checksum(&loaded.sequence), 0x4abc77dd7d770f3d);
}

#[test]
fn corpus_pieces_match_oracle_digests() {
    // (file, notes, dangling, fnv1a) frozen from the oracle.
    let cases = [
        ("corpus/piece_00.mid", 708, 0, 0xb04e86e01a413059u64),
        ("corpus/piece_04.mid", 762, 0, 0x381e07fd310c0200),
        ("corpus/piece_10.mid", 649, 0, 0x2c45b982e52c8dc6),
    ];
    for (file, notes, dangling, digest) in cases {
        let loaded = load_midi(data(file)).unwrap();
        assert_eq!(loaded.sequence.len(), notes, "{file}");
        assert_eq!(loaded.dangling_note_ons, dangling, "{file}");
        assert_eq!(checksum(&loaded.sequence), digest, "{file}");
    }
}

#[test]
fn save_then_load_preserves_the_event_stream() {
    // Simultaneous same-pitch notes from different voices make exact note
    // roundtrips impossible in single-track MIDI (note-offs carry no note
    // identity), so the faithful property is event-stream preservation:
    // the multisets of note-ons (onset, pitch, velocity) and of per-pitch
    // note-end times survive, and re-encoding is a fixpoint after one round.
    let ons = |seq: &NoteSequence| {
        let mut v: Vec<_> = seq
            .notes()
            .iter()
            .map(|n| (n.onset, n.pitch, n.velocity))
            .collect();
        v.sort_unstable();
        v
    };
    let ends = |seq: &NoteSequence| {
        let mut v: Vec<_> = seq
            .notes()
            .iter()
            .map(|n| (n.pitch, n.onset + n.duration))
            .collect();
        v.sort_unstable();
        v
    };

    let loaded = load_midi(data("corpus/piece_04.mid")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("roundtrip.mid");
    gluenote::save_midi(&loaded.sequence, &path).unwrap();
    let second = load_midi(&path).unwrap();
    assert_eq!(second.sequence.len(), loaded.sequence.len());
    assert_eq!(ons(&second.sequence), ons(&loaded.sequence));
    assert_eq!(ends(&second.sequence), ends(&loaded.sequence));

    gluenote::save_midi(&second.sequence, &path).unwrap();
    let third = load_midi(&path).unwrap();
    assert_eq!(third.sequence.notes(), second.sequence.notes());
}
