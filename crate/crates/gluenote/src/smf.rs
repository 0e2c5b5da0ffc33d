//! Standard MIDI File reading and writing.
//!
//! Only note events are kept: channel, program, controller, and meta
//! information is discarded. Formats 0 and 1 are supported; timing is
//! rescaled to [`TICKS_PER_BEAT`] ticks per beat on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::note::{Note, NoteSequence, TICKS_PER_BEAT};

/// A decoded MIDI file: the normalized note sequence plus load diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedMidi {
    pub sequence: NoteSequence,
    /// Note-ons that had no matching note-off and were closed at end of track.
    pub dangling_note_ons: usize,
}

/// Parse and normalize a Standard MIDI File from disk.
pub fn load_midi(path: impl AsRef<Path>) -> Result<LoadedMidi> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_smf(&data)?;
    if parsed.notes.is_empty() {
        return Err(Error::EmptySequence { path: path.into() });
    }
    let dangling_note_ons = parsed.dangling_note_ons;
    let sequence = parsed.into_sequence(path.display().to_string())?;
    Ok(LoadedMidi {
        sequence,
        dangling_note_ons,
    })
}

/// Raw note in source-file ticks, before rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawNote {
    pub onset: u64,
    pub pitch: u8,
    pub duration: u64,
    pub velocity: u8,
}

/// Result of decoding the container: raw notes at the source resolution.
#[derive(Debug, Clone)]
pub struct ParsedSmf {
    pub format: u16,
    pub ticks_per_beat: u16,
    pub notes: Vec<RawNote>,
    pub dangling_note_ons: usize,
}

impl ParsedSmf {
    /// Rescale to the normalized resolution and sort into a [`NoteSequence`].
    pub fn into_sequence(self, source_path: String) -> Result<NoteSequence> {
        let ppq = self.ticks_per_beat as u64;
        let notes = self
            .notes
            .iter()
            .map(|r| {
                Note::new(
                    rescale(r.onset, ppq) as u32,
                    r.pitch,
                    (rescale(r.duration, ppq) as u32).max(1),
                    r.velocity,
                )
            })
            .collect();
        NoteSequence::new(notes, source_path, self.ticks_per_beat)
    }
}

/// Rescale a tick value from `ppq` to [`TICKS_PER_BEAT`], rounding half up.
fn rescale(value: u64, ppq: u64) -> u64 {
    (value * TICKS_PER_BEAT as u64 + ppq / 2) / ppq
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::MidiParse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| self.err("unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(((self.u8()? as u16) << 8) | self.u8()? as u16)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(((self.u16()? as u32) << 16) | self.u16()? as u32)
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| self.err(format!("chunk of {n} bytes runs past end of file")))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    /// MIDI variable-length quantity, at most 4 bytes.
    fn vlq(&mut self) -> Result<u32> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(self.err("variable-length quantity longer than 4 bytes"))
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

/// Decode the byte content of a Standard MIDI File.
///
/// Accepts formats 0 and 1 with tick-based division. Unknown chunk types are
/// skipped as the format allows. Note-offs are matched FIFO to the earliest
/// open note-on of the same pitch within a track; note-ons with velocity 0
/// count as note-offs.
pub fn parse_smf(data: &[u8]) -> Result<ParsedSmf> {
    let mut c = Cursor { data, pos: 0 };
    if c.bytes(4)? != b"MThd" {
        c.pos = 0;
        return Err(c.err("missing MThd header"));
    }
    let header_len = c.u32()?;
    if header_len < 6 {
        return Err(c.err(format!("header length {header_len}, expected at least 6")));
    }
    let format = c.u16()?;
    if format > 1 {
        return Err(c.err(format!("unsupported SMF format {format}")));
    }
    let declared_tracks = c.u16()?;
    let division = c.u16()?;
    if division & 0x8000 != 0 {
        return Err(c.err("SMPTE division is not supported"));
    }
    if division == 0 {
        return Err(c.err("division of 0 ticks per beat"));
    }
    // Skip any extra header bytes a nonstandard writer may have added.
    c.bytes(header_len as usize - 6)?;

    let mut notes = Vec::new();
    let mut dangling = 0usize;
    let mut tracks_found = 0u16;
    while c.remaining() >= 8 {
        let kind: [u8; 4] = c.bytes(4)?.try_into().unwrap();
        let len = c.u32()? as usize;
        let body_start = c.pos;
        let body = c.bytes(len)?;
        if &kind == b"MTrk" {
            tracks_found += 1;
            parse_track(body, body_start, &mut notes, &mut dangling)?;
        }
    }
    if c.remaining() > 0 {
        return Err(c.err("trailing bytes do not form a chunk"));
    }
    if tracks_found == 0 {
        return Err(c.err("no MTrk chunks"));
    }
    if format == 0 && declared_tracks != 1 {
        return Err(Error::MidiParse {
            offset: 10,
            message: format!("format 0 declares {declared_tracks} tracks"),
        });
    }
    Ok(ParsedSmf {
        format,
        ticks_per_beat: division,
        notes,
        dangling_note_ons: dangling,
    })
}

fn parse_track(
    body: &[u8],
    body_offset: usize,
    notes: &mut Vec<RawNote>,
    dangling: &mut usize,
) -> Result<()> {
    let mut c = Cursor {
        data: body,
        pos: 0,
    };
    let at = |c: &Cursor, msg: String| Error::MidiParse {
        offset: body_offset + c.pos,
        message: msg,
    };
    let mut tick: u64 = 0;
    let mut running_status: Option<u8> = None;
    // Open note-ons per pitch, in onset order (FIFO).
    let mut open: Vec<Vec<(u64, u8)>> = vec![Vec::new(); 128];
    let mut ended = false;
    while c.remaining() > 0 && !ended {
        tick += c
            .vlq()
            .map_err(|_| at(&c, "truncated delta time".into()))? as u64;
        let first = c.u8()?;
        let status = if first & 0x80 != 0 {
            if first < 0xF0 {
                running_status = Some(first);
            }
            first
        } else {
            c.pos -= 1;
            running_status.ok_or_else(|| at(&c, "data byte with no running status".into()))?
        };
        match status & 0xF0 {
            0x80 => {
                let pitch = c.u8()? & 0x7F;
                let _release = c.u8()?;
                close_note(&mut open[pitch as usize], pitch, tick, notes);
            }
            0x90 => {
                let pitch = c.u8()? & 0x7F;
                let velocity = c.u8()? & 0x7F;
                if velocity == 0 {
                    close_note(&mut open[pitch as usize], pitch, tick, notes);
                } else {
                    open[pitch as usize].push((tick, velocity));
                }
            }
            0xA0 | 0xB0 | 0xE0 => {
                c.bytes(2)?;
            }
            0xC0 | 0xD0 => {
                c.bytes(1)?;
            }
            0xF0 => match status {
                0xF0 | 0xF7 => {
                    let len = c.vlq()? as usize;
                    c.bytes(len)?;
                }
                0xFF => {
                    let meta_type = c.u8()?;
                    let len = c.vlq()? as usize;
                    c.bytes(len)?;
                    if meta_type == 0x2F {
                        ended = true;
                    }
                }
                other => return Err(at(&c, format!("unsupported status byte {other:#04x}"))),
            },
            _ => unreachable!("status bytes always have the high bit set"),
        }
    }
    // Close anything still sounding at the end of the track.
    for pitch in 0..128u8 {
        while let Some((onset, velocity)) = open[pitch as usize].first().copied() {
            open[pitch as usize].remove(0);
            *dangling += 1;
            notes.push(RawNote {
                onset,
                pitch,
                duration: (tick - onset).max(1),
                velocity,
            });
        }
    }
    Ok(())
}

fn close_note(open: &mut Vec<(u64, u8)>, pitch: u8, tick: u64, notes: &mut Vec<RawNote>) {
    if open.is_empty() {
        // Note-off with nothing open: ignore.
        return;
    }
    let (onset, velocity) = open.remove(0);
    notes.push(RawNote {
        onset,
        pitch,
        duration: (tick - onset).max(1),
        velocity,
    });
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 5];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7F) as u8;
        value >>= 7;
        n += 1;
        if value == 0 {
            break;
        }
    }
    while n > 1 {
        n -= 1;
        out.push(stack[n] | 0x80);
    }
    out.push(stack[0]);
}

/// Encode a note sequence as a format-0 SMF at 480 ticks per beat.
pub fn smf_bytes(seq: &NoteSequence) -> Vec<u8> {
    // (tick, is_on secondary key so offs sort before ons at the same tick)
    let mut events: Vec<(u32, bool, u8, u8)> = Vec::with_capacity(seq.len() * 2);
    for n in seq.notes() {
        events.push((n.onset, true, n.pitch, n.velocity));
        events.push((n.onset + n.duration, false, n.pitch, 0));
    }
    events.sort_by_key(|&(tick, is_on, pitch, _)| (tick, is_on, pitch));

    let mut track = Vec::new();
    let mut last_tick = 0u32;
    for (tick, is_on, pitch, velocity) in events {
        push_vlq(&mut track, tick - last_tick);
        last_tick = tick;
        track.push(if is_on { 0x90 } else { 0x80 });
        track.push(pitch);
        track.push(if is_on { velocity } else { 0x40 });
    }
    // End of track.
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(TICKS_PER_BEAT as u16).to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

/// Write a sequence to disk as a format-0 SMF.
pub fn save_midi(seq: &NoteSequence, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), smf_bytes(seq)).map_err(|e| Error::io(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(format: u16, ntrks: u16, division: u16) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(b"MThd");
        v.extend_from_slice(&6u32.to_be_bytes());
        v.extend_from_slice(&format.to_be_bytes());
        v.extend_from_slice(&ntrks.to_be_bytes());
        v.extend_from_slice(&division.to_be_bytes());
        v
    }

    fn track(body: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(b"MTrk");
        v.extend_from_slice(&(body.len() as u32).to_be_bytes());
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn single_note() {
        let mut data = header(0, 1, 480);
        // delta 0, on 60 vel 64; delta 480 (0x83 0x60), off; EOT
        data.extend(track(&[
            0x00, 0x90, 60, 64, 0x83, 0x60, 0x80, 60, 0x40, 0x00, 0xFF, 0x2F, 0x00,
        ]));
        let parsed = parse_smf(&data).unwrap();
        assert_eq!(
            parsed.notes,
            vec![RawNote {
                onset: 0,
                pitch: 60,
                duration: 480,
                velocity: 64
            }]
        );
        assert_eq!(parsed.dangling_note_ons, 0);
    }

    #[test]
    fn ppq_rescaling_doubles() {
        let mut data = header(0, 1, 240);
        data.extend(track(&[
            0x00, 0x90, 60, 64, 0x83, 0x60, 0x80, 60, 0x40, 0x00, 0xFF, 0x2F, 0x00,
        ]));
        let seq = parse_smf(&data)
            .unwrap()
            .into_sequence("test".into())
            .unwrap();
        assert_eq!(seq.notes()[0].onset, 0);
        assert_eq!(seq.notes()[0].duration, 960);
    }

    #[test]
    fn velocity_zero_note_on_is_note_off() {
        let mut data = header(0, 1, 480);
        // running status: on 60, then vel-0 on via running status
        data.extend(track(&[
            0x00, 0x90, 60, 64, 0x60, 60, 0x00, 0x00, 0xFF, 0x2F, 0x00,
        ]));
        let parsed = parse_smf(&data).unwrap();
        assert_eq!(parsed.notes[0].duration, 96);
    }

    #[test]
    fn dangling_note_closed_at_end_of_track() {
        let mut data = header(0, 1, 480);
        data.extend(track(&[
            0x00, 0x90, 60, 64, 0x81, 0x00, 0x90, 62, 64, 0x40, 0x80, 62, 0x40, 0x00, 0xFF, 0x2F,
            0x00,
        ]));
        let parsed = parse_smf(&data).unwrap();
        assert_eq!(parsed.dangling_note_ons, 1);
        assert_eq!(parsed.notes.len(), 2);
        let dangling = parsed.notes.iter().find(|n| n.pitch == 60).unwrap();
        assert_eq!(dangling.duration, 192);
    }

    #[test]
    fn fifo_same_pitch_overlap() {
        let mut data = header(0, 1, 480);
        // on 60 @0, on 60 @10, off 60 @20, off 60 @30
        data.extend(track(&[
            0x00, 0x90, 60, 64, 0x0A, 0x90, 60, 70, 0x0A, 0x80, 60, 0x40, 0x0A, 0x80, 60, 0x40,
            0x00, 0xFF, 0x2F, 0x00,
        ]));
        let parsed = parse_smf(&data).unwrap();
        let mut notes = parsed.notes.clone();
        notes.sort_by_key(|n| n.onset);
        assert_eq!(notes[0].onset, 0);
        assert_eq!(notes[0].duration, 20);
        assert_eq!(notes[1].onset, 10);
        assert_eq!(notes[1].duration, 20);
    }

    #[test]
    fn malformed_inputs_error_with_offset() {
        assert!(matches!(
            parse_smf(b"not a midi file"),
            Err(Error::MidiParse { offset: 0, .. })
        ));
        let mut truncated = header(0, 1, 480);
        truncated.extend_from_slice(b"MTrk");
        truncated.extend_from_slice(&100u32.to_be_bytes());
        assert!(matches!(
            parse_smf(&truncated),
            Err(Error::MidiParse { .. })
        ));
        let smpte = header(0, 1, 0x8050);
        assert!(parse_smf(&smpte).is_err());
        let format2 = header(2, 1, 480);
        assert!(parse_smf(&format2).is_err());
    }

    #[test]
    fn write_then_parse_roundtrip() {
        let seq = NoteSequence::from_notes(vec![
            Note::new(0, 60, 480, 64),
            Note::new(240, 64, 240, 80),
            Note::new(480, 67, 960, 100),
        ])
        .unwrap();
        let bytes = smf_bytes(&seq);
        let parsed = parse_smf(&bytes).unwrap();
        assert_eq!(parsed.dangling_note_ons, 0);
        let reloaded = parsed.into_sequence("roundtrip".into()).unwrap();
        assert_eq!(reloaded.notes(), seq.notes());
    }
}
