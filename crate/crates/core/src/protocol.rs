//! Command and telemetry surface of the hand: a line-oriented console grammar
//! and an 82-byte little-endian telemetry frame protected by CRC-16/CCITT-FALSE.
//!
//! Console grammar (keywords case-insensitive, tokens separated by blanks):
//!
//! ```text
//! grasp <name> [speed <0..1>]
//! stop
//! release
//! mode <finger> <pos|vel|cur>
//! set <finger> <value>
//! state
//! param <path> <value>
//! ```

use crate::control::ControlMode;
use crate::grasp::{DOA, SLOT_NAMES};
use std::fmt;

pub const MAX_LINE: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GraspName {
    Tripod,
    PowerSphere,
    Thumb2Finger,
    LateralPinch,
    MediumWrap,
    Pinch,
    Edge,
    Custom(String),
}

impl GraspName {
    pub fn parse(s: &str) -> Self {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect();
        match key.as_str() {
            "tripod" => Self::Tripod,
            "powersphere" => Self::PowerSphere,
            "thumb2finger" => Self::Thumb2Finger,
            "lateralpinch" => Self::LateralPinch,
            "mediumwrap" => Self::MediumWrap,
            "pinch" => Self::Pinch,
            "edge" => Self::Edge,
            _ => Self::Custom(s.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Self::Tripod => "Tripod",
            Self::PowerSphere => "PowerSphere",
            Self::Thumb2Finger => "Thumb2Finger",
            Self::LateralPinch => "LateralPinch",
            Self::MediumWrap => "MediumWrap",
            Self::Pinch => "Pinch",
            Self::Edge => "Edge",
            Self::Custom(s) => s,
        }
    }
}

impl fmt::Display for GraspName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    ExecuteGrasp { name: GraspName, global_speed: f64 },
    Stop,
    /// Open the hand after a grasp.
    Release,
    SetMode { finger: usize, mode: ControlMode },
    SetSetpoint { finger: usize, value: f64 },
    QueryState,
    SetParam { path: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {offset}: expected {expected}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
}

fn err<T>(offset: usize, expected: &str) -> Result<T, ParseError> {
    Err(ParseError { offset, expected: expected.to_string() })
}

struct Tokens<'a> {
    line: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let bytes = self.line.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos == bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < bytes.len() && !bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some((start, &self.line[start..self.pos]))
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        match self.next() {
            Some(t) => Ok(t),
            None => err(self.line.len(), what),
        }
    }

    fn end(&mut self) -> Result<(), ParseError> {
        match self.next() {
            Some((at, _)) => err(at, "end of line"),
            None => Ok(()),
        }
    }
}

fn parse_number(at: usize, tok: &str, what: &str) -> Result<f64, ParseError> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => err(at, what),
    }
}

fn parse_finger(at: usize, tok: &str) -> Result<usize, ParseError> {
    if let Ok(i) = tok.parse::<usize>() {
        if i < DOA {
            return Ok(i);
        }
    }
    SLOT_NAMES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(tok))
        .map_or_else(|| err(at, "finger index 0-5 or slot name"), Ok)
}

/// Parses one console line. Trailing CR/LF are ignored.
pub fn parse_console(line: &str) -> Result<Command, ParseError> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.len() > MAX_LINE {
        return err(MAX_LINE, "line of at most 256 bytes");
    }
    let mut t = Tokens { line, pos: 0 };
    let (at, kw) = t.expect("command")?;
    let cmd = match kw.to_ascii_lowercase().as_str() {
        "grasp" => {
            let (_, name) = t.expect("grasp name")?;
            let mut global_speed = 1.0;
            if let Some((at, kw)) = t.next() {
                if !kw.eq_ignore_ascii_case("speed") {
                    return err(at, "'speed' or end of line");
                }
                let (at, v) = t.expect("speed value")?;
                global_speed = parse_number(at, v, "speed in (0, 1]")?;
                if !(global_speed > 0.0 && global_speed <= 1.0) {
                    return err(at, "speed in (0, 1]");
                }
            }
            Command::ExecuteGrasp { name: GraspName::parse(name), global_speed }
        }
        "stop" => Command::Stop,
        "release" => Command::Release,
        "state" => Command::QueryState,
        "mode" => {
            let (at, f) = t.expect("finger index 0-5 or slot name")?;
            let finger = parse_finger(at, f)?;
            let (at, m) = t.expect("pos, vel or cur")?;
            let mode = match m.to_ascii_lowercase().as_str() {
                "pos" => ControlMode::Position,
                "vel" => ControlMode::Velocity,
                "cur" => ControlMode::Current,
                _ => return err(at, "pos, vel or cur"),
            };
            Command::SetMode { finger, mode }
        }
        "set" => {
            let (at, f) = t.expect("finger index 0-5 or slot name")?;
            let finger = parse_finger(at, f)?;
            let (at, v) = t.expect("setpoint value")?;
            Command::SetSetpoint { finger, value: parse_number(at, v, "setpoint value")? }
        }
        "param" => {
            let (at, p) = t.expect("parameter path")?;
            let valid = p.split('.').all(|seg| {
                !seg.is_empty() && seg.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
            });
            if !valid {
                return err(at, "parameter path");
            }
            let (at, v) = t.expect("parameter value")?;
            Command::SetParam { path: p.to_string(), value: parse_number(at, v, "parameter value")? }
        }
        _ => return err(at, "grasp, stop, release, mode, set, state or param"),
    };
    t.end()?;
    Ok(cmd)
}

pub const FRAME_MAGIC: [u8; 2] = [0xA5, 0x5A];
pub const FRAME_LEN: usize = 2 + 2 + 4 + DOA * 12 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FingerTelemetry {
    /// rad.
    pub angle: f32,
    /// A.
    pub current: f32,
    /// N.
    pub force: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TelemetryFrame {
    pub seq: u16,
    pub t_ms: u32,
    pub fingers: [FingerTelemetry; DOA],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame has {0} bytes, need {FRAME_LEN}")]
    Truncated(usize),
    #[error("bad magic {0:02x} {1:02x}")]
    BadMagic(u8, u8),
    #[error("crc mismatch: frame {stored:04x}, computed {computed:04x}")]
    BadCrc { stored: u16, computed: u16 },
}

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &b in data {
        crc ^= (b as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
        }
    }
    crc
}

pub fn encode_frame(f: &TelemetryFrame) -> [u8; FRAME_LEN] {
    let mut out = [0u8; FRAME_LEN];
    out[0..2].copy_from_slice(&FRAME_MAGIC);
    out[2..4].copy_from_slice(&f.seq.to_le_bytes());
    out[4..8].copy_from_slice(&f.t_ms.to_le_bytes());
    for (i, ft) in f.fingers.iter().enumerate() {
        let o = 8 + 12 * i;
        out[o..o + 4].copy_from_slice(&ft.angle.to_le_bytes());
        out[o + 4..o + 8].copy_from_slice(&ft.current.to_le_bytes());
        out[o + 8..o + 12].copy_from_slice(&ft.force.to_le_bytes());
    }
    let crc = crc16_ccitt_false(&out[..FRAME_LEN - 2]);
    out[FRAME_LEN - 2..].copy_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes the first `FRAME_LEN` bytes of `bytes`. The CRC is checked
/// before the magic.
pub fn decode_frame(bytes: &[u8]) -> Result<TelemetryFrame, FrameError> {
    if bytes.len() < FRAME_LEN {
        return Err(FrameError::Truncated(bytes.len()));
    }
    let b = &bytes[..FRAME_LEN];
    let stored = u16::from_le_bytes([b[FRAME_LEN - 2], b[FRAME_LEN - 1]]);
    let computed = crc16_ccitt_false(&b[..FRAME_LEN - 2]);
    if stored != computed {
        return Err(FrameError::BadCrc { stored, computed });
    }
    if b[0..2] != FRAME_MAGIC {
        return Err(FrameError::BadMagic(b[0], b[1]));
    }
    let f32_at = |o: usize| f32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
    let mut fingers = [FingerTelemetry::default(); DOA];
    for (i, ft) in fingers.iter_mut().enumerate() {
        let o = 8 + 12 * i;
        *ft = FingerTelemetry { angle: f32_at(o), current: f32_at(o + 4), force: f32_at(o + 8) };
    }
    Ok(TelemetryFrame {
        seq: u16::from_le_bytes([b[2], b[3]]),
        t_ms: u32::from_le_bytes([b[4], b[5], b[6], b[7]]),
        fingers,
    })
}

pub fn telemetry_csv_header() -> String {
    let mut h = String::from("seq,t_ms");
    for n in SLOT_NAMES {
        h.push_str(&format!(",{n}_angle_rad,{n}_current_A,{n}_force_N"));
    }
    h
}

impl TelemetryFrame {
    pub fn csv(&self) -> String {
        let mut s = format!("{},{}", self.seq, self.t_ms);
        for f in &self.fingers {
            s.push_str(&format!(",{},{},{}", f.angle, f.current, f.force));
        }
        s
    }
}

/// Integer-tick telemetry scheduler: one frame per `period_ticks` simulation
/// ticks, the first after one full period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TelemetryClock {
    pub tick_us: u64,
    pub period_ticks: u64,
    pub ticks: u64,
    pub seq: u16,
}

impl TelemetryClock {
    /// 10 Hz frames on a simulation tick of `tick_us` microseconds.
    pub fn new(tick_us: u64) -> Self {
        assert!(tick_us > 0 && 100_000 % tick_us == 0, "tick must divide 100 ms");
        Self { tick_us, period_ticks: 100_000 / tick_us, ticks: 0, seq: 0 }
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.ticks * self.tick_us / 1000
    }
}

/// Advances the clock by one tick and emits a frame when a 100 ms boundary
/// is reached. `sample` is only evaluated for emitted frames.
pub fn telemetry_tick(
    clock: &mut TelemetryClock,
    sample: impl FnOnce() -> [FingerTelemetry; DOA],
) -> Option<TelemetryFrame> {
    clock.ticks += 1;
    if !clock.ticks.is_multiple_of(clock.period_ticks) {
        return None;
    }
    let frame = TelemetryFrame { seq: clock.seq, t_ms: clock.elapsed_ms() as u32, fingers: sample() };
    clock.seq = clock.seq.wrapping_add(1);
    Some(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_examples() {
        assert_eq!(
            parse_console("grasp mediumwrap speed 0.5"),
            Ok(Command::ExecuteGrasp { name: GraspName::MediumWrap, global_speed: 0.5 })
        );
        assert_eq!(parse_console("stop"), Ok(Command::Stop));
        assert_eq!(parse_console("STOP\r\n"), Ok(Command::Stop));
        let e = parse_console("grasp").unwrap_err();
        assert_eq!(e.offset, 5);
        assert_eq!(parse_console("Mode 2 VEL"), Ok(Command::SetMode { finger: 2, mode: ControlMode::Velocity }));
        assert_eq!(parse_console("set pinky -0.25"), Ok(Command::SetSetpoint { finger: 5, value: -0.25 }));
        assert_eq!(
            parse_console("param control.kp_pos 8"),
            Ok(Command::SetParam { path: "control.kp_pos".into(), value: 8.0 })
        );
        assert_eq!(
            parse_console("grasp Wobble"),
            Ok(Command::ExecuteGrasp { name: GraspName::Custom("Wobble".into()), global_speed: 1.0 })
        );
    }

    #[test]
    fn grammar_errors_carry_offsets() {
        assert_eq!(parse_console("").unwrap_err().offset, 0);
        assert_eq!(parse_console("  jump").unwrap_err().offset, 2);
        assert_eq!(parse_console("grasp tripod speed 1.5").unwrap_err().offset, 19);
        assert_eq!(parse_console("grasp tripod fast").unwrap_err().offset, 13);
        assert_eq!(parse_console("mode 6 pos").unwrap_err().offset, 5);
        assert_eq!(parse_console("stop now").unwrap_err().offset, 5);
        assert_eq!(parse_console("param a..b 1").unwrap_err().offset, 6);
        assert_eq!(parse_console(&"x".repeat(300)).unwrap_err().offset, MAX_LINE);
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
    }

    #[test]
    fn zero_frame_crc_matches_reference() {
        // binascii.crc_hqx over magic + 78 zero bytes, init 0xFFFF
        let bytes = encode_frame(&TelemetryFrame::default());
        assert_eq!(u16::from_le_bytes([bytes[80], bytes[81]]), 0xABA4);
    }

    #[test]
    fn frame_round_trip_and_bit_flip() {
        let mut f = TelemetryFrame { seq: 513, t_ms: 123_400, ..Default::default() };
        f.fingers[3] = FingerTelemetry { angle: 1.25, current: 0.3, force: 2.5 };
        let bytes = encode_frame(&f);
        assert_eq!(bytes.len(), 82);
        assert_eq!(decode_frame(&bytes), Ok(f));
        let mut bad = bytes;
        bad[40] ^= 0x10;
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadCrc { .. })));
        assert_eq!(decode_frame(&bytes[..81]), Err(FrameError::Truncated(81)));
        let mut bad = bytes;
        bad[0] = 0;
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadCrc { .. })));
        let crc = crc16_ccitt_false(&bad[..80]);
        bad[80..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(decode_frame(&bad), Err(FrameError::BadMagic(0, 0x5A)));
    }

    #[test]
    fn ten_frames_per_second() {
        let mut c = TelemetryClock::new(100);
        let frames: Vec<_> = (0..10_000).filter_map(|_| telemetry_tick(&mut c, Default::default)).collect();
        assert_eq!(frames.len(), 10);
        assert_eq!(frames[0].t_ms, 100);
        assert_eq!(frames[9].t_ms, 1000);
        assert!(frames.windows(2).all(|w| w[1].seq == w[0].seq + 1));
    }
}
