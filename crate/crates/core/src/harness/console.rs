//! Operator console. Lines are parsed with the console grammar and injected
//! into the hand's command queue; acknowledgments, errors and (on request)
//! telemetry are written back, each prefixed with the simulation time in ms.
//!
//! Script mode additionally accepts `@<t_ms>` before a command, which first
//! advances the simulation to that time. A bare `@<t_ms>` only advances.
//! Blank lines and lines starting with `#` are skipped.

use std::io::{self, BufRead, Write};
use std::sync::mpsc::{self, TryRecvError};
use std::time::{Duration, Instant};

use super::{HandSim, TICKS_PER_MS};
use crate::protocol::parse_console;

fn flush_responses<W: Write>(hand: &mut HandSim, out: &mut W) -> io::Result<()> {
    let t = hand.t_ms();
    for r in hand.take_responses() {
        writeln!(out, "[{t}] {r}")?;
    }
    Ok(())
}

fn advance_to<W: Write>(hand: &mut HandSim, tick: u64, out: &mut W) -> io::Result<()> {
    while hand.ticks < tick {
        hand.step();
        flush_responses(hand, out)?;
    }
    Ok(())
}

/// Parses one operator line and queues the command, or reports the error.
fn submit<W: Write>(hand: &mut HandSim, line: &str, out: &mut W) -> io::Result<()> {
    match parse_console(line) {
        Ok(cmd) => {
            hand.log.commands.push((hand.t_ms(), line.trim().to_string()));
            hand.push(cmd);
            Ok(())
        }
        Err(e) => writeln!(out, "[{}] error: {e}", hand.t_ms()),
    }
}

/// Runs a timed console script to completion.
pub fn run_script<W: Write>(hand: &mut HandSim, script: &str, out: &mut W) -> io::Result<()> {
    for raw in script.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cmd = line;
        if let Some(rest) = line.strip_prefix('@') {
            let (num, tail) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            match num.parse::<u64>() {
                Ok(t_ms) => advance_to(hand, t_ms * TICKS_PER_MS, out)?,
                Err(_) => {
                    writeln!(out, "[{}] error: parse error at byte 1: expected time in ms", hand.t_ms())?;
                    continue;
                }
            }
            cmd = tail.trim();
            if cmd.is_empty() {
                continue;
            }
        }
        submit(hand, cmd, out)?;
    }
    hand.step();
    flush_responses(hand, out)
}

/// Interactive session: input is read on its own thread and handed to the
/// simulation through a channel. The simulation advances in 10 ms slices,
/// paced to wall-clock time when `realtime` is set, and ends at end of input.
pub fn console_repl<R, W>(hand: &mut HandSim, input: R, out: &mut W, realtime: bool) -> io::Result<()>
where
    R: BufRead + Send + 'static,
    W: Write,
{
    let (tx, rx) = mpsc::channel::<String>();
    let reader = std::thread::spawn(move || {
        for line in input.lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let wall0 = Instant::now();
    let sim0 = hand.ticks;
    loop {
        let mut closed = false;
        loop {
            match rx.try_recv() {
                Ok(line) => {
                    let line = line.trim().to_string();
                    if !line.is_empty() && !line.starts_with('#') {
                        submit(hand, &line, out)?;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    closed = true;
                    break;
                }
            }
        }
        let target = hand.ticks + 10 * TICKS_PER_MS;
        advance_to(hand, target, out)?;
        out.flush()?;
        if closed {
            break;
        }
        if realtime {
            let sim_elapsed = Duration::from_micros((hand.ticks - sim0) * super::TICK_US);
            if let Some(wait) = sim_elapsed.checked_sub(wall0.elapsed()) {
                std::thread::sleep(wait);
            }
        } else {
            std::thread::sleep(Duration::from_millis(1));
        }
    }
    let _ = reader.join();
    Ok(())
}
