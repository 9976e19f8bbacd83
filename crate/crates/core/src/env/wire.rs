//! Byte-stream protocol for attaching external emulators.
//!
//! The server greets with `SAEPv001`, the screen dimensions, the full
//! action count, and the minimal action list. The client then drives it
//! with `RSET` + seed and `STEP` + action commands; every response carries
//! a length-prefixed frame of raw (pre-mapping) palette bytes, and steps
//! add a little-endian f64 reward plus a terminal flag byte. All integers
//! are little-endian.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use super::{Environment, StepOutcome};
use crate::screen::{map_raw_palette, Frame, HEIGHT, WIDTH};
use crate::{Error, Result};

const WIRE_MAGIC: &[u8; 8] = b"SAEPv001";
const CMD_RESET: &[u8; 4] = b"RSET";
const CMD_STEP: &[u8; 4] = b"STEP";

fn read_wire(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Protocol {
                detail: format!("stream ended while reading {what}"),
            }
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_wire(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

/// Client end of the protocol; behaves as a raw [`Environment`].
pub struct WireEnv {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: BufWriter<Box<dyn Write + Send>>,
    full_actions: u32,
    minimal: Vec<u8>,
    over: bool,
    child: Option<Child>,
}

impl WireEnv {
    /// Perform the handshake over an arbitrary byte stream.
    pub fn connect(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Self> {
        let mut reader: BufReader<Box<dyn Read + Send>> = BufReader::new(Box::new(reader));
        let writer: BufWriter<Box<dyn Write + Send>> = BufWriter::new(Box::new(writer));

        let handshake = |what: &str, detail: String| Error::Handshake {
            detail: format!("{what}: {detail}"),
        };
        let mut magic = [0u8; 8];
        read_wire(&mut reader, &mut magic, "handshake magic")
            .map_err(|e| handshake("greeting", e.to_string()))?;
        if &magic != WIRE_MAGIC {
            return Err(handshake("greeting", format!("unexpected magic {magic:?}")));
        }
        let width = read_u32(&mut reader, "width")?;
        let height = read_u32(&mut reader, "height")?;
        if width as usize != WIDTH || height as usize != HEIGHT {
            return Err(handshake(
                "dimensions",
                format!("{width}x{height}, expected {WIDTH}x{HEIGHT}"),
            ));
        }
        let full_actions = read_u32(&mut reader, "full action count")?;
        if full_actions == 0 || full_actions > 256 {
            return Err(handshake("full action count", full_actions.to_string()));
        }
        let minimal_count = read_u32(&mut reader, "minimal action count")?;
        if minimal_count == 0 || minimal_count > full_actions {
            return Err(handshake("minimal action count", minimal_count.to_string()));
        }
        let mut minimal = vec![0u8; minimal_count as usize];
        read_wire(&mut reader, &mut minimal, "minimal actions")?;
        let mut seen = [false; 256];
        for &a in &minimal {
            if a as u32 >= full_actions {
                return Err(handshake("minimal actions", format!("action {a} out of range")));
            }
            if std::mem::replace(&mut seen[a as usize], true) {
                return Err(handshake("minimal actions", format!("action {a} repeated")));
            }
        }

        Ok(WireEnv {
            reader,
            writer,
            full_actions,
            minimal,
            over: true,
            child: None,
        })
    }

    /// Connect to a serving emulator adapter over TCP.
    pub fn connect_tcp(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Self::connect(reader, stream)
    }

    /// Spawn `cmd` (whitespace-separated argv) and talk the protocol over
    /// its standard input and output.
    pub fn spawn(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace();
        let program = parts.next().ok_or_else(|| Error::Config {
            detail: "empty exec command".to_string(),
        })?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut env = Self::connect(stdout, stdin)?;
        env.child = Some(child);
        Ok(env)
    }

    fn read_frame(&mut self) -> Result<Frame> {
        let len = read_u32(&mut self.reader, "frame length")? as usize;
        if len != WIDTH * HEIGHT {
            return Err(Error::Protocol {
                detail: format!("frame length {len}, expected {}", WIDTH * HEIGHT),
            });
        }
        let mut raw = vec![0u8; len];
        read_wire(&mut self.reader, &mut raw, "frame pixels")?;
        for p in raw.iter_mut() {
            *p = map_raw_palette(*p);
        }
        Frame::from_pixels(raw)
    }
}

impl Environment for WireEnv {
    fn reset(&mut self, seed: u64) -> Result<Frame> {
        self.writer.write_all(CMD_RESET)?;
        self.writer.write_all(&seed.to_le_bytes())?;
        self.writer.flush()?;
        let frame = self.read_frame()?;
        self.over = false;
        Ok(frame)
    }

    fn step(&mut self, action: u8) -> Result<StepOutcome> {
        if self.over {
            return Err(Error::EpisodeOver);
        }
        self.writer.write_all(CMD_STEP)?;
        self.writer.write_all(&[action])?;
        self.writer.flush()?;
        let frame = self.read_frame()?;
        let mut buf = [0u8; 8];
        read_wire(&mut self.reader, &mut buf, "reward")?;
        let reward = f64::from_le_bytes(buf);
        if !reward.is_finite() {
            return Err(Error::Protocol {
                detail: "non-finite reward".to_string(),
            });
        }
        let mut flag = [0u8; 1];
        read_wire(&mut self.reader, &mut flag, "terminal flag")?;
        let terminal = match flag[0] {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Protocol {
                    detail: format!("terminal flag {other}, expected 0 or 1"),
                })
            }
        };
        self.over = terminal;
        Ok(StepOutcome {
            frame,
            reward,
            terminal,
            frames_elapsed: 1,
        })
    }

    fn minimal_actions(&self) -> &[u8] {
        &self.minimal
    }

    fn full_action_count(&self) -> u32 {
        self.full_actions
    }
}

impl Drop for WireEnv {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    let bytes = frame.as_bytes();
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    // The wire carries raw pre-mapping palette bytes; doubling a mapped
    // color is the inverse the client's mapping expects.
    for &p in bytes {
        w.write_all(&[p << 1])?;
    }
    Ok(())
}

/// Serve one client over a byte stream, exposing `env` via the protocol.
/// Returns cleanly when the client closes the connection between commands.
pub fn serve_connection<E: Environment>(
    env: &mut E,
    reader: &mut impl Read,
    writer: &mut impl Write,
) -> Result<()> {
    let mut writer = BufWriter::new(writer);
    writer.write_all(WIRE_MAGIC)?;
    writer.write_all(&(WIDTH as u32).to_le_bytes())?;
    writer.write_all(&(HEIGHT as u32).to_le_bytes())?;
    writer.write_all(&env.full_action_count().to_le_bytes())?;
    let minimal = env.minimal_actions().to_vec();
    writer.write_all(&(minimal.len() as u32).to_le_bytes())?;
    writer.write_all(&minimal)?;
    writer.flush()?;

    loop {
        let mut cmd = [0u8; 4];
        match reader.read(&mut cmd[..1]) {
            Ok(0) => return Ok(()),
            Ok(_) => {}
            Err(e) => return Err(Error::Io(e)),
        }
        read_wire(reader, &mut cmd[1..], "command")?;
        if &cmd == CMD_RESET {
            let mut seed = [0u8; 8];
            read_wire(reader, &mut seed, "seed")?;
            let frame = env.reset(u64::from_le_bytes(seed))?;
            write_frame(&mut writer, &frame)?;
        } else if &cmd == CMD_STEP {
            let mut action = [0u8; 1];
            read_wire(reader, &mut action, "action")?;
            let out = env.step(action[0])?;
            write_frame(&mut writer, &out.frame)?;
            writer.write_all(&out.reward.to_le_bytes())?;
            writer.write_all(&[u8::from(out.terminal)])?;
        } else {
            return Err(Error::Protocol {
                detail: format!("unknown command {cmd:?}"),
            });
        }
        writer.flush()?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MiniPong;

    fn handshake_bytes(minimal: &[u8]) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(WIRE_MAGIC);
        bytes.extend_from_slice(&(WIDTH as u32).to_le_bytes());
        bytes.extend_from_slice(&(HEIGHT as u32).to_le_bytes());
        bytes.extend_from_slice(&18u32.to_le_bytes());
        bytes.extend_from_slice(&(minimal.len() as u32).to_le_bytes());
        bytes.extend_from_slice(minimal);
        bytes
    }

    #[test]
    fn handshake_reports_the_action_sets() {
        let bytes = handshake_bytes(&[0, 2, 5]);
        let env = WireEnv::connect(std::io::Cursor::new(bytes), Vec::new()).unwrap();
        assert_eq!(env.minimal_actions(), &[0, 2, 5]);
        assert_eq!(env.full_action_count(), 18);
    }

    #[test]
    fn handshake_rejects_bad_magic() {
        let mut bytes = handshake_bytes(&[0]);
        bytes[0] = b'X';
        assert!(matches!(
            WireEnv::connect(std::io::Cursor::new(bytes), Vec::new()),
            Err(Error::Handshake { .. })
        ));
    }

    #[test]
    fn handshake_rejects_wrong_dimensions() {
        let mut bytes = handshake_bytes(&[0]);
        bytes[8..12].copy_from_slice(&84u32.to_le_bytes());
        assert!(matches!(
            WireEnv::connect(std::io::Cursor::new(bytes), Vec::new()),
            Err(Error::Handshake { .. })
        ));
    }

    #[test]
    fn handshake_rejects_duplicate_minimal_actions() {
        let bytes = handshake_bytes(&[0, 3, 3]);
        assert!(matches!(
            WireEnv::connect(std::io::Cursor::new(bytes), Vec::new()),
            Err(Error::Handshake { .. })
        ));
    }

    #[test]
    fn step_before_reset_is_an_episode_error() {
        let bytes = handshake_bytes(&[0]);
        let mut env = WireEnv::connect(std::io::Cursor::new(bytes), Vec::new()).unwrap();
        assert!(matches!(env.step(0), Err(Error::EpisodeOver)));
    }

    #[test]
    fn truncated_frame_payload_is_a_protocol_error() {
        let mut bytes = handshake_bytes(&[0]);
        bytes.extend_from_slice(&((WIDTH * HEIGHT) as u32).to_le_bytes());
        bytes.extend_from_slice(&[0u8; 100]);
        let mut env = WireEnv::connect(std::io::Cursor::new(bytes), Vec::new()).unwrap();
        assert!(matches!(env.reset(0), Err(Error::Protocol { .. })));
    }

    #[test]
    fn server_sends_pre_mapping_palette_bytes() {
        struct Solid;
        impl Environment for Solid {
            fn reset(&mut self, _seed: u64) -> Result<Frame> {
                Ok(Frame::filled(3))
            }
            fn step(&mut self, _action: u8) -> Result<StepOutcome> {
                unreachable!()
            }
            fn minimal_actions(&self) -> &[u8] {
                &[0]
            }
        }
        let mut request = Vec::new();
        request.extend_from_slice(CMD_RESET);
        request.extend_from_slice(&7u64.to_le_bytes());
        let mut response = Vec::new();
        serve_connection(&mut Solid, &mut request.as_slice(), &mut response).unwrap();

        let header = 8 + 4 + 4 + 4 + 4 + 1;
        let payload = &response[header..];
        assert_eq!(&payload[..4], &((WIDTH * HEIGHT) as u32).to_le_bytes());
        assert!(payload[4..].iter().all(|&b| b == 6), "3 doubles to 6");
        assert_eq!(payload.len(), 4 + WIDTH * HEIGHT);
    }

    #[cfg(unix)]
    #[test]
    fn wire_round_trip_matches_the_direct_environment() {
        use std::os::unix::net::UnixStream;

        let (client_side, server_side) = UnixStream::pair().unwrap();
        let server = std::thread::spawn(move || {
            let mut env = MiniPong::new();
            let mut reader = server_side.try_clone().unwrap();
            let mut writer = server_side;
            serve_connection(&mut env, &mut reader, &mut writer).unwrap();
        });

        let reader = client_side.try_clone().unwrap();
        let mut wire = WireEnv::connect(reader, client_side).unwrap();
        let mut direct = MiniPong::new();
        assert_eq!(wire.minimal_actions(), direct.minimal_actions());

        for seed in [0u64, 9] {
            let wf = wire.reset(seed).unwrap();
            let df = direct.reset(seed).unwrap();
            assert_eq!(wf.as_bytes(), df.as_bytes());
            for i in 0..200u32 {
                let action = (i % 3) as u8;
                let w = wire.step(action).unwrap();
                let d = direct.step(action).unwrap();
                assert_eq!(w.frame.as_bytes(), d.frame.as_bytes());
                assert_eq!(w.reward, d.reward);
                assert_eq!(w.terminal, d.terminal);
                if w.terminal {
                    break;
                }
            }
        }
        drop(wire);
        server.join().unwrap();
    }
}
