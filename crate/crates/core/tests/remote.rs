use std::io::{BufRead, BufReader, Cursor, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use deepecpr::denoisers::remote::{
    read_frame, serve_connection, write_frame, Endpoint, Frame, FrameType, ImagePayload, MAGIC, VERSION,
};
use deepecpr::denoisers::{Denoiser, RemoteDenoiser};
use deepecpr::{Error, Image, Rng};

const ECHO: &str = env!("CARGO_BIN_EXE_ecpr-echo-denoiser");
const TIMEOUT: Duration = Duration::from_secs(5);

struct TcpServer {
    child: Child,
    addr: String,
}

impl TcpServer {
    fn start() -> Self {
        let mut child = Command::new(ECHO)
            .args(["--tcp", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        Self {
            child,
            addr: line.trim().to_string(),
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Pixels exactly representable in f32 so the echo must be bit-exact.
fn random_image(rng: &mut Rng) -> Image {
    let h = 1 + (rng.uniform() * 24.0) as usize;
    let w = 1 + (rng.uniform() * 24.0) as usize;
    let c = if rng.uniform() < 0.5 { 1 } else { 3 };
    Image::from_fn(h, w, c, |_, _, _| (rng.uniform() * 300.0 - 20.0) as f32 as f64).unwrap()
}

fn echo_many(denoiser: &RemoteDenoiser, seed: u64) {
    denoiser.ping().unwrap();
    let mut rng = Rng::new(seed);
    for _ in 0..100 {
        let img = random_image(&mut rng);
        let out = denoiser.denoise(&img, 1.0 + rng.uniform() * 1e4).unwrap();
        assert_eq!(out, img);
    }
}

#[test]
fn tcp_echo_is_bit_exact() {
    let server = TcpServer::start();
    let endpoint: Endpoint = server.addr.parse().unwrap();
    let denoiser = RemoteDenoiser::connect(endpoint, TIMEOUT).unwrap();
    echo_many(&denoiser, 1);
}

#[test]
fn stdio_echo_is_bit_exact() {
    let endpoint: Endpoint = format!("stdio:{ECHO}").parse().unwrap();
    let denoiser = RemoteDenoiser::connect(endpoint, TIMEOUT).unwrap();
    assert_eq!(denoiser.name(), format!("remote:stdio:{ECHO}"));
    echo_many(&denoiser, 2);
}

#[test]
fn ping_answers_quickly() {
    let server = TcpServer::start();
    let denoiser = RemoteDenoiser::connect(server.addr.parse().unwrap(), TIMEOUT).unwrap();
    let start = Instant::now();
    denoiser.ping().unwrap();
    assert!(start.elapsed() < Duration::from_secs(1));
}

#[test]
fn absent_server_is_a_connection_error() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let start = Instant::now();
    let err = RemoteDenoiser::connect(format!("127.0.0.1:{port}").parse().unwrap(), Duration::from_millis(500))
        .unwrap_err();
    assert!(matches!(err, Error::Connection(_)), "{err}");
    assert!(start.elapsed() < Duration::from_secs(2));
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hold = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        thread::sleep(Duration::from_secs(2));
        drop(stream);
    });
    let denoiser = RemoteDenoiser::connect(addr.to_string().parse().unwrap(), Duration::from_millis(300)).unwrap();
    let img = Image::zeros(2, 2, 1).unwrap();
    let start = Instant::now();
    let err = denoiser.denoise(&img, 1.0).unwrap_err();
    assert!(matches!(err, Error::Connection(_)), "{err}");
    assert!(start.elapsed() < Duration::from_millis(1500));
    // The failed connection is closed, not reused.
    assert!(matches!(denoiser.ping(), Err(Error::Connection(_))));
    hold.join().unwrap();
}

fn one_shot_server(reply: Vec<u8>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let _ = read_frame(&mut stream);
        let _ = stream.write_all(&reply);
        let _ = stream.flush();
        thread::sleep(Duration::from_millis(200));
    });
    addr
}

#[test]
fn bad_magic_is_a_protocol_error() {
    let mut reply = Frame::new(FrameType::Pong, Vec::new()).encode();
    reply[..4].copy_from_slice(b"XXXX");
    let addr = one_shot_server(reply);
    let denoiser = RemoteDenoiser::connect(addr.parse().unwrap(), TIMEOUT).unwrap();
    let err = denoiser.ping().unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn error_frame_is_a_remote_error() {
    let addr = one_shot_server(Frame::new(FrameType::Error, b"model exploded".to_vec()).encode());
    let denoiser = RemoteDenoiser::connect(addr.parse().unwrap(), TIMEOUT).unwrap();
    match denoiser.denoise(&Image::zeros(2, 2, 1).unwrap(), 1.0) {
        Err(Error::Remote(msg)) => assert_eq!(msg, "model exploded"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn mismatched_response_shape_is_a_protocol_error() {
    let body = ImagePayload::from_image(&Image::zeros(3, 2, 1).unwrap(), None).encode();
    let addr = one_shot_server(Frame::new(FrameType::DenoiseResponse, body).encode());
    let denoiser = RemoteDenoiser::connect(addr.parse().unwrap(), TIMEOUT).unwrap();
    let err = denoiser.denoise(&Image::zeros(2, 2, 1).unwrap(), 1.0).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

fn request(height: u32, width: u32, variance: f64) -> Frame {
    let payload = ImagePayload {
        height,
        width,
        channels: 1,
        variance: Some(variance),
        pixels: vec![1.0; (height * width) as usize],
    };
    Frame::new(FrameType::DenoiseRequest, payload.encode())
}

#[test]
fn shape_violation_keeps_connection_open() {
    let server = TcpServer::start();
    let mut stream = TcpStream::connect(&server.addr).unwrap();
    stream.set_read_timeout(Some(TIMEOUT)).unwrap();
    write_frame(&mut stream, &request(0, 4, 1.0)).unwrap();
    let reply = read_frame(&mut stream).unwrap().unwrap();
    assert_eq!(reply.kind, FrameType::Error);
    assert!(String::from_utf8_lossy(&reply.payload).contains("shape"));
    write_frame(&mut stream, &Frame::new(FrameType::Ping, Vec::new())).unwrap();
    assert_eq!(read_frame(&mut stream).unwrap().unwrap().kind, FrameType::Pong);
    write_frame(&mut stream, &request(2, 2, 3.0)).unwrap();
    assert_eq!(read_frame(&mut stream).unwrap().unwrap().kind, FrameType::DenoiseResponse);
}

#[test]
fn malformed_frame_gets_error_then_close() {
    let server = TcpServer::start();
    let mut stream = TcpStream::connect(&server.addr).unwrap();
    stream.set_read_timeout(Some(TIMEOUT)).unwrap();
    stream.write_all(b"NOPE\x01\x04\x00\x00\x00\x00").unwrap();
    let reply = read_frame(&mut stream).unwrap().unwrap();
    assert_eq!(reply.kind, FrameType::Error);
    let mut rest = Vec::new();
    stream.read_to_end(&mut rest).unwrap();
    assert!(rest.is_empty());
}

/// Random byte soup, truncated frames and valid requests with corrupted
/// fields. The server must answer within the contract and never panic.
#[test]
fn fuzzed_frames_never_crash_the_server() {
    let mut rng = Rng::new(99);
    let byte = |rng: &mut Rng| (rng.uniform() * 256.0) as u8;
    for case in 0..1000 {
        let mut input = request(3, 2, 4.0).encode();
        match case % 5 {
            0 => input = (0..(rng.uniform() * 64.0) as usize).map(|_| byte(&mut rng)).collect(),
            1 => input.truncate((rng.uniform() * input.len() as f64) as usize),
            2 => {
                let k = (rng.uniform() * input.len() as f64) as usize;
                input[k] = byte(&mut rng);
            }
            3 => {
                // Consistent header, garbage payload.
                let n = (rng.uniform() * 48.0) as usize;
                let payload: Vec<u8> = (0..n).map(|_| byte(&mut rng)).collect();
                input = Frame::new(FrameType::DenoiseRequest, payload).encode();
            }
            _ => {
                input[6..10].copy_from_slice(&((rng.uniform() * 4e9) as u32).to_le_bytes());
            }
        }
        let mut out = Vec::new();
        let result = serve_connection(&mut Cursor::new(&input), &mut out, |img, _| Ok(img.clone()));
        assert!(result.is_ok(), "case {case}: {result:?}");
        let mut replies = Cursor::new(out);
        while let Some(f) = read_frame(&mut replies).unwrap() {
            assert!(matches!(f.kind, FrameType::Error | FrameType::DenoiseResponse | FrameType::Pong));
        }
    }
    assert_eq!(&MAGIC, b"ECPR");
    assert_eq!(VERSION, 1);
}
