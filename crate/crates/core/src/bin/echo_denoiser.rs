//! Identity denoiser server speaking the remote-denoiser wire protocol.
//! Serves one session on stdin/stdout, or any number of TCP sessions with
//! `--tcp ADDR`. Useful for protocol testing and as a template for model
//! servers.

use std::io::{self, BufReader, BufWriter};
use std::net::TcpListener;
use std::thread;

use clap::Parser;
use deepecpr::denoisers::remote::serve_connection;
use deepecpr::Image;

#[derive(Parser)]
#[command(about = "Echo every denoise request back unchanged")]
struct Args {
    /// Listen on this address (e.g. 127.0.0.1:0) instead of stdio.
    #[arg(long)]
    tcp: Option<String>,
}

fn echo(img: &Image, _v: f64) -> Result<Image, String> {
    Ok(img.clone())
}

fn main() {
    let args = Args::parse();
    let result = match args.tcp {
        None => {
            let mut reader = BufReader::new(io::stdin().lock());
            let mut writer = io::stdout().lock();
            serve_connection(&mut reader, &mut writer, echo)
        }
        Some(addr) => serve_tcp(&addr),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}

fn serve_tcp(addr: &str) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    // The bound address goes to stdout so callers can use port 0.
    println!("{}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        thread::spawn(move || {
            let mut reader = BufReader::new(stream.try_clone()?);
            let mut writer = BufWriter::new(stream);
            serve_connection(&mut reader, &mut writer, echo)
        });
    }
    Ok(())
}
