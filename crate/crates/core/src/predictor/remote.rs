//! Protocol client for external predictors and a serial protocol server.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::wire::{read_frame, write_frame, ErrorFrame, Frame, Hello, MaskFrame};
use super::{PredictRequest, PredictResponse, PredictorBackend};
use crate::error::{Error, Result};

type Reply = Sender<Result<PredictResponse>>;

#[derive(Clone)]
enum Broken {
    Closed(String),
    Protocol(String),
}

impl Broken {
    fn error(&self) -> Error {
        match self {
            Broken::Closed(m) => Error::Transport(m.clone()),
            Broken::Protocol(m) => Error::Protocol(m.clone()),
        }
    }
}

#[derive(Default)]
struct Shared {
    pending: HashMap<u64, Reply>,
    /// Ids whose caller gave up; a late answer for them is dropped.
    abandoned: HashSet<u64>,
    broken: Option<Broken>,
}

impl Shared {
    fn fail_all(&mut self, why: Broken) {
        for (_, tx) in self.pending.drain() {
            let _ = tx.send(Err(why.error()));
        }
        self.broken.get_or_insert(why);
    }
}

enum Peer {
    Child(Child),
    Tcp(TcpStream),
}

/// Client for a predictor process reached over pipes or TCP.
///
/// Calls from several threads are pipelined on the one connection; answers
/// are routed back by request id, so the server may reply in any order.
pub struct RemoteBackend {
    writer: Mutex<Option<Box<dyn Write + Send>>>,
    shared: Arc<Mutex<Shared>>,
    peer: Peer,
    timeout: Duration,
    nondeterministic: bool,
}

impl RemoteBackend {
    /// Runs `command` through `sh -c` and talks to it over stdin/stdout.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("cannot start {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(Box::new(stdin), Box::new(stdout), Peer::Child(child), timeout)
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<Self> {
        let addrs: Vec<_> = addr
            .to_socket_addrs()
            .map_err(|e| Error::Transport(format!("cannot resolve {addr}: {e}")))?
            .collect();
        let mut last = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    let reader = stream.try_clone()?;
                    let writer = stream.try_clone()?;
                    return Self::handshake(Box::new(writer), Box::new(reader), Peer::Tcp(stream), timeout);
                }
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Transport(match last {
            Some(e) => format!("cannot connect to {addr}: {e}"),
            None => format!("{addr} resolved to no address"),
        }))
    }

    fn handshake(
        writer: Box<dyn Write + Send>,
        reader: Box<dyn Read + Send>,
        peer: Peer,
        timeout: Duration,
    ) -> Result<Self> {
        let mut writer: Box<dyn Write + Send> = Box::new(BufWriter::new(writer));
        let shared = Arc::new(Mutex::new(Shared::default()));
        let (hello_tx, hello_rx) = mpsc::channel();
        {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name("predictor-reader".into())
                .spawn(move || reader_loop(BufReader::new(reader), hello_tx, shared))?;
        }
        let mut backend = RemoteBackend {
            writer: Mutex::new(None),
            shared,
            peer,
            timeout,
            nondeterministic: false,
        };
        write_frame(&mut writer, &Frame::Hello(Hello::current(false)))
            .map_err(|e| Error::Transport(format!("handshake write failed: {e}")))?;
        *backend.writer.lock().unwrap() = Some(writer);
        let hello: Hello = match hello_rx.recv_timeout(timeout) {
            Ok(r) => r?,
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Handshake("predictor closed before the handshake".into()))
            }
        };
        backend.nondeterministic = hello.nondeterministic;
        Ok(backend)
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }
}

fn reader_loop<R: BufRead>(mut input: R, hello: Sender<Result<Hello>>, shared: Arc<Mutex<Shared>>) {
    let first = match read_frame(&mut input) {
        Ok(Some(Frame::Hello(h))) => h.check().map(|_| h),
        Ok(Some(Frame::Error(e))) => Err(Error::Handshake(e.message)),
        Ok(Some(_)) => Err(Error::Handshake("peer did not answer with hello".into())),
        Ok(None) => Err(Error::Handshake("predictor closed before the handshake".into())),
        Err(e) => Err(Error::Handshake(e.to_string())),
    };
    let ok = first.is_ok();
    let _ = hello.send(first);
    if !ok {
        shared
            .lock()
            .unwrap()
            .fail_all(Broken::Closed("handshake failed".into()));
        return;
    }
    loop {
        let frame = match read_frame(&mut input) {
            Ok(Some(f)) => f,
            Ok(None) => {
                shared
                    .lock()
                    .unwrap()
                    .fail_all(Broken::Closed("predictor closed the connection".into()));
                return;
            }
            Err(Error::Io(e)) => {
                shared.lock().unwrap().fail_all(Broken::Closed(e.to_string()));
                return;
            }
            Err(e) => {
                shared.lock().unwrap().fail_all(Broken::Protocol(e.to_string()));
                return;
            }
        };
        let (id, outcome) = match frame {
            Frame::Mask(m) => (m.id, PredictResponse::try_from(m)),
            Frame::Error(ErrorFrame { id: Some(id), message }) => (id, Err(Error::Predictor { id, message })),
            Frame::Error(ErrorFrame { id: None, message }) => {
                shared
                    .lock()
                    .unwrap()
                    .fail_all(Broken::Protocol(format!("predictor failed: {message}")));
                return;
            }
            other => {
                let kind = match other {
                    Frame::Hello(_) => "hello",
                    _ => "predict",
                };
                shared
                    .lock()
                    .unwrap()
                    .fail_all(Broken::Protocol(format!("unexpected {kind} frame from predictor")));
                return;
            }
        };
        let mut s = shared.lock().unwrap();
        if let Some(tx) = s.pending.remove(&id) {
            let _ = tx.send(outcome);
        } else if !s.abandoned.remove(&id) {
            s.fail_all(Broken::Protocol(format!("response for unknown request {id}")));
            return;
        }
    }
}

impl PredictorBackend for RemoteBackend {
    fn nondeterministic(&self) -> bool {
        self.nondeterministic
    }

    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
        req.validate()?;
        let (tx, rx) = mpsc::channel();
        {
            let mut s = self.shared.lock().unwrap();
            if let Some(b) = &s.broken {
                return Err(b.error());
            }
            if s.pending.contains_key(&req.id) {
                return Err(Error::validation(format!("request id {} is already in flight", req.id)));
            }
            s.pending.insert(req.id, tx);
        }
        let sent = {
            let mut w = self.writer.lock().unwrap();
            match w.as_mut() {
                Some(w) => write_frame(w, &Frame::Predict(req.clone())),
                None => Err(Error::Transport("connection closed".into())),
            }
        };
        if let Err(e) = sent {
            self.shared.lock().unwrap().pending.remove(&req.id);
            return Err(match e {
                Error::Io(e) => Error::Transport(format!("write failed: {e}")),
                other => other,
            });
        }
        let resp = match rx.recv_timeout(self.timeout) {
            Ok(r) => r?,
            Err(RecvTimeoutError::Timeout) => {
                let mut s = self.shared.lock().unwrap();
                if s.pending.remove(&req.id).is_some() {
                    s.abandoned.insert(req.id);
                    return Err(Error::Timeout(self.timeout));
                }
                drop(s);
                // the answer raced the deadline
                rx.recv()
                    .map_err(|_| Error::Internal("reply channel dropped".into()))??
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Internal("reply channel dropped".into()));
            }
        };
        resp.check_against(req)?;
        Ok(resp)
    }
}

impl Drop for RemoteBackend {
    fn drop(&mut self) {
        // closing stdin / the socket tells the server to finish
        self.writer.lock().unwrap().take();
        match &mut self.peer {
            Peer::Child(child) => {
                for _ in 0..50 {
                    if let Ok(Some(_)) = child.try_wait() {
                        return;
                    }
                    thread::sleep(Duration::from_millis(10));
                }
                let _ = child.kill();
                let _ = child.wait();
            }
            Peer::Tcp(stream) => {
                let _ = stream.shutdown(Shutdown::Both);
            }
        }
    }
}

fn send_error<W: Write>(out: &mut W, id: Option<u64>, message: String) {
    let _ = write_frame(out, &Frame::Error(ErrorFrame { id, message }));
}

/// Serves one protocol session, answering requests one at a time.
///
/// Returns when the client closes the stream. Malformed frames and failed
/// handshakes are answered with an error frame and end the session with an
/// error.
pub fn serve<R: BufRead, W: Write>(backend: &dyn PredictorBackend, mut input: R, mut output: W) -> Result<()> {
    match read_frame(&mut input) {
        Ok(Some(Frame::Hello(h))) => {
            if let Err(e) = h.check() {
                send_error(&mut output, None, e.to_string());
                return Err(e);
            }
        }
        Ok(None) => return Ok(()),
        Ok(Some(_)) => {
            let e = Error::Handshake("session must start with hello".into());
            send_error(&mut output, None, e.to_string());
            return Err(e);
        }
        Err(e) => {
            send_error(&mut output, None, e.to_string());
            return Err(e);
        }
    }
    write_frame(&mut output, &Frame::Hello(Hello::current(backend.nondeterministic())))?;
    loop {
        match read_frame(&mut input) {
            Ok(None) => return Ok(()),
            Ok(Some(Frame::Predict(req))) => {
                let frame = match super::predict(backend, &req) {
                    Ok(resp) => Frame::Mask(MaskFrame::from(&resp)),
                    Err(e) => Frame::Error(ErrorFrame {
                        id: Some(req.id),
                        message: e.to_string(),
                    }),
                };
                write_frame(&mut output, &frame)?;
            }
            Ok(Some(_)) => {
                let e = Error::protocol("expected a predict frame");
                send_error(&mut output, None, e.to_string());
                return Err(e);
            }
            Err(e) => {
                send_error(&mut output, None, e.to_string());
                return Err(e);
            }
        }
    }
}

/// Accepts connections and serves each on its own thread.
///
/// Stops after `max_sessions` connections have finished, or never when
/// `None`. Errors of single sessions are reported on stderr and do not stop
/// the listener.
pub fn serve_tcp(backend: &dyn PredictorBackend, listener: &TcpListener, max_sessions: Option<usize>) -> Result<()> {
    thread::scope(|scope| {
        let mut accepted = 0;
        while max_sessions.is_none_or(|m| accepted < m) {
            let (stream, peer) = listener.accept()?;
            accepted += 1;
            scope.spawn(move || {
                let session = stream
                    .try_clone()
                    .map_err(Error::from)
                    .and_then(|r| serve(backend, BufReader::new(r), BufWriter::new(stream)));
                if let Err(e) = session {
                    eprintln!("session with {peer}: {e}");
                }
            });
        }
        Ok(())
    })
}
