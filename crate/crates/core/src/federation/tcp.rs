//! TCP transport: the server side collects reports from connected group
//! clients; [`serve_client`] is the group side.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::protocol::{DecodeError, Hello, Message, PROTOCOL_VERSION};
use super::{client_evaluate, FederationError, GroupClient, RewardReport, RolloutBroadcast, Transport};
use crate::domain::GroupId;

struct Connection {
    group: GroupId,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Connection {
    fn send(&mut self, msg: &Message) -> Result<(), FederationError> {
        send_line(&mut self.writer, msg)
    }
}

fn send_line(w: &mut TcpStream, msg: &Message) -> Result<(), FederationError> {
    let mut line = msg.encode();
    line.push('\n');
    w.write_all(line.as_bytes())?;
    w.flush()?;
    Ok(())
}

enum ReadOutcome {
    Line(String),
    Eof,
    TimedOut,
}

fn read_line_until(
    reader: &mut BufReader<TcpStream>,
    deadline: Instant,
) -> Result<ReadOutcome, FederationError> {
    let mut buf = String::new();
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Ok(ReadOutcome::TimedOut);
        }
        reader.get_ref().set_read_timeout(Some(left))?;
        match reader.read_line(&mut buf) {
            Ok(0) => return Ok(ReadOutcome::Eof),
            Ok(_) if buf.ends_with('\n') => return Ok(ReadOutcome::Line(buf)),
            Ok(_) => continue,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                continue
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
}

/// Server end of the TCP federation.
pub struct TcpTransport {
    conns: Vec<Connection>,
    deadline: Duration,
}

impl TcpTransport {
    /// Waits until every group in `groups` has connected and said hello.
    /// Connections are kept in `groups` order.
    pub fn accept(
        listener: &TcpListener,
        groups: &[GroupId],
        deadline: Duration,
    ) -> Result<Self, FederationError> {
        let until = Instant::now() + deadline;
        listener.set_nonblocking(true)?;
        let mut pending: Vec<Option<Connection>> = groups.iter().map(|_| None).collect();
        while pending.iter().any(Option::is_none) {
            let stream = match listener.accept() {
                Ok((s, _)) => s,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= until {
                        let missing = groups
                            .iter()
                            .zip(&pending)
                            .find(|(_, c)| c.is_none())
                            .map(|(g, _)| g.to_string())
                            .unwrap_or_default();
                        return Err(FederationError::Timeout(missing));
                    }
                    std::thread::sleep(Duration::from_millis(2));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stream.set_nonblocking(false)?;
            stream.set_nodelay(true)?;
            let mut conn = Connection {
                group: GroupId::new("?").expect("non-empty"),
                writer: stream.try_clone()?,
                reader: BufReader::new(stream),
            };
            let hello = match read_line_until(&mut conn.reader, until)? {
                ReadOutcome::Line(l) => Message::decode(&l),
                _ => continue,
            };
            let group = match hello {
                Ok(Message::Hello(Hello {
                    group,
                    protocol_version: PROTOCOL_VERSION,
                })) => group,
                Ok(Message::Hello(h)) => {
                    let _ = conn.send(&Message::error(format!(
                        "unsupported protocol version {}",
                        h.protocol_version
                    )));
                    continue;
                }
                Ok(_) | Err(_) => {
                    let _ = conn.send(&Message::error("expected hello"));
                    continue;
                }
            };
            match groups.iter().position(|g| *g == group) {
                Some(i) if pending[i].is_none() => {
                    debug!("group {group} connected");
                    conn.group = group;
                    pending[i] = Some(conn);
                }
                _ => {
                    warn!("rejecting connection from {group}");
                    let _ = conn.send(&Message::error(format!("unexpected group {group}")));
                }
            }
        }
        Ok(Self {
            conns: pending.into_iter().map(|c| c.expect("all connected")).collect(),
            deadline,
        })
    }

    fn read_report(
        conn: &mut Connection,
        broadcast: &RolloutBroadcast,
        until: Instant,
    ) -> Result<RewardReport, FederationError> {
        let group = conn.group.to_string();
        let line = match read_line_until(&mut conn.reader, until)? {
            ReadOutcome::Line(l) => l,
            ReadOutcome::Eof => return Err(FederationError::Disconnected(group)),
            ReadOutcome::TimedOut => return Err(FederationError::Timeout(group)),
        };
        match Message::decode(&line) {
            Ok(Message::RewardReport(r)) => {
                if r.group != conn.group {
                    return Err(FederationError::BadReport {
                        group,
                        reason: format!("report signed as {}", r.group),
                    });
                }
                if r.iteration != broadcast.iteration {
                    return Err(FederationError::BadReport {
                        group,
                        reason: format!("iteration {} != {}", r.iteration, broadcast.iteration),
                    });
                }
                Ok(r)
            }
            Ok(Message::Error(e)) => Err(FederationError::ClientError {
                group,
                message: e.message,
            }),
            Ok(other) => Err(FederationError::Protocol(format!(
                "{group} sent {other:?} instead of a reward report"
            ))),
            Err(DecodeError::UnknownType(t)) => {
                let _ = conn.send(&Message::error(format!("unknown message type {t:?}")));
                let _ = conn.writer.shutdown(std::net::Shutdown::Both);
                Err(FederationError::Protocol(format!("{group} sent unknown type {t:?}")))
            }
            Err(e) => Err(FederationError::Protocol(format!("{group}: {e}"))),
        }
    }
}

impl Transport for TcpTransport {
    fn groups(&self) -> Vec<GroupId> {
        self.conns.iter().map(|c| c.group.clone()).collect()
    }

    fn collect(
        &mut self,
        broadcast: &RolloutBroadcast,
    ) -> Result<Vec<RewardReport>, FederationError> {
        let msg = Message::Rollout(broadcast.clone());
        for c in &mut self.conns {
            c.send(&msg)?;
        }
        let until = Instant::now() + self.deadline;
        self.conns
            .iter_mut()
            .map(|c| Self::read_report(c, broadcast, until))
            .collect()
    }

    fn shutdown(&mut self) -> Result<(), FederationError> {
        for c in &mut self.conns {
            let _ = c.send(&Message::Shutdown);
        }
        self.conns.clear();
        Ok(())
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

fn connect_with_retry(addr: SocketAddr, patience: Duration) -> Result<TcpStream, FederationError> {
    let until = Instant::now() + patience;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < until => {
                debug!("connect to {addr} failed ({e}), retrying");
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Runs a group client against a server until it says shutdown or closes
/// the connection. Rollouts the client cannot score get an error reply.
pub fn serve_client(
    addr: impl ToSocketAddrs,
    client: &GroupClient,
    connect_patience: Duration,
) -> Result<(), FederationError> {
    let addr = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| FederationError::Protocol("no address to connect to".into()))?;
    let stream = connect_with_retry(addr, connect_patience)?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    send_line(
        &mut writer,
        &Message::Hello(Hello {
            group: client.group().clone(),
            protocol_version: PROTOCOL_VERSION,
        }),
    )?;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        match Message::decode(&line) {
            Ok(Message::Rollout(b)) => match client_evaluate(client, &b) {
                Ok(report) => send_line(&mut writer, &Message::RewardReport(report))?,
                Err(e) => send_line(&mut writer, &Message::error(e.to_string()))?,
            },
            Ok(Message::Shutdown) => return Ok(()),
            Ok(Message::Error(e)) => {
                return Err(FederationError::ClientError {
                    group: "server".into(),
                    message: e.message,
                })
            }
            Ok(other) => {
                send_line(&mut writer, &Message::error(format!("unexpected {other:?}")))?;
            }
            Err(DecodeError::UnknownType(t)) => {
                let _ = send_line(&mut writer, &Message::error(format!("unknown message type {t:?}")));
                return Err(FederationError::Protocol(format!("server sent unknown type {t:?}")));
            }
            Err(e) => {
                send_line(&mut writer, &Message::error(e.to_string()))?;
            }
        }
    }
}
