//! TCP transport for the broker and for a subscribing client session.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};

use super::broker::{Broker, BrokerActions, ConnId};
use super::codec::QoS;
use super::session::{
    Backoff, ClientSession, Delivery, Notice, SessionActions, SessionEvent, SessionState,
};

pub const DEFAULT_BROKER_PORT: u16 = 1883;

enum Outgoing {
    Bytes(Vec<u8>),
    Close,
}

type Senders = Arc<Mutex<HashMap<ConnId, mpsc::UnboundedSender<Outgoing>>>>;

fn dispatch(senders: &Senders, actions: BrokerActions) {
    let map = senders.lock();
    for (to, bytes) in actions.sends {
        if let Some(tx) = map.get(&to) {
            let _ = tx.send(Outgoing::Bytes(bytes));
        }
    }
    for id in actions.close {
        if let Some(tx) = map.get(&id) {
            let _ = tx.send(Outgoing::Close);
        }
    }
}

/// Accepts connections forever, routing through one shared [`Broker`].
pub async fn serve_broker(
    listener: TcpListener,
    broker: Arc<Mutex<Broker>>,
) -> std::io::Result<()> {
    let senders: Senders = Arc::default();
    loop {
        let (stream, peer) = listener.accept().await?;
        stream.set_nodelay(true)?;
        let conn = broker.lock().open();
        log::debug!("broker: conn {conn} from {peer}");
        let (tx, mut rx) = mpsc::unbounded_channel();
        senders.lock().insert(conn, tx);
        let (mut rd, mut wr) = stream.into_split();
        tokio::spawn(async move {
            while let Some(msg) = rx.recv().await {
                match msg {
                    Outgoing::Bytes(b) => {
                        if wr.write_all(&b).await.is_err() {
                            break;
                        }
                    }
                    Outgoing::Close => break,
                }
            }
            let _ = wr.shutdown().await;
        });
        let broker = broker.clone();
        let senders = senders.clone();
        tokio::spawn(async move {
            let mut buf = vec![0u8; 4096];
            loop {
                match rd.read(&mut buf).await {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        let actions = broker.lock().handle_bytes(conn, &buf[..n]);
                        let closing = actions.close.contains(&conn);
                        dispatch(&senders, actions);
                        if closing {
                            break;
                        }
                    }
                }
            }
            broker.lock().close(conn);
            if let Some(tx) = senders.lock().remove(&conn) {
                let _ = tx.send(Outgoing::Close);
            }
        });
    }
}

#[derive(Debug, Clone)]
pub struct SubscriberConfig {
    pub addr: String,
    pub client_id: String,
    pub keep_alive_s: u16,
    pub filters: Vec<(String, QoS)>,
}

/// Keeps a subscribing session alive against `addr`, reconnecting with
/// exponential backoff, and hands every delivery to `on_delivery` until
/// `shutdown` flips to true.
pub async fn run_subscriber<F>(
    cfg: SubscriberConfig,
    mut on_delivery: F,
    mut shutdown: watch::Receiver<bool>,
) where
    F: FnMut(Delivery) + Send,
{
    let epoch = Instant::now();
    let now = move || epoch.elapsed().as_secs_f64();
    let mut backoff = Backoff::default();
    let mut session = ClientSession::new(cfg.client_id.clone(), cfg.keep_alive_s);
    while !*shutdown.borrow() {
        match TcpStream::connect(&cfg.addr).await {
            Ok(mut stream) => {
                let _ = stream.set_nodelay(true);
                let outcome = drive_connection(
                    &mut stream,
                    &mut session,
                    &cfg,
                    &now,
                    &mut on_delivery,
                    &mut shutdown,
                    &mut backoff,
                )
                .await;
                session.step(SessionEvent::ConnectionLost { now: now() });
                if let Err(e) = outcome {
                    log::warn!("mqtt {}: {e}", cfg.addr);
                }
            }
            Err(e) => log::warn!("mqtt connect {}: {e}", cfg.addr),
        }
        let delay = Duration::from_secs_f64(backoff.next_delay());
        tokio::select! {
            _ = tokio::time::sleep(delay) => {}
            _ = shutdown.changed() => {}
        }
    }
}

async fn write_actions(stream: &mut TcpStream, act: &SessionActions) -> std::io::Result<()> {
    if !act.bytes_out.is_empty() {
        stream.write_all(&act.bytes_out).await?;
    }
    Ok(())
}

async fn drive_connection<F: FnMut(Delivery)>(
    stream: &mut TcpStream,
    session: &mut ClientSession,
    cfg: &SubscriberConfig,
    now: &impl Fn() -> f64,
    on_delivery: &mut F,
    shutdown: &mut watch::Receiver<bool>,
    backoff: &mut Backoff,
) -> std::io::Result<()> {
    let act = session.step(SessionEvent::ConnectRequested { now: now() });
    write_actions(stream, &act).await?;
    let mut buf = vec![0u8; 8192];
    let mut ticker = tokio::time::interval(Duration::from_millis(500));
    let mut subscribed = false;
    loop {
        tokio::select! {
            r = stream.read(&mut buf) => {
                let n = r?;
                if n == 0 {
                    return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "broker closed"));
                }
                let act = session.step(SessionEvent::BytesIn { data: &buf[..n], now: now() });
                write_actions(stream, &act).await?;
                for d in act.deliveries {
                    on_delivery(d);
                }
                for notice in &act.notices {
                    if let Notice::ConnectRefused(_) | Notice::ProtocolError(_) = notice {
                        log::warn!("mqtt session: {notice:?}");
                    }
                }
            }
            _ = ticker.tick() => {
                let act = session.step(SessionEvent::Tick { now: now() });
                write_actions(stream, &act).await?;
            }
            _ = shutdown.changed() => {
                let act = session.step(SessionEvent::DisconnectRequested { now: now() });
                write_actions(stream, &act).await?;
                return Ok(());
            }
        }
        match session.state() {
            SessionState::Connected if !subscribed => {
                backoff.reset();
                subscribed = true;
                let act = session.step(SessionEvent::SubscribeRequested {
                    filters: cfg.filters.clone(),
                    now: now(),
                });
                write_actions(stream, &act).await?;
            }
            SessionState::Disconnected => {
                return Err(std::io::Error::other("session dropped"));
            }
            _ => {}
        }
    }
}
