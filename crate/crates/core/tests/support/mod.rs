#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

/// Where to cut one proxied connection. Byte counts are per direction.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cut {
    /// Client to server.
    pub upstream: Option<usize>,
    /// Server to client.
    pub downstream: Option<usize>,
}

/// TCP relay that severs its n-th connection according to `cuts[n]`.
/// Connections past the end of `cuts` are relayed untouched.
pub struct FlakyProxy {
    pub addr: SocketAddr,
    pub connections: Arc<AtomicUsize>,
}

impl FlakyProxy {
    pub fn start(target: SocketAddr, cuts: Vec<Cut>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let connections = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&connections);
        thread::spawn(move || {
            for client in listener.incoming() {
                let Ok(client) = client else { return };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let cut = cuts.get(n).copied().unwrap_or_default();
                let Ok(server) = TcpStream::connect(target) else { return };
                let (c2, s2) = (client.try_clone().unwrap(), server.try_clone().unwrap());
                let (c3, s3) = (client.try_clone().unwrap(), server.try_clone().unwrap());
                thread::spawn(move || relay(client, server, cut.upstream, (c3, s3)));
                let (c4, s4) = (c2.try_clone().unwrap(), s2.try_clone().unwrap());
                thread::spawn(move || relay(s2, c2, cut.downstream, (c4, s4)));
            }
        });
        Self { addr, connections }
    }
}

fn relay(mut from: TcpStream, mut to: TcpStream, limit: Option<usize>, both: (TcpStream, TcpStream)) {
    let mut left = limit.unwrap_or(usize::MAX);
    let mut buf = [0u8; 4096];
    loop {
        let n = match from.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        let n_ok = n.min(left);
        if to.write_all(&buf[..n_ok]).is_err() {
            break;
        }
        left -= n_ok;
        if left == 0 {
            let _ = both.0.shutdown(Shutdown::Both);
            let _ = both.1.shutdown(Shutdown::Both);
            return;
        }
    }
    let _ = to.shutdown(Shutdown::Write);
}

/// Row-major matrix with entries drawn uniformly from [-1, 1).
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()
}
