//! Spawn a cluster of server processes on localhost.

use std::io::{self, BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

/// Line a server prints on stdout once it accepts connections.
pub const READY_PREFIX: &str = "listening on ";

#[derive(Debug, thiserror::Error)]
pub enum LaunchError {
    #[error("cannot spawn {binary}: {source}")]
    Spawn { binary: PathBuf, source: io::Error },
    #[error("server {id} failed to start: {message}")]
    Startup { id: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug)]
pub struct LaunchConfig {
    pub binary: PathBuf,
    pub servers: usize,
    pub base_port: u16,
    pub host: String,
    /// Holds `cluster.txt` and one data directory per server.
    pub dir: PathBuf,
    pub ready_timeout: Duration,
}

impl LaunchConfig {
    pub fn new(binary: impl Into<PathBuf>, servers: usize, base_port: u16, dir: impl Into<PathBuf>) -> LaunchConfig {
        LaunchConfig {
            binary: binary.into(),
            servers,
            base_port,
            host: "127.0.0.1".into(),
            dir: dir.into(),
            ready_timeout: Duration::from_secs(10),
        }
    }

    pub fn addrs(&self) -> Vec<String> {
        (0..self.servers).map(|i| format!("{}:{}", self.host, self.base_port as usize + i)).collect()
    }

    pub fn cluster_file(&self) -> PathBuf {
        self.dir.join("cluster.txt")
    }

    pub fn data_dir(&self, id: usize) -> PathBuf {
        self.dir.join(format!("server-{id}"))
    }
}

/// Running server processes; killed on drop.
pub struct LocalCluster {
    config: LaunchConfig,
    children: Vec<Option<Child>>,
}

impl LocalCluster {
    /// Write the cluster file, start every server and wait until each one
    /// reports readiness.
    pub fn start(config: LaunchConfig) -> Result<LocalCluster, LaunchError> {
        std::fs::create_dir_all(&config.dir)?;
        let mut text = String::from("# generated by the cluster launcher\n");
        for a in config.addrs() {
            text.push_str(&a);
            text.push('\n');
        }
        std::fs::write(config.cluster_file(), text)?;
        let mut cluster = LocalCluster { children: (0..config.servers).map(|_| None).collect(), config };
        for id in 0..cluster.config.servers {
            cluster.start_server(id)?;
        }
        Ok(cluster)
    }

    pub fn config(&self) -> &LaunchConfig {
        &self.config
    }

    pub fn addrs(&self) -> Vec<String> {
        self.config.addrs()
    }

    pub fn cluster_file(&self) -> PathBuf {
        self.config.cluster_file()
    }

    /// (Re)start server `id` with its existing data directory.
    pub fn start_server(&mut self, id: usize) -> Result<(), LaunchError> {
        self.kill_server(id);
        let cfg = &self.config;
        let mut cmd = Command::new(&cfg.binary);
        cmd.arg("--listen")
            .arg(&cfg.addrs()[id])
            .arg("--server-id")
            .arg(id.to_string())
            .arg("--cluster")
            .arg(cfg.cluster_file())
            .arg("--data-dir")
            .arg(cfg.data_dir(id))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if id == 0 {
            cmd.arg("--oracle");
        }
        let mut child = cmd.spawn().map_err(|source| LaunchError::Spawn { binary: cfg.binary.clone(), source })?;
        let stdout = child.stdout.take().unwrap();
        let stderr = child.stderr.take().unwrap();
        match wait_ready(stdout, cfg.ready_timeout) {
            Ok(()) => {
                // keep draining stderr so the server never blocks on it
                thread::spawn(move || {
                    for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                        log::debug!("server {id}: {line}");
                    }
                });
                self.children[id] = Some(child);
                Ok(())
            }
            Err(why) => {
                let _ = child.kill();
                let _ = child.wait();
                let mut err = String::new();
                let _ = BufReader::new(stderr).read_to_string(&mut err);
                let message = match err.trim() {
                    "" => why,
                    e => format!("{why}: {e}"),
                };
                Err(LaunchError::Startup { id, message })
            }
        }
    }

    /// Kill server `id` without any shutdown courtesy.
    pub fn kill_server(&mut self, id: usize) {
        if let Some(mut c) = self.children[id].take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }

    pub fn kill_all(&mut self) {
        for id in 0..self.children.len() {
            self.kill_server(id);
        }
    }

    pub fn restart_all(&mut self) -> Result<(), LaunchError> {
        self.kill_all();
        for id in 0..self.children.len() {
            self.start_server(id)?;
        }
        Ok(())
    }

    /// The id of a server that has exited since it was started, if any.
    pub fn poll_exited(&mut self) -> io::Result<Option<usize>> {
        for (id, c) in self.children.iter_mut().enumerate() {
            if let Some(child) = c {
                if child.try_wait()?.is_some() {
                    *c = None;
                    return Ok(Some(id));
                }
            }
        }
        Ok(None)
    }
}

impl Drop for LocalCluster {
    fn drop(&mut self) {
        self.kill_all();
    }
}

fn wait_ready(stdout: impl Read + Send + 'static, timeout: Duration) -> Result<(), String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut lines = BufReader::new(stdout).lines();
        let first = lines.next();
        let _ = tx.send(first);
        // drain the rest so the server never blocks writing
        for _ in lines {}
    });
    match rx.recv_timeout(timeout) {
        Ok(Some(Ok(line))) if line.starts_with(READY_PREFIX) => Ok(()),
        Ok(Some(Ok(line))) => Err(format!("unexpected output {line:?}")),
        Ok(Some(Err(e))) => Err(e.to_string()),
        Ok(None) => Err("exited before becoming ready".into()),
        Err(_) => Err(format!("not ready after {timeout:?}")),
    }
}

/// The server binary installed next to the running executable.
pub fn sibling_binary(name: &str) -> io::Result<PathBuf> {
    let exe = std::env::current_exe()?;
    let dir = exe.parent().unwrap_or(Path::new("."));
    Ok(dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX)))
}
