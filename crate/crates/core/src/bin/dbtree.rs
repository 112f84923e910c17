use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use dbtree::dbt::TreeId;
use dbtree::sql::{Session, SessionOptions};
use dbtree::tools::{self, launch, LaunchConfig, LocalCluster, WorkloadSpec};
use dbtree::txn::history::History;
use dbtree::txn::Client;
use dbtree::wire::load_cluster_file;
use dbtree::wire::tcp::TcpTransport;

#[derive(Parser)]
#[command(version, about = "Client tools for a dbtree cluster")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Interactive SQL: statements end with ';', \quit exits.
    Shell {
        #[arg(long)]
        cluster: PathBuf,
        /// Fanout for trees created by this shell.
        #[arg(long, default_value_t = dbtree::dbt::DEFAULT_FANOUT)]
        fanout: usize,
    },
    /// Run a workload and print a key: value report.
    Bench {
        #[arg(long)]
        cluster: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Write the recorded history here.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Check a recorded history for snapshot isolation.
    CheckSi { history: PathBuf },
    /// Verify the structure of one tree.
    WalkTree {
        #[arg(long)]
        cluster: PathBuf,
        #[arg(long)]
        tree: u32,
    },
    /// Start servers on consecutive localhost ports until interrupted.
    Launch {
        #[arg(long)]
        servers: usize,
        #[arg(long)]
        base_port: u16,
        /// Cluster file and data directories go here.
        #[arg(long, default_value = "dbtree-cluster")]
        dir: PathBuf,
        /// Server executable; defaults to dbtree-server next to this one.
        #[arg(long)]
        binary: Option<PathBuf>,
    },
}

fn connect(cluster: &Path) -> Result<Client, String> {
    let addrs = load_cluster_file(cluster).map_err(|e| format!("cluster file: {e}"))?;
    Ok(Client::new(Arc::new(TcpTransport::new(addrs))))
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.cmd {
        Cmd::Shell { cluster, fanout } => {
            let client = connect(&cluster)?;
            let mut session = Session::with_options(client, SessionOptions { fanout, ..SessionOptions::default() });
            tools::run_shell(&mut session, io::stdin().lock(), io::stdout().lock()).map_err(|e| e.to_string())?;
            Ok(true)
        }
        Cmd::Bench { cluster, spec, history } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| format!("{}: {e}", spec.display()))?;
            let spec: WorkloadSpec = text.parse().map_err(|e| format!("{e}"))?;
            let addrs = load_cluster_file(&cluster).map_err(|e| format!("cluster file: {e}"))?;
            let result = tools::run_bench(&spec, Arc::new(TcpTransport::new(addrs))).map_err(|e| e.to_string())?;
            print!("{}", result.report);
            if let Some(path) = history {
                let f = File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                result.history.write_to(io::BufWriter::new(f)).map_err(|e| e.to_string())?;
            }
            Ok(true)
        }
        Cmd::CheckSi { history } => {
            let f = File::open(&history).map_err(|e| format!("{}: {e}", history.display()))?;
            let h = History::read_from(BufReader::new(f)).map_err(|e| e.to_string())?;
            match tools::check_si(&h) {
                Ok(report) => {
                    println!("{report}");
                    Ok(true)
                }
                Err(v) => {
                    println!("FAIL: {v}");
                    Ok(false)
                }
            }
        }
        Cmd::WalkTree { cluster, tree } => {
            let client = connect(&cluster)?;
            let report = tools::walk_tree(&client, TreeId(tree)).map_err(|e| e.to_string())?;
            print!("{report}");
            Ok(report.passed())
        }
        Cmd::Launch { servers, base_port, dir, binary } => {
            let binary = match binary {
                Some(b) => b,
                None => launch::sibling_binary("dbtree-server").map_err(|e| e.to_string())?,
            };
            let mut cluster =
                LocalCluster::start(LaunchConfig::new(binary, servers, base_port, &dir)).map_err(|e| e.to_string())?;
            println!("cluster file: {}", cluster.cluster_file().display());
            for (i, a) in cluster.addrs().iter().enumerate() {
                println!("server {i}: {a}");
            }
            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).map_err(|e| e.to_string())?;
            while !stop.load(Ordering::SeqCst) {
                if let Some(id) = cluster.poll_exited().map_err(|e| e.to_string())? {
                    return Err(format!("server {id} exited unexpectedly"));
                }
                std::thread::sleep(Duration::from_millis(100));
            }
            cluster.kill_all();
            println!("stopped");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("dbtree: {e}");
            ExitCode::FAILURE
        }
    }
}
