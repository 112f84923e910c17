use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use dbtree::kvserver::{net, KvServer, ServerOptions};
use dbtree::wire::{load_cluster_file, ServerId};

/// Storage server for one partition of the key-value store.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Address to accept connections on, host:port.
    #[arg(long)]
    listen: String,
    /// This server's position in the cluster file.
    #[arg(long)]
    server_id: u16,
    /// Cluster membership file, one host:port per line.
    #[arg(long)]
    cluster: PathBuf,
    /// Directory for the commit log and oracle state; volatile when omitted.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Host the timestamp oracle (server 0 only).
    #[arg(long)]
    oracle: bool,
}

fn run(args: Args) -> Result<(), String> {
    let members = load_cluster_file(&args.cluster).map_err(|e| format!("cluster file: {e}"))?;
    let id = args.server_id as usize;
    if id >= members.len() {
        return Err(format!("server id {id} outside a cluster of {}", members.len()));
    }
    if args.oracle && id != 0 {
        return Err("only server 0 can host the oracle".into());
    }
    let listener = TcpListener::bind(&args.listen).map_err(|e| format!("cannot listen on {}: {e}", args.listen))?;
    let opts = ServerOptions {
        data_dir: args.data_dir,
        oracle: args.oracle,
        ..ServerOptions::new(ServerId(args.server_id), members.len())
    };
    let server = KvServer::open(opts).map_err(|e| format!("cannot open data dir: {e}"))?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    println!("listening on {addr}");
    std::io::stdout().flush().map_err(|e| e.to_string())?;
    net::serve_forever(listener, Arc::new(server)).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dbtree-server: {e}");
            ExitCode::FAILURE
        }
    }
}
