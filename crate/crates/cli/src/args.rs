use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "cadfs", version, about = "Content-addressed storage for ML assets")]
pub struct Cli {
    /// Store directory.
    #[arg(long, env = "CAD_STORE", global = true)]
    pub store: Option<PathBuf>,

    /// Network configuration (gateways, pinning services), TOML.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Print one JSON document on stdout instead of tab-separated lines.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct ChunkArgs {
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub fanout: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import a file or directory; prints its root CID.
    Add {
        path: PathBuf,
        #[command(flatten)]
        chunking: ChunkArgs,
        /// Don't pin the new root.
        #[arg(long)]
        no_pin: bool,
    },
    /// Export content to a local path.
    Get {
        target: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write a file's bytes to stdout.
    Cat { target: String },
    /// List a directory (CID, cad:// or mfs:// path).
    Ls { target: String },
    #[command(subcommand)]
    Pin(PinCommand),
    /// Delete blocks not reachable from any pin.
    Gc,
    #[command(subcommand)]
    Mfs(MfsCommand),
    /// Run a gateway over the store until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[command(flatten)]
        chunking: ChunkArgs,
    },
    #[command(subcommand, name = "remote-pin")]
    RemotePin(RemotePinCommand),
    /// Sign and register an asset.
    Publish {
        cid: String,
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        author: String,
        #[arg(long = "type", default_value = "file")]
        asset_type: String,
        #[arg(long, default_value = "")]
        license: String,
        #[arg(long, default_value = "")]
        description: String,
        /// Key file; created on first use. Defaults to <store>/keys/owner.key.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Override the creation timestamp (RFC 3339).
        #[arg(long, hide = true)]
        created: Option<String>,
    },
    /// Print the latest document for a DID.
    Resolve { did: String },
    /// List registered assets.
    Assets {
        #[arg(long = "type")]
        asset_type: Option<String>,
        #[arg(long)]
        author: Option<String>,
    },
    /// Check an asset's signature and content.
    Verify { did: String },
    #[command(subcommand)]
    Dataset(DatasetCommand),
}

#[derive(Debug, Subcommand)]
pub enum PinCommand {
    Add {
        cid: String,
        /// Pin name (defaults to the CID).
        #[arg(long)]
        name: Option<String>,
    },
    Rm { name: String },
    Ls,
}

#[derive(Debug, Subcommand)]
pub enum MfsCommand {
    Mkdir {
        path: String,
        #[arg(short, long)]
        parents: bool,
    },
    /// Write a file from `source` (a local file, or stdin when omitted).
    Write {
        path: String,
        source: Option<PathBuf>,
    },
    Read { path: String },
    /// Copy from a namespace path, a CID or a cad:// URL.
    Cp { src: String, dst: String },
    Mv { src: String, dst: String },
    Rm { path: String },
    Ls {
        #[arg(default_value = "/")]
        path: String,
    },
    Stat { path: String },
}

#[derive(Debug, Subcommand)]
pub enum RemotePinCommand {
    Add {
        cid: String,
        #[arg(long)]
        service: String,
        #[arg(long)]
        name: Option<String>,
    },
    Status {
        request_id: String,
        #[arg(long)]
        service: String,
    },
    Rm {
        request_id: String,
        #[arg(long)]
        service: String,
    },
    Ls {
        #[arg(long)]
        service: String,
        #[arg(long)]
        cid: Option<String>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        status: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Build a dataset from a spec file and a data directory.
    ///
    /// The data directory holds `<column>.bin` (concatenated samples) for
    /// fixed-shape columns and a `<column>/` directory with one file per
    /// sample, in file-name order, for variable-length columns.
    Create {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        no_pin: bool,
    },
    /// Print one sample's bytes.
    GetSample {
        dataset: String,
        #[arg(long)]
        column: String,
        #[arg(long)]
        index: u64,
    },
}
