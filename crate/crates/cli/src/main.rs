//! `ctlite`: command-line front end for the CT pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 transport error.

use std::fs;
use std::net::ToSocketAddrs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use ctlite_core::fdk::{reconstruct, FdkOptions, FdkWeight, FilterWindow};
use ctlite_core::io::{
    read_phantom, read_projections, read_volume, write_atomic, write_projections, write_volume,
};
use ctlite_core::metrics::{curve_csv, mse_curve, CompressionReport, QualityReport};
use ctlite_core::pipeline::{run_file, Stage};
use ctlite_core::simulate::{add_noise, forward_project, voxelize};
use ctlite_core::sparse::sparse_sample;
use ctlite_core::svd::{choose_rank, read_svz, svd_decode, svd_encode, write_svz};
use ctlite_core::transport::{serve, upload_bytes, Client, ReconParams, ScanId, TransportError, UploadOptions};
use ctlite_core::{make_circular_geometry, VolumeDims};

#[derive(Parser)]
#[command(name = "ctlite", version, about = "Lightweight cone-beam CT pipeline")]
struct Cli {
    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize a phantom description into a volume.
    Phantom {
        phantom: PathBuf,
        #[arg(long, value_parser = parse_dims)]
        dims: VolumeDims,
        #[arg(long, default_value_t = 1.0)]
        pitch: f64,
        out: PathBuf,
    },
    /// Simulate cone-beam projections of a phantom over a full circle.
    Project {
        phantom: PathBuf,
        #[arg(long)]
        views: usize,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// Detector pixel pitch on the virtual detector, mm.
        #[arg(long, default_value_t = 1.0)]
        pitch: f64,
        /// Source to rotation axis distance, mm.
        #[arg(long)]
        source_to_axis: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        out: PathBuf,
    },
    /// Keep every N-th view.
    Sparse {
        #[arg(long = "sparse-factor", visible_alias = "factor")]
        factor: usize,
        input: PathBuf,
        out: PathBuf,
    },
    /// Truncated-SVD compression of every view.
    Compress {
        #[arg(long, required_unless_present = "mse_budget", conflicts_with = "mse_budget")]
        rank: Option<usize>,
        /// Pick the smallest rank whose per-view MSE stays within this budget.
        #[arg(long)]
        mse_budget: Option<f64>,
        input: PathBuf,
        out: PathBuf,
    },
    /// Restore projections from a compressed scan.
    Decompress { input: PathBuf, out: PathBuf },
    /// FDK reconstruction.
    Reconstruct {
        #[command(flatten)]
        recon: ReconArgs,
        input: PathBuf,
        out: PathBuf,
    },
    /// Quality and compression metrics.
    Metrics {
        #[command(subcommand)]
        command: MetricsCommand,
    },
    /// Truncation MSE against rank, as CSV.
    Curve(CurveArgs),
    /// Run the compute server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        #[arg(long)]
        store: PathBuf,
    },
    /// Upload a compressed scan; prints the scan id.
    Upload {
        #[arg(long)]
        server: String,
        #[arg(long, default_value_t = 8)]
        attempts: usize,
        scan: PathBuf,
    },
    /// Fetch a reconstruction (or with --svz the stored scan) from the server.
    Fetch {
        #[arg(long)]
        server: String,
        #[arg(long)]
        scan: ScanId,
        /// Download the stored container instead of reconstructing.
        #[arg(long, conflicts_with = "dims")]
        svz: bool,
        #[arg(long, value_parser = parse_dims, required_unless_present = "svz")]
        dims: Option<VolumeDims>,
        #[arg(long, default_value_t = 1.0)]
        pitch: f64,
        #[arg(long, value_enum, default_value_t = Window::None)]
        filter_window: Window,
        #[arg(long, value_enum, default_value_t = Weight::Standard)]
        fdk_weight: Weight,
        out: PathBuf,
    },
    /// Run every stage from a config file.
    Pipeline {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Compare a test volume against a reference volume.
    Compare {
        reference: PathBuf,
        test: PathBuf,
        /// Write the full per-slice report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compression ratios and storage for a detector, rank and view count.
    Compression {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        views: usize,
        #[arg(long)]
        full_views: usize,
    },
    /// Same as the top-level `curve` command.
    Curve(CurveArgs),
}

#[derive(Args)]
struct CurveArgs {
    /// Ranks as `a:b`, `a:b:step` or a comma list.
    #[arg(long, value_parser = parse_ks)]
    ks: Ranks,
    #[arg(long)]
    out: Option<PathBuf>,
    input: PathBuf,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long, value_parser = parse_dims)]
    dims: VolumeDims,
    /// Voxel pitch, mm.
    #[arg(long, default_value_t = 1.0)]
    pitch: f64,
    #[arg(long, value_enum, default_value_t = Window::None)]
    filter_window: Window,
    #[arg(long, value_enum, default_value_t = Weight::Standard)]
    fdk_weight: Weight,
}

#[derive(Clone, Copy, ValueEnum)]
enum Window {
    None,
    Hann,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weight {
    /// R²/U²
    Standard,
    /// R²/U
    #[value(name = "paper")]
    InverseU,
}

fn options(window: Window, weight: Weight) -> FdkOptions {
    let mut o = FdkOptions::default();
    o.filter.window = match window {
        Window::None => FilterWindow::None,
        Window::Hann => FilterWindow::Hann,
    };
    o.weight = match weight {
        Weight::Standard => FdkWeight::Standard,
        Weight::InverseU => FdkWeight::InverseU,
    };
    o
}

fn parse_dims(s: &str) -> Result<VolumeDims, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad dimension {p:?}")))
        .collect::<Result<_, _>>()?;
    let dims = match parts[..] {
        [n] => VolumeDims::cube(n),
        [nx, ny, nz] => VolumeDims::new(nx, ny, nz),
        _ => return Err("expected N or NX,NY,NZ".into()),
    };
    dims.validate().map_err(|e| e.to_string())?;
    Ok(dims)
}

#[derive(Clone, Debug, PartialEq)]
struct Ranks(Vec<usize>);

fn parse_ks(s: &str) -> Result<Ranks, String> {
    parse_rank_list(s).map(Ranks)
}

fn parse_rank_list(s: &str) -> Result<Vec<usize>, String> {
    let num = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("bad rank {p:?}"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let (lo, hi, step) = match parts[..] {
            [a, b] => (num(a)?, num(b)?, 1),
            [a, b, c] => (num(a)?, num(b)?, num(c)?),
            _ => return Err("expected a:b or a:b:step".into()),
        };
        if step == 0 || lo > hi {
            return Err(format!("empty range {s:?}"));
        }
        Ok((lo..=hi).step_by(step).collect())
    } else {
        s.split(',').map(num).collect()
    }
}

enum Failure {
    Data(String),
    Transport(String),
}

impl From<ctlite_core::Error> for Failure {
    fn from(e: ctlite_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TransportError> for Failure {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Data(d) => Failure::Data(d.to_string()),
            other => Failure::Transport(other.to_string()),
        }
    }
}

fn transport_io(e: std::io::Error) -> Failure {
    Failure::Transport(e.to_string())
}

fn resolve(addr: &str) -> Result<std::net::SocketAddr, Failure> {
    addr.to_socket_addrs()
        .map_err(transport_io)?
        .next()
        .ok_or_else(|| Failure::Transport(format!("cannot resolve {addr}")))
}

fn write_curve(args: &CurveArgs) -> Result<(), Failure> {
    let stack = read_projections(&args.input)?;
    let csv = curve_csv(&mse_curve(&stack, &args.ks.0)?);
    match &args.out {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Phantom { phantom, dims, pitch, out } => {
            let volume = voxelize(&read_phantom(&phantom)?, dims, pitch)?;
            write_volume(&out, &volume)?;
        }
        Command::Project { phantom, views, rows, cols, pitch, source_to_axis, noise_sigma, seed, out } => {
            let g = make_circular_geometry(views, rows, cols, pitch, source_to_axis)?;
            let stack = forward_project(&read_phantom(&phantom)?, &g);
            write_projections(&out, &add_noise(&stack, noise_sigma, seed)?)?;
        }
        Command::Sparse { factor, input, out } => {
            write_projections(&out, &sparse_sample(&read_projections(&input)?, factor)?)?;
        }
        Command::Compress { rank, mse_budget, input, out } => {
            let stack = read_projections(&input)?;
            let k = match (rank, mse_budget) {
                (Some(k), _) => k,
                (None, Some(b)) => choose_rank(&stack, b)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let bytes = write_svz(&svd_encode(&stack, k)?)?;
            write_atomic(&out, &bytes)?;
            info!("rank {k}, {} bytes", bytes.len());
        }
        Command::Decompress { input, out } => {
            let scan = read_svz(&fs::read(&input)?)?;
            write_projections(&out, &svd_decode(&scan)?)?;
        }
        Command::Reconstruct { recon, input, out } => {
            let stack = read_projections(&input)?;
            let o = options(recon.filter_window, recon.fdk_weight);
            write_volume(&out, &reconstruct(&stack, recon.dims, recon.pitch, &o)?)?;
        }
        Command::Metrics { command } => match command {
            MetricsCommand::Compare { reference, test, report } => {
                let q = QualityReport::compare(&read_volume(&reference)?, &read_volume(&test)?)?;
                println!("mse={:e}\nrmse={:e}\npsnr_db={}\nssim={}", q.mse, q.rmse(), q.psnr, q.ssim);
                if let Some(path) = report {
                    write_atomic(&path, q.to_text().as_bytes())?;
                }
            }
            MetricsCommand::Compression { rows, cols, rank, views, full_views } => {
                print!("{}", CompressionReport::new(rows, cols, rank, views, full_views)?.to_text());
            }
            MetricsCommand::Curve(args) => write_curve(&args)?,
        },
        Command::Curve(args) => write_curve(&args)?,
        Command::Serve { listen, store } => {
            serve(listen.as_str(), &store).map_err(transport_io)?;
        }
        Command::Upload { server, attempts, scan } => {
            let bytes = fs::read(&scan)?;
            let opts = UploadOptions { max_attempts: attempts.max(1), ..UploadOptions::default() };
            let report = upload_bytes(resolve(&server)?, &bytes, &opts)?;
            info!("{} bytes in {} frames, {} attempts", report.bytes_sent, report.frames_sent, report.attempts);
            println!("{}", report.scan_id);
        }
        Command::Fetch { server, scan, svz, dims, pitch, filter_window, fdk_weight, out } => {
            let mut client = Client::connect(resolve(&server)?, Duration::from_secs(3600))?;
            client.hello_query()?;
            if svz {
                write_atomic(&out, &client.fetch_svz(scan)?)?;
            } else {
                let params = ReconParams {
                    dims: dims.expect("clap requires --dims"),
                    voxel_pitch: pitch,
                    options: options(filter_window, fdk_weight),
                };
                write_volume(&out, &client.fetch_volume(scan, params)?)?;
            }
        }
        Command::Pipeline { config, out } => {
            let result = run_file(&config, &out).map_err(|e| match e.stage {
                Stage::Transport => Failure::Transport(e.to_string()),
                _ => Failure::Data(e.to_string()),
            })?;
            print!("{}", result.compression.to_text());
            let q = &result.recon_vs_truth;
            println!("recon_vs_truth.rmse={:e}\nrecon_vs_truth.ssim={}", q.rmse(), q.ssim);
            if let Some(q) = &result.recon_vs_reference {
                println!("recon_vs_reference.rmse={:e}\nrecon_vs_reference.ssim={}", q.rmse(), q.ssim);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let default = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Transport(msg)) => {
            eprintln!("transport error: {msg}");
            ExitCode::from(3)
        }
    }
}
