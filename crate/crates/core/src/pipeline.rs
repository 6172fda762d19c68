//! End-to-end run driven by a `key=value` config file.
//!
//! ```text
//! seed=7
//! phantom=sphere.txt          # relative to the config file
//! views=720
//! detector_rows=215
//! detector_cols=256
//! pixel_pitch=1.0
//! source_to_axis=500
//! sparse_factor=12
//! rank=30                     # or "full"
//! recon_dims=128,128,128
//! voxel_pitch=1.0
//! ```
//!
//! Optional keys: `noise_sigma` (0), `transport` (`none` | `loopback`),
//! `filter_window` (`none` | `hann`), `fdk_weight` (`standard` | `paper`),
//! `reference` (`true` | `false`, reconstruct the full uncompressed scan too).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::error::Error;
use crate::fdk::{reconstruct, FdkOptions, FdkWeight, FilterWindow};
use crate::geometry::{make_circular_geometry, Phantom, ScanGeometry, Volume, VolumeDims};
use crate::io::{read_phantom, write_atomic, write_projections, write_volume, Sidecar};
use crate::metrics::{CompressionReport, QualityReport};
use crate::simulate::{add_noise, forward_project, voxelize};
use crate::sparse::sparse_sample;
use crate::svd::{read_svz, svd_decode, svd_encode, write_svz};
use crate::transport::{upload_bytes, Client, Server, UploadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Simulate,
    Sparse,
    Compress,
    Transport,
    Decompress,
    Reconstruct,
    Metrics,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Simulate => "simulate",
            Stage::Sparse => "sparse",
            Stage::Compress => "compress",
            Stage::Transport => "transport",
            Stage::Decompress => "decompress",
            Stage::Reconstruct => "reconstruct",
            Stage::Metrics => "metrics",
            Stage::Write => "write",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: fmt::Display> StageExt<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Fixed(usize),
    /// min(rows, cols), i.e. lossless up to rounding.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    None,
    /// Round-trip the scan through an in-process server on 127.0.0.1.
    Loopback,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub phantom: Phantom,
    pub geometry: ScanGeometry,
    pub sparse_factor: usize,
    pub rank: Rank,
    pub recon_dims: VolumeDims,
    pub voxel_pitch: f64,
    pub noise_sigma: f64,
    pub transport: TransportMode,
    pub options: FdkOptions,
    pub reference: bool,
}

fn optional<T: std::str::FromStr>(sc: &Sidecar, key: &str, default: T) -> crate::Result<T> {
    match sc.get(key) {
        None => Ok(default),
        Some(_) => sc.parse_value(key),
    }
}

fn choice<T: Copy>(sc: &Sidecar, key: &str, default: T, options: &[(&str, T)]) -> crate::Result<T> {
    let Some(raw) = sc.get(key) else {
        return Ok(default);
    };
    options
        .iter()
        .find(|(name, _)| *name == raw)
        .map(|&(_, v)| v)
        .ok_or_else(|| {
            let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
            Error::Format(format!("bad value for {key:?}: {raw:?} (expected one of {names:?})"))
        })
}

impl PipelineConfig {
    /// Parses config text; `phantom` paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        Self::parse_inner(text, base_dir).at(Stage::Config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))
            .at(Stage::Config)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn parse_inner(text: &str, base_dir: &Path) -> crate::Result<Self> {
        let sc = Sidecar::parse(text)?;
        let seed = sc.parse_value("seed")?;
        let phantom_path = base_dir.join(sc.require("phantom")?);
        let views: usize = sc.parse_value("views")?;
        let geometry = make_circular_geometry(
            views,
            sc.parse_value("detector_rows")?,
            sc.parse_value("detector_cols")?,
            sc.parse_value("pixel_pitch")?,
            sc.parse_value("source_to_axis")?,
        )?;
        let sparse_factor = sc.parse_value("sparse_factor")?;
        let rank = match sc.require("rank")? {
            "full" => Rank::Full,
            _ => Rank::Fixed(sc.parse_value("rank")?),
        };
        let dims = sc.parse_list::<usize>("recon_dims")?;
        let [nx, ny, nz] = dims[..] else {
            return Err(Error::Format(format!(
                "recon_dims needs 3 values, got {}",
                dims.len()
            )));
        };
        let recon_dims = VolumeDims::new(nx, ny, nz);
        recon_dims.validate()?;
        let voxel_pitch = sc.parse_value("voxel_pitch")?;
        let noise_sigma = optional(&sc, "noise_sigma", 0.0)?;
        let transport = choice(
            &sc,
            "transport",
            TransportMode::None,
            &[("none", TransportMode::None), ("loopback", TransportMode::Loopback)],
        )?;
        let window = choice(
            &sc,
            "filter_window",
            FilterWindow::None,
            &[("none", FilterWindow::None), ("hann", FilterWindow::Hann)],
        )?;
        let weight = choice(
            &sc,
            "fdk_weight",
            FdkWeight::Standard,
            &[("standard", FdkWeight::Standard), ("paper", FdkWeight::InverseU)],
        )?;
        let reference = optional(&sc, "reference", true)?;
        let phantom = read_phantom(&phantom_path)
            .map_err(|e| Error::Format(format!("phantom {}: {e}", phantom_path.display())))?;
        let mut options = FdkOptions::default();
        options.filter.window = window;
        options.weight = weight;
        Ok(Self {
            seed,
            phantom,
            geometry,
            sparse_factor,
            rank,
            recon_dims,
            voxel_pitch,
            noise_sigma,
            transport,
            options,
            reference,
        })
    }

    pub fn rank_value(&self) -> usize {
        match self.rank {
            Rank::Fixed(k) => k,
            Rank::Full => self.geometry.rows().min(self.geometry.cols()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub compression: CompressionReport,
    pub truth: Volume,
    pub recon: Volume,
    /// Direct reconstruction of the full, uncompressed scan.
    pub reference: Option<Volume>,
    pub recon_vs_truth: QualityReport,
    pub recon_vs_reference: Option<QualityReport>,
    pub reference_vs_truth: Option<QualityReport>,
}

fn loopback(svz: &[u8], out_dir: &Path) -> Result<Vec<u8>, Box<dyn std::error::Error>> {
    let store = out_dir.join(".loopback-store");
    let result = (|| -> Result<Vec<u8>, Box<dyn std::error::Error>> {
        let handle = Server::bind("127.0.0.1:0", &store)?.spawn()?;
        let opts = UploadOptions::default();
        let report = upload_bytes(handle.addr(), svz, &opts)?;
        let mut client = Client::connect(handle.addr(), opts.timeout)?;
        client.hello_query()?;
        let fetched = client.fetch_svz(report.scan_id)?;
        handle.shutdown();
        if fetched != svz {
            return Err("stored scan differs from the uploaded one".into());
        }
        Ok(fetched)
    })();
    let _ = fs::remove_dir_all(&store);
    result
}

fn write_text(path: PathBuf, text: &str) -> Result<(), PipelineError> {
    write_atomic(&path, text.as_bytes()).at(Stage::Write)
}

/// Runs every stage and writes the artifacts into `out_dir`.
pub fn run(config: &PipelineConfig, out_dir: &Path) -> Result<PipelineOutput, PipelineError> {
    fs::create_dir_all(out_dir).at(Stage::Write)?;
    let g = &config.geometry;

    info!("simulating {} views of {}x{}", g.n_views(), g.rows(), g.cols());
    let truth = voxelize(&config.phantom, config.recon_dims, config.voxel_pitch).at(Stage::Simulate)?;
    let clean = forward_project(&config.phantom, g);
    let full = add_noise(&clean, config.noise_sigma, config.seed).at(Stage::Simulate)?;
    drop(clean);
    write_volume(&out_dir.join("truth.vol"), &truth).at(Stage::Write)?;
    write_projections(&out_dir.join("full.proj"), &full).at(Stage::Write)?;

    let sparse = sparse_sample(&full, config.sparse_factor).at(Stage::Sparse)?;
    write_projections(&out_dir.join("sparse.proj"), &sparse).at(Stage::Write)?;

    let rank = config.rank_value();
    info!("compressing {} views at rank {rank}", sparse.n_views());
    let scan = svd_encode(&sparse, rank).at(Stage::Compress)?;
    let mut svz = write_svz(&scan).at(Stage::Compress)?;
    drop(scan);
    write_atomic(&out_dir.join("scan.svz"), &svz).at(Stage::Write)?;

    if config.transport == TransportMode::Loopback {
        info!("round-tripping {} bytes over loopback", svz.len());
        svz = loopback(&svz, out_dir).at(Stage::Transport)?;
    }

    let restored = read_svz(&svz)
        .and_then(|s| svd_decode(&s))
        .at(Stage::Decompress)?;
    write_projections(&out_dir.join("restored.proj"), &restored).at(Stage::Write)?;

    info!("reconstructing {:?}", config.recon_dims);
    let recon = reconstruct(&restored, config.recon_dims, config.voxel_pitch, &config.options)
        .at(Stage::Reconstruct)?;
    write_volume(&out_dir.join("recon.vol"), &recon).at(Stage::Write)?;

    let reference = if config.reference {
        let v = reconstruct(&full, config.recon_dims, config.voxel_pitch, &config.options)
            .at(Stage::Reconstruct)?;
        write_volume(&out_dir.join("reference.vol"), &v).at(Stage::Write)?;
        Some(v)
    } else {
        None
    };

    let compression = CompressionReport::new(g.rows(), g.cols(), rank, sparse.n_views(), full.n_views())
        .at(Stage::Metrics)?;
    let recon_vs_truth = QualityReport::compare(&truth, &recon).at(Stage::Metrics)?;
    let recon_vs_reference = reference
        .as_ref()
        .map(|r| QualityReport::compare(r, &recon))
        .transpose()
        .at(Stage::Metrics)?;
    let reference_vs_truth = reference
        .as_ref()
        .map(|r| QualityReport::compare(&truth, r))
        .transpose()
        .at(Stage::Metrics)?;

    write_text(out_dir.join("compression.txt"), &compression.to_text())?;
    let mut summary = String::from("# reconstruction quality\n");
    let reports = [
        ("recon_vs_truth", Some(&recon_vs_truth)),
        ("recon_vs_reference", recon_vs_reference.as_ref()),
        ("reference_vs_truth", reference_vs_truth.as_ref()),
    ];
    for (name, report) in reports {
        let Some(r) = report else { continue };
        summary.push_str(&format!(
            "{name}.mse={:e}\n{name}.rmse={:e}\n{name}.psnr_db={}\n{name}.ssim={}\n",
            r.mse,
            r.rmse(),
            r.psnr,
            r.ssim
        ));
        write_text(out_dir.join(format!("quality_{name}.txt")), &r.to_text())?;
    }
    write_text(out_dir.join("quality.txt"), &summary)?;

    Ok(PipelineOutput {
        compression,
        truth,
        recon,
        reference,
        recon_vs_truth,
        recon_vs_reference,
        reference_vs_truth,
    })
}

pub fn run_file(config_path: &Path, out_dir: &Path) -> Result<PipelineOutput, PipelineError> {
    run(&PipelineConfig::load(config_path)?, out_dir)
}
