//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::decode::{decode_instances, DecodeParams};
use crate::error::{Error, Result};
use crate::instances::{log_spaced_edges, size_histogram, InstanceReport};
use crate::io::{
    export_csv, read_tile_manifest, read_vlv, write_tile_manifest, write_vlv, HistogramTable,
    TileManifest,
};
use crate::lpa::{run_lpa, run_lpa_per_class, LpaConfig, Schedule};
use crate::metrics::{per_class_report, Averaging, ORGANELLES};
use crate::scale::{
    fragmentation_report, resample, stitch, tile, Extent, Interpolation, ResampleSpec,
    DEFAULT_PATCH, DEFAULT_TARGET_RES_NM,
};
use crate::volume::{Connectivity, LabeledVolume, Role, Volume, VoxelGrid, VoxelSize};

#[derive(Debug, Parser)]
#[command(name = "emlabel", version, about = "Semantic-to-instance label conversion for volume EM")]
pub struct Cli {
    /// Worker threads, 0 = one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Seed for randomized steps.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Semantic labels to instance labels by label propagation.
    Convert(ConvertArgs),
    /// Probability map to instance labels by marker-controlled watershed.
    Decode(DecodeArgs),
    /// Per-class Dice and IoU of a prediction against ground truth.
    Eval(EvalArgs),
    /// Instance sizes and size classes.
    Stats(StatsArgs),
    /// Resample to a target resolution.
    Resample(ResampleArgs),
    /// Split a volume into overlapping tiles.
    Tile(TileArgs),
    /// Reassemble tiles written by `tile`.
    Stitch(StitchArgs),
    /// Count instances broken apart by tiling.
    Fragreport(FragreportArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = Connectivity::C26, value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
    #[arg(long, default_value_t = Schedule::RasterSweeps, value_parser = parse_schedule)]
    pub schedule: Schedule,
    /// Never merge touching voxels of different classes.
    #[arg(long)]
    pub per_class: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = parse_theta)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.5, value_parser = parse_marker_fraction)]
    pub marker_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub min_size: u64,
    #[arg(long, default_value_t = Connectivity::C26, value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Comma-separated class ids.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub classes: Vec<u64>,
    #[arg(long, default_value_t = Averaging::Macro, value_parser = parse_averaging)]
    pub avg: Averaging,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Instance volume, or a semantic volume to convert per class first.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub csv: PathBuf,
    /// Optional log-spaced size histogram.
    #[arg(long)]
    pub hist: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, default_value_t = Connectivity::C26, value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// nm per voxel: one value for y and x, or `ZxYxX`.
    #[arg(long, default_value_t = TargetRes::Planar(DEFAULT_TARGET_RES_NM), value_parser = parse_target_res)]
    pub target_res: TargetRes,
    /// Defaults to nearest for labels and trilinear for probabilities.
    #[arg(long, value_parser = parse_interpolation)]
    pub interpolation: Option<Interpolation>,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Directory receiving the tiles and `tiles.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = Extent::planar(DEFAULT_PATCH, DEFAULT_PATCH), value_parser = parse_extent)]
    pub tile: Extent,
    /// One value for every tiled axis, or `ZxYxX`.
    #[arg(long, default_value = "0", value_parser = parse_overlap)]
    pub overlap: Overlap,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    /// `tiles.json` written by `tile`.
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FragreportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = Extent::planar(DEFAULT_PATCH, DEFAULT_PATCH), value_parser = parse_extent)]
    pub tile: Extent,
    #[arg(long, default_value = "0", value_parser = parse_overlap)]
    pub overlap: Overlap,
    #[arg(long, default_value_t = Connectivity::C26, value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetRes {
    Planar(f64),
    Full(VoxelSize),
}

impl std::fmt::Display for TargetRes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetRes::Planar(r) => write!(f, "{r}"),
            TargetRes::Full(v) => write!(f, "{}x{}x{}", v.z, v.y, v.x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlap {
    Uniform(usize),
    PerAxis([usize; 3]),
}

fn parse_connectivity(s: &str) -> std::result::Result<Connectivity, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_schedule(s: &str) -> std::result::Result<Schedule, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_averaging(s: &str) -> std::result::Result<Averaging, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_interpolation(s: &str) -> std::result::Result<Interpolation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_extent(s: &str) -> std::result::Result<Extent, String> {
    let e: Extent = s.parse().map_err(|e: Error| e.to_string())?;
    if e.0.contains(&0) {
        return Err("tile extents must be positive".into());
    }
    Ok(e)
}

fn parse_theta(s: &str) -> std::result::Result<f64, String> {
    let t: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(format!("theta must lie strictly between 0 and 1, got {t}"))
    }
}

fn parse_marker_fraction(s: &str) -> std::result::Result<f64, String> {
    let t: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        Err(format!("marker fraction must lie in (0, 1], got {t}"))
    }
}

fn parse_target_res(s: &str) -> std::result::Result<TargetRes, String> {
    let parts: Vec<f64> = s
        .split(['x', 'X', ','])
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("cannot parse resolution {s:?}"))?;
    match parts[..] {
        [r] => VoxelSize::new(1.0, r, r)
            .map(|_| TargetRes::Planar(r))
            .map_err(|e| e.to_string()),
        [z, y, x] => VoxelSize::new(z, y, x)
            .map(TargetRes::Full)
            .map_err(|e| e.to_string()),
        _ => Err(format!("resolution must be one value or ZxYxX, got {s:?}")),
    }
}

fn parse_overlap(s: &str) -> std::result::Result<Overlap, String> {
    if let Ok(n) = s.trim().parse::<usize>() {
        return Ok(Overlap::Uniform(n));
    }
    match s.parse::<Extent>() {
        Ok(Extent(e)) if s.split(['x', 'X', ',']).count() == 3 => Ok(Overlap::PerAxis(e)),
        _ => Err(format!("overlap must be one value or ZxYxX, got {s:?}")),
    }
}

/// Tile shape clipped to the volume, and the matching overlap. A uniform
/// overlap only applies to axes that are actually split.
fn tile_geometry(dims: [usize; 3], tile: Extent, overlap: Overlap) -> ([usize; 3], [usize; 3]) {
    let size = [0, 1, 2].map(|k| tile.0[k].min(dims[k]));
    let overlap = match overlap {
        Overlap::Uniform(n) => [0, 1, 2].map(|k| if size[k] > 1 { n } else { 0 }),
        Overlap::PerAxis(o) => o,
    };
    (size, overlap)
}

fn read_labels(path: &Path) -> Result<LabeledVolume> {
    match read_vlv(path)? {
        Volume::Labels(v) => Ok(v),
        Volume::Probability(_) => Err(Error::format(path, "expected a label volume, found probabilities")),
    }
}

/// Runs a parsed command, writing the human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut impl Write) -> Result<()> {
    if cli.threads > 0 {
        // a pool can only be installed once per process; later calls keep it
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let line = match &cli.command {
        Command::Convert(a) => convert(a)?,
        Command::Decode(a) => decode(a)?,
        Command::Eval(a) => eval(a, out)?,
        Command::Stats(a) => stats(a)?,
        Command::Resample(a) => resample_cmd(a)?,
        Command::Tile(a) => tile_cmd(a)?,
        Command::Stitch(a) => stitch_cmd(a)?,
        Command::Fragreport(a) => fragreport(a)?,
    };
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn convert(a: &ConvertArgs) -> Result<String> {
    let semantic = read_labels(&a.input)?;
    let cfg = LpaConfig::new(a.connectivity, a.schedule);
    let result = if a.per_class {
        run_lpa_per_class(&semantic, &cfg)?.0
    } else {
        run_lpa(&semantic, &cfg)?
    };
    write_vlv(&Volume::Labels(result.instances), &a.out)?;
    Ok(format!(
        "convert: K={} iterations={} connectivity={} schedule={}{}",
        result.num_instances,
        result.iterations_used,
        a.connectivity,
        a.schedule,
        if a.per_class { " per-class" } else { "" }
    ))
}

fn decode(a: &DecodeArgs) -> Result<String> {
    let prob = read_vlv(&a.input)?.into_probability()?;
    let params = DecodeParams {
        threshold: a.theta,
        marker_fraction: a.marker_fraction,
        connectivity: a.connectivity,
        min_instance_size: a.min_size,
        anisotropic: false,
    };
    let instances = decode_instances(&prob, &params)?;
    let k = instances.max_label();
    write_vlv(&Volume::Labels(instances), &a.out)?;
    Ok(format!("decode: instances={k}"))
}

fn eval(a: &EvalArgs, out: &mut impl Write) -> Result<String> {
    let pred = read_labels(&a.pred)?;
    let gt = read_labels(&a.gt)?;
    let report = per_class_report(&pred, &gt, &a.classes, a.avg)?;
    write!(out, "{}", report.to_table()).map_err(|e| Error::io("<stdout>", e))?;
    if let Some(path) = &a.csv {
        export_csv(&report, path)?;
    }
    Ok(format!(
        "eval: classes={} avg={} dice={:.6} iou={:.6}",
        a.classes.len(),
        a.avg,
        report.average_dice,
        report.average_iou
    ))
}

fn stats(a: &StatsArgs) -> Result<String> {
    let vol = read_labels(&a.input)?;
    let report = match vol.role() {
        Role::Instance => InstanceReport::from_volume(&vol, None)?,
        Role::Semantic | Role::Binary => {
            let cfg = LpaConfig::new(a.connectivity, Schedule::RasterSweeps);
            let (result, classes) = run_lpa_per_class(&vol, &cfg)?;
            InstanceReport::from_volume(&result.instances, Some(&classes))?
        }
    };
    export_csv(&report, &a.csv)?;
    if let Some(path) = &a.hist {
        let max = report.sizes.values().copied().max().unwrap_or(1).max(2) as f64;
        let edges = log_spaced_edges(1.0, max + 1.0, a.bins)?;
        let counts = size_histogram(&report.sizes, &edges)?;
        export_csv(&HistogramTable { edges: &edges, counts: &counts }, path)?;
    }
    let [small, medium, large] = report.size_class_counts();
    Ok(format!(
        "stats: instances={} voxels={} small={small} medium={medium} large={large}",
        report.total_instances,
        report.total_voxels()
    ))
}

fn resample_cmd(a: &ResampleArgs) -> Result<String> {
    let vol = read_vlv(&a.input)?;
    let source = vol.voxel_size();
    let target = match a.target_res {
        TargetRes::Planar(r) => VoxelSize::new(source.z, r, r)?,
        TargetRes::Full(v) => v,
    };
    let interpolation = a.interpolation.unwrap_or(match vol {
        Volume::Labels(_) => Interpolation::Nearest,
        Volume::Probability(_) => Interpolation::Trilinear,
    });
    let spec = ResampleSpec {
        source,
        target,
        interpolation,
    };
    let before = vol.dims();
    let out = resample(&vol, &spec)?;
    let after = out.dims();
    write_vlv(&out, &a.out)?;
    Ok(format!("resample: {before} -> {after}"))
}

fn tile_all<V: VoxelGrid>(vol: &V, size: [usize; 3], overlap: [usize; 3], out_dir: &Path) -> Result<TileManifest>
where
    Volume: From<V>,
{
    let (tiles, index) = tile(vol, size, overlap)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::with_capacity(tiles.len());
    for (i, t) in tiles.into_iter().enumerate() {
        let name = PathBuf::from(format!("tile_{i:05}.vlv"));
        write_vlv(&Volume::from(t), out_dir.join(&name))?;
        files.push(name);
    }
    Ok(TileManifest {
        index,
        voxel_size: vol.voxel_size(),
        files,
    })
}

fn tile_cmd(a: &TileArgs) -> Result<String> {
    let vol = read_vlv(&a.input)?;
    let (size, overlap) = tile_geometry(vol.dims().as_array(), a.tile, a.overlap);
    let manifest = match &vol {
        Volume::Labels(v) => tile_all(v, size, overlap, &a.out_dir)?,
        Volume::Probability(v) => tile_all(v, size, overlap, &a.out_dir)?,
    };
    write_tile_manifest(&manifest, a.out_dir.join("tiles.json"))?;
    Ok(format!(
        "tile: tiles={} tile={} overlap={:?}",
        manifest.files.len(),
        Extent(size),
        overlap
    ))
}

fn stitch_cmd(a: &StitchArgs) -> Result<String> {
    let manifest = read_tile_manifest(&a.index)?;
    let dir = a.index.parent().unwrap_or(Path::new("."));
    let tiles = manifest
        .files
        .iter()
        .map(|f| read_vlv(dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let out = match tiles.first() {
        None => return Err(Error::TileGeometry("index lists no tiles".into())),
        Some(Volume::Labels(_)) => {
            let t = tiles.into_iter().map(Volume::into_labels).collect::<Result<Vec<_>>>()?;
            Volume::from(stitch(&t, &manifest.index)?)
        }
        Some(Volume::Probability(_)) => {
            let t = tiles
                .into_iter()
                .map(Volume::into_probability)
                .collect::<Result<Vec<_>>>()?;
            Volume::from(stitch(&t, &manifest.index)?)
        }
    };
    let dims = out.dims();
    write_vlv(&out, &a.out)?;
    Ok(format!("stitch: tiles={} dims={dims}", manifest.files.len()))
}

fn fragreport(a: &FragreportArgs) -> Result<String> {
    let semantic = read_labels(&a.input)?;
    let (size, overlap) = tile_geometry(semantic.dims().as_array(), a.tile, a.overlap);
    let report = fragmentation_report(&semantic, size, overlap, a.connectivity)?;
    if let Some(path) = &a.csv {
        export_csv(&report, path)?;
    }
    Ok(format!(
        "fragreport: instances_global={} instances_after_tiling={} split_instances={}",
        report.instances_global, report.instances_after_tiling, report.split_instances
    ))
}

/// Class ids evaluated by default.
pub fn default_classes() -> Vec<u64> {
    ORGANELLES.iter().map(|&(c, _)| c).collect()
}
