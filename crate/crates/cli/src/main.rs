//! `aerotri`: GCP-free aerial triangulation from feature files and GNSS
//! camera positions.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use aerotri::georef_eval::GeorefRoute;
use aerotri::pipeline::PairProposal;

#[derive(Debug, Parser)]
#[command(name = "aerotri", version, about = "Aerial triangulation without ground control points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic survey: FEAT files, POS, camera and truth CSVs.
    Synth(SynthArgs),
    /// Project a geodetic POS file to Gauss-Krüger coordinates.
    ConvertPos(ConvertPosArgs),
    /// Detect corners in PGM images and write FEAT files.
    Detect(DetectArgs),
    /// Match feature files over POS-proposed image pairs.
    Match(MatchCmdArgs),
    /// Match and mismatch rates of one pair over a range of ratios.
    SweepRatio(SweepArgs),
    /// Geometrically verify matches with an essential-matrix RANSAC.
    Verify(VerifyArgs),
    /// Incremental reconstruction from verified matches.
    Reconstruct(ReconstructArgs),
    /// Tie a free-network reconstruction to the POS positions.
    Georef(GeorefArgs),
    /// Accuracy report of a georeferenced reconstruction.
    Evaluate(EvaluateArgs),
    /// Run every stage from feature files to the report.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scene {
    /// Four strips of six images.
    Scene1,
    /// Two strips of three images.
    Scene2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Route {
    Align,
    Priors,
}

impl From<Route> for GeorefRoute {
    fn from(r: Route) -> Self {
        match r {
            Route::Align => GeorefRoute::Align,
            Route::Priors => GeorefRoute::Priors,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "scene1")]
    pub scene: Scene,
    /// Override the number of strips.
    #[arg(long)]
    pub strips: Option<usize>,
    /// Override the number of images per strip.
    #[arg(long)]
    pub images_per_strip: Option<usize>,
    /// Number of terrain points.
    #[arg(long, default_value_t = 2000)]
    pub points: usize,
    /// Keypoint noise, pixels.
    #[arg(long, default_value_t = 0.3)]
    pub keypoint_sigma: f64,
    /// Disable keypoint, GNSS and descriptor noise.
    #[arg(long)]
    pub noise_free: bool,
    /// Write the POS file in projected instead of geodetic coordinates.
    #[arg(long)]
    pub projected: bool,
    /// Central meridian used to express the POS file geodetically, degrees.
    #[arg(long, default_value_t = 105.0)]
    pub central_meridian: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ZoneArgs {
    /// Central meridian of the Gauss-Krüger zone, degrees. Required when
    /// the POS file is geodetic.
    #[arg(long)]
    pub central_meridian: Option<f64>,
    #[arg(long, default_value_t = 500_000.0)]
    pub false_easting: f64,
    #[arg(long, default_value_t = 1.0)]
    pub scale_factor: f64,
}

#[derive(Debug, Args)]
pub struct ConvertPosArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub zone: ZoneArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Directory of binary PGM images.
    #[arg(long)]
    pub images: PathBuf,
    /// Output directory for FEAT files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub max_features: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PairArgs {
    /// Pair each image with its k nearest neighbours (default 8).
    #[arg(long, conflicts_with_all = ["radius", "auto_radius"])]
    pub neighbours: Option<usize>,
    /// Pair all images within this horizontal distance, metres.
    #[arg(long, conflicts_with = "auto_radius")]
    pub radius: Option<f64>,
    /// Pair all images within 1.5 times the estimated image spacing.
    #[arg(long)]
    pub auto_radius: bool,
}

impl PairArgs {
    pub fn proposal(&self) -> PairProposal {
        match (self.neighbours, self.radius, self.auto_radius) {
            (_, Some(r), _) => PairProposal::Radius(r),
            (_, _, true) => PairProposal::AutoRadius,
            (Some(k), _, _) => PairProposal::Nearest(k),
            _ => PairProposal::default(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    /// Lowe ratio threshold.
    #[arg(long, default_value_t = 0.7)]
    pub ratio: f64,
    /// Keep matches that are not mutual nearest neighbours.
    #[arg(long)]
    pub no_cross_check: bool,
}

#[derive(Debug, Args)]
pub struct MatchCmdArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub pos: PathBuf,
    /// Output matches CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub zone: ZoneArgs,
    #[command(flatten)]
    pub pairs: PairArgs,
    #[command(flatten)]
    pub matching: MatchArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub image_a: String,
    #[arg(long)]
    pub image_b: String,
    /// Truth observations `image_id,keypoint_index,point_id`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Strictly increasing ratios (default 0.50 to 0.90 in steps of 0.05).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Vec<f64>,
    /// Distance from the true location beyond which a match is false, pixels.
    #[arg(long, default_value_t = aerotri::matching::DEFAULT_TRUTH_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long)]
    pub no_cross_check: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RansacArgs {
    /// Epipolar inlier threshold, pixels.
    #[arg(long, default_value_t = 1.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Matches CSV written by `match`.
    #[arg(long)]
    pub matches: PathBuf,
    /// Camera CSV `fx,fy,cx,cy,k1,k2`.
    #[arg(long)]
    pub camera: PathBuf,
    /// Output verified matches CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub ransac: RansacArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SfmArgs {
    /// Verified pairs with fewer inliers are ignored.
    #[arg(long, default_value_t = 15)]
    pub min_pair_inliers: usize,
    /// Observations with a larger reprojection error are removed, pixels.
    #[arg(long, default_value_t = 4.0)]
    pub max_reprojection: f64,
    /// Points with a smaller triangulation angle are removed, degrees.
    #[arg(long, default_value_t = 1.5)]
    pub min_angle: f64,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Verified matches CSV written by `verify`.
    #[arg(long)]
    pub verified: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Output directory for `sfm_*.csv` and `seed.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sfm: SfmArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GeorefArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub pos: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Directory holding the `sfm_*.csv` files of `reconstruct`.
    #[arg(long)]
    pub recon: PathBuf,
    /// Output directory for `poses.csv`, `points.csv`, `observations.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "priors")]
    pub route: Route,
    #[command(flatten)]
    pub zone: ZoneArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CheckpointArgs {
    /// Checkpoint observations `image_id,x,y`.
    #[arg(long, requires = "checkpoint_truth")]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint ground truth `x,y,z` in projected coordinates.
    #[arg(long, requires = "checkpoint")]
    pub checkpoint_truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub pos: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Directory holding the georeferenced `poses.csv`, `points.csv` and
    /// `observations.csv`.
    #[arg(long)]
    pub recon: PathBuf,
    /// Route that produced the reconstruction, recorded in the report.
    #[arg(long, value_enum, default_value = "priors")]
    pub route: Route,
    /// Verified matches; with `--seed-pair`, adds the relative orientation
    /// of the seed pair to the report.
    #[arg(long, requires = "seed_pair")]
    pub verified: Option<PathBuf>,
    /// Seed pair file `image_a,image_b` written by `reconstruct`.
    #[arg(long, requires = "verified")]
    pub seed_pair: Option<PathBuf>,
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,
    #[command(flatten)]
    pub zone: ZoneArgs,
    #[command(flatten)]
    pub ransac: RansacArgs,
    /// Output report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub pos: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Output directory for every stage's files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "priors")]
    pub route: Route,
    #[command(flatten)]
    pub zone: ZoneArgs,
    #[command(flatten)]
    pub pairs: PairArgs,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub ransac: RansacArgs,
    #[command(flatten)]
    pub sfm: SfmArgs,
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::ConvertPos(a) => commands::convert_pos(&a),
        Command::Detect(a) => commands::detect(&a),
        Command::Match(a) => commands::match_cmd(&a),
        Command::SweepRatio(a) => commands::sweep(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Georef(a) => commands::georef(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Run(a) => commands::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.kind.exit_code()
        }
    }
}
