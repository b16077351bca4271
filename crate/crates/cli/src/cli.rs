use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Shapes;

#[derive(Debug, Parser)]
#[command(name = "semabridge", version, about = "Text-bridged RGB–IR fusion laboratory")]
pub struct Cli {
    /// Seed for every random draw; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (or directory for `synth`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the bridged fusion block on random or BTEN1 inputs.
    Fuse(FuseArgs),
    /// Run direct cross-attention and FiLM prompt fusion.
    Baseline(BaselineArgs),
    /// Degrade a PGM/PPM image at one level.
    Degrade(DegradeArgs),
    /// Population NMRP over synthetic degraded scenes.
    Nmrp(NmrpArgs),
    /// Otsu foreground occupancy of annotated boxes.
    Occupancy(OccupancyArgs),
    /// Analytic and counted FLOPs of direct vs bridged fusion.
    Flops(FlopsArgs),
    /// Finite-difference gradient check of one module.
    Gradcheck(GradcheckArgs),
    /// Render a synthetic annotated RGB–IR scene.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ShapeArgs {
    #[arg(long)]
    pub c_rgb: Option<usize>,
    #[arg(long)]
    pub c_ir: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub mcat: Option<usize>,
    #[arg(long)]
    pub d_t: Option<usize>,
    #[arg(long)]
    pub d_k: Option<usize>,
}

impl ShapeArgs {
    pub fn apply(&self, s: &mut Shapes) {
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut s.c_rgb, self.c_rgb);
        set(&mut s.c_ir, self.c_ir);
        set(&mut s.height, self.height);
        set(&mut s.width, self.width);
        set(&mut s.m_cat, self.mcat);
        set(&mut s.d_t, self.d_t);
        set(&mut s.d_k, self.d_k);
    }
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub shapes: ShapeArgs,
    /// RGB features `C_rgb × H × W` (BTEN1).
    #[arg(long, requires_all = ["ir", "text"])]
    pub rgb: Option<PathBuf>,
    /// IR features `C_ir × H × W` (BTEN1).
    #[arg(long, requires_all = ["rgb", "text"])]
    pub ir: Option<PathBuf>,
    /// Category embeddings `M_cat × d_t` (BTEN1).
    #[arg(long, requires_all = ["rgb", "ir"])]
    pub text: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub shapes: ShapeArgs,
    /// Zero the prompt MLP so FiLM reduces to the direct response.
    #[arg(long)]
    pub zero_prompt: bool,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub level: u8,
    /// Skip the additive noise stage.
    #[arg(long)]
    pub no_noise: bool,
    pub input: PathBuf,
    /// Destination image; defaults to `--out`.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NmrpArgs {
    #[command(flatten)]
    pub shapes: ShapeArgs,
    /// Number of synthetic images.
    #[arg(long)]
    pub images: Option<usize>,
    /// Comma-separated degradation levels.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u8>>,
}

#[derive(Debug, Args)]
pub struct OccupancyArgs {
    /// Single-channel PGM; a synthetic scene is used when absent.
    #[arg(long, requires = "boxes")]
    pub ir: Option<PathBuf>,
    /// JSON array of `[x1, y1, x2, y2]` boxes.
    #[arg(long, requires = "ir")]
    pub boxes: Option<PathBuf>,
    /// Hot fraction of synthetic boxes.
    #[arg(long)]
    pub fill: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Visual token count; defaults to height·width.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub mcat: Option<u64>,
    #[arg(long)]
    pub c: Option<u64>,
    /// Report analytic counts only.
    #[arg(long)]
    pub no_measure: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Module {
    BridgeFusion,
    FreqBackbone,
    AlignmentHead,
}

impl Module {
    pub fn name(self) -> &'static str {
        match self {
            Module::BridgeFusion => "bridge-fusion",
            Module::FreqBackbone => "freq-backbone",
            Module::AlignmentHead => "alignment-head",
        }
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub module: Module,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub fill: Option<f64>,
}
